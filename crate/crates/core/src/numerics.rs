//! Dense row-major matrices, probability helpers, the seeded generator and a
//! central-difference gradient oracle.
//!
//! Everything is `f64`. Probability logs clip at [`PROB_CLIP`].

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Added inside every `ln` applied to a probability.
pub const PROB_CLIP: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "buffer of length {} cannot form a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally long rows. An empty slice gives a 0x0 matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// One-row matrix.
    pub fn row_vector(v: &[f64]) -> Self {
        Self {
            rows: 1,
            cols: v.len(),
            data: v.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let cols = self.cols;
        &mut self.data[r * cols..(r + 1) * cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on 0, and a 0-col matrix still has `rows` empty rows
        (0..self.rows).map(move |r| self.row(r))
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.iter_rows().map(<[f64]>::to_vec).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::Numeric(format!("{what} contains non-finite entries")))
        }
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::shape(format!(
                "matmul of {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ`, the natural layout for `x Wᵀ` with row-major batches.
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::shape(format!(
                "matmul_t of {}x{} by ({}x{})ᵀ",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a, other.row(j));
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other`, used for weight gradients `δᵀ x`.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::shape(format!(
                "t_matmul of ({}x{})ᵀ by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for r in 0..self.rows {
            let b = other.row(r);
            for (i, &a) in self.row(r).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &bv) in out_row.iter_mut().zip(b) {
                    *o += a * bv;
                }
            }
        }
        Ok(out)
    }

    fn zip_with(&self, other: &Matrix, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!(
                "{op} of {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!(
                "add_assign of {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Adds `bias` to every row.
    pub fn add_row_broadcast(&mut self, bias: &[f64]) -> Result<()> {
        if bias.len() != self.cols {
            return Err(Error::shape(format!(
                "bias of length {} for {} columns",
                bias.len(),
                self.cols
            )));
        }
        for r in 0..self.rows {
            for (v, b) in self.row_mut(r).iter_mut().zip(bias) {
                *v += b;
            }
        }
        Ok(())
    }

    /// Column sums.
    pub fn sum_rows(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for row in self.iter_rows() {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Stacks `self` on top of `other`.
    pub fn vstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows > 0 && other.rows > 0 && self.cols != other.cols {
            return Err(Error::shape(format!(
                "vstack of {} and {} columns",
                self.cols, other.cols
            )));
        }
        let cols = if self.rows > 0 { self.cols } else { other.cols };
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Matrix {
            rows: self.rows + other.rows,
            cols,
            data,
        })
    }

    /// Largest absolute elementwise difference; `f64::INFINITY` on shape mismatch.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        if self.shape() != other.shape() {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        l2_norm(&self.data)
    }
}

impl Serialize for Matrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeSeq;
        let mut seq = s.serialize_seq(Some(self.rows))?;
        for row in self.iter_rows() {
            seq.serialize_element(row)?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for Matrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        Matrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Free-function form of [`Matrix::matmul`].
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    a.matmul(b)
}

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

/// Mean over rows of `-Σ_j t_ij ln(p_ij + 1e-12)`. Targets may be soft.
pub fn cross_entropy(probs: &Matrix, targets: &Matrix) -> Result<f64> {
    if probs.shape() != targets.shape() {
        return Err(Error::shape(format!(
            "cross_entropy of {:?} probabilities against {:?} targets",
            probs.shape(),
            targets.shape()
        )));
    }
    if probs.rows() == 0 {
        return Err(Error::EmptyInput("cross_entropy of zero rows".into()));
    }
    let total: f64 = probs
        .iter_rows()
        .zip(targets.iter_rows())
        .map(|(p, t)| row_cross_entropy(p, t))
        .sum();
    Ok(total / probs.rows() as f64)
}

pub(crate) fn row_cross_entropy(p: &[f64], t: &[f64]) -> f64 {
    -p.iter()
        .zip(t)
        .map(|(&p, &t)| if t == 0.0 { 0.0 } else { t * (p + PROB_CLIP).ln() })
        .sum::<f64>()
}

/// Gradient of `-Σ_j t_j ln(p_j + ε)` with respect to the logits behind
/// `p = softmax(z)`: `p_j Σ_c t_c r_c − t_j r_j` with `r_c = p_c / (p_c + ε)`.
/// Matches `p − t` once every target-weighted probability is well above ε.
pub fn cross_entropy_logit_grad(p: &[f64], t: &[f64]) -> Vec<f64> {
    let r: Vec<f64> = p.iter().map(|&q| q / (q + PROB_CLIP)).collect();
    let weight: f64 = t.iter().zip(&r).map(|(t, r)| t * r).sum();
    p.iter().zip(t).zip(&r).map(|((p, t), r)| p * weight - t * r).collect()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Per-row Shannon entropy in nats.
pub fn entropy_rows(probs: &Matrix) -> Result<Vec<f64>> {
    if probs.cols() == 0 {
        return Err(Error::shape("entropy of rows with zero columns"));
    }
    Ok(probs
        .iter_rows()
        .map(|p| -p.iter().map(|&q| q * (q + PROB_CLIP).ln()).sum::<f64>())
        .collect())
}

/// Column-wise arithmetic mean.
pub fn mean_rows(m: &Matrix) -> Result<Vec<f64>> {
    if m.rows() == 0 {
        return Err(Error::EmptyInput("mean of zero rows".into()));
    }
    let n = m.rows() as f64;
    Ok(m.sum_rows().into_iter().map(|s| s / n).collect())
}

/// Seeded generator used everywhere randomness is consumed.
///
/// Backed by ChaCha8 (`rand_chacha`), whose output stream is fixed by the
/// seed on every platform. Normal draws use the ziggurat sampler from
/// `rand_distr::StandardNormal`; uniform index draws use `rand`'s
/// portable integer sampling. Child generators come from [`Rng::fork`],
/// which hashes the parent seed with a stream label instead of consuming
/// parent state, so adding a consumer never perturbs another one.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent generator for a named purpose, derived from this seed only.
    pub fn fork(&self, stream: &str) -> Rng {
        Rng::new(derive_seed(self.seed, stream))
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.inner);
        mean + std * z
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx
    }
}

/// SplitMix64 finalizer over the seed and an FNV-1a hash of the label.
pub fn derive_seed(seed: u64, stream: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = seed ^ h.rotate_left(17);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// I.i.d. normal matrix, filled row-major.
pub fn gaussian_fill(rng: &mut Rng, rows: usize, cols: usize, mean: f64, std: f64) -> Result<Matrix> {
    if !(std >= 0.0) || !std.is_finite() || !mean.is_finite() {
        return Err(Error::config(format!("gaussian_fill with mean {mean}, std {std}")));
    }
    let data = (0..rows * cols).map(|_| rng.normal(mean, std)).collect();
    Matrix::from_vec(rows, cols, data)
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate.
pub fn finite_diff_grad<F>(mut f: F, x0: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::config(format!(
            "finite difference step must be positive, got {h}"
        )));
    }
    let mut x = x0.to_vec();
    let mut grad = Vec::with_capacity(x0.len());
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let fp = f(&x);
        x[i] = orig - h;
        let fm = f(&x);
        x[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Numeric(format!("objective not finite around coordinate {i}")));
        }
        grad.push((fp - fm) / (2.0 * h));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let col = m(&[&[1.0], &[2.0]]);
        assert_eq!(Matrix::identity(2).matmul(&col).unwrap(), col);
        let nil = m(&[&[0.0, 1.0], &[0.0, 0.0]]);
        assert_eq!(nil.matmul(&col).unwrap(), m(&[&[2.0], &[0.0]]));
        let any = m(&[&[1.0, -2.0, 3.0], &[4.0, 5.0, 6.0]]);
        assert_eq!(Matrix::zeros(2, 2).matmul(&any).unwrap(), Matrix::zeros(2, 3));
        assert!(matches!(col.matmul(&col), Err(Error::Shape(_))));
    }

    #[test]
    fn transposed_products_agree_with_plain_matmul() {
        let mut rng = Rng::new(3);
        let a = gaussian_fill(&mut rng, 4, 3, 0.0, 1.0).unwrap();
        let b = gaussian_fill(&mut rng, 5, 3, 0.0, 1.0).unwrap();
        let c = gaussian_fill(&mut rng, 4, 2, 0.0, 1.0).unwrap();
        let direct = a.matmul(&b.transpose()).unwrap();
        assert!(a.matmul_t(&b).unwrap().max_abs_diff(&direct) < 1e-14);
        let direct = a.transpose().matmul(&c).unwrap();
        assert!(a.t_matmul(&c).unwrap().max_abs_diff(&direct) < 1e-14);
    }

    #[test]
    fn softmax_examples() {
        let p = softmax_rows(&m(&[&[0.0, 0.0], &[1000.0, 1000.0], &[0.0, 3f64.ln()]]));
        assert_eq!(p.row(0), &[0.5, 0.5]);
        assert_eq!(p.row(1), &[0.5, 0.5]);
        assert!((p.get(2, 0) - 0.25).abs() < 1e-15);
        assert!((p.get(2, 1) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_examples() {
        let onehot = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!(cross_entropy(&onehot, &onehot).unwrap() <= 1e-11);
        let half = m(&[&[0.5, 0.5]]);
        let ln2 = 2f64.ln();
        assert!((cross_entropy(&half, &m(&[&[1.0, 0.0]])).unwrap() - ln2).abs() < 1e-11);
        assert!((cross_entropy(&half, &half).unwrap() - ln2).abs() < 1e-11);
        assert!(matches!(cross_entropy(&half, &onehot), Err(Error::Shape(_))));
    }

    #[test]
    fn cross_entropy_logit_grad_matches_finite_differences() {
        // the last case puts the target class near the 1e-12 floor
        for (z, t) in [
            (vec![0.3, -1.2, 2.0], vec![1.0, 0.0, 0.0]),
            (vec![1.0, 0.5, -0.5], vec![0.2, 0.5, 0.3]),
            (vec![-14.0, 14.0, 0.0], vec![1.0, 0.0, 0.0]),
        ] {
            let loss = |z: &[f64]| row_cross_entropy(softmax_rows(&Matrix::row_vector(z)).row(0), &t);
            let numeric = finite_diff_grad(loss, &z, 1e-6).unwrap();
            let p = softmax_rows(&Matrix::row_vector(&z));
            for (a, n) in cross_entropy_logit_grad(p.row(0), &t).iter().zip(&numeric) {
                assert!((a - n).abs() <= 1e-6 * n.abs().max(1.0), "analytic {a} numeric {n}");
            }
        }
        let p = [0.7, 0.2, 0.1];
        let g = cross_entropy_logit_grad(&p, &[0.0, 1.0, 0.0]);
        assert!((g[0] - 0.7).abs() < 1e-10 && (g[1] + 0.8).abs() < 1e-10);
    }

    #[test]
    fn l2_norm_examples() {
        assert_eq!(l2_norm(&[0.0, 0.0, 0.0]), 0.0);
        assert_eq!(l2_norm(&[3.0, 4.0]), 5.0);
        assert_eq!(l2_norm(&[-3.0, 4.0]), 5.0);
    }

    #[test]
    fn entropy_examples() {
        let h = entropy_rows(&m(&[&[1.0, 0.0], &[0.5, 0.5]])).unwrap();
        assert!(h[0].abs() <= 1e-11);
        assert!((h[1] - 2f64.ln()).abs() < 1e-11);
        let h = entropy_rows(&m(&[&[0.25; 4]])).unwrap();
        assert!((h[0] - 4f64.ln()).abs() < 1e-11);
        assert!(matches!(entropy_rows(&Matrix::zeros(2, 0)), Err(Error::Shape(_))));
    }

    #[test]
    fn mean_rows_examples() {
        assert_eq!(mean_rows(&m(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap(), vec![0.5, 0.5]);
        assert_eq!(mean_rows(&m(&[&[7.0, -1.0]])).unwrap(), vec![7.0, -1.0]);
        assert_eq!(mean_rows(&m(&[&[2.0, 4.0], &[4.0, 8.0]])).unwrap(), vec![3.0, 6.0]);
        assert!(matches!(mean_rows(&Matrix::zeros(0, 2)), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn gaussian_fill_examples() {
        let mut rng = Rng::new(1);
        let z = gaussian_fill(&mut rng, 3, 3, 2.5, 0.0).unwrap();
        assert!(z.as_slice().iter().all(|&v| v == 2.5));

        let a = gaussian_fill(&mut Rng::new(9), 4, 5, 0.0, 1.0).unwrap();
        let b = gaussian_fill(&mut Rng::new(9), 4, 5, 0.0, 1.0).unwrap();
        assert_eq!(a, b);

        let big = gaussian_fill(&mut Rng::new(11), 100, 100, 0.0, 1.0).unwrap();
        let mean = big.as_slice().iter().sum::<f64>() / 1e4;
        assert!(mean.abs() < 0.05, "sample mean {mean}");
        assert!(gaussian_fill(&mut rng, 1, 1, 0.0, -1.0).is_err());
    }

    #[test]
    fn fork_is_independent_of_parent_consumption() {
        let mut a = Rng::new(5);
        let b = Rng::new(5);
        a.uniform();
        assert_eq!(a.fork("x").uniform(), b.fork("x").uniform());
        assert_ne!(b.fork("x").uniform(), b.fork("y").uniform());
    }

    #[test]
    fn finite_diff_examples() {
        let g = finite_diff_grad(|x| x[0] * x[0], &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6);
        let g = finite_diff_grad(|_| 4.0, &[1.0, 2.0], 1e-5).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
        let g = finite_diff_grad(|x| x.iter().sum(), &[0.3, -2.0, 7.5], 1e-5).unwrap();
        assert!(g.iter().all(|v| (v - 1.0).abs() < 1e-8));
        assert!(matches!(
            finite_diff_grad(|_| f64::NAN, &[0.0], 1e-5),
            Err(Error::Numeric(_))
        ));
        assert!(finite_diff_grad(|x| x[0], &[0.0], 0.0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn mat(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
            proptest::collection::vec(-10.0f64..10.0, rows * cols)
                .prop_map(move |d| Matrix::from_vec(rows, cols, d).unwrap())
        }

        proptest! {
            #[test]
            fn matmul_is_associative(a in mat(3, 4), b in mat(4, 2), c in mat(2, 5)) {
                let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
                let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
                let scale = left.frobenius_norm().max(1.0);
                prop_assert!(left.max_abs_diff(&right) / scale < 1e-9);
            }

            #[test]
            fn softmax_rows_sum_to_one(x in proptest::collection::vec(-700.0f64..700.0, 12)) {
                let p = softmax_rows(&Matrix::from_vec(3, 4, x).unwrap());
                for row in p.iter_rows() {
                    prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
                }
            }

            #[test]
            fn self_cross_entropy_is_minimal(
                raw in proptest::collection::vec(0.05f64..1.0, 4),
                noise in proptest::collection::vec(-0.04f64..0.04, 4),
            ) {
                let s: f64 = raw.iter().sum();
                let p: Vec<f64> = raw.iter().map(|v| v / s).collect();
                let mut q: Vec<f64> = p.iter().zip(&noise).map(|(a, b)| (a + b).max(1e-3)).collect();
                let sq: f64 = q.iter().sum();
                q.iter_mut().for_each(|v| *v /= sq);
                let probs = Matrix::row_vector(&p);
                let own = cross_entropy(&probs, &probs).unwrap();
                let other = cross_entropy(&Matrix::row_vector(&q), &probs).unwrap();
                prop_assert!(own <= other + 1e-12);
            }

            #[test]
            fn quadratic_gradient_matches(x in proptest::collection::vec(-3.0f64..3.0, 3)) {
                // f(x) = xᵀ Q x with Q = [[2,1,0],[1,3,0],[0,0,1]]
                let q = [[2.0, 1.0, 0.0], [1.0, 3.0, 0.0], [0.0, 0.0, 1.0]];
                let f = |v: &[f64]| {
                    let mut s = 0.0;
                    for i in 0..3 { for j in 0..3 { s += v[i] * q[i][j] * v[j]; } }
                    s
                };
                let g = finite_diff_grad(f, &x, 1e-5).unwrap();
                for i in 0..3 {
                    let exact: f64 = (0..3).map(|j| 2.0 * q[i][j] * x[j]).sum();
                    prop_assert!((g[i] - exact).abs() <= 1e-5 * exact.abs().max(1.0));
                }
            }
        }
    }
}
