//! Datasets: synthetic Gaussian clusters, CSV and IDX ingestion, unlearning
//! splits and stratified mini-batches.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

/// Features plus one-hot labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Matrix,
    pub classes: usize,
    /// Stable row identifiers, preserved by `subset` and `concat`.
    pub ids: Vec<usize>,
}

impl Dataset {
    pub fn from_labels(x: Matrix, labels: &[usize], classes: usize) -> Result<Self> {
        if x.rows() != labels.len() {
            return Err(Error::shape(format!(
                "{} feature rows but {} labels",
                x.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::config(format!("label {bad} outside {classes} classes")));
        }
        let mut y = Matrix::zeros(labels.len(), classes);
        for (i, &l) in labels.iter().enumerate() {
            y.set(i, l, 1.0);
        }
        let ids = (0..labels.len()).collect();
        Ok(Self { x, y, classes, ids })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.y.iter_rows().map(argmax).collect()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(idx),
            y: self.y.select_rows(idx),
            classes: self.classes,
            ids: idx.iter().map(|&i| self.ids[i]).collect(),
        }
    }

    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.classes != other.classes {
            return Err(Error::shape(format!(
                "concatenating datasets with {} and {} classes",
                self.classes, other.classes
            )));
        }
        let mut ids = self.ids.clone();
        ids.extend_from_slice(&other.ids);
        Ok(Dataset {
            x: self.x.vstack(&other.x)?,
            y: self.y.vstack(&other.y)?,
            classes: self.classes,
            ids,
        })
    }

    /// Row indices of every sample labelled `class`.
    pub fn rows_of_class(&self, class: usize) -> Vec<usize> {
        self.labels()
            .into_iter()
            .enumerate()
            .filter_map(|(i, l)| (l == class).then_some(i))
            .collect()
    }

    /// Shuffled mini-batches of row indices; the last batch may be short.
    pub fn shuffled_batches(&self, batch: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
        let perm = rng.permutation(self.len());
        perm.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub separation: f64,
    pub std: f64,
}

impl Default for GaussianSpec {
    fn default() -> Self {
        Self {
            classes: 3,
            per_class: 500,
            dim: 2,
            separation: 6.0,
            std: 1.0,
        }
    }
}

impl GaussianSpec {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.classes < 2 {
            v.push(format!("data.classes must be at least 2, got {}", self.classes));
        }
        if self.per_class < 2 {
            v.push(format!("data.per_class must be at least 2, got {}", self.per_class));
        }
        if self.dim == 0 {
            v.push("data.dim must be positive".to_string());
        }
        if !(self.separation > 0.0) || !self.separation.is_finite() {
            v.push(format!("data.separation must be positive, got {}", self.separation));
        }
        if !(self.std >= 0.0) || !self.std.is_finite() {
            v.push(format!("data.std must be non-negative, got {}", self.std));
        }
        v
    }

    /// Class means with minimum pairwise distance `separation`.
    ///
    /// With `dim >= classes` these are scaled basis vectors (a regular
    /// simplex). Otherwise they sit on a regular polygon in the first two
    /// coordinates, or on a line when `dim == 1`.
    pub fn class_means(&self) -> Vec<Vec<f64>> {
        let (k, d, s) = (self.classes, self.dim, self.separation);
        (0..k)
            .map(|c| {
                let mut mu = vec![0.0; d];
                if d >= k {
                    mu[c] = s / std::f64::consts::SQRT_2;
                } else if d >= 2 {
                    let radius = s / (2.0 * (std::f64::consts::PI / k as f64).sin());
                    let angle = 2.0 * std::f64::consts::PI * c as f64 / k as f64;
                    mu[0] = radius * angle.cos();
                    mu[1] = radius * angle.sin();
                } else {
                    mu[0] = s * c as f64;
                }
                mu
            })
            .collect()
    }
}

/// Isotropic Gaussian clusters split 80/20 per class into (train, test).
pub fn gen_gaussian_clusters(spec: &GaussianSpec, rng: &mut Rng) -> Result<(Dataset, Dataset)> {
    let problems = spec.violations();
    if !problems.is_empty() {
        return Err(Error::config(problems.join("; ")));
    }
    let means = spec.class_means();
    let n_train = (spec.per_class * 4) / 5;
    let (mut train_x, mut train_y, mut test_x, mut test_y) = (vec![], vec![], vec![], vec![]);
    for (c, mu) in means.iter().enumerate() {
        for i in 0..spec.per_class {
            let row: Vec<f64> = mu.iter().map(|&m| rng.normal(m, spec.std)).collect();
            if i < n_train {
                train_x.push(row);
                train_y.push(c);
            } else {
                test_x.push(row);
                test_y.push(c);
            }
        }
    }
    let mut build = |xs: Vec<Vec<f64>>, ys: Vec<usize>| -> Result<Dataset> {
        let perm = rng.permutation(xs.len());
        let xs: Vec<&Vec<f64>> = perm.iter().map(|&i| &xs[i]).collect();
        let ys: Vec<usize> = perm.iter().map(|&i| ys[i]).collect();
        Dataset::from_labels(Matrix::from_rows(&xs)?, &ys, spec.classes)
    };
    let train = build(train_x, train_y)?;
    let test = build(test_x, test_y)?;
    Ok((train, test))
}

/// Header-less CSV: `f0,...,f{d-1},label`. Features use shortest round-trip
/// formatting so a reload is bit-exact.
pub fn write_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (row, label) in data.x.iter_rows().zip(data.labels()) {
        let mut line = String::new();
        for v in row {
            line.push_str(&format!("{v},"));
        }
        line.push_str(&label.to_string());
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a header-less CSV whose final column is an integer label. When
/// `classes` is `None` it is inferred as `max label + 1`.
pub fn load_csv(path: impl AsRef<Path>, classes: Option<usize>) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(csv_error)?;
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let offset = record.position().map(|p| p.byte());
        if record.len() < 2 {
            return Err(Error::format(
                format!("row has {} fields, need features and a label", record.len()),
                offset,
            ));
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::format(
                    format!("row has {} fields, expected {w}", record.len()),
                    offset,
                ))
            }
            _ => {}
        }
        let n = record.len() - 1;
        let mut row = Vec::with_capacity(n);
        for field in record.iter().take(n) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::format(format!("feature {field:?} is not a number"), offset))?;
            if !v.is_finite() {
                return Err(Error::format(format!("feature {field:?} is not finite"), offset));
            }
            row.push(v);
        }
        let raw = record[n].trim();
        let label: usize = raw
            .parse()
            .map_err(|_| Error::format(format!("label {raw:?} is not a class index"), offset))?;
        if let Some(k) = classes {
            if label >= k {
                return Err(Error::format(
                    format!("label {label} out of range for {k} classes"),
                    offset,
                ));
            }
        }
        rows.push(row);
        labels.push(label);
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput("CSV file has no rows".into()));
    }
    let k = classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    Dataset::from_labels(Matrix::from_rows(&rows)?, &labels, k)
}

fn csv_error(e: csv::Error) -> Error {
    let offset = e.position().map(|p| p.byte());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::format(format!("{other:?}"), offset),
    }
}

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format("unexpected end of IDX header", Some(offset as u64)))
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let found = read_be_u32(bytes, 0)?;
    if found != expected {
        return Err(Error::format(
            format!("bad IDX magic: expected 0x{expected:08x}, found 0x{found:08x}"),
            Some(0),
        ));
    }
    Ok(())
}

/// Parses an IDX image file into `(rows, cols, pixels)`, one flattened image per row.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, Matrix)> {
    check_magic(bytes, IDX_IMAGES_MAGIC)?;
    let n = read_be_u32(bytes, 4)? as usize;
    let rows = read_be_u32(bytes, 8)? as usize;
    let cols = read_be_u32(bytes, 12)? as usize;
    let pixels = rows * cols;
    let expected = 16 + n * pixels;
    if bytes.len() != expected {
        return Err(Error::format(
            format!("IDX image payload is {} bytes, header implies {expected}", bytes.len()),
            Some(bytes.len().min(expected) as u64),
        ));
    }
    let data = bytes[16..].iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok((rows, cols, Matrix::from_vec(n, pixels, data)?))
}

pub fn parse_idx_labels(bytes: &[u8], classes: usize) -> Result<Vec<usize>> {
    check_magic(bytes, IDX_LABELS_MAGIC)?;
    let n = read_be_u32(bytes, 4)? as usize;
    if bytes.len() != 8 + n {
        return Err(Error::format(
            format!("IDX label payload is {} bytes, header implies {}", bytes.len(), 8 + n),
            Some(bytes.len().min(8 + n) as u64),
        ));
    }
    bytes[8..]
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            let l = b as usize;
            if l >= classes {
                Err(Error::format(
                    format!("label {l} out of range for {classes} classes"),
                    Some(8 + i as u64),
                ))
            } else {
                Ok(l)
            }
        })
        .collect()
}

/// Loads an IDX image/label pair. `subsample` draws that many rows without
/// replacement (in a seed-determined order); `None` keeps file order.
pub fn load_idx(
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
    classes: usize,
    subsample: Option<usize>,
    rng: &mut Rng,
) -> Result<Dataset> {
    let mut img_bytes = Vec::new();
    File::open(images)?.read_to_end(&mut img_bytes)?;
    let mut lbl_bytes = Vec::new();
    File::open(labels)?.read_to_end(&mut lbl_bytes)?;
    let (_, _, x) = parse_idx_images(&img_bytes)?;
    let labels = parse_idx_labels(&lbl_bytes, classes)?;
    if labels.len() != x.rows() {
        return Err(Error::format(
            format!("{} images but {} labels", x.rows(), labels.len()),
            None,
        ));
    }
    let full = Dataset::from_labels(x, &labels, classes)?;
    match subsample {
        None => Ok(full),
        Some(n) if n == 0 || n > full.len() => {
            Err(Error::config(format!("cannot subsample {n} rows from {}", full.len())))
        }
        Some(n) => {
            let perm = rng.permutation(full.len());
            Ok(full.subset(&perm[..n]))
        }
    }
}

/// Writes an IDX image/label pair (used for fixtures and round trips).
/// Pixel values are in `[0, 1]` and stored as `round(255·p)`.
pub fn write_idx(images: &Matrix, rows: usize, cols: usize, labels: &[usize]) -> Result<(Vec<u8>, Vec<u8>)> {
    if images.cols() != rows * cols || images.rows() != labels.len() {
        return Err(Error::shape("IDX image/label dimensions disagree"));
    }
    let mut img = Vec::with_capacity(16 + images.as_slice().len());
    for v in [IDX_IMAGES_MAGIC, images.rows() as u32, rows as u32, cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend(
        images
            .as_slice()
            .iter()
            .map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    let mut lbl = Vec::with_capacity(8 + labels.len());
    for v in [IDX_LABELS_MAGIC, labels.len() as u32] {
        lbl.extend_from_slice(&v.to_be_bytes());
    }
    lbl.extend(labels.iter().map(|&l| l as u8));
    Ok((img, lbl))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    Class,
    Sample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    #[serde(default)]
    pub class_id: usize,
    #[serde(default = "default_n_f")]
    pub n_f: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_n_f() -> usize {
    32
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            mode: SplitMode::Class,
            class_id: 1,
            n_f: default_n_f(),
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn class(class_id: usize) -> Self {
        Self {
            mode: SplitMode::Class,
            class_id,
            ..Self::default()
        }
    }

    pub fn sample(n_f: usize, seed: u64) -> Self {
        Self {
            mode: SplitMode::Sample,
            n_f,
            seed,
            ..Self::default()
        }
    }
}

/// Retained/unlearning partition of the training set. In class mode the
/// test set is partitioned as well.
#[derive(Clone, Debug)]
pub struct UnlearningSplit {
    pub retained: Dataset,
    pub forget: Dataset,
    pub test_retained: Option<Dataset>,
    pub test_forget: Option<Dataset>,
}

pub fn split_unlearning(train: &Dataset, test: Option<&Dataset>, spec: &SplitSpec) -> Result<UnlearningSplit> {
    match spec.mode {
        SplitMode::Class => {
            if spec.class_id >= train.classes {
                return Err(Error::config(format!(
                    "class_id {} outside {} classes",
                    spec.class_id, train.classes
                )));
            }
            let (forget, retained) = partition(train, |l| l == spec.class_id);
            if forget.is_empty() {
                return Err(Error::config(format!("class {} has no training rows", spec.class_id)));
            }
            let (test_forget, test_retained) = match test {
                Some(t) => {
                    let (f, r) = partition(t, |l| l == spec.class_id);
                    (Some(f), Some(r))
                }
                None => (None, None),
            };
            Ok(UnlearningSplit {
                retained,
                forget,
                test_retained,
                test_forget,
            })
        }
        SplitMode::Sample => {
            if spec.n_f == 0 || spec.n_f >= train.len() {
                return Err(Error::config(format!(
                    "n_f must be in 1..{}, got {}",
                    train.len(),
                    spec.n_f
                )));
            }
            let mut rng = Rng::new(spec.seed).fork("split");
            let mut chosen = vec![false; train.len()];
            for i in rng.permutation(train.len()).into_iter().take(spec.n_f) {
                chosen[i] = true;
            }
            let f: Vec<usize> = (0..train.len()).filter(|&i| chosen[i]).collect();
            let r: Vec<usize> = (0..train.len()).filter(|&i| !chosen[i]).collect();
            Ok(UnlearningSplit {
                retained: train.subset(&r),
                forget: train.subset(&f),
                test_retained: None,
                test_forget: None,
            })
        }
    }
}

fn partition(data: &Dataset, pred: impl Fn(usize) -> bool) -> (Dataset, Dataset) {
    let labels = data.labels();
    let yes: Vec<usize> = (0..data.len()).filter(|&i| pred(labels[i])).collect();
    let no: Vec<usize> = (0..data.len()).filter(|&i| !pred(labels[i])).collect();
    (data.subset(&yes), data.subset(&no))
}

/// A mini-batch drawn from retained and unlearning rows.
#[derive(Clone, Debug)]
pub struct BatchSplit {
    pub x: Matrix,
    pub y: Matrix,
    /// `true` for rows from the retained set.
    pub retained: Vec<bool>,
    /// Row index into the originating dataset (retained or unlearning).
    pub source: Vec<usize>,
}

impl BatchSplit {
    pub fn len(&self) -> usize {
        self.retained.len()
    }

    pub fn is_empty(&self) -> bool {
        self.retained.is_empty()
    }

    pub fn retained_rows(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.retained[i]).collect()
    }

    pub fn forget_rows(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.retained[i]).collect()
    }
}

/// Splits `retained ∪ forget` into batches whose retained share follows the
/// global ratio. With `B` batches, batch `i` receives
/// `floor((i+1)·N_r/B) − floor(i·N_r/B)` retained rows (likewise for the
/// unlearning rows), so every batch holds at least one retained row when
/// `N_r ≥ B`. `B` is the smallest count from `ceil(N / batch)` up for which
/// no batch exceeds `batch` rows.
pub fn stratified_batches(
    retained: &Dataset,
    forget: &Dataset,
    batch: usize,
    rng: &mut Rng,
) -> Result<Vec<BatchSplit>> {
    if batch < 2 {
        return Err(Error::config(format!("batch must be at least 2, got {batch}")));
    }
    let (n_r, n_f) = (retained.len(), forget.len());
    let n = n_r + n_f;
    if n == 0 {
        return Err(Error::EmptyInput("no rows to batch".into()));
    }
    if batch > n {
        return Err(Error::config(format!("batch {batch} exceeds {n} rows")));
    }
    let mut n_batches = n.div_ceil(batch);
    while n_r.div_ceil(n_batches) + n_f.div_ceil(n_batches) > batch {
        n_batches += 1;
    }
    let perm_r = rng.permutation(n_r);
    let perm_f = rng.permutation(n_f);
    let share = |total: usize, i: usize| (i * total) / n_batches;
    let mut out = Vec::with_capacity(n_batches);
    for i in 0..n_batches {
        let mut rows: Vec<(bool, usize)> = perm_r[share(n_r, i)..share(n_r, i + 1)]
            .iter()
            .map(|&j| (true, j))
            .chain(perm_f[share(n_f, i)..share(n_f, i + 1)].iter().map(|&j| (false, j)))
            .collect();
        rng.shuffle(&mut rows);
        let dim = if n_r > 0 { retained.dim() } else { forget.dim() };
        let classes = if n_r > 0 { retained.classes } else { forget.classes };
        let mut x = Matrix::zeros(rows.len(), dim);
        let mut y = Matrix::zeros(rows.len(), classes);
        for (k, &(is_r, j)) in rows.iter().enumerate() {
            let src = if is_r { retained } else { forget };
            x.row_mut(k).copy_from_slice(src.x.row(j));
            y.row_mut(k).copy_from_slice(src.y.row(j));
        }
        out.push(BatchSplit {
            x,
            y,
            retained: rows.iter().map(|r| r.0).collect(),
            source: rows.iter().map(|r| r.1).collect(),
        });
    }
    Ok(out)
}
