//! Low-rank adapters on a frozen MLP.
//!
//! An instrumented layer computes `s_k = W h + b + c·B A h` where `h` is the
//! layer input of the adapted network and `c` is the (default 1) scale.
//!
//! [`InstrumentedModel::forward_decomposed`] runs the frozen network and the
//! adapted network side by side and reports, per layer:
//!
//! * the pre-trained feature `x'_k`: the frozen network's output at layer `k`,
//! * the residual feature `Δx'_k = s_k − x'_k`,
//! * the summed feature `s_k = x'_k + Δx'_k`, which feeds the next layer.
//!
//! The residual is evaluated as `W (h_adapted − h_frozen) + c·B A h_adapted`.
//! Up to and including the first instrumented layer the first term is
//! exactly zero, so the residual equals the LoRA branch output `c·B A h`.
//! Deeper layers also carry the frozen map of upstream residuals, which
//! keeps the pre-trained features fixed during unlearning.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{relu, relu_backward, AdapterRecord, Checkpoint, CheckpointMeta, LinearLayer, Mlp};
use crate::numerics::{gaussian_fill, Matrix, Rng};

pub const DEFAULT_A_INIT_STD: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct LoraAdapter {
    /// `rank × in_dim`
    pub a: Matrix,
    /// `out_dim × rank`
    pub b: Matrix,
}

impl LoraAdapter {
    pub fn rank(&self) -> usize {
        self.a.rows()
    }

    /// `B A`, shaped like the host weight.
    pub fn delta_weight(&self) -> Result<Matrix> {
        self.b.matmul(&self.a)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstrumentedModel {
    base: Mlp,
    adapters: BTreeMap<usize, LoraAdapter>,
    scale: f64,
}

/// Adapted-network activations needed for adapter backpropagation.
#[derive(Clone, Debug)]
pub struct StudentTape {
    pub input: Matrix,
    /// Summed pre-activation feature of every layer; the last is the logits.
    pub sums: Vec<Matrix>,
    /// ReLU outputs of hidden layers.
    pub post: Vec<Matrix>,
    /// `h Aᵀ` for each instrumented layer.
    pub low: BTreeMap<usize, Matrix>,
}

impl StudentTape {
    fn layer_input(&self, k: usize) -> &Matrix {
        if k == 0 {
            &self.input
        } else {
            &self.post[k - 1]
        }
    }
}

/// Per-layer split of features into pre-trained and residual parts.
#[derive(Clone, Debug)]
pub struct DecomposedTape {
    pub student: StudentTape,
    /// Frozen-network pre-activation feature of every layer.
    pub pretrained: Vec<Matrix>,
    /// `sums[k] − pretrained[k]` for every layer.
    pub residual: Vec<Matrix>,
    /// Raw LoRA branch output `c·B A h` at instrumented layers.
    pub branch: BTreeMap<usize, Matrix>,
}

impl DecomposedTape {
    pub fn sums(&self) -> &[Matrix] {
        &self.student.sums
    }
}

/// `(dA, dB)` per instrumented layer.
#[derive(Clone, Debug, PartialEq)]
pub struct AdapterGrads {
    pub layers: BTreeMap<usize, (Matrix, Matrix)>,
}

impl AdapterGrads {
    /// Same order as [`InstrumentedModel::adapter_slices_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .values()
            .flat_map(|(da, db)| [da.as_slice(), db.as_slice()])
            .collect()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn add_assign(&mut self, other: &AdapterGrads) -> Result<()> {
        for (k, (da, db)) in &mut self.layers {
            let (oa, ob) = other
                .layers
                .get(k)
                .ok_or_else(|| Error::shape(format!("no gradient for layer {k}")))?;
            da.add_assign(oa)?;
            db.add_assign(ob)?;
        }
        Ok(())
    }
}

/// Wraps `base` with zero-initialised `B` and Gaussian `A` on `layer_ids`.
pub fn attach(
    base: &Mlp,
    layer_ids: &[usize],
    rank: usize,
    rng: &mut Rng,
    a_init_std: f64,
) -> Result<InstrumentedModel> {
    InstrumentedModel::attach(base, layer_ids, rank, rng, a_init_std)
}

impl InstrumentedModel {
    pub fn attach(base: &Mlp, layer_ids: &[usize], rank: usize, rng: &mut Rng, a_init_std: f64) -> Result<Self> {
        if layer_ids.is_empty() {
            return Err(Error::config("no layers selected for adapters"));
        }
        let mut ids = layer_ids.to_vec();
        ids.sort_unstable();
        ids.dedup();
        let mut adapters = BTreeMap::new();
        for k in ids {
            let layer = base.layers().get(k).ok_or_else(|| {
                Error::config(format!("layer {k} does not exist (network has {})", base.num_layers()))
            })?;
            let bound = layer.in_dim().min(layer.out_dim());
            if rank == 0 || rank > bound {
                return Err(Error::config(format!(
                    "rank {rank} invalid for layer {k} ({}x{}); must be in 1..={bound}",
                    layer.out_dim(),
                    layer.in_dim()
                )));
            }
            let a = gaussian_fill(rng, rank, layer.in_dim(), 0.0, a_init_std)?;
            let b = Matrix::zeros(layer.out_dim(), rank);
            adapters.insert(k, LoraAdapter { a, b });
        }
        Ok(Self {
            base: base.clone(),
            adapters,
            scale: 1.0,
        })
    }

    /// Builds from explicit adapters (for checkpoints and hand-made cases).
    pub fn from_parts(base: Mlp, adapters: BTreeMap<usize, LoraAdapter>, scale: f64) -> Result<Self> {
        for (&k, ad) in &adapters {
            let layer = base
                .layers()
                .get(k)
                .ok_or_else(|| Error::config(format!("adapter for missing layer {k}")))?;
            if ad.a.shape() != (ad.rank(), layer.in_dim()) || ad.b.shape() != (layer.out_dim(), ad.rank()) {
                return Err(Error::shape(format!("adapter on layer {k} does not fit its host")));
            }
        }
        Ok(Self { base, adapters, scale })
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    pub fn base(&self) -> &Mlp {
        &self.base
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn adapters(&self) -> &BTreeMap<usize, LoraAdapter> {
        &self.adapters
    }

    pub fn adapters_mut(&mut self) -> &mut BTreeMap<usize, LoraAdapter> {
        &mut self.adapters
    }

    pub fn layer_ids(&self) -> Vec<usize> {
        self.adapters.keys().copied().collect()
    }

    /// `[A_k, B_k, ...]` in ascending layer order.
    pub fn adapter_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.adapters
            .values_mut()
            .flat_map(|ad| [ad.a.as_mut_slice(), ad.b.as_mut_slice()])
            .collect()
    }

    pub fn adapter_flat(&self) -> Vec<f64> {
        self.adapters
            .values()
            .flat_map(|ad| ad.a.as_slice().iter().chain(ad.b.as_slice()).copied())
            .collect()
    }

    pub fn set_adapter_flat(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self
            .adapters
            .values()
            .map(|a| a.a.as_slice().len() + a.b.as_slice().len())
            .sum();
        if total != flat.len() {
            return Err(Error::shape(format!(
                "{} values for {total} adapter parameters",
                flat.len()
            )));
        }
        let mut i = 0;
        for s in self.adapter_slices_mut() {
            s.copy_from_slice(&flat[i..i + s.len()]);
            i += s.len();
        }
        Ok(())
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.base.input_dim() {
            return Err(Error::shape(format!(
                "input has {} columns, network expects {}",
                x.cols(),
                self.base.input_dim()
            )));
        }
        Ok(())
    }

    fn branch(&self, k: usize, h: &Matrix) -> Result<Option<(Matrix, Matrix)>> {
        match self.adapters.get(&k) {
            None => Ok(None),
            Some(ad) => {
                let low = h.matmul_t(&ad.a)?;
                let mut out = low.matmul_t(&ad.b)?;
                if self.scale != 1.0 {
                    out = out.scale(self.scale);
                }
                Ok(Some((low, out)))
            }
        }
    }

    /// Adapted network only: `s_k = W h + b + c·B A h` at every layer.
    pub fn forward_student(&self, x: &Matrix) -> Result<(Matrix, StudentTape)> {
        self.check_input(x)?;
        let n = self.base.num_layers();
        let mut tape = StudentTape {
            input: x.clone(),
            sums: Vec::with_capacity(n),
            post: Vec::with_capacity(n - 1),
            low: BTreeMap::new(),
        };
        for (k, layer) in self.base.layers().iter().enumerate() {
            let h = tape.layer_input(k);
            let mut s = layer.apply(h)?;
            if let Some((low, out)) = self.branch(k, h)? {
                s.add_assign(&out)?;
                tape.low.insert(k, low);
            }
            if k + 1 < n {
                tape.post.push(relu(&s));
            }
            tape.sums.push(s);
        }
        Ok((tape.sums[n - 1].clone(), tape))
    }

    pub fn forward_decomposed(&self, x: &Matrix) -> Result<(Matrix, DecomposedTape)> {
        self.check_input(x)?;
        let n = self.base.num_layers();
        let mut student = StudentTape {
            input: x.clone(),
            sums: Vec::with_capacity(n),
            post: Vec::with_capacity(n - 1),
            low: BTreeMap::new(),
        };
        let mut pretrained = Vec::with_capacity(n);
        let mut residual = Vec::with_capacity(n);
        let mut branches = BTreeMap::new();
        let mut frozen_post: Vec<Matrix> = Vec::with_capacity(n - 1);
        for (k, layer) in self.base.layers().iter().enumerate() {
            let h_frozen = if k == 0 { x } else { &frozen_post[k - 1] };
            let h = student.layer_input(k);
            let p = layer.apply(h_frozen)?;
            let mut delta = h.sub(h_frozen)?.matmul_t(&layer.weight)?;
            if let Some((low, out)) = self.branch(k, h)? {
                delta.add_assign(&out)?;
                student.low.insert(k, low);
                branches.insert(k, out);
            }
            let s = p.add(&delta)?;
            if k + 1 < n {
                student.post.push(relu(&s));
                frozen_post.push(relu(&p));
            }
            student.sums.push(s);
            pretrained.push(p);
            residual.push(delta);
        }
        let logits = student.sums[n - 1].clone();
        Ok((
            logits,
            DecomposedTape {
                student,
                pretrained,
                residual,
                branch: branches,
            },
        ))
    }

    /// Exact adapter gradients of a scalar whose derivative is `dlogits` at
    /// the logits plus `inject[k]` at the summed feature of layer `k`.
    /// Gradients flow through the frozen weights; none are produced for them.
    pub fn backward_adapters(
        &self,
        tape: &StudentTape,
        dlogits: &Matrix,
        inject: &BTreeMap<usize, Matrix>,
    ) -> Result<AdapterGrads> {
        let last = self.base.num_layers() - 1;
        if tape.sums.len() != last + 1 {
            return Err(Error::shape("tape does not come from this network"));
        }
        if dlogits.shape() != tape.sums[last].shape() {
            return Err(Error::shape(format!(
                "dlogits {:?} vs logits {:?}",
                dlogits.shape(),
                tape.sums[last].shape()
            )));
        }
        for (k, g) in inject {
            match tape.sums.get(*k) {
                Some(s) if s.shape() == g.shape() => {}
                _ => return Err(Error::shape(format!("injected gradient for layer {k} has wrong shape"))),
            }
        }
        let mut grads = BTreeMap::new();
        let mut delta = dlogits.clone();
        if let Some(g) = inject.get(&last) {
            delta.add_assign(g)?;
        }
        for k in (0..=last).rev() {
            let layer: &LinearLayer = &self.base.layers()[k];
            let h = tape.layer_input(k);
            let mut dh = if k > 0 {
                Some(delta.matmul(&layer.weight)?)
            } else {
                None
            };
            if let Some(ad) = self.adapters.get(&k) {
                let low = tape
                    .low
                    .get(&k)
                    .ok_or_else(|| Error::shape(format!("tape lacks adapter activations for layer {k}")))?;
                let ds = if self.scale != 1.0 {
                    delta.scale(self.scale)
                } else {
                    delta.clone()
                };
                let db = ds.t_matmul(low)?;
                let dlow = ds.matmul(&ad.b)?;
                let da = dlow.t_matmul(h)?;
                if let Some(dh) = dh.as_mut() {
                    dh.add_assign(&dlow.matmul(&ad.a)?)?;
                }
                grads.insert(k, (da, db));
            }
            if let Some(dh) = dh {
                delta = relu_backward(&dh, &tape.sums[k - 1]);
                if let Some(g) = inject.get(&(k - 1)) {
                    delta.add_assign(g)?;
                }
            }
        }
        Ok(AdapterGrads { layers: grads })
    }

    /// Plain network with `W + c·B A` at instrumented layers.
    pub fn merge(&self) -> Result<Mlp> {
        let mut merged = self.base.clone();
        for (&k, ad) in &self.adapters {
            let mut dw = ad.delta_weight()?;
            if self.scale != 1.0 {
                dw = dw.scale(self.scale);
            }
            merged.layers_mut()[k].weight.add_assign(&dw)?;
        }
        Ok(merged)
    }

    pub fn to_checkpoint(&self, meta: CheckpointMeta) -> Checkpoint {
        Checkpoint {
            model: self.base.clone(),
            adapters: self
                .adapters
                .iter()
                .map(|(&layer, ad)| AdapterRecord {
                    layer,
                    rank: ad.rank(),
                    a: ad.a.clone(),
                    b: ad.b.clone(),
                })
                .collect(),
            meta,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let adapters = ck
            .adapters
            .iter()
            .map(|r| {
                (
                    r.layer,
                    LoraAdapter {
                        a: r.a.clone(),
                        b: r.b.clone(),
                    },
                )
            })
            .collect();
        Self::from_parts(ck.model.clone(), adapters, 1.0)
    }
}

pub fn merge(im: &InstrumentedModel) -> Result<Mlp> {
    im.merge()
}
