//! Fixed MLP family (linear layers, ReLU between them, linear head) with a
//! recorded feature tape, hand-written backpropagation, SGD/AdamW and the
//! JSON checkpoint format.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{argmax, Dataset};
use crate::error::{Error, Result};
use crate::numerics::{cross_entropy_logit_grad, gaussian_fill, softmax_rows, Matrix, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct LinearLayer {
    /// `out_dim × in_dim`
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl LinearLayer {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::shape(format!(
                "bias of length {} for a {}x{} weight",
                bias.len(),
                weight.rows(),
                weight.cols()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    /// `x Wᵀ + b` over a batch of rows.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let mut out = x.matmul_t(&self.weight)?;
        out.add_row_broadcast(&self.bias)?;
        Ok(out)
    }
}

pub fn relu(m: &Matrix) -> Matrix {
    m.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Multiplies `grad` by the ReLU derivative at `pre` (0 at the kink).
pub(crate) fn relu_backward(grad: &Matrix, pre: &Matrix) -> Matrix {
    let mut out = grad.clone();
    for (g, &p) in out.as_mut_slice().iter_mut().zip(pre.as_slice()) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
    out
}

/// Feed-forward network: ReLU after every layer except the last.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<LinearLayer>,
}

/// Everything `forward` computed, kept for backpropagation and feature metrics.
#[derive(Clone, Debug)]
pub struct FeatureTape {
    pub input: Matrix,
    /// Pre-activation output of every layer; the last entry is the logits.
    pub pre: Vec<Matrix>,
    /// ReLU outputs of the hidden layers.
    pub post: Vec<Matrix>,
}

impl FeatureTape {
    /// Input to layer `k`.
    pub fn layer_input(&self, k: usize) -> &Matrix {
        if k == 0 {
            &self.input
        } else {
            &self.post[k - 1]
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(m: &Mlp) -> Self {
        Self {
            weights: m
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.out_dim(), l.in_dim()))
                .collect(),
            biases: m.layers.iter().map(|l| vec![0.0; l.out_dim()]).collect(),
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.weights.len() * 2);
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w.as_slice());
            out.push(b.as_slice());
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.weights.len() * 2);
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w.as_mut_slice());
            out.push(b.as_mut_slice());
        }
        out
    }

    pub fn global_norm(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for sl in self.slices_mut() {
            sl.iter_mut().for_each(|v| *v *= s);
        }
    }
}

impl Mlp {
    pub fn from_layers(layers: Vec<LinearLayer>) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::config(format!(
                "an MLP needs at least one hidden layer, got {} layer(s)",
                layers.len()
            )));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::shape(format!(
                    "layer {i} outputs {} features but layer {} expects {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[LinearLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LinearLayer] {
        &mut self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].in_dim()];
        w.extend(self.layers.iter().map(LinearLayer::out_dim));
        w
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Indices of the hidden layers (every layer but the classifier head).
    pub fn hidden_layer_ids(&self) -> Vec<usize> {
        (0..self.layers.len() - 1).collect()
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, FeatureTape)> {
        if x.cols() != self.input_dim() {
            return Err(Error::shape(format!(
                "input has {} columns, network expects {}",
                x.cols(),
                self.input_dim()
            )));
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len() - 1);
        for (k, layer) in self.layers.iter().enumerate() {
            let input = if k == 0 { x } else { &post[k - 1] };
            let z = layer.apply(input)?;
            if k + 1 < self.layers.len() {
                post.push(relu(&z));
            }
            pre.push(z);
        }
        let logits = pre[pre.len() - 1].clone();
        Ok((
            logits,
            FeatureTape {
                input: x.clone(),
                pre,
                post,
            },
        ))
    }

    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward(x)?.0)
    }

    pub fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        Ok(softmax_rows(&self.logits(x)?))
    }

    /// Gradients of the scalar whose derivative w.r.t. the logits is
    /// `dlogits`. No batch averaging happens here: fold any `1/batch` into
    /// `dlogits`. Then `dW_k = δ_kᵀ · x_{k-1}` and `db_k = Σ_rows δ_k`.
    pub fn backward(&self, tape: &FeatureTape, dlogits: &Matrix) -> Result<MlpGrads> {
        let last = self.layers.len() - 1;
        if dlogits.shape() != tape.pre[last].shape() {
            return Err(Error::shape(format!(
                "dlogits {:?} vs logits {:?}",
                dlogits.shape(),
                tape.pre[last].shape()
            )));
        }
        let mut grads = MlpGrads::zeros_like(self);
        let mut delta = dlogits.clone();
        for k in (0..=last).rev() {
            let input = tape.layer_input(k);
            grads.weights[k] = delta.t_matmul(input)?;
            grads.biases[k] = delta.sum_rows();
            if k > 0 {
                let dh = delta.matmul(&self.layers[k].weight)?;
                delta = relu_backward(&dh, &tape.pre[k - 1]);
            }
        }
        Ok(grads)
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &mut self.layers {
            out.push(l.weight.as_mut_slice());
            out.push(l.bias.as_mut_slice());
        }
        out
    }

    /// All parameters flattened layer by layer (weight then bias).
    pub fn flat_params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.as_slice().iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self
            .layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .sum();
        if flat.len() != total {
            return Err(Error::shape(format!("{} values for {total} parameters", flat.len())));
        }
        let mut i = 0;
        for s in self.param_slices_mut() {
            s.copy_from_slice(&flat[i..i + s.len()]);
            i += s.len();
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.iter().all(|v| v.is_finite()))
    }
}

/// He-normal weights (`std = sqrt(2 / in_dim)`), zero biases.
pub fn mlp_init(widths: &[usize], rng: &mut Rng) -> Result<Mlp> {
    if widths.len() < 3 {
        return Err(Error::config(format!(
            "widths need input, at least one hidden and output entry, got {widths:?}"
        )));
    }
    if widths.contains(&0) {
        return Err(Error::config(format!("zero width in {widths:?}")));
    }
    let layers = widths
        .windows(2)
        .map(|w| {
            let std = (2.0 / w[0] as f64).sqrt();
            LinearLayer::new(gaussian_fill(rng, w[1], w[0], 0.0, std)?, vec![0.0; w[1]])
        })
        .collect::<Result<Vec<_>>>()?;
    Mlp::from_layers(layers)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    AdamW,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adamw" => Ok(Self::AdamW),
            other => Err(Error::config(format!(
                "unknown optimizer {other:?}, expected sgd or adamw"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamWParams {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

/// First/second moment buffers, one per parameter slice.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

fn check_grads(params: &[&mut [f64]], grads: &[&[f64]]) -> Result<()> {
    if params.len() != grads.len() || params.iter().zip(grads).any(|(p, g)| p.len() != g.len()) {
        return Err(Error::shape("gradient layout does not match parameters"));
    }
    if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
        return Err(Error::Numeric("non-finite gradient, step aborted".into()));
    }
    Ok(())
}

/// `θ ← θ − lr·g` over parallel slices.
pub fn sgd_update(mut params: Vec<&mut [f64]>, grads: &[&[f64]], lr: f64) -> Result<()> {
    check_grads(&params, grads)?;
    for (p, g) in params.iter_mut().zip(grads) {
        for (pv, gv) in p.iter_mut().zip(g.iter()) {
            *pv -= lr * gv;
        }
    }
    Ok(())
}

/// Decoupled weight decay, then the bias-corrected Adam step:
/// `θ ← θ(1 − lr·wd)`, `θ ← θ − lr·m̂ / (sqrt(v̂) + eps)`.
pub fn adamw_update(
    mut params: Vec<&mut [f64]>,
    grads: &[&[f64]],
    state: &mut AdamState,
    hp: &AdamWParams,
) -> Result<()> {
    check_grads(&params, grads)?;
    if state.m.is_empty() {
        state.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
        state.v = state.m.clone();
    } else if state.m.len() != grads.len() || state.m.iter().zip(grads).any(|(m, g)| m.len() != g.len()) {
        return Err(Error::shape("optimizer state does not match parameters"));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);
    let decay = 1.0 - hp.lr * hp.weight_decay;
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..p.len() {
            m[j] = hp.beta1 * m[j] + (1.0 - hp.beta1) * g[j];
            v[j] = hp.beta2 * v[j] + (1.0 - hp.beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] = p[j] * decay - hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
        }
    }
    Ok(())
}

pub fn sgd_step(m: &mut Mlp, grads: &MlpGrads, lr: f64) -> Result<()> {
    let g = grads.slices();
    sgd_update(m.param_slices_mut(), &g, lr)
}

pub fn adamw_step(m: &mut Mlp, grads: &MlpGrads, state: &mut AdamState, hp: &AdamWParams) -> Result<()> {
    let g = grads.slices();
    adamw_update(m.param_slices_mut(), &g, state, hp)
}

/// Optimizer with its state, applied to any list of parameter slices.
#[derive(Clone, Debug)]
pub enum Optimizer {
    Sgd { lr: f64 },
    AdamW { hp: AdamWParams, state: AdamState },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, weight_decay: f64) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
            OptimizerKind::AdamW => Optimizer::AdamW {
                hp: AdamWParams::new(lr, weight_decay),
                state: AdamState::default(),
            },
        }
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: &[&[f64]]) -> Result<()> {
        match self {
            Optimizer::Sgd { lr } => sgd_update(params, grads, *lr),
            Optimizer::AdamW { hp, state } => adamw_update(params, grads, state, hp),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch: 32,
            lr: 1e-2,
            optimizer: OptimizerKind::AdamW,
            weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut v = Vec::new();
        if self.batch == 0 {
            v.push(format!("{prefix}.batch must be positive"));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            v.push(format!("{prefix}.lr must be a non-negative number, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0) {
            v.push(format!("{prefix}.weight_decay must be non-negative"));
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Mean cross-entropy of a batch, its gradients and the number of correct predictions.
pub fn cross_entropy_grads(m: &Mlp, x: &Matrix, y: &Matrix) -> Result<(f64, MlpGrads, usize)> {
    let (logits, tape) = m.forward(x)?;
    if y.shape() != logits.shape() {
        return Err(Error::shape(format!(
            "labels {:?} vs logits {:?}",
            y.shape(),
            logits.shape()
        )));
    }
    let probs = softmax_rows(&logits);
    let n = x.rows() as f64;
    let loss = crate::numerics::cross_entropy(&probs, y)?;
    let mut dlogits = Matrix::zeros(probs.rows(), probs.cols());
    for (i, (p, t)) in probs.iter_rows().zip(y.iter_rows()).enumerate() {
        for (d, g) in dlogits.row_mut(i).iter_mut().zip(cross_entropy_logit_grad(p, t)) {
            *d = g / n;
        }
    }
    let correct = probs
        .iter_rows()
        .zip(y.iter_rows())
        .filter(|(p, t)| argmax(p) == argmax(t))
        .count();
    Ok((loss, m.backward(&tape, &dlogits)?, correct))
}

/// Mini-batch cross-entropy training with a fresh shuffle every epoch.
pub fn train_supervised(m: &mut Mlp, data: &Dataset, cfg: &TrainConfig, rng: &mut Rng) -> Result<Vec<EpochLog>> {
    if data.is_empty() {
        return Err(Error::EmptyInput("training set is empty".into()));
    }
    let problems = cfg.violations("train");
    if !problems.is_empty() {
        return Err(Error::config(problems.join("; ")));
    }
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr, cfg.weight_decay);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for idx in data.shuffled_batches(cfg.batch, rng) {
            let (loss, grads, ok) = cross_entropy_grads(m, &data.x.select_rows(&idx), &data.y.select_rows(&idx))?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("training loss diverged in epoch {epoch}")));
            }
            loss_sum += loss * idx.len() as f64;
            correct += ok;
            let g = grads.slices();
            opt.step(m.param_slices_mut(), &g)?;
        }
        log.push(EpochLog {
            epoch,
            loss: loss_sum / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
        });
    }
    Ok(log)
}

pub const CHECKPOINT_MAGIC: &str = "RFAU";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub epochs: usize,
    #[serde(default)]
    pub method: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Serialized LoRA adapter attached to layer `layer`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdapterRecord {
    pub layer: usize,
    pub rank: usize,
    pub a: Matrix,
    pub b: Matrix,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    magic: String,
    version: u32,
    widths: Vec<usize>,
    layers: Vec<LayerRecord>,
    meta: CheckpointMeta,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    adapters: Vec<AdapterRecord>,
}

/// A model plus optional adapters and metadata, as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Mlp,
    pub adapters: Vec<AdapterRecord>,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn new(model: Mlp, meta: CheckpointMeta) -> Self {
        Self {
            model,
            adapters: Vec::new(),
            meta,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let file = CheckpointFile {
            magic: CHECKPOINT_MAGIC.to_string(),
            version: CHECKPOINT_VERSION,
            widths: self.model.widths(),
            layers: self
                .model
                .layers()
                .iter()
                .map(|l| LayerRecord {
                    weight: l.weight.clone(),
                    bias: l.bias.clone(),
                })
                .collect(),
            meta: self.meta.clone(),
            adapters: self.adapters.clone(),
        };
        let mut s = serde_json::to_string(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| Error::format(format!("checkpoint is not valid JSON: {e}"), None))?;
        match value.get("magic").and_then(|m| m.as_str()) {
            Some(CHECKPOINT_MAGIC) => {}
            other => {
                return Err(Error::format(
                    format!("bad checkpoint magic: expected {CHECKPOINT_MAGIC:?}, found {other:?}"),
                    None,
                ))
            }
        }
        let version = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::format("checkpoint has no numeric version", None))?;
        if version != u64::from(CHECKPOINT_VERSION) {
            return Err(Error::Version {
                expected: CHECKPOINT_VERSION,
                found: version,
            });
        }
        let file: CheckpointFile =
            serde_json::from_value(value).map_err(|e| Error::format(format!("checkpoint schema: {e}"), None))?;
        let layers = file
            .layers
            .into_iter()
            .map(|l| LinearLayer::new(l.weight, l.bias))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::format(format!("checkpoint layers inconsistent: {e}"), None))?;
        let model = Mlp::from_layers(layers)
            .map_err(|e| Error::format(format!("checkpoint layers inconsistent: {e}"), None))?;
        if model.widths() != file.widths {
            return Err(Error::format(
                format!("declared widths {:?} but layers give {:?}", file.widths, model.widths()),
                None,
            ));
        }
        for a in &file.adapters {
            let host = model
                .layers()
                .get(a.layer)
                .ok_or_else(|| Error::format(format!("adapter for missing layer {}", a.layer), None))?;
            if a.a.shape() != (a.rank, host.in_dim()) || a.b.shape() != (host.out_dim(), a.rank) {
                return Err(Error::format(
                    format!("adapter on layer {} has inconsistent shapes", a.layer),
                    None,
                ));
            }
        }
        Ok(Self {
            model,
            adapters: file.adapters,
            meta: file.meta,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text)
    }
}

pub fn save_checkpoint(m: &Mlp, meta: &CheckpointMeta, path: impl AsRef<Path>) -> Result<()> {
    Checkpoint::new(m.clone(), meta.clone()).save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Mlp> {
    Ok(Checkpoint::load(path)?.model)
}
