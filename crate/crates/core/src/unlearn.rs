//! Residual feature alignment unlearning.
//!
//! Per batch, with `b_r`/`b_f` the retained/unlearning rows and `m`
//! instrumented layers:
//!
//! ```text
//! L_inter = α/|b_r| Σ_{b_r} Σ_k ‖Δx'_k‖ + β/|b_f| Σ_{b_f} Σ_k ‖Δx'_k − (x̃_k − x'_k)‖
//! L_task  = λ/|b_r| Σ_{b_r} CE(f(x), y) + μ/|b_f| Σ_{b_f} CE(f(x), ỹ)
//! L       = γ/m · L_inter + (1 − γ) · L_task
//! ```
//!
//! `x̃_k` is the mean pre-trained feature of the batch's retained rows and
//! `ỹ` their mean one-hot label. Norms are Euclidean, per sample and layer.
//!
//! The teacher formulation writes the same intermediate loss against the
//! frozen network's features `t_k`: `‖s_k − t_k‖` on retained rows and
//! `‖s_k − x̃_k‖` on unlearning rows, where `s_k` is the adapted network's
//! summed feature. Both modes train only the adapter matrices; parameter
//! updates descend the objective.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{stratified_batches, BatchSplit, Dataset};
use crate::error::{Error, Result};
use crate::lora::{AdapterGrads, DecomposedTape, InstrumentedModel};
use crate::model::{Mlp, Optimizer, OptimizerKind};
use crate::numerics::{cross_entropy_logit_grad, l2_norm, mean_rows, row_cross_entropy, softmax_rows, Matrix, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    Residual,
    Teacher,
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "residual" => Ok(Self::Residual),
            "teacher" => Ok(Self::Teacher),
            other => Err(Error::config(format!(
                "unknown mode {other:?}, expected residual or teacher"
            ))),
        }
    }
}

/// Where `x̃` and `ỹ` come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetSource {
    /// Retained rows of the current batch.
    Batch,
    /// All retained rows, computed once before training.
    Global,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnlearnConfig {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub mu: f64,
    pub gamma: f64,
    pub rank: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    /// Instrumented layers; `None` means every hidden layer.
    pub layers: Option<Vec<usize>>,
    pub mode: LossMode,
    pub optimizer: OptimizerKind,
    pub weight_decay: f64,
    pub a_init_std: f64,
    pub lora_scale: f64,
    pub targets: TargetSource,
    /// Decay of the running target average used for batches without retained rows.
    pub ema_decay: f64,
    pub seed: u64,
}

impl Default for UnlearnConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            lambda: 1.0,
            mu: 1.0,
            gamma: 0.5,
            rank: 4,
            lr: 5e-5,
            epochs: 1,
            batch: 128,
            layers: None,
            mode: LossMode::Residual,
            optimizer: OptimizerKind::AdamW,
            weight_decay: 0.0,
            a_init_std: crate::lora::DEFAULT_A_INIT_STD,
            lora_scale: 1.0,
            targets: TargetSource::Batch,
            ema_decay: 0.9,
            seed: 0,
        }
    }
}

impl UnlearnConfig {
    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut v = Vec::new();
        if !(0.0..=1.0).contains(&self.gamma) {
            v.push(format!("{prefix}.gamma must be in [0, 1], got {}", self.gamma));
        }
        for (name, w) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("lambda", self.lambda),
            ("mu", self.mu),
        ] {
            if !(w >= 0.0) || !w.is_finite() {
                v.push(format!("{prefix}.{name} must be non-negative, got {w}"));
            }
        }
        if self.batch < 2 {
            v.push(format!("{prefix}.batch must be at least 2, got {}", self.batch));
        }
        if self.rank == 0 {
            v.push(format!("{prefix}.rank must be positive"));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            v.push(format!("{prefix}.lr must be non-negative, got {}", self.lr));
        }
        if !(self.a_init_std >= 0.0) {
            v.push(format!("{prefix}.a_init_std must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            v.push(format!("{prefix}.ema_decay must be in [0, 1)"));
        }
        if matches!(&self.layers, Some(l) if l.is_empty()) {
            v.push(format!("{prefix}.layers must not be empty"));
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations("unlearn");
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::config(v.join("; ")))
        }
    }

    pub fn layer_ids(&self, base: &Mlp) -> Vec<usize> {
        self.layers.clone().unwrap_or_else(|| base.hidden_layer_ids())
    }
}

/// Weighted intermediate-loss terms (`α` and `β` already applied).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InterTerms {
    pub retained: f64,
    pub forget: f64,
}

impl InterTerms {
    pub fn total(&self) -> f64 {
        self.retained + self.forget
    }
}

/// Weighted task-loss terms (`λ` and `μ` already applied).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskTerms {
    pub retained: f64,
    pub forget: f64,
}

impl TaskTerms {
    pub fn total(&self) -> f64 {
        self.retained + self.forget
    }
}

/// Alignment targets for one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchTargets {
    /// `x̃_k`, one vector per instrumented layer (ascending layer order).
    pub features: Vec<Vec<f64>>,
    /// `ỹ`
    pub label: Vec<f64>,
}

fn mask_rows(mask: &[bool], want: bool) -> Vec<usize> {
    (0..mask.len()).filter(|&i| mask[i] == want).collect()
}

/// Mean pre-trained feature over the retained rows, per listed layer.
pub fn batch_mean_features(tape: &DecomposedTape, layers: &[usize], retained: &[bool]) -> Result<Vec<Vec<f64>>> {
    mean_features(&tape.pretrained, layers, retained)
}

fn mean_features(features: &[Matrix], layers: &[usize], retained: &[bool]) -> Result<Vec<Vec<f64>>> {
    let rows = mask_rows(retained, true);
    if rows.is_empty() {
        return Err(Error::DegenerateBatch("batch has no retained rows".into()));
    }
    layers
        .iter()
        .map(|&k| {
            let f = features
                .get(k)
                .ok_or_else(|| Error::shape(format!("tape has no layer {k}")))?;
            if f.rows() != retained.len() {
                return Err(Error::shape(format!(
                    "mask of {} rows for {} feature rows",
                    retained.len(),
                    f.rows()
                )));
            }
            mean_rows(&f.select_rows(&rows))
        })
        .collect()
}

/// Mean of the retained one-hot labels.
pub fn average_label(labels: &Matrix) -> Result<Vec<f64>> {
    if labels.rows() == 0 {
        return Err(Error::DegenerateBatch("no retained labels to average".into()));
    }
    mean_rows(labels)
}

/// Adds `weight · ‖dev_row‖` for every listed row; when `grad` is given,
/// accumulates `weight · dev_row / ‖dev_row‖` (zero at the origin).
fn weighted_norms(dev: &Matrix, rows: &[usize], weight: f64, mut grad: Option<&mut Matrix>) -> f64 {
    let mut total = 0.0;
    for &i in rows {
        let r = dev.row(i);
        let n = l2_norm(r);
        total += weight * n;
        if let Some(g) = grad.as_deref_mut() {
            if n > 0.0 {
                for (gv, dv) in g.row_mut(i).iter_mut().zip(r) {
                    *gv += weight * dv / n;
                }
            }
        }
    }
    total
}

fn subset_weight(w: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        w / n as f64
    }
}

fn check_targets(layers: &[usize], targets: &[Vec<f64>], features: &[Matrix]) -> Result<()> {
    if targets.len() != layers.len() {
        return Err(Error::shape(format!(
            "{} target vectors for {} instrumented layers",
            targets.len(),
            layers.len()
        )));
    }
    for (&k, t) in layers.iter().zip(targets) {
        let f = features
            .get(k)
            .ok_or_else(|| Error::shape(format!("tape has no layer {k}")))?;
        if f.cols() != t.len() {
            return Err(Error::shape(format!(
                "target for layer {k} has {} entries, features have {}",
                t.len(),
                f.cols()
            )));
        }
    }
    Ok(())
}

/// Per-layer deviations in the residual formulation:
/// `Δx'_k` on retained rows, `Δx'_k − (x̃_k − x'_k)` on unlearning rows.
fn residual_deviations(
    tape: &DecomposedTape,
    layers: &[usize],
    retained: &[bool],
    targets: &[Vec<f64>],
) -> Result<Vec<Matrix>> {
    check_targets(layers, targets, &tape.residual)?;
    layers
        .iter()
        .zip(targets)
        .map(|(&k, target)| {
            let res = &tape.residual[k];
            let pre = &tape.pretrained[k];
            if res.rows() != retained.len() {
                return Err(Error::shape("batch mask does not match tape rows"));
            }
            let mut dev = res.clone();
            for i in mask_rows(retained, false) {
                let p = pre.row(i);
                for (j, d) in dev.row_mut(i).iter_mut().enumerate() {
                    *d -= target[j] - p[j];
                }
            }
            Ok(dev)
        })
        .collect()
}

/// Per-layer deviations in the teacher formulation:
/// `s_k − t_k` on retained rows, `s_k − x̃_k` on unlearning rows.
fn teacher_deviations(
    student: &[Matrix],
    teacher: &[Matrix],
    layers: &[usize],
    retained: &[bool],
    targets: &[Vec<f64>],
) -> Result<Vec<Matrix>> {
    check_targets(layers, targets, student)?;
    layers
        .iter()
        .zip(targets)
        .map(|(&k, target)| {
            let s = &student[k];
            let t = teacher
                .get(k)
                .ok_or_else(|| Error::shape(format!("teacher has no layer {k}")))?;
            if s.shape() != t.shape() || s.rows() != retained.len() {
                return Err(Error::shape(format!("student/teacher features disagree at layer {k}")));
            }
            let mut dev = s.clone();
            for (i, &keep) in retained.iter().enumerate() {
                let row = dev.row_mut(i);
                if keep {
                    for (d, tv) in row.iter_mut().zip(t.row(i)) {
                        *d -= tv;
                    }
                } else {
                    for (d, tv) in row.iter_mut().zip(target) {
                        *d -= tv;
                    }
                }
            }
            Ok(dev)
        })
        .collect()
}

fn inter_from_deviations(
    devs: &[Matrix],
    retained: &[bool],
    alpha: f64,
    beta: f64,
    mut grads: Option<&mut Vec<Matrix>>,
) -> InterTerms {
    let r = mask_rows(retained, true);
    let f = mask_rows(retained, false);
    let (wr, wf) = (subset_weight(alpha, r.len()), subset_weight(beta, f.len()));
    let mut terms = InterTerms::default();
    for (i, dev) in devs.iter().enumerate() {
        let mut g = grads.as_deref_mut().map(|g| &mut g[i]);
        terms.retained += weighted_norms(dev, &r, wr, g.as_deref_mut());
        terms.forget += weighted_norms(dev, &f, wf, g);
    }
    terms
}

/// Intermediate loss in the residual formulation. An empty subset contributes 0.
pub fn loss_inter(
    tape: &DecomposedTape,
    layers: &[usize],
    retained: &[bool],
    targets: &[Vec<f64>],
    alpha: f64,
    beta: f64,
) -> Result<InterTerms> {
    let devs = residual_deviations(tape, layers, retained, targets)?;
    Ok(inter_from_deviations(&devs, retained, alpha, beta, None))
}

/// Intermediate loss in the teacher formulation; equal to [`loss_inter`]
/// on identical inputs.
pub fn loss_inter_teacher(
    student: &[Matrix],
    teacher: &[Matrix],
    layers: &[usize],
    retained: &[bool],
    targets: &[Vec<f64>],
    alpha: f64,
    beta: f64,
) -> Result<InterTerms> {
    let devs = teacher_deviations(student, teacher, layers, retained, targets)?;
    Ok(inter_from_deviations(&devs, retained, alpha, beta, None))
}

fn task_terms(
    logits: &Matrix,
    labels: &Matrix,
    retained: &[bool],
    avg_label: &[f64],
    lambda: f64,
    mu: f64,
    grad_scale: Option<f64>,
) -> Result<(TaskTerms, Option<Matrix>)> {
    if logits.rows() != retained.len() || labels.shape() != logits.shape() {
        return Err(Error::shape(format!(
            "logits {:?}, labels {:?}, {} mask rows",
            logits.shape(),
            labels.shape(),
            retained.len()
        )));
    }
    if avg_label.len() != logits.cols() {
        return Err(Error::shape("average label width differs from logits"));
    }
    let probs = softmax_rows(logits);
    let n_r = retained.iter().filter(|&&r| r).count();
    let (wr, wf) = (subset_weight(lambda, n_r), subset_weight(mu, retained.len() - n_r));
    let mut terms = TaskTerms::default();
    let mut grad = grad_scale.map(|_| Matrix::zeros(logits.rows(), logits.cols()));
    for (i, &keep) in retained.iter().enumerate() {
        let p = probs.row(i);
        let (target, w) = if keep { (labels.row(i), wr) } else { (avg_label, wf) };
        if w == 0.0 {
            continue;
        }
        let ce = w * row_cross_entropy(p, target);
        if keep {
            terms.retained += ce;
        } else {
            terms.forget += ce;
        }
        if let (Some(g), Some(s)) = (grad.as_mut(), grad_scale) {
            for (gv, d) in g.row_mut(i).iter_mut().zip(cross_entropy_logit_grad(p, target)) {
                *gv = s * w * d;
            }
        }
    }
    Ok((terms, grad))
}

/// Task loss: retained rows against their labels, unlearning rows against `ỹ`.
pub fn loss_task(logits: &Matrix, split: &BatchSplit, avg_label: &[f64], lambda: f64, mu: f64) -> Result<TaskTerms> {
    Ok(task_terms(logits, &split.y, &split.retained, avg_label, lambda, mu, None)?.0)
}

/// `γ/m · L_inter + (1 − γ) · L_task`.
pub fn total_loss(l_inter: f64, l_task: f64, gamma: f64, m: usize) -> Result<f64> {
    if m == 0 {
        return Err(Error::config("objective needs at least one instrumented layer"));
    }
    Ok(gamma / m as f64 * l_inter + (1.0 - gamma) * l_task)
}

/// Value of the full objective on one batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveValue {
    pub inter: InterTerms,
    pub task: TaskTerms,
    pub total: f64,
}

/// Computes this batch's targets from the pre-trained features, or `None`
/// when the batch has no retained rows.
pub fn batch_targets(tape_pretrained: &[Matrix], layers: &[usize], split: &BatchSplit) -> Result<Option<BatchTargets>> {
    let r = split.retained_rows();
    if r.is_empty() {
        return Ok(None);
    }
    Ok(Some(BatchTargets {
        features: mean_features(tape_pretrained, layers, &split.retained)?,
        label: average_label(&split.y.select_rows(&r))?,
    }))
}

/// Objective value and adapter gradients, residual formulation.
pub fn objective_residual(
    im: &InstrumentedModel,
    split: &BatchSplit,
    targets: &BatchTargets,
    cfg: &UnlearnConfig,
) -> Result<(ObjectiveValue, AdapterGrads)> {
    let (logits, tape) = im.forward_decomposed(&split.x)?;
    residual_from_tape(im, &logits, &tape, split, targets, cfg)
}

fn residual_from_tape(
    im: &InstrumentedModel,
    logits: &Matrix,
    tape: &DecomposedTape,
    split: &BatchSplit,
    targets: &BatchTargets,
    cfg: &UnlearnConfig,
) -> Result<(ObjectiveValue, AdapterGrads)> {
    let layers = im.layer_ids();
    let devs = residual_deviations(tape, &layers, &split.retained, &targets.features)?;
    finish_objective(im, &tape.student, logits, &layers, devs, split, targets, cfg)
}

/// Objective value and adapter gradients, teacher formulation: teacher
/// features come from a separate forward pass of the frozen network.
pub fn objective_teacher(
    im: &InstrumentedModel,
    split: &BatchSplit,
    targets: &BatchTargets,
    cfg: &UnlearnConfig,
) -> Result<(ObjectiveValue, AdapterGrads)> {
    let (_, teacher) = im.base().forward(&split.x)?;
    teacher_from_features(im, &teacher.pre, split, targets, cfg)
}

fn teacher_from_features(
    im: &InstrumentedModel,
    teacher: &[Matrix],
    split: &BatchSplit,
    targets: &BatchTargets,
    cfg: &UnlearnConfig,
) -> Result<(ObjectiveValue, AdapterGrads)> {
    let layers = im.layer_ids();
    let (logits, student) = im.forward_student(&split.x)?;
    let devs = teacher_deviations(&student.sums, teacher, &layers, &split.retained, &targets.features)?;
    finish_objective(im, &student, &logits, &layers, devs, split, targets, cfg)
}

#[allow(clippy::too_many_arguments)]
fn finish_objective(
    im: &InstrumentedModel,
    student: &crate::lora::StudentTape,
    logits: &Matrix,
    layers: &[usize],
    devs: Vec<Matrix>,
    split: &BatchSplit,
    targets: &BatchTargets,
    cfg: &UnlearnConfig,
) -> Result<(ObjectiveValue, AdapterGrads)> {
    let m = layers.len();
    let inter_scale = cfg.gamma / m as f64;
    let mut inter_grads: Vec<Matrix> = devs.iter().map(|d| Matrix::zeros(d.rows(), d.cols())).collect();
    let inter = inter_from_deviations(&devs, &split.retained, cfg.alpha, cfg.beta, Some(&mut inter_grads));
    let (task, dlogits) = task_terms(
        logits,
        &split.y,
        &split.retained,
        &targets.label,
        cfg.lambda,
        cfg.mu,
        Some(1.0 - cfg.gamma),
    )?;
    let total = total_loss(inter.total(), task.total(), cfg.gamma, m)?;
    if !total.is_finite() {
        return Err(Error::Numeric("unlearning objective is not finite".into()));
    }
    let inject: BTreeMap<usize, Matrix> = layers
        .iter()
        .zip(inter_grads)
        .map(|(&k, g)| (k, g.scale(inter_scale)))
        .collect();
    let dlogits = dlogits.expect("gradient requested");
    let grads = im.backward_adapters(student, &dlogits, &inject)?;
    Ok((ObjectiveValue { inter, task, total }, grads))
}

/// One line of the JSON-lines training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchLog {
    pub epoch: usize,
    pub batch: usize,
    pub l_inter_r: f64,
    pub l_inter_f: f64,
    pub l_task_r: f64,
    pub l_task_f: f64,
    pub total: f64,
}

pub fn write_jsonl<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

/// Supplies per-batch targets, with a running average for batches that
/// lack retained rows.
#[derive(Clone, Debug)]
pub struct TargetTracker {
    source: TargetSource,
    decay: f64,
    global: Option<BatchTargets>,
    running: Option<BatchTargets>,
    pub fallbacks: usize,
}

impl TargetTracker {
    pub fn new(im: &InstrumentedModel, retained: &Dataset, cfg: &UnlearnConfig) -> Result<Self> {
        // also seeds the fallback for batches that lack retained rows
        let global = Self::global_targets(im, retained)?;
        Ok(Self {
            source: cfg.targets,
            decay: cfg.ema_decay,
            global,
            running: None,
            fallbacks: 0,
        })
    }

    fn global_targets(im: &InstrumentedModel, retained: &Dataset) -> Result<Option<BatchTargets>> {
        if retained.is_empty() {
            return Ok(None);
        }
        let (_, tape) = im.base().forward(&retained.x)?;
        let all = vec![true; retained.len()];
        Ok(Some(BatchTargets {
            features: mean_features(&tape.pre, &im.layer_ids(), &all)?,
            label: average_label(&retained.y)?,
        }))
    }

    fn blend(&mut self, current: &BatchTargets) {
        let d = self.decay;
        match self.running.as_mut() {
            None => self.running = Some(current.clone()),
            Some(run) => {
                for (r, c) in run.features.iter_mut().zip(&current.features) {
                    for (rv, cv) in r.iter_mut().zip(c) {
                        *rv = d * *rv + (1.0 - d) * cv;
                    }
                }
                for (rv, cv) in run.label.iter_mut().zip(&current.label) {
                    *rv = d * *rv + (1.0 - d) * cv;
                }
            }
        }
    }

    /// Targets for `split`, given the frozen features of its rows.
    pub fn targets_for(&mut self, pretrained: &[Matrix], layers: &[usize], split: &BatchSplit) -> Result<BatchTargets> {
        if self.source == TargetSource::Global {
            return self
                .global
                .clone()
                .ok_or_else(|| Error::DegenerateBatch("no retained rows for global targets".into()));
        }
        match batch_targets(pretrained, layers, split)? {
            Some(t) => {
                self.blend(&t);
                Ok(t)
            }
            None => {
                self.fallbacks += 1;
                log::warn!("batch without retained rows; using running-average targets");
                self.running
                    .clone()
                    .or_else(|| self.global.clone())
                    .ok_or_else(|| Error::DegenerateBatch("no retained rows available for targets".into()))
            }
        }
    }
}

/// One pass over `retained ∪ forget` in stratified batches, stepping only the adapters.
#[allow(clippy::too_many_arguments)]
pub fn unlearn_epoch(
    im: &mut InstrumentedModel,
    optimizer: &mut Optimizer,
    retained: &Dataset,
    forget: &Dataset,
    cfg: &UnlearnConfig,
    epoch: usize,
    rng: &mut Rng,
    tracker: &mut TargetTracker,
) -> Result<Vec<BatchLog>> {
    let layers = im.layer_ids();
    let batches = stratified_batches(retained, forget, cfg.batch, rng)?;
    let mut log = Vec::with_capacity(batches.len());
    for (b, split) in batches.iter().enumerate() {
        // targets come from the frozen features this batch's forward pass already produces
        let (value, grads) = match cfg.mode {
            LossMode::Residual => {
                let (logits, tape) = im.forward_decomposed(&split.x)?;
                let targets = tracker.targets_for(&tape.pretrained, &layers, split)?;
                residual_from_tape(im, &logits, &tape, split, &targets, cfg)?
            }
            LossMode::Teacher => {
                let (_, teacher) = im.base().forward(&split.x)?;
                let targets = tracker.targets_for(&teacher.pre, &layers, split)?;
                teacher_from_features(im, &teacher.pre, split, &targets, cfg)?
            }
        };
        let g = grads.slices();
        optimizer.step(im.adapter_slices_mut(), &g)?;
        log.push(BatchLog {
            epoch,
            batch: b,
            l_inter_r: value.inter.retained,
            l_inter_f: value.inter.forget,
            l_task_r: value.task.retained,
            l_task_f: value.task.forget,
            total: value.total,
        });
    }
    Ok(log)
}

#[derive(Clone, Debug)]
pub struct UnlearnOutcome {
    /// Merged plain network.
    pub model: Mlp,
    pub instrumented: InstrumentedModel,
    pub log: Vec<BatchLog>,
    pub target_fallbacks: usize,
}

/// Attach adapters, run `cfg.epochs` epochs, merge.
pub fn run_unlearning(base: &Mlp, retained: &Dataset, forget: &Dataset, cfg: &UnlearnConfig) -> Result<UnlearnOutcome> {
    cfg.validate()?;
    if retained.is_empty() {
        return Err(Error::EmptyInput("retained set is empty".into()));
    }
    let ids: std::collections::HashSet<usize> = retained.ids.iter().copied().collect();
    if forget.ids.iter().any(|i| ids.contains(i)) {
        return Err(Error::config("retained and unlearning sets overlap"));
    }
    let root = Rng::new(cfg.seed);
    let layers = cfg.layer_ids(base);
    let mut im = InstrumentedModel::attach(base, &layers, cfg.rank, &mut root.fork("lora"), cfg.a_init_std)?
        .with_scale(cfg.lora_scale);
    log::info!(
        "unlearning with {:?} mode on layers {:?}; update rule: adapters ← adapters − lr·∇L",
        cfg.mode,
        layers
    );
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.lr, cfg.weight_decay);
    let mut tracker = TargetTracker::new(&im, retained, cfg)?;
    let mut rng = root.fork("batches");
    let mut log = Vec::new();
    for epoch in 0..cfg.epochs {
        log.extend(unlearn_epoch(
            &mut im,
            &mut optimizer,
            retained,
            forget,
            cfg,
            epoch,
            &mut rng,
            &mut tracker,
        )?);
    }
    Ok(UnlearnOutcome {
        model: im.merge()?,
        target_fallbacks: tracker.fallbacks,
        instrumented: im,
        log,
    })
}
