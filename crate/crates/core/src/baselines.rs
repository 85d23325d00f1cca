//! Comparison methods: retrain, fine-tune, negative gradient and
//! bad-teacher distillation.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{
    cross_entropy_grads, mlp_init, train_supervised, Checkpoint, CheckpointMeta, EpochLog, Mlp, Optimizer,
    OptimizerKind, TrainConfig,
};
use crate::numerics::{softmax_rows, Matrix, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMethod {
    Retrain,
    Finetune,
    Neggrad,
    Badt,
}

impl BaselineMethod {
    pub const ALL: [BaselineMethod; 4] = [Self::Retrain, Self::Finetune, Self::Neggrad, Self::Badt];

    pub fn name(self) -> &'static str {
        match self {
            Self::Retrain => "retrain",
            Self::Finetune => "finetune",
            Self::Neggrad => "neggrad",
            Self::Badt => "badt",
        }
    }
}

impl std::fmt::Display for BaselineMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for BaselineMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            Error::config(format!(
                "unknown baseline {s:?}; valid methods are {{retrain, finetune, neggrad, badt}}"
            ))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineSpec {
    pub method: BaselineMethod,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub weight_decay: f64,
    /// Distillation temperature, bad teacher only.
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Global gradient-norm clip, negative gradient only.
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
}

fn default_optimizer() -> OptimizerKind {
    OptimizerKind::AdamW
}

fn default_temperature() -> f64 {
    1.0
}

fn default_clip() -> f64 {
    5.0
}

impl BaselineSpec {
    /// Defaults: retrain gets the original 20-epoch training budget, the
    /// others a single epoch; all share the training learning rate and batch.
    pub fn new(method: BaselineMethod) -> Self {
        let train = TrainConfig::default();
        let epochs = match method {
            BaselineMethod::Retrain => train.epochs,
            _ => 1,
        };
        Self {
            method,
            epochs,
            lr: train.lr,
            batch: train.batch,
            seed: 0,
            optimizer: default_optimizer(),
            weight_decay: 0.0,
            temperature: default_temperature(),
            clip_norm: default_clip(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut v = self.train_config().violations(prefix);
        match self.method {
            BaselineMethod::Badt if !(self.temperature > 0.0) || !self.temperature.is_finite() => {
                v.push(format!(
                    "{prefix}.temperature must be positive for badt, got {}",
                    self.temperature
                ));
            }
            BaselineMethod::Neggrad if !(self.clip_norm > 0.0) => {
                v.push(format!(
                    "{prefix}.clip_norm must be positive for neggrad, got {}",
                    self.clip_norm
                ));
            }
            _ => {}
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations(&format!("baseline.{}", self.method));
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::config(v.join("; ")))
        }
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch: self.batch,
            lr: self.lr,
            optimizer: self.optimizer,
            weight_decay: self.weight_decay,
        }
    }
}

fn require(data: &Dataset, what: &str) -> Result<()> {
    if data.is_empty() {
        Err(Error::EmptyInput(format!("{what} is empty")))
    } else {
        Ok(())
    }
}

/// Fresh network of the given widths trained on `retained` only.
pub fn retrain(retained: &Dataset, widths: &[usize], spec: &BaselineSpec) -> Result<(Mlp, Vec<EpochLog>)> {
    require(retained, "retained set")?;
    spec.validate()?;
    let root = Rng::new(spec.seed);
    let mut m = mlp_init(widths, &mut root.fork("retrain-init"))?;
    let log = train_supervised(
        &mut m,
        retained,
        &spec.train_config(),
        &mut root.fork("retrain-batches"),
    )?;
    Ok((m, log))
}

/// Continued cross-entropy training on `retained`.
pub fn finetune(original: &Mlp, retained: &Dataset, spec: &BaselineSpec) -> Result<(Mlp, Vec<EpochLog>)> {
    require(retained, "retained set")?;
    spec.validate()?;
    let mut m = original.clone();
    let log = train_supervised(
        &mut m,
        retained,
        &spec.train_config(),
        &mut Rng::new(spec.seed).fork("finetune"),
    )?;
    Ok((m, log))
}

/// Gradient ascent on the cross-entropy of `forget`, clipped to `spec.clip_norm`.
pub fn neggrad(original: &Mlp, forget: &Dataset, spec: &BaselineSpec) -> Result<(Mlp, Vec<EpochLog>)> {
    require(forget, "unlearning set")?;
    spec.validate()?;
    let mut m = original.clone();
    let mut rng = Rng::new(spec.seed).fork("neggrad");
    let mut opt = Optimizer::new(spec.optimizer, spec.lr, spec.weight_decay);
    let mut log = Vec::with_capacity(spec.epochs);
    for epoch in 0..spec.epochs {
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for idx in forget.shuffled_batches(spec.batch, &mut rng) {
            let (loss, mut grads, ok) =
                cross_entropy_grads(&m, &forget.x.select_rows(&idx), &forget.y.select_rows(&idx))?;
            loss_sum += loss * idx.len() as f64;
            correct += ok;
            let norm = grads.global_norm();
            let clip = if norm > spec.clip_norm {
                spec.clip_norm / norm
            } else {
                1.0
            };
            grads.scale(-clip);
            let g = grads.slices();
            opt.step(m.param_slices_mut(), &g)?;
        }
        if !m.is_finite() {
            return Err(Error::Numeric(format!(
                "negative-gradient weights diverged in epoch {epoch}"
            )));
        }
        log.push(EpochLog {
            epoch,
            loss: loss_sum / forget.len() as f64,
            accuracy: correct as f64 / forget.len() as f64,
        });
    }
    Ok((m, log))
}

/// Mean over rows of `KL(q ‖ p)` for two probability matrices.
pub fn mean_kl(q: &Matrix, p: &Matrix) -> Result<f64> {
    if q.shape() != p.shape() || q.rows() == 0 {
        return Err(Error::shape(format!("kl of {:?} against {:?}", q.shape(), p.shape())));
    }
    let mut total = 0.0;
    for (qr, pr) in q.iter_rows().zip(p.iter_rows()) {
        for (&a, &b) in qr.iter().zip(pr) {
            if a > 0.0 {
                total += a * (a.ln() - b.max(crate::numerics::PROB_CLIP).ln());
            }
        }
    }
    Ok(total / q.rows() as f64)
}

fn tempered(m: &Mlp, x: &Matrix, t: f64) -> Result<Matrix> {
    Ok(softmax_rows(&m.logits(x)?.scale(1.0 / t)))
}

/// Log line of one bad-teacher epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillLog {
    pub epoch: usize,
    /// Mean KL to the teacher over all rows.
    pub loss: f64,
    /// Mean KL of the student to the random teacher on the unlearning rows, measured after the epoch.
    pub kl_forget: f64,
}

/// The random teacher used for `forget` rows.
pub fn incompetent_teacher(widths: &[usize], spec: &BaselineSpec) -> Result<Mlp> {
    mlp_init(widths, &mut Rng::new(spec.seed).fork("incompetent-teacher"))
}

/// Distillation from the original network on `retained` and a random
/// network on `forget`, starting from the original weights.
pub fn bad_teacher(
    original: &Mlp,
    retained: &Dataset,
    forget: &Dataset,
    spec: &BaselineSpec,
) -> Result<(Mlp, Vec<DistillLog>)> {
    require(retained, "retained set")?;
    require(forget, "unlearning set")?;
    spec.validate()?;
    let t = spec.temperature;
    let bad = incompetent_teacher(&original.widths(), spec)?;
    let all = retained.concat(forget)?;
    // teacher targets are fixed: precompute once
    let good_q = tempered(original, &retained.x, t)?;
    let bad_q = tempered(&bad, &forget.x, t)?;
    let targets = good_q.vstack(&bad_q)?;

    let mut m = original.clone();
    let mut rng = Rng::new(spec.seed).fork("badt-batches");
    let mut opt = Optimizer::new(spec.optimizer, spec.lr, spec.weight_decay);
    let mut log = Vec::with_capacity(spec.epochs);
    for epoch in 0..spec.epochs {
        let mut loss_sum = 0.0;
        for idx in all.shuffled_batches(spec.batch, &mut rng) {
            let x = all.x.select_rows(&idx);
            let q = targets.select_rows(&idx);
            let (logits, tape) = m.forward(&x)?;
            let p = softmax_rows(&logits.scale(1.0 / t));
            loss_sum += mean_kl(&q, &p)? * idx.len() as f64;
            let dlogits = p.sub(&q)?.scale(1.0 / (t * idx.len() as f64));
            let grads = m.backward(&tape, &dlogits)?;
            let g = grads.slices();
            opt.step(m.param_slices_mut(), &g)?;
        }
        if !m.is_finite() {
            return Err(Error::Numeric(format!(
                "distillation weights diverged in epoch {epoch}"
            )));
        }
        log.push(DistillLog {
            epoch,
            loss: loss_sum / all.len() as f64,
            kl_forget: mean_kl(&bad_q, &tempered(&m, &forget.x, t)?)?,
        });
    }
    Ok((m, log))
}

/// A baseline's resulting checkpoint and its per-epoch log as JSON values.
#[derive(Clone, Debug)]
pub struct BaselineOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<serde_json::Value>,
}

fn to_values<T: Serialize>(rows: &[T]) -> Result<Vec<serde_json::Value>> {
    rows.iter()
        .map(|r| serde_json::to_value(r).map_err(Error::from))
        .collect()
}

/// Runs `spec.method` from an original checkpoint.
pub fn run_baseline(
    original: &Checkpoint,
    retained: &Dataset,
    forget: &Dataset,
    spec: &BaselineSpec,
) -> Result<BaselineOutcome> {
    let base = &original.model;
    let (model, log) = match spec.method {
        BaselineMethod::Retrain => {
            let (m, l) = retrain(retained, &base.widths(), spec)?;
            (m, to_values(&l)?)
        }
        BaselineMethod::Finetune => {
            let (m, l) = finetune(base, retained, spec)?;
            (m, to_values(&l)?)
        }
        BaselineMethod::Neggrad => {
            let (m, l) = neggrad(base, forget, spec)?;
            (m, to_values(&l)?)
        }
        BaselineMethod::Badt => {
            let (m, l) = bad_teacher(base, retained, forget, spec)?;
            (m, to_values(&l)?)
        }
    };
    let meta = CheckpointMeta {
        seed: spec.seed,
        epochs: spec.epochs,
        method: spec.method.name().to_string(),
    };
    Ok(BaselineOutcome {
        checkpoint: Checkpoint::new(model, meta),
        log,
    })
}
