//! Metrics: accuracy, activation and feature distance, an entropy-feature
//! membership-inference attack, wall time, and the report that bundles them.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{argmax, Dataset, UnlearningSplit};
use crate::error::{Error, Result};
use crate::model::Mlp;
use crate::numerics::{entropy_rows, Matrix, Rng};

fn require_rows(x: &Matrix, what: &str) -> Result<()> {
    if x.rows() == 0 {
        Err(Error::EmptyInput(format!("{what} has no rows")))
    } else {
        Ok(())
    }
}

/// Fraction of rows whose predicted class equals the label.
pub fn accuracy(model: &Mlp, data: &Dataset) -> Result<f64> {
    require_rows(&data.x, "accuracy data")?;
    let p = model.predict_proba(&data.x)?;
    if p.cols() != data.y.cols() {
        return Err(Error::shape(format!(
            "model has {} outputs, labels {} classes",
            p.cols(),
            data.y.cols()
        )));
    }
    let ok = p
        .iter_rows()
        .zip(data.y.iter_rows())
        .filter(|(a, b)| argmax(a) == argmax(b))
        .count();
    Ok(ok as f64 / data.len() as f64)
}

/// Mean L2 distance between the two models' softmax outputs.
pub fn activation_distance(a: &Mlp, b: &Mlp, x: &Matrix) -> Result<f64> {
    require_rows(x, "activation-distance data")?;
    if a.output_dim() != b.output_dim() {
        return Err(Error::shape(format!(
            "output widths {} and {}",
            a.output_dim(),
            b.output_dim()
        )));
    }
    let (pa, pb) = (a.predict_proba(x)?, b.predict_proba(x)?);
    let total: f64 = pa
        .iter_rows()
        .zip(pb.iter_rows())
        .map(|(r, s)| r.iter().zip(s).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt())
        .sum();
    Ok(total / x.rows() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureDistanceKind {
    /// `|a − b|`
    #[default]
    Absolute,
    /// `|a − b| / max(|a|, |b|)`, 0 where both vanish.
    Relative,
}

/// Mean over samples of the per-layer mean elementwise difference of
/// pre-activation features, summed over `layers`.
pub fn feature_distance(a: &Mlp, b: &Mlp, x: &Matrix, layers: &[usize]) -> Result<f64> {
    feature_distance_with(a, b, x, layers, FeatureDistanceKind::Absolute)
}

pub fn feature_distance_with(a: &Mlp, b: &Mlp, x: &Matrix, layers: &[usize], kind: FeatureDistanceKind) -> Result<f64> {
    require_rows(x, "feature-distance data")?;
    if a.widths() != b.widths() {
        return Err(Error::shape(format!(
            "architectures {:?} and {:?} differ",
            a.widths(),
            b.widths()
        )));
    }
    if let Some(&k) = layers.iter().find(|&&k| k >= a.num_layers()) {
        return Err(Error::shape(format!(
            "layer {k} out of range for {} layers",
            a.num_layers()
        )));
    }
    let (_, ta) = a.forward(x)?;
    let (_, tb) = b.forward(x)?;
    let mut total = 0.0;
    for &k in layers {
        let (fa, fb) = (&ta.pre[k], &tb.pre[k]);
        let sum: f64 = fa
            .as_slice()
            .iter()
            .zip(fb.as_slice())
            .map(|(&u, &v)| match kind {
                FeatureDistanceKind::Absolute => (u - v).abs(),
                FeatureDistanceKind::Relative => {
                    let d = u.abs().max(v.abs());
                    if d == 0.0 {
                        0.0
                    } else {
                        (u - v).abs() / d
                    }
                }
            })
            .sum();
        // mean over the layer's elements of each sample, then mean over samples
        total += sum / fa.cols() as f64;
    }
    Ok(total / x.rows() as f64)
}

/// Prediction entropy per row; the attack's only feature.
pub fn entropy_feature(model: &Mlp, x: &Matrix) -> Result<Vec<f64>> {
    entropy_rows(&model.predict_proba(x)?)
}

pub const ATTACK_ITERATIONS: usize = 200;
pub const ATTACK_LR: f64 = 0.1;

/// One-feature logistic regression over standardized entropies.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackModel {
    pub weight: f64,
    pub bias: f64,
    pub mean: f64,
    pub std: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl AttackModel {
    /// Fits on features labelled member (1) or non-member (0).
    pub fn fit(features: &[f64], members: &[bool]) -> Result<Self> {
        if features.is_empty() || features.len() != members.len() {
            return Err(Error::shape(format!(
                "{} features for {} labels",
                features.len(),
                members.len()
            )));
        }
        let n = features.len() as f64;
        let mean = features.iter().sum::<f64>() / n;
        let var = features.iter().map(|f| (f - mean) * (f - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        if !(std > 1e-12) {
            return Err(Error::DegenerateFeature(format!(
                "attack feature has zero variance (mean {mean})"
            )));
        }
        let z: Vec<f64> = features.iter().map(|f| (f - mean) / std).collect();
        let (mut w, mut b) = (0.0, 0.0);
        for _ in 0..ATTACK_ITERATIONS {
            let (mut gw, mut gb) = (0.0, 0.0);
            for (&zi, &yi) in z.iter().zip(members) {
                let err = sigmoid(w * zi + b) - if yi { 1.0 } else { 0.0 };
                gw += err * zi;
                gb += err;
            }
            w -= ATTACK_LR * gw / n;
            b -= ATTACK_LR * gb / n;
        }
        Ok(Self {
            weight: w,
            bias: b,
            mean,
            std,
        })
    }

    pub fn member_probability(&self, feature: f64) -> f64 {
        sigmoid(self.weight * (feature - self.mean) / self.std + self.bias)
    }

    /// Probability ≥ 0.5 counts as member.
    pub fn is_member(&self, feature: f64) -> bool {
        self.member_probability(feature) >= 0.5
    }

    pub fn accuracy(&self, features: &[f64], members: &[bool]) -> f64 {
        let ok = features
            .iter()
            .zip(members)
            .filter(|(&f, &m)| self.is_member(f) == m)
            .count();
        ok as f64 / features.len().max(1) as f64
    }
}

/// Fits the attack with `retained` as members and `test` as non-members;
/// the larger set is subsampled so both contribute equally.
pub fn train_attack(model: &Mlp, test: &Dataset, retained: &Dataset, rng: &mut Rng) -> Result<AttackModel> {
    if test.is_empty() || retained.is_empty() {
        return Err(Error::EmptyInput(
            "attack needs non-empty member and non-member sets".into(),
        ));
    }
    let n = test.len().min(retained.len());
    let mut take = |d: &Dataset| {
        let mut idx = rng.permutation(d.len());
        idx.truncate(n);
        idx.sort_unstable();
        d.x.select_rows(&idx)
    };
    let members = take(retained);
    let non_members = take(test);
    let mut features = entropy_feature(model, &members)?;
    features.extend(entropy_feature(model, &non_members)?);
    let labels: Vec<bool> = (0..2 * n).map(|i| i < n).collect();
    AttackModel::fit(&features, &labels)
}

/// Fraction of `forget` rows the attack labels as members.
pub fn mia_success(attack: &AttackModel, model: &Mlp, forget: &Dataset) -> Result<f64> {
    require_rows(&forget.x, "unlearning set")?;
    let f = entropy_feature(model, &forget.x)?;
    Ok(f.iter().filter(|&&v| attack.is_member(v)).count() as f64 / f.len() as f64)
}

/// Runs `procedure` and returns its result with the elapsed monotonic time in seconds.
pub fn measure_wall_time<T>(procedure: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = procedure();
    (out, start.elapsed().as_secs_f64())
}

/// Subset names in report and CSV order.
pub const SUBSETS: [&str; 5] = ["d_r", "d_f", "d_t", "d_rt", "d_ft"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetMetrics {
    pub accuracy: f64,
    /// Against the retrained model.
    pub activation_distance: Option<f64>,
    /// Against the original model.
    pub feature_distance_def1: f64,
    /// Against the retrained model.
    pub feature_distance_def2: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub seed: u64,
    pub config_hash: String,
    pub subsets: BTreeMap<String, SubsetMetrics>,
    pub mia_success: f64,
    /// Set when the attack feature had no variance; `mia_success` is then 0.5.
    pub mia_degenerate: bool,
    /// Run metadata, excluded from the content hash.
    pub wall_time_seconds: f64,
}

/// Hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Serialize, Deserialize)]
struct ReportFile {
    content_hash: String,
    report: MetricsReport,
}

impl MetricsReport {
    pub fn subset(&self, name: &str) -> Option<&SubsetMetrics> {
        self.subsets.get(name)
    }

    /// Hash of everything except timing.
    pub fn content_hash(&self) -> Result<String> {
        let content = MetricsReport {
            wall_time_seconds: 0.0,
            ..self.clone()
        };
        Ok(sha256_hex(serde_json::to_string(&content)?.as_bytes()))
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ReportFile {
            content_hash: self.content_hash()?,
            report: self.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ReportFile = serde_json::from_str(text)?;
        if file.content_hash != file.report.content_hash()? {
            return Err(Error::format("report content hash does not match its contents", None));
        }
        Ok(file.report)
    }

    pub fn csv_header() -> Vec<String> {
        let mut h: Vec<String> = ["method", "seed", "config_hash"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for s in SUBSETS {
            for m in [
                "accuracy",
                "activation_distance",
                "feature_distance_def1",
                "feature_distance_def2",
            ] {
                h.push(format!("{s}_{m}"));
            }
        }
        h.extend(["mia_success", "mia_degenerate", "wall_time_seconds", "content_hash"].map(String::from));
        h
    }

    pub fn csv_record(&self) -> Result<Vec<String>> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut r = vec![self.method.clone(), self.seed.to_string(), self.config_hash.clone()];
        for s in SUBSETS {
            match self.subsets.get(s) {
                Some(m) => r.extend([
                    m.accuracy.to_string(),
                    opt(m.activation_distance),
                    m.feature_distance_def1.to_string(),
                    opt(m.feature_distance_def2),
                ]),
                None => r.extend(std::iter::repeat_n(String::new(), 4)),
            }
        }
        r.extend([
            self.mia_success.to_string(),
            self.mia_degenerate.to_string(),
            self.wall_time_seconds.to_string(),
            self.content_hash()?,
        ]);
        Ok(r)
    }

    /// Header plus one row per report.
    pub fn to_csv(reports: &[MetricsReport]) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::format(e.to_string(), None);
        w.write_record(Self::csv_header()).map_err(io)?;
        for r in reports {
            w.write_record(r.csv_record()?).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::format(e.to_string(), None))?;
        String::from_utf8(bytes).map_err(|e| Error::format(e.to_string(), None))
    }
}

/// Everything a report is measured against.
#[derive(Clone, Copy, Debug)]
pub struct EvalContext<'a> {
    pub split: &'a UnlearningSplit,
    /// Full test set.
    pub test: &'a Dataset,
    pub original: &'a Mlp,
    pub retrained: Option<&'a Mlp>,
    /// Layers compared by the feature distances.
    pub layers: &'a [usize],
    pub attack_seed: u64,
}

impl EvalContext<'_> {
    /// Named subsets present for this split.
    pub fn subsets(&self) -> Vec<(&'static str, &Dataset)> {
        let mut v = vec![
            ("d_r", &self.split.retained),
            ("d_f", &self.split.forget),
            ("d_t", self.test),
        ];
        if let Some(rt) = &self.split.test_retained {
            v.push(("d_rt", rt));
        }
        if let Some(ft) = &self.split.test_forget {
            v.push(("d_ft", ft));
        }
        v
    }

    /// Non-members for the attack: the whole test set.
    pub fn non_members(&self) -> &Dataset {
        self.test
    }
}

/// Full metric grid for `model`.
pub fn evaluate(
    model: &Mlp,
    ctx: &EvalContext<'_>,
    method: &str,
    seed: u64,
    config_hash: &str,
    wall_time_seconds: f64,
) -> Result<MetricsReport> {
    let mut subsets = BTreeMap::new();
    for (name, d) in ctx.subsets() {
        if d.is_empty() {
            continue;
        }
        let m = SubsetMetrics {
            accuracy: accuracy(model, d)?,
            activation_distance: ctx.retrained.map(|r| activation_distance(model, r, &d.x)).transpose()?,
            feature_distance_def1: feature_distance(model, ctx.original, &d.x, ctx.layers)?,
            feature_distance_def2: ctx
                .retrained
                .map(|r| feature_distance(model, r, &d.x, ctx.layers))
                .transpose()?,
        };
        subsets.insert(name.to_string(), m);
    }
    let mut rng = Rng::new(ctx.attack_seed).fork("attack");
    let (mia, degenerate) = match train_attack(model, ctx.non_members(), &ctx.split.retained, &mut rng) {
        Ok(attack) => (mia_success(&attack, model, &ctx.split.forget)?, false),
        Err(Error::DegenerateFeature(msg)) => {
            log::warn!("membership attack degenerate: {msg}; reporting 0.5");
            (0.5, true)
        }
        Err(e) => return Err(e),
    };
    Ok(MetricsReport {
        method: method.to_string(),
        seed,
        config_hash: config_hash.to_string(),
        subsets,
        mia_success: mia,
        mia_degenerate: degenerate,
        wall_time_seconds,
    })
}
