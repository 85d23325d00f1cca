//! End-to-end pipelines behind the command-line tool.
//!
//! Configuration is JSON. Values resolve as command-line override, then
//! config file, then [`ExperimentConfig::default`], which is the desk-scale
//! synthetic benchmark. Component seeds (split, unlearning, baselines,
//! attack) are all derived from the top-level `seed`.
//!
//! Everything a command writes lands under `out`:
//!
//! ```text
//! data/{train,test}.csv, data/manifest.json
//! models/<name>.json            original, rfau, retrain, finetune, neggrad, badt
//! models/rfau.adapters.json     base weights plus trained adapters
//! logs/<name>.jsonl
//! runs/<name>.json              wall time (not content-hashed)
//! reports/<name>.json, reports/metrics.csv
//! ablation/gamma.{json,csv}
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::baselines::{retrain, run_baseline, BaselineMethod, BaselineSpec};
use crate::data::{
    gen_gaussian_clusters, load_csv, load_idx, split_unlearning, write_csv, Dataset, GaussianSpec, SplitMode,
    SplitSpec, UnlearningSplit,
};
use crate::error::{Error, Result};
use crate::eval::{accuracy, evaluate, feature_distance, measure_wall_time, sha256_hex, EvalContext, MetricsReport};
use crate::model::{Checkpoint, CheckpointMeta, Mlp, TrainConfig};
use crate::numerics::{derive_seed, Rng};
use crate::unlearn::{run_unlearning, write_jsonl, UnlearnConfig};

/// Name under which the residual-alignment result is stored.
pub const METHOD_NAME: &str = "rfau";
pub const ORIGINAL_NAME: &str = "original";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DataSource {
    Synthetic(GaussianSpec),
    Csv {
        train: PathBuf,
        test: PathBuf,
        #[serde(default)]
        classes: Option<usize>,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default = "ten")]
        classes: usize,
        #[serde(default)]
        train_subsample: Option<usize>,
        #[serde(default)]
        test_subsample: Option<usize>,
    },
}

fn ten() -> usize {
    10
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Layers compared by the feature distances; `None` means every hidden layer.
    pub layers: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub gammas: Vec<f64>,
    /// Worker threads; 0 runs one thread per γ.
    pub threads: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            gammas: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            threads: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataSource,
    /// Hidden widths; input and output widths come from the data.
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    pub unlearn: UnlearnConfig,
    pub split: SplitSpec,
    pub baselines: Vec<BaselineSpec>,
    pub eval: EvalConfig,
    pub ablation: AblationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        // retrain follows `train` unless listed here
        let baselines = BaselineMethod::ALL
            .into_iter()
            .filter(|&m| m != BaselineMethod::Retrain)
            .map(BaselineSpec::new)
            .collect();
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            data: DataSource::Synthetic(GaussianSpec::default()),
            hidden: vec![32, 32],
            train,
            unlearn: UnlearnConfig {
                rank: 2,
                lr: 1e-2,
                batch: 32,
                ..UnlearnConfig::default()
            },
            split: SplitSpec::default(),
            baselines,
            eval: EvalConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

fn merge_json(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    // switching the data source replaces the whole section
                    Some(slot) if k != "data" || slot.get("source") == v.get("source") => merge_json(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, p) => *slot = p,
    }
}

/// A `path=value` override. The value is parsed as JSON when possible and
/// taken as a string otherwise; kebab-case path segments are accepted.
pub fn parse_override(text: &str) -> Result<(String, Value)> {
    let (path, raw) = text
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override {text:?} is not of the form path=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((path.trim().replace('-', "_"), value))
}

fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::config(format!("override path {path:?} descends into a non-object")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

impl ExperimentConfig {
    /// Resolves defaults, an optional config file and overrides (applied in order).
    pub fn load(file: Option<&Path>, overrides: &[(String, Value)]) -> Result<Self> {
        let mut value = serde_json::to_value(Self::default())?;
        if let Some(path) = file {
            let text = fs::read_to_string(path)?;
            let patch: Value = serde_json::from_str(&text)
                .map_err(|e| Error::config(format!("config file {}: {e}", path.display())))?;
            if !patch.is_object() {
                return Err(Error::config(format!(
                    "config file {} must hold a JSON object",
                    path.display()
                )));
            }
            merge_json(&mut value, patch);
        }
        for (path, v) in overrides {
            set_path(&mut value, path, v.clone())?;
        }
        let cfg: Self =
            serde_json::from_value(value).map_err(|e| Error::config(format!("invalid configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let classes = match &self.data {
            DataSource::Synthetic(g) => {
                v.extend(g.violations().into_iter().map(|m| format!("data: {m}")));
                Some(g.classes)
            }
            DataSource::Csv { classes, .. } => *classes,
            DataSource::Idx { classes, .. } => Some(*classes),
        };
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            v.push(format!(
                "hidden widths must be non-empty and positive, got {:?}",
                self.hidden
            ));
        }
        v.extend(self.train.violations("train"));
        v.extend(self.unlearn.violations("unlearn"));
        match self.split.mode {
            SplitMode::Class => {
                if let Some(k) = classes {
                    if self.split.class_id >= k {
                        v.push(format!(
                            "split.class_id {} must be below the class count {k}",
                            self.split.class_id
                        ));
                    }
                }
            }
            SplitMode::Sample if self.split.n_f == 0 => v.push("split.n_f must be at least 1".into()),
            SplitMode::Sample => {}
        }
        for b in &self.baselines {
            v.extend(b.violations(&format!("baselines.{}", b.method)));
        }
        if self.ablation.gammas.is_empty() {
            v.push("ablation.gammas must not be empty".into());
        }
        for g in &self.ablation.gammas {
            if !(0.0..=1.0).contains(g) {
                v.push(format!("ablation.gammas entry {g} is outside [0, 1]"));
            }
        }
        v
    }

    /// Reports every violation at once.
    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::config(v.join("; ")))
        }
    }

    /// Hash of the configuration with the output directory blanked.
    pub fn config_hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.out = PathBuf::new();
        Ok(sha256_hex(serde_json::to_string(&c)?.as_bytes()))
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    pub fn model_path(&self, name: &str) -> PathBuf {
        self.path(&format!("models/{name}.json"))
    }

    /// Unlearning config with its seed derived from the top-level seed.
    pub fn unlearn_config(&self) -> UnlearnConfig {
        UnlearnConfig {
            seed: derive_seed(self.seed, "unlearn"),
            ..self.unlearn.clone()
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            seed: derive_seed(self.seed, "split"),
            ..self.split.clone()
        }
    }

    /// The configured spec for `method`, seeded from the top-level seed.
    /// Retrain defaults to [`Self::original_spec`]; the others to
    /// [`BaselineSpec::new`].
    pub fn baseline_spec(&self, method: BaselineMethod) -> BaselineSpec {
        let configured = self.baselines.iter().find(|b| b.method == method).cloned();
        match method {
            BaselineMethod::Retrain => configured
                .map(|s| s.with_seed(derive_seed(self.seed, TRAINING_STREAM)))
                .unwrap_or_else(|| self.original_spec()),
            _ => configured
                .unwrap_or_else(|| BaselineSpec::new(method))
                .with_seed(derive_seed(self.seed, method.name())),
        }
    }

    /// The original model's training run: the retrain procedure on the full
    /// training set with the same seed, so the retrained model differs from
    /// the original only by the absence of the unlearning set.
    pub fn original_spec(&self) -> BaselineSpec {
        BaselineSpec {
            epochs: self.train.epochs,
            lr: self.train.lr,
            batch: self.train.batch,
            optimizer: self.train.optimizer,
            weight_decay: self.train.weight_decay,
            ..BaselineSpec::new(BaselineMethod::Retrain)
        }
        .with_seed(derive_seed(self.seed, TRAINING_STREAM))
    }
}

const TRAINING_STREAM: &str = "training";

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataManifest {
    pub seed: u64,
    pub params: GaussianSpec,
    pub train_rows: usize,
    pub test_rows: usize,
    pub train_sha256: String,
    pub test_sha256: String,
}

/// Writes the synthetic train/test CSVs and their manifest.
pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<DataManifest> {
    let DataSource::Synthetic(spec) = &cfg.data else {
        return Err(Error::config("gen-data needs data.source = \"synthetic\""));
    };
    let (train, test) = gen_gaussian_clusters(spec, &mut Rng::new(cfg.seed).fork("data"))?;
    let (train_path, test_path) = (cfg.path("data/train.csv"), cfg.path("data/test.csv"));
    fs::create_dir_all(cfg.path("data"))?;
    write_csv(&train, &train_path)?;
    write_csv(&test, &test_path)?;
    let manifest = DataManifest {
        seed: cfg.seed,
        params: spec.clone(),
        train_rows: train.len(),
        test_rows: test.len(),
        train_sha256: sha256_hex(&fs::read(&train_path)?),
        test_sha256: sha256_hex(&fs::read(&test_path)?),
    };
    write_file(
        &cfg.path("data/manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    log::info!(
        "wrote {} train and {} test rows to {}",
        train.len(),
        test.len(),
        cfg.path("data").display()
    );
    Ok(manifest)
}

fn require_file(path: &Path, hint: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} not found ({hint})", path.display()),
        )))
    }
}

/// Train and test sets named by the configuration.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match &cfg.data {
        DataSource::Synthetic(spec) => {
            let (tr, te) = (cfg.path("data/train.csv"), cfg.path("data/test.csv"));
            require_file(&tr, "run gen-data first")?;
            require_file(&te, "run gen-data first")?;
            Ok((load_csv(tr, Some(spec.classes))?, load_csv(te, Some(spec.classes))?))
        }
        DataSource::Csv { train, test, classes } => {
            let train = load_csv(train, *classes)?;
            let test = load_csv(test, Some(train.classes))?;
            Ok((train, test))
        }
        DataSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            classes,
            train_subsample,
            test_subsample,
        } => {
            let rng = Rng::new(cfg.seed);
            Ok((
                load_idx(
                    train_images,
                    train_labels,
                    *classes,
                    *train_subsample,
                    &mut rng.fork("idx-train"),
                )?,
                load_idx(
                    test_images,
                    test_labels,
                    *classes,
                    *test_subsample,
                    &mut rng.fork("idx-test"),
                )?,
            ))
        }
    }
}

pub fn load_split(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset, UnlearningSplit)> {
    let (train, test) = load_data(cfg)?;
    let split = split_unlearning(&train, Some(&test), &cfg.split_spec())?;
    Ok((train, test, split))
}

pub fn widths_for(cfg: &ExperimentConfig, data: &Dataset) -> Vec<usize> {
    let mut w = vec![data.dim()];
    w.extend(&cfg.hidden);
    w.push(data.classes);
    w
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: String,
    pub wall_time_seconds: f64,
}

fn write_run(cfg: &ExperimentConfig, name: &str, seconds: f64) -> Result<()> {
    let r = RunRecord {
        method: name.to_string(),
        wall_time_seconds: seconds,
    };
    write_file(
        &cfg.path(&format!("runs/{name}.json")),
        serde_json::to_string_pretty(&r)? + "\n",
    )
}

/// Wall time recorded for `name`, if any.
pub fn read_run(cfg: &ExperimentConfig, name: &str) -> Option<f64> {
    let text = fs::read_to_string(cfg.path(&format!("runs/{name}.json"))).ok()?;
    serde_json::from_str::<RunRecord>(&text)
        .ok()
        .map(|r| r.wall_time_seconds)
}

/// Trains the original model.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<Checkpoint> {
    let (train, test) = load_data(cfg)?;
    let (res, seconds) = measure_wall_time(|| retrain(&train, &widths_for(cfg, &train), &cfg.original_spec()));
    let (model, log) = res?;
    log::info!(
        "original model: train accuracy {:.4}, test accuracy {:.4}",
        accuracy(&model, &train)?,
        accuracy(&model, &test)?
    );
    let ck = Checkpoint::new(
        model,
        CheckpointMeta {
            seed: cfg.seed,
            epochs: cfg.train.epochs,
            method: ORIGINAL_NAME.into(),
        },
    );
    write_file(&cfg.model_path(ORIGINAL_NAME), ck.to_json()?)?;
    write_file(&cfg.path("logs/original.jsonl"), write_jsonl(&log)?)?;
    write_run(cfg, ORIGINAL_NAME, seconds)?;
    Ok(ck)
}

pub fn load_model(cfg: &ExperimentConfig, name: &str) -> Result<Checkpoint> {
    let path = cfg.model_path(name);
    require_file(&path, "run the command that produces it first")?;
    Checkpoint::load(path)
}

/// Runs residual feature alignment unlearning on the original model.
pub fn cmd_unlearn(cfg: &ExperimentConfig) -> Result<Checkpoint> {
    let original = load_model(cfg, ORIGINAL_NAME)?;
    let (_, test, split) = load_split(cfg)?;
    let ucfg = cfg.unlearn_config();
    let (res, seconds) = measure_wall_time(|| run_unlearning(&original.model, &split.retained, &split.forget, &ucfg));
    let res = res?;
    let meta = CheckpointMeta {
        seed: ucfg.seed,
        epochs: ucfg.epochs,
        method: METHOD_NAME.into(),
    };
    let ck = Checkpoint::new(res.model, meta.clone());
    write_file(&cfg.model_path(METHOD_NAME), ck.to_json()?)?;
    write_file(
        &cfg.path(&format!("models/{METHOD_NAME}.adapters.json")),
        res.instrumented.to_checkpoint(meta).to_json()?,
    )?;
    write_file(&cfg.path(&format!("logs/{METHOD_NAME}.jsonl")), write_jsonl(&res.log)?)?;
    write_run(cfg, METHOD_NAME, seconds)?;
    log::info!(
        "unlearned in {seconds:.3}s: D_f accuracy {:.4}, D_r accuracy {:.4}, D_t accuracy {:.4}",
        accuracy(&ck.model, &split.forget)?,
        accuracy(&ck.model, &split.retained)?,
        accuracy(&ck.model, &test)?
    );
    Ok(ck)
}

/// Runs one baseline from the original model.
pub fn cmd_baseline(cfg: &ExperimentConfig, method: &str) -> Result<Checkpoint> {
    let method: BaselineMethod = method.parse()?;
    let original = load_model(cfg, ORIGINAL_NAME)?;
    let (_, _, split) = load_split(cfg)?;
    let spec = cfg.baseline_spec(method);
    let (out, seconds) = measure_wall_time(|| run_baseline(&original, &split.retained, &split.forget, &spec));
    let out = out?;
    let name = method.name();
    write_file(&cfg.model_path(name), out.checkpoint.to_json()?)?;
    write_file(&cfg.path(&format!("logs/{name}.jsonl")), write_jsonl(&out.log)?)?;
    write_run(cfg, name, seconds)?;
    log::info!("{name} finished in {seconds:.3}s");
    Ok(out.checkpoint)
}

/// Model names with a checkpoint under `models/`, in sorted order.
pub fn available_models(cfg: &ExperimentConfig) -> Result<Vec<String>> {
    let dir = cfg.path("models");
    let mut names = Vec::new();
    for entry in fs::read_dir(&dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_suffix(".json") {
            if !stem.ends_with(".adapters") {
                names.push(stem.to_string());
            }
        }
    }
    names.sort();
    Ok(names)
}

/// Evaluates the named models (all available ones when empty) against the
/// original and, when present, the retrained model.
pub fn cmd_eval(cfg: &ExperimentConfig, names: &[String]) -> Result<Vec<MetricsReport>> {
    let names = if names.is_empty() {
        available_models(cfg)?
    } else {
        names.to_vec()
    };
    let original = load_model(cfg, ORIGINAL_NAME)?.model;
    let retrain_name = BaselineMethod::Retrain.name();
    let retrained = if cfg.model_path(retrain_name).exists() {
        Some(load_model(cfg, retrain_name)?.model)
    } else {
        log::warn!("no retrained model; activation distance and feature distance (def. 2) left empty");
        None
    };
    let models: Vec<(String, Mlp)> = names
        .iter()
        .map(|n| Ok((n.clone(), load_model(cfg, n)?.model)))
        .collect::<Result<_>>()?;
    let reference = original.widths();
    for (n, m) in models.iter().chain(
        retrained
            .iter()
            .map(|r| (retrain_name.to_string(), r.clone()))
            .collect::<Vec<_>>()
            .iter(),
    ) {
        if m.widths() != reference {
            return Err(Error::shape(format!(
                "model {n:?} has widths {:?} but {ORIGINAL_NAME:?} has {reference:?}",
                m.widths()
            )));
        }
    }
    let (_, test, split) = load_split(cfg)?;
    let layers = cfg.eval.layers.clone().unwrap_or_else(|| original.hidden_layer_ids());
    let ctx = EvalContext {
        split: &split,
        test: &test,
        original: &original,
        retrained: retrained.as_ref(),
        layers: &layers,
        attack_seed: derive_seed(cfg.seed, "attack"),
    };
    let hash = cfg.config_hash()?;
    let mut reports = Vec::with_capacity(models.len());
    for (name, model) in &models {
        let wall = read_run(cfg, name).unwrap_or(0.0);
        let report = evaluate(model, &ctx, name, cfg.seed, &hash, wall)?;
        write_file(&cfg.path(&format!("reports/{name}.json")), report.to_json()?)?;
        reports.push(report);
    }
    write_file(&cfg.path("reports/metrics.csv"), MetricsReport::to_csv(&reports)?)?;
    Ok(reports)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSubset {
    pub accuracy: f64,
    pub feature_distance_def1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub gamma: f64,
    pub subsets: BTreeMap<String, AblationSubset>,
}

impl AblationRow {
    pub fn subset(&self, name: &str) -> Option<&AblationSubset> {
        self.subsets.get(name)
    }
}

fn ablation_point(
    original: &Mlp,
    ucfg: &UnlearnConfig,
    gamma: f64,
    subsets: &[(&'static str, &Dataset)],
    split: &UnlearningSplit,
    layers: &[usize],
) -> Result<AblationRow> {
    let cfg = UnlearnConfig { gamma, ..ucfg.clone() };
    let model = run_unlearning(original, &split.retained, &split.forget, &cfg)?.model;
    let mut out = BTreeMap::new();
    for (name, d) in subsets {
        if d.is_empty() {
            continue;
        }
        out.insert(
            name.to_string(),
            AblationSubset {
                accuracy: accuracy(&model, d)?,
                feature_distance_def1: feature_distance(&model, original, &d.x, layers)?,
            },
        );
    }
    Ok(AblationRow { gamma, subsets: out })
}

/// Unlearns once per γ (same seed for every point) and tabulates accuracy
/// and feature distance to the original per subset.
pub fn cmd_ablate_gamma(cfg: &ExperimentConfig, gammas: &[f64]) -> Result<Vec<AblationRow>> {
    if gammas.is_empty() {
        return Err(Error::config("no γ values given"));
    }
    if let Some(g) = gammas.iter().find(|g| !(0.0..=1.0).contains(*g)) {
        return Err(Error::config(format!("γ = {g} is outside [0, 1]")));
    }
    let original = load_model(cfg, ORIGINAL_NAME)?.model;
    let (_, test, split) = load_split(cfg)?;
    let layers = cfg.eval.layers.clone().unwrap_or_else(|| original.hidden_layer_ids());
    let ctx = EvalContext {
        split: &split,
        test: &test,
        original: &original,
        retrained: None,
        layers: &layers,
        attack_seed: 0,
    };
    let subsets = ctx.subsets();
    let ucfg = cfg.unlearn_config();
    let threads = if cfg.ablation.threads == 0 {
        gammas.len()
    } else {
        cfg.ablation.threads
    };
    let mut rows: Vec<Option<Result<AblationRow>>> = (0..gammas.len()).map(|_| None).collect();
    for chunk in (0..gammas.len()).collect::<Vec<_>>().chunks(threads.max(1)) {
        std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&i| {
                    let (original, ucfg, subsets, split, layers) = (&original, &ucfg, &subsets, &split, &layers);
                    let g = gammas[i];
                    (
                        i,
                        s.spawn(move || ablation_point(original, ucfg, g, subsets, split, layers)),
                    )
                })
                .collect();
            for (i, h) in handles {
                rows[i] = Some(
                    h.join()
                        .unwrap_or_else(|_| Err(Error::Numeric("ablation worker panicked".into()))),
                );
            }
        });
    }
    let rows: Vec<AblationRow> = rows
        .into_iter()
        .map(|r| r.expect("every point ran"))
        .collect::<Result<_>>()?;
    write_file(
        &cfg.path("ablation/gamma.json"),
        serde_json::to_string_pretty(&rows)? + "\n",
    )?;
    write_file(&cfg.path("ablation/gamma.csv"), ablation_csv(&rows)?)?;
    Ok(rows)
}

fn ablation_csv(rows: &[AblationRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::format(e.to_string(), None);
    let names: Vec<&str> = crate::eval::SUBSETS
        .iter()
        .copied()
        .filter(|s| rows.iter().any(|r| r.subsets.contains_key(*s)))
        .collect();
    let mut header = vec!["gamma".to_string()];
    for n in &names {
        header.push(format!("{n}_accuracy"));
        header.push(format!("{n}_feature_distance_def1"));
    }
    w.write_record(&header).map_err(err)?;
    for r in rows {
        let mut rec = vec![r.gamma.to_string()];
        for n in &names {
            match r.subsets.get(*n) {
                Some(s) => rec.extend([s.accuracy.to_string(), s.feature_distance_def1.to_string()]),
                None => rec.extend([String::new(), String::new()]),
            }
        }
        w.write_record(&rec).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format(e.to_string(), None))?;
    String::from_utf8(bytes).map_err(|e| Error::format(e.to_string(), None))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg_in(dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            out: dir.to_path_buf(),
            data: DataSource::Synthetic(GaussianSpec {
                per_class: 60,
                ..Default::default()
            }),
            hidden: vec![8, 8],
            train: TrainConfig {
                epochs: 5,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn precedence_flag_over_file_over_default() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.json");
        fs::write(&file, r#"{"unlearn": {"gamma": 0.2, "lr": 0.5}, "seed": 3}"#).unwrap();
        let cfg = ExperimentConfig::load(Some(&file), &[parse_override("unlearn.gamma=0.7").unwrap()]).unwrap();
        assert_eq!(cfg.unlearn.gamma, 0.7);
        assert_eq!(cfg.unlearn.lr, 0.5);
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.unlearn.rank, ExperimentConfig::default().unlearn.rank);
    }

    #[test]
    fn all_violations_reported_together() {
        let o = |s: &str| parse_override(s).unwrap();
        let err = ExperimentConfig::load(
            None,
            &[o("unlearn.gamma=2"), o("data.classes=1"), o("ablation.gammas=[1.5]")],
        )
        .unwrap_err();
        let msg = err.to_string();
        assert_eq!(err.exit_code(), 2);
        assert!(
            msg.contains("gamma") && msg.contains("classes") && msg.contains("1.5"),
            "{msg}"
        );
    }

    #[test]
    fn switching_source_replaces_data_section() {
        let o = parse_override(r#"data={"source":"csv","train":"a.csv","test":"b.csv"}"#).unwrap();
        let cfg = ExperimentConfig::load(None, &[o]).unwrap();
        assert!(matches!(cfg.data, DataSource::Csv { .. }));
        assert!(matches!(load_data(&cfg), Err(Error::Io(_))));
    }

    #[test]
    fn kebab_paths_and_strings() {
        let (p, v) = parse_override("unlearn.lora-scale=2").unwrap();
        assert_eq!(p, "unlearn.lora_scale");
        assert_eq!(v, Value::from(2));
        let (_, v) = parse_override("unlearn.mode=teacher").unwrap();
        assert_eq!(v, Value::String("teacher".into()));
        assert!(parse_override("nonsense").is_err());
    }

    #[test]
    fn gen_data_is_byte_identical_on_rerun() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = cfg_in(dir.path());
        let m1 = cmd_gen_data(&cfg).unwrap();
        let first = fs::read(cfg.path("data/train.csv")).unwrap();
        let m2 = cmd_gen_data(&cfg).unwrap();
        assert_eq!(first, fs::read(cfg.path("data/train.csv")).unwrap());
        assert_eq!(m1, m2);
        assert_eq!(
            m1.params,
            GaussianSpec {
                per_class: 60,
                ..Default::default()
            }
        );
    }

    #[test]
    fn pipeline_without_data_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = cmd_train(&cfg_in(dir.path())).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn zero_epoch_training_keeps_init() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = cfg_in(dir.path());
        cfg.train.epochs = 0;
        cmd_gen_data(&cfg).unwrap();
        let ck = cmd_train(&cfg).unwrap();
        let init = crate::model::mlp_init(
            &[2, 8, 8, 3],
            &mut Rng::new(cfg.original_spec().seed).fork("retrain-init"),
        )
        .unwrap();
        assert_eq!(ck.model, init);
    }

    #[test]
    fn retrain_on_everything_reproduces_the_original() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = cfg_in(dir.path());
        cmd_gen_data(&cfg).unwrap();
        let original = cmd_train(&cfg).unwrap();
        let (train, _) = load_data(&cfg).unwrap();
        let (m, _) = retrain(
            &train,
            &original.model.widths(),
            &cfg.baseline_spec(BaselineMethod::Retrain),
        )
        .unwrap();
        assert_eq!(m, original.model);
    }

    #[test]
    fn unknown_baseline_lists_valid_names() {
        let dir = tempfile::tempdir().unwrap();
        let err = cmd_baseline(&cfg_in(dir.path()), "scrub").unwrap_err().to_string();
        assert!(err.contains("retrain") && err.contains("badt"), "{err}");
    }

    #[test]
    fn ablation_rejects_out_of_range_gamma() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            cmd_ablate_gamma(&cfg_in(dir.path()), &[0.5, 1.2]),
            Err(Error::Config(_))
        ));
    }
}
