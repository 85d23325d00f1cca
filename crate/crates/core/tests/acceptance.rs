//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails. Run with `cargo test --test acceptance`.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rfau::data::{BatchSplit, SplitMode};
use rfau::eval::MetricsReport;
use rfau::experiment::{
    cmd_ablate_gamma, cmd_baseline, cmd_eval, cmd_gen_data, cmd_train, cmd_unlearn, load_model, load_split, read_run,
    ExperimentConfig, METHOD_NAME, ORIGINAL_NAME,
};
use rfau::lora::{attach, InstrumentedModel};
use rfau::model::mlp_init;
use rfau::numerics::{Matrix, Rng};
use rfau::unlearn::{
    batch_targets, loss_inter, loss_inter_teacher, objective_residual, run_unlearning, LossMode, UnlearnConfig,
};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

// criterion 1
const STEP0_TOL: f64 = 1e-12;
const STEP0_INPUTS: usize = 1000;
// criterion 2
const MERGE_TOL: f64 = 1e-9;
const MERGE_INPUTS: usize = 100;
// criterion 3
const REFORM_TOL: f64 = 1e-9;
const REFORM_CONFIGS: usize = 100;
// criterion 4
const GRAD_TOL: f64 = 1e-4;
const GRAD_POINTS: usize = 3;
// criterion 5
const CLASS_FORGET_MAX: f64 = 0.05;
const CLASS_DR_DROP: f64 = 0.02;
const CLASS_DRT_DROP: f64 = 0.03;
// criterion 6
const SAMPLE_NF: usize = 32;
const SAMPLE_DT_TOL: f64 = 0.02;
const SAMPLE_DF_TOL: f64 = 0.05;
// criterion 7
const MIA_ORIGINAL_MIN: f64 = 0.8;
const MIA_OURS_MAX: f64 = 0.2;
const MIA_RETRAIN_MAX: f64 = 0.3;
// criterion 9
const GAMMAS: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
const SPEARMAN_MAX: f64 = -0.7;
const GAMMA_ACC_SPREAD: f64 = 0.03;
// criterion 10
const TIME_RATIO_MAX: f64 = 0.25;

type Check = Result<(bool, String), String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Check + 'a>);

fn main() {
    let base = tempfile::tempdir().expect("temporary directory");
    let class_runs = benchmark_runs(base.path(), SplitMode::Class);
    let sample_runs = benchmark_runs(base.path(), SplitMode::Sample);

    let criteria: Vec<Criterion> = vec![
        ("step-0 identity", Box::new(step_zero_identity)),
        ("merge equivalence", Box::new(merge_equivalence)),
        (
            "loss reformulation identity",
            Box::new(|| loss_reformulation(base.path())),
        ),
        ("adapter gradient check", Box::new(gradient_check)),
        ("class unlearning efficacy", Box::new(|| class_efficacy(&class_runs))),
        ("sample unlearning utility", Box::new(|| sample_utility(&sample_runs))),
        ("membership inference", Box::new(|| membership(&class_runs))),
        (
            "feature distance ordering",
            Box::new(|| feature_ordering(&class_runs, &sample_runs)),
        ),
        ("gamma ablation trend", Box::new(|| gamma_trend(base.path()))),
        ("efficiency", Box::new(|| efficiency(&class_runs))),
        ("reproducibility", Box::new(|| reproducibility(base.path()))),
    ];

    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        let (pass, detail) = check().unwrap_or_else(|e| (false, format!("error: {e}")));
        println!(
            "criterion {n:>2} {:<4} {name}: {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
        if !pass {
            failed.push(n);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 11 criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn fmt_list(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3}")).collect();
    format!("[{}]", parts.join(", "))
}

fn random_matrix(rng: &mut Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.normal(0.0, std)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn randomize_adapters(im: &mut InstrumentedModel, rng: &mut Rng, std: f64) {
    let flat: Vec<f64> = (0..im.adapter_flat().len()).map(|_| rng.normal(0.0, std)).collect();
    im.set_adapter_flat(&flat).unwrap();
}

fn step_zero_identity() -> Check {
    let start = Instant::now();
    let mut rng = Rng::new(101);
    let x = random_matrix(&mut rng, STEP0_INPUTS, 2, 3.0);
    let mut worst: f64 = 0.0;
    for widths in [vec![2, 32, 32, 3], vec![2, 8, 8, 3], vec![2, 16, 3]] {
        let base = mlp_init(&widths, &mut rng).map_err(err)?;
        let reference = base.logits(&x).map_err(err)?;
        let all: Vec<usize> = (0..base.num_layers()).collect();
        for layers in [base.hidden_layer_ids(), all] {
            let im = attach(&base, &layers, 2, &mut rng, rfau::lora::DEFAULT_A_INIT_STD).map_err(err)?;
            let (out, _) = im.forward_student(&x).map_err(err)?;
            worst = worst.max(out.max_abs_diff(&reference));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        worst <= STEP0_TOL && secs < 1.0,
        format!("max |adapted - original| = {worst:.3e} (tol {STEP0_TOL:e}) over {STEP0_INPUTS} inputs, {secs:.3}s (limit 1s)"),
    ))
}

fn merge_equivalence() -> Check {
    let start = Instant::now();
    let mut rng = Rng::new(202);
    let x = random_matrix(&mut rng, MERGE_INPUTS, 2, 3.0);
    let mut worst: f64 = 0.0;
    for widths in [vec![2, 32, 32, 3], vec![2, 8, 8, 3]] {
        let base = mlp_init(&widths, &mut rng).map_err(err)?;
        let all: Vec<usize> = (0..base.num_layers()).collect();
        let mut im = attach(&base, &all, 2, &mut rng, 0.01).map_err(err)?;
        randomize_adapters(&mut im, &mut rng, 0.3);
        let (decomposed, _) = im.forward_decomposed(&x).map_err(err)?;
        let merged = im.merge().map_err(err)?.logits(&x).map_err(err)?;
        worst = worst.max(merged.max_abs_diff(&decomposed));
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        worst <= MERGE_TOL && secs < 1.0,
        format!("max |merged - decomposed| = {worst:.3e} (tol {MERGE_TOL:e}) over {MERGE_INPUTS} inputs, {secs:.3}s (limit 1s)"),
    ))
}

fn random_batch(rng: &mut Rng, rows: usize, dim: usize, classes: usize) -> BatchSplit {
    let x = random_matrix(rng, rows, dim, 2.0);
    let mut y = Matrix::zeros(rows, classes);
    let mut retained: Vec<bool> = (0..rows).map(|_| rng.uniform() < 0.6).collect();
    retained[0] = true;
    for i in 0..rows {
        y.set(i, rng.below(classes), 1.0);
    }
    BatchSplit {
        x,
        y,
        retained,
        source: (0..rows).collect(),
    }
}

fn loss_reformulation(dir: &Path) -> Check {
    let mut rng = Rng::new(303);
    let mut worst: f64 = 0.0;
    for _ in 0..REFORM_CONFIGS {
        let (d, h1, h2, c) = (2 + rng.below(4), 3 + rng.below(10), 3 + rng.below(10), 2 + rng.below(4));
        let base = mlp_init(&[d, h1, h2, c], &mut rng).map_err(err)?;
        let mut layers: Vec<usize> = (0..3).filter(|_| rng.uniform() < 0.5).collect();
        if layers.is_empty() {
            layers.push(rng.below(3));
        }
        let rank = 1 + rng.below(2);
        let mut im = attach(&base, &layers, rank, &mut rng, 0.01).map_err(err)?;
        randomize_adapters(&mut im, &mut rng, 0.2);
        let rows = 4 + rng.below(12);
        let batch = random_batch(&mut rng, rows, d, c);
        let (alpha, beta) = (rng.uniform() * 2.0, rng.uniform() * 2.0);
        let (_, tape) = im.forward_decomposed(&batch.x).map_err(err)?;
        let targets = batch_targets(&tape.pretrained, &layers, &batch)
            .map_err(err)?
            .expect("retained row present");
        let residual = loss_inter(&tape, &layers, &batch.retained, &targets.features, alpha, beta).map_err(err)?;
        let (_, teacher) = base.forward(&batch.x).map_err(err)?;
        let (_, student) = im.forward_student(&batch.x).map_err(err)?;
        let teacher_mode = loss_inter_teacher(
            &student.sums,
            &teacher.pre,
            &layers,
            &batch.retained,
            &targets.features,
            alpha,
            beta,
        )
        .map_err(err)?;
        worst = worst
            .max((residual.retained - teacher_mode.retained).abs())
            .max((residual.forget - teacher_mode.forget).abs());
    }

    let cfg = bench_config(dir, "reform", 0, SplitMode::Class)?;
    cmd_gen_data(&cfg).map_err(err)?;
    let original = cmd_train(&cfg).map_err(err)?;
    let (_, _, split) = load_split(&cfg).map_err(err)?;
    let run = |mode| {
        let u = UnlearnConfig {
            mode,
            ..cfg.unlearn_config()
        };
        run_unlearning(&original.model, &split.retained, &split.forget, &u).map(|o| o.model.flat_params())
    };
    let a = run(LossMode::Residual).map_err(err)?;
    let b = run(LossMode::Teacher).map_err(err)?;
    let train_diff = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    Ok((
        worst <= REFORM_TOL && train_diff <= REFORM_TOL,
        format!(
            "max loss gap {worst:.3e} over {REFORM_CONFIGS} configs, residual vs teacher checkpoint gap {train_diff:.3e} (tol {REFORM_TOL:e})"
        ),
    ))
}

fn gradient_check() -> Check {
    let start = Instant::now();
    let mut rng = Rng::new(404);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let cfg = UnlearnConfig {
        alpha: 0.7,
        beta: 1.3,
        lambda: 0.9,
        mu: 1.1,
        gamma: 0.5,
        ..UnlearnConfig::default()
    };
    for _ in 0..GRAD_POINTS {
        let base = mlp_init(&[2, 8, 8, 3], &mut rng).map_err(err)?;
        let mut im = attach(&base, &[0, 1, 2], 2, &mut rng, 0.01).map_err(err)?;
        randomize_adapters(&mut im, &mut rng, 0.3);
        let batch = random_batch(&mut rng, 10, 2, 3);
        let (_, tape) = im.forward_decomposed(&batch.x).map_err(err)?;
        let targets = batch_targets(&tape.pretrained, &im.layer_ids(), &batch)
            .map_err(err)?
            .expect("retained row");
        let (_, grads) = objective_residual(&im, &batch, &targets, &cfg).map_err(err)?;
        let analytic = grads.flat();
        let theta = im.adapter_flat();
        let h = 1e-5;
        for j in 0..theta.len() {
            let mut probe = im.clone();
            let eval = |probe: &mut InstrumentedModel, v: f64| -> Result<f64, String> {
                let mut t = theta.clone();
                t[j] = v;
                probe.set_adapter_flat(&t).map_err(err)?;
                Ok(objective_residual(probe, &batch, &targets, &cfg).map_err(err)?.0.total)
            };
            let numeric = (eval(&mut probe, theta[j] + h)? - eval(&mut probe, theta[j] - h)?) / (2.0 * h);
            let rel = (analytic[j] - numeric).abs() / analytic[j].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        worst <= GRAD_TOL && secs < 30.0,
        format!(
            "max relative error {worst:.3e} (tol {GRAD_TOL:e}) over {checked} A/B parameters, {secs:.2}s (limit 30s)"
        ),
    ))
}

fn bench_config(dir: &Path, tag: &str, seed: u64, mode: SplitMode) -> Result<ExperimentConfig, String> {
    let mode = match mode {
        SplitMode::Class => "class",
        SplitMode::Sample => "sample",
    };
    let out = dir.join(format!("{tag}-{mode}-{seed}"));
    let overrides = vec![
        ("seed".to_string(), seed.into()),
        ("out".to_string(), out.to_string_lossy().into_owned().into()),
        ("split.mode".to_string(), mode.into()),
        ("split.n_f".to_string(), SAMPLE_NF.into()),
    ];
    ExperimentConfig::load(None, &overrides).map_err(err)
}

/// One full benchmark pipeline.
struct BenchRun {
    reports: BTreeMap<String, MetricsReport>,
    unlearn_seconds: f64,
    retrain_seconds: f64,
    /// Unlearning plus evaluation of the unlearned model.
    ours_seconds: f64,
}

impl BenchRun {
    fn metric(
        &self,
        model: &str,
        subset: &str,
        f: impl Fn(&rfau::eval::SubsetMetrics) -> Option<f64>,
    ) -> Result<f64, String> {
        let r = self
            .reports
            .get(model)
            .ok_or_else(|| format!("no report for {model}"))?;
        r.subset(subset)
            .and_then(f)
            .ok_or_else(|| format!("{model} has no value for {subset}"))
    }

    fn acc(&self, model: &str, subset: &str) -> Result<f64, String> {
        self.metric(model, subset, |m| Some(m.accuracy))
    }

    fn fd2(&self, model: &str, subset: &str) -> Result<f64, String> {
        self.metric(model, subset, |m| m.feature_distance_def2)
    }

    fn mia(&self, model: &str) -> Result<f64, String> {
        self.reports
            .get(model)
            .map(|r| r.mia_success)
            .ok_or_else(|| format!("no report for {model}"))
    }
}

fn run_pipeline(cfg: &ExperimentConfig) -> Result<BenchRun, String> {
    cmd_gen_data(cfg).map_err(err)?;
    cmd_train(cfg).map_err(err)?;
    let start = Instant::now();
    cmd_unlearn(cfg).map_err(err)?;
    cmd_eval(cfg, &[METHOD_NAME.to_string()]).map_err(err)?;
    let ours_seconds = start.elapsed().as_secs_f64();
    for m in ["retrain", "badt"] {
        cmd_baseline(cfg, m).map_err(err)?;
    }
    let names: Vec<String> = [ORIGINAL_NAME, METHOD_NAME, "retrain", "badt"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let reports = cmd_eval(cfg, &names).map_err(err)?;
    Ok(BenchRun {
        reports: reports.into_iter().map(|r| (r.method.clone(), r)).collect(),
        unlearn_seconds: read_run(cfg, METHOD_NAME).ok_or("missing unlearning run record")?,
        retrain_seconds: read_run(cfg, "retrain").ok_or("missing retrain run record")?,
        ours_seconds,
    })
}

fn benchmark_runs(dir: &Path, mode: SplitMode) -> Result<Vec<BenchRun>, String> {
    SEEDS
        .iter()
        .map(|&seed| run_pipeline(&bench_config(dir, "bench", seed, mode)?))
        .collect()
}

fn class_efficacy(runs: &Result<Vec<BenchRun>, String>) -> Check {
    let r = &runs.as_ref().map_err(Clone::clone)?[0];
    let df = r.acc(METHOD_NAME, "d_f")?;
    let dft = r.acc(METHOD_NAME, "d_ft")?;
    let (dr, dr0) = (r.acc(METHOD_NAME, "d_r")?, r.acc(ORIGINAL_NAME, "d_r")?);
    let (drt, drt0) = (r.acc(METHOD_NAME, "d_rt")?, r.acc(ORIGINAL_NAME, "d_rt")?);
    let pass = df <= CLASS_FORGET_MAX
        && dft <= CLASS_FORGET_MAX
        && dr >= dr0 - CLASS_DR_DROP
        && drt >= drt0 - CLASS_DRT_DROP
        && r.ours_seconds < 30.0;
    Ok((
        pass,
        format!(
            "seed 0: D_f {df:.4}, D_ft {dft:.4} (max {CLASS_FORGET_MAX}); D_r {dr:.4} vs original {dr0:.4}; D_rt {drt:.4} vs original {drt0:.4}; {:.2}s (limit 30s)",
            r.ours_seconds
        ),
    ))
}

fn sample_utility(runs: &Result<Vec<BenchRun>, String>) -> Check {
    let r = &runs.as_ref().map_err(Clone::clone)?[0];
    let (dt, dt0) = (r.acc(METHOD_NAME, "d_t")?, r.acc(ORIGINAL_NAME, "d_t")?);
    let (df, df_re) = (r.acc(METHOD_NAME, "d_f")?, r.acc("retrain", "d_f")?);
    let pass = (dt - dt0).abs() <= SAMPLE_DT_TOL && (df - df_re).abs() <= SAMPLE_DF_TOL && r.ours_seconds < 30.0;
    Ok((
        pass,
        format!(
            "seed 0, {SAMPLE_NF} of 1200 rows: D_t {dt:.4} vs original {dt0:.4} (tol {SAMPLE_DT_TOL}); D_f {df:.4} vs retrained {df_re:.4} (tol {SAMPLE_DF_TOL}); {:.2}s (limit 30s)",
            r.ours_seconds
        ),
    ))
}

fn membership(runs: &Result<Vec<BenchRun>, String>) -> Check {
    let runs = runs.as_ref().map_err(Clone::clone)?;
    let collect = |m: &str| runs.iter().map(|r| r.mia(m)).collect::<Result<Vec<_>, _>>();
    let (orig, ours, re) = (collect(ORIGINAL_NAME)?, collect(METHOD_NAME)?, collect("retrain")?);
    let (mo, mu, mr) = (median(orig.clone()), median(ours.clone()), median(re.clone()));
    Ok((
        mo >= MIA_ORIGINAL_MIN && mu <= MIA_OURS_MAX && mr <= MIA_RETRAIN_MAX,
        format!(
            "5-seed medians on D_f (class): original {mo:.3} (min {MIA_ORIGINAL_MIN}) {}, ours {mu:.3} (max {MIA_OURS_MAX}) {}, retrained {mr:.3} (max {MIA_RETRAIN_MAX}) {}",
            fmt_list(&orig),
            fmt_list(&ours),
            fmt_list(&re)
        ),
    ))
}

fn feature_ordering(class: &Result<Vec<BenchRun>, String>, sample: &Result<Vec<BenchRun>, String>) -> Check {
    let mut pass = true;
    let mut parts = Vec::new();
    for (label, runs, subsets) in [
        ("class", class, &["d_r", "d_f", "d_t", "d_rt", "d_ft"][..]),
        ("sample", sample, &["d_r", "d_f", "d_t"][..]),
    ] {
        let runs = runs.as_ref().map_err(Clone::clone)?;
        for s in subsets {
            let ours = median(runs.iter().map(|r| r.fd2(METHOD_NAME, s)).collect::<Result<_, _>>()?);
            let badt = median(runs.iter().map(|r| r.fd2("badt", s)).collect::<Result<_, _>>()?);
            pass &= ours <= badt;
            parts.push(format!(
                "{label}/{s} {ours:.4}<={badt:.4}{}",
                if ours <= badt { "" } else { "!" }
            ));
        }
    }
    Ok((pass, format!("5-seed median fd2 ours<=badt: {}", parts.join(", "))))
}

/// Spearman rank correlation with average ranks for ties.
fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for k in i..=j {
                r[idx[k]] = (i + j) as f64 / 2.0;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn gamma_trend(dir: &Path) -> Check {
    let cfg = bench_config(dir, "ablation", 0, SplitMode::Class)?;
    cmd_gen_data(&cfg).map_err(err)?;
    cmd_train(&cfg).map_err(err)?;
    let start = Instant::now();
    let rows = cmd_ablate_gamma(&cfg, &GAMMAS).map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    let mut fd = Vec::new();
    let mut acc = Vec::new();
    for row in &rows {
        let r = row.subset("d_r").ok_or("ablation row lacks d_r")?;
        fd.push(r.feature_distance_def1);
        acc.push(r.accuracy);
    }
    let rho = spearman(&GAMMAS, &fd);
    let spread =
        acc.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - acc.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok((
        rho <= SPEARMAN_MAX && spread <= GAMMA_ACC_SPREAD && secs < 180.0,
        format!(
            "D_r fd1 {} rho {rho:.3} (max {SPEARMAN_MAX}); D_r accuracy {} spread {spread:.4} (max {GAMMA_ACC_SPREAD}); {secs:.2}s (limit 180s)",
            fmt_list(&fd),
            fmt_list(&acc)
        ),
    ))
}

fn efficiency(runs: &Result<Vec<BenchRun>, String>) -> Check {
    let runs = runs.as_ref().map_err(Clone::clone)?;
    let ratios: Vec<f64> = runs.iter().map(|r| r.unlearn_seconds / r.retrain_seconds).collect();
    let m = median(ratios.clone());
    let (u, r) = (
        median(runs.iter().map(|r| r.unlearn_seconds).collect()),
        median(runs.iter().map(|r| r.retrain_seconds).collect()),
    );
    Ok((
        m <= TIME_RATIO_MAX,
        format!(
            "median unlearn/retrain time ratio {m:.3} (max {TIME_RATIO_MAX}), per seed {}; median {u:.3}s vs {r:.3}s",
            fmt_list(&ratios)
        ),
    ))
}

fn snapshot(dir: &Path) -> Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(err)? {
            let path = entry.map_err(err)?.path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let rel = path
                .strip_prefix(dir)
                .map_err(err)?
                .to_string_lossy()
                .replace('\\', "/");
            if rel.starts_with("runs/") {
                // wall-clock records, not content
                continue;
            }
            let text = std::fs::read(&path).map_err(err)?;
            let key = if rel.starts_with("reports/") && rel.ends_with(".json") {
                MetricsReport::from_json(&String::from_utf8_lossy(&text))
                    .map_err(err)?
                    .content_hash()
                    .map_err(err)?
            } else if rel == "reports/metrics.csv" {
                let wall = MetricsReport::csv_header()
                    .iter()
                    .position(|h| h == "wall_time_seconds")
                    .ok_or("csv lacks wall time")?;
                let stripped: Vec<String> = String::from_utf8_lossy(&text)
                    .lines()
                    .map(|l| {
                        l.split(',')
                            .enumerate()
                            .filter(|(i, _)| *i != wall)
                            .map(|(_, c)| c)
                            .collect::<Vec<_>>()
                            .join(",")
                    })
                    .collect();
                rfau::eval::sha256_hex(stripped.join("\n").as_bytes())
            } else {
                rfau::eval::sha256_hex(&text)
            };
            out.insert(rel, key);
        }
    }
    Ok(out)
}

fn run_all_commands(out: &Path) -> Result<(), String> {
    let out = out.to_string_lossy().into_owned();
    let mut commands: Vec<Vec<&str>> = vec![vec!["gen-data"], vec!["train"], vec!["unlearn"]];
    for m in ["retrain", "finetune", "neggrad", "badt"] {
        commands.push(vec!["baseline", "--method", m]);
    }
    commands.push(vec!["eval"]);
    commands.push(vec!["ablate-gamma"]);
    for c in commands {
        let mut args = vec!["rfau", "--seed", "7", "--out", &out];
        args.extend(&c);
        let code = rfau::cli::main_with_args(args);
        if code != 0 {
            return Err(format!("`{}` exited with {code}", c.join(" ")));
        }
    }
    Ok(())
}

fn reproducibility(dir: &Path) -> Check {
    let out = dir.join("repro");
    run_all_commands(&out)?;
    let first = snapshot(&out)?;
    run_all_commands(&out)?;
    let second = snapshot(&out)?;
    let differing: Vec<&String> = first
        .iter()
        .filter(|(k, v)| second.get(*k) != Some(v))
        .map(|(k, _)| k)
        .collect();
    let pass = differing.is_empty() && first.len() == second.len() && load_model_ok(&out);
    Ok((
        pass,
        if differing.is_empty() {
            format!(
                "{} output files identical across reruns (report JSON by content hash)",
                first.len()
            )
        } else {
            format!("differing outputs: {differing:?}")
        },
    ))
}

fn load_model_ok(out: &Path) -> bool {
    let cfg = ExperimentConfig {
        out: out.to_path_buf(),
        ..ExperimentConfig::default()
    };
    load_model(&cfg, METHOD_NAME).is_ok()
}
