//! Drive the command pipeline from code: generate data, train, unlearn,
//! run a baseline and evaluate, all under one output directory.

use rfau::experiment::{
    cmd_baseline, cmd_eval, cmd_gen_data, cmd_train, cmd_unlearn, parse_override, ExperimentConfig,
};

fn main() -> rfau::Result<()> {
    let dir = tempfile::tempdir()?;
    let overrides = [
        parse_override(&format!("out={}", dir.path().display()))?,
        parse_override("seed=3")?,
        parse_override("unlearn.gamma=0.7")?,
    ];
    let cfg = ExperimentConfig::load(None, &overrides)?;
    cmd_gen_data(&cfg)?;
    cmd_train(&cfg)?;
    cmd_unlearn(&cfg)?;
    cmd_baseline(&cfg, "retrain")?;
    for r in cmd_eval(&cfg, &[])? {
        let f = r.subset("d_f").expect("d_f is always reported");
        println!(
            "{:<9} D_f accuracy {:.4}, fd2 {:>7.4}, MIA {:.3}, hash {}",
            r.method,
            f.accuracy,
            f.feature_distance_def2.unwrap_or(f64::NAN),
            r.mia_success,
            &r.content_hash()?[..12]
        );
    }
    Ok(())
}
