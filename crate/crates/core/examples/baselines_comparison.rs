//! Run every comparison method next to residual feature alignment on a
//! class-unlearning split and print accuracy, wall time and feature
//! distance to the retrained model.

use rfau::baselines::{run_baseline, BaselineMethod, BaselineSpec};
use rfau::data::{gen_gaussian_clusters, split_unlearning, GaussianSpec, SplitSpec};
use rfau::eval::{accuracy, feature_distance, measure_wall_time};
use rfau::model::{Checkpoint, CheckpointMeta, Mlp};
use rfau::numerics::Rng;
use rfau::unlearn::{run_unlearning, UnlearnConfig};

fn main() -> rfau::Result<()> {
    let (train, test) = gen_gaussian_clusters(&GaussianSpec::default(), &mut Rng::new(0))?;
    let split = split_unlearning(&train, Some(&test), &SplitSpec::class(2))?;
    let retrain_spec = BaselineSpec::new(BaselineMethod::Retrain).with_seed(5);
    let (original, _) = rfau::baselines::retrain(&train, &[2, 32, 32, 3], &retrain_spec)?;
    let original = Checkpoint::new(original, CheckpointMeta::default());

    let mut models: Vec<(String, Mlp, f64)> = Vec::new();
    for method in BaselineMethod::ALL {
        let spec = if method == BaselineMethod::Retrain {
            retrain_spec.clone()
        } else {
            BaselineSpec::new(method).with_seed(9)
        };
        let (out, secs) = measure_wall_time(|| run_baseline(&original, &split.retained, &split.forget, &spec));
        models.push((method.name().into(), out?.checkpoint.model, secs));
    }
    let cfg = UnlearnConfig {
        rank: 2,
        lr: 1e-2,
        batch: 32,
        ..UnlearnConfig::default()
    };
    let (out, secs) = measure_wall_time(|| run_unlearning(&original.model, &split.retained, &split.forget, &cfg));
    models.push(("rfau".into(), out?.model, secs));

    let retrained = models[0].1.clone();
    let layers = original.model.hidden_layer_ids();
    println!(
        "{:<9} {:>7} {:>7} {:>9} {:>9}",
        "method", "D_r", "D_f", "fd2(D_r)", "seconds"
    );
    for (name, m, secs) in &models {
        println!(
            "{name:<9} {:>7.4} {:>7.4} {:>9.4} {secs:>9.4}",
            accuracy(m, &split.retained)?,
            accuracy(m, &split.forget)?,
            feature_distance(m, &retrained, &split.retained.x, &layers)?
        );
    }
    Ok(())
}
