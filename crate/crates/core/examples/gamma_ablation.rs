//! Sweep the balance γ between feature alignment and task loss and watch
//! the feature distance to the original model shrink as γ grows.

use rfau::data::{gen_gaussian_clusters, split_unlearning, GaussianSpec, SplitSpec};
use rfau::eval::{accuracy, feature_distance};
use rfau::model::{mlp_init, train_supervised, TrainConfig};
use rfau::numerics::Rng;
use rfau::unlearn::{run_unlearning, UnlearnConfig};

fn main() -> rfau::Result<()> {
    let (train, _) = gen_gaussian_clusters(&GaussianSpec::default(), &mut Rng::new(0))?;
    let mut original = mlp_init(&[2, 32, 32, 3], &mut Rng::new(1))?;
    train_supervised(&mut original, &train, &TrainConfig::default(), &mut Rng::new(2))?;
    let split = split_unlearning(&train, None, &SplitSpec::class(1))?;
    let layers = original.hidden_layer_ids();

    println!("{:>5} {:>8} {:>8} {:>10}", "gamma", "D_r acc", "D_f acc", "fd1(D_r)");
    for gamma in [0.1, 0.3, 0.5, 0.7, 0.9] {
        let cfg = UnlearnConfig {
            gamma,
            rank: 2,
            lr: 1e-2,
            batch: 32,
            ..UnlearnConfig::default()
        };
        let m = run_unlearning(&original, &split.retained, &split.forget, &cfg)?.model;
        println!(
            "{gamma:>5.1} {:>8.4} {:>8.4} {:>10.4}",
            accuracy(&m, &split.retained)?,
            accuracy(&m, &split.forget)?,
            feature_distance(&m, &original, &split.retained.x, &layers)?
        );
    }
    Ok(())
}
