//! Train once in the residual formulation and once in the teacher
//! formulation from the same seed; the resulting weights coincide.

use rfau::data::{gen_gaussian_clusters, split_unlearning, GaussianSpec, SplitSpec};
use rfau::model::{mlp_init, train_supervised, TrainConfig};
use rfau::numerics::Rng;
use rfau::unlearn::{run_unlearning, LossMode, UnlearnConfig};

fn main() -> rfau::Result<()> {
    let (train, _) = gen_gaussian_clusters(&GaussianSpec::default(), &mut Rng::new(0))?;
    let mut original = mlp_init(&[2, 32, 32, 3], &mut Rng::new(1))?;
    train_supervised(&mut original, &train, &TrainConfig::default(), &mut Rng::new(2))?;
    let split = split_unlearning(&train, None, &SplitSpec::class(0))?;

    let run = |mode| {
        let cfg = UnlearnConfig {
            mode,
            rank: 2,
            lr: 1e-2,
            batch: 32,
            ..UnlearnConfig::default()
        };
        run_unlearning(&original, &split.retained, &split.forget, &cfg)
    };
    let (a, b) = (run(LossMode::Residual)?, run(LossMode::Teacher)?);
    let gap = a
        .model
        .flat_params()
        .iter()
        .zip(b.model.flat_params())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let last = a.log.last().expect("at least one batch");
    println!(
        "final batch: L_inter retained {:.4}, forget {:.4}; total {:.4}",
        last.l_inter_r, last.l_inter_f, last.total
    );
    println!("max weight difference between formulations: {gap:e}");
    Ok(())
}
