//! Fit the entropy membership attack and report how many unlearning rows
//! it still flags as training members, before and after unlearning.

use rfau::data::{gen_gaussian_clusters, split_unlearning, GaussianSpec, SplitSpec};
use rfau::eval::{entropy_feature, mia_success, train_attack};
use rfau::model::{mlp_init, train_supervised, TrainConfig};
use rfau::numerics::Rng;
use rfau::unlearn::{run_unlearning, UnlearnConfig};

fn main() -> rfau::Result<()> {
    let spec = GaussianSpec {
        separation: 3.0,
        ..GaussianSpec::default()
    };
    let (train, test) = gen_gaussian_clusters(&spec, &mut Rng::new(4))?;
    let mut original = mlp_init(&[2, 64, 64, 3], &mut Rng::new(5))?;
    let tc = TrainConfig {
        epochs: 60,
        ..TrainConfig::default()
    };
    train_supervised(&mut original, &train, &tc, &mut Rng::new(6))?;
    let split = split_unlearning(&train, Some(&test), &SplitSpec::class(0))?;
    let cfg = UnlearnConfig {
        rank: 2,
        lr: 1e-2,
        batch: 32,
        ..UnlearnConfig::default()
    };
    let unlearned = run_unlearning(&original, &split.retained, &split.forget, &cfg)?.model;

    for (name, m) in [("original", &original), ("unlearned", &unlearned)] {
        let attack = train_attack(m, &test, &split.retained, &mut Rng::new(8))?;
        let h = entropy_feature(m, &split.forget.x)?;
        let mean = h.iter().sum::<f64>() / h.len() as f64;
        println!(
            "{name:<9} mean D_f entropy {mean:.4}, attack weight {:+.3}, D_f flagged as member {:.3}",
            attack.weight,
            mia_success(&attack, m, &split.forget)?
        );
    }
    Ok(())
}
