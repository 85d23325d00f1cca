//! Forget one class of the synthetic benchmark with residual feature
//! alignment and compare accuracies before and after.

use rfau::data::{gen_gaussian_clusters, split_unlearning, GaussianSpec, SplitSpec};
use rfau::eval::accuracy;
use rfau::model::{mlp_init, train_supervised, TrainConfig};
use rfau::numerics::Rng;
use rfau::unlearn::{run_unlearning, UnlearnConfig};

fn main() -> rfau::Result<()> {
    let (train, test) = gen_gaussian_clusters(&GaussianSpec::default(), &mut Rng::new(0))?;
    let mut original = mlp_init(&[2, 32, 32, 3], &mut Rng::new(1))?;
    train_supervised(&mut original, &train, &TrainConfig::default(), &mut Rng::new(2))?;

    let split = split_unlearning(&train, Some(&test), &SplitSpec::class(1))?;
    let cfg = UnlearnConfig {
        rank: 2,
        lr: 1e-2,
        batch: 32,
        ..UnlearnConfig::default()
    };
    let out = run_unlearning(&original, &split.retained, &split.forget, &cfg)?;

    let (d_rt, d_ft) = (
        split.test_retained.as_ref().unwrap(),
        split.test_forget.as_ref().unwrap(),
    );
    println!("{:<6} {:>9} {:>9}", "subset", "original", "unlearned");
    for (name, d) in [
        ("D_r", &split.retained),
        ("D_f", &split.forget),
        ("D_rt", d_rt),
        ("D_ft", d_ft),
    ] {
        println!(
            "{name:<6} {:>9.4} {:>9.4}",
            accuracy(&original, d)?,
            accuracy(&out.model, d)?
        );
    }
    println!(
        "{} batches, {} used fallback targets",
        out.log.len(),
        out.target_fallbacks
    );
    Ok(())
}
