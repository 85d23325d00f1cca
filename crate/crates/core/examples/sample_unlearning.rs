//! Forget 32 random training rows and check the result against a model
//! retrained without them.

use rfau::baselines::{retrain, BaselineMethod, BaselineSpec};
use rfau::data::{gen_gaussian_clusters, split_unlearning, GaussianSpec, SplitSpec};
use rfau::eval::accuracy;
use rfau::numerics::Rng;
use rfau::unlearn::{run_unlearning, UnlearnConfig};

fn main() -> rfau::Result<()> {
    let (train, test) = gen_gaussian_clusters(&GaussianSpec::default(), &mut Rng::new(0))?;
    let spec = BaselineSpec::new(BaselineMethod::Retrain).with_seed(7);
    let widths = [2, 32, 32, 3];
    let (original, _) = retrain(&train, &widths, &spec)?;

    let split = split_unlearning(&train, Some(&test), &SplitSpec::sample(32, 3))?;
    let cfg = UnlearnConfig {
        rank: 2,
        lr: 1e-2,
        batch: 32,
        ..UnlearnConfig::default()
    };
    let ours = run_unlearning(&original, &split.retained, &split.forget, &cfg)?.model;
    // same seed as the original, so only the missing rows differ
    let (retrained, _) = retrain(&split.retained, &widths, &spec)?;

    println!("{:<10} {:>8} {:>8} {:>8}", "model", "D_r", "D_f", "D_t");
    for (name, m) in [("original", &original), ("unlearned", &ours), ("retrained", &retrained)] {
        println!(
            "{name:<10} {:>8.4} {:>8.4} {:>8.4}",
            accuracy(m, &split.retained)?,
            accuracy(m, &split.forget)?,
            accuracy(m, &test)?
        );
    }
    Ok(())
}
