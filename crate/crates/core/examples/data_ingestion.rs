//! Write the synthetic benchmark to CSV and IDX, read both back and split
//! the result for unlearning.

use rfau::data::{
    gen_gaussian_clusters, load_csv, load_idx, split_unlearning, write_csv, write_idx, GaussianSpec, SplitSpec,
};
use rfau::numerics::Rng;

fn main() -> rfau::Result<()> {
    let dir = tempfile::tempdir()?;
    let (train, test) = gen_gaussian_clusters(&GaussianSpec::default(), &mut Rng::new(0))?;

    let csv = dir.path().join("train.csv");
    write_csv(&train, &csv)?;
    let back = load_csv(&csv, Some(3))?;
    println!(
        "csv: {} rows x {} features, identical: {}",
        back.len(),
        back.dim(),
        back.x == train.x
    );

    // IDX stores bytes, so quantize the test features into 1x2 "images" in [0, 1]
    let pixels = test.x.map(|v| (v * 10.0 + 128.0).clamp(0.0, 255.0).round() / 255.0);
    let (images, labels) = write_idx(&pixels, 1, 2, &test.labels())?;
    let (img_path, lbl_path) = (dir.path().join("test-images.idx"), dir.path().join("test-labels.idx"));
    std::fs::write(&img_path, images)?;
    std::fs::write(&lbl_path, labels)?;
    let idx = load_idx(&img_path, &lbl_path, 3, None, &mut Rng::new(1))?;
    println!(
        "idx: {} rows, pixels identical: {}",
        idx.len(),
        idx.x.max_abs_diff(&pixels) < 1e-12
    );

    let split = split_unlearning(&back, Some(&test), &SplitSpec::class(0))?;
    println!(
        "class split: D_r {}, D_f {}, D_rt {}, D_ft {}",
        split.retained.len(),
        split.forget.len(),
        split.test_retained.map_or(0, |d| d.len()),
        split.test_forget.map_or(0, |d| d.len())
    );
    Ok(())
}
