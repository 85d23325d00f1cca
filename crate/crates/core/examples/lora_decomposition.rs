//! Attach adapters to a network, split every feature into its pre-trained
//! and residual parts, then merge the adapters back into plain weights.

use rfau::lora::attach;
use rfau::model::mlp_init;
use rfau::numerics::{gaussian_fill, Rng};

fn main() -> rfau::Result<()> {
    let mut rng = Rng::new(1);
    let base = mlp_init(&[2, 16, 16, 3], &mut rng)?;
    let mut im = attach(&base, &base.hidden_layer_ids(), 2, &mut rng, 0.01)?;
    let x = gaussian_fill(&mut rng, 5, 2, 0.0, 2.0)?;

    let (logits, _) = im.forward_student(&x)?;
    println!(
        "right after attach: max |adapted - base| = {:e}",
        logits.max_abs_diff(&base.logits(&x)?)
    );

    // pretend some training happened
    let trained: Vec<f64> = (0..im.adapter_flat().len()).map(|_| rng.normal(0.0, 0.2)).collect();
    im.set_adapter_flat(&trained)?;

    let (logits, tape) = im.forward_decomposed(&x)?;
    for k in im.layer_ids() {
        let parts = tape.pretrained[k].add(&tape.residual[k])?;
        println!(
            "layer {k}: |residual| = {:.4}, |pretrained + residual - summed| = {:e}",
            tape.residual[k].frobenius_norm(),
            parts.max_abs_diff(&tape.sums()[k])
        );
    }

    let merged = im.merge()?;
    println!(
        "merged vs adapted: max diff {:e}",
        merged.logits(&x)?.max_abs_diff(&logits)
    );
    Ok(())
}
