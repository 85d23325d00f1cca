//! Compare the analytic adapter gradients of the unlearning objective with
//! central finite differences, in both loss formulations.

use rfau::data::BatchSplit;
use rfau::lora::{attach, InstrumentedModel};
use rfau::model::mlp_init;
use rfau::numerics::{finite_diff_grad, gaussian_fill, Matrix, Rng};
use rfau::unlearn::{batch_targets, objective_residual, objective_teacher, LossMode, UnlearnConfig};

fn main() -> rfau::Result<()> {
    let mut rng = Rng::new(3);
    let base = mlp_init(&[2, 8, 8, 3], &mut rng)?;
    let mut im = attach(&base, &[0, 1], 2, &mut rng, 0.01)?;
    let theta: Vec<f64> = (0..im.adapter_flat().len()).map(|_| rng.normal(0.0, 0.3)).collect();
    im.set_adapter_flat(&theta)?;

    let rows = 8;
    let mut y = Matrix::zeros(rows, 3);
    for i in 0..rows {
        y.set(i, i % 3, 1.0);
    }
    let batch = BatchSplit {
        x: gaussian_fill(&mut rng, rows, 2, 0.0, 2.0)?,
        y,
        retained: (0..rows).map(|i| i % 4 != 0).collect(),
        source: (0..rows).collect(),
    };
    let (_, frozen) = base.forward(&batch.x)?;
    let targets = batch_targets(&frozen.pre, &im.layer_ids(), &batch)?.expect("batch has retained rows");
    let cfg = UnlearnConfig::default();

    for mode in [LossMode::Residual, LossMode::Teacher] {
        let objective = |m: &InstrumentedModel| match mode {
            LossMode::Residual => objective_residual(m, &batch, &targets, &cfg),
            LossMode::Teacher => objective_teacher(m, &batch, &targets, &cfg),
        };
        let analytic = objective(&im)?.1.flat();
        let numeric = finite_diff_grad(
            |p| {
                let mut probe = im.clone();
                probe.set_adapter_flat(p).unwrap();
                objective(&probe).unwrap().0.total
            },
            &theta,
            1e-5,
        )?;
        let worst = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
            .fold(0.0, f64::max);
        println!("{mode:<8?} {} parameters, max relative error {worst:.2e}", theta.len());
    }
    Ok(())
}
