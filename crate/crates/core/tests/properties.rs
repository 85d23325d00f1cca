//! Property tests over the public API.

use std::collections::BTreeMap;

use proptest::prelude::*;

use rfau::baselines::{run_baseline, BaselineMethod, BaselineSpec};
use rfau::data::{
    gen_gaussian_clusters, split_unlearning, stratified_batches, BatchSplit, Dataset, GaussianSpec, SplitSpec,
};
use rfau::eval::{evaluate, EvalContext, MetricsReport};
use rfau::lora::{attach, InstrumentedModel};
use rfau::model::{mlp_init, Checkpoint, CheckpointMeta, Mlp};
use rfau::numerics::{softmax_rows, Matrix, Rng};
use rfau::unlearn::{batch_targets, loss_inter, loss_inter_teacher, run_unlearning, UnlearnConfig};

fn matrix(rng: &mut Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal(0.0, std)).collect()).unwrap()
}

/// Random network, a non-empty set of instrumented layers and a rank within bounds.
fn instrumented(seed: u64, dims: &[usize], mask: u8, rank: usize) -> (Mlp, Vec<usize>, usize, Rng) {
    let mut rng = Rng::new(seed);
    let base = mlp_init(dims, &mut rng).unwrap();
    let n = base.num_layers();
    let mut layers: Vec<usize> = (0..n).filter(|k| mask & (1 << k) != 0).collect();
    if layers.is_empty() {
        layers.push(mask as usize % n);
    }
    let bound = layers.iter().map(|&k| dims[k].min(dims[k + 1])).min().unwrap();
    (base, layers, rank.clamp(1, bound), rng)
}

fn randomize(im: &mut InstrumentedModel, rng: &mut Rng, std: f64) {
    let flat: Vec<f64> = (0..im.adapter_flat().len()).map(|_| rng.normal(0.0, std)).collect();
    im.set_adapter_flat(&flat).unwrap();
}

fn dims() -> impl Strategy<Value = Vec<usize>> {
    (1usize..5, prop::collection::vec(1usize..12, 1..4), 2usize..5).prop_map(|(i, h, o)| {
        let mut d = vec![i];
        d.extend(h);
        d.push(o);
        d
    })
}

fn mask_batch(rng: &mut Rng, rows: usize, dim: usize, classes: usize) -> BatchSplit {
    let mut retained: Vec<bool> = (0..rows).map(|_| rng.uniform() < 0.5).collect();
    retained[0] = true;
    let mut y = Matrix::zeros(rows, classes);
    for i in 0..rows {
        y.set(i, rng.below(classes), 1.0);
    }
    BatchSplit {
        x: matrix(rng, rows, dim, 2.0),
        y,
        retained,
        source: (0..rows).collect(),
    }
}

fn small_benchmark(seed: u64) -> (Dataset, Dataset) {
    let spec = GaussianSpec {
        per_class: 40,
        ..GaussianSpec::default()
    };
    gen_gaussian_clusters(&spec, &mut Rng::new(seed)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn attach_is_identity_at_step_zero(seed in any::<u64>(), dims in dims(), mask in any::<u8>(), rank in 1usize..4, rows in 1usize..20) {
        let (base, layers, rank, mut rng) = instrumented(seed, &dims, mask, rank);
        let im = attach(&base, &layers, rank, &mut rng, 0.01).unwrap();
        let x = matrix(&mut rng, rows, dims[0], 5.0);
        let (out, _) = im.forward_student(&x).unwrap();
        prop_assert!(out.max_abs_diff(&base.logits(&x).unwrap()) <= 1e-12);
    }

    #[test]
    fn summed_feature_is_pretrained_plus_residual(seed in any::<u64>(), dims in dims(), mask in any::<u8>(), rank in 1usize..4) {
        let (base, layers, rank, mut rng) = instrumented(seed, &dims, mask, rank);
        let mut im = attach(&base, &layers, rank, &mut rng, 0.01).unwrap();
        randomize(&mut im, &mut rng, 0.5);
        let x = matrix(&mut rng, 7, dims[0], 2.0);
        let (_, tape) = im.forward_decomposed(&x).unwrap();
        for &k in &layers {
            let sum = tape.pretrained[k].add(&tape.residual[k]).unwrap();
            prop_assert!(sum.max_abs_diff(&tape.sums()[k]) <= 1e-12);
        }
    }

    #[test]
    fn merged_model_matches_adapted_model(seed in any::<u64>(), dims in dims(), mask in any::<u8>(), rank in 1usize..4) {
        let (base, layers, rank, mut rng) = instrumented(seed, &dims, mask, rank);
        let mut im = attach(&base, &layers, rank, &mut rng, 0.01).unwrap();
        randomize(&mut im, &mut rng, 0.5);
        let x = matrix(&mut rng, 9, dims[0], 2.0);
        let (adapted, _) = im.forward_decomposed(&x).unwrap();
        prop_assert!(im.merge().unwrap().logits(&x).unwrap().max_abs_diff(&adapted) <= 1e-9);
    }

    #[test]
    fn residual_and_teacher_losses_agree(seed in any::<u64>(), dims in dims(), mask in any::<u8>(), rank in 1usize..4, alpha in 0.0f64..3.0, beta in 0.0f64..3.0) {
        let (base, layers, rank, mut rng) = instrumented(seed, &dims, mask, rank);
        let mut im = attach(&base, &layers, rank, &mut rng, 0.01).unwrap();
        randomize(&mut im, &mut rng, 0.5);
        let batch = mask_batch(&mut rng, 8, dims[0], *dims.last().unwrap());
        let (_, tape) = im.forward_decomposed(&batch.x).unwrap();
        let targets = batch_targets(&tape.pretrained, &layers, &batch).unwrap().unwrap();
        let a = loss_inter(&tape, &layers, &batch.retained, &targets.features, alpha, beta).unwrap();
        let (_, teacher) = base.forward(&batch.x).unwrap();
        let b = loss_inter_teacher(tape.sums(), &teacher.pre, &layers, &batch.retained, &targets.features, alpha, beta).unwrap();
        prop_assert!((a.retained - b.retained).abs() <= 1e-9);
        prop_assert!((a.forget - b.forget).abs() <= 1e-9);
    }

    #[test]
    fn softmax_rows_sum_to_one(seed in any::<u64>(), rows in 1usize..10, cols in 1usize..8, scale in 0.0f64..200.0) {
        let mut rng = Rng::new(seed);
        let p = softmax_rows(&matrix(&mut rng, rows, cols, scale));
        for r in p.iter_rows() {
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(r.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact(seed in any::<u64>(), dims in dims()) {
        let mut rng = Rng::new(seed);
        let mut m = mlp_init(&dims, &mut rng).unwrap();
        let noise: Vec<f64> = m.flat_params().iter().map(|_| rng.normal(0.0, 1.0)).collect();
        m.set_flat_params(&noise).unwrap();
        let ck = Checkpoint::new(m, CheckpointMeta { seed, epochs: 3, method: "x".into() });
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        let bits = |c: &Checkpoint| c.model.flat_params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&ck));
        prop_assert_eq!(back.meta, ck.meta);
    }

    #[test]
    fn batches_cover_each_row_once(seed in any::<u64>(), n_r in 2usize..60, n_f in 0usize..30, batch in 2usize..20) {
        prop_assume!(batch <= n_r + n_f);
        let mut rng = Rng::new(seed);
        let data = |n: usize, rng: &mut Rng| Dataset::from_labels(matrix(rng, n, 2, 1.0), &vec![0; n], 2).unwrap();
        let (r, f) = (data(n_r, &mut rng), data(n_f, &mut rng));
        let batches = stratified_batches(&r, &f, batch, &mut rng).unwrap();
        let (mut seen_r, mut seen_f) = (vec![0; n_r], vec![0; n_f]);
        for b in &batches {
            prop_assert!(b.len() <= batch);
            for (i, &src) in b.source.iter().enumerate() {
                if b.retained[i] { seen_r[src] += 1 } else { seen_f[src] += 1 }
            }
        }
        prop_assert!(seen_r.iter().chain(&seen_f).all(|&c| c == 1));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn splits_partition_the_training_set(seed in any::<u64>(), class_id in 0usize..3, n_f in 1usize..100, sample in any::<bool>()) {
        let (train, test) = small_benchmark(seed);
        let spec = if sample { SplitSpec::sample(n_f, seed) } else { SplitSpec::class(class_id) };
        let s = split_unlearning(&train, Some(&test), &spec).unwrap();
        let mut ids: Vec<usize> = s.retained.ids.iter().chain(&s.forget.ids).copied().collect();
        ids.sort_unstable();
        let mut all = train.ids.clone();
        all.sort_unstable();
        prop_assert_eq!(ids, all);
        prop_assert!(s.retained.ids.iter().all(|i| !s.forget.ids.contains(i)));
    }

    #[test]
    fn unlearning_leaves_the_base_untouched(seed in any::<u64>(), gamma in 0.0f64..=1.0) {
        let (train, _) = small_benchmark(seed);
        let split = split_unlearning(&train, None, &SplitSpec::sample(10, seed)).unwrap();
        let base = mlp_init(&[2, 8, 8, 3], &mut Rng::new(seed)).unwrap();
        let cfg = UnlearnConfig { rank: 2, lr: 1e-2, batch: 16, gamma, seed, ..UnlearnConfig::default() };
        let out = run_unlearning(&base, &split.retained, &split.forget, &cfg).unwrap();
        prop_assert_eq!(out.instrumented.base(), &base);
    }

    #[test]
    fn step_zero_model_sits_at_the_original(seed in any::<u64>()) {
        let (train, test) = small_benchmark(seed);
        let split = split_unlearning(&train, Some(&test), &SplitSpec::class(1)).unwrap();
        let mut rng = Rng::new(seed);
        let original = mlp_init(&[2, 8, 8, 3], &mut rng).unwrap();
        let im = attach(&original, &[0, 1], 2, &mut rng, 0.01).unwrap();
        let merged = im.merge().unwrap();
        let layers = [0, 1];
        let ctx = EvalContext { split: &split, test: &test, original: &original, retrained: Some(&original), layers: &layers, attack_seed: seed };
        let r = evaluate(&merged, &ctx, "step0", seed, "h", 0.0).unwrap();
        for m in r.subsets.values() {
            prop_assert!(m.feature_distance_def1 <= 1e-9);
            prop_assert!(m.feature_distance_def2.unwrap() <= 1e-9);
            prop_assert!(m.activation_distance.unwrap() <= 1e-9);
        }
    }

    #[test]
    fn report_emit_parse_emit_is_byte_identical(seed in any::<u64>(), acc in 0.0f64..=1.0, dist in 0.0f64..50.0, mia in 0.0f64..=1.0, wall in 0.0f64..100.0) {
        let mut subsets = BTreeMap::new();
        for (i, name) in ["d_r", "d_f", "d_t"].iter().enumerate() {
            subsets.insert(name.to_string(), rfau::eval::SubsetMetrics {
                accuracy: acc / (i + 1) as f64,
                activation_distance: (i != 1).then_some(dist / 7.0),
                feature_distance_def1: dist,
                feature_distance_def2: Some(dist * 1.5),
            });
        }
        let r = MetricsReport { method: "rfau".into(), seed, config_hash: "abc".into(), subsets, mia_success: mia, mia_degenerate: false, wall_time_seconds: wall };
        let text = r.to_json().unwrap();
        let back = MetricsReport::from_json(&text).unwrap();
        prop_assert_eq!(back.to_json().unwrap(), text);
        prop_assert_eq!(&back, &r);
    }

    #[test]
    fn zero_epoch_baselines_are_identity(seed in any::<u64>()) {
        let (train, _) = small_benchmark(seed);
        let split = split_unlearning(&train, None, &SplitSpec::class(2)).unwrap();
        let original = Checkpoint::new(mlp_init(&[2, 8, 8, 3], &mut Rng::new(seed)).unwrap(), CheckpointMeta::default());
        for method in [BaselineMethod::Finetune, BaselineMethod::Neggrad, BaselineMethod::Badt] {
            let spec = BaselineSpec { epochs: 0, ..BaselineSpec::new(method).with_seed(seed) };
            let out = run_baseline(&original, &split.retained, &split.forget, &spec).unwrap();
            prop_assert_eq!(&out.checkpoint.model, &original.model);
        }
    }
}

#[test]
fn forgetting_term_falls_over_a_class_unlearning_epoch() {
    let (train, _) = gen_gaussian_clusters(&GaussianSpec::default(), &mut Rng::new(11)).unwrap();
    let split = split_unlearning(&train, None, &SplitSpec::class(1)).unwrap();
    let mut original = mlp_init(&[2, 32, 32, 3], &mut Rng::new(12)).unwrap();
    let tc = rfau::model::TrainConfig::default();
    rfau::model::train_supervised(&mut original, &train, &tc, &mut Rng::new(13)).unwrap();
    let cfg = UnlearnConfig {
        rank: 2,
        lr: 1e-2,
        batch: 32,
        ..UnlearnConfig::default()
    };
    let out = run_unlearning(&original, &split.retained, &split.forget, &cfg).unwrap();
    let q = out.log.len() / 4;
    let mean = |rows: &[rfau::unlearn::BatchLog]| rows.iter().map(|l| l.l_inter_f).sum::<f64>() / rows.len() as f64;
    let (first, last) = (mean(&out.log[..q]), mean(&out.log[out.log.len() - q..]));
    assert!(last < first, "first quartile {first}, last quartile {last}");
}
