use super::*;
use crate::autodiff::{loss_value, Scalar, Tape, Var};
use crate::corpus::{EncodedPair, TaggedSequence};
use crate::model::{Model, ModelConfig};
use crate::params::{FreezeMask, Tensor};
use alloc::vec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `mean_i ½ (θ - t_i)²` over a batch of targets.
struct Quadratic;

impl Differentiable for Quadratic {
    type Example = f64;

    fn build_loss<S: Scalar>(&self, tape: &mut Tape<S>, p: &[Var], batch: &[f64]) -> Result<Var> {
        let mut terms = Vec::new();
        for t in batch {
            let r = tape.add_const(p[0], &[-t]);
            let sq = tape.mul(r, r);
            terms.push(tape.scale(sq, 0.5 / batch.len() as f64));
        }
        Ok(tape.sum_all(&terms))
    }
}

fn scalar(v: f64) -> ParameterSet {
    ParameterSet::from_entries([(String::from("theta"), Tensor::new(&[1, 1], vec![v]).unwrap())]).unwrap()
}

fn value(p: &ParameterSet) -> f64 {
    p.get("theta").unwrap().data[0]
}

fn task(support: f64, query: f64) -> TaskBatch<f64> {
    TaskBatch {
        lang: LangCode::from("xx"),
        support: vec![support],
        query: vec![query],
    }
}

fn sgd_cfg(order: Order) -> MetaConfig {
    MetaConfig {
        alpha: 0.1,
        beta: 0.5,
        m: 1,
        order,
        outer_optimizer: OptimizerKind::Sgd,
        ..MetaConfig::default()
    }
}

#[test]
fn quadratic_inner_loop() {
    let all = TrainableMask::all(1);
    let a = inner_adapt(&Quadratic, &scalar(0.0), &[1.0], 0.1, 1, &all, false).unwrap();
    assert!((value(&a.params) - 0.1).abs() < 1e-12);
    let b = inner_adapt(&Quadratic, &scalar(0.0), &[1.0], 0.1, 2, &all, true).unwrap();
    assert!((value(&b.params) - 0.19).abs() < 1e-12);
    assert_eq!(b.steps_taken, 2);
    assert_eq!(b.trajectory.len(), 2);
    assert_eq!(b.origin, scalar(0.0).fingerprint());
    let z = inner_adapt(&Quadratic, &scalar(0.3), &[1.0], 0.0, 3, &all, false).unwrap();
    assert_eq!(z.params, scalar(0.3));
}

#[test]
fn quadratic_meta_step_closed_form() {
    let all = TrainableMask::all(1);
    let (second, loss) = meta_step(&Quadratic, &scalar(0.0), &[task(1.0, 1.0)], &sgd_cfg(Order::Second), &all).unwrap();
    assert!((value(&second) - 0.405).abs() <= 1e-6);
    assert!((loss - 0.5 * 0.81).abs() < 1e-12);
    let (first, _) = meta_step(&Quadratic, &scalar(0.0), &[task(1.0, 1.0)], &sgd_cfg(Order::First), &all).unwrap();
    assert!((value(&first) - 0.45).abs() <= 1e-6);
}

#[test]
fn stationary_query_leaves_theta() {
    let all = TrainableMask::all(1);
    let (next, loss) = meta_step(&Quadratic, &scalar(1.0), &[task(1.0, 1.0)], &sgd_cfg(Order::Second), &all).unwrap();
    assert_eq!(next, scalar(1.0));
    assert_eq!(loss, 0.0);
}

#[test]
fn task_mean_not_sum() {
    // Two copies of the same task give the same update as one.
    let all = TrainableMask::all(1);
    let cfg = sgd_cfg(Order::Second);
    let (one, _) = meta_step(&Quadratic, &scalar(0.0), &[task(1.0, 1.0)], &cfg, &all).unwrap();
    let (two, _) = meta_step(&Quadratic, &scalar(0.0), &[task(1.0, 1.0), task(1.0, 1.0)], &cfg, &all).unwrap();
    assert!((value(&one) - value(&two)).abs() < 1e-15);
    assert!(meta_step(&Quadratic, &scalar(0.0), &[], &cfg, &all).is_err());
}

#[test]
fn config_validation() {
    assert!(MetaConfig::default().validate().is_ok());
    for bad in [
        MetaConfig {
            alpha: 0.0,
            ..MetaConfig::default()
        },
        MetaConfig {
            beta: -1.0,
            ..MetaConfig::default()
        },
        MetaConfig {
            m: 0,
            ..MetaConfig::default()
        },
        MetaConfig {
            batch_size: 1,
            ..MetaConfig::default()
        },
        MetaConfig {
            support_fraction: 1.0,
            ..MetaConfig::default()
        },
    ] {
        assert!(bad.validate().is_err());
    }
    assert_eq!(MetaConfig::default().iterations_per_epoch(100), 4);
    assert_eq!(MetaConfig::default().iterations_per_epoch(0), 1);
}

fn tiny() -> ModelConfig {
    ModelConfig {
        vocab_size: 6,
        d_model: 4,
        n_layers: 1,
        n_heads: 2,
        d_ff: 4,
        max_positions: 6,
        dropout: 0.0,
        extra_layer_norm: false,
    }
}

fn pair(input: &[u32], target: &[u32]) -> EncodedPair {
    EncodedPair {
        input: TaggedSequence {
            tokens: input.to_vec(),
            lang: LangCode::from("xx"),
        },
        target: target.to_vec(),
    }
}

/// Worst relative error between the analytic meta-gradient and central
/// differences of the post-adaptation query loss. Gradients smaller than
/// 1e-3 in magnitude are compared absolutely.
fn meta_fd_error(m: usize, order: Order, mask: &TrainableMask, model: &Model) -> f64 {
    let loss = model.loss(0.1).unwrap();
    let support = [pair(&[3, 4, 5], &[5, 2, 1]), pair(&[4, 3], &[3, 1])];
    let query = [pair(&[5, 4, 3], &[2, 4, 1]), pair(&[3, 3], &[4, 1])];
    let alpha = 0.5;
    let (_, g) = meta_gradient(&loss, &model.params, &support, &query, alpha, m, order, mask).unwrap();
    let f = |p: &ParameterSet| {
        let a = inner_adapt(&loss, p, &support, alpha, m, mask, false).unwrap();
        loss_value(&loss, &a.params, &query).unwrap()
    };
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for ti in 0..model.params.len() {
        if !mask.is_trainable(ti) {
            continue;
        }
        for k in 0..model.params.tensors()[ti].len() {
            let mut p = model.params.clone();
            p.tensors_mut()[ti].data[k] += h;
            let up = f(&p);
            p.tensors_mut()[ti].data[k] -= 2.0 * h;
            let down = f(&p);
            let fd = (up - down) / (2.0 * h);
            let an = g[ti][k];
            worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-3));
        }
    }
    worst
}

#[test]
fn second_order_meta_gradient_matches_differences() {
    let model = Model::init(tiny(), 21).unwrap();
    assert!(model.parameter_count() <= 1000);
    let all = TrainableMask::all(model.params.len());
    for m in [1, 2] {
        let worst = meta_fd_error(m, Order::Second, &all, &model);
        assert!(worst < 1e-4, "m={m}: worst relative error {worst}");
    }
    // The check has teeth: the first-order approximation fails it.
    assert!(meta_fd_error(2, Order::First, &all, &model) > 1e-2);
    // And it still holds with part of the network frozen.
    let mask = model.trainable(&FreezeMask::embeddings_and_decoder()).unwrap();
    assert!(meta_fd_error(2, Order::Second, &mask, &model) < 1e-4);
}

#[test]
fn first_and_second_order_agree_as_alpha_vanishes() {
    let model = Model::init(tiny(), 5).unwrap();
    let loss = model.loss(0.1).unwrap();
    let all = TrainableMask::all(model.params.len());
    let support = [pair(&[3, 4, 5], &[5, 2, 1])];
    let query = [pair(&[5, 4, 3], &[2, 4, 1])];
    let gap = |alpha: f64| {
        let (_, a) = meta_gradient(&loss, &model.params, &support, &query, alpha, 1, Order::Second, &all).unwrap();
        let (_, b) = meta_gradient(&loss, &model.params, &support, &query, alpha, 1, Order::First, &all).unwrap();
        libm::sqrt(
            a.iter()
                .flatten()
                .zip(b.iter().flatten())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>(),
        )
    };
    let mut prev = gap(0.04);
    for alpha in [0.02, 0.01, 0.005] {
        let g = gap(alpha);
        let ratio = prev / g;
        assert!((ratio - 2.0).abs() < 0.1, "alpha {alpha}: ratio {ratio}");
        prev = g;
    }
}

#[test]
fn theta_is_not_mutated_and_frozen_carried() {
    let model = Model::init(tiny(), 3).unwrap();
    let loss = model.loss(0.1).unwrap();
    let mask = model.trainable(&FreezeMask::embeddings_and_decoder()).unwrap();
    let before = model.params.fingerprint();
    let support = [pair(&[3, 4, 5], &[5, 2, 1])];
    let a = inner_adapt(&loss, &model.params, &support, 0.5, 2, &mask, true).unwrap();
    assert_eq!(model.params.fingerprint(), before);
    for name in a.params.changed_tensors(&model.params) {
        assert!(name.starts_with("encoder."), "{name}");
    }
    let tasks = [TaskBatch {
        lang: LangCode::from("xx"),
        support: support.to_vec(),
        query: vec![pair(&[4, 4], &[3, 1])],
    }];
    let (next, _) = meta_step(
        &loss,
        &model.params,
        &tasks,
        &MetaConfig {
            alpha: 0.5,
            beta: 0.1,
            ..MetaConfig::default()
        },
        &mask,
    )
    .unwrap();
    let changed = next.changed_tensors(&model.params);
    assert!(!changed.is_empty());
    assert!(changed.iter().all(|n| n.starts_with("encoder.")));
    let tuned = few_shot_adapt(&loss, &model.params, &support, 5, 0.1, &mask).unwrap();
    assert!(tuned.changed_tensors(&model.params).iter().all(|n| n.starts_with("encoder.")));
}

#[test]
fn few_shot_degenerate_cases() {
    let all = TrainableMask::all(1);
    assert_eq!(few_shot_adapt(&Quadratic, &scalar(0.2), &[1.0], 0, 0.1, &all).unwrap(), scalar(0.2));
    assert_eq!(
        few_shot_adapt(&Quadratic, &scalar(0.2), &[1.0], 10, 0.0, &all).unwrap(),
        scalar(0.2)
    );
    let moved = few_shot_adapt(&Quadratic, &scalar(0.2), &[1.0], 10, 0.1, &all).unwrap();
    assert!(value(&moved) > 0.2);
    assert!(few_shot_adapt(&Quadratic, &scalar(0.2), &[], 1, 0.1, &all).is_err());
}

fn model_sets() -> BTreeMap<LangCode, Vec<EncodedPair>> {
    let mut sets = BTreeMap::new();
    for (l, base) in [("aa", 2u32), ("bb", 3)] {
        let data: Vec<EncodedPair> = (0..10)
            .map(|i| {
                let a = 2 + (base + i) % 4;
                let mut p = pair(&[a, 5, a], &[a, 1]);
                p.input.lang = LangCode::from(l);
                p
            })
            .collect();
        sets.insert(LangCode::from(l), data);
    }
    sets
}

#[test]
fn meta_train_epochs_logging_and_determinism() {
    let model = Model::init(tiny(), 8).unwrap();
    let loss = model.loss(0.1).unwrap();
    let mask = model.trainable(&FreezeMask::embeddings_and_decoder()).unwrap();
    let sets = model_sets();
    let cfg = MetaConfig {
        alpha: 0.1,
        beta: 1e-2,
        epochs: 2,
        tasks_per_meta_batch: 2,
        ..MetaConfig::default()
    };
    let run = |seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut log = Vec::new();
        let p = meta_train(&loss, &model.params, &sets, &cfg, &mask, &mut rng, |e, _| {
            log.push(e.clone());
            Ok(())
        })
        .unwrap();
        (p, log)
    };
    let (p1, log1) = run(4);
    let (p2, log2) = run(4);
    assert_eq!(p1.fingerprint(), p2.fingerprint());
    assert_eq!(log1, log2);
    // 20 examples, 2 tasks of 8 per meta-batch: 2 iterations per epoch.
    assert_eq!(log1.len(), 4);
    assert_eq!(log1.iter().map(|e| e.epoch).collect::<Vec<_>>(), vec![0, 0, 1, 1]);
    assert!(log1.iter().all(|e| e.lang_counts.values().sum::<usize>() == 2));
    for (name, t) in model.params.iter() {
        if name == "token_embeddings" || name.starts_with("decoder.") {
            assert!(crate::params::bitwise_eq(&t.data, &p1.get(name).unwrap().data));
        }
    }
    assert!(!p1.changed_tensors(&model.params).is_empty());

    let zero = MetaConfig { epochs: 0, ..cfg.clone() };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let same = meta_train(&loss, &model.params, &sets, &zero, &mask, &mut rng, |_, _| Ok(())).unwrap();
    assert_eq!(same, model.params);
}

#[test]
fn paper_loop_shape_single_language() {
    let model = Model::init(tiny(), 8).unwrap();
    let loss = model.loss(0.1).unwrap();
    let mut sets = model_sets();
    sets.remove(&LangCode::from("bb"));
    let cfg = MetaConfig {
        epochs: 1,
        ..MetaConfig::default()
    };
    assert_eq!((cfg.m, cfg.batch_size, cfg.support_fraction), (2, 8, 0.5));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut seen = Vec::new();
    meta_train(
        &loss,
        &model.params,
        &sets,
        &cfg,
        &TrainableMask::all(model.params.len()),
        &mut rng,
        |e, _| {
            seen.push(e.lang_counts.clone());
            Ok(())
        },
    )
    .unwrap();
    assert_eq!(seen.len(), 1);
    assert_eq!(seen[0].get("aa"), Some(&4));
}
