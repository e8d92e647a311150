use super::*;
use crate::autodiff::{loss_and_grad, loss_value, Differentiable};
use crate::corpus::EncodedPair;
use crate::lang::LangCode;
use crate::optim::{AdamWConfig, Optimizer};
use crate::params::FreezeMask;
use alloc::vec;
use proptest::prelude::*;

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

#[test]
fn init_is_deterministic() {
    let a = Model::init(tiny(), 7).unwrap();
    let b = Model::init(tiny(), 7).unwrap();
    let c = Model::init(tiny(), 8).unwrap();
    assert_eq!(a.params.fingerprint(), b.params.fingerprint());
    assert!(a.params.changed_tensors(&b.params).is_empty());
    assert_ne!(a.params.fingerprint(), c.params.fingerprint());
}

#[test]
fn head_divisibility_checked() {
    let cfg = ModelConfig {
        d_model: 32,
        n_heads: 5,
        ..ModelConfig::desk(40)
    };
    assert!(matches!(Model::init(cfg, 0), Err(Error::InvalidConfig(_))));
}

#[test]
fn desk_parameter_count_closed_form() {
    let cfg = ModelConfig::desk(40);
    let (v, d, f, p, l) = (40, 64, 256, 64, 2);
    let embeddings = v * d + 2 * p * d;
    let enc_layer = 4 * d * d + 2 * d + 2 * d * f;
    let dec_layer = 8 * d * d + 3 * d + 2 * d * f;
    let expected = embeddings + l * enc_layer + d + l * dec_layer + d + d * v;
    assert_eq!(expected, 243_456);
    let m = Model::init(cfg.clone(), 0).unwrap();
    assert_eq!(m.parameter_count(), expected);
    assert_eq!(cfg.parameter_count(), expected);
    let extra = ModelConfig {
        extra_layer_norm: true,
        ..cfg
    };
    assert_eq!(extra.parameter_count(), expected + 2 * d);
}

#[test]
fn uniform_logits_cost_ln_v() {
    let mut m = Model::init(tiny(), 1).unwrap();
    m.params.get_mut("decoder.lm_head").unwrap().data.fill(0.0);
    let loss = m.loss(0.0).unwrap();
    let batch = [pair(&[3, 4, 5], &[2, 5, 1]), pair(&[3, 4], &[1])];
    let l = loss_value(&loss, &m.params, &batch).unwrap();
    assert!((l - libm::log(6.0)).abs() < 1e-12);
    // Smoothing cannot change the loss of a uniform prediction.
    let l = loss_value(&m.loss(0.3).unwrap(), &m.params, &batch).unwrap();
    assert!((l - libm::log(6.0)).abs() < 1e-12);
}

#[test]
fn smoothed_floor() {
    // The best any model can do under smoothing eps is predict the smoothed
    // target q itself, paying its entropy H(q); the gradient vanishes there.
    let (v, eps) = (6usize, 0.1);
    let gold = 1.0 - eps + eps / v as f64;
    let off = eps / v as f64;
    let floor = -(gold * libm::log(gold)) - (v - 1) as f64 * off * libm::log(off);
    let logits: Vec<f64> = (0..v).map(|j| libm::log(if j == 2 { gold } else { off })).collect();
    let mut tape = Tape::<f64>::new();
    let x = tape.param(logits, 1, v);
    let ce = tape.cross_entropy(x, &[2], eps);
    assert!((tape.scalar(ce) - floor).abs() < 1e-12);
    let g = tape.backward(ce);
    assert!(g.wrt(x).unwrap().iter().all(|d| d.abs() < 1e-12));
}

#[test]
fn empty_target_rejected() {
    let m = Model::init(tiny(), 1).unwrap();
    assert!(loss_value(&m.loss(0.1).unwrap(), &m.params, &[pair(&[3, 4], &[])]).is_err());
    assert!(m.loss(1.0).is_err());
}

fn finite_difference_check(cfg: ModelConfig, smoothing: f64) -> f64 {
    let m = Model::init(cfg, 3).unwrap();
    let loss = m.loss(smoothing).unwrap();
    let batch = [pair(&[3, 4, 5, 2], &[5, 2, 1]), pair(&[4, 3], &[3, 1])];
    let (_, grads) = loss_and_grad(&loss, &m.params, &batch).unwrap();
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for ti in 0..m.params.len() {
        for k in 0..m.params.tensors()[ti].len() {
            let mut p = m.params.clone();
            p.tensors_mut()[ti].data[k] += h;
            let up = loss_value(&loss, &p, &batch).unwrap();
            p.tensors_mut()[ti].data[k] -= 2.0 * h;
            let down = loss_value(&loss, &p, &batch).unwrap();
            let fd = (up - down) / (2.0 * h);
            let an = grads[ti][k];
            let rel = (fd - an).abs() / (fd.abs().max(an.abs()).max(1e-3));
            worst = worst.max(rel);
        }
    }
    worst
}

#[test]
fn gradient_matches_central_differences() {
    assert!(tiny().parameter_count() <= 1000);
    let worst = finite_difference_check(tiny(), 0.1);
    assert!(worst < 1e-4, "worst relative error {worst}");
    let extra = ModelConfig {
        extra_layer_norm: true,
        ..tiny()
    };
    let worst = finite_difference_check(extra, 0.0);
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn batch_order_does_not_matter() {
    let m = Model::init(tiny(), 4).unwrap();
    let loss = m.loss(0.1).unwrap();
    let a = [pair(&[3, 4, 5], &[2, 5, 1]), pair(&[3, 4], &[1]), pair(&[4, 4, 2], &[3, 3, 3, 1])];
    let b = [a[2].clone(), a[0].clone(), a[1].clone()];
    let la = loss_value(&loss, &m.params, &a).unwrap();
    let lb = loss_value(&loss, &m.params, &b).unwrap();
    assert!((la - lb).abs() < 1e-6);
}

#[test]
fn dropout_changes_loss_only_when_seeded() {
    let cfg = ModelConfig { dropout: 0.3, ..tiny() };
    let m = Model::init(cfg, 4).unwrap();
    let loss = m.loss(0.0).unwrap();
    let batch = [pair(&[3, 4, 5], &[2, 5, 1])];
    let plain = loss_value(&loss, &m.params, &batch).unwrap();
    let d1 = loss_value(&loss.with_dropout_seed(1), &m.params, &batch).unwrap();
    let d1b = loss_value(&loss.with_dropout_seed(1), &m.params, &batch).unwrap();
    assert_eq!(d1, d1b);
    assert_ne!(plain, d1);
}

#[test]
fn frozen_embeddings_and_decoder_survive_training() {
    let m = Model::init(tiny(), 5).unwrap();
    let mask = m.trainable(&FreezeMask::embeddings_and_decoder()).unwrap();
    let loss = m.loss(0.1).unwrap();
    let batch = [pair(&[3, 4, 5], &[2, 5, 1]), pair(&[4, 3], &[3, 1])];
    let mut params = m.params.clone();
    let mut opt = Optimizer::adamw(
        1e-2,
        AdamWConfig {
            weight_decay: 0.1,
            ..AdamWConfig::default()
        },
    );
    for _ in 0..100 {
        let (_, mut g) = loss_and_grad(&loss, &params, &batch).unwrap();
        mask.apply(&mut g);
        opt.step(&mut params, &g, &mask).unwrap();
    }
    let changed = params.changed_tensors(&m.params);
    assert!(!changed.is_empty());
    for name in &changed {
        assert!(name.starts_with("encoder."), "{name} moved");
        assert_ne!(name, "token_embeddings");
    }
    for (name, t) in m.params.iter() {
        if name == "token_embeddings" || name.starts_with("decoder.") {
            assert!(crate::params::bitwise_eq(&t.data, &params.get(name).unwrap().data));
        }
    }
    assert!(changed.iter().any(|n| n.starts_with("encoder.layers")));
}

#[test]
fn freezing_everything_is_a_no_op() {
    let m = Model::init(tiny(), 5).unwrap();
    let mask = m.trainable(&FreezeMask::new(["*"])).unwrap();
    assert_eq!(mask.frozen_count(), m.params.len());
    let (_, g) = loss_and_grad(&m.loss(0.1).unwrap(), &m.params, &[pair(&[3, 4], &[2, 1])]).unwrap();
    let mut p = m.params.clone();
    Optimizer::sgd(1.0).step(&mut p, &g, &mask).unwrap();
    assert!(p.changed_tensors(&m.params).is_empty());
    assert_eq!(m.trainable(&FreezeMask::none()).unwrap().frozen_count(), 0);
}

/// Toy next-token model: log-probabilities as a pure function of the prefix.
fn toy_oracle(seed: u64, vocab: usize) -> impl Fn(&[u32]) -> Result<Vec<f64>> {
    move |prefix: &[u32]| {
        let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
        for t in prefix {
            h = (h ^ *t as u64).wrapping_mul(0x1000_0000_01b3);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        let logits: Vec<f64> = (0..vocab).map(|_| rand::Rng::gen_range(&mut rng, -3.0..3.0)).collect();
        Ok(log_softmax(&logits))
    }
}

/// Every admissible completion with its score.
fn enumerate(oracle: &dyn Fn(&[u32]) -> Result<Vec<f64>>, vocab: usize, eos: u32, max_len: usize, min_len: usize) -> Vec<(Vec<u32>, f64)> {
    let mut out = Vec::new();
    let mut stack = vec![(Vec::<u32>::new(), 0.0)];
    while let Some((prefix, score)) = stack.pop() {
        if prefix.len() == max_len {
            out.push((prefix, score));
            continue;
        }
        let lp = oracle(&prefix).unwrap();
        for tok in 0..vocab as u32 {
            let s = score + lp[tok as usize];
            if tok == eos {
                if prefix.len() >= min_len {
                    out.push((prefix.clone(), s));
                }
            } else {
                let mut p = prefix.clone();
                p.push(tok);
                stack.push((p, s));
            }
        }
    }
    out
}

#[test]
fn beam_equals_exhaustive_on_three_tokens() {
    for seed in 0..50 {
        let oracle = toy_oracle(seed, 3);
        let all = enumerate(&oracle, 3, 0, 2, 1);
        let best = all.iter().max_by(|a, b| a.1.partial_cmp(&b.1).unwrap()).unwrap();
        let got = beam_search(&oracle, 3, 0, None, &DecodeConfig::new(9, 2, 1)).unwrap();
        assert_eq!(&got, &best.0, "seed {seed}");
    }
}

proptest! {
    #[test]
    fn beam_one_is_greedy(seed in any::<u64>(), max_len in 1usize..8, min_len in 1usize..8) {
        let min_len = min_len.min(max_len);
        let oracle = toy_oracle(seed, 5);
        let beam = beam_search(&oracle, 5, 1, Some(0), &DecodeConfig::new(1, max_len, min_len)).unwrap();
        let greedy = greedy_search(&oracle, 1, Some(0), max_len, min_len).unwrap();
        prop_assert_eq!(beam, greedy);
    }

    #[test]
    fn length_limits_hold(seed in any::<u64>(), beam in 1usize..5, max_len in 1usize..7, min_len in 1usize..7) {
        let min_len = min_len.min(max_len);
        let oracle = toy_oracle(seed, 4);
        let out = beam_search(&oracle, 4, 1, Some(0), &DecodeConfig::new(beam, max_len, min_len)).unwrap();
        prop_assert!(out.len() <= max_len);
        prop_assert!(out.len() >= min_len);
        prop_assert!(!out.contains(&1) && !out.contains(&0));
    }

    #[test]
    fn wide_beam_is_exact(seed in any::<u64>(), min_len in 1usize..3) {
        let oracle = toy_oracle(seed, 3);
        let all = enumerate(&oracle, 3, 0, 3, min_len);
        let best = all.iter().max_by(|a, b| a.1.partial_cmp(&b.1).unwrap()).unwrap();
        let got = beam_search(&oracle, 3, 0, None, &DecodeConfig::new(27, 3, min_len)).unwrap();
        prop_assert_eq!(&got, &best.0);
    }
}

#[test]
fn decode_config_validation() {
    assert!(DecodeConfig::new(0, 5, 1).validate().is_err());
    assert!(DecodeConfig::new(1, 5, 0).validate().is_err());
    assert!(DecodeConfig::new(1, 5, 6).validate().is_err());
    assert!(DecodeConfig::default().validate().is_ok());
}

#[test]
fn model_generate_beam_one_matches_greedy() {
    let cfg = ModelConfig {
        max_positions: 12,
        ..tiny()
    };
    let m = Model::init(cfg, 11).unwrap();
    let input = TaggedSequence {
        tokens: vec![3, 4, 5, 2],
        lang: LangCode::from("xx"),
    };
    let out = m.generate(&input, &DecodeConfig::new(1, 8, 5)).unwrap();
    assert!(out.len() >= 5 && out.len() <= 8);
    let layout = Layout::new(&m.config);
    let enc = m.encode(&input.tokens).unwrap();
    let step = |prefix: &[u32]| -> Result<Vec<f64>> {
        let mut tape = Tape::<f64>::new();
        let p = constants(&mut tape, &m.params);
        let e = tape.constant(enc.clone(), 4, m.config.d_model);
        let mut dec_in = vec![PAD_ID];
        dec_in.extend_from_slice(prefix);
        let logits = transformer::decode(&mut tape, &m.config, &layout, &p, e, &dec_in, &mut None);
        let v = m.config.vocab_size;
        Ok(log_softmax(&tape.value(logits)[prefix.len() * v..]))
    };
    assert_eq!(out, greedy_search(step, EOS_ID, Some(PAD_ID), 8, 5).unwrap());
    assert!(m.generate(&input, &DecodeConfig::new(1, 12, 1)).is_err());
}

#[test]
fn incremental_scores_match_teacher_forcing() {
    // Unsmoothed loss of a target equals the mean negative log-probability
    // that the incremental decoder assigns to each of its tokens.
    let m = Model::init(tiny(), 2).unwrap();
    let input = vec![3u32, 4, 5];
    let target = vec![4u32, 2, 5, EOS_ID];
    let layout = Layout::new(&m.config);
    let enc = m.encode(&input).unwrap();
    let mut total = 0.0;
    for i in 0..target.len() {
        let mut tape = Tape::<f64>::new();
        let p = constants(&mut tape, &m.params);
        let e = tape.constant(enc.clone(), input.len(), m.config.d_model);
        let mut dec_in = vec![PAD_ID];
        dec_in.extend_from_slice(&target[..i]);
        let logits = transformer::decode(&mut tape, &m.config, &layout, &p, e, &dec_in, &mut None);
        let v = m.config.vocab_size;
        total -= log_softmax(&tape.value(logits)[i * v..(i + 1) * v])[target[i] as usize];
    }
    let expected = total / target.len() as f64;
    let got = loss_value(&m.loss(0.0).unwrap(), &m.params, &[pair(&input, &target)]).unwrap();
    assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
}

#[test]
fn tag_representation_properties() {
    let cfg = ModelConfig { vocab_size: 10, ..tiny() };
    let m = Model::init(cfg, 9).unwrap();
    let a = TaggedSequence {
        tokens: vec![3, 4, 8, 9],
        lang: LangCode::from("aa"),
    };
    let b = TaggedSequence {
        tokens: vec![5, 6, 8, 9],
        lang: LangCode::from("bb"),
    };
    let one = m.language_tag_representation(core::slice::from_ref(&a)).unwrap();
    let two = m.language_tag_representation(&[a.clone(), a.clone()]).unwrap();
    for (x, y) in one.iter().zip(&two) {
        assert!((x - y).abs() < 1e-12);
    }
    assert_eq!(one.len(), 4);
    assert!(m.language_tag_representation(&[]).is_err());
    assert!(m.language_tag_representation(&[a.clone(), b.clone()]).is_err());

    // Same text: any distance comes from the tag embeddings alone.
    let rb = m.language_tag_representation(core::slice::from_ref(&b)).unwrap();
    let d = crate::langspace::cosine_distance(&one, &rb).unwrap();
    assert!(d > 1e-6);
    let mut same = m.clone();
    let emb = same.params.get_mut("token_embeddings").unwrap();
    let d_model = 4;
    for (src, dst) in [(3usize, 5usize), (4, 6)] {
        let row: Vec<f64> = emb.data[src * d_model..(src + 1) * d_model].to_vec();
        emb.data[dst * d_model..(dst + 1) * d_model].copy_from_slice(&row);
    }
    let rb2 = same.language_tag_representation(core::slice::from_ref(&b)).unwrap();
    let ra2 = same.language_tag_representation(core::slice::from_ref(&a)).unwrap();
    assert!(crate::langspace::cosine_distance(&ra2, &rb2).unwrap() < 1e-12);
}

#[test]
fn from_parts_checks_shapes() {
    let m = Model::init(tiny(), 0).unwrap();
    assert!(Model::from_parts(tiny(), m.params.clone()).is_ok());
    let other = ModelConfig { d_ff: 8, ..tiny() };
    assert!(Model::from_parts(other, m.params).is_err());
}

#[test]
fn loss_is_differentiable_trait_object_free() {
    // Compile-time check that the loss is usable generically.
    fn takes<D: Differentiable<Example = EncodedPair>>(_: &D) {}
    takes(&Model::init(tiny(), 0).unwrap().loss(0.1).unwrap());
}
