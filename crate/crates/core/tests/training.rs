mod common;

use std::collections::BTreeMap;

use mmnmt::data::TrainingTriple;
use mmnmt::model::{ParamKind, ParamSpec};
use mmnmt::training::checkpoint::Checkpoint;
use mmnmt::training::adadelta::{clip_global_norm, AdadeltaState};
use mmnmt::training::dropout::mask_seed;
use mmnmt::training::init::{init_params, random_orthogonal};
use mmnmt::training::{
    corpus_loss, epoch_batches, make_dropout_masks, param_count, train, validate, EarlyStopState, StopDecision,
    TrainConfig, TrainData, TrainState,
};
use mmnmt::{Error, Model, ModelConfig, ParamSet, Tape, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn toy_corpus() -> Vec<TrainingTriple> {
    [(vec![4, 5, 6], vec![7, 8]), (vec![6, 7], vec![5, 9, 4]), (vec![8, 4, 9, 5], vec![6, 6])]
        .into_iter()
        .enumerate()
        .map(|(i, (src, tgt))| TrainingTriple {
            src,
            tgt,
            image_id: None,
            line: i + 1,
        })
        .collect()
}

fn quick_config() -> TrainConfig {
    let mut tc = TrainConfig::recipe(false);
    tc.batch_size = 2;
    tc.max_decode_len = 8;
    tc
}

#[test]
fn initialisation_statistics() {
    let mut cfg = ModelConfig::tiny(300, 300, true);
    cfg.enc_hidden = 24;
    cfg.dec_hidden = 24;
    cfg.feat_dim = 40;
    let model = Model::<f64>::new(cfg.clone(), 17).unwrap();
    let mut gaussian = Vec::new();
    for spec in cfg.param_specs() {
        let t = model.params().by_name(&spec.name).unwrap();
        match spec.kind {
            ParamKind::Recurrent => {
                let n = spec.shape[0];
                let qtq = t.transpose().matmul(t).unwrap();
                for i in 0..n {
                    for j in 0..n {
                        let expected = if i == j { 1.0 } else { 0.0 };
                        assert!((qtq.at(i, j) - expected).abs() < 1e-5, "{}", spec.name);
                    }
                }
            }
            ParamKind::Bias => assert!(t.data().iter().all(|&x| x == 0.0)),
            ParamKind::Embedding | ParamKind::Weight => gaussian.extend_from_slice(t.data()),
        }
    }
    let n = gaussian.len() as f64;
    let mean = gaussian.iter().sum::<f64>() / n;
    let var = gaussian.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!(gaussian.len() > 10_000);
    assert!((var / 1e-4 - 1.0).abs() < 0.1, "sampled variance {var}");
}

#[test]
fn dropout_masks_are_tied_to_sentence_and_step() {
    let cfg = ModelConfig::tiny(10, 10, true);
    let a = make_dropout_masks::<f64>(&cfg, 0.5, 3, 1, 7);
    assert_eq!(a, make_dropout_masks::<f64>(&cfg, 0.5, 3, 1, 7));
    assert_ne!(a, make_dropout_masks::<f64>(&cfg, 0.5, 3, 1, 8));
    assert_ne!(a, make_dropout_masks::<f64>(&cfg, 0.5, 3, 2, 7));
    assert_ne!(mask_seed(1, 2, 3), mask_seed(1, 3, 2));
    assert!(a.image.is_some());
    for m in [&a.encoder_forward, &a.decoder, &a.readout] {
        assert!(m.data().iter().all(|&x| x == 0.0 || x == 2.0));
    }
}

fn loss_gradients(model: &Model<f64>, masks: &mmnmt::training::DropoutMasks<f64>) -> Vec<Tensor<f64>> {
    let tape = Tape::new();
    let vars = model.bind(&tape, true);
    let (loss, _) = model
        .sentence_loss_on(&tape, &vars, &[4, 5, 6, 7, 8, 9], &[5, 7, 9, 4, 6], None, Some(masks))
        .unwrap();
    tape.backward(loss).unwrap().for_params(model.params())
}

/// A recurrent unit zeroed by the mask contributes nothing through `U`
/// at any time step, so the matching rows of every `U` gate matrix get
/// exactly zero gradient. A mask resampled per step would leak.
#[test]
fn one_recurrent_mask_covers_every_time_step() {
    let cfg = ModelConfig::tiny(12, 12, false);
    let model: Model<f64> = common::randomized(cfg.clone(), 2, 0.7);
    let masks = make_dropout_masks::<f64>(&cfg, 0.5, 99, 1, 0);
    let grads = loss_gradients(&model, &masks);
    let cases = [
        ("enc.fwd", &masks.encoder_forward),
        ("enc.bwd", &masks.encoder_backward),
        ("dec.rec1", &masks.decoder),
    ];
    for (prefix, mask) in cases {
        assert!(mask.data().contains(&0.0) && mask.data().contains(&2.0), "{prefix}");
        for gate in ["U_z", "U_r", "U_h"] {
            let id = model.params().id(&format!("{prefix}.{gate}")).unwrap();
            let g = &grads[id.index()];
            for (k, &m) in mask.data().iter().enumerate() {
                let row_norm: f64 = g.row_slice(k).iter().map(|x| x.abs()).sum();
                if m == 0.0 {
                    assert_eq!(row_norm, 0.0, "{prefix}.{gate} row {k}");
                } else {
                    assert!(row_norm > 0.0, "{prefix}.{gate} row {k}");
                }
            }
        }
    }
}

proptest! {
    #[test]
    fn early_stop_fires_at_best_epoch_plus_patience(scores in proptest::collection::vec(0.0f64..50.0, 1..60), patience in 1usize..25) {
        let mut s = EarlyStopState::new(patience);
        let mut stop = None;
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, &b) in scores.iter().chain(std::iter::repeat(&-1.0)).enumerate().take(200) {
            let epoch = i + 1;
            if b > best.0 {
                best = (b, epoch);
            }
            if s.observe(epoch, b) == StopDecision::Stop {
                stop = Some(epoch);
                break;
            }
        }
        prop_assert_eq!(stop, Some(best.1 + patience));
        prop_assert_eq!(s.best_epoch, best.1);
    }
}

#[test]
fn early_stop_with_recipe_patience() {
    let mut s = EarlyStopState::new(TrainConfig::recipe(true).patience);
    let scores = [3.0, 8.0, 12.0, 12.0, 11.0];
    let mut epoch = 0;
    loop {
        epoch += 1;
        let bleu = scores.get(epoch - 1).copied().unwrap_or(10.0);
        if s.observe(epoch, bleu) == StopDecision::Stop {
            break;
        }
    }
    assert_eq!(s.best_epoch, 3);
    assert_eq!(epoch, 23);
}

#[test]
fn training_run_stops_at_best_epoch_plus_patience() {
    let data = toy_corpus();
    let mut model = Model::<f64>::new(ModelConfig::tiny(10, 10, false), 1).unwrap();
    let mut tc = quick_config();
    tc.patience = 3;
    tc.max_epochs = 200;
    let outcome = train(
        &mut model,
        TrainData {
            train: &data,
            valid: &data,
            features: None,
        },
        &tc,
        None,
        |_, _, _| Ok(()),
    )
    .unwrap();
    let last = outcome.history.last().unwrap();
    if outcome.stopped_early {
        assert_eq!(last.epoch, last.best_epoch + 3);
    } else {
        assert_eq!(last.epoch, 200);
    }
    let best = outcome.history.iter().map(|r| r.valid_bleu).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(last.best_bleu, best);
    assert!(outcome.best_params.is_some());
}

#[test]
fn single_pair_loss_decreases_monotonically() {
    let pair = vec![TrainingTriple {
        src: vec![4, 5, 6],
        tgt: vec![7, 8, 9],
        image_id: None,
        line: 1,
    }];
    let data = TrainData {
        train: &pair,
        valid: &pair,
        features: None,
    };
    let mut model = Model::<f64>::new(ModelConfig::tiny(10, 10, false), 5).unwrap();
    let mut tc = quick_config();
    tc.dropout = 0.0;
    tc.max_epochs = 50;
    tc.patience = 100;
    let mut losses = vec![corpus_loss(&model, &data, &pair).unwrap()];
    train(&mut model, data, &tc, None, |_, m, _| {
        losses.push(corpus_loss(m, &data, &pair)?);
        Ok(())
    })
    .unwrap();
    assert_eq!(losses.len(), 51);
    for w in losses.windows(2) {
        assert!(w[1] <= w[0] + 1e-9, "{} -> {}", w[0], w[1]);
    }
    assert!(losses[50] < losses[0]);
}

fn run(seed: u64, epochs: usize) -> Vec<f64> {
    let data = toy_corpus();
    let mut model = Model::<f64>::new(ModelConfig::tiny(10, 10, false), 7).unwrap();
    let mut tc = quick_config();
    tc.seed = seed;
    tc.max_epochs = epochs;
    let outcome = train(
        &mut model,
        TrainData {
            train: &data,
            valid: &data,
            features: None,
        },
        &tc,
        None,
        |_, _, _| Ok(()),
    )
    .unwrap();
    outcome.history.iter().map(|r| r.train_loss).collect()
}

#[test]
fn identical_seeds_give_identical_losses() {
    assert_eq!(run(11, 2), run(11, 2));
    assert_ne!(run(11, 1), run(12, 1));
}

#[test]
fn batches_cover_every_example_once() {
    let lens: Vec<usize> = (0..103).map(|i| i % 17 + 1).collect();
    let batches = epoch_batches(&lens, 8, 5, 1);
    let mut all: Vec<usize> = batches.iter().flatten().copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..103).collect::<Vec<_>>());
    assert!(batches.iter().all(|b| !b.is_empty() && b.len() <= 8));
    assert_eq!(batches, epoch_batches(&lens, 8, 5, 1));
    assert_ne!(batches, epoch_batches(&lens, 8, 5, 2));
}

#[test]
fn checkpoint_round_trip_reproduces_validation_exactly() {
    let cfg = ModelConfig::tiny(10, 10, true);
    let (data, feats) = {
        let (t, f) = common::synthetic_pairs(6, 10, 3, &cfg);
        let f = mmnmt::vision::FeatureStore::new(
            cfg.feat_len,
            cfg.feat_dim,
            f.sets()
                .iter()
                .map(|s| mmnmt::vision::SpatialFeatureSet {
                    image_id: s.image_id.clone(),
                    features: s.features.cast(),
                })
                .collect(),
        )
        .unwrap();
        (t, f)
    };
    let td = TrainData {
        train: &data,
        valid: &data,
        features: Some(&feats),
    };
    let tc = {
        let mut tc = quick_config();
        tc.max_epochs = 4;
        tc
    };

    let mut straight = Model::<f64>::new(cfg.clone(), 9).unwrap();
    train(&mut straight, td, &tc, None, |_, _, _| Ok(())).unwrap();

    let mut model = Model::<f64>::new(cfg.clone(), 9).unwrap();
    let mut half = tc.clone();
    half.max_epochs = 2;
    let outcome = train(&mut model, td, &half, None, |_, _, _| Ok(())).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let mut ck = Checkpoint::new(model.clone());
    ck.train_config = Some(tc.clone());
    ck.state = Some(outcome.state.clone());
    ck.save(&path).unwrap();

    let loaded = Checkpoint::<f64>::load(&path).unwrap();
    assert_eq!(loaded.model, model);
    assert_eq!(loaded.train_config.as_ref(), Some(&tc));
    assert_eq!(loaded.state.as_ref(), Some(&outcome.state));
    assert_eq!(
        corpus_loss(&loaded.model, &td, &data).unwrap().to_bits(),
        corpus_loss(&model, &td, &data).unwrap().to_bits()
    );
    assert_eq!(validate(&loaded.model, &td, &data, 8).unwrap(), validate(&model, &td, &data, 8).unwrap());

    let mut resumed = loaded.model;
    train(&mut resumed, td, &tc, loaded.state, |_, _, _| Ok(())).unwrap();
    assert_eq!(resumed.params(), straight.params());
}

#[test]
fn checkpoint_rejects_corruption() {
    let model = Model::<f32>::new(ModelConfig::tiny(6, 7, false), 1).unwrap();
    let bytes = Checkpoint::new(model).to_bytes().unwrap();
    assert!(Checkpoint::<f32>::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    assert!(Checkpoint::<f64>::from_bytes(&bytes).is_err());
    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    assert!(Checkpoint::<f32>::from_bytes(&bad).is_err());
    assert_eq!(
        mmnmt::training::checkpoint::peek_precision(&bytes).unwrap(),
        mmnmt::Precision::F32
    );
}

#[test]
fn toy_parameter_count_matches_hand_count() {
    let mut cfg = ModelConfig::tiny(10, 10, false);
    for d in [
        &mut cfg.src_emb,
        &mut cfg.tgt_emb,
        &mut cfg.enc_hidden,
        &mut cfg.dec_hidden,
        &mut cfg.att_dim,
        &mut cfg.proj_dim,
    ] {
        *d = 2;
    }
    cfg.feat_len = 5;
    cfg.feat_dim = 3;
    // embeddings 20+20, encoder GRUs 2*30, init 4*2+2, rec1 30,
    // source attention 2+4+8, rec2 3*8+3*4, output 20+4+4+8
    let text = param_count(&cfg);
    assert_eq!(text.total, 226);
    assert_eq!(text.components["enc.embedding"], 20);
    cfg.multimodal = true;
    // image attention 2+4+6, gate 3, rec2 image 3*6, L_ci 6
    let mm = param_count(&cfg);
    assert_eq!(mm.total, 265);
    let model = Model::<f32>::new(cfg, 0).unwrap();
    assert_eq!(model.params().total_elements(), 265);
}

#[test]
fn full_size_parameter_counts() {
    let text = param_count(&ModelConfig::full_size(false)).total as f64;
    let mm = param_count(&ModelConfig::full_size(true)).total as f64;
    assert!((text / 200e6 - 1.0).abs() <= 0.10, "text-only total {text}");
    let overhead = 100.0 * (mm - text) / text;
    // analytic overhead of the image path at these dimensions
    assert!((overhead - 2.99).abs() < 0.01, "overhead {overhead}");
}

#[test]
fn divergence_is_reported_with_location() {
    let data = toy_corpus();
    let mut model = Model::<f32>::new(ModelConfig::tiny(10, 10, false), 1).unwrap();
    let id = model.params().id("dec.out.L_o").unwrap();
    for x in model.params_mut().get_mut(id).data_mut() {
        *x = f32::MAX;
    }
    let err = train(
        &mut model,
        TrainData {
            train: &data,
            valid: &data,
            features: None,
        },
        &quick_config(),
        None,
        |_, _, _| Ok(()),
    )
    .unwrap_err();
    match err {
        Error::Diverged { epoch, batch, detail } => {
            assert_eq!((epoch, batch), (1, 1));
            assert!(detail.contains("dec.out.L_o"), "{detail}");
        }
        other => panic!("expected divergence, got {other}"),
    }
}

#[test]
fn train_config_round_trips_and_validates() {
    let tc = TrainConfig::recipe(true);
    assert_eq!((tc.batch_size, tc.dropout, tc.patience), (40, 0.5, 20));
    assert_eq!(TrainConfig::recipe(false).batch_size, 80);
    let map: BTreeMap<String, String> = tc.to_pairs().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    let mut back = TrainConfig::recipe(false);
    back.update_from(&map).unwrap();
    assert_eq!(back, tc);
    let bad: BTreeMap<String, String> = [("dropout".to_string(), "1.5".to_string())].into();
    assert!(back.update_from(&bad).is_err());
    let fresh = TrainState::<f32>::fresh(Model::<f32>::zeros(ModelConfig::tiny(5, 5, false)).unwrap().params(), &tc);
    assert_eq!(fresh.epoch, 0);
}

fn spec(name: &str, shape: [usize; 2], kind: ParamKind) -> ParamSpec {
    ParamSpec {
        name: name.into(),
        shape,
        kind,
    }
}

#[test]
fn biases_are_exactly_zero() {
    let p = init_params::<f32>(&[spec("b", [1, 17], ParamKind::Bias)], 1).unwrap();
    assert!(p.get(p.id("b").unwrap()).data().iter().all(|&x| x == 0.0));
}

#[test]
fn rectangular_orthogonal_has_orthonormal_short_side() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let q = random_orthogonal(3, 6, &mut rng);
    let t = Tensor::<f64>::from_f64(&[3, 6], &q).unwrap();
    let qqt = t.matmul(&t.transpose()).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            assert!((qqt.at(i, j) - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
        }
    }
}

#[test]
fn deterministic_per_seed() {
    let specs = [spec("W", [4, 3], ParamKind::Weight), spec("U", [3, 3], ParamKind::Recurrent)];
    let a = init_params::<f64>(&specs, 5).unwrap();
    let b = init_params::<f64>(&specs, 5).unwrap();
    let c = init_params::<f64>(&specs, 6).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn zero_probability_gives_ones() {
    let cfg = ModelConfig::tiny(5, 6, true);
    let m = make_dropout_masks::<f64>(&cfg, 0.0, 1, 2, 3);
    for t in [&m.encoder_forward, &m.encoder_backward, m.image.as_ref().unwrap(), &m.decoder, &m.readout] {
        assert!(t.data().iter().all(|&x| x == 1.0));
    }
}

#[test]
fn keep_rate_is_one_minus_p() {
    let mut cfg = ModelConfig::tiny(5, 6, false);
    cfg.dec_hidden = 100_000;
    let m = make_dropout_masks::<f64>(&cfg, 0.5, 123, 0, 0);
    let kept = m.decoder.data().iter().filter(|&&x| x != 0.0).count() as f64 / 100_000.0;
    assert!((kept - 0.5).abs() < 0.01, "{kept}");
    assert!(m.decoder.data().iter().all(|&x| x == 0.0 || x == 2.0));
}

fn single(value: f64) -> ParamSet<f64> {
    let mut p = ParamSet::new();
    p.insert("x", Tensor::scalar(value)).unwrap();
    p
}

#[test]
fn zero_gradient_changes_nothing_and_decays() {
    let mut p = single(1.5);
    let mut s = AdadeltaState::new(&p, 0.95, 1e-6);
    s.grad_sq[0] = Tensor::scalar(0.4);
    s.update_sq[0] = Tensor::scalar(0.2);
    s.step(&mut p, &[Tensor::scalar(0.0)]).unwrap();
    assert_eq!(p.get(p.id("x").unwrap()).data(), &[1.5]);
    assert!((s.grad_sq[0].data()[0] - 0.38).abs() < 1e-15);
    assert!((s.update_sq[0].data()[0] - 0.19).abs() < 1e-15);
}

#[test]
fn first_step_closed_form() {
    let mut p = single(0.0);
    let mut s = AdadeltaState::new(&p, 0.95, 1e-6);
    s.step(&mut p, &[Tensor::scalar(1.0)]).unwrap();
    let expected = -(1e-6f64).sqrt() / (0.05f64 + 1e-6).sqrt();
    assert!((p.get(p.id("x").unwrap()).data()[0] - expected).abs() < 1e-15);
}

#[test]
fn quadratic_loss_decreases() {
    let mut p = single(3.0);
    let mut s = AdadeltaState::new(&p, 0.95, 1e-6);
    let loss = |x: f64| (x - 1.0).powi(2);
    let x0 = p.get(p.id("x").unwrap()).data()[0];
    s.step(&mut p, &[Tensor::scalar(2.0 * (x0 - 1.0))]).unwrap();
    assert!(loss(p.get(p.id("x").unwrap()).data()[0]) < loss(x0));
}

#[test]
fn clipping_bounds_norm() {
    let mut g = vec![Tensor::<f64>::row(vec![3.0, 4.0])];
    assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
    assert!((g[0].norm_sq() - 1.0).abs() < 1e-12);
    let mut small = vec![Tensor::<f64>::row(vec![0.3, 0.4])];
    clip_global_norm(&mut small, 1.0);
    assert_eq!(small[0].data(), &[0.3, 0.4]);
}

proptest! {
    #[test]
    fn update_opposes_gradient(grads in proptest::collection::vec(-5.0f64..5.0, 1..8), warm in 0.0f64..1.0) {
        let n = grads.len();
        let mut p = ParamSet::new();
        p.insert("x", Tensor::zeros(&[1, n])).unwrap();
        let mut s = AdadeltaState::new(&p, 0.95, 1e-6);
        s.update_sq[0] = Tensor::full(&[1, n], warm);
        s.step(&mut p, &[Tensor::row(grads.clone())]).unwrap();
        for (x, g) in p.get(p.id("x").unwrap()).data().iter().zip(&grads) {
            prop_assert!(x * g <= 0.0);
            if *g != 0.0 {
                prop_assert!(*x != 0.0);
            }
        }
        prop_assert!(s.grad_sq[0].data().iter().all(|&v| v >= 0.0));
    }
}
