use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::autograd::{Graph, Mode, ParamStore, Tensor};
use crate::data::{generate_outfits, GeneratorConfig, Outfit};
use crate::error::Error;
use crate::eval::evaluate;
use crate::model::{checkpoint, ContextualBert, MaskedBatch, MethodKind, ModelConfig, MASK_ID};
use crate::rng::{Rng, Stream};
use crate::training::*;

fn desk_outfits(n: usize, seed: u64) -> Vec<Outfit> {
    generate_outfits(
        &GeneratorConfig {
            n_outfits: n,
            ..GeneratorConfig::desk(seed)
        },
        1,
    )
    .unwrap()
}

fn scalar_store(value: f64) -> ParamStore<f64> {
    let mut store = ParamStore::new();
    store.insert("p", Tensor::vector(vec![value]), true);
    store
}

fn set_grad(store: &mut ParamStore<f64>, g: f64) {
    let id = store.id("p").unwrap();
    store.get_mut(id).grad = Some(Tensor::vector(vec![g]));
}

fn scalar(store: &ParamStore<f64>) -> f64 {
    store.by_name("p").unwrap().value.data()[0]
}

#[test]
fn masked_position_is_uniform() {
    let items = [10, 11, 12, 13];
    let mut rng = Rng::new(0, Stream::Masking);
    let trials = 100_000;
    let mut counts = [0usize; 4];
    for _ in 0..trials {
        counts[mask_outfit(&items, &mut rng).unwrap().position] += 1;
    }
    let expected = trials as f64 / 4.0;
    let chi2: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let critical = ChiSquared::new(3.0).unwrap().inverse_cdf(0.999);
    assert!(
        chi2 < critical,
        "chi2 {chi2} >= {critical}, counts {counts:?}"
    );
}

#[test]
fn mask_replaces_exactly_one_item() {
    let mut rng = Rng::new(3, Stream::Masking);
    for len in 2..=8 {
        let items: Vec<usize> = (0..len).map(|i| 100 + i).collect();
        for _ in 0..50 {
            let m = mask_outfit(&items, &mut rng).unwrap();
            assert_eq!(m.input.iter().filter(|&&id| id == MASK_ID).count(), 1);
            assert_eq!(m.input[m.position], MASK_ID);
            assert_eq!(m.target, items[m.position]);
            for (i, (&a, &b)) in m.input.iter().zip(&items).enumerate() {
                if i != m.position {
                    assert_eq!(a, b);
                }
            }
        }
    }
}

#[test]
fn short_outfits_are_skipped() {
    let mut rng = Rng::new(0, Stream::Masking);
    assert!(mask_outfit(&[7], &mut rng).is_none());
    assert!(mask_outfit(&[], &mut rng).is_none());
}

#[test]
fn adam_zero_gradient_leaves_parameter() {
    let mut store = scalar_store(0.7);
    let mut adam = Adam::new(AdamConfig::default(), &store);
    for _ in 0..5 {
        set_grad(&mut store, 0.0);
        adam.step(&mut store).unwrap();
    }
    assert_eq!(scalar(&store), 0.7);
}

#[test]
fn adam_constant_gradient_descends_monotonically() {
    for g in [2.5, -0.3] {
        let mut store = scalar_store(0.0);
        let mut adam = Adam::new(AdamConfig::default(), &store);
        let mut prev = scalar(&store);
        for _ in 0..200 {
            set_grad(&mut store, g);
            adam.step(&mut store).unwrap();
            let now = scalar(&store);
            assert!((now - prev) * g.signum() < 0.0);
            prev = now;
        }
    }
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    let mut store = scalar_store(1.0);
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        },
        &store,
    );
    set_grad(&mut store, 1.0);
    adam.step(&mut store).unwrap();
    // m_hat = v_hat = 1 after bias correction.
    let expected = 1.0 - 0.1 / (1.0 + 1e-8);
    assert!((scalar(&store) - expected).abs() < 1e-15);
    assert!((1.0 - scalar(&store) - 0.1).abs() < 1e-8);
    assert!(store.by_name("p").unwrap().grad.is_none());
}

#[test]
fn adam_matches_reference_recursion() {
    let config = AdamConfig {
        learning_rate: 0.05,
        beta1: 0.8,
        beta2: 0.99,
        eps: 1e-6,
    };
    let mut store = scalar_store(0.3);
    let mut adam = Adam::new(config, &store);
    let (mut p, mut m, mut v) = (0.3f64, 0.0f64, 0.0f64);
    let mut rng = Rng::new(9, Stream::Other(1));
    for t in 1..=60 {
        let g = rng.normal() + p;
        set_grad(&mut store, g);
        adam.step(&mut store).unwrap();
        m = 0.8 * m + 0.2 * g;
        v = 0.99 * v + 0.01 * g * g;
        let m_hat = m / (1.0 - 0.8f64.powi(t));
        let v_hat = v / (1.0 - 0.99f64.powi(t));
        p -= 0.05 * m_hat / (v_hat.sqrt() + 1e-6);
        assert!((scalar(&store) - p).abs() < 1e-12, "step {t}");
    }
}

#[test]
fn adam_rejects_non_finite_gradient_by_name() {
    let mut store = scalar_store(1.0);
    store.insert("q", Tensor::vector(vec![2.0, 3.0]), true);
    let mut adam = Adam::new(AdamConfig::default(), &store);
    set_grad(&mut store, 1.0);
    let q = store.id("q").unwrap();
    store.get_mut(q).grad = Some(Tensor::vector(vec![0.5, f64::NAN]));
    match adam.step(&mut store) {
        Err(Error::NonFinite { tensor }) => assert!(tensor.contains('q'), "{tensor}"),
        other => panic!("expected non-finite error, got {other:?}"),
    }
    assert_eq!(scalar(&store), 1.0);
    assert_eq!(store.by_name("q").unwrap().value.data(), &[2.0, 3.0]);
}

#[test]
fn adam_step_touches_exactly_the_tensors_with_gradient() {
    let outfits = desk_outfits(8, 4);
    for method in [MethodKind::None, MethodKind::Gsu] {
        let mut model = ContextualBert::<f64>::new(ModelConfig::desk(method), 2).unwrap();
        let mut batch = MaskedBatch::new();
        let mut rng = Rng::new(0, Stream::Masking);
        for o in &outfits {
            let m = mask_outfit(&o.items, &mut rng).unwrap();
            batch.push(&m.input, m.position, &o.context, m.target);
        }
        let g = Graph::new();
        let (loss, _) = model
            .loss(&g, &batch, Mode::Eval, &mut Rng::new(0, Stream::Dropout))
            .unwrap();
        let grads = g.backward(loss).unwrap();
        model.params_mut().accumulate(&grads);
        drop(grads);
        let names: Vec<String> = model.params().iter().map(|(_, p)| p.name.clone()).collect();
        let zeroed = model.params().id(&names[1]).unwrap();
        let dropped = model.params().id(&names[names.len() - 1]).unwrap();
        let shape = model.params().value(zeroed).shape().to_vec();
        model.params_mut().get_mut(zeroed).grad = Some(Tensor::zeros(&shape));
        model.params_mut().get_mut(dropped).grad = None;
        let before: Vec<(String, Tensor<f64>, bool)> = model
            .params()
            .iter()
            .map(|(_, p)| {
                let nonzero = p
                    .grad
                    .as_ref()
                    .is_some_and(|g| g.data().iter().any(|&x| x != 0.0));
                (p.name.clone(), p.value.clone(), nonzero)
            })
            .collect();
        let mut adam = Adam::new(AdamConfig::default(), model.params());
        adam.step(model.params_mut()).unwrap();
        for ((name, old, nonzero), (_, p)) in before.iter().zip(model.params().iter()) {
            let changed = old.data() != p.value.data();
            assert_eq!(changed, *nonzero, "{method}: {name}");
        }
    }
}

#[test]
fn one_epoch_lowers_training_loss() {
    let outfits = desk_outfits(100, 5);
    let mut config = TrainConfig::new(ModelConfig::desk(MethodKind::C), 0);
    config.epochs = 1;
    config.batch_size = 10;
    let out = train::<f32>(&config, &outfits, None, None, 1).unwrap();
    let before = evaluate(
        &ContextualBert::<f32>::new(config.model.clone(), config.seed).unwrap(),
        &outfits,
        &config.recall_ranks,
        512,
        1,
    )
    .unwrap();
    let after = evaluate(&out.model, &outfits, &config.recall_ranks, 512, 1).unwrap();
    assert!(after.cross_entropy < before.cross_entropy);
    let losses: Vec<f64> = out.records.iter().map(|r| r.loss).collect();
    assert_eq!(losses.len(), 10);
    assert!(losses.last().unwrap() < losses.first().unwrap());
}

#[test]
fn identical_configs_give_identical_artifacts() {
    let outfits = desk_outfits(120, 6);
    let (train_set, val_set) = outfits.split_at(100);
    for precision in [32, 64] {
        let mut config = TrainConfig::new(ModelConfig::desk(MethodKind::Gs), 11);
        config.epochs = 2;
        config.batch_size = 16;
        config.checkpoint_every = 1;
        config.precision = precision;
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        for (i, d) in dirs.iter().enumerate() {
            train_any(&config, train_set, Some(val_set), Some(d.path()), 1 + i).unwrap();
        }
        for file in [
            "metrics.jsonl",
            "model.ckpt",
            "epoch-001.ckpt",
            "epoch-002.ckpt",
        ] {
            let a = std::fs::read(dirs[0].path().join(file)).unwrap();
            let b = std::fs::read(dirs[1].path().join(file)).unwrap();
            assert!(a == b, "{file} differs at {precision}-bit");
        }
        let ckpt = std::fs::read(dirs[0].path().join("model.ckpt")).unwrap();
        assert_eq!(checkpoint::stored_bits(&ckpt).unwrap(), precision);
    }
}

#[test]
fn different_seeds_give_different_runs() {
    let outfits = desk_outfits(64, 6);
    let mut config = TrainConfig::new(ModelConfig::desk(MethodKind::Np), 1);
    config.epochs = 1;
    let a = train::<f32>(&config, &outfits, None, None, 1).unwrap();
    config.seed = 2;
    let b = train::<f32>(&config, &outfits, None, None, 1).unwrap();
    assert_ne!(a.records[0].loss, b.records[0].loss);
}

#[test]
fn metrics_log_has_one_record_per_step_and_epoch() {
    let outfits = desk_outfits(60, 8);
    let (train_set, val_set) = outfits.split_at(50);
    let mut config = TrainConfig::new(ModelConfig::desk(MethodKind::None), 3);
    config.epochs = 2;
    config.batch_size = 20;
    let dir = tempfile::tempdir().unwrap();
    train::<f32>(&config, train_set, Some(val_set), Some(dir.path()), 1).unwrap();
    let text = std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let splits: Vec<&str> = lines.iter().map(|l| l["split"].as_str().unwrap()).collect();
    assert_eq!(
        splits,
        [
            "train",
            "train",
            "train",
            "validation",
            "train",
            "train",
            "train",
            "validation"
        ]
    );
    for l in &lines {
        for key in [
            "step", "epoch", "loss", "r@1", "r@5", "r@50", "seed", "method",
        ] {
            assert!(l.get(key).is_some(), "missing {key} in {l}");
        }
        assert_eq!(l["method"], "none");
        assert_eq!(l["seed"], 3);
    }
    assert_eq!(lines[7]["step"], 6);
    assert!(dir.path().join("model.ckpt").exists());
}

#[test]
fn small_corpus_is_memorized() {
    let outfits = desk_outfits(50, 0);
    let mut config = TrainConfig::new(ModelConfig::desk(MethodKind::None), 0);
    config.epochs = 200;
    config.batch_size = 4;
    config.model.dropout_p = 0.0;
    let out = train::<f32>(&config, &outfits, None, None, 1).unwrap();
    let m = evaluate(&out.model, &outfits, &config.recall_ranks, 512, 1).unwrap();
    assert!(
        m.cross_entropy < 0.1,
        "train cross-entropy {}",
        m.cross_entropy
    );
}

#[test]
fn divergence_aborts_and_keeps_last_good_checkpoint() {
    let outfits = desk_outfits(64, 1);
    let mut config = TrainConfig::new(ModelConfig::desk(MethodKind::None), 0);
    config.batch_size = 8;
    config.adam.learning_rate = 1e30;
    let dir = tempfile::tempdir().unwrap();
    match train::<f32>(&config, &outfits, None, Some(dir.path()), 1) {
        Err(Error::NonFinite { tensor }) => assert!(
            tensor.contains("loss") || tensor.contains("gradient"),
            "{tensor}"
        ),
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("training with lr 1e30 should diverge"),
    }
    let kept = checkpoint::load(&dir.path().join("last-good.ckpt")).unwrap();
    assert_eq!(kept.config(), &config.model);
    assert!(kept.params().iter().all(|(_, p)| p.value.is_finite()));
    assert!(dir.path().join("metrics.jsonl").exists());
    assert!(!dir.path().join("model.ckpt").exists());
}

#[test]
fn precision_must_match_float_type() {
    let outfits = desk_outfits(10, 0);
    let mut config = TrainConfig::new(ModelConfig::desk(MethodKind::None), 0);
    config.precision = 64;
    assert!(matches!(
        train::<f32>(&config, &outfits, None, None, 1),
        Err(Error::Config(_))
    ));
    config.precision = 16;
    assert!(matches!(config.validate(), Err(Error::Config(_))));
}
