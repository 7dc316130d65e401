use approx::assert_abs_diff_eq;

use super::*;
use crate::autograd::{Graph, Tensor};
use crate::error::Error;
use crate::model::{ContextualBert, MethodKind, ModelConfig, RESERVED_IDS};

fn small(seed: u64) -> GeneratorConfig {
    GeneratorConfig {
        n_outfits: 3000,
        ..GeneratorConfig::desk(seed)
    }
}

/// Two clusters of four articles, lengths 2 or 3, two binary features.
fn tiny(eta: f64) -> GeneratorConfig {
    GeneratorConfig {
        vocab_size: 10,
        n_clusters: 2,
        eta,
        popularity_skew: 1.0,
        n_outfits: 10,
        schema: ContextSchema::new(vec![
            FeatureSpec::new("a", 2, 2),
            FeatureSpec::new("b", 2, 2),
        ]),
        seed: 3,
        min_len: 2,
        length_probs: vec![0.5, 0.5],
    }
}

#[test]
fn embed_context_examples() {
    let zeros = vec![Tensor::<f64>::zeros(&[3, 2]), Tensor::zeros(&[4, 5])];
    assert_eq!(embed_context(&[1, 3], &zeros).unwrap(), Tensor::zeros(&[7]));

    let single = vec![Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap()];
    assert_eq!(
        embed_context(&[1], &single).unwrap().data(),
        &[4.0, 5.0, 6.0]
    );

    let two = vec![
        Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 2.0]]).unwrap(),
        Tensor::from_rows(&[vec![3.0, 4.0, 5.0]]).unwrap(),
    ];
    assert_eq!(
        embed_context(&[1, 0], &two).unwrap().data(),
        &[1.0, 2.0, 3.0, 4.0, 5.0]
    );
    assert!(matches!(embed_context(&[2, 0], &two), Err(Error::Data(_))));
    assert!(embed_context(&[1], &two).is_err());
}

#[test]
fn model_context_embedding_matches_plain_concatenation() {
    let model = ContextualBert::<f64>::new(ModelConfig::desk(MethodKind::Gs), 1).unwrap();
    let tables: Vec<Tensor<f64>> = (0..3)
        .map(|f| {
            model
                .params()
                .by_name(&format!("ctx.feat{f}"))
                .unwrap()
                .value
                .clone()
        })
        .collect();
    let contexts = vec![vec![0, 7, 3], vec![5, 5, 1]];
    let g = Graph::new();
    let rows = model.embed_context(&g, &contexts).unwrap().value();
    for (r, ctx) in contexts.iter().enumerate() {
        assert_eq!(rows.row(r), embed_context(ctx, &tables).unwrap().data());
    }
}

#[test]
fn desk_length_distribution_has_mean_five() {
    let cfg = GeneratorConfig::desk(0);
    assert_abs_diff_eq!(cfg.mean_length(), 5.0, epsilon = 1e-12);
    assert_eq!(cfg.max_len(), 8);
    assert_eq!(cfg.cluster_size(), 50);
}

#[test]
fn sampled_mean_length_is_close_to_five() {
    let cfg = GeneratorConfig {
        n_outfits: 100_000,
        ..GeneratorConfig::desk(11)
    };
    let outfits = generate_outfits(&cfg, 1).unwrap();
    let mean = outfits.iter().map(|o| o.items.len()).sum::<usize>() as f64 / outfits.len() as f64;
    assert!((mean - 5.0).abs() < 0.02, "{mean}");
}

#[test]
fn noiseless_items_follow_the_context_votes() {
    let mut cfg = small(4);
    cfg.eta = 0.0;
    let map = TasteMap::new(&cfg);
    for o in generate_outfits(&cfg, 1).unwrap() {
        let voted: Vec<usize> = o
            .context
            .iter()
            .enumerate()
            .map(|(f, &v)| map.vote(f, v))
            .collect();
        assert!(o
            .items
            .iter()
            .all(|&id| voted.contains(&cfg.cluster_of(id))));
    }

    // With a single feature the context picks exactly one cluster.
    cfg.schema = ContextSchema::new(vec![FeatureSpec::new("only", 8, 16)]);
    let map = TasteMap::new(&cfg);
    for o in generate_outfits(&cfg, 1).unwrap() {
        let z = map.vote(0, o.context[0]);
        assert!(o.items.iter().all(|&id| cfg.cluster_of(id) == z));
    }
}

#[test]
fn sampled_sets_follow_the_exact_set_probability() {
    let mut cfg = tiny(0.3);
    cfg.n_outfits = 200_000;
    let tastes = TasteMap::new(&cfg);
    let outfits = generate_outfits(&cfg, 1).unwrap();
    let ctx = [1usize, 0];
    let q = tastes.article_probs(&ctx);
    let e2 = bayes::elementary_symmetric(&q, 2)[2];
    let matching: Vec<_> = outfits
        .iter()
        .filter(|o| o.context == ctx && o.items.len() == 2)
        .collect();
    let n = matching.len() as f64;
    for a in 0..8 {
        for b in a + 1..8 {
            let expect = q[a] * q[b] / e2;
            let seen = matching
                .iter()
                .filter(|o| {
                    o.items.contains(&(a + RESERVED_IDS)) && o.items.contains(&(b + RESERVED_IDS))
                })
                .count() as f64
                / n;
            let sigma = (expect * (1.0 - expect) / n).sqrt();
            assert!(
                (seen - expect).abs() < 5.0 * sigma,
                "{a},{b}: {seen} vs {expect}"
            );
        }
    }
}

#[test]
fn generated_outfits_are_valid_sets() {
    let cfg = small(6);
    let corpus = Corpus::generate(&cfg, 1).unwrap();
    assert_eq!(corpus.len(), 3000);
    corpus.validate().unwrap();
}

#[test]
fn generation_is_deterministic_and_independent_of_workers() {
    let cfg = GeneratorConfig {
        n_outfits: 10_000,
        ..GeneratorConfig::desk(7)
    };
    let a = Corpus::generate(&cfg, 1).unwrap().to_bytes();
    let b = Corpus::generate(&cfg, 1).unwrap().to_bytes();
    let c = Corpus::generate(&cfg, 3).unwrap().to_bytes();
    assert_eq!(a, b);
    assert_eq!(a, c);
    let other = Corpus::generate(&GeneratorConfig { seed: 8, ..cfg }, 1)
        .unwrap()
        .to_bytes();
    assert_ne!(a, other);
}

#[test]
fn uneven_cluster_split_is_rejected() {
    let mut cfg = small(1);
    cfg.n_clusters = 7;
    assert!(matches!(generate_outfits(&cfg, 1), Err(Error::Config(_))));
    cfg.n_clusters = 100;
    // Clusters of five cannot hold outfits of eight.
    assert!(matches!(generate_outfits(&cfg, 1), Err(Error::Config(_))));
}

#[test]
fn corpus_round_trips_through_jsonl() {
    let corpus = Corpus::generate(&small(9), 1).unwrap();
    let bytes = corpus.to_bytes();
    let text = String::from_utf8(bytes.clone()).unwrap();
    let first = text.lines().nth(1).unwrap();
    assert!(first.starts_with("{\"items\":["), "{first}");
    assert!(text
        .lines()
        .next()
        .unwrap()
        .contains("\"format\":\"ctxbert-corpus\""));
    let back = Corpus::read_from(bytes.as_slice()).unwrap();
    assert_eq!(back, corpus);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    corpus.save(&path).unwrap();
    assert_eq!(Corpus::load(&path).unwrap().checksum(), corpus.checksum());
}

#[test]
fn invalid_outfits_are_rejected_on_load() {
    let corpus = Corpus::generate(&small(10), 1).unwrap();
    let text = String::from_utf8(corpus.to_bytes()).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    for bad in [
        r#"{"items":[2,3,4],"context":[0,0,0]}"#,
        r#"{"items":[2,3,4,502],"context":[0,0,0]}"#,
        r#"{"items":[2,3,4,4],"context":[0,0,0]}"#,
        r#"{"items":[0,3,4,5],"context":[0,0,0]}"#,
        r#"{"items":[2,3,4,5],"context":[0,8,0]}"#,
        r#"{"items":[2,3,4,5]"#,
    ] {
        lines[1] = bad.to_string();
        assert!(
            Corpus::read_from(lines.join("\n").as_bytes()).is_err(),
            "{bad}"
        );
    }
    assert!(Corpus::read_from(&b""[..]).is_err());
}

#[test]
fn split_sizes_and_partition() {
    let cfg = GeneratorConfig {
        n_outfits: 20_000,
        ..GeneratorConfig::desk(12)
    };
    let corpus = Corpus::generate(&cfg, 1).unwrap();
    let (train, val) = split_corpus(&corpus, 0.1, 3).unwrap();
    assert_eq!((train.len(), val.len()), (18_000, 2_000));

    let mut joined: Vec<_> = train.outfits.iter().chain(&val.outfits).cloned().collect();
    let mut all = corpus.outfits.clone();
    joined.sort_by(|a, b| (&a.items, &a.context).cmp(&(&b.items, &b.context)));
    all.sort_by(|a, b| (&a.items, &a.context).cmp(&(&b.items, &b.context)));
    assert_eq!(joined, all);

    let (train2, val2) = split_corpus(&corpus, 0.1, 3).unwrap();
    assert_eq!((train2, val2), (train.clone(), val));
    let (train3, _) = split_corpus(&corpus, 0.1, 4).unwrap();
    assert_ne!(train3, train);

    assert_eq!(train.header.split.as_ref().unwrap().part, "train");
    assert!(split_corpus(&corpus, 0.0, 3).is_err());
    assert!(split_corpus(&corpus, 1.0, 3).is_err());
}

#[test]
fn held_out_fraction_at_full_scale() {
    // 380k outfits with 17k held out.
    let n_val = (380_000f64 * 0.0447).round() as usize;
    assert!(n_val.abs_diff(17_000) < 50, "{n_val}");
}

/// Probability of an ordered outfit under the generating process itself:
/// independent draws, normalized over every distinct ordered tuple.
fn ordered_probability(
    cfg: &GeneratorConfig,
    tastes: &TasteMap,
    seq: &[usize],
    ctx: &[usize],
) -> f64 {
    let q = tastes.article_probs(ctx);
    let weight = |t: &[usize]| t.iter().map(|&id| q[id - RESERVED_IDS]).product::<f64>();
    let distinct: f64 = ordered_tuples(cfg.n_articles(), seq.len())
        .iter()
        .map(|t| weight(t))
        .sum();
    weight(seq) / distinct
}

fn ordered_tuples(n_articles: usize, len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..len {
        let mut next = Vec::new();
        for t in &out {
            for a in 0..n_articles {
                let id = a + RESERVED_IDS;
                if !t.contains(&id) {
                    let mut u = t.clone();
                    u.push(id);
                    next.push(u);
                }
            }
        }
        out = next;
    }
    out
}

#[test]
fn bayes_predictive_matches_brute_force_enumeration() {
    let cfg = tiny(0.3);
    let tastes = TasteMap::new(&cfg);
    let oracle = BayesOracle::new(&cfg).unwrap().with_marginal().unwrap();
    let contexts = [[0, 0], [0, 1], [1, 0], [1, 1]];
    for len in 1..=2 {
        for visible in ordered_tuples(8, len) {
            let mut joint_marginal = vec![0.0; 8];
            for ctx in &contexts {
                let joint: Vec<f64> = (0..8)
                    .map(|a| {
                        let id = a + RESERVED_IDS;
                        if visible.contains(&id) {
                            return 0.0;
                        }
                        let mut seq = visible.clone();
                        seq.push(id);
                        ordered_probability(&cfg, &tastes, &seq, ctx)
                    })
                    .collect();
                let z: f64 = joint.iter().sum();
                let got = oracle.predict(&visible, Some(ctx)).unwrap();
                for (g, j) in got.iter().zip(&joint) {
                    assert_abs_diff_eq!(*g, j / z, epsilon = 1e-12);
                }
                joint_marginal
                    .iter_mut()
                    .zip(&joint)
                    .for_each(|(m, j)| *m += j);
            }
            let z: f64 = joint_marginal.iter().sum();
            let got = oracle.predict(&visible, None).unwrap();
            for (g, j) in got.iter().zip(&joint_marginal) {
                assert_abs_diff_eq!(*g, j / z, epsilon = 1e-12);
            }
        }
    }
}

#[test]
fn bayes_predictive_is_a_distribution() {
    let cfg = GeneratorConfig::desk(13);
    let oracle = BayesOracle::new(&cfg).unwrap().with_marginal().unwrap();
    let visible = [2, 3, 50, 400];
    for ctx in [Some(&[1usize, 2, 3][..]), None] {
        let p = oracle.predict(&visible, ctx).unwrap();
        assert_eq!(p.len(), 500);
        assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(visible.iter().all(|&id| p[id - RESERVED_IDS] == 0.0));
    }
    assert!(BayesOracle::new(&cfg)
        .unwrap()
        .predict(&visible, None)
        .is_err());
    assert!(matches!(
        oracle.predict(&[1, 3], None),
        Err(Error::OutOfVocab { id: 1, .. })
    ));
}

#[test]
fn context_lowers_bayes_cross_entropy() {
    let cfg = GeneratorConfig {
        n_outfits: 500,
        ..GeneratorConfig::desk(14)
    };
    let oracle = BayesOracle::new(&cfg).unwrap().with_marginal().unwrap();
    let (mut with_ctx, mut without, mut n) = (0.0, 0.0, 0usize);
    for o in generate_outfits(&cfg, 1).unwrap() {
        for m in 0..o.items.len() {
            let visible: Vec<usize> = o
                .items
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != m)
                .map(|(_, &id)| id)
                .collect();
            let col = o.items[m] - RESERVED_IDS;
            with_ctx -= oracle.predict(&visible, Some(&o.context)).unwrap()[col].ln();
            without -= oracle.predict(&visible, None).unwrap()[col].ln();
            n += 1;
        }
    }
    let (with_ctx, without) = (with_ctx / n as f64, without / n as f64);
    assert!(with_ctx < without, "{with_ctx} vs {without}");
    // The generator is tuned so the gap is well above five percent.
    assert!(1.0 - with_ctx / without > 0.05, "{with_ctx} vs {without}");
}
