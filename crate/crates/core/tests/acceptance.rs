//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.
//!
//!     cargo test --release --test acceptance            # all criteria
//!     cargo test --release --test acceptance -- 1 3 7   # a subset

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use ctxbert::autograd::{primitive_suite, Graph, Mode, Tensor};
use ctxbert::data::{
    split_corpus, BayesOracle, ContextSchema, Corpus, FeatureSpec, GeneratorConfig,
};
use ctxbert::eval::{compare, default_ranks, evaluate, recall_at_r, BayesScorer, Comparison};
use ctxbert::model::{
    count_parameters, desk_suite, ConcatMode, ContextualBert, MaskedBatch, MethodKind, ModelConfig,
    MASK_ID, RESERVED_IDS,
};
use ctxbert::rng::{Rng, Stream};
use ctxbert::training::TrainConfig;
use ctxbert::Scalar;

const PAPER_COUNTS: [usize; 5] = [546_432, 673_664, 640_768, 723_328, 921_856];
const DESK_SEEDS: [u64; 3] = [1, 2, 3];
const DESK_EPOCHS: usize = 20;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn cli(args: &[&str]) -> Result<String, String> {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = ctxbert::cli::run(
        std::iter::once("ctxbert").chain(args.iter().copied()),
        &mut out,
        &mut err,
    );
    if code == 0 {
        Ok(String::from_utf8_lossy(&out).into_owned())
    } else {
        Err(format!(
            "{args:?} exited {code}: {}",
            String::from_utf8_lossy(&err).trim()
        ))
    }
}

fn random_config(rng: &mut Rng) -> ModelConfig {
    let n_heads = 1 + rng.below(4);
    let d_model = n_heads * (1 + rng.below(6));
    let features = (0..1 + rng.below(4))
        .map(|i| FeatureSpec::new(&format!("f{i}"), 2 + rng.below(6), 1 + rng.below(9)))
        .collect();
    ModelConfig {
        d_model,
        n_blocks: 1 + rng.below(4),
        n_heads,
        d_ff: 1 + rng.below(20),
        d_gs_hidden: 1 + rng.below(20),
        d_transfer_hidden: 1 + rng.below(20),
        vocab_size: RESERVED_IDS + 1 + rng.below(30),
        max_len: 2 + rng.below(10),
        dropout_p: 0.1,
        layer_norm_eps: 1e-12,
        method: MethodKind::ALL[rng.below(5)],
        c_mode: if rng.below(2) == 0 {
            ConcatMode::TableMatch
        } else {
            ConcatMode::Literal
        },
        tie_output_embedding: rng.below(2) == 0,
        gs_query_key: rng.below(2) == 0,
        gs_affine_norm: rng.below(2) == 0,
        init_std: 0.02,
        context: ContextSchema::new(features),
    }
}

fn parameter_counts() -> Outcome {
    let out = cli(&["count-params", "--preset", "paper"])?;
    let printed: Vec<usize> = out
        .lines()
        .map(|l| {
            l.split_whitespace()
                .last()
                .and_then(|v| v.parse().ok())
                .unwrap_or(0)
        })
        .collect();
    if printed != PAPER_COUNTS {
        return Err(format!("count-params printed {printed:?}"));
    }
    let mut rng = Rng::new(2024, Stream::Other(1));
    for i in 0..20 {
        let config = random_config(&mut rng);
        let model = ContextualBert::<f32>::zeroed(config.clone())
            .map_err(|e| format!("config {i}: {e}"))?;
        let (closed, counted) = (count_parameters(&config), model.parameter_count());
        if closed != counted {
            return Err(format!(
                "config {i} ({}): closed form {closed}, enumeration {counted}",
                config.method
            ));
        }
    }
    Ok(format!(
        "{printed:?}, closed form = enumeration on 20 random configs"
    ))
}

fn gradients() -> Outcome {
    let primitives = primitive_suite().map_err(|e| e.to_string())?;
    let (name, worst_primitive) =
        primitives
            .iter()
            .copied()
            .fold(("", 0.0f64), |a, b| if b.1 > a.1 { b } else { a });
    let mut worst_model = 0.0f64;
    let mut coordinates = 0;
    let mut skipped = 0;
    for (method, report) in desk_suite(6, 1).map_err(|e| e.to_string())? {
        if report.worst_relative_error >= 1e-4 {
            return Err(format!(
                "{method}: {:.2e} at {}",
                report.worst_relative_error, report.worst_tensor
            ));
        }
        worst_model = worst_model.max(report.worst_relative_error);
        coordinates += report.coordinates;
        skipped += report.skipped_at_kinks;
    }
    check(
        worst_primitive < 1e-6,
        format!(
            "{} primitives worst {worst_primitive:.1e} ({name}); desk model worst {worst_model:.1e} over {coordinates} coordinates, {skipped} at kinks",
            primitives.len()
        ),
    )
}

fn batch(items: &[usize], masked: usize, context: &[usize]) -> MaskedBatch {
    let mut b = MaskedBatch::new();
    let mut items = items.to_vec();
    let target = items[masked];
    items[masked] = MASK_ID;
    b.push(&items, masked, context, target);
    b
}

fn logits<T: Scalar>(model: &ContextualBert<T>, b: &MaskedBatch) -> Tensor<T> {
    let g = Graph::new();
    let mut rng = Rng::new(0, Stream::Dropout);
    model
        .forward(&g, b, Mode::Eval, &mut rng)
        .unwrap()
        .logits
        .value()
}

fn max_diff<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    a.max_abs_diff(b)
}

fn random_set(rng: &mut Rng, config: &ModelConfig) -> (Vec<usize>, usize, Vec<usize>) {
    let len = 2 + rng.below(config.max_len - 1);
    let mut items = Vec::new();
    while items.len() < len {
        let a = RESERVED_IDS + rng.below(config.vocab_size - RESERVED_IDS);
        if !items.contains(&a) {
            items.push(a);
        }
    }
    let context = config
        .context
        .features
        .iter()
        .map(|f| rng.below(f.cardinality))
        .collect();
    (items, rng.below(len), context)
}

fn copy_by_name(from: &ContextualBert<f64>, to: &mut ContextualBert<f64>) {
    for (_, p) in from.params().iter() {
        let id = to.params().id(&p.name).expect("shared parameter");
        *to.params_mut().value_mut(id) = p.value.clone();
    }
}

fn invariants() -> Outcome {
    let mut rng = Rng::new(7, Stream::Other(2));

    // (a) Context never reaches the unconditioned model.
    let none = ContextualBert::<f32>::new(ModelConfig::desk(MethodKind::None), 1)
        .map_err(|e| e.to_string())?;
    for _ in 0..50 {
        let (items, masked, c1) = random_set(&mut rng, none.config());
        let (_, _, c2) = random_set(&mut rng, none.config());
        if logits(&none, &batch(&items, masked, &c1)) != logits(&none, &batch(&items, masked, &c2))
        {
            return Err("(a) [None] logits moved with the context".into());
        }
    }

    // (b) Reordering the set leaves the masked prediction unchanged.
    let mut worst_perm = 0.0f64;
    for method in MethodKind::ALL {
        let model =
            ContextualBert::<f32>::new(ModelConfig::desk(method), 2).map_err(|e| e.to_string())?;
        for _ in 0..20 {
            let (items, masked, ctx) = random_set(&mut rng, model.config());
            let mut order: Vec<usize> = (0..items.len()).collect();
            rng.shuffle(&mut order);
            let permuted: Vec<usize> = order.iter().map(|&i| items[i]).collect();
            let new_masked = order.iter().position(|&i| i == masked).unwrap();
            let d = max_diff(
                &logits(&model, &batch(&items, masked, &ctx)),
                &logits(&model, &batch(&permuted, new_masked, &ctx)),
            );
            worst_perm = worst_perm.max(d);
        }
    }
    if worst_perm > 1e-5 {
        return Err(format!("(b) permutation moved logits by {worst_perm:.2e}"));
    }

    // (c) Single-key attention over the global state equals reading V^V directly.
    let direct = ContextualBert::<f64>::new(ModelConfig::desk(MethodKind::Gs), 3)
        .map_err(|e| e.to_string())?;
    let mut cfg = ModelConfig::desk(MethodKind::Gs);
    cfg.gs_query_key = true;
    let mut generic = ContextualBert::<f64>::new(cfg, 4).map_err(|e| e.to_string())?;
    copy_by_name(&direct, &mut generic);
    let mut worst_read = 0.0f64;
    for _ in 0..20 {
        let (items, masked, ctx) = random_set(&mut rng, direct.config());
        let b = batch(&items, masked, &ctx);
        worst_read = worst_read.max(max_diff(&logits(&direct, &b), &logits(&generic, &b)));
    }
    if worst_read > 1e-6 {
        return Err(format!("(c) generic read differs by {worst_read:.2e}"));
    }

    // (d) Identity transfers turn [GSU] into [GS].
    let gs = ContextualBert::<f64>::new(ModelConfig::desk(MethodKind::Gs), 5)
        .map_err(|e| e.to_string())?;
    let mut gsu = ContextualBert::<f64>::new(ModelConfig::desk(MethodKind::Gsu), 6)
        .map_err(|e| e.to_string())?;
    copy_by_name(&gs, &mut gsu);
    let d = gsu.config().d_model;
    let mut up = Tensor::zeros(&[2 * d, d]);
    let mut down = Tensor::zeros(&[d, 2 * d]);
    for i in 0..d {
        up.data_mut()[i * d + i] = 1.0;
        up.data_mut()[(d + i) * d + i] = -1.0;
        down.data_mut()[i * 2 * d + i] = 1.0;
        down.data_mut()[i * 2 * d + d + i] = -1.0;
    }
    for l in 1..gsu.config().n_blocks {
        for (name, value) in [
            ("fc1.weight", up.clone()),
            ("fc1.bias", Tensor::zeros(&[2 * d])),
            ("fc2.weight", down.clone()),
            ("fc2.bias", Tensor::zeros(&[d])),
        ] {
            let id = gsu
                .params()
                .id(&format!("ctx.transfer{l}.{name}"))
                .ok_or("missing transfer parameter")?;
            let slot = gsu.params_mut().value_mut(id);
            if slot.shape() != value.shape() {
                return Err(format!("(d) transfer {name} has shape {:?}", slot.shape()));
            }
            *slot = value;
        }
    }
    gsu.set_transfer_norm_bypass(true);
    let mut worst_gsu = 0.0f64;
    for _ in 0..20 {
        let (items, masked, ctx) = random_set(&mut rng, gs.config());
        let b = batch(&items, masked, &ctx);
        worst_gsu = worst_gsu.max(max_diff(&logits(&gs, &b), &logits(&gsu, &b)));
    }
    check(
        worst_gsu <= 1e-6,
        format!(
            "(a) bit-identical, (b) {worst_perm:.1e}, (c) {worst_read:.1e}, (d) {worst_gsu:.1e}"
        ),
    )
}

struct DeskResults {
    comparison: Comparison,
    /// (method, seed, cross-entropy) of every trained run.
    runs: Vec<(MethodKind, u64, f64)>,
    bayes_ce: f64,
}

fn desk_comparison() -> Result<DeskResults, String> {
    let generator = GeneratorConfig::desk(0);
    let corpus = Corpus::generate(&generator, threads()).map_err(|e| e.to_string())?;
    let (train, val) = split_corpus(&corpus, 0.1, 0).map_err(|e| e.to_string())?;
    let mut base = TrainConfig::new(ModelConfig::desk(MethodKind::None), 0);
    base.epochs = DESK_EPOCHS;
    let out = compare(
        &MethodKind::ALL,
        &base,
        &DESK_SEEDS,
        &train.outfits,
        &val.outfits,
        None,
        threads(),
    )
    .map_err(|e| e.to_string())?;
    let oracle = BayesOracle::new(&generator).map_err(|e| e.to_string())?;
    let ranks = default_ranks(generator.n_articles());
    let bayes = evaluate(
        &BayesScorer {
            oracle: &oracle,
            use_context: true,
        },
        &val.outfits,
        &ranks,
        512,
        threads(),
    )
    .map_err(|e| e.to_string())?;
    let runs = out
        .runs
        .iter()
        .map(|(m, s, e)| (*m, *s, e.cross_entropy))
        .collect();
    Ok(DeskResults {
        comparison: out.comparison,
        runs,
        bayes_ce: bayes.cross_entropy,
    })
}

fn conditioning_gain(comparison: &Comparison) -> Outcome {
    let none = comparison
        .report(MethodKind::None)
        .ok_or("no [None] report")?;
    let base_ce = none.cross_entropy.mean;
    let base_r1 = none.recall_mean(1).ok_or("no r@1")?;
    let mut parts = vec![format!("[None] {base_ce:.3} r@1 {:.2}%", base_r1 * 100.0)];
    let mut ok = true;
    for method in [
        MethodKind::C,
        MethodKind::Np,
        MethodKind::Gs,
        MethodKind::Gsu,
    ] {
        let r = comparison
            .report(method)
            .ok_or(format!("no {method} report"))?;
        let gain = 1.0 - r.cross_entropy.mean / base_ce;
        let r1 = r.recall_mean(1).ok_or("no r@1")?;
        ok &= gain >= 0.05 && r1 > base_r1;
        parts.push(format!(
            "{method} -{:.1}% r@1 {:.2}%",
            gain * 100.0,
            r1 * 100.0
        ));
    }
    if !ok {
        eprintln!("{}", comparison.to_table());
    }
    check(ok, parts.join(", "))
}

fn oracle_bound(results: &DeskResults) -> Outcome {
    let (method, seed, best) =
        results
            .runs
            .iter()
            .copied()
            .fold((MethodKind::None, 0, f64::INFINITY), |a, b| {
                if b.2 < a.2 {
                    b
                } else {
                    a
                }
            });
    check(
        results.bayes_ce <= best,
        format!(
            "Bayes {:.4} <= best trained {best:.4} ({method} seed {seed}) of {} runs",
            results.bayes_ce,
            results.runs.len()
        ),
    )
}

fn same_files(a: &Path, b: &Path, names: &[&str]) -> Result<(), String> {
    for name in names {
        let x = std::fs::read(a.join(name)).map_err(|e| format!("{name}: {e}"))?;
        let y = std::fs::read(b.join(name)).map_err(|e| format!("{name}: {e}"))?;
        if x != y {
            return Err(format!(
                "{name} differs between {} and {}",
                a.display(),
                b.display()
            ));
        }
    }
    Ok(())
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();

    cli(&[
        "generate-data",
        "--preset",
        "desk",
        "--seed",
        "0",
        "--val-fraction",
        "0.1",
        "--out",
        &p("data-a"),
    ])?;
    cli(&[
        "generate-data",
        "--config",
        &p("data-a/manifest.json"),
        "--out",
        &p("data-b"),
    ])?;
    same_files(
        &dir.path().join("data-a"),
        &dir.path().join("data-b"),
        &["corpus.jsonl", "train.jsonl", "val.jsonl"],
    )?;

    let (train, val) = (p("data-a/train.jsonl"), p("data-a/val.jsonl"));
    let mut replays = 0;
    for (method, precision) in [("gsu", "32"), ("np", "64")] {
        let first = p(&format!("{method}-a"));
        cli(&[
            "train",
            "--method",
            method,
            "--seed",
            "5",
            "--precision",
            precision,
            "--train",
            &train,
            "--val",
            &val,
            "--set",
            "epochs=1",
            "--out",
            &first,
        ])?;
        let replay = p(&format!("{method}-b"));
        cli(&[
            "train",
            "--config",
            &format!("{first}/manifest.json"),
            "--out",
            &replay,
        ])?;
        same_files(
            Path::new(&first),
            Path::new(&replay),
            &["model.ckpt", "metrics.jsonl"],
        )?;
        replays += 1;
    }
    Ok(format!(
        "corpus files and {replays} training runs replayed byte-identically from their manifests"
    ))
}

fn sort_oracle(logits: &[f64], target: usize, r: usize) -> bool {
    let mut ids: Vec<usize> = (RESERVED_IDS..logits.len()).collect();
    ids.sort_by(|&a, &b| logits[b].partial_cmp(&logits[a]).unwrap().then(a.cmp(&b)));
    ids[..r].contains(&target)
}

fn recall_correctness() -> Outcome {
    let mut rng = Rng::new(31, Stream::Other(3));
    let mut with_ties = 0;
    for i in 0..1000 {
        let n = 1 + rng.below(60);
        let levels = 1 + rng.below(8);
        let logits: Vec<f64> = (0..n + RESERVED_IDS)
            .map(|_| rng.below(levels) as f64 * 0.25)
            .collect();
        let target = RESERVED_IDS + rng.below(n);
        let r = 1 + rng.below(n);
        if logits[RESERVED_IDS..]
            .iter()
            .filter(|&&v| v == logits[target])
            .count()
            > 1
        {
            with_ties += 1;
        }
        let got = recall_at_r(&logits, target, r).map_err(|e| e.to_string())?;
        if got != sort_oracle(&logits, target, r) {
            return Err(format!(
                "instance {i}: recall {got} disagrees with the sort oracle"
            ));
        }
    }
    Ok(format!(
        "1000 instances agree, {with_ties} with a tied target"
    ))
}

fn main() -> ExitCode {
    let selected: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let wanted = |n: usize| selected.is_empty() || selected.contains(&n);
    let mut failures = 0;
    let mut report = |n: usize, name: &str, started: Instant, outcome: Outcome| {
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n} PASS  {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failures += 1;
                println!("criterion {n} FAIL  {name}: {detail} [{secs:.1}s]");
            }
        }
    };

    if wanted(1) {
        let t = Instant::now();
        report(1, "parameter counts", t, parameter_counts());
    }
    if wanted(2) {
        let t = Instant::now();
        report(2, "gradient integrity", t, gradients());
    }
    if wanted(3) {
        let t = Instant::now();
        report(3, "architectural invariants", t, invariants());
    }
    if wanted(4) || wanted(5) {
        let t = Instant::now();
        match desk_comparison() {
            Ok(results) => {
                let elapsed = Instant::now();
                if wanted(4) {
                    report(
                        4,
                        "conditioning gain",
                        t,
                        conditioning_gain(&results.comparison),
                    );
                }
                if wanted(5) {
                    report(5, "oracle bound", elapsed, oracle_bound(&results));
                }
            }
            Err(e) => {
                for n in [4, 5].into_iter().filter(|&n| wanted(n)) {
                    report(n, "desk comparison", t, Err(e.clone()));
                }
            }
        }
    }
    if wanted(6) {
        let t = Instant::now();
        report(6, "determinism", t, determinism());
    }
    if wanted(7) {
        let t = Instant::now();
        report(7, "recall@r correctness", t, recall_correctness());
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
