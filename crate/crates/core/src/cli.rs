//! Command-line front end: `generate-data`, `train`, `eval`, `compare`,
//! `count-params` and `grad-check`.
//!
//! Every command resolves a JSON job description from a preset or `--config`
//! file, then the explicit flags, then `--set key=value` overrides. Commands
//! with an output directory write `manifest.json` there before starting;
//! passing that manifest back as `--config` repeats the run.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::autograd::primitive_suite;
use crate::data::{split_corpus, BayesOracle, Corpus, GeneratorConfig};
use crate::error::{Error, Result};
use crate::eval::{check_schema, compare, evaluate, BayesScorer, EvalReport};
use crate::model::{count_parameters, desk_suite, ConcatMode, MethodKind, ModelConfig};
use crate::training::{train_any, TrainConfig, TrainedModel};

/// Version string baked in at build time, `git describe` style when built
/// from a checkout.
pub const VERSION: &str = env!("CTXBERT_VERSION");

/// Worst relative error accepted by `grad-check` for single primitives.
pub const PRIMITIVE_TOLERANCE: f64 = 1e-6;
/// Worst relative error accepted by `grad-check` for the full model.
pub const MODEL_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "ctxbert", version = VERSION, about = "Context-conditioned set transformer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus, optionally split into train/validation.
    GenerateData {
        #[command(flatten)]
        common: Common,
        /// Also write train.jsonl and val.jsonl with this validation share.
        #[arg(long)]
        val_fraction: Option<f64>,
    },
    /// Train one model and write its checkpoint and metrics log.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        val: Option<PathBuf>,
    },
    /// Evaluate a checkpoint, or the exact Bayes predictor, on a corpus.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Score with the generator's posterior instead of a checkpoint.
        #[arg(long)]
        bayes: bool,
        /// With --bayes, marginalize the context out.
        #[arg(long)]
        no_context: bool,
        #[arg(long, value_delimiter = ',')]
        ranks: Vec<usize>,
    },
    /// Train every method with every seed and tabulate the results.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        methods: Vec<MethodKind>,
    },
    /// Print trainable parameter counts.
    CountParams {
        #[command(flatten)]
        common: Common,
    },
    /// Run the finite-difference suite over every primitive and the full model.
    GradCheck {
        #[command(flatten)]
        common: Common,
        /// Coordinates sampled per parameter tensor.
        #[arg(long, default_value_t = 6)]
        per_tensor: usize,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// JSON job file, or a manifest.json from an earlier run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model and generator sizes to start from (default desk).
    #[arg(long, value_parser = ["paper", "desk"])]
    pub preset: Option<String>,
    /// none, c, np, gs or gsu.
    #[arg(long)]
    pub method: Option<MethodKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated seeds for multi-seed commands.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Output directory; the manifest and all artifacts go here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Float width for training, 32 or 64.
    #[arg(long, value_parser = clap::value_parser!(u32).range(32..=64))]
    pub precision: Option<u32>,
    /// Context table layout for the [C] method: table_match or literal.
    #[arg(long = "c-mode")]
    pub c_mode: Option<ConcatMode>,
    /// Override one field of the resolved job, e.g. `--set epochs=5` or
    /// `--set model.d_model=64`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl Common {
    fn preset(&self) -> &str {
        self.preset.as_deref().unwrap_or("desk")
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateJob {
    pub generator: GeneratorConfig,
    pub val_fraction: Option<f64>,
    pub split_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalJob {
    pub checkpoint: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub bayes: bool,
    pub use_context: bool,
    pub ranks: Vec<usize>,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareJob {
    pub base: TrainConfig,
    pub methods: Vec<MethodKind>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountJob {
    pub model: ModelConfig,
    /// Empty prints the single configured method as a bare integer.
    pub methods: Vec<MethodKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckJob {
    pub per_tensor: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub started_unix: f64,
    pub finished_unix: Option<f64>,
    pub elapsed_seconds: Option<f64>,
}

/// Everything needed to repeat a run: the resolved job is complete, so
/// `--config manifest.json` reproduces it without any other flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub seeds: Vec<u64>,
    pub version: String,
    pub out_dir: PathBuf,
    pub argv: Vec<String>,
    pub timings: Timings,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Worker count: `CTXBERT_THREADS` when set, otherwise the available cores.
pub fn threads() -> Result<usize> {
    match std::env::var("CTXBERT_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| {
                Error::Config(format!("CTXBERT_THREADS={v:?} is not a positive integer"))
            }),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

/// Applies one `key.path=value` override; the value is read as JSON and
/// falls back to a plain string.
pub fn apply_override(job: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got {assignment:?}")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut slot = &mut *job;
    for part in key.split('.') {
        slot = match slot {
            Value::Object(map) => map
                .get_mut(part)
                .ok_or_else(|| Error::Usage(format!("--set: unknown key {key:?}")))?,
            Value::Array(items) => {
                let i: usize = part.parse().map_err(|_| {
                    Error::Usage(format!("--set: {part:?} in {key:?} is not an index"))
                })?;
                items.get_mut(i).ok_or_else(|| {
                    Error::Usage(format!("--set: index {i} out of range in {key:?}"))
                })?
            }
            _ => {
                return Err(Error::Usage(format!(
                    "--set: {key:?} goes below a plain value"
                )))
            }
        };
    }
    *slot = value;
    Ok(())
}

/// Starting job: the `--config` file (a bare job or a manifest) or `default`.
fn base_job<J: DeserializeOwned>(
    common: &Common,
    command: &str,
    default: impl FnOnce() -> Result<J>,
) -> Result<J> {
    let Some(path) = &common.config else {
        return default();
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: Value = serde_json::from_str(&text)?;
    let job = match value.get("command").and_then(Value::as_str) {
        Some(cmd) if value.get("config").is_some() => {
            if cmd != command {
                return Err(Error::Usage(format!(
                    "{} is a {cmd} manifest, not {command}",
                    path.display()
                )));
            }
            value["config"].clone()
        }
        _ => value,
    };
    Ok(serde_json::from_value(job)?)
}

fn finish_job<J: Serialize + DeserializeOwned>(job: J, common: &Common) -> Result<(J, Value)> {
    let mut value = serde_json::to_value(&job)?;
    for assignment in &common.overrides {
        apply_override(&mut value, assignment)?;
    }
    let job = serde_json::from_value(value.clone())?;
    Ok((job, value))
}

fn apply_model_flags(model: &mut ModelConfig, common: &Common) {
    if let Some(m) = common.method {
        model.method = m;
    }
    if let Some(c) = common.c_mode {
        model.c_mode = c;
    }
}

fn apply_train_flags(
    config: &mut TrainConfig,
    common: &Common,
    train: &Option<PathBuf>,
    val: &Option<PathBuf>,
) {
    apply_model_flags(&mut config.model, common);
    if let Some(s) = common.seed {
        config.seed = s;
    }
    if let Some(p) = common.precision {
        config.precision = p;
    }
    if train.is_some() {
        config.train_corpus = train.clone();
    }
    if val.is_some() {
        config.val_corpus = val.clone();
    }
}

fn default_train(common: &Common) -> Result<TrainConfig> {
    let model = ModelConfig::preset(common.preset(), common.method.unwrap_or(MethodKind::None))?;
    Ok(TrainConfig::new(model, common.seed()))
}

struct Run {
    manifest: Option<(PathBuf, RunManifest)>,
    started: Instant,
}

impl Run {
    /// Writes the manifest before any work when an output directory is set.
    fn start(
        command: &str,
        config: &Value,
        seeds: Vec<u64>,
        out: Option<&Path>,
        argv: &[String],
    ) -> Result<Self> {
        let manifest = match out {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let manifest = RunManifest {
                    command: command.into(),
                    config: config.clone(),
                    seeds,
                    version: VERSION.into(),
                    out_dir: dir.to_path_buf(),
                    argv: argv.to_vec(),
                    timings: Timings {
                        started_unix: unix_now(),
                        finished_unix: None,
                        elapsed_seconds: None,
                    },
                };
                let path = dir.join("manifest.json");
                write_json(&path, &manifest)?;
                Some((path, manifest))
            }
            None => None,
        };
        Ok(Self {
            manifest,
            started: Instant::now(),
        })
    }

    fn finish(self) -> Result<()> {
        if let Some((path, mut manifest)) = self.manifest {
            manifest.timings.finished_unix = Some(unix_now());
            manifest.timings.elapsed_seconds = Some(self.started.elapsed().as_secs_f64());
            write_json(&path, &manifest)?;
        }
        Ok(())
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn require(path: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    path.clone()
        .ok_or_else(|| Error::Config(format!("{what} is required")))
}

fn require_out(common: &Common) -> Result<PathBuf> {
    require(&common.out, "--out")
}

fn load_pair(config: &TrainConfig) -> Result<(Corpus, Option<Corpus>)> {
    let train = Corpus::load(&require(
        &config.train_corpus,
        "a training corpus (--train)",
    )?)?;
    check_schema(&config.model, train.generator())?;
    let val = match &config.val_corpus {
        Some(p) => {
            let val = Corpus::load(p)?;
            check_schema(&config.model, val.generator())?;
            Some(val)
        }
        None => None,
    };
    Ok((train, val))
}

fn generate_data(
    common: &Common,
    val_fraction: Option<f64>,
    argv: &[String],
    out: &mut dyn Write,
) -> Result<()> {
    let job = base_job(common, "generate-data", || {
        let seed = common.seed();
        Ok(GenerateJob {
            generator: GeneratorConfig::preset(common.preset(), seed)?,
            val_fraction: None,
            split_seed: seed,
        })
    })?;
    let mut job = job;
    if let Some(seed) = common.seed {
        job.generator.seed = seed;
        job.split_seed = seed;
    }
    if val_fraction.is_some() {
        job.val_fraction = val_fraction;
    }
    let (job, value) = finish_job(job, common)?;
    let dir = require_out(common)?;
    let run = Run::start(
        "generate-data",
        &value,
        vec![job.generator.seed],
        Some(&dir),
        argv,
    )?;
    let corpus = Corpus::generate(&job.generator, threads()?)?;
    let mut files = vec![("corpus.jsonl", corpus.clone())];
    if let Some(f) = job.val_fraction {
        let (train, val) = split_corpus(&corpus, f, job.split_seed)?;
        files.push(("train.jsonl", train));
        files.push(("val.jsonl", val));
    }
    for (name, c) in files {
        let path = dir.join(name);
        c.save(&path)?;
        writeln!(
            out,
            "{}\t{} outfits\tsha256 {}",
            path.display(),
            c.len(),
            c.checksum()
        )
        .map_err(|e| Error::io("stdout", e))?;
    }
    run.finish()
}

fn train_cmd(
    common: &Common,
    train: &Option<PathBuf>,
    val: &Option<PathBuf>,
    argv: &[String],
    out: &mut dyn Write,
) -> Result<()> {
    let mut job = base_job(common, "train", || default_train(common))?;
    apply_train_flags(&mut job, common, train, val);
    let (job, value) = finish_job(job, common)?;
    job.validate()?;
    let dir = require_out(common)?;
    let (train_set, val_set) = load_pair(&job)?;
    let run = Run::start("train", &value, vec![job.seed], Some(&dir), argv)?;
    let (_, _, last) = train_any(
        &job,
        &train_set.outfits,
        val_set.as_ref().map(|v| v.outfits.as_slice()),
        Some(&dir),
        threads()?,
    )?;
    let summary = serde_json::json!({
        "method": job.model.method.name(),
        "seed": job.seed,
        "checkpoint": dir.join("model.ckpt"),
        "validation": last,
    });
    writeln!(out, "{summary}").map_err(|e| Error::io("stdout", e))?;
    run.finish()
}

#[allow(clippy::too_many_arguments)]
fn eval_cmd(
    common: &Common,
    checkpoint: &Option<PathBuf>,
    data: &Option<PathBuf>,
    bayes: bool,
    no_context: bool,
    ranks: &[usize],
    argv: &[String],
    out: &mut dyn Write,
) -> Result<()> {
    let mut job = base_job(common, "eval", || {
        Ok(EvalJob {
            checkpoint: None,
            data: None,
            bayes: false,
            use_context: true,
            ranks: Vec::new(),
            batch_size: 512,
            seeds: Vec::new(),
        })
    })?;
    if checkpoint.is_some() {
        job.checkpoint = checkpoint.clone();
    }
    if data.is_some() {
        job.data = data.clone();
    }
    job.bayes |= bayes;
    job.use_context &= !no_context;
    if !ranks.is_empty() {
        job.ranks = ranks.to_vec();
    }
    if !common.seeds.is_empty() {
        job.seeds = common.seeds.clone();
    } else if let Some(s) = common.seed {
        job.seeds = vec![s];
    }
    let (job, value) = finish_job(job, common)?;
    let corpus = Corpus::load(&require(&job.data, "--data")?)?;
    let run = Run::start(
        "eval",
        &value,
        job.seeds.clone(),
        common.out.as_deref(),
        argv,
    )?;
    let threads = threads()?;
    let result = if job.bayes {
        let mut oracle = BayesOracle::new(corpus.generator())?;
        if !job.use_context {
            oracle = oracle.with_marginal()?;
        }
        let ranks = resolve_ranks(&job.ranks, oracle.config().n_articles());
        let scorer = BayesScorer {
            oracle: &oracle,
            use_context: job.use_context,
        };
        let metrics = evaluate(&scorer, &corpus.outfits, &ranks, job.batch_size, threads)?;
        serde_json::json!({ "scorer": "bayes", "use_context": job.use_context, "metrics": metrics })
    } else {
        let model = TrainedModel::load(&require(&job.checkpoint, "--checkpoint (or --bayes)")?)?;
        check_schema(model.config(), corpus.generator())?;
        let ranks = resolve_ranks(&job.ranks, model.n_articles());
        let metrics = model.evaluate(&corpus.outfits, &ranks, job.batch_size, threads)?;
        let report = EvalReport::from_runs(
            model.config().method,
            count_parameters(model.config()),
            &job.seeds,
            &[metrics],
        );
        serde_json::to_value(report)?
    };
    if let Some(dir) = &common.out {
        write_json(&dir.join("report.json"), &result)?;
    }
    writeln!(out, "{result}").map_err(|e| Error::io("stdout", e))?;
    run.finish()
}

fn resolve_ranks(ranks: &[usize], n_articles: usize) -> Vec<usize> {
    if ranks.is_empty() {
        crate::eval::default_ranks(n_articles)
    } else {
        ranks.to_vec()
    }
}

fn compare_cmd(
    common: &Common,
    train: &Option<PathBuf>,
    val: &Option<PathBuf>,
    methods: &[MethodKind],
    argv: &[String],
    out: &mut dyn Write,
) -> Result<()> {
    let mut job = base_job(common, "compare", || {
        Ok(CompareJob {
            base: default_train(common)?,
            methods: MethodKind::ALL.to_vec(),
            seeds: vec![0, 1, 2],
        })
    })?;
    apply_train_flags(&mut job.base, common, train, val);
    if !methods.is_empty() {
        job.methods = methods.to_vec();
    } else if let Some(m) = common.method {
        job.methods = vec![m];
    }
    if !common.seeds.is_empty() {
        job.seeds = common.seeds.clone();
    } else if let Some(s) = common.seed {
        job.seeds = vec![s];
    }
    let (job, value) = finish_job(job, common)?;
    job.base.validate()?;
    let dir = require_out(common)?;
    let (train_set, val_set) = load_pair(&job.base)?;
    let val_set =
        val_set.ok_or_else(|| Error::Config("compare needs a validation corpus (--val)".into()))?;
    let run = Run::start("compare", &value, job.seeds.clone(), Some(&dir), argv)?;
    let result = compare(
        &job.methods,
        &job.base,
        &job.seeds,
        &train_set.outfits,
        &val_set.outfits,
        Some(&dir),
        threads()?,
    )?;
    write!(out, "{}", result.comparison.to_table()).map_err(|e| Error::io("stdout", e))?;
    run.finish()
}

fn count_cmd(common: &Common, argv: &[String], out: &mut dyn Write) -> Result<()> {
    let mut job = base_job(common, "count-params", || {
        Ok(CountJob {
            model: ModelConfig::preset(common.preset(), common.method.unwrap_or(MethodKind::None))?,
            methods: if common.method.is_some() {
                Vec::new()
            } else {
                MethodKind::ALL.to_vec()
            },
        })
    })?;
    apply_model_flags(&mut job.model, common);
    if common.method.is_some() {
        job.methods.clear();
    }
    let (job, value) = finish_job(job, common)?;
    job.model.validate()?;
    let run = Run::start(
        "count-params",
        &value,
        Vec::new(),
        common.out.as_deref(),
        argv,
    )?;
    let w = |e| Error::io("stdout", e);
    if job.methods.is_empty() {
        writeln!(out, "{}", count_parameters(&job.model)).map_err(w)?;
    } else {
        for &m in &job.methods {
            let config = ModelConfig {
                method: m,
                ..job.model.clone()
            };
            writeln!(out, "{:<7} {}", m.label(), count_parameters(&config)).map_err(w)?;
        }
    }
    run.finish()
}

fn grad_check_cmd(
    common: &Common,
    per_tensor: usize,
    argv: &[String],
    out: &mut dyn Write,
) -> Result<()> {
    let job = base_job(common, "grad-check", || {
        Ok(GradCheckJob {
            per_tensor,
            seed: common.seed(),
        })
    })?;
    let (job, value) = finish_job(job, common)?;
    let run = Run::start(
        "grad-check",
        &value,
        vec![job.seed],
        common.out.as_deref(),
        argv,
    )?;
    let w = |e| Error::io("stdout", e);
    let mut failures = Vec::new();
    for (name, err) in primitive_suite()? {
        let ok = err < PRIMITIVE_TOLERANCE;
        writeln!(
            out,
            "{}\tprimitive {name}\t{err:.3e}",
            if ok { "ok" } else { "FAIL" }
        )
        .map_err(w)?;
        if !ok {
            failures.push(name.to_string());
        }
    }
    for (method, report) in desk_suite(job.per_tensor, job.seed)? {
        let ok = report.worst_relative_error < MODEL_TOLERANCE;
        writeln!(
            out,
            "{}\tmodel {}\t{:.3e} at {}\t{} coordinates, {} skipped at kinks",
            if ok { "ok" } else { "FAIL" },
            method.name(),
            report.worst_relative_error,
            report.worst_tensor,
            report.coordinates,
            report.skipped_at_kinks
        )
        .map_err(w)?;
        if !ok {
            failures.push(method.name().to_string());
        }
    }
    run.finish()?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Error::Check(format!(
            "gradient mismatch in {}",
            failures.join(", ")
        )))
    }
}

/// Runs one parsed command, writing results to `out`.
pub fn execute(cli: &Cli, argv: &[String], out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::GenerateData {
            common,
            val_fraction,
        } => generate_data(common, *val_fraction, argv, out),
        Command::Train { common, train, val } => train_cmd(common, train, val, argv, out),
        Command::Eval {
            common,
            checkpoint,
            data,
            bayes,
            no_context,
            ranks,
        } => eval_cmd(
            common,
            checkpoint,
            data,
            *bayes,
            *no_context,
            ranks,
            argv,
            out,
        ),
        Command::Compare {
            common,
            train,
            val,
            methods,
        } => compare_cmd(common, train, val, methods, argv, out),
        Command::CountParams { common } => count_cmd(common, argv, out),
        Command::GradCheck { common, per_tensor } => grad_check_cmd(common, *per_tensor, argv, out),
    }
}

/// One-line JSON error record printed on failure.
pub fn error_line(e: &Error) -> String {
    serde_json::json!({ "error": e.kind(), "message": e.to_string() }).to_string()
}

/// Exit code for an error: 2 for usage mistakes, 1 for everything else.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) => 2,
        _ => 1,
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    let argv: Vec<String> = argv
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    match execute(&cli, &argv, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "{}", error_line(&e));
            exit_code(&e)
        }
    }
}
