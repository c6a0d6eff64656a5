//! `otsel`: domain relevance, data selection and verification suites.
//!
//! Exit codes: 0 success, 1 verification checks failed, 2 input error,
//! 3 solver failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use otsel::baselines::{
    all_domains_select, dsir_select, knn_select, random_select, GumbelNoise, NGramFeatureModel, DEFAULT_BINS,
    DEFAULT_SMOOTHING,
};
use otsel::data::{preprocess, read_corpus, read_embeddings, CorpusRecord, EmbeddingFile, PreprocessMode};
use otsel::pipeline::{relevance_test, run_got_d_detailed, DomainCatalog, PipelineConfig, RunWriter};
use otsel::verify::{run_suite, PerfScale, Suite, VerifyOptions};
use otsel::{DiscreteDistribution, Error, Result, SelectionMode, SelectionResult, SinkhornConfig};

#[derive(Parser)]
#[command(name = "otsel", version, about = "Optimal-transport gradient data selection")]
struct Cli {
    /// Worker threads (default: logical cores; verify perf defaults to 8).
    #[arg(long, global = true, env = "OTSEL_WORKERS")]
    workers: Option<usize>,

    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rank catalog domains by transport distance to the target.
    Relevance(RelevanceArgs),
    /// Select a budget of candidate ids.
    Select(SelectArgs),
    /// Run a verification suite on generated fixtures.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct SolverArgs {
    /// Domain catalog manifest (JSON).
    #[arg(long)]
    manifest: PathBuf,
    /// Target embeddings (EMB1).
    #[arg(long)]
    target: Option<PathBuf>,
    /// Run directory for all outputs.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Final regularization as a multiple of the mean cost.
    #[arg(long)]
    epsilon_min: Option<f64>,
    /// Rows sampled per domain for the relevance test.
    #[arg(long, default_value_t = 10_000)]
    relevance_sample: usize,
}

#[derive(Args)]
struct RelevanceArgs {
    #[command(flatten)]
    common: SolverArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Gotd,
    GotdContrast,
    Dsir,
    Knn,
    Random,
    AllDomains,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Clean,
    Contrast,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Preprocess {
    Nlg500,
    Nlu1000,
    None,
}

impl From<Preprocess> for PreprocessMode {
    fn from(p: Preprocess) -> Self {
        match p {
            Preprocess::Nlg500 => PreprocessMode::Nlg500,
            Preprocess::Nlu1000 => PreprocessMode::Nlu1000,
            Preprocess::None => PreprocessMode::Passthrough,
        }
    }
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    common: SolverArgs,
    #[arg(long, value_enum)]
    method: Method,
    #[arg(long)]
    budget: usize,
    /// GOT-D direction; `--method gotd-contrast` implies contrast.
    #[arg(long, value_enum, default_value = "clean")]
    mode: Mode,
    /// Text preprocessing before DSIR feature extraction.
    #[arg(long, value_enum, default_value = "none")]
    preprocess: Preprocess,
    /// Target texts (JSON Lines) for DSIR.
    #[arg(long)]
    target_corpus: Option<PathBuf>,
    /// Disable DSIR's Gumbel noise.
    #[arg(long)]
    no_noise: bool,
    /// Domains resampled after the relevance test.
    #[arg(long, default_value_t = 2)]
    top_domains: usize,
    /// Candidates resampled from the closest domains.
    #[arg(long, default_value_t = 2_000_000)]
    resample_total: usize,
    /// Drop resampled candidates with byte-identical embeddings.
    #[arg(long)]
    dedup: bool,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, value_parser = parse_suite)]
    suite: Suite,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Perf suite candidate count.
    #[arg(long, default_value_t = PerfScale::default().candidates)]
    perf_candidates: usize,
    /// Perf suite target count.
    #[arg(long, default_value_t = PerfScale::default().targets)]
    perf_targets: usize,
    /// Perf suite embedding dimension.
    #[arg(long, default_value_t = PerfScale::default().dim)]
    perf_dim: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} workers: {e}");
            return ExitCode::from(2);
        }
    }
    let outcome = match cli.command {
        Command::Relevance(args) => relevance(&args).map(|()| ExitCode::SUCCESS),
        Command::Select(args) => select(&args).map(|()| ExitCode::SUCCESS),
        Command::Verify(args) => verify(&args, cli.workers),
    };
    outcome.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(if e.is_solver_failure() { 3 } else { 2 })
    })
}

fn parse_suite(s: &str) -> std::result::Result<Suite, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn sinkhorn_config(epsilon_min: Option<f64>) -> SinkhornConfig {
    let mut cfg = SinkhornConfig::default();
    if let Some(e) = epsilon_min {
        cfg.epsilon_min = e;
        cfg.epsilon = cfg.epsilon.max(e);
    }
    cfg
}

fn load_target(path: Option<&Path>) -> Result<DiscreteDistribution> {
    let path = path.ok_or_else(|| Error::InvalidInput("--target is required".into()))?;
    read_embeddings(path)?.into_distribution()
}

fn relevance(args: &RelevanceArgs) -> Result<()> {
    let c = &args.common;
    let catalog = DomainCatalog::load(&c.manifest)?;
    let target = load_target(c.target.as_deref())?;
    let cfg = PipelineConfig {
        relevance_sample_per_domain: c.relevance_sample,
        sinkhorn: sinkhorn_config(c.epsilon_min),
        seed: c.seed,
        ..PipelineConfig::default()
    };
    let mut writer = RunWriter::create(&c.out)?;
    let report = relevance_test(&catalog, &target, &cfg)?;
    let path = writer.write_relevance(&report)?;
    writer.finish();
    println!("ranking: {}", report.ranking.join(", "));
    println!("wrote {}", path.display());
    Ok(())
}

fn select(args: &SelectArgs) -> Result<()> {
    let c = &args.common;
    let catalog = DomainCatalog::load(&c.manifest)?;
    if args.budget == 0 {
        return Err(Error::InvalidInput("--budget must be at least 1".into()));
    }
    let mut writer = RunWriter::create(&c.out)?;
    let started = Instant::now();
    let mut selection = match args.method {
        Method::Gotd | Method::GotdContrast => {
            let target = load_target(c.target.as_deref())?;
            let mode = if args.method == Method::GotdContrast || args.mode == Mode::Contrast {
                SelectionMode::Contrast
            } else {
                SelectionMode::Clean
            };
            let mut budget = args.budget;
            if budget > args.resample_total {
                log::warn!("budget {budget} exceeds the resample size {}; selecting all", args.resample_total);
                budget = args.resample_total;
            }
            let cfg = PipelineConfig {
                relevance_sample_per_domain: c.relevance_sample,
                resample_top_domains: args.top_domains,
                resample_total: args.resample_total,
                budget,
                sinkhorn: sinkhorn_config(c.epsilon_min),
                mode,
                seed: c.seed,
                dedup: args.dedup,
                ..PipelineConfig::default()
            };
            let run = run_got_d_detailed(&catalog, &target, &cfg)?;
            writer.write_relevance(&run.relevance)?;
            writer.write_resample(&run.resample)?;
            run.selection
        }
        Method::Dsir => dsir(&catalog, args)?,
        Method::Knn => {
            let target = load_target(c.target.as_deref())?;
            let candidate = all_embeddings(&catalog)?;
            warn_budget(args.budget, candidate.len());
            knn_select(&candidate, &target, args.budget)?
        }
        Method::Random => {
            let ids = all_ids(&catalog)?;
            warn_budget(args.budget, ids.len());
            random_select(&ids, args.budget, c.seed)?
        }
        Method::AllDomains => {
            let total: usize = catalog.domains.iter().map(|d| d.record_count).sum();
            warn_budget(args.budget, total);
            all_domains_select(&catalog, args.budget, c.seed)?
        }
    };
    if !selection.metadata.keys().any(|k| k.starts_with(otsel::gradient::TIMING_PREFIX)) {
        selection.meta("time.select_ms", started.elapsed().as_millis());
    }
    writer.write_selection(&selection, Some(c.seed))?;
    let dir = writer.dir().to_path_buf();
    writer.finish();
    println!("selected {} of budget {}", selection.len(), selection.budget);
    println!("wrote {}", dir.display());
    Ok(())
}

fn warn_budget(budget: usize, available: usize) {
    if budget > available {
        log::warn!("budget {budget} exceeds the {available} candidates; selecting all");
    }
}

/// Every domain's ids in catalog name order.
fn all_ids(catalog: &DomainCatalog) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for d in catalog.by_name() {
        ids.extend_from_slice(EmbeddingFile::open(&d.embedding_path)?.ids());
    }
    Ok(ids)
}

/// Every domain's embeddings, concatenated in catalog name order.
fn all_embeddings(catalog: &DomainCatalog) -> Result<DiscreteDistribution> {
    let mut ids = Vec::new();
    let mut values = Vec::new();
    let mut dim = None;
    for d in catalog.by_name() {
        let m = read_embeddings(&d.embedding_path)?;
        if *dim.get_or_insert(m.dim) != m.dim {
            return Err(Error::DimensionMismatch {
                expected: dim.unwrap_or_default(),
                found: m.dim,
            });
        }
        ids.extend(m.ids);
        values.extend(m.values);
    }
    DiscreteDistribution::new(values, dim.unwrap_or(1), None, ids)
}

/// Candidate texts of every domain with a corpus, in name order.
fn candidate_records(catalog: &DomainCatalog) -> Result<Vec<Box<dyn Iterator<Item = Result<CorpusRecord>>>>> {
    let mut streams: Vec<Box<dyn Iterator<Item = Result<CorpusRecord>>>> = Vec::new();
    for d in catalog.by_name() {
        let Some(path) = &d.corpus_path else {
            log::warn!("domain {} has no corpus; skipped by dsir", d.name);
            continue;
        };
        let name = d.name.clone();
        streams.push(Box::new(read_corpus(path)?.map(move |r| {
            r.map(|mut r| {
                if r.domain.is_empty() {
                    r.domain = name.clone();
                }
                r
            })
        })));
    }
    if streams.is_empty() {
        return Err(Error::InvalidInput("no domain in the catalog lists a corpus_path".into()));
    }
    Ok(streams)
}

fn dsir(catalog: &DomainCatalog, args: &SelectArgs) -> Result<SelectionResult> {
    let mode: PreprocessMode = args.preprocess.into();
    let target_path = args
        .target_corpus
        .as_deref()
        .ok_or_else(|| Error::InvalidInput("--target-corpus is required for dsir".into()))?;
    let texts = |records: Box<dyn Iterator<Item = Result<CorpusRecord>>>| {
        preprocess(records, mode).map(|r| r.map(|r| r.text))
    };
    let target = NGramFeatureModel::fit(
        texts(Box::new(read_corpus(target_path)?)),
        DEFAULT_BINS,
        DEFAULT_SMOOTHING,
    )?;
    let candidate = NGramFeatureModel::fit(
        candidate_records(catalog)?.into_iter().flat_map(texts),
        DEFAULT_BINS,
        DEFAULT_SMOOTHING,
    )?;
    let noise = if args.no_noise { GumbelNoise::Off } else { GumbelNoise::On };
    let records = candidate_records(catalog)?
        .into_iter()
        .flat_map(|s| preprocess(s, mode));
    let mut result = dsir_select(records, &target, &candidate, args.budget, args.common.seed, noise)?;
    result.meta("preprocess", mode.as_str());
    if result.len() < args.budget {
        log::warn!("budget {} exceeds the {} candidate texts; selected all", args.budget, result.len());
    }
    Ok(result)
}

fn verify(args: &VerifyArgs, workers: Option<usize>) -> Result<ExitCode> {
    let opts = VerifyOptions {
        seed: args.seed,
        workers: workers.unwrap_or(8),
        perf: PerfScale {
            candidates: args.perf_candidates,
            targets: args.perf_targets,
            dim: args.perf_dim,
        },
    };
    std::fs::create_dir_all(&args.out).map_err(|e| Error::Io {
        path: args.out.clone(),
        source: e,
    })?;
    let report = run_suite(args.suite, &opts, &args.out)?;
    for c in &report.checks {
        let status = if c.passed() { "PASS" } else { "FAIL" };
        println!(
            "{status} {} measured={} threshold={} ({} ms)",
            c.name, c.measured, c.threshold, c.runtime_ms
        );
    }
    let path = report.write(&args.out)?;
    println!("wrote {}", path.display());
    Ok(if report.all_passed() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
