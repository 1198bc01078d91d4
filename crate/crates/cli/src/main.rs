use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use simeval_core::bench::{emit_report, run_bench, validate_report, with_workers, BenchConfig, BenchReport, Benchmark};
use simeval_core::ingest::{corpus_from_weblog, parse_qrels, parse_weblog_tsv, Qrels, SessionizeConfig};
use simeval_core::schema::{read_jsonl, read_jsonl_from, validate_session, write_jsonl, ReadMode};
use simeval_core::simulators::{simulate_corpus, SimulatorConfig, SimulatorKind};
use simeval_core::Error;

const EXIT_VIOLATIONS: u8 = 2;
const EXIT_GATE: u8 = 3;
const EXIT_CONFIG: u8 = 4;
const EXIT_IO: u8 = 5;
/// Failures the exit-code table does not name (numerical degeneracy and the like).
const EXIT_OTHER: u8 = 1;

const SEED_ENV: &str = "SIMEVAL_SEED";

#[derive(Parser, Debug)]
#[command(name = "simeval", version, about = "Evaluate user simulators of search sessions")]
struct Cli {
    /// Override every configured seed (benchmarks run with this single seed).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Print the resolved configuration and its hash, then exit.
    #[arg(long, global = true)]
    dry_run: bool,

    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert a raw log into canonical JSONL plus a loss manifest.
    Ingest(IngestArgs),
    /// Run a reference simulator over the SERPs of a real corpus.
    Simulate(SimulateArgs),
    /// Check a canonical JSONL corpus; violations go to stderr.
    Validate {
        corpus: PathBuf,
    },
    /// Realism metrics and classifier audit.
    B1(BenchArgs),
    /// Tester reliability against qrels, with RATE weighting.
    B2(BenchArgs),
    /// Correlation of realism metrics with tester reliability.
    B3(BenchArgs),
    /// Validate an emitted report.json and regenerate its tables.
    Report(ReportArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum InputFormat {
    WeblogTsv,
    Jsonl,
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[arg(long, value_enum, default_value = "weblog-tsv")]
    format: InputFormat,
    /// Inactivity gap (minutes) that splits sessions.
    #[arg(long, default_value_t = 30.0)]
    timeout_min: f64,
    /// Minimum queries per emitted session.
    #[arg(long, default_value_t = 2)]
    min_events: usize,
    #[arg(long, default_value_t = 10)]
    serp_depth: u32,
    #[arg(long, default_value = "weblog")]
    dataset_id: String,
    #[arg(long, default_value = "unversioned")]
    dataset_version: String,
    /// Drop unparseable JSONL lines instead of failing.
    #[arg(long)]
    lenient: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    manifest: Option<PathBuf>,
    input: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Kind {
    Pbm,
    Dbn,
    Heuristic,
    Llm,
}

impl From<Kind> for SimulatorKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Pbm => SimulatorKind::Pbm,
            Kind::Dbn => SimulatorKind::Dbn,
            Kind::Heuristic => SimulatorKind::Heuristic,
            Kind::Llm => SimulatorKind::Llm,
        }
    }
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    kind: Option<Kind>,
    /// Simulator parameters (YAML); `--kind` overrides its `kind`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    real: PathBuf,
    /// TREC qrels; without them every document counts as non-relevant.
    #[arg(long)]
    qrels: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's `output`, then `simeval-out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// A report.json or the directory holding one.
    report: PathBuf,
    /// Where to write regenerated tables; defaults to the report's directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Gate { .. } => EXIT_GATE,
            Error::InvalidConfig(_) | Error::Yaml(_) => EXIT_CONFIG,
            Error::Io { .. } => EXIT_IO,
            Error::Parse { .. }
            | Error::SchemaVersionUnsupported { .. }
            | Error::DuplicateSessionId(_)
            | Error::MixedSchemaVersions(..)
            | Error::InvalidSimulatorOutput { .. }
            | Error::ReportSchema(_) => EXIT_VIOLATIONS,
            _ => EXIT_OTHER,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn config_error(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        message: message.into(),
    }
}

fn io_error(path: &Path, e: io::Error) -> Failure {
    Failure {
        code: EXIT_IO,
        message: format!("{}: {e}", path.display()),
    }
}

type CliResult = Result<u8, Failure>;

fn emit(value: serde_json::Value) -> Result<(), Failure> {
    let mut out = io::stdout().lock();
    writeln!(out, "{value}").map_err(|e| io_error(Path::new("<stdout>"), e))
}

fn env_seed() -> Result<Option<u64>, Failure> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| config_error(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// Seed precedence: `--seed`, then the config file, then `SIMEVAL_SEED`.
fn load_bench_config(path: &Path, bench: Benchmark, seed: Option<u64>) -> Result<BenchConfig, Failure> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let raw: serde_yaml::Value = serde_yaml::from_str(&text).map_err(|e| config_error(e.to_string()))?;
    let mut cfg = BenchConfig::from_yaml_str(&text)?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    if raw.get("benchmark").is_some() && cfg.benchmark != bench {
        return Err(config_error(format!(
            "config declares benchmark {:?} but the {:?} subcommand was used",
            cfg.benchmark, bench
        )));
    }
    cfg.benchmark = bench;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    } else if raw.get("seeds").is_none() {
        if let Some(s) = env_seed()? {
            cfg.seeds = vec![s];
        }
    }
    Ok(cfg)
}

fn run_benchmark(cli: &Cli, bench: Benchmark, args: &BenchArgs) -> CliResult {
    let cfg = load_bench_config(&args.config, bench, cli.seed)?;
    let hash = cfg.config_hash()?;
    if cli.dry_run {
        let config = serde_json::to_value(&cfg).map_err(Error::from)?;
        emit(json!({ "config": config, "config_hash": hash }))?;
        return Ok(0);
    }
    cfg.validate()?;
    let report = in_pool(cli.workers, || run_bench(&cfg))??;
    for g in report.gates.iter().filter(|g| !g.passed) {
        eprintln!("excluded {}: {:?}: {}", g.scope, g.gate, g.reason);
    }
    let dir = args
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("simeval-out"));
    let files = emit_report(&report, &dir)?;
    emit(json!({
        "benchmark": bench,
        "config_hash": hash,
        "out": dir,
        "files": files,
    }))?;
    Ok(0)
}

fn in_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, Failure> {
    match workers {
        Some(n) => Ok(with_workers(n, f)?),
        None => Ok(f()),
    }
}

fn ingest(cli: &Cli, a: &IngestArgs) -> CliResult {
    if !(a.timeout_min > 0.0) {
        return Err(config_error("--timeout-min must be positive"));
    }
    let cfg = SessionizeConfig {
        dataset_id: a.dataset_id.clone(),
        dataset_version: a.dataset_version.clone(),
        timeout_minutes: a.timeout_min,
        min_session_events: a.min_events,
        serp_depth: a.serp_depth,
        ..SessionizeConfig::default()
    };
    if cli.dry_run {
        let params = json!({
            "format": format!("{:?}", a.format),
            "dataset_id": cfg.dataset_id,
            "dataset_version": cfg.dataset_version,
            "timeout_minutes": cfg.timeout_minutes,
            "min_session_events": cfg.min_session_events,
            "serp_depth": cfg.serp_depth,
        });
        let hash = simeval_core::ingest::config_hash(&params);
        emit(json!({ "config": params, "config_hash": hash }))?;
        return Ok(0);
    }
    let corpus = in_pool(cli.workers, || -> simeval_core::Result<_> {
        match a.format {
            InputFormat::WeblogTsv => corpus_from_weblog(parse_weblog_tsv(&a.input)?, &cfg),
            InputFormat::Jsonl => read_jsonl(
                &a.input,
                if a.lenient { ReadMode::Lenient } else { ReadMode::Strict },
            ),
        }
    })??;
    let m = &corpus.manifest;
    for e in &m.parse_errors {
        eprintln!("line {}: {}", e.line, e.message);
    }
    write_jsonl(&corpus, &a.out)?;
    if let Some(p) = &a.manifest {
        m.write_json(p)?;
    }
    emit(json!({
        "out": a.out,
        "manifest": a.manifest,
        "emitted_session_count": m.emitted_session_count,
        "emitted_event_count": m.emitted_event_count,
        "dropped_lines": m.dropped_lines,
        "config_hash": m.config_hash,
    }))?;
    Ok(0)
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> CliResult {
    let (mut cfg, seed_set) = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_error(p, e))?;
            let raw: serde_yaml::Value = serde_yaml::from_str(&text).map_err(|e| config_error(e.to_string()))?;
            let seed_set = raw.get("seed").is_some();
            let cfg: SimulatorConfig = serde_yaml::from_value(raw).map_err(|e| config_error(e.to_string()))?;
            (cfg, seed_set)
        }
        None => match a.kind {
            Some(k) => (SimulatorConfig::of_kind(k.into()), false),
            None => return Err(config_error("simulate needs --kind or --config")),
        },
    };
    if let Some(k) = a.kind {
        cfg.kind = k.into();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    } else if !seed_set {
        if let Some(s) = env_seed()? {
            cfg.seed = s;
        }
    }
    cfg.validate()?;
    if cli.dry_run {
        let config = serde_json::to_value(&cfg).map_err(Error::from)?;
        let hash = simeval_core::ingest::config_hash(&config);
        emit(json!({ "config": config, "config_hash": hash }))?;
        return Ok(0);
    }
    let real = read_jsonl(&a.real, ReadMode::Strict)?;
    let qrels = match &a.qrels {
        Some(p) => parse_qrels(p)?,
        None => {
            eprintln!("no qrels given: every document is treated as non-relevant");
            Qrels::new()
        }
    };
    let sim = in_pool(cli.workers, || simulate_corpus(&real, &qrels, &cfg))??;
    write_jsonl(&sim, &a.out)?;
    if let Some(p) = &a.manifest {
        sim.manifest.write_json(p)?;
    }
    emit(json!({
        "out": a.out,
        "simulator": cfg.simulator_id(),
        "seed": cfg.seed,
        "emitted_session_count": sim.manifest.emitted_session_count,
        "config_hash": sim.manifest.config_hash,
    }))?;
    Ok(0)
}

fn validate(path: &Path) -> CliResult {
    let file = fs::File::open(path).map_err(|e| io_error(path, e))?;
    let corpus = read_jsonl_from(io::BufReader::new(file), ReadMode::Lenient).map_err(|e| match e {
        Error::Io { source, .. } => io_error(path, source),
        other => other.into(),
    })?;
    let mut bad_sessions = 0usize;
    let mut violations = 0usize;
    for e in &corpus.manifest.parse_errors {
        eprintln!("line {}: PARSE_ERROR: {}", e.line, e.message);
    }
    for s in &corpus.sessions {
        let v = validate_session(s);
        if !v.is_empty() {
            bad_sessions += 1;
            violations += v.len();
            for x in &v {
                eprintln!("{}: {}: {}", s.session_id, x, x.detail);
            }
        }
    }
    let unparsed = corpus.manifest.dropped_lines as usize;
    emit(json!({
        "sessions": corpus.sessions.len(),
        "invalid_sessions": bad_sessions,
        "violations": violations,
        "unparsed_lines": unparsed,
    }))?;
    Ok(if bad_sessions + unparsed == 0 { 0 } else { EXIT_VIOLATIONS })
}

fn report(a: &ReportArgs) -> CliResult {
    let path = if a.report.is_dir() {
        a.report.join("report.json")
    } else {
        a.report.clone()
    };
    let text = fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Failure {
        code: EXIT_VIOLATIONS,
        message: format!("{}: {e}", path.display()),
    })?;
    validate_report(&value)?;
    let parsed: BenchReport = serde_json::from_value(value).map_err(|e| Failure {
        code: EXIT_VIOLATIONS,
        message: format!("{}: {e}", path.display()),
    })?;
    let dir = a
        .out
        .clone()
        .unwrap_or_else(|| path.parent().map(Path::to_path_buf).unwrap_or_default());
    let files = emit_report(&parsed, &dir)?;
    emit(json!({
        "benchmark": parsed.provenance.benchmark,
        "config_hash": parsed.provenance.config_hash,
        "out": dir,
        "files": files,
    }))?;
    Ok(0)
}

fn run(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Ingest(a) => ingest(cli, a),
        Command::Simulate(a) => simulate(cli, a),
        Command::Validate { corpus } => validate(corpus),
        Command::B1(a) => run_benchmark(cli, Benchmark::B1, a),
        Command::B2(a) => run_benchmark(cli, Benchmark::B2, a),
        Command::B3(a) => run_benchmark(cli, Benchmark::B3, a),
        Command::Report(a) => report(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_CONFIG),
            };
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("simeval: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
