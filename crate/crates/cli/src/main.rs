//! `alsc-cr`: build ALSC-CR benchmarks, run auxiliary fine-tuning sweeps
//! against a trainer backend and report the results.
//!
//! Exit codes: 0 success, 1 runtime error (one JSON line on stderr),
//! 2 usage error.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use alsc_cr::backend::{
    run_conformance, serve_lines, BackendSpec, HttpTransport, InProcess, MockBackend, SkillProfile, StdioTransport,
    Transport, MOCK_TIMEOUT, REAL_TIMEOUT,
};
use alsc_cr::corpus::{
    clean, load_aux_corpus, parse_mams_xml, parse_semeval_xml, read_jsonl, write_jsonl, AspectInstance, AuxTask,
    RawReview, SourceDataset, Split,
};
use alsc_cr::dataset::{build_alsc_cr, build_alsc_regular, subset_fraction, DatasetBundle, Partition, ValPoolReading};
use alsc_cr::labeler::{
    apply_decisions, classify_all, emit_annotation_queue, load_decisions, LabeledInstance, PronounLexicon,
};
use alsc_cr::metrics::{DEFAULT_ALPHA, DEFAULT_TRIM_GAMMA};
use alsc_cr::orchestrator::{CellRef, ExperimentConfig, Orchestrator, RunOptions, RunStore, MIN_SEEDS};
use alsc_cr::prompt::{render_alsc, render_aux, write_prompted_jsonl, PromptConfig};
use alsc_cr::report::{
    compare, emit_report, pronoun_markdown, pronoun_report, read_imported_scores, Format, ReportSpec,
};

#[derive(Parser)]
#[command(
    name = "alsc-cr",
    version,
    about = "Coreference-focused ALSC benchmark and auxiliary-task experiment harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse Rest16 / MAMS XML and write cleaned aspect instances (JSONL).
    Ingest(IngestArgs),
    /// Detect pronouns and queue Pronoun cases for CR review.
    Label(LabelArgs),
    /// Fold CR review decisions into labeled instances.
    ApplyDecisions(ApplyArgs),
    /// Build the ALSC-CR and ALSC-Regular bundle manifests.
    Build(BuildArgs),
    /// Render prompts for one task.
    Render(RenderArgs),
    /// Run baseline, aux sweep and DPR probe from an experiment config.
    Run(RunArgs),
    /// Yuen-Welch comparisons and per-pronoun accuracy.
    Stats(StatsArgs),
    /// Emit results tables and plot data from a run store.
    Report(ReportArgs),
    /// Check a backend against the wire protocol.
    BackendCheck(BackendCheckArgs),
    /// Add externally produced per-seed scores to a run store.
    Import(ImportArgs),
    /// Serve the deterministic mock backend on stdin/stdout.
    MockBackend(MockArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Rest16 SemEval XML as SPLIT=PATH (train, val or test); repeatable.
    #[arg(long, value_name = "SPLIT=PATH")]
    rest16: Vec<String>,
    /// MAMS XML as SPLIT=PATH; repeatable.
    #[arg(long, value_name = "SPLIT=PATH")]
    mams: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LabelArgs {
    /// Cleaned instances from `ingest`.
    #[arg(long)]
    corpus: PathBuf,
    /// Labeled instances (JSONL).
    #[arg(long)]
    out: PathBuf,
    /// Annotation queue (TSV).
    #[arg(long)]
    queue: PathBuf,
    /// Pronoun list, one per line (default: the built-in definite pronouns).
    #[arg(long)]
    lexicon: Option<PathBuf>,
}

#[derive(Args)]
struct ApplyArgs {
    #[arg(long)]
    labeled: PathBuf,
    /// Decisions TSV (instance_id, verdict, annotator, note).
    #[arg(long)]
    decisions: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Write the still-unreviewed queue here.
    #[arg(long)]
    queue: Option<PathBuf>,
    #[arg(long)]
    lexicon: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ValPool {
    MamsAllRestNonPronoun,
    BothNonPronoun,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    labeled: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Directory for alsc-cr.json and alsc-regular.json.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long, value_enum, default_value = "mams-all-rest-non-pronoun")]
    val_pool: ValPool,
}

#[derive(Clone, Copy, ValueEnum)]
enum RenderTask {
    Alsc,
    Commongen,
    Cosmosqa,
    Squad,
    Qqp,
    Dpr,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long, value_enum)]
    task: RenderTask,
    /// Labeled instances (alsc) or a raw auxiliary corpus (JSONL).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Aux corpus split; the QQP cap applies to train.
    #[arg(long, value_enum, default_value = "train")]
    split: SplitArg,
    /// Restrict alsc rendering to one bundle partition.
    #[arg(long, requires = "partition")]
    bundle: Option<PathBuf>,
    #[arg(long, value_enum)]
    partition: Option<SplitArg>,
    /// Keep a seed-keyed fraction of aux records.
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum PhaseArg {
    All,
    Baseline,
    Sweep,
    Probe,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override the configured backend.
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    #[arg(long, value_enum, default_value = "all")]
    phase: PhaseArg,
    /// Stop after this many new runs (resume later).
    #[arg(long)]
    max_new_runs: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Mock,
}

#[derive(Args)]
struct SpecArgs {
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = DEFAULT_TRIM_GAMMA)]
    trim_gamma: f64,
    #[arg(long, default_value_t = MIN_SEEDS)]
    min_seeds: usize,
}

impl SpecArgs {
    fn spec(&self) -> ReportSpec {
        ReportSpec {
            alpha: self.alpha,
            trim_gamma: self.trim_gamma,
            min_seeds: self.min_seeds,
        }
    }
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    store: PathBuf,
    /// Comparison as A:B, e.g. `baseline:qqp@0.5` or `regular:baseline`.
    #[arg(long, value_name = "A:B")]
    compare: Vec<String>,
    /// Also write the results to <store>/stats.jsonl.
    #[arg(long)]
    save: bool,
    /// Per-pronoun accuracy for one ALSC-CR test run.
    #[arg(long, value_name = "RUN_ID", requires_all = ["labeled", "bundle"])]
    by_pronoun: Option<String>,
    #[arg(long)]
    labeled: Option<PathBuf>,
    /// ALSC-CR bundle whose test partition the run was scored on.
    #[arg(long)]
    bundle: Option<PathBuf>,
    #[command(flatten)]
    spec: SpecArgs,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    store: PathBuf,
    /// Comma-separated: markdown, csv, json-plot.
    #[arg(long, value_delimiter = ',', default_value = "markdown")]
    format: Vec<String>,
    /// Write files here instead of printing.
    #[arg(long)]
    out: Option<PathBuf>,
    /// List the run ids behind every cell.
    #[arg(long)]
    provenance: bool,
    #[command(flatten)]
    spec: SpecArgs,
}

#[derive(Args)]
struct BackendCheckArgs {
    /// Check the built-in mock.
    #[arg(long, conflicts_with_all = ["command", "url"])]
    mock: bool,
    /// Backend command line, spoken to over stdio.
    #[arg(long, num_args = 1.., allow_hyphen_values = true)]
    command: Vec<String>,
    #[arg(long)]
    url: Option<String>,
    #[arg(long)]
    timeout_secs: Option<u64>,
    /// Directory for the toy data files.
    #[arg(long)]
    workdir: Option<PathBuf>,
}

#[derive(Args)]
struct ImportArgs {
    #[arg(long)]
    store: PathBuf,
    /// CSV (cell,seed,metric,...) or JSONL of scores.
    #[arg(long)]
    scores: PathBuf,
    /// Metric name for rows that do not carry one.
    #[arg(long)]
    metric_variant: Option<String>,
}

#[derive(Args)]
struct MockArgs {
    #[arg(long)]
    skill_profile: Option<PathBuf>,
}

/// Runtime failure reported as one JSON line.
struct CliError {
    kind: String,
    message: String,
}

impl<E: std::error::Error> From<E> for CliError {
    fn from(e: E) -> Self {
        let ty = std::any::type_name::<E>().rsplit("::").next().unwrap_or("Error");
        let debug = format!("{e:?}");
        let variant: String = debug.chars().take_while(|c| c.is_alphanumeric() || *c == '_').collect();
        let kind = if variant.is_empty() || variant == ty {
            ty.to_string()
        } else {
            format!("{ty}.{variant}")
        };
        CliError {
            kind,
            message: e.to_string(),
        }
    }
}

fn fail(kind: &str, message: impl Into<String>) -> CliError {
    CliError {
        kind: kind.into(),
        message: message.into(),
    }
}

type CliResult = Result<(), CliError>;

fn print_json(value: &serde_json::Value) {
    println!("{value}");
}

fn read_lexicon(path: Option<&Path>) -> Result<PronounLexicon, CliError> {
    match path {
        None => Ok(PronounLexicon::default()),
        Some(p) => {
            let text = fs::read_to_string(p)?;
            Ok(PronounLexicon::new(
                text.lines().map(str::trim).filter(|l| !l.is_empty()),
            ))
        }
    }
}

fn read_labeled(path: &Path) -> Result<Vec<LabeledInstance>, CliError> {
    Ok(read_jsonl(BufReader::new(File::open(path)?))?)
}

fn write_records<T: serde::Serialize>(path: &Path, records: &[T]) -> CliResult {
    let mut out = BufWriter::new(File::create(path)?);
    write_jsonl(records, &mut out)?;
    out.flush()?;
    Ok(())
}

fn parse_split_path(arg: &str) -> Result<(Split, PathBuf), CliError> {
    let (split, path) = arg
        .split_once('=')
        .ok_or_else(|| fail("Usage", format!("expected SPLIT=PATH, got {arg:?}")))?;
    let split: Split = split.parse().map_err(|e: String| fail("Usage", e))?;
    Ok((split, PathBuf::from(path)))
}

fn ingest(args: IngestArgs) -> CliResult {
    if args.rest16.is_empty() && args.mams.is_empty() {
        return Err(fail("Usage", "give at least one --rest16 or --mams input"));
    }
    let mut reviews: Vec<RawReview> = Vec::new();
    for (dataset, inputs) in [(SourceDataset::Rest16, &args.rest16), (SourceDataset::Mams, &args.mams)] {
        for arg in inputs {
            let (split, path) = parse_split_path(arg)?;
            let bytes = fs::read(&path)?;
            let parsed = match dataset {
                SourceDataset::Rest16 => parse_semeval_xml(&bytes, split),
                SourceDataset::Mams => parse_mams_xml(&bytes, split),
            }
            .map_err(|e| fail("IngestError", format!("{}: {e}", path.display())))?;
            reviews.extend(parsed);
        }
    }
    let instances: Vec<AspectInstance> = clean(&reviews)?;
    write_records(&args.out, &instances)?;
    print_json(&json!({"reviews": reviews.len(), "instances": instances.len()}));
    Ok(())
}

fn label(args: LabelArgs) -> CliResult {
    let lexicon = read_lexicon(args.lexicon.as_deref())?;
    let instances: Vec<AspectInstance> = read_jsonl(BufReader::new(File::open(&args.corpus)?))?;
    let labeled = classify_all(instances, &lexicon);
    write_records(&args.out, &labeled)?;
    let queued = emit_annotation_queue(&labeled, &lexicon, &args.queue)?;
    let pronoun = labeled.iter().filter(|l| l.is_pronoun_case()).count();
    print_json(&json!({"instances": labeled.len(), "pronoun_cases": pronoun, "queued": queued}));
    Ok(())
}

fn apply(args: ApplyArgs) -> CliResult {
    let labeled = read_labeled(&args.labeled)?;
    let decisions = load_decisions(&args.decisions)?;
    let (labeled, counts) = apply_decisions(labeled, &decisions)?;
    write_records(&args.out, &labeled)?;
    if let Some(queue) = &args.queue {
        let lexicon = read_lexicon(args.lexicon.as_deref())?;
        emit_annotation_queue(&labeled, &lexicon, queue)?;
    }
    print_json(&serde_json::to_value(counts).expect("counts serialize"));
    Ok(())
}

fn sizes(b: &DatasetBundle) -> serde_json::Value {
    json!({"train": b.train.len(), "val": b.val.len(), "test": b.test.len(), "digest": b.digest})
}

fn build(args: BuildArgs) -> CliResult {
    let labeled = read_labeled(&args.labeled)?;
    let reading = match args.val_pool {
        ValPool::MamsAllRestNonPronoun => ValPoolReading::MamsAllRestNonPronoun,
        ValPool::BothNonPronoun => ValPoolReading::BothNonPronoun,
    };
    let cr = build_alsc_cr(&labeled, args.seed, reading)?;
    let regular = build_alsc_regular(&labeled, args.seed, &cr)?;
    fs::create_dir_all(&args.out_dir)?;
    cr.write_manifest(&args.out_dir.join("alsc-cr.json"))?;
    regular.write_manifest(&args.out_dir.join("alsc-regular.json"))?;
    print_json(&json!({"seed": args.seed, "alsc_cr": sizes(&cr), "alsc_regular": sizes(&regular)}));
    Ok(())
}

fn render(args: RenderArgs) -> CliResult {
    let out = BufWriter::new(File::create(&args.out)?);
    let examples = match args.task {
        RenderTask::Alsc => {
            let labeled = read_labeled(&args.input)?;
            let selected: Vec<&LabeledInstance> = match (&args.bundle, args.partition) {
                (Some(path), Some(p)) => {
                    let bundle = DatasetBundle::read_manifest(path)?;
                    let partition = match p {
                        SplitArg::Train => Partition::Train,
                        SplitArg::Val => Partition::Val,
                        SplitArg::Test => Partition::Test,
                    };
                    let by_id: std::collections::HashMap<&str, &LabeledInstance> =
                        labeled.iter().map(|l| (l.id(), l)).collect();
                    bundle
                        .partition(partition)
                        .iter()
                        .map(|id| {
                            by_id
                                .get(id.as_str())
                                .copied()
                                .ok_or_else(|| fail("UnknownInstance", id.clone()))
                        })
                        .collect::<Result<_, _>>()?
                }
                _ => labeled.iter().collect(),
            };
            selected.iter().map(|l| render_alsc(&l.instance)).collect()
        }
        task => {
            let aux = match task {
                RenderTask::Commongen => AuxTask::Commongen,
                RenderTask::Cosmosqa => AuxTask::CosmosQa,
                RenderTask::Squad => AuxTask::Squad,
                RenderTask::Qqp => AuxTask::Qqp,
                RenderTask::Dpr | RenderTask::Alsc => AuxTask::Dpr,
            };
            let mut records = load_aux_corpus(aux, args.split.into(), &args.input)?;
            if let Some(f) = args.fraction {
                records = subset_fraction(&records, f, args.seed);
            }
            let config = PromptConfig::default();
            records
                .iter()
                .map(|r| render_aux(r, &config))
                .collect::<Result<Vec<_>, _>>()?
        }
    };
    write_prompted_jsonl(&examples, out)?;
    print_json(&json!({"rendered": examples.len()}));
    Ok(())
}

fn run(args: RunArgs) -> CliResult {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(BackendKind::Mock) = args.backend {
        if !matches!(config.backend, BackendSpec::Mock { .. }) {
            config.backend = BackendSpec::mock();
        }
    }
    let options = RunOptions {
        max_new_runs: args.max_new_runs,
    };
    let mut orch = Orchestrator::new(config, options)?;
    let records = match args.phase {
        PhaseArg::All => orch.run_all()?,
        PhaseArg::Baseline => orch.run_baseline()?,
        PhaseArg::Sweep => orch.run_aux_sweep()?,
        PhaseArg::Probe => {
            let prior = orch.store().records()?;
            orch.run_dpr_probe(&prior)?
        }
    };
    let failed = records.iter().filter(|r| !r.is_ok()).count();
    let summary = json!({
        "records": records.len(),
        "executed": orch.executed(),
        "failed": failed,
        "store": orch.store().root().display().to_string(),
    });
    if let Err(e) = orch.into_gateway().shutdown() {
        log::warn!("backend shutdown: {e}");
    }
    print_json(&summary);
    Ok(())
}

fn stats(args: StatsArgs) -> CliResult {
    let store = RunStore::open_read_only(&args.store)?;
    let records = store.records()?;
    let spec = args.spec.spec();
    let mut results = Vec::new();
    for pair in &args.compare {
        let (a, b) = pair
            .split_once(':')
            .ok_or_else(|| fail("Usage", format!("expected A:B, got {pair:?}")))?;
        let a: CellRef = a.parse().map_err(|e: String| fail("Usage", e))?;
        let b: CellRef = b.parse().map_err(|e: String| fail("Usage", e))?;
        let r = compare(&records, &a, &b, &spec)?;
        let line = serde_json::to_string(&r).expect("stat results serialize");
        println!("{line}");
        results.push(line);
    }
    if args.save && !results.is_empty() {
        let mut text = results.join("\n");
        text.push('\n');
        fs::write(args.store.join("stats.jsonl"), text)?;
    }
    if let Some(run_id) = &args.by_pronoun {
        let run = records
            .iter()
            .find(|r| &r.run_id == run_id)
            .ok_or_else(|| fail("UnknownRun", run_id.clone()))?;
        let labeled = read_labeled(args.labeled.as_deref().expect("required by clap"))?;
        let bundle = DatasetBundle::read_manifest(args.bundle.as_deref().expect("required by clap"))?;
        let by_id: std::collections::HashMap<&str, &LabeledInstance> = labeled.iter().map(|l| (l.id(), l)).collect();
        let test: Vec<LabeledInstance> = bundle
            .test
            .iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .map(|l| (*l).clone())
                    .ok_or_else(|| fail("UnknownInstance", id.clone()))
            })
            .collect::<Result<_, _>>()?;
        let rows = pronoun_report(run, &test, &PronounLexicon::default())?;
        print!("{}", pronoun_markdown(&rows));
    }
    if args.compare.is_empty() && args.by_pronoun.is_none() {
        return Err(fail("Usage", "nothing to do: pass --compare or --by-pronoun"));
    }
    Ok(())
}

fn report(args: ReportArgs) -> CliResult {
    let formats = args
        .format
        .iter()
        .map(|f| f.parse::<Format>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| fail("Usage", e))?;
    let store = RunStore::open_read_only(&args.store)?;
    let records = store.records()?;
    let files = emit_report(&records, &args.spec.spec(), &formats, args.provenance)?;
    match &args.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            for (name, content) in &files {
                fs::write(dir.join(name), content)?;
            }
            print_json(&json!({"written": files.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>()}));
        }
        None => {
            let mut stdout = io::stdout().lock();
            for (i, (_, content)) in files.iter().enumerate() {
                if i > 0 {
                    writeln!(stdout)?;
                }
                write!(stdout, "{content}")?;
            }
        }
    }
    Ok(())
}

fn backend_check(args: BackendCheckArgs) -> CliResult {
    let mut transport: Box<dyn Transport> = if args.mock {
        let timeout = args.timeout_secs.map_or(MOCK_TIMEOUT, std::time::Duration::from_secs);
        Box::new(InProcess::new(
            MockBackend::new(None).map_err(|e| fail("Config", e))?,
            timeout,
        ))
    } else {
        let timeout = args.timeout_secs.map_or(REAL_TIMEOUT, std::time::Duration::from_secs);
        match (&args.url, args.command.is_empty()) {
            (Some(url), _) => Box::new(HttpTransport::new(url.clone(), timeout)),
            (None, false) => Box::new(StdioTransport::spawn(args.command.clone(), timeout)?),
            (None, true) => return Err(fail("Usage", "pass --mock, --command or --url")),
        }
    };
    let workdir = match &args.workdir {
        Some(d) => d.clone(),
        None => std::env::temp_dir().join(format!("alsc-cr-backend-check-{}", std::process::id())),
    };
    fs::create_dir_all(&workdir)?;
    let checks = run_conformance(transport.as_mut(), &workdir)?;
    for c in &checks {
        print_json(&serde_json::to_value(c).expect("checks serialize"));
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(fail("ConformanceFailed", failed.join(", ")))
    }
}

fn import(args: ImportArgs) -> CliResult {
    let scores = read_imported_scores(&args.scores)?;
    let mut store = RunStore::open(&args.store)?;
    let n = scores.len();
    for mut score in scores {
        if score.metric_variant.is_none() {
            score.metric_variant = args.metric_variant.clone();
        }
        let record = score.into_record().map_err(|e| fail("ImportError", e))?;
        store.put(&record)?;
    }
    print_json(&json!({"imported": n}));
    Ok(())
}

fn mock_backend(args: MockArgs) -> CliResult {
    let profile = match &args.skill_profile {
        Some(p) => Some(SkillProfile::load(p).map_err(|e| fail("Config", e))?),
        None => None,
    };
    let mut backend = MockBackend::new(profile).map_err(|e| fail("Config", e))?;
    serve_lines(&mut backend, io::stdin().lock(), io::stdout().lock())?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Label(a) => label(a),
        Command::ApplyDecisions(a) => apply(a),
        Command::Build(a) => build(a),
        Command::Render(a) => render(a),
        Command::Run(a) => run(a),
        Command::Stats(a) => stats(a),
        Command::Report(a) => report(a),
        Command::BackendCheck(a) => backend_check(a),
        Command::Import(a) => import(a),
        Command::MockBackend(a) => mock_backend(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = if e.kind == "Usage" { 2 } else { 1 };
            eprintln!("{}", json!({"error": e.kind, "message": e.message}));
            ExitCode::from(code)
        }
    }
}
