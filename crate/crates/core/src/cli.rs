//! `tcbench` command line: run, report, annotate, validate.
//!
//! Exit status 0 on success, 1 for usage or configuration errors, 2 for
//! runtime failures.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::env::{load_task_suite, TaskSuite};
use crate::gateway::{HttpConfig, HttpProvider};
use crate::metrics::{
    self, annotate_error, filter_tasks, format_score, overall_score, parse_exclusions, pass_hat_k_report, turn_comparison,
    turn_stats, AnnotationStore, ErrorAnnotation, ErrorCategory, RewardMatrix,
};
use crate::runner::{
    self, domain_context, read_trajectories, run_experiment, write_trajectories, LiveProviders, ProviderFactory, RunConfig,
    RunError, ScriptFile, ScriptedProviders,
};
use crate::strategies::{Ablation, PromptStyle, StrategyKind};
use crate::usersim::FaultProfile;

pub const TRAJECTORY_LOG: &str = "trajectories.jsonl";
pub const MATRIX_FILE: &str = "reward_matrix.json";
pub const ANNOTATION_STORE: &str = "annotations.jsonl";

#[derive(Debug, Parser)]
#[command(name = "tcbench", version, about = "Multi-turn tool-calling benchmark harness")]
pub struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run strategies over a task suite and write trajectories and reward matrices.
    Run(RunArgs),
    /// Print pass^k reports and turn statistics.
    Report(ReportArgs),
    /// Add error annotations or summarize an annotation store.
    #[command(subcommand)]
    Annotate(AnnotateCommand),
    /// Check a suite (and optionally a script file) without running anything.
    Validate(ValidateArgs),
}

#[derive(Debug, Args, Default)]
pub struct RunArgs {
    /// TOML experiment file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub suite: Option<PathBuf>,
    /// Strategy name, comma-separated list, or `all`.
    #[arg(long)]
    pub strategy: Option<String>,
    /// `scripted:<path>` or `live:<endpoint name>`.
    #[arg(long)]
    pub provider: Option<String>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub max_turns: Option<usize>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// File of task ids to skip, one per line.
    #[arg(long)]
    pub exclude: Option<PathBuf>,
    #[arg(long)]
    pub no_memory: bool,
    #[arg(long)]
    pub no_constraints: bool,
    #[arg(long)]
    pub no_tools: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Zero all event timestamps so artifacts are byte-comparable.
    #[arg(long)]
    pub normalize_timestamps: bool,
    /// Count provider-failure trials as failures instead of dropping them.
    #[arg(long)]
    pub count_aborted: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Reward matrix files; several are treated as separate domains.
    #[arg(long = "matrix", required = true)]
    pub matrices: Vec<PathBuf>,
    /// Largest k to report.
    #[arg(short = 'k', long = "k", default_value_t = 1)]
    pub k: u32,
    /// Task-id exclusion list; prints the report before and after.
    #[arg(long)]
    pub exclude: Option<PathBuf>,
    /// Trajectory logs for turn statistics, one per strategy.
    #[arg(long = "trajectories")]
    pub trajectories: Vec<PathBuf>,
    /// Only successful trajectories count towards turn statistics.
    #[arg(long)]
    pub success_only: bool,
    /// Emit JSON instead of text.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Subcommand)]
pub enum AnnotateCommand {
    /// Attach an error annotation to one trajectory event.
    Add(AnnotateArgs),
    /// Per-category counts of an annotation store.
    Histogram {
        #[arg(long)]
        store: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    #[arg(long)]
    pub log: PathBuf,
    /// Defaults to annotations.jsonl next to the log.
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub task: String,
    #[arg(long)]
    pub trial: usize,
    #[arg(long)]
    pub category: String,
    #[arg(long)]
    pub event: usize,
    #[arg(long, default_value = "")]
    pub note: String,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub suite: PathBuf,
    #[arg(long)]
    pub scripts: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

fn usage(e: impl ToString) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime(e: impl ToString) -> CliError {
    CliError::Runtime(e.to_string())
}

/// File form of a run. Relative paths resolve against the file's directory.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub suite: Option<PathBuf>,
    pub strategy: Option<String>,
    pub provider: Option<String>,
    pub out: Option<PathBuf>,
    pub exclude: Option<PathBuf>,
    pub trials: Option<usize>,
    pub max_turns: Option<usize>,
    pub parallelism: Option<usize>,
    pub seed: Option<u64>,
    pub max_actions_per_turn: Option<usize>,
    pub normalize_timestamps: Option<bool>,
    pub count_aborted: Option<bool>,
    pub user_model: Option<String>,
    #[serde(default)]
    pub agent: AgentSection,
    #[serde(default)]
    pub ablation: AblationSection,
    #[serde(default)]
    pub faults: BTreeMap<String, FaultProfile>,
    #[serde(default)]
    pub endpoints: BTreeMap<String, Endpoint>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSection {
    pub model: Option<String>,
    pub temperature: Option<f64>,
    pub suggestion_cap: Option<usize>,
    pub irma_prompt: Option<PromptStyle>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSection {
    pub memory: Option<bool>,
    pub constraints: Option<bool>,
    pub tools: Option<bool>,
}

#[derive(Debug, Deserialize)]
pub struct Endpoint {
    #[serde(flatten)]
    pub http: HttpConfig,
    pub model: Option<String>,
    pub user_model: Option<String>,
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
        let mut spec = Self::parse(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut spec.suite, &mut spec.out, &mut spec.exclude].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(p) = spec.provider.as_mut() {
            if let Some(rest) = p.strip_prefix("scripted:") {
                if Path::new(rest).is_relative() {
                    *p = format!("scripted:{}", base.join(rest).display());
                }
            }
        }
        Ok(spec)
    }

    /// Errors name the offending field path.
    pub fn parse(text: &str) -> Result<Self, String> {
        let de = toml::Deserializer::new(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            format!("field `{path}`: {}", e.into_inner().message())
        })
    }
}

/// A run after merging file and flags.
pub struct ResolvedRun {
    pub suite: PathBuf,
    pub strategies: Vec<StrategyKind>,
    pub provider: String,
    pub out: PathBuf,
    pub exclude: Option<PathBuf>,
    pub config: RunConfig,
    pub normalize_timestamps: bool,
    pub endpoints: BTreeMap<String, Endpoint>,
}

pub fn parse_strategies(text: &str) -> Result<Vec<StrategyKind>, CliError> {
    if text.trim().eq_ignore_ascii_case("all") {
        return Ok(StrategyKind::ALL.to_vec());
    }
    let mut out = Vec::new();
    for part in text.split(',').filter(|p| !p.trim().is_empty()) {
        let kind: StrategyKind = part.parse().map_err(usage)?;
        if !out.contains(&kind) {
            out.push(kind);
        }
    }
    if out.is_empty() {
        return Err(usage("--strategy names no strategy"));
    }
    Ok(out)
}

pub fn resolve_run(args: RunArgs) -> Result<ResolvedRun, CliError> {
    let spec = match &args.config {
        Some(p) => ExperimentSpec::load(p)?,
        None => ExperimentSpec::default(),
    };
    let suite = args.suite.or(spec.suite).ok_or_else(|| usage("no suite given (--suite or `suite` in the config)"))?;
    let strategies = parse_strategies(&args.strategy.or(spec.strategy).unwrap_or_else(|| "all".into()))?;
    let provider = args
        .provider
        .or(spec.provider)
        .ok_or_else(|| usage("no provider given (--provider scripted:<path> or live:<name>)"))?;
    let mut config = RunConfig::default();
    config.n_trials = args.trials.or(spec.trials).unwrap_or(config.n_trials);
    config.max_turns = args.max_turns.or(spec.max_turns).unwrap_or(config.max_turns);
    config.parallelism = args.parallelism.or(spec.parallelism).unwrap_or(config.parallelism);
    config.seed = args.seed.or(spec.seed).unwrap_or(config.seed);
    config.max_actions_per_turn = spec.max_actions_per_turn.unwrap_or(config.max_actions_per_turn);
    config.count_aborted = args.count_aborted || spec.count_aborted.unwrap_or(false);
    if let Some(m) = spec.user_model {
        config.user_model = m;
    }
    config.faults = spec.faults;
    let agent = &mut config.agent;
    if let Some(m) = spec.agent.model {
        agent.model = m;
    }
    agent.temperature = spec.agent.temperature.unwrap_or(agent.temperature);
    agent.suggestion_cap = spec.agent.suggestion_cap.unwrap_or(agent.suggestion_cap);
    agent.irma_prompt = spec.agent.irma_prompt.unwrap_or(agent.irma_prompt);
    agent.ablation = Ablation {
        memory: !args.no_memory && spec.ablation.memory.unwrap_or(true),
        constraints: !args.no_constraints && spec.ablation.constraints.unwrap_or(true),
        tools: !args.no_tools && spec.ablation.tools.unwrap_or(true),
    };
    config.validate().map_err(usage)?;
    Ok(ResolvedRun {
        suite,
        strategies,
        provider,
        out: args.out.or(spec.out).unwrap_or_else(|| PathBuf::from("out")),
        exclude: args.exclude.or(spec.exclude),
        config,
        normalize_timestamps: args.normalize_timestamps || spec.normalize_timestamps.unwrap_or(false),
        endpoints: spec.endpoints,
    })
}

fn load_suite(path: &Path) -> Result<TaskSuite, CliError> {
    load_task_suite(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn read_exclusions(path: &Path) -> Result<std::collections::BTreeSet<String>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    Ok(parse_exclusions(&text))
}

fn factory(run: &mut ResolvedRun) -> Result<Box<dyn ProviderFactory>, CliError> {
    if let Some(path) = run.provider.strip_prefix("scripted:") {
        let file = ScriptFile::load(Path::new(path)).map_err(|e| usage(format!("{path}: {e}")))?;
        return Ok(Box::new(ScriptedProviders::new(file)));
    }
    if let Some(name) = run.provider.strip_prefix("live:") {
        let endpoint = run
            .endpoints
            .remove(name)
            .ok_or_else(|| usage(format!("no [endpoints.{name}] section in the config")))?;
        if let Some(m) = endpoint.model {
            run.config.agent.model = m;
        }
        if let Some(m) = endpoint.user_model {
            run.config.user_model = m;
        } else {
            run.config.user_model = run.config.agent.model.clone();
        }
        let provider = HttpProvider::new(endpoint.http).map_err(runtime)?;
        return Ok(Box::new(LiveProviders {
            provider: Arc::new(provider),
        }));
    }
    Err(usage(format!(
        "bad provider {:?}: expected scripted:<path> or live:<name>",
        run.provider
    )))
}

pub fn cmd_run(args: RunArgs) -> Result<String, CliError> {
    let mut run = resolve_run(args)?;
    let mut suite = load_suite(&run.suite)?;
    if let Some(path) = &run.exclude {
        let skip = read_exclusions(path)?;
        suite.tasks.retain(|t| !skip.contains(&t.id));
    }
    let factory = factory(&mut run)?;
    std::fs::create_dir_all(&run.out).map_err(|e| runtime(format!("cannot create {}: {e}", run.out.display())))?;
    let mut summary = String::new();
    for &strategy in &run.strategies {
        let mut config = run.config.clone();
        config.strategy = strategy;
        let (matrix, mut trajectories) = run_experiment(&suite, factory.as_ref(), &config).map_err(|e| match e {
            RunError::Pool(_) => runtime(&e),
            _ => usage(&e),
        })?;
        if run.normalize_timestamps {
            trajectories.iter_mut().for_each(runner::Trajectory::normalize_timestamps);
        }
        let dir = run.out.join(strategy.as_str());
        std::fs::create_dir_all(&dir).map_err(runtime)?;
        write_trajectories(&dir.join(TRAJECTORY_LOG), &trajectories, false).map_err(runtime)?;
        let mut doc = serde_json::to_string_pretty(&matrix).expect("matrix serializes");
        doc.push('\n');
        std::fs::write(dir.join(MATRIX_FILE), doc).map_err(runtime)?;
        let aborted = trajectories.iter().filter(|t| t.aborted).count();
        let score = metrics::pass_hat_k(&matrix, 1).map(|s| format_score(&s)).unwrap_or_else(|_| "n/a".into());
        let _ = writeln!(
            summary,
            "{:<16} trials {:>4}  successes {:>4}  aborted {:>3}  pass^1 {score}",
            strategy.as_str(),
            trajectories.len(),
            matrix.successes(),
            aborted
        );
    }
    Ok(summary)
}

fn load_matrix(path: &Path) -> Result<RewardMatrix, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    let m: RewardMatrix = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    m.check().map_err(|e| usage(format!("{}: {e}", path.display())))?;
    if m.rows.is_empty() {
        return Err(usage(format!("{}: reward matrix has no rows", path.display())));
    }
    Ok(m)
}

fn label(path: &Path, m: &RewardMatrix) -> String {
    match (&m.domain, &m.strategy) {
        (Some(d), Some(s)) => format!("{d} / {s}"),
        (Some(d), None) => d.clone(),
        _ => path.display().to_string(),
    }
}

pub fn cmd_report(args: ReportArgs) -> Result<String, CliError> {
    let exclusions = args.exclude.as_deref().map(read_exclusions).transpose()?;
    let mut text = String::new();
    let mut json_reports = Vec::new();
    let mut per_domain: Vec<Vec<num_rational::BigRational>> = Vec::new();
    for path in &args.matrices {
        let matrix = load_matrix(path)?;
        let name = label(path, &matrix);
        let report = pass_hat_k_report(&matrix, args.k, &[]).map_err(usage)?;
        let _ = writeln!(text, "== {name}\n{}", report.to_text());
        let mut entry = serde_json::json!({"source": name, "report": report.to_json()});
        let mut scores = report.scores.clone();
        if let Some(ex) = &exclusions {
            let filtered = filter_tasks(&matrix, ex);
            let applied: Vec<String> = ex.iter().filter(|id| matrix.task_ids().any(|t| t == id.as_str())).cloned().collect();
            let after = pass_hat_k_report(&filtered, args.k, &applied).map_err(usage)?;
            let _ = writeln!(text, "== {name} (filtered)\n{}", after.to_text());
            entry["filtered"] = after.to_json();
            scores = after.scores;
        }
        per_domain.push(scores);
        json_reports.push(entry);
    }
    let mut overall_json = Vec::new();
    if per_domain.len() > 1 {
        let _ = writeln!(text, "== overall (unweighted mean of {} domains)", per_domain.len());
        for k in 0..args.k as usize {
            let column: Vec<_> = per_domain.iter().map(|s| s[k].clone()).collect();
            let o = overall_score(&column).expect("non-empty");
            let _ = writeln!(text, "{:>4}  {:>8}", k + 1, format_score(&o));
            overall_json.push(serde_json::json!({"k": k + 1, "score": format_score(&o), "exact": o.to_string()}));
        }
        text.push('\n');
    }
    let mut stats = Vec::new();
    for path in &args.trajectories {
        let trajectories = read_trajectories(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let name = trajectories
            .first()
            .map(|t| t.strategy.as_str().to_string())
            .unwrap_or_else(|| path.display().to_string());
        let s = turn_stats(&trajectories, args.success_only).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let _ = writeln!(text, "== turns: {name}\n{}", s.to_text());
        stats.push((name, s));
    }
    let mut comparison_json = Vec::new();
    if stats.len() > 1 {
        let baseline = stats[0].0.clone();
        let rows = turn_comparison(&stats, &baseline).expect("baseline present");
        let _ = writeln!(text, "== mean turns relative to {baseline}");
        for (name, mean, diff) in rows {
            let _ = writeln!(text, "{name:<16} {mean:>8.2} {diff:>+8.2}");
            comparison_json.push(serde_json::json!({"strategy": name, "mean": mean, "difference": diff}));
        }
    }
    if args.json {
        let doc = serde_json::json!({
            "reports": json_reports,
            "overall": overall_json,
            "turns": stats.iter().map(|(n, s)| serde_json::json!({"strategy": n, "stats": s})).collect::<Vec<_>>(),
            "turn_comparison": comparison_json,
        });
        return Ok(serde_json::to_string_pretty(&doc).expect("report serializes") + "\n");
    }
    Ok(text)
}

pub fn cmd_annotate(cmd: AnnotateCommand) -> Result<String, CliError> {
    match cmd {
        AnnotateCommand::Add(a) => {
            let category: ErrorCategory = a.category.parse().map_err(usage)?;
            let trajectories = read_trajectories(&a.log).map_err(|e| usage(format!("{}: {e}", a.log.display())))?;
            let store_path = a
                .store
                .unwrap_or_else(|| a.log.parent().unwrap_or(Path::new(".")).join(ANNOTATION_STORE));
            let mut store = AnnotationStore::load(&store_path).map_err(usage)?;
            let annotation = ErrorAnnotation {
                task_id: a.task,
                trial: a.trial,
                category,
                event: a.event,
                note: a.note,
            };
            annotate_error(&mut store, annotation.clone(), &trajectories).map_err(usage)?;
            AnnotationStore::append_to(&store_path, &annotation).map_err(runtime)?;
            Ok(format!("annotated {}/{} event {} as {category} ({} in store)\n", annotation.task_id, annotation.trial, annotation.event, store.len()))
        }
        AnnotateCommand::Histogram { store } => {
            if !store.exists() {
                return Err(usage(format!("no annotation store at {}", store.display())));
            }
            let s = AnnotationStore::load(&store).map_err(usage)?;
            let mut out = String::new();
            for (c, n) in s.histogram() {
                let _ = writeln!(out, "{:<32} {n}", c.as_str());
            }
            Ok(out)
        }
    }
}

pub fn cmd_validate(args: ValidateArgs) -> Result<String, CliError> {
    let suite = load_suite(&args.suite)?;
    domain_context(&suite).map_err(usage)?;
    let mut out = format!("suite ok: domain {}, {} tools, {} tasks\n", suite.domain, suite.tools.len(), suite.tasks.len());
    if let Some(path) = args.scripts {
        let file = ScriptFile::load(&path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        for s in &file.scripts {
            if suite.task(&s.task).is_none() {
                return Err(usage(format!("{}: script for unknown task \"{}\"", path.display(), s.task)));
            }
        }
        let _ = writeln!(out, "scripts ok: {} entries", file.scripts.len());
    }
    Ok(out)
}

pub fn dispatch(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Report(a) => cmd_report(a),
        Command::Annotate(c) => cmd_annotate(c),
        Command::Validate(a) => cmd_validate(a),
    }
}

/// Parses `args`, runs the command and returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match dispatch(cli) {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
