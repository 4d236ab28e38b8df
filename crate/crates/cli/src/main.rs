//! Operator entry points. Exit codes: 0 success, 1 case failures, 2 config
//! or usage errors.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use btaction_core::config::{AppConfig, BackendConfig, API_KEY_ENV};
use btaction_core::eval::{
    backend_from_config, bless_golden_traces, canonical_rules, emit_report, load_cases, run_suite, Format,
};
use btaction_core::eval::cases::check_against_library;
use btaction_core::llm::ChatBackend;
use btaction_core::orchestrator::{Attachment, Engine, Pending, Session, SystemKind};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "btaction", version, about = "Behavior-tree LLM orchestration for a kitchen robot")]
struct Cli {
    /// Configuration document.
    #[arg(long, global = true, default_value = "config/kitchen.json", env = "BTACTION_CONFIG")]
    config: PathBuf,
    /// Log to stderr and print per-turn traces.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct BackendArgs {
    /// Override the configured backend: `canonical`, `scripted:<rules.json>`
    /// or `remote:<endpoint>#<model>`.
    #[arg(long)]
    backend: Option<String>,
    /// Case dataset, also used by the canonical backend.
    #[arg(long)]
    cases: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Interactive session on stdin.
    Chat {
        #[arg(long, default_value = "bt_action")]
        system: SystemKind,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Replays the case dataset and prints the report.
    Eval {
        #[arg(long, default_value = "bt_action")]
        system: SystemKind,
        #[arg(long, default_value = "human")]
        format: Format,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Loads the configuration and checks the library against the catalog.
    Validate {
        #[arg(long)]
        cases: Option<PathBuf>,
    },
    /// Regenerates golden traces under the canonical backend.
    TraceBless {
        #[arg(long)]
        cases: Option<PathBuf>,
        #[arg(long, default_value = "crates/core/tests/golden")]
        out: PathBuf,
    },
    /// Prints the canonical rule table derived from the case dataset.
    ExportRules {
        #[arg(long)]
        cases: Option<PathBuf>,
    },
    /// Runs the HTTP service.
    Serve {
        /// Overrides the configured bind address.
        #[arg(long)]
        bind: Option<String>,
        /// Directory served under /ui.
        #[arg(long)]
        ui: Option<PathBuf>,
        #[command(flatten)]
        backend: BackendArgs,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(2)
        }
    }
}

/// The error chain, skipping causes already quoted by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut out: Vec<String> = Vec::new();
    for cause in e.chain().map(ToString::to_string) {
        if !out.last().is_some_and(|prev| prev.contains(&cause)) {
            out.push(cause);
        }
    }
    out.join(": ")
}

fn init_logging(verbose: bool) {
    let filter = if verbose { "debug" } else { "warn" };
    let _ = tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| filter.into()))
        .with_writer(std::io::stderr)
        .try_init();
}

fn run(cli: Cli) -> Result<ExitCode> {
    let config = AppConfig::load(&cli.config).with_context(|| format!("loading {}", cli.config.display()))?;
    match cli.command {
        Command::Chat { system, backend } => {
            let b = resolve_backend(&config, &backend)?;
            chat(&Engine::from_config(&config), system, b.as_ref(), cli.verbose)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval {
            system,
            format,
            backend,
        } => {
            let cases = load_cases(&cases_path(&config, backend.cases.as_deref())?)?;
            let b = resolve_backend(&config, &backend)?;
            let report = run_suite(system, &cases, &Engine::from_config(&config), b.as_ref())?;
            print!("{}", emit_report(&report, format));
            Ok(if report.all_passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Command::Validate { cases } => validate(&config, cases.as_deref()),
        Command::TraceBless { cases, out } => {
            let cases = load_cases(&cases_path(&config, cases.as_deref())?)?;
            let engine = Engine::from_config(&config);
            let backend = btaction_core::eval::canonical_backend(&cases, &engine.kitchen.library)?;
            for path in bless_golden_traces(&cases, &engine, &backend, &out)? {
                println!("wrote {}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::ExportRules { cases } => {
            let cases = load_cases(&cases_path(&config, cases.as_deref())?)?;
            let rules = canonical_rules(&cases, &config.kitchen.library);
            println!("{}", serde_json::to_string_pretty(&rules)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Serve { bind, ui, backend } => {
            let b: Arc<dyn ChatBackend> = Arc::from(resolve_backend(&config, &backend)?);
            let addr = bind.as_deref().unwrap_or(&config.bind);
            let addr = addr.parse().with_context(|| format!("bad bind address '{addr}'"))?;
            let state = btaction_service::AppState::new(Engine::from_config(&config), b);
            let mut app = btaction_service::router(state);
            let ui = ui.or_else(|| Some(PathBuf::from("ui")).filter(|p| p.is_dir()));
            if let Some(dir) = ui {
                app = btaction_service::with_ui(app, dir);
            }
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(btaction_service::serve(app, addr))?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

/// The dataset named on the command line, else the one the canonical backend uses.
fn cases_path(config: &AppConfig, flag: Option<&Path>) -> Result<PathBuf> {
    if let Some(p) = flag {
        return Ok(p.to_path_buf());
    }
    match &config.backend {
        BackendConfig::Canonical { cases } => Ok(cases.clone()),
        _ => bail!("no case dataset: pass --cases"),
    }
}

fn parse_backend(spec: &str, config: &AppConfig, cases: Option<&Path>) -> Result<BackendConfig> {
    let (kind, arg) = spec.split_once(':').unwrap_or((spec, ""));
    Ok(match kind {
        "canonical" => BackendConfig::Canonical {
            cases: cases_path(config, cases)?,
        },
        "scripted" if !arg.is_empty() => BackendConfig::Scripted { rules: arg.into() },
        "remote" => {
            let (endpoint, model) = arg
                .rsplit_once('#')
                .ok_or_else(|| anyhow!("remote backend needs `remote:<endpoint>#<model>`"))?;
            BackendConfig::Remote {
                endpoint: endpoint.into(),
                model: model.into(),
                timeout_s: 30.0,
                retries: 2,
            }
        }
        _ => bail!("unknown backend '{spec}' (expected canonical, scripted:<path> or remote:<endpoint>#<model>)"),
    })
}

fn resolve_backend(config: &AppConfig, args: &BackendArgs) -> Result<Box<dyn ChatBackend>> {
    let chosen = match (&args.backend, &args.cases) {
        (Some(spec), _) => parse_backend(spec, config, args.cases.as_deref())?,
        (None, Some(cases)) if matches!(config.backend, BackendConfig::Canonical { .. }) => BackendConfig::Canonical {
            cases: cases.clone(),
        },
        _ => config.backend.clone(),
    };
    if matches!(chosen, BackendConfig::Remote { .. }) && std::env::var_os(API_KEY_ENV).is_none() {
        tracing::warn!("{API_KEY_ENV} is not set; requests go out without a key");
    }
    Ok(backend_from_config(&chosen, &config.kitchen)?)
}

fn validate(config: &AppConfig, cases: Option<&Path>) -> Result<ExitCode> {
    let mut problems: Vec<String> = config
        .kitchen
        .self_check()
        .into_iter()
        .map(|(task, step, d)| format!("task '{task}' step {step}: {d}"))
        .collect();
    let cases = cases.map(Path::to_path_buf).or_else(|| cases_path(config, None).ok());
    if let Some(path) = cases {
        let cases = load_cases(&path)?;
        problems.extend(check_against_library(&cases, &config.kitchen.library));
    }
    for p in &problems {
        println!("{p}");
    }
    println!(
        "{} actions, {} tasks, {} ingredients: {} diagnostics",
        config.kitchen.catalog.len(),
        config.kitchen.library.len(),
        config.kitchen.inventory.ingredients().count(),
        problems.len()
    );
    Ok(if problems.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn prompt_for(session: &Session) -> &'static str {
    match session.pending {
        Pending::AwaitingConfirmation { .. } => "confirm> ",
        Pending::AwaitingClarification => "clarify> ",
        Pending::None => "you> ",
    }
}

fn chat(engine: &Engine, system: SystemKind, backend: &dyn ChatBackend, verbose: bool) -> Result<()> {
    let mut session = engine.new_session(system);
    let stdin = std::io::stdin();
    let mut out = std::io::stdout();
    let mut lines = stdin.lock().lines();
    loop {
        write!(out, "{}", prompt_for(&session))?;
        out.flush()?;
        let Some(line) = lines.next().transpose()? else { break };
        let line = line.trim();
        match line {
            "" => continue,
            "/quit" | "/exit" => break,
            "/state" => {
                writeln!(
                    out,
                    "pending {}, {} turns, {} executed",
                    session.pending.name(),
                    session.turns.len(),
                    session.executed.len()
                )?;
                continue;
            }
            _ => {}
        }
        let reply = engine.run_turn(&mut session, line, backend)?;
        writeln!(out, "robot [{}]: {}", serde_json::to_value(reply.kind)?.as_str().unwrap_or("?"), reply.text)?;
        match &reply.attachments {
            Some(Attachment::Sequence(seq)) => {
                for (i, step) in seq.steps.iter().enumerate() {
                    writeln!(out, "  {}. {}", i + 1, serde_json::to_string(step)?)?;
                }
            }
            Some(Attachment::Candidates(c)) => writeln!(out, "  options: {}", c.tasks().join(", "))?,
            None => {}
        }
        if verbose {
            if let Some(turn) = session.turns.last() {
                for e in &turn.trace.events {
                    writeln!(out, "  . {:>2} {:<32} {:?}", e.order, e.node, e.status)?;
                }
            }
        }
    }
    Ok(())
}
