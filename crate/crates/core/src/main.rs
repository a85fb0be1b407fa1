use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use miniwfl::document::{canonical_text, parse_document, DocumentError};
use miniwfl::pipeline::{self, EngineOptions, PipelineError};
use miniwfl::planner::{plan_shape, to_dot};
use miniwfl::upgrader::{upgrade_to, UpgradeError};
use miniwfl::validator::{has_errors, validate};

const EXIT_OK: u8 = 0;
const EXIT_INVALID: u8 = 1;
const EXIT_RUN_FAILED: u8 = 2;
const EXIT_USAGE: u8 = 3;

#[derive(Parser)]
#[command(name = "miniwfl", version, about = "Run declarative command-line-tool workflows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a workflow or tool with a job order.
    Run(RunArgs),
    /// Check a document and print diagnostics as JSON lines.
    Validate(ValidateArgs),
    /// Print the dataflow graph in Graphviz DOT form.
    Graph { workflow: PathBuf },
    /// Upgrade a document to a newer dialect version.
    Upgrade {
        workflow: PathBuf,
        #[arg(long, default_value = "v1.2")]
        target: String,
    },
}

#[derive(Args)]
struct RunArgs {
    workflow: PathBuf,
    job: Option<PathBuf>,
    /// Maximum concurrent tasks (default: number of cores).
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    parallel: Option<u32>,
    #[arg(long, default_value_t = 0)]
    retries: u32,
    #[arg(long, default_value = "./out")]
    outdir: PathBuf,
    /// Default: ~/.cache/miniwfl
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    no_reuse: bool,
    /// Run container-hinted tools on the host.
    #[arg(long)]
    no_container: bool,
    #[arg(long)]
    enable_streaming: bool,
    /// Keep going after a failure, running everything independent of it.
    #[arg(long)]
    continue_on_error: bool,
    /// Keep attempt directories under this path.
    #[arg(long)]
    work_dir: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct ValidateArgs {
    workflow: PathBuf,
    #[arg(long)]
    no_container: bool,
}

fn default_cache_dir() -> PathBuf {
    std::env::var_os("HOME").map(PathBuf::from).unwrap_or_else(std::env::temp_dir).join(".cache").join("miniwfl")
}

fn report(err: &PipelineError) -> u8 {
    match err {
        PipelineError::Invalid(diags) => {
            for d in diags {
                eprintln!("{}", d.to_json_line());
            }
            EXIT_INVALID
        }
        PipelineError::Io(_) => {
            eprintln!("error: {err}");
            EXIT_RUN_FAILED
        }
        other => {
            eprintln!("error: {other}");
            EXIT_INVALID
        }
    }
}

fn cmd_run(args: RunArgs) -> u8 {
    let mut opts = EngineOptions::new(&args.outdir);
    if let Some(p) = args.parallel {
        opts.parallelism = p as usize;
    }
    opts.retries = args.retries;
    opts.enable_reuse = !args.no_reuse;
    opts.cache_dir = Some(args.cache_dir.unwrap_or_else(default_cache_dir));
    opts.use_containers = !args.no_container;
    opts.streaming = args.enable_streaming;
    opts.work_dir = args.work_dir;
    if args.continue_on_error {
        opts.on_error = miniwfl::scheduler::OnError::Continue;
    }
    match pipeline::run_file(&args.workflow, args.job.as_deref(), &opts) {
        Err(e) => report(&e),
        Ok(outcome) => {
            if !args.quiet {
                for w in &outcome.warnings {
                    eprintln!("{}", w.to_json_line());
                }
                for t in outcome.result.tasks.iter().filter(|t| t.failure.is_some()) {
                    eprintln!("task {} failed: {}", t.task_id, t.failure.as_deref().unwrap_or_default());
                }
                if let Some(p) = &outcome.provenance {
                    eprintln!("provenance written to {}", p.display());
                }
            }
            println!("{}", serde_json::to_string_pretty(&outcome.output_json()).expect("outputs serialize"));
            if outcome.succeeded() {
                EXIT_OK
            } else {
                EXIT_RUN_FAILED
            }
        }
    }
}

fn cmd_validate(args: ValidateArgs) -> u8 {
    let doc = match pipeline::load(&args.workflow) {
        Ok(d) => d,
        Err(e) => return report(&e),
    };
    let opts = EngineOptions::new(".");
    let containers = !args.no_container && pipeline::mentions_containers(&doc) && opts.container_runtime.available();
    let diags = validate(&doc, &pipeline::support_matrix(&opts, containers));
    for d in &diags {
        println!("{}", d.to_json_line());
    }
    if has_errors(&diags) {
        EXIT_INVALID
    } else {
        EXIT_OK
    }
}

fn cmd_graph(path: &Path) -> u8 {
    let doc = match pipeline::load(path) {
        Ok(d) => d,
        Err(e) => return report(&e),
    };
    let opts = EngineOptions::new(".");
    if let Err(e) = pipeline::check(&doc, &pipeline::support_matrix(&opts, true)) {
        return report(&e);
    }
    match plan_shape(&doc) {
        Ok(g) => {
            print!("{}", to_dot(&g, None));
            EXIT_OK
        }
        Err(e) => report(&PipelineError::Plan(e)),
    }
}

fn cmd_upgrade(path: &Path, target: &str) -> u8 {
    let parsed = std::fs::read_to_string(path)
        .map_err(|e| DocumentError::NotFound(format!("{}: {e}", path.display())))
        .and_then(|text| parse_document(&text, path.parent()));
    let doc = match parsed {
        Ok(d) => d,
        Err(e) => return report(&PipelineError::Document(e)),
    };
    match upgrade_to(&doc, target) {
        Ok(up) => {
            println!("{}", canonical_text(&up));
            EXIT_OK
        }
        Err(e @ (UpgradeError::Downgrade { .. } | UpgradeError::UnknownVersion(_))) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let code = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Validate(args) => cmd_validate(args),
        Command::Graph { workflow } => cmd_graph(&workflow),
        Command::Upgrade { workflow, target } => cmd_upgrade(&workflow, &target),
    };
    ExitCode::from(code)
}
