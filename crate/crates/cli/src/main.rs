use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use teachprobe::evaluator::{render_csv, render_markdown};
use teachprobe::harness::{
    build_report, full_pipeline, init_run, plan_resume, recompute_report, resume, run_stage,
    Gateways, HarnessConfig, HarnessError, Limits, PipelineOutcome, Run, Stage, StageReport,
    EXIT_INCONSISTENT, EXIT_OK, EXIT_VALIDATION,
};
use teachprobe::knowledge::{lint_tree, KnowledgeTree};
use teachprobe::leakage::scan_transcripts;

#[derive(Parser, Debug)]
#[command(
    name = "teachprobe",
    version,
    about = "Measure how well a model teaches, by what a student model learns"
)]
struct Cli {
    /// Run directory.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    /// Harness config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Maximum requests in flight, across all endpoints.
    #[arg(long, global = true)]
    concurrency: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Create a run directory with a frozen copy of the config and inputs.
    Init,
    /// Tag questions that arrive without knowledge paths.
    Tag(StageArgs),
    /// Generate and verify example problems per knowledge path.
    GenExamples(StageArgs),
    /// Run the teaching sessions.
    Teach(StageArgs),
    /// Sample student answers and write the report.
    Evaluate(StageArgs),
    /// Recompute the report from the stored attempt records.
    Report {
        #[arg(long, value_enum, default_value_t = Format::Md)]
        format: Format,
        /// Fail unless the recomputation matches report.json byte for byte.
        #[arg(long)]
        check: bool,
    },
    /// Initialize a run and execute every stage.
    Run(StageArgs),
    /// Continue a run from its earliest incomplete stage.
    Resume {
        #[command(flatten)]
        stage: StageArgs,
        /// Only print what is left to do.
        #[arg(long)]
        plan: bool,
    },
    /// Print review findings for a knowledge tree.
    LintTree {
        /// Tree file; defaults to the config's tree.
        #[arg(long)]
        tree: Option<PathBuf>,
    },
    /// Check that no transcript shows a target question to the teacher.
    ScanLeakage,
}

#[derive(clap::Args, Debug, Clone, Copy)]
struct StageArgs {
    /// Stop after this many items; the stage stays incomplete.
    #[arg(long)]
    max_items: Option<usize>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Md,
    Csv,
    Json,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Self {
            code: e.exit_code(),
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_VALIDATION,
        message: message.into(),
    }
}

type Outcome = Result<u8, Failure>;

impl Cli {
    fn limits(&self, args: StageArgs) -> Limits {
        Limits {
            max_items: args.max_items,
            concurrency: self.concurrency,
        }
    }

    fn load_config(&self) -> Result<HarnessConfig, Failure> {
        let path = self
            .config
            .as_deref()
            .ok_or_else(|| usage("--config is required"))?;
        Ok(HarnessConfig::load(path)?)
    }

    fn existing_run_dir(&self) -> Result<&Path, Failure> {
        self.run_dir
            .as_deref()
            .ok_or_else(|| usage("--run-dir is required"))
    }

    /// The given run directory, or a fresh one under the config's output root.
    fn new_run_dir(&self, config: &HarnessConfig) -> Result<PathBuf, Failure> {
        if let Some(dir) = &self.run_dir {
            return Ok(dir.clone());
        }
        let root = config
            .output_root
            .as_ref()
            .ok_or_else(|| usage("--run-dir is required when the config sets no output_root"))?;
        let stamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or_default();
        Ok(root.join(format!("run-{stamp}")))
    }
}

fn print_stage(report: &StageReport) {
    for w in &report.warnings {
        println!("warning: {w}");
    }
    let state = if report.complete {
        "complete"
    } else {
        "incomplete"
    };
    println!(
        "{}: processed {}, remaining {}, {state}",
        report.stage, report.processed, report.remaining
    );
}

fn print_outcome(outcome: &PipelineOutcome, run_dir: &Path) {
    match outcome {
        PipelineOutcome::Complete { report, stages } => {
            stages.iter().for_each(print_stage);
            println!();
            print!("{}", render_markdown(std::slice::from_ref(report)));
            println!("\nreport: {}", run_dir.join("report.json").display());
        }
        PipelineOutcome::Interrupted {
            stage,
            remaining,
            stages,
        } => {
            stages.iter().for_each(print_stage);
            println!("stopped in `{stage}` with {remaining} item(s) left; continue with `teachprobe resume`");
        }
    }
}

async fn stage(cli: &Cli, stage: Stage, args: StageArgs) -> Outcome {
    let mut run = Run::open(cli.existing_run_dir()?)?;
    let gateways = Gateways::build(&run, cli.concurrency)?;
    let report = run_stage(&mut run, &gateways, stage, cli.limits(args)).await?;
    print_stage(&report);
    Ok(EXIT_OK)
}

async fn dispatch(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Init => {
            let config = cli.load_config()?;
            let dir = cli.new_run_dir(&config)?;
            let run = init_run(&config, &dir)?;
            println!(
                "initialized {} (run {})",
                dir.display(),
                run.manifest.run_id
            );
            Ok(EXIT_OK)
        }
        Command::Tag(args) => stage(cli, Stage::Tag, *args).await,
        Command::GenExamples(args) => stage(cli, Stage::Forge, *args).await,
        Command::Teach(args) => stage(cli, Stage::Teach, *args).await,
        Command::Evaluate(args) => stage(cli, Stage::Evaluate, *args).await,
        Command::Report { format, check } => {
            let run = Run::open(cli.existing_run_dir()?)?;
            let report = if *check {
                let (report, same) = recompute_report(&run)?;
                if !same {
                    eprintln!("report.json differs from a recomputation over the stored records");
                    return Ok(EXIT_INCONSISTENT);
                }
                report
            } else {
                build_report(&run)?
            };
            let reports = std::slice::from_ref(&report);
            match format {
                Format::Md => print!("{}", render_markdown(reports)),
                Format::Csv => print!("{}", render_csv(reports)),
                Format::Json => println!(
                    "{}",
                    serde_json::to_string_pretty(&report).expect("report serializes")
                ),
            }
            Ok(EXIT_OK)
        }
        Command::Run(args) => {
            let config = cli.load_config()?;
            let dir = cli.new_run_dir(&config)?;
            let outcome = full_pipeline(&config, &dir, cli.limits(*args)).await?;
            print_outcome(&outcome, &dir);
            Ok(EXIT_OK)
        }
        Command::Resume { stage, plan } => {
            let dir = cli.existing_run_dir()?;
            if *plan {
                let plan = plan_resume(&Run::open(dir)?)?;
                match plan.next {
                    None => println!("nothing to do"),
                    Some(next) => {
                        println!(
                            "next stage: {next}, {} item(s) pending across {} id(s)",
                            plan.items,
                            plan.pending.len()
                        );
                        for id in plan.pending {
                            println!("  {id}");
                        }
                    }
                }
                return Ok(EXIT_OK);
            }
            let outcome = resume(dir, cli.limits(*stage)).await?;
            print_outcome(&outcome, dir);
            Ok(EXIT_OK)
        }
        Command::LintTree { tree } => {
            let path = match tree {
                Some(p) => p.clone(),
                None => cli.load_config()?.data.tree,
            };
            let tree = KnowledgeTree::load(&path).map_err(|e| usage(e.to_string()))?;
            let findings = lint_tree(&tree);
            println!(
                "{}: {} nodes, {} leaves, version {}",
                path.display(),
                tree.node_count(),
                tree.leaf_count(),
                tree.version()
            );
            for f in &findings {
                println!("  {f}");
            }
            Ok(if findings.is_empty() {
                EXIT_OK
            } else {
                EXIT_VALIDATION
            })
        }
        Command::ScanLeakage => {
            let run = Run::open(cli.existing_run_dir()?)?;
            let root = run.dir.transcripts();
            let report = scan_transcripts(&root, &run.questions).map_err(|e| Failure {
                code: EXIT_INCONSISTENT,
                message: format!("{}: {e}", root.display()),
            })?;
            println!(
                "{}",
                serde_json::to_string_pretty(&report).expect("report serializes")
            );
            Ok(if report.is_clean() {
                EXIT_OK
            } else {
                EXIT_VALIDATION
            })
        }
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| "teachprobe=warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();

    // Usage errors exit 1; clap's own default of 2 is taken by provider failures.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                EXIT_VALIDATION
            } else {
                EXIT_OK
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli).await {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
