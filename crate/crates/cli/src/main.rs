use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use coasim_core::pipeline::{self, Overrides, PipelineConfig, Target};
use coasim_core::Error;

#[derive(Parser)]
#[command(name = "coasim", version, about = "COA similarity pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one stage (or `all`) against a config file.
    Run(RunArgs),
    /// Summarize a workspace.
    Report {
        #[arg(long)]
        workspace: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// ingest, sample, stats, vectors, simpairs, ensemble, embed, optimize,
    /// threshold, graph or all
    stage: String,
    #[arg(long)]
    config: PathBuf,
    /// ε search interval, `lo:hi`
    #[arg(long, value_name = "LO:HI", allow_hyphen_values = true)]
    epsilon_bounds: Option<String>,
    /// λ candidates, `start:step:end` (default 0.005:0.005:1)
    #[arg(long, value_name = "START:STEP:END", allow_hyphen_values = true)]
    lambda_grid: Option<String>,
    /// DBSCAN minPts (default 1)
    #[arg(long, allow_hyphen_values = true)]
    min_pts: Option<String>,
    /// simulated-annealing iterations
    #[arg(long, allow_hyphen_values = true)]
    sa_budget: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    seed: Option<String>,
    /// tukey, none or manual:<file>
    #[arg(long)]
    outlier_rule: Option<String>,
}

fn fail(err: &Error) -> ExitCode {
    let mut body = serde_json::json!({
        "error": err.kind(),
        "message": err.to_string(),
    });
    match err {
        Error::Config(list) => body["details"] = serde_json::json!(list),
        Error::MissingPrerequisite { stage, requires } => {
            body["stage"] = serde_json::json!(stage);
            body["run_first"] = serde_json::json!(requires);
        }
        Error::Embedding { failed, .. } => body["failed_case_ids"] = serde_json::json!(failed),
        _ => {}
    }
    eprintln!("{body}");
    ExitCode::from(match err {
        Error::Config(_) | Error::InvalidParameter(_) => 2,
        Error::WorkspaceLocked(_) => 3,
        _ => 1,
    })
}

fn run(args: RunArgs) -> Result<(), Error> {
    let target: Target = args.stage.parse()?;
    let overrides = Overrides {
        epsilon_bounds: args.epsilon_bounds,
        lambda_grid: args.lambda_grid,
        min_pts: args.min_pts,
        sa_budget: args.sa_budget,
        seed: args.seed,
        outlier_rule: args.outlier_rule,
    };
    let cfg = PipelineConfig::load(&args.config, &overrides)?;
    for outcome in pipeline::run(&cfg, target)? {
        let status = if outcome.executed {
            "done"
        } else {
            "up to date"
        };
        println!("{:<10} {status}", outcome.stage.as_str());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let body = serde_json::json!({
                "error": "usage",
                "message": e.kind().to_string(),
                "details": e.render().to_string(),
            });
            eprintln!("{body}");
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Report { workspace } => pipeline::report(&workspace).map(|text| print!("{text}")),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
