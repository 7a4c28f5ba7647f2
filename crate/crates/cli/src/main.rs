use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hcl_cli::{
    cmd_adapt, cmd_bench, cmd_eval, cmd_pretrain, cmd_report, gradcheck_suite, gradcheck_table,
    parse_config, run_seed, CliError, CliResult,
};
use hcl_core::pipeline::{AdaptConfig, Method};
use hcl_core::Execution;

#[derive(Parser)]
#[command(
    name = "hcl",
    version,
    about = "Source-free domain adaptation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config file; documented defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set hcid.temperature=0.2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long, env = "HCL_OUT", default_value = "hcl-out")]
    out: PathBuf,
    /// Run seed; for `bench` it replaces the configured seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// Run every (method, seed) arm on the calling thread.
    #[arg(long)]
    sequential: bool,
}

impl Common {
    fn load(&self) -> CliResult<AdaptConfig> {
        Ok(parse_config(self.config.as_deref(), &self.overrides)?)
    }

    fn exec(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the source model and save `source.json`.
    Pretrain(Common),
    /// Adapt a source model to the target domain with `run.method`.
    Adapt(Common),
    /// Evaluate the checkpoint at `run.checkpoint` on the target domain.
    Eval(Common),
    /// Check analytic loss gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        batches: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run all methods over the configured seeds.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Restrict to these methods (repeatable).
        #[arg(long = "method")]
        methods: Vec<Method>,
    },
    /// Median table and SVG plots from a traces CSV.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, env = "HCL_OUT", default_value = "hcl-out")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Pretrain(c) => {
            let cfg = c.load()?;
            let s = cmd_pretrain(&cfg, run_seed(&cfg, c.seed), &c.out)?;
            println!("source accuracy {:.4}", s.source_accuracy);
            println!("wrote {}", s.checkpoint.display());
        }
        Command::Adapt(c) => {
            let cfg = c.load()?;
            let s = cmd_adapt(&cfg, run_seed(&cfg, c.seed), &c.out, c.exec())?;
            println!("{} target accuracy {:.4}", cfg.run.method, s.accuracy);
            println!(
                "windowed loss monotone: {} (window {})",
                s.diagnostics.monotone, s.diagnostics.window
            );
            println!("wrote {} and {}", s.checkpoint.display(), s.trace.display());
        }
        Command::Eval(c) => {
            let cfg = c.load()?;
            let e = cmd_eval(&cfg, run_seed(&cfg, c.seed), &c.out)?;
            println!("accuracy {:.4}", e.accuracy);
            for (k, r) in e.per_class.iter().enumerate() {
                match r {
                    Some(v) => println!("class {k} recall {v:.4}"),
                    None => println!("class {k} absent"),
                }
            }
        }
        Command::Gradcheck { batches, seed } => {
            let rows = gradcheck_suite(batches, seed)?;
            print!("{}", gradcheck_table(&rows));
            let failed: Vec<&str> = rows
                .iter()
                .filter(|r| !r.passed())
                .map(|r| r.loss)
                .collect();
            if !failed.is_empty() {
                return Err(CliError::GradCheck(failed.join(", ")));
            }
        }
        Command::Bench { common, methods } => {
            let mut cfg = common.load()?;
            if let Some(s) = common.seed {
                cfg.run.seeds = vec![s];
            }
            let r = cmd_bench(&cfg, &methods, &common.out, common.exec())?;
            print!("{}", r.summary);
            println!("wrote {}", r.results_path.display());
            if r.failed > 0 {
                return Err(CliError::ArmsFailed {
                    failed: r.failed,
                    total: r.arms.len(),
                });
            }
        }
        Command::Report { input, out } => {
            let f = cmd_report(&input, &out)?;
            print!(
                "{}",
                std::fs::read_to_string(&f.summary).map_err(|e| CliError::Io {
                    path: f.summary.clone(),
                    source: e,
                })?
            );
            println!(
                "wrote {} and {}",
                f.accuracy_svg.display(),
                f.loss_svg.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
