use std::path::PathBuf;
use std::process::ExitCode;

use acorn_cli::commands::{self, AblationAxis, Context};
use acorn_cli::config::RunConfig;
use acorn_cli::{CliError, CliResult};
use acorn_core::sim::NoiseLevel;
use acorn_core::train::Variant;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "acorn", version, about = "Safety-aware chunked behavior cloning pipeline")]
struct Cli {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `train.seed`; also seeds demonstrations and evaluation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory that configured relative paths resolve against.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate expert demonstrations.
    GenDemos {
        /// Number of demonstrations (default: `demos.count`).
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train a policy on the demonstrations.
    Train {
        #[arg(long)]
        variant: Variant,
        /// Use L1 instead of Huber regression.
        #[arg(long)]
        l1_baseline: bool,
        /// Overrides `train.steps`.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Evaluate a checkpoint under action noise.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// none|light|normal|heavy (default: every preset in `eval.noise`).
        #[arg(long)]
        noise: Option<NoiseLevel>,
        /// Overrides `eval.episodes_per_condition`.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Sweep one loss coefficient under NORMAL noise.
    Ablate {
        #[arg(long, value_enum)]
        axis: Axis,
    },
    /// Merge reports into a comparison table and emit TDL band plots.
    Report {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    #[value(name = "curriculum_k")]
    CurriculumK,
    #[value(name = "alpha")]
    Alpha,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "absent".into(), |x| format!("{x:.6}"))
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = match &cli.config {
        Some(p) if !p.is_file() => return Err(CliError::MissingFile(p.clone())),
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match cli.cmd {
        Command::GenDemos { n } => {
            let ctx = Context::new(cfg, cli.out, cli.seed);
            let s = commands::gen_demos(&ctx, n)?;
            println!("demos count={} mean_len={:.2} path={}", s.count, s.mean_len, s.path.display());
        }
        Command::Train {
            variant,
            l1_baseline,
            steps,
        } => {
            if let Some(steps) = steps {
                cfg.train.steps = steps;
            }
            if cfg.train.steps == 0 {
                return Err(CliError::Usage("train.steps must be >= 1".into()));
            }
            let ctx = Context::new(cfg, cli.out, cli.seed);
            let s = commands::train(&ctx, variant, l1_baseline)?;
            println!(
                "train run={} steps={} baseline_first={:.6} baseline_last={:.6} checkpoint={} losses={}",
                s.run,
                ctx.cfg.train.steps,
                s.first.baseline,
                s.last.baseline,
                s.checkpoint.display(),
                s.loss_csv.display()
            );
        }
        Command::Eval {
            checkpoint,
            noise,
            episodes,
        } => {
            if let Some(n) = episodes {
                if n == 0 {
                    return Err(CliError::Usage("--episodes must be >= 1".into()));
                }
                cfg.eval.episodes_per_condition = n;
            }
            let ctx = Context::new(cfg, cli.out, cli.seed);
            for s in commands::eval(&ctx, &checkpoint, noise)? {
                let r = &s.report;
                println!(
                    "eval noise={} episodes={} sr={:.4} acr={:.4} acr_f={} am_j={} am_e={} report={}",
                    s.noise,
                    r.n_episodes,
                    r.sr,
                    r.acr,
                    opt(r.acr_f),
                    opt(r.am_j),
                    opt(r.am_e),
                    s.report_path.display()
                );
            }
        }
        Command::Ablate { axis } => {
            let axis = match axis {
                Axis::CurriculumK => AblationAxis::CurriculumK,
                Axis::Alpha => AblationAxis::Alpha,
            };
            let ctx = Context::new(cfg, cli.out, cli.seed);
            let s = commands::ablate(&ctx, axis)?;
            for (v, row) in &s.rows {
                println!(
                    "ablate {}={v} sr={} acr={} acr_f={} am_j={} am_e={}",
                    axis.name(),
                    opt(row[0]),
                    opt(row[1]),
                    opt(row[2]),
                    opt(row[3]),
                    opt(row[4])
                );
            }
            println!("table={}", s.table.display());
        }
        Command::Report { files } => {
            let ctx = Context::new(cfg, cli.out, cli.seed);
            let s = commands::report(&ctx, &files)?;
            println!("report table={} band_files={}", s.table.display(), s.band_files.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            eprintln!("{}", CliError::Usage(first).to_line());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
