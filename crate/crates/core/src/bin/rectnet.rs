use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rectnet::frame::parse_constants;
use rectnet::harness::pipeline::{self, Context};
use rectnet::harness::selfcheck::frame_selfcheck;
use rectnet::harness::{write_json, write_text, ExperimentConfig, HarnessError};

#[derive(Parser)]
#[command(name = "rectnet", version, about = "Rectifier wavelet frames on manifolds and their ReLU networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalization, moment, bound, support-count and identity checks of the frame.
    FrameSelfcheck {
        #[arg(long)]
        d: usize,
        /// JSON table of normalization constants replacing the built-in one.
        #[arg(long)]
        fixture: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the atlas and run the radii preflight.
    AtlasBuild(RunArgs),
    /// Fit per-chart expansions.
    Approximate(RunArgs),
    /// Compile the network and verify it against the analytic sum.
    CompileEval(RunArgs),
    /// Error against N with a fitted log-log slope.
    Rates(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Turn acceptance thresholds into failures.
    #[arg(long)]
    assert: bool,
    /// Output directory; defaults to the config's `output_dir`, then `out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> Result<(Context, PathBuf), HarnessError> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        let out = self
            .out
            .clone()
            .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"));
        Ok((Context::new(cfg)?, out))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rectnet: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::FrameSelfcheck { d, fixture, out } => selfcheck(d, fixture.as_deref(), out.as_deref()),
        Command::AtlasBuild(args) => {
            let (ctx, out) = args.load()?;
            let (atlas, report) = pipeline::atlas_build(&ctx)?;
            write_json(&out, "atlas.json", &atlas)?;
            write_json(&out, "atlas_report.json", &report)?;
            println!("atlas: {} charts (bound {:?}), radii ok", report.charts, report.c_gamma_bound);
            Ok(())
        }
        Command::Approximate(args) => {
            let (ctx, out) = args.load()?;
            ctx.radii_preflight()?;
            let approx = pipeline::approximate(&ctx)?;
            let (set, report) = pipeline::approximate_outputs(&ctx, &approx);
            write_json(&out, "expansions.json", &set)?;
            write_json(&out, "approximate_report.json", &report)?;
            for (budget, terms) in &report.terms_per_budget {
                println!("budget {budget:?}: {terms} terms over {} charts", ctx.atlas.len());
            }
            Ok(())
        }
        Command::CompileEval(args) => {
            let (ctx, out) = args.load()?;
            let outputs = pipeline::compile_eval(&ctx)?;
            write_json(&out, "network.json", &outputs.network)?;
            write_json(&out, "compile_report.json", &outputs.report)?;
            let r = &outputs.report;
            println!("widths {:?}, equivalence {:.3e}", r.manifest.widths, r.equivalence.max_deviation);
            for b in &r.budgets {
                println!("budget {:?}: end-to-end rms {:.6e}", b.budget, b.end_to_end_rms);
            }
            if let Some(name) = r.first_failure() {
                return Err(HarnessError::Check {
                    name: name.into(),
                    detail: "see compile_report.json".into(),
                });
            }
            if args.assert && !r.end_to_end_strictly_decreasing {
                return Err(HarnessError::Check {
                    name: "end_to_end".into(),
                    detail: "end-to-end error does not strictly decrease across budgets".into(),
                });
            }
            Ok(())
        }
        Command::Rates(args) => {
            let (ctx, out) = args.load()?;
            let mut summary = pipeline::rates(&ctx)?;
            let verdict = pipeline::rates_assertion(&summary);
            if args.assert {
                summary.assertion = Some(match &verdict {
                    Ok(()) => "pass".into(),
                    Err(e) => format!("fail: {e}"),
                });
            }
            write_text(&out, "rates.csv", &summary.csv())?;
            write_json(&out, "rates_summary.json", &summary)?;
            match summary.slope {
                Some(s) => println!("slope {s:.4} (threshold {})", summary.slope_threshold),
                None => println!("no slope (exact fit reached)"),
            }
            match verdict {
                Err(detail) if args.assert => Err(HarnessError::Check {
                    name: "rates".into(),
                    detail,
                }),
                _ => Ok(()),
            }
        }
    }
}

fn selfcheck(d: usize, fixture: Option<&Path>, out: Option<&Path>) -> Result<(), HarnessError> {
    let constant = match fixture {
        None => None,
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| HarnessError::Config(format!("cannot read fixture {}: {e}", path.display())))?;
            let table = parse_constants(&text).map_err(|e| HarnessError::Config(format!("fixture: {e}")))?;
            Some(
                *table
                    .get(&d)
                    .ok_or_else(|| HarnessError::Config(format!("fixture has no constant for d = {d}")))?,
            )
        }
    };
    let report = frame_selfcheck(d, constant)?;
    if let Some(dir) = out {
        write_json(dir, &format!("frame_selfcheck_d{d}.json"), &report)?;
    } else {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    }
    for c in &report.checks {
        eprintln!("{:<14} {}", c.name, if c.passed { "pass" } else { "FAIL" });
    }
    match report.first_failure() {
        Some(c) => Err(HarnessError::Check {
            name: c.name.into(),
            detail: format!("value {:?} exceeds tolerance {:e}", c.value, c.tolerance),
        }),
        None => Ok(()),
    }
}
