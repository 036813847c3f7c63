use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use qnn_core::{TrainConfig, Variant};
use qnn_lab::{
    default_bound_archs, load_train_config, parse_arch, run_bounds_table, run_runge,
    run_stability, run_toy2d, run_xor, runge_config, toy2d_config, xor_config, Experiment,
    ExperimentSpec,
};

#[derive(Parser)]
#[command(name = "qnn-lab", version, about = "Quadratic-network experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML training config; defaults are per experiment when omitted.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Seed for a run; repeat the flag for an ensemble.
    #[arg(long = "seed", value_name = "N", default_values_t = [0u64])]
    seeds: Vec<u64>,
    /// Directory for CSVs and checkpoints.
    #[arg(long, value_name = "DIR", default_value = "runs")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the Runge function 1/(1+16x^2) with a width-8, depth-5 quadratic
    /// net and extract the piecewise polynomial it computes.
    Runge {
        #[command(flatten)]
        common: Common,
        /// Training variant: sg, sw_l1, sw_l2, or plain.
        #[arg(long, value_parser = parse_variant)]
        variant: Option<Variant>,
    },
    /// Record max output magnitude of randomly initialized quadratic and
    /// conventional 1-10-10-10-10-1 nets across init scales.
    Stability {
        #[command(flatten)]
        common: Common,
        /// Init standard deviation; repeat the flag to sweep.
        #[arg(long = "sigma", value_name = "F", default_values_t = [0.01, 0.02, 0.03])]
        sigmas: Vec<f64>,
        /// Left edge of the evaluation grid.
        #[arg(long, value_name = "F", default_value_t = -1.0, allow_hyphen_values = true)]
        lo: f64,
        /// Right edge of the evaluation grid.
        #[arg(long, value_name = "F", default_value_t = 1.0, allow_hyphen_values = true)]
        hi: f64,
    },
    /// Train a single quadratic neuron on XOR and check the analytic
    /// (x1-x2)^2 solution.
    Xor {
        #[command(flatten)]
        common: Common,
    },
    /// Classify two concentric circles with matched quadratic and
    /// conventional nets.
    Toy2d {
        #[command(flatten)]
        common: Common,
        /// Radial jitter of the sampled circles.
        #[arg(long, value_name = "F", default_value_t = 0.05)]
        noise: f64,
    },
    /// Tabulate expressivity bounds and gradient-amplification estimates
    /// per architecture.
    BoundsTable {
        /// Directory for the bounds CSV.
        #[arg(long, value_name = "DIR", default_value = "runs")]
        out: PathBuf,
        /// Architecture such as 1-8-8-1; repeat the flag for more rows.
        #[arg(long = "arch", value_name = "W-W-..W")]
        archs: Vec<String>,
    },
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    match s {
        "sg" => Ok(Variant::Sg),
        "sw_l1" => Ok(Variant::SwL1),
        "sw_l2" => Ok(Variant::SwL2),
        "plain" => Ok(Variant::Plain),
        other => Err(format!(
            "unknown variant '{other}' (expected sg, sw_l1, sw_l2, or plain)"
        )),
    }
}

/// The config file wins when given; otherwise each experiment supplies its
/// own defaults, seeded per run by the runner.
fn resolve_config(
    common: &Common,
    default: impl FnOnce(u64) -> TrainConfig,
) -> qnn_lab::Result<TrainConfig> {
    match &common.config {
        Some(path) => load_train_config(path),
        None => Ok(default(common.seeds[0])),
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite medians"));
    v[v.len() / 2]
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn dispatch(cli: Cli) -> qnn_lab::Result<()> {
    match cli.command {
        Command::Runge { common, variant } => {
            let mut cfg = resolve_config(&common, |seed| {
                runge_config(variant.unwrap_or(Variant::Sg), seed)
            })?;
            if let Some(v) = variant {
                cfg.variant = v;
            }
            let spec =
                ExperimentSpec::new(Experiment::Runge, cfg, &common.out, common.seeds.clone())?;
            let runs = run_runge(&spec)?;
            for r in &runs {
                println!(
                    "runge {} seed {}: held-out rmse {:.4} over {} pieces",
                    r.variant.label(),
                    r.seed,
                    r.rmse,
                    r.report.regions.len()
                );
            }
            let m = median(runs.iter().map(|r| r.rmse).collect());
            println!("median rmse {m:.4}; artifacts in {}", common.out.display());
        }
        Command::Stability {
            common,
            sigmas,
            lo,
            hi,
        } => {
            let cfg = resolve_config(&common, |_| TrainConfig::default())?;
            let spec = ExperimentSpec::new(
                Experiment::Stability,
                cfg,
                &common.out,
                common.seeds.clone(),
            )?;
            let rows = run_stability(&spec, &sigmas, lo, hi)?;
            for &sigma in &sigmas {
                let grab = |realization: &str| {
                    median(
                        rows.iter()
                            .filter(|r| r.sigma == sigma && r.realization == realization)
                            .map(|r| r.max_abs)
                            .collect(),
                    )
                };
                println!(
                    "sigma {sigma}: median max|f| quadratic {:.3e}, conventional {:.3e}",
                    grab("quadratic"),
                    grab("conventional")
                );
            }
            println!("rows in {}", common.out.join("stability.csv").display());
        }
        Command::Xor { common } => {
            let cfg = resolve_config(&common, xor_config)?;
            let spec =
                ExperimentSpec::new(Experiment::Xor, cfg, &common.out, common.seeds.clone())?;
            let outcome = run_xor(&spec)?;
            println!("analytic corners correct: {}/4", outcome.analytic_correct);
            for r in &outcome.runs {
                println!(
                    "seed {}: quadratic {}/4, conventional {}/4",
                    r.seed, r.quadratic_correct, r.conventional_correct
                );
            }
            println!("rows in {}", common.out.join("xor.csv").display());
        }
        Command::Toy2d { common, noise } => {
            let cfg = resolve_config(&common, toy2d_config)?;
            let spec =
                ExperimentSpec::new(Experiment::Toy2d, cfg, &common.out, common.seeds.clone())?;
            let runs = run_toy2d(&spec, noise)?;
            for r in &runs {
                println!(
                    "seed {}: quadratic accuracy {:.3}, conventional {:.3}",
                    r.seed, r.quad_accuracy, r.conv_accuracy
                );
            }
            let mq = median(runs.iter().map(|r| r.quad_accuracy).collect());
            let mc = median(runs.iter().map(|r| r.conv_accuracy).collect());
            println!("medians: quadratic {mq:.3}, conventional {mc:.3}");
            println!("rows in {}", common.out.join("toy2d.csv").display());
        }
        Command::BoundsTable { out, archs } => {
            let archs = if archs.is_empty() {
                default_bound_archs()
            } else {
                archs
                    .iter()
                    .map(|s| parse_arch(s))
                    .collect::<qnn_lab::Result<Vec<_>>>()?
            };
            let spec = ExperimentSpec::new(
                Experiment::BoundsTable,
                TrainConfig::default(),
                &out,
                vec![0],
            )?;
            let rows = run_bounds_table(&spec, &archs)?;
            for row in &rows {
                println!("{}", row.csv_row());
            }
            println!("table in {}", out.join("bounds.csv").display());
        }
    }
    Ok(())
}
