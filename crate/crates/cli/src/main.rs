//! `dbm-edge`: simulations, free convolutions and the desk-scale experiments.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dbm_edge::dbm::{evolve, Integrator, NoiseStream, RunMetadata, DISPLACEMENT_CAP, MAX_HALVINGS};
use dbm_edge::freeconv::FreeConvolution;
use dbm_edge::harness::{self, ExperimentConfig, ExperimentKind, ExperimentReport, CONFIG_KEYS};
use dbm_edge::{Error, FiniteMeasure};

#[derive(Parser)]
#[command(name = "dbm-edge", version, about = "Dyson Brownian motion edge experiments", after_help = config_help())]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// JSON config file (flat object; see the key list below)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. --set n=200 --set t_grid=[0.5,1]
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed of the counter-based noise (same as --set seed=...)
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for report.json, timing.json and CSV tables
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve one trajectory of the configured initial data and write it as CSV
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Stream id of the trajectory
        #[arg(long, default_value_t = 0)]
        stream: u64,
    },
    /// Free convolution of an initial measure with the semicircle of variance t
    Freeconv {
        #[arg(long, value_enum)]
        measure: MeasureChoice,
        #[arg(long)]
        t: f64,
        /// Emit a y,rho density CSV on an equispaced grid of the support
        #[arg(long)]
        emit_density: bool,
        /// Grid size of the density CSV
        #[arg(long, default_value_t = 201)]
        points: usize,
        /// Nodes of the Gauss-Legendre atomisation of the uniform law
        #[arg(long, default_value_t = 8000)]
        atoms: usize,
        /// File to write instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Edge rigidity (or bulk rigidity with --bulk)
    Rigidity {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        bulk: bool,
    },
    /// Edge statistic against the tridiagonal reference
    Universality {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Shared-noise couplings and the quantile comparison
    Coupling {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Worked examples with uniform or small-support initial data; prints the report JSON
    Examples {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, conflicts_with = "small_support")]
        uniform: bool,
        #[arg(long)]
        small_support: bool,
        /// Single observation time (same as --set t_grid=[t])
        #[arg(long)]
        t: Option<f64>,
    },
    /// Loop-equation residual and weak convergence
    Residual {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MeasureChoice {
    Delta0,
    Uniform,
}

fn config_help() -> String {
    let width = CONFIG_KEYS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut s = String::from("Config keys (JSON file via --config, or --set key=value):\n");
    for (k, d) in CONFIG_KEYS {
        s.push_str(&format!("  {k:width$}  {d}\n"));
    }
    s.push_str("\nExit status: 0 pass, 1 config or runtime error, 2 check failed, 3 hypothesis unmet.\n");
    s.push_str("DBM_EDGE_THREADS caps the worker count.");
    s
}

fn load(kind: ExperimentKind, args: &ConfigArgs, extra: &[String]) -> Result<ExperimentConfig, Error> {
    let mut overrides = args.overrides.clone();
    overrides.extend_from_slice(extra);
    if let Some(seed) = args.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(dir) = &args.output_dir {
        overrides.push(format!("output_dir={}", serde_json::Value::String(dir.display().to_string())));
    }
    ExperimentConfig::load(kind, args.config.as_deref(), &overrides)
}

fn print_report(report: &ExperimentReport) {
    for line in report.summary_lines() {
        println!("{line}");
    }
}

fn experiment(kind: ExperimentKind, args: &ConfigArgs, extra: &[String]) -> Result<i32, Error> {
    let cfg = load(kind, args, extra)?;
    let report = harness::run(&cfg)?;
    print_report(&report);
    Ok(report.verdict.exit_code())
}

fn write_out(out: Option<&Path>, text: &[u8]) -> Result<(), Error> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().write_all(text)?,
    }
    Ok(())
}

fn freeconv(
    measure: MeasureChoice,
    t: f64,
    emit_density: bool,
    points: usize,
    atoms: usize,
    out: Option<&Path>,
) -> Result<i32, Error> {
    let mu0 = match measure {
        MeasureChoice::Delta0 => FiniteMeasure::dirac(0.0, 1.0)?,
        MeasureChoice::Uniform => FiniteMeasure::atomize_uniform_gauss(-1.0, 0.0, 1.0, atoms.div_ceil(8).max(1))?,
    };
    let fc = FreeConvolution::new(&mu0, t)?;
    if emit_density {
        let mut buf = Vec::new();
        fc.write_density_csv(&mut buf, points)?;
        write_out(out, &buf)?;
    } else {
        let report = fc.edge_report()?;
        let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Io(e.to_string()))? + "\n";
        write_out(out, text.as_bytes())?;
    }
    Ok(0)
}

fn simulate(args: &ConfigArgs, stream: u64) -> Result<i32, Error> {
    let cfg = load(ExperimentKind::Rigidity, args, &[])?;
    let (sys, _) = harness::initial_data(&cfg, cfg.n)?;
    let scheme = cfg.scheme_for(cfg.n);
    let mut integ = Integrator::new(scheme);
    let traj =
        evolve(&sys, cfg.final_time(), cfg.macro_dt, NoiseStream::new(cfg.seed, stream), &cfg.t_grid, &mut integ)?;
    let meta = RunMetadata {
        seed: cfg.seed,
        stream_id: stream,
        scheme,
        macro_dt: cfg.macro_dt,
        max_halvings: MAX_HALVINGS,
        displacement_cap: DISPLACEMENT_CAP,
        stats: traj.stats,
    };
    match &cfg.output_dir {
        Some(dir) => {
            let dir = Path::new(dir);
            std::fs::create_dir_all(dir)?;
            traj.write_csv(std::io::BufWriter::new(std::fs::File::create(dir.join("trajectory.csv"))?))?;
            let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Io(e.to_string()))? + "\n";
            std::fs::write(dir.join("metadata.json"), text)?;
            println!("wrote {} snapshots to {}", traj.snapshots.len(), dir.display());
        }
        None => traj.write_csv(std::io::stdout().lock())?,
    }
    Ok(0)
}

fn examples(args: &ConfigArgs, small_support: bool, t: Option<f64>) -> Result<i32, Error> {
    let kind = if small_support { ExperimentKind::SmallSupport } else { ExperimentKind::UniformProfile };
    let mut extra = Vec::new();
    if let Some(t) = t {
        extra.push(format!("t_grid=[{t}]"));
    }
    // the worked examples are deterministic unless trials are requested explicitly
    if !args.overrides.iter().any(|o| o.starts_with("trials=")) && args.config.is_none() {
        extra.insert(0, "trials=0".into());
    }
    let cfg = load(kind, args, &extra)?;
    let report = harness::run(&cfg)?;
    print!("{}", report.to_json());
    Ok(report.verdict.exit_code())
}

fn dispatch(cli: Cli) -> Result<i32, Error> {
    match cli.command {
        Command::Simulate { cfg, stream } => simulate(&cfg, stream),
        Command::Freeconv { measure, t, emit_density, points, atoms, out } => {
            freeconv(measure, t, emit_density, points, atoms, out.as_deref())
        }
        Command::Rigidity { cfg, bulk } => {
            experiment(if bulk { ExperimentKind::Bulk } else { ExperimentKind::Rigidity }, &cfg, &[])
        }
        Command::Universality { cfg } => experiment(ExperimentKind::Universality, &cfg, &[]),
        Command::Coupling { cfg } => experiment(ExperimentKind::Coupling, &cfg, &[]),
        Command::Examples { cfg, uniform: _, small_support, t } => examples(&cfg, small_support, t),
        Command::Residual { cfg } => experiment(ExperimentKind::LoopResidual, &cfg, &[]),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("dbm-edge: {e}");
            ExitCode::from(1)
        }
    }
}
