use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kinklab::commands::{self, ModelArgs, OscillatoryArgs, SpectrumOptions, SweepAxis};
use kinklab::config::{InitialMode, RunConfig};
use kinklab::exit::{CliError, CliResult};
use kinklab_core::evolve::Flavor;
use kinklab_core::Error;

#[derive(Parser, Debug)]
#[command(name = "kinklab", version, about = "Kink stability laboratory")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: $KINKLAB_OUT, else ./kinklab-out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps and parallel diagnostics.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Kink profile, admissibility checks and tail fit.
    Kink(ModelArgs),
    /// Odd-sector eigenvalue, edge test and spectral conditions.
    Spectrum {
        #[command(flatten)]
        model: ModelArgs,
        /// Replace the linearized operator by the free one.
        #[arg(long)]
        free_operator: bool,
        /// Skip the N -> 2N extrapolation.
        #[arg(long)]
        no_refine: bool,
    },
    /// Resonance coupling integral.
    Fgr {
        #[command(flatten)]
        model: ModelArgs,
        /// Repeat on the grid with twice the nodes.
        #[arg(long)]
        refine: bool,
    },
    /// Normal-form coefficients.
    Normalform(ModelArgs),
    /// Evolve and persist a trajectory into the output directory.
    Evolve {
        #[command(flatten)]
        model: ModelArgs,
        /// Initial smallness eps = |z(0)|² (eigenmode kick).
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        t_final: Option<f64>,
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long, value_parser = parse_flavor)]
        flavor: Option<Flavor>,
    },
    /// Run all diagnostics on a persisted run directory.
    Fit { run_dir: PathBuf },
    /// Evolve and fit the Cartesian product of parameter axes.
    Sweep {
        /// Axis `key=v1,v2,...`; keys: eps, delta, t_final, length, nodes.
        #[arg(long = "param", required = true)]
        params: Vec<SweepAxis>,
    },
    /// Model oscillatory tails.
    Oscillatory(OscillatoryArgs),
}

fn parse_flavor(s: &str) -> Result<Flavor, String> {
    match s {
        "nonlinear" => Ok(Flavor::Nonlinear),
        "linearized" => Ok(Flavor::Linearized),
        "free" => Ok(Flavor::Free),
        _ => Err(format!("unknown flavor '{s}' (nonlinear, linearized, free)")),
    }
}

fn out_root(cli: &Option<PathBuf>, cfg: &RunConfig) -> PathBuf {
    cli.clone()
        .or_else(|| cfg.output.clone())
        .or_else(|| std::env::var_os("KINKLAB_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("kinklab-out"))
}

fn run(cli: &Cli, out: &Path, mut cfg: RunConfig) -> CliResult<serde_json::Value> {
    match &cli.command {
        Command::Kink(m) => {
            m.apply(&mut cfg);
            commands::cmd_kink(&cfg, out)
        }
        Command::Spectrum { model, free_operator, no_refine } => {
            model.apply(&mut cfg);
            commands::cmd_spectrum(&cfg, &SpectrumOptions { free_operator: *free_operator, refine: !no_refine }, out)
        }
        Command::Fgr { model, refine } => {
            model.apply(&mut cfg);
            commands::cmd_fgr(&cfg, *refine, out)
        }
        Command::Normalform(m) => {
            m.apply(&mut cfg);
            commands::cmd_normalform(&cfg, out)
        }
        Command::Evolve { model, eps, t_final, stride, flavor } => {
            model.apply(&mut cfg);
            if let Some(e) = eps {
                if e.is_nan() || *e < 0.0 {
                    return Err(Error::InvalidArgument(format!("eps must be >= 0, got {e}")).into());
                }
                cfg.initial.mode = InitialMode::EigenmodeKick;
                cfg.initial.amplitude = e.sqrt();
            }
            if let Some(t) = t_final {
                cfg.evolution.t_final = *t;
            }
            if let Some(s) = stride {
                cfg.evolution.stride = *s;
            }
            if let Some(f) = flavor {
                cfg.evolution.flavor = *f;
            }
            commands::cmd_evolve(&cfg, out)
        }
        Command::Fit { run_dir } => commands::cmd_fit(run_dir),
        Command::Sweep { params } => commands::cmd_sweep(&cfg, params, out),
        Command::Oscillatory(a) => commands::cmd_oscillatory(a, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    };
    let out = cfg.as_ref().map(|c| out_root(&cli.out, c)).unwrap_or_else(|_| out_root(&cli.out, &RunConfig::default()));
    let result = (|| -> CliResult<serde_json::Value> {
        if let Some(n) = cli.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CliError::Core(Error::InvalidArgument(format!("threads: {e}"))))?;
        }
        run(&cli, &out, cfg?)
    })();
    match result {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let report = serde_json::to_string_pretty(&e.report()).unwrap_or_default();
            eprintln!("{report}");
            if out.is_dir() {
                let _ = std::fs::write(out.join("error.json"), &report);
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
