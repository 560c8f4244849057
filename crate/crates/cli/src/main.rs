use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{Map, Value};

use proton_sde::config::{parse_assignment, parse_object, Settings};
use proton_sde::convergence::{check_orders, DEFAULT_H_REF, DEFAULT_H_VALUES};
use proton_sde::experiments::{
    angular_defaults, angular_demo, convergence, convergence_defaults, sensitivity, simulate_dose, ConvergenceOptions,
    Estimator, SensOptions,
};
use proton_sde::model::{calibrate_kappa, csda_range};
use proton_sde::observables::{depth_profile, fwhm, peak};
use proton_sde::{Error, Param, StepOptions};

#[derive(Parser, Debug)]
#[command(name = "proton-sde", version, about = "Stochastic proton transport: dose, sensitivities and convergence studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// JSON configuration file (flat object)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Override any configuration key, e.g. --set kappa=1e-3 (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, global = true)]
    h: Option<f64>,
    #[arg(long, global = true)]
    n_paths: Option<u64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<u64>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    p: Option<f64>,
    #[arg(long, global = true)]
    kappa: Option<f64>,
    #[arg(long, global = true)]
    eps0: Option<f64>,
    #[arg(long, global = true)]
    t_max: Option<f64>,
    #[arg(long, global = true)]
    scheme: Option<String>,
    #[arg(long, global = true)]
    dim: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Dose grid and depth profile
    SimulateDose {
        #[command(flatten)]
        common: Common,
    },
    /// Dose sensitivity field with respect to one parameter
    Sensitivity {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        theta: ThetaArg,
        #[arg(long, value_enum, default_value = "pathwise")]
        estimator: EstimatorArg,
        /// Finite-difference step relative to the parameter value
        #[arg(long, default_value_t = 0.01)]
        fd_delta: f64,
        /// Use the same seed for both finite-difference branches
        #[arg(long)]
        fd_common_noise: bool,
    },
    /// Strong convergence study with coupled coarse/reference paths
    Convergence {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        h_values: Option<Vec<f64>>,
        #[arg(long, default_value_t = DEFAULT_H_REF)]
        h_ref: f64,
        /// Exit with status 4 if a fitted slope leaves its window
        #[arg(long)]
        assert_orders: bool,
        #[arg(long, hide = true)]
        disable_milstein_correction: bool,
    },
    /// Angular diffusion on the circle for every scheme
    AngularDemo {
        #[command(flatten)]
        common: Common,
    },
    /// Straggling coefficient from a measured range spread
    CalibrateKappa {
        #[command(flatten)]
        common: Common,
        /// Variance of the range (cm²)
        #[arg(long, conflicts_with = "range_std")]
        var_r: Option<f64>,
        /// Standard deviation of the range (cm)
        #[arg(long)]
        range_std: Option<f64>,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum ThetaArg {
    Alpha,
    P,
    Kappa,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum EstimatorArg {
    Pathwise,
    Fd,
}

fn flag_overrides(c: &Common) -> Result<Map<String, Value>, Error> {
    let mut m = Map::new();
    let mut put = |k: &str, v: Option<Value>| {
        if let Some(v) = v {
            m.insert(k.to_string(), v);
        }
    };
    put("h", c.h.map(Value::from));
    put("n_paths", c.n_paths.map(Value::from));
    put("seed", c.seed.map(Value::from));
    put("workers", c.workers.map(Value::from));
    put("alpha", c.alpha.map(Value::from));
    put("p", c.p.map(Value::from));
    put("kappa", c.kappa.map(Value::from));
    put("eps0", c.eps0.map(Value::from));
    put("t_max", c.t_max.map(Value::from));
    put("scheme", c.scheme.clone().map(Value::from));
    put("dim", c.dim.map(Value::from));
    for s in &c.set {
        let (k, v) = parse_assignment(s)?;
        m.insert(k, v);
    }
    Ok(m)
}

/// Base defaults, then the file, then flags, then `--set`.
fn resolve(base: Settings, c: &Common) -> Result<Settings, Error> {
    let mut s = base;
    if let Some(path) = &c.config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        s.apply(&parse_object(&text)?)?;
    }
    s.apply(&flag_overrides(c)?)?;
    eprintln!("config: {}", s.canonical_json()?);
    eprintln!("workers: {}", s.workers);
    Ok(s)
}

fn report_files(files: &[&Path]) {
    for f in files {
        eprintln!("wrote {}", f.display());
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::SimulateDose { common } => {
            let s = resolve(Settings::default(), &common)?;
            let run = simulate_dose(&s, &common.out)?;
            let g = &run.output.grid;
            let prof = depth_profile(&g.spec, &g.mean_dose());
            let (xp, dp) = peak(&prof);
            let sum = &run.output.summary;
            eprintln!(
                "peak depth {xp:.4} cm (value {dp:.4e}), FWHM {:.4} cm, killed by energy {}, by exit {}, survived {:.4}, {:.1} s",
                fwhm(&prof),
                sum.killed_by_energy,
                sum.killed_by_exit,
                sum.survived_fraction,
                sum.wall_time_s
            );
            report_files(&run.files.iter().map(|p| p.as_path()).collect::<Vec<_>>());
        }
        Command::Sensitivity { common, theta, estimator, fd_delta, fd_common_noise } => {
            let s = resolve(Settings::default(), &common)?;
            let opts = SensOptions {
                theta: match theta {
                    ThetaArg::Alpha => Param::Alpha,
                    ThetaArg::P => Param::P,
                    ThetaArg::Kappa => Param::Kappa,
                },
                estimator: match estimator {
                    EstimatorArg::Pathwise => Estimator::Pathwise,
                    EstimatorArg::Fd => Estimator::Fd,
                },
                fd_delta_rel: fd_delta,
                common_noise: fd_common_noise,
            };
            let run = sensitivity(&s, &opts, &common.out)?;
            report_files(&[&run.file]);
        }
        Command::Convergence { common, h_values, h_ref, assert_orders, disable_milstein_correction } => {
            let s = resolve(convergence_defaults(), &common)?;
            let opts = ConvergenceOptions {
                h_values: h_values.unwrap_or_else(|| DEFAULT_H_VALUES.to_vec()),
                h_ref,
                step_options: StepOptions { milstein_correction: !disable_milstein_correction, ..StepOptions::default() },
            };
            let run = convergence(&s, &opts, &common.out)?;
            let r = &run.report;
            eprintln!(
                "slopes: E {:.3}, Omega {:.3}, X {:.3}, J {:?}; coupling self-test {:.1e}",
                r.slope_e, r.slope_omega, r.slope_x, r.slope_j, run.self_test
            );
            report_files(&[&run.file]);
            if assert_orders {
                let mut bad = check_orders(r, s.scheme);
                if run.self_test != 0.0 {
                    bad.push(format!("coupling self-test difference {:e}", run.self_test));
                }
                if !bad.is_empty() {
                    return Err(Error::Assertion(bad.join("; ")));
                }
            }
        }
        Command::AngularDemo { common } => {
            let s = resolve(angular_defaults(), &common)?;
            let runs = angular_demo(&s, &common.out)?;
            for r in &runs {
                let last = r.norms.last().expect("at least one step");
                let (d, pv) = proton_sde::stats::ks_uniform_angles(&r.angles);
                eprintln!(
                    "{}: final norm mean {:.6} [{:.6}, {:.6}], KS D {:.4} p {:.3}",
                    r.scheme.name(),
                    last.mean,
                    last.min,
                    last.max,
                    d,
                    pv
                );
            }
        }
        Command::CalibrateKappa { common, var_r, range_std } => {
            let s = resolve(Settings::default(), &common)?;
            let var = match (var_r, range_std) {
                (Some(v), _) => v,
                (None, Some(sd)) => sd * sd,
                (None, None) => return Err(Error::Config { key: "var_r".into(), detail: "pass --var-r or --range-std".into() }),
            };
            if !(var >= 0.0 && var.is_finite()) {
                return Err(Error::Config { key: "var_r".into(), detail: format!("must be a finite number >= 0, got {var}") });
            }
            let params = s.model_params();
            params.validate()?;
            let kappa = calibrate_kappa(var, &params, s.e0)?;
            println!("kappa = {kappa:.9e}");
            eprintln!("csda range {:.6} cm, relative range spread {:.4e}", csda_range(s.e0, &params)?, var.sqrt() / csda_range(s.e0, &params)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config { .. } => 2,
                Error::Io(_) => 3,
                Error::Assertion(_) => 4,
                Error::Domain { .. } | Error::Contract(_) => 1,
            })
        }
    }
}
