//! Orchestration of the command-line experiments: each function resolves a
//! [`Settings`], runs the engine and writes its CSV files into a directory.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::json;

use crate::config::Settings;
use crate::convergence::{coupled_path, strong_error_study, StrongErrorReport, StudySetup, DEFAULT_H_REF, DEFAULT_H_VALUES};
use crate::error::{Error, Result};
use crate::export::{write_convergence, write_dose, write_histogram, write_norms, write_profile, write_sensitivity, Header, NormRow};
use crate::integrators::{clock_increment, step_angle, SchemeId, StepOptions};
use crate::model::{AngularModel, Param};
use crate::montecarlo::noise::{path_rng, sample_increment, NoiseNeeds};
use crate::montecarlo::{dose_sens_no_straggling, fd_dose_sens, run_ensemble, EnsembleOutput, RunConfig};
use crate::observables::{depth_profile, DepositMode, MollifierSpec};
use crate::sensitivity::ParamSet;
use crate::sphere::{Dim, Direction};
use crate::vector::Vec3;

fn header(settings: &Settings, command: serde_json::Value) -> Result<Header> {
    Ok(Header::new(settings.canonical_json()?, settings.seed).with("command", command.to_string()))
}

fn out_file(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

#[derive(Debug, Clone)]
pub struct DoseRun {
    pub output: EnsembleOutput<f64>,
    pub files: Vec<PathBuf>,
}

/// Dose grid and depth profile: `dose.csv`, `profile.csv`.
pub fn simulate_dose(settings: &Settings, out: &Path) -> Result<DoseRun> {
    let mut cfg = settings.to_run_config()?;
    cfg.sens = ParamSet::empty();
    let output = run_ensemble(&cfg)?;
    let h = header(settings, json!({"command": "simulate-dose"}))?;
    let dose = output.grid.mean_dose();
    let files = vec![out_file(out, "dose.csv"), out_file(out, "profile.csv")];
    write_dose(&files[0], &h, &cfg.grid, &dose)?;
    write_profile(&files[1], &h, &depth_profile(&cfg.grid, &dose))?;
    Ok(DoseRun { output, files })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    Pathwise,
    Fd,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Pathwise => "pathwise",
            Estimator::Fd => "fd",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensOptions {
    pub theta: Param,
    pub estimator: Estimator,
    /// Finite-difference step relative to the parameter value.
    pub fd_delta_rel: f64,
    pub common_noise: bool,
}

#[derive(Debug, Clone)]
pub struct SensRun {
    pub config: RunConfig<f64>,
    pub value: Vec<f64>,
    pub se: Vec<f64>,
    pub file: PathBuf,
}

/// Engine configuration for a sensitivity run: the straggling-free
/// estimator when κ = 0, the mollified one otherwise. The FD estimator
/// differentiates the same dose functional.
pub fn sensitivity_config(settings: &Settings, theta: Param) -> Result<RunConfig<f64>> {
    if theta == Param::Kappa && settings.kappa == 0.0 {
        return Err(Error::config("theta", "sensitivity with respect to kappa requires kappa > 0"));
    }
    let mut cfg = settings.to_run_config()?;
    cfg.sens = ParamSet::empty();
    if cfg.params.kappa > 0.0 {
        cfg.deposit = DepositMode::Mollified(MollifierSpec::new(cfg.params.delta, cfg.params.e_min)?);
    }
    Ok(cfg)
}

/// Writes `sens_<theta>_<estimator>.csv` with columns `x,y,dsens`.
pub fn sensitivity(settings: &Settings, opts: &SensOptions, out: &Path) -> Result<SensRun> {
    let cfg = sensitivity_config(settings, opts.theta)?;
    let (value, se) = match opts.estimator {
        Estimator::Pathwise => {
            let grid = if cfg.params.kappa == 0.0 {
                dose_sens_no_straggling(&cfg, opts.theta)?.grid
            } else {
                let run = RunConfig { sens: ParamSet::of(&[opts.theta]), ..cfg.clone() };
                run_ensemble(&run)?.grid
            };
            (grid.mean_sens(opts.theta), grid.sens_se(opts.theta))
        }
        Estimator::Fd => {
            if !(opts.fd_delta_rel > 0.0) {
                return Err(Error::config("fd_delta", "must be > 0"));
            }
            let delta = opts.fd_delta_rel * cfg.params.get(opts.theta).abs();
            let est = fd_dose_sens(&cfg, opts.theta, delta, opts.common_noise)?;
            (est.value, est.se)
        }
    };
    let command = json!({
        "command": "sensitivity",
        "theta": opts.theta.name(),
        "estimator": opts.estimator.name(),
        "fd_delta": opts.fd_delta_rel,
        "fd_common_noise": opts.common_noise,
    });
    let file = out_file(out, &format!("sens_{}_{}.csv", opts.theta.name(), opts.estimator.name()));
    write_sensitivity(&file, &header(settings, command)?, &cfg.grid, &value)?;
    Ok(SensRun { config: cfg, value, se, file })
}

/// Base settings of the strong-convergence study.
pub fn convergence_defaults() -> Settings {
    Settings {
        alpha: 0.022,
        kappa: 0.075,
        eps0: 1e-5,
        t_max: Some(0.1),
        n_paths: 1000,
        dim: 3,
        sens: Param::ALL.to_vec(),
        ..Settings::default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceOptions {
    pub h_values: Vec<f64>,
    pub h_ref: f64,
    pub step_options: StepOptions,
}

impl Default for ConvergenceOptions {
    fn default() -> Self {
        ConvergenceOptions { h_values: DEFAULT_H_VALUES.to_vec(), h_ref: DEFAULT_H_REF, step_options: StepOptions::default() }
    }
}

pub fn study_setup(settings: &Settings, step_options: StepOptions) -> Result<StudySetup<f64>> {
    let params = settings.model_params();
    params.validate()?;
    let sens = ParamSet::of(&settings.sens);
    sens.validate(&params)?;
    let dim = Dim::from_usize(settings.dim)?;
    let t_final = settings.t_max.unwrap_or(0.1);
    if !(t_final > 0.0) {
        return Err(Error::config("t_max", "must be > 0"));
    }
    Ok(StudySetup {
        scheme: settings.scheme,
        params,
        e0: settings.e0,
        x0: Vec3::planar(settings.x0, settings.y0),
        omega0: Direction::x_axis(dim),
        t_final,
        seed: settings.seed,
        sens,
        levy_terms: settings.levy_terms,
        options: step_options,
        workers: settings.workers.max(1),
    })
}

/// Largest terminal difference between a coarse path at m = 1 and its
/// reference over the first `n` paths; zero when the coupling is sound.
pub fn coupling_self_test(setup: &StudySetup<f64>, h_ref: f64, n: usize) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for i in 0..n as u64 {
        let (c, r) = coupled_path(setup, i, h_ref, h_ref)?;
        worst = worst
            .max((c.state.y - r.state.y).abs())
            .max((c.state.omega.vec() - r.state.omega.vec()).norm())
            .max((c.state.x - r.state.x).norm());
        for th in Param::ALL {
            worst = worst.max((c.sens.get(th) - r.sens.get(th)).abs());
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone)]
pub struct ConvergenceRun {
    pub report: StrongErrorReport,
    pub self_test: f64,
    pub file: PathBuf,
}

/// Writes `convergence_<scheme>.csv`.
pub fn convergence(settings: &Settings, opts: &ConvergenceOptions, out: &Path) -> Result<ConvergenceRun> {
    let setup = study_setup(settings, opts.step_options)?;
    let report = strong_error_study(&setup, &opts.h_values, opts.h_ref, settings.n_paths)?;
    let self_test = coupling_self_test(&setup, opts.h_ref, 4)?;
    let command = json!({
        "command": "convergence",
        "h_values": opts.h_values,
        "h_ref": opts.h_ref,
        "milstein_correction": opts.step_options.milstein_correction,
    });
    let file = out_file(out, &format!("convergence_{}.csv", settings.scheme.name()));
    write_convergence(&file, &header(settings, command)?, &report, Some(self_test))?;
    Ok(ConvergenceRun { report, self_test, file })
}

/// Base settings of the angular diffusion demo on the circle.
pub fn angular_defaults() -> Settings {
    Settings { eps0: 0.1, h: 0.01, t_max: Some(40.0), n_paths: 10_000, dim: 2, ..Settings::default() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AngularRun {
    pub scheme: SchemeId,
    pub norms: Vec<NormRow>,
    /// Terminal polar angles in [−π, π].
    pub angles: Vec<f64>,
    /// Terminal ‖Ω‖ per path.
    pub final_norms: Vec<f64>,
}

const ANGULAR_BATCH: usize = 256;

/// Pure angular diffusion on S¹ at the fixed energy `e0`: only the
/// direction is stepped.
pub fn angular_run(settings: &Settings, scheme: SchemeId) -> Result<AngularRun> {
    if settings.dim != 2 {
        return Err(Error::config("dim", "the angular demo runs on the circle (dim = 2)"));
    }
    let params = settings.model_params();
    params.validate()?;
    let h = settings.h;
    let t_final = settings.t_max.unwrap_or(40.0);
    if !(h > 0.0 && t_final > 0.0) {
        return Err(Error::config("h", "h and t_max must be > 0"));
    }
    let n_steps = (t_final / h).round() as usize;
    let n_paths = settings.n_paths;
    if n_paths == 0 {
        return Err(Error::config("n_paths", "must be >= 1"));
    }
    let e = settings.e0;
    let dgamma = clock_increment(e, e, h, &params)?;
    let needs = NoiseNeeds::for_scheme(scheme, Dim::Two);
    let opts = StepOptions::default();
    // per step: (sum, min, max)
    type Acc = (Vec<(f64, f64, f64)>, Vec<(f64, f64)>);
    let batch = |b: usize| -> Result<Acc> {
        let mut stats = vec![(0.0, f64::INFINITY, f64::NEG_INFINITY); n_steps + 1];
        let mut angles = Vec::new();
        for index in b * ANGULAR_BATCH..((b + 1) * ANGULAR_BATCH).min(n_paths) {
            let mut rng = path_rng(settings.seed, index as u64);
            let mut omega = Direction::x_axis(Dim::Two);
            for (n, st) in stats.iter_mut().enumerate() {
                if n > 0 {
                    let inc = sample_increment(&mut rng, h, needs, settings.levy_terms);
                    omega = step_angle(&omega, e, e, h, &inc.on_clock(dgamma), scheme, &params, &opts)?;
                }
                let r = omega.norm();
                st.0 += r;
                st.1 = st.1.min(r);
                st.2 = st.2.max(r);
            }
            angles.push((omega.angle(), omega.norm()));
        }
        Ok((stats, angles))
    };
    let n_batches = n_paths.div_ceil(ANGULAR_BATCH);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.workers.max(1))
        .build()
        .map_err(|e| Error::Contract(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<Acc>> = pool.install(|| (0..n_batches).into_par_iter().map(batch).collect());
    let mut stats = vec![(0.0, f64::INFINITY, f64::NEG_INFINITY); n_steps + 1];
    let mut angles = Vec::with_capacity(n_paths);
    let mut final_norms = Vec::with_capacity(n_paths);
    for r in results {
        let (s, a) = r?;
        for (t, x) in stats.iter_mut().zip(s) {
            t.0 += x.0;
            t.1 = t.1.min(x.1);
            t.2 = t.2.max(x.2);
        }
        for (theta, r) in a {
            angles.push(theta);
            final_norms.push(r);
        }
    }
    let norms = stats
        .into_iter()
        .enumerate()
        .map(|(step, (s, lo, hi))| NormRow { step, t: step as f64 * h, mean: s / n_paths as f64, min: lo, max: hi })
        .collect();
    Ok(AngularRun { scheme, norms, angles, final_norms })
}

/// Writes `angular_norms_<scheme>.csv` and `angular_hist_<scheme>.csv` for
/// every scheme.
pub fn angular_demo(settings: &Settings, out: &Path) -> Result<Vec<AngularRun>> {
    if settings.angular_model != AngularModel::Constant {
        return Err(Error::config("angular_model", "the angular demo uses the constant model"));
    }
    let mut runs = Vec::new();
    for scheme in SchemeId::ALL {
        let run = angular_run(settings, scheme)?;
        let h = header(settings, json!({"command": "angular-demo", "scheme": scheme.name()}))?;
        write_norms(&out_file(out, &format!("angular_norms_{}.csv", scheme.name())), &h, &run.norms)?;
        write_histogram(&out_file(out, &format!("angular_hist_{}.csv", scheme.name())), &h, &run.angles)?;
        runs.push(run);
    }
    Ok(runs)
}
