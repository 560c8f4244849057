//! Strong-error harness: coarse and reference paths driven by one fine
//! Brownian path, RMS terminal errors and log-log slope fits.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::integrators::{full_step, BrownianIncrement, DomainBox, ParticleState, SchemeId, StepOptions};
use crate::model::{ModelParams, Param};
use crate::montecarlo::noise::{path_rng, sample_increment, IncrementAccumulator, NoiseNeeds, DEFAULT_LEVY_TERMS};
use crate::sensitivity::{step_sens_euler, step_sens_milstein, ParamSet, SensitivityState};
use crate::sphere::{Dim, Direction};
use crate::vector::Vec3;
use crate::Real;

/// Fixed initial condition and model for a coupled study.
#[derive(Debug, Clone, PartialEq)]
pub struct StudySetup<T> {
    pub scheme: SchemeId,
    pub params: ModelParams<T>,
    pub e0: T,
    pub x0: Vec3<T>,
    pub omega0: Direction<T>,
    pub t_final: T,
    pub seed: u64,
    pub sens: ParamSet,
    pub levy_terms: usize,
    pub options: StepOptions,
    pub workers: usize,
}

impl<T: Real> StudySetup<T> {
    /// α = 0.022, p = 1.77, κ = 0.075, ε₀ = 1e-5, T = 0.1 on S² from 62 MeV.
    pub fn standard(scheme: SchemeId) -> Self {
        let params = ModelParams {
            alpha: T::lit(0.022),
            p: T::lit(1.77),
            kappa: T::lit(0.075),
            eps0: T::lit(1e-5),
            ..ModelParams::default()
        };
        StudySetup {
            scheme,
            params,
            e0: T::lit(62.0),
            x0: Vec3::planar(T::zero(), T::lit(2.0)),
            omega0: Direction::x_axis(Dim::Three),
            t_final: T::lit(0.1),
            seed: 1,
            sens: ParamSet::all(),
            levy_terms: DEFAULT_LEVY_TERMS,
            options: StepOptions::default(),
            workers: 1,
        }
    }
}

pub const DEFAULT_H_VALUES: [f64; 4] = [0.02, 0.01, 0.005, 0.0025];
pub const DEFAULT_H_REF: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPoint<T> {
    pub state: ParticleState<T>,
    pub sens: SensitivityState<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrongErrorReport {
    pub h_values: Vec<f64>,
    pub err_e: Vec<f64>,
    pub err_omega: Vec<f64>,
    pub err_x: Vec<f64>,
    /// Indexed by `Param::index`.
    pub err_j: [Vec<f64>; 3],
    pub slope_e: f64,
    pub slope_omega: f64,
    pub slope_x: f64,
    /// `None` for parameters not propagated.
    pub slope_j: [Option<f64>; 3],
    pub n_paths: usize,
    pub t_final: f64,
}

fn ratio<T: Real>(h: T, h_ref: T, key: &str) -> Result<usize> {
    let r = h / h_ref;
    let m = r.round();
    if !(m >= T::one()) || (r - m).abs() > T::lit(1e-9) * m {
        return Err(Error::config(key, format!("step {h} is not a whole multiple of {h_ref}")));
    }
    Ok(m.to_usize().unwrap())
}

struct Stepper<'a, T> {
    setup: &'a StudySetup<T>,
    domain: DomainBox<T>,
}

impl<'a, T: Real> Stepper<'a, T> {
    fn start(&self) -> PathPoint<T> {
        PathPoint {
            state: ParticleState::new(self.setup.x0, self.setup.omega0, self.setup.e0),
            sens: SensitivityState::zero(),
        }
    }

    fn step(&self, pt: &PathPoint<T>, inc: &BrownianIncrement<T>, h: T) -> Result<PathPoint<T>> {
        let s = self.setup;
        if !pt.state.alive {
            return Ok(*pt);
        }
        let e = pt.state.energy();
        let sens = if s.sens.is_empty() {
            pt.sens
        } else if s.scheme.uses_milstein() && s.options.milstein_correction {
            step_sens_milstein(&pt.sens, e, h, inc.xi_e, &s.params, s.sens)?
        } else {
            step_sens_euler(&pt.sens, e, h, inc.xi_e, &s.params, s.sens)?
        };
        let state = full_step(pt.state, inc, h, s.scheme, &s.params, &self.domain, &s.options)?;
        Ok(PathPoint { state, sens })
    }
}

/// Runs the reference path at `h_ref` and one coarse path per entry of
/// `ratios` from the same fine increments. Returns (coarse ends, reference end).
fn coupled_levels<T: Real>(
    setup: &StudySetup<T>,
    path_index: u64,
    h_ref: T,
    ratios: &[usize],
) -> Result<(Vec<PathPoint<T>>, PathPoint<T>)> {
    let n_fine = ratio(setup.t_final, h_ref, "t_final")?;
    for &m in ratios {
        if n_fine % m != 0 {
            return Err(Error::config("h_values", "t_final is not a whole number of coarse steps"));
        }
    }
    let stepper = Stepper { setup, domain: DomainBox::unbounded() };
    let needs = NoiseNeeds::for_scheme(setup.scheme, setup.omega0.dim());
    let mut rng = path_rng(setup.seed, path_index);
    let mut reference = stepper.start();
    let mut coarse: Vec<PathPoint<T>> = ratios.iter().map(|_| stepper.start()).collect();
    let mut accs: Vec<IncrementAccumulator<T>> = ratios.iter().map(|_| IncrementAccumulator::new()).collect();
    for _ in 0..n_fine {
        let inc = sample_increment(&mut rng, h_ref, needs, setup.levy_terms);
        reference = stepper.step(&reference, &inc, h_ref)?;
        for ((acc, pt), &m) in accs.iter_mut().zip(coarse.iter_mut()).zip(ratios) {
            acc.push(&inc);
            if acc.count() == m {
                let h = T::from_count(m) * h_ref;
                let mut big = acc.take();
                big.h = h;
                *pt = stepper.step(pt, &big, h)?;
            }
        }
    }
    Ok((coarse, reference))
}

/// One coupled pair: (coarse terminal point, reference terminal point).
pub fn coupled_path<T: Real>(
    setup: &StudySetup<T>,
    path_index: u64,
    h_coarse: T,
    h_ref: T,
) -> Result<(PathPoint<T>, PathPoint<T>)> {
    let m = ratio(h_coarse, h_ref, "h_values")?;
    let (c, r) = coupled_levels(setup, path_index, h_ref, &[m])?;
    Ok((c[0], r))
}

/// OLS slope of log(err) against log(h).
pub fn fit_slope(h_values: &[f64], errors: &[f64]) -> Result<f64> {
    if h_values.len() < 3 || h_values.len() != errors.len() {
        return Err(Error::Contract("slope fit needs at least 3 (h, error) pairs".into()));
    }
    if errors.iter().chain(h_values).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::Contract("non-positive or non-finite error in slope fit (broken coupling?)".into()));
    }
    let lx: Vec<f64> = h_values.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = errors.iter().map(|v| v.ln()).collect();
    Ok(crate::stats::ols_slope(&lx, &ly))
}

const CONV_BATCH: usize = 16;

/// RMS terminal errors of `setup.scheme` at each h against the same scheme at `h_ref`.
pub fn strong_error_study<T: Real>(setup: &StudySetup<T>, h_values: &[T], h_ref: T, n_paths: usize) -> Result<StrongErrorReport> {
    if n_paths == 0 {
        return Err(Error::config("n_paths", "must be >= 1"));
    }
    if h_values.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(Error::config("h_values", "must be strictly decreasing"));
    }
    let ratios = h_values.iter().map(|h| ratio(*h, h_ref, "h_values")).collect::<Result<Vec<_>>>()?;
    let nl = ratios.len();
    // per level: [E, Ω, X, Jα, Jp, Jκ] sums of squared differences
    type Acc = Vec<[f64; 6]>;
    let batch = |b: usize| -> Result<Acc> {
        let mut acc: Acc = vec![[0.0; 6]; nl];
        for index in b * CONV_BATCH..((b + 1) * CONV_BATCH).min(n_paths) {
            let (coarse, reference) = coupled_levels(setup, index as u64, h_ref, &ratios)?;
            for (a, c) in acc.iter_mut().zip(&coarse) {
                let de = (c.state.energy() - reference.state.energy()).as_f64();
                let dw = (c.state.omega.vec() - reference.state.omega.vec()).norm().as_f64();
                let dx = (c.state.x - reference.state.x).norm().as_f64();
                a[0] += de * de;
                a[1] += dw * dw;
                a[2] += dx * dx;
                for th in Param::ALL {
                    let dj = (c.sens.get(th) - reference.sens.get(th)).as_f64();
                    a[3 + th.index()] += dj * dj;
                }
            }
        }
        Ok(acc)
    };
    let n_batches = n_paths.div_ceil(CONV_BATCH);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(setup.workers.max(1))
        .build()
        .map_err(|e| Error::Contract(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<Acc>> = pool.install(|| (0..n_batches).into_par_iter().map(batch).collect());
    let mut total: Acc = vec![[0.0; 6]; nl];
    for r in results {
        for (t, a) in total.iter_mut().zip(r?) {
            for k in 0..6 {
                t[k] += a[k];
            }
        }
    }
    let n = n_paths as f64;
    let col = |k: usize| total.iter().map(|a| (a[k] / n).sqrt()).collect::<Vec<f64>>();
    let hs: Vec<f64> = h_values.iter().map(|h| h.as_f64()).collect();
    let (err_e, err_omega, err_x) = (col(0), col(1), col(2));
    let err_j = [col(3), col(4), col(5)];
    let mut slope_j = [None; 3];
    for th in setup.sens.iter() {
        slope_j[th.index()] = Some(fit_slope(&hs, &err_j[th.index()])?);
    }
    Ok(StrongErrorReport {
        slope_e: fit_slope(&hs, &err_e)?,
        slope_omega: fit_slope(&hs, &err_omega)?,
        slope_x: fit_slope(&hs, &err_x)?,
        slope_j,
        h_values: hs,
        err_e,
        err_omega,
        err_x,
        err_j,
        n_paths,
        t_final: setup.t_final.as_f64(),
    })
}

/// Expected slope windows per scheme: (energy, angle, position, sensitivity).
pub fn order_windows(scheme: SchemeId) -> Option<[(f64, f64); 4]> {
    let half = (0.4, 0.6);
    let one = (0.85, 1.15);
    match scheme {
        SchemeId::MilsteinRkmk => Some([one, one, one, one]),
        SchemeId::GeometricEuler => Some([half, half, one, half]),
        _ => None,
    }
}

/// Checks fitted slopes against the windows of the scheme; returns the
/// list of violations.
pub fn check_orders(report: &StrongErrorReport, scheme: SchemeId) -> Vec<String> {
    let Some(w) = order_windows(scheme) else {
        return vec![format!("no order windows defined for {}", scheme.name())];
    };
    let mut bad = Vec::new();
    let mut check = |name: &str, v: f64, (lo, hi): (f64, f64)| {
        if !(v >= lo && v <= hi) {
            bad.push(format!("{name} slope {v:.3} outside [{lo}, {hi}]"));
        }
    };
    check("energy", report.slope_e, w[0]);
    check("angle", report.slope_omega, w[1]);
    check("position", report.slope_x, w[2]);
    for th in Param::ALL {
        if let Some(s) = report.slope_j[th.index()] {
            check(&format!("J_{}", th.name()), s, w[3]);
        }
    }
    bad
}
