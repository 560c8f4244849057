//! Path-ensemble driver: initial conditions, per-path streams, the step loop
//! with deposition, and a deterministic parallel reduction.

pub mod noise;

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::integrators::{full_step, DomainBox, ParticleState, SchemeId, StepOptions};
use crate::model::{ModelParams, Param};
use crate::observables::{
    deposit_boundary, deposit_step, trim_last_step, DepositMode, DoseGrid, GridSpec, Kernel, PathTally,
};
use crate::sensitivity::{det_energy_sens_at, step_sens_euler, step_sens_milstein, ParamSet, SensitivityState};
use crate::sphere::{Dim, Direction};
use crate::vector::Vec3;
use crate::Real;

pub use noise::{draw_noise, path_rng, sample_increment, NoiseNeeds, PathRng, DEFAULT_LEVY_TERMS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamSpec<T> {
    pub e0: T,
    pub energy_spread_rel: T,
    pub x0: Vec3<T>,
    pub transverse_sigma: T,
    pub direction: Direction<T>,
}

impl<T: Real> BeamSpec<T> {
    pub fn pencil(dim: Dim) -> Self {
        BeamSpec {
            e0: T::lit(62.0),
            energy_spread_rel: T::lit(0.01),
            x0: Vec3::planar(T::zero(), T::lit(2.0)),
            transverse_sigma: T::lit(0.1),
            direction: Direction::x_axis(dim),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.e0 > T::zero()) {
            return Err(Error::config("e0", format!("must be > 0, got {}", self.e0)));
        }
        if !(self.energy_spread_rel >= T::zero()) {
            return Err(Error::config("energy_spread_rel", "must be >= 0"));
        }
        if !(self.transverse_sigma >= T::zero()) {
            return Err(Error::config("transverse_sigma", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig<T> {
    pub scheme: SchemeId,
    pub n_paths: usize,
    pub h: T,
    pub t_max: T,
    pub seed: u64,
    pub dim: Dim,
    pub beam: BeamSpec<T>,
    pub grid: GridSpec<T>,
    pub domain: DomainBox<T>,
    pub params: ModelParams<T>,
    pub sens: ParamSet,
    pub workers: usize,
    pub deposit: DepositMode<T>,
    pub kernel: Kernel,
    pub levy_terms: usize,
    pub options: StepOptions,
}

impl<T: Real> RunConfig<T> {
    /// Straggling-free pencil beam on the default 4 cm × 4 cm grid.
    pub fn reference(dim: Dim) -> Self {
        let params = ModelParams::default();
        let beam = BeamSpec::pencil(dim);
        let h = T::lit(0.005);
        let r = crate::model::csda_range(beam.e0, &params).unwrap_or(T::lit(4.0));
        let extent = [T::zero(), T::lit(4.0), T::zero(), T::lit(4.0)];
        RunConfig {
            scheme: SchemeId::MilsteinRkmk,
            n_paths: 200_000,
            h,
            t_max: whole_steps(T::lit(1.5) * r, h),
            seed: 1,
            dim,
            beam,
            grid: GridSpec::new(200, 50, extent).expect("valid default grid"),
            domain: default_domain(extent),
            params,
            sens: ParamSet::empty(),
            workers: 1,
            deposit: DepositMode::HardTau,
            kernel: Kernel::Nearest,
            levy_terms: DEFAULT_LEVY_TERMS,
            options: StepOptions::default(),
        }
    }

    pub fn n_steps(&self) -> usize {
        (self.t_max / self.h).round().to_usize().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.beam.validate()?;
        self.grid.validate()?;
        if !(self.h > T::zero() && self.h.is_finite()) {
            return Err(Error::config("h", format!("must be > 0, got {}", self.h)));
        }
        if !(self.t_max > T::zero()) {
            return Err(Error::config("t_max", "must be > 0"));
        }
        let steps = self.t_max / self.h;
        if (steps - steps.round()).abs() > T::lit(1e-9) * steps.max(T::one()) {
            return Err(Error::config("t_max", format!("t_max/h = {steps} is not a whole number of steps")));
        }
        if self.n_paths == 0 {
            return Err(Error::config("n_paths", "must be >= 1"));
        }
        if self.workers == 0 {
            return Err(Error::config("workers", "must be >= 1"));
        }
        if self.beam.direction.dim() != self.dim {
            return Err(Error::config("dim", "beam direction dimension differs from dim"));
        }
        if self.beam.e0 <= self.params.e_min {
            return Err(Error::config("e0", "beam energy must exceed e_min"));
        }
        self.sens.validate(&self.params)?;
        if let DepositMode::HardTau = self.deposit {
            if !self.sens.is_empty() && self.params.kappa > T::zero() {
                return Err(Error::config("kappa", "sensitivities with kappa > 0 require the mollified estimator"));
            }
        }
        Ok(())
    }

    /// Parameters used to move particles. Mollified runs keep paths alive
    /// below e_min until the indicator is negligible.
    pub fn dynamics_params(&self) -> ModelParams<T> {
        match self.deposit {
            DepositMode::HardTau => self.params,
            DepositMode::Mollified(m) => ModelParams { e_min: m.dynamics_floor(), ..self.params },
        }
    }
}

/// Rounds a length up to a whole number of steps.
pub fn whole_steps<T: Real>(t: T, h: T) -> T {
    (t / h - T::lit(1e-9)).ceil() * h
}

/// Box spanned by the grid extent; the third axis spans the lateral width
/// centred on zero.
pub fn default_domain<T: Real>(extent: [T; 4]) -> DomainBox<T> {
    let half = (extent[3] - extent[2]) * T::lit(0.5);
    DomainBox::new(Vec3::new(extent[0], extent[2], -half), Vec3::new(extent[1], extent[3], half))
}

/// Samples E₀ (Gaussian, truncated above e_min by rejection) and the
/// transverse offset. Sensitivities start at zero.
pub fn sample_initial<T: Real, R: Rng + ?Sized>(
    beam: &BeamSpec<T>,
    e_min: T,
    rng: &mut R,
) -> (ParticleState<T>, SensitivityState<T>) {
    let sd = beam.energy_spread_rel * beam.e0;
    let mut e0 = beam.e0 + sd * noise::normal::<T, R>(rng);
    while e0 <= e_min {
        e0 = beam.e0 + sd * noise::normal::<T, R>(rng);
    }
    let d = beam.direction.vec();
    let lateral = Vec3::new(-d.y, d.x, T::zero());
    let lateral = if lateral.norm() > T::zero() { lateral.scale(T::one() / lateral.norm()) } else { Vec3::new(T::zero(), T::one(), T::zero()) };
    let mut x = beam.x0 + lateral.scale(beam.transverse_sigma * noise::normal::<T, R>(rng));
    if beam.direction.dim() == Dim::Three {
        x.z += beam.transverse_sigma * noise::normal::<T, R>(rng);
    }
    (ParticleState::new(x, beam.direction, e0), SensitivityState::zero())
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum SensMode {
    None,
    ClosedForm,
    Propagated,
}

/// Final state of one simulated path.
#[derive(Debug, Clone, Copy)]
pub struct PathEnd<T> {
    pub state: ParticleState<T>,
    pub sens: SensitivityState<T>,
    pub e0: T,
    pub steps: usize,
}

/// Shared per-run data for stepping individual paths.
pub struct PathEngine<'a, T> {
    cfg: &'a RunConfig<T>,
    dyn_params: ModelParams<T>,
    needs: NoiseNeeds,
    n_steps: usize,
    mode: SensMode,
}

impl<'a, T: Real> PathEngine<'a, T> {
    pub fn new(cfg: &'a RunConfig<T>) -> Result<Self> {
        cfg.validate()?;
        let mode = if cfg.sens.is_empty() {
            SensMode::None
        } else {
            match cfg.deposit {
                DepositMode::HardTau => SensMode::ClosedForm,
                DepositMode::Mollified(_) => SensMode::Propagated,
            }
        };
        Ok(PathEngine {
            cfg,
            dyn_params: cfg.dynamics_params(),
            needs: NoiseNeeds::for_scheme(cfg.scheme, cfg.dim),
            n_steps: cfg.n_steps(),
            mode,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Simulates path `index`; `visit` sees every alive pre-step state with
    /// its sensitivities.
    pub fn run_path<F>(&self, index: u64, mut visit: F) -> Result<PathEnd<T>>
    where
        F: FnMut(usize, &ParticleState<T>, &SensitivityState<T>) -> Result<()>,
    {
        let cfg = self.cfg;
        let p = &self.dyn_params;
        let mut rng = path_rng(cfg.seed, index);
        let (mut state, mut j) = sample_initial(&cfg.beam, p.e_min, &mut rng);
        let e0 = state.energy();
        let milstein = cfg.scheme.uses_milstein() && cfg.options.milstein_correction;
        let mut n = 0;
        while n < self.n_steps && state.alive {
            if self.mode == SensMode::ClosedForm {
                let e = state.energy();
                for theta in cfg.sens.iter() {
                    j.set(theta, det_energy_sens_at(e, p, e0, theta)?);
                }
            }
            visit(n, &state, &j)?;
            let inc = sample_increment(&mut rng, cfg.h, self.needs, cfg.levy_terms);
            if self.mode == SensMode::Propagated {
                let e = state.energy();
                j = if milstein {
                    step_sens_milstein(&j, e, cfg.h, inc.xi_e, p, cfg.sens)?
                } else {
                    step_sens_euler(&j, e, cfg.h, inc.xi_e, p, cfg.sens)?
                };
            }
            state = full_step(state, &inc, cfg.h, cfg.scheme, p, &cfg.domain, &cfg.options)?;
            n += 1;
        }
        Ok(PathEnd { state, sens: j, e0, steps: n })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnsembleSummary {
    pub n_paths: u64,
    /// Fraction of paths still alive at t_max.
    pub survived_fraction: f64,
    pub killed_by_energy: u64,
    pub killed_by_exit: u64,
    /// Mean x coordinate of the final positions.
    pub mean_terminal_depth: f64,
    pub mean_total_deposit: f64,
    pub total_deposit_se: f64,
    /// Deposits attempted from dead states that changed the grid; always 0.
    pub post_death_contributions: u64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct EnsembleOutput<T> {
    pub grid: DoseGrid<T>,
    pub summary: EnsembleSummary,
}

#[derive(Debug, Clone, Default)]
struct BatchCounts {
    survived: u64,
    killed_energy: u64,
    killed_exit: u64,
    depth_sum: f64,
    post_death: u64,
}

const BATCH: usize = 64;
const WAVE: usize = 32;

fn run_batch<T: Real>(engine: &PathEngine<'_, T>, first: usize, last: usize) -> Result<(DoseGrid<T>, BatchCounts)> {
    let cfg = engine.cfg;
    let p = &engine.dyn_params;
    let mut grid = DoseGrid::new(cfg.grid);
    let mut tally = PathTally::new(cfg.grid);
    let mut counts = BatchCounts::default();
    for index in first..last {
        let mut last = None;
        let end = engine.run_path(index as u64, |_, s, j| {
            last = Some((*s, *j));
            deposit_step(&mut tally, s, j, cfg.h, p, &cfg.deposit, cfg.kernel, cfg.sens).map(|_| ())
        })?;
        if end.state.alive {
            counts.survived += 1;
        } else {
            if end.state.energy() <= p.e_min {
                counts.killed_energy += 1;
                if engine.mode == SensMode::ClosedForm {
                    let mut at = end.state;
                    if let Some((s, j)) = &last {
                        let frac = trim_last_step(&mut tally, s, j, end.state.energy(), cfg.h, p, cfg.kernel, cfg.sens)?;
                        at.x = s.x + (end.state.x - s.x).scale(frac);
                    }
                    deposit_boundary(&mut tally, &at, end.e0, &cfg.params, cfg.kernel, cfg.sens)?;
                }
            } else {
                counts.killed_exit += 1;
            }
            // cemetery audit: a dead state must not deposit anything
            let before = tally.total();
            let touched = deposit_step(&mut tally, &end.state, &end.sens, cfg.h, p, &cfg.deposit, cfg.kernel, cfg.sens)?;
            if touched > 0 || tally.total() != before {
                counts.post_death += 1;
            }
        }
        counts.depth_sum += end.state.x.x.as_f64();
        tally.flush_into(&mut grid);
    }
    Ok((grid, counts))
}

fn with_pool<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Contract(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Simulates `n_paths` paths and reduces their deposits. The result is
/// bit-identical for any worker count: paths are grouped into fixed batches
/// whose grids are merged in batch order.
pub fn run_ensemble<T: Real>(cfg: &RunConfig<T>) -> Result<EnsembleOutput<T>> {
    let start = Instant::now();
    let engine = PathEngine::new(cfg)?;
    let n_batches = cfg.n_paths.div_ceil(BATCH);
    let mut grid = DoseGrid::new(cfg.grid);
    let mut counts = BatchCounts::default();
    with_pool(cfg.workers, || -> Result<()> {
        let mut b0 = 0;
        while b0 < n_batches {
            let b1 = (b0 + WAVE * cfg.workers).min(n_batches);
            let results: Vec<Result<(DoseGrid<T>, BatchCounts)>> = (b0..b1)
                .into_par_iter()
                .map(|b| run_batch(&engine, b * BATCH, ((b + 1) * BATCH).min(cfg.n_paths)))
                .collect();
            for r in results {
                let (g, c) = r?;
                grid.merge(&g)?;
                counts.survived += c.survived;
                counts.killed_energy += c.killed_energy;
                counts.killed_exit += c.killed_exit;
                counts.depth_sum += c.depth_sum;
                counts.post_death += c.post_death;
            }
            b0 = b1;
        }
        Ok(())
    })??;
    let n = cfg.n_paths as f64;
    let (m, se) = grid.total_deposit();
    Ok(EnsembleOutput {
        summary: EnsembleSummary {
            n_paths: cfg.n_paths as u64,
            survived_fraction: counts.survived as f64 / n,
            killed_by_energy: counts.killed_energy,
            killed_by_exit: counts.killed_exit,
            mean_terminal_depth: counts.depth_sum / n,
            mean_total_deposit: m.as_f64(),
            total_deposit_se: se.as_f64(),
            post_death_contributions: counts.post_death,
            wall_time_s: start.elapsed().as_secs_f64(),
        },
        grid,
    })
}

/// Per-step statistics of E over the paths alive at that step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyMoment {
    pub step: usize,
    pub n_alive: u64,
    pub mean: f64,
    pub se: f64,
}

/// Mean energy of alive paths at every step.
pub fn energy_trace<T: Real>(cfg: &RunConfig<T>) -> Result<Vec<EnergyMoment>> {
    let engine = PathEngine::new(cfg)?;
    let n_steps = engine.n_steps();
    let n_batches = cfg.n_paths.div_ceil(BATCH);
    type Acc = Vec<(u64, f64, f64)>;
    let batch = |b: usize| -> Result<Acc> {
        let mut acc: Acc = vec![(0, 0.0, 0.0); n_steps + 1];
        for index in b * BATCH..((b + 1) * BATCH).min(cfg.n_paths) {
            let end = engine.run_path(index as u64, |n, s, _| {
                let e = s.energy().as_f64();
                let a = &mut acc[n];
                a.0 += 1;
                a.1 += e;
                a.2 += e * e;
                Ok(())
            })?;
            if end.state.alive {
                let e = end.state.energy().as_f64();
                let a = &mut acc[end.steps];
                a.0 += 1;
                a.1 += e;
                a.2 += e * e;
            }
        }
        Ok(acc)
    };
    let mut total: Acc = vec![(0, 0.0, 0.0); n_steps + 1];
    with_pool(cfg.workers, || -> Result<()> {
        let mut b0 = 0;
        while b0 < n_batches {
            let b1 = (b0 + WAVE * cfg.workers).min(n_batches);
            let results: Vec<Result<Acc>> = (b0..b1).into_par_iter().map(batch).collect();
            for r in results {
                for (t, a) in total.iter_mut().zip(r?) {
                    t.0 += a.0;
                    t.1 += a.1;
                    t.2 += a.2;
                }
            }
            b0 = b1;
        }
        Ok(())
    })??;
    Ok(total
        .into_iter()
        .enumerate()
        .map(|(step, (k, s, q))| {
            let n = k as f64;
            let mean = if k > 0 { s / n } else { f64::NAN };
            let se = if k > 1 { ((q / n - mean * mean).max(0.0) * n / (n - 1.0) / n).sqrt() } else { f64::NAN };
            EnergyMoment { step, n_alive: k, mean, se }
        })
        .collect())
}

/// Pathwise dose sensitivity of the straggling-free model (κ = 0).
pub fn dose_sens_no_straggling<T: Real>(cfg: &RunConfig<T>, theta: Param) -> Result<EnsembleOutput<T>> {
    if cfg.params.kappa != T::zero() {
        return Err(Error::Contract("the straggling-free estimator requires kappa = 0; use the mollified estimator".into()));
    }
    if theta == Param::Kappa {
        return Err(Error::Contract("the straggling-free estimator supports alpha and p only".into()));
    }
    let run = RunConfig { deposit: DepositMode::HardTau, sens: ParamSet::of(&[theta]), ..cfg.clone() };
    run_ensemble(&run)
}

/// Result of a two-branch finite-difference estimate.
#[derive(Debug, Clone)]
pub struct FdEstimate<T> {
    pub value: Vec<T>,
    pub se: Vec<T>,
}

/// (D(θ+Δθ) − D(θ−Δθ))/(2Δθ) per cell. Branches use seeds `seed` and
/// `seed + 1`, or the same seed when `common_noise` is set.
pub fn fd_dose_sens<T: Real>(cfg: &RunConfig<T>, theta: Param, delta_theta: T, common_noise: bool) -> Result<FdEstimate<T>> {
    if !(delta_theta > T::zero()) {
        return Err(Error::config("fd_delta", "finite-difference step must be > 0"));
    }
    let base = cfg.params.get(theta);
    let branch = |value: T, seed: u64| -> Result<DoseGrid<T>> {
        let run = RunConfig { params: cfg.params.with(theta, value), sens: ParamSet::empty(), seed, ..cfg.clone() };
        Ok(run_ensemble(&run)?.grid)
    };
    let plus = branch(base + delta_theta, cfg.seed)?;
    let minus = branch(base - delta_theta, if common_noise { cfg.seed } else { cfg.seed.wrapping_add(1) })?;
    let two_d = T::lit(2.0) * delta_theta;
    let (mp, mm) = (plus.mean_dose(), minus.mean_dose());
    let (sp, sm) = (plus.dose_se(), minus.dose_se());
    Ok(FdEstimate {
        value: mp.iter().zip(&mm).map(|(a, b)| (*a - *b) / two_d).collect(),
        se: sp.iter().zip(&sm).map(|(a, b)| (*a * *a + *b * *b).sqrt() / two_d).collect(),
    })
}
