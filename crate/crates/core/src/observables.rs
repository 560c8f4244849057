//! Dose grids, the mollified survival indicator, per-step deposition of dose
//! and dose-sensitivity weights, and depth-profile measures.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrators::ParticleState;
use crate::model::{coeff_bundle, param_derivs, stopping_power, ModelParams, Param};
use crate::sensitivity::{det_stopping_time_sens, ParamSet, SensitivityState};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec<T> {
    pub nx: usize,
    pub ny: usize,
    pub x_min: T,
    pub x_max: T,
    pub y_min: T,
    pub y_max: T,
}

impl<T: Real> GridSpec<T> {
    pub fn new(nx: usize, ny: usize, extent: [T; 4]) -> Result<Self> {
        let g = GridSpec { nx, ny, x_min: extent[0], x_max: extent[1], y_min: extent[2], y_max: extent[3] };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 {
            return Err(Error::config("nx", "must be >= 1"));
        }
        if self.ny == 0 {
            return Err(Error::config("ny", "must be >= 1"));
        }
        if !(self.x_max > self.x_min && self.y_max > self.y_min) {
            return Err(Error::config("extent", "expected [x_min, x_max, y_min, y_max] with x_max > x_min and y_max > y_min"));
        }
        Ok(())
    }

    #[inline]
    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn dx(&self) -> T {
        (self.x_max - self.x_min) / T::from_count(self.nx)
    }

    #[inline]
    pub fn dy(&self) -> T {
        (self.y_max - self.y_min) / T::from_count(self.ny)
    }

    #[inline]
    pub fn cell_area(&self) -> T {
        self.dx() * self.dy()
    }

    /// Row-major index over x, then y.
    #[inline]
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        ix * self.ny + iy
    }

    #[inline]
    pub fn locate(&self, x: T, y: T) -> Option<(usize, usize)> {
        if !(x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max) {
            return None;
        }
        let ix = ((x - self.x_min) / self.dx()).floor().to_usize()?.min(self.nx - 1);
        let iy = ((y - self.y_min) / self.dy()).floor().to_usize()?.min(self.ny - 1);
        Some((ix, iy))
    }

    pub fn x_center(&self, ix: usize) -> T {
        self.x_min + (T::from_count(ix) + T::lit(0.5)) * self.dx()
    }

    pub fn y_center(&self, iy: usize) -> T {
        self.y_min + (T::from_count(iy) + T::lit(0.5)) * self.dy()
    }
}

/// Spatial kernel φ used to spread a deposit over cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    /// Cell indicator divided by the cell area.
    #[default]
    Nearest,
    /// Isotropic Gaussian with bandwidth one cell width, truncated at 3 bandwidths.
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MollifierSpec<T> {
    pub delta: T,
    pub e_min: T,
}

impl<T: Real> MollifierSpec<T> {
    pub fn new(delta: T, e_min: T) -> Result<Self> {
        if !(delta > T::zero()) {
            return Err(Error::config("delta", format!("must be > 0, got {delta}")));
        }
        Ok(MollifierSpec { delta, e_min })
    }

    /// Energy at which mollified paths are finally removed; the indicator is
    /// below 1e-5 there.
    pub fn dynamics_floor(&self) -> T {
        (self.e_min - T::lit(6.0) * self.delta).max(T::lit(0.1) * self.e_min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DepositMode<T> {
    /// Dose weight S(E) until the killing time. Sensitivity weights, when
    /// requested, are the integrand of the straggling-free estimator.
    HardTau,
    Mollified(MollifierSpec<T>),
}

/// I(E) = ½(1 + tanh((E − E_min)/δ)).
#[inline]
pub fn mollified_indicator<T: Real>(e: T, spec: &MollifierSpec<T>) -> T {
    T::lit(0.5) * (T::one() + ((e - spec.e_min) / spec.delta).tanh())
}

/// ∂_E I = 1/(2δ cosh²((E − E_min)/δ)).
#[inline]
pub fn mollified_indicator_de<T: Real>(e: T, spec: &MollifierSpec<T>) -> T {
    let c = ((e - spec.e_min) / spec.delta).cosh();
    T::one() / (T::lit(2.0) * spec.delta * c * c)
}

/// Per-path contributions, flushed into a grid once the path ends so that the
/// grid can keep per-cell second moments.
#[derive(Debug, Clone)]
pub struct PathTally<T> {
    spec: GridSpec<T>,
    values: Vec<[T; 4]>,
    touched: Vec<usize>,
    total: T,
}

impl<T: Real> PathTally<T> {
    pub fn new(spec: GridSpec<T>) -> Self {
        PathTally { spec, values: vec![[T::zero(); 4]; spec.n_cells()], touched: Vec::new(), total: T::zero() }
    }

    /// Total deposited energy of the current path (kernel-independent).
    pub fn total(&self) -> T {
        self.total
    }

    #[inline]
    fn add_cell(&mut self, cell: usize, w: &[T; 4]) {
        let v = &mut self.values[cell];
        if v.iter().all(|x| *x == T::zero()) {
            self.touched.push(cell);
        }
        for k in 0..4 {
            v[k] += w[k];
        }
    }

    /// Spreads weights w (dose, sens α, sens p, sens κ) located at (x, y).
    /// Returns the number of cells receiving a contribution.
    pub fn deposit(&mut self, x: T, y: T, w: [T; 4], kernel: Kernel) -> usize {
        let g = self.spec;
        match kernel {
            Kernel::Nearest => match g.locate(x, y) {
                Some((ix, iy)) => {
                    let inv = T::one() / g.cell_area();
                    self.add_cell(g.index(ix, iy), &w.map(|v| v * inv));
                    1
                }
                None => 0,
            },
            Kernel::Gaussian => {
                // truncated at 3 bandwidths and normalised over the lattice
                // (including virtual cells outside the grid) so that interior
                // deposits conserve the weight exactly
                let b = g.dx();
                let reach = T::lit(3.0) * b;
                let two_b2 = T::lit(2.0) * b * b;
                let span = |c: T, min: T, d: T| {
                    let lo = ((c - reach - min) / d - T::lit(0.5)).floor().to_i64().unwrap_or(0);
                    let hi = ((c + reach - min) / d - T::lit(0.5)).ceil().to_i64().unwrap_or(0);
                    (lo, hi)
                };
                let (ix0, ix1) = span(x, g.x_min, g.dx());
                let (iy0, iy1) = span(y, g.y_min, g.dy());
                let centre = |i: i64, min: T, d: T| min + (T::from_i64(i).unwrap() + T::lit(0.5)) * d;
                let mut mass = T::zero();
                let mut cells: Vec<(i64, i64, T)> = Vec::new();
                for ix in ix0..=ix1 {
                    for iy in iy0..=iy1 {
                        let (ddx, ddy) = (centre(ix, g.x_min, g.dx()) - x, centre(iy, g.y_min, g.dy()) - y);
                        let r2 = ddx * ddx + ddy * ddy;
                        if r2 <= reach * reach {
                            let k = (-r2 / two_b2).exp();
                            mass += k;
                            cells.push((ix, iy, k));
                        }
                    }
                }
                if mass <= T::zero() {
                    return 0;
                }
                let scale = T::one() / (mass * g.cell_area());
                let mut n = 0;
                for (ix, iy, k) in cells {
                    if ix >= 0 && iy >= 0 && (ix as usize) < g.nx && (iy as usize) < g.ny {
                        self.add_cell(g.index(ix as usize, iy as usize), &w.map(|v| v * k * scale));
                        n += 1;
                    }
                }
                n
            }
        }
    }

    pub fn flush_into(&mut self, grid: &mut DoseGrid<T>) {
        for &c in &self.touched {
            let v = self.values[c];
            grid.dose[c] += v[0];
            grid.dose_sq[c] += v[0] * v[0];
            for k in 0..3 {
                grid.sens[k][c] += v[k + 1];
                grid.sens_sq[k][c] += v[k + 1] * v[k + 1];
            }
            self.values[c] = [T::zero(); 4];
        }
        self.touched.clear();
        grid.total_sum += self.total;
        grid.total_sq += self.total * self.total;
        grid.n_paths += 1;
        self.total = T::zero();
    }
}

/// Accumulated per-cell sums over paths; means and standard errors are
/// derived on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct DoseGrid<T> {
    pub spec: GridSpec<T>,
    pub n_paths: u64,
    pub dose: Vec<T>,
    pub dose_sq: Vec<T>,
    pub sens: [Vec<T>; 3],
    pub sens_sq: [Vec<T>; 3],
    pub total_sum: T,
    pub total_sq: T,
}

impl<T: Real> DoseGrid<T> {
    pub fn new(spec: GridSpec<T>) -> Self {
        let z = vec![T::zero(); spec.n_cells()];
        DoseGrid {
            spec,
            n_paths: 0,
            dose: z.clone(),
            dose_sq: z.clone(),
            sens: [z.clone(), z.clone(), z.clone()],
            sens_sq: [z.clone(), z.clone(), z],
            total_sum: T::zero(),
            total_sq: T::zero(),
        }
    }

    pub fn merge(&mut self, other: &DoseGrid<T>) -> Result<()> {
        if self.spec != other.spec {
            return Err(Error::Contract("cannot merge grids with different shapes".into()));
        }
        let add = |a: &mut Vec<T>, b: &Vec<T>| a.iter_mut().zip(b).for_each(|(x, y)| *x += *y);
        add(&mut self.dose, &other.dose);
        add(&mut self.dose_sq, &other.dose_sq);
        for k in 0..3 {
            add(&mut self.sens[k], &other.sens[k]);
            add(&mut self.sens_sq[k], &other.sens_sq[k]);
        }
        self.total_sum += other.total_sum;
        self.total_sq += other.total_sq;
        self.n_paths += other.n_paths;
        Ok(())
    }

    fn n(&self) -> T {
        T::from_u64(self.n_paths.max(1)).unwrap()
    }

    fn mean_of(&self, v: &[T]) -> Vec<T> {
        let n = self.n();
        v.iter().map(|x| *x / n).collect()
    }

    fn se_of(&self, sum: &[T], sq: &[T]) -> Vec<T> {
        let n = self.n();
        if self.n_paths < 2 {
            return vec![T::zero(); sum.len()];
        }
        sum.iter()
            .zip(sq)
            .map(|(s, q)| {
                let m = *s / n;
                let var = ((*q / n - m * m) * n / (n - T::one())).max(T::zero());
                (var / n).sqrt()
            })
            .collect()
    }

    pub fn mean_dose(&self) -> Vec<T> {
        self.mean_of(&self.dose)
    }

    pub fn dose_se(&self) -> Vec<T> {
        self.se_of(&self.dose, &self.dose_sq)
    }

    pub fn mean_sens(&self, theta: Param) -> Vec<T> {
        self.mean_of(&self.sens[theta.index()])
    }

    pub fn sens_se(&self, theta: Param) -> Vec<T> {
        self.se_of(&self.sens[theta.index()], &self.sens_sq[theta.index()])
    }

    /// Mean and standard error of the per-path total deposited energy.
    pub fn total_deposit(&self) -> (T, T) {
        let n = self.n();
        let m = self.total_sum / n;
        if self.n_paths < 2 {
            return (m, T::zero());
        }
        let var = ((self.total_sq / n - m * m) * n / (n - T::one())).max(T::zero());
        (m, (var / n).sqrt())
    }
}

/// Deposits one rectangle-rule step for an alive state. Sensitivity weights
/// are produced for the parameters in `which`. Dead states contribute nothing.
#[allow(clippy::too_many_arguments)]
pub fn deposit_step<T: Real>(
    tally: &mut PathTally<T>,
    state: &ParticleState<T>,
    j: &SensitivityState<T>,
    h: T,
    params: &ModelParams<T>,
    mode: &DepositMode<T>,
    kernel: Kernel,
    which: ParamSet,
) -> Result<usize> {
    if !state.alive {
        return Ok(0);
    }
    let w = step_weights(state, j, h, params, mode, which)?;
    tally.total += w[0];
    Ok(tally.deposit(state.x.x, state.x.y, w, kernel))
}

/// Removes the part of the last hard-τ step's sensitivity weight that lies
/// beyond the linearly interpolated crossing of E_min and returns the kept
/// fraction of the step. The dose is untouched.
#[allow(clippy::too_many_arguments)]
pub fn trim_last_step<T: Real>(
    tally: &mut PathTally<T>,
    last: &ParticleState<T>,
    j: &SensitivityState<T>,
    e_after: T,
    h: T,
    params: &ModelParams<T>,
    kernel: Kernel,
    which: ParamSet,
) -> Result<T> {
    let e = last.energy();
    if !(e > e_after) {
        return Ok(T::one());
    }
    let frac = ((e - params.e_min) / (e - e_after)).max(T::zero()).min(T::one());
    let mut w = step_weights(last, j, (frac - T::one()) * h, params, &DepositMode::HardTau, which)?;
    w[0] = T::zero();
    tally.deposit(last.x.x, last.x.y, w, kernel);
    Ok(frac)
}

fn step_weights<T: Real>(
    state: &ParticleState<T>,
    j: &SensitivityState<T>,
    h: T,
    params: &ModelParams<T>,
    mode: &DepositMode<T>,
    which: ParamSet,
) -> Result<[T; 4]> {
    let e = state.energy();
    let c = coeff_bundle(e, params)?;
    let mut w = [T::zero(); 4];
    match mode {
        DepositMode::HardTau => {
            w[0] = c.s;
            for theta in which.iter() {
                let d = param_derivs(e, params, theta)?;
                w[theta.index() + 1] = d.ds_dtheta + c.ds_de * j.get(theta);
            }
        }
        DepositMode::Mollified(spec) => {
            let ind = mollified_indicator(e, spec);
            let dind = mollified_indicator_de(e, spec);
            w[0] = c.s * ind;
            for theta in which.iter() {
                let d = param_derivs(e, params, theta)?;
                let jt = j.get(theta);
                w[theta.index() + 1] = (d.ds_dtheta + c.ds_de * jt) * ind + c.s * dind * jt;
            }
        }
    }
    Ok(w.map(|v| v * h))
}

/// Boundary term of the straggling-free sensitivity estimator, deposited at
/// `state`'s position with weight S(E_min)·dT/dθ.
pub fn deposit_boundary<T: Real>(
    tally: &mut PathTally<T>,
    state: &ParticleState<T>,
    e0: T,
    params: &ModelParams<T>,
    kernel: Kernel,
    which: ParamSet,
) -> Result<usize> {
    let s_min = stopping_power(params.e_min, params)?;
    let (da, dp) = det_stopping_time_sens(params, e0)?;
    let mut w = [T::zero(); 4];
    for theta in which.iter() {
        w[theta.index() + 1] = s_min
            * match theta {
                Param::Alpha => da,
                Param::P => dp,
                Param::Kappa => return Err(Error::Contract("kappa has no straggling-free boundary term".into())),
            };
    }
    Ok(tally.deposit(state.x.x, state.x.y, w, kernel))
}

/// Central difference (f(θ+Δ) − f(θ−Δ))/(2Δ) applied elementwise.
pub fn central_difference<T: Real, F>(mut f: F, theta: T, delta: T) -> Result<Vec<T>>
where
    F: FnMut(T) -> Result<Vec<T>>,
{
    if !(delta > T::zero()) {
        return Err(Error::config("fd_delta", "finite-difference step must be > 0"));
    }
    let plus = f(theta + delta)?;
    let minus = f(theta - delta)?;
    let inv = T::one() / (T::lit(2.0) * delta);
    Ok(plus.iter().zip(&minus).map(|(a, b)| (*a - *b) * inv).collect())
}

/// Depth profile: Σ_y field(x, y)·dy for each x column.
pub fn depth_profile<T: Real>(spec: &GridSpec<T>, field: &[T]) -> Vec<(T, T)> {
    (0..spec.nx)
        .map(|ix| {
            let s: T = (0..spec.ny).map(|iy| field[spec.index(ix, iy)]).sum();
            (spec.x_center(ix), s * spec.dy())
        })
        .collect()
}

/// (depth, value) at the profile maximum.
pub fn peak<T: Real>(profile: &[(T, T)]) -> (T, T) {
    profile.iter().copied().fold((T::zero(), T::neg_infinity()), |best, p| if p.1 > best.1 { p } else { best })
}

/// Full width at half maximum with linear interpolation of the crossings; a
/// side without a crossing extends to the end of the profile.
pub fn fwhm<T: Real>(profile: &[(T, T)]) -> T {
    if profile.is_empty() {
        return T::zero();
    }
    let (imax, _) = profile
        .iter()
        .enumerate()
        .fold((0, T::neg_infinity()), |b, (i, p)| if p.1 > b.1 { (i, p.1) } else { b });
    let half = profile[imax].1 * T::lit(0.5);
    let cross = |a: (T, T), b: (T, T)| a.0 + (half - a.1) * (b.0 - a.0) / (b.1 - a.1);
    let mut left = profile[0].0;
    for i in (0..imax).rev() {
        if profile[i].1 < half {
            left = cross(profile[i], profile[i + 1]);
            break;
        }
    }
    let mut right = profile[profile.len() - 1].0;
    for i in imax + 1..profile.len() {
        if profile[i].1 < half {
            right = cross(profile[i - 1], profile[i]);
            break;
        }
    }
    right - left
}

/// Lateral variance of a field in column ix, about its own centroid.
pub fn transverse_variance<T: Real>(spec: &GridSpec<T>, field: &[T], ix: usize) -> T {
    let (mut m0, mut m1, mut m2) = (T::zero(), T::zero(), T::zero());
    for iy in 0..spec.ny {
        let w = field[spec.index(ix, iy)];
        let y = spec.y_center(iy);
        m0 += w;
        m1 += w * y;
        m2 += w * y * y;
    }
    if m0 <= T::zero() {
        return T::zero();
    }
    let mean = m1 / m0;
    m2 / m0 - mean * mean
}
