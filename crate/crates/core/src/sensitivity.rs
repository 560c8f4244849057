//! Forward pathwise sensitivities J^θ = ∂_θ E_t driven by the same noise as
//! the energy, and the closed forms of the straggling-free model.

use crate::error::{Error, Result};
use crate::model::{coeff_bundle, param_derivs, ModelParams, Param};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SensitivityState<T> {
    pub j_alpha: T,
    pub j_p: T,
    pub j_kappa: T,
}

impl<T: Real> SensitivityState<T> {
    pub fn zero() -> Self {
        SensitivityState { j_alpha: T::zero(), j_p: T::zero(), j_kappa: T::zero() }
    }

    pub fn get(&self, theta: Param) -> T {
        match theta {
            Param::Alpha => self.j_alpha,
            Param::P => self.j_p,
            Param::Kappa => self.j_kappa,
        }
    }

    pub fn set(&mut self, theta: Param, v: T) {
        match theta {
            Param::Alpha => self.j_alpha = v,
            Param::P => self.j_p = v,
            Param::Kappa => self.j_kappa = v,
        }
    }
}

/// Set of parameters whose sensitivities are propagated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ParamSet {
    bits: u8,
}

impl ParamSet {
    pub fn empty() -> Self {
        ParamSet { bits: 0 }
    }

    pub fn all() -> Self {
        ParamSet { bits: 0b111 }
    }

    pub fn of(params: &[Param]) -> Self {
        let mut s = ParamSet::empty();
        for &p in params {
            s.bits |= 1 << p.index();
        }
        s
    }

    pub fn contains(self, p: Param) -> bool {
        self.bits & (1 << p.index()) != 0
    }

    pub fn is_empty(self) -> bool {
        self.bits == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Param> {
        Param::ALL.into_iter().filter(move |p| self.contains(*p))
    }

    pub fn validate<T: Real>(self, params: &ModelParams<T>) -> Result<()> {
        if self.contains(Param::Kappa) && params.kappa <= T::zero() {
            return Err(Error::config("sens", "sensitivity in kappa requires kappa > 0"));
        }
        Ok(())
    }
}

fn step_sens<T: Real>(
    j: &SensitivityState<T>,
    e: T,
    h: T,
    xi_e: T,
    params: &ModelParams<T>,
    which: ParamSet,
    milstein: bool,
) -> Result<SensitivityState<T>> {
    let c = coeff_bundle(e, params)?;
    let mut out = *j;
    let half = T::lit(0.5);
    for theta in which.iter() {
        let d = param_derivs(e, params, theta)?;
        let jt = j.get(theta);
        let drift = d.ds_dtheta + c.ds_de * jt;
        let diff = d.dsqrt_t_dtheta + c.dsqrt_t_de * jt;
        let mut next = jt - drift * h + diff * xi_e;
        if milstein {
            // ½ ∂_E[√T · (∂_θ√T + ∂_E√T · J)] with J held fixed
            let dg = d.d2sqrt_t_dtheta_de + c.d2sqrt_t_de2 * jt;
            next += half * (c.dsqrt_t_de * diff + c.sqrt_t * dg) * (xi_e * xi_e - h);
        }
        out.set(theta, next);
    }
    Ok(out)
}

/// Euler–Maruyama step of the sensitivity SDE; `e` is the pre-step energy.
pub fn step_sens_euler<T: Real>(
    j: &SensitivityState<T>,
    e: T,
    h: T,
    xi_e: T,
    params: &ModelParams<T>,
    which: ParamSet,
) -> Result<SensitivityState<T>> {
    step_sens(j, e, h, xi_e, params, which, false)
}

/// Milstein step of the sensitivity SDE, consistent with the log-energy Milstein step.
pub fn step_sens_milstein<T: Real>(
    j: &SensitivityState<T>,
    e: T,
    h: T,
    xi_e: T,
    params: &ModelParams<T>,
    which: ParamSet,
) -> Result<SensitivityState<T>> {
    step_sens(j, e, h, xi_e, params, which, true)
}

fn critical_time<T: Real>(params: &ModelParams<T>, e0: T) -> T {
    params.alpha * e0.powf(params.p)
}

/// E(t) = (E₀^p − t/α)^{1/p} for κ = 0.
pub fn det_energy<T: Real>(t: T, params: &ModelParams<T>, e0: T) -> Result<T> {
    if !(t >= T::zero()) || t >= critical_time(params, e0) {
        return Err(Error::domain("det_energy", format!("track length {t} outside [0, αE₀^p)")));
    }
    Ok((e0.powf(params.p) - t / params.alpha).powf(T::one() / params.p))
}

/// Stopping-time sensitivities (dT/dα, dT/dp) of T = α(E₀^p − E_min^p).
pub fn det_stopping_time_sens<T: Real>(params: &ModelParams<T>, e0: T) -> Result<(T, T)> {
    if !(e0 > T::zero()) || e0 < params.e_min {
        return Err(Error::domain("det_stopping_time_sens", format!("e0 {e0} below e_min {}", params.e_min)));
    }
    let (a, b) = (e0.powf(params.p), params.e_min.powf(params.p));
    Ok((a - b, params.alpha * (e0.ln() * a - params.e_min.ln() * b)))
}

/// ∂_θ E(t) for θ ∈ {α, p} in the straggling-free model.
pub fn det_energy_sens<T: Real>(t: T, params: &ModelParams<T>, e0: T, theta: Param) -> Result<T> {
    if !(t >= T::zero()) || t >= critical_time(params, e0) {
        return Err(Error::domain("det_energy_sens", format!("track length {t} outside [0, αE₀^p)")));
    }
    let p = params.p;
    let a = params.alpha;
    let u = e0.powf(p) - t / a;
    let inv_p = T::one() / p;
    match theta {
        Param::Alpha => Ok(t / (a * a * p) * u.powf(inv_p - T::one())),
        Param::P => Ok(e0.powf(p) * e0.ln() * inv_p * u.powf(inv_p - T::one()) - inv_p * inv_p * u.ln() * u.powf(inv_p)),
        Param::Kappa => Err(Error::domain("det_energy_sens", "no kappa sensitivity in the straggling-free model")),
    }
}

/// ∂_θ E written through the current energy instead of the track length;
/// equal to [`det_energy_sens`] on the exact path.
pub fn det_energy_sens_at<T: Real>(e: T, params: &ModelParams<T>, e0: T, theta: Param) -> Result<T> {
    if !(e > T::zero()) || e > e0 {
        return Err(Error::domain("det_energy_sens_at", format!("energy {e} outside (0, {e0}]")));
    }
    let p = params.p;
    let (a0, a) = (e0.powf(p), e.powf(p));
    let w = e.powf(T::one() - p) / p;
    match theta {
        Param::Alpha => Ok(w * (a0 - a) / params.alpha),
        Param::P => Ok(w * (a0 * e0.ln() - a * e.ln())),
        Param::Kappa => Err(Error::domain("det_energy_sens_at", "no kappa sensitivity in the straggling-free model")),
    }
}
