//! Physical coefficients: Bragg–Kleeman stopping power, energy straggling,
//! angular diffusion, their energy and parameter derivatives, and the
//! range calibration helpers.
//!
//! Units: cm, MeV, rad. Track length plays the role of time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AngularModel {
    #[default]
    Constant,
    Moliere,
}

/// Model parameters differentiated by the sensitivity machinery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Param {
    Alpha,
    P,
    Kappa,
}

impl Param {
    pub const ALL: [Param; 3] = [Param::Alpha, Param::P, Param::Kappa];

    pub fn index(self) -> usize {
        match self {
            Param::Alpha => 0,
            Param::P => 1,
            Param::Kappa => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Param::Alpha => "alpha",
            Param::P => "p",
            Param::Kappa => "kappa",
        }
    }
}

impl std::str::FromStr for Param {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(Param::Alpha),
            "p" => Ok(Param::P),
            "kappa" => Ok(Param::Kappa),
            other => Err(Error::config("theta", format!("unknown parameter `{other}` (expected alpha, p or kappa)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams<T> {
    pub alpha: T,
    pub p: T,
    pub kappa: T,
    pub eps0: T,
    pub eps_bar: T,
    pub eps_c: T,
    pub e_min: T,
    pub delta: T,
    pub angular_model: AngularModel,
}

impl<T: Real> Default for ModelParams<T> {
    fn default() -> Self {
        ModelParams {
            alpha: T::lit(0.0022),
            p: T::lit(1.77),
            kappa: T::zero(),
            eps0: T::lit(0.005),
            eps_bar: T::lit(19.3),
            eps_c: T::lit(5.0),
            e_min: T::lit(4.0),
            delta: T::lit(0.5),
            angular_model: AngularModel::Constant,
        }
    }
}

impl<T: Real> ModelParams<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, what: &str, v: T| Err(Error::config(key, format!("{what}, got {v}")));
        if !(self.alpha > T::zero()) {
            return bad("alpha", "must be > 0", self.alpha);
        }
        if !(self.p >= T::one() && self.p <= T::lit(2.0)) {
            return bad("p", "must lie in [1, 2]", self.p);
        }
        if !(self.kappa >= T::zero()) {
            return bad("kappa", "must be >= 0", self.kappa);
        }
        if !(self.eps0 >= T::zero()) {
            return bad("eps0", "must be >= 0", self.eps0);
        }
        if !(self.eps_bar >= T::zero()) {
            return bad("eps_bar", "must be >= 0", self.eps_bar);
        }
        if !(self.eps_c > T::zero()) {
            return bad("eps_c", "must be > 0", self.eps_c);
        }
        if !(self.e_min > T::zero()) {
            return bad("e_min", "must be > 0", self.e_min);
        }
        if !(self.delta > T::zero()) {
            return bad("delta", "must be > 0", self.delta);
        }
        Ok(())
    }

    pub fn get(&self, theta: Param) -> T {
        match theta {
            Param::Alpha => self.alpha,
            Param::P => self.p,
            Param::Kappa => self.kappa,
        }
    }

    pub fn with(mut self, theta: Param, value: T) -> Self {
        match theta {
            Param::Alpha => self.alpha = value,
            Param::P => self.p = value,
            Param::Kappa => self.kappa = value,
        }
        self
    }
}

/// Coefficients and energy derivatives at one energy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoeffBundle<T> {
    pub s: T,
    pub sqrt_t: T,
    pub ds_de: T,
    pub dsqrt_t_de: T,
    /// Second energy derivative of √T, used by the sensitivity Milstein term.
    pub d2sqrt_t_de2: T,
    pub eps: T,
}

/// Parameter derivatives of the coefficients at one energy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamDerivs<T> {
    pub ds_dtheta: T,
    pub dsqrt_t_dtheta: T,
    /// Mixed derivative ∂_θ∂_E √T.
    pub d2sqrt_t_dtheta_de: T,
}

fn positive_energy<T: Real>(e: T, what: &'static str) -> Result<()> {
    if e > T::zero() && e.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(what, format!("energy must be positive and finite, got {e}")))
    }
}

/// S(E) = E^{1−p}/(pα).
pub fn stopping_power<T: Real>(e: T, params: &ModelParams<T>) -> Result<T> {
    positive_energy(e, "stopping_power")?;
    Ok(e.powf(T::one() - params.p) / (params.p * params.alpha))
}

/// √T(E) with T(E) = κ S(E) E.
pub fn straggling_sqrt<T: Real>(e: T, params: &ModelParams<T>) -> Result<T> {
    positive_energy(e, "straggling_sqrt")?;
    if params.kappa == T::zero() {
        return Ok(T::zero());
    }
    Ok((params.kappa / (params.p * params.alpha)).sqrt() * e.powf(T::one() - params.p * T::lit(0.5)))
}

/// Angular diffusion ε(E); constant ε₀ or Molière ε̄/(E²+ε_c²).
pub fn angular_eps<T: Real>(e: T, params: &ModelParams<T>) -> Result<T> {
    positive_energy(e, "angular_eps")?;
    Ok(match params.angular_model {
        AngularModel::Constant => params.eps0,
        AngularModel::Moliere => params.eps_bar / (e * e + params.eps_c * params.eps_c),
    })
}

fn check_above_cutoff<T: Real>(e: T, params: &ModelParams<T>, what: &'static str) -> Result<()> {
    positive_energy(e, what)?;
    if e < params.e_min {
        return Err(Error::domain(what, format!("energy {e} below e_min {}", params.e_min)));
    }
    Ok(())
}

pub fn coeff_bundle<T: Real>(e: T, params: &ModelParams<T>) -> Result<CoeffBundle<T>> {
    check_above_cutoff(e, params, "coeff_bundle")?;
    let one = T::one();
    let half = T::lit(0.5);
    let s = e.powf(one - params.p) / (params.p * params.alpha);
    let sqrt_t = straggling_sqrt(e, params)?;
    let a = one - params.p * half;
    Ok(CoeffBundle {
        s,
        sqrt_t,
        ds_de: (one - params.p) * s / e,
        dsqrt_t_de: a * sqrt_t / e,
        d2sqrt_t_de2: a * (a - one) * sqrt_t / (e * e),
        eps: angular_eps(e, params)?,
    })
}

pub fn param_derivs<T: Real>(e: T, params: &ModelParams<T>, theta: Param) -> Result<ParamDerivs<T>> {
    check_above_cutoff(e, params, "param_derivs")?;
    let b = coeff_bundle(e, params)?;
    let half = T::lit(0.5);
    Ok(match theta {
        Param::Alpha => ParamDerivs {
            ds_dtheta: -b.s / params.alpha,
            dsqrt_t_dtheta: -b.sqrt_t * half / params.alpha,
            d2sqrt_t_dtheta_de: -b.dsqrt_t_de * half / params.alpha,
        },
        Param::P => {
            let c = half / params.p + half * e.ln();
            ParamDerivs {
                ds_dtheta: -b.s / params.p - e.ln() * b.s,
                dsqrt_t_dtheta: -b.sqrt_t * c,
                d2sqrt_t_dtheta_de: -b.dsqrt_t_de * c - b.sqrt_t * half / e,
            }
        }
        Param::Kappa => {
            if params.kappa <= T::zero() {
                return Err(Error::domain("param_derivs", "derivative in kappa is undefined at kappa = 0"));
            }
            ParamDerivs {
                ds_dtheta: T::zero(),
                dsqrt_t_dtheta: b.sqrt_t * half / params.kappa,
                d2sqrt_t_dtheta_de: b.dsqrt_t_de * half / params.kappa,
            }
        }
    })
}

/// κ from a measured range variance: κ = (p+1)Var(R)/(pαE₀^{p+1}).
pub fn calibrate_kappa<T: Real>(var_r: T, params: &ModelParams<T>, e0: T) -> Result<T> {
    if !(var_r >= T::zero()) {
        return Err(Error::domain("calibrate_kappa", format!("range variance must be >= 0, got {var_r}")));
    }
    positive_energy(e0, "calibrate_kappa")?;
    Ok((params.p + T::one()) * var_r / (params.p * params.alpha * e0.powf(params.p + T::one())))
}

/// Range variance κpαE₀^{p+1}/(p+1) produced by the straggling model.
pub fn range_variance<T: Real>(params: &ModelParams<T>, e0: T) -> Result<T> {
    positive_energy(e0, "range_variance")?;
    Ok(params.kappa * params.p * params.alpha * e0.powf(params.p + T::one()) / (params.p + T::one()))
}

/// Deterministic stopping depth α(E₀^p − E_min^p).
pub fn csda_range<T: Real>(e0: T, params: &ModelParams<T>) -> Result<T> {
    positive_energy(e0, "csda_range")?;
    if e0 < params.e_min {
        return Err(Error::domain("csda_range", format!("e0 {e0} below e_min {}", params.e_min)));
    }
    Ok(params.alpha * (e0.powf(params.p) - params.e_min.powf(params.p)))
}
