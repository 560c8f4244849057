//! One-step transition kernels for (X, Y = ln E, Ω) and the killing rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{angular_eps, coeff_bundle, ModelParams};
use crate::sphere::{frame_at, geodesic_exp, project_tangent, rotate_s1, rotation_exp, Dim, Direction};
use crate::vector::Vec3;
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeId {
    EulerNaive,
    EulerRenorm,
    GeometricEuler,
    MilsteinRkmk,
}

impl SchemeId {
    pub const ALL: [SchemeId; 4] =
        [SchemeId::EulerNaive, SchemeId::EulerRenorm, SchemeId::GeometricEuler, SchemeId::MilsteinRkmk];

    pub fn name(self) -> &'static str {
        match self {
            SchemeId::EulerNaive => "euler_naive",
            SchemeId::EulerRenorm => "euler_renorm",
            SchemeId::GeometricEuler => "geometric_euler",
            SchemeId::MilsteinRkmk => "milstein_rkmk",
        }
    }

    /// Energy and sensitivity use the Milstein update only in the RKMK scheme.
    pub fn uses_milstein(self) -> bool {
        self == SchemeId::MilsteinRkmk
    }
}

impl std::str::FromStr for SchemeId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SchemeId::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config("scheme", format!("unknown scheme `{s}`")))
    }
}

/// Increments of the driving Brownian motions over one track-length step h.
///
/// `w1, w2` drive the angular frame noise and `area` is their Lévy area, all
/// in track-length units (variance h, h²/4 respectively). `ambient` is the
/// 3-component noise fed to the projected (Euler-type) angular schemes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BrownianIncrement<T> {
    pub h: T,
    pub xi_e: T,
    pub w1: T,
    pub w2: T,
    pub area: T,
    pub ambient: Vec3<T>,
}

/// Noise consumed by one angular step: `dw1, dw2 ~ N(0, dgamma)` on the
/// diffusion clock and their Lévy area `levy_a`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseDraw<T> {
    pub xi_e: T,
    pub dw1: T,
    pub dw2: T,
    pub levy_a: T,
    pub dgamma: T,
    pub ambient: Vec3<T>,
}

impl<T: Real> BrownianIncrement<T> {
    /// Time change of the angular components onto the clock increment `dgamma`.
    pub fn on_clock(&self, dgamma: T) -> NoiseDraw<T> {
        let s = if self.h > T::zero() { dgamma / self.h } else { T::zero() };
        let r = s.sqrt();
        NoiseDraw {
            xi_e: self.xi_e,
            dw1: r * self.w1,
            dw2: r * self.w2,
            levy_a: s * self.area,
            dgamma,
            ambient: self.ambient,
        }
    }
}

/// Switches used by negative controls; both default to on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StepOptions {
    pub milstein_correction: bool,
    pub frame_correction: bool,
}

impl Default for StepOptions {
    fn default() -> Self {
        StepOptions { milstein_correction: true, frame_correction: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParticleState<T> {
    pub x: Vec3<T>,
    pub omega: Direction<T>,
    pub y: T,
    pub alive: bool,
}

impl<T: Real> ParticleState<T> {
    pub fn new(x: Vec3<T>, omega: Direction<T>, e: T) -> Self {
        ParticleState { x, omega, y: e.ln(), alive: true }
    }

    #[inline]
    pub fn energy(&self) -> T {
        self.y.exp()
    }
}

/// Axis-aligned closed box; unused axes may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainBox<T> {
    pub lo: Vec3<T>,
    pub hi: Vec3<T>,
}

impl<T: Real> DomainBox<T> {
    pub fn new(lo: Vec3<T>, hi: Vec3<T>) -> Self {
        DomainBox { lo, hi }
    }

    pub fn unbounded() -> Self {
        let inf = T::infinity();
        DomainBox { lo: Vec3::new(-inf, -inf, -inf), hi: Vec3::new(inf, inf, inf) }
    }

    #[inline]
    pub fn contains(&self, x: Vec3<T>) -> bool {
        x.x >= self.lo.x
            && x.x <= self.hi.x
            && x.y >= self.lo.y
            && x.y <= self.hi.y
            && x.z >= self.lo.z
            && x.z <= self.hi.z
    }
}

#[inline]
fn energy_drift_and_noise<T: Real>(y: T, h: T, xi_e: T, params: &ModelParams<T>) -> Result<(T, T, T, T)> {
    let e = y.exp();
    let c = coeff_bundle(e, params)?;
    let inv_e = T::one() / e;
    let t = c.sqrt_t * c.sqrt_t;
    let next = y - h * c.s * inv_e - T::lit(0.5) * h * t * inv_e * inv_e + c.sqrt_t * inv_e * xi_e;
    Ok((next, c.sqrt_t, c.dsqrt_t_de, inv_e))
}

/// Euler–Maruyama step of the log-energy.
pub fn step_energy_euler<T: Real>(y: T, h: T, xi_e: T, params: &ModelParams<T>) -> Result<T> {
    Ok(energy_drift_and_noise(y, h, xi_e, params)?.0)
}

/// Milstein step of the log-energy.
pub fn step_energy_milstein<T: Real>(y: T, h: T, xi_e: T, params: &ModelParams<T>) -> Result<T> {
    let (next, sqrt_t, dsqrt_t, inv_e) = energy_drift_and_noise(y, h, xi_e, params)?;
    // ½ b b' with b(Y) = √T(e^Y) e^{−Y}
    let bb = sqrt_t * dsqrt_t * inv_e - sqrt_t * sqrt_t * inv_e * inv_e;
    Ok(next + T::lit(0.5) * bb * (xi_e * xi_e - h))
}

/// Angular update. `noise.dgamma` must be h(ε(e) + ε(e_next)) for the RKMK scheme.
#[allow(clippy::too_many_arguments)]
pub fn step_angle<T: Real>(
    omega: &Direction<T>,
    e: T,
    e_next: T,
    h: T,
    noise: &NoiseDraw<T>,
    scheme: SchemeId,
    params: &ModelParams<T>,
    opts: &StepOptions,
) -> Result<Direction<T>> {
    let _ = e_next;
    let dim = omega.dim();
    let w = omega.vec();
    let two = T::lit(2.0);
    match scheme {
        SchemeId::EulerNaive | SchemeId::EulerRenorm => {
            let eps = angular_eps(e, params)?;
            let kick = match dim {
                Dim::Two => Vec3::planar(noise.ambient.x, noise.ambient.y),
                Dim::Three => project_tangent(omega, noise.ambient),
            };
            let v = w.scale(T::one() - eps * h) + kick.scale((two * eps).sqrt());
            if scheme == SchemeId::EulerNaive {
                Ok(Direction::raw(v, dim))
            } else {
                Direction::normalized(v, dim)
            }
        }
        SchemeId::GeometricEuler => {
            let amp = (two * angular_eps(e, params)?).sqrt();
            match dim {
                Dim::Two => {
                    let tangent = Vec3::planar(-w.y, w.x);
                    rotate_s1(omega, amp * noise.ambient.dot(tangent))
                }
                Dim::Three => geodesic_exp(omega, project_tangent(omega, noise.ambient).scale(amp)),
            }
        }
        SchemeId::MilsteinRkmk => match dim {
            Dim::Two => rotate_s1(omega, noise.dw1),
            Dim::Three => {
                let f = frame_at(omega)?;
                let (a1, a2, a) = (noise.dw1, noise.dw2, noise.levy_a);
                let mut xi = f.u1.scale(a1) + f.u2.scale(a2) - w.scale(a);
                if opts.frame_correction {
                    // second-order term from the rotation of the frame along the path
                    let half = T::lit(0.5);
                    let d = (f.u1.scale(half * (a1 * a1 - noise.dgamma)) + f.u2.scale(half * a1 * a2 + a))
                        .scale(-f.connection);
                    xi += w.cross(d);
                }
                rotation_exp(omega, xi)
            }
        },
    }
}

#[inline]
pub fn step_position<T: Real>(x: Vec3<T>, omega: &Direction<T>, h: T) -> Vec3<T> {
    x + omega.vec().scale(h)
}

pub fn apply_killing<T: Real>(state: ParticleState<T>, domain: &DomainBox<T>, params: &ModelParams<T>) -> ParticleState<T> {
    if !state.alive {
        return state;
    }
    let mut s = state;
    if s.energy() <= params.e_min || !domain.contains(s.x) {
        s.alive = false;
    }
    s
}

/// Clock increment h(ε(E_n) + ε(E_{n+1})).
#[inline]
pub fn clock_increment<T: Real>(e: T, e_next: T, h: T, params: &ModelParams<T>) -> Result<T> {
    Ok(h * (angular_eps(e, params)? + angular_eps(e_next, params)?))
}

/// Position with the pre-step direction, then energy, then angle on the
/// clock built from both energies; killing last.
#[allow(clippy::too_many_arguments)]
pub fn full_step<T: Real>(
    state: ParticleState<T>,
    inc: &BrownianIncrement<T>,
    h: T,
    scheme: SchemeId,
    params: &ModelParams<T>,
    domain: &DomainBox<T>,
    opts: &StepOptions,
) -> Result<ParticleState<T>> {
    if !state.alive {
        return Ok(state);
    }
    let e = state.energy();
    let x = step_position(state.x, &state.omega, h);
    let y = if scheme.uses_milstein() && opts.milstein_correction {
        step_energy_milstein(state.y, h, inc.xi_e, params)?
    } else {
        step_energy_euler(state.y, h, inc.xi_e, params)?
    };
    let e_next = y.exp();
    let noise = inc.on_clock(clock_increment(e, e_next, h, params)?);
    let omega = step_angle(&state.omega, e, e_next, h, &noise, scheme, params, opts)?;
    Ok(apply_killing(ParticleState { x, omega, y, alive: true }, domain, params))
}
