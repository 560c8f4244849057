//! Direction manifolds S¹ and S²: tangent frames, exponential maps and
//! noise projection.
//!
//! Directions are stored as 3-vectors; on S¹ the third component is zero.

use crate::error::{Error, Result};
use crate::vector::Vec3;
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dim {
    Two,
    Three,
}

impl Dim {
    pub fn from_usize(d: usize) -> Result<Dim> {
        match d {
            2 => Ok(Dim::Two),
            3 => Ok(Dim::Three),
            _ => Err(Error::config("dim", format!("must be 2 or 3, got {d}"))),
        }
    }

    pub fn as_usize(self) -> usize {
        match self {
            Dim::Two => 2,
            Dim::Three => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction<T> {
    v: Vec3<T>,
    dim: Dim,
}

impl<T: Real> Direction<T> {
    /// Checked constructor: the vector must have unit norm.
    pub fn new(v: Vec3<T>, dim: Dim) -> Result<Self> {
        if dim == Dim::Two && v.z != T::zero() {
            return Err(Error::Contract("planar direction with nonzero z component".into()));
        }
        let n = v.norm();
        if !((n - T::one()).abs() <= T::unit_tol()) {
            return Err(Error::Contract(format!("direction norm {n} is not 1")));
        }
        Ok(Direction { v, dim })
    }

    pub fn normalized(v: Vec3<T>, dim: Dim) -> Result<Self> {
        let n = v.norm();
        if !(n > T::zero() && n.is_finite()) {
            return Err(Error::Contract("cannot normalise a zero or non-finite vector".into()));
        }
        let mut v = v.scale(T::one() / n);
        if dim == Dim::Two {
            v.z = T::zero();
        }
        Ok(Direction { v, dim })
    }

    /// Unchecked constructor. Only the unnormalised Euler scheme produces
    /// off-sphere directions through this path.
    pub fn raw(v: Vec3<T>, dim: Dim) -> Self {
        Direction { v, dim }
    }

    pub fn planar_angle(theta: T) -> Self {
        Direction { v: Vec3::planar(theta.cos(), theta.sin()), dim: Dim::Two }
    }

    pub fn x_axis(dim: Dim) -> Self {
        Direction { v: Vec3::new(T::one(), T::zero(), T::zero()), dim }
    }

    #[inline]
    pub fn vec(&self) -> Vec3<T> {
        self.v
    }

    #[inline]
    pub fn dim(&self) -> Dim {
        self.dim
    }

    pub fn norm(&self) -> T {
        self.v.norm()
    }

    /// Polar angle on S¹, in (−π, π].
    pub fn angle(&self) -> T {
        self.v.y.atan2(self.v.x)
    }
}

/// Oriented orthonormal tangent frame (u1, u2) at Ω with u1 × u2 = Ω.
///
/// `connection` is the coefficient k of the frame connection,
/// (D_w u1)·u2 = k (w·u2). For the spherical-coordinate frame k = cot θ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentFrame<T> {
    pub u1: Vec3<T>,
    pub u2: Vec3<T>,
    pub connection: T,
}

const POLE_GAP: f64 = 1e-9;

/// Spherical-coordinate frame u1 = e_θ, u2 = e_φ; near the poles the
/// reference axis switches from −e_z to ±e_x, keeping the orientation.
pub fn frame_at<T: Real>(omega: &Direction<T>) -> Result<TangentFrame<T>> {
    if omega.dim == Dim::Two {
        return Err(Error::Contract("tangent frames are only used on S²".into()));
    }
    let w = omega.v;
    let reference = if w.z.abs() > T::one() - T::lit(POLE_GAP) {
        let s = if w.z > T::zero() { T::one() } else { -T::one() };
        Vec3::new(s, T::zero(), T::zero())
    } else {
        Vec3::new(T::zero(), T::zero(), -T::one())
    };
    let pe = project_tangent(omega, reference);
    let len = pe.norm();
    let u1 = pe.scale(T::one() / len);
    let u2 = w.cross(u1);
    Ok(TangentFrame { u1, u2, connection: -w.dot(reference) / len })
}

fn sinc_cosc<T: Real>(theta: T) -> (T, T) {
    // returns (sin θ / θ, (1 − cos θ)/θ²)
    if theta < T::lit(1e-4) {
        let t2 = theta * theta;
        (T::one() - t2 / T::lit(6.0), T::lit(0.5) - t2 / T::lit(24.0))
    } else {
        (theta.sin() / theta, (T::one() - theta.cos()) / (theta * theta))
    }
}

/// Riemannian exponential Exp_Ω(v) = cos|v| Ω + sin|v| v/|v| for tangent v.
pub fn geodesic_exp<T: Real>(omega: &Direction<T>, v: Vec3<T>) -> Result<Direction<T>> {
    let w = omega.v;
    let tol = T::lit(1e-10) * (T::one() + v.norm());
    if !(w.dot(v).abs() <= tol) || (omega.dim == Dim::Two && v.z != T::zero()) {
        return Err(Error::Contract(format!("vector is not tangent at Ω (v·Ω = {})", w.dot(v))));
    }
    let theta = v.norm();
    let out = if theta < T::lit(1e-8) {
        let t2 = theta * theta;
        w.scale(T::one() - t2 * T::lit(0.5)) + v.scale(T::one() - t2 / T::lit(6.0))
    } else {
        w.scale(theta.cos()) + v.scale(theta.sin() / theta)
    };
    Ok(Direction { v: out, dim: omega.dim })
}

/// Rodrigues rotation of Ω by angle |ξ| about the axis ξ/|ξ|.
pub fn rotation_exp<T: Real>(omega: &Direction<T>, xi: Vec3<T>) -> Result<Direction<T>> {
    if omega.dim == Dim::Two {
        return Err(Error::Contract("rotation_exp acts on S²; use rotate_s1 on S¹".into()));
    }
    let w = omega.v;
    let (a, b) = sinc_cosc(xi.norm());
    let out = w + xi.cross(w).scale(a) + xi.cross(xi.cross(w)).scale(b);
    Ok(Direction { v: out, dim: Dim::Three })
}

/// Rotation of a planar direction by angle θ.
pub fn rotate_s1<T: Real>(omega: &Direction<T>, theta: T) -> Result<Direction<T>> {
    if omega.dim == Dim::Three {
        return Err(Error::Contract("rotate_s1 acts on S¹".into()));
    }
    let (s, c) = theta.sin_cos();
    let w = omega.v;
    Ok(Direction { v: Vec3::planar(c * w.x - s * w.y, s * w.x + c * w.y), dim: Dim::Two })
}

/// (I − ΩΩᵀ)η.
#[inline]
pub fn project_tangent<T: Real>(omega: &Direction<T>, eta: Vec3<T>) -> Vec3<T> {
    let w = omega.v;
    eta - w.scale(w.dot(eta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn d3(x: f64, y: f64, z: f64) -> Direction<f64> {
        Direction::normalized(Vec3::new(x, y, z), Dim::Three).unwrap()
    }

    fn close(a: Vec3<f64>, b: Vec3<f64>, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    fn check_frame(o: &Direction<f64>, f: &TangentFrame<f64>) {
        let w = o.vec();
        assert!(f.u1.dot(w).abs() < 1e-12);
        assert!(f.u2.dot(w).abs() < 1e-12);
        assert!(f.u1.dot(f.u2).abs() < 1e-12);
        assert!((f.u1.norm() - 1.0).abs() < 1e-12);
        assert!((f.u2.norm() - 1.0).abs() < 1e-12);
        assert!(close(f.u1.cross(f.u2), w, 1e-12));
    }

    #[test]
    fn frame_on_equator() {
        let o = d3(1.0, 0.0, 0.0);
        let f = frame_at(&o).unwrap();
        assert!(close(f.u1, Vec3::new(0.0, 0.0, -1.0), 1e-15));
        assert!(close(f.u2, Vec3::new(0.0, 1.0, 0.0), 1e-15));
        assert!(f.connection.abs() < 1e-15);
    }

    #[test]
    fn frame_matches_spherical_coordinates() {
        let (th, ph) = (0.7f64, -2.1f64);
        let o = d3(th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos());
        let f = frame_at(&o).unwrap();
        let u1 = Vec3::new(th.cos() * ph.cos(), th.cos() * ph.sin(), -th.sin());
        let u2 = Vec3::new(-ph.sin(), ph.cos(), 0.0);
        assert!(close(f.u1, u1, 1e-14));
        assert!(close(f.u2, u2, 1e-14));
        assert!((f.connection - 1.0 / th.tan()).abs() < 1e-13);
    }

    #[test]
    fn pole_fallback_is_oriented() {
        for o in [d3(0.0, 0.0, 1.0), d3(0.0, 0.0, -1.0), d3(1e-6, 2e-6, 1.0), d3(3e-5, -1e-5, -1.0)] {
            let f = frame_at(&o).unwrap();
            check_frame(&o, &f);
        }
    }

    #[test]
    fn frames_are_unsupported_on_circle() {
        assert!(frame_at(&Direction::<f64>::planar_angle(0.3)).is_err());
    }

    #[test]
    fn connection_coefficient_matches_frame_derivative() {
        // (D_w u1)·u2 = k (w·u2), checked by differentiating the frame along a curve
        let o = d3(0.3, -0.5, 0.6);
        let f = frame_at(&o).unwrap();
        for w in [f.u1, f.u2, f.u1.scale(0.3) + f.u2.scale(-1.2)] {
            let h = 1e-6;
            let fp = frame_at(&geodesic_exp(&o, w.scale(h)).unwrap()).unwrap();
            let fm = frame_at(&geodesic_exp(&o, w.scale(-h)).unwrap()).unwrap();
            let du1 = (fp.u1 - fm.u1).scale(0.5 / h);
            assert!((du1.dot(f.u2) - f.connection * w.dot(f.u2)).abs() < 1e-7);
        }
    }

    #[test]
    fn frame_is_continuous_away_from_poles() {
        let o = d3(0.2, 0.4, 0.85);
        let f = frame_at(&o).unwrap();
        let p = d3(0.2 + 1e-8, 0.4 - 1e-8, 0.85 + 1e-8);
        let g = frame_at(&p).unwrap();
        assert!(close(f.u1, g.u1, 1e-6) && close(f.u2, g.u2, 1e-6));
    }

    #[test]
    fn geodesic_exp_examples() {
        let o = d3(1.0, 0.0, 0.0);
        assert_eq!(geodesic_exp(&o, Vec3::zero()).unwrap().vec(), o.vec());
        let q = geodesic_exp(&o, Vec3::new(0.0, FRAC_PI_2, 0.0)).unwrap();
        assert!(close(q.vec(), Vec3::new(0.0, 1.0, 0.0), 1e-15));
        assert!(matches!(geodesic_exp(&o, Vec3::new(0.1, 0.0, 0.0)), Err(Error::Contract(_))));
    }

    #[test]
    fn rotation_exp_examples() {
        let o = d3(1.0, 0.0, 0.0);
        assert_eq!(rotation_exp(&o, Vec3::zero()).unwrap().vec(), o.vec());
        let same = rotation_exp(&o, o.vec().scale(0.8)).unwrap();
        assert!(close(same.vec(), o.vec(), 1e-15));
        let q = rotation_exp(&o, Vec3::new(0.0, 0.0, FRAC_PI_2)).unwrap();
        assert!(close(q.vec(), Vec3::new(0.0, 1.0, 0.0), 1e-15));
    }

    #[test]
    fn rotate_s1_examples() {
        let o = Direction::<f64>::planar_angle(0.0);
        assert_eq!(rotate_s1(&o, 0.0).unwrap().vec(), o.vec());
        let q = rotate_s1(&o, PI).unwrap();
        assert!(close(q.vec(), Vec3::planar(-1.0, 0.0), 1e-15));
        assert!(rotate_s1(&d3(1.0, 0.0, 0.0), 0.1).is_err());
    }

    #[test]
    fn projection_examples() {
        let o = d3(0.6, 0.0, 0.8);
        assert!(project_tangent(&o, o.vec()).norm() < 1e-15);
        let perp = Vec3::new(0.0, 3.0, 0.0);
        assert_eq!(project_tangent(&o, perp), perp);
    }

    #[test]
    fn direction_constructor_checks_norm() {
        assert!(Direction::new(Vec3::new(1.0, 1e-13, 0.0), Dim::Three).is_ok());
        assert!(Direction::new(Vec3::new(1.0, 1e-3, 0.0), Dim::Three).is_err());
        assert!(Direction::new(Vec3::new(1.0, 0.0, 0.0), Dim::Two).is_ok());
    }

    fn unit() -> impl Strategy<Value = Direction<f64>> {
        (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
            .prop_filter("nonzero", |(x, y, z)| x * x + y * y + z * z > 1e-3)
            .prop_map(|(x, y, z)| d3(x, y, z))
    }

    fn vec3(r: f64) -> impl Strategy<Value = Vec3<f64>> {
        (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    proptest! {
        #[test]
        fn exponential_maps_stay_on_sphere(o in unit(), eta in vec3(3.0)) {
            let v = project_tangent(&o, eta);
            let g = geodesic_exp(&o, v).unwrap();
            prop_assert!((g.norm() - 1.0).abs() <= 1e-12);
            let r = rotation_exp(&o, eta).unwrap();
            prop_assert!((r.norm() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn frames_are_oriented_everywhere(o in unit()) {
            let f = frame_at(&o).unwrap();
            let w = o.vec();
            prop_assert!(f.u1.dot(w).abs() < 1e-12 && f.u2.dot(w).abs() < 1e-12);
            prop_assert!(f.u1.dot(f.u2).abs() < 1e-12);
            prop_assert!(close(f.u1.cross(f.u2), w, 1e-12));
        }

        #[test]
        fn geodesic_and_rotation_maps_agree(o in unit(), eta in vec3(1.0)) {
            // rotating about Ω × v by |v| moves Ω along v
            let v = project_tangent(&o, eta);
            let g = geodesic_exp(&o, v).unwrap();
            let r = rotation_exp(&o, o.vec().cross(v)).unwrap();
            prop_assert!(close(g.vec(), r.vec(), 1e-10));
        }

        #[test]
        fn projection_is_idempotent(o in unit(), eta in vec3(5.0)) {
            let p = project_tangent(&o, eta);
            prop_assert!(close(project_tangent(&o, p), p, 1e-12));
        }

        #[test]
        fn circle_rotation_preserves_norm(a in -10.0f64..10.0, t in -10.0f64..10.0) {
            let r = rotate_s1(&Direction::planar_angle(a), t).unwrap();
            prop_assert!((r.norm() - 1.0).abs() <= 1e-12);
        }
    }
}
