//! Per-path random streams and sampling of Brownian increments, including
//! the Lévy area of the two angular components.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::integrators::{BrownianIncrement, NoiseDraw, SchemeId};
use crate::sphere::Dim;
use crate::vector::Vec3;
use crate::Real;

pub type PathRng = ChaCha8Rng;

/// Stream `path_index` of the generator keyed by `seed`; independent of how
/// paths are distributed over workers.
pub fn path_rng(seed: u64, path_index: u64) -> PathRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_index);
    rng
}

#[inline]
pub fn normal<T: Real, R: Rng + ?Sized>(rng: &mut R) -> T {
    let z: f64 = StandardNormal.sample(rng);
    T::lit(z)
}

/// Which components of a Brownian increment a scheme consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseNeeds {
    pub ambient: usize,
    pub frame: usize,
    pub area: bool,
}

impl NoiseNeeds {
    pub fn for_scheme(scheme: SchemeId, dim: Dim) -> Self {
        match (scheme, dim) {
            (SchemeId::MilsteinRkmk, Dim::Two) => NoiseNeeds { ambient: 0, frame: 1, area: false },
            (SchemeId::MilsteinRkmk, Dim::Three) => NoiseNeeds { ambient: 0, frame: 2, area: true },
            (_, d) => NoiseNeeds { ambient: d.as_usize(), frame: 0, area: false },
        }
    }
}

pub const DEFAULT_LEVY_TERMS: usize = 10;

/// Lévy area ½∫(W¹dW² − W²dW¹) over [0, h] conditional on the increments
/// (w1, w2): truncated Fourier series with `terms` modes plus a Gaussian
/// stand-in for the discarded modes, matching the conditional variance
/// (h²/12)(1 + (w1² + w2²)/h).
pub fn levy_area<T: Real, R: Rng + ?Sized>(rng: &mut R, h: T, w1: T, w2: T, terms: usize) -> T {
    if h <= T::zero() {
        return T::zero();
    }
    let pi = T::PI();
    let c = (T::lit(2.0) / h).sqrt();
    let (b1, b2) = (c * w1, c * w2);
    let mut acc = T::zero();
    let mut head = T::zero();
    for k in 1..=terms {
        let kf = T::from_count(k);
        let (z1, z2, e1, e2): (T, T, T, T) = (normal(rng), normal(rng), normal(rng), normal(rng));
        acc += (z1 * (e2 + b2) - z2 * (e1 + b1)) / kf;
        head += T::one() / (kf * kf);
    }
    let mut a = h / (T::lit(2.0) * pi) * acc;
    let rest = (pi * pi / T::lit(6.0) - head).max(T::zero());
    let tail_var = h * h / (T::lit(2.0) * pi * pi) * rest * (T::one() + (w1 * w1 + w2 * w2) / h);
    a += tail_var.sqrt() * normal::<T, R>(rng);
    a
}

/// Draws one track-length increment with the components listed in `needs`.
pub fn sample_increment<T: Real, R: Rng + ?Sized>(rng: &mut R, h: T, needs: NoiseNeeds, levy_terms: usize) -> BrownianIncrement<T> {
    let sh = h.sqrt();
    let mut inc = BrownianIncrement { h, xi_e: sh * normal::<T, R>(rng), ..Default::default() };
    if needs.frame >= 1 {
        inc.w1 = sh * normal::<T, R>(rng);
    }
    if needs.frame >= 2 {
        inc.w2 = sh * normal::<T, R>(rng);
    }
    if needs.area {
        inc.area = levy_area(rng, h, inc.w1, inc.w2, levy_terms);
    }
    let mut amb = [T::zero(); 3];
    for a in amb.iter_mut().take(needs.ambient) {
        *a = sh * normal::<T, R>(rng);
    }
    inc.ambient = Vec3::new(amb[0], amb[1], amb[2]);
    inc
}

/// Joint draw for one angular step directly on the clock increment `dgamma`.
pub fn draw_noise<T: Real, R: Rng + ?Sized>(rng: &mut R, h: T, dgamma: T, dim: Dim, levy_terms: usize) -> NoiseDraw<T> {
    let needs = match dim {
        Dim::Two => NoiseNeeds { ambient: 2, frame: 1, area: false },
        Dim::Three => NoiseNeeds { ambient: 3, frame: 2, area: true },
    };
    sample_increment(rng, h, needs, levy_terms).on_clock(dgamma)
}

/// Sums consecutive fine increments into one coarse increment. Areas are
/// chained: A_{0,t+s} = A_{0,t} + A_{t,t+s} + ½(W¹_{0,t}ΔW² − W²_{0,t}ΔW¹).
#[derive(Debug, Clone, Copy, Default)]
pub struct IncrementAccumulator<T> {
    acc: BrownianIncrement<T>,
    count: usize,
}

impl<T: Real> IncrementAccumulator<T> {
    pub fn new() -> Self {
        IncrementAccumulator { acc: BrownianIncrement::default(), count: 0 }
    }

    pub fn push(&mut self, f: &BrownianIncrement<T>) {
        let a = &mut self.acc;
        a.area += f.area + T::lit(0.5) * (a.w1 * f.w2 - a.w2 * f.w1);
        a.h += f.h;
        a.xi_e += f.xi_e;
        a.w1 += f.w1;
        a.w2 += f.w2;
        a.ambient += f.ambient;
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Returns the aggregated increment and resets.
    pub fn take(&mut self) -> BrownianIncrement<T> {
        let out = self.acc;
        *self = Self::new();
        out
    }
}

pub fn aggregate<T: Real>(fine: &[BrownianIncrement<T>]) -> BrownianIncrement<T> {
    let mut acc = IncrementAccumulator::new();
    fine.iter().for_each(|f| acc.push(f));
    acc.take()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let draw = |seed, idx| {
            let mut r = path_rng(seed, idx);
            (0..10).map(|_| normal::<f64, _>(&mut r)).collect::<Vec<_>>()
        };
        assert_eq!(draw(1, 0), draw(1, 0));
        assert_ne!(draw(1, 0), draw(1, 1));
        assert_ne!(draw(1, 0), draw(2, 0));
    }

    #[test]
    fn neighbouring_streams_are_uncorrelated() {
        let mut a = path_rng(1, 0);
        let mut b = path_rng(1, 1);
        let n = 10_000;
        let xs: Vec<f64> = (0..n).map(|_| normal(&mut a)).collect();
        let ys: Vec<f64> = (0..n).map(|_| normal(&mut b)).collect();
        let rho = crate::stats::correlation(&xs, &ys);
        assert!(rho.abs() < 0.05, "{rho}");
    }

    #[test]
    fn zero_clock_gives_zero_angular_noise() {
        let mut r = path_rng(4, 4);
        let d = draw_noise::<f64, _>(&mut r, 0.01, 0.0, Dim::Three, 10);
        assert_eq!((d.dw1, d.dw2, d.levy_a, d.dgamma), (0.0, 0.0, 0.0, 0.0));
        let d2 = draw_noise::<f64, _>(&mut r, 0.01, 0.02, Dim::Two, 10);
        assert_eq!((d2.dw2, d2.levy_a), (0.0, 0.0));
        assert!(d2.dw1 != 0.0);
    }

    #[test]
    fn energy_increment_moments() {
        let mut r = path_rng(9, 0);
        let h = 0.01;
        let xs: Vec<f64> = (0..200_000)
            .map(|_| sample_increment::<f64, _>(&mut r, h, NoiseNeeds::for_scheme(SchemeId::MilsteinRkmk, Dim::Two), 10).xi_e)
            .collect();
        let (m, v) = crate::stats::mean_var(&xs);
        assert!(m.abs() < 3.0 * (h / 2e5).sqrt());
        assert!((v / h - 1.0).abs() < 0.01);
    }

    #[test]
    fn levy_area_conditional_variance() {
        // at zero increments the area has variance h²/12
        let mut r = path_rng(5, 0);
        let h = 0.04;
        let xs: Vec<f64> = (0..200_000).map(|_| levy_area(&mut r, h, 0.0, 0.0, 10)).collect();
        let (_, v) = crate::stats::mean_var(&xs);
        assert!((v / (h * h) * 12.0 - 1.0).abs() < 0.02, "{}", v / (h * h));
    }

    #[test]
    fn levy_area_against_fine_brownian_path() {
        // unconditional variance h²/4: compare with a discretised path
        let mut r = path_rng(6, 0);
        let (h, m, n) = (1.0f64, 400, 20_000);
        let mut v_fine = 0.0;
        for _ in 0..n {
            let (mut w1, mut w2, mut a) = (0.0, 0.0, 0.0);
            for _ in 0..m {
                let d1 = (h / m as f64).sqrt() * normal::<f64, _>(&mut r);
                let d2 = (h / m as f64).sqrt() * normal::<f64, _>(&mut r);
                a += 0.5 * (w1 * d2 - w2 * d1);
                w1 += d1;
                w2 += d2;
            }
            v_fine += a * a;
        }
        v_fine /= n as f64;
        let mut v = 0.0;
        for _ in 0..n {
            let w1 = normal::<f64, _>(&mut r);
            let w2 = normal::<f64, _>(&mut r);
            let a = levy_area(&mut r, h, w1, w2, 10);
            v += a * a;
        }
        v /= n as f64;
        assert!((v_fine - 0.25).abs() < 0.02, "{v_fine}");
        assert!((v - 0.25).abs() < 0.02, "{v}");
    }

    #[test]
    fn aggregation_matches_brute_force() {
        let mut r = path_rng(7, 0);
        let needs = NoiseNeeds::for_scheme(SchemeId::MilsteinRkmk, Dim::Three);
        let fine: Vec<BrownianIncrement<f64>> = (0..16).map(|_| sample_increment(&mut r, 0.001, needs, 10)).collect();
        let agg = aggregate(&fine);
        let (mut w1, mut w2, mut area) = (0.0, 0.0, 0.0);
        for f in &fine {
            area += f.area + 0.5 * (w1 * f.w2 - w2 * f.w1);
            w1 += f.w1;
            w2 += f.w2;
        }
        assert_eq!(agg.w1, fine.iter().map(|f| f.w1).sum::<f64>());
        assert_eq!(agg.xi_e, fine.iter().map(|f| f.xi_e).sum::<f64>());
        assert!((agg.area - area).abs() < 1e-12);
        // pairwise (tree) chaining gives the same coarse area
        let left = aggregate(&fine[..8]);
        let right = aggregate(&fine[8..]);
        let tree = aggregate(&[left, right]);
        assert!((tree.area - agg.area).abs() < 1e-12);
        assert!((agg.h - 0.016).abs() < 1e-15);
    }
}
