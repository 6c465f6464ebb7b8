//! The smoothing multiplier `m_N`, the operator `I_N`, the cutoff schedule
//! `N(n)`, commutators, and the weighted product-rule check.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{apply_real_multiplier, sobolev_norm, RealField, SpectralField};
use crate::weighted::{apply_weight, WeightParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IMultiplier {
    n: f64,
    s: f64,
}

impl IMultiplier {
    /// `n >= 1`, `s` in `(3/4, 1)`.
    pub fn new(n: f64, s: f64) -> Result<Self> {
        if !(n.is_finite() && n >= 1.0) {
            return Err(Error::validation(format!("cutoff N must be finite and >= 1, got {n}")));
        }
        if !(s > 0.75 && s < 1.0) {
            return Err(Error::validation(format!("regularity s must lie in (3/4, 1), got {s}")));
        }
        Ok(IMultiplier { n, s })
    }

    pub fn cutoff(&self) -> f64 {
        self.n
    }

    pub fn regularity(&self) -> f64 {
        self.s
    }
}

/// Flat-ended step `h(t) / (h(t) + h(1 - t))` with `h(x) = exp(-1/x)`.
fn smooth_step(t: f64) -> f64 {
    let h = |x: f64| if x > 0.0 { (-1.0 / x).exp() } else { 0.0 };
    let (a, b) = (h(t), h(1.0 - t));
    a / (a + b)
}

/// Log-log bridge exponent on `[N, 10N]`: `g(t) = t S(t)` with `t = log10(|xi|/N)`.
/// `g - 0` and `g - t` are flat at `t = 0` and `t = 1`, so `m_N` is smooth.
pub fn bridge_exponent(t: f64) -> f64 {
    t * smooth_step(t)
}

/// `m_N(xi)`: 1 below `N`, `(|xi|/N)^{s-1}` above `10N`, and
/// `10^{(s-1) g(t)}` in between.
pub fn m_eval(im: &IMultiplier, xi: f64) -> f64 {
    let r = xi.abs() / im.n;
    if r < 1.0 {
        1.0
    } else if r > 10.0 {
        r.powf(im.s - 1.0)
    } else {
        10f64.powf((im.s - 1.0) * bridge_exponent(r.log10()))
    }
}

#[allow(non_snake_case)]
pub fn apply_I(im: &IMultiplier, f: &RealField) -> RealField {
    apply_real_multiplier(f, |xi| m_eval(im, xi))
}

/// `I_N` on Fourier coefficients.
#[allow(non_snake_case)]
pub fn apply_I_spectral(im: &IMultiplier, f: &SpectralField) -> SpectralField {
    crate::grid::apply_multiplier(f, |xi| Complex64::new(m_eval(im, xi), 0.0))
}

/// `I_N^{-1}`, the multiplier `1/m_N` (bounded on the grid).
#[allow(non_snake_case)]
pub fn apply_I_inverse(im: &IMultiplier, f: &RealField) -> RealField {
    apply_real_multiplier(f, |xi| 1.0 / m_eval(im, xi))
}

/// `I_N(uv) - (I_N u)(I_N v)` with dealiased products.
pub fn commutator(im: &IMultiplier, u: &RealField, v: &RealField) -> RealField {
    let whole = apply_I(im, &u.dealiased_product(v));
    let parts = apply_I(im, u).dealiased_product(&apply_I(im, v));
    whole.sub(&parts)
}

/// Step schedule `N(n) = kappa^{q n}` with `q = -1/(7/4 - s) + eta1` unless
/// overridden.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ISchedule {
    pub kappa: f64,
    pub eta1: f64,
    pub s: f64,
    coefficient: f64,
}

impl ISchedule {
    pub fn new(kappa: f64, eta1: f64, s: f64) -> Result<Self> {
        Self::with_coefficient(kappa, eta1, s, -1.0 / (1.75 - s) + eta1)
    }

    /// Schedule with an explicit exponent coefficient `q`.
    pub fn with_coefficient(kappa: f64, eta1: f64, s: f64, q: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa < 1.0) {
            return Err(Error::Schedule(format!("kappa must lie in (0, 1), got {kappa}")));
        }
        if !(q.is_finite() && q < 0.0) {
            return Err(Error::Schedule(format!(
                "exponent coefficient must be negative for a growing cutoff, got {q}"
            )));
        }
        Ok(ISchedule { kappa, eta1, s, coefficient: q })
    }

    pub fn coefficient(&self) -> f64 {
        self.coefficient
    }
}

#[allow(non_snake_case)]
pub fn schedule_N(sch: &ISchedule, n: u32) -> f64 {
    sch.kappa.powf(sch.coefficient * n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProductRuleRecord {
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
}

impl ProductRuleRecord {
    pub fn ratio(&self) -> f64 {
        if self.rhs > 0.0 {
            self.lhs / self.rhs
        } else {
            0.0
        }
    }
}

/// Compares `||w I d(f1 f2)||` with
/// `2 ||I f1||_{H^1} ||w I d f2|| + 2 ||I f2||_{H^1} ||w I d f1||`.
pub fn product_rule_check(
    im: &IMultiplier,
    w: &WeightParams,
    f1: &RealField,
    f2: &RealField,
) -> Result<ProductRuleRecord> {
    let wid = |f: &RealField| -> Result<f64> {
        Ok(apply_weight(w, &apply_I(im, &f.derivative(1)))?.norm_l2())
    };
    let lhs = wid(&f1.mul(f2))?;
    let i1 = sobolev_norm(&apply_I(im, f1), 1.0);
    let i2 = sobolev_norm(&apply_I(im, f2), 1.0);
    let rhs = 2.0 * i1 * wid(f2)? + 2.0 * i2 * wid(f1)?;
    Ok(ProductRuleRecord { lhs, rhs, satisfied: lhs <= rhs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{forward_transform, Grid};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn im(n: f64, s: f64) -> IMultiplier {
        IMultiplier::new(n, s).unwrap()
    }

    #[test]
    fn multiplier_values() {
        let m = im(4.0, 0.875);
        assert_eq!(m_eval(&m, 2.0), 1.0);
        assert!((m_eval(&m, 80.0) - 20f64.powf(-0.125)).abs() < 1e-15);
        assert!((m_eval(&m, 40.0) - 10f64.powf(-0.125)).abs() < 1e-14);
        assert_eq!(m_eval(&m, 4.0), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let xi = rng.gen_range(0.0..200.0);
            assert_eq!(m_eval(&m, xi), m_eval(&m, -xi));
        }
    }

    #[test]
    fn multiplier_is_monotone_and_smooth_at_junctions() {
        for &(n, s) in &[(1.0, 0.76), (3.0, 0.875), (50.0, 0.99)] {
            let m = im(n, s);
            let xs: Vec<f64> = (0..4000).map(|i| 0.5 * n + i as f64 * 0.005 * n).collect();
            let v: Vec<f64> = xs.iter().map(|&x| m_eval(&m, x)).collect();
            assert!(v.windows(2).all(|w| w[1] <= w[0] + 1e-15));
            assert!(v.iter().all(|&x| x > 0.0 && x <= 1.0));
            // one-sided slopes agree at both junctions
            for x in [n, 10.0 * n] {
                let h = 1e-6 * n;
                let left = (m_eval(&m, x) - m_eval(&m, x - h)) / h;
                let right = (m_eval(&m, x + h) - m_eval(&m, x)) / h;
                assert!((left - right).abs() < 1e-4 * (1.0 + left.abs()) / n, "{n} {s} {x}");
            }
        }
    }

    #[test]
    fn i_is_identity_on_low_band_and_above_nyquist() {
        let g = Grid::new(128, 2.0 * PI).unwrap();
        let f = RealField::from_fn(&g, |x| (3.0 * x).sin() + 0.5 * (7.0 * x).cos());
        assert!(apply_I(&im(8.0, 0.9), &f).sub(&f).max_abs() < 1e-13);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = RealField::new(&g, (0..128).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        assert!(apply_I(&im(1e6, 0.9), &r).sub(&r).max_abs() < 1e-13);
    }

    #[test]
    fn i_is_self_adjoint() {
        let g = Grid::new(256, 30.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = im(2.0, 0.8);
        for _ in 0..10 {
            let f = RealField::new(&g, (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let h = RealField::new(&g, (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let a = apply_I(&m, &f).inner(&h);
            let b = f.inner(&apply_I(&m, &h));
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn i_bound_by_sobolev_gain() {
        let g = Grid::new(512, 40.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let n = rng.gen_range(1.0..20.0);
            let s = rng.gen_range(0.76..0.99);
            let m = im(n, s);
            let f = RealField::new(&g, (0..512).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let lhs = sobolev_norm(&apply_I(&m, &f), 1.0);
            let rhs = n.powf(1.0 - s) * sobolev_norm(&f, s);
            // slack from <xi> versus |xi| near N and from the bridge sitting
            // above the power law by at most max(t - g(t))
            let gap = (0..=10000).map(|i| i as f64 / 10000.0).map(|t| t - bridge_exponent(t)).fold(0.0, f64::max);
            let slack = (1.0 + 1.0 / (n * n)).powf(1.0 - s) * 10f64.powf(gap * (1.0 - s));
            assert!(lhs <= rhs * slack * (1.0 + 1e-12), "{lhs} {rhs}");
        }
    }

    #[test]
    fn commutator_vanishes_on_low_band() {
        let g = Grid::new(128, 2.0 * PI).unwrap();
        let m = im(16.0, 0.875);
        let u = RealField::from_fn(&g, |x| (2.0 * x).cos() + (5.0 * x).sin());
        let v = RealField::from_fn(&g, |x| (3.0 * x).sin() - (7.0 * x).cos());
        assert!(commutator(&m, &u, &v).max_abs() < 1e-12);
        assert_eq!(commutator(&m, &u, &RealField::zeros(&g)).max_abs(), 0.0);
    }

    #[test]
    fn commutator_matches_convolution_sum() {
        let n = 64usize;
        let g = Grid::new(n, 2.0 * PI).unwrap();
        let m = im(3.0, 0.8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u = RealField::new(&g, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let v = RealField::new(&g, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let (uh, vh) = (forward_transform(&u), forward_transform(&v));
        let cut = g.dealias_cutoff();
        let mk = |k: i64| m_eval(&m, k as f64);
        let got = forward_transform(&commutator(&m, &u, &v));
        for k in -(n as i64) / 2..(n as i64) / 2 {
            let mut want = Complex64::default();
            if k.abs() <= cut {
                for k1 in -cut..=cut {
                    let k2 = k - k1;
                    if k2.abs() <= cut {
                        want += (mk(k) - mk(k1) * mk(k2)) * uh.mode(k1) * vh.mode(k2);
                    }
                }
            }
            assert!((got.mode(k) - want).norm() < 1e-10, "k={k}");
        }
    }

    #[test]
    fn commutator_shrinks_with_cutoff() {
        let g = Grid::new(1024, 40.0).unwrap();
        let u = RealField::from_fn(&g, |x| 1.0 / (2.0 * x).cosh().powi(2));
        let v = RealField::from_fn(&g, |x| (-(x - 0.3) * (x - 0.3) * 8.0).exp());
        let norms: Vec<f64> = [4.0, 8.0, 16.0, 32.0, 64.0]
            .iter()
            .map(|&n| commutator(&im(n, 0.875), &u, &v).norm_l2())
            .collect();
        assert!(norms.windows(2).all(|w| w[1] < w[0]), "{norms:?}");
    }

    #[test]
    fn schedule_values() {
        let sch = ISchedule::new(0.9, 0.01, 0.875).unwrap();
        assert_eq!(schedule_N(&sch, 0), 1.0);
        let want = 0.9f64.powf(-1.0 / 0.875 + 0.01);
        assert!((schedule_N(&sch, 1) - want).abs() < 1e-15);
        let v: Vec<f64> = (0..=20).map(|n| schedule_N(&sch, n)).collect();
        assert!(v.windows(2).all(|w| w[1] >= w[0]));
        assert!(matches!(ISchedule::new(0.9, 2.0, 0.875), Err(Error::Schedule(_))));
        assert!(ISchedule::new(1.2, 0.01, 0.875).is_err());
    }

    #[test]
    fn product_rule_trivial_and_gaussian() {
        let g = Grid::new(512, 40.0).unwrap();
        let m = im(2.0, 0.875);
        let w = WeightParams::new(0.5, 15.0, 1.0).unwrap();
        let z = RealField::zeros(&g);
        let f = RealField::from_fn(&g, |x| (-4.0 * x * x).exp());
        let r = product_rule_check(&m, &w, &z, &f).unwrap();
        assert_eq!(r.lhs, 0.0);
        assert!(r.satisfied);
        let r = product_rule_check(&m, &w, &f, &f).unwrap();
        assert!(r.satisfied && r.ratio() > 0.0 && r.ratio() < 1.0, "{r:?}");
    }
}
