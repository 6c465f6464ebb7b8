//! Exponential weights `e^{ay}`, their truncations and weighted H^1 norms.

use crate::error::{Error, Result};
use crate::grid::RealField;
use crate::kdv::TimeSeries;

/// Weighted samples above this magnitude are reported as overflow.
pub const OVERFLOW_GUARD: f64 = 1e300;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightParams {
    pub a: f64,
    /// Truncation radius; `f64::INFINITY` for the plain weight.
    pub r: f64,
    pub c_ref: f64,
}

impl WeightParams {
    /// Requires `0 <= a < sqrt(c_ref/3)`. `a = 0` gives the unweighted case.
    pub fn new(a: f64, r: f64, c_ref: f64) -> Result<Self> {
        if !(c_ref.is_finite() && c_ref > 0.0) {
            return Err(Error::validation(format!("reference speed must be positive, got {c_ref}")));
        }
        let bound = (c_ref / 3.0).sqrt();
        if !(a.is_finite() && a >= 0.0 && a < bound) {
            return Err(Error::validation(format!(
                "weight rate a = {a} must satisfy 0 <= a < sqrt(c0/3) = {bound}"
            )));
        }
        if r.is_nan() || r <= 0.0 {
            return Err(Error::validation(format!("truncation radius must be positive, got {r}")));
        }
        Ok(WeightParams { a, r, c_ref })
    }

    pub fn untruncated(a: f64, c_ref: f64) -> Result<Self> {
        Self::new(a, f64::INFINITY, c_ref)
    }

    pub fn with_radius(self, r: f64) -> Result<Self> {
        Self::new(self.a, r, self.c_ref)
    }

    /// `omega_{a,R}(y)`: `e^{ay}` for `y <= R`, zero beyond.
    pub fn weight(&self, y: f64) -> f64 {
        if y > self.r {
            0.0
        } else {
            (self.a * y).exp()
        }
    }
}

/// Pointwise product with `w(y)`, guarding against overflow.
fn weighted(f: &RealField, w: impl Fn(f64) -> f64) -> Result<RealField> {
    let grid = f.grid().clone();
    let mut out = f.clone();
    for (j, v) in out.samples_mut().iter_mut().enumerate() {
        if *v == 0.0 {
            continue;
        }
        *v *= w(grid.x(j));
        let m = v.abs();
        if !m.is_finite() || m > OVERFLOW_GUARD {
            return Err(Error::Overflow { magnitude: m, guard: OVERFLOW_GUARD });
        }
    }
    Ok(out)
}

/// `omega_{a,R} f`.
pub fn apply_weight(p: &WeightParams, f: &RealField) -> Result<RealField> {
    weighted(f, |y| p.weight(y))
}

/// Inverse weight `e^{-ay}` (no truncation); used to map weighted fields back.
pub fn remove_weight(a: f64, f: &RealField) -> Result<RealField> {
    weighted(f, |y| (-a * y).exp())
}

/// `(||w f||^2 + ||w (a f + f_y)||^2)^{1/2}` with `w = omega_{a,R}`.
pub fn weighted_h1_norm(p: &WeightParams, f: &RealField) -> Result<f64> {
    let g0 = apply_weight(p, f)?;
    let fy = f.derivative(1);
    let mut g1 = fy;
    g1.axpy(p.a, f);
    let g1 = apply_weight(p, &g1)?;
    Ok((g0.inner(&g0) + g1.inner(&g1)).sqrt())
}

/// `||omega_{a,R} f||_{H^1}` for each radius in `radii` (strictly increasing).
pub fn truncation_convergence_check(
    p: &WeightParams,
    f: &RealField,
    radii: &[f64],
) -> Result<TimeSeries> {
    let mut series = TimeSeries::new(&["weighted_h1"]);
    for &r in radii {
        let q = p.with_radius(r)?;
        series.push(r, vec![weighted_h1_norm(&q, f)?])?;
    }
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{sobolev_norm, Grid};
    use crate::soliton::{soliton_field, SolitonParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // a box small enough that round-off at the right edge is not amplified
    // past the tolerances by e^{ay}
    fn psi1() -> RealField {
        soliton_field(&Grid::new(2048, 100.0).unwrap(), SolitonParams::centered(1.0).unwrap())
    }

    #[test]
    fn admissibility() {
        assert!(WeightParams::untruncated(0.5, 1.0).is_ok());
        assert!(WeightParams::untruncated(0.58, 1.0).is_err());
        assert!(WeightParams::untruncated(-0.1, 1.0).is_err());
        let e = WeightParams::untruncated(0.6, 1.0).unwrap_err().to_string();
        assert!(e.contains("sqrt(c0/3)"), "{e}");
    }

    #[test]
    fn zero_rate_is_identity() {
        let f = psi1();
        let p = WeightParams::untruncated(0.0, 1.0).unwrap();
        assert_eq!(apply_weight(&p, &f).unwrap().samples(), f.samples());
        let h1 = sobolev_norm(&f, 1.0);
        assert!((weighted_h1_norm(&p, &f).unwrap() - h1).abs() < 1e-12 * h1);
        assert_eq!(weighted_h1_norm(&p, &RealField::zeros(f.grid())).unwrap(), 0.0);
    }

    #[test]
    fn bump_scaling() {
        let g = Grid::new(512, 40.0).unwrap();
        let f = RealField::from_fn(&g, |y| if (y + 10.0).abs() < 1e-9 { 1.0 } else { 0.0 });
        let p = WeightParams::untruncated(0.3, 1.0).unwrap();
        let w = apply_weight(&p, &f).unwrap();
        let j = g.points().iter().position(|y| (y + 10.0).abs() < 1e-9).unwrap();
        assert!((w.samples()[j] - (-3.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn overflow_is_reported() {
        let g = Grid::new(64, 4000.0).unwrap();
        let f = RealField::from_fn(&g, |_| 1.0);
        let p = WeightParams::untruncated(0.5, 1.0).unwrap();
        assert!(matches!(apply_weight(&p, &f), Err(Error::Overflow { .. })));
    }

    #[test]
    fn soliton_weighted_on_default_grid_is_finite() {
        let f = soliton_field(&Grid::default_grid(), SolitonParams::centered(1.0).unwrap());
        let p = WeightParams::untruncated(0.5, 1.0).unwrap();
        let w = apply_weight(&p, &f).unwrap();
        assert!(w.is_finite() && w.max_abs() < 10.0);
    }

    #[test]
    fn two_route_identity_on_soliton() {
        let f = psi1();
        let p = WeightParams::untruncated(0.4, 1.0).unwrap();
        let a = weighted_h1_norm(&p, &f).unwrap();
        let b = sobolev_norm(&apply_weight(&p, &f).unwrap(), 1.0);
        assert!((a - b).abs() < 1e-8 * b, "{a} {b}");
    }

    #[test]
    fn two_route_identity_random_fields() {
        let g = Grid::new(1024, 80.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = WeightParams::untruncated(0.3, 1.0).unwrap();
        for _ in 0..100 {
            let x0 = rng.gen_range(-10.0..10.0);
            let w = rng.gen_range(1.0..3.0);
            let k = rng.gen_range(0.0..2.0);
            let amp = rng.gen_range(-2.0..2.0);
            let f = RealField::from_fn(&g, |y| {
                let z = (y - x0) / w;
                amp * (-z * z).exp() * (k * y).cos()
            });
            let a = weighted_h1_norm(&p, &f).unwrap();
            let b = sobolev_norm(&apply_weight(&p, &f).unwrap(), 1.0);
            assert!((a - b).abs() < 1e-8 * b, "{a} {b}");
        }
    }

    #[test]
    fn truncation_sweep_is_monotone_and_converges() {
        let f = psi1();
        let p = WeightParams::untruncated(0.4, 1.0).unwrap();
        let radii: Vec<f64> = (0..10).map(|i| 2.5 + 5.0 * i as f64).collect();
        let s = truncation_convergence_check(&p, &f, &radii).unwrap();
        let v = s.column("weighted_h1").unwrap();
        assert!(v.windows(2).all(|w| w[1] >= w[0]));
        let full = weighted_h1_norm(&p, &f).unwrap();
        assert!((v.last().unwrap() - full).abs() < 1e-8);
        // radius beyond the right edge is exactly the untruncated value
        let beyond = weighted_h1_norm(&p.with_radius(60.0).unwrap(), &f).unwrap();
        assert_eq!(beyond, full);
    }
}
