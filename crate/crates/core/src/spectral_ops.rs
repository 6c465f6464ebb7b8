//! The weighted linearization `A_a = e^{ay} d_y (-d_y^2 + c - 2 psi_c) e^{-ay}`,
//! its biorthogonal generalized-kernel system, projections and semigroups.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{forward_transform, sobolev_norm, Grid, RealField};
use crate::kdv::TimeSeries;
use crate::soliton::{soliton_dc_field, soliton_dy_field, soliton_field, SolitonParams};
use crate::weighted::{remove_weight, WeightParams};

/// Condition-number limit for the calibration system.
pub const CALIBRATION_COND_LIMIT: f64 = 1e10;

/// Default spectrum-study grid: 512 points on a box of length 120.
pub const SPECTRUM_POINTS: usize = 512;
pub const SPECTRUM_LENGTH: f64 = 120.0;

fn check_admissible(a: f64, c: f64) -> Result<()> {
    WeightParams::untruncated(a, c).map(|_| ())
}

/// Cumulative integral from the left edge, `F(x_j) = int_{x_0}^{x_j} f`,
/// using the sixth-order panel rule on each cell.
pub fn antiderivative(f: &RealField) -> RealField {
    let n = f.grid().num_points();
    let h = f.grid().spacing() / 1440.0;
    let v = f.samples();
    let at = |i: isize| v[i.rem_euclid(n as isize) as usize];
    let mut out = vec![0.0; n];
    let mut acc = 0.0;
    for j in 0..n - 1 {
        let i = j as isize;
        acc += h
            * (11.0 * (at(i - 2) + at(i + 3)) - 93.0 * (at(i - 1) + at(i + 2))
                + 802.0 * (at(i) + at(i + 1)));
        out[j + 1] = acc;
    }
    RealField::new(f.grid(), out).expect("length matches")
}

/// `A_a f` in expanded form:
/// `-f''' + 3a f'' + (c - 3a^2) f' - a(c - a^2) f - 2 (d_y - a)(psi_c f)`.
pub fn apply_expanded(a: f64, c: f64, psi: &RealField, f: &RealField) -> RealField {
    let grid = f.grid();
    let b = -a * (c - a * a);
    let pf = psi.mul(f);
    let spec = forward_transform(f);
    let ps = forward_transform(&pf);
    let ny = grid.nyquist_slot();
    let coeffs: Vec<Complex64> = spec
        .coeffs()
        .iter()
        .zip(ps.coeffs())
        .zip(grid.wavenumbers())
        .enumerate()
        .map(|(i, ((&u, &p), &xi))| {
            let ik = if i == ny { Complex64::default() } else { Complex64::new(0.0, xi) };
            let k2 = -xi * xi;
            let sym = -(ik * ik * ik) + 3.0 * a * k2 + (c - 3.0 * a * a) * ik + b;
            sym * u - 2.0 * (ik - a) * p
        })
        .collect();
    crate::grid::SpectralField::new(grid, coeffs).expect("length matches").inverse()
}

/// `A_a f` evaluated as `e^{ay} d_y (-d_y^2 + c - 2 psi_c)(e^{-ay} f)`.
pub fn apply_factored(a: f64, c: f64, psi: &RealField, f: &RealField) -> Result<RealField> {
    let g = remove_weight(a, f)?;
    let inner = g.derivative(2).scale(-1.0).add(&g.scale(c)).sub(&psi.mul(&g).scale(2.0));
    let out = inner.derivative(1);
    Ok(out.mul_fn(|y| (a * y).exp()))
}

#[derive(Debug, Clone)]
pub struct LinearizedOperator {
    pub a: f64,
    pub c: f64,
    pub grid: Arc<Grid>,
    pub matrix: DMatrix<f64>,
    psi: RealField,
}

/// Dense matrix of `A_a` on `grid`, assembled column by column.
pub fn build_operator(grid: &Arc<Grid>, a: f64, c: f64) -> Result<LinearizedOperator> {
    check_admissible(a, c)?;
    let n = grid.num_points();
    let psi = soliton_field(grid, SolitonParams::centered(c)?);
    let mut matrix = DMatrix::zeros(n, n);
    let mut e = RealField::zeros(grid);
    for j in 0..n {
        e.samples_mut()[j] = 1.0;
        let col = apply_expanded(a, c, &psi, &e);
        matrix.column_mut(j).copy_from_slice(col.samples());
        e.samples_mut()[j] = 0.0;
    }
    Ok(LinearizedOperator { a, c, grid: grid.clone(), matrix, psi })
}

impl LinearizedOperator {
    pub fn apply(&self, f: &RealField) -> RealField {
        let v = &self.matrix * DVector::from_column_slice(f.samples());
        RealField::new(&self.grid, v.as_slice().to_vec()).expect("length matches")
    }

    pub fn soliton(&self) -> &RealField {
        &self.psi
    }

    /// `b = -a(c - a^2)`.
    pub fn spectral_bound(&self) -> f64 {
        -self.a * (self.c - self.a * self.a)
    }
}

/// Generalized kernel `(zeta1, zeta2)` of `A_a`, adjoint pair `(eta1, eta2)`,
/// and the calibrated constants `theta1..3`.
#[derive(Debug, Clone)]
pub struct SpectralPair {
    pub a: f64,
    pub c: f64,
    pub zeta1: RealField,
    pub zeta2: RealField,
    pub eta1: RealField,
    pub eta2: RealField,
    pub theta1: f64,
    pub theta2: f64,
    pub theta3: f64,
}

impl SpectralPair {
    /// `G[j][k] = <zeta_j, eta_k>`.
    pub fn gram(&self) -> [[f64; 2]; 2] {
        let z = [&self.zeta1, &self.zeta2];
        let e = [&self.eta1, &self.eta2];
        let mut g = [[0.0; 2]; 2];
        for j in 0..2 {
            for k in 0..2 {
                g[j][k] = z[j].inner(e[k]);
            }
        }
        g
    }

    pub fn gram_error(&self) -> f64 {
        let g = self.gram();
        let mut worst = 0.0f64;
        for (j, row) in g.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                let d = if j == k { 1.0 } else { 0.0 };
                worst = worst.max((v - d).abs());
            }
        }
        worst
    }

    pub fn max_eta_h1(&self) -> f64 {
        sobolev_norm(&self.eta1, 1.0).max(sobolev_norm(&self.eta2, 1.0))
    }

    pub fn thetas(&self) -> [f64; 3] {
        [self.theta1, self.theta2, self.theta3]
    }
}

/// Builds `zeta1 = e^{ay} psi_y`, `zeta2 = e^{ay} psi_c` and solves for the
/// thetas in `eta1 = e^{-ay}(theta1 D^{-1} psi_c + theta2 psi)`,
/// `eta2 = e^{-ay} theta3 psi` from the four conditions
/// `<zeta_j, eta_k> = delta_jk` in the least-squares sense.
pub fn calibrate_thetas(grid: &Arc<Grid>, a: f64, c: f64) -> Result<SpectralPair> {
    check_admissible(a, c)?;
    let p = SolitonParams::centered(c)?;
    let psi = soliton_field(grid, p);
    let psi_y = soliton_dy_field(grid, p);
    let psi_c = soliton_dc_field(grid, p);
    let anti = antiderivative(&psi_c);
    let up = |f: &RealField| f.mul_fn(|y| (a * y).exp());
    let down = |f: &RealField| f.mul_fn(|y| (-a * y).exp());
    let zeta1 = up(&psi_y);
    let zeta2 = up(&psi_c);
    let basis1 = down(&anti);
    let basis2 = down(&psi);
    #[rustfmt::skip]
    let m = DMatrix::from_row_slice(4, 3, &[
        zeta1.inner(&basis1), zeta1.inner(&basis2), 0.0,
        zeta2.inner(&basis1), zeta2.inner(&basis2), 0.0,
        0.0, 0.0, zeta1.inner(&basis2),
        0.0, 0.0, zeta2.inner(&basis2),
    ]);
    let rhs = DVector::from_column_slice(&[1.0, 0.0, 0.0, 1.0]);
    let svd = m.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if cond > CALIBRATION_COND_LIMIT {
        return Err(Error::IllConditioned { cond, limit: CALIBRATION_COND_LIMIT });
    }
    let theta = svd.solve(&rhs, 0.0).map_err(|e| Error::Eigensolver(e.to_string()))?;
    let (t1, t2, t3) = (theta[0], theta[1], theta[2]);
    let eta1 = basis1.scale(t1).add(&basis2.scale(t2));
    let eta2 = basis2.scale(t3);
    Ok(SpectralPair { a, c, zeta1, zeta2, eta1, eta2, theta1: t1, theta2: t2, theta3: t3 })
}

/// `P w = sum_i <w, eta_i> zeta_i`, `Q = Id - P`.
#[derive(Debug, Clone)]
pub struct Projector {
    pair: Arc<SpectralPair>,
}

impl Projector {
    pub fn new(pair: Arc<SpectralPair>) -> Self {
        Projector { pair }
    }

    pub fn pair(&self) -> &SpectralPair {
        &self.pair
    }

    /// `(<w, eta1>, <w, eta2>)`.
    pub fn coefficients(&self, w: &RealField) -> [f64; 2] {
        [w.inner(&self.pair.eta1), w.inner(&self.pair.eta2)]
    }
}

pub fn project_p(pr: &Projector, w: &RealField) -> RealField {
    let [k1, k2] = pr.coefficients(w);
    pr.pair.zeta1.scale(k1).add(&pr.pair.zeta2.scale(k2))
}

pub fn project_q(pr: &Projector, w: &RealField) -> RealField {
    w.sub(&project_p(pr, w))
}

/// `beta` minimizing `||A zeta2 - beta zeta1||` and the relative residual.
pub fn jordan_residual(a_zeta2: &RealField, zeta1: &RealField, zeta2: &RealField) -> (f64, f64) {
    let beta = a_zeta2.inner(zeta1) / zeta1.inner(zeta1);
    let r = a_zeta2.sub(&zeta1.scale(beta));
    (beta, r.norm_l2() / zeta2.norm_l2())
}

#[derive(Debug, Clone)]
pub struct SpectrumReport {
    pub a: f64,
    pub c: f64,
    pub num_points: usize,
    pub box_length: f64,
    pub eigenvalues: Vec<Complex64>,
    /// The two eigenvalues of smallest modulus.
    pub near_zero: [Complex64; 2],
    /// Largest real part among the remaining eigenvalues.
    pub max_real_rest: f64,
    /// `b = -a(c - a^2)`.
    pub bound: f64,
}

impl SpectrumReport {
    /// Header comment lines followed by `re,im` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "# a={},c={},b={},num_points={},box_length={}",
            self.a, self.c, self.bound, self.num_points, self.box_length
        )?;
        writeln!(w, "re,im")?;
        for l in &self.eigenvalues {
            writeln!(w, "{},{}", l.re, l.im)?;
        }
        Ok(())
    }
}

/// Full eigenvalue set of the dense operator.
pub fn discrete_spectrum(op: &LinearizedOperator) -> Result<SpectrumReport> {
    let n = op.matrix.nrows();
    let schur = nalgebra::linalg::Schur::try_new(op.matrix.clone(), f64::EPSILON, 100 * n)
        .ok_or_else(|| {
            Error::Eigensolver(format!(
                "Schur iteration did not converge (n = {n}, Frobenius norm = {:e})",
                op.matrix.norm()
            ))
        })?;
    let mut eig: Vec<Complex64> = schur.complex_eigenvalues().iter().copied().collect();
    if eig.iter().any(|l| !(l.re.is_finite() && l.im.is_finite())) {
        return Err(Error::Eigensolver("non-finite eigenvalue".into()));
    }
    eig.sort_by(|x, y| x.norm().total_cmp(&y.norm()));
    let near_zero = [eig[0], eig[1]];
    let max_real_rest = eig[2..].iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
    Ok(SpectrumReport {
        a: op.a,
        c: op.c,
        num_points: n,
        box_length: op.grid.box_length(),
        eigenvalues: eig,
        near_zero,
        max_real_rest,
        bound: op.spectral_bound(),
    })
}

/// `i tau^3 - 3a tau^2 + (c - 3a^2) i tau - a(c - a^2)`.
pub fn continuous_spectrum_curve(a: f64, c: f64, tau: f64) -> Complex64 {
    Complex64::new(-3.0 * a * tau * tau - a * (c - a * a), tau.powi(3) + (c - 3.0 * a * a) * tau)
}

/// Zeroth-order term of the damping symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DampingForm {
    /// `p_a = 3a xi^2 + a(c0 - a^2)`.
    #[default]
    Linearization,
    /// `p_a = 3a xi^2 + a(c0^2 - a)`.
    Printed,
}

pub fn damping_symbol(a: f64, c0: f64, xi: f64, form: DampingForm) -> f64 {
    let zeroth = match form {
        DampingForm::Linearization => a * (c0 - a * a),
        DampingForm::Printed => a * (c0 * c0 - a),
    };
    3.0 * a * xi * xi + zeroth
}

/// Free Airy group: the solution operator of `u_t + u_xxx = 0`, whose symbol
/// is `exp(i xi^3 t)` in this crate's transform convention.
pub fn semigroup_w1(t: f64, f: &RealField) -> RealField {
    let ny = f.grid().nyquist_slot();
    let mut s = forward_transform(f);
    for (i, (c, &xi)) in s.coeffs_mut().iter_mut().zip(f.grid().wavenumbers()).enumerate() {
        // the odd symbol is taken as zero on the unpaired Nyquist mode
        if i != ny {
            *c *= Complex64::from_polar(1.0, xi.powi(3) * t);
        }
    }
    s.inverse()
}

/// Damped Airy group `exp(i xi^3 t - p_a(xi) |t|)`.
pub fn semigroup_w2(t: f64, f: &RealField, a: f64, c0: f64, form: DampingForm) -> RealField {
    let w1 = semigroup_w1(t, f);
    crate::grid::apply_real_multiplier(&w1, |xi| (-damping_symbol(a, c0, xi, form) * t.abs()).exp())
}

/// `||Q exp(A t) Q w0||` sampled every `dt` up to `t_end`, using the dense
/// matrix exponential of `A dt`.
pub fn semigroup_decay(
    op: &LinearizedOperator,
    pr: &Projector,
    w0: &RealField,
    dt: f64,
    t_end: f64,
) -> Result<TimeSeries> {
    if !(dt > 0.0 && t_end >= dt) {
        return Err(Error::validation("semigroup sampling needs 0 < dt <= t_end"));
    }
    let prop = (&op.matrix * dt).exp();
    let mut w = project_q(pr, w0);
    let mut series = TimeSeries::new(&["norm"]);
    series.push(0.0, vec![w.norm_l2()])?;
    let steps = (t_end / dt).round() as usize;
    for k in 1..=steps {
        let v = &prop * DVector::from_column_slice(w.samples());
        w = RealField::new(&op.grid, v.as_slice().to_vec())?;
        let q = project_q(pr, &w);
        if !q.is_finite() {
            return Err(Error::Instability { t: k as f64 * dt, detail: "semigroup overflow".into() });
        }
        series.push(k as f64 * dt, vec![q.norm_l2()])?;
    }
    Ok(series)
}

/// Least-squares slope and intercept of `y` against `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gaussian(g: &Arc<Grid>, x0: f64, w: f64) -> RealField {
        RealField::from_fn(g, |y| (-((y - x0) / w).powi(2)).exp())
    }

    #[test]
    fn antiderivative_matches_closed_form() {
        let g = Grid::default_grid();
        for c in [0.5, 1.0, 2.0] {
            let p = SolitonParams::centered(c).unwrap();
            let f = antiderivative(&soliton_dc_field(&g, p));
            let k = 0.5 * c.sqrt();
            let exact = RealField::from_fn(&g, |y| {
                let s = 1.0 / (k * y).cosh();
                1.5 / c.sqrt() * (1.0 + (k * y).tanh()) + 0.75 * y * s * s
            });
            let err = f.sub(&exact).max_abs();
            assert!(err < 1e-8, "c={c} err={err}");
        }
    }

    #[test]
    fn expanded_and_factored_forms_agree() {
        // e^{ay} amplifies round-off of the factored route near the right
        // edge, so the comparison is made under a truncated weight
        let g = Grid::new(256, 40.0).unwrap();
        let cut = |f: &RealField| f.mul_fn(|y| if y <= 10.0 { 1.0 } else { 0.0 });
        let psi = soliton_field(&g, SolitonParams::centered(1.0).unwrap());
        for x0 in [-3.0, 0.0, 4.0] {
            let f = gaussian(&g, x0, 1.5);
            let e = cut(&apply_expanded(0.5, 1.0, &psi, &f));
            let fa = cut(&apply_factored(0.5, 1.0, &psi, &f).unwrap());
            let err = e.sub(&fa).norm_l2() / e.norm_l2();
            assert!(err < 1e-8, "x0={x0} err={err}");
        }
    }

    #[test]
    fn matrix_matches_matrix_free_and_unweighted_case() {
        let g = Grid::new(128, 40.0).unwrap();
        let op = build_operator(&g, 0.3, 1.0).unwrap();
        let f = gaussian(&g, 1.0, 2.0);
        let direct = apply_expanded(0.3, 1.0, op.soliton(), &f);
        assert!(op.apply(&f).sub(&direct).max_abs() < 1e-10);
        let op0 = build_operator(&g, 0.0, 1.0).unwrap();
        let plain = {
            let inner = f.derivative(2).scale(-1.0).add(&f).sub(&op0.soliton().mul(&f).scale(2.0));
            inner.derivative(1)
        };
        assert!(op0.apply(&f).sub(&plain).max_abs() < 1e-10);
    }

    #[test]
    fn rejects_inadmissible_rate() {
        assert!(build_operator(&Grid::new(64, 40.0).unwrap(), 0.6, 1.0).is_err());
        assert!(calibrate_thetas(&Grid::new(64, 40.0).unwrap(), 0.6, 1.0).is_err());
    }

    #[test]
    fn generalized_kernel_on_default_grid() {
        let g = Grid::default_grid();
        let pair = calibrate_thetas(&g, 0.5, 1.0).unwrap();
        let psi = soliton_field(&g, SolitonParams::centered(1.0).unwrap());
        let a1 = apply_expanded(0.5, 1.0, &psi, &pair.zeta1);
        assert!(a1.norm_l2() / pair.zeta1.norm_l2() < 1e-6);
        let a2 = apply_expanded(0.5, 1.0, &psi, &pair.zeta2);
        let (beta, res) = jordan_residual(&a2, &pair.zeta1, &pair.zeta2);
        assert!(res < 1e-5, "{res}");
        assert!((beta + 1.0).abs() < 1e-8, "{beta}");
    }

    #[test]
    fn calibration_matches_closed_form() {
        let g = Grid::default_grid();
        let pair = calibrate_thetas(&g, 0.5, 1.0).unwrap();
        assert!(pair.gram_error() < 1e-8);
        let want = [-2.0 / 9.0, 2.0 / 9.0, 2.0 / 9.0];
        for (t, w) in pair.thetas().iter().zip(want) {
            assert!((t - w).abs() < 1e-8, "{t} {w}");
        }
        // the weights cancel in <zeta1, e^{-ay} psi>, which vanishes by parity
        let probe = pair.zeta1.inner(&pair.eta2);
        assert!(probe.abs() < 1e-12);
    }

    #[test]
    fn projector_algebra() {
        let g = Grid::new(1024, 100.0).unwrap();
        let pr = Projector::new(Arc::new(calibrate_thetas(&g, 0.5, 1.0).unwrap()));
        let z1 = pr.pair().zeta1.clone();
        assert!(project_p(&pr, &z1).sub(&z1).norm_l2() < 1e-10 * z1.norm_l2());
        assert!(project_q(&pr, &z1).norm_l2() < 1e-10 * z1.norm_l2());
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let w = gaussian(&g, rng.gen_range(-5.0..5.0), rng.gen_range(0.5..3.0));
            let p = project_p(&pr, &w);
            assert!(project_p(&pr, &p).sub(&p).norm_l2() <= 1e-10 * (1.0 + p.norm_l2()));
            assert!(project_p(&pr, &project_q(&pr, &w)).norm_l2() <= 1e-10 * (1.0 + w.norm_l2()));
        }
    }

    #[test]
    fn continuous_curve_values() {
        let b = continuous_spectrum_curve(0.5, 1.0, 0.0);
        assert_eq!(b, Complex64::new(-0.375, 0.0));
        let l = continuous_spectrum_curve(0.5, 1.0, 1.0);
        assert!((l - Complex64::new(-1.5 - 0.375, 1.0 + 0.25)).norm() < 1e-15);
        let l = continuous_spectrum_curve(0.5, 1.0, -1.0);
        assert!((l - Complex64::new(-1.875, -1.25)).norm() < 1e-15);
        for i in 0..100 {
            let tau = -5.0 + 0.1 * i as f64;
            assert!(continuous_spectrum_curve(0.5, 1.0, tau).re <= -0.375);
        }
    }

    #[test]
    fn semigroups() {
        let g = Grid::new(256, 30.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = RealField::new(&g, (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        assert!(semigroup_w1(0.0, &f).sub(&f).max_abs() < 1e-13);
        let form = DampingForm::Linearization;
        assert!(semigroup_w2(0.0, &f, 0.5, 1.0, form).sub(&f).max_abs() < 1e-13);
        let n0 = f.norm_l2();
        assert!((semigroup_w1(0.7, &f).norm_l2() - n0).abs() < 1e-12 * n0);
        assert!(semigroup_w2(0.7, &f, 0.5, 1.0, form).norm_l2() < n0);
        let xi1 = 2.0 * std::f64::consts::PI / 30.0;
        let m = RealField::from_fn(&g, |x| (xi1 * x).cos());
        let out = forward_transform(&semigroup_w2(1.0, &m, 0.5, 1.0, form));
        let want = 0.5 * (-damping_symbol(0.5, 1.0, xi1, form)).exp();
        assert!((out.mode(1).norm() - want).abs() < 1e-14);
        assert_eq!(damping_symbol(0.5, 1.0, 0.0, DampingForm::Printed), 0.25);
    }

    #[test]
    fn spectrum_small_grid_is_conjugate_symmetric() {
        let g = Grid::new(64, 40.0).unwrap();
        let op = build_operator(&g, 0.5, 1.0).unwrap();
        let rep = discrete_spectrum(&op).unwrap();
        let mut im: Vec<f64> = rep.eigenvalues.iter().map(|l| l.im).collect();
        im.sort_by(f64::total_cmp);
        for (x, y) in im.iter().zip(im.iter().rev()) {
            assert!((x + y).abs() < 1e-6 * (1.0 + x.abs()));
        }
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# a=0.5,c=1,b=-0.375,num_points=64"));
        assert_eq!(text.lines().count(), 66);
    }

    #[test]
    fn linear_fit_recovers_line() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let (s, i) = linear_fit(&x, &y);
        assert!((s + 0.5).abs() < 1e-14 && (i - 2.0).abs() < 1e-14);
    }
}
