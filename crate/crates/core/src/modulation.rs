//! Modulation of the soliton parameters `(c, gamma)` and the coupled evolution
//! of the weighted perturbation `w = e^{ay} I_N v`.
//!
//! The full solution is kept as `u = psi_{c0}(x) + q(x)` in the frame moving
//! with speed `c0`, where `q` is evolved by the KdV perturbation equation. The
//! modulated perturbation is `v(y) = u(y + theta) - psi_c(y)` with
//! `theta = int (c - c0) + sigma gamma`, `sigma` being the configured sign
//! convention for `gamma`.

use std::sync::Arc;

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{forward_transform, sobolev_norm, Grid, RealField, SpectralField};
use crate::imethod::{apply_I, commutator, IMultiplier};
use crate::kdv::{airy_symbol, check_blowup, DiagonalIntegrator, Scheme, Sponge};
use crate::soliton::{eval_soliton, soliton_dc, soliton_dy, SolitonParams};
use crate::spectral_ops::{calibrate_thetas, project_p, Projector, SpectralPair};
use crate::weighted::{apply_weight, WeightParams};

/// Determinant magnitude below which the modulation system is treated as singular.
pub const SINGULAR_DET: f64 = 1e-8;

const NEWTON_MAX_ITER: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModulationConfig {
    /// `sigma` in `(c - c0 + sigma gamma_dot)`; `-1` reproduces the transport
    /// coefficient `c - c0 - gamma_dot`.
    pub gamma_sign: f64,
    /// Coefficient of `e^{ay} d_y (I(psi_c v) - psi_c I v)` in the forcing.
    pub commutator_coeff: f64,
    /// Rate system that keeps `<w, eta_j>` exactly stationary: applies `I_N`
    /// to the soliton terms and moves the `psi_c - psi_{c0}` coupling into
    /// the projected forcing. When false the rates use the bare matrix.
    pub exact_rates: bool,
    /// Truncation radius `R` of the weight.
    pub weight_radius: f64,
}

impl Default for ModulationConfig {
    fn default() -> Self {
        ModulationConfig { gamma_sign: -1.0, commutator_coeff: 2.0, exact_rates: true, weight_radius: 15.0 }
    }
}

impl ModulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gamma_sign != 1.0 && self.gamma_sign != -1.0 {
            return Err(Error::validation(format!("gamma_sign must be +1 or -1, got {}", self.gamma_sign)));
        }
        if !self.commutator_coeff.is_finite() {
            return Err(Error::validation("commutator coefficient must be finite"));
        }
        if self.weight_radius.is_nan() || self.weight_radius <= 0.0 {
            return Err(Error::validation(format!(
                "weight radius must be positive, got {}",
                self.weight_radius
            )));
        }
        Ok(())
    }
}

/// Immutable data shared by every state of one `(grid, a, c0)` setup.
#[derive(Debug, Clone)]
pub struct ModulationContext {
    grid: Arc<Grid>,
    a: f64,
    c0: f64,
    cfg: ModulationConfig,
    weight: WeightParams,
    projector: Projector,
    deta: [RealField; 2],
    psi0: RealField,
}

impl ModulationContext {
    /// Calibrates the biorthogonal pair at `(a, c0)` on `grid`.
    pub fn new(grid: &Arc<Grid>, a: f64, c0: f64, cfg: ModulationConfig) -> Result<Self> {
        let pair = calibrate_thetas(grid, a, c0)?;
        Self::from_pair(Arc::new(pair), grid, cfg)
    }

    pub fn from_pair(pair: Arc<SpectralPair>, grid: &Arc<Grid>, cfg: ModulationConfig) -> Result<Self> {
        cfg.validate()?;
        if !Grid::same(grid, pair.eta1.grid()) {
            return Err(Error::validation("spectral pair was calibrated on a different grid"));
        }
        let (a, c0) = (pair.a, pair.c);
        let weight = WeightParams::new(a, cfg.weight_radius, c0)?;
        let deta = [pair.eta1.derivative(1), pair.eta2.derivative(1)];
        let psi0 = RealField::from_fn(grid, |y| eval_soliton(SolitonParams { c: c0, x0: 0.0 }, y));
        Ok(ModulationContext {
            grid: grid.clone(),
            a,
            c0,
            cfg,
            weight,
            projector: Projector::new(pair),
            deta,
            psi0,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    pub fn config(&self) -> &ModulationConfig {
        &self.cfg
    }

    pub fn weight(&self) -> &WeightParams {
        &self.weight
    }

    pub fn projector(&self) -> &Projector {
        &self.projector
    }

    pub fn pair(&self) -> &SpectralPair {
        self.projector.pair()
    }

    /// `f` with every sample beyond the truncation radius set to zero.
    pub fn clip_to_radius(&self, f: &RealField) -> RealField {
        let r = self.weight.r;
        f.mul_fn(|y| if y > r { 0.0 } else { 1.0 })
    }

    fn eta_inner(&self, f: &RealField) -> Vector2<f64> {
        let k = self.projector.coefficients(f);
        Vector2::new(k[0], k[1])
    }

    fn omega(&self, f: &RealField) -> Result<RealField> {
        apply_weight(&self.weight, f)
    }

    fn soliton(&self, c: f64, x0: f64) -> SolitonParams {
        SolitonParams { c, x0 }
    }

    fn psi_fields(&self, c: f64) -> [RealField; 3] {
        let p = self.soliton(c, 0.0);
        [
            RealField::from_fn(&self.grid, |y| eval_soliton(p, y)),
            RealField::from_fn(&self.grid, |y| soliton_dy(p, y)),
            RealField::from_fn(&self.grid, |y| soliton_dc(p, y)),
        ]
    }
}

/// Perturbation in the modulated frame together with the modulation parameters.
#[derive(Debug, Clone)]
pub struct PerturbationState {
    /// Unweighted perturbation `v = u(. + theta) - psi_c`.
    pub v: RealField,
    /// `I_N v`.
    pub v_tilde: RealField,
    /// Evolved weighted perturbation; equals `omega e^{ay} I_N v` when reconstituted.
    pub w_tilde: RealField,
    pub c: f64,
    pub gamma: f64,
    /// Offset of the modulated frame from the `c0` frame.
    pub theta: f64,
    pub c0: f64,
    pub t: f64,
    /// Current cutoff `N`.
    pub cutoff: f64,
    frame: Vec<Complex64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModulationRates {
    pub c_dot: f64,
    pub gamma_dot: f64,
}

impl ModulationRates {
    pub const ZERO: ModulationRates = ModulationRates { c_dot: 0.0, gamma_dot: 0.0 };

    pub fn is_finite(&self) -> bool {
        self.c_dot.is_finite() && self.gamma_dot.is_finite()
    }
}

/// Solution of the modulation system with the quantities entering the rate bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModulationSolve {
    pub rates: ModulationRates,
    pub matrix: Matrix2<f64>,
    /// Spectral norm of the inverse matrix.
    pub inverse_norm: f64,
    /// `||G||_{L^2}` of the forcing used on the right-hand side.
    pub g_norm: f64,
    /// `2 max_j ||eta_j||_{H^1} ||G||_{L^2}`.
    pub bound: f64,
}

impl ModulationSolve {
    /// `|c_dot| + |gamma_dot| <= bound (1 + 1e-6)`.
    pub fn within_bound(&self) -> bool {
        self.rates.c_dot.abs() + self.rates.gamma_dot.abs() <= self.bound * (1.0 + 1e-6)
    }
}

fn shifted(grid: &Grid, coeffs: &[Complex64], theta: f64) -> Vec<Complex64> {
    // coefficients of f(y + theta)
    let ny = grid.nyquist_slot();
    coeffs
        .iter()
        .zip(grid.wavenumbers())
        .enumerate()
        .map(|(i, (c, &xi))| {
            if i == ny {
                c * (xi * theta).cos()
            } else {
                c * Complex64::from_polar(1.0, xi * theta)
            }
        })
        .collect()
}

fn to_field(grid: &Arc<Grid>, coeffs: Vec<Complex64>) -> RealField {
    SpectralField::new(grid, coeffs).expect("length matches").inverse()
}

/// `v(y) = psi_{c0}(y + theta) + q(y + theta) - psi_c(y)` for frame coefficients `q`.
fn modulated(ctx: &ModulationContext, frame: &[Complex64], c: f64, theta: f64) -> RealField {
    let q = to_field(&ctx.grid, shifted(&ctx.grid, frame, theta));
    let p0 = ctx.soliton(ctx.c0, -theta);
    let pc = ctx.soliton(c, 0.0);
    let grid = ctx.grid.clone();
    let mut out = q;
    for (j, v) in out.samples_mut().iter_mut().enumerate() {
        let y = grid.x(j);
        *v += eval_soliton(p0, y) - eval_soliton(pc, y);
    }
    out
}

fn transport(a: f64, w: &RealField) -> RealField {
    let mut t = w.derivative(1);
    t.axpy(-a, w);
    t
}

/// Term-wise pieces of the forcing for given `(w, v, c)`.
struct Pieces {
    /// `(d_y - a) w`.
    transport: RealField,
    /// `-omega e^{ay} I d_y (v^2)`.
    quadratic: RealField,
    /// `-k omega e^{ay} d_y (I(psi_c v) - psi_c I v)`.
    commutator: RealField,
    /// `omega e^{ay} I psi_c'` and `omega e^{ay} I d_c psi_c`.
    sol_y: RealField,
    sol_c: RealField,
    psi: [RealField; 3],
}

fn pieces(ctx: &ModulationContext, im: &IMultiplier, w: &RealField, v: &RealField, c: f64) -> Result<Pieces> {
    let psi = ctx.psi_fields(c);
    let quadratic = ctx.omega(&apply_I(im, &v.dealiased_product(v).derivative(1)))?.scale(-1.0);
    let iv = apply_I(im, v);
    // I(psi v) - psi I v = [I(psi v) - I psi I v] + (I psi - psi) I v
    let ipsi = apply_I(im, &psi[0]);
    let comm = commutator(im, &psi[0], v).add(&ipsi.sub(&psi[0]).dealiased_product(&iv));
    let commutator = ctx.omega(&comm.derivative(1))?.scale(-ctx.cfg.commutator_coeff);
    let sol_y = ctx.omega(&apply_I(im, &psi[1]))?;
    let sol_c = ctx.omega(&apply_I(im, &psi[2]))?;
    Ok(Pieces { transport: transport(ctx.a, w), quadratic, commutator, sol_y, sol_c, psi })
}

impl Pieces {
    fn g(&self, c: f64, c0: f64) -> RealField {
        let mut g = self.transport.scale(c - c0);
        g.axpy(1.0, &self.quadratic);
        g.axpy(1.0, &self.commutator);
        g
    }

    fn f(&self, c: f64, c0: f64, sigma: f64, r: ModulationRates) -> RealField {
        let mut f = self.transport.scale(c - c0 + sigma * r.gamma_dot);
        f.axpy(1.0, &self.quadratic);
        f.axpy(1.0, &self.commutator);
        f.axpy(sigma * r.gamma_dot, &self.sol_y);
        f.axpy(-r.c_dot, &self.sol_c);
        f
    }
}

/// `-2 (d_y - a)((psi_c - psi_{c0}) w)`.
fn coupling(ctx: &ModulationContext, psi_c: &RealField, w: &RealField) -> RealField {
    transport(ctx.a, &psi_c.sub(&ctx.psi0).dealiased_product(w)).scale(-2.0)
}

/// Matrix and right-hand side of the modulation system.
fn system(
    ctx: &ModulationContext,
    w: &RealField,
    c: f64,
    p: &Pieces,
) -> Result<(Matrix2<f64>, Vector2<f64>, RealField)> {
    let sigma = ctx.cfg.gamma_sign;
    let m = if ctx.cfg.exact_rates {
        let ey = ctx.eta_inner(&p.sol_y);
        let ec = ctx.eta_inner(&p.sol_c);
        let wc = ctx.eta_inner(&p.transport);
        Matrix2::new(-sigma * (ey[0] + wc[0]), ec[0], -sigma * (ey[1] + wc[1]), ec[1])
    } else {
        let p0 = ctx.soliton(ctx.c0, 0.0);
        let psi0_y = RealField::from_fn(&ctx.grid, |y| soliton_dy(p0, y));
        let psi0_c = RealField::from_fn(&ctx.grid, |y| soliton_dc(p0, y));
        let ey = ctx.eta_inner(&ctx.omega(&p.psi[1].sub(&psi0_y))?);
        let ec = ctx.eta_inner(&ctx.omega(&p.psi[2].sub(&psi0_c))?);
        let wc = [-w.inner(&ctx.deta[0]), -w.inner(&ctx.deta[1])];
        Matrix2::new(-sigma * (1.0 + ey[0] + wc[0]), ec[0], -sigma * (ey[1] + wc[1]), 1.0 + ec[1])
    };
    let mut g = p.g(c, ctx.c0);
    if ctx.cfg.exact_rates {
        g.axpy(1.0, &coupling(ctx, &p.psi[0], w));
    }
    Ok((m, ctx.eta_inner(&g), g))
}

/// `G = (c - c0)(d_y - a) w - e^{ay} I d_y(v^2) - k e^{ay} d_y (I(psi_c v) - psi_c I v)`.
pub fn gtilde(ctx: &ModulationContext, im: &IMultiplier, state: &PerturbationState) -> Result<RealField> {
    let p = pieces(ctx, im, &state.w_tilde, &state.v, state.c)?;
    Ok(p.g(state.c, ctx.c0))
}

/// `F = (c - c0 + sigma gamma_dot)(d_y - a) w - e^{ay} I d_y(v^2)
/// + e^{ay}(sigma gamma_dot d_y - c_dot d_c) I psi_c - k e^{ay} d_y(I(psi_c v) - psi_c I v)`.
pub fn ftilde(
    ctx: &ModulationContext,
    im: &IMultiplier,
    state: &PerturbationState,
    rates: ModulationRates,
) -> Result<RealField> {
    let p = pieces(ctx, im, &state.w_tilde, &state.v, state.c)?;
    Ok(p.f(state.c, ctx.c0, ctx.cfg.gamma_sign, rates))
}

fn check_det(m: &Matrix2<f64>) -> Result<()> {
    let det = m.determinant();
    if !(det.abs() >= SINGULAR_DET) {
        return Err(Error::SingularModulation { det: det.abs() });
    }
    Ok(())
}

/// The 2x2 matrix acting on `(gamma_dot, c_dot)`.
pub fn modulation_matrix(
    ctx: &ModulationContext,
    im: &IMultiplier,
    state: &PerturbationState,
) -> Result<Matrix2<f64>> {
    let p = pieces(ctx, im, &state.w_tilde, &state.v, state.c)?;
    let (m, _, _) = system(ctx, &state.w_tilde, state.c, &p)?;
    check_det(&m)?;
    Ok(m)
}

fn solve_from(ctx: &ModulationContext, w: &RealField, c: f64, p: &Pieces) -> Result<ModulationSolve> {
    let (m, rhs, g) = system(ctx, w, c, p)?;
    check_det(&m)?;
    let inv = m.try_inverse().ok_or(Error::SingularModulation { det: 0.0 })?;
    let sol = inv * rhs;
    let rates = ModulationRates { gamma_dot: sol[0], c_dot: sol[1] };
    if !rates.is_finite() {
        return Err(Error::SingularModulation { det: m.determinant().abs() });
    }
    let g_norm = g.norm_l2();
    Ok(ModulationSolve {
        rates,
        matrix: m,
        inverse_norm: inv.singular_values().max(),
        g_norm,
        bound: 2.0 * ctx.pair().max_eta_h1() * g_norm,
    })
}

/// Solves the modulation system for `(gamma_dot, c_dot)`.
pub fn solve_modulation(
    ctx: &ModulationContext,
    im: &IMultiplier,
    state: &PerturbationState,
) -> Result<ModulationSolve> {
    let p = pieces(ctx, im, &state.w_tilde, &state.v, state.c)?;
    solve_from(ctx, &state.w_tilde, state.c, &p)
}

impl PerturbationState {
    /// State for `u(0) = psi_{c0} + v0` with `c = c0`, `gamma = 0` and `w`
    /// reconstituted from `v0` at cutoff `im`.
    pub fn new(ctx: &ModulationContext, v0: &RealField, im: &IMultiplier) -> Result<Self> {
        if !Grid::same(v0.grid(), &ctx.grid) {
            return Err(Error::validation("perturbation lives on a different grid"));
        }
        let mut st = PerturbationState {
            v: v0.clone(),
            v_tilde: v0.clone(),
            w_tilde: v0.clone(),
            c: ctx.c0,
            gamma: 0.0,
            theta: 0.0,
            c0: ctx.c0,
            t: 0.0,
            cutoff: im.cutoff(),
            frame: forward_transform(v0).coeffs().to_vec(),
        };
        st.reconstitute(ctx, im)?;
        Ok(st)
    }

    /// Fourier coefficients of `u - psi_{c0}` in the `c0` frame.
    pub fn frame_coeffs(&self) -> &[Complex64] {
        &self.frame
    }

    fn refresh_v(&mut self, ctx: &ModulationContext, im: &IMultiplier) {
        self.v = modulated(ctx, &self.frame, self.c, self.theta);
        self.v_tilde = apply_I(im, &self.v);
    }

    /// Recomputes `v`, `I_N v` and `w = omega e^{ay} I_N v` from the full solution.
    pub fn reconstitute(&mut self, ctx: &ModulationContext, im: &IMultiplier) -> Result<()> {
        self.cutoff = im.cutoff();
        self.refresh_v(ctx, im);
        self.w_tilde = ctx.omega(&self.v_tilde)?;
        Ok(())
    }

    /// `omega e^{ay} I_N v` without touching the evolved `w_tilde`.
    pub fn derived_w(&self, ctx: &ModulationContext, im: &IMultiplier) -> Result<RealField> {
        ctx.omega(&apply_I(im, &modulated(ctx, &self.frame, self.c, self.theta)))
    }

    /// Newton iteration on `(c, theta)` so that the reconstituted `w` satisfies
    /// `<w, eta_j> = 0`; returns the jumps `(delta c, delta gamma)`.
    pub fn orthogonalize(&mut self, ctx: &ModulationContext, im: &IMultiplier) -> Result<(f64, f64)> {
        let (c_start, gamma_start) = (self.c, self.gamma);
        let sigma = ctx.cfg.gamma_sign;
        for _ in 0..NEWTON_MAX_ITER {
            self.reconstitute(ctx, im)?;
            let g = ctx.eta_inner(&self.w_tilde);
            let scale = self.w_tilde.norm_l2();
            if g.norm() <= 1e-14 * scale || g.norm() == 0.0 {
                break;
            }
            let p0 = ctx.soliton(ctx.c0, -self.theta);
            let q_y = to_field(&ctx.grid, shifted(&ctx.grid, &self.frame, self.theta)).derivative(1);
            let d_theta = q_y.add(&RealField::from_fn(&ctx.grid, |y| soliton_dy(p0, y)));
            let pc = ctx.soliton(self.c, 0.0);
            let d_c = RealField::from_fn(&ctx.grid, |y| -soliton_dc(pc, y));
            let j1 = ctx.eta_inner(&ctx.omega(&apply_I(im, &d_theta))?);
            let j2 = ctx.eta_inner(&ctx.omega(&apply_I(im, &d_c))?);
            let jac = Matrix2::new(j1[0], j2[0], j1[1], j2[1]);
            check_det(&jac)?;
            let step = jac.try_inverse().ok_or(Error::SingularModulation { det: 0.0 })? * (-g);
            self.theta += step[0];
            self.gamma += sigma * step[0];
            self.c += step[1];
            if !(self.c > 0.0 && self.c.is_finite() && self.theta.is_finite()) {
                return Err(Error::SingularModulation { det: jac.determinant().abs() });
            }
        }
        self.reconstitute(ctx, im)?;
        Ok((self.c - c_start, self.gamma - gamma_start))
    }

    /// `||P w|| / ||w||` (zero for `w = 0`).
    pub fn projection_residual(&self, ctx: &ModulationContext) -> f64 {
        let n = self.w_tilde.norm_l2();
        if n == 0.0 {
            0.0
        } else {
            project_p(&ctx.projector, &self.w_tilde).norm_l2() / n
        }
    }
}

/// Outcome of one coupled step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    /// `||P w||` removed by the projection after the step.
    pub removed: f64,
    /// `||P w|| / ||w||` after the projection.
    pub residual: f64,
}

/// One-step integrator for the full solution, `w`, `c`, `gamma` and `theta`.
#[derive(Debug, Clone)]
pub struct CoupledEvolver {
    ctx: Arc<ModulationContext>,
    im: IMultiplier,
    dt: f64,
    integrator: DiagonalIntegrator,
    sponge: Option<Vec<f64>>,
}

impl CoupledEvolver {
    pub fn new(ctx: Arc<ModulationContext>, im: IMultiplier, dt: f64, sponge: Option<Sponge>) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::validation(format!("time step must be positive, got {dt}")));
        }
        let grid = ctx.grid.clone();
        let n = grid.num_points();
        let ny = grid.nyquist_slot();
        let mut symbol = airy_symbol(&grid, ctx.c0);
        symbol.extend(grid.wavenumbers().iter().enumerate().map(|(i, &xi)| {
            let z = Complex64::new(-ctx.a, xi);
            let s = z * (ctx.c0 - z * z);
            if i == ny {
                Complex64::new(s.re, 0.0)
            } else {
                s
            }
        }));
        symbol.extend([Complex64::default(); 3]);
        debug_assert_eq!(symbol.len(), 2 * n + 3);
        let integrator = DiagonalIntegrator::new(&symbol, dt, Scheme::IntegratingFactorRk4);
        let sponge = sponge.map(|s| s.factors(&grid, dt));
        Ok(CoupledEvolver { ctx, im, dt, integrator, sponge })
    }

    pub fn context(&self) -> &Arc<ModulationContext> {
        &self.ctx
    }

    pub fn multiplier(&self) -> &IMultiplier {
        &self.im
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn set_multiplier(&mut self, im: IMultiplier) {
        self.im = im;
    }

    fn rhs(&self, z: &[Complex64]) -> Result<Vec<Complex64>> {
        let ctx = &*self.ctx;
        let grid = &ctx.grid;
        let n = grid.num_points();
        let (c, theta) = (z[2 * n].re, z[2 * n + 2].re);
        let q = to_field(grid, z[..n].to_vec());
        let w = to_field(grid, z[n..2 * n].to_vec());
        let mut out = Vec::with_capacity(2 * n + 3);

        // full-solution perturbation: q_t = d(-d^2 + c0) q - d(2 psi_{c0} q + q^2)
        let flux = ctx.psi0.scale(2.0).add(&q).dealiased_product(&q).derivative(1).scale(-1.0);
        out.extend_from_slice(forward_transform(&flux).coeffs());

        let v = modulated(ctx, &z[..n], c, theta);
        let p = pieces(ctx, &self.im, &w, &v, c)?;
        let sol = solve_from(ctx, &w, c, &p)?;
        let sigma = ctx.cfg.gamma_sign;
        let f = p.f(c, ctx.c0, sigma, sol.rates);
        let dw = if ctx.cfg.exact_rates {
            let mut dw = crate::spectral_ops::project_q(&ctx.projector, &f.add(&coupling(ctx, &p.psi[0], &w)));
            dw.axpy(-2.0, &transport(ctx.a, &ctx.psi0.dealiased_product(&w)));
            dw
        } else {
            let mut dw = crate::spectral_ops::project_q(&ctx.projector, &f);
            dw.axpy(-2.0, &transport(ctx.a, &p.psi[0].dealiased_product(&w)));
            dw
        };
        let mut dw = forward_transform(&dw).coeffs().to_vec();
        dw[grid.nyquist_slot()] = Complex64::default();
        out.extend(dw);
        let r = sol.rates;
        out.push(Complex64::new(r.c_dot, 0.0));
        out.push(Complex64::new(r.gamma_dot, 0.0));
        out.push(Complex64::new(c - ctx.c0 + sigma * r.gamma_dot, 0.0));
        Ok(out)
    }

    /// Advances `state` by `dt`, re-applies `Q` to `w` and refreshes `v`.
    pub fn step(&self, state: &mut PerturbationState) -> Result<StepReport> {
        let ctx = &*self.ctx;
        let grid = &ctx.grid;
        let n = grid.num_points();
        let mut z = Vec::with_capacity(2 * n + 3);
        z.extend_from_slice(&state.frame);
        z.extend_from_slice(forward_transform(&state.w_tilde).coeffs());
        z.push(Complex64::new(state.c, 0.0));
        z.push(Complex64::new(state.gamma, 0.0));
        z.push(Complex64::new(state.theta, 0.0));
        let mut failure = None;
        self.integrator.step(&mut z, |s| match self.rhs(s) {
            Ok(v) => v,
            Err(e) => {
                failure.get_or_insert(e);
                vec![Complex64::default(); s.len()]
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        let t = state.t + self.dt;
        check_blowup(&z, state.t)?;
        let (c, gamma, theta) = (z[2 * n].re, z[2 * n + 1].re, z[2 * n + 2].re);
        if !(c > 0.0) {
            return Err(Error::Instability { t, detail: format!("soliton speed left the admissible range: c = {c}") });
        }
        let mut frame = z[..n].to_vec();
        if let Some(f) = &self.sponge {
            let mut u = to_field(grid, frame);
            for (x, s) in u.samples_mut().iter_mut().zip(f) {
                *x *= s;
            }
            frame = forward_transform(&u).coeffs().to_vec();
        }
        let w = to_field(grid, z[n..2 * n].to_vec());
        let pw = project_p(&ctx.projector, &w);
        let removed = pw.norm_l2();
        state.w_tilde = w.sub(&pw);
        state.frame = frame;
        state.c = c;
        state.gamma = gamma;
        state.theta = theta;
        state.t = t;
        state.refresh_v(ctx, &self.im);
        Ok(StepReport { removed, residual: state.projection_residual(ctx) })
    }

    /// Rates and bound quantities at the current state.
    pub fn diagnose(&self, state: &PerturbationState) -> Result<ModulationSolve> {
        solve_modulation(&self.ctx, &self.im, state)
    }
}

/// One coupled step of length `dt` with a freshly built integrator.
pub fn evolve_coupled(
    ctx: &Arc<ModulationContext>,
    im: &IMultiplier,
    state: &mut PerturbationState,
    dt: f64,
) -> Result<StepReport> {
    CoupledEvolver::new(ctx.clone(), *im, dt, None)?.step(state)
}

/// `||w||_{H^1}` of the evolved weighted perturbation.
pub fn w_h1(state: &PerturbationState) -> f64 {
    sobolev_norm(&state.w_tilde, 1.0)
}
