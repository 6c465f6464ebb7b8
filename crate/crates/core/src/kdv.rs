//! Pseudospectral time integration of `u_t + u_xxx + (u^2)_x = 0`.
//!
//! The linear part is diagonal in Fourier space and is integrated exactly,
//! either with an integrating factor (RK4 on the transformed variable) or with
//! exponential time differencing (ETDRK4). The quadratic term is explicit and
//! optionally dealiased with the 2/3 rule.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{forward_transform, sobolev_norm, Grid, RealField, SpectralField};

/// Coefficient magnitude treated as blow-up.
pub const BLOWUP_GUARD: f64 = 1e8;

/// Amplitude-independent part of the explicit RK4 stability region along the
/// imaginary axis.
const RK4_IMAG_LIMIT: f64 = 2.0 * std::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    IntegratingFactorRk4,
    Etdrk4,
}

/// Absorbing layer near the left edge of the box: after each step the field
/// is multiplied by `exp(-sigma(x) dt)` with `sigma` ramping smoothly from 0 at
/// `x = start` to `strength` at `x = start - width` and beyond.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Sponge {
    pub start: f64,
    pub width: f64,
    pub strength: f64,
}

impl Sponge {
    pub fn sigma(&self, x: f64) -> f64 {
        let t = ((self.start - x) / self.width).clamp(0.0, 1.0);
        self.strength * t * t * (3.0 - 2.0 * t)
    }

    pub(crate) fn factors(&self, grid: &Grid, dt: f64) -> Vec<f64> {
        (0..grid.num_points()).map(|j| (-self.sigma(grid.x(j)) * dt).exp()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_end: f64,
    pub dealias_enabled: bool,
    pub scheme: Scheme,
    /// Drop the quadratic term (pure Airy flow).
    pub nonlinear_enabled: bool,
    /// Speed of the co-moving frame: solves `u_t + u_xxx - frame_speed u_x + (u^2)_x = 0`.
    pub frame_speed: f64,
    /// Observers run every this many steps.
    pub observe_every: usize,
    pub sponge: Option<Sponge>,
}

impl SolverConfig {
    pub fn new(dt: f64, t_end: f64) -> Result<Self> {
        let cfg = SolverConfig {
            dt,
            t_end,
            dealias_enabled: true,
            scheme: Scheme::IntegratingFactorRk4,
            nonlinear_enabled: true,
            frame_speed: 0.0,
            observe_every: 100,
            sponge: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks the amplitude-independent constraints. The linear part is
    /// integrated exactly by both schemes, so the only a priori bound is on
    /// the step count; the amplitude-dependent bound of the explicit term is
    /// reported by [`nonlinear_dt_limit`] and enforced at run time by the
    /// blow-up guard.
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::validation(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return Err(Error::validation(format!("t_end must be positive, got {}", self.t_end)));
        }
        if self.dt > self.t_end {
            return Err(Error::validation("dt exceeds t_end"));
        }
        if self.observe_every == 0 {
            return Err(Error::validation("observe_every must be at least 1"));
        }
        if let Some(s) = self.sponge {
            if !(s.width > 0.0 && s.strength >= 0.0) {
                return Err(Error::validation("sponge needs positive width and nonnegative strength"));
            }
        }
        Ok(())
    }

    pub fn num_steps(&self) -> usize {
        (self.t_end / self.dt).round().max(1.0) as usize
    }
}

/// Largest dt for which the explicit quadratic term stays inside the RK4
/// stability region, given the field amplitude `max|u|`.
pub fn nonlinear_dt_limit(grid: &Grid, amplitude: f64) -> f64 {
    let xi = grid.dealias_cutoff() as f64 * 2.0 * std::f64::consts::PI / grid.box_length();
    RK4_IMAG_LIMIT / (2.0 * amplitude.max(1e-300) * xi)
}

/// Exponential integrator for `v_t = L v + N(v)` with diagonal `L`.
#[derive(Debug, Clone)]
pub struct DiagonalIntegrator {
    scheme: Scheme,
    dt: f64,
    e: Vec<Complex64>,
    e2: Vec<Complex64>,
    // ETDRK4 coefficients
    q: Vec<Complex64>,
    f1: Vec<Complex64>,
    f2: Vec<Complex64>,
    f3: Vec<Complex64>,
}

impl DiagonalIntegrator {
    pub fn new(symbol: &[Complex64], dt: f64, scheme: Scheme) -> Self {
        let e: Vec<_> = symbol.iter().map(|l| (l * dt).exp()).collect();
        let e2: Vec<_> = symbol.iter().map(|l| (l * dt * 0.5).exp()).collect();
        let (mut q, mut f1, mut f2, mut f3) = (vec![], vec![], vec![], vec![]);
        if scheme == Scheme::Etdrk4 {
            // contour-integral evaluation of the phi functions
            const M: usize = 32;
            let roots: Vec<Complex64> = (1..=M)
                .map(|j| {
                    Complex64::from_polar(1.0, std::f64::consts::PI * (j as f64 - 0.5) / M as f64)
                })
                .collect();
            for l in symbol {
                let lh = l * dt;
                let (mut sq, mut s1, mut s2, mut s3) = (Complex64::default(), Complex64::default(), Complex64::default(), Complex64::default());
                // use both halves of the circle so complex symbols are handled
                for r in roots.iter().flat_map(|r| [*r, r.conj()]) {
                    let z = lh + r;
                    let ez = z.exp();
                    let z3 = z * z * z;
                    sq += ((z * 0.5).exp() - 1.0) / z;
                    s1 += (-4.0 - z + ez * (4.0 - 3.0 * z + z * z)) / z3;
                    s2 += (2.0 + z + ez * (z - 2.0)) / z3;
                    s3 += (-4.0 - 3.0 * z - z * z + ez * (4.0 - z)) / z3;
                }
                let w = dt / (2 * M) as f64;
                q.push(sq * w);
                f1.push(s1 * w);
                f2.push(s2 * w);
                f3.push(s3 * w);
            }
        }
        DiagonalIntegrator { scheme, dt, e, e2, q, f1, f2, f3 }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// One step of length `dt`; `nonlinear` maps coefficients to the
    /// coefficients of `N(v)`.
    pub fn step<F>(&self, v: &mut [Complex64], mut nonlinear: F)
    where
        F: FnMut(&[Complex64]) -> Vec<Complex64>,
    {
        let n = v.len();
        let h = self.dt;
        match self.scheme {
            Scheme::IntegratingFactorRk4 => {
                let k1: Vec<_> = nonlinear(v).into_iter().map(|x| x * h).collect();
                let s2: Vec<_> = (0..n).map(|i| self.e2[i] * (v[i] + 0.5 * k1[i])).collect();
                let k2: Vec<_> = nonlinear(&s2).into_iter().map(|x| x * h).collect();
                let s3: Vec<_> = (0..n).map(|i| self.e2[i] * v[i] + 0.5 * k2[i]).collect();
                let k3: Vec<_> = nonlinear(&s3).into_iter().map(|x| x * h).collect();
                let s4: Vec<_> = (0..n).map(|i| self.e[i] * v[i] + self.e2[i] * k3[i]).collect();
                let k4: Vec<_> = nonlinear(&s4).into_iter().map(|x| x * h).collect();
                for i in 0..n {
                    v[i] = self.e[i] * v[i]
                        + (self.e[i] * k1[i] + 2.0 * self.e2[i] * (k2[i] + k3[i]) + k4[i]) / 6.0;
                }
            }
            Scheme::Etdrk4 => {
                let nv = nonlinear(v);
                let a: Vec<_> = (0..n).map(|i| self.e2[i] * v[i] + self.q[i] * nv[i]).collect();
                let na = nonlinear(&a);
                let b: Vec<_> = (0..n).map(|i| self.e2[i] * v[i] + self.q[i] * na[i]).collect();
                let nb = nonlinear(&b);
                let c: Vec<_> = (0..n)
                    .map(|i| self.e2[i] * a[i] + self.q[i] * (2.0 * nb[i] - nv[i]))
                    .collect();
                let nc = nonlinear(&c);
                for i in 0..n {
                    v[i] = self.e[i] * v[i]
                        + nv[i] * self.f1[i]
                        + 2.0 * (na[i] + nb[i]) * self.f2[i]
                        + nc[i] * self.f3[i];
                }
            }
        }
    }
}

/// Linear KdV symbol `i xi^3 + i frame_speed xi` (with our transform
/// convention `u = sum u_hat exp(i xi x)`).
pub fn airy_symbol(grid: &Grid, frame_speed: f64) -> Vec<Complex64> {
    grid.wavenumbers()
        .iter()
        .map(|&xi| Complex64::new(0.0, xi * xi * xi + frame_speed * xi))
        .collect()
}

/// `-(i xi) * (u^2)^hat`, dealiased when requested.
pub(crate) fn quadratic_flux(grid: &Grid, coeffs: &[Complex64], dealias: bool) -> Vec<Complex64> {
    let mut u = Vec::with_capacity(coeffs.len());
    grid.inverse_slice(coeffs, &mut u);
    for x in u.iter_mut() {
        *x *= *x;
    }
    let mut out = Vec::with_capacity(coeffs.len());
    grid.forward_slice(&u, &mut out);
    let cut = grid.dealias_cutoff();
    let ny = grid.nyquist_slot();
    for (i, (c, &xi)) in out.iter_mut().zip(grid.wavenumbers()).enumerate() {
        if i == ny || (dealias && grid.mode(i).abs() > cut) {
            *c = Complex64::default();
        } else {
            *c *= Complex64::new(0.0, -xi);
        }
    }
    out
}

pub(crate) fn check_blowup(coeffs: &[Complex64], t: f64) -> Result<()> {
    let mut worst = 0.0f64;
    for c in coeffs {
        let m = c.norm();
        if !m.is_finite() {
            return Err(Error::Instability { t, detail: "non-finite Fourier coefficient".into() });
        }
        worst = worst.max(m);
    }
    if worst > BLOWUP_GUARD {
        return Err(Error::Instability {
            t,
            detail: format!("coefficient magnitude {worst:e} exceeds {BLOWUP_GUARD:e}"),
        });
    }
    Ok(())
}

/// Stateful KdV stepper on a fixed grid.
#[derive(Debug, Clone)]
pub struct KdvSolver {
    grid: Arc<Grid>,
    cfg: SolverConfig,
    integrator: DiagonalIntegrator,
    sponge: Option<Vec<f64>>,
}

impl KdvSolver {
    pub fn new(grid: &Arc<Grid>, cfg: &SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let symbol = airy_symbol(grid, cfg.frame_speed);
        Ok(KdvSolver {
            grid: grid.clone(),
            cfg: cfg.clone(),
            integrator: DiagonalIntegrator::new(&symbol, cfg.dt, cfg.scheme),
            sponge: cfg.sponge.map(|s| s.factors(grid, cfg.dt)),
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    /// Advance Fourier coefficients by one step; `t` is used for diagnostics.
    pub fn advance(&self, coeffs: &mut Vec<Complex64>, t: f64) -> Result<()> {
        let grid = &self.grid;
        let dealias = self.cfg.dealias_enabled;
        if self.cfg.nonlinear_enabled {
            self.integrator.step(coeffs, |c| quadratic_flux(grid, c, dealias));
        } else {
            self.integrator.step(coeffs, |c| vec![Complex64::default(); c.len()]);
        }
        if let Some(f) = &self.sponge {
            let mut u = Vec::new();
            grid.inverse_slice(coeffs, &mut u);
            for (x, s) in u.iter_mut().zip(f) {
                *x *= s;
            }
            grid.forward_slice(&u, coeffs);
        }
        check_blowup(coeffs, t + self.cfg.dt)
    }
}

/// Advance `u` by one step of `cfg.dt`.
pub fn step(u: &RealField, cfg: &SolverConfig) -> Result<RealField> {
    let solver = KdvSolver::new(u.grid(), cfg)?;
    let mut c = forward_transform(u).coeffs().to_vec();
    solver.advance(&mut c, 0.0)?;
    Ok(SpectralField::new(u.grid(), c)?.inverse())
}

/// Columns of a time series sampled at strictly increasing times.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub columns: Vec<String>,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl TimeSeries {
    pub fn new(columns: &[&str]) -> Self {
        TimeSeries {
            columns: columns.iter().map(|s| s.to_string()).collect(),
            times: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn push(&mut self, t: f64, row: Vec<f64>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::validation("row width does not match columns"));
        }
        if let Some(&last) = self.times.last() {
            if t <= last {
                return Err(Error::validation(format!("time {t} not after {last}")));
            }
        }
        self.times.push(t);
        self.values.push(row);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.columns.iter().position(|c| c == name)?;
        Some(self.values.iter().map(|r| r[idx]).collect())
    }
}

/// Error raised inside a run, with the series collected so far.
#[derive(Debug)]
pub struct RunFailure {
    pub error: Error,
    pub partial: TimeSeries,
}

/// Iterate the solver from `u0`, calling `observe` at t = 0 and every
/// `observe_every` steps (and at the final step).
pub fn run_with<F>(
    u0: &RealField,
    cfg: &SolverConfig,
    columns: &[&str],
    mut observe: F,
) -> std::result::Result<(TimeSeries, RealField), RunFailure>
where
    F: FnMut(f64, &RealField) -> Vec<f64>,
{
    let mut series = TimeSeries::new(columns);
    let solver = match KdvSolver::new(u0.grid(), cfg) {
        Ok(s) => s,
        Err(error) => return Err(RunFailure { error, partial: series }),
    };
    let grid = u0.grid().clone();
    let mut coeffs = forward_transform(u0).coeffs().to_vec();
    let _ = series.push(0.0, observe(0.0, u0));
    let steps = cfg.num_steps();
    let mut field = u0.clone();
    for n in 0..steps {
        let t = n as f64 * cfg.dt;
        if let Err(error) = solver.advance(&mut coeffs, t) {
            return Err(RunFailure { error, partial: series });
        }
        if (n + 1) % cfg.observe_every == 0 || n + 1 == steps {
            let tn = (n + 1) as f64 * cfg.dt;
            field = SpectralField::new(&grid, coeffs.clone()).expect("length").inverse();
            let row = observe(tn, &field);
            let _ = series.push(tn, row);
        }
    }
    Ok((series, field))
}

/// Standard observer columns.
pub const OBSERVER_COLUMNS: [&str; 3] = ["mass", "hamiltonian", "h1_norm"];

/// Run with the standard observers `(mass, hamiltonian, h1_norm)`.
pub fn run(u0: &RealField, cfg: &SolverConfig) -> std::result::Result<TimeSeries, RunFailure> {
    run_with(u0, cfg, &OBSERVER_COLUMNS, |_, u| {
        vec![mass(u), hamiltonian(u), sobolev_norm(u, 1.0)]
    })
    .map(|(s, _)| s)
}

/// `H(u) = int |u_x|^2 - (2/3) int u^3`.
pub fn hamiltonian(u: &RealField) -> f64 {
    let ux = u.derivative(1);
    let dx = u.grid().spacing();
    let kinetic: f64 = ux.samples().iter().map(|v| v * v).sum::<f64>() * dx;
    let cubic: f64 = u.samples().iter().map(|v| v * v * v).sum::<f64>() * dx;
    kinetic - 2.0 / 3.0 * cubic
}

/// `M(u) = int u^2`.
pub fn mass(u: &RealField) -> f64 {
    u.inner(u)
}
