//! Dyadic `X^{s,b,1}` norms of spacetime samples, smooth time cutoffs, and
//! numerical probes of the linear Airy estimates.
//!
//! Spacetime coefficients use
//!
//! ```text
//! f_hat(tau_l, xi_k) = (1 / (nt nx)) sum_{m,j} f(t_m, x_j) exp(-i (xi_k x_j + tau_l t_m))
//! ```
//!
//! on a uniform time window of length `T_w = nt dt`, so that
//! `sum |f|^2 dt dx = L T_w sum |f_hat|^2`. Only magnitudes enter the norms.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::grid::{forward_transform, sobolev_norm, Grid, RealField, SpectralField};
use crate::spectral_ops::{damping_symbol, DampingForm};

/// Default number of time samples on the window `[-2 delta, 2 delta)`.
pub const DEFAULT_TIME_SAMPLES: usize = 256;

/// Real samples `f(t_m, x_j)`, stored time-major.
#[derive(Debug, Clone)]
pub struct SpacetimeField {
    grid: Arc<Grid>,
    t0: f64,
    dt: f64,
    num_times: usize,
    values: Vec<f64>,
}

impl SpacetimeField {
    /// Samples at `t_m = t0 + m dt`, `m < num_times`.
    pub fn new(grid: &Arc<Grid>, t0: f64, dt: f64, num_times: usize, values: Vec<f64>) -> Result<Self> {
        if num_times < 2 {
            return Err(Error::validation("a spacetime field needs at least two time samples"));
        }
        if !(dt.is_finite() && dt > 0.0 && t0.is_finite()) {
            return Err(Error::validation(format!("invalid time lattice t0 = {t0}, dt = {dt}")));
        }
        if values.len() != num_times * grid.num_points() {
            return Err(Error::validation(format!(
                "spacetime field has {} values, expected {} x {}",
                values.len(),
                num_times,
                grid.num_points()
            )));
        }
        Ok(SpacetimeField { grid: grid.clone(), t0, dt, num_times, values })
    }

    /// Zero field on `[-2 delta, 2 delta)` with `num_times` samples.
    pub fn window(grid: &Arc<Grid>, delta: f64, num_times: usize) -> Result<Self> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(Error::validation(format!("delta must be positive, got {delta}")));
        }
        let dt = 4.0 * delta / num_times as f64;
        Self::new(grid, -2.0 * delta, dt, num_times, vec![0.0; num_times * grid.num_points()])
    }

    /// Samples `f(t, x)` on the window `[-2 delta, 2 delta)`.
    pub fn from_fn(
        grid: &Arc<Grid>,
        delta: f64,
        num_times: usize,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        let mut out = Self::window(grid, delta, num_times)?;
        let xs = grid.points();
        let nx = grid.num_points();
        for m in 0..num_times {
            let t = out.time(m);
            for (v, &x) in out.values[m * nx..(m + 1) * nx].iter_mut().zip(&xs) {
                *v = f(t, x);
            }
        }
        Ok(out)
    }

    /// Stacks spatial profiles `g(t_m)` on the window `[-2 delta, 2 delta)`.
    pub fn from_profiles(
        grid: &Arc<Grid>,
        delta: f64,
        num_times: usize,
        mut g: impl FnMut(f64) -> RealField,
    ) -> Result<Self> {
        let mut out = Self::window(grid, delta, num_times)?;
        let nx = grid.num_points();
        for m in 0..num_times {
            let row = g(out.time(m));
            if row.samples().len() != nx {
                return Err(Error::validation("profile lives on a different grid"));
            }
            out.values[m * nx..(m + 1) * nx].copy_from_slice(row.samples());
        }
        Ok(out)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn num_times(&self) -> usize {
        self.num_times
    }

    pub fn time_step(&self) -> f64 {
        self.dt
    }

    pub fn time(&self, m: usize) -> f64 {
        self.t0 + m as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.num_times).map(|m| self.time(m)).collect()
    }

    /// Length `nt dt` of the periodic time window.
    pub fn window_length(&self) -> f64 {
        self.num_times as f64 * self.dt
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, m: usize) -> &[f64] {
        let nx = self.grid.num_points();
        &self.values[m * nx..(m + 1) * nx]
    }

    /// Time slice as a spatial field.
    pub fn slice(&self, m: usize) -> RealField {
        RealField::new(&self.grid, self.row(m).to_vec()).expect("row length matches grid")
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn scale(&self, k: f64) -> SpacetimeField {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= k);
        out
    }

    pub fn add(&self, other: &SpacetimeField) -> Result<SpacetimeField> {
        if self.values.len() != other.values.len() || self.dt != other.dt || self.t0 != other.t0 {
            return Err(Error::validation("spacetime fields live on different lattices"));
        }
        let mut out = self.clone();
        out.values.iter_mut().zip(&other.values).for_each(|(a, b)| *a += b);
        Ok(out)
    }

    /// Pointwise product with a function of time.
    pub fn mul_time(&self, w: impl Fn(f64) -> f64) -> SpacetimeField {
        let mut out = self.clone();
        let nx = self.grid.num_points();
        for m in 0..self.num_times {
            let k = w(self.time(m));
            out.values[m * nx..(m + 1) * nx].iter_mut().for_each(|v| *v *= k);
        }
        out
    }

    /// Temporal frequency of storage slot `l`.
    pub fn tau(&self, l: usize) -> f64 {
        let n = self.num_times as i64;
        let l = l as i64;
        let signed = if l < n / 2 { l } else { l - n };
        2.0 * PI * signed as f64 / self.window_length()
    }

    /// Coefficients `f_hat(tau_l, xi_k)`, time-major, both axes in FFT order.
    pub fn spectrum(&self) -> Vec<Complex64> {
        let nx = self.grid.num_points();
        let nt = self.num_times;
        let mut out = vec![Complex64::new(0.0, 0.0); nt * nx];
        let mut row = Vec::with_capacity(nx);
        for m in 0..nt {
            self.grid.forward_slice(self.row(m), &mut row);
            out[m * nx..(m + 1) * nx].copy_from_slice(&row);
        }
        let fft = FftPlanner::new().plan_fft_forward(nt);
        let mut column = vec![Complex64::new(0.0, 0.0); nt];
        let scale = 1.0 / nt as f64;
        for k in 0..nx {
            for m in 0..nt {
                column[m] = out[m * nx + k];
            }
            fft.process(&mut column);
            for l in 0..nt {
                out[l * nx + k] = column[l] * scale;
            }
        }
        out
    }
}

/// `(1 + x^2)^{1/2}`.
pub fn bracket(x: f64) -> f64 {
    x.hypot(1.0)
}

/// Smallest `j >= 0` with `value <= 2^{j+1}`: ties go to the lower block.
pub fn dyadic_index(value: f64) -> u32 {
    let mut j = 0u32;
    let mut upper = 2.0;
    while value > upper {
        j += 1;
        upper *= 2.0;
    }
    j
}

/// Blocks `A_j = {<xi> in [2^j, 2^{j+1}]}` and `B_k = {<tau - xi^3> in [2^k, 2^{k+1}]}`
/// on the lattice of a spacetime field.
#[derive(Debug, Clone)]
pub struct DyadicDecomposition {
    pub j_max: u32,
    pub k_max: u32,
    /// `(j, k)` of every lattice point, time-major.
    labels: Vec<(u32, u32)>,
}

impl DyadicDecomposition {
    pub fn new(f: &SpacetimeField) -> Self {
        let xis = f.grid.wavenumbers();
        let mut labels = Vec::with_capacity(f.values.len());
        let (mut j_max, mut k_max) = (0, 0);
        for l in 0..f.num_times {
            let tau = f.tau(l);
            for &xi in xis {
                let j = dyadic_index(bracket(xi));
                let k = dyadic_index(bracket(tau - xi.powi(3)));
                j_max = j_max.max(j);
                k_max = k_max.max(k);
                labels.push((j, k));
            }
        }
        DyadicDecomposition { j_max, k_max, labels }
    }

    pub fn label(&self, index: usize) -> (u32, u32) {
        self.labels[index]
    }

    /// `||P_{jk} f||^2_{L^2}` indexed `[j][k]`.
    pub fn block_energies(&self, f: &SpacetimeField) -> Vec<Vec<f64>> {
        let spec = f.spectrum();
        let measure = f.grid.box_length() * f.window_length();
        let mut e = vec![vec![0.0; self.k_max as usize + 1]; self.j_max as usize + 1];
        for (c, &(j, k)) in spec.iter().zip(&self.labels) {
            e[j as usize][k as usize] += measure * c.norm_sqr();
        }
        e
    }
}

/// `(sum_j 2^{2sj} (sum_k 2^{bk} ||P_{jk} f||)^2)^{1/2}`.
pub fn xsb1_norm(f: &SpacetimeField, s: f64, b: f64) -> f64 {
    let dec = DyadicDecomposition::new(f);
    let energies = dec.block_energies(f);
    energies
        .iter()
        .enumerate()
        .map(|(j, row)| {
            let inner: f64 =
                row.iter().enumerate().map(|(k, e)| 2f64.powf(b * k as f64) * e.sqrt()).sum();
            2f64.powf(2.0 * s * j as f64) * inner * inner
        })
        .sum::<f64>()
        .sqrt()
}

/// `Y^s` surrogate: the `X^{s,-1/2,1}` norm.
pub fn ys_norm(f: &SpacetimeField, s: f64) -> f64 {
    xsb1_norm(f, s, -0.5)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingRecord {
    /// `sup_t ||f(t)||_{H^s}`.
    pub lhs: f64,
    /// `||f||_{X^{s,1/2,1}}`.
    pub rhs: f64,
    /// `lhs / rhs`, or 0 when both vanish.
    pub ratio: f64,
}

pub fn embedding_check(f: &SpacetimeField, s: f64) -> EmbeddingRecord {
    let lhs = (0..f.num_times).map(|m| sobolev_norm(&f.slice(m), s)).fold(0.0, f64::max);
    let rhs = xsb1_norm(f, s, 0.5);
    let ratio = if rhs > 0.0 { lhs / rhs } else { 0.0 };
    EmbeddingRecord { lhs, rhs, ratio }
}

/// Smooth bump: 1 on `[-1, 1]`, 0 outside `(-2, 2)`.
pub fn rho(t: f64) -> f64 {
    let h = |x: f64| if x > 0.0 { (-1.0 / x).exp() } else { 0.0 };
    let r = t.abs();
    let (inner, outer) = (h(2.0 - r), h(r - 1.0));
    if inner == 0.0 {
        0.0
    } else {
        inner / (inner + outer)
    }
}

/// Multiplies by `rho(t / delta)`.
pub fn apply_time_cutoff(f: &SpacetimeField, delta: f64) -> Result<SpacetimeField> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::validation(format!("delta must be positive, got {delta}")));
    }
    Ok(f.mul_time(|t| rho(t / delta)))
}

/// Which linear estimate to probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeKind {
    /// `||rho W1 f||_{X^{s,1/2,1}}` against `||f||_{H^s}`.
    W1Hom,
    /// `||rho int_0^t W1(t-t') F||_{X^{s,1/2,1}}` against `||F||_{X^{s,-1/2,1}}`.
    W1Inhom,
    W2Hom,
    /// As `W1Inhom`, with the damped group and the factor `1_{t > 0}`.
    W2Inhom,
}

impl ProbeKind {
    pub const ALL: [ProbeKind; 4] =
        [ProbeKind::W1Hom, ProbeKind::W1Inhom, ProbeKind::W2Hom, ProbeKind::W2Inhom];

    fn is_damped(self) -> bool {
        matches!(self, ProbeKind::W2Hom | ProbeKind::W2Inhom)
    }
}

impl fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProbeKind::W1Hom => "W1-hom",
            ProbeKind::W1Inhom => "W1-inhom",
            ProbeKind::W2Hom => "W2-hom",
            ProbeKind::W2Inhom => "W2-inhom",
        })
    }
}

impl FromStr for ProbeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProbeKind::ALL
            .into_iter()
            .find(|k| k.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Parse(format!("unknown probe kind '{s}'")))
    }
}

/// Lattice and data parameters for [`linear_estimate_probe`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSetup {
    pub num_points: usize,
    pub box_length: f64,
    pub delta: f64,
    pub num_times: usize,
    pub s: f64,
    /// Data occupy `0 < |xi| <= band`.
    pub band: f64,
    pub a: f64,
    pub c0: f64,
    pub damping: DampingForm,
    pub seed: u64,
}

impl Default for ProbeSetup {
    fn default() -> Self {
        ProbeSetup {
            num_points: 128,
            box_length: 16.0 * PI,
            delta: 1.0,
            num_times: DEFAULT_TIME_SAMPLES,
            s: 0.9,
            band: 2.0,
            a: 0.5,
            c0: 1.0,
            damping: DampingForm::default(),
            seed: 7,
        }
    }
}

impl ProbeSetup {
    pub fn validate(&self) -> Result<()> {
        if !(self.band > 0.0 && self.band <= PI * self.num_points as f64 / self.box_length) {
            return Err(Error::validation(format!(
                "band {} must be positive and below the spatial Nyquist frequency",
                self.band
            )));
        }
        if !(self.a > 0.0 && self.c0 > 0.0) {
            return Err(Error::validation("probe needs a > 0 and c0 > 0"));
        }
        if !(self.delta > 0.0 && self.num_times >= 8 && self.num_times.is_multiple_of(2)) {
            return Err(Error::validation("probe needs delta > 0 and an even num_times >= 8"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeRow {
    pub trial: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub kind: ProbeKind,
    pub rows: Vec<ProbeRow>,
    /// Trials with vanishing data, left out of `rows`.
    pub skipped: usize,
}

impl ProbeReport {
    pub fn max_ratio(&self) -> f64 {
        self.rows.iter().map(|r| r.ratio).fold(0.0, f64::max)
    }

    /// Rows `kind,trial,lhs,rhs,ratio`, without a header.
    pub fn write_rows<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in &self.rows {
            writeln!(w, "{},{},{:.12e},{:.12e},{:.12e}", self.kind, r.trial, r.lhs, r.rhs, r.ratio)?;
        }
        Ok(())
    }
}

pub const PROBE_HEADER: &str = "kind,trial,lhs,rhs,ratio";

/// Random real field with Fourier support in `0 < |xi| <= band`.
pub fn random_band_limited(grid: &Arc<Grid>, band: f64, rng: &mut impl Rng) -> RealField {
    let n = grid.num_points();
    let mut coeffs = vec![Complex64::new(0.0, 0.0); n];
    for i in 1..n / 2 {
        let xi = grid.wavenumbers()[i];
        if xi <= band {
            let c = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            coeffs[i] = c;
            coeffs[n - i] = c.conj();
        }
    }
    SpectralField::new(grid, coeffs).expect("length matches grid").inverse()
}

/// `int_0^1 e^{z(1-u)} du` and `int_0^1 u e^{z(1-u)} du`.
fn phi12(z: Complex64) -> (Complex64, Complex64) {
    if z.norm() < 1e-3 {
        (1.0 + z / 2.0 + z * z / 6.0, 0.5 + z / 6.0 + z * z / 24.0)
    } else {
        let ez = z.exp();
        ((ez - 1.0) / z, (ez - 1.0 - z) / (z * z))
    }
}

/// Samples of `int_0^t e^{mu(xi) (t - t')} F(t') dt'`, exact for data linear
/// between time samples; `F` must sample `t = 0`. Negative times are left at
/// zero unless `backward` is set.
fn duhamel(
    force: &SpacetimeField,
    mu: impl Fn(f64) -> Complex64,
    backward: bool,
) -> Result<SpacetimeField> {
    let grid = force.grid.clone();
    let nt = force.num_times;
    let nx = grid.num_points();
    let origin = (-force.t0 / force.dt).round();
    if (origin * force.dt + force.t0).abs() > 1e-9 * force.dt || origin < 0.0 || origin >= nt as f64 {
        return Err(Error::validation("Duhamel integral needs t = 0 on the time lattice"));
    }
    let origin = origin as usize;
    let hats: Vec<SpectralField> = (0..nt).map(|m| forward_transform(&force.slice(m))).collect();
    let mus: Vec<Complex64> = grid.wavenumbers().iter().map(|&xi| mu(xi)).collect();
    let zero = Complex64::new(0.0, 0.0);
    let mut out = vec![vec![zero; nx]; nt];
    let mut sweeps = vec![(1.0, (origin + 1..nt).collect::<Vec<_>>())];
    if backward {
        sweeps.push((-1.0, (0..origin).rev().collect()));
    }
    for (dir, range) in sweeps {
        let h = dir * force.dt;
        let mut prev = origin;
        for m in range {
            for k in 0..nx {
                let z = mus[k] * h;
                let (p1, p2) = phi12(z);
                let g0 = hats[prev].coeffs()[k];
                let g1 = hats[m].coeffs()[k];
                out[m][k] = z.exp() * out[prev][k] + h * (g0 * p1 + (g1 - g0) * p2);
            }
            prev = m;
        }
    }
    let mut values = Vec::with_capacity(nt * nx);
    for row in out {
        values.extend_from_slice(SpectralField::new(&grid, row)?.inverse().samples());
    }
    SpacetimeField::new(&grid, force.t0, force.dt, nt, values)
}

/// Free or damped Airy group `exp(i xi^3 t - p |t|)` applied to `f` on the window.
fn group_orbit(
    f: &RealField,
    delta: f64,
    num_times: usize,
    damping: Option<(f64, f64, DampingForm)>,
) -> Result<SpacetimeField> {
    let grid = f.grid().clone();
    let hat = forward_transform(f);
    let ny = grid.nyquist_slot();
    SpacetimeField::from_profiles(&grid, delta, num_times, |t| {
        let coeffs = hat
            .coeffs()
            .iter()
            .zip(grid.wavenumbers())
            .enumerate()
            .map(|(i, (&c, &xi))| {
                let phase = if i == ny { 0.0 } else { xi.powi(3) * t };
                let decay = damping.map_or(0.0, |(a, c0, form)| damping_symbol(a, c0, xi, form) * t.abs());
                c * Complex64::from_polar((-decay).exp(), phase)
            })
            .collect();
        SpectralField::new(&grid, coeffs).expect("length matches grid").inverse()
    })
}

/// Time-localized random forcing `rho(t/delta) sum_q g_q(x) cos(omega_q t + phi_q)`.
fn random_forcing(grid: &Arc<Grid>, setup: &ProbeSetup, rng: &mut impl Rng) -> Result<SpacetimeField> {
    let tau_max = PI * setup.num_times as f64 / (4.0 * setup.delta);
    let parts: Vec<(RealField, f64, f64)> = (0..3)
        .map(|_| {
            let g = random_band_limited(grid, setup.band, rng);
            (g, rng.gen_range(-0.25..0.25) * tau_max, rng.gen_range(0.0..2.0 * PI))
        })
        .collect();
    SpacetimeField::from_profiles(grid, setup.delta, setup.num_times, |t| {
        let mut acc = RealField::zeros(grid);
        for (g, om, ph) in &parts {
            acc.axpy((om * t + ph).cos(), g);
        }
        acc.scale(rho(t / setup.delta))
    })
}

/// Ratios of the left and right sides of one linear estimate over random data.
pub fn linear_estimate_probe(kind: ProbeKind, trials: usize, setup: &ProbeSetup) -> Result<ProbeReport> {
    if trials == 0 {
        return Err(Error::validation("linear_estimate_probe needs trials >= 1"));
    }
    setup.validate()?;
    let grid = Grid::new(setup.num_points, setup.box_length)?;
    let mut rng = ChaCha8Rng::seed_from_u64(setup.seed);
    let damping = kind.is_damped().then_some((setup.a, setup.c0, setup.damping));
    let ny = grid.nyquist_slot();
    let mu_of = |xi: f64| -> Complex64 {
        let p = damping.map_or(0.0, |(a, c0, form)| damping_symbol(a, c0, xi, form));
        Complex64::new(-p, xi.powi(3))
    };
    let mut rows = Vec::with_capacity(trials);
    let mut skipped = 0;
    for trial in 0..trials {
        let (lhs, rhs) = match kind {
            ProbeKind::W1Hom | ProbeKind::W2Hom => {
                let f = random_band_limited(&grid, setup.band, &mut rng);
                let orbit = group_orbit(&f, setup.delta, setup.num_times, damping)?;
                let lhs = xsb1_norm(&apply_time_cutoff(&orbit, setup.delta)?, setup.s, 0.5);
                (lhs, sobolev_norm(&f, setup.s))
            }
            ProbeKind::W1Inhom | ProbeKind::W2Inhom => {
                let force = random_forcing(&grid, setup, &mut rng)?;
                let nyquist_free = |xi: f64| {
                    if xi == grid.wavenumbers()[ny] {
                        Complex64::new(0.0, 0.0)
                    } else {
                        mu_of(xi)
                    }
                };
                let forward_only = kind == ProbeKind::W2Inhom;
                let mut u =
                    apply_time_cutoff(&duhamel(&force, nyquist_free, !forward_only)?, setup.delta)?;
                if forward_only {
                    u = u.mul_time(|t| if t > 0.0 { 1.0 } else { 0.0 });
                }
                (xsb1_norm(&u, setup.s, 0.5), ys_norm(&force, setup.s))
            }
        };
        if rhs == 0.0 {
            skipped += 1;
            continue;
        }
        rows.push(ProbeRow { trial, lhs, rhs, ratio: lhs / rhs });
    }
    Ok(ProbeReport { kind, rows, skipped })
}
