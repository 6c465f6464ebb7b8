//! The iteration scheme: coupled evolution on `[n delta, (n+1) delta]` with the
//! cutoff `N(n)` refreshed, and the modulation re-fitted, at every boundary.

use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::config::RunConfig;
use crate::grid::{sobolev_norm, Grid, RealField};
use crate::imethod::{schedule_N, IMultiplier, ISchedule};
use crate::modulation::{w_h1, CoupledEvolver, ModulationContext, PerturbationState};
use crate::soliton::{soliton_dy_field, soliton_field, SolitonParams};
use crate::spectral_ops::linear_fit;

pub const STEPS_FILE: &str = "steps.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const LEDGER_FILE: &str = "ledger.csv";
pub const FIT_FILE: &str = "fit.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";

/// One row per interval boundary `t_n = n delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub t_n: f64,
    #[serde(rename = "N")]
    pub n_cutoff: f64,
    /// `||w_n(t_n)||^2_{H^1}`.
    #[serde(rename = "K_n")]
    pub k_n: f64,
    pub v_h1: f64,
    pub c: f64,
    pub gamma: f64,
    pub c_dot: f64,
    pub gamma_dot: f64,
    #[serde(rename = "P_resid")]
    pub p_resid: f64,
    pub ledger_ok: bool,
}

/// The three boundary inequalities, with the quantities compared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub n: u32,
    pub c_dot: f64,
    pub c_dot_bound: f64,
    pub c_dot_ok: bool,
    pub c_drift: f64,
    pub c_drift_bound: f64,
    pub c_drift_ok: bool,
    pub w_h1: f64,
    pub w_bound: f64,
    pub w_ok: bool,
}

impl LedgerRow {
    pub fn ok(&self) -> bool {
        self.c_dot_ok && self.c_drift_ok && self.w_ok
    }
}

/// Fine-grained samples inside the intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub w_h1: f64,
    pub v_h1: f64,
    pub c: f64,
    pub gamma: f64,
    pub c_dot: f64,
    pub gamma_dot: f64,
    /// `|c_dot| + |gamma_dot|`.
    pub rate_sum: f64,
    pub rate_bound: f64,
    /// `||P w||` removed after the step.
    pub removed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    /// Slope of `log ||w||_{H^1}` against `t`.
    pub decay_rate: f64,
    /// `exp(decay_rate)`: the weighted decay factor per unit time.
    pub r_estimate: f64,
    /// `start:end` of the fitted time window.
    pub window: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// `completed` or `failed`.
    pub status: String,
    pub error: Option<String>,
    /// Interval boundaries reached, including `t = 0`.
    pub steps_executed: usize,
    /// Boundaries at which the schedule was clamped at the Nyquist frequency.
    pub clamped: Vec<u32>,
    /// Ledger constant `2 (2 + sup|u| + sup|u_y|)` measured at `t = 0`.
    pub ledger_constant: f64,
    pub sup_u: f64,
    pub sup_u_y: f64,
    /// Growth factor per unit time of `||I v||_{H^1}` over the fit window.
    pub r_unweighted: Option<f64>,
    /// Slope of `log(|c_dot| + |gamma_dot|)` over the fit window.
    pub rate_decay: Option<f64>,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub manifest: Manifest,
    pub steps: Vec<StepRow>,
    pub ledger: Vec<LedgerRow>,
    pub trace: Vec<TraceRow>,
    pub fit: Option<FitRow>,
}

/// A run stopped by an error, with whatever was recorded before it.
#[derive(Debug)]
pub struct RunAbort {
    pub error: Error,
    pub partial: Option<Box<RunRecord>>,
}

impl From<Error> for RunAbort {
    fn from(error: Error) -> Self {
        RunAbort { error, partial: None }
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Seeded sum of three modulated Gaussian bumps near the soliton core.
pub fn seeded_perturbation(grid: &Arc<Grid>, seed: u64) -> RealField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bumps: Vec<[f64; 6]> = (0..3)
        .map(|_| {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            [
                sign * rng.gen_range(0.5..1.0),
                rng.gen_range(-3.0..5.0),
                rng.gen_range(1.0..2.5),
                rng.gen_range(0.5..2.0),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.2..0.6),
            ]
        })
        .collect();
    RealField::from_fn(grid, |y| {
        bumps
            .iter()
            .map(|&[amp, y0, w, f, ph, depth]| {
                amp * (-((y - y0) / w).powi(2)).exp() * (1.0 + depth * (f * y + ph).sin())
            })
            .sum()
    })
}

/// Initial state: `psi_{c0}` plus the seeded bump scaled so that the weighted
/// and unweighted norms sit at half of `eps1` and at most half of `eps2`, and
/// the modulation orthogonality holds.
pub fn initial_state(
    ctx: &ModulationContext,
    im: &IMultiplier,
    cfg: &RunConfig,
) -> Result<PerturbationState> {
    let grid = ctx.grid();
    if cfg.eps1 == 0.0 {
        return PerturbationState::new(ctx, &RealField::zeros(grid), im);
    }
    let bump = seeded_perturbation(grid, cfg.seed);
    let mut st = PerturbationState::new(ctx, &bump, im)?;
    let mut k = 1.0;
    for _ in 0..5 {
        let w = w_h1(&st);
        let v = sobolev_norm(&st.v_tilde, 1.0);
        if w <= 0.5 * cfg.eps1 * (1.0 + 1e-3) && v < 0.5 * cfg.eps2 {
            break;
        }
        k *= (0.5 * cfg.eps1 / w).min(0.5 * cfg.eps2 / v);
        st = PerturbationState::new(ctx, &bump.scale(k), im)?;
        st.orthogonalize(ctx, im)?;
    }
    st.orthogonalize(ctx, im)?;
    Ok(st)
}

struct Runner<'a> {
    cfg: &'a RunConfig,
    record: RunRecord,
}

impl Runner<'_> {
    fn trace(&mut self, ev: &CoupledEvolver, st: &PerturbationState, removed: f64) -> Result<()> {
        let d = ev.diagnose(st)?;
        self.record.trace.push(TraceRow {
            t: st.t,
            w_h1: w_h1(st),
            v_h1: sobolev_norm(&st.v_tilde, 1.0),
            c: st.c,
            gamma: st.gamma,
            c_dot: d.rates.c_dot,
            gamma_dot: d.rates.gamma_dot,
            rate_sum: d.rates.c_dot.abs() + d.rates.gamma_dot.abs(),
            rate_bound: d.bound,
            removed,
        });
        Ok(())
    }

    fn boundary(&mut self, n: u32, ev: &CoupledEvolver, st: &PerturbationState) -> Result<()> {
        let cfg = self.cfg;
        let d = ev.diagnose(st)?;
        let w = w_h1(st);
        let big_c = self.record.manifest.ledger_constant;
        let kn = cfg.kappa.powi(n as i32);
        // the drift bound vanishes at n = 0; the first interval is used there
        let drift_n = cfg.kappa.powi(n.max(1) as i32);
        let row = LedgerRow {
            n,
            c_dot: d.rates.c_dot.abs(),
            c_dot_bound: big_c * cfg.eps1 * kn,
            c_dot_ok: d.rates.c_dot.abs() <= big_c * cfg.eps1 * kn,
            c_drift: (st.c - cfg.c0).abs(),
            c_drift_bound: big_c * cfg.eps1 * (1.0 - drift_n) / (1.0 - cfg.kappa),
            c_drift_ok: (st.c - cfg.c0).abs() <= big_c * cfg.eps1 * (1.0 - drift_n) / (1.0 - cfg.kappa),
            w_h1: w,
            w_bound: cfg.eps1 * kn,
            w_ok: w <= cfg.eps1 * kn,
        };
        self.record.ledger.push(row);
        self.record.steps.push(StepRow {
            t_n: n as f64 * cfg.delta,
            n_cutoff: ev.multiplier().cutoff(),
            k_n: w * w,
            v_h1: sobolev_norm(&st.v_tilde, 1.0),
            c: st.c,
            gamma: st.gamma,
            c_dot: d.rates.c_dot,
            gamma_dot: d.rates.gamma_dot,
            p_resid: st.projection_residual(ev.context()),
            ledger_ok: row.ok(),
        });
        self.record.manifest.steps_executed += 1;
        Ok(())
    }

    fn execute(&mut self) -> Result<()> {
        let cfg = self.cfg;
        let grid = Grid::new(cfg.num_points, cfg.box_length)?;
        let ctx = Arc::new(ModulationContext::new(&grid, cfg.a, cfg.c0, cfg.modulation())?);
        let schedule = match cfg.schedule_exponent {
            Some(q) => ISchedule::with_coefficient(cfg.kappa, cfg.eta1, cfg.s, q)?,
            None => ISchedule::new(cfg.kappa, cfg.eta1, cfg.s)?,
        };
        let nyquist = grid.nyquist();
        let cutoff = |n: u32, clamped: &mut Vec<u32>| -> Result<IMultiplier> {
            let raw = schedule_N(&schedule, n);
            if raw > nyquist {
                clamped.push(n);
            }
            IMultiplier::new(raw.min(nyquist), cfg.s)
        };
        let im0 = cutoff(0, &mut self.record.manifest.clamped)?;
        let mut st = initial_state(&ctx, &im0, cfg)?;

        let psi = SolitonParams::centered(st.c)?;
        let u = soliton_field(&grid, psi).add(&st.v);
        let u_y = soliton_dy_field(&grid, psi).add(&st.v.derivative(1));
        let m = &mut self.record.manifest;
        m.sup_u = u.max_abs();
        m.sup_u_y = u_y.max_abs();
        m.ledger_constant = 2.0 * (2.0 + m.sup_u + m.sup_u_y);

        let mut ev = CoupledEvolver::new(ctx.clone(), im0, cfg.dt, cfg.sponge)?;
        let steps = cfg.steps_per_interval();
        self.boundary(0, &ev, &st)?;
        self.trace(&ev, &st, 0.0)?;
        for n in 1..=cfg.num_intervals() as u32 {
            for k in 1..=steps {
                let rep = ev.step(&mut st)?;
                if k % cfg.trace_every == 0 && k != steps {
                    self.trace(&ev, &st, rep.removed)?;
                }
            }
            let im = cutoff(n, &mut self.record.manifest.clamped)?;
            ev.set_multiplier(im);
            st.orthogonalize(&ctx, &im)?;
            st.t = n as f64 * cfg.delta;
            self.trace(&ev, &st, 0.0)?;
            self.boundary(n, &ev, &st)?;
        }
        Ok(())
    }

    fn fit(&mut self) {
        let t_end = self.cfg.t_end;
        let (lo, hi) = (0.25 * t_end, t_end);
        let window: Vec<&TraceRow> =
            self.record.trace.iter().filter(|r| r.t >= lo - 1e-9 && r.t <= hi + 1e-9).collect();
        let slope = |f: &dyn Fn(&TraceRow) -> f64| -> Option<f64> {
            let pts: Vec<(f64, f64)> =
                window.iter().filter(|r| f(r) > 0.0).map(|r| (r.t, f(r).ln())).collect();
            if pts.len() < 3 {
                return None;
            }
            let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            Some(linear_fit(&x, &y).0)
        };
        if let Some(rate) = slope(&|r| r.w_h1) {
            self.record.fit =
                Some(FitRow { decay_rate: rate, r_estimate: rate.exp(), window: format!("{lo}:{hi}") });
        }
        self.record.manifest.r_unweighted = slope(&|r| r.v_h1).map(f64::exp);
        self.record.manifest.rate_decay = slope(&|r| r.rate_sum);
    }
}

/// Runs the scheme to the horizon. Numerical failures return the partial record.
pub fn run_iteration_scheme(cfg: &RunConfig) -> std::result::Result<RunRecord, RunAbort> {
    cfg.validate()?;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        started_unix: unix_now(),
        finished_unix: 0,
        status: "running".into(),
        error: None,
        steps_executed: 0,
        clamped: vec![],
        ledger_constant: 0.0,
        sup_u: 0.0,
        sup_u_y: 0.0,
        r_unweighted: None,
        rate_decay: None,
        config: cfg.clone(),
    };
    let mut runner =
        Runner { cfg, record: RunRecord { manifest, steps: vec![], ledger: vec![], trace: vec![], fit: None } };
    let outcome = runner.execute();
    runner.record.manifest.finished_unix = unix_now();
    match outcome {
        Ok(()) => {
            runner.fit();
            runner.record.manifest.status = "completed".into();
            Ok(runner.record)
        }
        Err(error) => {
            runner.record.manifest.status = "failed".into();
            runner.record.manifest.error = Some(error.to_string());
            Err(RunAbort { error, partial: Some(Box::new(runner.record)) })
        }
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(!rows.is_empty()).from_path(path).map_err(csv_err)?;
    if rows.is_empty() {
        w.write_record(header).map_err(csv_err)?;
    }
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse(format!("{other:?}")),
    }
}

pub const STEPS_HEADER: [&str; 10] =
    ["t_n", "N", "K_n", "v_h1", "c", "gamma", "c_dot", "gamma_dot", "P_resid", "ledger_ok"];
const LEDGER_HEADER: [&str; 10] = [
    "n", "c_dot", "c_dot_bound", "c_dot_ok", "c_drift", "c_drift_bound", "c_drift_ok", "w_h1", "w_bound", "w_ok",
];
const TRACE_HEADER: [&str; 10] =
    ["t", "w_h1", "v_h1", "c", "gamma", "c_dot", "gamma_dot", "rate_sum", "rate_bound", "removed"];
const FIT_HEADER: [&str; 3] = ["decay_rate", "r_estimate", "window"];

impl RunRecord {
    /// Writes the manifest and the series files into `dir`, creating it.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest = toml::to_string(&self.manifest).map_err(|e| Error::Parse(e.to_string()))?;
        fs::write(dir.join(MANIFEST_FILE), manifest)?;
        write_rows(&dir.join(STEPS_FILE), &self.steps, &STEPS_HEADER)?;
        write_rows(&dir.join(LEDGER_FILE), &self.ledger, &LEDGER_HEADER)?;
        write_rows(&dir.join(TRACE_FILE), &self.trace, &TRACE_HEADER)?;
        write_rows(&dir.join(FIT_FILE), self.fit.as_slice(), &FIT_HEADER)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let manifest = toml::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)
            .map_err(|e| Error::Parse(e.to_string()))?;
        Ok(RunRecord {
            manifest,
            steps: read_rows(&dir.join(STEPS_FILE))?,
            ledger: read_rows(&dir.join(LEDGER_FILE))?,
            trace: read_rows(&dir.join(TRACE_FILE))?,
            fit: read_rows(&dir.join(FIT_FILE))?.into_iter().next(),
        })
    }
}
