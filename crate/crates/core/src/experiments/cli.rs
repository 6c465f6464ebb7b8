//! Command-line front end.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::bourgain::PROBE_HEADER;
use crate::error::{Error, Result};
use crate::experiments::config::RunConfig;
use crate::experiments::runner::{initial_state, run_iteration_scheme, seeded_perturbation, RunAbort, TraceRow};
use crate::experiments::studies::{commutator_scaling_experiment, hamiltonian_increment_experiment, probe_sweep};
use crate::grid::{sobolev_norm, Grid};
use crate::imethod::IMultiplier;
use crate::kdv::{run, SolverConfig, TimeSeries};
use crate::modulation::{w_h1, CoupledEvolver, ModulationContext};
use crate::soliton::{soliton_field, SolitonParams};
use crate::spectral_ops::{build_operator, discrete_spectrum, SPECTRUM_LENGTH, SPECTRUM_POINTS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "kdvstab", version, about = "Soliton stability experiments for the KdV equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML config file, or `default`.
    #[arg(long, global = true, default_value = "default")]
    config: PathBuf,
    /// Output directory.
    #[arg(long, global = true, default_value = "runs/latest")]
    out: PathBuf,
    /// Overrides the seed of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve KdV from a perturbed soliton and record the invariants.
    Simulate,
    /// Eigenvalues of the weighted linearized operator.
    Spectrum,
    /// Coupled modulation evolution at a fixed cutoff.
    Modulate,
    /// The full iteration scheme with cutoff refresh at each step.
    Iterate,
    /// Linear-estimate probes of the dyadic spacetime norms.
    Norms,
    /// Commutator norm against the cutoff N.
    CommutatorScaling,
    /// Hamiltonian increment over one step against N.
    HamiltonianIncrement,
}

#[derive(Serialize)]
struct StudyManifest<'a> {
    study: &'a str,
    version: &'a str,
    summary: BTreeMap<String, f64>,
    config: &'a RunConfig,
}

fn write_manifest(out: &Path, study: &str, cfg: &RunConfig, summary: BTreeMap<String, f64>) -> Result<()> {
    let m = StudyManifest { study, version: env!("CARGO_PKG_VERSION"), summary, config: cfg };
    let text = toml::to_string(&m).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(out.join("manifest.toml"), text)?;
    Ok(())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Parse(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn write_series(path: &Path, s: &TimeSeries) -> Result<()> {
    let mut text = format!("t,{}\n", s.columns.join(","));
    for (t, row) in s.times.iter().zip(&s.values) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        text.push_str(&format!("{t},{}\n", cells.join(",")));
    }
    fs::write(path, text)?;
    Ok(())
}

/// Persists `partial` and returns `error` for the exit status.
fn with_partial<T>(out: &Path, partial: impl FnOnce(&Path) -> Result<()>, error: Error) -> Result<T> {
    partial(out)?;
    Err(error)
}

fn simulate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let grid = Grid::new(cfg.num_points, cfg.box_length)?;
    let bump = seeded_perturbation(&grid, cfg.seed).scale(cfg.eps1);
    let u0 = soliton_field(&grid, SolitonParams::centered(cfg.c0)?).add(&bump);
    let mut solver = SolverConfig::new(cfg.dt, cfg.t_end)?;
    solver.sponge = cfg.sponge;
    solver.observe_every = cfg.trace_every;
    write_manifest(out, "simulate", cfg, BTreeMap::new())?;
    match run(&u0, &solver) {
        Ok(series) => write_series(&out.join("series.csv"), &series),
        Err(f) => with_partial(out, |o| write_series(&o.join("series.csv"), &f.partial), f.error),
    }
}

fn spectrum(cfg: &RunConfig, out: &Path) -> Result<()> {
    let grid = Grid::new(SPECTRUM_POINTS, SPECTRUM_LENGTH)?;
    let report = discrete_spectrum(&build_operator(&grid, cfg.a, cfg.c0)?)?;
    let mut summary = BTreeMap::new();
    summary.insert("near_zero_0_abs".into(), report.near_zero[0].norm());
    summary.insert("near_zero_1_abs".into(), report.near_zero[1].norm());
    summary.insert("max_real_rest".into(), report.max_real_rest);
    summary.insert("bound".into(), report.bound);
    write_manifest(out, "spectrum", cfg, summary)?;
    report.write_csv(fs::File::create(out.join("spectrum.csv"))?)?;
    Ok(())
}

fn modulate(cfg: &RunConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    let grid = Grid::new(cfg.num_points, cfg.box_length)?;
    let ctx = Arc::new(ModulationContext::new(&grid, cfg.a, cfg.c0, cfg.modulation())?);
    let im = IMultiplier::new(1.0, cfg.s)?;
    let mut st = initial_state(&ctx, &im, cfg)?;
    let ev = CoupledEvolver::new(ctx, im, cfg.dt, cfg.sponge)?;
    write_manifest(out, "modulate", cfg, BTreeMap::new())?;
    let mut rows = Vec::new();
    let steps = (cfg.t_end / cfg.dt).round() as usize;
    let mut removed = 0.0;
    for k in 0..=steps {
        if k % cfg.trace_every == 0 || k == steps {
            let d = match ev.diagnose(&st) {
                Ok(d) => d,
                Err(e) => return with_partial(out, |o| write_csv(&o.join("trace.csv"), &rows), e),
            };
            rows.push(TraceRow {
                t: st.t,
                w_h1: w_h1(&st),
                v_h1: sobolev_norm(&st.v_tilde, 1.0),
                c: st.c,
                gamma: st.gamma,
                c_dot: d.rates.c_dot,
                gamma_dot: d.rates.gamma_dot,
                rate_sum: d.rates.c_dot.abs() + d.rates.gamma_dot.abs(),
                rate_bound: d.bound,
                removed,
            });
        }
        if k < steps {
            match ev.step(&mut st) {
                Ok(rep) => removed = rep.removed,
                Err(e) => return with_partial(out, |o| write_csv(&o.join("trace.csv"), &rows), e),
            }
        }
    }
    write_csv(&out.join("trace.csv"), &rows)
}

fn iterate(cfg: &RunConfig, out: &Path) -> Result<()> {
    match run_iteration_scheme(cfg) {
        Ok(rec) => rec.write(out),
        Err(RunAbort { error, partial: Some(rec) }) => with_partial(out, |o| rec.write(o), error),
        Err(RunAbort { error, partial: None }) => Err(error),
    }
}

fn norms(cfg: &RunConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    let (reports, summary) = probe_sweep(cfg)?;
    let mut text = format!("{PROBE_HEADER}\n").into_bytes();
    for r in &reports {
        r.write_rows(&mut text)?;
    }
    fs::write(out.join("probes.csv"), text)?;
    write_csv(&out.join("probes_summary.csv"), &summary)?;
    write_manifest(out, "norms", cfg, BTreeMap::new())
}

fn commutator_scaling(cfg: &RunConfig, out: &Path) -> Result<()> {
    let res = commutator_scaling_experiment(&cfg.commutator)?;
    write_csv(&out.join("commutator.csv"), &res.rows)?;
    let mut summary = BTreeMap::new();
    if let Some(m) = res.slope {
        summary.insert("slope".into(), m);
    }
    if let Some(m) = res.l2_slope {
        summary.insert("l2_slope".into(), m);
    }
    summary.insert("threshold".into(), -(cfg.commutator.s - 0.75) + 0.1);
    summary.insert("passes".into(), if res.passes(cfg.commutator.s) { 1.0 } else { 0.0 });
    write_manifest(out, "commutator-scaling", cfg, summary)
}

fn hamiltonian_increment(cfg: &RunConfig, out: &Path) -> Result<()> {
    let rows = hamiltonian_increment_experiment(cfg)?;
    write_csv(&out.join("hamiltonian.csv"), &rows)?;
    write_manifest(out, "hamiltonian-increment", cfg, BTreeMap::new())
}

fn execute(cli: &Cli) -> Result<()> {
    let mut cfg = RunConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    fs::create_dir_all(&cli.out)?;
    let out = cli.out.as_path();
    match cli.command {
        Command::Simulate => simulate(&cfg, out),
        Command::Spectrum => spectrum(&cfg, out),
        Command::Modulate => modulate(&cfg, out),
        Command::Iterate => iterate(&cfg, out),
        Command::Norms => norms(&cfg, out),
        Command::CommutatorScaling => commutator_scaling(&cfg, out),
        Command::HamiltonianIncrement => hamiltonian_increment(&cfg, out),
    }
}

/// Exit status for an error: 2 for numerical failures, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_VALIDATION
    }
}

/// Parses `args` (program name first), runs the command and returns the exit status.
pub fn cli_dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_subcommand_and_flags_exit_one() {
        assert_eq!(cli_dispatch(["kdvstab", "frobnicate"]), EXIT_VALIDATION);
        assert_eq!(cli_dispatch(["kdvstab", "iterate", "--bogus"]), EXIT_VALIDATION);
        assert_eq!(cli_dispatch(["kdvstab"]), EXIT_VALIDATION);
        assert_eq!(cli_dispatch(["kdvstab", "--help"]), EXIT_OK);
    }

    #[test]
    fn inadmissible_config_exits_one() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("bad.toml");
        fs::write(&cfg, "a = 0.9\n").unwrap();
        let code = cli_dispatch([
            "kdvstab".as_ref(),
            "iterate".as_ref(),
            "--config".as_ref(),
            cfg.as_os_str(),
            "--out".as_ref(),
            dir.path().join("out").as_os_str(),
        ]);
        assert_eq!(code, EXIT_VALIDATION);
    }
}
