use std::sync::Arc;

use kdv_core::grid::{sobolev_norm, Grid, RealField};
use kdv_core::imethod::IMultiplier;
use kdv_core::kdv::Sponge;
use kdv_core::modulation::{w_h1, CoupledEvolver, ModulationConfig, ModulationContext, PerturbationState};

const SPONGE: Sponge = Sponge { start: -40.0, width: 40.0, strength: 8.0 };

fn setup(size: f64) -> (Arc<ModulationContext>, IMultiplier, PerturbationState) {
    let grid = Grid::new(2048, 200.0).unwrap();
    let ctx = Arc::new(ModulationContext::new(&grid, 0.5, 1.0, ModulationConfig::default()).unwrap());
    let im = IMultiplier::new(1.0, 0.9).unwrap();
    let b = RealField::from_fn(&grid, |y| (-((y - 2.0) / 2.0).powi(2)).exp() * (1.0 + 0.5 * y.sin()));
    let st = PerturbationState::new(&ctx, &b, &im).unwrap();
    let k = size / w_h1(&st);
    let mut st = PerturbationState::new(&ctx, &b.scale(k), &im).unwrap();
    st.orthogonalize(&ctx, &im).unwrap();
    (ctx, im, st)
}

#[test]
fn evolved_weighted_perturbation_tracks_full_solution() {
    let (ctx, im, mut st) = setup(5e-4);
    let ev = CoupledEvolver::new(ctx.clone(), im, 0.01, Some(SPONGE)).unwrap();
    let mut worst = 0.0f64;
    for k in 1..=500 {
        ev.step(&mut st).unwrap();
        if k % 50 == 0 {
            let derived = st.derived_w(&ctx, &im).unwrap();
            let evolved = ctx.clip_to_radius(&st.w_tilde);
            let rel = sobolev_norm(&derived.sub(&evolved), 1.0) / sobolev_norm(&derived, 1.0);
            worst = worst.max(rel);
        }
    }
    println!("max relative H1 gap over [0, 5]: {worst:.3e}");
    assert!(worst < 0.05, "{worst}");
}

#[test]
fn small_perturbation_decays_monotonically_after_transient() {
    let (ctx, im, mut st) = setup(1e-4);
    let ev = CoupledEvolver::new(ctx.clone(), im, 0.01, Some(SPONGE)).unwrap();
    let mut norms = vec![];
    for k in 1..=600 {
        let rep = ev.step(&mut st).unwrap();
        assert!(rep.residual < 1e-6);
        if k % 25 == 0 {
            norms.push(w_h1(&st));
        }
    }
    // transient: the first time unit
    let tail = &norms[4..];
    assert!(tail.windows(2).all(|w| w[1] < w[0]), "{norms:?}");
    assert!(tail.last().unwrap() < &(0.2 * tail[0]));
}
