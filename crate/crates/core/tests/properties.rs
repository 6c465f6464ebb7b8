use std::sync::{Arc, OnceLock};

use proptest::prelude::*;

use kdv_core::bourgain::{dyadic_index, xsb1_norm, SpacetimeField};
use kdv_core::experiments::RunConfig;
use kdv_core::grid::{forward_transform, sobolev_norm, Grid, RealField};
use kdv_core::imethod::{apply_I, apply_I_inverse, m_eval, IMultiplier};
use kdv_core::spectral_ops::{calibrate_thetas, project_p, project_q, Projector};
use kdv_core::weighted::{weighted_h1_norm, WeightParams};

fn small_grid() -> Arc<Grid> {
    Grid::new(64, 20.0).unwrap()
}

fn projector() -> &'static Projector {
    static PR: OnceLock<Projector> = OnceLock::new();
    PR.get_or_init(|| {
        let g = Grid::new(1024, 100.0).unwrap();
        Projector::new(Arc::new(calibrate_thetas(&g, 0.5, 1.0).unwrap()))
    })
}

fn bumps() -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
    prop::collection::vec((-1.0..1.0f64, -8.0..8.0f64, 0.5..3.0f64), 1..4)
}

fn field_from(grid: &Arc<Grid>, b: &[(f64, f64, f64)]) -> RealField {
    RealField::from_fn(grid, |x| b.iter().map(|&(a, x0, w)| a * (-((x - x0) / w).powi(2)).exp()).sum())
}

fn spacetime(values: &[f64]) -> SpacetimeField {
    SpacetimeField::new(&Grid::new(8, 6.0).unwrap(), -1.0, 0.25, 8, values.to_vec()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn parseval_holds(values in prop::collection::vec(-1.0..1.0f64, 64)) {
        let g = small_grid();
        let f = RealField::new(&g, values).unwrap();
        let lhs = f.norm_l2().powi(2);
        let rhs = g.box_length() * forward_transform(&f).coeffs().iter().map(|c| c.norm_sqr()).sum::<f64>();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs));
    }

    #[test]
    fn multiplier_is_even_bounded_and_nonincreasing(
        n in 1.0..100.0f64, s in 0.76..0.99f64, x in 0.0..5000.0f64, dx in 0.0..100.0f64,
    ) {
        let m = IMultiplier::new(n, s).unwrap();
        let (a, b) = (m_eval(&m, x), m_eval(&m, x + dx));
        prop_assert!(a > 0.0 && a <= 1.0);
        prop_assert_eq!(a, m_eval(&m, -x));
        prop_assert!(b <= a + 1e-15);
    }

    #[test]
    fn multiplier_inverse_round_trips(values in prop::collection::vec(-1.0..1.0f64, 64), n in 1.0..5.0f64) {
        let f = RealField::new(&small_grid(), values).unwrap();
        let m = IMultiplier::new(n, 0.9).unwrap();
        let back = apply_I_inverse(&m, &apply_I(&m, &f));
        prop_assert!(back.sub(&f).max_abs() < 1e-12);
        prop_assert!(sobolev_norm(&apply_I(&m, &f), 0.0) <= sobolev_norm(&f, 0.0) * (1.0 + 1e-12));
    }

    #[test]
    fn dyadic_blocks_bracket_their_values(v in 1.0..1e6f64) {
        let j = dyadic_index(v);
        prop_assert!(v <= 2f64.powi(j as i32 + 1));
        prop_assert!(j == 0 || v > 2f64.powi(j as i32));
    }

    #[test]
    fn xsb1_triangle_inequality(
        f in prop::collection::vec(-1.0..1.0f64, 64),
        g in prop::collection::vec(-1.0..1.0f64, 64),
        s in 0.0..1.5f64, b in -0.5..1.0f64,
    ) {
        let (f, g) = (spacetime(&f), spacetime(&g));
        let sum = f.add(&g).unwrap();
        prop_assert!(xsb1_norm(&sum, s, b) <= xsb1_norm(&f, s, b) + xsb1_norm(&g, s, b) + 1e-10);
    }

    #[test]
    fn xsb1_is_nondecreasing_in_s(f in prop::collection::vec(-1.0..1.0f64, 64), s in 0.0..1.5f64, ds in 0.0..0.5f64) {
        let f = spacetime(&f);
        prop_assert!(xsb1_norm(&f, s, 0.5) <= xsb1_norm(&f, s + ds, 0.5) * (1.0 + 1e-14));
    }

    #[test]
    fn xsb1_is_absolutely_homogeneous(f in prop::collection::vec(-1.0..1.0f64, 64), k in -5.0..5.0f64) {
        let f = spacetime(&f);
        let n = xsb1_norm(&f, 0.8, 0.5);
        prop_assert!((xsb1_norm(&f.scale(k), 0.8, 0.5) - k.abs() * n).abs() <= 1e-12 * (1.0 + n));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn projector_is_idempotent_and_complementary(b in bumps()) {
        let pr = projector();
        let w = field_from(&pr.pair().zeta1.grid().clone(), &b);
        let scale = 1.0 + w.norm_l2();
        let p = project_p(pr, &w);
        prop_assert!(project_p(pr, &p).sub(&p).norm_l2() <= 1e-10 * scale);
        prop_assert!(project_p(pr, &project_q(pr, &w)).norm_l2() <= 1e-10 * scale);
        prop_assert!(project_q(pr, &w).add(&p).sub(&w).norm_l2() <= 1e-12 * scale);
    }

    #[test]
    fn weighted_norm_grows_with_truncation_radius(b in bumps(), r in 2.0..15.0f64, dr in 0.0..5.0f64) {
        let g = small_grid();
        let f = field_from(&g, &b);
        let p = WeightParams::new(0.4, r, 1.0).unwrap();
        let q = p.with_radius(r + dr).unwrap();
        prop_assert!(weighted_h1_norm(&p, &f).unwrap() <= weighted_h1_norm(&q, &f).unwrap() * (1.0 + 1e-12));
    }

    #[test]
    fn config_round_trips_through_toml(
        s in 0.876..0.999f64, a in 0.01..0.57f64, eps1 in 0.0..1e-2f64, seed in 0..=i64::MAX as u64,
        kappa in 0.05..0.95f64, sign in prop::bool::ANY,
    ) {
        let cfg = RunConfig { s, a, eps1, seed, kappa, gamma_sign: if sign { 1.0 } else { -1.0 }, ..RunConfig::default() };
        prop_assert!(cfg.validate().is_ok());
        prop_assert_eq!(RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }
}
