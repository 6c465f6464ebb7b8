use std::time::Instant;

use kdv_core::grid::Grid;
use kdv_core::spectral_ops::{build_operator, discrete_spectrum, SPECTRUM_LENGTH, SPECTRUM_POINTS};

#[test]
fn spectral_gap_and_double_zero() {
    let g = Grid::new(SPECTRUM_POINTS, SPECTRUM_LENGTH).unwrap();
    for (a, c) in [(0.3, 1.0), (0.5, 1.0), (0.5, 2.0)] {
        let t = Instant::now();
        let op = build_operator(&g, a, c).unwrap();
        let rep = discrete_spectrum(&op).unwrap();
        println!(
            "a={a} c={c} near_zero=({:e}, {:e}) max_re_rest={} b={} time={:?}",
            rep.near_zero[0].norm(),
            rep.near_zero[1].norm(),
            rep.max_real_rest,
            rep.bound,
            t.elapsed()
        );
        assert!(rep.near_zero.iter().all(|l| l.norm() < 1e-6));
        assert!(rep.max_real_rest <= rep.bound + 0.05);
    }
}
