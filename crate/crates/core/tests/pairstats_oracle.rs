//! Cross-validation of the double-coset pair tables against the independent
//! pair-scan oracle, and quadrature/scaling checks of the correlation
//! integrals.

mod common;

use common::pair_class_oracle;
use lattice_orbits::fuchsian::{build_congruence, build_hecke, build_sl2z, c_gamma};
use lattice_orbits::mc::{linear_fit, worker_rng};
use lattice_orbits::pairstats::{
    build_pair_table, correlation_integral, correlation_integral_with, phi_function,
    CorrelationKernel, PairTableConfig,
};
use std::sync::Arc;

#[test]
fn hecke5_table_matches_pair_scan_oracle() {
    let l = Arc::new(build_hecke(5).unwrap());
    let max_c = 12.0;
    let table = build_pair_table(
        &l,
        0,
        0,
        max_c,
        PairTableConfig { prune_factor: 3.0, ..Default::default() },
    )
    .unwrap();
    let oracle = pair_class_oracle(&l, 0, 0, max_c);
    assert!(!oracle.is_empty());
    assert_eq!(table.entries, oracle, "hecke(5) table vs independent class count");
}

#[test]
fn hecke7_table_matches_pair_scan_oracle() {
    let l = Arc::new(build_hecke(7).unwrap());
    let max_c = 8.0;
    let table = build_pair_table(
        &l,
        0,
        0,
        max_c,
        PairTableConfig { prune_factor: 3.0, ..Default::default() },
    )
    .unwrap();
    let oracle = pair_class_oracle(&l, 0, 0, max_c);
    assert!(!oracle.is_empty());
    assert_eq!(table.entries, oracle);
}

#[test]
fn gamma2_cross_cusp_table_matches_oracle() {
    let l = Arc::new(build_congruence(2).unwrap());
    let max_c = 20.0;
    let table = build_pair_table(
        &l,
        0,
        1,
        max_c,
        PairTableConfig { prune_factor: 3.0, ..Default::default() },
    )
    .unwrap();
    assert!(!table.is_homothetic_pair);
    let oracle = pair_class_oracle(&l, 0, 1, max_c);
    assert_eq!(table.entries, oracle, "Gamma(2) inequivalent-cusp table");
}

#[test]
fn gamma2_same_cusp_table_matches_oracle() {
    let l = Arc::new(build_congruence(2).unwrap());
    let max_c = 16.0;
    let table = build_pair_table(
        &l,
        1,
        1,
        max_c,
        PairTableConfig { prune_factor: 3.0, ..Default::default() },
    )
    .unwrap();
    assert!(table.is_homothetic_pair);
    let oracle = pair_class_oracle(&l, 1, 1, max_c);
    assert_eq!(table.entries, oracle);
}

#[test]
fn gamma3_pair_table_requires_minus_identity() {
    let l = Arc::new(build_congruence(3).unwrap());
    assert!(matches!(
        build_pair_table(&l, 0, 0, 10.0, PairTableConfig::default()),
        Err(lattice_orbits::Error::MinusIdentityRequired)
    ));
}

#[test]
fn correlation_integral_matches_quadrature() {
    // nested Simpson for the ball-ball kernel:
    // I = int_0^R 2 pi rho [ int_{-R}^{R} Phi(rho |v|) 2 sqrt(R^2-v^2) dv ] drho
    let l = Arc::new(build_sl2z());
    let table = build_pair_table(&l, 0, 0, 2000.0, PairTableConfig::default()).unwrap();
    let r = 5.0;
    let phi = |t: f64| -> f64 {
        if t <= 0.0 {
            0.0
        } else {
            phi_function(&table, t, 2000.0).unwrap().0
        }
    };
    let inner = |rho: f64| -> f64 {
        let m = 600;
        let h = 2.0 * r / m as f64;
        let f = |v: f64| phi(rho * v.abs()) * 2.0 * ((r * r - v * v).max(0.0)).sqrt();
        let mut s = 0.0;
        for i in 0..m {
            let v0 = -r + i as f64 * h;
            s += h / 6.0 * (f(v0) + 4.0 * f(v0 + h / 2.0) + f(v0 + h));
        }
        s
    };
    let m = 400;
    let h = r / m as f64;
    let mut quad = 0.0;
    for i in 0..m {
        let r0 = i as f64 * h;
        let g = |rho: f64| 2.0 * std::f64::consts::PI * rho * inner(rho);
        quad += h / 6.0 * (g(r0) + 4.0 * g(r0 + h / 2.0) + g(r0 + h));
    }

    let mut rng = worker_rng(31, 0);
    let (mc, unc) =
        correlation_integral(&table, CorrelationKernel::BallBall { r }, 600_000, &mut rng)
            .unwrap();
    assert!(
        (mc - quad).abs() < 4.0 * unc + 0.002 * quad.abs(),
        "MC {mc} +- {unc} vs quadrature {quad}"
    );
}

#[test]
fn ball_residual_growth_exponent() {
    // |CI_R - c (pi R^2)^2| grows roughly like R^{2(2-delta)} = R^{8/3};
    // a loose two-sided window on the fitted slope
    let l = Arc::new(build_sl2z());
    let table = build_pair_table(&l, 0, 0, 5000.0, PairTableConfig::default()).unwrap();
    let cg = c_gamma(&l);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, r) in [5.0, 10.0, 20.0].into_iter().enumerate() {
        let mut rng = worker_rng(41 + i as u64, 0);
        let (ci, _) = correlation_integral(
            &table,
            CorrelationKernel::BallBall { r },
            800_000,
            &mut rng,
        )
        .unwrap();
        let residual = (ci - cg * (std::f64::consts::PI * r * r).powi(2)).abs();
        xs.push(r.ln());
        ys.push(residual.ln());
    }
    let (slope, _, _) = linear_fit(&xs, &ys);
    assert!(slope > 1.8 && slope < 3.5, "residual slope {slope}");
}

#[test]
fn det_region_residual_scales_with_d() {
    // |CI_D - c * vol(f_D)| stays at most about linear in D
    let l = Arc::new(build_sl2z());
    let table = build_pair_table(&l, 0, 0, 2000.0, PairTableConfig::default()).unwrap();
    let cg = c_gamma(&l);
    let r = 8.0;
    let s = 1.0;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, d) in [1.0, 2.0, 4.0, 8.0].into_iter().enumerate() {
        let kernel = CorrelationKernel::BallDetRegion { r, d, s };
        let mut rng = worker_rng(51 + i as u64, 0);
        let (ci, _) = correlation_integral(&table, kernel, 400_000, &mut rng).unwrap();
        let mut rng = worker_rng(151 + i as u64, 0);
        let (vol, _) = correlation_integral_with(&|_| 1.0, kernel, 400_000, &mut rng);
        let residual = (ci - cg * vol).abs();
        xs.push(d.ln());
        ys.push(residual.max(1e-9).ln());
    }
    let (slope, _, _) = linear_fit(&xs, &ys);
    assert!(slope < 1.4, "residual-in-D slope {slope}");
}
