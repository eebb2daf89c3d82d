use super::*;
use crate::coefficients::{phantom_library, PhantomParams, ScalarField};
use crate::geometry::{Discretization, SpatialGrid};
use approx::assert_abs_diff_eq;
use proptest::prelude::*;

fn field(grid: &SpatialGrid, f: impl Fn(Vec3) -> f64) -> FunctionalField {
    FunctionalField {
        grid: grid.clone(),
        values: (0..grid.len()).map(|n| Complex64::new(f(grid.position(n)), 0.0)).collect(),
        provenance: Provenance::Oracle,
        label: "test".into(),
    }
}

#[test]
fn extract_f_of_constant_and_ramp() {
    let d = Domain::unit_box(2);
    let g = SpatialGrid::cubic(&d, 17).unwrap();
    let th = normalize([0.6, 0.8, 0.0]);
    let c = field(&g, |_| 3.0);
    assert_eq!(extract_f(&c, &d, [0.5, 0.5, 0.0], th, 0.2).unwrap().value, 0.0);
    let ramp = field(&g, |x| 2.5 * dot(x, th));
    let e = extract_f(&ramp, &d, [0.61, 0.53, 0.0], th, 0.17).unwrap();
    assert_abs_diff_eq!(e.value, 2.5, epsilon = 1e-12);
    assert!(matches!(
        extract_f(&ramp, &d, [0.05, 0.05, 0.0], th, 0.3),
        Err(Error::OutsideDomain { .. })
    ));
}

#[test]
fn extract_f_of_broken_ray_integral() {
    // H(x) = int_0^{depth along -theta2} F(x - t theta2) dt with F known
    let d = Domain::unit_box(2);
    let g = SpatialGrid::cubic(&d, 129).unwrap();
    let th2 = [0.0, 1.0, 0.0];
    let sigma = |p: Vec3| 1.0 + 0.5 * (-((p[0] - 0.4).powi(2) + (p[1] - 0.6).powi(2)) / 0.05).exp();
    let kappa = 0.3;
    let x1 = |p: Vec3| [0.0, p[1], 0.0];
    let big_f = |p: Vec3| {
        let out = [p[0], 1.0, 0.0];
        (-optical_distance(&sigma, p, out, 1e-3) - optical_distance(&sigma, x1(p), p, 1e-3)).exp() * kappa
    };
    let h = field(&g, |p| {
        if (p[0] - 0.5).abs() > 0.02 || (p[1] - 0.5).abs() > 0.05 {
            return 0.0;
        }
        let m = 200;
        let len = p[1];
        (0..=m)
            .map(|i| {
                let w = if i == 0 || i == m { 0.5 } else { 1.0 };
                w * big_f([p[0], p[1] - len * i as f64 / m as f64, 0.0])
            })
            .sum::<f64>()
            * len
            / m as f64
    });
    let x = [0.5, 0.5, 0.0];
    let s = 4.0 / 128.0;
    let e = extract_f(&h, &d, axpy(x, 0.5 * s, th2), th2, s).unwrap();
    assert!((e.value - big_f(x)).abs() < 5e-3 * big_f(x), "{} {}", e.value, big_f(x));
}

#[test]
fn tau_formula_homogeneous() {
    // F_fwd = e^{-2 s a} k, F_bwd = e^{-2 s b} k, T = e^{-s (a + b)}
    let (sig, a, b, k): (f64, f64, f64, f64) = (1.7, 0.3, 0.45, 0.02);
    let tau = recover_tau((-2.0 * sig * a).exp() * k, (-2.0 * sig * b).exp() * k, (-sig * (a + b)).exp()).unwrap();
    assert_abs_diff_eq!(tau, sig * a, epsilon = 1e-12);
    // at the entry point
    let tau0 = recover_tau(k, (-2.0 * sig * (a + b)).exp() * k, (-sig * (a + b)).exp()).unwrap();
    assert_abs_diff_eq!(tau0, 0.0, epsilon = 1e-12);
    assert!(matches!(recover_tau(0.0, 1.0, 0.5), Err(Error::LogDomain(_))));
    assert!(matches!(recover_tau(1.0, 1.0, -0.5), Err(Error::LogDomain(_))));
}

proptest! {
    #[test]
    fn tau_ignores_kernel_scale(a in 0.0f64..2.0, b in 0.0f64..2.0, c in 0.01f64..100.0) {
        let t1 = recover_tau((-2.0 * a).exp(), (-2.0 * b).exp(), (-(a + b)).exp()).unwrap();
        let t2 = recover_tau(c * (-2.0 * a).exp(), c * (-2.0 * b).exp(), (-(a + b)).exp()).unwrap();
        prop_assert!((t1 - t2).abs() < 1e-12);
        prop_assert!((t1 - a).abs() < 1e-12);
    }

    #[test]
    fn k_round_trip(k in 0.0f64..5.0, to in 0.0f64..5.0, ti in 0.0f64..5.0) {
        let f = (-to - ti).exp() * k;
        let back = recover_k(f, to, ti, 30.0).unwrap();
        prop_assert!((back - k).abs() <= 1e-12 * k.max(1.0));
    }

    #[test]
    fn tau_is_additive_on_collinear_points(t1 in 0.05f64..0.45, t2 in 0.5f64..0.95) {
        // exact data on the segment [0, 1] of a Gaussian-bump sigma
        let sigma = |p: Vec3| 1.0 + 0.8 * (-(p[0] - 0.4).powi(2) / 0.02).exp();
        let tau = |a: f64, b: f64| optical_distance(&sigma, [a, 0.5, 0.0], [b, 0.5, 0.0], 1e-3);
        let total = tau(0.0, 1.0);
        let hat = |x: f64| recover_tau((-2.0 * tau(0.0, x)).exp(), (-2.0 * tau(x, 1.0)).exp(), (-total).exp()).unwrap();
        let seg = hat(t2) - hat(t1);
        prop_assert!((seg - tau(t1, t2)).abs() < 1e-6);
    }
}

#[test]
fn sigma_from_tau() {
    assert_eq!(recover_sigma(&[0.0, 0.2, 0.4, 0.6], 0.1).unwrap().iter().map(|v| (v * 1e9).round() / 1e9).collect::<Vec<_>>(), vec![2.0; 4]);
    for v in recover_sigma(&[0.3; 5], 0.1).unwrap() {
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-14);
    }
    assert!(matches!(recover_sigma(&[0.0, 1.0], 0.1), Err(Error::TooFewSamples(_))));
}

#[test]
fn sigma_from_analytic_tau_is_second_order() {
    let sigma = |p: Vec3| 1.0 + 0.8 * (-(p[0] - 0.45).powi(2) / 0.02).exp();
    let mut errs = Vec::new();
    let mut dts = Vec::new();
    for n in [16usize, 32, 64, 128] {
        let dt = 1.0 / n as f64;
        let taus: Vec<f64> =
            (0..=n).map(|i| optical_distance(&sigma, [0.0, 0.0, 0.0], [i as f64 * dt, 0.0, 0.0], 1e-4)).collect();
        let sig = recover_sigma(&taus, dt).unwrap();
        let err = (n / 4..=3 * n / 4).map(|i| (sig[i] - sigma([i as f64 * dt, 0.0, 0.0])).abs()).fold(0.0, f64::max);
        errs.push(err);
        dts.push(dt);
    }
    let slope = crate::stats::loglog_slope(&dts, &errs);
    assert!(slope >= 1.8, "{slope} {errs:?}");
}

#[test]
fn k_formula_edges() {
    assert_eq!(recover_k(0.0, 1.0, 2.0, 30.0).unwrap(), 0.0);
    assert!(matches!(recover_k(1.0, 20.0, 20.0, 30.0), Err(Error::DynamicRange { .. })));
}

#[test]
fn lattice_steps() {
    let d = Domain::unit_box(2);
    let g = SpatialGrid::cubic(&d, 11).unwrap();
    let r = std::f64::consts::FRAC_1_SQRT_2;
    assert_abs_diff_eq!(lattice_step(&g, [0.0, -1.0, 0.0]).unwrap(), 0.1, epsilon = 1e-15);
    assert_abs_diff_eq!(lattice_step(&g, [-r, r, 0.0]).unwrap(), 0.1 * 2f64.sqrt(), epsilon = 1e-12);
    assert!(lattice_step(&g, normalize([1.0, 2.0, 0.0])).is_none());
}

#[test]
fn comb_rows_cover_the_interior_once() {
    let d = Domain::unit_box(3);
    let g = SpatialGrid::cubic(&d, 9).unwrap();
    let mut seen = vec![0; g.len()];
    for p in patterns(3, 3) {
        for r in rows(&g, 1, 3, &p) {
            assert_eq!(r.len(), 9);
            for n in r {
                seen[n] += 1;
            }
        }
    }
    for n in 0..g.len() {
        let c = g.coords(n);
        let want = (c[0] > 0 && c[0] < 8 && c[2] > 0 && c[2] < 8) as i32;
        assert_eq!(seen[n], want);
    }
}

fn disc2(n: usize, m: usize) -> Arc<Discretization> {
    let d = Domain::unit_box(2);
    Arc::new(Discretization::new(d, SpatialGrid::cubic(&d, n).unwrap(), AngularGrid::circle(m).unwrap()).unwrap())
}

fn small_design() -> PointDesign {
    PointDesign { k_points: vec![[0.5, 0.5, 0.5]], ..Default::default() }
}

#[test]
fn point_pipeline_homogeneous() {
    let disc = disc2(33, 32);
    let ph = phantom_library("homogeneous", &PhantomParams::default(), &disc.domain).unwrap();
    let t = Transport::new(disc, &ph).unwrap();
    let opts = SolveOptions::default();
    let r = run_point_pipeline(&t, &OracleProvider { opts }, &small_design(), &opts).unwrap();
    assert!(r.failures.is_empty(), "{:?}", r.failures);
    let m = r.metrics;
    assert!(m.sigma_rel_linf.unwrap() < 0.1, "{m:?}");
    assert!(m.k_rel_max.unwrap() < 0.15, "{m:?}");
    for s in r.k_symmetric().chunks(2) {
        assert_eq!(s[0].value, s[1].value);
        assert_eq!(s[1].theta2, s[0].theta1.map(|c| -c));
    }
}

#[test]
fn point_pipeline_without_scattering() {
    let disc = disc2(17, 16);
    let ph = phantom_library("homogeneous", &PhantomParams::default(), &disc.domain).unwrap().without_scattering();
    let t = Transport::new(disc, &ph).unwrap();
    let opts = SolveOptions::default();
    let r = run_point_pipeline(&t, &OracleProvider { opts }, &small_design(), &opts).unwrap();
    assert!(r.data.iter().all(|d| d.value == 0.0));
    assert!(r.failures.iter().any(|f| f.error.contains("log-domain")));
    assert!(r.k.is_empty());
}

#[test]
fn stability_of_identical_results_is_zero() {
    let disc = disc2(17, 16);
    let ph = phantom_library("homogeneous", &PhantomParams::default(), &disc.domain).unwrap();
    let t = Transport::new(disc.clone(), &ph).unwrap();
    let opts = SolveOptions::default();
    let r = run_point_pipeline(&t, &OracleProvider { opts }, &small_design(), &opts).unwrap();
    let rep = stability_report(&r, &r, &disc.domain);
    assert_eq!((rep.sigma_lhs, rep.sigma_rhs, rep.k_lhs, rep.k_rhs), (0.0, 0.0, 0.0, 0.0));
    assert!(rep.sigma_holds && rep.k_holds);
}

#[test]
fn kernel_value_tracks_kappa() {
    let d = Domain::unit_box(2);
    let mut ph = phantom_library("homogeneous", &PhantomParams::default(), &d).unwrap();
    ph.kernel.kappa = ScalarField::constant(0.4);
    let a = AngularGrid::circle(8).unwrap();
    let v = kernel_value(&ph, &a, [0.5, 0.5, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]).unwrap();
    assert_abs_diff_eq!(v, 0.4 / (2.0 * std::f64::consts::PI), epsilon = 1e-15);
}
