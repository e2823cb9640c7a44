use ccmpc::contraction::{contraction_margin, lmi_margin};
use ccmpc::model::{
    finite_difference_jacobian, jacobians, step, CoupledTank, Input, State, SystemModel,
    TankParameters,
};
use ccmpc::mpc::build_schedule;
use ccmpc::riemann::{distance, geodesic, ConstantMetric, FnMetric, GeodesicOptions, GeodesicPath};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn matrix(n: usize, m: usize, lo: f64, hi: f64) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(lo..hi, n * m).prop_map(move |v| DMatrix::from_vec(n, m, v))
}

fn spd(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (matrix(n, n, -1.0, 1.0), 0.05..1.0f64)
        .prop_map(move |(g, s)| &g * g.transpose() + DMatrix::identity(n, n) * s)
}

prop_compose! {
    fn schur_instance()(n in 2usize..=4)(
        a in matrix(n, n, -1.2, 1.2),
        bk in (1usize..=n).prop_flat_map(move |m| (matrix(n, m, -1.0, 1.0), matrix(m, n, -1.0, 1.0))),
        mm in spd(n),
        mp in spd(n),
        beta in 0.01..1.0f64,
    ) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, f64) {
        (a, bk.0, bk.1, mm, mp, beta)
    }
}

fn interior_state() -> impl Strategy<Value = State> {
    (0.5..10.0f64, 0.5..10.0f64).prop_map(|(a, b)| State::from_vec(vec![a, b]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn lmi_and_contraction_margins_agree((a, b, k, mm, mp, beta) in schur_instance()) {
        let w = mm.clone().try_inverse().unwrap();
        let wp = mp.clone().try_inverse().unwrap();
        let l = &k * &w;
        let cm = contraction_margin(&a, &b, &k, &mm, &mp, beta).unwrap();
        let lm = lmi_margin(&w, &l, &a, &b, &wp, beta).unwrap();
        prop_assume!(cm.abs() > 1e-9 && lm.abs() > 1e-9);
        prop_assert_eq!(lm > 0.0, cm < 0.0);
    }

    #[test]
    fn tank_jacobian_matches_central_differences(
        x in interior_state(),
        u in 0.0..10.0f64,
        tau in prop::sample::select(vec![0.5, 1.0, 5.0, 10.0]),
    ) {
        let tank = CoupledTank::default();
        let u = DVector::from_element(1, u);
        let (a, _) = jacobians(&tank, &x, &u, tau).unwrap();
        let fd = finite_difference_jacobian(&tank, &x, &u, tau).unwrap();
        prop_assert!((&a - &fd).norm() / a.norm() < 1e-5);
    }

    #[test]
    fn euler_increment_is_linear_in_tau(x in interior_state(), u in 0.0..10.0f64, tau in 0.1..5.0f64) {
        let tank = CoupledTank::default();
        let u = DVector::from_element(1, u);
        let one = step(&tank, &x, &u, tau).unwrap() - &x;
        let two = step(&tank, &x, &u, 2.0 * tau).unwrap() - &x;
        prop_assert!((two - one * 2.0).norm() <= 1e-9 * (1.0 + x.norm()));
    }

    #[test]
    fn schedule_arithmetic(
        segs in prop::collection::vec((1usize..=12, 1usize..=6), 1..=4),
        tau_delta in prop::sample::select(vec![0.25, 0.5, 1.0, 2.0]),
    ) {
        let mut ratios: Vec<(usize, usize)> = segs;
        ratios.sort_by_key(|r| r.0);
        let pairs: Vec<(f64, usize)> = ratios.iter().map(|&(r, n)| (r as f64 * tau_delta, n)).collect();
        let s = build_schedule(tau_delta, &pairs).unwrap();
        let k_hat: usize = ratios.iter().map(|&(r, n)| r * n).sum();
        let n: usize = ratios.iter().map(|&(_, n)| n).sum();
        prop_assert_eq!(s.k_hat(), k_hat);
        prop_assert_eq!(s.total_steps(), n);
        let offsets = s.node_offsets();
        prop_assert_eq!(offsets.len(), n + 1);
        prop_assert_eq!(*offsets.last().unwrap(), k_hat);
        prop_assert!(offsets.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn non_multiple_timescale_rejected(extra in 0.05..0.95f64) {
        prop_assert!(build_schedule(1.0, &[(1.0, 1), (3.0 + extra, 2)]).is_err());
    }

    #[test]
    fn constant_metric_geodesic_is_the_straight_line(
        m in spd(2),
        a in prop::array::uniform2(-3.0..3.0f64),
        b in prop::array::uniform2(-3.0..3.0f64),
    ) {
        let metric = ConstantMetric(m);
        let (a, b) = (State::from_row_slice(&a), State::from_row_slice(&b));
        let opts = GeodesicOptions::default();
        let path = geodesic(&metric, &a, &b, &opts).unwrap();
        let line = GeodesicPath::straight(&a, &b, opts.segments);
        prop_assert!((path.energy(&metric).unwrap() - line.energy(&metric).unwrap()).abs() <= 1e-9);
    }

    #[test]
    fn identity_metric_distance_is_euclidean(
        a in prop::array::uniform3(-5.0..5.0f64),
        b in prop::array::uniform3(-5.0..5.0f64),
    ) {
        let (a, b) = (State::from_row_slice(&a), State::from_row_slice(&b));
        let d = distance(&ConstantMetric(DMatrix::identity(3, 3)), &a, &b, &GeodesicOptions::default()).unwrap();
        prop_assert!((d - (&a - &b).norm()).abs() <= 1e-9);
    }

    #[test]
    fn state_dependent_geodesic_is_no_longer_than_the_line(
        a in prop::array::uniform2(-2.0..2.0f64),
        b in prop::array::uniform2(-2.0..2.0f64),
    ) {
        let metric = FnMetric::new(|x: &State| {
            DMatrix::from_row_slice(2, 2, &[1.0 + x[1] * x[1], 0.2, 0.2, 1.0 + 0.5 * x[0] * x[0]])
        });
        let (a, b) = (State::from_row_slice(&a), State::from_row_slice(&b));
        let opts = GeodesicOptions::default();
        let g = geodesic(&metric, &a, &b, &opts).unwrap();
        let line = GeodesicPath::straight(&a, &b, opts.segments);
        prop_assert!(g.length(&metric).unwrap() <= line.length(&metric).unwrap() + 1e-12);
    }
}

#[test]
fn plugged_orifices_conserve_levels() {
    let tank = CoupledTank::new_unchecked(TankParameters {
        sigma1: 0.0,
        sigma2: 0.0,
        ..TankParameters::default()
    });
    let zero: Input = DVector::zeros(1);
    let mut x = State::from_vec(vec![3.7, 6.1]);
    for _ in 0..100 {
        x = step(&tank, &x, &zero, 1.0).unwrap();
    }
    assert_eq!(x, State::from_vec(vec![3.7, 6.1]));
    assert_eq!(tank.state_dim(), 2);
}
