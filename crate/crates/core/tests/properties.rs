use pm_robopt_core::cycle::{
    effective_coefficients, CycleSample, CycleScenarioParams, DrivingCycle, VehicleParams,
};
use pm_robopt_core::fem::{build_reference_mesh, PmParams, PoleGeometry};
use pm_robopt_core::machine::{
    beta_opt, current_for_torque_unbounded, cycle_efficiency, mtpa_torque, torque, DqParams,
    EfficiencyOptions,
};
use pm_robopt_core::quadrature::gauss_legendre;
use pm_robopt_core::robust::robust_objective;
use pm_robopt_core::sparsegrid::{moments, smolyak, StdEstimator};
use proptest::prelude::*;

fn dq_strategy() -> impl Strategy<Value = DqParams> {
    (
        1e-3..0.05f64,
        5e-5..2e-3f64,
        5e-5..2e-3f64,
        0.01..0.5f64,
        1u32..6,
        10.0..40.0f64,
    )
        .prop_map(|(phi0, ld, lq, rst, npp, i_max)| DqParams {
            phi0,
            ld,
            lq,
            rst,
            npp,
            m: 3,
            i_max,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn velocity_shifts_stay_in_band(shifts in prop::collection::vec(-1.0..=1.0f64, 8)) {
        let udc = DrivingCycle::udc();
        let params = CycleScenarioParams::default();
        let sample = CycleSample { v_shifts: shifts, ..Default::default() };
        let c = udc.apply_scenario_a(&params, &sample).unwrap();
        for (a, b) in udc.points().iter().zip(c.points()) {
            prop_assert_eq!(a.t, b.t);
            prop_assert!(b.v >= a.v * (1.0 - params.delta_v) - 1e-12);
            prop_assert!(b.v <= a.v * (1.0 + params.delta_v) + 1e-12);
        }
    }

    #[test]
    fn time_shifts_keep_ordering(shifts in prop::collection::vec(-1.0..=1.0f64, 4)) {
        let udc = DrivingCycle::udc();
        let params = CycleScenarioParams::default();
        let sample = CycleSample { t_shifts: shifts, ..Default::default() };
        let c = udc.apply_scenario_b(&params, &sample).unwrap();
        prop_assert!(c.points().windows(2).all(|w| w[1].t > w[0].t));
        prop_assert_eq!(c.start(), udc.start());
        prop_assert_eq!(c.end(), udc.end());
        for (a, b) in udc.points().iter().zip(c.points()) {
            prop_assert_eq!(a.v, b.v);
        }
    }

    #[test]
    fn weather_coefficients_within_support(fr in 0.0..=1.0f64, fd in 0.0..=1.0f64) {
        let v = VehicleParams::default();
        let p = CycleScenarioParams::default();
        let (crr, cd) = effective_coefficients(&v, &p, &CycleSample { crr_factor: fr, cd_factor: fd, ..Default::default() });
        prop_assert!(crr >= v.crr_dry && crr <= p.delta_rr * v.crr_dry * (1.0 + 1e-15));
        prop_assert!(cd >= v.cd_dry && cd <= p.delta_d * v.cd_dry * (1.0 + 1e-15));
    }

    #[test]
    fn gauss_rule_is_exact_to_degree(n in 1usize..12, coeffs in prop::collection::vec(-2.0..2.0f64, 24)) {
        let (x, w) = gauss_legendre(n);
        let deg = 2 * n - 1;
        let poly = |t: f64| coeffs[..=deg].iter().rev().fold(0.0, |acc, c| acc * t + c);
        let exact: f64 = coeffs[..=deg].iter().enumerate().map(|(k, c)| if k % 2 == 0 { 2.0 * c / (k as f64 + 1.0) } else { 0.0 }).sum();
        let approx: f64 = x.iter().zip(&w).map(|(t, wi)| wi * poly(*t)).sum();
        prop_assert!((approx - exact).abs() < 1e-11);
    }

    #[test]
    fn sparse_weights_sum_to_one(d in 1usize..8, level in 0usize..4) {
        let g = smolyak(d, level);
        prop_assert!((g.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(g.points().all(|z| z.iter().all(|v| (-1.0..=1.0).contains(v))));
    }

    #[test]
    fn moments_shift_and_scale(vals in prop::collection::vec(-5.0..5.0f64, 9), shift in -3.0..3.0f64, scale in 0.1..4.0f64) {
        let g = smolyak(2, 1);
        let w = g.weights();
        let v = &vals[..w.len()];
        let (m, s) = moments(v, w, StdEstimator::Centered).unwrap();
        let t: Vec<f64> = v.iter().map(|x| scale * x + shift).collect();
        let (m2, s2) = moments(&t, w, StdEstimator::Centered).unwrap();
        prop_assert!(s >= 0.0);
        prop_assert!((m2 - (scale * m + shift)).abs() < 1e-10);
        prop_assert!((s2 - scale * s).abs() < 1e-6 * (1.0 + s2));
    }

    #[test]
    fn mtpa_angle_maximizes_torque(dq in dq_strategy(), i in 0.1..40.0f64, beta in 0.0..std::f64::consts::PI) {
        let best = mtpa_torque(&dq, i);
        prop_assert!(best >= torque(&dq, i, beta) - 1e-12 * best.abs().max(1.0));
        let b = beta_opt(&dq, i);
        prop_assert!(b > 0.0 && b < std::f64::consts::PI);
    }

    #[test]
    fn current_for_torque_round_trips_and_is_monotone(dq in dq_strategy(), t1 in 0.0..8.0f64, dt in 0.0..4.0f64) {
        let a = current_for_torque_unbounded(&dq, t1);
        let b = current_for_torque_unbounded(&dq, t1 + dt);
        prop_assert!(b.i >= a.i);
        prop_assert!((mtpa_torque(&dq, a.i) - t1).abs() <= 1e-8 * t1.max(1.0));
    }

    #[test]
    fn cycle_efficiency_is_a_fraction(dq in dq_strategy()) {
        let v = VehicleParams::default();
        let e = cycle_efficiency(&dq, &DrivingCycle::udc(), &v, v.crr_dry, v.cd_dry, &EfficiencyOptions::default()).unwrap();
        prop_assert!(e > 0.0 && e <= 1.0);
    }

    #[test]
    fn robust_objective_bounds(p1 in 1.0..30.0f64, p2 in 1.0..20.0f64, l1 in 0.0..3.0f64, l2 in 0.0..3.0f64) {
        let d = [0.2, 0.3, 0.1];
        let (j0, _) = robust_objective(&[p1, p2, 2.0], 0.0, &d);
        let (ja, _) = robust_objective(&[p1, p2, 2.0], l1.min(l2), &d);
        let (jb, _) = robust_objective(&[p1, p2, 2.0], l1.max(l2), &d);
        prop_assert_eq!(j0, p1 * p2);
        prop_assert!(j0 <= ja && ja <= jb);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn mapped_meshes_stay_valid(p1 in 1.0..27.0f64, p2 in 0.5..18.0f64, p3 in 0.5..6.0f64) {
        let g = PoleGeometry::default();
        let p = PmParams::new(p1, p2, p3);
        prop_assume!(g.check_pm(&p).is_ok());
        let mesh = build_reference_mesh(&g, &PmParams::new(10.0, 13.3, 3.0), 0).unwrap();
        let nodes = mesh.mapped_nodes(&p);
        prop_assert!(mesh.validate_nodes(&nodes).is_ok());
        let total: f64 = mesh.areas(&nodes).iter().sum();
        let reference: f64 = mesh.areas(&mesh.nodes).iter().sum();
        prop_assert!((total - reference).abs() < 1e-12 * reference);
    }
}
