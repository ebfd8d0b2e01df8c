use pm_robopt_core::cycle::{effective_coefficients, CycleSample};
use pm_robopt_core::machine::cycle_efficiency;
use pm_robopt_core::robust::*;
use pm_robopt_core::sparsegrid::smolyak;
use pm_robopt_core::sqp::{SqpOptions, SqpStatus};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;

fn model() -> &'static MachineModel {
    static M: OnceLock<MachineModel> = OnceLock::new();
    M.get_or_init(|| MachineModel::shipped(0).unwrap())
}

fn spec(lambda: f64) -> RobustSpec {
    let (e_d, m_d) = model().default_targets(&P_INIT).unwrap();
    RobustSpec::new(lambda, e_d, m_d)
}

#[test]
fn nominal_qois_are_deterministic_values() {
    let m = model();
    let q = evaluate_qois(m, &P_INIT, &Scenario::new(ScenarioKind::Nominal), &[]).unwrap();
    let dq = m
        .dq(&pm_robopt_core::fem::PmParams::from_slice(&P_INIT))
        .unwrap();
    let v = &m.vehicle;
    let e = cycle_efficiency(&dq, &m.cycle, v, v.crr_dry, v.cd_dry, &m.efficiency).unwrap();
    assert_eq!(q.efficiency, e);
    assert!(q.efficiency > 0.8 && q.efficiency < 0.9);
    // the shipped current limit leaves a 25 % torque margin at the initial design
    let (_, m_d) = m.default_targets(&P_INIT).unwrap();
    assert!((q.max_torque / m_d - 1.25).abs() < 0.01);
}

#[test]
fn weather_center_uses_midpoint_coefficients() {
    let m = model();
    let s = Scenario::new(ScenarioKind::C);
    let q = evaluate_qois(m, &P_INIT, &s, &[0.0; 5]).unwrap();
    let sample = CycleSample {
        crr_factor: 0.5,
        cd_factor: 0.5,
        ..Default::default()
    };
    let (crr, cd) = effective_coefficients(&m.vehicle, &s.cycle, &sample);
    assert!(
        (crr / m.vehicle.crr_dry - 1.15).abs() < 1e-12
            && (cd / m.vehicle.cd_dry - 1.1).abs() < 1e-12
    );
    let dq = m
        .dq(&pm_robopt_core::fem::PmParams::from_slice(&P_INIT))
        .unwrap();
    let e = cycle_efficiency(&dq, &m.cycle, &m.vehicle, crr, cd, &m.efficiency).unwrap();
    assert_eq!(q.efficiency, e);
}

#[test]
fn antipodal_velocity_samples_differ() {
    let s = Scenario::new(ScenarioKind::A);
    let mut z = vec![0.0; 11];
    for v in &mut z[3..] {
        *v = 1.0;
    }
    let up = evaluate_qois(model(), &P_INIT, &s, &z).unwrap();
    let down = evaluate_qois(
        model(),
        &P_INIT,
        &s,
        &z.iter().map(|v| -v).collect::<Vec<_>>(),
    )
    .unwrap();
    assert_ne!(up.efficiency, down.efficiency);
    for q in [up, down] {
        assert!(q.efficiency > 0.0 && q.efficiency <= 1.0);
    }
}

#[test]
fn nominal_constraints_collapse_to_deterministic() {
    let sp = spec(2.0);
    let s = Scenario::new(ScenarioKind::Nominal);
    let p = [12.0, 5.0, 2.0];
    let c = robust_constraints(model(), &p, &sp, &s, &scenario_grid(&s, 3), false).unwrap();
    let q = evaluate_qois(model(), &p, &s, &[]).unwrap();
    assert_eq!(c.values[0], sp.e_d - q.efficiency);
    assert_eq!(c.values[1], sp.m_max_d - q.max_torque);
}

#[test]
fn constraints_grow_with_risk_aversion() {
    let s = Scenario::new(ScenarioKind::C);
    let grid = scenario_grid(&s, 2);
    let p = [12.0, 5.0, 2.0];
    let mut last: Option<Vec<f64>> = None;
    for lambda in [0.0, 0.5, 1.0, 2.0, 4.0] {
        let c = robust_constraints(model(), &p, &spec(lambda), &s, &grid, false).unwrap();
        if lambda == 0.0 {
            assert_eq!(c.values[0], spec(0.0).e_d - c.efficiency.mean);
        }
        if let Some(prev) = &last {
            assert!(c.values[0] >= prev[0] && c.values[1] >= prev[1]);
        }
        last = Some(c.values);
    }
}

#[test]
fn constraint_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let sp = spec(2.0);
    let s = Scenario::new(ScenarioKind::C);
    let grid = scenario_grid(&s, 2);
    let h = 1e-3;
    for _ in 0..5 {
        let p = [
            rng.gen_range(6.0..20.0),
            rng.gen_range(4.0..12.0),
            rng.gen_range(1.5..5.0),
        ];
        let c = robust_constraints(model(), &p, &sp, &s, &grid, true).unwrap();
        let jac = c.jacobian.unwrap();
        for row in 0..2 {
            let mut fd = [0.0; 3];
            for j in 0..3 {
                let mut a = p;
                let mut b = p;
                a[j] += h;
                b[j] -= h;
                let ca = robust_constraints(model(), &a, &sp, &s, &grid, false)
                    .unwrap()
                    .values[row];
                let cb = robust_constraints(model(), &b, &sp, &s, &grid, false)
                    .unwrap()
                    .values[row];
                fd[j] = (ca - cb) / (2.0 * h);
            }
            let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for j in 0..3 {
                assert!(
                    (jac[row][j] - fd[j]).abs() <= 1e-5 * scale,
                    "row {row} at {p:?}: {:?} vs {fd:?}",
                    jac[row]
                );
            }
        }
    }
}

#[test]
fn grid_dimension_must_match() {
    let s = Scenario::new(ScenarioKind::C);
    let err =
        robust_constraints(model(), &P_INIT, &spec(1.0), &s, &smolyak(3, 1), false).unwrap_err();
    assert!(matches!(
        err,
        RobustError::GridDimension {
            expected: 5,
            got: 3
        }
    ));
}

#[test]
fn monte_carlo_extremes_and_worker_invariance() {
    let s = Scenario::new(ScenarioKind::C);
    let easy = RobustSpec {
        e_d: 0.1,
        m_max_d: 0.1,
        ..spec(1.0)
    };
    let r = monte_carlo_validate(model(), &P_INIT, &easy, &s, 200, 9).unwrap();
    assert_eq!(r.sr_percent, 100.0);
    let hard = RobustSpec {
        e_d: 0.99,
        ..spec(1.0)
    };
    let r = monte_carlo_validate(model(), &P_INIT, &hard, &s, 200, 9).unwrap();
    assert_eq!((r.sr_percent, r.fail_eff), (0.0, 200));

    let sp = spec(1.0);
    let one = with_workers(1, || {
        monte_carlo_validate(model(), &P_INIT, &sp, &s, 300, 4)
    })
    .unwrap()
    .unwrap();
    let four = with_workers(4, || {
        monte_carlo_validate(model(), &P_INIT, &sp, &s, 300, 4)
    })
    .unwrap()
    .unwrap();
    assert_eq!(one, four);
    assert!(one.successes <= one.n && (0.0..=100.0).contains(&one.sr_percent));
}

#[test]
fn nominal_optimum_shrinks_the_magnet_and_robust_is_larger() {
    let opts = SqpOptions::default();
    let nominal = optimize(
        model(),
        &spec(0.0),
        &Scenario::new(ScenarioKind::Nominal),
        3,
        &P_INIT,
        &opts,
    )
    .unwrap();
    assert_eq!(nominal.sqp.status, SqpStatus::Converged);
    assert!(nominal.objective < 133.0);
    let robust = optimize(
        model(),
        &spec(2.0),
        &Scenario::new(ScenarioKind::C),
        2,
        &P_INIT,
        &opts,
    )
    .unwrap();
    assert_eq!(robust.sqp.status, SqpStatus::Converged);
    assert!(robust.objective >= nominal.objective);
    // a robust-feasible design is feasible for the nominal problem
    let c = robust_constraints(
        model(),
        &robust.p,
        &spec(0.0),
        &Scenario::new(ScenarioKind::Nominal),
        &smolyak(0, 0),
        false,
    )
    .unwrap();
    assert!(c.values.iter().all(|v| *v <= 1e-8), "{:?}", c.values);
    let mut buf = Vec::new();
    robust.sqp.write_trace_csv(&mut buf).unwrap();
    assert!(String::from_utf8(buf)
        .unwrap()
        .starts_with("iter,f,kkt,maxviol,step_norm"));
}

#[test]
fn infeasible_start_is_rejected() {
    let err = optimize(
        model(),
        &spec(1.0),
        &Scenario::new(ScenarioKind::C),
        1,
        &[27.9, 13.3, 3.0],
        &SqpOptions::default(),
    )
    .unwrap_err();
    assert!(matches!(err, RobustError::InfeasibleStart(_)));
}

#[test]
fn validation_csv_layout() {
    let r = monte_carlo_validate(
        model(),
        &P_INIT,
        &spec(1.0),
        &Scenario::new(ScenarioKind::Nominal),
        3,
        1,
    )
    .unwrap();
    let mut buf = Vec::new();
    write_validation_csv(&mut buf, &[("init".into(), r)]).unwrap();
    let s = String::from_utf8(buf).unwrap();
    let mut lines = s.lines();
    assert_eq!(
        lines.next(),
        Some("scenario,design,sr_percent,n,seed,fail_eff,fail_torque")
    );
    assert!(lines.next().unwrap().starts_with("nominal,init,"));
}
