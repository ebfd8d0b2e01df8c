//! Lumped dq model of the machine: parameter extraction from field
//! solutions, maximum-torque-per-ampere control, and drive-cycle energy
//! efficiency.
//!
//! Currents and flux linkages are RMS phase quantities, so the torque is
//! `npp * m * I * sin(beta) * (phi0 + (ld - lq) * I * cos(beta))` and the
//! copper loss is `m * rst * I^2`. The angle `beta` is measured from the
//! d-axis.

use std::f64::consts::FRAC_PI_2;
use std::io::Write;

use thiserror::Error;

use crate::cycle::{fmt_num, shaft_load, DrivingCycle, VehicleParams, RAD_S_TO_RPM};
use crate::fem::{AffineSystem, Excitation, FemError, PmParams};

#[derive(Debug, Error, PartialEq)]
pub enum MachineError {
    #[error("invalid machine parameters: {0}")]
    InvalidParams(String),
    #[error("torque {torque} N·m exceeds the maximal torque {max} N·m{}", at_time(*.t))]
    InfeasibleTorque {
        torque: f64,
        max: f64,
        t: Option<f64>,
    },
    #[error("efficiency undefined: no net mechanical energy over the cycle")]
    UndefinedEfficiency,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Fem(#[from] FemError),
}

fn at_time(t: Option<f64>) -> String {
    t.map(|t| format!(" at t = {t} s")).unwrap_or_default()
}

/// Lumped dq machine parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DqParams {
    /// No-load flux linkage, RMS (Wb).
    pub phi0: f64,
    /// Direct-axis inductance (H).
    pub ld: f64,
    /// Quadrature-axis inductance (H).
    pub lq: f64,
    /// Phase resistance (Ω).
    pub rst: f64,
    pub npp: u32,
    /// Phase count.
    pub m: u32,
    /// Maximal RMS phase current (A).
    pub i_max: f64,
}

impl DqParams {
    pub fn validate(&self) -> Result<(), MachineError> {
        let bad = |msg: &str| Err(MachineError::InvalidParams(msg.into()));
        if !(self.phi0 > 0.0 && self.phi0.is_finite()) {
            return bad("phi0 must be positive");
        }
        if !(self.ld > 0.0 && self.lq > 0.0 && self.ld.is_finite() && self.lq.is_finite()) {
            return bad("ld and lq must be positive");
        }
        if !(self.rst >= 0.0 && self.rst.is_finite()) {
            return bad("rst must be non-negative");
        }
        if self.npp == 0 || self.m == 0 {
            return bad("npp and m must be at least 1");
        }
        if !(self.i_max > 0.0 && self.i_max.is_finite()) {
            return bad("i_max must be positive");
        }
        Ok(())
    }

    fn k(&self) -> f64 {
        f64::from(self.npp) * f64::from(self.m)
    }

    fn delta_l(&self) -> f64 {
        self.ld - self.lq
    }
}

/// Current magnitude and phase angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurrentSolution {
    pub i: f64,
    pub beta: f64,
}

pub fn torque(dq: &DqParams, i: f64, beta: f64) -> f64 {
    dq.k() * i * beta.sin() * (dq.phi0 + dq.delta_l() * i * beta.cos())
}

/// MTPA angle in `(0, pi)` for current `i >= 0`.
///
/// Stationarity gives `2 dL i c^2 + phi0 c - dL i = 0` for `c = cos(beta)`;
/// the root is taken in its cancellation-free form.
pub fn beta_opt(dq: &DqParams, i: f64) -> f64 {
    let dl_i = dq.delta_l() * i;
    let den = dq.phi0 + (dq.phi0 * dq.phi0 + 8.0 * dl_i * dl_i).sqrt();
    if den <= 0.0 {
        return FRAC_PI_2;
    }
    (2.0 * dl_i / den).clamp(-1.0, 1.0).acos()
}

/// Torque at the MTPA angle, `T*(i)`.
pub fn mtpa_torque(dq: &DqParams, i: f64) -> f64 {
    torque(dq, i, beta_opt(dq, i))
}

/// `dT*/di`; by the envelope theorem only the explicit dependence counts.
fn mtpa_slope(dq: &DqParams, i: f64) -> f64 {
    let b = beta_opt(dq, i);
    dq.k() * b.sin() * (dq.phi0 + 2.0 * dq.delta_l() * i * b.cos())
}

pub fn max_torque(dq: &DqParams) -> f64 {
    mtpa_torque(dq, dq.i_max)
}

/// Minimal current producing `m_target`, ignoring the current limit.
///
/// `T*` is convex and increasing, so Newton started above the root descends
/// monotonically onto it; bisection guards the degenerate cases.
pub fn current_for_torque_unbounded(dq: &DqParams, m_target: f64) -> CurrentSolution {
    let target = m_target.abs();
    if target == 0.0 {
        return CurrentSolution {
            i: 0.0,
            beta: FRAC_PI_2.copysign(m_target),
        };
    }
    let mut hi = if dq.phi0 > 0.0 {
        target / (dq.k() * dq.phi0)
    } else {
        1.0
    };
    while mtpa_torque(dq, hi) < target {
        hi *= 2.0;
        if !hi.is_finite() {
            break;
        }
    }
    let mut lo = 0.0;
    let mut i = hi;
    for _ in 0..200 {
        let r = mtpa_torque(dq, i) - target;
        if r > 0.0 {
            hi = i;
        } else {
            lo = i;
        }
        if r.abs() <= 1e-15 * target {
            break;
        }
        let s = mtpa_slope(dq, i);
        let mut next = i - r / s;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - i).abs() <= 1e-16 * i {
            i = next;
            break;
        }
        i = next;
    }
    let beta = beta_opt(dq, i);
    CurrentSolution {
        i,
        beta: if m_target < 0.0 { -beta } else { beta },
    }
}

/// Minimal current producing `m_target`; negative torque mirrors `beta`
/// into `(-pi, 0)`. Fails when `|m_target|` exceeds [`max_torque`].
pub fn current_for_torque(dq: &DqParams, m_target: f64) -> Result<CurrentSolution, MachineError> {
    let max = max_torque(dq);
    if m_target.abs() > max * (1.0 + 1e-12) {
        return Err(MachineError::InfeasibleTorque {
            torque: m_target,
            max,
            t: None,
        });
    }
    let mut sol = current_for_torque_unbounded(dq, m_target);
    sol.i = sol.i.min(dq.i_max);
    Ok(sol)
}

/// How operating points beyond the current limit are treated in cycle
/// evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OverloadPolicy {
    /// Evaluate the dq model above `i_max` (short-term overload).
    #[default]
    Allow,
    /// Fail with [`MachineError::InfeasibleTorque`].
    Strict,
}

/// Treatment of negative mechanical power in the cycle efficiency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PowerMode {
    /// `omega * M` enters both integrals with its sign.
    #[default]
    Signed,
    /// Only motoring instants (`omega * M > 0`) contribute.
    MotoringOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EfficiencyOptions {
    pub quad_order: usize,
    pub power_mode: PowerMode,
    pub overload: OverloadPolicy,
}

impl Default for EfficiencyOptions {
    fn default() -> Self {
        Self {
            quad_order: 4,
            power_mode: PowerMode::Signed,
            overload: OverloadPolicy::Allow,
        }
    }
}

fn current_at(
    dq: &DqParams,
    m_m: f64,
    overload: OverloadPolicy,
    t: Option<f64>,
) -> Result<f64, MachineError> {
    match overload {
        OverloadPolicy::Allow => Ok(current_for_torque_unbounded(dq, m_m).i),
        OverloadPolicy::Strict => current_for_torque(dq, m_m)
            .map(|s| s.i)
            .map_err(|e| match e {
                MachineError::InfeasibleTorque { torque, max, .. } => {
                    MachineError::InfeasibleTorque { torque, max, t }
                }
                other => other,
            }),
    }
}

/// `omega M / (omega M + m rst I^2)` for motoring points, 0 otherwise.
pub fn pointwise_efficiency(dq: &DqParams, omega_m: f64, m_m: f64) -> Result<f64, MachineError> {
    let p = omega_m * m_m;
    // the current solve runs first so infeasible points fail even at standstill
    let i = current_for_torque(dq, m_m)?.i;
    if p <= 0.0 {
        return Ok(0.0);
    }
    Ok(p / (p + f64::from(dq.m) * dq.rst * i * i))
}

/// Mechanical energy and copper-loss integrals over a cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleEnergy {
    /// `∫ omega M dt` (J).
    pub mechanical: f64,
    /// `∫ m I^2 dt` (A²·s); the copper loss is `rst` times this.
    pub current_squared: f64,
}

/// Composite-Gauss energy integrals; the loss term is independent of `rst`.
pub fn cycle_energy(
    dq: &DqParams,
    cycle: &DrivingCycle,
    vehicle: &VehicleParams,
    crr: f64,
    cd: f64,
    opts: &EfficiencyOptions,
) -> Result<CycleEnergy, MachineError> {
    if opts.quad_order == 0 {
        return Err(MachineError::InvalidArgument(
            "quadrature order must be positive".into(),
        ));
    }
    let mut mechanical = 0.0;
    let mut current_squared = 0.0;
    for q in cycle.quadrature_points(opts.quad_order) {
        let (omega, m_m) = shaft_load(vehicle, crr, cd, q.v, q.a);
        let p = omega * m_m;
        if opts.power_mode == PowerMode::MotoringOnly && p <= 0.0 {
            continue;
        }
        let i = current_at(dq, m_m, opts.overload, Some(q.t))?;
        mechanical += q.w * p;
        current_squared += q.w * f64::from(dq.m) * i * i;
    }
    Ok(CycleEnergy {
        mechanical,
        current_squared,
    })
}

impl CycleEnergy {
    pub fn efficiency(&self, rst: f64) -> Result<f64, MachineError> {
        let den = self.mechanical + rst * self.current_squared;
        if !(self.mechanical > 0.0 && den > 0.0) {
            return Err(MachineError::UndefinedEfficiency);
        }
        Ok(self.mechanical / den)
    }

    /// Phase resistance giving efficiency `target`.
    pub fn rst_for_efficiency(&self, target: f64) -> Result<f64, MachineError> {
        if !(target > 0.0 && target < 1.0) {
            return Err(MachineError::InvalidArgument(
                "target efficiency must lie in (0, 1)".into(),
            ));
        }
        if !(self.mechanical > 0.0 && self.current_squared > 0.0) {
            return Err(MachineError::UndefinedEfficiency);
        }
        Ok(self.mechanical * (1.0 / target - 1.0) / self.current_squared)
    }
}

/// Drive-cycle energy efficiency
/// `∫ omega M dt / ∫ (omega M + m rst I^2) dt`.
pub fn cycle_efficiency(
    dq: &DqParams,
    cycle: &DrivingCycle,
    vehicle: &VehicleParams,
    crr: f64,
    cd: f64,
    opts: &EfficiencyOptions,
) -> Result<f64, MachineError> {
    cycle_energy(dq, cycle, vehicle, crr, cd, opts)?.efficiency(dq.rst)
}

/// Phase current at which the template reaches `margin` times `torque`.
pub fn i_max_for_torque(dq: &DqParams, torque: f64, margin: f64) -> f64 {
    current_for_torque_unbounded(dq, torque * margin).i
}

/// Point-wise efficiency over a regular (current, speed) grid at MTPA.
#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyMap {
    pub currents: Vec<f64>,
    /// Mechanical speeds (rpm).
    pub speeds_rpm: Vec<f64>,
    /// `eff[i][j]` at `currents[i]`, `speeds_rpm[j]`.
    pub eff: Vec<Vec<f64>>,
}

pub fn efficiency_map(
    dq: &DqParams,
    i_max: f64,
    rpm_max: f64,
    n_i: usize,
    n_w: usize,
) -> EfficiencyMap {
    let axis = |max: f64, n: usize| -> Vec<f64> {
        (0..n)
            .map(|k| {
                if n == 1 {
                    0.0
                } else {
                    max * k as f64 / (n - 1) as f64
                }
            })
            .collect()
    };
    let currents = axis(i_max, n_i);
    let speeds_rpm = axis(rpm_max, n_w);
    let eff = currents
        .iter()
        .map(|&i| {
            let t = mtpa_torque(dq, i);
            let loss = f64::from(dq.m) * dq.rst * i * i;
            speeds_rpm
                .iter()
                .map(|&n| {
                    let p = n / RAD_S_TO_RPM * t;
                    if p > 0.0 {
                        p / (p + loss)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    EfficiencyMap {
        currents,
        speeds_rpm,
        eff,
    }
}

impl EfficiencyMap {
    /// Point-wise `other - self` on a shared grid.
    pub fn difference(&self, other: &EfficiencyMap) -> Result<EfficiencyMap, MachineError> {
        if self.currents != other.currents || self.speeds_rpm != other.speeds_rpm {
            return Err(MachineError::InvalidArgument(
                "efficiency maps use different grids".into(),
            ));
        }
        let eff = self
            .eff
            .iter()
            .zip(&other.eff)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| y - x).collect())
            .collect();
        Ok(EfficiencyMap {
            currents: self.currents.clone(),
            speeds_rpm: self.speeds_rpm.clone(),
            eff,
        })
    }

    /// CSV with header `I,omega_rpm,<value>`.
    pub fn write_csv<W: Write>(&self, mut out: W, value_header: &str) -> std::io::Result<()> {
        writeln!(out, "I,omega_rpm,{value_header}")?;
        for (i, row) in self.currents.iter().zip(&self.eff) {
            for (n, e) in self.speeds_rpm.iter().zip(row) {
                writeln!(out, "{},{},{}", fmt_num(*i), fmt_num(*n), fmt_num(*e))?;
            }
        }
        Ok(())
    }
}

/// Current and speed along a cycle sampled every `dt` seconds; CSV header
/// `t,I,omega_rpm`.
pub fn write_trajectory_csv<W: Write>(
    mut out: W,
    dq: &DqParams,
    cycle: &DrivingCycle,
    vehicle: &VehicleParams,
    crr: f64,
    cd: f64,
    dt: f64,
) -> Result<(), Box<dyn std::error::Error>> {
    writeln!(out, "t,I,omega_rpm")?;
    let n = (cycle.duration() / dt).floor() as usize;
    for k in 0..=n {
        let t = (cycle.start() + k as f64 * dt).min(cycle.end());
        let op = crate::cycle::torque_speed_at(cycle, vehicle, crr, cd, t)?;
        let i = current_for_torque_unbounded(dq, op.torque_m).i;
        writeln!(
            out,
            "{},{},{}",
            fmt_num(t),
            fmt_num(i),
            fmt_num(op.omega_m * RAD_S_TO_RPM)
        )?;
    }
    Ok(())
}

/// Loading-method extraction of `phi0`, `ld`, `lq` from three field solves
/// at PM geometry `p`: magnets only, then d- and q-axis test currents
/// `i_test` (RMS) with the magnets switched off. `rst`, `npp`, `m` and
/// `i_max` are copied from `template`.
pub fn extract_dq(
    sys: &AffineSystem,
    p: &PmParams,
    i_test: f64,
    template: &DqParams,
) -> Result<DqParams, MachineError> {
    if !(i_test > 0.0 && i_test.is_finite()) {
        return Err(MachineError::InvalidArgument(
            "i_test must be positive".into(),
        ));
    }
    let fluxes = sys.phase_fluxes(
        p,
        &[
            Excitation::Magnets,
            Excitation::DAxis(i_test),
            Excitation::QAxis(i_test),
        ],
    )?;
    let psi_pm = sys.park(&fluxes[0]);
    let psi_d = sys.park(&fluxes[1]);
    let psi_q = sys.park(&fluxes[2]);
    Ok(DqParams {
        phi0: psi_pm.0,
        ld: psi_d.0 / i_test,
        lq: psi_q.1 / i_test,
        ..*template
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn salient() -> DqParams {
        DqParams {
            phi0: 0.01,
            ld: 2e-4,
            lq: 1.2e-3,
            rst: 0.05,
            npp: 3,
            m: 3,
            i_max: 20.0,
        }
    }

    #[test]
    fn torque_examples() {
        let dq = salient();
        assert_eq!(torque(&dq, 0.0, 1.0), 0.0);
        let round = DqParams { lq: dq.ld, ..dq };
        assert!((torque(&round, 7.0, FRAC_PI_2) - 9.0 * 7.0 * 0.01).abs() < 1e-15);
        // phi0 = 0.01, ld - lq = -1e-3, i = 10, beta = 2
        let dq = DqParams {
            ld: 1e-3,
            lq: 2e-3,
            ..dq
        };
        let s = 2.0f64.sin();
        let c = 2.0f64.cos();
        let hand = 3.0 * 3.0 * 10.0 * s * (0.01 + (-1e-3) * 10.0 * c);
        assert!((torque(&dq, 10.0, 2.0) - hand).abs() < 1e-14);
        assert!((hand - 1.158_928_807_031_681).abs() < 1e-12);
    }

    fn sweep_argmax(dq: &DqParams, i: f64, n: usize) -> f64 {
        let mut best = (0.0, f64::NEG_INFINITY);
        for k in 1..n {
            let b = PI * k as f64 / n as f64;
            let t = torque(dq, i, b);
            if t > best.1 {
                best = (b, t);
            }
        }
        best.0
    }

    #[test]
    fn beta_opt_examples() {
        let dq = salient();
        let round = DqParams { lq: dq.ld, ..dq };
        assert!((beta_opt(&round, 12.0) - FRAC_PI_2).abs() < 1e-15);
        let b = beta_opt(&dq, 15.0);
        assert!(b > FRAC_PI_2 && b < PI);
        assert!((b - sweep_argmax(&dq, 15.0, 100_000)).abs() < 1e-4);
        assert!((beta_opt(&dq, 1e-9) - FRAC_PI_2).abs() < 1e-9);
        let no_pm = DqParams { phi0: 0.0, ..dq };
        assert!((beta_opt(&no_pm, 3.0) - 0.75 * PI).abs() < 1e-12);
    }

    #[test]
    fn current_for_torque_examples() {
        let dq = salient();
        let z = current_for_torque(&dq, 0.0).unwrap();
        assert_eq!(z.i, 0.0);
        for m in [0.01, 0.3, 1.0, 2.2, -1.7] {
            let s = current_for_torque(&dq, m).unwrap();
            let back = torque(&dq, s.i, s.beta);
            assert!((back - m).abs() <= 1e-8 * m.abs(), "m = {m}: {back}");
        }
        let max = max_torque(&dq);
        let s = current_for_torque(&dq, max).unwrap();
        assert!((s.i - dq.i_max).abs() <= 1e-6 * dq.i_max);
        assert!(matches!(
            current_for_torque(&dq, 1.01 * max),
            Err(MachineError::InfeasibleTorque { .. })
        ));
        let neg = current_for_torque(&dq, -1.0).unwrap();
        assert!(neg.beta < -FRAC_PI_2 && neg.beta > -PI);
    }

    #[test]
    fn max_torque_examples() {
        let dq = salient();
        let round = DqParams { lq: dq.ld, ..dq };
        assert!((max_torque(&round) - 9.0 * 20.0 * 0.01).abs() < 1e-14);
        assert!(max_torque(&dq) >= 9.0 * 20.0 * 0.01);
        let mut sweep_max = f64::NEG_INFINITY;
        for k in 1..100_000 {
            sweep_max = sweep_max.max(torque(&dq, dq.i_max, PI * k as f64 / 100_000.0));
        }
        assert!(max_torque(&dq) >= sweep_max - 1e-12);
        assert_eq!(max_torque(&DqParams { i_max: 0.0, ..dq }), 0.0);
    }

    #[test]
    fn pointwise_efficiency_examples() {
        let dq = salient();
        let lossless = DqParams { rst: 0.0, ..dq };
        assert_eq!(pointwise_efficiency(&lossless, 50.0, 1.0).unwrap(), 1.0);
        assert_eq!(pointwise_efficiency(&dq, 0.0, 1.0).unwrap(), 0.0);
        assert_eq!(pointwise_efficiency(&dq, 50.0, -1.0).unwrap(), 0.0);
        let i = current_for_torque(&dq, 1.2).unwrap().i;
        let hand = 80.0 * 1.2 / (80.0 * 1.2 + 3.0 * 0.05 * i * i);
        assert!((pointwise_efficiency(&dq, 80.0, 1.2).unwrap() - hand).abs() < 1e-15);
        assert!(pointwise_efficiency(&dq, 80.0, 100.0).is_err());
    }

    fn template() -> DqParams {
        DqParams {
            phi0: 0.02,
            ld: 3e-4,
            lq: 6e-4,
            rst: 0.1,
            npp: 3,
            m: 3,
            i_max: 40.0,
        }
    }

    #[test]
    fn cycle_efficiency_lossless_is_one() {
        let dq = DqParams {
            rst: 0.0,
            ..template()
        };
        let v = VehicleParams::default();
        let e = cycle_efficiency(
            &dq,
            &DrivingCycle::udc(),
            &v,
            v.crr_dry,
            v.cd_dry,
            &EfficiencyOptions::default(),
        )
        .unwrap();
        assert_eq!(e, 1.0);
    }

    #[test]
    fn cycle_efficiency_is_refinement_invariant() {
        let dq = template();
        let v = VehicleParams::default();
        let eff = |q| {
            let opts = EfficiencyOptions {
                quad_order: q,
                ..Default::default()
            };
            cycle_efficiency(&dq, &DrivingCycle::udc(), &v, v.crr_dry, v.cd_dry, &opts).unwrap()
        };
        let (e4, e8) = (eff(4), eff(8));
        assert!(e4 > 0.0 && e4 < 1.0);
        assert!((e4 - e8).abs() <= 1e-6 * e8);
    }

    #[test]
    fn cycle_efficiency_decreases_with_resistance() {
        let v = VehicleParams::default();
        let mut last = f64::INFINITY;
        for rst in [0.0, 0.05, 0.1, 0.2, 0.4] {
            let dq = DqParams { rst, ..template() };
            let e = cycle_efficiency(
                &dq,
                &DrivingCycle::udc(),
                &v,
                v.crr_dry,
                v.cd_dry,
                &EfficiencyOptions::default(),
            )
            .unwrap();
            assert!(e < last);
            last = e;
        }
    }

    #[test]
    fn standstill_cycle_is_undefined() {
        let flat = DrivingCycle::new(vec![
            crate::cycle::ControlPoint::new(0.0, 0.0),
            crate::cycle::ControlPoint::new(10.0, 0.0),
        ])
        .unwrap();
        let v = VehicleParams::default();
        assert_eq!(
            cycle_efficiency(
                &template(),
                &flat,
                &v,
                v.crr_dry,
                v.cd_dry,
                &EfficiencyOptions::default()
            ),
            Err(MachineError::UndefinedEfficiency)
        );
    }

    #[test]
    fn strict_overload_reports_time() {
        let dq = DqParams {
            i_max: 1.0,
            ..template()
        };
        let v = VehicleParams::default();
        let opts = EfficiencyOptions {
            overload: OverloadPolicy::Strict,
            ..Default::default()
        };
        match cycle_efficiency(&dq, &DrivingCycle::udc(), &v, v.crr_dry, v.cd_dry, &opts) {
            Err(MachineError::InfeasibleTorque { t: Some(t), .. }) => assert!(t > 0.0 && t < 195.0),
            other => panic!("expected infeasible torque, got {other:?}"),
        }
        let opts = EfficiencyOptions::default();
        assert!(
            cycle_efficiency(&dq, &DrivingCycle::udc(), &v, v.crr_dry, v.cd_dry, &opts).is_ok()
        );
    }

    #[test]
    fn motoring_only_ignores_braking() {
        let v = VehicleParams::default();
        let dq = template();
        let opts = EfficiencyOptions {
            power_mode: PowerMode::MotoringOnly,
            ..Default::default()
        };
        let e =
            cycle_efficiency(&dq, &DrivingCycle::udc(), &v, v.crr_dry, v.cd_dry, &opts).unwrap();
        assert!(e > 0.0 && e < 1.0);
    }

    #[test]
    fn rst_for_efficiency_round_trip() {
        let v = VehicleParams::default();
        let dq = template();
        let en = cycle_energy(
            &dq,
            &DrivingCycle::udc(),
            &v,
            v.crr_dry,
            v.cd_dry,
            &EfficiencyOptions::default(),
        )
        .unwrap();
        let rst = en.rst_for_efficiency(0.85).unwrap();
        let dq = DqParams { rst, ..dq };
        let e = cycle_efficiency(
            &dq,
            &DrivingCycle::udc(),
            &v,
            v.crr_dry,
            v.cd_dry,
            &EfficiencyOptions::default(),
        )
        .unwrap();
        assert!((e - 0.85).abs() < 1e-12);
    }

    #[test]
    fn efficiency_map_zero_speed_row_and_dominance() {
        let d1 = template();
        let d2 = DqParams {
            phi0: 1.3 * d1.phi0,
            ..d1
        };
        let m1 = efficiency_map(&d1, 40.0, 3000.0, 21, 31);
        let m2 = efficiency_map(&d2, 40.0, 3000.0, 21, 31);
        let diff = m1.difference(&m2).unwrap();
        for row in &diff.eff {
            assert_eq!(row[0], 0.0);
            assert!(row.iter().all(|&x| x >= 0.0));
        }
        let mut buf = Vec::new();
        m1.write_csv(&mut buf, "eff").unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("I,omega_rpm,eff\n"));
    }

    #[test]
    fn trajectory_csv_header() {
        let v = VehicleParams::default();
        let mut buf = Vec::new();
        write_trajectory_csv(
            &mut buf,
            &template(),
            &DrivingCycle::udc(),
            &v,
            v.crr_dry,
            v.cd_dry,
            1.0,
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,I,omega_rpm\n"));
        assert_eq!(text.lines().count(), 197);
    }

    #[test]
    fn validate_rejects_bad_params() {
        assert!(template().validate().is_ok());
        assert!(DqParams {
            phi0: 0.0,
            ..template()
        }
        .validate()
        .is_err());
        assert!(DqParams {
            ld: -1.0,
            ..template()
        }
        .validate()
        .is_err());
        assert!(DqParams {
            npp: 0,
            ..template()
        }
        .validate()
        .is_err());
        assert!(DqParams {
            rst: -0.1,
            ..template()
        }
        .validate()
        .is_err());
    }
}
