//! Driving cycles as piecewise-linear velocity splines.
//!
//! A [`DrivingCycle`] is a list of velocity control points joined by straight
//! lines. The reference cycle is the 195 s Urban Driving Cycle (UDC). Two
//! kinds of driving-style uncertainty act on the control points: vertical
//! velocity shifts ([`DrivingCycle::apply_scenario_a`]) and horizontal time
//! shifts ([`DrivingCycle::apply_scenario_b`]). Weather uncertainty acts on
//! the rolling-resistance and drag coefficients instead
//! ([`effective_coefficients`]).
//!
//! Velocity is converted to a motor operating point through a rigid
//! single-gear drivetrain: inertia, rolling resistance and aerodynamic drag,
//! no grade and no transmission loss.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use thiserror::Error;

use crate::quadrature::gauss_legendre;

/// Conversion factor from rad/s to rpm.
pub const RAD_S_TO_RPM: f64 = 30.0 / PI;

#[derive(Debug, Error)]
pub enum CycleError {
    #[error("time {t} s outside the cycle domain [{start}, {end}]")]
    OutOfDomain { t: f64, start: f64, end: f64 },
    #[error("invalid driving cycle: {0}")]
    InvalidCycle(String),
    #[error("invalid scenario parameters: {0}")]
    InvalidParams(String),
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One knot of the velocity spline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlPoint {
    /// Time in s.
    pub t: f64,
    /// Velocity in m/s.
    pub v: f64,
}

impl ControlPoint {
    pub const fn new(t: f64, v: f64) -> Self {
        Self { t, v }
    }
}

/// Control points of the UDC, (s, m/s).
const UDC_POINTS: [(f64, f64); 16] = [
    (0.0, 0.0),
    (11.0, 0.0),
    (15.0, 4.16),
    (23.0, 4.16),
    (28.0, 0.0),
    (49.0, 0.0),
    (61.0, 8.88),
    (85.0, 8.88),
    (96.0, 0.0),
    (117.0, 0.0),
    (143.0, 13.88),
    (155.0, 13.88),
    (163.0, 9.72),
    (176.0, 9.72),
    (188.0, 0.0),
    (195.0, 0.0),
];

/// Piecewise-linear velocity-time profile.
///
/// Times are strictly increasing, velocities non-negative, and the vehicle
/// starts and ends at rest.
#[derive(Debug, Clone, PartialEq)]
pub struct DrivingCycle {
    points: Vec<ControlPoint>,
}

/// A straight piece of the spline between two neighbouring control points.
/// Quadrature node on a cycle with the local motion state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadPoint {
    pub t: f64,
    pub w: f64,
    pub v: f64,
    pub a: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub t0: f64,
    pub t1: f64,
    pub v0: f64,
    pub v1: f64,
}

impl Segment {
    pub fn duration(&self) -> f64 {
        self.t1 - self.t0
    }

    pub fn acceleration(&self) -> f64 {
        (self.v1 - self.v0) / (self.t1 - self.t0)
    }

    pub fn velocity(&self, t: f64) -> f64 {
        let s = (t - self.t0) / (self.t1 - self.t0);
        self.v0 + s * (self.v1 - self.v0)
    }
}

impl DrivingCycle {
    pub fn new(points: Vec<ControlPoint>) -> Result<Self, CycleError> {
        if points.len() < 2 {
            return Err(CycleError::InvalidCycle(
                "at least two control points are required".into(),
            ));
        }
        for (i, p) in points.iter().enumerate() {
            if !p.t.is_finite() || !p.v.is_finite() {
                return Err(CycleError::InvalidCycle(format!("point {i} is not finite")));
            }
            if p.t < 0.0 || p.v < 0.0 {
                return Err(CycleError::InvalidCycle(format!(
                    "point {i} has negative time or velocity ({}, {})",
                    p.t, p.v
                )));
            }
        }
        if let Some(i) = points.windows(2).position(|w| w[1].t <= w[0].t) {
            return Err(CycleError::InvalidCycle(format!(
                "times not strictly increasing at point {}",
                i + 1
            )));
        }
        if points[0].v != 0.0 || points[points.len() - 1].v != 0.0 {
            return Err(CycleError::InvalidCycle(
                "the cycle must start and end at rest".into(),
            ));
        }
        Ok(Self { points })
    }

    /// The 16-point Urban Driving Cycle.
    pub fn udc() -> Self {
        Self {
            points: UDC_POINTS
                .iter()
                .map(|&(t, v)| ControlPoint::new(t, v))
                .collect(),
        }
    }

    pub fn points(&self) -> &[ControlPoint] {
        &self.points
    }

    pub fn start(&self) -> f64 {
        self.points[0].t
    }

    pub fn end(&self) -> f64 {
        self.points[self.points.len() - 1].t
    }

    pub fn duration(&self) -> f64 {
        self.end() - self.start()
    }

    pub fn segments(&self) -> impl ExactSizeIterator<Item = Segment> + '_ {
        self.points.windows(2).map(|w| Segment {
            t0: w[0].t,
            t1: w[1].t,
            v0: w[0].v,
            v1: w[1].v,
        })
    }

    /// Index of the segment that owns `t`, using half-open `[t_k, t_{k+1})`
    /// intervals; the final time belongs to the last segment.
    fn segment_index(&self, t: f64) -> Result<usize, CycleError> {
        if !(t >= self.start() && t <= self.end()) {
            return Err(CycleError::OutOfDomain {
                t,
                start: self.start(),
                end: self.end(),
            });
        }
        let k = self.points.partition_point(|p| p.t <= t);
        Ok(k.saturating_sub(1).min(self.points.len() - 2))
    }

    pub fn segment_at(&self, t: f64) -> Result<Segment, CycleError> {
        let k = self.segment_index(t)?;
        Ok(self.segments().nth(k).expect("segment index in range"))
    }

    /// Linear interpolation of the velocity at `t`.
    pub fn velocity(&self, t: f64) -> Result<f64, CycleError> {
        Ok(self.segment_at(t)?.velocity(t))
    }

    /// Right-hand derivative of the velocity at `t` (left-hand at the end).
    pub fn acceleration(&self, t: f64) -> Result<f64, CycleError> {
        Ok(self.segment_at(t)?.acceleration())
    }

    /// Exact integral of the velocity, i.e. the driven distance in m.
    pub fn distance(&self) -> f64 {
        self.segments()
            .map(|s| 0.5 * (s.v0 + s.v1) * s.duration())
            .sum()
    }

    /// Composite Gauss-Legendre rule with `order` nodes per spline segment.
    ///
    /// Returns `(t, w)` pairs; the weights sum to the cycle duration. Nodes are
    /// interior to their segment and never coincide with a control point.
    pub fn quadrature_nodes(&self, order: usize) -> Vec<(f64, f64)> {
        self.quadrature_points(order)
            .into_iter()
            .map(|q| (q.t, q.w))
            .collect()
    }

    /// Composite rule as in [`quadrature_nodes`](Self::quadrature_nodes),
    /// with the velocity and acceleration of the owning segment attached.
    pub fn quadrature_points(&self, order: usize) -> Vec<QuadPoint> {
        assert!(order >= 1, "quadrature order must be positive");
        let (x, w) = gauss_legendre(order);
        let mut out = Vec::with_capacity(order * (self.points.len() - 1));
        for seg in self.segments() {
            let half = 0.5 * seg.duration();
            let mid = 0.5 * (seg.t0 + seg.t1);
            let a = seg.acceleration();
            for (xi, wi) in x.iter().zip(&w) {
                let t = mid + half * xi;
                out.push(QuadPoint {
                    t,
                    w: half * wi,
                    v: seg.velocity(t),
                    a,
                });
            }
        }
        out
    }

    /// Vertical velocity shifts: every perturbed control point becomes
    /// `v_i (1 + delta_v s_i)` with `s_i` in `[-1, 1]`.
    pub fn apply_scenario_a(
        &self,
        params: &CycleScenarioParams,
        sample: &CycleSample,
    ) -> Result<DrivingCycle, CycleError> {
        if sample.v_shifts.len() != params.vertical_indices.len() {
            return Err(CycleError::InvalidSample(format!(
                "{} velocity shifts for {} perturbed points",
                sample.v_shifts.len(),
                params.vertical_indices.len()
            )));
        }
        let mut points = self.points.clone();
        for (&idx, &s) in params.vertical_indices.iter().zip(&sample.v_shifts) {
            check_unit(s, "velocity shift")?;
            let p = points.get_mut(idx).ok_or_else(|| {
                CycleError::InvalidParams(format!("vertical index {idx} out of range"))
            })?;
            p.v *= 1.0 + params.delta_v * s;
        }
        DrivingCycle::new(points)
    }

    /// Horizontal time shifts of the selected control points.
    ///
    /// A negative `tau_i` moves point `i` towards its left neighbour by
    /// `alpha |tau_i| (t_i - t_{i-1})`, a positive one towards its right
    /// neighbour by `alpha tau_i (t_{i+1} - t_i)`. Distances are measured on
    /// the unshifted cycle; with `alpha < 1` the ordering is preserved as long
    /// as no two shifted points are adjacent.
    pub fn apply_scenario_b(
        &self,
        params: &CycleScenarioParams,
        sample: &CycleSample,
    ) -> Result<DrivingCycle, CycleError> {
        if sample.t_shifts.len() != params.horizontal_indices.len() {
            return Err(CycleError::InvalidSample(format!(
                "{} time shifts for {} shifted points",
                sample.t_shifts.len(),
                params.horizontal_indices.len()
            )));
        }
        let n = self.points.len();
        let mut points = self.points.clone();
        for (&idx, &tau) in params.horizontal_indices.iter().zip(&sample.t_shifts) {
            check_unit(tau, "time shift")?;
            if idx == 0 || idx + 1 >= n {
                return Err(CycleError::InvalidParams(format!(
                    "horizontal index {idx} must be an interior point"
                )));
            }
            let t = self.points[idx].t;
            let dt = if tau < 0.0 {
                params.alpha * tau * (t - self.points[idx - 1].t)
            } else {
                params.alpha * tau * (self.points[idx + 1].t - t)
            };
            points[idx].t = t + dt;
        }
        DrivingCycle::new(points)
    }

    /// Reads a `t,v` CSV file.
    pub fn read_csv<R: BufRead>(reader: R) -> Result<Self, CycleError> {
        let mut points = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if i == 0 {
                if line != "t,v" {
                    return Err(CycleError::Parse {
                        line: 1,
                        msg: format!("expected header `t,v`, found `{line}`"),
                    });
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let mut next = |name: &str| -> Result<f64, CycleError> {
                let raw = fields.next().ok_or_else(|| CycleError::Parse {
                    line: i + 1,
                    msg: format!("missing field `{name}`"),
                })?;
                raw.trim().parse::<f64>().map_err(|e| CycleError::Parse {
                    line: i + 1,
                    msg: format!("field `{name}`: {e}"),
                })
            };
            let t = next("t")?;
            let v = next("v")?;
            if fields.next().is_some() {
                return Err(CycleError::Parse {
                    line: i + 1,
                    msg: "too many fields".into(),
                });
            }
            points.push(ControlPoint::new(t, v));
        }
        Self::new(points)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,v")?;
        for p in &self.points {
            writeln!(out, "{},{}", fmt_num(p.t), fmt_num(p.v))?;
        }
        Ok(())
    }
}

fn check_unit(x: f64, what: &str) -> Result<(), CycleError> {
    if (-1.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(CycleError::InvalidSample(format!(
            "{what} {x} outside [-1, 1]"
        )))
    }
}

/// Formats a float with 17 significant digits.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Vehicle and drivetrain data for the longitudinal model.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleParams {
    /// kg
    pub mass: f64,
    /// m
    pub wheel_radius: f64,
    /// Motor speed over wheel speed.
    pub gear_ratio: f64,
    /// m²
    pub frontal_area: f64,
    /// kg/m³
    pub air_density: f64,
    /// m/s²
    pub gravity: f64,
    pub crr_dry: f64,
    pub cd_dry: f64,
}

/// Motor speed per vehicle speed of the calibrated drivetrain, rpm per m/s.
pub const CALIBRATED_RPM_PER_MPS: f64 = 79.66;

impl VehicleParams {
    /// Scaled vehicle whose trajectory on the UDC passes through the operating
    /// points (0.75 N·m, 0 rpm) at 49 s, (0.91 N·m, 707.3 rpm) at 61 s and
    /// (-0.43 N·m, 353.7 rpm) at 90.5 s.
    pub fn calibrated() -> Self {
        let wheel_radius = 0.3;
        Self {
            mass: 8.454_705_094_086_584,
            wheel_radius,
            gear_ratio: wheel_radius * CALIBRATED_RPM_PER_MPS / RAD_S_TO_RPM,
            frontal_area: 0.408_910_655_100_024_3,
            air_density: 1.2,
            gravity: 9.81,
            crr_dry: 0.021_547_997_817_110_958,
            cd_dry: 0.3,
        }
    }

    pub fn validate(&self) -> Result<(), CycleError> {
        let fields = [
            ("mass", self.mass),
            ("wheel_radius", self.wheel_radius),
            ("gear_ratio", self.gear_ratio),
            ("frontal_area", self.frontal_area),
            ("air_density", self.air_density),
            ("gravity", self.gravity),
            ("crr_dry", self.crr_dry),
            ("cd_dry", self.cd_dry),
        ];
        for (name, value) in fields {
            if !(value > 0.0 && value.is_finite()) {
                return Err(CycleError::InvalidParams(format!(
                    "{name} must be strictly positive, got {value}"
                )));
            }
        }
        Ok(())
    }

    /// Motor speed per vehicle speed, rad/s per m/s.
    pub fn speed_ratio(&self) -> f64 {
        self.gear_ratio / self.wheel_radius
    }
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self::calibrated()
    }
}

/// Strength and support of the driving-cycle and weather perturbations.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleScenarioParams {
    pub delta_v: f64,
    pub alpha: f64,
    pub delta_rr: f64,
    pub delta_d: f64,
    /// Control points shifted vertically (0-based).
    pub vertical_indices: Vec<usize>,
    /// Control points shifted horizontally (0-based).
    pub horizontal_indices: Vec<usize>,
}

impl Default for CycleScenarioParams {
    fn default() -> Self {
        Self {
            delta_v: 0.2,
            alpha: 0.78,
            delta_rr: 1.3,
            delta_d: 1.2,
            // the eight moving control points of the UDC
            vertical_indices: vec![2, 3, 6, 7, 10, 11, 12, 13],
            // the ends of the four acceleration phases
            horizontal_indices: vec![2, 6, 10, 12],
        }
    }
}

impl CycleScenarioParams {
    pub fn validate(&self, cycle_len: usize) -> Result<(), CycleError> {
        let err = |m: String| Err(CycleError::InvalidParams(m));
        if !(0.0..1.0).contains(&self.delta_v) {
            return err(format!("delta_v must be in [0, 1), got {}", self.delta_v));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return err(format!("alpha must be in (0, 1), got {}", self.alpha));
        }
        if !(self.delta_rr >= 1.0 && self.delta_rr.is_finite()) {
            return err(format!("delta_rr must be >= 1, got {}", self.delta_rr));
        }
        if !(self.delta_d >= 1.0 && self.delta_d.is_finite()) {
            return err(format!("delta_d must be >= 1, got {}", self.delta_d));
        }
        if let Some(&i) = self.vertical_indices.iter().find(|&&i| i >= cycle_len) {
            return err(format!("vertical index {i} out of range"));
        }
        if let Some(&i) = self
            .horizontal_indices
            .iter()
            .find(|&&i| i == 0 || i + 1 >= cycle_len)
        {
            return err(format!(
                "horizontal index {i} must exclude the first and last point"
            ));
        }
        let mut sorted = self.horizontal_indices.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[1] <= w[0] + 1) {
            return err("horizontal indices must be distinct and non-adjacent".into());
        }
        Ok(())
    }
}

/// One realization of the cycle uncertainties.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CycleSample {
    /// Relative velocity shifts in `[-1, 1]`, one per vertical index.
    pub v_shifts: Vec<f64>,
    /// Time shifts `tau_i` in `[-1, 1]`, one per horizontal index.
    pub t_shifts: Vec<f64>,
    /// Position of the rolling coefficient between dry (0) and wet (1).
    pub crr_factor: f64,
    /// Position of the drag coefficient between dry (0) and wet (1).
    pub cd_factor: f64,
}

/// Rolling-resistance and drag coefficients for a weather sample,
/// uniform between the dry value and `delta` times the dry value.
pub fn effective_coefficients(
    vehicle: &VehicleParams,
    params: &CycleScenarioParams,
    sample: &CycleSample,
) -> (f64, f64) {
    let crr = vehicle.crr_dry * (1.0 + (params.delta_rr - 1.0) * sample.crr_factor);
    let cd = vehicle.cd_dry * (1.0 + (params.delta_d - 1.0) * sample.cd_factor);
    (crr, cd)
}

/// Motor operating point at one instant of a cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub t: f64,
    /// Mechanical angular speed, rad/s.
    pub omega_m: f64,
    /// Mechanical torque, N·m. Negative while braking.
    pub torque_m: f64,
}

/// Motor speed and torque for vehicle speed `v` and acceleration `a`.
pub fn shaft_load(vehicle: &VehicleParams, crr: f64, cd: f64, v: f64, a: f64) -> (f64, f64) {
    let rolling = if v > 0.0 {
        vehicle.mass * vehicle.gravity * crr
    } else {
        0.0
    };
    let drag = 0.5 * vehicle.air_density * cd * vehicle.frontal_area * v * v;
    let force = vehicle.mass * a + rolling + drag;
    let omega = vehicle.speed_ratio() * v;
    let torque = force * vehicle.wheel_radius / vehicle.gear_ratio;
    (omega, torque)
}

/// Operating point on the motor shaft at time `t`.
pub fn torque_speed_at(
    cycle: &DrivingCycle,
    vehicle: &VehicleParams,
    crr: f64,
    cd: f64,
    t: f64,
) -> Result<OperatingPoint, CycleError> {
    let seg = cycle.segment_at(t)?;
    let (omega_m, torque_m) = shaft_load(vehicle, crr, cd, seg.velocity(t), seg.acceleration());
    Ok(OperatingPoint {
        t,
        omega_m,
        torque_m,
    })
}

/// Largest shaft torque anywhere on the cycle, including the one-sided
/// limits at the end of each segment.
pub fn peak_torque(cycle: &DrivingCycle, vehicle: &VehicleParams, crr: f64, cd: f64) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    for seg in cycle.segments() {
        let a = seg.acceleration();
        // torque is quadratic and convex in v on a segment, so the maximum
        // sits at one of its ends
        for v in [seg.v0, seg.v1] {
            let (_, m) = shaft_load(vehicle, crr, cd, v, a);
            peak = peak.max(m);
            if v == 0.0 && seg.v0.max(seg.v1) > 0.0 {
                // limit from inside the segment keeps the rolling term
                let eps_load = vehicle.mass * vehicle.gravity * crr * vehicle.wheel_radius
                    / vehicle.gear_ratio;
                peak = peak.max(m + eps_load);
            }
        }
    }
    peak
}

/// Histogram of a sampled torque-speed trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    /// Torque bin edges, N·m (`n_m + 1` values).
    pub torque_edges: Vec<f64>,
    /// Speed bin edges, rpm (`n_w + 1` values).
    pub speed_edges: Vec<f64>,
    /// `counts[i][j]`: samples in torque bin `i` and speed bin `j`.
    pub counts: Vec<Vec<u64>>,
}

impl Heatmap {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "m_lo,m_hi,w_lo,w_hi,count")?;
        for (i, row) in self.counts.iter().enumerate() {
            for (j, count) in row.iter().enumerate() {
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    fmt_num(self.torque_edges[i]),
                    fmt_num(self.torque_edges[i + 1]),
                    fmt_num(self.speed_edges[j]),
                    fmt_num(self.speed_edges[j + 1]),
                    count
                )?;
            }
        }
        Ok(())
    }
}

fn edges(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (lo, hi) = if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    };
    (0..=n)
        .map(|k| {
            if k == n {
                hi
            } else {
                lo + (hi - lo) * k as f64 / n as f64
            }
        })
        .collect()
}

fn bin(x: f64, edges: &[f64]) -> usize {
    let n = edges.len() - 1;
    let (lo, hi) = (edges[0], edges[n]);
    let k = ((x - lo) / (hi - lo) * n as f64).floor();
    (k.max(0.0) as usize).min(n - 1)
}

/// Samples the trajectory every `dt` seconds and counts the samples per
/// (torque, speed) tile over the trajectory's bounding box.
pub fn heatmap_bins(
    cycle: &DrivingCycle,
    vehicle: &VehicleParams,
    crr: f64,
    cd: f64,
    n_m: usize,
    n_w: usize,
    dt: f64,
) -> Result<Heatmap, CycleError> {
    if n_m == 0 || n_w == 0 {
        return Err(CycleError::InvalidParams(
            "bin counts must be positive".into(),
        ));
    }
    if !(dt > 0.0) {
        return Err(CycleError::InvalidParams(format!(
            "dt must be positive, got {dt}"
        )));
    }
    let n_samples = (cycle.duration() / dt + 1e-9).floor() as usize + 1;
    let samples = (0..n_samples)
        .map(|k| {
            let t = (cycle.start() + k as f64 * dt).min(cycle.end());
            torque_speed_at(cycle, vehicle, crr, cd, t)
                .map(|op| (op.torque_m, op.omega_m * RAD_S_TO_RPM))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let (mut m_lo, mut m_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut w_lo, mut w_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(m, w) in &samples {
        m_lo = m_lo.min(m);
        m_hi = m_hi.max(m);
        w_lo = w_lo.min(w);
        w_hi = w_hi.max(w);
    }
    let torque_edges = edges(m_lo, m_hi, n_m);
    let speed_edges = edges(w_lo, w_hi, n_w);
    let mut counts = vec![vec![0u64; n_w]; n_m];
    for &(m, w) in &samples {
        counts[bin(m, &torque_edges)][bin(w, &speed_edges)] += 1;
    }
    Ok(Heatmap {
        torque_edges,
        speed_edges,
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rpm(omega: f64) -> f64 {
        omega * RAD_S_TO_RPM
    }

    #[test]
    fn udc_control_points() {
        let udc = DrivingCycle::udc();
        assert_eq!(udc.points().len(), 16);
        assert_eq!(udc.points()[2], ControlPoint::new(15.0, 4.16));
        assert_eq!(udc.points()[0], ControlPoint::new(0.0, 0.0));
        assert_eq!(udc.points()[15], ControlPoint::new(195.0, 0.0));
        assert!(udc.points().windows(2).all(|w| w[1].t > w[0].t));
    }

    #[test]
    fn velocity_interpolates() {
        let udc = DrivingCycle::udc();
        assert_eq!(udc.velocity(15.0).unwrap(), 4.16);
        assert_eq!(udc.velocity(0.0).unwrap(), 0.0);
        assert!((udc.velocity(13.0).unwrap() - 2.08).abs() < 1e-12);
        assert_eq!(udc.velocity(195.0).unwrap(), 0.0);
        assert!(matches!(
            udc.velocity(195.5),
            Err(CycleError::OutOfDomain { .. })
        ));
        assert!(udc.velocity(-1.0).is_err());
        assert!(udc.velocity(f64::NAN).is_err());
    }

    #[test]
    fn rejects_malformed_cycles() {
        let p = ControlPoint::new;
        assert!(DrivingCycle::new(vec![p(0.0, 0.0)]).is_err());
        assert!(DrivingCycle::new(vec![p(0.0, 0.0), p(0.0, 0.0)]).is_err());
        assert!(DrivingCycle::new(vec![p(0.0, 1.0), p(1.0, 0.0)]).is_err());
        assert!(DrivingCycle::new(vec![p(0.0, 0.0), p(1.0, -1.0), p(2.0, 0.0)]).is_err());
        assert!(DrivingCycle::new(vec![p(0.0, 0.0), p(2.0, 3.0), p(4.0, 0.0)]).is_ok());
    }

    fn zero_sample(params: &CycleScenarioParams) -> CycleSample {
        CycleSample {
            v_shifts: vec![0.0; params.vertical_indices.len()],
            t_shifts: vec![0.0; params.horizontal_indices.len()],
            crr_factor: 0.0,
            cd_factor: 0.0,
        }
    }

    #[test]
    fn scenario_a_examples() {
        let udc = DrivingCycle::udc();
        let params = CycleScenarioParams::default();
        let mut sample = zero_sample(&params);
        assert_eq!(udc.apply_scenario_a(&params, &sample).unwrap(), udc);

        // v_11 (t = 143 s) sits at 0-based index 10, the fifth vertical index
        sample.v_shifts[4] = 1.0;
        let shifted = udc.apply_scenario_a(&params, &sample).unwrap();
        assert!((shifted.points()[10].v - 16.656).abs() < 1e-12);

        sample.v_shifts = vec![-1.0; 8];
        let low = udc.apply_scenario_a(&params, &sample).unwrap();
        for &i in &params.vertical_indices {
            assert!((low.points()[i].v - 0.8 * udc.points()[i].v).abs() < 1e-12);
        }
    }

    #[test]
    fn scenario_b_examples() {
        let udc = DrivingCycle::udc();
        let params = CycleScenarioParams::default();
        let mut sample = zero_sample(&params);
        assert_eq!(udc.apply_scenario_b(&params, &sample).unwrap(), udc);

        sample.t_shifts[0] = 1.0;
        let right = udc.apply_scenario_b(&params, &sample).unwrap();
        assert!((right.points()[2].t - 21.24).abs() < 1e-12);
        assert_eq!(right.points()[1], udc.points()[1]);
        assert_eq!(right.points()[3], udc.points()[3]);

        sample.t_shifts[0] = -1.0;
        let left = udc.apply_scenario_b(&params, &sample).unwrap();
        assert!((left.points()[2].t - 11.88).abs() < 1e-12);
    }

    #[test]
    fn scenario_sample_validation() {
        let udc = DrivingCycle::udc();
        let params = CycleScenarioParams::default();
        let mut sample = zero_sample(&params);
        sample.v_shifts.pop();
        assert!(udc.apply_scenario_a(&params, &sample).is_err());
        let mut sample = zero_sample(&params);
        sample.t_shifts[1] = 1.5;
        assert!(udc.apply_scenario_b(&params, &sample).is_err());
    }

    #[test]
    fn scenario_param_validation() {
        let mut p = CycleScenarioParams::default();
        assert!(p.validate(16).is_ok());
        p.alpha = 1.0;
        assert!(p.validate(16).is_err());
        let mut p = CycleScenarioParams::default();
        p.horizontal_indices = vec![0];
        assert!(p.validate(16).is_err());
        let mut p = CycleScenarioParams::default();
        p.horizontal_indices = vec![2, 3];
        assert!(p.validate(16).is_err());
        let mut p = CycleScenarioParams::default();
        p.delta_rr = 0.9;
        assert!(p.validate(16).is_err());
    }

    #[test]
    fn effective_coefficient_endpoints() {
        let vehicle = VehicleParams {
            crr_dry: 0.01,
            cd_dry: 0.3,
            ..VehicleParams::calibrated()
        };
        let params = CycleScenarioParams::default();
        let mut sample = zero_sample(&params);
        let (crr, cd) = effective_coefficients(&vehicle, &params, &sample);
        assert_eq!((crr, cd), (0.01, 0.3));
        sample.crr_factor = 1.0;
        sample.cd_factor = 1.0;
        let (crr, cd) = effective_coefficients(&vehicle, &params, &sample);
        assert!((crr - 0.013).abs() < 1e-15);
        assert!((cd - 0.36).abs() < 1e-15);
    }

    #[test]
    fn calibrated_vehicle_reproduces_reference_points() {
        let udc = DrivingCycle::udc();
        let veh = VehicleParams::calibrated();
        let (crr, cd) = (veh.crr_dry, veh.cd_dry);
        let at = |t| torque_speed_at(&udc, &veh, crr, cd, t).unwrap();

        let p1 = at(49.0);
        assert!((p1.torque_m - 0.75).abs() < 0.05 * 0.75);
        assert_eq!(p1.omega_m, 0.0);

        let p2 = at(61.0);
        assert!((p2.torque_m - 0.91).abs() < 0.05 * 0.91);
        assert!((rpm(p2.omega_m) - 707.3).abs() < 0.05 * 707.3);

        let p3 = at(90.5);
        assert!((p3.torque_m + 0.43).abs() < 0.05 * 0.43);
        assert!((rpm(p3.omega_m) - 353.7).abs() < 0.05 * 353.7);

        let r2 = p2.omega_m / udc.velocity(61.0).unwrap();
        let r3 = p3.omega_m / udc.velocity(90.5).unwrap();
        assert!((r2 - r3).abs() <= 1e-12 * r2);
    }

    #[test]
    fn standstill_plateau_has_no_load() {
        let udc = DrivingCycle::udc();
        let veh = VehicleParams::calibrated();
        let op = torque_speed_at(&udc, &veh, veh.crr_dry, veh.cd_dry, 30.0).unwrap();
        assert_eq!(op.torque_m, 0.0);
        assert_eq!(op.omega_m, 0.0);
    }

    #[test]
    fn lossless_cruise_has_zero_torque() {
        let veh = VehicleParams::calibrated();
        for v in [0.0, 3.0, 13.88, 40.0] {
            let (_, m) = shaft_load(&veh, 0.0, 0.0, v, 0.0);
            assert_eq!(m, 0.0);
        }
    }

    #[test]
    fn peak_torque_is_end_of_fastest_ramp() {
        let udc = DrivingCycle::udc();
        let veh = VehicleParams::calibrated();
        let peak = peak_torque(&udc, &veh, veh.crr_dry, veh.cd_dry);
        let (_, at_143) = shaft_load(&veh, veh.crr_dry, veh.cd_dry, 13.88, 13.88 / 26.0);
        assert!((peak - at_143).abs() < 1e-12);
        // the sampled trajectory never exceeds it
        for k in 0..=1950 {
            let op = torque_speed_at(&udc, &veh, veh.crr_dry, veh.cd_dry, k as f64 * 0.1).unwrap();
            assert!(op.torque_m <= peak + 1e-12);
        }
    }

    #[test]
    fn quadrature_bookkeeping() {
        let udc = DrivingCycle::udc();
        let nodes = udc.quadrature_nodes(2);
        assert_eq!(nodes.len(), 30);
        let sum: f64 = nodes.iter().map(|n| n.1).sum();
        assert!((sum - 195.0).abs() < 1e-12);

        let mid = udc.quadrature_nodes(1);
        for (seg, (t, w)) in udc.segments().zip(mid) {
            assert!((t - 0.5 * (seg.t0 + seg.t1)).abs() < 1e-12);
            assert!((w - seg.duration()).abs() < 1e-12);
        }
    }

    #[test]
    fn quadrature_integrates_velocity_exactly() {
        let udc = DrivingCycle::udc();
        // trapezoid integral of the spline, computed independently
        let exact: f64 = UDC_POINTS
            .windows(2)
            .map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0))
            .sum();
        let approx: f64 = udc
            .quadrature_nodes(3)
            .iter()
            .map(|&(t, w)| w * udc.velocity(t).unwrap())
            .sum();
        assert!((approx - exact).abs() <= 1e-12 * exact);
    }

    #[test]
    fn heatmap_counts() {
        let udc = DrivingCycle::udc();
        let veh = VehicleParams::calibrated();
        let h = heatmap_bins(&udc, &veh, veh.crr_dry, veh.cd_dry, 8, 8, 1.0).unwrap();
        assert_eq!(h.counts.len(), 8);
        assert!(h.counts.iter().all(|r| r.len() == 8));
        assert_eq!(h.total(), 196);

        let single = heatmap_bins(&udc, &veh, veh.crr_dry, veh.cd_dry, 1, 1, 1.0).unwrap();
        assert_eq!(single.counts, vec![vec![196]]);

        let flat = DrivingCycle::new(vec![
            ControlPoint::new(0.0, 0.0),
            ControlPoint::new(10.0, 0.0),
        ])
        .unwrap();
        let h = heatmap_bins(&flat, &veh, veh.crr_dry, veh.cd_dry, 8, 8, 1.0).unwrap();
        let nonzero: Vec<_> = h
            .counts
            .iter()
            .enumerate()
            .flat_map(|(i, r)| {
                r.iter()
                    .enumerate()
                    .filter(|(_, &c)| c > 0)
                    .map(move |(j, &c)| (i, j, c))
            })
            .collect();
        assert_eq!(nonzero.len(), 1);
        let (i, j, c) = nonzero[0];
        assert_eq!(c, 11);
        assert!(h.torque_edges[i] <= 0.0 && 0.0 <= h.torque_edges[i + 1]);
        assert!(h.speed_edges[j] <= 0.0 && 0.0 <= h.speed_edges[j + 1]);
    }

    #[test]
    fn csv_round_trip() {
        let udc = DrivingCycle::udc();
        let mut buf = Vec::new();
        udc.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"t,v\n"));
        let back = DrivingCycle::read_csv(&buf[..]).unwrap();
        assert_eq!(back, udc);
        assert!(DrivingCycle::read_csv(&b"time,v\n0,0\n1,0\n"[..]).is_err());
        assert!(DrivingCycle::read_csv(&b"t,v\n0,0\n1,x\n"[..]).is_err());
    }
}
