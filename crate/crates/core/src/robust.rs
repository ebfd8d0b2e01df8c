//! Risk-averse magnet sizing under driving-cycle, weather and manufacturing
//! uncertainty, with Monte Carlo validation of candidate designs.
//!
//! The design vector `p̄ = (p̄1, p̄2, p̄3)` holds the nominal magnet width,
//! height and depth in mm. The problem is
//!
//! ```text
//! min  p̄1 p̄2 + λ std[p1 p2]
//! s.t. E_d - E[E(p)] + λ std[E(p)] <= 0
//!      M_d - E[M(p)] + λ std[M(p)] <= 0
//!      G(p̄) <= 0,   lower <= p̄ <= upper
//! ```
//!
//! with moments taken by sparse-grid collocation over the scenario's
//! uncertain parameters.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::cycle::{
    effective_coefficients, fmt_num, peak_torque, CycleError, CycleSample, CycleScenarioParams,
    DrivingCycle, VehicleParams,
};
use crate::fem::{
    build_reference_mesh, precompute_affine, AffineSystem, FemError, Materials, PmParams,
    PoleGeometry,
};
use crate::machine::{
    cycle_efficiency, extract_dq, max_torque, DqParams, EfficiencyOptions, MachineError,
};
use crate::sparsegrid::{
    moments, moments_with_gradient, smolyak, GridError, MomentsGrad, ParamDim, ParamLabel,
    ParameterSpace, SparseGrid, StdEstimator,
};
use crate::sqp::{sqp_solve, Gradients, NlpProblem, SqpError, SqpOptions, SqpResult, Values};

#[derive(Debug, Error)]
pub enum RobustError {
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Machine(#[from] MachineError),
    #[error(transparent)]
    Cycle(#[from] CycleError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Sqp(#[from] SqpError),
    #[error("sample infeasible at z = {z:?}: {reason}")]
    SampleInfeasible { z: Vec<f64>, reason: String },
    #[error("{} collocation node(s) infeasible, first {:?}: {reason}", nodes.len(), nodes.first())]
    InfeasibleNodes { nodes: Vec<usize>, reason: String },
    #[error("invalid robust specification: {0}")]
    InvalidSpec(String),
    #[error("starting point violates the design constraints: {0}")]
    InfeasibleStart(String),
    #[error("grid dimension {got} does not match scenario dimension {expected}")]
    GridDimension { expected: usize, got: usize },
    #[error("worker pool: {0}")]
    Pool(String),
}

/// Which uncertainties are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScenarioKind {
    Nominal,
    /// Vertical velocity shifts.
    A,
    /// Horizontal time shifts.
    B,
    /// Both cycle perturbations.
    AB,
    /// Wet-road rolling resistance and drag.
    C,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] = [
        ScenarioKind::Nominal,
        ScenarioKind::C,
        ScenarioKind::A,
        ScenarioKind::B,
        ScenarioKind::AB,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Nominal => "nominal",
            ScenarioKind::A => "A",
            ScenarioKind::B => "B",
            ScenarioKind::AB => "A+B",
            ScenarioKind::C => "C",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "nominal" | "none" => Some(ScenarioKind::Nominal),
            "a" => Some(ScenarioKind::A),
            "b" => Some(ScenarioKind::B),
            "a+b" | "ab" => Some(ScenarioKind::AB),
            "c" => Some(ScenarioKind::C),
            _ => None,
        }
    }

    fn velocity(self) -> bool {
        matches!(self, ScenarioKind::A | ScenarioKind::AB)
    }

    fn time(self) -> bool {
        matches!(self, ScenarioKind::B | ScenarioKind::AB)
    }

    fn weather(self) -> bool {
        self == ScenarioKind::C
    }
}

/// An uncertainty scenario: the active cycle perturbations plus the
/// manufacturing tolerance `delta_p` (mm) of each magnet dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub cycle: CycleScenarioParams,
    pub delta_p: [f64; 3],
}

impl Scenario {
    pub fn new(kind: ScenarioKind) -> Self {
        Self {
            kind,
            cycle: CycleScenarioParams::default(),
            delta_p: [0.2; 3],
        }
    }

    pub fn validate(&self, cycle_len: usize) -> Result<(), RobustError> {
        self.cycle.validate(cycle_len)?;
        if self.delta_p.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(RobustError::InvalidSpec(format!(
                "delta_p must be positive, got {:?}",
                self.delta_p
            )));
        }
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        if self.kind == ScenarioKind::Nominal {
            return 0;
        }
        let mut d = 3;
        if self.kind.velocity() {
            d += self.cycle.vertical_indices.len();
        }
        if self.kind.time() {
            d += self.cycle.horizontal_indices.len();
        }
        if self.kind.weather() {
            d += 2;
        }
        d
    }

    /// Physical ranges in the fixed order PM, velocity, time, weather.
    pub fn parameter_space(&self) -> ParameterSpace {
        let mut dims = Vec::with_capacity(self.dimension());
        if self.kind != ScenarioKind::Nominal {
            for (i, d) in self.delta_p.iter().enumerate() {
                dims.push(ParamDim {
                    label: ParamLabel::Magnet(i),
                    lower: -d,
                    upper: *d,
                });
            }
        }
        let unit = |label| ParamDim {
            label,
            lower: -1.0,
            upper: 1.0,
        };
        if self.kind.velocity() {
            dims.extend(
                (0..self.cycle.vertical_indices.len()).map(|i| unit(ParamLabel::VelocityShift(i))),
            );
        }
        if self.kind.time() {
            dims.extend(
                (0..self.cycle.horizontal_indices.len()).map(|i| unit(ParamLabel::TimeShift(i))),
            );
        }
        if self.kind.weather() {
            dims.push(ParamDim {
                label: ParamLabel::RollingFactor,
                lower: 0.0,
                upper: 1.0,
            });
            dims.push(ParamDim {
                label: ParamLabel::DragFactor,
                lower: 0.0,
                upper: 1.0,
            });
        }
        ParameterSpace { dims }
    }

    /// Maps a point of `[-1, 1]^d` to a magnet offset and a cycle sample.
    pub fn realize(&self, z: &[f64]) -> Result<Realization, RobustError> {
        let d = self.dimension();
        if z.len() != d {
            return Err(RobustError::GridDimension {
                expected: d,
                got: z.len(),
            });
        }
        if z.iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(RobustError::SampleInfeasible {
                z: z.to_vec(),
                reason: "coordinates must lie in [-1, 1]".into(),
            });
        }
        let space = self.parameter_space();
        let x = space.to_physical(z);
        let mut r = Realization::default();
        for (dim, v) in space.dims.iter().zip(x) {
            match dim.label {
                ParamLabel::Magnet(i) => r.pm_offset[i] = v,
                ParamLabel::VelocityShift(_) => r.sample.v_shifts.push(v),
                ParamLabel::TimeShift(_) => r.sample.t_shifts.push(v),
                ParamLabel::RollingFactor => r.sample.crr_factor = v,
                ParamLabel::DragFactor => r.sample.cd_factor = v,
            }
        }
        Ok(r)
    }

    /// The driving cycle of one realization.
    pub fn perturbed_cycle<'c>(
        &self,
        base: &'c DrivingCycle,
        r: &Realization,
    ) -> Result<Cow<'c, DrivingCycle>, CycleError> {
        let mut cycle = Cow::Borrowed(base);
        if self.kind.velocity() {
            cycle = Cow::Owned(cycle.apply_scenario_a(&self.cycle, &r.sample)?);
        }
        if self.kind.time() {
            cycle = Cow::Owned(cycle.apply_scenario_b(&self.cycle, &r.sample)?);
        }
        Ok(cycle)
    }
}

/// Stochastic dimension of a scenario: three magnet tolerances plus the
/// active cycle and weather parameters; zero for the nominal case.
pub fn scenario_dimension(s: &Scenario) -> usize {
    s.dimension()
}

/// One realization of a scenario's uncertain parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Realization {
    /// Offset added to the nominal magnet dimensions (mm).
    pub pm_offset: [f64; 3],
    pub sample: CycleSample,
}

/// Quantities of interest of one machine on one cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Qois {
    pub efficiency: f64,
    pub max_torque: f64,
}

/// Machine template and load context shared by all evaluations.
#[derive(Debug, Clone)]
pub struct MachineModel {
    pub system: AffineSystem,
    /// Resistance, pole pairs, phases and current limit of the machine; the
    /// flux and inductances are replaced by field extraction.
    pub template: DqParams,
    /// Test current (A, RMS) of the inductance extraction.
    pub i_test: f64,
    pub cycle: DrivingCycle,
    pub vehicle: VehicleParams,
    pub efficiency: EfficiencyOptions,
}

/// Phase resistance (Ω) of the shipped template.
pub const TEMPLATE_RST: f64 = 0.06;
/// Current limit (A, RMS) of the shipped template.
pub const TEMPLATE_I_MAX: f64 = 19.5;
/// Initial magnet design (mm).
pub const P_INIT: [f64; 3] = [10.0, 13.3, 3.0];

impl MachineModel {
    pub fn new(
        geometry: &PoleGeometry,
        materials: &Materials,
        mesh_level: usize,
        template: DqParams,
        cycle: DrivingCycle,
        vehicle: VehicleParams,
        efficiency: EfficiencyOptions,
    ) -> Result<Self, RobustError> {
        let mesh = build_reference_mesh(geometry, &PmParams::from_slice(&P_INIT), mesh_level)?;
        let system = precompute_affine(mesh, materials)?;
        vehicle.validate()?;
        Ok(Self {
            system,
            template,
            i_test: 1.0,
            cycle,
            vehicle,
            efficiency,
        })
    }

    /// Shipped machine on the UDC with the calibrated vehicle.
    pub fn shipped(mesh_level: usize) -> Result<Self, RobustError> {
        Self::new(
            &PoleGeometry::default(),
            &Materials::default(),
            mesh_level,
            shipped_template(),
            DrivingCycle::udc(),
            VehicleParams::default(),
            EfficiencyOptions::default(),
        )
    }

    pub fn geometry(&self) -> &PoleGeometry {
        self.system.geometry()
    }

    pub fn dq(&self, p: &PmParams) -> Result<DqParams, MachineError> {
        extract_dq(&self.system, p, self.i_test, &self.template)
    }

    /// QoIs of a machine under one realization of `scenario`.
    pub fn qois_for(
        &self,
        dq: &DqParams,
        scenario: &Scenario,
        r: &Realization,
    ) -> Result<Qois, RobustError> {
        let cycle = scenario.perturbed_cycle(&self.cycle, r)?;
        let (crr, cd) = effective_coefficients(&self.vehicle, &scenario.cycle, &r.sample);
        Ok(Qois {
            efficiency: cycle_efficiency(dq, &cycle, &self.vehicle, crr, cd, &self.efficiency)?,
            max_torque: max_torque(dq),
        })
    }

    /// Efficiency of `p` on the unperturbed cycle and the peak torque the
    /// cycle demands: the default targets `(E_d, M_d)`.
    pub fn default_targets(&self, p_init: &[f64; 3]) -> Result<(f64, f64), RobustError> {
        let q = evaluate_qois(self, p_init, &Scenario::new(ScenarioKind::Nominal), &[])?;
        let m_d = peak_torque(
            &self.cycle,
            &self.vehicle,
            self.vehicle.crr_dry,
            self.vehicle.cd_dry,
        );
        Ok((q.efficiency, m_d))
    }
}

pub fn shipped_template() -> DqParams {
    DqParams {
        phi0: 0.0,
        ld: 0.0,
        lq: 0.0,
        rst: TEMPLATE_RST,
        npp: 3,
        m: 3,
        i_max: TEMPLATE_I_MAX,
    }
}

fn pm_at(p_bar: &[f64; 3], offset: &[f64; 3]) -> PmParams {
    PmParams::new(
        p_bar[0] + offset[0],
        p_bar[1] + offset[1],
        p_bar[2] + offset[2],
    )
}

/// QoIs at design `p_bar` for the scenario point `z` in `[-1, 1]^d`.
pub fn evaluate_qois(
    model: &MachineModel,
    p_bar: &[f64; 3],
    s: &Scenario,
    z: &[f64],
) -> Result<Qois, RobustError> {
    let r = s.realize(z)?;
    let fail = |e: RobustError| RobustError::SampleInfeasible {
        z: z.to_vec(),
        reason: e.to_string(),
    };
    let dq = model
        .dq(&pm_at(p_bar, &r.pm_offset))
        .map_err(|e| fail(e.into()))?;
    model.qois_for(&dq, s, &r).map_err(fail)
}

/// Closed-form `p̄1 p̄2 + λ std[p1 p2]` for independent uniform
/// `p_i ~ U(p̄_i - δ_i, p̄_i + δ_i)`, with its gradient.
pub fn robust_objective(p_bar: &[f64; 3], lambda: f64, delta_p: &[f64; 3]) -> (f64, [f64; 3]) {
    let (a, b) = (p_bar[0], p_bar[1]);
    let (va, vb) = (delta_p[0] * delta_p[0] / 3.0, delta_p[1] * delta_p[1] / 3.0);
    // expanded form of (a² + va)(b² + vb) - a² b², free of cancellation
    let var = a * a * vb + b * b * va + va * vb;
    let std = var.sqrt();
    let mut grad = [b, a, 0.0];
    if lambda != 0.0 && std > 0.0 {
        grad[0] += lambda * a * vb / std;
        grad[1] += lambda * b * va / std;
    }
    (a * b + lambda * std, grad)
}

/// Targets, risk aversion and design constraints of the sizing problem.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustSpec {
    pub lambda: f64,
    pub e_d: f64,
    pub m_max_d: f64,
    pub lower: [f64; 3],
    pub upper: [f64; 3],
    /// Tolerance (mm) kept free around the design so that every
    /// manufactured magnet still fits.
    pub fit_tolerance: [f64; 3],
    /// Central-difference step (mm) of the node gradients.
    pub fd_step: f64,
    pub estimator: StdEstimator,
}

impl RobustSpec {
    /// Spec with the shipped bounds and the given targets.
    pub fn new(lambda: f64, e_d: f64, m_max_d: f64) -> Self {
        Self {
            lambda,
            e_d,
            m_max_d,
            lower: [4.0, 3.0, 1.0],
            upper: [26.0, 18.0, 6.0],
            fit_tolerance: [0.2; 3],
            fd_step: 1e-3,
            estimator: StdEstimator::Centered,
        }
    }

    pub fn validate(&self, geometry: &PoleGeometry) -> Result<(), RobustError> {
        let bad = |m: String| Err(RobustError::InvalidSpec(m));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.e_d > 0.0 && self.e_d < 1.0) {
            return bad(format!("e_d must lie in (0, 1), got {}", self.e_d));
        }
        if !(self.m_max_d > 0.0 && self.m_max_d.is_finite()) {
            return bad(format!("m_max_d must be positive, got {}", self.m_max_d));
        }
        if !(self.fd_step > 0.0 && self.fd_step < 0.1) {
            return bad(format!(
                "fd_step must lie in (0, 0.1) mm, got {}",
                self.fd_step
            ));
        }
        for j in 0..3 {
            let min = geometry.min_gap_mm + self.fit_tolerance[j] + self.fd_step;
            if !(self.fit_tolerance[j] >= 0.0) {
                return bad(format!("fit_tolerance[{j}] must be >= 0"));
            }
            if !(self.lower[j] >= min && self.lower[j] < self.upper[j]) {
                return bad(format!(
                    "bounds of p{} must satisfy {min} <= lower < upper, got [{}, {}]",
                    j + 1,
                    self.lower[j],
                    self.upper[j]
                ));
            }
        }
        Ok(())
    }

    fn margin(&self, j: usize) -> f64 {
        self.fit_tolerance[j] + self.fd_step
    }

    /// Fit constraints `G(p̄) <= 0` (mm): height stack and width.
    pub fn fit_constraints(&self, p_bar: &[f64; 3], geometry: &PoleGeometry) -> [f64; 2] {
        let g = geometry.min_gap_mm;
        [
            p_bar[1] + self.margin(1) + p_bar[2] + self.margin(2) + g - geometry.box_height_mm(),
            p_bar[0] + self.margin(0) + 2.0 * g - geometry.box_width_mm(),
        ]
    }

    pub fn fit_jacobian() -> [[f64; 3]; 2] {
        [[0.0, 1.0, 1.0], [1.0, 0.0, 0.0]]
    }

    /// Bounds and fit violations of a design, if any.
    pub fn check_design(
        &self,
        p_bar: &[f64; 3],
        geometry: &PoleGeometry,
    ) -> Result<(), RobustError> {
        for j in 0..3 {
            if !(self.lower[j] <= p_bar[j] && p_bar[j] <= self.upper[j]) {
                return Err(RobustError::InfeasibleStart(format!(
                    "p{} = {} outside [{}, {}]",
                    j + 1,
                    p_bar[j],
                    self.lower[j],
                    self.upper[j]
                )));
            }
        }
        let g = self.fit_constraints(p_bar, geometry);
        if g.iter().any(|v| *v > 0.0) {
            return Err(RobustError::InfeasibleStart(format!(
                "fit constraints {g:?} must be <= 0"
            )));
        }
        Ok(())
    }
}

/// Node values and, optionally, their design gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeQois {
    pub efficiency: Vec<f64>,
    pub max_torque: Vec<f64>,
    pub d_efficiency: Option<Vec<Vec<f64>>>,
    pub d_max_torque: Option<Vec<Vec<f64>>>,
}

fn offset_key(o: &[f64; 3]) -> [u64; 3] {
    // +0.0 and -0.0 share one key
    o.map(|v| (v + 0.0).to_bits())
}

/// QoIs at every collocation node. Field solves are shared between nodes
/// with the same magnet offset; design gradients use central differences
/// of step `h` in `p̄`.
pub fn collocate(
    model: &MachineModel,
    p_bar: &[f64; 3],
    s: &Scenario,
    grid: &SparseGrid,
    gradient_step: Option<f64>,
) -> Result<NodeQois, RobustError> {
    let d = s.dimension();
    if grid.dim() != d {
        return Err(RobustError::GridDimension {
            expected: d,
            got: grid.dim(),
        });
    }
    let realizations: Vec<Realization> = (0..grid.len())
        .map(|k| s.realize(grid.point(k)))
        .collect::<Result<_, _>>()?;

    let mut keys: BTreeMap<[u64; 3], usize> = BTreeMap::new();
    let mut offsets: Vec<[f64; 3]> = Vec::new();
    let node_offset: Vec<usize> = realizations
        .iter()
        .map(|r| {
            *keys.entry(offset_key(&r.pm_offset)).or_insert_with(|| {
                offsets.push(r.pm_offset);
                offsets.len() - 1
            })
        })
        .collect();

    // per offset: base, then (+h, -h) for each coordinate
    let stride = if gradient_step.is_some() { 7 } else { 1 };
    let h = gradient_step.unwrap_or(0.0);
    let designs: Vec<PmParams> = offsets
        .iter()
        .flat_map(|o| {
            (0..stride).map(move |v| {
                let mut p = pm_at(p_bar, o);
                if v > 0 {
                    let j = (v - 1) / 2;
                    let sign = if v % 2 == 1 { 1.0 } else { -1.0 };
                    let mut a = p.to_array();
                    a[j] += sign * h;
                    p = PmParams::from_slice(&a);
                }
                p
            })
        })
        .collect();
    let dqs: Vec<Result<DqParams, MachineError>> =
        designs.par_iter().map(|p| model.dq(p)).collect();
    if let Some(bad) = dqs.iter().position(Result::is_err) {
        let off = bad / stride;
        let nodes = (0..grid.len()).filter(|&k| node_offset[k] == off).collect();
        let reason = dqs[bad]
            .as_ref()
            .err()
            .map(ToString::to_string)
            .unwrap_or_default();
        return Err(RobustError::InfeasibleNodes { nodes, reason });
    }
    let dqs: Vec<DqParams> = dqs.into_iter().map(Result::unwrap).collect();

    let per_node: Vec<Result<(Vec<f64>, Vec<f64>), RobustError>> = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let r = &realizations[k];
            let base = node_offset[k] * stride;
            let mut eff = Vec::with_capacity(stride);
            let mut tq = Vec::with_capacity(stride);
            for dq in &dqs[base..base + stride] {
                let q = model.qois_for(dq, s, r)?;
                eff.push(q.efficiency);
                tq.push(q.max_torque);
            }
            Ok((eff, tq))
        })
        .collect();
    let bad: Vec<usize> = per_node
        .iter()
        .enumerate()
        .filter(|(_, r)| r.is_err())
        .map(|(k, _)| k)
        .collect();
    if let Some(&first) = bad.first() {
        let reason = per_node[first]
            .as_ref()
            .err()
            .map(ToString::to_string)
            .unwrap_or_default();
        return Err(RobustError::InfeasibleNodes { nodes: bad, reason });
    }
    let per_node: Vec<(Vec<f64>, Vec<f64>)> = per_node.into_iter().map(Result::unwrap).collect();

    let diff = |v: &[f64]| -> Vec<f64> {
        (0..3)
            .map(|j| (v[1 + 2 * j] - v[2 + 2 * j]) / (2.0 * h))
            .collect()
    };
    Ok(NodeQois {
        efficiency: per_node.iter().map(|(e, _)| e[0]).collect(),
        max_torque: per_node.iter().map(|(_, t)| t[0]).collect(),
        d_efficiency: gradient_step.map(|_| per_node.iter().map(|(e, _)| diff(e)).collect()),
        d_max_torque: gradient_step.map(|_| per_node.iter().map(|(_, t)| diff(t)).collect()),
    })
}

/// Collocation grid of a scenario; the nominal case uses the single point
/// of the empty domain.
pub fn scenario_grid(s: &Scenario, level: usize) -> SparseGrid {
    smolyak(s.dimension(), level)
}

/// Constraint values `[c1, c2, G1, G2]` and, optionally, their Jacobian.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintEval {
    pub values: Vec<f64>,
    pub jacobian: Option<Vec<[f64; 3]>>,
    pub efficiency: MomentsGrad,
    pub max_torque: MomentsGrad,
}

pub fn robust_constraints(
    model: &MachineModel,
    p_bar: &[f64; 3],
    spec: &RobustSpec,
    s: &Scenario,
    grid: &SparseGrid,
    with_gradient: bool,
) -> Result<ConstraintEval, RobustError> {
    let nodes = collocate(model, p_bar, s, grid, with_gradient.then_some(spec.fd_step))?;
    let w = grid.weights();
    let mg = |vals: &[f64], grads: &Option<Vec<Vec<f64>>>| -> Result<MomentsGrad, GridError> {
        match grads {
            Some(g) => moments_with_gradient(vals, g, w, spec.estimator),
            None => {
                let (mean, std) = moments(vals, w, spec.estimator)?;
                Ok(MomentsGrad {
                    mean,
                    std,
                    d_mean: vec![0.0; 3],
                    d_std: vec![0.0; 3],
                })
            }
        }
    };
    let eff = mg(&nodes.efficiency, &nodes.d_efficiency)?;
    let tq = mg(&nodes.max_torque, &nodes.d_max_torque)?;
    let geom = model.geometry();
    let fit = spec.fit_constraints(p_bar, geom);
    let values = vec![
        spec.e_d - eff.mean + spec.lambda * eff.std,
        spec.m_max_d - tq.mean + spec.lambda * tq.std,
        fit[0],
        fit[1],
    ];
    let jacobian = with_gradient.then(|| {
        let row = |m: &MomentsGrad| -> [f64; 3] {
            std::array::from_fn(|j| -m.d_mean[j] + spec.lambda * m.d_std[j])
        };
        let fj = RobustSpec::fit_jacobian();
        vec![row(&eff), row(&tq), fj[0], fj[1]]
    });
    Ok(ConstraintEval {
        values,
        jacobian,
        efficiency: eff,
        max_torque: tq,
    })
}

/// Scaled NLP handed to the SQP solver.
pub struct RobustProblem<'a> {
    pub model: &'a MachineModel,
    pub spec: &'a RobustSpec,
    pub scenario: &'a Scenario,
    pub grid: SparseGrid,
    /// Objective scale (mm²).
    pub j_scale: f64,
}

impl RobustProblem<'_> {
    fn scales(&self) -> [f64; 4] {
        [1.0 - self.spec.e_d, self.spec.m_max_d, 10.0, 10.0]
    }

    fn delta(&self) -> [f64; 3] {
        if self.scenario.kind == ScenarioKind::Nominal {
            [0.0; 3]
        } else {
            self.scenario.delta_p
        }
    }

    fn as3(x: &[f64]) -> [f64; 3] {
        [x[0], x[1], x[2]]
    }
}

impl NlpProblem for RobustProblem<'_> {
    fn dim(&self) -> usize {
        3
    }

    fn n_constraints(&self) -> usize {
        4
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (self.spec.lower.to_vec(), self.spec.upper.to_vec())
    }

    fn values(&self, x: &[f64]) -> Result<Values, String> {
        let p = Self::as3(x);
        let (j, _) = robust_objective(&p, self.spec.lambda, &self.delta());
        let c = robust_constraints(self.model, &p, self.spec, self.scenario, &self.grid, false)
            .map_err(|e| e.to_string())?;
        let sc = self.scales();
        Ok((
            j / self.j_scale,
            c.values.iter().zip(sc).map(|(v, s)| v / s).collect(),
        ))
    }

    fn gradients(&self, x: &[f64]) -> Result<Gradients, String> {
        let p = Self::as3(x);
        let (_, g) = robust_objective(&p, self.spec.lambda, &self.delta());
        let c = robust_constraints(self.model, &p, self.spec, self.scenario, &self.grid, true)
            .map_err(|e| e.to_string())?;
        let sc = self.scales();
        let jac = c
            .jacobian
            .unwrap_or_default()
            .iter()
            .zip(sc)
            .map(|(r, s)| r.iter().map(|v| v / s).collect())
            .collect();
        Ok((g.iter().map(|v| v / self.j_scale).collect(), jac))
    }
}

/// Optimized design with its unscaled objective and constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustOutcome {
    pub scenario: ScenarioKind,
    pub p: [f64; 3],
    pub objective: f64,
    pub area: f64,
    pub constraints: Vec<f64>,
    pub sqp: SqpResult,
}

pub fn optimize(
    model: &MachineModel,
    spec: &RobustSpec,
    s: &Scenario,
    level: usize,
    x0: &[f64; 3],
    opts: &SqpOptions,
) -> Result<RobustOutcome, RobustError> {
    spec.validate(model.geometry())?;
    s.validate(model.cycle.points().len())?;
    spec.check_design(x0, model.geometry())?;
    let problem = RobustProblem {
        model,
        spec,
        scenario: s,
        grid: scenario_grid(s, level),
        j_scale: x0[0] * x0[1],
    };
    let res = sqp_solve(&problem, x0, opts)?;
    let p = RobustProblem::as3(&res.x);
    let (objective, _) = robust_objective(&p, spec.lambda, &problem.delta());
    let constraints = res
        .c
        .iter()
        .zip(problem.scales())
        .map(|(v, s)| v * s)
        .collect();
    Ok(RobustOutcome {
        scenario: s.kind,
        p,
        objective,
        area: p[0] * p[1],
        constraints,
        sqp: res,
    })
}

/// Monte Carlo success rate of one design under one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub scenario: ScenarioKind,
    pub n: usize,
    pub successes: usize,
    pub sr_percent: f64,
    pub fail_eff: usize,
    pub fail_torque: usize,
    /// Samples whose evaluation failed; counted in both failure columns.
    pub infeasible: usize,
    pub seed: u64,
}

/// Uniform sample `index` of `[-1, 1]^d`, independent of evaluation order.
pub fn mc_sample(seed: u64, index: u64, d: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    (0..d).map(|_| rng.gen_range(-1.0..=1.0)).collect()
}

pub fn monte_carlo_validate(
    model: &MachineModel,
    p_bar: &[f64; 3],
    spec: &RobustSpec,
    s: &Scenario,
    n: usize,
    seed: u64,
) -> Result<ValidationReport, RobustError> {
    if n == 0 {
        return Err(RobustError::InvalidSpec(
            "Monte Carlo needs at least one sample".into(),
        ));
    }
    let d = s.dimension();
    let outcomes: Vec<Option<Qois>> = (0..n)
        .into_par_iter()
        .map(|k| evaluate_qois(model, p_bar, s, &mc_sample(seed, k as u64, d)).ok())
        .collect();
    let mut rep = ValidationReport {
        scenario: s.kind,
        n,
        successes: 0,
        sr_percent: 0.0,
        fail_eff: 0,
        fail_torque: 0,
        infeasible: 0,
        seed,
    };
    for o in &outcomes {
        match o {
            Some(q) => {
                let e_ok = q.efficiency >= spec.e_d;
                let t_ok = q.max_torque >= spec.m_max_d;
                rep.fail_eff += usize::from(!e_ok);
                rep.fail_torque += usize::from(!t_ok);
                rep.successes += usize::from(e_ok && t_ok);
            }
            None => {
                rep.infeasible += 1;
                rep.fail_eff += 1;
                rep.fail_torque += 1;
            }
        }
    }
    rep.sr_percent = 100.0 * rep.successes as f64 / n as f64;
    Ok(rep)
}

/// Writes `scenario,design,sr_percent,n,seed,fail_eff,fail_torque`.
pub fn write_validation_csv<W: Write>(
    mut out: W,
    rows: &[(String, ValidationReport)],
) -> std::io::Result<()> {
    writeln!(
        out,
        "scenario,design,sr_percent,n,seed,fail_eff,fail_torque"
    )?;
    for (design, r) in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.scenario.name(),
            design,
            fmt_num(r.sr_percent),
            r.n,
            r.seed,
            r.fail_eff,
            r.fail_torque
        )?;
    }
    Ok(())
}

/// Success rates of several designs under several scenarios.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossValidation {
    pub designs: Vec<(String, [f64; 3])>,
    pub scenarios: Vec<ScenarioKind>,
    /// `reports[i][j]`: design `i` under scenario `j`.
    pub reports: Vec<Vec<ValidationReport>>,
}

pub fn crossval(
    model: &MachineModel,
    designs: &[(String, [f64; 3])],
    scenarios: &[Scenario],
    spec: &RobustSpec,
    n: usize,
    seed: u64,
) -> Result<CrossValidation, RobustError> {
    let reports = designs
        .iter()
        .map(|(_, p)| {
            scenarios
                .iter()
                .map(|s| monte_carlo_validate(model, p, spec, s, n, seed))
                .collect()
        })
        .collect::<Result<_, _>>()?;
    Ok(CrossValidation {
        designs: designs.to_vec(),
        scenarios: scenarios.iter().map(|s| s.kind).collect(),
        reports,
    })
}

impl CrossValidation {
    /// One row per design: name, magnet dimensions, area, then the success
    /// rate (%) under each scenario.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "design,p1,p2,p3,area")?;
        for s in &self.scenarios {
            write!(out, ",sr_{}", s.name())?;
        }
        writeln!(out)?;
        for ((name, p), row) in self.designs.iter().zip(&self.reports) {
            write!(
                out,
                "{name},{},{},{},{}",
                fmt_num(p[0]),
                fmt_num(p[1]),
                fmt_num(p[2]),
                fmt_num(p[0] * p[1])
            )?;
            for r in row {
                write!(out, ",{}", fmt_num(r.sr_percent))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Runs `f` on a dedicated pool of `workers` threads.
pub fn with_workers<R: Send>(
    workers: usize,
    f: impl FnOnce() -> R + Send,
) -> Result<R, RobustError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| RobustError::Pool(e.to_string()))?;
    Ok(pool.install(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimensions_per_scenario() {
        let dim = |k| scenario_dimension(&Scenario::new(k));
        assert_eq!(dim(ScenarioKind::C), 5);
        assert_eq!(dim(ScenarioKind::A), 11);
        assert_eq!(dim(ScenarioKind::B), 7);
        assert_eq!(dim(ScenarioKind::AB), 15);
        assert_eq!(dim(ScenarioKind::Nominal), 0);
    }

    #[test]
    fn objective_examples() {
        let (j, _) = robust_objective(&[3.0, 7.0, 1.0], 0.0, &[0.2; 3]);
        assert_eq!(j, 21.0);
        let (j, _) = robust_objective(&[10.0, 13.3, 3.0], 0.0, &[0.2; 3]);
        assert!((j - 133.0).abs() < 1e-12);
        let s3 = 3f64.sqrt();
        let (j, _) = robust_objective(&[1.0, 1.0, 1.0], 1.0, &[s3, s3, 0.0]);
        assert!((j - (1.0 + s3)).abs() < 1e-12);
    }

    #[test]
    fn objective_gradient_matches_differences() {
        let p = [9.0, 5.5, 2.0];
        let (_, g) = robust_objective(&p, 2.0, &[0.3, 0.2, 0.1]);
        let fd = crate::sqp::finite_diff_grad(
            |x| Ok(robust_objective(&[x[0], x[1], x[2]], 2.0, &[0.3, 0.2, 0.1]).0),
            &p,
            1e-5,
        )
        .unwrap();
        for j in 0..3 {
            assert!((g[j] - fd[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn objective_variance_matches_sampling() {
        let p = [10.0, 13.3, 3.0];
        let d = [0.2, 0.2, 0.2];
        let (j0, _) = robust_objective(&p, 0.0, &d);
        let (j1, _) = robust_objective(&p, 1.0, &d);
        let exact = j1 - j0;
        let n = 1_000_000;
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..n {
            let a = p[0] + d[0] * rng.gen_range(-1.0..1.0);
            let b = p[1] + d[1] * rng.gen_range(-1.0..1.0);
            s1 += a * b;
            s2 += a * b * a * b;
        }
        let mean = s1 / n as f64;
        let std = (s2 / n as f64 - mean * mean).sqrt();
        assert!((std / exact - 1.0).abs() < 0.01);
    }

    #[test]
    fn realization_layout() {
        let s = Scenario::new(ScenarioKind::C);
        let r = s.realize(&[1.0, -1.0, 0.0, -1.0, 1.0]).unwrap();
        assert_eq!(r.pm_offset, [0.2, -0.2, 0.0]);
        assert_eq!(r.sample.crr_factor, 0.0);
        assert_eq!(r.sample.cd_factor, 1.0);
        let s = Scenario::new(ScenarioKind::AB);
        let z: Vec<f64> = (0..15).map(|k| (k as f64 / 7.0) - 1.0).collect();
        let r = s.realize(&z).unwrap();
        assert_eq!(r.sample.v_shifts.len(), 8);
        assert_eq!(r.sample.t_shifts.len(), 4);
        assert_eq!(r.sample.v_shifts[0], z[3]);
        assert_eq!(r.sample.t_shifts[0], z[11]);
        assert!(s.realize(&z[..14]).is_err());
        assert!(Scenario::new(ScenarioKind::C)
            .realize(&[1.5, 0.0, 0.0, 0.0, 0.0])
            .is_err());
    }

    #[test]
    fn mc_samples_are_order_independent() {
        let a = mc_sample(7, 12, 5);
        let _ = mc_sample(7, 3, 5);
        assert_eq!(a, mc_sample(7, 12, 5));
        assert_ne!(a, mc_sample(7, 13, 5));
        assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn scenario_names_round_trip() {
        for k in ScenarioKind::ALL {
            assert_eq!(ScenarioKind::parse(k.name()), Some(k));
        }
        assert_eq!(ScenarioKind::parse("x"), None);
    }

    #[test]
    fn spec_validation() {
        let g = PoleGeometry::default();
        let s = RobustSpec::new(2.0, 0.85, 2.4);
        s.validate(&g).unwrap();
        assert!(RobustSpec {
            lambda: -1.0,
            ..s.clone()
        }
        .validate(&g)
        .is_err());
        assert!(RobustSpec {
            e_d: 1.0,
            ..s.clone()
        }
        .validate(&g)
        .is_err());
        assert!(RobustSpec {
            lower: [0.1, 3.0, 1.0],
            ..s.clone()
        }
        .validate(&g)
        .is_err());
        s.check_design(&P_INIT, &g).unwrap();
        assert!(s.check_design(&[10.0, 18.0, 6.0], &g).is_err());
    }
}
