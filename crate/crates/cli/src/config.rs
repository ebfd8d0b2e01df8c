//! TOML run configuration.
//!
//! Every section and key is optional; missing values take the documented
//! defaults and unknown keys are rejected. See `config.example.toml` in the
//! repository root for the full reference.

use std::path::{Path, PathBuf};

use pm_robopt_core::cycle::{CycleScenarioParams, DrivingCycle, VehicleParams};
use pm_robopt_core::fem::{Materials, PoleGeometry};
use pm_robopt_core::machine::{DqParams, EfficiencyOptions, OverloadPolicy, PowerMode};
use pm_robopt_core::robust::{self, RobustSpec, Scenario, ScenarioKind};
use pm_robopt_core::sparsegrid::StdEstimator;
use pm_robopt_core::sqp::SqpOptions;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("invalid value for `{key}`: {msg}")]
    Invalid { key: String, msg: String },
}

fn invalid(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.into(),
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub npp: u32,
    pub r_shaft: f64,
    pub r_rotor: f64,
    pub r_stator_in: f64,
    pub r_stator_out: f64,
    pub slot_depth: f64,
    pub l_z: f64,
    pub turns_per_slot: f64,
    pub magnet_box_bottom: f64,
    pub min_gap_mm: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        let g = PoleGeometry::default();
        Self {
            npp: g.npp,
            r_shaft: g.r_shaft,
            r_rotor: g.r_rotor,
            r_stator_in: g.r_stator_in,
            r_stator_out: g.r_stator_out,
            slot_depth: g.slot_depth,
            l_z: g.l_z,
            turns_per_slot: g.turns_per_slot,
            magnet_box_bottom: g.magnet_box_bottom,
            min_gap_mm: g.min_gap_mm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaterialsConfig {
    pub mu_r_iron: f64,
    pub mu_r_magnet: f64,
    pub br: f64,
}

impl Default for MaterialsConfig {
    fn default() -> Self {
        let m = Materials::default();
        Self {
            mu_r_iron: m.mu_r_iron,
            mu_r_magnet: m.mu_r_magnet,
            br: m.br,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MachineConfig {
    /// Phase resistance (Ω).
    pub rst: f64,
    /// Current limit (A, RMS).
    pub i_max: f64,
    /// Test current of the inductance extraction (A, RMS).
    pub i_test: f64,
    pub mesh_level: usize,
    /// Gauss points per cycle segment.
    pub quad_order: usize,
    /// `signed` or `motoring-only`.
    pub power_mode: String,
    /// `allow` or `strict`.
    pub overload: String,
    pub map_currents: usize,
    pub map_speeds: usize,
    pub map_rpm_max: f64,
}

impl Default for MachineConfig {
    fn default() -> Self {
        Self {
            rst: robust::TEMPLATE_RST,
            i_max: robust::TEMPLATE_I_MAX,
            i_test: 1.0,
            mesh_level: 0,
            quad_order: 4,
            power_mode: "signed".into(),
            overload: "allow".into(),
            map_currents: 41,
            map_speeds: 41,
            map_rpm_max: 1200.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleConfig {
    pub mass: f64,
    pub wheel_radius: f64,
    pub gear_ratio: f64,
    pub frontal_area: f64,
    pub air_density: f64,
    pub gravity: f64,
    pub crr_dry: f64,
    pub cd_dry: f64,
}

impl Default for VehicleConfig {
    fn default() -> Self {
        let v = VehicleParams::default();
        Self {
            mass: v.mass,
            wheel_radius: v.wheel_radius,
            gear_ratio: v.gear_ratio,
            frontal_area: v.frontal_area,
            air_density: v.air_density,
            gravity: v.gravity,
            crr_dry: v.crr_dry,
            cd_dry: v.cd_dry,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// `nominal`, `A`, `B`, `A+B` or `C`.
    pub kind: String,
    pub delta_v: f64,
    pub alpha: f64,
    pub delta_rr: f64,
    pub delta_d: f64,
    /// Magnet tolerance per dimension (mm).
    pub delta_p: [f64; 3],
    pub vertical_indices: Vec<usize>,
    pub horizontal_indices: Vec<usize>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let c = CycleScenarioParams::default();
        Self {
            kind: "C".into(),
            delta_v: c.delta_v,
            alpha: c.alpha,
            delta_rr: c.delta_rr,
            delta_d: c.delta_d,
            delta_p: [0.2; 3],
            vertical_indices: c.vertical_indices,
            horizontal_indices: c.horizontal_indices,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub lambda: f64,
    /// Efficiency target; defaults to the efficiency of `x0`.
    pub e_d: Option<f64>,
    /// Torque target (N·m); defaults to the cycle's peak torque.
    pub m_max_d: Option<f64>,
    pub x0: [f64; 3],
    pub lower: [f64; 3],
    pub upper: [f64; 3],
    pub fit_tolerance: [f64; 3],
    pub fd_step: f64,
    /// `centered` or `uncentered`.
    pub std_estimator: String,
    pub tol: f64,
    pub feas_tol: f64,
    pub max_iter: usize,
    pub sparse_level: usize,
    pub mc_samples: usize,
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let s = RobustSpec::new(2.0, 0.5, 1.0);
        let o = SqpOptions::default();
        Self {
            lambda: s.lambda,
            e_d: None,
            m_max_d: None,
            x0: robust::P_INIT,
            lower: s.lower,
            upper: s.upper,
            fit_tolerance: s.fit_tolerance,
            fd_step: s.fd_step,
            std_estimator: "centered".into(),
            tol: o.tol,
            feas_tol: o.feas_tol,
            max_iter: o.max_iter,
            sparse_level: 3,
            mc_samples: 10_000,
            seed: 20_240_611,
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateConfig {
    /// Design checked by `validate` and `solve-machine`; defaults to `x0`.
    pub design: Option<[f64; 3]>,
    /// Scenarios optimized and cross-validated by `crossval`.
    pub scenarios: Vec<String>,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        Self {
            design: None,
            scenarios: ScenarioKind::ALL
                .iter()
                .map(|k| k.name().to_string())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometryConfig,
    pub materials: MaterialsConfig,
    pub machine: MachineConfig,
    pub vehicle: VehicleConfig,
    pub scenario: ScenarioConfig,
    pub solver: SolverConfig,
    pub validate: ValidateConfig,
    pub output: OutputConfig,
}

/// Reads and validates a configuration file.
pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_str(&text)
}

pub fn parse_str(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let sc = &self.scenario;
        if !(sc.alpha > 0.0 && sc.alpha < 1.0) {
            return Err(invalid(
                "scenario.alpha",
                format!("must lie in (0, 1), got {}", sc.alpha),
            ));
        }
        if !(0.0..1.0).contains(&sc.delta_v) {
            return Err(invalid(
                "scenario.delta_v",
                format!("must lie in [0, 1), got {}", sc.delta_v),
            ));
        }
        if !(sc.delta_rr >= 1.0 && sc.delta_rr.is_finite()) {
            return Err(invalid(
                "scenario.delta_rr",
                format!("must be >= 1, got {}", sc.delta_rr),
            ));
        }
        if !(sc.delta_d >= 1.0 && sc.delta_d.is_finite()) {
            return Err(invalid(
                "scenario.delta_d",
                format!("must be >= 1, got {}", sc.delta_d),
            ));
        }
        if sc.delta_p.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(invalid(
                "scenario.delta_p",
                format!("must be positive, got {:?}", sc.delta_p),
            ));
        }
        self.scenario_kind()?;
        let sv = &self.solver;
        if !(sv.lambda >= 0.0 && sv.lambda.is_finite()) {
            return Err(invalid(
                "solver.lambda",
                format!("must be >= 0, got {}", sv.lambda),
            ));
        }
        if let Some(e) = sv.e_d {
            if !(e > 0.0 && e < 1.0) {
                return Err(invalid(
                    "solver.e_d",
                    format!("must lie in (0, 1), got {e}"),
                ));
            }
        }
        if let Some(m) = sv.m_max_d {
            if !(m > 0.0 && m.is_finite()) {
                return Err(invalid(
                    "solver.m_max_d",
                    format!("must be positive, got {m}"),
                ));
            }
        }
        if !(sv.tol > 0.0 && sv.feas_tol > 0.0) {
            return Err(invalid("solver.tol", "tolerances must be positive"));
        }
        if sv.max_iter == 0 {
            return Err(invalid("solver.max_iter", "must be positive"));
        }
        if sv.sparse_level > 6 {
            return Err(invalid(
                "solver.sparse_level",
                format!("must be at most 6, got {}", sv.sparse_level),
            ));
        }
        if sv.mc_samples == 0 {
            return Err(invalid("solver.mc_samples", "must be at least 1"));
        }
        self.estimator()?;
        let m = &self.machine;
        if !(m.rst > 0.0 && m.rst.is_finite()) {
            return Err(invalid(
                "machine.rst",
                format!("must be positive, got {}", m.rst),
            ));
        }
        if !(m.i_max > 0.0 && m.i_max.is_finite()) {
            return Err(invalid(
                "machine.i_max",
                format!("must be positive, got {}", m.i_max),
            ));
        }
        if !(m.i_test > 0.0 && m.i_test.is_finite()) {
            return Err(invalid(
                "machine.i_test",
                format!("must be positive, got {}", m.i_test),
            ));
        }
        if m.mesh_level > 4 {
            return Err(invalid(
                "machine.mesh_level",
                format!("must be at most 4, got {}", m.mesh_level),
            ));
        }
        if !(1..=64).contains(&m.quad_order) {
            return Err(invalid(
                "machine.quad_order",
                format!("must lie in 1..=64, got {}", m.quad_order),
            ));
        }
        if m.map_currents < 2 || m.map_speeds < 2 || !(m.map_rpm_max > 0.0) {
            return Err(invalid(
                "machine.map_currents",
                "map needs at least 2x2 points and a positive speed range",
            ));
        }
        self.efficiency_options()?;
        for name in &self.validate.scenarios {
            ScenarioKind::parse(name).ok_or_else(|| {
                invalid("validate.scenarios", format!("unknown scenario `{name}`"))
            })?;
        }

        let core = |key: &str, r: Result<(), String>| r.map_err(|msg| invalid(key, msg));
        core(
            "geometry",
            self.geometry().validate().map_err(|e| e.to_string()),
        )?;
        core(
            "materials",
            self.materials().validate().map_err(|e| e.to_string()),
        )?;
        core(
            "vehicle",
            self.vehicle().validate().map_err(|e| e.to_string()),
        )?;
        core(
            "scenario",
            self.cycle_params()
                .validate(DrivingCycle::udc().points().len())
                .map_err(|e| e.to_string()),
        )?;
        let spec = self.spec(0.5, 1.0)?;
        core(
            "solver",
            spec.validate(&self.geometry()).map_err(|e| e.to_string()),
        )?;
        core(
            "solver.x0",
            spec.check_design(&self.solver.x0, &self.geometry())
                .map_err(|e| e.to_string()),
        )?;
        if let Some(d) = self.validate.design {
            core(
                "validate.design",
                self.geometry()
                    .check_pm(&pm_robopt_core::fem::PmParams::from_slice(&d))
                    .map_err(|e| e.to_string()),
            )?;
        }
        Ok(())
    }

    pub fn geometry(&self) -> PoleGeometry {
        let g = &self.geometry;
        PoleGeometry {
            npp: g.npp,
            r_shaft: g.r_shaft,
            r_rotor: g.r_rotor,
            r_stator_in: g.r_stator_in,
            r_stator_out: g.r_stator_out,
            slot_depth: g.slot_depth,
            l_z: g.l_z,
            turns_per_slot: g.turns_per_slot,
            magnet_box_bottom: g.magnet_box_bottom,
            min_gap_mm: g.min_gap_mm,
        }
    }

    pub fn materials(&self) -> Materials {
        Materials {
            mu_r_iron: self.materials.mu_r_iron,
            mu_r_magnet: self.materials.mu_r_magnet,
            br: self.materials.br,
        }
    }

    pub fn vehicle(&self) -> VehicleParams {
        let v = &self.vehicle;
        VehicleParams {
            mass: v.mass,
            wheel_radius: v.wheel_radius,
            gear_ratio: v.gear_ratio,
            frontal_area: v.frontal_area,
            air_density: v.air_density,
            gravity: v.gravity,
            crr_dry: v.crr_dry,
            cd_dry: v.cd_dry,
        }
    }

    pub fn cycle_params(&self) -> CycleScenarioParams {
        let s = &self.scenario;
        CycleScenarioParams {
            delta_v: s.delta_v,
            alpha: s.alpha,
            delta_rr: s.delta_rr,
            delta_d: s.delta_d,
            vertical_indices: s.vertical_indices.clone(),
            horizontal_indices: s.horizontal_indices.clone(),
        }
    }

    pub fn scenario_kind(&self) -> Result<ScenarioKind, ConfigError> {
        ScenarioKind::parse(&self.scenario.kind).ok_or_else(|| {
            invalid(
                "scenario.kind",
                format!("unknown scenario `{}`", self.scenario.kind),
            )
        })
    }

    pub fn scenario(&self, kind: ScenarioKind) -> Scenario {
        Scenario {
            kind,
            cycle: self.cycle_params(),
            delta_p: self.scenario.delta_p,
        }
    }

    pub fn estimator(&self) -> Result<StdEstimator, ConfigError> {
        match self.solver.std_estimator.as_str() {
            "centered" => Ok(StdEstimator::Centered),
            "uncentered" => Ok(StdEstimator::Uncentered),
            other => Err(invalid(
                "solver.std_estimator",
                format!("expected `centered` or `uncentered`, got `{other}`"),
            )),
        }
    }

    pub fn efficiency_options(&self) -> Result<EfficiencyOptions, ConfigError> {
        let power_mode = match self.machine.power_mode.as_str() {
            "signed" => PowerMode::Signed,
            "motoring-only" => PowerMode::MotoringOnly,
            other => {
                return Err(invalid(
                    "machine.power_mode",
                    format!("expected `signed` or `motoring-only`, got `{other}`"),
                ))
            }
        };
        let overload = match self.machine.overload.as_str() {
            "allow" => OverloadPolicy::Allow,
            "strict" => OverloadPolicy::Strict,
            other => {
                return Err(invalid(
                    "machine.overload",
                    format!("expected `allow` or `strict`, got `{other}`"),
                ))
            }
        };
        Ok(EfficiencyOptions {
            quad_order: self.machine.quad_order,
            power_mode,
            overload,
        })
    }

    pub fn template(&self) -> DqParams {
        DqParams {
            rst: self.machine.rst,
            i_max: self.machine.i_max,
            npp: self.geometry.npp,
            ..robust::shipped_template()
        }
    }

    /// Robust specification with the configured targets, falling back to
    /// the given defaults.
    pub fn spec(&self, e_d_default: f64, m_d_default: f64) -> Result<RobustSpec, ConfigError> {
        let sv = &self.solver;
        Ok(RobustSpec {
            lambda: sv.lambda,
            e_d: sv.e_d.unwrap_or(e_d_default),
            m_max_d: sv.m_max_d.unwrap_or(m_d_default),
            lower: sv.lower,
            upper: sv.upper,
            fit_tolerance: sv.fit_tolerance,
            fd_step: sv.fd_step,
            estimator: self.estimator()?,
        })
    }

    pub fn sqp_options(&self) -> SqpOptions {
        SqpOptions {
            tol: self.solver.tol,
            feas_tol: self.solver.feas_tol,
            max_iter: self.solver.max_iter,
            ..SqpOptions::default()
        }
    }

    pub fn design(&self) -> [f64; 3] {
        self.validate.design.unwrap_or(self.solver.x0)
    }

    pub fn workers(&self) -> usize {
        if self.solver.workers == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            self.solver.workers
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = parse_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.scenario.delta_v, 0.2);
        assert_eq!(cfg.scenario.alpha, 0.78);
        assert_eq!(cfg.scenario.delta_rr, 1.3);
        assert_eq!(cfg.scenario.delta_d, 1.2);
        assert_eq!(cfg.scenario.delta_p, [0.2; 3]);
        assert_eq!(cfg.solver.mc_samples, 10_000);
    }

    #[test]
    fn alpha_out_of_range_names_the_key() {
        let err = parse_str("[scenario]\nalpha = 1.5\n").unwrap_err();
        assert!(
            matches!(&err, ConfigError::Invalid { key, .. } if key == "scenario.alpha"),
            "{err}"
        );
    }

    #[test]
    fn risk_neutral_is_valid() {
        let cfg = parse_str("[solver]\nlambda = 0.0\n").unwrap();
        assert_eq!(cfg.solver.lambda, 0.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse_str("[solver]\nlamda = 1.0\n").unwrap_err();
        assert!(err.to_string().contains("lamda"), "{err}");
        assert!(parse_str("[nonsense]\n").is_err());
    }

    #[test]
    fn enumerated_keys_are_checked() {
        assert!(parse_str("[scenario]\nkind = \"D\"\n").is_err());
        assert!(parse_str("[machine]\noverload = \"maybe\"\n").is_err());
        assert!(parse_str("[validate]\nscenarios = [\"C\", \"Z\"]\n").is_err());
        let cfg =
            parse_str("[scenario]\nkind = \"A+B\"\n[machine]\npower_mode = \"motoring-only\"\n")
                .unwrap();
        assert_eq!(cfg.scenario_kind().unwrap(), ScenarioKind::AB);
    }

    #[test]
    fn infeasible_start_is_rejected() {
        let err = parse_str("[solver]\nx0 = [27.9, 13.3, 3.0]\n").unwrap_err();
        assert!(
            matches!(&err, ConfigError::Invalid { key, .. } if key == "solver.x0"),
            "{err}"
        );
    }

    #[test]
    fn snapshot_round_trips() {
        let cfg = parse_str("[solver]\nlambda = 1.25\nseed = 99\ne_d = 0.8123456789012345\n[scenario]\nkind = \"A\"\n").unwrap();
        let back = parse_str(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, back);
    }
}
