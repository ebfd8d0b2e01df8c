//! Pipeline orchestration: each command runs a fixed sequence of timed
//! stages that write CSV files into the output directory.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::ValueEnum;
use pm_robopt_core::cycle::{
    effective_coefficients, fmt_num, heatmap_bins, torque_speed_at, CycleError, DrivingCycle,
    RAD_S_TO_RPM,
};
use pm_robopt_core::fem::{FemError, PmParams};
use pm_robopt_core::machine::{efficiency_map, max_torque, write_trajectory_csv, MachineError};
use pm_robopt_core::robust::{self, MachineModel, RobustError, RobustOutcome, ScenarioKind};
use pm_robopt_core::sparsegrid::{smolyak, tensor_grid, GridError};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::manifest::{FileRecord, RunManifest, StageRecord, StageStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// Reference cycle, perturbed samples and the operating-point heatmap.
    Cycle,
    /// Full versus sparse collocation node counts.
    Table1,
    /// Field solve and dq parameters of one design, with its efficiency map.
    SolveMachine,
    /// Robust optimization under the configured scenario.
    Optimize,
    /// Monte Carlo success rate of one design.
    Validate,
    /// Optimizes every listed scenario and cross-validates the designs.
    Crossval,
    /// Cycle, table1, solve-machine and crossval in sequence.
    All,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Cycle => "cycle",
            Command::Table1 => "table1",
            Command::SolveMachine => "solve-machine",
            Command::Optimize => "optimize",
            Command::Validate => "validate",
            Command::Crossval => "crossval",
            Command::All => "all",
        }
    }
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Cycle(#[from] CycleError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Machine(#[from] MachineError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Robust(#[from] RobustError),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("cannot prepare output directory {path}: {source}")]
    OutputDir {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: StageError,
    },
    #[error("cannot write manifest: {0}")]
    Manifest(#[source] io::Error),
    #[error(transparent)]
    Pool(RobustError),
}

/// Sample spacing (s) of exported trajectories.
const TRAJECTORY_DT: f64 = 0.1;
/// Heatmap resolution (torque bins, speed bins) and sample spacing (s).
const HEATMAP: (usize, usize, f64) = (20, 20, 0.01);
/// Perturbed cycle samples exported per scenario.
const CYCLE_SAMPLES: u64 = 5;
const TABLE1_DIMS: [usize; 4] = [5, 7, 11, 15];

/// File-name form of a scenario name.
pub fn scenario_tag(kind: ScenarioKind) -> &'static str {
    match kind {
        ScenarioKind::Nominal => "nominal",
        ScenarioKind::A => "A",
        ScenarioKind::B => "B",
        ScenarioKind::AB => "AB",
        ScenarioKind::C => "C",
    }
}

struct Pipeline<'a> {
    cfg: &'a RunConfig,
    out: &'a Path,
    stages: Vec<StageRecord>,
    files: Vec<String>,
    failed: Option<String>,
    model: Option<MachineModel>,
    outcomes: Vec<RobustOutcome>,
}

/// Runs `command` and writes its outputs plus `manifest.json` into `out`.
///
/// The manifest is written even when a stage fails; files written before
/// the failure are kept and listed.
pub fn run_command(cfg: &RunConfig, command: Command, out: &Path) -> Result<RunManifest, RunError> {
    std::fs::create_dir_all(out).map_err(|source| RunError::OutputDir {
        path: out.to_path_buf(),
        source,
    })?;
    let workers = cfg.workers();
    let mut p = Pipeline {
        cfg,
        out,
        stages: Vec::new(),
        files: Vec::new(),
        failed: None,
        model: None,
        outcomes: Vec::new(),
    };
    let result = robust::with_workers(workers, || p.execute(command)).map_err(RunError::Pool)?;

    let mut manifest = RunManifest::new(command.name(), cfg.to_toml(), workers);
    manifest.stages = std::mem::take(&mut p.stages);
    manifest.failed_stage = p.failed.take();
    let mut names = std::mem::take(&mut p.files);
    names.sort();
    names.dedup();
    for name in &names {
        manifest
            .files
            .push(FileRecord::from_file(out, name).map_err(RunError::Manifest)?);
    }
    manifest.write(out).map_err(RunError::Manifest)?;
    result.map(|()| manifest)
}

impl Pipeline<'_> {
    fn execute(&mut self, command: Command) -> Result<(), RunError> {
        match command {
            Command::Cycle => self.stage("cycle", Self::cycle),
            Command::Table1 => self.stage("table1", Self::table1),
            Command::SolveMachine => {
                self.stage("model", Self::ensure_model)?;
                self.stage("solve-machine", Self::solve_machine)
            }
            Command::Optimize => {
                self.stage("model", Self::ensure_model)?;
                let kind = self
                    .cfg
                    .scenario_kind()
                    .map_err(|e| stage_err("optimize", e.into()))?;
                self.stage("optimize", |p| p.optimize(kind))
            }
            Command::Validate => {
                self.stage("model", Self::ensure_model)?;
                self.stage("validate", Self::validate)
            }
            Command::Crossval => self.crossval_pipeline(),
            Command::All => {
                self.stage("cycle", Self::cycle)?;
                self.stage("table1", Self::table1)?;
                self.stage("model", Self::ensure_model)?;
                self.stage("solve-machine", Self::solve_machine)?;
                self.crossval_pipeline()
            }
        }
    }

    fn crossval_pipeline(&mut self) -> Result<(), RunError> {
        self.stage("model", Self::ensure_model)?;
        for name in &self.cfg.validate.scenarios {
            let kind = ScenarioKind::parse(name).ok_or_else(|| {
                stage_err(
                    "optimize",
                    StageError::Other(format!("unknown scenario `{name}`")),
                )
            })?;
            if self.outcomes.iter().any(|o| o.scenario == kind) {
                continue;
            }
            self.stage(&format!("optimize-{}", scenario_tag(kind)), |p| {
                p.optimize(kind)
            })?;
        }
        self.stage("crossval", Self::crossval)
    }

    fn stage(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut Self) -> Result<(), StageError>,
    ) -> Result<(), RunError> {
        let start = Instant::now();
        let res = f(self);
        let seconds = start.elapsed().as_secs_f64();
        let (status, error) = match &res {
            Ok(()) => (StageStatus::Ok, None),
            Err(e) => (StageStatus::Failed, Some(e.to_string())),
        };
        self.stages.push(StageRecord {
            name: name.to_string(),
            seconds,
            status,
            error,
        });
        res.map_err(|source| {
            self.failed = Some(name.to_string());
            stage_err(name, source)
        })
    }

    fn write_file(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut BufWriter<File>) -> Result<(), StageError>,
    ) -> Result<(), StageError> {
        let mut w = BufWriter::new(File::create(self.out.join(name))?);
        // listed even if writing fails part-way, so partial files are visible
        self.files.push(name.to_string());
        f(&mut w)?;
        w.flush()?;
        Ok(())
    }

    fn model(&self) -> &MachineModel {
        self.model.as_ref().expect("model stage runs first")
    }

    fn ensure_model(&mut self) -> Result<(), StageError> {
        if self.model.is_some() {
            return Ok(());
        }
        let cfg = self.cfg;
        let mut model = MachineModel::new(
            &cfg.geometry(),
            &cfg.materials(),
            cfg.machine.mesh_level,
            cfg.template(),
            DrivingCycle::udc(),
            cfg.vehicle(),
            cfg.efficiency_options()?,
        )?;
        model.i_test = cfg.machine.i_test;
        let mesh = model.system.mesh().clone();
        self.write_file("nodes.csv", |w| Ok(mesh.write_nodes_csv(w)?))?;
        self.write_file("tris.csv", |w| Ok(mesh.write_tris_csv(w)?))?;
        self.model = Some(model);
        Ok(())
    }

    /// Robust targets: configured values, else those of `x0`.
    fn spec(&self) -> Result<robust::RobustSpec, StageError> {
        let (e_d, m_d) = match (self.cfg.solver.e_d, self.cfg.solver.m_max_d) {
            (Some(e), Some(m)) => (e, m),
            _ => self.model().default_targets(&self.cfg.solver.x0)?,
        };
        Ok(self.cfg.spec(e_d, m_d)?)
    }

    fn cycle(&mut self) -> Result<(), StageError> {
        let cfg = self.cfg;
        let udc = DrivingCycle::udc();
        let vehicle = cfg.vehicle();
        vehicle.validate()?;
        self.write_file("udc.csv", |w| Ok(udc.write_csv(w)?))?;
        self.write_file("trajectory.csv", |w| {
            writeln!(w, "t,omega_rpm,torque_nm")?;
            let n = (udc.duration() / TRAJECTORY_DT).round() as usize;
            for k in 0..=n {
                let t = (k as f64 * TRAJECTORY_DT).min(udc.end());
                let op = torque_speed_at(&udc, &vehicle, vehicle.crr_dry, vehicle.cd_dry, t)?;
                writeln!(
                    w,
                    "{},{},{}",
                    fmt_num(t),
                    fmt_num(op.omega_m * RAD_S_TO_RPM),
                    fmt_num(op.torque_m)
                )?;
            }
            Ok(())
        })?;
        let (n_m, n_w, dt) = HEATMAP;
        let heat = heatmap_bins(
            &udc,
            &vehicle,
            vehicle.crr_dry,
            vehicle.cd_dry,
            n_m,
            n_w,
            dt,
        )?;
        self.write_file("heatmap.csv", |w| Ok(heat.write_csv(w)?))?;
        self.write_file("cycle_samples.csv", |w| {
            writeln!(w, "scenario,sample,t,v,crr,cd")?;
            for kind in [ScenarioKind::A, ScenarioKind::B, ScenarioKind::AB] {
                let s = cfg.scenario(kind);
                s.validate(udc.points().len())?;
                for k in 0..CYCLE_SAMPLES {
                    let z = robust::mc_sample(cfg.solver.seed, k, s.dimension());
                    let r = s.realize(&z)?;
                    let cyc = s.perturbed_cycle(&udc, &r)?;
                    let (crr, cd) = effective_coefficients(&vehicle, &s.cycle, &r.sample);
                    for pt in cyc.points() {
                        writeln!(
                            w,
                            "{},{k},{},{},{},{}",
                            kind.name(),
                            fmt_num(pt.t),
                            fmt_num(pt.v),
                            fmt_num(crr),
                            fmt_num(cd)
                        )?;
                    }
                }
            }
            Ok(())
        })
    }

    fn table1(&mut self) -> Result<(), StageError> {
        self.write_file("table1.csv", |w| {
            writeln!(w, "d,full_tensor,sparse_level3")?;
            for d in TABLE1_DIMS {
                let full = tensor_grid(d, 5)?.count();
                let sparse = smolyak(d, 3).len();
                writeln!(w, "{d},{full},{sparse}")?;
            }
            Ok(())
        })
    }

    fn solve_machine(&mut self) -> Result<(), StageError> {
        let cfg = self.cfg;
        let p = cfg.design();
        let model = self.model();
        let dq = model.dq(&PmParams::from_slice(&p))?;
        let v = &model.vehicle;
        let eff =
            robust::evaluate_qois(model, &p, &cfg.scenario(ScenarioKind::Nominal), &[])?.efficiency;
        let map = efficiency_map(
            &dq,
            dq.i_max,
            cfg.machine.map_rpm_max,
            cfg.machine.map_currents,
            cfg.machine.map_speeds,
        );
        let (cycle, vehicle) = (model.cycle.clone(), v.clone());
        self.write_file("dq_params.csv", |w| {
            writeln!(
                w,
                "p1,p2,p3,phi0,ld,lq,rst,npp,m,i_max,max_torque,cycle_efficiency"
            )?;
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                fmt_num(p[0]),
                fmt_num(p[1]),
                fmt_num(p[2]),
                fmt_num(dq.phi0),
                fmt_num(dq.ld),
                fmt_num(dq.lq),
                fmt_num(dq.rst),
                dq.npp,
                dq.m,
                fmt_num(dq.i_max),
                fmt_num(max_torque(&dq)),
                fmt_num(eff)
            )?;
            Ok(())
        })?;
        self.write_file("efficiency_map.csv", |w| Ok(map.write_csv(w, "eff")?))?;
        self.write_file("current_trajectory.csv", |w| {
            write_trajectory_csv(
                w,
                &dq,
                &cycle,
                &vehicle,
                vehicle.crr_dry,
                vehicle.cd_dry,
                TRAJECTORY_DT,
            )
            .map_err(|e| StageError::Other(e.to_string()))
        })
    }

    fn optimize(&mut self, kind: ScenarioKind) -> Result<(), StageError> {
        let cfg = self.cfg;
        let spec = self.spec()?;
        let s = cfg.scenario(kind);
        let outcome = robust::optimize(
            self.model(),
            &spec,
            &s,
            cfg.solver.sparse_level,
            &cfg.solver.x0,
            &cfg.sqp_options(),
        )?;
        let tag = scenario_tag(kind);
        self.write_file(&format!("sqp_trace_{tag}.csv"), |w| {
            Ok(outcome.sqp.write_trace_csv(w)?)
        })?;
        self.write_file(&format!("optimum_{tag}.csv"), |w| {
            writeln!(w, "scenario,p1,p2,p3,area,objective,c_eff,c_torque,g1,g2,status,iterations,kkt,e_d,m_max_d")?;
            let c = &outcome.constraints;
            let p = outcome.p;
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                kind.name(),
                fmt_num(p[0]),
                fmt_num(p[1]),
                fmt_num(p[2]),
                fmt_num(outcome.area),
                fmt_num(outcome.objective),
                fmt_num(c[0]),
                fmt_num(c[1]),
                fmt_num(c[2]),
                fmt_num(c[3]),
                outcome.sqp.status.name(),
                outcome.sqp.iterations,
                fmt_num(outcome.sqp.kkt),
                fmt_num(spec.e_d),
                fmt_num(spec.m_max_d)
            )?;
            Ok(())
        })?;
        self.outcomes.push(outcome);
        Ok(())
    }

    fn validate(&mut self) -> Result<(), StageError> {
        let cfg = self.cfg;
        let spec = self.spec()?;
        let kind = cfg.scenario_kind()?;
        let rep = robust::monte_carlo_validate(
            self.model(),
            &cfg.design(),
            &spec,
            &cfg.scenario(kind),
            cfg.solver.mc_samples,
            cfg.solver.seed,
        )?;
        self.write_file("validation.csv", |w| {
            Ok(robust::write_validation_csv(
                w,
                &[("design".to_string(), rep)],
            )?)
        })
    }

    fn crossval(&mut self) -> Result<(), StageError> {
        let cfg = self.cfg;
        let spec = self.spec()?;
        let designs: Vec<(String, [f64; 3])> = self
            .outcomes
            .iter()
            .map(|o| (o.scenario.name().to_string(), o.p))
            .collect();
        let scenarios: Vec<_> = self
            .outcomes
            .iter()
            .map(|o| cfg.scenario(o.scenario))
            .collect();
        let cv = robust::crossval(
            self.model(),
            &designs,
            &scenarios,
            &spec,
            cfg.solver.mc_samples,
            cfg.solver.seed,
        )?;
        self.write_file("crossval.csv", |w| Ok(cv.write_csv(w)?))?;
        let rows: Vec<(String, robust::ValidationReport)> = cv
            .designs
            .iter()
            .zip(&cv.reports)
            .flat_map(|((name, _), row)| row.iter().map(move |r| (name.clone(), r.clone())))
            .collect();
        self.write_file("validation.csv", |w| {
            Ok(robust::write_validation_csv(w, &rows)?)
        })?;

        // nominal design against the configured robust scenario's design
        let kind = cfg.scenario_kind()?;
        let find = |k: ScenarioKind| self.outcomes.iter().find(|o| o.scenario == k).map(|o| o.p);
        if let (Some(p_nom), Some(p_rob)) = (find(ScenarioKind::Nominal), find(kind)) {
            let model = self.model();
            let d1 = model.dq(&PmParams::from_slice(&p_nom))?;
            let d2 = model.dq(&PmParams::from_slice(&p_rob))?;
            let m = &cfg.machine;
            let i_max = d1.i_max.min(d2.i_max);
            let m1 = efficiency_map(&d1, i_max, m.map_rpm_max, m.map_currents, m.map_speeds);
            let m2 = efficiency_map(&d2, i_max, m.map_rpm_max, m.map_currents, m.map_speeds);
            let diff = m1.difference(&m2)?;
            self.write_file("efficiency_difference.csv", |w| {
                Ok(diff.write_csv(w, "eff_diff")?)
            })?;
        }
        Ok(())
    }
}

fn stage_err(stage: &str, source: StageError) -> RunError {
    RunError::Stage {
        stage: stage.to_string(),
        source,
    }
}
