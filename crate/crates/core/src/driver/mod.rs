//! Quasi-static loading loop, boundary program, reaction loads and
//! benchmark harness.

mod analysis;
mod bench;
mod output;

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::str::FromStr;

pub use analysis::{
    branches_both_sides, crack_nodes, first_reach_below, is_rise_and_decay, peak, post_peak_variation, CrackGeometry, CRACK_THRESHOLD,
};
pub use bench::{
    benchmark_vmult, memory_report, prepare_bench_state, write_bench_csv, write_memory_csv, BenchConfig, BenchKind,
    BenchRecord, MemoryRecord, BENCH_HEADER, MEMORY_HEADER,
};
pub use output::{write_csv_header, write_csv_row, write_vtk, CSV_HEADER};

use crate::active_set::{ActiveSetParams, SolverStack};
use crate::krylov::KrylovConfig;
use crate::clock::Stopwatch;
use crate::material::{MaterialParams, SplitMode};
use crate::mesh::{BoundaryTag, Level, MeshHierarchy};
use crate::multigrid::{MultigridConfig, TransferSet};
use crate::operator::{extrapolate_phase, LinearizationState, OperatorOptions};
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scenario {
    Tension,
    Shear,
}

impl FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "tension" => Ok(Scenario::Tension),
            "shear" => Ok(Scenario::Shear),
            other => Err(Error::Config(format!("unknown scenario '{other}'"))),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Tension => "tension",
            Scenario::Shear => "shear",
        })
    }
}

impl Scenario {
    /// Default number of loading steps.
    pub fn default_steps(self) -> usize {
        match self {
            Scenario::Tension => 800,
            Scenario::Shear => 1500,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub level: usize,
    pub degree: usize,
    pub split: SplitMode,
    pub material: MaterialParams,
    /// Time step (s).
    pub dt: f64,
    /// Displacement increment per unit time (mm/s).
    pub du: f64,
    pub steps: usize,
    pub multigrid: MultigridConfig,
    pub krylov: KrylovConfig,
    pub active_set: ActiveSetParams,
    pub operator: OperatorOptions,
    /// Directory receiving `loads.csv` and VTK snapshots.
    pub out_dir: Option<PathBuf>,
    /// Snapshot interval in steps; 0 disables snapshots.
    pub vtk_every: usize,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn new(scenario: Scenario, level: usize, degree: usize, split: SplitMode) -> Self {
        ScenarioConfig {
            scenario,
            level,
            degree,
            split,
            material: MaterialParams::default(),
            dt: 1.0,
            du: 1e-5,
            steps: scenario.default_steps(),
            multigrid: MultigridConfig::default(),
            krylov: KrylovConfig::default(),
            active_set: ActiveSetParams::default(),
            operator: OperatorOptions::default(),
            out_dir: None,
            vtk_every: 10,
            seed: 0,
        }
    }

    /// Checks the configuration and returns non-fatal warnings.
    pub fn validate(&self) -> Result<Vec<String>, Error> {
        self.material.validate()?;
        if self.steps == 0 {
            return Err(Error::Config("step count must be at least 1".into()));
        }
        if !(1..=crate::basis::MAX_DEGREE).contains(&self.degree) {
            return Err(Error::Config(format!("degree {} outside 1..=4", self.degree)));
        }
        if self.multigrid.coarse_level < 2 {
            return Err(Error::Config("coarse level must be at least 2".into()));
        }
        if self.level < self.multigrid.coarse_level {
            return Err(Error::Config(format!(
                "level {} below coarse level {}",
                self.level, self.multigrid.coarse_level
            )));
        }
        if !(self.dt > 0.0 && self.du.is_finite() && self.du > 0.0) {
            return Err(Error::Config("dt and du must be positive".into()));
        }
        if !(self.krylov.rel_tol > 0.0 && self.krylov.rel_tol < 1.0) {
            return Err(Error::Config("linear tolerance must lie in (0, 1)".into()));
        }
        if self.krylov.restart < 2 {
            return Err(Error::Config("GMRES restart must be at least 2".into()));
        }
        if self.active_set.max_iterations == 0 {
            return Err(Error::Config("active-set iteration limit must be at least 1".into()));
        }
        if !(self.active_set.c > 0.0) || !(self.active_set.tol > 0.0) {
            return Err(Error::Config("active-set constant and tolerance must be positive".into()));
        }
        if self.multigrid.sweeps == 0 {
            return Err(Error::Config("smoothing sweeps must be at least 1".into()));
        }
        if self.operator.workers == 0 {
            return Err(Error::Config("worker count must be at least 1".into()));
        }
        let mut warnings = Vec::new();
        let h = 0.5f64.powi(self.level as i32);
        if self.material.eps < 2.0 * h {
            warnings.push(format!(
                "length scale {} is below twice the mesh size {h}; the crack band is under-resolved",
                self.material.eps
            ));
        }
        Ok(warnings)
    }
}

/// Prescribed displacement values `(dof, value)` on the top and bottom
/// boundaries at time `t`.
pub fn boundary_program(scenario: Scenario, level: &Level, t: f64, du: f64) -> Vec<(usize, f64)> {
    let s = level.dofs.n_scalar;
    let mut out: Vec<(usize, f64)> = level.boundary_dofs(BoundaryTag::Bottom).into_iter().map(|d| (d, 0.0)).collect();
    let driven = t * du;
    for d in level.boundary_dofs(BoundaryTag::Top) {
        let is_x = d < s;
        let v = match (scenario, is_x) {
            (Scenario::Tension, false) | (Scenario::Shear, true) => driven,
            _ => 0.0,
        };
        out.push((d, v));
    }
    out
}

/// Applies the boundary program to `state` (mask and values).
pub fn apply_boundary(state: &mut LinearizationState, values: &[(usize, f64)]) -> Result<(), Error> {
    let mut mask = vec![false; state.n_dofs()];
    for &(d, _) in values {
        mask[d] = true;
    }
    state.set_dirichlet_mask(&mask)?;
    let sol = state.solution_mut();
    for &(d, v) in values {
        sol[d] = v;
    }
    Ok(())
}

/// Sums the unconstrained residual over the top boundary per displacement
/// component. `residual` is the unconstrained residual at a converged state.
pub fn reaction_load(level: &Level, residual: &[f64]) -> (f64, f64) {
    let s = level.dofs.n_scalar;
    let mut load = (0.0, 0.0);
    for d in level.boundary_dofs(BoundaryTag::Top) {
        if d < s {
            load.0 += residual[d];
        } else {
            load.1 += residual[d];
        }
    }
    load
}

/// Same sum over the bottom boundary.
pub fn bottom_reaction(level: &Level, residual: &[f64]) -> (f64, f64) {
    let s = level.dofs.n_scalar;
    let mut load = (0.0, 0.0);
    for d in level.boundary_dofs(BoundaryTag::Bottom) {
        if d < s {
            load.0 += residual[d];
        } else {
            load.1 += residual[d];
        }
    }
    load
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoadRecord {
    pub step: usize,
    pub time: f64,
    pub applied: f64,
    pub load_x: f64,
    pub load_y: f64,
    pub as_iterations: usize,
    pub gmres_total: usize,
    pub active_dofs: usize,
    pub wall_seconds: f64,
}

#[derive(Debug)]
pub struct SimulationResult {
    pub records: Vec<LoadRecord>,
    pub state: LinearizationState,
    /// Largest `φⁿ − φⁿ⁻¹` over all accepted steps and nodes.
    pub max_phase_increase: f64,
    pub phase_min: f64,
    pub phase_max: f64,
    /// Error that stopped the loading loop, if any.
    pub failure: Option<Error>,
    pub warnings: Vec<String>,
}

/// Observer called after every accepted step with the step record and the
/// converged state.
pub trait StepObserver {
    fn on_step(&mut self, level: &Level, record: &LoadRecord, state: &LinearizationState);
}

impl<F: FnMut(&Level, &LoadRecord, &LinearizationState)> StepObserver for F {
    fn on_step(&mut self, level: &Level, record: &LoadRecord, state: &LinearizationState) {
        self(level, record, state)
    }
}

/// Runs the loading program without an observer.
pub fn run_simulation(config: &ScenarioConfig) -> Result<SimulationResult, Error> {
    run_simulation_with(config, &mut |_: &Level, _: &LoadRecord, _: &LinearizationState| {})
}

/// Loading program advanced one step at a time.
pub struct Simulation {
    config: ScenarioConfig,
    hierarchy: MeshHierarchy,
    transfers: TransferSet,
    state: LinearizationState,
    phi_nm1: Vec<f64>,
    phi_nm2: Option<Vec<f64>>,
    step: usize,
    warnings: Vec<String>,
}

impl Simulation {
    /// Validates `config` and builds the mesh hierarchy and the initial
    /// state `u = 0`, `φ ≡ 1`.
    pub fn new(config: ScenarioConfig) -> Result<Self, Error> {
        let warnings = config.validate()?;
        let hierarchy = MeshHierarchy::build(config.level, config.degree)?;
        let transfers = TransferSet::new(&hierarchy, config.multigrid.coarse_level)?;
        let state = LinearizationState::new(hierarchy.finest().dofs.n_scalar, config.material, config.split);
        let phi_nm1 = state.phase().to_vec();
        Ok(Simulation {
            config,
            hierarchy,
            transfers,
            state,
            phi_nm1,
            phi_nm2: None,
            step: 0,
            warnings,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }
    pub fn level(&self) -> &Level {
        self.hierarchy.finest()
    }
    pub fn state(&self) -> &LinearizationState {
        &self.state
    }
    /// Number of accepted steps.
    pub fn steps_done(&self) -> usize {
        self.step
    }
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }
    /// Phase field of the last accepted step.
    pub fn previous_phase(&self) -> &[f64] {
        &self.phi_nm1
    }

    fn stack(&self) -> Result<SolverStack<'_>, Error> {
        let c = &self.config;
        SolverStack::new(&self.hierarchy, &self.transfers, c.multigrid, c.krylov, c.operator, c.active_set)
    }

    /// Solves the next loading step. On failure the state is restored to
    /// the last accepted step.
    pub fn advance(&mut self) -> Result<LoadRecord, Error> {
        let start = Stopwatch::start();
        let step = self.step + 1;
        let c = &self.config;
        let t = step as f64 * c.dt;
        let phi_tilde = if step <= 2 {
            self.phi_nm1.clone()
        } else {
            extrapolate_phase(&self.phi_nm1, self.phi_nm2.as_deref(), t, t - c.dt, t - 2.0 * c.dt)?
        };
        let program = boundary_program(c.scenario, self.hierarchy.finest(), t, c.du);
        let mut state = self.state.clone();
        apply_boundary(&mut state, &program)?;
        state.set_phi_old(&self.phi_nm1)?;
        state.set_phi_tilde(&phi_tilde)?;
        let stack = self.stack()?;
        let report = stack.solve_time_step(&mut state, step)?;
        let residual = stack.residual(&state)?;
        let (load_x, load_y) = reaction_load(self.hierarchy.finest(), &residual);
        let record = LoadRecord {
            step,
            time: t,
            applied: t * c.du,
            load_x,
            load_y,
            as_iterations: report.iterations,
            gmres_total: report.gmres_total(),
            active_dofs: report.final_active(),
            wall_seconds: start.seconds(),
        };
        let phase = state.phase().to_vec();
        self.phi_nm2 = Some(std::mem::replace(&mut self.phi_nm1, phase));
        self.state = state;
        self.step = step;
        Ok(record)
    }
}

/// Runs the loading program. Setup problems are returned as errors; a
/// failing time step ends the loop and is reported in
/// [`SimulationResult::failure`] together with all records so far.
pub fn run_simulation_with(config: &ScenarioConfig, observer: &mut dyn StepObserver) -> Result<SimulationResult, Error> {
    let mut sim = Simulation::new(config.clone())?;
    for w in sim.warnings() {
        log::warn!("{w}");
    }
    let mut csv = match &config.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let mut w = BufWriter::new(File::create(dir.join("loads.csv"))?);
            write_csv_header(&mut w)?;
            w.flush()?;
            Some(w)
        }
        None => None,
    };
    let mut result = SimulationResult {
        records: Vec::with_capacity(config.steps),
        state: sim.state().clone(),
        max_phase_increase: f64::NEG_INFINITY,
        phase_min: 1.0,
        phase_max: 1.0,
        failure: None,
        warnings: sim.warnings().to_vec(),
    };
    while sim.steps_done() < config.steps {
        let before = sim.previous_phase().to_vec();
        let record = match sim.advance() {
            Ok(r) => r,
            Err(e) => {
                log::error!("step {} failed: {e}", sim.steps_done() + 1);
                result.failure = Some(e);
                break;
            }
        };
        let step = record.step;
        for (&now, &old) in sim.state().phase().iter().zip(&before) {
            result.max_phase_increase = result.max_phase_increase.max(now - old);
            result.phase_min = result.phase_min.min(now);
            result.phase_max = result.phase_max.max(now);
        }
        log::info!(
            "step {step} u {:.4e} load ({:.6e}, {:.6e}) as {} gmres {} active {} ({:.2} s)",
            record.applied,
            record.load_x,
            record.load_y,
            record.as_iterations,
            record.gmres_total,
            record.active_dofs,
            record.wall_seconds
        );
        if let Some(w) = csv.as_mut() {
            write_csv_row(w, &record)?;
            w.flush()?;
        }
        if let Some(dir) = &config.out_dir {
            if config.vtk_every > 0 && (step % config.vtk_every == 0 || step == config.steps) {
                let f = BufWriter::new(File::create(dir.join(format!("solution_{step:05}.vtk")))?);
                write_vtk(f, sim.level(), sim.state().solution())?;
            }
        }
        observer.on_step(sim.level(), &record, sim.state());
        result.records.push(record);
    }
    if result.records.is_empty() {
        result.max_phase_increase = 0.0;
    }
    result.state = sim.state().clone();
    Ok(result)
}
