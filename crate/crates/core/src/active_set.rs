//! Primal-dual active-set iteration enforcing `φⁿ ≤ φⁿ⁻¹`.

use crate::clock::Stopwatch;

use crate::basis::{integrate_on_cell, ShapeData};
use crate::krylov::{gmres_solve, KrylovConfig};
use crate::mesh::{Level, MeshHierarchy};
use crate::multigrid::{Multigrid, MultigridConfig, TransferSet};
use crate::operator::{norm, CacheMode, LinearizationState, OperatorOptions, PffOperator};
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActiveSetParams {
    /// Complementarity weight `c`.
    pub c: f64,
    /// Tolerance on `‖R̃_k‖ / ‖R̃_0‖`.
    pub tol: f64,
    pub max_iterations: usize,
}

impl Default for ActiveSetParams {
    fn default() -> Self {
        ActiveSetParams {
            c: 100.0,
            tol: 1e-8,
            max_iterations: 50,
        }
    }
}

/// Indicator values below this multiple of `c` count as zero.
pub const INDICATOR_FLOOR: f64 = 1e-12;

/// Row sums of the phase-field mass matrix, `∫ψ_i`.
pub fn lumped_mass_diagonal(level: &Level) -> Result<Vec<f64>, Error> {
    let sd = ShapeData::new(level.dofs.degree)?;
    let ones = vec![1.0; sd.q_per_cell()];
    let mut m = vec![0.0; level.dofs.n_scalar];
    for c in 0..level.mesh.n_cells() {
        let local = integrate_on_cell(&sd, Some(&ones), None, level.mesh.h)?;
        for (&n, v) in level.dofs.cell_nodes(c).iter().zip(&local) {
            m[n as usize] += v;
        }
    }
    if let Some((node, &value)) = m.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
        return Err(Error::NonPositiveMass { node, value });
    }
    Ok(m)
}

/// Phase-field nodes with `(M⁻¹ r)_i + c (φ − φ_old)_i > 0`, where `r` is
/// the Newton right-hand side `−R` (full vector) and `phi`, `phi_old`,
/// `mass` are per phase-field node. Nodes whose indicator lies within
/// `INDICATOR_FLOOR · c` of zero keep their `previous` status.
pub fn determine_active_set(
    r: &[f64],
    phi: &[f64],
    phi_old: &[f64],
    mass: &[f64],
    c: f64,
    previous: Option<&[bool]>,
) -> Vec<bool> {
    let s = phi.len();
    let r_phi = &r[r.len() - s..];
    let floor = INDICATOR_FLOOR * c;
    (0..s)
        .map(|i| {
            let v = r_phi[i] / mass[i] + c * (phi[i] - phi_old[i]);
            if v.abs() <= floor {
                previous.map_or(false, |p| p[i])
            } else {
                v > 0.0
            }
        })
        .collect()
}

/// Stopping test: unchanged active set and small relative residual.
pub fn converged(current: &[bool], previous: Option<&[bool]>, residual: f64, reference: f64, tol: f64) -> bool {
    match previous {
        Some(prev) => prev == current && residual <= tol * reference,
        None => false,
    }
}

/// Counters of one time step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub gmres_iterations: Vec<usize>,
    pub active_counts: Vec<usize>,
    pub residual_history: Vec<f64>,
    pub final_residual: f64,
}

impl SolveReport {
    pub fn gmres_total(&self) -> usize {
        self.gmres_iterations.iter().sum()
    }
    pub fn final_active(&self) -> usize {
        self.active_counts.last().copied().unwrap_or(0)
    }
}

/// Everything the time-step solve needs besides the state.
pub struct SolverStack<'a> {
    pub hierarchy: &'a MeshHierarchy,
    pub transfers: &'a TransferSet,
    pub multigrid: MultigridConfig,
    pub krylov: KrylovConfig,
    pub operator: OperatorOptions,
    pub active_set: ActiveSetParams,
    pub mass: Vec<f64>,
}

impl<'a> SolverStack<'a> {
    pub fn new(
        hierarchy: &'a MeshHierarchy,
        transfers: &'a TransferSet,
        multigrid: MultigridConfig,
        krylov: KrylovConfig,
        operator: OperatorOptions,
        active_set: ActiveSetParams,
    ) -> Result<Self, Error> {
        let mass = lumped_mass_diagonal(hierarchy.finest())?;
        Ok(SolverStack {
            hierarchy,
            transfers,
            multigrid,
            krylov,
            operator,
            active_set,
            mass,
        })
    }

    fn residual_operator(&self, state: &LinearizationState) -> Result<PffOperator<'a>, Error> {
        let opts = OperatorOptions {
            cache: CacheMode::OnTheFly,
            ..self.operator
        };
        PffOperator::new(self.hierarchy.finest(), state.clone(), opts)
    }

    /// Unconstrained residual at `state`.
    pub fn residual(&self, state: &LinearizationState) -> Result<Vec<f64>, Error> {
        Ok(self.residual_operator(state)?.residual_unconstrained())
    }

    /// Runs the active-set loop for one time step. `state` carries the
    /// Dirichlet values, `φ̃` and `φ_old` of the step and is updated in
    /// place.
    pub fn solve_time_step(&self, state: &mut LinearizationState, step: usize) -> Result<SolveReport, Error> {
        let mut report = SolveReport::default();
        let mut previous: Option<Vec<bool>> = None;
        let mut reference = 0.0;
        let s = state.n_scalar();
        loop {
            let start = Stopwatch::start();
            let r = self.residual(state)?;
            let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
            let active = determine_active_set(&rhs, state.phase(), state.phi_old(), &self.mass, self.active_set.c, previous.as_deref());
            state.set_active_mask(&active)?;
            {
                let phi_old = state.phi_old().to_vec();
                let sol = state.solution_mut();
                for (i, &a) in active.iter().enumerate() {
                    if a {
                        sol[2 * s + i] = phi_old[i];
                    }
                }
            }
            let op = self.residual_operator(state)?;
            let mut r_tilde = op.residual();
            let res_norm = norm(&r_tilde);
            if report.iterations == 0 {
                reference = res_norm;
            }
            report.residual_history.push(res_norm);
            report.final_residual = res_norm;
            let n_active = active.iter().filter(|&&a| a).count();
            if converged(&active, previous.as_deref(), res_norm, reference, self.active_set.tol) {
                report.active_counts.push(n_active);
                break;
            }
            if report.iterations >= self.active_set.max_iterations {
                return Err(Error::StepFailed {
                    step,
                    reason: format!(
                        "active set did not settle in {} iterations (relative residual {:.3e})",
                        report.iterations,
                        res_norm / reference.max(f64::MIN_POSITIVE)
                    ),
                });
            }
            r_tilde.iter_mut().for_each(|v| *v = -*v);
            let mg = Multigrid::build(self.hierarchy, self.transfers, state.clone(), self.multigrid, self.operator)?;
            let mut result = gmres_solve(mg.fine(), &mg, &r_tilde, None, &self.krylov)?;
            let mut its = result.iterations;
            if !result.converged {
                let retry = KrylovConfig {
                    max_iterations: 2 * self.krylov.max_iterations,
                    ..self.krylov
                };
                result = gmres_solve(mg.fine(), &mg, &r_tilde, None, &retry)?;
                its += result.iterations;
                if !result.converged {
                    return Err(Error::LinearSolver {
                        iterations: its,
                        residual: result.final_residual(),
                    });
                }
            }
            for (u, d) in state.solution_mut().iter_mut().zip(&result.solution) {
                *u += d;
            }
            report.iterations += 1;
            report.gmres_iterations.push(its);
            report.active_counts.push(n_active);
            log::info!(
                "step {step} as-iter {} active {n_active} gmres {its} residual {res_norm:.3e} ({:.2} s)",
                report.iterations,
                start.seconds()
            );
            previous = Some(active);
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lanes::LaneWidth;
    use crate::material::{MaterialParams, SplitMode};
    use crate::mesh::BoundaryTag;

    #[test]
    fn lumped_mass_examples() {
        let h = MeshHierarchy::build(3, 1).unwrap();
        let m2 = lumped_mass_diagonal(&h.levels[2]).unwrap();
        let m3 = lumped_mass_diagonal(&h.levels[3]).unwrap();
        assert!((m2.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        // interior node (1,1) of the 5×5 grid
        assert!((m2[6] - 1.0 / 16.0).abs() < 1e-15);
        // node (2,2) at level 3 sits at the same point as (1,1) at level 2
        assert!((m3[2 * 9 + 2] - m2[6] / 4.0).abs() < 1e-15);
        for p in 2..=4 {
            let h = MeshHierarchy::build(2, p).unwrap();
            let m = lumped_mass_diagonal(h.finest()).unwrap();
            assert!(m.iter().all(|&v| v > 0.0));
            assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn active_set_examples() {
        let s = 3;
        let zero = vec![0.0; 3 * s];
        let phi = vec![1.0; s];
        assert!(determine_active_set(&zero, &phi, &phi, &[1.0; 3], 100.0, None).iter().all(|&a| !a));
        let mut r = zero.clone();
        r[2 * s + 1] = 1.0;
        // displacement entries never enter
        r[0] = 1e9;
        let a = determine_active_set(&r, &phi, &phi, &[1.0; 3], 100.0, None);
        assert_eq!(a, vec![false, true, false]);
        // indicators at roundoff level keep the previous status
        r[2 * s + 1] = 1e-13;
        let b = determine_active_set(&r, &phi, &phi, &[1.0; 3], 100.0, Some(&[true, true, false]));
        assert_eq!(b, vec![true, true, false]);
    }

    #[test]
    fn convergence_examples() {
        let a = vec![true, false];
        assert!(!converged(&a, None, 0.0, 1.0, 1e-8));
        assert!(converged(&a, Some(&a), 0.0, 1.0, 1e-8));
        assert!(!converged(&a, Some(&a), 1e-7, 1.0, 1e-8));
        assert!(!converged(&a, Some(&[false, false]), 0.0, 1.0, 1e-8));
    }

    fn stack<'a>(h: &'a MeshHierarchy, t: &'a TransferSet, lin_tol: f64) -> SolverStack<'a> {
        SolverStack::new(
            h,
            t,
            MultigridConfig::default(),
            KrylovConfig {
                rel_tol: lin_tol,
                ..Default::default()
            },
            OperatorOptions {
                cache: CacheMode::Tangent,
                lanes: LaneWidth::W4,
                workers: 1,
            },
            ActiveSetParams::default(),
        )
        .unwrap()
    }

    fn tension(level: &Level, split: SplitMode, du: f64) -> LinearizationState {
        let s = level.dofs.n_scalar;
        let mut st = LinearizationState::new(s, MaterialParams::default(), split);
        let mut dir = vec![false; 3 * s];
        let mut sol = st.solution().to_vec();
        for d in level.boundary_dofs(BoundaryTag::Bottom) {
            dir[d] = true;
        }
        for d in level.boundary_dofs(BoundaryTag::Top) {
            dir[d] = true;
            if d >= s {
                sol[d] = du;
            }
        }
        st.set_solution(&sol).unwrap();
        st.set_dirichlet_mask(&dir).unwrap();
        st
    }

    #[test]
    fn linear_problem_converges_in_one_newton_step() {
        let h = MeshHierarchy::build(3, 1).unwrap();
        let t = TransferSet::new(&h, 2).unwrap();
        let st = stack(&h, &t, 1e-12);
        // a tiny load leaves the coupling negligible, so one Newton step suffices
        let mut state = tension(h.finest(), SplitMode::Isotropic, 1e-9);
        let report = st.solve_time_step(&mut state, 1).unwrap();
        assert_eq!(report.iterations, 1, "{report:?}");
        assert!(report.final_residual <= 1e-8 * report.residual_history[0]);
    }

    #[test]
    fn first_tension_step_settles_quickly() {
        let h = MeshHierarchy::build(4, 1).unwrap();
        let t = TransferSet::new(&h, 2).unwrap();
        let st = stack(&h, &t, 1e-6);
        let mut state = tension(h.finest(), SplitMode::Miehe, 1e-5);
        let report = st.solve_time_step(&mut state, 1).unwrap();
        assert!(report.iterations <= 10, "{report:?}");
        let s = state.n_scalar();
        for i in 0..s {
            assert!(state.phase()[i] <= state.phi_old()[i] + 1e-10);
        }
    }
}
