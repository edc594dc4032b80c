mod common;

use common::{first_step_state, options, rel};
use fracturekit::driver::{Scenario, ScenarioConfig, Simulation};
use fracturekit::krylov::{gmres_solve, JacobiPreconditioner, KrylovConfig};
use fracturekit::material::SplitMode;
use fracturekit::mesh::MeshHierarchy;
use fracturekit::multigrid::{Multigrid, MultigridConfig, TransferSet};
use fracturekit::operator::{norm, CacheMode, PffOperator};
use fracturekit::sparse::assemble_oracle;

fn tight() -> KrylovConfig {
    KrylovConfig {
        rel_tol: 1e-12,
        max_iterations: 5000,
        restart: 200,
        ..KrylovConfig::default()
    }
}

#[test]
fn matrix_free_and_assembled_solves_agree() {
    for split in [SplitMode::Isotropic, SplitMode::Miehe] {
        let h = MeshHierarchy::build(3, 2).unwrap();
        let t = TransferSet::new(&h, 2).unwrap();
        let st = first_step_state(h.finest(), Scenario::Shear, split, 1e-4);
        let mg = Multigrid::build(&h, &t, st, MultigridConfig::default(), options(CacheMode::Tangent, 4)).unwrap();
        let rhs: Vec<f64> = mg.fine().residual().iter().map(|v| -v).collect();
        let mf = gmres_solve(mg.fine(), &mg, &rhs, None, &tight()).unwrap();
        let oracle = assemble_oracle(mg.fine()).unwrap();
        let jacobi = JacobiPreconditioner::new(&oracle.matrix.diagonal());
        let sp = gmres_solve(&oracle.matrix, &jacobi, &rhs, None, &tight()).unwrap();
        assert!(mf.converged && sp.converged);
        let err = rel(&mf.solution, &sp.solution);
        assert!(err <= 1e-8, "{split:?}: {err}");
    }
}

#[test]
fn v_cycle_contracts_as_stationary_iteration() {
    let h = MeshHierarchy::build(4, 1).unwrap();
    let t = TransferSet::new(&h, 2).unwrap();
    let st = first_step_state(h.finest(), Scenario::Tension, SplitMode::Miehe, 1e-5);
    let mg = Multigrid::build(&h, &t, st, MultigridConfig::default(), options(CacheMode::Tangent, 4)).unwrap();
    let op = mg.fine();
    let b: Vec<f64> = op.residual().iter().map(|v| -v).collect();
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut ax = vec![0.0; n];
    let mut history = vec![norm(&b)];
    for _ in 0..8 {
        op.apply_jacobian(&x, &mut ax).unwrap();
        let r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let z = mg.v_cycle(&r).unwrap();
        x.iter_mut().zip(&z).for_each(|(x, z)| *x += z);
        op.apply_jacobian(&x, &mut ax).unwrap();
        history.push(norm(&b.iter().zip(&ax).map(|(b, a)| b - a).collect::<Vec<_>>()));
    }
    let rate = (history[8] / history[0]).powf(1.0 / 8.0);
    println!("V-cycle residual history {history:?}, mean rate {rate:.3}");
    assert!(rate < 0.9, "rate {rate}");
    assert!(history[8] < history[0] / 5.0);
}

#[test]
fn converged_steps_satisfy_complementarity() {
    let mut config = ScenarioConfig::new(Scenario::Shear, 3, 1, SplitMode::Miehe);
    config.material.eps = 0.1;
    config.du = 5e-3;
    config.steps = 10;
    config.krylov.rel_tol = 1e-10;
    config.active_set.tol = 1e-11;
    let mut sim = Simulation::new(config).unwrap();
    let mut saw_active = false;
    for _ in 0..10 {
        let rec = sim.advance().unwrap();
        let st = sim.state();
        let s = st.n_scalar();
        let r = PffOperator::new(sim.level(), st.clone(), options(CacheMode::OnTheFly, 1))
            .unwrap()
            .residual_unconstrained();
        // nodal size of the crack-surface term
        let scale = st.params.gc / st.params.eps * sim.level().mesh.h.powi(2);
        saw_active |= rec.active_dofs > 0;
        for i in 0..s {
            let (phi, old) = (st.phase()[i], st.phi_old()[i]);
            assert!(phi <= old + 1e-10, "node {i}: {phi} > {old}");
            if st.active_mask()[i] {
                assert_eq!(phi, old);
                assert!(-r[2 * s + i] >= -1e-6 * scale, "multiplier sign at {i}");
            } else {
                assert!(r[2 * s + i].abs() <= 1e-6 * scale, "free residual at {i}: {}", r[2 * s + i]);
            }
        }
    }
    assert!(saw_active, "no active constraints appeared");
}
