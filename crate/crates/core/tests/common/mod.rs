#![allow(dead_code)]

use fracturekit::driver::{apply_boundary, boundary_program, Scenario};
use fracturekit::lanes::LaneWidth;
use fracturekit::material::{MaterialParams, SplitMode};
use fracturekit::mesh::{BoundaryTag, Level};
use fracturekit::operator::{norm, CacheMode, LinearizationState, OperatorOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn rel(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&d) / norm(b).max(1e-300)
}

pub fn options(cache: CacheMode, lanes: usize) -> OperatorOptions {
    OperatorOptions {
        cache,
        lanes: LaneWidth::from_lanes(lanes).expect("supported lane width"),
        workers: 1,
    }
}

/// Random state with clamped top and bottom and a random active set.
pub fn random_state(level: &Level, split: SplitMode, seed: u64, active_fraction: f64) -> LinearizationState {
    let mut rng = rng(seed);
    let s = level.dofs.n_scalar;
    let mut st = LinearizationState::new(s, MaterialParams::default(), split);
    let sol: Vec<f64> = (0..3 * s)
        .map(|i| if i < 2 * s { 1e-3 * rng.gen_range(-1.0..1.0) } else { rng.gen_range(0.2..1.0) })
        .collect();
    st.set_solution(&sol).unwrap();
    let pt: Vec<f64> = (0..s).map(|_| rng.gen_range(0.0..1.0)).collect();
    st.set_phi_tilde(&pt).unwrap();
    let mut dir = vec![false; 3 * s];
    for tag in [BoundaryTag::Top, BoundaryTag::Bottom] {
        for d in level.boundary_dofs(tag) {
            dir[d] = true;
        }
    }
    st.set_dirichlet_mask(&dir).unwrap();
    let act: Vec<bool> = (0..s).map(|_| rng.gen_bool(active_fraction)).collect();
    st.set_active_mask(&act).unwrap();
    st
}

/// Smooth state: low-frequency displacement and phase fields.
pub fn smooth_state(level: &Level, split: SplitMode, seed: u64) -> LinearizationState {
    let mut rng = rng(seed);
    let s = level.dofs.n_scalar;
    let mut st = LinearizationState::new(s, MaterialParams::default(), split);
    let k: Vec<f64> = (0..8).map(|_| rng.gen_range(0.5..3.0)).collect();
    let mut sol = vec![0.0; 3 * s];
    for (i, c) in level.dofs.node_coords.iter().enumerate() {
        let (x, y) = (c[0], c[1]);
        sol[i] = 1e-3 * ((k[0] * x).sin() + (k[1] * y).cos() * x);
        sol[s + i] = 1e-3 * ((k[2] * y).sin() - (k[3] * x * y).cos());
        sol[2 * s + i] = 0.6 + 0.3 * (k[4] * x + k[5] * y).sin();
    }
    st.set_solution(&sol).unwrap();
    let pt: Vec<f64> = level
        .dofs
        .node_coords
        .iter()
        .map(|c| 0.5 + 0.4 * (k[6] * c[0] - k[7] * c[1]).cos())
        .collect();
    st.set_phi_tilde(&pt).unwrap();
    st
}

/// State of the first loading step of a scenario.
pub fn first_step_state(level: &Level, scenario: Scenario, split: SplitMode, du: f64) -> LinearizationState {
    let s = level.dofs.n_scalar;
    let mut st = LinearizationState::new(s, MaterialParams::default(), split);
    apply_boundary(&mut st, &boundary_program(scenario, level, 1.0, du)).unwrap();
    st
}
