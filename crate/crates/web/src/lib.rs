//! WebAssembly bindings for the browser demo: strain split explorer,
//! shape-function plots and a small tension simulation.

use fracturekit::basis::{lagrange_values, support_points};
use fracturekit::driver::{Scenario, ScenarioConfig, Simulation};
use fracturekit::lanes::LaneWidth;
use fracturekit::material::{MaterialParams, SplitMode, SplitPoint, SymTensor};
use fracturekit::operator::{CacheMode, OperatorOptions};
use wasm_bindgen::prelude::*;

fn js_error(e: fracturekit::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Splits the plane strain `[[exx, exy], [exy, eyy]]` with the default
/// material. Returns `[E⁺, E⁻, σ⁺xx, σ⁺yy, σ⁺xy, σ⁻xx, σ⁻yy, σ⁻xy, e₁, e₂]`
/// with principal strains in descending order.
#[wasm_bindgen]
pub fn split_strain(exx: f64, eyy: f64, exy: f64, split: &str) -> Result<Vec<f64>, JsError> {
    split_values(exx, eyy, exy, split).map_err(js_error)
}

pub fn split_values(exx: f64, eyy: f64, exy: f64, split: &str) -> Result<Vec<f64>, fracturekit::Error> {
    let mode: SplitMode = split.parse()?;
    let p = MaterialParams::default();
    let e = SymTensor::<f64, 2>::from_full([[exx, exy], [exy, eyy]]);
    let pt = SplitPoint::new(e, mode);
    let sp = pt.stress_plus(&p);
    let sm = pt.stress_minus(&p);
    let eig = e.eigensystem();
    Ok(vec![
        pt.energy_plus(&p),
        pt.energy_minus(&p),
        sp.get(0, 0),
        sp.get(1, 1),
        sp.get(0, 1),
        sm.get(0, 0),
        sm.get(1, 1),
        sm.get(0, 1),
        eig.values[0],
        eig.values[1],
    ])
}

/// 1D Lagrange shape functions of `degree` on `samples` equispaced points
/// of `[0, 1]`, row-major by function.
#[wasm_bindgen]
pub fn shape_functions(degree: usize, samples: usize) -> Result<Vec<f64>, JsError> {
    shape_table(degree, samples).map_err(js_error)
}

pub fn shape_table(degree: usize, samples: usize) -> Result<Vec<f64>, fracturekit::Error> {
    if !(1..=4).contains(&degree) || samples < 2 {
        return Err(fracturekit::Error::Config(
            "degree must lie in 1..=4 and samples be at least 2".into(),
        ));
    }
    let nodes = support_points(degree);
    let mut out = vec![0.0; nodes.len() * samples];
    for k in 0..samples {
        let x = k as f64 / (samples - 1) as f64;
        for (j, v) in lagrange_values(&nodes, x).into_iter().enumerate() {
            out[j * samples + k] = v;
        }
    }
    Ok(out)
}

/// Support points of the 1D shape functions.
#[wasm_bindgen]
pub fn shape_nodes(degree: usize) -> Vec<f64> {
    support_points(degree.clamp(1, 4))
}

/// Tension test on a coarse mesh, advanced step by step.
#[wasm_bindgen]
pub struct TensionDemo {
    sim: Simulation,
    loads: Vec<f64>,
    applied: Vec<f64>,
}

#[wasm_bindgen]
impl TensionDemo {
    /// `du` is the displacement increment per step (mm).
    #[wasm_bindgen(constructor)]
    pub fn new(level: usize, degree: usize, split: &str, eps: f64, du: f64) -> Result<TensionDemo, JsError> {
        Self::build(level, degree, split, eps, du).map_err(js_error)
    }

    fn build(level: usize, degree: usize, split: &str, eps: f64, du: f64) -> Result<TensionDemo, fracturekit::Error> {
        let mut config = ScenarioConfig::new(Scenario::Tension, level, degree, split.parse()?);
        config.material.eps = eps;
        config.du = du;
        config.steps = usize::MAX;
        config.vtk_every = 0;
        config.operator = OperatorOptions {
            cache: CacheMode::Tangent,
            lanes: LaneWidth::W1,
            workers: 1,
        };
        Ok(TensionDemo {
            sim: Simulation::new(config)?,
            loads: Vec::new(),
            applied: Vec::new(),
        })
    }

    /// Solves the next step and returns the reaction load (kN).
    pub fn step(&mut self) -> Result<f64, JsError> {
        self.advance().map_err(js_error)
    }

    fn advance(&mut self) -> Result<f64, fracturekit::Error> {
        let r = self.sim.advance()?;
        self.loads.push(r.load_y);
        self.applied.push(r.applied);
        Ok(r.load_y)
    }

    pub fn steps_done(&self) -> usize {
        self.sim.steps_done()
    }

    pub fn loads(&self) -> Vec<f64> {
        self.loads.clone()
    }

    pub fn applied(&self) -> Vec<f64> {
        self.applied.clone()
    }

    /// Phase field per node.
    pub fn phase(&self) -> Vec<f64> {
        self.sim.state().phase().to_vec()
    }

    /// Displacement per node, `[ux..., uy...]`.
    pub fn displacement(&self) -> Vec<f64> {
        let s = self.sim.state().n_scalar();
        self.sim.state().solution()[..2 * s].to_vec()
    }

    /// Node coordinates, interleaved `x, y`.
    pub fn coordinates(&self) -> Vec<f64> {
        self.sim.level().dofs.node_coords.iter().flat_map(|c| [c[0], c[1]]).collect()
    }

    /// Quads through the nodes (four ids each, counter-clockwise). Cells of
    /// degree `p` are split into `p × p` quads.
    pub fn quads(&self) -> Vec<u32> {
        let level = self.sim.level();
        let p = level.dofs.degree;
        let mut out = Vec::new();
        for c in 0..level.mesh.n_cells() {
            let n = level.dofs.cell_nodes(c);
            for j in 0..p {
                for i in 0..p {
                    let at = |a: usize, b: usize| n[b * (p + 1) + a];
                    out.extend([at(i, j), at(i + 1, j), at(i + 1, j + 1), at(i, j + 1)]);
                }
            }
        }
        out
    }
}
