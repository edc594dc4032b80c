//! Compressed sparse row matrices and the assembled reference path for the
//! Jacobian and residual.

use crate::clock::Stopwatch;

use crate::basis::DenseTabulation;
use crate::material::{degradation, degradation_d1, SplitPoint, SymTensor};
use crate::mesh::{Level, N_COMPONENTS};
use crate::operator::{point_tangent, PffOperator};
use crate::Error;

/// CSR matrix with 32-bit column indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Csr {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<u32>,
    pub values: Vec<f64>,
}

impl Csr {
    /// Builds from per-row sorted `(column, value)` lists.
    pub fn from_rows(n_cols: usize, rows: Vec<Vec<(u32, f64)>>) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        row_ptr.push(0);
        let nnz: usize = rows.iter().map(|r| r.len()).sum();
        let mut col_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        for r in &rows {
            for &(c, v) in r {
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Csr {
            n_rows: rows.len(),
            n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().zip(&self.values[r]).map(|(&c, &v)| (c as usize, v))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&(j as u32)) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    /// `y = A x`
    pub fn spmv(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n_rows) {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k] as usize];
            }
            *yi = s;
        }
    }

    /// `y = Aᵀ x`
    pub fn spmv_transpose(&self, x: &[f64], y: &mut [f64]) {
        y.fill(0.0);
        for (i, &xi) in x.iter().enumerate().take(self.n_rows) {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                y[self.col_idx[k] as usize] += self.values[k] * xi;
            }
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.get(i, i)).collect()
    }

    /// Values (8 bytes), column indices (4 bytes) and row offsets (8 bytes).
    pub fn memory_bytes(&self) -> usize {
        csr_bytes(self.n_rows, self.nnz())
    }
}

pub fn csr_bytes(n_rows: usize, nnz: usize) -> usize {
    nnz * (8 + 4) + (n_rows + 1) * 8
}

/// Scalar node neighbourhoods (nodes sharing a cell), sorted.
pub fn node_neighbours(level: &Level) -> Vec<Vec<u32>> {
    let d = &level.dofs;
    let mut nb: Vec<Vec<u32>> = vec![Vec::new(); d.n_scalar];
    for c in 0..level.mesh.n_cells() {
        let nodes = d.cell_nodes(c);
        for &a in nodes {
            nb[a as usize].extend_from_slice(nodes);
        }
    }
    for v in nb.iter_mut() {
        v.sort_unstable();
        v.dedup();
    }
    nb
}

/// Nonzeros of the assembled Jacobian (all nine component blocks stored)
/// without building the matrix.
pub fn jacobian_nnz(level: &Level) -> usize {
    let nb = node_neighbours(level);
    N_COMPONENTS * N_COMPONENTS * nb.iter().map(|v| v.len()).sum::<usize>()
}

/// Assembled Jacobian at an operator's linearization point.
#[derive(Clone, Debug)]
pub struct SparseOracle {
    pub matrix: Csr,
    pub assembly_seconds: f64,
}

impl SparseOracle {
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matrix.spmv(x, y)
    }
}

/// State values at the quadrature points of one cell through the dense
/// tabulation.
struct DenseCell {
    grads: [[Vec<f64>; 2]; 3],
    phi: Vec<f64>,
    phi_tilde: Vec<f64>,
}

fn dense_cell(op: &PffOperator, tab: &DenseTabulation, cell: usize) -> DenseCell {
    let level = op.level();
    let st = op.state();
    let s = st.n_scalar();
    let h = level.mesh.h;
    let nodes = level.dofs.cell_nodes(cell);
    let nd = tab.n_dofs;
    let eval = |data: &[f64], m: &[f64], scale: f64| -> Vec<f64> {
        (0..tab.n_q)
            .map(|q| (0..nd).map(|j| m[q * nd + j] * data[nodes[j] as usize]).sum::<f64>() * scale)
            .collect()
    };
    let sol = st.solution();
    let grads = [0, 1, 2].map(|c| {
        let data = &sol[c * s..(c + 1) * s];
        [eval(data, &tab.d_xi, 1.0 / h), eval(data, &tab.d_eta, 1.0 / h)]
    });
    DenseCell {
        grads,
        phi: eval(&sol[2 * s..], &tab.values, 1.0),
        phi_tilde: eval(st.phi_tilde(), &tab.values, 1.0),
    }
}

fn cell_strain(dc: &DenseCell, q: usize) -> SymTensor<f64, 2> {
    let mut e = SymTensor::zero();
    e.set(0, 0, dc.grads[0][0][q]);
    e.set(1, 1, dc.grads[1][1][q]);
    e.set(0, 1, 0.5 * (dc.grads[0][1][q] + dc.grads[1][0][q]));
    e
}

/// Assembles the Jacobian into CSR by dense cell matrices. Constrained
/// rows and columns become identity rows and columns.
pub fn assemble_oracle(op: &PffOperator) -> Result<SparseOracle, Error> {
    let start = Stopwatch::start();
    let level = op.level();
    let st = op.state();
    let p = st.params;
    let s = st.n_scalar();
    let n = st.n_dofs();
    let h = level.mesh.h;
    let sd = op.shape();
    let tab = DenseTabulation::new(sd);
    let nd = tab.n_dofs;
    let weights = sd.weights_2d();

    let nb = node_neighbours(level);
    let row_len: usize = nb.iter().map(|v| v.len()).sum::<usize>() * N_COMPONENTS * N_COMPONENTS;
    let mut values: Vec<f64> = Vec::new();
    values
        .try_reserve_exact(row_len)
        .map_err(|_| Error::Resource(format!("cannot allocate {row_len} matrix entries")))?;
    values.resize(row_len, 0.0);
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx: Vec<u32> = Vec::with_capacity(row_len);
    row_ptr.push(0);
    for _comp in 0..N_COMPONENTS {
        for node in nb.iter() {
            for c2 in 0..N_COMPONENTS {
                col_idx.extend(node.iter().map(|&m| (c2 * s) as u32 + m));
            }
            row_ptr.push(col_idx.len());
        }
    }
    let mut matrix = Csr {
        n_rows: n,
        n_cols: n,
        row_ptr,
        col_idx,
        values,
    };
    let find = |m: &Csr, i: usize, j: usize| -> usize {
        let r = m.row_ptr[i]..m.row_ptr[i + 1];
        r.start + m.col_idx[r].binary_search(&(j as u32)).expect("entry in pattern")
    };

    let mut local = vec![0.0; (3 * nd) * (3 * nd)];
    for cell in 0..level.mesh.n_cells() {
        let dc = dense_cell(op, &tab, cell);
        local.fill(0.0);
        for q in 0..tab.n_q {
            let jxw = weights[q] * h * h;
            let t = point_tangent(&cell_strain(&dc, q), dc.phi[q], dc.phi_tilde[q], &p, st.split);
            for j in 0..nd {
                let vj = tab.values[q * nd + j];
                let xj = tab.d_xi[q * nd + j] / h;
                let yj = tab.d_eta[q * nd + j] / h;
                // trial strains of u_x and u_y basis functions
                let trial = [[xj, 0.0, 0.5 * yj], [0.0, yj, 0.5 * xj]];
                for i in 0..nd {
                    let vi = tab.values[q * nd + i];
                    let xi = tab.d_xi[q * nd + i] / h;
                    let yi = tab.d_eta[q * nd + i] / h;
                    let test = [[xi, 0.0, 0.5 * yi], [0.0, yi, 0.5 * xi]];
                    for (cj, de) in trial.iter().enumerate() {
                        let ds = [
                            t.uu[0][0] * de[0] + t.uu[0][1] * de[1] + t.uu[0][2] * de[2],
                            t.uu[1][0] * de[0] + t.uu[1][1] * de[1] + t.uu[1][2] * de[2],
                            t.uu[2][0] * de[0] + t.uu[2][1] * de[1] + t.uu[2][2] * de[2],
                        ];
                        for (ci, ew) in test.iter().enumerate() {
                            let v = ds[0] * ew[0] + ds[1] * ew[1] + 2.0 * ds[2] * ew[2];
                            local[(ci * nd + i) * 3 * nd + cj * nd + j] += v * jxw;
                        }
                        let coupling = t.coupling[0] * de[0] + t.coupling[1] * de[1] + 2.0 * t.coupling[2] * de[2];
                        local[(2 * nd + i) * 3 * nd + cj * nd + j] += coupling * vi * jxw;
                    }
                    let pp = t.reaction * vj * vi + p.gc * p.eps * (xj * xi + yj * yi);
                    local[(2 * nd + i) * 3 * nd + 2 * nd + j] += pp * jxw;
                }
            }
        }
        let nodes = level.dofs.cell_nodes(cell);
        for ci in 0..3 {
            for i in 0..nd {
                let gi = ci * s + nodes[i] as usize;
                for cj in 0..3 {
                    for j in 0..nd {
                        let gj = cj * s + nodes[j] as usize;
                        let k = find(&matrix, gi, gj);
                        matrix.values[k] += local[(ci * nd + i) * 3 * nd + cj * nd + j];
                    }
                }
            }
        }
    }
    let constrained = st.constrained_mask();
    for i in 0..n {
        for k in matrix.row_ptr[i]..matrix.row_ptr[i + 1] {
            let j = matrix.col_idx[k] as usize;
            if constrained[i] || constrained[j] {
                matrix.values[k] = if i == j { 1.0 } else { 0.0 };
            }
        }
    }
    Ok(SparseOracle {
        matrix,
        assembly_seconds: start.seconds(),
    })
}

/// Unconstrained residual through the dense tabulation.
pub fn assembled_residual(op: &PffOperator) -> Vec<f64> {
    let level = op.level();
    let st = op.state();
    let p = st.params;
    let s = st.n_scalar();
    let h = level.mesh.h;
    let sd = op.shape();
    let tab = DenseTabulation::new(sd);
    let nd = tab.n_dofs;
    let weights = sd.weights_2d();
    let mut out = vec![0.0; st.n_dofs()];
    for cell in 0..level.mesh.n_cells() {
        let dc = dense_cell(op, &tab, cell);
        let nodes = level.dofs.cell_nodes(cell);
        for q in 0..tab.n_q {
            let jxw = weights[q] * h * h;
            let sp = SplitPoint::new(cell_strain(&dc, q), st.split);
            let g = degradation(dc.phi_tilde[q], p.kappa);
            let sig = sp.stress_plus(&p).scale(g).add(&sp.stress_minus(&p));
            let phi_val = degradation_d1(dc.phi[q], p.kappa) * sp.energy_plus(&p) - p.gc / p.eps * (1.0 - dc.phi[q]);
            let (px, py) = (dc.grads[2][0][q], dc.grads[2][1][q]);
            for i in 0..nd {
                let vi = tab.values[q * nd + i];
                let xi = tab.d_xi[q * nd + i] / h;
                let yi = tab.d_eta[q * nd + i] / h;
                let node = nodes[i] as usize;
                out[node] += (sig.get(0, 0) * xi + sig.get(0, 1) * yi) * jxw;
                out[s + node] += (sig.get(0, 1) * xi + sig.get(1, 1) * yi) * jxw;
                out[2 * s + node] += (phi_val * vi + p.gc * p.eps * (px * xi + py * yi)) * jxw;
            }
        }
    }
    out
}
