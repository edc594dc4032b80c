//! Nonlinear residual and matrix-free Jacobian of the coupled
//! displacement / phase-field system on one mesh level.

use std::sync::Arc;

use rayon::prelude::*;

use crate::basis::{integrate_add, interpolate, interpolate_gradient, ShapeData, MAX_CELL_POINTS};
use crate::lanes::{batches, ElementBatch, LaneWidth, Lanes, Real};
use crate::material::{degradation, degradation_d1, degradation_d2, MaterialParams, SplitMode, SplitPoint, SymTensor};
use crate::mesh::{Level, N_COMPONENTS};
use crate::Error;

/// Monolithic coefficient vector `(u_x | u_y | φ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockVector {
    pub values: Vec<f64>,
    n_scalar: usize,
    pub level: usize,
}

impl BlockVector {
    pub fn zeros(n_scalar: usize, level: usize) -> Self {
        BlockVector {
            values: vec![0.0; N_COMPONENTS * n_scalar],
            n_scalar,
            level,
        }
    }

    pub fn from_values(values: Vec<f64>, n_scalar: usize, level: usize) -> Result<Self, Error> {
        if values.len() != N_COMPONENTS * n_scalar {
            return Err(Error::DimensionMismatch {
                expected: N_COMPONENTS * n_scalar,
                got: values.len(),
            });
        }
        Ok(BlockVector {
            values,
            n_scalar,
            level,
        })
    }

    pub fn n_scalar(&self) -> usize {
        self.n_scalar
    }
    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
    pub fn displacement(&self) -> &[f64] {
        &self.values[..2 * self.n_scalar]
    }
    pub fn displacement_mut(&mut self) -> &mut [f64] {
        &mut self.values[..2 * self.n_scalar]
    }
    pub fn phase(&self) -> &[f64] {
        &self.values[2 * self.n_scalar..]
    }
    pub fn phase_mut(&mut self) -> &mut [f64] {
        &mut self.values[2 * self.n_scalar..]
    }
    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `φ̃ = φ₁ + (t − t₁)/(t₁ − t₂) (φ₁ − φ₂)`. Without a second history
/// entry the previous step is returned unchanged.
pub fn extrapolate_phase(
    phi_nm1: &[f64],
    phi_nm2: Option<&[f64]>,
    t_n: f64,
    t_nm1: f64,
    t_nm2: f64,
) -> Result<Vec<f64>, Error> {
    let Some(phi_nm2) = phi_nm2 else {
        return Ok(phi_nm1.to_vec());
    };
    if phi_nm2.len() != phi_nm1.len() {
        return Err(Error::DimensionMismatch {
            expected: phi_nm1.len(),
            got: phi_nm2.len(),
        });
    }
    if !(t_nm2 < t_nm1 && t_nm1 < t_n) {
        return Err(Error::Config(format!(
            "extrapolation needs increasing times, got {t_nm2}, {t_nm1}, {t_n}"
        )));
    }
    let r = (t_n - t_nm1) / (t_nm1 - t_nm2);
    Ok(phi_nm1.iter().zip(phi_nm2).map(|(a, b)| a + r * (a - b)).collect())
}

/// Data the Jacobian is frozen at: current iterate, extrapolated and
/// previous phase field, and the constrained dofs.
#[derive(Clone, Debug)]
pub struct LinearizationState {
    pub params: MaterialParams,
    pub split: SplitMode,
    n_scalar: usize,
    solution: Vec<f64>,
    phi_tilde: Vec<f64>,
    phi_old: Vec<f64>,
    dirichlet: Vec<bool>,
    active: Vec<bool>,
    constrained: Vec<bool>,
    version: u64,
}

impl LinearizationState {
    /// Undeformed, unbroken state: `u = 0`, `φ ≡ 1`, nothing constrained.
    pub fn new(n_scalar: usize, params: MaterialParams, split: SplitMode) -> Self {
        let mut solution = vec![0.0; N_COMPONENTS * n_scalar];
        solution[2 * n_scalar..].fill(1.0);
        LinearizationState {
            params,
            split,
            n_scalar,
            solution,
            phi_tilde: vec![1.0; n_scalar],
            phi_old: vec![1.0; n_scalar],
            dirichlet: vec![false; N_COMPONENTS * n_scalar],
            active: vec![false; n_scalar],
            constrained: vec![false; N_COMPONENTS * n_scalar],
            version: 0,
        }
    }

    pub fn n_scalar(&self) -> usize {
        self.n_scalar
    }
    pub fn n_dofs(&self) -> usize {
        N_COMPONENTS * self.n_scalar
    }
    /// Bumped by every mutation; caches compare against it.
    pub fn version(&self) -> u64 {
        self.version
    }
    pub fn solution(&self) -> &[f64] {
        &self.solution
    }
    pub fn phase(&self) -> &[f64] {
        &self.solution[2 * self.n_scalar..]
    }
    pub fn phi_tilde(&self) -> &[f64] {
        &self.phi_tilde
    }
    pub fn phi_old(&self) -> &[f64] {
        &self.phi_old
    }
    pub fn dirichlet_mask(&self) -> &[bool] {
        &self.dirichlet
    }
    /// Active flags per phase-field node.
    pub fn active_mask(&self) -> &[bool] {
        &self.active
    }
    /// Union of Dirichlet and active dofs over the full vector.
    pub fn constrained_mask(&self) -> &[bool] {
        &self.constrained
    }
    pub fn n_active(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    fn check_len(&self, got: usize, expected: usize) -> Result<(), Error> {
        if got != expected {
            Err(Error::DimensionMismatch { expected, got })
        } else {
            Ok(())
        }
    }

    pub fn set_solution(&mut self, values: &[f64]) -> Result<(), Error> {
        self.check_len(values.len(), self.n_dofs())?;
        self.solution.copy_from_slice(values);
        self.version += 1;
        Ok(())
    }

    /// Mutable access to the iterate; counts as a mutation.
    pub fn solution_mut(&mut self) -> &mut [f64] {
        self.version += 1;
        &mut self.solution
    }

    pub fn set_phi_tilde(&mut self, values: &[f64]) -> Result<(), Error> {
        self.check_len(values.len(), self.n_scalar)?;
        self.phi_tilde.copy_from_slice(values);
        self.version += 1;
        Ok(())
    }

    pub fn set_phi_old(&mut self, values: &[f64]) -> Result<(), Error> {
        self.check_len(values.len(), self.n_scalar)?;
        self.phi_old.copy_from_slice(values);
        self.version += 1;
        Ok(())
    }

    pub fn set_dirichlet_mask(&mut self, mask: &[bool]) -> Result<(), Error> {
        self.check_len(mask.len(), self.n_dofs())?;
        self.dirichlet.copy_from_slice(mask);
        self.rebuild_constrained();
        Ok(())
    }

    pub fn set_active_mask(&mut self, mask: &[bool]) -> Result<(), Error> {
        self.check_len(mask.len(), self.n_scalar)?;
        self.active.copy_from_slice(mask);
        self.rebuild_constrained();
        Ok(())
    }

    fn rebuild_constrained(&mut self) {
        let s2 = 2 * self.n_scalar;
        for (i, c) in self.constrained.iter_mut().enumerate() {
            *c = self.dirichlet[i] || (i >= s2 && self.active[i - s2]);
        }
        self.version += 1;
    }
}

/// How the Jacobian obtains its quadrature-point coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CacheMode {
    /// Strains, eigensystems and degradation values are recomputed from the
    /// state vectors on every application.
    OnTheFly,
    /// Per quadrature point tangent data is computed once per state.
    Tangent,
}

impl std::str::FromStr for CacheMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "on-the-fly" | "fly" => Ok(CacheMode::OnTheFly),
            "tangent" => Ok(CacheMode::Tangent),
            other => Err(Error::Config(format!("unknown cache mode `{other}`"))),
        }
    }
}

/// Which part of the block Jacobian `[[G_uu, 0], [G_φu, G_φφ]]` to apply.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Block {
    Full,
    Uu,
    PhiPhi,
    /// Coupling block `G_φu` only (φ rows from displacement input).
    PhiU,
}

impl Block {
    fn reads_u(self) -> bool {
        matches!(self, Block::Full | Block::Uu | Block::PhiU)
    }
    fn reads_phi(self) -> bool {
        matches!(self, Block::Full | Block::PhiPhi)
    }
    fn writes_u(self) -> bool {
        matches!(self, Block::Full | Block::Uu)
    }
    fn writes_phi(self) -> bool {
        !matches!(self, Block::Uu)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct OperatorOptions {
    pub cache: CacheMode,
    pub lanes: LaneWidth,
    pub workers: usize,
}

impl Default for OperatorOptions {
    fn default() -> Self {
        OperatorOptions {
            cache: CacheMode::OnTheFly,
            lanes: LaneWidth::detect(),
            workers: 1,
        }
    }
}

/// Stored per quadrature point in tangent mode: the displacement tangent
/// (3×3, acting on `(e_xx, e_yy, e_xy)`), the coupling stress `g'(φ) σ⁺`
/// and the phase-field reaction coefficient `g''(φ) E⁺ + G_c/ε`.
pub const TANGENT_STRIDE: usize = 13;

/// Quadrature-point linearization for one point, used by the assembled
/// reference path and the diagonal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointTangent {
    pub uu: [[f64; 3]; 3],
    pub coupling: [f64; 3],
    pub reaction: f64,
}

/// Local coefficients of one batch of cells, one array per component.
type LocalVec<T> = [[T; MAX_CELL_POINTS]; N_COMPONENTS];

/// Matrix-free representation of the residual and Jacobian on one level.
pub struct PffOperator<'a> {
    level: &'a Level,
    shape: Arc<ShapeData>,
    state: LinearizationState,
    options: OperatorOptions,
    tangent: Vec<f64>,
    tangent_version: Option<u64>,
    pool: Option<Arc<rayon::ThreadPool>>,
}

/// Symmetric strain tensor from physical displacement gradients.
#[inline(always)]
fn strain<T: Real>(ux_x: T, ux_y: T, uy_x: T, uy_y: T) -> SymTensor<T, 2> {
    let mut e = SymTensor::zero();
    e.set(0, 0, ux_x);
    e.set(1, 1, uy_y);
    e.set(0, 1, T::splat(0.5) * (ux_y + uy_x));
    e
}

impl<'a> PffOperator<'a> {
    pub fn new(level: &'a Level, state: LinearizationState, options: OperatorOptions) -> Result<Self, Error> {
        let shape = Arc::new(ShapeData::new(level.dofs.degree)?);
        Self::with_shape(level, shape, state, options)
    }

    pub fn with_shape(
        level: &'a Level,
        shape: Arc<ShapeData>,
        state: LinearizationState,
        options: OperatorOptions,
    ) -> Result<Self, Error> {
        if state.n_scalar() != level.dofs.n_scalar {
            return Err(Error::DimensionMismatch {
                expected: level.dofs.n_scalar,
                got: state.n_scalar(),
            });
        }
        if shape.degree() != level.dofs.degree {
            return Err(Error::Config("shape data degree differs from the dof map".into()));
        }
        state.params.validate()?;
        let pool = if options.workers > 1 {
            Some(Arc::new(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(options.workers)
                    .build()
                    .map_err(|e| Error::Resource(e.to_string()))?,
            ))
        } else {
            None
        };
        let mut op = PffOperator {
            level,
            shape,
            state,
            options,
            tangent: Vec::new(),
            tangent_version: None,
            pool,
        };
        op.refresh();
        Ok(op)
    }

    pub fn level(&self) -> &'a Level {
        self.level
    }
    pub fn shape(&self) -> &Arc<ShapeData> {
        &self.shape
    }
    pub fn state(&self) -> &LinearizationState {
        &self.state
    }
    /// Mutable state; in tangent mode [`Self::refresh`] must be called
    /// before the next Jacobian application.
    pub fn state_mut(&mut self) -> &mut LinearizationState {
        &mut self.state
    }
    pub fn options(&self) -> OperatorOptions {
        self.options
    }
    pub fn n_dofs(&self) -> usize {
        self.state.n_dofs()
    }
    pub fn set_lanes(&mut self, lanes: LaneWidth) {
        self.options.lanes = lanes;
    }

    /// Recomputes cached quadrature data if the state changed.
    pub fn refresh(&mut self) {
        if self.options.cache != CacheMode::Tangent || self.tangent_version == Some(self.state.version()) {
            return;
        }
        let nq = self.shape.q_per_cell();
        let n_cells = self.level.mesh.n_cells();
        let mut tangent = std::mem::take(&mut self.tangent);
        tangent.resize(n_cells * nq * TANGENT_STRIDE, 0.0);
        for c in 0..n_cells {
            let pts = self.cell_tangents(c);
            for (q, t) in pts.iter().enumerate() {
                let dst = &mut tangent[(c * nq + q) * TANGENT_STRIDE..(c * nq + q + 1) * TANGENT_STRIDE];
                for r in 0..3 {
                    dst[3 * r..3 * r + 3].copy_from_slice(&t.uu[r]);
                }
                dst[9..12].copy_from_slice(&t.coupling);
                dst[12] = t.reaction;
            }
        }
        self.tangent = tangent;
        self.tangent_version = Some(self.state.version());
    }

    fn check_cache(&self) -> Result<(), Error> {
        if self.options.cache == CacheMode::Tangent && self.tangent_version != Some(self.state.version()) {
            return Err(Error::StaleCache {
                cache: self.tangent_version.unwrap_or(u64::MAX),
                state: self.state.version(),
            });
        }
        Ok(())
    }

    /// Bytes held by the operator: shape data, state vectors, dof map and
    /// any cached quadrature data.
    pub fn memory_bytes(&self) -> usize {
        let s = &self.state;
        self.shape.memory_bytes()
            + 8 * (s.solution.len() + s.phi_tilde.len() + s.phi_old.len())
            + s.dirichlet.len()
            + s.active.len()
            + s.constrained.len()
            + 8 * self.tangent.len()
            + self.level.dofs.memory_bytes()
    }

    /// Local values of a state-sized vector on one cell.
    fn gather_scalar(&self, cell: usize, data: &[f64], out: &mut [f64]) {
        for (o, &n) in out.iter_mut().zip(self.level.dofs.cell_nodes(cell)) {
            *o = data[n as usize];
        }
    }

    /// Quadrature-point linearization of one cell (scalar path).
    pub fn cell_tangents(&self, cell: usize) -> Vec<PointTangent> {
        let sd = &*self.shape;
        let nd = sd.dofs_per_cell();
        let nq = sd.q_per_cell();
        let s = self.state.n_scalar;
        let h = self.level.mesh.h;
        let p = &self.state.params;
        let mut coef = [[0.0; MAX_CELL_POINTS]; 4];
        for comp in 0..3 {
            self.gather_scalar(cell, &self.state.solution[comp * s..(comp + 1) * s], &mut coef[comp][..nd]);
        }
        self.gather_scalar(cell, &self.state.phi_tilde, &mut coef[3][..nd]);
        let mut gx = [[0.0; MAX_CELL_POINTS]; 2];
        let mut gy = [[0.0; MAX_CELL_POINTS]; 2];
        let mut phi = [0.0; MAX_CELL_POINTS];
        let mut phit = [0.0; MAX_CELL_POINTS];
        let mut scratch = [[0.0; MAX_CELL_POINTS]; 2];
        for comp in 0..2 {
            let (a, b) = (&mut gx[comp], &mut gy[comp]);
            interpolate_gradient(sd, &coef[comp][..nd], &mut a[..nq], &mut b[..nq]);
        }
        {
            let (a, b) = scratch.split_at_mut(1);
            interpolate(sd, &coef[2][..nd], &mut phi[..nq], &mut a[0][..nq], &mut b[0][..nq]);
            interpolate(sd, &coef[3][..nd], &mut phit[..nq], &mut a[0][..nq], &mut b[0][..nq]);
        }
        let inv_h = 1.0 / h;
        (0..nq)
            .map(|q| {
                let e = strain(gx[0][q] * inv_h, gy[0][q] * inv_h, gx[1][q] * inv_h, gy[1][q] * inv_h);
                point_tangent(&e, phi[q], phit[q], p, self.state.split)
            })
            .collect()
    }

    /// Unconstrained residual `R(u, φ)` (no rows zeroed).
    pub fn residual_unconstrained(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_dofs()];
        match self.options.lanes {
            LaneWidth::W1 => self.residual_loop::<1>(&mut out),
            LaneWidth::W2 => self.residual_loop::<2>(&mut out),
            LaneWidth::W4 => self.residual_loop::<4>(&mut out),
            LaneWidth::W8 => self.residual_loop::<8>(&mut out),
        }
        out
    }

    /// Residual with Dirichlet and active rows zeroed.
    pub fn residual(&self) -> Vec<f64> {
        let mut r = self.residual_unconstrained();
        self.zero_constrained(&mut r);
        r
    }

    pub fn zero_constrained(&self, v: &mut [f64]) {
        for (x, &c) in v.iter_mut().zip(&self.state.constrained) {
            if c {
                *x = 0.0;
            }
        }
    }

    /// `dst = G src`, with identity rows and columns at constrained dofs.
    pub fn apply_jacobian(&self, src: &[f64], dst: &mut [f64]) -> Result<(), Error> {
        self.apply_block(Block::Full, src, dst)
    }

    /// Applies one block of the Jacobian. Vectors are full length; entries
    /// outside the block's rows are set to zero.
    pub fn apply_block(&self, block: Block, src: &[f64], dst: &mut [f64]) -> Result<(), Error> {
        let n = self.n_dofs();
        if src.len() != n || dst.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: if src.len() != n { src.len() } else { dst.len() },
            });
        }
        self.check_cache()?;
        dst.fill(0.0);
        match self.options.lanes {
            LaneWidth::W1 => self.jacobian_loop::<1>(block, src, dst),
            LaneWidth::W2 => self.jacobian_loop::<2>(block, src, dst),
            LaneWidth::W4 => self.jacobian_loop::<4>(block, src, dst),
            LaneWidth::W8 => self.jacobian_loop::<8>(block, src, dst),
        }
        let s2 = 2 * self.state.n_scalar;
        for (i, &c) in self.state.constrained.iter().enumerate() {
            let is_u = i < s2;
            if !((is_u && block.writes_u()) || (!is_u && block.writes_phi())) {
                dst[i] = 0.0;
            } else if c {
                dst[i] = if block == Block::PhiU { 0.0 } else { src[i] };
            }
        }
        Ok(())
    }

    /// Diagonal of the `uu` or `φφ` block (length of that block);
    /// constrained entries are 1.
    pub fn block_diagonal(&self, block: Block) -> Result<Vec<f64>, Error> {
        let s = self.state.n_scalar;
        let (range, comps) = match block {
            Block::Uu => (0..2 * s, 0..2),
            Block::PhiPhi => (2 * s..3 * s, 2..3),
            _ => return Err(Error::Config("diagonal is defined for the uu and φφ blocks".into())),
        };
        let sd = &*self.shape;
        let nd1 = sd.n_dofs_1d();
        let nq1 = sd.n_q_1d();
        let h = self.level.mesh.h;
        let weights = sd.weights_2d();
        let p = &self.state.params;
        let mut diag = vec![0.0; N_COMPONENTS * s];
        for c in 0..self.level.mesh.n_cells() {
            let tangents = if self.options.cache == CacheMode::Tangent && self.tangent_version == Some(self.state.version()) {
                let nq = sd.q_per_cell();
                (0..nq)
                    .map(|q| {
                        let t = &self.tangent[(c * nq + q) * TANGENT_STRIDE..(c * nq + q + 1) * TANGENT_STRIDE];
                        PointTangent {
                            uu: [[t[0], t[1], t[2]], [t[3], t[4], t[5]], [t[6], t[7], t[8]]],
                            coupling: [t[9], t[10], t[11]],
                            reaction: t[12],
                        }
                    })
                    .collect()
            } else {
                self.cell_tangents(c)
            };
            let nodes = self.level.dofs.cell_nodes(c);
            for jy in 0..nd1 {
                for jx in 0..nd1 {
                    let node = nodes[jy * nd1 + jx] as usize;
                    for qy in 0..nq1 {
                        for qx in 0..nq1 {
                            let q = qy * nq1 + qx;
                            let jxw = weights[q] * h * h;
                            let v = sd.value(qx, jx) * sd.value(qy, jy);
                            let dx = sd.deriv(qx, jx) * sd.value(qy, jy) / h;
                            let dy = sd.value(qx, jx) * sd.deriv(qy, jy) / h;
                            let t = &tangents[q];
                            for comp in comps.clone() {
                                let val = match comp {
                                    0 => {
                                        let de = [dx, 0.0, 0.5 * dy];
                                        let ds = mat3_vec(&t.uu, &de);
                                        ds[0] * dx + ds[2] * dy
                                    }
                                    1 => {
                                        let de = [0.0, dy, 0.5 * dx];
                                        let ds = mat3_vec(&t.uu, &de);
                                        ds[1] * dy + ds[2] * dx
                                    }
                                    _ => t.reaction * v * v + p.gc * p.eps * (dx * dx + dy * dy),
                                };
                                diag[comp * s + node] += val * jxw;
                            }
                        }
                    }
                }
            }
        }
        let mut out: Vec<f64> = diag[range.clone()].to_vec();
        for (k, i) in range.enumerate() {
            if self.state.constrained[i] {
                out[k] = 1.0;
            }
        }
        Ok(out)
    }

    fn run_batches<const W: usize, F>(&self, kernel: F, dst: &mut [f64])
    where
        F: Fn(&ElementBatch<W>, &mut LocalVec<Lanes<W>>) + Sync,
    {
        let n_cells = self.level.mesh.n_cells();
        let nd = self.shape.dofs_per_cell();
        let s = self.state.n_scalar;
        let dofs = &self.level.dofs;
        let scatter = |batch: &ElementBatch<W>, local: &LocalVec<Lanes<W>>, dst: &mut [f64]| {
            for lane in 0..W {
                if !batch.lane_is_valid(lane) {
                    continue;
                }
                let nodes = dofs.cell_nodes(batch.cells[lane]);
                for comp in 0..N_COMPONENTS {
                    let base = comp * s;
                    for (k, &n) in nodes.iter().enumerate().take(nd) {
                        dst[base + n as usize] += local[comp][k].0[lane];
                    }
                }
            }
        };
        match &self.pool {
            None => {
                let mut local = [[Lanes::<W>::zero(); MAX_CELL_POINTS]; N_COMPONENTS];
                for batch in batches::<W>(n_cells) {
                    kernel(&batch, &mut local);
                    scatter(&batch, &local, dst);
                }
            }
            Some(pool) => {
                let all: Vec<ElementBatch<W>> = batches::<W>(n_cells).collect();
                let chunk = all.len().div_ceil(4 * self.options.workers).max(1);
                let results: Vec<Vec<LocalVec<Lanes<W>>>> = pool.install(|| {
                    all.par_chunks(chunk)
                        .map(|bs| {
                            bs.iter()
                                .map(|b| {
                                    let mut local = [[Lanes::<W>::zero(); MAX_CELL_POINTS]; N_COMPONENTS];
                                    kernel(b, &mut local);
                                    local
                                })
                                .collect()
                        })
                        .collect()
                });
                for (bs, locals) in all.chunks(chunk).zip(&results) {
                    for (b, l) in bs.iter().zip(locals) {
                        scatter(b, l, dst);
                    }
                }
            }
        }
    }

    fn gather_lanes<const W: usize>(&self, batch: &ElementBatch<W>, data: &[f64], out: &mut [Lanes<W>]) {
        for lane in 0..W {
            let nodes = self.level.dofs.cell_nodes(batch.cells[lane]);
            for (o, &n) in out.iter_mut().zip(nodes) {
                o.0[lane] = data[n as usize];
            }
        }
    }

    fn residual_loop<const W: usize>(&self, dst: &mut [f64]) {
        let sd = &*self.shape;
        let nd = sd.dofs_per_cell();
        let nq = sd.q_per_cell();
        let s = self.state.n_scalar;
        let h = self.level.mesh.h;
        let inv_h = 1.0 / h;
        let p = self.state.params;
        let split = self.state.split;
        let weights = sd.weights_2d();
        let sol = &self.state.solution;
        let kernel = |batch: &ElementBatch<W>, local: &mut LocalVec<Lanes<W>>| {
            type L<const W: usize> = Lanes<W>;
            let z = L::<W>::zero();
            let mut coef = [[z; MAX_CELL_POINTS]; 4];
            for comp in 0..3 {
                self.gather_lanes(batch, &sol[comp * s..(comp + 1) * s], &mut coef[comp][..nd]);
            }
            self.gather_lanes(batch, &self.state.phi_tilde, &mut coef[3][..nd]);
            let mut gx = [[z; MAX_CELL_POINTS]; 3];
            let mut gy = [[z; MAX_CELL_POINTS]; 3];
            let mut phi = [z; MAX_CELL_POINTS];
            let mut phit = [z; MAX_CELL_POINTS];
            for comp in 0..2 {
                let (a, b) = (&mut gx[comp], &mut gy[comp]);
                interpolate_gradient(sd, &coef[comp][..nd], &mut a[..nq], &mut b[..nq]);
            }
            {
                let (a, b) = (&mut gx[2], &mut gy[2]);
                interpolate(sd, &coef[2][..nd], &mut phi[..nq], &mut a[..nq], &mut b[..nq]);
            }
            crate::basis::interpolate_values(sd, &coef[3][..nd], &mut phit[..nq]);
            // quadrature data to be tested: [u_x grad, u_y grad, φ value, φ grad]
            let mut tx = [[z; MAX_CELL_POINTS]; 3];
            let mut ty = [[z; MAX_CELL_POINTS]; 3];
            let mut tv = [z; MAX_CELL_POINTS];
            let gc_eps = L::<W>::splat(p.gc * p.eps);
            let gc_over_eps = L::<W>::splat(p.gc / p.eps);
            let one = L::<W>::splat(1.0);
            for q in 0..nq {
                let w = weights[q];
                let jxw_v = L::<W>::splat(w * h * h);
                let jxw_g = L::<W>::splat(w * h);
                let ih = L::<W>::splat(inv_h);
                let e = strain(gx[0][q] * ih, gy[0][q] * ih, gx[1][q] * ih, gy[1][q] * ih);
                let sp = SplitPoint::new(e, split);
                let g = degradation(phit[q], p.kappa);
                let sigma = sp.stress_plus(&p).scale(g).add(&sp.stress_minus(&p));
                let sxx = sigma.get(0, 0) * jxw_g;
                let syy = sigma.get(1, 1) * jxw_g;
                let sxy = sigma.get(0, 1) * jxw_g;
                tx[0][q] = sxx;
                ty[0][q] = sxy;
                tx[1][q] = sxy;
                ty[1][q] = syy;
                tv[q] = (degradation_d1(phi[q], p.kappa) * sp.energy_plus(&p) - gc_over_eps * (one - phi[q])) * jxw_v;
                tx[2][q] = gc_eps * gx[2][q] * ih * jxw_g;
                ty[2][q] = gc_eps * gy[2][q] * ih * jxw_g;
            }
            for comp in local.iter_mut() {
                comp[..nd].fill(z);
            }
            integrate_add(sd, None, Some(&tx[0][..nq]), Some(&ty[0][..nq]), &mut local[0][..nd]);
            integrate_add(sd, None, Some(&tx[1][..nq]), Some(&ty[1][..nq]), &mut local[1][..nd]);
            integrate_add(sd, Some(&tv[..nq]), Some(&tx[2][..nq]), Some(&ty[2][..nq]), &mut local[2][..nd]);
        };
        self.run_batches::<W, _>(kernel, dst);
    }

    fn jacobian_loop<const W: usize>(&self, block: Block, src: &[f64], dst: &mut [f64]) {
        let sd = &*self.shape;
        let nd = sd.dofs_per_cell();
        let nq = sd.q_per_cell();
        let s = self.state.n_scalar;
        let h = self.level.mesh.h;
        let inv_h = 1.0 / h;
        let p = self.state.params;
        let split = self.state.split;
        let weights = sd.weights_2d();
        let sol = &self.state.solution;
        let constrained = &self.state.constrained;
        let tangent_mode = self.options.cache == CacheMode::Tangent;
        // zero constrained columns
        let src: Vec<f64> = src
            .iter()
            .zip(constrained)
            .map(|(&v, &c)| if c { 0.0 } else { v })
            .collect();
        let src = &src;
        let kernel = |batch: &ElementBatch<W>, local: &mut LocalVec<Lanes<W>>| {
            type L<const W: usize> = Lanes<W>;
            let z = L::<W>::zero();
            let ih = L::<W>::splat(inv_h);
            let mut dcoef = [[z; MAX_CELL_POINTS]; 3];
            let mut dgx = [[z; MAX_CELL_POINTS]; 3];
            let mut dgy = [[z; MAX_CELL_POINTS]; 3];
            let mut dphi = [z; MAX_CELL_POINTS];
            if block.reads_u() {
                for comp in 0..2 {
                    self.gather_lanes(batch, &src[comp * s..(comp + 1) * s], &mut dcoef[comp][..nd]);
                    let (a, b) = (&mut dgx[comp], &mut dgy[comp]);
                    interpolate_gradient(sd, &dcoef[comp][..nd], &mut a[..nq], &mut b[..nq]);
                }
            }
            if block.reads_phi() {
                self.gather_lanes(batch, &src[2 * s..3 * s], &mut dcoef[2][..nd]);
                let (a, b) = (&mut dgx[2], &mut dgy[2]);
                interpolate(sd, &dcoef[2][..nd], &mut dphi[..nq], &mut a[..nq], &mut b[..nq]);
            }
            // state at quadrature points, on-the-fly mode only
            let mut gx = [[z; MAX_CELL_POINTS]; 2];
            let mut gy = [[z; MAX_CELL_POINTS]; 2];
            let mut phi = [z; MAX_CELL_POINTS];
            let mut phit = [z; MAX_CELL_POINTS];
            if !tangent_mode {
                let mut coef = [[z; MAX_CELL_POINTS]; 4];
                if block.reads_u() || block.writes_phi() {
                    for comp in 0..2 {
                        self.gather_lanes(batch, &sol[comp * s..(comp + 1) * s], &mut coef[comp][..nd]);
                        let (a, b) = (&mut gx[comp], &mut gy[comp]);
                        interpolate_gradient(sd, &coef[comp][..nd], &mut a[..nq], &mut b[..nq]);
                    }
                }
                if block.writes_phi() {
                    self.gather_lanes(batch, &sol[2 * s..3 * s], &mut coef[2][..nd]);
                    crate::basis::interpolate_values(sd, &coef[2][..nd], &mut phi[..nq]);
                }
                if block.writes_u() {
                    self.gather_lanes(batch, &self.state.phi_tilde, &mut coef[3][..nd]);
                    crate::basis::interpolate_values(sd, &coef[3][..nd], &mut phit[..nq]);
                }
            }
            let mut tx = [[z; MAX_CELL_POINTS]; 3];
            let mut ty = [[z; MAX_CELL_POINTS]; 3];
            let mut tv = [z; MAX_CELL_POINTS];
            let gc_eps = L::<W>::splat(p.gc * p.eps);
            let gc_over_eps = L::<W>::splat(p.gc / p.eps);
            let d2 = L::<W>::splat(degradation_d2(p.kappa));
            for q in 0..nq {
                let w = weights[q];
                let jxw_v = L::<W>::splat(w * h * h);
                let jxw_g = L::<W>::splat(w * h);
                let de = [
                    dgx[0][q] * ih,
                    dgy[1][q] * ih,
                    L::<W>::splat(0.5) * (dgy[0][q] + dgx[1][q]) * ih,
                ];
                let mut ds = [z; 3];
                let mut coupling = z;
                let mut reaction = z;
                if tangent_mode {
                    let mut t = [z; TANGENT_STRIDE];
                    for lane in 0..W {
                        let c = batch.cells[lane];
                        let base = (c * nq + q) * TANGENT_STRIDE;
                        for (k, tk) in t.iter_mut().enumerate() {
                            tk.0[lane] = self.tangent[base + k];
                        }
                    }
                    if block.writes_u() {
                        for r in 0..3 {
                            ds[r] = t[3 * r] * de[0] + t[3 * r + 1] * de[1] + t[3 * r + 2] * de[2];
                        }
                    }
                    if block.writes_phi() {
                        if block.reads_u() {
                            coupling = t[9] * de[0] + t[10] * de[1] + L::<W>::splat(2.0) * t[11] * de[2];
                        }
                        reaction = t[12];
                    }
                } else {
                    let e = strain(gx[0][q] * ih, gy[0][q] * ih, gx[1][q] * ih, gy[1][q] * ih);
                    let sp = SplitPoint::new(e, split);
                    let mut det = SymTensor::zero();
                    det.set(0, 0, de[0]);
                    det.set(1, 1, de[1]);
                    det.set(0, 1, de[2]);
                    if block.writes_u() {
                        let g = degradation(phit[q], p.kappa);
                        let sig = sp.d_stress_plus(&det, &p).scale(g).add(&sp.d_stress_minus(&det, &p));
                        ds = [sig.get(0, 0), sig.get(1, 1), sig.get(0, 1)];
                    }
                    if block.writes_phi() {
                        if block.reads_u() {
                            coupling = degradation_d1(phi[q], p.kappa) * sp.d_energy_plus(&det, &p);
                        }
                        if block.reads_phi() {
                            reaction = d2 * sp.energy_plus(&p) + gc_over_eps;
                        }
                    }
                }
                if block.writes_u() {
                    tx[0][q] = ds[0] * jxw_g;
                    ty[0][q] = ds[2] * jxw_g;
                    tx[1][q] = ds[2] * jxw_g;
                    ty[1][q] = ds[1] * jxw_g;
                }
                if block.writes_phi() {
                    let mut v = coupling;
                    if block.reads_phi() {
                        v += reaction * dphi[q];
                        tx[2][q] = gc_eps * dgx[2][q] * ih * jxw_g;
                        ty[2][q] = gc_eps * dgy[2][q] * ih * jxw_g;
                    }
                    tv[q] = v * jxw_v;
                }
            }
            for comp in local.iter_mut() {
                comp[..nd].fill(z);
            }
            if block.writes_u() {
                integrate_add(sd, None, Some(&tx[0][..nq]), Some(&ty[0][..nq]), &mut local[0][..nd]);
                integrate_add(sd, None, Some(&tx[1][..nq]), Some(&ty[1][..nq]), &mut local[1][..nd]);
            }
            if block.writes_phi() {
                if block.reads_phi() {
                    integrate_add(sd, Some(&tv[..nq]), Some(&tx[2][..nq]), Some(&ty[2][..nq]), &mut local[2][..nd]);
                } else {
                    integrate_add(sd, Some(&tv[..nq]), None, None, &mut local[2][..nd]);
                }
            }
        };
        self.run_batches::<W, _>(kernel, dst);
    }
}

#[inline(always)]
fn mat3_vec(m: &[[f64; 3]; 3], v: &[f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// Linearization at one quadrature point with strain `e`, phase field
/// `phi` and extrapolated phase field `phi_tilde`.
pub fn point_tangent(
    e: &SymTensor<f64, 2>,
    phi: f64,
    phi_tilde: f64,
    p: &MaterialParams,
    split: SplitMode,
) -> PointTangent {
    let sp = SplitPoint::new(*e, split);
    let g = degradation(phi_tilde, p.kappa);
    let mut uu = [[0.0; 3]; 3];
    for k in 0..3 {
        let mut de = SymTensor::<f64, 2>::zero();
        match k {
            0 => de.set(0, 0, 1.0),
            1 => de.set(1, 1, 1.0),
            _ => de.set(0, 1, 1.0),
        }
        let ds = sp.d_stress_plus(&de, p).scale(g).add(&sp.d_stress_minus(&de, p));
        uu[0][k] = ds.get(0, 0);
        uu[1][k] = ds.get(1, 1);
        uu[2][k] = ds.get(0, 1);
    }
    let sp_plus = sp.stress_plus(p);
    let g1 = degradation_d1(phi, p.kappa);
    PointTangent {
        uu,
        coupling: [g1 * sp_plus.get(0, 0), g1 * sp_plus.get(1, 1), g1 * sp_plus.get(0, 1)],
        reaction: degradation_d2(p.kappa) * sp.energy_plus(p) + p.gc / p.eps,
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::mesh::{BoundaryTag, MeshHierarchy};
    use crate::sparse::{assemble_oracle, assembled_residual};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random smooth-ish state with Dirichlet dofs on top and bottom and a
    /// random active set.
    pub(crate) fn random_state(level: &Level, split: SplitMode, seed: u64, active_fraction: f64) -> LinearizationState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = level.dofs.n_scalar;
        let mut st = LinearizationState::new(s, MaterialParams::default(), split);
        let mut sol = vec![0.0; 3 * s];
        for (i, v) in sol.iter_mut().enumerate() {
            *v = if i < 2 * s {
                1e-3 * rng.gen_range(-1.0..1.0)
            } else {
                rng.gen_range(0.2..1.0)
            };
        }
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

    fn rel(a: &[f64], b: &[f64]) -> f64 {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        norm(&d) / norm(b).max(1e-300)
    }

    fn options(cache: CacheMode, w: usize) -> OperatorOptions {
        OperatorOptions {
            cache,
            lanes: LaneWidth::from_lanes(w).unwrap(),
            workers: 1,
        }
    }

    #[test]
    fn extrapolation_examples() {
        let a = vec![0.8; 3];
        let b = vec![1.0; 3];
        let t = extrapolate_phase(&a, Some(&b), 2.0, 1.0, 0.0).unwrap();
        assert!(t.iter().all(|&v| (v - 0.6).abs() < 1e-15));
        assert_eq!(extrapolate_phase(&a, Some(&a), 2.0, 1.0, 0.0).unwrap(), a);
        let t = extrapolate_phase(&[1.5], Some(&[1.0]), 3.0, 1.0, 0.0).unwrap();
        assert_eq!(t, vec![2.5]);
        assert_eq!(extrapolate_phase(&a, None, 1.0, 0.0, 0.0).unwrap(), a);
        assert!(extrapolate_phase(&a, Some(&b), 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn residual_vanishes_in_reference_state() {
        let h = MeshHierarchy::build(2, 2).unwrap();
        let l = h.finest();
        let st = LinearizationState::new(l.dofs.n_scalar, MaterialParams::default(), SplitMode::Miehe);
        let op = PffOperator::new(l, st, OperatorOptions::default()).unwrap();
        assert!(op.residual_unconstrained().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn broken_state_residual_is_mass_action() {
        let h = MeshHierarchy::build(3, 2).unwrap();
        let l = h.finest();
        let s = l.dofs.n_scalar;
        let mut st = LinearizationState::new(s, MaterialParams::default(), SplitMode::Isotropic);
        st.solution_mut()[2 * s..].fill(0.0);
        let p = st.params;
        let op = PffOperator::new(l, st, OperatorOptions::default()).unwrap();
        let r = op.residual_unconstrained();
        assert!(r[..2 * s].iter().all(|&v| v == 0.0));
        // ∫ψ_i by direct 1D quadrature
        let sd = ShapeData::new(2).unwrap();
        let mut expect = vec![0.0; s];
        let hh = l.mesh.h;
        for c in 0..l.mesh.n_cells() {
            for (k, &n) in l.dofs.cell_nodes(c).iter().enumerate() {
                let (kx, ky) = (k % 3, k / 3);
                let ix: f64 = (0..3).map(|q| sd.q_weights()[q] * sd.value(q, kx)).sum();
                let iy: f64 = (0..3).map(|q| sd.q_weights()[q] * sd.value(q, ky)).sum();
                expect[n as usize] += ix * iy * hh * hh;
            }
        }
        for i in 0..s {
            let e = -(p.gc / p.eps) * expect[i];
            assert!((r[2 * s + i] - e).abs() <= 1e-14 * e.abs().max(1e-3));
        }
    }

    #[test]
    fn residual_matches_assembled_path() {
        for p in 1..=3 {
            let h = MeshHierarchy::build(3, p).unwrap();
            let l = h.finest();
            for split in [SplitMode::Isotropic, SplitMode::Miehe] {
                let op = PffOperator::new(l, random_state(l, split, 7, 0.2), options(CacheMode::OnTheFly, 1)).unwrap();
                let a = op.residual_unconstrained();
                let b = assembled_residual(&op);
                assert!(rel(&a, &b) < 1e-12, "p={p} {split:?} {}", rel(&a, &b));
            }
        }
    }

    #[test]
    fn jacobian_matches_oracle_all_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for p in 1..=3 {
            let h = MeshHierarchy::build(2, p).unwrap();
            let l = h.finest();
            for split in [SplitMode::Isotropic, SplitMode::Miehe] {
                for cache in [CacheMode::OnTheFly, CacheMode::Tangent] {
                    let op = PffOperator::new(l, random_state(l, split, 3, 0.3), options(cache, 4)).unwrap();
                    let oracle = assemble_oracle(&op).unwrap();
                    let n = op.n_dofs();
                    for _ in 0..3 {
                        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                        let mut a = vec![0.0; n];
                        let mut b = vec![0.0; n];
                        op.apply_jacobian(&x, &mut a).unwrap();
                        oracle.apply(&x, &mut b);
                        assert!(rel(&a, &b) < 1e-12, "p={p} {split:?} {cache:?} {}", rel(&a, &b));
                    }
                }
            }
        }
    }

    #[test]
    fn blocks_sum_to_full_operator() {
        let h = MeshHierarchy::build(3, 2).unwrap();
        let l = h.finest();
        let op = PffOperator::new(l, random_state(l, SplitMode::Miehe, 4, 0.1), options(CacheMode::OnTheFly, 2)).unwrap();
        let n = op.n_dofs();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut full = vec![0.0; n];
        op.apply_jacobian(&x, &mut full).unwrap();
        let mut sum = vec![0.0; n];
        let mut tmp = vec![0.0; n];
        for b in [Block::Uu, Block::PhiPhi, Block::PhiU] {
            op.apply_block(b, &x, &mut tmp).unwrap();
            for (s, t) in sum.iter_mut().zip(&tmp) {
                *s += t;
            }
        }
        assert!(rel(&sum, &full) < 1e-14);
    }

    #[test]
    fn constrained_dofs_act_as_identity() {
        let h = MeshHierarchy::build(2, 1).unwrap();
        let l = h.finest();
        let op = PffOperator::new(l, random_state(l, SplitMode::Miehe, 5, 0.3), OperatorOptions::default()).unwrap();
        let n = op.n_dofs();
        let mask = op.state().constrained_mask().to_vec();
        let i = mask.iter().position(|&c| c).unwrap();
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        let mut y = vec![0.0; n];
        op.apply_jacobian(&e, &mut y).unwrap();
        for (k, &v) in y.iter().enumerate() {
            assert_eq!(v, if k == i { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn diagonal_matches_oracle() {
        for p in 1..=3 {
            let h = MeshHierarchy::build(2, p).unwrap();
            let l = h.finest();
            for cache in [CacheMode::OnTheFly, CacheMode::Tangent] {
                let op = PffOperator::new(l, random_state(l, SplitMode::Miehe, 6, 0.2), options(cache, 1)).unwrap();
                let oracle = assemble_oracle(&op).unwrap().matrix.diagonal();
                let s = l.dofs.n_scalar;
                let du = op.block_diagonal(Block::Uu).unwrap();
                let dp = op.block_diagonal(Block::PhiPhi).unwrap();
                assert!(rel(&du, &oracle[..2 * s]) < 1e-12);
                assert!(rel(&dp, &oracle[2 * s..]) < 1e-12);
                assert!(du.iter().chain(&dp).all(|&d| d > 0.0));
            }
        }
    }

    #[test]
    fn phase_mass_diagonal_scales_with_area() {
        let h = MeshHierarchy::build(4, 1).unwrap();
        let mut prev: Option<f64> = None;
        for lv in 3..=4 {
            let l = &h.levels[lv];
            let st = LinearizationState::new(l.dofs.n_scalar, MaterialParams { eps: 1.0, ..Default::default() }, SplitMode::Isotropic);
            let p = st.params;
            let op = PffOperator::new(l, st, OperatorOptions::default()).unwrap();
            let d = op.block_diagonal(Block::PhiPhi).unwrap();
            // interior node: mass part (G_c/ε) h² · (2/3)² + stiffness part 8/3·G_c ε
            let nn = l.dofs.nodes_per_side;
            let i = (nn / 4) * nn + nn / 4;
            let mass = d[i] - p.gc * p.eps * 8.0 / 3.0;
            if let Some(m) = prev {
                assert!((m / mass - 4.0).abs() < 1e-9, "{m} {mass}");
            }
            prev = Some(mass);
        }
    }

    #[test]
    fn stale_tangent_cache_is_reported() {
        let h = MeshHierarchy::build(2, 1).unwrap();
        let l = h.finest();
        let mut op = PffOperator::new(l, random_state(l, SplitMode::Miehe, 1, 0.0), options(CacheMode::Tangent, 1)).unwrap();
        let n = op.n_dofs();
        let x = vec![1.0; n];
        let mut y = vec![0.0; n];
        op.apply_jacobian(&x, &mut y).unwrap();
        op.state_mut().solution_mut()[0] += 1e-3;
        assert!(matches!(op.apply_jacobian(&x, &mut y), Err(Error::StaleCache { .. })));
        op.refresh();
        op.apply_jacobian(&x, &mut y).unwrap();
    }

    #[test]
    fn lane_widths_and_workers_agree() {
        let h = MeshHierarchy::build(3, 2).unwrap();
        let l = h.finest();
        let st = random_state(l, SplitMode::Miehe, 8, 0.2);
        let n = 3 * l.dofs.n_scalar;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let reference = {
            let op = PffOperator::new(l, st.clone(), options(CacheMode::OnTheFly, 1)).unwrap();
            let mut y = vec![0.0; n];
            op.apply_jacobian(&x, &mut y).unwrap();
            (op.residual_unconstrained(), y)
        };
        for (w, workers) in [(2, 1), (4, 1), (8, 1), (4, 3)] {
            let op = PffOperator::new(
                l,
                st.clone(),
                OperatorOptions {
                    cache: CacheMode::OnTheFly,
                    lanes: LaneWidth::from_lanes(w).unwrap(),
                    workers,
                },
            )
            .unwrap();
            let mut y = vec![0.0; n];
            op.apply_jacobian(&x, &mut y).unwrap();
            assert!(rel(&y, &reference.1) <= 1e-13);
            assert!(rel(&op.residual_unconstrained(), &reference.0) <= 1e-13);
        }
    }

    #[test]
    fn isotropic_displacement_block_ignores_displacement() {
        let h = MeshHierarchy::build(2, 2).unwrap();
        let l = h.finest();
        let st = random_state(l, SplitMode::Isotropic, 10, 0.0);
        let n = st.n_dofs();
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut a = vec![0.0; n];
        let op = PffOperator::new(l, st.clone(), OperatorOptions::default()).unwrap();
        op.apply_block(Block::Uu, &x, &mut a).unwrap();
        let mut st2 = st;
        for v in st2.solution_mut()[..2 * l.dofs.n_scalar].iter_mut() {
            *v *= -3.0;
        }
        let op2 = PffOperator::new(l, st2, OperatorOptions::default()).unwrap();
        let mut b = vec![0.0; n];
        op2.apply_block(Block::Uu, &x, &mut b).unwrap();
        assert_eq!(a, b);
    }
}
