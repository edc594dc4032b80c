//! Monolithic geometric multigrid with block Chebyshev-Jacobi smoothing.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::basis::lagrange_values;
use crate::krylov::Preconditioner;
use crate::mesh::{Level, MeshHierarchy, N_COMPONENTS};
use crate::operator::{dot, norm, Block, LinearizationState, OperatorOptions, PffOperator};
use crate::sparse::Csr;
use crate::Error;

/// Scalar matrix evaluating the finite element function of `from` at the
/// support points of `to` (rows: nodes of `to`).
pub fn nodal_interpolation(from: &Level, to: &Level) -> Csr {
    let p = from.dofs.degree;
    let support = crate::basis::support_points(p);
    let nd = p + 1;
    let rows = (0..to.dofs.n_scalar)
        .map(|i| {
            let (cell, xi) = from.locate(to.dofs.node_coords[i], to.dofs.node_slit[i]);
            let lx = lagrange_values(&support, xi[0]);
            let ly = lagrange_values(&support, xi[1]);
            let nodes = from.dofs.cell_nodes(cell);
            let mut row: Vec<(u32, f64)> = Vec::with_capacity(nd * nd);
            for ky in 0..nd {
                for kx in 0..nd {
                    let w = lx[kx] * ly[ky];
                    if w.abs() > 1e-15 {
                        row.push((nodes[ky * nd + kx], w));
                    }
                }
            }
            row.sort_by_key(|e| e.0);
            row
        })
        .collect();
    Csr::from_rows(from.dofs.n_scalar, rows)
}

/// Transfer operators between consecutive levels of a hierarchy.
#[derive(Clone, Debug)]
pub struct TransferSet {
    pub coarse_level: usize,
    pub fine_level: usize,
    /// `prolongation[k - coarse_level]` maps level `k` to `k + 1`.
    prolongation: Vec<Csr>,
    /// `state_restriction[k - coarse_level]` maps level `k + 1` to `k`.
    state_restriction: Vec<Csr>,
    /// Fine node with the largest interpolation weight per coarse node.
    dominant: Vec<Vec<u32>>,
}

impl TransferSet {
    pub fn new(hierarchy: &MeshHierarchy, coarse_level: usize) -> Result<Self, Error> {
        let fine_level = hierarchy.max_level();
        if coarse_level > fine_level {
            return Err(Error::LevelOutOfRange {
                level: coarse_level,
                n_levels: hierarchy.levels.len(),
            });
        }
        let mut prolongation = Vec::new();
        let mut state_restriction = Vec::new();
        let mut dominant = Vec::new();
        for k in coarse_level..fine_level {
            let coarse = &hierarchy.levels[k];
            let fine = &hierarchy.levels[k + 1];
            prolongation.push(nodal_interpolation(coarse, fine));
            let r = nodal_interpolation(fine, coarse);
            dominant.push(
                (0..r.n_rows)
                    .map(|i| {
                        r.row(i)
                            .fold((0usize, f64::NEG_INFINITY), |best, (j, w)| if w > best.1 { (j, w) } else { best })
                            .0 as u32
                    })
                    .collect(),
            );
            state_restriction.push(r);
        }
        Ok(TransferSet {
            coarse_level,
            fine_level,
            prolongation,
            state_restriction,
            dominant,
        })
    }

    fn index(&self, coarse: usize) -> Result<usize, Error> {
        if coarse < self.coarse_level || coarse >= self.fine_level {
            return Err(Error::LevelOutOfRange {
                level: coarse,
                n_levels: self.fine_level + 1,
            });
        }
        Ok(coarse - self.coarse_level)
    }

    /// Scalar prolongation from `coarse` to `coarse + 1`.
    pub fn prolongation(&self, coarse: usize) -> Result<&Csr, Error> {
        Ok(&self.prolongation[self.index(coarse)?])
    }

    /// Prolongates a monolithic vector from `coarse` to `coarse + 1`.
    pub fn prolongate(&self, coarse: usize, x: &[f64]) -> Result<Vec<f64>, Error> {
        let p = self.prolongation(coarse)?;
        check(x.len(), N_COMPONENTS * p.n_cols)?;
        let (sc, sf) = (p.n_cols, p.n_rows);
        let mut out = vec![0.0; N_COMPONENTS * sf];
        for c in 0..N_COMPONENTS {
            p.spmv(&x[c * sc..(c + 1) * sc], &mut out[c * sf..(c + 1) * sf]);
        }
        Ok(out)
    }

    /// Transpose of [`Self::prolongate`], from `coarse + 1` to `coarse`.
    pub fn restrict(&self, coarse: usize, x: &[f64]) -> Result<Vec<f64>, Error> {
        let p = self.prolongation(coarse)?;
        check(x.len(), N_COMPONENTS * p.n_rows)?;
        let (sc, sf) = (p.n_cols, p.n_rows);
        let mut out = vec![0.0; N_COMPONENTS * sc];
        for c in 0..N_COMPONENTS {
            p.spmv_transpose(&x[c * sf..(c + 1) * sf], &mut out[c * sc..(c + 1) * sc]);
        }
        Ok(out)
    }

    /// Transfers a linearization state from `coarse + 1` to `coarse`:
    /// fields are interpolated at the coarse support points (injection
    /// where nodes coincide), constraint flags are taken from the fine node
    /// with the largest interpolation weight.
    pub fn restrict_state(&self, coarse: usize, fine: &LinearizationState) -> Result<LinearizationState, Error> {
        let i = self.index(coarse)?;
        let r = &self.state_restriction[i];
        let dom = &self.dominant[i];
        check(fine.n_scalar(), r.n_cols)?;
        let (sc, sf) = (r.n_rows, r.n_cols);
        let mut out = LinearizationState::new(sc, fine.params, fine.split);
        let mut sol = vec![0.0; N_COMPONENTS * sc];
        for c in 0..N_COMPONENTS {
            r.spmv(&fine.solution()[c * sf..(c + 1) * sf], &mut sol[c * sc..(c + 1) * sc]);
        }
        out.set_solution(&sol)?;
        let mut tmp = vec![0.0; sc];
        r.spmv(fine.phi_tilde(), &mut tmp);
        out.set_phi_tilde(&tmp)?;
        r.spmv(fine.phi_old(), &mut tmp);
        out.set_phi_old(&tmp)?;
        let fd = fine.dirichlet_mask();
        let mut dir = vec![false; N_COMPONENTS * sc];
        for c in 0..N_COMPONENTS {
            for (k, &j) in dom.iter().enumerate() {
                dir[c * sc + k] = fd[c * sf + j as usize];
            }
        }
        out.set_dirichlet_mask(&dir)?;
        let act: Vec<bool> = dom.iter().map(|&j| fine.active_mask()[j as usize]).collect();
        out.set_active_mask(&act)?;
        Ok(out)
    }
}

fn check(got: usize, expected: usize) -> Result<(), Error> {
    if got != expected {
        Err(Error::DimensionMismatch { expected, got })
    } else {
        Ok(())
    }
}

/// Restricts a state from the finest level of `transfers` down to `target`.
pub fn restrict_state_to_level(
    transfers: &TransferSet,
    state: &LinearizationState,
    target: usize,
) -> Result<LinearizationState, Error> {
    if target > transfers.fine_level || target < transfers.coarse_level {
        return Err(Error::LevelOutOfRange {
            level: target,
            n_levels: transfers.fine_level + 1,
        });
    }
    let mut s = state.clone();
    for k in (target..transfers.fine_level).rev() {
        s = transfers.restrict_state(k, &s)?;
    }
    Ok(s)
}

/// Extreme Ritz values of `D^{-1/2} A D^{-1/2}` after at most `iterations`
/// Lanczos steps. Entries with `mask[i]` set are excluded from the start
/// vector.
pub fn estimate_eigenvalues<F>(apply: F, diag: &[f64], mask: Option<&[bool]>, iterations: usize) -> Result<(f64, f64), Error>
where
    F: Fn(&[f64], &mut [f64]) -> Result<(), Error>,
{
    let n = diag.len();
    let inv_sqrt: Vec<f64> = diag.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v: Vec<f64> = (0..n)
        .map(|i| {
            if mask.is_some_and(|m| m[i]) {
                0.0
            } else {
                rng.gen_range(0.5..1.5)
            }
        })
        .collect();
    let nv = norm(&v);
    if nv == 0.0 {
        return Ok((1.0, 1.0));
    }
    v.iter_mut().for_each(|x| *x /= nv);
    let mut v_prev = vec![0.0; n];
    let mut alphas = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut tmp = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut beta = 0.0;
    for _ in 0..iterations.max(1) {
        for i in 0..n {
            tmp[i] = v[i] * inv_sqrt[i];
        }
        apply(&tmp, &mut w)?;
        for i in 0..n {
            w[i] *= inv_sqrt[i];
        }
        let alpha = dot(&w, &v);
        for i in 0..n {
            w[i] -= alpha * v[i] + beta * v_prev[i];
        }
        alphas.push(alpha);
        beta = norm(&w);
        if beta <= 1e-12 * alpha.abs().max(1e-300) {
            break;
        }
        betas.push(beta);
        std::mem::swap(&mut v_prev, &mut v);
        for i in 0..n {
            v[i] = w[i] / beta;
        }
    }
    let k = alphas.len();
    let t = DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            alphas[i]
        } else if i + 1 == j {
            betas[i]
        } else if j + 1 == i {
            betas[j]
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(t).eigenvalues;
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok((min, max))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChebyshevMode {
    /// Damps the upper part `[c λ_max, C λ_max]` of the spectrum.
    Smoother,
    /// Targets `[max(λ_min, 10⁻³ λ_max), C λ_max]`.
    Solver,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChebyshevConfig {
    pub sweeps: usize,
    pub lower_factor: f64,
    pub upper_factor: f64,
    pub mode: ChebyshevMode,
    pub lambda_max: Option<f64>,
    pub lambda_min: Option<f64>,
}

impl Default for ChebyshevConfig {
    fn default() -> Self {
        ChebyshevConfig {
            sweeps: 5,
            lower_factor: 0.24,
            upper_factor: 1.2,
            mode: ChebyshevMode::Smoother,
            lambda_max: None,
            lambda_min: None,
        }
    }
}

/// Diagonally preconditioned Chebyshev iteration with zero initial guess
/// and a fixed number of sweeps. Masked entries return `rhs / diag`.
pub fn chebyshev_apply<F>(
    apply: F,
    diag: &[f64],
    mask: Option<&[bool]>,
    cfg: &ChebyshevConfig,
    rhs: &[f64],
) -> Result<Vec<f64>, Error>
where
    F: Fn(&[f64], &mut [f64]) -> Result<(), Error>,
{
    let lmax = cfg.lambda_max.ok_or(Error::MissingEigenvalueEstimate)?;
    if !(lmax > 0.0) {
        return Err(Error::MissingEigenvalueEstimate);
    }
    let n = rhs.len();
    check(diag.len(), n)?;
    let lmin = cfg.lambda_min.unwrap_or(0.0);
    let mut x: Vec<f64> = rhs.iter().zip(diag).map(|(r, d)| r / d).collect();
    if lmax - lmin <= 1e-12 * lmax {
        // single-point spectrum: the scaled operator is a multiple of I
        x.iter_mut().for_each(|v| *v /= lmax);
    } else {
        let hi = cfg.upper_factor * lmax;
        let lo = match cfg.mode {
            ChebyshevMode::Smoother => cfg.lower_factor * lmax,
            ChebyshevMode::Solver => lmin.max(1e-3 * lmax),
        };
        let theta = 0.5 * (hi + lo);
        let delta = 0.5 * (hi - lo);
        let sigma = theta / delta;
        let mut rho = 1.0 / sigma;
        let mut d: Vec<f64> = x.iter().map(|v| v / theta).collect();
        x.copy_from_slice(&d);
        let mut ax = vec![0.0; n];
        for _ in 1..cfg.sweeps {
            apply(&x, &mut ax)?;
            let rho_next = 1.0 / (2.0 * sigma - rho);
            for i in 0..n {
                let r = (rhs[i] - ax[i]) / diag[i];
                d[i] = rho_next * rho * d[i] + 2.0 * rho_next / delta * r;
                x[i] += d[i];
            }
            rho = rho_next;
        }
    }
    if let Some(m) = mask {
        for i in 0..n {
            if m[i] {
                x[i] = rhs[i] / diag[i];
            }
        }
    }
    Ok(x)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MultigridConfig {
    pub coarse_level: usize,
    pub sweeps: usize,
    pub coarse_sweeps: usize,
    pub lower_factor: f64,
    pub upper_factor: f64,
    pub lanczos_iterations: usize,
}

impl Default for MultigridConfig {
    fn default() -> Self {
        MultigridConfig {
            coarse_level: 2,
            sweeps: 5,
            coarse_sweeps: 32,
            lower_factor: 0.24,
            upper_factor: 1.2,
            lanczos_iterations: 30,
        }
    }
}

/// Smoother data of one diagonal block on one level.
#[derive(Clone, Debug)]
pub struct BlockSmoother {
    pub diag: Vec<f64>,
    pub mask: Vec<bool>,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

pub struct MultigridLevel<'a> {
    pub operator: PffOperator<'a>,
    pub u: BlockSmoother,
    pub phi: BlockSmoother,
}

/// Apply one diagonal block on block-length vectors.
fn block_apply(op: &PffOperator, block: Block, x: &[f64], y: &mut [f64]) -> Result<(), Error> {
    let n = op.n_dofs();
    let s2 = 2 * op.state().n_scalar();
    let range = if block == Block::Uu { 0..s2 } else { s2..n };
    let mut full = vec![0.0; n];
    full[range.clone()].copy_from_slice(x);
    let mut out = vec![0.0; n];
    op.apply_block(block, &full, &mut out)?;
    y.copy_from_slice(&out[range]);
    Ok(())
}

impl<'a> MultigridLevel<'a> {
    fn new(operator: PffOperator<'a>, iterations: usize) -> Result<Self, Error> {
        let s2 = 2 * operator.state().n_scalar();
        let mask = operator.state().constrained_mask().to_vec();
        let mut blocks = Vec::new();
        for (block, range) in [(Block::Uu, 0..s2), (Block::PhiPhi, s2..mask.len())] {
            let diag = operator.block_diagonal(block)?;
            let m = mask[range].to_vec();
            let (lmin, lmax) =
                estimate_eigenvalues(|x, y| block_apply(&operator, block, x, y), &diag, Some(&m), iterations)?;
            blocks.push(BlockSmoother {
                diag,
                mask: m,
                lambda_min: lmin,
                lambda_max: lmax,
            });
        }
        let phi = blocks.pop().expect("two blocks");
        let u = blocks.pop().expect("two blocks");
        Ok(MultigridLevel { operator, u, phi })
    }

    fn smooth_block(&self, block: Block, cfg: &ChebyshevConfig, rhs: &[f64]) -> Result<Vec<f64>, Error> {
        let b = if block == Block::Uu { &self.u } else { &self.phi };
        let cfg = ChebyshevConfig {
            lambda_max: Some(b.lambda_max),
            lambda_min: Some(b.lambda_min),
            ..*cfg
        };
        chebyshev_apply(
            |x, y| block_apply(&self.operator, block, x, y),
            &b.diag,
            Some(&b.mask),
            &cfg,
            rhs,
        )
    }

    /// Block forward sweep: `x_u = S_uu r_u`, `x_φ = S_φφ (r_φ − G_φu x_u)`.
    fn block_sweep(&self, cfg: &ChebyshevConfig, r: &[f64]) -> Result<Vec<f64>, Error> {
        let n = r.len();
        let s2 = 2 * self.operator.state().n_scalar();
        let mut x = vec![0.0; n];
        let xu = self.smooth_block(Block::Uu, cfg, &r[..s2])?;
        x[..s2].copy_from_slice(&xu);
        let mut coupling = vec![0.0; n];
        self.operator.apply_block(Block::PhiU, &x, &mut coupling)?;
        let r_phi: Vec<f64> = r[s2..].iter().zip(&coupling[s2..]).map(|(a, b)| a - b).collect();
        let xp = self.smooth_block(Block::PhiPhi, cfg, &r_phi)?;
        x[s2..].copy_from_slice(&xp);
        Ok(x)
    }
}

/// V-cycle preconditioner over levels `coarse_level..=finest`. Owns one
/// operator per level; the finest one is the system operator.
pub struct Multigrid<'a> {
    pub config: MultigridConfig,
    transfers: &'a TransferSet,
    levels: Vec<MultigridLevel<'a>>,
}

impl<'a> Multigrid<'a> {
    pub fn build(
        hierarchy: &'a MeshHierarchy,
        transfers: &'a TransferSet,
        fine_state: LinearizationState,
        config: MultigridConfig,
        options: OperatorOptions,
    ) -> Result<Self, Error> {
        let fine = hierarchy.max_level();
        if config.coarse_level != transfers.coarse_level || transfers.fine_level != fine {
            return Err(Error::Config("transfer set does not match the multigrid levels".into()));
        }
        if config.coarse_level < 2 || config.coarse_level > fine {
            return Err(Error::LevelOutOfRange {
                level: config.coarse_level,
                n_levels: fine + 1,
            });
        }
        let mut states = vec![fine_state];
        for k in (config.coarse_level..fine).rev() {
            let next = transfers.restrict_state(k, states.last().expect("non-empty"))?;
            states.push(next);
        }
        states.reverse();
        let mut levels = Vec::with_capacity(states.len());
        for (i, st) in states.into_iter().enumerate() {
            let level = &hierarchy.levels[config.coarse_level + i];
            let op = PffOperator::new(level, st, options)?;
            levels.push(MultigridLevel::new(op, config.lanczos_iterations)?);
        }
        let mg = Multigrid {
            config,
            transfers,
            levels,
        };
        log::debug!("{}", mg.diagnostics());
        Ok(mg)
    }

    pub fn fine(&self) -> &PffOperator<'a> {
        &self.levels.last().expect("non-empty").operator
    }

    pub fn levels(&self) -> &[MultigridLevel<'a>] {
        &self.levels
    }

    /// One line: level count, eigenvalue estimates, sweeps.
    pub fn diagnostics(&self) -> String {
        let est: Vec<String> = self
            .levels
            .iter()
            .enumerate()
            .map(|(i, l)| {
                format!(
                    "L{}: uu {:.3} phiphi {:.3}",
                    self.config.coarse_level + i,
                    l.u.lambda_max,
                    l.phi.lambda_max
                )
            })
            .collect();
        format!(
            "multigrid levels {} lambda_max [{}] sweeps {} coarse sweeps {}",
            self.levels.len(),
            est.join(", "),
            self.config.sweeps,
            self.config.coarse_sweeps
        )
    }

    fn smoother_config(&self) -> ChebyshevConfig {
        ChebyshevConfig {
            sweeps: self.config.sweeps,
            lower_factor: self.config.lower_factor,
            upper_factor: self.config.upper_factor,
            mode: ChebyshevMode::Smoother,
            lambda_max: None,
            lambda_min: None,
        }
    }

    /// One V-cycle for `G z = rhs` on the finest level.
    pub fn v_cycle(&self, rhs: &[f64]) -> Result<Vec<f64>, Error> {
        check(rhs.len(), self.fine().n_dofs())?;
        self.cycle(self.levels.len() - 1, rhs)
    }

    fn cycle(&self, idx: usize, rhs: &[f64]) -> Result<Vec<f64>, Error> {
        let lvl = &self.levels[idx];
        if idx == 0 {
            let cfg = ChebyshevConfig {
                sweeps: self.config.coarse_sweeps,
                mode: ChebyshevMode::Solver,
                ..self.smoother_config()
            };
            return lvl.block_sweep(&cfg, rhs);
        }
        let cfg = self.smoother_config();
        let op = &lvl.operator;
        let n = rhs.len();
        let mask = op.state().constrained_mask();
        let mut x = lvl.block_sweep(&cfg, rhs)?;
        let mut ax = vec![0.0; n];
        let residual = |x: &[f64], ax: &mut Vec<f64>| -> Result<Vec<f64>, Error> {
            op.apply_jacobian(x, ax)?;
            Ok(rhs
                .iter()
                .zip(ax.iter())
                .zip(mask)
                .map(|((b, a), &m)| if m { 0.0 } else { b - a })
                .collect())
        };
        let r = residual(&x, &mut ax)?;
        let coarse_level = self.config.coarse_level + idx - 1;
        let mut rc = self.transfers.restrict(coarse_level, &r)?;
        let coarse_mask = self.levels[idx - 1].operator.state().constrained_mask();
        for (v, &m) in rc.iter_mut().zip(coarse_mask) {
            if m {
                *v = 0.0;
            }
        }
        let ec = self.cycle(idx - 1, &rc)?;
        let ef = self.transfers.prolongate(coarse_level, &ec)?;
        for ((xi, e), &m) in x.iter_mut().zip(&ef).zip(mask) {
            if !m {
                *xi += e;
            }
        }
        let r = residual(&x, &mut ax)?;
        let dx = lvl.block_sweep(&cfg, &r)?;
        for ((xi, d), &m) in x.iter_mut().zip(&dx).zip(mask) {
            if !m {
                *xi += d;
            }
        }
        Ok(x)
    }
}

impl Preconditioner for Multigrid<'_> {
    fn apply(&self, r: &[f64], z: &mut [f64]) -> Result<(), Error> {
        let x = self.v_cycle(r)?;
        z.copy_from_slice(&x);
        Ok(())
    }
}
