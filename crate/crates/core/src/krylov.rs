//! Restarted GMRES with right preconditioning.

use crate::clock::Stopwatch;

use crate::operator::{dot, norm};
use crate::Error;

/// A fixed linear map `x ↦ A x`.
pub trait LinearOperator {
    fn n(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]) -> Result<(), Error>;
}

/// A fixed linear approximation `r ↦ M⁻¹ r`.
pub trait Preconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]) -> Result<(), Error>;
}

pub struct IdentityPreconditioner;

impl Preconditioner for IdentityPreconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]) -> Result<(), Error> {
        z.copy_from_slice(r);
        Ok(())
    }
}

/// Point Jacobi with a stored diagonal.
pub struct JacobiPreconditioner {
    pub inv_diag: Vec<f64>,
}

impl JacobiPreconditioner {
    pub fn new(diag: &[f64]) -> Self {
        JacobiPreconditioner {
            inv_diag: diag.iter().map(|d| 1.0 / d).collect(),
        }
    }
}

impl Preconditioner for JacobiPreconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]) -> Result<(), Error> {
        for ((zi, ri), d) in z.iter_mut().zip(r).zip(&self.inv_diag) {
            *zi = ri * d;
        }
        Ok(())
    }
}

/// Dense row-major matrix as an operator, for tests and small systems.
pub struct DenseOperator {
    pub n: usize,
    pub a: Vec<f64>,
}

impl LinearOperator for DenseOperator {
    fn n(&self) -> usize {
        self.n
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) -> Result<(), Error> {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = dot(&self.a[i * self.n..(i + 1) * self.n], x);
        }
        Ok(())
    }
}

impl LinearOperator for crate::sparse::Csr {
    fn n(&self) -> usize {
        self.n_rows
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) -> Result<(), Error> {
        self.spmv(x, y);
        Ok(())
    }
}

impl LinearOperator for crate::operator::PffOperator<'_> {
    fn n(&self) -> usize {
        self.n_dofs()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) -> Result<(), Error> {
        self.apply_jacobian(x, y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KrylovConfig {
    pub rel_tol: f64,
    pub max_iterations: usize,
    pub restart: usize,
    pub abs_floor: f64,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        KrylovConfig {
            rel_tol: 1e-6,
            max_iterations: 1000,
            restart: 100,
            abs_floor: 1e-30,
        }
    }
}

impl KrylovConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) || self.restart < 2 || self.max_iterations == 0 {
            return Err(Error::Config(format!("invalid Krylov settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct KrylovResult {
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// Relative residual `‖b − A x_k‖ / ‖b‖`, starting with the initial guess.
    pub residual_history: Vec<f64>,
    pub converged: bool,
    pub seconds: f64,
}

impl KrylovResult {
    pub fn final_residual(&self) -> f64 {
        *self.residual_history.last().unwrap_or(&0.0)
    }
}

/// Solves `A x = b` with right-preconditioned restarted GMRES (modified
/// Gram-Schmidt). Stops when `‖b − A x‖ ≤ rel_tol ‖b‖`. A non-converged
/// result is returned with `converged == false`.
pub fn gmres_solve<A: LinearOperator + ?Sized, M: Preconditioner + ?Sized>(
    a: &A,
    m: &M,
    b: &[f64],
    x0: Option<&[f64]>,
    cfg: &KrylovConfig,
) -> Result<KrylovResult, Error> {
    cfg.validate()?;
    let start = Stopwatch::start();
    let n = a.n();
    if b.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: b.len() });
    }
    let mut x = match x0 {
        Some(x0) => x0.to_vec(),
        None => vec![0.0; n],
    };
    let b_norm = norm(b);
    let target = (cfg.rel_tol * b_norm).max(cfg.abs_floor);
    let scale = if b_norm > 0.0 { 1.0 / b_norm } else { 1.0 };
    let mut r = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let residual = |x: &[f64], r: &mut [f64], tmp: &mut [f64]| -> Result<f64, Error> {
        a.apply(x, tmp)?;
        for ((ri, bi), ti) in r.iter_mut().zip(b).zip(tmp.iter()) {
            *ri = bi - ti;
        }
        Ok(norm(r))
    };
    let mut beta = residual(&x, &mut r, &mut tmp)?;
    let mut history = vec![beta * scale];
    let mut iterations = 0;
    let mk = cfg.restart;
    let mut v: Vec<Vec<f64>> = Vec::with_capacity(mk + 1);
    let mut z: Vec<Vec<f64>> = Vec::with_capacity(mk);
    let mut hess = vec![vec![0.0; mk]; mk + 1];
    let mut cs = vec![0.0; mk];
    let mut sn = vec![0.0; mk];
    let mut g = vec![0.0; mk + 1];

    while beta > target && iterations < cfg.max_iterations {
        v.clear();
        z.clear();
        v.push(r.iter().map(|ri| ri / beta).collect());
        g.fill(0.0);
        g[0] = beta;
        let mut k = 0;
        while k < mk && iterations < cfg.max_iterations {
            let mut zk = vec![0.0; n];
            m.apply(&v[k], &mut zk)?;
            let mut w = vec![0.0; n];
            a.apply(&zk, &mut w)?;
            z.push(zk);
            for (i, vi) in v.iter().enumerate() {
                let hik = dot(&w, vi);
                hess[i][k] = hik;
                for (wj, vj) in w.iter_mut().zip(vi) {
                    *wj -= hik * vj;
                }
            }
            let h_next = norm(&w);
            hess[k + 1][k] = h_next;
            for i in 0..k {
                let t = cs[i] * hess[i][k] + sn[i] * hess[i + 1][k];
                hess[i + 1][k] = -sn[i] * hess[i][k] + cs[i] * hess[i + 1][k];
                hess[i][k] = t;
            }
            let denom = (hess[k][k] * hess[k][k] + hess[k + 1][k] * hess[k + 1][k]).sqrt();
            if denom == 0.0 {
                // no progress possible in this cycle
                break;
            }
            cs[k] = hess[k][k] / denom;
            sn[k] = hess[k + 1][k] / denom;
            hess[k][k] = denom;
            hess[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            iterations += 1;
            k += 1;
            history.push(g[k].abs() * scale);
            let breakdown = h_next <= 1e-14 * denom;
            if g[k].abs() <= target || breakdown {
                break;
            }
            v.push(w.iter().map(|wi| wi / h_next).collect());
        }
        if k == 0 {
            break;
        }
        // back substitution
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for j in i + 1..k {
                s -= hess[i][j] * y[j];
            }
            y[i] = s / hess[i][i];
        }
        for (j, yj) in y.iter().enumerate() {
            for (xi, zi) in x.iter_mut().zip(&z[j]) {
                *xi += yj * zi;
            }
        }
        beta = residual(&x, &mut r, &mut tmp)?;
        if let Some(last) = history.last_mut() {
            *last = beta * scale;
        }
    }
    let converged = beta <= target;
    log::debug!(
        "gmres: {} iterations, relative residual {:.3e}, {:.3} s",
        iterations,
        beta * scale,
        start.seconds()
    );
    Ok(KrylovResult {
        solution: x,
        iterations,
        residual_history: history,
        converged,
        seconds: start.seconds(),
    })
}
