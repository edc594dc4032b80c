//! One-dimensional Lagrange bases on `[0, 1]` and the tensor-product
//! (sum-factorized) cell kernels built from them.

use crate::lanes::Real;
use crate::Error;

/// Largest polynomial degree the fixed-size kernel buffers are sized for.
pub const MAX_DEGREE: usize = 4;
/// `(MAX_DEGREE + 1)^2`: nodes (and quadrature points) per cell at most.
pub const MAX_CELL_POINTS: usize = (MAX_DEGREE + 1) * (MAX_DEGREE + 1);

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    // P_n(x) and P_n'(x) by the three-term recurrence
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let dp = if (1.0 - x * x).abs() < 1e-300 {
        // endpoint limit: P_n'(±1) = (±1)^(n-1) n(n+1)/2
        let s = if x > 0.0 || n % 2 == 1 { 1.0 } else { -1.0 };
        s * nf * (nf + 1.0) / 2.0
    } else {
        nf * (p0 - x * p1) / (1.0 - x * x)
    };
    (p1, dp)
}

/// Gauss-Legendre points and weights mapped to `[0, 1]`, ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut pts = vec![0.0; n];
    let mut wts = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        // reversed so points ascend
        pts[n - 1 - i] = 0.5 * (x + 1.0);
        wts[n - 1 - i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    (pts, wts)
}

/// Gauss-Lobatto points on `[0, 1]` (`n >= 2` points, endpoints included).
pub fn gauss_lobatto(n: usize) -> Vec<f64> {
    assert!(n >= 2);
    let deg = n - 1;
    let mut pts = vec![0.0; n];
    for (i, pt) in pts.iter_mut().enumerate() {
        let mut x = -(std::f64::consts::PI * i as f64 / deg as f64).cos();
        if i == 0 || i == deg {
            *pt = if i == 0 { 0.0 } else { 1.0 };
            continue;
        }
        for _ in 0..100 {
            let (p, _) = legendre_with_derivative(deg, x);
            let (pm1, _) = legendre_with_derivative(deg - 1, x);
            let dx = (x * p - pm1) / (n as f64 * p);
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        *pt = 0.5 * (x + 1.0);
    }
    pts
}

/// Nodal support points of the 1D degree-`p` basis.
pub fn support_points(degree: usize) -> Vec<f64> {
    if degree == 1 {
        vec![0.0, 1.0]
    } else {
        gauss_lobatto(degree + 1)
    }
}

/// Values of all Lagrange polynomials through `nodes` at `x`.
pub fn lagrange_values(nodes: &[f64], x: f64) -> Vec<f64> {
    (0..nodes.len())
        .map(|j| {
            nodes
                .iter()
                .enumerate()
                .filter(|&(m, _)| m != j)
                .map(|(_, &xm)| (x - xm) / (nodes[j] - xm))
                .product()
        })
        .collect()
}

/// Derivatives of all Lagrange polynomials through `nodes` at `x`.
pub fn lagrange_derivatives(nodes: &[f64], x: f64) -> Vec<f64> {
    let n = nodes.len();
    (0..n)
        .map(|j| {
            let mut sum = 0.0;
            for k in 0..n {
                if k == j {
                    continue;
                }
                let mut term = 1.0 / (nodes[j] - nodes[k]);
                for m in 0..n {
                    if m != j && m != k {
                        term *= (x - nodes[m]) / (nodes[j] - nodes[m]);
                    }
                }
                sum += term;
            }
            sum
        })
        .collect()
}

/// 1D shape data on the unit interval for the degree-`p` Lagrange basis,
/// tabulated at `p + 1` Gauss-Legendre points.
#[derive(Clone, Debug)]
pub struct ShapeData {
    degree: usize,
    support: Vec<f64>,
    q_points: Vec<f64>,
    q_weights: Vec<f64>,
    /// `values[qi * (p+1) + j]`
    values: Vec<f64>,
    derivs: Vec<f64>,
    weights_2d: Vec<f64>,
}

impl ShapeData {
    pub fn new(degree: usize) -> Result<Self, Error> {
        if degree == 0 || degree > MAX_DEGREE {
            return Err(Error::Config(format!(
                "polynomial degree must be in 1..={MAX_DEGREE}, got {degree}"
            )));
        }
        let support = support_points(degree);
        let (q_points, q_weights) = gauss_legendre(degree + 1);
        let mut values = Vec::with_capacity(q_points.len() * support.len());
        let mut derivs = Vec::with_capacity(q_points.len() * support.len());
        for &x in &q_points {
            values.extend(lagrange_values(&support, x));
            derivs.extend(lagrange_derivatives(&support, x));
        }
        let mut weights_2d = Vec::with_capacity(q_points.len().pow(2));
        for &wy in &q_weights {
            for &wx in &q_weights {
                weights_2d.push(wx * wy);
            }
        }
        Ok(ShapeData {
            degree,
            support,
            q_points,
            q_weights,
            values,
            derivs,
            weights_2d,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }
    /// Basis functions per direction, `p + 1`.
    pub fn n_dofs_1d(&self) -> usize {
        self.degree + 1
    }
    /// Quadrature points per direction, `p + 1`.
    pub fn n_q_1d(&self) -> usize {
        self.q_points.len()
    }
    pub fn dofs_per_cell(&self) -> usize {
        self.n_dofs_1d() * self.n_dofs_1d()
    }
    pub fn q_per_cell(&self) -> usize {
        self.n_q_1d() * self.n_q_1d()
    }
    pub fn support(&self) -> &[f64] {
        &self.support
    }
    pub fn q_points(&self) -> &[f64] {
        &self.q_points
    }
    pub fn q_weights(&self) -> &[f64] {
        &self.q_weights
    }
    /// Tensor-product reference weights, x fastest.
    pub fn weights_2d(&self) -> &[f64] {
        &self.weights_2d
    }
    #[inline(always)]
    pub fn value(&self, q: usize, j: usize) -> f64 {
        self.values[q * (self.degree + 1) + j]
    }
    #[inline(always)]
    pub fn deriv(&self, q: usize, j: usize) -> f64 {
        self.derivs[q * (self.degree + 1) + j]
    }

    /// Bytes held by the tabulated data.
    pub fn memory_bytes(&self) -> usize {
        8 * (self.support.len()
            + self.q_points.len()
            + self.q_weights.len()
            + self.values.len()
            + self.derivs.len()
            + self.weights_2d.len())
    }
}

/// Sum-factorized interpolation to quadrature points.
///
/// `coeffs` holds `(p+1)^2` nodal values (x fastest). Writes values and
/// reference-cell derivatives (no `1/h` scaling) at the `q^2` points.
#[inline]
pub fn interpolate<T: Real>(
    sd: &ShapeData,
    coeffs: &[T],
    val: &mut [T],
    d_xi: &mut [T],
    d_eta: &mut [T],
) {
    let nd = sd.n_dofs_1d();
    let nq = sd.n_q_1d();
    let mut t_n = [T::zero(); MAX_CELL_POINTS];
    let mut t_d = [T::zero(); MAX_CELL_POINTS];
    // contract x: t[jy][qx]
    for jy in 0..nd {
        let row = &coeffs[jy * nd..(jy + 1) * nd];
        for qx in 0..nq {
            let mut sn = T::zero();
            let mut sdv = T::zero();
            for (i, &c) in row.iter().enumerate() {
                sn += T::splat(sd.value(qx, i)) * c;
                sdv += T::splat(sd.deriv(qx, i)) * c;
            }
            t_n[jy * nq + qx] = sn;
            t_d[jy * nq + qx] = sdv;
        }
    }
    // contract y
    for qy in 0..nq {
        for qx in 0..nq {
            let mut v = T::zero();
            let mut gx = T::zero();
            let mut gy = T::zero();
            for jy in 0..nd {
                let n = T::splat(sd.value(qy, jy));
                let d = T::splat(sd.deriv(qy, jy));
                v += n * t_n[jy * nq + qx];
                gx += n * t_d[jy * nq + qx];
                gy += d * t_n[jy * nq + qx];
            }
            val[qy * nq + qx] = v;
            d_xi[qy * nq + qx] = gx;
            d_eta[qy * nq + qx] = gy;
        }
    }
}

/// Reference derivatives only (no values), for vector components where
/// only the gradient enters.
#[inline]
pub fn interpolate_gradient<T: Real>(sd: &ShapeData, coeffs: &[T], d_xi: &mut [T], d_eta: &mut [T]) {
    let nd = sd.n_dofs_1d();
    let nq = sd.n_q_1d();
    let mut t_n = [T::zero(); MAX_CELL_POINTS];
    let mut t_d = [T::zero(); MAX_CELL_POINTS];
    for jy in 0..nd {
        let row = &coeffs[jy * nd..(jy + 1) * nd];
        for qx in 0..nq {
            let mut sn = T::zero();
            let mut sdv = T::zero();
            for (i, &c) in row.iter().enumerate() {
                sn += T::splat(sd.value(qx, i)) * c;
                sdv += T::splat(sd.deriv(qx, i)) * c;
            }
            t_n[jy * nq + qx] = sn;
            t_d[jy * nq + qx] = sdv;
        }
    }
    for qy in 0..nq {
        for qx in 0..nq {
            let mut gx = T::zero();
            let mut gy = T::zero();
            for jy in 0..nd {
                gx += T::splat(sd.value(qy, jy)) * t_d[jy * nq + qx];
                gy += T::splat(sd.deriv(qy, jy)) * t_n[jy * nq + qx];
            }
            d_xi[qy * nq + qx] = gx;
            d_eta[qy * nq + qx] = gy;
        }
    }
}

/// Values only.
#[inline]
pub fn interpolate_values<T: Real>(sd: &ShapeData, coeffs: &[T], val: &mut [T]) {
    let nd = sd.n_dofs_1d();
    let nq = sd.n_q_1d();
    let mut t_n = [T::zero(); MAX_CELL_POINTS];
    for jy in 0..nd {
        let row = &coeffs[jy * nd..(jy + 1) * nd];
        for qx in 0..nq {
            let mut sn = T::zero();
            for (i, &c) in row.iter().enumerate() {
                sn += T::splat(sd.value(qx, i)) * c;
            }
            t_n[jy * nq + qx] = sn;
        }
    }
    for qy in 0..nq {
        for qx in 0..nq {
            let mut v = T::zero();
            for jy in 0..nd {
                v += T::splat(sd.value(qy, jy)) * t_n[jy * nq + qx];
            }
            val[qy * nq + qx] = v;
        }
    }
}

/// Transpose of [`interpolate`]: tests quadrature data against every basis
/// function and adds the result into `out`. Any of the three inputs may be
/// omitted. Weights and geometry factors must already be applied.
#[inline]
pub fn integrate_add<T: Real>(
    sd: &ShapeData,
    val: Option<&[T]>,
    d_xi: Option<&[T]>,
    d_eta: Option<&[T]>,
    out: &mut [T],
) {
    let nd = sd.n_dofs_1d();
    let nq = sd.n_q_1d();
    let mut s_n = [T::zero(); MAX_CELL_POINTS];
    let mut s_d = [T::zero(); MAX_CELL_POINTS];
    // contract y: s[jy][qx]
    for jy in 0..nd {
        for qx in 0..nq {
            let mut sn = T::zero();
            let mut sdv = T::zero();
            for qy in 0..nq {
                let n = T::splat(sd.value(qy, jy));
                let q = qy * nq + qx;
                if let Some(v) = val {
                    sn += n * v[q];
                }
                if let Some(ge) = d_eta {
                    sn += T::splat(sd.deriv(qy, jy)) * ge[q];
                }
                if let Some(gx) = d_xi {
                    sdv += n * gx[q];
                }
            }
            s_n[jy * nq + qx] = sn;
            s_d[jy * nq + qx] = sdv;
        }
    }
    // contract x
    for jy in 0..nd {
        for i in 0..nd {
            let mut acc = T::zero();
            for qx in 0..nq {
                acc += T::splat(sd.value(qx, i)) * s_n[jy * nq + qx];
                if d_xi.is_some() {
                    acc += T::splat(sd.deriv(qx, i)) * s_d[jy * nq + qx];
                }
            }
            out[jy * nd + i] += acc;
        }
    }
}

/// Values and physical gradients at the quadrature points of one cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellValues {
    pub values: Vec<f64>,
    pub grad_x: Vec<f64>,
    pub grad_y: Vec<f64>,
}

/// Evaluates a local coefficient vector on an axis-aligned square cell of
/// side `h`.
pub fn evaluate_on_cell(sd: &ShapeData, coeffs: &[f64], h: f64) -> Result<CellValues, Error> {
    if coeffs.len() != sd.dofs_per_cell() {
        return Err(Error::DimensionMismatch {
            expected: sd.dofs_per_cell(),
            got: coeffs.len(),
        });
    }
    let nq = sd.q_per_cell();
    let mut values = vec![0.0; nq];
    let mut grad_x = vec![0.0; nq];
    let mut grad_y = vec![0.0; nq];
    interpolate(sd, coeffs, &mut values, &mut grad_x, &mut grad_y);
    let inv_h = 1.0 / h;
    grad_x.iter_mut().for_each(|g| *g *= inv_h);
    grad_y.iter_mut().for_each(|g| *g *= inv_h);
    Ok(CellValues {
        values,
        grad_x,
        grad_y,
    })
}

/// Computes `∫ v φ_i + g · ∇φ_i` over a square cell of side `h` from data
/// at the quadrature points (the transpose of [`evaluate_on_cell`] with the
/// quadrature weights and Jacobian determinant included).
pub fn integrate_on_cell(
    sd: &ShapeData,
    values: Option<&[f64]>,
    gradients: Option<(&[f64], &[f64])>,
    h: f64,
) -> Result<Vec<f64>, Error> {
    let nq = sd.q_per_cell();
    let check = |len: usize| {
        if len != nq {
            Err(Error::DimensionMismatch {
                expected: nq,
                got: len,
            })
        } else {
            Ok(())
        }
    };
    let jxw: Vec<f64> = sd.weights_2d().iter().map(|w| w * h * h).collect();
    let v = match values {
        Some(v) => {
            check(v.len())?;
            Some(v.iter().zip(&jxw).map(|(a, w)| a * w).collect::<Vec<_>>())
        }
        None => None,
    };
    let g = match gradients {
        Some((gx, gy)) => {
            check(gx.len())?;
            check(gy.len())?;
            let gx: Vec<f64> = gx.iter().zip(&jxw).map(|(a, w)| a * w / h).collect();
            let gy: Vec<f64> = gy.iter().zip(&jxw).map(|(a, w)| a * w / h).collect();
            Some((gx, gy))
        }
        None => None,
    };
    let mut out = vec![0.0; sd.dofs_per_cell()];
    integrate_add(
        sd,
        v.as_deref(),
        g.as_ref().map(|g| g.0.as_slice()),
        g.as_ref().map(|g| g.1.as_slice()),
        &mut out,
    );
    Ok(out)
}

/// Dense `q^2 × (p+1)^2` tabulation of the tensor-product basis: values and
/// reference derivatives. Used by the assembled reference path.
#[derive(Clone, Debug)]
pub struct DenseTabulation {
    pub n_q: usize,
    pub n_dofs: usize,
    pub values: Vec<f64>,
    pub d_xi: Vec<f64>,
    pub d_eta: Vec<f64>,
}

impl DenseTabulation {
    pub fn new(sd: &ShapeData) -> Self {
        let nd = sd.n_dofs_1d();
        let nq1 = sd.n_q_1d();
        let n_q = sd.q_per_cell();
        let n_dofs = sd.dofs_per_cell();
        let mut values = vec![0.0; n_q * n_dofs];
        let mut d_xi = vec![0.0; n_q * n_dofs];
        let mut d_eta = vec![0.0; n_q * n_dofs];
        for qy in 0..nq1 {
            for qx in 0..nq1 {
                let q = qy * nq1 + qx;
                for jy in 0..nd {
                    for jx in 0..nd {
                        let j = jy * nd + jx;
                        values[q * n_dofs + j] = sd.value(qx, jx) * sd.value(qy, jy);
                        d_xi[q * n_dofs + j] = sd.deriv(qx, jx) * sd.value(qy, jy);
                        d_eta[q * n_dofs + j] = sd.value(qx, jx) * sd.deriv(qy, jy);
                    }
                }
            }
        }
        DenseTabulation {
            n_q,
            n_dofs,
            values,
            d_xi,
            d_eta,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gauss_points_known_values() {
        let (p, w) = gauss_legendre(2);
        let a = 0.5 - 0.5 / 3f64.sqrt();
        assert!((p[0] - a).abs() < 1e-15 && (p[1] - (1.0 - a)).abs() < 1e-15);
        assert!((w[0] - 0.5).abs() < 1e-15 && (w[1] - 0.5).abs() < 1e-15);
        let l = gauss_lobatto(3);
        assert_eq!(l, vec![0.0, 0.5, 1.0]);
        let l4 = gauss_lobatto(4);
        let x = 0.5 - 0.5 / 5f64.sqrt();
        assert!((l4[1] - x).abs() < 1e-15);
    }

    #[test]
    fn partition_of_unity_and_derivative_sum() {
        for p in 1..=MAX_DEGREE {
            let sd = ShapeData::new(p).unwrap();
            for q in 0..sd.n_q_1d() {
                let s: f64 = (0..=p).map(|j| sd.value(q, j)).sum();
                let d: f64 = (0..=p).map(|j| sd.deriv(q, j)).sum();
                assert!((s - 1.0).abs() < 1e-13, "p={p}");
                assert!(d.abs() < 1e-12, "p={p}");
            }
        }
    }

    #[test]
    fn quadrature_exactness() {
        for n in 1..=MAX_DEGREE + 1 {
            let (x, w) = gauss_legendre(n);
            for k in 0..2 * n {
                let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(k as i32)).sum();
                assert!((s - 1.0 / (k as f64 + 1.0)).abs() < 1e-12, "n={n}, k={k}");
            }
        }
    }

    #[test]
    fn constant_and_linear_reproduction() {
        for p in 1..=MAX_DEGREE {
            let sd = ShapeData::new(p).unwrap();
            let c = vec![2.5; sd.dofs_per_cell()];
            let cv = evaluate_on_cell(&sd, &c, 1.0).unwrap();
            assert!(cv.values.iter().all(|v| (v - 2.5).abs() < 1e-13));
            assert!(cv.grad_x.iter().chain(&cv.grad_y).all(|g| g.abs() < 1e-12));

            let nd = p + 1;
            let s = sd.support();
            let lin: Vec<f64> = (0..nd * nd).map(|k| s[k % nd]).collect();
            let cv = evaluate_on_cell(&sd, &lin, 1.0).unwrap();
            let nq = sd.n_q_1d();
            for q in 0..nq * nq {
                assert!((cv.values[q] - sd.q_points()[q % nq]).abs() < 1e-13);
                assert!((cv.grad_x[q] - 1.0).abs() < 1e-12);
                assert!(cv.grad_y[q].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn factorized_matches_dense_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for p in 1..=MAX_DEGREE {
            let sd = ShapeData::new(p).unwrap();
            let tab = DenseTabulation::new(&sd);
            for _ in 0..100 {
                let c: Vec<f64> = (0..sd.dofs_per_cell()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let cv = evaluate_on_cell(&sd, &c, 1.0).unwrap();
                for q in 0..tab.n_q {
                    let row = |m: &[f64]| -> f64 {
                        (0..tab.n_dofs).map(|j| m[q * tab.n_dofs + j] * c[j]).sum()
                    };
                    let (v, gx, gy) = (row(&tab.values), row(&tab.d_xi), row(&tab.d_eta));
                    let scale = 1.0 + v.abs().max(gx.abs()).max(gy.abs());
                    assert!((cv.values[q] - v).abs() <= 1e-12 * scale);
                    assert!((cv.grad_x[q] - gx).abs() <= 1e-12 * scale);
                    assert!((cv.grad_y[q] - gy).abs() <= 1e-12 * scale);
                }
            }
        }
    }

    #[test]
    fn integrate_is_adjoint_of_evaluate() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 0.25;
        for p in 1..=MAX_DEGREE {
            let sd = ShapeData::new(p).unwrap();
            let x: Vec<f64> = (0..sd.dofs_per_cell()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let yv: Vec<f64> = (0..sd.q_per_cell()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let yx: Vec<f64> = (0..sd.q_per_cell()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let yy: Vec<f64> = (0..sd.q_per_cell()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let cv = evaluate_on_cell(&sd, &x, h).unwrap();
            let lhs: f64 = (0..sd.q_per_cell())
                .map(|q| {
                    let jxw = sd.weights_2d()[q] * h * h;
                    jxw * (cv.values[q] * yv[q] + cv.grad_x[q] * yx[q] + cv.grad_y[q] * yy[q])
                })
                .sum();
            let r = integrate_on_cell(&sd, Some(&yv), Some((&yx, &yy)), h).unwrap();
            let rhs: f64 = x.iter().zip(&r).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() <= 1e-13 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn integrating_one_gives_basis_integrals() {
        for p in 1..=MAX_DEGREE {
            let sd = ShapeData::new(p).unwrap();
            let ones = vec![1.0; sd.q_per_cell()];
            let r = integrate_on_cell(&sd, Some(&ones), None, 1.0).unwrap();
            // 1D oracle: ∫ L_j = Σ_q w_q N[q][j]
            let int1d: Vec<f64> = (0..=p)
                .map(|j| (0..sd.n_q_1d()).map(|q| sd.q_weights()[q] * sd.value(q, j)).sum())
                .collect();
            for jy in 0..=p {
                for jx in 0..=p {
                    let expect = int1d[jx] * int1d[jy];
                    assert!((r[jy * (p + 1) + jx] - expect).abs() < 1e-14);
                }
            }
            let total: f64 = r.iter().sum();
            assert!((total - 1.0).abs() < 1e-13);
            let zero = integrate_on_cell(&sd, Some(&vec![0.0; sd.q_per_cell()]), None, 1.0).unwrap();
            assert!(zero.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let sd = ShapeData::new(2).unwrap();
        assert!(evaluate_on_cell(&sd, &[1.0; 4], 1.0).is_err());
        assert!(integrate_on_cell(&sd, Some(&[1.0; 4]), None, 1.0).is_err());
        assert!(ShapeData::new(0).is_err());
        assert!(ShapeData::new(5).is_err());
    }
}
