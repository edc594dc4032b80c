//! Elasticity with phase-field degradation and the spectral tensile /
//! compressive split.
//!
//! All tensor routines are generic over the scalar type ([`Real`]) so the
//! same code runs on one quadrature point or on a batch of lanes. Branches on
//! eigenvalue signs, trace signs and degenerate spectra go through
//! [`Real::select`].

use crate::lanes::{MaskOps, Real};

/// Lamé parameters, toughness and phase-field regularization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaterialParams {
    /// First Lamé parameter λ (kN/mm²).
    pub lambda: f64,
    /// Shear modulus μ (kN/mm²).
    pub mu: f64,
    /// Fracture toughness G_c (kN/mm).
    pub gc: f64,
    /// Degradation regularization κ.
    pub kappa: f64,
    /// Phase-field length scale ε (mm).
    pub eps: f64,
}

impl Default for MaterialParams {
    fn default() -> Self {
        MaterialParams {
            lambda: 121.15,
            mu: 80.77,
            gc: 2.7e-3,
            kappa: 1e-10,
            eps: 4e-3,
        }
    }
}

impl MaterialParams {
    pub fn validate(&self) -> Result<(), crate::Error> {
        let ok = self.mu > 0.0
            && self.lambda >= 0.0
            && self.gc > 0.0
            && self.kappa > 0.0
            && self.kappa < 1.0
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(crate::Error::Config(format!("invalid material parameters {self:?}")))
        }
    }
}

/// Energy split used for the degraded part of the elastic energy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitMode {
    /// No split: the whole elastic energy is degraded.
    Isotropic,
    /// Spectral split of the strain tensor.
    Miehe,
}

impl std::str::FromStr for SplitMode {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" | "isotropic" => Ok(SplitMode::Isotropic),
            "miehe" => Ok(SplitMode::Miehe),
            other => Err(crate::Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

impl std::fmt::Display for SplitMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SplitMode::Isotropic => "none",
            SplitMode::Miehe => "miehe",
        })
    }
}

/// `g(φ) = (1 − κ) φ² + κ`
#[inline(always)]
pub fn degradation<T: Real>(phi: T, kappa: f64) -> T {
    T::splat(1.0 - kappa) * phi * phi + T::splat(kappa)
}

/// `g'(φ) = 2 (1 − κ) φ`
#[inline(always)]
pub fn degradation_d1<T: Real>(phi: T, kappa: f64) -> T {
    T::splat(2.0 * (1.0 - kappa)) * phi
}

/// `g'' = 2 (1 − κ)`
#[inline(always)]
pub fn degradation_d2(kappa: f64) -> f64 {
    2.0 * (1.0 - kappa)
}

/// Symmetric `D × D` tensor (`D ∈ {2, 3}`) storing the upper triangle once:
/// diagonal entries first, then `(0,1)`, `(0,2)`, `(1,2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymTensor<T, const D: usize> {
    packed: [T; 6],
}

#[inline(always)]
const fn packed_index<const D: usize>(i: usize, j: usize) -> usize {
    let (a, b) = if i <= j { (i, j) } else { (j, i) };
    if a == b {
        a
    } else if D == 2 {
        2
    } else {
        // (0,1) → 3, (0,2) → 4, (1,2) → 5
        a + b + 2
    }
}

impl<T: Real, const D: usize> SymTensor<T, D> {
    pub const N_PACKED: usize = D * (D + 1) / 2;

    #[inline(always)]
    pub fn zero() -> Self {
        SymTensor {
            packed: [T::zero(); 6],
        }
    }

    pub fn identity() -> Self {
        let mut t = Self::zero();
        for i in 0..D {
            t.set(i, i, T::splat(1.0));
        }
        t
    }

    /// Symmetric part of a full matrix.
    pub fn from_full(m: [[T; D]; D]) -> Self {
        let mut t = Self::zero();
        for i in 0..D {
            for j in i..D {
                t.set(i, j, T::splat(0.5) * (m[i][j] + m[j][i]));
            }
        }
        t
    }

    pub fn to_full(&self) -> [[T; D]; D] {
        let mut m = [[T::zero(); D]; D];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.get(i, j);
            }
        }
        m
    }

    #[inline(always)]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.packed[packed_index::<D>(i, j)]
    }

    #[inline(always)]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.packed[packed_index::<D>(i, j)] = v;
    }

    #[inline(always)]
    pub fn trace(&self) -> T {
        let mut t = T::zero();
        for i in 0..D {
            t += self.packed[i];
        }
        t
    }

    /// `A : B`
    #[inline(always)]
    pub fn ddot(&self, other: &Self) -> T {
        let mut s = T::zero();
        for i in 0..D {
            s += self.packed[i] * other.packed[i];
        }
        for k in D..Self::N_PACKED {
            s += T::splat(2.0) * self.packed[k] * other.packed[k];
        }
        s
    }

    pub fn norm_frobenius(&self) -> T {
        self.ddot(self).sqrt()
    }

    #[inline(always)]
    pub fn scale(&self, s: T) -> Self {
        let mut out = *self;
        for k in 0..Self::N_PACKED {
            out.packed[k] = self.packed[k] * s;
        }
        out
    }

    #[inline(always)]
    pub fn add(&self, other: &Self) -> Self {
        let mut out = *self;
        for k in 0..Self::N_PACKED {
            out.packed[k] = self.packed[k] + other.packed[k];
        }
        out
    }

    #[inline(always)]
    pub fn sub(&self, other: &Self) -> Self {
        let mut out = *self;
        for k in 0..Self::N_PACKED {
            out.packed[k] = self.packed[k] - other.packed[k];
        }
        out
    }

    /// `self + s · I`
    #[inline(always)]
    pub fn add_identity(&self, s: T) -> Self {
        let mut out = *self;
        for k in 0..D {
            out.packed[k] += s;
        }
        out
    }

    #[inline(always)]
    pub fn mul_vec(&self, v: &[T; D]) -> [T; D] {
        let mut out = [T::zero(); D];
        for (i, o) in out.iter_mut().enumerate() {
            for (j, &vj) in v.iter().enumerate() {
                *o += self.get(i, j) * vj;
            }
        }
        out
    }

    /// `Σ_i w_i v_i ⊗ v_i`
    #[inline(always)]
    pub fn from_spectral(weights: &[T; D], vectors: &[[T; D]; D]) -> Self {
        let mut t = Self::zero();
        for r in 0..D {
            for c in r..D {
                let mut s = T::zero();
                for i in 0..D {
                    s += weights[i] * vectors[i][r] * vectors[i][c];
                }
                t.set(r, c, s);
            }
        }
        t
    }

    /// Closed-form eigensystem, eigenvalues descending.
    #[inline]
    pub fn eigensystem(&self) -> EigenSystem<T, D> {
        match D {
            2 => {
                let (values, vectors) = eig2(self.get(0, 0), self.get(1, 1), self.get(0, 1));
                let mut es = EigenSystem {
                    values: [T::zero(); D],
                    vectors: [[T::zero(); D]; D],
                };
                for i in 0..2 {
                    es.values[i] = values[i];
                    for r in 0..2 {
                        es.vectors[i][r] = vectors[i][r];
                    }
                }
                es
            }
            3 => {
                let m = [
                    [self.get(0, 0), self.get(0, 1), self.get(0, 2)],
                    [self.get(0, 1), self.get(1, 1), self.get(1, 2)],
                    [self.get(0, 2), self.get(1, 2), self.get(2, 2)],
                ];
                let (values, vectors) = eig3(m);
                let mut es = EigenSystem {
                    values: [T::zero(); D],
                    vectors: [[T::zero(); D]; D],
                };
                for i in 0..3 {
                    es.values[i] = values[i];
                    for r in 0..3 {
                        es.vectors[i][r] = vectors[i][r];
                    }
                }
                es
            }
            _ => unreachable!("symmetric tensors are 2x2 or 3x3"),
        }
    }
}

/// Eigenvalues (descending) and unit eigenvectors; `vectors[i]` belongs to
/// `values[i]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigenSystem<T, const D: usize> {
    pub values: [T; D],
    pub vectors: [[T; D]; D],
}

#[inline(always)]
fn normalize_sign2<T: Real>(v: [T; 2]) -> [T; 2] {
    // first non-negligible component positive
    let tol = T::splat(1e-12);
    let flip = v[0].lt(-tol).or(v[0].abs().le(tol).and(v[1].lt(T::zero())));
    let s = T::select(flip, T::splat(-1.0), T::splat(1.0));
    [v[0] * s, v[1] * s]
}

/// Eigensystem of `[[a, b], [b, c]]`.
#[inline]
pub fn eig2<T: Real>(a: T, c: T, b: T) -> ([T; 2], [[T; 2]; 2]) {
    let half = T::splat(0.5);
    let m = half * (a + c);
    let d = half * (a - c);
    let r = (d * d + b * b).sqrt();
    let pos = d.ge(T::zero());
    // cancellation-free choice of the first eigenvector
    let vx = T::select(pos, d + r, b);
    let vy = T::select(pos, b, r - d);
    let n = (vx * vx + vy * vy).sqrt();
    let degenerate = n.le(T::zero());
    let one = T::splat(1.0);
    let n_safe = T::select(degenerate, one, n);
    let v1 = normalize_sign2([
        T::select(degenerate, one, vx / n_safe),
        T::select(degenerate, T::zero(), vy / n_safe),
    ]);
    let v2 = normalize_sign2([-v1[1], v1[0]]);
    ([m + r, m - r], [v1, v2])
}

#[inline(always)]
fn cross<T: Real>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline(always)]
fn dot3<T: Real>(a: [T; 3], b: [T; 3]) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline(always)]
fn select3<T: Real>(m: T::Mask, a: [T; 3], b: [T; 3]) -> [T; 3] {
    [T::select(m, a[0], b[0]), T::select(m, a[1], b[1]), T::select(m, a[2], b[2])]
}

#[inline(always)]
fn scale3<T: Real>(a: [T; 3], s: T) -> [T; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// Unit vector spanning the (numerical) null space of `m`, from the
/// largest cross product of its rows.
fn null_vector3<T: Real>(m: [[T; 3]; 3]) -> [T; 3] {
    let c = [cross(m[0], m[1]), cross(m[0], m[2]), cross(m[1], m[2])];
    let n = [dot3(c[0], c[0]), dot3(c[1], c[1]), dot3(c[2], c[2])];
    let mut best = c[0];
    let mut best_n = n[0];
    for k in 1..3 {
        let better = n[k].gt(best_n);
        best = select3(better, c[k], best);
        best_n = T::select(better, n[k], best_n);
    }
    let zero = best_n.le(T::zero());
    let safe = T::select(zero, T::splat(1.0), best_n.sqrt());
    select3(
        zero,
        [T::splat(1.0), T::zero(), T::zero()],
        scale3(best, T::splat(1.0) / safe),
    )
}

/// Orthonormal pair spanning the plane orthogonal to unit `v`.
fn complement3<T: Real>(v: [T; 3]) -> ([T; 3], [T; 3]) {
    let use_x = v[0].abs().gt(v[1].abs());
    let ux = [-v[2], T::zero(), v[0]];
    let uy = [T::zero(), v[2], -v[1]];
    let u = select3(use_x, ux, uy);
    let n = dot3(u, u).sqrt();
    let u = scale3(u, T::splat(1.0) / n);
    let w = cross(v, u);
    (u, w)
}

fn quad_form3<T: Real>(m: &[[T; 3]; 3], a: [T; 3], b: [T; 3]) -> T {
    let mut s = T::zero();
    for i in 0..3 {
        for j in 0..3 {
            s += a[i] * m[i][j] * b[j];
        }
    }
    s
}

/// Trigonometric closed-form eigensystem of a symmetric 3×3 matrix.
pub fn eig3<T: Real>(a: [[T; 3]; 3]) -> ([T; 3], [[T; 3]; 3]) {
    let one = T::splat(1.0);
    // scale to unit magnitude for robustness
    let mut s = T::zero();
    for row in &a {
        for &v in row {
            s = s.max(v.abs());
        }
    }
    let s_zero = s.le(T::zero());
    let s = T::select(s_zero, one, s);
    let mut b = a;
    for row in b.iter_mut() {
        for v in row.iter_mut() {
            *v = *v / s;
        }
    }
    let q = (b[0][0] + b[1][1] + b[2][2]) / T::splat(3.0);
    let p1 = b[0][1] * b[0][1] + b[0][2] * b[0][2] + b[1][2] * b[1][2];
    let d0 = b[0][0] - q;
    let d1 = b[1][1] - q;
    let d2 = b[2][2] - q;
    let p2 = d0 * d0 + d1 * d1 + d2 * d2 + T::splat(2.0) * p1;
    let p = (p2 / T::splat(6.0)).sqrt();
    let p_zero = p.le(T::zero());
    let p_safe = T::select(p_zero, one, p);
    let mut c = b;
    for (i, row) in c.iter_mut().enumerate() {
        row[i] -= q;
        for v in row.iter_mut() {
            *v = *v / p_safe;
        }
    }
    let det = c[0][0] * (c[1][1] * c[2][2] - c[1][2] * c[2][1])
        - c[0][1] * (c[1][0] * c[2][2] - c[1][2] * c[2][0])
        + c[0][2] * (c[1][0] * c[2][1] - c[1][1] * c[2][0]);
    let r = (T::splat(0.5) * det).max(-one).min(one);
    let angle = r.acos() / T::splat(3.0);
    let two_p = T::splat(2.0) * p;
    let e1 = q + two_p * angle.cos();
    let e3 = q + two_p * (angle + T::splat(2.0 * std::f64::consts::PI / 3.0)).cos();
    let e2 = T::splat(3.0) * q - e1 - e3;
    let e1 = T::select(p_zero, q, e1);
    let e2 = T::select(p_zero, q, e2);
    let e3 = T::select(p_zero, q, e3);

    let shifted = |e: T| -> [[T; 3]; 3] {
        let mut m = b;
        for (i, row) in m.iter_mut().enumerate() {
            row[i] -= e;
        }
        m
    };
    // isolate the eigenvalue farthest from the middle one first
    let first_is_top = (e1 - e2).ge(e2 - e3);
    let v_iso = null_vector3(shifted(T::select(first_is_top, e1, e3)));
    let (u, w) = complement3(v_iso);
    let m00 = quad_form3(&b, u, u);
    let m01 = quad_form3(&b, u, w);
    let m11 = quad_form3(&b, w, w);
    let (sub_values, sub) = eig2(m00, m11, m01);
    let top = [
        u[0] * sub[0][0] + w[0] * sub[0][1],
        u[1] * sub[0][0] + w[1] * sub[0][1],
        u[2] * sub[0][0] + w[2] * sub[0][1],
    ];
    let bottom = [
        u[0] * sub[1][0] + w[0] * sub[1][1],
        u[1] * sub[1][0] + w[1] * sub[1][1],
        u[2] * sub[1][0] + w[2] * sub[1][1],
    ];
    // isolated top: (v_iso, top, bottom); isolated bottom: (top, bottom, v_iso)
    let v1 = select3(first_is_top, v_iso, top);
    let v2 = select3(first_is_top, top, bottom);
    let v3 = select3(first_is_top, bottom, v_iso);
    // the cosine formula loses half the digits near a double root, so the
    // final values come from the reduced problems
    let e_iso = quad_form3(&b, v_iso, v_iso);
    let e1 = T::select(first_is_top, e_iso, sub_values[0]);
    let e2 = T::select(first_is_top, sub_values[0], sub_values[1]);
    let e3 = T::select(first_is_top, sub_values[1], e_iso);
    ([e1 * s, e2 * s, e3 * s], [v1, v2, v3])
}

/// `A⁺ = Σ max(λ_i, 0) v_i ⊗ v_i`
pub fn positive_part_tensor<T: Real, const D: usize>(a: &SymTensor<T, D>) -> SymTensor<T, D> {
    let es = a.eigensystem();
    let mut w = es.values;
    for v in w.iter_mut() {
        *v = v.max(T::zero());
    }
    SymTensor::from_spectral(&w, &es.vectors)
}

/// `A⁻ = Σ min(λ_i, 0) v_i ⊗ v_i`
pub fn negative_part_tensor<T: Real, const D: usize>(a: &SymTensor<T, D>) -> SymTensor<T, D> {
    let es = a.eigensystem();
    let mut w = es.values;
    for v in w.iter_mut() {
        *v = v.min(T::zero());
    }
    SymTensor::from_spectral(&w, &es.vectors)
}

/// Unsplit elastic energy `½ λ tr²(e) + μ e:e`.
pub fn energy<T: Real, const D: usize>(e: &SymTensor<T, D>, p: &MaterialParams) -> T {
    let tr = e.trace();
    T::splat(0.5 * p.lambda) * tr * tr + T::splat(p.mu) * e.ddot(e)
}

/// Unsplit stress `λ tr(e) I + 2 μ e`.
pub fn stress<T: Real, const D: usize>(e: &SymTensor<T, D>, p: &MaterialParams) -> SymTensor<T, D> {
    e.scale(T::splat(2.0 * p.mu)).add_identity(T::splat(p.lambda) * e.trace())
}

/// Split quantities of one strain tensor: eigensystem plus derived
/// energies and stresses. Linearizations reuse the eigensystem.
#[derive(Clone, Copy, Debug)]
pub struct SplitPoint<T, const D: usize> {
    pub strain: SymTensor<T, D>,
    pub eig: EigenSystem<T, D>,
    pub trace: T,
    mode: SplitMode,
}

impl<T: Real, const D: usize> SplitPoint<T, D> {
    #[inline]
    pub fn new(strain: SymTensor<T, D>, mode: SplitMode) -> Self {
        let eig = match mode {
            SplitMode::Miehe => strain.eigensystem(),
            SplitMode::Isotropic => EigenSystem {
                values: [T::zero(); D],
                vectors: [[T::zero(); D]; D],
            },
        };
        SplitPoint {
            strain,
            eig,
            trace: strain.trace(),
            mode,
        }
    }

    /// `E⁺ = ½ λ ⟨tr e⟩₊² + μ tr(e⁺²)`; the full energy in isotropic mode.
    #[inline]
    pub fn energy_plus(&self, p: &MaterialParams) -> T {
        match self.mode {
            SplitMode::Isotropic => energy(&self.strain, p),
            SplitMode::Miehe => {
                let trp = self.trace.max(T::zero());
                let mut s = T::zero();
                for &l in &self.eig.values {
                    let lp = l.max(T::zero());
                    s += lp * lp;
                }
                T::splat(0.5 * p.lambda) * trp * trp + T::splat(p.mu) * s
            }
        }
    }

    #[inline]
    pub fn energy_minus(&self, p: &MaterialParams) -> T {
        match self.mode {
            SplitMode::Isotropic => T::zero(),
            SplitMode::Miehe => {
                let trm = self.trace.min(T::zero());
                let mut s = T::zero();
                for &l in &self.eig.values {
                    let lm = l.min(T::zero());
                    s += lm * lm;
                }
                T::splat(0.5 * p.lambda) * trm * trm + T::splat(p.mu) * s
            }
        }
    }

    /// `σ⁺ = λ ⟨tr e⟩₊ I + 2 μ e⁺`; the full stress in isotropic mode.
    #[inline]
    pub fn stress_plus(&self, p: &MaterialParams) -> SymTensor<T, D> {
        match self.mode {
            SplitMode::Isotropic => stress(&self.strain, p),
            SplitMode::Miehe => {
                let mut w = self.eig.values;
                for v in w.iter_mut() {
                    *v = T::splat(2.0 * p.mu) * v.max(T::zero());
                }
                SymTensor::from_spectral(&w, &self.eig.vectors)
                    .add_identity(T::splat(p.lambda) * self.trace.max(T::zero()))
            }
        }
    }

    #[inline]
    pub fn stress_minus(&self, p: &MaterialParams) -> SymTensor<T, D> {
        match self.mode {
            SplitMode::Isotropic => SymTensor::zero(),
            SplitMode::Miehe => {
                let mut w = self.eig.values;
                for v in w.iter_mut() {
                    *v = T::splat(2.0 * p.mu) * v.min(T::zero());
                }
                SymTensor::from_spectral(&w, &self.eig.vectors)
                    .add_identity(T::splat(p.lambda) * self.trace.min(T::zero()))
            }
        }
    }

    /// Directional derivative of `e ↦ e⁺` in direction `de`.
    #[inline]
    pub fn d_positive_part(&self, de: &SymTensor<T, D>) -> SymTensor<T, D> {
        d_positive_part_with(&self.strain, &self.eig, de)
    }

    /// `∂σ⁺(e)(δe) = λ {0 if tr e < 0 else tr δe} I + 2 μ ∂(e⁺)(δe)`.
    #[inline]
    pub fn d_stress_plus(&self, de: &SymTensor<T, D>, p: &MaterialParams) -> SymTensor<T, D> {
        match self.mode {
            SplitMode::Isotropic => stress(de, p),
            SplitMode::Miehe => {
                let tr_d = T::select(self.trace.lt(T::zero()), T::zero(), de.trace());
                self.d_positive_part(de)
                    .scale(T::splat(2.0 * p.mu))
                    .add_identity(T::splat(p.lambda) * tr_d)
            }
        }
    }

    /// Complement of [`Self::d_stress_plus`] in the linear stress.
    #[inline]
    pub fn d_stress_minus(&self, de: &SymTensor<T, D>, p: &MaterialParams) -> SymTensor<T, D> {
        match self.mode {
            SplitMode::Isotropic => SymTensor::zero(),
            SplitMode::Miehe => stress(de, p).sub(&self.d_stress_plus(de, p)),
        }
    }

    /// `∂E⁺(e)(δe) = σ⁺(e) : δe`
    #[inline]
    pub fn d_energy_plus(&self, de: &SymTensor<T, D>, p: &MaterialParams) -> T {
        self.stress_plus(p).ddot(de)
    }
}

pub fn energy_plus<T: Real, const D: usize>(e: &SymTensor<T, D>, p: &MaterialParams, mode: SplitMode) -> T {
    SplitPoint::new(*e, mode).energy_plus(p)
}

pub fn energy_minus<T: Real, const D: usize>(e: &SymTensor<T, D>, p: &MaterialParams, mode: SplitMode) -> T {
    SplitPoint::new(*e, mode).energy_minus(p)
}

pub fn stress_plus<T: Real, const D: usize>(
    e: &SymTensor<T, D>,
    p: &MaterialParams,
    mode: SplitMode,
) -> SymTensor<T, D> {
    SplitPoint::new(*e, mode).stress_plus(p)
}

pub fn stress_minus<T: Real, const D: usize>(
    e: &SymTensor<T, D>,
    p: &MaterialParams,
    mode: SplitMode,
) -> SymTensor<T, D> {
    SplitPoint::new(*e, mode).stress_minus(p)
}

pub fn d_stress_plus<T: Real, const D: usize>(
    e: &SymTensor<T, D>,
    de: &SymTensor<T, D>,
    p: &MaterialParams,
    mode: SplitMode,
) -> SymTensor<T, D> {
    SplitPoint::new(*e, mode).d_stress_plus(de, p)
}

pub fn d_stress_minus<T: Real, const D: usize>(
    e: &SymTensor<T, D>,
    de: &SymTensor<T, D>,
    p: &MaterialParams,
    mode: SplitMode,
) -> SymTensor<T, D> {
    SplitPoint::new(*e, mode).d_stress_minus(de, p)
}

pub fn d_energy_plus<T: Real, const D: usize>(
    e: &SymTensor<T, D>,
    de: &SymTensor<T, D>,
    p: &MaterialParams,
    mode: SplitMode,
) -> T {
    SplitPoint::new(*e, mode).d_energy_plus(de, p)
}

/// `δλ = vᵀ δA v`
#[inline]
pub fn eigenvalue_derivative<T: Real, const D: usize>(da: &SymTensor<T, D>, v: &[T; D]) -> T {
    let dav = da.mul_vec(v);
    let mut s = T::zero();
    for i in 0..D {
        s += dav[i] * v[i];
    }
    s
}

/// Tolerance below which two eigenvalues count as equal in the
/// pseudo-inverse.
#[inline(always)]
fn degeneracy_tolerance<T: Real, const D: usize>(a: &SymTensor<T, D>) -> T {
    T::splat(1e-12) * a.norm_frobenius().max(T::splat(1.0))
}

/// `L† = V D† Vᵀ` for `L = A − λ I`, with `D†_i = 0` where `λ_i = λ`.
pub fn pseudo_inverse<T: Real, const D: usize>(a: &SymTensor<T, D>, lambda: T) -> SymTensor<T, D> {
    let es = a.eigensystem();
    pseudo_inverse_with(a, &es, lambda)
}

fn pseudo_inverse_with<T: Real, const D: usize>(
    a: &SymTensor<T, D>,
    es: &EigenSystem<T, D>,
    lambda: T,
) -> SymTensor<T, D> {
    let tol = degeneracy_tolerance(a);
    let mut w = [T::zero(); D];
    for (i, wi) in w.iter_mut().enumerate() {
        let gap = es.values[i] - lambda;
        let zero = gap.abs().le(tol);
        let safe = T::select(zero, T::splat(1.0), gap);
        *wi = T::select(zero, T::zero(), T::splat(1.0) / safe);
    }
    SymTensor::from_spectral(&w, &es.vectors)
}

/// `δv = −L† δA v` for the eigenpair `(λ, v)` of `A`.
pub fn eigenvector_derivative<T: Real, const D: usize>(
    a: &SymTensor<T, D>,
    da: &SymTensor<T, D>,
    lambda: T,
    v: &[T; D],
) -> [T; D] {
    let l_dag = pseudo_inverse(a, lambda);
    let r = l_dag.mul_vec(&da.mul_vec(v));
    let mut out = [T::zero(); D];
    for i in 0..D {
        out[i] = -r[i];
    }
    out
}

/// Directional derivative of `A ↦ A⁺` at `A` in direction `δA`:
/// `δV D⁺ Vᵀ + V δD⁺ Vᵀ + V D⁺ δVᵀ`.
pub fn d_positive_part<T: Real, const D: usize>(a: &SymTensor<T, D>, da: &SymTensor<T, D>) -> SymTensor<T, D> {
    d_positive_part_with(a, &a.eigensystem(), da)
}

#[inline]
fn d_positive_part_with<T: Real, const D: usize>(
    a: &SymTensor<T, D>,
    es: &EigenSystem<T, D>,
    da: &SymTensor<T, D>,
) -> SymTensor<T, D> {
    let tol = degeneracy_tolerance(a);
    let v = &es.vectors;
    // δA in the eigenbasis: w[j][i] = v_jᵀ δA v_i
    let mut dav = [[T::zero(); D]; D];
    for i in 0..D {
        dav[i] = da.mul_vec(&v[i]);
    }
    let mut w = [[T::zero(); D]; D];
    for j in 0..D {
        for i in 0..D {
            let mut s = T::zero();
            for r in 0..D {
                s += v[j][r] * dav[i][r];
            }
            w[j][i] = s;
        }
    }
    let mut dv = [[T::zero(); D]; D];
    let mut d_lambda_plus = [T::zero(); D];
    let mut lambda_plus = [T::zero(); D];
    for i in 0..D {
        let li = es.values[i];
        // dv_i = −Σ_j D†_j v_j (v_jᵀ δA v_i)
        for j in 0..D {
            let gap = es.values[j] - li;
            let zero = gap.abs().le(tol);
            let safe = T::select(zero, T::splat(1.0), gap);
            let coef = T::select(zero, T::zero(), w[j][i] / safe);
            for r in 0..D {
                dv[i][r] -= coef * v[j][r];
            }
        }
        d_lambda_plus[i] = T::select(li.lt(T::zero()), T::zero(), w[i][i]);
        lambda_plus[i] = li.max(T::zero());
    }
    let mut out = SymTensor::zero();
    for r in 0..D {
        for c in r..D {
            let mut s = T::zero();
            for i in 0..D {
                s += lambda_plus[i] * (dv[i][r] * v[i][c] + v[i][r] * dv[i][c])
                    + d_lambda_plus[i] * v[i][r] * v[i][c];
            }
            out.set(r, c, s);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lanes::Lanes;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type S2 = SymTensor<f64, 2>;
    type S3 = SymTensor<f64, 3>;

    fn s2(xx: f64, yy: f64, xy: f64) -> S2 {
        S2::from_full([[xx, xy], [xy, yy]])
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn unit_params() -> MaterialParams {
        MaterialParams {
            lambda: 1.0,
            mu: 1.0,
            ..Default::default()
        }
    }

    #[test]
    fn degradation_values() {
        assert_eq!(degradation(1.0, 0.3), 1.0);
        assert_eq!(degradation(0.0, 0.3), 0.3);
        assert!(close(degradation(0.5, 1e-10), 0.25 + 0.75e-10, 1e-17));
        assert_eq!(degradation_d1(0.5, 0.0), 1.0);
        assert_eq!(degradation_d2(0.25), 1.5);
    }

    #[test]
    fn eigensystem_2d_examples() {
        let es = s2(3.0, 1.0, 0.0).eigensystem();
        assert_eq!(es.values, [3.0, 1.0]);
        assert!(close(es.vectors[0][0], 1.0, 1e-15) && close(es.vectors[0][1], 0.0, 1e-15));
        assert!(close(es.vectors[1][0], 0.0, 1e-15) && close(es.vectors[1][1], 1.0, 1e-15));

        let es = s2(0.0, 0.0, 1.0).eigensystem();
        let r = 0.5f64.sqrt();
        assert!(close(es.values[0], 1.0, 1e-15) && close(es.values[1], -1.0, 1e-15));
        assert!(close(es.vectors[0][0], r, 1e-15) && close(es.vectors[0][1], r, 1e-15));
        assert!(close(es.vectors[1][0], r, 1e-15) && close(es.vectors[1][1], -r, 1e-15));

        let es = S2::zero().eigensystem();
        assert_eq!(es.values, [0.0, 0.0]);
        assert_eq!(es.vectors[0], [1.0, 0.0]);
    }

    #[test]
    fn eigensystem_3d_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let m = [
                [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                [0.0, rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                [0.0, 0.0, rng.gen_range(-1.0..1.0)],
            ];
            let a = S3::from_full([
                [m[0][0], m[0][1], m[0][2]],
                [m[0][1], m[1][1], m[1][2]],
                [m[0][2], m[1][2], m[2][2]],
            ]);
            let es = a.eigensystem();
            assert!(es.values[0] >= es.values[1] && es.values[1] >= es.values[2]);
            let rec = S3::from_spectral(&es.values, &es.vectors);
            let err = rec.sub(&a).norm_frobenius();
            assert!(err <= 1e-10 * a.norm_frobenius(), "err {err}");
            for i in 0..3 {
                for j in 0..3 {
                    let d = dot3(es.vectors[i], es.vectors[j]);
                    let e = if i == j { 1.0 } else { 0.0 };
                    assert!(close(d, e, 1e-10));
                }
            }
        }
    }

    #[test]
    fn eigensystem_3d_degenerate_cases() {
        for a in [
            S3::identity(),
            S3::zero(),
            S3::from_full([[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, -1.0]]),
            S3::from_full([[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 0.0]]),
        ] {
            let es = a.eigensystem();
            let rec = S3::from_spectral(&es.values, &es.vectors);
            let err = rec.sub(&a).norm_frobenius();
            assert!(err <= 1e-12 * a.norm_frobenius().max(1.0), "{a:?} {es:?} {err}");
        }
    }

    #[test]
    fn positive_and_negative_parts() {
        let p = positive_part_tensor(&s2(1.0, -2.0, 0.0));
        assert!(p.sub(&s2(1.0, 0.0, 0.0)).norm_frobenius() < 1e-15);
        let p = positive_part_tensor(&s2(0.0, 0.0, 1.0));
        assert!(p.sub(&s2(0.5, 0.5, 0.5)).norm_frobenius() < 1e-15);
        let nd = s2(-1.0, -3.0, 0.5);
        assert_eq!(positive_part_tensor(&nd).norm_frobenius(), 0.0);
        let a = s2(0.3, -0.7, 0.4);
        let sum = positive_part_tensor(&a).add(&negative_part_tensor(&a));
        assert!(sum.sub(&a).norm_frobenius() < 1e-15);
    }

    #[test]
    fn energy_and_stress_examples() {
        let p = unit_params();
        let i = S2::identity();
        assert!(close(energy_plus(&i, &p, SplitMode::Miehe), 4.0, 1e-14));
        assert_eq!(energy_minus(&i, &p, SplitMode::Miehe), 0.0);
        let mi = i.scale(-1.0);
        assert_eq!(energy_plus(&mi, &p, SplitMode::Miehe), 0.0);
        assert!(close(energy_minus(&mi, &p, SplitMode::Miehe), 4.0, 1e-14));
        let s = stress_plus(&i, &p, SplitMode::Miehe);
        assert!(s.sub(&S2::identity().scale(4.0)).norm_frobenius() < 1e-14);
        let nd = s2(-1.0, -0.5, 0.1);
        assert_eq!(stress_plus(&nd, &p, SplitMode::Miehe).norm_frobenius(), 0.0);
        // isotropic: (full, 0)
        let e = s2(0.2, -0.1, 0.3);
        let full = stress(&e, &p);
        assert_eq!(stress_plus(&e, &p, SplitMode::Isotropic), full);
        assert_eq!(stress_minus(&e, &p, SplitMode::Isotropic), S2::zero());
    }

    #[test]
    fn eigen_derivative_examples() {
        let a = s2(1.0, 2.0, 0.0);
        let da = s2(3.0, 5.0, 4.0);
        assert!(close(eigenvalue_derivative(&da, &[1.0, 0.0]), 3.0, 1e-15));
        assert_eq!(eigenvalue_derivative(&S2::zero(), &[1.0, 0.0]), 0.0);
        let dv = eigenvector_derivative(&a, &da, 1.0, &[1.0, 0.0]);
        assert!(close(dv[0], 0.0, 1e-10) && close(dv[1], -4.0, 1e-10));
        let dv0 = eigenvector_derivative(&a, &S2::zero(), 1.0, &[1.0, 0.0]);
        assert_eq!(dv0, [0.0, 0.0]);
    }

    #[test]
    fn pseudo_inverse_examples() {
        let l = pseudo_inverse(&s2(1.0, 2.0, 0.0), 1.0);
        assert!(l.sub(&s2(0.0, 1.0, 0.0)).norm_frobenius() < 1e-15);
        let l = pseudo_inverse(&S2::identity(), 1.0);
        assert_eq!(l.norm_frobenius(), 0.0);
    }

    #[test]
    fn d_positive_part_regions() {
        let da = s2(0.3, -0.2, 0.7);
        let pd = s2(2.0, 1.0, 0.3);
        let d = d_positive_part(&pd, &da);
        assert!(d.sub(&da).norm_frobenius() < 1e-14);
        let nd = s2(-2.0, -1.0, 0.3);
        assert_eq!(d_positive_part(&nd, &da.scale(1e-3)).norm_frobenius(), 0.0);
    }

    #[test]
    fn d_stress_plus_examples() {
        let p = unit_params();
        let e = s2(0.4, -0.3, 0.2);
        let de = s2(0.1, 0.5, -0.2);
        let iso = d_stress_plus(&e, &de, &p, SplitMode::Isotropic);
        assert_eq!(iso, stress(&de, &p));
        let i = S2::identity();
        let d = d_stress_plus(&i.scale(1.0 + 1e-3).add(&s2(0.0, 1e-3, 0.0)), &i, &p, SplitMode::Miehe);
        assert!(d.sub(&i.scale(4.0)).norm_frobenius() < 1e-12);
        assert!(close(d_energy_plus(&i, &i, &p, SplitMode::Miehe), 8.0, 1e-13));
        assert_eq!(d_energy_plus(&i, &S2::zero(), &p, SplitMode::Miehe), 0.0);
    }

    #[test]
    fn tie_at_zero_trace_takes_positive_branch() {
        let p = unit_params();
        // tr e = 0, eigenvalues ±0.5
        let e = s2(0.5, -0.5, 0.0);
        let de = s2(0.1, 0.1, 0.0);
        let d = d_stress_plus(&e, &de, &p, SplitMode::Miehe);
        // λ tr δe I contributes 0.2 on the diagonal
        let dp = d_positive_part(&e, &de).scale(2.0);
        assert!(d.sub(&dp).sub(&S2::identity().scale(0.2)).norm_frobenius() < 1e-15);
    }

    #[test]
    fn lanes_match_scalar_material_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = MaterialParams::default();
        for _ in 0..200 {
            let mut e = SymTensor::<Lanes<4>, 2>::zero();
            let mut de = SymTensor::<Lanes<4>, 2>::zero();
            let mut es = [S2::zero(); 4];
            let mut des = [S2::zero(); 4];
            for l in 0..4 {
                // include exact zeros and repeated eigenvalues in some lanes
                let (xx, yy, xy) = match l {
                    0 => (0.0, 0.0, 0.0),
                    1 => (0.3, 0.3, 0.0),
                    _ => (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                };
                es[l] = s2(xx, yy, xy);
                des[l] = s2(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                for (i, j) in [(0, 0), (1, 1), (0, 1)] {
                    let mut v = e.get(i, j);
                    v.0[l] = es[l].get(i, j);
                    e.set(i, j, v);
                    let mut v = de.get(i, j);
                    v.0[l] = des[l].get(i, j);
                    de.set(i, j, v);
                }
            }
            for mode in [SplitMode::Isotropic, SplitMode::Miehe] {
                let sp = SplitPoint::new(e, mode);
                let ds = sp.d_stress_plus(&de, &p);
                let sp_ = sp.stress_plus(&p);
                let ep = sp.energy_plus(&p);
                for l in 0..4 {
                    let s = SplitPoint::new(es[l], mode);
                    let ds_s = s.d_stress_plus(&des[l], &p);
                    let sp_s = s.stress_plus(&p);
                    for (i, j) in [(0, 0), (1, 1), (0, 1)] {
                        assert_eq!(ds.get(i, j).0[l], ds_s.get(i, j));
                        assert_eq!(sp_.get(i, j).0[l], sp_s.get(i, j));
                    }
                    assert_eq!(ep.0[l], s.energy_plus(&p));
                }
            }
        }
    }

    fn random_sym<const D: usize>(rng: &mut ChaCha8Rng) -> SymTensor<f64, D> {
        let mut m = [[0.0; D]; D];
        for row in m.iter_mut() {
            for v in row.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        SymTensor::from_full(m)
    }

    fn fd_check<const D: usize>(seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = MaterialParams::default();
        let h = 1e-6;
        let mut checked = 0;
        while checked < 300 {
            let e = random_sym::<D>(&mut rng);
            let de = random_sym::<D>(&mut rng);
            let es = e.eigensystem();
            // stay away from kinks and degenerate spectra
            let mut gap = e.trace().abs();
            for i in 0..D {
                gap = gap.min(es.values[i].abs());
                for j in i + 1..D {
                    gap = gap.min((es.values[i] - es.values[j]).abs());
                }
            }
            if gap < 1e-3 {
                continue;
            }
            checked += 1;
            let ep = e.add(&de.scale(h));
            let em = e.sub(&de.scale(h));
            let fd_pos = positive_part_tensor(&ep).sub(&positive_part_tensor(&em)).scale(0.5 / h);
            let an_pos = d_positive_part(&e, &de);
            assert!(fd_pos.sub(&an_pos).norm_frobenius() < 1e-6, "{fd_pos:?} {an_pos:?}");
            for mode in [SplitMode::Isotropic, SplitMode::Miehe] {
                let fd = stress_plus(&ep, &p, mode).sub(&stress_plus(&em, &p, mode)).scale(0.5 / h);
                let an = d_stress_plus(&e, &de, &p, mode);
                assert!(fd.sub(&an).norm_frobenius() < 1e-6 * p.lambda);
                let fd = stress_minus(&ep, &p, mode).sub(&stress_minus(&em, &p, mode)).scale(0.5 / h);
                let an = d_stress_minus(&e, &de, &p, mode);
                assert!(fd.sub(&an).norm_frobenius() < 1e-6 * p.lambda);
                let fd = (energy_plus(&ep, &p, mode) - energy_plus(&em, &p, mode)) * 0.5 / h;
                let an = d_energy_plus(&e, &de, &p, mode);
                assert!((fd - an).abs() < 1e-6 * p.lambda);
            }
            for i in 0..D {
                let esp = ep.eigensystem();
                let esm = em.eigensystem();
                let v = es.vectors[i];
                let align = |w: [f64; D]| {
                    let d: f64 = (0..D).map(|r| w[r] * v[r]).sum();
                    let s = d.signum();
                    let mut o = w;
                    for x in o.iter_mut() {
                        *x *= s;
                    }
                    o
                };
                let (vp, vm) = (align(esp.vectors[i]), align(esm.vectors[i]));
                let dv = eigenvector_derivative(&e, &de, es.values[i], &v);
                for r in 0..D {
                    assert!(((vp[r] - vm[r]) * 0.5 / h - dv[r]).abs() < 1e-5);
                }
                let dl = (esp.values[i] - esm.values[i]) * 0.5 / h;
                assert!((dl - eigenvalue_derivative(&de, &v)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences_2d() {
        fd_check::<2>(11);
    }

    #[test]
    fn derivatives_match_finite_differences_3d() {
        fd_check::<3>(12);
    }
}
