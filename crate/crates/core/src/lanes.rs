//! Lane-parallel scalar abstraction used by the element kernels.
//!
//! Kernels are written once against [`Real`] and instantiated either with
//! plain `f64` (one cell at a time) or with [`Lanes<W>`], which carries `W`
//! cells side by side. Data-dependent branches are expressed through masks
//! and [`Real::select`], so every lane executes the same instruction stream.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

/// Boolean mask matching a [`Real`] type.
pub trait MaskOps: Copy + Debug {
    fn and(self, other: Self) -> Self;
    fn or(self, other: Self) -> Self;
    fn not(self) -> Self;
    fn all(self) -> bool;
    fn any(self) -> bool;
}

impl MaskOps for bool {
    #[inline(always)]
    fn and(self, other: Self) -> Self {
        self & other
    }
    #[inline(always)]
    fn or(self, other: Self) -> Self {
        self | other
    }
    #[inline(always)]
    fn not(self) -> Self {
        !self
    }
    #[inline(always)]
    fn all(self) -> bool {
        self
    }
    #[inline(always)]
    fn any(self) -> bool {
        self
    }
}

/// Floating-point type the element and material kernels are generic over.
pub trait Real:
    Copy
    + Debug
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + Send
    + Sync
    + 'static
{
    type Mask: MaskOps;
    const LANES: usize;

    fn splat(v: f64) -> Self;
    fn lane(self, i: usize) -> f64;
    fn set_lane(&mut self, i: usize, v: f64);

    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn acos(self) -> Self;
    fn cos(self) -> Self;
    fn max(self, other: Self) -> Self;
    fn min(self, other: Self) -> Self;

    fn gt(self, other: Self) -> Self::Mask;
    fn ge(self, other: Self) -> Self::Mask;
    fn lt(self, other: Self) -> Self::Mask;
    fn le(self, other: Self) -> Self::Mask;

    /// Lane-wise `if mask { a } else { b }`.
    fn select(mask: Self::Mask, a: Self, b: Self) -> Self;

    #[inline(always)]
    fn zero() -> Self {
        Self::splat(0.0)
    }
}

impl Real for f64 {
    type Mask = bool;
    const LANES: usize = 1;

    #[inline(always)]
    fn splat(v: f64) -> Self {
        v
    }
    #[inline(always)]
    fn lane(self, _i: usize) -> f64 {
        self
    }
    #[inline(always)]
    fn set_lane(&mut self, _i: usize, v: f64) {
        *self = v;
    }
    #[inline(always)]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline(always)]
    fn abs(self) -> Self {
        f64::abs(self)
    }
    #[inline(always)]
    fn acos(self) -> Self {
        f64::acos(self)
    }
    #[inline(always)]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline(always)]
    fn max(self, other: Self) -> Self {
        if self > other {
            self
        } else {
            other
        }
    }
    #[inline(always)]
    fn min(self, other: Self) -> Self {
        if self < other {
            self
        } else {
            other
        }
    }
    #[inline(always)]
    fn gt(self, other: Self) -> bool {
        self > other
    }
    #[inline(always)]
    fn ge(self, other: Self) -> bool {
        self >= other
    }
    #[inline(always)]
    fn lt(self, other: Self) -> bool {
        self < other
    }
    #[inline(always)]
    fn le(self, other: Self) -> bool {
        self <= other
    }
    #[inline(always)]
    fn select(mask: bool, a: Self, b: Self) -> Self {
        if mask {
            a
        } else {
            b
        }
    }
}

/// Per-lane bit mask: all 64 bits set for `true`, clear for `false`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LaneMask<const W: usize>(pub [u64; W]);

impl<const W: usize> LaneMask<W> {
    pub fn from_bools(b: [bool; W]) -> Self {
        let mut m = [0u64; W];
        for i in 0..W {
            m[i] = if b[i] { u64::MAX } else { 0 };
        }
        LaneMask(m)
    }

    pub fn to_bools(self) -> [bool; W] {
        let mut b = [false; W];
        for i in 0..W {
            b[i] = self.0[i] != 0;
        }
        b
    }
}

impl<const W: usize> MaskOps for LaneMask<W> {
    #[inline(always)]
    fn and(self, other: Self) -> Self {
        let mut m = self.0;
        for i in 0..W {
            m[i] &= other.0[i];
        }
        LaneMask(m)
    }
    #[inline(always)]
    fn or(self, other: Self) -> Self {
        let mut m = self.0;
        for i in 0..W {
            m[i] |= other.0[i];
        }
        LaneMask(m)
    }
    #[inline(always)]
    fn not(self) -> Self {
        let mut m = self.0;
        for v in m.iter_mut() {
            *v = !*v;
        }
        LaneMask(m)
    }
    fn all(self) -> bool {
        self.0.iter().all(|&v| v != 0)
    }
    fn any(self) -> bool {
        self.0.iter().any(|&v| v != 0)
    }
}

/// `W` doubles processed in lock step.
#[derive(Clone, Copy, Debug, PartialEq)]
#[repr(align(32))]
pub struct Lanes<const W: usize>(pub [f64; W]);

macro_rules! lanewise_binop {
    ($tr:ident, $f:ident, $op:tt, $atr:ident, $af:ident) => {
        impl<const W: usize> $tr for Lanes<W> {
            type Output = Self;
            #[inline(always)]
            fn $f(self, rhs: Self) -> Self {
                let mut out = self.0;
                for i in 0..W {
                    out[i] = self.0[i] $op rhs.0[i];
                }
                Lanes(out)
            }
        }
        impl<const W: usize> $atr for Lanes<W> {
            #[inline(always)]
            fn $af(&mut self, rhs: Self) {
                for i in 0..W {
                    self.0[i] = self.0[i] $op rhs.0[i];
                }
            }
        }
    };
}

lanewise_binop!(Add, add, +, AddAssign, add_assign);
lanewise_binop!(Sub, sub, -, SubAssign, sub_assign);
lanewise_binop!(Mul, mul, *, MulAssign, mul_assign);

impl<const W: usize> Div for Lanes<W> {
    type Output = Self;
    #[inline(always)]
    fn div(self, rhs: Self) -> Self {
        let mut out = self.0;
        for i in 0..W {
            out[i] = self.0[i] / rhs.0[i];
        }
        Lanes(out)
    }
}

impl<const W: usize> Neg for Lanes<W> {
    type Output = Self;
    #[inline(always)]
    fn neg(self) -> Self {
        let mut out = self.0;
        for v in out.iter_mut() {
            *v = -*v;
        }
        Lanes(out)
    }
}

macro_rules! lanewise_unary {
    ($name:ident) => {
        #[inline(always)]
        fn $name(self) -> Self {
            let mut out = self.0;
            for v in out.iter_mut() {
                *v = v.$name();
            }
            Lanes(out)
        }
    };
}

macro_rules! lanewise_cmp {
    ($name:ident, $op:tt) => {
        #[inline(always)]
        fn $name(self, other: Self) -> LaneMask<W> {
            let mut m = [0u64; W];
            for i in 0..W {
                m[i] = if self.0[i] $op other.0[i] { u64::MAX } else { 0 };
            }
            LaneMask(m)
        }
    };
}

impl<const W: usize> Real for Lanes<W> {
    type Mask = LaneMask<W>;
    const LANES: usize = W;

    #[inline(always)]
    fn splat(v: f64) -> Self {
        Lanes([v; W])
    }
    #[inline(always)]
    fn lane(self, i: usize) -> f64 {
        self.0[i]
    }
    #[inline(always)]
    fn set_lane(&mut self, i: usize, v: f64) {
        self.0[i] = v;
    }

    lanewise_unary!(sqrt);
    lanewise_unary!(abs);
    lanewise_unary!(acos);
    lanewise_unary!(cos);

    #[inline(always)]
    fn max(self, other: Self) -> Self {
        Self::select(self.gt(other), self, other)
    }
    #[inline(always)]
    fn min(self, other: Self) -> Self {
        Self::select(self.lt(other), self, other)
    }

    lanewise_cmp!(gt, >);
    lanewise_cmp!(ge, >=);
    lanewise_cmp!(lt, <);
    lanewise_cmp!(le, <=);

    #[inline(always)]
    fn select(mask: LaneMask<W>, a: Self, b: Self) -> Self {
        masked_select(mask, a, b)
    }
}

/// Bit-mask blend: lane `i` takes `a[i]` where the mask is set, else `b[i]`.
///
/// Implemented with integer `and`/`or` on the bit patterns, so no floating
/// point operation touches the discarded value.
#[inline(always)]
pub fn masked_select<const W: usize>(mask: LaneMask<W>, a: Lanes<W>, b: Lanes<W>) -> Lanes<W> {
    let mut out = [0.0; W];
    for i in 0..W {
        let a0 = a.0[i].to_bits() & mask.0[i];
        let b0 = b.0[i].to_bits() & !mask.0[i];
        out[i] = f64::from_bits(a0 | b0);
    }
    Lanes(out)
}

/// Supported lane widths for the cell loops.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LaneWidth {
    W1,
    W2,
    W4,
    W8,
}

impl LaneWidth {
    pub fn lanes(self) -> usize {
        match self {
            LaneWidth::W1 => 1,
            LaneWidth::W2 => 2,
            LaneWidth::W4 => 4,
            LaneWidth::W8 => 8,
        }
    }

    pub fn from_lanes(w: usize) -> Option<Self> {
        match w {
            1 => Some(LaneWidth::W1),
            2 => Some(LaneWidth::W2),
            4 => Some(LaneWidth::W4),
            8 => Some(LaneWidth::W8),
            _ => None,
        }
    }

    /// Widest lane count the host vector unit handles natively for `f64`.
    pub fn detect() -> Self {
        #[cfg(target_arch = "x86_64")]
        {
            if std::is_x86_feature_detected!("avx512f") {
                return LaneWidth::W8;
            }
            if std::is_x86_feature_detected!("avx") {
                return LaneWidth::W4;
            }
            LaneWidth::W2
        }
        #[cfg(target_arch = "aarch64")]
        {
            LaneWidth::W2
        }
        #[cfg(not(any(target_arch = "x86_64", target_arch = "aarch64")))]
        {
            LaneWidth::W1
        }
    }
}

/// A group of up to `W` cells processed together.
///
/// The final batch of a cell range is padded by repeating the last valid
/// cell; `valid` tells the scatter stage which lanes may write back.
#[derive(Clone, Copy, Debug)]
pub struct ElementBatch<const W: usize> {
    pub cells: [usize; W],
    pub valid: usize,
}

impl<const W: usize> ElementBatch<W> {
    pub fn lane_is_valid(&self, lane: usize) -> bool {
        lane < self.valid
    }
}

/// Splits `0..n_cells` into batches of `W` consecutive cells.
pub fn batches<const W: usize>(n_cells: usize) -> impl Iterator<Item = ElementBatch<W>> {
    (0..n_cells).step_by(W).map(move |start| {
        let valid = (n_cells - start).min(W);
        let mut cells = [start; W];
        for (l, c) in cells.iter_mut().enumerate() {
            *c = start + l.min(valid - 1);
        }
        ElementBatch { cells, valid }
    })
}
