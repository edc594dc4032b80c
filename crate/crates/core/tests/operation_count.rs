use std::cell::Cell;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use fracturekit::basis::{integrate_add, interpolate, ShapeData};
use fracturekit::lanes::Real;

thread_local! {
    static FLOPS: Cell<u64> = const { Cell::new(0) };
}

fn tick() {
    FLOPS.with(|c| c.set(c.get() + 1));
}

fn take() -> u64 {
    FLOPS.with(|c| c.replace(0))
}

/// Scalar that counts arithmetic operations.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Counted(f64);

macro_rules! binop {
    ($tr:ident, $f:ident, $op:tt) => {
        impl $tr for Counted {
            type Output = Counted;
            fn $f(self, o: Counted) -> Counted {
                tick();
                Counted(self.0 $op o.0)
            }
        }
    };
}
binop!(Add, add, +);
binop!(Sub, sub, -);
binop!(Mul, mul, *);
binop!(Div, div, /);

macro_rules! assignop {
    ($tr:ident, $f:ident, $op:tt) => {
        impl $tr for Counted {
            fn $f(&mut self, o: Counted) {
                tick();
                self.0 $op o.0;
            }
        }
    };
}
assignop!(AddAssign, add_assign, +=);
assignop!(SubAssign, sub_assign, -=);
assignop!(MulAssign, mul_assign, *=);

impl Neg for Counted {
    type Output = Counted;
    fn neg(self) -> Counted {
        Counted(-self.0)
    }
}

impl Real for Counted {
    type Mask = bool;
    const LANES: usize = 1;
    fn splat(v: f64) -> Self {
        Counted(v)
    }
    fn lane(self, _i: usize) -> f64 {
        self.0
    }
    fn set_lane(&mut self, _i: usize, v: f64) {
        self.0 = v;
    }
    fn sqrt(self) -> Self {
        tick();
        Counted(self.0.sqrt())
    }
    fn abs(self) -> Self {
        Counted(self.0.abs())
    }
    fn acos(self) -> Self {
        tick();
        Counted(self.0.acos())
    }
    fn cos(self) -> Self {
        tick();
        Counted(self.0.cos())
    }
    fn max(self, o: Self) -> Self {
        Counted(self.0.max(o.0))
    }
    fn min(self, o: Self) -> Self {
        Counted(self.0.min(o.0))
    }
    fn gt(self, o: Self) -> bool {
        self.0 > o.0
    }
    fn ge(self, o: Self) -> bool {
        self.0 >= o.0
    }
    fn lt(self, o: Self) -> bool {
        self.0 < o.0
    }
    fn le(self, o: Self) -> bool {
        self.0 <= o.0
    }
    fn select(mask: bool, a: Self, b: Self) -> Self {
        if mask {
            a
        } else {
            b
        }
    }
}

/// Operations for one evaluation of values and gradients plus one
/// integration against values and gradients on a cell of degree `p`.
fn cell_operations(p: usize) -> (u64, u64) {
    let sd = ShapeData::new(p).unwrap();
    let (nd, nq) = (sd.dofs_per_cell(), sd.q_per_cell());
    let coeffs: Vec<Counted> = (0..nd).map(|i| Counted(i as f64)).collect();
    let mut v = vec![Counted(0.0); nq];
    let mut gx = vec![Counted(0.0); nq];
    let mut gy = vec![Counted(0.0); nq];
    take();
    interpolate(&sd, &coeffs, &mut v, &mut gx, &mut gy);
    let eval = take();
    let mut out = vec![Counted(0.0); nd];
    integrate_add(&sd, Some(&v), Some(&gx), Some(&gy), &mut out);
    (eval, take())
}

#[test]
fn sum_factorization_scales_with_cube_of_points_per_direction() {
    for p in 1..=4 {
        let (eval, integ) = cell_operations(p);
        let n = (p + 1) as u64;
        assert!(eval >= n.pow(3) && integ >= n.pow(3), "p={p}: {eval} {integ}");
        let dense = 3 * 2 * n.pow(4);
        assert!(eval <= 12 * n.pow(3), "p={p}: evaluation {eval} operations");
        assert!(integ <= 12 * n.pow(3), "p={p}: integration {integ} operations");
        if p >= 3 {
            assert!(eval < dense && integ < dense, "p={p}: {eval} {integ} vs dense {dense}");
        }
    }
    let (e2, _) = cell_operations(2);
    let (e4, _) = cell_operations(4);
    let growth = e4 as f64 / e2 as f64;
    println!("evaluation operations p=2: {e2}, p=4: {e4}");
    // (5/3)^3 ≈ 4.6 for cubic work, (5/3)^4 ≈ 7.7 for a dense product
    assert!(growth < 6.0, "growth {growth}");
}
