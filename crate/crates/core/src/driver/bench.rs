//! SpMV versus matrix-free timing and memory accounting.

use std::fmt;
use std::io::{self, Write};
use crate::clock::Stopwatch;

use super::{apply_boundary, boundary_program, Scenario};
use crate::material::{MaterialParams, SplitMode};
use crate::mesh::{Level, MeshHierarchy};
use crate::operator::{norm, CacheMode, LinearizationState, OperatorOptions, PffOperator};
use crate::sparse::{assemble_oracle, csr_bytes, jacobian_nnz};
use crate::Error;

pub const BENCH_HEADER: &str = "kind,degree,level,dofs,best_time_s,reps";
pub const MEMORY_HEADER: &str = "kind,degree,level,dofs,bytes,bytes_per_dof";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BenchKind {
    Spmv,
    Mfmv,
    Assemble,
}

impl fmt::Display for BenchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BenchKind::Spmv => "spmv",
            BenchKind::Mfmv => "mfmv",
            BenchKind::Assemble => "assemble",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRecord {
    pub kind: BenchKind,
    pub degree: usize,
    pub level: usize,
    pub dofs: usize,
    pub best_seconds: f64,
    pub reps: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct BenchConfig {
    pub level: usize,
    pub degree: usize,
    pub split: SplitMode,
    pub reps: usize,
    pub operator: OperatorOptions,
}

impl BenchConfig {
    pub fn new(level: usize, degree: usize, split: SplitMode) -> Self {
        BenchConfig {
            level,
            degree,
            split,
            reps: 100,
            operator: OperatorOptions::default(),
        }
    }
}

/// First tension step with the displacement ramped linearly in `y`, so the
/// strain field is nonzero everywhere.
pub fn prepare_bench_state(level: &Level, split: SplitMode) -> Result<LinearizationState, Error> {
    let s = level.dofs.n_scalar;
    let du = 1e-5;
    let mut st = LinearizationState::new(s, MaterialParams::default(), split);
    {
        let sol = st.solution_mut();
        for (i, c) in level.dofs.node_coords.iter().enumerate() {
            sol[s + i] = du * c[1];
        }
    }
    apply_boundary(&mut st, &boundary_program(Scenario::Tension, level, 1.0, du))?;
    Ok(st)
}

fn best_of<F: FnMut()>(reps: usize, mut f: F) -> f64 {
    (0..reps.max(1))
        .map(|_| {
            let t = Stopwatch::start();
            f();
            t.seconds()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Best-of-`reps` timings of the assembled and matrix-free Jacobian
/// products, plus the assembly time. The two products are compared before
/// timing. If assembly cannot allocate, only the matrix-free record is
/// returned.
pub fn benchmark_vmult(config: &BenchConfig) -> Result<Vec<BenchRecord>, Error> {
    if config.reps == 0 {
        return Err(Error::Config("reps must be at least 1".into()));
    }
    let hierarchy = MeshHierarchy::build(config.level, config.degree)?;
    let level = hierarchy.finest();
    let state = prepare_bench_state(level, config.split)?;
    let op = PffOperator::new(level, state, config.operator)?;
    let n = op.n_dofs();
    let src: Vec<f64> = (0..n).map(|i| ((i * 7919) % 1000) as f64 / 1000.0 - 0.5).collect();
    let mut y_mf = vec![0.0; n];
    op.apply_jacobian(&src, &mut y_mf)?;
    let record = |kind, best_seconds, reps| BenchRecord {
        kind,
        degree: config.degree,
        level: config.level,
        dofs: n,
        best_seconds,
        reps,
    };
    let mut out = Vec::new();
    match assemble_oracle(&op) {
        Ok(oracle) => {
            let mut y_sp = vec![0.0; n];
            oracle.apply(&src, &mut y_sp);
            let diff: Vec<f64> = y_mf.iter().zip(&y_sp).map(|(a, b)| a - b).collect();
            let rel = norm(&diff) / norm(&y_sp).max(f64::MIN_POSITIVE);
            if rel > 1e-12 {
                return Err(Error::Config(format!(
                    "matrix-free and assembled products differ by {rel:.3e}"
                )));
            }
            out.push(record(BenchKind::Assemble, oracle.assembly_seconds, 1));
            let t = best_of(config.reps, || oracle.apply(&src, &mut y_sp));
            out.push(record(BenchKind::Spmv, t, config.reps));
        }
        Err(Error::Resource(msg)) => log::warn!("assembly skipped: {msg}"),
        Err(e) => return Err(e),
    }
    let mut failed = None;
    let t = best_of(config.reps, || {
        if let Err(e) = op.apply_jacobian(&src, &mut y_mf) {
            failed = Some(e);
        }
    });
    if let Some(e) = failed {
        return Err(e);
    }
    out.push(record(BenchKind::Mfmv, t, config.reps));
    Ok(out)
}

pub fn write_bench_csv<W: Write>(mut w: W, records: &[BenchRecord]) -> io::Result<()> {
    writeln!(w, "{BENCH_HEADER}")?;
    for r in records {
        writeln!(w, "{},{},{},{},{:.9e},{}", r.kind, r.degree, r.level, r.dofs, r.best_seconds, r.reps)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryRecord {
    /// `csr` or `matrix_free`.
    pub kind: &'static str,
    pub degree: usize,
    pub level: usize,
    pub dofs: usize,
    pub bytes: usize,
}

impl MemoryRecord {
    pub fn bytes_per_dof(&self) -> f64 {
        self.bytes as f64 / self.dofs as f64
    }
}

/// Storage of the assembled Jacobian (values, column indices, row offsets)
/// and of the matrix-free operator (shape data, state vectors, dof map).
/// The CSR size is counted from the sparsity pattern without assembling.
pub fn memory_report(level: usize, degree: usize) -> Result<Vec<MemoryRecord>, Error> {
    let hierarchy = MeshHierarchy::build(level, degree)?;
    let l = hierarchy.finest();
    let state = LinearizationState::new(l.dofs.n_scalar, MaterialParams::default(), SplitMode::Miehe);
    let n = state.n_dofs();
    let opts = OperatorOptions {
        cache: CacheMode::OnTheFly,
        ..OperatorOptions::default()
    };
    let op = PffOperator::new(l, state, opts)?;
    let rec = |kind, bytes| MemoryRecord {
        kind,
        degree,
        level,
        dofs: n,
        bytes,
    };
    Ok(vec![
        rec("csr", csr_bytes(n, jacobian_nnz(l))),
        rec("matrix_free", op.memory_bytes()),
    ])
}

pub fn write_memory_csv<W: Write>(mut w: W, records: &[MemoryRecord]) -> io::Result<()> {
    writeln!(w, "{MEMORY_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{:.3}",
            r.kind,
            r.degree,
            r.level,
            r.dofs,
            r.bytes,
            r.bytes_per_dof()
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::assemble_oracle;

    #[test]
    fn bench_records() {
        let mut c = BenchConfig::new(3, 2, SplitMode::Miehe);
        c.reps = 3;
        let r = benchmark_vmult(&c).unwrap();
        let kinds: Vec<BenchKind> = r.iter().map(|r| r.kind).collect();
        assert_eq!(kinds, vec![BenchKind::Assemble, BenchKind::Spmv, BenchKind::Mfmv]);
        assert!(r.iter().all(|r| r.best_seconds > 0.0 && r.dofs == 3 * (17 * 17 + 8)));
        let mut out = Vec::new();
        write_bench_csv(&mut out, &r).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("kind,degree,level,dofs,best_time_s,reps\nassemble,2,3,"));
        c.reps = 0;
        assert!(benchmark_vmult(&c).is_err());
    }

    #[test]
    fn memory_counts_match_assembled_matrix() {
        for p in 1..=3 {
            let h = MeshHierarchy::build(2, p).unwrap();
            let l = h.finest();
            let st = prepare_bench_state(l, SplitMode::Miehe).unwrap();
            let op = PffOperator::new(l, st, OperatorOptions::default()).unwrap();
            let a = assemble_oracle(&op).unwrap();
            let r = memory_report(2, p).unwrap();
            assert_eq!(r[0].bytes, a.matrix.memory_bytes());
            assert_eq!(r[0].dofs, a.matrix.n_rows);
        }
    }

    /// Average number of scalar nodes coupled to one node on an unbounded
    /// `Q_p` grid: vertex, edge-interior and cell-interior nodes couple to
    /// `(2p+1)²`, `(p+1)(2p+1)` and `(p+1)²` nodes.
    fn mean_coupling(p: usize) -> f64 {
        let (a, b, c) = ((2 * p + 1).pow(2), (p + 1) * (2 * p + 1), (p + 1).pow(2));
        (a + 2 * (p - 1) * b + (p - 1) * (p - 1) * c) as f64 / (p * p) as f64
    }

    #[test]
    fn memory_trend() {
        let one = memory_report(6, 1).unwrap();
        for p in 1..=4 {
            let r = memory_report(6, p).unwrap();
            let expect = 12.0 * 3.0 * mean_coupling(p) + 8.0;
            assert!((r[0].bytes_per_dof() / expect - 1.0).abs() < 0.03, "p={p} {r:?}");
            assert!(r[0].bytes_per_dof() >= one[0].bytes_per_dof());
            assert!(r[1].bytes_per_dof() <= one[1].bytes_per_dof() * 1.0001);
        }
    }
}
