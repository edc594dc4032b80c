//! Load-curve CSV and legacy VTK writers.

use std::io::{self, Write};

use super::LoadRecord;
use crate::mesh::Level;

pub const CSV_HEADER: &str = "step,time_s,u_applied_mm,load_x_kN,load_y_kN,as_iters,gmres_iters_total,active_dofs,wall_s";

pub fn write_csv_header<W: Write>(w: &mut W) -> io::Result<()> {
    writeln!(w, "{CSV_HEADER}")
}

pub fn write_csv_row<W: Write>(w: &mut W, r: &LoadRecord) -> io::Result<()> {
    writeln!(
        w,
        "{},{},{:.6e},{:.12e},{:.12e},{},{},{},{:.6}",
        r.step, r.time, r.applied, r.load_x, r.load_y, r.as_iterations, r.gmres_total, r.active_dofs, r.wall_seconds
    )
}

/// Writes `solution` on `level` as a legacy ASCII unstructured grid. Every
/// cell of degree `p` is split into `p × p` quads through its nodes, so
/// slit copies stay separate and the crack opening is visible.
pub fn write_vtk<W: Write>(mut w: W, level: &Level, solution: &[f64]) -> io::Result<()> {
    let d = &level.dofs;
    let s = d.n_scalar;
    let p = d.degree;
    let n_cells = level.mesh.n_cells();
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "fracturekit level {} degree {p}", level.mesh.level)?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {s} double")?;
    for c in &d.node_coords {
        writeln!(w, "{} {} 0", c[0], c[1])?;
    }
    let n_quads = n_cells * p * p;
    writeln!(w, "CELLS {n_quads} {}", 5 * n_quads)?;
    for c in 0..n_cells {
        let nodes = d.cell_nodes(c);
        for j in 0..p {
            for i in 0..p {
                let at = |a: usize, b: usize| nodes[b * (p + 1) + a];
                writeln!(w, "4 {} {} {} {}", at(i, j), at(i + 1, j), at(i + 1, j + 1), at(i, j + 1))?;
            }
        }
    }
    writeln!(w, "CELL_TYPES {n_quads}")?;
    for _ in 0..n_quads {
        writeln!(w, "9")?;
    }
    writeln!(w, "POINT_DATA {s}")?;
    writeln!(w, "VECTORS u double")?;
    for i in 0..s {
        writeln!(w, "{:e} {:e} 0", solution[i], solution[s + i])?;
    }
    writeln!(w, "SCALARS phi double 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for i in 0..s {
        writeln!(w, "{:e}", solution[2 * s + i])?;
    }
    Ok(())
}
