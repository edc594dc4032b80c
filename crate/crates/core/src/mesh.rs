//! Nested uniform quadrilateral meshes of the slit unit square and the
//! continuous `Q_p` degree-of-freedom numbering on each level.
//!
//! The slit `{y = 0.5, x < 0.5}` is part of the geometry: vertices and
//! nodes on it are duplicated on every level `ℓ ≥ 1`. The regular grid node
//! is the lower copy (seen by cells below the slit); the duplicate, numbered
//! after all grid nodes, is the upper copy. The tip `(0.5, 0.5)` is shared.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::basis::support_points;
use crate::Error;

/// Number of solution components: `u_x`, `u_y`, `φ`.
pub const N_COMPONENTS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BoundaryTag {
    Bottom,
    Top,
    Left,
    Right,
}

impl BoundaryTag {
    pub const ALL: [BoundaryTag; 4] = [
        BoundaryTag::Bottom,
        BoundaryTag::Top,
        BoundaryTag::Left,
        BoundaryTag::Right,
    ];

    fn bit(self) -> u8 {
        match self {
            BoundaryTag::Bottom => 1,
            BoundaryTag::Top => 2,
            BoundaryTag::Left => 4,
            BoundaryTag::Right => 8,
        }
    }
}

impl FromStr for BoundaryTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "bottom" => Ok(BoundaryTag::Bottom),
            "top" => Ok(BoundaryTag::Top),
            "left" => Ok(BoundaryTag::Left),
            "right" => Ok(BoundaryTag::Right),
            other => Err(Error::UnknownTag(other.to_string())),
        }
    }
}

impl fmt::Display for BoundaryTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BoundaryTag::Bottom => "bottom",
            BoundaryTag::Top => "top",
            BoundaryTag::Left => "left",
            BoundaryTag::Right => "right",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlitCopy {
    None,
    Lower,
    Upper,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Component {
    Ux,
    Uy,
    Phi,
}

impl Component {
    pub fn index(self) -> usize {
        match self {
            Component::Ux => 0,
            Component::Uy => 1,
            Component::Phi => 2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Edge {
    pub vertices: [usize; 2],
    /// One adjacent cell on the boundary and on slit copies, two inside.
    pub cells: Vec<usize>,
    pub boundary: Option<BoundaryTag>,
    pub slit: SlitCopy,
}

/// Cell geometry and topology of one refinement level.
#[derive(Clone, Debug)]
pub struct MeshLevel {
    pub level: usize,
    pub cells_per_side: usize,
    pub h: f64,
    /// Vertex coordinates in mm; grid vertices first (x fastest), then the
    /// upper copies of slit vertices.
    pub vertices: Vec<[f64; 2]>,
    /// Vertex ids of each cell in lexicographic order `[v00, v10, v01, v11]`.
    pub cells: Vec<[usize; 4]>,
    pub edges: Vec<Edge>,
}

impl MeshLevel {
    fn new(level: usize) -> Self {
        let n = 1usize << level;
        let h = 1.0 / n as f64;
        let nv = n + 1;
        let mut vertices = Vec::with_capacity(nv * nv + n / 2);
        for b in 0..nv {
            for a in 0..nv {
                vertices.push([a as f64 * h, b as f64 * h]);
            }
        }
        let slit_row = n / 2;
        let has_slit = level >= 1;
        if has_slit {
            for a in 0..n / 2 {
                vertices.push([a as f64 * h, 0.5]);
            }
        }
        let vid = |a: usize, b: usize, upper_side: bool| -> usize {
            if has_slit && upper_side && b == slit_row && a < n / 2 {
                nv * nv + a
            } else {
                b * nv + a
            }
        };
        let mut cells = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                let upper = has_slit && j == slit_row;
                cells.push([
                    vid(i, j, upper),
                    vid(i + 1, j, upper),
                    vid(i, j + 1, false),
                    vid(i + 1, j + 1, false),
                ]);
            }
        }

        let mut edge_index = std::collections::HashMap::new();
        let mut edges: Vec<Edge> = Vec::new();
        for (c, cv) in cells.iter().enumerate() {
            for pair in [[cv[0], cv[1]], [cv[2], cv[3]], [cv[0], cv[2]], [cv[1], cv[3]]] {
                let key = (pair[0].min(pair[1]), pair[0].max(pair[1]));
                let e = *edge_index.entry(key).or_insert_with(|| {
                    edges.push(Edge {
                        vertices: pair,
                        cells: Vec::new(),
                        boundary: None,
                        slit: SlitCopy::None,
                    });
                    edges.len() - 1
                });
                edges[e].cells.push(c);
            }
        }
        for e in edges.iter_mut() {
            let p0 = vertices[e.vertices[0]];
            let p1 = vertices[e.vertices[1]];
            let horizontal = p0[1] == p1[1];
            if horizontal && p0[1] == 0.5 && p0[0].max(p1[0]) <= 0.5 && has_slit {
                let upper = e.vertices.iter().any(|&v| v >= nv * nv);
                e.slit = if upper { SlitCopy::Upper } else { SlitCopy::Lower };
            }
            if e.cells.len() == 1 && e.slit == SlitCopy::None {
                e.boundary = Some(if horizontal && p0[1] == 0.0 {
                    BoundaryTag::Bottom
                } else if horizontal {
                    BoundaryTag::Top
                } else if p0[0] == 0.0 {
                    BoundaryTag::Left
                } else {
                    BoundaryTag::Right
                });
            }
        }
        MeshLevel {
            level,
            cells_per_side: n,
            h,
            vertices,
            cells,
            edges,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    /// Lower-left corner of cell `c`.
    pub fn cell_origin(&self, c: usize) -> [f64; 2] {
        let n = self.cells_per_side;
        [(c % n) as f64 * self.h, (c / n) as f64 * self.h]
    }
}

/// Numbering of the continuous `Q_p` nodes of one level. Degrees of freedom
/// are component-major: `dof = component * n_scalar + node`.
#[derive(Clone, Debug)]
pub struct DofMap {
    pub degree: usize,
    /// Grid nodes per side, `p · 2^ℓ + 1`.
    pub nodes_per_side: usize,
    pub n_scalar: usize,
    pub node_coords: Vec<[f64; 2]>,
    pub node_slit: Vec<SlitCopy>,
    boundary_bits: Vec<u8>,
    /// `(p+1)^2` scalar node ids per cell, x fastest.
    cell_nodes: Vec<u32>,
    dofs_per_cell: usize,
}

impl DofMap {
    fn new(mesh: &MeshLevel, degree: usize) -> Self {
        let n = mesh.cells_per_side;
        let p = degree;
        let nn = p * n + 1;
        let has_slit = mesh.level >= 1;
        let n_slit = if has_slit { p * n / 2 } else { 0 };
        let n_scalar = nn * nn + n_slit;
        let support = support_points(p);
        let coord_1d = |a: usize| -> f64 {
            if a == nn - 1 {
                return 1.0;
            }
            let (i, k) = (a / p, a % p);
            (i as f64 + support[k]) * mesh.h
        };
        let slit_row = p * n / 2;
        let mut node_coords = Vec::with_capacity(n_scalar);
        let mut node_slit = Vec::with_capacity(n_scalar);
        let mut boundary_bits = Vec::with_capacity(n_scalar);
        let bits_of = |a: usize, b: usize| -> u8 {
            let mut bits = 0;
            if b == 0 {
                bits |= BoundaryTag::Bottom.bit();
            }
            if b == nn - 1 {
                bits |= BoundaryTag::Top.bit();
            }
            if a == 0 {
                bits |= BoundaryTag::Left.bit();
            }
            if a == nn - 1 {
                bits |= BoundaryTag::Right.bit();
            }
            bits
        };
        for b in 0..nn {
            for a in 0..nn {
                node_coords.push([coord_1d(a), coord_1d(b)]);
                node_slit.push(if has_slit && b == slit_row && a < slit_row {
                    SlitCopy::Lower
                } else {
                    SlitCopy::None
                });
                boundary_bits.push(bits_of(a, b));
            }
        }
        for a in 0..n_slit {
            node_coords.push([coord_1d(a), 0.5]);
            node_slit.push(SlitCopy::Upper);
            boundary_bits.push(bits_of(a, slit_row));
        }
        let nd = p + 1;
        let mut cell_nodes = Vec::with_capacity(n * n * nd * nd);
        for j in 0..n {
            for i in 0..n {
                for ky in 0..nd {
                    for kx in 0..nd {
                        let a = i * p + kx;
                        let b = j * p + ky;
                        let upper = has_slit && ky == 0 && j == n / 2 && a < slit_row;
                        let id = if upper { nn * nn + a } else { b * nn + a };
                        cell_nodes.push(id as u32);
                    }
                }
            }
        }
        DofMap {
            degree,
            nodes_per_side: nn,
            n_scalar,
            node_coords,
            node_slit,
            boundary_bits,
            cell_nodes,
            dofs_per_cell: nd * nd,
        }
    }

    pub fn n_dofs(&self) -> usize {
        N_COMPONENTS * self.n_scalar
    }

    pub fn dof(&self, component: Component, node: usize) -> usize {
        component.index() * self.n_scalar + node
    }

    pub fn component_of(&self, dof: usize) -> Component {
        match dof / self.n_scalar {
            0 => Component::Ux,
            1 => Component::Uy,
            _ => Component::Phi,
        }
    }

    pub fn node_of(&self, dof: usize) -> usize {
        dof % self.n_scalar
    }

    /// Scalar nodes per cell, `(p+1)^2`.
    pub fn nodes_per_cell(&self) -> usize {
        self.dofs_per_cell
    }

    #[inline(always)]
    pub fn cell_nodes(&self, cell: usize) -> &[u32] {
        &self.cell_nodes[cell * self.dofs_per_cell..(cell + 1) * self.dofs_per_cell]
    }

    pub fn on_boundary(&self, node: usize, tag: BoundaryTag) -> bool {
        self.boundary_bits[node] & tag.bit() != 0
    }

    pub fn slit_copy_of_dof(&self, dof: usize) -> SlitCopy {
        self.node_slit[self.node_of(dof)]
    }

    /// Bytes held by the numbering (per-cell maps, coordinates and tags).
    pub fn memory_bytes(&self) -> usize {
        self.cell_nodes.len() * 4 + self.node_coords.len() * 16 + self.node_slit.len() + self.boundary_bits.len()
    }
}

/// One level of the hierarchy.
#[derive(Clone, Debug)]
pub struct Level {
    pub mesh: MeshLevel,
    pub dofs: DofMap,
}

impl Level {
    /// Displacement dofs on the tagged boundary, ascending.
    pub fn boundary_dofs(&self, tag: BoundaryTag) -> Vec<usize> {
        let d = &self.dofs;
        let nodes: Vec<usize> = (0..d.n_scalar).filter(|&i| d.on_boundary(i, tag)).collect();
        let mut out: Vec<usize> = nodes.iter().map(|&i| d.dof(Component::Ux, i)).collect();
        out.extend(nodes.iter().map(|&i| d.dof(Component::Uy, i)));
        out
    }

    /// Pairs of (lower, upper) scalar node ids along the slit.
    pub fn slit_node_pairs(&self) -> Vec<(usize, usize)> {
        let d = &self.dofs;
        let nn = d.nodes_per_side;
        let row = (nn - 1) / 2;
        (0..d.n_scalar)
            .filter(|&i| d.node_slit[i] == SlitCopy::Upper)
            .map(|i| {
                let a = i - nn * nn;
                (row * nn + a, i)
            })
            .collect()
    }

    /// Pairs of (lower, upper) dofs along the slit, one per node and component.
    pub fn slit_pairs(&self) -> Vec<(usize, usize)> {
        let pairs = self.slit_node_pairs();
        let s = self.dofs.n_scalar;
        (0..N_COMPONENTS)
            .flat_map(|c| pairs.iter().map(move |&(l, u)| (c * s + l, c * s + u)))
            .collect()
    }

    /// Cell containing `point` together with the reference coordinates of
    /// the point in it. Points on the slit are placed in the cell on the
    /// side of `copy`.
    pub fn locate(&self, point: [f64; 2], copy: SlitCopy) -> (usize, [f64; 2]) {
        let n = self.mesh.cells_per_side;
        let h = self.mesh.h;
        let idx = |x: f64| ((x / h).floor() as isize).clamp(0, n as isize - 1) as usize;
        let i = idx(point[0]);
        let mut j = idx(point[1]);
        if n >= 2 && point[1] == 0.5 {
            j = match copy {
                SlitCopy::Lower => n / 2 - 1,
                _ => n / 2,
            };
        }
        let xi = (point[0] / h - i as f64).clamp(0.0, 1.0);
        let eta = (point[1] / h - j as f64).clamp(0.0, 1.0);
        (j * n + i, [xi, eta])
    }

    /// Plain-text dump: one `node` record per scalar node, one `cell`
    /// record per cell.
    pub fn write_dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let d = &self.dofs;
        writeln!(
            w,
            "# level {} degree {} cells {} scalar_nodes {}",
            self.mesh.level,
            d.degree,
            self.mesh.n_cells(),
            d.n_scalar
        )?;
        for (i, (c, s)) in d.node_coords.iter().zip(&d.node_slit).enumerate() {
            let tag = match s {
                SlitCopy::None => "-",
                SlitCopy::Lower => "lower",
                SlitCopy::Upper => "upper",
            };
            writeln!(w, "node {} {} {} {}", i, c[0], c[1], tag)?;
        }
        for c in 0..self.mesh.n_cells() {
            let ids: Vec<String> = d.cell_nodes(c).iter().map(|v| v.to_string()).collect();
            writeln!(w, "cell {} {}", c, ids.join(" "))?;
        }
        Ok(())
    }
}

/// Levels `0..=max_level` sharing one polynomial degree.
#[derive(Clone, Debug)]
pub struct MeshHierarchy {
    pub degree: usize,
    pub levels: Vec<Level>,
}

impl MeshHierarchy {
    pub fn build(max_level: usize, degree: usize) -> Result<Self, Error> {
        if max_level < 2 {
            return Err(Error::Config(format!(
                "hierarchy needs at least level 2 for the coarse solve, got {max_level}"
            )));
        }
        if degree == 0 || degree > crate::basis::MAX_DEGREE {
            return Err(Error::Config(format!("unsupported degree {degree}")));
        }
        let levels = (0..=max_level)
            .map(|l| {
                let mesh = MeshLevel::new(l);
                let dofs = DofMap::new(&mesh, degree);
                Level { mesh, dofs }
            })
            .collect();
        Ok(MeshHierarchy { degree, levels })
    }

    pub fn max_level(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn finest(&self) -> &Level {
        self.levels.last().expect("hierarchy is never empty")
    }

    pub fn level(&self, l: usize) -> Result<&Level, Error> {
        self.levels.get(l).ok_or(Error::LevelOutOfRange {
            level: l,
            n_levels: self.levels.len(),
        })
    }
}

/// Kinds of constrained dofs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ConstraintKind {
    Dirichlet(f64),
    Active,
}

/// Dirichlet values plus the phase-field active set on one level.
#[derive(Clone, Debug)]
pub struct ConstraintSet {
    kinds: Vec<Option<ConstraintKind>>,
    n_scalar: usize,
}

impl ConstraintSet {
    pub fn new(dofs: &DofMap) -> Self {
        ConstraintSet {
            kinds: vec![None; dofs.n_dofs()],
            n_scalar: dofs.n_scalar,
        }
    }

    pub fn add_dirichlet(&mut self, dof: usize, value: f64) -> Result<(), Error> {
        match self.kinds[dof] {
            Some(ConstraintKind::Dirichlet(v)) if v != value => Err(Error::ConflictingConstraint {
                dof,
                first: v,
                second: value,
            }),
            Some(ConstraintKind::Active) => Err(Error::ConflictingConstraint {
                dof,
                first: f64::NAN,
                second: value,
            }),
            _ => {
                self.kinds[dof] = Some(ConstraintKind::Dirichlet(value));
                Ok(())
            }
        }
    }

    /// Replaces the active set. Entries must be phase-field dofs.
    pub fn set_active(&mut self, dofs: &[usize]) -> Result<(), Error> {
        if let Some(&bad) = dofs.iter().find(|&&d| d < 2 * self.n_scalar) {
            return Err(Error::NotPhaseField(bad));
        }
        for k in self.kinds.iter_mut() {
            if *k == Some(ConstraintKind::Active) {
                *k = None;
            }
        }
        for &d in dofs {
            self.kinds[d] = Some(ConstraintKind::Active);
        }
        Ok(())
    }

    pub fn kind(&self, dof: usize) -> Option<ConstraintKind> {
        self.kinds[dof]
    }

    pub fn dirichlet(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.kinds.iter().enumerate().filter_map(|(i, k)| match k {
            Some(ConstraintKind::Dirichlet(v)) => Some((i, *v)),
            _ => None,
        })
    }

    pub fn active(&self) -> impl Iterator<Item = usize> + '_ {
        self.kinds
            .iter()
            .enumerate()
            .filter(|(_, k)| **k == Some(ConstraintKind::Active))
            .map(|(i, _)| i)
    }

    /// `true` for every constrained dof.
    pub fn mask(&self) -> Vec<bool> {
        self.kinds.iter().map(|k| k.is_some()).collect()
    }
}
