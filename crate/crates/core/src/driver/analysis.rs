//! Load-curve and crack-geometry measures.

use crate::mesh::Level;

/// Phase-field value below which a node counts as cracked.
pub const CRACK_THRESHOLD: f64 = 0.1;

/// Coordinates of nodes with `φ < CRACK_THRESHOLD`.
pub fn crack_nodes(level: &Level, phase: &[f64]) -> Vec<[f64; 2]> {
    level
        .dofs
        .node_coords
        .iter()
        .zip(phase)
        .filter(|(_, &p)| p < CRACK_THRESHOLD)
        .map(|(c, _)| *c)
        .collect()
}

/// Summary of a crack node set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CrackGeometry {
    pub count: usize,
    pub centroid: [f64; 2],
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    /// Largest `|y − 0.5|`.
    pub band: f64,
}

impl CrackGeometry {
    pub fn of(nodes: &[[f64; 2]]) -> Option<CrackGeometry> {
        if nodes.is_empty() {
            return None;
        }
        let n = nodes.len() as f64;
        let mut g = CrackGeometry {
            count: nodes.len(),
            centroid: [0.0; 2],
            x_max: f64::NEG_INFINITY,
            y_min: f64::INFINITY,
            y_max: f64::NEG_INFINITY,
            band: 0.0,
        };
        for c in nodes {
            g.centroid[0] += c[0] / n;
            g.centroid[1] += c[1] / n;
            g.x_max = g.x_max.max(c[0]);
            g.y_min = g.y_min.min(c[1]);
            g.y_max = g.y_max.max(c[1]);
            g.band = g.band.max((c[1] - 0.5).abs());
        }
        Some(g)
    }

    /// Crack stays within `|y − 0.5| ≤ width`.
    pub fn within_band(&self, width: f64) -> bool {
        self.band <= width
    }

    /// Crack curves downward: centroid below the slit and reaching `y_limit`.
    pub fn curves_down(&self, y_limit: f64) -> bool {
        self.centroid[1] < 0.5 && self.y_min < y_limit
    }
}

/// Cracked nodes beyond `x_min` exist both above `0.5 + gap` and below
/// `0.5 − gap`.
pub fn branches_both_sides(nodes: &[[f64; 2]], x_min: f64, gap: f64) -> bool {
    let beyond = || nodes.iter().filter(move |c| c[0] > x_min);
    beyond().any(|c| c[1] > 0.5 + gap) && beyond().any(|c| c[1] < 0.5 - gap)
}

/// Index and value of the largest load.
pub fn peak(loads: &[f64]) -> Option<(usize, f64)> {
    loads
        .iter()
        .copied()
        .enumerate()
        .fold(None, |best, (i, v)| match best {
            Some((_, b)) if b >= v => best,
            _ => Some((i, v)),
        })
}

/// First index after the peak where the load is at most `fraction` of the
/// peak value.
pub fn first_reach_below(loads: &[f64], fraction: f64) -> Option<usize> {
    let (ip, vp) = peak(loads)?;
    (ip + 1..loads.len()).find(|&i| loads[i] <= fraction * vp)
}

/// Rises to a single interior peak and decays to at most `final_fraction`
/// of it. Before the peak the curve may dip by at most `tolerance · peak`
/// between consecutive samples.
pub fn is_rise_and_decay(loads: &[f64], final_fraction: f64, tolerance: f64) -> bool {
    let Some((ip, vp)) = peak(loads) else {
        return false;
    };
    if vp <= 0.0 || ip == 0 || ip + 1 == loads.len() {
        return false;
    }
    let rising = loads[..=ip].windows(2).all(|w| w[1] >= w[0] - tolerance * vp);
    let decayed = *loads.last().unwrap() <= final_fraction * vp;
    rising && decayed
}

/// Total variation of the load signal after its peak.
pub fn post_peak_variation(loads: &[f64]) -> f64 {
    let Some((ip, _)) = peak(loads) else {
        return 0.0;
    };
    loads[ip..].windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}
