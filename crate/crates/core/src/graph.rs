//! Periodic radius graphs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::crystal::{norm, CrystalStructure};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphConfig {
    /// Å.
    pub cutoff: f64,
    pub max_neighbors: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            cutoff: 5.0,
            max_neighbors: 12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    /// Å.
    pub distance: f64,
    /// Lattice translation applied to `dst`.
    pub image: [i32; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureGraph {
    pub node_species: Vec<u8>,
    /// Sorted by `(src, dst, image)`.
    pub edges: Vec<Edge>,
}

impl StructureGraph {
    pub fn n_nodes(&self) -> usize {
        self.node_species.len()
    }

    pub fn degree(&self, node: usize) -> usize {
        self.edges.iter().filter(|e| e.src == node).count()
    }
}

type EdgeKey = (usize, usize, [i32; 3]);

fn neg(m: [i32; 3]) -> [i32; 3] {
    [-m[0], -m[1], -m[2]]
}

/// Distance from atom `i` to the image `m` of atom `j`. Evaluated in a
/// canonical orientation so that (i, j, m) and (j, i, -m) agree bitwise.
fn image_distance(structure: &CrystalStructure, i: usize, j: usize, m: [i32; 3]) -> f64 {
    let (i, j, m) = if (j, neg(m)) < (i, m) {
        (j, i, neg(m))
    } else {
        (i, j, m)
    };
    let f = structure.frac_coords();
    let df = [
        f[j][0] + m[0] as f64 - f[i][0],
        f[j][1] + m[1] as f64 - f[i][1],
        f[j][2] + m[2] as f64 - f[i][2],
    ];
    norm(structure.lattice().frac_to_cart(df))
}

/// Neighbors within `cutoff` of every atom, including periodic images of
/// the atom itself. Each source keeps at most `max_neighbors` edges
/// (nearest first, ties by `(dst, image)`); the result is then closed
/// under edge reversal.
pub fn build_radius_graph(
    structure: &CrystalStructure,
    cutoff: f64,
    max_neighbors: usize,
) -> Result<StructureGraph> {
    if !(cutoff > 0.0 && cutoff.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "cutoff {cutoff} must be > 0"
        )));
    }
    if max_neighbors == 0 {
        return Err(Error::InvalidArgument("max_neighbors must be >= 1".into()));
    }
    let widths = structure.lattice().perpendicular_widths();
    if widths.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::InvalidLattice(format!(
            "degenerate cell widths {widths:?}"
        )));
    }
    let reach = widths.map(|w| (cutoff / w).ceil() as i32);
    let n = structure.len();

    let mut kept: BTreeMap<EdgeKey, f64> = BTreeMap::new();
    for i in 0..n {
        let mut candidates: Vec<(f64, usize, [i32; 3])> = Vec::new();
        for j in 0..n {
            for a in -reach[0]..=reach[0] {
                for b in -reach[1]..=reach[1] {
                    for c in -reach[2]..=reach[2] {
                        let m = [a, b, c];
                        if i == j && m == [0, 0, 0] {
                            continue;
                        }
                        let d = image_distance(structure, i, j, m);
                        if d > 0.0 && d <= cutoff {
                            candidates.push((d, j, m));
                        }
                    }
                }
            }
        }
        candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then((x.1, x.2).cmp(&(y.1, y.2))));
        for (d, j, m) in candidates.into_iter().take(max_neighbors) {
            kept.insert((i, j, m), d);
        }
    }
    let reversed: Vec<(EdgeKey, f64)> = kept
        .iter()
        .map(|(&(i, j, m), &d)| ((j, i, neg(m)), d))
        .collect();
    for (key, d) in reversed {
        kept.entry(key).or_insert(d);
    }
    let edges = kept
        .into_iter()
        .map(|((src, dst, image), distance)| Edge {
            src,
            dst,
            distance,
            image,
        })
        .collect();
    Ok(StructureGraph {
        node_species: structure.species().to_vec(),
        edges,
    })
}
