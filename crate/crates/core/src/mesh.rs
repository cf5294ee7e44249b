//! Regular background grids of Q4 (2D) or Hex8 (3D) elements.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spatial dimension of a problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Dim {
    Two,
    Three,
}

impl Dim {
    pub const fn n(self) -> usize {
        match self {
            Dim::Two => 2,
            Dim::Three => 3,
        }
    }

    /// Number of design parameters per Gaussian field.
    pub const fn block_len(self) -> usize {
        match self {
            Dim::Two => 5,
            Dim::Three => 9,
        }
    }

    /// Nodes per element (Q4 or Hex8).
    pub const fn nodes_per_element(self) -> usize {
        match self {
            Dim::Two => 4,
            Dim::Three => 8,
        }
    }

    pub const fn element_dofs(self) -> usize {
        self.n() * self.nodes_per_element()
    }
}

impl TryFrom<u8> for Dim {
    type Error = String;

    fn try_from(value: u8) -> std::result::Result<Self, Self::Error> {
        match value {
            2 => Ok(Dim::Two),
            3 => Ok(Dim::Three),
            other => Err(format!("dimension must be 2 or 3, got {other}")),
        }
    }
}

impl From<Dim> for u8 {
    fn from(d: Dim) -> u8 {
        d.n() as u8
    }
}

/// Local node offsets of a Q4 element, counterclockwise from the lower-left corner.
pub const Q4_CORNERS: [[usize; 3]; 4] = [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]];

/// Local node offsets of a Hex8 element: the Q4 pattern on the bottom face, then the top face.
pub const HEX8_CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

/// Uniform structured mesh over an axis-aligned box.
///
/// Nodes are numbered x-fastest, then y, then z; elements likewise. Node
/// coordinates are generated relative to the box centre so that a box centred
/// on a mirror plane produces bitwise-mirrored coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredMesh {
    dim: Dim,
    elems: [usize; 3],
    origin: [f64; 3],
    extent: [f64; 3],
    h: [f64; 3],
}

impl StructuredMesh {
    pub fn new(dim: Dim, counts: &[usize], origin: &[f64], extent: &[f64]) -> Result<Self> {
        let n = dim.n();
        if counts.len() != n || origin.len() != n || extent.len() != n {
            return Err(Error::Shape(format!(
                "mesh description needs {n} counts/origin/extent entries"
            )));
        }
        let mut elems = [1usize; 3];
        let mut o = [0.0; 3];
        let mut e = [0.0; 3];
        let mut h = [1.0; 3];
        for a in 0..n {
            if counts[a] == 0 {
                return Err(Error::Shape("element count must be positive".into()));
            }
            if !(extent[a] > 0.0) || !extent[a].is_finite() || !origin[a].is_finite() {
                return Err(Error::Shape("mesh extent must be positive and finite".into()));
            }
            elems[a] = counts[a];
            o[a] = origin[a];
            e[a] = extent[a];
            h[a] = extent[a] / counts[a] as f64;
        }
        if n == 2 {
            elems[2] = 0;
        }
        Ok(Self {
            dim,
            elems,
            origin: o,
            extent: e,
            h,
        })
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    /// Element counts per axis (length `dim`).
    pub fn counts(&self) -> &[usize] {
        &self.elems[..self.dim.n()]
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin[..self.dim.n()]
    }

    pub fn extent(&self) -> &[f64] {
        &self.extent[..self.dim.n()]
    }

    /// Element edge lengths per axis.
    pub fn spacing(&self) -> &[f64] {
        &self.h[..self.dim.n()]
    }

    /// Smallest element edge length.
    pub fn edge_length(&self) -> f64 {
        self.spacing().iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn element_volume(&self) -> f64 {
        self.spacing().iter().product()
    }

    pub fn domain_volume(&self) -> f64 {
        self.extent().iter().product()
    }

    /// Nodes per axis; the unused z axis of a 2D mesh reports 1.
    pub fn node_counts(&self) -> [usize; 3] {
        match self.dim {
            Dim::Two => [self.elems[0] + 1, self.elems[1] + 1, 1],
            Dim::Three => [self.elems[0] + 1, self.elems[1] + 1, self.elems[2] + 1],
        }
    }

    /// Elements per axis; the unused z axis of a 2D mesh reports 1.
    pub fn element_counts3(&self) -> [usize; 3] {
        match self.dim {
            Dim::Two => [self.elems[0], self.elems[1], 1],
            Dim::Three => self.elems,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.node_counts().iter().product()
    }

    pub fn num_elements(&self) -> usize {
        self.element_counts3().iter().product()
    }

    pub fn num_dofs(&self) -> usize {
        self.num_nodes() * self.dim.n()
    }

    pub fn node_index(&self, i: usize, j: usize, k: usize) -> usize {
        let nn = self.node_counts();
        i + nn[0] * (j + nn[1] * k)
    }

    pub fn node_grid_index(&self, node: usize) -> [usize; 3] {
        let nn = self.node_counts();
        [node % nn[0], (node / nn[0]) % nn[1], node / (nn[0] * nn[1])]
    }

    pub fn element_index(&self, i: usize, j: usize, k: usize) -> usize {
        let ne = self.element_counts3();
        i + ne[0] * (j + ne[1] * k)
    }

    pub fn element_grid_index(&self, e: usize) -> [usize; 3] {
        let ne = self.element_counts3();
        [e % ne[0], (e / ne[0]) % ne[1], e / (ne[0] * ne[1])]
    }

    /// Coordinate of grid line `i` along `axis`.
    pub fn node_coord(&self, axis: usize, i: usize) -> f64 {
        let centre = self.origin[axis] + 0.5 * self.extent[axis];
        let offset = i as f64 - 0.5 * self.elems[axis] as f64;
        centre + offset * self.h[axis]
    }

    /// All grid-line coordinates along `axis`.
    pub fn axis_coords(&self, axis: usize) -> Vec<f64> {
        let n = self.node_counts()[axis];
        if axis >= self.dim.n() {
            return vec![0.0];
        }
        (0..n).map(|i| self.node_coord(axis, i)).collect()
    }

    pub fn node_position(&self, node: usize) -> [f64; 3] {
        let g = self.node_grid_index(node);
        let mut p = [0.0; 3];
        for (a, pa) in p.iter_mut().enumerate().take(self.dim.n()) {
            *pa = self.node_coord(a, g[a]);
        }
        p
    }

    pub fn element_centroid(&self, e: usize) -> [f64; 3] {
        let g = self.element_grid_index(e);
        let mut p = [0.0; 3];
        for (a, pa) in p.iter_mut().enumerate().take(self.dim.n()) {
            let centre = self.origin[a] + 0.5 * self.extent[a];
            let offset = g[a] as f64 + 0.5 - 0.5 * self.elems[a] as f64;
            *pa = centre + offset * self.h[a];
        }
        p
    }

    /// Node indices of element `e` in local (Q4/Hex8) order.
    pub fn element_nodes(&self, e: usize) -> [usize; 8] {
        let g = self.element_grid_index(e);
        let mut out = [0usize; 8];
        let corners: &[[usize; 3]] = match self.dim {
            Dim::Two => &Q4_CORNERS,
            Dim::Three => &HEX8_CORNERS,
        };
        for (slot, c) in out.iter_mut().zip(corners) {
            *slot = self.node_index(g[0] + c[0], g[1] + c[1], g[2] + c[2]);
        }
        out
    }

    /// Global dof indices of element `e`, node-major.
    pub fn element_dofs(&self, e: usize, out: &mut Vec<usize>) {
        out.clear();
        let d = self.dim.n();
        let nodes = self.element_nodes(e);
        for &n in &nodes[..self.dim.nodes_per_element()] {
            for a in 0..d {
                out.push(n * d + a);
            }
        }
    }

    /// Index of the grid line closest to coordinate `x` along `axis`.
    pub fn nearest_line(&self, axis: usize, x: f64) -> usize {
        let t = (x - self.origin[axis]) / self.h[axis];
        let n = self.elems[axis] as f64;
        t.round().clamp(0.0, n) as usize
    }

    /// Same mesh geometry with different element counts.
    pub fn with_counts(&self, counts: &[usize]) -> Result<Self> {
        StructuredMesh::new(self.dim, counts, self.origin(), self.extent())
    }
}
