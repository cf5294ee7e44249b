//! Marching squares on a nodal grid.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Dim, StructuredMesh};

/// Values sampled on a rectilinear 2D node grid, `x` varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub values: Vec<f64>,
}

impl NodeGrid {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if xs.len() < 2 || ys.len() < 2 || values.len() != xs.len() * ys.len() {
            return Err(Error::Shape(format!(
                "grid of {}x{} nodes needs {} values, got {}",
                xs.len(),
                ys.len(),
                xs.len() * ys.len(),
                values.len()
            )));
        }
        Ok(Self { xs, ys, values })
    }

    pub fn from_mesh(mesh: &StructuredMesh, nodal: &[f64]) -> Result<Self> {
        if mesh.dim() != Dim::Two {
            return Err(Error::Shape("contours are extracted from 2D meshes only".into()));
        }
        Self::new(mesh.axis_coords(0), mesh.axis_coords(1), nodal.to_vec())
    }

    /// Samples `f` on a uniform grid of `nx × ny` nodes over a box.
    pub fn sample<F: Fn([f64; 2]) -> f64>(lo: [f64; 2], hi: [f64; 2], nx: usize, ny: usize, f: F) -> Result<Self> {
        let axis = |a: usize, n: usize| -> Vec<f64> {
            (0..n).map(|i| lo[a] + (hi[a] - lo[a]) * i as f64 / (n - 1) as f64).collect()
        };
        let xs = axis(0, nx.max(2));
        let ys = axis(1, ny.max(2));
        let mut values = Vec::with_capacity(xs.len() * ys.len());
        for &y in &ys {
            for &x in &xs {
                values.push(f([x, y]));
            }
        }
        Self::new(xs, ys, values)
    }

    fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i + self.xs.len() * j]
    }
}

/// A closed level curve, first point repeated at the end. Traversed with
/// the region above the level on the left, so outer boundaries run
/// counterclockwise and holes clockwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    pub points: Vec<[f64; 2]>,
    pub level: f64,
}

impl Contour {
    /// Distinct vertices (the closing duplicate excluded).
    pub fn vertex_count(&self) -> usize {
        self.points.len().saturating_sub(1)
    }

    /// Shoelace area; positive for counterclockwise curves.
    pub fn signed_area(&self) -> f64 {
        self.points.windows(2).map(|w| w[0][0] * w[1][1] - w[1][0] * w[0][1]).sum::<f64>() * 0.5
    }

    pub fn length(&self) -> f64 {
        self.points.windows(2).map(|w| dist(w[0], w[1])).sum()
    }

    /// Sum of the exterior angles; `±2π` for a simple closed polygon.
    pub fn turning(&self) -> f64 {
        let n = self.vertex_count();
        let mut total = 0.0;
        for i in 0..n {
            let a = self.points[(i + n - 1) % n];
            let b = self.points[i];
            let c = self.points[(i + 1) % n];
            let (u, v) = ([b[0] - a[0], b[1] - a[1]], [c[0] - b[0], c[1] - b[1]]);
            total += (u[0] * v[1] - u[1] * v[0]).atan2(u[0] * v[0] + u[1] * v[1]);
        }
        total
    }
}

pub(crate) fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Level-`level` curves of the grid, cut where the region leaves the grid
/// so every curve is closed. Saddle cells are resolved by the bilinear
/// centre value.
pub fn extract_contours(grid: &NodeGrid, level: f64) -> Vec<Contour> {
    extract_contours_with(grid, level, None)
}

/// As [`extract_contours`], with saddle cells resolved by `centre`, usually
/// the exact field at the cell centre.
pub fn extract_contours_with(grid: &NodeGrid, level: f64, centre: Option<&dyn Fn([f64; 2]) -> f64>) -> Vec<Contour> {
    let (nx, ny) = (grid.xs.len(), grid.ys.len());
    // a zero-width ring of below-level nodes closes curves along the border
    let px = |i: usize| grid.xs[i.saturating_sub(1).min(nx - 1)];
    let py = |j: usize| grid.ys[j.saturating_sub(1).min(ny - 1)];
    let val = |i: usize, j: usize| -> f64 {
        if i == 0 || j == 0 || i > nx || j > ny {
            f64::NEG_INFINITY
        } else {
            grid.value(i - 1, j - 1)
        }
    };
    let inside = |v: f64| v >= level;
    let (mx, my) = (nx + 2, ny + 2);

    // edge ids: horizontal (i,j)-(i+1,j) -> 2*(i + mx*j), vertical (i,j)-(i,j+1) -> 2*(i + mx*j) + 1
    let point_on = |id: usize| -> [f64; 2] {
        let base = id / 2;
        let (i, j) = (base % mx, base / mx);
        let (i2, j2) = if id % 2 == 0 { (i + 1, j) } else { (i, j + 1) };
        let (a, b) = (val(i, j), val(i2, j2));
        let (pa, pb) = ([px(i), py(j)], [px(i2), py(j2)]);
        let t = if a == f64::NEG_INFINITY {
            1.0
        } else if b == f64::NEG_INFINITY {
            0.0
        } else {
            ((level - a) / (b - a)).clamp(0.0, 1.0)
        };
        [pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])]
    };

    let mut next: HashMap<usize, usize> = HashMap::new();
    for j in 0..my - 1 {
        for i in 0..mx - 1 {
            let c = [val(i, j), val(i + 1, j), val(i + 1, j + 1), val(i, j + 1)];
            let s = c.map(inside);
            let count = s.iter().filter(|&&b| b).count();
            if count == 0 || count == 4 {
                continue;
            }
            // cell edges counterclockwise: bottom, right, top, left
            let edges = [
                2 * (i + mx * j),
                2 * ((i + 1) + mx * j) + 1,
                2 * (i + mx * (j + 1)),
                2 * (i + mx * j) + 1,
            ];
            // exit: the counterclockwise walk leaves the region on this edge
            let exits: Vec<usize> = (0..4).filter(|&k| s[k] && !s[(k + 1) % 4]).collect();
            let entries: Vec<usize> = (0..4).filter(|&k| !s[k] && s[(k + 1) % 4]).collect();
            if exits.len() == 1 {
                next.insert(edges[exits[0]], edges[entries[0]]);
            } else {
                let cx = 0.5 * (px(i) + px(i + 1));
                let cy = 0.5 * (py(j) + py(j + 1));
                let mid = match centre {
                    Some(f) if i > 0 && j > 0 && i < nx && j < ny => f([cx, cy]),
                    _ => 0.25 * (c[0] + c[1] + c[2] + c[3]),
                };
                for &k in &exits {
                    // joined region: cut off the outside corner after the exit edge;
                    // split region: cut off the inside corner before it
                    let to = if inside(mid) { (k + 1) % 4 } else { (k + 3) % 4 };
                    next.insert(edges[k], edges[to]);
                }
            }
        }
    }

    let mut starts: Vec<usize> = next.keys().copied().collect();
    starts.sort_unstable();
    let mut used = std::collections::HashSet::new();
    let mut out = Vec::new();
    let tol = 1e-12 * (grid.xs[nx - 1] - grid.xs[0]).abs().max((grid.ys[ny - 1] - grid.ys[0]).abs());
    for start in starts {
        if used.contains(&start) {
            continue;
        }
        let mut pts: Vec<[f64; 2]> = Vec::new();
        let mut e = start;
        loop {
            used.insert(e);
            let p = point_on(e);
            if pts.last().is_none_or(|&q| dist(p, q) > tol) {
                pts.push(p);
            }
            e = match next.get(&e) {
                Some(&n) => n,
                None => break,
            };
            if e == start {
                break;
            }
        }
        while pts.len() > 1 && dist(pts[0], *pts.last().expect("non-empty")) <= tol {
            pts.pop();
        }
        if pts.len() < 3 {
            continue;
        }
        pts.push(pts[0]);
        out.push(Contour { points: pts, level });
    }
    out
}
