use super::{KeepSide, LoadSpec, ProblemDefinition, RegionSpec, SpringSpec, SupportSpec, SymmetryPlane};
use crate::error::{Error, Result};
use crate::geometry::{rotation_3d, GaussianField};
use crate::mesh::{Dim, StructuredMesh};

/// Reflection of a field through the plane `x[axis] = at`.
pub fn mirror_field(field: &GaussianField, axis: usize, at: f64) -> GaussianField {
    let mut out = *field;
    out.mu[axis] = 2.0 * at - field.mu[axis];
    match field.dim {
        // any reflection of a 2D ellipse flips the sign of its angle
        Dim::Two => out.angles[0] = -field.angles[0],
        Dim::Three => {
            let mut r = rotation_3d(field.angles[0], field.angles[1], field.angles[2]);
            for c in 0..3 {
                r[axis][c] = -r[axis][c];
            }
            // restore det = +1 by flipping the principal-axis column whose
            // sign change leaves the ellipsoid unchanged
            for row in r.iter_mut() {
                row[1] = -row[1];
            }
            let sb = (-r[0][2]).clamp(-1.0, 1.0);
            let beta = sb.asin();
            let (alpha, gamma) = if (1.0 - sb.abs()) > 1e-12 {
                (r[1][2].atan2(r[2][2]), r[0][1].atan2(r[0][0]))
            } else {
                // gimbal lock: only α ∓ γ is determined
                (0.0, (-r[1][0]).atan2(r[1][1]))
            };
            out.angles = [alpha, beta, gamma];
        }
    }
    out
}

fn tol(def: &ProblemDefinition, axis: usize) -> f64 {
    1e-9 * def.extent[axis] / def.mesh[axis] as f64
}

enum Side {
    Kept,
    OnPlane,
    Dropped,
}

fn classify(x: f64, p: &SymmetryPlane, t: f64) -> Side {
    if (x - p.at).abs() <= t {
        Side::OnPlane
    } else if (x < p.at) == (p.keep == KeepSide::Lower) {
        Side::Kept
    } else {
        Side::Dropped
    }
}

/// Clips `[lo, hi]` to the kept half. `None` when nothing is left.
fn clip(lo: &mut [f64], hi: &mut [f64], p: &SymmetryPlane, t: f64) -> Option<()> {
    let a = p.axis;
    match p.keep {
        KeepSide::Lower => {
            if lo[a] > p.at + t {
                return None;
            }
            hi[a] = hi[a].min(p.at);
        }
        KeepSide::Upper => {
            if hi[a] < p.at - t {
                return None;
            }
            lo[a] = lo[a].max(p.at);
        }
    }
    Some(())
}

fn reduce_load(load: &LoadSpec, p: &SymmetryPlane, t: f64) -> Option<LoadSpec> {
    match load {
        LoadSpec::Point { at, force } => match classify(at[p.axis], p, t) {
            Side::Kept => Some(load.clone()),
            Side::OnPlane => Some(LoadSpec::Point {
                at: at.clone(),
                force: force.iter().map(|f| 0.5 * f).collect(),
            }),
            Side::Dropped => None,
        },
        LoadSpec::Line { from, to, intensity } => {
            let (mut lo, mut hi): (Vec<f64>, Vec<f64>) =
                from.iter().zip(to).map(|(a, b)| (a.min(*b), a.max(*b))).unzip();
            let spread = hi[p.axis] > lo[p.axis];
            let w = reduce_box(&mut lo, &mut hi, spread, p, t)?;
            Some(LoadSpec::Line {
                from: lo,
                to: hi,
                intensity: intensity.iter().map(|f| w * f).collect(),
            })
        }
        LoadSpec::Surface { lo, hi, intensity } => {
            let (mut lo, mut hi) = (lo.clone(), hi.clone());
            let spread = hi[p.axis] > lo[p.axis];
            let w = reduce_box(&mut lo, &mut hi, spread, p, t)?;
            Some(LoadSpec::Surface {
                lo,
                hi,
                intensity: intensity.iter().map(|f| w * f).collect(),
            })
        }
    }
}

/// Clips a distributed-load box; returns the intensity factor.
fn reduce_box(lo: &mut [f64], hi: &mut [f64], spread: bool, p: &SymmetryPlane, t: f64) -> Option<f64> {
    if !spread {
        return match classify(lo[p.axis], p, t) {
            Side::Kept => Some(1.0),
            Side::OnPlane => Some(0.5),
            Side::Dropped => None,
        };
    }
    clip(lo, hi, p, t)?;
    // a box that only touches the plane has no length left along it
    if hi[p.axis] - lo[p.axis] <= t {
        return None;
    }
    Some(1.0)
}

/// Cuts the problem along its symmetry planes. The returned definition has
/// the planes recorded in `reduced_from` and symmetry-face supports added.
pub fn symmetry_reduce(def: &ProblemDefinition) -> Result<(ProblemDefinition, Reconstruction)> {
    def.validate()?;
    let mut out = def.clone();
    for p in &def.symmetry {
        let a = p.axis;
        let h = out.extent[a] / out.mesh[a] as f64;
        let mid = out.origin[a] + 0.5 * out.extent[a];
        if (p.at - mid).abs() > 1e-9 * h {
            return Err(Error::Definition(format!(
                "symmetry plane x{a} = {} does not bisect the domain",
                p.at
            )));
        }
        if out.mesh[a] % 2 != 0 {
            return Err(Error::Definition(format!(
                "symmetry plane x{a} = {} is off the mesh lines",
                p.at
            )));
        }
        if out.layout.grid[a] % 2 != 0 {
            return Err(Error::Definition(format!(
                "layout grid {:?} cannot be split along axis {a}",
                out.layout.grid
            )));
        }
        let t = tol(&out, a);
        out.mesh[a] /= 2;
        out.layout.grid[a] /= 2;
        out.extent[a] *= 0.5;
        if p.keep == KeepSide::Upper {
            out.origin[a] = p.at;
        }
        out.loads = out.loads.iter().filter_map(|l| reduce_load(l, p, t)).collect();
        out.output_loads = out.output_loads.iter().filter_map(|l| reduce_load(l, p, t)).collect();
        out.springs = out
            .springs
            .iter()
            .filter_map(|s| match classify(s.at[a], p, t) {
                Side::Kept => Some(s.clone()),
                Side::OnPlane => Some(SpringSpec {
                    stiffness: 0.5 * s.stiffness,
                    ..s.clone()
                }),
                Side::Dropped => None,
            })
            .collect();
        out.supports = out
            .supports
            .iter()
            .filter_map(|s| {
                let mut s = s.clone();
                clip(&mut s.lo, &mut s.hi, p, t)?;
                Some(s)
            })
            .collect();
        out.regions = out
            .regions
            .iter()
            .filter_map(|r| {
                let mut r: RegionSpec = r.clone();
                clip(&mut r.lo, &mut r.hi, p, t)?;
                (r.hi[a] - r.lo[a] > t).then_some(r)
            })
            .collect();
        let mut lo = out.origin.clone();
        let mut hi: Vec<f64> = out.origin.iter().zip(&out.extent).map(|(o, e)| o + e).collect();
        lo[a] = p.at;
        hi[a] = p.at;
        out.supports.push(SupportSpec { lo, hi, axes: vec![a] });
        out.reduced_from.push(*p);
    }
    out.symmetry.clear();
    out.reduce_symmetry = false;
    let rec = Reconstruction::new(&out)?;
    Ok((out, rec))
}

/// Maps element and node data of a reduced model back to the full domain.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    planes: Vec<SymmetryPlane>,
    reduced: StructuredMesh,
    full: StructuredMesh,
}

impl Reconstruction {
    /// From a reduced definition (identity when nothing was cut).
    pub fn new(reduced: &ProblemDefinition) -> Result<Self> {
        let mesh = reduced.mesh()?;
        let mut counts = reduced.mesh.clone();
        let mut origin = reduced.origin.clone();
        let mut extent = reduced.extent.clone();
        for p in &reduced.reduced_from {
            counts[p.axis] *= 2;
            extent[p.axis] *= 2.0;
            if p.keep == KeepSide::Upper {
                origin[p.axis] -= extent[p.axis] * 0.5;
            }
        }
        let full = StructuredMesh::new(reduced.dim, &counts, &origin, &extent)?;
        Ok(Self {
            planes: reduced.reduced_from.clone(),
            reduced: mesh,
            full,
        })
    }

    pub fn is_identity(&self) -> bool {
        self.planes.is_empty()
    }

    pub fn planes(&self) -> &[SymmetryPlane] {
        &self.planes
    }

    pub fn full_mesh(&self) -> &StructuredMesh {
        &self.full
    }

    pub fn reduced_mesh(&self) -> &StructuredMesh {
        &self.reduced
    }

    fn fold(&self, idx: [usize; 3], half: [usize; 3], nodes: bool) -> [usize; 3] {
        let mut out = idx;
        for p in &self.planes {
            let a = p.axis;
            let n = half[a];
            let i = idx[a];
            out[a] = match (p.keep, nodes) {
                (KeepSide::Lower, false) => if i < n { i } else { 2 * n - 1 - i },
                (KeepSide::Upper, false) => if i >= n { i - n } else { n - 1 - i },
                (KeepSide::Lower, true) => if i <= n { i } else { 2 * n - i },
                (KeepSide::Upper, true) => if i >= n { i - n } else { n - i },
            };
        }
        out
    }

    /// Full-domain copy of per-element values.
    pub fn expand_elements(&self, values: &[f64]) -> Vec<f64> {
        let half = self.reduced.element_counts3();
        (0..self.full.num_elements())
            .map(|e| {
                let g = self.fold(self.full.element_grid_index(e), half, false);
                values[self.reduced.element_index(g[0], g[1], g[2])]
            })
            .collect()
    }

    /// Full-domain copy of per-node scalar values.
    pub fn expand_nodes(&self, values: &[f64]) -> Vec<f64> {
        let half = self.reduced.element_counts3();
        (0..self.full.num_nodes())
            .map(|n| {
                let g = self.fold(self.full.node_grid_index(n), half, true);
                values[self.reduced.node_index(g[0], g[1], g[2])]
            })
            .collect()
    }

    /// All mirror images of a point (the point itself first).
    pub fn images(&self, x: [f64; 3]) -> Vec<[f64; 3]> {
        let mut out = vec![x];
        for p in &self.planes {
            let n = out.len();
            for i in 0..n {
                let mut y = out[i];
                y[p.axis] = 2.0 * p.at - y[p.axis];
                out.push(y);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::eval_field;
    use crate::problems::{build_benchmark, full_benchmark};

    fn total(f: &[f64], d: usize, a: usize) -> f64 {
        f.iter().skip(a).step_by(d).sum()
    }

    #[test]
    fn mbb3d_quarter_mesh() {
        let full = full_benchmark("mbb3d").unwrap();
        assert_eq!(full.mesh, vec![240, 40, 40]);
        let (q, rec) = symmetry_reduce(&full).unwrap();
        assert_eq!(q.mesh, vec![120, 20, 40]);
        assert_eq!(q.extent, vec![96.0, 16.0, 32.0]);
        assert_eq!(rec.full_mesh().counts(), &[240, 40, 40]);
        assert_eq!(q.layout.grid, vec![6, 1, 2]);
    }

    #[test]
    fn plane_loads_halved_once() {
        // mbb3d: line load lies on x = 96 and crosses y = 16
        let full = full_benchmark("mbb3d").unwrap().instantiate().unwrap();
        let quarter = build_benchmark("mbb3d").unwrap().instantiate().unwrap();
        let ft = total(&full.forces, 3, 2);
        let qt = total(&quarter.forces, 3, 2);
        assert!((ft + 32.0).abs() < 1e-9, "{ft}");
        assert!((qt - 0.25 * ft).abs() < 1e-9, "{qt}");
        // mechanism: input point load on the plane
        let full = full_benchmark("mechanism2d").unwrap().instantiate().unwrap();
        let half = build_benchmark("mechanism2d").unwrap().instantiate().unwrap();
        assert_eq!(total(&half.forces, 2, 0), 0.5 * total(&full.forces, 2, 0));
        assert_eq!(
            total(half.output_forces.as_ref().unwrap(), 2, 0),
            0.5 * total(full.output_forces.as_ref().unwrap(), 2, 0)
        );
    }

    #[test]
    fn plane_off_mesh_line_rejected() {
        let mut p = full_benchmark("bridge2d").unwrap();
        p.mesh = vec![601, 100];
        assert!(matches!(symmetry_reduce(&p), Err(Error::Definition(_))));
        let mut p = full_benchmark("bridge2d").unwrap();
        p.symmetry[0].at = 2.0;
        assert!(matches!(symmetry_reduce(&p), Err(Error::Definition(_))));
    }

    #[test]
    fn reconstruction_is_mirror_symmetric() {
        let q = build_benchmark("mbb3d").unwrap();
        let rec = Reconstruction::new(&q).unwrap();
        let m = rec.reduced_mesh();
        let vals: Vec<f64> = (0..m.num_elements()).map(|e| (e as f64 * 0.618).fract()).collect();
        let full = rec.expand_elements(&vals);
        let fm = rec.full_mesh();
        let c = fm.element_counts3();
        for e in 0..fm.num_elements() {
            let [i, j, k] = fm.element_grid_index(e);
            assert_eq!(full[e], full[fm.element_index(c[0] - 1 - i, j, k)]);
            assert_eq!(full[e], full[fm.element_index(i, c[1] - 1 - j, k)]);
        }
        let nodal: Vec<f64> = (0..m.num_nodes()).map(|n| n as f64).collect();
        let fulln = rec.expand_nodes(&nodal);
        let nc = fm.node_counts();
        for n in (0..fm.num_nodes()).step_by(7) {
            let [i, j, k] = fm.node_grid_index(n);
            assert_eq!(fulln[n], fulln[fm.node_index(nc[0] - 1 - i, j, k)]);
        }
        // the kept quarter maps onto itself
        let [i, j, k] = [3, 5, 7];
        assert_eq!(full[fm.element_index(i, j, k)], vals[m.element_index(i, j, k)]);
    }

    #[test]
    fn upper_half_reconstruction() {
        let mut p = full_benchmark("bridge2d").unwrap();
        p.symmetry[0].keep = KeepSide::Upper;
        p.supports = vec![SupportSpec {
            lo: vec![6.0, 0.0],
            hi: vec![6.0, 0.0],
            axes: vec![0, 1],
        }];
        let (h, rec) = symmetry_reduce(&p).unwrap();
        assert_eq!(h.origin, vec![3.0, 0.0]);
        let m = rec.reduced_mesh();
        let vals: Vec<f64> = (0..m.num_elements()).map(|e| e as f64).collect();
        let full = rec.expand_elements(&vals);
        let fm = rec.full_mesh();
        assert_eq!(fm.origin(), &[0.0, 0.0]);
        assert_eq!(full[fm.element_index(300, 4, 0)], vals[m.element_index(0, 4, 0)]);
        assert_eq!(full[fm.element_index(299, 4, 0)], vals[m.element_index(0, 4, 0)]);
        assert!(h.instantiate().is_ok());
    }

    #[test]
    fn mirror_twice_is_identity() {
        let f = GaussianField::new_3d([1.0, 2.0, 3.0], [1.5, 0.7, 0.3], [0.3, -0.5, 1.1]);
        let x = [1.4, 1.7, 3.2];
        for axis in 0..3 {
            let m = mirror_field(&f, axis, 2.5);
            let mut y = x;
            y[axis] = 5.0 - x[axis];
            let a = eval_field(&f, &x).unwrap();
            let b = eval_field(&m, &y).unwrap();
            assert!((a - b).abs() < 1e-13, "axis {axis}: {a} vs {b}");
            let mm = mirror_field(&m, axis, 2.5);
            for probe in [[0.5, 0.5, 0.5], x, [2.0, 3.0, 2.0]] {
                let a = eval_field(&f, &probe).unwrap();
                let b = eval_field(&mm, &probe).unwrap();
                assert!((a - b).abs() < 1e-13);
            }
        }
        let g = GaussianField::new_2d([0.2, 0.3], [0.5, 0.1], 0.4);
        let m = mirror_field(&g, 1, 0.0);
        assert!((eval_field(&g, &[0.4, 0.5]).unwrap() - eval_field(&m, &[0.4, -0.5]).unwrap()).abs() < 1e-14);
    }
}
