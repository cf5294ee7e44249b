//! Isoparametric Q4 / Hex8 element matrices on axis-aligned brick elements.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Dim, HEX8_CORNERS, Q4_CORNERS};

/// Linear isotropic material.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Material {
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    /// 2D only: plane stress when true, plane strain otherwise.
    #[serde(default = "default_plane_stress")]
    pub plane_stress: bool,
}

fn default_plane_stress() -> bool {
    true
}

impl Default for Material {
    fn default() -> Self {
        Self {
            youngs_modulus: 1.0,
            poisson_ratio: 0.3,
            plane_stress: true,
        }
    }
}

impl Material {
    pub fn validate(&self) -> Result<()> {
        if !(self.youngs_modulus > 0.0 && self.youngs_modulus.is_finite())
            || !(0.0..0.5).contains(&self.poisson_ratio)
        {
            return Err(Error::Definition(format!(
                "material needs E > 0 and 0 <= nu < 0.5, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Constitutive matrix in Voigt order (xx, yy, xy) or (xx, yy, zz, yz, xz, xy),
    /// engineering shear strains.
    pub fn constitutive(&self, dim: Dim) -> Vec<f64> {
        let (e, nu) = (self.youngs_modulus, self.poisson_ratio);
        match dim {
            Dim::Two => {
                let (c, a, b, s) = if self.plane_stress {
                    let c = e / (1.0 - nu * nu);
                    (c, 1.0, nu, 0.5 * (1.0 - nu))
                } else {
                    let c = e / ((1.0 + nu) * (1.0 - 2.0 * nu));
                    (c, 1.0 - nu, nu, 0.5 * (1.0 - 2.0 * nu))
                };
                vec![c * a, c * b, 0.0, c * b, c * a, 0.0, 0.0, 0.0, c * s]
            }
            Dim::Three => {
                let lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
                let mu = e / (2.0 * (1.0 + nu));
                let mut d = vec![0.0; 36];
                for i in 0..3 {
                    for j in 0..3 {
                        d[i * 6 + j] = lambda;
                    }
                    d[i * 6 + i] += 2.0 * mu;
                    d[(i + 3) * 6 + i + 3] = mu;
                }
                d
            }
        }
    }
}

/// Dense square element matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementMatrix {
    n: usize,
    data: Vec<f64>,
}

impl ElementMatrix {
    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `aᵀ k b` for element vectors `a`, `b`.
    #[inline]
    pub fn bilinear(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (i, &ai) in a.iter().enumerate() {
            let row = &self.data[i * self.n..(i + 1) * self.n];
            let mut r = 0.0;
            for (kij, bj) in row.iter().zip(b) {
                r += kij * bj;
            }
            acc += ai * r;
        }
        acc
    }

    pub fn apply(&self, u: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.n) {
            let row = &self.data[i * self.n..(i + 1) * self.n];
            *o = row.iter().zip(u).map(|(k, v)| k * v).sum();
        }
    }
}

pub(crate) fn corner_signs(dim: Dim) -> Vec<[f64; 3]> {
    let corners: &[[usize; 3]] = match dim {
        Dim::Two => &Q4_CORNERS,
        Dim::Three => &HEX8_CORNERS,
    };
    corners
        .iter()
        .map(|c| [2.0 * c[0] as f64 - 1.0, 2.0 * c[1] as f64 - 1.0, 2.0 * c[2] as f64 - 1.0])
        .collect()
}

/// Strain-displacement matrix at natural coordinates `xi`, with rows in
/// Voigt order, and the Jacobian determinant.
pub fn strain_matrix(dim: Dim, spacing: &[f64], xi: [f64; 3]) -> (Vec<f64>, f64) {
    let n = dim.n();
    let npe = dim.nodes_per_element();
    let signs = corner_signs(dim);
    let ndof = n * npe;
    let nstrain = if n == 2 { 3 } else { 6 };
    let mut b = vec![0.0; nstrain * ndof];
    let scale = 0.5f64.powi(n as i32);
    for (node, s) in signs.iter().enumerate() {
        // dN/dx_a = (dN/dξ_a) · 2/h_a
        let mut grad = [0.0; 3];
        for a in 0..n {
            let mut g = scale * s[a];
            for c in 0..n {
                if c != a {
                    g *= 1.0 + s[c] * xi[c];
                }
            }
            grad[a] = g * 2.0 / spacing[a];
        }
        let col = node * n;
        if n == 2 {
            b[col] = grad[0];
            b[ndof + col + 1] = grad[1];
            b[2 * ndof + col] = grad[1];
            b[2 * ndof + col + 1] = grad[0];
        } else {
            b[col] = grad[0];
            b[ndof + col + 1] = grad[1];
            b[2 * ndof + col + 2] = grad[2];
            // yz
            b[3 * ndof + col + 1] = grad[2];
            b[3 * ndof + col + 2] = grad[1];
            // xz
            b[4 * ndof + col] = grad[2];
            b[4 * ndof + col + 2] = grad[0];
            // xy
            b[5 * ndof + col] = grad[1];
            b[5 * ndof + col + 1] = grad[0];
        }
    }
    let det: f64 = spacing[..n].iter().map(|h| 0.5 * h).product();
    (b, det)
}

/// Reference stiffness of a unit-density element with the given edge lengths,
/// integrated with 2 Gauss points per axis (exact for these elements).
pub fn element_stiffness(dim: Dim, spacing: &[f64], material: &Material) -> ElementMatrix {
    let n = dim.n();
    let ndof = dim.element_dofs();
    let nstrain = if n == 2 { 3 } else { 6 };
    let d = material.constitutive(dim);
    let g = 1.0 / 3f64.sqrt();
    let mut k = vec![0.0; ndof * ndof];
    let npts = 1usize << n;
    let mut db = vec![0.0; nstrain * ndof];
    for p in 0..npts {
        let mut xi = [0.0; 3];
        for (a, x) in xi.iter_mut().enumerate().take(n) {
            *x = if (p >> a) & 1 == 0 { -g } else { g };
        }
        let (b, det) = strain_matrix(dim, spacing, xi);
        for i in 0..nstrain {
            for c in 0..ndof {
                db[i * ndof + c] = (0..nstrain).map(|j| d[i * nstrain + j] * b[j * ndof + c]).sum();
            }
        }
        for r in 0..ndof {
            for c in 0..ndof {
                let mut acc = 0.0;
                for i in 0..nstrain {
                    acc += b[i * ndof + r] * db[i * ndof + c];
                }
                k[r * ndof + c] += acc * det;
            }
        }
    }
    enforce_symmetries(n, &mut k);
    ElementMatrix { n: ndof, data: k }
}

/// Replaces every entry by the mean over its orbit under transposition and
/// the element's axis reflections, so `k` is exactly symmetric and a mirrored
/// element's matrix is bitwise the original up to sign. Quadrature round-off
/// otherwise differs between mirror-image entries, and the solve amplifies
/// that by the condition number.
fn enforce_symmetries(n: usize, k: &mut [f64]) {
    let corners = 1usize << n;
    let ndof = corners * n;
    // corner numbering: counterclockwise in xy, then z
    let offsets = |c: usize| -> [usize; 3] {
        let q = [(0, 0), (1, 0), (1, 1), (0, 1)][c % 4];
        [q.0, q.1, c / 4]
    };
    let corner = |o: [usize; 3]| -> usize {
        let q = match (o[0], o[1]) {
            (0, 0) => 0,
            (1, 0) => 1,
            (1, 1) => 2,
            _ => 3,
        };
        q + 4 * o[2]
    };
    // dof image and sign under the reflections in `mask`
    let reflect = |mask: usize, dof: usize| -> (usize, f64) {
        let (c, comp) = (dof / n, dof % n);
        let mut o = offsets(c);
        for (a, oa) in o.iter_mut().enumerate().take(n) {
            if mask >> a & 1 == 1 {
                *oa = 1 - *oa;
            }
        }
        let sign = if mask >> comp & 1 == 1 { -1.0 } else { 1.0 };
        (corner(o) * n + comp, sign)
    };
    let mut done = vec![false; ndof * ndof];
    let mut orbit = Vec::with_capacity(2 * corners);
    for r in 0..ndof {
        for c in 0..ndof {
            if done[r * ndof + c] {
                continue;
            }
            orbit.clear();
            for mask in 0..corners {
                let ((i, si), (j, sj)) = (reflect(mask, r), reflect(mask, c));
                orbit.push((i, j, si * sj));
                orbit.push((j, i, si * sj));
            }
            let mean = orbit.iter().map(|&(i, j, s)| s * k[i * ndof + j]).sum::<f64>() / orbit.len() as f64;
            for &(i, j, s) in &orbit {
                k[i * ndof + j] = s * mean;
                done[i * ndof + j] = true;
            }
        }
    }
}

/// Von Mises stress from a Voigt stress vector.
pub fn von_mises(stress: &[f64]) -> f64 {
    if stress.len() == 3 {
        let (sx, sy, txy) = (stress[0], stress[1], stress[2]);
        (sx * sx - sx * sy + sy * sy + 3.0 * txy * txy).max(0.0).sqrt()
    } else {
        let (sx, sy, sz) = (stress[0], stress[1], stress[2]);
        let (tyz, txz, txy) = (stress[3], stress[4], stress[5]);
        (0.5 * ((sx - sy).powi(2) + (sy - sz).powi(2) + (sz - sx).powi(2))
            + 3.0 * (tyz * tyz + txz * txz + txy * txy))
            .max(0.0)
            .sqrt()
    }
}
