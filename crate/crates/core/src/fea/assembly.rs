//! Global stiffness assembly on a structured grid.
//!
//! Rows are built node by node from the (at most 9 or 27) neighbouring nodes,
//! summing the contributions of the elements shared by each pair. Every entry
//! is therefore computed by exactly one task in a fixed order, and mirror
//! images in x of an entry are bitwise equal up to sign.

use rayon::prelude::*;

use super::csr::CsrMatrix;
use super::element::ElementMatrix;
use crate::mesh::StructuredMesh;

#[derive(Debug, Clone)]
pub struct StencilAssembler {
    mesh: StructuredMesh,
    pattern: CsrMatrix,
}

fn local_corner(dim3: bool, o: [usize; 3]) -> usize {
    let q = match (o[0], o[1]) {
        (0, 0) => 0,
        (1, 0) => 1,
        (1, 1) => 2,
        _ => 3,
    };
    if dim3 {
        q + 4 * o[2]
    } else {
        q
    }
}

impl StencilAssembler {
    pub fn new(mesh: &StructuredMesh) -> Self {
        let d = mesh.dim().n();
        let nn = mesh.node_counts();
        let n_nodes = mesh.num_nodes();
        let mut row_ptr = Vec::with_capacity(n_nodes * d + 1);
        row_ptr.push(0usize);
        let mut col_idx = Vec::new();
        let mut nbrs = Vec::with_capacity(27);
        for p in 0..n_nodes {
            nbrs.clear();
            neighbours(mesh, nn, p, &mut nbrs);
            for _a in 0..d {
                for &q in &nbrs {
                    for b in 0..d {
                        col_idx.push(q * d + b);
                    }
                }
                row_ptr.push(col_idx.len());
            }
        }
        let nnz = col_idx.len();
        Self {
            mesh: mesh.clone(),
            pattern: CsrMatrix {
                nrows: n_nodes * d,
                ncols: n_nodes * d,
                row_ptr,
                col_idx,
                values: vec![0.0; nnz],
            },
        }
    }

    pub fn mesh(&self) -> &StructuredMesh {
        &self.mesh
    }

    /// An empty matrix with the assembly sparsity pattern.
    pub fn pattern(&self) -> CsrMatrix {
        self.pattern.clone()
    }

    /// Writes `Σ_e ρ_e k0` into `out`, which must carry this assembler's pattern.
    pub fn assemble(&self, k0: &ElementMatrix, densities: &[f64], out: &mut CsrMatrix) {
        let mesh = &self.mesh;
        let d = mesh.dim().n();
        let dim3 = d == 3;
        let nn = mesh.node_counts();
        let ne = mesh.element_counts3();
        let kd = k0.size();
        debug_assert_eq!(out.row_ptr, self.pattern.row_ptr);

        // split values into one contiguous chunk per node
        let mut chunks: Vec<&mut [f64]> = Vec::with_capacity(mesh.num_nodes());
        let mut rest: &mut [f64] = &mut out.values;
        for p in 0..mesh.num_nodes() {
            let len = self.pattern.row_ptr[(p + 1) * d] - self.pattern.row_ptr[p * d];
            let (head, tail) = rest.split_at_mut(len);
            chunks.push(head);
            rest = tail;
        }

        chunks.into_par_iter().enumerate().with_min_len(256).for_each(|(p, vals)| {
            let g = mesh.node_grid_index(p);
            let mut nbrs = Vec::with_capacity(27);
            neighbours(mesh, nn, p, &mut nbrs);
            let row_len = nbrs.len() * d;
            for (qi, &q) in nbrs.iter().enumerate() {
                let gq = mesh.node_grid_index(q);
                let mut block = [[0.0f64; 3]; 3];
                // elements containing both p and q
                let mut lo = [0usize; 3];
                let mut hi = [0usize; 3];
                for a in 0..3 {
                    if a >= d {
                        lo[a] = 0;
                        hi[a] = 0;
                        continue;
                    }
                    let (mn, mx) = (g[a].min(gq[a]), g[a].max(gq[a]));
                    lo[a] = mx.saturating_sub(1);
                    hi[a] = mn.min(ne[a] - 1);
                }
                // the (at most two) elements along x are summed on their own
                // first, so an entry and its x-mirror round identically
                for ek in lo[2]..=hi[2] {
                    for ej in lo[1]..=hi[1] {
                        let mut pair = [[0.0f64; 3]; 3];
                        for ei in lo[0]..=hi[0] {
                            let e = ei + ne[0] * (ej + ne[1] * ek);
                            let rho = densities[e];
                            let eg = [ei, ej, ek];
                            let mut op = [0usize; 3];
                            let mut oq = [0usize; 3];
                            for a in 0..d {
                                op[a] = g[a] - eg[a];
                                oq[a] = gq[a] - eg[a];
                            }
                            let lp = local_corner(dim3, op) * d;
                            let lq = local_corner(dim3, oq) * d;
                            let kk = k0.as_slice();
                            for a in 0..d {
                                for b in 0..d {
                                    pair[a][b] += rho * kk[(lp + a) * kd + lq + b];
                                }
                            }
                        }
                        for a in 0..d {
                            for b in 0..d {
                                block[a][b] += pair[a][b];
                            }
                        }
                    }
                }
                for a in 0..d {
                    for b in 0..d {
                        vals[a * row_len + qi * d + b] = block[a][b];
                    }
                }
            }
        });
    }
}

/// Neighbour node indices of `p` (including `p`) in increasing order.
fn neighbours(mesh: &StructuredMesh, nn: [usize; 3], p: usize, out: &mut Vec<usize>) {
    let g = mesh.node_grid_index(p);
    let range = |a: usize| {
        let lo = g[a].saturating_sub(1);
        let hi = (g[a] + 1).min(nn[a] - 1);
        lo..=hi
    };
    for k in range(2) {
        for j in range(1) {
            for i in range(0) {
                out.push(i + nn[0] * (j + nn[1] * k));
            }
        }
    }
}

/// `K u` computed element by element (optionally with diagonal springs),
/// without any boundary-condition modification.
pub fn stiffness_action(
    mesh: &StructuredMesh,
    k0: &ElementMatrix,
    densities: &[f64],
    springs: &[(usize, f64)],
    u: &[f64],
) -> Vec<f64> {
    let mut out = vec![0.0; mesh.num_dofs()];
    let nd = k0.size();
    let mut dofs = Vec::with_capacity(nd);
    let mut ue = vec![0.0; nd];
    let mut fe = vec![0.0; nd];
    for e in 0..mesh.num_elements() {
        mesh.element_dofs(e, &mut dofs);
        for (x, &g) in ue.iter_mut().zip(&dofs) {
            *x = u[g];
        }
        k0.apply(&ue, &mut fe);
        for (&g, f) in dofs.iter().zip(&fe) {
            out[g] += densities[e] * f;
        }
    }
    for &(dof, k) in springs {
        out[dof] += k * u[dof];
    }
    out
}
