//! Conjugate gradients preconditioned by a geometric multigrid V-cycle.
//!
//! Coarse grids keep every other grid line of the finer one (plus the last
//! line when the count is odd), prolongation is multilinear interpolation, and
//! coarse operators are Galerkin products `Pᵀ A P`. Fixed dofs get empty
//! prolongation rows, so coarse corrections never disturb them.

use super::cholesky::SparseCholesky;
use super::pcg::pcg;
use super::{LinearSolver, SolveStats, SolverContext, SolverOptions};
use crate::error::{Error, Result};
use crate::fea::csr::CsrMatrix;
use crate::mesh::Dim;

const SMOOTHING_STEPS: usize = 2;
const JACOBI_WEIGHT: f64 = 0.6;

struct Transfer {
    p: CsrMatrix,
    pt: CsrMatrix,
}

pub struct MultigridCg {
    options: SolverOptions,
    fine_dofs: usize,
    transfers: Vec<Transfer>,
    /// Galerkin operators of levels 1..; level 0 is the caller's matrix.
    coarse_ops: Vec<CsrMatrix>,
    inv_diag: Vec<Vec<f64>>,
    coarse_solver: SparseCholesky,
}

impl MultigridCg {
    pub fn new(options: SolverOptions) -> Self {
        Self {
            options,
            fine_dofs: 0,
            transfers: Vec::new(),
            coarse_ops: Vec::new(),
            inv_diag: Vec::new(),
            coarse_solver: SparseCholesky::default(),
        }
    }

    pub fn levels(&self) -> usize {
        self.transfers.len() + 1
    }

    fn build_transfers(&mut self, ctx: &SolverContext<'_>) {
        let mesh = ctx.mesh;
        let d = mesh.dim().n();
        let coarse_limit = match mesh.dim() {
            Dim::Two => 50_000,
            Dim::Three => 10_000,
        };
        self.transfers.clear();
        // grid node counts of the current level and the map from level dofs to grid dofs
        let mut nodes = mesh.node_counts();
        let mut grid_of: Vec<usize> = (0..mesh.num_dofs()).collect();
        let mut excluded: Vec<bool> = ctx.fixed.to_vec();
        while grid_of.len() > coarse_limit {
            let lines: Vec<Vec<usize>> = (0..3)
                .map(|a| {
                    if a >= d || nodes[a] < 3 {
                        (0..nodes[a]).collect()
                    } else {
                        let mut v: Vec<usize> = (0..nodes[a]).step_by(2).collect();
                        if *v.last().unwrap() != nodes[a] - 1 {
                            v.push(nodes[a] - 1);
                        }
                        v
                    }
                })
                .collect();
            let coarse_nodes = [lines[0].len(), lines[1].len(), lines[2].len()];
            if coarse_nodes == nodes {
                break;
            }
            // 1D interpolation weights: fine line -> [(coarse line, weight)]
            let weights: Vec<Vec<Vec<(usize, f64)>>> = (0..3)
                .map(|a| {
                    let l = &lines[a];
                    (0..nodes[a])
                        .map(|i| {
                            let k = l.partition_point(|&c| c <= i) - 1;
                            if l[k] == i {
                                vec![(k, 1.0)]
                            } else {
                                let t = (i - l[k]) as f64 / (l[k + 1] - l[k]) as f64;
                                vec![(k, 1.0 - t), (k + 1, t)]
                            }
                        })
                        .collect()
                })
                .collect();
            let coarse_grid_dofs = coarse_nodes.iter().product::<usize>() * d;
            let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(grid_of.len());
            let mut used = vec![false; coarse_grid_dofs];
            for (r, &g) in grid_of.iter().enumerate() {
                if excluded[r] {
                    rows.push(Vec::new());
                    continue;
                }
                let node = g / d;
                let comp = g % d;
                let gi = [
                    node % nodes[0],
                    (node / nodes[0]) % nodes[1],
                    node / (nodes[0] * nodes[1]),
                ];
                let mut entries = Vec::with_capacity(8);
                for &(ck, wk) in &weights[2][gi[2]] {
                    for &(cj, wj) in &weights[1][gi[1]] {
                        for &(ci, wi) in &weights[0][gi[0]] {
                            let cn = ci + coarse_nodes[0] * (cj + coarse_nodes[1] * ck);
                            let col = cn * d + comp;
                            used[col] = true;
                            entries.push((col, wi * wj * wk));
                        }
                    }
                }
                rows.push(entries);
            }
            let mut compact = vec![usize::MAX; coarse_grid_dofs];
            let mut next_grid_of = Vec::new();
            for (g, &u) in used.iter().enumerate() {
                if u {
                    compact[g] = next_grid_of.len();
                    next_grid_of.push(g);
                }
            }
            let mut row_ptr = vec![0usize];
            let mut col_idx = Vec::new();
            let mut values = Vec::new();
            for mut entries in rows {
                for e in entries.iter_mut() {
                    e.0 = compact[e.0];
                }
                entries.sort_unstable_by_key(|e| e.0);
                for (c, w) in entries {
                    col_idx.push(c);
                    values.push(w);
                }
                row_ptr.push(col_idx.len());
            }
            let p = CsrMatrix {
                nrows: grid_of.len(),
                ncols: next_grid_of.len(),
                row_ptr,
                col_idx,
                values,
            };
            let pt = p.transpose();
            self.transfers.push(Transfer { p, pt });
            nodes = coarse_nodes;
            excluded = vec![false; next_grid_of.len()];
            grid_of = next_grid_of;
        }
        self.fine_dofs = mesh.num_dofs();
    }

    fn smooth(a: &CsrMatrix, inv_diag: &[f64], b: &[f64], x: &mut [f64], r: &mut [f64], steps: usize) {
        for _ in 0..steps {
            a.residual(x, b, r);
            for i in 0..x.len() {
                x[i] += JACOBI_WEIGHT * inv_diag[i] * r[i];
            }
        }
    }

    fn vcycle(&self, level: usize, fine: &CsrMatrix, b: &[f64], x: &mut [f64]) {
        let a = if level == 0 { fine } else { &self.coarse_ops[level - 1] };
        if level == self.transfers.len() {
            x.copy_from_slice(b);
            self.coarse_solver
                .solve_in_place(x)
                .expect("coarse level factorized in factor()");
            return;
        }
        let inv = &self.inv_diag[level];
        let mut r = vec![0.0; b.len()];
        x.fill(0.0);
        Self::smooth(a, inv, b, x, &mut r, SMOOTHING_STEPS);
        a.residual(x, b, &mut r);
        let t = &self.transfers[level];
        let mut rc = vec![0.0; t.p.ncols];
        t.pt.mul_vec(&r, &mut rc);
        let mut xc = vec![0.0; rc.len()];
        self.vcycle(level + 1, fine, &rc, &mut xc);
        t.p.mul_vec(&xc, &mut r);
        for (xi, ci) in x.iter_mut().zip(&r) {
            *xi += ci;
        }
        Self::smooth(a, inv, b, x, &mut r, SMOOTHING_STEPS);
    }
}

fn inverse_diagonal(a: &CsrMatrix) -> Result<Vec<f64>> {
    a.diagonal()
        .into_iter()
        .map(|d| {
            if d > 0.0 {
                Ok(1.0 / d)
            } else {
                Err(Error::Singular {
                    null_space: 1,
                    detail: "non-positive diagonal entry".into(),
                })
            }
        })
        .collect()
}

impl LinearSolver for MultigridCg {
    fn name(&self) -> &'static str {
        "mgcg"
    }

    fn factor(&mut self, a: &CsrMatrix, ctx: &SolverContext<'_>) -> Result<()> {
        if self.fine_dofs != a.nrows || self.transfers.is_empty() && a.nrows > 0 {
            self.build_transfers(ctx);
        }
        self.inv_diag.clear();
        self.coarse_ops.clear();
        self.inv_diag.push(inverse_diagonal(a)?);
        for l in 0..self.transfers.len() {
            let t = &self.transfers[l];
            let cur = if l == 0 { a } else { &self.coarse_ops[l - 1] };
            let ap = cur.mul_mat(&t.p);
            let coarse = t.pt.mul_mat(&ap);
            if l + 1 < self.transfers.len() {
                self.inv_diag.push(inverse_diagonal(&coarse)?);
            }
            self.coarse_ops.push(coarse);
        }
        let coarsest = self.coarse_ops.last().unwrap_or(a);
        self.coarse_solver.factor_matrix(coarsest)
    }

    fn solve(&mut self, a: &CsrMatrix, b: &[f64], x: &mut [f64]) -> Result<SolveStats> {
        let this = &*self;
        pcg(a, b, x, &self.options, |r, z| this.vcycle(0, a, r, z))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fea::assembly::StencilAssembler;
    use crate::fea::element::{element_stiffness, Material};
    use crate::mesh::StructuredMesh;

    #[test]
    fn hierarchy_and_iteration_count() {
        let mesh = StructuredMesh::new(Dim::Three, &[24, 12, 13], &[0.0; 3], &[2.0, 1.0, 1.1]).unwrap();
        let k0 = element_stiffness(Dim::Three, mesh.spacing(), &Material::default());
        let asm = StencilAssembler::new(&mesh);
        let mut k = asm.pattern();
        asm.assemble(&k0, &vec![1.0; mesh.num_elements()], &mut k);
        let mut fixed = vec![false; mesh.num_dofs()];
        for n in 0..mesh.num_nodes() {
            if mesh.node_grid_index(n)[0] == 0 {
                for a in 0..3 {
                    fixed[n * 3 + a] = true;
                }
            }
        }
        for i in 0..k.nrows {
            for p in k.row_ptr[i]..k.row_ptr[i + 1] {
                let j = k.col_idx[p];
                if (fixed[i] || fixed[j]) && i != j {
                    k.values[p] = 0.0;
                }
            }
        }
        let mut f = vec![0.0; mesh.num_dofs()];
        f[mesh.num_dofs() - 1] = -1.0;
        let mut s = MultigridCg::new(SolverOptions {
            tolerance: 1e-10,
            ..SolverOptions::default()
        });
        s.factor(&k, &SolverContext { mesh: &mesh, fixed: &fixed }).unwrap();
        assert!(s.levels() >= 2);
        let mut x = vec![0.0; f.len()];
        let stats = s.solve(&k, &f, &mut x).unwrap();
        assert!(stats.relative_residual < 1e-9);
        assert!(stats.iterations < 60, "{} iterations", stats.iterations);
        assert!(fixed.iter().zip(&x).all(|(&fx, &v)| !fx || v == 0.0));
    }
}
