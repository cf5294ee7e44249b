//! Linear solvers for the reduced stiffness system, selectable by name.

mod cholesky;
mod mgcg;
mod pcg;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use cholesky::SparseCholesky;
pub use mgcg::MultigridCg;
pub use pcg::JacobiCg;

use super::csr::CsrMatrix;
use crate::error::{Error, Result};
use crate::mesh::{Dim, StructuredMesh};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    /// Relative residual target of the iterative solvers.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 20_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// What the solvers may know about the system beyond the matrix itself.
pub struct SolverContext<'a> {
    pub mesh: &'a StructuredMesh,
    /// Dofs carrying Dirichlet conditions (their rows and columns are identity).
    pub fixed: &'a [bool],
}

pub trait LinearSolver: Send {
    fn name(&self) -> &'static str;

    /// Prepares for solves with the current values of `a`. The sparsity
    /// pattern is the same on every call.
    fn factor(&mut self, a: &CsrMatrix, ctx: &SolverContext<'_>) -> Result<()>;

    /// Solves `a x = b`. Iterative solvers use the incoming `x` as the initial guess.
    fn solve(&mut self, a: &CsrMatrix, b: &[f64], x: &mut [f64]) -> Result<SolveStats>;
}

pub type SolverFactory = fn(&SolverOptions) -> Box<dyn LinearSolver>;

/// Name → constructor table of linear solvers.
#[derive(Clone)]
pub struct SolverRegistry {
    entries: BTreeMap<&'static str, SolverFactory>,
}

impl Default for SolverRegistry {
    fn default() -> Self {
        let mut r = Self {
            entries: BTreeMap::new(),
        };
        r.register("cholesky", |_| Box::new(SparseCholesky::default()));
        r.register("pcg-jacobi", |o| Box::new(JacobiCg::new(*o)));
        r.register("mgcg", |o| Box::new(MultigridCg::new(*o)));
        r
    }
}

impl SolverRegistry {
    pub fn register(&mut self, name: &'static str, factory: SolverFactory) {
        self.entries.insert(name, factory);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }

    /// Builds the named solver; `"auto"` picks one from the mesh size.
    pub fn create(
        &self,
        name: &str,
        mesh: &StructuredMesh,
        options: &SolverOptions,
    ) -> Result<Box<dyn LinearSolver>> {
        let name = if name == "auto" { auto_choice(mesh) } else { name };
        match self.entries.get(name) {
            Some(f) => Ok(f(options)),
            None => Err(Error::UnknownName {
                kind: "solver",
                name: name.to_string(),
                valid: format!("auto, {}", self.names().join(", ")),
            }),
        }
    }
}

/// Direct factorization for 2D meshes up to about a million and a half dofs,
/// multigrid-preconditioned CG otherwise. Fill-in of a 2D factor grows only
/// slightly faster than the dof count, and the direct solve does not suffer
/// from the density contrast that slows the iterative ones.
pub fn auto_choice(mesh: &StructuredMesh) -> &'static str {
    match mesh.dim() {
        Dim::Two if mesh.num_dofs() <= 1_500_000 => "cholesky",
        Dim::Three if mesh.num_dofs() <= 6_000 => "cholesky",
        _ => "mgcg",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fea::assembly::StencilAssembler;
    use crate::fea::element::{element_stiffness, Material};

    /// Cantilever-like system: left edge clamped, identity rows for it.
    fn system(mesh: &StructuredMesh) -> (CsrMatrix, Vec<bool>, Vec<f64>) {
        let k0 = element_stiffness(mesh.dim(), mesh.spacing(), &Material::default());
        let asm = StencilAssembler::new(mesh);
        let mut k = asm.pattern();
        let rho: Vec<f64> = (0..mesh.num_elements())
            .map(|e| if (e * 7919) % 5 == 0 { 1e-3 } else { 1.0 })
            .collect();
        asm.assemble(&k0, &rho, &mut k);
        let d = mesh.dim().n();
        let mut fixed = vec![false; mesh.num_dofs()];
        for n in 0..mesh.num_nodes() {
            if mesh.node_grid_index(n)[0] == 0 {
                for a in 0..d {
                    fixed[n * d + a] = true;
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
        let last = mesh.num_nodes() - 1;
        f[last * d + 1] = -1.0;
        (k, fixed, f)
    }

    #[test]
    fn all_solvers_agree() {
        let registry = SolverRegistry::default();
        for mesh in [
            StructuredMesh::new(Dim::Two, &[24, 12], &[0.0, 0.0], &[2.0, 1.0]).unwrap(),
            StructuredMesh::new(Dim::Three, &[8, 4, 4], &[0.0; 3], &[2.0, 1.0, 1.0]).unwrap(),
        ] {
            let (k, fixed, f) = system(&mesh);
            let ctx = SolverContext {
                mesh: &mesh,
                fixed: &fixed,
            };
            let mut reference: Option<Vec<f64>> = None;
            for name in registry.names() {
                let tight = SolverOptions {
                    tolerance: 1e-10,
                    ..SolverOptions::default()
                };
                let mut s = registry.create(name, &mesh, &tight).unwrap();
                s.factor(&k, &ctx).unwrap();
                let mut x = vec![0.0; f.len()];
                s.solve(&k, &f, &mut x).unwrap();
                let mut r = vec![0.0; f.len()];
                k.residual(&x, &f, &mut r);
                let rel = crate::fea::csr::norm(&r) / crate::fea::csr::norm(&f);
                assert!(rel < 1e-9, "{name}: residual {rel}");
                match &reference {
                    None => reference = Some(x),
                    Some(r) => {
                        let scale = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                        for (a, b) in r.iter().zip(&x) {
                            assert!((a - b).abs() < 1e-6 * scale, "{name}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn unknown_solver_lists_valid_names() {
        let mesh = StructuredMesh::new(Dim::Two, &[2, 2], &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let err = SolverRegistry::default()
            .create("lu", &mesh, &SolverOptions::default())
            .err()
            .unwrap();
        let msg = err.to_string();
        assert!(msg.contains("cholesky") && msg.contains("mgcg"), "{msg}");
    }
}
