use super::{LinearSolver, SolveStats, SolverContext, SolverOptions};
use crate::error::{Error, Result};
use crate::fea::csr::{dot, norm, CsrMatrix};

/// Iterations without a new smallest residual before giving up; rounding
/// caps the attainable accuracy of badly conditioned systems.
const STALL_ITERATIONS: usize = 200;

/// Preconditioned conjugate gradients. `precondition(r, z)` must apply a
/// symmetric positive definite operator.
pub(crate) fn pcg<P>(
    a: &CsrMatrix,
    b: &[f64],
    x: &mut [f64],
    options: &SolverOptions,
    mut precondition: P,
) -> Result<SolveStats>
where
    P: FnMut(&[f64], &mut [f64]),
{
    let n = b.len();
    let bn = norm(b);
    if bn == 0.0 {
        x.fill(0.0);
        return Ok(SolveStats::default());
    }
    let mut r = vec![0.0; n];
    a.residual(x, b, &mut r);
    let mut z = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut rel = norm(&r) / bn;
    if rel <= options.tolerance {
        return Ok(SolveStats {
            iterations: 0,
            relative_residual: rel,
        });
    }
    precondition(&r, &mut z);
    p.copy_from_slice(&z);
    let mut rz = dot(&r, &z);
    let mut best = (rel, 0);
    for it in 1..=options.max_iterations {
        a.mul_vec(&p, &mut q);
        let pq = dot(&p, &q);
        if !(pq > 0.0) {
            return Err(Error::Singular {
                null_space: 1,
                detail: format!("conjugate gradients met non-positive curvature {pq:e}"),
            });
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        rel = norm(&r) / bn;
        if !rel.is_finite() {
            return Err(Error::NonFinite("conjugate gradients diverged".into()));
        }
        if rel <= options.tolerance {
            // confirm with the true residual
            a.residual(x, b, &mut r);
            rel = norm(&r) / bn;
            if rel <= 10.0 * options.tolerance {
                return Ok(SolveStats {
                    iterations: it,
                    relative_residual: rel,
                });
            }
        }
        if rel < best.0 {
            best = (rel, it);
        } else if it - best.1 > STALL_ITERATIONS {
            return Err(Error::NoConvergence(format!(
                "relative residual stagnated at {:.3e} after {it} iterations",
                best.0
            )));
        }
        precondition(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NoConvergence(format!(
        "relative residual {rel:.3e} after {} iterations",
        options.max_iterations
    )))
}

/// Conjugate gradients with diagonal scaling.
pub struct JacobiCg {
    options: SolverOptions,
    inv_diag: Vec<f64>,
}

impl JacobiCg {
    pub fn new(options: SolverOptions) -> Self {
        Self {
            options,
            inv_diag: Vec::new(),
        }
    }
}

impl LinearSolver for JacobiCg {
    fn name(&self) -> &'static str {
        "pcg-jacobi"
    }

    fn factor(&mut self, a: &CsrMatrix, _ctx: &SolverContext<'_>) -> Result<()> {
        self.inv_diag = a
            .diagonal()
            .into_iter()
            .map(|d| if d > 0.0 { 1.0 / d } else { 0.0 })
            .collect();
        if self.inv_diag.iter().any(|&v| v == 0.0) {
            return Err(Error::Singular {
                null_space: 1,
                detail: "zero diagonal entry".into(),
            });
        }
        Ok(())
    }

    fn solve(&mut self, a: &CsrMatrix, b: &[f64], x: &mut [f64]) -> Result<SolveStats> {
        let inv = &self.inv_diag;
        pcg(a, b, x, &self.options, |r, z| {
            for i in 0..r.len() {
                z[i] = inv[i] * r[i];
            }
        })
    }
}
