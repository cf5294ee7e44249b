//! Method of Moving Asymptotes for one inequality constraint.
//!
//! The subproblem is solved through its one-dimensional dual by bisection.
//! Every per-variable formula is written so that negating a variable, its
//! bounds and its derivatives negates the update exactly, which keeps
//! mirror-symmetric designs symmetric to the last bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MmaParams {
    /// Largest step per iteration as a fraction of the variable range.
    pub move_limit: f64,
    /// Initial asymptote distance as a fraction of the variable range.
    pub asy_init: f64,
    pub asy_decr: f64,
    pub asy_incr: f64,
    /// Weight `c` of the constraint relaxation variable.
    pub penalty: f64,
}

impl Default for MmaParams {
    fn default() -> Self {
        Self {
            move_limit: 0.1,
            asy_init: 0.5,
            asy_decr: 0.7,
            asy_incr: 1.2,
            penalty: 1000.0,
        }
    }
}

const ALBEFA: f64 = 0.1;
const RAA0: f64 = 1e-5;

/// Asymptotes and iterate history.
#[derive(Debug, Clone)]
pub struct MmaState {
    pub params: MmaParams,
    pub lower_bound: Vec<f64>,
    pub upper_bound: Vec<f64>,
    pub low: Vec<f64>,
    pub upp: Vec<f64>,
    pub xold1: Vec<f64>,
    pub xold2: Vec<f64>,
    pub iteration: usize,
    /// Per-variable scales that replace the bound range in the asymptote
    /// and move-limit rules when set.
    pub scales: Option<Vec<f64>>,
}

/// Convex separable approximation at the current point.
#[derive(Debug, Clone)]
pub struct Subproblem {
    pub low: Vec<f64>,
    pub upp: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub p0: Vec<f64>,
    pub q0: Vec<f64>,
    pub p1: Vec<f64>,
    pub q1: Vec<f64>,
    /// Right-hand side: `Σ(p1/(U-x) + q1/(x-L)) - g` at the current point.
    pub b: f64,
    pub penalty: f64,
}

/// Primal-dual solution of a [`Subproblem`].
#[derive(Debug, Clone)]
pub struct SubSolution {
    pub x: Vec<f64>,
    pub lambda: f64,
    pub y: f64,
}

impl MmaState {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, params: MmaParams) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Shape("bound vectors differ in length".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l.is_finite() && u.is_finite() && l < u)) {
            return Err(Error::Definition("bounds must be finite with lower < upper".into()));
        }
        let n = lower.len();
        Ok(Self {
            params,
            lower_bound: lower,
            upper_bound: upper,
            low: vec![0.0; n],
            upp: vec![0.0; n],
            xold1: Vec::new(),
            xold2: Vec::new(),
            iteration: 0,
            scales: None,
        })
    }

    pub fn len(&self) -> usize {
        self.lower_bound.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower_bound.is_empty()
    }

    fn scale(&self, j: usize) -> f64 {
        match &self.scales {
            Some(s) => s[j],
            None => self.upper_bound[j] - self.lower_bound[j],
        }
    }

    fn check(&self, x: &[f64], df0: &[f64], dg: &[f64]) -> Result<()> {
        let n = self.len();
        if x.len() != n || df0.len() != n || dg.len() != n {
            return Err(Error::Shape("MMA vectors differ in length".into()));
        }
        if x.iter().chain(df0).chain(dg).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("MMA input".into()));
        }
        Ok(())
    }

    /// Updates the asymptotes and builds the approximation at `x`.
    /// Variables with `free[j] == false` are pinned to their current value.
    pub fn approximate(&mut self, x: &[f64], df0: &[f64], g: f64, dg: &[f64], free: &[bool]) -> Result<Subproblem> {
        self.check(x, df0, dg)?;
        if !g.is_finite() {
            return Err(Error::NonFinite("constraint value".into()));
        }
        let n = self.len();
        let p = self.params;
        self.iteration += 1;
        for j in 0..n {
            let range = self.scale(j);
            if self.iteration <= 2 || self.xold2.is_empty() {
                self.low[j] = x[j] - p.asy_init * range;
                self.upp[j] = x[j] + p.asy_init * range;
            } else {
                let trend = (x[j] - self.xold1[j]) * (self.xold1[j] - self.xold2[j]);
                let f = if trend < 0.0 {
                    p.asy_decr
                } else if trend > 0.0 {
                    p.asy_incr
                } else {
                    1.0
                };
                let low = x[j] - f * (self.xold1[j] - self.low[j]);
                let upp = x[j] + f * (self.upp[j] - self.xold1[j]);
                self.low[j] = low.max(x[j] - 10.0 * range).min(x[j] - 0.01 * range);
                self.upp[j] = upp.min(x[j] + 10.0 * range).max(x[j] + 0.01 * range);
            }
        }
        let mut sp = Subproblem {
            low: self.low.clone(),
            upp: self.upp.clone(),
            alpha: vec![0.0; n],
            beta: vec![0.0; n],
            p0: vec![0.0; n],
            q0: vec![0.0; n],
            p1: vec![0.0; n],
            q1: vec![0.0; n],
            b: 0.0,
            penalty: p.penalty,
        };
        let mut b = -g;
        for j in 0..n {
            let (low, upp, xj) = (self.low[j], self.upp[j], x[j]);
            let range = self.upper_bound[j] - self.lower_bound[j];
            if free[j] {
                let step = p.move_limit * self.scale(j);
                sp.alpha[j] = self.lower_bound[j].max(low + ALBEFA * (xj - low)).max(xj - step);
                sp.beta[j] = self.upper_bound[j].min(upp - ALBEFA * (upp - xj)).min(xj + step);
            } else {
                sp.alpha[j] = xj;
                sp.beta[j] = xj;
            }
            let ux1 = upp - xj;
            let xl1 = xj - low;
            let (ux2, xl2) = (ux1 * ux1, xl1 * xl1);
            let reg = RAA0 / range.max(1e-5);
            let (fp, fm) = (df0[j].max(0.0), (-df0[j]).max(0.0));
            sp.p0[j] = ((1.001 * fp + 0.001 * fm) + reg) * ux2;
            sp.q0[j] = ((0.001 * fp + 1.001 * fm) + reg) * xl2;
            let (gp, gm) = (dg[j].max(0.0), (-dg[j]).max(0.0));
            sp.p1[j] = ((1.001 * gp + 0.001 * gm) + reg) * ux2;
            sp.q1[j] = ((0.001 * gp + 1.001 * gm) + reg) * xl2;
            b += sp.p1[j] / ux1 + sp.q1[j] / xl1;
        }
        sp.b = b;
        Ok(sp)
    }

    /// One MMA step from `x`.
    pub fn update(&mut self, x: &[f64], df0: &[f64], g: f64, dg: &[f64], free: &[bool]) -> Result<Vec<f64>> {
        let sp = self.approximate(x, df0, g, dg, free)?;
        let sol = sp.solve();
        self.xold2 = std::mem::replace(&mut self.xold1, x.to_vec());
        Ok(sol.x)
    }
}

impl Subproblem {
    /// Minimizer of the Lagrangian for multiplier `lambda`.
    pub fn primal(&self, lambda: f64, x: &mut [f64]) {
        for j in 0..x.len() {
            let sp = (self.p0[j] + lambda * self.p1[j]).sqrt();
            let sq = (self.q0[j] + lambda * self.q1[j]).sqrt();
            let xj = (sp * self.low[j] + sq * self.upp[j]) / (sp + sq);
            x[j] = xj.max(self.alpha[j]).min(self.beta[j]);
        }
    }

    /// Approximated constraint `Σ(p1/(U-x) + q1/(x-L)) - b`.
    pub fn constraint(&self, x: &[f64]) -> f64 {
        let s: f64 = (0..x.len())
            .map(|j| self.p1[j] / (self.upp[j] - x[j]) + self.q1[j] / (x[j] - self.low[j]))
            .sum();
        s - self.b
    }

    fn relaxation(&self, lambda: f64) -> f64 {
        (lambda - self.penalty).max(0.0)
    }

    /// Derivative of the dual function at `lambda` (decreasing in `lambda`).
    fn dual_slope(&self, lambda: f64, x: &mut [f64]) -> f64 {
        self.primal(lambda, x);
        self.constraint(x) - self.relaxation(lambda)
    }

    pub fn solve(&self) -> SubSolution {
        let n = self.p0.len();
        let mut x = vec![0.0; n];
        if self.dual_slope(0.0, &mut x) <= 0.0 {
            return SubSolution { x, lambda: 0.0, y: 0.0 };
        }
        let mut lo = 0.0;
        let mut hi = 1.0;
        while self.dual_slope(hi, &mut x) > 0.0 {
            lo = hi;
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.dual_slope(mid, &mut x) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let lambda = 0.5 * (lo + hi);
        self.primal(lambda, &mut x);
        SubSolution {
            x,
            lambda,
            y: self.relaxation(lambda),
        }
    }

    /// Largest violation of the subproblem's KKT conditions, each term
    /// scaled to be dimensionless.
    pub fn kkt_residual(&self, sol: &SubSolution) -> f64 {
        let x = &sol.x;
        let lam = sol.lambda;
        let mut worst: f64 = 0.0;
        for j in 0..x.len() {
            let ux = self.upp[j] - x[j];
            let xl = x[j] - self.low[j];
            let pos = (self.p0[j] + lam * self.p1[j]) / (ux * ux);
            let neg = (self.q0[j] + lam * self.q1[j]) / (xl * xl);
            let grad = pos - neg;
            let scale = pos + neg;
            let width = (self.beta[j] - self.alpha[j]).max(f64::MIN_POSITIVE);
            // projected gradient: a step along -grad must leave the box
            let r = if (x[j] - self.alpha[j]).abs() <= 1e-12 * width && grad > 0.0 {
                0.0
            } else if (self.beta[j] - x[j]).abs() <= 1e-12 * width && grad < 0.0 {
                0.0
            } else if self.alpha[j] == self.beta[j] {
                0.0
            } else {
                grad.abs() / scale
            };
            worst = worst.max(r);
        }
        let c = self.constraint(x) - sol.y;
        let cscale = self.b.abs().max(1e-300) + (0..x.len())
            .map(|j| self.p1[j] / (self.upp[j] - x[j]) + self.q1[j] / (x[j] - self.low[j]))
            .sum::<f64>();
        worst = worst.max((c / cscale).max(0.0));
        if lam > 0.0 {
            worst = worst.max((c / cscale).abs());
        }
        worst
    }
}
