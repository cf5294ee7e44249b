//! Design sensitivities through the Heaviside band.
//!
//! Every response here is a sum over elements `F = Σ_e f_e(ρ_e)` with
//! `ρ_e = mean_p H(φ_p)`, so `∂F/∂d = Σ_p H'(φ_p) W_p ∂φ_p/∂d` where the
//! nodal weight `W_p` gathers `∂f_e/∂ρ_e / N_npe` from the elements around
//! node `p`. Only nodes inside the band `|φ - T| ≤ ε` contribute.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{DesignVector, Ensemble, Lattice};
use crate::mesh::StructuredMesh;
use crate::problems::ElementKind;
use crate::projection::{heaviside_derivative_unchecked, ProjectionParams};

/// Order-independent accumulator for gradient terms. Fixed point at 2⁻⁶⁴,
/// which covers magnitudes up to ~9e18 with ~5e-20 absolute resolution;
/// gradient terms are far wider-ranging than TDF values, hence not
/// [`crate::geometry::ExactSum`].
#[derive(Debug, Clone, Copy, Default)]
struct WideSum(i128);

const WIDE_SCALE: f64 = 18_446_744_073_709_551_616.0;

impl WideSum {
    #[inline]
    fn add(&mut self, v: f64) {
        self.0 += (v * WIDE_SCALE) as i128;
    }

    fn value(self) -> f64 {
        self.0 as f64 / WIDE_SCALE
    }
}

/// Gradients with respect to the full design vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityResult {
    /// Derivative of the objective (compliance, or the mutual potential energy).
    pub objective: Vec<f64>,
    pub volume: Vec<f64>,
    /// Elements with a node inside the Heaviside band.
    pub band_elements: usize,
}

/// Spreads per-element derivatives `∂f/∂ρ_e` onto nodes, skipping frozen
/// elements (their densities do not depend on the design).
pub fn nodal_weights(mesh: &StructuredMesh, element_weights: &[f64], kinds: Option<&[ElementKind]>) -> Vec<f64> {
    let npe = mesh.dim().nodes_per_element();
    let share = 1.0 / npe as f64;
    let mut w = vec![0.0; mesh.num_nodes()];
    for (e, &we) in element_weights.iter().enumerate() {
        if kinds.is_some_and(|k| k[e] != ElementKind::Design) {
            continue;
        }
        let nodes = mesh.element_nodes(e);
        for &n in &nodes[..npe] {
            w[n] += we * share;
        }
    }
    w
}

/// Number of elements with at least one node in the band.
pub fn band_element_count(mesh: &StructuredMesh, nodal_tdf: &[f64], params: &ProjectionParams) -> usize {
    let npe = mesh.dim().nodes_per_element();
    (0..mesh.num_elements())
        .filter(|&e| {
            mesh.element_nodes(e)[..npe]
                .iter()
                .any(|&n| heaviside_derivative_unchecked(nodal_tdf[n], params) != 0.0)
        })
        .count()
}

/// `Σ_p H'(φ_p) W_p ∂φ_i/∂d` for every design variable and every weight
/// vector in `weights`. Inactive fields get zero blocks.
///
/// Sums are accumulated exactly, so the result does not depend on the order
/// in which a field's support is visited.
pub fn chain_through_band(
    lattice: &Lattice,
    ensemble: &Ensemble,
    nodal_tdf: &[f64],
    params: &ProjectionParams,
    weights: &[&[f64]],
) -> Result<Vec<Vec<f64>>> {
    params.validate_smooth()?;
    if nodal_tdf.len() != lattice.len() || weights.iter().any(|w| w.len() != lattice.len()) {
        return Err(Error::Shape("nodal arrays do not match the lattice".into()));
    }
    let b = ensemble.dim.block_len();
    let nw = weights.len();
    // H'(φ_p) W_p, zero outside the band
    let factors: Vec<Vec<f64>> = weights
        .iter()
        .map(|w| {
            nodal_tdf
                .iter()
                .zip(w.iter())
                .map(|(&phi, &wp)| {
                    let h = heaviside_derivative_unchecked(phi, params);
                    if h == 0.0 {
                        0.0
                    } else {
                        h * wp
                    }
                })
                .collect()
        })
        .collect();
    let in_band: Vec<bool> = (0..lattice.len()).map(|p| factors.iter().any(|f| f[p] != 0.0)).collect();
    let kernels = ensemble.active_kernels()?;
    let blocks: Vec<(usize, Vec<Vec<f64>>)> = kernels
        .par_iter()
        .map(|(i, k)| {
            let mut acc = vec![vec![WideSum::default(); b]; nw];
            let mut g = vec![0.0; b];
            lattice.visit_support(k, |p, d, q| {
                if !in_band[p] {
                    return;
                }
                let phi = (-0.5 * q).exp();
                k.gradient_at_offset(d, phi, &mut g);
                for (a, f) in acc.iter_mut().zip(&factors) {
                    let c = f[p];
                    if c != 0.0 {
                        for (s, gj) in a.iter_mut().zip(&g) {
                            s.add(c * gj);
                        }
                    }
                }
            });
            let out = acc
                .into_iter()
                .map(|a| a.into_iter().map(WideSum::value).collect())
                .collect();
            (*i, out)
        })
        .collect();
    let mut out = vec![vec![0.0; b * ensemble.len()]; nw];
    for (i, per_weight) in blocks {
        for (o, block) in out.iter_mut().zip(per_weight) {
            o[i * b..(i + 1) * b].copy_from_slice(&block);
        }
    }
    if out.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sensitivity".into()));
    }
    Ok(out)
}

/// Inputs shared by the three sensitivity forms.
pub struct SensitivityState<'a> {
    pub mesh: &'a StructuredMesh,
    pub lattice: &'a Lattice,
    pub ensemble: &'a Ensemble,
    pub nodal_tdf: &'a [f64],
    pub params: &'a ProjectionParams,
    pub kinds: Option<&'a [ElementKind]>,
}

impl SensitivityState<'_> {
    fn chain(&self, element_weights: &[f64]) -> Result<Vec<f64>> {
        let w = nodal_weights(self.mesh, element_weights, self.kinds);
        Ok(chain_through_band(self.lattice, self.ensemble, self.nodal_tdf, self.params, &[&w])?.remove(0))
    }
}

/// `∂C/∂d` from element energies `uᵀ_e k0 u_e`.
pub fn compliance_sensitivity(state: &SensitivityState<'_>, element_energy: &[f64]) -> Result<Vec<f64>> {
    let w: Vec<f64> = element_energy.iter().map(|e| -e).collect();
    state.chain(&w)
}

/// `∂V/∂d`.
pub fn volume_sensitivity(state: &SensitivityState<'_>) -> Result<Vec<f64>> {
    let w = vec![state.mesh.element_volume(); state.mesh.num_elements()];
    state.chain(&w)
}

/// `∂J/∂d` with `J = f₂ᵀu₁`, from cross energies `u₁ᵀ_e k0 u₂_e`.
pub fn mpe_sensitivity(state: &SensitivityState<'_>, cross_energy: &[f64]) -> Result<Vec<f64>> {
    compliance_sensitivity(state, cross_energy)
}

/// Rounds to `digits` significant decimal digits, symmetric in sign.
pub fn round_significant(v: f64, digits: i32) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    let a = v.abs();
    let e = a.log10().floor() as i32;
    let shift = digits - 1 - e;
    let r = if shift >= 0 {
        let s = 10f64.powi(shift);
        (a * s).round() / s
    } else {
        let s = 10f64.powi(-shift);
        (a / s).round() * s
    };
    r.copysign(v)
}

pub fn round_sensitivities(values: &mut [f64], digits: i32) {
    for v in values {
        *v = round_significant(*v, digits);
    }
}

/// Central-difference step for a parameter of magnitude `|d|`.
pub fn fd_step(d: f64) -> f64 {
    (1e-6 * d.abs()).max(1e-6)
}

/// Central differences of `f` for the listed design-vector entries.
pub fn finite_difference<F>(mut f: F, x: &DesignVector, indices: &[usize]) -> Result<Vec<f64>>
where
    F: FnMut(&DesignVector) -> Result<f64>,
{
    let mut probe = x.clone();
    indices
        .iter()
        .map(|&i| {
            let h = fd_step(x.values[i]);
            probe.values[i] = x.values[i] + h;
            let fp = f(&probe)?;
            probe.values[i] = x.values[i] - h;
            let fm = f(&probe)?;
            probe.values[i] = x.values[i];
            Ok((fp - fm) / (2.0 * h))
        })
        .collect()
}
