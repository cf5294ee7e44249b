//! Regularized Heaviside projection from TDF values to densities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Threshold `T`, half band width `ε` and void floor `α` of the projection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionParams {
    #[serde(rename = "T", alias = "threshold")]
    pub threshold: f64,
    pub epsilon: f64,
    pub alpha_floor: f64,
}

impl Default for ProjectionParams {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            epsilon: 0.02,
            alpha_floor: 1e-3,
        }
    }
}

impl ProjectionParams {
    pub fn with_epsilon(self, epsilon: f64) -> Self {
        Self { epsilon, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.threshold.is_finite()
            && self.threshold > 0.0
            && self.epsilon.is_finite()
            && self.epsilon >= 0.0
            && self.alpha_floor > 0.0
            && self.alpha_floor < 0.5;
        if ok {
            Ok(())
        } else {
            Err(Error::Projection(format!(
                "need T > 0, epsilon >= 0 and 0 < alpha_floor < 0.5, got {self:?}"
            )))
        }
    }

    /// Validation for optimization, which needs a differentiable projection.
    pub fn validate_smooth(&self) -> Result<()> {
        self.validate()?;
        if self.epsilon == 0.0 {
            return Err(Error::Projection(
                "epsilon = 0 has no derivative; use it only for binary extraction".into(),
            ));
        }
        Ok(())
    }
}

pub fn heaviside(phi: f64, p: &ProjectionParams) -> f64 {
    let (t, eps, alpha) = (p.threshold, p.epsilon, p.alpha_floor);
    if eps == 0.0 {
        return if phi >= t { 1.0 } else { alpha };
    }
    if phi > t + eps {
        1.0
    } else if phi < t - eps {
        alpha
    } else {
        let s = (phi - t) / eps;
        0.75 * (1.0 - alpha) * (s - s * s * s / 3.0) + 0.5 * (1.0 + alpha)
    }
}

pub fn heaviside_derivative(phi: f64, p: &ProjectionParams) -> Result<f64> {
    if p.epsilon <= 0.0 {
        return Err(Error::Projection(
            "heaviside derivative needs epsilon > 0".into(),
        ));
    }
    Ok(heaviside_derivative_unchecked(phi, p))
}

/// [`heaviside_derivative`] for parameters already checked to have `ε > 0`.
#[inline]
pub fn heaviside_derivative_unchecked(phi: f64, p: &ProjectionParams) -> f64 {
    let eps = p.epsilon;
    let s = (phi - p.threshold) / eps;
    if s.abs() > 1.0 {
        0.0
    } else {
        0.75 * (1.0 - p.alpha_floor) / eps * (1.0 - s * s)
    }
}

/// Mean of the projected nodal values of one element.
///
/// Q4 and Hex8 values are summed in pairs of pairs so that mirror-image
/// elements, whose node lists are permutations of each other, give identical
/// results.
pub fn element_density(nodal_tdf: &[f64], p: &ProjectionParams) -> Result<f64> {
    match nodal_tdf.len() {
        4 | 8 => {
            let mut h = [0.0; 8];
            for (o, &phi) in h.iter_mut().zip(nodal_tdf) {
                *o = heaviside(phi, p);
            }
            Ok(mean_of_corners(&h[..nodal_tdf.len()]))
        }
        n => Err(Error::Shape(format!(
            "element needs 4 or 8 nodal values, got {n}"
        ))),
    }
}

/// Symmetric mean of 4 or 8 corner values in Q4/Hex8 order.
#[inline]
pub fn mean_of_corners(v: &[f64]) -> f64 {
    let quad = |a: &[f64]| (a[0] + a[2]) + (a[1] + a[3]);
    if v.len() == 4 {
        0.25 * quad(v)
    } else {
        0.125 * (quad(&v[..4]) + quad(&v[4..8]))
    }
}

/// Mean of `4ρ(1-ρ)` in percent; values below 0.005 count as void.
pub fn measure_nondiscreteness(densities: &[f64]) -> f64 {
    if densities.is_empty() {
        return 0.0;
    }
    let sum: f64 = densities
        .iter()
        .map(|&r| {
            let r = if r < 0.005 { 0.0 } else { r.min(1.0) };
            4.0 * r * (1.0 - r)
        })
        .sum();
    100.0 * sum / densities.len() as f64
}
