use std::f64::consts::FRAC_PI_4;

use serde::{Deserialize, Serialize};

use super::{RegionKind, RegionSpec};
use crate::error::{Error, Result};
use crate::geometry::{Ensemble, GaussianField};
use crate::mesh::Dim;

/// Regular grid of crossed Gaussian groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutSpec {
    /// Cells per axis.
    pub grid: Vec<usize>,
    /// 1, or 2 (2D X-pair), or 4 (3D).
    #[serde(default = "default_per_cell")]
    pub per_cell: usize,
    #[serde(default = "default_angle")]
    pub angle: f64,
    /// Standard deviations as fractions of the cell diagonal.
    #[serde(default = "default_major")]
    pub sigma_major: f64,
    #[serde(default = "default_minor")]
    pub sigma_minor: f64,
    /// Leave out cells whose centre lies in a frozen-void region.
    #[serde(default = "default_true")]
    pub skip_void: bool,
}

fn default_per_cell() -> usize {
    2
}
fn default_angle() -> f64 {
    FRAC_PI_4
}
fn default_major() -> f64 {
    0.45
}
fn default_minor() -> f64 {
    0.08
}
fn default_true() -> bool {
    true
}

impl LayoutSpec {
    pub fn new(grid: &[usize], per_cell: usize) -> Self {
        Self {
            grid: grid.to_vec(),
            per_cell,
            angle: FRAC_PI_4,
            sigma_major: 0.45,
            sigma_minor: 0.08,
            skip_void: true,
        }
    }

    pub fn validate(&self, dim: Dim) -> Result<()> {
        if self.grid.len() != dim.n() || self.grid.contains(&0) {
            return Err(Error::Definition(format!(
                "layout grid {:?} does not fit a {}D domain",
                self.grid,
                dim.n()
            )));
        }
        let allowed: &[usize] = match dim {
            Dim::Two => &[1, 2],
            Dim::Three => &[1, 4],
        };
        if !allowed.contains(&self.per_cell) {
            return Err(Error::Definition(format!(
                "{} fields per cell is not supported in {}D (use {:?})",
                self.per_cell,
                dim.n(),
                allowed
            )));
        }
        if !(self.sigma_major > 0.0 && self.sigma_minor > 0.0 && self.angle.is_finite()) {
            return Err(Error::Definition("layout needs positive σ fractions".into()));
        }
        Ok(())
    }
}

/// Places `per_cell` crossed fields at the centre of every grid cell.
pub fn generate_layout(
    spec: &LayoutSpec,
    dim: Dim,
    origin: &[f64],
    extent: &[f64],
    regions: &[RegionSpec],
) -> Result<Ensemble> {
    spec.validate(dim)?;
    let n = dim.n();
    let mut cell = [1.0; 3];
    let mut centre = [0.0; 3];
    for a in 0..n {
        cell[a] = extent[a] / spec.grid[a] as f64;
        centre[a] = origin[a] + 0.5 * extent[a];
    }
    let diag = cell[..n].iter().map(|c| c * c).sum::<f64>().sqrt();
    let (major, minor) = (spec.sigma_major * diag, spec.sigma_minor * diag);
    let g3 = [spec.grid[0], spec.grid[1], if n == 3 { spec.grid[2] } else { 1 }];
    let t = spec.angle;
    let mut fields = Vec::new();
    for k in 0..g3[2] {
        for j in 0..g3[1] {
            for i in 0..g3[0] {
                // symmetric about the domain centre, so mirrored layouts match exactly
                let idx = [i, j, k];
                let mut mu = [0.0; 3];
                for a in 0..n {
                    mu[a] = centre[a] + (idx[a] as f64 + 0.5 - 0.5 * g3[a] as f64) * cell[a];
                }
                let in_void = regions.iter().any(|r| {
                    r.kind == RegionKind::Void && (0..n).all(|a| mu[a] >= r.lo[a] && mu[a] <= r.hi[a])
                });
                if spec.skip_void && in_void {
                    continue;
                }
                match (dim, spec.per_cell) {
                    (Dim::Two, 1) => fields.push(GaussianField::new_2d([mu[0], mu[1]], [major, minor], 0.0)),
                    (Dim::Two, _) => {
                        for th in [t, -t] {
                            fields.push(GaussianField::new_2d([mu[0], mu[1]], [major, minor], th));
                        }
                    }
                    (Dim::Three, 1) => fields.push(GaussianField::new_3d(mu, [major, minor, minor], [0.0; 3])),
                    (Dim::Three, _) => {
                        for (b, g) in [(t, t), (t, -t), (-t, t), (-t, -t)] {
                            fields.push(GaussianField::new_3d(mu, [major, minor, minor], [0.0, b, g]));
                        }
                    }
                }
            }
        }
    }
    if fields.is_empty() {
        return Err(Error::Definition("layout places no fields".into()));
    }
    Ensemble::new(dim, fields)
}
