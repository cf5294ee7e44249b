//! Boundaries, curvature, binary designs and mesh-transfer diagnostics.

mod contour;
mod curvature;

use std::f64::consts::FRAC_PI_4;

pub use contour::{extract_contours, extract_contours_with, Contour, NodeGrid};
pub use curvature::{contour_curvature, curvature_with, CurvatureProfile, MIN_VERTICES, RESAMPLE_FACTOR};

use crate::error::{Error, Result};
use crate::evaluation::{Evaluation, Model};
use crate::fea::{von_mises_field, Material, SolverOptions};
use crate::geometry::{eval_tdf, Ensemble, FieldKernel, GaussianField};
use crate::mesh::Dim;
use crate::problems::{ElementKind, ProblemDefinition, ProblemInstance};
use crate::projection::ProjectionParams;

/// Boundary curves of an ensemble's TDF sampled on a 2D mesh's nodes, with
/// saddle cells resolved by the exact TDF at the cell centre.
pub fn ensemble_contours(ensemble: &Ensemble, grid: &NodeGrid, level: f64) -> Result<Vec<Contour>> {
    if ensemble.dim != Dim::Two {
        return Err(Error::Shape("contours are extracted from 2D ensembles only".into()));
    }
    let kernels = ensemble.active_kernels()?;
    let centre = |p: [f64; 2]| kernels.iter().map(|(_, k)| k.value(&[p[0], p[1], 0.0])).sum::<f64>();
    let mut contours = extract_contours_with(grid, level, Some(&centre));
    let (lo, hi) = (
        [grid.xs[0], grid.ys[0]],
        [grid.xs[grid.xs.len() - 1], grid.ys[grid.ys.len() - 1]],
    );
    let h = grid.xs.windows(2).chain(grid.ys.windows(2)).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    for c in &mut contours {
        for p in &mut c.points {
            // curves closed along the border stay where the grid cut them
            if p[0] > lo[0] && p[0] < hi[0] && p[1] > lo[1] && p[1] < hi[1] {
                *p = snap_to_level(&kernels, *p, level, h);
            }
        }
    }
    Ok(contours)
}

/// Newton steps along the gradient onto the exact level set. Linear
/// interpolation leaves O(h²) kinks that curvature estimates amplify.
/// Points that would travel more than `h` are left alone.
fn snap_to_level(kernels: &[(usize, FieldKernel)], p: [f64; 2], level: f64, h: f64) -> [f64; 2] {
    let mut x = p;
    for _ in 0..8 {
        let (mut v, mut g) = (0.0, [0.0; 2]);
        for (_, k) in kernels {
            let d = k.offset(&[x[0], x[1]]);
            let phi = (-0.5 * k.quad(&d)).exp();
            let a = k.inverse_covariance();
            v += phi;
            g[0] -= phi * (a[0][0] * d[0] + a[0][1] * d[1]);
            g[1] -= phi * (a[1][0] * d[0] + a[1][1] * d[1]);
        }
        let g2 = g[0] * g[0] + g[1] * g[1];
        if g2 == 0.0 || !g2.is_finite() {
            return p;
        }
        let t = (v - level) / g2;
        x = [x[0] - t * g[0], x[1] - t * g[1]];
        if (t * t * g2).sqrt() < 1e-13 * h {
            break;
        }
    }
    if contour::dist(x, p) > h {
        p
    } else {
        x
    }
}

/// Re-evaluates `ensemble` with the projection sharpened to ε = 0.
///
/// Void elements keep the density floor so the stiffness stays regular; a
/// fully void design is rejected.
pub fn binary_extract(instance: &ProblemInstance, ensemble: &Ensemble, projection: &ProjectionParams, solver: &str) -> Result<Evaluation> {
    let params = projection.with_epsilon(0.0);
    let mut model = Model::new(instance.clone(), params, solver, &SolverOptions::default())?;
    let (_, rho) = model.densities(ensemble)?;
    let solid = rho
        .iter()
        .zip(&instance.element_kinds)
        .any(|(&r, &k)| r > params.alpha_floor && k != ElementKind::Void);
    if !solid {
        return Err(Error::Singular {
            null_space: instance.mesh.num_dofs(),
            detail: "the binary design has no solid element".into(),
        });
    }
    model.evaluate(ensemble, false)
}

/// Excess of `volume_fraction` over `bound` in percent of the bound; negative
/// when the design is under the bound.
pub fn volume_overshoot(volume_fraction: f64, bound: f64) -> f64 {
    100.0 * (volume_fraction - bound) / bound
}

/// Evaluates `ensemble` on `definition` re-meshed at `counts`, without
/// touching its parameters.
pub fn reevaluate_on_mesh(
    definition: &ProblemDefinition,
    ensemble: &Ensemble,
    counts: &[usize],
    projection: &ProjectionParams,
    solver: &str,
) -> Result<Evaluation> {
    let instance = definition.with_mesh(counts)?.instantiate()?;
    let mut model = Model::new(instance, *projection, solver, &SolverOptions::default())?;
    model.evaluate(ensemble, false)
}

/// Density-weighted von Mises stress per element for load case 0.
pub fn element_stress(instance: &ProblemInstance, evaluation: &Evaluation) -> Result<Vec<f64>> {
    let u = evaluation
        .displacements
        .first()
        .ok_or_else(|| Error::State("evaluation carries no displacement field".into()))?;
    Ok(von_mises_field(&instance.mesh, &Material::default(), &evaluation.densities, u))
}

/// The X-shaped unit of the 2D layouts: two coincident fields at ±π/4.
pub fn junction_pair(centre: [f64; 2], sigma_major: f64, sigma_minor: f64) -> Ensemble {
    let fields = vec![
        GaussianField::new_2d(centre, [sigma_major, sigma_minor], FRAC_PI_4),
        GaussianField::new_2d(centre, [sigma_major, sigma_minor], -FRAC_PI_4),
    ];
    Ensemble {
        dim: Dim::Two,
        fields,
    }
}

/// Curvature along the level-`level` boundary of a [`junction_pair`] at the
/// origin, sampled on an `n × n` grid spanning four major deviations.
pub fn junction_curvature(sigma_major: f64, sigma_minor: f64, level: f64, n: usize) -> Result<CurvatureProfile> {
    let ensemble = junction_pair([0.0, 0.0], sigma_major, sigma_minor);
    let r = 4.0 * sigma_major;
    let grid = NodeGrid::sample([-r, -r], [r, r], n, n, |p| {
        eval_tdf(&ensemble, &[[p[0], p[1], 0.0]]).map(|v| v[0]).unwrap_or(f64::NAN)
    })?;
    let contours = ensemble_contours(&ensemble, &grid, level)?;
    let outer = contours
        .iter()
        .max_by(|a, b| a.signed_area().total_cmp(&b.signed_area()))
        .ok_or_else(|| Error::State(format!("no boundary at level {level}")))?;
    contour_curvature(outer)
}

/// Most negative curvature at a junction between the arms.
pub fn junction_concave_extremum(sigma_major: f64, sigma_minor: f64, level: f64, n: usize) -> Result<f64> {
    Ok(junction_curvature(sigma_major, sigma_minor, level, n)?.most_concave().1)
}
