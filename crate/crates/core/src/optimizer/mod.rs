//! The optimization loop: evaluate, differentiate, update with MMA, prune.

mod mma;

use std::f64::consts::PI;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use mma::{MmaParams, MmaState, SubSolution, Subproblem};

use crate::error::{Error, Result};
use crate::evaluation::{Evaluation, Model, StageTimes};
use crate::geometry::{deactivate_degenerate, Ensemble};
use crate::mesh::{Dim, StructuredMesh};
use crate::sensitivity::round_sensitivities;

/// One MMA step on a standalone problem. `free` defaults to all variables.
pub fn mma_update(x: &[f64], df0: &[f64], g: f64, dg: &[f64], free: Option<&[bool]>, state: &mut MmaState) -> Result<Vec<f64>> {
    let all;
    let free = match free {
        Some(f) => f,
        None => {
            all = vec![true; x.len()];
            &all
        }
    };
    state.update(x, df0, g, dg, free)
}

/// Box bounds on the Gaussian parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundSettings {
    /// Smallest σ as a fraction of the shortest domain side.
    pub sigma_min_fraction: f64,
    /// Smallest σ never exceeds this many element edges, so fields can
    /// always shrink past the deactivation threshold of half an edge.
    pub sigma_min_edges: f64,
    /// Largest σ as a fraction of the longest domain side.
    pub sigma_max_fraction: f64,
    /// Angles live in `[-angle_limit, angle_limit]`.
    pub angle_limit: f64,
}

impl Default for BoundSettings {
    fn default() -> Self {
        Self {
            sigma_min_fraction: 0.01,
            sigma_min_edges: 0.25,
            sigma_max_fraction: 1.0,
            angle_limit: 4.0 * PI,
        }
    }
}

impl BoundSettings {
    /// Lower and upper bounds for every entry of the design vector.
    pub fn for_mesh(&self, mesh: &StructuredMesh, fields: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let dim = mesh.dim();
        let n = dim.n();
        let origin = mesh.origin();
        let extent = mesh.extent();
        let shortest = extent.iter().copied().fold(f64::INFINITY, f64::min);
        let longest = extent.iter().copied().fold(0.0, f64::max);
        let s_lo = (self.sigma_min_fraction * shortest).min(self.sigma_min_edges * mesh.edge_length());
        let s_hi = self.sigma_max_fraction * longest;
        if !(s_lo > 0.0 && s_lo < s_hi && self.angle_limit > 0.0) {
            return Err(Error::Definition(format!(
                "degenerate parameter bounds: sigma in [{s_lo}, {s_hi}], angle limit {}",
                self.angle_limit
            )));
        }
        let mut lo = Vec::with_capacity(fields * dim.block_len());
        let mut hi = Vec::with_capacity(lo.capacity());
        for _ in 0..fields {
            for a in 0..n {
                lo.push(origin[a]);
                hi.push(origin[a] + extent[a]);
            }
            for _ in 0..n {
                lo.push(s_lo);
                hi.push(s_hi);
            }
            let angles = match dim {
                Dim::Two => 1,
                Dim::Three => 3,
            };
            for _ in 0..angles {
                lo.push(-self.angle_limit);
                hi.push(self.angle_limit);
            }
        }
        Ok((lo, hi))
    }
}

/// Natural length of each parameter kind. MMA places its asymptotes and
/// move limits in these units instead of the bound range.
///
/// A single fraction of the bound range is a poor step for geometric
/// parameters: with σ allowed up to the domain size, 10 % of that range
/// exceeds the width of a typical member, and the linearized volume only
/// sees boundary motion, so whole fields vanish in one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariableScales {
    /// Fraction of the domain side along the same axis.
    pub position: f64,
    /// Fraction of the current σ.
    pub sigma: f64,
    /// Radians.
    pub angle: f64,
}

impl Default for VariableScales {
    fn default() -> Self {
        Self {
            position: 0.2,
            sigma: 2.0,
            angle: 0.5,
        }
    }
}

impl VariableScales {
    pub fn for_ensemble(&self, ensemble: &Ensemble, mesh: &StructuredMesh) -> Vec<f64> {
        let n = ensemble.dim.n();
        let angles = ensemble.dim.block_len() - 2 * n;
        let mut out = Vec::with_capacity(ensemble.len() * ensemble.dim.block_len());
        for f in &ensemble.fields {
            out.extend((0..n).map(|a| self.position * mesh.extent()[a]));
            out.extend((0..n).map(|a| self.sigma * f.sigma[a]));
            out.extend(std::iter::repeat(self.angle).take(angles));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerParams {
    pub max_iters: usize,
    pub mma: MmaParams,
    /// Per-kind variable scales; `None` uses the bound range, as plain MMA does.
    pub scales: Option<VariableScales>,
    pub bounds: BoundSettings,
    /// Threshold on both the relative objective change and the volume violation.
    pub tolerance: f64,
    /// Consecutive iterations below `tolerance` needed to stop early.
    pub patience: usize,
    /// Significant digits kept when the problem asks for rounded sensitivities.
    pub rounding_digits: i32,
}

impl Default for OptimizerParams {
    fn default() -> Self {
        Self {
            max_iters: 200,
            mma: MmaParams::default(),
            scales: Some(VariableScales::default()),
            bounds: BoundSettings::default(),
            tolerance: 1e-4,
            patience: 5,
            rounding_digits: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based.
    pub iteration: usize,
    /// Compliance, or J for mechanisms.
    pub objective: f64,
    pub volume_fraction: f64,
    pub active_fields: usize,
    pub band_elements: usize,
    pub times: StageTimes,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceHistory {
    pub records: Vec<IterationRecord>,
}

impl ConvergenceHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.objective).collect()
    }

    pub fn volume_fractions(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.volume_fraction).collect()
    }

    /// Mean wall time per stage over all iterations.
    pub fn mean_times(&self) -> StageTimes {
        let n = self.records.len().max(1) as f64;
        let mut t = StageTimes::default();
        for r in &self.records {
            t.tdf += r.times.tdf;
            t.sen += r.times.sen;
            t.fea += r.times.fea;
            t.mma += r.times.mma;
        }
        StageTimes {
            tdf: t.tdf / n,
            sen: t.sen / n,
            fea: t.fea / n,
            mma: t.mma / n,
        }
    }
}

pub struct OptimizationResult {
    /// The last evaluated design.
    pub ensemble: Ensemble,
    pub history: ConvergenceHistory,
    /// Evaluation of `ensemble`; `None` when no iteration ran.
    pub evaluation: Option<Evaluation>,
    pub converged: bool,
}

pub fn run_optimization(model: &mut Model, initial: &Ensemble, params: &OptimizerParams) -> Result<OptimizationResult> {
    run_optimization_with(model, initial, params, |_| {})
}

/// Like [`run_optimization`], calling `observe` after every iteration.
///
/// Iteration `k` evaluates the current design; unless it is the last one,
/// an MMA step and the pruning of degenerate fields follow. The returned
/// ensemble is therefore exactly the design of the final history record.
pub fn run_optimization_with<F>(
    model: &mut Model,
    initial: &Ensemble,
    params: &OptimizerParams,
    mut observe: F,
) -> Result<OptimizationResult>
where
    F: FnMut(&IterationRecord),
{
    let mut ensemble = initial.clone();
    let mut history = ConvergenceHistory::default();
    if params.max_iters == 0 {
        return Ok(OptimizationResult {
            ensemble,
            history,
            evaluation: None,
            converged: false,
        });
    }
    ensemble.validate()?;
    let mesh = model.mesh().clone();
    let target = model.instance().definition.volume_fraction;
    let rounding = model.instance().definition.round_sensitivities;
    let block = ensemble.dim.block_len();
    let (lo, hi) = params.bounds.for_mesh(&mesh, ensemble.len())?;

    let mut x = ensemble.design_vector();
    for ((v, l), h) in x.values.iter_mut().zip(&lo).zip(&hi) {
        *v = v.clamp(*l, *h);
    }
    ensemble.set_design(&x)?;
    let mut state = MmaState::new(lo, hi, params.mma)?;

    let mut scale = 1.0;
    let mut previous: Option<f64> = None;
    let mut streak = 0;
    let mut converged = false;
    let mut last = None;

    for it in 1..=params.max_iters {
        let ev = model.evaluate(&ensemble, true).map_err(|e| e.at_iteration(it))?;
        let grad = ev.gradient.as_ref().expect("gradient requested");
        let record = IterationRecord {
            iteration: it,
            objective: ev.reported,
            volume_fraction: ev.volume_fraction,
            active_fields: ensemble.active_count(),
            band_elements: grad.band_elements,
            times: ev.times,
        };
        if it == 1 {
            scale = ev.objective.abs().max(f64::MIN_POSITIVE);
        }
        if let Some(prev) = previous {
            let change = (ev.objective - prev).abs() / prev.abs().max(f64::MIN_POSITIVE);
            let violation = (ev.volume_fraction - target).max(0.0);
            if change < params.tolerance && violation < params.tolerance {
                streak += 1;
            } else {
                streak = 0;
            }
        }
        previous = Some(ev.objective);
        history.records.push(record);
        converged = streak >= params.patience;
        if converged || it == params.max_iters {
            observe(history.records.last().expect("just pushed"));
            last = Some(ev);
            break;
        }

        let t = Instant::now();
        let mut df0: Vec<f64> = grad.objective.iter().map(|g| g / scale).collect();
        let mut dg = grad.volume.clone();
        if rounding {
            round_sensitivities(&mut df0, params.rounding_digits);
            round_sensitivities(&mut dg, params.rounding_digits);
        }
        let free: Vec<bool> = ensemble.fields.iter().flat_map(|f| std::iter::repeat(f.active).take(block)).collect();
        if let Some(scales) = &params.scales {
            state.scales = Some(scales.for_ensemble(&ensemble, &mesh));
        }
        let next = state
            .update(&x.values, &df0, ev.volume_fraction - target, &dg, &free)
            .map_err(|e| e.at_iteration(it))?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("MMA produced a non-finite design".into()).at_iteration(it));
        }
        x.values = next;
        ensemble.set_design(&x)?;
        deactivate_degenerate(&mut ensemble.fields, mesh.edge_length());
        let rec = history.records.last_mut().expect("just pushed");
        rec.times.mma = t.elapsed().as_secs_f64();
        observe(rec);
    }
    Ok(OptimizationResult {
        ensemble,
        history,
        evaluation: last,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fea::SolverOptions;
    use crate::problems::{build_benchmark, generate_layout};
    use crate::projection::ProjectionParams;

    fn coarse(name: &str, mesh: &[usize], eps: f64) -> (Model, Ensemble) {
        let def = build_benchmark(name).unwrap().with_mesh(mesh).unwrap();
        let e = generate_layout(&def.layout, def.dim, &def.origin, &def.extent, &def.regions).unwrap();
        let m = Model::new(def.instantiate().unwrap(), ProjectionParams::default().with_epsilon(eps), "auto", &SolverOptions::default()).unwrap();
        (m, e)
    }

    #[test]
    fn zero_iterations_returns_the_input() {
        let (mut m, e) = coarse("cantilever2d", &[20, 10], 0.1);
        let p = OptimizerParams {
            max_iters: 0,
            ..Default::default()
        };
        let r = run_optimization(&mut m, &e, &p).unwrap();
        assert_eq!(r.ensemble, e);
        assert!(r.history.is_empty());
        assert!(r.evaluation.is_none());
    }

    #[test]
    fn bounds_contain_default_layouts() {
        for name in ["cantilever2d", "mbb2d", "lbeam2d", "bridge2d", "mechanism2d", "cantilever3d", "mbb3d", "chair3d"] {
            let def = build_benchmark(name).unwrap();
            let mesh = def.mesh().unwrap();
            let e = generate_layout(&def.layout, def.dim, &def.origin, &def.extent, &def.regions).unwrap();
            let (lo, hi) = BoundSettings::default().for_mesh(&mesh, e.len()).unwrap();
            let x = e.design_vector();
            for (i, v) in x.values.iter().enumerate() {
                assert!(lo[i] < *v && *v < hi[i], "{name}: variable {i} = {v} outside [{}, {}]", lo[i], hi[i]);
            }
            // σ can always reach the deactivation threshold
            assert!(lo[dim_n(def.dim)] < 0.5 * mesh.edge_length());
        }
    }

    fn dim_n(d: Dim) -> usize {
        d.n()
    }

    #[test]
    fn short_run_improves_and_tracks_volume() {
        let (mut m, e) = coarse("cantilever2d", &[40, 20], 0.1);
        let p = OptimizerParams {
            max_iters: 30,
            ..Default::default()
        };
        let mut seen = 0;
        let r = run_optimization_with(&mut m, &e, &p, |_| seen += 1).unwrap();
        assert_eq!(seen, r.history.len());
        let h = &r.history.records;
        assert!(h.iter().all(|r| r.objective.is_finite() && r.objective > 0.0));
        assert!(h.windows(2).all(|w| w[1].active_fields <= w[0].active_fields));
        let last = h.last().unwrap();
        assert!((last.volume_fraction - 0.4).abs() < 0.02, "V_f {}", last.volume_fraction);
        // the returned design is the one evaluated last
        let again = m.evaluate(&r.ensemble, false).unwrap();
        assert_eq!(again.reported, last.objective);
        assert!(h.iter().all(|r| r.times.tdf >= 0.0 && r.times.mma >= 0.0));
    }

    #[test]
    fn iteration_errors_carry_the_index() {
        // an iterative solver starved of iterations fails inside the loop
        let def = build_benchmark("cantilever2d").unwrap().with_mesh(&[20, 10]).unwrap();
        let e = generate_layout(&def.layout, def.dim, &def.origin, &def.extent, &def.regions).unwrap();
        let opts = SolverOptions {
            tolerance: 1e-12,
            max_iterations: 2,
        };
        let mut m = Model::new(def.instantiate().unwrap(), ProjectionParams::default(), "pcg-jacobi", &opts).unwrap();
        let err = run_optimization(&mut m, &e, &OptimizerParams::default()).err().unwrap();
        assert!(matches!(err, Error::Iteration { iteration: 1, .. }), "{err}");
    }
}

