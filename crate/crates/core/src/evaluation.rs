//! One forward pass of the design pipeline, optionally with gradients:
//! nodal TDF → element densities (non-design clamped) → FEA → response.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fea::{compliance, Analysis, Material, SolverOptions, SolverRegistry};
use crate::geometry::{Ensemble, Lattice};
use crate::mesh::StructuredMesh;
use crate::problems::{apply_nondesign, ObjectiveKind, ProblemInstance};
use crate::projection::{element_density, heaviside, measure_nondiscreteness, ProjectionParams};
use crate::sensitivity::{band_element_count, chain_through_band, nodal_weights, SensitivityResult};

/// Solved response of one objective.
#[derive(Debug, Clone)]
pub struct Response {
    /// Value handed to the optimizer (minimized).
    pub value: f64,
    /// Value reported to the user (compliance `C`, or `J` for mechanisms).
    pub reported: f64,
    /// `∂value/∂ρ_e` per element.
    pub element_derivative: Vec<f64>,
    pub displacements: Vec<Vec<f64>>,
}

/// A scalar structural response minimized by the optimizer.
pub trait Objective: Send + Sync {
    fn name(&self) -> &'static str;
    fn solve(&self, analysis: &mut Analysis, problem: &ProblemInstance) -> Result<Response>;
}

/// `C = fᵀu`.
pub struct Compliance;

impl Objective for Compliance {
    fn name(&self) -> &'static str {
        "compliance"
    }

    fn solve(&self, analysis: &mut Analysis, problem: &ProblemInstance) -> Result<Response> {
        let u = analysis.solve(0, &problem.forces)?;
        let c = compliance(&u, &problem.forces);
        let element_derivative = analysis.element_energies(&u).into_iter().map(|e| -e).collect();
        Ok(Response {
            value: c,
            reported: c,
            element_derivative,
            displacements: vec![u],
        })
    }
}

/// Mutual potential energy `J = f₂ᵀu₁`, maximized by minimizing `-J`.
pub struct MutualPotentialEnergy;

impl Objective for MutualPotentialEnergy {
    fn name(&self) -> &'static str {
        "mpe"
    }

    fn solve(&self, analysis: &mut Analysis, problem: &ProblemInstance) -> Result<Response> {
        let f2 = problem
            .output_forces
            .as_ref()
            .ok_or_else(|| Error::Definition("mutual potential energy needs an output load".into()))?;
        let u1 = analysis.solve(0, &problem.forces)?;
        let u2 = analysis.solve(1, f2)?;
        let j = compliance(&u1, f2);
        // ∂J/∂ρ_e = -u₁ᵀ k0 u₂, so ∂(-J)/∂ρ_e = +u₁ᵀ k0 u₂
        let element_derivative = analysis.element_cross_energies(&u1, &u2);
        Ok(Response {
            value: -j,
            reported: j,
            element_derivative,
            displacements: vec![u1, u2],
        })
    }
}

type ObjectiveFactory = fn() -> Box<dyn Objective>;

pub struct ObjectiveRegistry {
    factories: BTreeMap<&'static str, ObjectiveFactory>,
}

impl Default for ObjectiveRegistry {
    fn default() -> Self {
        let mut r = Self {
            factories: BTreeMap::new(),
        };
        r.register("compliance", || Box::new(Compliance));
        r.register("mpe", || Box::new(MutualPotentialEnergy));
        r
    }
}

impl ObjectiveRegistry {
    pub fn register(&mut self, name: &'static str, factory: ObjectiveFactory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    pub fn create(&self, name: &str) -> Result<Box<dyn Objective>> {
        self.factories.get(name).map(|f| f()).ok_or_else(|| Error::UnknownName {
            kind: "objective",
            name: name.to_string(),
            valid: self.names().join(", "),
        })
    }

    pub fn for_kind(&self, kind: ObjectiveKind) -> Result<Box<dyn Objective>> {
        self.create(match kind {
            ObjectiveKind::Compliance => "compliance",
            ObjectiveKind::MutualPotentialEnergy => "mpe",
        })
    }
}

/// Wall time of the four pipeline stages.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub tdf: f64,
    pub sen: f64,
    pub fea: f64,
    pub mma: f64,
}

impl StageTimes {
    pub fn total(&self) -> f64 {
        self.tdf + self.sen + self.fea + self.mma
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub nodal_tdf: Vec<f64>,
    /// `H(φ)` at the nodes.
    pub nodal_densities: Vec<f64>,
    pub densities: Vec<f64>,
    pub objective: f64,
    pub reported: f64,
    pub volume_fraction: f64,
    pub displacements: Vec<Vec<f64>>,
    pub gradient: Option<SensitivityResult>,
    pub times: StageTimes,
}

impl Evaluation {
    /// Measured on the projected nodal values. Element densities average
    /// their corners, so every element cut by the boundary reads as grey
    /// however sharp the projection is.
    pub fn nondiscreteness(&self) -> f64 {
        measure_nondiscreteness(&self.nodal_densities)
    }
}

/// Element densities from nodal TDF values.
pub fn project_densities(mesh: &StructuredMesh, nodal_tdf: &[f64], params: &ProjectionParams) -> Result<Vec<f64>> {
    let npe = mesh.dim().nodes_per_element();
    let mut vals = [0.0; 8];
    (0..mesh.num_elements())
        .map(|e| {
            let nodes = mesh.element_nodes(e);
            for (v, &n) in vals.iter_mut().zip(&nodes[..npe]) {
                *v = nodal_tdf[n];
            }
            element_density(&vals[..npe], params)
        })
        .collect()
}

/// A problem instance bound to its analysis, ready for repeated evaluation.
pub struct Model {
    instance: ProblemInstance,
    params: ProjectionParams,
    lattice: Lattice,
    analysis: Analysis,
    objective: Box<dyn Objective>,
}

impl Model {
    pub fn new(instance: ProblemInstance, params: ProjectionParams, solver: &str, options: &SolverOptions) -> Result<Self> {
        params.validate()?;
        let linear = SolverRegistry::default().create(solver, &instance.mesh, options)?;
        let analysis = Analysis::new(&instance.mesh, &Material::default(), instance.constraints.clone(), linear)?;
        let objective = ObjectiveRegistry::default().for_kind(instance.definition.objective)?;
        Ok(Self {
            lattice: Lattice::nodes(&instance.mesh),
            instance,
            params,
            analysis,
            objective,
        })
    }

    pub fn instance(&self) -> &ProblemInstance {
        &self.instance
    }

    pub fn mesh(&self) -> &StructuredMesh {
        &self.instance.mesh
    }

    pub fn params(&self) -> &ProjectionParams {
        &self.params
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn analysis(&self) -> &Analysis {
        &self.analysis
    }

    pub fn objective_name(&self) -> &'static str {
        self.objective.name()
    }

    /// Nodal TDF and clamped element densities.
    pub fn densities(&self, ensemble: &Ensemble) -> Result<(Vec<f64>, Vec<f64>)> {
        if ensemble.dim != self.instance.mesh.dim() {
            return Err(Error::Shape("ensemble and mesh dimensions differ".into()));
        }
        let kernels = ensemble.active_kernels()?;
        let tdf = self.lattice.tdf(&kernels);
        let mut rho = project_densities(&self.instance.mesh, &tdf, &self.params)?;
        apply_nondesign(&mut rho, &self.instance.element_kinds);
        Ok((tdf, rho))
    }

    pub fn volume_fraction(&self, densities: &[f64]) -> f64 {
        let mesh = &self.instance.mesh;
        densities.iter().sum::<f64>() * mesh.element_volume() / mesh.domain_volume()
    }

    pub fn evaluate(&mut self, ensemble: &Ensemble, with_gradient: bool) -> Result<Evaluation> {
        let mut times = StageTimes::default();
        let t0 = Instant::now();
        let (nodal_tdf, densities) = self.densities(ensemble)?;
        let volume_fraction = self.volume_fraction(&densities);
        times.tdf = secs(t0.elapsed());

        let t1 = Instant::now();
        self.analysis.update(&densities)?;
        let response = self.objective.solve(&mut self.analysis, &self.instance)?;
        if !response.value.is_finite() {
            return Err(Error::NonFinite("objective".into()));
        }
        times.fea = secs(t1.elapsed());

        let gradient = if with_gradient {
            let t2 = Instant::now();
            let mesh = &self.instance.mesh;
            let kinds = Some(self.instance.element_kinds.as_slice());
            let wf = nodal_weights(mesh, &response.element_derivative, kinds);
            let dv = mesh.element_volume() / mesh.domain_volume();
            let wv = nodal_weights(mesh, &vec![dv; mesh.num_elements()], kinds);
            let mut g = chain_through_band(&self.lattice, ensemble, &nodal_tdf, &self.params, &[&wf, &wv])?;
            let volume = g.pop().expect("two weight sets");
            let objective = g.pop().expect("two weight sets");
            let band_elements = band_element_count(mesh, &nodal_tdf, &self.params);
            times.sen = secs(t2.elapsed());
            Some(SensitivityResult {
                objective,
                volume,
                band_elements,
            })
        } else {
            None
        };
        let nodal_densities = nodal_tdf.iter().map(|&f| heaviside(f, &self.params)).collect();
        Ok(Evaluation {
            nodal_tdf,
            nodal_densities,
            densities,
            objective: response.value,
            reported: response.reported,
            volume_fraction,
            displacements: response.displacements,
            gradient,
            times,
        })
    }
}
