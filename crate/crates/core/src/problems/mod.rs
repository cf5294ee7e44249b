//! Problem definitions: domain, mesh, loads, supports, non-design regions,
//! symmetry, and the initial Gaussian layout.

mod benchmarks;
mod layout;
mod symmetry;

use serde::{Deserialize, Serialize};

pub use benchmarks::{build_benchmark, full_benchmark, Benchmark, BenchmarkRegistry};
pub use layout::{generate_layout, LayoutSpec};
pub use symmetry::{mirror_field, symmetry_reduce, Reconstruction};

use crate::error::{Error, Result};
use crate::fea::Constraints;
use crate::mesh::{Dim, StructuredMesh};

/// Density assigned to frozen-void elements.
pub const VOID_DENSITY: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    /// Minimize `fᵀu`.
    Compliance,
    /// Maximize the output-port displacement `f₂ᵀu₁` (minimizes its negative).
    MutualPotentialEnergy,
}

/// Loads in physical coordinates. Distributed loads are intensities per unit
/// length (line) or area (surface) and are lumped onto the covered nodes with
/// half shares at segment ends. Axes along which `lo == hi` are snapped to the
/// nearest grid line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LoadSpec {
    Point { at: Vec<f64>, force: Vec<f64> },
    Line { from: Vec<f64>, to: Vec<f64>, intensity: Vec<f64> },
    Surface { lo: Vec<f64>, hi: Vec<f64>, intensity: Vec<f64> },
}

/// Zero displacement along `axes` for every node in the box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupportSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub axes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpringSpec {
    pub at: Vec<f64>,
    pub axis: usize,
    pub stiffness: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    Solid,
    Void,
}

/// Box of elements (by centroid) with a fixed density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    pub kind: RegionKind,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeepSide {
    Lower,
    Upper,
}

/// Mirror plane `x[axis] = at`; `keep` is the half retained by a reduction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymmetryPlane {
    pub axis: usize,
    pub at: f64,
    #[serde(default = "default_keep")]
    pub keep: KeepSide,
}

fn default_keep() -> KeepSide {
    KeepSide::Lower
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemDefinition {
    pub name: String,
    pub dim: Dim,
    pub origin: Vec<f64>,
    pub extent: Vec<f64>,
    /// Element counts per axis.
    pub mesh: Vec<usize>,
    pub objective: ObjectiveKind,
    pub volume_fraction: f64,
    pub loads: Vec<LoadSpec>,
    /// Unit pseudo-load at the output port (mutual potential energy only).
    #[serde(default)]
    pub output_loads: Vec<LoadSpec>,
    pub supports: Vec<SupportSpec>,
    #[serde(default)]
    pub springs: Vec<SpringSpec>,
    #[serde(default)]
    pub regions: Vec<RegionSpec>,
    /// Mirror planes of the problem.
    #[serde(default)]
    pub symmetry: Vec<SymmetryPlane>,
    /// Analyze only the reduced model cut by `symmetry`.
    #[serde(default)]
    pub reduce_symmetry: bool,
    /// Planes already cut away, for reconstructing the full design.
    #[serde(default)]
    pub reduced_from: Vec<SymmetryPlane>,
    pub layout: LayoutSpec,
    /// Round sensitivities to five significant digits every iteration.
    #[serde(default)]
    pub round_sensitivities: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementKind {
    Design,
    Solid,
    Void,
}

/// A definition resolved onto its mesh.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub definition: ProblemDefinition,
    pub mesh: StructuredMesh,
    pub constraints: Constraints,
    pub forces: Vec<f64>,
    pub output_forces: Option<Vec<f64>>,
    pub element_kinds: Vec<ElementKind>,
}

impl ProblemInstance {
    pub fn has_nondesign(&self) -> bool {
        self.element_kinds.iter().any(|k| *k != ElementKind::Design)
    }
}

fn check_len(what: &str, v: &[f64], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::Definition(format!(
            "{what} needs {n} coordinates, got {}",
            v.len()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    Ok(())
}

impl ProblemDefinition {
    pub fn mesh(&self) -> Result<StructuredMesh> {
        StructuredMesh::new(self.dim, &self.mesh, &self.origin, &self.extent)
    }

    /// Same problem on a different mesh resolution.
    pub fn with_mesh(&self, counts: &[usize]) -> Result<Self> {
        if counts.len() != self.dim.n() {
            return Err(Error::Definition(format!(
                "mesh needs {} counts, got {}",
                self.dim.n(),
                counts.len()
            )));
        }
        Ok(Self {
            mesh: counts.to_vec(),
            ..self.clone()
        })
    }

    pub fn domain_volume(&self) -> f64 {
        self.extent.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim.n();
        check_len("origin", &self.origin, n)?;
        check_len("extent", &self.extent, n)?;
        let mesh = self.mesh()?;
        if !(self.volume_fraction > 0.0 && self.volume_fraction < 1.0) {
            return Err(Error::Definition(format!(
                "volume fraction must lie in (0, 1), got {}",
                self.volume_fraction
            )));
        }
        if self.loads.is_empty() {
            return Err(Error::Definition("problem has no loads".into()));
        }
        match self.objective {
            ObjectiveKind::MutualPotentialEnergy if self.output_loads.is_empty() => {
                return Err(Error::Definition(
                    "mutual potential energy needs an output pseudo-load".into(),
                ))
            }
            ObjectiveKind::Compliance if !self.output_loads.is_empty() => {
                return Err(Error::Definition(
                    "output loads only apply to the mutual potential energy objective".into(),
                ))
            }
            _ => {}
        }
        for r in &self.regions {
            check_len("region bound", &r.lo, n)?;
            check_len("region bound", &r.hi, n)?;
            for a in 0..n {
                let (lo, hi) = (self.origin[a], self.origin[a] + self.extent[a]);
                if r.lo[a] > r.hi[a] || r.lo[a] < lo - 1e-9 || r.hi[a] > hi + 1e-9 {
                    return Err(Error::Definition(format!(
                        "region {:?}..{:?} is not inside the domain",
                        r.lo, r.hi
                    )));
                }
            }
        }
        for p in self.symmetry.iter().chain(&self.reduced_from) {
            if p.axis >= n {
                return Err(Error::Definition(format!("symmetry axis {} out of range", p.axis)));
            }
        }
        for p in &self.symmetry {
            let t = (p.at - mesh.origin()[p.axis]) / mesh.spacing()[p.axis];
            if (t - t.round()).abs() > 1e-6 || t.round() <= 0.0 || t.round() >= mesh.counts()[p.axis] as f64 {
                return Err(Error::Definition(format!(
                    "symmetry plane x{} = {} is not an interior mesh line",
                    p.axis, p.at
                )));
            }
        }
        self.layout.validate(self.dim)?;
        Ok(())
    }

    pub fn instantiate(&self) -> Result<ProblemInstance> {
        self.validate()?;
        let mesh = self.mesh()?;
        let d = self.dim.n();
        let mut forces = vec![0.0; mesh.num_dofs()];
        for l in &self.loads {
            apply_load(&mesh, l, &mut forces)?;
        }
        let output_forces = if self.output_loads.is_empty() {
            None
        } else {
            let mut f = vec![0.0; mesh.num_dofs()];
            for l in &self.output_loads {
                apply_load(&mesh, l, &mut f)?;
            }
            Some(f)
        };
        let mut fixed = Vec::new();
        for s in &self.supports {
            check_len("support bound", &s.lo, d)?;
            check_len("support bound", &s.hi, d)?;
            if let Some(&a) = s.axes.iter().find(|&&a| a >= d) {
                return Err(Error::Definition(format!("support axis {a} out of range")));
            }
            let nodes = select_nodes(&mesh, &s.lo, &s.hi)?;
            for node in nodes {
                for &a in &s.axes {
                    fixed.push((node * d + a, 0.0));
                }
            }
        }
        fixed.sort_by_key(|f| f.0);
        fixed.dedup_by_key(|f| f.0);
        let mut springs = Vec::new();
        for s in &self.springs {
            check_len("spring position", &s.at, d)?;
            if s.axis >= d {
                return Err(Error::Definition(format!("spring axis {} out of range", s.axis)));
            }
            let node = point_node(&mesh, &s.at)?;
            springs.push((node * d + s.axis, s.stiffness));
        }
        let constraints = Constraints { fixed, springs };
        constraints.validate(&mesh)?;
        let element_kinds = resolve_regions(&mesh, &self.regions)?;
        Ok(ProblemInstance {
            definition: self.clone(),
            mesh,
            constraints,
            forces,
            output_forces,
            element_kinds,
        })
    }
}

/// Grid line index nearest to `x` along `axis`.
fn snap(mesh: &StructuredMesh, axis: usize, x: f64) -> usize {
    mesh.nearest_line(axis, x)
}

/// Index range of grid lines inside `[lo, hi]` along `axis` (degenerate ranges snap).
fn line_range(mesh: &StructuredMesh, axis: usize, lo: f64, hi: f64) -> Result<(usize, usize)> {
    if lo > hi {
        return Err(Error::Definition(format!("empty range {lo}..{hi} on axis {axis}")));
    }
    if lo == hi {
        let i = snap(mesh, axis, lo);
        return Ok((i, i));
    }
    let h = mesh.spacing()[axis];
    let tol = 1e-6 * h;
    let o = mesh.origin()[axis];
    let n = mesh.counts()[axis];
    let first = (((lo - o - tol) / h).ceil().max(0.0)) as usize;
    let last = ((((hi - o + tol) / h).floor()) as isize).min(n as isize);
    if last < first as isize {
        return Err(Error::Definition(format!(
            "range {lo}..{hi} on axis {axis} contains no grid line"
        )));
    }
    Ok((first, last as usize))
}

fn select_nodes(mesh: &StructuredMesh, lo: &[f64], hi: &[f64]) -> Result<Vec<usize>> {
    let d = mesh.dim().n();
    let mut ranges = [(0usize, 0usize); 3];
    for a in 0..d {
        ranges[a] = line_range(mesh, a, lo[a], hi[a])?;
    }
    let mut out = Vec::new();
    for k in ranges[2].0..=ranges[2].1 {
        for j in ranges[1].0..=ranges[1].1 {
            for i in ranges[0].0..=ranges[0].1 {
                out.push(mesh.node_index(i, j, k));
            }
        }
    }
    Ok(out)
}

fn point_node(mesh: &StructuredMesh, at: &[f64]) -> Result<usize> {
    let mut g = [0usize; 3];
    for a in 0..mesh.dim().n() {
        g[a] = snap(mesh, a, at[a]);
        let x = mesh.node_coord(a, g[a]);
        if (x - at[a]).abs() > 1e-6 * mesh.spacing()[a] {
            return Err(Error::Definition(format!(
                "point {at:?} does not coincide with a mesh node"
            )));
        }
    }
    Ok(mesh.node_index(g[0], g[1], g[2]))
}

fn apply_load(mesh: &StructuredMesh, load: &LoadSpec, f: &mut [f64]) -> Result<()> {
    let d = mesh.dim().n();
    match load {
        LoadSpec::Point { at, force } => {
            check_len("load position", at, d)?;
            check_len("force", force, d)?;
            let node = point_node(mesh, at)?;
            for a in 0..d {
                f[node * d + a] += force[a];
            }
            Ok(())
        }
        LoadSpec::Line { from, to, intensity } => {
            distributed(mesh, from, to, intensity, 1, "line")?.apply(d, intensity, f);
            Ok(())
        }
        LoadSpec::Surface { lo, hi, intensity } => {
            distributed(mesh, lo, hi, intensity, 2.min(d - 1).max(1), "surface")?.apply(d, intensity, f);
            Ok(())
        }
    }
}

struct Lumped(Vec<(usize, f64)>);

impl Lumped {
    fn apply(&self, d: usize, intensity: &[f64], f: &mut [f64]) {
        for &(node, w) in &self.0 {
            for a in 0..d {
                f[node * d + a] += w * intensity[a];
            }
        }
    }
}

fn distributed(
    mesh: &StructuredMesh,
    a: &[f64],
    b: &[f64],
    intensity: &[f64],
    expected_axes: usize,
    what: &str,
) -> Result<Lumped> {
    let d = mesh.dim().n();
    check_len("load bound", a, d)?;
    check_len("load bound", b, d)?;
    check_len("load intensity", intensity, d)?;
    let lo: Vec<f64> = (0..d).map(|i| a[i].min(b[i])).collect();
    let hi: Vec<f64> = (0..d).map(|i| a[i].max(b[i])).collect();
    let spread: Vec<usize> = (0..d).filter(|&i| hi[i] > lo[i]).collect();
    if spread.len() != expected_axes {
        return Err(Error::Definition(format!(
            "{what} load must extend along {expected_axes} axis/axes, got {}",
            spread.len()
        )));
    }
    let mut ranges = [(0usize, 0usize); 3];
    for i in 0..d {
        ranges[i] = line_range(mesh, i, lo[i], hi[i])?;
        if spread.contains(&i) && ranges[i].0 == ranges[i].1 {
            return Err(Error::Definition(format!(
                "{what} load covers a single grid line along axis {i}"
            )));
        }
    }
    let weight = |axis: usize, idx: usize| -> f64 {
        if !spread.contains(&axis) {
            return 1.0;
        }
        let h = mesh.spacing()[axis];
        let (s, e) = ranges[axis];
        if idx == s || idx == e {
            0.5 * h
        } else {
            h
        }
    };
    let mut out = Vec::new();
    for k in ranges[2].0..=ranges[2].1 {
        for j in ranges[1].0..=ranges[1].1 {
            for i in ranges[0].0..=ranges[0].1 {
                let w = weight(0, i) * weight(1, j) * if d == 3 { weight(2, k) } else { 1.0 };
                out.push((mesh.node_index(i, j, k), w));
            }
        }
    }
    Ok(Lumped(out))
}

/// Element kinds from region boxes (membership by centroid).
pub fn resolve_regions(mesh: &StructuredMesh, regions: &[RegionSpec]) -> Result<Vec<ElementKind>> {
    let d = mesh.dim().n();
    let mut kinds = vec![ElementKind::Design; mesh.num_elements()];
    for e in 0..mesh.num_elements() {
        let c = mesh.element_centroid(e);
        for r in regions {
            let inside = (0..d).all(|a| c[a] >= r.lo[a] && c[a] <= r.hi[a]);
            if !inside {
                continue;
            }
            let k = match r.kind {
                RegionKind::Solid => ElementKind::Solid,
                RegionKind::Void => ElementKind::Void,
            };
            if kinds[e] != ElementKind::Design && kinds[e] != k {
                return Err(Error::Definition(format!(
                    "element {e} lies in both a solid and a void region"
                )));
            }
            kinds[e] = k;
        }
    }
    Ok(kinds)
}

/// Clamps frozen elements to their fixed densities.
pub fn apply_nondesign(densities: &mut [f64], kinds: &[ElementKind]) {
    for (r, k) in densities.iter_mut().zip(kinds) {
        match k {
            ElementKind::Design => {}
            ElementKind::Solid => *r = 1.0,
            ElementKind::Void => *r = VOID_DENSITY,
        }
    }
}
