use std::collections::BTreeMap;

use super::{
    symmetry_reduce, KeepSide, LayoutSpec, LoadSpec, ObjectiveKind, ProblemDefinition, RegionKind, RegionSpec,
    SpringSpec, SupportSpec, SymmetryPlane,
};
use crate::error::{Error, Result};
use crate::mesh::Dim;

/// A named problem setup.
pub trait Benchmark: Send + Sync {
    fn name(&self) -> &'static str;
    fn description(&self) -> &'static str;
    /// The full-domain problem, before any symmetry reduction.
    fn full_definition(&self) -> ProblemDefinition;
}

struct Fixed {
    name: &'static str,
    description: &'static str,
    build: fn() -> ProblemDefinition,
}

impl Benchmark for Fixed {
    fn name(&self) -> &'static str {
        self.name
    }
    fn description(&self) -> &'static str {
        self.description
    }
    fn full_definition(&self) -> ProblemDefinition {
        (self.build)()
    }
}

pub struct BenchmarkRegistry {
    entries: BTreeMap<&'static str, Box<dyn Benchmark>>,
}

impl Default for BenchmarkRegistry {
    fn default() -> Self {
        let mut r = Self { entries: BTreeMap::new() };
        let builtins: [(&'static str, &'static str, fn() -> ProblemDefinition); 8] = [
            ("cantilever2d", "2x1 cantilever, tip load at mid right edge", cantilever2d),
            ("mbb2d", "6x1 MBB beam, full domain with rounded sensitivities", mbb2d),
            ("lbeam2d", "L-shaped beam with a 0.6x0.6 frozen void", lbeam2d),
            ("bridge2d", "bridge with a frozen deck under uniform pressure (half model)", bridge2d),
            ("mechanism2d", "displacement inverter, mutual potential energy (half model)", mechanism2d),
            ("cantilever3d", "cantilever on a 64x32x32 domain with a tip line load", cantilever3d),
            ("mbb3d", "192x32x32 MBB beam (quarter model)", mbb3d),
            ("chair3d", "L-shaped chair with frozen seat and backrest plates (half model)", chair3d),
        ];
        for (name, description, build) in builtins {
            r.register(Box::new(Fixed { name, description, build }));
        }
        r
    }
}

impl BenchmarkRegistry {
    pub fn register(&mut self, b: Box<dyn Benchmark>) {
        self.entries.insert(b.name(), b);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }

    pub fn get(&self, name: &str) -> Result<&dyn Benchmark> {
        self.entries.get(name).map(|b| b.as_ref()).ok_or_else(|| Error::UnknownName {
            kind: "benchmark",
            name: name.to_string(),
            valid: self.names().join(", "),
        })
    }

    /// Analysis-ready definition: reduced when the benchmark asks for it.
    pub fn build(&self, name: &str) -> Result<ProblemDefinition> {
        let full = self.get(name)?.full_definition();
        if full.reduce_symmetry {
            Ok(symmetry_reduce(&full)?.0)
        } else {
            Ok(full)
        }
    }
}

pub fn build_benchmark(name: &str) -> Result<ProblemDefinition> {
    BenchmarkRegistry::default().build(name)
}

pub fn full_benchmark(name: &str) -> Result<ProblemDefinition> {
    Ok(BenchmarkRegistry::default().get(name)?.full_definition())
}

fn base(name: &str, dim: Dim, origin: &[f64], extent: &[f64], mesh: &[usize], vf: f64, layout: LayoutSpec) -> ProblemDefinition {
    ProblemDefinition {
        name: name.to_string(),
        dim,
        origin: origin.to_vec(),
        extent: extent.to_vec(),
        mesh: mesh.to_vec(),
        objective: ObjectiveKind::Compliance,
        volume_fraction: vf,
        loads: Vec::new(),
        output_loads: Vec::new(),
        supports: Vec::new(),
        springs: Vec::new(),
        regions: Vec::new(),
        symmetry: Vec::new(),
        reduce_symmetry: false,
        reduced_from: Vec::new(),
        layout,
        round_sensitivities: false,
    }
}

fn fix(lo: &[f64], hi: &[f64], axes: &[usize]) -> SupportSpec {
    SupportSpec {
        lo: lo.to_vec(),
        hi: hi.to_vec(),
        axes: axes.to_vec(),
    }
}

fn point(at: &[f64], force: &[f64]) -> LoadSpec {
    LoadSpec::Point {
        at: at.to_vec(),
        force: force.to_vec(),
    }
}

fn plane(axis: usize, at: f64) -> SymmetryPlane {
    SymmetryPlane {
        axis,
        at,
        keep: KeepSide::Lower,
    }
}

fn cantilever2d() -> ProblemDefinition {
    let mut p = base("cantilever2d", Dim::Two, &[0.0, 0.0], &[2.0, 1.0], &[200, 100], 0.4, LayoutSpec::new(&[4, 4], 2));
    p.loads.push(point(&[2.0, 0.5], &[0.0, -1.0]));
    p.supports.push(fix(&[0.0, 0.0], &[0.0, 1.0], &[0, 1]));
    p
}

fn mbb2d() -> ProblemDefinition {
    // centred on x = 0 so mirrored node coordinates are exact negatives
    let mut p = base("mbb2d", Dim::Two, &[-3.0, 0.0], &[6.0, 1.0], &[600, 100], 0.45, LayoutSpec::new(&[12, 4], 2));
    p.loads.push(point(&[0.0, 1.0], &[0.0, -1.0]));
    // rollers at both ends and the horizontal rigid mode held at mid-span.
    // Same element energies as a pin and a roller, but the stored system
    // stays an exact mirror image of itself; with the pin, rounding in the
    // rigid-translation row sums is amplified into visible asymmetry.
    p.supports.push(fix(&[-3.0, 0.0], &[-3.0, 0.0], &[1]));
    p.supports.push(fix(&[3.0, 0.0], &[3.0, 0.0], &[1]));
    p.supports.push(fix(&[0.0, 0.0], &[0.0, 0.0], &[0]));
    p.symmetry.push(plane(0, 0.0));
    p.round_sensitivities = true;
    p
}

fn lbeam2d() -> ProblemDefinition {
    let mut p = base("lbeam2d", Dim::Two, &[0.0, 0.0], &[1.0, 1.0], &[200, 200], 0.35, LayoutSpec::new(&[10, 10], 2));
    p.regions.push(RegionSpec {
        kind: RegionKind::Void,
        lo: vec![0.4, 0.4],
        hi: vec![1.0, 1.0],
    });
    p.loads.push(point(&[1.0, 0.2], &[0.0, -1.0]));
    p.supports.push(fix(&[0.0, 1.0], &[0.4, 1.0], &[0, 1]));
    p
}

fn bridge2d() -> ProblemDefinition {
    let mut p = base("bridge2d", Dim::Two, &[0.0, 0.0], &[6.0, 1.0], &[600, 100], 0.35, LayoutSpec::new(&[12, 5], 2));
    p.regions.push(RegionSpec {
        kind: RegionKind::Solid,
        lo: vec![0.0, 0.9],
        hi: vec![6.0, 1.0],
    });
    p.loads.push(LoadSpec::Line {
        from: vec![0.0, 1.0],
        to: vec![6.0, 1.0],
        intensity: vec![0.0, -1.0],
    });
    p.supports.push(fix(&[0.0, 0.0], &[0.0, 0.0], &[0, 1]));
    p.supports.push(fix(&[6.0, 0.0], &[6.0, 0.0], &[0, 1]));
    p.symmetry.push(plane(0, 3.0));
    p.reduce_symmetry = true;
    p
}

fn mechanism2d() -> ProblemDefinition {
    let mut p = base("mechanism2d", Dim::Two, &[0.0, 0.0], &[2.0, 2.0], &[200, 200], 0.3, LayoutSpec::new(&[5, 10], 2));
    p.objective = ObjectiveKind::MutualPotentialEnergy;
    p.loads.push(point(&[0.0, 1.0], &[1.0, 0.0]));
    p.output_loads.push(point(&[2.0, 1.0], &[-1.0, 0.0]));
    p.springs.push(SpringSpec {
        at: vec![0.0, 1.0],
        axis: 0,
        stiffness: 0.1,
    });
    p.springs.push(SpringSpec {
        at: vec![2.0, 1.0],
        axis: 0,
        stiffness: 0.1,
    });
    p.supports.push(fix(&[0.0, 0.0], &[0.0, 0.1], &[0, 1]));
    p.supports.push(fix(&[0.0, 1.9], &[0.0, 2.0], &[0, 1]));
    p.symmetry.push(plane(1, 1.0));
    p.reduce_symmetry = true;
    p
}

fn cantilever3d() -> ProblemDefinition {
    let mut p = base(
        "cantilever3d",
        Dim::Three,
        &[0.0; 3],
        &[64.0, 32.0, 32.0],
        &[80, 40, 40],
        0.25,
        LayoutSpec::new(&[4, 2, 2], 4),
    );
    p.loads.push(LoadSpec::Line {
        from: vec![64.0, 0.0, 0.0],
        to: vec![64.0, 32.0, 0.0],
        intensity: vec![0.0, 0.0, -1.0],
    });
    p.supports.push(fix(&[0.0, 0.0, 0.0], &[0.0, 32.0, 32.0], &[0, 1, 2]));
    p.symmetry.push(plane(1, 16.0));
    p
}

fn mbb3d() -> ProblemDefinition {
    let mut p = base(
        "mbb3d",
        Dim::Three,
        &[0.0; 3],
        &[192.0, 32.0, 32.0],
        &[240, 40, 40],
        0.2,
        LayoutSpec::new(&[12, 2, 2], 4),
    );
    p.loads.push(LoadSpec::Line {
        from: vec![96.0, 0.0, 32.0],
        to: vec![96.0, 32.0, 32.0],
        intensity: vec![0.0, 0.0, -1.0],
    });
    for y in [0.0, 32.0] {
        p.supports.push(fix(&[0.0, y, 0.0], &[0.0, y, 0.0], &[0, 1, 2]));
        p.supports.push(fix(&[192.0, y, 0.0], &[192.0, y, 0.0], &[1, 2]));
    }
    p.symmetry.push(plane(0, 96.0));
    p.symmetry.push(plane(1, 16.0));
    p.reduce_symmetry = true;
    p
}

fn chair3d() -> ProblemDefinition {
    let mut p = base(
        "chair3d",
        Dim::Three,
        &[0.0; 3],
        &[6.0, 3.0, 6.0],
        &[100, 50, 100],
        0.1,
        LayoutSpec::new(&[4, 4, 3], 4),
    );
    p.regions.push(RegionSpec {
        kind: RegionKind::Void,
        lo: vec![0.0, 0.0, 2.0],
        hi: vec![4.0, 3.0, 6.0],
    });
    // seat and backrest plates, 0.1 thick, bordering the void
    p.regions.push(RegionSpec {
        kind: RegionKind::Solid,
        lo: vec![0.0, 0.0, 1.9],
        hi: vec![4.0, 3.0, 2.0],
    });
    p.regions.push(RegionSpec {
        kind: RegionKind::Solid,
        lo: vec![4.0, 0.0, 2.0],
        hi: vec![4.1, 3.0, 6.0],
    });
    p.loads.push(LoadSpec::Surface {
        lo: vec![0.0, 0.0, 2.0],
        hi: vec![4.0, 3.0, 2.0],
        intensity: vec![0.0, 0.0, -1.0],
    });
    p.loads.push(LoadSpec::Surface {
        lo: vec![4.0, 0.0, 2.0],
        hi: vec![4.0, 3.0, 6.0],
        intensity: vec![0.2, 0.0, 0.0],
    });
    for x in [0.0, 6.0] {
        for y in [0.0, 3.0] {
            p.supports.push(fix(&[x, y, 0.0], &[x, y, 0.0], &[0, 1, 2]));
        }
    }
    p.symmetry.push(plane(1, 1.5));
    p.reduce_symmetry = true;
    p
}
