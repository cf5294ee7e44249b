//! On-disk artifacts. Every writer produces the same bytes for the same
//! input; floats use Rust's shortest round-trip formatting.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use gaussian_topo::evaluation::StageTimes;
use gaussian_topo::geometry::Ensemble;
use gaussian_topo::mesh::StructuredMesh;
use gaussian_topo::optimizer::ConvergenceHistory;
use gaussian_topo::postprocess::{curvature_with, Contour, MIN_VERTICES, RESAMPLE_FACTOR};
use gaussian_topo::problems::ProblemDefinition;
use gaussian_topo::projection::ProjectionParams;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Everything needed to re-evaluate or re-export a design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignFile {
    pub problem_hash: String,
    pub problem: ProblemDefinition,
    pub projection: ProjectionParams,
    pub solver: String,
    pub ensemble: Ensemble,
}

impl DesignFile {
    pub fn new(problem: &ProblemDefinition, projection: ProjectionParams, solver: &str, ensemble: &Ensemble) -> Self {
        Self {
            problem_hash: problem_hash(problem),
            problem: problem.clone(),
            projection,
            solver: solver.to_string(),
            ensemble: ensemble.clone(),
        }
    }

    /// Parses a design file; errors name the line and column, and a stale
    /// hash or an ensemble of the wrong dimension is rejected.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let d: DesignFile = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column())))?;
        if d.problem_hash != problem_hash(&d.problem) {
            return Err(CliError::Config(format!(
                "{}: problem hash does not match the stored problem",
                path.display()
            )));
        }
        if d.ensemble.dim != d.problem.dim {
            return Err(CliError::Config(format!(
                "{}: ensemble dimension differs from the problem's",
                path.display()
            )));
        }
        d.ensemble
            .validate()
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Ok(d)
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Config(e.to_string()))?;
        write(path, &(text + "\n"))
    }
}

/// SHA-256 of the problem's canonical JSON.
pub fn problem_hash(problem: &ProblemDefinition) -> String {
    let bytes = serde_json::to_vec(problem).expect("problem definitions serialize");
    Sha256::digest(&bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

/// One row per iteration: the objective column is `C` or `J`.
pub fn history_csv(history: &ConvergenceHistory, objective_label: &str) -> String {
    let mut s = format!("iter,{objective_label},V_f,active_fields,band_elements\n");
    for r in &history.records {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.iteration, r.objective, r.volume_fraction, r.active_fields, r.band_elements
        );
    }
    s
}

/// Wall-clock seconds per stage and iteration.
pub fn timings_csv(history: &ConvergenceHistory) -> String {
    let mut s = String::from("iter,tdf,sen,fea,mma\n");
    for r in &history.records {
        let t = r.times;
        let _ = writeln!(s, "{},{},{},{},{}", r.iteration, t.tdf, t.sen, t.fea, t.mma);
    }
    s
}

/// Legacy ASCII VTK structured points with one cell scalar.
pub fn vtk_cells(mesh: &StructuredMesh, name: &str, values: &[f64]) -> String {
    let c = mesh.element_counts3();
    let o = mesh.origin();
    let h = mesh.spacing();
    let get = |v: &[f64], a: usize, fill: f64| v.get(a).copied().unwrap_or(fill);
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\n");
    let _ = writeln!(s, "{name}");
    s.push_str("ASCII\nDATASET STRUCTURED_POINTS\n");
    let dims: Vec<usize> = (0..3).map(|a| if a < mesh.dim().n() { c[a] + 1 } else { 1 }).collect();
    let _ = writeln!(s, "DIMENSIONS {} {} {}", dims[0], dims[1], dims[2]);
    let _ = writeln!(s, "ORIGIN {} {} {}", get(o, 0, 0.0), get(o, 1, 0.0), get(o, 2, 0.0));
    let _ = writeln!(s, "SPACING {} {} {}", get(h, 0, 1.0), get(h, 1, 1.0), get(h, 2, 1.0));
    let _ = writeln!(s, "CELL_DATA {}", values.len());
    let _ = writeln!(s, "SCALARS {name} double 1");
    s.push_str("LOOKUP_TABLE default\n");
    for v in values {
        let _ = writeln!(s, "{v}");
    }
    s
}

/// `contour,point,x,y,kappa`. With `curvature`, contours fine enough for a
/// curvature estimate are written at their resampled points; the rest keep
/// their native points and an empty κ column.
pub fn contours_csv(contours: &[Contour], curvature: bool) -> String {
    let mut s = String::from("contour,point,x,y,kappa\n");
    for (id, c) in contours.iter().enumerate() {
        let profile = if curvature && c.vertex_count() >= MIN_VERTICES {
            curvature_with(c, RESAMPLE_FACTOR * c.vertex_count()).ok()
        } else {
            None
        };
        match profile {
            Some(p) => {
                for (i, (pt, k)) in p.points.iter().zip(&p.kappa).enumerate() {
                    let _ = writeln!(s, "{id},{i},{},{},{k}", pt[0], pt[1]);
                }
            }
            None => {
                for (i, pt) in c.points[..c.vertex_count()].iter().enumerate() {
                    let _ = writeln!(s, "{id},{i},{},{},", pt[0], pt[1]);
                }
            }
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub objective: f64,
    pub volume_fraction: f64,
    /// Percent of the volume bound.
    pub volume_overshoot: f64,
    pub nondiscreteness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossEvaluation {
    pub mesh: Vec<usize>,
    pub objective: f64,
    pub volume_fraction: f64,
    pub binary_objective: f64,
    pub binary_volume_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub problem: String,
    pub problem_hash: String,
    pub mesh: Vec<usize>,
    pub fields: usize,
    pub active_fields: usize,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    /// `C` or `J`.
    pub objective_name: String,
    pub objective: f64,
    pub volume_fraction: f64,
    pub volume_bound: f64,
    /// Percent.
    pub nondiscreteness: f64,
    pub binary: Option<BinaryMetrics>,
    pub mean_stage_seconds: Option<StageTimes>,
    pub cross_evaluations: Vec<CrossEvaluation>,
}

/// Mean stage times with their shares of the iteration, one line per stage.
pub fn timing_table(t: &StageTimes) -> String {
    let total = t.total();
    let share = |v: f64| if total > 0.0 { 100.0 * v / total } else { 0.0 };
    let mut s = String::from("stage  mean [s]      share\n");
    for (name, v) in [("TDF", t.tdf), ("SEN", t.sen), ("FEA", t.fea), ("MMA", t.mma)] {
        let _ = writeln!(s, "{name:<5}  {v:<12.6e}  {:>6.2}%", share(v));
    }
    let _ = writeln!(s, "total  {total:<12.6e}");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use gaussian_topo::mesh::Dim;
    use gaussian_topo::optimizer::IterationRecord;
    use gaussian_topo::problems::{build_benchmark, generate_layout};

    #[test]
    fn vtk_header_and_counts() {
        let mesh = StructuredMesh::new(Dim::Two, &[3, 2], &[0.0, 0.0], &[3.0, 1.0]).unwrap();
        let s = vtk_cells(&mesh, "density", &[1.0; 6]);
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "# vtk DataFile Version 3.0");
        assert_eq!(lines[3], "DATASET STRUCTURED_POINTS");
        assert_eq!(lines[4], "DIMENSIONS 4 3 1");
        assert_eq!(lines[6], "SPACING 1 0.5 1");
        assert_eq!(lines[7], "CELL_DATA 6");
        assert_eq!(lines.len(), 10 + 6);
    }

    #[test]
    fn history_has_one_row_per_iteration() {
        let rec = |i| IterationRecord {
            iteration: i,
            objective: 1.5,
            volume_fraction: 0.4,
            active_fields: 3,
            band_elements: 7,
            times: StageTimes::default(),
        };
        let h = ConvergenceHistory {
            records: (1..=4).map(rec).collect(),
        };
        let s = history_csv(&h, "C");
        assert_eq!(s.lines().count(), 5);
        assert!(s.starts_with("iter,C,V_f"));
        assert_eq!(timings_csv(&h).lines().count(), 5);
    }

    #[test]
    fn design_round_trips_and_detects_edits() {
        let def = build_benchmark("cantilever2d").unwrap();
        let e = generate_layout(&def.layout, def.dim, &def.origin, &def.extent, &def.regions).unwrap();
        let d = DesignFile::new(&def, ProjectionParams::default(), "auto", &e);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("design.json");
        d.save(&p).unwrap();
        assert_eq!(DesignFile::load(&p).unwrap(), d);

        let tampered = fs::read_to_string(&p).unwrap().replacen("\"volume_fraction\": 0.4", "\"volume_fraction\": 0.5", 1);
        fs::write(&p, tampered).unwrap();
        assert!(DesignFile::load(&p).unwrap_err().to_string().contains("hash"));
    }

    #[test]
    fn corrupt_design_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("design.json");
        fs::write(&p, "{\n  \"problem_hash\": 12,\n").unwrap();
        let err = DesignFile::load(&p).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    #[test]
    fn timing_table_lists_four_stages() {
        let t = StageTimes {
            tdf: 1.0,
            sen: 1.0,
            fea: 2.0,
            mma: 0.0,
        };
        let s = timing_table(&t);
        assert!(s.contains("FEA") && s.contains("50.00%"));
        assert_eq!(s.lines().count(), 6);
    }
}
