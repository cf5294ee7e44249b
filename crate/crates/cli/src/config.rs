//! Run configuration: a JSON file, validated before any compute, with CLI
//! flags layered on top.

use std::path::{Path, PathBuf};

use gaussian_topo::fea::SolverOptions;
use gaussian_topo::optimizer::OptimizerParams;
use gaussian_topo::problems::{build_benchmark, LayoutSpec, ProblemDefinition};
use gaussian_topo::projection::ProjectionParams;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Name of a built-in benchmark; exclusive with `problem`.
    pub benchmark: Option<String>,
    /// A full problem definition.
    pub problem: Option<ProblemDefinition>,
    /// Element counts overriding the problem's mesh.
    pub mesh: Option<Vec<usize>>,
    /// Replaces the problem's initial layout.
    pub layout: Option<LayoutSpec>,
    pub projection: ProjectionParams,
    pub optimizer: OptimizerParams,
    pub solver: String,
    pub solver_options: SolverOptions,
    pub out: PathBuf,
    pub export: Exports,
    /// Meshes the final design is re-evaluated on.
    pub evaluation_meshes: Vec<Vec<usize>>,
    /// Reserved; every default is deterministic.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            benchmark: None,
            problem: None,
            mesh: None,
            layout: None,
            projection: ProjectionParams::default(),
            optimizer: OptimizerParams::default(),
            solver: "auto".into(),
            solver_options: SolverOptions::default(),
            out: PathBuf::from("runs/out"),
            export: Exports::default(),
            evaluation_meshes: Vec::new(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Exports {
    pub design: bool,
    pub history: bool,
    pub timings: bool,
    pub density: bool,
    pub contours: bool,
    pub curvature: bool,
    pub stress: bool,
    pub binary: bool,
    pub summary: bool,
}

impl Default for Exports {
    fn default() -> Self {
        Self {
            design: true,
            history: true,
            timings: true,
            density: true,
            contours: true,
            curvature: true,
            stress: false,
            binary: true,
            summary: true,
        }
    }
}

impl Exports {
    pub const NAMES: [&'static str; 9] = [
        "design", "history", "timings", "density", "contours", "curvature", "stress", "binary", "summary",
    ];

    pub fn none() -> Self {
        Self {
            design: false,
            history: false,
            timings: false,
            density: false,
            contours: false,
            curvature: false,
            stress: false,
            binary: false,
            summary: false,
        }
    }

    /// Only the named exports; `all` turns on everything.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self, CliError> {
        let mut e = Self::none();
        for n in names {
            match n.as_ref() {
                "design" => e.design = true,
                "history" => e.history = true,
                "timings" => e.timings = true,
                "density" => e.density = true,
                "contours" => e.contours = true,
                "curvature" => e.curvature = true,
                "stress" => e.stress = true,
                "binary" => e.binary = true,
                "summary" => e.summary = true,
                "all" => {
                    e = Self::default();
                    e.stress = true;
                }
                other => {
                    return Err(CliError::Config(format!(
                        "unknown export '{other}'; valid: all, {}",
                        Self::NAMES.join(", ")
                    )))
                }
            }
        }
        Ok(e)
    }
}

/// Reads and parses a config file. Parse errors carry the line and column.
pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| match e {
        CliError::Config(m) => CliError::Config(format!("{}:{m}", path.display())),
        other => other,
    })
}

pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let cfg: RunConfig = serde_json::from_str(text)
        .map_err(|e| CliError::Config(format!("{}:{}: {e}", e.line(), e.column())))?;
    cfg.validate().map_err(|e| match e {
        CliError::Config(m) => CliError::Config(anchor(text, &m)),
        other => other,
    })?;
    Ok(cfg)
}

/// Prefixes a validation message with the line of the first key it names in
/// backticks, so messages point into the file like parse errors do.
fn anchor(text: &str, message: &str) -> String {
    let key = message.split('`').nth(1);
    let line = key.and_then(|k| {
        let quoted = format!("\"{k}\"");
        text.lines().position(|l| l.contains(&quoted)).map(|i| i + 1)
    });
    match line {
        Some(l) => format!("{l}: {message}"),
        None => format!("0: {message}"),
    }
}

impl RunConfig {
    /// Checks everything that can be checked without building the problem.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        match (&self.benchmark, &self.problem) {
            (Some(_), Some(_)) => return bad("`benchmark` and `problem` are mutually exclusive".into()),
            (None, None) => return bad("one of `benchmark` or `problem` is required".into()),
            _ => {}
        }
        if let Err(e) = self.projection.validate() {
            return bad(format!("`projection`: {e}"));
        }
        if self.optimizer.max_iters == 0 {
            return bad("`max_iters` must be at least 1".into());
        }
        let m = &self.optimizer.mma;
        if !(m.move_limit > 0.0 && m.move_limit <= 1.0) {
            return bad(format!("`move_limit` must lie in (0, 1], got {}", m.move_limit));
        }
        if !(self.solver_options.tolerance > 0.0) {
            return bad("`tolerance` of `solver_options` must be positive".into());
        }
        if let Some(mesh) = &self.mesh {
            if mesh.is_empty() || mesh.contains(&0) {
                return bad(format!("`mesh` needs positive element counts, got {mesh:?}"));
            }
        }
        for m in &self.evaluation_meshes {
            if m.is_empty() || m.contains(&0) {
                return bad(format!("`evaluation_meshes` entry {m:?} needs positive element counts"));
            }
        }
        Ok(())
    }

    /// The problem to optimize, with mesh and layout overrides applied.
    pub fn definition(&self) -> Result<ProblemDefinition, CliError> {
        let mut def = match (&self.benchmark, &self.problem) {
            (Some(name), None) => build_benchmark(name).map_err(|e| CliError::Config(format!("`benchmark`: {e}")))?,
            (None, Some(p)) => p.clone(),
            _ => return Err(CliError::Config("one of `benchmark` or `problem` is required".into())),
        };
        if let Some(layout) = &self.layout {
            def.layout = layout.clone();
        }
        if let Some(mesh) = &self.mesh {
            def = def.with_mesh(mesh).map_err(|e| CliError::Config(format!("`mesh`: {e}")))?;
        }
        def.validate().map_err(|e| CliError::Config(format!("`problem`: {e}")))?;
        def.layout
            .validate(def.dim)
            .map_err(|e| CliError::Config(format!("`layout`: {e}")))?;
        for m in &self.evaluation_meshes {
            if m.len() != def.dim.n() {
                return Err(CliError::Config(format!(
                    "`evaluation_meshes` entry {m:?} does not match the problem dimension"
                )));
            }
        }
        Ok(def)
    }
}

/// `NXxNY[xNZ]` → element counts.
pub fn parse_counts(s: &str) -> Result<Vec<usize>, CliError> {
    let v: Result<Vec<usize>, _> = s.split(['x', 'X']).map(|p| p.trim().parse::<usize>()).collect();
    match v {
        Ok(v) if (2..=3).contains(&v.len()) && !v.contains(&0) => Ok(v),
        _ => Err(CliError::Config(format!("expected NXxNY or NXxNYxNZ with positive counts, got '{s}'"))),
    }
}

/// `NXxNYxK` (2D) or `NXxNYxNZxK` (3D) → grid and fields per cell.
pub fn parse_layout(s: &str, base: &LayoutSpec) -> Result<LayoutSpec, CliError> {
    let v: Result<Vec<usize>, _> = s.split(['x', 'X']).map(|p| p.trim().parse::<usize>()).collect();
    match v {
        Ok(v) if (3..=4).contains(&v.len()) && !v.contains(&0) => {
            let mut out = base.clone();
            out.grid = v[..v.len() - 1].to_vec();
            out.per_cell = v[v.len() - 1];
            Ok(out)
        }
        _ => Err(CliError::Config(format!(
            "expected NXxNYxK or NXxNYxNZxK with positive entries, got '{s}'"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_reports_its_line() {
        let text = "{\n  \"benchmark\": \"cantilever2d\",\n  \"iterations\": 3\n}";
        let err = parse_config(text).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("3:"), "{err}");
        assert!(err.to_string().contains("iterations"), "{err}");
    }

    #[test]
    fn nested_unknown_key_is_rejected() {
        let text = r#"{"benchmark": "cantilever2d", "optimizer": {"max_iter": 3}}"#;
        assert!(parse_config(text).is_err());
    }

    #[test]
    fn validation_errors_point_at_the_key() {
        let text = "{\n  \"benchmark\": \"cantilever2d\",\n  \"projection\": {\"threshold\": 0.5, \"epsilon\": -1.0, \"alpha_floor\": 0.001}\n}";
        let err = parse_config(text).unwrap_err().to_string();
        assert!(err.starts_with("3: "), "{err}");
    }

    #[test]
    fn benchmark_and_problem_are_exclusive() {
        assert!(parse_config("{}").is_err());
        let def = build_benchmark("cantilever2d").unwrap();
        let text = serde_json::json!({"benchmark": "cantilever2d", "problem": def}).to_string();
        assert!(parse_config(&text).is_err());
    }

    #[test]
    fn inline_problem_round_trips() {
        let def = build_benchmark("lbeam2d").unwrap();
        let text = serde_json::json!({"problem": def, "mesh": [50, 50]}).to_string();
        let cfg = parse_config(&text).unwrap();
        assert_eq!(cfg.definition().unwrap().mesh, vec![50, 50]);
    }

    #[test]
    fn counts_and_layouts_parse() {
        assert_eq!(parse_counts("200x100").unwrap(), vec![200, 100]);
        assert_eq!(parse_counts("80x40x40").unwrap(), vec![80, 40, 40]);
        assert!(parse_counts("200").is_err());
        assert!(parse_counts("0x3").is_err());
        let l = parse_layout("6x6x2", &LayoutSpec::new(&[4, 4], 2)).unwrap();
        assert_eq!((l.grid, l.per_cell), (vec![6, 6], 2));
        assert!(parse_layout("6x6", &LayoutSpec::new(&[4, 4], 2)).is_err());
    }

    #[test]
    fn export_names() {
        let e = Exports::from_names(&["history", "summary"]).unwrap();
        assert!(e.history && e.summary && !e.density);
        assert!(Exports::from_names(&["all"]).unwrap().stress);
        assert!(Exports::from_names(&["pictures"]).is_err());
    }
}
