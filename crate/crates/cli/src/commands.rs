use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use gaussian_topo::evaluation::{Evaluation, Model};
use gaussian_topo::fea::SolverOptions;
use gaussian_topo::geometry::Ensemble;
use gaussian_topo::mesh::Dim;
use gaussian_topo::optimizer::{run_optimization_with, ConvergenceHistory, OptimizationResult, OptimizerParams};
use gaussian_topo::postprocess::{
    binary_extract, element_stress, ensemble_contours, extract_contours, reevaluate_on_mesh, volume_overshoot, NodeGrid,
};
use gaussian_topo::problems::{generate_layout, ObjectiveKind, ProblemDefinition, Reconstruction};
use gaussian_topo::projection::ProjectionParams;
use gaussian_topo::Error;

use crate::config::{Exports, RunConfig};
use crate::error::CliError;
use crate::export::{
    contours_csv, history_csv, timing_table, timings_csv, vtk_cells, write, BinaryMetrics, CrossEvaluation, DesignFile,
    Summary,
};

/// Setup failures (bad names, definitions, shapes) are configuration errors;
/// anything after the first iteration starts is numerical.
fn setup_error(e: Error) -> CliError {
    match e {
        Error::UnknownName { .. } | Error::Definition(_) | Error::Shape(_) | Error::Projection(_) | Error::InvalidField(_) => {
            CliError::Config(e.to_string())
        }
        other => CliError::Numerical(other),
    }
}

fn objective_label(def: &ProblemDefinition) -> &'static str {
    match def.objective {
        ObjectiveKind::Compliance => "C",
        ObjectiveKind::MutualPotentialEnergy => "J",
    }
}

fn build_model(def: &ProblemDefinition, projection: ProjectionParams, solver: &str, options: &SolverOptions) -> Result<Model, CliError> {
    let instance = def.instantiate().map_err(setup_error)?;
    Model::new(instance, projection, solver, options).map_err(setup_error)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub struct RunOutput {
    pub result: OptimizationResult,
    pub summary: Summary,
}

/// Optimizes, writes the enabled exports and returns the summary.
pub fn run(cfg: &RunConfig, progress: &mut dyn Write) -> Result<RunOutput, CliError> {
    let def = cfg.definition()?;
    let initial = generate_layout(&def.layout, def.dim, &def.origin, &def.extent, &def.regions).map_err(setup_error)?;
    let mut model = build_model(&def, cfg.projection, &cfg.solver, &cfg.solver_options)?;
    create_dir(&cfg.out)?;
    let label = objective_label(&def);
    let _ = writeln!(
        progress,
        "{}: {} fields on {:?}, solver {}",
        def.name,
        initial.len(),
        def.mesh,
        cfg.solver
    );
    let result = run_optimization_with(&mut model, &initial, &cfg.optimizer, |r| {
        if r.iteration == 1 || r.iteration % 10 == 0 {
            let _ = writeln!(
                progress,
                "iter {:4}  {label} = {:.6}  V_f = {:.5}  active = {}",
                r.iteration, r.objective, r.volume_fraction, r.active_fields
            );
        }
    })?;
    let summary = export_design(
        &cfg.out,
        &cfg.export,
        &def,
        cfg.projection,
        &cfg.solver,
        &cfg.solver_options,
        &result.ensemble,
        Some((&result.history, result.converged)),
        &cfg.evaluation_meshes,
    )?;
    let _ = write!(progress, "{}", timing_table(&result.history.mean_times()));
    Ok(RunOutput { result, summary })
}

/// Writes the exports of a finished design. `history` is absent when
/// re-exporting from a design file.
#[allow(clippy::too_many_arguments)]
pub fn export_design(
    dir: &Path,
    exports: &Exports,
    def: &ProblemDefinition,
    projection: ProjectionParams,
    solver: &str,
    options: &SolverOptions,
    ensemble: &Ensemble,
    history: Option<(&ConvergenceHistory, bool)>,
    evaluation_meshes: &[Vec<usize>],
) -> Result<Summary, CliError> {
    create_dir(dir)?;
    let label = objective_label(def);
    let design = DesignFile::new(def, projection, solver, ensemble);
    if exports.design {
        design.save(&dir.join("design.json"))?;
    }
    if let Some((h, _)) = history {
        if exports.history {
            write(&dir.join("history.csv"), &history_csv(h, label))?;
        }
        if exports.timings {
            write(&dir.join("timings.csv"), &timings_csv(h))?;
        }
    }

    let mut model = build_model(def, projection, solver, options)?;
    let smooth = model.evaluate(ensemble, false)?;
    let rec = Reconstruction::new(def).map_err(setup_error)?;
    let full = rec.full_mesh();
    if exports.density {
        write(&dir.join("density.vtk"), &vtk_cells(full, "density", &rec.expand_elements(&smooth.densities)))?;
    }
    if exports.stress {
        let s = element_stress(model.instance(), &smooth)?;
        write(&dir.join("stress.vtk"), &vtk_cells(full, "von_mises", &rec.expand_elements(&s)))?;
    }
    if exports.contours && def.dim == Dim::Two {
        let contours = if rec.is_identity() {
            let grid = NodeGrid::from_mesh(model.mesh(), &smooth.nodal_tdf)?;
            ensemble_contours(ensemble, &grid, projection.threshold)?
        } else {
            let grid = NodeGrid::from_mesh(full, &rec.expand_nodes(&smooth.nodal_tdf))?;
            extract_contours(&grid, projection.threshold)
        };
        write(&dir.join("contours.csv"), &contours_csv(&contours, exports.curvature))?;
    }

    let binary = if exports.binary || exports.summary {
        let b = binary_extract(model.instance(), ensemble, &projection, solver)?;
        Some(binary_metrics(&b, def.volume_fraction))
    } else {
        None
    };
    let mut cross = Vec::new();
    for counts in evaluation_meshes {
        let s = reevaluate_on_mesh(def, ensemble, counts, &projection, solver)?;
        let inst = def.with_mesh(counts).and_then(|d| d.instantiate()).map_err(setup_error)?;
        let b = binary_extract(&inst, ensemble, &projection, solver)?;
        cross.push(CrossEvaluation {
            mesh: counts.clone(),
            objective: s.reported,
            volume_fraction: s.volume_fraction,
            binary_objective: b.reported,
            binary_volume_fraction: b.volume_fraction,
        });
    }
    let summary = Summary {
        problem: def.name.clone(),
        problem_hash: design.problem_hash.clone(),
        mesh: def.mesh.clone(),
        fields: ensemble.len(),
        active_fields: ensemble.active_count(),
        iterations: history.map(|(h, _)| h.len()),
        converged: history.map(|(_, c)| c),
        objective_name: label.to_string(),
        objective: smooth.reported,
        volume_fraction: smooth.volume_fraction,
        volume_bound: def.volume_fraction,
        nondiscreteness: smooth.nondiscreteness(),
        binary,
        mean_stage_seconds: history.map(|(h, _)| h.mean_times()),
        cross_evaluations: cross,
    };
    if exports.summary {
        let text = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Config(e.to_string()))?;
        write(&dir.join("summary.json"), &(text + "\n"))?;
    }
    Ok(summary)
}

fn binary_metrics(b: &Evaluation, bound: f64) -> BinaryMetrics {
    BinaryMetrics {
        objective: b.reported,
        volume_fraction: b.volume_fraction,
        volume_overshoot: volume_overshoot(b.volume_fraction, bound),
        nondiscreteness: b.nondiscreteness(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluateReport {
    pub mesh: Vec<usize>,
    pub objective_name: &'static str,
    pub objective: f64,
    pub volume_fraction: f64,
    pub nondiscreteness: f64,
    pub binary: BinaryMetrics,
}

/// Re-evaluates a saved design, on its own mesh or on `mesh`.
pub fn evaluate(design_path: &Path, mesh: Option<&[usize]>, solver: Option<&str>) -> Result<EvaluateReport, CliError> {
    let d = DesignFile::load(design_path)?;
    let counts = mesh.map(<[usize]>::to_vec).unwrap_or_else(|| d.problem.mesh.clone());
    if counts.len() != d.problem.dim.n() {
        return Err(CliError::Config(format!("mesh {counts:?} does not match the design's dimension")));
    }
    let solver = solver.unwrap_or(&d.solver);
    let def = d.problem.with_mesh(&counts).map_err(setup_error)?;
    let mut model = build_model(&def, d.projection, solver, &SolverOptions::default())?;
    let smooth = model.evaluate(&d.ensemble, false)?;
    let binary = binary_extract(model.instance(), &d.ensemble, &d.projection, solver)?;
    Ok(EvaluateReport {
        mesh: counts,
        objective_name: objective_label(&def),
        objective: smooth.reported,
        volume_fraction: smooth.volume_fraction,
        nondiscreteness: smooth.nondiscreteness(),
        binary: binary_metrics(&binary, def.volume_fraction),
    })
}

/// Re-exports a saved design without optimizing.
pub fn post(design_path: &Path, out: &Path, exports: &Exports, evaluation_meshes: &[Vec<usize>]) -> Result<Summary, CliError> {
    let d = DesignFile::load(design_path)?;
    export_design(
        out,
        exports,
        &d.problem,
        d.projection,
        &d.solver,
        &SolverOptions::default(),
        &d.ensemble,
        None,
        evaluation_meshes,
    )
}

/// The parameter studies `bench` can loop over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Study {
    /// Layout grids 1, 2, 4, 6 cells per axis.
    Layouts,
    /// ε ∈ {0.2, 0.1, 0.02, 0.002}.
    Epsilon,
    /// T ∈ {0.1, 0.5, 0.9}.
    Threshold,
    /// Optimize on coarse, base and fine meshes; evaluate all on the finest.
    Mesh,
}

impl Study {
    pub const ALL: [Study; 4] = [Study::Layouts, Study::Epsilon, Study::Threshold, Study::Mesh];

    pub fn name(self) -> &'static str {
        match self {
            Study::Layouts => "layouts",
            Study::Epsilon => "epsilon",
            Study::Threshold => "threshold",
            Study::Mesh => "mesh",
        }
    }

    pub fn parse(s: &str) -> Result<Vec<Study>, CliError> {
        if s == "all" {
            return Ok(Self::ALL.to_vec());
        }
        Self::ALL
            .iter()
            .copied()
            .find(|st| st.name() == s)
            .map(|st| vec![st])
            .ok_or_else(|| CliError::Config(format!("unknown study '{s}'; valid: all, layouts, epsilon, threshold, mesh")))
    }
}

/// One optimized case of a study.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub study: &'static str,
    pub case: String,
    pub iterations: usize,
    pub objective: f64,
    pub volume_fraction: f64,
    pub nondiscreteness: f64,
    pub binary_objective: f64,
    pub binary_volume_fraction: f64,
    pub volume_overshoot: f64,
    /// Objective of the design re-evaluated on the study's finest mesh.
    pub cross_objective: Option<f64>,
    pub seconds: f64,
}

pub const BENCH_HEADER: &str = "study,case,iterations,objective,V_f,M_nd,binary_objective,binary_V_f,overshoot_percent,cross_objective,seconds";

impl BenchRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.study,
            self.case,
            self.iterations,
            self.objective,
            self.volume_fraction,
            self.nondiscreteness,
            self.binary_objective,
            self.binary_volume_fraction,
            self.volume_overshoot,
            self.cross_objective.map(|v| v.to_string()).unwrap_or_default(),
            self.seconds
        )
    }
}

fn bench_case(
    study: Study,
    case: String,
    def: &ProblemDefinition,
    projection: ProjectionParams,
    cfg: &RunConfig,
    params: &OptimizerParams,
) -> Result<(BenchRow, Ensemble), CliError> {
    let t = Instant::now();
    let initial = generate_layout(&def.layout, def.dim, &def.origin, &def.extent, &def.regions).map_err(setup_error)?;
    let mut model = build_model(def, projection, &cfg.solver, &cfg.solver_options)?;
    let r = run_optimization_with(&mut model, &initial, params, |_| {})?;
    let last = *r
        .history
        .last()
        .ok_or_else(|| CliError::Numerical(Error::State("empty history".into())))?;
    let smooth = model.evaluate(&r.ensemble, false)?;
    let b = binary_extract(model.instance(), &r.ensemble, &projection, &cfg.solver)?;
    let row = BenchRow {
        study: study.name(),
        case,
        iterations: r.history.len(),
        objective: last.objective,
        volume_fraction: last.volume_fraction,
        nondiscreteness: smooth.nondiscreteness(),
        binary_objective: b.reported,
        binary_volume_fraction: b.volume_fraction,
        volume_overshoot: volume_overshoot(b.volume_fraction, def.volume_fraction),
        cross_objective: None,
        seconds: t.elapsed().as_secs_f64(),
    };
    Ok((row, r.ensemble))
}

/// Runs the studies on the configured problem and writes `bench_<study>.csv`
/// files to the output directory. `meshes` overrides the mesh study's
/// training meshes; the last one is the evaluation mesh.
pub fn bench(cfg: &RunConfig, studies: &[Study], meshes: Option<&[Vec<usize>]>, progress: &mut dyn Write) -> Result<Vec<BenchRow>, CliError> {
    let base = cfg.definition()?;
    create_dir(&cfg.out)?;
    let mut all = Vec::new();
    for &study in studies {
        let mut rows = Vec::new();
        match study {
            Study::Layouts => {
                for n in [1usize, 2, 4, 6] {
                    let mut def = base.clone();
                    def.layout.grid = vec![n; def.dim.n()];
                    let case = def.layout.grid.iter().map(|g| g.to_string()).collect::<Vec<_>>().join("x");
                    rows.push(bench_case(study, case, &def, cfg.projection, cfg, &cfg.optimizer)?.0);
                    report(progress, rows.last());
                }
            }
            Study::Epsilon => {
                for eps in [0.2, 0.1, 0.02, 0.002] {
                    let p = cfg.projection.with_epsilon(eps);
                    rows.push(bench_case(study, eps.to_string(), &base, p, cfg, &cfg.optimizer)?.0);
                    report(progress, rows.last());
                }
            }
            Study::Threshold => {
                for t in [0.1, 0.5, 0.9] {
                    let p = ProjectionParams {
                        threshold: t,
                        ..cfg.projection
                    };
                    rows.push(bench_case(study, t.to_string(), &base, p, cfg, &cfg.optimizer)?.0);
                    report(progress, rows.last());
                }
            }
            Study::Mesh => {
                let train: Vec<Vec<usize>> = match meshes {
                    Some(m) => m.to_vec(),
                    None => [2usize, 1]
                        .iter()
                        .map(|&div| base.mesh.iter().map(|c| (c / div).max(1)).collect())
                        .chain(std::iter::once(base.mesh.iter().map(|c| c * 5).collect()))
                        .collect(),
                };
                let target = train.last().cloned().unwrap_or_else(|| base.mesh.clone());
                for counts in &train {
                    let def = base.with_mesh(counts).map_err(setup_error)?;
                    let case = counts.iter().map(|g| g.to_string()).collect::<Vec<_>>().join("x");
                    let (mut row, e) = bench_case(study, case, &def, cfg.projection, cfg, &cfg.optimizer)?;
                    row.cross_objective = Some(reevaluate_on_mesh(&base, &e, &target, &cfg.projection, &cfg.solver)?.reported);
                    rows.push(row);
                    report(progress, rows.last());
                }
            }
        }
        let mut text = String::from(BENCH_HEADER);
        text.push('\n');
        for r in &rows {
            text.push_str(&r.csv());
            text.push('\n');
        }
        write(&cfg.out.join(format!("bench_{}.csv", study.name())), &text)?;
        all.extend(rows);
    }
    Ok(all)
}

fn report(progress: &mut dyn Write, row: Option<&BenchRow>) {
    if let Some(r) = row {
        let _ = writeln!(progress, "{}", r.csv());
    }
}

/// Output directory of a command, defaulting under `runs/`.
pub fn default_out(name: &str) -> PathBuf {
    PathBuf::from("runs").join(name)
}
