//! Experiment drivers behind the command line: solve, simulate, residual
//! maps, convergence studies and the interpolation comparison. Every driver
//! writes CSV files into the configured output directory.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::approximation::shepard_matrix;
use crate::config::{ErrorMetric, ReferenceKind, RunConfig, SigmaRule};
use crate::error::{Error, Result};
use crate::feedback::{check_decay, ClosedLoop, DecayReport, FeedbackPolicy, ResidualField};
use crate::geometry::{fill_distance, grid_nodes, separation_distance, NodeSet, FILL_SAMPLE_FACTOR};
use crate::kernels::{sigma_from_fill, sigma_from_overlap, ShapeFunction};
use crate::problems::{make_problem, ControlProblem, ProblemName};
use crate::solver::{
    assemble_transitions, interpolation_iteration, value_iteration, value_of, InterpolationReport, Solution,
    SolveOptions, ValueVector,
};

/// Fixed float format: 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Problem, nodes and kernel built from a configuration.
#[derive(Debug)]
pub struct Setup {
    pub config: RunConfig,
    pub problem: ControlProblem,
    pub nodes: NodeSet,
    pub kernel: ShapeFunction,
    pub fill_distance: f64,
    pub separation: Option<f64>,
    /// Smallest stage cost over non-target nodes and all controls.
    pub delta: f64,
}

pub fn setup(cfg: &RunConfig) -> Result<Setup> {
    let problem = make_problem(cfg.problem.name, &Value::Object(cfg.problem.overrides.clone()))?;
    let grid = cfg.grid.clone().unwrap_or_else(|| problem.default_grid().to_vec());
    if grid.len() != problem.dim() {
        return Err(Error::Config(format!(
            "grid has {} axes but the state has dimension {}",
            grid.len(),
            problem.dim()
        )));
    }
    let nodes = grid_nodes(problem.bounds(), &grid, problem.mask())?;
    let fill = fill_distance(&nodes, problem.bounds(), problem.mask(), FILL_SAMPLE_FACTOR)?;
    let sigma = match cfg.kernel.rule()? {
        SigmaRule::Fixed(s) => s,
        SigmaRule::Stationary(c) => sigma_from_fill(c, fill)?,
        SigmaRule::Overlap(count) => {
            let spacing = nodes.grid().expect("grid nodes carry grid metadata").spacing();
            sigma_from_overlap(count, &spacing)?
        }
    };
    let kernel = ShapeFunction::new(cfg.kernel.kind, sigma)?;
    let nodes = if cfg.anchor_target { anchor_target(&problem, nodes) } else { nodes };
    let separation = separation_distance(&nodes).ok();
    let delta = problem.delta_estimate(&nodes);
    Ok(Setup { config: cfg.clone(), problem, nodes, kernel, fill_distance: fill, separation, delta })
}

/// Appends the target center as a node when no node lies in the target, so
/// the boundary value on the target is represented in the approximation
/// space. The grid metadata is dropped; fill distance and shape parameter
/// are taken from the grid beforehand.
pub fn anchor_target(problem: &ControlProblem, nodes: NodeSet) -> NodeSet {
    if nodes.iter().any(|x| problem.in_target(x)) {
        return nodes;
    }
    let center = problem.target().center();
    if !problem.in_domain(&center) || !problem.in_target(&center) {
        log::warn!("no node lies in the target and its center is not admissible");
        return nodes;
    }
    let mut coords = nodes.coords().to_vec();
    coords.extend_from_slice(&center);
    log::info!("target center {center:?} added as node {}", nodes.len());
    NodeSet::from_flat(nodes.dim(), coords).expect("coordinates stay consistent")
}

/// Figures printed after a solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveSummary {
    pub problem: ProblemName,
    pub nodes: usize,
    pub controls: usize,
    pub fill_distance: f64,
    pub separation: Option<f64>,
    pub sigma: f64,
    pub delta: f64,
    pub contraction_bound: f64,
    pub iterations: usize,
    pub converged: bool,
    pub final_residual: f64,
    pub uncovered_images: usize,
    pub stabilizable_nodes: usize,
    pub wall_time: f64,
}

impl fmt::Display for SolveSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let q = self.separation.map_or("undefined".to_string(), |q| format!("{q:.6}"));
        writeln!(f, "problem      {:?}", self.problem)?;
        writeln!(f, "n            {}", self.nodes)?;
        writeln!(f, "m            {}", self.controls)?;
        writeln!(f, "h            {:.6}", self.fill_distance)?;
        writeln!(f, "q_X          {q}")?;
        writeln!(f, "sigma        {:.6}", self.sigma)?;
        writeln!(f, "delta        {:.6e}", self.delta)?;
        writeln!(f, "L            {:.12}", self.contraction_bound)?;
        writeln!(f, "iterations   {} ({})", self.iterations, if self.converged { "converged" } else { "NOT converged" })?;
        writeln!(f, "residual     {:.3e}", self.final_residual)?;
        writeln!(f, "uncovered    {}", self.uncovered_images)?;
        writeln!(f, "finite V     {} of {}", self.stabilizable_nodes, self.nodes)?;
        write!(f, "wall time    {:.3} s", self.wall_time)
    }
}

/// A setup together with its solution.
#[derive(Debug)]
pub struct Solved {
    pub setup: Setup,
    pub solution: Solution,
    pub summary: SolveSummary,
}

/// Builds, validates and solves without writing anything.
pub fn solve_config(cfg: &RunConfig) -> Result<Solved> {
    let setup = setup(cfg)?;
    let table = assemble_transitions(&setup.problem, &setup.nodes, &setup.kernel)?;
    if table.contraction_bound() >= 1.0 {
        return Err(Error::Config(
            "stage cost vanishes at a non-target node with an interior image (delta = 0)".into(),
        ));
    }
    let opts = SolveOptions { tol: cfg.solver.tol, max_iter: cfg.solver.max_iter };
    let (values, report) = value_iteration(&table, &ValueVector::zeros(setup.nodes.len()), opts)?;
    let floor = cfg.feedback.floor;
    let summary = SolveSummary {
        problem: cfg.problem.name,
        nodes: setup.nodes.len(),
        controls: setup.problem.n_controls(),
        fill_distance: setup.fill_distance,
        separation: setup.separation,
        sigma: setup.kernel.sigma(),
        delta: setup.delta,
        contraction_bound: report.contraction_bound,
        iterations: report.iterations,
        converged: report.converged,
        final_residual: report.residuals.last().copied().unwrap_or(0.0),
        uncovered_images: report.uncovered_images,
        stabilizable_nodes: values.vhat.iter().filter(|&&v| v > floor).count(),
        wall_time: report.wall_time,
    };
    Ok(Solved { setup, solution: Solution { table, values, report }, summary })
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<fs::File>> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(fs::File::create(dir.join(name))?))
}

fn coord_header(prefix: &str, dim: usize) -> Vec<String> {
    (1..=dim).map(|d| format!("{prefix}{d}")).collect()
}

/// `x1..xs,vhat,V` per node.
pub fn write_values<W: Write>(mut w: W, nodes: &NodeSet, values: &ValueVector, floor: f64) -> Result<()> {
    let mut header = coord_header("x", nodes.dim());
    header.extend(["vhat".into(), "V".into()]);
    writeln!(w, "{}", header.join(","))?;
    for (x, &v) in nodes.iter().zip(&values.vhat) {
        let mut row: Vec<String> = x.iter().map(|&c| fmt_f64(c)).collect();
        row.push(fmt_f64(v));
        row.push(fmt_f64(value_of(v, floor)));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// `iteration,residual`, iterations counted from 1.
pub fn write_residuals<W: Write>(mut w: W, residuals: &[f64]) -> Result<()> {
    writeln!(w, "iteration,residual")?;
    for (k, r) in residuals.iter().enumerate() {
        writeln!(w, "{},{}", k + 1, fmt_f64(*r))?;
    }
    Ok(())
}

/// Solves and writes `values.csv` and `residuals.csv`.
pub fn run_solve(cfg: &RunConfig) -> Result<Solved> {
    let solved = solve_config(cfg)?;
    let dir = &cfg.output_dir;
    let mut w = create(dir, "values.csv")?;
    write_values(&mut w, &solved.setup.nodes, &solved.solution.values, cfg.feedback.floor)?;
    w.flush()?;
    let mut w = create(dir, "residuals.csv")?;
    write_residuals(&mut w, &solved.solution.report.residuals)?;
    w.flush()?;
    Ok(solved)
}

fn policy<'a>(solved: &'a Solved) -> Result<FeedbackPolicy<'a>> {
    let s = &solved.setup;
    FeedbackPolicy::new(
        &s.problem,
        &s.nodes,
        s.kernel,
        &solved.solution.values,
        &solved.solution.report,
        s.config.feedback.floor,
    )
}

/// `x1..xs,V,e,c_tilde,in_R_eta` per point.
pub fn write_residual_field<W: Write>(mut w: W, dim: usize, points: &[f64], field: &ResidualField) -> Result<()> {
    let mut header = coord_header("x", dim);
    header.extend(["V", "e", "c_tilde", "in_R_eta"].map(String::from));
    writeln!(w, "{}", header.join(","))?;
    for (i, x) in points.chunks_exact(dim).enumerate() {
        let mut row: Vec<String> = x.iter().map(|&c| fmt_f64(c)).collect();
        row.push(fmt_f64(field.value[i]));
        row.push(fmt_f64(field.e[i]));
        row.push(fmt_f64(field.c_tilde[i]));
        row.push(u8::from(field.in_region(i)).to_string());
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

#[derive(Debug)]
pub struct SimulateOutcome {
    pub solved: Solved,
    pub run: ClosedLoop,
    /// Residual at every trajectory state.
    pub field: ResidualField,
    pub decay: DecayReport,
}

/// Solves, runs the closed loop from `feedback.x0` and checks the decay
/// inequality; writes `trajectory.csv` and `decay.json`.
pub fn run_simulate(cfg: &RunConfig) -> Result<SimulateOutcome> {
    let x0 = cfg
        .feedback
        .x0
        .clone()
        .ok_or_else(|| Error::Config("simulate needs feedback.x0".into()))?;
    let solved = solve_config(cfg)?;
    let dim = solved.setup.problem.dim();
    if x0.len() != dim {
        return Err(Error::Config(format!("x0 has {} entries, the state has {dim}", x0.len())));
    }
    let (run, field, decay) = {
        let pol = policy(&solved)?;
        let run = pol.closed_loop(&x0, cfg.feedback.steps)?;
        let points: Vec<f64> = run.trajectory.states.iter().flatten().copied().collect();
        let field = pol.bellman_residual(&points, cfg.feedback.eta)?;
        let decay = check_decay(&run.values, &run.trajectory.costs, &field.region_mask(), cfg.feedback.eta);
        (run, field, decay)
    };

    let d = solved.setup.problem.control_dim();
    let mut w = create(&cfg.output_dir, "trajectory.csv")?;
    let mut header = vec!["step".to_string()];
    header.extend(coord_header("x", dim));
    header.extend(coord_header("u", d));
    header.extend(["stage_cost", "V", "e", "c_tilde", "in_R_eta"].map(String::from));
    writeln!(w, "{}", header.join(","))?;
    let t = &run.trajectory;
    for (l, x) in t.states.iter().enumerate() {
        let mut row = vec![l.to_string()];
        row.extend(x.iter().map(|&c| fmt_f64(c)));
        match t.controls.get(l) {
            Some(u) => {
                row.extend(u.iter().map(|&c| fmt_f64(c)));
                row.push(fmt_f64(t.costs[l]));
            }
            None => row.extend(std::iter::repeat(String::new()).take(d + 1)),
        }
        row.push(fmt_f64(run.values[l]));
        row.push(fmt_f64(field.e[l]));
        row.push(fmt_f64(field.c_tilde[l]));
        row.push(u8::from(field.in_region(l)).to_string());
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    let mut w = create(&cfg.output_dir, "decay.json")?;
    serde_json::to_writer_pretty(
        &mut w,
        &serde_json::json!({ "termination": run.reason, "steps": t.steps(), "decay": decay }),
    )?;
    writeln!(w)?;
    w.flush()?;
    Ok(SimulateOutcome { solved, run, field, decay })
}

#[derive(Debug)]
pub struct ResidualMapOutcome {
    pub solved: Solved,
    pub field: ResidualField,
}

/// Solves and writes the residual field over the nodes to `residual.csv`.
pub fn run_residual_map(cfg: &RunConfig) -> Result<ResidualMapOutcome> {
    let solved = solve_config(cfg)?;
    let field = policy(&solved)?.bellman_residual(solved.setup.nodes.coords(), cfg.feedback.eta)?;
    let mut w = create(&cfg.output_dir, "residual.csv")?;
    write_residual_field(&mut w, solved.setup.nodes.dim(), solved.setup.nodes.coords(), &field)?;
    w.flush()?;
    Ok(ResidualMapOutcome { solved, field })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRow {
    pub k: usize,
    pub h: f64,
    pub error: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyOutcome {
    pub rows: Vec<StudyRow>,
    pub metric: ErrorMetric,
    /// Whether the reference was loaded from the cache.
    pub reference_cached: bool,
}

fn reference_key(cfg: &RunConfig) -> Result<String> {
    let material = serde_json::to_string(&serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "problem": cfg.problem,
        "grid": cfg.grid,
        "anchor_target": cfg.anchor_target,
        "kernel": cfg.kernel,
        "solver": cfg.solver,
    }))?;
    Ok(hex::encode(Sha256::digest(material.as_bytes())))
}

fn read_cached(path: &Path, n: usize) -> Option<Vec<f64>> {
    let text = fs::read_to_string(path).ok()?;
    let mut lines = text.lines();
    if lines.next()? != "vhat" {
        return None;
    }
    let v: Vec<f64> = lines.map(|l| l.parse().ok()).collect::<Option<_>>()?;
    (v.len() == n).then_some(v)
}

/// Transformed reference values at the members' nodes.
enum Reference {
    Solved { setup: Setup, vhat: Vec<f64> },
    /// `V(x) = c(x, 0)` off the target: the control 0 maps every state into
    /// the target, and the first stage cost does not depend on the control.
    Analytic,
}

impl Reference {
    fn at(&self, member: &Setup) -> Result<Vec<f64>> {
        let points = &member.nodes;
        match self {
            Reference::Solved { setup, vhat } => {
                let v = shepard_matrix(&setup.nodes, &setup.kernel, points.coords())?.apply(vhat)?;
                Ok(pin_target(member, v))
            }
            Reference::Analytic => {
                let p = &member.problem;
                Ok(points
                    .iter()
                    .map(|x| if p.in_target(x) { 1.0 } else { (-p.cost(x, &[0.0])).exp() })
                    .collect())
            }
        }
    }
}

/// Sets target points to 1, the transformed value the target class carries.
fn pin_target(member: &Setup, mut values: Vec<f64>) -> Vec<f64> {
    for (v, x) in values.iter_mut().zip(member.nodes.iter()) {
        if member.problem.in_target(x) {
            *v = 1.0;
        }
    }
    values
}

fn study_error(metric: ErrorMetric, approx: &[f64], reference: &[f64], floor: f64) -> f64 {
    match metric {
        ErrorMetric::Value => approx
            .iter()
            .zip(reference)
            .map(|(&a, &r)| {
                let (va, vr) = (value_of(a, floor), value_of(r, floor));
                if va == vr {
                    0.0
                } else {
                    (va - vr).abs()
                }
            })
            .fold(0.0, f64::max),
        ErrorMetric::Relative => {
            let scale = reference.iter().fold(0.0f64, |m, r| m.max(r.abs()));
            let diff = approx.iter().zip(reference).map(|(a, r)| (a - r).abs()).fold(0.0, f64::max);
            diff / scale
        }
    }
}

/// Solves at every resolution in `study.k_list` and compares the transformed
/// value of each solution at its own nodes (Shepard extension, 1 on the
/// target) with the reference; writes `convergence.csv`.
pub fn run_convergence_study(cfg: &RunConfig) -> Result<StudyOutcome> {
    let study = &cfg.study;
    if study.k_list.len() < 3 {
        return Err(Error::Config("study.k_list needs at least 3 entries".into()));
    }
    if study.k_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("study.k_list must be strictly ascending".into()));
    }
    let probe = make_problem(cfg.problem.name, &Value::Object(cfg.problem.overrides.clone()))?;
    let dim = probe.dim();
    let metric = study.metric.unwrap_or(match cfg.problem.name {
        ProblemName::Linear1d => ErrorMetric::Value,
        _ => ErrorMetric::Relative,
    });

    let mut reference_cached = false;
    let reference = match study.reference {
        ReferenceKind::Analytic => {
            if cfg.problem.name != ProblemName::Linear1d {
                return Err(Error::Config("an analytic reference exists only for linear1d".into()));
            }
            Reference::Analytic
        }
        ReferenceKind::Solve => {
            let k = study
                .reference_k
                .ok_or_else(|| Error::Config("study.reference_k is required for a solved reference".into()))?;
            let ref_cfg = cfg.at_resolution(k, dim);
            let cache_dir = study.cache_dir.clone().unwrap_or_else(|| cfg.output_dir.join("cache"));
            let path: PathBuf = cache_dir.join(format!("reference-{}.csv", &reference_key(&ref_cfg)?[..16]));
            let ref_setup = setup(&ref_cfg)?;
            let vhat = match read_cached(&path, ref_setup.nodes.len()) {
                Some(v) => {
                    reference_cached = true;
                    log::info!("reference loaded from {}", path.display());
                    v
                }
                None => {
                    let solved = solve_config(&ref_cfg)?;
                    if !solved.summary.converged {
                        log::warn!("reference solve did not converge");
                    }
                    let v = solved.solution.values.vhat;
                    let mut w = create(&cache_dir, path.file_name().and_then(|f| f.to_str()).expect("utf-8 name"))?;
                    writeln!(w, "vhat")?;
                    for x in &v {
                        writeln!(w, "{}", fmt_f64(*x))?;
                    }
                    w.flush()?;
                    v
                }
            };
            Reference::Solved { setup: ref_setup, vhat }
        }
    };

    let mut rows = Vec::new();
    for &k in &study.k_list {
        let member = cfg.at_resolution(k, dim);
        let solved = solve_config(&member)?;
        let s = &solved.setup;
        let own = shepard_matrix(&s.nodes, &s.kernel, s.nodes.coords())?.apply(&solved.solution.values.vhat)?;
        let own = pin_target(s, own);
        let reference_values = reference.at(s)?;
        let error = study_error(metric, &own, &reference_values, cfg.feedback.floor);
        if !solved.summary.converged {
            log::warn!("member k = {k} did not converge; row flagged");
        }
        rows.push(StudyRow {
            k,
            h: s.fill_distance,
            error,
            iterations: solved.summary.iterations,
            converged: solved.summary.converged,
        });
    }

    let mut w = create(&cfg.output_dir, "convergence.csv")?;
    writeln!(w, "k,h,error,iterations,converged")?;
    for r in &rows {
        writeln!(w, "{},{},{},{},{}", r.k, fmt_f64(r.h), fmt_f64(r.error), r.iterations, u8::from(r.converged))?;
    }
    w.flush()?;
    Ok(StudyOutcome { rows, metric, reference_cached })
}

#[derive(Debug)]
pub struct CompareOutcome {
    pub shepard: Solved,
    pub interpolation: InterpolationReport,
    /// `max |v_shepard - g_interp|` at the nodes after both runs.
    pub max_difference: f64,
}

/// Runs the Shepard value iteration and the interpolation-based iteration on
/// the same transitions; writes `compare.csv`.
pub fn run_compare_interpolation(cfg: &RunConfig) -> Result<CompareOutcome> {
    let shepard = solve_config(cfg)?;
    let opts = SolveOptions { tol: cfg.solver.tol, max_iter: cfg.solver.max_iter };
    let s = &shepard.setup;
    let interp = interpolation_iteration(&shepard.solution.table, &s.nodes, &s.kernel, opts)?;
    let max_difference = shepard
        .solution
        .values
        .vhat
        .iter()
        .zip(&interp.values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let mut w = create(&cfg.output_dir, "compare.csv")?;
    writeln!(w, "iteration,shepard_residual,interpolation_residual")?;
    let a = &shepard.solution.report.residuals;
    let b = &interp.residuals;
    for k in 0..a.len().max(b.len()) {
        let cell = |r: &Vec<f64>| r.get(k).map_or(String::new(), |x| fmt_f64(*x));
        writeln!(w, "{},{},{}", k + 1, cell(a), cell(b))?;
    }
    w.flush()?;
    Ok(CompareOutcome { shepard, interpolation: interp, max_difference })
}
