//! Bellman operator on the transformed value `v = exp(-V)`, its Shepard
//! projection and the value iteration.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::approximation::{Interpolant, ShepardMatrix, MAX_CONDITION};
use crate::error::{Error, Result};
use crate::geometry::{CellIndex, NodeSet};
use crate::kernels::ShapeFunction;
use crate::problems::ControlProblem;

/// Default stopping tolerance on the sup-norm change between iterates.
pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 2000;
/// Transformed values at or below this are treated as `V = +inf`.
pub const DEFAULT_FLOOR: f64 = 1e-20;

const NO_ROW: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageClass {
    Interior,
    Target,
    Outside,
}

/// Classifies a point: target membership first, then the domain test.
/// Non-finite points are always outside.
pub fn classify(p: &ControlProblem, y: &[f64]) -> ImageClass {
    if y.iter().any(|v| !v.is_finite()) {
        ImageClass::Outside
    } else if p.in_target(y) {
        ImageClass::Target
    } else if p.in_domain(y) {
        ImageClass::Interior
    } else {
        ImageClass::Outside
    }
}

/// All images `f(x_i, u_j)` with their discount weights and classes, stored
/// node-major, plus the Shepard matrix over the interior images.
#[derive(Debug, Clone)]
pub struct TransitionTable {
    n: usize,
    m: usize,
    dim: usize,
    images: Vec<f64>,
    weights: Vec<f64>,
    classes: Vec<ImageClass>,
    node_in_target: Vec<bool>,
    image_rows: Vec<u32>,
    image_matrix: ShepardMatrix,
    contraction_bound: f64,
}

impl TransitionTable {
    pub fn nodes(&self) -> usize {
        self.n
    }

    pub fn controls(&self) -> usize {
        self.m
    }

    pub fn image(&self, i: usize, j: usize) -> &[f64] {
        let k = (i * self.m + j) * self.dim;
        &self.images[k..k + self.dim]
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.m + j]
    }

    pub fn class(&self, i: usize, j: usize) -> ImageClass {
        self.classes[i * self.m + j]
    }

    pub fn node_in_target(&self, i: usize) -> bool {
        self.node_in_target[i]
    }

    /// Row of the image matrix holding `f(x_i, u_j)`, for interior images.
    pub fn image_row(&self, i: usize, j: usize) -> Option<usize> {
        let r = self.image_rows[i * self.m + j];
        (r != NO_ROW).then_some(r as usize)
    }

    pub fn image_matrix(&self) -> &ShepardMatrix {
        &self.image_matrix
    }

    /// `max e^{-c(x_i, u_j)}` over non-target nodes and the controls whose
    /// image is interior. Target and outside images feed constants into the
    /// maximum, so only these pairs enter the Lipschitz constant of the
    /// operator. Zero when there are no such pairs.
    pub fn contraction_bound(&self) -> f64 {
        self.contraction_bound
    }

    pub fn count(&self, class: ImageClass) -> usize {
        self.classes.iter().filter(|&&c| c == class).count()
    }

    /// Interior images that no node's support covers.
    pub fn uncovered_images(&self) -> usize {
        self.image_matrix.uncovered_count()
    }

    /// True when no image is interior or in the target and no node is a
    /// target node, so the iteration can only produce zeros.
    pub fn is_degenerate(&self) -> bool {
        !self.node_in_target.iter().any(|&t| t)
            && self.classes.iter().all(|&c| c == ImageClass::Outside)
    }

    /// Interior images in image-matrix row order.
    pub fn interior_images(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.image_matrix.rows() * self.dim);
        for (k, &c) in self.classes.iter().enumerate() {
            if c == ImageClass::Interior {
                out.extend_from_slice(&self.images[k * self.dim..(k + 1) * self.dim]);
            }
        }
        out
    }

    /// `v_bar(f(x_i, u_j))` given the values `interior` at the interior
    /// images.
    #[inline]
    fn successor(&self, k: usize, interior: impl Fn(usize) -> f64) -> f64 {
        match self.classes[k] {
            ImageClass::Target => 1.0,
            ImageClass::Outside => 0.0,
            ImageClass::Interior => interior(self.image_rows[k] as usize),
        }
    }
}

/// Computes and classifies every image `f(x_i, u_j)` and assembles the
/// Shepard matrix over the interior ones.
pub fn assemble_transitions(
    p: &ControlProblem,
    nodes: &NodeSet,
    kernel: &ShapeFunction,
) -> Result<TransitionTable> {
    if nodes.is_empty() {
        return Err(Error::EmptyNodeSet);
    }
    if nodes.dim() != p.dim() {
        return Err(Error::Shape { expected: p.dim(), actual: nodes.dim() });
    }
    if let Some(i) = (0..nodes.len()).find(|&i| !p.in_domain(nodes.point(i))) {
        return Err(Error::Domain(format!("node {i} at {:?} lies outside the domain", nodes.point(i))));
    }
    let (n, m, dim) = (nodes.len(), p.n_controls(), p.dim());

    type Row = (Vec<f64>, Vec<f64>, Vec<ImageClass>);
    let rows: Vec<Row> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<Row> {
            let x = nodes.point(i);
            let mut images = vec![0.0; m * dim];
            let mut weights = Vec::with_capacity(m);
            let mut classes = Vec::with_capacity(m);
            for (j, u) in p.controls().enumerate() {
                let y = &mut images[j * dim..(j + 1) * dim];
                p.step_into(x, u, y);
                weights.push((-p.checked_cost(x, u)?).exp());
                classes.push(classify(p, y));
            }
            Ok((images, weights, classes))
        })
        .collect::<Result<_>>()?;

    let mut images = Vec::with_capacity(n * m * dim);
    let mut weights = Vec::with_capacity(n * m);
    let mut classes = Vec::with_capacity(n * m);
    for (im, w, c) in rows {
        images.extend(im);
        weights.extend(w);
        classes.extend(c);
    }
    let node_in_target: Vec<bool> = nodes.iter().map(|x| p.in_target(x)).collect();

    let mut image_rows = vec![NO_ROW; n * m];
    let mut interior = Vec::new();
    let mut next = 0u32;
    for (k, &c) in classes.iter().enumerate() {
        if c == ImageClass::Interior {
            image_rows[k] = next;
            next += 1;
            interior.extend_from_slice(&images[k * dim..(k + 1) * dim]);
        }
    }
    let index = CellIndex::new(nodes, kernel.assembly_radius());
    let image_matrix = ShepardMatrix::assemble_with_index(&index, kernel, &interior);

    let contraction_bound = (0..n * m)
        .filter(|&k| !node_in_target[k / m] && classes[k] == ImageClass::Interior)
        .map(|k| weights[k])
        .fold(0.0, f64::max);

    let table = TransitionTable {
        n,
        m,
        dim,
        images,
        weights,
        classes,
        node_in_target,
        image_rows,
        image_matrix,
        contraction_bound,
    };
    if table.is_degenerate() {
        log::warn!("every image leaves the domain and no node lies in the target; the solution is zero");
    }
    if table.uncovered_images() > 0 {
        log::info!(
            "{} of {} interior images lie outside every node's support",
            table.uncovered_images(),
            table.image_matrix.rows()
        );
    }
    Ok(table)
}

/// Transformed values at the nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueVector {
    pub vhat: Vec<f64>,
}

impl ValueVector {
    pub fn zeros(n: usize) -> Self {
        Self { vhat: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.vhat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vhat.is_empty()
    }

    pub fn to_value(&self, floor: f64) -> Vec<f64> {
        to_value(&self.vhat, floor)
    }
}

/// `V = -log v`, with `v <= floor` mapped to `+inf`.
pub fn to_value(v: &[f64], floor: f64) -> Vec<f64> {
    v.iter().map(|&x| value_of(x, floor)).collect()
}

#[inline]
pub fn value_of(v: f64, floor: f64) -> f64 {
    if v <= floor {
        f64::INFINITY
    } else {
        -v.ln()
    }
}

/// One application of the projected Bellman operator.
pub fn bellman_apply(t: &TransitionTable, v: &ValueVector) -> Result<ValueVector> {
    let mut out = vec![0.0; t.n];
    let mut at_images = vec![0.0; t.image_matrix.rows()];
    bellman_apply_into(t, &v.vhat, &mut at_images, &mut out)?;
    Ok(ValueVector { vhat: out })
}

fn bellman_apply_into(t: &TransitionTable, v: &[f64], at_images: &mut [f64], out: &mut [f64]) -> Result<()> {
    if v.len() != t.n {
        return Err(Error::Shape { expected: t.n, actual: v.len() });
    }
    t.image_matrix.apply_into(v, at_images)?;
    gamma(t, |r| at_images[r], out);
    Ok(())
}

/// Applies the Bellman operator given the successor values at the interior
/// images.
fn gamma(t: &TransitionTable, interior: impl Fn(usize) -> f64 + Sync, out: &mut [f64]) {
    let m = t.m;
    out.par_iter_mut().enumerate().with_min_len(256).for_each(|(i, o)| {
        *o = if t.node_in_target[i] {
            1.0
        } else {
            (i * m..(i + 1) * m)
                .map(|k| t.weights[k] * t.successor(k, &interior))
                .fold(0.0, f64::max)
        };
    });
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_iter: DEFAULT_MAX_ITER }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// `|v_{k+1} - v_k|_inf` for every iteration.
    pub residuals: Vec<f64>,
    pub contraction_bound: f64,
    /// Seconds spent iterating (assembly excluded).
    pub wall_time: f64,
    pub converged: bool,
    pub uncovered_images: usize,
    pub degenerate: bool,
}

/// Iterates `v <- Gamma(S v)` from `v0` until the sup-norm change drops to
/// `tol` or `max_iter` iterations have run.
pub fn value_iteration(
    t: &TransitionTable,
    v0: &ValueVector,
    opts: SolveOptions,
) -> Result<(ValueVector, SolveReport)> {
    if !(opts.tol > 0.0) {
        return Err(Error::Config(format!("tolerance must be positive, got {}", opts.tol)));
    }
    if v0.len() != t.n {
        return Err(Error::Shape { expected: t.n, actual: v0.len() });
    }
    if v0.vhat.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Domain("initial values must lie in [0, 1]".into()));
    }
    let start = Instant::now();
    let mut v = v0.vhat.clone();
    let mut next = vec![0.0; t.n];
    let mut at_images = vec![0.0; t.image_matrix.rows()];
    let mut residuals = Vec::new();
    let mut converged = false;
    while residuals.len() < opts.max_iter {
        bellman_apply_into(t, &v, &mut at_images, &mut next)?;
        let delta = v.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        std::mem::swap(&mut v, &mut next);
        residuals.push(delta);
        if delta <= opts.tol {
            converged = true;
            break;
        }
    }
    let report = SolveReport {
        iterations: residuals.len(),
        residuals,
        contraction_bound: t.contraction_bound,
        wall_time: start.elapsed().as_secs_f64(),
        converged,
        uncovered_images: t.uncovered_images(),
        degenerate: t.is_degenerate(),
    };
    if !converged {
        log::warn!(
            "value iteration stopped after {} iterations with residual {:e}",
            report.iterations,
            report.residuals.last().copied().unwrap_or(f64::NAN)
        );
    }
    Ok((ValueVector { vhat: v }, report))
}

/// Result of a full solve.
#[derive(Debug, Clone)]
pub struct Solution {
    pub table: TransitionTable,
    pub values: ValueVector,
    pub report: SolveReport,
}

/// Assembles the transitions and runs the value iteration from zero.
pub fn solve(
    p: &ControlProblem,
    nodes: &NodeSet,
    kernel: &ShapeFunction,
    opts: SolveOptions,
) -> Result<Solution> {
    let table = assemble_transitions(p, nodes, kernel)?;
    let (values, report) = value_iteration(&table, &ValueVector::zeros(nodes.len()), opts)?;
    Ok(Solution { table, values, report })
}

/// Outcome of iterating the Bellman operator composed with dense RBF
/// interpolation instead of the Shepard approximation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InterpolationReport {
    pub iterations: usize,
    pub residuals: Vec<f64>,
    pub converged: bool,
    /// The iterates grew beyond the divergence threshold or became
    /// non-finite.
    pub diverged: bool,
    pub condition: f64,
    pub values: Vec<f64>,
}

/// Nodal values above this magnitude count as divergence.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;
/// Largest node count accepted by the dense interpolation iteration.
pub const MAX_DENSE_NODES: usize = 5000;

/// Iterates `g <- Gamma(I g)` with `I` the RBF interpolant on the nodes.
/// Unlike the Shepard version this map need not be a contraction.
pub fn interpolation_iteration(
    t: &TransitionTable,
    nodes: &NodeSet,
    kernel: &ShapeFunction,
    opts: SolveOptions,
) -> Result<InterpolationReport> {
    if nodes.len() > MAX_DENSE_NODES {
        return Err(Error::Config(format!(
            "dense interpolation is limited to {MAX_DENSE_NODES} nodes, got {}",
            nodes.len()
        )));
    }
    if nodes.len() != t.n {
        return Err(Error::Shape { expected: t.n, actual: nodes.len() });
    }
    let interp = Interpolant::new(nodes, *kernel)?;
    debug_assert!(interp.condition() <= MAX_CONDITION);
    let rows = interp.evaluation_rows(&t.interior_images());
    let mut g = vec![0.0; t.n];
    let mut next = vec![0.0; t.n];
    let mut residuals = Vec::new();
    let (mut converged, mut diverged) = (false, false);
    while residuals.len() < opts.max_iter {
        let c = interp.coefficients(&g)?;
        let at_images: Vec<f64> = rows
            .par_iter()
            .map(|row| row.iter().fold(0.0, |acc, &(j, w)| acc + w * c[j as usize]))
            .collect();
        gamma(t, |r| at_images[r], &mut next);
        let delta = g.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        std::mem::swap(&mut g, &mut next);
        residuals.push(delta);
        if !delta.is_finite() || g.iter().any(|v| !(v.abs() <= DIVERGENCE_THRESHOLD)) {
            diverged = true;
            break;
        }
        if delta <= opts.tol {
            converged = true;
            break;
        }
    }
    Ok(InterpolationReport {
        iterations: residuals.len(),
        residuals,
        converged,
        diverged,
        condition: interp.condition(),
        values: g,
    })
}
