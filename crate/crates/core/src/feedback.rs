//! Feedback from an approximate value function, closed-loop simulation and
//! the Bellman residual.

use rayon::prelude::*;
use serde::Serialize;

use crate::approximation::ShepardMatrix;
use crate::error::{Error, Result};
use crate::geometry::{CellIndex, NodeSet};
use crate::kernels::ShapeFunction;
use crate::problems::{ControlProblem, Trajectory};
use crate::solver::{classify, value_of, ImageClass, SolveReport, ValueVector};

/// Slack allowed in the decay inequality.
pub const DECAY_SLACK: f64 = 1e-9;

/// Feedback law `u(x) = argmin_u c(x, u) + V(f(x, u))` over the control
/// sample, with `V` the Shepard extension of a converged solution.
#[derive(Debug)]
pub struct FeedbackPolicy<'a> {
    problem: &'a ControlProblem,
    kernel: ShapeFunction,
    index: CellIndex<'a>,
    vhat: Vec<f64>,
    floor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackChoice {
    pub index: usize,
    pub control: Vec<f64>,
    /// `min_u c(x, u) + V(f(x, u))`.
    pub q_value: f64,
    /// Stage cost of the chosen control.
    pub cost: f64,
}

impl<'a> FeedbackPolicy<'a> {
    /// Requires a converged solve on `nodes`.
    pub fn new(
        problem: &'a ControlProblem,
        nodes: &'a NodeSet,
        kernel: ShapeFunction,
        values: &ValueVector,
        report: &SolveReport,
        floor: f64,
    ) -> Result<Self> {
        if !report.converged {
            return Err(Error::Invariant(format!(
                "feedback needs a converged solution (stopped after {} iterations)",
                report.iterations
            )));
        }
        if values.len() != nodes.len() {
            return Err(Error::Shape { expected: nodes.len(), actual: values.len() });
        }
        if !(floor > 0.0 && floor < 1.0) {
            return Err(Error::Config(format!("floor must lie in (0, 1), got {floor}")));
        }
        Ok(Self {
            problem,
            kernel,
            index: CellIndex::new(nodes, kernel.assembly_radius()),
            vhat: values.vhat.clone(),
            floor,
        })
    }

    pub fn problem(&self) -> &ControlProblem {
        self.problem
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// Transformed values at `points` (row-major): 1 in the target, 0 outside
    /// the domain, the Shepard value otherwise.
    pub fn transformed_at(&self, points: &[f64]) -> Vec<f64> {
        let dim = self.problem.dim();
        let classes: Vec<ImageClass> = points.chunks_exact(dim).map(|y| classify(self.problem, y)).collect();
        let interior: Vec<f64> = points
            .chunks_exact(dim)
            .zip(&classes)
            .filter(|(_, &c)| c == ImageClass::Interior)
            .flat_map(|(y, _)| y.iter().copied())
            .collect();
        let a = ShepardMatrix::assemble_with_index(&self.index, &self.kernel, &interior);
        let mut row = 0;
        classes
            .iter()
            .map(|c| match c {
                ImageClass::Target => 1.0,
                ImageClass::Outside => 0.0,
                ImageClass::Interior => {
                    row += 1;
                    a.row_dot(row - 1, &self.vhat)
                }
            })
            .collect()
    }

    /// Approximate optimal value at `x`.
    pub fn value(&self, x: &[f64]) -> f64 {
        value_of(self.transformed_at(x)[0], self.floor)
    }

    pub fn in_stabilizable_set(&self, x: &[f64]) -> bool {
        self.value(x).is_finite()
    }

    /// `c(x, u) + V(f(x, u))` for every control.
    pub fn q_values(&self, x: &[f64]) -> Vec<f64> {
        let p = self.problem;
        let mut images = vec![0.0; p.n_controls() * p.dim()];
        for (u, y) in p.controls().zip(images.chunks_exact_mut(p.dim())) {
            p.step_into(x, u, y);
        }
        let succ = self.transformed_at(&images);
        p.controls()
            .zip(succ)
            .map(|(u, v)| p.cost(x, u) + value_of(v, self.floor))
            .collect()
    }

    /// Minimizing control; ties go to the lowest control index.
    pub fn feedback_control(&self, x: &[f64]) -> Result<FeedbackChoice> {
        if !self.in_stabilizable_set(x) {
            return Err(Error::NotStabilizable { floor: self.floor });
        }
        self.argmin(x)
    }

    fn argmin(&self, x: &[f64]) -> Result<FeedbackChoice> {
        let q = self.q_values(x);
        let mut best: Option<(usize, f64)> = None;
        for (j, &v) in q.iter().enumerate() {
            if v.is_finite() && best.map_or(true, |(_, b)| v < b) {
                best = Some((j, v));
            }
        }
        let (index, q_value) = best.ok_or(Error::DeadEnd)?;
        let control = self.problem.control(index).to_vec();
        let cost = self.problem.cost(x, &control);
        Ok(FeedbackChoice { index, control, q_value, cost })
    }

    /// Runs the closed loop from `x0` for at most `max_steps` steps.
    pub fn closed_loop(&self, x0: &[f64], max_steps: usize) -> Result<ClosedLoop> {
        let v0 = self.value(x0);
        if !v0.is_finite() {
            return Err(Error::NotStabilizable { floor: self.floor });
        }
        let mut traj = Trajectory { states: vec![x0.to_vec()], ..Default::default() };
        let mut values = vec![v0];
        let mut x = x0.to_vec();
        let reason = loop {
            if self.problem.in_target(&x) {
                break Termination::Target;
            }
            if traj.steps() == max_steps {
                break Termination::MaxSteps;
            }
            let choice = match self.argmin(&x) {
                Ok(c) => c,
                Err(Error::DeadEnd) => break Termination::DeadEnd,
                Err(e) => return Err(e),
            };
            let next = self.problem.step(&x, &choice.control);
            let v = self.value(&next);
            traj.controls.push(choice.control);
            traj.costs.push(choice.cost);
            traj.states.push(next.clone());
            values.push(v);
            x = next;
            if !v.is_finite() {
                break Termination::LeftStabilizable;
            }
        };
        Ok(ClosedLoop { trajectory: traj, values, reason })
    }

    /// Bellman residual and feedback stage cost at `points` (row-major).
    pub fn bellman_residual(&self, points: &[f64], eta: f64) -> Result<ResidualField> {
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::Config(format!("eta must lie in (0, 1], got {eta}")));
        }
        let dim = self.problem.dim();
        let entries: Vec<(f64, f64, f64)> = points
            .par_chunks_exact(dim)
            .map(|x| {
                let v = self.value(x);
                if !v.is_finite() {
                    return (v, f64::INFINITY, f64::INFINITY);
                }
                match self.argmin(x) {
                    Ok(c) => (v, c.q_value - v, c.cost),
                    Err(_) => (v, f64::INFINITY, f64::INFINITY),
                }
            })
            .collect();
        Ok(ResidualField {
            value: entries.iter().map(|e| e.0).collect(),
            e: entries.iter().map(|e| e.1).collect(),
            c_tilde: entries.iter().map(|e| e.2).collect(),
            eta,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Target,
    DeadEnd,
    LeftStabilizable,
    MaxSteps,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::Target => "target",
            Termination::DeadEnd => "dead_end",
            Termination::LeftStabilizable => "left_stabilizable_set",
            Termination::MaxSteps => "max_steps",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoop {
    pub trajectory: Trajectory,
    /// Approximate value at every visited state.
    pub values: Vec<f64>,
    pub reason: Termination,
}

/// Residual `e(x)` and feedback stage cost at a set of points.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualField {
    pub value: Vec<f64>,
    pub e: Vec<f64>,
    pub c_tilde: Vec<f64>,
    pub eta: f64,
}

impl ResidualField {
    pub fn len(&self) -> usize {
        self.e.len()
    }

    pub fn is_empty(&self) -> bool {
        self.e.is_empty()
    }

    pub fn in_region(&self, i: usize) -> bool {
        self.e[i].is_finite() && self.c_tilde[i].is_finite() && self.e[i] <= self.eta * self.c_tilde[i]
    }

    pub fn region_mask(&self) -> Vec<bool> {
        (0..self.len()).map(|i| self.in_region(i)).collect()
    }

    /// Points with finite value at most `level`.
    pub fn sublevel(&self, level: f64) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.value[i] <= level).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayReport {
    /// Number of windows `(k, l)` checked.
    pub checked: usize,
    /// First `l` where the inequality fails for some window ending there.
    pub first_violation: Option<usize>,
    /// First `l` with `x_{l-1}` in the region and `x_l` outside it.
    pub region_exit: Option<usize>,
    /// States lying in the region.
    pub in_region: usize,
    pub holds: bool,
}

/// Checks `V(x_l) <= V(x_k) - (1 - eta) sum_{k<=j<l} c_j + slack` for every
/// window `k < l` with `x_k, ..., x_{l-1}` in the region. A trajectory
/// started at `x_k` is the tail of this one, so the decay applies from every
/// start inside the region; windows with `k = 0` are the prefixes. With
/// `eta = 1` this is monotone nonincrease of `V` along each stretch.
pub fn check_decay(values: &[f64], costs: &[f64], in_region: &[bool], eta: f64) -> DecayReport {
    let region_exit = (1..values.len()).find(|&l| in_region[l - 1] && !in_region[l]);
    let mut checked = 0;
    let mut first_violation = None;
    for l in 1..values.len() {
        let mut spent = 0.0;
        for k in (0..l).rev() {
            if !in_region[k] {
                break;
            }
            spent += costs[k];
            checked += 1;
            if first_violation.is_none() && !(values[l] <= values[k] - (1.0 - eta) * spent + DECAY_SLACK) {
                first_violation = Some(l);
            }
        }
    }
    DecayReport {
        checked,
        first_violation,
        region_exit,
        in_region: in_region.iter().filter(|&&r| r).count(),
        holds: first_violation.is_none(),
    }
}
