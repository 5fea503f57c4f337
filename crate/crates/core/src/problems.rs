//! Control problems: dynamics, stage costs, domains and targets, plus the
//! four built-in instances.

use std::f64::consts::PI;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoxDomain, GeoTransform, NodeSet, ObstacleMask};

/// Discrete-time dynamics and stage cost of a control system.
pub trait Dynamics: Send + Sync + fmt::Debug {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    /// Writes `f(x, u)` into `out`.
    fn step_into(&self, x: &[f64], u: &[f64], out: &mut [f64]);
    fn cost(&self, x: &[f64], u: &[f64]) -> f64;
}

/// How images leaving the bounding box are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionMode {
    /// Images outside the box stay there (and count as having left the domain).
    #[default]
    None,
    /// Images are clamped componentwise into the box.
    Clamp,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TargetSet {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

impl TargetSet {
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            TargetSet::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(v, (l, u))| *v >= *l && *v <= *u),
            TargetSet::Ball { center, radius } => {
                crate::geometry::distance(x, center) <= *radius
            }
        }
    }

    /// Center of the box or ball.
    pub fn center(&self) -> Vec<f64> {
        match self {
            TargetSet::Box { lower, upper } => lower.iter().zip(upper).map(|(l, u)| 0.5 * (l + u)).collect(),
            TargetSet::Ball { center, .. } => center.clone(),
        }
    }

    fn intersects_box(&self, b: &BoxDomain) -> bool {
        match self {
            TargetSet::Box { lower, upper } => (0..b.dim())
                .all(|d| lower[d] <= b.upper()[d] && upper[d] >= b.lower()[d]),
            TargetSet::Ball { center, radius } => {
                let mut nearest = center.clone();
                b.clamp(&mut nearest);
                crate::geometry::distance(&nearest, center) <= *radius
            }
        }
    }

    fn centered_box(center: &[f64], halfwidth: &[f64]) -> Self {
        TargetSet::Box {
            lower: center.iter().zip(halfwidth).map(|(c, h)| c - h).collect(),
            upper: center.iter().zip(halfwidth).map(|(c, h)| c + h).collect(),
        }
    }
}

/// State domain: a bounding box, optionally restricted by an obstacle mask.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDomain {
    pub bounds: BoxDomain,
    pub mask: Option<ObstacleMask>,
}

impl StateDomain {
    pub fn contains(&self, x: &[f64]) -> bool {
        self.bounds.contains(x) && self.mask.as_ref().map_or(true, |m| m.is_admissible(x))
    }
}

/// A control problem with a finite control sample.
#[derive(Debug)]
pub struct ControlProblem {
    name: String,
    dynamics: Box<dyn Dynamics>,
    controls: Vec<f64>,
    domain: StateDomain,
    target: TargetSet,
    projection: ProjectionMode,
    default_grid: Vec<usize>,
}

impl ControlProblem {
    pub fn new(
        name: impl Into<String>,
        dynamics: Box<dyn Dynamics>,
        controls: Vec<f64>,
        domain: StateDomain,
        target: TargetSet,
        projection: ProjectionMode,
        default_grid: Vec<usize>,
    ) -> Result<Self> {
        let (s, d) = (dynamics.state_dim(), dynamics.control_dim());
        if controls.is_empty() || controls.len() % d != 0 {
            return Err(Error::Config("control set must be nonempty".into()));
        }
        if domain.bounds.dim() != s {
            return Err(Error::Config(format!(
                "domain has dimension {} but the state has {s}",
                domain.bounds.dim()
            )));
        }
        if !target.intersects_box(&domain.bounds) {
            return Err(Error::Config("target set does not meet the domain".into()));
        }
        Ok(Self {
            name: name.into(),
            dynamics,
            controls,
            domain,
            target,
            projection,
            default_grid,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn control_dim(&self) -> usize {
        self.dynamics.control_dim()
    }

    pub fn n_controls(&self) -> usize {
        self.controls.len() / self.control_dim()
    }

    pub fn control(&self, j: usize) -> &[f64] {
        let d = self.control_dim();
        &self.controls[j * d..(j + 1) * d]
    }

    pub fn controls(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.controls.chunks_exact(self.control_dim())
    }

    pub fn domain(&self) -> &StateDomain {
        &self.domain
    }

    pub fn bounds(&self) -> &BoxDomain {
        &self.domain.bounds
    }

    pub fn mask(&self) -> Option<&ObstacleMask> {
        self.domain.mask.as_ref()
    }

    pub fn target(&self) -> &TargetSet {
        &self.target
    }

    pub fn projection(&self) -> ProjectionMode {
        self.projection
    }

    /// Grid resolution the instance uses unless overridden.
    pub fn default_grid(&self) -> &[usize] {
        &self.default_grid
    }

    pub fn dynamics(&self) -> &dyn Dynamics {
        self.dynamics.as_ref()
    }

    /// Applies the dynamics (and the projection, if enabled).
    pub fn step_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        self.dynamics.step_into(x, u, out);
        if self.projection == ProjectionMode::Clamp && out.iter().all(|v| v.is_finite()) {
            self.domain.bounds.clamp(out);
        }
    }

    pub fn step(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.step_into(x, u, &mut out);
        out
    }

    pub fn cost(&self, x: &[f64], u: &[f64]) -> f64 {
        self.dynamics.cost(x, u)
    }

    /// Stage cost, rejecting negative or non-finite values.
    pub fn checked_cost(&self, x: &[f64], u: &[f64]) -> Result<f64> {
        let c = self.cost(x, u);
        if c >= 0.0 && c.is_finite() {
            Ok(c)
        } else {
            Err(Error::Invariant(format!("stage cost {c} at x = {x:?}, u = {u:?}")))
        }
    }

    pub fn in_target(&self, x: &[f64]) -> bool {
        self.target.contains(x)
    }

    pub fn in_domain(&self, x: &[f64]) -> bool {
        self.domain.contains(x)
    }

    /// Smallest stage cost over the non-target nodes and all controls.
    /// Infinite when every node is a target node.
    pub fn delta_estimate(&self, nodes: &NodeSet) -> f64 {
        use rayon::prelude::*;
        (0..nodes.len())
            .into_par_iter()
            .filter(|&i| !self.in_target(nodes.point(i)))
            .map(|i| {
                self.controls()
                    .map(|u| self.cost(nodes.point(i), u))
                    .fold(f64::INFINITY, f64::min)
            })
            .reduce(|| f64::INFINITY, f64::min)
    }
}

/// Closed-loop (or open-loop) state sequence with the applied controls and
/// stage costs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub costs: Vec<f64>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.controls.len()
    }

    pub fn total_cost(&self) -> f64 {
        self.costs.iter().fold(0.0, |a, c| a + c)
    }
}

/// `count` equally spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![lo],
        n => (0..n)
            .map(|j| if j == n - 1 { hi } else { lo + (hi - lo) * j as f64 / (n - 1) as f64 })
            .collect(),
    }
}

/// Dynamics in coordinates affinely rescaled from a box onto `[-1, 1]^d`.
#[derive(Debug, Clone)]
pub struct Normalized<D> {
    pub inner: D,
    center: Vec<f64>,
    radius: Vec<f64>,
}

impl<D: Dynamics> Normalized<D> {
    pub fn new(inner: D, lower: &[f64], upper: &[f64]) -> Self {
        Self {
            inner,
            center: lower.iter().zip(upper).map(|(l, u)| 0.5 * (l + u)).collect(),
            radius: lower.iter().zip(upper).map(|(l, u)| 0.5 * (u - l)).collect(),
        }
    }

    pub fn to_physical(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.center).zip(&self.radius).map(|((z, c), r)| c + r * z).collect()
    }

    pub fn to_normalized(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.center).zip(&self.radius).map(|((x, c), r)| (x - c) / r).collect()
    }
}

impl<D: Dynamics> Dynamics for Normalized<D> {
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }
    fn control_dim(&self) -> usize {
        self.inner.control_dim()
    }
    fn step_into(&self, z: &[f64], u: &[f64], out: &mut [f64]) {
        let x = self.to_physical(z);
        self.inner.step_into(&x, u, out);
        for ((o, c), r) in out.iter_mut().zip(&self.center).zip(&self.radius) {
            *o = (*o - c) / r;
        }
    }
    fn cost(&self, z: &[f64], u: &[f64]) -> f64 {
        self.inner.cost(&self.to_physical(z), u)
    }
}

fn explicit_euler<F: Fn(&[f64], &mut [f64])>(x: &[f64], dt: f64, substeps: usize, rhs: F, out: &mut [f64]) {
    let h = dt / substeps as f64;
    out.copy_from_slice(x);
    let mut dx = vec![0.0; x.len()];
    for _ in 0..substeps {
        rhs(out, &mut dx);
        for (o, d) in out.iter_mut().zip(&dx) {
            *o += h * d;
        }
    }
}

// --- linear1d ---------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Linear1dParams {
    /// Growth factor in `f(x, u) = a u x` and cost `c(x, u) = a x`.
    pub a: f64,
    /// Resolution: nodes `{0, 1/k, ..., 1}` and target `[0, 1/(2k)]`.
    pub k: usize,
    pub u_min: f64,
    pub u_max: f64,
    pub u_count: usize,
    /// Upper end of the target interval; defaults to `1/(2k)`.
    pub target_upper: Option<f64>,
    pub projection: ProjectionMode,
}

impl Default for Linear1dParams {
    fn default() -> Self {
        Self {
            a: 0.8,
            k: 10,
            u_min: -1.0,
            u_max: 1.0,
            u_count: 21,
            target_upper: None,
            projection: ProjectionMode::None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Linear1d {
    pub a: f64,
}

impl Dynamics for Linear1d {
    fn state_dim(&self) -> usize {
        1
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn step_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = self.a * u[0] * x[0];
    }
    fn cost(&self, x: &[f64], _u: &[f64]) -> f64 {
        self.a * x[0]
    }
}

impl Linear1dParams {
    pub fn build(&self) -> Result<ControlProblem> {
        if self.k == 0 {
            return Err(Error::Config("linear1d: k must be positive".into()));
        }
        if self.u_count == 0 {
            return Err(Error::Config("linear1d: empty control set".into()));
        }
        let upper = self.target_upper.unwrap_or(1.0 / (2.0 * self.k as f64));
        ControlProblem::new(
            "linear1d",
            Box::new(Linear1d { a: self.a }),
            linspace(self.u_min, self.u_max, self.u_count),
            StateDomain { bounds: BoxDomain::new(vec![0.0], vec![1.0])?, mask: None },
            TargetSet::Box { lower: vec![0.0], upper: vec![upper] },
            self.projection,
            vec![self.k + 1],
        )
    }
}

// --- shortest path ------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShortestPathParams {
    /// Distance travelled per step.
    pub step: f64,
    pub directions: usize,
    /// Constant stage cost.
    pub unit_cost: f64,
    pub lower: [f64; 2],
    pub upper: [f64; 2],
    pub target_center: [f64; 2],
    pub target_halfwidth: f64,
    /// PGM obstacle map; bright pixels are admissible.
    pub map: Option<PathBuf>,
    /// Pixel placement; defaults to stretching the map over `[lower, upper]`.
    pub geo: Option<GeoTransform>,
    pub projection: ProjectionMode,
}

impl Default for ShortestPathParams {
    fn default() -> Self {
        Self {
            step: 0.1,
            directions: 20,
            unit_cost: 1.0,
            lower: [-10.0, -10.0],
            upper: [10.0, 10.0],
            target_center: [-4.0, 4.0],
            target_halfwidth: 0.004,
            map: None,
            geo: None,
            projection: ProjectionMode::None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ShortestPath {
    pub step: f64,
    pub unit_cost: f64,
}

impl Dynamics for ShortestPath {
    fn state_dim(&self) -> usize {
        2
    }
    fn control_dim(&self) -> usize {
        2
    }
    fn step_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = x[0] + self.step * u[0];
        out[1] = x[1] + self.step * u[1];
    }
    fn cost(&self, _x: &[f64], _u: &[f64]) -> f64 {
        self.unit_cost
    }
}

impl ShortestPathParams {
    pub fn build(&self) -> Result<ControlProblem> {
        if self.directions == 0 {
            return Err(Error::Config("shortest_path: empty control set".into()));
        }
        let mask = match &self.map {
            Some(path) => {
                let bytes = std::fs::read(path)?;
                Some(ObstacleMask::from_pgm_bytes(&bytes, self.geo, (self.lower, self.upper))?)
            }
            None => None,
        };
        let grid = match &mask {
            Some(m) => vec![m.width(), m.height()],
            None => vec![201, 201],
        };
        let controls = (0..self.directions)
            .flat_map(|j| {
                let t = 2.0 * PI * j as f64 / self.directions as f64;
                [t.cos(), t.sin()]
            })
            .collect();
        ControlProblem::new(
            "shortest_path",
            Box::new(ShortestPath { step: self.step, unit_cost: self.unit_cost }),
            controls,
            StateDomain { bounds: BoxDomain::new(self.lower.to_vec(), self.upper.to_vec())?, mask },
            TargetSet::centered_box(&self.target_center, &[self.target_halfwidth; 2]),
            self.projection,
            grid,
        )
    }
}

// --- inverted pendulum on a cart ------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PendulumParams {
    pub cart_mass: f64,
    pub pendulum_mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub dt: f64,
    pub substeps: usize,
    pub q_angle: f64,
    pub q_rate: f64,
    pub r_control: f64,
    pub lower: [f64; 2],
    pub upper: [f64; 2],
    pub u_max: f64,
    pub u_count: usize,
    pub target_halfwidth: [f64; 2],
    pub projection: ProjectionMode,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            cart_mass: 8.0,
            pendulum_mass: 2.0,
            length: 0.5,
            gravity: 9.8,
            dt: 0.1,
            substeps: 1,
            q_angle: 0.1,
            q_rate: 0.05,
            r_control: 0.01,
            lower: [-8.0, -10.0],
            upper: [8.0, 10.0],
            u_max: 128.0,
            u_count: 33,
            target_halfwidth: [0.1, 0.1],
            projection: ProjectionMode::None,
        }
    }
}

/// Planar inverted pendulum on a cart; state `(angle, angular rate)`,
/// control is the horizontal force on the cart.
#[derive(Debug, Clone)]
pub struct Pendulum {
    pub mass_ratio: f64,
    pub pendulum_mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub dt: f64,
    pub substeps: usize,
    pub q_angle: f64,
    pub q_rate: f64,
    pub r_control: f64,
}

impl Pendulum {
    /// Angular acceleration of the cart-pole model with the 4/3 factor of the
    /// uniform rod multiplying the acceleration term.
    pub fn angular_acceleration(&self, angle: f64, rate: f64, u: f64) -> f64 {
        let mr = self.mass_ratio;
        let (s, c) = angle.sin_cos();
        let num = self.gravity / self.length * s
            - 0.5 * mr * rate * rate * (2.0 * angle).sin()
            - mr / (self.pendulum_mass * self.length) * c * u;
        num / (4.0 / 3.0 - mr * c * c)
    }
}

impl Dynamics for Pendulum {
    fn state_dim(&self) -> usize {
        2
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn step_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        let u = u[0];
        explicit_euler(
            x,
            self.dt,
            self.substeps,
            |y, dy| {
                dy[0] = y[1];
                dy[1] = self.angular_acceleration(y[0], y[1], u);
            },
            out,
        );
    }
    fn cost(&self, x: &[f64], u: &[f64]) -> f64 {
        0.5 * (self.q_angle * x[0] * x[0] + self.q_rate * x[1] * x[1] + self.r_control * u[0] * u[0])
    }
}

impl PendulumParams {
    pub fn build(&self) -> Result<ControlProblem> {
        if self.u_count == 0 {
            return Err(Error::Config("pendulum: empty control set".into()));
        }
        if !(self.dt > 0.0) || self.substeps == 0 {
            return Err(Error::Config("pendulum: dt and substeps must be positive".into()));
        }
        let m = self.pendulum_mass;
        let model = Pendulum {
            mass_ratio: m / (m + self.cart_mass),
            pendulum_mass: m,
            length: self.length,
            gravity: self.gravity,
            dt: self.dt,
            substeps: self.substeps,
            q_angle: self.q_angle,
            q_rate: self.q_rate,
            r_control: self.r_control,
        };
        ControlProblem::new(
            "pendulum",
            Box::new(model),
            linspace(-self.u_max, self.u_max, self.u_count),
            StateDomain { bounds: BoxDomain::new(self.lower.to_vec(), self.upper.to_vec())?, mask: None },
            TargetSet::centered_box(&[0.0, 0.0], &self.target_halfwidth),
            self.projection,
            vec![100, 100],
        )
    }
}

// --- magnetic wheel ---------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MagneticWheelParams {
    /// Target gap.
    pub s0: f64,
    pub inductance: f64,
    pub magnet_mass: f64,
    /// Ratio of total mass to magnet mass.
    pub mass_ratio: f64,
    pub resistance: f64,
    pub leakage_inductance: f64,
    pub gravity: f64,
    pub dt: f64,
    pub substeps: usize,
    pub q_gap: f64,
    pub q_speed: f64,
    pub r_voltage: f64,
    /// Penalize deviation from the equilibrium gap and voltage instead of
    /// their absolute values.
    pub shifted_cost: bool,
    pub u_scale: f64,
    pub u_count: usize,
    pub gap_range: [f64; 2],
    pub speed_halfwidth: f64,
    pub current_halfwidth: f64,
    pub target_halfwidth: [f64; 3],
    /// Work in coordinates mapped affinely from the state box onto
    /// `[-1, 1]^3`; the kernel then sees comparable scales on every axis.
    pub normalize: bool,
    pub projection: ProjectionMode,
}

impl Default for MagneticWheelParams {
    fn default() -> Self {
        Self {
            s0: 0.01,
            inductance: 1.0,
            magnet_mass: 500.0,
            mass_ratio: 3.0,
            resistance: 4.0,
            leakage_inductance: 0.15,
            gravity: 9.81,
            dt: 0.01,
            substeps: 5,
            q_gap: 100.0,
            q_speed: 1.0,
            r_voltage: 0.002,
            shifted_cost: false,
            u_scale: 6000.0,
            u_count: 201,
            gap_range: [0.0, 0.02],
            speed_halfwidth: 4.0,
            current_halfwidth: 80.0,
            target_halfwidth: [0.001, 0.1, 2.0],
            normalize: true,
            projection: ProjectionMode::None,
        }
    }
}

/// Magnetic levitation wheel; state `(gap, gap rate, current)`, control is
/// the applied voltage.
#[derive(Debug, Clone)]
pub struct MagneticWheel {
    pub s0: f64,
    /// `C = L_N * 2 * s0`.
    pub coupling: f64,
    pub magnet_mass: f64,
    pub mass_ratio: f64,
    pub resistance: f64,
    pub leakage_inductance: f64,
    pub gravity: f64,
    pub dt: f64,
    pub substeps: usize,
    pub q_gap: f64,
    pub q_speed: f64,
    pub r_voltage: f64,
    pub shifted_cost: bool,
}

impl MagneticWheel {
    fn rhs(&self, x: &[f64], u: f64, dx: &mut [f64]) {
        let (s, v, j) = (x[0], x[1], x[2]);
        let c = self.coupling;
        dx[0] = v;
        dx[1] = c * j * j / (self.magnet_mass * 4.0 * s * s) - self.mass_ratio * self.gravity;
        dx[2] = (-self.resistance * j + c / (2.0 * s * s) * j * v + u)
            / (self.leakage_inductance + c / (2.0 * s));
    }

    /// Equilibrium state at the target gap and the voltage holding it.
    pub fn equilibrium(&self) -> ([f64; 3], f64) {
        let current = (self.mass_ratio * self.gravity * self.magnet_mass * 4.0 * self.s0 * self.s0
            / self.coupling)
            .sqrt();
        ([self.s0, 0.0, current], self.resistance * current)
    }
}

impl Dynamics for MagneticWheel {
    fn state_dim(&self) -> usize {
        3
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn step_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        let u = u[0];
        explicit_euler(x, self.dt, self.substeps, |y, dy| self.rhs(y, u, dy), out);
    }
    fn cost(&self, x: &[f64], u: &[f64]) -> f64 {
        let (gap, volt) = if self.shifted_cost {
            let (eq, u_eq) = self.equilibrium();
            (x[0] - eq[0], u[0] - u_eq)
        } else {
            (x[0], u[0])
        };
        0.5 * (self.q_gap * gap * gap + self.q_speed * x[1] * x[1] + self.r_voltage * volt * volt)
    }
}

impl MagneticWheelParams {
    pub fn model(&self) -> MagneticWheel {
        MagneticWheel {
            s0: self.s0,
            coupling: self.inductance * 2.0 * self.s0,
            magnet_mass: self.magnet_mass,
            mass_ratio: self.mass_ratio,
            resistance: self.resistance,
            leakage_inductance: self.leakage_inductance,
            gravity: self.gravity,
            dt: self.dt,
            substeps: self.substeps,
            q_gap: self.q_gap,
            q_speed: self.q_speed,
            r_voltage: self.r_voltage,
            shifted_cost: self.shifted_cost,
        }
    }

    pub fn build(&self) -> Result<ControlProblem> {
        if self.u_count == 0 {
            return Err(Error::Config("magnetic_wheel: empty control set".into()));
        }
        if !(self.dt > 0.0) || self.substeps == 0 {
            return Err(Error::Config("magnetic_wheel: dt and substeps must be positive".into()));
        }
        let model = self.model();
        let (eq, _) = model.equilibrium();
        let controls = linspace(-1.0, 1.0, self.u_count)
            .into_iter()
            .map(|u| self.u_scale * u * u * u)
            .collect();
        let lower = vec![self.gap_range[0], -self.speed_halfwidth, eq[2] - self.current_halfwidth];
        let upper = vec![self.gap_range[1], self.speed_halfwidth, eq[2] + self.current_halfwidth];
        let target = TargetSet::centered_box(&eq, &self.target_halfwidth);
        let (dynamics, bounds, target): (Box<dyn Dynamics>, _, _) = if self.normalize {
            let n = Normalized::new(model, &lower, &upper);
            let TargetSet::Box { lower: tl, upper: tu } = &target else { unreachable!() };
            let target = TargetSet::Box { lower: n.to_normalized(tl), upper: n.to_normalized(tu) };
            (Box::new(n), BoxDomain::new(vec![-1.0; 3], vec![1.0; 3])?, target)
        } else {
            (Box::new(model), BoxDomain::new(lower, upper)?, target)
        };
        ControlProblem::new(
            "magnetic_wheel",
            dynamics,
            controls,
            StateDomain { bounds, mask: None },
            target,
            self.projection,
            vec![30, 30, 30],
        )
    }

    /// Maps a physical state to the problem's coordinates.
    pub fn to_state(&self, x: &[f64]) -> Vec<f64> {
        if !self.normalize {
            return x.to_vec();
        }
        let (eq, _) = self.model().equilibrium();
        let lower = [self.gap_range[0], -self.speed_halfwidth, eq[2] - self.current_halfwidth];
        let upper = [self.gap_range[1], self.speed_halfwidth, eq[2] + self.current_halfwidth];
        Normalized::new(self.model(), &lower, &upper).to_normalized(x)
    }
}

// --- registry -------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemName {
    Linear1d,
    ShortestPath,
    Pendulum,
    MagneticWheel,
}

impl std::str::FromStr for ProblemName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown problem {s:?}")))
    }
}

/// Builds a named instance, applying `overrides` (a JSON object whose keys
/// are the instance's parameter names) on top of the defaults.
pub fn make_problem(name: ProblemName, overrides: &serde_json::Value) -> Result<ControlProblem> {
    fn params<T: serde::de::DeserializeOwned + Default>(v: &serde_json::Value) -> Result<T> {
        if v.is_null() {
            return Ok(T::default());
        }
        serde_json::from_value(v.clone()).map_err(|e| Error::Config(e.to_string()))
    }
    match name {
        ProblemName::Linear1d => params::<Linear1dParams>(overrides)?.build(),
        ProblemName::ShortestPath => params::<ShortestPathParams>(overrides)?.build(),
        ProblemName::Pendulum => params::<PendulumParams>(overrides)?.build(),
        ProblemName::MagneticWheel => params::<MagneticWheelParams>(overrides)?.build(),
    }
}
