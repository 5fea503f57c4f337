//! Run configuration: a JSON document with dotted-key overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::kernels::ShapeKind;
use crate::problems::ProblemName;
use crate::solver::{DEFAULT_FLOOR, DEFAULT_MAX_ITER, DEFAULT_TOL};

/// Problem name plus parameter overrides, written as one flat object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemConfig {
    pub name: ProblemName,
    #[serde(flatten)]
    pub overrides: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    pub kind: ShapeKind,
    pub sigma: Option<f64>,
    /// Stationary scaling `sigma = c_sigma / h` with `h` the fill distance.
    pub c_sigma: Option<f64>,
    /// Choose `sigma` so each support holds about this many other grid nodes.
    pub overlap_count: Option<f64>,
}

/// How the shape parameter is determined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaRule {
    Fixed(f64),
    Stationary(f64),
    Overlap(f64),
}

impl KernelConfig {
    pub fn rule(&self) -> Result<SigmaRule> {
        match (self.sigma, self.c_sigma, self.overlap_count) {
            (Some(s), None, None) => Ok(SigmaRule::Fixed(s)),
            (None, Some(c), None) => Ok(SigmaRule::Stationary(c)),
            (None, None, Some(n)) => Ok(SigmaRule::Overlap(n)),
            _ => Err(Error::Config(
                "kernel needs exactly one of sigma, c_sigma, overlap_count".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_iter: DEFAULT_MAX_ITER }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeedbackConfig {
    pub eta: f64,
    pub floor: f64,
    pub x0: Option<Vec<f64>>,
    pub steps: usize,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        Self { eta: 1.0, floor: DEFAULT_FLOOR, x0: None, steps: 80 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorMetric {
    /// `max |V_k - V_ref|` over the nodes of each member.
    Value,
    /// `max |v_k - v_ref| / max |v_ref|` in transformed values.
    Relative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    /// Solve on the `reference_k` resolution.
    Solve,
    /// Closed-form value (linear1d only).
    Analytic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub k_list: Vec<usize>,
    pub reference: ReferenceKind,
    pub reference_k: Option<usize>,
    pub metric: Option<ErrorMetric>,
    /// Directory for cached reference solutions; defaults to
    /// `<output_dir>/cache`.
    pub cache_dir: Option<PathBuf>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            k_list: vec![],
            reference: ReferenceKind::Solve,
            reference_k: None,
            metric: None,
            cache_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    /// Nodes per axis; the problem's default when absent.
    #[serde(default)]
    pub grid: Option<Vec<usize>>,
    /// Add the target center as a node when no grid node lies in the target.
    #[serde(default = "default_true")]
    pub anchor_target: bool,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub feedback: FeedbackConfig,
    #[serde(default)]
    pub study: StudyConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Seed for randomized test-function studies.
    #[serde(default)]
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    /// Parses `json`, applies `key=value` overrides (dotted keys, values
    /// parsed as JSON and taken as strings otherwise) and validates.
    /// Relative problem paths are resolved against `base`.
    pub fn from_json(json: &str, overrides: &[String], base: Option<&Path>) -> Result<Self> {
        let mut doc: Value = serde_json::from_str(json).map_err(|e| Error::Config(format!("config: {e}")))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let mut cfg: RunConfig =
            serde_json::from_value(doc).map_err(|e| Error::Config(format!("config: {e}")))?;
        if let Some(base) = base {
            if let Some(Value::String(map)) = cfg.problem.overrides.get("map") {
                let path = Path::new(map);
                if path.is_relative() {
                    let joined = base.join(path).to_string_lossy().into_owned();
                    cfg.problem.overrides.insert("map".into(), Value::String(joined));
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text, overrides, path.parent())
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.rule()?;
        if let Some(g) = &self.grid {
            if g.is_empty() || g.contains(&0) {
                return Err(Error::Config("grid counts must be positive".into()));
            }
        }
        if !(self.solver.tol > 0.0) {
            return Err(Error::Config("solver.tol must be positive".into()));
        }
        if !(self.feedback.eta > 0.0 && self.feedback.eta <= 1.0) {
            return Err(Error::Config("feedback.eta must lie in (0, 1]".into()));
        }
        if !(self.feedback.floor > 0.0 && self.feedback.floor < 1.0) {
            return Err(Error::Config("feedback.floor must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Copy with the problem's resolution replaced by `k`: the `k`
    /// parameter for linear1d, `k` nodes per axis otherwise.
    pub fn at_resolution(&self, k: usize, dim: usize) -> Self {
        let mut c = self.clone();
        if c.problem.name == ProblemName::Linear1d {
            c.problem.overrides.insert("k".into(), Value::from(k));
            c.grid = None;
        } else {
            c.grid = Some(vec![k; dim]);
        }
        c
    }
}

/// Sets `doc[a][b]... = value` for an override `a.b...=value`.
pub fn apply_override(doc: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not of the form key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(Error::Config(format!("empty key segment in {key:?}")));
        }
        let obj = match cur {
            Value::Object(o) => o,
            Value::Null => {
                *cur = Value::Object(Map::new());
                cur.as_object_mut().expect("just created")
            }
            _ => return Err(Error::Config(format!("{key:?}: {part:?} is not inside an object"))),
        };
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!("split yields at least one segment")
}
