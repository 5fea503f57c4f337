//! Node sets, domains and distance-based queries.

mod mask;
mod neighbors;
pub mod pgm;

pub use mask::{GeoTransform, ObstacleMask};
pub use neighbors::{radius_neighbors, CellIndex, NeighborList};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `[lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::Domain(format!(
                "box bounds must be nonempty and of equal length ({} vs {})",
                lower.len(),
                upper.len()
            )));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(Error::Domain(format!(
                "box requires lower < upper on every axis: {lower:?} / {upper:?}"
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Closed-box membership. Non-finite points are never inside.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *v >= *l && *v <= *u)
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (v, (l, u)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*l, *u);
        }
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }
}

/// Tensor-grid provenance of a node set.
#[derive(Debug, Clone, PartialEq)]
pub struct GridInfo {
    pub domain: BoxDomain,
    pub counts: Vec<usize>,
    pub masked: bool,
}

impl GridInfo {
    /// Per-axis node spacing; axes with a single node report the box width.
    pub fn spacing(&self) -> Vec<f64> {
        self.counts
            .iter()
            .enumerate()
            .map(|(d, &c)| {
                if c > 1 {
                    self.domain.extent(d) / (c - 1) as f64
                } else {
                    self.domain.extent(d)
                }
            })
            .collect()
    }
}

/// A finite set of nodes in `R^dim`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSet {
    dim: usize,
    coords: Vec<f64>,
    grid: Option<GridInfo>,
}

impl NodeSet {
    pub fn from_flat(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || coords.len() % dim != 0 {
            return Err(Error::Domain(format!(
                "coordinate buffer of length {} does not hold {dim}-dimensional points",
                coords.len()
            )));
        }
        if coords.is_empty() {
            return Err(Error::EmptyNodeSet);
        }
        Ok(Self { dim, coords, grid: None })
    }

    pub fn from_points<P: AsRef<[f64]>>(points: &[P]) -> Result<Self> {
        let dim = points.first().ok_or(Error::EmptyNodeSet)?.as_ref().len();
        let mut coords = Vec::with_capacity(points.len() * dim);
        for p in points {
            let p = p.as_ref();
            if p.len() != dim {
                return Err(Error::Shape { expected: dim, actual: p.len() });
            }
            coords.extend_from_slice(p);
        }
        Self::from_flat(dim, coords)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn grid(&self) -> Option<&GridInfo> {
        self.grid.as_ref()
    }
}

/// Equidistant tensor grid over `domain` including the box endpoints. Axes
/// with a single node place it at the midpoint. Nodes are ordered
/// lexicographically with the first axis varying slowest. With a mask, only
/// nodes whose containing pixel is admissible are kept.
pub fn grid_nodes(
    domain: &BoxDomain,
    counts: &[usize],
    mask: Option<&ObstacleMask>,
) -> Result<NodeSet> {
    let dim = domain.dim();
    if counts.len() != dim {
        return Err(Error::Shape { expected: dim, actual: counts.len() });
    }
    if counts.iter().any(|&c| c == 0) {
        return Err(Error::Domain("grid counts must be positive".into()));
    }
    if mask.is_some() && dim != 2 {
        return Err(Error::Domain("obstacle masks require a 2-dimensional domain".into()));
    }
    let axes: Vec<Vec<f64>> = (0..dim)
        .map(|d| {
            let (lo, hi, c) = (domain.lower[d], domain.upper[d], counts[d]);
            if c == 1 {
                vec![0.5 * (lo + hi)]
            } else {
                (0..c)
                    .map(|i| {
                        if i == c - 1 {
                            hi
                        } else {
                            lo + (hi - lo) * i as f64 / (c - 1) as f64
                        }
                    })
                    .collect()
            }
        })
        .collect();

    let total: usize = counts.iter().product();
    let mut coords = Vec::with_capacity(total * dim);
    let mut idx = vec![0usize; dim];
    let mut p = vec![0.0; dim];
    for _ in 0..total {
        for d in 0..dim {
            p[d] = axes[d][idx[d]];
        }
        if mask.map_or(true, |m| m.is_admissible(&p)) {
            coords.extend_from_slice(&p);
        }
        for d in (0..dim).rev() {
            idx[d] += 1;
            if idx[d] < counts[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    if coords.is_empty() {
        return Err(Error::EmptyNodeSet);
    }
    Ok(NodeSet {
        dim,
        coords,
        grid: Some(GridInfo {
            domain: domain.clone(),
            counts: counts.to_vec(),
            masked: mask.is_some(),
        }),
    })
}

#[inline]
pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Default oversampling factor for sampled fill distances.
pub const FILL_SAMPLE_FACTOR: usize = 4;

/// Fill distance of `nodes` in `domain` (optionally restricted to the
/// admissible part of `mask`).
///
/// Unmasked tensor grids over the same box use the closed form (half the
/// cell diagonal). Otherwise the box is sampled with `sample_factor` times
/// the node resolution per axis.
pub fn fill_distance(
    nodes: &NodeSet,
    domain: &BoxDomain,
    mask: Option<&ObstacleMask>,
    sample_factor: usize,
) -> Result<f64> {
    if nodes.is_empty() {
        return Err(Error::EmptyNodeSet);
    }
    if nodes.dim() != domain.dim() {
        return Err(Error::Shape { expected: domain.dim(), actual: nodes.dim() });
    }
    if let Some(g) = nodes.grid() {
        if !g.masked && mask.is_none() && g.domain == *domain {
            let h2: f64 = g
                .counts
                .iter()
                .enumerate()
                .map(|(d, &c)| {
                    let half = if c > 1 {
                        0.5 * domain.extent(d) / (c - 1) as f64
                    } else {
                        0.5 * domain.extent(d)
                    };
                    half * half
                })
                .sum();
            return Ok(h2.sqrt());
        }
    }

    let dim = domain.dim();
    let per_axis: Vec<usize> = match nodes.grid() {
        Some(g) => g.counts.iter().map(|&c| c.max(2) * sample_factor.max(1)).collect(),
        None => {
            let side = (nodes.len() as f64).powf(1.0 / dim as f64).ceil() as usize;
            vec![side.max(2) * sample_factor.max(1); dim]
        }
    };
    let samples = grid_nodes(domain, &per_axis, None)?;
    let index = CellIndex::for_nearest(nodes);
    use rayon::prelude::*;
    let h = samples
        .coords()
        .par_chunks_exact(dim)
        .filter(|p| mask.map_or(true, |m| m.is_admissible(p)))
        .map(|p| index.nearest(p).map_or(0.0, |(_, d)| d))
        .reduce(|| 0.0, f64::max);
    Ok(h)
}

/// Half of the smallest pairwise distance.
pub fn separation_distance(nodes: &NodeSet) -> Result<f64> {
    if nodes.len() < 2 {
        return Err(Error::Undefined(
            "separation distance needs at least two nodes".into(),
        ));
    }
    let index = CellIndex::for_nearest(nodes);
    use rayon::prelude::*;
    let min = (0..nodes.len())
        .into_par_iter()
        .map(|i| index.nearest_excluding(nodes.point(i), i).map_or(f64::INFINITY, |(_, d)| d))
        .reduce(|| f64::INFINITY, f64::min);
    Ok(0.5 * min)
}
