//! Uniform-cell bucketing for fixed-radius and nearest-neighbor queries.

use std::collections::HashMap;

use rayon::prelude::*;

use super::{distance, NodeSet};

/// Points bucketed into axis-aligned cells of equal edge length.
#[derive(Debug, Clone)]
pub struct CellIndex<'a> {
    points: &'a NodeSet,
    edge: f64,
    origin: Vec<f64>,
    cells: HashMap<Vec<i64>, Vec<usize>>,
    /// Inclusive range of occupied cell coordinates per axis.
    lo: Vec<i64>,
    hi: Vec<i64>,
}

impl<'a> CellIndex<'a> {
    /// Buckets `points` into cells of edge `edge` (must be positive and finite).
    pub fn new(points: &'a NodeSet, edge: f64) -> Self {
        assert!(edge > 0.0 && edge.is_finite(), "cell edge must be positive, got {edge}");
        let dim = points.dim();
        let mut origin = vec![f64::INFINITY; dim];
        for p in points.iter() {
            for (o, v) in origin.iter_mut().zip(p) {
                *o = o.min(*v);
            }
        }
        let mut index = Self {
            points,
            edge,
            origin,
            cells: HashMap::new(),
            lo: vec![i64::MAX; dim],
            hi: vec![i64::MIN; dim],
        };
        let mut key = vec![0i64; dim];
        for (i, p) in points.iter().enumerate() {
            index.cell_of(p, &mut key);
            for d in 0..dim {
                index.lo[d] = index.lo[d].min(key[d]);
                index.hi[d] = index.hi[d].max(key[d]);
            }
            index.cells.entry(key.clone()).or_default().push(i);
        }
        index
    }

    /// Index with an edge suited to nearest-neighbor queries (about one point
    /// per cell for evenly spread data).
    pub fn for_nearest(points: &'a NodeSet) -> Self {
        let dim = points.dim();
        let mut extent: f64 = 0.0;
        for d in 0..dim {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for p in points.iter() {
                lo = lo.min(p[d]);
                hi = hi.max(p[d]);
            }
            extent = extent.max(hi - lo);
        }
        let edge = extent / (points.len() as f64).powf(1.0 / dim as f64);
        Self::new(points, if edge > 0.0 && edge.is_finite() { edge } else { 1.0 })
    }

    pub fn points(&self) -> &'a NodeSet {
        self.points
    }

    pub fn edge(&self) -> f64 {
        self.edge
    }

    #[inline]
    fn cell_of(&self, p: &[f64], key: &mut [i64]) {
        for ((k, v), o) in key.iter_mut().zip(p).zip(&self.origin) {
            *k = ((v - o) / self.edge).floor() as i64;
        }
    }

    /// Calls `visit(j, d)` for every indexed point `j` within distance `r`
    /// of `q`, in unspecified order. Non-finite queries match nothing.
    pub fn for_each_within(&self, q: &[f64], r: f64, mut visit: impl FnMut(usize, f64)) {
        if q.iter().any(|v| !v.is_finite()) || !(r >= 0.0) {
            return;
        }
        let dim = self.points.dim();
        let reach = (r / self.edge).ceil() as i64;
        let mut center = vec![0i64; dim];
        self.cell_of(q, &mut center);
        let lo: Vec<i64> = (0..dim).map(|d| (center[d] - reach).max(self.lo[d])).collect();
        let hi: Vec<i64> = (0..dim).map(|d| (center[d] + reach).min(self.hi[d])).collect();
        if (0..dim).any(|d| lo[d] > hi[d]) {
            return;
        }
        let mut key = lo.clone();
        loop {
            if let Some(bucket) = self.cells.get(key.as_slice()) {
                for &j in bucket {
                    let dist = distance(q, self.points.point(j));
                    if dist <= r {
                        visit(j, dist);
                    }
                }
            }
            let mut d = dim;
            loop {
                if d == 0 {
                    return;
                }
                d -= 1;
                key[d] += 1;
                if key[d] <= hi[d] {
                    break;
                }
                key[d] = lo[d];
            }
        }
    }

    /// Neighbors of `q` within `r`, sorted by index.
    pub fn within(&self, q: &[f64], r: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        self.for_each_within(q, r, |j, d| out.push((j, d)));
        out.sort_unstable_by_key(|&(j, _)| j);
        out
    }

    /// Closest indexed point to `q`.
    pub fn nearest(&self, q: &[f64]) -> Option<(usize, f64)> {
        self.nearest_filtered(q, usize::MAX)
    }

    /// Closest indexed point to `q` other than `skip`.
    pub fn nearest_excluding(&self, q: &[f64], skip: usize) -> Option<(usize, f64)> {
        self.nearest_filtered(q, skip)
    }

    fn nearest_filtered(&self, q: &[f64], skip: usize) -> Option<(usize, f64)> {
        if q.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let dim = self.points.dim();
        let mut center = vec![0i64; dim];
        self.cell_of(q, &mut center);
        let max_ring = (0..dim)
            .map(|d| (center[d] - self.lo[d]).abs().max((self.hi[d] - center[d]).abs()))
            .max()
            .unwrap_or(0);
        let mut best: Option<(usize, f64)> = None;
        let mut key = vec![0i64; dim];
        for ring in 0..=max_ring {
            // Visit every cell at Chebyshev distance exactly `ring`.
            let side = 2 * ring + 1;
            let total = (side as u64).pow(dim as u32);
            for flat in 0..total {
                let mut rem = flat;
                let mut on_shell = false;
                for d in 0..dim {
                    let off = (rem % side as u64) as i64 - ring;
                    rem /= side as u64;
                    on_shell |= off.abs() == ring;
                    key[d] = center[d] + off;
                }
                if !on_shell {
                    continue;
                }
                if let Some(bucket) = self.cells.get(key.as_slice()) {
                    for &j in bucket {
                        if j == skip {
                            continue;
                        }
                        let dist = distance(q, self.points.point(j));
                        if best.map_or(true, |(bj, bd)| dist < bd || (dist == bd && j < bj)) {
                            best = Some((j, dist));
                        }
                    }
                }
            }
            // Unvisited points are at least `ring` whole cells away.
            if let Some((_, bd)) = best {
                if bd <= ring as f64 * self.edge {
                    break;
                }
            }
        }
        best
    }
}

/// Sparse row-major list of `(row, col, distance)` triples, rows in
/// ascending order and columns ascending within each row.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborList {
    pub row_offsets: Vec<usize>,
    pub cols: Vec<usize>,
    pub dists: Vec<f64>,
}

impl NeighborList {
    pub fn rows(&self) -> usize {
        self.row_offsets.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_offsets[i], self.row_offsets[i + 1]);
        (&self.cols[a..b], &self.dists[a..b])
    }

    /// All triples in `(i, j)` order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows()).flat_map(move |i| {
            let (c, d) = self.row(i);
            c.iter().zip(d).map(move |(&j, &dist)| (i, j, dist))
        })
    }

    pub(crate) fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let nnz = rows.iter().map(Vec::len).sum();
        let mut row_offsets = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::with_capacity(nnz);
        let mut dists = Vec::with_capacity(nnz);
        row_offsets.push(0);
        for row in rows {
            for (j, d) in row {
                cols.push(j);
                dists.push(d);
            }
            row_offsets.push(cols.len());
        }
        Self { row_offsets, cols, dists }
    }
}

/// All pairs `(i, j)` with `|a_i - b_j| <= r`.
pub fn radius_neighbors(a: &NodeSet, b: &NodeSet, r: f64) -> NeighborList {
    assert!(r > 0.0, "search radius must be positive");
    assert_eq!(a.dim(), b.dim(), "point sets must share a dimension");
    let index = CellIndex::new(b, r);
    let rows: Vec<Vec<(usize, f64)>> = (0..a.len())
        .into_par_iter()
        .map(|i| index.within(a.point(i), r))
        .collect();
    NeighborList::from_rows(rows)
}
