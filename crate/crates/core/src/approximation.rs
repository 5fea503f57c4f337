//! Shepard (constant moving least squares) evaluation matrices and dense
//! RBF interpolation.
//!
//! A Shepard matrix `A(Y)` has entries `psi_j(y_i) = w(x_j, y_i) / sum_l w(x_l, y_i)`
//! with radial weights `w(x, y) = phi(|x - y|)`. Every covered row is a set of
//! convex weights, so `A(Y) v` is monotone in `v` and never increases the
//! sup norm.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{CellIndex, NodeSet};
use crate::kernels::ShapeFunction;

/// Sparse row-stochastic matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct ShepardMatrix {
    cols: usize,
    row_offsets: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f64>,
    uncovered: Vec<bool>,
}

impl ShepardMatrix {
    /// Assembles `A(Y)` for the evaluation points in `points` (row-major,
    /// `nodes.dim()` coordinates per point) using a prebuilt node index.
    ///
    /// The index edge should be at least the kernel's assembly radius for
    /// good performance, but any edge gives correct results.
    pub fn assemble_with_index(index: &CellIndex<'_>, kernel: &ShapeFunction, points: &[f64]) -> Self {
        let nodes = index.points();
        let dim = nodes.dim();
        assert_eq!(points.len() % dim, 0, "evaluation buffer is not a multiple of the dimension");
        let radius = kernel.assembly_radius();
        let rows: Vec<(Vec<u32>, Vec<f64>)> = points
            .par_chunks_exact(dim)
            .map(|y| {
                let mut entries: Vec<(usize, f64)> = Vec::new();
                index.for_each_within(y, radius, |j, d| {
                    let w = kernel.assembly_weight(d);
                    if w > 0.0 {
                        entries.push((j, w));
                    }
                });
                entries.sort_unstable_by_key(|&(j, _)| j);
                let total: f64 = entries.iter().map(|&(_, w)| w).sum();
                if total > 0.0 {
                    (
                        entries.iter().map(|&(j, _)| j as u32).collect(),
                        entries.iter().map(|&(_, w)| w / total).collect(),
                    )
                } else {
                    (Vec::new(), Vec::new())
                }
            })
            .collect();
        Self::from_rows(nodes.len(), rows)
    }

    fn from_rows(cols: usize, rows: Vec<(Vec<u32>, Vec<f64>)>) -> Self {
        let nnz = rows.iter().map(|r| r.0.len()).sum();
        let mut row_offsets = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        let mut uncovered = Vec::with_capacity(rows.len());
        row_offsets.push(0);
        for (c, v) in rows {
            uncovered.push(c.is_empty());
            col_idx.extend(c);
            values.extend(v);
            row_offsets.push(col_idx.len());
        }
        Self { cols, row_offsets, col_idx, values, uncovered }
    }

    pub fn rows(&self) -> usize {
        self.uncovered.len()
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_uncovered(&self, row: usize) -> bool {
        self.uncovered[row]
    }

    pub fn uncovered_count(&self) -> usize {
        self.uncovered.iter().filter(|&&u| u).count()
    }

    /// Column indices and weights of one row, columns ascending.
    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.row_offsets[i], self.row_offsets[i + 1]);
        (&self.col_idx[a..b], &self.values[a..b])
    }

    #[inline]
    pub fn row_dot(&self, i: usize, v: &[f64]) -> f64 {
        let (c, w) = self.row(i);
        c.iter().zip(w).fold(0.0, |acc, (&j, &a)| acc + a * v[j as usize])
    }

    /// `A v`; uncovered rows evaluate to zero.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.rows()];
        self.apply_into(v, &mut out)?;
        Ok(out)
    }

    pub fn apply_into(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        if v.len() != self.cols {
            return Err(Error::Shape { expected: self.cols, actual: v.len() });
        }
        if out.len() != self.rows() {
            return Err(Error::Shape { expected: self.rows(), actual: out.len() });
        }
        out.par_iter_mut()
            .enumerate()
            .with_min_len(1024)
            .for_each(|(i, o)| *o = self.row_dot(i, v));
        Ok(())
    }

    /// Writes the matrix as `row col value` lines (1-based, like MatrixMarket
    /// coordinate data) preceded by a size line.
    pub fn write_coordinate<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {} {}", self.rows(), self.cols, self.nnz())?;
        for i in 0..self.rows() {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                writeln!(w, "{} {} {:.16e}", i + 1, j + 1, a)?;
            }
        }
        Ok(())
    }
}

/// Shepard evaluation matrix for `nodes` at the points `y` (row-major).
pub fn shepard_matrix(nodes: &NodeSet, kernel: &ShapeFunction, y: &[f64]) -> Result<ShepardMatrix> {
    if nodes.is_empty() {
        return Err(Error::EmptyNodeSet);
    }
    if y.len() % nodes.dim() != 0 {
        return Err(Error::Shape { expected: nodes.dim(), actual: y.len() % nodes.dim() });
    }
    let index = CellIndex::new(nodes, kernel.assembly_radius());
    Ok(ShepardMatrix::assemble_with_index(&index, kernel, y))
}

/// Condition estimates above this are rejected by [`Interpolant::new`].
pub const MAX_CONDITION: f64 = 1e12;

/// Dense RBF interpolant `sum_j c_j phi(|x - x_j|)` on a fixed node set.
#[derive(Debug, Clone)]
pub struct Interpolant<'a> {
    nodes: &'a NodeSet,
    kernel: ShapeFunction,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    condition: f64,
}

impl<'a> Interpolant<'a> {
    /// Factors the interpolation matrix `(phi(|x_i - x_j|))_{ij}`.
    pub fn new(nodes: &'a NodeSet, kernel: ShapeFunction) -> Result<Self> {
        let n = nodes.len();
        if n == 0 {
            return Err(Error::EmptyNodeSet);
        }
        let a = DMatrix::from_fn(n, n, |i, j| {
            kernel.eval_unchecked(crate::geometry::distance(nodes.point(i), nodes.point(j)))
        });
        // Symmetric: condition number from the eigenvalue spread.
        let eig = a.clone().symmetric_eigenvalues();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for &l in eig.iter() {
            lo = lo.min(l.abs());
            hi = hi.max(l.abs());
        }
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if !(condition <= MAX_CONDITION) {
            return Err(Error::Conditioning { estimate: condition });
        }
        Ok(Self { nodes, kernel, lu: a.lu(), condition })
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// Expansion coefficients reproducing `values` at the nodes.
    pub fn coefficients(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.nodes.len() {
            return Err(Error::Shape { expected: self.nodes.len(), actual: values.len() });
        }
        let rhs = DVector::from_column_slice(values);
        let c = self
            .lu
            .solve(&rhs)
            .ok_or(Error::Conditioning { estimate: f64::INFINITY })?;
        Ok(c.iter().copied().collect())
    }

    /// Sparse matrix of raw kernel values `phi(|y_i - x_j|)` (not normalized).
    pub fn evaluation_rows(&self, y: &[f64]) -> Vec<Vec<(u32, f64)>> {
        let dim = self.nodes.dim();
        let radius = self.kernel.assembly_radius();
        let index = CellIndex::new(self.nodes, radius.min(1e6));
        y.par_chunks_exact(dim)
            .map(|p| {
                let mut row: Vec<(u32, f64)> = Vec::new();
                index.for_each_within(p, radius, |j, d| {
                    let w = self.kernel.assembly_weight(d);
                    if w > 0.0 {
                        row.push((j as u32, w));
                    }
                });
                row.sort_unstable_by_key(|&(j, _)| j);
                row
            })
            .collect()
    }

    /// Interpolates `values` and evaluates the interpolant at `y`.
    pub fn evaluate(&self, values: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let c = self.coefficients(values)?;
        Ok(self
            .evaluation_rows(y)
            .iter()
            .map(|row| row.iter().fold(0.0, |acc, &(j, w)| acc + w * c[j as usize]))
            .collect())
    }
}

/// Dense RBF interpolation of `values` on `nodes`, evaluated at `y`.
pub fn interpolate(nodes: &NodeSet, kernel: &ShapeFunction, values: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    Interpolant::new(nodes, *kernel)?.evaluate(values, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{grid_nodes, BoxDomain};

    fn direct_row(nodes: &NodeSet, k: &ShapeFunction, y: &[f64]) -> Vec<f64> {
        let w: Vec<f64> = nodes
            .iter()
            .map(|x| {
                let d = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                k.eval(d).unwrap()
            })
            .collect();
        let s: f64 = w.iter().sum();
        w.iter().map(|v| if s > 0.0 { v / s } else { 0.0 }).collect()
    }

    fn dense(a: &ShepardMatrix) -> Vec<Vec<f64>> {
        (0..a.rows())
            .map(|i| {
                let mut r = vec![0.0; a.cols()];
                let (c, v) = a.row(i);
                for (&j, &w) in c.iter().zip(v) {
                    r[j as usize] = w;
                }
                r
            })
            .collect()
    }

    #[test]
    fn single_node_row_is_one() {
        let x = NodeSet::from_points(&[[0.0]]).unwrap();
        let k = ShapeFunction::wendland(1.0).unwrap();
        let a = shepard_matrix(&x, &k, &[0.3]).unwrap();
        assert_eq!(dense(&a), vec![vec![1.0]]);
    }

    #[test]
    fn symmetric_pair_splits_evenly() {
        let x = NodeSet::from_points(&[[0.0, 0.0], [1.0, 0.0]]).unwrap();
        let k = ShapeFunction::wendland(1.0).unwrap();
        let a = shepard_matrix(&x, &k, &[0.5, 0.0]).unwrap();
        assert_eq!(dense(&a), vec![vec![0.5, 0.5]]);
    }

    #[test]
    fn node_isolated_in_support_gives_unit_row() {
        let x = NodeSet::from_points(&[[0.0], [2.0], [4.0]]).unwrap();
        let k = ShapeFunction::wendland(1.0).unwrap();
        let a = shepard_matrix(&x, &k, &[2.0]).unwrap();
        assert_eq!(dense(&a), vec![vec![0.0, 1.0, 0.0]]);
    }

    #[test]
    fn uncovered_row_is_flagged_and_zero() {
        let x = NodeSet::from_points(&[[0.0]]).unwrap();
        let k = ShapeFunction::wendland(1.0).unwrap();
        let a = shepard_matrix(&x, &k, &[5.0, 0.5]).unwrap();
        assert!(a.is_uncovered(0) && !a.is_uncovered(1));
        assert_eq!(a.uncovered_count(), 1);
        assert_eq!(a.apply(&[3.0]).unwrap(), vec![0.0, 3.0]);
    }

    #[test]
    fn matches_direct_formula_1d() {
        use rand::{rngs::StdRng, Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(7);
        let pts: Vec<[f64; 1]> = (0..40).map(|_| [rng.random::<f64>()]).collect();
        let x = NodeSet::from_points(&pts).unwrap();
        let y: Vec<f64> = (0..60).map(|_| rng.random::<f64>()).collect();
        for k in [ShapeFunction::wendland(6.0).unwrap(), ShapeFunction::gaussian(4.0).unwrap()] {
            let a = shepard_matrix(&x, &k, &y).unwrap();
            let d = dense(&a);
            for (i, yi) in y.iter().enumerate() {
                let expect = direct_row(&x, &k, &[*yi]);
                for (got, want) in d[i].iter().zip(&expect) {
                    assert!((got - want).abs() < 1e-12, "row {i}: {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn apply_properties() {
        let b = BoxDomain::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let x = grid_nodes(&b, &[9, 9], None).unwrap();
        let k = ShapeFunction::wendland(4.0).unwrap();
        let y: Vec<f64> = (0..200).flat_map(|i| {
            let t = i as f64 / 199.0;
            [t, (7.0 * t).fract()]
        }).collect();
        let a = shepard_matrix(&x, &k, &y).unwrap();
        assert_eq!(a.uncovered_count(), 0);
        let c = a.apply(&vec![0.3; x.len()]).unwrap();
        assert!(c.iter().all(|v| (v - 0.3).abs() < 1e-14));
        assert!(a.apply(&vec![0.0; x.len()]).unwrap().iter().all(|&v| v == 0.0));
        assert!(matches!(a.apply(&[1.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn coordinate_export() {
        let x = NodeSet::from_points(&[[0.0], [1.0]]).unwrap();
        let k = ShapeFunction::wendland(1.0).unwrap();
        let a = shepard_matrix(&x, &k, &[0.5]).unwrap();
        let mut buf = Vec::new();
        a.write_coordinate(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("1 2 2"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn interpolation_reproduces_nodal_values() {
        let b = BoxDomain::new(vec![0.0], vec![1.0]).unwrap();
        let x = grid_nodes(&b, &[11], None).unwrap();
        let k = ShapeFunction::wendland(3.0).unwrap();
        let values: Vec<f64> = x.iter().map(|p| (3.0 * p[0]).cos() + 2.0).collect();
        let at_nodes = interpolate(&x, &k, &values, x.coords()).unwrap();
        for (a, b) in at_nodes.iter().zip(&values) {
            assert!((a - b).abs() <= 1e-8 * b.abs());
        }
    }

    #[test]
    fn interpolation_single_node() {
        let x = NodeSet::from_points(&[[0.0]]).unwrap();
        let k = ShapeFunction::wendland(1.0).unwrap();
        let out = interpolate(&x, &k, &[2.0], &[0.0, 0.5]).unwrap();
        assert!((out[0] - 2.0).abs() < 1e-14);
        assert!((out[1] - 2.0 * k.eval(0.5).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn interpolation_rejects_ill_conditioned() {
        let x = NodeSet::from_points(&[[0.0], [1e-9]]).unwrap();
        let k = ShapeFunction::gaussian(1.0).unwrap();
        assert!(matches!(Interpolant::new(&x, k), Err(Error::Conditioning { .. })));
    }

    #[test]
    fn non_stationary_interpolation_error_decreases() {
        let b = BoxDomain::new(vec![0.0], vec![1.0]).unwrap();
        let k = ShapeFunction::wendland(2.0).unwrap();
        let f = |x: f64| (std::f64::consts::PI * x).sin();
        let probe: Vec<f64> = (0..=1000).map(|i| i as f64 / 1000.0).collect();
        let mut errors = vec![];
        for k_nodes in [5usize, 10, 20, 40] {
            let x = grid_nodes(&b, &[k_nodes + 1], None).unwrap();
            let v: Vec<f64> = x.iter().map(|p| f(p[0])).collect();
            let out = interpolate(&x, &k, &v, &probe).unwrap();
            let err = out.iter().zip(&probe).map(|(o, p)| (o - f(*p)).abs()).fold(0.0, f64::max);
            errors.push(err);
        }
        assert!(errors.windows(2).all(|w| w[1] < w[0]), "{errors:?}");
    }
}
