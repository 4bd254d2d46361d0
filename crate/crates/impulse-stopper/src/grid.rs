//! Uniform 1D/2D lattices and grid functions.
//!
//! Off-grid evaluation is linear (bilinear in 2D) with coordinates clamped to
//! the truncation box, so interpolation weights are always convex. That keeps
//! every operator built on top of it monotone.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("axis needs at least 2 nodes and hi > lo, got [{lo}, {hi}] with {n}")]
    BadAxis { lo: f64, hi: f64, n: usize },
    #[error("value length {got} does not match grid size {want}")]
    LengthMismatch { got: usize, want: usize },
    #[error("non-finite value at node {0}")]
    NonFinite(usize),
    #[error("grids differ")]
    GridMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self, GridError> {
        if n < 2 || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(GridError::BadAxis { lo, hi, n });
        }
        Ok(Axis { lo, hi, n })
    }

    pub fn h(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.h()
    }

    /// Cell index and fractional offset of a clamped coordinate.
    fn locate(&self, x: f64) -> (usize, f64) {
        let x = x.clamp(self.lo, self.hi);
        let t = (x - self.lo) / self.h();
        let mut i = t.floor() as usize;
        if i >= self.n - 1 {
            i = self.n - 2;
        }
        (i, (t - i as f64).clamp(0.0, 1.0))
    }
}

/// Value assigned to nodes outside the truncation box by solvers that need a
/// closure there.
#[derive(Debug, Clone)]
pub enum BoundaryPolicy {
    /// Take the bequest value at the boundary node.
    DirichletBequest,
    /// Dirichlet with caller-supplied data (one value per boundary node,
    /// indexed like the grid).
    DirichletData(std::sync::Arc<Vec<f64>>),
    /// Extend the interior field linearly.
    ExtrapolateLinear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    axes: Vec<Axis>,
}

impl Grid {
    pub fn line(lo: f64, hi: f64, n: usize) -> Result<Self, GridError> {
        Ok(Grid { axes: vec![Axis::new(lo, hi, n)?] })
    }

    pub fn rect(a0: Axis, a1: Axis) -> Self {
        Grid { axes: vec![a0, a1] }
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axis(&self, d: usize) -> &Axis {
        &self.axes[d]
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.n).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, ij: &[usize]) -> usize {
        match self.dim() {
            1 => ij[0],
            _ => ij[0] * self.axes[1].n + ij[1],
        }
    }

    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        match self.dim() {
            1 => [idx, 0],
            _ => [idx / self.axes[1].n, idx % self.axes[1].n],
        }
    }

    pub fn coord(&self, idx: usize) -> [f64; 2] {
        let ij = self.multi_index(idx);
        match self.dim() {
            1 => [self.axes[0].coord(ij[0]), 0.0],
            _ => [self.axes[0].coord(ij[0]), self.axes[1].coord(ij[1])],
        }
    }

    pub fn node_iter(&self) -> impl Iterator<Item = usize> {
        0..self.len()
    }

    /// Interpolation weights of a (clamped) point: up to 4 `(node, weight)`
    /// pairs, convex.
    pub fn interp_weights(&self, x: &[f64]) -> InterpWeights {
        let mut w = InterpWeights::default();
        match self.dim() {
            1 => {
                let (i, t) = self.axes[0].locate(x[0]);
                w.push(i, 1.0 - t);
                w.push(i + 1, t);
            }
            _ => {
                let (i, t) = self.axes[0].locate(x[0]);
                let (j, u) = self.axes[1].locate(x[1]);
                let n1 = self.axes[1].n;
                w.push(i * n1 + j, (1.0 - t) * (1.0 - u));
                w.push(i * n1 + j + 1, (1.0 - t) * u);
                w.push((i + 1) * n1 + j, t * (1.0 - u));
                w.push((i + 1) * n1 + j + 1, t * u);
            }
        }
        w
    }

    /// Whether a point lies inside the truncation box (with slack of `slack`
    /// cells).
    pub fn contains(&self, x: &[f64], slack_cells: f64) -> bool {
        for (d, a) in self.axes.iter().enumerate() {
            let s = slack_cells * a.h();
            if x[d] < a.lo - s || x[d] > a.hi + s {
                return false;
            }
        }
        true
    }
}

/// Sparse convex weight list from interpolation.
#[derive(Debug, Clone, Default)]
pub struct InterpWeights {
    pub nodes: [usize; 4],
    pub weights: [f64; 4],
    pub len: usize,
}

impl InterpWeights {
    fn push(&mut self, node: usize, weight: f64) {
        if weight == 0.0 && self.len > 0 {
            return;
        }
        self.nodes[self.len] = node;
        self.weights[self.len] = weight;
        self.len += 1;
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.len).map(|k| (self.nodes[k], self.weights[k]))
    }

    pub fn apply(&self, values: &[f64]) -> f64 {
        self.iter().map(|(n, w)| w * values[n]).sum()
    }
}

#[derive(Debug, Clone)]
pub struct GridFunction {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub boundary: BoundaryPolicy,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::LengthMismatch { got: values.len(), want: grid.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite(i));
        }
        Ok(GridFunction { grid, values, boundary: BoundaryPolicy::DirichletBequest })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&[f64; 2]) -> f64) -> Result<Self, GridError> {
        let values: Vec<f64> = grid.node_iter().map(|i| f(&grid.coord(i))).collect();
        GridFunction::new(grid, values)
    }

    pub fn with_boundary(mut self, boundary: BoundaryPolicy) -> Self {
        self.boundary = boundary;
        self
    }

    /// Linear interpolation with clamping at the truncation boundary.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.grid.interp_weights(x).apply(&self.values)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn same_grid(&self, other: &GridFunction) -> bool {
        self.grid == other.grid
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interp_is_exact_for_linear_1d() {
        let g = Grid::line(0.0, 10.0, 11).unwrap();
        let f = GridFunction::from_fn(g, |x| 3.0 * x[0] - 1.0).unwrap();
        assert!((f.eval(&[4.35]) - (3.0 * 4.35 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn interp_clamps_outside_box() {
        let g = Grid::line(0.0, 1.0, 5).unwrap();
        let f = GridFunction::from_fn(g, |x| x[0]).unwrap();
        assert_eq!(f.eval(&[-3.0]), 0.0);
        assert_eq!(f.eval(&[7.0]), 1.0);
    }

    #[test]
    fn bilinear_matches_product_form() {
        let g = Grid::rect(Axis::new(0.0, 2.0, 21).unwrap(), Axis::new(1.0, 3.0, 11).unwrap());
        let f = GridFunction::from_fn(g, |x| 2.0 * x[0] + 0.5 * x[1]).unwrap();
        assert!((f.eval(&[1.33, 2.71]) - (2.0 * 1.33 + 0.5 * 2.71)).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_finite() {
        let g = Grid::line(0.0, 1.0, 3).unwrap();
        assert!(GridFunction::new(g, vec![0.0, f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn weights_are_convex() {
        let g = Grid::rect(Axis::new(0.0, 1.0, 4).unwrap(), Axis::new(0.0, 1.0, 4).unwrap());
        let w = g.interp_weights(&[0.4, 0.9]);
        let total: f64 = w.iter().map(|(_, w)| w).sum();
        assert!((total - 1.0).abs() < 1e-14);
        assert!(w.iter().all(|(_, w)| w >= 0.0));
    }
}
