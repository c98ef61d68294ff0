//! Uniform node-centered mesh on an interval or axis-aligned rectangle,
//! trapezoidal quadrature, and the ghost-reflection Neumann Laplacian.
//!
//! The node layout includes boundary nodes; boundary quadrature weights are
//! halved per touching axis. With this pairing the weighted Laplacian is
//! symmetric and its column sums vanish, which the adjoint checks rely on.

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};

/// Physical domain and resolution: an interval (dim 1) or rectangle (dim 2).
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    /// Side length per axis.
    pub lengths: Vec<f64>,
    /// Number of cells per axis; nodes per axis is `cells + 1`.
    pub cells: Vec<usize>,
}

impl GridSpec {
    pub fn interval(length: f64, cells: usize) -> Self {
        Self {
            lengths: vec![length],
            cells: vec![cells],
        }
    }

    pub fn rectangle(lengths: [f64; 2], cells: [usize; 2]) -> Self {
        Self {
            lengths: lengths.to_vec(),
            cells: cells.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lengths.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lengths.len() != self.cells.len() {
            return Err(Error::InvalidSpec(
                "lengths and cells must have the same dimension".into(),
            ));
        }
        if self.dim() == 0 || self.dim() > 2 {
            return Err(Error::InvalidSpec(format!(
                "dimension must be 1 or 2, got {}",
                self.dim()
            )));
        }
        for &l in &self.lengths {
            if !(l > 0.0) || !l.is_finite() {
                return Err(Error::InvalidSpec(format!("side length must be > 0, got {l}")));
            }
        }
        for &c in &self.cells {
            if c < 2 {
                return Err(Error::InvalidSpec(format!(
                    "cells per axis must be >= 2, got {c}"
                )));
            }
        }
        Ok(())
    }
}

/// Discretized domain: node coordinates, mesh widths, and quadrature weights.
#[derive(Debug, Clone)]
pub struct Grid {
    spec: GridSpec,
    h: Vec<f64>,
    nodes_per_axis: Vec<usize>,
    node_count: usize,
    quad_weights: Array1<f64>,
    volume: f64,
}

impl Grid {
    pub fn new(spec: GridSpec) -> Result<Grid> {
        spec.validate()?;
        let dim = spec.dim();
        let h: Vec<f64> = (0..dim).map(|a| spec.lengths[a] / spec.cells[a] as f64).collect();
        let nodes_per_axis: Vec<usize> = spec.cells.iter().map(|&c| c + 1).collect();
        let node_count: usize = nodes_per_axis.iter().product();
        let volume: f64 = spec.lengths.iter().product();

        let mut quad_weights = Array1::zeros(node_count);
        for idx in 0..node_count {
            let coords = unflatten(idx, &nodes_per_axis);
            let mut w = 1.0;
            for a in 0..dim {
                let axis_w = if coords[a] == 0 || coords[a] == nodes_per_axis[a] - 1 {
                    0.5 * h[a]
                } else {
                    h[a]
                };
                w *= axis_w;
            }
            quad_weights[idx] = w;
        }
        let grid = Grid {
            spec,
            h,
            nodes_per_axis,
            node_count,
            quad_weights,
            volume,
        };
        let sum: f64 = grid.quad_weights.sum();
        debug_assert!((sum - grid.volume).abs() <= 1e-12 * grid.volume.max(1.0));
        Ok(grid)
    }

    pub fn shared(spec: GridSpec) -> Result<Arc<Grid>> {
        Ok(Arc::new(Self::new(spec)?))
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn mesh_widths(&self) -> &[f64] {
        &self.h
    }

    pub fn nodes_per_axis(&self) -> &[usize] {
        &self.nodes_per_axis
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn quad_weights(&self) -> &Array1<f64> {
        &self.quad_weights
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    /// Coordinates of node `idx`, padded with zeros up to two entries.
    pub fn position(&self, idx: usize) -> [f64; 2] {
        let coords = unflatten(idx, &self.nodes_per_axis);
        let mut pos = [0.0; 2];
        for a in 0..self.dim() {
            pos[a] = coords[a] as f64 * self.h[a];
        }
        pos
    }

    /// Euclidean distance between two nodes.
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let a = self.position(i);
        let b = self.position(j);
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
    }

    /// Second-order Neumann Laplacian with ghost-node reflection, applied to
    /// raw nodal values.
    pub fn apply_laplacian(&self, f: ArrayView1<f64>) -> Array1<f64> {
        debug_assert_eq!(f.len(), self.node_count);
        let mut out = Array1::zeros(self.node_count);
        match self.dim() {
            1 => {
                let n = self.nodes_per_axis[0];
                let inv_h2 = 1.0 / (self.h[0] * self.h[0]);
                for i in 0..n {
                    let left = if i == 0 { f[1] } else { f[i - 1] };
                    let right = if i == n - 1 { f[n - 2] } else { f[i + 1] };
                    out[i] = (left - 2.0 * f[i] + right) * inv_h2;
                }
            }
            2 => {
                let nx = self.nodes_per_axis[0];
                let ny = self.nodes_per_axis[1];
                let inv_hx2 = 1.0 / (self.h[0] * self.h[0]);
                let inv_hy2 = 1.0 / (self.h[1] * self.h[1]);
                for jy in 0..ny {
                    for jx in 0..nx {
                        let c = jy * nx + jx;
                        let xl = if jx == 0 { c + 1 } else { c - 1 };
                        let xr = if jx == nx - 1 { c - 1 } else { c + 1 };
                        let yl = if jy == 0 { c + nx } else { c - nx };
                        let yr = if jy == ny - 1 { c - nx } else { c + nx };
                        out[c] = (f[xl] - 2.0 * f[c] + f[xr]) * inv_hx2
                            + (f[yl] - 2.0 * f[c] + f[yr]) * inv_hy2;
                    }
                }
            }
            _ => unreachable!(),
        }
        out
    }

    /// Dense matrix of the Neumann Laplacian (small grids; oracle for tests).
    pub fn laplacian_matrix(&self) -> Array2<f64> {
        let n = self.node_count;
        let mut m = Array2::zeros((n, n));
        let mut e = Array1::zeros(n);
        for j in 0..n {
            e[j] = 1.0;
            let col = self.apply_laplacian(e.view());
            for i in 0..n {
                m[[i, j]] = col[i];
            }
            e[j] = 0.0;
        }
        m
    }

    /// Quadrature-weighted inner product of raw nodal values.
    pub fn inner(&self, f: ArrayView1<f64>, g: ArrayView1<f64>) -> f64 {
        debug_assert_eq!(f.len(), self.node_count);
        debug_assert_eq!(g.len(), self.node_count);
        f.iter()
            .zip(g.iter())
            .zip(self.quad_weights.iter())
            .map(|((a, b), w)| w * a * b)
            .sum()
    }

    /// L2 norm of raw nodal values.
    pub fn norm(&self, f: ArrayView1<f64>) -> f64 {
        self.inner(f, f).max(0.0).sqrt()
    }

    /// Discrete Dirichlet energy `||grad f||^2 = <-Lap f, f>`.
    pub fn dirichlet_energy(&self, f: ArrayView1<f64>) -> f64 {
        let lap = self.apply_laplacian(f);
        (-self.inner(lap.view(), f)).max(0.0)
    }

    /// Discrete H1(Omega) norm: `(||f||^2 + ||grad f||^2)^{1/2}`.
    pub fn norm_v(&self, f: ArrayView1<f64>) -> f64 {
        (self.inner(f, f) + self.dirichlet_energy(f)).sqrt()
    }
}

pub(crate) fn unflatten(idx: usize, nodes_per_axis: &[usize]) -> Vec<usize> {
    match nodes_per_axis.len() {
        1 => vec![idx],
        2 => vec![idx % nodes_per_axis[0], idx / nodes_per_axis[0]],
        _ => unreachable!(),
    }
}

pub(crate) fn same_grid(a: &Arc<Grid>, b: &Arc<Grid>) -> bool {
    Arc::ptr_eq(a, b) || a.spec == b.spec
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn unit_interval_weights() {
        let g = Grid::new(GridSpec::interval(1.0, 4)).unwrap();
        assert_eq!(g.node_count(), 5);
        assert_abs_diff_eq!(g.mesh_widths()[0], 0.25, epsilon = 1e-15);
        let expected = [0.125, 0.25, 0.25, 0.25, 0.125];
        for (w, e) in g.quad_weights().iter().zip(expected.iter()) {
            assert_abs_diff_eq!(*w, *e, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(g.quad_weights().sum(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn rectangle_corner_weight() {
        let g = Grid::new(GridSpec::rectangle([1.0, 1.0], [2, 2])).unwrap();
        assert_eq!(g.node_count(), 9);
        // corner node weight h^2/4
        assert_abs_diff_eq!(g.quad_weights()[0], 0.0625, epsilon = 1e-15);
        assert_abs_diff_eq!(g.quad_weights().sum(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn weights_sum_to_volume() {
        let g = Grid::new(GridSpec::interval(2.0, 8)).unwrap();
        assert_abs_diff_eq!(g.quad_weights().sum(), 2.0, epsilon = 1e-12);
        let g2 = Grid::new(GridSpec::rectangle([1.5, 0.5], [7, 5])).unwrap();
        assert_abs_diff_eq!(g2.quad_weights().sum(), 0.75, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(Grid::new(GridSpec::interval(-1.0, 4)).is_err());
        assert!(Grid::new(GridSpec::interval(1.0, 1)).is_err());
        assert!(Grid::new(GridSpec {
            lengths: vec![1.0, 1.0, 1.0],
            cells: vec![2, 2, 2]
        })
        .is_err());
    }

    #[test]
    fn laplacian_annihilates_constants() {
        for g in [
            Grid::new(GridSpec::interval(1.0, 7)).unwrap(),
            Grid::new(GridSpec::rectangle([1.0, 2.0], [5, 4])).unwrap(),
        ] {
            let f = Array1::from_elem(g.node_count(), 3.7);
            let lap = g.apply_laplacian(f.view());
            for v in lap.iter() {
                assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn laplacian_cosine_second_order() {
        // cos(pi x) is a Neumann eigenfunction: Lap = -pi^2 cos(pi x).
        let mut errors = Vec::new();
        for cells in [64usize, 128, 256] {
            let g = Grid::new(GridSpec::interval(1.0, cells)).unwrap();
            let f = Array1::from_iter((0..g.node_count()).map(|i| (PI * g.position(i)[0]).cos()));
            let lap = g.apply_laplacian(f.view());
            let err = (0..g.node_count())
                .map(|i| (lap[i] + PI * PI * f[i]).abs())
                .fold(0.0_f64, f64::max);
            errors.push(err);
        }
        for k in 0..errors.len() - 1 {
            let ratio = errors[k] / errors[k + 1];
            assert!(
                (3.5..=4.5).contains(&ratio),
                "refinement ratio {ratio} out of second-order band, errors {errors:?}"
            );
        }
    }

    #[test]
    fn weighted_laplacian_symmetric_with_zero_column_sums() {
        for g in [
            Grid::new(GridSpec::interval(1.0, 4)).unwrap(),
            Grid::new(GridSpec::interval(1.3, 9)).unwrap(),
            Grid::new(GridSpec::rectangle([1.0, 1.0], [4, 3])).unwrap(),
        ] {
            let n = g.node_count();
            assert!(n <= 200);
            let m = g.laplacian_matrix();
            let w = g.quad_weights();
            // weighted matrix W L symmetric, columns of W L sum to zero
            for j in 0..n {
                let mut col_sum = 0.0;
                for i in 0..n {
                    col_sum += w[i] * m[[i, j]];
                    let a = w[i] * m[[i, j]];
                    let b = w[j] * m[[j, i]];
                    assert!(
                        (a - b).abs() <= 1e-13 * (a.abs() + b.abs()).max(1.0),
                        "asymmetry at ({i},{j})"
                    );
                }
                assert!(col_sum.abs() <= 1e-13, "column {j} sum {col_sum}");
            }
        }
    }

    #[test]
    fn weighted_sum_of_laplacian_vanishes_for_random_field() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let g = Grid::new(GridSpec::interval(1.0, 16)).unwrap();
        let f = Array1::from_iter((0..g.node_count()).map(|_| rng.gen_range(-1.0..1.0)));
        let lap = g.apply_laplacian(f.view());
        let ones = Array1::from_elem(g.node_count(), 1.0);
        assert!(g.inner(lap.view(), ones.view()).abs() <= 1e-12);
    }

    proptest! {
        // Affine functions integrate exactly with trapezoid weights in 1D.
        #[test]
        fn quadrature_exact_for_affine(a in -5.0..5.0f64, b in -5.0..5.0f64, cells in 2usize..40) {
            let length = 1.5;
            let g = Grid::new(GridSpec::interval(length, cells)).unwrap();
            let f = Array1::from_iter((0..g.node_count()).map(|i| a * g.position(i)[0] + b));
            let ones = Array1::from_elem(g.node_count(), 1.0);
            let integral = g.inner(f.view(), ones.view());
            let exact = a * length * length / 2.0 + b * length;
            prop_assert!((integral - exact).abs() <= 1e-12 * exact.abs().max(1.0));
        }

        // Bilinear functions integrate exactly in 2D.
        #[test]
        fn quadrature_exact_for_bilinear(a in -3.0..3.0f64, b in -3.0..3.0f64, c in -3.0..3.0f64) {
            let g = Grid::new(GridSpec::rectangle([1.0, 2.0], [5, 7])).unwrap();
            let f = Array1::from_iter((0..g.node_count()).map(|i| {
                let p = g.position(i);
                a * p[0] * p[1] + b * p[0] + c
            }));
            let ones = Array1::from_elem(g.node_count(), 1.0);
            let integral = g.inner(f.view(), ones.view());
            // exact: a*Lx^2/2*Ly^2/2 + b*Lx^2/2*Ly + c*Lx*Ly with Lx=1, Ly=2
            let exact = a * 0.5 * 2.0 + b * 0.5 * 2.0 + c * 2.0;
            prop_assert!((integral - exact).abs() <= 1e-12 * exact.abs().max(1.0));
        }

        #[test]
        fn inner_product_symmetric(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let g = Grid::new(GridSpec::interval(1.0, 8)).unwrap();
            let f = Array1::from_iter((0..g.node_count()).map(|_| rng.gen_range(-1.0..1.0)));
            let h = Array1::from_iter((0..g.node_count()).map(|_| rng.gen_range(-1.0..1.0)));
            prop_assert_eq!(g.inner(f.view(), h.view()), g.inner(h.view(), f.view()));
        }
    }
}
