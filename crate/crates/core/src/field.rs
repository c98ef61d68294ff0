//! Scalar fields on a grid and space-time fields on grid x time levels,
//! together with the discrete norms the estimates are phrased in.

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{Error, Result};
use crate::grid::{same_grid, Grid};

/// Uniform partition of [0, T] into `steps` intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    pub t_final: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t_final: f64, steps: usize) -> Result<Self> {
        if !(t_final > 0.0) || !t_final.is_finite() {
            return Err(Error::InvalidSpec(format!("t_final must be > 0, got {t_final}")));
        }
        if steps < 1 {
            return Err(Error::InvalidSpec("time steps must be >= 1".into()));
        }
        Ok(Self { t_final, steps })
    }

    pub fn tau(&self) -> f64 {
        self.t_final / self.steps as f64
    }

    pub fn levels(&self) -> usize {
        self.steps + 1
    }

    pub fn time(&self, level: usize) -> f64 {
        self.tau() * level as f64
    }

    /// Trapezoid weight of a time level (1/2 at the ends, 1 inside).
    pub fn trapezoid_weight(&self, level: usize) -> f64 {
        if level == 0 || level == self.steps {
            0.5
        } else {
            1.0
        }
    }
}

/// One real value per grid node.
#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: Arc<Grid>,
    values: Array1<f64>,
}

impl ScalarField {
    pub fn new(grid: Arc<Grid>, values: Array1<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::ShapeMismatch {
                expected: (1, grid.node_count()),
                found: (1, values.len()),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Arc<Grid>, c: f64) -> Self {
        let n = grid.node_count();
        Self {
            grid,
            values: Array1::from_elem(n, c),
        }
    }

    pub fn from_fn(grid: Arc<Grid>, f: impl Fn([f64; 2]) -> f64) -> Self {
        let values = Array1::from_iter((0..grid.node_count()).map(|i| f(grid.position(i))));
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array1<f64> {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Ghost-reflection Neumann Laplacian of this field.
    pub fn laplacian(&self) -> ScalarField {
        ScalarField {
            grid: self.grid.clone(),
            values: self.grid.apply_laplacian(self.values.view()),
        }
    }

    pub fn norm_l2(&self) -> f64 {
        self.grid.norm(self.values.view())
    }

    pub fn inner_l2(&self, other: &ScalarField) -> Result<f64> {
        check_grids(&self.grid, &other.grid)?;
        Ok(self.grid.inner(self.values.view(), other.values.view()))
    }
}

/// A scalar function on grid nodes x time levels; row `n` is the slice at
/// time level `n` (row 0 is t = 0).
#[derive(Debug, Clone)]
pub struct SpaceTimeField {
    grid: Arc<Grid>,
    time: TimeGrid,
    values: Array2<f64>,
}

impl SpaceTimeField {
    pub fn new(grid: Arc<Grid>, time: TimeGrid, values: Array2<f64>) -> Result<Self> {
        let expected = (time.levels(), grid.node_count());
        if values.dim() != expected {
            return Err(Error::ShapeMismatch {
                expected,
                found: values.dim(),
            });
        }
        Ok(Self { grid, time, values })
    }

    pub fn zeros(grid: Arc<Grid>, time: TimeGrid) -> Self {
        let shape = (time.levels(), grid.node_count());
        Self {
            grid,
            time,
            values: Array2::zeros(shape),
        }
    }

    pub fn constant(grid: Arc<Grid>, time: TimeGrid, c: f64) -> Self {
        let shape = (time.levels(), grid.node_count());
        Self {
            grid,
            time,
            values: Array2::from_elem(shape, c),
        }
    }

    /// Build from a function of (position, time).
    pub fn from_fn(grid: Arc<Grid>, time: TimeGrid, f: impl Fn([f64; 2], f64) -> f64) -> Self {
        let mut values = Array2::zeros((time.levels(), grid.node_count()));
        for n in 0..time.levels() {
            let t = time.time(n);
            for i in 0..grid.node_count() {
                values[[n, i]] = f(grid.position(i), t);
            }
        }
        Self { grid, time, values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array2<f64> {
        &mut self.values
    }

    pub fn slice(&self, level: usize) -> ArrayView1<'_, f64> {
        self.values.index_axis(Axis(0), level)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn assert_finite(&self, context: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(context.to_string()))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> SpaceTimeField {
        SpaceTimeField {
            grid: self.grid.clone(),
            time: self.time.clone(),
            values: self.values.map(|v| f(*v)),
        }
    }

    /// Pointwise linear combination `a*self + b*other`.
    pub fn lin_comb(&self, a: f64, other: &SpaceTimeField, b: f64) -> Result<SpaceTimeField> {
        self.check_compatible(other)?;
        Ok(SpaceTimeField {
            grid: self.grid.clone(),
            time: self.time.clone(),
            values: a * &self.values + b * &other.values,
        })
    }

    pub fn check_compatible(&self, other: &SpaceTimeField) -> Result<()> {
        check_grids(&self.grid, &other.grid)?;
        if self.time != other.time {
            return Err(Error::ShapeMismatch {
                expected: (self.time.levels(), self.grid.node_count()),
                found: (other.time.levels(), other.grid.node_count()),
            });
        }
        Ok(())
    }

    /// Space-time L2(Q) inner product with trapezoid weights in time.
    pub fn inner_l2q(&self, other: &SpaceTimeField) -> Result<f64> {
        self.check_compatible(other)?;
        let tau = self.time.tau();
        let mut acc = 0.0;
        for n in 0..self.time.levels() {
            let theta = self.time.trapezoid_weight(n);
            acc += tau * theta * self.grid.inner(self.slice(n), other.slice(n));
        }
        Ok(acc)
    }

    pub fn norm_l2q(&self) -> f64 {
        self.inner_l2q(self).expect("self-compatible").max(0.0).sqrt()
    }

    /// H1(0,T;L2) norm: trapezoid rule for the L2 part plus interval sums of
    /// difference quotients.
    pub fn norm_h1_time(&self) -> f64 {
        self.norm_h1_time_until(self.time.steps)
    }

    /// Same as [`norm_h1_time`](Self::norm_h1_time), truncated at time level `m`.
    pub fn norm_h1_time_until(&self, m: usize) -> f64 {
        let tau = self.time.tau();
        let mut acc = 0.0;
        for n in 0..=m {
            let theta = if n == 0 || n == m { 0.5 } else { 1.0 };
            let s = self.slice(n);
            acc += tau * theta * self.grid.inner(s, s);
        }
        for n in 1..=m {
            let diff = (&self.slice(n) - &self.slice(n - 1)) / tau;
            acc += tau * self.grid.inner(diff.view(), diff.view());
        }
        acc.max(0.0).sqrt()
    }

    /// L2(0,t_m;H) norm with trapezoid weights.
    pub fn norm_l2h_until(&self, m: usize) -> f64 {
        let tau = self.time.tau();
        let mut acc = 0.0;
        for n in 0..=m {
            let theta = if n == 0 || n == m { 0.5 } else { 1.0 };
            let s = self.slice(n);
            acc += tau * theta * self.grid.inner(s, s);
        }
        acc.max(0.0).sqrt()
    }

    /// L-infinity(0,t_m;H) norm: max over levels of the spatial L2 norm.
    pub fn norm_linf_h_until(&self, m: usize) -> f64 {
        (0..=m)
            .map(|n| self.grid.norm(self.slice(n)))
            .fold(0.0_f64, f64::max)
    }

    /// L-infinity(0,t_m;V) norm: max over levels of the spatial H1 norm.
    pub fn norm_linf_v_until(&self, m: usize) -> f64 {
        (0..=m)
            .map(|n| self.grid.norm_v(self.slice(n)))
            .fold(0.0_f64, f64::max)
    }

    /// L2(0,T;V) norm with trapezoid weights in time.
    pub fn norm_l2v(&self) -> f64 {
        let tau = self.time.tau();
        let mut acc = 0.0;
        for n in 0..self.time.levels() {
            let theta = self.time.trapezoid_weight(n);
            let s = self.slice(n);
            acc += tau * theta * (self.grid.inner(s, s) + self.grid.dirichlet_energy(s));
        }
        acc.max(0.0).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// First-order space-time pairing aligned with the stepping structure:
/// `sum_{k=1..N} tau <a^{k-1}, b^k>`. Adjoint fields live on the left end
/// of each step while sources act on the right end; this is the pairing in
/// which the discrete adjoint identity is exact.
pub fn inner_step_pairing(a: &SpaceTimeField, b: &SpaceTimeField) -> Result<f64> {
    a.check_compatible(b)?;
    let tau = a.time().tau();
    let mut acc = 0.0;
    for k in 1..a.time().levels() {
        acc += tau * a.grid().inner(a.slice(k - 1), b.slice(k));
    }
    Ok(acc)
}

fn check_grids(a: &Arc<Grid>, b: &Arc<Grid>) -> Result<()> {
    if same_grid(a, b) {
        Ok(())
    } else {
        Err(Error::GridMismatch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn unit_grid(cells: usize) -> Arc<Grid> {
        Grid::shared(GridSpec::interval(1.0, cells)).unwrap()
    }

    #[test]
    fn norm_of_unit_constant_is_one() {
        let g = unit_grid(8);
        let f = ScalarField::constant(g, 1.0);
        assert_abs_diff_eq!(f.norm_l2(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn norm_of_cosine_approaches_inverse_sqrt2() {
        let g = unit_grid(128);
        let f = ScalarField::from_fn(g, |p| (PI * p[0]).cos());
        // integral of cos^2 over [0,1] is 1/2
        assert_abs_diff_eq!(f.norm_l2(), std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-3);
    }

    #[test]
    fn h1_time_norm_of_zero_and_constant() {
        let g = unit_grid(8);
        let time = TimeGrid::new(1.0, 16).unwrap();
        let zero = SpaceTimeField::zeros(g.clone(), time.clone());
        assert_abs_diff_eq!(zero.norm_h1_time(), 0.0, epsilon = 1e-15);
        let c = SpaceTimeField::constant(g, time, -2.25);
        // derivative term vanishes; trapezoid in time is exact for constants
        assert_abs_diff_eq!(c.norm_h1_time(), 2.25, epsilon = 1e-13);
    }

    #[test]
    fn h1_time_norm_of_linear_ramp() {
        let g = unit_grid(8);
        let time = TimeGrid::new(1.0, 256).unwrap();
        let u = SpaceTimeField::from_fn(g, time, |_, t| t);
        // integral of t^2 is 1/3, derivative term is 1
        let expected = (1.0_f64 / 3.0 + 1.0).sqrt();
        assert_abs_diff_eq!(u.norm_h1_time(), expected, epsilon = 1e-2);
    }

    #[test]
    fn l2q_norm_of_unit_field() {
        let g = unit_grid(8);
        let time = TimeGrid::new(2.0, 32).unwrap();
        let u = SpaceTimeField::constant(g, time, 1.0);
        assert_abs_diff_eq!(u.norm_l2q(), 2.0_f64.sqrt(), epsilon = 1e-13);
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let g1 = unit_grid(8);
        let g2 = unit_grid(9);
        let time = TimeGrid::new(1.0, 4).unwrap();
        let a = SpaceTimeField::zeros(g1, time.clone());
        let b = SpaceTimeField::zeros(g2, time);
        assert!(a.inner_l2q(&b).is_err());
    }
}
