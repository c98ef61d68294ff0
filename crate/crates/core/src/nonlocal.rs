//! Nonlocal coupling operators: spatial convolutions and time-history
//! integral kernels, their derivatives, and the adjoints of the derivatives.
//!
//! Operators are assembled as dense node-to-node weight matrices
//! `W[i][j] = k(|x_i - x_j|) quad_weight[j]`; desk-scale grids make the
//! O(N^2) application cheap and the dense form gives an exact transpose for
//! the adjoint. Shipped kernels are linear, so the derivative at any base
//! equals the operator itself; user-defined nonlinear operators implement
//! [`NonlocalCoupling`].

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::field::{SpaceTimeField, TimeGrid};
use crate::grid::{same_grid, Grid};

/// Radial kernel profile k(r).
#[derive(Debug, Clone, PartialEq)]
pub enum RadialKernel {
    /// k(r) = amplitude * exp(-r^2 / (2 sigma^2))
    Gaussian { sigma: f64, amplitude: f64 },
    /// k(r) = amplitude * max(r, r_min)^(-alpha); r_min defaults to h/2.
    TruncatedPower {
        alpha: f64,
        amplitude: f64,
        r_min: Option<f64>,
    },
}

impl RadialKernel {
    fn eval(&self, r: f64, r_floor: f64) -> f64 {
        match self {
            RadialKernel::Gaussian { sigma, amplitude } => {
                amplitude * (-r * r / (2.0 * sigma * sigma)).exp()
            }
            RadialKernel::TruncatedPower {
                alpha,
                amplitude,
                r_min,
            } => {
                let floor = r_min.unwrap_or(r_floor);
                amplitude * r.max(floor).powf(-alpha)
            }
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        match self {
            RadialKernel::Gaussian { sigma, amplitude } => {
                if !(sigma > &0.0) || !sigma.is_finite() {
                    return Err(Error::InvalidSpec(format!("gaussian sigma must be > 0, got {sigma}")));
                }
                if !amplitude.is_finite() {
                    return Err(Error::InvalidSpec("kernel amplitude must be finite".into()));
                }
            }
            RadialKernel::TruncatedPower {
                alpha,
                amplitude,
                r_min,
            } => {
                if !amplitude.is_finite() {
                    return Err(Error::InvalidSpec("kernel amplitude must be finite".into()));
                }
                if !(*alpha < dim as f64) {
                    return Err(Error::InvalidSpec(format!(
                        "truncated power exponent {alpha} must be < spatial dimension {dim}"
                    )));
                }
                if let Some(rm) = r_min {
                    if !(rm > &0.0) {
                        return Err(Error::InvalidSpec("r_min must be > 0".into()));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Separable time weight a(t - s) for history kernels.
#[derive(Debug, Clone, PartialEq)]
pub enum TimeProfile {
    Constant { a0: f64 },
    /// a(d) = a0 * exp(-rate * d)
    Exponential { a0: f64, rate: f64 },
}

impl TimeProfile {
    fn eval(&self, d: f64) -> f64 {
        match self {
            TimeProfile::Constant { a0 } => *a0,
            TimeProfile::Exponential { a0, rate } => a0 * (-rate * d).exp(),
        }
    }
}

/// Kernel specification for the nonlocal operator.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    Zero,
    /// B[v](x,t) = integral of k(|y-x|) v(y,t) dy
    SpatialConvolution { radial: RadialKernel },
    /// B[v](x,t) = integral over s<t and y of a(t-s) k(|y-x|) v(y,s) dy ds
    TimeHistory {
        radial: RadialKernel,
        profile: TimeProfile,
    },
}

/// Interface for user-supplied nonlocal couplings; apply, derivative, and
/// adjoint-of-derivative must be supplied together.
pub trait NonlocalCoupling {
    fn apply(&self, v: &SpaceTimeField) -> Result<SpaceTimeField>;
    fn apply_derivative(&self, base: &SpaceTimeField, w: &SpaceTimeField)
        -> Result<SpaceTimeField>;
    fn apply_derivative_adjoint(
        &self,
        base: &SpaceTimeField,
        q: &SpaceTimeField,
    ) -> Result<SpaceTimeField>;
}

/// Dense kernel operator on a fixed grid and time partition.
#[derive(Debug, Clone)]
pub struct NonlocalOperator {
    kernel: KernelSpec,
    grid: Arc<Grid>,
    time: TimeGrid,
    /// W[i][j] = k(|x_i - x_j|) w_j
    weight_matrix: Array2<f64>,
    /// Adjoint of W wrt the weighted inner product: D^{-1} W' D.
    adjoint_matrix: Array2<f64>,
}

impl NonlocalOperator {
    pub fn new(grid: Arc<Grid>, time: TimeGrid, kernel: KernelSpec) -> Result<Self> {
        let n = grid.node_count();
        let r_floor = 0.5
            * grid
                .mesh_widths()
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
        let radial = match &kernel {
            KernelSpec::Zero => None,
            KernelSpec::SpatialConvolution { radial } => Some(radial),
            KernelSpec::TimeHistory { radial, .. } => Some(radial),
        };
        if let Some(r) = radial {
            r.validate(grid.dim())?;
        }
        let mut weight_matrix = Array2::zeros((n, n));
        if let Some(r) = radial {
            for i in 0..n {
                for j in 0..n {
                    weight_matrix[[i, j]] = r.eval(grid.distance(i, j), r_floor) * grid.quad_weights()[j];
                }
            }
        }
        // Adjoint wrt <f,g>_w: D^{-1} W' D, computed numerically so that the
        // duality identity is a genuine check rather than an algebraic tautology.
        let mut adjoint_matrix = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                adjoint_matrix[[i, j]] =
                    weight_matrix[[j, i]] * grid.quad_weights()[j] / grid.quad_weights()[i];
            }
        }
        Ok(Self {
            kernel,
            grid,
            time,
            weight_matrix,
            adjoint_matrix,
        })
    }

    pub fn zero(grid: Arc<Grid>, time: TimeGrid) -> Self {
        Self::new(grid, time, KernelSpec::Zero).expect("zero kernel is always valid")
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn weight_matrix(&self) -> &Array2<f64> {
        &self.weight_matrix
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kernel, KernelSpec::Zero)
    }

    fn check_field(&self, v: &SpaceTimeField) -> Result<()> {
        if !same_grid(&self.grid, v.grid()) {
            return Err(Error::GridMismatch);
        }
        if *v.time() != self.time {
            return Err(Error::ShapeMismatch {
                expected: (self.time.levels(), self.grid.node_count()),
                found: (v.time().levels(), v.grid().node_count()),
            });
        }
        Ok(())
    }

    /// Trapezoid weight of level m inside the history integral over [0, t_n].
    fn history_weight(n: usize, m: usize) -> f64 {
        if n == 0 {
            0.0
        } else if m == 0 || m == n {
            0.5
        } else {
            1.0
        }
    }

    /// Nonlocal term at time level `n`, evaluated from trajectory rows
    /// `0..=n` only; this is the explicit history convention of the
    /// forward stepping.
    pub fn history_term(&self, levels: ArrayView2<f64>, n: usize) -> Array1<f64> {
        let nodes = self.grid.node_count();
        match &self.kernel {
            KernelSpec::Zero => Array1::zeros(nodes),
            KernelSpec::SpatialConvolution { .. } => self.weight_matrix.dot(&levels.row(n)),
            KernelSpec::TimeHistory { profile, .. } => {
                let tau = self.time.tau();
                let mut acc = Array1::zeros(nodes);
                for m in 0..=n {
                    let c = Self::history_weight(n, m);
                    if c == 0.0 {
                        continue;
                    }
                    let a = profile.eval(tau * (n - m) as f64);
                    let wv = self.weight_matrix.dot(&levels.row(m));
                    acc = acc + (tau * c * a) * wv;
                }
                acc
            }
        }
    }

    /// Transposed history term used by the backward sweep: the derivative of
    /// the summed step constraints with respect to the level-`k` state,
    /// applied to the step multipliers (rows `k..n_steps-1` of `multipliers`).
    pub fn adjoint_future_term(&self, multipliers: ArrayView2<f64>, k: usize) -> Array1<f64> {
        let nodes = self.grid.node_count();
        let n_steps = self.time.steps;
        match &self.kernel {
            KernelSpec::Zero => Array1::zeros(nodes),
            KernelSpec::SpatialConvolution { .. } => {
                if k <= n_steps - 1 {
                    self.adjoint_matrix.dot(&multipliers.row(k))
                } else {
                    Array1::zeros(nodes)
                }
            }
            KernelSpec::TimeHistory { profile, .. } => {
                let tau = self.time.tau();
                let mut acc = Array1::zeros(nodes);
                for n in k..=n_steps.saturating_sub(1) {
                    let c = Self::history_weight(n, k);
                    if c == 0.0 {
                        continue;
                    }
                    let a = profile.eval(tau * (n - k) as f64);
                    let wq = self.adjoint_matrix.dot(&multipliers.row(n));
                    acc = acc + (tau * c * a) * wq;
                }
                acc
            }
        }
    }

    /// Explicit space-time matrix whose action equals [`apply`](Self::apply).
    /// Guarded to `levels * nodes <= 4096`.
    pub fn assemble_dense(&self) -> Result<Array2<f64>> {
        let levels = self.time.levels();
        let nodes = self.grid.node_count();
        let size = levels * nodes;
        const LIMIT: usize = 4096;
        if size > LIMIT {
            return Err(Error::SizeGuard { size, limit: LIMIT });
        }
        let mut m = Array2::zeros((size, size));
        match &self.kernel {
            KernelSpec::Zero => {}
            KernelSpec::SpatialConvolution { .. } => {
                for n in 0..levels {
                    for i in 0..nodes {
                        for j in 0..nodes {
                            m[[n * nodes + i, n * nodes + j]] = self.weight_matrix[[i, j]];
                        }
                    }
                }
            }
            KernelSpec::TimeHistory { profile, .. } => {
                let tau = self.time.tau();
                for n in 0..levels {
                    for mm in 0..=n {
                        let c = Self::history_weight(n, mm);
                        if c == 0.0 {
                            continue;
                        }
                        let a = profile.eval(tau * (n - mm) as f64);
                        for i in 0..nodes {
                            for j in 0..nodes {
                                m[[n * nodes + i, mm * nodes + j]] =
                                    tau * c * a * self.weight_matrix[[i, j]];
                            }
                        }
                    }
                }
            }
        }
        Ok(m)
    }

    fn apply_spatial_per_slice(&self, v: &SpaceTimeField, matrix: &Array2<f64>) -> SpaceTimeField {
        let mut out = SpaceTimeField::zeros(self.grid.clone(), self.time.clone());
        for n in 0..self.time.levels() {
            let slice = matrix.dot(&v.slice(n));
            out.values_mut().row_mut(n).assign(&slice);
        }
        out
    }
}

impl NonlocalCoupling for NonlocalOperator {
    fn apply(&self, v: &SpaceTimeField) -> Result<SpaceTimeField> {
        self.check_field(v)?;
        match &self.kernel {
            KernelSpec::Zero => Ok(SpaceTimeField::zeros(self.grid.clone(), self.time.clone())),
            KernelSpec::SpatialConvolution { .. } => {
                Ok(self.apply_spatial_per_slice(v, &self.weight_matrix))
            }
            KernelSpec::TimeHistory { .. } => {
                let mut out = SpaceTimeField::zeros(self.grid.clone(), self.time.clone());
                for n in 0..self.time.levels() {
                    let term = self.history_term(v.values().view(), n);
                    out.values_mut().row_mut(n).assign(&term);
                }
                Ok(out)
            }
        }
    }

    fn apply_derivative(
        &self,
        _base: &SpaceTimeField,
        w: &SpaceTimeField,
    ) -> Result<SpaceTimeField> {
        // Shipped kernels are linear: DB[base] = B for every base.
        self.apply(w)
    }

    fn apply_derivative_adjoint(
        &self,
        _base: &SpaceTimeField,
        q: &SpaceTimeField,
    ) -> Result<SpaceTimeField> {
        self.check_field(q)?;
        match &self.kernel {
            KernelSpec::Zero => Ok(SpaceTimeField::zeros(self.grid.clone(), self.time.clone())),
            KernelSpec::SpatialConvolution { .. } => {
                Ok(self.apply_spatial_per_slice(q, &self.adjoint_matrix))
            }
            KernelSpec::TimeHistory { profile, .. } => {
                // Adjoint wrt the trapezoid space-time inner product:
                // out^m = (1/theta_m) sum_{n>=m} tau theta_n c_{n,m} a(t_n - t_m) W* q^n
                let tau = self.time.tau();
                let levels = self.time.levels();
                let mut out = SpaceTimeField::zeros(self.grid.clone(), self.time.clone());
                for m in 0..levels {
                    let theta_m = self.time.trapezoid_weight(m);
                    let mut acc = Array1::zeros(self.grid.node_count());
                    for n in m..levels {
                        let c = Self::history_weight(n, m);
                        if c == 0.0 {
                            continue;
                        }
                        let theta_n = self.time.trapezoid_weight(n);
                        let a = profile.eval(tau * (n - m) as f64);
                        let wq = self.adjoint_matrix.dot(&q.slice(n));
                        acc = acc + (tau * theta_n * c * a / theta_m) * wq;
                    }
                    out.values_mut().row_mut(m).assign(&acc);
                }
                Ok(out)
            }
        }
    }
}

/// Row sums of the weight matrix: the exact discrete value of
/// `integral k(|y - x_i|) dy`.
pub fn kernel_row_sums(op: &NonlocalOperator) -> Array1<f64> {
    let n = op.grid.node_count();
    let ones = Array1::from_elem(n, 1.0);
    op.weight_matrix.dot(&ones)
}

/// Apply a dense space-time matrix to a field (oracle helper).
pub fn apply_dense(
    m: &Array2<f64>,
    v: &SpaceTimeField,
) -> SpaceTimeField {
    let levels = v.time().levels();
    let nodes = v.grid().node_count();
    let flat: Array1<f64> = Array1::from_iter(v.values().iter().copied());
    let out_flat = m.dot(&flat);
    let mut out = SpaceTimeField::zeros(v.grid().clone(), v.time().clone());
    for n in 0..levels {
        for i in 0..nodes {
            out.values_mut()[[n, i]] = out_flat[n * nodes + i];
        }
    }
    out
}

/// Space-time quadrature weights as one flat vector (level-major), matching
/// the layout of [`assemble_dense`](NonlocalOperator::assemble_dense).
pub fn spacetime_weights(grid: &Grid, time: &TimeGrid) -> Array1<f64> {
    let tau = time.tau();
    let mut w = Array1::zeros(time.levels() * grid.node_count());
    for n in 0..time.levels() {
        let theta = time.trapezoid_weight(n);
        for i in 0..grid.node_count() {
            w[n * grid.node_count() + i] = tau * theta * grid.quad_weights()[i];
        }
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(cells: usize, steps: usize) -> (Arc<Grid>, TimeGrid) {
        let grid = Grid::shared(GridSpec::interval(1.0, cells)).unwrap();
        let time = TimeGrid::new(1.0, steps).unwrap();
        (grid, time)
    }

    fn gaussian_op(grid: Arc<Grid>, time: TimeGrid) -> NonlocalOperator {
        NonlocalOperator::new(
            grid,
            time,
            KernelSpec::SpatialConvolution {
                radial: RadialKernel::Gaussian {
                    sigma: 0.2,
                    amplitude: 0.5,
                },
            },
        )
        .unwrap()
    }

    fn random_field(grid: &Arc<Grid>, time: &TimeGrid, rng: &mut ChaCha8Rng) -> SpaceTimeField {
        let mut f = SpaceTimeField::zeros(grid.clone(), time.clone());
        for v in f.values_mut().iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        f
    }

    #[test]
    fn zero_input_maps_to_zero() {
        let (grid, time) = setup(8, 4);
        let op = gaussian_op(grid.clone(), time.clone());
        let z = SpaceTimeField::zeros(grid, time);
        let out = op.apply(&z).unwrap();
        assert_eq!(out.max_abs(), 0.0);
    }

    #[test]
    fn constant_input_matches_row_sums() {
        let (grid, time) = setup(16, 4);
        let op = gaussian_op(grid.clone(), time.clone());
        let ones = SpaceTimeField::constant(grid.clone(), time, 1.0);
        let out = op.apply(&ones).unwrap();
        let sums = kernel_row_sums(&op);
        for n in 0..out.time().levels() {
            for i in 0..grid.node_count() {
                assert_abs_diff_eq!(out.values()[[n, i]], sums[i], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn history_kernel_grows_linearly_in_time() {
        let (grid, time) = setup(12, 16);
        let op = NonlocalOperator::new(
            grid.clone(),
            time.clone(),
            KernelSpec::TimeHistory {
                radial: RadialKernel::Gaussian {
                    sigma: 0.05,
                    amplitude: 1.0,
                },
                profile: TimeProfile::Constant { a0: 1.0 },
            },
        )
        .unwrap();
        let ones = SpaceTimeField::constant(grid.clone(), time.clone(), 1.0);
        let out = op.apply(&ones).unwrap();
        let sums = kernel_row_sums(&op);
        // (B 1)(x, t_n) = t_n * row_sum(x): exact for the constant profile
        for n in 1..time.levels() {
            let t = time.time(n);
            for i in 0..grid.node_count() {
                assert_relative_eq!(out.values()[[n, i]], t * sums[i], max_relative = 0.02);
            }
        }
    }

    #[test]
    fn derivative_is_base_independent_for_linear_kernels() {
        let (grid, time) = setup(8, 6);
        let op = gaussian_op(grid.clone(), time.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let base1 = random_field(&grid, &time, &mut rng);
        let base2 = random_field(&grid, &time, &mut rng);
        let w = random_field(&grid, &time, &mut rng);
        let d1 = op.apply_derivative(&base1, &w).unwrap();
        let d2 = op.apply_derivative(&base2, &w).unwrap();
        let b = op.apply(&w).unwrap();
        assert_eq!(d1.values(), d2.values());
        assert_eq!(d1.values(), b.values());
    }

    #[test]
    fn finite_difference_derivative_check() {
        let (grid, time) = setup(8, 6);
        let op = gaussian_op(grid.clone(), time.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = random_field(&grid, &time, &mut rng);
        let w = random_field(&grid, &time, &mut rng);
        for eps in [1e-2, 1e-3] {
            let vp = v.lin_comb(1.0, &w, eps).unwrap();
            let bvp = op.apply(&vp).unwrap();
            let bv = op.apply(&v).unwrap();
            let dbw = op.apply_derivative(&v, &w).unwrap();
            // linear kernel: remainder is exactly zero up to roundoff
            let resid = bvp
                .lin_comb(1.0, &bv, -1.0)
                .unwrap()
                .lin_comb(1.0, &dbw, -eps)
                .unwrap();
            assert!(resid.norm_l2q() / eps <= 1e-12);
        }
    }

    #[test]
    fn symmetric_kernel_adjoint_equals_forward() {
        let (grid, time) = setup(10, 5);
        let op = gaussian_op(grid.clone(), time.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random_field(&grid, &time, &mut rng);
        let fwd = op.apply_derivative(&q, &q).unwrap();
        let adj = op.apply_derivative_adjoint(&q, &q).unwrap();
        let diff = fwd.lin_comb(1.0, &adj, -1.0).unwrap();
        assert!(diff.max_abs() <= 1e-12 * fwd.max_abs().max(1.0));
    }

    #[test]
    fn duality_identity_against_dense_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (grid, time) = setup(15, 8);
        for kernel in [
            KernelSpec::SpatialConvolution {
                radial: RadialKernel::TruncatedPower {
                    alpha: 0.5,
                    amplitude: 0.3,
                    r_min: None,
                },
            },
            KernelSpec::TimeHistory {
                radial: RadialKernel::Gaussian {
                    sigma: 0.15,
                    amplitude: 0.8,
                },
                profile: TimeProfile::Exponential { a0: 1.0, rate: 2.0 },
            },
        ] {
            let op = NonlocalOperator::new(grid.clone(), time.clone(), kernel).unwrap();
            for _ in 0..20 {
                let q = random_field(&grid, &time, &mut rng);
                let w = random_field(&grid, &time, &mut rng);
                let lhs = op
                    .apply_derivative_adjoint(&q, &q)
                    .unwrap()
                    .inner_l2q(&w)
                    .unwrap();
                let rhs = q.inner_l2q(&op.apply_derivative(&q, &w).unwrap()).unwrap();
                assert_relative_eq!(lhs, rhs, max_relative = 1e-11, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn dense_assembly_matches_apply() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (grid, time) = setup(9, 7);
        for kernel in [
            KernelSpec::SpatialConvolution {
                radial: RadialKernel::Gaussian {
                    sigma: 0.3,
                    amplitude: 1.1,
                },
            },
            KernelSpec::TimeHistory {
                radial: RadialKernel::Gaussian {
                    sigma: 0.3,
                    amplitude: 1.1,
                },
                profile: TimeProfile::Constant { a0: 0.7 },
            },
        ] {
            let op = NonlocalOperator::new(grid.clone(), time.clone(), kernel).unwrap();
            let m = op.assemble_dense().unwrap();
            let v = random_field(&grid, &time, &mut rng);
            let direct = op.apply(&v).unwrap();
            let via_matrix = apply_dense(&m, &v);
            let diff = direct.lin_comb(1.0, &via_matrix, -1.0).unwrap();
            assert!(diff.max_abs() <= 1e-12 * direct.max_abs().max(1.0));
        }
    }

    #[test]
    fn zero_kernel_assembles_to_zero_matrix() {
        let (grid, time) = setup(4, 3);
        let op = NonlocalOperator::zero(grid, time);
        let m = op.assemble_dense().unwrap();
        assert!(m.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn size_guard_rejects_large_assembly() {
        let (grid, time) = setup(512, 16);
        let op = gaussian_op(grid, time);
        assert!(matches!(
            op.assemble_dense(),
            Err(Error::SizeGuard { .. })
        ));
    }

    #[test]
    fn causality_is_bitwise() {
        let (grid, time) = setup(8, 10);
        let op = NonlocalOperator::new(
            grid.clone(),
            time.clone(),
            KernelSpec::TimeHistory {
                radial: RadialKernel::Gaussian {
                    sigma: 0.2,
                    amplitude: 0.9,
                },
                profile: TimeProfile::Exponential { a0: 1.0, rate: 1.0 },
            },
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let v = random_field(&grid, &time, &mut rng);
        let cut = 5;
        let mut truncated = v.clone();
        for n in cut + 1..time.levels() {
            truncated.values_mut().row_mut(n).fill(0.0);
        }
        let full = op.apply(&v).unwrap();
        let trunc = op.apply(&truncated).unwrap();
        for n in 0..=cut {
            assert_eq!(full.values().row(n), trunc.values().row(n), "level {n}");
        }
    }

    #[test]
    fn linearity_of_apply() {
        let (grid, time) = setup(8, 6);
        let op = gaussian_op(grid.clone(), time.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let v = random_field(&grid, &time, &mut rng);
        let w = random_field(&grid, &time, &mut rng);
        let a = 1.3;
        let b = -0.7;
        let combined = op.apply(&v.lin_comb(a, &w, b).unwrap()).unwrap();
        let separate = op
            .apply(&v)
            .unwrap()
            .lin_comb(a, &op.apply(&w).unwrap(), b)
            .unwrap();
        let diff = combined.lin_comb(1.0, &separate, -1.0).unwrap();
        assert!(diff.norm_l2q() <= 1e-12 * combined.norm_l2q().max(1.0));
    }

    #[test]
    fn truncated_power_needs_small_exponent() {
        let (grid, time) = setup(8, 4);
        let bad = NonlocalOperator::new(
            grid,
            time,
            KernelSpec::SpatialConvolution {
                radial: RadialKernel::TruncatedPower {
                    alpha: 1.5,
                    amplitude: 1.0,
                    r_min: None,
                },
            },
        );
        assert!(bad.is_err());
    }
}
