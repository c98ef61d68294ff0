//! Brute-force oracles used by the verification batteries. Each one follows
//! a computation path independent of the solver it validates.

use ndarray::{Array1, Array2};

use crate::adjoint::Targets;
use crate::error::Result;
use crate::field::{SpaceTimeField, TimeGrid};
use crate::linalg::{solve_dense, solve_tridiagonal};
use crate::nonlocal::{KernelSpec, NonlocalOperator};
use crate::physics::PotentialSpec;
use crate::state::StateTrajectory;

/// Discretize-then-differentiate adjoint: assembles the Jacobian of the
/// stepping map with respect to all states, solves the transposed system for
/// the Lagrange multipliers of the discrete cost, and unfolds them into
/// (p, q) fields with the step-multiplier indexing (level k holds the
/// multiplier of step k, terminal level zero).
///
/// Feasible for `2 * nodes * steps` up to a couple of thousand unknowns.
pub fn dense_adjoint_oracle(
    base: &StateTrajectory,
    physics: &PotentialSpec,
    op: &NonlocalOperator,
    targets: &Targets,
    betas: [f64; 3],
) -> Result<(SpaceTimeField, SpaceTimeField)> {
    let grid = base.rho.grid().clone();
    let time = base.rho.time().clone();
    let tau = time.tau();
    let nodes = grid.node_count();
    let steps = time.steps;
    let dim = 2 * nodes * steps;
    let lap = grid.laplacian_matrix();
    let w_big = op.weight_matrix();

    // state column index: level m in 1..=steps, component (rho | mu), node j
    let col_rho = |m: usize, j: usize| (m - 1) * 2 * nodes + j;
    let col_mu = |m: usize, j: usize| (m - 1) * 2 * nodes + nodes + j;
    // constraint row index: step k in 0..steps, equation (rho | mu), node i
    let row_rho = |k: usize, i: usize| k * 2 * nodes + i;
    let row_mu = |k: usize, i: usize| k * 2 * nodes + nodes + i;

    let mut a = Array2::<f64>::zeros((dim, dim));
    for k in 0..steps {
        let rho_old = base.rho.values().row(k);
        let rho_new = base.rho.values().row(k + 1);
        let mu_old = base.mu.values().row(k);
        let mu_new = base.mu.values().row(k + 1);
        for i in 0..nodes {
            let gp = physics.g_prime(rho_old[i]);
            let gpp = physics.g_second(rho_old[i]);
            let c0 = 1.0 + 2.0 * physics.g_eval(rho_old[i]);
            // rho equation, new-level dependencies
            a[[row_rho(k, i), col_rho(k + 1, i)]] +=
                1.0 / tau + physics.f_second(rho_new[i]).value;
            a[[row_rho(k, i), col_mu(k + 1, i)]] += -gp;
            // mu equation, new-level dependencies
            for j in 0..nodes {
                a[[row_mu(k, i), col_mu(k + 1, j)]] += -lap[[i, j]];
            }
            a[[row_mu(k, i), col_mu(k + 1, i)]] +=
                c0 / tau + gp * (rho_new[i] - rho_old[i]) / tau;
            a[[row_mu(k, i), col_rho(k + 1, i)]] += mu_new[i] * gp / tau;
            // old-level dependencies (level k is a state only for k >= 1)
            if k >= 1 {
                a[[row_rho(k, i), col_rho(k, i)]] += -1.0 / tau - mu_new[i] * gpp;
                a[[row_mu(k, i), col_mu(k, i)]] += -c0 / tau;
                a[[row_mu(k, i), col_rho(k, i)]] += 2.0 * gp * (mu_new[i] - mu_old[i]) / tau
                    + mu_new[i] * gpp * (rho_new[i] - rho_old[i]) / tau
                    - mu_new[i] * gp / tau;
            }
            // nonlocal history dependencies on levels 1..=k
            match op.kernel() {
                KernelSpec::Zero => {}
                KernelSpec::SpatialConvolution { .. } => {
                    if k >= 1 {
                        for j in 0..nodes {
                            a[[row_rho(k, i), col_rho(k, j)]] += w_big[[i, j]];
                        }
                    }
                }
                KernelSpec::TimeHistory { profile, .. } => {
                    for m in 1..=k {
                        let c = if m == 0 || m == k { 0.5 } else { 1.0 };
                        let c = if k == 0 { 0.0 } else { c };
                        let aw = profile_eval(profile, tau * (k - m) as f64);
                        for j in 0..nodes {
                            a[[row_rho(k, i), col_rho(m, j)]] += tau * c * aw * w_big[[i, j]];
                        }
                    }
                }
            }
        }
    }

    // cost gradient wrt states
    let mut j_x = Array1::<f64>::zeros(dim);
    for m in 1..=steps {
        let theta = time.trapezoid_weight(m);
        for i in 0..nodes {
            let w = grid.quad_weights()[i];
            j_x[col_rho(m, i)] = tau
                * theta
                * w
                * betas[0]
                * (base.rho.values()[[m, i]] - targets.rho_q.values()[[m, i]]);
            j_x[col_mu(m, i)] = tau
                * theta
                * w
                * betas[1]
                * (base.mu.values()[[m, i]] - targets.mu_q.values()[[m, i]]);
        }
    }

    // transpose solve: A' lambda = -j_x
    let at = a.t().to_owned();
    let rhs = j_x.map(|v| -v);
    let lambda = solve_dense(&at, &rhs, 0)?;

    // unfold multipliers into fields: p^k = -lambda_mu(k)/(tau w),
    // q^k = -lambda_rho(k)/(tau w)
    let mut p = SpaceTimeField::zeros(grid.clone(), time.clone());
    let mut q = SpaceTimeField::zeros(grid.clone(), time.clone());
    for k in 0..steps {
        for i in 0..nodes {
            let w = grid.quad_weights()[i];
            p.values_mut()[[k, i]] = -lambda[row_mu(k, i)] / (tau * w);
            q.values_mut()[[k, i]] = -lambda[row_rho(k, i)] / (tau * w);
        }
    }
    Ok((p, q))
}

fn profile_eval(profile: &crate::nonlocal::TimeProfile, d: f64) -> f64 {
    match profile {
        crate::nonlocal::TimeProfile::Constant { a0 } => *a0,
        crate::nonlocal::TimeProfile::Exponential { a0, rate } => a0 * (-rate * d).exp(),
    }
}

/// Tridiagonal Gram matrix of the per-node H1(0,T) form (duplicated here so
/// the oracle does not share code with the projection under test).
struct TimeForm {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
}

impl TimeForm {
    fn new(time: &TimeGrid) -> Self {
        let levels = time.levels();
        let tau = time.tau();
        let mut lower = vec![0.0; levels];
        let mut diag = vec![0.0; levels];
        let mut upper = vec![0.0; levels];
        for n in 0..levels {
            diag[n] = tau * time.trapezoid_weight(n);
            let touching = if n == 0 || n == levels - 1 { 1.0 } else { 2.0 };
            diag[n] += touching / tau;
            if n > 0 {
                lower[n] = -1.0 / tau;
            }
            if n + 1 < levels {
                upper[n] = -1.0 / tau;
            }
        }
        Self { lower, diag, upper }
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = v.len();
        let mut out = vec![0.0; n];
        for i in 0..n {
            out[i] = self.diag[i] * v[i];
            if i > 0 {
                out[i] += self.lower[i] * v[i - 1];
            }
            if i + 1 < n {
                out[i] += self.upper[i] * v[i + 1];
            }
        }
        out
    }
}

/// Brute-force projection oracle for a spatially constant control on a short
/// time axis: enumerates every box face combination (free / at zero / at the
/// threshold) with and without an active ball multiplier, keeps the feasible
/// candidates, and returns the one with the smallest metric distance.
///
/// Valid for spatially constant data on a unit-volume domain, where the
/// per-node H1-in-time form and the full metric coincide.
pub fn kkt_projection_oracle(time: &TimeGrid, z: &[f64], umax: f64, radius: f64) -> Vec<f64> {
    let form = TimeForm::new(time);
    let n = z.len();
    let hz = form.apply(z);
    let up = vec![umax; n];
    let norm_sq = |v: &[f64]| -> f64 {
        let hv = form.apply(v);
        v.iter().zip(hv.iter()).map(|(a, b)| a * b).sum()
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    let n_cases = 3_usize.pow(n as u32);
    for case in 0..n_cases {
        let mut kind = Vec::with_capacity(n);
        let mut c = case;
        for _ in 0..n {
            kind.push(c % 3); // 0 free, 1 at lower (zero), 2 at upper
            c /= 3;
        }
        let solve_with = |nu: f64| -> Option<Vec<f64>> {
            let mut lower = vec![0.0; n];
            let mut diag = vec![0.0; n];
            let mut upper = vec![0.0; n];
            let mut rhs = vec![0.0; n];
            for i in 0..n {
                match kind[i] {
                    0 => {
                        lower[i] = form.lower[i];
                        diag[i] = form.diag[i];
                        upper[i] = form.upper[i];
                        rhs[i] = hz[i] / (1.0 + nu);
                    }
                    1 => {
                        diag[i] = 1.0;
                        rhs[i] = 0.0;
                    }
                    _ => {
                        diag[i] = 1.0;
                        rhs[i] = up[i];
                    }
                }
            }
            for i in 0..n {
                if kind[i] == 0 {
                    if i > 0 && kind[i - 1] != 0 {
                        let vb = if kind[i - 1] == 1 { 0.0 } else { up[i - 1] };
                        rhs[i] -= form.lower[i] * vb;
                        lower[i] = 0.0;
                    }
                    if i + 1 < n && kind[i + 1] != 0 {
                        let vb = if kind[i + 1] == 1 { 0.0 } else { up[i + 1] };
                        rhs[i] -= form.upper[i] * vb;
                        upper[i] = 0.0;
                    }
                } else {
                    lower[i] = 0.0;
                    upper[i] = 0.0;
                }
            }
            solve_tridiagonal(&lower, &diag, &upper, &rhs)
        };
        for ball_active in [false, true] {
            let candidate = if !ball_active {
                solve_with(0.0)
            } else {
                let f = |nu: f64| solve_with(nu).map(|v| norm_sq(&v).sqrt() - radius);
                let (mut a, mut b) = (0.0, 1.0);
                let Some(fa) = f(a) else { continue };
                if fa < 0.0 {
                    continue; // ball slack in this configuration
                }
                let mut fb = f(b);
                let mut grow = 0;
                while fb.map_or(false, |x| x > 0.0) && grow < 80 {
                    b *= 2.0;
                    fb = f(b);
                    grow += 1;
                }
                if fb.is_none() {
                    continue;
                }
                for _ in 0..200 {
                    let mid = 0.5 * (a + b);
                    match f(mid) {
                        Some(x) if x > 0.0 => a = mid,
                        Some(_) => b = mid,
                        None => break,
                    }
                }
                solve_with(0.5 * (a + b))
            };
            let Some(v) = candidate else { continue };
            let feasible = v
                .iter()
                .zip(up.iter())
                .all(|(x, u)| *x >= -1e-9 && *x <= *u + 1e-9)
                && norm_sq(&v).sqrt() <= radius + 1e-7;
            if !feasible {
                continue;
            }
            let d: Vec<f64> = v.iter().zip(z.iter()).map(|(a, b)| a - b).collect();
            let obj = norm_sq(&d);
            if best.as_ref().map_or(true, |(o, _)| obj < *o) {
                best = Some((obj, v));
            }
        }
    }
    best.expect("enumeration found no feasible candidate").1
}
