//! Forward solve of the coupled state system and post-hoc certification of
//! the uniform bounds on the solution.
//!
//! Stepping scheme (semi-implicit, coefficients of g lagged at the old time
//! level, nonlocal term explicit in the history, F' implicit):
//!
//! ```text
//! (1+2g(rho^n)) (mu^{n+1}-mu^n)/tau + mu^{n+1} g'(rho^n) (rho^{n+1}-rho^n)/tau
//!     - Lap mu^{n+1} = u^{n+1}
//! (rho^{n+1}-rho^n)/tau + B[rho]^n_hist + F'(rho^{n+1}) = mu^{n+1} g'(rho^n)
//! ```
//!
//! Each step runs damped Newton on the pair (rho^{n+1}, mu^{n+1}); the
//! 2x2-block Jacobian is reduced by eliminating the rho block (diagonal), so
//! one dense solve of node dimension remains.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::field::{ScalarField, SpaceTimeField};
use crate::grid::Grid;
use crate::linalg::solve_dense;
use crate::nonlocal::NonlocalOperator;
use crate::physics::PotentialSpec;

/// Initial order parameter and chemical potential.
#[derive(Debug, Clone)]
pub struct InitialData {
    pub rho0: ScalarField,
    pub mu0: ScalarField,
}

impl InitialData {
    pub fn validate(&self) -> Result<()> {
        if !self.rho0.is_finite() || !self.mu0.is_finite() {
            return Err(Error::NonFinite("initial data".into()));
        }
        let rho_min = self.rho0.values().iter().cloned().fold(f64::INFINITY, f64::min);
        let rho_max = self.rho0.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(rho_min > 0.0 && rho_max < 1.0) {
            return Err(Error::InvalidSpec(format!(
                "rho0 must take values strictly inside (0,1); found range [{rho_min}, {rho_max}]"
            )));
        }
        let mu_min = self.mu0.values().iter().cloned().fold(f64::INFINITY, f64::min);
        if mu_min < 0.0 {
            return Err(Error::InvalidSpec(format!(
                "mu0 must be nonnegative; found minimum {mu_min}"
            )));
        }
        Ok(())
    }
}

/// Tolerances and iteration limits for the per-step Newton solve.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub newton_tol: f64,
    pub max_newton_iters: usize,
    pub max_damping_halvings: usize,
    /// Tolerance below which a negative mu is flagged as a bound violation.
    pub sign_tol: f64,
    /// Residual acceptance threshold for the direct linear solves of the
    /// linearized and adjoint systems.
    pub linear_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            newton_tol: 1e-10,
            max_newton_iters: 30,
            max_damping_halvings: 30,
            sign_tol: 1e-10,
            linear_tol: 1e-8,
        }
    }
}

/// Per-step solver diagnostics.
#[derive(Debug, Clone, Default)]
pub struct StateDiagnostics {
    pub newton_iters: Vec<usize>,
    pub residual_norms: Vec<f64>,
    /// True when some converged state left (0,1) in rho or dipped below
    /// -sign_tol in mu; recorded, not fatal.
    pub bound_violation: bool,
    /// True when the potential safeguard fired while evaluating the residual
    /// at a converged state.
    pub clamp_fired_at_converged: bool,
    pub rho_min: f64,
    pub rho_max: f64,
    pub mu_min: f64,
    pub mu_max: f64,
}

/// Converged trajectory of the state system.
#[derive(Debug, Clone)]
pub struct StateTrajectory {
    pub rho: SpaceTimeField,
    pub mu: SpaceTimeField,
    pub diagnostics: StateDiagnostics,
}

struct StepWorkspace {
    /// g(rho^n), g'(rho^n) at the lagged level.
    g_lag: Array1<f64>,
    gp_lag: Array1<f64>,
    /// Explicit nonlocal history term at the old level.
    b_hist: Array1<f64>,
}

/// Residual of the two stepping equations at a candidate (rho, mu), in the
/// form the scheme is stated in (divided by tau where the time difference
/// quotients appear).
#[allow(clippy::too_many_arguments)]
fn step_residual(
    grid: &Grid,
    physics: &PotentialSpec,
    ws: &StepWorkspace,
    tau: f64,
    rho_old: &Array1<f64>,
    mu_old: &Array1<f64>,
    u_new: &Array1<f64>,
    rho: &Array1<f64>,
    mu: &Array1<f64>,
    clamp_flag: &mut bool,
) -> (Array1<f64>, Array1<f64>) {
    let n = grid.node_count();
    let lap_mu = grid.apply_laplacian(mu.view());
    let mut r_mu = Array1::zeros(n);
    let mut r_rho = Array1::zeros(n);
    for i in 0..n {
        let c0 = 1.0 + 2.0 * ws.g_lag[i];
        let fp = physics.f_prime(rho[i]);
        *clamp_flag |= fp.clamped;
        r_mu[i] = c0 * (mu[i] - mu_old[i]) / tau + mu[i] * ws.gp_lag[i] * (rho[i] - rho_old[i]) / tau
            - lap_mu[i]
            - u_new[i];
        r_rho[i] = (rho[i] - rho_old[i]) / tau + ws.b_hist[i] + fp.value - mu[i] * ws.gp_lag[i];
    }
    (r_mu, r_rho)
}

fn combined_norm(grid: &Grid, r_mu: &Array1<f64>, r_rho: &Array1<f64>) -> f64 {
    (grid.inner(r_mu.view(), r_mu.view()) + grid.inner(r_rho.view(), r_rho.view())).sqrt()
}

/// One Newton linear solve: returns the updates (d_rho, d_mu). The rho block
/// of the Jacobian is diagonal, so it is eliminated and a dense system in the
/// mu update remains.
#[allow(clippy::too_many_arguments)]
fn newton_direction(
    grid: &Grid,
    physics: &PotentialSpec,
    ws: &StepWorkspace,
    tau: f64,
    rho_old: &Array1<f64>,
    rho: &Array1<f64>,
    mu: &Array1<f64>,
    r_mu: &Array1<f64>,
    r_rho: &Array1<f64>,
    step: usize,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let n = grid.node_count();
    // Diagonal rho block: 1/tau + F''(rho).
    let mut d_rho_diag = Array1::zeros(n);
    for i in 0..n {
        let d = 1.0 / tau + physics.f_second(rho[i]).value;
        if d.abs() < 1e-14 {
            return Err(Error::LinearSolveFailure { step });
        }
        d_rho_diag[i] = d;
    }
    // Schur complement in the mu unknowns:
    //   [diag(c0/tau + g' drho/tau) - Lap + M D^{-1} g'] dmu = -r_mu + M D^{-1} r_rho
    // with M = diag(mu g'/tau).
    let lap = grid.laplacian_matrix();
    let mut a = Array2::zeros((n, n));
    let mut rhs = Array1::zeros(n);
    for i in 0..n {
        let c0 = 1.0 + 2.0 * ws.g_lag[i];
        let m_i = mu[i] * ws.gp_lag[i] / tau;
        for j in 0..n {
            a[[i, j]] = -lap[[i, j]];
        }
        a[[i, i]] += c0 / tau + ws.gp_lag[i] * (rho[i] - rho_old[i]) / tau
            + m_i * ws.gp_lag[i] / d_rho_diag[i];
        rhs[i] = -r_mu[i] + m_i * r_rho[i] / d_rho_diag[i];
    }
    let d_mu = solve_dense(&a, &rhs, step)?;
    let mut d_rho = Array1::zeros(n);
    for i in 0..n {
        d_rho[i] = (-r_rho[i] + ws.gp_lag[i] * d_mu[i]) / d_rho_diag[i];
    }
    Ok((d_rho, d_mu))
}

/// Forward solve of the state system.
pub fn solve_state(
    physics: &PotentialSpec,
    op: &NonlocalOperator,
    u: &SpaceTimeField,
    init: &InitialData,
    cfg: &SolverConfig,
) -> Result<StateTrajectory> {
    init.validate()?;
    u.assert_finite("control")?;
    let grid = u.grid().clone();
    let time = u.time().clone();
    let tau = time.tau();
    let n = grid.node_count();

    let mut rho = SpaceTimeField::zeros(grid.clone(), time.clone());
    let mut mu = SpaceTimeField::zeros(grid.clone(), time.clone());
    rho.values_mut().row_mut(0).assign(init.rho0.values());
    mu.values_mut().row_mut(0).assign(init.mu0.values());

    let mut diagnostics = StateDiagnostics {
        rho_min: f64::INFINITY,
        rho_max: f64::NEG_INFINITY,
        mu_min: f64::INFINITY,
        mu_max: f64::NEG_INFINITY,
        ..Default::default()
    };

    for step in 0..time.steps {
        let rho_old = rho.values().row(step).to_owned();
        let mu_old = mu.values().row(step).to_owned();
        let u_new = u.values().row(step + 1).to_owned();

        let mut ws = StepWorkspace {
            g_lag: Array1::zeros(n),
            gp_lag: Array1::zeros(n),
            b_hist: Array1::zeros(n),
        };
        for i in 0..n {
            ws.g_lag[i] = physics.g_eval(rho_old[i]);
            ws.gp_lag[i] = physics.g_prime(rho_old[i]);
        }
        ws.b_hist = op.history_term(rho.values().view(), step);

        // Newton with damping; initial guess = previous time level.
        let mut rho_new = rho_old.clone();
        let mut mu_new = mu_old.clone();
        let mut scratch_clamp = false;
        let (mut r_mu, mut r_rho) = step_residual(
            &grid, physics, &ws, tau, &rho_old, &mu_old, &u_new, &rho_new, &mu_new,
            &mut scratch_clamp,
        );
        let mut res_norm = combined_norm(&grid, &r_mu, &r_rho);
        let mut iters = 0;
        while res_norm > cfg.newton_tol {
            if iters >= cfg.max_newton_iters {
                return Err(Error::NonConvergence {
                    step,
                    residual: res_norm,
                });
            }
            let (d_rho, d_mu) = newton_direction(
                &grid, physics, &ws, tau, &rho_old, &rho_new, &mu_new, &r_mu, &r_rho, step,
            )?;
            // Damped update: halve until the residual decreases.
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..=cfg.max_damping_halvings {
                let cand_rho = &rho_new + &(alpha * &d_rho);
                let cand_mu = &mu_new + &(alpha * &d_mu);
                let mut clamp = false;
                let (c_mu, c_rho) = step_residual(
                    &grid, physics, &ws, tau, &rho_old, &mu_old, &u_new, &cand_rho, &cand_mu,
                    &mut clamp,
                );
                let cand_norm = combined_norm(&grid, &c_mu, &c_rho);
                if cand_norm.is_finite() && (cand_norm < res_norm || cand_norm <= cfg.newton_tol) {
                    rho_new = cand_rho;
                    mu_new = cand_mu;
                    r_mu = c_mu;
                    r_rho = c_rho;
                    res_norm = cand_norm;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                return Err(Error::NonConvergence {
                    step,
                    residual: res_norm,
                });
            }
            iters += 1;
        }

        // Converged-state bookkeeping.
        let mut clamp_at_converged = false;
        let _ = step_residual(
            &grid, physics, &ws, tau, &rho_old, &mu_old, &u_new, &rho_new, &mu_new,
            &mut clamp_at_converged,
        );
        diagnostics.clamp_fired_at_converged |= clamp_at_converged;
        for i in 0..n {
            diagnostics.rho_min = diagnostics.rho_min.min(rho_new[i]);
            diagnostics.rho_max = diagnostics.rho_max.max(rho_new[i]);
            diagnostics.mu_min = diagnostics.mu_min.min(mu_new[i]);
            diagnostics.mu_max = diagnostics.mu_max.max(mu_new[i]);
        }
        if rho_new.iter().any(|&r| r <= 0.0 || r >= 1.0)
            || mu_new.iter().any(|&m| m < -cfg.sign_tol)
        {
            diagnostics.bound_violation = true;
        }
        diagnostics.newton_iters.push(iters);
        diagnostics.residual_norms.push(res_norm);

        rho.values_mut().row_mut(step + 1).assign(&rho_new);
        mu.values_mut().row_mut(step + 1).assign(&mu_new);
    }

    rho.assert_finite("rho trajectory")?;
    mu.assert_finite("mu trajectory")?;
    Ok(StateTrajectory {
        rho,
        mu,
        diagnostics,
    })
}

/// Independent re-check of the stepping equations: recomputes both residuals
/// from scratch for a given trajectory and returns the per-step weighted
/// norms.
pub fn state_residual(
    physics: &PotentialSpec,
    op: &NonlocalOperator,
    u: &SpaceTimeField,
    traj: &StateTrajectory,
) -> Result<Vec<f64>> {
    u.check_compatible(&traj.rho)?;
    u.check_compatible(&traj.mu)?;
    let grid = u.grid().clone();
    let time = u.time().clone();
    let tau = time.tau();
    let n = grid.node_count();
    let mut norms = Vec::with_capacity(time.steps);
    for step in 0..time.steps {
        let rho_old = traj.rho.values().row(step);
        let mu_old = traj.mu.values().row(step);
        let rho_new = traj.rho.values().row(step + 1);
        let mu_new = traj.mu.values().row(step + 1);
        let u_new = u.values().row(step + 1);
        let b_hist = op.history_term(traj.rho.values().view(), step);
        let lap_mu = grid.apply_laplacian(mu_new);
        let mut r_mu = Array1::zeros(n);
        let mut r_rho = Array1::zeros(n);
        for i in 0..n {
            let g = physics.g_eval(rho_old[i]);
            let gp = physics.g_prime(rho_old[i]);
            r_mu[i] = (1.0 + 2.0 * g) * (mu_new[i] - mu_old[i]) / tau
                + mu_new[i] * gp * (rho_new[i] - rho_old[i]) / tau
                - lap_mu[i]
                - u_new[i];
            r_rho[i] = (rho_new[i] - rho_old[i]) / tau + b_hist[i]
                + physics.f_prime(rho_new[i]).value
                - mu_new[i] * gp;
        }
        norms.push(combined_norm(&grid, &r_mu, &r_rho));
    }
    Ok(norms)
}

/// Stability probe result: ratios of state differences to control
/// differences, per truncation time.
#[derive(Debug, Clone)]
pub struct StabilityReport {
    /// One ratio per truncation level 1..=steps; `None` marks levels where
    /// the control difference vanishes.
    pub ratios: Vec<Option<f64>>,
    /// Largest finite ratio (empirical stability constant).
    pub max_ratio: Option<f64>,
    /// True when u1 == u2 so the probe is undefined everywhere.
    pub degenerate: bool,
}

/// Runs two forward solves and reports, for each truncation time t, the
/// ratio of the state-difference norms to the control-difference norm:
/// `(||rho1-rho2||_{H1(0,t;H)} + ||mu1-mu2||_{H1(0,t;H) + Linf(0,t;V)}) /
/// ||u1-u2||_{L2(0,t;H)}`.
pub fn stability_probe(
    physics: &PotentialSpec,
    op: &NonlocalOperator,
    u1: &SpaceTimeField,
    u2: &SpaceTimeField,
    init: &InitialData,
    cfg: &SolverConfig,
) -> Result<StabilityReport> {
    u1.check_compatible(u2)?;
    let t1 = solve_state(physics, op, u1, init, cfg)?;
    let t2 = solve_state(physics, op, u2, init, cfg)?;
    let du = u1.lin_comb(1.0, u2, -1.0)?;
    let drho = t1.rho.lin_comb(1.0, &t2.rho, -1.0)?;
    let dmu = t1.mu.lin_comb(1.0, &t2.mu, -1.0)?;
    let steps = u1.time().steps;
    let mut ratios = Vec::with_capacity(steps);
    let mut max_ratio: Option<f64> = None;
    let mut any_defined = false;
    for m in 1..=steps {
        let denom = du.norm_l2h_until(m);
        if denom <= 1e-300 {
            ratios.push(None);
            continue;
        }
        let num = drho.norm_h1_time_until(m)
            + dmu.norm_h1_time_until(m)
            + dmu.norm_linf_v_until(m);
        let r = num / denom;
        ratios.push(Some(r));
        max_ratio = Some(max_ratio.map_or(r, |m0| m0.max(r)));
        any_defined = true;
    }
    Ok(StabilityReport {
        ratios,
        max_ratio,
        degenerate: !any_defined,
    })
}

#[cfg(test)]
mod tests {
    use crate::field::TimeGrid;
    use super::*;
    use crate::grid::GridSpec;
    use crate::nonlocal::{KernelSpec, RadialKernel};
    use crate::physics::CouplingKind;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn unit_setup(cells: usize, steps: usize) -> (Arc<Grid>, TimeGrid) {
        (
            Grid::shared(GridSpec::interval(1.0, cells)).unwrap(),
            TimeGrid::new(1.0, steps).unwrap(),
        )
    }

    fn decoupled_physics() -> PotentialSpec {
        PotentialSpec::standard(1.0).with_coupling(CouplingKind::Constant { g0: 0.25 })
    }

    fn test_gaussian() -> RadialKernel {
        RadialKernel::Gaussian {
            sigma: 0.2,
            amplitude: 0.5,
        }
    }

    #[test]
    fn steady_state_is_exact() {
        let (grid, time) = unit_setup(16, 12);
        let physics = decoupled_physics();
        let op = NonlocalOperator::zero(grid.clone(), time.clone());
        let u = SpaceTimeField::zeros(grid.clone(), time.clone());
        // rho = 1/2 is the root of F' for the symmetric default potential
        let init = InitialData {
            rho0: ScalarField::constant(grid.clone(), 0.5),
            mu0: ScalarField::constant(grid.clone(), 0.8),
        };
        let traj = solve_state(&physics, &op, &u, &init, &SolverConfig::default()).unwrap();
        for n in 0..time.levels() {
            for i in 0..grid.node_count() {
                assert_abs_diff_eq!(traj.rho.values()[[n, i]], 0.5, epsilon = 1e-10);
                assert_abs_diff_eq!(traj.mu.values()[[n, i]], 0.8, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn decoupled_mu_matches_dense_heat_oracle() {
        // g constant, B zero, u = 0: mu follows backward-Euler heat flow with
        // coefficient (1+2g). Oracle: independent dense assembly and LU.
        let (grid, time) = unit_setup(24, 16);
        let physics = decoupled_physics();
        let g0 = 0.25;
        let op = NonlocalOperator::zero(grid.clone(), time.clone());
        let u = SpaceTimeField::zeros(grid.clone(), time.clone());
        let init = InitialData {
            rho0: ScalarField::constant(grid.clone(), 0.5),
            mu0: ScalarField::from_fn(grid.clone(), |p| 1.0 + 0.5 * (PI * p[0]).cos()),
        };
        let traj = solve_state(&physics, &op, &u, &init, &SolverConfig::default()).unwrap();

        // Oracle: (c0/tau I - Lap) mu^{n+1} = c0/tau mu^n
        let n = grid.node_count();
        let tau = time.tau();
        let c0 = 1.0 + 2.0 * g0;
        let lap = grid.laplacian_matrix();
        let mut a = ndarray::Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                a[[i, j]] = -lap[[i, j]];
            }
            a[[i, i]] += c0 / tau;
        }
        let mut mu_oracle = init.mu0.values().clone();
        for step in 0..time.steps {
            let rhs = mu_oracle.map(|v| c0 / tau * v);
            mu_oracle = crate::linalg::solve_dense(&a, &rhs, step).unwrap();
            for i in 0..n {
                assert_abs_diff_eq!(
                    traj.mu.values()[[step + 1, i]],
                    mu_oracle[i],
                    epsilon = 1e-10
                );
            }
        }
    }

    #[test]
    fn coupled_solution_respects_bounds() {
        let (grid, time) = unit_setup(24, 32);
        let physics = PotentialSpec::standard(1.0);
        let op = NonlocalOperator::new(
            grid.clone(),
            time.clone(),
            KernelSpec::SpatialConvolution {
                radial: test_gaussian(),
            },
        )
        .unwrap();
        let u = SpaceTimeField::from_fn(grid.clone(), time.clone(), |p, t| {
            0.8 + 0.5 * (PI * p[0]).cos() * (1.0 - t / 2.0)
        });
        assert!(u.values().iter().all(|v| *v >= 0.0));
        let init = InitialData {
            rho0: ScalarField::from_fn(grid.clone(), |p| 0.5 + 0.1 * (PI * p[0]).cos()),
            mu0: ScalarField::constant(grid.clone(), 1.0),
        };
        let traj = solve_state(&physics, &op, &u, &init, &SolverConfig::default()).unwrap();
        assert!(!traj.diagnostics.bound_violation);
        assert!(traj.diagnostics.rho_min > 0.0 && traj.diagnostics.rho_max < 1.0);
        assert!(traj.diagnostics.mu_min >= -1e-10);
        assert!(!traj.diagnostics.clamp_fired_at_converged);
    }

    #[test]
    fn residual_checker_validates_and_detects_perturbations() {
        let (grid, time) = unit_setup(12, 8);
        let physics = PotentialSpec::standard(1.0);
        let op = NonlocalOperator::zero(grid.clone(), time.clone());
        let u = SpaceTimeField::constant(grid.clone(), time.clone(), 0.3);
        let init = InitialData {
            rho0: ScalarField::constant(grid.clone(), 0.45),
            mu0: ScalarField::constant(grid.clone(), 0.5),
        };
        let cfg = SolverConfig::default();
        let traj = solve_state(&physics, &op, &u, &init, &cfg).unwrap();
        let norms = state_residual(&physics, &op, &u, &traj).unwrap();
        assert!(norms.iter().all(|r| *r <= cfg.newton_tol * 10.0));

        // perturbation must be visible
        let mut bad = traj.clone();
        for v in bad.rho.values_mut().iter_mut() {
            *v += 1e-3;
        }
        let bad_norms = state_residual(&physics, &op, &u, &bad).unwrap();
        assert!(bad_norms.iter().any(|r| *r > cfg.newton_tol * 100.0));
    }

    #[test]
    fn zero_trajectory_residual_reflects_source() {
        let (grid, time) = unit_setup(12, 8);
        // Smooth potential so F'(1/2) = 0 exactly; constant-in-time fields.
        let physics = PotentialSpec::smooth(1.0).with_coupling(CouplingKind::Constant { g0: 0.0 });
        let op = NonlocalOperator::zero(grid.clone(), time.clone());
        let u = SpaceTimeField::constant(grid.clone(), time.clone(), 0.3);
        let flat = StateTrajectory {
            rho: SpaceTimeField::constant(grid.clone(), time.clone(), 0.5),
            mu: SpaceTimeField::zeros(grid.clone(), time.clone()),
            diagnostics: StateDiagnostics::default(),
        };
        // All stepping terms vanish except -u, so the residual norm is ||u|| = 0.3.
        let z = state_residual(&physics, &op, &u, &flat).unwrap();
        for r in z {
            assert_abs_diff_eq!(r, 0.3, epsilon = 1e-12);
        }
    }

    #[test]
    fn neumann_compatibility_identity() {
        // Quadrature sum of [(1+2g) dmu/tau + mu g' drho/tau - u] vanishes:
        // the weighted Laplacian has zero column sums and the equation is
        // solved to newton_tol.
        let (grid, time) = unit_setup(16, 8);
        let physics = PotentialSpec::standard(1.0);
        let op = NonlocalOperator::zero(grid.clone(), time.clone());
        let u = SpaceTimeField::from_fn(grid.clone(), time.clone(), |p, _| {
            0.4 + 0.2 * (PI * p[0]).cos()
        });
        let init = InitialData {
            rho0: ScalarField::constant(grid.clone(), 0.5),
            mu0: ScalarField::constant(grid.clone(), 0.6),
        };
        let cfg = SolverConfig::default();
        let traj = solve_state(&physics, &op, &u, &init, &cfg).unwrap();
        let tau = time.tau();
        for step in 0..time.steps {
            let mut total = 0.0;
            for i in 0..grid.node_count() {
                let r_old = traj.rho.values()[[step, i]];
                let r_new = traj.rho.values()[[step + 1, i]];
                let m_old = traj.mu.values()[[step, i]];
                let m_new = traj.mu.values()[[step + 1, i]];
                let g = physics.g_eval(r_old);
                let gp = physics.g_prime(r_old);
                let val = (1.0 + 2.0 * g) * (m_new - m_old) / tau
                    + m_new * gp * (r_new - r_old) / tau
                    - u.values()[[step + 1, i]];
                total += grid.quad_weights()[i] * val;
            }
            assert!(total.abs() <= cfg.newton_tol * grid.volume() * 10.0);
        }
    }

    #[test]
    fn time_refinement_first_order() {
        let grid = Grid::shared(GridSpec::interval(1.0, 16)).unwrap();
        let physics = PotentialSpec::standard(1.0);
        let init = InitialData {
            rho0: ScalarField::from_fn(grid.clone(), |p| 0.5 + 0.05 * (PI * p[0]).cos()),
            mu0: ScalarField::constant(grid.clone(), 1.0),
        };
        let mut finals = Vec::new();
        for steps in [16usize, 32, 64, 128] {
            let time = TimeGrid::new(0.5, steps).unwrap();
            let op = NonlocalOperator::new(
                grid.clone(),
                time.clone(),
                KernelSpec::SpatialConvolution {
                    radial: test_gaussian(),
                },
            )
            .unwrap();
            let u = SpaceTimeField::from_fn(grid.clone(), time.clone(), |p, t| {
                0.5 + 0.3 * (PI * p[0]).cos() * (1.0 + t)
            });
            let traj = solve_state(&physics, &op, &u, &init, &SolverConfig::default()).unwrap();
            let last_rho = traj.rho.values().row(time.steps).to_owned();
            let last_mu = traj.mu.values().row(time.steps).to_owned();
            finals.push((last_rho, last_mu));
        }
        let mut errs = Vec::new();
        for k in 0..finals.len() - 1 {
            let dr = &finals[k].0 - &finals[k + 1].0;
            let dm = &finals[k].1 - &finals[k + 1].1;
            errs.push((grid.norm(dr.view()).powi(2) + grid.norm(dm.view()).powi(2)).sqrt());
        }
        for k in 0..errs.len() - 1 {
            let ratio = errs[k] / errs[k + 1];
            assert!(
                (1.6..=2.4).contains(&ratio),
                "first-order ratio {ratio} out of band; errors {errs:?}"
            );
        }
    }

    #[test]
    fn deterministic_trajectories() {
        let (grid, time) = unit_setup(12, 8);
        let physics = PotentialSpec::standard(1.0);
        let op = NonlocalOperator::new(
            grid.clone(),
            time.clone(),
            KernelSpec::SpatialConvolution {
                radial: test_gaussian(),
            },
        )
        .unwrap();
        let u = SpaceTimeField::from_fn(grid.clone(), time.clone(), |p, t| {
            0.5 + 0.2 * p[0] * (1.0 - t)
        });
        let init = InitialData {
            rho0: ScalarField::from_fn(grid.clone(), |p| 0.4 + 0.1 * p[0]),
            mu0: ScalarField::constant(grid.clone(), 0.7),
        };
        let a = solve_state(&physics, &op, &u, &init, &SolverConfig::default()).unwrap();
        let b = solve_state(&physics, &op, &u, &init, &SolverConfig::default()).unwrap();
        assert_eq!(a.rho.values(), b.rho.values());
        assert_eq!(a.mu.values(), b.mu.values());
    }

    #[test]
    fn stability_probe_degenerate_and_local_lipschitz() {
        let (grid, time) = unit_setup(12, 16);
        let physics = PotentialSpec::standard(1.0);
        let op = NonlocalOperator::zero(grid.clone(), time.clone());
        let u1 = SpaceTimeField::constant(grid.clone(), time.clone(), 0.5);
        let init = InitialData {
            rho0: ScalarField::constant(grid.clone(), 0.5),
            mu0: ScalarField::constant(grid.clone(), 0.8),
        };
        let cfg = SolverConfig::default();
        let degenerate = stability_probe(&physics, &op, &u1, &u1, &init, &cfg).unwrap();
        assert!(degenerate.degenerate);

        let mut maxes = Vec::new();
        for delta in [1e-1, 1e-2, 1e-3] {
            let u2 = SpaceTimeField::from_fn(grid.clone(), time.clone(), |p, _| {
                0.5 + delta * (-((p[0] - 0.5) / 0.15).powi(2)).exp()
            });
            let rep = stability_probe(&physics, &op, &u1, &u2, &init, &cfg).unwrap();
            assert!(!rep.degenerate);
            maxes.push(rep.max_ratio.unwrap());
        }
        let lo = maxes.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = maxes.iter().cloned().fold(0.0_f64, f64::max);
        assert!(hi / lo <= 2.0, "ratios varied too much across delta: {maxes:?}");
    }
}
