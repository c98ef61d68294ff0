//! Cost evaluation, exact projection onto the admissible set, projected
//! gradient descent with Armijo backtracking, and stationarity measures.
//!
//! The admissible set is the intersection of the pointwise box
//! `0 <= u <= u_max` with the ball `||u||_{H1(0,T;L2)} <= R`. Projection is
//! computed in the H1(0,T;L2) metric (the norm defining the ball) with
//! Dykstra's alternating scheme. In that metric the box sub-projection
//! decouples into one tridiagonal-in-time obstacle problem per spatial node;
//! those are solved exactly by a primal-dual active-set iteration (finitely
//! convergent for the M-matrix quadratic form at hand), with the Karush-Kuhn-
//! Tucker residual verified to the projection tolerance. The ball
//! sub-projection is a radial scaling. A pointwise clip-and-scale variant in
//! the L2 metric is shipped behind [`project_uad_clip_scale`] for comparison;
//! it is not the metric projection and is labeled inexact.



use crate::adjoint::{gradient_field, solve_adjoint, Targets};
use crate::error::{Error, Result};
use crate::field::{SpaceTimeField, TimeGrid};
use crate::linalg::solve_tridiagonal;
use crate::nonlocal::NonlocalOperator;
use crate::physics::PotentialSpec;
use crate::state::{solve_state, InitialData, SolverConfig, StateTrajectory};

/// Box threshold and H1-ball radius of the admissible set.
#[derive(Debug, Clone)]
pub struct ControlConstraints {
    pub u_max: SpaceTimeField,
    pub radius: f64,
}

impl ControlConstraints {
    pub fn validate(&self) -> Result<()> {
        if self.u_max.values().iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(Error::InvalidSpec(
                "u_max must be nonnegative and finite everywhere".into(),
            ));
        }
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(Error::InvalidSpec(format!(
                "ball radius must be > 0, got {}",
                self.radius
            )));
        }
        Ok(())
    }

    pub fn contains(&self, u: &SpaceTimeField, ball_slack: f64) -> Result<bool> {
        u.check_compatible(&self.u_max)?;
        let box_ok = u
            .values()
            .iter()
            .zip(self.u_max.values().iter())
            .all(|(v, m)| *v >= 0.0 && v <= m);
        Ok(box_ok && u.norm_h1_time() <= self.radius * (1.0 + ball_slack))
    }
}

/// Dykstra and inner-solver tolerances.
#[derive(Debug, Clone)]
pub struct ProjectionConfig {
    pub proj_tol: f64,
    pub max_dykstra_iters: usize,
    pub max_active_set_iters: usize,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            proj_tol: 1e-12,
            max_dykstra_iters: 2000,
            max_active_set_iters: 100,
        }
    }
}

/// Tridiagonal Gram matrix of the per-node H1(0,T) quadratic form:
/// `diag(tau theta_n) + (1/tau) T` with T the difference-quotient Gram.
struct TimeH1Form {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
}

impl TimeH1Form {
    fn new(time: &TimeGrid) -> Self {
        let levels = time.levels();
        let tau = time.tau();
        let mut lower = vec![0.0; levels];
        let mut diag = vec![0.0; levels];
        let mut upper = vec![0.0; levels];
        for n in 0..levels {
            diag[n] = tau * time.trapezoid_weight(n);
            // difference part: intervals touching level n
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

/// Exact solution of one per-node obstacle problem
/// `min (v-z)' H (v-z) s.t. lo <= v <= up` by primal-dual active sets.
/// H is a tridiagonal M-matrix, so the iteration terminates finitely; the
/// complementarity residual is checked against `tol`.
fn project_box_node(
    form: &TimeH1Form,
    z: &[f64],
    lo: &[f64],
    up: &[f64],
    tol: f64,
    max_iters: usize,
) -> Result<Vec<f64>> {
    let n = z.len();
    #[derive(Clone, Copy, PartialEq)]
    enum S {
        Free,
        AtLo,
        AtUp,
    }
    let mut state: Vec<S> = (0..n)
        .map(|i| {
            if z[i] <= lo[i] {
                S::AtLo
            } else if z[i] >= up[i] {
                S::AtUp
            } else {
                S::Free
            }
        })
        .collect();
    let hz = form.apply(z);
    let mut v = vec![0.0; n];
    for it in 0..max_iters {
        // Solve the reduced system: on free nodes H v = H z, on active nodes
        // v is pinned to the bound. Assemble the full tridiagonal with pinned
        // rows replaced by identity rows.
        let mut lower = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut upper = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        for i in 0..n {
            match state[i] {
                S::Free => {
                    lower[i] = form.lower[i];
                    diag[i] = form.diag[i];
                    upper[i] = form.upper[i];
                    rhs[i] = hz[i];
                }
                S::AtLo => {
                    diag[i] = 1.0;
                    rhs[i] = lo[i];
                }
                S::AtUp => {
                    diag[i] = 1.0;
                    rhs[i] = up[i];
                }
            }
        }
        // Pinned rows must not be coupled into by neighbors of free rows:
        // move the known neighbor values to the right-hand side.
        for i in 0..n {
            if state[i] == S::Free {
                if i > 0 && state[i - 1] != S::Free {
                    let vb = if state[i - 1] == S::AtLo { lo[i - 1] } else { up[i - 1] };
                    rhs[i] -= form.lower[i] * vb;
                    lower[i] = 0.0;
                }
                if i + 1 < n && state[i + 1] != S::Free {
                    let vb = if state[i + 1] == S::AtLo { lo[i + 1] } else { up[i + 1] };
                    rhs[i] -= form.upper[i] * vb;
                    upper[i] = 0.0;
                }
            } else {
                lower[i] = 0.0;
                upper[i] = 0.0;
                diag[i] = 1.0;
            }
        }
        let sol = solve_tridiagonal(&lower, &diag, &upper, &rhs)
            .ok_or(Error::ProjectionNonConvergence { iters: it, change: f64::NAN })?;
        v.copy_from_slice(&sol);

        // Multipliers lambda = H(z - v); complementarity update.
        let hv = form.apply(&v);
        let mut next = state.clone();
        for i in 0..n {
            let lambda = hz[i] - hv[i];
            next[i] = match state[i] {
                S::Free => {
                    if v[i] < lo[i] - tol {
                        S::AtLo
                    } else if v[i] > up[i] + tol {
                        S::AtUp
                    } else {
                        S::Free
                    }
                }
                S::AtLo => {
                    // keep only if pushing outward (lambda <= 0 at the lower bound)
                    if lambda > tol {
                        S::Free
                    } else {
                        S::AtLo
                    }
                }
                S::AtUp => {
                    if lambda < -tol {
                        S::Free
                    } else {
                        S::AtUp
                    }
                }
            };
        }
        if next == state {
            // exact feasibility on active nodes, KKT verified
            for x in v.iter_mut().zip(lo.iter().zip(up.iter())) {
                let (val, (l, u)) = x;
                *val = val.max(*l).min(*u);
            }
            return Ok(v);
        }
        state = next;
    }
    Err(Error::ProjectionNonConvergence {
        iters: max_iters,
        change: f64::NAN,
    })
}

/// Metric projection onto the box `0 <= v <= u_max` in the H1(0,T;L2)
/// metric: one tridiagonal obstacle problem per spatial node.
fn project_box_h1(
    u: &SpaceTimeField,
    u_max: &SpaceTimeField,
    pcfg: &ProjectionConfig,
) -> Result<SpaceTimeField> {
    let time = u.time();
    let form = TimeH1Form::new(time);
    let levels = time.levels();
    let nodes = u.grid().node_count();
    let mut out = SpaceTimeField::zeros(u.grid().clone(), time.clone());
    let mut z = vec![0.0; levels];
    let mut lo = vec![0.0; levels];
    let mut up = vec![0.0; levels];
    for i in 0..nodes {
        for n in 0..levels {
            z[n] = u.values()[[n, i]];
            lo[n] = 0.0;
            up[n] = u_max.values()[[n, i]];
        }
        let v = project_box_node(&form, &z, &lo, &up, pcfg.proj_tol, pcfg.max_active_set_iters)?;
        for n in 0..levels {
            out.values_mut()[[n, i]] = v[n];
        }
    }
    Ok(out)
}

/// Radial projection onto the H1(0,T;L2) ball.
fn project_ball_h1(u: &SpaceTimeField, radius: f64) -> SpaceTimeField {
    let norm = u.norm_h1_time();
    if norm <= radius || norm == 0.0 {
        u.clone()
    } else {
        u.map(|v| v * radius / norm)
    }
}

/// H1(0,T;L2) distance between two fields.
pub fn h1_distance(a: &SpaceTimeField, b: &SpaceTimeField) -> Result<f64> {
    Ok(a.lin_comb(1.0, b, -1.0)?.norm_h1_time())
}

/// Exact projection onto the admissible set in the H1(0,T;L2) metric via
/// Dykstra's alternating projections. The final operation is the box
/// projection, so box feasibility of the output is exact; ball feasibility
/// holds to the projection tolerance.
pub fn project_uad(
    u: &SpaceTimeField,
    cons: &ControlConstraints,
    pcfg: &ProjectionConfig,
) -> Result<SpaceTimeField> {
    cons.validate()?;
    u.check_compatible(&cons.u_max)?;
    let zero = SpaceTimeField::zeros(u.grid().clone(), u.time().clone());
    let mut x = u.clone();
    let mut inc_ball = zero.clone();
    let mut inc_box = zero;
    let mut prev = x.clone();
    for it in 0..pcfg.max_dykstra_iters {
        let y_in = x.lin_comb(1.0, &inc_ball, 1.0)?;
        let y = project_ball_h1(&y_in, cons.radius);
        inc_ball = y_in.lin_comb(1.0, &y, -1.0)?;
        let x_in = y.lin_comb(1.0, &inc_box, 1.0)?;
        x = project_box_h1(&x_in, &cons.u_max, pcfg)?;
        inc_box = x_in.lin_comb(1.0, &x, -1.0)?;
        let change = h1_distance(&x, &prev)?;
        if change <= pcfg.proj_tol && it > 0 {
            return Ok(x);
        }
        prev = x.clone();
    }
    let change = h1_distance(&x, &prev)?;
    Err(Error::ProjectionNonConvergence {
        iters: pcfg.max_dykstra_iters,
        change,
    })
}

/// Pointwise clip to the box followed by radial scaling into the ball.
/// This is the L2-metric heuristic, not the metric projection; kept for
/// comparison runs only.
pub fn project_uad_clip_scale(u: &SpaceTimeField, cons: &ControlConstraints) -> Result<SpaceTimeField> {
    u.check_compatible(&cons.u_max)?;
    let mut clipped = u.clone();
    for (v, m) in clipped
        .values_mut()
        .iter_mut()
        .zip(cons.u_max.values().iter())
    {
        *v = v.max(0.0).min(*m);
    }
    Ok(project_ball_h1(&clipped, cons.radius))
}

/// Everything a reduced-cost evaluation needs.
#[derive(Debug, Clone)]
pub struct ControlProblem {
    pub physics: PotentialSpec,
    pub op: NonlocalOperator,
    pub init: InitialData,
    pub targets: Targets,
    pub betas: [f64; 3],
    pub constraints: ControlConstraints,
    pub solver: SolverConfig,
}

/// Tracking cost J(u, rho, mu) with space-time trapezoid quadrature.
pub fn eval_cost(
    traj: &StateTrajectory,
    u: &SpaceTimeField,
    targets: &Targets,
    betas: [f64; 3],
) -> Result<f64> {
    let dr = traj.rho.lin_comb(1.0, &targets.rho_q, -1.0)?;
    let dm = traj.mu.lin_comb(1.0, &targets.mu_q, -1.0)?;
    Ok(0.5 * betas[0] * dr.inner_l2q(&dr)?
        + 0.5 * betas[1] * dm.inner_l2q(&dm)?
        + 0.5 * betas[2] * u.inner_l2q(u)?)
}

impl ControlProblem {
    pub fn cost(&self, u: &SpaceTimeField) -> Result<(f64, StateTrajectory)> {
        let traj = solve_state(&self.physics, &self.op, u, &self.init, &self.solver)?;
        let j = eval_cost(&traj, u, &self.targets, self.betas)?;
        Ok((j, traj))
    }

    /// Gradient field from an already-solved trajectory: one adjoint solve.
    pub fn gradient_at(
        &self,
        u: &SpaceTimeField,
        traj: &StateTrajectory,
    ) -> Result<SpaceTimeField> {
        let adj = solve_adjoint(
            traj,
            &self.physics,
            &self.op,
            &self.targets,
            self.betas,
            &self.solver,
        )?;
        gradient_field(u, &adj.p, self.betas[2])
    }

    /// Cost gradient field at `u`: one forward and one adjoint solve.
    pub fn gradient(&self, u: &SpaceTimeField) -> Result<(f64, SpaceTimeField, StateTrajectory)> {
        let (j, traj) = self.cost(u)?;
        let g = self.gradient_at(u, &traj)?;
        Ok((j, g, traj))
    }
}

/// Fixed-point stationarity measure `||u - P(u - s0 G)||_{L2(Q)} / s0`
/// with reference step s0 = 1.
pub fn stationarity(
    u: &SpaceTimeField,
    g: &SpaceTimeField,
    cons: &ControlConstraints,
    pcfg: &ProjectionConfig,
) -> Result<f64> {
    let trial = u.lin_comb(1.0, g, -1.0)?;
    let projected = project_uad(&trial, cons, pcfg)?;
    Ok(u.lin_comb(1.0, &projected, -1.0)?.norm_l2q())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExitReason {
    Tolerance,
    MaxIters,
    LineSearchFailure,
}

/// Optimizer trajectory record.
#[derive(Debug, Clone)]
pub struct OptRun {
    pub cost_history: Vec<f64>,
    pub stationarity_history: Vec<f64>,
    pub step_history: Vec<f64>,
    pub control_l2_history: Vec<f64>,
    pub control_h1_history: Vec<f64>,
    pub final_control: SpaceTimeField,
    pub exit_reason: ExitReason,
}

#[derive(Debug, Clone)]
pub struct OptConfig {
    pub stat_tol: f64,
    pub max_iters: usize,
    pub armijo_init_step: f64,
    pub armijo_shrink: f64,
    pub armijo_slope: f64,
    pub min_step: f64,
    pub projection: ProjectionConfig,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            stat_tol: 1e-9,
            max_iters: 500,
            armijo_init_step: 1.0,
            armijo_shrink: 0.5,
            armijo_slope: 1e-4,
            min_step: 1e-10,
            projection: ProjectionConfig::default(),
        }
    }
}

/// Projected gradient descent with Armijo backtracking on J. The sufficient
/// decrease is measured against the squared projected step, so the cost
/// history is nonincreasing by construction.
pub fn projected_gradient(
    problem: &ControlProblem,
    u0: &SpaceTimeField,
    cfg: &OptConfig,
) -> Result<OptRun> {
    problem.constraints.validate()?;
    let mut u = project_uad(u0, &problem.constraints, &cfg.projection)?;
    let (mut j, mut grad, _traj) = problem.gradient(&u)?;

    let mut cost_history = vec![j];
    let mut stationarity_history = Vec::new();
    let mut step_history = Vec::new();
    let mut control_l2_history = vec![u.norm_l2q()];
    let mut control_h1_history = vec![u.norm_h1_time()];
    let mut exit_reason = ExitReason::MaxIters;

    for _iter in 0..cfg.max_iters {
        let stat = {
            let trial = u.lin_comb(1.0, &grad, -1.0)?;
            let projected = project_uad(&trial, &problem.constraints, &cfg.projection)?;
            u.lin_comb(1.0, &projected, -1.0)?.norm_l2q()
        };
        stationarity_history.push(stat);
        if stat <= cfg.stat_tol {
            exit_reason = ExitReason::Tolerance;
            break;
        }

        let mut step = cfg.armijo_init_step;
        let mut accepted = false;
        while step >= cfg.min_step {
            let trial = u.lin_comb(1.0, &grad, -step)?;
            let candidate = project_uad(&trial, &problem.constraints, &cfg.projection)?;
            let displacement = candidate.lin_comb(1.0, &u, -1.0)?.norm_l2q();
            if displacement == 0.0 {
                // projected fixed point at this step size
                accepted = true;
                step_history.push(step);
                break;
            }
            let (j_new, traj_new) = problem.cost(&candidate)?;
            if j_new <= j - cfg.armijo_slope / step * displacement * displacement {
                grad = problem.gradient_at(&candidate, &traj_new)?;
                u = candidate;
                j = j_new;
                accepted = true;
                step_history.push(step);
                break;
            }
            step *= cfg.armijo_shrink;
        }
        if !accepted {
            exit_reason = ExitReason::LineSearchFailure;
            break;
        }
        cost_history.push(j);
        control_l2_history.push(u.norm_l2q());
        control_h1_history.push(u.norm_h1_time());
    }

    Ok(OptRun {
        cost_history,
        stationarity_history,
        step_history,
        control_l2_history,
        control_h1_history,
        final_control: u,
        exit_reason,
    })
}
