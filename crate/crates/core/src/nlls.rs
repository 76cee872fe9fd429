//! Damped nonlinear least squares (Levenberg-Marquardt).
//!
//! Generic over a [`ResidualProblem`]; the pose-lifting code supplies
//! reprojection residuals, but nothing here is geometry-specific.
//! Damping is classic Marquardt style: the diagonal of `J^T J` is scaled
//! multiplicatively, so the step interpolates between Gauss-Newton and a
//! diagonally preconditioned gradient descent.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Default step used when a problem provides no analytic Jacobian.
pub const DEFAULT_FD_EPS: f64 = 1e-6;

const DAMPING_CAP: f64 = 1e32;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),
    #[error("invalid solver config: {0}")]
    BadConfig(String),
}

/// A least-squares problem `min_x |r(x)|^2` with `m >= k`.
pub trait ResidualProblem {
    fn param_dim(&self) -> usize;
    fn residual_dim(&self) -> usize;
    fn residuals(&self, x: &DVector<f64>) -> DVector<f64>;

    /// Analytic Jacobian; `None` falls back to central differences.
    fn jacobian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let _ = x;
        None
    }
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Stop when the max-abs component of the gradient `J^T r` drops below this.
    pub grad_tol: f64,
    /// Stop when the accepted (or smallest rejected) step norm drops below this.
    pub step_tol: f64,
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            grad_tol: 1e-10,
            step_tol: 1e-12,
            initial_damping: 1e-3,
            damping_up: 10.0,
            damping_down: 1.0 / 3.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if self.max_iters < 1 {
            return Err(SolverError::BadConfig("max_iters must be >= 1".into()));
        }
        if !(self.grad_tol > 0.0 && self.step_tol > 0.0 && self.initial_damping > 0.0) {
            return Err(SolverError::BadConfig("tolerances must be positive".into()));
        }
        if !(self.damping_up > 1.0 && self.damping_down < 1.0 && self.damping_down > 0.0) {
            return Err(SolverError::BadConfig(
                "damping_up must exceed 1 and damping_down must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradTol,
    StepTol,
    MaxIters,
}

#[derive(Debug, Clone)]
pub struct SolverReport {
    pub solution: DVector<f64>,
    /// Sum of squared residuals at the solution.
    pub final_cost: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// Cost after each accepted step, starting with the initial cost.
    pub accepted_costs: Vec<f64>,
}

/// Central-difference Jacobian: `J[i][j] = (r_i(x + e) - r_i(x - e)) / 2eps`.
pub fn numeric_jacobian(
    problem: &dyn ResidualProblem,
    x: &DVector<f64>,
    eps: f64,
) -> DMatrix<f64> {
    let k = problem.param_dim();
    let m = problem.residual_dim();
    let mut jac = DMatrix::zeros(m, k);
    let mut xp = x.clone();
    for j in 0..k {
        xp[j] = x[j] + eps;
        let rp = problem.residuals(&xp);
        xp[j] = x[j] - eps;
        let rm = problem.residuals(&xp);
        xp[j] = x[j];
        for i in 0..m {
            jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * eps);
        }
    }
    jac
}

fn solve_normal_equations(
    a: &DMatrix<f64>,
    g: &DVector<f64>,
) -> Option<DVector<f64>> {
    let chol = a.clone().cholesky().or_else(|| {
        // Jitter fallback; k <= 6 in this crate so conditioning is benign.
        let n = a.nrows();
        (a + DMatrix::<f64>::identity(n, n) * 1e-12).cholesky()
    })?;
    Some(chol.solve(&(-g)))
}

/// Minimizes `|r(x)|^2` from `x0`. Accepted steps never increase the cost;
/// rejected trial steps only raise the damping.
pub fn solve(
    problem: &dyn ResidualProblem,
    x0: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<SolverReport, SolverError> {
    cfg.validate()?;
    if x0.len() != problem.param_dim() {
        return Err(SolverError::BadConfig(format!(
            "x0 has dimension {}, problem expects {}",
            x0.len(),
            problem.param_dim()
        )));
    }
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(SolverError::BadConfig("x0 has non-finite entries".into()));
    }

    let mut x = x0.clone();
    let mut r = problem.residuals(&x);
    let mut cost = r.norm_squared();
    if !cost.is_finite() {
        return Err(SolverError::NumericalBreakdown(
            "initial cost is non-finite".into(),
        ));
    }
    let mut damping = cfg.initial_damping;
    let mut accepted_costs = vec![cost];

    for iter in 1..=cfg.max_iters {
        let jac = problem
            .jacobian(&x)
            .unwrap_or_else(|| numeric_jacobian(problem, &x, DEFAULT_FD_EPS));
        let grad = jac.transpose() * &r;
        if !grad.iter().all(|v| v.is_finite()) {
            return Err(SolverError::NumericalBreakdown(
                "gradient is non-finite (degenerate Jacobian)".into(),
            ));
        }
        if grad.amax() < cfg.grad_tol {
            return Ok(SolverReport {
                solution: x,
                final_cost: cost,
                iterations: iter - 1,
                termination: Termination::GradTol,
                accepted_costs,
            });
        }
        let jtj = jac.transpose() * &jac;

        loop {
            // Marquardt scaling of the diagonal; floor guards parameters the
            // residuals are locally blind to.
            let mut damped = jtj.clone();
            for i in 0..damped.nrows() {
                let d = jtj[(i, i)].max(1e-12);
                damped[(i, i)] = jtj[(i, i)] + damping * d;
            }
            let step = match solve_normal_equations(&damped, &grad) {
                Some(s) if s.iter().all(|v| v.is_finite()) => s,
                _ => {
                    damping *= cfg.damping_up;
                    if damping > DAMPING_CAP {
                        return Err(SolverError::NumericalBreakdown(
                            "normal equations unsolvable at damping cap".into(),
                        ));
                    }
                    continue;
                }
            };
            let step_norm = step.norm();
            let x_trial = &x + &step;
            let r_trial = problem.residuals(&x_trial);
            let cost_trial = r_trial.norm_squared();

            if cost_trial.is_finite() && cost_trial <= cost {
                x = x_trial;
                r = r_trial;
                cost = cost_trial;
                damping = (damping * cfg.damping_down).max(1e-18);
                accepted_costs.push(cost);
                if step_norm < cfg.step_tol {
                    return Ok(SolverReport {
                        solution: x,
                        final_cost: cost,
                        iterations: iter,
                        termination: Termination::StepTol,
                        accepted_costs,
                    });
                }
                break;
            }

            // Rejected: a vanishing trial step means no progress is possible.
            if step_norm < cfg.step_tol {
                return Ok(SolverReport {
                    solution: x,
                    final_cost: cost,
                    iterations: iter,
                    termination: Termination::StepTol,
                    accepted_costs,
                });
            }
            damping *= cfg.damping_up;
            if damping > DAMPING_CAP {
                return Err(SolverError::NumericalBreakdown(
                    "damping exceeded cap without an acceptable step".into(),
                ));
            }
        }
    }

    Ok(SolverReport {
        solution: x,
        final_cost: cost,
        iterations: cfg.max_iters,
        termination: Termination::MaxIters,
        accepted_costs,
    })
}
