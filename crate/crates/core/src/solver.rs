//! Unconstrained least-squares minimization with Powell's dogleg trust-region
//! method.
//!
//! The objective is a residual vector r(x); the minimized value is the plain
//! sum of squares `F(x) = Σ r_i(x)²`, so energies built from robust terms via
//! the square-root trick report their own value as the objective. Jacobians
//! come from an analytic override when an objective provides one, otherwise
//! from forward-mode dual-number propagation, one parameter per pass.

use crate::error::{Error, Result};
use crate::linalg::{cholesky_solve, MatD};
use crate::scalar::{Dual, Real};

/// A least-squares-structured objective.
///
/// `residuals` must be implemented generically so the solver can obtain exact
/// derivatives by evaluating with [`Dual`] scalars. Implementations must
/// branch only on primal values (see [`Real::primal`]).
pub trait Objective: Sync {
    fn param_count(&self) -> usize;

    /// Exact number of residuals produced by `residuals`.
    fn residual_count(&self) -> usize;

    fn residuals<S: Real>(&self, params: &[S], out: &mut Vec<S>);

    /// Optional analytic Jacobian; return false to use dual-number columns.
    fn analytic_jacobian(&self, _params: &[f64], _jac: &mut MatD) -> bool {
        false
    }
}

/// Why the solver stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Termination {
    GradientTolerance,
    StepTolerance,
    MaxIterations,
}

#[derive(Clone, Copy, Debug)]
pub struct SolveOptions {
    /// Stop when the infinity norm of the gradient falls below this.
    pub gtol: f64,
    /// Stop when the accepted step (or the trust radius) falls below this.
    pub xtol: f64,
    pub max_iterations: usize,
    pub trust_init: f64,
    pub trust_max: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            gtol: 1e-8,
            xtol: 1e-10,
            max_iterations: 100,
            trust_init: 100.0,
            trust_max: 1e6,
        }
    }
}

/// Outcome of a [`minimize`] call.
#[derive(Clone, Debug)]
pub struct SolveReport {
    pub params: Vec<f64>,
    pub initial_objective: f64,
    pub final_objective: f64,
    /// Number of trial steps taken.
    pub iterations: usize,
    pub termination: Termination,
    /// Objective after the start point and each accepted step.
    pub trace: Vec<f64>,
}

/// Sum of squared residuals at `x`.
pub fn objective_value<O: Objective>(obj: &O, x: &[f64]) -> f64 {
    let mut r = Vec::with_capacity(obj.residual_count());
    obj.residuals(x, &mut r);
    r.iter().map(|v| v * v).sum()
}

/// Jacobian of the residual vector: analytic when provided, otherwise
/// forward-mode dual-number propagation column by column.
pub fn jacobian<O: Objective>(obj: &O, x: &[f64]) -> MatD {
    let mut jac = MatD::zeros(obj.residual_count(), obj.param_count());
    if obj.analytic_jacobian(x, &mut jac) {
        return jac;
    }
    let n = obj.param_count();
    let mut seed: Vec<Dual> = x.iter().map(|&v| Dual::constant(v)).collect();
    let mut out: Vec<Dual> = Vec::with_capacity(obj.residual_count());
    for col in 0..n {
        seed[col].d = 1.0;
        out.clear();
        obj.residuals(&seed, &mut out);
        debug_assert_eq!(out.len(), jac.rows);
        for (row, r) in out.iter().enumerate() {
            *jac.at_mut(row, col) = r.d;
        }
        seed[col].d = 0.0;
    }
    jac
}

/// Central-difference Jacobian; the derivative-check reference used by tests.
pub fn jacobian_fd<O: Objective>(obj: &O, x: &[f64], step: f64) -> MatD {
    let mut jac = MatD::zeros(obj.residual_count(), obj.param_count());
    let mut xp = x.to_vec();
    let mut rp = Vec::new();
    let mut rm = Vec::new();
    for col in 0..obj.param_count() {
        xp[col] = x[col] + step;
        rp.clear();
        obj.residuals(&xp, &mut rp);
        xp[col] = x[col] - step;
        rm.clear();
        obj.residuals(&xp, &mut rm);
        xp[col] = x[col];
        for row in 0..jac.rows {
            *jac.at_mut(row, col) = (rp[row] - rm[row]) / (2.0 * step);
        }
    }
    jac
}

/// Gauss-Newton step: solve (J^T J) p = -J^T r, escalating a diagonal damping
/// when the normal matrix is rank deficient.
fn gauss_newton_step(jtj: &MatD, jtr: &[f64]) -> Option<Vec<f64>> {
    let n = jtj.rows;
    let rhs: Vec<f64> = jtr.iter().map(|v| -v).collect();
    if let Some(p) = cholesky_solve(jtj, &rhs) {
        return Some(p);
    }
    let max_diag = (0..n).map(|i| jtj.at(i, i)).fold(0.0_f64, f64::max).max(1.0);
    let mut lambda = 1e-10 * max_diag;
    for _ in 0..20 {
        let mut damped = jtj.clone();
        for i in 0..n {
            *damped.at_mut(i, i) += lambda;
        }
        if let Some(p) = cholesky_solve(&damped, &rhs) {
            return Some(p);
        }
        lambda *= 10.0;
    }
    None
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Minimize `Σ r_i(x)²` with dogleg trust-region iterations.
pub fn minimize<O: Objective>(obj: &O, x0: &[f64], opts: &SolveOptions) -> Result<SolveReport> {
    assert_eq!(x0.len(), obj.param_count(), "parameter dimension mismatch");
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidStart);
    }
    let mut x = x0.to_vec();
    let mut residuals = Vec::with_capacity(obj.residual_count());
    obj.residuals(&x, &mut residuals);
    let mut f = residuals.iter().map(|v| v * v).sum::<f64>();
    if !f.is_finite() {
        return Err(Error::InvalidStart);
    }
    let initial_objective = f;
    let mut trace = vec![f];
    let mut radius = opts.trust_init;
    let mut iterations = 0;
    let mut termination = Termination::MaxIterations;

    // Jacobian-derived state, refreshed after every accepted step.
    let mut jac = jacobian(obj, &x);
    let mut jtr = jac.transpose_mul_vec(&residuals);
    let mut jtj = jac.gram();
    let mut grad_inf = jtr.iter().fold(0.0_f64, |m, v| m.max(2.0 * v.abs()));

    if grad_inf < opts.gtol {
        return Ok(SolveReport {
            params: x,
            initial_objective,
            final_objective: f,
            iterations: 0,
            termination: Termination::GradientTolerance,
            trace,
        });
    }

    let mut trial_residuals = Vec::with_capacity(obj.residual_count());
    while iterations < opts.max_iterations {
        iterations += 1;

        // Dogleg step within the current radius.
        let gn = gauss_newton_step(&jtj, &jtr);
        let g: Vec<f64> = jtr.iter().map(|v| 2.0 * v).collect();
        let jg = jac.mul_vec(&g);
        let g_sq = g.iter().map(|v| v * v).sum::<f64>();
        let jg_sq = jg.iter().map(|v| v * v).sum::<f64>();
        let step: Vec<f64> = match gn {
            Some(ref p_gn) if norm(p_gn) <= radius => p_gn.clone(),
            gn => {
                let alpha = if jg_sq > 0.0 { g_sq / (2.0 * jg_sq) } else { 0.0 };
                let p_u: Vec<f64> = g.iter().map(|v| -alpha * v).collect();
                let p_u_norm = norm(&p_u);
                if p_u_norm >= radius || gn.is_none() {
                    // Steepest-descent direction clipped to the boundary.
                    let scale = if p_u_norm > 0.0 { radius / p_u_norm } else { 0.0 };
                    p_u.iter().map(|v| v * scale).collect()
                } else {
                    // Walk from the Cauchy point toward the Gauss-Newton
                    // point until the boundary.
                    let p_gn = gn.unwrap();
                    let d: Vec<f64> = p_gn.iter().zip(&p_u).map(|(a, b)| a - b).collect();
                    let a = d.iter().map(|v| v * v).sum::<f64>();
                    let b = 2.0 * p_u.iter().zip(&d).map(|(u, dv)| u * dv).sum::<f64>();
                    let c = p_u_norm * p_u_norm - radius * radius;
                    let disc = (b * b - 4.0 * a * c).max(0.0).sqrt();
                    let tau = if a > 0.0 { (-b + disc) / (2.0 * a) } else { 0.0 };
                    p_u.iter().zip(&d).map(|(u, dv)| u + tau * dv).collect()
                }
            }
        };

        let step_norm = norm(&step);
        if step_norm < opts.xtol {
            termination = Termination::StepTolerance;
            break;
        }

        // Predicted reduction under the Gauss-Newton model.
        let jp = jac.mul_vec(&step);
        let predicted = -(g.iter().zip(&step).map(|(a, b)| a * b).sum::<f64>())
            - jp.iter().map(|v| v * v).sum::<f64>();

        let x_trial: Vec<f64> = x.iter().zip(&step).map(|(a, b)| a + b).collect();
        trial_residuals.clear();
        obj.residuals(&x_trial, &mut trial_residuals);
        let f_trial = trial_residuals.iter().map(|v| v * v).sum::<f64>();
        let actual = f - f_trial;
        let gain = if predicted > 0.0 && f_trial.is_finite() {
            actual / predicted
        } else {
            -1.0
        };

        if gain > 0.75 {
            radius = (radius * 2.0).min(opts.trust_max);
        } else if gain < 0.25 {
            radius *= 0.25;
        }
        debug_assert!(radius > 0.0 && radius <= opts.trust_max);

        if actual > 0.0 && f_trial.is_finite() {
            x = x_trial;
            std::mem::swap(&mut residuals, &mut trial_residuals);
            f = f_trial;
            trace.push(f);
            jac = jacobian(obj, &x);
            jtr = jac.transpose_mul_vec(&residuals);
            jtj = jac.gram();
            grad_inf = jtr.iter().fold(0.0_f64, |m, v| m.max(2.0 * v.abs()));
            if grad_inf < opts.gtol {
                termination = Termination::GradientTolerance;
                break;
            }
            if step_norm < opts.xtol {
                termination = Termination::StepTolerance;
                break;
            }
        } else if radius < opts.xtol {
            termination = Termination::StepTolerance;
            break;
        }
    }

    Ok(SolveReport {
        params: x,
        initial_objective,
        final_objective: f,
        iterations,
        termination,
        trace,
    })
}

/// Restriction of an objective to a subset of its parameters, with the
/// remaining coordinates pinned; used for the hierarchical fitting passes.
pub struct MaskedObjective<'a, O> {
    inner: &'a O,
    active: Vec<usize>,
    base: Vec<f64>,
}

impl<'a, O: Objective> MaskedObjective<'a, O> {
    pub fn new(inner: &'a O, active: Vec<usize>, base: Vec<f64>) -> Self {
        assert_eq!(base.len(), inner.param_count());
        MaskedObjective {
            inner,
            active,
            base,
        }
    }

    /// Active components of the base point (the sub-problem's start).
    pub fn project(&self) -> Vec<f64> {
        self.active.iter().map(|&i| self.base[i]).collect()
    }

    /// Scatter a sub-solution back into the full vector.
    pub fn expand(&self, sub: &[f64]) -> Vec<f64> {
        let mut full = self.base.clone();
        for (k, &i) in self.active.iter().enumerate() {
            full[i] = sub[k];
        }
        full
    }
}

impl<O: Objective> Objective for MaskedObjective<'_, O> {
    fn param_count(&self) -> usize {
        self.active.len()
    }
    fn residual_count(&self) -> usize {
        self.inner.residual_count()
    }
    fn residuals<S: Real>(&self, params: &[S], out: &mut Vec<S>) {
        let mut full: Vec<S> = self.base.iter().map(|&v| S::constant(v)).collect();
        for (k, &i) in self.active.iter().enumerate() {
            full[i] = params[k];
        }
        self.inner.residuals(&full, out);
    }
}
