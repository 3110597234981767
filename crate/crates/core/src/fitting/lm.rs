//! Levenberg-Marquardt minimization of a sum of squared residuals.

use nalgebra::{DMatrix, DVector};

/// A residual vector `r(θ)` and its Jacobian `∂r/∂θ`.
pub trait LeastSquares {
    fn n_residuals(&self) -> usize;
    fn n_params(&self) -> usize;
    fn residuals(&self, theta: &DVector<f64>, out: &mut DVector<f64>);
    fn jacobian(&self, theta: &DVector<f64>, out: &mut DMatrix<f64>);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmSettings {
    pub initial_damping: f64,
    /// Damping is multiplied by this on a rejected step and divided by it on an accepted one.
    pub damping_factor: f64,
    pub cost_tolerance: f64,
    pub step_tolerance: f64,
    /// Cap on trial steps, accepted or not.
    pub max_iterations: usize,
}

impl Default for LmSettings {
    fn default() -> Self {
        LmSettings {
            initial_damping: 1e-3,
            damping_factor: 10.0,
            cost_tolerance: 1e-10,
            step_tolerance: 1e-12,
            max_iterations: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub theta: DVector<f64>,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub diagnostics: Vec<String>,
    /// Cost at the start and after every accepted step.
    pub cost_history: Vec<f64>,
    /// `JᵀJ` at the returned point.
    pub normal_matrix: DMatrix<f64>,
}

fn cost_of(r: &DVector<f64>) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Minimizes `Σ r_i(θ)²` from `theta`; `names` label parameters in diagnostics.
pub fn minimize(
    problem: &impl LeastSquares,
    mut theta: DVector<f64>,
    names: &[String],
    settings: &LmSettings,
) -> LmOutcome {
    let (m, n) = (problem.n_residuals(), problem.n_params());
    let mut r = DVector::zeros(m);
    let mut jac = DMatrix::zeros(m, n);
    problem.residuals(&theta, &mut r);
    let mut cost = cost_of(&r);
    let mut history = vec![cost];
    let mut diagnostics = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    if !cost.is_finite() {
        diagnostics.push("cost is not finite at the initial point".to_string());
        return LmOutcome {
            theta,
            cost,
            iterations,
            converged,
            diagnostics,
            cost_history: history,
            normal_matrix: DMatrix::zeros(n, n),
        };
    }
    problem.jacobian(&theta, &mut jac);
    let mut jtj = jac.tr_mul(&jac);
    if n == 0 || cost == 0.0 {
        return LmOutcome {
            theta,
            cost,
            iterations,
            converged: true,
            diagnostics,
            cost_history: history,
            normal_matrix: jtj,
        };
    }
    let mut gradient = jac.tr_mul(&r);
    let mut lambda = settings.initial_damping;
    let mut trial_r = DVector::zeros(m);

    while iterations < settings.max_iterations {
        iterations += 1;
        let mut a = jtj.clone();
        for k in 0..n {
            a[(k, k)] += lambda * jtj[(k, k)];
        }
        let Some(chol) = a.cholesky() else {
            let flat: Vec<&str> = (0..n)
                .filter(|&k| jtj[(k, k)] == 0.0)
                .map(|k| names.get(k).map_or("?", String::as_str))
                .collect();
            diagnostics.push(if flat.is_empty() {
                "singular normal matrix".to_string()
            } else {
                format!("singular normal matrix: data do not depend on {}", flat.join(", "))
            });
            break;
        };
        let step = -chol.solve(&gradient);
        let step_norm = step.amax();
        let trial = &theta + &step;
        problem.residuals(&trial, &mut trial_r);
        let trial_cost = cost_of(&trial_r);

        if trial_cost.is_finite() && trial_cost < cost {
            let decrease = (cost - trial_cost) / cost;
            theta = trial;
            std::mem::swap(&mut r, &mut trial_r);
            cost = trial_cost;
            history.push(cost);
            lambda = (lambda / settings.damping_factor).max(f64::MIN_POSITIVE);
            problem.jacobian(&theta, &mut jac);
            jtj = jac.tr_mul(&jac);
            gradient = jac.tr_mul(&r);
            if decrease < settings.cost_tolerance || step_norm < settings.step_tolerance || cost == 0.0 {
                converged = true;
                break;
            }
        } else {
            lambda *= settings.damping_factor;
            if step_norm < settings.step_tolerance {
                converged = true;
                break;
            }
            if !lambda.is_finite() {
                diagnostics.push("damping overflowed without finding a descent step".to_string());
                break;
            }
        }
    }
    if !converged && iterations >= settings.max_iterations {
        diagnostics.push(format!("iteration cap of {} reached", settings.max_iterations));
    }
    LmOutcome { theta, cost, iterations, converged, diagnostics, cost_history: history, normal_matrix: jtj }
}
