//! Damped least squares (Levenberg–Marquardt with Marquardt diagonal scaling).

use nalgebra::{DMatrix, DVector};

use super::{FitParameter, FitResult};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmConfig {
    pub max_iterations: usize,
    /// Converged when an accepted step is smaller than this fraction of the
    /// parameter vector, both measured in the Jacobian-column-scaled norm.
    pub relative_tolerance: f64,
    /// Forward-difference step, relative to the parameter magnitude.
    pub fd_step: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            relative_tolerance: 1e-10,
            fd_step: 1e-6,
        }
    }
}

/// Data and model for a one-dimensional weighted curve fit.
pub struct CurveFit<'a, F>
where
    F: Fn(f64, &[f64]) -> f64,
{
    pub x: &'a [f64],
    pub y: &'a [f64],
    /// Per-point standard errors. `None` fits unweighted and scales the
    /// covariance by the reduced chi-square.
    pub sigma: Option<&'a [f64]>,
    pub model: F,
}

impl<F> CurveFit<'_, F>
where
    F: Fn(f64, &[f64]) -> f64,
{
    fn weight(&self, i: usize) -> f64 {
        self.sigma.map_or(1.0, |s| 1.0 / s[i])
    }

    fn residuals(&self, p: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.x.len(),
            (0..self.x.len()).map(|i| (self.y[i] - (self.model)(self.x[i], p)) * self.weight(i)),
        )
    }

    /// Jacobian of the weighted model with respect to the free parameters.
    fn jacobian(&self, p: &[f64], free: &[usize], step: f64) -> DMatrix<f64> {
        let base: Vec<f64> = (0..self.x.len()).map(|i| (self.model)(self.x[i], p)).collect();
        let mut jac = DMatrix::zeros(self.x.len(), free.len());
        let mut probe = p.to_vec();
        for (c, &k) in free.iter().enumerate() {
            let h = step * p[k].abs().max(1e-8);
            probe[k] = p[k] + h;
            let h = probe[k] - p[k];
            for i in 0..self.x.len() {
                jac[(i, c)] = ((self.model)(self.x[i], &probe) - base[i]) / h * self.weight(i);
            }
            probe[k] = p[k];
        }
        jac
    }

    fn chi2(&self, p: &[f64]) -> f64 {
        self.residuals(p).norm_squared()
    }

    /// Minimizes chi-square starting from `initial`. Parameters flagged in
    /// `fixed` stay at their initial value and get zero uncertainty.
    pub fn solve(&self, names: &[&str], initial: &[f64], fixed: &[bool], config: &LmConfig) -> FitResult {
        assert_eq!(names.len(), initial.len());
        assert_eq!(fixed.len(), initial.len());
        let free: Vec<usize> = (0..initial.len()).filter(|&k| !fixed[k]).collect();
        let mut p = initial.to_vec();
        let mut chi2 = self.chi2(&p);
        let mut lambda = 1e-3;
        let mut converged = false;
        let mut iterations = 0;

        while iterations < config.max_iterations && chi2.is_finite() {
            iterations += 1;
            if free.is_empty() {
                converged = true;
                break;
            }
            let jac = self.jacobian(&p, &free, config.fd_step);
            let r = self.residuals(&p);
            let jtj = jac.transpose() * &jac;
            let grad = jac.transpose() * r;
            let max_diag = jtj.diagonal().max().max(f64::MIN_POSITIVE);

            let mut accepted = None;
            while lambda < 1e20 {
                let mut damped = jtj.clone();
                for c in 0..free.len() {
                    damped[(c, c)] += lambda * jtj[(c, c)].max(1e-12 * max_diag);
                }
                if let Some(delta) = damped.cholesky().map(|ch| ch.solve(&grad)) {
                    let mut trial = p.clone();
                    for (c, &k) in free.iter().enumerate() {
                        trial[k] += delta[c];
                    }
                    let trial_chi2 = self.chi2(&trial);
                    if trial_chi2.is_finite() && trial_chi2 <= chi2 {
                        accepted = Some((trial, trial_chi2, delta));
                        lambda = (lambda / 10.0).max(1e-15);
                        break;
                    }
                }
                lambda *= 10.0;
            }

            match accepted {
                Some((trial, trial_chi2, delta)) => {
                    // Column-scaled norms: directions the data cannot resolve
                    // (zero Jacobian column) do not block convergence.
                    let (mut step_norm, mut param_norm) = (0.0, 0.0);
                    for (c, &k) in free.iter().enumerate() {
                        let d = jtj[(c, c)].sqrt();
                        step_norm += (d * delta[c]).powi(2);
                        param_norm += (d * trial[k]).powi(2);
                    }
                    let small = step_norm.sqrt() <= config.relative_tolerance * param_norm.sqrt();
                    p = trial;
                    chi2 = trial_chi2;
                    if small {
                        converged = true;
                        break;
                    }
                }
                None => {
                    // No damping reduces chi-square: a numerical minimum.
                    converged = true;
                    break;
                }
            }
        }

        let n = self.x.len();
        let dof = n.saturating_sub(free.len()).max(1);
        let reduced = chi2 / dof as f64;
        let mut covariance = vec![0.0; p.len() * p.len()];
        let mut uncertainties = vec![None; p.len()];
        if converged {
            let jac = self.jacobian(&p, &free, config.fd_step);
            let jtj = jac.transpose() * &jac;
            if let Some(inv) = jtj.try_inverse() {
                let scale = if self.sigma.is_some() { 1.0 } else { reduced };
                for (a, &ka) in free.iter().enumerate() {
                    for (b, &kb) in free.iter().enumerate() {
                        covariance[ka * p.len() + kb] = inv[(a, b)] * scale;
                    }
                }
                for k in 0..p.len() {
                    let var = covariance[k * p.len() + k];
                    uncertainties[k] = Some(if var.is_finite() && var >= 0.0 { var.sqrt() } else { f64::NAN });
                }
            }
        }

        FitResult {
            parameters: names
                .iter()
                .zip(&p)
                .zip(uncertainties)
                .map(|((name, &value), uncertainty)| FitParameter {
                    name: (*name).to_string(),
                    value,
                    uncertainty,
                })
                .collect(),
            derived: Vec::new(),
            covariance,
            reduced_chi_square: reduced,
            converged,
            iterations,
            warnings: Vec::new(),
        }
    }

    /// Fit of Poisson counts expressed in units of `1/counts_per_unit`
    /// counts. After a first pass with the given `sigma`, the weights are
    /// recomputed from the model, σ² = model/`counts_per_unit` (at least one
    /// count), until the parameters settle. The fixed point is the Poisson
    /// maximum-likelihood estimate, free of the low bias that data-derived
    /// weights give.
    pub fn solve_poisson(
        &self,
        names: &[&str],
        initial: &[f64],
        fixed: &[bool],
        config: &LmConfig,
        counts_per_unit: f64,
    ) -> FitResult {
        let mut fit = self.solve(names, initial, fixed, config);
        let floor = 1.0 / counts_per_unit;
        for _ in 0..MAX_REWEIGHTS {
            if !fit.converged {
                break;
            }
            let p: Vec<f64> = fit.parameters.iter().map(|q| q.value).collect();
            let sigma: Vec<f64> = self
                .x
                .iter()
                .map(|&x| ((self.model)(x, &p).max(floor) / counts_per_unit).sqrt())
                .collect();
            let iterations = fit.iterations;
            fit = CurveFit { x: self.x, y: self.y, sigma: Some(&sigma), model: &self.model }.solve(names, &p, fixed, config);
            fit.iterations += iterations;
            let settled = fit
                .parameters
                .iter()
                .zip(&p)
                .all(|(q, &old)| (q.value - old).abs() <= 1e-9 * old.abs().max(1e-12));
            if settled {
                break;
            }
        }
        fit
    }
}

const MAX_REWEIGHTS: usize = 20;
