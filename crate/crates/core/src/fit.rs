//! Small least-squares toolkit: weighted linear fits and a damped
//! Gauss-Newton (Levenberg-Marquardt) solver with finite-difference
//! Jacobians. Problem sizes here are a handful of parameters and at most a
//! few hundred points.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Weighted linear least squares: minimizes `sum w_i (y_i - X_i·β)²`.
/// Returns `(β, (XᵀWX)⁻¹, weighted SSR)`.
pub fn weighted_linear(
    design: &DMatrix<f64>,
    y: &[f64],
    weights: &[f64],
) -> Result<(DVector<f64>, DMatrix<f64>, f64)> {
    let n = design.nrows();
    let p = design.ncols();
    if y.len() != n || weights.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{n} design rows, {} observations, {} weights",
            y.len(),
            weights.len()
        )));
    }
    let mut xtwx = DMatrix::zeros(p, p);
    let mut xtwy = DVector::zeros(p);
    for i in 0..n {
        let w = weights[i];
        for a in 0..p {
            xtwy[a] += w * design[(i, a)] * y[i];
            for b in 0..p {
                xtwx[(a, b)] += w * design[(i, a)] * design[(i, b)];
            }
        }
    }
    let inv = xtwx.clone().try_inverse().ok_or_else(|| Error::FitFailed {
        reason: "singular normal equations".into(),
        residual: f64::NAN,
    })?;
    let beta: DVector<f64> = &inv * xtwy;
    let ssr = (0..n)
        .map(|i| {
            let pred: f64 = (0..p).map(|a| design[(i, a)] * beta[a]).sum();
            weights[i] * (y[i] - pred).powi(2)
        })
        .sum();
    Ok((beta, inv, ssr))
}

#[derive(Clone, Debug)]
pub struct LmSolution {
    pub params: Vec<f64>,
    /// Sum of squared (weighted) residuals at the solution.
    pub cost: f64,
    pub iterations: usize,
    /// `(JᵀJ)⁻¹` at the solution, if invertible.
    pub covariance: Option<DMatrix<f64>>,
}

/// Minimizes `|r(x)|²` from `x0`. `residuals` must return a vector of fixed
/// length; non-finite entries are treated as a rejected step.
pub fn levenberg_marquardt<F>(residuals: F, x0: &[f64], max_iter: usize) -> Result<LmSolution>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let p = x0.len();
    let cost_of = |r: &[f64]| -> f64 {
        let c: f64 = r.iter().map(|v| v * v).sum();
        if c.is_finite() { c } else { f64::INFINITY }
    };
    let jacobian = |x: &[f64], r0: &[f64]| -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(r0.len(), p);
        let mut xp = x.to_vec();
        for k in 0..p {
            let h = 1e-7 * x[k].abs().max(1e-3);
            xp[k] = x[k] + h;
            let rp = residuals(&xp);
            xp[k] = x[k] - h;
            let rm = residuals(&xp);
            xp[k] = x[k];
            for i in 0..r0.len() {
                jac[(i, k)] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        jac
    };

    let mut x = x0.to_vec();
    let mut r = residuals(&x);
    let mut cost = cost_of(&r);
    if !cost.is_finite() {
        return Err(Error::FitFailed { reason: "non-finite residual at start".into(), residual: cost });
    }
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut jac = jacobian(&x, &r);
    while iterations < max_iter {
        iterations += 1;
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * DVector::from_column_slice(&r);
        let mut accepted = false;
        for _ in 0..40 {
            let mut damped = jtj.clone();
            for k in 0..p {
                damped[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = damped.lu().solve(&(-&g)) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let tr = residuals(&trial);
            let tc = cost_of(&tr);
            if tc <= cost {
                let rel = (cost - tc) / cost.max(f64::MIN_POSITIVE);
                x = trial;
                r = tr;
                cost = tc;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = rel > 1e-13;
                break;
            }
            lambda *= 10.0;
            if lambda > 1e16 {
                break;
            }
        }
        if !accepted {
            break;
        }
        jac = jacobian(&x, &r);
    }
    if !cost.is_finite() {
        return Err(Error::FitFailed { reason: "diverged".into(), residual: cost });
    }
    let covariance = (jac.transpose() * &jac).try_inverse();
    Ok(LmSolution { params: x, cost, iterations, covariance })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = xs.iter().map(|x| 1.5 + 2.0 * x).collect();
        let design = DMatrix::from_fn(4, 2, |i, j| if j == 0 { 1.0 } else { xs[i] });
        let (beta, _, ssr) = weighted_linear(&design, &y, &[1.0; 4]).unwrap();
        assert!((beta[0] - 1.5).abs() < 1e-12 && (beta[1] - 2.0).abs() < 1e-12);
        assert!(ssr < 1e-20);
    }

    #[test]
    fn singular_design_is_an_error() {
        let design = DMatrix::from_element(3, 2, 1.0);
        assert!(weighted_linear(&design, &[1.0, 2.0, 3.0], &[1.0; 3]).is_err());
    }

    #[test]
    fn exponential_decay() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 * 0.25).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * (-0.7 * x).exp()).collect();
        let sol = levenberg_marquardt(
            |p| xs.iter().zip(&ys).map(|(x, y)| p[0] * (-p[1] * x).exp() - y).collect(),
            &[1.0, 0.1],
            200,
        )
        .unwrap();
        assert!((sol.params[0] - 3.0).abs() < 1e-7);
        assert!((sol.params[1] - 0.7).abs() < 1e-7);
    }
}
