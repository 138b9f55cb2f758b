//! Small numeric helpers shared across modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{EntacError, Result};

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for x in values {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Numerically stable `log(sum(exp(xs)))`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Solves `a x = b` with a dense LU factorization and checks the residual.
pub fn solve_dense(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    context: &'static str,
    limit: f64,
) -> Result<DVector<f64>> {
    let x = a
        .clone()
        .lu()
        .solve(b)
        .ok_or(EntacError::Residual { context, residual: f64::INFINITY, limit })?;
    let residual = (a * &x - b).amax();
    if !(residual <= limit) {
        return Err(EntacError::Residual { context, residual, limit });
    }
    Ok(x)
}

/// `sum_{s,a} x(s,a)^2`, compensated.
pub fn frob_sq(m: &DMatrix<f64>) -> f64 {
    compensated_sum(m.iter().map(|x| x * x))
}

/// Kullback-Leibler divergence `KL(p || q)` with `0 log 0 = 0`.
pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    compensated_sum(
        p.iter()
            .zip(q)
            .filter(|(pi, _)| **pi > 0.0)
            .map(|(pi, qi)| pi * (pi / qi).ln()),
    )
}

/// Same as [`kl`] but from log-probabilities, avoiding `ln` of tiny ratios.
pub fn kl_from_logs(p: &[f64], log_p: &[f64], log_q: &[f64]) -> f64 {
    compensated_sum(
        p.iter()
            .zip(log_p.iter().zip(log_q))
            .filter(|(pi, _)| **pi > 0.0)
            .map(|(pi, (lp, lq))| pi * (lp - lq)),
    )
}

pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    compensated_sum(a.iter().zip(b).map(|(x, y)| (x - y).abs()))
}
