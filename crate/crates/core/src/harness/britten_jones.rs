use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// t-statistics of the no-intercept regression of a vector of ones on the
/// returns. Each coefficient is proportional to a Markowitz weight, so the
/// t-statistics test the weights under Gaussian returns.
pub fn britten_jones(returns: &DMatrix<f64>) -> Result<DVector<f64>> {
    let (t, p) = returns.shape();
    if t <= p {
        return Err(Error::ShapeMismatch(format!("{t} rows cannot fit {p} coefficients")));
    }
    let sv = returns.clone().singular_values();
    if !(sv.min() > 1e-10 * sv.max()) {
        return Err(Error::RankDeficientRegression);
    }
    let gram_inv = returns
        .tr_mul(returns)
        .cholesky()
        .ok_or(Error::RankDeficientRegression)?
        .inverse();
    let ones = DVector::from_element(t, 1.0);
    let beta = &gram_inv * returns.tr_mul(&ones);
    let resid = ones - returns * &beta;
    let s2 = resid.norm_squared() / (t - p) as f64;
    Ok(DVector::from_fn(p, |j, _| beta[j] / (s2 * gram_inv[(j, j)]).sqrt()))
}
