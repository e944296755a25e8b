use crate::error::{Error, Result};
use crate::linalg::{spd_solve, Matrix, Vector};

pub const TRADING_DAYS: f64 = 252.0;

/// Global minimum-variance weights `S^-1 1 / (1' S^-1 1)`.
pub fn gmv_weights(sigma: &Matrix) -> Result<Vector> {
    let p = sigma.nrows();
    let x = spd_solve(sigma, &Vector::from_element(p, 1.0))?;
    let total = x.sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Numerical("minimum-variance normalization is not positive".into()));
    }
    Ok(x / total)
}

/// `sqrt(w' S w)`, optionally times `sqrt(252)`.
pub fn portfolio_risk(weights: &Vector, sigma: &Matrix, annualize: bool) -> Result<f64> {
    if sigma.shape() != (weights.len(), weights.len()) {
        return Err(Error::shape(weights.len(), format!("{:?}", sigma.shape())));
    }
    let q = weights.dot(&(sigma * weights));
    if q < -1e-12 {
        return Err(Error::Numerical(format!("portfolio variance {q:e} is negative")));
    }
    let risk = q.max(0.0).sqrt();
    Ok(if annualize { risk * TRADING_DAYS.sqrt() } else { risk })
}
