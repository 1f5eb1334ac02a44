//! Log-gamma and the regularized incomplete gamma functions, with argument
//! checks mapped onto this crate's errors.

use statrs::function::gamma;

use crate::error::{Error, Result};

/// ln Γ(x) for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    gamma::ln_gamma(x)
}

fn check(a: f64, x: f64) -> Result<()> {
    if !a.is_finite() || !x.is_finite() {
        return Err(Error::NumericalError(format!(
            "incomplete gamma needs finite arguments (a = {a}, x = {x})"
        )));
    }
    if a <= 0.0 || x < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "incomplete gamma needs a > 0 and x >= 0 (a = {a}, x = {x})"
        )));
    }
    Ok(())
}

fn numerical(e: impl std::fmt::Display) -> Error {
    Error::NumericalError(format!("incomplete gamma: {e}"))
}

/// Upper regularized incomplete gamma Q(a, x) = Γ(a, x) / Γ(a).
pub fn regularized_gamma_q(a: f64, x: f64) -> Result<f64> {
    check(a, x)?;
    if x == 0.0 {
        return Ok(1.0);
    }
    Ok(gamma::checked_gamma_ur(a, x).map_err(numerical)?.clamp(0.0, 1.0))
}

/// Lower regularized incomplete gamma P(a, x) = 1 - Q(a, x).
pub fn regularized_gamma_p(a: f64, x: f64) -> Result<f64> {
    check(a, x)?;
    if x == 0.0 {
        return Ok(0.0);
    }
    Ok(gamma::checked_gamma_lr(a, x).map_err(numerical)?.clamp(0.0, 1.0))
}

/// Survival function of the chi-squared distribution.
pub fn chi_squared_sf(statistic: f64, df: f64) -> Result<f64> {
    regularized_gamma_q(df / 2.0, statistic / 2.0)
}
