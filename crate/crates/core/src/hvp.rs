//! Hessian-free Hessian-vector products.

use crate::error::{ensure, Result};
use crate::vector::ParamVector;

/// Central-difference estimate of `H(phi) v`:
/// `(grad(phi + delta v) - grad(phi - delta v)) / (2 delta)`.
///
/// Calls `gradfn` exactly twice. The estimate is exact whenever the gradient
/// is quadratic in its argument, and its error is bounded by
/// `rho * delta * ||v||^2` when the Hessian is `rho`-Lipschitz.
pub fn hvp_hessian_free<F>(
    mut gradfn: F,
    phi: &ParamVector,
    v: &ParamVector,
    delta: f64,
) -> Result<ParamVector>
where
    F: FnMut(&ParamVector) -> Result<ParamVector>,
{
    ensure!(
        delta > 0.0 && delta.is_finite(),
        "finite-difference step must be positive, got {delta}"
    );
    ensure!(v.is_finite(), "direction vector is not finite");
    let plus = gradfn(&phi.axpy(delta, v)?)?;
    let minus = gradfn(&phi.axpy(-delta, v)?)?;
    let inv = 2.0 * delta;
    plus.zip_with(&minus, |a, b| (a - b) / inv)
}
