//! Dense implicit-derivative oracle for small models.
//!
//! Materializes the Hessian by central differences of the exact gradient and
//! solves `(I + H / lambda) x = g` directly. Only practical for a few hundred
//! parameters; the federated algorithms never call this.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure, Error, Result};
use crate::model::{gradient, Batch, ModelSpec};
use crate::vector::ParamVector;

/// Step used to difference the gradient when building a Hessian.
pub const HESSIAN_FD_STEP: f64 = 1e-5;

/// Largest condition number accepted before the system is declared singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Dense Hessian of `gradfn` at `phi`, one column per coordinate, symmetrized.
pub fn dense_hessian<F>(mut gradfn: F, phi: &ParamVector, h: f64) -> Result<DMatrix<f64>>
where
    F: FnMut(&ParamVector) -> Result<ParamVector>,
{
    ensure!(h > 0.0, "difference step must be positive");
    let d = phi.len();
    let mut hess = DMatrix::<f64>::zeros(d, d);
    let mut probe: Vec<f64> = phi.as_slice().to_vec();
    for j in 0..d {
        let orig = probe[j];
        probe[j] = orig + h;
        let plus = gradfn(&ParamVector::from_vec(probe.clone()))?;
        probe[j] = orig - h;
        let minus = gradfn(&ParamVector::from_vec(probe.clone()))?;
        probe[j] = orig;
        for i in 0..d {
            hess[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    Ok((&hess + hess.transpose()) * 0.5)
}

/// `(I + H / lambda)^{-1} g` for an arbitrary gradient function.
pub fn implicit_meta_gradient_with<F>(
    gradfn: F,
    phi: &ParamVector,
    lambda: f64,
    g: &ParamVector,
) -> Result<ParamVector>
where
    F: FnMut(&ParamVector) -> Result<ParamVector>,
{
    ensure!(lambda > 0.0, "regularization strength must be positive");
    ensure!(phi.len() == g.len(), "phi and g lengths differ");
    let d = phi.len();
    let hess = dense_hessian(gradfn, phi, HESSIAN_FD_STEP)?;
    let system = DMatrix::<f64>::identity(d, d) + hess / lambda;

    let singular = system.clone().singular_values();
    let smax = singular.max();
    let smin = singular.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::Singular { condition });
    }

    let rhs = DVector::from_column_slice(g.as_slice());
    let x = system
        .lu()
        .solve(&rhs)
        .ok_or(Error::Singular { condition })?;
    Ok(ParamVector::from_vec(x.iter().copied().collect()))
}

/// Exact implicit meta-gradient `(I + H/lambda)^{-1} g` of a model's loss on
/// `batch` at `phi`.
pub fn implicit_meta_gradient_oracle(
    spec: &ModelSpec,
    phi: &ParamVector,
    lambda: f64,
    g: &ParamVector,
    batch: &Batch,
) -> Result<ParamVector> {
    implicit_meta_gradient_with(|p| gradient(spec, p, batch), phi, lambda, g)
}
