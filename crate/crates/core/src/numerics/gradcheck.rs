//! Central finite differences, the reference used to validate `backward`.

use super::{Matrix, ParamId, ParamStore};
use crate::error::Result;

pub const DEFAULT_EPS: f64 = 1e-5;

/// Central-difference estimate `(f(p+eps) − f(p−eps)) / 2eps` for every
/// entry of every parameter. Parameters are restored afterwards.
pub fn finite_difference_grad<F>(store: &mut ParamStore, mut f: F, eps: f64) -> Result<Vec<Matrix>>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    let ids: Vec<ParamId> = store.ids().collect();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let (rows, cols) = store.value(id).shape();
        let mut g = Matrix::zeros(rows, cols);
        for i in 0..rows * cols {
            g.as_mut_slice()[i] = central_difference(store, id, i, &mut f, eps)?;
        }
        out.push(g);
    }
    Ok(out)
}

/// Central difference for a single scalar entry.
pub fn central_difference<F>(store: &mut ParamStore, id: ParamId, entry: usize, f: &mut F, eps: f64) -> Result<f64>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    let orig = store.value(id).as_slice()[entry];
    store.value_mut(id).as_mut_slice()[entry] = orig + eps;
    let plus = f(store);
    store.value_mut(id).as_mut_slice()[entry] = orig - eps;
    let minus = f(store);
    store.value_mut(id).as_mut_slice()[entry] = orig;
    Ok((plus? - minus?) / (2.0 * eps))
}

/// `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

pub fn max_relative_error(analytic: &[Matrix], numeric: &[Matrix]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .flat_map(|(a, n)| a.as_slice().iter().zip(n.as_slice()))
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// Absolute error a central difference of a function with magnitude `f0`
/// can carry from rounding alone.
pub fn roundoff_bound(f0: f64, eps: f64) -> f64 {
    64.0 * f64::EPSILON * f0.abs().max(1.0) / eps
}

/// Like [`max_relative_error`], but entries whose absolute disagreement is
/// within `noise` count as agreeing. Structurally zero gradients otherwise
/// fail on pure finite-difference rounding.
pub fn max_relative_error_above_noise(analytic: &[Matrix], numeric: &[Matrix], noise: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .flat_map(|(a, n)| a.as_slice().iter().zip(n.as_slice()))
        .filter(|(&a, &n)| (a - n).abs() > noise)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}
