//! Central finite-difference verification of tape gradients.

use crate::error::TensorError;
use crate::params::ParamSet;
use crate::tape::{Tape, Var};
use crate::tensor::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    /// Analytic and numeric values at the worst element.
    pub worst_values: (f64, f64),
    pub checked: usize,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GradCheckError {
    #[error("gradient checks require 64-bit precision, got {0}")]
    Precision(&'static str),
    #[error("eps must be positive")]
    Eps,
    #[error("non-finite value while perturbing `{param}`[{index}]")]
    NonFinite { param: String, index: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Compares the tape gradient of `f` with central differences for every
/// element of every parameter. `f` binds whatever parameters it needs on
/// the tape it is given and returns a scalar node.
pub fn grad_check<T, F>(params: &ParamSet<T>, eps: f64, f: F) -> Result<GradCheckReport, GradCheckError>
where
    T: Real,
    F: Fn(&Tape<T>, &ParamSet<T>) -> Result<Var, TensorError>,
{
    if T::BYTES != 8 {
        return Err(GradCheckError::Precision(T::NAME));
    }
    if eps.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(GradCheckError::Eps);
    }

    let analytic = {
        let tape = Tape::new();
        let loss = f(&tape, params)?;
        tape.backward(loss)?.for_params(params)
    };

    let eval = |p: &ParamSet<T>, name: &str, index: usize| -> Result<f64, GradCheckError> {
        let tape = Tape::new();
        let out = f(&tape, p).map_err(|e| match e {
            TensorError::NonFinite { .. } => GradCheckError::NonFinite {
                param: name.to_string(),
                index,
            },
            other => other.into(),
        })?;
        let v = tape.scalar(out).as_f64();
        if !v.is_finite() {
            return Err(GradCheckError::NonFinite {
                param: name.to_string(),
                index,
            });
        }
        Ok(v)
    };

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        worst_values: (0.0, 0.0),
        checked: 0,
    };
    for id in params.ids() {
        let name = params.name(id).to_string();
        for i in 0..params.get(id).len() {
            let orig = params.get(id).data()[i];
            let mut at = |offset: f64| -> Result<f64, GradCheckError> {
                work.get_mut(id).data_mut()[i] = T::of(orig.as_f64() + offset);
                eval(&work, &name, i)
            };
            let (p1, m1, p2, m2) = (at(eps)?, at(-eps)?, at(2.0 * eps)?, at(-2.0 * eps)?);
            work.get_mut(id).data_mut()[i] = orig;

            // fourth-order central stencil
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * eps);
            let a = analytic[id.index()].data()[i].as_f64();
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel = (a - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = name.clone();
                report.worst_index = i;
                report.worst_values = (a, numeric);
            }
        }
    }
    Ok(report)
}
