use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::{Real, Tensor};

/// Running averages for ADADELTA, one pair per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdadeltaState<T> {
    /// `E[g²]`
    pub grad_sq: Vec<Tensor<T>>,
    /// `E[Δx²]`
    pub update_sq: Vec<Tensor<T>>,
    pub rho: f64,
    pub epsilon: f64,
}

impl<T: Real> AdadeltaState<T> {
    pub const DEFAULT_RHO: f64 = 0.95;
    pub const DEFAULT_EPSILON: f64 = 1e-6;

    pub fn new(params: &ParamSet<T>, rho: f64, epsilon: f64) -> Self {
        Self {
            grad_sq: params.zeros_like(),
            update_sq: params.zeros_like(),
            rho,
            epsilon,
        }
    }

    /// One update: `E[g²] ← ρE[g²] + (1−ρ)g²`,
    /// `Δx = −√(E[Δx²]+ε)/√(E[g²]+ε)·g`, `E[Δx²] ← ρE[Δx²] + (1−ρ)Δx²`,
    /// `x ← x + Δx`.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &[Tensor<T>]) -> Result<()> {
        if grads.len() != params.len() || self.grad_sq.len() != params.len() {
            return Err(Error::Config(format!(
                "optimizer state covers {} parameters, model has {}, gradients {}",
                self.grad_sq.len(),
                params.len(),
                grads.len()
            )));
        }
        let rho = T::of(self.rho);
        let one_minus_rho = T::of(1.0 - self.rho);
        let eps = T::of(self.epsilon);
        for (idx, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let g = &grads[idx];
            let value = params.get_mut(id);
            if g.shape() != value.shape() {
                return Err(Error::Config(format!("gradient shape mismatch for parameter {idx}")));
            }
            let eg = self.grad_sq[idx].data_mut();
            let ex = self.update_sq[idx].data_mut();
            for (((x, &gi), egi), exi) in value.data_mut().iter_mut().zip(g.data()).zip(eg).zip(ex) {
                *egi = rho * *egi + one_minus_rho * gi * gi;
                let dx = -((*exi + eps).sqrt() / (*egi + eps).sqrt()) * gi;
                *exi = rho * *exi + one_minus_rho * dx * dx;
                *x = *x + dx;
            }
        }
        Ok(())
    }
}

/// Rescales `grads` in place so their joint L2 norm is at most
/// `max_norm`; returns the norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.norm_sq().as_f64()).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let k = T::of(max_norm / norm);
        for g in grads.iter_mut() {
            g.scale(k);
        }
    }
    norm
}
