//! Adadelta step rule with per-entry adaptive rates.
//!
//! ```text
//! E[g^2]  <- rho E[g^2] + (1 - rho) g^2
//! delta   = -sqrt(E[dx^2] + eps) / sqrt(E[g^2] + eps) * g
//! E[dx^2] <- rho E[dx^2] + (1 - rho) delta^2
//! ```

use crate::error::{Error, Result};

pub const DEFAULT_RHO: f64 = 0.95;
pub const DEFAULT_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct AdadeltaState {
    avg_sq_grad: Vec<f64>,
    avg_sq_update: Vec<f64>,
    rho: f64,
    eps: f64,
}

impl AdadeltaState {
    pub fn new(len: usize, rho: f64, eps: f64) -> Self {
        Self { avg_sq_grad: vec![0.0; len], avg_sq_update: vec![0.0; len], rho, eps }
    }

    pub fn len(&self) -> usize {
        self.avg_sq_grad.len()
    }

    pub fn is_empty(&self) -> bool {
        self.avg_sq_grad.is_empty()
    }

    pub fn avg_sq_grad(&self) -> &[f64] {
        &self.avg_sq_grad
    }

    pub fn avg_sq_update(&self) -> &[f64] {
        &self.avg_sq_update
    }

    fn check(&self, grad: &[f64]) -> Result<()> {
        if grad.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), found: grad.len() });
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient);
        }
        Ok(())
    }

    #[inline]
    fn update_entry(&mut self, i: usize, g: f64) -> f64 {
        let rho = self.rho;
        self.avg_sq_grad[i] = rho * self.avg_sq_grad[i] + (1.0 - rho) * g * g;
        let delta = -((self.avg_sq_update[i] + self.eps).sqrt() / (self.avg_sq_grad[i] + self.eps).sqrt()) * g;
        self.avg_sq_update[i] = rho * self.avg_sq_update[i] + (1.0 - rho) * delta * delta;
        delta
    }

    /// Advances the accumulators and returns the update for `grad`.
    pub fn step(&mut self, grad: &[f64]) -> Result<Vec<f64>> {
        self.check(grad)?;
        Ok(grad.iter().enumerate().map(|(i, &g)| self.update_entry(i, g)).collect())
    }

    /// Like [`step`](Self::step) but adds the update to `param` in place.
    pub fn apply(&mut self, param: &mut [f64], grad: &[f64]) -> Result<()> {
        self.check(grad)?;
        if param.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), found: param.len() });
        }
        for (i, (p, &g)) in param.iter_mut().zip(grad).enumerate() {
            *p += self.update_entry(i, g);
        }
        Ok(())
    }
}
