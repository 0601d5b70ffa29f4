//! Least-mean-p-power (LMP) adaptive filter.
//!
//! ```text
//! e[n]     = y[n] - x[n]ᵀ θ[n]
//! θ[n+1]   = θ[n] + ρ p |e[n]|^(p-2) e[n] x[n]
//! ```
//!
//! `p = 2` is LMS (update `2ρ e x`), `p = 1` is sign-LMS (update `ρ sign(e) x`).
//! The factor `|e|^(p-2) e` is evaluated as `sign(e) |e|^(p-1)` with
//! `sign(0) = 0`, which removes the singularity at `e = 0` for `p < 2`.

use crate::error::{Error, Result};
use crate::linalg::dot;

/// Parameter estimate `θ` together with the learning rate `ρ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    theta: Vec<f64>,
    rho: f64,
}

impl FilterState {
    /// Zero-initialized estimate of order `order`.
    pub fn new(order: usize, rho: f64) -> Result<Self> {
        Self::with_theta(vec![0.0; order], rho)
    }

    pub fn with_theta(theta: Vec<f64>, rho: f64) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::InvalidConfig("filter order must be positive".into()));
        }
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate must be positive, got {rho}")));
        }
        Ok(Self { theta, rho })
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn order(&self) -> usize {
        self.theta.len()
    }

    /// Prior error `y - θᵀx`.
    pub fn prior_error(&self, x: &[f64], y: f64) -> Result<f64> {
        self.check_dim(x)?;
        Ok(y - dot(&self.theta, x))
    }

    /// One LMP update with exponent `p`, returning the new state.
    pub fn lmp_step(&self, x: &[f64], y: f64, p: f64) -> Result<Self> {
        let mut next = self.clone();
        next.lmp_update(x, y, p)?;
        Ok(next)
    }

    /// In-place form of [`FilterState::lmp_step`]. Returns the prior error.
    pub fn lmp_update(&mut self, x: &[f64], y: f64, p: f64) -> Result<f64> {
        if !(1.0..=2.0).contains(&p) {
            return Err(Error::PNormOutOfRange(p));
        }
        self.check_dim(x)?;
        if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("regressor or observation"));
        }
        let e = y - dot(&self.theta, x);
        if !e.is_finite() {
            return Err(Error::NonFinite("prior error"));
        }
        let gain = self.rho * p * lmp_gain(e, p);
        if gain != 0.0 {
            for (t, xi) in self.theta.iter_mut().zip(x) {
                *t += gain * xi;
            }
        }
        Ok(e)
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.theta.len() {
            return Err(Error::DimensionMismatch {
                expected: self.theta.len(),
                found: x.len(),
            });
        }
        Ok(())
    }
}

/// `sign(e) |e|^(p-1)` with `sign(0) = 0`.
#[inline]
pub fn lmp_gain(e: f64, p: f64) -> f64 {
    if e == 0.0 {
        0.0
    } else if p == 2.0 {
        e
    } else if p == 1.0 {
        e.signum()
    } else {
        e.signum() * e.abs().powf(p - 1.0)
    }
}
