//! The four-dimensional state fed to the p-norm selector, and the one-step
//! loss.
//!
//! ```text
//! s1[n] = log10 |y[n] - θ[n]ᵀ x[n]|
//! s2[n] = (1/K) Σ_{k=1..K} log10( |y[n-k] - θ[n]ᵀ x[n-k]| / ‖x[n-k]‖ )
//! s3[n] = log10 ‖x[n]‖
//! s4[n] = ϖ s4[n-1] + (1-ϖ) log10( ‖θ[n] - θ[n-1]‖ / ρ )
//! ```
//!
//! with `K = min(n, M_av)`. Every logarithm argument is clamped from below at
//! `log_floor` so states stay finite. The one-step loss is the same window
//! average as `s2` but evaluated with `θ[n+1]` and with the current pair
//! included (`k = 0..K-1`), i.e. it is exactly `s2[n+1]`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{distance, dot, norm};

pub const DEFAULT_LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Sliding-window length `M_av`.
    pub window: usize,
    /// Smoothing factor `ϖ` of the displacement state.
    pub smoothing: f64,
    pub log_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            window: 300,
            smoothing: 0.3,
            log_floor: DEFAULT_LOG_FLOOR,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::InvalidConfig("feature window must be positive".into()));
        }
        if !(self.smoothing > 0.0 && self.smoothing < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "smoothing factor must lie in (0, 1), got {}",
                self.smoothing
            )));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::InvalidConfig("log floor must be positive".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn clamped_log10(&self, v: f64) -> f64 {
        v.max(self.log_floor).log10()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StateVector {
    /// Log prior loss.
    pub s1: f64,
    /// Windowed log posterior loss, normalized by the input norm.
    pub s2: f64,
    /// Log input norm.
    pub s3: f64,
    /// Smoothed log displacement of the estimate.
    pub s4: f64,
}

impl StateVector {
    pub fn new(s1: f64, s2: f64, s3: f64, s4: f64) -> Self {
        Self { s1, s2, s3, s4 }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.s1, self.s2, self.s3, self.s4]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Ring buffer of the most recent `(x, y)` pairs, newest first.
#[derive(Debug, Clone)]
pub struct DataWindow {
    pairs: VecDeque<(Vec<f64>, f64)>,
    capacity: usize,
}

impl DataWindow {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "window capacity must be positive");
        Self {
            pairs: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Pushes the newest pair, evicting the oldest one when full.
    pub fn push(&mut self, x: Vec<f64>, y: f64) {
        if self.pairs.len() == self.capacity {
            self.pairs.pop_back();
        }
        self.pairs.push_front((x, y));
    }

    /// Pairs from newest (index 0) to oldest.
    pub fn iter(&self) -> impl ExactSizeIterator<Item = (&[f64], f64)> + '_ {
        self.pairs.iter().map(|(x, y)| (x.as_slice(), *y))
    }

    pub fn get(&self, age: usize) -> Option<(&[f64], f64)> {
        self.pairs.get(age).map(|(x, y)| (x.as_slice(), *y))
    }
}

/// Mean over the window of `log10(|y - θᵀx| / ‖x‖)`, both arguments clamped.
/// An empty window yields 0.
pub fn windowed_log_posterior(window: &DataWindow, theta: &[f64], cfg: &FeatureConfig) -> f64 {
    if window.is_empty() {
        return 0.0;
    }
    let total: f64 = window
        .iter()
        .map(|(x, y)| {
            let err = (y - dot(theta, x)).abs().max(cfg.log_floor);
            let xn = norm(x).max(cfg.log_floor);
            (err / xn).log10()
        })
        .sum();
    total / window.len() as f64
}

/// State at time `n`.
///
/// `window` holds the pairs `n-1, n-2, …` (the current pair is *not* yet in
/// it). `prev_theta` is `θ[n-1]`; `prev_s4` is `s4[n-1]`.
#[allow(clippy::too_many_arguments)]
pub fn compute_state(
    window: &DataWindow,
    theta: &[f64],
    prev_theta: &[f64],
    x: &[f64],
    y: f64,
    prev_s4: f64,
    rho: f64,
    cfg: &FeatureConfig,
) -> StateVector {
    let s2 = windowed_log_posterior(window, theta, cfg);
    let displacement = cfg.clamped_log10(distance(theta, prev_theta)) - rho.log10();
    current_state(theta, x, y, s2, cfg.smoothing * prev_s4 + (1.0 - cfg.smoothing) * displacement, cfg)
}

/// Assembles a state from the instantaneous quantities plus a given `s2`, `s4`.
pub fn current_state(theta: &[f64], x: &[f64], y: f64, s2: f64, s4: f64, cfg: &FeatureConfig) -> StateVector {
    StateVector {
        s1: cfg.clamped_log10((y - dot(theta, x)).abs()),
        s2,
        s3: cfg.clamped_log10(norm(x)),
        s4,
    }
}

/// `s4[0] = log10(p0) + (p0 - 1) s1[0] + s3[0]`, which equals
/// `log10(‖θ[1] - θ[0]‖ / ρ)` when `θ[1]` is the LMP update with `p = p0`.
pub fn initial_s4(p0: f64, s1_0: f64, s3_0: f64) -> f64 {
    p0.log10() + (p0 - 1.0) * s1_0 + s3_0
}

/// One-step loss `g_n(z_n)`: the windowed log posterior loss under
/// `θ[n+1]`, where `window` already contains the current pair at age 0.
pub fn one_step_loss(window: &DataWindow, theta_next: &[f64], cfg: &FeatureConfig) -> f64 {
    windowed_log_posterior(window, theta_next, cfg)
}

/// Incremental bookkeeping for the state recursion along one data stream.
///
/// Per time step call [`StateTracker::observe`] with `θ[n]` before the filter
/// update, then [`StateTracker::record`] with `θ[n+1]` after it. `record`
/// returns the one-step loss, which is reused as `s2[n+1]`.
#[derive(Debug, Clone)]
pub struct StateTracker {
    cfg: FeatureConfig,
    rho: f64,
    window: DataWindow,
    prev_theta: Option<Vec<f64>>,
    prev_s4: f64,
    next_s2: f64,
    steps: usize,
}

impl StateTracker {
    pub fn new(cfg: FeatureConfig, rho: f64) -> Self {
        Self {
            window: DataWindow::new(cfg.window),
            cfg,
            rho,
            prev_theta: None,
            prev_s4: 0.0,
            next_s2: 0.0,
            steps: 0,
        }
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    /// Number of completed `record` calls.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Window with the most recent pair at age 0.
    pub fn window(&self) -> &DataWindow {
        &self.window
    }

    /// State `s[n]` for the incoming pair. At `n = 0` the displacement state
    /// is initialized from `p0`, the exponent the first update will use.
    pub fn observe(&mut self, theta: &[f64], x: &[f64], y: f64, p0: f64) -> StateVector {
        let s = match &self.prev_theta {
            None => {
                let mut s = current_state(theta, x, y, 0.0, 0.0, &self.cfg);
                s.s4 = initial_s4(p0, s.s1, s.s3);
                s
            }
            Some(prev) => {
                let displacement = self.cfg.clamped_log10(distance(theta, prev)) - self.rho.log10();
                let s4 = self.cfg.smoothing * self.prev_s4 + (1.0 - self.cfg.smoothing) * displacement;
                current_state(theta, x, y, self.next_s2, s4, &self.cfg)
            }
        };
        self.prev_s4 = s.s4;
        s
    }

    /// Pushes the current pair and returns `g_n = s2[n+1]` under `theta_next`.
    pub fn record(&mut self, theta: &[f64], x: &[f64], y: f64, theta_next: &[f64]) -> f64 {
        self.window.push(x.to_vec(), y);
        self.prev_theta = Some(theta.to_vec());
        self.next_s2 = one_step_loss(&self.window, theta_next, &self.cfg);
        self.steps += 1;
        self.next_s2
    }
}
