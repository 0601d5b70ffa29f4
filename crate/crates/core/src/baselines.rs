//! Comparison methods driven by the same data stream as the policy-iteration
//! agent: LMP with a fixed exponent, LMP with a uniformly random exponent per
//! step, and a semi-gradient kernel TD(0) exponent selector.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kbrl::ActionGrid;
use crate::linalg::axpy;
use crate::lmp_filter::FilterState;
use crate::rff::{GridTables, RffMap, StateProjection};
use crate::rng::{stream_rng, streams};
use crate::state_features::{FeatureConfig, StateTracker};

/// Settings of the kernel TD(0) selector. It shares the state, action grid,
/// one-step loss and feature construction of the policy-iteration agent, and
/// replays uniformly sampled past transitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Td0Config {
    pub alpha: f64,
    pub eta: f64,
    pub rff_dim: usize,
    pub sigma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Time constant of the exponential decay from start to end.
    pub epsilon_decay_steps: f64,
    pub replay_capacity: usize,
    pub replays: usize,
    pub initial_p: f64,
    pub features: FeatureConfig,
    pub grid: ActionGrid,
}

impl Default for Td0Config {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            eta: 0.1,
            rff_dim: 300,
            sigma: 1.0,
            epsilon_start: 0.1,
            epsilon_end: 0.01,
            epsilon_decay_steps: 2000.0,
            replay_capacity: 500,
            replays: 5,
            initial_p: 2.0,
            features: FeatureConfig::default(),
            grid: ActionGrid::quarter_steps(),
        }
    }
}

impl Td0Config {
    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!("TD(0) discount {} outside [0, 1)", self.alpha)));
        }
        if !(self.eta >= 0.0) || !(self.sigma > 0.0) || self.rff_dim == 0 {
            return Err(Error::InvalidConfig("invalid TD(0) step size, bandwidth or dimension".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return Err(Error::InvalidConfig("exploration rates must lie in [0, 1]".into()));
        }
        if !(1.0..=2.0).contains(&self.initial_p) {
            return Err(Error::PNormOutOfRange(self.initial_p));
        }
        Ok(())
    }

    pub fn epsilon(&self, step: usize) -> f64 {
        let decay = if self.epsilon_decay_steps > 0.0 {
            (-(step as f64) / self.epsilon_decay_steps).exp()
        } else {
            0.0
        };
        self.epsilon_end + (self.epsilon_start - self.epsilon_end) * decay
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineKind {
    FixedP { p: f64 },
    RandomP {
        #[serde(default = "ActionGrid::quarter_steps")]
        grid: ActionGrid,
    },
    KernelTd0(Td0Config),
}

impl BaselineKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            BaselineKind::FixedP { p } if !(1.0..=2.0).contains(p) => Err(Error::PNormOutOfRange(*p)),
            BaselineKind::KernelTd0(cfg) => cfg.validate(),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
struct Transition {
    phi: Vec<f64>,
    loss: f64,
    next: StateProjection,
}

/// Semi-gradient TD(0) on random Fourier features:
/// `w ← w + η (g + α min_a' wᵀφ(s', a') - wᵀφ(s, a)) φ(s, a)`.
#[derive(Debug, Clone)]
pub struct KernelTd0 {
    cfg: Td0Config,
    tracker: StateTracker,
    tables: GridTables,
    map: RffMap,
    w: Vec<f64>,
    pending: Option<(Vec<f64>, f64)>,
    buffer: VecDeque<Transition>,
    rng: ChaCha8Rng,
    steps: usize,
}

impl KernelTd0 {
    pub fn new(cfg: Td0Config, rho: f64, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let map = RffMap::sample(cfg.rff_dim, cfg.sigma, &mut stream_rng(seed, streams::FEATURE_MAP))?;
        let tables = GridTables::new(&map, cfg.grid.values());
        Ok(Self {
            tracker: StateTracker::new(cfg.features, rho),
            w: vec![0.0; map.dim()],
            tables,
            map,
            pending: None,
            buffer: VecDeque::with_capacity(cfg.replay_capacity),
            rng: stream_rng(seed, streams::POLICY),
            steps: 0,
            cfg,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    fn td_update(&mut self, t: &Transition) {
        let q_sa: f64 = crate::linalg::dot(&self.w, &t.phi);
        let delta = t.loss + self.cfg.alpha * t.next.min_q(&self.w, &self.tables) - q_sa;
        if self.cfg.eta != 0.0 && delta != 0.0 {
            axpy(self.cfg.eta * delta, &t.phi, &mut self.w);
        }
    }

    /// Chooses the exponent for `(x, y)`, updates `filter` with it and learns
    /// from the transition that just completed.
    pub fn step(&mut self, filter: &mut FilterState, x: &[f64], y: f64) -> Result<f64> {
        let initial = self.cfg.grid.nearest_index(self.cfg.initial_p);
        let s = self.tracker.observe(filter.theta(), x, y, self.cfg.grid.values()[initial]);
        let proj = self.map.project_state(&s);

        if let Some((phi, loss)) = self.pending.take() {
            let t = Transition {
                phi,
                loss,
                next: proj.clone(),
            };
            self.td_update(&t);
            if self.cfg.replay_capacity > 0 {
                if self.buffer.len() == self.cfg.replay_capacity {
                    self.buffer.pop_front();
                }
                self.buffer.push_back(t);
            }
            for _ in 0..self.cfg.replays.min(self.buffer.len()) {
                let idx = self.rng.random_range(0..self.buffer.len());
                let t = self.buffer[idx].clone();
                self.td_update(&t);
            }
        }

        let a_idx = if self.steps == 0 {
            initial
        } else if self.rng.random::<f64>() < self.cfg.epsilon(self.steps) {
            self.rng.random_range(0..self.cfg.grid.len())
        } else {
            proj.greedy_index(&self.w, &self.tables)
        };
        let p = self.cfg.grid.values()[a_idx];
        let theta = filter.theta().to_vec();
        filter.lmp_update(x, y, p)?;
        let loss = self.tracker.record(&theta, x, y, filter.theta());
        self.pending = Some((proj.features(&self.tables, a_idx), loss));
        self.steps += 1;
        Ok(p)
    }
}

/// Per-trial state of a baseline.
#[derive(Debug, Clone)]
pub enum BaselineRunner {
    FixedP { filter: FilterState, p: f64 },
    RandomP { filter: FilterState, grid: ActionGrid, rng: ChaCha8Rng },
    KernelTd0 { filter: FilterState, agent: Box<KernelTd0> },
}

impl BaselineRunner {
    pub fn new(kind: &BaselineKind, order: usize, rho: f64, seed: u64) -> Result<Self> {
        kind.validate()?;
        let filter = FilterState::new(order, rho)?;
        Ok(match kind {
            BaselineKind::FixedP { p } => BaselineRunner::FixedP { filter, p: *p },
            BaselineKind::RandomP { grid } => BaselineRunner::RandomP {
                filter,
                grid: grid.clone(),
                rng: stream_rng(seed, streams::POLICY),
            },
            BaselineKind::KernelTd0(cfg) => BaselineRunner::KernelTd0 {
                filter,
                agent: Box::new(KernelTd0::new(cfg.clone(), rho, seed)?),
            },
        })
    }

    pub fn filter(&self) -> &FilterState {
        match self {
            BaselineRunner::FixedP { filter, .. }
            | BaselineRunner::RandomP { filter, .. }
            | BaselineRunner::KernelTd0 { filter, .. } => filter,
        }
    }

    /// Consumes one sample; returns the exponent used.
    pub fn step(&mut self, x: &[f64], y: f64) -> Result<f64> {
        match self {
            BaselineRunner::FixedP { filter, p } => {
                filter.lmp_update(x, y, *p)?;
                Ok(*p)
            }
            BaselineRunner::RandomP { filter, grid, rng } => {
                let p = grid.values()[rng.random_range(0..grid.len())];
                filter.lmp_update(x, y, p)?;
                Ok(p)
            }
            BaselineRunner::KernelTd0 { filter, agent } => agent.step(filter, x, y),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environments::{Environment, ExperimentConfig, NoiseConfig};
    use crate::linalg::distance;

    fn env(noise: NoiseConfig, order: usize) -> Environment {
        Environment::new(
            ExperimentConfig {
                filter_order: order,
                rho: 1e-3,
                total_steps: 20_000,
                change_step: 10_000,
                noise,
            },
            17,
        )
        .unwrap()
    }

    #[test]
    fn fixed_p_matches_direct_filter() {
        let mut e1 = env(NoiseConfig::paper_alpha_stable(), 6);
        let mut runner = BaselineRunner::new(&BaselineKind::FixedP { p: 1.25 }, 6, 1e-3, 0).unwrap();
        let mut direct = FilterState::new(6, 1e-3).unwrap();
        for _ in 0..500 {
            let s = e1.next_sample();
            assert_eq!(runner.step(&s.x, s.y).unwrap(), 1.25);
            direct.lmp_update(&s.x, s.y, 1.25).unwrap();
            assert_eq!(runner.filter(), &direct);
        }
    }

    #[test]
    fn lms_converges_on_noise_free_stream() {
        // LMS oracle: 20 taps, 5000 steps, no noise → below -40 dB
        let mut e = env(NoiseConfig::None, 20);
        let mut runner = BaselineRunner::new(&BaselineKind::FixedP { p: 2.0 }, 20, 1e-3, 0).unwrap();
        let mut checkpoints = Vec::new();
        for n in 0..5000 {
            let s = e.next_sample();
            runner.step(&s.x, s.y).unwrap();
            if n % 1000 == 999 {
                let rel = distance(runner.filter().theta(), e.theta_star())
                    / crate::linalg::norm(e.theta_star());
                checkpoints.push(20.0 * rel.log10());
            }
        }
        assert!(checkpoints.windows(2).all(|w| w[1] < w[0]), "{checkpoints:?}");
        assert!(*checkpoints.last().unwrap() < -40.0, "{checkpoints:?}");
    }

    #[test]
    fn random_p_is_uniform_over_grid() {
        let mut e = env(NoiseConfig::None, 2);
        let mut runner = BaselineRunner::new(
            &BaselineKind::RandomP {
                grid: ActionGrid::quarter_steps(),
            },
            2,
            1e-3,
            5,
        )
        .unwrap();
        let mut counts = [0usize; 5];
        let n = 10_000;
        for _ in 0..n {
            let s = e.next_sample();
            let p = runner.step(&s.x, s.y).unwrap();
            counts[((p - 1.0) / 0.25).round() as usize] += 1;
        }
        for c in counts {
            let frac = c as f64 / n as f64;
            assert!((frac - 0.2).abs() < 0.02, "{counts:?}");
        }
    }

    #[test]
    fn frozen_td0_keeps_zero_weights() {
        let cfg = Td0Config {
            eta: 0.0,
            epsilon_start: 0.0,
            epsilon_end: 0.0,
            rff_dim: 32,
            features: FeatureConfig {
                window: 10,
                ..FeatureConfig::default()
            },
            ..Td0Config::default()
        };
        let mut runner = BaselineRunner::new(&BaselineKind::KernelTd0(cfg), 3, 1e-3, 1).unwrap();
        let mut e = env(NoiseConfig::paper_sparse(), 3);
        let mut ps = Vec::new();
        for _ in 0..200 {
            let s = e.next_sample();
            ps.push(runner.step(&s.x, s.y).unwrap());
        }
        let BaselineRunner::KernelTd0 { agent, .. } = &runner else { unreachable!() };
        assert!(agent.weights().iter().all(|w| *w == 0.0));
        // initial exponent, then the all-tie greedy choice
        assert_eq!(ps[0], 2.0);
        assert!(ps[1..].iter().all(|p| *p == 1.0));
    }

    #[test]
    fn td0_learns_and_is_deterministic() {
        let cfg = Td0Config {
            rff_dim: 32,
            features: FeatureConfig {
                window: 10,
                ..FeatureConfig::default()
            },
            ..Td0Config::default()
        };
        let run = || {
            let mut runner = BaselineRunner::new(&BaselineKind::KernelTd0(cfg.clone()), 3, 1e-3, 2).unwrap();
            let mut e = env(NoiseConfig::paper_alpha_stable(), 3);
            let ps: Vec<f64> = (0..300)
                .map(|_| {
                    let s = e.next_sample();
                    runner.step(&s.x, s.y).unwrap()
                })
                .collect();
            (ps, runner.filter().clone())
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
    }

    #[test]
    fn epsilon_decays_to_floor() {
        let cfg = Td0Config::default();
        assert!((cfg.epsilon(0) - 0.1).abs() < 1e-15);
        assert!((cfg.epsilon(100_000) - 0.01).abs() < 1e-6);
    }

    #[test]
    fn invalid_fixed_p_rejected() {
        assert!(BaselineRunner::new(&BaselineKind::FixedP { p: 2.5 }, 3, 1e-3, 0).is_err());
    }
}
