//! Online approximate policy iteration for choosing the LMP exponent.
//!
//! Per time step `n`:
//!
//! 1. build the state `s_n` from the incoming pair;
//! 2. policy improvement: `a_n = argmin_a Q_n(s_n, a)`;
//! 3. LMP update of the estimate with `p = a_n`;
//! 4. averaging states from the most recent `N_av` pairs under `θ[n+1]`;
//! 5. prioritized experience replay on `Q_n`;
//! 6. policy evaluation: one steepest-descent step toward the hyperplane of
//!    the current transition, then store the transition for replay.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kbrl::{
    combine_h, generate_avg_states, replay_pass, ActionGrid, AveragingStates, QFunction, ReplayBuffer,
    ReplayConfig, ReplayRecord,
};
use crate::lmp_filter::FilterState;
use crate::rff::{median_pairwise_distance, sample_unit_parts, GridTables, RffMap, StateAction, INPUT_DIM};
use crate::rng::{stream_rng, streams};
use crate::state_features::{FeatureConfig, StateTracker, StateVector};

/// How the Gaussian-kernel bandwidth is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Bandwidth {
    Fixed { sigma: f64 },
    /// Median pairwise distance of the first `samples` state-action pairs.
    /// The policy stays at the initial exponent until then.
    Median { samples: usize },
}

impl Default for Bandwidth {
    fn default() -> Self {
        Bandwidth::Fixed { sigma: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ApiConfig {
    /// Number of averaging states `N_av`.
    pub n_av: usize,
    /// Discount factor.
    pub alpha: f64,
    /// Step size of the Q-function update.
    pub eta: f64,
    /// Number of random Fourier features `D`.
    pub rff_dim: usize,
    pub bandwidth: Bandwidth,
    pub replay: ReplayConfig,
    /// Exponent used before any learning (`μ_0`).
    pub initial_p: f64,
    pub features: FeatureConfig,
    pub grid: ActionGrid,
}

impl Default for ApiConfig {
    fn default() -> Self {
        Self {
            n_av: 10,
            alpha: 0.75,
            eta: 0.5,
            rff_dim: 300,
            bandwidth: Bandwidth::default(),
            replay: ReplayConfig::default(),
            initial_p: 2.0,
            features: FeatureConfig::default(),
            grid: ActionGrid::quarter_steps(),
        }
    }
}

impl ApiConfig {
    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        self.replay.validate()?;
        if self.n_av == 0 || self.n_av > self.features.window {
            return Err(Error::InvalidConfig(format!(
                "N_av = {} must lie in 1..={} (the feature window)",
                self.n_av, self.features.window
            )));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!("discount {} outside [0, 1)", self.alpha)));
        }
        if !(self.eta > 0.0) {
            return Err(Error::InvalidConfig(format!("step size {} must be positive", self.eta)));
        }
        if self.rff_dim == 0 {
            return Err(Error::InvalidConfig("RFF dimension must be positive".into()));
        }
        match self.bandwidth {
            Bandwidth::Fixed { sigma } if !(sigma > 0.0) => {
                return Err(Error::InvalidConfig(format!("bandwidth {sigma} must be positive")));
            }
            Bandwidth::Median { samples } if samples < 2 => {
                return Err(Error::InvalidConfig("median bandwidth needs at least two samples".into()));
            }
            _ => {}
        }
        if !(1.0..=2.0).contains(&self.initial_p) {
            return Err(Error::PNormOutOfRange(self.initial_p));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub p: f64,
    pub state: StateVector,
    /// One-step loss `g_n(z_n)`.
    pub loss: f64,
    /// Residual `Q_nᵀh_n - g_n` before the policy-evaluation step, if one ran.
    pub residual: Option<f64>,
}

#[derive(Debug, Clone)]
struct Learner {
    map: RffMap,
    tables: GridTables,
    q: QFunction,
}

#[derive(Debug, Clone)]
pub struct ApiAgent {
    cfg: ApiConfig,
    filter: FilterState,
    tracker: StateTracker,
    learner: Option<Learner>,
    pending_map: Option<(Vec<[f64; INPUT_DIM]>, Vec<f64>)>,
    warmup: Vec<[f64; INPUT_DIM]>,
    buffer: ReplayBuffer,
    replay_rng: ChaCha8Rng,
    initial_index: usize,
    steps: usize,
}

impl ApiAgent {
    /// Agent for a filter of order `order` with learning rate `rho`; `seed`
    /// drives the feature map and replay sampling.
    pub fn new(cfg: ApiConfig, order: usize, rho: f64, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let filter = FilterState::new(order, rho)?;
        let mut map_rng = stream_rng(seed, streams::FEATURE_MAP);
        let (unit, phases) = sample_unit_parts(cfg.rff_dim, &mut map_rng);
        let (learner, pending_map) = match cfg.bandwidth {
            Bandwidth::Fixed { sigma } => (Some(Self::learner(&cfg, unit, phases, sigma)?), None),
            Bandwidth::Median { .. } => (None, Some((unit, phases))),
        };
        let initial_index = cfg.grid.nearest_index(cfg.initial_p);
        Ok(Self {
            tracker: StateTracker::new(cfg.features, rho),
            buffer: ReplayBuffer::new(cfg.replay),
            replay_rng: stream_rng(seed, streams::REPLAY),
            filter,
            learner,
            pending_map,
            warmup: Vec::new(),
            initial_index,
            steps: 0,
            cfg,
        })
    }

    fn learner(cfg: &ApiConfig, unit: Vec<[f64; INPUT_DIM]>, phases: Vec<f64>, sigma: f64) -> Result<Learner> {
        let map = RffMap::from_unit_parts(unit, phases, sigma)?;
        let tables = GridTables::new(&map, cfg.grid.values());
        let q = QFunction::zeros(map.dim());
        Ok(Learner { map, tables, q })
    }

    pub fn config(&self) -> &ApiConfig {
        &self.cfg
    }

    pub fn filter(&self) -> &FilterState {
        &self.filter
    }

    pub fn theta(&self) -> &[f64] {
        self.filter.theta()
    }

    /// Feature map, once the bandwidth is known.
    pub fn map(&self) -> Option<&RffMap> {
        self.learner.as_ref().map(|l| &l.map)
    }

    pub fn q(&self) -> Option<&QFunction> {
        self.learner.as_ref().map(|l| &l.q)
    }

    pub fn replay_buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn step(&mut self, x: &[f64], y: f64) -> Result<StepOutcome> {
        let grid = self.cfg.grid.values();
        let s = self.tracker.observe(self.filter.theta(), x, y, grid[self.initial_index]);

        // Policy improvement.
        let projection = self.learner.as_ref().map(|l| l.map.project_state(&s));
        let a_idx = match (&self.learner, &projection) {
            (Some(l), Some(proj)) if self.steps > 0 => proj.greedy_index(l.q.weights(), &l.tables),
            _ => self.initial_index,
        };
        let p = grid[a_idx];

        let theta = self.filter.theta().to_vec();
        self.filter.lmp_update(x, y, p)?;
        let loss = self.tracker.record(&theta, x, y, self.filter.theta());
        self.steps += 1;

        let avg = generate_avg_states(
            self.tracker.window(),
            self.filter.theta(),
            &s,
            self.cfg.n_av,
            &self.cfg.features,
        );

        let Some(learner) = self.learner.as_mut() else {
            self.collect_warmup(StateAction::new(s, p))?;
            return Ok(StepOutcome {
                p,
                state: s,
                loss,
                residual: None,
            });
        };
        let proj = projection.expect("projection exists with a learner");

        replay_pass(
            &mut learner.q,
            &mut self.buffer,
            &learner.tables,
            self.cfg.alpha,
            self.cfg.eta,
            &mut self.replay_rng,
        );

        // Policy evaluation on the current transition.
        let phi_z = proj.features(&learner.tables, a_idx);
        let avg_proj: Vec<_> = avg.states().iter().map(|sj| learner.map.project_state(sj)).collect();
        let avg_features: Vec<Vec<f64>> = avg_proj
            .iter()
            .map(|pj| pj.features(&learner.tables, pj.greedy_index(learner.q.weights(), &learner.tables)))
            .collect();
        let h = combine_h(&phi_z, avg_features.iter().map(Vec::as_slice), self.cfg.alpha);
        let residual = learner.q.descend(&h, loss, self.cfg.eta);

        self.buffer
            .push(ReplayRecord::from_cache(s, p, loss, avg, phi_z, avg_proj));

        Ok(StepOutcome {
            p,
            state: s,
            loss,
            residual: Some(residual),
        })
    }

    fn collect_warmup(&mut self, z: StateAction) -> Result<()> {
        let Bandwidth::Median { samples } = self.cfg.bandwidth else {
            return Ok(());
        };
        self.warmup.push(z.to_array());
        if self.warmup.len() >= samples {
            let sigma = median_pairwise_distance(&self.warmup)
                .filter(|d| *d > 0.0)
                .unwrap_or(1.0);
            let (unit, phases) = self.pending_map.take().expect("pending map before warmup ends");
            self.learner = Some(Self::learner(&self.cfg, unit, phases, sigma)?);
            self.warmup = Vec::new();
        }
        Ok(())
    }

    /// Averaging states the agent would build for the latest step; exposed for
    /// diagnostics.
    pub fn averaging_states(&self, s: &StateVector) -> AveragingStates {
        generate_avg_states(
            self.tracker.window(),
            self.filter.theta(),
            s,
            self.cfg.n_av,
            &self.cfg.features,
        )
    }
}
