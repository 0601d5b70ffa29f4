//! Policy evaluation and improvement in random-Fourier-feature space.
//!
//! A Q-function is a weight vector `w` with `Q(z) = wᵀφ(z)`. Given the
//! current pair `z_n = (s_n, a_n)`, averaging states `s_j^av` and the greedy
//! actions `μ(s_j^av)`, the fixed points of the sample-average Bellman map
//! lie on the hyperplane `{Q : ⟨Q, h_n⟩ = g_n(z_n)}` with
//!
//! ```text
//! h_n = φ(z_n) - (α / N_av) Σ_j φ(s_j^av, μ(s_j^av))
//! ```
//!
//! Policy evaluation takes one steepest-descent step on
//! `½ (⟨w, h_n⟩ - g_n)²`:  `w ← w - η (wᵀh_n - g_n) h_n`.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, spectral_norm_symmetric};
use crate::rff::{GridTables, RffMap, StateAction, StateProjection};
use crate::state_features::{DataWindow, FeatureConfig, StateVector};

/// Finite, strictly increasing set of admissible exponents in `[1, 2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ActionGrid(Vec<f64>);

impl ActionGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidConfig("action grid must be nonempty".into()));
        }
        if values.iter().any(|p| !(1.0..=2.0).contains(p)) {
            return Err(Error::InvalidConfig(format!("action grid {values:?} leaves [1, 2]")));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(format!(
                "action grid {values:?} is not strictly increasing"
            )));
        }
        Ok(Self(values))
    }

    /// `{1, 1.25, 1.5, 1.75, 2}`.
    pub fn quarter_steps() -> Self {
        Self(vec![1.0, 1.25, 1.5, 1.75, 2.0])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the grid value closest to `p` (lowest index on ties).
    pub fn nearest_index(&self, p: f64) -> usize {
        let mut best = 0;
        for (i, v) in self.0.iter().enumerate() {
            if (v - p).abs() < (self.0[best] - p).abs() {
                best = i;
            }
        }
        best
    }
}

impl TryFrom<Vec<f64>> for ActionGrid {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ActionGrid> for Vec<f64> {
    fn from(g: ActionGrid) -> Self {
        g.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QFunction {
    w: Vec<f64>,
}

impl QFunction {
    pub fn zeros(dim: usize) -> Self {
        Self { w: vec![0.0; dim] }
    }

    pub fn from_weights(w: Vec<f64>) -> Self {
        Self { w }
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn value(&self, map: &RffMap, z: &StateAction) -> f64 {
        q_value(self, map, z)
    }

    /// In-place steepest-descent step. Returns the residual `wᵀh - g`
    /// before the update.
    pub fn descend(&mut self, h: &[f64], g_target: f64, eta: f64) -> f64 {
        let residual = dot(&self.w, h) - g_target;
        if residual != 0.0 {
            axpy(-eta * residual, h, &mut self.w);
        }
        residual
    }
}

pub fn q_value(q: &QFunction, map: &RffMap, z: &StateAction) -> f64 {
    dot(&q.w, &map.features(z))
}

/// `argmin_a Q(s, a)` over the grid, ties toward the smallest exponent.
pub fn greedy_action(q: &QFunction, map: &RffMap, s: &StateVector, grid: &ActionGrid) -> f64 {
    let mut best = grid.values()[0];
    let mut best_q = f64::INFINITY;
    for &a in grid.values() {
        let v = q_value(q, map, &StateAction::new(*s, a));
        if v < best_q {
            best_q = v;
            best = a;
        }
    }
    best
}

/// `w - η (wᵀh - g) h`.
pub fn q_update(q: &QFunction, h: &[f64], g_target: f64, eta: f64) -> QFunction {
    let mut next = q.clone();
    next.descend(h, g_target, eta);
    next
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragingStates(Vec<StateVector>);

impl AveragingStates {
    pub fn new(states: Vec<StateVector>) -> Self {
        Self(states)
    }

    pub fn states(&self) -> &[StateVector] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Averaging states built by re-using past data:
///
/// ```text
/// s_j^av = [log10|y_{n+1-j} - θ_{n+1}ᵀx_{n+1-j}|, s2[n], log10‖x_{n+1-j}‖, s4[n]]
/// ```
///
/// for `j = 1..N_av`. `window` must already hold the current pair at age 0,
/// so `j` maps to age `j - 1`. Fewer states are returned while the window is
/// still filling.
pub fn generate_avg_states(
    window: &DataWindow,
    theta_next: &[f64],
    s_curr: &StateVector,
    n_av: usize,
    cfg: &FeatureConfig,
) -> AveragingStates {
    AveragingStates(
        window
            .iter()
            .take(n_av)
            .map(|(x, y)| StateVector {
                s1: cfg.clamped_log10((y - dot(theta_next, x)).abs()),
                s2: s_curr.s2,
                s3: cfg.clamped_log10(norm(x)),
                s4: s_curr.s4,
            })
            .collect(),
    )
}

/// `h = φ(z_n) - (α / N) Σ_j avg_features_j`.
pub fn combine_h<'a, I>(phi_z: &[f64], avg_features: I, alpha: f64) -> Vec<f64>
where
    I: ExactSizeIterator<Item = &'a [f64]>,
{
    let count = avg_features.len();
    let mut h = phi_z.to_vec();
    if alpha == 0.0 || count == 0 {
        return h;
    }
    let scale = -alpha / count as f64;
    for f in avg_features {
        axpy(scale, f, &mut h);
    }
    h
}

/// Normal vector of the hyperplane containing the fixed points of the
/// policy's Bellman map.
pub fn build_h(
    map: &RffMap,
    z_n: &StateAction,
    avg: &AveragingStates,
    mu_actions: &[f64],
    alpha: f64,
) -> Result<Vec<f64>> {
    if avg.is_empty() {
        return Err(Error::Contract("hyperplane vector needs at least one averaging state".into()));
    }
    if avg.len() != mu_actions.len() {
        return Err(Error::DimensionMismatch {
            expected: avg.len(),
            found: mu_actions.len(),
        });
    }
    let phi_z = map.features(z_n);
    let avg_features: Vec<Vec<f64>> = avg
        .states()
        .iter()
        .zip(mu_actions)
        .map(|(s, &a)| map.features(&StateAction::new(*s, a)))
        .collect();
    Ok(combine_h(&phi_z, avg_features.iter().map(Vec::as_slice), alpha))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReplayConfig {
    pub capacity: usize,
    /// Replay updates per time step.
    pub replays: usize,
    pub priority_exponent: f64,
    pub priority_offset: f64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            capacity: 500,
            replays: 5,
            priority_exponent: 0.6,
            priority_offset: 1e-6,
        }
    }
}

impl ReplayConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replays > 0 && self.capacity == 0 {
            return Err(Error::InvalidConfig("replay capacity must be positive".into()));
        }
        if !(self.priority_exponent >= 0.0) || !(self.priority_offset > 0.0) {
            return Err(Error::InvalidConfig("replay priority parameters must be nonnegative".into()));
        }
        Ok(())
    }
}

/// One stored transition: state, action, one-step loss and the averaging
/// states of that step. Projections of the states onto the feature map are
/// cached so replays only redo the greedy action search.
#[derive(Debug, Clone)]
pub struct ReplayRecord {
    pub s: StateVector,
    pub a: f64,
    pub g: f64,
    pub avg: AveragingStates,
    pub priority: f64,
    phi_z: Vec<f64>,
    avg_proj: Vec<StateProjection>,
}

impl ReplayRecord {
    /// Builds a record, caching `φ(s, a)` and the averaging-state projections.
    pub fn new(map: &RffMap, s: StateVector, a: f64, g: f64, avg: AveragingStates, priority: f64) -> Self {
        let phi_z = map.features(&StateAction::new(s, a));
        let avg_proj = avg.states().iter().map(|sj| map.project_state(sj)).collect();
        Self {
            s,
            a,
            g,
            avg,
            priority,
            phi_z,
            avg_proj,
        }
    }

    pub(crate) fn from_cache(
        s: StateVector,
        a: f64,
        g: f64,
        avg: AveragingStates,
        phi_z: Vec<f64>,
        avg_proj: Vec<StateProjection>,
    ) -> Self {
        Self {
            s,
            a,
            g,
            avg,
            priority: 0.0,
            phi_z,
            avg_proj,
        }
    }
}

/// Bounded FIFO of transitions with proportional prioritized sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    cfg: ReplayConfig,
    records: VecDeque<ReplayRecord>,
}

impl ReplayBuffer {
    pub fn new(cfg: ReplayConfig) -> Self {
        Self {
            records: VecDeque::with_capacity(cfg.capacity),
            cfg,
        }
    }

    pub fn config(&self) -> &ReplayConfig {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &ReplayRecord> {
        self.records.iter()
    }

    /// Largest stored priority, or 1 for an empty buffer.
    pub fn max_priority(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.priority)
            .fold(None, |acc: Option<f64>, p| Some(acc.map_or(p, |a| a.max(p))))
            .unwrap_or(1.0)
    }

    /// Appends a record with priority equal to the current maximum.
    pub fn push(&mut self, mut record: ReplayRecord) {
        if self.cfg.capacity == 0 {
            return;
        }
        record.priority = self.max_priority();
        if self.records.len() == self.cfg.capacity {
            self.records.pop_front();
        }
        self.records.push_back(record);
    }

    /// Appends a record keeping its own priority.
    pub fn push_with_priority(&mut self, record: ReplayRecord) {
        if self.cfg.capacity == 0 {
            return;
        }
        if self.records.len() == self.cfg.capacity {
            self.records.pop_front();
        }
        self.records.push_back(record);
    }

    fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let weight = |r: &ReplayRecord| r.priority.powf(self.cfg.priority_exponent) + self.cfg.priority_offset;
        let total: f64 = self.records.iter().map(weight).sum();
        let mut target = rng.random::<f64>() * total;
        for (i, r) in self.records.iter().enumerate() {
            target -= weight(r);
            if target < 0.0 {
                return i;
            }
        }
        self.records.len() - 1
    }
}

/// Hyperplane vector for a stored record, re-evaluating the greedy actions
/// at its averaging states under the current weights.
fn record_h(w: &[f64], record: &ReplayRecord, tables: &GridTables, alpha: f64) -> Vec<f64> {
    let avg_features: Vec<Vec<f64>> = record
        .avg_proj
        .iter()
        .map(|p| p.features(tables, p.greedy_index(w, tables)))
        .collect();
    combine_h(&record.phi_z, avg_features.iter().map(Vec::as_slice), alpha)
}

/// Runs the configured number of prioritized replay updates on `q`. Each
/// sampled record's priority becomes the magnitude of its residual.
pub fn replay_pass<R: Rng + ?Sized>(
    q: &mut QFunction,
    buffer: &mut ReplayBuffer,
    tables: &GridTables,
    alpha: f64,
    eta: f64,
    rng: &mut R,
) {
    if buffer.is_empty() {
        return;
    }
    for _ in 0..buffer.cfg.replays {
        let idx = buffer.sample_index(rng);
        let record = &buffer.records[idx];
        let h = record_h(&q.w, record, tables, alpha);
        let residual = q.descend(&h, record.g, eta);
        buffer.records[idx].priority = residual.abs();
    }
}

/// The sample-average Bellman map `T_μ` realized in feature coordinates:
///
/// ```text
/// T_μ w = w_g + α Σ_j (wᵀφ_j^av) ψ_j,   ψ_j = φ(z_n) / (N_av ‖φ(z_n)‖²)
/// ```
///
/// `ψ_j` is the minimum-norm vector with `⟨ψ_j, φ(z_n)⟩ = 1/N_av`, and
/// `w_g = g φ(z_n) / ‖φ(z_n)‖²` represents a loss taking value `g` at `z_n`.
#[derive(Debug, Clone)]
pub struct RealizedBellmanMap {
    alpha: f64,
    w_g: Vec<f64>,
    psi: Vec<Vec<f64>>,
    avg_features: Vec<Vec<f64>>,
}

impl RealizedBellmanMap {
    pub fn new(
        map: &RffMap,
        z_n: &StateAction,
        avg: &AveragingStates,
        mu_actions: &[f64],
        alpha: f64,
        g: f64,
    ) -> Result<Self> {
        if avg.is_empty() {
            return Err(Error::Contract("Bellman map needs at least one averaging state".into()));
        }
        if avg.len() != mu_actions.len() {
            return Err(Error::DimensionMismatch {
                expected: avg.len(),
                found: mu_actions.len(),
            });
        }
        let phi_z = map.features(z_n);
        let sq = dot(&phi_z, &phi_z);
        if sq == 0.0 {
            return Err(Error::Contract("feature vector of z_n vanishes".into()));
        }
        let n_av = avg.len() as f64;
        let psi_one: Vec<f64> = phi_z.iter().map(|v| v / (n_av * sq)).collect();
        let w_g = phi_z.iter().map(|v| g * v / sq).collect();
        let avg_features = avg
            .states()
            .iter()
            .zip(mu_actions)
            .map(|(s, &a)| map.features(&StateAction::new(*s, a)))
            .collect();
        Ok(Self {
            alpha,
            w_g,
            psi: vec![psi_one; avg.len()],
            avg_features,
        })
    }

    pub fn apply(&self, w: &[f64]) -> Vec<f64> {
        let mut out = self.w_g.clone();
        for (phi, psi) in self.avg_features.iter().zip(&self.psi) {
            axpy(self.alpha * dot(w, phi), psi, &mut out);
        }
        out
    }

    fn gram(vectors: &[Vec<f64>]) -> Vec<f64> {
        let n = vectors.len();
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = dot(&vectors[i], &vectors[j]);
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        k
    }

    /// Spectral norm of `K_Ψ = ΨᵀΨ`.
    pub fn psi_gram_norm(&self) -> f64 {
        spectral_norm_symmetric(&Self::gram(&self.psi), self.psi.len())
    }

    /// Spectral norm of `K_μ^av = Φᵀ Φ` over the averaging features.
    pub fn avg_gram_norm(&self) -> f64 {
        spectral_norm_symmetric(&Self::gram(&self.avg_features), self.avg_features.len())
    }

    /// Largest discount for which the map is nonexpansive:
    /// `‖K_Ψ‖^{-1/2} ‖K_μ^av‖^{-1/2}`.
    pub fn alpha_bound(&self) -> f64 {
        (self.psi_gram_norm() * self.avg_gram_norm()).sqrt().recip()
    }

    /// Exact Lipschitz constant `α ‖Ψ Φᵀ‖` of the linear part. Every `ψ_j`
    /// is the same vector, so this equals `α ‖ψ‖ ‖Σ_j φ_j^av‖`.
    pub fn lipschitz_constant(&self) -> f64 {
        let mut sum = vec![0.0; self.w_g.len()];
        for f in &self.avg_features {
            axpy(1.0, f, &mut sum);
        }
        self.alpha * norm(&self.psi[0]) * norm(&sum)
    }

    /// Direction `Σ_j φ_j^av` along which the linear part stretches most.
    pub fn worst_direction(&self) -> Vec<f64> {
        let mut sum = vec![0.0; self.w_g.len()];
        for f in &self.avg_features {
            axpy(1.0, f, &mut sum);
        }
        sum
    }

    /// `‖T w - T w'‖ / ‖w - w'‖`.
    pub fn ratio(&self, w: &[f64], w2: &[f64]) -> f64 {
        let (t1, t2) = (self.apply(w), self.apply(w2));
        let num: f64 = t1.iter().zip(&t2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let den: f64 = w.iter().zip(w2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        num / den
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonexpansiveReport {
    pub alpha_bound: f64,
    pub within_bound: bool,
    pub worst_ratio: f64,
    pub passed: bool,
}

/// Checks the nonexpansivity condition for the realized Bellman map: the
/// discount bound from the Gram-matrix norms, then `trials` random weight
/// pairs.
pub fn check_nonexpansive<R: Rng + ?Sized>(
    map: &RffMap,
    avg: &AveragingStates,
    mu_actions: &[f64],
    alpha: f64,
    z_n: &StateAction,
    trials: usize,
    rng: &mut R,
) -> Result<NonexpansiveReport> {
    let t = RealizedBellmanMap::new(map, z_n, avg, mu_actions, alpha, 0.0)?;
    let alpha_bound = t.alpha_bound();
    let mut worst: f64 = 0.0;
    let d = map.dim();
    for _ in 0..trials {
        let w: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let w2: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        worst = worst.max(t.ratio(&w, &w2));
    }
    let within_bound = alpha <= alpha_bound;
    Ok(NonexpansiveReport {
        alpha_bound,
        within_bound,
        worst_ratio: worst,
        passed: within_bound && worst <= 1.0 + 1e-9,
    })
}
