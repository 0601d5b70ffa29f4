//! Multi-trial experiment runner: drives every configured method over the
//! same seeded data streams, averages learning curves and writes CSV files.
//!
//! # Config file (TOML)
//!
//! ```toml
//! name = "alpha_stable"     # CSV is written to <out>/<name>.csv
//! trials = 100
//! seed = 1
//! per_trial = true          # include trial_k columns
//!
//! [experiment]
//! filter_order = 100
//! rho = 0.001
//! total_steps = 40000
//! change_step = 20000
//! noise = { kind = "alpha_stable", alpha = 1.0, beta = 0.5, sigma = 1.0 }
//!
//! [[methods]]
//! kind = "api"              # any ApiConfig field may follow
//! n_av = 10
//! alpha = 0.75
//!
//! [[methods]]
//! kind = "fixed_p"
//! p = 1.0
//! ```
//!
//! # CSV schema
//!
//! `step,method,mean_dev_db[,trial_0,…]`, one row per (method, step), methods
//! in config order. Deviations are `20 log10(‖θ - θ*‖ / ‖θ*‖)` measured after
//! the update at that step.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::{ApiAgent, ApiConfig, Bandwidth};
use crate::baselines::{BaselineKind, BaselineRunner, Td0Config};
use crate::environments::{Environment, ExperimentConfig};
use crate::error::{Error, Result};
use crate::kbrl::ActionGrid;
use crate::linalg::{distance, norm};
use crate::rff::RffMap;
use crate::rng::trial_seed;

pub const DEVIATION_FLOOR: f64 = 1e-12;

/// `20 log10(max(‖θ - θ*‖, 1e-12) / ‖θ*‖)`.
pub fn normalized_deviation(theta: &[f64], theta_star: &[f64]) -> Result<f64> {
    if theta.len() != theta_star.len() {
        return Err(Error::DimensionMismatch {
            expected: theta_star.len(),
            found: theta.len(),
        });
    }
    let reference = norm(theta_star);
    if reference == 0.0 {
        return Err(Error::Contract("reference system must be nonzero".into()));
    }
    Ok(20.0 * (distance(theta, theta_star).max(DEVIATION_FLOOR) / reference).log10())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MethodKind {
    /// The approximate-policy-iteration agent.
    Api(ApiConfig),
    FixedP {
        p: f64,
    },
    RandomP {
        #[serde(default = "ActionGrid::quarter_steps")]
        grid: ActionGrid,
    },
    KernelTd0(Td0Config),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(flatten)]
    pub kind: MethodKind,
}

impl MethodSpec {
    pub fn new(kind: MethodKind) -> Self {
        Self { name: None, kind }
    }

    pub fn named(name: impl Into<String>, kind: MethodKind) -> Self {
        Self {
            name: Some(name.into()),
            kind,
        }
    }

    pub fn label(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        match &self.kind {
            MethodKind::Api(c) => format!("api_nav{}_a{}", c.n_av, c.alpha),
            MethodKind::FixedP { p } => format!("lmp_p{p}"),
            MethodKind::RandomP { .. } => "random_p".into(),
            MethodKind::KernelTd0(c) => format!("ktd0_a{}", c.alpha),
        }
    }

    fn baseline(&self) -> Option<BaselineKind> {
        match &self.kind {
            MethodKind::Api(_) => None,
            MethodKind::FixedP { p } => Some(BaselineKind::FixedP { p: *p }),
            MethodKind::RandomP { grid } => Some(BaselineKind::RandomP { grid: grid.clone() }),
            MethodKind::KernelTd0(c) => Some(BaselineKind::KernelTd0(c.clone())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            MethodKind::Api(c) => c.validate(),
            _ => self.baseline().expect("baseline").validate(),
        }
    }

    /// The default comparison set: the agent with `N_av = 10, α = 0.75`,
    /// fixed `p` on the quarter-step grid, random `p`, and kernel TD(0).
    pub fn paper_set() -> Vec<MethodSpec> {
        let mut m = vec![MethodSpec::new(MethodKind::Api(ApiConfig::default()))];
        for &p in ActionGrid::quarter_steps().values() {
            m.push(MethodSpec::new(MethodKind::FixedP { p }));
        }
        m.push(MethodSpec::new(MethodKind::RandomP {
            grid: ActionGrid::quarter_steps(),
        }));
        m.push(MethodSpec::new(MethodKind::KernelTd0(Td0Config::default())));
        m
    }
}

fn default_trials() -> usize {
    1
}

fn default_per_trial() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub name: String,
    pub experiment: ExperimentConfig,
    pub methods: Vec<MethodSpec>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_per_trial")]
    pub per_trial: bool,
}

impl RunSpec {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|source| Error::Toml {
            path: origin.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        self.experiment.validate()?;
        if self.trials == 0 {
            return Err(Error::InvalidConfig("at least one trial is required".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("at least one method is required".into()));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::InvalidConfig(format!("invalid scenario name {:?}", self.name)));
        }
        let mut labels: Vec<String> = self.methods.iter().map(MethodSpec::label).collect();
        labels.sort();
        if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidConfig(format!("duplicate method label {:?}", w[0])));
        }
        for m in &self.methods {
            m.validate()?;
        }
        Ok(())
    }

    /// Keeps only methods whose label is in `labels`.
    pub fn retain_methods(&mut self, labels: &[String]) -> Result<()> {
        for l in labels {
            if !self.methods.iter().any(|m| &m.label() == l) {
                return Err(Error::InvalidConfig(format!("unknown method {l:?}")));
            }
        }
        self.methods.retain(|m| labels.contains(&m.label()));
        Ok(())
    }
}

/// Deviation curve of one method, averaged over trials.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningCurve {
    pub method: String,
    pub mean: Vec<f64>,
    pub trials: Vec<Vec<f64>>,
    /// Fraction of steps each grid exponent was chosen, when applicable.
    pub action_histogram: Vec<(f64, f64)>,
}

impl LearningCurve {
    /// Mean of the averaged curve over `range`.
    pub fn window_mean(&self, range: std::ops::Range<usize>) -> f64 {
        let n = range.len() as f64;
        self.mean[range].iter().sum::<f64>() / n
    }
}

/// Result of a single (method, trial) run.
#[derive(Debug, Clone)]
pub struct TrialResult {
    pub deviation_db: Vec<f64>,
    pub actions: Vec<f64>,
    pub map: Option<RffMap>,
}

enum Runner {
    Api(Box<ApiAgent>),
    Baseline(BaselineRunner),
}

impl Runner {
    fn step(&mut self, x: &[f64], y: f64) -> Result<f64> {
        match self {
            Runner::Api(a) => a.step(x, y).map(|o| o.p),
            Runner::Baseline(b) => b.step(x, y),
        }
    }

    fn theta(&self) -> &[f64] {
        match self {
            Runner::Api(a) => a.theta(),
            Runner::Baseline(b) => b.filter().theta(),
        }
    }
}

/// Runs one method on trial `trial` of `spec`.
pub fn run_trial(spec: &RunSpec, method: &MethodSpec, trial: usize) -> Result<TrialResult> {
    let exp = &spec.experiment;
    let seed = trial_seed(spec.seed, trial as u64);
    let mut env = Environment::new(*exp, seed)?;
    let mut runner = match &method.kind {
        MethodKind::Api(cfg) => Runner::Api(Box::new(ApiAgent::new(cfg.clone(), exp.filter_order, exp.rho, seed)?)),
        _ => Runner::Baseline(BaselineRunner::new(
            &method.baseline().expect("baseline"),
            exp.filter_order,
            exp.rho,
            seed,
        )?),
    };
    let mut deviation_db = Vec::with_capacity(exp.total_steps);
    let mut actions = Vec::with_capacity(exp.total_steps);
    for _ in 0..exp.total_steps {
        let sample = env.next_sample();
        actions.push(runner.step(&sample.x, sample.y)?);
        deviation_db.push(normalized_deviation(runner.theta(), env.theta_star())?);
    }
    let map = match &runner {
        Runner::Api(a) => a.map().cloned(),
        _ => None,
    };
    Ok(TrialResult {
        deviation_db,
        actions,
        map,
    })
}

fn run_trials(spec: &RunSpec, method: &MethodSpec) -> Result<Vec<TrialResult>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..spec.trials)
            .into_par_iter()
            .map(|t| run_trial(spec, method, t))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..spec.trials).map(|t| run_trial(spec, method, t)).collect()
    }
}

fn histogram(results: &[TrialResult]) -> Vec<(f64, f64)> {
    let mut counts: Vec<(f64, usize)> = Vec::new();
    let mut total = 0usize;
    for r in results {
        for &a in &r.actions {
            total += 1;
            match counts.iter_mut().find(|(p, _)| *p == a) {
                Some(c) => c.1 += 1,
                None => counts.push((a, 1)),
            }
        }
    }
    counts.sort_by(|a, b| a.0.total_cmp(&b.0));
    counts
        .into_iter()
        .map(|(p, c)| (p, c as f64 / total.max(1) as f64))
        .collect()
}

/// Runs all trials of one method and averages them.
pub fn run_method(spec: &RunSpec, method: &MethodSpec) -> Result<(LearningCurve, Vec<Option<RffMap>>)> {
    let results = run_trials(spec, method)?;
    let steps = spec.experiment.total_steps;
    let mut mean = vec![0.0; steps];
    for r in &results {
        for (m, d) in mean.iter_mut().zip(&r.deviation_db) {
            *m += d;
        }
    }
    let n = results.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let action_histogram = histogram(&results);
    let (trials, maps) = results.into_iter().map(|r| (r.deviation_db, r.map)).unzip();
    Ok((
        LearningCurve {
            method: method.label(),
            mean,
            trials,
            action_histogram,
        },
        maps,
    ))
}

/// Runs every method in memory.
pub fn simulate(spec: &RunSpec) -> Result<Vec<LearningCurve>> {
    spec.validate()?;
    spec.methods
        .iter()
        .map(|m| run_method(spec, m).map(|(c, _)| c))
        .collect()
}

/// Summary of a run written to disk.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub csv: PathBuf,
    pub rff_files: Vec<PathBuf>,
    pub curves: Vec<LearningCurve>,
}

#[derive(Serialize)]
struct MapRecord<'a> {
    method: &'a str,
    trial: usize,
    map: &'a RffMap,
}

/// Runs the spec and writes `<out>/<name>.csv` plus one
/// `<out>/<name>_rff_<method>.json` per policy-iteration method. Curves in
/// the returned summary keep only the trial means.
pub fn run(spec: &RunSpec, out: &Path) -> Result<RunOutput> {
    spec.validate()?;
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| Error::Io { path, source }
    };
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let csv_path = out.join(format!("{}.csv", spec.name));
    let file = std::fs::File::create(&csv_path).map_err(io_err(&csv_path))?;
    let mut writer = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let csv_err = |source| Error::Csv {
        path: csv_path.clone(),
        source,
    };

    let mut header = vec!["step".to_string(), "method".to_string(), "mean_dev_db".to_string()];
    if spec.per_trial {
        header.extend((0..spec.trials).map(|k| format!("trial_{k}")));
    }
    writer.write_record(&header).map_err(csv_err)?;

    let mut curves = Vec::new();
    let mut rff_files = Vec::new();
    for method in &spec.methods {
        let (curve, maps) = run_method(spec, method)?;
        for step in 0..curve.mean.len() {
            let mut row = vec![step.to_string(), curve.method.clone(), curve.mean[step].to_string()];
            if spec.per_trial {
                row.extend(curve.trials.iter().map(|t| t[step].to_string()));
            }
            writer.write_record(&row).map_err(csv_err)?;
        }
        if matches!(method.kind, MethodKind::Api(_)) {
            let path = out.join(format!("{}_rff_{}.json", spec.name, curve.method));
            let records: Vec<MapRecord> = maps
                .iter()
                .enumerate()
                .filter_map(|(trial, m)| {
                    m.as_ref().map(|map| MapRecord {
                        method: &curve.method,
                        trial,
                        map,
                    })
                })
                .collect();
            let file = std::fs::File::create(&path).map_err(io_err(&path))?;
            let mut w = std::io::BufWriter::new(file);
            serde_json::to_writer(&mut w, &records).map_err(|source| Error::Json {
                path: path.clone(),
                source,
            })?;
            w.flush().map_err(io_err(&path))?;
            rff_files.push(path);
        }
        curves.push(LearningCurve {
            trials: Vec::new(),
            ..curve
        });
    }
    writer.flush().map_err(io_err(&csv_path))?;
    Ok(RunOutput {
        csv: csv_path,
        rff_files,
        curves,
    })
}

/// Whether an API method uses the median bandwidth rule; such maps only
/// exist after warm-up.
pub fn uses_median_bandwidth(method: &MethodSpec) -> bool {
    matches!(
        &method.kind,
        MethodKind::Api(ApiConfig {
            bandwidth: Bandwidth::Median { .. },
            ..
        })
    )
}
