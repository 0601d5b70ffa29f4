//! Acceptance criteria P1-P10. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.
//!
//! ```text
//! cargo test --release -p lmp-kbrl --test acceptance            # desk scale
//! cargo test --release -p lmp-kbrl --test acceptance -- --full  # P10 at full paper scale
//! ```

use std::time::Instant;

use lmp_kbrl::agent::{ApiAgent, ApiConfig, Bandwidth};
use lmp_kbrl::environments::sample_alpha_stable;
use lmp_kbrl::harness::{self, LearningCurve, MethodKind, MethodSpec, RunSpec};
use lmp_kbrl::kbrl::{build_h, generate_avg_states, q_update, AveragingStates, RealizedBellmanMap};
use lmp_kbrl::linalg::{distance, dot, norm};
use lmp_kbrl::rff::{gaussian_kernel, RffMap, StateAction};
use lmp_kbrl::state_features::{initial_s4, DataWindow};
use lmp_kbrl::{ActionGrid, Environment, ExperimentConfig, FeatureConfig, FilterState, NoiseConfig, QFunction, StateVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Bandwidth chosen by a sweep on seeds disjoint from the ones below.
const DESK_SIGMA: f64 = 0.4;
const DESK_SEED: u64 = 2024;

struct Verdict {
    pass: bool,
    summary: String,
    details: Vec<String>,
}

impl Verdict {
    fn new(pass: bool, summary: impl Into<String>) -> Self {
        Self {
            pass,
            summary: summary.into(),
            details: Vec::new(),
        }
    }

    fn with(mut self, line: impl Into<String>) -> Self {
        self.details.push(line.into());
        self
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gauss(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    distance(a, b) / norm(b).max(f64::MIN_POSITIVE)
}

fn p1_degenerate_cases() -> Verdict {
    let mut r = rng(1);
    let mut worst_lms: f64 = 0.0;
    let mut worst_sign: f64 = 0.0;
    for _ in 0..10_000 {
        let l = r.random_range(1..=32);
        let rho = 10f64.powf(r.random_range(-4.0..-1.0));
        let theta = gauss(&mut r, l);
        let x = gauss(&mut r, l);
        let y: f64 = 3.0 * gauss(&mut r, 1)[0];
        let f = FilterState::with_theta(theta.clone(), rho).unwrap();
        let e = y - dot(&theta, &x);

        let lms: Vec<f64> = theta.iter().zip(&x).map(|(t, xi)| t + 2.0 * rho * e * xi).collect();
        let sign: Vec<f64> = theta.iter().zip(&x).map(|(t, xi)| t + rho * e.signum() * xi).collect();
        worst_lms = worst_lms.max(rel_err(f.lmp_step(&x, y, 2.0).unwrap().theta(), &lms));
        worst_sign = worst_sign.max(rel_err(f.lmp_step(&x, y, 1.0).unwrap().theta(), &sign));
    }
    Verdict::new(
        worst_lms <= 1e-12 && worst_sign <= 1e-12,
        format!("p=2 vs LMS worst rel err {worst_lms:.1e}, p=1 vs sign-LMS {worst_sign:.1e} (10^4 cases, tol 1e-12)"),
    )
}

fn p2_initial_displacement() -> Verdict {
    let mut r = rng(2);
    let cfg = FeatureConfig::default();
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    while cases < 1000 {
        let l = r.random_range(1..=50);
        let rho = 10f64.powf(r.random_range(-4.0..-1.0));
        let theta0 = gauss(&mut r, l);
        let x = gauss(&mut r, l);
        let y: f64 = 2.0 * gauss(&mut r, 1)[0];
        let p0 = r.random_range(1.0..=2.0);
        let e = y - dot(&theta0, &x);
        if e == 0.0 {
            continue;
        }
        cases += 1;
        let theta1 = FilterState::with_theta(theta0.clone(), rho).unwrap().lmp_step(&x, y, p0).unwrap();
        let direct = (distance(theta1.theta(), &theta0) / rho).log10();
        let s4 = initial_s4(p0, cfg.clamped_log10(e.abs()), cfg.clamped_log10(norm(&x)));
        worst = worst.max((s4 - direct).abs());
    }
    Verdict::new(worst <= 1e-9, format!("worst |s4(0) - log10(|θ1-θ0|/ρ)| = {worst:.1e} (10^3 cases, tol 1e-9)"))
}

fn random_state(r: &mut ChaCha8Rng) -> StateVector {
    StateVector::new(
        r.random_range(-2.0..2.0),
        r.random_range(-2.0..0.5),
        r.random_range(0.0..1.5),
        r.random_range(-1.0..2.0),
    )
}

fn p3_nonexpansive() -> Verdict {
    let mut r = rng(3);
    let map = RffMap::sample(300, 1.0, &mut r).unwrap();
    let grid = ActionGrid::quarter_steps();
    let z_n = StateAction::new(random_state(&mut r), 1.5);
    let avg = AveragingStates::new((0..10).map(|_| random_state(&mut r)).collect());
    let q = QFunction::from_weights(gauss(&mut r, 300));
    let mu: Vec<f64> = avg
        .states()
        .iter()
        .map(|s| lmp_kbrl::kbrl::greedy_action(&q, &map, s, &grid))
        .collect();

    let bound = RealizedBellmanMap::new(&map, &z_n, &avg, &mu, 0.5, -0.7).unwrap().alpha_bound();
    let t = RealizedBellmanMap::new(&map, &z_n, &avg, &mu, bound, -0.7).unwrap();
    let mut worst: f64 = 0.0;
    let mut worst_affine: f64 = 0.0;
    for _ in 0..1000 {
        let w = gauss(&mut r, 300);
        let w2 = gauss(&mut r, 300);
        worst = worst.max(t.ratio(&w, &w2));

        let lambda = r.random_range(-2.0..2.0);
        let mix: Vec<f64> = w.iter().zip(&w2).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
        let lhs = t.apply(&mix);
        let (ta, tb) = (t.apply(&w), t.apply(&w2));
        let rhs: Vec<f64> = ta.iter().zip(&tb).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
        worst_affine = worst_affine.max(distance(&lhs, &rhs));
    }

    // Ten times past the bound, along the most stretched direction.
    let loose = RealizedBellmanMap::new(&map, &z_n, &avg, &mu, 10.0 * bound, -0.7).unwrap();
    let zero = vec![0.0; 300];
    let stretched = loose.ratio(&loose.worst_direction(), &zero);

    Verdict::new(
        worst <= 1.0 + 1e-9 && worst_affine <= 1e-10,
        format!("α at bound {bound:.4}: worst ratio {worst:.6} over 1000 pairs, affinity err {worst_affine:.1e}"),
    )
    .with(format!("α = 10x bound, aligned pair: ratio {stretched:.3} (expansion possible past the bound)"))
}

fn p4_hyperplane() -> Verdict {
    let order = 8;
    let rho = 1e-3;
    let cfg = ApiConfig {
        rff_dim: 200,
        features: FeatureConfig {
            window: 50,
            ..FeatureConfig::default()
        },
        ..ApiConfig::default()
    };
    let exp = ExperimentConfig {
        filter_order: order,
        rho,
        total_steps: 400,
        change_step: 200,
        noise: NoiseConfig::paper_sparse(),
    };
    let mut env = Environment::new(exp, 4).unwrap();
    let mut agent = ApiAgent::new(cfg.clone(), order, rho, 4).unwrap();
    // Independent bookkeeping of the most recent pairs.
    let mut recent: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut loss_mismatch = 0usize;
    let mut worst_residual: f64 = 0.0;
    for n in 0..300 {
        let smp = agent_sample(&mut env);
        let out = agent.step(&smp.0, smp.1).unwrap();
        recent.insert(0, smp.clone());
        recent.truncate(cfg.features.window);

        let theta_next = agent.theta();
        let s2_next = recent
            .iter()
            .map(|(x, y)| ((y - dot(theta_next, x)).abs().max(1e-12) / norm(x).max(1e-12)).log10())
            .sum::<f64>()
            / recent.len() as f64;
        if out.loss != s2_next {
            loss_mismatch += 1;
        }

        if n >= 20 && n % 10 == 0 {
            let q = agent.q().unwrap();
            let map = agent.map().unwrap();
            let mut window = DataWindow::new(cfg.features.window);
            for (x, y) in recent.iter().rev() {
                window.push(x.clone(), *y);
            }
            let avg = generate_avg_states(&window, theta_next, &out.state, cfg.n_av, &cfg.features);
            let mu: Vec<f64> = avg
                .states()
                .iter()
                .map(|s| lmp_kbrl::kbrl::greedy_action(q, map, s, &cfg.grid))
                .collect();
            let h = build_h(map, &StateAction::new(out.state, out.p), &avg, &mu, cfg.alpha).unwrap();
            let eta = 1.0 / dot(&h, &h);
            let updated = q_update(q, &h, out.loss, eta);
            worst_residual = worst_residual.max((dot(updated.weights(), &h) - out.loss).abs());
        }
    }
    Verdict::new(
        worst_residual <= 1e-10 && loss_mismatch == 0,
        format!("η|h|²=1 residual ≤ {worst_residual:.1e} (tol 1e-10); g ≠ s2(n+1) in {loss_mismatch}/300 steps"),
    )
}

fn agent_sample(env: &mut Environment) -> (Vec<f64>, f64) {
    let s = env.next_sample();
    (s.x, s.y)
}

fn p5_rff_fidelity() -> Verdict {
    let mut r = rng(5);
    let pairs: Vec<(StateAction, StateAction)> = (0..500)
        .map(|_| {
            let a = StateAction::new(random_state(&mut r), r.random_range(1.0..=2.0));
            let d = gauss(&mut r, 5);
            let scale = r.random_range(0.0..1.5);
            let b = StateAction::new(
                StateVector::new(a.s.s1 + scale * d[0], a.s.s2 + scale * d[1], a.s.s3 + scale * d[2], a.s.s4 + scale * d[3]),
                a.a + scale * d[4],
            );
            (a, b)
        })
        .collect();
    let mean_err = |dim: usize, seed: u64| {
        let map = RffMap::sample(dim, 1.0, &mut rng(seed)).unwrap();
        pairs
            .iter()
            .map(|(a, b)| (dot(&map.features(a), &map.features(b)) - gaussian_kernel(a, b, 1.0)).abs())
            .sum::<f64>()
            / pairs.len() as f64
    };
    let (big, small) = (mean_err(2000, 50), mean_err(300, 51));
    Verdict::new(
        big <= 0.05 && small <= 0.12,
        format!("mean |φᵀφ' - κ| = {big:.4} at D=2000 (tol 0.05), {small:.4} at D=300 (tol 0.12)"),
    )
}

fn p6_stable_law() -> Verdict {
    let mut r = rng(6);
    let n = 100_000;
    let sigma = 1.3;
    let draws: Vec<f64> = (0..n).map(|_| sample_alpha_stable(2.0, 0.0, sigma, &mut r)).collect();
    let mean = draws.iter().sum::<f64>() / n as f64;
    let var = draws.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    let target = 2.0 * sigma * sigma;
    let var_err = (var / target - 1.0).abs();

    let mut cauchy: Vec<f64> = (0..n).map(|_| sample_alpha_stable(1.0, 0.0, 1.0, &mut r)).collect();
    cauchy.sort_by(f64::total_cmp);
    let median = 0.5 * (cauchy[n / 2 - 1] + cauchy[n / 2]);
    Verdict::new(
        var_err <= 0.05 && median.abs() <= 0.05,
        format!("α=2 variance {var:.4} vs 2σ² = {target:.4} ({:.2}%, tol 5%); α=1 β=0 median {median:+.4} (tol 0.05)", 100.0 * var_err),
    )
}

fn desk_spec(name: &str, noise: NoiseConfig) -> RunSpec {
    let api = ApiConfig {
        bandwidth: Bandwidth::Fixed { sigma: DESK_SIGMA },
        ..ApiConfig::default()
    };
    let mut methods = vec![MethodSpec::new(MethodKind::Api(api))];
    for &p in ActionGrid::quarter_steps().values() {
        methods.push(MethodSpec::new(MethodKind::FixedP { p }));
    }
    methods.push(MethodSpec::new(MethodKind::RandomP {
        grid: ActionGrid::quarter_steps(),
    }));
    RunSpec {
        name: name.into(),
        experiment: ExperimentConfig {
            filter_order: 20,
            rho: 1e-3,
            total_steps: 10_000,
            change_step: 5_000,
            noise,
        },
        methods,
        trials: 20,
        seed: DESK_SEED,
        per_trial: true,
    }
}

struct DeskRun {
    curves: Vec<LearningCurve>,
    seconds: f64,
}

impl DeskRun {
    fn run(spec: &RunSpec) -> Self {
        let t = Instant::now();
        let curves = harness::simulate(spec).expect("desk run");
        Self {
            curves,
            seconds: t.elapsed().as_secs_f64(),
        }
    }

    fn curve(&self, label: &str) -> &LearningCurve {
        self.curves.iter().find(|c| c.method == label).expect("method present")
    }

    fn final_db(&self, label: &str) -> f64 {
        let c = self.curve(label);
        c.window_mean(c.mean.len() - 1000..c.mean.len())
    }
}

/// Relative criteria shared by P7 and P8. Thresholds come from the fixed-p
/// arms of the same run.
fn relative_verdict(run: &DeskRun, extra: Option<(bool, String)>) -> Verdict {
    let api = run.final_db("api_nav10_a0.75");
    let p2 = run.final_db("lmp_p2");
    let random = run.final_db("random_p");
    let (best_label, best) = ActionGrid::quarter_steps()
        .values()
        .iter()
        .map(|p| {
            let l = format!("lmp_p{p}");
            let v = run.final_db(&l);
            (l, v)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let a_ok = api <= p2 - 3.0 && api < random;
    let b_ok = api <= best + 2.0;
    let extra_ok = extra.as_ref().is_none_or(|e| e.0);
    let mut v = Verdict::new(
        a_ok && b_ok && extra_ok,
        format!(
            "final-1000 mean: agent {api:.2} dB; (a) p=2 {p2:.2} (need ≤ {:.2}), random {random:.2} -> {}; (b) best fixed {best_label} {best:.2} (need ≤ {:.2}) -> {}",
            p2 - 3.0,
            if a_ok { "ok" } else { "fails" },
            best + 2.0,
            if b_ok { "ok" } else { "fails" },
        ),
    );
    if let Some((_, text)) = extra {
        v = v.with(text);
    }
    let hist = &run.curve("api_nav10_a0.75").action_histogram;
    let per_trial: Vec<String> = run
        .curve("api_nav10_a0.75")
        .trials
        .iter()
        .map(|t| format!("{:.0}", t[t.len() - 1000..].iter().sum::<f64>() / 1000.0))
        .collect();
    v.with(format!("agent action shares {hist:?}"))
        .with(format!("agent per-trial final dB [{}]", per_trial.join(", ")))
        .with(format!("{} trials x 10000 steps, {:.0} s", run.curves[0].trials.len(), run.seconds))
}

fn p9_tracking(runs: &[(&str, &DeskRun)]) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, run) in runs {
        let c = run.curve("api_nav10_a0.75");
        let change = 5_000;
        let pre = c.window_mean(change - 1000..change);
        let post = c.window_mean(change + 4000..change + 5000);
        let ok = post <= pre + 1.0;
        pass &= ok;
        parts.push(format!("{name}: pre-change {pre:.2} dB, 4-5k steps after {post:.2} dB {}", if ok { "ok" } else { "fails" }));
    }
    Verdict::new(pass, format!("{} (tol +1 dB)", parts.join("; ")))
}

fn paper_scale_spec(trials: usize, steps: usize) -> RunSpec {
    let mut spec = desk_spec("paper_determinism", NoiseConfig::paper_alpha_stable());
    spec.experiment = ExperimentConfig::paper(NoiseConfig::paper_alpha_stable());
    spec.methods.push(MethodSpec::new(MethodKind::KernelTd0(Default::default())));
    spec.trials = trials;
    spec.seed = 77;
    if steps < spec.experiment.total_steps {
        spec.experiment.total_steps = steps;
        spec.experiment.change_step = steps / 2;
    }
    spec
}

fn p10_determinism(full: bool) -> Verdict {
    let (trials, steps) = if full { (100, 40_000) } else { (2, 1_500) };
    let spec = paper_scale_spec(trials, steps);
    let dir = tempfile::tempdir().unwrap();
    let t = Instant::now();
    let a = harness::run(&spec, &dir.path().join("a")).unwrap();
    let b = harness::run(&spec, &dir.path().join("b")).unwrap();
    let same_csv = std::fs::read(&a.csv).unwrap() == std::fs::read(&b.csv).unwrap();
    let same_maps = a
        .rff_files
        .iter()
        .zip(&b.rff_files)
        .all(|(x, y)| std::fs::read(x).unwrap() == std::fs::read(y).unwrap());
    let scale = if full {
        "full paper scale".to_string()
    } else {
        format!("paper config (L=100, all methods) reduced to {trials} trials x {steps} steps; pass --full for 100 x 40000")
    };
    Verdict::new(
        same_csv && same_maps,
        format!("two runs, same seed: CSV identical {same_csv}, RFF maps identical {same_maps}; {scale}, {:.0} s", t.elapsed().as_secs_f64()),
    )
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    // Under `cargo test --workspace` other flags such as `--nocapture` may be
    // forwarded; only `--full` matters here.
    let full = args.iter().any(|a| a == "--full");
    if args.iter().any(|a| a == "--list") {
        return;
    }

    let mut failed = Vec::new();
    let mut report = |id: &str, f: &dyn Fn() -> Verdict| {
        let t = Instant::now();
        let v = f();
        println!(
            "{id} {} {} [{:.1}s]",
            if v.pass { "PASS" } else { "FAIL" },
            v.summary,
            t.elapsed().as_secs_f64()
        );
        for d in &v.details {
            println!("     {d}");
        }
        if !v.pass {
            failed.push(id.to_string());
        }
    };

    report("P1", &p1_degenerate_cases);
    report("P2", &p2_initial_displacement);
    report("P3", &p3_nonexpansive);
    report("P4", &p4_hyperplane);
    report("P5", &p5_rff_fidelity);
    report("P6", &p6_stable_law);

    let stable = DeskRun::run(&desk_spec("alpha_stable", NoiseConfig::paper_alpha_stable()));
    let sparse = DeskRun::run(&desk_spec("sparse", NoiseConfig::paper_sparse()));
    report("P7", &|| relative_verdict(&stable, None));
    report("P8", &|| {
        let p1 = sparse.final_db("lmp_p1");
        let p2 = sparse.final_db("lmp_p2");
        relative_verdict(
            &sparse,
            Some((p1 < p2, format!("fixed p=1 {p1:.2} dB vs p=2 {p2:.2} dB -> {}", if p1 < p2 { "ok" } else { "fails" }))),
        )
    });
    report("P9", &|| p9_tracking(&[("alpha-stable", &stable), ("sparse", &sparse)]));
    report("P10", &|| p10_determinism(full));

    if failed.is_empty() {
        println!("acceptance: all criteria pass");
    } else {
        println!("acceptance: failing {}", failed.join(", "));
        std::process::exit(1);
    }
}
