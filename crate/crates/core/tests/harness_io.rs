use lmp_kbrl::harness::{self, run_trial, RunSpec};
use lmp_kbrl::rff::RffMap;
use std::path::Path;

const SPEC: &str = r#"
name = "io"
trials = 3
seed = 9

[experiment]
filter_order = 5
rho = 0.001
total_steps = 200
change_step = 100
noise = { kind = "alpha_stable", alpha = 1.0, beta = 0.5, sigma = 1.0 }

[[methods]]
kind = "api"
rff_dim = 32
n_av = 3
bandwidth = { rule = "fixed", sigma = 0.4 }

[[methods]]
kind = "fixed_p"
p = 1.25
"#;

fn spec() -> RunSpec {
    RunSpec::from_toml_str(SPEC, Path::new("inline")).unwrap()
}

#[derive(serde::Deserialize)]
struct Record {
    method: String,
    trial: usize,
    map: RffMap,
}

#[test]
fn csv_rows_match_in_memory_curves() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec();
    let out = harness::run(&s, dir.path()).unwrap();
    let mut reader = csv::Reader::from_path(&out.csv).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, ["step", "method", "mean_dev_db", "trial_0", "trial_1", "trial_2"]);

    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2 * 200);
    for (k, curve) in out.curves.iter().enumerate() {
        for step in [0, 99, 199] {
            let row = &rows[k * 200 + step];
            assert_eq!(row[0].parse::<usize>().unwrap(), step);
            assert_eq!(&row[1], curve.method);
            assert_eq!(row[2].parse::<f64>().unwrap(), curve.mean[step]);
            let trials: Vec<f64> = (3..6).map(|i| row[i].parse().unwrap()).collect();
            let mean = trials.iter().sum::<f64>() / 3.0;
            assert!((mean - curve.mean[step]).abs() < 1e-9);
        }
    }
}

#[test]
fn saved_maps_reproduce_the_trial_maps() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec();
    let out = harness::run(&s, dir.path()).unwrap();
    assert_eq!(out.rff_files.len(), 1);
    let text = std::fs::read_to_string(&out.rff_files[0]).unwrap();
    let records: Vec<Record> = serde_json::from_str(&text).unwrap();
    assert_eq!(records.len(), 3);
    for r in &records {
        assert_eq!(r.method, s.methods[0].label());
        let fresh = run_trial(&s, &s.methods[0], r.trial).unwrap().map.unwrap();
        assert_eq!(r.map, fresh);
    }
}

#[test]
fn single_map_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec();
    let map = run_trial(&s, &s.methods[0], 1).unwrap().map.unwrap();
    let path = dir.path().join("map.json");
    map.save_json(&path).unwrap();
    assert_eq!(RffMap::load_json(&path).unwrap(), map);
}

#[test]
fn trials_differ_but_methods_share_streams() {
    let s = spec();
    let a = run_trial(&s, &s.methods[1], 0).unwrap();
    let b = run_trial(&s, &s.methods[1], 1).unwrap();
    assert_ne!(a.deviation_db, b.deviation_db);
    // Before the first update every method starts from θ = 0 on the same system.
    let api = run_trial(&s, &s.methods[0], 0).unwrap();
    assert!((api.deviation_db[0] - a.deviation_db[0]).abs() < 1.0);
}

#[test]
fn io_error_on_unwritable_output() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let err = harness::run(&spec(), &blocker.join("sub")).unwrap_err();
    assert!(matches!(err, lmp_kbrl::Error::Io { .. }), "{err}");
}
