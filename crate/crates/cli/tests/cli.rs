use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use bve::simulation::run_experiment;
use bve::{ExperimentId, MetricsReport, ScenarioConfig};
use bve_cli::output::{RUNS_HEADER, SWEEP_HEADER};
use bve_cli::{ConfigError, Settings};

fn bve(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bve"));
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn bve")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn kv(k: &str, v: &str) -> (String, String) {
    (k.to_owned(), v.to_owned())
}

fn lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(str::to_owned)
        .collect()
}

#[test]
fn defaults_round_trip_through_a_file() {
    let defaults = Settings::default();
    let text = defaults.to_toml();
    let parsed = Settings::default().layered(Some(&text), &[], &[]).unwrap();
    assert_eq!(parsed, defaults);
    assert_eq!(parsed.to_scenario().unwrap(), ScenarioConfig::default());
}

#[test]
fn precedence_file_env_flag() {
    let file = "[restrictions]\nhfov = 1.0\nr_d = 0.3\n";
    let base = Settings::default();
    let only_file = base.layered(Some(file), &[], &[]).unwrap();
    assert_eq!(only_file.restrictions.hfov, 1.0);
    let env = [kv("hfov", "0.95")];
    let with_env = base.layered(Some(file), &env, &[]).unwrap();
    assert_eq!(with_env.restrictions.hfov, 0.95);
    let with_flag = base
        .layered(Some(file), &env, &[kv("hfov", "0.9")])
        .unwrap();
    assert_eq!(with_flag.restrictions.hfov, 0.9);
    assert_eq!(with_flag.restrictions.r_d, 0.3);
}

#[test]
fn binary_applies_file_env_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(
        &cfg,
        "[restrictions]\nhfov = 1.0\nwall_d = 0.2\n[simulation]\nseed = 5\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let run = bve(
        &[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--runs",
            "1",
            "--iterations",
            "1",
            "--hfov",
            "0.9",
            "--save-config",
            "--out",
            out.to_str().unwrap(),
        ],
        &[("BVE_HFOV", "0.95"), ("BVE_WALL_D", "0.25")],
    );
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let text = fs::read_to_string(out.join("config.toml")).unwrap();
    let saved = Settings::default().layered(Some(&text), &[], &[]).unwrap();
    assert_eq!(saved.restrictions.hfov, 0.9);
    assert_eq!(saved.restrictions.wall_d, 0.25);
    assert_eq!(saved.simulation.seed, 5);
}

#[test]
fn unknown_experiment_is_a_config_error() {
    let err = Settings::default()
        .layered(None, &[], &[kv("experiment", "E11")])
        .unwrap()
        .to_scenario()
        .unwrap_err();
    assert!(matches!(err, ConfigError::Invalid { ref key, .. } if key == "experiment"));

    let dir = tempfile::tempdir().unwrap();
    let out = bve(
        &[
            "run",
            "--experiment",
            "E11",
            "--out",
            dir.path().to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("E11"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(code(&bve(&["run", "--no-such-flag"], &[])), 1);
    assert_eq!(code(&bve(&["run", "--set", "warp=9", "--out", d], &[])), 1);
    assert_eq!(
        code(&bve(
            &["run", "--config", "/nonexistent/bve.toml", "--out", d],
            &[]
        )),
        2
    );
    let blocked = dir.path().join("file");
    fs::write(&blocked, "").unwrap();
    let out = bve(
        &[
            "run",
            "--runs",
            "1",
            "--iterations",
            "1",
            "--out",
            blocked.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(code(&out), 2);
}

#[test]
fn unreachable_poses_exit_with_three() {
    // A tiny workspace that cannot meet the distance shell around far targets.
    let dir = tempfile::tempdir().unwrap();
    let out = bve(
        &[
            "run",
            "--experiment",
            "E2",
            "--runs",
            "5",
            "--set",
            "r_m=0.05",
            "--set",
            "r_inner=0.01",
            "--out",
            dir.path().to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(code(&out), 3);
    let rows = lines(&dir.path().join("runs.csv"));
    assert!(rows.iter().any(|l| l.ends_with(",infeasible")));
}

#[test]
fn runs_csv_layout_and_precision() {
    let dir = tempfile::tempdir().unwrap();
    let out = bve(
        &[
            "run",
            "--experiment",
            "E2",
            "--runs",
            "1",
            "--iterations",
            "2",
            "--seed",
            "3",
            "--out",
            dir.path().to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(code(&out), 0);
    let rows = lines(&dir.path().join("runs.csv"));
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0], RUNS_HEADER);

    let config = ScenarioConfig {
        runs: 1,
        iterations: 2,
        seed: 3,
        ..ScenarioConfig::for_experiment(ExperimentId::E2)
    };
    let record = &run_experiment(&config).unwrap().records[0];
    for (line, row) in rows[1..].iter().zip(&record.rows) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f.len(), 19);
        assert_eq!(&f[..4], &["E2", "0", "3", &row.i.to_string()]);
        let expected = [
            row.camera.as_slice(),
            record.true_k.as_slice(),
            row.x_hat.as_slice(),
            row.p_diag.as_slice(),
            &[row.loss, row.error_m][..],
        ]
        .concat();
        for (text, want) in f[4..18].iter().zip(expected) {
            let got: f64 = text.parse().unwrap();
            assert!((got - want).abs() <= 1e-8 * want.abs(), "{text} vs {want}");
        }
        assert_eq!(f[18], row.status_label());
    }
}

#[test]
fn metrics_json_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = bve(
        &[
            "run",
            "--runs",
            "2",
            "--iterations",
            "3",
            "--out",
            dir.path().to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(code(&out), 0);
    let text = fs::read_to_string(dir.path().join("metrics.json")).unwrap();
    let report: MetricsReport = serde_json::from_str(&text).unwrap();
    assert_eq!(report.runs, 2);
    assert_eq!(report.experiment.as_deref(), Some("E1"));
    let again: MetricsReport =
        serde_json::from_str(&serde_json::to_string(&report).unwrap()).unwrap();
    assert_eq!(again, report);
}

#[test]
fn sweep_csv_has_one_line_per_level() {
    let dir = tempfile::tempdir().unwrap();
    let out = bve(
        &[
            "sweep",
            "--iterations",
            "1",
            "--out",
            dir.path().to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = lines(&dir.path().join("sweep.csv"));
    assert_eq!(rows.len(), 52);
    assert_eq!(rows[0], SWEEP_HEADER);
    assert!(rows[51].starts_with("50,0.5,10,"));
}

#[test]
fn battery_prints_every_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let out = bve(
        &[
            "battery",
            "--runs",
            "1",
            "--iterations",
            "2",
            "--out",
            dir.path().to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(code(&out), 0);
    let table = String::from_utf8_lossy(&out.stdout);
    for id in ExperimentId::ALL {
        assert!(
            table.lines().any(|l| l.starts_with(&format!("{id} "))),
            "{id}"
        );
    }
    let reports: Vec<MetricsReport> =
        serde_json::from_str(&fs::read_to_string(dir.path().join("metrics.json")).unwrap())
            .unwrap();
    assert_eq!(reports.len(), 10);
    assert_eq!(lines(&dir.path().join("runs.csv")).len(), 1 + 10 * 2);
}

#[test]
fn demo_traces_each_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let out = bve(
        &[
            "demo",
            "--experiment",
            "E3",
            "--iterations",
            "4",
            "--out",
            dir.path().to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().filter(|l| l.contains("|c-x_hat|")).count(), 4);
    assert!(text.contains("final error"));
}
