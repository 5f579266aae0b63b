use std::process::Command;

use gridid_harness::config::ExperimentConfig;
use gridid_harness::experiment::{aggregate, monte_carlo, sample_topology, segment_length, Stats};
use gridid_harness::report;

fn short(runs: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.grid.n = 3;
    cfg.sim.duration = 4.8;
    cfg.experiment.runs = runs;
    cfg
}

#[test]
fn single_run_summary_equals_the_run() {
    let out = monte_carlo(&short(1), false).unwrap();
    let s = &out.summary;
    let run = s.runs[0].result.as_ref().unwrap();
    assert!(!s.partial);
    assert_eq!(s.pooled.samples, 3);
    for (i, p) in run.pcc.iter().enumerate() {
        let stats = &s.per_pcc[i];
        assert_eq!(stats.samples, 1);
        assert_eq!(stats.mean_magnitude_db.mean, p.admittance.mean_magnitude_db);
        assert_eq!(stats.mean_magnitude_db.max, p.admittance.mean_magnitude_db);
        assert_eq!(stats.mean_magnitude_db.std, 0.0);
        assert_eq!(stats.gamma.mean, p.theta.gamma);
    }
}

#[test]
fn parallel_and_serial_runs_agree() {
    let cfg = short(3);
    let a = monte_carlo(&cfg, true).unwrap().summary.without_timing();
    let b = monte_carlo(&cfg, false).unwrap().summary.without_timing();
    assert_eq!(a, b);
    for stats in a.per_pcc.iter().chain([&a.pooled]) {
        assert!(stats.max_magnitude_db.max >= stats.mean_magnitude_db.mean);
    }
}

#[test]
fn empty_results_still_write_a_summary() {
    let cfg = short(0);
    let topo = sample_topology(&cfg).unwrap();
    let s = aggregate(&cfg, &topo, segment_length(&cfg).unwrap(), Vec::new());
    assert_eq!(s.runs.len(), 0);
    assert_eq!(s.pooled, Stats::default());
    let dir = tempfile::tempdir().unwrap();
    report::write_summary_outputs(&s, dir.path()).unwrap();
    let back = report::read_summary(&dir.path().join(report::SUMMARY_FILE)).unwrap();
    assert_eq!(back.runs.len(), 0);
}

#[test]
fn summary_round_trip_and_plot_shapes() {
    let out = monte_carlo(&short(1), false).unwrap();
    let dir = tempfile::tempdir().unwrap();
    report::write_all(&out, dir.path()).unwrap();
    let back = report::read_summary(&dir.path().join(report::SUMMARY_FILE)).unwrap();
    assert_eq!(back, out.summary);

    let band = out.summary.band_omega().len();
    assert!(band > 0);
    for pcc in 1..=3 {
        let text = std::fs::read_to_string(dir.path().join(format!("admittance_pcc{pcc}.csv"))).unwrap();
        assert_eq!(text.lines().count(), band + 1);
        assert!(dir.path().join(format!("voltage_time_pcc{pcc}.csv")).exists());
    }
    let runs = std::fs::read_to_string(dir.path().join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 1 + 3);
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gridid"))
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[grid]\nn = 1\n").unwrap();
    let status = cli()
        .args(["montecarlo", "--config"])
        .arg(&bad)
        .arg("--out")
        .arg(dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    let unknown = dir.path().join("unknown.toml");
    std::fs::write(&unknown, "[fd]\nepsilonn = 0.1\n").unwrap();
    let status = cli()
        .args(["montecarlo", "--config"])
        .arg(&unknown)
        .arg("--out")
        .arg(dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    let status = cli()
        .args(["report", "--summary"])
        .arg(dir.path().join("missing.json"))
        .arg("--out")
        .arg(dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(4));
}

#[test]
fn cli_simulate_then_identify() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "[grid]\nn = 2\n[sim]\nduration = 3.2\n").unwrap();
    let trace = dir.path().join("trace.csv");
    let ok = cli()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&trace)
        .status()
        .unwrap();
    assert!(ok.success());
    let out = dir.path().join("est");
    let ok = cli()
        .args(["identify", "--config"])
        .arg(&cfg)
        .arg("--trace")
        .arg(&trace)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(ok.success());
    let est: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("estimates.json")).unwrap()).unwrap();
    assert_eq!(est.as_array().unwrap().len(), 2);
    assert!(est[0]["theta"]["gamma"].as_f64().unwrap() > 0.0);

    let status = cli()
        .args(["identify", "--pcc", "7", "--config"])
        .arg(&cfg)
        .arg("--trace")
        .arg(&trace)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}
