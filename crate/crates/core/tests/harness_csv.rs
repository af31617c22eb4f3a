mod common;

use std::fs;

use ambsc_core::config::ScenarioConfig;
use ambsc_core::error::Error;
use ambsc_core::harness::*;
use common::best_effort;

fn read(path: &std::path::Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let header = reader.headers().unwrap().iter().map(String::from).collect();
    let rows = reader.records().map(|r| r.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn fig4_layout_and_aggregates() {
    let dir = tempfile::tempdir().unwrap();
    let config = best_effort(8);
    let spec = SweepSpec::for_figure(Figure::Fig4, 4, true);
    let manifest = run_experiment(&config, &spec, dir.path(), 1).unwrap();
    assert_eq!((manifest.data_rows, manifest.aggregate_rows, manifest.jobs), (12, 3, 12));
    assert_eq!(manifest.failed_jobs, 0);
    assert_eq!(manifest.exit_code(), 0);
    assert_eq!((manifest.seed_start, manifest.seed_end), (config.seed, config.seed + 3));

    let (header, rows) = read(&dir.path().join("fig4.csv"));
    assert_eq!(
        header,
        [
            "ap_antennas", "bst_antennas", "seed", "ee_coop", "ee_noncoop", "iterations", "penalty_residual", "status",
            "ee_coop_ci95", "ee_noncoop_ci95"
        ]
    );
    assert_eq!(rows.len(), 15);
    for (chunk, m) in rows.chunks(5).zip(["8", "16", "32"]) {
        let data = &chunk[..4];
        let agg = &chunk[4];
        assert!(chunk.iter().all(|r| r[0] == m && r[1] == "8"));
        assert_eq!(agg[2], "mean");
        assert_eq!(agg[7], "aggregate:4/4");
        // Aggregate mean and CI recomputed from the data rows.
        let coop: Vec<f64> = data.iter().map(|r| r[3].parse().unwrap()).collect();
        let mean = coop.iter().sum::<f64>() / 4.0;
        let sd = (coop.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
        let half = 3.182446305284263 * sd / 2.0;
        assert!((agg[3].parse::<f64>().unwrap() - mean).abs() <= 1e-7 * mean);
        // Data cells are rounded to 9 digits, which bounds the recomputation.
        let got: f64 = agg[8].parse().unwrap();
        assert!((got - half).abs() <= 1e-7 * mean, "{got} vs {half}");
        for r in data {
            assert!(r[7].starts_with("ok"));
            assert!(r[8].is_empty() && r[9].is_empty());
            // 9 significant digits.
            assert_eq!(r[3].split('e').next().unwrap().trim_start_matches('-').len(), 10, "{}", r[3]);
        }
    }

    let manifest_text = fs::read_to_string(dir.path().join("fig4.manifest.json")).unwrap();
    let parsed: Manifest = serde_json::from_str(&manifest_text).unwrap();
    assert_eq!(parsed, manifest);
    assert_eq!(parsed.config_hash, config_hash(&config).unwrap());
    assert_eq!(parsed.csv, "fig4.csv");
}

#[test]
fn reruns_are_byte_identical_across_worker_counts() {
    let config = best_effort(8);
    let spec = SweepSpec::for_figure(Figure::Fig6, 2, true);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_experiment(&config, &spec, a.path(), 1).unwrap();
    run_experiment(&config, &spec, b.path(), 3).unwrap();
    assert_eq!(fs::read(a.path().join("fig6.csv")).unwrap(), fs::read(b.path().join("fig6.csv")).unwrap());
}

#[test]
fn fig2_has_one_block_per_iteration() {
    let config = best_effort(8);
    let spec = SweepSpec::for_figure(Figure::Fig2, 2, false);
    let results = run_jobs(&config, &spec, 1).unwrap();
    let mut buf = Vec::new();
    let (data, aggregates) = write_csv(&mut buf, &config, &spec, &results).unwrap();
    assert_eq!((data, aggregates), (20, 10));
    let text = String::from_utf8(buf).unwrap();
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(&reader.headers().unwrap()[0], "iteration");
    for (i, block) in rows.chunks(3).enumerate() {
        assert!(block.iter().all(|r| r[0] == (i + 1).to_string()));
        assert!(block.iter().take(2).all(|r| &r[3] == "nan"), "no baseline requested");
    }
    // The per-seed EE never decreases with the iteration index.
    for seed_row in 0..2 {
        let ee: Vec<f64> = rows.chunks(3).map(|b| b[seed_row][2].parse().unwrap()).collect();
        assert!(ee.windows(2).all(|w| w[1] >= w[0]));
    }
}

#[test]
fn strict_defaults_fail_every_job_and_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SweepSpec::for_figure(Figure::Fig5, 2, true);
    let manifest = run_experiment(&ScenarioConfig::default(), &spec, dir.path(), 1).unwrap();
    assert_eq!(manifest.failed_jobs, manifest.jobs);
    assert_eq!(manifest.exit_code(), 3);
    let (_, rows) = read(&dir.path().join("fig5.csv"));
    for r in rows.iter().filter(|r| r[1] != "mean") {
        assert!(r[6].starts_with("coop:infeasible:stage1-power"), "{}", r[6]);
        assert_eq!(r[2], "nan");
    }
    for r in rows.iter().filter(|r| r[1] == "mean") {
        assert_eq!(r[6], "aggregate:0/2");
    }
}

#[test]
fn exit_code_thresholds() {
    let base = Manifest {
        figure: Figure::Fig3,
        version: String::new(),
        config_hash: String::new(),
        seed_start: 0,
        seed_end: 19,
        seeds: 20,
        baseline: true,
        points: 1,
        data_rows: 20,
        aggregate_rows: 1,
        jobs: 20,
        failed_jobs: 0,
        csv: String::new(),
    };
    assert_eq!(base.exit_code(), 0);
    assert_eq!(Manifest { failed_jobs: 2, ..base.clone() }.exit_code(), 1);
    assert_eq!(Manifest { failed_jobs: 3, ..base.clone() }.exit_code(), 3);
}

#[test]
fn invalid_inputs_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SweepSpec::for_figure(Figure::Fig3, 0, true);
    assert!(matches!(run_experiment(&best_effort(8), &spec, dir.path(), 1), Err(Error::Config(_))));
    let spec = SweepSpec { sweep: Sweep::CircuitPower(vec![]), ..SweepSpec::for_figure(Figure::Fig5, 1, true) };
    assert!(matches!(run_experiment(&best_effort(8), &spec, dir.path(), 1), Err(Error::Config(_))));
    let bad = ScenarioConfig { users_total: 3, ..ScenarioConfig::default() };
    let spec = SweepSpec::for_figure(Figure::Fig5, 1, true);
    assert!(matches!(run_experiment(&bad, &spec, dir.path(), 1), Err(Error::Config(_))));
    assert!("fig7".parse::<Figure>().is_err());
    assert_eq!("fig3".parse::<Figure>().unwrap(), Figure::Fig3);
}

#[test]
fn ci_half_width_matches_student_t() {
    let (m, h) = mean_ci95(&[1.0, 2.0, 3.0, 4.0]);
    assert!((m - 2.5).abs() < 1e-15);
    let sd = (5.0f64 / 3.0).sqrt();
    assert!((h - 3.182446305284263 * sd / 2.0).abs() < 1e-9);
    assert!(mean_ci95(&[1.0]).1.is_nan());
    assert_eq!(sig9(1234.5), "1.23450000e3");
    assert_eq!(sig9(f64::NAN), "nan");
}
