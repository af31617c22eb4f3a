//! Monte-Carlo sweeps written as CSV plus a JSON manifest.
//!
//! Every (parameter point, seed) job samples its own realization from a
//! ChaCha8 stream seeded with `config.seed + i`, so points that only change
//! powers see common random numbers, and the cooperative and
//! non-cooperative runs of a job share the same channels. Jobs run on a
//! rayon pool and are written back in (point, seed) order.
//!
//! # CSV schema
//!
//! `<swept columns…>, seed, ee_coop, ee_noncoop, iterations,
//! penalty_residual, status, ee_coop_ci95, ee_noncoop_ci95`
//!
//! * Swept columns depend on the figure: `iteration` (fig2), `bst_antennas`
//!   (fig3), `ap_antennas, bst_antennas` (fig4), `circuit_power_w` (fig5),
//!   `relay_power_dbm` (fig6).
//! * Data rows carry the seed and an empty CI pair. EE is in Mbit/J,
//!   `iterations` is the number of alternation rounds, `penalty_residual` is
//!   the final `Tr F − ‖F‖₂`.
//! * `status` is `ok`, `ok:qos-relaxed` or `<mode>:<failure tag>`.
//! * After the data rows of each point comes one aggregate row with
//!   `seed = mean`, means over successful seeds, `status = aggregate:<ok>/<n>`
//!   and the 95% Student-t half-widths in the CI columns.
//! * Numbers use 9 significant digits; failed values are `nan`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::config::{dbm_to_watts, ScenarioConfig};
use crate::error::{Error, Result};
use crate::pipeline::{run_on_realization, sample_realization, Mode, RunOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Figure {
    Fig2,
    Fig3,
    Fig4,
    Fig5,
    Fig6,
}

impl Figure {
    pub const ALL: [Figure; 5] = [Figure::Fig2, Figure::Fig3, Figure::Fig4, Figure::Fig5, Figure::Fig6];

    pub fn id(self) -> &'static str {
        match self {
            Figure::Fig2 => "fig2",
            Figure::Fig3 => "fig3",
            Figure::Fig4 => "fig4",
            Figure::Fig5 => "fig5",
            Figure::Fig6 => "fig6",
        }
    }
}

impl fmt::Display for Figure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl std::str::FromStr for Figure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Figure::ALL
            .into_iter()
            .find(|f| f.id() == s)
            .ok_or_else(|| Error::invalid(format!("unknown figure {s:?}, expected one of fig2..fig6")))
    }
}

/// What a sweep varies.
#[derive(Debug, Clone, PartialEq)]
pub enum Sweep {
    /// Alternation rounds 1..=n, read off one trace per seed.
    Iterations(usize),
    BstAntennas(Vec<usize>),
    /// (M, N) pairs.
    Antennas(Vec<(usize, usize)>),
    CircuitPower(Vec<f64>),
    /// dBm.
    RelayPower(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub figure: Figure,
    pub sweep: Sweep,
    pub seeds: usize,
    pub baseline: bool,
}

impl SweepSpec {
    /// Parameter grid used for a figure by default.
    pub fn for_figure(figure: Figure, seeds: usize, baseline: bool) -> Self {
        let sweep = match figure {
            Figure::Fig2 => Sweep::Iterations(10),
            Figure::Fig3 => Sweep::BstAntennas(vec![8, 16, 24, 32]),
            Figure::Fig4 => Sweep::Antennas(vec![(8, 8), (16, 8), (32, 8)]),
            Figure::Fig5 => Sweep::CircuitPower(vec![0.1, 0.25, 0.5, 1.0]),
            Figure::Fig6 => Sweep::RelayPower(vec![10.0, 15.0, 20.0]),
        };
        Self { figure, sweep, seeds, baseline }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds == 0 {
            return Err(Error::Config("seeds must be at least 1".into()));
        }
        let empty = match &self.sweep {
            Sweep::Iterations(n) => *n == 0,
            Sweep::BstAntennas(v) => v.is_empty(),
            Sweep::Antennas(v) => v.is_empty(),
            Sweep::CircuitPower(v) => v.is_empty(),
            Sweep::RelayPower(v) => v.is_empty(),
        };
        if empty {
            return Err(Error::Config(format!("{} sweep list is empty", self.figure)));
        }
        Ok(())
    }

    pub fn columns(&self) -> Vec<&'static str> {
        match self.sweep {
            Sweep::Iterations(_) => vec!["iteration"],
            Sweep::BstAntennas(_) => vec!["bst_antennas"],
            Sweep::Antennas(_) => vec!["ap_antennas", "bst_antennas"],
            Sweep::CircuitPower(_) => vec!["circuit_power_w"],
            Sweep::RelayPower(_) => vec!["relay_power_dbm"],
        }
    }

    /// Configs to run, one per solved point, with their column values.
    /// Iteration sweeps solve a single point.
    fn solve_points(&self, base: &ScenarioConfig) -> Vec<(Vec<f64>, ScenarioConfig)> {
        match &self.sweep {
            Sweep::Iterations(_) => vec![(vec![], base.clone())],
            Sweep::BstAntennas(ns) => {
                ns.iter().map(|&n| (vec![n as f64], ScenarioConfig { bst_antennas: n, ..base.clone() })).collect()
            }
            Sweep::Antennas(pairs) => pairs
                .iter()
                .map(|&(m, n)| (vec![m as f64, n as f64], ScenarioConfig { ap_antennas: m, bst_antennas: n, ..base.clone() }))
                .collect(),
            Sweep::CircuitPower(ps) => {
                ps.iter().map(|&p| (vec![p], ScenarioConfig { circuit_power_w: p, ..base.clone() })).collect()
            }
            Sweep::RelayPower(ps) => ps
                .iter()
                .map(|&p| (vec![p], ScenarioConfig { relay_power_w: dbm_to_watts(p), ..base.clone() }))
                .collect(),
        }
    }
}

/// Result of one (point, seed) job in one mode.
#[derive(Debug, Clone, PartialEq)]
pub enum ModeResult {
    Ok(RunSummary),
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub ee_trace: Vec<f64>,
    pub rounds: usize,
    pub penalty_residual: f64,
    pub qos_relaxed: bool,
}

impl From<&RunOutcome> for RunSummary {
    fn from(o: &RunOutcome) -> Self {
        Self {
            ee_trace: o.trace.ee_values(),
            rounds: o.trace.iterations.len() - 1,
            penalty_residual: o.trace.iterations.last().map_or(0.0, |r| r.penalty_residual),
            qos_relaxed: o.any_qos_relaxed(),
        }
    }
}

impl ModeResult {
    /// EE after `round` (the last value once the trace has stopped).
    fn ee_at(&self, round: Option<usize>) -> f64 {
        match self {
            ModeResult::Ok(s) => match round {
                Some(r) => s.ee_trace[r.min(s.ee_trace.len() - 1)],
                None => *s.ee_trace.last().expect("trace is non-empty"),
            },
            ModeResult::Failed(_) => f64::NAN,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobResult {
    pub seed: u64,
    pub coop: ModeResult,
    pub noncoop: Option<ModeResult>,
}

impl JobResult {
    pub fn ok(&self) -> bool {
        matches!(self.coop, ModeResult::Ok(_)) && !matches!(self.noncoop, Some(ModeResult::Failed(_)))
    }

    pub fn status(&self) -> String {
        match (&self.coop, &self.noncoop) {
            (ModeResult::Failed(tag), _) => format!("coop:{tag}"),
            (_, Some(ModeResult::Failed(tag))) => format!("noncoop:{tag}"),
            (ModeResult::Ok(s), nc) => {
                let relaxed = s.qos_relaxed || matches!(nc, Some(ModeResult::Ok(n)) if n.qos_relaxed);
                if relaxed { "ok:qos-relaxed".into() } else { "ok".into() }
            }
        }
    }
}

fn run_mode(real: &Result<crate::pipeline::Realization>, config: &ScenarioConfig, mode: Mode) -> ModeResult {
    match real.as_ref().map_err(|e| e.status_tag()).and_then(|r| run_on_realization(r, config, mode).map_err(|e| e.status_tag())) {
        Ok(o) => ModeResult::Ok(RunSummary::from(&o)),
        Err(tag) => ModeResult::Failed(tag),
    }
}

/// Runs both modes of one job on a shared realization.
pub fn run_job(config: &ScenarioConfig, seed: u64, baseline: bool) -> JobResult {
    let config = ScenarioConfig { seed, ..config.clone() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let real = sample_realization(&config, &mut rng);
    let coop = run_mode(&real, &config, Mode::Cooperative);
    let noncoop = baseline.then(|| run_mode(&real, &config, Mode::NonCooperative));
    JobResult { seed, coop, noncoop }
}

/// Formats with 9 significant digits.
pub fn sig9(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.8e}")
    }
}

fn param_cell(name: &str, x: f64) -> String {
    match name {
        "iteration" | "bst_antennas" | "ap_antennas" => format!("{}", x as u64),
        _ => sig9(x),
    }
}

/// Mean and 95% Student-t half-width; half-width is NaN below two samples.
pub fn mean_ci95(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("degrees of freedom positive").inverse_cdf(0.975);
    (mean, t * (var / n as f64).sqrt())
}

/// Rows written for one parameter point.
struct PointRows {
    params: Vec<f64>,
    round: Option<usize>,
}

/// Outcome of [`run_experiment`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub figure: Figure,
    pub version: String,
    pub config_hash: String,
    pub seed_start: u64,
    pub seed_end: u64,
    pub seeds: usize,
    pub baseline: bool,
    pub points: usize,
    pub data_rows: usize,
    pub aggregate_rows: usize,
    pub jobs: usize,
    pub failed_jobs: usize,
    pub csv: String,
}

impl Manifest {
    /// 0 when every job succeeded, 3 above 10% failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.failed_jobs == 0 {
            0
        } else if self.failed_jobs * 10 > self.jobs {
            3
        } else {
            1
        }
    }
}

/// SHA-256 of the canonical JSON form of the config.
pub fn config_hash(config: &ScenarioConfig) -> Result<String> {
    let text = serde_json::to_string(config)?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}

/// Package version with the `git describe` suffix when available.
pub fn version_string() -> String {
    let pkg = env!("CARGO_PKG_VERSION");
    let describe = std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty());
    match describe {
        Some(d) => format!("{pkg}+{d}"),
        None => pkg.to_string(),
    }
}

/// Runs all jobs of `spec` on `workers` threads (0 = one per core).
pub fn run_jobs(config: &ScenarioConfig, spec: &SweepSpec, workers: usize) -> Result<Vec<Vec<JobResult>>> {
    let points = spec.solve_points(config);
    for (_, c) in &points {
        c.validate()?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let jobs: Vec<(usize, u64)> = (0..points.len())
        .flat_map(|p| (0..spec.seeds as u64).map(move |i| (p, config.seed + i)))
        .collect();
    let results: Vec<JobResult> =
        pool.install(|| jobs.par_iter().map(|&(p, seed)| run_job(&points[p].1, seed, spec.baseline)).collect());
    Ok(results.chunks(spec.seeds).map(|c| c.to_vec()).collect())
}

/// Writes the CSV for already computed jobs; returns (data rows, aggregate rows).
pub fn write_csv<W: std::io::Write>(
    out: W,
    config: &ScenarioConfig,
    spec: &SweepSpec,
    results: &[Vec<JobResult>],
) -> Result<(usize, usize)> {
    let mut writer = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = spec.columns();
    header.extend(["seed", "ee_coop", "ee_noncoop", "iterations", "penalty_residual", "status", "ee_coop_ci95", "ee_noncoop_ci95"]);
    writer.write_record(&header).map_err(csv_error)?;

    let solved = spec.solve_points(config);
    let rows: Vec<(PointRows, &[JobResult])> = match spec.sweep {
        Sweep::Iterations(n) => {
            (1..=n).map(|r| (PointRows { params: vec![r as f64], round: Some(r) }, results[0].as_slice())).collect()
        }
        _ => solved
            .iter()
            .zip(results)
            .map(|((params, _), jobs)| (PointRows { params: params.clone(), round: None }, jobs.as_slice()))
            .collect(),
    };
    let names = spec.columns();
    let (mut data, mut aggregates) = (0, 0);
    for (point, jobs) in rows {
        let params: Vec<String> = names.iter().zip(&point.params).map(|(n, x)| param_cell(n, *x)).collect();
        let mut coop = Vec::new();
        let mut noncoop = Vec::new();
        let mut rounds = Vec::new();
        let mut residuals = Vec::new();
        for job in jobs {
            let ee_c = job.coop.ee_at(point.round);
            let ee_n = job.noncoop.as_ref().map_or(f64::NAN, |r| r.ee_at(point.round));
            let (iters, residual) = match &job.coop {
                ModeResult::Ok(s) => (s.rounds.to_string(), sig9(s.penalty_residual)),
                ModeResult::Failed(_) => (String::new(), sig9(f64::NAN)),
            };
            if job.ok() {
                coop.push(ee_c);
                if job.noncoop.is_some() {
                    noncoop.push(ee_n);
                }
                if let ModeResult::Ok(s) = &job.coop {
                    rounds.push(s.rounds as f64);
                    residuals.push(s.penalty_residual);
                }
            }
            let mut record = params.clone();
            record.extend([job.seed.to_string(), sig9(ee_c), sig9(ee_n), iters, residual, job.status(), String::new(), String::new()]);
            writer.write_record(&record).map_err(csv_error)?;
            data += 1;
        }
        let (mc, cc) = mean_ci95(&coop);
        let (mn, cn) = mean_ci95(&noncoop);
        let mut record = params;
        record.extend([
            "mean".to_string(),
            sig9(mc),
            sig9(mn),
            sig9(mean_ci95(&rounds).0),
            sig9(mean_ci95(&residuals).0),
            format!("aggregate:{}/{}", coop.len(), jobs.len()),
            sig9(cc),
            sig9(cn),
        ]);
        writer.write_record(&record).map_err(csv_error)?;
        aggregates += 1;
    }
    writer.flush()?;
    Ok((data, aggregates))
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Runs a sweep and writes `<figure>.csv` and `<figure>.manifest.json` into
/// `out_dir`.
pub fn run_experiment(config: &ScenarioConfig, spec: &SweepSpec, out_dir: &Path, workers: usize) -> Result<Manifest> {
    config.validate()?;
    spec.validate()?;
    let results = run_jobs(config, spec, workers)?;
    fs::create_dir_all(out_dir)?;
    let csv_path: PathBuf = out_dir.join(format!("{}.csv", spec.figure));
    let (data_rows, aggregate_rows) = write_csv(fs::File::create(&csv_path)?, config, spec, &results)?;
    let jobs: usize = results.iter().map(|r| r.len()).sum();
    let failed_jobs = results.iter().flatten().filter(|j| !j.ok()).count();
    let manifest = Manifest {
        figure: spec.figure,
        version: version_string(),
        config_hash: config_hash(config)?,
        seed_start: config.seed,
        seed_end: config.seed + spec.seeds as u64 - 1,
        seeds: spec.seeds,
        baseline: spec.baseline,
        points: aggregate_rows,
        data_rows,
        aggregate_rows,
        jobs,
        failed_jobs,
        csv: csv_path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
    };
    fs::write(out_dir.join(format!("{}.manifest.json", spec.figure)), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(sig9(17.82), "1.78200000e1");
        assert_eq!(sig9(f64::NAN), "nan");
        assert_eq!(sig9(0.0), "0.00000000e0");
    }

    #[test]
    fn ci_of_constant_sample_is_zero() {
        let (m, h) = mean_ci95(&[2.0, 2.0, 2.0]);
        assert_eq!(m, 2.0);
        assert_eq!(h, 0.0);
        assert!(mean_ci95(&[1.0]).1.is_nan());
    }

    #[test]
    fn figure_ids_round_trip() {
        for f in Figure::ALL {
            assert_eq!(f.id().parse::<Figure>().unwrap(), f);
        }
        assert!("fig7".parse::<Figure>().is_err());
    }

    #[test]
    fn exit_codes() {
        let mut m = Manifest {
            figure: Figure::Fig3,
            version: String::new(),
            config_hash: String::new(),
            seed_start: 0,
            seed_end: 9,
            seeds: 10,
            baseline: true,
            points: 1,
            data_rows: 10,
            aggregate_rows: 1,
            jobs: 10,
            failed_jobs: 0,
            csv: String::new(),
        };
        assert_eq!(m.exit_code(), 0);
        m.failed_jobs = 1;
        assert_eq!(m.exit_code(), 1);
        m.failed_jobs = 2;
        assert_eq!(m.exit_code(), 3);
    }
}
