//! Alternating optimization of one channel realization.
//!
//! Channels are sampled and users clustered once. Each round then recomputes
//! ZF beams and per-cluster power allocation for the current reflection
//! amplitudes (stage 1) and re-optimizes the amplitudes for those beams and
//! allocations (stage 2). A stage result is kept only if it does not lower
//! the energy efficiency, so the recorded trace is nondecreasing.

use std::time::Instant;

use rand::Rng;

use crate::beamforming::BeamformerSet;
use crate::channel::{sample_scenario_channels, ChannelSet, Geometry};
use crate::clustering::{form_clusters, ClusterAssignment};
use crate::config::{QosPolicy, ScenarioConfig};
use crate::error::{Error, Result, Stage};
use crate::passive::{optimize_passive, PassiveStatus};
use crate::power::{cluster_link, dinkelbach_pac, EffectiveChannels, LinkMetrics, Pac, PacConstraint, PacError, PacProblem, PacSettings};

pub use crate::power::Mode;

/// `B · Σ_k R_k / P_T^k` in Mbit/J.
pub fn energy_efficiency(rates: &[f64], powers: &[f64], bandwidth_hz: f64) -> Result<f64> {
    if rates.len() != powers.len() {
        return Err(Error::invalid("rates and powers differ in length"));
    }
    if let Some(p) = powers.iter().find(|p| !(**p > 0.0)) {
        return Err(Error::invalid(format!("cluster power must be positive, got {p}")));
    }
    Ok(bandwidth_hz * rates.iter().zip(powers).map(|(r, p)| r / p).sum::<f64>() / 1e6)
}

/// State after one alternation round.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// Mbit/J.
    pub ee: f64,
    /// bits/s/Hz per cluster.
    pub rates: Vec<f64>,
    /// W per cluster.
    pub powers: Vec<f64>,
    /// `Tr F − ‖F‖₂` of the last stage-2 solve, 0 before any.
    pub penalty_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EeTrace {
    /// Entry 0 is the first stage-1 solution at all-ones amplitudes; entry
    /// `i ≥ 1` is the state after round `i`.
    pub iterations: Vec<IterationRecord>,
    /// First round whose EE change fell below tolerance.
    pub converged_at: Option<usize>,
    /// Seconds.
    pub wall_time: f64,
}

impl EeTrace {
    pub fn final_ee(&self) -> f64 {
        self.iterations.last().map_or(0.0, |r| r.ee)
    }

    pub fn ee_values(&self) -> Vec<f64> {
        self.iterations.iter().map(|r| r.ee).collect()
    }
}

/// Sampled channels with the fixed clustering.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub geometry: Geometry,
    pub channels: ChannelSet,
    pub assignment: ClusterAssignment,
}

/// Draws geometry and channels, clusters at all-ones amplitudes and applies
/// the near/far link factors.
pub fn sample_realization<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Result<Realization> {
    config.validate()?;
    let geometry = Geometry::sample(config, rng);
    let mut channels = sample_scenario_channels(config, &geometry, rng)?;
    let ones = vec![1.0; config.bst_antennas];
    let effective = channels.effective_all(&ones)?;
    let assignment = form_clusters(&effective, config.clusters, config.correlation_threshold)?;
    channels.apply_roles(&assignment, config)?;
    Ok(Realization { geometry, channels, assignment })
}

/// Final variables and trace of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub trace: EeTrace,
    pub beams: BeamformerSet,
    pub alphas: Vec<Pac>,
    pub g: Vec<f64>,
    pub assignment: ClusterAssignment,
    /// Clusters whose QoS rows were dropped under the best-effort policy.
    pub qos_relaxed: Vec<bool>,
    /// Stage-1 allocations accepted at their iteration cap.
    pub pac_nonconvergence: usize,
    pub mode: Mode,
}

impl RunOutcome {
    pub fn any_qos_relaxed(&self) -> bool {
        self.qos_relaxed.iter().any(|r| *r)
    }
}

struct StageOne {
    beams: BeamformerSet,
    alphas: Vec<Pac>,
    rhos: Vec<f64>,
    relaxed: Vec<bool>,
    nonconverged: usize,
}

fn stage_one(real: &Realization, g: &[f64], config: &ScenarioConfig, mode: Mode) -> Result<StageOne> {
    let eff = EffectiveChannels::new(&real.channels, &real.assignment, g)?;
    let beams = BeamformerSet::zero_forcing(&eff.near, config.algorithm.null_space_threshold)?;
    let k = real.assignment.len();
    // With α_n + α_f = 1 the other clusters' transmit power does not depend on
    // their split, so each cluster can be solved on its own.
    let full = vec![Pac::INITIAL; k];
    let settings = PacSettings::from_config(config);
    let mut out = StageOne { beams, alphas: Vec::with_capacity(k), rhos: Vec::with_capacity(k), relaxed: vec![false; k], nonconverged: 0 };
    for cluster in 0..k {
        let link = cluster_link(&eff, &real.channels.relay, cluster, &out.beams, &full, config, mode);
        let mut problem = PacProblem::from_config(link, config, mode, true);
        let mut result = dinkelbach_pac(&problem, &settings);
        if let Err(PacError::Infeasible(c @ (PacConstraint::NearQos | PacConstraint::FarQos))) = result {
            if config.qos_policy == QosPolicy::BestEffort {
                problem.enforce_qos = false;
                out.relaxed[cluster] = true;
                result = dinkelbach_pac(&problem, &settings);
            } else {
                return Err(Error::Infeasible { stage: Stage::PowerAllocation, cluster, constraint: c.to_string() });
            }
        }
        let solution = match result {
            Ok(s) => s,
            Err(PacError::NonConvergence(best)) => {
                out.nonconverged += 1;
                *best
            }
            Err(PacError::Infeasible(c)) => {
                return Err(Error::Infeasible { stage: Stage::PowerAllocation, cluster, constraint: c.to_string() })
            }
        };
        out.alphas.push(solution.alpha);
        out.rhos.push(solution.rho);
    }
    Ok(out)
}

/// True per-cluster rates and powers, and the worst relative violation of
/// the enforced rows.
fn evaluate(
    real: &Realization,
    g: &[f64],
    beams: &BeamformerSet,
    alphas: &[Pac],
    relaxed: &[bool],
    config: &ScenarioConfig,
    mode: Mode,
) -> Result<(IterationRecord, f64)> {
    let eff = EffectiveChannels::new(&real.channels, &real.assignment, g)?;
    let mut rates = Vec::with_capacity(alphas.len());
    let mut powers = Vec::with_capacity(alphas.len());
    let mut violation = 0.0f64;
    for k in 0..alphas.len() {
        let link = cluster_link(&eff, &real.channels.relay, k, beams, alphas, config, mode);
        let m = LinkMetrics::evaluate(&link, alphas[k], config, mode);
        rates.push(m.r_sum);
        powers.push(m.p_total);
        let problem = PacProblem::from_config(link, config, mode, !relaxed[k]);
        violation = violation.max(problem.relative_violation(alphas[k]));
    }
    let ee = energy_efficiency(&rates, &powers, config.bandwidth_hz)?;
    Ok((IterationRecord { ee, rates, powers, penalty_residual: 0.0 }, violation))
}

/// Relative tolerance for constraint checks on reported solutions.
pub const CONSTRAINT_TOLERANCE: f64 = 1e-4;

/// Alternating optimization on a fixed realization.
pub fn run_on_realization(real: &Realization, config: &ScenarioConfig, mode: Mode) -> Result<RunOutcome> {
    let start = Instant::now();
    let alg = &config.algorithm;
    let mut g = vec![1.0; config.bst_antennas];
    let first = stage_one(real, &g, config, mode)?;
    let mut relaxed = first.relaxed.clone();
    let (record, _) = evaluate(real, &g, &first.beams, &first.alphas, &relaxed, config, mode)?;
    let mut beams = first.beams;
    let mut alphas = first.alphas;
    let mut rhos = first.rhos;
    let mut nonconverged = first.nonconverged;
    let mut iterations = vec![record];
    let mut converged_at = None;

    for round in 1..=alg.outer_max_iterations {
        let incumbent = iterations.last().expect("trace starts non-empty").clone();
        let mut current = incumbent.clone();

        if round > 1 {
            let candidate = stage_one(real, &g, config, mode)?;
            nonconverged += candidate.nonconverged;
            let merged: Vec<bool> = relaxed.iter().zip(&candidate.relaxed).map(|(a, b)| *a || *b).collect();
            let (rec, _) = evaluate(real, &g, &candidate.beams, &candidate.alphas, &merged, config, mode)?;
            if rec.ee >= current.ee {
                beams = candidate.beams;
                alphas = candidate.alphas;
                rhos = candidate.rhos;
                relaxed = merged;
                current = IterationRecord { penalty_residual: current.penalty_residual, ..rec };
            }
        }

        let enforce: Vec<bool> = relaxed.iter().map(|r| !r).collect();
        let state = optimize_passive(&real.channels, &real.assignment, &beams, &alphas, &rhos, &g, config, mode, &enforce)?;
        if state.status != PassiveStatus::Infeasible {
            current.penalty_residual = state.penalty_residual;
            let (rec, violation) = evaluate(real, &state.g, &beams, &alphas, &relaxed, config, mode)?;
            if rec.ee >= current.ee && violation <= CONSTRAINT_TOLERANCE {
                g = state.g;
                current = IterationRecord { penalty_residual: state.penalty_residual, ..rec };
            }
        }

        let delta = (current.ee - incumbent.ee).abs();
        iterations.push(current);
        if delta < alg.outer_tolerance {
            converged_at = Some(round);
            break;
        }
    }

    Ok(RunOutcome {
        trace: EeTrace { iterations, converged_at, wall_time: start.elapsed().as_secs_f64() },
        beams,
        alphas,
        g,
        assignment: real.assignment.clone(),
        qos_relaxed: relaxed,
        pac_nonconvergence: nonconverged,
        mode,
    })
}

fn with_seed<T>(seed: u64, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Seeded { .. } => e,
        other => Error::Seeded { seed, source: Box::new(other) },
    })
}

/// Cooperative alternating optimization on a fresh realization.
pub fn run_algorithm1<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Result<RunOutcome> {
    with_seed(config.seed, sample_realization(config, rng).and_then(|r| run_on_realization(&r, config, Mode::Cooperative)))
}

/// Same pipeline without the relaying slot.
pub fn run_noncoop_baseline<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Result<RunOutcome> {
    with_seed(config.seed, sample_realization(config, rng).and_then(|r| run_on_realization(&r, config, Mode::NonCooperative)))
}
