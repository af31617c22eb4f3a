//! Scenario configuration.
//!
//! Every field has a default so that an empty JSON document (`{}`) yields the
//! reference setting: 5 clusters of 2 users each, 30 deployed users, 8 AP and
//! 8 tag antennas, 30 dBm per cluster, 10 dBm relays, 0.1 W circuit power,
//! -114 dBm noise, 3 dB QoS, path-loss exponent 2.2 and Rician factor 3.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Converts a power in dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) * 1e-3
}

/// Converts a ratio in dB to linear scale.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// How QoS infeasibility in the power-allocation stage is handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum QosPolicy {
    /// Infeasible QoS aborts the realization with an infeasibility report.
    #[default]
    Strict,
    /// Clusters whose QoS targets cannot be met are solved without the QoS
    /// rows and the realization is flagged `qos-relaxed`.
    BestEffort,
}

/// Iteration caps and tolerances of the nested solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgorithmSettings {
    /// Outer alternation cap.
    pub outer_max_iterations: usize,
    /// Outer stopping tolerance on |ΔEE| in Mbit/J.
    pub outer_tolerance: f64,
    /// Dinkelbach stopping tolerance on |R − ϱ P_T|.
    pub dinkelbach_tolerance: f64,
    pub dinkelbach_max_iterations: usize,
    /// Inner (quartic + dual update) iteration cap of the power allocation.
    pub pac_max_iterations: usize,
    /// Base step of the diminishing dual step rule `step / sqrt(t)`.
    pub dual_step: f64,
    /// Stage-2 SCA outer iteration cap.
    pub passive_max_iterations: usize,
    /// Stage-2 stopping tolerance on the surrogate objective change.
    pub passive_tolerance: f64,
    pub penalty_initial: f64,
    pub penalty_growth: f64,
    pub penalty_max: f64,
    /// Target for Tr(F) − ‖F‖₂ at convergence.
    pub rank_tolerance: f64,
    /// Gradient-step cap of the PSD solver.
    pub solver_max_steps: usize,
    /// Singular-value threshold (relative to σ_max) for the ZF null space.
    pub null_space_threshold: f64,
}

impl Default for AlgorithmSettings {
    fn default() -> Self {
        Self {
            outer_max_iterations: 25,
            outer_tolerance: 1e-3,
            dinkelbach_tolerance: 1e-4,
            dinkelbach_max_iterations: 50,
            pac_max_iterations: 500,
            dual_step: 0.1,
            passive_max_iterations: 20,
            passive_tolerance: 1e-3,
            penalty_initial: 10.0,
            penalty_growth: 10.0,
            penalty_max: 1e6,
            rank_tolerance: 1e-3,
            solver_max_steps: 2000,
            null_space_threshold: 1e-10,
        }
    }
}

/// All scenario parameters. Powers are in watts, distances in meters,
/// SINR thresholds and Rician factors are linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub ap_antennas: usize,
    pub bst_antennas: usize,
    pub clusters: usize,
    pub users_total: usize,

    pub cluster_power_w: f64,
    pub relay_power_w: f64,
    pub circuit_power_w: f64,
    pub max_power_w: f64,
    /// SIC power gap; defaults to the noise power when absent.
    pub sic_gap_w: Option<f64>,
    pub noise_power_w: f64,
    pub min_sinr_near: f64,
    pub min_sinr_far: f64,

    /// Rician factor of the AP→tag link seen by near users (β₁).
    pub rician_ap_bst_near: f64,
    /// Rician factor of the AP→tag link seen by far users (β₂).
    pub rician_ap_bst_far: f64,
    /// Rician factor of the tag→near-user link (δ₁).
    pub rician_bst_near: f64,
    /// Rician factor of the tag→far-user link (δ₂).
    pub rician_bst_far: f64,

    pub pathloss_ap_bst: f64,
    pub pathloss_bst_near: f64,
    pub pathloss_bst_far: f64,
    /// Path loss at the reference distance (linear).
    pub reference_gain: f64,
    pub reference_distance_m: f64,
    pub ap_bst_distance_m: f64,
    pub bst_radius_m: f64,
    /// Element spacing over wavelength for both arrays.
    pub spacing_ratio: f64,

    pub bandwidth_hz: f64,
    pub correlation_threshold: f64,
    pub qos_policy: QosPolicy,
    pub algorithm: AlgorithmSettings,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let gamma_min = db_to_linear(3.0);
        Self {
            ap_antennas: 8,
            bst_antennas: 8,
            clusters: 5,
            users_total: 30,
            cluster_power_w: dbm_to_watts(30.0),
            relay_power_w: dbm_to_watts(10.0),
            circuit_power_w: 0.1,
            max_power_w: dbm_to_watts(30.0),
            sic_gap_w: None,
            noise_power_w: dbm_to_watts(-114.0),
            min_sinr_near: gamma_min,
            min_sinr_far: gamma_min,
            rician_ap_bst_near: 3.0,
            rician_ap_bst_far: 3.0,
            rician_bst_near: 3.0,
            rician_bst_far: 3.0,
            pathloss_ap_bst: 2.2,
            pathloss_bst_near: 2.2,
            pathloss_bst_far: 2.2,
            reference_gain: db_to_linear(-30.0),
            reference_distance_m: 1.0,
            ap_bst_distance_m: 30.0,
            bst_radius_m: 10.0,
            spacing_ratio: 0.5,
            bandwidth_hz: 1e6,
            correlation_threshold: 0.7,
            qos_policy: QosPolicy::Strict,
            algorithm: AlgorithmSettings::default(),
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    /// Parses a JSON document; missing fields take their defaults.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn sic_gap(&self) -> f64 {
        self.sic_gap_w.unwrap_or(self.noise_power_w)
    }

    /// Checks every field; the message names the offending field.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("cluster_power_w", self.cluster_power_w),
            ("relay_power_w", self.relay_power_w),
            ("circuit_power_w", self.circuit_power_w),
            ("max_power_w", self.max_power_w),
            ("noise_power_w", self.noise_power_w),
            ("sic_gap_w", self.sic_gap()),
            ("reference_gain", self.reference_gain),
            ("reference_distance_m", self.reference_distance_m),
            ("ap_bst_distance_m", self.ap_bst_distance_m),
            ("bst_radius_m", self.bst_radius_m),
            ("spacing_ratio", self.spacing_ratio),
            ("bandwidth_hz", self.bandwidth_hz),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {value}")));
            }
        }
        let nonneg = [
            ("min_sinr_near", self.min_sinr_near),
            ("min_sinr_far", self.min_sinr_far),
            ("rician_ap_bst_near", self.rician_ap_bst_near),
            ("rician_ap_bst_far", self.rician_ap_bst_far),
            ("rician_bst_near", self.rician_bst_near),
            ("rician_bst_far", self.rician_bst_far),
            ("pathloss_ap_bst", self.pathloss_ap_bst),
            ("pathloss_bst_near", self.pathloss_bst_near),
            ("pathloss_bst_far", self.pathloss_bst_far),
        ];
        for (name, value) in nonneg {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::Config(format!("{name} must be non-negative, got {value}")));
            }
        }
        if self.clusters == 0 {
            return Err(Error::Config("clusters must be at least 1".into()));
        }
        if self.bst_antennas == 0 {
            return Err(Error::Config("bst_antennas must be at least 1".into()));
        }
        if self.ap_antennas < self.clusters {
            return Err(Error::Config(format!(
                "ap_antennas ({}) must be at least clusters ({})",
                self.ap_antennas, self.clusters
            )));
        }
        if self.users_total < 2 * self.clusters {
            return Err(Error::Config(format!(
                "users_total ({}) must be at least 2 * clusters ({})",
                self.users_total,
                2 * self.clusters
            )));
        }
        if !(0.0..=1.0).contains(&self.correlation_threshold) {
            return Err(Error::Config(format!(
                "correlation_threshold must lie in [0, 1], got {}",
                self.correlation_threshold
            )));
        }
        if self.max_power_w < self.cluster_power_w {
            return Err(Error::Config(format!(
                "max_power_w ({}) is below cluster_power_w ({}): the full-power split is infeasible",
                self.max_power_w, self.cluster_power_w
            )));
        }
        let a = &self.algorithm;
        if a.outer_max_iterations == 0
            || a.pac_max_iterations == 0
            || a.passive_max_iterations == 0
            || a.dinkelbach_max_iterations == 0
            || a.solver_max_steps == 0
        {
            return Err(Error::Config("algorithm iteration caps must be at least 1".into()));
        }
        let algo_positive = [
            ("algorithm.outer_tolerance", a.outer_tolerance),
            ("algorithm.dinkelbach_tolerance", a.dinkelbach_tolerance),
            ("algorithm.dual_step", a.dual_step),
            ("algorithm.passive_tolerance", a.passive_tolerance),
            ("algorithm.penalty_initial", a.penalty_initial),
            ("algorithm.penalty_max", a.penalty_max),
            ("algorithm.rank_tolerance", a.rank_tolerance),
            ("algorithm.null_space_threshold", a.null_space_threshold),
        ];
        for (name, value) in algo_positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {value}")));
            }
        }
        if a.penalty_growth <= 1.0 {
            return Err(Error::Config("algorithm.penalty_growth must exceed 1".into()));
        }
        Ok(())
    }
}
