//! Near/far user pairing.
//!
//! The `K` strongest users become cluster heads (near users). Heads are
//! visited in descending gain order and each takes the remaining user whose
//! effective channel is most correlated with its own, preferring candidates
//! above the correlation threshold, then larger gain difference, then lower
//! index.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::CVector;

/// Channel correlation and gain difference of a user pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairingMetrics {
    /// |v_i v_j^H| / (‖v_i‖ ‖v_j‖), in [0, 1].
    pub correlation: f64,
    /// ‖v_i‖² − ‖v_j‖².
    pub gain_difference: f64,
}

pub fn pairing_metrics(v_i: &CVector, v_j: &CVector) -> Result<PairingMetrics> {
    if v_i.len() != v_j.len() {
        return Err(Error::invalid("pairing metrics: length mismatch"));
    }
    let ni = v_i.norm();
    let nj = v_j.norm();
    if ni == 0.0 || nj == 0.0 {
        return Err(Error::invalid("pairing metrics: zero channel vector"));
    }
    // Row-vector inner product v_i v_j^H.
    let inner: crate::C64 = v_i.iter().zip(v_j.iter()).map(|(a, b)| a * b.conj()).sum();
    Ok(PairingMetrics {
        correlation: (inner.norm() / (ni * nj)).min(1.0),
        gain_difference: ni * ni - nj * nj,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClusterPair {
    pub near: usize,
    pub far: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    pub clusters: Vec<ClusterPair>,
    pub unassigned: Vec<usize>,
}

impl ClusterAssignment {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }
}

struct Candidate {
    user: usize,
    metrics: PairingMetrics,
}

/// Ordering where `Greater` means "preferred".
fn preference(a: &Candidate, b: &Candidate, threshold: f64) -> Ordering {
    let above_a = a.metrics.correlation >= threshold;
    let above_b = b.metrics.correlation >= threshold;
    above_a
        .cmp(&above_b)
        .then(a.metrics.correlation.total_cmp(&b.metrics.correlation))
        .then(a.metrics.gain_difference.total_cmp(&b.metrics.gain_difference))
        .then(b.user.cmp(&a.user))
}

pub fn form_clusters(effective_channels: &[CVector], clusters: usize, correlation_threshold: f64) -> Result<ClusterAssignment> {
    let users = effective_channels.len();
    if users < 2 * clusters {
        return Err(Error::Config(format!("{users} users cannot fill {clusters} clusters of two")));
    }
    if !(0.0..=1.0).contains(&correlation_threshold) {
        return Err(Error::invalid(format!("correlation threshold {correlation_threshold} outside [0, 1]")));
    }
    let gains: Vec<f64> = effective_channels.iter().map(|v| v.norm_squared()).collect();
    let mut order: Vec<usize> = (0..users).collect();
    order.sort_by(|&a, &b| gains[b].total_cmp(&gains[a]).then(a.cmp(&b)));
    let heads = &order[..clusters];
    let mut pool: Vec<usize> = order[clusters..].to_vec();
    pool.sort_unstable();

    let mut pairs = Vec::with_capacity(clusters);
    for &head in heads {
        let mut best: Option<Candidate> = None;
        for &user in &pool {
            let metrics = pairing_metrics(&effective_channels[head], &effective_channels[user])?;
            let cand = Candidate { user, metrics };
            best = match best {
                Some(b) if preference(&b, &cand, correlation_threshold) != Ordering::Less => Some(b),
                _ => Some(cand),
            };
        }
        let far = best.expect("pool holds at least one user per remaining head").user;
        pool.retain(|&u| u != far);
        pairs.push(ClusterPair { near: head, far });
    }
    Ok(ClusterAssignment { clusters: pairs, unassigned: pool })
}
