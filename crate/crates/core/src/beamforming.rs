//! Zero-forcing active beamforming.
//!
//! Each cluster's beam is the normalized projection of its near user's
//! matched filter onto the null space of the other clusters' near-user
//! channels, so `v^l_n · w_k = 0` for every `l ≠ k`.

use crate::error::{Error, Result};
use crate::{CMatrix, CVector, C64};

/// Interference matrix `V_k` for cluster `k`: one column per other cluster,
/// holding `(v^l_n)^H` so that `V_k^H w` lists the leakages `v^l_n · w`.
pub fn build_interference_matrix(near_channels: &[CVector], k: usize) -> CMatrix {
    let m = near_channels.first().map_or(0, |v| v.len());
    let others: Vec<&CVector> = near_channels
        .iter()
        .enumerate()
        .filter(|&(l, _)| l != k)
        .map(|(_, v)| v)
        .collect();
    CMatrix::from_fn(m, others.len(), |i, j| others[j][i].conj())
}

/// Unit-norm ZF beam for `v_near`, phase-aligned so `v_near · w` is real and
/// positive.
pub fn zf_beamformer(interference: &CMatrix, v_near: &CVector, threshold: f64) -> Result<CVector> {
    let m = v_near.len();
    if interference.nrows() != m && interference.ncols() > 0 {
        return Err(Error::invalid("interference matrix row count differs from channel length"));
    }
    if interference.ncols() >= m {
        return Err(Error::InfeasibleConfiguration(format!(
            "{} interfering clusters leave no null space with {m} AP antennas",
            interference.ncols()
        )));
    }
    let matched = v_near.map(|z| z.conj());
    let projected = if interference.ncols() == 0 {
        matched
    } else {
        let svd = interference.clone().svd(true, false);
        let u = svd.u.expect("left singular vectors requested");
        let sigma_max = svd.singular_values.max();
        let mut p = matched.clone();
        for (j, &s) in svd.singular_values.iter().enumerate() {
            if s > threshold * sigma_max {
                let col = u.column(j);
                let coeff = col.dotc(&matched);
                p -= col * coeff;
            }
        }
        p
    };
    let norm = projected.norm();
    if !(norm > 1e-12 * v_near.norm().max(f64::MIN_POSITIVE)) {
        return Err(Error::DegenerateChannel(
            "near-user channel has no component in the zero-forcing null space".into(),
        ));
    }
    let mut w = projected / C64::new(norm, 0.0);
    let gain = beam_gain(v_near, &w);
    if gain.norm() > 0.0 {
        w *= gain.conj() / gain.norm();
    }
    Ok(w)
}

/// Per-cluster ZF beams.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerSet {
    pub beams: Vec<CVector>,
}

impl BeamformerSet {
    pub fn zero_forcing(near_channels: &[CVector], threshold: f64) -> Result<Self> {
        let beams = (0..near_channels.len())
            .map(|k| zf_beamformer(&build_interference_matrix(near_channels, k), &near_channels[k], threshold))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { beams })
    }

    pub fn len(&self) -> usize {
        self.beams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beams.is_empty()
    }
}

/// `v · w` for a row channel `v` stored as its entries.
pub fn beam_gain(v: &CVector, w: &CVector) -> C64 {
    v.iter().zip(w.iter()).map(|(a, b)| a * b).sum()
}
