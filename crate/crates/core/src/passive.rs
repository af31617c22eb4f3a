//! Stage-2 reflection design.
//!
//! The amplitudes enter every beamformed gain through
//! `|v w|² = |τ + gᵀE|²` with `E = B w` and `τ = f^H w`. Lifting
//! `ḡ = [g; 1]` to `F = ḡḡᵀ` turns each gain into `Tr(M F) + |τ|²`, the rate
//! terms into concave logs (after a first-order expansion of the subtracted
//! far-user log) and rank one into the penalty `Tr F − ‖F‖₂`, linearized at
//! the previous iterate. Since the amplitudes are real, F is kept real
//! symmetric and only `Re M` enters the problem.

use std::f64::consts::LN_2;

use crate::beamforming::BeamformerSet;
use crate::channel::{ChannelSet, UserChannel};
use crate::clustering::ClusterAssignment;
use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::linalg::{outer, trace, trace_product, HermitianEigen};
use crate::power::{cluster_link, sca_constants, EffectiveChannels, Mode, Pac, ScaTerm, SCA_ANCHOR_FLOOR};
use crate::psd::{self, ConeProblem, Sense, SolveSettings, SolveStatus, TraceInequality};
use crate::{CMatrix, CVector, C64};

/// Lifted form of one beamformed gain.
#[derive(Debug, Clone, PartialEq)]
pub struct Lift {
    /// `[[E E^H, E τ*], [τ E^H, 0]]`.
    pub m: CMatrix,
    pub tau: C64,
}

impl Lift {
    /// `Re Tr(M F) + |τ|²`.
    pub fn gain(&self, f: &CMatrix) -> f64 {
        trace_product(&self.m, f) + self.tau.norm_sqr()
    }

    /// Real part of M, the coefficient seen by real symmetric F.
    pub fn real_m(&self) -> CMatrix {
        self.m.map(|z| C64::new(z.re, 0.0))
    }
}

/// Lift of `|(f^H + gᵀB) w|²`.
pub fn lift_user(direct: &CVector, cascade: &CMatrix, w: &CVector) -> Result<Lift> {
    if cascade.ncols() != w.len() || direct.len() != w.len() {
        return Err(Error::invalid("lift: channel and beam lengths differ"));
    }
    let e = cascade * w;
    let tau: C64 = direct.iter().zip(w.iter()).map(|(f, w)| f.conj() * w).sum();
    let n = e.len();
    let mut m = CMatrix::zeros(n + 1, n + 1);
    m.view_mut((0, 0), (n, n)).copy_from(&outer(&e));
    for i in 0..n {
        m[(i, n)] = e[i] * tau.conj();
        m[(n, i)] = tau * e[i].conj();
    }
    Ok(Lift { m, tau })
}

/// Near and far lifts of one cluster.
pub fn lift_matrices(near: &UserChannel, far: &UserChannel, w: &CVector) -> Result<(Lift, Lift)> {
    Ok((lift_user(&near.direct, &near.cascade, w)?, lift_user(&far.direct, &far.cascade, w)?))
}

/// `ḡ = [g; 1]`.
pub fn lifted_vector(g: &[f64]) -> CVector {
    CVector::from_iterator(g.len() + 1, g.iter().copied().chain(std::iter::once(1.0)).map(|x| C64::new(x, 0.0)))
}

/// Frozen data of one cluster in the Stage-2 surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSurrogate {
    pub near: Lift,
    pub far: Lift,
    pub alpha: Pac,
    pub cluster_power: f64,
    /// σ̄²_n, frozen.
    pub noise_n: f64,
    /// σ̄²_f, frozen.
    pub noise_f: f64,
    /// ω₁ = γ₃ (zero without relaying).
    pub omega: f64,
    pub rho: f64,
    pub total_power: f64,
    pub sca_near: ScaTerm,
    pub sca_far: ScaTerm,
    /// Far gain at the expansion point F^(m).
    pub far_anchor_gain: f64,
    /// Near gain at F^(m).
    pub near_anchor_gain: f64,
}

/// Rate terms of one cluster at F.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateTerms {
    pub near: f64,
    /// Far term with the subtracted log expanded at F^(m).
    pub far_surrogate: f64,
    /// Far term with the exact subtracted log.
    pub far_exact: f64,
}

impl ClusterSurrogate {
    fn near_sinr(&self, qn: f64) -> f64 {
        self.alpha.near * self.cluster_power * qn / self.noise_n
    }

    /// Numerator and denominator of γ₂ + γ₃.
    fn far_parts(&self, qf: f64) -> (f64, f64) {
        let p = self.cluster_power;
        let den = self.alpha.near * p * qf + self.noise_f;
        (self.alpha.far * p * qf + self.omega * den, den)
    }

    /// Re-anchors the SCA constants and expansion point at F.
    pub fn reanchor(&mut self, f: &CMatrix) -> Result<()> {
        let qn = self.near.gain(f);
        let qf = self.far.gain(f);
        let (num, den) = self.far_parts(qf);
        self.sca_near = sca_constants(self.near_sinr(qn).max(SCA_ANCHOR_FLOOR))?;
        self.sca_far = sca_constants((num / den).max(SCA_ANCHOR_FLOOR))?;
        self.far_anchor_gain = qf;
        self.near_anchor_gain = qn;
        Ok(())
    }

    pub fn rate_terms(&self, f: &CMatrix) -> Result<RateTerms> {
        let qn = self.near.gain(f);
        let qf = self.far.gain(f);
        let (num, den) = self.far_parts(qf);
        if !(qn > 0.0) || !(num > 0.0) {
            return Err(Error::Domain(format!("non-positive log argument (near gain {qn:e}, far numerator {num:e})")));
        }
        let p = self.cluster_power;
        let d_m = self.alpha.near * p * self.far_anchor_gain + self.noise_f;
        let psi2_bar = d_m.log2() + self.alpha.near * p * (qf - self.far_anchor_gain) / (LN_2 * d_m);
        Ok(RateTerms {
            near: 0.5 * self.sca_near.lower_bound(self.near_sinr(qn)),
            far_surrogate: 0.5 * (self.sca_far.zeta * (num.log2() - psi2_bar) + self.sca_far.gamma),
            far_exact: 0.5 * (self.sca_far.zeta * (num.log2() - den.log2()) + self.sca_far.gamma),
        })
    }

    /// Exact rate at frozen interference.
    pub fn rate(&self, f: &CMatrix) -> f64 {
        let qn = self.near.gain(f);
        let (num, den) = self.far_parts(self.far.gain(f));
        0.5 * (1.0 + self.near_sinr(qn)).log2() + 0.5 * (1.0 + num / den).log2()
    }

    fn objective(&self, f: &CMatrix) -> Result<(f64, CMatrix)> {
        let terms = self.rate_terms(f)?;
        let qn = self.near.gain(f);
        let qf = self.far.gain(f);
        let (num, _) = self.far_parts(qf);
        let p = self.cluster_power;
        let d_m = self.alpha.near * p * self.far_anchor_gain + self.noise_f;
        let c_near = 0.5 * self.sca_near.zeta / (LN_2 * qn);
        let c_far = 0.5
            * self.sca_far.zeta
            * ((self.alpha.far + self.omega * self.alpha.near) * p / (LN_2 * num) - self.alpha.near * p / (LN_2 * d_m));
        let grad = self.near.real_m() * C64::new(c_near, 0.0) + self.far.real_m() * C64::new(c_far, 0.0);
        Ok((terms.near + terms.far_surrogate - self.rho * self.total_power, grad))
    }
}

/// Stage-2 problem over all clusters sharing one F.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedProblem {
    pub clusters: Vec<ClusterSurrogate>,
    pub bst_antennas: usize,
    pub min_sinr_near: f64,
    pub min_sinr_far: f64,
    pub sic_gap: f64,
    pub mode: Mode,
    /// Per cluster: keep the QoS rows.
    pub enforce_qos: Vec<bool>,
}

/// Value and gradient of Σ_k (R̃_k − ϱ_k P_T^k).
pub fn surrogate_objective(f: &CMatrix, lifted: &LiftedProblem) -> Result<(f64, CMatrix)> {
    let n = f.nrows();
    let mut value = 0.0;
    let mut grad = CMatrix::zeros(n, n);
    for c in &lifted.clusters {
        let (v, g) = c.objective(f)?;
        value += v;
        grad += g;
    }
    Ok((value, grad))
}

/// `ξ (Tr F − ‖F^(m)‖₂ − u^H (F − F^(m)) u)` and its gradient `ξ (I − u u^H)`.
pub fn rank1_penalty(f: &CMatrix, anchor: &CMatrix, xi: f64) -> Result<(f64, CMatrix)> {
    if !(xi > 0.0) {
        return Err(Error::invalid(format!("penalty factor must be positive, got {xi}")));
    }
    let eig = HermitianEigen::new(anchor);
    let u = eig.principal_vector();
    let uu = outer(&u);
    let value = xi * (trace(f) - eig.max() - trace_product(&uu, &(f - anchor)));
    let grad = (CMatrix::identity(f.nrows(), f.nrows()) - uu) * C64::new(xi, 0.0);
    Ok((value, grad))
}

/// `Tr F − ‖F‖₂`.
pub fn penalty_residual(f: &CMatrix) -> f64 {
    trace(f) - HermitianEigen::new(f).max()
}

/// Affine rows: QoS, cooperation, SIC gap per cluster, then `F_{n,N+1} ≥ 0`.
pub fn constraint_rows(lifted: &LiftedProblem) -> Vec<TraceInequality> {
    let dim = lifted.bst_antennas + 1;
    let re = |x: f64| C64::new(x, 0.0);
    let mut rows = Vec::new();
    for (k, c) in lifted.clusters.iter().enumerate() {
        let p = c.cluster_power;
        let (an, af) = (c.alpha.near, c.alpha.far);
        let mn = c.near.real_m();
        let mf = c.far.real_m();
        let tn = c.near.tau.norm_sqr();
        let tf = c.far.tau.norm_sqr();
        if lifted.enforce_qos.get(k).copied().unwrap_or(true) {
            rows.push(TraceInequality {
                a: &mn * re(an * p),
                b: lifted.min_sinr_near * c.noise_n - an * p * tn,
                sense: Sense::AtLeast,
            });
            let excess = lifted.min_sinr_far - c.omega;
            let coef = (af - excess * an) * p;
            rows.push(TraceInequality { a: &mf * re(coef), b: excess * c.noise_f - coef * tf, sense: Sense::AtLeast });
        }
        if lifted.mode == Mode::Cooperative {
            // Brackets frozen at F^(m): the far denominator on the left, the
            // near denominator on the right.
            let d_f = an * p * c.far_anchor_gain + c.noise_f;
            let d_n = an * p * c.near_anchor_gain + c.noise_n;
            let cn = af * p * d_f;
            let cf = d_n * (af + c.omega * an) * p;
            rows.push(TraceInequality {
                a: &mn * re(cn) - &mf * re(cf),
                b: d_n * c.omega * c.noise_f - cn * tn + cf * tf,
                sense: Sense::AtLeast,
            });
        }
        let coef = (af - an) * p;
        rows.push(TraceInequality { a: &mn * re(coef), b: lifted.sic_gap - coef * tn, sense: Sense::AtLeast });
    }
    for i in 0..lifted.bst_antennas {
        let mut a = CMatrix::zeros(dim, dim);
        a[(i, dim - 1)] = re(0.5);
        a[(dim - 1, i)] = re(0.5);
        rows.push(TraceInequality { a, b: 0.0, sense: Sense::AtLeast });
    }
    rows
}

/// Relative allowance on the coupled rows at the expansion point. Stage 1
/// leaves them tight, which would leave the cone problem without a strict
/// interior; accepted solutions are rechecked at a looser tolerance.
pub const ROW_RELAXATION: f64 = 1e-6;

/// Magnitudes of the terms of each per-cluster row at `f`, before
/// cancellation, in [`constraint_rows`] order.
pub fn coupled_row_scales(lifted: &LiftedProblem, f: &CMatrix) -> Vec<f64> {
    let mut scales = Vec::new();
    for (k, c) in lifted.clusters.iter().enumerate() {
        let p = c.cluster_power;
        let (an, af) = (c.alpha.near, c.alpha.far);
        let qn = c.near.gain(f);
        let qf = c.far.gain(f);
        if lifted.enforce_qos.get(k).copied().unwrap_or(true) {
            scales.push(an * p * qn + lifted.min_sinr_near * c.noise_n);
            let excess = lifted.min_sinr_far - c.omega;
            scales.push(af * p * qf + excess.abs() * (an * p * qf + c.noise_f));
        }
        if lifted.mode == Mode::Cooperative {
            let d_f = an * p * c.far_anchor_gain + c.noise_f;
            let d_n = an * p * c.near_anchor_gain + c.noise_n;
            scales.push(af * p * d_f * qn + d_n * (af + c.omega * an) * p * qf + d_n * c.omega * c.noise_f);
        }
        scales.push((af + an) * p * qn + lifted.sic_gap);
    }
    scales
}

/// [`constraint_rows`] with the per-cluster rows loosened by
/// [`ROW_RELAXATION`] of their term magnitude at `anchor`.
pub fn relaxed_rows(lifted: &LiftedProblem, anchor: &CMatrix) -> Vec<TraceInequality> {
    let mut rows = constraint_rows(lifted);
    for (row, scale) in rows.iter_mut().zip(coupled_row_scales(lifted, anchor)) {
        match row.sense {
            Sense::AtLeast => row.b -= ROW_RELAXATION * scale,
            Sense::AtMost => row.b += ROW_RELAXATION * scale,
        }
    }
    rows
}

/// `g_n = clamp(|u_n / u_{N+1}|, 0, 1)` from the scaled principal eigenvector.
pub fn extract_reflection_vector(f: &CMatrix) -> Result<Vec<f64>> {
    let eig = HermitianEigen::new(f);
    let u = eig.principal_vector() * C64::new(eig.max().max(0.0).sqrt(), 0.0);
    let n = u.len() - 1;
    let last = u[n].norm();
    if last < 1e-9 {
        return Err(Error::ExtractionDegenerate(last));
    }
    Ok((0..n).map(|i| (u[i].norm() / last).clamp(0.0, 1.0)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassiveSettings {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub penalty_initial: f64,
    pub penalty_growth: f64,
    pub penalty_max: f64,
    pub rank_tolerance: f64,
    pub solver_max_steps: usize,
}

impl PassiveSettings {
    pub fn from_config(config: &ScenarioConfig) -> Self {
        let a = &config.algorithm;
        Self {
            max_iterations: a.passive_max_iterations,
            tolerance: a.passive_tolerance,
            penalty_initial: a.penalty_initial,
            penalty_growth: a.penalty_growth,
            penalty_max: a.penalty_max,
            rank_tolerance: a.rank_tolerance,
            solver_max_steps: a.solver_max_steps,
        }
    }
}

impl Default for PassiveSettings {
    fn default() -> Self {
        Self::from_config(&ScenarioConfig::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PassiveStatus {
    Converged,
    IterationCap,
    /// No F satisfies the rows; the incumbent is returned.
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PassiveState {
    pub f: CMatrix,
    pub g: Vec<f64>,
    pub penalty_residual: f64,
    pub sca_iteration: usize,
    /// Penalized surrogate at each accepted iterate.
    pub objective_trace: Vec<f64>,
    /// Penalty factor used for each accepted iterate.
    pub penalty_trace: Vec<f64>,
    pub status: PassiveStatus,
}

/// Builds the Stage-2 problem with interference frozen at `g`.
#[allow(clippy::too_many_arguments)]
pub fn build_lifted_problem(
    channels: &ChannelSet,
    assignment: &ClusterAssignment,
    beams: &BeamformerSet,
    alphas: &[Pac],
    rhos: &[f64],
    g: &[f64],
    config: &ScenarioConfig,
    mode: Mode,
    enforce_qos: &[bool],
) -> Result<LiftedProblem> {
    let eff = EffectiveChannels::new(channels, assignment, g)?;
    let f0 = outer(&lifted_vector(g));
    let mut clusters = Vec::with_capacity(assignment.len());
    for (k, pair) in assignment.clusters.iter().enumerate() {
        let link = cluster_link(&eff, &channels.relay, k, beams, alphas, config, mode);
        let (near, far) = lift_matrices(&channels.users[pair.near], &channels.users[pair.far], &beams.beams[k])?;
        let relay = match mode {
            Mode::Cooperative => config.relay_power_w,
            Mode::NonCooperative => 0.0,
        };
        let mut c = ClusterSurrogate {
            near,
            far,
            alpha: alphas[k],
            cluster_power: config.cluster_power_w,
            noise_n: link.near_ici + config.noise_power_w,
            noise_f: link.far_ici + config.noise_power_w,
            omega: link.relay_sinr,
            rho: rhos[k],
            total_power: link.w_norm_sq * config.cluster_power_w * (alphas[k].near + alphas[k].far)
                + relay
                + config.circuit_power_w,
            sca_near: ScaTerm { zeta: 1.0, gamma: 0.0 },
            sca_far: ScaTerm { zeta: 1.0, gamma: 0.0 },
            far_anchor_gain: 0.0,
            near_anchor_gain: 0.0,
        };
        c.reanchor(&f0)?;
        clusters.push(c);
    }
    Ok(LiftedProblem {
        clusters,
        bst_antennas: channels.bst_antennas(),
        min_sinr_near: config.min_sinr_near,
        min_sinr_far: config.min_sinr_far,
        sic_gap: config.sic_gap(),
        mode,
        enforce_qos: enforce_qos.to_vec(),
    })
}

/// Penalized SCA loop around the cone solver, started from `g`.
pub fn optimize_lifted(lifted: &mut LiftedProblem, g: &[f64], settings: &PassiveSettings) -> Result<PassiveState> {
    let dim = lifted.bst_antennas + 1;
    if g.len() != lifted.bst_antennas {
        return Err(Error::invalid("reflection vector length differs from tag size"));
    }
    let mut anchor = outer(&lifted_vector(g));
    let mut xi = settings.penalty_initial;
    let mut objective_trace = Vec::new();
    let mut penalty_trace = Vec::new();
    let mut status = PassiveStatus::IterationCap;
    let mut iterations = 0;
    let solve_settings = SolveSettings { max_steps: settings.solver_max_steps, ..SolveSettings::default() };

    for _ in 0..settings.max_iterations {
        iterations += 1;
        for c in lifted.clusters.iter_mut() {
            c.reanchor(&anchor)?;
        }
        let frozen = lifted.clone();
        let a = anchor.clone();
        let objective = move |f: &CMatrix| -> Result<(f64, CMatrix)> {
            let (v, g) = surrogate_objective(f, &frozen)?;
            let (pv, pg) = rank1_penalty(f, &a, xi)?;
            Ok((v - pv, g - pg))
        };
        let start_value = objective(&anchor).map(|(v, _)| v).unwrap_or(f64::NEG_INFINITY);
        let problem = ConeProblem {
            dimension: dim,
            objective: &objective,
            inequalities: relaxed_rows(lifted, &anchor),
            diag_cap: (0..dim).map(|i| (i < dim - 1).then_some(1.0)).collect(),
            pinned: vec![(dim - 1, 1.0)],
            real: true,
        };
        let report = psd::solve(&problem, &anchor, &solve_settings)?;
        if report.status == SolveStatus::Infeasible {
            if objective_trace.is_empty() {
                status = PassiveStatus::Infeasible;
            }
            break;
        }
        if report.objective_value < start_value - 1e-9 * start_value.abs().max(1.0) {
            // The solver could not improve on the expansion point.
            status = PassiveStatus::Converged;
            break;
        }
        let previous = objective_trace.last().copied();
        objective_trace.push(report.objective_value);
        penalty_trace.push(xi);
        anchor = report.f_star;
        let residual = penalty_residual(&anchor);
        let rank_ok = residual <= settings.rank_tolerance;
        if !rank_ok {
            xi = (xi * settings.penalty_growth).min(settings.penalty_max);
        }
        if let Some(prev) = previous {
            if rank_ok && (report.objective_value - prev).abs() < settings.tolerance {
                status = PassiveStatus::Converged;
                break;
            }
        }
    }
    let g_out = if status == PassiveStatus::Infeasible { g.to_vec() } else { extract_reflection_vector(&anchor)? };
    Ok(PassiveState {
        penalty_residual: penalty_residual(&anchor),
        f: anchor,
        g: g_out,
        sca_iteration: iterations,
        objective_trace,
        penalty_trace,
        status,
    })
}

/// Stage 2 for fixed beams and power allocation.
#[allow(clippy::too_many_arguments)]
pub fn optimize_passive(
    channels: &ChannelSet,
    assignment: &ClusterAssignment,
    beams: &BeamformerSet,
    alphas: &[Pac],
    rhos: &[f64],
    g: &[f64],
    config: &ScenarioConfig,
    mode: Mode,
    enforce_qos: &[bool],
) -> Result<PassiveState> {
    let mut lifted = build_lifted_problem(channels, assignment, beams, alphas, rhos, g, config, mode, enforce_qos)?;
    optimize_lifted(&mut lifted, g, &PassiveSettings::from_config(config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{cn_matrix, cn_vector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_reflection_corner() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f = cn_vector(3, &mut rng);
        let b = cn_matrix(2, 3, &mut rng);
        let w = cn_vector(3, &mut rng);
        let lift = lift_user(&f, &b, &w).unwrap();
        let corner = outer(&lifted_vector(&[0.0, 0.0]));
        assert!((lift.gain(&corner) - lift.tau.norm_sqr()).abs() < 1e-14);
        assert!(crate::linalg::hermitian_defect(&lift.m) <= 1e-12);
    }

    #[test]
    fn penalty_examples() {
        let v = lifted_vector(&[0.3, 0.9]);
        let f = outer(&v);
        let (val, _) = rank1_penalty(&f, &f, 10.0).unwrap();
        assert!(val.abs() < 1e-12);
        let eye = CMatrix::identity(4, 4);
        assert!((penalty_residual(&eye) - 3.0).abs() < 1e-12);
        assert!(rank1_penalty(&f, &f, 0.0).is_err());
    }

    #[test]
    fn extraction_examples() {
        let f = outer(&lifted_vector(&[0.5]));
        assert!((extract_reflection_vector(&f).unwrap()[0] - 0.5).abs() < 1e-12);
        let f = outer(&lifted_vector(&[1.2]));
        assert_eq!(extract_reflection_vector(&f).unwrap(), vec![1.0]);
        let mut corner = CMatrix::zeros(2, 2);
        corner[(0, 0)] = C64::new(1.0, 0.0);
        assert!(matches!(extract_reflection_vector(&corner), Err(Error::ExtractionDegenerate(_))));
    }
}
