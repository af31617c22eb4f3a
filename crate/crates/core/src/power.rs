//! Stage-1 power allocation.
//!
//! For fixed beams and reflection amplitudes every cluster splits its power
//! between the near and far user. The split is found by a Dinkelbach outer
//! loop around an inner loop that alternates a quartic stationarity solve, the
//! complementary far-user share `α_f = 1 − α_n`, projected dual updates and a
//! refresh of the logarithmic SCA anchors.
//!
//! Symbols follow the usual notation: `ψ_n = P_k |v_n w_k|²`,
//! `ψ_f = P_k |v_f w_k|²`, `σ̄²_n = Φ_{n,1} + σ²`, `σ̄²_f = Φ_{f,1} + σ²` and
//! `ω₁ = γ₃` (relay SINR, constant here).

use std::f64::consts::LN_2;
use std::fmt;

use crate::beamforming::{beam_gain, BeamformerSet};
use crate::channel::ChannelSet;
use crate::clustering::ClusterAssignment;
use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::CVector;

/// `2 ln 2`, the constant `N` of the stationarity condition.
const TWO_LN2: f64 = 2.0 * LN_2;

/// Floor applied to SCA anchors.
pub const SCA_ANCHOR_FLOOR: f64 = 1e-9;

/// Whether the second (relaying) slot is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Cooperative,
    NonCooperative,
}

/// Power-allocation coefficients of one cluster.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pac {
    pub near: f64,
    pub far: f64,
}

impl Pac {
    pub const INITIAL: Pac = Pac { near: 0.2, far: 0.8 };
}

/// Effective channels of the scheduled users at a given `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveChannels {
    pub near: Vec<CVector>,
    pub far: Vec<CVector>,
}

impl EffectiveChannels {
    pub fn new(channels: &ChannelSet, assignment: &ClusterAssignment, g: &[f64]) -> Result<Self> {
        let near = assignment
            .clusters
            .iter()
            .map(|p| channels.effective(p.near, g))
            .collect::<Result<Vec<_>>>()?;
        let far = assignment
            .clusters
            .iter()
            .map(|p| channels.effective(p.far, g))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { near, far })
    }
}

/// Beamformed channel powers of one cluster with the other clusters' powers
/// frozen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterLink {
    /// |v_n w_k|².
    pub near_gain: f64,
    /// |v_f w_k|².
    pub far_gain: f64,
    /// Φ_{n,1} in W.
    pub near_ici: f64,
    /// Φ_{f,1} in W.
    pub far_ici: f64,
    /// Φ_{f,2} in W.
    pub relay_ici: f64,
    /// γ₃.
    pub relay_sinr: f64,
    pub w_norm_sq: f64,
}

/// Relay-slot SINR and its interference for cluster `k`.
pub fn relay_sinr(relay: &crate::CMatrix, k: usize, relay_power: f64, noise: f64) -> (f64, f64) {
    let ici: f64 = (0..relay.nrows())
        .filter(|&l| l != k)
        .map(|l| relay_power * relay[(l, k)].norm_sqr())
        .sum();
    (relay_power * relay[(k, k)].norm_sqr() / (ici + noise), ici)
}

/// Collects the powers entering cluster `k`'s SINRs.
pub fn cluster_link(
    effective: &EffectiveChannels,
    relay: &crate::CMatrix,
    k: usize,
    beams: &BeamformerSet,
    alphas: &[Pac],
    config: &ScenarioConfig,
    mode: Mode,
) -> ClusterLink {
    let w = &beams.beams[k];
    let mut near_ici = 0.0;
    let mut far_ici = 0.0;
    for (l, wl) in beams.beams.iter().enumerate() {
        if l == k {
            continue;
        }
        let p = config.cluster_power_w * (alphas[l].near + alphas[l].far);
        near_ici += beam_gain(&effective.near[k], wl).norm_sqr() * p;
        far_ici += beam_gain(&effective.far[k], wl).norm_sqr() * p;
    }
    let (relay_sinr, relay_ici) = match mode {
        Mode::Cooperative => relay_sinr(relay, k, config.relay_power_w, config.noise_power_w),
        Mode::NonCooperative => (0.0, 0.0),
    };
    ClusterLink {
        near_gain: beam_gain(&effective.near[k], w).norm_sqr(),
        far_gain: beam_gain(&effective.far[k], w).norm_sqr(),
        near_ici,
        far_ici,
        relay_ici,
        relay_sinr,
        w_norm_sq: w.norm_squared(),
    }
}

/// SINRs, rates and power of one cluster.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkMetrics {
    /// SINR at the near user when decoding the far user's message.
    pub gamma_nf: f64,
    /// Near-user SINR after SIC.
    pub gamma_1: f64,
    /// Far-user SINR in the direct slot.
    pub gamma_2: f64,
    /// Far-user SINR in the relay slot.
    pub gamma_3: f64,
    pub phi_n1: f64,
    pub phi_f1: f64,
    pub phi_f2: f64,
    /// bits/s/Hz.
    pub r1: f64,
    pub r2: f64,
    pub r_sum: f64,
    /// W.
    pub p_total: f64,
}

impl LinkMetrics {
    pub fn evaluate(link: &ClusterLink, alpha: Pac, config: &ScenarioConfig, mode: Mode) -> Self {
        let pk = config.cluster_power_w;
        let noise = config.noise_power_w;
        let s_n = pk * link.near_gain;
        let s_f = pk * link.far_gain;
        let gamma_nf = alpha.far * s_n / (alpha.near * s_n + link.near_ici + noise);
        let gamma_1 = alpha.near * s_n / (link.near_ici + noise);
        let gamma_2 = alpha.far * s_f / (alpha.near * s_f + link.far_ici + noise);
        let (gamma_3, relay_power) = match mode {
            Mode::Cooperative => (link.relay_sinr, config.relay_power_w),
            Mode::NonCooperative => (0.0, 0.0),
        };
        let r1 = 0.5 * (1.0 + gamma_1).log2();
        let r2 = match mode {
            Mode::Cooperative => 0.5 * (1.0 + gamma_nf).log2().min((1.0 + gamma_2 + gamma_3).log2()),
            Mode::NonCooperative => 0.5 * (1.0 + gamma_2).log2(),
        };
        let p_total = link.w_norm_sq * pk * (alpha.near + alpha.far) + relay_power + config.circuit_power_w;
        Self {
            gamma_nf,
            gamma_1,
            gamma_2,
            gamma_3,
            phi_n1: link.near_ici,
            phi_f1: link.far_ici,
            phi_f2: link.relay_ici,
            r1,
            r2,
            r_sum: r1 + r2,
            p_total,
        }
    }
}

/// Metrics of cluster `k` at reflection amplitudes `g`.
#[allow(clippy::too_many_arguments)]
pub fn compute_link_metrics(
    channels: &ChannelSet,
    assignment: &ClusterAssignment,
    k: usize,
    beams: &BeamformerSet,
    g: &[f64],
    alphas: &[Pac],
    config: &ScenarioConfig,
    mode: Mode,
) -> Result<LinkMetrics> {
    let eff = EffectiveChannels::new(channels, assignment, g)?;
    let link = cluster_link(&eff, &channels.relay, k, beams, alphas, config, mode);
    Ok(LinkMetrics::evaluate(&link, alphas[k], config, mode))
}

/// Constants of the bound `log₂(1+γ) ≥ ζ log₂ γ + Γ`, tight at the anchor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaTerm {
    pub zeta: f64,
    pub gamma: f64,
}

impl ScaTerm {
    pub fn lower_bound(&self, sinr: f64) -> f64 {
        self.zeta * sinr.log2() + self.gamma
    }
}

pub fn sca_constants(anchor: f64) -> Result<ScaTerm> {
    if !(anchor > 0.0) || !anchor.is_finite() {
        return Err(Error::invalid(format!("SCA anchor must be positive, got {anchor}")));
    }
    let zeta = anchor / (1.0 + anchor);
    Ok(ScaTerm { zeta, gamma: anchor.ln_1p() / LN_2 - zeta * anchor.log2() })
}

/// Inputs of the quartic stationarity polynomial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuarticContext {
    pub zeta_near: f64,
    pub zeta_far: f64,
    pub psi_n: f64,
    pub psi_f: f64,
    /// σ̄²_n.
    pub noise_n: f64,
    /// σ̄²_f.
    pub noise_f: f64,
    /// ω₁ = γ₃.
    pub omega: f64,
    /// Far-user share held fixed while solving for α_n.
    pub alpha_far: f64,
    /// φ₁ … φ₆.
    pub multipliers: [f64; 6],
    /// Dinkelbach parameter ϱ.
    pub rho: f64,
    pub cluster_power: f64,
    pub w_norm_sq: f64,
    pub min_sinr_far: f64,
    /// Added to μ; zero reproduces the plain stationarity condition.
    pub mu_shift: f64,
}

/// Intermediate quantities of the quartic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuarticTerms {
    pub n1: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub omega1: f64,
    pub omega2: f64,
    pub mu: f64,
}

impl QuarticContext {
    pub fn terms(&self) -> QuarticTerms {
        let [phi1, phi2, phi3, phi4, phi5, phi6] = self.multipliers;
        let vartheta1 = self.psi_n * self.psi_f;
        let vartheta2 = self.psi_n * self.noise_f + self.psi_f * self.noise_n;
        let pw = self.cluster_power * self.w_norm_sq;
        QuarticTerms {
            n1: self.omega * self.noise_f * self.noise_f * TWO_LN2,
            delta1: self.omega * self.psi_f * self.psi_f * TWO_LN2,
            delta2: 2.0 * self.psi_f * self.omega * self.noise_f * TWO_LN2
                + self.psi_f * self.psi_f * self.alpha_far * TWO_LN2,
            omega1: 2.0 * phi3 * vartheta1 * self.omega,
            omega2: phi3 * vartheta2 * self.omega,
            mu: phi1 * self.psi_n - self.rho * pw - phi2 * self.psi_f * (self.min_sinr_far - self.omega)
                - phi4 * self.psi_n
                - phi5 * pw
                - phi6
                + self.mu_shift,
        }
    }

    /// Stationarity residual before clearing denominators.
    pub fn residual(&self, alpha_near: f64) -> f64 {
        let t = self.terms();
        let denom = alpha_near * alpha_near * t.delta1 + alpha_near * t.delta2 + t.n1;
        self.zeta_near / (alpha_near * TWO_LN2)
            - self.psi_f * self.psi_f * self.zeta_far * self.alpha_far / denom
            - (alpha_near * t.omega1 + t.omega2)
            + t.mu
    }
}

/// Coefficients `[Ψ₄, Ψ₃, Ψ₂, Ψ₁, Ψ₀]` of the quartic in α_n.
pub fn quartic_coefficients(ctx: &QuarticContext) -> [f64; 5] {
    let t = ctx.terms();
    let n = TWO_LN2;
    let psi4 = -n * t.omega1 * t.delta1;
    let psi3 = n * t.mu * t.delta1 - n * t.omega2 * t.delta1 - n * t.omega1 * t.delta2;
    let psi2 = ctx.zeta_near * t.delta1 - n * t.n1 * t.omega1 - n * t.omega2 * t.delta2 + n * t.delta2 * t.mu;
    let psi1 = ctx.zeta_near * t.delta2 - n * ctx.psi_f * ctx.psi_f * ctx.alpha_far * ctx.zeta_far
        - n * t.n1 * t.omega2
        + n * t.n1 * t.mu;
    let psi0 = t.n1 * ctx.zeta_near;
    [psi4, psi3, psi2, psi1, psi0]
}

/// Evaluates `Σ c_i x^{4-i}`.
pub fn polyval(coeffs: &[f64; 5], x: f64) -> f64 {
    coeffs.iter().fold(0.0, |acc, c| acc * x + c)
}

fn polyder_val(coeffs: &[f64; 5], x: f64) -> f64 {
    let d = [4.0 * coeffs[0], 3.0 * coeffs[1], 2.0 * coeffs[2], coeffs[3]];
    d.iter().fold(0.0, |acc, c| acc * x + c)
}

fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().fold(0.0, |acc, c| acc * x + c)
}

fn derivative(coeffs: &[f64]) -> Vec<f64> {
    let d = coeffs.len() - 1;
    coeffs[..d].iter().enumerate().map(|(i, c)| c * (d - i) as f64).collect()
}

/// Roots of `coeffs` (highest degree first) in `[lo, hi]`. A critical point
/// where the polynomial is within `tol` of zero counts as a root.
fn real_roots(coeffs: &[f64], lo: f64, hi: f64, tol: f64) -> Vec<f64> {
    match coeffs.len() {
        0 | 1 => return Vec::new(),
        2 => {
            let x = -coeffs[1] / coeffs[0];
            return if x >= lo && x <= hi { vec![x] } else { Vec::new() };
        }
        _ => {}
    }
    let critical = real_roots(&derivative(coeffs), lo, hi, tol);
    let mut knots = vec![lo];
    knots.extend(critical.iter().copied());
    knots.push(hi);
    let mut out = Vec::new();
    for w in knots.windows(2) {
        let (mut a, mut b) = (w[0], w[1]);
        let (fa, fb) = (horner(coeffs, a), horner(coeffs, b));
        if fa == 0.0 {
            out.push(a);
        } else if fb != 0.0 && fa.signum() != fb.signum() {
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if m <= a || m >= b {
                    break;
                }
                if horner(coeffs, m).signum() == fa.signum() {
                    a = m;
                } else {
                    b = m;
                }
            }
            out.push(0.5 * (a + b));
        }
    }
    if horner(coeffs, hi) == 0.0 {
        out.push(hi);
    }
    out.extend(critical.into_iter().filter(|&c| horner(coeffs, c).abs() <= tol));
    out
}

fn polish(coeffs: &[f64; 5], mut x: f64) -> f64 {
    for _ in 0..50 {
        let p = polyval(coeffs, x);
        let dp = polyder_val(coeffs, x);
        if p == 0.0 || dp == 0.0 || !dp.is_finite() {
            break;
        }
        let next = x - p / dp;
        if !(polyval(coeffs, next).abs() < p.abs()) {
            break;
        }
        x = next;
    }
    x
}

/// Real roots in (0, 1), ascending. Roots are isolated between the critical
/// points of the polynomial, found recursively from its derivatives, then
/// bisected and Newton-polished.
pub fn solve_quartic(coeffs: &[f64; 5]) -> Result<Vec<f64>> {
    let scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if scale == 0.0 {
        return Err(Error::DegeneratePolynomial);
    }
    let lead = coeffs.iter().position(|&c| c != 0.0).expect("nonzero coefficient exists");
    if lead == 4 {
        return Ok(Vec::new());
    }
    let tol = 1e-8 * scale;
    let mut roots: Vec<f64> = real_roots(&coeffs[lead..], 0.0, 1.0, tol)
        .into_iter()
        .map(|x| polish(coeffs, x))
        .filter(|&x| x > 0.0 && x < 1.0 && polyval(coeffs, x).abs() <= tol)
        .collect();
    roots.sort_by(f64::total_cmp);
    // A root of multiplicity m is only resolved to about ε^(1/m); merge such
    // clusters and keep the member with the smallest residual.
    let mut merged: Vec<f64> = Vec::with_capacity(roots.len());
    for r in roots {
        match merged.last_mut() {
            Some(last) if r - *last <= 1e-3 => {
                if polyval(coeffs, r).abs() < polyval(coeffs, *last).abs() {
                    *last = r;
                }
            }
            _ => merged.push(r),
        }
    }
    Ok(merged)
}

/// One projected sub-gradient step `φ ← [φ + t · r]⁺`.
pub fn dual_subgradient_step(multipliers: &[f64; 6], residuals: &[f64; 6], steps: &[f64; 6]) -> Result<[f64; 6]> {
    if let Some(s) = steps.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::invalid(format!("dual step must be positive, got {s}")));
    }
    let mut out = [0.0; 6];
    for i in 0..6 {
        out[i] = (multipliers[i] + steps[i] * residuals[i]).max(0.0);
    }
    Ok(out)
}

/// Constraint rows of the per-cluster power-allocation problem, in
/// multiplier order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PacConstraint {
    NearQos,
    FarQos,
    Cooperation,
    SicGap,
    PowerBudget,
    PacSum,
}

impl PacConstraint {
    pub const ALL: [PacConstraint; 6] = [
        PacConstraint::NearQos,
        PacConstraint::FarQos,
        PacConstraint::Cooperation,
        PacConstraint::SicGap,
        PacConstraint::PowerBudget,
        PacConstraint::PacSum,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for PacConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PacConstraint::NearQos => "near-qos",
            PacConstraint::FarQos => "far-qos",
            PacConstraint::Cooperation => "cooperation",
            PacConstraint::SicGap => "sic-gap",
            PacConstraint::PowerBudget => "power-budget",
            PacConstraint::PacSum => "pac-sum",
        })
    }
}

/// Per-cluster power-allocation problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacProblem {
    pub link: ClusterLink,
    pub cluster_power: f64,
    pub max_power: f64,
    pub relay_power: f64,
    pub circuit_power: f64,
    pub sic_gap: f64,
    pub noise: f64,
    pub min_sinr_near: f64,
    pub min_sinr_far: f64,
    pub mode: Mode,
    /// When false the two QoS rows are dropped.
    pub enforce_qos: bool,
}

/// Unit-norm beams give ‖w‖² = 1 only to rounding, so the budget row gets a
/// relative allowance.
const BUDGET_RTOL: f64 = 1e-9;

/// `q2 a² + q1 a + q0 ≥ 0` with `q2 ≤ 0`.
#[derive(Debug, Clone, Copy)]
struct ConcaveRow {
    q2: f64,
    q1: f64,
    q0: f64,
}

impl ConcaveRow {
    fn slope(&self, a: f64) -> f64 {
        2.0 * self.q2 * a + self.q1
    }

    /// Closed interval where the row holds, `None` if empty.
    fn superlevel(&self) -> Option<(f64, f64)> {
        let ConcaveRow { q2, q1, q0 } = *self;
        if q2 == 0.0 {
            return if q1 > 0.0 {
                Some((-q0 / q1, f64::INFINITY))
            } else if q1 < 0.0 {
                Some((f64::NEG_INFINITY, -q0 / q1))
            } else if q0 >= 0.0 {
                Some((f64::NEG_INFINITY, f64::INFINITY))
            } else {
                None
            };
        }
        let disc = q1 * q1 - 4.0 * q2 * q0;
        if disc < 0.0 {
            return None;
        }
        let s = disc.sqrt();
        let qq = -0.5 * (q1 + q1.signum() * s);
        let (r1, r2) = if qq == 0.0 { (0.0, 0.0) } else { (qq / q2, q0 / qq) };
        Some((r1.min(r2), r1.max(r2)))
    }
}

/// Feasible range of α_n with α_f = 1 − α_n.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibleRange {
    pub lo: f64,
    pub hi: f64,
    pub lo_constraint: Option<PacConstraint>,
    pub hi_constraint: Option<PacConstraint>,
}

impl PacProblem {
    pub fn from_config(link: ClusterLink, config: &ScenarioConfig, mode: Mode, enforce_qos: bool) -> Self {
        Self {
            link,
            cluster_power: config.cluster_power_w,
            max_power: config.max_power_w,
            relay_power: config.relay_power_w,
            circuit_power: config.circuit_power_w,
            sic_gap: config.sic_gap(),
            noise: config.noise_power_w,
            min_sinr_near: config.min_sinr_near,
            min_sinr_far: config.min_sinr_far,
            mode,
            enforce_qos,
        }
    }

    pub fn psi_n(&self) -> f64 {
        self.cluster_power * self.link.near_gain
    }

    pub fn psi_f(&self) -> f64 {
        self.cluster_power * self.link.far_gain
    }

    pub fn noise_n(&self) -> f64 {
        self.link.near_ici + self.noise
    }

    pub fn noise_f(&self) -> f64 {
        self.link.far_ici + self.noise
    }

    pub fn omega(&self) -> f64 {
        match self.mode {
            Mode::Cooperative => self.link.relay_sinr,
            Mode::NonCooperative => 0.0,
        }
    }

    /// P_T, independent of α_n once α_n + α_f = 1.
    pub fn total_power(&self, alpha: Pac) -> f64 {
        let relay = match self.mode {
            Mode::Cooperative => self.relay_power,
            Mode::NonCooperative => 0.0,
        };
        self.link.w_norm_sq * self.cluster_power * (alpha.near + alpha.far) + relay + self.circuit_power
    }

    /// Near SINR after SIC.
    pub fn gamma_near(&self, a: f64) -> f64 {
        a * self.psi_n() / self.noise_n()
    }

    /// Far-user SINR entering the rate: γ₂ + γ₃ (γ₂ without relaying).
    pub fn gamma_far(&self, alpha: Pac) -> f64 {
        alpha.far * self.psi_f() / (alpha.near * self.psi_f() + self.noise_f()) + self.omega()
    }

    /// Rate with the cooperation row satisfied.
    pub fn rate(&self, alpha: Pac) -> f64 {
        0.5 * (1.0 + self.gamma_near(alpha.near)).log2() + 0.5 * (1.0 + self.gamma_far(alpha)).log2()
    }

    /// Constraint slacks, each ≥ 0 when satisfied.
    pub fn slacks(&self, alpha: Pac) -> [f64; 6] {
        let (pn, pf, sn, sf, om) = (self.psi_n(), self.psi_f(), self.noise_n(), self.noise_f(), self.omega());
        let pw = self.link.w_norm_sq * self.cluster_power;
        let (an, af) = (alpha.near, alpha.far);
        [
            an * pn - sn * self.min_sinr_near,
            af * pf - (self.min_sinr_far - om) * (an * pf + sf),
            af * (pn * sf - pf * sn) - om * (an * an * pn * pf + an * (pn * sf + pf * sn) + sn * sf),
            self.link.w_norm_sq * pn * (af - an) - self.sic_gap,
            self.max_power * (1.0 + BUDGET_RTOL) - pw * (an + af),
            1.0 - (an + af),
        ]
    }

    /// Worst violation of the enforced rows, relative to the magnitude of
    /// their terms; 0 when all hold.
    pub fn relative_violation(&self, alpha: Pac) -> f64 {
        let slacks = self.slacks(alpha);
        let a = alpha.near;
        self.active_rows()
            .into_iter()
            .map(|c| {
                let row = self.row(c);
                let floor = match c {
                    PacConstraint::PowerBudget => self.max_power,
                    PacConstraint::PacSum => 1.0,
                    _ => 0.0,
                };
                let scale = (row.q2.abs() * a * a + row.q1.abs() * a + row.q0.abs()).max(floor);
                let s = slacks[c.index()];
                if s >= 0.0 {
                    0.0
                } else {
                    -s / scale.max(f64::MIN_POSITIVE)
                }
            })
            .fold(0.0, f64::max)
    }

    fn active_rows(&self) -> Vec<PacConstraint> {
        let mut rows = Vec::new();
        if self.enforce_qos {
            rows.push(PacConstraint::NearQos);
            rows.push(PacConstraint::FarQos);
        }
        if self.mode == Mode::Cooperative {
            rows.push(PacConstraint::Cooperation);
        }
        rows.extend([PacConstraint::SicGap, PacConstraint::PowerBudget, PacConstraint::PacSum]);
        rows
    }

    /// Row as a function of α_n under α_f = 1 − α_n.
    fn row(&self, c: PacConstraint) -> ConcaveRow {
        let (pn, pf, sn, sf, om) = (self.psi_n(), self.psi_f(), self.noise_n(), self.noise_f(), self.omega());
        let pw = self.link.w_norm_sq * self.cluster_power;
        match c {
            PacConstraint::NearQos => ConcaveRow { q2: 0.0, q1: pn, q0: -sn * self.min_sinr_near },
            PacConstraint::FarQos => {
                let excess = self.min_sinr_far - om;
                ConcaveRow { q2: 0.0, q1: -pf - excess * pf, q0: pf - excess * sf }
            }
            PacConstraint::Cooperation => {
                let a = pn * sf - pf * sn;
                ConcaveRow { q2: -om * pn * pf, q1: -a - om * (pn * sf + pf * sn), q0: a - om * sn * sf }
            }
            PacConstraint::SicGap => ConcaveRow {
                q2: 0.0,
                q1: -2.0 * self.link.w_norm_sq * pn,
                q0: self.link.w_norm_sq * pn - self.sic_gap,
            },
            PacConstraint::PowerBudget => ConcaveRow { q2: 0.0, q1: 0.0, q0: self.max_power * (1.0 + BUDGET_RTOL) - pw },
            PacConstraint::PacSum => ConcaveRow { q2: 0.0, q1: 0.0, q0: 0.0 },
        }
    }

    /// Intersection of all active rows with (0, 1); reports the first row
    /// that empties it.
    pub fn feasible_range(&self) -> std::result::Result<FeasibleRange, PacConstraint> {
        let mut range = FeasibleRange { lo: 0.0, hi: 1.0, lo_constraint: None, hi_constraint: None };
        for c in self.active_rows() {
            let (lo, hi) = self.row(c).superlevel().ok_or(c)?;
            if lo > range.lo {
                range.lo = lo;
                range.lo_constraint = Some(c);
            }
            if hi < range.hi {
                range.hi = hi;
                range.hi_constraint = Some(c);
            }
            if range.lo > range.hi || range.hi <= 0.0 || range.lo >= 1.0 {
                return Err(c);
            }
        }
        // log γ₁ needs α_n > 0.
        range.lo = range.lo.max(1e-12);
        if range.lo > range.hi {
            return Err(range.hi_constraint.unwrap_or(PacConstraint::SicGap));
        }
        Ok(range)
    }

    fn split(a: f64) -> Pac {
        Pac { near: a, far: 1.0 - a }
    }

    fn anchors(&self, a: f64) -> Result<(ScaTerm, ScaTerm)> {
        let alpha = Self::split(a);
        Ok((
            sca_constants(self.gamma_near(a).max(SCA_ANCHOR_FLOOR))?,
            sca_constants(self.gamma_far(alpha).max(SCA_ANCHOR_FLOOR))?,
        ))
    }

    /// Surrogate rate at `a` with SCA constants fixed.
    fn surrogate_rate(&self, a: f64, near: &ScaTerm, far: &ScaTerm) -> f64 {
        let alpha = Self::split(a);
        0.5 * near.lower_bound(self.gamma_near(a)) + 0.5 * far.lower_bound(self.gamma_far(alpha))
    }

    /// d/dα_n of the surrogate rate along α_f = 1 − α_n.
    fn surrogate_slope(&self, a: f64, near: &ScaTerm, far: &ScaTerm) -> f64 {
        let (pf, sf) = (self.psi_f(), self.noise_f());
        let denom = a * pf + sf;
        let d_gamma2 = -pf * (pf + sf) / (denom * denom);
        near.zeta / (TWO_LN2 * a) + far.zeta / TWO_LN2 * d_gamma2 / self.gamma_far(Self::split(a))
    }

    fn lagrangian_slope(&self, a: f64, near: &ScaTerm, far: &ScaTerm, phi: &[f64; 6]) -> f64 {
        let mut s = self.surrogate_slope(a, near, far);
        for c in self.active_rows() {
            s += phi[c.index()] * self.row(c).slope(a);
        }
        s
    }

    fn lagrangian(&self, a: f64, near: &ScaTerm, far: &ScaTerm, phi: &[f64; 6], rho: f64) -> f64 {
        let alpha = Self::split(a);
        let slacks = self.slacks(alpha);
        let mut l = self.surrogate_rate(a, near, far) - rho * self.total_power(alpha);
        for c in self.active_rows() {
            l += phi[c.index()] * slacks[c.index()];
        }
        l
    }

    fn quartic_context(&self, a: f64, near: &ScaTerm, far: &ScaTerm, phi: &[f64; 6], rho: f64) -> QuarticContext {
        let mut ctx = QuarticContext {
            zeta_near: near.zeta,
            zeta_far: far.zeta,
            psi_n: self.psi_n(),
            psi_f: self.psi_f(),
            noise_n: self.noise_n(),
            noise_f: self.noise_f(),
            omega: self.omega(),
            alpha_far: 1.0 - a,
            multipliers: *phi,
            rho,
            cluster_power: self.cluster_power,
            w_norm_sq: self.link.w_norm_sq,
            min_sinr_far: self.min_sinr_far,
            mu_shift: 0.0,
        };
        // The plain condition differentiates in α_n with α_f frozen and drops
        // one denominator term; shift μ so the model matches the exact slope
        // along α_f = 1 − α_n at the current iterate.
        ctx.mu_shift = self.lagrangian_slope(a, near, far, phi) - ctx.residual(a);
        ctx
    }
}

/// Iteration settings of [`dinkelbach_pac`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacSettings {
    pub dinkelbach_tolerance: f64,
    pub dinkelbach_max_iterations: usize,
    pub max_inner_iterations: usize,
    pub dual_step: f64,
}

impl PacSettings {
    pub fn from_config(config: &ScenarioConfig) -> Self {
        let a = &config.algorithm;
        Self {
            dinkelbach_tolerance: a.dinkelbach_tolerance,
            dinkelbach_max_iterations: a.dinkelbach_max_iterations,
            max_inner_iterations: a.pac_max_iterations,
            dual_step: a.dual_step,
        }
    }
}

impl Default for PacSettings {
    fn default() -> Self {
        Self::from_config(&ScenarioConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PacSolution {
    pub alpha: Pac,
    /// Final Dinkelbach parameter ϱ* (bits/s/Hz per W).
    pub rho: f64,
    /// Dinkelbach sequence, one entry per outer iteration.
    pub rho_history: Vec<f64>,
    /// R̄ − ϱ* P_T at the returned point.
    pub upsilon: f64,
    /// φ₁ … φ₆ at the returned point.
    pub multipliers: [f64; 6],
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    /// |p(α_n)| / max|coeff| of the final quartic.
    pub quartic_residual: f64,
    /// Row binding at the returned point, if any.
    pub active: Option<PacConstraint>,
    pub rate: f64,
    pub total_power: f64,
}

impl PacSolution {
    pub fn energy_efficiency(&self) -> f64 {
        self.rate / self.total_power
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PacError {
    Infeasible(PacConstraint),
    NonConvergence(Box<PacSolution>),
}

impl fmt::Display for PacError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PacError::Infeasible(c) => write!(f, "{c} cannot be met"),
            PacError::NonConvergence(best) => {
                write!(f, "no convergence after {} inner iterations", best.inner_iterations)
            }
        }
    }
}

struct InnerOutcome {
    a: f64,
    phi: [f64; 6],
    iterations: usize,
    converged: bool,
}

fn inner_solve(
    problem: &PacProblem,
    range: &FeasibleRange,
    start: f64,
    rho: f64,
    phi0: [f64; 6],
    settings: &PacSettings,
) -> Result<InnerOutcome> {
    let mut a = start;
    let mut phi = phi0;
    for t in 1..=settings.max_inner_iterations {
        let (near, far) = problem.anchors(a)?;
        let ctx = problem.quartic_context(a, &near, &far, &phi, rho);
        let coeffs = quartic_coefficients(&ctx);
        let roots = match solve_quartic(&coeffs) {
            Ok(r) => r,
            Err(Error::DegeneratePolynomial) => Vec::new(),
            Err(e) => return Err(e),
        };
        let objective = |x: f64| problem.lagrangian(x, &near, &far, &phi, rho);
        let feasible: Vec<f64> = roots.iter().copied().filter(|r| *r >= range.lo && *r <= range.hi).collect();
        let target = if let Some(best) = feasible.into_iter().max_by(|x, y| objective(*x).total_cmp(&objective(*y))) {
            best
        } else if let Some(nearest) = roots.iter().copied().min_by(|x, y| (x - a).abs().total_cmp(&(y - a).abs())) {
            nearest.clamp(range.lo, range.hi)
        } else if problem.lagrangian_slope(a, &near, &far, &phi) > 0.0 {
            range.hi
        } else {
            range.lo
        };
        // Without relaying the quartic degenerates and its root can lie
        // downhill or on the iterate itself; follow the exact slope instead.
        let slope = problem.lagrangian_slope(a, &near, &far, &phi);
        let target = if slope != 0.0 && (target - a) * slope <= 0.0 {
            if slope > 0.0 {
                range.hi
            } else {
                range.lo
            }
        } else {
            target
        };
        let base = objective(a);
        let mut next = a;
        let mut step = 1.0;
        while step > 1e-8 {
            let candidate = a + step * (target - a);
            if objective(candidate) >= base {
                next = candidate;
                break;
            }
            step *= 0.5;
        }
        // Projected dual descent: rows with positive slack drive φ to zero.
        let slacks = problem.slacks(PacProblem::split(next));
        let mut residuals = [0.0; 6];
        for c in problem.active_rows() {
            residuals[c.index()] = -slacks[c.index()];
        }
        let step_size = settings.dual_step / (t as f64).sqrt();
        phi = dual_subgradient_step(&phi, &residuals, &[step_size; 6])?;
        let moved = (next - a).abs();
        a = next;
        if moved <= 1e-13 * a.max(1e-3) {
            return Ok(InnerOutcome { a, phi, iterations: t, converged: true });
        }
    }
    Ok(InnerOutcome { a, phi, iterations: settings.max_inner_iterations, converged: false })
}

/// Multipliers satisfying stationarity at `a`: zero in the interior, the
/// binding row's multiplier on the boundary.
fn kkt_multipliers(problem: &PacProblem, range: &FeasibleRange, a: f64, near: &ScaTerm, far: &ScaTerm) -> ([f64; 6], Option<PacConstraint>) {
    let mut phi = [0.0; 6];
    let slope = problem.surrogate_slope(a, near, far);
    let at_hi = (a - range.hi).abs() <= 1e-10 * range.hi.max(1e-12);
    let at_lo = (a - range.lo).abs() <= 1e-10 * range.lo.max(1e-12);
    let binding = if at_hi && slope > 0.0 {
        range.hi_constraint
    } else if at_lo && slope < 0.0 {
        range.lo_constraint
    } else {
        None
    };
    if let Some(c) = binding {
        let row_slope = problem.row(c).slope(a);
        if row_slope != 0.0 {
            phi[c.index()] = (-slope / row_slope).max(0.0);
        }
    }
    (phi, binding)
}

/// Dinkelbach power allocation for one cluster.
pub fn dinkelbach_pac(problem: &PacProblem, settings: &PacSettings) -> std::result::Result<PacSolution, PacError> {
    let range = problem.feasible_range().map_err(PacError::Infeasible)?;
    let mut a = Pac::INITIAL.near.clamp(range.lo, range.hi);
    let p_total = problem.total_power(PacProblem::split(a));
    let mut rho = problem.rate(PacProblem::split(a)) / p_total;
    let mut rho_history = vec![rho];
    let mut phi = [0.0; 6];
    let mut inner_total = 0;
    let mut converged = false;
    let mut outer = 0;
    let mut upsilon = f64::NAN;
    while outer < settings.dinkelbach_max_iterations {
        outer += 1;
        let out = inner_solve(problem, &range, a, rho, phi, settings).map_err(|_| PacError::Infeasible(PacConstraint::NearQos))?;
        inner_total += out.iterations;
        a = out.a;
        phi = out.phi;
        let rate = problem.rate(PacProblem::split(a));
        upsilon = rate - rho * p_total;
        if !out.converged {
            break;
        }
        if upsilon.abs() < settings.dinkelbach_tolerance {
            converged = true;
            break;
        }
        rho = rate / p_total;
        rho_history.push(rho);
    }

    // Snap to the nearest quartic root and recover boundary multipliers.
    let (near, far) = problem.anchors(a).expect("anchors are floored");
    let (kkt_phi, active) = kkt_multipliers(problem, &range, a, &near, &far);
    let ctx = problem.quartic_context(a, &near, &far, &kkt_phi, rho);
    let coeffs = quartic_coefficients(&ctx);
    if let Ok(roots) = solve_quartic(&coeffs) {
        if let Some(r) = roots.iter().copied().min_by(|x, y| (x - a).abs().total_cmp(&(y - a).abs())) {
            if (r - a).abs() <= 1e-9 && r >= range.lo && r <= range.hi {
                a = r;
            }
        }
    }
    let scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let quartic_residual = if scale > 0.0 { polyval(&coeffs, a).abs() / scale } else { 0.0 };
    let alpha = PacProblem::split(a);
    let rate = problem.rate(alpha);
    let solution = PacSolution {
        alpha,
        rho,
        rho_history,
        upsilon,
        multipliers: kkt_phi,
        outer_iterations: outer,
        inner_iterations: inner_total,
        quartic_residual,
        active,
        rate,
        total_power: p_total,
    };
    if converged {
        Ok(solution)
    } else {
        Err(PacError::NonConvergence(Box::new(solution)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_link() -> ClusterLink {
        ClusterLink {
            near_gain: 4.0,
            far_gain: 1.0,
            near_ici: 0.0,
            far_ici: 0.0,
            relay_ici: 0.0,
            relay_sinr: 0.0,
            w_norm_sq: 1.0,
        }
    }

    #[test]
    fn hand_built_scalar_case() {
        let cfg = ScenarioConfig { noise_power_w: 1.0, cluster_power_w: 1.0, ..Default::default() };
        let m = LinkMetrics::evaluate(&toy_link(), Pac { near: 0.2, far: 0.8 }, &cfg, Mode::Cooperative);
        assert!((m.gamma_nf - 3.2 / 1.8).abs() < 1e-12);
        assert!((m.gamma_1 - 0.8).abs() < 1e-12);
        assert!((m.gamma_2 - 0.8 / 1.2).abs() < 1e-12);
        assert!((m.r_sum - m.r1 - m.r2).abs() < 1e-15);
        assert!((m.p_total - (1.0 + cfg.relay_power_w + cfg.circuit_power_w)).abs() < 1e-12);
    }

    #[test]
    fn no_far_power_zeroes_far_sinrs() {
        let cfg = ScenarioConfig::default();
        let m = LinkMetrics::evaluate(&toy_link(), Pac { near: 0.3, far: 0.0 }, &cfg, Mode::Cooperative);
        assert_eq!(m.gamma_nf, 0.0);
        assert_eq!(m.gamma_2, 0.0);
    }

    #[test]
    fn zero_relay_power_zeroes_relay_terms() {
        let relay = crate::CMatrix::from_element(3, 3, crate::C64::new(0.7, -0.2));
        let (sinr, ici) = relay_sinr(&relay, 1, 0.0, 1e-3);
        assert_eq!(sinr, 0.0);
        assert_eq!(ici, 0.0);
    }

    #[test]
    fn sca_constants_at_unit_anchor() {
        let t = sca_constants(1.0).unwrap();
        assert!((t.zeta - 0.5).abs() < 1e-15);
        assert!((t.gamma - 1.0).abs() < 1e-15);
        assert!(sca_constants(0.0).is_err());
        assert!(sca_constants(-1.0).is_err());
        assert!(sca_constants(1e12).unwrap().zeta > 1.0 - 1e-11);
    }

    #[test]
    fn sca_bound_tight_at_anchor() {
        for &g0 in &[1e-6, 0.3, 1.0, 7.5, 1e5] {
            let t = sca_constants(g0).unwrap();
            assert!((t.lower_bound(g0) - (1.0 + g0).log2()).abs() < 1e-12 * (1.0 + g0).log2().max(1.0));
        }
    }

    #[test]
    fn degenerate_quartic_without_relay_or_duals() {
        let ctx = QuarticContext {
            zeta_near: 0.9,
            zeta_far: 0.4,
            psi_n: 3.0,
            psi_f: 1.2,
            noise_n: 1e-3,
            noise_f: 0.5,
            omega: 0.0,
            alpha_far: 0.7,
            multipliers: [0.1, 0.2, 0.0, 0.3, 0.0, 0.1],
            rho: 2.0,
            cluster_power: 1.0,
            w_norm_sq: 1.0,
            min_sinr_far: 2.0,
            mu_shift: 0.0,
        };
        let c = quartic_coefficients(&ctx);
        assert_eq!(c[0], 0.0);
        assert_eq!(c[4], 0.0);
        assert!(c.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn quartic_roots_in_unit_interval() {
        // (x - 0.2)(x - 0.9)(x² + 1) = x⁴ - 1.1x³ + 1.18x² - 1.1x + 0.18
        let roots = solve_quartic(&[1.0, -1.1, 1.18, -1.1, 0.18]).unwrap();
        assert_eq!(roots.len(), 2);
        assert!((roots[0] - 0.2).abs() < 1e-12 && (roots[1] - 0.9).abs() < 1e-12);
        // (x - 0.5)⁴
        let roots = solve_quartic(&[1.0, -2.0, 1.5, -0.5, 0.0625]).unwrap();
        assert_eq!(roots.len(), 1);
        assert!((roots[0] - 0.5).abs() < 1e-3);
        // (x - 2)(x - 3)(x² + 1) = x⁴ - 5x³ + 7x² - 5x + 6
        assert!(solve_quartic(&[1.0, -5.0, 7.0, -5.0, 6.0]).unwrap().is_empty());
        assert!(matches!(solve_quartic(&[0.0; 5]), Err(Error::DegeneratePolynomial)));
        // Lower degree: 2x - 1.
        assert_eq!(solve_quartic(&[0.0, 0.0, 0.0, 2.0, -1.0]).unwrap(), vec![0.5]);
    }

    #[test]
    fn dual_step_projection() {
        let phi = [0.1, 0.5, 0.0, 2.0, 0.0, 1.0];
        let out = dual_subgradient_step(&phi, &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0], &[0.3; 6]).unwrap();
        assert_eq!(out, phi);
        let out = dual_subgradient_step(&[0.1; 6], &[-0.5; 6], &[1.0; 6]).unwrap();
        assert_eq!(out, [0.0; 6]);
        assert!(dual_subgradient_step(&phi, &[0.0; 6], &[0.0; 6]).is_err());
    }

    #[test]
    fn infeasible_far_qos_is_reported() {
        let cfg = ScenarioConfig::default();
        let link = ClusterLink { near_gain: 5.0, far_gain: 1.0, near_ici: 0.0, far_ici: 3.0, relay_ici: 0.04, relay_sinr: 0.25, w_norm_sq: 1.0 };
        let p = PacProblem::from_config(link, &cfg, Mode::Cooperative, true);
        assert_eq!(p.feasible_range(), Err(PacConstraint::FarQos));
        assert_eq!(dinkelbach_pac(&p, &PacSettings::default()), Err(PacError::Infeasible(PacConstraint::FarQos)));
        let relaxed = PacProblem { enforce_qos: false, ..p };
        assert!(relaxed.feasible_range().is_ok());
    }
}
