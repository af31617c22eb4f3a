//! Brute-force oracles and fixtures shared by the integration tests and the
//! acceptance run. Everything here is written out from the model directly
//! and only calls the library for plumbing.
#![allow(dead_code)]

use ambsc_core::beamforming::{beam_gain, BeamformerSet};
use ambsc_core::config::{QosPolicy, ScenarioConfig};
use ambsc_core::linalg::{outer, trace_product};
use ambsc_core::passive::{
    build_lifted_problem, lift_user, lifted_vector, ClusterSurrogate, LiftedProblem,
};
use ambsc_core::pipeline::{sample_realization, Mode, Realization};
use ambsc_core::power::{ClusterLink, EffectiveChannels, Pac, PacProblem, ScaTerm};
use ambsc_core::psd::{ConeProblem, SolveSettings, SolveStatus};
use ambsc_core::{CMatrix, CVector, C64};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn re(x: f64) -> C64 {
    C64::new(x, 0.0)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Default scenario except that infeasible QoS rows are dropped, so the
/// solvers have something to work on.
pub fn best_effort(bst_antennas: usize) -> ScenarioConfig {
    ScenarioConfig { bst_antennas, qos_policy: QosPolicy::BestEffort, ..ScenarioConfig::default() }
}

// ---------------------------------------------------------------- stage 1

/// Single cluster without interference.
pub fn toy_pac(near_gain: f64, far_gain: f64, omega: f64, mode: Mode) -> PacProblem {
    PacProblem {
        link: ClusterLink {
            near_gain,
            far_gain,
            near_ici: 0.0,
            far_ici: 0.0,
            relay_ici: 0.0,
            relay_sinr: omega,
            w_norm_sq: 1.0,
        },
        cluster_power: 1.0,
        max_power: 1.0,
        relay_power: 0.01,
        circuit_power: 0.1,
        sic_gap: 0.05,
        noise: 1.0,
        min_sinr_near: 0.5,
        min_sinr_far: 0.5,
        mode,
        enforce_qos: true,
    }
}

/// Rate and total power at α_n with α_f = 1 − α_n, or `None` when a row of
/// the problem is violated.
pub fn pac_point(p: &PacProblem, a: f64) -> Option<(f64, f64)> {
    let af = 1.0 - a;
    let l = &p.link;
    let pn = p.cluster_power * l.near_gain;
    let pf = p.cluster_power * l.far_gain;
    let sn = l.near_ici + p.noise;
    let sf = l.far_ici + p.noise;
    let coop = p.mode == Mode::Cooperative;
    let g1 = a * pn / sn;
    let g2 = af * pf / (a * pf + sf);
    let g3 = if coop { l.relay_sinr } else { 0.0 };
    let gnf = af * pn / (a * pn + sn);
    // Rows are compared with a relative allowance of 1e-12 so that points on
    // a boundary count as feasible.
    let ge = |x: f64, y: f64| x >= y - 1e-12 * x.abs().max(y.abs());
    let feasible = (!p.enforce_qos || (ge(g1, p.min_sinr_near) && ge(g2 + g3, p.min_sinr_far)))
        && (!coop || ge(gnf, g2 + g3))
        && ge(l.w_norm_sq * pn * (af - a), p.sic_gap)
        && ge(p.max_power, l.w_norm_sq * p.cluster_power);
    if !feasible {
        return None;
    }
    let far = if coop { (1.0 + gnf).log2().min((1.0 + g2 + g3).log2()) } else { (1.0 + g2).log2() };
    let rate = 0.5 * (1.0 + g1).log2() + 0.5 * far;
    let power = l.w_norm_sq * p.cluster_power + if coop { p.relay_power } else { 0.0 } + p.circuit_power;
    Some((rate, power))
}

/// Best rate/power over α_n ∈ {step, 2 step, …} below 1.
pub fn pac_grid(p: &PacProblem, step: f64) -> Option<(f64, f64)> {
    let count = (1.0 / step).round() as usize;
    (1..count)
        .map(|i| i as f64 * step)
        .filter_map(|a| pac_point(p, a).map(|(r, pw)| (a, r / pw)))
        .max_by(|x, y| x.1.total_cmp(&y.1))
}

/// Stationarity residual of the quartic's Lagrangian, cleared of its
/// denominators, written out term by term.
pub fn cleared_stationarity(ctx: &ambsc_core::power::QuarticContext, a: f64) -> f64 {
    let n = 2.0 * std::f64::consts::LN_2;
    let [phi1, phi2, phi3, phi4, phi5, phi6] = ctx.multipliers;
    let pw = ctx.cluster_power * ctx.w_norm_sq;
    let d = ctx.omega * ctx.psi_f * ctx.psi_f * n * a * a
        + (2.0 * ctx.psi_f * ctx.omega * ctx.noise_f + ctx.psi_f * ctx.psi_f * ctx.alpha_far) * n * a
        + ctx.omega * ctx.noise_f * ctx.noise_f * n;
    let coop = phi3 * ctx.omega * (2.0 * ctx.psi_n * ctx.psi_f * a + ctx.psi_n * ctx.noise_f + ctx.psi_f * ctx.noise_n);
    let mu = phi1 * ctx.psi_n - ctx.rho * pw - phi2 * ctx.psi_f * (ctx.min_sinr_far - ctx.omega) - phi4 * ctx.psi_n
        - phi5 * pw
        - phi6
        + ctx.mu_shift;
    // a·N·D · (ζ₁/(aN) − ψ_f² ζ₂ α_f / D − coop + μ)
    ctx.zeta_near * d - a * n * ctx.psi_f * ctx.psi_f * ctx.zeta_far * ctx.alpha_far + a * n * d * (mu - coop)
}

// ---------------------------------------------------------------- stage 2

/// Stage-1 style inputs on a sampled realization: ZF beams at all-ones
/// amplitudes and a fixed split.
pub struct StageInputs {
    pub config: ScenarioConfig,
    pub real: Realization,
    pub beams: BeamformerSet,
    pub alphas: Vec<Pac>,
}

pub fn stage_inputs(seed: u64, bst_antennas: usize) -> StageInputs {
    let config = best_effort(bst_antennas);
    let real = sample_realization(&config, &mut rng(seed)).expect("realization");
    let g = vec![1.0; bst_antennas];
    let eff = EffectiveChannels::new(&real.channels, &real.assignment, &g).expect("effective channels");
    let beams = BeamformerSet::zero_forcing(&eff.near, config.algorithm.null_space_threshold).expect("zf");
    let alphas = vec![Pac { near: 0.3, far: 0.7 }; real.assignment.len()];
    StageInputs { config, real, beams, alphas }
}

impl StageInputs {
    pub fn lifted(&self, mode: Mode) -> LiftedProblem {
        let k = self.alphas.len();
        let g = vec![1.0; self.config.bst_antennas];
        build_lifted_problem(
            &self.real.channels,
            &self.real.assignment,
            &self.beams,
            &self.alphas,
            &vec![0.5; k],
            &g,
            &self.config,
            mode,
            &vec![false; k],
        )
        .expect("lifted problem")
    }
}

/// Worst ratio of leaked to own beam gain over all clusters.
pub fn zf_leakage(near: &[CVector], beams: &BeamformerSet) -> f64 {
    let mut worst = 0.0f64;
    for (k, w) in beams.beams.iter().enumerate() {
        let own = beam_gain(&near[k], w).norm();
        for (l, v) in near.iter().enumerate() {
            if l != k {
                worst = worst.max(beam_gain(v, w).norm() / own);
            }
        }
    }
    worst
}

/// |Tr(M ḡḡᴴ) + |τ|² − |(fᴴ + gᴴB) w|²| relative to the right side.
pub fn lifting_error(direct: &CVector, cascade: &CMatrix, w: &CVector, g: &[f64]) -> f64 {
    let lift = lift_user(direct, cascade, w).expect("lift");
    let f = outer(&lifted_vector(g));
    let lhs = trace_product(&lift.m, &f) + lift.tau.norm_sqr();
    // Row vector v = fᴴ + gᴴ B, summed entry by entry.
    let m = direct.len();
    let mut vw = C64::new(0.0, 0.0);
    for j in 0..m {
        let mut v = direct[j].conj();
        for (n, gn) in g.iter().enumerate() {
            v += cascade[(n, j)] * gn;
        }
        vw += v * w[j];
    }
    rel(lhs, vw.norm_sqr())
}

/// One-element tag, one AP antenna: near gain |1 + b_n g|², far gain
/// |1 + b_f g|².
pub fn passive_toy(b_near: f64, b_far: f64) -> LiftedProblem {
    let one = CVector::from_element(1, re(1.0));
    let near = lift_user(&one, &CMatrix::from_element(1, 1, re(b_near)), &one).unwrap();
    let far = lift_user(&one, &CMatrix::from_element(1, 1, re(b_far)), &one).unwrap();
    let mut c = ClusterSurrogate {
        near,
        far,
        alpha: Pac { near: 0.3, far: 0.7 },
        cluster_power: 1.0,
        noise_n: 0.05,
        noise_f: 0.05,
        omega: 0.0,
        rho: 0.0,
        total_power: 1.1,
        sca_near: ScaTerm { zeta: 1.0, gamma: 0.0 },
        sca_far: ScaTerm { zeta: 1.0, gamma: 0.0 },
        far_anchor_gain: 0.0,
        near_anchor_gain: 0.0,
    };
    c.reanchor(&outer(&lifted_vector(&[1.0]))).unwrap();
    LiftedProblem {
        clusters: vec![c],
        bst_antennas: 1,
        min_sinr_near: 0.0,
        min_sinr_far: 0.0,
        sic_gap: 1e-3,
        mode: Mode::NonCooperative,
        enforce_qos: vec![false],
    }
}

/// Exact rate of the one-element toy at amplitude `g`.
pub fn passive_toy_rate(lifted: &LiftedProblem, g: f64) -> f64 {
    lifted.clusters[0].rate(&outer(&lifted_vector(&[g])))
}

/// Best rate over g ∈ {0, 1e-3, …, 1}.
pub fn passive_toy_grid(lifted: &LiftedProblem) -> (f64, f64) {
    (0..=1000)
        .map(|i| i as f64 * 1e-3)
        .map(|g| (g, passive_toy_rate(lifted, g)))
        .max_by(|x, y| x.1.total_cmp(&y.1))
        .unwrap()
}

// ---------------------------------------------------------------- cone solver

pub fn diag2(a: f64, b: f64) -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[re(a), re(0.0), re(0.0), re(b)])
}

pub fn sym2(a: f64, b: f64, c: f64) -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[re(a), re(b), re(b), re(c)])
}

pub fn capped_2x2<'a>(objective: &'a dyn ambsc_core::psd::ConeObjective) -> ConeProblem<'a> {
    ConeProblem {
        dimension: 2,
        objective,
        inequalities: vec![],
        diag_cap: vec![Some(1.0), Some(1.0)],
        pinned: vec![],
        real: true,
    }
}

pub fn log_instance_matrices() -> [CMatrix; 2] {
    [sym2(1.0, 0.5, 0.2), sym2(0.3, -0.2, 1.0)]
}

/// Σ_j log(1 + Tr(C_j F)).
pub fn log_objective(cs: &[CMatrix; 2], f: &CMatrix) -> ambsc_core::error::Result<(f64, CMatrix)> {
    let mut v = 0.0;
    let mut g = CMatrix::zeros(2, 2);
    for c in cs {
        let t = 1.0 + trace_product(c, f);
        if t.is_nan() || t <= 0.0 {
            return Err(ambsc_core::error::Error::Domain("log argument".into()));
        }
        v += t.ln();
        g += c * re(1.0 / t);
    }
    Ok((v, g))
}

/// Max of the log instance over real PSD [[a, b], [b, c]] with a, c ≤ 1 on a
/// 1e-2 grid.
pub fn log_instance_grid() -> f64 {
    let cs = log_instance_matrices();
    let mut best = f64::NEG_INFINITY;
    for i in 0..=100 {
        for k in 0..=100 {
            let (a, c) = (i as f64 / 100.0, k as f64 / 100.0);
            let r = (a * c).sqrt();
            let steps = (2.0 * r / 1e-2).floor() as usize;
            for s in 0..=steps + 1 {
                let b = (-r + s as f64 * 1e-2).min(r);
                if let Ok((v, _)) = log_objective(&cs, &sym2(a, b, c)) {
                    best = best.max(v);
                }
            }
        }
    }
    best
}

/// Runs the three reference cone instances and returns
/// `(label, solver value, oracle value, status)`.
pub fn cone_instances() -> Vec<(&'static str, f64, f64, SolveStatus)> {
    let settings = SolveSettings::default();
    let mut out = Vec::new();

    let quad = |f: &CMatrix| -> ambsc_core::error::Result<(f64, CMatrix)> {
        let d = f - diag2(0.5, 0.5);
        Ok((-d.norm_squared(), -d * re(2.0)))
    };
    let r = ambsc_core::psd::solve(&capped_2x2(&quad), &diag2(0.9, 0.1), &settings).unwrap();
    out.push(("interior quadratic", r.objective_value, 0.0, r.status));

    let c = diag2(1.0, -1.0);
    let lin = move |f: &CMatrix| -> ambsc_core::error::Result<(f64, CMatrix)> { Ok((trace_product(&c, f), c.clone())) };
    let r = ambsc_core::psd::solve(&capped_2x2(&lin), &diag2(0.5, 0.5), &settings).unwrap();
    out.push(("linear on the boundary", r.objective_value, 1.0, r.status));

    let cs = log_instance_matrices();
    let log = move |f: &CMatrix| log_objective(&cs, f);
    let r = ambsc_core::psd::solve(&capped_2x2(&log), &diag2(0.5, 0.5), &settings).unwrap();
    out.push(("sum of logs", r.objective_value, log_instance_grid(), r.status));
    out
}

/// Toy tags whose rate is unimodal in g, with optima at both ends and inside.
pub const PASSIVE_TOYS: [(f64, f64); 7] =
    [(0.8, -0.6), (0.3, 0.3), (-0.5, 0.9), (-0.9, -0.2), (-0.3, -0.3), (0.5, -0.95), (0.2, -0.9)];

/// True when the grid rate rises and then falls at most once.
pub fn passive_toy_unimodal(lifted: &LiftedProblem) -> bool {
    let rates: Vec<f64> = (0..=1000).map(|i| passive_toy_rate(lifted, i as f64 * 1e-3)).collect();
    let mut falling = false;
    for w in rates.windows(2) {
        if w[1] < w[0] - 1e-15 {
            falling = true;
        } else if falling && w[1] > w[0] + 1e-15 {
            return false;
        }
    }
    true
}

/// Relative shortfall of the solved rate against the grid optimum for each
/// toy, started from all-ones amplitudes.
pub fn passive_toy_gaps(settings: &ambsc_core::passive::PassiveSettings) -> Vec<((f64, f64), f64)> {
    PASSIVE_TOYS
        .iter()
        .map(|&(bn, bf)| {
            let mut lifted = passive_toy(bn, bf);
            let state = ambsc_core::passive::optimize_lifted(&mut lifted, &[1.0], settings).expect("toy solve");
            let (_, best) = passive_toy_grid(&lifted);
            ((bn, bf), (best - passive_toy_rate(&lifted, state.g[0])) / best)
        })
        .collect()
}
