//! Channel generation: deployment geometry, ULA steering vectors, large-scale
//! fading, Rician composites and the cascaded AP→tag→user channels.
//!
//! Conventions: both arrays lie along the y-axis so that angles are measured
//! from the x-axis (array broadside). The AP sits at the origin and the tag at
//! `(d_sb, 0)`. Effective channels `v = f^H + g^H B` are row vectors; they are
//! stored as [`CVector`] holding the row entries, so `v · w` is
//! `v.transpose() * w`.

use std::f64::consts::PI;

use rand::{Rng, RngExt};
use rand_distr::{Distribution, StandardNormal};

use crate::clustering::ClusterAssignment;
use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::{CMatrix, CVector, C64};

/// Rician K-factor treated as pure line of sight.
pub const RICIAN_K_CAP: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Angle from broadside (x-axis) of the direction `self → other`.
    pub fn bearing_to(&self, other: &Point) -> f64 {
        (other.y - self.y).atan2(other.x - self.x)
    }
}

/// Positions of the AP, the tag and the deployed users, plus array sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub ap_position: Point,
    pub bst_position: Point,
    pub user_positions: Vec<Point>,
    pub ap_antennas: usize,
    pub bst_antennas: usize,
    pub spacing_ratio: f64,
}

impl Geometry {
    /// AP at the origin, tag at `(d_sb, 0)`, users uniform in the disk of
    /// radius `bst_radius_m` around the tag.
    pub fn sample<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Self {
        let bst = Point::new(config.ap_bst_distance_m, 0.0);
        let user_positions = (0..config.users_total)
            .map(|_| {
                let radius = config.bst_radius_m * rng.random::<f64>().sqrt();
                let theta = 2.0 * PI * rng.random::<f64>();
                Point::new(bst.x + radius * theta.cos(), bst.y + radius * theta.sin())
            })
            .collect();
        Self {
            ap_position: Point::new(0.0, 0.0),
            bst_position: bst,
            user_positions,
            ap_antennas: config.ap_antennas,
            bst_antennas: config.bst_antennas,
            spacing_ratio: config.spacing_ratio,
        }
    }

    pub fn validate(&self, config: &ScenarioConfig) -> Result<()> {
        let d = self.ap_position.distance(&self.bst_position);
        if (d - config.ap_bst_distance_m).abs() > 1e-9 * config.ap_bst_distance_m.max(1.0) {
            return Err(Error::Config(format!(
                "AP-tag distance {d} differs from ap_bst_distance_m {}",
                config.ap_bst_distance_m
            )));
        }
        for (i, p) in self.user_positions.iter().enumerate() {
            if p.distance(&self.bst_position) > config.bst_radius_m * (1.0 + 1e-12) {
                return Err(Error::Config(format!("user {i} lies outside the tag disk")));
            }
        }
        if self.ap_antennas < config.clusters {
            return Err(Error::Config(format!(
                "ap_antennas ({}) must be at least clusters ({})",
                self.ap_antennas, config.clusters
            )));
        }
        if self.bst_antennas == 0 {
            return Err(Error::Config("bst_antennas must be at least 1".into()));
        }
        if self.user_positions.len() < 2 * config.clusters {
            return Err(Error::Config(format!(
                "{} users cannot fill {} clusters of two",
                self.user_positions.len(),
                config.clusters
            )));
        }
        Ok(())
    }
}

/// ULA response `[1, e^{-j2π r sinφ}, …, e^{-j2π (V-1) r sinφ}]` as a column.
pub fn ula_response(angle: f64, elements: usize, spacing_ratio: f64) -> Result<CVector> {
    if elements == 0 {
        return Err(Error::invalid("ULA needs at least one element"));
    }
    if !(spacing_ratio > 0.0) {
        return Err(Error::invalid(format!("spacing ratio must be positive, got {spacing_ratio}")));
    }
    let phase = -2.0 * PI * spacing_ratio * angle.sin();
    Ok(CVector::from_fn(elements, |n, _| C64::from_polar(1.0, phase * n as f64)))
}

/// Power gain `η₀ (d / d₀)^{-μ}`.
pub fn large_scale_gain(distance: f64, exponent: f64, ref_gain: f64, ref_distance: f64) -> Result<f64> {
    if !(distance > 0.0) {
        return Err(Error::invalid(format!("distance must be positive, got {distance}")));
    }
    if !(ref_distance > 0.0) {
        return Err(Error::invalid(format!("reference distance must be positive, got {ref_distance}")));
    }
    Ok(ref_gain * (distance / ref_distance).powf(-exponent))
}

/// Rician mixing spec: K-factor and the deterministic LoS component.
#[derive(Debug, Clone, PartialEq)]
pub struct RicianSpec {
    pub k_factor: f64,
    pub los: CMatrix,
}

/// i.i.d. CN(0, 1) entries.
pub fn cn_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMatrix {
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    CMatrix::from_fn(rows, cols, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        C64::new(re * scale, im * scale)
    })
}

pub fn cn_vector<R: Rng + ?Sized>(len: usize, rng: &mut R) -> CVector {
    let m = cn_matrix(len, 1, rng);
    m.column(0).into_owned()
}

/// `√(K/(1+K)) LoS + √(1/(1+K)) NLoS`; K at or above the cap keeps LoS only.
pub fn rician_mix(k_factor: f64, los: &CMatrix, nlos: &CMatrix) -> Result<CMatrix> {
    if !(k_factor >= 0.0) {
        return Err(Error::invalid(format!("Rician factor must be non-negative, got {k_factor}")));
    }
    if los.shape() != nlos.shape() {
        return Err(Error::invalid("LoS and NLoS shapes differ"));
    }
    if k_factor >= RICIAN_K_CAP {
        return Ok(los.clone());
    }
    let los_w = (k_factor / (1.0 + k_factor)).sqrt();
    let nlos_w = (1.0 / (1.0 + k_factor)).sqrt();
    Ok(los * C64::new(los_w, 0.0) + nlos * C64::new(nlos_w, 0.0))
}

/// Draws the NLoS part and mixes it with `spec.los`.
pub fn rician_sample<R: Rng + ?Sized>(spec: &RicianSpec, rng: &mut R) -> Result<CMatrix> {
    if !(spec.k_factor >= 0.0) {
        return Err(Error::invalid(format!("Rician factor must be non-negative, got {}", spec.k_factor)));
    }
    let nlos = cn_matrix(spec.los.nrows(), spec.los.ncols(), rng);
    rician_mix(spec.k_factor, &spec.los, &nlos)
}

/// `diag(h^H) H`: row n of H scaled by conj(h_n).
pub fn cascade_channel(h: &CVector, big_h: &CMatrix) -> Result<CMatrix> {
    if h.len() != big_h.nrows() {
        return Err(Error::invalid(format!(
            "cascade: h has {} entries but H has {} rows",
            h.len(),
            big_h.nrows()
        )));
    }
    let mut out = big_h.clone();
    for (n, mut row) in out.row_iter_mut().enumerate() {
        row *= h[n].conj();
    }
    Ok(out)
}

/// Row entries of `v = f^H + g^H B` for real reflection amplitudes `g`.
pub fn effective_channel(f: &CVector, b: &CMatrix, g: &[f64]) -> Result<CVector> {
    if b.ncols() != f.len() || b.nrows() != g.len() {
        return Err(Error::invalid(format!(
            "effective channel: f has {} entries, B is {}x{}, g has {} entries",
            f.len(),
            b.nrows(),
            b.ncols(),
            g.len()
        )));
    }
    if let Some(bad) = g.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::invalid(format!("reflection coefficient {bad} outside [0, 1]")));
    }
    let mut v = f.map(|z| z.conj());
    for (n, &gn) in g.iter().enumerate() {
        if gn != 0.0 {
            for m in 0..v.len() {
                v[m] += b[(n, m)] * gn;
            }
        }
    }
    Ok(v)
}

/// Near or far role inside a cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Near,
    Far,
}

/// All links of one deployed user. The LoS/NLoS parts are kept so the
/// composite can be rebuilt once the user's role is known.
#[derive(Debug, Clone, PartialEq)]
pub struct UserChannel {
    /// AP→user direct link f (M).
    pub direct: CVector,
    /// AP→tag link H (N×M) including large-scale gain.
    pub ap_bst: CMatrix,
    /// Tag→user link h (N) including large-scale gain.
    pub bst_user: CVector,
    /// Cascaded channel B = diag(h^H) H.
    pub cascade: CMatrix,
    pub distance_to_bst: f64,
    ap_bst_los: CMatrix,
    ap_bst_nlos: CMatrix,
    bst_user_los: CMatrix,
    bst_user_nlos: CMatrix,
}

/// Channels of one realization. `relay[(l, k)]` is the link from the near
/// user of cluster `l` to the far user of cluster `k`; the diagonal holds the
/// intra-cluster relay gains.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub users: Vec<UserChannel>,
    pub relay: CMatrix,
}

impl ChannelSet {
    pub fn ap_antennas(&self) -> usize {
        self.users[0].direct.len()
    }

    pub fn bst_antennas(&self) -> usize {
        self.users[0].bst_user.len()
    }

    pub fn effective(&self, user: usize, g: &[f64]) -> Result<CVector> {
        let u = &self.users[user];
        effective_channel(&u.direct, &u.cascade, g)
    }

    pub fn effective_all(&self, g: &[f64]) -> Result<Vec<CVector>> {
        (0..self.users.len()).map(|u| self.effective(u, g)).collect()
    }

    /// Rebuilds a user's composite links with the Rician factors and
    /// path-loss exponent of `role`, reusing the same small-scale draws.
    pub fn set_role(&mut self, user: usize, role: Role, config: &ScenarioConfig) -> Result<()> {
        let (beta, delta, exponent) = match role {
            Role::Near => (config.rician_ap_bst_near, config.rician_bst_near, config.pathloss_bst_near),
            Role::Far => (config.rician_ap_bst_far, config.rician_bst_far, config.pathloss_bst_far),
        };
        let u = &mut self.users[user];
        let ap_bst_gain = large_scale_gain(
            config.ap_bst_distance_m,
            config.pathloss_ap_bst,
            config.reference_gain,
            config.reference_distance_m,
        )?;
        let bst_user_gain = large_scale_gain(
            u.distance_to_bst,
            exponent,
            config.reference_gain,
            config.reference_distance_m,
        )?;
        u.ap_bst = rician_mix(beta, &u.ap_bst_los, &u.ap_bst_nlos)? * C64::new(ap_bst_gain.sqrt(), 0.0);
        let h = rician_mix(delta, &u.bst_user_los, &u.bst_user_nlos)? * C64::new(bst_user_gain.sqrt(), 0.0);
        u.bst_user = h.column(0).into_owned();
        u.cascade = cascade_channel(&u.bst_user, &u.ap_bst)?;
        Ok(())
    }

    /// Applies far-user factors to every far user of `assignment`.
    pub fn apply_roles(&mut self, assignment: &ClusterAssignment, config: &ScenarioConfig) -> Result<()> {
        for pair in &assignment.clusters {
            self.set_role(pair.near, Role::Near, config)?;
            self.set_role(pair.far, Role::Far, config)?;
        }
        Ok(())
    }
}

/// Draws every channel of one realization.
///
/// Direct and relay links are CN(0, 1). AP→tag and tag→user links are
/// large-scale gain × Rician composite with ULA line-of-sight parts evaluated
/// at geometry-derived angles. All users start with near-role factors; call
/// [`ChannelSet::apply_roles`] after clustering.
pub fn sample_scenario_channels<R: Rng + ?Sized>(
    config: &ScenarioConfig,
    geometry: &Geometry,
    rng: &mut R,
) -> Result<ChannelSet> {
    if geometry.user_positions.len() < 2 * config.clusters {
        return Err(Error::Config(format!(
            "{} users cannot fill {} clusters of two",
            geometry.user_positions.len(),
            config.clusters
        )));
    }
    geometry.validate(config)?;
    let m = geometry.ap_antennas;
    let n = geometry.bst_antennas;
    let r = geometry.spacing_ratio;

    let departure_ap = geometry.ap_position.bearing_to(&geometry.bst_position);
    let arrival_tag = geometry.bst_position.bearing_to(&geometry.ap_position);
    let ap_los = ula_response(departure_ap, m, r)?;
    let tag_los = ula_response(arrival_tag, n, r)?;
    let ap_bst_los = tag_los.map(|z| z.conj()) * ap_los.transpose();

    let mut users = Vec::with_capacity(geometry.user_positions.len());
    for p in &geometry.user_positions {
        let direct = cn_vector(m, rng);
        let ap_bst_nlos = cn_matrix(n, m, rng);
        let bst_user_nlos = cn_matrix(n, 1, rng);
        let departure_tag = geometry.bst_position.bearing_to(p);
        let bst_user_los = ula_response(departure_tag, n, r)?;
        // Users closer than the reference distance are treated as sitting on it.
        let distance_to_bst = geometry.bst_position.distance(p).max(config.reference_distance_m);
        users.push(UserChannel {
            direct,
            ap_bst: CMatrix::zeros(n, m),
            bst_user: CVector::zeros(n),
            cascade: CMatrix::zeros(n, m),
            distance_to_bst,
            ap_bst_los: ap_bst_los.clone(),
            ap_bst_nlos,
            bst_user_los: CMatrix::from_column_slice(n, 1, bst_user_los.as_slice()),
            bst_user_nlos,
        });
    }
    let relay = cn_matrix(config.clusters, config.clusters, rng);
    let mut set = ChannelSet { users, relay };
    for u in 0..set.users.len() {
        set.set_role(u, Role::Near, config)?;
    }
    Ok(set)
}
