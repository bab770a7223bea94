//! Random D2D deployments and instantaneous channel gain matrices.
//!
//! A deployment places N transmitter/receiver pairs uniformly in a
//! rectangular area, optionally constraining each receiver to lie within
//! `max_pair_distance_m` of its transmitter. Channel power gains combine
//! three factors per link:
//!
//! - free-space-style pathloss `c^2 * min(1, d^-omega) / (16 pi^2 f_c^2)`,
//!   capped at unit distance,
//! - Rayleigh small-scale fading with unit mean power (amplitude scale
//!   `1/sqrt(2)`, so the power factor is exponential with mean 1),
//! - lognormal shadowing `10^(X/10)` with `X ~ Normal(0, shadowing_std_db)`.
//!
//! Gains are stored as dimensionless power ratios, which is what the SINR
//! expression consumes. The `literal_eq10` switch instead stores the
//! amplitude-like quantity `g * sqrt(PL * Xi)` for comparison.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT_M_S: f64 = 299_792_458.0;

/// Draw budget per link before rejection sampling gives up.
const MAX_REJECTION_DRAWS: usize = 1_000_000;

/// Propagation constants shared by every link of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationParams {
    pub carrier_freq_hz: f64,
    pub pathloss_exponent: f64,
    pub shadowing_std_db: f64,
    pub noise_power_w: f64,
    /// Metadata only; the single-channel model never divides by bandwidth.
    pub bandwidth_hz: f64,
    /// Store the amplitude-form channel value instead of its squared
    /// (power) form. Off by default; kept for comparison runs.
    #[serde(default)]
    pub literal_eq10: bool,
}

impl Default for PropagationParams {
    fn default() -> Self {
        Self {
            carrier_freq_hz: 6e9,
            pathloss_exponent: 2.0,
            shadowing_std_db: 5.0,
            noise_power_w: 2e-10,
            bandwidth_hz: 5e6,
            literal_eq10: false,
        }
    }
}

impl PropagationParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("propagation.carrier_freq_hz", self.carrier_freq_hz),
            ("propagation.pathloss_exponent", self.pathloss_exponent),
            ("propagation.noise_power_w", self.noise_power_w),
            ("propagation.bandwidth_hz", self.bandwidth_hz),
        ];
        for (key, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{key} must be a positive finite number, got {v}"
                )));
            }
        }
        if !(self.shadowing_std_db.is_finite() && self.shadowing_std_db >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "propagation.shadowing_std_db must be >= 0, got {}",
                self.shadowing_std_db
            )));
        }
        Ok(())
    }
}

/// Deployment geometry: area, link count, and the optional transmitter-to-
/// receiver distance bound (unset reproduces the unconstrained scenario).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub area_m: [f64; 2],
    pub n_links: usize,
    pub max_pair_distance_m: Option<f64>,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            area_m: [20.0, 20.0],
            n_links: 20,
            max_pair_distance_m: None,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_links == 0 {
            return Err(Error::InvalidConfig(
                "scenario.n_links must be >= 1".into(),
            ));
        }
        for v in self.area_m {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "scenario.area_m entries must be positive, got {v}"
                )));
            }
        }
        if let Some(d) = self.max_pair_distance_m {
            if !(d.is_finite() && d >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "scenario.max_pair_distance_m must be >= 0, got {d}"
                )));
            }
            if d > self.area_m[0].min(self.area_m[1]) {
                return Err(Error::InvalidConfig(format!(
                    "scenario.max_pair_distance_m ({d}) exceeds the smaller area dimension"
                )));
            }
        }
        Ok(())
    }
}

/// One placement of transmitters and receivers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deployment {
    pub tx_positions: Vec<[f64; 2]>,
    pub rx_positions: Vec<[f64; 2]>,
    pub scenario: ScenarioSpec,
}

impl Deployment {
    pub fn n_links(&self) -> usize {
        self.tx_positions.len()
    }
}

/// One channel realization: N x N power gains plus the noise level.
///
/// `gains` is row-major with `gains[i * n + j]` the gain from transmitter
/// `i` to receiver `j`; the JSON form keeps the same layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ChannelMatrixRaw", into = "ChannelMatrixRaw")]
pub struct ChannelMatrix {
    n_links: usize,
    gains: Vec<f64>,
    noise_power_w: f64,
}

#[derive(Serialize, Deserialize, Clone)]
struct ChannelMatrixRaw {
    n_links: usize,
    gains: Vec<f64>,
    noise_power_w: f64,
}

impl TryFrom<ChannelMatrixRaw> for ChannelMatrix {
    type Error = Error;
    fn try_from(raw: ChannelMatrixRaw) -> Result<Self> {
        ChannelMatrix::new(raw.n_links, raw.gains, raw.noise_power_w)
    }
}

impl From<ChannelMatrix> for ChannelMatrixRaw {
    fn from(m: ChannelMatrix) -> Self {
        Self {
            n_links: m.n_links,
            gains: m.gains,
            noise_power_w: m.noise_power_w,
        }
    }
}

impl ChannelMatrix {
    pub fn new(n_links: usize, gains: Vec<f64>, noise_power_w: f64) -> Result<Self> {
        if n_links == 0 {
            return Err(Error::InvalidConfig("channel must have n_links >= 1".into()));
        }
        if gains.len() != n_links * n_links {
            return Err(Error::DimensionMismatch(format!(
                "gain matrix has {} entries, expected {}",
                gains.len(),
                n_links * n_links
            )));
        }
        if let Some(bad) = gains.iter().find(|g| !(g.is_finite() && **g >= 0.0)) {
            return Err(Error::NonFinite(format!(
                "channel gain {bad} (must be finite and >= 0)"
            )));
        }
        if !(noise_power_w.is_finite() && noise_power_w > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "noise power must be positive, got {noise_power_w}"
            )));
        }
        Ok(Self {
            n_links,
            gains,
            noise_power_w,
        })
    }

    pub fn n_links(&self) -> usize {
        self.n_links
    }

    /// Gain from transmitter `i` to receiver `j`.
    #[inline]
    pub fn gain(&self, i: usize, j: usize) -> f64 {
        self.gains[i * self.n_links + j]
    }

    pub fn gains_row_major(&self) -> &[f64] {
        &self.gains
    }

    pub fn noise_power_w(&self) -> f64 {
        self.noise_power_w
    }

    /// Relabels links by `perm` (new index -> old index), applied to both
    /// matrix axes.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_links;
        if perm.len() != n {
            return Err(Error::DimensionMismatch("permutation length".into()));
        }
        let mut gains = vec![0.0; n * n];
        for (i_new, &i_old) in perm.iter().enumerate() {
            for (j_new, &j_old) in perm.iter().enumerate() {
                gains[i_new * n + j_new] = self.gain(i_old, j_old);
            }
        }
        Self::new(n, gains, self.noise_power_w)
    }
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Places transmitters and receivers i.i.d. uniform over the area. With a
/// pair-distance bound, each receiver is redrawn until it falls within
/// `max_pair_distance_m` of its transmitter (exact conditional
/// distribution); a zero bound degenerates to co-located pairs.
pub fn generate_deployment<R: Rng>(spec: &ScenarioSpec, rng: &mut R) -> Result<Deployment> {
    spec.validate()?;
    let [w, h] = spec.area_m;
    let n = spec.n_links;

    let mut tx_positions = Vec::with_capacity(n);
    for _ in 0..n {
        tx_positions.push([rng.random_range(0.0..w), rng.random_range(0.0..h)]);
    }

    let mut rx_positions = Vec::with_capacity(n);
    for (link, &tx) in tx_positions.iter().enumerate() {
        match spec.max_pair_distance_m {
            None => rx_positions.push([rng.random_range(0.0..w), rng.random_range(0.0..h)]),
            Some(d_max) if d_max == 0.0 => rx_positions.push(tx),
            Some(d_max) => {
                let mut accepted = None;
                for _ in 0..MAX_REJECTION_DRAWS {
                    let cand = [rng.random_range(0.0..w), rng.random_range(0.0..h)];
                    if distance(tx, cand) <= d_max {
                        accepted = Some(cand);
                        break;
                    }
                }
                match accepted {
                    Some(p) => rx_positions.push(p),
                    None => {
                        return Err(Error::InfeasibleScenario(format!(
                            "link {link}: no receiver within {d_max} m of its transmitter \
                             after {MAX_REJECTION_DRAWS} draws"
                        )))
                    }
                }
            }
        }
    }

    Ok(Deployment {
        tx_positions,
        rx_positions,
        scenario: spec.clone(),
    })
}

/// Deterministic pathloss power gain at distance `d_m`, capped below unit
/// distance so `d = 0` stays finite.
pub fn pathloss_power_gain(d_m: f64, params: &PropagationParams) -> f64 {
    debug_assert!(d_m >= 0.0);
    let c2 = SPEED_OF_LIGHT_M_S * SPEED_OF_LIGHT_M_S;
    let fc2 = params.carrier_freq_hz * params.carrier_freq_hz;
    let near_far = f64::min(1.0, d_m.powf(-params.pathloss_exponent));
    c2 * near_far / (16.0 * std::f64::consts::PI.powi(2) * fc2)
}

/// The fading-free gain matrix of a deployment. Doubles as the test hook
/// for the degenerate no-randomness channel.
pub fn pathloss_matrix(dep: &Deployment, params: &PropagationParams) -> Result<ChannelMatrix> {
    params.validate()?;
    let n = dep.n_links();
    let mut gains = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let d = distance(dep.tx_positions[i], dep.rx_positions[j]);
            gains[i * n + j] = pathloss_power_gain(d, params);
        }
    }
    ChannelMatrix::new(n, gains, params.noise_power_w)
}

/// Draws one instantaneous channel: per entry, a Rayleigh amplitude (from
/// in-phase/quadrature normals, scale `1/sqrt(2)`) followed by a shadowing
/// normal, row-major order.
pub fn sample_channel<R: Rng>(
    dep: &Deployment,
    params: &PropagationParams,
    rng: &mut R,
) -> Result<ChannelMatrix> {
    params.validate()?;
    let n = dep.n_links();
    let mut gains = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let d = distance(dep.tx_positions[i], dep.rx_positions[j]);
            let pl = pathloss_power_gain(d, params);
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            let amp = (0.5 * (re * re + im * im)).sqrt();
            let z: f64 = StandardNormal.sample(rng);
            let shadow = 10f64.powf(params.shadowing_std_db * z / 10.0);
            gains[i * n + j] = if params.literal_eq10 {
                amp * (pl * shadow).sqrt()
            } else {
                amp * amp * pl * shadow
            };
        }
    }
    ChannelMatrix::new(n, gains, params.noise_power_w)
}

/// Where a batch gets its geometry from.
#[derive(Debug, Clone, Copy)]
pub enum DeploymentSource<'a> {
    /// Keep one placement fixed; redraw fading and shadowing only.
    Fixed(&'a Deployment),
    /// Redraw the placement for every batch element.
    Redraw(&'a ScenarioSpec),
}

/// `n_batch` independent channel realizations drawn from `source`.
pub fn sample_batch<R: Rng>(
    source: DeploymentSource<'_>,
    params: &PropagationParams,
    n_batch: usize,
    rng: &mut R,
) -> Result<Vec<ChannelMatrix>> {
    if n_batch == 0 {
        return Err(Error::InvalidConfig("batch size must be >= 1".into()));
    }
    let mut batch = Vec::with_capacity(n_batch);
    for _ in 0..n_batch {
        let m = match source {
            DeploymentSource::Fixed(dep) => sample_channel(dep, params, rng)?,
            DeploymentSource::Redraw(spec) => {
                let dep = generate_deployment(spec, rng)?;
                sample_channel(&dep, params, rng)?
            }
        };
        batch.push(m);
    }
    Ok(batch)
}
