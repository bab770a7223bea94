//! Monte-Carlo evaluation harness.
//!
//! Every realization draws one deployment and channel, then evaluates all
//! configured methods on that same channel, so comparisons are paired.
//! Per-realization substreams keyed by (seed, realization index) make the
//! channel sequence independent of which methods run and of worker count.

pub mod metrics;

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{generate_deployment, sample_channel, ChannelMatrix, PropagationParams, ScenarioSpec};
use crate::error::{Error, Result};
use crate::objective::{per_link_rates, sum_rate, PowerVector};
use crate::pgd::{run_pgd, PgdConfig};
use crate::rng::substream;
use crate::unfolded::{
    forward_power, init_params, train_offline, train_online, P0Rule, TrainConfig, UnfoldedArch,
    UnfoldedParams,
};

/// Substream slots reserved per realization: 0 deployment+channel,
/// 1 solver randomness, 2 online-initialization randomness.
const SLOTS: u64 = 4;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum MethodId {
    MaxPower,
    Pgd,
    DupgdOnline,
    DupgdOffline,
}

impl MethodId {
    pub const ALL: [MethodId; 4] = [
        MethodId::MaxPower,
        MethodId::Pgd,
        MethodId::DupgdOnline,
        MethodId::DupgdOffline,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MethodId::MaxPower => "max_power",
            MethodId::Pgd => "pgd",
            MethodId::DupgdOnline => "dupgd_online",
            MethodId::DupgdOffline => "dupgd_offline",
        }
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for MethodId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max_power" => Ok(MethodId::MaxPower),
            "pgd" => Ok(MethodId::Pgd),
            "dupgd_online" => Ok(MethodId::DupgdOnline),
            "dupgd_offline" => Ok(MethodId::DupgdOffline),
            other => Err(Error::InvalidConfig(format!(
                "unknown method `{other}` (expected max_power, pgd, dupgd_online, dupgd_offline)"
            ))),
        }
    }
}

/// Unfolded-network settings of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DupgdConfig {
    pub arch: UnfoldedArch,
    pub train: TrainConfig,
    /// Start online adaptation from the pretrained parameters instead of a
    /// fresh initialization per realization.
    #[serde(default)]
    pub online_from_pretrained: bool,
}

impl Default for DupgdConfig {
    fn default() -> Self {
        Self {
            arch: UnfoldedArch::default(),
            train: TrainConfig::default(),
            online_from_pretrained: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: ScenarioSpec,
    pub propagation: PropagationParams,
    pub methods: Vec<MethodId>,
    pub n_realizations: usize,
    pub pgd: PgdConfig,
    pub dupgd: DupgdConfig,
    pub p_max_w: f64,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioSpec::default(),
            propagation: PropagationParams::default(),
            methods: MethodId::ALL.to_vec(),
            n_realizations: 500,
            pgd: PgdConfig::default(),
            dupgd: DupgdConfig::default(),
            p_max_w: 10.0,
            seed: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.propagation.validate()?;
        self.pgd.validate()?;
        self.dupgd.arch.validate()?;
        self.dupgd.train.validate()?;
        if self.n_realizations == 0 {
            return Err(Error::InvalidConfig(
                "experiment.n_realizations must be >= 1".into(),
            ));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig(
                "experiment.methods must not be empty".into(),
            ));
        }
        if !(self.p_max_w.is_finite() && self.p_max_w > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "p_max_w must be positive, got {}",
                self.p_max_w
            )));
        }
        Ok(())
    }

    fn needs_pretrained(&self) -> bool {
        self.methods.contains(&MethodId::DupgdOffline)
            || (self.methods.contains(&MethodId::DupgdOnline) && self.dupgd.online_from_pretrained)
    }
}

/// Raw per-method outcomes of a campaign: one sum rate per realization,
/// and one rate/power entry per link per realization.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MethodSamples {
    pub sum_rates: Vec<f64>,
    pub per_link_rates: Vec<f64>,
    pub powers_w: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub mean_sum_rate: f64,
    pub mean_per_link_rate: f64,
    pub mean_power_w: f64,
    /// `10 log10(mean watts)`; absent when the mean power is zero.
    pub mean_power_dbw: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub version: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    /// Hash over the channel sequence; equal digests mean the methods saw
    /// identical realizations.
    pub channel_digest: String,
    pub samples: BTreeMap<MethodId, MethodSamples>,
    pub summary: BTreeMap<MethodId, MethodSummary>,
}

/// The channel of realization `index`, exactly as the harness draws it.
/// Exposed so analyses and tests can pair their own computations with a
/// report's samples.
pub fn realization_channel(cfg: &ExperimentConfig, index: usize) -> Result<ChannelMatrix> {
    let mut rng = substream(cfg.seed, index as u64 * SLOTS);
    let dep = generate_deployment(&cfg.scenario, &mut rng)?;
    sample_channel(&dep, &cfg.propagation, &mut rng)
}

fn fnv1a64(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

fn channel_fingerprint(h: &ChannelMatrix) -> u64 {
    let noise = h.noise_power_w();
    let bytes = h
        .gains_row_major()
        .iter()
        .chain(std::iter::once(&noise))
        .flat_map(|v| v.to_bits().to_le_bytes());
    fnv1a64(bytes)
}

struct RealizationOutcome {
    fingerprint: u64,
    /// Aligned with the configured method list.
    per_method: Vec<(f64, Vec<f64>, Vec<f64>)>,
}

fn evaluate_method(
    method: MethodId,
    h: &ChannelMatrix,
    cfg: &ExperimentConfig,
    pretrained: Option<&UnfoldedParams>,
    index: usize,
) -> Result<PowerVector> {
    let n = h.n_links();
    match method {
        MethodId::MaxPower => PowerVector::max_power(n, cfg.p_max_w),
        MethodId::Pgd => {
            let mut rng = substream(cfg.seed, index as u64 * SLOTS + 1);
            Ok(run_pgd(h, &cfg.pgd, cfg.p_max_w, &mut rng)?.p_final)
        }
        MethodId::DupgdOffline => {
            let params = pretrained.expect("pretrained parameters required");
            let p0 = P0Rule::MaxPower.build(n, cfg.p_max_w)?;
            forward_power(params, h, &p0)
        }
        MethodId::DupgdOnline => {
            let params = if cfg.dupgd.online_from_pretrained {
                pretrained.expect("pretrained parameters required").clone()
            } else {
                let mut rng = substream(cfg.seed, index as u64 * SLOTS + 2);
                init_params(&cfg.dupgd.arch, n, cfg.dupgd.train.init_step_size, &mut rng)?
            };
            Ok(train_online(params, h, &cfg.dupgd.train, cfg.p_max_w)?.1)
        }
    }
}

/// Runs one Monte-Carlo campaign. The offline network is trained once per
/// config before the realization loop; online adaptation reruns per
/// realization. Nothing is emitted unless every realization succeeds.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;

    let pretrained = if cfg.needs_pretrained() {
        let (params, _) = train_offline(
            &cfg.dupgd.train,
            &cfg.dupgd.arch,
            &cfg.scenario,
            &cfg.propagation,
            cfg.p_max_w,
        )?;
        Some(params)
    } else {
        None
    };

    let outcomes: Vec<Result<RealizationOutcome>> = (0..cfg.n_realizations)
        .into_par_iter()
        .map(|i| {
            let h = realization_channel(cfg, i)?;
            let mut per_method = Vec::with_capacity(cfg.methods.len());
            for &method in &cfg.methods {
                let p = evaluate_method(method, &h, cfg, pretrained.as_ref(), i)?;
                let rates = per_link_rates(&p, &h)?;
                let total = rates.sum();
                per_method.push((total, rates.r, p.as_slice().to_vec()));
            }
            Ok(RealizationOutcome {
                fingerprint: channel_fingerprint(&h),
                per_method,
            })
        })
        .collect();

    let mut samples: BTreeMap<MethodId, MethodSamples> = cfg
        .methods
        .iter()
        .map(|&m| (m, MethodSamples::default()))
        .collect();
    let mut digest_bytes: Vec<u8> = Vec::with_capacity(cfg.n_realizations * 8);
    for outcome in outcomes {
        let outcome = outcome?;
        digest_bytes.extend_from_slice(&outcome.fingerprint.to_le_bytes());
        for (&method, (total, rates, powers)) in cfg.methods.iter().zip(outcome.per_method) {
            let entry = samples.get_mut(&method).unwrap();
            entry.sum_rates.push(total);
            entry.per_link_rates.extend(rates);
            entry.powers_w.extend(powers);
        }
    }

    let summary = samples
        .iter()
        .map(|(&m, s)| {
            let mean_power_w = mean(&s.powers_w);
            (
                m,
                MethodSummary {
                    mean_sum_rate: mean(&s.sum_rates),
                    mean_per_link_rate: mean(&s.per_link_rates),
                    mean_power_w,
                    mean_power_dbw: dbw(mean_power_w),
                },
            )
        })
        .collect();

    Ok(ExperimentReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        config: cfg.clone(),
        channel_digest: format!("{:016x}", fnv1a64(digest_bytes)),
        samples,
        summary,
    })
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean power in dBW, `None` for the zero-power sentinel case.
pub(crate) fn dbw(watts: f64) -> Option<f64> {
    (watts > 0.0).then(|| 10.0 * watts.log10())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub method: MethodId,
    pub iterations: usize,
    pub mean_per_link_rate: f64,
    /// Seed the retrained network used, for the unfolded rows.
    pub train_seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateVsIterations {
    pub rows: Vec<RateRow>,
}

/// Mean per-link rate of the iterative solver truncated at each grid point
/// and of the unfolded network with that many layers (retrained per point,
/// seed offset by the layer count).
pub fn rate_vs_iterations(cfg: &ExperimentConfig, grid: &[usize]) -> Result<RateVsIterations> {
    cfg.validate()?;
    if grid.is_empty() {
        return Err(Error::EmptyInput("iteration grid"));
    }
    if grid[0] == 0 {
        return Err(Error::InvalidConfig(
            "iteration grid points must be >= 1".into(),
        ));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig(
            "iteration grid must be strictly ascending".into(),
        ));
    }

    let n = cfg.scenario.n_links as f64;
    let channels: Vec<ChannelMatrix> = (0..cfg.n_realizations)
        .map(|i| realization_channel(cfg, i))
        .collect::<Result<_>>()?;

    // One full-length solver run per realization; truncation at a grid
    // point reads the recorded trajectory.
    let max_iters = *grid.last().unwrap();
    let pgd_cfg = PgdConfig {
        max_iters,
        record_trajectory: true,
        rel_tol: None,
        ..cfg.pgd.clone()
    };
    let trajectories: Vec<Vec<f64>> = channels
        .par_iter()
        .enumerate()
        .map(|(i, h)| {
            let mut rng = substream(cfg.seed, i as u64 * SLOTS + 1);
            Ok(run_pgd(h, &pgd_cfg, cfg.p_max_w, &mut rng)?
                .trajectory
                .expect("trajectory recorded"))
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for &k in grid {
        let rates: Vec<f64> = trajectories.iter().map(|t| t[k - 1] / n).collect();
        rows.push(RateRow {
            method: MethodId::Pgd,
            iterations: k,
            mean_per_link_rate: mean(&rates),
            train_seed: None,
        });
    }

    for &k in grid {
        let arch = UnfoldedArch {
            n_layers: k,
            ..cfg.dupgd.arch
        };
        let train = TrainConfig {
            seed: cfg.dupgd.train.seed.wrapping_add(k as u64),
            ..cfg.dupgd.train.clone()
        };
        let (params, _) =
            train_offline(&train, &arch, &cfg.scenario, &cfg.propagation, cfg.p_max_w)?;
        let rates: Vec<f64> = channels
            .par_iter()
            .map(|h| {
                let p0 = P0Rule::MaxPower.build(h.n_links(), cfg.p_max_w)?;
                let p = forward_power(&params, h, &p0)?;
                Ok(sum_rate(&p, h)? / n)
            })
            .collect::<Result<_>>()?;
        rows.push(RateRow {
            method: MethodId::DupgdOffline,
            iterations: k,
            mean_per_link_rate: mean(&rates),
            train_seed: Some(train.seed),
        });
    }

    Ok(RateVsIterations { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    NLinks,
    PathlossExponent,
    ShadowingStd,
}

impl SweepAxis {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepAxis::NLinks => "n_links",
            SweepAxis::PathlossExponent => "pathloss_exponent",
            SweepAxis::ShadowingStd => "shadowing_std",
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n_links" => Ok(SweepAxis::NLinks),
            "pathloss_exponent" => Ok(SweepAxis::PathlossExponent),
            "shadowing_std" => Ok(SweepAxis::ShadowingStd),
            other => Err(Error::InvalidConfig(format!(
                "unknown sweep axis `{other}` (expected n_links, pathloss_exponent, shadowing_std)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub method: MethodId,
    pub mean_per_link_rate: f64,
    pub seed: u64,
    pub train_seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

fn apply_axis(cfg: &mut ExperimentConfig, axis: SweepAxis, value: f64) -> Result<()> {
    match axis {
        SweepAxis::NLinks => {
            if value < 1.0 || value.fract() != 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "n_links sweep value must be a positive integer, got {value}"
                )));
            }
            cfg.scenario.n_links = value as usize;
        }
        SweepAxis::PathlossExponent => {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "pathloss_exponent must be > 0, got {value}"
                )));
            }
            cfg.propagation.pathloss_exponent = value;
        }
        SweepAxis::ShadowingStd => {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "shadowing_std must be >= 0, got {value}"
                )));
            }
            cfg.propagation.shadowing_std_db = value;
        }
    }
    Ok(())
}

/// One campaign per axis value; the unfolded network is retrained at every
/// point and the seed offsets used are recorded in the rows.
pub fn sensitivity_sweep(
    base: &ExperimentConfig,
    axis: SweepAxis,
    values: &[f64],
) -> Result<SweepTable> {
    if values.is_empty() {
        return Err(Error::EmptyInput("sweep values"));
    }
    let mut rows = Vec::new();
    for (idx, &value) in values.iter().enumerate() {
        let mut cfg = base.clone();
        apply_axis(&mut cfg, axis, value)?;
        cfg.seed = base.seed.wrapping_add(idx as u64);
        cfg.dupgd.train.seed = base.dupgd.train.seed.wrapping_add(idx as u64);
        let report = run_experiment(&cfg)?;
        for (&method, summary) in &report.summary {
            rows.push(SweepRow {
                axis,
                value,
                method,
                mean_per_link_rate: summary.mean_per_link_rate,
                seed: cfg.seed,
                train_seed: cfg.dupgd.train.seed,
            });
        }
    }
    Ok(SweepTable { rows })
}
