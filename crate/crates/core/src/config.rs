//! Flat key-value configuration with dotted sections.
//!
//! Precedence: built-in defaults, then the config (or recipe) file, then
//! command-line overrides. Unknown keys are rejected, and every value
//! error names the key it came from. The effective config is echoed into
//! every output artifact.

use serde::{Deserialize, Serialize};

use crate::channel::{PropagationParams, ScenarioSpec};
use crate::error::{Error, Result};
use crate::experiments::{DupgdConfig, ExperimentConfig, MethodId};
use crate::pgd::{PgdConfig, PgdInit};
use crate::unfolded::{OnlineSchedule, TrainConfig, UnfoldedArch, Variant};

/// Grids used by the figure recipes; overridable per recipe file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureParams {
    pub iteration_grid: Vec<usize>,
    pub sweep_n_links: Vec<f64>,
    pub sweep_pathloss_exponent: Vec<f64>,
    pub sweep_shadowing_std: Vec<f64>,
}

impl Default for FigureParams {
    fn default() -> Self {
        Self {
            iteration_grid: vec![1, 2, 5, 10, 20, 40, 60, 100],
            sweep_n_links: vec![5.0, 10.0, 15.0, 20.0],
            sweep_pathloss_exponent: vec![2.0, 2.5, 3.0, 3.5],
            sweep_shadowing_std: vec![1.0, 4.0, 7.0, 10.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CliConfig {
    pub seed: u64,
    pub p_max_w: f64,
    /// Worker threads for the Monte-Carlo loops; 0 picks the machine's
    /// available parallelism. Results do not depend on this value.
    pub workers: usize,
    pub scenario: ScenarioSpec,
    pub propagation: PropagationParams,
    pub pgd: PgdConfig,
    pub train: TrainConfig,
    pub dupgd_arch: UnfoldedArch,
    pub online_from_pretrained: bool,
    pub n_realizations: usize,
    pub methods: Vec<MethodId>,
    pub figure: FigureParams,
    /// Whether `train.seed` was set explicitly; when not, it derives from
    /// the global seed so training and evaluation streams stay disjoint.
    #[serde(skip)]
    train_seed_explicit: bool,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            p_max_w: 10.0,
            workers: 0,
            scenario: ScenarioSpec::default(),
            propagation: PropagationParams::default(),
            pgd: PgdConfig::default(),
            train: TrainConfig::default(),
            dupgd_arch: UnfoldedArch::default(),
            online_from_pretrained: false,
            n_realizations: 500,
            methods: MethodId::ALL.to_vec(),
            figure: FigureParams::default(),
            train_seed_explicit: false,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| {
        Error::InvalidConfig(format!(
            "{key}: cannot parse `{value}` as {}",
            std::any::type_name::<T>()
        ))
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::InvalidConfig(format!(
            "{key}: expected true or false, got `{other}`"
        ))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num::<T>(key, s))
        .collect()
}

impl CliConfig {
    /// Applies one `key = value` pair. Unknown keys are errors.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse_num(key, v)?,
            "p_max_w" => self.p_max_w = parse_num(key, v)?,
            "workers" => self.workers = parse_num(key, v)?,

            "scenario.area_m_x" => self.scenario.area_m[0] = parse_num(key, v)?,
            "scenario.area_m_y" => self.scenario.area_m[1] = parse_num(key, v)?,
            "scenario.n_links" => self.scenario.n_links = parse_num(key, v)?,
            "scenario.max_pair_distance_m" => {
                self.scenario.max_pair_distance_m = match v {
                    "none" => None,
                    other => Some(parse_num(key, other)?),
                }
            }

            "propagation.carrier_freq_hz" => self.propagation.carrier_freq_hz = parse_num(key, v)?,
            "propagation.pathloss_exponent" => {
                self.propagation.pathloss_exponent = parse_num(key, v)?
            }
            "propagation.shadowing_std_db" => {
                self.propagation.shadowing_std_db = parse_num(key, v)?
            }
            "propagation.noise_power_w" => self.propagation.noise_power_w = parse_num(key, v)?,
            "propagation.bandwidth_hz" => self.propagation.bandwidth_hz = parse_num(key, v)?,
            "propagation.literal_eq10" => self.propagation.literal_eq10 = parse_bool(key, v)?,

            "pgd.step_size" => self.pgd.step_size = parse_num(key, v)?,
            "pgd.max_iters" => self.pgd.max_iters = parse_num(key, v)?,
            "pgd.record_trajectory" => self.pgd.record_trajectory = parse_bool(key, v)?,
            "pgd.init" => {
                self.pgd.init = match v {
                    "max_power" => PgdInit::MaxPower,
                    "uniform_random" => PgdInit::UniformRandom,
                    other => match other.strip_prefix("constant:") {
                        Some(c) => PgdInit::Constant(parse_num(key, c)?),
                        None => {
                            return Err(Error::InvalidConfig(format!(
                                "{key}: expected max_power, uniform_random or constant:<watts>, \
                                 got `{other}`"
                            )))
                        }
                    },
                }
            }
            "pgd.rel_tol" => {
                self.pgd.rel_tol = match v {
                    "none" => None,
                    other => Some(parse_num(key, other)?),
                }
            }

            "train.batch_size" => self.train.batch_size = parse_num(key, v)?,
            "train.optimizer_lr" => self.train.optimizer_lr = parse_num(key, v)?,
            "train.adam_beta1" => self.train.adam_beta1 = parse_num(key, v)?,
            "train.adam_beta2" => self.train.adam_beta2 = parse_num(key, v)?,
            "train.adam_eps" => self.train.adam_eps = parse_num(key, v)?,
            "train.n_batches" => self.train.n_batches = parse_num(key, v)?,
            "train.online_steps" => self.train.online_steps = parse_num(key, v)?,
            "train.init_step_size" => self.train.init_step_size = parse_num(key, v)?,
            "train.seed" => {
                self.train.seed = parse_num(key, v)?;
                self.train_seed_explicit = true;
            }
            "train.online_schedule" => {
                self.train.online_schedule = match v {
                    "whole_unroll" => OnlineSchedule::WholeUnroll,
                    "layer_wise" => OnlineSchedule::LayerWise,
                    other => {
                        return Err(Error::InvalidConfig(format!(
                            "{key}: expected whole_unroll or layer_wise, got `{other}`"
                        )))
                    }
                }
            }
            "train.online_from_pretrained" => {
                self.online_from_pretrained = parse_bool(key, v)?
            }

            "dupgd.n_layers" => self.dupgd_arch.n_layers = parse_num(key, v)?,
            "dupgd.hidden_width" => self.dupgd_arch.hidden_width = parse_num(key, v)?,
            "dupgd.variant" => {
                self.dupgd_arch.variant = match v {
                    "scalar_step" => Variant::ScalarStep,
                    "mlp_layer" => Variant::MlpLayer,
                    other => {
                        return Err(Error::InvalidConfig(format!(
                            "{key}: expected scalar_step or mlp_layer, got `{other}`"
                        )))
                    }
                }
            }

            "experiment.n_realizations" => self.n_realizations = parse_num(key, v)?,
            "experiment.methods" => {
                let methods: Result<Vec<MethodId>> = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::parse)
                    .collect();
                self.methods = methods?;
            }

            "figure.iteration_grid" => self.figure.iteration_grid = parse_list(key, v)?,
            "figure.sweep_n_links" => self.figure.sweep_n_links = parse_list(key, v)?,
            "figure.sweep_pathloss_exponent" => {
                self.figure.sweep_pathloss_exponent = parse_list(key, v)?
            }
            "figure.sweep_shadowing_std" => {
                self.figure.sweep_shadowing_std = parse_list(key, v)?
            }

            unknown => {
                return Err(Error::InvalidConfig(format!(
                    "unknown config key `{unknown}`"
                )))
            }
        }
        Ok(())
    }

    /// Applies every `key = value` line of a config file. `#` starts a
    /// comment; blank lines are skipped.
    pub fn apply_file_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            self.apply(key.trim(), value)?;
        }
        Ok(())
    }

    /// Resolves derived defaults and checks every constraint.
    pub fn finalize(mut self) -> Result<Self> {
        if !self.train_seed_explicit {
            // Different key material than the experiment substreams.
            self.train.seed = self.seed.wrapping_add(0x7452_4149_4e00);
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.propagation.validate()?;
        self.pgd.validate()?;
        self.train.validate()?;
        self.dupgd_arch.validate()?;
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

    pub fn to_experiment_config(&self) -> ExperimentConfig {
        ExperimentConfig {
            scenario: self.scenario.clone(),
            propagation: self.propagation.clone(),
            methods: self.methods.clone(),
            n_realizations: self.n_realizations,
            pgd: self.pgd.clone(),
            dupgd: DupgdConfig {
                arch: self.dupgd_arch,
                train: self.train.clone(),
                online_from_pretrained: self.online_from_pretrained,
            },
            p_max_w: self.p_max_w,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_keeps_reference_defaults() {
        let cfg = CliConfig::default().finalize().unwrap();
        assert_eq!(cfg.scenario.n_links, 20);
        assert_eq!(cfg.pgd.step_size, 0.1);
        assert_eq!(cfg.pgd.max_iters, 1000);
        assert_eq!(cfg.dupgd_arch.n_layers, 40);
        assert_eq!(cfg.dupgd_arch.hidden_width, 64);
        assert_eq!(cfg.train.batch_size, 64);
        assert_eq!(cfg.p_max_w, 10.0);
        assert_eq!(cfg.n_realizations, 500);
    }

    #[test]
    fn file_text_applies_in_order() {
        let mut cfg = CliConfig::default();
        cfg.apply_file_text(
            "# comment\n\
             seed = 9\n\
             scenario.n_links = 4   # trailing comment\n\
             scenario.max_pair_distance_m = 3\n\
             experiment.methods = max_power, pgd\n",
        )
        .unwrap();
        let cfg = cfg.finalize().unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.scenario.n_links, 4);
        assert_eq!(cfg.scenario.max_pair_distance_m, Some(3.0));
        assert_eq!(cfg.methods, vec![MethodId::MaxPower, MethodId::Pgd]);
    }

    #[test]
    fn unknown_keys_and_bad_values_name_the_key() {
        let mut cfg = CliConfig::default();
        let err = cfg.apply("scenario.frobnicate", "1").unwrap_err();
        assert!(err.to_string().contains("scenario.frobnicate"));
        let err = cfg.apply("pgd.step_size", "fast").unwrap_err();
        assert!(err.to_string().contains("pgd.step_size"));
    }

    #[test]
    fn constraint_violations_fail_finalize() {
        let mut cfg = CliConfig::default();
        cfg.apply("pgd.step_size", "1.5").unwrap();
        assert!(cfg.finalize().is_err());
    }

    #[test]
    fn train_seed_derives_from_global_seed_unless_set() {
        let mut a = CliConfig::default();
        a.apply("seed", "5").unwrap();
        let a = a.finalize().unwrap();
        assert_ne!(a.train.seed, 5);

        let mut b = CliConfig::default();
        b.apply("seed", "5").unwrap();
        b.apply("train.seed", "123").unwrap();
        let b = b.finalize().unwrap();
        assert_eq!(b.train.seed, 123);
    }

    #[test]
    fn pgd_init_forms_parse() {
        let mut cfg = CliConfig::default();
        cfg.apply("pgd.init", "constant:2.5").unwrap();
        assert_eq!(cfg.pgd.init, PgdInit::Constant(2.5));
        cfg.apply("pgd.init", "uniform_random").unwrap();
        assert_eq!(cfg.pgd.init, PgdInit::UniformRandom);
        assert!(cfg.apply("pgd.init", "warm").is_err());
    }
}
