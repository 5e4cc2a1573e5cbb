//! Run configuration: a TOML file with one section per module, defaults for
//! every key, and `section.key=value` overrides restricted to known keys.

use std::fmt;

use itrdma::experiments::{linear_grid, ChannelSettings, ExperimentConfig};
use itrdma::link::Constellation;
use itrdma::precoder::{ItrdmaParams, PrecoderKind};
use serde::{Deserialize, Serialize};

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub n_users: usize,
    pub n_antennas: usize,
    pub n_taps: usize,
    pub decay_taps: f64,
    pub tap_interval: f64,
    pub carrier_wavelength: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrecoderSection {
    pub kind: PrecoderKind,
    pub epsilon: f64,
    pub n_max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSection {
    pub snr_db: f64,
    pub constellation: String,
    pub ber_symbols: usize,
    pub symbol_spacing: usize,
    pub ber_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentsSection {
    pub ensemble_size: usize,
    pub iterations: Vec<usize>,
    pub mobility_iterations: Vec<usize>,
    pub profile_iterations: usize,
    pub target_user: usize,
    pub snr_db: f64,
    pub speed_snr_db: Vec<f64>,
    pub displacement_max: f64,
    pub displacement_step: f64,
    pub coherence_multiplier: f64,
    pub tau: f64,
    pub speed_max: f64,
    pub speed_step: f64,
    pub half_strength_distance: f64,
    pub table_taus: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileFormat {
    Binary,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Worker threads; 0 uses every available processor.
    pub threads: usize,
    pub file_format: FileFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub channel: ChannelSection,
    pub precoder: PrecoderSection,
    pub link: LinkSection,
    pub experiments: ExperimentsSection,
    pub run: RunSection,
}

pub const DEFAULTS_TOML: &str = r#"# itrdma configuration. Every key is listed with its default value.

[channel]
n_users = 2                 # receiving users N
n_antennas = 8              # transmit antennas M
n_taps = 256                # taps per impulse response L
decay_taps = 64.0           # exponential power-delay decay constant, taps ("inf" for flat)
tap_interval = 1e-8         # seconds between taps
carrier_wavelength = 0.15   # meters
seed = 1                    # channel seed; sweeps use seed .. seed + ensemble_size - 1

[precoder]
kind = "itrdma"             # "tr" or "itrdma"
epsilon = 0.001             # stop once max |residual| <= epsilon
n_max = 50                  # iteration cap

[link]
snr_db = 30.0               # operating SNR against the TR reference peak
constellation = "qpsk"      # "bpsk" or "qpsk"
ber_symbols = 0             # symbols per user for the BER estimate; 0 skips it
symbol_spacing = 1          # taps between consecutive symbols
ber_seed = 7

[experiments]
ensemble_size = 30
iterations = [0, 10, 20, 50, 100, 200, 400]
mobility_iterations = [0, 20, 50]   # 0 is TR
profile_iterations = 50
target_user = 0             # focused and moving user
snr_db = 30.0               # displacement sweep SNR
speed_snr_db = [2.0, 10.0]  # speed sweep SNRs
displacement_max = 0.2      # meters
displacement_step = 0.0025  # meters
coherence_multiplier = 1.0  # scales the spatial coherence length
tau = 0.001                 # channel age, seconds
speed_max = 150.0           # m/s
speed_step = 2.5            # m/s
half_strength_distance = 0.03   # meters
table_taus = [0.05, 0.01, 0.001] # seconds

[run]
threads = 0                 # worker threads, 0 = all processors; never changes outputs
file_format = "binary"      # CIR and precoder files: "binary" or "json"
"#;

impl Default for Config {
    fn default() -> Self {
        toml::from_str(DEFAULTS_TOML).expect("built-in defaults parse")
    }
}

fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl Config {
    /// Defaults, then the file's keys, then `overrides` in order.
    pub fn load(file_text: Option<&str>, overrides: &[String], seed: Option<u64>) -> Result<Self, ConfigError> {
        let defaults = toml::Table::try_from(Config::default()).expect("defaults serialize");
        let mut table = defaults.clone();
        if let Some(text) = file_text {
            let file: toml::Table = toml::from_str(text).map_err(|e| ConfigError(format!("config parse: {}", e.message())))?;
            for (section, body) in file {
                let Some(toml::Value::Table(dst)) = table.get_mut(&section) else {
                    return Err(ConfigError(format!("unknown config section `{section}`")));
                };
                let toml::Value::Table(body) = body else {
                    return Err(ConfigError(format!("`{section}` must be a section")));
                };
                for (key, value) in body {
                    if !dst.contains_key(&key) {
                        return Err(ConfigError(format!("unknown config key `{section}.{key}`")));
                    }
                    dst.insert(key, value);
                }
            }
        }
        for o in overrides {
            let (path, raw) = o
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("override `{o}` is not key=value")))?;
            let (section, key) = path
                .trim()
                .split_once('.')
                .ok_or_else(|| ConfigError(format!("override key `{path}` must be section.key")))?;
            match table.get_mut(section) {
                Some(toml::Value::Table(dst)) if dst.contains_key(key) => {
                    dst.insert(key.to_string(), parse_value(raw.trim()));
                }
                _ => return Err(ConfigError(format!("unknown config key `{}`", path.trim()))),
            }
        }
        let mut cfg: Config =
            toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| ConfigError(format!("config: {}", e.message())))?;
        if let Some(s) = seed {
            cfg.channel.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        self.channel_settings()
            .spec(self.channel.seed)
            .validate()
            .map_err(|e| ConfigError(e.to_string()))?;
        self.itrdma_params().validate().map_err(|e| ConfigError(e.to_string()))?;
        self.constellation()?;
        if self.link.symbol_spacing == 0 {
            return Err(ConfigError("link.symbol_spacing must be >= 1".into()));
        }
        if !self.link.snr_db.is_finite() {
            return Err(ConfigError("link.snr_db must be finite".into()));
        }
        self.experiment_config()?.validate().map_err(|e| ConfigError(e.to_string()))
    }

    pub fn channel_settings(&self) -> ChannelSettings {
        let c = &self.channel;
        ChannelSettings {
            n_users: c.n_users,
            n_antennas: c.n_antennas,
            n_taps: c.n_taps,
            decay_taps: c.decay_taps,
            tap_interval: c.tap_interval,
            carrier_wavelength: c.carrier_wavelength,
        }
    }

    pub fn itrdma_params(&self) -> ItrdmaParams {
        ItrdmaParams {
            epsilon: self.precoder.epsilon,
            n_max: self.precoder.n_max,
        }
    }

    pub fn constellation(&self) -> Result<Constellation, ConfigError> {
        self.link.constellation.parse().map_err(|e: itrdma::Error| ConfigError(e.to_string()))
    }

    pub fn experiment_config(&self) -> Result<ExperimentConfig, ConfigError> {
        let e = &self.experiments;
        let grid = |max, step| linear_grid(max, step).map_err(|err| ConfigError(err.to_string()));
        if e.ensemble_size == 0 {
            return Err(ConfigError("experiments.ensemble_size must be >= 1".into()));
        }
        let seeds = (0..e.ensemble_size as u64)
            .map(|k| self.channel.seed.checked_add(k))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| ConfigError("seed range overflows u64".into()))?;
        Ok(ExperimentConfig {
            channel: self.channel_settings(),
            seeds,
            epsilon: self.precoder.epsilon,
            iterations: e.iterations.clone(),
            mobility_iterations: e.mobility_iterations.clone(),
            profile_iterations: e.profile_iterations,
            target_user: e.target_user,
            snr_db: e.snr_db,
            speed_snr_db: e.speed_snr_db.clone(),
            displacement_grid: grid(e.displacement_max, e.displacement_step)?,
            coherence_multiplier: e.coherence_multiplier,
            tau: e.tau,
            speed_grid: grid(e.speed_max, e.speed_step)?,
            half_strength_distance: e.half_strength_distance,
            table_taus: e.table_taus.clone(),
        })
    }

    /// Every output-affecting key; `run.threads` is left out since the
    /// thread count never changes outputs.
    fn hashed_view(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config json");
        v["run"].as_object_mut().expect("run section").remove("threads");
        v
    }

    /// SHA-256 of the compact JSON encoding of the hashed view.
    pub fn hash(&self) -> String {
        itrdma::experiments::sha256_hex(self.hashed_view().to_string().as_bytes())
    }

    pub fn echo_json(&self) -> String {
        let doc = serde_json::json!({
            "config_hash": self.hash(),
            "config": self.hashed_view(),
        });
        serde_json::to_string_pretty(&doc).expect("config json") + "\n"
    }
}
