//! Flat key=value experiment configuration.
//!
//! One `key = value` pair per line, `#` comments. Unknown keys are rejected
//! so typos fail loudly. Every typed accessor records the effective value
//! (default or explicit), and `resolved_echo` emits the complete
//! configuration actually used - rerunning from that echo reproduces the
//! run byte for byte.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::path::Path;

use whlab_core::autoencoder::{Domain, ModelConfig, TrainConfig};
use whlab_core::evaluate::StopRule;
use whlab_core::neural::Activation;
use whlab_core::polar::Construction;
use whlab_core::powermodel::{ConverterKind, PowerConfig};

/// Keys a configuration may contain (power.polar_energy_<L> is matched as a
/// prefix family).
const KNOWN_KEYS: &[&str] = &[
    "seed",
    "model.n",
    "model.k",
    "model.q",
    "model.v",
    "model.domain",
    "model.activation",
    "model.batch_norm",
    "model.dropout",
    "model.l2",
    "train.s_db",
    "train.delta_db",
    "train.batch",
    "train.enc_steps",
    "train.dec_steps",
    "train.epochs",
    "train.lr",
    "train.lr_floor",
    "train.patience",
    "train.val_size",
    "eval.snr_grid",
    "eval.target_bler",
    "eval.min_errors",
    "eval.max_blocks",
    "power.eta",
    "power.f_s",
    "power.converters",
    "power.polar_ref_n",
    "polar.list_size",
    "polar.crc_len",
    "polar.construction",
];

/// Keys whose comma-separated values a sweep expands over.
pub const SWEEPABLE_KEYS: &[&str] = &[
    "model.q",
    "model.v",
    "model.domain",
    "train.s_db",
    "polar.list_size",
];

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Clone, Debug, Default)]
pub struct Config {
    pairs: BTreeMap<String, String>,
    /// Effective values consumed so far, for the resolved echo.
    resolved: RefCell<BTreeMap<String, String>>,
}

impl Config {
    pub fn from_str(text: &str) -> Result<Self> {
        let mut pairs = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                ConfigError(format!("line {}: expected key = value", lineno + 1))
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if pairs.insert(key.clone(), value).is_some() {
                return Err(ConfigError(format!("duplicate key {key}")));
            }
        }
        let cfg = Self {
            pairs,
            resolved: RefCell::new(BTreeMap::new()),
        };
        cfg.reject_unknown_keys()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::from_str(&text)
    }

    fn reject_unknown_keys(&self) -> Result<()> {
        for key in self.pairs.keys() {
            let known = KNOWN_KEYS.contains(&key.as_str())
                || key
                    .strip_prefix("power.polar_energy_")
                    .is_some_and(|l| l.parse::<usize>().is_ok());
            if !known {
                return Err(ConfigError(format!("unknown key {key}")));
            }
        }
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.pairs.get(key).map(String::as_str)
    }

    /// Overrides a value (flag precedence), keeping the echo consistent.
    pub fn set(&mut self, key: &str, value: String) {
        self.pairs.insert(key.to_string(), value);
    }

    fn lookup(&self, key: &str, default: Option<&str>) -> Result<String> {
        let value = match self.pairs.get(key) {
            Some(v) => v.clone(),
            None => default
                .ok_or_else(|| ConfigError(format!("missing required key {key}")))?
                .to_string(),
        };
        self.resolved
            .borrow_mut()
            .insert(key.to_string(), value.clone());
        Ok(value)
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, default: Option<&str>) -> Result<T> {
        let value = self.lookup(key, default)?;
        value
            .parse()
            .map_err(|_| ConfigError(format!("bad value for {key}: {value:?}")))
    }

    pub fn seed(&self) -> Result<u64> {
        self.parse("seed", Some("1"))
    }

    pub fn model_n(&self) -> Result<usize> {
        self.parse("model.n", None)
    }

    pub fn model_k(&self) -> Result<usize> {
        self.parse("model.k", None)
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let activation = match self.lookup("model.activation", Some("leaky_relu:0.01"))?.as_str() {
            "relu" => Activation::Relu,
            other => match other.strip_prefix("leaky_relu:") {
                Some(s) => Activation::LeakyRelu(
                    s.parse()
                        .map_err(|_| ConfigError(format!("bad leaky_relu slope {s:?}")))?,
                ),
                None => {
                    return Err(ConfigError(format!(
                        "model.activation must be relu or leaky_relu:<slope>, got {other:?}"
                    )))
                }
            },
        };
        let dropout = match self.lookup("model.dropout", Some("none"))?.as_str() {
            "none" => None,
            s => Some(
                s.parse()
                    .map_err(|_| ConfigError(format!("bad model.dropout {s:?}")))?,
            ),
        };
        let l2 = match self.lookup("model.l2", Some("1e-5"))?.as_str() {
            "none" => None,
            s => Some(
                s.parse()
                    .map_err(|_| ConfigError(format!("bad model.l2 {s:?}")))?,
            ),
        };
        let domain = match self.lookup("model.domain", Some("walsh"))?.as_str() {
            "walsh" => Domain::Walsh,
            "time" => Domain::Time,
            other => {
                return Err(ConfigError(format!(
                    "model.domain must be walsh or time, got {other:?}"
                )))
            }
        };
        let cfg = ModelConfig {
            n: self.parse("model.n", None)?,
            k: self.parse("model.k", None)?,
            q: self.parse("model.q", None)?,
            v: self.parse("model.v", None)?,
            activation,
            batch_norm: self.parse("model.batch_norm", Some("true"))?,
            dropout,
            l2,
            domain,
        };
        cfg.validate()
            .map_err(|e| ConfigError(format!("invalid model configuration: {e}")))?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let tcfg = TrainConfig {
            snr_offset_db: self.parse("train.s_db", Some("3"))?,
            decoder_snr_half_range_db: self.parse("train.delta_db", Some("2"))?,
            batch_size: self.parse("train.batch", Some("1024"))?,
            enc_steps: self.parse("train.enc_steps", Some("10"))?,
            dec_steps: self.parse("train.dec_steps", Some("30"))?,
            max_epochs: self.parse("train.epochs", Some("60"))?,
            initial_lr: self.parse("train.lr", Some("1e-3"))?,
            lr_floor: self.parse("train.lr_floor", Some("1e-10"))?,
            patience: self.parse("train.patience", Some("20"))?,
            val_size: self.parse("train.val_size", Some("8192"))?,
            seed: self.seed()?,
        };
        tcfg.validate()
            .map_err(|e| ConfigError(format!("invalid training configuration: {e}")))?;
        Ok(tcfg)
    }

    /// `start:step:stop` in dB, inclusive of the stop point.
    pub fn snr_grid(&self) -> Result<Vec<f64>> {
        let spec = self.lookup("eval.snr_grid", None)?;
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            return Err(ConfigError(format!(
                "eval.snr_grid must be start:step:stop, got {spec:?}"
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse()
                .map_err(|_| ConfigError(format!("bad number {s:?} in eval.snr_grid")))
        };
        let (start, step, stop) = (parse(parts[0])?, parse(parts[1])?, parse(parts[2])?);
        if step <= 0.0 || stop < start {
            return Err(ConfigError(format!(
                "eval.snr_grid must ascend with positive step, got {spec:?}"
            )));
        }
        let mut grid = Vec::new();
        let mut i = 0usize;
        loop {
            let v = start + step * i as f64;
            if v > stop + 1e-9 {
                break;
            }
            grid.push(v);
            i += 1;
        }
        Ok(grid)
    }

    pub fn target_bler(&self) -> Result<f64> {
        let t: f64 = self.parse("eval.target_bler", Some("1e-3"))?;
        if !(0.0 < t && t < 1.0) {
            return Err(ConfigError(format!("eval.target_bler {t} outside (0,1)")));
        }
        Ok(t)
    }

    pub fn stop_rule(&self) -> Result<StopRule> {
        Ok(StopRule {
            min_block_errors: self.parse("eval.min_errors", Some("100"))?,
            max_blocks: self.parse("eval.max_blocks", Some("10000000"))?,
        })
    }

    pub fn power_config(&self) -> Result<PowerConfig> {
        let mut pcfg = PowerConfig {
            eta_ops_per_joule: self.parse("power.eta", Some("8e14"))?,
            sample_rate_hz: self.parse("power.f_s", Some("5e9"))?,
            interleave_order: self.parse("model.n", None)?,
            polar_ref_block_len: self.parse("power.polar_ref_n", Some("256"))?,
            ..PowerConfig::default()
        };
        for (key, value) in &self.pairs {
            if let Some(l) = key.strip_prefix("power.polar_energy_") {
                let list: usize = l
                    .parse()
                    .map_err(|_| ConfigError(format!("bad list size in {key}")))?;
                let joules: f64 = value
                    .parse()
                    .map_err(|_| ConfigError(format!("bad value for {key}: {value:?}")))?;
                pcfg.polar_energy_per_block_ref.insert(list, joules);
                self.resolved
                    .borrow_mut()
                    .insert(key.clone(), value.clone());
            }
        }
        Ok(pcfg)
    }

    /// walsh | ti | polar
    pub fn converters(&self) -> Result<String> {
        let kind = self.lookup("power.converters", Some("walsh"))?;
        match kind.as_str() {
            "walsh" | "ti" | "polar" => Ok(kind),
            other => Err(ConfigError(format!(
                "power.converters must be walsh, ti or polar, got {other:?}"
            ))),
        }
    }

    pub fn converter_kind(&self) -> Result<ConverterKind> {
        Ok(match self.converters()?.as_str() {
            "walsh" => ConverterKind::Walsh,
            _ => ConverterKind::TimeInterleaved,
        })
    }

    pub fn polar_list_size(&self) -> Result<usize> {
        self.parse("polar.list_size", Some("8"))
    }

    pub fn polar_crc_len(&self) -> Result<usize> {
        self.parse("polar.crc_len", Some("6"))
    }

    pub fn polar_construction(&self) -> Result<Construction> {
        let raw = self.lookup("polar.construction", Some("nr5g"))?;
        match raw.as_str() {
            "nr5g" => Ok(Construction::Nr5g),
            other => match other.strip_prefix("bhattacharyya:") {
                Some(db) => Ok(Construction::Bhattacharyya {
                    design_snr_db: db
                        .parse()
                        .map_err(|_| ConfigError(format!("bad design SNR {db:?}")))?,
                }),
                None => Err(ConfigError(format!(
                    "polar.construction must be nr5g or bhattacharyya:<dB>, got {other:?}"
                ))),
            },
        }
    }

    /// Echo of the raw pairs as written (sweep lists preserved).
    pub fn raw_echo(&self, command: &str) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "# whlab {} — configuration as given\n# command = {command}\n",
            env!("CARGO_PKG_VERSION")
        ));
        for (key, value) in &self.pairs {
            out.push_str(&format!("{key} = {value}\n"));
        }
        out
    }

    /// All pairs, for sweep expansion.
    pub fn pairs(&self) -> &BTreeMap<String, String> {
        &self.pairs
    }

    /// Builds a config from explicit pairs (sweep points).
    pub fn from_pairs(pairs: BTreeMap<String, String>) -> Result<Self> {
        let cfg = Self {
            pairs,
            resolved: RefCell::new(BTreeMap::new()),
        };
        cfg.reject_unknown_keys()?;
        Ok(cfg)
    }

    /// Complete key=value echo of every value this run consumed.
    pub fn resolved_echo(&self, command: &str) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "# whlab {} — resolved configuration\n# command = {command}\n",
            env!("CARGO_PKG_VERSION")
        ));
        for (key, value) in self.resolved.borrow().iter() {
            out.push_str(&format!("{key} = {value}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects_unknown_keys() {
        let cfg = Config::from_str("model.n = 16 # block\nseed = 7\n").unwrap();
        assert_eq!(cfg.raw("model.n"), Some("16"));
        assert_eq!(cfg.seed().unwrap(), 7);
        assert!(Config::from_str("model.blocksize = 16\n").is_err());
        assert!(Config::from_str("model.n 16\n").is_err());
        assert!(Config::from_str("seed = 1\nseed = 2\n").is_err());
    }

    #[test]
    fn snr_grid_expansion() {
        let cfg = Config::from_str("eval.snr_grid = 0:0.5:2\n").unwrap();
        assert_eq!(cfg.snr_grid().unwrap(), vec![0.0, 0.5, 1.0, 1.5, 2.0]);
        let bad = Config::from_str("eval.snr_grid = 2:0.5:0\n").unwrap();
        assert!(bad.snr_grid().is_err());
    }

    #[test]
    fn resolved_echo_round_trips() {
        let cfg =
            Config::from_str("model.n = 8\nmodel.k = 4\nmodel.q = 8\nmodel.v = 1\n").unwrap();
        let _ = cfg.model_config().unwrap();
        let _ = cfg.seed().unwrap();
        let echo = cfg.resolved_echo("train");
        let back = Config::from_str(&echo).unwrap();
        let _ = back.model_config().unwrap();
        let _ = back.seed().unwrap();
        assert_eq!(back.resolved_echo("train"), echo);
    }

    #[test]
    fn polar_energy_family_keys() {
        let cfg = Config::from_str("model.n = 32\npower.polar_energy_8 = 5e-8\n").unwrap();
        let pcfg = cfg.power_config().unwrap();
        assert_eq!(pcfg.polar_energy_per_block_ref[&8], 5e-8);
        assert!(Config::from_str("power.polar_energy_x = 5e-8\n").is_err());
    }
}
