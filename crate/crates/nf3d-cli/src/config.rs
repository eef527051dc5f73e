//! Run configuration: defaults from the codec, overridable by a flat
//! `key = value` config file, overridden in turn by command-line flags.

use std::path::Path;

use nf3d::error::{Error, Result};
use nf3d::field::HeadActivation;
use nf3d::oracle::DistanceKind;
use nf3d::pipeline::{defaults, CodecConfig};
use nf3d::train::TrainConfig;

/// Every tunable of an encode/sweep run, flattened for file and flag
/// round-tripping. Field names double as the config-file keys.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub kind: String,
    pub width: usize,
    pub widths: Vec<usize>,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda_l1: f64,
    pub lambda_attr: f64,
    pub sigma: Option<f64>,
    pub d_star: f64,
    pub bitwidth: u8,
    pub omega0: f64,
    pub enc_levels: usize,
    pub sigma_p: f64,
    pub num_hidden: usize,
    pub m_total: usize,
    pub qat_epochs: usize,
    pub qat_lr: f64,
    pub r_mc: usize,
    pub eval_points: usize,
    pub seed_params: Option<u64>,
    pub seed_data: Option<u64>,
    pub joint: bool,
    pub attributes: bool,
    pub attr_width: Option<usize>,
    pub activation: String,
    pub truncated: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            kind: "udf".into(),
            width: 32,
            widths: defaults::SWEEP_WIDTHS.to_vec(),
            lr: defaults::LEARNING_RATE,
            epochs: defaults::EPOCHS,
            batch_size: defaults::BATCH_SIZE,
            lambda_l1: defaults::LAMBDA_L1,
            lambda_attr: defaults::LAMBDA_ATTR,
            sigma: None,
            d_star: defaults::D_STAR,
            bitwidth: defaults::BITWIDTH,
            omega0: defaults::OMEGA0,
            enc_levels: defaults::ENC_LEVELS_GEOMETRY,
            sigma_p: defaults::SIGMA_P,
            num_hidden: defaults::NUM_HIDDEN,
            m_total: defaults::TRAIN_SET_SIZE,
            qat_epochs: defaults::QAT_EPOCHS,
            qat_lr: defaults::QAT_LR,
            r_mc: defaults::MC_RESOLUTION,
            eval_points: defaults::EVAL_POINTS,
            seed_params: None,
            seed_data: None,
            joint: false,
            attributes: false,
            attr_width: None,
            activation: "default".into(),
            truncated: true,
        }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl RunConfig {
    pub fn distance_kind(&self) -> Result<DistanceKind> {
        match self.kind.as_str() {
            "udf" => Ok(DistanceKind::Unsigned),
            "sdf" => Ok(DistanceKind::Signed),
            other => Err(config_err(format!("kind must be udf or sdf, got '{other}'"))),
        }
    }

    pub fn head(&self) -> Result<Option<HeadActivation>> {
        match self.activation.as_str() {
            "default" => Ok(None),
            "abs" => Ok(Some(HeadActivation::Abs)),
            "relu" => Ok(Some(HeadActivation::Relu)),
            "identity" | "linear" => Ok(Some(HeadActivation::Identity)),
            other => Err(config_err(format!(
                "activation must be default/abs/relu/identity, got '{other}'"
            ))),
        }
    }

    /// Materialize the library-level codec configuration; seeds must have
    /// been resolved (drawn and printed) beforehand.
    pub fn codec_config(&self) -> Result<CodecConfig<f64>> {
        if self.lr <= 0.0 {
            return Err(config_err("lr must be positive"));
        }
        let mut cfg = CodecConfig::new(self.distance_kind()?, self.width);
        cfg.levels = self.enc_levels;
        cfg.sigma_p = self.sigma_p;
        cfg.omega0 = self.omega0;
        cfg.num_hidden = self.num_hidden;
        cfg.d_star = self.d_star;
        cfg.head = self.head()?;
        cfg.truncated = self.truncated;
        cfg.sigma = self.sigma;
        cfg.m_total = self.m_total;
        cfg.bitwidth = self.bitwidth;
        cfg.train = TrainConfig {
            lr: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lambda_l1: self.lambda_l1,
            lambda_attr: self.lambda_attr,
            param_seed: self.seed_params.unwrap_or(0),
            ..TrainConfig::default()
        };
        cfg.qat = TrainConfig {
            epochs: self.qat_epochs,
            lr: self.qat_lr,
            lambda_l1: self.lambda_l1,
            lambda_attr: self.lambda_attr,
            param_seed: self.seed_params.unwrap_or(0),
            batch_size: self.batch_size,
            ..TrainConfig::qat()
        };
        cfg.data_seed = self.seed_data.unwrap_or(0);
        cfg.joint = self.joint;
        cfg.attributes = self.attributes;
        cfg.attr_width = self.attr_width;
        cfg.r_mc = self.r_mc;
        cfg.eval_points = self.eval_points;
        Ok(cfg)
    }

    /// Serialize as the flat `key = value` format; `parse` of the output
    /// reproduces the config exactly.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        put("kind", self.kind.clone());
        put("width", self.width.to_string());
        put(
            "widths",
            self.widths.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(","),
        );
        put("lr", self.lr.to_string());
        put("epochs", self.epochs.to_string());
        put("batch_size", self.batch_size.to_string());
        put("lambda_l1", self.lambda_l1.to_string());
        put("lambda_attr", self.lambda_attr.to_string());
        if let Some(s) = self.sigma {
            put("sigma", s.to_string());
        }
        put("d_star", self.d_star.to_string());
        put("bitwidth", self.bitwidth.to_string());
        put("omega0", self.omega0.to_string());
        put("enc_levels", self.enc_levels.to_string());
        put("sigma_p", self.sigma_p.to_string());
        put("num_hidden", self.num_hidden.to_string());
        put("m_total", self.m_total.to_string());
        put("qat_epochs", self.qat_epochs.to_string());
        put("qat_lr", self.qat_lr.to_string());
        put("r_mc", self.r_mc.to_string());
        put("eval_points", self.eval_points.to_string());
        if let Some(s) = self.seed_params {
            put("seed_params", s.to_string());
        }
        if let Some(s) = self.seed_data {
            put("seed_data", s.to_string());
        }
        put("joint", self.joint.to_string());
        put("attributes", self.attributes.to_string());
        if let Some(w) = self.attr_width {
            put("attr_width", w.to_string());
        }
        put("activation", self.activation.clone());
        put("truncated", self.truncated.to_string());
        out
    }

    /// Apply `key = value` lines on top of the current values. Unknown keys
    /// are rejected so typos fail loudly.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_err(format!("line {}: expected key = value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let bad =
                |what: &str| config_err(format!("line {}: bad {what} '{value}'", lineno + 1));
            match key {
                "kind" => self.kind = value.into(),
                "width" => self.width = value.parse().map_err(|_| bad("width"))?,
                "widths" => {
                    self.widths = value
                        .split(',')
                        .map(|t| t.trim().parse())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad("widths"))?
                }
                "lr" => self.lr = value.parse().map_err(|_| bad("lr"))?,
                "epochs" => self.epochs = value.parse().map_err(|_| bad("epochs"))?,
                "batch_size" => self.batch_size = value.parse().map_err(|_| bad("batch_size"))?,
                "lambda_l1" => self.lambda_l1 = value.parse().map_err(|_| bad("lambda_l1"))?,
                "lambda_attr" => {
                    self.lambda_attr = value.parse().map_err(|_| bad("lambda_attr"))?
                }
                "sigma" => self.sigma = Some(value.parse().map_err(|_| bad("sigma"))?),
                "d_star" => self.d_star = value.parse().map_err(|_| bad("d_star"))?,
                "bitwidth" => self.bitwidth = value.parse().map_err(|_| bad("bitwidth"))?,
                "omega0" => self.omega0 = value.parse().map_err(|_| bad("omega0"))?,
                "enc_levels" => self.enc_levels = value.parse().map_err(|_| bad("enc_levels"))?,
                "sigma_p" => self.sigma_p = value.parse().map_err(|_| bad("sigma_p"))?,
                "num_hidden" => self.num_hidden = value.parse().map_err(|_| bad("num_hidden"))?,
                "m_total" => self.m_total = value.parse().map_err(|_| bad("m_total"))?,
                "qat_epochs" => self.qat_epochs = value.parse().map_err(|_| bad("qat_epochs"))?,
                "qat_lr" => self.qat_lr = value.parse().map_err(|_| bad("qat_lr"))?,
                "r_mc" => self.r_mc = value.parse().map_err(|_| bad("r_mc"))?,
                "eval_points" => {
                    self.eval_points = value.parse().map_err(|_| bad("eval_points"))?
                }
                "seed_params" => {
                    self.seed_params = Some(value.parse().map_err(|_| bad("seed_params"))?)
                }
                "seed_data" => {
                    self.seed_data = Some(value.parse().map_err(|_| bad("seed_data"))?)
                }
                "joint" => self.joint = value.parse().map_err(|_| bad("joint"))?,
                "attributes" => self.attributes = value.parse().map_err(|_| bad("attributes"))?,
                "attr_width" => {
                    self.attr_width = Some(value.parse().map_err(|_| bad("attr_width"))?)
                }
                "activation" => self.activation = value.into(),
                "truncated" => self.truncated = value.parse().map_err(|_| bad("truncated"))?,
                other => {
                    return Err(config_err(format!("line {}: unknown key '{other}'", lineno + 1)))
                }
            }
        }
        Ok(())
    }

    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        self.apply_kv(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_roundtrip_is_exact() {
        let mut cfg = RunConfig::default();
        cfg.kind = "sdf".into();
        cfg.sigma = Some(0.015);
        cfg.seed_params = Some(42);
        cfg.seed_data = Some(7);
        cfg.attr_width = Some(24);
        cfg.joint = true;
        let text = cfg.to_kv();
        let mut back = RunConfig::default();
        back.apply_kv(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let mut cfg = RunConfig::default();
        assert!(cfg.apply_kv("no_such_key = 1").is_err());
    }

    #[test]
    fn comments_and_blanks_are_skipped() {
        let mut cfg = RunConfig::default();
        cfg.apply_kv("# comment\n\nwidth = 48\n").unwrap();
        assert_eq!(cfg.width, 48);
    }

    #[test]
    fn invalid_kind_rejected_at_materialization() {
        let mut cfg = RunConfig::default();
        cfg.kind = "nope".into();
        assert!(cfg.codec_config().is_err());
    }
}
