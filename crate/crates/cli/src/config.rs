//! Run configuration: a flat `key = value` document.
//!
//! Keys carry a section prefix (`optimizer.lr = 0.0001`). `#` starts a
//! comment line. Every key may appear once; anything not set keeps the
//! value of the selected preset.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use hwdm_core::imaging::GammaMode;
use hwdm_core::{AdamConfig, BackboneConfig, ContrastiveConfig, GanConfig, LossWeights, PreprocessConfig, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// 32×32 images and a small backbone; trains in about a minute.
    Desk,
    /// 224×224 images with full-size layer widths. Very slow.
    Paper,
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            _ => Err(format!("unknown preset {s:?}; expected desk or paper")),
        }
    }
}

/// Settings of the synthetic data generator.
#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub size: usize,
    pub per_class: usize,
    /// When non-zero, generate this many samples at the imbalanced class
    /// shares instead of `per_class` each.
    pub imbalanced_total: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub preset: Preset,
    pub data: DataConfig,
    pub backbone: BackboneConfig,
    /// Its target size always equals the backbone image size.
    pub preprocess: PreprocessConfig,
    pub train: TrainConfig,
    pub folds: usize,
    pub gan: GanConfig,
    pub ssl: ContrastiveConfig,
    pub prune_fraction: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "config line {line}: {}", self.message),
            None => write!(f, "config: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn at(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError { line: Some(line), message: message.into() }
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let (backbone, lr, epochs) = match preset {
            Preset::Desk => (BackboneConfig::desk(), 1e-3, 60),
            Preset::Paper => (BackboneConfig::paper(), 1e-4, 100),
        };
        let preprocess = PreprocessConfig { target_size: backbone.image_size, ..PreprocessConfig::default() };
        Self {
            seed: 0,
            preset,
            data: DataConfig { size: backbone.image_size.0, per_class: 100, imbalanced_total: 0 },
            backbone,
            preprocess,
            train: TrainConfig {
                epochs,
                batch_size: 32,
                optimizer: AdamConfig::with_lr(lr),
                weights: LossWeights::default(),
                seed: 0,
            },
            folds: 5,
            gan: GanConfig::default(),
            ssl: ContrastiveConfig::default(),
            prune_fraction: 0.5,
        }
    }

    /// Parses `text` over the defaults of the preset it names (or
    /// `preset`, which wins). `seed` overrides the document's seed.
    pub fn parse(text: &str, preset: Option<Preset>, seed: Option<u64>) -> Result<Self, ConfigError> {
        let mut entries: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
        let mut order = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) =
                trimmed.split_once('=').ok_or_else(|| at(line, format!("expected `key = value`, got {trimmed:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(at(line, "missing key"));
            }
            if let Some((first, _)) = entries.insert(key, (line, value)) {
                return Err(at(line, format!("duplicate key {key:?} (first set on line {first})")));
            }
            order.push(key);
        }
        let preset = match (preset, entries.get("preset")) {
            (Some(p), _) => p,
            (None, Some(&(line, v))) => v.parse().map_err(|e: String| at(line, e))?,
            (None, None) => Preset::Desk,
        };
        let mut cfg = Self::preset(preset);
        let mut last_line: BTreeMap<&str, usize> = BTreeMap::new();
        for key in order {
            let (line, value) = entries[key];
            cfg.set(key, value).map_err(|m| at(line, m))?;
            last_line.insert(key.split_once('.').map_or(key, |(s, _)| s), line);
        }
        if let Some(seed) = seed {
            cfg.seed = seed;
        }
        cfg.train.seed = cfg.seed;
        cfg.preprocess.target_size = cfg.backbone.image_size;
        cfg.validate().map_err(|(section, message)| ConfigError { line: last_line.get(section).copied(), message })
    }

    fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        match key {
            "seed" => self.seed = num(v)?,
            "preset" => {}
            "data.size" => self.data.size = num(v)?,
            "data.per_class" => self.data.per_class = num(v)?,
            "data.imbalanced_total" => self.data.imbalanced_total = num(v)?,
            "backbone.image_size" => {
                let s = num(v)?;
                self.backbone.image_size = (s, s);
            }
            "backbone.patch_size" => self.backbone.patch_size = num(v)?,
            "backbone.embed_dim" => self.backbone.embed_dim = num(v)?,
            "backbone.num_heads" => self.backbone.num_heads = num(v)?,
            "backbone.vit_depth" => self.backbone.vit_depth = num(v)?,
            "backbone.cnn_channels" => self.backbone.cnn_channels = list(v)?,
            "backbone.gcn_dims" => self.backbone.gcn_dims = list(v)?,
            "backbone.fusion_dim" => self.backbone.fusion_dim = num(v)?,
            "backbone.attention_reduction" => self.backbone.attention_reduction = num(v)?,
            "preprocess.median_window" => self.preprocess.median_window = num(v)?,
            "preprocess.clahe_tile" => self.preprocess.clahe_tile = num(v)?,
            "preprocess.clahe_clip" => self.preprocess.clahe_clip = num(v)?,
            "preprocess.gamma" => {
                self.preprocess.gamma = if v == "adaptive" { GammaMode::Adaptive } else { GammaMode::Fixed(num(v)?) }
            }
            "preprocess.beta" => self.preprocess.beta = num(v)?,
            "preprocess.normalize" => self.preprocess.normalize = flag(v)?,
            "loss.alpha" => self.train.weights.alpha = num(v)?,
            "loss.beta" => self.train.weights.beta = num(v)?,
            "loss.gamma" => self.train.weights.gamma = num(v)?,
            "optimizer.lr" => self.train.optimizer.lr = num(v)?,
            "optimizer.beta1" => self.train.optimizer.beta1 = num(v)?,
            "optimizer.beta2" => self.train.optimizer.beta2 = num(v)?,
            "optimizer.eps" => self.train.optimizer.eps = num(v)?,
            "train.epochs" => self.train.epochs = num(v)?,
            "train.batch_size" => self.train.batch_size = num(v)?,
            "folds.k" => self.folds = num(v)?,
            "gan.latent_dim" => self.gan.latent_dim = num(v)?,
            "gan.image_size" => {
                let s = num(v)?;
                self.gan.image_size = (s, s);
            }
            "gan.channels" => self.gan.channels = num(v)?,
            "gan.embed_dim" => self.gan.embed_dim = num(v)?,
            "gan.epochs" => self.gan.epochs = num(v)?,
            "gan.batch_size" => self.gan.batch_size = num(v)?,
            "gan.lr" => self.gan.lr = num(v)?,
            "gan.beta1" => self.gan.beta1 = num(v)?,
            "ssl.temperature" => self.ssl.temperature = num(v)?,
            "ssl.projection_dim" => self.ssl.projection_dim = num(v)?,
            "ssl.hidden_dim" => self.ssl.hidden_dim = num(v)?,
            "ssl.batch_pairs" => self.ssl.batch_pairs = num(v)?,
            "ssl.epochs" => self.ssl.epochs = num(v)?,
            "ssl.lr" => self.ssl.lr = num(v)?,
            "ssl.gamma_jitter" => self.ssl.policy.gamma_jitter = num(v)?,
            "ssl.geometric" => self.ssl.policy.geometric = flag(v)?,
            "deploy.prune_fraction" => self.prune_fraction = num(v)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Checks every section; the error names the failing section.
    fn validate(self) -> Result<Self, (&'static str, String)> {
        let msg = |e: hwdm_core::Error| e.to_string();
        if self.data.size == 0 {
            return Err(("data", "data.size must be positive".into()));
        }
        self.backbone.validate().map_err(|e| ("backbone", msg(e)))?;
        self.preprocess.validate().map_err(|e| ("preprocess", msg(e)))?;
        self.train.weights.validate().map_err(|e| ("loss", msg(e)))?;
        self.train.optimizer.validate().map_err(|e| ("optimizer", msg(e)))?;
        if self.train.batch_size == 0 {
            return Err(("train", "train.batch_size must be positive".into()));
        }
        if self.folds < 2 {
            return Err(("folds", "folds.k must be at least 2".into()));
        }
        self.gan.validate().map_err(|e| ("gan", msg(e)))?;
        self.ssl.validate().map_err(|e| ("ssl", msg(e)))?;
        if !(0.0..1.0).contains(&self.prune_fraction) {
            return Err(("deploy", "deploy.prune_fraction must be in [0, 1)".into()));
        }
        Ok(self)
    }

    /// Preprocessing for a model built on `backbone`.
    pub fn preprocess_for(&self, backbone: &BackboneConfig) -> PreprocessConfig {
        PreprocessConfig { target_size: backbone.image_size, ..self.preprocess.clone() }
    }
}

fn num<T: FromStr>(v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse {v:?} as a {}", std::any::type_name::<T>()))
}

fn flag(v: &str) -> Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got {v:?}")),
    }
}

fn list(v: &str) -> Result<Vec<usize>, String> {
    v.split(',').map(|s| num(s.trim())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_desk_preset() {
        let cfg = RunConfig::parse("", None, None).unwrap();
        assert_eq!(cfg, RunConfig::preset(Preset::Desk));
        assert_eq!(cfg.train.weights, LossWeights { alpha: 0.5, beta: 0.3, gamma: 0.2 });
    }

    #[test]
    fn keys_override_the_preset() {
        let text =
            "# run\nseed = 9\noptimizer.lr = 0.0001\ntrain.epochs=3\npreprocess.gamma = adaptive\nbackbone.cnn_channels = 4, 8\n";
        let cfg = RunConfig::parse(text, None, None).unwrap();
        assert_eq!((cfg.seed, cfg.train.seed, cfg.train.epochs), (9, 9, 3));
        assert_eq!(cfg.train.optimizer.lr, 1e-4);
        assert_eq!(cfg.preprocess.gamma, GammaMode::Adaptive);
        assert_eq!(cfg.backbone.cnn_channels, vec![4, 8]);
        assert_eq!(RunConfig::parse(text, None, Some(4)).unwrap().train.seed, 4);
    }

    #[test]
    fn preset_flag_wins_over_the_document() {
        let cfg = RunConfig::parse("preset = desk\n", Some(Preset::Paper), None).unwrap();
        assert_eq!(cfg.backbone, BackboneConfig::paper());
        assert_eq!(cfg.preprocess.target_size, (224, 224));
        assert_eq!(RunConfig::parse("preset = paper", None, None).unwrap().train.optimizer.lr, 1e-4);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let cases = [
            ("seed = 1\nbogus.key = 2\n", 2),
            ("seed = 1\n\nseed = 2\n", 3),
            ("train.epochs = many\n", 1),
            ("# c\njust text\n", 2),
            ("preset = huge\n", 1),
            ("loss.alpha = 0\nloss.beta = 0\nloss.gamma = 0\n", 3),
            ("optimizer.lr = -1\n", 1),
            ("backbone.num_heads = 5\n", 1),
            ("ssl.batch_pairs = 1\n", 1),
            ("seed = 2\ndeploy.prune_fraction = 1\n", 2),
            ("preprocess.median_window = 4\n", 1),
            ("gan.image_size = 6\n", 1),
        ];
        for (text, line) in cases {
            let err = RunConfig::parse(text, None, None).unwrap_err();
            assert_eq!(err.line, Some(line), "{text:?}: {err}");
            assert!(err.to_string().starts_with(&format!("config line {line}:")));
        }
    }
}
