use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{DEFAULT_LEAKY_SLOPE, DEFAULT_NORM_EPS, DEFAULT_SE_RATIO};

/// Which inputs a model sees. `ImageOnly` still receives the two-wide
/// treatment one-hot as its metadata vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    ImageOnly,
    MetadataOnly,
    Multimodal,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::ImageOnly => "image_only",
            Mode::MetadataOnly => "metadata_only",
            Mode::Multimodal => "multimodal",
        }
    }

    pub fn uses_image(self) -> bool {
        self != Mode::MetadataOnly
    }

    /// Metadata width this mode is defined for.
    pub fn metadata_dim(self) -> usize {
        match self {
            Mode::ImageOnly => TREATMENT_DIM,
            _ => CLINICAL_DIM,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "image_only" => Ok(Mode::ImageOnly),
            "metadata_only" => Ok(Mode::MetadataOnly),
            "multimodal" => Ok(Mode::Multimodal),
            other => Err(Error::config(format!("unknown mode `{other}`"))),
        }
    }
}

/// Treatment-only metadata: one-hot `[control, EVT]`.
pub const TREATMENT_DIM: usize = 2;
/// Full encoded clinical metadata width.
pub const CLINICAL_DIM: usize = 52;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub conv_channels: [usize; 3],
    pub block_strides: [[usize; 3]; 3],
    /// J: width of the encoded image features.
    pub image_feature_size: usize,
    /// L: width of the encoded metadata features, at most J.
    pub metadata_feature_size: usize,
    /// V: metadata input width (2 or 52).
    pub metadata_dim: usize,
    /// C: 2 for dichotomised outcome, 7 for individual mRS.
    pub num_classes: usize,
    pub attention_enabled: bool,
    pub se_ratio: usize,
    pub dropout_rate: f64,
    pub leaky_slope: f64,
    pub norm_eps: f64,
    /// Hidden width of the metadata-only network.
    pub clinic_hidden: usize,
    pub mode: Mode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            conv_channels: [16, 32, 64],
            block_strides: [[2, 2, 2], [2, 2, 2], [1, 1, 1]],
            image_feature_size: 64,
            metadata_feature_size: 32,
            metadata_dim: CLINICAL_DIM,
            num_classes: 2,
            attention_enabled: true,
            se_ratio: DEFAULT_SE_RATIO,
            dropout_rate: 0.5,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            norm_eps: DEFAULT_NORM_EPS,
            clinic_hidden: 128,
            mode: Mode::Multimodal,
        }
    }
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn parse_list<T: FromStr>(key: &str, value: &str, n: usize) -> Result<Vec<T>> {
    let items: Vec<T> = value
        .split(',')
        .map(|s| s.trim().parse::<T>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::config(format!("bad value `{value}` for `{key}`")))?;
    if items.len() != n {
        return Err(Error::config(format!("`{key}` needs {n} values, got `{value}`")));
    }
    Ok(items)
}

pub(crate) fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("bad value `{value}` for `{key}`")))
}

impl ModelConfig {
    /// Mode-consistent defaults for an experiment with `num_classes` outputs.
    pub fn for_mode(mode: Mode, num_classes: usize) -> Self {
        ModelConfig {
            mode,
            num_classes,
            metadata_dim: mode.metadata_dim(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut violated = Vec::new();
        if self.metadata_feature_size > self.image_feature_size {
            violated.push(format!(
                "metadata_feature_size L={} must not exceed image_feature_size J={}",
                self.metadata_feature_size, self.image_feature_size
            ));
        }
        if !matches!(self.num_classes, 2 | 7) {
            violated.push(format!("num_classes C={} must be 2 or 7", self.num_classes));
        }
        if self.metadata_dim != self.mode.metadata_dim() {
            violated.push(format!(
                "metadata_dim V={} but mode {} requires {}",
                self.metadata_dim,
                self.mode,
                self.mode.metadata_dim()
            ));
        }
        if self.conv_channels.contains(&0)
            || self.image_feature_size == 0
            || self.metadata_feature_size == 0
            || self.clinic_hidden == 0
        {
            violated.push("layer widths must be positive".to_string());
        }
        if self.block_strides.iter().flatten().any(|&s| s == 0) {
            violated.push("strides must be positive".to_string());
        }
        if self.se_ratio == 0 {
            violated.push("se_ratio must be at least 1".to_string());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            violated.push(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if !(self.norm_eps > 0.0) {
            violated.push("norm_eps must be positive".to_string());
        }
        if violated.is_empty() {
            Ok(())
        } else {
            Err(Error::config(violated.join("; ")))
        }
    }

    /// Flat `key=value` pairs, the inverse of [`ModelConfig::set`].
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let strides: Vec<String> = self.block_strides.iter().map(|s| join(s)).collect();
        vec![
            ("mode", self.mode.to_string()),
            ("conv_channels", join(&self.conv_channels)),
            ("block_strides", strides.join(";")),
            ("image_feature_size", self.image_feature_size.to_string()),
            ("metadata_feature_size", self.metadata_feature_size.to_string()),
            ("metadata_dim", self.metadata_dim.to_string()),
            ("num_classes", self.num_classes.to_string()),
            ("attention_enabled", self.attention_enabled.to_string()),
            ("se_ratio", self.se_ratio.to_string()),
            ("dropout_rate", format!("{:?}", self.dropout_rate)),
            ("leaky_slope", format!("{:?}", self.leaky_slope)),
            ("norm_eps", format!("{:?}", self.norm_eps)),
            ("clinic_hidden", self.clinic_hidden.to_string()),
        ]
    }

    /// Applies one `key=value` setting. Returns `Ok(false)` for keys this
    /// config does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "mode" => self.mode = value.trim().parse()?,
            "conv_channels" => {
                let v = parse_list::<usize>(key, value, 3)?;
                self.conv_channels = [v[0], v[1], v[2]];
            }
            "block_strides" => {
                let blocks: Vec<&str> = value.split(';').collect();
                if blocks.len() != 3 {
                    return Err(Error::config(format!("`{key}` needs 3 stride triples")));
                }
                for (slot, b) in self.block_strides.iter_mut().zip(blocks) {
                    let v = parse_list::<usize>(key, b, 3)?;
                    *slot = [v[0], v[1], v[2]];
                }
            }
            "image_feature_size" => self.image_feature_size = parse_value(key, value)?,
            "metadata_feature_size" => self.metadata_feature_size = parse_value(key, value)?,
            "metadata_dim" => self.metadata_dim = parse_value(key, value)?,
            "num_classes" => self.num_classes = parse_value(key, value)?,
            "attention_enabled" => self.attention_enabled = parse_value(key, value)?,
            "se_ratio" => self.se_ratio = parse_value(key, value)?,
            "dropout_rate" => self.dropout_rate = parse_value(key, value)?,
            "leaky_slope" => self.leaky_slope = parse_value(key, value)?,
            "norm_eps" => self.norm_eps = parse_value(key, value)?,
            "clinic_hidden" => self.clinic_hidden = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for (k, v) in pairs {
            if !cfg.set(k, v)? {
                return Err(Error::config(format!("unknown model key `{k}`")));
            }
        }
        Ok(cfg)
    }
}
