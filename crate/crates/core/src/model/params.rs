use indexmap::IndexMap;
use rand::Rng;

use super::{Mode, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::LayerParams;
use crate::tensor::Tensor;

/// Layer name → parameters, in forward order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelParams {
    layers: IndexMap<String, LayerParams>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, layer: LayerParams) {
        self.layers.insert(name.to_string(), layer);
    }

    pub fn layer(&self, name: &str) -> Result<&LayerParams> {
        self.layers
            .get(name)
            .ok_or_else(|| Error::Index(format!("missing layer `{name}`")))
    }

    pub fn layer_mut(&mut self, name: &str) -> Option<&mut LayerParams> {
        self.layers.get_mut(name)
    }

    pub fn layers(&self) -> impl Iterator<Item = (&str, &LayerParams)> {
        self.layers.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = (&str, &mut LayerParams)> {
        self.layers.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.layers.values().map(LayerParams::num_scalars).sum()
    }

    /// `(layer.param, tensor)` pairs in deterministic order.
    pub fn flat(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .flat_map(|(l, p)| p.iter().map(move |(n, t)| (format!("{l}.{n}"), t)))
            .collect()
    }

    /// Inverse of [`ModelParams::flat`]; the layer name is everything up to
    /// the separator that precedes a known parameter suffix.
    pub fn from_flat(entries: Vec<(String, Tensor)>, layout: &ModelParams) -> Result<Self> {
        let mut out = ModelParams::new();
        let mut it = entries.into_iter();
        for (lname, lparams) in layout.layers() {
            let mut layer = LayerParams::new();
            for (pname, expected) in lparams.iter() {
                let (name, tensor) = it
                    .next()
                    .ok_or_else(|| Error::shape(format!("missing tensor `{lname}.{pname}`")))?;
                if name != format!("{lname}.{pname}") {
                    return Err(Error::shape(format!(
                        "expected tensor `{lname}.{pname}`, found `{name}`"
                    )));
                }
                if tensor.shape() != expected.shape() {
                    return Err(Error::shape(format!(
                        "tensor `{name}` has shape {:?}, config expects {:?}",
                        tensor.shape(),
                        expected.shape()
                    )));
                }
                layer.insert(pname, tensor);
            }
            out.insert(lname, layer);
        }
        if let Some((name, _)) = it.next() {
            return Err(Error::shape(format!("unexpected extra tensor `{name}`")));
        }
        Ok(out)
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            layers: self.layers.iter().map(|(k, v)| (k.clone(), v.zeros_like())).collect(),
        }
    }

    /// Name of the first layer holding a non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<String> {
        self.layers
            .iter()
            .find_map(|(l, p)| p.iter().find(|(_, t)| !t.is_finite()).map(|(n, _)| format!("{l}.{n}")))
    }
}

pub const BLOCK_NAMES: [&str; 3] = ["block1", "block2", "block3"];

/// Allocates and initializes every tensor the config calls for: He-normal
/// weights, zero biases, unit/zero instance-norm affine.
pub fn build_model<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<ModelParams> {
    config.validate()?;
    let mut params = ModelParams::new();
    if config.mode == Mode::MetadataOnly {
        params.insert(
            "fc1",
            LayerParams::linear(config.clinic_hidden, config.metadata_dim, rng),
        );
        params.insert(
            "fc2",
            LayerParams::linear(config.num_classes, config.clinic_hidden, rng),
        );
        return Ok(params);
    }
    let mut c_in = 1;
    for (name, &c_out) in BLOCK_NAMES.iter().zip(&config.conv_channels) {
        params.insert(
            &format!("{name}.conv"),
            LayerParams::conv3d(c_out, c_in, [3, 3, 3], rng),
        );
        params.insert(&format!("{name}.norm"), LayerParams::instance_norm(c_out));
        c_in = c_out;
    }
    if config.attention_enabled {
        params.insert("cse", LayerParams::cse(c_in, config.se_ratio, rng));
        params.insert("sse", LayerParams::sse(c_in, rng));
    }
    let (j, l) = (config.image_feature_size, config.metadata_feature_size);
    params.insert("fc_image", LayerParams::linear(j, c_in, rng));
    params.insert("fc_meta", LayerParams::linear(l, config.metadata_dim, rng));
    params.insert("fc_head", LayerParams::linear(config.num_classes, j + l, rng));
    Ok(params)
}
