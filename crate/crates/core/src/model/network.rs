use rand::Rng;

use super::params::BLOCK_NAMES;
use super::{Mode, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::nn::{
    conv3d_param_grads, global_avg_pool, global_avg_pool_backward, linear_backward, linear_forward, softmax,
    ActivationKind, ChannelSe, Conv3d, Dropout, InstanceNorm3d, Layer, LayerParams, SpatialSe,
};
use crate::tensor::Tensor;

/// Stateless view of a config; all weights live in [`ModelParams`].
#[derive(Debug, Clone)]
pub struct Network {
    config: ModelConfig,
}

struct BlockCache {
    conv_in: Tensor,
    norm: <InstanceNorm3d as Layer>::Cache,
    act_in: Tensor,
}

struct AttentionCache {
    cse: <ChannelSe as Layer>::Cache,
    sse: <SpatialSe as Layer>::Cache,
}

struct IfeCache {
    blocks: Vec<BlockCache>,
    attention: Option<AttentionCache>,
    fused_shape: Vec<usize>,
}

struct FusionCache {
    ife: IfeCache,
    image_feat: Tensor,
    image_pre: Tensor,
    meta: Tensor,
    meta_pre: Tensor,
    fused: Tensor,
}

struct ClinicCache {
    meta: Tensor,
    hidden_pre: Tensor,
    mask: Option<Tensor>,
    dropped: Tensor,
}

enum Cache {
    Fusion(Box<FusionCache>),
    Clinic(ClinicCache),
}

/// Result of a forward pass, holding what the matching backward needs.
pub struct ForwardPass {
    pub logits: Tensor,
    pub probs: Tensor,
    cache: Cache,
}

/// Intermediate shapes of the image encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct IfeTrace {
    pub block_shapes: Vec<Vec<usize>>,
    pub features: Tensor,
}

fn relu(t: &Tensor) -> Tensor {
    t.map(|v| v.max(0.0))
}

fn relu_backward(pre: &Tensor, grad: &Tensor) -> Tensor {
    ActivationKind::Relu.backward(pre, pre, grad)
}

fn linear(p: &LayerParams, x: &Tensor) -> Result<Tensor> {
    linear_forward(x, p.get("weight")?, p.get("bias")?)
}

fn linear_grads(p: &LayerParams, x: &Tensor, g: &Tensor) -> Result<(Tensor, LayerParams)> {
    let (gx, gw, gb) = linear_backward(x, p.get("weight")?, g)?;
    Ok((gx, LayerParams::new().with("weight", gw).with("bias", gb)))
}

/// Row-wise argmax; ties go to the lowest class index.
pub fn argmax_rows(probs: &Tensor) -> Vec<usize> {
    let c = probs.dim(probs.rank() - 1);
    probs
        .data()
        .chunks_exact(c)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

impl Network {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Network { config })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn conv(&self, block: usize) -> Conv3d {
        Conv3d::new(self.config.block_strides[block], [1, 1, 1])
    }

    fn norm(&self) -> InstanceNorm3d {
        InstanceNorm3d {
            eps: self.config.norm_eps,
        }
    }

    fn check_meta(&self, meta: &Tensor, n: Option<usize>) -> Result<()> {
        let v = self.config.metadata_dim;
        if meta.rank() != 2 || meta.dim(1) != v || n.is_some_and(|n| meta.dim(0) != n) {
            return Err(Error::shape(format!(
                "metadata tensor {:?} does not match width V={v}{}",
                meta.shape(),
                n.map(|n| format!(" and batch {n}")).unwrap_or_default()
            )));
        }
        Ok(())
    }

    fn ife(&self, params: &ModelParams, x: &Tensor) -> Result<(Tensor, IfeCache)> {
        if x.rank() != 5 || x.dim(1) != 1 {
            return Err(Error::shape(format!(
                "image input must be N×1×D×H×W, got {:?}",
                x.shape()
            )));
        }
        let slope = self.config.leaky_slope;
        let mut h = x.clone();
        let mut blocks = Vec::with_capacity(3);
        for (b, name) in BLOCK_NAMES.iter().enumerate() {
            let conv_p = params.layer(&format!("{name}.conv"))?;
            let norm_p = params.layer(&format!("{name}.norm"))?;
            let (y, conv_in) = self
                .conv(b)
                .forward(conv_p, &h)
                .map_err(|e| e.context(format!("{name} on input {:?}", h.shape())))?;
            let (y, norm) = self
                .norm()
                .forward(norm_p, &y)
                .map_err(|e| e.context(format!("{name} normalization")))?;
            h = ActivationKind::LeakyRelu(slope).forward(&y);
            blocks.push(BlockCache {
                conv_in,
                norm,
                act_in: y,
            });
        }
        let (fused, attention) = if self.config.attention_enabled {
            let (c, cse) = ChannelSe.forward(params.layer("cse")?, &h)?;
            let (s, sse) = SpatialSe.forward(params.layer("sse")?, &h)?;
            let fused = h.add(&c)?.add(&s)?;
            (fused, Some(AttentionCache { cse, sse }))
        } else {
            (h, None)
        };
        let pooled = global_avg_pool(&fused)?;
        Ok((
            pooled,
            IfeCache {
                blocks,
                attention,
                fused_shape: fused.shape().to_vec(),
            },
        ))
    }

    fn ife_backward(
        &self,
        params: &ModelParams,
        cache: &IfeCache,
        grad: &Tensor,
        grads: &mut ModelParams,
    ) -> Result<()> {
        let slope = self.config.leaky_slope;
        let mut g = global_avg_pool_backward(&cache.fused_shape, grad)?;
        if let Some(att) = &cache.attention {
            let gc = ChannelSe.backward(params.layer("cse")?, &att.cse, &g)?;
            let gs = SpatialSe.backward(params.layer("sse")?, &att.sse, &g)?;
            g = g.add(&gc.input)?.add(&gs.input)?;
            grads.insert("cse", gc.params);
            grads.insert("sse", gs.params);
        }
        let mut block_grads = Vec::with_capacity(3);
        for (b, name) in BLOCK_NAMES.iter().enumerate().rev() {
            let bc = &cache.blocks[b];
            let g_norm_out = ActivationKind::LeakyRelu(slope).backward(&bc.act_in, &bc.act_in, &g);
            let gn = self
                .norm()
                .backward(params.layer(&format!("{name}.norm"))?, &bc.norm, &g_norm_out)?;
            let conv_params = params.layer(&format!("{name}.conv"))?;
            let conv_grads = if b == 0 {
                // the image itself needs no gradient
                let conv = self.conv(b);
                let (gw, gb) = conv3d_param_grads(
                    &bc.conv_in,
                    conv_params.get("weight")?,
                    &gn.input,
                    conv.stride,
                    conv.padding,
                )?;
                LayerParams::new().with("weight", gw).with("bias", gb)
            } else {
                let gc = self.conv(b).backward(conv_params, &bc.conv_in, &gn.input)?;
                g = gc.input;
                gc.params
            };
            block_grads.push((name, conv_grads, gn.params));
        }
        for (name, conv, norm) in block_grads.into_iter().rev() {
            grads.insert(&format!("{name}.conv"), conv);
            grads.insert(&format!("{name}.norm"), norm);
        }
        Ok(())
    }

    /// Image features after the three conv blocks, attention and pooling.
    pub fn ife_forward(&self, params: &ModelParams, x: &Tensor) -> Result<Tensor> {
        self.require_image()?;
        Ok(self.ife(params, x)?.0)
    }

    /// Like [`Network::ife_forward`] but also reports every block's output shape.
    pub fn ife_trace(&self, params: &ModelParams, x: &Tensor) -> Result<IfeTrace> {
        self.require_image()?;
        let (features, cache) = self.ife(params, x)?;
        let mut block_shapes: Vec<Vec<usize>> = cache
            .blocks
            .iter()
            .skip(1)
            .map(|b| b.conv_in.shape().to_vec())
            .collect();
        block_shapes.push(cache.fused_shape.clone());
        Ok(IfeTrace { block_shapes, features })
    }

    fn require_image(&self) -> Result<()> {
        if self.config.mode.uses_image() {
            Ok(())
        } else {
            Err(Error::config("metadata_only models have no image encoder"))
        }
    }

    /// `concat(ReLU(FC(x_feat)), ReLU(FC(meta)))`, width J+L.
    pub fn imf_forward(&self, params: &ModelParams, x_feat: &Tensor, meta: &Tensor) -> Result<Tensor> {
        self.require_image()?;
        self.check_meta(meta, Some(x_feat.dim(0)))?;
        let fi = relu(&linear(params.layer("fc_image")?, x_feat)?);
        let fm = relu(&linear(params.layer("fc_meta")?, meta)?);
        Tensor::concat_cols(&[&fi, &fm])
    }

    /// Full forward pass. `image` is required unless the mode is
    /// metadata-only; `rng` only drives dropout in training mode.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        params: &ModelParams,
        image: Option<&Tensor>,
        meta: &Tensor,
        training: bool,
        rng: &mut R,
    ) -> Result<ForwardPass> {
        if self.config.mode == Mode::MetadataOnly {
            self.check_meta(meta, None)?;
            let hidden_pre = linear(params.layer("fc1")?, meta)?;
            let hidden = relu(&hidden_pre);
            let dropout = Dropout::new(self.config.dropout_rate)?;
            let (dropped, mask) = dropout.forward(&hidden, training, rng);
            let logits = linear(params.layer("fc2")?, &dropped)?;
            let probs = softmax(&logits)?;
            return Ok(ForwardPass {
                logits,
                probs,
                cache: Cache::Clinic(ClinicCache {
                    meta: meta.clone(),
                    hidden_pre,
                    mask,
                    dropped,
                }),
            });
        }
        let image = image.ok_or_else(|| Error::config(format!("mode {} needs an image", self.config.mode)))?;
        self.check_meta(meta, Some(image.dim(0)))?;
        let (image_feat, ife) = self.ife(params, image)?;
        let image_pre = linear(params.layer("fc_image")?, &image_feat)?;
        let meta_pre = linear(params.layer("fc_meta")?, meta)?;
        let fused = Tensor::concat_cols(&[&relu(&image_pre), &relu(&meta_pre)])?;
        let logits = linear(params.layer("fc_head")?, &fused)?;
        let probs = softmax(&logits)?;
        Ok(ForwardPass {
            logits,
            probs,
            cache: Cache::Fusion(Box::new(FusionCache {
                ife,
                image_feat,
                image_pre,
                meta: meta.clone(),
                meta_pre,
                fused,
            })),
        })
    }

    /// Parameter gradients given `dLoss/dlogits`.
    pub fn backward(&self, params: &ModelParams, pass: &ForwardPass, grad_logits: &Tensor) -> Result<ModelParams> {
        let mut grads = ModelParams::new();
        match &pass.cache {
            Cache::Clinic(c) => {
                let fc2 = params.layer("fc2")?;
                let (g_drop, g2) = linear_grads(fc2, &c.dropped, grad_logits)?;
                let dropout = Dropout::new(self.config.dropout_rate)?;
                let g_hidden = dropout.backward(c.mask.as_ref(), &g_drop);
                let g_pre = relu_backward(&c.hidden_pre, &g_hidden);
                let (_, g1) = linear_grads(params.layer("fc1")?, &c.meta, &g_pre)?;
                grads.insert("fc1", g1);
                grads.insert("fc2", g2);
            }
            Cache::Fusion(c) => {
                let j = self.config.image_feature_size;
                let width = j + self.config.metadata_feature_size;
                let (g_fused, g_head) = linear_grads(params.layer("fc_head")?, &c.fused, grad_logits)?;
                let g_img = relu_backward(&c.image_pre, &g_fused.slice_cols(0, j)?);
                let g_meta = relu_backward(&c.meta_pre, &g_fused.slice_cols(j, width)?);
                let (g_feat, g_fc_image) = linear_grads(params.layer("fc_image")?, &c.image_feat, &g_img)?;
                let (_, g_fc_meta) = linear_grads(params.layer("fc_meta")?, &c.meta, &g_meta)?;
                self.ife_backward(params, &c.ife, &g_feat, &mut grads)?;
                grads.insert("fc_image", g_fc_image);
                grads.insert("fc_meta", g_fc_meta);
                grads.insert("fc_head", g_head);
            }
        }
        Ok(grads)
    }
}

/// Image features `X̃` for `x` (`N×1×D×H×W`).
pub fn ife_forward(x: &Tensor, params: &ModelParams, config: &ModelConfig) -> Result<Tensor> {
    Network::new(config.clone())?.ife_forward(params, x)
}

pub fn imf_forward(x_feat: &Tensor, meta: &Tensor, params: &ModelParams, config: &ModelConfig) -> Result<Tensor> {
    Network::new(config.clone())?.imf_forward(params, x_feat, meta)
}

/// Class probabilities and the argmax class for each row.
pub fn predict(x: &Tensor, meta: &Tensor, params: &ModelParams, config: &ModelConfig) -> Result<(Tensor, Vec<usize>)> {
    let net = Network::new(config.clone())?;
    net.require_image()?;
    let pass = net.forward(params, Some(x), meta, false, &mut crate::rng::seeded(0))?;
    let mrs = argmax_rows(&pass.probs);
    Ok((pass.probs, mrs))
}

pub fn clinic_dnn_forward<R: Rng + ?Sized>(
    meta: &Tensor,
    params: &ModelParams,
    config: &ModelConfig,
    training: bool,
    rng: &mut R,
) -> Result<Tensor> {
    if config.mode != Mode::MetadataOnly {
        return Err(Error::config("clinic_dnn_forward needs a metadata_only config"));
    }
    Ok(Network::new(config.clone())?
        .forward(params, None, meta, training, rng)?
        .probs)
}
