//! Squeeze-and-excitation recalibration blocks.
//!
//! Both blocks return `x` rescaled by a gate in `(0, 1)`: per channel for
//! [`ChannelSe`], per voxel for [`SpatialSe`]. Combining them with the
//! identity path is left to the caller.

use super::activation::sigmoid;
use super::{
    conv3d_backward, conv3d_forward, global_avg_pool, linear_backward, linear_forward, split_ncs, GradBundle, Layer,
    LayerParams,
};
use crate::error::Result;
use crate::tensor::Tensor;

/// `x · σ(W₂ ReLU(W₁ GAP(x) + b₁) + b₂)` with the gate broadcast over space.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ChannelSe;

#[derive(Debug, Clone)]
pub struct ChannelSeCache {
    x: Tensor,
    pooled: Tensor,
    hidden_pre: Tensor,
    hidden: Tensor,
    gate: Tensor,
}

impl Layer for ChannelSe {
    type Cache = ChannelSeCache;

    fn forward(&self, p: &LayerParams, x: &Tensor) -> Result<(Tensor, ChannelSeCache)> {
        let (_, _, m) = split_ncs(x.shape())?;
        let pooled = global_avg_pool(x)?;
        let hidden_pre = linear_forward(&pooled, p.get("fc1.weight")?, p.get("fc1.bias")?)?;
        let hidden = hidden_pre.map(|v| v.max(0.0));
        let gate = linear_forward(&hidden, p.get("fc2.weight")?, p.get("fc2.bias")?)?.map(sigmoid);

        let mut out = x.clone();
        for (slice, &s) in out.data_mut().chunks_exact_mut(m).zip(gate.data()) {
            for v in slice {
                *v *= s;
            }
        }
        Ok((
            out,
            ChannelSeCache {
                x: x.clone(),
                pooled,
                hidden_pre,
                hidden,
                gate,
            },
        ))
    }

    fn backward(&self, p: &LayerParams, cache: &ChannelSeCache, grad_out: &Tensor) -> Result<GradBundle> {
        let (_, _, m) = split_ncs(grad_out.shape())?;
        let x = &cache.x;
        let gate = cache.gate.data();

        let mut g_gate_pre = Vec::with_capacity(gate.len());
        for ((gs, xs), &s) in grad_out.data().chunks_exact(m).zip(x.data().chunks_exact(m)).zip(gate) {
            let g_s: f64 = gs.iter().zip(xs).map(|(g, v)| g * v).sum();
            g_gate_pre.push(g_s * s * (1.0 - s));
        }
        let g_gate_pre = Tensor::new(cache.gate.shape(), g_gate_pre)?;
        let (g_hidden, g_w2, g_b2) = linear_backward(&cache.hidden, p.get("fc2.weight")?, &g_gate_pre)?;
        let g_hidden_pre = Tensor::new(
            g_hidden.shape(),
            g_hidden
                .data()
                .iter()
                .zip(cache.hidden_pre.data())
                .map(|(&g, &h)| if h > 0.0 { g } else { 0.0 })
                .collect(),
        )?;
        let (g_pooled, g_w1, g_b1) = linear_backward(&cache.pooled, p.get("fc1.weight")?, &g_hidden_pre)?;

        let inv_m = 1.0 / m as f64;
        let mut gx = Vec::with_capacity(grad_out.len());
        for ((gs, &s), &gp) in grad_out.data().chunks_exact(m).zip(gate).zip(g_pooled.data()) {
            gx.extend(gs.iter().map(|g| g * s + gp * inv_m));
        }
        Ok(GradBundle {
            input: Tensor::new(grad_out.shape(), gx)?,
            params: LayerParams::new()
                .with("fc1.weight", g_w1)
                .with("fc1.bias", g_b1)
                .with("fc2.weight", g_w2)
                .with("fc2.bias", g_b2),
        })
    }
}

/// `x · σ(conv₁ₓ₁ₓ₁(x))` with the gate broadcast over channels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SpatialSe;

#[derive(Debug, Clone)]
pub struct SpatialSeCache {
    x: Tensor,
    gate: Tensor,
}

impl Layer for SpatialSe {
    type Cache = SpatialSeCache;

    fn forward(&self, p: &LayerParams, x: &Tensor) -> Result<(Tensor, SpatialSeCache)> {
        let (n, c, m) = split_ncs(x.shape())?;
        let gate = conv3d_forward(x, p.get("weight")?, p.get("bias")?, [1; 3], [0; 3])?.map(sigmoid);
        let mut out = x.clone();
        let od = out.data_mut();
        for b in 0..n {
            let q = &gate.data()[b * m..(b + 1) * m];
            for ch in 0..c {
                for (v, &s) in od[(b * c + ch) * m..][..m].iter_mut().zip(q) {
                    *v *= s;
                }
            }
        }
        Ok((out, SpatialSeCache { x: x.clone(), gate }))
    }

    fn backward(&self, p: &LayerParams, cache: &SpatialSeCache, grad_out: &Tensor) -> Result<GradBundle> {
        let (n, c, m) = split_ncs(grad_out.shape())?;
        let (x, gd, q) = (cache.x.data(), grad_out.data(), cache.gate.data());

        let mut g_gate_pre = vec![0.0; n * m];
        for b in 0..n {
            let acc = &mut g_gate_pre[b * m..(b + 1) * m];
            for ch in 0..c {
                let off = (b * c + ch) * m;
                for ((a, &g), &xv) in acc.iter_mut().zip(&gd[off..off + m]).zip(&x[off..off + m]) {
                    *a += g * xv;
                }
            }
            for (a, &s) in acc.iter_mut().zip(&q[b * m..(b + 1) * m]) {
                *a *= s * (1.0 - s);
            }
        }
        let g_gate_pre = Tensor::new(cache.gate.shape(), g_gate_pre)?;
        let (mut gx, gw, gb) = conv3d_backward(&cache.x, p.get("weight")?, &g_gate_pre, [1; 3], [0; 3])?;
        let gxd = gx.data_mut();
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * m;
                for ((out, &g), &s) in gxd[off..off + m]
                    .iter_mut()
                    .zip(&gd[off..off + m])
                    .zip(&q[b * m..(b + 1) * m])
                {
                    *out += g * s;
                }
            }
        }
        Ok(GradBundle {
            input: gx,
            params: LayerParams::new().with("weight", gw).with("bias", gb),
        })
    }
}
