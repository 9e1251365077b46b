use super::{split_ncs, GradBundle, Layer, LayerParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-sample, per-channel standardization over the spatial dims with a
/// learnable affine. No running statistics are kept.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceNorm3d {
    pub eps: f64,
}

impl Default for InstanceNorm3d {
    fn default() -> Self {
        InstanceNorm3d {
            eps: super::DEFAULT_NORM_EPS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NormCache {
    normalized: Tensor,
    inv_std: Vec<f64>,
}

impl Layer for InstanceNorm3d {
    type Cache = NormCache;

    fn forward(&self, params: &LayerParams, x: &Tensor) -> Result<(Tensor, NormCache)> {
        let (n, c, m) = split_ncs(x.shape())?;
        if m < 2 {
            return Err(Error::Degenerate(format!(
                "instance norm over a single voxel (input {:?})",
                x.shape()
            )));
        }
        let scale = params.get("scale")?;
        let shift = params.get("shift")?;
        if scale.shape() != [c] || shift.shape() != [c] {
            return Err(Error::shape(format!(
                "instance norm affine {:?}/{:?} for {c} channels",
                scale.shape(),
                shift.shape()
            )));
        }
        let mut normalized = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        let mut inv_std = Vec::with_capacity(n * c);
        for (slice_idx, (xs, (ns, os))) in x
            .data()
            .chunks_exact(m)
            .zip(normalized.chunks_exact_mut(m).zip(out.chunks_exact_mut(m)))
            .enumerate()
        {
            let ch = slice_idx % c;
            let mean = xs.iter().sum::<f64>() / m as f64;
            let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let istd = 1.0 / (var + self.eps).sqrt();
            inv_std.push(istd);
            let (a, b) = (scale.data()[ch], shift.data()[ch]);
            for ((&xv, nv), ov) in xs.iter().zip(ns.iter_mut()).zip(os.iter_mut()) {
                *nv = (xv - mean) * istd;
                *ov = a * *nv + b;
            }
        }
        Ok((
            Tensor::new(x.shape(), out)?,
            NormCache {
                normalized: Tensor::new(x.shape(), normalized)?,
                inv_std,
            },
        ))
    }

    fn backward(&self, params: &LayerParams, cache: &NormCache, grad_out: &Tensor) -> Result<GradBundle> {
        let (_, c, m) = split_ncs(grad_out.shape())?;
        let scale = params.get("scale")?;
        let mut gx = vec![0.0; grad_out.len()];
        let mut gscale = vec![0.0; c];
        let mut gshift = vec![0.0; c];
        let mf = m as f64;
        for (slice_idx, ((gs, xh), gxs)) in grad_out
            .data()
            .chunks_exact(m)
            .zip(cache.normalized.data().chunks_exact(m))
            .zip(gx.chunks_exact_mut(m))
            .enumerate()
        {
            let ch = slice_idx % c;
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for (&g, &h) in gs.iter().zip(xh) {
                sum_g += g;
                sum_gx += g * h;
            }
            gscale[ch] += sum_gx;
            gshift[ch] += sum_g;
            let k = scale.data()[ch] * cache.inv_std[slice_idx] / mf;
            for ((out, &g), &h) in gxs.iter_mut().zip(gs).zip(xh) {
                *out = k * (mf * g - sum_g - h * sum_gx);
            }
        }
        Ok(GradBundle {
            input: Tensor::new(grad_out.shape(), gx)?,
            params: LayerParams::new()
                .with("scale", Tensor::new(&[c], gscale)?)
                .with("shift", Tensor::new(&[c], gshift)?),
        })
    }
}
