use super::{GradBundle, Layer, LayerParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Fully connected layer, `y = x·Wᵀ + b` with `W` stored `out×in`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Linear;

pub fn linear_forward(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(1) || bias.shape() != [weight.dim(0)] {
        return Err(Error::shape(format!(
            "linear input {:?} with weight {:?} and bias {:?}",
            x.shape(),
            weight.shape(),
            bias.shape()
        )));
    }
    let (n, inp, out) = (x.dim(0), x.dim(1), weight.dim(0));
    let mut y = Vec::with_capacity(n * out);
    for row in x.data().chunks_exact(inp) {
        for (wrow, &b) in weight.data().chunks_exact(inp).zip(bias.data()) {
            y.push(b + row.iter().zip(wrow).map(|(a, w)| a * w).sum::<f64>());
        }
    }
    Tensor::new(&[n, out], y)
}

/// Gradients w.r.t. `(input, weight, bias)`.
pub fn linear_backward(x: &Tensor, weight: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, inp, out) = (x.dim(0), x.dim(1), weight.dim(0));
    if grad_out.shape() != [n, out] {
        return Err(Error::shape(format!(
            "linear grad_out {:?}, expected [{n}, {out}]",
            grad_out.shape()
        )));
    }
    let gx = grad_out.matmul(weight)?;
    let mut gw = vec![0.0; out * inp];
    let mut gb = vec![0.0; out];
    for (grow, xrow) in grad_out.data().chunks_exact(out).zip(x.data().chunks_exact(inp)) {
        for (o, &g) in grow.iter().enumerate() {
            gb[o] += g;
            if g == 0.0 {
                continue;
            }
            for (w, &xv) in gw[o * inp..(o + 1) * inp].iter_mut().zip(xrow) {
                *w += g * xv;
            }
        }
    }
    Ok((gx, Tensor::new(&[out, inp], gw)?, Tensor::new(&[out], gb)?))
}

impl Layer for Linear {
    type Cache = Tensor;

    fn forward(&self, params: &LayerParams, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let y = linear_forward(x, params.get("weight")?, params.get("bias")?)?;
        Ok((y, x.clone()))
    }

    fn backward(&self, params: &LayerParams, x: &Tensor, grad_out: &Tensor) -> Result<GradBundle> {
        let (gx, gw, gb) = linear_backward(x, params.get("weight")?, grad_out)?;
        Ok(GradBundle {
            input: gx,
            params: LayerParams::new().with("weight", gw).with("bias", gb),
        })
    }
}
