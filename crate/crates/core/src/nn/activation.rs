use super::{GradBundle, Layer, LayerParams};
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActivationKind {
    LeakyRelu(f64),
    Relu,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Activation(pub ActivationKind);

#[inline]
pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl ActivationKind {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            ActivationKind::LeakyRelu(slope) => {
                if v >= 0.0 {
                    v
                } else {
                    slope * v
                }
            }
            ActivationKind::Relu => v.max(0.0),
            ActivationKind::Sigmoid => sigmoid(v),
        }
    }

    pub fn forward(self, x: &Tensor) -> Tensor {
        x.map(|v| self.apply(v))
    }

    /// `grad_in` given the layer input `x` and output `y`.
    pub fn backward(self, x: &Tensor, y: &Tensor, grad_out: &Tensor) -> Tensor {
        let data = match self {
            ActivationKind::LeakyRelu(slope) => x
                .data()
                .iter()
                .zip(grad_out.data())
                .map(|(&v, &g)| if v >= 0.0 { g } else { slope * g })
                .collect(),
            ActivationKind::Relu => x
                .data()
                .iter()
                .zip(grad_out.data())
                .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                .collect(),
            ActivationKind::Sigmoid => y
                .data()
                .iter()
                .zip(grad_out.data())
                .map(|(&s, &g)| g * s * (1.0 - s))
                .collect(),
        };
        Tensor::new(x.shape(), data).expect("same shape")
    }
}

impl Layer for Activation {
    type Cache = (Tensor, Tensor);

    fn forward(&self, _: &LayerParams, x: &Tensor) -> Result<(Tensor, Self::Cache)> {
        let y = self.0.forward(x);
        Ok((y.clone(), (x.clone(), y)))
    }

    fn backward(&self, _: &LayerParams, cache: &Self::Cache, grad_out: &Tensor) -> Result<GradBundle> {
        Ok(GradBundle {
            input: self.0.backward(&cache.0, &cache.1, grad_out),
            params: LayerParams::new(),
        })
    }
}
