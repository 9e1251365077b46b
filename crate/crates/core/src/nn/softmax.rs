use super::{GradBundle, Layer, LayerParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-wise softmax over an `N×C` tensor.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Softmax;

pub fn softmax(x: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 {
        return Err(Error::shape(format!("softmax expects N×C, got {:?}", x.shape())));
    }
    let c = x.dim(1);
    let mut out = Vec::with_capacity(x.len());
    for row in x.data().chunks_exact(c) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        out.extend(row.iter().map(|v| (v - max).exp()));
        let z: f64 = out[start..].iter().sum();
        for v in &mut out[start..] {
            *v /= z;
        }
    }
    Tensor::new(x.shape(), out)
}

/// Gradient w.r.t. the logits given the softmax output `y`.
pub fn softmax_backward(y: &Tensor, grad_out: &Tensor) -> Tensor {
    let c = y.dim(1);
    let mut gx = Vec::with_capacity(y.len());
    for (yr, gr) in y.data().chunks_exact(c).zip(grad_out.data().chunks_exact(c)) {
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        gx.extend(yr.iter().zip(gr).map(|(a, g)| a * (g - dot)));
    }
    Tensor::new(y.shape(), gx).expect("same shape")
}

impl Layer for Softmax {
    type Cache = Tensor;

    fn forward(&self, _: &LayerParams, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let y = softmax(x)?;
        Ok((y.clone(), y))
    }

    fn backward(&self, _: &LayerParams, y: &Tensor, grad_out: &Tensor) -> Result<GradBundle> {
        Ok(GradBundle {
            input: softmax_backward(y, grad_out),
            params: LayerParams::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::test_util::{check_layer, random};

    #[test]
    fn examples() {
        let y = softmax(&Tensor::zeros(&[1, 2])).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);
        let y = softmax(&Tensor::new(&[1, 2], vec![1000.0, 0.0]).unwrap()).unwrap();
        assert!(y.is_finite());
        assert!((y.data()[0] - 1.0).abs() < 1e-12 && y.data()[1] < 1e-300);
    }

    #[test]
    fn rows_sum_to_one_and_shift_invariant() {
        let x = random(&[6, 7], 3).scale(20.0);
        let y = softmax(&x).unwrap();
        let shifted = softmax(&x.map(|v| v + 123.0)).unwrap();
        for (row, srow) in y.data().chunks(7).zip(shifted.data().chunks(7)) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (a, b) in row.iter().zip(srow) {
                assert!((a - b).abs() < 1e-12);
                assert!(*a > 0.0 && *a < 1.0);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        for (i, shape) in [[1, 2], [3, 7], [4, 3]].iter().enumerate() {
            let err = check_layer(&Softmax, &LayerParams::new(), &random(shape, i as u64), i as u64);
            assert!(err < 1e-4, "case {i}: {err}");
        }
    }
}
