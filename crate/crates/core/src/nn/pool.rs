use super::{split_ncs, GradBundle, Layer, LayerParams};
use crate::error::Result;
use crate::tensor::Tensor;

/// Mean over `D,H,W` for every `(n, c)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GlobalAvgPool;

pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let (n, c, m) = split_ncs(x.shape())?;
    let data = x
        .data()
        .chunks_exact(m)
        .map(|s| s.iter().sum::<f64>() / m as f64)
        .collect();
    Tensor::new(&[n, c], data)
}

pub fn global_avg_pool_backward(input_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let (_, _, m) = split_ncs(input_shape)?;
    let inv = 1.0 / m as f64;
    let mut data = Vec::with_capacity(grad_out.len() * m);
    for &g in grad_out.data() {
        data.extend(std::iter::repeat_n(g * inv, m));
    }
    Tensor::new(input_shape, data)
}

impl Layer for GlobalAvgPool {
    type Cache = Vec<usize>;

    fn forward(&self, _: &LayerParams, x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
        Ok((global_avg_pool(x)?, x.shape().to_vec()))
    }

    fn backward(&self, _: &LayerParams, shape: &Vec<usize>, grad_out: &Tensor) -> Result<GradBundle> {
        Ok(GradBundle {
            input: global_avg_pool_backward(shape, grad_out)?,
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
        let y = global_avg_pool(&Tensor::full(&[2, 3, 2, 2, 2], 7.0)).unwrap();
        assert_eq!(y.shape(), &[2, 3]);
        assert!(y.data().iter().all(|&v| v == 7.0));

        let x = Tensor::from_fn(&[1, 2, 2, 2, 2], |i| if i < 8 { i as f64 } else { 1.0 });
        let y = global_avg_pool(&x).unwrap();
        assert_eq!(y.data(), &[3.5, 1.0]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        for (i, shape) in [[1, 1, 2, 2, 2], [2, 3, 1, 2, 3], [1, 4, 3, 1, 2]].iter().enumerate() {
            let err = check_layer(&GlobalAvgPool, &LayerParams::new(), &random(shape, i as u64), i as u64);
            assert!(err < 1e-4, "case {i}: {err}");
        }
    }
}
