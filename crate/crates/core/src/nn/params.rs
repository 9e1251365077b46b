use indexmap::IndexMap;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Named parameter tensors of one layer, in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerParams {
    tensors: IndexMap<String, Tensor>,
}

/// Gradients of one layer: w.r.t. its input and each of its parameters.
#[derive(Debug, Clone)]
pub struct GradBundle {
    pub input: Tensor,
    pub params: LayerParams,
}

fn he_normal<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape, |_| normal.sample(rng))
}

impl LayerParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, tensor: Tensor) -> Self {
        self.insert(name, tensor);
        self
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) {
        self.tensors.insert(name.to_string(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Index(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Zero tensors with the same names and shapes.
    pub fn zeros_like(&self) -> Self {
        LayerParams {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros_like(v)))
                .collect(),
        }
    }

    /// Conv weight `Cout×Cin×kd×kh×kw` (He-normal over fan-in) and zero bias.
    pub fn conv3d<R: Rng + ?Sized>(c_out: usize, c_in: usize, kernel: [usize; 3], rng: &mut R) -> Self {
        let fan_in = c_in * kernel.iter().product::<usize>();
        LayerParams::new()
            .with(
                "weight",
                he_normal(&[c_out, c_in, kernel[0], kernel[1], kernel[2]], fan_in, rng),
            )
            .with("bias", Tensor::zeros(&[c_out]))
    }

    pub fn instance_norm(channels: usize) -> Self {
        LayerParams::new()
            .with("scale", Tensor::ones(&[channels]))
            .with("shift", Tensor::zeros(&[channels]))
    }

    pub fn linear<R: Rng + ?Sized>(out: usize, inp: usize, rng: &mut R) -> Self {
        LayerParams::new()
            .with("weight", he_normal(&[out, inp], inp, rng))
            .with("bias", Tensor::zeros(&[out]))
    }

    /// Channel squeeze-and-excitation: `C → ⌈C/r⌉ → C`.
    pub fn cse<R: Rng + ?Sized>(channels: usize, ratio: usize, rng: &mut R) -> Self {
        let hidden = channels.div_ceil(ratio.max(1));
        let fc1 = Self::linear(hidden, channels, rng);
        let fc2 = Self::linear(channels, hidden, rng);
        LayerParams::new()
            .with("fc1.weight", fc1.tensors["weight"].clone())
            .with("fc1.bias", fc1.tensors["bias"].clone())
            .with("fc2.weight", fc2.tensors["weight"].clone())
            .with("fc2.bias", fc2.tensors["bias"].clone())
    }

    /// Spatial squeeze-and-excitation: a `1×C×1×1×1` projection.
    pub fn sse<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Self {
        Self::conv3d(1, channels, [1, 1, 1], rng)
    }
}

impl<'a> IntoIterator for &'a LayerParams {
    type Item = (&'a String, &'a Tensor);
    type IntoIter = indexmap::map::Iter<'a, String, Tensor>;

    fn into_iter(self) -> Self::IntoIter {
        self.tensors.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constructor_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let conv = LayerParams::conv3d(4, 2, [3, 3, 3], &mut rng);
        assert_eq!(conv.get("weight").unwrap().shape(), &[4, 2, 3, 3, 3]);
        assert_eq!(conv.get("bias").unwrap().data(), &[0.0; 4]);

        let norm = LayerParams::instance_norm(3);
        assert_eq!(norm.get("scale").unwrap().data(), &[1.0; 3]);
        assert_eq!(norm.get("shift").unwrap().data(), &[0.0; 3]);

        let cse = LayerParams::cse(5, 2, &mut rng);
        assert_eq!(cse.get("fc1.weight").unwrap().shape(), &[3, 5]);
        assert_eq!(cse.get("fc2.weight").unwrap().shape(), &[5, 3]);

        let sse = LayerParams::sse(5, &mut rng);
        assert_eq!(sse.get("weight").unwrap().shape(), &[1, 5, 1, 1, 1]);
    }

    #[test]
    fn he_normal_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = LayerParams::linear(200, 50, &mut rng);
        let w = p.get("weight").unwrap().data();
        let var = w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
        assert!((var - 2.0 / 50.0).abs() < 0.004, "{var}");
    }
}
