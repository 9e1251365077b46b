use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Inverted dropout. The mask returned by `forward` must be handed back to
/// `backward` for the matching pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    rate: f64,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::param(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Dropout { rate })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Returns the output and, in training mode, the scaled keep-mask.
    pub fn forward<R: Rng + ?Sized>(&self, x: &Tensor, training: bool, rng: &mut R) -> (Tensor, Option<Tensor>) {
        if !training || self.rate == 0.0 {
            return (x.clone(), None);
        }
        let keep = 1.0 / (1.0 - self.rate);
        let mask = Tensor::from_fn(x.shape(), |_| if rng.random::<f64>() < self.rate { 0.0 } else { keep });
        let y = x.mul(&mask).expect("same shape");
        (y, Some(mask))
    }

    pub fn backward(&self, mask: Option<&Tensor>, grad_out: &Tensor) -> Tensor {
        match mask {
            Some(m) => grad_out.mul(m).expect("same shape"),
            None => grad_out.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn invalid_rate() {
        assert!(Dropout::new(1.0).is_err());
        assert!(Dropout::new(-0.1).is_err());
    }

    #[test]
    fn zero_rate_and_eval_mode_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::from_fn(&[4, 5], |i| i as f64 - 7.5);
        let zero = Dropout::new(0.0).unwrap();
        assert_eq!(zero.forward(&x, true, &mut rng).0, x);
        assert_eq!(zero.forward(&x, false, &mut rng).0, x);
        let half = Dropout::new(0.5).unwrap();
        let (y, mask) = half.forward(&x, false, &mut rng);
        assert_eq!(y, x);
        assert!(mask.is_none());
    }

    #[test]
    fn training_statistics() {
        let d = Dropout::new(0.5).unwrap();
        let x = Tensor::ones(&[100_000]);
        for seed in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (y, _) = d.forward(&x, true, &mut rng);
            let survivors = y.data().iter().filter(|&&v| v != 0.0).count() as f64 / 1e5;
            let mean = y.sum() / 1e5;
            assert!((survivors - 0.5).abs() < 0.01, "{survivors}");
            assert!((mean - 1.0).abs() < 0.02, "{mean}");
        }
    }

    #[test]
    fn backward_reuses_mask() {
        let d = Dropout::new(0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::ones(&[50]);
        let (y, mask) = d.forward(&x, true, &mut rng);
        let g = d.backward(mask.as_ref(), &Tensor::ones(&[50]));
        assert_eq!(g, y);
    }
}
