//! SGD with classical momentum and the cosine learning-rate schedule.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::ModelParams;

/// `0.5 · lr0 · (1 + cos(π t / T))` for `0 ≤ t ≤ T`.
pub fn cosine_lr(t: usize, lr_init: f64, max_epochs: usize) -> Result<f64> {
    if max_epochs == 0 || t > max_epochs {
        return Err(Error::param(format!(
            "epoch {t} outside the schedule [0, {max_epochs}]"
        )));
    }
    Ok(0.5 * lr_init * (1.0 + (PI * t as f64 / max_epochs as f64).cos()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub velocity: ModelParams,
    /// Epoch the next step belongs to; used in diagnostics.
    pub epoch: usize,
    pub lr: f64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        OptimizerState {
            velocity: params.zeros_like(),
            epoch: 0,
            lr: 0.0,
        }
    }
}

/// `v ← μ v + g; w ← w − lr v`. Gradients are checked for NaN/Inf first so
/// a failed step leaves parameters and velocity untouched.
pub fn sgd_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut OptimizerState,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if let Some(layer) = grads.first_non_finite() {
        return Err(Error::NonFinite {
            epoch: state.epoch,
            layer,
        });
    }
    for (lname, layer) in params.layers_mut() {
        let g_layer = grads
            .layer(lname)
            .map_err(|_| Error::shape(format!("no gradient for layer {lname}")))?;
        let v_layer = state
            .velocity
            .layer_mut(lname)
            .ok_or_else(|| Error::shape(format!("no velocity for layer {lname}")))?;
        for (pname, w) in layer.iter_mut() {
            let g = g_layer.get(pname)?;
            let v = v_layer
                .get_mut(pname)
                .ok_or_else(|| Error::shape(format!("no velocity for {lname}.{pname}")))?;
            if g.shape() != w.shape() || v.shape() != w.shape() {
                return Err(Error::shape(format!(
                    "{lname}.{pname}: weight {:?}, gradient {:?}, velocity {:?}",
                    w.shape(),
                    g.shape(),
                    v.shape()
                )));
            }
            for ((wi, vi), gi) in w.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *vi = momentum * *vi + gi;
                *wi -= lr * *vi;
            }
        }
    }
    state.lr = lr;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerParams;
    use crate::tensor::Tensor;

    fn single(v: f64) -> ModelParams {
        let mut p = ModelParams::new();
        p.insert(
            "fc",
            LayerParams::new().with("weight", Tensor::new(&[1], vec![v]).unwrap()),
        );
        p
    }

    fn value(p: &ModelParams) -> f64 {
        p.layer("fc").unwrap().get("weight").unwrap().data()[0]
    }

    #[test]
    fn schedule_examples() {
        assert_eq!(cosine_lr(0, 3e-5, 300).unwrap(), 3e-5);
        assert!(cosine_lr(300, 3e-5, 300).unwrap().abs() < 1e-20);
        assert!((cosine_lr(150, 3e-5, 300).unwrap() - 1.5e-5).abs() < 1e-18);
        assert!(cosine_lr(301, 3e-5, 300).is_err());
    }

    #[test]
    fn hand_iterated_momentum() {
        let mut w = single(0.0);
        let g = single(1.0);
        let mut s = OptimizerState::new(&w);
        sgd_step(&mut w, &g, &mut s, 0.1, 0.9).unwrap();
        assert!((value(&w) + 0.1).abs() < 1e-15);
        sgd_step(&mut w, &g, &mut s, 0.1, 0.9).unwrap();
        assert!((value(&s.velocity) - 1.9).abs() < 1e-15);
        assert!((value(&w) + 0.29).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_and_fixed_point() {
        let mut w = single(2.0);
        let mut s = OptimizerState::new(&w);
        sgd_step(&mut w, &single(1.0), &mut s, 0.0, 0.9).unwrap();
        assert_eq!(value(&w), 2.0);
        assert_eq!(value(&s.velocity), 1.0);

        let mut s = OptimizerState::new(&w);
        sgd_step(&mut w, &single(0.0), &mut s, 0.5, 0.9).unwrap();
        assert_eq!(value(&w), 2.0);
    }

    #[test]
    fn nan_gradient_names_the_layer() {
        let mut w = single(1.0);
        let mut s = OptimizerState::new(&w);
        s.epoch = 7;
        let err = sgd_step(&mut w, &single(f64::NAN), &mut s, 0.1, 0.9).unwrap_err();
        assert!(
            matches!(err, Error::NonFinite { epoch: 7, ref layer } if layer == "fc.weight"),
            "{err}"
        );
        assert_eq!(value(&w), 1.0);
    }
}
