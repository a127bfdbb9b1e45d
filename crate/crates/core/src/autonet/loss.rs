//! Class-weighted mean squared error on sigmoid outputs.

use super::real::Real;
use super::tensor::Tensor4;
use crate::error::{Error, Result};

/// Per-pixel regression targets for one batch, aligned with the prediction.
#[derive(Debug, Clone)]
pub struct Targets<T> {
    pub y_tol: Tensor4<T>,
    pub road: Vec<bool>,
    pub valid: Vec<bool>,
}

impl<T: Real> Targets<T> {
    pub fn check(&self, pred: &Tensor4<T>) -> Result<()> {
        let len = pred.data.len();
        if self.y_tol.dims() != pred.dims() || self.road.len() != len || self.valid.len() != len {
            return Err(Error::Shape(format!(
                "targets {:?} do not align with prediction {:?}",
                self.y_tol.dims(),
                pred.dims()
            )));
        }
        Ok(())
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

fn weight(road: bool, valid: bool, lambda: f64) -> f64 {
    match (valid, road) {
        (false, _) => 0.0,
        (true, true) => lambda,
        (true, false) => 1.0,
    }
}

fn valid_total<T: Real>(pred: &Tensor4<T>, targets: &Targets<T>) -> Result<f64> {
    targets.check(pred)?;
    match targets.valid_count() {
        0 => Err(Error::Empty("loss over zero valid pixels".into())),
        n => Ok(n as f64),
    }
}

/// `(1/N) sum_i w_i (y_i - yhat_i)^2` with `w = lambda` on road pixels, 1 on
/// background and 0 on invalid pixels; `N` counts valid pixels.
pub fn weighted_mse<T: Real>(pred: &Tensor4<T>, targets: &Targets<T>, lambda: f64) -> Result<f64> {
    let n = valid_total(pred, targets)?;
    let mut sum = 0.0;
    for i in 0..pred.data.len() {
        let w = weight(targets.road[i], targets.valid[i], lambda);
        if w != 0.0 {
            let d = targets.y_tol.data[i].as_f64() - pred.data[i].as_f64();
            sum += w * d * d;
        }
    }
    Ok(sum / n)
}

/// Loss value and its gradient with respect to the prediction.
pub fn weighted_mse_grad<T: Real>(
    pred: &Tensor4<T>,
    targets: &Targets<T>,
    lambda: f64,
) -> Result<(f64, Tensor4<T>)> {
    let loss = weighted_mse(pred, targets, lambda)?;
    let scale = 2.0 / targets.valid_count() as f64;
    let mut g = Tensor4::zeros(pred.n, pred.c, pred.h, pred.w);
    for (i, o) in g.data.iter_mut().enumerate() {
        let w = weight(targets.road[i], targets.valid[i], lambda);
        if w != 0.0 {
            let d = pred.data[i].as_f64() - targets.y_tol.data[i].as_f64();
            *o = T::from_f64(scale * w * d);
        }
    }
    Ok((loss, g))
}
