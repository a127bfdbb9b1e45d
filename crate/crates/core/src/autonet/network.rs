//! Forward and backward passes over a [`ModelSpec`].

use super::ops::{self, BnBatchStats, BN_EPS};
use super::params::ModelParams;
use super::real::Real;
use super::spec::{FuseMode, LayerSpec, ModelSpec, Plan};
use super::tensor::Tensor4;
use crate::error::{Error, Result};

/// Batch-norm running averages keep this fraction of their previous value.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch-norm; the cache keeps every node.
    Train,
    /// Running statistics; nodes are freed as soon as no later layer reads them.
    Infer,
}

/// Intermediates recorded by [`forward`].
#[derive(Debug, Clone)]
pub struct Cache<T> {
    mode: Mode,
    nodes: Vec<Tensor4<T>>,
    bn: Vec<Option<BnBatchStats>>,
    pool: Vec<Option<Vec<u8>>>,
}

impl<T> Cache<T> {
    /// Per-layer batch statistics of a training pass (`None` for other layers).
    pub fn batch_stats(&self) -> &[Option<BnBatchStats>] {
        &self.bn
    }

    /// Input of layer `i` (node `len` is the prediction). Empty for nodes an
    /// inference pass already released.
    pub fn node(&self, i: usize) -> &Tensor4<T> {
        &self.nodes[i]
    }

    /// Winning offsets of max-pool layer `i`, row-major inside the 2x2 window.
    pub fn pool_argmax(&self, i: usize) -> Option<&[u8]> {
        self.pool[i].as_deref()
    }
}

fn empty<T: Real>() -> Tensor4<T> {
    Tensor4::zeros(0, 0, 0, 0)
}

fn last_uses(spec: &ModelSpec) -> Vec<usize> {
    let mut last = (0..=spec.layers.len()).collect::<Vec<_>>();
    for (i, layer) in spec.layers.iter().enumerate() {
        if let LayerSpec::SkipFuse { source, .. } = *layer {
            last[source] = last[source].max(i);
        }
    }
    last
}

pub fn forward<T: Real>(
    spec: &ModelSpec,
    params: &ModelParams<T>,
    batch: &Tensor4<T>,
    mode: Mode,
) -> Result<(Tensor4<T>, Cache<T>)> {
    let plan = spec.plan()?;
    params.check_against(spec)?;
    if batch.c != spec.in_channels {
        return Err(Error::Shape(format!(
            "batch has {} channels, `{}` expects {}",
            batch.c, spec.name, spec.in_channels
        )));
    }
    spec.check_input(batch.h, batch.w)?;
    let last = last_uses(spec);
    let n_layers = spec.layers.len();
    let mut nodes = Vec::with_capacity(n_layers + 1);
    nodes.push(batch.clone());
    let mut bn = vec![None; n_layers];
    let mut pool = vec![None; n_layers];
    let t = &params.tensors;

    for (i, layer) in spec.layers.iter().enumerate() {
        let idx = &plan.params[i];
        let x = &nodes[i];
        let y = match *layer {
            LayerSpec::Conv { k, out_ch, stride } => {
                ops::conv_forward(x, &t[idx[0]], &t[idx[1]], k, stride, out_ch)
            }
            LayerSpec::TransposedConv { k, out_ch, stride } => {
                ops::tconv_forward(x, &t[idx[0]], &t[idx[1]], k, stride, out_ch)
            }
            LayerSpec::BatchNorm => {
                let (gamma, beta) = (&t[idx[0]], &t[idx[1]]);
                match mode {
                    Mode::Train => {
                        let st = ops::bn_stats(x);
                        let y = ops::bn_apply(x, gamma, beta, &st.mean, &st.inv_std);
                        bn[i] = Some(st);
                        y
                    }
                    Mode::Infer => {
                        let mean: Vec<f64> = t[idx[2]].iter().map(|v| v.as_f64()).collect();
                        let inv: Vec<f64> = t[idx[3]]
                            .iter()
                            .map(|v| 1.0 / (v.as_f64() + BN_EPS).sqrt())
                            .collect();
                        ops::bn_apply(x, gamma, beta, &mean, &inv)
                    }
                }
            }
            LayerSpec::Relu => ops::relu_forward(x),
            LayerSpec::MaxPool2 => {
                let (y, arg) = ops::maxpool_forward(x);
                if mode == Mode::Train {
                    pool[i] = Some(arg);
                }
                y
            }
            LayerSpec::SkipFuse { source, mode: fuse } => {
                let src = &nodes[source];
                match fuse {
                    FuseMode::Add => ops::add(x, src),
                    FuseMode::AddAfter1x1 => {
                        let proj = ops::conv_forward(src, &t[idx[0]], &t[idx[1]], 1, 1, x.c);
                        ops::add(x, &proj)
                    }
                    FuseMode::Concat => ops::concat(x, src),
                }
            }
            LayerSpec::SigmoidHead => ops::sigmoid_forward(x),
        };
        debug_assert_eq!(y.c, plan.channels[i + 1]);
        y.check_finite(&format!("layer {i} ({}) output", layer.kind()))?;
        nodes.push(y);
        if mode == Mode::Infer {
            for j in 0..=i {
                if last[j] <= i && nodes[j].n != 0 {
                    nodes[j] = empty();
                }
            }
        }
    }
    let pred = nodes.last().expect("output node").clone();
    Ok((pred, Cache { mode, nodes, bn, pool }))
}

/// Folds the batch statistics of a training pass into the running averages.
pub fn update_running_stats<T: Real>(
    spec: &ModelSpec,
    params: &mut ModelParams<T>,
    cache: &Cache<T>,
) -> Result<()> {
    let plan = spec.plan()?;
    check_cache(spec, cache)?;
    for (i, st) in cache.bn.iter().enumerate() {
        let Some(st) = st else { continue };
        let x = &cache.nodes[i];
        let count = (x.n * x.plane()) as f64;
        let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
        let idx = &plan.params[i];
        for c in 0..st.mean.len() {
            let rm = &mut params.tensors[idx[2]][c];
            *rm = T::from_f64(BN_MOMENTUM * rm.as_f64() + (1.0 - BN_MOMENTUM) * st.mean[c]);
            let rv = &mut params.tensors[idx[3]][c];
            *rv = T::from_f64(BN_MOMENTUM * rv.as_f64() + (1.0 - BN_MOMENTUM) * st.var[c] * unbias);
        }
    }
    Ok(())
}

fn check_cache<T>(spec: &ModelSpec, cache: &Cache<T>) -> Result<()> {
    if cache.mode != Mode::Train {
        return Err(Error::Structural("backward needs a cache from a training pass".into()));
    }
    if cache.nodes.len() != spec.layers.len() + 1 {
        return Err(Error::Structural(format!(
            "cache holds {} nodes, `{}` has {}",
            cache.nodes.len(),
            spec.name,
            spec.layers.len() + 1
        )));
    }
    Ok(())
}

fn accumulate<T: Real>(slot: &mut Option<Tensor4<T>>, g: Tensor4<T>) {
    match slot {
        Some(acc) => ops::add_into(acc, &g),
        None => *slot = Some(g),
    }
}

fn add_vec<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Parameter gradients given `dL/d(prediction)`. Non-trainable tensors get
/// zero gradients.
pub fn backward<T: Real>(
    spec: &ModelSpec,
    params: &ModelParams<T>,
    cache: &Cache<T>,
    grad_pred: Tensor4<T>,
) -> Result<Vec<Vec<T>>> {
    let plan: Plan = spec.plan()?;
    params.check_against(spec)?;
    check_cache(spec, cache)?;
    let out = cache.nodes.last().expect("output node");
    if grad_pred.dims() != out.dims() {
        return Err(Error::Shape(format!(
            "loss gradient is {:?}, prediction is {:?}",
            grad_pred.dims(),
            out.dims()
        )));
    }
    let t = &params.tensors;
    let mut grads = params.zeros_like();
    let mut node_grads: Vec<Option<Tensor4<T>>> = vec![None; spec.layers.len() + 1];
    node_grads[spec.layers.len()] = Some(grad_pred);

    for (i, layer) in spec.layers.iter().enumerate().rev() {
        let Some(gy) = node_grads[i + 1].take() else { continue };
        let idx = &plan.params[i];
        let x = &cache.nodes[i];
        let y = &cache.nodes[i + 1];
        let dx = match *layer {
            LayerSpec::Conv { k, stride, .. } => {
                let (dx, dw, db) = ops::conv_backward(x, &t[idx[0]], k, stride, &gy);
                add_vec(&mut grads[idx[0]], &dw);
                add_vec(&mut grads[idx[1]], &db);
                dx
            }
            LayerSpec::TransposedConv { k, stride, .. } => {
                let (dx, dw, db) = ops::tconv_backward(x, &t[idx[0]], k, stride, &gy);
                add_vec(&mut grads[idx[0]], &dw);
                add_vec(&mut grads[idx[1]], &db);
                dx
            }
            LayerSpec::BatchNorm => {
                let st = cache.bn[i]
                    .as_ref()
                    .ok_or_else(|| Error::Structural(format!("layer {i}: missing batch statistics")))?;
                let (dx, dg, db) = ops::bn_backward(x, &t[idx[0]], st, &gy);
                add_vec(&mut grads[idx[0]], &dg);
                add_vec(&mut grads[idx[1]], &db);
                dx
            }
            LayerSpec::Relu => ops::relu_backward(y, &gy),
            LayerSpec::MaxPool2 => {
                let arg = cache.pool[i]
                    .as_ref()
                    .ok_or_else(|| Error::Structural(format!("layer {i}: missing pooling indices")))?;
                ops::maxpool_backward(x.dims(), arg, &gy)
            }
            LayerSpec::SkipFuse { source, mode } => match mode {
                FuseMode::Add => {
                    accumulate(&mut node_grads[source], gy.clone());
                    gy
                }
                FuseMode::AddAfter1x1 => {
                    let src = &cache.nodes[source];
                    let (ds, dw, db) = ops::conv_backward(src, &t[idx[0]], 1, 1, &gy);
                    add_vec(&mut grads[idx[0]], &dw);
                    add_vec(&mut grads[idx[1]], &db);
                    accumulate(&mut node_grads[source], ds);
                    gy
                }
                FuseMode::Concat => {
                    let (dcur, dsrc) = ops::split(&gy, x.c);
                    accumulate(&mut node_grads[source], dsrc);
                    dcur
                }
            },
            LayerSpec::SigmoidHead => ops::sigmoid_backward(y, &gy),
        };
        accumulate(&mut node_grads[i], dx);
    }
    for (g, slot) in grads.iter().zip(&params.slots) {
        if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient in {} at {pos}", slot.name)));
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autonet::params::init_params;
    use crate::autonet::spec::SpecBuilder;

    #[test]
    fn zero_input_gives_half_everywhere() {
        let spec = ModelSpec::mini_fcn();
        let p = init_params::<f64>(&spec, 3).unwrap();
        let x = Tensor4::zeros(2, 1, 32, 32);
        for mode in [Mode::Train, Mode::Infer] {
            let (y, _) = forward(&spec, &p, &x, mode).unwrap();
            assert_eq!(y.dims(), (2, 1, 32, 32));
            assert!(y.data.iter().all(|&v| v == 0.5));
        }
    }

    #[test]
    fn output_matches_input_size() {
        let spec = ModelSpec::mini_res_unet();
        let p = init_params::<f32>(&spec, 1).unwrap();
        let mut r = crate::rng::SplitMix64::new(5);
        for (h, w) in [(16, 16), (32, 16)] {
            let x = Tensor4::from_vec(1, 1, h, w, (0..h * w).map(|_| r.normal() as f32).collect()).unwrap();
            let (y, _) = forward(&spec, &p, &x, Mode::Infer).unwrap();
            assert_eq!(y.dims(), (1, 1, h, w));
            assert!(y.data.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn bad_size_names_layer() {
        let spec = ModelSpec::mini_fcn();
        let p = init_params::<f32>(&spec, 1).unwrap();
        let err = forward(&spec, &p, &Tensor4::zeros(1, 1, 12, 16), Mode::Train).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn residual_unit_with_zero_convs_is_identity() {
        let mut b = SpecBuilder::new(4);
        b.residual_unit(4);
        let spec = b.finish("unit");
        let mut p = init_params::<f64>(&spec, 2).unwrap();
        for (slot, t) in p.slots.iter().zip(p.tensors.iter_mut()) {
            if slot.name.ends_with("weight") {
                t.fill(0.0);
            }
        }
        let mut r = crate::rng::SplitMix64::new(9);
        let x = Tensor4::from_vec(2, 4, 8, 8, (0..512).map(|_| r.normal()).collect()).unwrap();
        for mode in [Mode::Train, Mode::Infer] {
            let (y, _) = forward(&spec, &p, &x, mode).unwrap();
            assert_eq!(y.data, x.data);
        }
    }

    #[test]
    fn running_stats_move_towards_batch() {
        let mut b = SpecBuilder::new(1);
        b.push(LayerSpec::BatchNorm);
        let spec = b.finish("bn");
        let mut p = init_params::<f64>(&spec, 0).unwrap();
        let x = Tensor4::from_vec(1, 1, 1, 4, vec![1.0, 3.0, 1.0, 3.0]).unwrap();
        let (_, cache) = forward(&spec, &p, &x, Mode::Train).unwrap();
        update_running_stats(&spec, &mut p, &cache).unwrap();
        assert!((p.tensors[2][0] - 0.2).abs() < 1e-12);
        // unbiased variance 4/3
        assert!((p.tensors[3][0] - (0.9 + 0.1 * 4.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn infer_cache_rejected_by_backward() {
        let spec = ModelSpec::mini_fcn();
        let p = init_params::<f64>(&spec, 0).unwrap();
        let x = Tensor4::zeros(1, 1, 16, 16);
        let (y, cache) = forward(&spec, &p, &x, Mode::Infer).unwrap();
        assert!(backward(&spec, &p, &cache, y).is_err());
    }
}
