//! Central finite-difference oracle for parameter gradients (64-bit).

use sartol::autonet::{
    backward, forward, init_params, weighted_mse, weighted_mse_grad, LayerSpec, Mode, ModelParams,
    ModelSpec, SpecBuilder, Targets, Tensor4,
};
use sartol::rng::SplitMix64;

pub const FD_STEP: f64 = 1e-3;
pub const REL_TOL: f64 = 1e-4;
/// Gradients below this magnitude are compared absolutely (their relative
/// error is dominated by roundoff in the difference quotient).
pub const ABS_FLOOR: f64 = 1e-7;

pub struct Problem {
    pub spec: ModelSpec,
    pub params: ModelParams<f64>,
    pub input: Tensor4<f64>,
    pub targets: Targets<f64>,
    pub lambda: f64,
}

#[derive(Debug, Clone)]
pub struct Mismatch {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel: f64,
}

#[derive(Debug, Default)]
pub struct Report {
    pub checked: usize,
    /// Entries whose difference stencil crossed a ReLU or pooling boundary;
    /// the loss is not differentiable along that segment, so they are not compared.
    pub kinked: usize,
    /// Entries where the plain difference quotient was too coarse and the
    /// Richardson value (steps h and h/2) served as the reference.
    pub refined: usize,
    pub worst: f64,
    pub failures: Vec<Mismatch>,
}

pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(ABS_FLOOR)
}

/// Random problem around `spec`: parameters from the usual initializer with
/// every bias, batch-norm scale and shift perturbed so no gradient vanishes
/// by symmetry, plus random targets, road mask, valid mask and lambda.
pub fn random_problem(spec: ModelSpec, n: usize, hw: usize, seed: u64) -> Problem {
    let mut rng = SplitMix64::derive(seed, 77);
    let mut params = init_params::<f64>(&spec, seed).unwrap();
    for (slot, t) in params.slots.iter().zip(params.tensors.iter_mut()) {
        let name = slot.name.as_str();
        if name.ends_with("bias") || name.ends_with("beta") {
            t.iter_mut().for_each(|v| *v = 0.2 * rng.normal());
        } else if name.ends_with("gamma") {
            t.iter_mut().for_each(|v| *v = 1.0 + 0.3 * rng.normal());
        } else if name.ends_with("weight") && slot.shape.len() == 4 && slot.shape[2] == 4 {
            // transposed convs start as exact bilinear kernels; break the structure
            t.iter_mut().for_each(|v| *v += 0.1 * rng.normal());
        }
    }
    let c = spec.in_channels;
    let len = n * hw * hw;
    let input = Tensor4::from_vec(n, c, hw, hw, (0..n * c * hw * hw).map(|_| rng.normal()).collect()).unwrap();
    let road: Vec<bool> = (0..len).map(|_| rng.uniform() < 0.2).collect();
    let y: Vec<f64> = road
        .iter()
        .map(|&r| if r { 1.0 } else { (rng.uniform() - 0.4).max(0.0) })
        .collect();
    let valid: Vec<bool> = (0..len).map(|_| rng.uniform() < 0.8).collect();
    let lambda = [1.0, 2.0, 4.0, 8.0][rng.below(4) as usize];
    Problem {
        spec,
        params,
        input,
        targets: Targets {
            y_tol: Tensor4::from_vec(n, 1, hw, hw, y).unwrap(),
            road,
            valid,
        },
        lambda,
    }
}

/// Loss plus the branch pattern of every piecewise-linear layer: the sign of
/// each ReLU input and the winner of each pooling window.
pub fn loss_at(p: &Problem, params: &ModelParams<f64>) -> (f64, Vec<u8>) {
    let (pred, cache) = forward(&p.spec, params, &p.input, Mode::Train).unwrap();
    let mut pattern = Vec::new();
    for (i, layer) in p.spec.layers.iter().enumerate() {
        match layer {
            LayerSpec::Relu => pattern.extend(cache.node(i).data.iter().map(|&v| (v > 0.0) as u8)),
            LayerSpec::MaxPool2 => pattern.extend_from_slice(cache.pool_argmax(i).unwrap()),
            _ => {}
        }
    }
    (weighted_mse(&pred, &p.targets, p.lambda).unwrap(), pattern)
}

pub fn analytic(p: &Problem) -> Vec<Vec<f64>> {
    let (pred, cache) = forward(&p.spec, &p.params, &p.input, Mode::Train).unwrap();
    let (_, g) = weighted_mse_grad(&pred, &p.targets, p.lambda).unwrap();
    backward(&p.spec, &p.params, &cache, g).unwrap()
}

/// Checks `per_tensor` entries of every trainable tensor (all entries when
/// `per_tensor` is `None`). Sampled entries always include the largest
/// analytic gradient of the tensor.
pub fn check(p: &Problem, per_tensor: Option<usize>, seed: u64) -> Report {
    check_against(p, &analytic(p), per_tensor, seed)
}

/// Same as [`check`] with caller-supplied gradients.
pub fn check_against(p: &Problem, grads: &[Vec<f64>], per_tensor: Option<usize>, seed: u64) -> Report {
    let (_, base) = loss_at(p, &p.params);
    let mut rng = SplitMix64::derive(seed, 99);
    let mut report = Report::default();
    let mut work = p.params.clone();
    for (ti, slot) in p.params.slots.iter().enumerate() {
        if !slot.trainable {
            continue;
        }
        let len = slot.len();
        let idx: Vec<usize> = match per_tensor {
            None => (0..len).collect(),
            Some(k) if k >= len => (0..len).collect(),
            Some(k) => {
                let g = &grads[ti];
                let top = (0..len).max_by(|&a, &b| g[a].abs().total_cmp(&g[b].abs())).unwrap();
                let mut v = vec![top];
                while v.len() < k {
                    v.push(rng.below(len as u64) as usize);
                }
                v
            }
        };
        for i in idx {
            let orig = work.tensors[ti][i];
            work.tensors[ti][i] = orig + FD_STEP;
            let (up, pu) = loss_at(p, &work);
            work.tensors[ti][i] = orig - FD_STEP;
            let (down, pd) = loss_at(p, &work);
            work.tensors[ti][i] = orig;
            if pu != base || pd != base {
                report.kinked += 1;
                continue;
            }
            let a = grads[ti][i];
            let mut numeric = (up - down) / (2.0 * FD_STEP);
            let mut rel = rel_error(a, numeric);
            if rel > REL_TOL {
                // truncation error h^2 f'''/6 can exceed the tolerance on tiny gradients
                let half = FD_STEP / 2.0;
                work.tensors[ti][i] = orig + half;
                let (up2, pu2) = loss_at(p, &work);
                work.tensors[ti][i] = orig - half;
                let (down2, pd2) = loss_at(p, &work);
                work.tensors[ti][i] = orig;
                if pu2 == base && pd2 == base {
                    let fine = (up2 - down2) / (2.0 * half);
                    let extrapolated = (4.0 * fine - numeric) / 3.0;
                    let r2 = rel_error(a, extrapolated);
                    if r2 <= REL_TOL {
                        report.refined += 1;
                        numeric = extrapolated;
                        rel = r2;
                    }
                }
            }
            report.checked += 1;
            report.worst = report.worst.max(rel);
            if rel > REL_TOL {
                report.failures.push(Mismatch {
                    tensor: slot.name.clone(),
                    index: i,
                    analytic: a,
                    numeric,
                    rel,
                });
            }
        }
    }
    report
}

fn head(b: &mut SpecBuilder) {
    b.conv(1, 1);
    b.push(LayerSpec::SigmoidHead);
}

/// Small networks isolating each layer type, each closed by a 1x1 conv and
/// a sigmoid so the loss applies.
pub fn isolated_specs() -> Vec<(&'static str, ModelSpec)> {
    use sartol::autonet::FuseMode;
    let mut out = Vec::new();
    let mut add = |name: &'static str, build: &dyn Fn(&mut SpecBuilder)| {
        let mut b = SpecBuilder::new(3);
        build(&mut b);
        head(&mut b);
        out.push((name, b.finish(name)));
    };
    add("conv3", &|b| {
        b.conv(3, 4);
    });
    add("conv1", &|b| {
        b.conv(1, 4);
    });
    add("conv5_stride2+transposed_conv", &|b| {
        b.push(LayerSpec::Conv { k: 5, out_ch: 4, stride: 2 });
        b.push(LayerSpec::TransposedConv { k: 4, out_ch: 2, stride: 2 });
    });
    add("batch_norm", &|b| {
        b.push(LayerSpec::BatchNorm);
    });
    add("relu", &|b| {
        b.conv(3, 4);
        b.push(LayerSpec::Relu);
    });
    add("maxpool2", &|b| {
        b.conv(3, 4);
        b.push(LayerSpec::MaxPool2);
        b.push(LayerSpec::TransposedConv { k: 4, out_ch: 3, stride: 2 });
    });
    add("transposed_conv", &|b| {
        b.push(LayerSpec::MaxPool2);
        b.push(LayerSpec::TransposedConv { k: 4, out_ch: 5, stride: 2 });
    });
    add("skip_add", &|b| {
        b.conv(3, 3);
        b.push(LayerSpec::SkipFuse { source: 0, mode: FuseMode::Add });
    });
    add("skip_add_after_1x1", &|b| {
        b.conv(3, 4);
        b.push(LayerSpec::SkipFuse { source: 0, mode: FuseMode::AddAfter1x1 });
    });
    add("skip_concat", &|b| {
        b.conv(3, 2);
        b.push(LayerSpec::SkipFuse { source: 0, mode: FuseMode::Concat });
    });
    add("sigmoid_head", &|_| {});
    out
}
