use super::real::Real;
use super::spec::{LayerSpec, ModelSpec, ParamSlot};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Every tensor of a model in declaration order: per layer, weights then
/// biases, and for batch-norm scale, shift, running mean, running variance.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub slots: Vec<ParamSlot>,
    pub tensors: Vec<Vec<T>>,
}

impl<T: Real> ModelParams<T> {
    pub fn zeros_like(&self) -> Vec<Vec<T>> {
        self.tensors.iter().map(|t| vec![T::zero(); t.len()]).collect()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            slots: self.slots.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| t.iter().map(|&v| U::from_f64(v.as_f64())).collect())
                .collect(),
        }
    }

    pub fn check_against(&self, spec: &ModelSpec) -> Result<()> {
        let plan = spec.plan()?;
        if plan.slots != self.slots {
            return Err(Error::Structural(format!(
                "parameters do not match the layout of `{}`",
                spec.name
            )));
        }
        for (slot, t) in self.slots.iter().zip(&self.tensors) {
            if slot.len() != t.len() {
                return Err(Error::Structural(format!("tensor {} has wrong length", slot.name)));
            }
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Vec::len).sum()
    }
}

/// Separable bilinear upsampling kernel of size `k`.
pub fn bilinear_kernel(k: usize) -> Vec<f64> {
    let factor = ((k + 1) / 2) as f64;
    let center = if k % 2 == 1 { factor - 1.0 } else { factor - 0.5 };
    let line: Vec<f64> = (0..k)
        .map(|i| 1.0 - (i as f64 - center).abs() / factor)
        .collect();
    let mut out = Vec::with_capacity(k * k);
    for a in &line {
        for b in &line {
            out.push(a * b);
        }
    }
    out
}

/// He-uniform convolution weights, bilinear transposed convolutions, zero
/// biases, identity batch-norm.
pub fn init_params<T: Real>(spec: &ModelSpec, seed: u64) -> Result<ModelParams<T>> {
    let plan = spec.plan()?;
    let mut tensors: Vec<Vec<T>> = plan
        .slots
        .iter()
        .map(|s| vec![T::zero(); s.len()])
        .collect();
    let mut he_uniform = |idx: usize, fan_in: usize| {
        let bound = (6.0 / fan_in as f64).sqrt();
        let mut rng = SplitMix64::derive(seed, idx as u64);
        for v in tensors[idx].iter_mut() {
            *v = T::from_f64(rng.uniform_range(-bound, bound));
        }
    };
    for (i, layer) in spec.layers.iter().enumerate() {
        let idx = &plan.params[i];
        match *layer {
            LayerSpec::Conv { k, .. } => he_uniform(idx[0], plan.channels[i] * k * k),
            LayerSpec::SkipFuse { source, .. } if !idx.is_empty() => {
                he_uniform(idx[0], plan.channels[source])
            }
            _ => {}
        }
    }
    for (i, layer) in spec.layers.iter().enumerate() {
        let idx = &plan.params[i];
        match *layer {
            LayerSpec::TransposedConv { k, out_ch, .. } => {
                let kernel = bilinear_kernel(k);
                let cin = plan.channels[i];
                let w = &mut tensors[idx[0]];
                for c in 0..cin.min(out_ch) {
                    let base = (c * out_ch + c) * k * k;
                    for (dst, &v) in w[base..base + k * k].iter_mut().zip(&kernel) {
                        *dst = T::from_f64(v);
                    }
                }
            }
            LayerSpec::BatchNorm => {
                tensors[idx[0]].fill(T::one());
                tensors[idx[3]].fill(T::one());
            }
            _ => {}
        }
    }
    Ok(ModelParams {
        slots: plan.slots,
        tensors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autonet::spec::Preset;

    #[test]
    fn bilinear_4x4() {
        let k = bilinear_kernel(4);
        assert_eq!(k[1 * 4 + 1], 9.0 / 16.0);
        assert_eq!(k[0], 1.0 / 16.0);
        let line = [0.25, 0.75, 0.75, 0.25];
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(k[i * 4 + j], line[i] * line[j]);
            }
        }
    }

    #[test]
    fn single_channel_transposed_conv_is_bilinear() {
        let spec = ModelSpec {
            name: "t".into(),
            in_channels: 1,
            layers: vec![LayerSpec::TransposedConv { k: 4, out_ch: 1, stride: 2 }],
        };
        let p: ModelParams<f64> = init_params(&spec, 0).unwrap();
        assert_eq!(p.tensors[0], bilinear_kernel(4));
        assert!(p.tensors[1].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn biases_zero_and_he_bounds() {
        let spec = Preset::MiniFcn.build();
        let p: ModelParams<f64> = init_params(&spec, 9).unwrap();
        for (slot, t) in p.slots.iter().zip(&p.tensors) {
            if slot.name.ends_with("bias") || slot.name.ends_with("beta") || slot.name.ends_with("running_mean") {
                assert!(t.iter().all(|&v| v == 0.0), "{}", slot.name);
            }
            if slot.name.ends_with("gamma") || slot.name.ends_with("running_var") {
                assert!(t.iter().all(|&v| v == 1.0), "{}", slot.name);
            }
        }
        // second conv of the first block: 3x3 over 16 channels
        let w = &p.tensors[p.slots.iter().position(|s| s.shape == vec![16, 16, 3, 3]).unwrap()];
        let bound = (6.0f64 / 144.0).sqrt();
        assert!(w.iter().all(|&v| v > -bound && v < bound));
        assert!(w.iter().any(|&v| v.abs() > bound / 2.0));
    }

    #[test]
    fn init_is_seeded() {
        let spec = Preset::MiniResUnet.build();
        let a: ModelParams<f32> = init_params(&spec, 1).unwrap();
        let b: ModelParams<f32> = init_params(&spec, 1).unwrap();
        let c: ModelParams<f32> = init_params(&spec, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
