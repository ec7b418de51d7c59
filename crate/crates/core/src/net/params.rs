use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{NetError, Scalar};
use crate::board::POLICY_SIZE;

/// Architecture of the residual policy-value network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub residual_blocks: usize,
    pub filters: usize,
    /// Width of the hidden layer in the value head.
    pub value_hidden: usize,
    /// L2 coefficient `c` on convolution and dense weights.
    pub l2: f64,
}

impl NetConfig {
    pub const INPUT_PLANES: usize = 2;
    pub const POLICY_FILTERS: usize = 2;
    pub const VALUE_FILTERS: usize = 1;

    /// Desk-scale default: 2 blocks of 32 filters.
    pub fn desk() -> Self {
        NetConfig { residual_blocks: 2, filters: 32, value_hidden: 64, l2: 1e-4 }
    }

    /// Ten residual blocks; width and value head follow the 256-filter tower
    /// this design descends from.
    pub fn paper() -> Self {
        NetConfig { residual_blocks: 10, filters: 256, value_hidden: 256, l2: 1e-4 }
    }

    pub fn policy_size(&self) -> usize {
        POLICY_SIZE
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.residual_blocks == 0 || self.filters == 0 || self.value_hidden == 0 {
            return Err(NetError::InvalidConfig(format!("{self:?}")));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(NetError::InvalidConfig(format!("l2 = {}", self.l2)));
        }
        Ok(())
    }
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig::desk()
    }
}

/// Role of a parameter tensor, which decides whether it is trained and
/// whether it carries the L2 penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    /// Convolution or dense weights: trained, penalised.
    Weight,
    /// Dense bias and batch-norm scale/shift: trained, not penalised.
    Affine,
    /// Batch-norm running mean/variance: updated from batch statistics only.
    RunningStat,
}

impl TensorKind {
    pub fn trainable(self) -> bool {
        self != TensorKind::RunningStat
    }
}

/// Convolution (no bias) followed by batch normalisation.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBn<T> {
    pub in_ch: usize,
    pub out_ch: usize,
    /// 1 or 3.
    pub kernel: usize,
    /// `[out][in][kernel * kernel]`
    pub weight: Vec<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

impl<T: Scalar> ConvBn<T> {
    fn new(in_ch: usize, out_ch: usize, kernel: usize) -> Self {
        ConvBn {
            in_ch,
            out_ch,
            kernel,
            weight: vec![T::zero(); out_ch * in_ch * kernel * kernel],
            gamma: vec![T::one(); out_ch],
            beta: vec![T::zero(); out_ch],
            running_mean: vec![T::zero(); out_ch],
            running_var: vec![T::one(); out_ch],
        }
    }

    fn fan_in(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    fn zeroed(&self) -> Self {
        ConvBn {
            weight: vec![T::zero(); self.weight.len()],
            gamma: vec![T::zero(); self.out_ch],
            beta: vec![T::zero(); self.out_ch],
            running_mean: vec![T::zero(); self.out_ch],
            running_var: vec![T::zero(); self.out_ch],
            ..*self
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    /// `[out][in]`
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    fn new(inputs: usize, outputs: usize) -> Self {
        Dense { inputs, outputs, weight: vec![T::zero(); inputs * outputs], bias: vec![T::zero(); outputs] }
    }

    fn zeroed(&self) -> Self {
        Dense::new(self.inputs, self.outputs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResBlock<T> {
    pub first: ConvBn<T>,
    pub second: ConvBn<T>,
}

/// All weights and batch-norm statistics of the network.
///
/// The same layout doubles as the gradient and momentum buffers, in which
/// case the running-statistic tensors are unused and stay zero.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams<T> {
    pub config: NetConfig,
    pub stem: ConvBn<T>,
    pub tower: Vec<ResBlock<T>>,
    pub policy_conv: ConvBn<T>,
    pub policy_fc: Dense<T>,
    pub value_conv: ConvBn<T>,
    pub value_fc: Dense<T>,
    pub value_out: Dense<T>,
}

/// Borrowed view of one named tensor.
pub struct TensorRef<'a, T> {
    pub name: String,
    pub kind: TensorKind,
    pub shape: Vec<usize>,
    pub data: &'a [T],
}

pub struct TensorMut<'a, T> {
    pub name: String,
    pub kind: TensorKind,
    pub data: &'a mut Vec<T>,
}

macro_rules! conv_tensors {
    ($out:ident, $prefix:expr, $c:expr, $wrap:ident, $($amp:tt)+) => {{
        let c = $c;
        let p = $prefix;
        $out.push($wrap(format!("{p}.weight"), TensorKind::Weight, vec![c.out_ch, c.in_ch, c.kernel, c.kernel], $($amp)+ c.weight));
        $out.push($wrap(format!("{p}.gamma"), TensorKind::Affine, vec![c.out_ch], $($amp)+ c.gamma));
        $out.push($wrap(format!("{p}.beta"), TensorKind::Affine, vec![c.out_ch], $($amp)+ c.beta));
        $out.push($wrap(format!("{p}.running_mean"), TensorKind::RunningStat, vec![c.out_ch], $($amp)+ c.running_mean));
        $out.push($wrap(format!("{p}.running_var"), TensorKind::RunningStat, vec![c.out_ch], $($amp)+ c.running_var));
    }};
}

macro_rules! dense_tensors {
    ($out:ident, $prefix:expr, $d:expr, $wrap:ident, $($amp:tt)+) => {{
        let d = $d;
        let p = $prefix;
        $out.push($wrap(format!("{p}.weight"), TensorKind::Weight, vec![d.outputs, d.inputs], $($amp)+ d.weight));
        $out.push($wrap(format!("{p}.bias"), TensorKind::Affine, vec![d.outputs], $($amp)+ d.bias));
    }};
}

fn make_ref<'a, T>(name: String, kind: TensorKind, shape: Vec<usize>, data: &'a Vec<T>) -> TensorRef<'a, T> {
    TensorRef { name, kind, shape, data }
}

fn make_mut<'a, T>(name: String, kind: TensorKind, _shape: Vec<usize>, data: &'a mut Vec<T>) -> TensorMut<'a, T> {
    TensorMut { name, kind, data }
}

impl<T: Scalar> NetParams<T> {
    /// Allocates every tensor for `config` with weights at zero, batch-norm
    /// scale at one and running variance at one.
    pub fn zeros(config: NetConfig) -> Result<Self, NetError> {
        config.validate()?;
        let f = config.filters;
        Ok(NetParams {
            config,
            stem: ConvBn::new(NetConfig::INPUT_PLANES, f, 3),
            tower: (0..config.residual_blocks)
                .map(|_| ResBlock { first: ConvBn::new(f, f, 3), second: ConvBn::new(f, f, 3) })
                .collect(),
            policy_conv: ConvBn::new(f, NetConfig::POLICY_FILTERS, 1),
            policy_fc: Dense::new(NetConfig::POLICY_FILTERS * 64, POLICY_SIZE),
            value_conv: ConvBn::new(f, NetConfig::VALUE_FILTERS, 1),
            value_fc: Dense::new(NetConfig::VALUE_FILTERS * 64, config.value_hidden),
            value_out: Dense::new(config.value_hidden, 1),
        })
    }

    /// He-normal initialisation from a seed; identical seeds give identical
    /// parameters.
    pub fn init(config: NetConfig, seed: u64) -> Result<Self, NetError> {
        let mut params = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |w: &mut Vec<T>, fan_in: usize| {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            for x in w.iter_mut() {
                *x = T::lit(normal.sample(&mut rng));
            }
        };
        let stem_fan = params.stem.fan_in();
        fill(&mut params.stem.weight, stem_fan);
        for block in params.tower.iter_mut() {
            let fan = block.first.fan_in();
            fill(&mut block.first.weight, fan);
            fill(&mut block.second.weight, fan);
        }
        let fan = params.policy_conv.fan_in();
        fill(&mut params.policy_conv.weight, fan);
        fill(&mut params.value_conv.weight, fan);
        let fan = params.policy_fc.inputs;
        fill(&mut params.policy_fc.weight, fan);
        let fan = params.value_fc.inputs;
        fill(&mut params.value_fc.weight, fan);
        let fan = params.value_out.inputs;
        fill(&mut params.value_out.weight, fan);
        Ok(params)
    }

    /// Random trunk with zeroed output layers: the policy is exactly uniform
    /// over all 65 slots and the value exactly 0 for every input.
    pub fn init_zero_logit(config: NetConfig, seed: u64) -> Result<Self, NetError> {
        let mut params = Self::init(config, seed)?;
        params.policy_fc = params.policy_fc.zeroed();
        params.value_out = params.value_out.zeroed();
        Ok(params)
    }

    /// Same layout with every entry zero (gradient / momentum buffers).
    pub fn zeros_like(&self) -> Self {
        NetParams {
            config: self.config,
            stem: self.stem.zeroed(),
            tower: self
                .tower
                .iter()
                .map(|b| ResBlock { first: b.first.zeroed(), second: b.second.zeroed() })
                .collect(),
            policy_conv: self.policy_conv.zeroed(),
            policy_fc: self.policy_fc.zeroed(),
            value_conv: self.value_conv.zeroed(),
            value_fc: self.value_fc.zeroed(),
            value_out: self.value_out.zeroed(),
        }
    }

    /// Every tensor with its canonical name, in a fixed order.
    pub fn tensors(&self) -> Vec<TensorRef<'_, T>> {
        let mut out = Vec::new();
        conv_tensors!(out, "stem", &self.stem, make_ref, &);
        for (i, b) in self.tower.iter().enumerate() {
            conv_tensors!(out, format!("tower.{i}.first"), &b.first, make_ref, &);
            conv_tensors!(out, format!("tower.{i}.second"), &b.second, make_ref, &);
        }
        conv_tensors!(out, "policy.conv", &self.policy_conv, make_ref, &);
        dense_tensors!(out, "policy.fc", &self.policy_fc, make_ref, &);
        conv_tensors!(out, "value.conv", &self.value_conv, make_ref, &);
        dense_tensors!(out, "value.fc", &self.value_fc, make_ref, &);
        dense_tensors!(out, "value.out", &self.value_out, make_ref, &);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_, T>> {
        let mut out = Vec::new();
        conv_tensors!(out, "stem", &mut self.stem, make_mut, &mut);
        for (i, b) in self.tower.iter_mut().enumerate() {
            conv_tensors!(out, format!("tower.{i}.first"), &mut b.first, make_mut, &mut);
            conv_tensors!(out, format!("tower.{i}.second"), &mut b.second, make_mut, &mut);
        }
        conv_tensors!(out, "policy.conv", &mut self.policy_conv, make_mut, &mut);
        dense_tensors!(out, "policy.fc", &mut self.policy_fc, make_mut, &mut);
        conv_tensors!(out, "value.conv", &mut self.value_conv, make_mut, &mut);
        dense_tensors!(out, "value.fc", &mut self.value_fc, make_mut, &mut);
        dense_tensors!(out, "value.out", &mut self.value_out, make_mut, &mut);
        out
    }

    /// `sum(w^2)` over weight tensors only.
    pub fn l2_norm_sq(&self) -> T {
        self.tensors()
            .iter()
            .filter(|t| t.kind == TensorKind::Weight)
            .flat_map(|t| t.data.iter())
            .map(|&w| w * w)
            .sum()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().filter(|t| t.kind.trainable()).map(|t| t.data.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|x| x.is_finite()))
    }

    /// Element-type conversion, e.g. to `f64` for gradient checking.
    pub fn cast<U: Scalar>(&self) -> NetParams<U> {
        let mut out = NetParams::<U>::zeros(self.config).expect("config already validated");
        for (src, dst) in self.tensors().into_iter().zip(out.tensors_mut()) {
            debug_assert_eq!(src.name, dst.name);
            for (d, s) in dst.data.iter_mut().zip(src.data) {
                *d = U::from_f64(s.to_f64().expect("finite")).expect("representable");
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_params() {
        let a = NetParams::<f32>::init(NetConfig::desk(), 7).unwrap();
        let b = NetParams::<f32>::init(NetConfig::desk(), 7).unwrap();
        let c = NetParams::<f32>::init(NetConfig::desk(), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.all_finite());
    }

    #[test]
    fn tensor_names_are_unique_and_ordered() {
        let p = NetParams::<f32>::zeros(NetConfig { residual_blocks: 1, filters: 4, value_hidden: 8, l2: 0.0 }).unwrap();
        let names: Vec<String> = p.tensors().into_iter().map(|t| t.name).collect();
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
        assert_eq!(names[0], "stem.weight");
        assert_eq!(names.last().unwrap(), "value.out.bias");
        // 5 per conv-bn * (1 stem + 2 tower + 2 heads) + 2 per dense * 3
        assert_eq!(names.len(), 5 * 5 + 2 * 3);
    }

    #[test]
    fn l2_covers_weights_only() {
        let mut p = NetParams::<f64>::zeros(NetConfig { residual_blocks: 1, filters: 2, value_hidden: 3, l2: 0.0 }).unwrap();
        // gamma = 1 everywhere and running_var = 1 must not count
        assert_eq!(p.l2_norm_sq(), 0.0);
        p.value_out.weight[0] = 2.0;
        p.value_out.bias[0] = 5.0;
        p.stem.weight[3] = -1.0;
        assert_eq!(p.l2_norm_sq(), 5.0);
    }

    #[test]
    fn rejects_empty_tower() {
        let cfg = NetConfig { residual_blocks: 0, ..NetConfig::desk() };
        assert!(NetParams::<f32>::zeros(cfg).is_err());
    }
}
