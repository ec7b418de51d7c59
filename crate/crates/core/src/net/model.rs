use serde::{Deserialize, Serialize};

use super::layers::{
    conv_bn_backward, conv_bn_infer, conv_bn_train, dense_backward, dense_forward, relu_backward, relu_inplace,
    to_channel_major, to_sample_major, update_running, ConvBnCache,
};
use super::params::{NetConfig, NetParams, TensorKind};
use super::{NetError, Scalar};
use crate::board::{Planes, PLANE_LEN, POLICY_SIZE};

/// Floor applied to policy probabilities inside the logarithm of the loss.
pub const LOG_FLOOR: f64 = 1e-12;

/// Network output for one position.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T = f32> {
    /// Move probabilities, indexed like [`crate::board::Move::index`].
    pub p: Vec<T>,
    /// Expected outcome for the side to move, in `[-1, 1]`.
    pub v: T,
}

/// Where the value label of a training position comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    /// Final game result.
    Z,
    /// Search estimate at the position.
    Q,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTarget {
    pub pi: Vec<f32>,
    pub omega: f32,
    pub label_kind: LabelKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSample {
    pub planes: Planes,
    pub target: TrainTarget,
}

/// Builds the dense input tensor for a batch of packed positions.
pub fn dense_batch<T: Scalar>(planes: &[Planes]) -> Vec<T> {
    let mut out = vec![T::zero(); planes.len() * PLANE_LEN];
    for (chunk, p) in out.chunks_exact_mut(PLANE_LEN).zip(planes) {
        p.write_dense(chunk);
    }
    out
}

fn batch_size(input: &[impl Sized]) -> Result<usize, NetError> {
    if input.is_empty() || input.len() % PLANE_LEN != 0 {
        return Err(NetError::Shape { expected: PLANE_LEN, found: input.len() });
    }
    Ok(input.len() / PLANE_LEN)
}

fn softmax_rows<T: Scalar>(logits: &[T], samples: usize) -> Vec<Vec<T>> {
    logits
        .chunks_exact(POLICY_SIZE)
        .take(samples)
        .map(|row| {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let exps: Vec<T> = row.iter().map(|&x| (x - max).exp()).collect();
            let total: T = exps.iter().copied().sum();
            exps.into_iter().map(|e| e / total).collect()
        })
        .collect()
}

/// Inference-mode forward pass over `input.len() / 128` positions, each two
/// 8x8 planes (side to move first). Batch norm uses running statistics, so
/// every row depends only on its own input.
pub fn forward<T: Scalar>(params: &NetParams<T>, input: &[T]) -> Result<Vec<Prediction<T>>, NetError> {
    let n = batch_size(input)?;
    let cols = n * 64;
    let x = to_channel_major(input, NetConfig::INPUT_PLANES, n);
    let mut h = conv_bn_infer(&params.stem, &x, cols);
    relu_inplace(&mut h);
    for block in &params.tower {
        let mut a = conv_bn_infer(&block.first, &h, cols);
        relu_inplace(&mut a);
        let mut b = conv_bn_infer(&block.second, &a, cols);
        for (o, &s) in b.iter_mut().zip(&h) {
            *o = *o + s;
        }
        relu_inplace(&mut b);
        h = b;
    }
    let mut pc = conv_bn_infer(&params.policy_conv, &h, cols);
    relu_inplace(&mut pc);
    let logits = dense_forward(&params.policy_fc, &to_sample_major(&pc, NetConfig::POLICY_FILTERS, n), n);
    let mut vc = conv_bn_infer(&params.value_conv, &h, cols);
    relu_inplace(&mut vc);
    let mut hid = dense_forward(&params.value_fc, &to_sample_major(&vc, NetConfig::VALUE_FILTERS, n), n);
    relu_inplace(&mut hid);
    let out = dense_forward(&params.value_out, &hid, n);
    Ok(softmax_rows(&logits, n).into_iter().zip(out).map(|(p, o)| Prediction { p, v: o.tanh() }).collect())
}

/// Convenience wrapper over [`forward`] for packed positions.
pub fn forward_planes<T: Scalar>(params: &NetParams<T>, planes: &[Planes]) -> Vec<Prediction<T>> {
    if planes.is_empty() {
        return Vec::new();
    }
    forward(params, &dense_batch(planes)).expect("packed planes have the right shape")
}

struct BlockTrace<T> {
    first: ConvBnCache<T>,
    a: Vec<T>,
    second: ConvBnCache<T>,
    out: Vec<T>,
}

/// Activations and caches of a training-mode forward pass.
pub struct Trace<T> {
    samples: usize,
    stem: ConvBnCache<T>,
    stem_out: Vec<T>,
    blocks: Vec<BlockTrace<T>>,
    policy: ConvBnCache<T>,
    pc: Vec<T>,
    pf: Vec<T>,
    value: ConvBnCache<T>,
    vc: Vec<T>,
    hid: Vec<T>,
    pub predictions: Vec<Prediction<T>>,
}

/// Training-mode forward pass: batch norm normalises with the statistics of
/// this batch. Parameters, including running averages, are left untouched.
pub fn forward_train<T: Scalar>(params: &NetParams<T>, input: &[T]) -> Result<Trace<T>, NetError> {
    let n = batch_size(input)?;
    let cols = n * 64;
    let x = to_channel_major(input, NetConfig::INPUT_PLANES, n);
    let (mut h, stem) = conv_bn_train(&params.stem, &x, cols);
    relu_inplace(&mut h);
    let stem_out = h.clone();
    let mut blocks = Vec::with_capacity(params.tower.len());
    for block in &params.tower {
        let (mut a, first) = conv_bn_train(&block.first, &h, cols);
        relu_inplace(&mut a);
        let (mut b, second) = conv_bn_train(&block.second, &a, cols);
        for (o, &s) in b.iter_mut().zip(&h) {
            *o = *o + s;
        }
        relu_inplace(&mut b);
        h = b.clone();
        blocks.push(BlockTrace { first, a, second, out: b });
    }
    let (mut pc, policy) = conv_bn_train(&params.policy_conv, &h, cols);
    relu_inplace(&mut pc);
    let pf = to_sample_major(&pc, NetConfig::POLICY_FILTERS, n);
    let logits = dense_forward(&params.policy_fc, &pf, n);
    let (mut vc, value) = conv_bn_train(&params.value_conv, &h, cols);
    relu_inplace(&mut vc);
    let mut hid = dense_forward(&params.value_fc, &to_sample_major(&vc, NetConfig::VALUE_FILTERS, n), n);
    relu_inplace(&mut hid);
    let out = dense_forward(&params.value_out, &hid, n);
    let predictions = softmax_rows(&logits, n).into_iter().zip(out).map(|(p, o)| Prediction { p, v: o.tanh() }).collect();
    Ok(Trace { samples: n, stem, stem_out, blocks, policy, pc, pf, value, vc, hid, predictions })
}

/// `(omega - v)^2 - pi . log p` for one sample.
pub fn sample_loss<T: Scalar>(target: &TrainTarget, pred: &Prediction<T>) -> T {
    let floor = T::lit(LOG_FLOOR);
    let omega = T::lit(target.omega as f64);
    let ce = target
        .pi
        .iter()
        .zip(&pred.p)
        .filter(|(&pi, _)| pi != 0.0)
        .map(|(&pi, &p)| T::lit(pi as f64) * p.max(floor).ln())
        .sum::<T>();
    (omega - pred.v) * (omega - pred.v) - ce
}

/// Per-sample loss plus the weight penalty `c * ||theta||^2`.
pub fn loss<T: Scalar>(target: &TrainTarget, pred: &Prediction<T>, params: &NetParams<T>, c: f64) -> T {
    sample_loss(target, pred) + T::lit(c) * params.l2_norm_sq()
}

/// Mean sample loss over the batch plus one weight penalty, with batch norm in
/// training mode. Uses the coefficient stored in the params' config.
pub fn batch_loss<T: Scalar>(params: &NetParams<T>, input: &[T], targets: &[TrainTarget]) -> Result<T, NetError> {
    let trace = forward_train(params, input)?;
    check_targets(trace.samples, targets)?;
    Ok(mean_loss(&trace.predictions, targets) + T::lit(params.config.l2) * params.l2_norm_sq())
}

fn mean_loss<T: Scalar>(preds: &[Prediction<T>], targets: &[TrainTarget]) -> T {
    let total: T = preds.iter().zip(targets).map(|(p, t)| sample_loss(t, p)).sum();
    total / T::from_usize(preds.len()).expect("count")
}

fn check_targets(samples: usize, targets: &[TrainTarget]) -> Result<(), NetError> {
    if targets.len() != samples {
        return Err(NetError::Shape { expected: samples, found: targets.len() });
    }
    if let Some(t) = targets.iter().find(|t| t.pi.len() != POLICY_SIZE) {
        return Err(NetError::Shape { expected: POLICY_SIZE, found: t.pi.len() });
    }
    Ok(())
}

/// Batch mean and variance observed by every batch-norm layer, in tensor
/// order, for updating the running averages after a step.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    layers: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Scalar> BatchStats<T> {
    pub fn apply(&self, params: &mut NetParams<T>) {
        let mut it = self.layers.iter();
        let mut next = |layer: &mut super::ConvBn<T>| {
            let (m, v) = it.next().expect("one entry per batch-norm layer");
            update_running(layer, m, v);
        };
        next(&mut params.stem);
        for block in params.tower.iter_mut() {
            next(&mut block.first);
            next(&mut block.second);
        }
        next(&mut params.policy_conv);
        next(&mut params.value_conv);
    }
}

pub struct Gradients<T> {
    pub grads: NetParams<T>,
    /// Batch loss including the weight penalty.
    pub loss: T,
    pub stats: BatchStats<T>,
}

/// Gradient of [`batch_loss`] with respect to every trainable tensor.
pub fn backward<T: Scalar>(params: &NetParams<T>, input: &[T], targets: &[TrainTarget]) -> Result<Gradients<T>, NetError> {
    let trace = forward_train(params, input)?;
    let n = trace.samples;
    check_targets(n, targets)?;
    let cols = n * 64;
    let inv_n = T::one() / T::from_usize(n).expect("count");
    let c = T::lit(params.config.l2);
    let mut g = params.zeros_like();

    let mut dlogits = vec![T::zero(); n * POLICY_SIZE];
    let mut dout = vec![T::zero(); n];
    for (i, (pred, t)) in trace.predictions.iter().zip(targets).enumerate() {
        let pi: Vec<T> = t.pi.iter().map(|&x| T::lit(x as f64)).collect();
        let mass: T = pi.iter().copied().sum();
        for k in 0..POLICY_SIZE {
            dlogits[i * POLICY_SIZE + k] = (pred.p[k] * mass - pi[k]) * inv_n;
        }
        let omega = T::lit(t.omega as f64);
        let dv = T::lit(-2.0) * (omega - pred.v) * inv_n;
        dout[i] = dv * (T::one() - pred.v * pred.v);
    }

    // value head
    let mut dhid = dense_backward(&params.value_out, &trace.hid, &dout, n, &mut g.value_out);
    relu_backward(&trace.hid, &mut dhid);
    let vf = to_sample_major(&trace.vc, NetConfig::VALUE_FILTERS, n);
    let dvf = dense_backward(&params.value_fc, &vf, &dhid, n, &mut g.value_fc);
    let mut dvc = to_channel_major(&dvf, NetConfig::VALUE_FILTERS, n);
    relu_backward(&trace.vc, &mut dvc);
    let mut dh = conv_bn_backward(&params.value_conv, &trace.value, &dvc, cols, &mut g.value_conv);

    // policy head
    let dpf = dense_backward(&params.policy_fc, &trace.pf, &dlogits, n, &mut g.policy_fc);
    let mut dpc = to_channel_major(&dpf, NetConfig::POLICY_FILTERS, n);
    relu_backward(&trace.pc, &mut dpc);
    let dh_policy = conv_bn_backward(&params.policy_conv, &trace.policy, &dpc, cols, &mut g.policy_conv);
    for (a, b) in dh.iter_mut().zip(dh_policy) {
        *a = *a + b;
    }

    // residual tower
    for ((block, bt), gb) in params.tower.iter().zip(&trace.blocks).zip(g.tower.iter_mut()).rev() {
        relu_backward(&bt.out, &mut dh);
        let mut da = conv_bn_backward(&block.second, &bt.second, &dh, cols, &mut gb.second);
        relu_backward(&bt.a, &mut da);
        let dx = conv_bn_backward(&block.first, &bt.first, &da, cols, &mut gb.first);
        for (a, b) in dh.iter_mut().zip(dx) {
            *a = *a + b;
        }
    }

    relu_backward(&trace.stem_out, &mut dh);
    conv_bn_backward(&params.stem, &trace.stem, &dh, cols, &mut g.stem);

    if c != T::zero() {
        let two_c = c + c;
        for (gt, pt) in g.tensors_mut().into_iter().zip(params.tensors()) {
            if gt.kind == TensorKind::Weight {
                for (d, &w) in gt.data.iter_mut().zip(pt.data) {
                    *d = *d + two_c * w;
                }
            }
        }
    }

    let loss = mean_loss(&trace.predictions, targets) + c * params.l2_norm_sq();
    let mut layers = vec![(trace.stem.batch_mean, trace.stem.batch_var)];
    for bt in trace.blocks {
        layers.push((bt.first.batch_mean, bt.first.batch_var));
        layers.push((bt.second.batch_mean, bt.second.batch_var));
    }
    layers.push((trace.policy.batch_mean, trace.policy.batch_var));
    layers.push((trace.value.batch_mean, trace.value.batch_var));
    Ok(Gradients { grads: g, loss, stats: BatchStats { layers } })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::board::{encode_planes, Position};

    fn tiny() -> NetConfig {
        NetConfig { residual_blocks: 1, filters: 4, value_hidden: 8, l2: 0.0 }
    }

    fn one_hot(k: usize) -> Vec<f32> {
        let mut v = vec![0.0; POLICY_SIZE];
        v[k] = 1.0;
        v
    }

    #[test]
    fn zero_logit_is_uniform() {
        let params = NetParams::<f32>::init_zero_logit(NetConfig::desk(), 3).unwrap();
        let planes = [encode_planes(&Position::initial()), Planes { own: u64::MAX, opp: 0 }];
        for pred in forward_planes(&params, &planes) {
            assert_eq!(pred.v, 0.0);
            for &p in &pred.p {
                assert!((p - 1.0 / 65.0).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn loss_anchor() {
        let params = NetParams::<f64>::init_zero_logit(tiny(), 1).unwrap();
        let pred = &forward_planes(&params, &[encode_planes(&Position::initial())])[0];
        let t = TrainTarget { pi: one_hot(19), omega: 1.0, label_kind: LabelKind::Z };
        let l = loss(&t, pred, &params, 0.0);
        assert!((l - (1.0 + 65f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn matched_target_gives_entropy() {
        let pred = Prediction { p: vec![0.25f64, 0.75], v: 0.5 };
        let mut pi = vec![0.0; POLICY_SIZE];
        pi[0] = 0.25;
        pi[1] = 0.75;
        let mut p = vec![0.0; POLICY_SIZE];
        p[..2].copy_from_slice(&pred.p);
        let pred = Prediction { p, v: 0.5 };
        let t = TrainTarget { pi, omega: 0.5, label_kind: LabelKind::Q };
        let entropy = -(0.25f64 * 0.25f64.ln() + 0.75 * 0.75f64.ln());
        assert!((sample_loss(&t, &pred) - entropy).abs() < 1e-7);
    }

    #[test]
    fn shape_errors() {
        let params = NetParams::<f32>::init(tiny(), 0).unwrap();
        assert!(matches!(forward(&params, &[0.0; 100]), Err(NetError::Shape { .. })));
        assert!(matches!(forward(&params, &[]), Err(NetError::Shape { .. })));
    }

    #[test]
    fn running_stats_move_toward_batch() {
        let mut params = NetParams::<f64>::init(tiny(), 2).unwrap();
        let input = dense_batch::<f64>(&[encode_planes(&Position::initial())]);
        let t = TrainTarget { pi: one_hot(19), omega: 1.0, label_kind: LabelKind::Z };
        let before = params.stem.running_mean.clone();
        let g = backward(&params, &input, &[t]).unwrap();
        g.stats.apply(&mut params);
        assert_ne!(params.stem.running_mean, before);
    }
}
