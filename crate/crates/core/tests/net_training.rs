use othello_zero::board::{encode_planes, Planes, Position, POLICY_SIZE};
use othello_zero::net::{
    backward, batch_loss, dense_batch, forward, forward_planes, LabelKind, NetConfig, NetParams, Sgd, TensorKind,
    TrainTarget, DEFAULT_MOMENTUM,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny(l2: f64) -> NetConfig {
    NetConfig { residual_blocks: 1, filters: 4, value_hidden: 8, l2 }
}

/// Positions from random play with random legal-move targets.
fn random_batch(seed: u64, n: usize) -> (Vec<Planes>, Vec<TrainTarget>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut planes = Vec::new();
    let mut targets = Vec::new();
    while planes.len() < n {
        let mut p = Position::initial();
        let plies = rng.random_range(0..50);
        for _ in 0..plies {
            let moves = p.legal_moves();
            if moves.is_empty() {
                break;
            }
            p = p.apply_move(moves[rng.random_range(0..moves.len())]).unwrap();
        }
        let moves = p.legal_moves();
        if moves.is_empty() {
            continue;
        }
        let mut pi = vec![0.0f32; POLICY_SIZE];
        let weights: Vec<f32> = moves.iter().map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f32 = weights.iter().sum();
        for (m, w) in moves.iter().zip(&weights) {
            pi[m.index()] = w / total;
        }
        planes.push(encode_planes(&p));
        targets.push(TrainTarget { pi, omega: rng.random_range(-1.0..1.0), label_kind: LabelKind::Z });
    }
    (planes, targets)
}

/// Reads or writes the `idx`-th scalar over all trainable tensors.
fn coordinate(params: &mut NetParams<f64>, idx: usize, set: Option<f64>) -> (String, f64) {
    let mut k = idx;
    for t in params.tensors_mut() {
        if !t.kind.trainable() {
            continue;
        }
        if k < t.data.len() {
            let old = t.data[k];
            if let Some(v) = set {
                t.data[k] = v;
            }
            return (format!("{}[{k}]", t.name), old);
        }
        k -= t.data.len();
    }
    unreachable!("coordinate out of range")
}

fn flat_gradient(grads: &NetParams<f64>) -> Vec<f64> {
    grads.tensors().into_iter().filter(|t| t.kind.trainable()).flat_map(|t| t.data.to_vec()).collect()
}

#[test]
fn analytic_gradient_matches_central_differences() {
    const STEP: f64 = 1e-5;
    const COORDS: usize = 50;
    const TOL: f64 = 1e-4;
    let mut params = NetParams::<f64>::init(tiny(1e-4), 5).unwrap();
    let (planes, targets) = random_batch(9, 6);
    let input = dense_batch::<f64>(&planes);
    let analytic = flat_gradient(&backward(&params, &input, &targets).unwrap().grads);
    assert_eq!(analytic.len(), params.parameter_count());

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    for _ in 0..COORDS {
        let idx = rng.random_range(0..analytic.len());
        let (name, x) = coordinate(&mut params, idx, None);
        coordinate(&mut params, idx, Some(x + STEP));
        let up = batch_loss(&params, &input, &targets).unwrap();
        coordinate(&mut params, idx, Some(x - STEP));
        let down = batch_loss(&params, &input, &targets).unwrap();
        coordinate(&mut params, idx, Some(x));
        let numeric = (up - down) / (2.0 * STEP);
        let a = analytic[idx];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        assert!(rel < TOL, "{name}: analytic {a:e} numeric {numeric:e} rel {rel:e}");
        worst = worst.max(rel);
    }
    println!("max relative error {worst:e}");
}

#[test]
fn stationary_point_has_zero_head_gradient() {
    // zero-logit net: p is uniform and v = 0 for every input, so matching
    // targets are exact up to f32 rounding
    let params = NetParams::<f64>::init_zero_logit(tiny(0.0), 3).unwrap();
    let (planes, _) = random_batch(4, 5);
    let input = dense_batch::<f64>(&planes);
    let targets: Vec<TrainTarget> = (0..planes.len())
        .map(|_| TrainTarget { pi: vec![1.0 / 65.0; POLICY_SIZE], omega: 0.0, label_kind: LabelKind::Q })
        .collect();
    let g = backward(&params, &input, &targets).unwrap().grads;
    let head: f64 = g
        .tensors()
        .iter()
        .filter(|t| t.name.starts_with("policy.") || t.name.starts_with("value."))
        .flat_map(|t| t.data.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    assert!(head < 1e-8, "head gradient norm {head:e}");
}

#[test]
fn duplicated_batch_has_same_mean_gradient() {
    let params = NetParams::<f64>::init(tiny(1e-4), 8).unwrap();
    let (planes, targets) = random_batch(12, 4);
    let g1 = flat_gradient(&backward(&params, &dense_batch(&planes), &targets).unwrap().grads);
    let planes2: Vec<Planes> = planes.iter().chain(&planes).copied().collect();
    let targets2: Vec<TrainTarget> = targets.iter().chain(&targets).cloned().collect();
    let g2 = flat_gradient(&backward(&params, &dense_batch(&planes2), &targets2).unwrap().grads);
    for (a, b) in g1.iter().zip(&g2) {
        assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn l2_gradient_is_two_c_theta() {
    let c = 0.5;
    let a = NetParams::<f64>::init(tiny(0.0), 1).unwrap();
    let mut b = a.clone();
    b.config.l2 = c;
    let (planes, targets) = random_batch(2, 3);
    let input = dense_batch::<f64>(&planes);
    let ga = backward(&a, &input, &targets).unwrap();
    let gb = backward(&b, &input, &targets).unwrap();
    assert!((gb.loss - ga.loss - c * a.l2_norm_sq()).abs() < 1e-9);
    for ((ta, tb), tp) in ga.grads.tensors().iter().zip(gb.grads.tensors()).zip(a.tensors()) {
        let penalised = tp.kind == TensorKind::Weight;
        for ((x, y), w) in ta.data.iter().zip(tb.data).zip(tp.data) {
            let extra = if penalised { 2.0 * c * w } else { 0.0 };
            assert!((y - x - extra).abs() < 1e-9, "{}", tp.name);
        }
    }
}

#[test]
fn training_on_fixed_batch_halves_loss() {
    let mut params = NetParams::<f32>::init(NetConfig::desk(), 21).unwrap();
    let (planes, targets) = random_batch(33, 64);
    let input = dense_batch::<f32>(&planes);
    let mut opt = Sgd::new(&params, DEFAULT_MOMENTUM);
    let first = batch_loss(&params, &input, &targets).unwrap();
    let mut last = first;
    for _ in 0..200 {
        let g = backward(&params, &input, &targets).unwrap();
        opt.step(&mut params, &g.grads, 0.01);
        g.stats.apply(&mut params);
        last = g.loss;
    }
    let end = batch_loss(&params, &input, &targets).unwrap();
    assert!(params.all_finite());
    assert!(end <= 0.5 * first, "loss {first} -> {end} (last step {last})");
}

#[test]
fn inference_rows_are_independent() {
    let params = NetParams::<f32>::init(NetConfig::desk(), 4).unwrap();
    let (planes, _) = random_batch(6, 3);
    let batch = vec![planes[0], planes[1], planes[0], planes[2]];
    let preds = forward_planes(&params, &batch);
    assert_eq!(preds.len(), 4);
    assert_eq!(preds[0], preds[2]);
    let single = forward_planes(&params, &planes[1..2]);
    for (a, b) in single[0].p.iter().zip(&preds[1].p) {
        assert!((a - b).abs() < 1e-6);
    }
    for pred in &preds {
        let total: f32 = pred.p.iter().sum();
        assert!((total - 1.0).abs() < 1e-6);
        assert!(pred.p.iter().all(|&x| x >= 0.0));
        assert!(pred.v.abs() <= 1.0);
    }
    assert!(forward(&params, &[0.0f32; 127]).is_err());
}
