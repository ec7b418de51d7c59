use std::sync::Arc;

use crate::board::{encode_planes, Planes, Position, POLICY_SIZE};
use crate::net::{forward_planes, NetParams, Prediction};

/// Position evaluator `f(s) = (p, v)` consulted by the search.
///
/// Implementations must be safe to call from several threads at once; the
/// search may hand over any number of positions in one call.
pub trait Oracle: Sync {
    fn evaluate(&self, positions: &[Position]) -> Vec<Prediction>;
}

impl<O: Oracle + Send + ?Sized> Oracle for Arc<O> {
    fn evaluate(&self, positions: &[Position]) -> Vec<Prediction> {
        (**self).evaluate(positions)
    }
}

impl<O: Oracle + ?Sized> Oracle for &O {
    fn evaluate(&self, positions: &[Position]) -> Vec<Prediction> {
        (**self).evaluate(positions)
    }
}

impl Oracle for NetParams<f32> {
    fn evaluate(&self, positions: &[Position]) -> Vec<Prediction> {
        let planes: Vec<Planes> = positions.iter().map(encode_planes).collect();
        forward_planes(self, &planes)
    }
}

/// Uniform priors over all 65 slots and value 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformOracle;

impl Oracle for UniformOracle {
    fn evaluate(&self, positions: &[Position]) -> Vec<Prediction> {
        positions.iter().map(|_| Prediction { p: vec![1.0 / POLICY_SIZE as f32; POLICY_SIZE], v: 0.0 }).collect()
    }
}

/// Adapter for closures, mostly for tests and scripted evaluators.
pub struct FnOracle<F>(pub F);

impl<F: Fn(&Position) -> Prediction + Sync> Oracle for FnOracle<F> {
    fn evaluate(&self, positions: &[Position]) -> Vec<Prediction> {
        positions.iter().map(&self.0).collect()
    }
}

/// Prior over the legal moves of `pos` taken from `p`, renormalised to sum to
/// one; uniform when the oracle puts no mass on any legal move.
pub fn legal_priors(pos: &Position, p: &[f32]) -> Vec<(crate::board::Move, f32)> {
    let moves = pos.legal_moves();
    let mass: f32 = moves.iter().map(|m| p[m.index()].max(0.0)).sum();
    moves
        .iter()
        .map(|&m| {
            let prior = if mass > 0.0 && mass.is_finite() {
                p[m.index()].max(0.0) / mass
            } else {
                1.0 / moves.len() as f32
            };
            (m, prior)
        })
        .collect()
}
