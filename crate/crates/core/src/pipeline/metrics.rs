use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::selfplay::GameRecord;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("value trace too short: {0} entries, need 2")]
    TraceTooShort(usize),
    #[error("game has no loser")]
    NoLoser,
    #[error("no game produced a value drop")]
    NoRecords,
    #[error("results graph is disconnected: {0:?}")]
    Disconnected(Vec<Vec<String>>),
    #[error("ratings diverge: {0} won or lost every game against the rest")]
    Unbounded(String),
    #[error("anchor {0} played no game")]
    UnknownAnchor(String),
}

/// Largest one-step decrease of `trace` as `(magnitude, index)`, where `index`
/// is the entry after the drop. Ties go to the earliest step; a trace that
/// never decreases has magnitude 0 at index 1.
pub fn largest_drop(trace: &[f32]) -> Result<(f32, usize), MetricsError> {
    if trace.len() < 2 {
        return Err(MetricsError::TraceTooShort(trace.len()));
    }
    let mut best = (0.0f32, 1usize);
    for i in 1..trace.len() {
        let d = trace[i - 1] - trace[i];
        if d > best.0 {
            best = (d, i);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueDrop {
    pub magnitude: f32,
    /// Index into the loser's value trace.
    pub move_index: usize,
    /// Square of the crucial move, `None` if it was a pass.
    pub square: Option<u8>,
}

/// Largest drop in the loser's value trace. The crucial move is the last
/// move the winner played between the two searches, the one the loser's
/// oracle failed to anticipate; if the winner only passed there, the
/// loser's own move is taken.
pub fn max_value_drop(record: &GameRecord) -> Result<ValueDrop, MetricsError> {
    let loser = record.winner().ok_or(MetricsError::NoLoser)?.opponent();
    let searched: Vec<_> = record.moves.iter().filter(|m| m.position.to_move() == loser).collect();
    let trace: Vec<f32> = searched.iter().map(|m| m.q_root).collect();
    let (magnitude, i) = largest_drop(&trace)?;
    let moves = record.transcript.moves();
    let (from, to) = (searched[i - 1].ply, searched[i].ply);
    let mut crucial = moves.get(from).copied();
    for ply in from + 1..to.min(moves.len()) {
        if !moves[ply].is_pass() {
            crucial = Some(moves[ply]);
        }
    }
    Ok(ValueDrop { magnitude, move_index: i, square: crucial.and_then(|m| m.to_square()) })
}

/// Per-square counts of crucial moves, indexed `[rank][file]` with rank 0 = row 1.
pub fn crucial_move_heatmap(records: &[GameRecord]) -> Result<[[u32; 8]; 8], MetricsError> {
    let mut map = [[0u32; 8]; 8];
    let mut any = false;
    for r in records {
        if let Ok(ValueDrop { square: Some(sq), .. }) = max_value_drop(r) {
            map[sq as usize / 8][sq as usize % 8] += 1;
            any = true;
        }
    }
    if any { Ok(map) } else { Err(MetricsError::NoRecords) }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropStats {
    pub games: usize,
    pub mean: f64,
    pub std: f64,
    pub max: f64,
}

pub fn drop_stats(records: &[GameRecord]) -> Option<DropStats> {
    let drops: Vec<f64> = records.iter().filter_map(|r| max_value_drop(r).ok()).map(|d| d.magnitude as f64).collect();
    if drops.is_empty() {
        return None;
    }
    let n = drops.len() as f64;
    let mean = drops.iter().sum::<f64>() / n;
    let std = (drops.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n).sqrt();
    Some(DropStats { games: drops.len(), mean, std, max: drops.iter().cloned().fold(0.0, f64::max) })
}

/// Head-to-head result: `a` scored `a_points` out of `games`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub a: String,
    pub b: String,
    pub a_points: f64,
    pub games: u32,
}

/// Elo points per natural-log unit of Bradley-Terry strength.
pub const ELO_SCALE: f64 = 400.0 / std::f64::consts::LN_10;

/// Maximum-likelihood Bradley-Terry ratings on the Elo scale, with draws as
/// half wins and `anchor` fixed at 0. Fitted by minorisation-maximisation
/// until no rating moves by more than 1e-6 points.
pub fn elo_estimate(results: &[PairResult], anchor: &str) -> Result<BTreeMap<String, f64>, MetricsError> {
    let mut names: Vec<String> = results.iter().flat_map(|r| [r.a.clone(), r.b.clone()]).collect();
    names.sort();
    names.dedup();
    let idx = |s: &str| names.binary_search_by(|n| n.as_str().cmp(s)).expect("known name");
    let anchor_i = names.binary_search_by(|n| n.as_str().cmp(anchor)).map_err(|_| MetricsError::UnknownAnchor(anchor.into()))?;
    let k = names.len();
    let mut games = vec![vec![0.0f64; k]; k];
    let mut score = vec![vec![0.0f64; k]; k];
    for r in results {
        let (a, b) = (idx(&r.a), idx(&r.b));
        if a == b || r.games == 0 {
            continue;
        }
        games[a][b] += r.games as f64;
        games[b][a] += r.games as f64;
        score[a][b] += r.a_points;
        score[b][a] += r.games as f64 - r.a_points;
    }

    let components = components(k, |i, j| games[i][j] > 0.0);
    if components.len() > 1 {
        let named = components.iter().map(|c| c.iter().map(|&i| names[i].clone()).collect()).collect();
        return Err(MetricsError::Disconnected(named));
    }
    // a finite maximum exists only if every player scored against someone
    // in every split of the field: strong connectivity of "scored against"
    let forward = components_directed(k, |i, j| score[i][j] > 0.0);
    if forward > 1 {
        let lone = (0..k)
            .find(|&i| (0..k).all(|j| games[i][j] == 0.0 || score[i][j] == 0.0) || (0..k).all(|j| games[i][j] == 0.0 || score[j][i] == 0.0))
            .unwrap_or(0);
        return Err(MetricsError::Unbounded(names[lone].clone()));
    }

    let wins: Vec<f64> = (0..k).map(|i| score[i].iter().sum()).collect();
    let mut gamma = vec![1.0f64; k];
    for _ in 0..1_000_000 {
        let mut next = gamma.clone();
        for i in 0..k {
            let denom: f64 = (0..k).filter(|&j| games[i][j] > 0.0).map(|j| games[i][j] / (gamma[i] + gamma[j])).sum();
            next[i] = wins[i] / denom;
        }
        let a = next[anchor_i];
        for g in next.iter_mut() {
            *g /= a;
        }
        let delta = (0..k).map(|i| (next[i].ln() - gamma[i].ln()).abs()).fold(0.0, f64::max) * ELO_SCALE;
        gamma = next;
        if delta < 1e-6 {
            break;
        }
    }
    Ok(names.into_iter().zip(gamma).map(|(n, g)| (n, ELO_SCALE * g.ln())).collect())
}

/// [`elo_estimate`] with `draws` virtual drawn games added to every pair that
/// met, which keeps ratings finite after a clean sweep.
pub fn elo_with_prior(results: &[PairResult], anchor: &str, draws: u32) -> Result<BTreeMap<String, f64>, MetricsError> {
    let mut pairs: Vec<(String, String)> = results.iter().map(|r| (r.a.clone(), r.b.clone())).collect();
    pairs.sort();
    pairs.dedup();
    let mut all = results.to_vec();
    all.extend(pairs.into_iter().map(|(a, b)| PairResult { a, b, a_points: 0.5 * draws as f64, games: draws }));
    elo_estimate(&all, anchor)
}

fn components(k: usize, edge: impl Fn(usize, usize) -> bool) -> Vec<Vec<usize>> {
    let mut seen = vec![false; k];
    let mut out = Vec::new();
    for s in 0..k {
        if seen[s] {
            continue;
        }
        let mut comp = vec![s];
        seen[s] = true;
        let mut i = 0;
        while i < comp.len() {
            let u = comp[i];
            for v in 0..k {
                if !seen[v] && edge(u, v) {
                    seen[v] = true;
                    comp.push(v);
                }
            }
            i += 1;
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Number of strongly connected components of the directed graph.
fn components_directed(k: usize, edge: impl Fn(usize, usize) -> bool) -> usize {
    let reach = |from: usize, fwd: bool| {
        let mut seen = vec![false; k];
        let mut stack = vec![from];
        seen[from] = true;
        while let Some(u) = stack.pop() {
            for v in 0..k {
                let e = if fwd { edge(u, v) } else { edge(v, u) };
                if e && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen
    };
    let mut assigned = vec![false; k];
    let mut count = 0;
    for s in 0..k {
        if assigned[s] {
            continue;
        }
        let (f, b) = (reach(s, true), reach(s, false));
        for v in 0..k {
            if f[v] && b[v] {
                assigned[v] = true;
            }
        }
        count += 1;
    }
    count
}
