use serde::{Deserialize, Serialize};

use super::{dense_pi, GameRecord};
use crate::board::{encode_planes, Color, Move, Planes, Position, POLICY_SIZE};
use crate::net::{LabelKind, TrainTarget};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntrySource {
    /// Root of a move actually played; labelled with the game result.
    Played,
    /// Tree node harvested from a search; labelled with its search value.
    Harvested,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub planes: Planes,
    pub target: TrainTarget,
    pub generation: u32,
    pub source: EntrySource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub entries: Vec<DatasetEntry>,
    pub z_count: usize,
    pub q_count: usize,
    /// Fewer harvested nodes than played positions were available.
    pub short_supply: bool,
}

/// Checks the invariants of an entry: pi is a distribution supported on legal
/// moves of the stored position and omega fits its label kind.
pub fn validate_entry(entry: &DatasetEntry) -> Result<(), String> {
    let t = &entry.target;
    if t.pi.len() != POLICY_SIZE {
        return Err(format!("pi has {} entries", t.pi.len()));
    }
    let position = Position::from_masks(entry.planes.own, entry.planes.opp, Color::Black)
        .map_err(|e| format!("invalid planes: {e}"))?;
    let legal = position.legal_moves();
    for (i, &x) in t.pi.iter().enumerate() {
        if x < 0.0 || !x.is_finite() {
            return Err(format!("pi[{i}] = {x}"));
        }
        if x > 0.0 && !legal.contains(&Move::from_index(i)) {
            return Err(format!("pi puts mass on illegal move {}", Move::from_index(i)));
        }
    }
    let total: f32 = t.pi.iter().sum();
    if (total - 1.0).abs() > 1e-4 {
        return Err(format!("pi sums to {total}"));
    }
    let ok = match t.label_kind {
        LabelKind::Z => t.omega == 0.0 || t.omega == 1.0 || t.omega == -1.0,
        LabelKind::Q => (-1.0..=1.0).contains(&t.omega),
    };
    if !ok {
        return Err(format!("omega {} invalid for {:?} label", t.omega, t.label_kind));
    }
    Ok(())
}

/// One z-labelled entry per searched position, plus the most visited
/// harvested nodes across all games, q-labelled, up to the same count.
///
/// Harvested candidates are ranked by visit count, then by game and move
/// order, so the cutoff is deterministic.
pub fn build_dataset(records: &[GameRecord]) -> Dataset {
    let mut entries = Vec::new();
    for game in records {
        for m in &game.moves {
            entries.push(DatasetEntry {
                planes: encode_planes(&m.position),
                target: TrainTarget {
                    pi: m.pi.clone(),
                    omega: game.z(m.position.to_move()) as f32,
                    label_kind: LabelKind::Z,
                },
                generation: game.generation,
                source: EntrySource::Played,
            });
        }
    }
    let z_count = entries.len();

    let mut candidates: Vec<(u32, usize, usize, usize)> = Vec::new();
    for (g, game) in records.iter().enumerate() {
        for (mi, m) in game.moves.iter().enumerate() {
            for (k, node) in m.harvested.iter().enumerate() {
                candidates.push((node.n, g, mi, k));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.cmp(&a.0).then((a.1, a.2, a.3).cmp(&(b.1, b.2, b.3))));
    let short_supply = candidates.len() < z_count;
    if short_supply {
        log::warn!("only {} harvested nodes for {} played positions; dataset is smaller than twice", candidates.len(), z_count);
    }
    for &(_, g, mi, k) in candidates.iter().take(z_count) {
        let node = &records[g].moves[mi].harvested[k];
        entries.push(DatasetEntry {
            planes: encode_planes(&node.position),
            target: TrainTarget { pi: dense_pi(&node.pi), omega: node.q.clamp(-1.0, 1.0), label_kind: LabelKind::Q },
            generation: records[g].generation,
            source: EntrySource::Harvested,
        });
    }
    let q_count = entries.len() - z_count;
    for e in &entries {
        if let Err(msg) = validate_entry(e) {
            panic!("self-play produced an invalid training entry: {msg}");
        }
    }
    Dataset { entries, z_count, q_count, short_supply }
}
