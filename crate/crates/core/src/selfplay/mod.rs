//! Self-play game generation, resignation and training-data construction.

mod archive;
mod dataset;

pub use archive::{
    ARCHIVE_MAGIC,
    archive_path, list_generations, read_archive, sample_training_window, window_generations, ArchiveError,
    ArchiveWriter, Minibatches, WindowRule, ARCHIVE_VERSION,
};
pub use dataset::{build_dataset, validate_entry, Dataset, DatasetEntry, EntrySource};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::board::{Color, Move, Outcome, Position, Transcript, POLICY_SIZE};
use crate::search::{harvest_visited, select_move, Oracle, SearchConfig, Searcher};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResignConfig {
    /// A player resigns when its root value drops below this; -1 disables.
    pub v_resign: f32,
    /// Share of games that ignore resignation and are played to the end.
    pub playout_fraction: f64,
}

impl Default for ResignConfig {
    fn default() -> Self {
        ResignConfig { v_resign: -1.0, playout_fraction: 0.1 }
    }
}

impl ResignConfig {
    /// Draws the always-playout flag for one game.
    pub fn draw_playout<R: Rng + ?Sized>(&self, rng: &mut R) -> bool {
        rng.random_bool(self.playout_fraction.clamp(0.0, 1.0))
    }
}

/// Playout share for `generation` (1-based) of `total`, rising linearly from
/// 0.1 at the first generation to 1.0 at the last.
pub fn playout_fraction(generation: u32, total: u32) -> f64 {
    if total <= 1 {
        return 1.0;
    }
    let t = (generation.clamp(1, total) - 1) as f64 / (total - 1) as f64;
    0.1 + 0.9 * t
}

/// One harvested search-tree node, reduced to what training needs.
#[derive(Debug, Clone, PartialEq)]
pub struct HarvestedNode {
    pub position: Position,
    /// Nonzero entries of the node's visit distribution.
    pub pi: Vec<(Move, f32)>,
    pub q: f32,
    pub n: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MoveRecord {
    /// Index in the transcript of the move played from `position`.
    pub ply: usize,
    pub position: Position,
    pub pi: Vec<f32>,
    /// Root value for the mover, the entry of the value trace.
    pub q_root: f32,
    /// `None` when the mover resigned here.
    pub played: Option<Move>,
    pub harvested: Vec<HarvestedNode>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameRecord {
    pub transcript: Transcript,
    /// Searched moves in order; forced passes and opening moves are not searched.
    pub moves: Vec<MoveRecord>,
    pub resigned: Option<Color>,
    /// Board result when the game was played to the end.
    pub outcome: Option<Outcome>,
    pub playout: bool,
    pub generation: u32,
}

impl GameRecord {
    pub fn winner(&self) -> Option<Color> {
        match (self.resigned, self.outcome) {
            (Some(loser), _) => Some(loser.opponent()),
            (None, Some(o)) => o.winner(),
            (None, None) => None,
        }
    }

    /// Game result from `color`'s point of view: +1, 0 or -1.
    pub fn z(&self, color: Color) -> i8 {
        match self.winner() {
            Some(w) if w == color => 1,
            Some(_) => -1,
            None => 0,
        }
    }

    /// Root values of the moves `color` searched, in order.
    pub fn value_trace(&self, color: Color) -> Vec<f32> {
        self.moves.iter().filter(|m| m.position.to_move() == color).map(|m| m.q_root).collect()
    }
}

#[derive(Debug, Clone)]
pub struct GameOptions {
    pub generation: u32,
    /// Ignore resignation for this game.
    pub playout: bool,
    /// Moves played before the search takes over.
    pub opening: Option<Transcript>,
    /// Harvested nodes kept per move, most visited first.
    pub harvest_keep: usize,
    /// Root Dirichlet noise.
    pub noise: bool,
}

impl Default for GameOptions {
    fn default() -> Self {
        GameOptions { generation: 0, playout: false, opening: None, harvest_keep: 16, noise: true }
    }
}

/// Plays one self-play game with the same agent on both sides.
pub fn play_game<O: Oracle + ?Sized, R: Rng + ?Sized>(
    oracle: &O,
    search_cfg: &SearchConfig,
    resign: &ResignConfig,
    opts: &GameOptions,
    rng: &mut R,
) -> GameRecord {
    let mut position = Position::initial();
    let mut transcript = Transcript::new();
    if let Some(opening) = &opts.opening {
        for &m in opening.moves() {
            position = position.apply_move(m).expect("opening must be legal");
            transcript.push(m);
        }
    }
    let mut searcher = Searcher::new(search_cfg.clone());
    let mut moves = Vec::new();
    let mut resigned = None;
    let mut move_number = transcript.len() as u32;
    let mut raw_harvest = Vec::new();
    while !position.is_terminal() {
        move_number += 1;
        let legal = position.legal_moves();
        if legal.len() == 1 && legal[0].is_pass() {
            searcher.advance(Move::PASS);
            position = position.play_unchecked(Move::PASS);
            transcript.push(Move::PASS);
            continue;
        }
        let result = searcher.search(&position, oracle, opts.noise, rng).expect("non-terminal root");
        if !opts.playout && result.q_root < resign.v_resign {
            resigned = Some(position.to_move());
            moves.push(MoveRecord {
                ply: transcript.len(),
                position,
                pi: result.pi.clone(),
                q_root: result.q_root,
                played: None,
                harvested: Vec::new(),
            });
            raw_harvest.push(harvest_visited(&result, 2));
            break;
        }
        let m = select_move(&result, move_number, search_cfg, rng);
        moves.push(MoveRecord { ply: transcript.len(), position, pi: result.pi.clone(), q_root: result.q_root, played: Some(m), harvested: Vec::new() });
        raw_harvest.push(harvest_visited(&result, 2));
        searcher.advance(m);
        position = position.play_unchecked(m);
        transcript.push(m);
    }
    // drop nodes that are themselves searched positions of this game
    let played: std::collections::HashSet<Position> = moves.iter().map(|m| m.position).collect();
    for (record, nodes) in moves.iter_mut().zip(raw_harvest) {
        record.harvested = nodes
            .into_iter()
            .filter(|s| !played.contains(&s.position))
            .take(opts.harvest_keep)
            .map(|s| HarvestedNode {
                position: s.position,
                pi: s.pi.iter().enumerate().filter(|(_, &x)| x > 0.0).map(|(i, &x)| (Move::from_index(i), x)).collect(),
                q: s.q,
                n: s.n,
            })
            .collect();
    }
    let outcome = if resigned.is_none() { Some(position.outcome().expect("loop ends on a terminal position")) } else { None };
    GameRecord { transcript, moves, resigned, outcome, playout: opts.playout, generation: opts.generation }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CalibrationError {
    #[error("need at least {needed} played-out games, got {found}")]
    InsufficientSample { needed: usize, found: usize },
}

pub const MIN_CALIBRATION_GAMES: usize = 50;
pub const FALSE_RESIGN_LIMIT: f64 = 0.05;

/// Lowest root value the eventual winner saw; `None` for draws and for
/// winners that never searched.
pub fn winner_minimum(game: &GameRecord) -> Option<f32> {
    let w = game.winner()?;
    game.value_trace(w).into_iter().reduce(f32::min)
}

/// Share of `games` that a player would have resigned although they went on
/// to win, had resignation at `v_resign` been active.
pub fn false_resign_rate(games: &[GameRecord], v_resign: f32) -> f64 {
    if games.is_empty() {
        return 0.0;
    }
    let bad = games.iter().filter_map(winner_minimum).filter(|&m| m < v_resign).count();
    bad as f64 / games.len() as f64
}

/// Largest threshold (capped at `cap`) whose false-resignation rate over the
/// played-out games stays below 5%.
pub fn calibrate_resign(played_out: &[GameRecord], cap: f32) -> Result<f32, CalibrationError> {
    let minima: Vec<Option<f32>> = played_out.iter().map(winner_minimum).collect();
    calibrate_from_minima(&minima, cap)
}

/// [`calibrate_resign`] over per-game winner minima (`None` for games that
/// cannot cause a false resignation).
///
/// With the minima sorted ascending and `k = ceil(0.05 n) - 1` the most
/// violations allowed among `n` games, the answer is the `(k+1)`-th smallest
/// minimum: exactly `k` minima lie strictly below it.
pub fn calibrate_from_minima(minima: &[Option<f32>], cap: f32) -> Result<f32, CalibrationError> {
    let n = minima.len();
    if n < MIN_CALIBRATION_GAMES {
        return Err(CalibrationError::InsufficientSample { needed: MIN_CALIBRATION_GAMES, found: n });
    }
    let mut sorted: Vec<f32> = minima.iter().flatten().copied().collect();
    sorted.sort_by(f32::total_cmp);
    let allowed = ((FALSE_RESIGN_LIMIT * n as f64).ceil() as usize).saturating_sub(1);
    let v = sorted.get(allowed).copied().unwrap_or(cap);
    Ok(v.clamp(-1.0, cap))
}

pub(crate) fn dense_pi(sparse: &[(Move, f32)]) -> Vec<f32> {
    let mut pi = vec![0.0; POLICY_SIZE];
    for &(m, x) in sparse {
        pi[m.index()] = x;
    }
    pi
}
