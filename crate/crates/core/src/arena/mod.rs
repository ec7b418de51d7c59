//! Matches between engines, series bookkeeping and the line-based engine protocol.

mod external;
mod protocol;

pub use external::{ExternalEngine, DEFAULT_TIMEOUT};
pub use protocol::{serve, Command, ProtocolError};

use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::{IndexedRandom, IteratorRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::board::{Color, Move, Outcome, Position, Transcript};
use crate::net::{Checkpoint, NetParams};
use crate::search::{Oracle, SearchConfig, Searcher};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("engine timed out after {0} ms")]
    Timeout(u64),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("engine refused: {0}")]
    Refused(String),
    #[error("engine process: {0}")]
    Process(String),
}

/// A move chosen by an engine, with its root value and search effort.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineMove {
    pub mv: Move,
    /// Root value for the mover, when the engine reports one.
    pub value: Option<f32>,
    /// Positions searched for this move (tree nodes expanded).
    pub nodes: u64,
}

/// Anything that picks moves given the game so far.
pub trait Engine: Send {
    fn identity(&self) -> String;

    fn new_game(&mut self) -> Result<(), EngineError>;

    /// Move for the side to move in `position`, reached by playing `history`.
    /// `sims` overrides the engine's default budget.
    fn play(&mut self, history: &Transcript, position: &Position, sims: Option<u32>) -> Result<EngineMove, EngineError>;
}

/// MCTS agent over an in-process oracle: no root noise, argmax move choice.
pub struct InternalEngine {
    identity: String,
    oracle: Arc<dyn Oracle + Send + Sync>,
    config: SearchConfig,
    rng: ChaCha8Rng,
}

impl InternalEngine {
    pub fn new(identity: impl Into<String>, oracle: Arc<dyn Oracle + Send + Sync>, config: SearchConfig, seed: u64) -> Self {
        InternalEngine { identity: identity.into(), oracle, config, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Engine pinned to a checkpoint; the identity carries the checkpoint hash.
    pub fn from_checkpoint(label: &str, checkpoint: &Checkpoint, config: SearchConfig) -> Self {
        let identity = format!("{label}@{}", &checkpoint.hash()[..16]);
        Self::from_params(identity, checkpoint.params.clone(), config)
    }

    pub fn from_params(identity: impl Into<String>, params: NetParams<f32>, config: SearchConfig) -> Self {
        Self::new(identity, Arc::new(params), config, 0)
    }

    pub fn config(&self) -> &SearchConfig {
        &self.config
    }
}

impl Engine for InternalEngine {
    fn identity(&self) -> String {
        self.identity.clone()
    }

    fn new_game(&mut self) -> Result<(), EngineError> {
        Ok(())
    }

    fn play(&mut self, _history: &Transcript, position: &Position, sims: Option<u32>) -> Result<EngineMove, EngineError> {
        let mut cfg = self.config.clone();
        if let Some(n) = sims {
            cfg.simulations = n;
        }
        let mut searcher = Searcher::new(cfg);
        let result = searcher
            .search(position, &*self.oracle, false, &mut self.rng)
            .map_err(|e| EngineError::Refused(e.to_string()))?;
        Ok(EngineMove { mv: result.best_move(), value: Some(result.q_root), nodes: result.nodes_expanded as u64 })
    }
}

/// Uniformly random legal moves; a baseline and a test double.
pub struct RandomEngine {
    rng: ChaCha8Rng,
    seed: u64,
}

impl RandomEngine {
    pub fn new(seed: u64) -> Self {
        RandomEngine { rng: ChaCha8Rng::seed_from_u64(seed), seed }
    }
}

impl Engine for RandomEngine {
    fn identity(&self) -> String {
        format!("random#{}", self.seed)
    }

    fn new_game(&mut self) -> Result<(), EngineError> {
        Ok(())
    }

    fn play(&mut self, _history: &Transcript, position: &Position, _sims: Option<u32>) -> Result<EngineMove, EngineError> {
        let moves = position.legal_moves();
        let mv = *moves.as_slice().choose(&mut self.rng).ok_or_else(|| EngineError::Refused("terminal position".into()))?;
        Ok(EngineMove { mv, value: None, nodes: 0 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forfeit {
    pub loser: Color,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchGame {
    pub opening: Transcript,
    pub black: String,
    pub white: String,
    pub transcript: Transcript,
    /// Board result; `None` when the game ended by forfeit.
    pub outcome: Option<Outcome>,
    pub forfeit: Option<Forfeit>,
    /// Positions searched for each engine move, in order.
    pub nodes: Vec<u64>,
}

impl MatchGame {
    /// 1 for a win, 0.5 for a draw, 0 for a loss.
    pub fn points(&self, color: Color) -> f64 {
        if let Some(f) = &self.forfeit {
            return if f.loser == color { 0.0 } else { 1.0 };
        }
        match self.outcome.map(|o| o.z(color)) {
            Some(1) => 1.0,
            Some(0) => 0.5,
            _ => 0.0,
        }
    }
}

/// Plays one game from `opening`. Forced passes are played without asking the
/// engine; an engine error or illegal answer forfeits the game.
pub fn play_match(black: &mut dyn Engine, white: &mut dyn Engine, opening: &Transcript, sims: Option<u32>) -> MatchGame {
    let mut game = MatchGame {
        opening: opening.clone(),
        black: black.identity(),
        white: white.identity(),
        transcript: Transcript::new(),
        outcome: None,
        forfeit: None,
        nodes: Vec::new(),
    };
    let mut position = Position::initial();
    for &m in opening.moves() {
        position = position.apply_move(m).expect("opening must be legal");
        game.transcript.push(m);
    }
    if let Err(e) = black.new_game() {
        game.forfeit = Some(Forfeit { loser: Color::Black, reason: e.to_string() });
        return game;
    }
    if let Err(e) = white.new_game() {
        game.forfeit = Some(Forfeit { loser: Color::White, reason: e.to_string() });
        return game;
    }
    while !position.is_terminal() {
        let mover = position.to_move();
        let legal = position.legal_moves();
        let mv = if legal.len() == 1 && legal[0].is_pass() {
            Move::PASS
        } else {
            let engine: &mut dyn Engine = if mover == Color::Black { &mut *black } else { &mut *white };
            match engine.play(&game.transcript, &position, sims) {
                Ok(reply) if position.is_legal(reply.mv) => {
                    game.nodes.push(reply.nodes);
                    reply.mv
                }
                Ok(reply) => {
                    game.forfeit = Some(Forfeit { loser: mover, reason: format!("illegal move {}", reply.mv) });
                    return game;
                }
                Err(e) => {
                    game.forfeit = Some(Forfeit { loser: mover, reason: e.to_string() });
                    return game;
                }
            }
        };
        position = position.play_unchecked(mv);
        game.transcript.push(mv);
    }
    game.outcome = Some(position.counts());
    game
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesGame {
    pub index: usize,
    /// Colour played by the first engine.
    pub a_color: Color,
    pub game: MatchGame,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesResult {
    pub a: String,
    pub b: String,
    pub games: Vec<SeriesGame>,
    pub a_wins: u32,
    pub draws: u32,
    pub b_wins: u32,
}

impl SeriesResult {
    pub fn a_points(&self) -> f64 {
        self.a_wins as f64 + 0.5 * self.draws as f64
    }

    pub fn b_points(&self) -> f64 {
        self.b_wins as f64 + 0.5 * self.draws as f64
    }

    pub fn a_score(&self) -> f64 {
        if self.games.is_empty() { 0.0 } else { self.a_points() / self.games.len() as f64 }
    }

    /// Replays every transcript and recounts the tallies.
    pub fn verify(&self) -> Result<(), String> {
        let (mut aw, mut d, mut bw) = (0, 0, 0);
        for g in &self.games {
            let end = g.game.transcript.replay().map_err(|e| format!("game {}: {e}", g.index))?;
            if let Some(o) = g.game.outcome {
                if !end.is_terminal() || end.counts() != o {
                    return Err(format!("game {}: recorded outcome does not match replay", g.index));
                }
            }
            match g.game.points(g.a_color) {
                1.0 => aw += 1,
                0.5 => d += 1,
                _ => bw += 1,
            }
        }
        if (aw, d, bw) != (self.a_wins, self.draws, self.b_wins) {
            return Err(format!("tallies {aw}/{d}/{bw} differ from recorded {}/{}/{}", self.a_wins, self.draws, self.b_wins));
        }
        Ok(())
    }

    /// One row per game: index, colours, opening, result, points, forfeit, mean nodes, transcript.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("game,a_color,black,white,opening,black_discs,white_discs,a_points,forfeit,mean_nodes,transcript\n");
        for g in &self.games {
            let (bd, wd) = g.game.outcome.map(|o| (o.black.to_string(), o.white.to_string())).unwrap_or_default();
            let forfeit = g.game.forfeit.as_ref().map(|f| format!("{:?}: {}", f.loser, f.reason.replace(',', ";"))).unwrap_or_default();
            let nodes = if g.game.nodes.is_empty() {
                0.0
            } else {
                g.game.nodes.iter().sum::<u64>() as f64 / g.game.nodes.len() as f64
            };
            let _ = writeln!(
                out,
                "{},{:?},{},{},{},{bd},{wd},{},{forfeit},{nodes:.1},{}",
                g.index,
                g.a_color,
                g.game.black,
                g.game.white,
                g.game.opening,
                g.game.points(g.a_color),
                g.game.transcript
            );
        }
        out
    }
}

/// Plays `games` games; game `i` uses `openings[i % len]` and the first
/// engine takes black in even games, white in odd ones.
pub fn play_series(a: &mut dyn Engine, b: &mut dyn Engine, openings: &[Transcript], games: usize, sims: Option<u32>) -> SeriesResult {
    let mut result =
        SeriesResult { a: a.identity(), b: b.identity(), games: Vec::with_capacity(games), a_wins: 0, draws: 0, b_wins: 0 };
    let empty = Transcript::new();
    for index in 0..games {
        let opening = if openings.is_empty() { &empty } else { &openings[index % openings.len()] };
        let a_color = if index % 2 == 0 { Color::Black } else { Color::White };
        let game = if a_color == Color::Black {
            play_match(&mut *a, &mut *b, opening, sims)
        } else {
            play_match(&mut *b, &mut *a, opening, sims)
        };
        match game.points(a_color) {
            1.0 => result.a_wins += 1,
            0.5 => result.draws += 1,
            _ => result.b_wins += 1,
        }
        log::debug!("game {index}: {} a={:?} points {}", game.transcript, a_color, game.points(a_color));
        result.games.push(SeriesGame { index, a_color, game });
    }
    result
}

/// `count` distinct random openings of `plies` legal moves that do not end the game.
pub fn random_openings<R: Rng + ?Sized>(count: usize, plies: usize, rng: &mut R) -> Vec<Transcript> {
    let mut out: Vec<Transcript> = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        assert!(attempts < 1000 * (count + 10), "cannot find {count} distinct openings of {plies} moves");
        let mut pos = Position::initial();
        let mut t = Transcript::new();
        while t.len() < plies && !pos.is_terminal() {
            let m = *pos.legal_moves().as_slice().choose(rng).expect("non-terminal");
            pos = pos.play_unchecked(m);
            t.push(m);
        }
        if t.len() == plies && !pos.is_terminal() && !out.contains(&t) {
            out.push(t);
        }
    }
    out
}

/// Each opening twice in a row, so that a series plays it once per colour.
pub fn paired(openings: &[Transcript]) -> Vec<Transcript> {
    openings.iter().flat_map(|t| [t.clone(), t.clone()]).collect()
}

/// `n` openings drawn from `pool` without replacement (with replacement once
/// the pool is exhausted).
pub fn draw_openings<R: Rng + ?Sized>(pool: &[Transcript], n: usize, rng: &mut R) -> Vec<Transcript> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n && !pool.is_empty() {
        let take = (n - out.len()).min(pool.len());
        out.extend(pool.iter().choose_multiple(rng, take).into_iter().cloned());
    }
    out
}
