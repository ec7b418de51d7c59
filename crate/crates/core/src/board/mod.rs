//! Othello rules on 64-bit bitboards.
//!
//! Squares are indexed `row * 8 + col` with `a1 = 0` and `h8 = 63`; the file
//! letter selects the column and the rank digit the row. A position is
//! terminal when neither side has a capturing move, so a game record only ever
//! contains the single forced `PA` of a side that cannot move while its
//! opponent still can.

mod encode;
mod perft;
pub mod reference;
mod symmetry;
mod transcript;
mod xot;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use encode::{encode_planes, Planes, PLANE_LEN};
pub use perft::perft;
pub use symmetry::Symmetry;
pub use transcript::{parse_transcript, replay, RecordError, ScoredTranscript, Transcript, TranscriptError};
pub use xot::{load_xot, XotError};

/// Number of policy slots: 64 squares plus pass.
pub const POLICY_SIZE: usize = 65;

const NOT_FILE_A: u64 = 0xfefe_fefe_fefe_fefe;
const NOT_FILE_H: u64 = 0x7f7f_7f7f_7f7f_7f7f;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BoardError {
    #[error("illegal move {0}")]
    IllegalMove(Move),
    #[error("position is not terminal")]
    NotTerminal,
    #[error("invalid position: {0}")]
    InvalidPosition(&'static str),
    #[error("malformed move token {0:?}")]
    MalformedMove(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Black,
    White,
}

impl Color {
    #[inline]
    pub fn opponent(self) -> Color {
        match self {
            Color::Black => Color::White,
            Color::White => Color::Black,
        }
    }
}

impl fmt::Display for Color {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Color::Black => "black",
            Color::White => "white",
        })
    }
}

impl FromStr for Color {
    type Err = BoardError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "black" | "b" => Ok(Color::Black),
            "white" | "w" => Ok(Color::White),
            _ => Err(BoardError::MalformedMove(s.to_string())),
        }
    }
}

/// A square index `0..64` or the pass move, stored as its policy slot.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Move(u8);

impl Move {
    pub const PASS: Move = Move(64);

    #[inline]
    pub fn square(sq: u8) -> Move {
        assert!(sq < 64, "square index out of range: {sq}");
        Move(sq)
    }

    /// Builds a move from a policy slot `0..=64`.
    #[inline]
    pub fn from_index(index: usize) -> Move {
        assert!(index < POLICY_SIZE, "policy index out of range: {index}");
        Move(index as u8)
    }

    #[inline]
    pub fn is_pass(self) -> bool {
        self.0 == 64
    }

    #[inline]
    pub fn to_square(self) -> Option<u8> {
        (!self.is_pass()).then_some(self.0)
    }

    /// Policy slot of this move.
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// Two-character uppercase token, `PA` for pass.
    pub fn token(self) -> [u8; 2] {
        match self.to_square() {
            None => *b"PA",
            Some(sq) => [b'A' + sq % 8, b'1' + sq / 8],
        }
    }

    /// Parses a two-byte token; case-insensitive.
    pub fn parse_token(token: &[u8]) -> Option<Move> {
        if token.len() != 2 {
            return None;
        }
        let col = token[0].to_ascii_uppercase();
        let row = token[1].to_ascii_uppercase();
        if col == b'P' && row == b'A' {
            return Some(Move::PASS);
        }
        if (b'A'..=b'H').contains(&col) && (b'1'..=b'8').contains(&row) {
            Some(Move((row - b'1') * 8 + (col - b'A')))
        } else {
            None
        }
    }
}

impl fmt::Display for Move {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = self.token();
        write!(f, "{}{}", t[0] as char, t[1] as char)
    }
}

impl fmt::Debug for Move {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for Move {
    type Err = BoardError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Move::parse_token(s.trim().as_bytes()).ok_or_else(|| BoardError::MalformedMove(s.to_string()))
    }
}

impl Serialize for Move {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Move {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Final disc counts of a finished game.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub black: u8,
    pub white: u8,
}

impl Outcome {
    /// Result in `{-1, 0, +1}` from `color`'s point of view.
    pub fn z(self, color: Color) -> i8 {
        let (own, opp) = match color {
            Color::Black => (self.black, self.white),
            Color::White => (self.white, self.black),
        };
        (own as i16 - opp as i16).signum() as i8
    }

    pub fn winner(self) -> Option<Color> {
        match self.z(Color::Black) {
            1 => Some(Color::Black),
            -1 => Some(Color::White),
            _ => None,
        }
    }

    /// Tournament score `(black, white)`: squares left empty at the end go to
    /// the winner, or are split evenly on a draw.
    pub fn score(self) -> (u8, u8) {
        let empty = 64 - self.black - self.white;
        match self.winner() {
            Some(Color::Black) => (self.black + empty, self.white),
            Some(Color::White) => (self.black, self.white + empty),
            None => (self.black + empty / 2, self.white + empty / 2),
        }
    }
}

/// Formats the tournament score, e.g. `35-29`.
impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (b, w) = self.score();
        write!(f, "{b}-{w}")
    }
}

/// Moves available in a position, in ascending square order.
///
/// Fixed capacity; an Othello position never has more than 33 legal squares.
#[derive(Clone, Copy)]
pub struct MoveList {
    len: u8,
    moves: [Move; 64],
}

impl MoveList {
    fn new() -> Self {
        MoveList { len: 0, moves: [Move::PASS; 64] }
    }

    fn push(&mut self, m: Move) {
        self.moves[self.len as usize] = m;
        self.len += 1;
    }

    pub fn as_slice(&self) -> &[Move] {
        &self.moves[..self.len as usize]
    }
}

impl std::ops::Deref for MoveList {
    type Target = [Move];
    fn deref(&self) -> &[Move] {
        self.as_slice()
    }
}

impl fmt::Debug for MoveList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.as_slice()).finish()
    }
}

impl<'a> IntoIterator for &'a MoveList {
    type Item = &'a Move;
    type IntoIter = std::slice::Iter<'a, Move>;
    fn into_iter(self) -> Self::IntoIter {
        self.as_slice().iter()
    }
}

#[inline(always)]
fn shift(x: u64, dir: usize) -> u64 {
    match dir {
        0 => (x << 1) & NOT_FILE_A, // east
        1 => (x >> 1) & NOT_FILE_H, // west
        2 => x << 8,                // north
        3 => x >> 8,                // south
        4 => (x << 9) & NOT_FILE_A, // north-east
        5 => (x << 7) & NOT_FILE_H, // north-west
        6 => (x >> 7) & NOT_FILE_A, // south-east
        _ => (x >> 9) & NOT_FILE_H, // south-west
    }
}

/// Squares where `own` to move captures at least one disc of `opp`.
#[inline]
pub fn capture_mask(own: u64, opp: u64) -> u64 {
    let empty = !(own | opp);
    let mut moves = 0;
    for dir in 0..8 {
        let mut t = shift(own, dir) & opp;
        for _ in 0..5 {
            t |= shift(t, dir) & opp;
        }
        moves |= shift(t, dir) & empty;
    }
    moves
}

/// Discs of `opp` flipped when `own` plays on `sq`.
#[inline]
pub fn flip_mask(own: u64, opp: u64, sq: u8) -> u64 {
    let start = 1u64 << sq;
    let mut flips = 0;
    for dir in 0..8 {
        let mut run = 0;
        let mut x = shift(start, dir);
        while x & opp != 0 {
            run |= x;
            x = shift(x, dir);
        }
        if x & own != 0 {
            flips |= run;
        }
    }
    flips
}

/// Bitboard game state: disc masks of both colors plus the side to move.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Position {
    black: u64,
    white: u64,
    to_move: Color,
}

impl Default for Position {
    fn default() -> Self {
        Position::initial()
    }
}

impl Position {
    /// Standard start: white on d4 and e5, black on d5 and e4, black to move.
    pub fn initial() -> Position {
        let d4 = 1u64 << 27;
        let e4 = 1u64 << 28;
        let d5 = 1u64 << 35;
        let e5 = 1u64 << 36;
        Position { black: d5 | e4, white: d4 | e5, to_move: Color::Black }
    }

    pub fn from_masks(black: u64, white: u64, to_move: Color) -> Result<Position, BoardError> {
        if black & white != 0 {
            return Err(BoardError::InvalidPosition("overlapping discs"));
        }
        Ok(Position { black, white, to_move })
    }

    #[inline]
    pub fn black(&self) -> u64 {
        self.black
    }

    #[inline]
    pub fn white(&self) -> u64 {
        self.white
    }

    #[inline]
    pub fn to_move(&self) -> Color {
        self.to_move
    }

    #[inline]
    pub fn discs(&self, color: Color) -> u64 {
        match color {
            Color::Black => self.black,
            Color::White => self.white,
        }
    }

    /// Discs of the side to move.
    #[inline]
    pub fn own(&self) -> u64 {
        self.discs(self.to_move)
    }

    #[inline]
    pub fn opp(&self) -> u64 {
        self.discs(self.to_move.opponent())
    }

    #[inline]
    pub fn empty(&self) -> u64 {
        !(self.black | self.white)
    }

    pub fn disc_count(&self) -> u32 {
        (self.black | self.white).count_ones()
    }

    /// Capturing squares for the side to move.
    #[inline]
    pub fn capture_mask(&self) -> u64 {
        capture_mask(self.own(), self.opp())
    }

    #[inline]
    pub fn is_terminal(&self) -> bool {
        self.capture_mask() == 0 && capture_mask(self.opp(), self.own()) == 0
    }

    /// Legal moves: capturing squares, `{PASS}` when the mover is blocked but
    /// the opponent is not, and nothing once the game is over.
    pub fn legal_moves(&self) -> MoveList {
        let mut list = MoveList::new();
        let mut mask = self.capture_mask();
        if mask == 0 {
            if capture_mask(self.opp(), self.own()) != 0 {
                list.push(Move::PASS);
            }
            return list;
        }
        while mask != 0 {
            list.push(Move(mask.trailing_zeros() as u8));
            mask &= mask - 1;
        }
        list
    }

    pub fn is_legal(&self, m: Move) -> bool {
        match m.to_square() {
            Some(sq) => self.capture_mask() & (1u64 << sq) != 0,
            None => self.capture_mask() == 0 && capture_mask(self.opp(), self.own()) != 0,
        }
    }

    pub fn apply_move(&self, m: Move) -> Result<Position, BoardError> {
        if !self.is_legal(m) {
            return Err(BoardError::IllegalMove(m));
        }
        Ok(self.play_unchecked(m))
    }

    /// Plays a move known to be legal.
    pub fn play_unchecked(&self, m: Move) -> Position {
        let mover = self.to_move;
        let Some(sq) = m.to_square() else {
            return Position { to_move: mover.opponent(), ..*self };
        };
        let (own, opp) = (self.own(), self.opp());
        let flips = flip_mask(own, opp, sq);
        debug_assert!(flips != 0, "non-capturing move {m}");
        let own = own | flips | (1u64 << sq);
        let opp = opp & !flips;
        let (black, white) = match mover {
            Color::Black => (own, opp),
            Color::White => (opp, own),
        };
        Position { black, white, to_move: mover.opponent() }
    }

    pub fn outcome(&self) -> Result<Outcome, BoardError> {
        if !self.is_terminal() {
            return Err(BoardError::NotTerminal);
        }
        Ok(self.counts())
    }

    /// Current disc counts regardless of terminality.
    pub fn counts(&self) -> Outcome {
        Outcome { black: self.black.count_ones() as u8, white: self.white.count_ones() as u8 }
    }

    /// Same discs with colors exchanged and the mover toggled.
    pub fn swap_colors(&self) -> Position {
        Position { black: self.white, white: self.black, to_move: self.to_move.opponent() }
    }

    pub fn with_to_move(&self, to_move: Color) -> Position {
        Position { to_move, ..*self }
    }

    /// 64-bit mixing hash of the full state, stable across runs.
    pub fn key(&self) -> u64 {
        let mut h = self.black.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        h ^= self.white.rotate_left(29).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= (self.to_move as u64).wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^= h >> 31;
        h.wrapping_mul(0x2545_f491_4f6c_dd1d)
    }

    /// Cell at `sq`, if occupied.
    pub fn cell(&self, sq: u8) -> Option<Color> {
        let bit = 1u64 << sq;
        if self.black & bit != 0 {
            Some(Color::Black)
        } else if self.white & bit != 0 {
            Some(Color::White)
        } else {
            None
        }
    }

    /// 64 characters `X`/`O`/`-` from a1 to h8, row by row.
    pub fn board_string(&self) -> String {
        (0..64u8)
            .map(|sq| match self.cell(sq) {
                Some(Color::Black) => 'X',
                Some(Color::White) => 'O',
                None => '-',
            })
            .collect()
    }
}

impl fmt::Debug for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Position({} {:?})", self.board_string(), self.to_move)
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "  a b c d e f g h")?;
        for row in (0..8u8).rev() {
            write!(f, "{}", row + 1)?;
            for col in 0..8u8 {
                let c = match self.cell(row * 8 + col) {
                    Some(Color::Black) => 'X',
                    Some(Color::White) => 'O',
                    None => '.',
                };
                write!(f, " {c}")?;
            }
            writeln!(f)?;
        }
        write!(f, "{} to move", self.to_move)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sq(name: &str) -> Move {
        name.parse().unwrap()
    }

    #[test]
    fn initial_layout() {
        let p = Position::initial();
        assert_eq!(p.black().count_ones(), 2);
        assert_eq!(p.white().count_ones(), 2);
        assert_eq!(p.cell(27), Some(Color::White)); // d4
        assert_eq!(p.cell(36), Some(Color::White)); // e5
        assert_eq!(p.cell(35), Some(Color::Black)); // d5
        assert_eq!(p.cell(28), Some(Color::Black)); // e4
        assert_eq!(p.to_move(), Color::Black);
        assert!(!p.is_terminal());
    }

    #[test]
    fn initial_moves() {
        let moves = Position::initial().legal_moves();
        let want: Vec<Move> = ["D3", "C4", "F5", "E6"].iter().map(|s| sq(s)).collect();
        let mut got = moves.to_vec();
        got.sort();
        let mut want_sorted = want.clone();
        want_sorted.sort();
        assert_eq!(got, want_sorted);
    }

    #[test]
    fn play_f5() {
        let p = Position::initial().apply_move(sq("F5")).unwrap();
        assert_eq!(p.black().count_ones(), 4);
        assert_eq!(p.white().count_ones(), 1);
        assert_eq!(p.to_move(), Color::White);
    }

    #[test]
    fn illegal_moves_rejected() {
        let p = Position::initial();
        assert_eq!(p.apply_move(sq("A1")), Err(BoardError::IllegalMove(sq("A1"))));
        assert_eq!(p.apply_move(Move::PASS), Err(BoardError::IllegalMove(Move::PASS)));
        // occupied square
        assert!(p.apply_move(sq("D4")).is_err());
    }

    #[test]
    fn pass_only_toggles_mover() {
        // black a1, white b1; black captures nothing? black to move with c1 capture available
        // White to move here has no capture (nothing of black is bracketable), black has c1.
        let p = Position::from_masks(1 << 0, 1 << 1, Color::White).unwrap();
        assert_eq!(p.legal_moves().to_vec(), vec![Move::PASS]);
        let q = p.apply_move(Move::PASS).unwrap();
        assert_eq!(q.black(), p.black());
        assert_eq!(q.white(), p.white());
        assert_eq!(q.to_move(), Color::Black);
        assert_eq!(q.legal_moves().to_vec(), vec![sq("C1")]);
    }

    #[test]
    fn terminal_has_no_moves() {
        let p = Position::from_masks(u64::MAX >> 24, (u64::MAX >> 40) << 40, Color::Black).unwrap();
        assert!(p.is_terminal());
        assert!(p.legal_moves().is_empty());
        let o = p.outcome().unwrap();
        assert_eq!((o.black, o.white), (40, 24));
        assert_eq!(o.z(Color::Black), 1);
        assert_eq!(o.z(Color::White), -1);
    }

    #[test]
    fn outcome_signs() {
        let draw = Outcome { black: 32, white: 32 };
        assert_eq!(draw.z(Color::Black), 0);
        assert_eq!(draw.winner(), None);
        let o = Outcome { black: 45, white: 19 };
        assert_eq!(o.z(Color::White), -1);
        assert_eq!(o.to_string(), "45-19");
    }

    #[test]
    fn empties_go_to_winner() {
        let o = Outcome { black: 27, white: 35 };
        assert_eq!(o.score(), (27, 37));
        assert_eq!(o.to_string(), "27-37");
        let d = Outcome { black: 30, white: 30 };
        assert_eq!(d.to_string(), "32-32");
    }

    #[test]
    fn outcome_requires_terminal() {
        assert_eq!(Position::initial().outcome(), Err(BoardError::NotTerminal));
    }

    #[test]
    fn move_tokens() {
        assert_eq!(sq("a1").index(), 0);
        assert_eq!(sq("H8").index(), 63);
        assert_eq!(sq("c4").to_string(), "C4");
        assert_eq!("pa".parse::<Move>().unwrap(), Move::PASS);
        assert!("Z9".parse::<Move>().is_err());
        assert!("I1".parse::<Move>().is_err());
        assert!("A0".parse::<Move>().is_err());
    }

    #[test]
    fn overlapping_masks_rejected() {
        assert!(Position::from_masks(1, 1, Color::Black).is_err());
    }
}
