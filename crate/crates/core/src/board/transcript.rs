use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Color, Move, Outcome, Position};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TranscriptError {
    #[error("transcript has odd length {0}")]
    OddLength(usize),
    #[error("malformed token {token:?} at offset {offset}")]
    MalformedToken { offset: usize, token: String },
    #[error("illegal move {token} at index {index}")]
    IllegalMoveAt { index: usize, token: String },
}

/// Ordered list of moves, written as concatenated two-character tokens
/// (`C4E3F6`, with `PA` for a pass).
#[derive(Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct Transcript(pub Vec<Move>);

impl Transcript {
    pub fn new() -> Self {
        Transcript(Vec::new())
    }

    pub fn moves(&self) -> &[Move] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn push(&mut self, m: Move) {
        self.0.push(m);
    }

    /// Replays from the initial position, returning the final position.
    pub fn replay(&self) -> Result<Position, TranscriptError> {
        replay(self)
    }

    /// Every position of the game, starting with the initial one.
    pub fn positions(&self) -> Result<Vec<Position>, TranscriptError> {
        let mut out = Vec::with_capacity(self.0.len() + 1);
        walk(self, |_, p| out.push(p))?;
        Ok(out)
    }

    /// Canonical form with every forced pass written out as `PA`.
    pub fn with_explicit_passes(&self) -> Result<Transcript, TranscriptError> {
        let mut moves = Vec::with_capacity(self.0.len() + 2);
        walk(self, |m, _| moves.extend(m))?;
        Ok(Transcript(moves))
    }
}

impl From<Vec<Move>> for Transcript {
    fn from(moves: Vec<Move>) -> Self {
        Transcript(moves)
    }
}

impl fmt::Display for Transcript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for m in &self.0 {
            write!(f, "{m}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for Transcript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Transcript({self})")
    }
}

impl FromStr for Transcript {
    type Err = TranscriptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_transcript(s)
    }
}

impl From<Transcript> for String {
    fn from(t: Transcript) -> String {
        t.to_string()
    }
}

impl TryFrom<String> for Transcript {
    type Error = TranscriptError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        parse_transcript(&s)
    }
}

/// Parses a token stream such as `C4E3F6`; surrounding whitespace is ignored,
/// case is not significant.
pub fn parse_transcript(text: &str) -> Result<Transcript, TranscriptError> {
    let lead = text.len() - text.trim_start().len();
    let body = text.trim().as_bytes();
    if body.len() % 2 != 0 {
        return Err(TranscriptError::OddLength(body.len()));
    }
    body.chunks_exact(2)
        .enumerate()
        .map(|(i, tok)| {
            Move::parse_token(tok).ok_or_else(|| TranscriptError::MalformedToken {
                offset: lead + 2 * i,
                token: String::from_utf8_lossy(tok).into_owned(),
            })
        })
        .collect::<Result<Vec<_>, _>>()
        .map(Transcript)
}

/// Plays every move from the initial position, failing on the first illegal one.
///
/// A forced pass may be left implicit: when the mover has no capture and the
/// next token is legal for the opponent, the pass is inserted. Records in the
/// wild often drop the `PA` before a side's consecutive moves.
pub fn replay(t: &Transcript) -> Result<Position, TranscriptError> {
    let mut last = Position::initial();
    walk(t, |_, p| last = p)?;
    Ok(last)
}

/// Visits the start position (with no move) and then every move played with the
/// position it leads to, implied passes included.
fn walk(t: &Transcript, mut visit: impl FnMut(Option<Move>, Position)) -> Result<(), TranscriptError> {
    let mut p = Position::initial();
    visit(None, p);
    for (index, &m) in t.0.iter().enumerate() {
        let illegal = || TranscriptError::IllegalMoveAt { index, token: m.to_string() };
        if !p.is_legal(m) {
            if m.is_pass() || !p.is_legal(Move::PASS) {
                return Err(illegal());
            }
            let passed = p.play_unchecked(Move::PASS);
            if !passed.is_legal(m) {
                return Err(illegal());
            }
            p = passed;
            visit(Some(Move::PASS), p);
        }
        p = p.play_unchecked(m);
        visit(Some(m), p);
    }
    Ok(())
}

/// A game-record line: `<transcript> [<score> [<color listed first>]]`, as in
/// `C4E3...H7 32-32` or `C4E3...H7 45-19 white`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoredTranscript {
    pub transcript: Transcript,
    pub expected: Option<(u8, u8)>,
    pub listed_first: Color,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecordError {
    #[error(transparent)]
    Transcript(#[from] TranscriptError),
    #[error("malformed score {0:?}")]
    MalformedScore(String),
    #[error("game is not over after the last move")]
    NotFinished,
    #[error("score mismatch: expected {expected}, replay gives {actual}")]
    ScoreMismatch { expected: String, actual: String },
}

impl ScoredTranscript {
    /// Parses one line; blank lines and `#` comments yield `None`.
    pub fn parse_line(line: &str) -> Result<Option<ScoredTranscript>, RecordError> {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            return Ok(None);
        }
        let mut parts = line.split_whitespace();
        let transcript = parse_transcript(parts.next().unwrap_or_default())?;
        let expected = parts
            .next()
            .map(|s| {
                let (a, b) = s.split_once('-').ok_or_else(|| RecordError::MalformedScore(s.into()))?;
                let a = a.parse().map_err(|_| RecordError::MalformedScore(s.into()))?;
                let b = b.parse().map_err(|_| RecordError::MalformedScore(s.into()))?;
                Ok::<_, RecordError>((a, b))
            })
            .transpose()?;
        let listed_first = match parts.next() {
            Some(c) => c.parse().map_err(|_| RecordError::MalformedScore(c.into()))?,
            None => Color::Black,
        };
        Ok(Some(ScoredTranscript { transcript, expected, listed_first }))
    }

    /// Replays the game and compares the tournament score with the expected one.
    pub fn verify(&self) -> Result<Outcome, RecordError> {
        let end = replay(&self.transcript)?;
        let outcome = end.outcome().map_err(|_| RecordError::NotFinished)?;
        if let Some(expected) = self.expected {
            let (b, w) = outcome.score();
            let actual = match self.listed_first {
                Color::Black => (b, w),
                Color::White => (w, b),
            };
            if actual != expected {
                return Err(RecordError::ScoreMismatch {
                    expected: format!("{}-{}", expected.0, expected.1),
                    actual: format!("{}-{}", actual.0, actual.1),
                });
            }
        }
        Ok(outcome)
    }
}
