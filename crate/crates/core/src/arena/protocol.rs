//! Server side of the engine line protocol. See `docs/engine-protocol.md`.

use std::io::{self, BufRead, Write};

use thiserror::Error;

use super::Engine;
use crate::board::{parse_transcript, Position, Transcript};

/// Largest budget accepted by `go sims N`.
pub const MAX_SIMS: u32 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    NewGame,
    Position(Transcript),
    Go { sims: Option<u32> },
    Value,
    Id,
    Quit,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("empty command")]
    Empty,
    #[error("unknown command {0}")]
    Unknown(String),
    #[error("bad arguments for {0}")]
    BadArguments(&'static str),
    #[error("bad transcript {0}")]
    BadTranscript(String),
    #[error("bad sims {0}")]
    BadSims(String),
}

impl Command {
    pub fn parse(line: &str) -> Result<Command, ProtocolError> {
        let mut words = line.split_ascii_whitespace();
        let Some(head) = words.next() else {
            return Err(ProtocolError::Empty);
        };
        let rest: Vec<&str> = words.collect();
        let bare = |c: Command, name| if rest.is_empty() { Ok(c) } else { Err(ProtocolError::BadArguments(name)) };
        match head {
            "newgame" => bare(Command::NewGame, "newgame"),
            "value" => bare(Command::Value, "value"),
            "id" => bare(Command::Id, "id"),
            "quit" => bare(Command::Quit, "quit"),
            "position" => {
                let text = rest.concat();
                parse_transcript(&text).map(Command::Position).map_err(|_| ProtocolError::BadTranscript(text))
            }
            "go" => match rest.as_slice() {
                [] => Ok(Command::Go { sims: None }),
                ["sims", n] => match n.parse::<u32>() {
                    Ok(v) if (1..=MAX_SIMS).contains(&v) => Ok(Command::Go { sims: Some(v) }),
                    _ => Err(ProtocolError::BadSims(n.to_string())),
                },
                _ => Err(ProtocolError::BadArguments("go")),
            },
            other => Err(ProtocolError::Unknown(other.to_string())),
        }
    }
}

/// Answers protocol commands read from `input` until `quit` or end of input.
/// Every command gets exactly one response line.
pub fn serve<R: BufRead, W: Write>(engine: &mut dyn Engine, input: R, mut output: W) -> io::Result<()> {
    let mut current: Option<(Transcript, Position)> = None;
    let mut value: Option<f32> = None;
    for line in input.lines() {
        let line = line?;
        let reply = match Command::parse(line.trim_end_matches('\r')) {
            Err(e) => format!("error {e}"),
            Ok(Command::Quit) => {
                writeln!(output, "bye")?;
                output.flush()?;
                return Ok(());
            }
            Ok(Command::Id) => format!("id {}", engine.identity()),
            Ok(Command::NewGame) => match engine.new_game() {
                Ok(()) => {
                    current = None;
                    value = None;
                    "ok".to_string()
                }
                Err(e) => format!("error {e}"),
            },
            Ok(Command::Position(t)) => match t.replay() {
                Ok(p) => {
                    current = Some((t, p));
                    value = None;
                    "ok".to_string()
                }
                Err(e) => format!("error {e}"),
            },
            Ok(Command::Value) => match value {
                Some(v) => format!("value {v:.6}"),
                None => "error no search".to_string(),
            },
            Ok(Command::Go { sims }) => match &current {
                None => "error no position".to_string(),
                Some((_, p)) if p.is_terminal() => "error terminal position".to_string(),
                Some((t, p)) => match engine.play(t, p, sims) {
                    Ok(reply) if p.is_legal(reply.mv) => {
                        value = reply.value;
                        format!("bestmove {}", reply.mv)
                    }
                    Ok(reply) => format!("error engine chose illegal move {}", reply.mv),
                    Err(e) => format!("error {e}"),
                },
            },
        };
        writeln!(output, "{reply}")?;
        output.flush()?;
    }
    Ok(())
}
