//! Client side of the engine protocol: an engine running as a child process.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use super::{Engine, EngineError, EngineMove};
use crate::board::{Move, Position, Transcript};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

pub struct ExternalEngine {
    identity: String,
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<String>,
    timeout: Duration,
}

impl ExternalEngine {
    /// Starts `program` with `args` and asks for its identity.
    pub fn spawn(program: &str, args: &[String], timeout: Duration) -> Result<Self, EngineError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| EngineError::Process(format!("{program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let mut engine = ExternalEngine { identity: program.to_string(), child, stdin, lines, timeout };
        let reply = engine.request("id")?;
        engine.identity = match reply.strip_prefix("id ") {
            Some(name) => name.to_string(),
            None => return Err(EngineError::Protocol(format!("expected id, got {reply:?}"))),
        };
        Ok(engine)
    }

    /// Sends one command line and waits for its single response line.
    pub fn request(&mut self, line: &str) -> Result<String, EngineError> {
        writeln!(self.stdin, "{line}").and_then(|_| self.stdin.flush()).map_err(|e| EngineError::Process(e.to_string()))?;
        match self.lines.recv_timeout(self.timeout) {
            Ok(reply) => Ok(reply.trim_end_matches('\r').to_string()),
            Err(RecvTimeoutError::Timeout) => Err(EngineError::Timeout(self.timeout.as_millis() as u64)),
            Err(RecvTimeoutError::Disconnected) => Err(EngineError::Process("engine closed its output".into())),
        }
    }

    fn expect_ok(&mut self, line: &str) -> Result<(), EngineError> {
        match self.request(line)? {
            r if r == "ok" => Ok(()),
            r => Err(refusal(r)),
        }
    }
}

fn refusal(reply: String) -> EngineError {
    match reply.strip_prefix("error ") {
        Some(msg) => EngineError::Refused(msg.to_string()),
        None => EngineError::Protocol(format!("unexpected reply {reply:?}")),
    }
}

impl Engine for ExternalEngine {
    fn identity(&self) -> String {
        self.identity.clone()
    }

    fn new_game(&mut self) -> Result<(), EngineError> {
        self.expect_ok("newgame")
    }

    fn play(&mut self, history: &Transcript, _position: &Position, sims: Option<u32>) -> Result<EngineMove, EngineError> {
        self.expect_ok(&format!("position {history}"))?;
        let go = match sims {
            Some(n) => format!("go sims {n}"),
            None => "go".to_string(),
        };
        let reply = self.request(&go)?;
        let Some(token) = reply.strip_prefix("bestmove ") else {
            return Err(refusal(reply));
        };
        let mv: Move = token.parse().map_err(|_| EngineError::Protocol(format!("bad move {token:?}")))?;
        let value = self.request("value")?.strip_prefix("value ").and_then(|v| v.parse().ok());
        Ok(EngineMove { mv, value, nodes: 0 })
    }
}

impl Drop for ExternalEngine {
    fn drop(&mut self) {
        let _ = writeln!(self.stdin, "quit");
        let _ = self.stdin.flush();
        let _ = self.lines.recv_timeout(Duration::from_millis(200));
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
