use std::io::BufRead;

use thiserror::Error;

use super::transcript::{parse_transcript, replay, Transcript, TranscriptError};

/// Every opening in an XOT list is exactly this many moves long.
pub const XOT_LENGTH: usize = 8;

#[derive(Debug, Error)]
pub enum XotError {
    #[error("line {line}: {source}")]
    Transcript { line: usize, source: TranscriptError },
    #[error("line {line}: expected {XOT_LENGTH} moves, found {found}")]
    WrongLength { line: usize, found: usize },
    #[error("line {line}: {source}")]
    Io { line: usize, source: std::io::Error },
}

/// Reads an XOT opening list: one 8-move transcript per line, blank lines and
/// `#` comments skipped. Line numbers in errors are 1-based.
pub fn load_xot<R: BufRead>(source: R) -> Result<Vec<Transcript>, XotError> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| XotError::Io { line: line_no, source })?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let t = parse_transcript(text).map_err(|source| XotError::Transcript { line: line_no, source })?;
        if t.len() != XOT_LENGTH {
            return Err(XotError::WrongLength { line: line_no, found: t.len() });
        }
        replay(&t).map_err(|source| XotError::Transcript { line: line_no, source })?;
        out.push(t);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_valid_lines_and_skips_comments() {
        let text = "# xot sample\nF5D6C3D3C4F4F6F3\n\nf5f6e6f4e3c5c6d3\n";
        let list = load_xot(text.as_bytes()).unwrap();
        assert_eq!(list.len(), 2);
        assert!(list.iter().all(|t| t.len() == 8));
    }

    #[test]
    fn short_line_reports_line_number() {
        let text = "F5D6C3D3C4F4F6F3\nF5D6C3D3C4F4F6\n";
        match load_xot(text.as_bytes()) {
            Err(XotError::WrongLength { line: 2, found: 7 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn illegal_line_reports_line_number() {
        let text = "A1A2A3A4A5A6A7A8\n";
        assert!(matches!(load_xot(text.as_bytes()), Err(XotError::Transcript { line: 1, .. })));
    }
}
