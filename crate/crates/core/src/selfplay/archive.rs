use std::fs::{self, File, OpenOptions};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{DatasetEntry, EntrySource};
use crate::board::{Planes, POLICY_SIZE};
use crate::net::{LabelKind, TrainTarget};

pub const ARCHIVE_MAGIC: &[u8; 8] = b"OZDS\0\0\0\x01";
pub const ARCHIVE_VERSION: u32 = 1;
/// own u64, opp u64, pi f32 x 65, omega f32, label u8, source u8, generation u32.
const RECORD_SIZE: usize = 8 + 8 + 4 * POLICY_SIZE + 4 + 1 + 1 + 4;

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("not a generation archive")]
    BadMagic,
    #[error("archive version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("malformed archive: {0}")]
    Malformed(String),
    #[error("archive holds no generation at or before {0}")]
    Empty(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    generation: u32,
    record_size: usize,
    fields: Vec<(String, String)>,
}

impl Header {
    fn new(generation: u32) -> Header {
        let fields = [
            ("own", "u64"),
            ("opp", "u64"),
            ("pi", "f32x65"),
            ("omega", "f32"),
            ("label", "u8 z=0 q=1"),
            ("source", "u8 played=0 harvested=1"),
            ("generation", "u32"),
        ];
        Header {
            version: ARCHIVE_VERSION,
            generation,
            record_size: RECORD_SIZE,
            fields: fields.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
        }
    }
}

pub fn archive_path(dir: &Path, generation: u32) -> PathBuf {
    dir.join(format!("gen-{generation:04}.ozds"))
}

/// Generations with an archive file in `dir`, ascending.
pub fn list_generations(dir: &Path) -> Result<Vec<u32>, ArchiveError> {
    let mut gens = Vec::new();
    if !dir.exists() {
        return Ok(gens);
    }
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name();
        let name = name.to_string_lossy();
        if let Some(g) = name.strip_prefix("gen-").and_then(|s| s.strip_suffix(".ozds")) {
            if let Ok(g) = g.parse() {
                gens.push(g);
            }
        }
    }
    gens.sort_unstable();
    Ok(gens)
}

fn encode_record(e: &DatasetEntry, out: &mut Vec<u8>) {
    out.extend_from_slice(&e.planes.own.to_le_bytes());
    out.extend_from_slice(&e.planes.opp.to_le_bytes());
    for &x in &e.target.pi {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out.extend_from_slice(&e.target.omega.to_le_bytes());
    out.push(match e.target.label_kind {
        LabelKind::Z => 0,
        LabelKind::Q => 1,
    });
    out.push(match e.source {
        EntrySource::Played => 0,
        EntrySource::Harvested => 1,
    });
    out.extend_from_slice(&e.generation.to_le_bytes());
}

fn decode_record(b: &[u8]) -> Result<DatasetEntry, ArchiveError> {
    let u64_at = |i: usize| u64::from_le_bytes(b[i..i + 8].try_into().unwrap());
    let f32_at = |i: usize| f32::from_le_bytes(b[i..i + 4].try_into().unwrap());
    let pi: Vec<f32> = (0..POLICY_SIZE).map(|k| f32_at(16 + 4 * k)).collect();
    let at = 16 + 4 * POLICY_SIZE;
    let label_kind = match b[at + 4] {
        0 => LabelKind::Z,
        1 => LabelKind::Q,
        x => return Err(ArchiveError::Malformed(format!("label byte {x}"))),
    };
    let source = match b[at + 5] {
        0 => EntrySource::Played,
        1 => EntrySource::Harvested,
        x => return Err(ArchiveError::Malformed(format!("source byte {x}"))),
    };
    Ok(DatasetEntry {
        planes: Planes { own: u64_at(0), opp: u64_at(8) },
        target: TrainTarget { pi, omega: f32_at(at), label_kind },
        generation: u32::from_le_bytes(b[at + 6..at + 10].try_into().unwrap()),
        source,
    })
}

fn read_header<R: Read>(r: &mut R) -> Result<Header, ArchiveError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| ArchiveError::BadMagic)?;
    if &magic != ARCHIVE_MAGIC {
        return Err(ArchiveError::BadMagic);
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len).map_err(|_| ArchiveError::Malformed("truncated header".into()))?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut json).map_err(|_| ArchiveError::Malformed("truncated header".into()))?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| ArchiveError::Malformed(e.to_string()))?;
    if header.version != ARCHIVE_VERSION {
        return Err(ArchiveError::Version { found: header.version, expected: ARCHIVE_VERSION });
    }
    if header.record_size != RECORD_SIZE {
        return Err(ArchiveError::Malformed(format!("record size {}", header.record_size)));
    }
    Ok(header)
}

/// Appends entries to one generation's archive file, creating it with a
/// header on first use.
pub struct ArchiveWriter {
    out: BufWriter<File>,
    generation: u32,
    buf: Vec<u8>,
}

impl ArchiveWriter {
    pub fn open(dir: &Path, generation: u32) -> Result<ArchiveWriter, ArchiveError> {
        fs::create_dir_all(dir)?;
        let path = archive_path(dir, generation);
        if path.exists() && fs::metadata(&path)?.len() > 0 {
            let mut r = BufReader::new(File::open(&path)?);
            let header = read_header(&mut r)?;
            if header.generation != generation {
                return Err(ArchiveError::Malformed(format!("file for generation {} found at {}", header.generation, path.display())));
            }
            let file = OpenOptions::new().append(true).open(&path)?;
            return Ok(ArchiveWriter { out: BufWriter::new(file), generation, buf: Vec::new() });
        }
        let mut file = File::create(&path)?;
        let json = serde_json::to_vec(&Header::new(generation)).expect("header serialises");
        file.write_all(ARCHIVE_MAGIC)?;
        file.write_all(&(json.len() as u32).to_le_bytes())?;
        file.write_all(&json)?;
        Ok(ArchiveWriter { out: BufWriter::new(file), generation, buf: Vec::new() })
    }

    pub fn generation(&self) -> u32 {
        self.generation
    }

    pub fn append(&mut self, entries: &[DatasetEntry]) -> Result<(), ArchiveError> {
        for e in entries {
            if e.target.pi.len() != POLICY_SIZE {
                return Err(ArchiveError::Malformed(format!("pi has {} entries", e.target.pi.len())));
            }
            self.buf.clear();
            encode_record(e, &mut self.buf);
            self.out.write_all(&self.buf)?;
        }
        self.out.flush()?;
        Ok(())
    }
}

/// All entries of one generation, in append order.
pub fn read_archive(dir: &Path, generation: u32) -> Result<Vec<DatasetEntry>, ArchiveError> {
    let mut r = BufReader::new(File::open(archive_path(dir, generation))?);
    let header = read_header(&mut r)?;
    if header.generation != generation {
        return Err(ArchiveError::Malformed(format!("header names generation {}", header.generation)));
    }
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() % RECORD_SIZE != 0 {
        return Err(ArchiveError::Malformed(format!("{} trailing bytes", body.len() % RECORD_SIZE)));
    }
    body.chunks_exact(RECORD_SIZE).map(decode_record).collect()
}

/// Number of most recent generations to train on, ramped linearly from 2 at
/// `ramp_start` to 5 at `ramp_end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowRule {
    pub ramp_start: u32,
    pub ramp_end: u32,
}

impl Default for WindowRule {
    fn default() -> Self {
        WindowRule { ramp_start: 2, ramp_end: 8 }
    }
}

impl WindowRule {
    pub const MIN: u32 = 2;
    pub const MAX: u32 = 5;

    pub fn size(&self, current_gen: u32) -> u32 {
        let ramp = if current_gen <= self.ramp_start || self.ramp_end <= self.ramp_start {
            if current_gen >= self.ramp_end { Self::MAX } else { Self::MIN }
        } else if current_gen >= self.ramp_end {
            Self::MAX
        } else {
            let t = (current_gen - self.ramp_start) as f64 / (self.ramp_end - self.ramp_start) as f64;
            Self::MIN + (t * (Self::MAX - Self::MIN) as f64).floor() as u32
        };
        ramp.clamp(Self::MIN, Self::MAX)
    }
}

/// Generations in the window ending at `current_gen` that exist in `available`.
pub fn window_generations(available: &[u32], current_gen: u32, rule: &WindowRule) -> Vec<u32> {
    let lo = (current_gen + 1).saturating_sub(rule.size(current_gen));
    available.iter().copied().filter(|&g| g >= lo && g <= current_gen).collect()
}

/// Minibatches drawn uniformly with replacement from the window's entries.
pub struct Minibatches<R> {
    entries: Vec<DatasetEntry>,
    window: Vec<u32>,
    remaining: usize,
    minibatch: usize,
    rng: R,
}

impl<R> Minibatches<R> {
    pub fn window(&self) -> &[u32] {
        &self.window
    }

    /// Distinct entries available to the sampler.
    pub fn population(&self) -> usize {
        self.entries.len()
    }

    /// Minibatches still to come.
    pub fn batches_left(&self) -> usize {
        self.remaining.div_ceil(self.minibatch)
    }
}

impl<R: Rng> Iterator for Minibatches<R> {
    type Item = Vec<DatasetEntry>;

    fn next(&mut self) -> Option<Vec<DatasetEntry>> {
        if self.remaining == 0 {
            return None;
        }
        let n = self.remaining.min(self.minibatch);
        self.remaining -= n;
        let len = self.entries.len();
        Some((0..n).map(|_| self.entries[self.rng.random_range(0..len)].clone()).collect())
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.batches_left();
        (n, Some(n))
    }
}

impl<R: Rng> ExactSizeIterator for Minibatches<R> {}

/// Loads the window ending at `current_gen` and returns `ceil(sample_size /
/// minibatch)` minibatches totalling `sample_size` positions.
pub fn sample_training_window<R: Rng>(
    dir: &Path,
    current_gen: u32,
    rule: &WindowRule,
    sample_size: usize,
    minibatch: usize,
    rng: R,
) -> Result<Minibatches<R>, ArchiveError> {
    if minibatch == 0 {
        return Err(ArchiveError::Malformed("minibatch size must be positive".into()));
    }
    let window = window_generations(&list_generations(dir)?, current_gen, rule);
    let mut entries = Vec::new();
    for &g in &window {
        entries.extend(read_archive(dir, g)?);
    }
    if entries.is_empty() {
        return Err(ArchiveError::Empty(current_gen));
    }
    Ok(Minibatches { entries, window, remaining: sample_size, minibatch, rng })
}
