use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::{LrSchedule, NetConfig, DEFAULT_MOMENTUM};
use crate::search::SearchConfig;
use crate::selfplay::WindowRule;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ManifestError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown key {0}")]
    UnknownKey(String),
    #[error("bad value for {key}: {value}")]
    BadValue { key: String, value: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Piecewise-constant schedule: `(first_generation, value)` pairs with
/// strictly increasing generations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub steps: Vec<(u32, u32)>,
}

impl StepSchedule {
    pub fn at(&self, generation: u32) -> u32 {
        self.steps.iter().take_while(|(g, _)| *g <= generation).last().or(self.steps.first()).map(|s| s.1).unwrap_or(0)
    }
}

/// Every knob of a training run. Serialised as the run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub profile: String,
    pub seed: u64,
    pub net: NetConfig,
    pub games_per_generation: usize,
    pub sims: StepSchedule,
    pub lr: LrSchedule,
    pub momentum: f64,
    pub window: WindowRule,
    /// Planned generations; the playout fraction ramps over this span.
    pub generations: u32,
    pub sample_size: usize,
    pub minibatch: usize,
    pub c_puct: f64,
    pub dirichlet_epsilon: f64,
    pub temperature_moves: u32,
    pub parallel_leaves: usize,
    pub harvest_keep: usize,
    /// Upper bound on the calibrated resignation threshold.
    pub resign_cap: f32,
    /// Played-out games kept for resignation calibration.
    pub calibration_pool: usize,
    pub gate_games: usize,
    /// Share of gate points the challenger needs to be promoted.
    pub gate_threshold: f64,
    pub gate_opening_plies: usize,
    /// Re-trainings after a failed gate before the run halts.
    pub retry_cap: u32,
    pub workers: usize,
    /// Training steps per loss log record.
    pub log_every: usize,
}

impl RunConfig {
    /// Small network and budgets that fit a single commodity CPU.
    pub fn desk() -> Self {
        RunConfig {
            profile: "desk".into(),
            seed: 1,
            net: NetConfig::desk(),
            games_per_generation: 100,
            sims: StepSchedule { steps: vec![(1, 64), (2, 128), (3, 256)] },
            lr: LrSchedule { steps: vec![(0, 0.01), (4, 0.003), (11, 0.001)] },
            momentum: DEFAULT_MOMENTUM,
            window: WindowRule::default(),
            generations: 10,
            sample_size: 262_144,
            minibatch: 256,
            c_puct: 1.5,
            dirichlet_epsilon: 0.25,
            temperature_moves: 20,
            parallel_leaves: 1,
            harvest_keep: 16,
            resign_cap: -0.8,
            calibration_pool: 500,
            gate_games: 40,
            gate_threshold: 0.55,
            gate_opening_plies: 4,
            retry_cap: 3,
            workers: 1,
            log_every: 64,
        }
    }

    /// Published scale: ten 256-filter blocks, 2500 games and 100/200/400
    /// simulations per generation, 16,384,000 positions in minibatches of 1024.
    pub fn paper() -> Self {
        RunConfig {
            profile: "paper".into(),
            net: NetConfig::paper(),
            games_per_generation: 2500,
            sims: StepSchedule { steps: vec![(1, 100), (5, 200), (12, 400)] },
            lr: LrSchedule::default(),
            generations: 20,
            sample_size: 16_384_000,
            minibatch: 1024,
            parallel_leaves: 8,
            ..Self::desk()
        }
    }

    pub fn search_config(&self, generation: u32) -> SearchConfig {
        SearchConfig {
            simulations: self.sims.at(generation),
            c_puct: self.c_puct,
            dirichlet_epsilon: self.dirichlet_epsilon,
            temperature_moves: self.temperature_moves,
            parallel_leaves: self.parallel_leaves,
            ..SearchConfig::default()
        }
    }

    /// Gate points (win 1, draw 0.5) needed for promotion.
    pub fn promotion_points(&self) -> f64 {
        (self.gate_threshold * self.gate_games as f64 * 2.0).ceil() / 2.0
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        let bad = |m: &str| Err(ManifestError::Invalid(m.to_string()));
        self.net.validate().map_err(|e| ManifestError::Invalid(e.to_string()))?;
        if self.sims.steps.is_empty() || !self.sims.steps.windows(2).all(|w| w[0].0 < w[1].0) {
            return bad("sims steps must be non-empty with strictly increasing generations");
        }
        if self.sims.steps.iter().any(|s| s.1 == 0) {
            return bad("sims must be positive");
        }
        if self.lr.steps.is_empty() || !self.lr.steps.windows(2).all(|w| w[0].0 < w[1].0) {
            return bad("lr steps must be non-empty with strictly increasing generations");
        }
        if self.games_per_generation == 0 || self.minibatch == 0 || self.sample_size == 0 || self.workers == 0 {
            return bad("games, minibatch, sample and workers must be positive");
        }
        if self.gate_games == 0 || self.gate_games % 2 != 0 {
            return bad("gate games must be a positive even number");
        }
        if !(-1.0..0.0).contains(&self.resign_cap) {
            return bad("resign cap must lie in [-1, 0)");
        }
        if !(0.0..=1.0).contains(&self.gate_threshold) {
            return bad("gate threshold must lie in [0, 1]");
        }
        Ok(())
    }

    /// `key = value` lines in a fixed order.
    pub fn to_manifest(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let pairs = |s: &[(u32, u32)]| s.iter().map(|(g, v)| format!("{g}:{v}")).collect::<Vec<_>>().join(",");
        let lr = self.lr.steps.iter().map(|(g, v)| format!("{g}:{v}")).collect::<Vec<_>>().join(",");
        vec![
            ("profile", self.profile.clone()),
            ("seed", self.seed.to_string()),
            ("net.residual_blocks", self.net.residual_blocks.to_string()),
            ("net.filters", self.net.filters.to_string()),
            ("net.value_hidden", self.net.value_hidden.to_string()),
            ("net.l2", self.net.l2.to_string()),
            ("games_per_generation", self.games_per_generation.to_string()),
            ("sims", pairs(&self.sims.steps)),
            ("lr", lr),
            ("momentum", self.momentum.to_string()),
            ("window.ramp_start", self.window.ramp_start.to_string()),
            ("window.ramp_end", self.window.ramp_end.to_string()),
            ("generations", self.generations.to_string()),
            ("sample_size", self.sample_size.to_string()),
            ("minibatch", self.minibatch.to_string()),
            ("c_puct", self.c_puct.to_string()),
            ("dirichlet_epsilon", self.dirichlet_epsilon.to_string()),
            ("temperature_moves", self.temperature_moves.to_string()),
            ("parallel_leaves", self.parallel_leaves.to_string()),
            ("harvest_keep", self.harvest_keep.to_string()),
            ("resign_cap", self.resign_cap.to_string()),
            ("calibration_pool", self.calibration_pool.to_string()),
            ("gate_games", self.gate_games.to_string()),
            ("gate_threshold", self.gate_threshold.to_string()),
            ("gate_opening_plies", self.gate_opening_plies.to_string()),
            ("retry_cap", self.retry_cap.to_string()),
            ("workers", self.workers.to_string()),
            ("log_every", self.log_every.to_string()),
        ]
    }

    /// Applies one manifest entry. `profile` resets every other knob to that
    /// profile's defaults, so it should come first.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ManifestError> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ManifestError> {
            value.parse().map_err(|_| ManifestError::BadValue { key: key.into(), value: value.into() })
        }
        fn steps<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<(u32, T)>, ManifestError> {
            value
                .split(',')
                .map(|p| {
                    let (g, v) = p.trim().split_once(':').ok_or(ManifestError::BadValue { key: key.into(), value: value.into() })?;
                    Ok((num(key, g.trim())?, num(key, v.trim())?))
                })
                .collect()
        }
        match key {
            "profile" => {
                *self = match value {
                    "desk" => Self::desk(),
                    "paper" => Self::paper(),
                    _ => return Err(ManifestError::BadValue { key: key.into(), value: value.into() }),
                }
            }
            "seed" => self.seed = num(key, value)?,
            "net.residual_blocks" => self.net.residual_blocks = num(key, value)?,
            "net.filters" => self.net.filters = num(key, value)?,
            "net.value_hidden" => self.net.value_hidden = num(key, value)?,
            "net.l2" => self.net.l2 = num(key, value)?,
            "games_per_generation" => self.games_per_generation = num(key, value)?,
            "sims" => self.sims = StepSchedule { steps: steps(key, value)? },
            "lr" => self.lr = LrSchedule { steps: steps(key, value)? },
            "momentum" => self.momentum = num(key, value)?,
            "window.ramp_start" => self.window.ramp_start = num(key, value)?,
            "window.ramp_end" => self.window.ramp_end = num(key, value)?,
            "generations" => self.generations = num(key, value)?,
            "sample_size" => self.sample_size = num(key, value)?,
            "minibatch" => self.minibatch = num(key, value)?,
            "c_puct" => self.c_puct = num(key, value)?,
            "dirichlet_epsilon" => self.dirichlet_epsilon = num(key, value)?,
            "temperature_moves" => self.temperature_moves = num(key, value)?,
            "parallel_leaves" => self.parallel_leaves = num(key, value)?,
            "harvest_keep" => self.harvest_keep = num(key, value)?,
            "resign_cap" => self.resign_cap = num(key, value)?,
            "calibration_pool" => self.calibration_pool = num(key, value)?,
            "gate_games" => self.gate_games = num(key, value)?,
            "gate_threshold" => self.gate_threshold = num(key, value)?,
            "gate_opening_plies" => self.gate_opening_plies = num(key, value)?,
            "retry_cap" => self.retry_cap = num(key, value)?,
            "workers" => self.workers = num(key, value)?,
            "log_every" => self.log_every = num(key, value)?,
            other => return Err(ManifestError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Parses a manifest on top of the desk profile. Blank lines and `#`
    /// comments are skipped.
    pub fn from_manifest(text: &str) -> Result<Self, ManifestError> {
        let mut cfg = Self::desk();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ManifestError::Syntax { line: i + 1 })?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}
