//! The generation loop: self-play, training, gating and promotion, with
//! run persistence and the per-generation metrics.

mod config;
mod export;
mod metrics;

pub use config::{ManifestError, RunConfig, StepSchedule};
pub use export::{export_metrics, heatmap_csv};
pub use metrics::{
    crucial_move_heatmap, drop_stats, elo_estimate, elo_with_prior, largest_drop, max_value_drop, DropStats, MetricsError,
    PairResult, ValueDrop, ELO_SCALE,
};

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::arena::{paired, play_series, random_openings, InternalEngine, SeriesResult};
use crate::net::{backward, dense_batch, Checkpoint, NetError, NetParams, Sgd, TrainTarget};
use crate::search::SearchConfig;
use crate::selfplay::{
    build_dataset, calibrate_from_minima, playout_fraction, sample_training_window, window_generations, winner_minimum,
    ArchiveError, ArchiveWriter, GameOptions, GameRecord, ResignConfig,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("network: {0}")]
    Net(#[from] NetError),
    #[error("archive: {0}")]
    Archive(#[from] ArchiveError),
    #[error("manifest: {0}")]
    Manifest(#[from] ManifestError),
    #[error("state: {0}")]
    State(String),
    #[error("generation {generation}: challenger failed the gate {attempts} times; run halted")]
    RetryCapExceeded { generation: u32, attempts: u32 },
    #[error("run is halted: {0}; resume to start a fresh self-play round")]
    Halted(String),
}

/// RNG phases; part of the stream id of every seeded generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Phase {
    SelfPlay = 1,
    Train = 2,
    Gate = 3,
    Evaluate = 4,
}

/// Generator for `(generation, round, phase, index)`: ChaCha8 seeded from the
/// run seed, on stream `generation << 40 | round << 32 | phase << 24 | index`.
pub fn phase_rng(seed: u64, generation: u32, round: u32, phase: Phase, index: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stream = (generation as u64) << 40 | (round as u64 & 0xff) << 32 | (phase as u64) << 24 | (index as u64 & 0xff_ffff);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GateScore {
    pub wins: u32,
    pub draws: u32,
    pub losses: u32,
}

impl GateScore {
    pub fn points(&self) -> f64 {
        self.wins as f64 + 0.5 * self.draws as f64
    }

    pub fn games(&self) -> u32 {
        self.wins + self.draws + self.losses
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationMetrics {
    /// Mean training loss of each attempt, in order.
    pub attempt_losses: Vec<f64>,
    pub mean_loss: f64,
    pub elo: Option<f64>,
    pub value_drop: Option<DropStats>,
    pub heatmap: [[u32; 8]; 8],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    /// Generation the challenger would become.
    pub index: u32,
    pub round: u32,
    pub games: usize,
    pub playout_games: usize,
    pub resigned_games: usize,
    pub v_resign: f32,
    pub sims: u32,
    pub lr: f64,
    pub window: Vec<u32>,
    pub z_entries: usize,
    pub q_entries: usize,
    pub gates: Vec<GateScore>,
    pub promoted: bool,
    pub metrics: GenerationMetrics,
}

impl GenerationRecord {
    pub fn gate(&self) -> Option<GateScore> {
        self.gates.last().copied()
    }
}

/// Everything needed to resume a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    /// Current champion generation.
    pub champion: u32,
    /// Self-play rounds already started for the current challenger.
    pub round: u32,
    /// Self-play of the current round is archived; training attempts follow.
    pub pending: Option<GenerationRecord>,
    pub v_resign: f32,
    /// Winner minima of recent played-out games, for resignation calibration.
    pub playout_minima: Vec<Option<f32>>,
    pub results: Vec<PairResult>,
    pub history: Vec<GenerationRecord>,
    pub halted: Option<String>,
}

impl RunState {
    fn new() -> Self {
        RunState {
            champion: 0,
            round: 0,
            pending: None,
            v_resign: -1.0,
            playout_minima: Vec::new(),
            results: Vec::new(),
            history: Vec::new(),
            halted: None,
        }
    }
}

pub fn generation_name(g: u32) -> String {
    format!("gen{g}")
}

/// A training run living in one directory:
///
/// - `manifest.txt`: effective configuration, `key = value`
/// - `state.json`: resume state
/// - `checkpoints/gen-NNNN.ozn`: promoted networks, `champion.ozn`: the current one
/// - `archive/gen-NNNN.ozds`: training entries by generation
/// - `games/gen-NNNN.txt`: self-play transcripts with scores
/// - `metrics.jsonl`: one JSON object per event
pub struct Run {
    pub dir: PathBuf,
    pub config: RunConfig,
    pub state: RunState,
    champion: NetParams<f32>,
}

impl Run {
    /// Starts a run with randomly initialised generation-0 weights.
    pub fn create(dir: &Path, config: RunConfig) -> Result<Run, PipelineError> {
        config.validate()?;
        if dir.join("state.json").exists() {
            return Err(PipelineError::State(format!("{} already holds a run", dir.display())));
        }
        fs::create_dir_all(dir.join("checkpoints"))?;
        fs::create_dir_all(dir.join("games"))?;
        let mut manifest = String::from("# effective configuration of this run\n");
        manifest.push_str(&config.to_manifest());
        manifest.push_str("# rng: chacha8(seed), stream = generation << 40 | round << 32 | phase << 24 | index\n");
        manifest.push_str("# phases: selfplay 1, train 2, gate 3, evaluate 4\n");
        fs::write(dir.join("manifest.txt"), manifest)?;
        let params = NetParams::init(config.net, config.seed)?;
        let run = Run { dir: dir.to_path_buf(), config, state: RunState::new(), champion: params };
        let mut ck = Checkpoint::new(run.champion.clone());
        ck.metadata.insert("generation".into(), "0".into());
        ck.save(&run.checkpoint_path(0))?;
        ck.save(&run.dir.join("champion.ozn"))?;
        run.save_state()?;
        Ok(run)
    }

    pub fn open(dir: &Path) -> Result<Run, PipelineError> {
        let config = RunConfig::from_manifest(&fs::read_to_string(dir.join("manifest.txt"))?)?;
        let state: RunState = serde_json::from_str(&fs::read_to_string(dir.join("state.json"))?)
            .map_err(|e| PipelineError::State(e.to_string()))?;
        let champion = Checkpoint::load(&dir.join("champion.ozn"))?.params;
        Ok(Run { dir: dir.to_path_buf(), config, state, champion })
    }

    pub fn checkpoint_path(&self, generation: u32) -> PathBuf {
        checkpoint_path(&self.dir, generation)
    }

    pub fn champion(&self) -> &NetParams<f32> {
        &self.champion
    }

    fn archive_dir(&self) -> PathBuf {
        self.dir.join("archive")
    }

    fn save_state(&self) -> Result<(), PipelineError> {
        let tmp = self.dir.join("state.json.tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(&self.state).expect("state serialises"))?;
        fs::rename(tmp, self.dir.join("state.json"))?;
        Ok(())
    }

    fn log(&self, event: serde_json::Value) -> Result<(), PipelineError> {
        let mut f = OpenOptions::new().create(true).append(true).open(self.dir.join("metrics.jsonl"))?;
        writeln!(f, "{event}")?;
        Ok(())
    }

    /// Clears a halt so the next generation starts a fresh self-play round.
    pub fn resume_after_halt(&mut self) -> Result<(), PipelineError> {
        if self.state.halted.take().is_some() {
            self.save_state()?;
        }
        Ok(())
    }

    /// Runs generations until `promotions` challengers have been promoted in
    /// total (counting earlier sessions of this run).
    pub fn run_until(&mut self, promotions: u32) -> Result<(), PipelineError> {
        while self.state.champion < promotions {
            self.run_generation()?;
        }
        Ok(())
    }

    /// One self-play / train / gate cycle for the next generation.
    pub fn run_generation(&mut self) -> Result<GenerationRecord, PipelineError> {
        if let Some(reason) = &self.state.halted {
            return Err(PipelineError::Halted(reason.clone()));
        }
        let g = self.state.champion + 1;
        let mut record = match self.state.pending.clone() {
            Some(r) => r,
            None => {
                let r = self.self_play(g)?;
                self.state.pending = Some(r.clone());
                self.save_state()?;
                r
            }
        };
        let attempts = self.config.retry_cap + 1;
        while (record.gates.len() as u32) < attempts {
            let attempt = record.gates.len() as u32;
            let (challenger, loss) = self.train(g, record.round, attempt)?;
            let series = self.gate(&challenger, g, record.round, attempt)?;
            let score = GateScore { wins: series.a_wins, draws: series.draws, losses: series.b_wins };
            let promoted = score.points() >= self.config.promotion_points();
            record.gates.push(score);
            record.metrics.attempt_losses.push(loss);
            let name = if promoted { generation_name(g) } else { format!("gen{g}.r{}a{attempt}", record.round) };
            self.state.results.push(PairResult {
                a: name.clone(),
                b: generation_name(g - 1),
                a_points: score.points(),
                games: score.games(),
            });
            self.log(json!({
                "event": "gate", "generation": g, "round": record.round, "attempt": attempt,
                "challenger": name, "wins": score.wins, "draws": score.draws, "losses": score.losses,
                "points": score.points(), "needed": self.config.promotion_points(), "promoted": promoted,
            }))?;
            log::info!("generation {g} attempt {attempt}: gate {}/{}/{} promoted={promoted}", score.wins, score.draws, score.losses);
            if promoted {
                let mut ck = Checkpoint::new(challenger.clone());
                ck.metadata.insert("generation".into(), g.to_string());
                ck.save(&self.checkpoint_path(g))?;
                ck.save(&self.dir.join("champion.ozn"))?;
                self.champion = challenger;
                record.promoted = true;
                self.finish_record(&mut record);
                self.state.champion = g;
                self.state.round = 0;
                self.state.pending = None;
                self.state.history.push(record.clone());
                self.save_state()?;
                self.log(json!({"event": "generation", "record": record}))?;
                return Ok(record);
            }
            self.state.pending = Some(record.clone());
            self.save_state()?;
        }
        self.finish_record(&mut record);
        self.state.history.push(record.clone());
        self.state.pending = None;
        self.state.round += 1;
        let err = PipelineError::RetryCapExceeded { generation: g, attempts };
        self.state.halted = Some(err.to_string());
        self.save_state()?;
        self.log(json!({"event": "generation", "record": record}))?;
        Err(err)
    }

    fn finish_record(&self, record: &mut GenerationRecord) {
        let losses = &record.metrics.attempt_losses;
        record.metrics.mean_loss = if losses.is_empty() { 0.0 } else { losses.iter().sum::<f64>() / losses.len() as f64 };
        let anchor = generation_name(0);
        let ratings = match elo_estimate(&self.state.results, &anchor) {
            Err(MetricsError::Unbounded(_)) => elo_with_prior(&self.state.results, &anchor, 1),
            other => other,
        };
        let name = if record.promoted { generation_name(record.index) } else { generation_name(self.state.champion) };
        record.metrics.elo = ratings.ok().and_then(|r| r.get(&name).copied());
    }

    fn self_play(&mut self, g: u32) -> Result<GenerationRecord, PipelineError> {
        let cfg = &self.config;
        let round = self.state.round;
        let search = cfg.search_config(g);
        let resign = ResignConfig { v_resign: self.state.v_resign, playout_fraction: playout_fraction(g, cfg.generations) };
        log::info!(
            "generation {g} round {round}: self-play {} games, {} sims, v_resign {:.3}",
            cfg.games_per_generation,
            search.simulations,
            resign.v_resign
        );
        let records = self_play_games(&self.champion, cfg, g, round, &search, &resign);

        let playout: Vec<&GameRecord> = records.iter().filter(|r| r.playout).collect();
        self.state.playout_minima.extend(playout.iter().map(|r| winner_minimum(r)));
        let excess = self.state.playout_minima.len().saturating_sub(cfg.calibration_pool);
        self.state.playout_minima.drain(..excess);
        if let Ok(v) = calibrate_from_minima(&self.state.playout_minima, cfg.resign_cap) {
            self.state.v_resign = v;
        }

        let dataset = build_dataset(&records);
        ArchiveWriter::open(&self.archive_dir(), g)?.append(&dataset.entries)?;
        let mut games_txt = String::new();
        for r in &records {
            let score = match (r.outcome, r.resigned) {
                (Some(o), _) => format!("{}-{}", o.black, o.white),
                (None, Some(c)) => format!("resign {c:?}"),
                (None, None) => "unfinished".into(),
            };
            games_txt.push_str(&format!("{} {score}\n", r.transcript));
        }
        let mut f = OpenOptions::new().create(true).append(true).open(self.dir.join(format!("games/gen-{g:04}.txt")))?;
        f.write_all(games_txt.as_bytes())?;

        let available = crate::selfplay::list_generations(&self.archive_dir())?;
        let record = GenerationRecord {
            index: g,
            round,
            games: records.len(),
            playout_games: playout.len(),
            resigned_games: records.iter().filter(|r| r.resigned.is_some()).count(),
            v_resign: resign.v_resign,
            sims: search.simulations,
            lr: cfg.lr.rate(g),
            window: window_generations(&available, g, &cfg.window),
            z_entries: dataset.z_count,
            q_entries: dataset.q_count,
            gates: Vec::new(),
            promoted: false,
            metrics: GenerationMetrics {
                attempt_losses: Vec::new(),
                mean_loss: 0.0,
                elo: None,
                value_drop: drop_stats(&records),
                heatmap: crucial_move_heatmap(&records).unwrap_or_default(),
            },
        };
        self.log(json!({
            "event": "selfplay", "generation": g, "round": round, "games": record.games,
            "playout_games": record.playout_games, "resigned_games": record.resigned_games,
            "v_resign": record.v_resign, "next_v_resign": self.state.v_resign, "sims": record.sims,
            "z_entries": record.z_entries, "q_entries": record.q_entries, "short_supply": dataset.short_supply,
            "value_drop": record.metrics.value_drop, "heatmap": record.metrics.heatmap,
        }))?;
        Ok(record)
    }

    /// Trains a challenger from the champion's weights on a fresh window sample.
    fn train(&self, g: u32, round: u32, attempt: u32) -> Result<(NetParams<f32>, f64), PipelineError> {
        let cfg = &self.config;
        let rng = phase_rng(cfg.seed, g, round, Phase::Train, attempt);
        let batches = sample_training_window(&self.archive_dir(), g, &cfg.window, cfg.sample_size, cfg.minibatch, rng)?;
        let window = batches.window().to_vec();
        let available = crate::selfplay::list_generations(&self.archive_dir())?;
        let previous = window_generations(&available, g - 1, &cfg.window);
        let shift = g > 1 && window.first() != previous.first();
        let lr = cfg.lr.rate(g);
        let mut params = self.champion.clone();
        let mut sgd = Sgd::new(&params, cfg.momentum);
        let (mut total, mut steps, mut chunk, mut chunk_n) = (0.0f64, 0usize, 0.0f64, 0usize);
        log::info!("generation {g} attempt {attempt}: {} steps over window {window:?} at lr {lr}", batches.len());
        for batch in batches {
            let planes: Vec<_> = batch.iter().map(|e| e.planes).collect();
            let targets: Vec<TrainTarget> = batch.into_iter().map(|e| e.target).collect();
            let input = dense_batch::<f32>(&planes);
            let grads = backward(&params, &input, &targets)?;
            grads.stats.apply(&mut params);
            sgd.step(&mut params, &grads.grads, lr);
            let loss = grads.loss as f64;
            total += loss;
            chunk += loss;
            steps += 1;
            chunk_n += 1;
            if chunk_n == cfg.log_every {
                self.log(json!({
                    "event": "train", "generation": g, "round": round, "attempt": attempt, "step": steps,
                    "loss": chunk / chunk_n as f64, "lr": lr, "window": window, "window_shift": shift,
                }))?;
                chunk = 0.0;
                chunk_n = 0;
            }
        }
        if chunk_n > 0 {
            self.log(json!({
                "event": "train", "generation": g, "round": round, "attempt": attempt, "step": steps,
                "loss": chunk / chunk_n as f64, "lr": lr, "window": window, "window_shift": shift,
            }))?;
        }
        if !params.all_finite() {
            return Err(PipelineError::State(format!("generation {g} attempt {attempt}: training diverged")));
        }
        let mean = if steps == 0 { 0.0 } else { total / steps as f64 };
        self.log(json!({
            "event": "epoch", "generation": g, "round": round, "attempt": attempt, "steps": steps,
            "mean_loss": mean, "window": window, "window_shift": shift,
        }))?;
        Ok((params, mean))
    }

    fn gate(&self, challenger: &NetParams<f32>, g: u32, round: u32, attempt: u32) -> Result<SeriesResult, PipelineError> {
        let cfg = &self.config;
        let mut rng = phase_rng(cfg.seed, g, round, Phase::Gate, attempt);
        let openings = paired(&random_openings(cfg.gate_games / 2, cfg.gate_opening_plies, &mut rng));
        let search = cfg.search_config(g);
        let mut a = InternalEngine::new(generation_name(g), Arc::new(challenger.clone()), search.clone(), 0);
        let mut b = InternalEngine::new(generation_name(g - 1), Arc::new(self.champion.clone()), search, 0);
        Ok(play_series(&mut a, &mut b, &openings, cfg.gate_games, None))
    }
}
pub fn checkpoint_path(dir: &Path, generation: u32) -> PathBuf {
    dir.join("checkpoints").join(format!("gen-{generation:04}.ozn"))
}

/// Plays one generation's self-play games, split over `config.workers`
/// threads. Game `i` draws from its own seeded stream, so the result does not
/// depend on the number of workers.
pub fn self_play_games(
    champion: &NetParams<f32>,
    config: &RunConfig,
    g: u32,
    round: u32,
    search: &SearchConfig,
    resign: &ResignConfig,
) -> Vec<GameRecord> {
    let n = config.games_per_generation;
    let play = |i: usize| {
        let mut rng = phase_rng(config.seed, g, round, Phase::SelfPlay, i as u32);
        let opts = GameOptions {
            generation: g,
            playout: resign.draw_playout(&mut rng),
            opening: None,
            harvest_keep: config.harvest_keep,
            noise: true,
        };
        crate::selfplay::play_game(champion, search, resign, &opts, &mut rng)
    };
    let workers = config.workers.clamp(1, n.max(1));
    if workers == 1 {
        return (0..n).map(play).collect();
    }
    let mut out: Vec<(usize, GameRecord)> = std::thread::scope(|s| {
        let handles: Vec<_> =
            (0..workers).map(|w| s.spawn(move || (w..n).step_by(workers).map(|i| (i, play(i))).collect::<Vec<_>>())).collect();
        handles.into_iter().flat_map(|h| h.join().expect("self-play worker")).collect()
    });
    out.sort_by_key(|(i, _)| *i);
    out.into_iter().map(|(_, r)| r).collect()
}

/// Plays `games` fresh-opening games between two checkpoints at equal budget;
/// the first engine alternates colours starting with black.
pub fn evaluate(
    a: (&str, &NetParams<f32>),
    b: (&str, &NetParams<f32>),
    games: usize,
    sims: u32,
    opening_plies: usize,
    seed: u64,
) -> SeriesResult {
    let mut rng = phase_rng(seed, 0, 0, Phase::Evaluate, 0);
    let openings = paired(&random_openings(games.div_ceil(2), opening_plies, &mut rng));
    let search = SearchConfig { temperature_moves: 0, ..SearchConfig::with_simulations(sims) };
    let mut ea = InternalEngine::new(a.0, Arc::new(a.1.clone()), search.clone(), 0);
    let mut eb = InternalEngine::new(b.0, Arc::new(b.1.clone()), search, 0);
    play_series(&mut ea, &mut eb, &openings, games, None)
}
