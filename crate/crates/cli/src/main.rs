//! `ozero`: operator entry points for training, play and verification.

use std::fs;
use std::io::{self, BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use othello_zero::arena::{
    draw_openings, play_series, random_openings, serve as engine_serve, Engine, ExternalEngine, InternalEngine, RandomEngine,
};
use othello_zero::board::{load_xot, parse_transcript, perft, reference, Position, ScoredTranscript, Transcript};
use othello_zero::net::{Checkpoint, NetParams};
use othello_zero::pipeline::{checkpoint_path, evaluate, export_metrics, self_play_games, PipelineError, Run, RunConfig};
use othello_zero::search::{SearchConfig, UniformOracle};
use othello_zero::selfplay::{build_dataset, ArchiveWriter, ResignConfig};
use othello_zero_server::{AppState, EngineEntry};

#[derive(Parser)]
#[command(name = "ozero", version, about = "Self-play reinforcement learning for Othello")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    Desk,
    Paper,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Starting profile; `--desk-scale` is shorthand for `--profile desk`.
    #[arg(long, value_enum, default_value = "desk")]
    profile: Profile,
    #[arg(long)]
    desk_scale: bool,
    /// Manifest file (`key = value` lines) applied on top of the profile.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Single overrides, `key=value`, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
}

impl ConfigArgs {
    fn build(&self) -> Result<RunConfig, String> {
        let mut cfg = match (self.profile, self.desk_scale) {
            (_, true) | (Profile::Desk, _) => RunConfig::desk(),
            (Profile::Paper, false) => RunConfig::paper(),
        };
        if let Some(path) = &self.manifest {
            let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
                let (k, v) = line.split_once('=').ok_or(format!("manifest line {line:?}: expected key = value"))?;
                cfg.set(k.trim(), v.trim()).map_err(|e| e.to_string())?;
            }
        }
        for o in &self.overrides {
            let (k, v) = o.split_once('=').ok_or(format!("--set {o}: expected key=value"))?;
            cfg.set(k.trim(), v.trim()).map_err(|e| e.to_string())?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Create a run directory with generation-0 weights and the manifest.
    Init {
        #[arg(long)]
        run: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run the generation loop until the given number of promotions.
    Train {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 3)]
        promotions: u32,
        /// Clear a retry-cap halt and continue with a fresh self-play round.
        #[arg(long)]
        resume: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Play self-play games with one checkpoint and archive the training entries.
    Selfplay {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        games: usize,
        #[arg(long, default_value_t = 64)]
        sims: u32,
        #[arg(long, default_value_t = 1)]
        generation: u32,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Gate a challenger against a champion.
    Gate {
        #[arg(long)]
        challenger: PathBuf,
        #[arg(long)]
        champion: PathBuf,
        #[arg(long, default_value_t = 40)]
        games: usize,
        #[arg(long, default_value_t = 64)]
        sims: u32,
        #[arg(long, default_value_t = 0.55)]
        threshold: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Play a series between two engines.
    Arena {
        /// Engine: checkpoint path, `random`, `uniform`, or `cmd:PROGRAM [ARGS]`.
        #[arg(long)]
        a: String,
        #[arg(long)]
        b: String,
        #[arg(long, default_value_t = 20)]
        games: usize,
        #[arg(long, default_value_t = 400)]
        sims: u32,
        /// XOT opening list; random 8-move openings otherwise.
        #[arg(long)]
        xot: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, default_value_t = 60)]
        timeout_secs: u64,
    },
    /// Final champion against another generation of a run, fresh openings.
    Evaluate {
        #[arg(long)]
        run: PathBuf,
        /// Generation to test; the current champion by default.
        #[arg(long)]
        a: Option<u32>,
        #[arg(long, default_value_t = 0)]
        b: u32,
        #[arg(long, default_value_t = 40)]
        games: usize,
        #[arg(long, default_value_t = 64)]
        sims: u32,
        #[arg(long, default_value_t = 4)]
        opening_plies: usize,
        #[arg(long, default_value_t = 20_240)]
        seed: u64,
    },
    /// Speak the engine line protocol on stdin/stdout.
    Engine {
        /// Checkpoint; a uniform-prior searcher without one.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 400)]
        sims: u32,
    },
    /// Verify game records (`transcript [score [first-listed colour]]` per line).
    Replay {
        #[arg(long)]
        file: PathBuf,
    },
    /// Count leaf positions and compare with the naive reference generator.
    Perft {
        #[arg(long)]
        depth: u32,
        /// Start from the position after this transcript.
        #[arg(long)]
        transcript: Option<String>,
        #[arg(long)]
        no_oracle: bool,
    },
    /// Serve the HTTP/JSON play API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// Engine as `NAME=CHECKPOINT`; repeatable, the first is the default.
        #[arg(long = "engine", value_name = "NAME=PATH")]
        engines: Vec<String>,
        /// Offer the current champion of this run as `champion`.
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Write plot-ready CSV files from a run's metrics log.
    ExportMetrics {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn load_params(path: &Path) -> Result<NetParams<f32>, String> {
    Checkpoint::load(path).map(|c| c.params).map_err(|e| format!("{}: {e}", path.display()))
}

fn engine_from_spec(spec: &str, sims: u32, timeout: Duration) -> Result<Box<dyn Engine>, String> {
    let search = SearchConfig { temperature_moves: 0, ..SearchConfig::with_simulations(sims) };
    if let Some(cmd) = spec.strip_prefix("cmd:") {
        let mut parts = cmd.split_whitespace();
        let program = parts.next().ok_or("empty engine command")?;
        let args: Vec<String> = parts.map(String::from).collect();
        return Ok(Box::new(ExternalEngine::spawn(program, &args, timeout).map_err(|e| e.to_string())?));
    }
    Ok(match spec {
        "random" => Box::new(RandomEngine::new(0)),
        "uniform" => Box::new(InternalEngine::new("uniform", Arc::new(UniformOracle), search, 0)),
        path => {
            let ck = Checkpoint::load(Path::new(path)).map_err(|e| format!("{path}: {e}"))?;
            Box::new(InternalEngine::from_checkpoint(path, &ck, search))
        }
    })
}

fn serve_api(addr: &str, specs: &[String], run: Option<&Path>) -> Result<ExitCode, String> {
    let mut engines = Vec::new();
    if let Some(run) = run {
        let path = run.join("champion.ozn");
        let ck = Checkpoint::load(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        engines.push(EngineEntry::from_checkpoint("champion", &ck));
    }
    for spec in specs {
        let (name, path) = spec.split_once('=').ok_or(format!("--engine {spec}: expected NAME=PATH"))?;
        let ck = Checkpoint::load(Path::new(path)).map_err(|e| format!("{path}: {e}"))?;
        engines.push(EngineEntry::from_checkpoint(name, &ck));
    }
    engines.push(EngineEntry::uniform());
    let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    runtime.block_on(othello_zero_server::serve(addr, AppState::new(engines))).map_err(|e| e.to_string())?;
    Ok(ExitCode::SUCCESS)
}

fn dispatch(cmd: Cmd) -> Result<ExitCode, String> {
    match cmd {
        Cmd::Serve { addr, engines, run } => serve_api(&addr, &engines, run.as_deref()),
        Cmd::Init { run, config } => {
            let cfg = config.build()?;
            Run::create(&run, cfg).map_err(|e| e.to_string())?;
            println!("created run in {}", run.display());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Train { run, promotions, resume, config } => {
            let mut r = if run.join("state.json").exists() {
                Run::open(&run).map_err(|e| e.to_string())?
            } else {
                Run::create(&run, config.build()?).map_err(|e| e.to_string())?
            };
            if let Some(w) = config.workers {
                r.config.workers = w;
            }
            if resume {
                r.resume_after_halt().map_err(|e| e.to_string())?;
            }
            let start = Instant::now();
            while r.state.champion < promotions {
                match r.run_generation() {
                    Ok(rec) => println!(
                        "generation {} promoted: gate {}/{}/{} loss {:.4} elo {:.1} ({:.0}s elapsed)",
                        rec.index,
                        rec.gate().map_or(0, |g| g.wins),
                        rec.gate().map_or(0, |g| g.draws),
                        rec.gate().map_or(0, |g| g.losses),
                        rec.metrics.mean_loss,
                        rec.metrics.elo.unwrap_or(f64::NAN),
                        start.elapsed().as_secs_f64()
                    ),
                    Err(e @ PipelineError::RetryCapExceeded { .. }) | Err(e @ PipelineError::Halted(_)) => {
                        eprintln!("halted: {e}");
                        return Ok(ExitCode::from(3));
                    }
                    Err(e) => return Err(e.to_string()),
                }
            }
            println!("champion is generation {}", r.state.champion);
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Selfplay { checkpoint, games, sims, generation, out, config } => {
            let mut cfg = config.build()?;
            cfg.games_per_generation = games;
            let params = load_params(&checkpoint)?;
            let search = SearchConfig { simulations: sims, ..cfg.search_config(generation) };
            let records = self_play_games(&params, &cfg, generation, 0, &search, &ResignConfig::default());
            let ds = build_dataset(&records);
            ArchiveWriter::open(&out, generation).and_then(|mut w| w.append(&ds.entries)).map_err(|e| e.to_string())?;
            for r in &records {
                let o = r.outcome.expect("resignation is disabled");
                println!("{} {}-{}", r.transcript, o.black, o.white);
            }
            println!("{} games, {} z entries, {} q entries", records.len(), ds.z_count, ds.q_count);
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Gate { challenger, champion, games, sims, threshold, seed } => {
            let a = load_params(&challenger)?;
            let b = load_params(&champion)?;
            let series = evaluate(("challenger", &a), ("champion", &b), games, sims, 4, seed);
            let needed = (threshold * games as f64 * 2.0).ceil() / 2.0;
            let promote = series.a_points() >= needed;
            println!(
                "challenger {}/{}/{} = {} points of {games}, need {needed}: {}",
                series.a_wins,
                series.draws,
                series.b_wins,
                series.a_points(),
                if promote { "promote" } else { "reject" }
            );
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Arena { a, b, games, sims, xot, seed, csv, timeout_secs } => {
            let timeout = Duration::from_secs(timeout_secs);
            let mut ea = engine_from_spec(&a, sims, timeout)?;
            let mut eb = engine_from_spec(&b, sims, timeout)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pool = match xot {
                Some(path) => {
                    let f = fs::File::open(&path).map_err(|e| format!("{}: {e}", path.display()))?;
                    load_xot(BufReader::new(f)).map_err(|e| e.to_string())?
                }
                None => random_openings(games, 8, &mut rng),
            };
            let openings = draw_openings(&pool, games, &mut rng);
            let series = play_series(ea.as_mut(), eb.as_mut(), &openings, games, Some(sims));
            series.verify()?;
            for g in &series.games {
                if let Some(f) = &g.game.forfeit {
                    println!("game {}: {:?} forfeits ({})", g.index, f.loser, f.reason);
                }
            }
            println!("{} vs {}: {}/{}/{} ({:.1}%)", series.a, series.b, series.a_wins, series.draws, series.b_wins, 100.0 * series.a_score());
            if let Some(path) = csv {
                fs::write(&path, series.to_csv()).map_err(|e| format!("{}: {e}", path.display()))?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Evaluate { run, a, b, games, sims, opening_plies, seed } => {
            let r = Run::open(&run).map_err(|e| e.to_string())?;
            let a = a.unwrap_or(r.state.champion);
            let pa = load_params(&checkpoint_path(&run, a))?;
            let pb = load_params(&checkpoint_path(&run, b))?;
            let (na, nb) = (format!("gen{a}"), format!("gen{b}"));
            let series = evaluate((&na, &pa), (&nb, &pb), games, sims, opening_plies, seed);
            println!(
                "{na} vs {nb}: {}/{}/{} = {:.1}% over {games} games at {sims} simulations",
                series.a_wins,
                series.draws,
                series.b_wins,
                100.0 * series.a_score()
            );
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Engine { checkpoint, sims } => {
            let search = SearchConfig { temperature_moves: 0, ..SearchConfig::with_simulations(sims) };
            let mut engine = match checkpoint {
                Some(path) => {
                    let ck = Checkpoint::load(&path).map_err(|e| format!("{}: {e}", path.display()))?;
                    InternalEngine::from_checkpoint("ozero", &ck, search)
                }
                None => InternalEngine::new("ozero-uniform", Arc::new(UniformOracle), search, 0),
            };
            let stdin = io::stdin();
            engine_serve(&mut engine, stdin.lock(), io::stdout().lock()).map_err(|e| e.to_string())?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Replay { file } => {
            let f = fs::File::open(&file).map_err(|e| format!("{}: {e}", file.display()))?;
            let mut failures = 0;
            for (i, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(|e| e.to_string())?;
                match ScoredTranscript::parse_line(&line) {
                    Ok(None) => {}
                    Ok(Some(rec)) => match rec.verify() {
                        Ok(o) => {
                            let (b, w) = o.score();
                            println!("line {}: ok {b}-{w} (black-white, discs {}-{})", i + 1, o.black, o.white);
                        }
                        Err(e) => {
                            failures += 1;
                            println!("line {}: FAIL {e}", i + 1);
                        }
                    },
                    Err(e) => {
                        failures += 1;
                        println!("line {}: FAIL {e}", i + 1);
                    }
                }
            }
            Ok(if failures == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Cmd::Perft { depth, transcript, no_oracle } => {
            let pos = match transcript {
                Some(t) => parse_transcript(&t).and_then(|t: Transcript| t.replay()).map_err(|e| e.to_string())?,
                None => Position::initial(),
            };
            let t = Instant::now();
            let fast = perft(&pos, depth);
            println!("perft {depth}: {fast} ({:.3}s)", t.elapsed().as_secs_f64());
            if !no_oracle {
                let t = Instant::now();
                let slow = reference::perft(&pos, depth);
                println!("reference {depth}: {slow} ({:.3}s)", t.elapsed().as_secs_f64());
                if slow != fast {
                    println!("MISMATCH");
                    return Ok(ExitCode::FAILURE);
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::ExportMetrics { run, out } => {
            for p in export_metrics(&run, &out).map_err(|e| e.to_string())? {
                println!("{}", p.display());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
