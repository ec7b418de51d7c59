//! One PASS/FAIL line per acceptance criterion; exits non-zero if any fails.
//!
//! Run with `cargo test --release -p othello-zero --test acceptance`.

use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use othello_zero::arena::{serve, Engine, EngineError, EngineMove};
use othello_zero::board::{encode_planes, perft, reference, Position, ScoredTranscript, Transcript, POLICY_SIZE};
use othello_zero::net::{backward, batch_loss, dense_batch, Checkpoint, LabelKind, NetConfig, NetParams, TrainTarget};
use othello_zero::pipeline::{checkpoint_path, elo_estimate, evaluate, PairResult, Run};
use othello_zero::search::{search, SearchConfig, UniformOracle};
use othello_zero::selfplay::{
    build_dataset, calibrate_resign, false_resign_rate, play_game, GameOptions, ResignConfig,
};

const TABLE1: &str = include_str!("../../../data/table1.txt");
const PROTOCOL_SCRIPT: &str = include_str!("fixtures/protocol-script.txt");
const PRINTED_SCORES: [(u8, u8); 12] =
    [(32, 32), (32, 32), (43, 21), (36, 28), (33, 31), (27, 37), (40, 24), (27, 37), (45, 19), (35, 29), (35, 29), (47, 17)];

/// Known-good perft counts from the initial position, depths 1 to 8.
const START_PERFT: [u64; 8] = [4, 12, 56, 244, 1396, 8200, 55092, 390216];

const REPLAY_BUDGET: Duration = Duration::from_secs(1);
const PERFT_BUDGET: Duration = Duration::from_secs(60);
const GRADIENT_BUDGET: Duration = Duration::from_secs(60);
const GRADIENT_TOL: f64 = 1e-4;
const LOSS_TOL: f64 = 1e-6;
const PI_TOL: f32 = 1e-6;
const FALSE_RESIGN_LIMIT: f64 = 0.05;
const E2E_RUN: &str = "runs/desk-e2e";
const E2E_PROMOTIONS: u32 = 3;
const E2E_GAMES: usize = 40;
const E2E_SIMS: u32 = 64;
const E2E_OPENING_PLIES: usize = 4;
const E2E_SEED: u64 = 20_240;
const E2E_TARGET: f64 = 0.60;
const ELO_GAP_TARGET: f64 = 191.0;
const ELO_GAP_TOL: f64 = 1.0;

type Outcome = Result<String, String>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn timed(budget: Duration, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let detail = f()?;
    let took = start.elapsed();
    if took > budget {
        return Err(format!("{detail}; took {:.2}s, budget {:.0}s", took.as_secs_f64(), budget.as_secs_f64()));
    }
    Ok(format!("{detail} in {:.2}s", took.as_secs_f64()))
}

fn transcript_fidelity() -> Outcome {
    timed(REPLAY_BUDGET, || {
        let games: Vec<ScoredTranscript> = TABLE1.lines().filter_map(|l| ScoredTranscript::parse_line(l).unwrap()).collect();
        if games.len() != 12 {
            return Err(format!("expected 12 games, found {}", games.len()));
        }
        for (i, (g, printed)) in games.iter().zip(PRINTED_SCORES).enumerate() {
            let outcome = g.verify().map_err(|e| format!("game {}: {e}", i + 1))?;
            let (b, w) = outcome.score();
            let listed = if g.listed_first == othello_zero::board::Color::Black { (b, w) } else { (w, b) };
            if listed != printed {
                return Err(format!("game {}: {}-{} but printed {}-{}", i + 1, listed.0, listed.1, printed.0, printed.1));
            }
        }
        Ok("12/12 games replay to the printed scores".into())
    })
}

fn mid_game_position(seed: u64) -> Position {
    let mut r = rng(seed);
    let target = r.random_range(40..=48);
    loop {
        let mut p = Position::initial();
        let mut ok = true;
        for _ in 0..target {
            let moves = p.legal_moves();
            p = p.play_unchecked(moves[r.random_range(0..moves.len())]);
            if p.is_terminal() {
                ok = false;
                break;
            }
        }
        if ok {
            return p;
        }
    }
}

fn rules_oracle() -> Outcome {
    timed(PERFT_BUDGET, || {
        let start = Position::initial();
        for depth in 1..=8u32 {
            let (fast, naive) = (perft(&start, depth), reference::perft(&start, depth));
            let known = START_PERFT[depth as usize - 1];
            if fast != naive || fast != known {
                return Err(format!("start depth {depth}: bitboard {fast}, naive {naive}, known {known}"));
            }
        }
        for seed in 0..20 {
            let p = mid_game_position(seed);
            for depth in 1..=8u32 {
                let (fast, naive) = (perft(&p, depth), reference::perft(&p, depth));
                if fast != naive {
                    return Err(format!("mid-game {seed} depth {depth}: bitboard {fast}, naive {naive}"));
                }
            }
        }
        Ok("depths 1..=8 agree from the start (depth 1 = 4) and 20 positions at plies 40..=48".into())
    })
}

fn training_batch(seed: u64, n: usize) -> (Vec<othello_zero::board::Planes>, Vec<TrainTarget>) {
    let mut r = rng(seed);
    let mut planes = Vec::new();
    let mut targets = Vec::new();
    while planes.len() < n {
        let mut p = Position::initial();
        for _ in 0..r.random_range(0..40) {
            let moves = p.legal_moves();
            p = p.play_unchecked(moves[r.random_range(0..moves.len())]);
            if p.is_terminal() {
                break;
            }
        }
        if p.is_terminal() {
            continue;
        }
        let moves = p.legal_moves();
        let mut pi = vec![0.0f32; POLICY_SIZE];
        for m in moves.iter() {
            pi[m.index()] = 1.0 / moves.len() as f32;
        }
        planes.push(encode_planes(&p));
        targets.push(TrainTarget { pi, omega: r.random_range(-1.0..1.0), label_kind: LabelKind::Z });
    }
    (planes, targets)
}

fn gradient_correctness() -> Outcome {
    timed(GRADIENT_BUDGET, || {
        const STEP: f64 = 1e-5;
        let cfg = NetConfig { residual_blocks: 1, filters: 4, value_hidden: 8, l2: 1e-4 };
        let mut params = NetParams::<f64>::init(cfg, 5).map_err(|e| e.to_string())?;
        let (planes, targets) = training_batch(9, 6);
        let input = dense_batch::<f64>(&planes);
        let grads = backward(&params, &input, &targets).map_err(|e| e.to_string())?.grads;
        let analytic: Vec<f64> =
            grads.tensors().into_iter().filter(|t| t.kind.trainable()).flat_map(|t| t.data.to_vec()).collect();
        let mut r = rng(77);
        let mut worst = 0.0f64;
        for _ in 0..50 {
            let idx = r.random_range(0..analytic.len());
            let set = |params: &mut NetParams<f64>, delta: Option<f64>| -> f64 {
                let mut k = idx;
                for t in params.tensors_mut() {
                    if !t.kind.trainable() {
                        continue;
                    }
                    if k < t.data.len() {
                        let old = t.data[k];
                        if let Some(d) = delta {
                            t.data[k] = d;
                        }
                        return old;
                    }
                    k -= t.data.len();
                }
                unreachable!()
            };
            let x = set(&mut params, None);
            set(&mut params, Some(x + STEP));
            let up = batch_loss(&params, &input, &targets).map_err(|e| e.to_string())?;
            set(&mut params, Some(x - STEP));
            let down = batch_loss(&params, &input, &targets).map_err(|e| e.to_string())?;
            set(&mut params, Some(x));
            let numeric = (up - down) / (2.0 * STEP);
            let a = analytic[idx];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
        }
        if worst < GRADIENT_TOL {
            Ok(format!("max relative error {worst:.2e} over 50 coordinates (< {GRADIENT_TOL:e})"))
        } else {
            Err(format!("max relative error {worst:.2e} >= {GRADIENT_TOL:e}"))
        }
    })
}

fn loss_anchor() -> Outcome {
    let cfg = NetConfig { residual_blocks: 1, filters: 4, value_hidden: 8, l2: 0.0 };
    let params = NetParams::<f64>::init_zero_logit(cfg, 1).map_err(|e| e.to_string())?;
    let mut pi = vec![0.0f32; POLICY_SIZE];
    pi[19] = 1.0;
    let target = TrainTarget { pi, omega: 1.0, label_kind: LabelKind::Z };
    let input = dense_batch::<f64>(&[encode_planes(&Position::initial())]);
    let loss = batch_loss(&params, &input, &[target]).map_err(|e| e.to_string())?;
    let expected = 1.0 + 65f64.ln();
    let err = (loss - expected).abs();
    if err < LOSS_TOL {
        Ok(format!("loss {loss:.9} vs 1 + ln 65 = {expected:.9}, |diff| {err:.1e}"))
    } else {
        Err(format!("loss {loss} vs {expected}, |diff| {err:e}"))
    }
}

fn mcts_accounting() -> Outcome {
    let mut checked = 0;
    for seed in 0..4u64 {
        let p = mid_game_position(seed);
        for (leaves, threads) in [(1, 1), (8, 2)] {
            for sims in [1u32, 50, 400] {
                let cfg = SearchConfig { simulations: sims, parallel_leaves: leaves, threads, ..SearchConfig::default() };
                let r = search(&p, &UniformOracle, &cfg, true, &mut rng(seed)).map_err(|e| e.to_string())?;
                let total: u32 = r.visits.iter().map(|v| v.1).sum();
                if total != sims {
                    return Err(format!("root visits {total} for budget {sims} (leaves {leaves})"));
                }
                let mass: f32 = r.pi.iter().sum();
                if (mass - 1.0).abs() > PI_TOL {
                    return Err(format!("pi sums to {mass}"));
                }
                checked += 1;
            }
        }
    }
    // three empties; every line ends 32-32, so the tree is exhaustible and
    // values cannot break ties differently between the two schedules
    let draw = Position::from_masks(0xe54a90bcaf0c6002, 0x1ab46f4350f31ff9, othello_zero::board::Color::Black)
        .map_err(|e| e.to_string())?;
    for sims in [10u32, 200, 1000] {
        let seq = search(&draw, &UniformOracle, &SearchConfig::with_simulations(sims), false, &mut rng(0)).map_err(|e| e.to_string())?;
        let cfg = SearchConfig { simulations: sims, parallel_leaves: 8, threads: 4, ..SearchConfig::default() };
        let par = search(&draw, &UniformOracle, &cfg, false, &mut rng(0)).map_err(|e| e.to_string())?;
        if par.pi != seq.pi {
            return Err(format!("toy tree at {sims} sims: sequential and virtual-loss pi differ"));
        }
    }
    Ok(format!("{checked} searches sum to budget with pi normalised; toy-tree pi identical at 10/200/1000 sims"))
}

fn self_play(n: usize, sims: u32, seed: u64) -> Vec<othello_zero::selfplay::GameRecord> {
    let mut r = rng(seed);
    let opts = GameOptions { generation: 1, playout: true, ..GameOptions::default() };
    let search = SearchConfig::with_simulations(sims);
    (0..n).map(|_| play_game(&UniformOracle, &search, &ResignConfig::default(), &opts, &mut r)).collect()
}

fn dataset_doubling() -> Outcome {
    let records = self_play(12, 48, 7);
    let ds = build_dataset(&records);
    let played: usize = records.iter().map(|r| r.moves.len()).sum();
    if ds.short_supply {
        return Err("harvest supply ran short".into());
    }
    if ds.z_count != played || ds.q_count != ds.z_count || ds.entries.len() != 2 * played {
        return Err(format!("z {} q {} entries {} for {played} positions", ds.z_count, ds.q_count, ds.entries.len()));
    }
    Ok(format!("{played} positions give {} z-labelled and {} q-labelled entries", ds.z_count, ds.q_count))
}

fn resignation_calibration() -> Outcome {
    let games = self_play(100, 32, 31);
    let v = calibrate_resign(&games, -0.8).map_err(|e| e.to_string())?;
    let rate = false_resign_rate(&games, v);
    if rate < FALSE_RESIGN_LIMIT {
        Ok(format!("v_resign {v:.3} over {} played-out games, false-resignation rate {:.1}%", games.len(), 100.0 * rate))
    } else {
        Err(format!("v_resign {v:.3}: false-resignation rate {:.1}%", 100.0 * rate))
    }
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn end_to_end() -> Outcome {
    let dir = workspace_root().join(E2E_RUN);
    let run = Run::open(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    if run.config.profile != "desk" || run.config.net.residual_blocks != 2 || run.config.net.filters != 32 {
        return Err(format!("{E2E_RUN} is not a desk-profile run"));
    }
    let champion = run.state.champion;
    if champion < E2E_PROMOTIONS {
        return Err(format!("{E2E_RUN} has {champion} promotions, need {E2E_PROMOTIONS}"));
    }
    let load = |g| Checkpoint::load(&checkpoint_path(&dir, g)).map(|c| c.params).map_err(|e| e.to_string());
    let (final_net, first) = (load(E2E_PROMOTIONS)?, load(0)?);
    let series = evaluate(("gen3", &final_net), ("gen0", &first), E2E_GAMES, E2E_SIMS, E2E_OPENING_PLIES, E2E_SEED);
    series.verify()?;
    let score = series.a_score();
    let detail = format!(
        "gen3 vs gen0 {}/{}/{} = {:.1}% over {E2E_GAMES} games at {E2E_SIMS} sims, fresh {E2E_OPENING_PLIES}-ply openings (target {:.0}%)",
        series.a_wins,
        series.draws,
        series.b_wins,
        100.0 * score,
        100.0 * E2E_TARGET
    );
    if score >= E2E_TARGET { Ok(detail) } else { Err(detail) }
}

fn elo_sanity() -> Outcome {
    let pair = |a: &str, b: &str, pts: f64| PairResult { a: a.into(), b: b.into(), a_points: pts, games: 40 };
    let even = elo_estimate(&[pair("gen0", "gen1", 20.0)], "gen0").map_err(|e| e.to_string())?;
    if even["gen1"].abs() > 1e-6 {
        return Err(format!("20-20 gives {:.3}", even["gen1"]));
    }
    let lop = elo_estimate(&[pair("gen1", "gen0", 30.0)], "gen0").map_err(|e| e.to_string())?;
    let gap = lop["gen1"];
    let inversion = 400.0 * (0.75f64 / 0.25).log10();
    if (gap - ELO_GAP_TARGET).abs() > ELO_GAP_TOL || (gap - inversion).abs() > 1e-3 {
        return Err(format!("30-10 gap {gap:.3}, expected-score inversion {inversion:.3}"));
    }
    Ok(format!("20-20 gap 0.000, 30-10 gap {gap:.2} (inversion {inversion:.2}, target {ELO_GAP_TARGET} ± {ELO_GAP_TOL})"))
}

/// Lowest-index legal square with a fixed root value of 0.25.
struct FirstLegal;

impl Engine for FirstLegal {
    fn identity(&self) -> String {
        "first-legal".into()
    }

    fn new_game(&mut self) -> Result<(), EngineError> {
        Ok(())
    }

    fn play(&mut self, _: &Transcript, p: &Position, _: Option<u32>) -> Result<EngineMove, EngineError> {
        let mv = p.legal_moves().iter().copied().min_by_key(|m| m.index()).expect("non-terminal");
        Ok(EngineMove { mv, value: Some(0.25), nodes: 0 })
    }
}

fn engine_protocol() -> Outcome {
    let (mut input, mut expected) = (String::new(), String::new());
    for line in PROTOCOL_SCRIPT.lines() {
        if let Some(cmd) = line.strip_prefix('>') {
            input.push_str(cmd.strip_prefix(' ').unwrap_or(cmd));
            input.push('\n');
        } else if let Some(reply) = line.strip_prefix("< ") {
            expected.push_str(reply);
            expected.push('\n');
        }
    }
    let mut out = Vec::new();
    serve(&mut FirstLegal, Cursor::new(input), &mut out).map_err(|e| e.to_string())?;
    let got = String::from_utf8(out).map_err(|e| e.to_string())?;
    for (i, (g, e)) in got.lines().zip(expected.lines()).enumerate() {
        if g != e {
            return Err(format!("reply {}: got {g:?}, expected {e:?}", i + 1));
        }
    }
    if got != expected {
        return Err(format!("{} replies, expected {}", got.lines().count(), expected.lines().count()));
    }
    Ok(format!("{} scripted exchanges match byte for byte", expected.lines().count()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("transcript fidelity", transcript_fidelity),
        ("rules oracle", rules_oracle),
        ("gradient correctness", gradient_correctness),
        ("loss anchor", loss_anchor),
        ("mcts accounting", mcts_accounting),
        ("dataset doubling", dataset_doubling),
        ("resignation calibration", resignation_calibration),
        ("end-to-end learning", end_to_end),
        ("elo sanity", elo_sanity),
        ("engine protocol", engine_protocol),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
