use othello_zero::board::reference::{self, Grid};
use othello_zero::board::{
    encode_planes, parse_transcript, perft, replay, Color, Move, Position, ScoredTranscript, Transcript,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TABLE1: &str = include_str!("../../../data/table1.txt");

fn table1() -> Vec<ScoredTranscript> {
    TABLE1.lines().filter_map(|l| ScoredTranscript::parse_line(l).unwrap()).collect()
}

#[test]
fn table1_games_reproduce_scores() {
    let games = table1();
    assert_eq!(games.len(), 12);
    for (i, game) in games.iter().enumerate() {
        game.verify().unwrap_or_else(|e| panic!("game {}: {e}", i + 1));
    }
}

#[test]
fn table1_game_nine_is_white_win() {
    let game = &table1()[8];
    let outcome = game.verify().unwrap();
    assert_eq!((outcome.black, outcome.white), (19, 45));
    assert_eq!(outcome.z(Color::White), 1);
}

#[test]
fn table1_first_game_forced_pass() {
    let prefix = "C4E3F6E6F5C5C3C6D3D2E2B3B4C2B6A4B5D6A3A5A6F3F4G4F7D1F1D7E1C1B1G6C7E7F8D8H6F2G1G5C8B8G7B7E8G2A8A7H1G3H2H3H4B2A2A1";
    let p = replay(&parse_transcript(prefix).unwrap()).unwrap();
    assert_eq!(p.legal_moves().to_vec(), vec![Move::PASS]);
    assert!(!p.is_terminal());
}

#[test]
fn table1_contains_passes() {
    let t = &table1()[0].transcript;
    assert_eq!(t.moves().iter().filter(|m| m.is_pass()).count(), 2);
}

#[test]
fn perft_matches_reference_from_start() {
    let p = Position::initial();
    for depth in 0..=6 {
        assert_eq!(perft(&p, depth), reference::perft(&p, depth), "depth {depth}");
    }
}

fn random_game(seed: u64, plies: usize) -> Vec<Position> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Position::initial();
    let mut out = vec![p];
    for _ in 0..plies {
        let moves = p.legal_moves();
        if moves.is_empty() {
            break;
        }
        p = p.apply_move(moves[rng.random_range(0..moves.len())]).unwrap();
        out.push(p);
    }
    out
}

#[test]
fn perft_matches_reference_mid_game() {
    for seed in 0..5 {
        let p = *random_game(seed, 30).last().unwrap();
        for depth in 1..=4 {
            assert_eq!(perft(&p, depth), reference::perft(&p, depth), "seed {seed} depth {depth}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_games_agree_with_reference(seed in any::<u64>()) {
        let game = random_game(seed, 70);
        for w in game.windows(2) {
            let (before, after) = (w[0], w[1]);
            prop_assert_eq!(before.black() & before.white(), 0);
            let grid = Grid::from_position(&before);
            let ref_moves: Vec<Move> = grid.moves().into_iter().map(|sq| Move::square(sq as u8)).collect();
            let moves = before.legal_moves().to_vec();
            if ref_moves.is_empty() {
                prop_assert_eq!(moves.clone(), vec![Move::PASS]);
            } else {
                prop_assert_eq!(moves.clone(), ref_moves);
            }
            // find the move that was played and check the resulting discs
            let played = moves.iter().copied().find(|&m| before.apply_move(m).unwrap() == after).unwrap();
            match played.to_square() {
                None => {
                    prop_assert_eq!(after.disc_count(), before.disc_count());
                    prop_assert_eq!(after.black(), before.black());
                }
                Some(sq) => {
                    let flips = grid.flips(sq as usize);
                    prop_assert!(!flips.is_empty());
                    prop_assert_eq!(after.disc_count(), before.disc_count() + 1);
                    prop_assert_eq!(after, grid.play(sq as usize).to_position(after.to_move()));
                }
            }
        }
        let last = game.last().unwrap();
        if game.len() < 71 {
            prop_assert!(last.is_terminal());
        }
    }

    #[test]
    fn transcript_text_roundtrip(seed in any::<u64>(), plies in 0usize..70) {
        let game = random_game(seed, plies);
        let mut t = Transcript::new();
        for w in game.windows(2) {
            let m = w[0].legal_moves().iter().copied().find(|&m| w[0].apply_move(m).unwrap() == w[1]).unwrap();
            t.push(m);
        }
        let text = t.to_string();
        prop_assert_eq!(parse_transcript(&text).unwrap(), t.clone());
        prop_assert_eq!(parse_transcript(&text.to_lowercase()).unwrap(), t.clone());
        prop_assert_eq!(replay(&t).unwrap(), *game.last().unwrap());
    }

    #[test]
    fn encoding_ignores_color_of_mover(seed in any::<u64>(), plies in 0usize..60) {
        let p = *random_game(seed, plies).last().unwrap();
        let a: Vec<f32> = encode_planes(&p).to_dense();
        let b: Vec<f32> = encode_planes(&p.swap_colors()).to_dense();
        prop_assert_eq!(a.clone(), b);
        prop_assert_eq!(a.iter().sum::<f32>() as u32, p.disc_count());
    }
}
