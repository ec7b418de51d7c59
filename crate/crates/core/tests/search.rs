use othello_zero::board::{Color, Move, Position, POLICY_SIZE};
use othello_zero::net::{NetConfig, NetParams, Prediction};
use othello_zero::search::{
    harvest_visited, legal_priors, search, select_move, FnOracle, Oracle, SearchConfig, Searcher, UniformOracle,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_position(seed: u64, plies: usize) -> Position {
    let mut r = rng(seed);
    let mut p = Position::initial();
    for _ in 0..plies {
        let moves = p.legal_moves();
        if moves.is_empty() {
            break;
        }
        let next = p.play_unchecked(moves[r.random_range(0..moves.len())]);
        if next.is_terminal() {
            break;
        }
        p = next;
    }
    p
}

/// Exact game value for the side to move.
fn negamax(p: &Position) -> i8 {
    if p.is_terminal() {
        return p.outcome().unwrap().z(p.to_move());
    }
    p.legal_moves().iter().map(|&m| -negamax(&p.play_unchecked(m))).max().unwrap()
}

fn every_leaf_is_a_draw(p: &Position) -> bool {
    if p.is_terminal() {
        return p.outcome().unwrap().z(Color::Black) == 0;
    }
    p.legal_moves().iter().all(|&m| every_leaf_is_a_draw(&p.play_unchecked(m)))
}

/// Pseudo-random but deterministic evaluator with values in [-0.3, 0.7].
fn hashed_oracle() -> FnOracle<impl Fn(&Position) -> Prediction + Sync> {
    FnOracle(|p: &Position| {
        let k = p.key();
        let probs: Vec<f32> = (0..POLICY_SIZE).map(|i| ((k >> (i % 60)) & 0xf) as f32 + 1.0).collect();
        let total: f32 = probs.iter().sum();
        let v = ((k % 1000) as f32 / 999.0) - 0.3;
        Prediction { p: probs.into_iter().map(|x| x / total).collect(), v }
    })
}

#[test]
fn forced_move_gets_all_mass() {
    // first Table 1 game up to the point where white must pass
    let t = "C4E3F6E6F5C5C3C6D3D2E2B3B4C2B6A4B5D6A3A5A6F3F4G4F7D1F1D7E1C1B1G6C7E7F8D8H6F2G1G5C8B8G7B7E8G2A8A7H1G3H2H3H4B2A2A1";
    let p = othello_zero::board::parse_transcript(t).unwrap().replay().unwrap();
    assert_eq!(p.legal_moves().to_vec(), vec![Move::PASS]);
    let r = search(&p, &hashed_oracle(), &SearchConfig::with_simulations(50), true, &mut rng(0)).unwrap();
    assert_eq!(r.pi[Move::PASS.index()], 1.0);
    assert_eq!(r.visits, vec![(Move::PASS, 50)]);
}

#[test]
fn root_visits_sum_to_budget_sequential_and_parallel() {
    let oracle = hashed_oracle();
    for seed in 0..6 {
        let p = random_position(seed, 3 + 9 * seed as usize);
        for (leaves, threads) in [(1, 1), (4, 1), (8, 2), (3, 3)] {
            for sims in [1, 7, 100] {
                let cfg = SearchConfig { simulations: sims, parallel_leaves: leaves, threads, ..Default::default() };
                let r = search(&p, &oracle, &cfg, true, &mut rng(seed)).unwrap();
                assert_eq!(r.visits.iter().map(|v| v.1).sum::<u32>(), sims);
                assert!((r.pi.iter().sum::<f32>() - 1.0).abs() < 1e-6);
                let legal = p.legal_moves();
                for (i, &x) in r.pi.iter().enumerate() {
                    if x > 0.0 {
                        assert!(legal.contains(&Move::from_index(i)));
                    }
                }
            }
        }
    }
}

#[test]
fn visit_conservation_at_every_node() {
    let p = random_position(3, 12);
    for leaves in [1, 8] {
        let cfg = SearchConfig { simulations: 300, parallel_leaves: leaves, ..Default::default() };
        let r = search(&p, &hashed_oracle(), &cfg, false, &mut rng(1)).unwrap();
        assert!(!r.nodes.is_empty());
        for node in &r.nodes {
            assert_eq!(node.n, node.child_visits + 1, "depth {}", node.depth);
        }
    }
}

#[test]
fn finds_the_immediate_win() {
    // Black to move with two empties: C4 ends the game in a black win, A3 loses.
    let p = Position::from_masks(0x245c0cf6baf823c5, 0xdba3f3094106dc3a, Color::Black).unwrap();
    let c4: Move = "C4".parse().unwrap();
    assert_eq!(p.legal_moves().len(), 2);
    let after = p.play_unchecked(c4);
    assert!(after.is_terminal());
    assert_eq!(after.outcome().unwrap().z(Color::Black), 1);
    for &m in p.legal_moves().iter().filter(|&&m| m != c4) {
        assert!(-negamax(&p.play_unchecked(m)) < 1);
    }
    let oracle = NetParams::<f32>::init_zero_logit(NetConfig::desk(), 0).unwrap();
    let r = search(&p, &oracle, &SearchConfig::with_simulations(400), false, &mut rng(0)).unwrap();
    assert!(r.q_root > 0.0);
    assert_eq!(r.best_move(), c4);
}

#[test]
fn prior_scale_does_not_matter() {
    let p = random_position(11, 20);
    let legal = p.legal_moves();
    let base = hashed_oracle();
    let scaled = FnOracle(|q: &Position| {
        let mut pred = base.evaluate(&[*q]).pop().unwrap();
        for (i, x) in pred.p.iter_mut().enumerate() {
            if q.legal_moves().contains(&Move::from_index(i)) {
                *x *= 3.0;
            } else {
                *x = 0.0;
            }
        }
        pred
    });
    let cfg = SearchConfig::with_simulations(200);
    let a = search(&p, &base, &cfg, false, &mut rng(2)).unwrap();
    let b = search(&p, &scaled, &cfg, false, &mut rng(2)).unwrap();
    assert_eq!(a.visits, b.visits);
    assert!(legal.len() > 1);
}

#[test]
fn noise_off_is_reproducible() {
    let p = random_position(5, 15);
    let cfg = SearchConfig { simulations: 150, parallel_leaves: 4, ..Default::default() };
    let a = search(&p, &hashed_oracle(), &cfg, false, &mut rng(9)).unwrap();
    let b = search(&p, &hashed_oracle(), &cfg, false, &mut rng(10)).unwrap();
    assert_eq!(a, b);
    let c = search(&p, &hashed_oracle(), &cfg, true, &mut rng(9)).unwrap();
    let d = search(&p, &hashed_oracle(), &cfg, true, &mut rng(9)).unwrap();
    assert_eq!(c, d);
}

#[test]
fn q_root_within_leaf_value_range() {
    // no terminal position is reachable from an early root at this budget
    let p = random_position(21, 6);
    let r = search(&p, &hashed_oracle(), &SearchConfig::with_simulations(300), true, &mut rng(4)).unwrap();
    assert!(r.max_depth < 40);
    assert!(r.q_root >= -0.7 - 1e-6 && r.q_root <= 0.7 + 1e-6, "q_root {}", r.q_root);
}

#[test]
fn noise_only_at_root() {
    let p = random_position(8, 10);
    let oracle = hashed_oracle();
    let mut s = Searcher::new(SearchConfig::with_simulations(200));
    s.search(&p, &oracle, true, &mut rng(6)).unwrap();
    let clean = legal_priors(&p, &oracle.evaluate(&[p])[0].p);
    let root = s.node_priors(&[]).unwrap();
    assert_ne!(root, clean);
    assert!((root.iter().map(|x| x.1).sum::<f32>() - 1.0).abs() < 1e-5);
    let mut checked = 0;
    for &(m, _) in &clean {
        if let Some(below) = s.node_priors(&[m]) {
            let child = p.play_unchecked(m);
            assert_eq!(below, legal_priors(&child, &oracle.evaluate(&[child])[0].p));
            checked += 1;
        }
    }
    assert!(checked > 0);
}

#[test]
fn parallel_matches_sequential_on_draw_only_tree() {
    // three empties; every line of play ends 32-32
    let p = Position::from_masks(0xe54a90bcaf0c6002, 0x1ab46f4350f31ff9, Color::Black).unwrap();
    assert!(every_leaf_is_a_draw(&p));
    assert!(p.legal_moves().len() > 1);
    for sims in [10, 50, 200, 1000] {
        let seq = search(&p, &UniformOracle, &SearchConfig::with_simulations(sims), false, &mut rng(0)).unwrap();
        for (leaves, threads) in [(2, 1), (4, 2), (8, 4)] {
            let cfg = SearchConfig { simulations: sims, parallel_leaves: leaves, threads, ..Default::default() };
            let par = search(&p, &UniformOracle, &cfg, false, &mut rng(0)).unwrap();
            assert_eq!(par.pi, seq.pi, "sims {sims} leaves {leaves}");
            assert_eq!(par.visits.iter().map(|v| v.1).sum::<u32>(), sims);
        }
    }
}

#[test]
fn select_move_argmax_after_opening_phase() {
    let p = Position::initial();
    let mut r = search(&p, &UniformOracle, &SearchConfig::with_simulations(10), false, &mut rng(0)).unwrap();
    let c4: Move = "C4".parse().unwrap();
    let d3: Move = "D3".parse().unwrap();
    r.visits = vec![(d3, 4), (c4, 6)];
    let cfg = SearchConfig::default();
    for seed in 0..50 {
        assert_eq!(select_move(&r, 21, &cfg, &mut rng(seed)), c4);
    }
    r.visits = vec![(d3, 5), (c4, 5)];
    assert_eq!(select_move(&r, 40, &cfg, &mut rng(0)), d3);
}

#[test]
fn select_move_samples_in_opening_phase() {
    let p = Position::initial();
    let mut r = search(&p, &UniformOracle, &SearchConfig::with_simulations(4), false, &mut rng(0)).unwrap();
    r.visits = p.legal_moves().iter().map(|&m| (m, 10)).collect();
    let cfg = SearchConfig::default();
    let mut counts = std::collections::HashMap::new();
    let mut g = rng(123);
    for _ in 0..10_000 {
        *counts.entry(select_move(&r, 1, &cfg, &mut g)).or_insert(0u32) += 1;
    }
    assert_eq!(counts.len(), 4);
    for (&m, &c) in &counts {
        let share = c as f64 / 10_000.0;
        assert!((share - 0.25).abs() < 0.02, "{m}: {share}");
    }
}

#[test]
fn harvest_thresholds_and_order() {
    let p = random_position(2, 8);
    let r = search(&p, &hashed_oracle(), &SearchConfig::with_simulations(400), false, &mut rng(0)).unwrap();
    assert!(harvest_visited(&r, u32::MAX).is_empty());
    let all = harvest_visited(&r, 1);
    assert_eq!(all.len(), r.nodes.len());
    assert!(all.windows(2).all(|w| w[0].n >= w[1].n));
    assert!(all.iter().all(|s| s.n >= 2 && s.depth >= 1));
    let heavy = harvest_visited(&r, 20);
    assert!(heavy.iter().all(|s| s.n >= 20));
    for s in &all {
        assert!((s.pi.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        assert!(s.q.abs() <= 1.0);
    }
}

#[test]
fn tree_reuse_counts_only_fresh_visits() {
    let oracle = hashed_oracle();
    let cfg = SearchConfig::with_simulations(200);
    let mut s = Searcher::new(cfg.clone());
    let p = Position::initial();
    let first = s.search(&p, &oracle, false, &mut rng(0)).unwrap();
    let mv = first.best_move();
    s.advance(mv);
    let next = p.play_unchecked(mv);
    let second = s.search(&next, &oracle, true, &mut rng(1)).unwrap();
    let fresh: u32 = second.fresh_visits.iter().map(|v| v.1).sum();
    let total: u32 = second.visits.iter().map(|v| v.1).sum();
    assert_eq!(fresh, 200);
    assert!(total > 200);
    // inherited nodes were expanded before this search, so their own
    // expansion visit is not part of the fresh count
    for node in &second.nodes {
        assert!(node.n == node.child_visits + 1 || node.n == node.child_visits);
    }
    let mut off = Searcher::new(SearchConfig { tree_reuse: false, ..cfg });
    off.search(&p, &oracle, false, &mut rng(0)).unwrap();
    off.advance(mv);
    let cold = off.search(&next, &oracle, true, &mut rng(1)).unwrap();
    assert_eq!(cold.visits.iter().map(|v| v.1).sum::<u32>(), 200);
}
