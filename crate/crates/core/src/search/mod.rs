//! PUCT Monte-Carlo tree search.
//!
//! The tree lives in an arena. Every node carries the statistics of the edge
//! that leads into it: `n` visits and `w`, the summed value from the point of
//! view of the player who made that move. Backup therefore flips the sign at
//! each ply, including passes.
//!
//! Parallelism is round based: up to `parallel_leaves` leaves are selected
//! under virtual loss, evaluated in one batched oracle call (optionally split
//! over worker threads) and backed up in selection order. With one leaf per
//! round the search is the plain sequential algorithm.

mod oracle;

pub use oracle::{legal_priors, FnOracle, Oracle, UniformOracle};

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::board::{Move, Position, POLICY_SIZE};
use crate::net::Prediction;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SearchError {
    #[error("cannot search a terminal position")]
    TerminalRoot,
    #[error("simulation budget must be at least 1")]
    NoSimulations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub simulations: u32,
    pub c_puct: f64,
    pub dirichlet_epsilon: f64,
    /// Moves up to and including this number are sampled from pi.
    pub temperature_moves: u32,
    /// Pseudo-losses added per in-flight visit.
    pub virtual_loss: u32,
    /// Leaves selected per round before the batched evaluation.
    pub parallel_leaves: usize,
    /// Worker threads sharing one round's oracle batch.
    pub threads: usize,
    /// Keep the subtree of the played move between searches.
    pub tree_reuse: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            simulations: 200,
            c_puct: 1.5,
            dirichlet_epsilon: 0.25,
            temperature_moves: 20,
            virtual_loss: 1,
            parallel_leaves: 1,
            threads: 1,
            tree_reuse: true,
        }
    }
}

impl SearchConfig {
    pub fn with_simulations(simulations: u32) -> Self {
        SearchConfig { simulations, ..Default::default() }
    }
}

/// Dirichlet concentration for a root with `legal_moves` choices.
pub fn dirichlet_alpha(legal_moves: usize) -> f64 {
    (10.0 / legal_moves.max(1) as f64).min(1.0)
}

/// Statistics of one tree node below the root, collected after a search.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeStat {
    pub position: Position,
    pub key: u64,
    /// Visit distribution over the node's children, indexed like `Move::index`.
    pub pi: Vec<f32>,
    /// Mean value from the point of view of the node's side to move.
    pub q: f32,
    /// Visits received during this search.
    pub n: u32,
    /// Sum of the children's visits during this search.
    pub child_visits: u32,
    pub depth: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub root: Position,
    /// Root visit distribution over 65 slots.
    pub pi: Vec<f32>,
    /// Root child visit counts, including any inherited through tree reuse.
    pub visits: Vec<(Move, u32)>,
    /// Root child visits added by this search; they sum to `simulations`.
    pub fresh_visits: Vec<(Move, u32)>,
    /// Mean value of the root for its side to move.
    pub q_root: f32,
    /// Oracle value of the root position.
    pub v_root: f32,
    pub simulations: u32,
    pub nodes_expanded: u32,
    pub max_depth: u32,
    /// Non-root nodes visited by this search with at least one child visit.
    pub nodes: Vec<NodeStat>,
}

impl SearchResult {
    /// Most visited root move, lowest index on ties.
    pub fn best_move(&self) -> Move {
        argmax_visits(&self.visits)
    }
}

fn argmax_visits(visits: &[(Move, u32)]) -> Move {
    let mut best = visits[0];
    for &(m, n) in &visits[1..] {
        if n > best.1 || (n == best.1 && m.index() < best.0.index()) {
            best = (m, n);
        }
    }
    best.0
}

/// Picks the move to play: sampled in proportion to visits for move numbers
/// up to `cfg.temperature_moves` (1-based), otherwise the most visited.
pub fn select_move<R: Rng + ?Sized>(result: &SearchResult, move_number: u32, cfg: &SearchConfig, rng: &mut R) -> Move {
    if move_number <= cfg.temperature_moves {
        let total: u64 = result.visits.iter().map(|&(_, n)| n as u64).sum();
        if total > 0 {
            let mut pick = rng.random_range(0..total);
            for &(m, n) in &result.visits {
                if pick < n as u64 {
                    return m;
                }
                pick -= n as u64;
            }
        }
    }
    result.best_move()
}

/// Non-root nodes with at least `threshold` visits in this search, most
/// visited first. A node needs one visited child to define its pi, so the
/// effective threshold is never below 2.
pub fn harvest_visited(result: &SearchResult, threshold: u32) -> Vec<NodeStat> {
    let mut out: Vec<NodeStat> = result.nodes.iter().filter(|s| s.n >= threshold).cloned().collect();
    out.sort_by(|a, b| b.n.cmp(&a.n));
    out
}

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone)]
struct Node {
    position: Position,
    parent: u32,
    mv: Move,
    prior: f32,
    n: u32,
    w: f64,
    /// Snapshot of `n`/`w` at the start of the current search.
    n0: u32,
    w0: f64,
    vloss: u32,
    first_child: u32,
    child_count: u8,
    expanded: bool,
    /// Exact value for the side to move when the position is final.
    terminal: Option<f64>,
    /// Oracle value for the side to move, once expanded.
    value: f32,
}

impl Node {
    fn new(position: Position, parent: u32, mv: Move, prior: f32) -> Node {
        let terminal = if position.is_terminal() {
            Some(position.outcome().expect("terminal").z(position.to_move()) as f64)
        } else {
            None
        };
        Node {
            position,
            parent,
            mv,
            prior,
            n: 0,
            w: 0.0,
            n0: 0,
            w0: 0.0,
            vloss: 0,
            first_child: NONE,
            child_count: 0,
            expanded: false,
            terminal,
            value: 0.0,
        }
    }

    fn children(&self) -> std::ops::Range<usize> {
        let first = self.first_child as usize;
        first..first + self.child_count as usize
    }
}

/// Search state that can persist across the moves of one game.
#[derive(Debug, Clone)]
pub struct Searcher {
    cfg: SearchConfig,
    nodes: Vec<Node>,
    root: u32,
    /// Priors used for selection at the root (noise mixed in when enabled).
    root_priors: Vec<f32>,
}

impl Searcher {
    pub fn new(cfg: SearchConfig) -> Self {
        Searcher { cfg, nodes: Vec::new(), root: NONE, root_priors: Vec::new() }
    }

    pub fn config(&self) -> &SearchConfig {
        &self.cfg
    }

    pub fn reset(&mut self) {
        self.nodes.clear();
        self.root = NONE;
    }

    /// Moves the root to the child reached by `mv`, keeping its subtree when
    /// tree reuse is on; otherwise the tree is discarded.
    pub fn advance(&mut self, mv: Move) {
        if !self.cfg.tree_reuse || self.root == NONE {
            self.reset();
            return;
        }
        let root = &self.nodes[self.root as usize];
        let next = root.children().find(|&c| self.nodes[c].mv == mv);
        match next {
            Some(c) if self.nodes[c].expanded => {
                self.compact(c as u32);
            }
            _ => self.reset(),
        }
    }

    /// Rebuilds the arena with only the subtree under `new_root`.
    fn compact(&mut self, new_root: u32) {
        let mut fresh: Vec<Node> = Vec::new();
        let mut root = self.nodes[new_root as usize].clone();
        root.parent = NONE;
        fresh.push(root);
        let mut i = 0;
        while i < fresh.len() {
            if fresh[i].expanded {
                let old = fresh[i].children();
                let first = fresh.len() as u32;
                for c in old {
                    let mut child = self.nodes[c].clone();
                    child.parent = i as u32;
                    fresh.push(child);
                }
                fresh[i].first_child = first;
            }
            i += 1;
        }
        self.nodes = fresh;
        self.root = 0;
    }

    /// Priors used for selection at the node reached from the root by `path`.
    pub fn node_priors(&self, path: &[Move]) -> Option<Vec<(Move, f32)>> {
        let mut node = self.root;
        if node == NONE {
            return None;
        }
        for &m in path {
            let n = &self.nodes[node as usize];
            node = n.children().find(|&c| self.nodes[c].mv == m)? as u32;
        }
        let n = &self.nodes[node as usize];
        if !n.expanded {
            return None;
        }
        Some(
            n.children()
                .enumerate()
                .map(|(i, c)| {
                    let prior = if node == self.root { self.root_priors[i] } else { self.nodes[c].prior };
                    (self.nodes[c].mv, prior)
                })
                .collect(),
        )
    }

    pub fn search<O: Oracle + ?Sized, R: Rng + ?Sized>(
        &mut self,
        root: &Position,
        oracle: &O,
        noise: bool,
        rng: &mut R,
    ) -> Result<SearchResult, SearchError> {
        if root.is_terminal() {
            return Err(SearchError::TerminalRoot);
        }
        if self.cfg.simulations == 0 {
            return Err(SearchError::NoSimulations);
        }
        let reuse = self.cfg.tree_reuse && self.root != NONE && self.nodes[self.root as usize].position == *root;
        if !reuse {
            self.nodes.clear();
            self.nodes.push(Node::new(*root, NONE, Move::PASS, 1.0));
            self.root = 0;
        }
        for node in self.nodes.iter_mut() {
            node.n0 = node.n;
            node.w0 = node.w;
            node.vloss = 0;
        }
        let mut nodes_expanded = 0;
        if !self.nodes[self.root as usize].expanded {
            let pred = evaluate(oracle, &[*root], 1).pop().expect("one prediction");
            self.expand(self.root, &pred);
            self.backup(self.root, pred.v as f64);
            nodes_expanded += 1;
            // the expansion visit belongs to the root, not to this search's budget
            let r = &mut self.nodes[self.root as usize];
            r.n0 = r.n;
            r.w0 = r.w;
        }
        self.prepare_root_priors(noise, rng);

        let sims = self.cfg.simulations;
        let mut done = 0;
        let mut max_depth = 0;
        while done < sims {
            let want = (self.cfg.parallel_leaves.max(1) as u32).min(sims - done);
            let mut leaves: Vec<u32> = Vec::with_capacity(want as usize);
            let mut to_eval: Vec<u32> = Vec::new();
            for _ in 0..want {
                let (leaf, depth) = self.select();
                let node = &self.nodes[leaf as usize];
                let needs_eval = node.terminal.is_none() && !node.expanded;
                if needs_eval && to_eval.contains(&leaf) {
                    self.retire_virtual_loss(leaf);
                    break;
                }
                max_depth = max_depth.max(depth);
                if needs_eval {
                    to_eval.push(leaf);
                }
                leaves.push(leaf);
            }
            let positions: Vec<Position> = to_eval.iter().map(|&i| self.nodes[i as usize].position).collect();
            let preds = evaluate(oracle, &positions, self.cfg.threads);
            let mut values = Vec::with_capacity(to_eval.len());
            for (&leaf, pred) in to_eval.iter().zip(&preds) {
                self.expand(leaf, pred);
                values.push((leaf, pred.v as f64));
                nodes_expanded += 1;
            }
            for &leaf in &leaves {
                let value = match self.nodes[leaf as usize].terminal {
                    Some(z) => z,
                    None => values.iter().find(|(l, _)| *l == leaf).expect("evaluated").1,
                };
                self.retire_virtual_loss(leaf);
                self.backup(leaf, value);
            }
            done += leaves.len() as u32;
        }
        Ok(self.result(sims, nodes_expanded, max_depth))
    }

    fn prepare_root_priors<R: Rng + ?Sized>(&mut self, noise: bool, rng: &mut R) {
        let root = &self.nodes[self.root as usize];
        let mut priors: Vec<f32> = root.children().map(|c| self.nodes[c].prior).collect();
        let eps = self.cfg.dirichlet_epsilon;
        if noise && priors.len() > 1 && eps > 0.0 {
            let gamma = Gamma::new(dirichlet_alpha(priors.len()), 1.0).expect("positive alpha");
            let mut x: Vec<f64> = priors.iter().map(|_| gamma.sample(rng)).collect();
            let total: f64 = x.iter().sum();
            if total > 0.0 {
                x.iter_mut().for_each(|v| *v /= total);
            } else {
                x.iter_mut().for_each(|v| *v = 1.0 / priors.len() as f64);
            }
            for (p, xi) in priors.iter_mut().zip(x) {
                *p = ((1.0 - eps) * *p as f64 + eps * xi) as f32;
            }
        }
        self.root_priors = priors;
    }

    /// Descends by PUCT from the root, adding virtual loss to every edge on the
    /// way, and returns the leaf with its depth.
    fn select(&mut self) -> (u32, u32) {
        let vl = self.cfg.virtual_loss;
        let c_puct = self.cfg.c_puct;
        let mut node = self.root;
        let mut depth = 0;
        loop {
            let n = &self.nodes[node as usize];
            if !n.expanded || n.terminal.is_some() {
                return (node, depth);
            }
            let children = n.children();
            let total: u64 = children
                .clone()
                .map(|c| self.nodes[c].n as u64 + (self.nodes[c].vloss * vl) as u64)
                .sum();
            let sqrt_total = (total.max(1) as f64).sqrt();
            let mut best = NONE;
            let mut best_score = f64::NEG_INFINITY;
            for (i, c) in children.enumerate() {
                let child = &self.nodes[c];
                let pending = (child.vloss * vl) as f64;
                let n_eff = child.n as f64 + pending;
                let q = if n_eff > 0.0 { (child.w - pending) / n_eff } else { 0.0 };
                let prior = if node == self.root { self.root_priors[i] } else { child.prior } as f64;
                let score = q + c_puct * prior * sqrt_total / (1.0 + n_eff);
                if score > best_score {
                    best_score = score;
                    best = c as u32;
                }
            }
            self.nodes[best as usize].vloss += 1;
            node = best;
            depth += 1;
        }
    }

    fn retire_virtual_loss(&mut self, leaf: u32) {
        let mut node = leaf;
        while node != self.root {
            self.nodes[node as usize].vloss -= 1;
            node = self.nodes[node as usize].parent;
        }
    }

    fn expand(&mut self, node: u32, pred: &Prediction) {
        let position = self.nodes[node as usize].position;
        let first = self.nodes.len() as u32;
        let priors = legal_priors(&position, &pred.p);
        for &(m, prior) in &priors {
            self.nodes.push(Node::new(position.play_unchecked(m), node, m, prior));
        }
        let n = &mut self.nodes[node as usize];
        n.first_child = first;
        n.child_count = priors.len() as u8;
        n.expanded = true;
        n.value = pred.v;
    }

    /// Adds one visit with `value` (for the leaf's side to move) along the path.
    fn backup(&mut self, leaf: u32, value: f64) {
        let mut node = leaf;
        let mut v = value;
        loop {
            let n = &mut self.nodes[node as usize];
            n.n += 1;
            n.w -= v;
            if node == self.root {
                break;
            }
            node = n.parent;
            v = -v;
        }
    }

    fn result(&self, sims: u32, nodes_expanded: u32, max_depth: u32) -> SearchResult {
        let root = &self.nodes[self.root as usize];
        let visits: Vec<(Move, u32)> = root.children().map(|c| (self.nodes[c].mv, self.nodes[c].n)).collect();
        let fresh_visits: Vec<(Move, u32)> =
            root.children().map(|c| (self.nodes[c].mv, self.nodes[c].n - self.nodes[c].n0)).collect();
        let pi = distribution(&visits);
        let q_root = (-root.w / root.n as f64) as f32;

        let mut nodes = Vec::new();
        let mut stack: Vec<(u32, u32)> = root.children().map(|c| (c as u32, 1)).collect();
        while let Some((idx, depth)) = stack.pop() {
            let node = &self.nodes[idx as usize];
            let fresh = node.n - node.n0;
            if fresh == 0 || !node.expanded {
                continue;
            }
            let child_fresh: Vec<(Move, u32)> =
                node.children().map(|c| (self.nodes[c].mv, self.nodes[c].n - self.nodes[c].n0)).collect();
            if child_fresh.iter().any(|&(_, n)| n > 0) {
                nodes.push(NodeStat {
                    position: node.position,
                    key: node.position.key(),
                    pi: distribution(&child_fresh),
                    q: (-(node.w - node.w0) / fresh as f64) as f32,
                    n: fresh,
                    child_visits: child_fresh.iter().map(|&(_, n)| n).sum(),
                    depth,
                });
            }
            stack.extend(node.children().map(|c| (c as u32, depth + 1)));
        }
        SearchResult {
            root: root.position,
            pi,
            visits,
            fresh_visits,
            q_root,
            v_root: root.value,
            simulations: sims,
            nodes_expanded,
            max_depth,
            nodes,
        }
    }
}

fn distribution(visits: &[(Move, u32)]) -> Vec<f32> {
    let mut pi = vec![0.0f32; POLICY_SIZE];
    let total: u64 = visits.iter().map(|&(_, n)| n as u64).sum();
    if total > 0 {
        for &(m, n) in visits {
            pi[m.index()] = (n as f64 / total as f64) as f32;
        }
    }
    pi
}

fn evaluate<O: Oracle + ?Sized>(oracle: &O, positions: &[Position], threads: usize) -> Vec<Prediction> {
    if positions.is_empty() {
        return Vec::new();
    }
    let preds = if threads <= 1 || positions.len() == 1 {
        oracle.evaluate(positions)
    } else {
        let chunk = positions.len().div_ceil(threads);
        std::thread::scope(|s| {
            let handles: Vec<_> = positions.chunks(chunk).map(|part| s.spawn(move || oracle.evaluate(part))).collect();
            handles.into_iter().flat_map(|h| h.join().expect("oracle worker panicked")).collect::<Vec<_>>()
        })
    };
    assert_eq!(preds.len(), positions.len(), "oracle returned the wrong number of predictions");
    preds
}

/// One-shot search from a fresh tree.
pub fn search<O: Oracle + ?Sized, R: Rng + ?Sized>(
    root: &Position,
    oracle: &O,
    cfg: &SearchConfig,
    noise: bool,
    rng: &mut R,
) -> Result<SearchResult, SearchError> {
    Searcher::new(cfg.clone()).search(root, oracle, noise, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn alpha_rule() {
        assert_eq!(dirichlet_alpha(5), 1.0);
        assert_eq!(dirichlet_alpha(10), 1.0);
        assert_eq!(dirichlet_alpha(20), 0.5);
    }

    #[test]
    fn budget_is_spent_on_root_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for sims in [1, 2, 17, 64] {
            let r = search(&Position::initial(), &UniformOracle, &SearchConfig::with_simulations(sims), true, &mut rng)
                .unwrap();
            assert_eq!(r.visits.iter().map(|v| v.1).sum::<u32>(), sims);
            assert_eq!(r.fresh_visits, r.visits);
            assert!((r.pi.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn terminal_root_is_an_error() {
        let p = Position::from_masks(u64::MAX, 0, crate::board::Color::White).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            search(&p, &UniformOracle, &SearchConfig::default(), false, &mut rng),
            Err(SearchError::TerminalRoot)
        );
    }

    #[test]
    fn argmax_ties_go_to_lowest_index() {
        let c4: Move = "C4".parse().unwrap();
        let e3: Move = "E3".parse().unwrap();
        assert!(e3.index() < c4.index());
        assert_eq!(argmax_visits(&[(e3, 5), (c4, 5)]), e3);
        assert_eq!(argmax_visits(&[(c4, 5), (e3, 5)]), e3);
        assert_eq!(argmax_visits(&[(c4, 6), (e3, 5)]), c4);
    }
}
