//! Self-play reinforcement learning for Othello.
//!
//! The crate is organised bottom-up:
//!
//! - [`board`]: bitboard rules, transcripts, XOT openings, network input encoding.
//! - [`net`]: residual policy-value network with hand-written backprop and SGD.
//! - [`search`]: PUCT Monte-Carlo tree search guided by the network.
//! - [`selfplay`]: game generation, resignation, z/q-labelled datasets and the training window.
//! - [`pipeline`]: the generation loop (self-play, train, gate, promote) and its metrics.
//! - [`arena`]: engine matches and the line-based engine protocol.

pub mod board;
pub mod net;
pub mod search;
pub mod selfplay;
pub mod pipeline;
pub mod arena;
