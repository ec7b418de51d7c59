use super::{capture_mask, flip_mask, Position};

/// Number of move sequences of length `depth` from `p`; a forced pass counts
/// as a move and terminal positions contribute nothing below depth 0.
pub fn perft(p: &Position, depth: u32) -> u64 {
    perft_masks(p.own(), p.opp(), depth)
}

fn perft_masks(own: u64, opp: u64, depth: u32) -> u64 {
    if depth == 0 {
        return 1;
    }
    let mut moves = capture_mask(own, opp);
    if moves == 0 {
        if capture_mask(opp, own) == 0 {
            return 0;
        }
        return perft_masks(opp, own, depth - 1);
    }
    if depth == 1 {
        return moves.count_ones() as u64;
    }
    let mut total = 0;
    while moves != 0 {
        let sq = moves.trailing_zeros() as u8;
        moves &= moves - 1;
        let flips = flip_mask(own, opp, sq);
        total += perft_masks(opp & !flips, own | flips | (1u64 << sq), depth - 1);
    }
    total
}
