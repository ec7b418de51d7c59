use super::{Move, Position, POLICY_SIZE};

/// The eight symmetries of the square board.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Symmetry {
    Identity,
    Rot90,
    Rot180,
    Rot270,
    FlipFiles,
    FlipRanks,
    Diagonal,
    AntiDiagonal,
}

impl Symmetry {
    pub const ALL: [Symmetry; 8] = [
        Symmetry::Identity,
        Symmetry::Rot90,
        Symmetry::Rot180,
        Symmetry::Rot270,
        Symmetry::FlipFiles,
        Symmetry::FlipRanks,
        Symmetry::Diagonal,
        Symmetry::AntiDiagonal,
    ];

    pub fn map_square(self, sq: u8) -> u8 {
        let (r, c) = (sq / 8, sq % 8);
        let (r2, c2) = match self {
            Symmetry::Identity => (r, c),
            Symmetry::Rot90 => (c, 7 - r),
            Symmetry::Rot180 => (7 - r, 7 - c),
            Symmetry::Rot270 => (7 - c, r),
            Symmetry::FlipFiles => (r, 7 - c),
            Symmetry::FlipRanks => (7 - r, c),
            Symmetry::Diagonal => (c, r),
            Symmetry::AntiDiagonal => (7 - c, 7 - r),
        };
        r2 * 8 + c2
    }

    pub fn inverse(self) -> Symmetry {
        match self {
            Symmetry::Rot90 => Symmetry::Rot270,
            Symmetry::Rot270 => Symmetry::Rot90,
            s => s,
        }
    }

    pub fn map_mask(self, mask: u64) -> u64 {
        let mut out = 0;
        let mut m = mask;
        while m != 0 {
            let sq = m.trailing_zeros() as u8;
            out |= 1u64 << self.map_square(sq);
            m &= m - 1;
        }
        out
    }

    pub fn map_move(self, m: Move) -> Move {
        match m.to_square() {
            Some(sq) => Move::square(self.map_square(sq)),
            None => Move::PASS,
        }
    }

    pub fn map_position(self, p: &Position) -> Position {
        Position::from_masks(self.map_mask(p.black()), self.map_mask(p.white()), p.to_move())
            .expect("symmetry preserves disjointness")
    }

    /// Permutes a 65-slot policy vector; the pass slot is fixed.
    pub fn map_policy<T: Copy>(self, policy: &[T; POLICY_SIZE]) -> [T; POLICY_SIZE] {
        let mut out = *policy;
        for sq in 0..64u8 {
            out[self.map_square(sq) as usize] = policy[sq as usize];
        }
        out
    }
}
