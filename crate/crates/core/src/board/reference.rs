//! Array-based rules implementation used to cross-check the bitboard code.
//!
//! Everything here works on a plain `[i8; 64]` grid and walks the eight
//! directions square by square. It shares no code with the bitboard move
//! generator, which is what makes it useful as an independent oracle for
//! perft counts and property tests.

use super::{Color, Position};

const DIRS: [(i8, i8); 8] = [(0, 1), (0, -1), (1, 0), (-1, 0), (1, 1), (1, -1), (-1, 1), (-1, -1)];

/// `1` for the side to move, `-1` for the opponent, `0` for empty.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Grid {
    pub cells: [i8; 64],
}

impl Grid {
    pub fn from_position(p: &Position) -> Grid {
        let mut cells = [0i8; 64];
        for (sq, cell) in cells.iter_mut().enumerate() {
            if p.own() >> sq & 1 == 1 {
                *cell = 1;
            } else if p.opp() >> sq & 1 == 1 {
                *cell = -1;
            }
        }
        Grid { cells }
    }

    /// Converts back, given the color of the side to move.
    pub fn to_position(&self, mover: Color) -> Position {
        let mut own = 0u64;
        let mut opp = 0u64;
        for (sq, &c) in self.cells.iter().enumerate() {
            match c {
                1 => own |= 1 << sq,
                -1 => opp |= 1 << sq,
                _ => {}
            }
        }
        let (black, white) = match mover {
            Color::Black => (own, opp),
            Color::White => (opp, own),
        };
        Position::from_masks(black, white, mover).expect("grid cells are exclusive")
    }

    /// Number of opponent cells bracketed from `(row, col)` along `(dr, dc)`.
    fn run_length(&self, row: i8, col: i8, dr: i8, dc: i8) -> usize {
        let mut n = 0;
        let (mut r, mut c) = (row + dr, col + dc);
        while (0..8).contains(&r) && (0..8).contains(&c) {
            match self.cells[(r * 8 + c) as usize] {
                -1 => n += 1,
                1 => return n,
                _ => return 0,
            }
            r += dr;
            c += dc;
        }
        0
    }

    fn is_move(&self, sq: usize) -> bool {
        let (row, col) = ((sq / 8) as i8, (sq % 8) as i8);
        self.cells[sq] == 0 && DIRS.iter().any(|&(dr, dc)| self.run_length(row, col, dr, dc) > 0)
    }

    /// All opponent cells flipped by the mover playing `sq`.
    pub fn flips(&self, sq: usize) -> Vec<usize> {
        if self.cells[sq] != 0 {
            return Vec::new();
        }
        let (row, col) = ((sq / 8) as i8, (sq % 8) as i8);
        let mut out = Vec::new();
        for &(dr, dc) in &DIRS {
            for i in 1..=self.run_length(row, col, dr, dc) as i8 {
                out.push(((row + i * dr) * 8 + col + i * dc) as usize);
            }
        }
        out
    }

    /// Capturing squares of the mover, ascending.
    pub fn moves(&self) -> Vec<usize> {
        (0..64).filter(|&sq| self.is_move(sq)).collect()
    }

    /// Grid after the mover plays `sq`, seen from the new mover.
    pub fn play(&self, sq: usize) -> Grid {
        let mut next = *self;
        let (row, col) = ((sq / 8) as i8, (sq % 8) as i8);
        for &(dr, dc) in &DIRS {
            for i in 1..=self.run_length(row, col, dr, dc) as i8 {
                next.cells[((row + i * dr) * 8 + col + i * dc) as usize] = 1;
            }
        }
        next.cells[sq] = 1;
        next.pass()
    }

    /// Same discs, other side to move.
    pub fn pass(&self) -> Grid {
        let mut next = *self;
        for c in next.cells.iter_mut() {
            *c = -*c;
        }
        next
    }
}

/// Move-sequence count of length `depth`, with a forced pass counted as a move.
pub fn perft(p: &Position, depth: u32) -> u64 {
    perft_grid(&Grid::from_position(p), depth)
}

fn perft_grid(g: &Grid, depth: u32) -> u64 {
    if depth == 0 {
        return 1;
    }
    let mut moves = [0u8; 64];
    let mut n = 0;
    for sq in 0..64 {
        if g.is_move(sq) {
            moves[n] = sq as u8;
            n += 1;
        }
    }
    if n == 0 {
        let passed = g.pass();
        if !(0..64).any(|sq| passed.is_move(sq)) {
            return 0;
        }
        return perft_grid(&passed, depth - 1);
    }
    if depth == 1 {
        return n as u64;
    }
    moves[..n].iter().map(|&sq| perft_grid(&g.play(sq as usize), depth - 1)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initial_has_four_moves() {
        let g = Grid::from_position(&Position::initial());
        // d3, c4, f5, e6
        assert_eq!(g.moves(), vec![19, 26, 37, 44]);
    }

    #[test]
    fn f5_flips_one() {
        let g = Grid::from_position(&Position::initial());
        assert_eq!(g.flips(37), vec![36]);
        let next = g.play(37).to_position(Color::White);
        assert_eq!(next.black().count_ones(), 4);
        assert_eq!(next.white().count_ones(), 1);
    }
}
