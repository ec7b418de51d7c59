use serde::{Deserialize, Serialize};

use super::Position;

/// Length of the dense network input: two 8x8 planes.
pub const PLANE_LEN: usize = 128;

/// Network input in packed form.
///
/// Plane 0 holds the discs of the side to move and plane 1 the opponent's, so
/// the mover always looks like the same color and no turn plane is needed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Planes {
    pub own: u64,
    pub opp: u64,
}

impl Planes {
    /// Writes the `2 x 64` binary tensor (plane-major, square index within a plane).
    pub fn write_dense<T: num_traits::Float>(&self, out: &mut [T]) {
        assert_eq!(out.len(), PLANE_LEN);
        for sq in 0..64 {
            out[sq] = if self.own >> sq & 1 == 1 { T::one() } else { T::zero() };
            out[64 + sq] = if self.opp >> sq & 1 == 1 { T::one() } else { T::zero() };
        }
    }

    pub fn to_dense<T: num_traits::Float>(&self) -> Vec<T> {
        let mut v = vec![T::zero(); PLANE_LEN];
        self.write_dense(&mut v);
        v
    }
}

pub fn encode_planes(p: &Position) -> Planes {
    Planes { own: p.own(), opp: p.opp() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::board::Color;

    #[test]
    fn initial_planes() {
        let dense: Vec<f32> = encode_planes(&Position::initial()).to_dense();
        assert_eq!(dense[..64].iter().sum::<f32>(), 2.0);
        assert_eq!(dense[64..].iter().sum::<f32>(), 2.0);
        // black to move: d5 and e4 are own discs
        assert_eq!(dense[35], 1.0);
        assert_eq!(dense[28], 1.0);
        assert_eq!(dense[64 + 27], 1.0);
    }

    #[test]
    fn color_swap_invariance() {
        let p = Position::initial().apply_move("F5".parse().unwrap()).unwrap();
        let swapped = p.swap_colors();
        assert_eq!(p.to_move(), Color::White);
        assert_eq!(swapped.to_move(), Color::Black);
        assert_eq!(encode_planes(&p), encode_planes(&swapped));
    }

    #[test]
    fn plane_sum_is_disc_count() {
        let p = Position::initial().apply_move("D3".parse().unwrap()).unwrap();
        let dense: Vec<f64> = encode_planes(&p).to_dense();
        assert_eq!(dense.iter().sum::<f64>() as u32, p.disc_count());
    }
}
