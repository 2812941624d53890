//! Dyadic grid of signed scales.
//!
//! The positive magnitudes are `b_min, √2·b_min, 2·b_min, ...` with
//! `levels + 1` entries in total. Entry 0 is the lone element of `B₀`; the
//! remaining entries form `B`. Every magnitude is used with both signs.

use std::f64::consts::SQRT_2;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// A grid scale together with its sign.
///
/// Ordering follows the tie-breaking order used throughout the crate:
/// smaller magnitude first, positive before negative at equal magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SignedScale {
    /// Index into [`ScaleGrid::magnitudes`]; 0 is `b_min`.
    pub level: usize,
    pub negative: bool,
}

impl SignedScale {
    pub const fn positive(level: usize) -> Self {
        Self {
            level,
            negative: false,
        }
    }

    pub const fn negative(level: usize) -> Self {
        Self {
            level,
            negative: true,
        }
    }

    /// Position in the signed enumeration `+b₀, −b₀, +b₁, −b₁, ...`.
    #[inline]
    pub const fn index(self) -> usize {
        2 * self.level + self.negative as usize
    }

    #[inline]
    pub const fn from_index(index: usize) -> Self {
        Self {
            level: index / 2,
            negative: index % 2 == 1,
        }
    }

    /// Whether the scale belongs to `B` (as opposed to `B₀`).
    #[inline]
    pub const fn in_main_grid(self) -> bool {
        self.level > 0
    }

    pub const fn flipped(self) -> Self {
        Self {
            level: self.level,
            negative: !self.negative,
        }
    }

    #[inline]
    pub fn sign(self) -> f64 {
        if self.negative {
            -1.0
        } else {
            1.0
        }
    }
}

impl fmt::Display for SignedScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}b{}", if self.negative { '-' } else { '+' }, self.level)
    }
}

/// Scale grid derived from the dimension `p` and the signal lower bound `beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleGrid {
    p: usize,
    beta: f64,
    b_min: f64,
    levels: usize,
    magnitudes: Vec<f64>,
}

impl ScaleGrid {
    /// Builds the grid for dimension `p ≥ 2` and `beta > 0`.
    pub fn new(p: usize, beta: f64) -> Result<Self> {
        if p < 2 {
            return Err(invalid("p", format!("dimension must be at least 2, got {p}")));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(invalid("beta", format!("must be positive and finite, got {beta}")));
        }
        let levels = (2 * p).ilog2() as usize;
        let log2_2p = ((2 * p) as f64).log2();
        let b_min = beta / ((1u64 << levels) as f64 * log2_2p).sqrt();
        let magnitudes = (0..=levels)
            .map(|k| {
                let even = b_min * (1u64 << (k / 2)) as f64;
                if k % 2 == 1 {
                    even * SQRT_2
                } else {
                    even
                }
            })
            .collect();
        Ok(Self {
            p,
            beta,
            b_min,
            levels,
            magnitudes,
        })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn b_min(&self) -> f64 {
        self.b_min
    }

    /// `⌊log₂(2p)⌋`, the number of positive magnitudes in `B`.
    pub fn levels(&self) -> usize {
        self.levels
    }

    /// Positive magnitudes, smallest first; `magnitudes()[0] == b_min()`.
    pub fn magnitudes(&self) -> &[f64] {
        &self.magnitudes
    }

    /// Number of signed scales in `B ∪ B₀`.
    pub fn signed_count(&self) -> usize {
        2 * self.magnitudes.len()
    }

    /// Signed value of a scale.
    #[inline]
    pub fn value(&self, scale: SignedScale) -> f64 {
        scale.sign() * self.magnitudes[scale.level]
    }

    /// All signed scales in `B ∪ B₀`, in tie-breaking order.
    pub fn signed_scales(&self) -> impl Iterator<Item = SignedScale> + '_ {
        (0..self.signed_count()).map(SignedScale::from_index)
    }

    /// Signed scales of `B` only, in tie-breaking order.
    pub fn main_scales(&self) -> impl Iterator<Item = SignedScale> + '_ {
        self.signed_scales().filter(|s| s.in_main_grid())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn p2_beta1() {
        let g = ScaleGrid::new(2, 1.0).unwrap();
        assert_eq!(g.levels(), 2);
        assert_relative_eq!(g.b_min(), 1.0 / 8f64.sqrt(), max_relative = 1e-15);
        let m = g.magnitudes();
        assert_eq!(m.len(), 3);
        assert_relative_eq!(m[0], 0.353_553_390_593_273_8, max_relative = 1e-15);
        assert_relative_eq!(m[1], 0.5, max_relative = 1e-15);
        assert_relative_eq!(m[2], 0.707_106_781_186_547_5, max_relative = 1e-15);
        assert_eq!(g.signed_count(), 6);
        assert_eq!(g.main_scales().count(), 4);
    }

    #[test]
    fn p100_beta1() {
        // b_min = 1/sqrt(128 * log2(200)), frozen from a 50-digit evaluation.
        let g = ScaleGrid::new(100, 1.0).unwrap();
        assert_eq!(g.levels(), 7);
        assert_eq!(g.main_scales().count(), 14);
        assert_relative_eq!(g.b_min(), 0.031_969_714_751_793_41, max_relative = 1e-12);
    }

    #[test]
    fn doubling_beta_doubles_scales_exactly() {
        for p in [2, 3, 17, 100, 1000] {
            let g1 = ScaleGrid::new(p, 1.3).unwrap();
            let g2 = ScaleGrid::new(p, 2.6).unwrap();
            for (a, b) in g1.magnitudes().iter().zip(g2.magnitudes()) {
                assert_eq!(2.0 * a, *b);
            }
        }
    }

    #[test]
    fn beta_reconstruction() {
        for p in 2..=4096usize {
            for beta in [0.1, 1.0, 10.0] {
                let g = ScaleGrid::new(p, beta).unwrap();
                let levels = (2 * p).ilog2();
                let back = (g.b_min().powi(2) * 2f64.powi(levels as i32) * ((2 * p) as f64).log2()).sqrt();
                assert_relative_eq!(back, beta, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn ratios_and_order() {
        let g = ScaleGrid::new(37, 0.7).unwrap();
        for w in g.magnitudes().windows(2) {
            assert!(w[1] > w[0]);
            assert_relative_eq!(w[1] / w[0], SQRT_2, max_relative = 1e-15);
        }
        let signed: Vec<_> = g.signed_scales().collect();
        assert_eq!(signed[0], SignedScale::positive(0));
        assert_eq!(signed[1], SignedScale::negative(0));
        assert!(signed.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(g.value(SignedScale::negative(2)), -2.0 * g.b_min());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ScaleGrid::new(1, 1.0).is_err());
        assert!(ScaleGrid::new(0, 1.0).is_err());
        assert!(ScaleGrid::new(5, 0.0).is_err());
        assert!(ScaleGrid::new(5, -1.0).is_err());
        assert!(ScaleGrid::new(5, f64::NAN).is_err());
    }
}
