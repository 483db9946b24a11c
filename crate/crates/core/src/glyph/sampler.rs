//! Which fonts and slots a glyph training step sees.
//!
//! Per batch item, from one ChaCha8 stream seeded with the run seed:
//! 1. `font = bounded(n_fonts)`
//! 2. `k = min + bounded(max − min + 1)` observed slots
//! 3. a partial Fisher–Yates over `0..62`: for `i in 0..k`,
//!    `j = i + bounded(62 − i)`, swap `i` and `j`; the first `k` entries
//!    (in draw order) are observed
//!
//! where `bounded(n) = (next_u32() as u64 · n) >> 32`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::charset::NUM_CHARS;
use crate::error::{Error, Result};

/// Inclusive range of observed-slot counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObservedRange {
    pub min: usize,
    pub max: usize,
}

impl Default for ObservedRange {
    fn default() -> Self {
        ObservedRange { min: 1, max: 8 }
    }
}

impl ObservedRange {
    pub fn validate(&self) -> Result<()> {
        if self.min == 0 || self.min > self.max || self.max > NUM_CHARS {
            return Err(Error::Invalid(format!(
                "observed count range [{}, {}] must lie within [1, {NUM_CHARS}]",
                self.min, self.max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HiddenSlotDraw {
    pub font: usize,
    /// Observed slot indices in draw order.
    pub observed: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct HiddenSlotSampler {
    rng: ChaCha8Rng,
    n_fonts: usize,
    range: ObservedRange,
}

pub(crate) fn bounded(rng: &mut ChaCha8Rng, n: usize) -> usize {
    ((rng.next_u32() as u64 * n as u64) >> 32) as usize
}

impl HiddenSlotSampler {
    pub fn new(seed: u64, n_fonts: usize, range: ObservedRange) -> Result<Self> {
        range.validate()?;
        if n_fonts == 0 {
            return Err(Error::EmptyDataset("no fonts to sample from".into()));
        }
        Ok(HiddenSlotSampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
            n_fonts,
            range,
        })
    }

    pub fn draw(&mut self) -> HiddenSlotDraw {
        let rng = &mut self.rng;
        let font = bounded(rng, self.n_fonts);
        let k = self.range.min + bounded(rng, self.range.max - self.range.min + 1);
        let mut perm: Vec<usize> = (0..NUM_CHARS).collect();
        for i in 0..k {
            let j = i + bounded(rng, NUM_CHARS - i);
            perm.swap(i, j);
        }
        HiddenSlotDraw {
            font,
            observed: perm[..k].to_vec(),
        }
    }

    pub fn draw_batch(&mut self, n: usize) -> Vec<HiddenSlotDraw> {
        (0..n).map(|_| self.draw()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_respect_range() {
        let mut s = HiddenSlotSampler::new(3, 10, ObservedRange::default()).unwrap();
        let mut seen_k = [false; 9];
        for _ in 0..500 {
            let d = s.draw();
            assert!(d.font < 10);
            assert!((1..=8).contains(&d.observed.len()));
            seen_k[d.observed.len()] = true;
            let mut all = d.observed.clone();
            all.sort_unstable();
            all.dedup();
            assert_eq!(all.len(), d.observed.len());
            assert!(all.iter().all(|&i| i < NUM_CHARS));
        }
        assert!(seen_k[1..].iter().all(|&b| b));
    }

    #[test]
    fn invalid_ranges() {
        assert!(HiddenSlotSampler::new(0, 0, ObservedRange::default()).is_err());
        assert!(HiddenSlotSampler::new(0, 1, ObservedRange { min: 0, max: 3 }).is_err());
        assert!(HiddenSlotSampler::new(0, 1, ObservedRange { min: 4, max: 3 }).is_err());
        assert!(HiddenSlotSampler::new(0, 1, ObservedRange { min: 1, max: 63 }).is_err());
    }
}
