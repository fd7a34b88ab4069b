//! Caption-replacement draws for materialized dataset mixes.
//!
//! The stream is a ChaCha8 generator seeded with the policy seed. Records are
//! visited in output order; every record that has an alternative caption
//! consumes one draw `u = (next_u64 >> 11) / 2^53` and is replaced iff
//! `u < q`. Records without an alternative consume nothing.

use alloc::vec::Vec;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::seed::unit_f64;

pub struct ReplacementStream {
    rng: ChaCha8Rng,
}

impl ReplacementStream {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn draw(&mut self) -> f64 {
        unit_f64(self.rng.next_u64())
    }

    pub fn decide(&mut self, q: f64) -> bool {
        self.draw() < q
    }
}

/// Replacement decision for each record, given whether it has an alternative.
pub fn replacement_mask(has_alt: impl IntoIterator<Item = bool>, q: f64, seed: u64) -> Vec<bool> {
    let mut stream = ReplacementStream::new(seed);
    has_alt.into_iter().map(|alt| alt && stream.decide(q)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundaries_are_exact() {
        let alts = [true, false, true, true];
        assert_eq!(replacement_mask(alts, 0.0, 9), [false; 4]);
        assert_eq!(replacement_mask(alts, 1.0, 9), [true, false, true, true]);
    }

    #[test]
    fn records_without_alt_do_not_advance_the_stream() {
        let with_gaps = replacement_mask([true, false, false, true], 0.5, 3);
        let dense = replacement_mask([true, true], 0.5, 3);
        assert_eq!((with_gaps[0], with_gaps[3]), (dense[0], dense[1]));
    }
}
