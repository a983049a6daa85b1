use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ActivationSet;
use crate::error::{Error, Result};

/// SplitMix64 (Steele, Lea and Flood), the generator behind every split.
///
/// Pinned here rather than taken from a crate so that split assignments are
/// reproducible by any implementation that follows the dump-format notes:
/// state advances by `0x9E3779B97F4A7C15`, output is the standard
/// `(z ^ z>>30) * 0xBF58476D1CE4E5B9`, `(z ^ z>>27) * 0x94D049BB133111EB`,
/// `z ^ z>>31` mix.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform draw from `[0, bound)` by rejection of the biased low zone.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0);
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let x = self.next_u64();
            if x >= threshold {
                return x % bound;
            }
        }
    }

    /// Independent child stream.
    pub fn split(&mut self) -> SplitMix64 {
        SplitMix64::new(self.next_u64())
    }

    /// Fisher–Yates permutation of `0..n`, swapping from the back.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i as u64 + 1) as usize;
            perm.swap(i, j);
        }
        perm
    }
}

/// Disjoint defender / attacker / evaluation index lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub defender_idx: Vec<usize>,
    pub attacker_idx: Vec<usize>,
    pub eval_idx: Vec<usize>,
    pub defender_seed: u64,
    pub attacker_seed: u64,
}

impl SplitAssignment {
    /// Records the attacker's seed. The permutation itself only depends on
    /// the seed passed to [`split_three_way`].
    pub fn with_attacker_seed(mut self, seed: u64) -> Self {
        self.attacker_seed = seed;
        self
    }

    pub fn num_samples(&self) -> usize {
        self.defender_idx.len() + self.attacker_idx.len() + self.eval_idx.len()
    }

    /// Short stable digest of seeds and index lists, used to check that
    /// stage outputs were produced on the same split.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.defender_seed.to_le_bytes());
        hasher.update(self.attacker_seed.to_le_bytes());
        for list in [&self.defender_idx, &self.attacker_idx, &self.eval_idx] {
            hasher.update((list.len() as u64).to_le_bytes());
            for &i in list {
                hasher.update((i as u64).to_le_bytes());
            }
        }
        hasher
            .finalize()
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Seeded three-way split of a set's samples.
///
/// A SplitMix64 permutation of `0..S` is cut into defender, attacker and
/// evaluation thirds, in that order; the `S mod 3` leftover samples go to
/// the evaluation split.
pub fn split_three_way(set: &ActivationSet, seed: u64) -> Result<SplitAssignment> {
    split_indices(set.num_samples(), seed)
}

pub(crate) fn split_indices(num_samples: usize, seed: u64) -> Result<SplitAssignment> {
    if num_samples < 3 {
        return Err(Error::InsufficientSamples {
            needed: 3,
            found: num_samples,
        });
    }
    let perm = SplitMix64::new(seed).permutation(num_samples);
    let third = num_samples / 3;
    Ok(SplitAssignment {
        defender_idx: perm[..third].to_vec(),
        attacker_idx: perm[third..2 * third].to_vec(),
        eval_idx: perm[2 * third..].to_vec(),
        defender_seed: seed,
        attacker_seed: seed,
    })
}
