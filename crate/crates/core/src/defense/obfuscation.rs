// SPDX-License-Identifier: Apache-2.0

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Per-boot permutation of L1 set indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObfuscationMap {
    permutation: Vec<usize>,
}

impl ObfuscationMap {
    pub fn identity(num_sets: usize) -> Self {
        Self {
            permutation: (0..num_sets).collect(),
        }
    }

    pub fn from_seed(num_sets: usize, boot_seed: u64) -> Self {
        let mut permutation: Vec<usize> = (0..num_sets).collect();
        permutation.shuffle(&mut ChaCha8Rng::seed_from_u64(boot_seed));
        Self { permutation }
    }

    pub fn num_sets(&self) -> usize {
        self.permutation.len()
    }

    pub fn apply(&self, set_index: usize) -> usize {
        self.permutation[set_index]
    }

    pub fn is_bijection(&self) -> bool {
        let mut seen = vec![false; self.permutation.len()];
        for &p in &self.permutation {
            if p >= seen.len() || seen[p] {
                return false;
            }
            seen[p] = true;
        }
        true
    }
}

pub fn obfuscate_index(map: &ObfuscationMap, set_index: usize) -> usize {
    map.apply(set_index)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_map() {
        let m = ObfuscationMap::identity(64);
        assert!((0..64).all(|i| obfuscate_index(&m, i) == i));
    }

    #[test]
    fn seeded_maps_are_permutations() {
        for seed in 0..50 {
            let m = ObfuscationMap::from_seed(64, seed);
            let mut hits = vec![0; 64];
            for i in 0..64 {
                hits[m.apply(i)] += 1;
            }
            assert!(hits.iter().all(|&h| h == 1));
            assert!(m.is_bijection());
        }
    }

    #[test]
    fn same_seed_same_map() {
        assert_eq!(ObfuscationMap::from_seed(64, 3), ObfuscationMap::from_seed(64, 3));
        assert_ne!(ObfuscationMap::from_seed(64, 3), ObfuscationMap::from_seed(64, 4));
    }

    #[test]
    fn fixed_point_rate_matches_one_over_sets() {
        // P(map(s) == s) = 1/n for a uniform permutation; 3-sigma binomial band.
        let (n, boots, s) = (64usize, 4000u64, 17usize);
        let fixed = (0..boots)
            .filter(|&seed| ObfuscationMap::from_seed(n, seed).apply(s) == s)
            .count() as f64;
        let p = 1.0 / n as f64;
        let expected = boots as f64 * p;
        let sigma = (boots as f64 * p * (1.0 - p)).sqrt();
        assert!((fixed - expected).abs() <= 3.0 * sigma, "{fixed} vs {expected}");
    }
}
