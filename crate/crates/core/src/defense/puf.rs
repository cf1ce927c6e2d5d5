// SPDX-License-Identifier: Apache-2.0

use sha2::{Digest, Sha256};

use super::DefenseError;

/// Behavioral PUF: a secret-keyed deterministic challenge/response map.
///
/// Device physics are not modeled. The seed stands in for manufacturing
/// variation; responses are SHA-256 of the seed and challenge, truncated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PufModel {
    seed: u64,
    pub challenge_width: u32,
    pub response_width: u32,
}

impl PufModel {
    pub fn new(seed: u64, challenge_width: u32, response_width: u32) -> Result<Self, DefenseError> {
        if !(1..=64).contains(&challenge_width) || !(1..=64).contains(&response_width) {
            return Err(DefenseError::Config(format!(
                "challenge/response widths must be in 1..=64, got {challenge_width}/{response_width}"
            )));
        }
        Ok(Self {
            seed,
            challenge_width,
            response_width,
        })
    }

    pub fn response(&self, challenge: u64) -> Result<u64, DefenseError> {
        if self.challenge_width < 64 && challenge >> self.challenge_width != 0 {
            return Err(DefenseError::ChallengeWidth {
                challenge,
                width: self.challenge_width,
            });
        }
        let mut h = Sha256::new();
        h.update(b"rftrojan-puf");
        h.update(self.seed.to_le_bytes());
        h.update(challenge.to_le_bytes());
        let out = h.finalize();
        let mut word = [0u8; 8];
        word.copy_from_slice(&out[..8]);
        Ok(u64::from_le_bytes(word) & width_mask(self.response_width))
    }
}

pub(crate) fn width_mask(width: u32) -> u64 {
    if width >= 64 {
        u64::MAX
    } else {
        (1 << width) - 1
    }
}

pub fn puf_response(puf: &PufModel, challenge: u64) -> Result<u64, DefenseError> {
    puf.response(challenge)
}
