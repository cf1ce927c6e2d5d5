// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet};

use super::puf::{width_mask, PufModel};
use super::{widen, DefenseError, DetectionEvent, DetectionKind};
use crate::regfile::Word;

/// XOR-folds `data` into `width`-bit chunks. Public and unkeyed.
pub fn digest(data: Word, width: u32) -> u64 {
    let data = widen(data);
    if width >= Word::BITS {
        return data;
    }
    let mask = width_mask(width);
    let mut acc = 0;
    let mut rest = data;
    while rest != 0 {
        acc ^= rest & mask;
        rest >>= width;
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TagMismatch {
    pub expected: u64,
    pub observed: u64,
}

/// Tags of the last write to each protected entry.
///
/// `tag = PUF(entry) ^ digest(data)`: the entry address is the challenge,
/// so the tag binds both location and content.
#[derive(Debug, Clone, Default)]
pub struct HashShadowStore {
    protected: BTreeSet<usize>,
    tags: BTreeMap<usize, u64>,
}

impl HashShadowStore {
    pub fn new(protected: impl IntoIterator<Item = usize>) -> Self {
        Self {
            protected: protected.into_iter().collect(),
            tags: BTreeMap::new(),
        }
    }

    pub fn is_protected(&self, entry: usize) -> bool {
        self.protected.contains(&entry)
    }

    pub fn protected(&self) -> impl Iterator<Item = usize> + '_ {
        self.protected.iter().copied()
    }

    pub fn tag(&self, entry: usize) -> Option<u64> {
        self.tags.get(&entry).copied()
    }

    fn compute(puf: &PufModel, entry: usize, data: Word) -> Result<u64, DefenseError> {
        Ok(puf.response(entry as u64)? ^ digest(data, puf.response_width))
    }

    /// Records the tag for a write. Unprotected entries are ignored.
    pub fn hash_on_write(&mut self, puf: &PufModel, entry: usize, data: Word) -> Result<bool, DefenseError> {
        if !self.is_protected(entry) {
            return Ok(false);
        }
        let tag = Self::compute(puf, entry, data)?;
        self.tags.insert(entry, tag);
        Ok(true)
    }

    /// Recomputes the tag of `data_read` and compares it with the stored one.
    pub fn check_on_read(
        &self,
        puf: &PufModel,
        entry: usize,
        data_read: Word,
    ) -> Result<Option<TagMismatch>, DefenseError> {
        if !self.is_protected(entry) {
            return Ok(None);
        }
        let expected = self.tags.get(&entry).copied().ok_or(DefenseError::MissingTag(entry))?;
        let observed = Self::compute(puf, entry, data_read)?;
        Ok((expected != observed).then_some(TagMismatch { expected, observed }))
    }

    pub fn detection(
        &self,
        puf: &PufModel,
        cycle: u64,
        port: usize,
        entry: usize,
        data_read: Word,
    ) -> Result<Option<DetectionEvent>, DefenseError> {
        Ok(self
            .check_on_read(puf, entry, data_read)?
            .map(|m| DetectionEvent {
                kind: DetectionKind::RegisterHashMismatch,
                cycle,
                entry,
                port,
                verify_port: None,
                observed: m.observed,
                reference: m.expected,
            }))
    }
}
