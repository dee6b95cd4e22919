//! Creator-level structural visibility of active AUFs, stopping times and maturity.
//!
//! Each committed round `R` resets `C_X(R)` to zero for every active AUF and
//! counts the canonical round-`R` vertices whose ancestry contains `X`. Ancestry
//! is propagated one round at a time: every vertex of the latest round carries
//! the set of *active* AUFs in its reflexive ancestor closure, built from its
//! parents' sets. AUFs released from the active set drop out of those sets, so
//! the walk never revisits history older than the active horizon.
//!
//! Active AUFs occupy small reusable slot numbers and the sets are bitsets
//! over slots, so a union costs one word per 64 active AUFs.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dag::{DagStore, Digest, Round, VertexIdx};
use crate::exporter::RunConfig;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VisibilityError {
    #[error("round {got} applied at frontier {frontier:?}")]
    FrontierSkew { frontier: Option<Round>, got: Round },
    #[error("round {round} not recorded for {digest}")]
    RoundNotRecorded { digest: Digest, round: Round },
    #[error("{0} is not an active AUF")]
    UnknownAuf(Digest),
}

/// Visibility trajectory and settlement state of one AUF.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisibilityProfile {
    pub target: Digest,
    pub birth_round: Round,
    /// `counts[i]` is `C_X(birth_round + i)`.
    pub counts: Vec<u32>,
    pub stopping_time: Option<Round>,
    pub mature: Option<bool>,
}

impl VisibilityProfile {
    pub fn new(target: Digest, birth_round: Round) -> VisibilityProfile {
        VisibilityProfile {
            target,
            birth_round,
            counts: Vec::new(),
            stopping_time: None,
            mature: None,
        }
    }

    pub fn count_at(&self, t: Round) -> Option<u32> {
        let offset = t.0.checked_sub(self.birth_round.0)?;
        self.counts.get(offset as usize).copied()
    }

    /// Last round with a recorded count.
    pub fn last_recorded(&self) -> Option<Round> {
        (!self.counts.is_empty()).then(|| Round(self.birth_round.0 + self.counts.len() as u64 - 1))
    }

    pub fn is_settled(&self) -> bool {
        self.stopping_time.is_some()
    }

    /// Applies the stopping rule for `round`, whose count must already be recorded.
    /// Returns true if the profile settled now.
    fn settle(&mut self, round: Round, quorum: u32, w_max: u64) -> bool {
        if self.stopping_time.is_some() {
            return false;
        }
        let cap = Round(self.birth_round.0 + w_max);
        if self.count_at(round).is_some_and(|c| c >= quorum) {
            self.stopping_time = Some(round);
            self.mature = Some(true);
            true
        } else if round >= cap {
            self.stopping_time = Some(cap);
            self.mature = Some(false);
            true
        } else {
            false
        }
    }
}

/// Profiles of all active AUFs plus the per-vertex reachability frontier.
#[derive(Clone, Debug)]
pub struct VisibilityTracker {
    quorum: u32,
    w_max: u64,
    frontier: Option<Round>,
    profiles: HashMap<VertexIdx, VisibilityProfile>,
    by_digest: HashMap<Digest, VertexIdx>,
    by_birth: BTreeMap<Round, Vec<VertexIdx>>,
    slot_of: HashMap<VertexIdx, usize>,
    free_slots: Vec<usize>,
    slot_count: usize,
    /// Active-ancestor bitset of every vertex of the latest committed round.
    reach: HashMap<VertexIdx, Vec<u64>>,
}

fn set_bit(bits: &mut Vec<u64>, slot: usize) {
    let word = slot / 64;
    if bits.len() <= word {
        bits.resize(word + 1, 0);
    }
    bits[word] |= 1 << (slot % 64);
}

impl VisibilityTracker {
    pub fn new(config: &RunConfig) -> VisibilityTracker {
        VisibilityTracker {
            quorum: config.quorum(),
            w_max: config.w_max,
            frontier: None,
            profiles: HashMap::new(),
            by_digest: HashMap::new(),
            by_birth: BTreeMap::new(),
            slot_of: HashMap::new(),
            free_slots: Vec::new(),
            slot_count: 0,
            reach: HashMap::new(),
        }
    }

    pub fn frontier(&self) -> Option<Round> {
        self.frontier
    }

    pub fn active_len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_active(&self, idx: VertexIdx) -> bool {
        self.profiles.contains_key(&idx)
    }

    pub fn profile(&self, idx: VertexIdx) -> Option<&VisibilityProfile> {
        self.profiles.get(&idx)
    }

    pub fn profile_of(&self, digest: &Digest) -> Option<&VisibilityProfile> {
        self.by_digest
            .get(digest)
            .and_then(|i| self.profiles.get(i))
    }

    /// Active AUFs in (birth round, insertion) order.
    pub fn active(&self) -> impl Iterator<Item = VertexIdx> + '_ {
        self.by_birth.values().flatten().copied()
    }

    /// Records `C_X(round)` for every active AUF, admitting `canonical` as new active AUFs.
    ///
    /// The vertices must already be in `store`.
    pub fn on_round_committed(
        &mut self,
        round: Round,
        canonical: &[VertexIdx],
        store: &DagStore,
    ) -> Result<(), VisibilityError> {
        let expected = self.frontier.map_or(Round::GENESIS, Round::next);
        if round != expected {
            return Err(VisibilityError::FrontierSkew {
                frontier: self.frontier,
                got: round,
            });
        }
        for &y in canonical {
            let meta = store.meta(y);
            self.profiles
                .insert(y, VisibilityProfile::new(meta.digest, meta.round));
            self.by_digest.insert(meta.digest, y);
            self.by_birth.entry(meta.round).or_default().push(y);
            let slot = self.free_slots.pop().unwrap_or_else(|| {
                self.slot_count += 1;
                self.slot_count - 1
            });
            self.slot_of.insert(y, slot);
        }

        let mut tally = vec![0u32; self.slot_count];
        let mut next_reach = HashMap::with_capacity(canonical.len());
        for &y in canonical {
            let mut bits: Vec<u64> = Vec::new();
            for p in store.parents_of(y) {
                if let Some(set) = self.reach.get(p) {
                    if bits.len() < set.len() {
                        bits.resize(set.len(), 0);
                    }
                    for (w, s) in bits.iter_mut().zip(set) {
                        *w |= s;
                    }
                }
            }
            set_bit(&mut bits, self.slot_of[&y]);
            for (w, &word) in bits.iter().enumerate() {
                let mut rest = word;
                while rest != 0 {
                    tally[w * 64 + rest.trailing_zeros() as usize] += 1;
                    rest &= rest - 1;
                }
            }
            next_reach.insert(y, bits);
        }
        for (idx, profile) in self.profiles.iter_mut() {
            profile.counts.push(tally[self.slot_of[idx]]);
        }
        self.reach = next_reach;
        self.frontier = Some(round);
        Ok(())
    }

    /// Settles stopping times using the counts of `round`; returns the AUFs settled now.
    pub fn settle_stopping_times(&mut self, round: Round) -> Vec<Digest> {
        let mut settled = Vec::new();
        for idx in self.by_birth.values().flatten() {
            let profile = self.profiles.get_mut(idx).expect("indexed profile");
            if profile.settle(round, self.quorum, self.w_max) {
                settled.push(profile.target);
            }
        }
        settled
    }

    /// `C_X(t)` for an active AUF.
    pub fn visibility(&self, x: &Digest, t: Round) -> Result<u32, VisibilityError> {
        let profile = self.profile_of(x).ok_or(VisibilityError::UnknownAuf(*x))?;
        profile
            .count_at(t)
            .ok_or(VisibilityError::RoundNotRecorded {
                digest: *x,
                round: t,
            })
    }

    /// Drops an AUF from the active set and returns its final profile.
    pub fn release(&mut self, idx: VertexIdx) -> Option<VisibilityProfile> {
        let profile = self.profiles.remove(&idx)?;
        self.by_digest.remove(&profile.target);
        let slot = self.slot_of.remove(&idx).expect("active AUFs hold a slot");
        let (word, mask) = (slot / 64, !(1u64 << (slot % 64)));
        for bits in self.reach.values_mut() {
            if let Some(w) = bits.get_mut(word) {
                *w &= mask;
            }
        }
        self.free_slots.push(slot);
        if let Some(members) = self.by_birth.get_mut(&profile.birth_round) {
            members.retain(|m| *m != idx);
            if members.is_empty() {
                self.by_birth.remove(&profile.birth_round);
            }
        }
        Some(profile)
    }
}
