//! Committed DAG prefix: vertex metadata, content digests and ancestry queries.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

/// Index of a vertex creator (replica) in `[0, n)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CreatorId(pub u32);

impl fmt::Display for CreatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

/// DAG round number; genesis is round 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Round(pub u64);

impl Round {
    pub const GENESIS: Round = Round(0);

    pub fn next(self) -> Round {
        Round(self.0 + 1)
    }

    /// `self - by`, clamped at genesis.
    pub fn saturating_sub(self, by: u64) -> Round {
        Round(self.0.saturating_sub(by))
    }
}

impl fmt::Display for Round {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

/// 32-byte content digest identifying an AUF.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Digest, hex::FromHexError> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out)?;
        Ok(Digest(out))
    }

    /// First four bytes in hex, for logs and error messages.
    pub fn short(&self) -> String {
        hex::encode(&self.0[..4])
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.short())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.short())
    }
}

impl Serialize for Digest {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Digest::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// Metadata of one committed DAG vertex (an atomic unit of fairness).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AufMeta {
    pub digest: Digest,
    pub creator: CreatorId,
    pub round: Round,
    /// Sorted, deduplicated.
    pub parents: Vec<Digest>,
    pub payload_size: u64,
}

impl AufMeta {
    /// Builds a vertex and derives its digest from the remaining fields.
    pub fn new(
        creator: CreatorId,
        round: Round,
        mut parents: Vec<Digest>,
        payload_size: u64,
    ) -> AufMeta {
        parents.sort_unstable();
        parents.dedup();
        let digest = content_digest(creator, round, &parents, payload_size);
        AufMeta {
            digest,
            creator,
            round,
            parents,
            payload_size,
        }
    }

    /// Whether the stored digest matches the content hash.
    pub fn digest_is_valid(&self) -> bool {
        let mut parents = self.parents.clone();
        parents.sort_unstable();
        parents.dedup();
        parents == self.parents
            && content_digest(self.creator, self.round, &parents, self.payload_size) == self.digest
    }
}

/// SHA-256 over `(creator, round, sorted parents, payload_size)` in big-endian.
pub fn content_digest(
    creator: CreatorId,
    round: Round,
    sorted_parents: &[Digest],
    payload_size: u64,
) -> Digest {
    let mut hasher = Sha256::new();
    hasher.update(b"mrv-auf-v1");
    hasher.update(creator.0.to_be_bytes());
    hasher.update(round.0.to_be_bytes());
    hasher.update((sorted_parents.len() as u32).to_be_bytes());
    for p in sorted_parents {
        hasher.update(p.0);
    }
    hasher.update(payload_size.to_be_bytes());
    Digest(hasher.finalize().into())
}

/// Dense per-store vertex index, assigned in insertion order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VertexIdx(pub u32);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DagError {
    #[error("vertex {child} references unknown parent {parent}")]
    MissingParent { child: Digest, parent: Digest },
    #[error("creator {creator} already has a vertex at {round}")]
    DuplicateCreatorRound { creator: CreatorId, round: Round },
    #[error("vertex {child} at {round} references parent {parent} at {parent_round}")]
    BadParentRound {
        child: Digest,
        round: Round,
        parent: Digest,
        parent_round: Round,
    },
    #[error("vertex {digest} at {round} has {got} parents, certification needs {need}")]
    InsufficientParents {
        digest: Digest,
        round: Round,
        got: usize,
        need: usize,
    },
    #[error("vertex at {round} is ahead of frontier {frontier:?}")]
    AheadOfFrontier {
        round: Round,
        frontier: Option<Round>,
    },
    #[error("digest {0} does not match vertex content")]
    DigestMismatch(Digest),
    #[error("digest {0} already stored")]
    DuplicateDigest(Digest),
    #[error("unknown digest {0}")]
    UnknownDigest(Digest),
    #[error("round {round} committed out of order (frontier {frontier:?})")]
    NonConsecutiveCommit {
        round: Round,
        frontier: Option<Round>,
    },
}

/// Monotonically growing committed DAG prefix.
#[derive(Clone, Debug)]
pub struct DagStore {
    vertices: Vec<AufMeta>,
    parent_idx: Vec<Vec<VertexIdx>>,
    by_digest: HashMap<Digest, VertexIdx>,
    by_creator_round: HashMap<(CreatorId, Round), VertexIdx>,
    frontier: Option<Round>,
    min_parents: usize,
}

impl DagStore {
    /// A store that requires `min_parents` parents on every non-genesis vertex
    /// (`2f+1` for certified vertices).
    pub fn new(min_parents: usize) -> DagStore {
        DagStore {
            vertices: Vec::new(),
            parent_idx: Vec::new(),
            by_digest: HashMap::new(),
            by_creator_round: HashMap::new(),
            frontier: None,
            min_parents,
        }
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Highest round whose commit has been applied.
    pub fn frontier(&self) -> Option<Round> {
        self.frontier
    }

    pub fn insert_vertex(&mut self, meta: AufMeta) -> Result<VertexIdx, DagError> {
        let limit = self.frontier.map_or(Round::GENESIS, Round::next);
        if meta.round > limit {
            return Err(DagError::AheadOfFrontier {
                round: meta.round,
                frontier: self.frontier,
            });
        }
        if !meta.digest_is_valid() {
            return Err(DagError::DigestMismatch(meta.digest));
        }
        if self.by_digest.contains_key(&meta.digest) {
            return Err(DagError::DuplicateDigest(meta.digest));
        }
        if self
            .by_creator_round
            .contains_key(&(meta.creator, meta.round))
        {
            return Err(DagError::DuplicateCreatorRound {
                creator: meta.creator,
                round: meta.round,
            });
        }
        let mut parents = Vec::with_capacity(meta.parents.len());
        for p in &meta.parents {
            let idx = *self.by_digest.get(p).ok_or(DagError::MissingParent {
                child: meta.digest,
                parent: *p,
            })?;
            let parent_round = self.vertices[idx.0 as usize].round;
            if meta.round.0 == 0 || parent_round.0 + 1 != meta.round.0 {
                return Err(DagError::BadParentRound {
                    child: meta.digest,
                    round: meta.round,
                    parent: *p,
                    parent_round,
                });
            }
            parents.push(idx);
        }
        if meta.round.0 > 0 && parents.len() < self.min_parents {
            return Err(DagError::InsufficientParents {
                digest: meta.digest,
                round: meta.round,
                got: parents.len(),
                need: self.min_parents,
            });
        }
        let idx = VertexIdx(self.vertices.len() as u32);
        self.by_digest.insert(meta.digest, idx);
        self.by_creator_round
            .insert((meta.creator, meta.round), idx);
        self.vertices.push(meta);
        self.parent_idx.push(parents);
        Ok(idx)
    }

    /// Marks `round` as committed. Rounds must be committed consecutively from genesis.
    pub fn commit_round(&mut self, round: Round) -> Result<(), DagError> {
        let expected = self.frontier.map_or(Round::GENESIS, Round::next);
        if round != expected {
            return Err(DagError::NonConsecutiveCommit {
                round,
                frontier: self.frontier,
            });
        }
        self.frontier = Some(round);
        Ok(())
    }

    pub fn index_of(&self, digest: &Digest) -> Result<VertexIdx, DagError> {
        self.by_digest
            .get(digest)
            .copied()
            .ok_or(DagError::UnknownDigest(*digest))
    }

    pub fn contains(&self, digest: &Digest) -> bool {
        self.by_digest.contains_key(digest)
    }

    pub fn meta(&self, idx: VertexIdx) -> &AufMeta {
        &self.vertices[idx.0 as usize]
    }

    pub fn get(&self, digest: &Digest) -> Result<&AufMeta, DagError> {
        Ok(self.meta(self.index_of(digest)?))
    }

    pub fn parents_of(&self, idx: VertexIdx) -> &[VertexIdx] {
        &self.parent_idx[idx.0 as usize]
    }

    pub fn at(&self, creator: CreatorId, round: Round) -> Option<&AufMeta> {
        self.by_creator_round
            .get(&(creator, round))
            .map(|idx| self.meta(*idx))
    }

    /// True iff `a` is in the reflexive ancestor closure of `b`.
    pub fn is_ancestor(&self, a: &Digest, b: &Digest) -> Result<bool, DagError> {
        let a_idx = self.index_of(a)?;
        let b_idx = self.index_of(b)?;
        Ok(self.is_ancestor_idx(a_idx, b_idx))
    }

    pub fn is_ancestor_idx(&self, a: VertexIdx, b: VertexIdx) -> bool {
        if a == b {
            return true;
        }
        let floor = self.meta(a).round;
        if floor >= self.meta(b).round {
            return false;
        }
        self.walk_ancestors(b, floor, |v| v == a)
    }

    /// All ancestors of `start` (inclusive) whose round is at least `floor_round`.
    pub fn bounded_ancestors(
        &self,
        start: &Digest,
        floor_round: Round,
    ) -> Result<HashSet<Digest>, DagError> {
        let idx = self.index_of(start)?;
        Ok(self
            .bounded_ancestors_idx(idx, floor_round)
            .into_iter()
            .map(|v| self.meta(v).digest)
            .collect())
    }

    pub fn bounded_ancestors_idx(&self, start: VertexIdx, floor_round: Round) -> Vec<VertexIdx> {
        let mut out = Vec::new();
        self.walk_ancestors(start, floor_round, |v| {
            out.push(v);
            false
        });
        out
    }

    /// Depth-first walk over ancestors at or above `floor`; stops early when `visit` returns true.
    fn walk_ancestors(
        &self,
        start: VertexIdx,
        floor: Round,
        mut visit: impl FnMut(VertexIdx) -> bool,
    ) -> bool {
        if self.meta(start).round < floor {
            return false;
        }
        let mut seen = HashSet::new();
        let mut stack = vec![start];
        seen.insert(start);
        while let Some(v) = stack.pop() {
            if visit(v) {
                return true;
            }
            for &p in self.parents_of(v) {
                if self.meta(p).round >= floor && seen.insert(p) {
                    stack.push(p);
                }
            }
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn genesis(c: u32) -> AufMeta {
        AufMeta::new(CreatorId(c), Round(0), vec![], 0)
    }

    fn child(c: u32, round: u64, parents: &[&AufMeta]) -> AufMeta {
        AufMeta::new(
            CreatorId(c),
            Round(round),
            parents.iter().map(|p| p.digest).collect(),
            0,
        )
    }

    /// Store with relaxed certification so chains and diamonds are expressible.
    fn relaxed() -> DagStore {
        DagStore::new(1)
    }

    fn insert_round(store: &mut DagStore, round: u64, metas: &[&AufMeta]) {
        for m in metas {
            store.insert_vertex((*m).clone()).unwrap();
        }
        store.commit_round(Round(round)).unwrap();
    }

    /// Reflexive ancestor closure by plain recursion; used as an oracle.
    fn naive_closure(store: &DagStore, v: VertexIdx, out: &mut HashSet<VertexIdx>) {
        if out.insert(v) {
            for &p in store.parents_of(v) {
                naive_closure(store, p, out);
            }
        }
    }

    #[test]
    fn genesis_vertex_is_stored() {
        let mut store = relaxed();
        let g = genesis(0);
        let idx = store.insert_vertex(g.clone()).unwrap();
        assert_eq!(store.get(&g.digest).unwrap(), &g);
        assert_eq!(store.at(CreatorId(0), Round(0)).unwrap().digest, g.digest);
        assert_eq!(store.index_of(&g.digest).unwrap(), idx);
    }

    #[test]
    fn parent_two_rounds_back_is_rejected() {
        let mut store = relaxed();
        let g = genesis(0);
        insert_round(&mut store, 0, &[&g]);
        let r1 = child(0, 1, &[&g]);
        insert_round(&mut store, 1, &[&r1]);
        let r2 = child(0, 2, &[&r1]);
        insert_round(&mut store, 2, &[&r2]);
        let bad = child(1, 3, &[&r1]);
        assert!(matches!(
            store.insert_vertex(bad),
            Err(DagError::BadParentRound { .. })
        ));
    }

    #[test]
    fn second_vertex_for_creator_round_is_rejected() {
        let mut store = relaxed();
        let gs: Vec<_> = (0..3).map(genesis).collect();
        insert_round(&mut store, 0, &gs.iter().collect::<Vec<_>>());
        let a = child(1, 1, &[&gs[0]]);
        insert_round(&mut store, 1, &[&a]);
        let first = child(1, 2, &[&a]);
        store.insert_vertex(first).unwrap();
        let second = AufMeta::new(CreatorId(1), Round(2), vec![a.digest], 99);
        assert_eq!(
            store.insert_vertex(second),
            Err(DagError::DuplicateCreatorRound {
                creator: CreatorId(1),
                round: Round(2)
            })
        );
    }

    #[test]
    fn missing_parent_and_quorum_are_enforced() {
        let mut store = DagStore::new(3);
        let gs: Vec<_> = (0..4).map(genesis).collect();
        insert_round(&mut store, 0, &gs.iter().collect::<Vec<_>>());
        let ghost = AufMeta::new(CreatorId(9), Round(0), vec![], 7);
        let orphan = child(0, 1, &[&gs[0], &gs[1], &ghost]);
        assert!(matches!(
            store.insert_vertex(orphan),
            Err(DagError::MissingParent { .. })
        ));
        let thin = child(0, 1, &[&gs[0], &gs[1]]);
        assert!(matches!(
            store.insert_vertex(thin),
            Err(DagError::InsufficientParents {
                got: 2,
                need: 3,
                ..
            })
        ));
        let ok = child(0, 1, &[&gs[0], &gs[1], &gs[2]]);
        store.insert_vertex(ok).unwrap();
    }

    #[test]
    fn rounds_beyond_frontier_and_tampered_digests_are_rejected() {
        let mut store = relaxed();
        let g = genesis(0);
        insert_round(&mut store, 0, &[&g]);
        let far = AufMeta::new(CreatorId(1), Round(2), vec![], 0);
        assert!(matches!(
            store.insert_vertex(far),
            Err(DagError::AheadOfFrontier { .. })
        ));
        let mut tampered = child(0, 1, &[&g]);
        tampered.payload_size = 5;
        assert!(matches!(
            store.insert_vertex(tampered),
            Err(DagError::DigestMismatch(_))
        ));
        assert!(matches!(
            store.commit_round(Round(2)),
            Err(DagError::NonConsecutiveCommit { .. })
        ));
    }

    #[test]
    fn ancestry_basics() {
        let mut store = relaxed();
        let a = genesis(0);
        let b = genesis(1);
        insert_round(&mut store, 0, &[&a, &b]);
        let c = child(0, 1, &[&a]);
        insert_round(&mut store, 1, &[&c]);
        assert!(store.is_ancestor(&a.digest, &a.digest).unwrap());
        assert!(store.is_ancestor(&a.digest, &c.digest).unwrap());
        assert!(!store.is_ancestor(&c.digest, &a.digest).unwrap());
        assert!(!store.is_ancestor(&a.digest, &b.digest).unwrap());
        assert!(!store.is_ancestor(&b.digest, &c.digest).unwrap());
        let ghost = AufMeta::new(CreatorId(7), Round(0), vec![], 1);
        assert_eq!(
            store.is_ancestor(&ghost.digest, &a.digest),
            Err(DagError::UnknownDigest(ghost.digest))
        );
    }

    #[test]
    fn bounded_ancestors_own_round_is_singleton() {
        let mut store = relaxed();
        let a = genesis(0);
        insert_round(&mut store, 0, &[&a]);
        let c = child(0, 1, &[&a]);
        insert_round(&mut store, 1, &[&c]);
        let got = store.bounded_ancestors(&c.digest, Round(1)).unwrap();
        assert_eq!(got, HashSet::from([c.digest]));
    }

    #[test]
    fn bounded_ancestors_on_chain() {
        // chain r0..r4; floor two rounds below the start keeps r2, r3, r4
        let mut store = relaxed();
        let mut chain = vec![genesis(0)];
        insert_round(&mut store, 0, &[&chain[0]]);
        for r in 1..5u64 {
            let next = child(0, r, &[chain.last().unwrap()]);
            insert_round(&mut store, r, &[&next]);
            chain.push(next);
        }
        let got = store.bounded_ancestors(&chain[4].digest, Round(2)).unwrap();
        assert_eq!(got.len(), 3);
        let mut oracle = HashSet::new();
        naive_closure(
            &store,
            store.index_of(&chain[4].digest).unwrap(),
            &mut oracle,
        );
        let expected: HashSet<Digest> = oracle
            .into_iter()
            .map(|v| store.meta(v))
            .filter(|m| m.round >= Round(2))
            .map(|m| m.digest)
            .collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn bounded_ancestors_on_diamond_counts_grandparent_once() {
        let mut store = relaxed();
        let g = genesis(0);
        insert_round(&mut store, 0, &[&g]);
        let left = child(0, 1, &[&g]);
        let right = child(1, 1, &[&g]);
        insert_round(&mut store, 1, &[&left, &right]);
        let top = child(0, 2, &[&left, &right]);
        insert_round(&mut store, 2, &[&top]);
        let got = store.bounded_ancestors(&top.digest, Round(0)).unwrap();
        assert_eq!(got.len(), 4);
        let mut oracle = HashSet::new();
        naive_closure(&store, store.index_of(&top.digest).unwrap(), &mut oracle);
        assert_eq!(oracle.len(), 4);
    }

    #[test]
    fn digest_is_insertion_order_independent() {
        let a = genesis(0);
        let b = genesis(1);
        let x = AufMeta::new(CreatorId(2), Round(1), vec![a.digest, b.digest], 3);
        let y = AufMeta::new(CreatorId(2), Round(1), vec![b.digest, a.digest], 3);
        assert_eq!(x.digest, y.digest);
        assert_ne!(
            x.digest,
            AufMeta::new(CreatorId(3), Round(1), vec![a.digest], 3).digest
        );
        assert_eq!(Digest::from_hex(&x.digest.to_hex()).unwrap(), x.digest);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        /// Random layered DAG with up to `max_rounds` rounds of up to 4 creators.
        fn arb_store() -> impl Strategy<Value = DagStore> {
            (1usize..=4, 1usize..=8, any::<u64>()).prop_map(|(width, rounds, seed)| {
                let mut bits = seed;
                let mut take = || {
                    bits = bits.rotate_left(7) ^ 0x9E37_79B9_7F4A_7C15;
                    bits
                };
                let mut store = relaxed();
                let mut prev: Vec<AufMeta> = Vec::new();
                for r in 0..rounds as u64 {
                    let mut cur = Vec::new();
                    for c in 0..width as u32 {
                        let parents: Vec<Digest> = if r == 0 {
                            vec![]
                        } else {
                            let mut ps: Vec<Digest> = prev
                                .iter()
                                .filter(|_| take() % 3 != 0)
                                .map(|m| m.digest)
                                .collect();
                            if ps.is_empty() {
                                ps.push(prev[(take() as usize) % prev.len()].digest);
                            }
                            ps
                        };
                        let m = AufMeta::new(CreatorId(c), Round(r), parents, take() % 16);
                        store.insert_vertex(m.clone()).unwrap();
                        cur.push(m);
                    }
                    store.commit_round(Round(r)).unwrap();
                    prev = cur;
                }
                store
            })
        }

        proptest! {
            #[test]
            fn ancestry_is_a_partial_order(store in arb_store()) {
                let n = store.len() as u32;
                let idx = |i: u32| VertexIdx(i);
                for a in 0..n {
                    for b in 0..n {
                        let ab = store.is_ancestor_idx(idx(a), idx(b));
                        if a != b && ab {
                            prop_assert!(store.meta(idx(a)).round < store.meta(idx(b)).round);
                            prop_assert!(!store.is_ancestor_idx(idx(b), idx(a)));
                        }
                        if !ab { continue; }
                        for c in 0..n {
                            if store.is_ancestor_idx(idx(b), idx(c)) {
                                prop_assert!(store.is_ancestor_idx(idx(a), idx(c)));
                            }
                        }
                    }
                }
            }

            #[test]
            fn unbounded_walk_matches_naive_closure(store in arb_store()) {
                for v in 0..store.len() as u32 {
                    let start = VertexIdx(v);
                    let mut oracle = HashSet::new();
                    naive_closure(&store, start, &mut oracle);
                    let got: HashSet<VertexIdx> =
                        store.bounded_ancestors_idx(start, Round(0)).into_iter().collect();
                    prop_assert_eq!(got, oracle);
                }
            }
        }
    }
}
