//! Slice sealing, precedence-graph assembly and deterministic linearization.
//!
//! Vertices of a [`PrecedenceGraph`] are the slice members sorted by
//! [`CompletionKey`], so a member's position doubles as its completion rank:
//! comparing positions is comparing keys.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comparator::{PairTable, Verdict};
use crate::dag::{CreatorId, DagStore, Digest, Round, VertexIdx};
use crate::visibility::VisibilityProfile;

/// Deterministic completion key, compared as `(round, creator, digest)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CompletionKey {
    pub round: Round,
    pub creator: CreatorId,
    pub digest: Digest,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LinearizerError {
    #[error("stopping time of member {0} not settled")]
    UnsettledMember(Digest),
    #[error("pair ({0}, {1}) has no frozen verdict")]
    UnfrozenPair(Digest, Digest),
    #[error("slice has no members")]
    EmptySlice,
}

/// `T(S)`: the largest member stopping time.
pub fn slice_sealing_time<'a>(
    members: impl IntoIterator<Item = &'a VisibilityProfile>,
) -> Result<Round, LinearizerError> {
    let mut sealing: Option<Round> = None;
    for p in members {
        let h = p
            .stopping_time
            .ok_or(LinearizerError::UnsettledMember(p.target))?;
        sealing = Some(sealing.map_or(h, |s| s.max(h)));
    }
    sealing.ok_or(LinearizerError::EmptySlice)
}

/// Slice-local precedence graph over member positions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrecedenceGraph {
    /// Members sorted by completion key.
    pub members: Vec<CompletionKey>,
    /// `(ancestor, descendant)` position pairs.
    pub causal: BTreeSet<(usize, usize)>,
    /// `(earlier, later)` position pairs mirroring frozen edge verdicts.
    pub svp: BTreeSet<(usize, usize)>,
}

impl PrecedenceGraph {
    pub fn edgeless(mut members: Vec<CompletionKey>) -> PrecedenceGraph {
        members.sort();
        PrecedenceGraph {
            members,
            causal: BTreeSet::new(),
            svp: BTreeSet::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn digest(&self, pos: usize) -> Digest {
        self.members[pos].digest
    }

    pub fn causal_digest_edges(&self) -> Vec<(Digest, Digest)> {
        self.causal
            .iter()
            .map(|&(a, b)| (self.digest(a), self.digest(b)))
            .collect()
    }

    pub fn svp_digest_edges(&self) -> Vec<(Digest, Digest)> {
        self.svp
            .iter()
            .map(|&(a, b)| (self.digest(a), self.digest(b)))
            .collect()
    }
}

/// Assembles causal and evidence edges for a fully frozen slice.
pub fn build_precedence_graph(
    table: &PairTable,
    store: &DagStore,
) -> Result<PrecedenceGraph, LinearizerError> {
    let members = table.members();
    let k = members.len();
    let mut svp = BTreeSet::new();
    for i in 0..k {
        for j in i + 1..k {
            match table.verdict_at(i, j) {
                None => {
                    return Err(LinearizerError::UnfrozenPair(
                        members[i].1.digest,
                        members[j].1.digest,
                    ))
                }
                Some(Verdict::EdgeForward) => {
                    svp.insert((i, j));
                }
                Some(Verdict::EdgeBackward) => {
                    svp.insert((j, i));
                }
                Some(_) => {}
            }
        }
    }

    let position: HashMap<VertexIdx, usize> = members
        .iter()
        .enumerate()
        .map(|(pos, (idx, _))| (*idx, pos))
        .collect();
    let floor = members
        .iter()
        .map(|(_, key)| key.round)
        .min()
        .unwrap_or(Round::GENESIS);
    let mut causal = BTreeSet::new();
    for (pos, (idx, _)) in members.iter().enumerate() {
        for anc in store.bounded_ancestors_idx(*idx, floor) {
            if anc == *idx {
                continue;
            }
            if let Some(&anc_pos) = position.get(&anc) {
                causal.insert((anc_pos, pos));
            }
        }
    }

    Ok(PrecedenceGraph {
        members: members.iter().map(|(_, key)| *key).collect(),
        causal,
        svp,
    })
}

/// Final order of one slice.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceOrder {
    pub slice_index: u64,
    pub ordered: Vec<Digest>,
    /// Evidence edges whose endpoints fell in distinct strongly connected components.
    pub enforceable_svp: Vec<(Digest, Digest)>,
}

impl SliceOrder {
    /// Whether every enforceable edge is respected by `ordered`.
    pub fn preserves_enforceable(&self) -> bool {
        let pos: HashMap<&Digest, usize> = self
            .ordered
            .iter()
            .enumerate()
            .map(|(i, d)| (d, i))
            .collect();
        self.enforceable_svp
            .iter()
            .all(|(a, b)| match (pos.get(a), pos.get(b)) {
                (Some(x), Some(y)) => x < y,
                _ => false,
            })
    }
}

/// Intermediate result of linearization, in member positions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Linearization {
    /// Component id per member position; ids are in emission order.
    pub component_of: Vec<usize>,
    pub order: Vec<usize>,
    pub enforceable: Vec<(usize, usize)>,
}

/// Condenses strongly connected components of `causal ∪ svp`, orders the
/// condensation by smallest eligible component key, and orders each component
/// by its causal subgraph with key tie-breaks.
pub fn linearize(graph: &PrecedenceGraph) -> Linearization {
    let k = graph.len();
    let mut adj = vec![Vec::new(); k];
    for &(a, b) in graph.causal.iter().chain(graph.svp.iter()) {
        adj[a].push(b);
    }
    for out in &mut adj {
        out.sort_unstable();
        out.dedup();
    }
    let (raw_comp, ncomp) = strongly_connected(&adj);

    let mut comp_members = vec![Vec::new(); ncomp];
    for (v, &c) in raw_comp.iter().enumerate() {
        comp_members[c].push(v);
    }
    // smallest member position is the component key
    let comp_key: Vec<usize> = comp_members.iter().map(|m| m[0]).collect();

    let mut succ: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); ncomp];
    for (a, outs) in adj.iter().enumerate() {
        for &b in outs {
            if raw_comp[a] != raw_comp[b] {
                succ[raw_comp[a]].insert(raw_comp[b]);
            }
        }
    }
    let comp_order = min_key_topological(ncomp, &succ, |c| comp_key[c]);

    let mut causal_succ: Vec<Vec<usize>> = vec![Vec::new(); k];
    for &(a, b) in &graph.causal {
        if raw_comp[a] == raw_comp[b] {
            causal_succ[a].push(b);
        }
    }

    let mut component_of = vec![0; k];
    let mut order = Vec::with_capacity(k);
    for (rank, &c) in comp_order.iter().enumerate() {
        let members = &comp_members[c];
        for &m in members {
            component_of[m] = rank;
        }
        if members.len() == 1 {
            order.push(members[0]);
            continue;
        }
        let local: HashMap<usize, usize> =
            members.iter().enumerate().map(|(i, &m)| (m, i)).collect();
        let local_succ: Vec<BTreeSet<usize>> = members
            .iter()
            .map(|&m| causal_succ[m].iter().map(|s| local[s]).collect())
            .collect();
        for i in min_key_topological(members.len(), &local_succ, |i| members[i]) {
            order.push(members[i]);
        }
    }

    let enforceable = graph
        .svp
        .iter()
        .copied()
        .filter(|&(a, b)| component_of[a] != component_of[b])
        .collect();
    Linearization {
        component_of,
        order,
        enforceable,
    }
}

/// [`linearize`] expressed over digests.
pub fn condense_and_linearize(graph: &PrecedenceGraph, slice_index: u64) -> SliceOrder {
    let lin = linearize(graph);
    SliceOrder {
        slice_index,
        ordered: lin.order.iter().map(|&p| graph.digest(p)).collect(),
        enforceable_svp: lin
            .enforceable
            .iter()
            .map(|&(a, b)| (graph.digest(a), graph.digest(b)))
            .collect(),
    }
}

/// Kahn's algorithm that always emits the eligible node with the smallest key,
/// yielding the lexicographically smallest topological order.
fn min_key_topological(
    n: usize,
    succ: &[BTreeSet<usize>],
    key: impl Fn(usize) -> usize,
) -> Vec<usize> {
    let mut indegree = vec![0usize; n];
    for outs in succ {
        for &b in outs {
            indegree[b] += 1;
        }
    }
    let mut ready: BinaryHeap<Reverse<(usize, usize)>> = (0..n)
        .filter(|&v| indegree[v] == 0)
        .map(|v| Reverse((key(v), v)))
        .collect();
    let mut out = Vec::with_capacity(n);
    while let Some(Reverse((_, v))) = ready.pop() {
        out.push(v);
        for &b in &succ[v] {
            indegree[b] -= 1;
            if indegree[b] == 0 {
                ready.push(Reverse((key(b), b)));
            }
        }
    }
    debug_assert_eq!(out.len(), n, "condensation must be acyclic");
    out
}

/// Iterative Tarjan. Returns a component id per vertex and the component count.
fn strongly_connected(adj: &[Vec<usize>]) -> (Vec<usize>, usize) {
    const UNVISITED: usize = usize::MAX;
    let n = adj.len();
    let mut index = vec![UNVISITED; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut comp = vec![UNVISITED; n];
    let mut stack = Vec::new();
    let mut next_index = 0;
    let mut ncomp = 0;
    // (vertex, next edge to explore)
    let mut frames: Vec<(usize, usize)> = Vec::new();

    for root in 0..n {
        if index[root] != UNVISITED {
            continue;
        }
        frames.push((root, 0));
        while let Some(&mut (v, ref mut edge)) = frames.last_mut() {
            if *edge == 0 && index[v] == UNVISITED {
                index[v] = next_index;
                low[v] = next_index;
                next_index += 1;
                stack.push(v);
                on_stack[v] = true;
            }
            if let Some(&w) = adj[v].get(*edge) {
                *edge += 1;
                if index[w] == UNVISITED {
                    frames.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
                continue;
            }
            frames.pop();
            if let Some(&(parent, _)) = frames.last() {
                low[parent] = low[parent].min(low[v]);
            }
            if low[v] == index[v] {
                loop {
                    let w = stack.pop().expect("component root on stack");
                    on_stack[w] = false;
                    comp[w] = ncomp;
                    if w == v {
                        break;
                    }
                }
                ncomp += 1;
            }
        }
    }
    (comp, ncomp)
}
