//! Brute-force reference evaluation over a fully materialized DAG.
//!
//! Nothing here is incremental. Every vertex gets its complete reflexive
//! ancestor set, every `C_X(t)` is counted from scratch, stopping times are
//! read off the min-set definition, and verdicts come from the precedence
//! predicate itself rather than from a scan loop. Strongly connected
//! components are found by mutual reachability, and small slices are ordered
//! by enumerating every topological order of the condensation.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

use crate::comparator::Verdict;
use crate::dag::{CreatorId, Digest, Round};
use crate::engine::EngineReport;
use crate::exporter::{ExporterError, ExporterEvent, RunConfig, StreamValidator};
use crate::linearizer::{CompletionKey, SliceOrder};

/// Slices up to this size are ordered by exhaustive enumeration.
pub const ENUMERATION_LIMIT: usize = 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("invalid log: {0}")]
    InvalidLog(String),
    #[error("config mismatch: engine {engine:?}, oracle {oracle:?}")]
    ConfigMismatch {
        engine: Option<RunConfig>,
        oracle: RunConfig,
    },
}

impl From<ExporterError> for OracleError {
    fn from(e: ExporterError) -> Self {
        OracleError::InvalidLog(e.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OracleAuf {
    pub key: CompletionKey,
    /// `counts[i]` is `C_X(r(X) + i)` up to the last committed round.
    pub counts: Vec<u32>,
    pub stopping_time: Option<Round>,
    pub mature: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OracleSlice {
    pub order: SliceOrder,
    pub sealing_time: Round,
    /// Whether the order came from exhaustive enumeration.
    pub enumerated: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OracleReport {
    pub config: RunConfig,
    pub last_round: Option<Round>,
    pub aufs: BTreeMap<Digest, OracleAuf>,
    pub verdicts: BTreeMap<(Digest, Digest), Verdict>,
    pub slices: BTreeMap<u64, OracleSlice>,
}

impl OracleReport {
    pub fn is_empty(&self) -> bool {
        self.aufs.is_empty() && self.slices.is_empty()
    }

    pub fn count(&self, x: &Digest, t: Round) -> Option<u32> {
        let auf = self.aufs.get(x)?;
        let offset = t.0.checked_sub(auf.key.round.0)?;
        auf.counts.get(offset as usize).copied()
    }
}

struct Vertex {
    key: CompletionKey,
    ancestors: BTreeSet<usize>,
}

/// Evaluates every definition directly from the event stream.
pub fn oracle_evaluate(
    events: &[ExporterEvent],
    config: &RunConfig,
) -> Result<OracleReport, OracleError> {
    config.validate()?;
    let mut validator = StreamValidator::new(Some(config));
    let mut vertices: Vec<Vertex> = Vec::new();
    let mut index: HashMap<Digest, usize> = HashMap::new();
    let mut by_round: Vec<Vec<usize>> = Vec::new();
    let mut slices: Vec<(u64, Vec<Digest>)> = Vec::new();

    for ev in events {
        validator.admit(ev)?;
        match ev {
            ExporterEvent::RoundCommitted { round, canonical } => {
                let mut this_round = Vec::new();
                for meta in canonical {
                    if !meta.digest_is_valid() {
                        return Err(OracleError::InvalidLog(format!(
                            "digest {} does not match content",
                            meta.digest
                        )));
                    }
                    let mut ancestors = BTreeSet::new();
                    for p in &meta.parents {
                        let &pi = index.get(p).ok_or_else(|| {
                            OracleError::InvalidLog(format!("missing parent {p}"))
                        })?;
                        if vertices[pi].key.round.0 + 1 != round.0 {
                            return Err(OracleError::InvalidLog(format!(
                                "parent {p} of {} is not from the previous round",
                                meta.digest
                            )));
                        }
                        ancestors.extend(vertices[pi].ancestors.iter().copied());
                    }
                    let id = vertices.len();
                    ancestors.insert(id);
                    index.insert(meta.digest, id);
                    vertices.push(Vertex {
                        key: CompletionKey {
                            round: meta.round,
                            creator: meta.creator,
                            digest: meta.digest,
                        },
                        ancestors,
                    });
                    this_round.push(id);
                }
                by_round.push(this_round);
            }
            ExporterEvent::SliceDelivered {
                slice_index,
                members,
            } => slices.push((*slice_index, members.clone())),
        }
    }

    let last_round = by_round.len().checked_sub(1).map(|r| Round(r as u64));
    let quorum = config.quorum();

    // C_X(t): creators whose canonical round-t vertex has X among its ancestors.
    let count = |x: usize, t: usize| -> u32 {
        let creators: BTreeSet<CreatorId> = by_round[t]
            .iter()
            .filter(|&&y| vertices[y].ancestors.contains(&x))
            .map(|&y| vertices[y].key.creator)
            .collect();
        creators.len() as u32
    };

    let mut aufs = BTreeMap::new();
    for (x, v) in vertices.iter().enumerate() {
        let birth = v.key.round.0 as usize;
        let counts: Vec<u32> = (birth..by_round.len()).map(|t| count(x, t)).collect();
        let cap = birth as u64 + config.w_max;
        // min({t >= r(X) : C_X(t) >= 2f+1} ∪ {r(X) + W_max}), decidable only
        // once the log reaches the chosen round
        let mut candidates: BTreeSet<u64> = counts
            .iter()
            .enumerate()
            .filter(|(_, c)| **c >= quorum)
            .map(|(i, _)| (birth + i) as u64)
            .collect();
        let last = last_round.map(|r| r.0);
        let cap_known = last.is_some_and(|l| l >= cap);
        if cap_known {
            candidates.insert(cap);
        }
        let h = candidates.first().copied().filter(|&h| h <= cap);
        let stopping_time = h.map(Round);
        let mature = h.map(|h| counts[(h as usize) - birth] >= quorum);
        aufs.insert(
            v.key.digest,
            OracleAuf {
                key: v.key,
                counts,
                stopping_time,
                mature,
            },
        );
    }

    let mut verdicts = BTreeMap::new();
    let mut sealed = BTreeMap::new();
    for (slice_index, members) in slices {
        let mut keys: Vec<CompletionKey> = members.iter().map(|d| aufs[d].key).collect();
        keys.sort();
        let mut slice_verdicts = BTreeMap::new();
        for i in 0..keys.len() {
            for j in i + 1..keys.len() {
                let (a, b) = (&aufs[&keys[i].digest], &aufs[&keys[j].digest]);
                if let Some(v) = oracle_verdict(a, b, config.f, last_round) {
                    slice_verdicts.insert((i, j), v);
                    verdicts.insert((keys[i].digest, keys[j].digest), v);
                }
            }
        }
        let all_settled = keys.iter().all(|k| aufs[&k.digest].stopping_time.is_some());
        let total_pairs = keys.len() * keys.len().saturating_sub(1) / 2;
        if !all_settled || slice_verdicts.len() != total_pairs {
            continue;
        }
        let sealing_time = keys
            .iter()
            .filter_map(|k| aufs[&k.digest].stopping_time)
            .max()
            .expect("non-empty slice");
        if last_round.is_none_or(|l| l < sealing_time) {
            continue;
        }
        let ids: Vec<usize> = keys.iter().map(|k| index[&k.digest]).collect();
        let mut causal = BTreeSet::new();
        for (i, &a) in ids.iter().enumerate() {
            for (j, &b) in ids.iter().enumerate() {
                if i != j && vertices[b].ancestors.contains(&a) {
                    causal.insert((i, j));
                }
            }
        }
        let svp: BTreeSet<(usize, usize)> = slice_verdicts
            .iter()
            .filter_map(|(&(i, j), v)| match v {
                Verdict::EdgeForward => Some((i, j)),
                Verdict::EdgeBackward => Some((j, i)),
                _ => None,
            })
            .collect();
        let (order, enforceable, enumerated) = oracle_linearize(keys.len(), &causal, &svp);
        sealed.insert(
            slice_index,
            OracleSlice {
                order: SliceOrder {
                    slice_index,
                    ordered: order.iter().map(|&p| keys[p].digest).collect(),
                    enforceable_svp: enforceable
                        .iter()
                        .map(|&(a, b)| (keys[a].digest, keys[b].digest))
                        .collect(),
                },
                sealing_time,
                enumerated,
            },
        );
    }

    Ok(OracleReport {
        config: *config,
        last_round,
        aufs,
        verdicts,
        slices: sealed,
    })
}

/// `a ▷ b`: both mature, some post-coexistence round with `C_a - C_b >= f+1`,
/// and no round in the same window with `C_b - C_a >= f+1`.
pub fn structural_precedence(a: &OracleAuf, b: &OracleAuf, f: u32) -> bool {
    let (Some(true), Some(true)) = (a.mature, b.mature) else {
        return false;
    };
    let window = post_coexistence_window(a, b);
    let threshold = f as i64 + 1;
    let lead = |x: &OracleAuf, y: &OracleAuf, t: u64| -> bool {
        let cx = x.counts[(t - x.key.round.0) as usize] as i64;
        let cy = y.counts[(t - y.key.round.0) as usize] as i64;
        cx - cy >= threshold
    };
    window.iter().any(|&t| lead(a, b, t)) && !window.iter().any(|&t| lead(b, a, t))
}

fn post_coexistence_window(a: &OracleAuf, b: &OracleAuf) -> Vec<u64> {
    let s = a.key.round.max(b.key.round).0;
    let h = a
        .stopping_time
        .expect("settled")
        .max(b.stopping_time.expect("settled"))
        .0;
    (s + 1..=h).collect()
}

fn oracle_verdict(a: &OracleAuf, b: &OracleAuf, f: u32, last: Option<Round>) -> Option<Verdict> {
    let horizon = a.stopping_time?.max(b.stopping_time?);
    if last? < horizon {
        return None;
    }
    if structural_precedence(a, b, f) {
        return Some(Verdict::EdgeForward);
    }
    if structural_precedence(b, a, f) {
        return Some(Verdict::EdgeBackward);
    }
    if a.mature != Some(true) || b.mature != Some(true) {
        return Some(Verdict::AbstainTruncated);
    }
    let window = post_coexistence_window(a, b);
    let threshold = f as i64 + 1;
    let strong = |x: &OracleAuf, y: &OracleAuf| {
        window.iter().any(|&t| {
            x.counts[(t - x.key.round.0) as usize] as i64
                - y.counts[(t - y.key.round.0) as usize] as i64
                >= threshold
        })
    };
    Some(if strong(a, b) && strong(b, a) {
        Verdict::AbstainConflict
    } else {
        Verdict::AbstainNoSignal
    })
}

/// Orders positions `0..k` (already in completion-key order). Returns the
/// order, the evidence edges crossing components, and whether enumeration was used.
pub fn oracle_linearize(
    k: usize,
    causal: &BTreeSet<(usize, usize)>,
    svp: &BTreeSet<(usize, usize)>,
) -> (Vec<usize>, Vec<(usize, usize)>, bool) {
    let reach = transitive_closure(k, causal.iter().chain(svp.iter()));
    let mut comp_of = vec![usize::MAX; k];
    let mut comps: Vec<Vec<usize>> = Vec::new();
    for v in 0..k {
        if comp_of[v] != usize::MAX {
            continue;
        }
        let members: Vec<usize> = (0..k).filter(|&u| reach[v][u] && reach[u][v]).collect();
        for &u in &members {
            comp_of[u] = comps.len();
        }
        comps.push(members);
    }
    let nc = comps.len();
    let comp_before = |x: usize, y: usize| x != y && reach[comps[x][0]][comps[y][0]];
    let enumerated = k <= ENUMERATION_LIMIT;

    let comp_order = if enumerated {
        min_order_by_enumeration(nc, &|x, y| comp_before(x, y), &|c| comps[c][0])
    } else {
        min_order_by_selection(nc, &|x, y| comp_before(x, y), &|c| comps[c][0])
    };

    let mut order = Vec::with_capacity(k);
    for c in comp_order {
        let members = &comps[c];
        let inner_reach = transitive_closure(
            members.len(),
            causal
                .iter()
                .filter_map(|&(a, b)| {
                    let ia = members.iter().position(|&m| m == a)?;
                    let ib = members.iter().position(|&m| m == b)?;
                    Some((ia, ib))
                })
                .collect::<Vec<_>>()
                .iter(),
        );
        let before = |x: usize, y: usize| x != y && inner_reach[x][y];
        let key = |i: usize| members[i];
        let local = if enumerated {
            min_order_by_enumeration(members.len(), &before, &key)
        } else {
            min_order_by_selection(members.len(), &before, &key)
        };
        order.extend(local.into_iter().map(|i| members[i]));
    }

    let enforceable = svp
        .iter()
        .copied()
        .filter(|&(a, b)| comp_of[a] != comp_of[b])
        .collect();
    (order, enforceable, enumerated)
}

fn transitive_closure<'e>(
    k: usize,
    edges: impl Iterator<Item = &'e (usize, usize)>,
) -> Vec<Vec<bool>> {
    let mut reach = vec![vec![false; k]; k];
    for (i, row) in reach.iter_mut().enumerate() {
        row[i] = true;
    }
    for &(a, b) in edges {
        reach[a][b] = true;
    }
    for m in 0..k {
        for i in 0..k {
            if reach[i][m] {
                let via = reach[m].clone();
                for (j, hit) in via.into_iter().enumerate() {
                    reach[i][j] |= hit;
                }
            }
        }
    }
    reach
}

/// Lexicographically smallest (by `key`) order among all orders consistent with `before`.
fn min_order_by_enumeration(
    n: usize,
    before: &dyn Fn(usize, usize) -> bool,
    key: &dyn Fn(usize) -> usize,
) -> Vec<usize> {
    fn extend(
        prefix: &mut Vec<usize>,
        used: &mut Vec<bool>,
        before: &dyn Fn(usize, usize) -> bool,
        key: &dyn Fn(usize) -> usize,
        best: &mut Option<Vec<usize>>,
    ) {
        let n = used.len();
        if prefix.len() == n {
            let keyed: Vec<usize> = prefix.iter().map(|&v| key(v)).collect();
            let better = best
                .as_ref()
                .is_none_or(|b| keyed < b.iter().map(|&v| key(v)).collect::<Vec<_>>());
            if better {
                *best = Some(prefix.clone());
            }
            return;
        }
        for v in 0..n {
            if used[v] || (0..n).any(|u| !used[u] && u != v && before(u, v)) {
                continue;
            }
            used[v] = true;
            prefix.push(v);
            extend(prefix, used, before, key, best);
            prefix.pop();
            used[v] = false;
        }
    }
    let mut best = None;
    extend(&mut Vec::new(), &mut vec![false; n], before, key, &mut best);
    best.unwrap_or_default()
}

/// Repeatedly takes the smallest-key element whose predecessors are all placed.
fn min_order_by_selection(
    n: usize,
    before: &dyn Fn(usize, usize) -> bool,
    key: &dyn Fn(usize) -> usize,
) -> Vec<usize> {
    let mut placed = vec![false; n];
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let next = (0..n)
            .filter(|&v| !placed[v] && (0..n).all(|u| placed[u] || u == v || !before(u, v)))
            .min_by_key(|&v| key(v))
            .expect("acyclic relation always has a minimal element");
        placed[next] = true;
        out.push(next);
    }
    out
}

/// One disagreement between the engine and the oracle.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Discrepancy {
    MissingAuf {
        digest: Digest,
        in_engine: bool,
    },
    StoppingTime {
        digest: Digest,
        engine: Option<Round>,
        oracle: Option<Round>,
    },
    Maturity {
        digest: Digest,
        engine: Option<bool>,
        oracle: Option<bool>,
    },
    Visibility {
        digest: Digest,
        round: Round,
        engine: u32,
        oracle: Option<u32>,
    },
    Verdict {
        a: Digest,
        b: Digest,
        engine: Option<Verdict>,
        oracle: Option<Verdict>,
    },
    SliceSealed {
        slice_index: u64,
        in_engine: bool,
    },
    SealingTime {
        slice_index: u64,
        engine: Round,
        oracle: Round,
    },
    SliceOrder {
        slice_index: u64,
    },
    Enforceable {
        slice_index: u64,
    },
}

impl fmt::Display for Discrepancy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Discrepancy::MissingAuf { digest, in_engine } => {
                write!(f, "auf {digest} only known to the {}", side(*in_engine))
            }
            Discrepancy::StoppingTime {
                digest,
                engine,
                oracle,
            } => {
                write!(
                    f,
                    "auf {digest}: stopping time engine={engine:?} oracle={oracle:?}"
                )
            }
            Discrepancy::Maturity {
                digest,
                engine,
                oracle,
            } => {
                write!(
                    f,
                    "auf {digest}: maturity engine={engine:?} oracle={oracle:?}"
                )
            }
            Discrepancy::Visibility {
                digest,
                round,
                engine,
                oracle,
            } => write!(
                f,
                "auf {digest}: visibility at {round} engine={engine} oracle={oracle:?}"
            ),
            Discrepancy::Verdict {
                a,
                b,
                engine,
                oracle,
            } => {
                write!(
                    f,
                    "pair ({a}, {b}): verdict engine={engine:?} oracle={oracle:?}"
                )
            }
            Discrepancy::SliceSealed {
                slice_index,
                in_engine,
            } => {
                write!(
                    f,
                    "slice {slice_index} sealed only by the {}",
                    side(*in_engine)
                )
            }
            Discrepancy::SealingTime {
                slice_index,
                engine,
                oracle,
            } => {
                write!(
                    f,
                    "slice {slice_index}: sealing time engine={engine} oracle={oracle}"
                )
            }
            Discrepancy::SliceOrder { slice_index } => {
                write!(f, "slice {slice_index}: order differs")
            }
            Discrepancy::Enforceable { slice_index } => {
                write!(f, "slice {slice_index}: enforceable edges differ")
            }
        }
    }
}

fn side(in_engine: bool) -> &'static str {
    if in_engine {
        "engine"
    } else {
        "oracle"
    }
}

/// Lists every disagreement; empty iff the engine matches the oracle.
pub fn diff_reports(
    engine: &EngineReport,
    oracle: &OracleReport,
) -> Result<Vec<Discrepancy>, OracleError> {
    if engine.config != Some(oracle.config) {
        return Err(OracleError::ConfigMismatch {
            engine: engine.config,
            oracle: oracle.config,
        });
    }
    let mut out = Vec::new();
    for (digest, auf) in &oracle.aufs {
        let Some(p) = engine.profiles.get(digest) else {
            out.push(Discrepancy::MissingAuf {
                digest: *digest,
                in_engine: false,
            });
            continue;
        };
        if p.stopping_time != auf.stopping_time {
            out.push(Discrepancy::StoppingTime {
                digest: *digest,
                engine: p.stopping_time,
                oracle: auf.stopping_time,
            });
        }
        if p.mature != auf.mature {
            out.push(Discrepancy::Maturity {
                digest: *digest,
                engine: p.mature,
                oracle: auf.mature,
            });
        }
        for (i, &c) in p.counts.iter().enumerate() {
            let oracle_count = auf.counts.get(i).copied();
            if oracle_count != Some(c) {
                out.push(Discrepancy::Visibility {
                    digest: *digest,
                    round: Round(p.birth_round.0 + i as u64),
                    engine: c,
                    oracle: oracle_count,
                });
                break;
            }
        }
    }
    for digest in engine.profiles.keys() {
        if !oracle.aufs.contains_key(digest) {
            out.push(Discrepancy::MissingAuf {
                digest: *digest,
                in_engine: true,
            });
        }
    }
    let pairs: BTreeSet<&(Digest, Digest)> = engine
        .verdicts
        .keys()
        .chain(oracle.verdicts.keys())
        .collect();
    for pair in pairs {
        let (e, o) = (engine.verdicts.get(pair), oracle.verdicts.get(pair));
        if e != o {
            out.push(Discrepancy::Verdict {
                a: pair.0,
                b: pair.1,
                engine: e.copied(),
                oracle: o.copied(),
            });
        }
    }
    let indices: BTreeSet<&u64> = engine.slices.keys().chain(oracle.slices.keys()).collect();
    for idx in indices {
        match (engine.slices.get(idx), oracle.slices.get(idx)) {
            (Some(e), Some(o)) => {
                if e.sealing_time != o.sealing_time {
                    out.push(Discrepancy::SealingTime {
                        slice_index: *idx,
                        engine: e.sealing_time,
                        oracle: o.sealing_time,
                    });
                }
                if e.order.ordered != o.order.ordered {
                    out.push(Discrepancy::SliceOrder { slice_index: *idx });
                }
                let mut ee = e.order.enforceable_svp.clone();
                let mut oe = o.order.enforceable_svp.clone();
                ee.sort();
                oe.sort();
                if ee != oe {
                    out.push(Discrepancy::Enforceable { slice_index: *idx });
                }
            }
            (e, _) => out.push(Discrepancy::SliceSealed {
                slice_index: *idx,
                in_engine: e.is_some(),
            }),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dag::AufMeta;
    use crate::engine::Engine;

    fn commit(r: u64, metas: &[AufMeta]) -> ExporterEvent {
        ExporterEvent::RoundCommitted {
            round: Round(r),
            canonical: metas.to_vec(),
        }
    }

    #[test]
    fn empty_log_gives_empty_report() {
        let cfg = RunConfig::new(4, 1, 2, 0).unwrap();
        let report = oracle_evaluate(&[], &cfg).unwrap();
        assert!(report.is_empty());
        assert_eq!(report.last_round, None);
    }

    #[test]
    fn single_creator_chain_never_matures() {
        // Uncertified chain: one creator, one parent per vertex.
        let cfg = RunConfig::new(4, 1, 2, 0).unwrap();
        let mut events = Vec::new();
        let mut prev: Option<AufMeta> = None;
        let mut all = Vec::new();
        for r in 0..6u64 {
            let parents = prev.iter().map(|p| p.digest).collect();
            let v = AufMeta::new(CreatorId(0), Round(r), parents, 0);
            events.push(commit(r, std::slice::from_ref(&v)));
            all.push(v.digest);
            prev = Some(v);
        }
        let slice: Vec<Digest> = all[..4].to_vec();
        events.push(ExporterEvent::SliceDelivered {
            slice_index: 0,
            members: slice.clone(),
        });
        let report = oracle_evaluate(&events, &cfg).unwrap();
        for d in &slice {
            let auf = &report.aufs[d];
            assert!(auf.counts.iter().all(|c| *c <= 1));
            assert_eq!(auf.mature, Some(false));
            assert_eq!(auf.stopping_time, Some(Round(auf.key.round.0 + 2)));
        }
        let truncated = report
            .verdicts
            .values()
            .filter(|v| **v == Verdict::AbstainTruncated)
            .count();
        assert_eq!(truncated, 6);
        assert_eq!(report.verdicts.len(), 6);
        // chain order is causal order
        assert_eq!(report.slices[&0].order.ordered, slice);
        assert!(report.slices[&0].enumerated);
    }

    #[test]
    fn dense_dag_matures_one_round_after_birth() {
        let cfg = RunConfig::new(4, 1, 3, 0).unwrap();
        let mut events = Vec::new();
        let mut prev: Vec<Digest> = Vec::new();
        for r in 0..5u64 {
            let cur: Vec<AufMeta> = (0..4)
                .map(|c| AufMeta::new(CreatorId(c), Round(r), prev.clone(), 0))
                .collect();
            prev = cur.iter().map(|m| m.digest).collect();
            events.push(commit(r, &cur));
        }
        let report = oracle_evaluate(&events, &cfg).unwrap();
        for auf in report.aufs.values() {
            if auf.key.round.0 < 4 {
                assert_eq!(auf.stopping_time, Some(Round(auf.key.round.0 + 1)));
                assert_eq!(auf.mature, Some(true));
                assert_eq!(auf.counts[1], 4);
            } else {
                assert_eq!(auf.stopping_time, None);
            }
        }
    }

    #[test]
    fn invalid_logs_are_rejected() {
        let cfg = RunConfig::new(4, 1, 2, 0).unwrap();
        let g = AufMeta::new(CreatorId(0), Round(0), vec![], 0);
        let events = vec![commit(0, std::slice::from_ref(&g)), commit(2, &[])];
        assert!(matches!(
            oracle_evaluate(&events, &cfg),
            Err(OracleError::InvalidLog(_))
        ));
        let ghost = AufMeta::new(CreatorId(3), Round(0), vec![], 9);
        let orphan = AufMeta::new(CreatorId(1), Round(1), vec![ghost.digest], 0);
        let events = vec![commit(0, &[g]), commit(1, &[orphan])];
        assert!(matches!(
            oracle_evaluate(&events, &cfg),
            Err(OracleError::InvalidLog(_))
        ));
    }

    #[test]
    fn identical_runs_have_no_discrepancies() {
        let cfg = RunConfig::new(4, 1, 2, 0).unwrap();
        let mut events = Vec::new();
        let mut prev: Vec<Digest> = Vec::new();
        let mut all = Vec::new();
        for r in 0..4u64 {
            let cur: Vec<AufMeta> = (0..4)
                .map(|c| AufMeta::new(CreatorId(c), Round(r), prev.clone(), c as u64))
                .collect();
            prev = cur.iter().map(|m| m.digest).collect();
            all.extend(prev.clone());
            events.push(commit(r, &cur));
            if r == 1 {
                events.push(ExporterEvent::SliceDelivered {
                    slice_index: 0,
                    members: all.clone(),
                });
            }
        }
        let mut engine = Engine::new(cfg).unwrap().with_audit();
        engine.apply_all(&events).unwrap();
        let report = engine.report().unwrap();
        let oracle = oracle_evaluate(&events, &cfg).unwrap();
        assert_eq!(diff_reports(&report, &oracle).unwrap(), vec![]);
        assert_eq!(oracle.slices.len(), 1);

        let other = RunConfig::new(4, 1, 3, 0).unwrap();
        let oracle = oracle_evaluate(&events, &other).unwrap();
        assert!(matches!(
            diff_reports(&report, &oracle),
            Err(OracleError::ConfigMismatch { .. })
        ));
    }

    #[test]
    fn enumeration_and_selection_agree() {
        // 3-cycle among svp edges plus a causal chain into it
        let causal: BTreeSet<(usize, usize)> = [(0, 3)].into_iter().collect();
        let svp: BTreeSet<(usize, usize)> = [(1, 2), (2, 4), (4, 1), (5, 0)].into_iter().collect();
        let (order, enforceable, enumerated) = oracle_linearize(6, &causal, &svp);
        assert!(enumerated);
        assert_eq!(order, vec![1, 2, 4, 5, 0, 3]);
        assert_eq!(enforceable, vec![(5, 0)]);
        let reach = transitive_closure(6, causal.iter().chain(svp.iter()));
        let before = |x: usize, y: usize| x != y && reach[x][y] && !reach[y][x];
        assert_eq!(
            min_order_by_enumeration(6, &before, &|v| v),
            min_order_by_selection(6, &before, &|v| v)
        );
    }
}
