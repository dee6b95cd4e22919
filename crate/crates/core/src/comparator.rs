//! Pairwise verdicts over post-coexistence visibility windows.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dag::{Digest, Round, VertexIdx};
use crate::exporter::RunConfig;
use crate::linearizer::CompletionKey;
use crate::visibility::VisibilityProfile;

/// Frozen outcome for an ordered pair `(a, b)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// `a` precedes `b`.
    EdgeForward,
    /// `b` precedes `a`.
    EdgeBackward,
    AbstainTruncated,
    AbstainConflict,
    AbstainNoSignal,
}

impl Verdict {
    /// The verdict for the swapped pair `(b, a)`.
    pub fn reversed(self) -> Verdict {
        match self {
            Verdict::EdgeForward => Verdict::EdgeBackward,
            Verdict::EdgeBackward => Verdict::EdgeForward,
            other => other,
        }
    }

    pub fn is_edge(self) -> bool {
        matches!(self, Verdict::EdgeForward | Verdict::EdgeBackward)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ComparatorError {
    #[error("stopping time of {0} not settled")]
    UnsettledStoppingTime(Digest),
    #[error("visibility of {digest} not recorded up to horizon {horizon}")]
    HorizonNotReached { digest: Digest, horizon: Round },
}

/// Signal threshold and window start used by the comparator.
///
/// The faithful rule is [`ComparatorRule::for_config`]; the other knobs exist so
/// that verification tooling can demonstrate it catches a miscalibrated engine.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparatorRule {
    pub threshold: u32,
    /// Scan from `s` instead of `s + 1`.
    pub include_coexistence_round: bool,
}

impl ComparatorRule {
    pub fn for_config(config: &RunConfig) -> ComparatorRule {
        ComparatorRule {
            threshold: config.signal_threshold(),
            include_coexistence_round: false,
        }
    }
}

/// Coexistence-alignment round `max(r(a), r(b))`.
pub fn coexistence_round(a: &VisibilityProfile, b: &VisibilityProfile) -> Round {
    a.birth_round.max(b.birth_round)
}

/// Pair horizon `max(h_a, h_b)`, once both stopping times are settled.
pub fn pair_horizon(a: &VisibilityProfile, b: &VisibilityProfile) -> Option<Round> {
    Some(a.stopping_time?.max(b.stopping_time?))
}

/// Verdict for `(a, b)` from their settled profiles.
pub fn pairwise_verdict(
    a: &VisibilityProfile,
    b: &VisibilityProfile,
    rule: ComparatorRule,
) -> Result<Verdict, ComparatorError> {
    let (Some(mature_a), Some(mature_b)) = (a.mature, b.mature) else {
        let unsettled = if a.mature.is_none() { a } else { b };
        return Err(ComparatorError::UnsettledStoppingTime(unsettled.target));
    };
    let horizon = pair_horizon(a, b).expect("maturity implies stopping time");
    for p in [a, b] {
        if p.last_recorded().is_none_or(|last| last < horizon) {
            return Err(ComparatorError::HorizonNotReached {
                digest: p.target,
                horizon,
            });
        }
    }
    if !mature_a || !mature_b {
        return Ok(Verdict::AbstainTruncated);
    }
    let s = coexistence_round(a, b);
    let start = if rule.include_coexistence_round {
        s.0
    } else {
        s.0 + 1
    };
    let threshold = i64::from(rule.threshold);
    let (mut pos, mut neg) = (false, false);
    for t in start..=horizon.0 {
        let ca = a.count_at(Round(t)).expect("recorded through horizon");
        let cb = b.count_at(Round(t)).expect("recorded through horizon");
        let delta = i64::from(ca) - i64::from(cb);
        pos |= delta >= threshold;
        neg |= delta <= -threshold;
    }
    Ok(match (pos, neg) {
        (true, false) => Verdict::EdgeForward,
        (false, true) => Verdict::EdgeBackward,
        (true, true) => Verdict::AbstainConflict,
        (false, false) => Verdict::AbstainNoSignal,
    })
}

/// Verdict state of one same-slice pair; `a` precedes `b` in completion-key order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub a: Digest,
    pub b: Digest,
    pub coexist_round: Round,
    pub horizon: Option<Round>,
    pub verdict: Option<Verdict>,
}

/// All unordered pairs of one slice, enumerated in completion-key order.
#[derive(Clone, Debug)]
pub struct PairTable {
    members: Vec<(VertexIdx, CompletionKey)>,
    /// Row-major upper triangle: pair `(i, j)` with `i < j`.
    records: Vec<PairRecord>,
    frozen: usize,
    evaluations: u64,
    /// Members whose stopping time has been seen settled.
    settled: Vec<bool>,
    /// Pairs with both members settled, keyed by horizon, not yet frozen.
    scheduled: BTreeMap<Round, Vec<(usize, usize)>>,
}

impl PairTable {
    /// `members` may come in any order; they are sorted by completion key.
    pub fn new(mut members: Vec<(VertexIdx, CompletionKey)>) -> PairTable {
        members.sort_by_key(|m| m.1);
        let k = members.len();
        let mut records = Vec::with_capacity(k * k.saturating_sub(1) / 2);
        for i in 0..k {
            for j in i + 1..k {
                let (ka, kb) = (&members[i].1, &members[j].1);
                records.push(PairRecord {
                    a: ka.digest,
                    b: kb.digest,
                    coexist_round: ka.round.max(kb.round),
                    horizon: None,
                    verdict: None,
                });
            }
        }
        PairTable {
            settled: vec![false; k],
            members,
            records,
            frozen: 0,
            evaluations: 0,
            scheduled: BTreeMap::new(),
        }
    }

    pub fn members(&self) -> &[(VertexIdx, CompletionKey)] {
        &self.members
    }

    pub fn records(&self) -> &[PairRecord] {
        &self.records
    }

    pub fn is_fully_frozen(&self) -> bool {
        self.frozen == self.records.len()
    }

    /// Number of pairwise verdict evaluations performed so far.
    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    /// Frozen verdict of the pair at member positions `i < j`.
    pub fn verdict_at(&self, i: usize, j: usize) -> Option<Verdict> {
        self.records[self.offset(i, j)].verdict
    }

    fn offset(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j);
        let k = self.members.len();
        // offset of row i in the upper triangle
        i * (2 * k - i - 1) / 2 + (j - i - 1)
    }

    /// Freezes every pair whose stopping times are settled and whose horizon is
    /// at or below `frontier`. Already frozen pairs are left untouched.
    pub fn freeze_ready_pairs<'p>(
        &mut self,
        frontier: Round,
        profile: impl Fn(VertexIdx) -> &'p VisibilityProfile,
        rule: ComparatorRule,
    ) -> Vec<PairRecord> {
        if self.is_fully_frozen() {
            return Vec::new();
        }
        let k = self.members.len();
        for i in 0..k {
            if self.settled[i] {
                continue;
            }
            let pi = profile(self.members[i].0);
            let Some(hi) = pi.stopping_time else {
                continue;
            };
            self.settled[i] = true;
            for j in (0..k).filter(|&j| j != i && self.settled[j]) {
                let hj = profile(self.members[j].0)
                    .stopping_time
                    .expect("marked settled");
                let pair = (i.min(j), i.max(j));
                let horizon = hi.max(hj);
                let at = self.offset(pair.0, pair.1);
                self.records[at].horizon = Some(horizon);
                self.scheduled.entry(horizon).or_default().push(pair);
            }
        }

        let mut ready: Vec<(usize, usize)> = Vec::new();
        while let Some(entry) = self.scheduled.first_entry() {
            if *entry.key() > frontier {
                break;
            }
            ready.extend(entry.remove());
        }
        ready.sort_unstable();
        let mut newly = Vec::with_capacity(ready.len());
        for (i, j) in ready {
            let at = self.offset(i, j);
            let (pa, pb) = (profile(self.members[i].0), profile(self.members[j].0));
            let verdict = pairwise_verdict(pa, pb, rule)
                .expect("settled profiles recorded through the frontier");
            self.evaluations += 1;
            self.frozen += 1;
            let record = &mut self.records[at];
            record.verdict = Some(verdict);
            newly.push(record.clone());
        }
        newly
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dag::CreatorId;

    fn digest(tag: u8) -> Digest {
        Digest([tag; 32])
    }

    fn profile(
        tag: u8,
        birth: u64,
        counts: &[u32],
        h: Option<u64>,
        mature: bool,
    ) -> VisibilityProfile {
        VisibilityProfile {
            target: digest(tag),
            birth_round: Round(birth),
            counts: counts.to_vec(),
            stopping_time: h.map(Round),
            mature: h.map(|_| mature),
        }
    }

    fn rule() -> ComparatorRule {
        ComparatorRule::for_config(&RunConfig::new(4, 1, 4, 0).unwrap())
    }

    /// Direct evaluation of the precedence predicate over explicit windows.
    fn svp_oracle(a: &VisibilityProfile, b: &VisibilityProfile, f: u32) -> bool {
        let s = a.birth_round.max(b.birth_round).0;
        let h = a.stopping_time.unwrap().max(b.stopping_time.unwrap()).0;
        let window: Vec<u64> = (s + 1..=h).collect();
        let delta = |x: &VisibilityProfile, y: &VisibilityProfile, t: u64| {
            x.count_at(Round(t)).unwrap() as i64 - y.count_at(Round(t)).unwrap() as i64
        };
        let threshold = f as i64 + 1;
        a.mature.unwrap()
            && b.mature.unwrap()
            && window.iter().any(|&t| delta(a, b, t) >= threshold)
            && !window.iter().any(|&t| delta(b, a, t) >= threshold)
    }

    #[test]
    fn immature_side_truncates() {
        let a = profile(1, 0, &[1, 4, 4], Some(1), true);
        let b = profile(2, 0, &[1, 1, 2], Some(2), false);
        assert_eq!(
            pairwise_verdict(&a, &b, rule()),
            Ok(Verdict::AbstainTruncated)
        );
        assert_eq!(
            pairwise_verdict(&b, &a, rule()),
            Ok(Verdict::AbstainTruncated)
        );
    }

    #[test]
    fn empty_window_is_no_signal() {
        // f = 0 lets both mature at birth, so H = s.
        let r = ComparatorRule::for_config(&RunConfig::new(3, 0, 2, 0).unwrap());
        let a = profile(1, 0, &[1, 3], Some(0), true);
        let b = profile(2, 1, &[1], Some(1), true);
        assert_eq!(pairwise_verdict(&a, &b, r), Ok(Verdict::AbstainNoSignal));
    }

    #[test]
    fn one_sided_and_conflicting_windows() {
        // s = 0, window {1, 2}
        let a = profile(1, 0, &[1, 4, 4], Some(1), true);
        let b = profile(2, 0, &[1, 2, 4], Some(2), true);
        assert!(svp_oracle(&a, &b, 1));
        assert_eq!(pairwise_verdict(&a, &b, rule()), Ok(Verdict::EdgeForward));
        assert_eq!(pairwise_verdict(&b, &a, rule()), Ok(Verdict::EdgeBackward));

        let a = profile(1, 0, &[1, 4, 1], Some(1), true);
        let b = profile(2, 0, &[1, 2, 3], Some(2), true);
        assert!(!svp_oracle(&a, &b, 1) && !svp_oracle(&b, &a, 1));
        assert_eq!(
            pairwise_verdict(&a, &b, rule()),
            Ok(Verdict::AbstainConflict)
        );
    }

    #[test]
    fn margin_of_exactly_f_is_no_signal() {
        let a = profile(1, 0, &[1, 4], Some(1), true);
        let b = profile(2, 0, &[1, 3], Some(1), true);
        assert_eq!(
            pairwise_verdict(&a, &b, rule()),
            Ok(Verdict::AbstainNoSignal)
        );
        let loose = ComparatorRule {
            threshold: 1,
            ..rule()
        };
        assert_eq!(pairwise_verdict(&a, &b, loose), Ok(Verdict::EdgeForward));
    }

    #[test]
    fn coexistence_round_is_excluded() {
        // a leads only at s = 1
        let a = profile(1, 0, &[1, 4, 4], Some(1), true);
        let b = profile(2, 1, &[1, 4], Some(2), true);
        assert_eq!(
            pairwise_verdict(&a, &b, rule()),
            Ok(Verdict::AbstainNoSignal)
        );
        let early = ComparatorRule {
            include_coexistence_round: true,
            ..rule()
        };
        assert_eq!(pairwise_verdict(&a, &b, early), Ok(Verdict::EdgeForward));
    }

    #[test]
    fn preconditions() {
        let a = profile(1, 0, &[1, 4], Some(1), true);
        let unsettled = profile(2, 0, &[1, 2], None, false);
        assert_eq!(
            pairwise_verdict(&a, &unsettled, rule()),
            Err(ComparatorError::UnsettledStoppingTime(digest(2)))
        );
        let short = profile(3, 0, &[1, 4], Some(3), false);
        assert_eq!(
            pairwise_verdict(&a, &short, rule()),
            Err(ComparatorError::HorizonNotReached {
                digest: digest(1),
                horizon: Round(3)
            })
        );
    }

    fn key(tag: u8, round: u64, creator: u32) -> CompletionKey {
        CompletionKey {
            round: Round(round),
            creator: CreatorId(creator),
            digest: digest(tag),
        }
    }

    #[test]
    fn freeze_counts_and_idempotence() {
        let profiles = [
            profile(1, 0, &[1, 4, 4, 0], Some(1), true),
            profile(2, 0, &[1, 2, 4, 4], Some(2), true),
            profile(3, 0, &[1, 4, 4, 4], Some(1), true),
        ];
        let members = vec![
            (VertexIdx(2), key(3, 0, 2)),
            (VertexIdx(0), key(1, 0, 0)),
            (VertexIdx(1), key(2, 0, 1)),
        ];
        let mut table = PairTable::new(members);
        let lookup = |i: VertexIdx| &profiles[i.0 as usize];
        let first = table.freeze_ready_pairs(Round(1), lookup, rule());
        // only (1,3) has H = 1
        assert_eq!(first.len(), 1);
        assert_eq!((first[0].a, first[0].b), (digest(1), digest(3)));
        let rest = table.freeze_ready_pairs(Round(2), lookup, rule());
        assert_eq!(rest.len(), 2);
        assert!(table.is_fully_frozen());
        assert_eq!(table.evaluations(), 3);
        assert_eq!(table.verdict_at(0, 1), Some(Verdict::EdgeForward));
        assert_eq!(table.verdict_at(1, 2), Some(Verdict::EdgeBackward));
        // round 3 has a contrary delta for (1,2) but the verdict stays frozen
        assert!(table
            .freeze_ready_pairs(Round(3), lookup, rule())
            .is_empty());
        assert_eq!(table.verdict_at(0, 1), Some(Verdict::EdgeForward));
        assert_eq!(table.evaluations(), 3);
    }

    #[test]
    fn single_member_has_no_pairs() {
        let mut table = PairTable::new(vec![(VertexIdx(0), key(1, 0, 0))]);
        let p = profile(1, 0, &[1, 4], Some(1), true);
        assert!(table.is_fully_frozen());
        assert!(table
            .freeze_ready_pairs(Round(5), |_| &p, rule())
            .is_empty());
        assert_eq!(table.evaluations(), 0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_profile(tag: u8) -> impl Strategy<Value = VisibilityProfile> {
            (
                0u64..3,
                1u64..5,
                proptest::collection::vec(0u32..=7, 12),
                any::<bool>(),
            )
                .prop_map(move |(birth, span, counts, mature)| VisibilityProfile {
                    target: digest(tag),
                    birth_round: Round(birth),
                    counts,
                    stopping_time: Some(Round(birth + span)),
                    mature: Some(mature),
                })
        }

        proptest! {
            #[test]
            fn antisymmetric_and_sound(a in arb_profile(1), b in arb_profile(2), f in 0u32..3) {
                let r = ComparatorRule { threshold: f + 1, include_coexistence_round: false };
                let ab = pairwise_verdict(&a, &b, r).unwrap();
                let ba = pairwise_verdict(&b, &a, r).unwrap();
                prop_assert_eq!(ab.reversed(), ba);
                prop_assert_eq!(ab == Verdict::EdgeForward, svp_oracle(&a, &b, f));
                prop_assert_eq!(ab == Verdict::EdgeBackward, svp_oracle(&b, &a, f));
            }
        }
    }
}
