//! Hand-built boundary-case logs.
//!
//! Each scenario is a small parent table: row `r` lists, per creator, which
//! creators' round `r-1` vertices it references. After the table the builder
//! delivers one slice holding the labelled AUFs and appends `w_max` fully
//! connected rounds so every slice can seal.

use crate::dag::{AufMeta, CreatorId, Digest, Round};
use crate::exporter::{EventLog, ExporterEvent, RunConfig};
use crate::simulator::SimError;

pub const CATALOG: &[&str] = &[
    "empty-window",
    "exact-f-delta",
    "conflict",
    "immature",
    "svp-vs-causal-cycle",
    "three-cycle",
    "coexistence-lead",
];

/// One row of a parent table: `(creator, parent creators)`.
pub type Row = Vec<(u32, Vec<u32>)>;

#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: &'static str,
    pub summary: &'static str,
    pub config: RunConfig,
    pub log: EventLog,
    /// Slice members by label, in the order the table names them.
    pub labels: Vec<(&'static str, Digest)>,
}

impl Scenario {
    pub fn auf(&self, label: &str) -> Digest {
        self.labels
            .iter()
            .find(|(l, _)| *l == label)
            .map(|(_, d)| *d)
            .unwrap_or_else(|| panic!("scenario {} has no AUF {label}", self.name))
    }
}

/// Materializes a parent table into a log. `slice` names `(round, creator)`
/// positions delivered as slice 0 right after the last table row.
pub fn build_log(
    config: RunConfig,
    table: &[Row],
    slice: &[(u64, u32)],
) -> Result<(EventLog, Vec<Digest>), SimError> {
    let mut log = EventLog::with_config(config)?;
    let mut prev: Vec<AufMeta> = Vec::new();
    let mut placed: Vec<Vec<AufMeta>> = Vec::new();
    for (r, row) in table.iter().enumerate() {
        let mut canonical: Vec<AufMeta> = Vec::new();
        let mut row = row.clone();
        row.sort_by_key(|(c, _)| *c);
        for (c, parent_creators) in row {
            let parents = if r == 0 {
                Vec::new()
            } else {
                parent_creators
                    .iter()
                    .filter_map(|pc| prev.iter().find(|m| m.creator.0 == *pc))
                    .map(|m| m.digest)
                    .collect()
            };
            canonical.push(AufMeta::new(CreatorId(c), Round(r as u64), parents, 0));
        }
        log.append_event(ExporterEvent::RoundCommitted {
            round: Round(r as u64),
            canonical: canonical.clone(),
        })?;
        placed.push(canonical.clone());
        prev = canonical;
        if r + 1 == table.len() {
            let mut members = Vec::new();
            for &(sr, sc) in slice {
                let m = placed
                    .get(sr as usize)
                    .and_then(|row| row.iter().find(|m| m.creator.0 == sc))
                    .ok_or_else(|| {
                        SimError::InfeasiblePlan(format!("no vertex at round {sr} creator {sc}"))
                    })?;
                members.push(m.digest);
            }
            log.append_event(ExporterEvent::SliceDelivered {
                slice_index: 0,
                members: members.clone(),
            })?;
            return finish(log, prev, config, members);
        }
    }
    Err(SimError::InfeasiblePlan("empty parent table".into()))
}

fn finish(
    mut log: EventLog,
    mut prev: Vec<AufMeta>,
    config: RunConfig,
    members: Vec<Digest>,
) -> Result<(EventLog, Vec<Digest>), SimError> {
    let start = prev.first().map(|m| m.round.0 + 1).unwrap_or(0);
    for r in start..start + config.w_max {
        let parents: Vec<Digest> = prev.iter().map(|m| m.digest).collect();
        let canonical: Vec<AufMeta> = (0..config.n)
            .map(|c| AufMeta::new(CreatorId(c), Round(r), parents.clone(), 0))
            .collect();
        log.append_event(ExporterEvent::RoundCommitted {
            round: Round(r),
            canonical: canonical.clone(),
        })?;
        prev = canonical;
    }
    Ok((log, members))
}

fn row(spec: &[(u32, &[u32])]) -> Vec<(u32, Vec<u32>)> {
    spec.iter().map(|(c, p)| (*c, p.to_vec())).collect()
}

fn genesis(n: u32) -> Row {
    (0..n).map(|c| (c, Vec::new())).collect()
}

fn make(
    name: &'static str,
    summary: &'static str,
    config: RunConfig,
    table: Vec<Row>,
    labelled: &[(&'static str, u64, u32)],
) -> Result<Scenario, SimError> {
    let slice: Vec<(u64, u32)> = labelled.iter().map(|(_, r, c)| (*r, *c)).collect();
    let (log, members) = build_log(config, &table, &slice)?;
    let labels = labelled.iter().map(|(l, _, _)| *l).zip(members).collect();
    Ok(Scenario {
        name,
        summary,
        config,
        log,
        labels,
    })
}

pub fn targeted_scenario(name: &str) -> Result<Scenario, SimError> {
    let cfg = |n, f, w| RunConfig::new(n, f, w, 0).expect("catalog configs are valid");
    match name {
        // f = 0 is the only way to get H <= s: every AUF reaches the quorum of 1 at birth.
        "empty-window" => make(
            "empty-window",
            "both AUFs mature at birth, so the post-coexistence window is empty",
            cfg(3, 0, 2),
            vec![genesis(3)],
            &[("A", 0, 0), ("B", 0, 1)],
        ),
        "exact-f-delta" => make(
            "exact-f-delta",
            "one honest creator misses B, leaving a margin of exactly f",
            cfg(4, 1, 2),
            vec![
                genesis(4),
                row(&[
                    (0, &[0, 2, 3]),
                    (1, &[0, 1, 2, 3]),
                    (2, &[0, 1, 2, 3]),
                    (3, &[0, 1, 2, 3]),
                ]),
            ],
            &[("A", 0, 0), ("B", 0, 1)],
        ),
        "conflict" => make(
            "conflict",
            "A leads by f+1 in the first round, B leads by f+2 in the second",
            cfg(6, 1, 3),
            vec![
                genesis(6),
                row(&[
                    (0, &[0, 2, 3, 4, 5]),
                    (1, &[0, 2, 3, 4, 5]),
                    (2, &[0, 2, 3, 4, 5]),
                    (3, &[1, 2, 3, 4, 5]),
                    (4, &[2, 3, 4, 5]),
                    (5, &[2, 3, 4, 5]),
                ]),
                row(&[
                    (0, &[0, 3, 4]),
                    (1, &[0, 3, 4]),
                    (2, &[0, 3, 4]),
                    (3, &[3, 4, 5]),
                    (4, &[3, 4, 5]),
                    (5, &[3, 4, 5]),
                ]),
            ],
            &[("A", 0, 0), ("B", 0, 1)],
        ),
        "immature" => make(
            "immature",
            "only B's own creator ever references it, so B never certifies",
            cfg(4, 1, 2),
            vec![
                genesis(4),
                row(&[
                    (0, &[0, 2, 3]),
                    (1, &[1, 2, 3]),
                    (2, &[0, 2, 3]),
                    (3, &[0, 2, 3]),
                ]),
                row(&[
                    (0, &[0, 2, 3]),
                    (1, &[1, 2, 3]),
                    (2, &[0, 2, 3]),
                    (3, &[0, 2, 3]),
                ]),
            ],
            &[("A", 0, 0), ("B", 0, 1)],
        ),
        // A leads B in round 1, B leads C in round 2, C leads A in round 3;
        // each lead falls outside the window of the pair that would contradict it.
        "three-cycle" => make(
            "three-cycle",
            "evidence edges A->B->C->A among causally unrelated AUFs",
            cfg(9, 1, 3),
            vec![
                genesis(9),
                row(&[
                    (0, &[0, 3, 4]),
                    (1, &[2, 3, 4]),
                    (2, &[2, 3, 4]),
                    (3, &[0, 3, 4]),
                    (4, &[0, 3, 4]),
                    (5, &[1, 3, 4]),
                    (6, &[3, 4, 5]),
                    (7, &[3, 4, 5]),
                    (8, &[3, 4, 5]),
                ]),
                row(&[
                    (0, &[1, 5, 6]),
                    (1, &[0, 5, 6]),
                    (2, &[3, 5, 6]),
                    (3, &[6, 7, 8]),
                    (4, &[6, 7, 8]),
                    (5, &[6, 7, 8]),
                    (6, &[6, 7, 8]),
                    (7, &[6, 7, 8]),
                    (8, &[6, 7, 8]),
                ]),
                row(&[
                    (0, &[0, 3, 4]),
                    (1, &[0, 3, 4]),
                    (2, &[0, 3, 4]),
                    (3, &[1, 3, 4]),
                    (4, &[3, 4, 5]),
                    (5, &[3, 4, 5]),
                    (6, &[3, 4, 5]),
                    (7, &[3, 4, 5]),
                    (8, &[3, 4, 5]),
                ]),
            ],
            &[("A", 0, 0), ("B", 0, 1), ("C", 0, 2)],
        ),
        // B is a parent of A. C leads B while both certify in round 1; A
        // overtakes C only in round 3, after the (C, B) window has closed.
        "svp-vs-causal-cycle" => make(
            "svp-vs-causal-cycle",
            "causal edge B->A closed into a cycle by evidence edges A->C and C->B",
            cfg(9, 1, 2),
            vec![
                genesis(9),
                row(&[
                    (0, &[1, 3, 4]),
                    (1, &[1, 2, 3]),
                    (2, &[1, 2, 3]),
                    (3, &[2, 3, 4]),
                    (4, &[2, 3, 4]),
                    (5, &[2, 3, 4]),
                    (6, &[3, 4, 5]),
                    (7, &[3, 4, 5]),
                    (8, &[3, 4, 5]),
                ]),
                row(&[
                    (0, &[0, 6, 7]),
                    (1, &[0, 6, 7]),
                    (2, &[3, 6, 7]),
                    (3, &[6, 7, 8]),
                    (4, &[6, 7, 8]),
                    (5, &[6, 7, 8]),
                    (6, &[6, 7, 8]),
                    (7, &[6, 7, 8]),
                    (8, &[6, 7, 8]),
                ]),
                row(&[
                    (0, &[0, 3, 4]),
                    (1, &[0, 3, 4]),
                    (2, &[0, 3, 4]),
                    (3, &[3, 4, 5]),
                    (4, &[3, 4, 5]),
                    (5, &[3, 4, 5]),
                    (6, &[3, 4, 5]),
                    (7, &[3, 4, 5]),
                    (8, &[3, 4, 5]),
                ]),
            ],
            &[("A", 1, 0), ("B", 0, 1), ("C", 0, 2)],
        ),
        "coexistence-lead" => make(
            "coexistence-lead",
            "A's only strong lead over B falls in B's birth round",
            cfg(4, 1, 2),
            vec![
                genesis(4),
                row(&[
                    (0, &[0, 2, 3]),
                    (1, &[1, 2, 3]),
                    (2, &[0, 2, 3]),
                    (3, &[0, 2, 3]),
                ]),
            ],
            &[("A", 0, 0), ("B", 1, 1)],
        ),
        _ => Err(SimError::UnknownScenario(name.to_string())),
    }
}
