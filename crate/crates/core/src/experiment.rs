//! End-to-end runs: order a log, check the run-level guarantees, optionally
//! diff against the oracle, and summarize the result as metrics.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::comparator::{ComparatorRule, Verdict};
use crate::dag::{AufMeta, CreatorId, Digest, Round};
use crate::engine::{Engine, EngineError, SealRecord};
use crate::exporter::{EventLog, ExporterError, ExporterEvent, RunConfig};
use crate::oracle::{diff_reports, oracle_evaluate, Discrepancy, OracleError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Exporter(#[from] ExporterError),
}

/// Deliberate comparator bugs, for demonstrating that verification catches them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Fault {
    #[default]
    None,
    /// Certify on a margin of `f` instead of `f + 1`.
    ThresholdF,
    /// Include the coexistence round itself in the scan.
    CoexistenceRound,
}

impl Fault {
    pub fn rule(self, config: &RunConfig) -> ComparatorRule {
        let mut rule = ComparatorRule::for_config(config);
        match self {
            Fault::None => {}
            Fault::ThresholdF => rule.threshold = config.f,
            Fault::CoexistenceRound => rule.include_coexistence_round = true,
        }
        rule
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Diff every decision against the brute-force oracle.
    pub verify: bool,
    pub fault: Fault,
}

/// Deterministic part of a run's metrics. Integer-valued so that two runs on
/// the same input compare byte for byte.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalMetrics {
    pub aufs: u64,
    pub settled: u64,
    pub mature: u64,
    pub slices_delivered: u64,
    pub slices_sealed: u64,
    pub edges: u64,
    pub truncated: u64,
    pub conflict: u64,
    pub no_signal: u64,
    pub pair_evaluations: u64,
    pub sealing_delay_sum: u64,
    pub sealing_delay_max: u64,
    pub enforceable_edges: u64,
    pub preserved_edges: u64,
    pub violations: u64,
    /// SHA-256 of the engine's output log.
    pub output_sha256: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PhaseTimings {
    pub order: Duration,
    pub checks: Duration,
    pub verify: Duration,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunMetrics {
    pub canonical: CanonicalMetrics,
    pub timings: PhaseTimings,
}

impl RunMetrics {
    pub fn maturity_rate(&self) -> f64 {
        ratio(self.canonical.mature, self.canonical.settled)
    }

    pub fn mean_sealing_delay(&self) -> f64 {
        ratio(
            self.canonical.sealing_delay_sum,
            self.canonical.slices_sealed,
        )
    }

    /// One line of JSON with sorted keys; excludes wall-clock values.
    pub fn canonical_record(&self) -> String {
        let value = serde_json::to_value(&self.canonical).expect("metrics serialize");
        serde_json::to_string(&value).expect("JSON values always render")
    }

    pub fn tsv_header() -> &'static str {
        "label\taufs\tmature\tmaturity_rate\tslices_sealed\tedges\ttruncated\tconflict\tno_signal\tmean_sealing_delay\tmax_sealing_delay\tenforceable\tpreserved\tpair_evaluations\torder_ms\tverify_ms"
    }

    pub fn tsv_row(&self, label: &str) -> String {
        let c = &self.canonical;
        format!(
            "{label}\t{}\t{}\t{:.4}\t{}\t{}\t{}\t{}\t{}\t{:.3}\t{}\t{}\t{}\t{}\t{:.3}\t{:.3}",
            c.aufs,
            c.mature,
            self.maturity_rate(),
            c.slices_sealed,
            c.edges,
            c.truncated,
            c.conflict,
            c.no_signal,
            self.mean_sealing_delay(),
            c.sealing_delay_max,
            c.enforceable_edges,
            c.preserved_edges,
            c.pair_evaluations,
            ms(self.timings.order),
            ms(self.timings.verify),
        )
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// A run-level guarantee that did not hold.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    StoppingTimeBeyondCap {
        digest: Digest,
        birth: Round,
        stopping_time: Round,
    },
    UnsettledPastCap {
        digest: Digest,
        birth: Round,
    },
    LateSeal {
        slice_index: u64,
        sealed_at: Round,
        bound: Round,
    },
    Unsealed {
        slice_index: u64,
        bound: Round,
    },
    CausalOrder {
        slice_index: u64,
        ancestor: Digest,
        descendant: Digest,
    },
    EdgeNotPreserved {
        slice_index: u64,
        from: Digest,
        to: Digest,
    },
    Oracle(Discrepancy),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::StoppingTimeBeyondCap { digest, birth, stopping_time } => write!(
                f,
                "bounded completion: {digest} born {birth} stops at {stopping_time}"
            ),
            Violation::UnsettledPastCap { digest, birth } => {
                write!(f, "bounded completion: {digest} born {birth} still unsettled")
            }
            Violation::LateSeal { slice_index, sealed_at, bound } => write!(
                f,
                "bounded completion: slice {slice_index} sealed at {sealed_at}, bound {bound}"
            ),
            Violation::Unsealed { slice_index, bound } => {
                write!(f, "bounded completion: slice {slice_index} unsealed past {bound}")
            }
            Violation::CausalOrder { slice_index, ancestor, descendant } => write!(
                f,
                "causal consistency: slice {slice_index} puts {descendant} before its ancestor {ancestor}"
            ),
            Violation::EdgeNotPreserved { slice_index, from, to } => write!(
                f,
                "fairness: slice {slice_index} orders {to} before {from} against an enforceable edge"
            ),
            Violation::Oracle(d) => write!(f, "oracle: {d}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub metrics: RunMetrics,
    pub output_log: Vec<u8>,
    pub sealed: Vec<SealRecord>,
    /// Frozen verdicts keyed by completion-key ordered pair.
    pub verdicts: BTreeMap<(Digest, Digest), Verdict>,
    pub violations: Vec<Violation>,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Full pipeline over one log.
pub fn run_experiment(
    events: &[ExporterEvent],
    config: &RunConfig,
    options: RunOptions,
) -> Result<RunOutcome, ExperimentError> {
    let started = Instant::now();
    let mut engine = Engine::with_rule(*config, options.fault.rule(config))?.with_audit();
    // frontier at which each slice arrived
    let mut delivered_at: BTreeMap<u64, Round> = BTreeMap::new();
    for ev in events {
        engine.apply(ev)?;
        if let ExporterEvent::SliceDelivered { slice_index, .. } = ev {
            delivered_at.insert(*slice_index, engine.frontier().unwrap_or(Round::GENESIS));
        }
    }
    let order_time = started.elapsed();

    let started = Instant::now();
    let report = engine.report()?;
    let frontier = engine.frontier();
    let w = config.w_max;
    let mut violations = Vec::new();
    let mut m = CanonicalMetrics {
        aufs: report.profiles.len() as u64,
        slices_delivered: delivered_at.len() as u64,
        pair_evaluations: engine.pair_evaluations(),
        ..Default::default()
    };
    let counts = engine.verdict_counts();
    (m.edges, m.truncated, m.conflict, m.no_signal) = (
        counts.edges,
        counts.truncated,
        counts.conflict,
        counts.no_signal,
    );

    for (digest, p) in &report.profiles {
        let cap = Round(p.birth_round.0 + w);
        match p.stopping_time {
            Some(h) => {
                m.settled += 1;
                if p.mature == Some(true) {
                    m.mature += 1;
                }
                if h > cap {
                    violations.push(Violation::StoppingTimeBeyondCap {
                        digest: *digest,
                        birth: p.birth_round,
                        stopping_time: h,
                    });
                }
            }
            None if frontier.is_some_and(|fr| fr >= cap) => {
                violations.push(Violation::UnsettledPastCap {
                    digest: *digest,
                    birth: p.birth_round,
                });
            }
            None => {}
        }
    }

    let births: HashMap<Digest, Round> = report
        .profiles
        .iter()
        .map(|(d, p)| (*d, p.birth_round))
        .collect();
    for (&index, &arrived) in &delivered_at {
        let sealed = report.slices.get(&index);
        let max_birth = match sealed {
            Some(s) => s.max_birth_round,
            None => slice_members(events, index)
                .iter()
                .filter_map(|d| births.get(d))
                .copied()
                .max()
                .unwrap_or(Round::GENESIS),
        };
        let bound = Round((max_birth.0 + w).max(arrived.0));
        match sealed {
            Some(s) if s.sealed_at > bound => violations.push(Violation::LateSeal {
                slice_index: index,
                sealed_at: s.sealed_at,
                bound,
            }),
            None if frontier.is_some_and(|fr| fr >= bound) => {
                violations.push(Violation::Unsealed {
                    slice_index: index,
                    bound,
                })
            }
            _ => {}
        }
    }

    let store = engine.store();
    for seal in engine.sealed() {
        m.slices_sealed += 1;
        let delay = seal.sealing_time.0 - seal.max_birth_round.0;
        m.sealing_delay_sum += delay;
        m.sealing_delay_max = m.sealing_delay_max.max(delay);
        let order = &seal.order;
        let position: HashMap<Digest, usize> = order
            .ordered
            .iter()
            .enumerate()
            .map(|(i, d)| (*d, i))
            .collect();
        let floor = order
            .ordered
            .iter()
            .filter_map(|d| births.get(d))
            .min()
            .copied()
            .unwrap_or(Round::GENESIS);
        for d in &order.ordered {
            for anc in store
                .bounded_ancestors(d, floor)
                .map_err(EngineError::from)?
            {
                if let Some(&pa) = position.get(&anc) {
                    if pa > position[d] {
                        violations.push(Violation::CausalOrder {
                            slice_index: order.slice_index,
                            ancestor: anc,
                            descendant: *d,
                        });
                    }
                }
            }
        }
        for (from, to) in &order.enforceable_svp {
            m.enforceable_edges += 1;
            if position[from] < position[to] {
                m.preserved_edges += 1;
            } else {
                violations.push(Violation::EdgeNotPreserved {
                    slice_index: order.slice_index,
                    from: *from,
                    to: *to,
                });
            }
        }
    }
    let checks_time = started.elapsed();

    let started = Instant::now();
    if options.verify {
        let oracle = oracle_evaluate(events, config)?;
        violations.extend(
            diff_reports(&report, &oracle)?
                .into_iter()
                .map(Violation::Oracle),
        );
    }
    let verify_time = started.elapsed();

    m.violations = violations.len() as u64;
    m.output_sha256 = hex::encode(Sha256::digest(engine.output_log()));
    Ok(RunOutcome {
        metrics: RunMetrics {
            canonical: m,
            timings: PhaseTimings {
                order: order_time,
                checks: checks_time,
                verify: verify_time,
            },
        },
        output_log: engine.output_log().to_vec(),
        sealed: engine.sealed().to_vec(),
        verdicts: report.verdicts,
        violations,
    })
}

fn slice_members(events: &[ExporterEvent], index: u64) -> Vec<Digest> {
    events
        .iter()
        .find_map(|e| match e {
            ExporterEvent::SliceDelivered {
                slice_index,
                members,
            } if *slice_index == index => Some(members.clone()),
            _ => None,
        })
        .unwrap_or_default()
}

/// Runs independent experiments on worker threads; results keep input order.
pub fn run_many(
    jobs: &[(EventLog, RunConfig)],
    options: RunOptions,
    workers: usize,
) -> Vec<Result<RunOutcome, ExperimentError>> {
    let workers = workers.max(1);
    let mut results: Vec<Option<Result<RunOutcome, ExperimentError>>> =
        (0..jobs.len()).map(|_| None).collect();
    let chunk_len = jobs.len().div_ceil(workers).max(1);
    std::thread::scope(|scope| {
        for (ci, chunk) in results.chunks_mut(chunk_len).enumerate() {
            scope.spawn(move || {
                for (k, slot) in chunk.iter_mut().enumerate() {
                    let (log, cfg) = &jobs[ci * chunk_len + k];
                    *slot = Some(run_experiment(log.events(), cfg, options));
                }
            });
        }
    });
    results
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

/// Bench parameters: n = 10 with the largest tolerated f, `w_max` = 10.
pub const BENCH_N: u32 = 10;
pub const BENCH_W_MAX: u64 = 10;

/// A log whose single slice holds the first `k` AUFs in completion-key order.
/// Every creator samples exactly 2f+1 parents, so visibility spreads over
/// several rounds.
pub fn bench_log(k: usize, seed: u64) -> EventLog {
    let f = RunConfig::max_faults(BENCH_N);
    let config = RunConfig::new(BENCH_N, f, BENCH_W_MAX, seed).expect("bench config is valid");
    let quorum = config.quorum() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = EventLog::with_config(config).expect("valid config");
    let slice_rounds = k.div_ceil(BENCH_N as usize) as u64;
    let mut prev: Vec<Digest> = Vec::new();
    let mut members = Vec::new();
    for r in 0..slice_rounds + BENCH_W_MAX {
        let canonical: Vec<AufMeta> = (0..BENCH_N)
            .map(|c| {
                let mut parents: Vec<Digest> =
                    prev.choose_multiple(&mut rng, quorum).copied().collect();
                parents.sort();
                AufMeta::new(CreatorId(c), Round(r), parents, 0)
            })
            .collect();
        prev = canonical.iter().map(|m| m.digest).collect();
        for m in &canonical {
            if members.len() < k {
                members.push(m.digest);
            }
        }
        log.append_event(ExporterEvent::RoundCommitted {
            round: Round(r),
            canonical,
        })
        .expect("bench rounds are well formed");
        if r + 1 == slice_rounds {
            log.append_event(ExporterEvent::SliceDelivered {
                slice_index: 0,
                members: members.clone(),
            })
            .expect("bench slice is well formed");
        }
    }
    log
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub size: usize,
    pub pair_evaluations: u64,
    /// Best of the repetitions, whole log through the engine.
    pub wall: Duration,
}

/// Orders one bench log per size, keeping the fastest of `repeats` runs.
pub fn scaling_bench(sizes: &[usize], repeats: usize) -> Result<Vec<BenchRow>, ExperimentError> {
    let mut rows = Vec::new();
    for &size in sizes {
        let log = bench_log(size, size as u64);
        let config = *log.config().expect("bench logs carry a config");
        let mut best = Duration::MAX;
        let mut evaluations = 0;
        for _ in 0..repeats.max(1) {
            let started = Instant::now();
            let mut engine = Engine::new(config)?;
            engine.apply_all(log.events())?;
            best = best.min(started.elapsed());
            evaluations = engine.pair_evaluations();
            debug_assert_eq!(engine.sealed().len(), 1);
        }
        rows.push(BenchRow {
            size,
            pair_evaluations: evaluations,
            wall: best,
        });
    }
    Ok(rows)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let logs: Vec<(f64, f64)> = points.iter().map(|(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let cov: f64 = logs.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = logs.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    cov / var
}
