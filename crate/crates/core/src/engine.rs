//! Online ordering engine: consumes exporter events and emits sealed slice orders.

use std::collections::BTreeMap;
use std::sync::mpsc::Receiver;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comparator::{ComparatorRule, PairTable, Verdict};
use crate::dag::{DagError, DagStore, Digest, Round, VertexIdx};
use crate::exporter::{
    decode_typed, encode_record, ExporterError, ExporterEvent, RunConfig, StreamValidator,
};
use crate::linearizer::{
    build_precedence_graph, condense_and_linearize, slice_sealing_time, CompletionKey,
    LinearizerError, SliceOrder,
};
use crate::visibility::{VisibilityError, VisibilityProfile, VisibilityTracker};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error(transparent)]
    Stream(#[from] ExporterError),
    #[error(transparent)]
    Dag(#[from] DagError),
    #[error(transparent)]
    Visibility(#[from] VisibilityError),
    #[error(transparent)]
    Linearizer(#[from] LinearizerError),
    #[error("engine was built without an audit trail")]
    NoAudit,
    #[error("event channel closed before the producer finished")]
    ChannelClosed,
}

/// One sealed slice as written to the output log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename = "slice_order")]
pub struct SealRecord {
    #[serde(flatten)]
    pub order: SliceOrder,
    /// `T(S)`.
    pub sealing_time: Round,
    /// Frontier at which the order was emitted.
    pub sealed_at: Round,
    /// Largest member birth round.
    pub max_birth_round: Round,
}

/// Frozen-verdict tallies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictCounts {
    pub edges: u64,
    pub truncated: u64,
    pub conflict: u64,
    pub no_signal: u64,
}

impl VerdictCounts {
    pub fn record(&mut self, v: Verdict) {
        match v {
            Verdict::EdgeForward | Verdict::EdgeBackward => self.edges += 1,
            Verdict::AbstainTruncated => self.truncated += 1,
            Verdict::AbstainConflict => self.conflict += 1,
            Verdict::AbstainNoSignal => self.no_signal += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.edges + self.truncated + self.conflict + self.no_signal
    }
}

/// Everything the engine decided, for comparison against the oracle.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EngineReport {
    pub config: Option<RunConfig>,
    /// Released and still-active profiles.
    pub profiles: BTreeMap<Digest, VisibilityProfile>,
    /// Frozen verdicts keyed by completion-key ordered pair.
    pub verdicts: BTreeMap<(Digest, Digest), Verdict>,
    pub slices: BTreeMap<u64, SealRecord>,
}

#[derive(Debug)]
struct PendingSlice {
    index: u64,
    table: PairTable,
}

#[derive(Debug, Default)]
struct Audit {
    released: BTreeMap<Digest, VisibilityProfile>,
    verdicts: BTreeMap<(Digest, Digest), Verdict>,
}

/// Incremental ordering engine for one event stream.
#[derive(Debug)]
pub struct Engine {
    config: RunConfig,
    rule: ComparatorRule,
    validator: StreamValidator,
    store: DagStore,
    tracker: VisibilityTracker,
    pending: BTreeMap<u64, PendingSlice>,
    sealed: Vec<SealRecord>,
    output: Vec<u8>,
    counts: VerdictCounts,
    pair_evaluations: u64,
    audit: Option<Audit>,
}

impl Engine {
    pub fn new(config: RunConfig) -> Result<Engine, EngineError> {
        Engine::with_rule(config, ComparatorRule::for_config(&config))
    }

    /// Engine with a non-default comparator rule (used to exercise verification).
    pub fn with_rule(config: RunConfig, rule: ComparatorRule) -> Result<Engine, EngineError> {
        config.validate()?;
        Ok(Engine {
            config,
            rule,
            validator: StreamValidator::new(Some(&config)),
            store: DagStore::new(config.quorum() as usize),
            tracker: VisibilityTracker::new(&config),
            pending: BTreeMap::new(),
            sealed: Vec::new(),
            output: Vec::new(),
            counts: VerdictCounts::default(),
            pair_evaluations: 0,
            audit: None,
        })
    }

    /// Keeps released profiles and frozen verdicts so [`Engine::report`] works.
    pub fn with_audit(mut self) -> Engine {
        self.audit = Some(Audit::default());
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn frontier(&self) -> Option<Round> {
        self.store.frontier()
    }

    pub fn store(&self) -> &DagStore {
        &self.store
    }

    pub fn tracker(&self) -> &VisibilityTracker {
        &self.tracker
    }

    /// Number of delivered slices not yet sealed.
    pub fn pending_slices(&self) -> usize {
        self.pending.len()
    }

    pub fn sealed(&self) -> &[SealRecord] {
        &self.sealed
    }

    /// Output log bytes: one framed record per sealed slice, in seal order.
    pub fn output_log(&self) -> &[u8] {
        &self.output
    }

    pub fn verdict_counts(&self) -> VerdictCounts {
        self.counts
    }

    pub fn pair_evaluations(&self) -> u64 {
        self.pair_evaluations
    }

    /// Applies one event and returns the slices sealed as a result.
    pub fn apply(&mut self, event: &ExporterEvent) -> Result<Vec<SealRecord>, EngineError> {
        self.validator.admit(event)?;
        match event {
            ExporterEvent::RoundCommitted { round, canonical } => {
                let mut idxs = Vec::with_capacity(canonical.len());
                for meta in canonical {
                    idxs.push(self.store.insert_vertex(meta.clone())?);
                }
                self.store.commit_round(*round)?;
                self.tracker
                    .on_round_committed(*round, &idxs, &self.store)?;
                self.tracker.settle_stopping_times(*round);
            }
            ExporterEvent::SliceDelivered {
                slice_index,
                members,
            } => {
                let mut keyed = Vec::with_capacity(members.len());
                for d in members {
                    let idx = self.store.index_of(d)?;
                    let meta = self.store.meta(idx);
                    keyed.push((
                        idx,
                        CompletionKey {
                            round: meta.round,
                            creator: meta.creator,
                            digest: meta.digest,
                        },
                    ));
                }
                self.pending.insert(
                    *slice_index,
                    PendingSlice {
                        index: *slice_index,
                        table: PairTable::new(keyed),
                    },
                );
            }
        }
        self.freeze_ready_pairs();
        self.seal_ready_slices()
    }

    /// Applies every event in order.
    pub fn apply_all<'e>(
        &mut self,
        events: impl IntoIterator<Item = &'e ExporterEvent>,
    ) -> Result<(), EngineError> {
        for ev in events {
            self.apply(ev)?;
        }
        Ok(())
    }

    /// Drains an ordered channel fed by a producer thread.
    pub fn consume(&mut self, rx: Receiver<ExporterEvent>) -> Result<(), EngineError> {
        for ev in rx {
            self.apply(&ev)?;
        }
        Ok(())
    }

    fn freeze_ready_pairs(&mut self) {
        let Some(frontier) = self.store.frontier() else {
            return;
        };
        let tracker = &self.tracker;
        for slice in self.pending.values_mut() {
            let before = slice.table.evaluations();
            let newly = slice.table.freeze_ready_pairs(
                frontier,
                |i| tracker.profile(i).expect("pending members stay active"),
                self.rule,
            );
            self.pair_evaluations += slice.table.evaluations() - before;
            for record in newly {
                let v = record.verdict.expect("just frozen");
                self.counts.record(v);
                if let Some(audit) = self.audit.as_mut() {
                    audit.verdicts.insert((record.a, record.b), v);
                }
            }
        }
    }

    /// Seals, in slice-index order, every pending slice whose members are all
    /// settled and whose sealing time has been reached.
    fn seal_ready_slices(&mut self) -> Result<Vec<SealRecord>, EngineError> {
        let Some(frontier) = self.store.frontier() else {
            return Ok(Vec::new());
        };
        let mut ready = Vec::new();
        for (index, slice) in &self.pending {
            if !slice.table.is_fully_frozen() {
                continue;
            }
            let profiles = slice
                .table
                .members()
                .iter()
                .map(|(i, _)| self.tracker.profile(*i).expect("active member"));
            match slice_sealing_time(profiles) {
                Ok(t) if t <= frontier => ready.push((*index, t)),
                Ok(_) | Err(LinearizerError::UnsettledMember(_)) => {}
                Err(e) => return Err(e.into()),
            }
        }
        let mut out = Vec::with_capacity(ready.len());
        for (index, sealing_time) in ready {
            let slice = self.pending.remove(&index).expect("listed above");
            let graph = build_precedence_graph(&slice.table, &self.store)?;
            let order = condense_and_linearize(&graph, slice.index);
            let max_birth_round = graph
                .members
                .iter()
                .map(|k| k.round)
                .max()
                .expect("slices are non-empty");
            for (idx, _) in slice.table.members() {
                self.release(*idx);
            }
            let record = SealRecord {
                order,
                sealing_time,
                sealed_at: frontier,
                max_birth_round,
            };
            self.output.extend(encode_record(&record));
            self.sealed.push(record.clone());
            out.push(record);
        }
        Ok(out)
    }

    fn release(&mut self, idx: VertexIdx) {
        if let Some(profile) = self.tracker.release(idx) {
            if let Some(audit) = self.audit.as_mut() {
                audit.released.insert(profile.target, profile);
            }
        }
    }

    /// Snapshot of every decision so far. Requires [`Engine::with_audit`].
    pub fn report(&self) -> Result<EngineReport, EngineError> {
        let audit = self.audit.as_ref().ok_or(EngineError::NoAudit)?;
        let mut profiles = audit.released.clone();
        for idx in self.tracker.active() {
            let p = self.tracker.profile(idx).expect("active");
            profiles.insert(p.target, p.clone());
        }
        Ok(EngineReport {
            config: Some(self.config),
            profiles,
            verdicts: audit.verdicts.clone(),
            slices: self
                .sealed
                .iter()
                .map(|r| (r.order.slice_index, r.clone()))
                .collect(),
        })
    }
}

/// Decodes an output log written by [`Engine::output_log`].
pub fn decode_output_log(bytes: &[u8]) -> Result<Vec<SealRecord>, ExporterError> {
    decode_typed(bytes)
}

/// Runs `events` through a fresh engine fed by a separate producer thread.
pub fn order_threaded(
    config: RunConfig,
    events: Vec<ExporterEvent>,
) -> Result<Engine, EngineError> {
    let mut engine = Engine::new(config)?;
    let (tx, rx) = std::sync::mpsc::sync_channel(64);
    let producer = std::thread::spawn(move || {
        for ev in events {
            if tx.send(ev).is_err() {
                return false;
            }
        }
        true
    });
    let consumed = engine.consume(rx);
    let finished = producer.join().unwrap_or(false);
    consumed?;
    if !finished {
        return Err(EngineError::ChannelClosed);
    }
    Ok(engine)
}
