//! Committed-output event stream and its replayable on-disk log.
//!
//! A log is a sequence of records. Each record is one line:
//!
//! ```text
//! <len:8 hex> <canonical json> <crc32:8 hex>\n
//! ```
//!
//! The JSON body has sorted keys and no floating point values, so equal
//! streams always produce equal bytes. `len` counts the JSON bytes and the
//! CRC-32 covers the JSON bytes only.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dag::{AufMeta, CreatorId, Digest, Round};

/// Protocol constants shared by every consumer of one stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Replica (creator) count.
    pub n: u32,
    /// Byzantine fault bound.
    pub f: u32,
    /// Observation cap in rounds.
    pub w_max: u64,
    /// Simulation seed; not consulted by the ordering engine.
    pub seed: u64,
}

impl RunConfig {
    pub fn new(n: u32, f: u32, w_max: u64, seed: u64) -> Result<RunConfig, ExporterError> {
        let cfg = RunConfig { n, f, w_max, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Largest fault bound tolerated by `n` replicas.
    pub fn max_faults(n: u32) -> u32 {
        n.saturating_sub(1) / 3
    }

    pub fn validate(&self) -> Result<(), ExporterError> {
        if self.n == 0 || self.n < 3 * self.f + 1 {
            return Err(ExporterError::InvalidConfig(format!(
                "need n >= 3f+1, got n={} f={}",
                self.n, self.f
            )));
        }
        if self.w_max == 0 {
            return Err(ExporterError::InvalidConfig("w_max must be >= 1".into()));
        }
        Ok(())
    }

    /// Visibility quorum `2f+1`.
    pub fn quorum(&self) -> u32 {
        2 * self.f + 1
    }

    /// Directional margin `f+1` needed for a strong signal.
    pub fn signal_threshold(&self) -> u32 {
        self.f + 1
    }
}

/// One item of the committed-output stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExporterEvent {
    /// All canonical vertices of `round`, ordered by creator.
    RoundCommitted {
        round: Round,
        canonical: Vec<AufMeta>,
    },
    /// Newly delivered AUFs of one commit decision.
    SliceDelivered {
        slice_index: u64,
        members: Vec<Digest>,
    },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExporterError {
    #[error("round {got} committed, expected {expected}")]
    NonConsecutiveRound { expected: Round, got: Round },
    #[error("vertex {digest} has round {vertex_round} inside commit of {round}")]
    MismatchedVertexRound {
        digest: Digest,
        vertex_round: Round,
        round: Round,
    },
    #[error("canonical vertices of {round} are not strictly ordered by creator")]
    NonCanonicalOrder { round: Round },
    #[error("creator {creator} out of range for n={n}")]
    UnknownCreator { creator: CreatorId, n: u32 },
    #[error("digest {0} committed twice")]
    DuplicateDigest(Digest),
    #[error("slice {got} delivered, expected {expected}")]
    NonConsecutiveSlice { expected: u64, got: u64 },
    #[error("slice {slice_index} is empty")]
    EmptySlice { slice_index: u64 },
    #[error("slice {slice_index} repeats already delivered member {digest}")]
    DuplicateSliceMember { slice_index: u64, digest: Digest },
    #[error("slice {slice_index} contains uncommitted member {digest}")]
    UnknownSliceMember { slice_index: u64, digest: Digest },
    #[error("corrupt log at byte {offset}: {reason}")]
    CorruptLog { offset: usize, reason: String },
    #[error("invalid run config: {0}")]
    InvalidConfig(String),
    #[error("config record must be the first record")]
    MisplacedConfig,
    #[error("io: {0}")]
    Io(String),
}

/// Incremental checker for the stream invariants; any valid prefix is accepted.
#[derive(Clone, Debug, Default)]
pub struct StreamValidator {
    n: Option<u32>,
    next_round: u64,
    next_slice: u64,
    committed: HashSet<Digest>,
    delivered: HashSet<Digest>,
}

impl StreamValidator {
    pub fn new(config: Option<&RunConfig>) -> StreamValidator {
        StreamValidator {
            n: config.map(|c| c.n),
            ..StreamValidator::default()
        }
    }

    /// Checks `event` against the prefix seen so far and, if valid, absorbs it.
    pub fn admit(&mut self, event: &ExporterEvent) -> Result<(), ExporterError> {
        match event {
            ExporterEvent::RoundCommitted { round, canonical } => {
                if round.0 != self.next_round {
                    return Err(ExporterError::NonConsecutiveRound {
                        expected: Round(self.next_round),
                        got: *round,
                    });
                }
                let mut seen = HashSet::new();
                for (i, meta) in canonical.iter().enumerate() {
                    if meta.round != *round {
                        return Err(ExporterError::MismatchedVertexRound {
                            digest: meta.digest,
                            vertex_round: meta.round,
                            round: *round,
                        });
                    }
                    if i > 0 && canonical[i - 1].creator >= meta.creator {
                        return Err(ExporterError::NonCanonicalOrder { round: *round });
                    }
                    if let Some(n) = self.n {
                        if meta.creator.0 >= n {
                            return Err(ExporterError::UnknownCreator {
                                creator: meta.creator,
                                n,
                            });
                        }
                    }
                    if self.committed.contains(&meta.digest) || !seen.insert(meta.digest) {
                        return Err(ExporterError::DuplicateDigest(meta.digest));
                    }
                }
                self.committed.extend(seen);
                self.next_round += 1;
            }
            ExporterEvent::SliceDelivered {
                slice_index,
                members,
            } => {
                if *slice_index != self.next_slice {
                    return Err(ExporterError::NonConsecutiveSlice {
                        expected: self.next_slice,
                        got: *slice_index,
                    });
                }
                if members.is_empty() {
                    return Err(ExporterError::EmptySlice {
                        slice_index: *slice_index,
                    });
                }
                let mut fresh = HashSet::new();
                for d in members {
                    if !self.committed.contains(d) {
                        return Err(ExporterError::UnknownSliceMember {
                            slice_index: *slice_index,
                            digest: *d,
                        });
                    }
                    if self.delivered.contains(d) || !fresh.insert(*d) {
                        return Err(ExporterError::DuplicateSliceMember {
                            slice_index: *slice_index,
                            digest: *d,
                        });
                    }
                }
                self.delivered.extend(fresh);
                self.next_slice += 1;
            }
        }
        Ok(())
    }
}

/// Encodes one value as a framed, checksummed record line.
pub fn encode_record<T: Serialize>(value: &T) -> Vec<u8> {
    // Round-trip through `Value` so object keys come out sorted.
    let value = serde_json::to_value(value).expect("record types serialize to JSON");
    let body = serde_json::to_string(&value).expect("JSON values always render");
    let crc = crc32fast::hash(body.as_bytes());
    format!("{:08x} {} {:08x}\n", body.len(), body, crc).into_bytes()
}

/// Splits `bytes` into record bodies, verifying framing and checksums.
pub fn decode_records(bytes: &[u8]) -> Result<Vec<serde_json::Value>, ExporterError> {
    let corrupt = |offset: usize, reason: &str| ExporterError::CorruptLog {
        offset,
        reason: reason.to_string(),
    };
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let header = bytes
            .get(pos..pos + 9)
            .ok_or_else(|| corrupt(pos, "truncated length prefix"))?;
        if header[8] != b' ' {
            return Err(corrupt(pos, "missing separator after length"));
        }
        let len_str =
            std::str::from_utf8(&header[..8]).map_err(|_| corrupt(pos, "non-ascii length"))?;
        let len =
            usize::from_str_radix(len_str, 16).map_err(|_| corrupt(pos, "bad length prefix"))?;
        let body_start = pos + 9;
        let body_end = body_start + len;
        let trailer = bytes
            .get(body_end..body_end + 10)
            .ok_or_else(|| corrupt(pos, "truncated record"))?;
        if trailer[0] != b' ' || trailer[9] != b'\n' {
            return Err(corrupt(body_end, "bad record trailer"));
        }
        let crc_str = std::str::from_utf8(&trailer[1..9])
            .map_err(|_| corrupt(body_end, "non-ascii checksum"))?;
        let crc = u32::from_str_radix(crc_str, 16)
            .map_err(|_| corrupt(body_end, "bad checksum field"))?;
        let body = &bytes[body_start..body_end];
        if crc32fast::hash(body) != crc {
            return Err(corrupt(pos, "checksum mismatch"));
        }
        let value: serde_json::Value =
            serde_json::from_slice(body).map_err(|e| corrupt(body_start, &e.to_string()))?;
        out.push(value);
        pos = body_end + 10;
    }
    Ok(out)
}

/// Length of the longest prefix made of whole records (framing only, no checksums).
fn complete_prefix_len(bytes: &[u8]) -> usize {
    let mut pos = 0;
    loop {
        let len = bytes
            .get(pos..pos + 8)
            .and_then(|h| std::str::from_utf8(h).ok())
            .and_then(|h| usize::from_str_radix(h, 16).ok());
        match len {
            Some(len) if pos + 9 + len + 10 <= bytes.len() => pos += 9 + len + 10,
            _ => return pos,
        }
    }
}

/// Decodes every record of `bytes` as `T`.
pub fn decode_typed<T: DeserializeOwned>(bytes: &[u8]) -> Result<Vec<T>, ExporterError> {
    decode_records(bytes)?
        .into_iter()
        .map(|v| {
            serde_json::from_value(v).map_err(|e| ExporterError::CorruptLog {
                offset: 0,
                reason: e.to_string(),
            })
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LogRecord {
    Config(RunConfig),
    #[serde(untagged)]
    Event(ExporterEvent),
}

/// Validated, append-only exporter log kept in memory alongside its encoding.
#[derive(Clone, Debug, Default)]
pub struct EventLog {
    config: Option<RunConfig>,
    events: Vec<ExporterEvent>,
    bytes: Vec<u8>,
    validator: StreamValidator,
}

impl EventLog {
    /// Empty log without a config header.
    pub fn new() -> EventLog {
        EventLog::default()
    }

    /// Log that starts with a config header record.
    pub fn with_config(config: RunConfig) -> Result<EventLog, ExporterError> {
        config.validate()?;
        Ok(EventLog {
            config: Some(config),
            events: Vec::new(),
            bytes: encode_record(&LogRecord::Config(config)),
            validator: StreamValidator::new(Some(&config)),
        })
    }

    pub fn append_event(&mut self, event: ExporterEvent) -> Result<(), ExporterError> {
        self.validator.admit(&event)?;
        let record = LogRecord::Event(event);
        self.bytes.extend(encode_record(&record));
        let LogRecord::Event(event) = record else {
            unreachable!()
        };
        self.events.push(event);
        Ok(())
    }

    pub fn config(&self) -> Option<&RunConfig> {
        self.config.as_ref()
    }

    pub fn events(&self) -> &[ExporterEvent] {
        &self.events
    }

    pub fn into_events(self) -> Vec<ExporterEvent> {
        self.events
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Parses and re-validates a log produced by [`EventLog::append_event`].
    pub fn replay(bytes: &[u8]) -> Result<EventLog, ExporterError> {
        let mut log = EventLog::new();
        for (i, value) in decode_records(bytes)?.into_iter().enumerate() {
            let record: LogRecord =
                serde_json::from_value(value).map_err(|e| ExporterError::CorruptLog {
                    offset: 0,
                    reason: format!("record {i}: {e}"),
                })?;
            match record {
                LogRecord::Config(cfg) if i == 0 => log = EventLog::with_config(cfg)?,
                LogRecord::Config(_) => return Err(ExporterError::MisplacedConfig),
                LogRecord::Event(ev) => log.append_event(ev)?,
            }
        }
        Ok(log)
    }

    /// Like [`EventLog::replay`], but drops a final record cut short by an
    /// interrupted write. Returns the log and the number of bytes kept.
    pub fn recover(bytes: &[u8]) -> Result<(EventLog, usize), ExporterError> {
        let kept = complete_prefix_len(bytes);
        Ok((EventLog::replay(&bytes[..kept])?, kept))
    }

    pub fn save(&self, path: &Path) -> Result<(), ExporterError> {
        fs::write(path, &self.bytes).map_err(|e| ExporterError::Io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<EventLog, ExporterError> {
        let bytes = fs::read(path).map_err(|e| ExporterError::Io(e.to_string()))?;
        EventLog::replay(&bytes)
    }
}
