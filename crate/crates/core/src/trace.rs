//! On-disk artifacts and offline replay.
//!
//! * Logit traces and checkpoints are little-endian binary files that start
//!   with a 4-byte magic and a version byte. Floats are stored as raw IEEE
//!   bits, so round trips are bit-exact.
//! * Decision logs and per-pass metrics are JSONL. The first line is a
//!   header record; every line carries a `kind` field. Floats use the
//!   shortest representation that parses back to the same value.
//!
//! Trace layout (version 1):
//!
//! ```text
//! magic "MMTR" | version u8 | classes u32 | example_count u32 | pass_count u32
//! | record_count u64 | config_hash u64 | threshold_id_count u32 | ids u64*
//! record: example_id u64 | pass u32 | has_gold u8 | gold u32 | logits f64*(classes+1)
//! ```

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::aum::AumTracker;
use crate::error::{Error, Result};
use crate::model::{Mlp, OptimizerState};
use crate::policy::{MaskDecision, PolicyKind};
use crate::selection::{SelectionConfig, SelectionEngine};
use crate::thresholds::ThresholdState;

pub const TRACE_MAGIC: [u8; 4] = *b"MMTR";
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"MMCK";
pub const FORMAT_VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub example_id: u64,
    pub pass_index: u32,
    pub logits: Vec<f64>,
    pub gold_label: Option<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceHeader {
    pub version: u8,
    /// Genuine classes; records hold `classes + 1` logits.
    pub classes: u32,
    pub example_count: u32,
    pub pass_count: u32,
    pub record_count: u64,
    pub config_hash: u64,
    pub threshold_ids: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceFile {
    pub header: TraceHeader,
    pub records: Vec<TraceRecord>,
}

impl TraceFile {
    /// Builds a trace and fills in the header counts from the records.
    pub fn new(
        classes: u32,
        config_hash: u64,
        threshold_ids: Vec<u64>,
        records: Vec<TraceRecord>,
    ) -> Result<Self> {
        let examples: HashSet<u64> = records.iter().map(|r| r.example_id).collect();
        let passes = records.iter().map(|r| r.pass_index).max().unwrap_or(0);
        let trace = Self {
            header: TraceHeader {
                version: FORMAT_VERSION,
                classes,
                example_count: examples.len() as u32,
                pass_count: passes,
                record_count: records.len() as u64,
                config_hash,
                threshold_ids,
            },
            records,
        };
        trace.validate()?;
        Ok(trace)
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.header;
        if h.version != FORMAT_VERSION {
            return Err(Error::Format {
                offset: 4,
                message: format!("unsupported trace version {}", h.version),
            });
        }
        if h.record_count != self.records.len() as u64 {
            return Err(Error::Format {
                offset: 0,
                message: format!(
                    "count mismatch: header says {} records, body has {}",
                    h.record_count,
                    self.records.len()
                ),
            });
        }
        let width = h.classes as usize + 1;
        let mut last_pass: BTreeMap<u64, u32> = BTreeMap::new();
        for (i, r) in self.records.iter().enumerate() {
            if r.logits.len() != width {
                return Err(Error::invalid(format!(
                    "record {i}: {} logits, expected {width}",
                    r.logits.len()
                )));
            }
            if r.logits.iter().any(|z| !z.is_finite()) {
                return Err(Error::invalid(format!("record {i}: non-finite logit")));
            }
            if let Some(&prev) = last_pass.get(&r.example_id) {
                if r.pass_index <= prev {
                    return Err(Error::invalid(format!(
                        "record {i}: pass {} for example {} does not follow pass {prev}",
                        r.pass_index, r.example_id
                    )));
                }
            }
            last_pass.insert(r.example_id, r.pass_index);
        }
        if last_pass.len() as u32 != h.example_count {
            return Err(Error::Format {
                offset: 0,
                message: format!(
                    "count mismatch: header says {} examples, body has {}",
                    h.example_count,
                    last_pass.len()
                ),
            });
        }
        let max_pass = last_pass.values().copied().max().unwrap_or(0);
        if max_pass != h.pass_count {
            return Err(Error::Format {
                offset: 0,
                message: format!(
                    "count mismatch: header says {} passes, body reaches {max_pass}",
                    h.pass_count
                ),
            });
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let h = &self.header;
        let width = h.classes as usize + 1;
        let mut out = Vec::with_capacity(40 + self.records.len() * (17 + 8 * width));
        out.extend_from_slice(&TRACE_MAGIC);
        out.push(h.version);
        out.extend_from_slice(&h.classes.to_le_bytes());
        out.extend_from_slice(&h.example_count.to_le_bytes());
        out.extend_from_slice(&h.pass_count.to_le_bytes());
        out.extend_from_slice(&h.record_count.to_le_bytes());
        out.extend_from_slice(&h.config_hash.to_le_bytes());
        out.extend_from_slice(&(h.threshold_ids.len() as u32).to_le_bytes());
        for id in &h.threshold_ids {
            out.extend_from_slice(&id.to_le_bytes());
        }
        for r in &self.records {
            out.extend_from_slice(&r.example_id.to_le_bytes());
            out.extend_from_slice(&r.pass_index.to_le_bytes());
            out.push(u8::from(r.gold_label.is_some()));
            out.extend_from_slice(&r.gold_label.unwrap_or(0).to_le_bytes());
            for z in &r.logits {
                out.extend_from_slice(&z.to_bits().to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        let magic = cur.take(4)?;
        if magic != TRACE_MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: "not a trace file (bad magic)".into(),
            });
        }
        let version = cur.u8()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format {
                offset: 4,
                message: format!("unsupported trace version {version}"),
            });
        }
        let classes = cur.u32()?;
        let example_count = cur.u32()?;
        let pass_count = cur.u32()?;
        let record_count = cur.u64()?;
        let config_hash = cur.u64()?;
        let n_thresh = cur.u32()?;
        let mut threshold_ids = Vec::with_capacity(n_thresh.min(1 << 20) as usize);
        for _ in 0..n_thresh {
            threshold_ids.push(cur.u64()?);
        }
        let width = classes as usize + 1;
        let mut records = Vec::new();
        while !cur.is_empty() {
            let example_id = cur.u64()?;
            let pass_index = cur.u32()?;
            let has_gold = cur.u8()?;
            let gold = cur.u32()?;
            let mut logits = Vec::with_capacity(width);
            for _ in 0..width {
                logits.push(f64::from_bits(cur.u64()?));
            }
            records.push(TraceRecord {
                example_id,
                pass_index,
                logits,
                gold_label: (has_gold != 0).then_some(gold),
            });
        }
        let trace = Self {
            header: TraceHeader {
                version,
                classes,
                example_count,
                pass_count,
                record_count,
                config_hash,
                threshold_ids,
            },
            records,
        };
        trace.validate()?;
        Ok(trace)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn is_empty(&self) -> bool {
        self.pos >= self.bytes.len()
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format {
                offset: self.pos as u64,
                message: format!(
                    "truncated file: needed {n} bytes, {} left",
                    self.bytes.len() - self.pos
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
}

pub fn write_trace(trace: &TraceFile, path: &Path) -> Result<()> {
    trace.validate()?;
    fs::write(path, trace.encode()).map_err(|e| Error::io(path, e))
}

pub fn read_trace(path: &Path) -> Result<TraceFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    TraceFile::decode(&bytes)
}

/// Model parameters and optimizer state at some step.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: u64,
    pub pass_index: u32,
    pub model: Mlp,
    pub optimizer: OptimizerState,
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.push(FORMAT_VERSION);
        out.extend_from_slice(&self.config_hash.to_le_bytes());
        out.extend_from_slice(&self.pass_index.to_le_bytes());
        let dims = self.model.dims();
        out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for &d in dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        let o = &self.optimizer;
        for v in [o.momentum, o.base_lr, o.weight_decay] {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        out.extend_from_slice(&o.step.to_le_bytes());
        out.extend_from_slice(&o.total_steps.to_le_bytes());
        out.extend_from_slice(&(self.model.num_params() as u64).to_le_bytes());
        for v in self.model.params().iter().chain(&o.velocity) {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        if cur.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: "not a checkpoint (bad magic)".into(),
            });
        }
        let version = cur.u8()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format {
                offset: 4,
                message: format!("unsupported checkpoint version {version}"),
            });
        }
        let config_hash = cur.u64()?;
        let pass_index = cur.u32()?;
        let n_dims = cur.u32()?;
        let mut dims = Vec::new();
        for _ in 0..n_dims {
            dims.push(cur.u64()? as usize);
        }
        let momentum = cur.f64()?;
        let base_lr = cur.f64()?;
        let weight_decay = cur.f64()?;
        let step = cur.u64()?;
        let total_steps = cur.u64()?;
        let n = cur.u64()? as usize;
        let mut params = Vec::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            params.push(cur.f64()?);
        }
        let mut velocity = Vec::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            velocity.push(cur.f64()?);
        }
        if !cur.is_empty() {
            return Err(Error::Format {
                offset: cur.pos as u64,
                message: "trailing bytes after checkpoint".into(),
            });
        }
        Ok(Self {
            config_hash,
            pass_index,
            model: Mlp::from_params(&dims, params)?,
            optimizer: OptimizerState {
                momentum,
                velocity,
                step,
                total_steps,
                base_lr,
                weight_decay,
            },
        })
    }
}

pub fn write_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, ckpt.encode()).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::decode(&bytes)
}

/// First line of every JSONL artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JsonlHeader {
    pub kind: String,
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub policy: PolicyKind,
}

impl JsonlHeader {
    pub fn new(format: &str, config_hash: &str, seed: u64, policy: PolicyKind) -> Self {
        Self {
            kind: "header".into(),
            format: format.into(),
            version: FORMAT_VERSION as u32,
            config_hash: config_hash.into(),
            seed,
            policy,
        }
    }
}

pub const DECISIONS_FORMAT: &str = "marginmatch-decisions";
pub const METRICS_FORMAT: &str = "marginmatch-metrics";

/// One line of a decision log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionRecord {
    pub kind: String,
    pub policy: PolicyKind,
    pub pass: u32,
    pub example_id: u64,
    pub pseudo_label: usize,
    pub confidence: f64,
    pub conf_pass: bool,
    pub aum_pass: bool,
    pub selected: bool,
}

impl DecisionRecord {
    pub fn new(policy: PolicyKind, pass: u32, d: &MaskDecision) -> Self {
        Self {
            kind: "decision".into(),
            policy,
            pass,
            example_id: d.example_id,
            pseudo_label: d.pseudo_label,
            confidence: d.confidence,
            conf_pass: d.conf_pass,
            aum_pass: d.aum_pass,
            selected: d.selected,
        }
    }

    pub fn decision(&self) -> MaskDecision {
        MaskDecision {
            example_id: self.example_id,
            pseudo_label: self.pseudo_label,
            confidence: self.confidence,
            conf_pass: self.conf_pass,
            aum_pass: self.aum_pass,
            selected: self.selected,
        }
    }
}

/// Streaming JSONL writer: header first, then one record per line.
pub struct JsonlWriter {
    out: BufWriter<fs::File>,
    path: std::path::PathBuf,
}

impl JsonlWriter {
    pub fn create(path: &Path, header: &JsonlHeader) -> Result<Self> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = Self {
            out: BufWriter::new(file),
            path: path.to_path_buf(),
        };
        w.write(header)?;
        Ok(w)
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n").map_err(|e| Error::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Renders header + records to a JSONL string.
pub fn to_jsonl<T: Serialize>(header: &JsonlHeader, records: &[T]) -> Result<String> {
    let mut s = serde_json::to_string(header)?;
    s.push('\n');
    for r in records {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    Ok(s)
}

/// Reads a JSONL artifact, checking its header format and version.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path, format: &str) -> Result<(JsonlHeader, Vec<T>)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Format {
            offset: 0,
            message: format!("{}: empty file", path.display()),
        })?
        .map_err(|e| Error::io(path, e))?;
    let header: JsonlHeader = serde_json::from_str(&first)?;
    if header.kind != "header" || header.format != format || header.version != FORMAT_VERSION as u32 {
        return Err(Error::Format {
            offset: 0,
            message: format!(
                "{}: expected {format} v{FORMAT_VERSION}, found {} v{}",
                path.display(),
                header.format,
                header.version
            ),
        });
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| Error::Format {
            offset: i as u64 + 2,
            message: format!("{}: line {}: {e}", path.display(), i + 2),
        })?);
    }
    Ok((header, records))
}

/// Everything replay produces.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayOutput {
    pub decisions: Vec<DecisionRecord>,
    pub unlabeled_trackers: Vec<AumTracker>,
    pub threshold_trackers: Vec<AumTracker>,
    pub history: Vec<ThresholdState>,
}

/// Drives the selection engine from recorded weak-view logits.
///
/// Records are processed pass by pass in file order; threshold samples are
/// recognised by the id set in the header.
pub fn replay(trace: &TraceFile, config: &SelectionConfig) -> Result<ReplayOutput> {
    trace.validate()?;
    let thresh: BTreeSet<u64> = trace.header.threshold_ids.iter().copied().collect();
    let mut unlabeled_ids = Vec::new();
    let mut seen = HashSet::new();
    for r in &trace.records {
        if !thresh.contains(&r.example_id) && seen.insert(r.example_id) {
            unlabeled_ids.push(r.example_id);
        }
    }
    let mut engine = SelectionEngine::new(
        config.clone(),
        trace.header.classes as usize,
        &unlabeled_ids,
        &trace.header.threshold_ids,
    )?;

    let mut by_pass: BTreeMap<u32, Vec<&TraceRecord>> = BTreeMap::new();
    for r in &trace.records {
        by_pass.entry(r.pass_index).or_default().push(r);
    }
    let mut decisions = Vec::with_capacity(trace.records.len());
    let mut history = Vec::new();
    for t in 1..=trace.header.pass_count {
        let records = by_pass.get(&t).ok_or_else(|| {
            Error::IncompleteTrace(format!("no records for pass {t}"))
        })?;
        history.push(engine.begin_pass(t)?.clone());
        for r in records {
            if thresh.contains(&r.example_id) {
                engine.observe_threshold(r.example_id, &r.logits)?;
            } else {
                let d = engine.observe_unlabeled(r.example_id, &r.logits)?;
                decisions.push(DecisionRecord::new(config.policy, t, &d));
            }
        }
        engine.end_pass()?;
    }
    Ok(ReplayOutput {
        decisions,
        unlabeled_trackers: engine.unlabeled_trackers().to_vec(),
        threshold_trackers: engine.threshold_trackers().to_vec(),
        history,
    })
}
