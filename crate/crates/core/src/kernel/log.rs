//! Deferred violation logging.
//!
//! Violations are queued while blocks run and written out in the slack left
//! at the end of a cycle. Whatever does not fit is carried over and written,
//! ahead of newer records, in a later cycle.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::io::{self, Write};
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contracts::{CheckContext, ContractKind, ContractViolation};

#[derive(Debug, Error)]
pub enum LogError {
    #[error("violation sink failed after {emitted} records: {source}")]
    SinkWriteFailure {
        emitted: usize,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LogFormat {
    #[default]
    Json,
    Text,
}

impl FromStr for LogFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(LogFormat::Json),
            "text" => Ok(LogFormat::Text),
            other => Err(format!("unknown log format `{other}` (expected json or text)")),
        }
    }
}

/// Flat, serializable form of one violation as it goes on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub cycle: u64,
    pub block: String,
    pub kind: ContractKind,
    pub label: String,
    pub message: String,
    pub measured_ns: Option<f64>,
    pub bound_ns: Option<f64>,
}

impl From<&ContractViolation> for LogRecord {
    fn from(v: &ContractViolation) -> Self {
        LogRecord {
            cycle: v.cycle,
            block: v.block.clone(),
            kind: v.kind,
            label: v.label.clone(),
            message: v.message.clone(),
            measured_ns: v.measure.map(|m| m.measured_ns),
            bound_ns: v.measure.map(|m| m.bound_ns),
        }
    }
}

impl LogRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("log records always serialize")
    }

    /// `cycle=7 block="Sensor" kind=ClassInvariant label="..." measured_ns=- bound_ns=- message="..."`
    pub fn to_text(&self) -> String {
        let num = |v: Option<f64>| v.map_or_else(|| "-".to_owned(), |x| format!("{x}"));
        let mut line = String::with_capacity(96);
        let _ = write!(
            line,
            "cycle={} block={:?} kind={} label={:?} measured_ns={} bound_ns={} message={:?}",
            self.cycle,
            self.block,
            self.kind,
            self.label,
            num(self.measured_ns),
            num(self.bound_ns),
            self.message
        );
        line
    }
}

pub trait ViolationSink: Send {
    fn emit(&mut self, record: &LogRecord) -> io::Result<()>;

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// One JSON object per line.
pub struct JsonLinesSink<W: Write + Send> {
    out: W,
}

impl<W: Write + Send> JsonLinesSink<W> {
    pub fn new(out: W) -> Self {
        JsonLinesSink { out }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write + Send> ViolationSink for JsonLinesSink<W> {
    fn emit(&mut self, record: &LogRecord) -> io::Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")
    }

    fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }
}

/// Human-readable `key=value` lines.
pub struct TextSink<W: Write + Send> {
    out: W,
}

impl<W: Write + Send> TextSink<W> {
    pub fn new(out: W) -> Self {
        TextSink { out }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write + Send> ViolationSink for TextSink<W> {
    fn emit(&mut self, record: &LogRecord) -> io::Result<()> {
        writeln!(self.out, "{}", record.to_text())
    }

    fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }
}

/// Discards everything.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl ViolationSink for NullSink {
    fn emit(&mut self, _record: &LogRecord) -> io::Result<()> {
        Ok(())
    }
}

/// Keeps records in memory behind a shared handle; used by tests.
#[derive(Debug, Default, Clone)]
pub struct MemorySink {
    records: Arc<Mutex<Vec<LogRecord>>>,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> Vec<LogRecord> {
        self.records.lock().unwrap().clone()
    }
}

impl ViolationSink for MemorySink {
    fn emit(&mut self, record: &LogRecord) -> io::Result<()> {
        self.records.lock().unwrap().push(record.clone());
        Ok(())
    }
}

pub fn sink_for<W: Write + Send + 'static>(format: LogFormat, out: W) -> Box<dyn ViolationSink> {
    match format {
        LogFormat::Json => Box::new(JsonLinesSink::new(out)),
        LogFormat::Text => Box::new(TextSink::new(out)),
    }
}

/// Mean wall-clock cost in ns of rendering one record in `format`, measured
/// over 100 records written to a null device. Never below 1.
pub fn measure_record_cost(format: LogFormat) -> u64 {
    const N: u32 = 100;
    let probe = ContractViolation::functional(
        ContractKind::Postcondition,
        "interval",
        "Postcondition `interval` failed".to_owned(),
        CheckContext { block: "Sensor", cycle: 123_456, at_ns: 0 },
    );
    let record = LogRecord::from(&probe);
    let mut sink = sink_for(format, io::sink());
    let started = Instant::now();
    for _ in 0..N {
        let _ = sink.emit(&record);
    }
    ((started.elapsed().as_nanos() / N as u128) as u64).max(1)
}

/// FIFO of unwritten violations in front of a sink.
pub struct ViolationLog {
    pending: VecDeque<ContractViolation>,
    sink: Box<dyn ViolationSink>,
    budget_ns: u64,
    emitted: usize,
}

impl ViolationLog {
    /// `budget_ns` is the slack each record is assumed to cost.
    pub fn new(sink: Box<dyn ViolationSink>, budget_ns: u64) -> Self {
        ViolationLog { pending: VecDeque::new(), sink, budget_ns: budget_ns.max(1), emitted: 0 }
    }

    /// Budget taken from [`measure_record_cost`].
    pub fn measured(sink: Box<dyn ViolationSink>, format: LogFormat) -> Self {
        Self::new(sink, measure_record_cost(format))
    }

    pub fn budget_ns(&self) -> u64 {
        self.budget_ns
    }

    pub fn log(&mut self, v: ContractViolation) {
        self.pending.push_back(v);
    }

    pub fn pending(&self) -> impl ExactSizeIterator<Item = &ContractViolation> {
        self.pending.iter()
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    /// Total records written so far.
    pub fn emitted(&self) -> usize {
        self.emitted
    }

    /// Writes as many pending records as `slack_ns` pays for, oldest first.
    /// Returns the number written. On a sink error the failed record stays
    /// at the head of the queue.
    pub fn flush(&mut self, slack_ns: u64) -> Result<usize, LogError> {
        let allowed = (slack_ns / self.budget_ns).min(self.pending.len() as u64) as usize;
        self.emit_up_to(allowed)
    }

    /// Writes everything still pending, regardless of slack.
    pub fn drain(&mut self) -> Result<usize, LogError> {
        self.emit_up_to(self.pending.len())
    }

    fn emit_up_to(&mut self, count: usize) -> Result<usize, LogError> {
        let mut emitted = 0;
        while emitted < count {
            let Some(head) = self.pending.front() else { break };
            if let Err(source) = self.sink.emit(&LogRecord::from(head)) {
                self.emitted += emitted;
                return Err(LogError::SinkWriteFailure { emitted, source });
            }
            self.pending.pop_front();
            emitted += 1;
        }
        self.emitted += emitted;
        if emitted > 0 {
            self.sink.flush().map_err(|source| LogError::SinkWriteFailure { emitted, source })?;
        }
        Ok(emitted)
    }
}

impl std::fmt::Debug for ViolationLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ViolationLog")
            .field("pending", &self.pending.len())
            .field("budget_ns", &self.budget_ns)
            .field("emitted", &self.emitted)
            .finish()
    }
}
