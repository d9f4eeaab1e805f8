//! Ingest wire protocol and per-producer session state.
//!
//! Producers send newline-delimited JSON, one message per line:
//!
//! ```text
//! {"type":"session","program":"tetris","time_origin_us":0}
//! {"type":"register","id":7,"method":"run()","class":"MainSinglePlayerThread","package":["main"]}
//! {"type":"events","thread":1,"events":[[1000,7,0],[4000,7,1]]}
//! ```
//!
//! Event triples are `[timestamp_us, method_id, action]` with action `0` for
//! enter and `1` for exit. Each `events` message carries a single thread and
//! must be non-empty and timestamp-sorted. Trace files use the same encoding
//! and start with a `session` record.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{IngestError, MalformedMessage, TraceFileError};
use crate::model::{Action, MethodDescriptor, MethodId, MethodRegistry, ThreadId, TraceEvent};

/// Default TCP port for producers.
pub const DEFAULT_INGEST_PORT: u16 = 7071;

/// Conventional extension for recorded traces.
pub const TRACE_EXTENSION: &str = ".trace.ndjson";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventBatch {
    pub thread: ThreadId,
    pub events: Vec<TraceEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionMeta {
    pub program_name: String,
    pub time_origin_micros: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IngestMessage {
    Register(MethodDescriptor),
    Events(EventBatch),
    SessionMeta(SessionMeta),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Wire {
    Register {
        id: u32,
        method: String,
        class: String,
        package: Vec<String>,
    },
    Events {
        thread: u64,
        events: Vec<(u64, u32, u64)>,
    },
    Session {
        program: String,
        time_origin_us: u64,
    },
}

/// Parses one record. Field order is irrelevant; unknown fields are ignored.
pub fn decode_line(line: &str) -> Result<IngestMessage, MalformedMessage> {
    let wire: Wire = serde_json::from_str(line.trim_end_matches(['\n', '\r']))
        .map_err(|e| MalformedMessage(e.to_string()))?;
    match wire {
        Wire::Register { id, method, class, package } => {
            if method.is_empty() {
                return Err(MalformedMessage("empty method name".into()));
            }
            Ok(IngestMessage::Register(MethodDescriptor {
                id: MethodId(id),
                method_name: method,
                class_name: class,
                package_path: package,
            }))
        }
        Wire::Events { thread, events } => {
            if events.is_empty() {
                return Err(MalformedMessage("empty event batch".into()));
            }
            let mut out = Vec::with_capacity(events.len());
            for (timestamp, id, code) in events {
                let action = Action::from_code(code)
                    .ok_or_else(|| MalformedMessage(format!("unknown action code {code}")))?;
                if out.last().is_some_and(|prev: &TraceEvent| prev.timestamp > timestamp) {
                    return Err(MalformedMessage("events are not timestamp-sorted".into()));
                }
                out.push(TraceEvent { timestamp, method: MethodId(id), action });
            }
            Ok(IngestMessage::Events(EventBatch { thread: ThreadId(thread), events: out }))
        }
        Wire::Session { program, time_origin_us } => Ok(IngestMessage::SessionMeta(SessionMeta {
            program_name: program,
            time_origin_micros: time_origin_us,
        })),
    }
}

/// Encodes one record, without the trailing newline.
pub fn encode_line(msg: &IngestMessage) -> String {
    let wire = match msg {
        IngestMessage::Register(d) => Wire::Register {
            id: d.id.0,
            method: d.method_name.clone(),
            class: d.class_name.clone(),
            package: d.package_path.clone(),
        },
        IngestMessage::Events(b) => Wire::Events {
            thread: b.thread.0,
            events: b
                .events
                .iter()
                .map(|e| (e.timestamp, e.method.0, u64::from(e.action.code())))
                .collect(),
        },
        IngestMessage::SessionMeta(m) => Wire::Session {
            program: m.program_name.clone(),
            time_origin_us: m.time_origin_micros,
        },
    };
    serde_json::to_string(&wire).expect("wire messages always serialize")
}

/// Parses a dotted package prefix such as `org.ini4j`.
pub fn parse_package_prefix(text: &str) -> Vec<String> {
    text.split('.').filter(|s| !s.is_empty()).map(str::to_owned).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestStats {
    pub messages: u64,
    pub events_accepted: u64,
    pub malformed_lines: u64,
    pub excluded_events: u64,
    pub out_of_order_events: u64,
    pub rejected_registrations: u64,
}

impl IngestStats {
    pub fn dropped_events(&self) -> u64 {
        self.excluded_events + self.out_of_order_events
    }
}

/// What happened to one accepted batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AcceptReport {
    pub accepted: usize,
    pub excluded: usize,
    pub placeholders: usize,
}

/// State for one producer connection: registry, exclusion filter and the
/// per-thread queues of accepted events that the engine has not drained yet.
#[derive(Debug, Clone, Default)]
pub struct Session {
    registry: MethodRegistry,
    excluded_packages: Vec<Vec<String>>,
    last_seen: HashMap<ThreadId, u64>,
    pending: BTreeMap<ThreadId, Vec<TraceEvent>>,
    meta: Option<SessionMeta>,
    stats: IngestStats,
}

impl Session {
    pub fn new(excluded_packages: Vec<Vec<String>>) -> Self {
        Session {
            excluded_packages: excluded_packages.into_iter().filter(|p| !p.is_empty()).collect(),
            ..Self::default()
        }
    }

    /// A fresh session whose structure revisions continue after `revision`.
    pub fn continuing(excluded_packages: Vec<Vec<String>>, revision: u64) -> Self {
        Session { registry: MethodRegistry::with_revision(revision), ..Self::new(excluded_packages) }
    }

    pub fn registry(&self) -> &MethodRegistry {
        &self.registry
    }

    pub fn meta(&self) -> Option<&SessionMeta> {
        self.meta.as_ref()
    }

    pub fn stats(&self) -> IngestStats {
        self.stats
    }

    pub fn is_excluded(&self, id: MethodId) -> bool {
        let Some(desc) = self.registry.lookup(id) else {
            return false;
        };
        self.excluded_packages.iter().any(|prefix| desc.package_path.starts_with(prefix))
    }

    /// Decodes and applies one line. Malformed lines are counted and skipped.
    pub fn handle_line(&mut self, line: &str) -> Result<(), MalformedMessage> {
        match decode_line(line) {
            Ok(msg) => {
                // Rejected registrations and out-of-order batches are already
                // counted in the stats.
                let _ = self.apply(msg);
                Ok(())
            }
            Err(e) => {
                self.stats.malformed_lines += 1;
                Err(e)
            }
        }
    }

    /// Counts a line that could not be decoded at all (e.g. invalid UTF-8).
    pub fn count_malformed(&mut self) {
        self.stats.malformed_lines += 1;
    }

    pub fn apply(&mut self, msg: IngestMessage) -> Result<(), IngestError> {
        self.stats.messages += 1;
        match msg {
            IngestMessage::Register(desc) => {
                if let Err(e) = self.registry.register(desc) {
                    self.stats.rejected_registrations += 1;
                    return Err(e.into());
                }
                Ok(())
            }
            IngestMessage::Events(batch) => self.accept_events(batch).map(|_| ()),
            IngestMessage::SessionMeta(meta) => {
                self.meta = Some(meta);
                Ok(())
            }
        }
    }

    /// Appends a batch to its thread's queue.
    ///
    /// Unknown method ids get placeholder descriptors; events of excluded
    /// packages are counted and discarded. A batch starting before the
    /// thread's last accepted timestamp is dropped whole.
    pub fn accept_events(&mut self, batch: EventBatch) -> Result<AcceptReport, IngestError> {
        let EventBatch { thread, events } = batch;
        let Some(first) = events.first() else {
            return Ok(AcceptReport::default());
        };
        let last_seen_us = self.last_seen.get(&thread).copied().unwrap_or(0);
        let unsorted = events.windows(2).any(|w| w[0].timestamp > w[1].timestamp);
        if first.timestamp < last_seen_us || unsorted {
            self.stats.out_of_order_events += events.len() as u64;
            return Err(IngestError::OutOfOrderBatch {
                thread,
                first_us: first.timestamp,
                last_seen_us,
                dropped: events.len(),
            });
        }

        let batch_last = events[events.len() - 1].timestamp;
        let mut report = AcceptReport::default();
        let queue = self.pending.entry(thread).or_default();
        for event in events {
            if self.registry.ensure_placeholder(event.method) {
                report.placeholders += 1;
            }
            let desc = self.registry.lookup(event.method).expect("registered above");
            if self.excluded_packages.iter().any(|p| desc.package_path.starts_with(p)) {
                report.excluded += 1;
                continue;
            }
            queue.push(event);
            report.accepted += 1;
        }
        self.last_seen.insert(thread, batch_last);
        self.stats.events_accepted += report.accepted as u64;
        self.stats.excluded_events += report.excluded as u64;
        Ok(report)
    }

    /// Events accepted but not yet drained, per thread.
    pub fn pending(&self) -> &BTreeMap<ThreadId, Vec<TraceEvent>> {
        &self.pending
    }

    /// Hands every queued event to the caller, leaving the queues empty.
    pub fn drain_pending(&mut self) -> BTreeMap<ThreadId, Vec<TraceEvent>> {
        std::mem::take(&mut self.pending)
    }
}

/// Reads a trace file, yielding one item per non-blank line.
///
/// A corrupt line yields an error carrying its 1-based line number; reading
/// continues with the next line.
pub fn read_trace_file(path: impl AsRef<Path>) -> Result<TraceReader<BufReader<File>>, TraceFileError> {
    Ok(TraceReader::new(BufReader::new(File::open(path)?)))
}

pub struct TraceReader<R> {
    lines: io::Lines<R>,
    line_no: usize,
    seen_record: bool,
}

impl<R: BufRead> TraceReader<R> {
    pub fn new(reader: R) -> Self {
        TraceReader { lines: reader.lines(), line_no: 0, seen_record: false }
    }
}

impl<R: BufRead> Iterator for TraceReader<R> {
    type Item = Result<IngestMessage, TraceFileError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let first = !self.seen_record;
            self.seen_record = true;
            let decoded =
                decode_line(&line).map_err(|source| TraceFileError::Malformed { line: self.line_no, source });
            return Some(match decoded {
                Ok(msg) if first && !matches!(msg, IngestMessage::SessionMeta(_)) => {
                    Err(TraceFileError::MissingSessionMeta)
                }
                other => other,
            });
        }
    }
}

/// Incremental trace writer used by `record` and `simulate --out`.
pub struct TraceWriter<W: Write> {
    out: W,
    wrote_meta: bool,
}

impl TraceWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>) -> io::Result<Self> {
        Ok(TraceWriter::new(BufWriter::new(File::create(path)?)))
    }
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W) -> Self {
        TraceWriter { out, wrote_meta: false }
    }

    /// Appends one record. The first record must be a session record.
    pub fn append(&mut self, msg: &IngestMessage) -> io::Result<()> {
        if !self.wrote_meta {
            if !matches!(msg, IngestMessage::SessionMeta(_)) {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidInput,
                    "trace files must start with a session record",
                ));
            }
            self.wrote_meta = true;
        }
        self.out.write_all(encode_line(msg).as_bytes())?;
        self.out.write_all(b"\n")
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

pub fn write_trace_file<'a>(
    path: impl AsRef<Path>,
    messages: impl IntoIterator<Item = &'a IngestMessage>,
) -> io::Result<()> {
    let mut writer = TraceWriter::create(path)?;
    for msg in messages {
        writer.append(msg)?;
    }
    writer.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> IngestMessage {
        IngestMessage::SessionMeta(SessionMeta { program_name: "tetris".into(), time_origin_micros: 0 })
    }

    fn batch(thread: u64, events: Vec<TraceEvent>) -> EventBatch {
        EventBatch { thread: ThreadId(thread), events }
    }

    #[test]
    fn decode_register() {
        let msg = decode_line(
            r#"{"type":"register","id":7,"method":"run()","class":"MainSinglePlayerThread","package":["main"]}"#,
        )
        .unwrap();
        assert_eq!(
            msg,
            IngestMessage::Register(MethodDescriptor::new(7, "run()", "MainSinglePlayerThread", ["main"]))
        );
    }

    #[test]
    fn decode_field_order_irrelevant() {
        let a = decode_line(r#"{"package":[],"class":"A","method":"f()","id":1,"type":"register"}"#).unwrap();
        let b = decode_line(r#"{"type":"register","id":1,"method":"f()","class":"A","package":[]}"#).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn decode_events() {
        let msg = decode_line(r#"{"type":"events","thread":1,"events":[[1000,7,0],[4000,7,1]]}"#).unwrap();
        assert_eq!(
            msg,
            IngestMessage::Events(batch(1, vec![TraceEvent::enter(1000, MethodId(7)), TraceEvent::exit(4000, MethodId(7))]))
        );
    }

    #[test]
    fn decode_rejects_malformed() {
        for line in [
            r#"{"type":"events","thread":1,"events":[]}"#,
            r#"{"type":"events","thread":1,"events":[[1,2,3]]}"#,
            r#"{"type":"events","thread":1,"events":[[5,2,0],[4,2,1]]}"#,
            r#"{"type":"events","thread":-1,"events":[[5,2,0]]}"#,
            r#"{"type":"register","id":4294967296,"method":"a()","class":"A","package":[]}"#,
            r#"{"type":"register","id":1,"class":"A","package":[]}"#,
            r#"{"type":"register","id":1,"method":"","class":"A","package":[]}"#,
            r#"{"type":"bogus"}"#,
            r#"{"type":"events","thread":1"#,
            "",
            "not json",
        ] {
            assert!(decode_line(line).is_err(), "accepted {line:?}");
        }
    }

    #[test]
    fn encode_is_compact_and_decodes_back() {
        let msg = IngestMessage::Events(batch(3, vec![TraceEvent::enter(10, MethodId(2))]));
        let line = encode_line(&msg);
        assert_eq!(line, r#"{"type":"events","thread":3,"events":[[10,2,0]]}"#);
        assert_eq!(decode_line(&line).unwrap(), msg);
        assert_eq!(
            encode_line(&meta()),
            r#"{"type":"session","program":"tetris","time_origin_us":0}"#
        );
    }

    #[test]
    fn unregistered_id_gets_placeholder() {
        let mut s = Session::new(vec![]);
        let report = s.accept_events(batch(1, vec![TraceEvent::enter(0, MethodId(7))])).unwrap();
        assert_eq!(report.accepted, 1);
        assert_eq!(report.placeholders, 1);
        assert_eq!(s.pending()[&ThreadId(1)].len(), 1);
        assert_eq!(s.registry().lookup(MethodId(7)).unwrap().method_name, "method#7");
    }

    #[test]
    fn excluded_package_never_queued() {
        let mut s = Session::new(vec![parse_package_prefix("org.ini4j")]);
        s.apply(IngestMessage::Register(MethodDescriptor::new(3, "load()", "Ini", ["org", "ini4j"])))
            .unwrap();
        s.apply(IngestMessage::Register(MethodDescriptor::new(4, "x()", "Orgy", ["org", "ini4jx"])))
            .unwrap();
        let report = s
            .accept_events(batch(
                1,
                vec![
                    TraceEvent::enter(0, MethodId(3)),
                    TraceEvent::enter(1, MethodId(4)),
                    TraceEvent::exit(2, MethodId(4)),
                    TraceEvent::exit(3, MethodId(3)),
                ],
            ))
            .unwrap();
        assert_eq!(report.excluded, 2);
        assert_eq!(report.accepted, 2);
        assert_eq!(s.stats().excluded_events, 2);
        assert!(s.pending()[&ThreadId(1)].iter().all(|e| e.method == MethodId(4)));
    }

    #[test]
    fn out_of_order_batch_dropped() {
        let mut s = Session::new(vec![]);
        s.accept_events(batch(1, vec![TraceEvent::enter(900, MethodId(1))])).unwrap();
        let err = s
            .accept_events(batch(1, vec![TraceEvent::exit(500, MethodId(1)), TraceEvent::enter(950, MethodId(1))]))
            .unwrap_err();
        assert_eq!(
            err,
            IngestError::OutOfOrderBatch { thread: ThreadId(1), first_us: 500, last_seen_us: 900, dropped: 2 }
        );
        assert_eq!(s.stats().out_of_order_events, 2);
        assert_eq!(s.pending()[&ThreadId(1)].len(), 1);
        // other threads are independent
        s.accept_events(batch(2, vec![TraceEvent::enter(100, MethodId(1))])).unwrap();
    }

    #[test]
    fn order_check_survives_drain() {
        let mut s = Session::new(vec![]);
        s.accept_events(batch(1, vec![TraceEvent::enter(900, MethodId(1))])).unwrap();
        s.drain_pending();
        assert!(s.accept_events(batch(1, vec![TraceEvent::exit(800, MethodId(1))])).is_err());
        assert!(s.accept_events(batch(1, vec![TraceEvent::exit(900, MethodId(1))])).is_ok());
    }

    #[test]
    fn malformed_lines_counted() {
        let mut s = Session::new(vec![]);
        assert!(s.handle_line("garbage").is_err());
        assert!(s.handle_line(r#"{"type":"events","thread":1,"events":[[1,1,0]]}"#).is_ok());
        assert_eq!(s.stats().malformed_lines, 1);
        assert_eq!(s.stats().events_accepted, 1);
    }

    #[test]
    fn trace_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.trace.ndjson");
        let msgs = vec![
            meta(),
            IngestMessage::Register(MethodDescriptor::new(1, "main()", "Main", Vec::<String>::new())),
            IngestMessage::Events(batch(1, vec![TraceEvent::enter(0, MethodId(1)), TraceEvent::exit(5, MethodId(1))])),
        ];
        write_trace_file(&path, &msgs).unwrap();
        let back: Vec<_> = read_trace_file(&path).unwrap().collect::<Result<_, _>>().unwrap();
        assert_eq!(back, msgs);
    }

    #[test]
    fn empty_trace_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.trace.ndjson");
        std::fs::write(&path, "").unwrap();
        assert_eq!(read_trace_file(&path).unwrap().count(), 0);
    }

    #[test]
    fn corrupt_line_reported_with_number() {
        let mut text = String::new();
        text.push_str(&encode_line(&meta()));
        text.push('\n');
        for i in 0..9u64 {
            if i == 4 {
                text.push_str("{\"type\":\"events\",\"thread\":1,\"events\":[[\n");
            }
            if i < 8 {
                let m = IngestMessage::Events(batch(1, vec![TraceEvent::enter(i, MethodId(1))]));
                text.push_str(&encode_line(&m));
                text.push('\n');
            }
        }
        let items: Vec<_> = TraceReader::new(text.as_bytes()).collect();
        assert_eq!(items.len(), 10);
        assert_eq!(items.iter().filter(|r| r.is_ok()).count(), 9);
        let bad: Vec<_> = items.iter().filter_map(|r| r.as_ref().err()).collect();
        assert!(matches!(bad[0], TraceFileError::Malformed { line: 6, .. }), "{bad:?}");
    }

    #[test]
    fn trace_must_start_with_session() {
        let text = encode_line(&IngestMessage::Events(batch(1, vec![TraceEvent::enter(0, MethodId(1))])));
        let first = TraceReader::new(text.as_bytes()).next().unwrap();
        assert!(matches!(first, Err(TraceFileError::MissingSessionMeta)));

        let mut w = TraceWriter::new(Vec::new());
        assert!(w.append(&IngestMessage::Events(batch(1, vec![TraceEvent::enter(0, MethodId(1))]))).is_err());
    }
}
