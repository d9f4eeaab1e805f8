//! Test-only oracles and generators, independent of the engine and layout
//! code paths they check.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashSet};

use perfcity::layout::{Block, CityLayout, District, LayoutNode, Rect, BORDER};
use perfcity::model::{Action, MethodDescriptor, MethodId, MethodRegistry, ThreadId, TraceEvent};
use perfcity::protocol::{EventBatch, IngestMessage, SessionMeta};
use rand::seq::SliceRandom;
use rand::Rng;

pub type Trace = BTreeMap<ThreadId, Vec<TraceEvent>>;

/// Brute-force windowed self time, in microseconds, per method and thread.
///
/// For every pair of consecutive events (and the last event up to `now`)
/// the gap goes to the method on top of a stack replayed from the start of
/// the thread, then the gap is clipped to `[now - window, now]`.
pub fn oracle_self_times(trace: &Trace, window: u64, now: u64) -> BTreeMap<(ThreadId, MethodId), u64> {
    let lo = now.saturating_sub(window);
    let mut out = BTreeMap::new();
    for (&thread, events) in trace {
        let seen: Vec<&TraceEvent> = events.iter().filter(|e| e.timestamp <= now).collect();
        let mut stack: Vec<MethodId> = Vec::new();
        for (i, e) in seen.iter().enumerate() {
            match e.action {
                Action::Enter => stack.push(e.method),
                Action::Exit => {
                    let top = stack.pop();
                    assert_eq!(top, Some(e.method), "oracle expects balanced traces");
                }
            }
            let Some(&top) = stack.last() else { continue };
            let gap_end = seen.get(i + 1).map_or(now, |n| n.timestamp);
            let (a, b) = (e.timestamp.max(lo), gap_end.min(now));
            if b > a {
                *out.entry((thread, top)).or_insert(0) += b - a;
            }
        }
    }
    out
}

/// Oracle elevation: max over threads of windowed self time, over `window`.
pub fn oracle_elevations(trace: &Trace, window: u64, now: u64) -> BTreeMap<MethodId, f64> {
    let mut best: BTreeMap<MethodId, u64> = BTreeMap::new();
    for ((_, m), t) in oracle_self_times(trace, window, now) {
        let slot = best.entry(m).or_insert(0);
        *slot = (*slot).max(t);
    }
    best.into_iter().map(|(m, t)| (m, t as f64 / window as f64)).collect()
}

pub fn oracle_thread_counts(trace: &Trace, now: u64) -> BTreeMap<MethodId, u32> {
    let mut sets: BTreeMap<MethodId, HashSet<ThreadId>> = BTreeMap::new();
    for (&thread, events) in trace {
        for e in events.iter().filter(|e| e.timestamp <= now && e.action == Action::Enter) {
            sets.entry(e.method).or_default().insert(thread);
        }
    }
    sets.into_iter().map(|(m, s)| (m, s.len() as u32)).collect()
}

/// Random balanced trace with at most `max_threads` threads, `max_methods`
/// distinct methods and `max_events` events in total.
pub fn random_trace(rng: &mut impl Rng, max_threads: usize, max_methods: u32, max_events: usize) -> Trace {
    let threads = rng.gen_range(1..=max_threads);
    let methods = rng.gen_range(1..=max_methods);
    let budget = rng.gen_range(2..=max_events) / threads;
    let mut trace = Trace::new();
    for t in 0..threads {
        let mut now: u64 = rng.gen_range(0..2_000_000);
        let mut stack: Vec<MethodId> = Vec::new();
        let mut events = Vec::new();
        let pairs = budget / 2;
        let mut opened = 0;
        while opened < pairs || !stack.is_empty() {
            let can_open = opened < pairs;
            let open = can_open && (stack.is_empty() || rng.gen_bool(0.55));
            // occasional zero-length gaps and long idle stretches
            now += match rng.gen_range(0..10) {
                0 => 0,
                1 => rng.gen_range(500_000..4_000_000),
                _ => rng.gen_range(1..50_000),
            };
            if open {
                let m = MethodId(rng.gen_range(1..=methods));
                stack.push(m);
                events.push(TraceEvent::enter(now, m));
                opened += 1;
            } else {
                let m = stack.pop().unwrap();
                events.push(TraceEvent::exit(now, m));
            }
        }
        trace.insert(ThreadId(t as u64 + 1), events);
    }
    trace
}

pub fn trace_end(trace: &Trace) -> u64 {
    trace.values().filter_map(|e| e.last()).map(|e| e.timestamp).max().unwrap_or(0)
}

/// Splits each thread into random-sized runs, interleaved across threads in
/// timestamp order of their first event.
pub fn random_batches(rng: &mut impl Rng, trace: &Trace) -> Vec<(ThreadId, Vec<TraceEvent>)> {
    let mut out = Vec::new();
    for (&thread, events) in trace {
        let mut rest = &events[..];
        while !rest.is_empty() {
            let n = rng.gen_range(1..=rest.len().min(64));
            out.push((thread, rest[..n].to_vec()));
            rest = &rest[n..];
        }
    }
    out.sort_by_key(|(t, b)| (b[0].timestamp, *t));
    out
}

pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-12)
}

// ----- layout -----

const SEGMENTS: &[&str] = &["app", "core", "gui", "net", "util", "io", "Game", "game", "z", "ä"];
const CLASSES: &[&str] = &["Main", "Board", "Piece", "Util", "Äpfel", "a", "Z", "Helper"];
const METHODS: &[&str] = &["run()", "a()", "B()", "b()", "tick()", "draw(Graphics)", "é()", "zz()", "init()", "_x()"];

/// Random registry of up to `max_methods` methods under random (nested)
/// packages, including the default package.
pub fn random_descriptors(rng: &mut impl Rng, max_methods: usize) -> Vec<MethodDescriptor> {
    let n = rng.gen_range(1..=max_methods);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let mut id = rng.gen_range(0..1000);
    while out.len() < n {
        let depth = rng.gen_range(0..=3);
        let path: Vec<String> = (0..depth).map(|_| SEGMENTS.choose(rng).unwrap().to_string()).collect();
        let class = CLASSES.choose(rng).unwrap().to_string();
        let base = METHODS.choose(rng).unwrap();
        let method = if rng.gen_bool(0.3) { format!("{base}{}", rng.gen_range(0..20)) } else { base.to_string() };
        if seen.insert((path.clone(), class.clone(), method.clone())) {
            id += rng.gen_range(1..5);
            out.push(MethodDescriptor { id: MethodId(id), method_name: method, class_name: class, package_path: path });
        } else if seen.len() > 10 * max_methods {
            break;
        }
    }
    out
}

pub fn registry_of(descs: &[MethodDescriptor]) -> MethodRegistry {
    let mut reg = MethodRegistry::new();
    for d in descs {
        reg.register(d.clone()).expect("unique descriptors");
    }
    reg
}

/// Checks every structural invariant of a layout against its registry.
/// Returns the first violation found.
pub fn check_layout(layout: &CityLayout, registry: &MethodRegistry) -> Result<(), String> {
    // exactly one plot per method, no shared cells
    let mut cells = HashSet::new();
    let mut plotted = HashSet::new();
    for d in &layout.districts {
        for b in d.blocks() {
            for p in &b.plots {
                if !cells.insert((p.x, p.z)) {
                    return Err(format!("cell ({}, {}) used twice", p.x, p.z));
                }
                if !plotted.insert(p.method) {
                    return Err(format!("method {} plotted twice", p.method));
                }
            }
        }
    }
    if plotted.len() != registry.len() || registry.descriptors().any(|d| !plotted.contains(&d.id)) {
        return Err("plots do not match registry".into());
    }
    if layout.plots().count() != registry.len() {
        return Err("index size mismatch".into());
    }

    // largest top-level district at the global bottom-left
    let first = layout.districts.first().ok_or("no districts")?;
    if (first.rect.x, first.rect.z) != (0, 0) {
        return Err(format!("first district at ({}, {})", first.rect.x, first.rect.z));
    }
    if layout.districts.iter().any(|d| d.method_count > first.method_count) {
        return Err("first district is not the largest".into());
    }
    let top_nodes: Vec<LayoutNode> = layout.districts.iter().cloned().map(LayoutNode::District).collect();
    check_siblings(&top_nodes, None)?;
    for d in &layout.districts {
        if d.rect.right() > layout.width || d.rect.top() > layout.depth {
            return Err("district outside city extent".into());
        }
        check_district(d, registry)?;
    }
    Ok(())
}

fn check_siblings(children: &[LayoutNode], parent: Option<&District>) -> Result<(), String> {
    for w in children.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let ordered = a.method_count() > b.method_count()
            || (a.method_count() == b.method_count() && a.name() <= b.name());
        if !ordered {
            return Err(format!("children `{}` and `{}` out of order", a.name(), b.name()));
        }
    }
    for (i, a) in children.iter().enumerate() {
        if let Some(p) = parent {
            if !p.rect.contains(&a.rect(), BORDER) {
                return Err(format!("`{}` escapes the border of {:?}", a.name(), p.package_path));
            }
        }
        for b in &children[i + 1..] {
            if a.rect().intersects(&b.rect()) {
                return Err(format!("`{}` overlaps `{}`", a.name(), b.name()));
            }
        }
    }
    Ok(())
}

fn check_district(d: &District, registry: &MethodRegistry) -> Result<(), String> {
    check_siblings(&d.children, Some(d))?;
    let mut total = 0;
    for child in &d.children {
        total += child.method_count();
        match child {
            LayoutNode::Block(b) => check_block(b, &d.package_path, registry)?,
            LayoutNode::District(sub) => {
                if sub.depth != d.depth + 1 || sub.package_path[..sub.package_path.len() - 1] != d.package_path[..] {
                    return Err(format!("bad nesting of {:?}", sub.package_path));
                }
                check_district(sub, registry)?
            }
        }
    }
    if total != d.method_count {
        return Err(format!("method count of {:?} is off", d.package_path));
    }
    Ok(())
}

fn check_block(b: &Block, package: &[String], registry: &MethodRegistry) -> Result<(), String> {
    let n = b.plots.len() as u32;
    let cols = (1..).find(|c| c * c >= n).unwrap();
    if b.rect != (Rect { x: b.rect.x, z: b.rect.z, width: cols, depth: n.div_ceil(cols) }) {
        return Err(format!("block {} has extent {:?} for {n} methods", b.class_name, b.rect));
    }
    let mut names = Vec::new();
    for (i, p) in b.plots.iter().enumerate() {
        let i = i as u32;
        if (p.x, p.z) != (b.rect.x + i % cols, b.rect.z + i / cols) {
            return Err(format!("plot {i} of {} not row-major", b.class_name));
        }
        if !b.rect.contains(&p.rect(), 0) {
            return Err("plot outside its block".into());
        }
        let desc = registry.lookup(p.method).ok_or("unknown method")?;
        if desc.class_name != b.class_name || desc.package_path != package {
            return Err(format!("method {} in the wrong block", p.method));
        }
        names.push(desc.method_name.clone());
    }
    if names.windows(2).any(|w| w[0] > w[1]) {
        return Err(format!("block {} not alphabetical: {names:?}", b.class_name));
    }
    Ok(())
}

// ----- protocol -----

fn random_text(rng: &mut impl Rng, allow_empty: bool) -> String {
    const ALPHABET: &[char] = &['a', 'Z', '0', '_', '$', '.', '(', ')', ' ', '"', '\\', '\n', '\t', '\u{0}', '\u{7f}', 'é', '中', '🚀', '\u{2028}', '<'];
    let min = usize::from(!allow_empty);
    let len = rng.gen_range(min..=24);
    (0..len)
        .map(|_| if rng.gen_bool(0.2) { rng.gen::<char>() } else { *ALPHABET.choose(rng).unwrap() })
        .collect()
}

/// A random message that satisfies every wire-level invariant.
pub fn random_message(rng: &mut impl Rng) -> IngestMessage {
    let edge = |rng: &mut dyn rand::RngCore| match rng.gen_range(0..4) {
        0 => 0,
        1 => u64::MAX,
        _ => rng.gen(),
    };
    match rng.gen_range(0..3) {
        0 => IngestMessage::Register(MethodDescriptor {
            id: MethodId(edge(rng) as u32),
            method_name: random_text(rng, false),
            class_name: random_text(rng, true),
            package_path: (0..rng.gen_range(0..5)).map(|_| random_text(rng, true)).collect(),
        }),
        1 => {
            let n = rng.gen_range(1..40);
            let mut t = edge(rng) / 2;
            let events = (0..n)
                .map(|_| {
                    t = t.saturating_add(rng.gen_range(0..3) * rng.gen_range(0..1_000_000));
                    let m = MethodId(rng.gen());
                    if rng.gen() { TraceEvent::enter(t, m) } else { TraceEvent::exit(t, m) }
                })
                .collect();
            IngestMessage::Events(EventBatch { thread: ThreadId(edge(rng)), events })
        }
        _ => IngestMessage::SessionMeta(SessionMeta { program_name: random_text(rng, true), time_origin_micros: edge(rng) }),
    }
}

// ----- clients -----

pub mod client {
    use std::io::{BufRead, BufReader, ErrorKind};
    use std::net::{SocketAddr, TcpStream};
    use std::time::{Duration, Instant};

    use perfcity::stream::ServerMessage;
    use tungstenite::{Message, WebSocket};

    pub trait Client {
        /// Next message, or `None` once `timeout` passes.
        fn next(&mut self, timeout: Duration) -> Option<ServerMessage>;

        /// Reads until `pred` matches, returning everything read.
        fn until(&mut self, timeout: Duration, pred: impl Fn(&ServerMessage) -> bool) -> Vec<ServerMessage> {
            let deadline = Instant::now() + timeout;
            let mut out = Vec::new();
            while let Some(left) = deadline.checked_duration_since(Instant::now()) {
                let Some(msg) = self.next(left) else { break };
                let done = pred(&msg);
                out.push(msg);
                if done {
                    break;
                }
            }
            out
        }
    }

    pub struct Mirror(BufReader<TcpStream>);

    impl Mirror {
        pub fn connect(addr: SocketAddr) -> Self {
            Mirror(BufReader::new(TcpStream::connect(addr).unwrap()))
        }
    }

    impl Client for Mirror {
        fn next(&mut self, timeout: Duration) -> Option<ServerMessage> {
            self.0.get_ref().set_read_timeout(Some(timeout.max(Duration::from_millis(1)))).unwrap();
            let mut line = String::new();
            match self.0.read_line(&mut line) {
                Ok(0) => None,
                Ok(_) => Some(ServerMessage::from_json(&line).unwrap()),
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => None,
                Err(e) => panic!("mirror read failed: {e}"),
            }
        }
    }

    pub struct Ws(WebSocket<TcpStream>);

    impl Ws {
        #[allow(clippy::result_large_err)]
        pub fn connect(addr: SocketAddr, path: &str) -> Result<Self, tungstenite::Error> {
            let stream = TcpStream::connect(addr).unwrap();
            let (ws, _) = tungstenite::client(format!("ws://{addr}{path}"), stream).map_err(|e| match e {
                tungstenite::HandshakeError::Failure(e) => e,
                tungstenite::HandshakeError::Interrupted(_) => unreachable!("blocking stream"),
            })?;
            Ok(Ws(ws))
        }
    }

    impl Client for Ws {
        fn next(&mut self, timeout: Duration) -> Option<ServerMessage> {
            self.0.get_ref().set_read_timeout(Some(timeout.max(Duration::from_millis(1)))).unwrap();
            loop {
                match self.0.read() {
                    Ok(Message::Text(t)) => return Some(ServerMessage::from_json(&t).unwrap()),
                    Ok(Message::Close(_)) => return None,
                    Ok(_) => continue,
                    Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                        return None
                    }
                    Err(_) => return None,
                }
            }
        }
    }
}

/// A localhost port with nothing listening on it.
pub fn closed_port() -> u16 {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    listener.local_addr().unwrap().port()
}
