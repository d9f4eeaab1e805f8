//! The live server: producer ingest, the tick loop and client endpoints.
//!
//! Threads:
//! - ingest listener, plus one reader per producer connection;
//! - tick loop, which drains the session into the engine, republishes the
//!   structure when the registry changed and publishes one frame per tick;
//! - WebSocket listener (`/stream`) and NDJSON mirror listener, plus one
//!   writer per client.
//!
//! Only one producer is served at a time; a second concurrent connection is
//! closed immediately. When a producer disconnects the next one starts a new
//! session whose structure revisions continue the old numbering.

use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use tungstenite::handshake::server::{ErrorResponse, Request, Response};
use tungstenite::http::StatusCode;
use tungstenite::Message;

use crate::engine::{ElevationEngine, EngineStats, DEFAULT_TICK_MICROS};
use crate::model::DEFAULT_WINDOW_MICROS;
use crate::protocol::{
    decode_line, IngestMessage, IngestStats, Session, SessionMeta, TraceWriter, DEFAULT_INGEST_PORT,
};
use crate::stream::{
    compose_frame, Broadcaster, Closed, Hello, StructureMessage, Subscription, DEFAULT_MIRROR_PORT,
    DEFAULT_UI_PORT, STREAM_PATH,
};

const POLL: Duration = Duration::from_millis(20);
/// A client whose socket stays full this long is disconnected.
const CLIENT_WRITE_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub ingest_addr: SocketAddr,
    pub ui_addr: SocketAddr,
    pub mirror_addr: SocketAddr,
    pub window_micros: u64,
    pub tick_micros: u64,
    pub exclude: Vec<Vec<String>>,
    /// Tee every accepted message to this trace file.
    pub record: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        let local = |port| SocketAddr::from(([127, 0, 0, 1], port));
        ServerConfig {
            ingest_addr: local(DEFAULT_INGEST_PORT),
            ui_addr: local(DEFAULT_UI_PORT),
            mirror_addr: local(DEFAULT_MIRROR_PORT),
            window_micros: DEFAULT_WINDOW_MICROS,
            tick_micros: DEFAULT_TICK_MICROS,
            exclude: Vec::new(),
            record: None,
        }
    }
}

impl ServerConfig {
    /// All endpoints on ephemeral localhost ports.
    pub fn ephemeral() -> Self {
        let any = SocketAddr::from(([127, 0, 0, 1], 0));
        ServerConfig { ingest_addr: any, ui_addr: any, mirror_addr: any, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ServerStats {
    pub ingest: IngestStats,
    pub engine: EngineStats,
    pub sessions: u64,
    pub rejected_producers: u64,
    pub frames: u64,
    pub structure_rev: u64,
    /// Window end of the last tick.
    pub now_micros: Option<u64>,
    /// Slowest tick so far.
    pub max_tick: Duration,
}

struct Recorder {
    writer: TraceWriter<BufWriter<std::fs::File>>,
    started: bool,
}

struct Shared {
    session: Session,
    /// Bumped whenever a new producer session starts.
    generation: u64,
    producer_connected: bool,
    sessions: u64,
    rejected_producers: u64,
    /// Totals of finished sessions.
    past_ingest: IngestStats,
    recorder: Option<Recorder>,
}

struct TickState {
    engine: EngineStats,
    now: Option<u64>,
    max_tick: Duration,
}

pub struct ServerHandle {
    ingest_addr: SocketAddr,
    ui_addr: SocketAddr,
    mirror_addr: SocketAddr,
    stop: Arc<AtomicBool>,
    shared: Arc<Mutex<Shared>>,
    ticks: Arc<Mutex<TickState>>,
    broadcaster: Arc<Broadcaster>,
    threads: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn ingest_addr(&self) -> SocketAddr {
        self.ingest_addr
    }

    pub fn ui_addr(&self) -> SocketAddr {
        self.ui_addr
    }

    pub fn mirror_addr(&self) -> SocketAddr {
        self.mirror_addr
    }

    pub fn broadcaster(&self) -> &Arc<Broadcaster> {
        &self.broadcaster
    }

    pub fn stats(&self) -> ServerStats {
        let shared = self.shared.lock().unwrap();
        let ticks = self.ticks.lock().unwrap();
        let current = shared.session.stats();
        let past = shared.past_ingest;
        ServerStats {
            ingest: IngestStats {
                messages: past.messages + current.messages,
                events_accepted: past.events_accepted + current.events_accepted,
                malformed_lines: past.malformed_lines + current.malformed_lines,
                excluded_events: past.excluded_events + current.excluded_events,
                out_of_order_events: past.out_of_order_events + current.out_of_order_events,
                rejected_registrations: past.rejected_registrations + current.rejected_registrations,
            },
            engine: ticks.engine,
            sessions: shared.sessions,
            rejected_producers: shared.rejected_producers,
            frames: self.broadcaster.frames_published(),
            structure_rev: self.broadcaster.structure_rev(),
            now_micros: ticks.now,
            max_tick: ticks.max_tick,
        }
    }

    /// Blocks until `cond` holds for the stats or `timeout` passes.
    pub fn wait_for(&self, timeout: Duration, cond: impl Fn(&ServerStats) -> bool) -> bool {
        let deadline = Instant::now() + timeout;
        while Instant::now() < deadline {
            if cond(&self.stats()) {
                return true;
            }
            thread::sleep(Duration::from_millis(5));
        }
        cond(&self.stats())
    }

    pub fn is_stopped(&self) -> bool {
        self.stop.load(Ordering::SeqCst)
    }

    /// Stops all threads and flushes the recording.
    pub fn shutdown(mut self) {
        self.stop_and_join();
    }

    /// Runs until another thread calls `shutdown` or the process exits.
    pub fn wait(mut self) {
        while !self.stop.load(Ordering::SeqCst) {
            thread::sleep(Duration::from_millis(100));
        }
        self.stop_and_join();
    }

    fn stop_and_join(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        self.broadcaster.close();
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
        if let Some(rec) = self.shared.lock().unwrap().recorder.as_mut() {
            let _ = rec.writer.flush();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop_and_join();
    }
}

/// Binds every endpoint and starts the server threads.
pub fn start(config: ServerConfig) -> io::Result<ServerHandle> {
    if config.window_micros == 0 || config.tick_micros == 0 {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "window and tick must be positive"));
    }
    let ingest = TcpListener::bind(config.ingest_addr)?;
    let ui = TcpListener::bind(config.ui_addr)?;
    let mirror = TcpListener::bind(config.mirror_addr)?;
    for l in [&ingest, &ui, &mirror] {
        l.set_nonblocking(true)?;
    }
    let recorder = match &config.record {
        Some(path) => Some(Recorder { writer: TraceWriter::create(path)?, started: false }),
        None => None,
    };

    let stop = Arc::new(AtomicBool::new(false));
    let shared = Arc::new(Mutex::new(Shared {
        session: Session::new(config.exclude.clone()),
        generation: 0,
        producer_connected: false,
        sessions: 0,
        rejected_producers: 0,
        past_ingest: IngestStats::default(),
        recorder,
    }));
    let ticks = Arc::new(Mutex::new(TickState { engine: EngineStats::default(), now: None, max_tick: Duration::ZERO }));
    let broadcaster = Arc::new(Broadcaster::new(
        Hello::new(config.window_micros, config.tick_micros),
        &StructureMessage::empty(0),
    ));

    let mut handle = ServerHandle {
        ingest_addr: ingest.local_addr()?,
        ui_addr: ui.local_addr()?,
        mirror_addr: mirror.local_addr()?,
        stop: stop.clone(),
        shared: shared.clone(),
        ticks: ticks.clone(),
        broadcaster: broadcaster.clone(),
        threads: Vec::new(),
    };

    {
        let (stop, shared, exclude) = (stop.clone(), shared.clone(), config.exclude.clone());
        handle.threads.push(thread::spawn(move || ingest_loop(ingest, stop, shared, exclude)));
    }
    {
        let (stop, shared, b) = (stop.clone(), shared.clone(), broadcaster.clone());
        let (window, tick) = (config.window_micros, config.tick_micros);
        handle.threads.push(thread::spawn(move || tick_loop(stop, shared, ticks, b, window, tick)));
    }
    {
        let (stop, b) = (stop.clone(), broadcaster.clone());
        handle.threads.push(thread::spawn(move || accept_clients(ui, stop, b, serve_websocket)));
    }
    {
        let (stop, b) = (stop.clone(), broadcaster.clone());
        handle.threads.push(thread::spawn(move || accept_clients(mirror, stop, b, serve_mirror)));
    }
    Ok(handle)
}

fn ingest_loop(listener: TcpListener, stop: Arc<AtomicBool>, shared: Arc<Mutex<Shared>>, exclude: Vec<Vec<String>>) {
    let mut readers: Vec<JoinHandle<()>> = Vec::new();
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let mut sh = shared.lock().unwrap();
                if sh.producer_connected {
                    sh.rejected_producers += 1;
                    drop(stream);
                    continue;
                }
                sh.producer_connected = true;
                if sh.sessions > 0 {
                    let past = sh.session.stats();
                    let p = &mut sh.past_ingest;
                    p.messages += past.messages;
                    p.events_accepted += past.events_accepted;
                    p.malformed_lines += past.malformed_lines;
                    p.excluded_events += past.excluded_events;
                    p.out_of_order_events += past.out_of_order_events;
                    p.rejected_registrations += past.rejected_registrations;
                    let rev = sh.session.registry().revision() + 1;
                    sh.session = Session::continuing(exclude.clone(), rev);
                    sh.generation += 1;
                }
                sh.sessions += 1;
                drop(sh);
                let (stop, shared) = (stop.clone(), shared.clone());
                readers.retain(|r| !r.is_finished());
                readers.push(thread::spawn(move || {
                    let _ = read_producer(stream, &stop, &shared);
                    shared.lock().unwrap().producer_connected = false;
                }));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(POLL),
            Err(_) => thread::sleep(POLL),
        }
    }
    for r in readers {
        let _ = r.join();
    }
}

fn read_producer(stream: TcpStream, stop: &AtomicBool, shared: &Mutex<Shared>) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(Duration::from_millis(100)))?;
    let mut reader = BufReader::new(stream);
    let mut buf = Vec::new();
    loop {
        if stop.load(Ordering::SeqCst) {
            return Ok(());
        }
        match reader.read_until(b'\n', &mut buf) {
            Ok(0) => {
                // a final line without its newline
                if !buf.is_empty() {
                    handle_line(&buf, shared);
                }
                return Ok(());
            }
            Ok(_) if buf.last() != Some(&b'\n') => continue,
            Ok(_) => {
                handle_line(&buf, shared);
                buf.clear();
            }
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => continue,
            Err(e) => return Err(e),
        }
    }
}

fn handle_line(bytes: &[u8], shared: &Mutex<Shared>) {
    let decoded = std::str::from_utf8(bytes).map_err(|_| ()).and_then(|s| {
        if s.trim().is_empty() {
            Err(())
        } else {
            decode_line(s).map_err(|_| ())
        }
    });
    let blank = bytes.iter().all(u8::is_ascii_whitespace);
    let mut sh = shared.lock().unwrap();
    let Ok(msg) = decoded else {
        if !blank {
            sh.session.count_malformed();
        }
        return;
    };
    let Shared { session, recorder, .. } = &mut *sh;
    if let Some(rec) = recorder.as_mut() {
        if !rec.started {
            rec.started = true;
            if !matches!(msg, IngestMessage::SessionMeta(_)) {
                let origin = match &msg {
                    IngestMessage::Events(b) => b.events[0].timestamp,
                    _ => 0,
                };
                let meta = SessionMeta { program_name: "unknown".into(), time_origin_micros: origin };
                let _ = rec.writer.append(&IngestMessage::SessionMeta(meta));
            }
        }
        let _ = rec.writer.append(&msg);
    }
    let _ = session.apply(msg);
}

fn tick_loop(
    stop: Arc<AtomicBool>,
    shared: Arc<Mutex<Shared>>,
    ticks: Arc<Mutex<TickState>>,
    broadcaster: Arc<Broadcaster>,
    window_micros: u64,
    tick_micros: u64,
) {
    let period = Duration::from_micros(tick_micros);
    let mut engine = ElevationEngine::new(window_micros, tick_micros);
    let mut generation = 0;
    let mut published_rev = 0;
    let mut next = Instant::now() + period;
    while !stop.load(Ordering::SeqCst) {
        let wait = next.saturating_duration_since(Instant::now());
        thread::sleep(wait.min(POLL));
        if Instant::now() < next {
            continue;
        }
        next += period;
        let started = Instant::now();

        let (structure, rev) = {
            let mut sh = shared.lock().unwrap();
            if sh.generation != generation {
                generation = sh.generation;
                engine = ElevationEngine::new(window_micros, tick_micros);
            }
            engine.ingest(sh.session.drain_pending());
            let registry = sh.session.registry();
            let rev = registry.revision();
            let changed = rev != published_rev;
            (changed.then(|| registry.clone()), rev)
        };
        if let Some(registry) = structure {
            broadcaster.publish_structure(&StructureMessage::from_registry(&registry));
            published_rev = rev;
        }
        let had_clock = engine.next_live_now().is_some();
        let rows = engine.tick_live();
        if had_clock {
            let now = engine.now().expect("ticked");
            broadcaster.publish_frame(&compose_frame(&rows, published_rev, now));
        }

        let elapsed = started.elapsed();
        let mut t = ticks.lock().unwrap();
        t.engine = engine.stats();
        t.now = engine.now();
        t.max_tick = t.max_tick.max(elapsed);
        drop(t);
        if Instant::now() > next + period {
            // fell behind; skip missed ticks instead of bursting
            next = Instant::now() + period;
        }
    }
}

fn accept_clients(
    listener: TcpListener,
    stop: Arc<AtomicBool>,
    broadcaster: Arc<Broadcaster>,
    serve: fn(TcpStream, Subscription, &AtomicBool) -> io::Result<()>,
) {
    let mut clients: Vec<JoinHandle<()>> = Vec::new();
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let stop = stop.clone();
                let sub = broadcaster.subscribe();
                clients.retain(|c| !c.is_finished());
                clients.push(thread::spawn(move || {
                    let _ = serve(stream, sub, &stop);
                }));
            }
            Err(_) => thread::sleep(POLL),
        }
    }
    for c in clients {
        let _ = c.join();
    }
}

/// Pumps the subscription into `send` until the client or server goes away.
fn pump(sub: &Subscription, stop: &AtomicBool, mut send: impl FnMut(&str) -> io::Result<()>) -> io::Result<()> {
    while !stop.load(Ordering::SeqCst) {
        match sub.recv_timeout(Duration::from_millis(100)) {
            Ok(Some(text)) => send(&text)?,
            Ok(None) => {}
            Err(Closed) => break,
        }
    }
    Ok(())
}

fn serve_mirror(stream: TcpStream, sub: Subscription, stop: &AtomicBool) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_write_timeout(Some(CLIENT_WRITE_TIMEOUT))?;
    let mut out = stream;
    pump(&sub, stop, |text| {
        out.write_all(text.as_bytes())?;
        out.write_all(b"\n")
    })
}

#[allow(clippy::result_large_err)] // signature fixed by tungstenite
fn check_path(req: &Request, resp: Response) -> Result<Response, ErrorResponse> {
    if req.uri().path() == STREAM_PATH {
        Ok(resp)
    } else {
        let mut err = ErrorResponse::new(Some("unknown path".into()));
        *err.status_mut() = StatusCode::NOT_FOUND;
        Err(err)
    }
}

fn serve_websocket(stream: TcpStream, sub: Subscription, stop: &AtomicBool) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(Duration::from_secs(5)))?;
    stream.set_write_timeout(Some(CLIENT_WRITE_TIMEOUT))?;
    let mut ws = tungstenite::accept_hdr(stream, check_path).map_err(|e| io::Error::other(e.to_string()))?;
    let result = pump(&sub, stop, |text| {
        ws.send(Message::Text(text.to_owned())).map_err(|e| io::Error::other(e.to_string()))
    });
    let _ = ws.close(None);
    let _ = ws.flush();
    result
}
