//! Synthetic workloads, trace replay and offline analysis.
//!
//! The scenarios are stand-ins for an instrumented Tetris game: a thread
//! leak where every game restart leaves a thread parked in `run()`, a
//! method with a fixed duty cycle, the four-method trace used to explain
//! the elevation formula, and a workload that runs unchanged before and
//! after a package restructuring.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{self, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::engine::{ElevationEngine, ElevationRow};
use crate::error::{Error, TraceFileError};
use crate::model::{MethodDescriptor, MethodId, ThreadId, TraceEvent};
use crate::protocol::{encode_line, read_trace_file, EventBatch, IngestMessage, Session, SessionMeta, TraceWriter};
use crate::stream::{compose_frame, round_elevation, Frame};

const MS: u64 = 1_000;
const SECOND: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScenarioKind {
    ThreadLeak,
    DutyCycle,
    Figure3,
    RefactorBefore,
    RefactorAfter,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] = [
        ScenarioKind::ThreadLeak,
        ScenarioKind::DutyCycle,
        ScenarioKind::Figure3,
        ScenarioKind::RefactorBefore,
        ScenarioKind::RefactorAfter,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::ThreadLeak => "thread-leak",
            ScenarioKind::DutyCycle => "duty-cycle",
            ScenarioKind::Figure3 => "figure3",
            ScenarioKind::RefactorBefore => "refactor-before",
            ScenarioKind::RefactorAfter => "refactor-after",
        }
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown scenario `{s}`")))
    }
}

/// A scenario plus its parameters. Equal values emit byte-identical traces.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub kind: ScenarioKind,
    /// thread-leak: number of game restarts (leaked threads).
    pub restarts: u32,
    /// thread-leak: simulated time between restarts.
    pub restart_interval_micros: u64,
    /// duty-cycle: fraction of each period the worker method is on top.
    pub duty: f64,
    pub period_micros: u64,
    /// Total simulated time. Ignored by figure3.
    pub duration_micros: u64,
    /// Events of one thread are grouped into batches of this much time.
    pub batch_micros: u64,
    pub seed: u64,
}

impl Scenario {
    pub fn new(kind: ScenarioKind) -> Self {
        Scenario {
            kind,
            restarts: 16,
            restart_interval_micros: 100 * MS,
            duty: 0.3,
            period_micros: SECOND,
            duration_micros: 10 * SECOND,
            batch_micros: 50 * MS,
            seed: 1,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_owned()));
        if !(0.0..=1.0).contains(&self.duty) {
            return bad("duty fraction must be within [0, 1]");
        }
        if self.period_micros == 0 || self.batch_micros == 0 {
            return bad("period and batch length must be positive");
        }
        if self.duration_micros == 0 && self.kind != ScenarioKind::Figure3 {
            return bad("duration must be positive");
        }
        Ok(())
    }

    /// The complete trace: session record, registrations, then event
    /// batches ordered by batch start time and thread.
    pub fn messages(&self) -> Result<Vec<IngestMessage>, Error> {
        self.validate()?;
        let (methods, threads) = match self.kind {
            ScenarioKind::ThreadLeak => thread_leak(self),
            ScenarioKind::DutyCycle => duty_cycle(self),
            ScenarioKind::Figure3 => figure3(),
            ScenarioKind::RefactorBefore => game_session(self, false),
            ScenarioKind::RefactorAfter => game_session(self, true),
        };
        let mut out = vec![IngestMessage::SessionMeta(SessionMeta {
            program_name: self.kind.name().to_owned(),
            time_origin_micros: 0,
        })];
        out.extend(methods.into_iter().map(IngestMessage::Register));
        out.extend(batch_events(threads, self.batch_micros));
        Ok(out)
    }

    pub fn write_trace(&self, path: impl AsRef<Path>) -> Result<(), Error> {
        let mut writer = TraceWriter::create(path)?;
        for msg in self.messages()? {
            writer.append(&msg)?;
        }
        writer.flush()?;
        Ok(())
    }
}

fn batch_events(threads: BTreeMap<ThreadId, Vec<TraceEvent>>, batch_micros: u64) -> Vec<IngestMessage> {
    let mut keyed = Vec::new();
    for (thread, events) in threads {
        let mut current: Vec<TraceEvent> = Vec::new();
        for e in events {
            if current.first().is_some_and(|f| f.timestamp / batch_micros != e.timestamp / batch_micros) {
                let bucket = current[0].timestamp / batch_micros;
                keyed.push((bucket, thread, std::mem::take(&mut current)));
            }
            current.push(e);
        }
        if let Some(first) = current.first() {
            keyed.push((first.timestamp / batch_micros, thread, current));
        }
    }
    keyed.sort_by_key(|(bucket, thread, _)| (*bucket, *thread));
    keyed
        .into_iter()
        .map(|(_, thread, events)| IngestMessage::Events(EventBatch { thread, events }))
        .collect()
}

/// Packages, classes and methods of the simulated game. Ids follow table
/// order, starting at 1.
const GAME: &[(&str, &str, &[&str])] = &[
    ("org.ini4j", "Ini", &["load(File)", "store(File)", "get(String)", "put(String,Object)", "add(String)", "fetch(String)"]),
    ("org.ini4j", "BasicProfile", &["getSection(String)", "addSection(String)", "removeSection(String)", "containsKey(Object)", "size()"]),
    ("org.ini4j", "Config", &["getGlobal()", "isEscape()", "isMultiOption()", "getFileEncoding()", "clone()"]),
    ("org.ini4j", "IniParser", &["parse(Reader,IniHandler)", "parseError(String,int)", "unescape(String)", "newInstance()"]),
    ("org.ini4j", "OptionMap", &["get(Object)", "put(String,String)", "fetch(Object)", "add(String,String)"]),
    ("game", "Launcher", &["main(String[])", "loadSettings()"]),
    ("game", "MainSinglePlayerThread", &["run()", "saveHighScore()"]),
    ("game", "Game", &["tick()", "start()", "isRunning()", "getScore()", "spawnPiece()"]),
    ("game.pieces", "Piece", &["move(int,int)", "rotate()", "getBlocks()", "copy()"]),
    ("game.pieces", "PieceFactory", &["next()", "shuffle()"]),
    ("game.board", "Board", &["collides(Piece)", "place(Piece)", "clearLines()", "isFull()"]),
    ("game.board", "Row", &["isComplete()", "clear()"]),
    ("gui", "GamePanel", &["paintComponent(Graphics)", "drawBoard(Graphics)", "drawPiece(Graphics)", "update()"]),
    ("gui", "Window", &["open()", "close()"]),
    ("gui.menu", "StartMenu", &["show()", "onStart()", "paint(Graphics)"]),
    ("gui.menu", "HighScoreMenu", &["show()", "render(Graphics)"]),
    ("highscore", "HighScoreList", &["load()", "save()", "add(int)"]),
    ("input", "KeyHandler", &["keyPressed(KeyEvent)", "keyReleased(KeyEvent)"]),
    ("settings", "Settings", &["read()", "get(String)"]),
];

fn game_methods(refactored: bool) -> Vec<MethodDescriptor> {
    let mut out = Vec::new();
    let mut id = 1;
    for (package, class, methods) in GAME {
        let mut path: Vec<String> = package.split('.').map(str::to_owned).collect();
        if refactored && path[0] == "game" {
            path.insert(0, "main".to_owned());
        }
        for m in *methods {
            out.push(MethodDescriptor::new(id, m, class, path.clone()));
            id += 1;
        }
    }
    out
}

fn game_id(class: &str, method: &str) -> MethodId {
    game_methods(false)
        .into_iter()
        .find(|d| d.class_name == class && d.method_name == method)
        .map(|d| d.id)
        .unwrap_or_else(|| panic!("{class}.{method} is not part of the game"))
}

/// Records nested calls for one thread.
struct ThreadScript {
    events: Vec<TraceEvent>,
    now: u64,
}

impl ThreadScript {
    fn new(start: u64) -> Self {
        ThreadScript { events: Vec::new(), now: start }
    }

    fn enter(&mut self, m: MethodId) {
        self.events.push(TraceEvent::enter(self.now, m));
    }

    fn exit(&mut self, m: MethodId) {
        self.events.push(TraceEvent::exit(self.now, m));
    }

    fn advance(&mut self, micros: u64) {
        self.now += micros;
    }

    /// `m` runs for `self_micros`, then each callee runs for its own time.
    fn call(&mut self, m: MethodId, self_micros: u64, callees: &[(MethodId, u64)]) {
        self.enter(m);
        self.advance(self_micros);
        for &(c, d) in callees {
            self.enter(c);
            self.advance(d);
            self.exit(c);
        }
        self.exit(m);
    }
}

/// Swing-style UI thread: paints and handles keys at ~30 Hz until `end`.
fn ui_thread(rng: &mut ChaCha8Rng, start: u64, end: u64) -> Vec<TraceEvent> {
    let paint = game_id("GamePanel", "paintComponent(Graphics)");
    let draw_board = game_id("GamePanel", "drawBoard(Graphics)");
    let draw_piece = game_id("GamePanel", "drawPiece(Graphics)");
    let key = game_id("KeyHandler", "keyPressed(KeyEvent)");
    let tick = game_id("Game", "tick()");
    let collides = game_id("Board", "collides(Piece)");
    let mv = game_id("Piece", "move(int,int)");
    let clear = game_id("Board", "clearLines()");

    let mut s = ThreadScript::new(start);
    while s.now + 40 * MS < end {
        let frame_start = s.now;
        s.call(tick, rng.gen_range(200..800), &[(mv, rng.gen_range(50..300)), (collides, rng.gen_range(100..900))]);
        if rng.gen_bool(0.1) {
            s.call(clear, rng.gen_range(500..3_000), &[]);
        }
        s.call(paint, rng.gen_range(1_000..3_000), &[(draw_board, rng.gen_range(2_000..6_000)), (draw_piece, rng.gen_range(300..1_200))]);
        if rng.gen_bool(0.2) {
            s.call(key, rng.gen_range(100..600), &[(mv, rng.gen_range(50..300))]);
        }
        s.now = frame_start + 33 * MS;
    }
    s.events
}

fn thread_leak(sc: &Scenario) -> (Vec<MethodDescriptor>, BTreeMap<ThreadId, Vec<TraceEvent>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    let main = game_id("Launcher", "main(String[])");
    let settings = game_id("Launcher", "loadSettings()");
    let ini_load = game_id("Ini", "load(File)");
    let run = game_id("MainSinglePlayerThread", "run()");
    let start_game = game_id("Game", "start()");
    let on_start = game_id("StartMenu", "onStart()");

    let mut threads = BTreeMap::new();
    let mut main_thread = ThreadScript::new(0);
    main_thread.enter(main);
    main_thread.call(settings, 300, &[(ini_load, rng.gen_range(2_000..4_000))]);
    // main() stays on the stack for the whole session
    threads.insert(ThreadId(1), main_thread.events);

    let mut ui_events = Vec::new();
    for k in 0..sc.restarts {
        let at = u64::from(k) * sc.restart_interval_micros;
        // the menu callback starts a new game thread; the old one never ends
        let mut ui = ThreadScript::new(at);
        ui.call(on_start, 200, &[(start_game, 300)]);
        ui_events.extend(ui.events);

        let mut game = ThreadScript::new(at);
        game.enter(run);
        threads.insert(ThreadId(100 + u64::from(k)), game.events);
    }
    let ui_start = u64::from(sc.restarts) * sc.restart_interval_micros + MS;
    ui_events.extend(ui_thread(&mut rng, ui_start, sc.duration_micros));
    threads.insert(ThreadId(2), ui_events);
    (game_methods(true), threads)
}

fn duty_cycle(sc: &Scenario) -> (Vec<MethodDescriptor>, BTreeMap<ThreadId, Vec<TraceEvent>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    let main = MethodId(1);
    let work = MethodId(2);
    let methods = vec![
        MethodDescriptor::new(1, "main(String[])", "DutyCycle", ["sim"]),
        MethodDescriptor::new(2, "work()", "Worker", ["sim", "worker"]),
    ];
    let on = (sc.duty * sc.period_micros as f64).round() as u64;
    let slack = (sc.period_micros - on).min(10 * MS);
    let mut events = vec![TraceEvent::enter(0, main)];
    let mut period_start = 0;
    while period_start + sc.period_micros <= sc.duration_micros {
        if on > 0 {
            let start = period_start + if slack > 0 { rng.gen_range(0..=slack) } else { 0 };
            events.push(TraceEvent::enter(start, work));
            events.push(TraceEvent::exit(start + on, work));
        }
        period_start += sc.period_micros;
    }
    (methods, BTreeMap::from([(ThreadId(1), events)]))
}

fn figure3() -> (Vec<MethodDescriptor>, BTreeMap<ThreadId, Vec<TraceEvent>>) {
    let methods = vec![
        MethodDescriptor::new(1, "main()", "Figure3", ["example"]),
        MethodDescriptor::new(2, "A()", "Figure3", ["example"]),
        MethodDescriptor::new(3, "C()", "Figure3", ["example"]),
        MethodDescriptor::new(4, "B()", "Figure3", ["example"]),
    ];
    let (main, a, c, b) = (MethodId(1), MethodId(2), MethodId(3), MethodId(4));
    let events = vec![
        TraceEvent::enter(0, main),
        TraceEvent::enter(SECOND, a),
        TraceEvent::enter(2 * SECOND, c),
        TraceEvent::exit(3 * SECOND, c),
        TraceEvent::exit(4 * SECOND, a),
        TraceEvent::enter(5 * SECOND, b),
        TraceEvent::exit(6 * SECOND, b),
    ];
    (methods, BTreeMap::from([(ThreadId(1), events)]))
}

/// A single game played to the end, identical in both package structures.
fn game_session(sc: &Scenario, refactored: bool) -> (Vec<MethodDescriptor>, BTreeMap<ThreadId, Vec<TraceEvent>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    let main = game_id("Launcher", "main(String[])");
    let settings = game_id("Launcher", "loadSettings()");
    let ini_load = game_id("Ini", "load(File)");
    let parse = game_id("IniParser", "parse(Reader,IniHandler)");
    let read = game_id("Settings", "read()");
    let run = game_id("MainSinglePlayerThread", "run()");
    let save = game_id("MainSinglePlayerThread", "saveHighScore()");
    let hs_save = game_id("HighScoreList", "save()");
    let spawn = game_id("Game", "spawnPiece()");
    let next = game_id("PieceFactory", "next()");
    let place = game_id("Board", "place(Piece)");

    let end = sc.duration_micros;
    let mut threads = BTreeMap::new();

    let mut m = ThreadScript::new(0);
    m.enter(main);
    m.enter(settings);
    m.advance(500);
    m.call(ini_load, 4_000, &[(parse, rng.gen_range(5_000..15_000))]);
    m.call(read, 800, &[]);
    m.exit(settings);
    threads.insert(ThreadId(1), m.events);

    let mut g = ThreadScript::new(20 * MS);
    g.enter(run);
    while g.now + 200 * MS < end {
        g.advance(rng.gen_range(50 * MS..150 * MS));
        g.call(spawn, rng.gen_range(100..500), &[(next, rng.gen_range(50..200))]);
        g.call(place, rng.gen_range(200..900), &[]);
    }
    g.call(save, 300, &[(hs_save, rng.gen_range(1_000..3_000))]);
    g.exit(run);
    threads.insert(ThreadId(10), g.events);

    threads.insert(ThreadId(2), ui_thread(&mut rng, 30 * MS, end));
    (game_methods(refactored), threads)
}

/// How fast to emit a trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pacing {
    /// No waiting.
    Fast,
    /// Wall-clock gaps equal producer-time gaps divided by the factor.
    Scaled(f64),
}

impl Pacing {
    pub fn speed(factor: f64) -> Result<Self, Error> {
        if factor.is_finite() && factor > 0.0 {
            Ok(Pacing::Scaled(factor))
        } else {
            Err(Error::InvalidArgument(format!("speed must be a positive number, got {factor}")))
        }
    }
}

/// Writes `messages` as NDJSON, sleeping between event batches according
/// to `pacing`. Timestamps are never rewritten. Returns the message count.
pub fn emit<W: Write>(
    messages: impl IntoIterator<Item = IngestMessage>,
    out: &mut W,
    pacing: Pacing,
) -> io::Result<usize> {
    let started = Instant::now();
    let mut origin: Option<u64> = None;
    let mut count = 0;
    for msg in messages {
        if let (Pacing::Scaled(factor), IngestMessage::Events(batch)) = (pacing, &msg) {
            let t = batch.events[0].timestamp;
            let origin = *origin.get_or_insert(t);
            let due = Duration::from_secs_f64((t - origin.min(t)) as f64 / 1e6 / factor);
            if let Some(wait) = due.checked_sub(started.elapsed()) {
                out.flush()?;
                std::thread::sleep(wait);
            }
        }
        let mut line = encode_line(&msg);
        line.push('\n');
        out.write_all(line.as_bytes())?;
        count += 1;
    }
    out.flush()?;
    Ok(count)
}

pub fn connect(endpoint: &str) -> Result<TcpStream, Error> {
    let addrs: Vec<_> = endpoint
        .to_socket_addrs()
        .map_err(|e| Error::InvalidArgument(format!("bad endpoint `{endpoint}`: {e}")))?
        .collect();
    TcpStream::connect(&addrs[..]).map_err(|e| match e.kind() {
        io::ErrorKind::ConnectionRefused => Error::ConnectionRefused(endpoint.to_owned()),
        _ => Error::Io(e),
    })
}

/// Sends a scenario to a running server.
pub fn simulate_to(scenario: &Scenario, endpoint: &str, pacing: Pacing) -> Result<usize, Error> {
    let messages = scenario.messages()?;
    let mut stream = io::BufWriter::new(connect(endpoint)?);
    Ok(emit(messages, &mut stream, pacing)?)
}

/// Reads a whole trace file, failing on the first bad line.
pub fn load_trace(path: impl AsRef<Path>) -> Result<Vec<IngestMessage>, TraceFileError> {
    read_trace_file(path)?.collect()
}

/// Replays a recorded trace to `out` at `speed` times real time.
pub fn replay<W: Write>(path: impl AsRef<Path>, speed: f64, out: &mut W) -> Result<usize, Error> {
    let pacing = Pacing::speed(speed)?;
    let messages = load_trace(path)?;
    Ok(emit(messages, out, pacing)?)
}

pub fn replay_to(path: impl AsRef<Path>, speed: f64, endpoint: &str) -> Result<usize, Error> {
    let pacing = Pacing::speed(speed)?;
    let messages = load_trace(path)?;
    let mut stream = io::BufWriter::new(connect(endpoint)?);
    Ok(emit(messages, &mut stream, pacing)?)
}

#[derive(Debug, Clone)]
pub struct DriveConfig {
    pub window_micros: u64,
    pub tick_micros: u64,
    pub exclude: Vec<Vec<String>>,
}

impl Default for DriveConfig {
    fn default() -> Self {
        DriveConfig {
            window_micros: crate::model::DEFAULT_WINDOW_MICROS,
            tick_micros: crate::engine::DEFAULT_TICK_MICROS,
            exclude: Vec::new(),
        }
    }
}

/// Runs a message sequence through a session and engine, ticking on
/// producer time: ticks fall every `tick_micros` after the session's time
/// origin, plus one final tick at the last event timestamp.
pub struct OfflineDriver {
    session: Session,
    engine: ElevationEngine,
    tick_micros: u64,
    next_tick: Option<u64>,
    last_event: Option<u64>,
}

impl OfflineDriver {
    pub fn new(config: &DriveConfig) -> Self {
        OfflineDriver {
            session: Session::new(config.exclude.clone()),
            engine: ElevationEngine::new(config.window_micros, config.tick_micros),
            tick_micros: config.tick_micros,
            next_tick: None,
            last_event: None,
        }
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn engine(&self) -> &ElevationEngine {
        &self.engine
    }

    /// Feeds one message, first running every tick due before it.
    pub fn feed(&mut self, msg: IngestMessage, on_frame: &mut dyn FnMut(&Frame, &[ElevationRow], &Session)) {
        match &msg {
            IngestMessage::SessionMeta(meta) if self.next_tick.is_none() => {
                self.next_tick = Some(meta.time_origin_micros + self.tick_micros);
            }
            IngestMessage::Events(batch) => {
                let first = batch.events[0].timestamp;
                let last = batch.events[batch.events.len() - 1].timestamp;
                self.next_tick.get_or_insert(first + self.tick_micros);
                self.run_ticks_before(first, on_frame);
                self.last_event = Some(self.last_event.map_or(last, |t| t.max(last)));
            }
            _ => {}
        }
        let _ = self.session.apply(msg);
        self.engine.ingest(self.session.drain_pending());
    }

    fn run_ticks_before(&mut self, limit: u64, on_frame: &mut dyn FnMut(&Frame, &[ElevationRow], &Session)) {
        while let Some(t) = self.next_tick.filter(|&t| t < limit) {
            self.tick_at(t, on_frame);
            self.next_tick = Some(t + self.tick_micros);
        }
    }

    fn tick_at(&mut self, t: u64, on_frame: &mut dyn FnMut(&Frame, &[ElevationRow], &Session)) {
        let rows = self.engine.tick(t);
        let frame = compose_frame(&rows, self.session.registry().revision(), t);
        on_frame(&frame, &rows, &self.session);
    }

    /// Runs the remaining ticks up to and including the last event time.
    pub fn finish(&mut self, on_frame: &mut dyn FnMut(&Frame, &[ElevationRow], &Session)) {
        let Some(last) = self.last_event else { return };
        self.run_ticks_before(last + 1, on_frame);
        if self.engine.now().is_none_or(|n| n < last) {
            self.tick_at(last, on_frame);
        }
    }
}

/// Convenience: all frames of a message sequence.
pub fn drive(messages: impl IntoIterator<Item = IngestMessage>, config: &DriveConfig) -> Vec<Frame> {
    let mut frames = Vec::new();
    let mut driver = OfflineDriver::new(config);
    let mut sink = |f: &Frame, _: &[ElevationRow], _: &Session| frames.push(f.clone());
    for msg in messages {
        driver.feed(msg, &mut sink);
    }
    driver.finish(&mut sink);
    frames
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub id: MethodId,
    pub method: String,
    pub peak_elevation: f64,
    pub total_self_micros: u64,
    pub thread_count: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Report {
    pub program: Option<String>,
    pub ticks: u64,
    pub methods: Vec<ReportRow>,
}

/// Per-method peak elevation over the session, total self time and thread
/// count, highest peak first.
pub fn analyze(messages: impl IntoIterator<Item = IngestMessage>, config: &DriveConfig) -> Report {
    let mut peaks: BTreeMap<MethodId, f64> = BTreeMap::new();
    let mut ticks = 0u64;
    let mut driver = OfflineDriver::new(config);
    let mut sink = |_: &Frame, rows: &[ElevationRow], _: &Session| {
        ticks += 1;
        for r in rows {
            let p = peaks.entry(r.method).or_insert(0.0);
            *p = p.max(r.elevation);
        }
    };
    for msg in messages {
        driver.feed(msg, &mut sink);
    }
    driver.finish(&mut sink);

    let registry = driver.session.registry();
    let engine = &driver.engine;
    let mut ids: Vec<MethodId> = engine.known_methods().into_iter().collect();
    ids.extend(peaks.keys().copied());
    ids.sort();
    ids.dedup();
    let mut methods: Vec<ReportRow> = ids
        .into_iter()
        .map(|id| ReportRow {
            id,
            method: registry.lookup(id).map_or_else(|| format!("method#{id}"), |d| d.qualified_name()),
            peak_elevation: peaks.get(&id).copied().unwrap_or(0.0),
            total_self_micros: engine.total_self_time(id),
            thread_count: engine.thread_count(id),
        })
        .collect();
    methods.sort_by(|a, b| b.peak_elevation.total_cmp(&a.peak_elevation).then(a.id.cmp(&b.id)));
    Report { program: driver.session.meta().map(|m| m.program_name.clone()), ticks, methods }
}

pub fn analyze_file(path: impl AsRef<Path>, config: &DriveConfig) -> Result<Report, Error> {
    Ok(analyze(load_trace(path)?, config))
}

impl Report {
    /// Aligned text table.
    pub fn to_table(&self) -> String {
        let name_width = self.methods.iter().map(|r| r.method.len()).max().unwrap_or(0).max(6);
        let mut out = String::new();
        let _ = writeln!(out, "{:>6}  {:<name_width$}  {:>8}  {:>14}  {:>7}", "id", "method", "peak", "self_time_ms", "threads");
        for r in &self.methods {
            let _ = writeln!(
                out,
                "{:>6}  {:<name_width$}  {:>8.4}  {:>14.3}  {:>7}",
                r.id.0,
                r.method,
                round_elevation(r.peak_elevation),
                r.total_self_micros as f64 / 1_000.0,
                r.thread_count
            );
        }
        out
    }

    pub fn row(&self, method_name_suffix: &str) -> Option<&ReportRow> {
        self.methods.iter().find(|r| r.method.ends_with(method_name_suffix))
    }
}
