//! Messages sent to city clients and the fan-out that delivers them.
//!
//! Clients receive a `hello`, then the latest `structure`, then every
//! subsequent `frame` and `structure` in publication order. Frames are full
//! snapshots, so a client that falls [`MAX_CLIENT_LAG`] frames behind has its
//! backlog discarded and is resynchronized with the latest structure and
//! frame.

use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex, Weak};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::engine::ElevationRow;
use crate::layout::{build_layout, CityLayout};
use crate::model::{MethodId, MethodRegistry};

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_UI_PORT: u16 = 7072;
pub const DEFAULT_MIRROR_PORT: u16 = 7073;
pub const STREAM_PATH: &str = "/stream";
/// Queued frames a client may lag behind before it is resynchronized.
pub const MAX_CLIENT_LAG: usize = 50;

/// Rounds half-to-even at the fourth decimal of the decimal value.
pub fn round_elevation(value: f64) -> f64 {
    (value * 10_000.0).round_ties_even() / 10_000.0
}

/// One tick's elevations: `(method, elevation, thread_count)`, by method id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub rev: u64,
    pub t_us: u64,
    pub rows: Vec<(MethodId, f64, u32)>,
}

pub fn compose_frame(rows: &[ElevationRow], rev: u64, t_us: u64) -> Frame {
    let mut rows: Vec<(MethodId, f64, u32)> =
        rows.iter().map(|r| (r.method, round_elevation(r.elevation), r.thread_count)).collect();
    rows.sort_by_key(|r| r.0);
    Frame { rev, t_us, rows }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodEntry {
    pub id: MethodId,
    pub method: String,
    pub class: String,
    pub package: Vec<String>,
}

/// Everything a client needs to draw the city for one revision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructureMessage {
    pub rev: u64,
    pub methods: Vec<MethodEntry>,
    pub layout: CityLayout,
}

impl StructureMessage {
    pub fn from_registry(registry: &MethodRegistry) -> Self {
        let rev = registry.revision();
        let layout = build_layout(registry).unwrap_or_else(|_| CityLayout::empty(rev));
        let methods = registry
            .descriptors()
            .map(|d| MethodEntry {
                id: d.id,
                method: d.method_name.clone(),
                class: d.class_name.clone(),
                package: d.package_path.clone(),
            })
            .collect();
        StructureMessage { rev, methods, layout }
    }

    pub fn empty(rev: u64) -> Self {
        StructureMessage { rev, methods: Vec::new(), layout: CityLayout::empty(rev) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hello {
    pub version: u32,
    pub window_ms: u64,
    pub tick_ms: u64,
}

impl Hello {
    pub fn new(window_micros: u64, tick_micros: u64) -> Self {
        Hello { version: PROTOCOL_VERSION, window_ms: window_micros / 1000, tick_ms: tick_micros / 1000 }
    }
}

/// A message on the client stream, tagged by `type`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello(Hello),
    Structure(StructureMessage),
    Frame(Frame),
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages always serialize")
    }

    /// Parses a message and rebuilds the layout index of structures.
    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        let mut msg: ServerMessage = serde_json::from_str(text)?;
        if let ServerMessage::Structure(s) = &mut msg {
            s.layout.reindex();
        }
        Ok(msg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Control,
    Frame,
}

#[derive(Debug, Default)]
struct QueueState {
    items: VecDeque<(Kind, Arc<str>)>,
    frames: usize,
    skipped_frames: u64,
    resyncs: u64,
    closed: bool,
}

/// Bounded outbound queue of one client.
#[derive(Debug, Default)]
pub struct ClientQueue {
    state: Mutex<QueueState>,
    ready: Condvar,
}

impl ClientQueue {
    fn push(&self, kind: Kind, text: Arc<str>) {
        let mut st = self.state.lock().unwrap();
        if kind == Kind::Frame {
            st.frames += 1;
        }
        st.items.push_back((kind, text));
        self.ready.notify_one();
    }

    /// Replaces the backlog with `structure` and `frame`.
    fn resync(&self, structure: Arc<str>, frame: Arc<str>) {
        let mut st = self.state.lock().unwrap();
        let dropped = st.frames as u64;
        st.items.clear();
        st.items.push_back((Kind::Control, structure));
        st.items.push_back((Kind::Frame, frame));
        st.frames = 1;
        st.skipped_frames += dropped;
        st.resyncs += 1;
        self.ready.notify_one();
    }

    fn queued_frames(&self) -> usize {
        self.state.lock().unwrap().frames
    }

    fn close(&self) {
        self.state.lock().unwrap().closed = true;
        self.ready.notify_all();
    }
}

/// Receiving end held by one client connection.
pub struct Subscription {
    queue: Arc<ClientQueue>,
}

impl Subscription {
    /// Next message, waiting up to `timeout`. `Ok(None)` on timeout,
    /// `Err(Closed)` once the broadcaster is closed and the queue is drained.
    pub fn recv_timeout(&self, timeout: Duration) -> Result<Option<Arc<str>>, Closed> {
        let mut st = self.queue.state.lock().unwrap();
        if st.items.is_empty() && !st.closed {
            st = self.queue.ready.wait_timeout(st, timeout).unwrap().0;
        }
        match st.items.pop_front() {
            Some((kind, text)) => {
                if kind == Kind::Frame {
                    st.frames -= 1;
                }
                Ok(Some(text))
            }
            None if st.closed => Err(Closed),
            None => Ok(None),
        }
    }

    /// Everything queued right now, without waiting.
    pub fn drain(&self) -> Vec<Arc<str>> {
        let mut st = self.queue.state.lock().unwrap();
        st.frames = 0;
        st.items.drain(..).map(|(_, t)| t).collect()
    }

    pub fn skipped_frames(&self) -> u64 {
        self.queue.state.lock().unwrap().skipped_frames
    }

    pub fn resyncs(&self) -> u64 {
        self.queue.state.lock().unwrap().resyncs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Closed;

struct Inner {
    hello: Arc<str>,
    structure: Arc<str>,
    structure_rev: u64,
    frame: Option<Arc<str>>,
    clients: Vec<Weak<ClientQueue>>,
    frames_published: u64,
    closed: bool,
}

/// Fan-out of structures and frames to any number of clients.
pub struct Broadcaster {
    inner: Mutex<Inner>,
}

impl Broadcaster {
    pub fn new(hello: Hello, initial: &StructureMessage) -> Self {
        Broadcaster {
            inner: Mutex::new(Inner {
                hello: ServerMessage::Hello(hello).to_json().into(),
                structure: ServerMessage::Structure(initial.clone()).to_json().into(),
                structure_rev: initial.rev,
                frame: None,
                clients: Vec::new(),
                frames_published: 0,
                closed: false,
            }),
        }
    }

    /// New client queue, preloaded with hello and the latest structure.
    pub fn subscribe(&self) -> Subscription {
        let queue = Arc::new(ClientQueue::default());
        let mut inner = self.inner.lock().unwrap();
        queue.push(Kind::Control, inner.hello.clone());
        queue.push(Kind::Control, inner.structure.clone());
        if inner.closed {
            queue.close();
        }
        inner.clients.push(Arc::downgrade(&queue));
        Subscription { queue }
    }

    pub fn structure_rev(&self) -> u64 {
        self.inner.lock().unwrap().structure_rev
    }

    pub fn client_count(&self) -> usize {
        let mut inner = self.inner.lock().unwrap();
        inner.clients.retain(|c| c.strong_count() > 0);
        inner.clients.len()
    }

    pub fn frames_published(&self) -> u64 {
        self.inner.lock().unwrap().frames_published
    }

    pub fn publish_structure(&self, structure: &StructureMessage) {
        let text: Arc<str> = ServerMessage::Structure(structure.clone()).to_json().into();
        let mut inner = self.inner.lock().unwrap();
        inner.structure = text.clone();
        inner.structure_rev = structure.rev;
        inner.clients.retain(|c| c.strong_count() > 0);
        for client in inner.clients.iter().filter_map(Weak::upgrade) {
            client.push(Kind::Control, text.clone());
        }
    }

    pub fn publish_frame(&self, frame: &Frame) {
        let text: Arc<str> = ServerMessage::Frame(frame.clone()).to_json().into();
        let mut inner = self.inner.lock().unwrap();
        inner.frame = Some(text.clone());
        inner.frames_published += 1;
        inner.clients.retain(|c| c.strong_count() > 0);
        for client in inner.clients.iter().filter_map(Weak::upgrade) {
            if client.queued_frames() >= MAX_CLIENT_LAG {
                client.resync(inner.structure.clone(), text.clone());
            } else {
                client.push(Kind::Frame, text.clone());
            }
        }
    }

    /// Wakes every client; their subscriptions end once drained.
    pub fn close(&self) {
        let mut inner = self.inner.lock().unwrap();
        inner.closed = true;
        for client in inner.clients.iter().filter_map(Weak::upgrade) {
            client.close();
        }
    }
}
