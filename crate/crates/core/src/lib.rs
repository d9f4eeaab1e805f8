//! Live software-city profiler.
//!
//! Instrumented programs stream method enter/exit events over TCP. The
//! engine rebuilds each thread's call stack, attributes self time to the
//! method on top, and every tick reports each method's share of the last
//! `L` seconds (its *elevation*, the largest share over all threads). The
//! program structure becomes a city: packages are districts, classes are
//! blocks and methods are 1x1 buildings whose heights follow the
//! elevations. Clients receive the city and per-tick frames over WebSocket
//! or a plain NDJSON socket.
//!
//! | module | role |
//! |---|---|
//! | [`model`] | events, method identity, registry |
//! | [`protocol`] | ingest wire format, sessions, trace files |
//! | [`engine`] | stack reconstruction and windowed elevations |
//! | [`layout`] | deterministic city ground plan |
//! | [`stream`] | frames, structure messages, client fan-out |
//! | [`server`] | TCP/WebSocket server and tick loop |
//! | [`workload`] | synthetic scenarios, replay, offline analysis |

pub mod engine;
pub mod error;
pub mod layout;
pub mod model;
pub mod protocol;
pub mod server;
pub mod stream;
pub mod workload;

pub use engine::{ElevationEngine, ElevationRow};
pub use error::{Error, Result};
pub use layout::{build_layout, diff_layout, CityLayout, StructureDelta};
pub use model::{Action, MethodDescriptor, MethodId, MethodRegistry, ThreadId, TraceEvent, Window};
pub use protocol::{decode_line, encode_line, IngestMessage, Session};
pub use stream::{compose_frame, Frame, StructureMessage};
