//! Starts the server, plays the thread-leak scenario into it in real time
//! and prints what a mirror client sees.
//!
//! Run: `cargo run --example live_server [seconds]`
//!
//! The server uses ephemeral ports; the addresses are printed so a browser
//! client can be pointed at the WebSocket while it runs.

use std::io::{BufRead, BufReader};
use std::net::TcpStream;
use std::time::{Duration, Instant};

use perfcity::server::{self, ServerConfig};
use perfcity::stream::ServerMessage;
use perfcity::workload::{self, Pacing, Scenario, ScenarioKind};

fn main() -> perfcity::Result<()> {
    let seconds: u64 = std::env::args().nth(1).map_or(Ok(5), |s| s.parse()).expect("seconds must be a number");
    let server = server::start(ServerConfig::ephemeral())?;
    println!("ingest   {}", server.ingest_addr());
    println!("ui       ws://{}/stream", server.ui_addr());
    println!("mirror   {}", server.mirror_addr());

    let mirror = TcpStream::connect(server.mirror_addr())?;
    mirror.set_read_timeout(Some(Duration::from_millis(200)))?;
    let endpoint = server.ingest_addr().to_string();
    let scenario = Scenario { duration_micros: seconds * 1_000_000, ..Scenario::new(ScenarioKind::ThreadLeak) };
    let producer = std::thread::spawn(move || workload::simulate_to(&scenario, &endpoint, Pacing::Scaled(1.0)));

    let mut names = std::collections::HashMap::new();
    let mut lines = BufReader::new(mirror).lines();
    let deadline = Instant::now() + Duration::from_secs(seconds + 1);
    let mut last_print = 0;
    while Instant::now() < deadline {
        let Some(Ok(line)) = lines.next() else { continue };
        match ServerMessage::from_json(&line).expect("server speaks JSON") {
            ServerMessage::Hello(h) => println!("hello: window {} ms, tick {} ms", h.window_ms, h.tick_ms),
            ServerMessage::Structure(s) => {
                println!("structure rev {}: {} methods, {}x{} cells", s.rev, s.methods.len(), s.layout.width, s.layout.depth);
                names = s.methods.into_iter().map(|m| (m.id, format!("{}.{}", m.class, m.method))).collect();
            }
            ServerMessage::Frame(f) if f.t_us / 500_000 > last_print => {
                last_print = f.t_us / 500_000;
                let mut rows = f.rows.clone();
                rows.sort_by(|a, b| b.1.total_cmp(&a.1));
                let top: Vec<String> = rows
                    .iter()
                    .take(3)
                    .map(|r| format!("{} {:.2}% x{}", names.get(&r.0).map_or("?", String::as_str), r.1 * 100.0, r.2))
                    .collect();
                println!("t={:>5.1}s  {}", f.t_us as f64 / 1e6, top.join(" | "));
            }
            ServerMessage::Frame(_) => {}
        }
    }
    producer.join().expect("producer thread")?;
    let stats = server.stats();
    println!("events accepted {}, frames {}, slowest tick {:?}", stats.ingest.events_accepted, stats.frames, stats.max_tick);
    server.shutdown();
    Ok(())
}
