//! Records a live session to a trace file, replays it at ten times real
//! speed into a second server and checks both recordings analyze the same.
//!
//! Run: `cargo run --example record_replay`

use std::time::{Duration, Instant};

use perfcity::server::{self, ServerConfig};
use perfcity::workload::{self, analyze_file, DriveConfig, Pacing, Scenario, ScenarioKind};

fn record_while(path: &std::path::Path, events: u64, send: impl FnOnce(&str) -> perfcity::Result<usize>) -> perfcity::Result<()> {
    let server = server::start(ServerConfig { record: Some(path.to_owned()), ..ServerConfig::ephemeral() })?;
    let sent = send(&server.ingest_addr().to_string())?;
    server.wait_for(Duration::from_secs(10), |s| s.ingest.events_accepted == events);
    println!("  sent {sent} messages, recorded to {}", path.display());
    server.shutdown();
    Ok(())
}

fn main() -> perfcity::Result<()> {
    let dir = std::env::temp_dir().join(format!("perfcity-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let (first, second) = (dir.join("live.trace.ndjson"), dir.join("replayed.trace.ndjson"));

    let scenario = Scenario { duration_micros: 2_000_000, ..Scenario::new(ScenarioKind::DutyCycle) };
    let events: u64 = scenario
        .messages()?
        .iter()
        .map(|m| if let perfcity::IngestMessage::Events(b) = m { b.events.len() as u64 } else { 0 })
        .sum();

    println!("recording a live session");
    record_while(&first, events, |ep| workload::simulate_to(&scenario, ep, Pacing::Fast))?;

    println!("replaying at 10x");
    let started = Instant::now();
    record_while(&second, events, |ep| workload::replay_to(&first, 10.0, ep))?;
    println!("  took {:.2?} for 2 s of producer time", started.elapsed());

    let config = DriveConfig::default();
    let (a, b) = (analyze_file(&first, &config)?, analyze_file(&second, &config)?);
    print!("{}", b.to_table());
    println!("reports identical: {}", a == b);
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
