//! Offline analysis of a trace file: peak elevation, total self time and
//! thread count per method. Without an argument a game session is
//! simulated first.
//!
//! Run: `cargo run --example analyze_trace [file.trace.ndjson] [excluded.package]...`

use perfcity::protocol::parse_package_prefix;
use perfcity::workload::{analyze_file, DriveConfig, Scenario, ScenarioKind};

fn main() -> perfcity::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = match args.next() {
        Some(p) => p.into(),
        None => {
            let p = std::env::temp_dir().join("perfcity-game.trace.ndjson");
            Scenario::new(ScenarioKind::RefactorBefore).write_trace(&p)?;
            println!("simulated {}", p.display());
            p
        }
    };
    let config = DriveConfig { exclude: args.map(|a| parse_package_prefix(&a)).collect(), ..DriveConfig::default() };
    let report = analyze_file(&path, &config)?;
    println!("program {:?}, {} ticks", report.program.as_deref().unwrap_or("?"), report.ticks);
    print!("{}", report.to_table());
    Ok(())
}
