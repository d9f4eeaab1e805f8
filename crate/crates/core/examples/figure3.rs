//! The four-method trace used to explain elevation: main() calls A(), A()
//! calls C(), then main() calls B(), one event per second.
//!
//! Run: `cargo run --example figure3`

use perfcity::engine::ElevationEngine;
use perfcity::protocol::Session;
use perfcity::workload::{Scenario, ScenarioKind};

fn main() -> perfcity::Result<()> {
    let mut session = Session::new(vec![]);
    for msg in Scenario::new(ScenarioKind::Figure3).messages()? {
        let _ = session.apply(msg);
    }

    // a window covering the whole trace, t0..t6
    let mut engine = ElevationEngine::new(6_000_000, 100_000);
    engine.ingest(session.drain_pending());
    let rows = engine.tick(6_000_000);

    println!("{:<10} {:>9}", "method", "elevation");
    for row in &rows {
        let desc = session.registry().lookup(row.method).expect("registered");
        println!("{:<10} {:>9.4}", desc.method_name, row.elevation);
    }
    let sum: f64 = rows.iter().map(|r| r.elevation).sum();
    println!("{:<10} {:>9.4}", "sum", sum);
    Ok(())
}
