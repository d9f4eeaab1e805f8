//! Every game restart leaves a thread parked in `run()`. With sixteen
//! restarts the method stays at full height and reports sixteen threads.
//!
//! Run: `cargo run --example thread_leak [restarts]`

use perfcity::workload::{drive, DriveConfig, Scenario, ScenarioKind};
use perfcity::IngestMessage;

fn main() -> perfcity::Result<()> {
    let restarts = std::env::args().nth(1).map_or(Ok(16), |s| s.parse()).expect("restarts must be a number");
    let scenario = Scenario { restarts, ..Scenario::new(ScenarioKind::ThreadLeak) };
    let messages = scenario.messages()?;
    let run = messages
        .iter()
        .find_map(|m| match m {
            IngestMessage::Register(d) if d.method_name == "run()" => Some(d.id),
            _ => None,
        })
        .expect("scenario registers run()");

    let frames = drive(messages, &DriveConfig::default());
    println!("{:>6}  {:>9}  {:>7}", "t (s)", "run()", "threads");
    for frame in frames.iter().filter(|f| f.t_us % 500_000 == 0) {
        let (elevation, threads) = frame.rows.iter().find(|r| r.0 == run).map_or((0.0, 0), |r| (r.1, r.2));
        println!("{:>6.1}  {:>8.2}%  {:>7}", frame.t_us as f64 / 1e6, elevation * 100.0, threads);
    }
    Ok(())
}
