//! A worker method on top of the stack for a fixed fraction of each period
//! settles at that fraction once the window is full.
//!
//! Run: `cargo run --example duty_cycle`

use perfcity::model::MethodId;
use perfcity::workload::{drive, DriveConfig, Scenario, ScenarioKind};

fn main() -> perfcity::Result<()> {
    for duty in [0.1, 0.3, 0.5, 0.7, 0.9] {
        let scenario = Scenario { duty, ..Scenario::new(ScenarioKind::DutyCycle) };
        let frames = drive(scenario.messages()?, &DriveConfig::default());
        let steady: Vec<f64> = frames
            .iter()
            .filter(|f| f.t_us >= 3_000_000)
            .map(|f| f.rows.iter().find(|r| r.0 == MethodId(2)).map_or(0.0, |r| r.1))
            .collect();
        let mean = steady.iter().sum::<f64>() / steady.len() as f64;
        let (lo, hi) = steady.iter().fold((f64::MAX, f64::MIN), |(lo, hi), &e| (lo.min(e), hi.max(e)));
        println!("duty {duty:.1}: steady-state elevation {mean:.4} (min {lo:.4}, max {hi:.4})");
    }
    Ok(())
}
