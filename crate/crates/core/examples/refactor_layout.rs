//! Moving the `game` packages under `main` rearranges the city while the
//! workload, and so every building height, stays the same.
//!
//! Run: `cargo run --example refactor_layout`

use perfcity::layout::{build_layout, diff_layout, CityLayout, District, LayoutNode};
use perfcity::protocol::Session;
use perfcity::workload::{drive, DriveConfig, Scenario, ScenarioKind};

fn print_district(d: &District) {
    let indent = "  ".repeat(d.depth as usize);
    let name = if d.package_path.is_empty() { "(default)".to_owned() } else { d.package_path.join(".") };
    let r = d.rect;
    println!("{indent}{name:<20} {:>3} methods at ({}, {}) {}x{}", d.method_count, r.x, r.z, r.width, r.depth);
    for child in &d.children {
        if let LayoutNode::District(sub) = child {
            print_district(sub);
        }
    }
}

fn city(kind: ScenarioKind) -> perfcity::Result<CityLayout> {
    let mut session = Session::new(vec![]);
    for msg in Scenario::new(kind).messages()? {
        let _ = session.apply(msg);
    }
    Ok(build_layout(session.registry())?)
}

fn main() -> perfcity::Result<()> {
    let before = city(ScenarioKind::RefactorBefore)?;
    let after = city(ScenarioKind::RefactorAfter)?;
    for (label, layout) in [("before", &before), ("after", &after)] {
        println!("{label}: {}x{} cells", layout.width, layout.depth);
        layout.districts.iter().for_each(print_district);
    }

    let delta = diff_layout(&before, &after);
    println!();
    println!("methods added {}, removed {}, moved {}", delta.added_plots.len(), delta.removed_plots.len(), delta.moved_plots.len());
    println!("districts added {:?}", delta.added_districts);
    println!("districts removed {:?}", delta.removed_districts);
    for m in &delta.moved_districts {
        println!("district {} moved ({}, {}) -> ({}, {})", m.package_path.join("."), m.from.x, m.from.z, m.to.x, m.to.z);
    }

    let config = DriveConfig::default();
    let a = drive(Scenario::new(ScenarioKind::RefactorBefore).messages()?, &config);
    let b = drive(Scenario::new(ScenarioKind::RefactorAfter).messages()?, &config);
    let same = a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.rows == y.rows);
    println!("\n{} frames, elevations identical: {same}", a.len());
    Ok(())
}
