//! Flies the mission described by a scenario file and prints the fuel
//! summary, then classifies the uncontrolled exits of the flown states.
//!
//! cargo run --release --example mission -- scenarios/earth_moon_ball.toml
//!
//! A second argument overrides the number of revolutions.

use std::path::PathBuf;
use std::time::Instant;

use halokeep::safety::{verify_mission, SafetyConfig, Verdict};
use halokeep::scenario::Scenario;

fn main() -> halokeep::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios/earth_moon_ball.toml"));
    let mut scenario = Scenario::load(&path)?;
    if let Some(revs) = args.next().and_then(|s| s.parse().ok()) {
        scenario.mission.revolutions = revs;
    }

    let start = Instant::now();
    let prepared = scenario.prepare()?;
    let log = prepared.run(&scenario.mission_config())?;
    print!("{}", log.summary_text(&prepared.params));
    println!("wall time           {:.1} s", start.elapsed().as_secs_f64());

    let revs = scenario.mission.revolutions;
    let mut cfg = scenario.safety.clone().unwrap_or_else(|| SafetyConfig::with_window(2, revs));
    cfg.window.1 = cfg.window.1.min(revs);
    if cfg.window.0 <= cfg.window.1 {
        let report = verify_mission(&log, &prepared.orbit, &cfg)?;
        let n = report.in_window().count().max(1) as f64;
        println!(
            "safe exits          {:.1}% of {} sampled states",
            100.0 * report.count(Verdict::EscapeIntended) as f64 / n,
            report.in_window().count()
        );
    }
    Ok(())
}
