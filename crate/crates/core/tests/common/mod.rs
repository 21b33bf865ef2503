#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::OnceLock;

use halokeep::scenario::{Prepared, Scenario};

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.toml"))
}

pub fn scenario(name: &str) -> Scenario {
    Scenario::load(&scenario_path(name)).unwrap()
}

pub fn earth_moon() -> &'static Prepared {
    static CELL: OnceLock<Prepared> = OnceLock::new();
    CELL.get_or_init(|| scenario("earth_moon_ball").prepare().unwrap())
}

pub fn saturn_enceladus() -> &'static Prepared {
    static CELL: OnceLock<Prepared> = OnceLock::new();
    CELL.get_or_init(|| scenario("saturn_enceladus_ball").prepare().unwrap())
}

/// Scenario with the data path made absolute, for copies written elsewhere.
pub fn scenario_text(name: &str) -> String {
    let data = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data");
    std::fs::read_to_string(scenario_path(name))
        .unwrap()
        .replace("\"../data", &format!("\"{}", data.display()))
}
