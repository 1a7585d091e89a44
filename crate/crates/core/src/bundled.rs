//! The two networks shipped with the crate.
//!
//! Both are synthetic. *Anytown-mod* has 22 junctions, 41 pipes, two tanks and
//! one station of two identical pumps sharing a speed. *D-Town-mod* has 399
//! junctions and 443 pipes in five pressure zones, each fed by its own pump
//! station; three zones float on a tank, two are closed booster zones.
//! `examples/gen_networks.rs` regenerates the files.

use crate::network::{parse_network, Network};

pub const ANYTOWN_MOD: &str = include_str!("../assets/anytown_mod.inp");
pub const DTOWN_MOD: &str = include_str!("../assets/dtown_mod.inp");

/// Names accepted by [`source`].
pub const NAMES: [&str; 2] = ["anytown-mod", "dtown-mod"];

/// INP text of a bundled network by name.
pub fn source(name: &str) -> Option<&'static str> {
    match name {
        "anytown-mod" | "anytown" => Some(ANYTOWN_MOD),
        "dtown-mod" | "dtown" => Some(DTOWN_MOD),
        _ => None,
    }
}

pub fn anytown_mod() -> Network {
    parse_network(ANYTOWN_MOD).expect("bundled network parses")
}

pub fn dtown_mod() -> Network {
    parse_network(DTOWN_MOD).expect("bundled network parses")
}
