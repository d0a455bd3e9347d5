//! Shipped scenarios and grid topology tables, embedded so the binary runs
//! from any directory.

pub const SCENARIO_NAMES: &[&str] = &[
    "ieee14_dc_step",
    "ieee14_dm_noise",
    "ieee14_dr_tot2",
    "ieee14_algo_compare",
    "ieee39_three_aru",
    "bench_scaling",
];

pub fn scenario(name: &str) -> Option<&'static str> {
    match name {
        "ieee14_dc_step" => Some(include_str!("../scenarios/ieee14_dc_step.toml")),
        "ieee14_dm_noise" => Some(include_str!("../scenarios/ieee14_dm_noise.toml")),
        "ieee14_dr_tot2" => Some(include_str!("../scenarios/ieee14_dr_tot2.toml")),
        "ieee14_algo_compare" => Some(include_str!("../scenarios/ieee14_algo_compare.toml")),
        "ieee39_three_aru" => Some(include_str!("../scenarios/ieee39_three_aru.toml")),
        "bench_scaling" => Some(include_str!("../scenarios/bench_scaling.toml")),
        _ => None,
    }
}

pub fn scenario_description(name: &str) -> &'static str {
    match name {
        "ieee14_dc_step" => "containment response to a 1 pu load step on the 14-bus grid",
        "ieee14_dm_noise" => "moderation under continuous net-load fluctuations, 14-bus grid",
        "ieee14_dr_tot2" => "regulation with first-order asset dynamics compensated, 14-bus grid",
        "ieee14_algo_compare" => "both tracking algorithms side by side on the first-order plant",
        "ieee39_three_aru" => "three response units with different algorithms on the 39-bus grid",
        "bench_scaling" => "asset-count scaling template for the bench subcommand",
        _ => "",
    }
}

/// (bus table, line table) for an embedded topology name.
pub fn topology(name: &str) -> Option<(&'static str, &'static str)> {
    match name {
        "ieee14" => Some((
            include_str!("../data/ieee14_buses.csv"),
            include_str!("../data/ieee14_lines.csv"),
        )),
        "ieee39" => Some((
            include_str!("../data/ieee39_buses.csv"),
            include_str!("../data/ieee39_lines.csv"),
        )),
        _ => None,
    }
}
