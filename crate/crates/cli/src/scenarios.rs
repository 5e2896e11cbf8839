//! Scenarios shipped with the binary.

use crate::config::ExperimentConfig;

macro_rules! bundled {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../scenarios/", $name, ".toml")))),*]
    };
}

pub const BUNDLED: &[(&str, &str)] = bundled![
    "radial_coefficients",
    "narrow_disk_coefficients",
    "generator_structure",
    "semigroup_lq",
    "narrow_rectangle_ldp",
    "rate_optimizer",
    "radial_mdp",
    "controlled_error_rate",
    "mdp_error_envelope",
    "narrow_multiscale_limit",
    "semigroup_initial_layer",
    "embedding_dichotomy",
    "girsanov_correctness",
];

pub fn find(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

/// `(name, criterion, description)` for every bundled scenario.
pub fn table() -> Vec<(String, usize, String)> {
    BUNDLED
        .iter()
        .map(|(_, text)| {
            let c = ExperimentConfig::parse(text).expect("bundled scenarios are valid");
            (c.scenario, c.criterion, c.description)
        })
        .collect()
}
