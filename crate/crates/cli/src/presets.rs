//! Built-in scenarios reproducing the worked examples.

use crate::error::{CliError, CliResult};
use crate::scenario::Scenario;

const PRESETS: [(&str, &str); 9] = [
    ("det-aperiodic", include_str!("../presets/det-aperiodic.toml")),
    ("det-periodic", include_str!("../presets/det-periodic.toml")),
    ("det-multi", include_str!("../presets/det-multi.toml")),
    ("det-overlap-aperiodic", include_str!("../presets/det-overlap-aperiodic.toml")),
    ("det-overlap-periodic", include_str!("../presets/det-overlap-periodic.toml")),
    ("rand-rotation", include_str!("../presets/rand-rotation.toml")),
    ("rand-const-slope", include_str!("../presets/rand-const-slope.toml")),
    ("rand-iid", include_str!("../presets/rand-iid.toml")),
    ("rand-beta", include_str!("../presets/rand-beta.toml")),
];

/// One line of `list_presets`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PresetInfo {
    pub name: String,
    pub description: String,
    pub law: String,
}

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

pub fn preset_text(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

pub fn load_preset(name: &str) -> CliResult<Scenario> {
    let text = preset_text(name).ok_or_else(|| CliError::Config(format!("unknown preset `{name}`")))?;
    Scenario::from_toml(text)
}

/// `list_presets`: names with their description and expected limiting law.
pub fn list_presets() -> Vec<PresetInfo> {
    PRESETS
        .iter()
        .map(|(name, text)| {
            let s = Scenario::from_toml(text).expect("built-in presets parse");
            PresetInfo {
                name: name.to_string(),
                description: s.description,
                law: s.law,
            }
        })
        .collect()
}
