//! Scenario-driven front end: configuration, presets, stage execution and CSV export.

pub mod error;
pub mod pipeline;
pub mod presets;
pub mod scenario;

use std::path::{Path, PathBuf};

use error::{CliError, CliResult};
use scenario::Scenario;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "QCP_OUT";

/// Loads a scenario file, or a preset when `source` names one and no such file exists.
pub fn load_scenario(source: &str) -> CliResult<Scenario> {
    let path = Path::new(source);
    if path.is_file() {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Scenario::from_toml(&text)
    } else if presets::preset_text(source).is_some() {
        presets::load_preset(source)
    } else {
        Err(CliError::Config(format!("no scenario file or preset named `{source}`")))
    }
}

/// `--out` if given, else `$QCP_OUT/<name>`, else `qcp-runs/<name>`.
pub fn output_dir(out: Option<&Path>, env_root: Option<&str>, name: &str) -> PathBuf {
    match (out, env_root) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(root)) if !root.is_empty() => Path::new(root).join(name),
        _ => Path::new("qcp-runs").join(name),
    }
}
