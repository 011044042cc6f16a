//! Keeps the shipped JSON config files in lockstep with the built-in
//! presets. Regenerate after editing a preset:
//!
//! ```sh
//! EPK_REGEN_CONFIGS=1 cargo test -p epk-cli --test configs
//! ```

use std::fs;
use std::path::PathBuf;

use epk_core::config::{preset, FlatConfig};

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .join("configs")
}

#[test]
fn shipped_configs_match_presets() {
    let regen = std::env::var_os("EPK_REGEN_CONFIGS").is_some();
    let dir = configs_dir();
    if regen {
        fs::create_dir_all(&dir).unwrap();
    }
    for name in [
        "desk_transformer",
        "desk_grokking",
        "desk_mlp",
        "study_transformer",
    ] {
        let expected = preset(name).unwrap();
        let path = dir.join(format!("{name}.json"));
        if regen {
            let mut text = serde_json::to_string_pretty(&expected).unwrap();
            text.push('\n');
            fs::write(&path, text).unwrap();
            continue;
        }
        let text = fs::read_to_string(&path)
            .unwrap_or_else(|e| panic!("{} missing ({e}); see module doc", path.display()));
        let parsed: FlatConfig = serde_json::from_str(&text)
            .unwrap_or_else(|e| panic!("{} does not parse: {e}", path.display()));
        assert_eq!(
            parsed,
            expected,
            "{} drifted from preset(\"{name}\"); regenerate per the module doc",
            path.display()
        );
    }
}
