//! Pipeline config file. Every key is optional; a value given on the command
//! line replaces the file's value. Relative paths resolve against the
//! working directory, not the config file.
//!
//! ```toml
//! seed = 7
//! out = "runs/a"
//! threads = 4
//!
//! [tile]
//! input = "ortho.tif"
//! size = "800x800"
//! truncate = false
//! min_content = 0.0
//!
//! [synth]
//! fg = "cutouts"
//! bg = "tiles"
//! n = 5000
//!
//! [synth.scene]          # any SynthConfig field
//! occlusion = "drop_fragmented"
//! min_area = 10
//!
//! [synth.scene.augment]  # presence enables augmentation
//! rotations = [0, 90, 180, 270]
//!
//! [eval]
//! gt = "gt.json"
//! dets = "dets.json"
//! masks = false
//! iou = 0.5
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use deadwood::SynthConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub tile: TileSection,
    pub synth: SynthSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TileSection {
    pub input: Option<PathBuf>,
    /// `WxH`, or a single number for square tiles.
    pub size: Option<String>,
    pub truncate: Option<bool>,
    pub min_content: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub fg: Option<PathBuf>,
    pub bg: Option<PathBuf>,
    pub n: Option<usize>,
    pub scene: Option<SynthConfig>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub gt: Option<PathBuf>,
    pub dets: Option<PathBuf>,
    pub masks: Option<bool>,
    pub iou: Option<f64>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Invalid {
            field: "config",
            message: format!("{}: {e}", path.display()),
        })?;
        toml::from_str(&text).map_err(|e| CliError::Invalid {
            field: "config",
            message: format!("{}: {e}", path.display()),
        })
    }
}

/// Parse `WxH` or `N`.
pub fn parse_tile_size(s: &str) -> Result<(u32, u32), String> {
    let num = |v: &str| v.trim().parse::<u32>().map_err(|_| format!("expected WxH or N, got {s:?}"));
    match s.split_once(['x', 'X']) {
        Some((w, h)) => Ok((num(w)?, num(h)?)),
        None => num(s).map(|n| (n, n)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tile_sizes() {
        assert_eq!(parse_tile_size("800x600"), Ok((800, 600)));
        assert_eq!(parse_tile_size("256"), Ok((256, 256)));
        assert!(parse_tile_size("8x").is_err());
        assert!(parse_tile_size("-3").is_err());
    }

    #[test]
    fn documented_example_parses() {
        let doc = include_str!("config.rs");
        let start = doc.find("```toml").unwrap() + 7;
        let end = start + doc[start..].find("```").unwrap();
        let body: String = doc[start..end]
            .lines()
            .map(|l| l.trim_start_matches("//!").trim_start())
            .collect::<Vec<_>>()
            .join("\n");
        let cfg: PipelineConfig = toml::from_str(&body).unwrap();
        assert_eq!(cfg.seed, Some(7));
        let scene = cfg.synth.scene.unwrap();
        assert_eq!(scene.occlusion, deadwood::OcclusionPolicy::DropFragmented);
        assert_eq!(scene.augment.unwrap().rotations, vec![0, 90, 180, 270]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<PipelineConfig>("sed = 1").is_err());
    }

    #[test]
    fn round_trips_through_text() {
        let cfg = PipelineConfig {
            seed: Some(3),
            synth: SynthSection {
                n: Some(4),
                scene: Some(SynthConfig::default()),
                ..Default::default()
            },
            ..Default::default()
        };
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<PipelineConfig>(&text).unwrap(), cfg);
    }
}
