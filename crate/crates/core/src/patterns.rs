//! Versioned illumination layouts.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FpmError, Result};
use crate::geometry::{IlluminationPattern, OpticalConfig};

pub const PATTERN_SET_VERSION: u32 = 1;

const BUNDLED_TEN: &str = include_str!("../assets/patterns10.json");

/// Ordered list of patterns for one LED grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternSet {
    pub version: u32,
    pub led_grid: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub patterns: Vec<IlluminationPattern>,
}

impl PatternSet {
    pub fn from_json(text: &str) -> Result<Self> {
        let set: PatternSet =
            serde_json::from_str(text).map_err(|e| FpmError::format(format!("pattern set: {e}")))?;
        if set.version != PATTERN_SET_VERSION {
            return Err(FpmError::format(format!(
                "pattern set version {} is not supported (expected {PATTERN_SET_VERSION})",
                set.version
            )));
        }
        if set.patterns.is_empty() {
            return Err(FpmError::format("pattern set is empty"));
        }
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// The ten-pattern layout shipped with the crate: the central LED alone,
    /// four groups of the remaining bright-field LEDs and five groups of
    /// dark-field LEDs, on an 11×11 grid.
    pub fn bundled_ten() -> Self {
        Self::from_json(BUNDLED_TEN).expect("bundled pattern asset is valid")
    }

    pub fn validate(&self, cfg: &OpticalConfig) -> Result<()> {
        if cfg.led_grid != self.led_grid {
            return Err(FpmError::Config(format!(
                "patterns are laid out for a {0}x{0} grid, optics has {1}x{1}",
                self.led_grid, cfg.led_grid
            )));
        }
        self.patterns.iter().try_for_each(|p| p.validate(cfg))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("pattern sets serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{is_brightfield, led_wavevector, LedIndex};
    use std::collections::BTreeSet;

    #[test]
    fn bundled_layout_covers_every_led_once() {
        let set = PatternSet::bundled_ten();
        let cfg = OpticalConfig::usaf_system();
        set.validate(&cfg).unwrap();
        assert_eq!(set.patterns.len(), 10);
        assert_eq!(set.patterns[0], IlluminationPattern::single(LedIndex::CENTER));
        let all: Vec<LedIndex> = set.patterns.iter().flat_map(|p| p.leds.clone()).collect();
        let uniq: BTreeSet<LedIndex> = all.iter().copied().collect();
        assert_eq!(all.len(), 121);
        assert_eq!(uniq.len(), 121);
    }

    #[test]
    fn bright_and_dark_field_are_not_mixed() {
        let cfg = OpticalConfig::usaf_system();
        for p in &PatternSet::bundled_ten().patterns {
            let kinds: BTreeSet<bool> = p
                .leds
                .iter()
                .map(|&l| is_brightfield(&cfg, led_wavevector(&cfg, l, (0.0, 0.0)).unwrap()))
                .collect();
            assert_eq!(kinds.len(), 1);
        }
    }

    #[test]
    fn version_and_grid_checks() {
        let bad = BUNDLED_TEN.replace("\"version\": 1", "\"version\": 9");
        assert!(PatternSet::from_json(&bad).is_err());
        let cfg = OpticalConfig {
            led_grid: 9,
            ..OpticalConfig::usaf_system()
        };
        assert!(PatternSet::bundled_ten().validate(&cfg).is_err());
    }
}
