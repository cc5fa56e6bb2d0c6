//! Per-stream configuration, loaded from a TOML key=value file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PerspectiveMap;

/// Stream-level settings shared by every stage that consumes the stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct StreamConfig {
    pub fps: f64,
    pub weight_top: f64,
    pub weight_bottom: f64,
    pub min_box_px: u32,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig { fps: 25.0, weight_top: 1.0, weight_bottom: 1.0, min_box_px: 30 }
    }
}

impl StreamConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: StreamConfig = toml::from_str(&text)
            .map_err(|e| Error::Format { path: path.to_owned(), reason: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).expect("config serializes");
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.fps <= 0.0 {
            return Err(Error::Config(format!("fps must be positive, got {}", self.fps)));
        }
        if self.weight_top <= 0.0 || self.weight_bottom <= 0.0 {
            return Err(Error::Config("perspective weights must be positive".into()));
        }
        Ok(())
    }

    pub fn perspective(&self, frame_height: u32) -> PerspectiveMap {
        PerspectiveMap {
            weight_top: self.weight_top,
            weight_bottom: self.weight_bottom,
            height: frame_height,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_partial_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stream.toml");
        std::fs::write(&path, "fps = 12.5\nweight_top = 4.0\n").unwrap();
        let cfg = StreamConfig::load(&path).unwrap();
        assert_eq!(cfg.fps, 12.5);
        assert_eq!(cfg.weight_top, 4.0);
        assert_eq!(cfg.weight_bottom, 1.0);
        assert_eq!(cfg.min_box_px, 30);
    }

    #[test]
    fn bad_fps_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stream.toml");
        std::fs::write(&path, "fps = 0.0\n").unwrap();
        assert!(matches!(StreamConfig::load(&path), Err(Error::Config(_))));
    }
}
