use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{Box9DoF, Detection};

/// One box of a scene line. `score` is required for detections and ignored
/// for ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxRecord {
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub euler: [f64; 3],
    pub category: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl BoxRecord {
    pub fn from_box(b: &Box9DoF, category: u32, score: Option<f64>) -> Self {
        Self {
            center: b.center.into(),
            size: b.size.into(),
            euler: b.euler.into(),
            category,
            score,
        }
    }

    pub fn to_box(&self) -> Result<Box9DoF> {
        Box9DoF::new(
            Vector3::from(self.center),
            Vector3::from(self.size),
            Vector3::from(self.euler),
        )
    }

    pub fn to_detection(&self) -> Result<Detection> {
        let score = self.score.ok_or_else(|| invalid("detection is missing its score"))?;
        if !score.is_finite() {
            return Err(invalid("detection score must be finite"));
        }
        Ok(Detection {
            bbox: self.to_box()?,
            score,
            category: self.category,
        })
    }
}

/// One JSON line: a scene and its boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneRecord {
    pub scene_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset: Option<String>,
    pub boxes: Vec<BoxRecord>,
}

/// Parses JSON lines, skipping blank ones. Every box is validated.
pub fn parse_scenes(r: impl BufRead) -> Result<Vec<SceneRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse { line: i + 1, message };
        let scene: SceneRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        for b in &scene.boxes {
            b.to_box().map_err(|e| parse_err(e.to_string()))?;
        }
        out.push(scene);
    }
    Ok(out)
}

pub fn read_scenes(path: impl AsRef<Path>) -> Result<Vec<SceneRecord>> {
    parse_scenes(BufReader::new(std::fs::File::open(path)?))
}

pub fn write_scenes(path: impl AsRef<Path>, scenes: &[SceneRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in scenes {
        serde_json::to_writer(&mut f, s)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}
