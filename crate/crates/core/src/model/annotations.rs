//! JSON-lines annotation I/O.
//!
//! One object per frame:
//! `{"frame": 0, "count": 2, "incident": false, "flow_in": 0, "flow_out": 0,
//!   "boxes": [{"x":10,"y":10,"w":40,"h":90,"class":"full_body"}, ...]}`

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BoxClass, DetectionBox, GroundTruth, Roi};

#[derive(Serialize, Deserialize)]
struct BoxRecord {
    x: u32,
    y: u32,
    w: u32,
    h: u32,
    class: BoxClass,
    #[serde(default = "default_score", skip_serializing_if = "is_default_score")]
    score: f64,
}

fn default_score() -> f64 {
    1.0
}

fn is_default_score(s: &f64) -> bool {
    *s == 1.0
}

#[derive(Serialize, Deserialize)]
struct FrameRecord {
    frame: u32,
    count: u32,
    #[serde(default)]
    incident: bool,
    #[serde(default)]
    flow_in: u32,
    #[serde(default)]
    flow_out: u32,
    #[serde(default)]
    boxes: Vec<BoxRecord>,
}

/// Loads annotations, validating each box against the minimum-side rule and,
/// when `frame_dims` is given, against frame bounds. The minimum applies to
/// `min(w, h)` uniformly across classes.
pub fn load_annotations(
    path: &Path,
    frame_dims: Option<(u32, u32)>,
    min_box_px: u32,
) -> Result<BTreeMap<u32, GroundTruth>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = BTreeMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FrameRecord = serde_json::from_str(&line).map_err(|e| Error::Format {
            path: path.to_owned(),
            reason: format!("line {}: {e}", lineno + 1),
        })?;
        let mut boxes = Vec::with_capacity(rec.boxes.len());
        for b in rec.boxes {
            let roi = Roi::new(b.x, b.y, b.w, b.h);
            if roi.min_side() < min_box_px {
                return Err(Error::Validation(format!(
                    "frame {}: box {}x{} below the {min_box_px}-px minimum side",
                    rec.frame, b.w, b.h
                )));
            }
            if let Some((fw, fh)) = frame_dims {
                if !roi.fits_in(fw, fh) {
                    return Err(Error::Validation(format!(
                        "frame {}: box at ({},{}) size {}x{} exceeds frame bounds {fw}x{fh}",
                        rec.frame, b.x, b.y, b.w, b.h
                    )));
                }
            }
            boxes.push(DetectionBox { roi, class: b.class, score: b.score });
        }
        if !boxes.is_empty() && boxes.len() as u32 != rec.count {
            return Err(Error::Validation(format!(
                "frame {}: count {} disagrees with {} boxes",
                rec.frame,
                rec.count,
                boxes.len()
            )));
        }
        out.insert(
            rec.frame,
            GroundTruth {
                frame_index: rec.frame,
                count: rec.count,
                boxes,
                incident: rec.incident,
                flow_in: rec.flow_in,
                flow_out: rec.flow_out,
            },
        );
    }
    Ok(out)
}

/// Writes annotations as JSON-lines, one record per frame in index order.
pub fn write_annotations<'a, I>(path: &Path, records: I) -> Result<()>
where
    I: IntoIterator<Item = &'a GroundTruth>,
{
    let mut out = BufWriter::new(fs::File::create(path)?);
    for gt in records {
        let rec = FrameRecord {
            frame: gt.frame_index,
            count: gt.count,
            incident: gt.incident,
            flow_in: gt.flow_in,
            flow_out: gt.flow_out,
            boxes: gt
                .boxes
                .iter()
                .map(|b| BoxRecord {
                    x: b.roi.x,
                    y: b.roi.y,
                    w: b.roi.w,
                    h: b.roi.h,
                    class: b.class,
                    score: b.score,
                })
                .collect(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_single_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("truth.jsonl");
        fs::write(
            &path,
            r#"{"frame":0,"count":1,"boxes":[{"x":10,"y":10,"w":40,"h":90,"class":"full_body"}]}"#,
        )
        .unwrap();
        let map = load_annotations(&path, Some((704, 576)), 30).unwrap();
        let gt = &map[&0];
        assert_eq!(gt.count, 1);
        assert_eq!(gt.boxes[0].class, BoxClass::FullBody);
        assert!(!gt.incident);
    }

    #[test]
    fn thirty_px_head_box_accepted() {
        // boundary of "at least 30 pixels"
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("truth.jsonl");
        fs::write(&path, r#"{"frame":0,"count":1,"boxes":[{"x":0,"y":0,"w":30,"h":30,"class":"head"}]}"#)
            .unwrap();
        assert!(load_annotations(&path, Some((704, 576)), 30).is_ok());
    }

    #[test]
    fn undersized_box_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("truth.jsonl");
        fs::write(&path, r#"{"frame":3,"count":1,"boxes":[{"x":0,"y":0,"w":20,"h":60,"class":"full_body"}]}"#)
            .unwrap();
        match load_annotations(&path, Some((704, 576)), 30) {
            Err(Error::Validation(msg)) => assert!(msg.contains("frame 3")),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn overlapping_duplicates_allowed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("truth.jsonl");
        let b = r#"{"x":5,"y":5,"w":40,"h":40,"class":"head"}"#;
        fs::write(&path, format!(r#"{{"frame":0,"count":2,"boxes":[{b},{b}]}}"#)).unwrap();
        let map = load_annotations(&path, Some((704, 576)), 30).unwrap();
        assert_eq!(map[&0].boxes.len(), 2);
    }

    #[test]
    fn count_box_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("truth.jsonl");
        fs::write(&path, r#"{"frame":0,"count":5,"boxes":[{"x":0,"y":0,"w":30,"h":30,"class":"head"}]}"#)
            .unwrap();
        assert!(matches!(load_annotations(&path, None, 30), Err(Error::Validation(_))));
    }

    #[test]
    fn round_trip_is_semantically_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("truth.jsonl");
        let records = vec![
            GroundTruth {
                frame_index: 0,
                count: 1,
                boxes: vec![DetectionBox {
                    roi: Roi::new(10, 20, 40, 90),
                    class: BoxClass::FullBody,
                    score: 1.0,
                }],
                incident: false,
                flow_in: 2,
                flow_out: 1,
            },
            GroundTruth { frame_index: 1, count: 17, boxes: vec![], incident: true, flow_in: 0, flow_out: 0 },
        ];
        write_annotations(&path, &records).unwrap();
        let reloaded = load_annotations(&path, Some((704, 576)), 30).unwrap();
        assert_eq!(reloaded.len(), 2);
        assert_eq!(reloaded[&0], records[0]);
        assert_eq!(reloaded[&1], records[1]);
    }
}
