//! Line-delimited JSON records for detection logs, truth logs and track
//! reports, plus conversions to the in-memory types.

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::birthgrid::{GridGeometry, OcclusionMask};
use crate::geometry::{OrientedRect, Pose2D};
use crate::moupdate::DetectionFrame;
use crate::pipeline::TrackEntry;
use crate::simulator::TruthFrame;
use crate::sofilter::{Detection, MeasCov};

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: {reason}")]
    Invalid { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoRecord {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

/// Occlusion mask with its tile geometry, run-length encoded as
/// `[value, count]` pairs in row-major tile order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionRecord {
    pub origin_x: f64,
    pub origin_y: f64,
    pub tile: f64,
    pub nx: usize,
    pub ny: usize,
    pub rle: Vec<(f64, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub length: f64,
    pub width: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionLogRecord {
    pub t: f64,
    pub ego: EgoRecord,
    pub occlusion: OcclusionRecord,
    pub detections: Vec<DetectionRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthObjectRecord {
    pub id: u64,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub length: f64,
    pub width: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthLogRecord {
    pub t: f64,
    pub objects: Vec<TruthObjectRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub id: u64,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub length: f64,
    pub width: f64,
    pub existence: f64,
    pub genuity: f64,
    pub speed: f64,
    pub yaw_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub t: f64,
    pub tracks: Vec<TrackRecord>,
}

fn finite(line: usize, what: &str, vals: &[f64]) -> Result<(), RecordError> {
    if vals.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(RecordError::Invalid {
            line,
            reason: format!("non-finite value in {what}"),
        })
    }
}

fn rect_of(line: usize, what: &str, x: f64, y: f64, yaw: f64, length: f64, width: f64) -> Result<OrientedRect, RecordError> {
    finite(line, what, &[x, y, yaw, length, width])?;
    OrientedRect::new(x, y, yaw, length, width).map_err(|e| RecordError::Invalid {
        line,
        reason: format!("{what}: {e}"),
    })
}

fn unit(line: usize, what: &str, v: f64) -> Result<(), RecordError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(RecordError::Invalid {
            line,
            reason: format!("{what} {v} outside [0, 1]"),
        })
    }
}

impl From<Pose2D> for EgoRecord {
    fn from(p: Pose2D) -> Self {
        Self {
            x: p.x,
            y: p.y,
            heading: p.heading,
        }
    }
}

impl From<&OcclusionMask> for OcclusionRecord {
    fn from(m: &OcclusionMask) -> Self {
        Self {
            origin_x: m.geometry.origin_x,
            origin_y: m.geometry.origin_y,
            tile: m.geometry.tile_size,
            nx: m.geometry.nx,
            ny: m.geometry.ny,
            rle: m.to_runs(),
        }
    }
}

impl OcclusionRecord {
    pub fn to_mask(&self, line: usize) -> Result<OcclusionMask, RecordError> {
        finite(line, "occlusion", &[self.origin_x, self.origin_y, self.tile])?;
        if self.tile <= 0.0 {
            return Err(RecordError::Invalid {
                line,
                reason: "occlusion tile size must be positive".into(),
            });
        }
        let geometry = GridGeometry {
            origin_x: self.origin_x,
            origin_y: self.origin_y,
            tile_size: self.tile,
            nx: self.nx,
            ny: self.ny,
        };
        OcclusionMask::from_runs(geometry, &self.rle).ok_or_else(|| RecordError::Invalid {
            line,
            reason: "occlusion runs do not cover the grid with values in [0, 1]".into(),
        })
    }
}

impl DetectionLogRecord {
    pub fn from_frame(f: &DetectionFrame) -> Self {
        Self {
            t: f.t,
            ego: f.ego.into(),
            occlusion: (&f.occlusion).into(),
            detections: f
                .detections
                .iter()
                .map(|d| DetectionRecord {
                    x: d.rect.cx,
                    y: d.rect.cy,
                    yaw: d.rect.yaw,
                    length: d.rect.length,
                    width: d.rect.width,
                    score: d.score,
                })
                .collect(),
        }
    }

    /// Converts to a frame. Logs carry no measurement noise; detections get
    /// `noise`, and the tracker substitutes its own model anyway.
    pub fn to_frame(&self, line: usize, noise: MeasCov) -> Result<DetectionFrame, RecordError> {
        finite(line, "t", &[self.t])?;
        finite(line, "ego", &[self.ego.x, self.ego.y, self.ego.heading])?;
        let detections = self
            .detections
            .iter()
            .map(|d| {
                unit(line, "score", d.score)?;
                Ok(Detection {
                    rect: rect_of(line, "detection", d.x, d.y, d.yaw, d.length, d.width)?,
                    score: d.score,
                    noise,
                })
            })
            .collect::<Result<Vec<_>, RecordError>>()?;
        Ok(DetectionFrame {
            t: self.t,
            ego: Pose2D::new(self.ego.x, self.ego.y, self.ego.heading),
            detections,
            occlusion: self.occlusion.to_mask(line)?,
        })
    }
}

impl TruthLogRecord {
    pub fn from_frame(f: &TruthFrame) -> Self {
        Self {
            t: f.t,
            objects: f
                .objects
                .iter()
                .map(|o| TruthObjectRecord {
                    id: o.id,
                    x: o.rect.cx,
                    y: o.rect.cy,
                    yaw: o.rect.yaw,
                    length: o.rect.length,
                    width: o.rect.width,
                    speed: o.speed,
                })
                .collect(),
        }
    }

    pub fn rects(&self, line: usize) -> Result<Vec<(u64, OrientedRect)>, RecordError> {
        finite(line, "t", &[self.t])?;
        self.objects
            .iter()
            .map(|o| {
                finite(line, "speed", &[o.speed])?;
                Ok((o.id, rect_of(line, "object", o.x, o.y, o.yaw, o.length, o.width)?))
            })
            .collect()
    }
}

impl From<&TrackEntry> for TrackRecord {
    fn from(e: &TrackEntry) -> Self {
        Self {
            id: e.id,
            x: e.rect.cx,
            y: e.rect.cy,
            yaw: e.rect.yaw,
            length: e.rect.length,
            width: e.rect.width,
            existence: e.existence,
            genuity: e.genuity,
            speed: e.speed,
            yaw_rate: e.yaw_rate,
        }
    }
}

impl ReportRecord {
    pub fn new(t: f64, entries: &[TrackEntry]) -> Self {
        Self {
            t,
            tracks: entries.iter().map(TrackRecord::from).collect(),
        }
    }

    pub fn entries(&self, line: usize) -> Result<Vec<TrackEntry>, RecordError> {
        finite(line, "t", &[self.t])?;
        self.tracks
            .iter()
            .map(|r| {
                unit(line, "existence", r.existence)?;
                unit(line, "genuity", r.genuity)?;
                finite(line, "track", &[r.speed, r.yaw_rate])?;
                Ok(TrackEntry {
                    id: r.id,
                    rect: rect_of(line, "track", r.x, r.y, r.yaw, r.length, r.width)?,
                    existence: r.existence,
                    genuity: r.genuity,
                    speed: r.speed,
                    yaw_rate: r.yaw_rate,
                })
            })
            .collect()
    }
}

/// Reads one record per non-blank line. Returns `(line number, record)`.
pub fn read_jsonl<T: DeserializeOwned>(reader: impl BufRead) -> Result<Vec<(usize, T)>, RecordError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| RecordError::Parse {
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(mut writer: impl Write, records: &[T]) -> Result<(), RecordError> {
    for r in records {
        serde_json::to_writer(&mut writer, r).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Checks that record times increase strictly.
pub fn check_increasing(times: impl IntoIterator<Item = (usize, f64)>) -> Result<(), RecordError> {
    let mut last: Option<f64> = None;
    for (line, t) in times {
        if let Some(prev) = last {
            if !(t > prev) {
                return Err(RecordError::Invalid {
                    line,
                    reason: format!("time {t} does not increase past {prev}"),
                });
            }
        }
        last = Some(t);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detection_record_json_shape() {
        let rec = DetectionLogRecord {
            t: 0.1,
            ego: EgoRecord {
                x: 0.0,
                y: 0.0,
                heading: 0.0,
            },
            occlusion: OcclusionRecord {
                origin_x: 0.0,
                origin_y: 0.0,
                tile: 3.0,
                nx: 2,
                ny: 1,
                rle: vec![(0.0, 1), (1.0, 1)],
            },
            detections: vec![DetectionRecord {
                x: 1.0,
                y: 2.0,
                yaw: 0.5,
                length: 4.0,
                width: 2.0,
                score: 0.9,
            }],
        };
        let s = serde_json::to_string(&rec).unwrap();
        assert!(s.contains("\"rle\":[[0.0,1],[1.0,1]]"));
        let back: DetectionLogRecord = serde_json::from_str(&s).unwrap();
        assert_eq!(back, rec);
        let frame = back.to_frame(1, MeasCov::identity()).unwrap();
        assert_eq!(frame.occlusion.values, vec![0.0, 1.0]);
    }

    #[test]
    fn bad_mask_and_score_rejected() {
        let mut rec = DetectionLogRecord {
            t: 0.0,
            ego: EgoRecord {
                x: 0.0,
                y: 0.0,
                heading: 0.0,
            },
            occlusion: OcclusionRecord {
                origin_x: 0.0,
                origin_y: 0.0,
                tile: 3.0,
                nx: 2,
                ny: 2,
                rle: vec![(0.0, 3)],
            },
            detections: vec![],
        };
        assert!(rec.to_frame(4, MeasCov::identity()).is_err());
        rec.occlusion.rle = vec![(0.0, 4)];
        rec.detections.push(DetectionRecord {
            x: 0.0,
            y: 0.0,
            yaw: 0.0,
            length: 4.0,
            width: 2.0,
            score: 1.5,
        });
        assert!(matches!(
            rec.to_frame(4, MeasCov::identity()),
            Err(RecordError::Invalid { line: 4, .. })
        ));
    }

    #[test]
    fn read_reports_line_numbers() {
        let text = "{\"t\":0.0,\"objects\":[]}\n\n{\"t\":0.1,\"objects\":[{\"id\":1}]}\n";
        match read_jsonl::<TruthLogRecord>(text.as_bytes()) {
            Err(RecordError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn increasing_times() {
        assert!(check_increasing([(1, 0.0), (2, 0.1)]).is_ok());
        assert!(check_increasing([(1, 0.1), (2, 0.1)]).is_err());
    }
}
