//! Reading and writing the comma-separated tracking text format:
//! `frame,id,left,top,width,height,score,class,visibility` with one box per
//! line. The class and visibility columns are optional on input (defaulting
//! to 1 and 1.0); detections conventionally carry id −1.
//!
//! Writers emit two-decimal fixed-point values and replace the target file
//! atomically, so a crash mid-write never leaves a truncated result behind.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use thiserror::Error;

use crate::association::TrackOutput;
use crate::metrics::FrameBoxes;
use crate::model::{BBox, Detection};

#[derive(Debug, Error)]
pub enum MotIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotRow {
    pub frame: u32,
    pub id: i64,
    pub bbox: BBox,
    pub score: f64,
    pub class_id: i32,
    pub visibility: f64,
}

/// Parsed file contents. `was_unsorted` reports that rows arrived out of
/// frame order and were re-sorted (stably), which callers may want to warn
/// about.
#[derive(Debug, Clone, PartialEq)]
pub struct MotData {
    pub rows: Vec<MotRow>,
    pub was_unsorted: bool,
}

fn parse_row(line_no: usize, line: &str) -> Result<MotRow, MotIoError> {
    let err = |msg: String| MotIoError::Parse { line: line_no, msg };
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if !(7..=9).contains(&fields.len()) {
        return Err(err(format!("expected 7 to 9 comma-separated fields, got {}", fields.len())));
    }
    let int = |idx: usize, name: &str| {
        fields[idx]
            .parse::<i64>()
            .map_err(|_| err(format!("{name} must be an integer, got `{}`", fields[idx])))
    };
    let float = |idx: usize, name: &str| {
        fields[idx]
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| err(format!("{name} must be a finite number, got `{}`", fields[idx])))
    };

    let frame = int(0, "frame")?;
    if frame < 1 || frame > u32::MAX as i64 {
        return Err(err(format!("frame must be at least 1, got {frame}")));
    }
    let frame = frame as u32;
    let id = int(1, "id")?;
    let left = float(2, "left")?;
    let top = float(3, "top")?;
    let w = float(4, "width")?;
    let h = float(5, "height")?;
    if w <= 0.0 || h <= 0.0 {
        return Err(err(format!("box size must be positive, got {w}x{h}")));
    }
    let score = float(6, "score")?;
    if !(0.0..=1.0).contains(&score) {
        return Err(err(format!("score must be in [0, 1], got {score}")));
    }
    let class_id = if fields.len() >= 8 {
        let c = int(7, "class")?;
        i32::try_from(c).map_err(|_| err(format!("class out of range: {c}")))?
    } else {
        1
    };
    let visibility = if fields.len() >= 9 {
        let v = float(8, "visibility")?;
        if !(0.0..=1.0).contains(&v) {
            return Err(err(format!("visibility must be in [0, 1], got {v}")));
        }
        v
    } else {
        1.0
    };
    Ok(MotRow { frame, id, bbox: BBox::from_ltwh(left, top, w, h), score, class_id, visibility })
}

pub fn parse_mot(reader: impl BufRead) -> Result<MotData, MotIoError> {
    let mut rows = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        rows.push(parse_row(idx + 1, trimmed)?);
    }
    let was_unsorted = rows.windows(2).any(|w| w[1].frame < w[0].frame);
    if was_unsorted {
        rows.sort_by_key(|r| r.frame);
    }
    Ok(MotData { rows, was_unsorted })
}

pub fn read_mot_file(path: &Path) -> Result<MotData, MotIoError> {
    parse_mot(BufReader::new(File::open(path)?))
}

/// Two-decimal formatting with `-0.00` normalized away, so equal values
/// always serialize to identical bytes.
fn fmt2(v: f64) -> String {
    let rounded = (v * 100.0).round() / 100.0;
    let rounded = if rounded == 0.0 { 0.0 } else { rounded };
    format!("{rounded:.2}")
}

pub fn format_row(r: &MotRow) -> String {
    let (left, top, w, h) = r.bbox.to_ltwh();
    let mut line = String::new();
    write!(
        line,
        "{},{},{},{},{},{},{},{},{}",
        r.frame,
        r.id,
        fmt2(left),
        fmt2(top),
        fmt2(w),
        fmt2(h),
        fmt2(r.score),
        r.class_id,
        fmt2(r.visibility)
    )
    .expect("writing to a String cannot fail");
    line
}

/// Writes rows in the given order, atomically (temp file + rename).
pub fn write_mot_file(path: &Path, rows: &[MotRow]) -> Result<(), MotIoError> {
    let mut text = String::with_capacity(rows.len() * 48);
    for r in rows {
        text.push_str(&format_row(r));
        text.push('\n');
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Converts tracker outputs to rows sorted by `(frame, id)`, with full
/// confidence and visibility.
pub fn track_outputs_to_rows(outputs: &[TrackOutput]) -> Vec<MotRow> {
    let mut rows: Vec<MotRow> = outputs
        .iter()
        .map(|o| MotRow {
            frame: o.frame,
            id: o.id as i64,
            bbox: o.bbox,
            score: 1.0,
            class_id: o.class_id,
            visibility: 1.0,
        })
        .collect();
    rows.sort_by_key(|r| (r.frame, r.id));
    rows
}

pub fn detections_by_frame(rows: &[MotRow]) -> BTreeMap<u32, Vec<Detection>> {
    let mut out: BTreeMap<u32, Vec<Detection>> = BTreeMap::new();
    for r in rows {
        out.entry(r.frame).or_default().push(Detection {
            frame: r.frame,
            bbox: r.bbox,
            score: r.score,
            class_id: r.class_id,
        });
    }
    out
}

pub fn boxes_by_frame(rows: &[MotRow]) -> FrameBoxes {
    let mut out = FrameBoxes::new();
    for r in rows {
        out.entry(r.frame).or_default().push((r.id, r.bbox));
    }
    out
}

/// Center trajectories per id, frames ascending, ids ascending.
pub fn trajectories(rows: &[MotRow]) -> Vec<(i64, Vec<(u32, f64, f64)>)> {
    let mut map: BTreeMap<i64, Vec<(u32, f64, f64)>> = BTreeMap::new();
    for r in rows {
        map.entry(r.id).or_default().push((r.frame, r.bbox.cx, r.bbox.cy));
    }
    let mut out: Vec<(i64, Vec<(u32, f64, f64)>)> = map.into_iter().collect();
    for (_, traj) in &mut out {
        traj.sort_by_key(|(f, _, _)| *f);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn parse_str(text: &str) -> Result<MotData, MotIoError> {
        parse_mot(Cursor::new(text))
    }

    #[test]
    fn parses_full_and_short_rows() {
        let data = parse_str(
            "1,-1,10.00,20.00,30.00,40.00,0.95,2,0.80\n\
             2,-1,11.5,21.5,30,40,0.50\n",
        )
        .unwrap();
        assert!(!data.was_unsorted);
        assert_eq!(data.rows.len(), 2);
        let r = &data.rows[0];
        assert_eq!((r.frame, r.id, r.class_id), (1, -1, 2));
        assert_eq!(r.bbox.to_ltwh(), (10.0, 20.0, 30.0, 40.0));
        assert_eq!((r.score, r.visibility), (0.95, 0.8));
        let r = &data.rows[1];
        assert_eq!((r.class_id, r.visibility), (1, 1.0), "optional columns take defaults");
    }

    #[test]
    fn skips_blank_and_comment_lines() {
        let data = parse_str("\n# header\n1,1,0,0,5,5,1.0\n\n").unwrap();
        assert_eq!(data.rows.len(), 1);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = |text: &str| match parse_str(text).unwrap_err() {
            MotIoError::Parse { line, msg } => (line, msg),
            other => panic!("expected parse error, got {other:?}"),
        };
        let (line, msg) = err("1,1,0,0,5,5,1.0\n1,1,0,0,5,5\n");
        assert_eq!(line, 2);
        assert!(msg.contains("7 to 9"), "{msg}");
        let (line, msg) = err("1,1,0,0,5,5,1.0\n\n2,1,0,0,x,5,1.0\n");
        assert_eq!(line, 3);
        assert!(msg.contains("width"), "{msg}");
        let (line, _) = err("0,1,0,0,5,5,1.0\n");
        assert_eq!(line, 1);
        let (_, msg) = err("1,1,0,0,5,0,1.0\n");
        assert!(msg.contains("positive"), "{msg}");
        let (_, msg) = err("1,1,0,0,5,5,1.5\n");
        assert!(msg.contains("[0, 1]"), "{msg}");
        let (_, msg) = err("1,1,0,0,5,5,inf\n");
        assert!(msg.contains("finite"), "{msg}");
        let (_, msg) = err("1,1,0,0,5,5,0.9,1,-0.1\n");
        assert!(msg.contains("visibility"), "{msg}");
    }

    #[test]
    fn unsorted_frames_are_stably_resorted() {
        let data = parse_str(
            "2,7,0,0,5,5,1.0\n\
             1,1,0,0,5,5,1.0\n\
             2,3,0,0,5,5,1.0\n",
        )
        .unwrap();
        assert!(data.was_unsorted);
        let order: Vec<(u32, i64)> = data.rows.iter().map(|r| (r.frame, r.id)).collect();
        assert_eq!(order, vec![(1, 1), (2, 7), (2, 3)], "frame order restored, ties untouched");
    }

    #[test]
    fn formatting_is_two_decimal_and_kills_negative_zero() {
        let row = MotRow {
            frame: 3,
            id: -1,
            bbox: BBox::from_ltwh(-0.001, 1.005, 10.0, 20.5),
            score: 0.849,
            class_id: 1,
            visibility: 1.0,
        };
        // Note 1.005 in binary floating point sits just below 1.005.
        assert_eq!(format_row(&row), "3,-1,0.00,1.00,10.00,20.50,0.85,1,1.00");
    }

    #[test]
    fn file_round_trip_preserves_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("boxes.txt");
        let rows = vec![
            MotRow {
                frame: 1,
                id: 4,
                bbox: BBox::from_ltwh(10.25, 20.5, 30.75, 40.0),
                score: 0.75,
                class_id: 2,
                visibility: 0.5,
            },
            MotRow {
                frame: 2,
                id: 4,
                bbox: BBox::from_ltwh(11.0, 21.0, 30.75, 40.0),
                score: 1.0,
                class_id: 2,
                visibility: 1.0,
            },
        ];
        write_mot_file(&path, &rows).unwrap();
        let back = read_mot_file(&path).unwrap();
        assert_eq!(back.rows, rows);
        assert!(!path.with_extension("tmp").exists(), "temp file must be renamed away");
    }

    #[test]
    fn grouping_helpers_group_and_sort() {
        let data = parse_str(
            "1,-1,0,0,10,10,0.9\n\
             1,-1,50,50,10,10,0.4\n\
             3,-1,2,0,10,10,0.8\n",
        )
        .unwrap();
        let by_frame = detections_by_frame(&data.rows);
        assert_eq!(by_frame[&1].len(), 2);
        assert_eq!(by_frame[&3][0].score, 0.8);
        assert!(!by_frame.contains_key(&2));

        let gt = parse_str(
            "1,2,0,0,10,10,1.0\n\
             2,2,5,0,10,10,1.0\n\
             1,1,100,100,10,10,1.0\n",
        )
        .unwrap();
        let boxes = boxes_by_frame(&gt.rows);
        assert_eq!(boxes[&1].len(), 2);
        let trajs = trajectories(&gt.rows);
        assert_eq!(trajs.len(), 2);
        assert_eq!(trajs[0].0, 1);
        assert_eq!(trajs[1].0, 2);
        assert_eq!(trajs[1].1, vec![(1, 5.0, 5.0), (2, 10.0, 5.0)]);
    }
}
