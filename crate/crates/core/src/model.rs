//! Shared domain types: boxes, detections, tracks and sequence metadata.

use std::collections::VecDeque;

use nalgebra::Vector2;

use crate::vackf::FilterState;

/// Number of `(frame, position, velocity)` entries a track keeps. Group
/// compensation needs one previous frame, the trajectory predictor needs
/// eight consecutive ones; 30 gives slack for gaps without unbounded growth.
pub const HISTORY_CAP: usize = 30;

/// Axis-aligned box stored in center form: `(cx, cy)` is the box center in
/// pixels, `w`/`h` its width and height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    /// Builds a box from MOT-style `(left, top, width, height)`.
    pub fn from_ltwh(left: f64, top: f64, w: f64, h: f64) -> Self {
        Self { cx: left + w / 2.0, cy: top + h / 2.0, w, h }
    }

    /// Converts back to `(left, top, width, height)`.
    pub fn to_ltwh(&self) -> (f64, f64, f64, f64) {
        (self.cx - self.w / 2.0, self.cy - self.h / 2.0, self.w, self.h)
    }

    pub fn left(&self) -> f64 {
        self.cx - self.w / 2.0
    }

    pub fn top(&self) -> f64 {
        self.cy - self.h / 2.0
    }

    pub fn right(&self) -> f64 {
        self.cx + self.w / 2.0
    }

    pub fn bottom(&self) -> f64 {
        self.cy + self.h / 2.0
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> Vector2<f64> {
        Vector2::new(self.cx, self.cy)
    }

    /// Positive finite extent in both axes.
    pub fn is_valid(&self) -> bool {
        self.w > 0.0
            && self.h > 0.0
            && self.cx.is_finite()
            && self.cy.is_finite()
            && self.w.is_finite()
            && self.h.is_finite()
    }

    /// Intersection-over-union with `other`; 0 for disjoint or degenerate
    /// pairs, 1 for identical boxes.
    pub fn iou(&self, other: &BBox) -> f64 {
        iou(self, other)
    }
}

/// Intersection-over-union of two boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.right().min(b.right()) - a.left().max(b.left())).max(0.0);
    let iy = (a.bottom().min(b.bottom()) - a.top().max(b.top())).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    inter / union
}

/// A single detector output. `frame` is 1-based; `score` is the detector
/// confidence in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub frame: u32,
    pub bbox: BBox,
    pub score: f64,
    pub class_id: i32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackStatus {
    /// Spawned but not yet confirmed by enough consecutive matches.
    Tentative,
    /// Actively tracked; the only status that is emitted.
    Confirmed,
    /// Unmatched and uncompensated; waiting for re-detection.
    Lost,
    /// Dead; dropped from the tracker at the end of the frame.
    Removed,
}

/// Center position and velocity of a track at a given frame, in pixels and
/// pixels/frame. Recorded after every real or pseudo observation update, so
/// coasted frames leave gaps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryEntry {
    pub frame: u32,
    pub position: Vector2<f64>,
    pub velocity: Vector2<f64>,
}

#[derive(Debug, Clone)]
pub struct Track {
    pub id: u64,
    pub class_id: i32,
    pub status: TrackStatus,
    pub filter: FilterState,
    /// Most recent [`HISTORY_CAP`] update entries, strictly increasing by frame.
    pub history: VecDeque<HistoryEntry>,
    /// Frames since the last *real* detection update. Pseudo-observations keep
    /// a track alive but do not reset this counter.
    pub frames_since_update: u32,
    /// Number of detection matches accumulated so far.
    pub hits: u32,
}

impl Track {
    /// Spawns a tentative track from its first detection. The initial history
    /// entry carries the (zero) initial velocity estimate.
    pub fn new(id: u64, class_id: i32, filter: FilterState, frame: u32) -> Self {
        let entry = HistoryEntry {
            frame,
            position: filter.position(),
            velocity: filter.velocity(),
        };
        let mut history = VecDeque::with_capacity(HISTORY_CAP);
        history.push_back(entry);
        Self {
            id,
            class_id,
            status: TrackStatus::Tentative,
            filter,
            history,
            frames_since_update: 0,
            hits: 1,
        }
    }

    /// Appends an entry, evicting the oldest once the cap is reached.
    /// Frames must arrive in strictly increasing order.
    pub fn push_history(&mut self, entry: HistoryEntry) {
        if let Some(last) = self.history.back() {
            assert!(entry.frame > last.frame, "history frames must strictly increase");
        }
        if self.history.len() == HISTORY_CAP {
            self.history.pop_front();
        }
        self.history.push_back(entry);
    }

    /// Latest history entry strictly before `frame`, if any.
    pub fn entry_before(&self, frame: u32) -> Option<&HistoryEntry> {
        self.history.iter().rev().find(|e| e.frame < frame)
    }

    /// Positions of `len` consecutive frames ending exactly at `end_frame`.
    /// Returns `None` when the tail of the history does not form such a run.
    pub fn consecutive_positions(&self, end_frame: u32, len: usize) -> Option<Vec<Vector2<f64>>> {
        if len == 0 || self.history.len() < len {
            return None;
        }
        let tail: Vec<&HistoryEntry> = self.history.iter().rev().take(len).collect();
        if tail[0].frame != end_frame {
            return None;
        }
        for (k, e) in tail.iter().enumerate() {
            if e.frame != end_frame.checked_sub(k as u32)? {
                return None;
            }
        }
        Some(tail.iter().rev().map(|e| e.position).collect())
    }

    /// Current box estimate with width/height clamped to at least one pixel.
    pub fn bbox(&self) -> BBox {
        let b = self.filter.bbox();
        BBox { w: b.w.max(1.0), h: b.h.max(1.0), ..b }
    }
}

/// Static facts about a sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceMeta {
    pub image_width: u32,
    pub image_height: u32,
    pub frame_count: u32,
    pub frame_rate: f64,
}

impl SequenceMeta {
    pub fn validate(&self) -> Result<(), String> {
        if self.image_width == 0 || self.image_height == 0 {
            return Err("image dimensions must be positive".into());
        }
        if self.frame_count == 0 {
            return Err("frame count must be positive".into());
        }
        if !(self.frame_rate > 0.0) {
            return Err("frame rate must be positive".into());
        }
        Ok(())
    }
}
