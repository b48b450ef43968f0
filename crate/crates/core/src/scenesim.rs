//! Synthetic scene generator for group-structured tracking scenarios.
//!
//! Targets move in rigid convoy groups: members of a group share one box
//! size and one velocity and sit in a line along the heading, spaced 1.2
//! box-widths apart (close enough that adjacent members count as motion
//! neighbours, far enough that second neighbours do not). Groups bounce off
//! the image margins and occasionally ramp smoothly to a new velocity, so
//! per-frame acceleration stays bounded.
//!
//! The detector model misses targets entirely during the core of an
//! occlusion window, emits low-confidence boxes while they re-emerge, adds
//! zero-mean box noise, and sprinkles clutter. Ground truth continues
//! through occlusions with reduced visibility flags.
//!
//! Generation is fully determined by the seed. The RNG draw order — groups,
//! then occlusion windows, then per-frame dynamics and detector draws — is
//! part of the reproducibility contract.

use std::collections::BTreeMap;

use nalgebra::Vector2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::config::{parse_kv, parse_value, ConfigError};
use crate::metrics::FrameBoxes;
use crate::model::{BBox, Detection, SequenceMeta};

/// Inclusive frame span in which a target (or its whole group) is occluded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OcclusionWindow {
    /// 1-based target id.
    pub target: u64,
    pub start: u32,
    pub end: u32,
    /// Occlude every member of the target's group, not just the target.
    pub whole_group: bool,
}

impl OcclusionWindow {
    fn parse(entry: &str) -> Result<Self, ConfigError> {
        let bad = |msg: String| ConfigError::BadValue { key: "occlusion_windows".into(), msg };
        let parts: Vec<&str> = entry.split(':').collect();
        if !(3..=4).contains(&parts.len()) {
            return Err(bad(format!(
                "expected `target:start:end` or `target:start:end:group`, got `{entry}`"
            )));
        }
        let whole_group = match parts.get(3) {
            None => false,
            Some(&"group") => true,
            Some(other) => return Err(bad(format!("unknown window suffix `{other}`"))),
        };
        let num = |s: &str| {
            s.trim().parse::<u64>().map_err(|_| bad(format!("`{s}` is not a positive integer")))
        };
        let (target, start, end) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if start == 0 || end < start || end > u32::MAX as u64 {
            return Err(bad(format!("invalid span {start}..{end}")));
        }
        Ok(Self { target, start: start as u32, end: end as u32, whole_group })
    }

    fn render(&self) -> String {
        let mut s = format!("{}:{}:{}", self.target, self.start, self.end);
        if self.whole_group {
            s.push_str(":group");
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub n_groups: usize,
    pub targets_per_group: usize,
    pub frames: u32,
    pub image_width: u32,
    pub image_height: u32,
    /// Group speed range in pixels per frame.
    pub vel_min: f64,
    pub vel_max: f64,
    /// Per-frame, non-accumulating deviation of each member from the rigid
    /// group position.
    pub jitter_std: f64,
    /// Per-group per-frame probability of starting a velocity ramp.
    pub accel_event_prob: f64,
    /// Maximum per-frame velocity change during a ramp.
    pub accel_event_mag: f64,
    /// Probability that a ramp also changes heading, not just speed.
    pub turn_prob: f64,
    /// Per-target per-frame clutter probability (expected clutter per frame
    /// is this times the target count).
    pub fp_rate: f64,
    /// Probability that a visible target is detected with low confidence.
    pub lowconf_rate: f64,
    pub bbox_noise_std: f64,
    pub conf_hi_mean: f64,
    pub conf_hi_std: f64,
    pub conf_lo_mean: f64,
    pub conf_lo_std: f64,
    pub target_w_min: f64,
    pub target_w_max: f64,
    pub target_h_min: f64,
    pub target_h_max: f64,
    /// Fraction of targets that receive an auto-generated occlusion window
    /// (ignored when explicit windows are given).
    pub occlusion_fraction: f64,
    /// Probability that an auto-generated window hides the whole group.
    pub group_occlusion_prob: f64,
    /// Probability that an auto-generated window comes with a group maneuver
    /// pinned to it (a turn during the weak-detection tail, or a speed
    /// change entering the blackout).
    pub window_event_prob: f64,
    pub occlusion_windows: Vec<OcclusionWindow>,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_groups: 3,
            targets_per_group: 5,
            frames: 300,
            image_width: 1000,
            image_height: 1000,
            vel_min: 3.0,
            vel_max: 6.0,
            jitter_std: 0.3,
            accel_event_prob: 0.02,
            accel_event_mag: 0.2,
            turn_prob: 0.35,
            fp_rate: 0.1,
            lowconf_rate: 0.08,
            bbox_noise_std: 0.5,
            conf_hi_mean: 0.85,
            conf_hi_std: 0.08,
            conf_lo_mean: 0.3,
            conf_lo_std: 0.1,
            target_w_min: 24.0,
            target_w_max: 40.0,
            target_h_min: 24.0,
            target_h_max: 40.0,
            occlusion_fraction: 0.15,
            group_occlusion_prob: 0.45,
            window_event_prob: 0.9,
            occlusion_windows: Vec::new(),
            seed: 7,
        }
    }
}

/// Margin kept between group member centers and the image border.
const MARGIN: f64 = 40.0;
/// Spacing between convoy members, in box widths.
const SPACING_WIDTHS: f64 = 1.2;
/// Fraction of clutter boxes drawn from the high-confidence distribution.
const CLUTTER_HI_RATE: f64 = 0.25;
/// Frames over which a scheduled tail turn ramps to its new heading.
const TURN_RAMP_FRAMES: u32 = 7;
/// Frames over which a scheduled entry speed change ramps, and how many of
/// them run before the occlusion window opens (the rest continue unseen).
const ENTRY_RAMP_FRAMES: u32 = 8;
const ENTRY_RAMP_LEAD: u32 = 4;
/// Magnitude range, in radians, of a scheduled tail turn.
const TAIL_TURN_MIN: f64 = 1.0;
const TAIL_TURN_MAX: f64 = 1.5;

impl SceneConfig {
    pub fn total_targets(&self) -> usize {
        self.n_groups * self.targets_per_group
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        if self.n_groups == 0 || self.targets_per_group == 0 {
            return bad("need at least one group with one target".into());
        }
        if self.frames < 9 {
            return bad(format!("frames must be at least 9, got {}", self.frames));
        }
        for (name, v) in [
            ("accel_event_prob", self.accel_event_prob),
            ("turn_prob", self.turn_prob),
            ("fp_rate", self.fp_rate),
            ("lowconf_rate", self.lowconf_rate),
            ("conf_hi_mean", self.conf_hi_mean),
            ("conf_lo_mean", self.conf_lo_mean),
            ("occlusion_fraction", self.occlusion_fraction),
            ("group_occlusion_prob", self.group_occlusion_prob),
            ("window_event_prob", self.window_event_prob),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        for (name, v) in [
            ("jitter_std", self.jitter_std),
            ("bbox_noise_std", self.bbox_noise_std),
            ("conf_hi_std", self.conf_hi_std),
            ("conf_lo_std", self.conf_lo_std),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if !(0.0 <= self.vel_min && self.vel_min <= self.vel_max && self.vel_max <= 20.0) {
            return bad(format!(
                "need 0 <= vel_min <= vel_max <= 20, got {}..{}",
                self.vel_min, self.vel_max
            ));
        }
        if !(self.accel_event_mag > 0.0 && self.accel_event_mag <= 5.0) {
            return bad(format!("accel_event_mag must be in (0, 5], got {}", self.accel_event_mag));
        }
        if !(2.0 <= self.target_w_min
            && self.target_w_min <= self.target_w_max
            && self.target_w_max <= 200.0
            && 2.0 <= self.target_h_min
            && self.target_h_min <= self.target_h_max
            && self.target_h_max <= 200.0)
        {
            return bad("target sizes must satisfy 2 <= min <= max <= 200".into());
        }
        // The longest possible convoy line must fit between the margins.
        let extent = SPACING_WIDTHS * self.target_w_max * (self.targets_per_group - 1) as f64;
        let room = (self.image_width.min(self.image_height) as f64) - 2.0 * MARGIN;
        if extent >= room {
            return bad(format!(
                "a group line of {} targets ({extent:.0}px) does not fit in the image",
                self.targets_per_group
            ));
        }
        if self.occlusion_windows.is_empty() && self.occlusion_fraction > 0.0 && self.frames < 60 {
            return bad("auto-generated occlusions need at least 60 frames".into());
        }
        for w in &self.occlusion_windows {
            if w.target == 0 || w.target > self.total_targets() as u64 {
                return bad(format!("occlusion window target {} out of range", w.target));
            }
            if w.end > self.frames {
                return bad(format!("occlusion window {}..{} exceeds frames", w.start, w.end));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen: Vec<String> = Vec::new();
        for (line, key, value) in parse_kv(text)? {
            if seen.contains(&key) {
                return Err(ConfigError::DuplicateKey { line, key });
            }
            seen.push(key.clone());
            let k = key.as_str();
            match k {
                "n_groups" => cfg.n_groups = parse_value(k, &value)?,
                "targets_per_group" => cfg.targets_per_group = parse_value(k, &value)?,
                "frames" => cfg.frames = parse_value(k, &value)?,
                "image_width" => cfg.image_width = parse_value(k, &value)?,
                "image_height" => cfg.image_height = parse_value(k, &value)?,
                "vel_min" => cfg.vel_min = parse_value(k, &value)?,
                "vel_max" => cfg.vel_max = parse_value(k, &value)?,
                "jitter_std" => cfg.jitter_std = parse_value(k, &value)?,
                "accel_event_prob" => cfg.accel_event_prob = parse_value(k, &value)?,
                "accel_event_mag" => cfg.accel_event_mag = parse_value(k, &value)?,
                "turn_prob" => cfg.turn_prob = parse_value(k, &value)?,
                "fp_rate" => cfg.fp_rate = parse_value(k, &value)?,
                "lowconf_rate" => cfg.lowconf_rate = parse_value(k, &value)?,
                "bbox_noise_std" => cfg.bbox_noise_std = parse_value(k, &value)?,
                "conf_hi_mean" => cfg.conf_hi_mean = parse_value(k, &value)?,
                "conf_hi_std" => cfg.conf_hi_std = parse_value(k, &value)?,
                "conf_lo_mean" => cfg.conf_lo_mean = parse_value(k, &value)?,
                "conf_lo_std" => cfg.conf_lo_std = parse_value(k, &value)?,
                "target_w_min" => cfg.target_w_min = parse_value(k, &value)?,
                "target_w_max" => cfg.target_w_max = parse_value(k, &value)?,
                "target_h_min" => cfg.target_h_min = parse_value(k, &value)?,
                "target_h_max" => cfg.target_h_max = parse_value(k, &value)?,
                "occlusion_fraction" => cfg.occlusion_fraction = parse_value(k, &value)?,
                "group_occlusion_prob" => cfg.group_occlusion_prob = parse_value(k, &value)?,
                "window_event_prob" => cfg.window_event_prob = parse_value(k, &value)?,
                "occlusion_windows" => {
                    cfg.occlusion_windows = value
                        .split(';')
                        .filter(|e| !e.trim().is_empty())
                        .map(|e| OcclusionWindow::parse(e.trim()))
                        .collect::<Result<_, _>>()?;
                }
                "seed" => cfg.seed = parse_value(k, &value)?,
                _ => return Err(ConfigError::UnknownKey { line, key }),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn render(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::new();
        writeln!(s, "n_groups = {}", self.n_groups).unwrap();
        writeln!(s, "targets_per_group = {}", self.targets_per_group).unwrap();
        writeln!(s, "frames = {}", self.frames).unwrap();
        writeln!(s, "image_width = {}", self.image_width).unwrap();
        writeln!(s, "image_height = {}", self.image_height).unwrap();
        writeln!(s, "vel_min = {}", self.vel_min).unwrap();
        writeln!(s, "vel_max = {}", self.vel_max).unwrap();
        writeln!(s, "jitter_std = {}", self.jitter_std).unwrap();
        writeln!(s, "accel_event_prob = {}", self.accel_event_prob).unwrap();
        writeln!(s, "accel_event_mag = {}", self.accel_event_mag).unwrap();
        writeln!(s, "turn_prob = {}", self.turn_prob).unwrap();
        writeln!(s, "fp_rate = {}", self.fp_rate).unwrap();
        writeln!(s, "lowconf_rate = {}", self.lowconf_rate).unwrap();
        writeln!(s, "bbox_noise_std = {}", self.bbox_noise_std).unwrap();
        writeln!(s, "conf_hi_mean = {}", self.conf_hi_mean).unwrap();
        writeln!(s, "conf_hi_std = {}", self.conf_hi_std).unwrap();
        writeln!(s, "conf_lo_mean = {}", self.conf_lo_mean).unwrap();
        writeln!(s, "conf_lo_std = {}", self.conf_lo_std).unwrap();
        writeln!(s, "target_w_min = {}", self.target_w_min).unwrap();
        writeln!(s, "target_w_max = {}", self.target_w_max).unwrap();
        writeln!(s, "target_h_min = {}", self.target_h_min).unwrap();
        writeln!(s, "target_h_max = {}", self.target_h_max).unwrap();
        writeln!(s, "occlusion_fraction = {}", self.occlusion_fraction).unwrap();
        writeln!(s, "group_occlusion_prob = {}", self.group_occlusion_prob).unwrap();
        writeln!(s, "window_event_prob = {}", self.window_event_prob).unwrap();
        if !self.occlusion_windows.is_empty() {
            let entries: Vec<String> =
                self.occlusion_windows.iter().map(OcclusionWindow::render).collect();
            writeln!(s, "occlusion_windows = {}", entries.join(";")).unwrap();
        }
        writeln!(s, "seed = {}", self.seed).unwrap();
        s
    }
}

/// A generated scene: continuous ground truth plus the noisy detector view.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneData {
    pub meta: SequenceMeta,
    /// `(frame, id, box, visibility)`; ids are 1-based and contiguous, and
    /// every target appears in every frame.
    pub gt: Vec<(u32, u64, BBox, f64)>,
    pub dets: Vec<Detection>,
    /// The occlusion windows actually in effect.
    pub windows: Vec<OcclusionWindow>,
}

pub fn gt_frame_boxes(scene: &SceneData) -> FrameBoxes {
    let mut out = FrameBoxes::new();
    for &(frame, id, bbox, _) in &scene.gt {
        out.entry(frame).or_default().push((id as i64, bbox));
    }
    out
}

pub fn detections_map(scene: &SceneData) -> BTreeMap<u32, Vec<Detection>> {
    let mut out: BTreeMap<u32, Vec<Detection>> = BTreeMap::new();
    for d in &scene.dets {
        out.entry(d.frame).or_default().push(d.clone());
    }
    out
}

/// Ground-truth center trajectories, for training the trajectory predictor.
pub fn gt_trajectories(scene: &SceneData) -> Vec<(i64, Vec<(u32, f64, f64)>)> {
    let mut map: BTreeMap<i64, Vec<(u32, f64, f64)>> = BTreeMap::new();
    for &(frame, id, bbox, _) in &scene.gt {
        map.entry(id as i64).or_default().push((frame, bbox.cx, bbox.cy));
    }
    map.into_iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Visible,
    Hidden,
    Reemerging,
}

/// Last frames of a window in which the detector produces low-confidence
/// boxes instead of nothing. Half the window, capped: long enough that a
/// track barred from the low-confidence association round pays a visible
/// price for sitting it out.
fn reemergence_tail(len: u32) -> u32 {
    if len <= 1 {
        0
    } else {
        (len / 2).clamp(1, 12).min(len - 1)
    }
}

/// A group maneuver pinned to an occlusion window rather than rolled per
/// frame. `TailTurn` fires at the start of the low-confidence tail — the
/// turn is only observable through the weak detections. `EntrySpeed` starts
/// shortly before the window so the acceleration is partially observed and
/// then continues into the blackout.
enum ScheduledEvent {
    TailTurn { angle: f64 },
    EntrySpeed,
}

struct VelocityRamp {
    step: Vector2<f64>,
    remaining: u32,
}

struct GroupState {
    /// Global 0-based target indices of the members.
    members: Vec<usize>,
    size: (f64, f64),
    positions: Vec<Vector2<f64>>,
    vel: Vector2<f64>,
    ramp: Option<VelocityRamp>,
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

pub fn generate(cfg: &SceneConfig) -> Result<SceneData, ConfigError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let total = cfg.total_targets();
    let (w_img, h_img) = (cfg.image_width as f64, cfg.image_height as f64);
    let dist = |std: f64| Normal::new(0.0, std).expect("validated std");
    let jitter_n = dist(cfg.jitter_std);
    let noise_n = dist(cfg.bbox_noise_std);
    let conf_hi = Normal::new(cfg.conf_hi_mean, cfg.conf_hi_std).expect("validated std");
    let conf_lo = Normal::new(cfg.conf_lo_mean, cfg.conf_lo_std).expect("validated std");
    let turn_n = dist(0.6);

    // Groups: heading, speed, one shared size, then an anchor that keeps the
    // whole convoy line inside the margins.
    let mut groups: Vec<GroupState> = Vec::with_capacity(cfg.n_groups);
    for g in 0..cfg.n_groups {
        let heading = rng.random_range(0.0..std::f64::consts::TAU);
        let speed = uniform(&mut rng, cfg.vel_min, cfg.vel_max);
        let w = uniform(&mut rng, cfg.target_w_min, cfg.target_w_max);
        let h = uniform(&mut rng, cfg.target_h_min, cfg.target_h_max);
        let dir = Vector2::new(heading.cos(), heading.sin());
        let spacing = SPACING_WIDTHS * w;
        let m = cfg.targets_per_group;
        let half = (m as f64 - 1.0) / 2.0;
        let ext_x = (dir.x * spacing).abs() * (m as f64 - 1.0);
        let ext_y = (dir.y * spacing).abs() * (m as f64 - 1.0);
        let ax = uniform(&mut rng, MARGIN + ext_x / 2.0, w_img - MARGIN - ext_x / 2.0);
        let ay = uniform(&mut rng, MARGIN + ext_y / 2.0, h_img - MARGIN - ext_y / 2.0);
        let anchor = Vector2::new(ax, ay);
        let positions: Vec<Vector2<f64>> =
            (0..m).map(|k| anchor + dir * spacing * (k as f64 - half)).collect();
        groups.push(GroupState {
            members: (g * m..(g + 1) * m).collect(),
            size: (w, h),
            positions,
            vel: dir * speed,
            ramp: None,
        });
    }
    let group_of = |target: usize| target / cfg.targets_per_group;

    // Occlusion windows: explicit ones win; otherwise hide a fraction of
    // targets, sometimes whole groups. Auto windows may also pin a maneuver
    // to the window; explicit windows never do. All per-window draws happen
    // whether or not the event roll succeeds, so the stream stays aligned
    // across probability settings.
    let mut scheduled: Vec<(u32, usize, ScheduledEvent)> = Vec::new();
    let windows: Vec<OcclusionWindow> = if !cfg.occlusion_windows.is_empty() {
        cfg.occlusion_windows.clone()
    } else if cfg.occlusion_fraction > 0.0 {
        let count = ((cfg.occlusion_fraction * total as f64).ceil() as usize).min(total);
        let mut order: Vec<usize> = (0..total).collect();
        order.shuffle(&mut rng);
        let mut out = Vec::with_capacity(count);
        for &target in order.iter().take(count) {
            let len = rng.random_range(16..=24u32);
            let start = rng.random_range(15..=cfg.frames - len - 10);
            let whole_group = rng.random_range(0.0..1.0) < cfg.group_occlusion_prob;
            let event_roll = rng.random_range(0.0..1.0);
            let type_roll = rng.random_range(0.0..1.0);
            let magnitude = uniform(&mut rng, TAIL_TURN_MIN, TAIL_TURN_MAX);
            let sign = if rng.random_range(0.0..1.0) < 0.5 { 1.0 } else { -1.0 };
            let end = start + len - 1;
            if event_roll < cfg.window_event_prob {
                let group = group_of(target);
                let event = if type_roll < 0.65 {
                    let fire = end - reemergence_tail(len) + 1;
                    (fire, group, ScheduledEvent::TailTurn { angle: sign * magnitude })
                } else {
                    (start.saturating_sub(ENTRY_RAMP_LEAD).max(1), group, ScheduledEvent::EntrySpeed)
                };
                scheduled.push(event);
            }
            out.push(OcclusionWindow { target: target as u64 + 1, start, end, whole_group });
        }
        out.sort_by_key(|w| (w.start, w.target));
        out
    } else {
        Vec::new()
    };

    let mut phases = vec![vec![Phase::Visible; cfg.frames as usize + 1]; total];
    for w in &windows {
        let first = (w.target - 1) as usize;
        let affected: Vec<usize> = if w.whole_group {
            groups[group_of(first)].members.clone()
        } else {
            vec![first]
        };
        let tail = reemergence_tail(w.end - w.start + 1);
        for f in w.start..=w.end {
            let phase = if f > w.end - tail { Phase::Reemerging } else { Phase::Hidden };
            for &t in &affected {
                phases[t][f as usize] = phase;
            }
        }
    }

    let mut gt = Vec::with_capacity(total * cfg.frames as usize);
    let mut dets = Vec::new();
    for frame in 1..=cfg.frames {
        // Dynamics: scheduled maneuvers, ramp bookkeeping, then margin
        // bounce, then advance. A scheduled event replaces any ramp already
        // in flight; its first step applies on the fire frame.
        for (gi, group) in groups.iter_mut().enumerate() {
            for (fire, g, event) in &scheduled {
                if *fire != frame || *g != gi {
                    continue;
                }
                let target = match event {
                    ScheduledEvent::TailTurn { angle } => {
                        let heading = group.vel.y.atan2(group.vel.x) + angle;
                        Vector2::new(heading.cos(), heading.sin()) * group.vel.norm()
                    }
                    ScheduledEvent::EntrySpeed => {
                        let speed = group.vel.norm();
                        let far = if speed >= 0.5 * (cfg.vel_min + cfg.vel_max) {
                            cfg.vel_min
                        } else {
                            cfg.vel_max
                        };
                        if speed > 1e-9 {
                            group.vel * (far / speed)
                        } else {
                            Vector2::new(far, 0.0)
                        }
                    }
                };
                let frames = match event {
                    ScheduledEvent::TailTurn { .. } => TURN_RAMP_FRAMES,
                    ScheduledEvent::EntrySpeed => ENTRY_RAMP_FRAMES,
                };
                group.ramp = Some(VelocityRamp {
                    step: (target - group.vel) / frames as f64,
                    remaining: frames,
                });
            }
            match &mut group.ramp {
                Some(ramp) => {
                    group.vel += ramp.step;
                    ramp.remaining -= 1;
                    if ramp.remaining == 0 {
                        group.ramp = None;
                    }
                }
                None => {
                    if rng.random_range(0.0..1.0) < cfg.accel_event_prob {
                        let new_speed = uniform(&mut rng, cfg.vel_min, cfg.vel_max);
                        let turn_roll = rng.random_range(0.0..1.0);
                        let turn_angle = rng.sample(turn_n);
                        let mut heading = group.vel.y.atan2(group.vel.x);
                        if turn_roll < cfg.turn_prob {
                            heading += turn_angle;
                        }
                        let target = Vector2::new(heading.cos(), heading.sin()) * new_speed;
                        let dv: Vector2<f64> = target - group.vel;
                        let frames_needed =
                            (dv.norm() / cfg.accel_event_mag).ceil().max(1.0) as u32;
                        group.ramp = Some(VelocityRamp {
                            step: dv / frames_needed as f64,
                            remaining: frames_needed,
                        });
                    }
                }
            }
            let xs: Vec<f64> = group.positions.iter().map(|p| p.x).collect();
            let ys: Vec<f64> = group.positions.iter().map(|p| p.y).collect();
            let min = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = |v: &[f64]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let flip_x = (min(&xs) <= MARGIN && group.vel.x < 0.0)
                || (max(&xs) >= w_img - MARGIN && group.vel.x > 0.0);
            let flip_y = (min(&ys) <= MARGIN && group.vel.y < 0.0)
                || (max(&ys) >= h_img - MARGIN && group.vel.y > 0.0);
            if flip_x {
                group.vel.x = -group.vel.x;
                if let Some(ramp) = &mut group.ramp {
                    ramp.step.x = -ramp.step.x;
                }
            }
            if flip_y {
                group.vel.y = -group.vel.y;
                if let Some(ramp) = &mut group.ramp {
                    ramp.step.y = -ramp.step.y;
                }
            }
            for p in &mut group.positions {
                *p += group.vel;
            }
        }

        // Ground truth: rigid position plus fresh jitter, every frame.
        let mut centers = vec![Vector2::zeros(); total];
        for group in &groups {
            for (k, &t) in group.members.iter().enumerate() {
                let jx = rng.sample(jitter_n);
                let jy = rng.sample(jitter_n);
                centers[t] = group.positions[k] + Vector2::new(jx, jy);
            }
        }
        for t in 0..total {
            let (w, h) = groups[group_of(t)].size;
            let visibility = match phases[t][frame as usize] {
                Phase::Visible => 1.0,
                Phase::Reemerging => 0.3,
                Phase::Hidden => 0.0,
            };
            gt.push((frame, t as u64 + 1, BBox::new(centers[t].x, centers[t].y, w, h), visibility));
        }

        // Detector: per-target boxes, then clutter.
        for t in 0..total {
            let (w, h) = groups[group_of(t)].size;
            let score = match phases[t][frame as usize] {
                Phase::Hidden => continue,
                Phase::Reemerging => rng.sample(conf_lo).clamp(0.05, 0.55),
                Phase::Visible => {
                    if rng.random_range(0.0..1.0) < cfg.lowconf_rate {
                        rng.sample(conf_lo).clamp(0.05, 0.55)
                    } else {
                        rng.sample(conf_hi).clamp(0.0, 1.0)
                    }
                }
            };
            let bbox = BBox::new(
                centers[t].x + rng.sample(noise_n),
                centers[t].y + rng.sample(noise_n),
                (w + rng.sample(noise_n)).max(2.0),
                (h + rng.sample(noise_n)).max(2.0),
            );
            dets.push(Detection { frame, bbox, score, class_id: 1 });
        }
        for _ in 0..total {
            if rng.random_range(0.0..1.0) >= cfg.fp_rate {
                continue;
            }
            let bbox = BBox::new(
                rng.random_range(0.0..w_img),
                rng.random_range(0.0..h_img),
                uniform(&mut rng, cfg.target_w_min, cfg.target_w_max),
                uniform(&mut rng, cfg.target_h_min, cfg.target_h_max),
            );
            let score = if rng.random_range(0.0..1.0) < CLUTTER_HI_RATE {
                rng.sample(conf_hi).clamp(0.0, 1.0)
            } else {
                rng.sample(conf_lo).clamp(0.05, 0.55)
            };
            dets.push(Detection { frame, bbox, score, class_id: 1 });
        }
    }

    Ok(SceneData {
        meta: SequenceMeta {
            image_width: cfg.image_width,
            image_height: cfg.image_height,
            frame_count: cfg.frames,
            frame_rate: 30.0,
        },
        gt,
        dets,
        windows,
    })
}
