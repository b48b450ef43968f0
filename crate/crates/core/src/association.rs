//! Detection–track association and the tracker state machine.
//!
//! Each frame runs a confidence-split cascade: high-confidence detections are
//! matched to active and lost tracks first, the leftover active tracks get a
//! second chance against low-confidence detections, and unconfirmed tracks
//! are matched last. Tracks that still end up empty-handed are handed to the
//! group-motion and trajectory-prediction stages for a synthesised
//! observation before they are allowed to go lost.
//!
//! Matching itself is a minimum-cost assignment on `1 − IoU`. The solver
//! returns the lexicographically smallest optimal assignment so results are
//! identical across platforms even when costs tie.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::gmcs;
use crate::model::{BBox, Detection, HistoryEntry, SequenceMeta, Track, TrackStatus};
use crate::stmp::{self, CascadeNet};
use crate::vackf::{self, FilterState, NoiseConfig};

/// Cost placed on forbidden pairs (gated out or class mismatch). Any
/// assignment edge at or above half this value is treated as "unmatched".
pub const FORBIDDEN_COST: f64 = 1e6;

#[derive(Debug, Error, PartialEq)]
pub enum TrackError {
    #[error("frames must be strictly increasing: got {got} after {last}")]
    FrameOrder { got: u32, last: u32 },
    #[error("invalid tracker config: {0}")]
    InvalidConfig(String),
}

/// Association thresholds and track lifecycle knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssocConfig {
    /// Detections scoring at least this go to the first association round.
    pub tau_high: f64,
    /// Detections scoring in `[tau_low, tau_high)` go to the second round;
    /// anything below is discarded.
    pub tau_low: f64,
    /// Minimum IoU for a first-round (and unconfirmed-round) pair.
    pub iou_gate_first: f64,
    /// Minimum IoU for a second-round pair.
    pub iou_gate_second: f64,
    /// Frames a track may go without any update before it is dropped.
    pub track_buffer: u32,
    /// Consecutive-ish hits required before a track is reported.
    pub min_hits: u32,
    /// Neighbour similarity threshold for group motion compensation.
    pub gmcs_sim_threshold: f64,
}

impl Default for AssocConfig {
    fn default() -> Self {
        Self {
            tau_high: 0.6,
            tau_low: 0.1,
            iou_gate_first: 0.2,
            iou_gate_second: 0.5,
            track_buffer: 30,
            min_hits: 3,
            gmcs_sim_threshold: 0.5,
        }
    }
}

impl AssocConfig {
    pub fn validate(&self) -> Result<(), TrackError> {
        let bad = |msg: String| Err(TrackError::InvalidConfig(msg));
        if !(0.0..=1.0).contains(&self.tau_low)
            || !(0.0..=1.0).contains(&self.tau_high)
            || self.tau_low >= self.tau_high
        {
            return bad(format!(
                "need 0 <= tau_low < tau_high <= 1, got {} and {}",
                self.tau_low, self.tau_high
            ));
        }
        for (name, g) in
            [("iou_gate_first", self.iou_gate_first), ("iou_gate_second", self.iou_gate_second)]
        {
            if !(0.0..=1.0).contains(&g) {
                return bad(format!("{name} must be in [0, 1], got {g}"));
            }
        }
        if self.track_buffer == 0 {
            return bad("track_buffer must be at least 1".into());
        }
        if self.min_hits == 0 {
            return bad("min_hits must be at least 1".into());
        }
        if !self.gmcs_sim_threshold.is_finite() || self.gmcs_sim_threshold < 0.0 {
            return bad(format!(
                "gmcs_sim_threshold must be finite and non-negative, got {}",
                self.gmcs_sim_threshold
            ));
        }
        Ok(())
    }
}

/// Which estimation stages are active. Defaults to everything on; the
/// baseline configuration (all off) degrades to a plain linear-KF tracker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureFlags {
    /// Adaptive cubature filter; off means closed-form linear KF.
    pub vackf: bool,
    /// Group motion compensation for occluded tracks.
    pub gmcs: bool,
    /// Learned trajectory prediction fallback for lone occluded tracks.
    pub stmp: bool,
}

impl Default for FeatureFlags {
    fn default() -> Self {
        Self { vackf: true, gmcs: true, stmp: true }
    }
}

/// A minimum-cost assignment. `row_to_col[i]` is `None` when row `i` is left
/// unmatched (possible only on rectangular inputs); `cost` sums the matched
/// entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub row_to_col: Vec<Option<usize>>,
    pub cost: f64,
}

/// Jonker–Volgenant shortest augmenting path solver on a square matrix.
/// Returns the row→column assignment and the dual potentials (1-based, index
/// 0 unused for `u` and holding the virtual column for `v`).
fn solve_square(c: &DMatrix<f64>) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = c.nrows();
    debug_assert_eq!(n, c.ncols());
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = c[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    (row_to_col, u, v)
}

fn assignment_cost(c: &DMatrix<f64>, assign: &[usize]) -> f64 {
    assign.iter().enumerate().map(|(i, &j)| c[(i, j)]).sum()
}

/// Rebuilds the assignment as the lexicographically smallest optimal one
/// (rows in order, each taking the smallest column that still allows an
/// optimal completion). Candidate columns are pruned through the dual
/// potentials: an edge with positive reduced cost can never sit in an
/// optimal assignment, so only tight edges are probed with a sub-solve.
fn lexicographic_refine(
    c: &DMatrix<f64>,
    best_cost: f64,
    u: &[f64],
    v: &[f64],
) -> Vec<usize> {
    let n = c.nrows();
    let tol = 1e-9 * best_cost.abs().max(1.0);
    let mut chosen = Vec::with_capacity(n);
    let mut used = vec![false; n];
    let mut fixed_cost = 0.0;
    for i in 0..n {
        let mut pick = None;
        for j in 0..n {
            if used[j] || c[(i, j)] - u[i + 1] - v[j + 1] > tol {
                continue;
            }
            let free: Vec<usize> = (0..n).filter(|&jj| !used[jj] && jj != j).collect();
            let sub_cost = if free.is_empty() {
                0.0
            } else {
                let sub =
                    DMatrix::from_fn(free.len(), free.len(), |r, cc| c[(i + 1 + r, free[cc])]);
                let (sub_assign, _, _) = solve_square(&sub);
                assignment_cost(&sub, &sub_assign)
            };
            if fixed_cost + c[(i, j)] + sub_cost <= best_cost + tol {
                pick = Some(j);
                break;
            }
        }
        let j = pick.expect("every row of an optimal assignment has a feasible column");
        chosen.push(j);
        used[j] = true;
        fixed_cost += c[(i, j)];
    }
    chosen
}

/// Minimum-cost assignment of rows to columns. Rectangular inputs are padded
/// to square with zero-cost dummy entries, so surplus rows come back
/// unmatched. Ties are broken toward the lexicographically smallest
/// row→column vector.
pub fn hungarian(cost: &DMatrix<f64>) -> Assignment {
    let (rows, cols) = (cost.nrows(), cost.ncols());
    if rows == 0 || cols == 0 {
        return Assignment { row_to_col: vec![None; rows], cost: 0.0 };
    }
    let n = rows.max(cols);
    let padded = DMatrix::from_fn(n, n, |i, j| if i < rows && j < cols { cost[(i, j)] } else { 0.0 });
    let (raw, u, v) = solve_square(&padded);
    let refined = lexicographic_refine(&padded, assignment_cost(&padded, &raw), &u, &v);
    let mut out = Vec::with_capacity(rows);
    let mut cost_sum = 0.0;
    for (i, &j) in refined.iter().take(rows).enumerate() {
        if j < cols {
            cost_sum += cost[(i, j)];
            out.push(Some(j));
        } else {
            out.push(None);
        }
    }
    Assignment { row_to_col: out, cost: cost_sum }
}

/// Splits detections into the high-confidence first-round pool and the
/// low-confidence second-round pool; anything under `tau_low` is dropped.
pub fn split_detections(
    dets: &[Detection],
    tau_high: f64,
    tau_low: f64,
) -> (Vec<Detection>, Vec<Detection>) {
    let mut high = Vec::new();
    let mut low = Vec::new();
    for d in dets {
        if d.score >= tau_high {
            high.push(d.clone());
        } else if d.score >= tau_low {
            low.push(d.clone());
        }
    }
    (high, low)
}

/// IoU-gated assignment between predicted track boxes and detections.
/// Returns `(track index, detection index)` pairs, sorted by track index.
/// Pairs with IoU below `iou_gate` or differing class are never matched.
pub fn associate(tracks: &[&Track], dets: &[Detection], iou_gate: f64) -> Vec<(usize, usize)> {
    if tracks.is_empty() || dets.is_empty() {
        return Vec::new();
    }
    let cost = DMatrix::from_fn(tracks.len(), dets.len(), |ti, di| {
        let t = tracks[ti];
        let d = &dets[di];
        if t.class_id != d.class_id {
            return FORBIDDEN_COST;
        }
        let overlap = t.bbox().iou(&d.bbox);
        if overlap < iou_gate {
            FORBIDDEN_COST
        } else {
            1.0 - overlap
        }
    });
    let assignment = hungarian(&cost);
    assignment
        .row_to_col
        .iter()
        .enumerate()
        .filter_map(|(ti, dj)| {
            dj.filter(|&j| cost[(ti, j)] < FORBIDDEN_COST / 2.0).map(|j| (ti, j))
        })
        .collect()
}

/// One reported box of one confirmed track.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackOutput {
    pub frame: u32,
    pub id: u64,
    pub bbox: BBox,
    pub class_id: i32,
}

/// The full per-frame tracker. Feed frames in strictly increasing order via
/// [`Tracker::step`]; it returns the confirmed boxes for that frame.
pub struct Tracker {
    pub config: AssocConfig,
    pub noise: NoiseConfig,
    pub flags: FeatureFlags,
    pub meta: SequenceMeta,
    tracks: Vec<Track>,
    next_id: u64,
    last_frame: Option<u32>,
    predictor: Option<CascadeNet>,
}

impl Tracker {
    pub fn new(
        config: AssocConfig,
        noise: NoiseConfig,
        flags: FeatureFlags,
        meta: SequenceMeta,
    ) -> Result<Self, TrackError> {
        config.validate()?;
        meta.validate().map_err(TrackError::InvalidConfig)?;
        Ok(Self {
            config,
            noise,
            flags,
            meta,
            tracks: Vec::new(),
            next_id: 1,
            last_frame: None,
            predictor: None,
        })
    }

    /// Installs the trained trajectory predictor used when group motion
    /// compensation is unavailable. Without one, lone occluded tracks coast.
    pub fn set_predictor(&mut self, net: CascadeNet) {
        self.predictor = Some(net);
    }

    pub fn active_tracks(&self) -> &[Track] {
        &self.tracks
    }

    fn predict_all(&mut self, dt: f64) {
        for t in &mut self.tracks {
            if self.flags.vackf {
                match vackf::predict(&t.filter, dt, &self.noise) {
                    Ok(next) => t.filter = next,
                    // A filter whose covariance collapsed is unrecoverable.
                    Err(_) => t.status = TrackStatus::Removed,
                }
            } else {
                t.filter = vackf::predict_linear(&t.filter, dt, &self.noise);
            }
        }
        self.tracks.retain(|t| t.status != TrackStatus::Removed);
    }

    /// Applies a real or synthesised observation to a track. Real updates
    /// reset the staleness counter and count toward confirmation; synthesised
    /// ones keep the track alive without resetting staleness, so a track can
    /// not survive on synthesised observations forever.
    fn apply_update(&mut self, idx: usize, z: &BBox, frame: u32, real: bool) -> bool {
        let t = &mut self.tracks[idx];
        let updated = if self.flags.vackf {
            vackf::update(&t.filter, z, &self.noise)
        } else {
            vackf::update_linear(&t.filter, z, &self.noise)
        };
        match updated {
            Ok(next) => t.filter = next,
            Err(_) => {
                t.status = TrackStatus::Removed;
                return false;
            }
        }
        if real {
            t.hits += 1;
            t.frames_since_update = 0;
            t.status = if t.hits >= self.config.min_hits {
                TrackStatus::Confirmed
            } else {
                TrackStatus::Tentative
            };
        } else {
            t.frames_since_update += 1;
        }
        t.push_history(HistoryEntry {
            frame,
            position: t.filter.position(),
            velocity: t.filter.velocity(),
        });
        true
    }

    /// Runs one frame. `detections` are the raw candidates for this frame;
    /// their `frame` field is ignored in favour of the argument.
    pub fn step(
        &mut self,
        frame: u32,
        detections: &[Detection],
    ) -> Result<Vec<TrackOutput>, TrackError> {
        if let Some(last) = self.last_frame {
            if frame <= last {
                return Err(TrackError::FrameOrder { got: frame, last });
            }
        }
        let dt = self.last_frame.map_or(1.0, |last| (frame - last) as f64);

        self.predict_all(dt);

        // Statuses as of frame entry drive pool membership below; matching
        // mutates statuses, so snapshot them first.
        let entry_status: Vec<TrackStatus> = self.tracks.iter().map(|t| t.status).collect();
        let (high, low) = split_detections(detections, self.config.tau_high, self.config.tau_low);
        let mut handled = vec![false; self.tracks.len()];
        let mut high_used = vec![false; high.len()];
        let mut first_round_matched: Vec<usize> = Vec::new();

        // Round 1: active + lost tracks vs high-confidence detections.
        let pool: Vec<usize> = (0..self.tracks.len())
            .filter(|&i| {
                matches!(entry_status[i], TrackStatus::Confirmed | TrackStatus::Lost)
            })
            .collect();
        let refs: Vec<&Track> = pool.iter().map(|&i| &self.tracks[i]).collect();
        for (ti, di) in associate(&refs, &high, self.config.iou_gate_first) {
            let idx = pool[ti];
            if self.apply_update(idx, &high[di].bbox, frame, true) {
                handled[idx] = true;
                high_used[di] = true;
                first_round_matched.push(idx);
            }
        }

        // Round 2: leftover active tracks vs low-confidence detections. Lost
        // tracks sit this one out — a weak detection is not enough evidence
        // to resurrect a track.
        let pool: Vec<usize> = (0..self.tracks.len())
            .filter(|&i| entry_status[i] == TrackStatus::Confirmed && !handled[i])
            .collect();
        let refs: Vec<&Track> = pool.iter().map(|&i| &self.tracks[i]).collect();
        for (ti, di) in associate(&refs, &low, self.config.iou_gate_second) {
            let idx = pool[ti];
            if self.apply_update(idx, &low[di].bbox, frame, true) {
                handled[idx] = true;
            }
        }

        // Round 3: unconfirmed tracks vs the remaining high detections.
        let pool: Vec<usize> = (0..self.tracks.len())
            .filter(|&i| entry_status[i] == TrackStatus::Tentative && !handled[i])
            .collect();
        let refs: Vec<&Track> = pool.iter().map(|&i| &self.tracks[i]).collect();
        let free_high: Vec<usize> = (0..high.len()).filter(|&d| !high_used[d]).collect();
        let free_refs: Vec<Detection> = free_high.iter().map(|&d| high[d].clone()).collect();
        for (ti, di) in associate(&refs, &free_refs, self.config.iou_gate_first) {
            let idx = pool[ti];
            if self.apply_update(idx, &free_refs[di].bbox, frame, true) {
                handled[idx] = true;
                high_used[free_high[di]] = true;
            }
        }

        // Synthesised observations for occluded confirmed tracks: first from
        // co-moving neighbours matched in round 1, then from the trajectory
        // predictor. Compensations are computed against a consistent snapshot
        // before any of them is applied.
        let mut pseudo: Vec<(usize, BBox)> = Vec::new();
        let neighbors: Vec<&Track> = first_round_matched.iter().map(|&i| &self.tracks[i]).collect();
        for idx in 0..self.tracks.len() {
            if handled[idx] || entry_status[idx] != TrackStatus::Confirmed {
                continue;
            }
            let t = &self.tracks[idx];
            let predicted = t.bbox();
            let mut center = None;
            if self.flags.gmcs {
                let selected =
                    gmcs::select_neighbors(t, &neighbors, self.config.gmcs_sim_threshold);
                if !selected.is_empty() {
                    if let Ok(comp) = gmcs::compensate(t, &selected, frame) {
                        center = Some((comp.center.x, comp.center.y));
                    }
                }
            }
            if center.is_none() && self.flags.stmp {
                if let Some(net) = &self.predictor {
                    if let Ok(c) = stmp::predict_center(net, t, &self.meta, frame) {
                        center = Some(c);
                    }
                }
            }
            if let Some((cx, cy)) = center {
                pseudo.push((idx, BBox::new(cx, cy, predicted.w, predicted.h)));
            }
        }
        for (idx, z) in pseudo {
            if self.apply_update(idx, &z, frame, false) {
                handled[idx] = true;
            }
        }

        // Unhandled tracks coast: they age and go lost.
        for (idx, t) in self.tracks.iter_mut().enumerate() {
            if !handled[idx] && t.status != TrackStatus::Removed {
                t.frames_since_update += 1;
                t.status = TrackStatus::Lost;
            }
            if t.frames_since_update > self.config.track_buffer {
                t.status = TrackStatus::Removed;
            }
        }
        self.tracks.retain(|t| t.status != TrackStatus::Removed);

        // Births from still-unclaimed high-confidence detections.
        for (di, det) in high.iter().enumerate() {
            if high_used[di] {
                continue;
            }
            let filter = FilterState::from_detection(&det.bbox, &self.noise);
            let mut t = Track::new(self.next_id, det.class_id, filter, frame);
            if self.config.min_hits <= 1 {
                t.status = TrackStatus::Confirmed;
            }
            self.next_id += 1;
            self.tracks.push(t);
        }

        self.last_frame = Some(frame);
        let mut out: Vec<TrackOutput> = self
            .tracks
            .iter()
            .filter(|t| t.status == TrackStatus::Confirmed)
            .map(|t| TrackOutput { frame, id: t.id, bbox: t.bbox(), class_id: t.class_id })
            .collect();
        out.sort_by_key(|o| o.id);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn det(frame: u32, cx: f64, cy: f64, w: f64, h: f64, score: f64) -> Detection {
        Detection { frame, bbox: BBox::new(cx, cy, w, h), score, class_id: 1 }
    }

    fn meta() -> SequenceMeta {
        SequenceMeta { image_width: 1000, image_height: 1000, frame_count: 500, frame_rate: 30.0 }
    }

    fn tracker(flags: FeatureFlags) -> Tracker {
        Tracker::new(AssocConfig::default(), NoiseConfig::default(), flags, meta()).unwrap()
    }

    /// Exhaustive minimum over all permutations, scanning columns in
    /// ascending order and keeping strictly better totals, so the winner is
    /// the lexicographically smallest optimal assignment.
    fn brute_force(c: &DMatrix<f64>) -> (Vec<usize>, f64) {
        let n = c.nrows();
        assert_eq!(n, c.ncols());
        let mut best: Option<(Vec<usize>, f64)> = None;
        let mut current = Vec::with_capacity(n);
        let mut used = vec![false; n];
        fn recurse(
            c: &DMatrix<f64>,
            current: &mut Vec<usize>,
            used: &mut Vec<bool>,
            best: &mut Option<(Vec<usize>, f64)>,
        ) {
            let i = current.len();
            if i == c.nrows() {
                let cost = current.iter().enumerate().map(|(r, &j)| c[(r, j)]).sum::<f64>();
                if best.as_ref().is_none_or(|(_, b)| cost < *b) {
                    *best = Some((current.clone(), cost));
                }
                return;
            }
            for j in 0..c.nrows() {
                if !used[j] {
                    used[j] = true;
                    current.push(j);
                    recurse(c, current, used, best);
                    current.pop();
                    used[j] = false;
                }
            }
        }
        recurse(c, &mut current, &mut used, &mut best);
        best.unwrap()
    }

    #[test]
    fn hungarian_fixtures() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let a = hungarian(&c);
        assert_eq!(a.row_to_col, vec![Some(0), Some(1)]);
        assert_eq!(a.cost, 2.0);

        let c = DMatrix::from_row_slice(1, 1, &[7.0]);
        let a = hungarian(&c);
        assert_eq!(a.row_to_col, vec![Some(0)]);
        assert_eq!(a.cost, 7.0);

        // Classic 3×3 with a unique optimum of 5 on the anti-diagonal-ish.
        let c = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0]);
        let a = hungarian(&c);
        assert_eq!(a.cost, 5.0);
        assert_eq!(a.row_to_col, vec![Some(1), Some(0), Some(2)]);
    }

    #[test]
    fn hungarian_breaks_ties_lexicographically() {
        let c = DMatrix::from_element(3, 3, 1.0);
        let a = hungarian(&c);
        assert_eq!(a.row_to_col, vec![Some(0), Some(1), Some(2)]);
        assert_eq!(a.cost, 3.0);

        // Two optima: (0,0),(1,1) and (0,1),(1,0), both cost 4.
        let c = DMatrix::from_row_slice(2, 2, &[2.0, 3.0, 1.0, 2.0]);
        let a = hungarian(&c);
        assert_eq!(a.row_to_col, vec![Some(0), Some(1)]);
    }

    #[test]
    fn hungarian_rectangular() {
        // Wide: every row gets a column.
        let c = DMatrix::from_row_slice(2, 3, &[5.0, 1.0, 3.0, 9.0, 7.0, 2.0]);
        let a = hungarian(&c);
        assert_eq!(a.row_to_col, vec![Some(1), Some(2)]);
        assert_eq!(a.cost, 3.0);

        // Tall: one row stays unmatched.
        let c = DMatrix::from_row_slice(3, 2, &[5.0, 9.0, 1.0, 7.0, 3.0, 2.0]);
        let a = hungarian(&c);
        assert_eq!(a.row_to_col, vec![None, Some(0), Some(1)]);
        assert_eq!(a.cost, 3.0);

        let empty = hungarian(&DMatrix::<f64>::zeros(0, 4));
        assert_eq!(empty.row_to_col, Vec::<Option<usize>>::new());
        assert_eq!(empty.cost, 0.0);
    }

    #[test]
    fn hungarian_matches_brute_force_on_random_integer_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(171);
        for case in 0..60 {
            let n = rng.random_range(2..=5usize);
            let c = DMatrix::from_fn(n, n, |_, _| rng.random_range(0..20) as f64);
            let (want_assign, want_cost) = brute_force(&c);
            let got = hungarian(&c);
            assert_eq!(got.cost, want_cost, "case {case}: cost mismatch on {c}");
            let got_assign: Vec<usize> = got.row_to_col.iter().map(|j| j.unwrap()).collect();
            assert_eq!(got_assign, want_assign, "case {case}: assignment mismatch on {c}");
        }
    }

    #[test]
    fn split_detections_respects_boundaries() {
        let dets = vec![
            det(1, 0.0, 0.0, 10.0, 10.0, 0.9),
            det(1, 0.0, 0.0, 10.0, 10.0, 0.6),
            det(1, 0.0, 0.0, 10.0, 10.0, 0.5),
            det(1, 0.0, 0.0, 10.0, 10.0, 0.1),
            det(1, 0.0, 0.0, 10.0, 10.0, 0.05),
        ];
        let (high, low) = split_detections(&dets, 0.6, 0.1);
        let hs: Vec<f64> = high.iter().map(|d| d.score).collect();
        let ls: Vec<f64> = low.iter().map(|d| d.score).collect();
        assert_eq!(hs, vec![0.9, 0.6]);
        assert_eq!(ls, vec![0.5, 0.1]);
    }

    #[test]
    fn associate_gates_on_iou_and_class() {
        let cfg = NoiseConfig::default();
        let mk = |id: u64, cx: f64, class_id: i32| {
            let mut t = Track::new(
                id,
                class_id,
                FilterState::from_detection(&BBox::new(cx, 50.0, 20.0, 20.0), &cfg),
                1,
            );
            t.status = TrackStatus::Confirmed;
            t
        };
        let t1 = mk(1, 50.0, 1);
        let t2 = mk(2, 200.0, 1);
        let t3 = mk(3, 300.0, 2);
        let tracks = vec![&t1, &t2, &t3];
        let dets = vec![
            det(2, 52.0, 50.0, 20.0, 20.0, 0.9),  // overlaps t1
            det(2, 500.0, 50.0, 20.0, 20.0, 0.9), // overlaps nothing
            {
                let mut d = det(2, 300.0, 50.0, 20.0, 20.0, 0.9); // on t3 but class 1
                d.class_id = 1;
                d
            },
        ];
        let matches = associate(&tracks, &dets, 0.2);
        assert_eq!(matches, vec![(0, 0)]);
    }

    #[test]
    fn tracker_confirms_after_min_hits_and_keeps_one_id() {
        let mut tr = tracker(FeatureFlags::default());
        let mut seen = Vec::new();
        for frame in 1..=10u32 {
            let x = 100.0 + 3.0 * frame as f64;
            let out = tr.step(frame, &[det(frame, x, 200.0, 30.0, 60.0, 0.9)]).unwrap();
            seen.push((frame, out));
        }
        assert!(seen[0].1.is_empty() && seen[1].1.is_empty(), "tentative frames must stay silent");
        for (frame, out) in &seen[2..] {
            assert_eq!(out.len(), 1, "frame {frame}");
            assert_eq!(out[0].id, 1);
            assert_relative_eq!(out[0].bbox.cx, 100.0 + 3.0 * *frame as f64, epsilon = 2.0);
        }
    }

    #[test]
    fn tracker_rejects_non_increasing_frames() {
        let mut tr = tracker(FeatureFlags::default());
        tr.step(5, &[]).unwrap();
        assert_eq!(
            tr.step(5, &[]).unwrap_err(),
            TrackError::FrameOrder { got: 5, last: 5 }
        );
        assert!(matches!(tr.step(3, &[]), Err(TrackError::FrameOrder { .. })));
        assert!(tr.step(6, &[]).is_ok());
    }

    #[test]
    fn lost_track_reclaims_identity_within_buffer() {
        let flags = FeatureFlags { vackf: true, gmcs: false, stmp: false };
        let mut tr = tracker(flags);
        let path = |f: u32| det(f, 100.0 + 4.0 * f as f64, 300.0, 30.0, 60.0, 0.9);
        for frame in 1..=6 {
            tr.step(frame, &[path(frame)]).unwrap();
        }
        // Occluded for 5 frames: nothing reported, track goes lost.
        for frame in 7..=11 {
            let out = tr.step(frame, &[]).unwrap();
            assert!(out.is_empty(), "frame {frame} should report nothing");
        }
        // Reappears where the constant-velocity prediction expects it.
        let out = tr.step(12, &[path(12)]).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].id, 1, "identity must survive a short occlusion");
    }

    #[test]
    fn track_expires_after_buffer_and_new_id_is_issued() {
        let mut cfg = AssocConfig::default();
        cfg.track_buffer = 3;
        let mut tr =
            Tracker::new(cfg, NoiseConfig::default(), FeatureFlags::default(), meta()).unwrap();
        for frame in 1..=4 {
            tr.step(frame, &[det(frame, 100.0, 100.0, 30.0, 30.0, 0.9)]).unwrap();
        }
        for frame in 5..=9 {
            tr.step(frame, &[]).unwrap();
        }
        assert!(tr.active_tracks().is_empty(), "expired track must be dropped");
        for frame in 10..=12 {
            let out = tr.step(frame, &[det(frame, 100.0, 100.0, 30.0, 30.0, 0.9)]).unwrap();
            if frame == 12 {
                assert_eq!(out[0].id, 2, "a fresh identity is required after expiry");
            }
        }
    }

    #[test]
    fn low_confidence_detection_sustains_confirmed_track() {
        let mut tr = tracker(FeatureFlags::default());
        for frame in 1..=4 {
            tr.step(frame, &[det(frame, 100.0, 100.0, 40.0, 40.0, 0.9)]).unwrap();
        }
        // Score drops below tau_high but stays above tau_low.
        let out = tr.step(5, &[det(5, 100.0, 100.0, 40.0, 40.0, 0.3)]).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].id, 1);
        // The weak detection was a real update: staleness was reset.
        assert_eq!(tr.active_tracks()[0].frames_since_update, 0);
        // A weak detection alone never births a track.
        let out = tr.step(6, &[det(6, 700.0, 700.0, 40.0, 40.0, 0.3)]).unwrap();
        assert!(out.iter().all(|o| o.bbox.cx < 500.0));
        assert_eq!(tr.active_tracks().len(), 1);
    }

    #[test]
    fn distinct_objects_get_distinct_ids() {
        let mut tr = tracker(FeatureFlags::default());
        for frame in 1..=5 {
            let out = tr
                .step(
                    frame,
                    &[
                        det(frame, 100.0, 100.0, 30.0, 30.0, 0.9),
                        det(frame, 600.0, 600.0, 30.0, 30.0, 0.9),
                    ],
                )
                .unwrap();
            if frame >= 3 {
                let ids: Vec<u64> = out.iter().map(|o| o.id).collect();
                assert_eq!(ids, vec![1, 2]);
            }
        }
    }

    #[test]
    fn steps_are_deterministic() {
        let run = || {
            let mut tr = tracker(FeatureFlags::default());
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let mut log = Vec::new();
            for frame in 1..=40u32 {
                let dets: Vec<Detection> = (0..6)
                    .map(|k| {
                        det(
                            frame,
                            100.0 + 80.0 * k as f64 + rng.random_range(-2.0..2.0),
                            300.0 + rng.random_range(-2.0..2.0),
                            30.0,
                            30.0,
                            rng.random_range(0.5..1.0),
                        )
                    })
                    .collect();
                log.push(tr.step(frame, &dets).unwrap());
            }
            format!("{log:?}")
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let ok = AssocConfig::default();
        assert!(ok.validate().is_ok());
        assert!(AssocConfig { tau_low: 0.7, ..ok }.validate().is_err());
        assert!(AssocConfig { tau_high: 1.2, ..ok }.validate().is_err());
        assert!(AssocConfig { iou_gate_first: -0.1, ..ok }.validate().is_err());
        assert!(AssocConfig { track_buffer: 0, ..ok }.validate().is_err());
        assert!(AssocConfig { min_hits: 0, ..ok }.validate().is_err());
        assert!(AssocConfig { gmcs_sim_threshold: f64::NAN, ..ok }.validate().is_err());
    }
}
