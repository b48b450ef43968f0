//! Group motion compensation: an occluded track borrows the velocity change
//! of co-moving neighbours to synthesise a pseudo-observation of its center.
//!
//! A neighbour is useful when it is close (distance measured in widths of the
//! occluded track) and moving the same way (cosine of the velocity angle).
//! Each selected neighbour "telescopes" the occluded track forward: start from
//! the track's previous position, advance by its previous velocity, then swap
//! the neighbour's previous velocity for its current one so that any group
//! manoeuvre that happened this frame carries over. The synthesised center is
//! the similarity-weighted mean of those per-neighbour estimates.

use nalgebra::Vector2;
use thiserror::Error;

use crate::model::{HistoryEntry, Track};

/// Weight used when an occluded track and a neighbour report the exact same
/// center (distance term would otherwise divide by zero).
pub const COINCIDENT_WEIGHT: f64 = 1e6;

/// Speeds below this have no usable direction.
const MIN_SPEED: f64 = 1e-6;

/// History entries older than this many frames are too stale to anchor a
/// compensation (one missing frame is tolerated).
const MAX_HISTORY_GAP: u32 = 2;

#[derive(Debug, Error, PartialEq)]
pub enum GmcsError {
    /// One of the velocities is numerically zero, so its direction (and the
    /// velocity similarity) is undefined.
    #[error("velocity magnitude below {MIN_SPEED}; direction undefined")]
    ZeroVelocity,
    /// No usable previous-frame history entry within the tolerated gap.
    #[error("history gap exceeds one frame")]
    MissingHistory,
}

/// Similarity breakdown between an occluded track and one candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborScore {
    /// Center distance in units of the occluded track's width.
    pub d_sim: f64,
    /// `2 - cos(angle between velocities)`, in `[1, 3]`; lower is better.
    pub v_sim: f64,
    /// Combined affinity: `1 / (d_sim * v_sim)`, `-inf` when the headings
    /// diverge by 90° or more, [`COINCIDENT_WEIGHT`] for coincident centers.
    pub s: f64,
}

/// Scores one candidate against the occluded track. `t_*` is the occluded
/// track's current (predicted) state, `h_*` the candidate's current estimate.
pub fn similarity(
    t_pos: Vector2<f64>,
    t_vel: Vector2<f64>,
    t_width: f64,
    h_pos: Vector2<f64>,
    h_vel: Vector2<f64>,
) -> Result<NeighborScore, GmcsError> {
    let t_speed = t_vel.norm();
    let h_speed = h_vel.norm();
    if t_speed < MIN_SPEED || h_speed < MIN_SPEED {
        return Err(GmcsError::ZeroVelocity);
    }
    let d_sim = (t_pos - h_pos).norm() / t_width;
    let v_sim = 2.0 - t_vel.dot(&h_vel) / (t_speed * h_speed);
    let s = if v_sim >= 2.0 {
        f64::NEG_INFINITY
    } else if d_sim == 0.0 {
        COINCIDENT_WEIGHT
    } else {
        1.0 / (d_sim * v_sim)
    };
    Ok(NeighborScore { d_sim, v_sim, s })
}

/// Filters `candidates` down to same-class neighbours whose finite similarity
/// exceeds `threshold`, ordered by track id. Pairs with undefined velocity
/// direction are silently skipped.
pub fn select_neighbors<'a>(
    t: &Track,
    candidates: &[&'a Track],
    threshold: f64,
) -> Vec<(&'a Track, f64)> {
    let t_pos = t.filter.position();
    let t_vel = t.filter.velocity();
    let t_width = t.filter.bbox().w.max(1.0);
    let mut out: Vec<(&Track, f64)> = candidates
        .iter()
        .filter(|c| c.id != t.id && c.class_id == t.class_id)
        .filter_map(|c| {
            let score = similarity(t_pos, t_vel, t_width, c.filter.position(), c.filter.velocity()).ok()?;
            (score.s.is_finite() && score.s > threshold).then_some((*c, score.s))
        })
        .collect();
    out.sort_by_key(|(c, _)| c.id);
    out
}

/// A synthesised center observation for an occluded track.
#[derive(Debug, Clone, PartialEq)]
pub struct Compensation {
    pub center: Vector2<f64>,
    /// `(track id, weight)` of every neighbour that contributed.
    pub contributors: Vec<(u64, f64)>,
    pub total_weight: f64,
}

fn anchor_entry(track: &Track, frame: u32) -> Result<&HistoryEntry, GmcsError> {
    let entry = track.entry_before(frame).ok_or(GmcsError::MissingHistory)?;
    if frame - entry.frame > MAX_HISTORY_GAP {
        return Err(GmcsError::MissingHistory);
    }
    Ok(entry)
}

/// Synthesises the occluded track's center at `frame` from weighted neighbour
/// estimates. Neighbours whose own history is too stale are dropped; the call
/// fails only when the occluded track has no usable anchor or no neighbour
/// survives.
pub fn compensate(
    t: &Track,
    neighbors: &[(&Track, f64)],
    frame: u32,
) -> Result<Compensation, GmcsError> {
    let t_prev = anchor_entry(t, frame)?;
    let mut weighted = Vector2::zeros();
    let mut total_weight = 0.0;
    let mut contributors = Vec::with_capacity(neighbors.len());
    for (n, s) in neighbors {
        let Ok(n_prev) = anchor_entry(n, frame) else { continue };
        // Telescope: previous position + previous velocity, with the
        // neighbour's previous velocity replaced by its current one.
        let estimate =
            t_prev.position + (t_prev.velocity - n_prev.velocity) + n.filter.velocity();
        weighted += estimate * *s;
        total_weight += s;
        contributors.push((n.id, *s));
    }
    if contributors.is_empty() {
        return Err(GmcsError::MissingHistory);
    }
    Ok(Compensation { center: weighted / total_weight, contributors, total_weight })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BBox;
    use crate::vackf::{FilterState, NoiseConfig};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn v(x: f64, y: f64) -> Vector2<f64> {
        Vector2::new(x, y)
    }

    /// Track with a chosen current state and explicit history entries.
    fn track(id: u64, pos: (f64, f64), vel: (f64, f64), w: f64, history: &[(u32, (f64, f64), (f64, f64))]) -> Track {
        let cfg = NoiseConfig::default();
        let first = history.first().expect("history required");
        let mut t = Track::new(id, 1, FilterState::from_detection(&BBox::new(first.1 .0, first.1 .1, w, w), &cfg), first.0);
        t.history.clear();
        for (frame, p, vv) in history {
            t.push_history(HistoryEntry { frame: *frame, position: v(p.0, p.1), velocity: v(vv.0, vv.1) });
        }
        t.filter.x[0] = pos.0;
        t.filter.x[1] = pos.1;
        t.filter.x[2] = w;
        t.filter.x[4] = vel.0;
        t.filter.x[5] = vel.1;
        t
    }

    #[test]
    fn similarity_fixture() {
        let s = similarity(v(0.0, 0.0), v(1.0, 0.0), 10.0, v(30.0, 40.0), v(2.0, 0.0)).unwrap();
        assert_relative_eq!(s.d_sim, 5.0, epsilon = 1e-12);
        assert_relative_eq!(s.v_sim, 1.0, epsilon = 1e-12);
        assert_relative_eq!(s.s, 0.2, epsilon = 1e-12);
    }

    #[test]
    fn similarity_rejects_diverging_headings() {
        // Anti-parallel: v_sim = 3.
        let s = similarity(v(0.0, 0.0), v(1.0, 0.0), 10.0, v(5.0, 0.0), v(-1.0, 0.0)).unwrap();
        assert_relative_eq!(s.v_sim, 3.0, epsilon = 1e-12);
        assert_eq!(s.s, f64::NEG_INFINITY);
        // Orthogonal sits exactly on the inclusive boundary v_sim = 2.
        let s = similarity(v(0.0, 0.0), v(1.0, 0.0), 10.0, v(5.0, 0.0), v(0.0, 1.0)).unwrap();
        assert_relative_eq!(s.v_sim, 2.0, epsilon = 1e-12);
        assert_eq!(s.s, f64::NEG_INFINITY);
    }

    #[test]
    fn similarity_zero_velocity_is_an_error() {
        assert_eq!(
            similarity(v(0.0, 0.0), v(0.0, 0.0), 10.0, v(5.0, 0.0), v(1.0, 0.0)).unwrap_err(),
            GmcsError::ZeroVelocity
        );
        assert_eq!(
            similarity(v(0.0, 0.0), v(1.0, 0.0), 10.0, v(5.0, 0.0), v(1e-9, 0.0)).unwrap_err(),
            GmcsError::ZeroVelocity
        );
    }

    #[test]
    fn similarity_coincident_centers_use_sentinel() {
        let s = similarity(v(7.0, 7.0), v(1.0, 0.0), 10.0, v(7.0, 7.0), v(1.0, 0.0)).unwrap();
        assert_eq!(s.d_sim, 0.0);
        assert_eq!(s.s, COINCIDENT_WEIGHT);
    }

    #[test]
    fn select_neighbors_filters_class_threshold_and_order() {
        let t = track(10, (0.0, 0.0), (1.0, 0.0), 10.0, &[(1, (0.0, 0.0), (1.0, 0.0))]);
        // Close co-mover, far co-mover (below threshold), wrong class, stopped.
        let n1 = track(3, (12.0, 0.0), (1.0, 0.0), 10.0, &[(1, (11.0, 0.0), (1.0, 0.0))]);
        let n2 = track(2, (9.0, 0.0), (1.0, 0.0), 10.0, &[(1, (8.0, 0.0), (1.0, 0.0))]);
        let mut n3 = track(4, (5.0, 0.0), (1.0, 0.0), 10.0, &[(1, (4.0, 0.0), (1.0, 0.0))]);
        n3.class_id = 2;
        let n4 = track(5, (5.0, 0.0), (0.0, 0.0), 10.0, &[(1, (5.0, 0.0), (0.0, 0.0))]);
        let far = track(6, (400.0, 0.0), (1.0, 0.0), 10.0, &[(1, (399.0, 0.0), (1.0, 0.0))]);
        let cands = [&n1, &n2, &n3, &n4, &far];
        let picked = select_neighbors(&t, &cands, 0.5);
        let ids: Vec<u64> = picked.iter().map(|(c, _)| c.id).collect();
        assert_eq!(ids, vec![2, 3], "sorted by id, others filtered");
    }

    #[test]
    fn select_neighbors_threshold_is_strict() {
        let t = track(1, (0.0, 0.0), (1.0, 0.0), 10.0, &[(1, (0.0, 0.0), (1.0, 0.0))]);
        // d_sim = 2, v_sim = 1 → s = 0.5 exactly; not > 0.5.
        let n = track(2, (20.0, 0.0), (1.0, 0.0), 10.0, &[(1, (19.0, 0.0), (1.0, 0.0))]);
        assert!(select_neighbors(&t, &[&n], 0.5).is_empty());
        assert_eq!(select_neighbors(&t, &[&n], 0.49).len(), 1);
    }

    #[test]
    fn compensate_single_unchanged_neighbor_advances_by_own_velocity() {
        let t = track(1, (105.0, 100.0), (5.0, 0.0), 10.0, &[(9, (100.0, 100.0), (5.0, 0.0))]);
        let n = track(2, (130.0, 100.0), (5.0, 0.0), 10.0, &[(9, (125.0, 100.0), (5.0, 0.0))]);
        let c = compensate(&t, &[(&n, 1.0)], 10).unwrap();
        assert_relative_eq!(c.center.x, 105.0, epsilon = 1e-12);
        assert_relative_eq!(c.center.y, 100.0, epsilon = 1e-12);
    }

    #[test]
    fn compensate_follows_neighbor_velocity_change() {
        // Neighbour sped up from (5,0) to (6,0); the occluded track inherits it.
        let t = track(1, (105.0, 100.0), (5.0, 0.0), 10.0, &[(9, (100.0, 100.0), (5.0, 0.0))]);
        let n = track(2, (130.0, 100.0), (6.0, 0.0), 10.0, &[(9, (125.0, 100.0), (5.0, 0.0))]);
        let c = compensate(&t, &[(&n, 1.0)], 10).unwrap();
        assert_relative_eq!(c.center.x, 106.0, epsilon = 1e-12);
        assert_relative_eq!(c.center.y, 100.0, epsilon = 1e-12);
    }

    #[test]
    fn compensate_weighted_mean_fixture() {
        // Contributions (10,0) with weight 0.6 and (18,0) with weight 0.2
        // combine to (12,0).
        let t = track(1, (0.0, 0.0), (10.0, 0.0), 10.0, &[(9, (0.0, 0.0), (10.0, 0.0))]);
        let n1 = track(2, (40.0, 0.0), (10.0, 0.0), 10.0, &[(9, (30.0, 0.0), (10.0, 0.0))]);
        let n2 = track(3, (60.0, 0.0), (10.0, 0.0), 10.0, &[(9, (50.0, 0.0), (2.0, 0.0))]);
        let c = compensate(&t, &[(&n1, 0.6), (&n2, 0.2)], 10).unwrap();
        assert_relative_eq!(c.center.x, 12.0, epsilon = 1e-12);
        assert_relative_eq!(c.center.y, 0.0, epsilon = 1e-12);
        assert_relative_eq!(c.total_weight, 0.8, epsilon = 1e-12);
        assert_eq!(c.contributors, vec![(2, 0.6), (3, 0.2)]);
    }

    #[test]
    fn compensate_tolerates_one_frame_gap_only() {
        let n = track(2, (130.0, 100.0), (5.0, 0.0), 10.0, &[(9, (125.0, 100.0), (5.0, 0.0))]);
        // Anchor at frame 8, compensating frame 10: one-frame gap, fine.
        let t8 = track(1, (105.0, 100.0), (5.0, 0.0), 10.0, &[(8, (100.0, 100.0), (5.0, 0.0))]);
        assert!(compensate(&t8, &[(&n, 1.0)], 10).is_ok());
        // Anchor at frame 7: two-frame gap, stale.
        let t7 = track(1, (105.0, 100.0), (5.0, 0.0), 10.0, &[(7, (100.0, 100.0), (5.0, 0.0))]);
        assert_eq!(compensate(&t7, &[(&n, 1.0)], 10).unwrap_err(), GmcsError::MissingHistory);
    }

    #[test]
    fn compensate_drops_stale_neighbors() {
        let t = track(1, (105.0, 100.0), (5.0, 0.0), 10.0, &[(9, (100.0, 100.0), (5.0, 0.0))]);
        let stale = track(2, (130.0, 100.0), (9.0, 0.0), 10.0, &[(5, (125.0, 100.0), (5.0, 0.0))]);
        let fresh = track(3, (130.0, 110.0), (5.0, 0.0), 10.0, &[(9, (125.0, 110.0), (5.0, 0.0))]);
        let c = compensate(&t, &[(&stale, 5.0), (&fresh, 1.0)], 10).unwrap();
        assert_eq!(c.contributors, vec![(3, 1.0)]);
        // Only stale neighbours → no usable compensation.
        assert_eq!(compensate(&t, &[(&stale, 5.0)], 10).unwrap_err(), GmcsError::MissingHistory);
    }

    proptest! {
        #[test]
        fn center_stays_in_contribution_envelope(
            px in -100.0..100.0f64, py in -100.0..100.0f64,
            vx in 0.5..5.0f64,
            n1dx in -4.0..4.0f64, n2dx in -4.0..4.0f64,
            w1 in 0.1..5.0f64, w2 in 0.1..5.0f64,
        ) {
            let t = track(1, (px, py), (vx, 0.0), 10.0, &[(9, (px, py), (vx, 0.0))]);
            let n1 = track(2, (px + 15.0, py), (vx + n1dx, 0.0), 10.0, &[(9, (px + 10.0, py), (vx, 0.0))]);
            let n2 = track(3, (px, py + 15.0), (vx + n2dx, 0.0), 10.0, &[(9, (px, py + 10.0), (vx, 0.0))]);
            let est1 = px + vx + n1dx;
            let est2 = px + vx + n2dx;
            let c = compensate(&t, &[(&n1, w1), (&n2, w2)], 10).unwrap();
            let lo = est1.min(est2) - 1e-9;
            let hi = est1.max(est2) + 1e-9;
            prop_assert!(c.center.x >= lo && c.center.x <= hi);
            prop_assert!((c.center.y - py).abs() < 1e-9);
        }

        #[test]
        fn weights_are_scale_invariant(scale in 0.001..1000.0f64) {
            let t = track(1, (0.0, 0.0), (10.0, 0.0), 10.0, &[(9, (0.0, 0.0), (10.0, 0.0))]);
            let n1 = track(2, (40.0, 0.0), (10.0, 0.0), 10.0, &[(9, (30.0, 0.0), (10.0, 0.0))]);
            let n2 = track(3, (60.0, 0.0), (10.0, 0.0), 10.0, &[(9, (50.0, 0.0), (2.0, 0.0))]);
            let a = compensate(&t, &[(&n1, 0.6), (&n2, 0.2)], 10).unwrap();
            let b = compensate(&t, &[(&n1, 0.6 * scale), (&n2, 0.2 * scale)], 10).unwrap();
            prop_assert!((a.center - b.center).norm() < 1e-9);
        }
    }
}
