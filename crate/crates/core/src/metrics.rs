//! Multi-object tracking evaluation: MOTA/MOTP with persistent per-frame
//! correspondences, identity-level precision/recall (IDF1), and the
//! mostly-tracked / mostly-lost trajectory buckets.

use std::collections::{BTreeMap, HashMap};
use std::collections::btree_map::Entry;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::association::hungarian;
use crate::model::{iou, BBox};

/// Boxes per frame, keyed by frame number; each entry is `(id, box)`.
pub type FrameBoxes = BTreeMap<u32, Vec<(i64, BBox)>>;

/// Groups `(frame, id, box)` triples into a [`FrameBoxes`] map.
pub fn group_by_frame(rows: &[(u32, i64, BBox)]) -> FrameBoxes {
    let mut out = FrameBoxes::new();
    for &(frame, id, bbox) in rows {
        out.entry(frame).or_default().push((id, bbox));
    }
    out
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("ground truth contains no boxes")]
    EmptyGroundTruth,
    #[error("iou threshold must be in (0, 1], got {0}")]
    BadThreshold(f64),
}

/// Full evaluation summary. Rates are fractions (MOTA may go negative when
/// errors outnumber ground-truth boxes).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mota: f64,
    /// Mean IoU over matched pairs; 0 when nothing ever matched.
    pub motp: f64,
    pub idf1: f64,
    pub idp: f64,
    pub idr: f64,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub id_switches: u64,
    pub matches: u64,
    pub gt_boxes: u64,
    pub hyp_boxes: u64,
    pub idtp: u64,
    pub idfp: u64,
    pub idfn: u64,
    pub gt_tracks: u64,
    pub mostly_tracked: u64,
    pub mostly_lost: u64,
}

/// Per-frame correspondence with persistence: a pair stays matched while
/// both ids keep appearing with enough overlap; everyone else is re-matched
/// by minimum-cost assignment on `1 − IoU`, gated at the threshold.
struct Correspondence {
    /// gt id → hyp id holding from the previous frame.
    current: HashMap<i64, i64>,
    /// gt id → hyp id it was last matched to in any earlier frame.
    last_ever: HashMap<i64, i64>,
}

struct FrameTally {
    false_positives: u64,
    false_negatives: u64,
    id_switches: u64,
    matches: u64,
    iou_sum: f64,
    /// (gt id → frames present, frames matched) for MT/ML.
    coverage: BTreeMap<i64, (u64, u64)>,
}

fn match_frames(gt: &FrameBoxes, hyp: &FrameBoxes, threshold: f64) -> FrameTally {
    let mut corr = Correspondence { current: HashMap::new(), last_ever: HashMap::new() };
    let mut tally = FrameTally {
        false_positives: 0,
        false_negatives: 0,
        id_switches: 0,
        matches: 0,
        iou_sum: 0.0,
        coverage: BTreeMap::new(),
    };
    let empty: Vec<(i64, BBox)> = Vec::new();
    let frames: std::collections::BTreeSet<u32> =
        gt.keys().chain(hyp.keys()).copied().collect();
    for frame in frames {
        let gts = gt.get(&frame).unwrap_or(&empty);
        let hyps = hyp.get(&frame).unwrap_or(&empty);
        for (gid, _) in gts {
            tally.coverage.entry(*gid).or_insert((0, 0)).0 += 1;
        }

        // Keep surviving correspondences first.
        let mut gt_matched = vec![false; gts.len()];
        let mut hyp_matched = vec![false; hyps.len()];
        let mut frame_pairs: Vec<(usize, usize, f64)> = Vec::new();
        for (gi, (gid, gbox)) in gts.iter().enumerate() {
            let Some(hid) = corr.current.get(gid) else { continue };
            let Some(hi) = hyps.iter().position(|(h, _)| h == hid) else { continue };
            if hyp_matched[hi] {
                continue;
            }
            let overlap = iou(gbox, &hyps[hi].1);
            if overlap >= threshold {
                gt_matched[gi] = true;
                hyp_matched[hi] = true;
                frame_pairs.push((gi, hi, overlap));
            }
        }

        // Assign the rest by minimum 1 − IoU, gated at the threshold.
        let free_gt: Vec<usize> = (0..gts.len()).filter(|&i| !gt_matched[i]).collect();
        let free_hyp: Vec<usize> = (0..hyps.len()).filter(|&i| !hyp_matched[i]).collect();
        if !free_gt.is_empty() && !free_hyp.is_empty() {
            const FORBIDDEN: f64 = 1e6;
            let cost = DMatrix::from_fn(free_gt.len(), free_hyp.len(), |r, c| {
                let overlap = iou(&gts[free_gt[r]].1, &hyps[free_hyp[c]].1);
                if overlap >= threshold {
                    1.0 - overlap
                } else {
                    FORBIDDEN
                }
            });
            for (r, c) in hungarian(&cost)
                .row_to_col
                .iter()
                .enumerate()
                .filter_map(|(r, c)| c.map(|c| (r, c)))
            {
                if cost[(r, c)] < FORBIDDEN / 2.0 {
                    let (gi, hi) = (free_gt[r], free_hyp[c]);
                    gt_matched[gi] = true;
                    hyp_matched[hi] = true;
                    frame_pairs.push((gi, hi, 1.0 - cost[(r, c)]));
                }
            }
        }

        // Book the frame: switches are counted against the last id a ground
        // truth was ever matched to, not just the previous frame.
        let mut next_current = HashMap::new();
        for (gi, hi, overlap) in frame_pairs {
            let gid = gts[gi].0;
            let hid = hyps[hi].0;
            if let Some(prev) = corr.last_ever.get(&gid) {
                if *prev != hid {
                    tally.id_switches += 1;
                }
            }
            corr.last_ever.insert(gid, hid);
            next_current.insert(gid, hid);
            tally.matches += 1;
            tally.iou_sum += overlap;
            tally.coverage.entry(gid).or_insert((0, 0)).1 += 1;
        }
        corr.current = next_current;
        tally.false_negatives += gt_matched.iter().filter(|m| !**m).count() as u64;
        tally.false_positives += hyp_matched.iter().filter(|m| !**m).count() as u64;
    }
    tally
}

/// Frames in which each (gt id, hyp id) pair overlaps at or above the
/// threshold — the payoff matrix for the identity-level pairing.
fn identity_overlap_counts(
    gt: &FrameBoxes,
    hyp: &FrameBoxes,
    threshold: f64,
) -> BTreeMap<(i64, i64), u64> {
    let mut counts = BTreeMap::new();
    for (frame, gts) in gt {
        let Some(hyps) = hyp.get(frame) else { continue };
        for (gid, gbox) in gts {
            for (hid, hbox) in hyps {
                if iou(gbox, hbox) >= threshold {
                    match counts.entry((*gid, *hid)) {
                        Entry::Vacant(e) => {
                            e.insert(1);
                        }
                        Entry::Occupied(mut e) => *e.get_mut() += 1,
                    }
                }
            }
        }
    }
    counts
}

/// Maximum total overlap achieved by any one-to-one pairing of ground-truth
/// and hypothesis identities (the identity-level true positive count).
pub fn identity_pairing_score(gt: &FrameBoxes, hyp: &FrameBoxes, threshold: f64) -> u64 {
    let counts = identity_overlap_counts(gt, hyp, threshold);
    if counts.is_empty() {
        return 0;
    }
    let gt_ids: Vec<i64> = {
        let mut v: Vec<i64> = counts.keys().map(|(g, _)| *g).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let hyp_ids: Vec<i64> = {
        let mut v: Vec<i64> = counts.keys().map(|(_, h)| *h).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    // Maximize by minimizing negated counts; dummy padding rows/columns cost
    // zero, which is exactly "leave this identity unpaired".
    let cost = DMatrix::from_fn(gt_ids.len(), hyp_ids.len(), |r, c| {
        -(counts.get(&(gt_ids[r], hyp_ids[c])).copied().unwrap_or(0) as f64)
    });
    let assignment = hungarian(&cost);
    let mut total = 0u64;
    for (r, c) in assignment.row_to_col.iter().enumerate().filter_map(|(r, c)| c.map(|c| (r, c)))
    {
        total += counts.get(&(gt_ids[r], hyp_ids[c])).copied().unwrap_or(0);
    }
    total
}

/// Evaluates hypothesis tracks against ground truth at the given IoU
/// threshold (0.5 is the conventional choice).
pub fn evaluate(gt: &FrameBoxes, hyp: &FrameBoxes, threshold: f64) -> Result<EvalReport, MetricsError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(MetricsError::BadThreshold(threshold));
    }
    let gt_boxes: u64 = gt.values().map(|v| v.len() as u64).sum();
    let hyp_boxes: u64 = hyp.values().map(|v| v.len() as u64).sum();
    if gt_boxes == 0 {
        return Err(MetricsError::EmptyGroundTruth);
    }

    let tally = match_frames(gt, hyp, threshold);
    let mota = 1.0
        - (tally.false_negatives + tally.false_positives + tally.id_switches) as f64
            / gt_boxes as f64;
    let motp = if tally.matches == 0 { 0.0 } else { tally.iou_sum / tally.matches as f64 };

    let idtp = identity_pairing_score(gt, hyp, threshold);
    let idfp = hyp_boxes - idtp;
    let idfn = gt_boxes - idtp;
    let ratio = |num: u64, den: u64| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    let idf1 = ratio(2 * idtp, 2 * idtp + idfp + idfn);
    let idp = ratio(idtp, hyp_boxes);
    let idr = ratio(idtp, gt_boxes);

    let mut mostly_tracked = 0;
    let mut mostly_lost = 0;
    for (present, matched) in tally.coverage.values() {
        // Strict 80% / 20% boundaries, kept in integer arithmetic.
        if matched * 5 > present * 4 {
            mostly_tracked += 1;
        } else if matched * 5 < *present {
            mostly_lost += 1;
        }
    }

    Ok(EvalReport {
        mota,
        motp,
        idf1,
        idp,
        idr,
        false_positives: tally.false_positives,
        false_negatives: tally.false_negatives,
        id_switches: tally.id_switches,
        matches: tally.matches,
        gt_boxes,
        hyp_boxes,
        idtp,
        idfp,
        idfn,
        gt_tracks: tally.coverage.len() as u64,
        mostly_tracked,
        mostly_lost,
    })
}
