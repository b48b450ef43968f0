use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use gmot_core::io;
use gmot_core::metrics::{self, EvalReport};

use crate::files;

#[derive(clap::Args)]
pub struct Args {
    /// Ground-truth file (MOT format)
    #[arg(long)]
    gt: PathBuf,
    /// Tracking result to score
    #[arg(long)]
    result: PathBuf,
    /// Also write the report as a flat `key = value` file
    #[arg(long)]
    report: Option<PathBuf>,
}

pub fn run(args: Args) -> Result<()> {
    let gt = io::read_mot_file(&args.gt)
        .with_context(|| format!("reading ground truth from {}", args.gt.display()))?;
    let hyp = io::read_mot_file(&args.result)
        .with_context(|| format!("reading result from {}", args.result.display()))?;
    let gt_boxes = io::boxes_by_frame(&gt.rows);
    let hyp_boxes = io::boxes_by_frame(&hyp.rows);
    let gt_last = gt_boxes.keys().next_back().copied().unwrap_or(0);
    let hyp_last = hyp_boxes.keys().next_back().copied().unwrap_or(0);
    if hyp_last > gt_last {
        bail!("result runs to frame {hyp_last} but ground truth ends at frame {gt_last}");
    }

    let report = metrics::evaluate(&gt_boxes, &hyp_boxes, 0.5)?;
    print!("{}", human_table(&report));
    if let Some(path) = &args.report {
        files::write_text_atomic(path, &machine_report(&report))?;
    }
    Ok(())
}

/// Percentages for the rate metrics (Table-style display), raw counts below.
fn human_table(r: &EvalReport) -> String {
    let mut s = String::new();
    writeln!(s, "MOTA  {:6.2}", 100.0 * r.mota).unwrap();
    writeln!(s, "MOTP  {:6.2}", 100.0 * r.motp).unwrap();
    writeln!(s, "IDF1  {:6.2}", 100.0 * r.idf1).unwrap();
    writeln!(s, "IDP   {:6.2}", 100.0 * r.idp).unwrap();
    writeln!(s, "IDR   {:6.2}", 100.0 * r.idr).unwrap();
    writeln!(s, "IDSW  {:6}", r.id_switches).unwrap();
    writeln!(s, "FP    {:6}", r.false_positives).unwrap();
    writeln!(s, "FN    {:6}", r.false_negatives).unwrap();
    writeln!(s, "MT    {:6}", r.mostly_tracked).unwrap();
    writeln!(s, "ML    {:6}", r.mostly_lost).unwrap();
    writeln!(s, "boxes {} gt / {} hyp, {} matched", r.gt_boxes, r.hyp_boxes, r.matches).unwrap();
    s
}

/// Raw fractions and counts, one key per line, stable ordering.
fn machine_report(r: &EvalReport) -> String {
    let mut s = String::new();
    writeln!(s, "mota = {}", r.mota).unwrap();
    writeln!(s, "motp = {}", r.motp).unwrap();
    writeln!(s, "idf1 = {}", r.idf1).unwrap();
    writeln!(s, "idp = {}", r.idp).unwrap();
    writeln!(s, "idr = {}", r.idr).unwrap();
    writeln!(s, "id_switches = {}", r.id_switches).unwrap();
    writeln!(s, "false_positives = {}", r.false_positives).unwrap();
    writeln!(s, "false_negatives = {}", r.false_negatives).unwrap();
    writeln!(s, "matches = {}", r.matches).unwrap();
    writeln!(s, "gt_boxes = {}", r.gt_boxes).unwrap();
    writeln!(s, "hyp_boxes = {}", r.hyp_boxes).unwrap();
    writeln!(s, "idtp = {}", r.idtp).unwrap();
    writeln!(s, "idfp = {}", r.idfp).unwrap();
    writeln!(s, "idfn = {}", r.idfn).unwrap();
    writeln!(s, "gt_tracks = {}", r.gt_tracks).unwrap();
    writeln!(s, "mostly_tracked = {}", r.mostly_tracked).unwrap();
    writeln!(s, "mostly_lost = {}", r.mostly_lost).unwrap();
    s
}
