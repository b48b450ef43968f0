use std::collections::BTreeSet;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use gmot_core::config::EngineConfig;
use gmot_core::{io, stmp, FeatureFlags, Tracker};

use crate::files;

#[derive(clap::Args)]
pub struct Args {
    /// Detection file (MOT format; the id column is ignored)
    #[arg(long)]
    dets: PathBuf,
    /// Output track file; the resolved config is echoed to `<out>.config`
    #[arg(long)]
    out: PathBuf,
    /// Engine config file (defaults plus GMOT_* environment otherwise)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replace the adaptive filter with a plain constant-velocity Kalman filter
    #[arg(long)]
    disable_vackf: bool,
    /// Turn off group motion compensation for occluded tracks
    #[arg(long)]
    disable_gmcs: bool,
    /// Turn off the learned trajectory-prediction fallback
    #[arg(long)]
    disable_stmp: bool,
}

pub fn run(args: Args) -> Result<()> {
    let started = Instant::now();
    let cfg = EngineConfig::load(args.config.as_deref())?;
    let data = io::read_mot_file(&args.dets)
        .with_context(|| format!("reading detections from {}", args.dets.display()))?;
    if data.was_unsorted {
        eprintln!("warning: detections arrived out of frame order; re-sorted");
    }
    if data.rows.iter().any(|r| r.frame == 0) {
        bail!("detection frames are 1-based; found frame 0");
    }

    let echo = files::with_appended_extension(&args.out, "config");
    let by_frame = io::detections_by_frame(&data.rows);
    let last_frame = by_frame.keys().next_back().copied().unwrap_or(0);
    if last_frame == 0 {
        io::write_mot_file(&args.out, &[])
            .with_context(|| format!("writing {}", args.out.display()))?;
        files::write_text_atomic(&echo, &cfg.render())?;
        println!("0 tracks over 0 frames in {:.2}s -> {}", started.elapsed().as_secs_f64(), args.out.display());
        return Ok(());
    }

    let flags = FeatureFlags {
        vackf: !args.disable_vackf,
        gmcs: !args.disable_gmcs,
        stmp: !args.disable_stmp,
    };
    let mut tracker = Tracker::new(cfg.assoc, cfg.noise, flags, cfg.sequence_meta(last_frame))?;
    if flags.stmp {
        if let Some(path) = &cfg.stmp_checkpoint {
            let net = stmp::load_checkpoint(path)
                .with_context(|| format!("loading predictor checkpoint {}", path.display()))?;
            tracker.set_predictor(net);
        }
    }

    let empty = Vec::new();
    let mut outputs = Vec::new();
    for frame in 1..=last_frame {
        let dets = by_frame.get(&frame).unwrap_or(&empty);
        outputs.extend(tracker.step(frame, dets)?);
    }

    let rows = io::track_outputs_to_rows(&outputs);
    let ids: BTreeSet<i64> = rows.iter().map(|r| r.id).collect();
    io::write_mot_file(&args.out, &rows)
        .with_context(|| format!("writing {}", args.out.display()))?;
    files::write_text_atomic(&echo, &cfg.render())?;
    println!(
        "{} tracks over {} frames in {:.2}s -> {}",
        ids.len(),
        last_frame,
        started.elapsed().as_secs_f64(),
        args.out.display()
    );
    Ok(())
}
