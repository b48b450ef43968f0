use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use gmot_core::config::EngineConfig;
use gmot_core::io;
use gmot_core::stmp::{self, CascadeNet, TrainOptions, TrainSample};

#[derive(clap::Args)]
pub struct Args {
    /// Ground-truth track file to learn motion from
    #[arg(long)]
    gt: PathBuf,
    /// Where to write the checkpoint
    #[arg(long)]
    out: PathBuf,
    /// Engine config (cascade architecture, image size)
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    /// Initial learning rate of the cosine schedule
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    /// Weight init and shuffle seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fraction of windows held out for evaluation
    #[arg(long, default_value_t = 0.2)]
    holdout: f64,
}

pub fn run(args: Args) -> Result<()> {
    if !(args.holdout > 0.0 && args.holdout < 1.0) {
        bail!("--holdout must be in (0, 1), got {}", args.holdout);
    }
    let cfg = EngineConfig::load(args.config.as_deref())?;
    let data = io::read_mot_file(&args.gt)
        .with_context(|| format!("reading ground truth from {}", args.gt.display()))?;
    let last_frame = data.rows.iter().map(|r| r.frame).max().unwrap_or(0);
    let meta = cfg.sequence_meta(last_frame);
    let window = cfg.cascade.window();
    let trajectories = io::trajectories(&data.rows);
    let samples = stmp::extract_windows(&trajectories, &meta, window);
    if samples.is_empty() {
        bail!("no trainable windows: need tracks with at least {} consecutive frames", window + 1);
    }

    // Interleaved split: every k-th window is held out, so both sets span
    // all tracks and all of the sequence.
    let stride = ((1.0 / args.holdout).round() as usize).max(2);
    let (holdout, train): (Vec<(usize, &TrainSample)>, Vec<(usize, &TrainSample)>) =
        samples.iter().enumerate().partition(|(i, _)| i % stride == 0);
    let train: Vec<TrainSample> = train.into_iter().map(|(_, s)| s.clone()).collect();
    let holdout: Vec<&TrainSample> = holdout.into_iter().map(|(_, s)| s).collect();

    let mut net = CascadeNet::init(cfg.cascade.clone(), args.seed)?;
    let opts = TrainOptions { epochs: args.epochs, lr0: args.lr, batch_size: 64, seed: args.seed };
    let losses = stmp::train(&mut net, &train, &opts)?;

    let mut mse_net = 0.0;
    let mut mse_last = 0.0;
    for s in &holdout {
        let pred = stmp::forward(&net, &s.input)?;
        let last = *s.input.last().expect("windows are non-empty");
        mse_net += (pred.0 - s.label.0).powi(2) + (pred.1 - s.label.1).powi(2);
        mse_last += (last.0 - s.label.0).powi(2) + (last.1 - s.label.1).powi(2);
    }
    mse_net /= holdout.len() as f64;
    mse_last /= holdout.len() as f64;

    stmp::save_checkpoint(&net, &args.out)
        .with_context(|| format!("writing checkpoint {}", args.out.display()))?;
    println!(
        "trained {} params on {} windows ({} held out), {} epochs",
        net.param_count(),
        train.len(),
        holdout.len(),
        args.epochs
    );
    println!(
        "final training loss {:.3e}; holdout mse {:.3e} vs predict-last {:.3e} ({:+.1}%)",
        losses.last().copied().unwrap_or(f64::NAN),
        mse_net,
        mse_last,
        100.0 * (mse_net - mse_last) / mse_last
    );
    println!("checkpoint -> {}", args.out.display());
    Ok(())
}
