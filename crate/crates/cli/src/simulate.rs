use std::path::PathBuf;

use anyhow::{Context, Result};
use gmot_core::config::ConfigError;
use gmot_core::io;
use gmot_core::scenesim::{self, SceneConfig};

use crate::files;

#[derive(clap::Args)]
pub struct Args {
    /// Directory for gt.txt, det.txt and scene.config
    #[arg(long)]
    out_dir: PathBuf,
    /// Scene config file (defaults otherwise)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the scene seed
    #[arg(long)]
    seed: Option<u64>,
}

pub fn run(args: Args) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| ConfigError::Io(format!("{}: {e}", p.display())))?;
            SceneConfig::parse(&text)?
        }
        None => SceneConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let scene = scenesim::generate(&cfg)?;

    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    io::write_mot_file(&args.out_dir.join("gt.txt"), &files::gt_rows(&scene))?;
    io::write_mot_file(&args.out_dir.join("det.txt"), &files::det_rows(&scene))?;
    files::write_text_atomic(&args.out_dir.join("scene.config"), &cfg.render())?;
    println!(
        "{} targets over {} frames, {} occlusion windows, seed {} -> {}",
        cfg.total_targets(),
        cfg.frames,
        scene.windows.len(),
        cfg.seed,
        args.out_dir.display()
    );
    Ok(())
}
