use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};
use gmot_core::ablation::{self, BenchOptions, VariantResult};
use gmot_core::config::{ConfigError, EngineConfig};
use gmot_core::scenesim::SceneConfig;

use crate::files;

#[derive(clap::Args)]
pub struct Args {
    /// Scenes per variant (seeds base .. base+seeds)
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    /// Worker threads for the per-seed runs (default: all cores)
    #[arg(long)]
    jobs: Option<usize>,
    /// Scene config file (defaults otherwise)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also write the table to a file
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(args: Args) -> Result<()> {
    let scene = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| ConfigError::Io(format!("{}: {e}", p.display())))?;
            SceneConfig::parse(&text)?
        }
        None => SceneConfig::default(),
    };
    // Engine knobs stay at their defaults for the standard benchmark, but
    // GMOT_* environment overrides still apply.
    let engine = EngineConfig::load(None)?;

    let started = Instant::now();
    let opts = BenchOptions { seeds: args.seeds, jobs: args.jobs, ..BenchOptions::default() };
    let results = ablation::ablation(&scene, &engine.assoc, &engine.noise, &opts)
        .context("running the ablation benchmark")?;
    let table = render(&results, args.seeds, started.elapsed().as_secs_f64());
    print!("{table}");
    if let Some(path) = &args.out {
        files::write_text_atomic(path, &table)?;
    }
    Ok(())
}

fn render(results: &[VariantResult], seeds: u64, elapsed: f64) -> String {
    let mut s = String::new();
    writeln!(s, "{:<17} {:>10} {:>8} {:>8}   ({seeds} seeds)", "variant", "mean IDSW", "IDF1", "MOTA")
        .unwrap();
    for r in results {
        writeln!(
            s,
            "{:<17} {:>10.2} {:>8.2} {:>8.2}",
            r.name,
            r.mean_id_switches,
            100.0 * r.mean_idf1,
            100.0 * r.mean_mota
        )
        .unwrap();
    }
    writeln!(s, "elapsed {elapsed:.1}s").unwrap();
    s
}
