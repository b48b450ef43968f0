//! Feature-ablation study: run the tracker over seeded synthetic scenes with
//! progressively more estimation stages enabled and compare identity
//! metrics. The stages are cumulative — baseline linear KF, then the
//! adaptive cubature filter, then group motion compensation, then the
//! trajectory predictor — so the deltas attribute improvements to one stage
//! at a time.

use rayon::prelude::*;
use thiserror::Error;

use crate::association::{AssocConfig, FeatureFlags, TrackError, TrackOutput, Tracker};
use crate::config::ConfigError;
use crate::metrics::{evaluate, FrameBoxes, MetricsError};
use crate::scenesim::{detections_map, generate, gt_frame_boxes, gt_trajectories, SceneConfig, SceneData};
use crate::stmp::{self, CascadeConfig, CascadeNet, StmpError, TrainOptions};
use crate::vackf::NoiseConfig;

#[derive(Debug, Error)]
pub enum AblationError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Train(#[from] StmpError),
    #[error(transparent)]
    Track(#[from] TrackError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("thread pool: {0}")]
    Pool(String),
}

/// The cumulative variants, in evaluation order.
pub const VARIANTS: [(&str, FeatureFlags); 4] = [
    ("baseline-kf", FeatureFlags { vackf: false, gmcs: false, stmp: false }),
    ("vackf", FeatureFlags { vackf: true, gmcs: false, stmp: false }),
    ("vackf-gmcs", FeatureFlags { vackf: true, gmcs: true, stmp: false }),
    ("vackf-gmcs-stmp", FeatureFlags { vackf: true, gmcs: true, stmp: true }),
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchOptions {
    /// Number of evaluation scenes (seeds `base.seed .. base.seed + seeds`).
    pub seeds: u64,
    /// Worker threads; `None` uses the global pool.
    pub jobs: Option<usize>,
    /// Scenes used to train the trajectory predictor (disjoint seeds).
    pub train_scenes: u64,
    pub train_epochs: usize,
    pub max_train_windows: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self { seeds: 20, jobs: None, train_scenes: 6, train_epochs: 160, max_train_windows: 8000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeedOutcome {
    pub seed: u64,
    pub id_switches: u64,
    pub idf1: f64,
    pub mota: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantResult {
    pub name: &'static str,
    pub flags: FeatureFlags,
    pub mean_id_switches: f64,
    pub mean_idf1: f64,
    pub mean_mota: f64,
    pub outcomes: Vec<SeedOutcome>,
}

pub fn outputs_frame_boxes(outputs: &[TrackOutput]) -> FrameBoxes {
    let mut out = FrameBoxes::new();
    for o in outputs {
        out.entry(o.frame).or_default().push((o.id as i64, o.bbox));
    }
    out
}

/// Runs the tracker over a generated scene, frame by frame.
pub fn run_scene(
    scene: &SceneData,
    assoc: &AssocConfig,
    noise: &NoiseConfig,
    flags: FeatureFlags,
    predictor: Option<&CascadeNet>,
) -> Result<Vec<TrackOutput>, TrackError> {
    let mut tracker = Tracker::new(*assoc, *noise, flags, scene.meta.clone())?;
    if let Some(net) = predictor {
        tracker.set_predictor(net.clone());
    }
    let dets = detections_map(scene);
    let mut out = Vec::new();
    for frame in 1..=scene.meta.frame_count {
        let frame_dets = dets.get(&frame).map_or(&[][..], |v| v.as_slice());
        out.extend(tracker.step(frame, frame_dets)?);
    }
    Ok(out)
}

/// Trains a compact predictor on ground-truth trajectories from scenes with
/// seeds disjoint from the evaluation seeds. Deterministic.
pub fn train_scene_predictor(
    base: &SceneConfig,
    opts: &BenchOptions,
) -> Result<CascadeNet, AblationError> {
    let cascade = CascadeConfig { hidden: [32, 16, 8], steps: [8, 4, 2], fc_hidden: 16 };
    let mut samples = Vec::new();
    for i in 0..opts.train_scenes.max(1) {
        let mut cfg = base.clone();
        cfg.seed = base.seed + 9000 + i;
        let scene = generate(&cfg)?;
        samples.extend(stmp::extract_windows(
            &gt_trajectories(&scene),
            &scene.meta,
            cascade.window(),
        ));
    }
    if samples.len() > opts.max_train_windows {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(base.seed ^ 0x5eed);
        samples.shuffle(&mut rng);
        samples.truncate(opts.max_train_windows);
    }
    let mut net = CascadeNet::init(cascade, 99)?;
    let train_opts = TrainOptions {
        epochs: opts.train_epochs,
        lr0: 0.03,
        batch_size: 64,
        seed: 7,
    };
    stmp::train(&mut net, &samples, &train_opts)?;
    Ok(net)
}

/// Full ablation: train the predictor once, then evaluate every variant on
/// every seed. Seeds run in parallel; results are reduced in seed order, so
/// the outcome does not depend on scheduling.
pub fn ablation(
    base: &SceneConfig,
    assoc: &AssocConfig,
    noise: &NoiseConfig,
    opts: &BenchOptions,
) -> Result<Vec<VariantResult>, AblationError> {
    base.validate()?;
    assoc.validate()?;
    let net = train_scene_predictor(base, opts)?;

    let run_all = || -> Result<Vec<Vec<SeedOutcome>>, AblationError> {
        (0..opts.seeds)
            .into_par_iter()
            .map(|i| {
                let mut cfg = base.clone();
                cfg.seed = base.seed + i;
                let scene = generate(&cfg)?;
                let gt = gt_frame_boxes(&scene);
                VARIANTS
                    .iter()
                    .map(|(_, flags)| {
                        let outputs = run_scene(
                            &scene,
                            assoc,
                            noise,
                            *flags,
                            flags.stmp.then_some(&net),
                        )?;
                        let report = evaluate(&gt, &outputs_frame_boxes(&outputs), 0.5)?;
                        Ok(SeedOutcome {
                            seed: cfg.seed,
                            id_switches: report.id_switches,
                            idf1: report.idf1,
                            mota: report.mota,
                        })
                    })
                    .collect()
            })
            .collect()
    };
    let per_seed = match opts.jobs {
        Some(jobs) => rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| AblationError::Pool(e.to_string()))?
            .install(run_all),
        None => run_all(),
    }?;

    Ok(VARIANTS
        .iter()
        .enumerate()
        .map(|(vi, (name, flags))| {
            let outcomes: Vec<SeedOutcome> = per_seed.iter().map(|seed| seed[vi]).collect();
            let n = outcomes.len().max(1) as f64;
            VariantResult {
                name,
                flags: *flags,
                mean_id_switches: outcomes.iter().map(|o| o.id_switches as f64).sum::<f64>() / n,
                mean_idf1: outcomes.iter().map(|o| o.idf1).sum::<f64>() / n,
                mean_mota: outcomes.iter().map(|o| o.mota).sum::<f64>() / n,
                outcomes,
            }
        })
        .collect())
}
