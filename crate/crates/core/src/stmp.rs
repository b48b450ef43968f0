//! Trajectory prediction for lone tracks: a three-stage cascaded LSTM that
//! maps the last eight (normalized) centers of a track to the next one.
//!
//! Stage 1 reads the full window, stage 2 re-reads the last half of stage 1's
//! hidden states, stage 3 the last half of stage 2's — each stage sees a
//! shorter horizon at a narrower width, so recent motion dominates the final
//! summary. Two fully connected layers (ReLU between) regress the next
//! center from stage 3's last hidden state.
//!
//! Everything is trained here, in place: forward caching, backpropagation
//! through time, Adam with a cosine-annealed learning rate. The gradients are
//! exercised against central finite differences in the test suite, so the
//! backward pass is the reference implementation, not an approximation.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{SequenceMeta, Track};

#[derive(Debug, Error, PartialEq)]
pub enum StmpError {
    /// The track does not have enough consecutive recent positions.
    #[error("need {needed} consecutive positions ending at the previous frame, found {found}")]
    WindowTooShort { needed: usize, found: usize },
    /// Training loss became non-finite.
    #[error("training loss diverged at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    /// Architecture constraints violated.
    #[error("invalid cascade config: {0}")]
    InvalidConfig(String),
    /// Unreadable or inconsistent checkpoint file.
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Architecture of the cascade. Time windows must strictly shrink stage to
/// stage; hidden widths are free so that tests can run cheap square nets,
/// though the default cascade narrows 64 → 32 → 16.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CascadeConfig {
    pub hidden: [usize; 3],
    pub steps: [usize; 3],
    pub fc_hidden: usize,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self { hidden: [64, 32, 16], steps: [8, 4, 2], fc_hidden: 32 }
    }
}

impl CascadeConfig {
    pub fn validate(&self) -> Result<(), StmpError> {
        if self.hidden.iter().any(|&h| h == 0) || self.fc_hidden == 0 {
            return Err(StmpError::InvalidConfig("hidden sizes must be positive".into()));
        }
        if !(self.steps[0] > self.steps[1] && self.steps[1] > self.steps[2] && self.steps[2] >= 1) {
            return Err(StmpError::InvalidConfig(format!(
                "stage windows must strictly decrease, got {:?}",
                self.steps
            )));
        }
        Ok(())
    }

    /// Input window length (number of observed centers).
    pub fn window(&self) -> usize {
        self.steps[0]
    }
}

/// Weights of one LSTM stage. Gate blocks are stacked in the fixed order
/// input, forget, cell, output, so `w_input` is `4H × D`, `w_hidden` is
/// `4H × H` and `bias` is `4H`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmStageWeights {
    pub w_input: DMatrix<f64>,
    pub w_hidden: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl LstmStageWeights {
    fn init(input_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut w = Self {
            w_input: uniform_matrix(4 * hidden, input_dim, rng),
            w_hidden: uniform_matrix(4 * hidden, hidden, rng),
            bias: DVector::zeros(4 * hidden),
        };
        // Forget-gate bias starts at +1 so early training does not erase the
        // cell state before the gates have learned anything.
        for j in hidden..2 * hidden {
            w.bias[j] = 1.0;
        }
        w
    }

    fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            w_input: DMatrix::zeros(4 * hidden, input_dim),
            w_hidden: DMatrix::zeros(4 * hidden, hidden),
            bias: DVector::zeros(4 * hidden),
        }
    }

    fn hidden(&self) -> usize {
        self.w_hidden.ncols()
    }
}

fn uniform_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let bound = 1.0 / (cols as f64).sqrt();
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeNet {
    pub cfg: CascadeConfig,
    pub stages: [LstmStageWeights; 3],
    pub fc1_w: DMatrix<f64>,
    pub fc1_b: DVector<f64>,
    pub fc2_w: DMatrix<f64>,
    pub fc2_b: DVector<f64>,
}

impl CascadeNet {
    /// Fresh net with uniform ±1/√fan_in weights; deterministic in `seed`.
    pub fn init(cfg: CascadeConfig, seed: u64) -> Result<Self, StmpError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stages = [
            LstmStageWeights::init(2, cfg.hidden[0], &mut rng),
            LstmStageWeights::init(cfg.hidden[0], cfg.hidden[1], &mut rng),
            LstmStageWeights::init(cfg.hidden[1], cfg.hidden[2], &mut rng),
        ];
        let fc1_w = uniform_matrix(cfg.fc_hidden, cfg.hidden[2], &mut rng);
        let fc2_w = uniform_matrix(2, cfg.fc_hidden, &mut rng);
        Ok(Self {
            cfg,
            stages,
            fc1_w,
            fc1_b: DVector::zeros(cfg.fc_hidden),
            fc2_w,
            fc2_b: DVector::zeros(2),
        })
    }

    /// All parameter tensors as flat slices, in a fixed order shared with
    /// [`CascadeGrads::tensors`]. Used by the optimizer and the finite
    /// difference tests.
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let Self { stages, fc1_w, fc1_b, fc2_w, fc2_b, .. } = self;
        let [s0, s1, s2] = stages;
        vec![
            s0.w_input.as_mut_slice(),
            s0.w_hidden.as_mut_slice(),
            s0.bias.as_mut_slice(),
            s1.w_input.as_mut_slice(),
            s1.w_hidden.as_mut_slice(),
            s1.bias.as_mut_slice(),
            s2.w_input.as_mut_slice(),
            s2.w_hidden.as_mut_slice(),
            s2.bias.as_mut_slice(),
            fc1_w.as_mut_slice(),
            fc1_b.as_mut_slice(),
            fc2_w.as_mut_slice(),
            fc2_b.as_mut_slice(),
        ]
    }

    pub fn param_count(&self) -> usize {
        let s = |w: &LstmStageWeights| w.w_input.len() + w.w_hidden.len() + w.bias.len();
        self.stages.iter().map(s).sum::<usize>()
            + self.fc1_w.len()
            + self.fc1_b.len()
            + self.fc2_w.len()
            + self.fc2_b.len()
    }
}

/// Gradient (or Adam moment) buffers shaped exactly like [`CascadeNet`].
#[derive(Debug, Clone)]
pub struct CascadeGrads {
    pub stages: [LstmStageWeights; 3],
    pub fc1_w: DMatrix<f64>,
    pub fc1_b: DVector<f64>,
    pub fc2_w: DMatrix<f64>,
    pub fc2_b: DVector<f64>,
}

impl CascadeGrads {
    pub fn zeros_like(net: &CascadeNet) -> Self {
        let cfg = &net.cfg;
        Self {
            stages: [
                LstmStageWeights::zeros(2, cfg.hidden[0]),
                LstmStageWeights::zeros(cfg.hidden[0], cfg.hidden[1]),
                LstmStageWeights::zeros(cfg.hidden[1], cfg.hidden[2]),
            ],
            fc1_w: DMatrix::zeros(cfg.fc_hidden, cfg.hidden[2]),
            fc1_b: DVector::zeros(cfg.fc_hidden),
            fc2_w: DMatrix::zeros(2, cfg.fc_hidden),
            fc2_b: DVector::zeros(2),
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let Self { stages, fc1_w, fc1_b, fc2_w, fc2_b } = self;
        let [s0, s1, s2] = stages;
        vec![
            s0.w_input.as_mut_slice(),
            s0.w_hidden.as_mut_slice(),
            s0.bias.as_mut_slice(),
            s1.w_input.as_mut_slice(),
            s1.w_hidden.as_mut_slice(),
            s1.bias.as_mut_slice(),
            s2.w_input.as_mut_slice(),
            s2.w_hidden.as_mut_slice(),
            s2.bias.as_mut_slice(),
            fc1_w.as_mut_slice(),
            fc1_b.as_mut_slice(),
            fc2_w.as_mut_slice(),
            fc2_b.as_mut_slice(),
        ]
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        vec![
            self.stages[0].w_input.as_slice(),
            self.stages[0].w_hidden.as_slice(),
            self.stages[0].bias.as_slice(),
            self.stages[1].w_input.as_slice(),
            self.stages[1].w_hidden.as_slice(),
            self.stages[1].bias.as_slice(),
            self.stages[2].w_input.as_slice(),
            self.stages[2].w_hidden.as_slice(),
            self.stages[2].bias.as_slice(),
            self.fc1_w.as_slice(),
            self.fc1_b.as_slice(),
            self.fc2_w.as_slice(),
            self.fc2_b.as_slice(),
        ]
    }

    fn zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One LSTM cell step; returns `(h', c')`.
pub fn lstm_cell(
    x: &DVector<f64>,
    h: &DVector<f64>,
    c: &DVector<f64>,
    w: &LstmStageWeights,
) -> (DVector<f64>, DVector<f64>) {
    let hd = w.hidden();
    let z = &w.w_input * x + &w.w_hidden * h + &w.bias;
    let mut h_out = DVector::zeros(hd);
    let mut c_out = DVector::zeros(hd);
    for j in 0..hd {
        let i = sigmoid(z[j]);
        let f = sigmoid(z[hd + j]);
        let g = z[2 * hd + j].tanh();
        let o = sigmoid(z[3 * hd + j]);
        c_out[j] = f * c[j] + i * g;
        h_out[j] = o * c_out[j].tanh();
    }
    (h_out, c_out)
}

/// Per-stage forward cache: inputs, states (index 0 holds the zero initial
/// state) and gate activations for every step.
struct StageCache {
    inputs: Vec<DVector<f64>>,
    h: Vec<DVector<f64>>,
    c: Vec<DVector<f64>>,
    gi: Vec<DVector<f64>>,
    gf: Vec<DVector<f64>>,
    gg: Vec<DVector<f64>>,
    go: Vec<DVector<f64>>,
    tanh_c: Vec<DVector<f64>>,
}

fn run_stage(w: &LstmStageWeights, inputs: Vec<DVector<f64>>) -> StageCache {
    let hd = w.hidden();
    let steps = inputs.len();
    let mut cache = StageCache {
        inputs,
        h: vec![DVector::zeros(hd)],
        c: vec![DVector::zeros(hd)],
        gi: Vec::with_capacity(steps),
        gf: Vec::with_capacity(steps),
        gg: Vec::with_capacity(steps),
        go: Vec::with_capacity(steps),
        tanh_c: Vec::with_capacity(steps),
    };
    for t in 0..steps {
        let z = &w.w_input * &cache.inputs[t] + &w.w_hidden * &cache.h[t] + &w.bias;
        let mut gi = DVector::zeros(hd);
        let mut gf = DVector::zeros(hd);
        let mut gg = DVector::zeros(hd);
        let mut go = DVector::zeros(hd);
        let mut c = DVector::zeros(hd);
        let mut tanh_c = DVector::zeros(hd);
        let mut h = DVector::zeros(hd);
        for j in 0..hd {
            gi[j] = sigmoid(z[j]);
            gf[j] = sigmoid(z[hd + j]);
            gg[j] = z[2 * hd + j].tanh();
            go[j] = sigmoid(z[3 * hd + j]);
            c[j] = gf[j] * cache.c[t][j] + gi[j] * gg[j];
            tanh_c[j] = c[j].tanh();
            h[j] = go[j] * tanh_c[j];
        }
        cache.gi.push(gi);
        cache.gf.push(gf);
        cache.gg.push(gg);
        cache.go.push(go);
        cache.tanh_c.push(tanh_c);
        cache.c.push(c);
        cache.h.push(h);
    }
    cache
}

struct ForwardCache {
    s1: StageCache,
    s2: StageCache,
    s3: StageCache,
    fc1_pre: DVector<f64>,
    fc1_act: DVector<f64>,
    out: (f64, f64),
}

fn forward_cached(net: &CascadeNet, window: &[(f64, f64)]) -> Result<ForwardCache, StmpError> {
    let needed = net.cfg.window();
    if window.len() != needed {
        return Err(StmpError::WindowTooShort { needed, found: window.len() });
    }
    let inputs1: Vec<DVector<f64>> =
        window.iter().map(|&(x, y)| DVector::from_vec(vec![x, y])).collect();
    let s1 = run_stage(&net.stages[0], inputs1);
    // Each later stage re-reads the tail of the previous stage's hidden states.
    let tail2 = s1.h.len() - net.cfg.steps[1]..s1.h.len();
    let s2 = run_stage(&net.stages[1], s1.h[tail2].to_vec());
    let tail3 = s2.h.len() - net.cfg.steps[2]..s2.h.len();
    let s3 = run_stage(&net.stages[2], s2.h[tail3].to_vec());

    let final_h = s3.h.last().expect("stage 3 ran");
    let fc1_pre = &net.fc1_w * final_h + &net.fc1_b;
    let fc1_act = fc1_pre.map(|v| v.max(0.0));
    let out_v = &net.fc2_w * &fc1_act + &net.fc2_b;
    Ok(ForwardCache { s1, s2, s3, fc1_pre, fc1_act, out: (out_v[0], out_v[1]) })
}

/// Predicts the next normalized center from a normalized window of exactly
/// `cfg.window()` centers.
pub fn forward(net: &CascadeNet, window: &[(f64, f64)]) -> Result<(f64, f64), StmpError> {
    forward_cached(net, window).map(|c| c.out)
}

/// BPTT through one stage. `d_h_ext[t]` is the external gradient arriving at
/// the hidden state of step `t` (from the next stage or the head); gradients
/// w.r.t. this stage's inputs are returned for the previous stage.
fn backprop_stage(
    w: &LstmStageWeights,
    cache: &StageCache,
    d_h_ext: &[Option<DVector<f64>>],
    grads: &mut LstmStageWeights,
) -> Vec<DVector<f64>> {
    let hd = w.hidden();
    let steps = cache.inputs.len();
    let mut d_inputs = vec![DVector::zeros(cache.inputs[0].len()); steps];
    let mut dh_rec = DVector::<f64>::zeros(hd);
    let mut dc_next = DVector::<f64>::zeros(hd);
    for t in (0..steps).rev() {
        let mut dh = dh_rec.clone();
        if let Some(ext) = &d_h_ext[t] {
            dh += ext;
        }
        let (gi, gf, gg, go, tanh_c) =
            (&cache.gi[t], &cache.gf[t], &cache.gg[t], &cache.go[t], &cache.tanh_c[t]);
        let c_prev = &cache.c[t];
        let mut dz = DVector::<f64>::zeros(4 * hd);
        let mut dc_prev = DVector::<f64>::zeros(hd);
        for j in 0..hd {
            let d_o = dh[j] * tanh_c[j];
            let dc = dh[j] * go[j] * (1.0 - tanh_c[j] * tanh_c[j]) + dc_next[j];
            let d_i = dc * gg[j];
            let d_f = dc * c_prev[j];
            let d_g = dc * gi[j];
            dc_prev[j] = dc * gf[j];
            dz[j] = d_i * gi[j] * (1.0 - gi[j]);
            dz[hd + j] = d_f * gf[j] * (1.0 - gf[j]);
            dz[2 * hd + j] = d_g * (1.0 - gg[j] * gg[j]);
            dz[3 * hd + j] = d_o * go[j] * (1.0 - go[j]);
        }
        grads.w_input += &dz * cache.inputs[t].transpose();
        grads.w_hidden += &dz * cache.h[t].transpose();
        grads.bias += &dz;
        d_inputs[t] = w.w_input.transpose() * &dz;
        dh_rec = w.w_hidden.transpose() * &dz;
        dc_next = dc_prev;
    }
    d_inputs
}

/// Accumulates `d(loss)/d(params)` into `grads` for one sample, given
/// `d_out = d(loss)/d(prediction)`.
fn backward(net: &CascadeNet, cache: &ForwardCache, d_out: (f64, f64), grads: &mut CascadeGrads) {
    let d_out_v = DVector::from_vec(vec![d_out.0, d_out.1]);
    grads.fc2_w += &d_out_v * cache.fc1_act.transpose();
    grads.fc2_b += &d_out_v;
    let d_act = net.fc2_w.transpose() * &d_out_v;
    let d_pre =
        DVector::from_fn(d_act.len(), |j, _| if cache.fc1_pre[j] > 0.0 { d_act[j] } else { 0.0 });
    let final_h = cache.s3.h.last().expect("forward ran");
    grads.fc1_w += &d_pre * final_h.transpose();
    grads.fc1_b += &d_pre;
    let d_final_h = net.fc1_w.transpose() * &d_pre;

    // Stage 3: only its last hidden state feeds the head.
    let mut ext3: Vec<Option<DVector<f64>>> = vec![None; cache.s3.inputs.len()];
    *ext3.last_mut().expect("stage 3 nonempty") = Some(d_final_h);
    let d_in3 = backprop_stage(&net.stages[2], &cache.s3, &ext3, &mut grads.stages[2]);

    // Stage 2: its last steps[2] hidden states were stage 3's inputs.
    let n2 = cache.s2.inputs.len();
    let mut ext2: Vec<Option<DVector<f64>>> = vec![None; n2];
    for (k, d) in d_in3.into_iter().enumerate() {
        ext2[n2 - cache.s3.inputs.len() + k] = Some(d);
    }
    let d_in2 = backprop_stage(&net.stages[1], &cache.s2, &ext2, &mut grads.stages[1]);

    // Stage 1: its last steps[1] hidden states were stage 2's inputs.
    let n1 = cache.s1.inputs.len();
    let mut ext1: Vec<Option<DVector<f64>>> = vec![None; n1];
    for (k, d) in d_in2.into_iter().enumerate() {
        ext1[n1 - n2 + k] = Some(d);
    }
    backprop_stage(&net.stages[0], &cache.s1, &ext1, &mut grads.stages[0]);
}

/// Squared prediction error `dx² + dy²` of one window together with its
/// analytic parameter gradients — the unit the trainer accumulates over a
/// batch, exposed so the backward pass can be validated from outside.
pub fn sample_grads(
    net: &CascadeNet,
    input: &[(f64, f64)],
    label: (f64, f64),
) -> Result<(f64, CascadeGrads), StmpError> {
    let cache = forward_cached(net, input)?;
    let err = (cache.out.0 - label.0, cache.out.1 - label.1);
    let mut grads = CascadeGrads::zeros_like(net);
    backward(net, &cache, (2.0 * err.0, 2.0 * err.1), &mut grads);
    Ok((err.0 * err.0 + err.1 * err.1, grads))
}

/// Mean squared prediction error: average of `(dx² + dy²)` over the batch.
pub fn mse_loss(preds: &[(f64, f64)], labels: &[(f64, f64)]) -> f64 {
    assert_eq!(preds.len(), labels.len(), "batch sizes must match");
    assert!(!preds.is_empty(), "loss of an empty batch is undefined");
    let sum: f64 = preds
        .iter()
        .zip(labels)
        .map(|(p, l)| (p.0 - l.0).powi(2) + (p.1 - l.1).powi(2))
        .sum();
    sum / preds.len() as f64
}

/// One supervised window: eight normalized centers in, the ninth as label.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub input: Vec<(f64, f64)>,
    pub label: (f64, f64),
    pub track_id: i64,
    pub start_frame: u32,
}

/// Slides a `(input_len + 1)`-frame window over every maximal run of
/// consecutive frames in each trajectory. Coordinates are normalized by the
/// image dimensions; windows that leave `[0, 1]` are skipped.
pub fn extract_windows(
    trajectories: &[(i64, Vec<(u32, f64, f64)>)],
    meta: &SequenceMeta,
    input_len: usize,
) -> Vec<TrainSample> {
    let w = meta.image_width as f64;
    let h = meta.image_height as f64;
    let span = input_len + 1;
    let mut out = Vec::new();
    for (id, traj) in trajectories {
        let mut run_start = 0;
        for i in 0..=traj.len() {
            let run_ends = i == traj.len() || (i > run_start && traj[i].0 != traj[i - 1].0 + 1);
            if !run_ends {
                continue;
            }
            let run = &traj[run_start..i];
            run_start = i;
            if run.len() < span {
                continue;
            }
            for win in run.windows(span) {
                let norm: Vec<(f64, f64)> = win.iter().map(|&(_, x, y)| (x / w, y / h)).collect();
                if norm.iter().any(|&(x, y)| !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y)) {
                    continue;
                }
                out.push(TrainSample {
                    input: norm[..input_len].to_vec(),
                    label: norm[input_len],
                    track_id: *id,
                    start_frame: win[0].0,
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub lr0: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { epochs: 100, lr0: 0.01, batch_size: 64, seed: 0 }
    }
}

struct Adam {
    m: CascadeGrads,
    v: CascadeGrads,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(net: &CascadeNet) -> Self {
        Self { m: CascadeGrads::zeros_like(net), v: CascadeGrads::zeros_like(net), t: 0 }
    }

    fn step(&mut self, net: &mut CascadeNet, grads: &CascadeGrads, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.t);
        let bc2 = 1.0 - Self::BETA2.powi(self.t);
        let params = net.tensors_mut();
        let gs = grads.tensors();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, g), m), v) in params.into_iter().zip(gs).zip(ms).zip(vs) {
            for k in 0..p.len() {
                m[k] = Self::BETA1 * m[k] + (1.0 - Self::BETA1) * g[k];
                v[k] = Self::BETA2 * v[k] + (1.0 - Self::BETA2) * g[k] * g[k];
                p[k] -= lr * (m[k] / bc1) / ((v[k] / bc2).sqrt() + Self::EPS);
            }
        }
    }
}

/// Trains the net in place with mini-batch Adam and a cosine-annealed
/// learning rate (`lr0 · (1 + cos(π·e/epochs)) / 2`). Returns the per-epoch
/// mean training loss. Fully deterministic in `opts.seed`.
pub fn train(
    net: &mut CascadeNet,
    samples: &[TrainSample],
    opts: &TrainOptions,
) -> Result<Vec<f64>, StmpError> {
    assert!(!samples.is_empty(), "cannot train on an empty sample set");
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut adam = Adam::new(net);
    let mut grads = CascadeGrads::zeros_like(net);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut losses = Vec::with_capacity(opts.epochs);
    for epoch in 0..opts.epochs {
        let lr = opts.lr0 * (1.0 + (std::f64::consts::PI * epoch as f64 / opts.epochs as f64).cos())
            / 2.0;
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(opts.batch_size.max(1)) {
            grads.zero();
            let scale = 2.0 / batch.len() as f64;
            for &idx in batch {
                let sample = &samples[idx];
                let cache = forward_cached(net, &sample.input)?;
                let err = (cache.out.0 - sample.label.0, cache.out.1 - sample.label.1);
                loss_sum += err.0 * err.0 + err.1 * err.1;
                backward(net, &cache, (scale * err.0, scale * err.1), &mut grads);
            }
            adam.step(net, &grads, lr);
        }
        let epoch_loss = loss_sum / samples.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(StmpError::DivergedLoss { epoch });
        }
        losses.push(epoch_loss);
    }
    Ok(losses)
}

/// Predicts the center of `track` at `frame` from its last `cfg.window()`
/// consecutive history positions (which must end at `frame - 1`). The result
/// is denormalized and clamped to `[-0.5, 1.5] ×` the image extent.
pub fn predict_center(
    net: &CascadeNet,
    track: &Track,
    meta: &SequenceMeta,
    frame: u32,
) -> Result<(f64, f64), StmpError> {
    let needed = net.cfg.window();
    let prev = frame.checked_sub(1).filter(|f| *f > 0).ok_or(StmpError::WindowTooShort {
        needed,
        found: 0,
    })?;
    let positions = track.consecutive_positions(prev, needed).ok_or_else(|| {
        StmpError::WindowTooShort { needed, found: track.history.len().min(needed - 1) }
    })?;
    let w = meta.image_width as f64;
    let h = meta.image_height as f64;
    let window: Vec<(f64, f64)> = positions.iter().map(|p| (p.x / w, p.y / h)).collect();
    let (nx, ny) = forward(net, &window)?;
    Ok(((nx * w).clamp(-0.5 * w, 1.5 * w), (ny * h).clamp(-0.5 * h, 1.5 * h)))
}

/// Writes a human-readable, bit-exact checkpoint: an architecture header
/// followed by one `tensor <name> <rows> <cols>` block per parameter tensor
/// (row-major, one row per line, shortest round-trip float formatting).
pub fn save_checkpoint(net: &CascadeNet, path: &Path) -> Result<(), StmpError> {
    let mut text = String::new();
    let cfg = &net.cfg;
    text.push_str("stmp-cascade v1\n");
    writeln!(text, "hidden {} {} {}", cfg.hidden[0], cfg.hidden[1], cfg.hidden[2]).unwrap();
    writeln!(text, "steps {} {} {}", cfg.steps[0], cfg.steps[1], cfg.steps[2]).unwrap();
    writeln!(text, "fc_hidden {}", cfg.fc_hidden).unwrap();
    let mut tensor = |name: &str, rows: usize, cols: usize, data: &dyn Fn(usize, usize) -> f64| {
        writeln!(text, "tensor {name} {rows} {cols}").unwrap();
        for r in 0..rows {
            for c in 0..cols {
                if c > 0 {
                    text.push(' ');
                }
                write!(text, "{}", data(r, c)).unwrap();
            }
            text.push('\n');
        }
    };
    for (i, s) in net.stages.iter().enumerate() {
        let n = i + 1;
        tensor(&format!("stage{n}.w_input"), s.w_input.nrows(), s.w_input.ncols(), &|r, c| {
            s.w_input[(r, c)]
        });
        tensor(&format!("stage{n}.w_hidden"), s.w_hidden.nrows(), s.w_hidden.ncols(), &|r, c| {
            s.w_hidden[(r, c)]
        });
        tensor(&format!("stage{n}.bias"), s.bias.len(), 1, &|r, _| s.bias[r]);
    }
    tensor("fc1.w", net.fc1_w.nrows(), net.fc1_w.ncols(), &|r, c| net.fc1_w[(r, c)]);
    tensor("fc1.b", net.fc1_b.len(), 1, &|r, _| net.fc1_b[r]);
    tensor("fc2.w", net.fc2_w.nrows(), net.fc2_w.ncols(), &|r, c| net.fc2_w[(r, c)]);
    tensor("fc2.b", net.fc2_b.len(), 1, &|r, _| net.fc2_b[r]);

    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text).map_err(|e| StmpError::Checkpoint(e.to_string()))?;
    std::fs::rename(&tmp, path).map_err(|e| StmpError::Checkpoint(e.to_string()))
}

pub fn load_checkpoint(path: &Path) -> Result<CascadeNet, StmpError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| StmpError::Checkpoint(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate();
    let bad = |line: usize, msg: &str| StmpError::Checkpoint(format!("line {}: {msg}", line + 1));

    let (_, magic) = lines.next().ok_or_else(|| bad(0, "empty file"))?;
    if magic.trim() != "stmp-cascade v1" {
        return Err(bad(0, "unrecognized header"));
    }
    let mut header = |key: &str| -> Result<Vec<usize>, StmpError> {
        let (ln, line) = lines.next().ok_or_else(|| bad(0, "truncated header"))?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(bad(ln, &format!("expected `{key}`")));
        }
        parts
            .map(|p| p.parse::<usize>().map_err(|_| bad(ln, "bad integer")))
            .collect()
    };
    let hidden = header("hidden")?;
    let steps = header("steps")?;
    let fc = header("fc_hidden")?;
    if hidden.len() != 3 || steps.len() != 3 || fc.len() != 1 {
        return Err(bad(1, "malformed architecture header"));
    }
    let cfg = CascadeConfig {
        hidden: [hidden[0], hidden[1], hidden[2]],
        steps: [steps[0], steps[1], steps[2]],
        fc_hidden: fc[0],
    };
    cfg.validate()?;

    let mut net = CascadeNet::init(cfg, 0)?;
    let expected: Vec<(String, usize, usize)> = {
        let mut v = Vec::new();
        for (i, s) in net.stages.iter().enumerate() {
            let n = i + 1;
            v.push((format!("stage{n}.w_input"), s.w_input.nrows(), s.w_input.ncols()));
            v.push((format!("stage{n}.w_hidden"), s.w_hidden.nrows(), s.w_hidden.ncols()));
            v.push((format!("stage{n}.bias"), s.bias.len(), 1));
        }
        v.push(("fc1.w".into(), net.fc1_w.nrows(), net.fc1_w.ncols()));
        v.push(("fc1.b".into(), net.fc1_b.len(), 1));
        v.push(("fc2.w".into(), net.fc2_w.nrows(), net.fc2_w.ncols()));
        v.push(("fc2.b".into(), net.fc2_b.len(), 1));
        v
    };
    let mut loaded: Vec<DMatrix<f64>> = Vec::with_capacity(expected.len());
    for (name, rows, cols) in &expected {
        let (ln, line) = lines.next().ok_or_else(|| bad(0, "truncated tensors"))?;
        let want = format!("tensor {name} {rows} {cols}");
        if line.trim() != want {
            return Err(bad(ln, &format!("expected `{want}`, got `{line}`")));
        }
        let mut m = DMatrix::zeros(*rows, *cols);
        for r in 0..*rows {
            let (ln, line) = lines.next().ok_or_else(|| bad(0, "truncated tensor rows"))?;
            let vals: Result<Vec<f64>, _> =
                line.split_whitespace().map(|t| t.parse::<f64>()).collect();
            let vals = vals.map_err(|_| bad(ln, "bad float"))?;
            if vals.len() != *cols {
                return Err(bad(ln, &format!("expected {cols} values, got {}", vals.len())));
            }
            for (c, v) in vals.into_iter().enumerate() {
                m[(r, c)] = v;
            }
        }
        loaded.push(m);
    }
    let mut it = loaded.into_iter();
    for s in net.stages.iter_mut() {
        s.w_input = it.next().unwrap();
        s.w_hidden = it.next().unwrap();
        s.bias = DVector::from_column_slice(it.next().unwrap().as_slice());
    }
    net.fc1_w = it.next().unwrap();
    net.fc1_b = DVector::from_column_slice(it.next().unwrap().as_slice());
    net.fc2_w = it.next().unwrap();
    net.fc2_b = DVector::from_column_slice(it.next().unwrap().as_slice());
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BBox, HistoryEntry};
    use crate::vackf::{FilterState, NoiseConfig};
    use approx::assert_relative_eq;
    use nalgebra::Vector2;

    fn meta() -> SequenceMeta {
        SequenceMeta { image_width: 1000, image_height: 1000, frame_count: 100, frame_rate: 30.0 }
    }

    fn tiny_cfg() -> CascadeConfig {
        CascadeConfig { hidden: [5, 4, 3], steps: [8, 4, 2], fc_hidden: 6 }
    }

    #[test]
    fn config_validation() {
        assert!(CascadeConfig::default().validate().is_ok());
        assert!(CascadeConfig { steps: [8, 8, 2], ..CascadeConfig::default() }.validate().is_err());
        assert!(CascadeConfig { steps: [2, 4, 8], ..CascadeConfig::default() }.validate().is_err());
        assert!(CascadeConfig { hidden: [0, 4, 2], ..CascadeConfig::default() }.validate().is_err());
        // Equal hidden widths are allowed (cheap test nets use them).
        assert!(CascadeConfig { hidden: [8, 8, 8], ..CascadeConfig::default() }.validate().is_ok());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = CascadeNet::init(tiny_cfg(), 9).unwrap();
        let b = CascadeNet::init(tiny_cfg(), 9).unwrap();
        assert_eq!(a, b);
        let c = CascadeNet::init(tiny_cfg(), 10).unwrap();
        assert_ne!(a, c);
        // ±1/sqrt(fan_in) bound on the input matrix (fan_in = 2).
        let bound = 1.0 / 2f64.sqrt();
        assert!(a.stages[0].w_input.iter().all(|v| v.abs() <= bound));
        // Forget-gate bias block is +1, the rest zero.
        let hd = tiny_cfg().hidden[0];
        for j in 0..4 * hd {
            let expect = if (hd..2 * hd).contains(&j) { 1.0 } else { 0.0 };
            assert_eq!(a.stages[0].bias[j], expect);
        }
    }

    #[test]
    fn mse_fixture() {
        assert_eq!(mse_loss(&[(0.0, 0.0)], &[(3.0, 4.0)]), 25.0);
        assert_eq!(mse_loss(&[(1.0, 1.0), (0.0, 0.0)], &[(1.0, 1.0), (0.0, 3.0)]), 4.5);
    }

    #[test]
    fn forward_rejects_wrong_window() {
        let net = CascadeNet::init(tiny_cfg(), 1).unwrap();
        let short = vec![(0.1, 0.1); 7];
        assert!(matches!(
            forward(&net, &short),
            Err(StmpError::WindowTooShort { needed: 8, found: 7 })
        ));
        assert!(forward(&net, &vec![(0.1, 0.1); 8]).is_ok());
    }

    #[test]
    fn extract_windows_slides_over_runs() {
        // 12 consecutive frames → 4 windows of 9.
        let traj: Vec<(u32, f64, f64)> =
            (1..=12).map(|f| (f, 10.0 * f as f64, 500.0)).collect();
        let samples = extract_windows(&[(7, traj)], &meta(), 8);
        assert_eq!(samples.len(), 4);
        assert_eq!(samples[0].start_frame, 1);
        assert_eq!(samples[3].start_frame, 4);
        assert_eq!(samples[0].track_id, 7);
        assert_relative_eq!(samples[0].input[0].0, 0.01, epsilon = 1e-12);
        assert_relative_eq!(samples[0].label.0, 0.09, epsilon = 1e-12);
        assert_relative_eq!(samples[0].label.1, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn extract_windows_respects_gaps_and_bounds() {
        // A gap at frame 7 splits the trajectory into runs of 6 — too short.
        let mut traj: Vec<(u32, f64, f64)> = (1..=6).map(|f| (f, 100.0, 100.0)).collect();
        traj.extend((8..=13).map(|f| (f, 100.0, 100.0)));
        assert!(extract_windows(&[(1, traj)], &meta(), 8).is_empty());
        // Out-of-image coordinates are skipped.
        let outside: Vec<(u32, f64, f64)> = (1..=9).map(|f| (f, -5.0, 100.0)).collect();
        assert!(extract_windows(&[(1, outside)], &meta(), 8).is_empty());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = tiny_cfg();
        let net = CascadeNet::init(cfg, 42).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<TrainSample> = (0..3)
            .map(|k| TrainSample {
                input: (0..8).map(|_| (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0))).collect(),
                label: (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)),
                track_id: k,
                start_frame: 1,
            })
            .collect();

        let loss_of = |n: &CascadeNet| {
            let preds: Vec<(f64, f64)> =
                samples.iter().map(|s| forward(n, &s.input).unwrap()).collect();
            let labels: Vec<(f64, f64)> = samples.iter().map(|s| s.label).collect();
            mse_loss(&preds, &labels)
        };

        let mut grads = CascadeGrads::zeros_like(&net);
        let scale = 2.0 / samples.len() as f64;
        for s in &samples {
            let cache = forward_cached(&net, &s.input).unwrap();
            let err = (cache.out.0 - s.label.0, cache.out.1 - s.label.1);
            backward(&net, &cache, (scale * err.0, scale * err.1), &mut grads);
        }

        let step = 1e-5;
        let mut worst = 0.0f64;
        let n_tensors = grads.tensors().len();
        for ti in 0..n_tensors {
            let len = grads.tensors()[ti].len();
            for k in 0..len {
                let analytic = grads.tensors()[ti][k];
                let mut plus = net.clone();
                plus.tensors_mut()[ti][k] += step;
                let mut minus = net.clone();
                minus.tensors_mut()[ti][k] -= step;
                let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * step);
                // The floor keeps central-difference rounding noise (about
                // 1e-11 at this step size) from dominating vanishing
                // gradients.
                let denom = analytic.abs().max(numeric.abs()).max(1e-6);
                let rel = (analytic - numeric).abs() / denom;
                worst = worst.max(rel);
                assert!(
                    rel < 1e-4,
                    "tensor {ti} element {k}: analytic {analytic} vs numeric {numeric}"
                );
            }
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    fn linear_samples(n: usize, seed: u64) -> Vec<TrainSample> {
        // Constant-velocity tracks in normalized coordinates.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|k| {
                let x0 = rng.random_range(0.1..0.8);
                let y0 = rng.random_range(0.1..0.8);
                let vx = rng.random_range(-0.006..0.006);
                let vy = rng.random_range(-0.006..0.006);
                let path = |t: usize| (x0 + vx * t as f64, y0 + vy * t as f64);
                TrainSample {
                    input: (0..8).map(path).collect(),
                    label: path(8),
                    track_id: k as i64,
                    start_frame: 1,
                }
            })
            .collect()
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let opts = TrainOptions { epochs: 12, lr0: 0.01, batch_size: 32, seed: 5 };
        let samples = linear_samples(256, 1);
        let mut net_a = CascadeNet::init(tiny_cfg(), 7).unwrap();
        let losses_a = train(&mut net_a, &samples, &opts).unwrap();
        assert!(losses_a.last().unwrap() < &(losses_a[0] * 0.5), "loss should at least halve");

        let mut net_b = CascadeNet::init(tiny_cfg(), 7).unwrap();
        let losses_b = train(&mut net_b, &samples, &opts).unwrap();
        assert_eq!(losses_a, losses_b);
        assert_eq!(net_a, net_b, "training must be bit-for-bit reproducible");
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.stmp");
        let mut net = CascadeNet::init(tiny_cfg(), 11).unwrap();
        // Dirty a few values with non-representable decimals.
        net.fc2_b[0] = 0.1 + 0.2;
        net.stages[1].bias[3] = -1.0 / 3.0;
        save_checkpoint(&net, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(net, loaded);
        // Saving again produces identical bytes.
        let again = dir.path().join("net2.stmp");
        save_checkpoint(&loaded, &again).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }

    #[test]
    fn checkpoint_rejects_mismatched_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.stmp");
        let net = CascadeNet::init(tiny_cfg(), 11).unwrap();
        save_checkpoint(&net, &path).unwrap();
        let mut text = std::fs::read_to_string(&path).unwrap();
        text = text.replace("tensor stage1.w_input 20 2", "tensor stage1.w_input 20 3");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(StmpError::Checkpoint(_))));
    }

    fn track_with_run(start: u32, len: usize) -> Track {
        let cfg = NoiseConfig::default();
        let mut t = Track::new(1, 1, FilterState::from_detection(&BBox::new(100.0, 100.0, 20.0, 20.0), &cfg), start);
        for k in 1..len {
            t.push_history(HistoryEntry {
                frame: start + k as u32,
                position: Vector2::new(100.0 + k as f64, 100.0),
                velocity: Vector2::new(1.0, 0.0),
            });
        }
        t
    }

    #[test]
    fn predict_center_window_contract() {
        let net = CascadeNet::init(tiny_cfg(), 2).unwrap();
        let m = meta();
        // 8 consecutive entries ending at frame 8 → prediction for frame 9 works.
        let t = track_with_run(1, 8);
        assert!(predict_center(&net, &t, &m, 9).is_ok());
        // Only 7 entries → too short.
        let t7 = track_with_run(1, 7);
        assert!(matches!(predict_center(&net, &t7, &m, 8), Err(StmpError::WindowTooShort { .. })));
        // 8 entries but not ending at the previous frame → too short.
        assert!(matches!(predict_center(&net, &t, &m, 10), Err(StmpError::WindowTooShort { .. })));
    }

    #[test]
    fn predict_center_denormalizes_and_clamps() {
        let m = meta();
        let t = track_with_run(1, 8);
        // Zeroed net: output = fc2 bias. Bias (0.5, 0.25) → center (500, 250).
        let mut net = CascadeNet::init(tiny_cfg(), 2).unwrap();
        for tensor in net.tensors_mut() {
            tensor.fill(0.0);
        }
        net.fc2_b[0] = 0.5;
        net.fc2_b[1] = 0.25;
        let (x, y) = predict_center(&net, &t, &m, 9).unwrap();
        assert_relative_eq!(x, 500.0, epsilon = 1e-9);
        assert_relative_eq!(y, 250.0, epsilon = 1e-9);
        // Wild outputs clamp to [-0.5, 1.5] × image size.
        net.fc2_b[0] = 10.0;
        net.fc2_b[1] = -10.0;
        let (x, y) = predict_center(&net, &t, &m, 9).unwrap();
        assert_eq!(x, 1500.0);
        assert_eq!(y, -500.0);
    }
}
