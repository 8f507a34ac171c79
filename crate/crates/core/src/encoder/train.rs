use std::time::Instant;

use ndarray::{Array2, NdFloat};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{cast, Architecture, BatchStats, EncoderWeights, Mode};
use crate::data::{split_pixels, ParamMap, ParamRanges, THzVolume};
use crate::error::{Error, Result};
use crate::model::{self, AcquisitionConfig, PixelParams};
use crate::tra;

/// Optimization and architecture settings for [`train`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub leaky_slope: f64,
    pub train_fraction: f64,
    pub seed: u64,
    pub branch_width: usize,
    pub trunk_widths: Vec<usize>,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub align: bool,
}

impl Default for TrainConfig {
    /// 1200 epochs, batch 4096, Adam at 0.005 decayed by 0.99 every 20 epochs, 80/20 split.
    fn default() -> Self {
        let arch = Architecture::new(1);
        Self {
            epochs: 1200,
            batch_size: 4096,
            lr: 0.005,
            lr_decay_factor: 0.99,
            lr_decay_every: 20,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            leaky_slope: arch.leaky_slope,
            train_fraction: 0.8,
            seed: 0,
            branch_width: arch.branch_width,
            trunk_widths: arch.trunk_widths,
            bn_momentum: arch.bn_momentum,
            bn_eps: arch.bn_eps,
            align: arch.align,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::InvalidConfig(
                "lr_decay_factor must lie in (0, 1]".into(),
            ));
        }
        if self.lr_decay_every == 0 {
            return Err(Error::InvalidConfig("lr_decay_every must be >= 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidConfig("lr must be positive".into()));
        }
        Ok(())
    }

    pub fn architecture(&self, n_z: usize) -> Architecture {
        Architecture {
            n_z,
            branch_width: self.branch_width,
            trunk_widths: self.trunk_widths.clone(),
            leaky_slope: self.leaky_slope,
            bn_momentum: self.bn_momentum,
            bn_eps: self.bn_eps,
            align: self.align,
        }
    }
}

/// `lr₀ · decay^⌊epoch / every⌋`.
pub fn learning_rate(tc: &TrainConfig, epoch: usize) -> f64 {
    tc.lr * tc.lr_decay_factor.powi((epoch / tc.lr_decay_every) as i32)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub lr: Vec<f64>,
}

/// Mean batch loss of the encoder composed with the physics decoder, and its
/// gradient with respect to every learnable tensor.
pub fn ae_loss_and_grad<F: NdFloat>(
    w: &EncoderWeights<F>,
    batch: &[&[f64]],
    cfg: &AcquisitionConfig,
) -> Result<(f64, EncoderWeights<F>, BatchStats<F>)> {
    let enc = w.encode(batch, cfg, Mode::Train)?;
    let thetas: Vec<[f64; 4]> = enc
        .theta
        .rows()
        .into_iter()
        .map(|r| [r[0], r[1], r[2], r[3]])
        .collect();
    let per_pixel: Vec<(f64, [f64; 4])> = thetas
        .par_iter()
        .zip(batch.par_iter())
        .map(|(theta, g)| model::loss_and_gradient_raw(theta, g, cfg))
        .collect();
    let n = batch.len() as f64;
    let loss = per_pixel.iter().map(|(l, _)| l).sum::<f64>() / n;
    if !loss.is_finite()
        || per_pixel
            .iter()
            .any(|(_, g)| g.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::NonFinite {
            layer: w.arch.head_layer() + 1,
        });
    }
    let d_theta = Array2::from_shape_fn((batch.len(), 4), |(i, k)| per_pixel[i].1[k] / n);
    let grads = w.backward_encoded(&enc, &d_theta);
    Ok((loss, grads, enc.stats))
}

/// First and second moments for [`adam_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub m: Vec<Vec<F>>,
    pub v: Vec<Vec<F>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<F: NdFloat> AdamState<F> {
    pub fn new(w: &EncoderWeights<F>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<F>> = w
            .learnable()
            .iter()
            .map(|t| vec![F::zero(); t.len()])
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            beta1,
            beta2,
            eps,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step<F: NdFloat>(
    w: &mut EncoderWeights<F>,
    grads: &EncoderWeights<F>,
    state: &mut AdamState<F>,
    lr: f64,
) {
    state.t += 1;
    let (b1, b2): (F, F) = (cast(state.beta1), cast(state.beta2));
    let one = F::one();
    let c1: F = cast(1.0 - state.beta1.powi(state.t as i32));
    let c2: F = cast(1.0 - state.beta2.powi(state.t as i32));
    let (lr, eps): (F, F) = (cast(lr), cast(state.eps));
    let gs = grads.learnable();
    for (((p, g), m), v) in w
        .learnable_mut()
        .into_iter()
        .zip(gs)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (one - b1) * g[i];
            v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Converts a raw network output row into admissible parameters: `|σ|`, then
/// every coordinate clamped to [`ParamRanges::physical`], phase wrapped.
///
/// The model is even in `σ`, so taking `|σ|` leaves the loss unchanged.
pub fn encoder_outputs_to_params(raw: [f64; 4], cfg: &AcquisitionConfig) -> PixelParams {
    let b = ParamRanges::physical(cfg);
    PixelParams::from_array([
        raw[0].abs().clamp(b.amplitude.0, b.amplitude.1),
        raw[1].abs().clamp(b.width.0, b.width.1),
        raw[2].clamp(b.depth.0, b.depth.1),
        model::wrap_phase(raw[3]),
    ])
}

pub struct Inference {
    pub map: ParamMap,
    /// Seconds of network evaluation.
    pub wall_time: f64,
}

const INFER_BATCH: usize = 4096;

pub fn infer_volume(w: &EncoderWeights<f32>, v: &THzVolume) -> Result<Inference> {
    infer_volume_with_batch(w, v, INFER_BATCH)
}

/// Inference-mode forward pass over every pixel, in chunks of `batch_size`.
pub fn infer_volume_with_batch(
    w: &EncoderWeights<f32>,
    v: &THzVolume,
    batch_size: usize,
) -> Result<Inference> {
    let cfg = v.cfg();
    if cfg.n_z() != w.arch.n_z {
        return Err(Error::WidthMismatch {
            expected: w.arch.n_z,
            found: cfg.n_z(),
        });
    }
    let start = Instant::now();
    let indices: Vec<usize> = (0..v.n_pixels()).collect();
    let chunks: Vec<Vec<PixelParams>> = indices
        .par_chunks(batch_size.max(1))
        .map(|chunk| {
            let batch: Vec<&[f64]> = chunk.iter().map(|&i| v.pixel(i)).collect();
            let enc = w.encode(&batch, cfg, Mode::Infer)?;
            Ok(enc
                .theta
                .rows()
                .into_iter()
                .map(|r| encoder_outputs_to_params([r[0], r[1], r[2], r[3]], cfg))
                .collect())
        })
        .collect::<Result<_>>()?;
    let wall_time = start.elapsed().as_secs_f64();
    let pixels: Vec<PixelParams> = chunks.into_iter().flatten().collect();
    Ok(Inference {
        map: ParamMap::from_pixels(v.nx(), v.ny(), &pixels)?,
        wall_time,
    })
}

/// Mean decoder loss of raw inference-mode outputs over `indices`.
fn eval_loss(w: &EncoderWeights<f32>, v: &THzVolume, indices: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for chunk in indices.chunks(INFER_BATCH) {
        let batch: Vec<&[f64]> = chunk.iter().map(|&i| v.pixel(i)).collect();
        let enc = w.encode(&batch, v.cfg(), Mode::Infer)?;
        total += super::decoder_loss(&enc.theta, &batch, v.cfg()) * batch.len() as f64;
    }
    Ok(total / indices.len() as f64)
}

/// Centers and scales the head outputs on the sequential estimates of the
/// training pixels, so every output starts near the data and moves on the
/// scale of its spread.
fn set_output_affine(w: &mut EncoderWeights<f32>, est: &[[f64; 4]], cfg: &AcquisitionConfig) {
    let n = est.len() as f64;
    let stats = |f: &dyn Fn(usize) -> f64| {
        let m = (0..est.len()).map(f).sum::<f64>() / n;
        let var = (0..est.len()).map(|i| (f(i) - m).powi(2)).sum::<f64>() / n;
        (m, var.sqrt())
    };
    let (offset, scale) = if w.arch.align {
        // aligned outputs are residuals of the estimate, except the width
        let spacing = cfg.mean_spacing();
        let (m, s) = stats(&|i| est[i][1] * spacing);
        ([1.0, m, 0.0, 0.0], [0.1, s.max(1e-3 * m), 0.5, 0.5])
    } else {
        let mut offset = [0.0; 4];
        let mut scale = [1.0, 1.0, 1.0, std::f64::consts::PI];
        for k in 0..3 {
            let (m, s) = stats(&|i| est[i][k]);
            offset[k] = m;
            scale[k] = s.max(1e-3 * m.abs()).max(1e-6);
        }
        (offset, scale)
    };
    for k in 0..4 {
        w.out_offset[k] = offset[k] as f32;
        w.out_scale[k] = scale[k] as f32;
    }
}

pub fn train(v: &THzVolume, tc: &TrainConfig) -> Result<(EncoderWeights<f32>, TrainHistory)> {
    train_with_callback(v, tc, |_, _, _| Ok(()))
}

/// Unsupervised training through the fixed decoder.
///
/// `on_epoch` runs after every epoch with the current weights, e.g. for
/// checkpointing. Batches with fewer than two pixels are skipped since batch
/// statistics are undefined for them.
pub fn train_with_callback(
    v: &THzVolume,
    tc: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &EncoderWeights<f32>, &TrainHistory) -> Result<()>,
) -> Result<(EncoderWeights<f32>, TrainHistory)> {
    tc.validate()?;
    let cfg = v.cfg();
    let (mut train_idx, val_idx) = split_pixels(v.n_pixels(), tc.train_fraction, tc.seed)?;
    if train_idx.len() < 2 {
        return Err(Error::InvalidConfig(
            "need at least two training pixels".into(),
        ));
    }

    let mut init_rng = ChaCha8Rng::seed_from_u64(tc.seed);
    init_rng.set_stream(1);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(tc.seed);
    shuffle_rng.set_stream(2);

    let mut w = EncoderWeights::<f32>::init(tc.architecture(cfg.n_z()), &mut init_rng)?;
    let est: Vec<[f64; 4]> = train_idx
        .iter()
        .map(|&i| tra::init_heuristic(v.pixel(i), cfg).to_array())
        .collect();
    set_output_affine(&mut w, &est, cfg);
    if w.arch.align {
        // start exactly at the sequential estimate
        w.head.w.fill(0.0);
    }

    let mut adam = AdamState::new(&w, tc.beta1, tc.beta2, tc.adam_eps);
    let mut history = TrainHistory::default();
    for epoch in 0..tc.epochs {
        let lr = learning_rate(tc, epoch);
        train_idx.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        let mut seen = 0usize;
        for chunk in train_idx.chunks(tc.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let batch: Vec<&[f64]> = chunk.iter().map(|&i| v.pixel(i)).collect();
            let (loss, grads, stats) = ae_loss_and_grad(&w, &batch, cfg)?;
            w.update_running_stats(&stats);
            adam_step(&mut w, &grads, &mut adam, lr);
            total += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        history.train_loss.push(total / seen as f64);
        history.val_loss.push(if val_idx.is_empty() {
            f64::NAN
        } else {
            eval_loss(&w, v, &val_idx)?
        });
        history.lr.push(lr);
        on_epoch(epoch, &w, &history)?;
    }
    Ok((w, history))
}
