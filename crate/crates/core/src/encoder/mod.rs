//! Per-pixel encoder network predicting `[ê, σ, μ, φ]` from a depth profile.
//!
//! The real and imaginary channels each pass through a dense layer with batch
//! normalization and LeakyReLU; the two activations are concatenated and run
//! through three more such layers and a linear head with four outputs. The
//! first output goes through `|·|` so the amplitude is never negative. A
//! `1×1` convolution over an image whose channels are the depth samples is the
//! same map as these dense layers applied to every pixel, which is how it is
//! implemented here.
//!
//! The network is generic over the float type so gradient checks can run in
//! `f64`; training and inference use `f32`. The physics decoder always runs in
//! `f64`.

mod io;
mod train;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis, NdFloat};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{self, AcquisitionConfig};

pub use io::{
    load_weights, read_weights, save_weights, write_history_csv, write_weights, WEIGHTS_MAGIC,
};
pub use train::{
    adam_step, ae_loss_and_grad, encoder_outputs_to_params, infer_volume, infer_volume_with_batch,
    learning_rate, train, train_with_callback, AdamState, Inference, TrainConfig, TrainHistory,
};

#[inline]
pub(crate) fn cast<F: NdFloat>(x: f64) -> F {
    F::from(x).expect("representable")
}

/// Layer sizes and normalization constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub n_z: usize,
    pub branch_width: usize,
    pub trunk_widths: Vec<usize>,
    pub leaky_slope: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    /// Center each profile on its magnitude peak before the network; see [`Alignment`].
    pub align: bool,
}

impl Architecture {
    /// 64 features per channel, trunk 128 → 128 → 64, peak alignment on.
    pub fn new(n_z: usize) -> Self {
        Self {
            n_z,
            branch_width: 64,
            trunk_widths: vec![128, 128, 64],
            leaky_slope: 0.01,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            align: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_z == 0 || self.branch_width == 0 || self.trunk_widths.contains(&0) {
            return Err(Error::InvalidConfig("layer widths must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) || self.bn_eps <= 0.0 {
            return Err(Error::InvalidConfig("invalid batch-norm constants".into()));
        }
        Ok(())
    }

    /// Index of the head layer in error reports; the decoder is `head_layer() + 1`.
    pub fn head_layer(&self) -> usize {
        2 + self.trunk_widths.len()
    }

    /// Stable 64-bit digest of the architecture.
    pub fn hash(&self) -> u64 {
        let desc = format!(
            "thz-encoder;n_z={};branch={};trunk={:?};slope={:e};momentum={:e};eps={:e};align={}",
            self.n_z,
            self.branch_width,
            self.trunk_widths,
            self.leaky_slope,
            self.bn_momentum,
            self.bn_eps,
            self.align
        );
        let digest = Sha256::digest(desc.as_bytes());
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }

    /// Number of learnable scalars.
    pub fn n_learnable(&self) -> usize {
        let mut n = 2 * (self.n_z * self.branch_width + 3 * self.branch_width);
        let mut fan_in = 2 * self.branch_width;
        for &w in &self.trunk_widths {
            n += fan_in * w + 3 * w;
            fan_in = w;
        }
        n + fan_in * 4 + 4
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<F> {
    /// `in × out`.
    pub w: Array2<F>,
    pub b: Array1<F>,
}

impl<F: NdFloat> Dense<F> {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: Array2::zeros((fan_in, fan_out)),
            b: Array1::zeros(fan_out),
        }
    }

    /// Uniform in `±√(6 / (fan_in + fan_out))`, zero bias.
    fn glorot(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Self {
            w: Array2::from_shape_simple_fn((fan_in, fan_out), || {
                cast(rng.random_range(-limit..limit))
            }),
            b: Array1::zeros(fan_out),
        }
    }

    fn forward(&self, x: &ArrayView2<F>) -> Array2<F> {
        x.dot(&self.w) + &self.b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<F> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
    pub running_mean: Array1<F>,
    pub running_var: Array1<F>,
}

impl<F: NdFloat> BatchNorm<F> {
    fn new(width: usize) -> Self {
        Self {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
        }
    }
}

/// One dense → batch norm → LeakyReLU block.
#[derive(Debug, Clone, PartialEq)]
pub struct Block<F> {
    pub dense: Dense<F>,
    pub bn: BatchNorm<F>,
}

/// Inference uses running statistics; training uses batch statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// All learnable tensors and batch-norm statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights<F = f32> {
    pub arch: Architecture,
    pub branch_re: Block<F>,
    pub branch_im: Block<F>,
    pub trunk: Vec<Block<F>>,
    pub head: Dense<F>,
    /// Fixed output affine `θ = offset + scale ⊙ (h·W + b)`, not trained.
    pub out_scale: Array1<F>,
    pub out_offset: Array1<F>,
}

/// Per-layer batch statistics from a training-mode pass, in layer order.
#[derive(Debug, Clone)]
pub struct BatchStats<F> {
    stats: Vec<(Array1<F>, Array1<F>)>,
    n: usize,
}

#[derive(Debug)]
struct BlockCache<F> {
    input: Array2<F>,
    xhat: Array2<F>,
    inv_std: Array1<F>,
    pre_act: Array2<F>,
}

/// Activations kept for the backward pass.
#[derive(Debug)]
pub struct ForwardCache<F> {
    blocks: Vec<BlockCache<F>>,
    head_input: Array2<F>,
    head_output: Array2<F>,
}

impl<F: NdFloat> EncoderWeights<F> {
    /// Glorot-initialized weights, identity batch norm, zero biases.
    pub fn init(arch: Architecture, rng: &mut impl Rng) -> Result<Self> {
        arch.validate()?;
        let block = |fan_in, fan_out, rng: &mut _| Block {
            dense: Dense::glorot(fan_in, fan_out, rng),
            bn: BatchNorm::new(fan_out),
        };
        let branch_re = block(arch.n_z, arch.branch_width, rng);
        let branch_im = block(arch.n_z, arch.branch_width, rng);
        let mut trunk = Vec::with_capacity(arch.trunk_widths.len());
        let mut fan_in = 2 * arch.branch_width;
        for &w in &arch.trunk_widths {
            trunk.push(block(fan_in, w, rng));
            fan_in = w;
        }
        let head = Dense::glorot(fan_in, 4, rng);
        Ok(Self {
            arch,
            branch_re,
            branch_im,
            trunk,
            head,
            out_scale: Array1::ones(4),
            out_offset: Array1::zeros(4),
        })
    }

    /// Same shapes, every tensor zero (running variance included); the output
    /// affine is copied.
    pub fn zeros_like(&self) -> Self {
        let zb = |b: &Block<F>| Block {
            dense: Dense::zeros(b.dense.w.nrows(), b.dense.w.ncols()),
            bn: BatchNorm {
                gamma: Array1::zeros(b.bn.gamma.len()),
                beta: Array1::zeros(b.bn.beta.len()),
                running_mean: Array1::zeros(b.bn.gamma.len()),
                running_var: Array1::zeros(b.bn.gamma.len()),
            },
        };
        Self {
            arch: self.arch.clone(),
            branch_re: zb(&self.branch_re),
            branch_im: zb(&self.branch_im),
            trunk: self.trunk.iter().map(zb).collect(),
            head: Dense::zeros(self.head.w.nrows(), 4),
            out_scale: self.out_scale.clone(),
            out_offset: self.out_offset.clone(),
        }
    }

    fn blocks(&self) -> impl Iterator<Item = &Block<F>> {
        [&self.branch_re, &self.branch_im]
            .into_iter()
            .chain(self.trunk.iter())
    }

    fn blocks_mut(&mut self) -> impl Iterator<Item = &mut Block<F>> {
        [&mut self.branch_re, &mut self.branch_im]
            .into_iter()
            .chain(self.trunk.iter_mut())
    }

    /// Learnable tensors in a fixed order: per block `w, b, γ, β`, then head `w, b`.
    pub fn learnable(&self) -> Vec<&[F]> {
        let mut out = Vec::new();
        for b in self.blocks() {
            out.push(b.dense.w.as_slice().unwrap());
            out.push(b.dense.b.as_slice().unwrap());
            out.push(b.bn.gamma.as_slice().unwrap());
            out.push(b.bn.beta.as_slice().unwrap());
        }
        out.push(self.head.w.as_slice().unwrap());
        out.push(self.head.b.as_slice().unwrap());
        out
    }

    pub fn learnable_mut(&mut self) -> Vec<&mut [F]> {
        let mut out: Vec<&mut [F]> = Vec::new();
        for b in [&mut self.branch_re, &mut self.branch_im]
            .into_iter()
            .chain(self.trunk.iter_mut())
        {
            out.push(b.dense.w.as_slice_mut().unwrap());
            out.push(b.dense.b.as_slice_mut().unwrap());
            out.push(b.bn.gamma.as_slice_mut().unwrap());
            out.push(b.bn.beta.as_slice_mut().unwrap());
        }
        out.push(self.head.w.as_slice_mut().unwrap());
        out.push(self.head.b.as_slice_mut().unwrap());
        out
    }

    /// Running means and variances per block, then the output scale and offset.
    pub fn buffers(&self) -> Vec<&[F]> {
        let mut out: Vec<&[F]> = self
            .blocks()
            .flat_map(|b| {
                [
                    b.bn.running_mean.as_slice().unwrap(),
                    b.bn.running_var.as_slice().unwrap(),
                ]
            })
            .collect();
        out.push(self.out_scale.as_slice().unwrap());
        out.push(self.out_offset.as_slice().unwrap());
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut [F]> {
        let Self {
            branch_re,
            branch_im,
            trunk,
            out_scale,
            out_offset,
            ..
        } = self;
        let mut out: Vec<&mut [F]> = [branch_re, branch_im]
            .into_iter()
            .chain(trunk.iter_mut())
            .flat_map(|b| {
                let BatchNorm {
                    running_mean,
                    running_var,
                    ..
                } = &mut b.bn;
                [
                    running_mean.as_slice_mut().unwrap(),
                    running_var.as_slice_mut().unwrap(),
                ]
            })
            .collect();
        out.push(out_scale.as_slice_mut().unwrap());
        out.push(out_offset.as_slice_mut().unwrap());
        out
    }

    /// Blends batch statistics into the running estimates (unbiased variance).
    pub fn update_running_stats(&mut self, stats: &BatchStats<F>) {
        let m: F = cast(self.arch.bn_momentum);
        let one = F::one();
        let correction: F = if stats.n > 1 {
            cast(stats.n as f64 / (stats.n - 1) as f64)
        } else {
            one
        };
        for (b, (mean, var)) in self.blocks_mut().zip(&stats.stats) {
            b.bn.running_mean
                .zip_mut_with(mean, |r, &v| *r = (one - m) * *r + m * v);
            b.bn.running_var
                .zip_mut_with(var, |r, &v| *r = (one - m) * *r + m * v * correction);
        }
    }

    fn block_forward(
        &self,
        block: &Block<F>,
        x: Array2<F>,
        mode: Mode,
        stats: &mut Vec<(Array1<F>, Array1<F>)>,
    ) -> (Array2<F>, BlockCache<F>) {
        let z = block.dense.forward(&x.view());
        let eps: F = cast(self.arch.bn_eps);
        let (centered, inv_std) = match mode {
            Mode::Train => {
                let n: F = cast(z.nrows() as f64);
                let mean = z.sum_axis(Axis(0)) / n;
                let centered = z - &mean;
                let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n;
                let inv_std = var.mapv(|v| F::one() / (v + eps).sqrt());
                stats.push((mean, var));
                (centered, inv_std)
            }
            Mode::Infer => {
                let centered = z - &block.bn.running_mean;
                let inv_std = block.bn.running_var.mapv(|v| F::one() / (v + eps).sqrt());
                (centered, inv_std)
            }
        };
        let xhat = centered * &inv_std;
        let pre_act = &xhat * &block.bn.gamma + &block.bn.beta;
        let slope: F = cast(self.arch.leaky_slope);
        let out = pre_act.mapv(|v| if v > F::zero() { v } else { slope * v });
        (
            out,
            BlockCache {
                input: x,
                xhat,
                inv_std,
                pre_act,
            },
        )
    }

    /// Network outputs `[|o₀|, o₁, o₂, o₃]` for a batch of interleaved signals.
    pub fn forward(
        &self,
        batch: &[&[f64]],
        mode: Mode,
    ) -> Result<(Array2<F>, ForwardCache<F>, BatchStats<F>)> {
        let n_z = self.arch.n_z;
        if let Some(bad) = batch.iter().find(|s| s.len() != 2 * n_z) {
            return Err(Error::WidthMismatch {
                expected: n_z,
                found: bad.len() / 2,
            });
        }
        if batch.is_empty() {
            return Err(Error::InvalidParams("empty batch".into()));
        }
        let n = batch.len();
        let xre = Array2::from_shape_fn((n, n_z), |(i, j)| cast::<F>(batch[i][2 * j]));
        let xim = Array2::from_shape_fn((n, n_z), |(i, j)| cast::<F>(batch[i][2 * j + 1]));

        let mut stats = Vec::with_capacity(2 + self.trunk.len());
        let mut caches = Vec::with_capacity(2 + self.trunk.len());
        let check = |a: &Array2<F>, layer: usize| {
            if a.iter().all(|v| v.is_finite()) {
                Ok(())
            } else {
                Err(Error::NonFinite { layer })
            }
        };
        let (hre, cre) = self.block_forward(&self.branch_re, xre, mode, &mut stats);
        check(&hre, 0)?;
        let (him, cim) = self.block_forward(&self.branch_im, xim, mode, &mut stats);
        check(&him, 1)?;
        caches.push(cre);
        caches.push(cim);
        let mut h = concatenate![Axis(1), hre, him];
        for (t, block) in self.trunk.iter().enumerate() {
            let (next, c) = self.block_forward(block, h, mode, &mut stats);
            check(&next, 2 + t)?;
            caches.push(c);
            h = next;
        }
        let head_output = self.head.forward(&h.view()) * &self.out_scale + &self.out_offset;
        check(&head_output, self.arch.head_layer())?;
        let mut out = head_output.clone();
        out.column_mut(0).mapv_inplace(|v| v.abs());
        Ok((
            out,
            ForwardCache {
                blocks: caches,
                head_input: h,
                head_output,
            },
            BatchStats { stats, n },
        ))
    }

    /// Gradients of `Σᵢ d_out[i] · out[i]` with respect to every learnable tensor.
    pub fn backward(&self, cache: &ForwardCache<F>, d_out: &Array2<F>) -> EncoderWeights<F> {
        let mut grads = self.zeros_like();
        let mut d_head = d_out.clone();
        // |·| on the amplitude, subgradient 0 at 0
        for (d, &pre) in d_head
            .column_mut(0)
            .iter_mut()
            .zip(cache.head_output.column(0))
        {
            *d = if pre > F::zero() {
                *d
            } else if pre < F::zero() {
                -*d
            } else {
                F::zero()
            };
        }
        d_head *= &self.out_scale;
        grads.head.w = cache.head_input.t().dot(&d_head);
        grads.head.b = d_head.sum_axis(Axis(0));
        let mut dh = d_head.dot(&self.head.w.t());

        let slope: F = cast(self.arch.leaky_slope);
        let block_backward = |block: &Block<F>,
                              c: &BlockCache<F>,
                              dh: Array2<F>,
                              g: &mut Block<F>,
                              need_input: bool| {
            let mut dy = dh;
            dy.zip_mut_with(&c.pre_act, |d, &p| {
                if p <= F::zero() {
                    *d *= slope
                }
            });
            g.bn.gamma = (&dy * &c.xhat).sum_axis(Axis(0));
            g.bn.beta = dy.sum_axis(Axis(0));
            let dxhat = dy * &block.bn.gamma;
            let n: F = cast(dxhat.nrows() as f64);
            let sum_dxhat = dxhat.sum_axis(Axis(0));
            let sum_dxhat_xhat = (&dxhat * &c.xhat).sum_axis(Axis(0));
            let dz = (dxhat * n - &sum_dxhat - &c.xhat * &sum_dxhat_xhat) * &(&c.inv_std / n);
            g.dense.w = c.input.t().dot(&dz);
            g.dense.b = dz.sum_axis(Axis(0));
            need_input.then(|| dz.dot(&block.dense.w.t()))
        };

        for (t, block) in self.trunk.iter().enumerate().rev() {
            dh =
                block_backward(block, &cache.blocks[2 + t], dh, &mut grads.trunk[t], true).unwrap();
        }
        let c1 = self.arch.branch_width;
        let dre = dh.slice(s![.., ..c1]).to_owned();
        let dim = dh.slice(s![.., c1..]).to_owned();
        block_backward(
            &self.branch_re,
            &cache.blocks[0],
            dre,
            &mut grads.branch_re,
            false,
        );
        block_backward(
            &self.branch_im,
            &cache.blocks[1],
            dim,
            &mut grads.branch_im,
            false,
        );
        grads
    }

    /// Cast every tensor to another float type.
    pub fn cast<G: NdFloat>(&self) -> EncoderWeights<G> {
        let c1 = |a: &Array1<F>| a.mapv(|v| cast::<G>(v.to_f64().unwrap()));
        let c2 = |a: &Array2<F>| a.mapv(|v| cast::<G>(v.to_f64().unwrap()));
        let cd = |d: &Dense<F>| Dense {
            w: c2(&d.w),
            b: c1(&d.b),
        };
        let cb = |b: &Block<F>| Block {
            dense: cd(&b.dense),
            bn: BatchNorm {
                gamma: c1(&b.bn.gamma),
                beta: c1(&b.bn.beta),
                running_mean: c1(&b.bn.running_mean),
                running_var: c1(&b.bn.running_var),
            },
        };
        EncoderWeights {
            arch: self.arch.clone(),
            branch_re: cb(&self.branch_re),
            branch_im: cb(&self.branch_im),
            trunk: self.trunk.iter().map(cb).collect(),
            head: cd(&self.head),
            out_scale: c1(&self.out_scale),
            out_offset: c1(&self.out_offset),
        }
    }
}

/// Peak alignment of one profile.
///
/// With `m` the index of the largest magnitude sample, the network sees the
/// profile shifted so that `m` lands on the center index (zero padded),
/// divided by `|g_m|` and rotated so that `g_m` is real and positive. The model
/// is equivariant under all three maps, so the network predicts
/// `[ê / |g_m|, σ·Δ, (μ − z_m) / Δ, φ − arg g_m − ω z_m]` with `Δ` the mean grid
/// spacing, and [`Alignment::to_params`] undoes them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    pub scale: f64,
    pub depth: f64,
    pub phase: f64,
    pub spacing: f64,
}

impl Alignment {
    pub const IDENTITY: Alignment = Alignment {
        scale: 1.0,
        depth: 0.0,
        phase: 0.0,
        spacing: 1.0,
    };

    /// Returns the aligned interleaved profile and the transform.
    pub fn of(g: &[f64], cfg: &AcquisitionConfig) -> (Vec<f64>, Alignment) {
        let n = g.len() / 2;
        let center = (n - 1) / 2;
        let mut m = center;
        let mut best = 0.0;
        for i in 0..n {
            let p = model::power_at(g, i);
            if p > best {
                best = p;
                m = i;
            }
        }
        let spacing = cfg.mean_spacing();
        if best == 0.0 {
            let al = Alignment {
                depth: cfg.z_grid()[center],
                spacing,
                ..Alignment::IDENTITY
            };
            return (g.to_vec(), al);
        }
        let scale = best.sqrt();
        // multiply by conj(g_m) / |g_m|²: divides by |g_m| and removes arg g_m
        let (cr, ci) = (g[2 * m] / best, -g[2 * m + 1] / best);
        let mut out = vec![0.0; g.len()];
        for j in 0..n {
            let src = j as isize + m as isize - center as isize;
            if src < 0 || src >= n as isize {
                continue;
            }
            let (re, im) = (g[2 * src as usize], g[2 * src as usize + 1]);
            out[2 * j] = re * cr - im * ci;
            out[2 * j + 1] = re * ci + im * cr;
        }
        let z_m = cfg.z_grid()[m];
        let al = Alignment {
            scale,
            depth: z_m,
            phase: g[2 * m + 1].atan2(g[2 * m]) + cfg.omega() * z_m,
            spacing,
        };
        (out, al)
    }

    pub fn to_params(&self, o: [f64; 4]) -> [f64; 4] {
        [
            self.scale * o[0],
            o[1] / self.spacing,
            self.depth + self.spacing * o[2],
            self.phase + o[3],
        ]
    }

    /// Chain rule of [`to_params`](Self::to_params): parameter gradient to output gradient.
    pub fn pull_back(&self, d: [f64; 4]) -> [f64; 4] {
        [
            self.scale * d[0],
            d[1] / self.spacing,
            self.spacing * d[2],
            d[3],
        ]
    }
}

/// Result of [`EncoderWeights::encode`].
pub struct Encoded<F> {
    /// Model parameters `[ê, σ, μ, φ]` per pixel, before canonicalization.
    pub theta: Array2<f64>,
    pub cache: ForwardCache<F>,
    pub stats: BatchStats<F>,
    pub alignments: Vec<Alignment>,
}

impl<F: NdFloat> EncoderWeights<F> {
    /// Network prediction of model parameters, including peak alignment when
    /// the architecture uses it.
    pub fn encode(
        &self,
        batch: &[&[f64]],
        cfg: &AcquisitionConfig,
        mode: Mode,
    ) -> Result<Encoded<F>> {
        if cfg.n_z() != self.arch.n_z {
            return Err(Error::WidthMismatch {
                expected: self.arch.n_z,
                found: cfg.n_z(),
            });
        }
        let (out, cache, stats, alignments) = if self.arch.align {
            if let Some(bad) = batch.iter().find(|s| s.len() != 2 * self.arch.n_z) {
                return Err(Error::WidthMismatch {
                    expected: self.arch.n_z,
                    found: bad.len() / 2,
                });
            }
            let (inputs, alignments): (Vec<Vec<f64>>, Vec<Alignment>) =
                batch.iter().map(|g| Alignment::of(g, cfg)).unzip();
            let refs: Vec<&[f64]> = inputs.iter().map(|v| v.as_slice()).collect();
            let (out, cache, stats) = self.forward(&refs, mode)?;
            (out, cache, stats, alignments)
        } else {
            let (out, cache, stats) = self.forward(batch, mode)?;
            (out, cache, stats, vec![Alignment::IDENTITY; batch.len()])
        };
        let theta = Array2::from_shape_fn((batch.len(), 4), |(i, k)| {
            let o = [0, 1, 2, 3].map(|c| out[[i, c]].to_f64().unwrap());
            alignments[i].to_params(o)[k]
        });
        Ok(Encoded {
            theta,
            cache,
            stats,
            alignments,
        })
    }

    /// Gradients of `Σᵢ d_theta[i] · theta[i]` for an [`encode`](Self::encode) result.
    pub fn backward_encoded(&self, enc: &Encoded<F>, d_theta: &Array2<f64>) -> EncoderWeights<F> {
        let d_out = Array2::from_shape_fn(d_theta.dim(), |(i, k)| {
            let d = [0, 1, 2, 3].map(|c| d_theta[[i, c]]);
            cast::<F>(enc.alignments[i].pull_back(d)[k])
        });
        self.backward(&enc.cache, &d_out)
    }
}

/// Mean per-pixel decoder loss of raw network outputs, evaluated in `f64`.
pub fn decoder_loss<F: NdFloat>(out: &Array2<F>, batch: &[&[f64]], cfg: &AcquisitionConfig) -> f64 {
    let total: f64 = out
        .rows()
        .into_iter()
        .zip(batch)
        .map(|(row, g)| {
            let theta = [0, 1, 2, 3].map(|k| row[k].to_f64().unwrap());
            model::loss_raw(&theta, g, cfg)
        })
        .sum();
    total / batch.len() as f64
}

#[cfg(test)]
mod tests;
