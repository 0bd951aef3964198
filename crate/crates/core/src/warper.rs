//! Temporal warper: a difference map drives a small residual conv trunk,
//! five dilated heads predict per-pixel offsets, the anchor heatmap is
//! bilinearly resampled along each offset field, and the five warps are summed
//! and mixed by a 1x1 output head.
//!
//! Everything runs on the CPU in `f64` with im2col + GEMM convolutions, and
//! the backward pass is hand-written (checked against finite differences in
//! the tests).

use std::io::{self, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::heatmap::{fast_floor, Heatmap};

pub const DILATIONS: [usize; 5] = [3, 6, 12, 18, 24];
pub const RESIDUAL_BLOCKS: usize = 3;
pub const DEFAULT_CHANNELS: usize = 16;
/// Offset-head outputs are in units of this many pixels, so head weights
/// learn at a rate comparable to the output head's.
pub const OFFSET_SCALE: f64 = 10.0;

pub const MAGIC: &[u8; 4] = b"DWWT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum WarperError {
    #[error("weights serve temporal mode {expected}, input has offset {found}")]
    ModeMismatch { expected: i32, found: i32 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("training loss became non-finite at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("invalid temporal mode {0}")]
    InvalidMode(i32),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyper(String),
    #[error("invalid weights file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One convolution: `weight` is `out x (in·k·k)` in (in, ky, kx) order.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub in_channels: usize,
    pub kernel: usize,
    pub dilation: usize,
}

impl ConvParams {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize, dilation: usize) -> Self {
        Self {
            weight: Array2::zeros((out_channels, in_channels * kernel * kernel)),
            bias: Array1::zeros(out_channels),
            in_channels,
            kernel,
            dilation,
        }
    }

    /// Zero-mean uniform kernel with variance `2 / fan_in`; zero bias.
    fn he_uniform<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Self {
        let mut p = Self::zeros(in_channels, out_channels, kernel, dilation);
        let fan_in = (in_channels * kernel * kernel) as f64;
        let bound = (6.0 / fan_in).sqrt();
        p.weight.mapv_inplace(|_| rng.random_range(-bound..bound));
        p
    }

    pub fn out_channels(&self) -> usize {
        self.weight.nrows()
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(self.in_channels, self.out_channels(), self.kernel, self.dilation)
    }

    /// Weight then bias count.
    pub fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Weight values, then bias.
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.weight.iter().chain(self.bias.iter())
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weight.iter_mut().chain(self.bias.iter_mut())
    }

    /// Returns the im2col matrix (kept for the backward pass) and the output.
    fn forward(&self, input: &Array2<f64>, h: usize, w: usize) -> (Array2<f64>, Array2<f64>) {
        let col = im2col(input, h, w, self.kernel, self.dilation);
        let mut out = self.weight.dot(&col);
        for (mut row, b) in out.axis_iter_mut(Axis(0)).zip(self.bias.iter()) {
            row += *b;
        }
        (col, out)
    }

    /// Accumulates parameter gradients into `grad`; returns the input gradient
    /// when asked.
    fn backward(
        &self,
        col: &Array2<f64>,
        dout: &Array2<f64>,
        grad: &mut ConvParams,
        h: usize,
        w: usize,
        need_input: bool,
    ) -> Option<Array2<f64>> {
        grad.weight += &dout.dot(&col.t());
        grad.bias += &dout.sum_axis(Axis(1));
        need_input.then(|| {
            let dcol = self.weight.t().dot(dout);
            col2im(&dcol, self.in_channels, h, w, self.kernel, self.dilation)
        })
    }
}

/// Offset of kernel tap `k` from the center, scaled by the dilation.
fn tap_offset(k: usize, kernel: usize, dilation: usize) -> isize {
    (k as isize - (kernel / 2) as isize) * dilation as isize
}

/// Valid destination range `[lo, hi)` for a source shift `s` over `n` pixels.
fn valid_range(s: isize, n: usize) -> (usize, usize) {
    let lo = (-s).max(0) as usize;
    let hi = (n as isize - s).clamp(0, n as isize) as usize;
    (lo.min(hi), hi)
}

fn im2col(input: &Array2<f64>, h: usize, w: usize, kernel: usize, dilation: usize) -> Array2<f64> {
    let cin = input.nrows();
    let kk = kernel * kernel;
    let mut col = Array2::zeros((cin * kk, h * w));
    let src = input.as_slice().expect("standard layout");
    let dst = col.as_slice_mut().expect("standard layout");
    for ci in 0..cin {
        for ky in 0..kernel {
            let sy = tap_offset(ky, kernel, dilation);
            let (ylo, yhi) = valid_range(sy, h);
            for kx in 0..kernel {
                let sx = tap_offset(kx, kernel, dilation);
                let (xlo, xhi) = valid_range(sx, w);
                if xlo >= xhi {
                    continue;
                }
                let row = (ci * kk + ky * kernel + kx) * h * w;
                for y in ylo..yhi {
                    let from = ci * h * w + (y as isize + sy) as usize * w;
                    let d = row + y * w;
                    dst[d + xlo..d + xhi]
                        .copy_from_slice(&src[(from as isize + xlo as isize + sx) as usize..][..xhi - xlo]);
                }
            }
        }
    }
    col
}

fn col2im(dcol: &Array2<f64>, cin: usize, h: usize, w: usize, kernel: usize, dilation: usize) -> Array2<f64> {
    let kk = kernel * kernel;
    let mut out = Array2::zeros((cin, h * w));
    let src = dcol.as_slice().expect("standard layout");
    let dst = out.as_slice_mut().expect("standard layout");
    for ci in 0..cin {
        for ky in 0..kernel {
            let sy = tap_offset(ky, kernel, dilation);
            let (ylo, yhi) = valid_range(sy, h);
            for kx in 0..kernel {
                let sx = tap_offset(kx, kernel, dilation);
                let (xlo, xhi) = valid_range(sx, w);
                if xlo >= xhi {
                    continue;
                }
                let row = (ci * kk + ky * kernel + kx) * h * w;
                for y in ylo..yhi {
                    let to = ci * h * w + (y as isize + sy) as usize * w;
                    let s = row + y * w;
                    let base = to as isize + sx;
                    for x in xlo..xhi {
                        dst[(base + x as isize) as usize] += src[s + x];
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub conv1: ConvParams,
    pub conv2: ConvParams,
}

/// Parameters for one temporal mode. The stem lifts the `J`-channel
/// difference map to the trunk width `C`; it is stored first in the trunk.
#[derive(Debug, Clone, PartialEq)]
pub struct WarperWeights {
    pub temporal_mode: i32,
    pub channels: usize,
    pub joints: usize,
    pub stem: ConvParams,
    pub residual_blocks: Vec<ResidualBlock>,
    pub offset_heads: Vec<ConvParams>,
    pub output_head: ConvParams,
}

impl WarperWeights {
    /// Trunk from a He-style uniform draw, zero offset heads, output head at
    /// `I / 5`: the untrained model returns the anchor unchanged.
    pub fn new(temporal_mode: i32, joints: usize, channels: usize, seed: u64) -> Result<Self, WarperError> {
        if temporal_mode == 0 {
            return Err(WarperError::InvalidMode(temporal_mode));
        }
        if joints == 0 || channels == 0 {
            return Err(WarperError::ShapeMismatch(
                "joints and channels must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stem = ConvParams::he_uniform(joints, channels, 3, 1, &mut rng);
        let residual_blocks = (0..RESIDUAL_BLOCKS)
            .map(|_| ResidualBlock {
                conv1: ConvParams::he_uniform(channels, channels, 3, 1, &mut rng),
                conv2: ConvParams::he_uniform(channels, channels, 3, 1, &mut rng),
            })
            .collect();
        let offset_heads = DILATIONS
            .iter()
            .map(|&d| ConvParams::zeros(channels, 2, 3, d))
            .collect();
        let mut output_head = ConvParams::zeros(joints, joints, 1, 1);
        for j in 0..joints {
            output_head.weight[[j, j]] = 1.0 / DILATIONS.len() as f64;
        }
        Ok(Self {
            temporal_mode,
            channels,
            joints,
            stem,
            residual_blocks,
            offset_heads,
            output_head,
        })
    }

    /// Parameter tensors in file order: stem, blocks, heads by ascending
    /// dilation, output head.
    pub fn tensors(&self) -> Vec<&ConvParams> {
        let mut v = vec![&self.stem];
        for b in &self.residual_blocks {
            v.push(&b.conv1);
            v.push(&b.conv2);
        }
        v.extend(self.offset_heads.iter());
        v.push(&self.output_head);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut ConvParams> {
        let mut v = vec![&mut self.stem];
        for b in &mut self.residual_blocks {
            v.push(&mut b.conv1);
            v.push(&mut b.conv2);
        }
        v.extend(self.offset_heads.iter_mut());
        v.push(&mut self.output_head);
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Flat parameter vector in file order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.values().copied()).collect()
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            *t = t.zeros_like();
        }
        z
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.values().all(|v| v.is_finite()))
    }

    /// Rounds every parameter to `f32`, so in-memory weights equal their file
    /// form.
    pub fn quantize_f32(&mut self) {
        for t in self.tensors_mut() {
            t.values_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }

    fn validate(&self) -> Result<(), WarperError> {
        let ok = self.residual_blocks.len() == RESIDUAL_BLOCKS
            && self.offset_heads.len() == DILATIONS.len()
            && self
                .offset_heads
                .iter()
                .zip(DILATIONS)
                .all(|(h, d)| h.dilation == d && h.out_channels() == 2);
        if !ok {
            return Err(WarperError::ShapeMismatch(
                "warper needs 3 residual blocks and 5 dilated heads".into(),
            ));
        }
        if !self.is_finite() {
            return Err(WarperError::NonFinite("weights"));
        }
        Ok(())
    }
}

/// `corrected` is the fused estimate at the target frame, `anchor` the view's
/// own observation, `relative_offset` = target frame − anchor frame.
#[derive(Debug, Clone)]
pub struct WarpInput {
    pub corrected: Heatmap,
    pub anchor: Heatmap,
    pub relative_offset: i32,
}

impl WarpInput {
    fn check(&self) -> Result<(), WarperError> {
        if !self.corrected.same_shape(&self.anchor) {
            return Err(WarperError::ShapeMismatch(format!(
                "corrected is {}x{}x{}, anchor is {}x{}x{}",
                self.corrected.joints(),
                self.corrected.height(),
                self.corrected.width(),
                self.anchor.joints(),
                self.anchor.height(),
                self.anchor.width()
            )));
        }
        if self.corrected.view != self.anchor.view {
            return Err(WarperError::ShapeMismatch(format!(
                "corrected is view {}, anchor is view {}",
                self.corrected.view, self.anchor.view
            )));
        }
        if self.relative_offset == 0 {
            return Err(WarperError::InvalidMode(0));
        }
        Ok(())
    }
}

/// `Φ = corrected − anchor`, shaped `J x H x W`.
pub fn difference_map(inp: &WarpInput) -> Result<Array3<f64>, WarperError> {
    inp.check()?;
    let (j, h, w) = (inp.anchor.joints(), inp.anchor.height(), inp.anchor.width());
    let data = inp
        .corrected
        .data()
        .iter()
        .zip(inp.anchor.data())
        .map(|(c, a)| c - a)
        .collect();
    Ok(Array3::from_shape_vec((j, h, w), data).expect("shape checked"))
}

/// Bilinear sample with its partial derivatives in `u` (column) and `v`
/// (row); out-of-grid taps read as zero.
fn sample_with_grad(grid: &[f64], w: usize, h: usize, u: f64, v: f64) -> (f64, f64, f64) {
    let x0 = fast_floor(u);
    let y0 = fast_floor(v);
    let fx = u - x0;
    let fy = v - y0;
    let (x0, y0) = (x0 as isize, y0 as isize);
    let at = |x: isize, y: isize| {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            grid[y as usize * w + x as usize]
        }
    };
    let p00 = at(x0, y0);
    let p10 = at(x0 + 1, y0);
    let p01 = at(x0, y0 + 1);
    let p11 = at(x0 + 1, y0 + 1);
    let val = (1.0 - fx) * (1.0 - fy) * p00 + fx * (1.0 - fy) * p10 + (1.0 - fx) * fy * p01 + fx * fy * p11;
    let du = (1.0 - fy) * (p10 - p00) + fy * (p11 - p01);
    let dv = (1.0 - fx) * (p01 - p00) + fx * (p11 - p10);
    (val, du, dv)
}

fn warp_slices(base: &[f64], channels: usize, h: usize, w: usize, offsets: &[f64], out: &mut [f64]) {
    let hw = h * w;
    let (dx, dy) = offsets.split_at(hw);
    for c in 0..channels {
        let grid = &base[c * hw..(c + 1) * hw];
        let dst = &mut out[c * hw..(c + 1) * hw];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                dst[i] = sample_with_grad(grid, w, h, x as f64 + dx[i], y as f64 + dy[i]).0;
            }
        }
    }
}

/// `out(x) = base(x + o(x))` per channel, with `offsets` holding `(dx, dy)`
/// planes. Sampling at `x + o` moves content by `−o`.
pub fn deformable_warp(base: &Array3<f64>, offsets: &Array3<f64>) -> Result<Array3<f64>, WarperError> {
    let (c, h, w) = base.dim();
    if offsets.dim() != (2, h, w) {
        return Err(WarperError::ShapeMismatch(format!(
            "offsets {:?} do not match base {h}x{w}",
            offsets.dim()
        )));
    }
    if offsets.iter().any(|v| !v.is_finite()) {
        return Err(WarperError::NonFinite("offsets"));
    }
    let base = base.as_standard_layout();
    let offsets = offsets.as_standard_layout();
    let mut out = Array3::zeros((c, h, w));
    warp_slices(
        base.as_slice().expect("standard layout"),
        c,
        h,
        w,
        offsets.as_slice().expect("standard layout"),
        out.as_slice_mut().expect("standard layout"),
    );
    Ok(out)
}

struct BlockTrace {
    col1: Array2<f64>,
    z1: Array2<f64>,
    col2: Array2<f64>,
}

/// Intermediate values kept for the backward pass.
struct Trace {
    h: usize,
    w: usize,
    stem_col: Array2<f64>,
    blocks: Vec<BlockTrace>,
    head_cols: Vec<Array2<f64>>,
    offsets: Vec<Array2<f64>>,
    summed: Array2<f64>,
    pre_clamp: Array2<f64>,
}

fn relu(a: &Array2<f64>) -> Array2<f64> {
    a.mapv(|v| v.max(0.0))
}

fn forward_trace(
    weights: &WarperWeights,
    phi: &Array2<f64>,
    anchor: &[f64],
    h: usize,
    w: usize,
) -> (Array2<f64>, Trace) {
    let j = weights.joints;
    let (stem_col, mut x) = weights.stem.forward(phi, h, w);
    let mut blocks = Vec::with_capacity(weights.residual_blocks.len());
    for b in &weights.residual_blocks {
        let (col1, z1) = b.conv1.forward(&x, h, w);
        let (col2, z2) = b.conv2.forward(&relu(&z1), h, w);
        x += &z2;
        blocks.push(BlockTrace { col1, z1, col2 });
    }
    let mut head_cols = Vec::with_capacity(weights.offset_heads.len());
    let mut offsets = Vec::with_capacity(weights.offset_heads.len());
    let mut summed = Array2::<f64>::zeros((j, h * w));
    let mut warped = vec![0.0; j * h * w];
    for head in &weights.offset_heads {
        let (col, mut o) = head.forward(&x, h, w);
        o *= OFFSET_SCALE;
        warp_slices(anchor, j, h, w, o.as_slice().expect("standard layout"), &mut warped);
        summed
            .as_slice_mut()
            .expect("standard layout")
            .iter_mut()
            .zip(&warped)
            .for_each(|(s, v)| *s += v);
        head_cols.push(col);
        offsets.push(o);
    }
    let (_, pre_clamp) = weights.output_head.forward(&summed, h, w);
    let out = pre_clamp.mapv(|v| v.clamp(0.0, 1.0));
    (
        out,
        Trace {
            h,
            w,
            stem_col,
            blocks,
            head_cols,
            offsets,
            summed,
            pre_clamp,
        },
    )
}

/// Gradients of the loss w.r.t. every parameter, given `dL/d(output)`.
fn backward(weights: &WarperWeights, trace: &Trace, anchor: &[f64], dout: &Array2<f64>) -> WarperWeights {
    let (h, w) = (trace.h, trace.w);
    let hw = h * w;
    let j = weights.joints;
    let mut grad = weights.zeros_like();

    // clamp: pass-through inside [0, 1]
    let mut dpre = dout.clone();
    dpre.zip_mut_with(&trace.pre_clamp, |g, p| {
        if !(0.0..=1.0).contains(p) {
            *g = 0.0;
        }
    });
    let dsum = weights
        .output_head
        .backward(&trace.summed, &dpre, &mut grad.output_head, h, w, true)
        .expect("input gradient requested");
    let dsum = dsum.as_slice().expect("standard layout");

    let mut dtrunk = Array2::<f64>::zeros((weights.channels, hw));
    for (k, head) in weights.offset_heads.iter().enumerate() {
        let o = trace.offsets[k].as_slice().expect("standard layout");
        let mut dofs = Array2::<f64>::zeros((2, hw));
        {
            let d = dofs.as_slice_mut().expect("standard layout");
            for c in 0..j {
                let grid = &anchor[c * hw..(c + 1) * hw];
                let g = &dsum[c * hw..(c + 1) * hw];
                for y in 0..h {
                    for x in 0..w {
                        let i = y * w + x;
                        if g[i] == 0.0 {
                            continue;
                        }
                        let (_, du, dv) = sample_with_grad(grid, w, h, x as f64 + o[i], y as f64 + o[hw + i]);
                        d[i] += g[i] * du;
                        d[hw + i] += g[i] * dv;
                    }
                }
            }
        }
        dofs *= OFFSET_SCALE;
        let dx = head
            .backward(&trace.head_cols[k], &dofs, &mut grad.offset_heads[k], h, w, true)
            .expect("input gradient requested");
        dtrunk += &dx;
    }

    for (b, (bt, bg)) in weights
        .residual_blocks
        .iter()
        .zip(trace.blocks.iter().zip(grad.residual_blocks.iter_mut()))
        .rev()
    {
        let mut dr = b
            .conv2
            .backward(&bt.col2, &dtrunk, &mut bg.conv2, h, w, true)
            .expect("input gradient requested");
        dr.zip_mut_with(&bt.z1, |g, z| {
            if *z <= 0.0 {
                *g = 0.0;
            }
        });
        let dx = b
            .conv1
            .backward(&bt.col1, &dr, &mut bg.conv1, h, w, true)
            .expect("input gradient requested");
        dtrunk += &dx;
    }
    weights
        .stem
        .backward(&trace.stem_col, &dtrunk, &mut grad.stem, h, w, false);
    grad
}

fn prepare(weights: &WarperWeights, inp: &WarpInput) -> Result<(Array2<f64>, usize, usize), WarperError> {
    inp.check()?;
    if inp.relative_offset != weights.temporal_mode {
        return Err(WarperError::ModeMismatch {
            expected: weights.temporal_mode,
            found: inp.relative_offset,
        });
    }
    if inp.anchor.joints() != weights.joints {
        return Err(WarperError::ShapeMismatch(format!(
            "weights expect {} joints, input has {}",
            weights.joints,
            inp.anchor.joints()
        )));
    }
    let (j, h, w) = (inp.anchor.joints(), inp.anchor.height(), inp.anchor.width());
    let phi = difference_map(inp)?
        .into_shape_with_order((j, h * w))
        .expect("contiguous");
    Ok((phi, h, w))
}

/// Runs the warper; the output keeps the corrected entry's view and frame.
pub fn warper_forward(weights: &WarperWeights, inp: &WarpInput) -> Result<Heatmap, WarperError> {
    weights.validate()?;
    let (phi, h, w) = prepare(weights, inp)?;
    let (out, _) = forward_trace(weights, &phi, inp.anchor.data(), h, w);
    Heatmap::from_data(
        inp.corrected.view,
        inp.corrected.frame,
        weights.joints,
        w,
        h,
        out.into_raw_vec_and_offset().0,
    )
    .map_err(|e| WarperError::ShapeMismatch(e.to_string()))
}

/// One supervised example: the warper should turn `input` into `target`.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub input: WarpInput,
    pub target: Heatmap,
}

/// Mean squared error of the forward output against the target, and its
/// gradient w.r.t. every parameter.
pub fn loss_and_gradient(weights: &WarperWeights, sample: &TrainSample) -> Result<(f64, WarperWeights), WarperError> {
    let (phi, h, w) = prepare(weights, &sample.input)?;
    if !sample.target.same_shape(&sample.input.anchor) {
        return Err(WarperError::ShapeMismatch("target does not match the input".into()));
    }
    let anchor = sample.input.anchor.data();
    let (out, trace) = forward_trace(weights, &phi, anchor, h, w);
    let n = out.len() as f64;
    let target = sample.target.data();
    let mut dout = out.clone();
    let mut loss = 0.0;
    dout.iter_mut().zip(target).for_each(|(o, t)| {
        let r = *o - t;
        loss += r * r;
        *o = 2.0 * r / n;
    });
    Ok((loss / n, backward(weights, &trace, anchor, &dout)))
}

/// Mean-squared-error loss only.
pub fn sample_loss(weights: &WarperWeights, sample: &TrainSample) -> Result<f64, WarperError> {
    let out = warper_forward(weights, &sample.input)?;
    let n = out.data().len() as f64;
    Ok(out
        .data()
        .iter()
        .zip(sample.target.data())
        .map(|(o, t)| (o - t) * (o - t))
        .sum::<f64>()
        / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainHyper {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub momentum: f64,
    /// Rescales a mini-batch gradient whose global norm exceeds this; 0 disables.
    pub max_grad_norm: f64,
    pub channels: usize,
    /// Epoch-boundary losses are measured on this many evenly spaced samples;
    /// 0 uses the whole set.
    pub monitor: usize,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            lr: 0.05,
            epochs: 30,
            batch: 8,
            momentum: 0.9,
            max_grad_norm: 0.0,
            channels: DEFAULT_CHANNELS,
            monitor: 0,
            seed: 0,
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<(), WarperError> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(WarperError::InvalidHyper(format!(
                "lr must be non-negative, got {}",
                self.lr
            )));
        }
        if self.batch == 0 {
            return Err(WarperError::InvalidHyper("batch must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(WarperError::InvalidHyper("momentum must be in [0, 1)".into()));
        }
        if !(self.max_grad_norm >= 0.0) {
            return Err(WarperError::InvalidHyper("max_grad_norm must be non-negative".into()));
        }
        if self.channels == 0 {
            return Err(WarperError::InvalidHyper("channels must be positive".into()));
        }
        Ok(())
    }
}

/// Loss history of a training run; `epoch_losses[0]` is the loss before the
/// first update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub best_epoch: usize,
}

impl TrainReport {
    pub fn initial_loss(&self) -> f64 {
        self.epoch_losses[0]
    }

    pub fn final_loss(&self) -> f64 {
        self.epoch_losses[self.best_epoch]
    }
}

fn dataset_loss(weights: &WarperWeights, data: &[&TrainSample]) -> Result<f64, WarperError> {
    let losses = data
        .par_iter()
        .map(|s| sample_loss(weights, s))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(losses.iter().sum::<f64>() / data.len() as f64)
}

/// Trains fresh weights for `mode`.
pub fn warper_train(
    data: &[TrainSample],
    mode: i32,
    hyper: &TrainHyper,
) -> Result<(WarperWeights, TrainReport), WarperError> {
    let joints = data.first().ok_or(WarperError::EmptyDataset)?.input.anchor.joints();
    let init = WarperWeights::new(mode, joints, hyper.channels, hyper.seed)?;
    warper_train_from(init, data, hyper)
}

/// Mini-batch SGD with momentum from `weights`. Sample order is shuffled per
/// epoch from the seed; batch gradients are reduced in a fixed order, so runs
/// are bitwise repeatable. The returned weights are those with the lowest
/// full-dataset loss seen at an epoch boundary (the initial weights included),
/// rounded to `f32`.
pub fn warper_train_from(
    mut weights: WarperWeights,
    data: &[TrainSample],
    hyper: &TrainHyper,
) -> Result<(WarperWeights, TrainReport), WarperError> {
    hyper.validate()?;
    weights.validate()?;
    if data.is_empty() {
        return Err(WarperError::EmptyDataset);
    }
    if let Some(bad) = data.iter().find(|s| s.input.relative_offset != weights.temporal_mode) {
        return Err(WarperError::ModeMismatch {
            expected: weights.temporal_mode,
            found: bad.input.relative_offset,
        });
    }
    let monitored: Vec<&TrainSample> = if hyper.monitor == 0 || hyper.monitor >= data.len() {
        data.iter().collect()
    } else {
        (0..hyper.monitor)
            .map(|i| &data[i * data.len() / hyper.monitor])
            .collect()
    };
    let initial = dataset_loss(&weights, &monitored)?;
    if !initial.is_finite() {
        return Err(WarperError::DivergedLoss { epoch: 0 });
    }
    let mut losses = vec![initial];
    let mut best = (initial, 0, weights.clone());
    if hyper.lr == 0.0 {
        return Ok((
            weights,
            TrainReport {
                epoch_losses: losses,
                best_epoch: 0,
            },
        ));
    }
    let mut velocity = weights.flatten().iter().map(|_| 0.0).collect::<Vec<f64>>();
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ 0x5EED_0F_7EA1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(hyper.batch) {
            let grads = batch
                .par_iter()
                .map(|&i| loss_and_gradient(&weights, &data[i]))
                .collect::<Result<Vec<_>, _>>()?;
            let mut g = vec![0.0; velocity.len()];
            for (_, gw) in &grads {
                for (acc, v) in g.iter_mut().zip(gw.flatten()) {
                    *acc += v;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            g.iter_mut().for_each(|v| *v *= scale);
            if hyper.max_grad_norm > 0.0 {
                let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > hyper.max_grad_norm {
                    let s = hyper.max_grad_norm / norm;
                    g.iter_mut().for_each(|v| *v *= s);
                }
            }
            let mut k = 0;
            for t in weights.tensors_mut() {
                for p in t.values_mut() {
                    velocity[k] = hyper.momentum * velocity[k] - hyper.lr * g[k];
                    *p += velocity[k];
                    k += 1;
                }
            }
        }
        let loss = dataset_loss(&weights, &monitored)?;
        if !loss.is_finite() || !weights.is_finite() {
            return Err(WarperError::DivergedLoss { epoch });
        }
        losses.push(loss);
        if loss < best.0 {
            best = (loss, epoch, weights.clone());
        }
    }
    let mut out = best.2;
    out.quantize_f32();
    Ok((
        out,
        TrainReport {
            epoch_losses: losses,
            best_epoch: best.1,
        },
    ))
}

pub fn write_weights<W: Write>(weights: &WarperWeights, mut out: W) -> Result<(), WarperError> {
    weights.validate()?;
    out.write_all(MAGIC)?;
    for v in [
        FORMAT_VERSION,
        weights.temporal_mode as u32,
        weights.channels as u32,
        weights.joints as u32,
    ] {
        out.write_all(&v.to_le_bytes())?;
    }
    for t in weights.tensors() {
        for v in t.values() {
            out.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_weights<R: Read>(mut input: R) -> Result<WarperWeights, WarperError> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(WarperError::Format(format!("bad magic {magic:?}")));
    }
    let mut word = || -> Result<u32, WarperError> {
        let mut b = [0u8; 4];
        input.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    };
    let version = word()?;
    if version != FORMAT_VERSION {
        return Err(WarperError::Format(format!("unsupported version {version}")));
    }
    let mode = word()? as i32;
    let channels = word()? as usize;
    let joints = word()? as usize;
    if channels == 0 || joints == 0 || channels > 4096 || joints > 4096 {
        return Err(WarperError::Format(format!(
            "implausible shape C={channels} J={joints}"
        )));
    }
    let mut weights = WarperWeights::new(mode, joints, channels, 0).map_err(|e| WarperError::Format(e.to_string()))?;
    for t in weights.tensors_mut() {
        for p in t.values_mut() {
            let mut b = [0u8; 4];
            input.read_exact(&mut b)?;
            *p = f32::from_le_bytes(b) as f64;
        }
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(WarperError::Format("trailing bytes".into()));
    }
    weights.validate().map_err(|e| WarperError::Format(e.to_string()))?;
    Ok(weights)
}

pub fn save_weights(weights: &WarperWeights, path: &Path) -> Result<(), WarperError> {
    let mut buf = Vec::new();
    write_weights(weights, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<WarperWeights, WarperError> {
    read_weights(std::fs::read(path)?.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heatmap::{decode_peak, render_gaussian, Keypoint2D};

    fn gaussian(j: usize, w: usize, h: usize, pts: &[(f64, f64)]) -> Heatmap {
        let kps: Vec<_> = pts
            .iter()
            .take(j)
            .enumerate()
            .map(|(i, p)| Keypoint2D::new(i, p.0, p.1))
            .collect();
        render_gaussian(&kps, w, h, 2.0).unwrap()
    }

    fn input(mode: i32, corrected: Heatmap, anchor: Heatmap) -> WarpInput {
        WarpInput {
            corrected,
            anchor,
            relative_offset: mode,
        }
    }

    #[test]
    fn zero_offsets_are_identity() {
        let h = gaussian(2, 20, 16, &[(7.3, 6.1), (12.0, 9.5)]);
        let base = Array3::from_shape_vec((2, 16, 20), h.data().to_vec()).unwrap();
        let out = deformable_warp(&base, &Array3::zeros((2, 16, 20))).unwrap();
        assert_eq!(out, base);
    }

    #[test]
    fn constant_offset_shifts_opposite() {
        let h = gaussian(1, 24, 24, &[(10.0, 10.0)]);
        let base = Array3::from_shape_vec((1, 24, 24), h.data().to_vec()).unwrap();
        let mut o = Array3::zeros((2, 24, 24));
        o.index_axis_mut(Axis(0), 0).fill(1.0);
        let out = deformable_warp(&base, &o).unwrap();
        let hm = Heatmap::from_data(0, 0, 1, 24, 24, out.into_raw_vec_and_offset().0).unwrap();
        let kp = decode_peak(&hm, 0).unwrap();
        assert!((kp.position.x - 9.0).abs() < 0.05 && (kp.position.y - 10.0).abs() < 0.05);
    }

    #[test]
    fn offsets_outside_read_zero() {
        let h = gaussian(1, 16, 16, &[(8.0, 8.0)]);
        let base = Array3::from_shape_vec((1, 16, 16), h.data().to_vec()).unwrap();
        let out = deformable_warp(&base, &Array3::from_elem((2, 16, 16), 100.0)).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
        let mut bad = Array3::zeros((2, 16, 16));
        bad[[0, 1, 1]] = f64::NAN;
        assert!(matches!(deformable_warp(&base, &bad), Err(WarperError::NonFinite(_))));
        assert!(deformable_warp(&base, &Array3::zeros((2, 8, 8))).is_err());
    }

    #[test]
    fn warp_round_trip() {
        let h = gaussian(1, 32, 32, &[(15.2, 16.7)]);
        let base = Array3::from_shape_vec((1, 32, 32), h.data().to_vec()).unwrap();
        let round_trip = |ox: f64, oy: f64| {
            let o = Array3::from_shape_fn((2, 32, 32), |(c, _, _)| if c == 0 { ox } else { oy });
            let there = deformable_warp(&base, &o).unwrap();
            let back = deformable_warp(&there, &o.mapv(|v| -v)).unwrap();
            (&back - &base).iter().fold(0.0f64, |m, v| m.max(v.abs()))
        };
        // whole-pixel offsets involve no interpolation
        for ox in -2..=2 {
            for oy in -2..=2 {
                assert!(round_trip(ox as f64, oy as f64) < 0.02);
            }
        }
        // fractional offsets: each pass is a convex combination, so the error
        // is at most twice the single-pass bilinear bound
        // (fx(1-fx) + fy(1-fy)) / 2 · max|f''| with max|f''| = 1/σ²
        for (ox, oy) in [(1.3, -0.7), (0.5, 0.0), (-1.75, 1.25), (0.1, 2.0)] {
            let frac = |v: f64| v - v.floor();
            let (fx, fy) = (frac(ox), frac(oy));
            let bound = 2.0 * (fx * (1.0 - fx) + fy * (1.0 - fy)) / 2.0 / 4.0;
            let err = round_trip(ox, oy);
            assert!(err <= bound + 1e-9, "offset ({ox}, {oy}): {err} > {bound}");
        }
    }

    #[test]
    fn difference_map_cases() {
        let a = gaussian(1, 32, 32, &[(12.0, 15.0)]);
        let zero = difference_map(&input(1, a.clone(), a.clone())).unwrap();
        assert!(zero.iter().all(|v| *v == 0.0));
        let shifted = gaussian(1, 32, 32, &[(14.0, 15.0)]);
        let d = difference_map(&input(1, shifted, a.clone())).unwrap();
        assert!(d.sum().abs() < 1e-6);
        assert!(d.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(d.iter().any(|v| *v > 0.1) && d.iter().any(|v| *v < -0.1));
        let other = gaussian(2, 32, 32, &[(1.0, 1.0), (2.0, 2.0)]);
        assert!(matches!(
            difference_map(&input(1, other, a)),
            Err(WarperError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn untrained_model_is_identity() {
        let a = gaussian(3, 49, 49, &[(10.0, 20.0), (30.5, 12.25), (24.0, 40.0)]);
        let c = gaussian(3, 49, 49, &[(11.0, 20.0), (30.0, 13.0), (24.0, 41.0)]);
        let weights = WarperWeights::new(2, 3, 8, 1).unwrap();
        let out = warper_forward(&weights, &input(2, c, a.clone())).unwrap();
        assert_eq!((out.width(), out.height(), out.joints()), (49, 49, 3));
        for (o, e) in out.data().iter().zip(a.data()) {
            assert!((o - e).abs() < 1e-12);
        }
    }

    #[test]
    fn mode_mismatch() {
        let a = gaussian(1, 16, 16, &[(8.0, 8.0)]);
        let weights = WarperWeights::new(1, 1, 4, 0).unwrap();
        assert!(matches!(
            warper_forward(&weights, &input(-1, a.clone(), a.clone())),
            Err(WarperError::ModeMismatch { expected: 1, found: -1 })
        ));
        assert!(WarperWeights::new(0, 1, 4, 0).is_err());
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        // <im2col(x), y> == <x, col2im(y)> for every dilation used
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (c, h, w) = (2, 7, 9);
        for d in [1, 2, 3, 6] {
            let x = Array2::from_shape_fn((c, h * w), |_| rng.random_range(-1.0..1.0));
            let y = Array2::from_shape_fn((c * 9, h * w), |_| rng.random_range(-1.0..1.0));
            let lhs = (&im2col(&x, h, w, 3, d) * &y).sum();
            let rhs = (&x * &col2im(&y, c, h, w, 3, d)).sum();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (cin, h, w, d) = (2, 6, 5, 2);
        let p = ConvParams::he_uniform(cin, 3, 3, d, &mut rng);
        let x = Array2::from_shape_fn((cin, h * w), |_| rng.random_range(-1.0..1.0));
        let (_, out) = p.forward(&x, h, w);
        for o in 0..3 {
            for y in 0..h {
                for xx in 0..w {
                    let mut s = p.bias[o];
                    for ci in 0..cin {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let sy = y as isize + (ky as isize - 1) * d as isize;
                                let sx = xx as isize + (kx as isize - 1) * d as isize;
                                if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                                    s += p.weight[[o, ci * 9 + ky * 3 + kx]] * x[[ci, sy as usize * w + sx as usize]];
                                }
                            }
                        }
                    }
                    assert!((s - out[[o, y * w + xx]]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn weights_file_round_trip() {
        let mut w = WarperWeights::new(-3, 4, 5, 9).unwrap();
        w.offset_heads[2].bias[1] = 0.125;
        w.quantize_f32();
        let mut buf = Vec::new();
        write_weights(&w, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"DWWT");
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), (-3i32) as u32);
        assert_eq!(buf.len(), 20 + 4 * w.parameter_count());
        let back = read_weights(buf.as_slice()).unwrap();
        assert_eq!(back, w);
        buf.push(0);
        assert!(read_weights(buf.as_slice()).is_err());
        assert!(read_weights(&b"DWHM"[..]).is_err());
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let a = gaussian(1, 16, 16, &[(8.0, 8.0)]);
        let t = gaussian(1, 16, 16, &[(9.0, 8.0)]);
        let data = vec![TrainSample {
            input: input(1, t.clone(), a),
            target: t,
        }];
        let init = WarperWeights::new(1, 1, 4, 2).unwrap();
        let hyper = TrainHyper {
            lr: 0.0,
            epochs: 3,
            ..Default::default()
        };
        let (out, _) = warper_train_from(init.clone(), &data, &hyper).unwrap();
        assert_eq!(out, init);
        assert!(matches!(warper_train(&[], 1, &hyper), Err(WarperError::EmptyDataset)));
        let (_, report) = warper_train(
            &data,
            1,
            &TrainHyper {
                epochs: 2,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(report.final_loss() <= report.initial_loss());
        assert!(matches!(
            warper_train(&data, 2, &hyper),
            Err(WarperError::ModeMismatch { .. })
        ));
    }
}
