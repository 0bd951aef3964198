//! Epipolar spatial correction of replicated heatmaps.
//!
//! For a replica of view `v` at frame `n`, every pixel `x` is blended with the
//! strongest response found along its epipolar line in each other view:
//!
//! ```text
//! Ĥ_v(x) = λ H_v(x) + (1 − λ)/M · Σ_{u ≠ v} max_{x′ ∈ l_u(x)} H_u(x′)
//! ```
//!
//! The sum skips `u = v` (a view has no epipolar geometry with itself) while
//! keeping the `1/M` normalization.

use std::collections::HashMap;

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{fundamental_from_cameras, CameraView, EpipolarLine, FundamentalMatrix, GeometryError};
use crate::heatmap::{Heatmap, ReplicatedGrid};

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("invalid fusion config: {0}")]
    Config(String),
    #[error("rig mismatch: {0}")]
    RigMismatch(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    /// Weight of the replica's own response, in `[0, 1]`.
    pub lambda: f64,
    /// Sampling step along epipolar lines in pixels, in `(0, 1]`.
    pub line_step: f64,
    /// Must stay false; a view's line through itself is undefined.
    pub include_self: bool,
    /// Evaluate the cross-view term at full resolution only near the current
    /// peak and interpolate a stride-4 lattice elsewhere.
    pub coarse_to_fine: bool,
    /// Full-resolution radius around the peak for `coarse_to_fine`, pixels.
    pub refine_radius: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            line_step: 0.5,
            include_self: false,
            coarse_to_fine: false,
            refine_radius: 6.0,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), FusionError> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(FusionError::Config(format!(
                "lambda must be in [0, 1], got {}",
                self.lambda
            )));
        }
        if !(self.line_step > 0.0 && self.line_step <= 1.0) {
            return Err(FusionError::Config(format!(
                "line_step must be in (0, 1], got {}",
                self.line_step
            )));
        }
        if self.include_self {
            return Err(FusionError::Config(
                "include_self is not supported: a view has no epipolar line in itself".into(),
            ));
        }
        if !(self.refine_radius > 0.0) {
            return Err(FusionError::Config("refine_radius must be positive".into()));
        }
        Ok(())
    }
}

/// Bounding box of a channel's nonzero values grown by one pixel, clipped to
/// the pixel-center rectangle. Bilinear samples outside it are exactly zero.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Support {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

fn channel_support(ch: &[f64], width: usize, height: usize) -> Option<Support> {
    let (mut c0, mut r0, mut c1, mut r1) = (usize::MAX, usize::MAX, 0usize, 0usize);
    for r in 0..height {
        let row = &ch[r * width..(r + 1) * width];
        if let Some(first) = row.iter().position(|v| *v > 0.0) {
            let last = row.iter().rposition(|v| *v > 0.0).expect("nonempty row");
            c0 = c0.min(first);
            c1 = c1.max(last);
            r0 = r0.min(r);
            r1 = r1.max(r);
        }
    }
    if c0 == usize::MAX {
        return None;
    }
    Some(Support {
        x0: c0.saturating_sub(1) as f64,
        y0: r0.saturating_sub(1) as f64,
        x1: (c1 + 1).min(width - 1) as f64,
        y1: (r1 + 1).min(height - 1) as f64,
    })
}

/// Maximum of samples along `line` at the lattice `t = k·step` (measured from
/// the line's foot point) plus the segment endpoints, clipped to a box.
fn max_on_segment(ch: &[f64], width: usize, height: usize, line: &EpipolarLine, step: f64, bx: &Support) -> f64 {
    let Some((p, q)) = line.clip_to_rect(bx.x0, bx.y0, bx.x1, bx.y1) else {
        return 0.0;
    };
    let foot = line.foot();
    let dir = line.direction();
    let ta = (p - foot).dot(&dir);
    let tb = (q - foot).dot(&dir);
    let (t0, t1) = if ta <= tb { (ta, tb) } else { (tb, ta) };
    let mut best = crate::heatmap::bilinear_zero_pad(ch, width, height, p.x, p.y)
        .max(crate::heatmap::bilinear_zero_pad(ch, width, height, q.x, q.y));
    let k0 = (t0 / step).ceil() as i64;
    let k1 = (t1 / step).floor() as i64;
    for k in k0..=k1 {
        let t = k as f64 * step;
        let v = sample_fast(ch, width, height, foot.x + dir.x * t, foot.y + dir.y * t);
        if v > best {
            best = v;
        }
    }
    best
}

/// Same arithmetic as [`crate::heatmap::bilinear_zero_pad`], without bounds
/// checks when all four taps are inside the grid.
#[inline(always)]
fn sample_fast(ch: &[f64], width: usize, height: usize, u: f64, v: f64) -> f64 {
    if u >= 0.0 && v >= 0.0 {
        let (x0, y0) = (u as usize, v as usize);
        if x0 + 1 < width && y0 + 1 < height {
            let fx = u - x0 as f64;
            let fy = v - y0 as f64;
            let i = y0 * width + x0;
            let row = &ch[i..i + width + 2];
            let top = row[0] * (1.0 - fx) + row[1] * fx;
            let bottom = row[width] * (1.0 - fx) + row[width + 1] * fx;
            return top * (1.0 - fy) + bottom * fy;
        }
    }
    crate::heatmap::bilinear_zero_pad(ch, width, height, u, v)
}

/// Largest bilinearly interpolated response of `joint` along `line`, sampled
/// at spacing at most `step` over the part of the line inside the pixel-center
/// rectangle `[0, W-1] x [0, H-1]`. Lines missing the image give 0.
pub fn max_along_line(h: &Heatmap, joint: usize, line: &EpipolarLine, step: f64) -> f64 {
    let bx = Support {
        x0: 0.0,
        y0: 0.0,
        x1: (h.width() - 1) as f64,
        y1: (h.height() - 1) as f64,
    };
    max_on_segment(h.channel(joint), h.width(), h.height(), line, step, &bx)
}

/// Cross-view term for every pixel of a `target_w x target_h` image in the
/// target view: per joint, the max of `source` along each pixel's epipolar
/// line. `f` maps target pixels to lines in the source view.
pub fn contribution_map(
    source: &Heatmap,
    f: &FundamentalMatrix,
    target_w: usize,
    target_h: usize,
    step: f64,
) -> Vec<f64> {
    contribution_map_masked(source, f, target_w, target_h, step, None)
}

/// `peaks[j]` set: full resolution within `radius` of that pixel, stride-4
/// lattice with bilinear fill elsewhere.
type Focus<'a> = Option<(&'a [Option<Vector2<f64>>], f64)>;

fn contribution_map_masked(
    source: &Heatmap,
    f: &FundamentalMatrix,
    target_w: usize,
    target_h: usize,
    step: f64,
    focus: Focus<'_>,
) -> Vec<f64> {
    let (sw, sh) = (source.width(), source.height());
    let n = target_w * target_h;
    let mut out = vec![0.0; source.joints() * n];
    // lines depend only on the pixel, not the joint
    let lines: Vec<Option<EpipolarLine>> = (0..n)
        .map(|i| {
            let x = Vector3::new((i % target_w) as f64, (i / target_w) as f64, 1.0);
            EpipolarLine::from_homogeneous(f.f * x).ok()
        })
        .collect();
    out.par_chunks_mut(n).enumerate().for_each(|(j, dst)| {
        let ch = source.channel(j);
        let Some(support) = channel_support(ch, sw, sh) else {
            return;
        };
        let whole_max = ch.iter().copied().fold(0.0, f64::max);
        let eval = |i: usize| match &lines[i] {
            Some(line) => max_on_segment(ch, sw, sh, line, step, &support),
            // the pixel is the epipole: every source point is consistent
            None => whole_max,
        };
        match focus.and_then(|(peaks, r)| peaks[j].map(|p| (p, r))) {
            None => {
                for (i, d) in dst.iter_mut().enumerate() {
                    *d = eval(i);
                }
            }
            Some((peak, radius)) => {
                const STRIDE: usize = 4;
                let lattice = |k: usize, len: usize| k % STRIDE == 0 || k == len - 1;
                let mut have = vec![false; n];
                for r in (0..target_h).filter(|r| lattice(*r, target_h)) {
                    for c in (0..target_w).filter(|c| lattice(*c, target_w)) {
                        dst[r * target_w + c] = eval(r * target_w + c);
                        have[r * target_w + c] = true;
                    }
                }
                let next = |k: usize, len: usize| {
                    let up = ((k / STRIDE) + 1) * STRIDE;
                    up.min(len - 1)
                };
                for r in 0..target_h {
                    for c in 0..target_w {
                        let i = r * target_w + c;
                        if have[i] {
                            continue;
                        }
                        let near = (Vector2::new(c as f64, r as f64) - peak).norm() <= radius;
                        if near {
                            dst[i] = eval(i);
                            continue;
                        }
                        let (ra, rb) = ((r / STRIDE) * STRIDE, next(r, target_h));
                        let (ca, cb) = ((c / STRIDE) * STRIDE, next(c, target_w));
                        let fy = if rb > ra {
                            (r - ra) as f64 / (rb - ra) as f64
                        } else {
                            0.0
                        };
                        let fx = if cb > ca {
                            (c - ca) as f64 / (cb - ca) as f64
                        } else {
                            0.0
                        };
                        let g = |rr: usize, cc: usize| {
                            let k = rr * target_w + cc;
                            if have[k] {
                                dst[k]
                            } else {
                                eval(k)
                            }
                        };
                        let top = g(ra, ca) * (1.0 - fx) + g(ra, cb) * fx;
                        let bottom = g(rb, ca) * (1.0 - fx) + g(rb, cb) * fx;
                        dst[i] = top * (1.0 - fy) + bottom * fy;
                    }
                }
            }
        }
    });
    out
}

/// Cross-view term for correcting `target` from `source` under `cfg`; with
/// `coarse_to_fine` the full-resolution region follows the target's peaks.
pub fn contribution_for(target: &Heatmap, source: &Heatmap, f: &FundamentalMatrix, cfg: &FusionConfig) -> Vec<f64> {
    let peaks = cfg.coarse_to_fine.then(|| peaks_of(target));
    contribution_map_masked(
        source,
        f,
        target.width(),
        target.height(),
        cfg.line_step,
        peaks.as_deref().map(|p| (p, cfg.refine_radius)),
    )
}

/// `λ·own + (1−λ)/M · Σ contributions`, clamped to `[0, 1]`.
pub fn blend(own: &Heatmap, contributions: &[&[f64]], lambda: f64, views: usize) -> Heatmap {
    let mut out = own.clone();
    if lambda == 1.0 {
        return out;
    }
    let w = (1.0 - lambda) / views as f64;
    let data = out.data_mut();
    for (i, v) in data.iter_mut().enumerate() {
        let cross: f64 = contributions.iter().map(|c| c[i]).sum();
        *v = (lambda * *v + w * cross).clamp(0.0, 1.0);
    }
    out
}

/// Pairwise fundamental matrices `F[v][u]` mapping pixels of `v` to lines in `u`.
pub fn pairwise_fundamentals(rig: &[CameraView]) -> Result<Vec<Vec<Option<FundamentalMatrix>>>, FusionError> {
    let m = rig.len();
    let mut out = vec![vec![None; m]; m];
    for v in 0..m {
        for u in 0..m {
            if u != v {
                out[v][u] = Some(fundamental_from_cameras(&rig[v], &rig[u])?);
            }
        }
    }
    Ok(out)
}

fn check_rig(grid: &ReplicatedGrid, rig: &[CameraView]) -> Result<(), FusionError> {
    if rig.len() != grid.views() {
        return Err(FusionError::RigMismatch(format!(
            "grid has {} views, rig has {} cameras",
            grid.views(),
            rig.len()
        )));
    }
    for (i, c) in rig.iter().enumerate() {
        if c.id != i {
            return Err(FusionError::RigMismatch(format!(
                "camera at position {i} has id {}",
                c.id
            )));
        }
        let h = &grid.entry(i, 0).heatmap;
        if (c.width(), c.height()) != (h.width(), h.height()) {
            return Err(FusionError::RigMismatch(format!(
                "camera {i} image is {}x{}, heatmaps are {}x{}",
                c.width(),
                c.height(),
                h.width(),
                h.height()
            )));
        }
    }
    Ok(())
}

fn peaks_of(h: &Heatmap) -> Vec<Option<Vector2<f64>>> {
    (0..h.joints())
        .map(|j| {
            crate::heatmap::decode_peak(h, j)
                .ok()
                .map(|k| Vector2::new(k.position.x.round(), k.position.y.round()))
        })
        .collect()
}

/// Corrects every non-anchor cell of a replicated grid; anchors pass through.
pub fn fuse_group(
    grid: &ReplicatedGrid,
    rig: &[CameraView],
    cfg: &FusionConfig,
) -> Result<ReplicatedGrid, FusionError> {
    cfg.validate()?;
    check_rig(grid, rig)?;
    let m = grid.views();
    let mut out = grid.clone();
    if cfg.lambda == 1.0 {
        return Ok(out);
    }
    let fmat = pairwise_fundamentals(rig)?;
    // replicas share storage, so one map per (source storage, target view)
    let mut cache: HashMap<(*const f64, usize), Vec<f64>> = HashMap::new();
    for v in 0..m {
        for col in 0..m {
            let target = grid.entry(v, col);
            if target.anchor {
                continue;
            }
            let h = &target.heatmap;
            let peaks = cfg.coarse_to_fine.then(|| peaks_of(h));
            for u in (0..m).filter(|u| *u != v) {
                let src = &grid.entry(u, col).heatmap;
                // coarse-to-fine maps depend on the target's peaks, so key them per target too
                let key = (src.data().as_ptr(), if cfg.coarse_to_fine { v * m + col } else { v });
                cache.entry(key).or_insert_with(|| {
                    let f = fmat[v][u].as_ref().expect("u != v");
                    contribution_map_masked(
                        src,
                        f,
                        h.width(),
                        h.height(),
                        cfg.line_step,
                        peaks.as_deref().map(|p| (p, cfg.refine_radius)),
                    )
                });
            }
            let contribs: Vec<&[f64]> = (0..m)
                .filter(|u| *u != v)
                .map(|u| {
                    let src = &grid.entry(u, col).heatmap;
                    let key = (src.data().as_ptr(), if cfg.coarse_to_fine { v * m + col } else { v });
                    cache[&key].as_slice()
                })
                .collect();
            out.entry_mut(v, col).heatmap = blend(h, &contribs, cfg.lambda, m);
        }
    }
    Ok(out)
}
