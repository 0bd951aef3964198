//! Per-joint heatmaps: Gaussian rendering, peak decoding, group replication
//! and the `DWHM` binary file format.

use std::io::{self, Read, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::Vector2;
use thiserror::Error;

/// Values below this are stored as exact zeros when rendering.
pub const RENDER_FLOOR: f64 = 1e-8;
const EMPTY_CHANNEL: f64 = 1e-12;

pub const MAGIC: &[u8; 4] = b"DWHM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum HeatmapError {
    #[error("bad dimensions: {0}")]
    BadDimensions(String),
    #[error("joint {joint} is out of range for {joints} joints")]
    JointOutOfRange { joint: usize, joints: usize },
    #[error("channel {0} is empty")]
    EmptyChannel(usize),
    #[error("invalid interleaved group: {0}")]
    GroupShapeMismatch(String),
    #[error("heatmap shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid heatmap file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// `J x H x W` grid of non-negative values for one view at one frame, joint-major
/// then row-major. Storage is shared between clones; writes go through
/// [`Heatmap::data_mut`], which copies on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub view: usize,
    pub frame: u32,
    joints: usize,
    width: usize,
    height: usize,
    data: Arc<Vec<f64>>,
}

impl Heatmap {
    pub fn zeros(view: usize, frame: u32, joints: usize, width: usize, height: usize) -> Self {
        Self {
            view,
            frame,
            joints,
            width,
            height,
            data: Arc::new(vec![0.0; joints * width * height]),
        }
    }

    pub fn from_data(
        view: usize,
        frame: u32,
        joints: usize,
        width: usize,
        height: usize,
        data: Vec<f64>,
    ) -> Result<Self, HeatmapError> {
        if data.len() != joints * width * height {
            return Err(HeatmapError::ShapeMismatch(format!(
                "expected {} values for {joints}x{height}x{width}, got {}",
                joints * width * height,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(HeatmapError::BadDimensions(format!(
                "value {bad} is negative or non-finite"
            )));
        }
        Ok(Self {
            view,
            frame,
            joints,
            width,
            height,
            data: Arc::new(data),
        })
    }

    pub fn joints(&self) -> usize {
        self.joints
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access; materializes a private copy if the storage is shared.
    pub fn data_mut(&mut self) -> &mut [f64] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    /// True if both heatmaps point at the same storage.
    pub fn shares_storage(&self, other: &Heatmap) -> bool {
        Arc::ptr_eq(&self.data, &other.data)
    }

    pub fn same_shape(&self, other: &Heatmap) -> bool {
        self.joints == other.joints && self.width == other.width && self.height == other.height
    }

    pub fn channel(&self, joint: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[joint * n..(joint + 1) * n]
    }

    pub fn channel_mut(&mut self, joint: usize) -> &mut [f64] {
        let n = self.width * self.height;
        &mut self.data_mut()[joint * n..(joint + 1) * n]
    }

    #[inline]
    pub fn at(&self, joint: usize, row: usize, col: usize) -> f64 {
        self.data[(joint * self.height + row) * self.width + col]
    }

    /// A clone relabeled to another frame, sharing storage.
    pub fn relabeled(&self, frame: u32) -> Self {
        Self { frame, ..self.clone() }
    }

    /// Rounds every value to the nearest `f32`, the precision of the file format.
    pub fn quantize_f32(&mut self) {
        for v in self.data_mut() {
            *v = *v as f32 as f64;
        }
    }

    /// Bilinear sample of one channel at continuous pixel coordinates; reads
    /// outside the pixel grid are zero.
    #[inline]
    pub fn bilinear(&self, joint: usize, u: f64, v: f64) -> f64 {
        bilinear_zero_pad(self.channel(joint), self.width, self.height, u, v)
    }
}

/// `x.floor()` without the libm call; exact for |x| < 2^63.
#[inline]
pub fn fast_floor(x: f64) -> f64 {
    let t = x as i64 as f64;
    if t > x {
        t - 1.0
    } else {
        t
    }
}

/// Bilinear interpolation over a row-major `height x width` grid with zero padding.
#[inline]
pub fn bilinear_zero_pad(grid: &[f64], width: usize, height: usize, u: f64, v: f64) -> f64 {
    let x0 = fast_floor(u);
    let y0 = fast_floor(v);
    let fx = u - x0;
    let fy = v - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let (w, h) = (width as i64, height as i64);
    let get = |x: i64, y: i64| {
        if x >= 0 && y >= 0 && x < w && y < h {
            grid[(y * w + x) as usize]
        } else {
            0.0
        }
    };
    let top = get(x0, y0) * (1.0 - fx) + get(x0 + 1, y0) * fx;
    let bottom = get(x0, y0 + 1) * (1.0 - fx) + get(x0 + 1, y0 + 1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Decoded 2D keypoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint2D {
    pub joint: usize,
    pub position: Vector2<f64>,
    pub confidence: f64,
}

impl Keypoint2D {
    pub fn new(joint: usize, u: f64, v: f64) -> Self {
        Self {
            joint,
            position: Vector2::new(u, v),
            confidence: 1.0,
        }
    }
}

/// Renders one unit-peak Gaussian per keypoint; the keypoint list index is the
/// channel index.
pub fn render_gaussian(
    keypoints: &[Keypoint2D],
    width: usize,
    height: usize,
    sigma: f64,
) -> Result<Heatmap, HeatmapError> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(HeatmapError::BadDimensions(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    if keypoints.is_empty() {
        return Err(HeatmapError::BadDimensions("at least one joint is required".into()));
    }
    if (width as f64) < 3.0 * sigma || (height as f64) < 3.0 * sigma {
        return Err(HeatmapError::BadDimensions(format!(
            "{width}x{height} grid is smaller than 3 sigma ({sigma})"
        )));
    }
    let joints = keypoints.len();
    let mut data = vec![0.0; joints * width * height];
    let inv = 1.0 / (2.0 * sigma * sigma);
    // beyond this radius every value is below the render floor
    let radius = (2.0 * sigma * sigma * (1.0 / RENDER_FLOOR).ln()).sqrt().ceil() + 1.0;
    for (j, kp) in keypoints.iter().enumerate() {
        let (cu, cv) = (kp.position.x, kp.position.y);
        if !cu.is_finite() || !cv.is_finite() {
            return Err(HeatmapError::BadDimensions(format!("keypoint {j} is not finite")));
        }
        let c0 = ((cu - radius).floor().max(0.0)) as usize;
        let c1 = ((cu + radius).ceil().min(width as f64 - 1.0)).max(-1.0);
        let r0 = ((cv - radius).floor().max(0.0)) as usize;
        let r1 = ((cv + radius).ceil().min(height as f64 - 1.0)).max(-1.0);
        if c1 < 0.0 || r1 < 0.0 {
            continue;
        }
        let channel = &mut data[j * width * height..(j + 1) * width * height];
        for r in r0..=(r1 as usize) {
            let dv = r as f64 - cv;
            for c in c0..=(c1 as usize) {
                let du = c as f64 - cu;
                let val = (-(du * du + dv * dv) * inv).exp();
                if val >= RENDER_FLOOR {
                    channel[r * width + c] = val;
                }
            }
        }
    }
    Heatmap::from_data(0, 0, joints, width, height, data)
}

/// Peak of one channel: integer argmax (ties go to the smallest `(row, col)`)
/// refined to sub-pixel precision from the clipped 3x3 neighborhood.
///
/// Each axis is refined from the neighborhood's marginal profile with a
/// log-parabola (Gaussian) fit, which is exact for rendered Gaussians. When a
/// profile value is zero, the neighbor is clipped away or the profile is not
/// log-concave, that axis falls back to the weighted centroid.
pub fn decode_peak(h: &Heatmap, joint: usize) -> Result<Keypoint2D, HeatmapError> {
    if joint >= h.joints {
        return Err(HeatmapError::JointOutOfRange {
            joint,
            joints: h.joints,
        });
    }
    let ch = h.channel(joint);
    let (w, hh) = (h.width, h.height);
    let mut best = 0usize;
    for (i, v) in ch.iter().enumerate() {
        if *v > ch[best] {
            best = i;
        }
    }
    let max = ch[best];
    if !(max > EMPTY_CHANNEL) {
        return Err(HeatmapError::EmptyChannel(joint));
    }
    let (row, col) = (best / w, best % w);

    // marginals over the clipped neighborhood, index 0/1/2 = offset -1/0/+1
    let mut col_profile = [None; 3];
    let mut row_profile = [None; 3];
    for (k, dc) in [-1i64, 0, 1].into_iter().enumerate() {
        let c = col as i64 + dc;
        if c < 0 || c >= w as i64 {
            continue;
        }
        let mut s = 0.0;
        for dr in -1i64..=1 {
            let r = row as i64 + dr;
            if r >= 0 && r < hh as i64 {
                s += ch[r as usize * w + c as usize];
            }
        }
        col_profile[k] = Some(s);
    }
    for (k, dr) in [-1i64, 0, 1].into_iter().enumerate() {
        let r = row as i64 + dr;
        if r < 0 || r >= hh as i64 {
            continue;
        }
        let mut s = 0.0;
        for dc in -1i64..=1 {
            let c = col as i64 + dc;
            if c >= 0 && c < w as i64 {
                s += ch[r as usize * w + c as usize];
            }
        }
        row_profile[k] = Some(s);
    }
    let du = refine_axis(&col_profile);
    let dv = refine_axis(&row_profile);
    Ok(Keypoint2D {
        joint,
        position: Vector2::new(col as f64 + du, row as f64 + dv),
        confidence: max,
    })
}

fn refine_axis(p: &[Option<f64>; 3]) -> f64 {
    if let [Some(l), Some(c), Some(r)] = *p {
        if l > 0.0 && c > 0.0 && r > 0.0 {
            let (ll, lc, lr) = (l.ln(), c.ln(), r.ln());
            let curvature = ll - 2.0 * lc + lr;
            if curvature < -1e-12 {
                return (0.5 * (ll - lr) / curvature).clamp(-0.5, 0.5);
            }
        }
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (k, v) in p.iter().enumerate() {
        if let Some(v) = v {
            num += (k as f64 - 1.0) * v;
            den += v;
        }
    }
    if den > 0.0 {
        (num / den).clamp(-0.5, 0.5)
    } else {
        0.0
    }
}

/// One cell of a replicated grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridEntry {
    pub heatmap: Heatmap,
    /// True when this cell holds the view's real observation for this frame.
    pub anchor: bool,
}

/// `M x M` grid: row `v` holds view `v` at every frame of the window, column
/// `k` is the `k`-th frame in ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicatedGrid {
    views: usize,
    frames: Vec<u32>,
    anchor_frames: Vec<u32>,
    entries: Vec<GridEntry>,
}

impl ReplicatedGrid {
    pub fn views(&self) -> usize {
        self.views
    }
    /// Column frame labels, ascending.
    pub fn frames(&self) -> &[u32] {
        &self.frames
    }
    /// Frame of each view's real observation.
    pub fn anchor_frame(&self, view: usize) -> u32 {
        self.anchor_frames[view]
    }
    pub fn entry(&self, view: usize, col: usize) -> &GridEntry {
        &self.entries[view * self.views + col]
    }
    pub fn entry_mut(&mut self, view: usize, col: usize) -> &mut GridEntry {
        &mut self.entries[view * self.views + col]
    }
    pub fn column_of(&self, frame: u32) -> Option<usize> {
        self.frames.iter().position(|f| *f == frame)
    }
    pub fn anchors(&self) -> impl Iterator<Item = &GridEntry> {
        self.entries.iter().filter(|e| e.anchor)
    }
    pub fn entries(&self) -> &[GridEntry] {
        &self.entries
    }
}

/// Replicates one interleaved group (view `j` observed at frame `M(i-1)+j+1`,
/// views 0-based, frames 1-based) into an `M x M` grid.
pub fn replicate_group(group: &[Heatmap]) -> Result<ReplicatedGrid, HeatmapError> {
    let m = group.len();
    if m < 2 {
        return Err(HeatmapError::GroupShapeMismatch(format!(
            "need at least 2 views, got {m}"
        )));
    }
    let mut by_view: Vec<Option<&Heatmap>> = vec![None; m];
    for h in group {
        if h.view >= m {
            return Err(HeatmapError::GroupShapeMismatch(format!(
                "view {} outside 0..{m}",
                h.view
            )));
        }
        if by_view[h.view].replace(h).is_some() {
            return Err(HeatmapError::GroupShapeMismatch(format!(
                "view {} appears twice",
                h.view
            )));
        }
    }
    let first = by_view[0].expect("all views present").frame;
    if first == 0 || (first - 1) % m as u32 != 0 {
        return Err(HeatmapError::GroupShapeMismatch(format!(
            "view 0 frame {first} does not start a group of {m}"
        )));
    }
    for (j, h) in by_view.iter().enumerate() {
        let h = h.expect("all views present");
        if h.frame != first + j as u32 {
            return Err(HeatmapError::GroupShapeMismatch(format!(
                "view {j} has frame {}, expected {}",
                h.frame,
                first + j as u32
            )));
        }
    }
    replicate_window(group)
}

/// Replicates any window holding one heatmap per view at distinct frames,
/// such as a sliding-window snapshot.
pub fn replicate_window(window: &[Heatmap]) -> Result<ReplicatedGrid, HeatmapError> {
    let m = window.len();
    if m < 2 {
        return Err(HeatmapError::GroupShapeMismatch(format!(
            "need at least 2 views, got {m}"
        )));
    }
    let mut by_view: Vec<Option<&Heatmap>> = vec![None; m];
    for h in window {
        if h.view >= m || by_view[h.view].replace(h).is_some() {
            return Err(HeatmapError::GroupShapeMismatch(format!(
                "view {} is out of range or duplicated",
                h.view
            )));
        }
    }
    let rows: Vec<&Heatmap> = by_view.into_iter().map(|h| h.expect("filled")).collect();
    if rows.iter().any(|h| !h.same_shape(rows[0])) {
        return Err(HeatmapError::ShapeMismatch(
            "heatmaps in a window must share dimensions".into(),
        ));
    }
    let mut frames: Vec<u32> = rows.iter().map(|h| h.frame).collect();
    frames.sort_unstable();
    if frames.windows(2).any(|w| w[0] == w[1]) {
        return Err(HeatmapError::GroupShapeMismatch("two views share a frame".into()));
    }
    let mut entries = Vec::with_capacity(m * m);
    for h in &rows {
        for &f in &frames {
            entries.push(GridEntry {
                heatmap: h.relabeled(f),
                anchor: f == h.frame,
            });
        }
    }
    Ok(ReplicatedGrid {
        views: m,
        anchor_frames: rows.iter().map(|h| h.frame).collect(),
        frames,
        entries,
    })
}

/// Writes the `DWHM` format: magic, then little-endian u32 version, view,
/// frame, J, H, W, then `J*H*W` little-endian f32 values.
pub fn write_heatmap<W: Write>(h: &Heatmap, mut out: W) -> Result<(), HeatmapError> {
    let mut buf = Vec::with_capacity(28 + 4 * h.data.len());
    buf.extend_from_slice(MAGIC);
    for v in [
        FORMAT_VERSION,
        h.view as u32,
        h.frame,
        h.joints as u32,
        h.height as u32,
        h.width as u32,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in h.data.iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_heatmap<R: Read>(mut input: R) -> Result<Heatmap, HeatmapError> {
    let mut header = [0u8; 28];
    input
        .read_exact(&mut header)
        .map_err(|e| HeatmapError::Format(format!("truncated header: {e}")))?;
    if &header[..4] != MAGIC {
        return Err(HeatmapError::Format("bad magic".into()));
    }
    let field = |i: usize| u32::from_le_bytes(header[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes"));
    if field(0) != FORMAT_VERSION {
        return Err(HeatmapError::Format(format!("unsupported version {}", field(0))));
    }
    let (view, frame, joints, height, width) = (
        field(1) as usize,
        field(2),
        field(3) as usize,
        field(4) as usize,
        field(5) as usize,
    );
    let n = joints
        .checked_mul(height)
        .and_then(|v| v.checked_mul(width))
        .ok_or_else(|| HeatmapError::Format("dimensions overflow".into()))?;
    let mut raw = Vec::new();
    input.read_to_end(&mut raw)?;
    if raw.len() != 4 * n {
        return Err(HeatmapError::Format(format!(
            "expected {} payload bytes, found {}",
            4 * n,
            raw.len()
        )));
    }
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Heatmap::from_data(view, frame, joints, width, height, data)
}

pub fn save_heatmap(h: &Heatmap, path: &Path) -> Result<(), HeatmapError> {
    let file = std::fs::File::create(path)?;
    write_heatmap(h, io::BufWriter::new(file))
}

pub fn load_heatmap(path: &Path) -> Result<Heatmap, HeatmapError> {
    let file = std::fs::File::open(path)?;
    read_heatmap(io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn single(u: f64, v: f64, size: usize, sigma: f64) -> Heatmap {
        render_gaussian(&[Keypoint2D::new(0, u, v)], size, size, sigma).unwrap()
    }

    #[test]
    fn gaussian_values() {
        let h = single(10.0, 10.0, 32, 2.0);
        assert_eq!(h.at(0, 10, 10), 1.0);
        assert_abs_diff_eq!(h.at(0, 11, 10), (-1.0f64 / 8.0).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(h.at(0, 10, 11), (-1.0f64 / 8.0).exp(), epsilon = 1e-15);
        assert!(h.data().iter().all(|v| *v == 0.0 || *v >= RENDER_FLOOR));
    }

    #[test]
    fn corner_peak_decays() {
        let h = single(0.0, 0.0, 16, 2.0);
        assert_eq!(h.at(0, 0, 0), 1.0);
        for k in 1..16 {
            assert!(h.at(0, 0, k) <= h.at(0, 0, k - 1));
            assert!(h.at(0, k, 0) <= h.at(0, k - 1, 0));
        }
    }

    #[test]
    fn gaussian_mass_matches_quadrature() {
        let sigma = 2.0;
        let h = single(31.3, 30.6, 64, sigma);
        let sum: f64 = h.channel(0).iter().sum();
        let expected = 2.0 * std::f64::consts::PI * sigma * sigma;
        assert!((sum - expected).abs() / expected < 0.02, "{sum} vs {expected}");
    }

    #[test]
    fn render_rejects_tiny_grid() {
        assert!(matches!(
            render_gaussian(&[Keypoint2D::new(0, 1.0, 1.0)], 5, 10, 2.0),
            Err(HeatmapError::BadDimensions(_))
        ));
        assert!(render_gaussian(&[Keypoint2D::new(0, 1.0, 1.0)], 10, 10, 0.0).is_err());
    }

    #[test]
    fn decode_centered_and_offset() {
        let kp = decode_peak(&single(10.0, 10.0, 32, 2.0), 0).unwrap();
        assert_abs_diff_eq!(kp.position, Vector2::new(10.0, 10.0), epsilon = 0.01);
        assert_eq!(kp.confidence, 1.0);
        let kp = decode_peak(&single(10.4, 10.0, 32, 2.0), 0).unwrap();
        assert!((kp.position - Vector2::new(10.4, 10.0)).norm() < 0.15);
    }

    #[test]
    fn decode_tie_prefers_first_row_major() {
        let h = render_gaussian(&[Keypoint2D::new(0, 9.0, 9.0)], 20, 20, 1.0).unwrap();
        let other = render_gaussian(&[Keypoint2D::new(0, 5.0, 5.0)], 20, 20, 1.0).unwrap();
        let data: Vec<f64> = h.data().iter().zip(other.data()).map(|(a, b)| a.max(*b)).collect();
        let both = Heatmap::from_data(0, 0, 1, 20, 20, data).unwrap();
        let kp = decode_peak(&both, 0).unwrap();
        assert_abs_diff_eq!(kp.position, Vector2::new(5.0, 5.0), epsilon = 1e-9);
    }

    #[test]
    fn decode_errors() {
        let h = Heatmap::zeros(0, 0, 2, 8, 8);
        assert!(matches!(decode_peak(&h, 0), Err(HeatmapError::EmptyChannel(0))));
        assert!(matches!(decode_peak(&h, 2), Err(HeatmapError::JointOutOfRange { .. })));
    }

    #[test]
    fn decode_at_border_stays_in_range() {
        let kp = decode_peak(&single(0.2, 15.0, 16, 2.0), 0).unwrap();
        assert!(kp.position.x >= -0.5 && kp.position.y <= 15.5);
    }

    fn group(m: usize, first: u32) -> Vec<Heatmap> {
        (0..m)
            .map(|v| {
                let mut h = single(5.0 + v as f64, 6.0, 16, 1.5);
                h.view = v;
                h.frame = first + v as u32;
                h
            })
            .collect()
    }

    #[test]
    fn replicate_group_structure() {
        let g = group(4, 1);
        let grid = replicate_group(&g).unwrap();
        assert_eq!(grid.frames(), &[1, 2, 3, 4]);
        assert_eq!(grid.anchors().count(), 4);
        for v in 0..4 {
            let anchors: Vec<usize> = (0..4).filter(|c| grid.entry(v, *c).anchor).collect();
            assert_eq!(anchors, vec![v]);
            for c in 0..4 {
                let e = grid.entry(v, c);
                assert_eq!(e.heatmap.data(), g[v].data());
                assert!(e.heatmap.shares_storage(&g[v]));
                assert_eq!(e.heatmap.frame, grid.frames()[c]);
            }
        }
        assert_eq!(grid.entry(2, 0).heatmap.data(), g[2].data());
        let grid2 = replicate_group(&group(2, 3)).unwrap();
        assert_eq!(grid2.frames(), &[3, 4]);
        assert_eq!(grid2.anchors().count(), 2);
    }

    #[test]
    fn replicate_group_rejects_bad_shapes() {
        let mut g = group(4, 1);
        g[2].frame = 7;
        assert!(matches!(replicate_group(&g), Err(HeatmapError::GroupShapeMismatch(_))));
        assert!(replicate_group(&group(4, 2)).is_err());
        let mut g = group(3, 1);
        g[1].view = 0;
        assert!(replicate_group(&g).is_err());
        assert!(replicate_group(&group(1, 1)).is_err());
    }

    #[test]
    fn replica_mutation_copies() {
        let g = group(2, 1);
        let before = g[0].data()[0];
        let mut grid = replicate_group(&g).unwrap();
        grid.entry_mut(0, 1).heatmap.data_mut()[0] = 0.5;
        assert_eq!(g[0].data()[0], before);
        assert!(!grid.entry(0, 1).heatmap.shares_storage(&g[0]));
        assert!(grid.entry(0, 0).heatmap.shares_storage(&g[0]));
    }

    #[test]
    fn file_rejects_garbage() {
        assert!(read_heatmap(&b"DWHX"[..]).is_err());
        let mut buf = Vec::new();
        write_heatmap(&single(3.0, 3.0, 8, 1.0), &mut buf).unwrap();
        buf.pop();
        assert!(matches!(read_heatmap(&buf[..]), Err(HeatmapError::Format(_))));
    }

    #[test]
    fn file_header_layout() {
        let mut h = Heatmap::zeros(3, 17, 2, 5, 4);
        h.data_mut()[1] = 0.25;
        let mut buf = Vec::new();
        write_heatmap(&h, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"DWHM");
        assert_eq!(buf.len(), 28 + 4 * 2 * 5 * 4);
        let words: Vec<u32> = buf[4..28]
            .chunks(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(words, vec![1, 3, 17, 2, 4, 5]);
        assert_eq!(f32::from_le_bytes(buf[32..36].try_into().unwrap()), 0.25);
    }

    proptest! {
        #[test]
        fn file_round_trip_is_bit_exact(
            values in proptest::collection::vec(0.0f32..1.0, 2 * 3 * 5),
            view in 0usize..8,
            frame in 0u32..1000,
        ) {
            let h = Heatmap::from_data(view, frame, 2, 5, 3, values.iter().map(|v| *v as f64).collect()).unwrap();
            let mut buf = Vec::new();
            write_heatmap(&h, &mut buf).unwrap();
            let back = read_heatmap(&buf[..]).unwrap();
            prop_assert_eq!(back.view, view);
            prop_assert_eq!(back.frame, frame);
            for (a, b) in h.data().iter().zip(back.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }

        #[test]
        fn render_decode_round_trip(
            u in 12.0f64..20.0,
            v in 12.0f64..20.0,
            sigma in 1.5f64..3.0,
        ) {
            let kp = decode_peak(&single(u, v, 32, sigma), 0).unwrap();
            prop_assert!((kp.position - Vector2::new(u, v)).norm() < 0.15);
        }
    }
}
