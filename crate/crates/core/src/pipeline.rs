//! The per-arrival pass: every new heatmap slides the window, the stale views
//! are corrected toward the arrival's frame, and the decoded peaks are
//! triangulated into one skeleton.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::{blend, contribution_for, pairwise_fundamentals, FusionConfig, FusionError};
use crate::geometry::{CameraView, FundamentalMatrix};
use crate::heatmap::{decode_peak, Heatmap, HeatmapError};
use crate::scheduler::{CacheStats, SchedulerError, WindowSnapshot, WindowState};
use crate::triangulate::{triangulate_refined, Observation, Skeleton3D, TriangulationError};
use crate::warper::{warper_forward, WarpInput, WarperError, WarperWeights};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Warper(#[from] WarperError),
    #[error(transparent)]
    Heatmap(#[from] HeatmapError),
    #[error(transparent)]
    Triangulation(#[from] TriangulationError),
    #[error("variant {0} needs warper weights")]
    MissingWarpers(PipelineVariant),
    #[error("variant {0} cannot run on a sparse stream")]
    WrongVariant(PipelineVariant),
    #[error("input mismatch: {0}")]
    Input(String),
}

/// Which correction stages run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineVariant {
    /// Stale views keep their last heatmap.
    ReplicateOnly,
    /// Stale views are corrected by epipolar fusion.
    SpatialFusion,
    /// Fusion followed by the temporal warper.
    FusionPlusWarper,
    /// Every view observed at every frame (reference upper bound).
    DenseOracle,
}

impl PipelineVariant {
    pub const ALL: [PipelineVariant; 4] = [
        PipelineVariant::ReplicateOnly,
        PipelineVariant::SpatialFusion,
        PipelineVariant::FusionPlusWarper,
        PipelineVariant::DenseOracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PipelineVariant::ReplicateOnly => "replicate_only",
            PipelineVariant::SpatialFusion => "spatial_fusion",
            PipelineVariant::FusionPlusWarper => "fusion_plus_warper",
            PipelineVariant::DenseOracle => "dense_oracle",
        }
    }
}

impl fmt::Display for PipelineVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PipelineVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown variant `{s}` (expected one of replicate_only, spatial_fusion, fusion_plus_warper, dense_oracle)"))
    }
}

/// One trained model per signed temporal mode.
#[derive(Debug, Clone, Default)]
pub struct WarperBank {
    models: BTreeMap<i32, WarperWeights>,
}

impl WarperBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, weights: WarperWeights) {
        self.models.insert(weights.temporal_mode, weights);
    }

    pub fn get(&self, mode: i32) -> Option<&WarperWeights> {
        self.models.get(&mode)
    }

    pub fn modes(&self) -> impl Iterator<Item = i32> + '_ {
        self.models.keys().copied()
    }

    pub fn models(&self) -> impl Iterator<Item = &WarperWeights> {
        self.models.values()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub fusion: FusionConfig,
    /// The warper runs on the box holding the anchor's support grown by this
    /// many pixels; output outside the box is zero. Negative
    /// values run it on the whole image.
    pub warp_margin_px: i64,
    /// Window cache capacity in heatmaps; 0 selects `4 M`.
    pub cache_capacity: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            fusion: FusionConfig::default(),
            warp_margin_px: 10,
            cache_capacity: 0,
        }
    }
}

/// Wall-clock time per stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub fusion_s: f64,
    pub warp_s: f64,
    pub triangulate_s: f64,
}

impl StageTimes {
    fn add(&mut self, other: &StageTimes) {
        self.fusion_s += other.fusion_s;
        self.warp_s += other.warp_s;
        self.triangulate_s += other.triangulate_s;
    }
}

/// Result of one processed window.
#[derive(Debug, Clone)]
pub struct FrameOutput {
    pub frame: u32,
    pub skeleton: Skeleton3D,
    /// Final per-view heatmaps at `frame`, indexed by view.
    pub heatmaps: Vec<Heatmap>,
    /// Warper inputs built for the stale views (fusion variants only).
    pub warp_inputs: Vec<Option<WarpInput>>,
    /// Joints seen by fewer than two views, held from the previous frame.
    pub held_joints: usize,
    /// Stale views whose temporal mode had no trained warper.
    pub warp_fallbacks: usize,
    /// Skeleton from the fused heatmaps before warping, when requested with
    /// [`StreamPipeline::also_fused`]; equals the spatial-fusion output.
    pub fused: Option<(Skeleton3D, usize)>,
    pub times: StageTimes,
}

fn elapsed(start: Instant) -> f64 {
    Duration::as_secs_f64(&start.elapsed())
}

/// Heatmap values below this are treated as background when boxing.
pub const SUPPORT_FLOOR: f64 = 1e-3;

/// Smallest box holding every anchor value above [`SUPPORT_FLOOR`], grown by
/// `margin` and clipped to the image: `(x0, y0, w, h)`. The warper only moves
/// anchor content, so the fused map's epipolar bands do not widen the box.
pub fn support_box(anchor: &Heatmap, margin: usize) -> Option<(usize, usize, usize, usize)> {
    let (w, h) = (anchor.width(), anchor.height());
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for (i, v) in anchor.data().iter().enumerate() {
        if *v > SUPPORT_FLOOR {
            let p = i % (w * h);
            let (x, y) = (p % w, p / w);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
    }
    if x0 == usize::MAX {
        return None;
    }
    let (x0, y0) = (x0.saturating_sub(margin), y0.saturating_sub(margin));
    let (x1, y1) = ((x1 + margin).min(w - 1), (y1 + margin).min(h - 1));
    Some((x0, y0, x1 - x0 + 1, y1 - y0 + 1))
}

/// Copies the `(x0, y0, w, h)` window out of `src`.
pub fn crop(src: &Heatmap, bx: (usize, usize, usize, usize)) -> Heatmap {
    let (x0, y0, w, h) = bx;
    let mut data = Vec::with_capacity(src.joints() * w * h);
    for j in 0..src.joints() {
        let ch = src.channel(j);
        for y in y0..y0 + h {
            data.extend_from_slice(&ch[y * src.width() + x0..][..w]);
        }
    }
    Heatmap::from_data(src.view, src.frame, src.joints(), w, h, data).expect("crop of a valid heatmap")
}

fn paste(small: &Heatmap, bx: (usize, usize, usize, usize), width: usize, height: usize) -> Heatmap {
    let (x0, y0, w, h) = bx;
    let mut out = Heatmap::zeros(small.view, small.frame, small.joints(), width, height);
    for j in 0..small.joints() {
        let src = small.channel(j);
        let dst = out.channel_mut(j);
        for y in 0..h {
            dst[(y0 + y) * width + x0..][..w].copy_from_slice(&src[y * w..][..w]);
        }
    }
    out
}

/// Runs the warper, optionally on the support box of its inputs.
pub fn warp_entry(weights: &WarperWeights, input: &WarpInput, margin: i64) -> Result<Heatmap, WarperError> {
    if margin < 0 {
        return warper_forward(weights, input);
    }
    let (w, h) = (input.anchor.width(), input.anchor.height());
    let Some(bx) = support_box(&input.anchor, margin as usize) else {
        return warper_forward(weights, input);
    };
    let small = WarpInput {
        corrected: crop(&input.corrected, bx),
        anchor: crop(&input.anchor, bx),
        relative_offset: input.relative_offset,
    };
    Ok(paste(&warper_forward(weights, &small)?, bx, w, h))
}

/// Decodes every view and triangulates each joint; joints with fewer than two
/// usable views take `fallback`'s position.
pub fn triangulate_views(
    frame: u32,
    heatmaps: &[Heatmap],
    rig: &[CameraView],
    fallback: Option<&Skeleton3D>,
) -> Result<(Skeleton3D, usize), PipelineError> {
    let joints = heatmaps.first().map(|h| h.joints()).unwrap_or(0);
    let results: Vec<Result<Option<(Vector3<f64>, f64)>, PipelineError>> = (0..joints)
        .into_par_iter()
        .map(|j| {
            let mut obs = Vec::with_capacity(heatmaps.len());
            for h in heatmaps {
                match decode_peak(h, j) {
                    Ok(kp) => obs.push(Observation::new(h.view, kp.position, kp.confidence)),
                    Err(HeatmapError::EmptyChannel(_)) => {}
                    Err(e) => return Err(e.into()),
                }
            }
            if obs.len() < 2 {
                return Ok(None);
            }
            match triangulate_refined(&obs, rig) {
                Ok(r) => Ok(Some((r.point, r.rms_px))),
                Err(TriangulationError::DegenerateGeometry(_)) => Ok(None),
                Err(e) => Err(e.into()),
            }
        })
        .collect();
    let mut points = Vec::with_capacity(joints);
    let mut residuals = Vec::with_capacity(joints);
    let mut held = 0;
    for (j, r) in results.into_iter().enumerate() {
        match r? {
            Some((p, res)) => {
                points.push(p);
                residuals.push(res);
            }
            None => {
                held += 1;
                points.push(fallback.map(|s| s.joints[j]).unwrap_or_else(Vector3::zeros));
                residuals.push(0.0);
            }
        }
    }
    Ok((
        Skeleton3D {
            frame,
            joints: points,
            per_joint_residual: residuals,
        },
        held,
    ))
}

/// Streaming pipeline for one sparse interleaved stream.
pub struct StreamPipeline<'a> {
    rig: &'a [CameraView],
    variant: PipelineVariant,
    cfg: PipelineConfig,
    warpers: Option<&'a WarperBank>,
    fmat: Vec<Vec<Option<FundamentalMatrix>>>,
    window: WindowState,
    /// Cross-view maps keyed by (source view, source frame, target view).
    contributions: HashMap<(usize, u32, usize), Arc<Vec<f64>>>,
    keep_warp_inputs: bool,
    also_fused: bool,
    last: Option<Skeleton3D>,
    last_fused: Option<Skeleton3D>,
    times: StageTimes,
}

impl<'a> StreamPipeline<'a> {
    pub fn new(
        rig: &'a [CameraView],
        variant: PipelineVariant,
        cfg: PipelineConfig,
        warpers: Option<&'a WarperBank>,
    ) -> Result<Self, PipelineError> {
        cfg.fusion.validate()?;
        if variant == PipelineVariant::DenseOracle {
            return Err(PipelineError::WrongVariant(variant));
        }
        if variant == PipelineVariant::FusionPlusWarper && warpers.is_none_or(|b| b.is_empty()) {
            return Err(PipelineError::MissingWarpers(variant));
        }
        for (i, c) in rig.iter().enumerate() {
            if c.id != i {
                return Err(PipelineError::Input(format!("camera at position {i} has id {}", c.id)));
            }
        }
        let m = rig.len();
        let window = if cfg.cache_capacity == 0 {
            WindowState::new(m)
        } else {
            WindowState::with_capacity(m, cfg.cache_capacity)
        };
        Ok(Self {
            rig,
            variant,
            cfg,
            warpers,
            fmat: pairwise_fundamentals(rig)?,
            window,
            contributions: HashMap::new(),
            keep_warp_inputs: false,
            also_fused: false,
            last: None,
            last_fused: None,
            times: StageTimes::default(),
        })
    }

    /// Keep the warper inputs in each [`FrameOutput`] (for building training sets).
    pub fn keep_warp_inputs(mut self, keep: bool) -> Self {
        self.keep_warp_inputs = keep;
        self
    }

    /// With the warper variant, also triangulate the pre-warp fused heatmaps,
    /// so one pass yields both the spatial-fusion and the warper output.
    pub fn also_fused(mut self, on: bool) -> Self {
        self.also_fused = on;
        self
    }

    pub fn cache_stats(&self) -> CacheStats {
        self.window.stats()
    }

    pub fn times(&self) -> StageTimes {
        self.times
    }

    pub fn window(&self) -> &WindowState {
        &self.window
    }

    /// Feeds one arrival; returns the skeleton for its frame once the window
    /// is warm.
    pub fn push(&mut self, view: usize, frame: u32, heatmap: Heatmap) -> Result<Option<FrameOutput>, PipelineError> {
        if view >= self.rig.len() {
            return Err(PipelineError::Input(format!("view {view} is not in the rig")));
        }
        let cam = &self.rig[view];
        if (heatmap.width(), heatmap.height()) != (cam.width(), cam.height()) {
            return Err(PipelineError::Input(format!(
                "heatmap for view {view} is {}x{}, camera image is {}x{}",
                heatmap.width(),
                heatmap.height(),
                cam.width(),
                cam.height()
            )));
        }
        let Some(snapshot) = self.window.slide(view, frame, heatmap)? else {
            return Ok(None);
        };
        let out = self.process(&snapshot)?;
        self.times.add(&out.times);
        self.last = Some(out.skeleton.clone());
        // contributions from frames that left the window are dead
        let live: Vec<(usize, u32)> = snapshot.entries.iter().enumerate().map(|(v, e)| (v, e.0)).collect();
        self.contributions.retain(|k, _| live.contains(&(k.0, k.1)));
        Ok(Some(out))
    }

    fn contribution(&mut self, source_view: usize, source: &Heatmap, target: &Heatmap) -> Arc<Vec<f64>> {
        let target_view = target.view;
        let f = self.fmat[target_view][source_view].as_ref().expect("distinct views");
        if self.cfg.fusion.coarse_to_fine {
            return Arc::new(contribution_for(target, source, f, &self.cfg.fusion));
        }
        let key = (source_view, source.frame, target_view);
        if let Some(c) = self.contributions.get(&key) {
            return c.clone();
        }
        let c = Arc::new(contribution_for(target, source, f, &self.cfg.fusion));
        self.contributions.insert(key, c.clone());
        c
    }

    fn process(&mut self, snap: &WindowSnapshot) -> Result<FrameOutput, PipelineError> {
        let m = self.rig.len();
        let n = snap.target_frame;
        let mut times = StageTimes::default();
        let anchors: Vec<Heatmap> = snap.entries.iter().map(|(_, h)| (**h).clone()).collect();
        let mut finals: Vec<Heatmap> = anchors.iter().map(|h| h.relabeled(n)).collect();
        let mut warp_inputs: Vec<Option<WarpInput>> = vec![None; m];
        let mut fallbacks = 0;

        if self.variant != PipelineVariant::ReplicateOnly {
            let t = Instant::now();
            let lambda = self.cfg.fusion.lambda;
            for v in (0..m).filter(|v| *v != snap.arrival_view) {
                let own = anchors[v].relabeled(n);
                let fused = if lambda == 1.0 {
                    own.clone()
                } else {
                    let contribs: Vec<Arc<Vec<f64>>> = (0..m)
                        .filter(|u| *u != v)
                        .map(|u| self.contribution(u, &anchors[u], &own))
                        .collect();
                    let refs: Vec<&[f64]> = contribs.iter().map(|c| c.as_slice()).collect();
                    blend(&own, &refs, lambda, m)
                };
                let offset = n as i64 - anchors[v].frame as i64;
                warp_inputs[v] = Some(WarpInput {
                    corrected: fused.clone(),
                    anchor: anchors[v].clone(),
                    relative_offset: offset as i32,
                });
                finals[v] = fused;
            }
            times.fusion_s = elapsed(t);
        }

        let mut fused = None;
        if self.variant == PipelineVariant::FusionPlusWarper {
            if self.also_fused {
                let t = Instant::now();
                let out = triangulate_views(n, &finals, self.rig, self.last_fused.as_ref())?;
                self.last_fused = Some(out.0.clone());
                fused = Some(out);
                times.triangulate_s += elapsed(t);
            }
            let t = Instant::now();
            let bank = self.warpers.expect("checked at construction");
            let margin = self.cfg.warp_margin_px;
            let jobs: Vec<(usize, &WarperWeights, &WarpInput)> = warp_inputs
                .iter()
                .enumerate()
                .filter_map(|(v, inp)| inp.as_ref().map(|i| (v, i)))
                .filter_map(|(v, inp)| match bank.get(inp.relative_offset) {
                    Some(w) => Some((v, w, inp)),
                    None => {
                        fallbacks += 1;
                        None
                    }
                })
                .collect();
            let warped = jobs
                .par_iter()
                .map(|(v, w, inp)| warp_entry(w, inp, margin).map(|h| (*v, h)))
                .collect::<Result<Vec<_>, _>>()?;
            for (v, h) in warped {
                finals[v] = h;
            }
            times.warp_s = elapsed(t);
        }

        let t = Instant::now();
        let (skeleton, held) = triangulate_views(n, &finals, self.rig, self.last.as_ref())?;
        times.triangulate_s += elapsed(t);
        if !self.keep_warp_inputs {
            warp_inputs.iter_mut().for_each(|w| *w = None);
        }
        Ok(FrameOutput {
            frame: n,
            skeleton,
            heatmaps: finals,
            warp_inputs,
            held_joints: held,
            warp_fallbacks: fallbacks,
            fused,
            times,
        })
    }
}

/// Dense reference: all views observed at `frame`.
pub fn process_dense(
    frame: u32,
    heatmaps: &[Heatmap],
    rig: &[CameraView],
    previous: Option<&Skeleton3D>,
) -> Result<(Skeleton3D, usize), PipelineError> {
    if heatmaps.len() != rig.len() {
        return Err(PipelineError::Input(format!(
            "dense frame {frame} has {} heatmaps for {} cameras",
            heatmaps.len(),
            rig.len()
        )));
    }
    if heatmaps.iter().any(|h| h.frame != frame) {
        return Err(PipelineError::Input(format!("dense frame {frame} mixes frames")));
    }
    triangulate_views(frame, heatmaps, rig, previous)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::fuse_group;
    use crate::heatmap::replicate_window;
    use crate::scheduler::SamplingPlan;
    use crate::synth::{build_rig, sample_sequence, MotionModel, MotionSpec, NoiseSpec, RigSpec, Scene};

    fn scene(motion: bool) -> Scene {
        let model = if motion {
            MotionModel::from_spec(&MotionSpec::default(), 4).unwrap()
        } else {
            MotionModel::static_pose(17, MotionSpec::default().bounds)
        };
        let rig = build_rig(&RigSpec::default()).unwrap();
        Scene::new(model, rig, SamplingPlan::uniform(4, 12.5), 2.0, NoiseSpec::default()).unwrap()
    }

    #[test]
    fn variant_names_round_trip() {
        for v in PipelineVariant::ALL {
            assert_eq!(v.name().parse::<PipelineVariant>().unwrap(), v);
        }
        assert!("full".parse::<PipelineVariant>().is_err());
    }

    #[test]
    fn one_output_per_arrival_after_warm_up() {
        let s = scene(true);
        let seq = sample_sequence(&s, 0.4).unwrap();
        let mut p =
            StreamPipeline::new(&s.rig, PipelineVariant::ReplicateOnly, PipelineConfig::default(), None).unwrap();
        let mut frames = Vec::new();
        for smp in &seq.samples {
            if let Some(out) = p.push(smp.view, smp.frame, smp.heatmap.clone()).unwrap() {
                frames.push(out.frame);
            }
        }
        assert_eq!(frames, (4..=seq.slots).collect::<Vec<_>>());
        assert_eq!(p.cache_stats().hits, 3 * frames.len() as u64);
    }

    #[test]
    fn static_scene_replication_is_exact() {
        let s = scene(false);
        let seq = sample_sequence(&s, 0.4).unwrap();
        let mut p =
            StreamPipeline::new(&s.rig, PipelineVariant::ReplicateOnly, PipelineConfig::default(), None).unwrap();
        for smp in &seq.samples {
            if let Some(out) = p.push(smp.view, smp.frame, smp.heatmap.clone()).unwrap() {
                let truth = &seq.truth_3d[out.frame as usize - 1];
                for (a, b) in out.skeleton.joints.iter().zip(truth) {
                    assert!((a - b).norm() < 2e-3);
                }
            }
        }
    }

    #[test]
    fn streaming_fusion_matches_group_fusion() {
        let s = scene(true);
        let seq = sample_sequence(&s, 0.6).unwrap();
        let cfg = PipelineConfig::default();
        let mut p = StreamPipeline::new(&s.rig, PipelineVariant::SpatialFusion, cfg, None).unwrap();
        let mut window: Vec<Option<Heatmap>> = vec![None; 4];
        let mut checked = 0;
        for smp in &seq.samples {
            window[smp.view] = Some(smp.heatmap.clone());
            let Some(out) = p.push(smp.view, smp.frame, smp.heatmap.clone()).unwrap() else {
                continue;
            };
            if checked >= 2 {
                continue;
            }
            let hs: Vec<Heatmap> = window.iter().map(|h| h.clone().unwrap()).collect();
            let grid = replicate_window(&hs).unwrap();
            let fused = fuse_group(&grid, &s.rig, &cfg.fusion).unwrap();
            let col = fused.column_of(out.frame).unwrap();
            for v in 0..4 {
                assert_eq!(fused.entry(v, col).heatmap.data(), out.heatmaps[v].data());
            }
            checked += 1;
        }
        assert_eq!(checked, 2);
    }

    #[test]
    fn warper_variant_needs_weights() {
        let s = scene(true);
        assert!(matches!(
            StreamPipeline::new(
                &s.rig,
                PipelineVariant::FusionPlusWarper,
                PipelineConfig::default(),
                None
            ),
            Err(PipelineError::MissingWarpers(_))
        ));
        assert!(matches!(
            StreamPipeline::new(&s.rig, PipelineVariant::DenseOracle, PipelineConfig::default(), None),
            Err(PipelineError::WrongVariant(_))
        ));
    }

    #[test]
    fn untrained_warper_leaves_anchor_and_crop_agrees() {
        let s = scene(true);
        let seq = sample_sequence(&s, 0.3).unwrap();
        let mut bank = WarperBank::new();
        for mode in 1..=3 {
            bank.insert(WarperWeights::new(mode, 17, 4, mode as u64).unwrap());
        }
        let mut p = StreamPipeline::new(
            &s.rig,
            PipelineVariant::FusionPlusWarper,
            PipelineConfig::default(),
            Some(&bank),
        )
        .unwrap()
        .keep_warp_inputs(true);
        let mut seen = 0;
        for smp in &seq.samples {
            if let Some(out) = p.push(smp.view, smp.frame, smp.heatmap.clone()).unwrap() {
                for inp in out.warp_inputs.iter().flatten() {
                    let w = bank.get(inp.relative_offset).unwrap();
                    let full = warp_entry(w, inp, -1).unwrap();
                    let boxed = warp_entry(w, inp, 10).unwrap();
                    for (a, b) in full.data().iter().zip(boxed.data()) {
                        assert!((a - b).abs() < 1e-9);
                    }
                    for (a, b) in full.data().iter().zip(inp.anchor.data()) {
                        assert!((a - b).abs() < 1e-12);
                    }
                    seen += 1;
                }
                assert_eq!(out.warp_fallbacks, 0);
            }
        }
        assert!(seen > 0);
    }
}
