//! Synthetic scenes: sinusoidal joint motion, circular camera rigs and
//! interleaved heatmap streams with optional detector-style noise.

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{project_point, CameraView, GeometryError};
use crate::heatmap::{render_gaussian, Heatmap, HeatmapError, Keypoint2D};
use crate::scheduler::{generate_plan_times, SamplingPlan, SchedulerError};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("joint {joint} at t = {t} s leaves the bounding box: {position:?}")]
    OutOfBounds { joint: usize, t: f64, position: [f64; 3] },
    #[error("camera {0} center coincides with its look-at point")]
    LookAtDegenerate(usize),
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Heatmap(#[from] HeatmapError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
}

/// Rest pose of the default 17-joint stick figure (meters, z up, pelvis at
/// the origin).
pub const STICK_FIGURE: [[f64; 3]; 17] = [
    [0.0, 0.0, 0.0],      // pelvis
    [0.0, -0.13, -0.02],  // right hip
    [0.02, -0.14, -0.45], // right knee
    [0.0, -0.14, -0.88],  // right ankle
    [0.0, 0.13, -0.02],   // left hip
    [0.02, 0.14, -0.45],  // left knee
    [0.0, 0.14, -0.88],   // left ankle
    [0.0, 0.0, 0.22],     // spine
    [0.0, 0.0, 0.45],     // thorax
    [0.02, 0.0, 0.55],    // neck
    [0.03, 0.0, 0.68],    // head
    [0.0, 0.18, 0.45],    // left shoulder
    [0.02, 0.25, 0.2],    // left elbow
    [0.08, 0.27, -0.02],  // left wrist
    [0.0, -0.18, 0.45],   // right shoulder
    [0.02, -0.25, 0.2],   // right elbow
    [0.08, -0.27, -0.02], // right wrist
];

/// Parameters for drawing a random [`MotionModel`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionSpec {
    pub joints: usize,
    /// Peak displacement per joint in meters; each joint draws a random
    /// direction and a magnitude in `[0.5, 1] x amplitude`.
    pub amplitude: f64,
    pub freq_min: f64,
    pub freq_max: f64,
    /// Half extents of the axis-aligned bounding box centered at the origin.
    pub bounds: [f64; 3],
    /// In `[0, 1]`: how far each joint's direction, frequency and phase are
    /// pulled toward one shared draw (1 = the whole body sways together).
    pub coherence: f64,
}

impl Default for MotionSpec {
    fn default() -> Self {
        Self {
            joints: 17,
            amplitude: 0.15,
            freq_min: 0.5,
            freq_max: 1.5,
            bounds: [0.6, 0.6, 1.1],
            coherence: 0.0,
        }
    }
}

/// `joint_j(t) = base_j + m_j ⊙ sin(2π f_j t + φ_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionModel {
    pub base_pose: Vec<Vector3<f64>>,
    pub amplitude: Vec<Vector3<f64>>,
    pub frequency: Vec<f64>,
    pub phase: Vec<f64>,
    pub bounds_min: Vector3<f64>,
    pub bounds_max: Vector3<f64>,
    pub seed: u64,
}

fn default_base_pose(joints: usize) -> Vec<Vector3<f64>> {
    (0..joints)
        .map(|j| {
            if j < STICK_FIGURE.len() {
                let p = STICK_FIGURE[j];
                Vector3::new(p[0], p[1], p[2])
            } else {
                // extra joints ring the torso
                let k = (j - STICK_FIGURE.len()) as f64;
                let a = k * 2.399;
                Vector3::new(0.12 * a.cos(), 0.12 * a.sin(), 0.3 - 0.05 * (k % 8.0))
            }
        })
        .collect()
}

impl MotionModel {
    pub fn from_spec(spec: &MotionSpec, seed: u64) -> Result<Self, SynthError> {
        if spec.joints == 0 {
            return Err(SynthError::Invalid("need at least one joint".into()));
        }
        if !(spec.amplitude >= 0.0) || !(spec.freq_min >= 0.0) || spec.freq_max < spec.freq_min {
            return Err(SynthError::Invalid(
                "amplitude and frequencies must be non-negative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&spec.coherence) {
            return Err(SynthError::Invalid(format!(
                "coherence must be in [0, 1], got {}",
                spec.coherence
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut amplitude = Vec::with_capacity(spec.joints);
        let mut frequency = Vec::with_capacity(spec.joints);
        let mut phase = Vec::with_capacity(spec.joints);
        let draw = |rng: &mut ChaCha8Rng| {
            let dir = Vector3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng));
            let dir = if dir.norm() > 1e-12 {
                dir.normalize()
            } else {
                Vector3::x()
            };
            let freq = if spec.freq_max > spec.freq_min {
                rng.random_range(spec.freq_min..spec.freq_max)
            } else {
                spec.freq_min
            };
            (dir, freq, rng.random_range(0.0..std::f64::consts::TAU))
        };
        // separate stream, so coherence 0 reproduces the independent draws
        let shared = draw(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_C0DE_5EED_C0DE));
        let c = spec.coherence;
        for _ in 0..spec.joints {
            let (own_dir, own_freq, own_phase) = draw(&mut rng);
            let mag = spec.amplitude * rng.random_range(0.5..=1.0);
            let dir = if c > 0.0 {
                c * shared.0 + (1.0 - c) * own_dir
            } else {
                own_dir
            };
            let dir = if dir.norm() > 1e-12 { dir.normalize() } else { own_dir };
            // sign-free amplitude vector: the phase carries the direction
            amplitude.push(dir.abs() * mag);
            if c > 0.0 {
                frequency.push(c * shared.1 + (1.0 - c) * own_freq);
                phase.push((shared.2 + (1.0 - c) * (own_phase - shared.2)).rem_euclid(std::f64::consts::TAU));
            } else {
                frequency.push(own_freq);
                phase.push(own_phase);
            }
        }
        let b = Vector3::from(spec.bounds);
        Ok(Self {
            base_pose: default_base_pose(spec.joints),
            amplitude,
            frequency,
            phase,
            bounds_min: -b,
            bounds_max: b,
            seed,
        })
    }

    /// A model that never moves.
    pub fn static_pose(joints: usize, bounds: [f64; 3]) -> Self {
        Self {
            base_pose: default_base_pose(joints),
            amplitude: vec![Vector3::zeros(); joints],
            frequency: vec![0.0; joints],
            phase: vec![0.0; joints],
            bounds_min: -Vector3::from(bounds),
            bounds_max: Vector3::from(bounds),
            seed: 0,
        }
    }

    pub fn joints(&self) -> usize {
        self.base_pose.len()
    }

    /// Largest joint speed bound `2π f ‖m‖` over all joints, m/s.
    pub fn max_speed(&self) -> f64 {
        self.amplitude
            .iter()
            .zip(&self.frequency)
            .map(|(m, f)| std::f64::consts::TAU * f * m.norm())
            .fold(0.0, f64::max)
    }

    pub fn bounding_corners(&self) -> [Vector3<f64>; 8] {
        let (lo, hi) = (self.bounds_min, self.bounds_max);
        std::array::from_fn(|i| {
            Vector3::new(
                if i & 1 == 0 { lo.x } else { hi.x },
                if i & 2 == 0 { lo.y } else { hi.y },
                if i & 4 == 0 { lo.z } else { hi.z },
            )
        })
    }
}

/// Joint positions at time `t` seconds.
pub fn pose_at(model: &MotionModel, t: f64) -> Result<Vec<Vector3<f64>>, SynthError> {
    if !(t >= 0.0) {
        return Err(SynthError::Invalid(format!("time must be non-negative, got {t}")));
    }
    let mut out = Vec::with_capacity(model.joints());
    for j in 0..model.joints() {
        let s = (std::f64::consts::TAU * model.frequency[j] * t + model.phase[j]).sin();
        let p = model.base_pose[j] + model.amplitude[j] * s;
        let inside = (0..3).all(|k| p[k] >= model.bounds_min[k] && p[k] <= model.bounds_max[k]);
        if !inside {
            return Err(SynthError::OutOfBounds {
                joint: j,
                t,
                position: [p.x, p.y, p.z],
            });
        }
        out.push(p);
    }
    Ok(out)
}

/// Circular rig with every camera aimed at `look_at`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RigSpec {
    pub views: usize,
    pub radius: f64,
    pub camera_height: f64,
    pub look_at: [f64; 3],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub image_size: [u32; 2],
}

impl Default for RigSpec {
    fn default() -> Self {
        Self {
            views: 4,
            radius: 4.5,
            camera_height: 0.8,
            look_at: [0.0, 0.0, 0.0],
            fx: 80.0,
            fy: 80.0,
            cx: 31.5,
            cy: 31.5,
            image_size: [64, 64],
        }
    }
}

impl RigSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.views < 2 {
            return Err(SynthError::Invalid(format!(
                "need at least 2 views, got {}",
                self.views
            )));
        }
        if !(self.radius > 0.0) {
            return Err(SynthError::Invalid("radius must be positive".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(SynthError::Invalid("focal lengths must be positive".into()));
        }
        if self.image_size[0] == 0 || self.image_size[1] == 0 {
            return Err(SynthError::Invalid("image size must be positive".into()));
        }
        Ok(())
    }
}

/// Places `M` cameras at equal angles on a horizontal circle.
pub fn build_rig(spec: &RigSpec) -> Result<Vec<CameraView>, SynthError> {
    spec.validate()?;
    let target = Vector3::from(spec.look_at);
    let k = CameraView::intrinsics_matrix(spec.fx, spec.fy, spec.cx, spec.cy);
    (0..spec.views)
        .map(|i| {
            let angle = std::f64::consts::TAU * i as f64 / spec.views as f64;
            let center = Vector3::new(
                target.x + spec.radius * angle.cos(),
                target.y + spec.radius * angle.sin(),
                spec.camera_height,
            );
            let forward = target - center;
            if forward.norm() < 1e-12 {
                return Err(SynthError::LookAtDegenerate(i));
            }
            let forward = forward.normalize();
            let right = forward.cross(&Vector3::z());
            if right.norm() < 1e-12 {
                return Err(SynthError::LookAtDegenerate(i));
            }
            let right = right.normalize();
            let down = forward.cross(&right);
            let rot = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
            Ok(CameraView::new(
                i,
                k,
                rot,
                -(rot * center),
                (spec.image_size[0], spec.image_size[1]),
            )?)
        })
        .collect()
}

/// Checks that every bounding-box corner projects inside every image.
pub fn check_rig_covers(rig: &[CameraView], model: &MotionModel) -> Result<(), SynthError> {
    for cam in rig {
        for corner in model.bounding_corners() {
            let q = project_point(cam, &corner)?;
            if !cam.contains(&q) {
                return Err(SynthError::Invalid(format!(
                    "bounding-box corner {corner:?} projects outside camera {} at {q:?}",
                    cam.id
                )));
            }
        }
    }
    Ok(())
}

/// Detector-noise stand-in applied to rendered keypoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    /// Standard deviation of isotropic Gaussian keypoint jitter, pixels.
    pub peak_jitter_px: f64,
    /// Probability that a joint channel is zeroed.
    pub dropout_prob: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            peak_jitter_px: 0.0,
            dropout_prob: 0.0,
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.peak_jitter_px >= 0.0) || !self.peak_jitter_px.is_finite() {
            return Err(SynthError::Invalid("peak_jitter_px must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.dropout_prob) {
            return Err(SynthError::Invalid("dropout_prob must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Stable per-(view, frame) seed so any capture renders identically whether
/// generated alone, in sequence or in parallel.
pub fn capture_seed(seed: u64, view: usize, frame: u32) -> u64 {
    let mut z =
        seed ^ (view as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (frame as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Renders what view `cam` would report for `pose`, with noise drawn from the
/// `(view, frame)` sub-generator. Values are rounded to `f32` precision so
/// in-memory and file-based streams agree bit for bit.
pub fn render_capture(
    cam: &CameraView,
    frame: u32,
    pose: &[Vector3<f64>],
    sigma: f64,
    noise: &NoiseSpec,
) -> Result<Heatmap, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(capture_seed(noise.seed, cam.id, frame));
    let jitter = Normal::new(0.0, noise.peak_jitter_px.max(0.0)).map_err(|e| SynthError::Invalid(e.to_string()))?;
    let mut dropped = Vec::with_capacity(pose.len());
    let mut kps = Vec::with_capacity(pose.len());
    for (j, p) in pose.iter().enumerate() {
        let q = project_point(cam, p)?;
        let (du, dv) = if noise.peak_jitter_px > 0.0 {
            (jitter.sample(&mut rng), jitter.sample(&mut rng))
        } else {
            (0.0, 0.0)
        };
        dropped.push(noise.dropout_prob > 0.0 && rng.random::<f64>() < noise.dropout_prob);
        kps.push(Keypoint2D::new(j, q.x + du, q.y + dv));
    }
    let mut h = render_gaussian(&kps, cam.width(), cam.height(), sigma)?;
    for (j, d) in dropped.iter().enumerate() {
        if *d {
            h.channel_mut(j).fill(0.0);
        }
    }
    h.view = cam.id;
    h.frame = frame;
    h.quantize_f32();
    Ok(h)
}

/// Everything needed to synthesize a stream.
#[derive(Debug, Clone)]
pub struct Scene {
    pub model: MotionModel,
    pub rig: Vec<CameraView>,
    pub plan: SamplingPlan,
    pub sigma: f64,
    pub noise: NoiseSpec,
}

impl Scene {
    pub fn new(
        model: MotionModel,
        rig: Vec<CameraView>,
        plan: SamplingPlan,
        sigma: f64,
        noise: NoiseSpec,
    ) -> Result<Self, SynthError> {
        if rig.len() != plan.views {
            return Err(SynthError::Invalid(format!(
                "rig has {} cameras but the plan has {} views",
                rig.len(),
                plan.views
            )));
        }
        if !(sigma > 0.0) {
            return Err(SynthError::Invalid("sigma must be positive".into()));
        }
        plan.validate()?;
        noise.validate()?;
        check_rig_covers(&rig, &model)?;
        Ok(Self {
            model,
            rig,
            plan,
            sigma,
            noise,
        })
    }

    /// Ground-truth pose at frame slot `frame`.
    pub fn truth(&self, frame: u32) -> Result<Vec<Vector3<f64>>, SynthError> {
        pose_at(&self.model, self.plan.slot_time(frame))
    }

    /// Capture of `view` at `frame` under the scene's noise model. Dense
    /// (all-view) captures use the same generator, so a sparse sample equals
    /// the dense capture at its `(view, frame)`.
    pub fn capture(&self, view: usize, frame: u32) -> Result<Heatmap, SynthError> {
        let pose = self.truth(frame)?;
        render_capture(&self.rig[view], frame, &pose, self.sigma, &self.noise)
    }

    /// Clean heatmap of the true pose (no jitter, no dropout).
    pub fn clean_capture(&self, view: usize, frame: u32) -> Result<Heatmap, SynthError> {
        let pose = self.truth(frame)?;
        render_capture(&self.rig[view], frame, &pose, self.sigma, &NoiseSpec::default())
    }
}

/// One sampled heatmap in the stream.
#[derive(Debug, Clone)]
pub struct StreamSample {
    pub view: usize,
    pub frame: u32,
    pub timestamp: f64,
    pub heatmap: Heatmap,
}

/// Interleaved stream plus dense ground truth for every frame slot.
#[derive(Debug, Clone)]
pub struct SampledSequence {
    pub samples: Vec<StreamSample>,
    /// Frame slots `1..=slots`.
    pub slots: u32,
    /// `truth_3d[k]` is the pose at frame `k + 1`.
    pub truth_3d: Vec<Vec<Vector3<f64>>>,
    /// `truth_2d[k][view][joint]`.
    pub truth_2d: Vec<Vec<Vec<Vector2<f64>>>>,
}

/// Renders the plan's captures over `[0, duration)` and the matching truth.
pub fn sample_sequence(scene: &Scene, duration: f64) -> Result<SampledSequence, SynthError> {
    let planned = generate_plan_times(&scene.plan, duration)?;
    let slots = scene.plan.slots_in(duration);
    let mut truth_3d = Vec::with_capacity(slots as usize);
    let mut truth_2d = Vec::with_capacity(slots as usize);
    for frame in 1..=slots {
        let pose = scene.truth(frame)?;
        let per_view = scene
            .rig
            .iter()
            .map(|cam| {
                pose.iter()
                    .map(|p| project_point(cam, p))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        truth_3d.push(pose);
        truth_2d.push(per_view);
    }
    let samples = planned
        .iter()
        .map(|s| {
            Ok(StreamSample {
                view: s.view,
                frame: s.frame,
                timestamp: s.timestamp,
                heatmap: scene.capture(s.view, s.frame)?,
            })
        })
        .collect::<Result<Vec<_>, SynthError>>()?;
    Ok(SampledSequence {
        samples,
        slots,
        truth_3d,
        truth_2d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heatmap::decode_peak;
    use crate::scheduler::SamplingPlan;

    fn scene(noise: NoiseSpec) -> Scene {
        let model = MotionModel::from_spec(&MotionSpec::default(), 3).unwrap();
        let rig = build_rig(&RigSpec::default()).unwrap();
        Scene::new(model, rig, SamplingPlan::uniform(4, 12.5), 2.0, noise).unwrap()
    }

    #[test]
    fn static_model_never_moves() {
        let m = MotionModel::static_pose(17, [1.0, 1.0, 1.0]);
        let a = pose_at(&m, 0.0).unwrap();
        assert_eq!(a, pose_at(&m, 3.7).unwrap());
        assert_eq!(a, m.base_pose);
    }

    #[test]
    fn periodic_at_one_hertz() {
        let mut m = MotionModel::from_spec(&MotionSpec::default(), 1).unwrap();
        m.frequency.iter_mut().for_each(|f| *f = 1.0);
        let a = pose_at(&m, 0.3).unwrap();
        let b = pose_at(&m, 1.3).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).norm() < 1e-12);
        }
    }

    #[test]
    fn displacement_respects_speed_bound() {
        let spec = MotionSpec {
            amplitude: 0.3,
            freq_min: 0.5,
            freq_max: 0.5,
            ..Default::default()
        };
        let m = MotionModel::from_spec(&spec, 9).unwrap();
        let dt = 0.02;
        for k in 0..200 {
            let t = k as f64 * dt;
            let a = pose_at(&m, t).unwrap();
            let b = pose_at(&m, t + dt).unwrap();
            for j in 0..m.joints() {
                let bound = std::f64::consts::TAU * m.frequency[j] * m.amplitude[j].norm() * dt;
                assert!((a[j] - b[j]).norm() <= bound + 1e-15);
            }
        }
    }

    #[test]
    fn out_of_bounds_detected() {
        let spec = MotionSpec {
            amplitude: 2.0,
            ..Default::default()
        };
        let m = MotionModel::from_spec(&spec, 0).unwrap();
        let any_err = (0..50).any(|k| matches!(pose_at(&m, k as f64 * 0.05), Err(SynthError::OutOfBounds { .. })));
        assert!(any_err);
        assert!(pose_at(&m, -1.0).is_err());
    }

    #[test]
    fn rig_geometry() {
        let spec = RigSpec::default();
        let rig = build_rig(&spec).unwrap();
        for (i, cam) in rig.iter().enumerate() {
            let c = cam.center();
            let angle = c.y.atan2(c.x).to_degrees().rem_euclid(360.0);
            assert!((angle - 90.0 * i as f64).abs() < 1e-9);
            let q = project_point(cam, &Vector3::from(spec.look_at)).unwrap();
            assert!((q - Vector2::new(spec.cx, spec.cy)).norm() < 1e-6);
        }
        let m = MotionModel::from_spec(&MotionSpec::default(), 0).unwrap();
        check_rig_covers(&rig, &m).unwrap();
        for cam in &rig {
            for p in &m.base_pose {
                assert!(cam.contains(&project_point(cam, p).unwrap()));
            }
        }
    }

    #[test]
    fn degenerate_look_at() {
        let spec = RigSpec {
            radius: 1.0,
            camera_height: 0.0,
            look_at: [0.0, 0.0, 0.0],
            ..Default::default()
        };
        assert!(build_rig(&spec).is_ok());
        let overhead = RigSpec {
            radius: 1e-13,
            camera_height: 3.0,
            ..Default::default()
        };
        assert!(matches!(build_rig(&overhead), Err(SynthError::LookAtDegenerate(0))));
    }

    #[test]
    fn clean_stream_decodes_to_truth() {
        let s = scene(NoiseSpec::default());
        let seq = sample_sequence(&s, 0.2).unwrap();
        assert_eq!(seq.samples.len(), 10);
        for smp in &seq.samples {
            for j in 0..17 {
                let kp = decode_peak(&smp.heatmap, j).unwrap();
                let truth = seq.truth_2d[smp.frame as usize - 1][smp.view][j];
                assert!((kp.position - truth).norm() < 0.15, "{:?} vs {truth:?}", kp.position);
            }
        }
    }

    #[test]
    fn full_dropout_empties_channels() {
        let s = scene(NoiseSpec {
            dropout_prob: 1.0,
            ..Default::default()
        });
        let h = s.capture(0, 1).unwrap();
        assert!(h.data().iter().all(|v| *v == 0.0));
        assert!(decode_peak(&h, 0).is_err());
    }

    #[test]
    fn seeded_streams_repeat() {
        let noise = NoiseSpec {
            peak_jitter_px: 0.7,
            dropout_prob: 0.1,
            seed: 5,
        };
        let a = sample_sequence(&scene(noise), 0.3).unwrap();
        let b = sample_sequence(&scene(noise), 0.3).unwrap();
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(x.heatmap, y.heatmap);
        }
        // dense capture agrees with the sparse sample at the same slot
        let s = scene(noise);
        assert_eq!(
            s.capture(a.samples[3].view, a.samples[3].frame).unwrap(),
            a.samples[3].heatmap
        );
    }

    #[test]
    fn stream_follows_plan() {
        let s = scene(NoiseSpec::default());
        let seq = sample_sequence(&s, 0.4).unwrap();
        let planned = generate_plan_times(&s.plan, 0.4).unwrap();
        assert_eq!(seq.samples.len(), planned.len());
        for (a, b) in seq.samples.iter().zip(&planned) {
            assert_eq!((a.view, a.frame), (b.view, b.frame));
            assert_eq!((a.heatmap.view, a.heatmap.frame), (b.view, b.frame));
        }
        assert_eq!(seq.truth_3d.len(), seq.slots as usize);
        assert!(seq
            .truth_2d
            .iter()
            .all(|f| f.len() == 4 && f.iter().all(|v| v.len() == 17)));
    }
}
