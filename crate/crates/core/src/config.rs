//! Run configuration shared by the library runners and the CLI. Every field
//! has a default; unknown keys are rejected when deserializing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::FusionConfig;
use crate::pipeline::{PipelineConfig, PipelineVariant};
use crate::scheduler::SamplingPlan;
use crate::synth::{MotionSpec, NoiseSpec, RigSpec};
use crate::warper::TrainHyper;

/// A validation failure, naming the offending key.
#[derive(Debug, Error)]
#[error("{key}: {message}")]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub motion: MotionSpec,
    pub rig: RigSpec,
    /// Gaussian spread of rendered heatmaps, pixels.
    pub sigma: f64,
    pub noise: NoiseSpec,
    /// Length of each synthesized stream, seconds.
    pub duration_s: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            motion: MotionSpec {
                amplitude: 0.3,
                // below ~1.1 Hz the stale lags at interval factor 12 stay
                // under half a period, so error grows with the factor
                freq_min: 0.5,
                freq_max: 1.0,
                bounds: [0.8, 0.8, 1.4],
                coherence: 1.0,
                ..MotionSpec::default()
            },
            rig: RigSpec::default(),
            sigma: 2.0,
            noise: NoiseSpec {
                peak_jitter_px: 0.3,
                dropout_prob: 0.0,
                seed: 0,
            },
            duration_s: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanKind {
    Uniform,
    NonUniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanConfig {
    /// Samples per second per camera.
    pub camera_rate: f64,
    pub kind: PlanKind,
    /// Slots per window for non-uniform plans.
    pub window: u32,
    /// Multiplies the inter-view step `δ` (the camera rate is divided by it).
    pub interval_factor: u32,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            camera_rate: 12.5,
            kind: PlanKind::Uniform,
            window: 6,
            interval_factor: 1,
        }
    }
}

impl PlanConfig {
    /// The sampling plan for `views` cameras; non-uniform plans draw their
    /// slots from `seed`. A window equal to the view count is the uniform plan.
    pub fn build(&self, views: usize, seed: u64) -> SamplingPlan {
        let rate = self.camera_rate / self.interval_factor.max(1) as f64;
        match self.kind {
            PlanKind::NonUniform if self.window as usize > views => {
                SamplingPlan::non_uniform(views, rate, self.window, seed)
            }
            _ => SamplingPlan::uniform(views, rate),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamConfig {
    /// See [`PipelineConfig::warp_margin_px`].
    pub warp_margin_px: i64,
    /// Window cache capacity in heatmaps; 0 selects `4 M`.
    pub cache_capacity: usize,
}

impl Default for StreamConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            warp_margin_px: p.warp_margin_px,
            cache_capacity: p.cache_capacity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WarperConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub momentum: f64,
    pub max_grad_norm: f64,
    pub channels: usize,
    /// Held-out synthetic scenes used to build training sets.
    pub train_scenes: usize,
    /// Cap on training samples per temporal mode.
    pub max_samples_per_mode: usize,
    /// Samples used for the per-epoch loss that picks the returned weights;
    /// 0 uses all.
    pub monitor_samples: usize,
}

impl Default for WarperConfig {
    fn default() -> Self {
        let h = TrainHyper::default();
        Self {
            lr: 2.0,
            epochs: 12,
            batch: 1,
            momentum: h.momentum,
            max_grad_norm: h.max_grad_norm,
            channels: h.channels,
            train_scenes: 8,
            max_samples_per_mode: 150,
            monitor_samples: 32,
        }
    }
}

impl WarperConfig {
    pub fn hyper(&self, seed: u64) -> TrainHyper {
        TrainHyper {
            lr: self.lr,
            epochs: self.epochs,
            batch: self.batch,
            momentum: self.momentum,
            max_grad_norm: self.max_grad_norm,
            channels: self.channels,
            monitor: self.monitor_samples,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Number of evaluation seeds (`seed`, `seed + 1`, ...).
    pub seeds: usize,
    /// Variant used by `run`.
    pub variant: PipelineVariant,
    /// Variant used by the interval and window sweeps.
    pub sweep_variant: PipelineVariant,
    pub interval_factors: Vec<u32>,
    pub window_sizes: Vec<u32>,
    /// Slack allowed when checking the dense reference against sparse variants, mm.
    pub ordering_tolerance_mm: f64,
    /// Write SVG plots next to sweep reports.
    pub plots: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            seeds: 20,
            variant: PipelineVariant::FusionPlusWarper,
            sweep_variant: PipelineVariant::SpatialFusion,
            interval_factors: vec![1, 6, 12],
            window_sizes: vec![4, 6, 10, 12],
            ordering_tolerance_mm: 0.0,
            plots: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: String,
    pub scene: SceneConfig,
    pub plan: PlanConfig,
    pub fusion: FusionConfig,
    pub stream: StreamConfig,
    pub warper: WarperConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: "out".into(),
            scene: SceneConfig::default(),
            plan: PlanConfig::default(),
            fusion: FusionConfig::default(),
            stream: StreamConfig::default(),
            warper: WarperConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn check(ok: bool, key: &str, message: impl Into<String>) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::new(key, message))
    }
}

impl RunConfig {
    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            fusion: self.fusion,
            warp_margin_px: self.stream.warp_margin_px,
            cache_capacity: self.stream.cache_capacity,
        }
    }

    /// Range checks beyond what deserialization enforces.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let s = &self.scene;
        let m = &s.motion;
        check(m.joints >= 1, "scene.motion.joints", "must be at least 1")?;
        check(
            m.amplitude >= 0.0 && m.amplitude.is_finite(),
            "scene.motion.amplitude",
            "must be non-negative",
        )?;
        check(m.freq_min >= 0.0, "scene.motion.freq_min", "must be non-negative")?;
        check(
            m.freq_max >= m.freq_min,
            "scene.motion.freq_max",
            "must be at least freq_min",
        )?;
        check(
            (0.0..=1.0).contains(&m.coherence),
            "scene.motion.coherence",
            "must be in [0, 1]",
        )?;
        check(
            m.bounds.iter().all(|b| *b > 0.0),
            "scene.motion.bounds",
            "half extents must be positive",
        )?;
        let r = &s.rig;
        check(r.views >= 2, "scene.rig.views", "need at least 2 views")?;
        check(r.radius > 0.0, "scene.rig.radius", "must be positive")?;
        check(r.fx > 0.0, "scene.rig.fx", "must be positive")?;
        check(r.fy > 0.0, "scene.rig.fy", "must be positive")?;
        check(
            r.image_size.iter().all(|v| *v >= 1),
            "scene.rig.image_size",
            "components must be at least 1",
        )?;
        check(s.sigma > 0.0 && s.sigma.is_finite(), "scene.sigma", "must be positive")?;
        check(
            s.noise.peak_jitter_px >= 0.0 && s.noise.peak_jitter_px.is_finite(),
            "scene.noise.peak_jitter_px",
            "must be non-negative",
        )?;
        check(
            (0.0..=1.0).contains(&s.noise.dropout_prob),
            "scene.noise.dropout_prob",
            "must be in [0, 1]",
        )?;
        check(
            s.duration_s > 0.0 && s.duration_s.is_finite(),
            "scene.duration_s",
            "must be positive",
        )?;

        let p = &self.plan;
        check(
            p.camera_rate > 0.0 && p.camera_rate.is_finite(),
            "plan.camera_rate",
            "must be positive",
        )?;
        check(p.interval_factor >= 1, "plan.interval_factor", "must be at least 1")?;
        if p.kind == PlanKind::NonUniform {
            check(
                p.window as usize >= r.views,
                "plan.window",
                format!("must be at least the view count {}", r.views),
            )?;
        }

        let f = &self.fusion;
        check(
            (0.0..=1.0).contains(&f.lambda),
            "fusion.lambda",
            format!("must be in [0, 1], got {}", f.lambda),
        )?;
        check(
            f.line_step > 0.0 && f.line_step <= 1.0,
            "fusion.line_step",
            format!("must be in (0, 1], got {}", f.line_step),
        )?;
        check(
            !f.include_self,
            "fusion.include_self",
            "self-view fusion is undefined; must be false",
        )?;
        check(f.refine_radius > 0.0, "fusion.refine_radius", "must be positive")?;

        let w = &self.warper;
        check(w.lr >= 0.0 && w.lr.is_finite(), "warper.lr", "must be non-negative")?;
        check(w.batch >= 1, "warper.batch", "must be at least 1")?;
        check((0.0..1.0).contains(&w.momentum), "warper.momentum", "must be in [0, 1)")?;
        check(w.max_grad_norm >= 0.0, "warper.max_grad_norm", "must be non-negative")?;
        check(w.channels >= 1, "warper.channels", "must be at least 1")?;
        check(w.train_scenes >= 1, "warper.train_scenes", "must be at least 1")?;
        check(
            w.max_samples_per_mode >= 1,
            "warper.max_samples_per_mode",
            "must be at least 1",
        )?;

        let e = &self.eval;
        check(e.seeds >= 1, "eval.seeds", "must be at least 1")?;
        check(
            !e.interval_factors.is_empty(),
            "eval.interval_factors",
            "must not be empty",
        )?;
        check(
            e.interval_factors.iter().all(|v| *v >= 1),
            "eval.interval_factors",
            "factors must be at least 1",
        )?;
        check(!e.window_sizes.is_empty(), "eval.window_sizes", "must not be empty")?;
        check(
            e.window_sizes.iter().all(|v| *v as usize >= r.views),
            "eval.window_sizes",
            format!("window sizes must be at least the view count {}", r.views),
        )?;
        check(
            e.ordering_tolerance_mm >= 0.0,
            "eval.ordering_tolerance_mm",
            "must be non-negative",
        )?;
        Ok(())
    }
}
