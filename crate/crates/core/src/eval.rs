//! Metrics and experiment runners: MPJPE, similarity-aligned P-MPJPE, the
//! variant ablation, and the interval / window sweeps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::{Matrix3, Vector3, SVD};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, PlanConfig, PlanKind, RunConfig};
use crate::geometry::CameraView;
use crate::heatmap::Heatmap;
use crate::pipeline::{
    crop, process_dense, support_box, PipelineError, PipelineVariant, StageTimes, StreamPipeline, WarperBank,
};
use crate::scheduler::{CacheStats, SamplingPlan};
use crate::synth::{build_rig, sample_sequence, MotionModel, NoiseSpec, SampledSequence, Scene, SynthError};
use crate::triangulate::Skeleton3D;
use crate::warper::{warper_train, TrainReport, TrainSample, WarpInput, WarperError};

/// World units are meters; reports use millimeters.
pub const MM_PER_UNIT: f64 = 1000.0;

pub const PROCRUSTES_PROTOCOL: &str =
    "per-frame similarity alignment (rotation, translation, uniform scale; reflections excluded)";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction has {pred} joints, truth has {truth}")]
    JointCountMismatch { pred: usize, truth: usize },
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Warper(#[from] WarperError),
    #[error("no poses were produced")]
    NoOutput,
    #[error("no ground truth for frame {0}")]
    MissingTruth(u32),
}

/// Mean Euclidean distance between corresponding joints.
pub fn mpjpe(pred: &Skeleton3D, truth: &Skeleton3D) -> Result<f64, EvalError> {
    if pred.joints.len() != truth.joints.len() || truth.joints.is_empty() {
        return Err(EvalError::JointCountMismatch {
            pred: pred.joints.len(),
            truth: truth.joints.len(),
        });
    }
    Ok(pred
        .joints
        .iter()
        .zip(&truth.joints)
        .map(|(p, t)| (p - t).norm())
        .sum::<f64>()
        / truth.joints.len() as f64)
}

/// Similarity `(s, R, t)` minimizing `Σ ‖s R p + t − q‖²` (Umeyama).
pub fn similarity_alignment(
    pred: &[Vector3<f64>],
    truth: &[Vector3<f64>],
) -> Result<(f64, Matrix3<f64>, Vector3<f64>), EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::JointCountMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    let n = truth.len();
    if n < 3 {
        return Err(EvalError::DegenerateConfiguration(format!(
            "need at least 3 joints, got {n}"
        )));
    }
    let mu_p = pred.iter().sum::<Vector3<f64>>() / n as f64;
    let mu_t = truth.iter().sum::<Vector3<f64>>() / n as f64;
    let mut cov = Matrix3::zeros();
    let mut truth_cov = Matrix3::zeros();
    let mut var_p = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        let (pc, tc) = (p - mu_p, t - mu_t);
        cov += tc * pc.transpose();
        truth_cov += tc * tc.transpose();
        var_p += pc.norm_squared();
    }
    let ts = truth_cov.symmetric_eigenvalues();
    let mut ts: Vec<f64> = ts.iter().copied().collect();
    ts.sort_by(|a, b| b.total_cmp(a));
    if ts[0] <= 0.0 || ts[1] <= 1e-12 * ts[0] {
        return Err(EvalError::DegenerateConfiguration(
            "truth joints are collinear or coincident".into(),
        ));
    }
    if var_p <= 1e-300 {
        return Err(EvalError::DegenerateConfiguration(
            "predicted joints are coincident".into(),
        ));
    }
    let svd = SVD::new(cov, true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let d = svd.singular_values;
    let mut s = Matrix3::identity();
    if (u.determinant() * v_t.determinant()) < 0.0 {
        // flip the weakest direction so R is a proper rotation
        let (k, _) = d
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("three values");
        s[(k, k)] = -1.0;
    }
    let r = u * s * v_t;
    let scale = (0..3).map(|i| d[i] * s[(i, i)]).sum::<f64>() / var_p;
    let t = mu_t - scale * r * mu_p;
    Ok((scale, r, t))
}

/// MPJPE after optimal per-frame similarity alignment of `pred` onto `truth`.
pub fn pmpjpe(pred: &Skeleton3D, truth: &Skeleton3D) -> Result<f64, EvalError> {
    let (s, r, t) = similarity_alignment(&pred.joints, &truth.joints)?;
    let aligned = Skeleton3D::new(pred.frame, pred.joints.iter().map(|p| s * r * p + t).collect());
    mpjpe(&aligned, truth)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameError {
    pub frame: u32,
    pub mpjpe_mm: f64,
    pub pmpjpe_mm: f64,
}

/// What a report was computed under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub variant: PipelineVariant,
    pub lambda: f64,
    pub sigma: f64,
    pub noise: NoiseSpec,
    pub plan: SamplingPlan,
    pub procrustes: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub per_frame: Vec<FrameError>,
    pub avg_mpjpe_mm: f64,
    pub avg_pmpjpe_mm: f64,
    pub per_joint_mpjpe_mm: Vec<f64>,
    pub poses_emitted: usize,
    pub held_joints: usize,
    pub warp_fallbacks: usize,
    pub cache: CacheStats,
    pub config: ConfigEcho,
    /// Wall-clock seconds per stage; only recorded on request, since it would
    /// make otherwise identical reports differ.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub times: Option<StageTimes>,
}

impl EvalReport {
    pub fn per_frame_mpjpe(&self) -> Vec<f64> {
        self.per_frame.iter().map(|f| f.mpjpe_mm).collect()
    }
}

/// Per-run seed mixing so different seeds give unrelated streams.
fn mix(a: u64, b: u64) -> u64 {
    crate::synth::capture_seed(a, (b & 0xFFFF_FFFF) as usize, (b >> 32) as u32)
}

/// The sampling plan a scene with `seed` uses (non-uniform slot draws depend
/// on the seed).
pub fn plan_for_seed(plan: &PlanConfig, views: usize, seed: u64) -> SamplingPlan {
    plan.build(views, mix(seed, 0x9_1A7))
}

/// Scene for evaluation seed `seed` under `plan`.
pub fn build_scene(cfg: &RunConfig, plan: &PlanConfig, seed: u64) -> Result<Scene, EvalError> {
    cfg.validate()?;
    let model = MotionModel::from_spec(&cfg.scene.motion, seed)?;
    let rig = build_rig(&cfg.scene.rig)?;
    let plan = plan_for_seed(plan, rig.len(), seed);
    let noise = NoiseSpec {
        seed: mix(cfg.scene.noise.seed, seed),
        ..cfg.scene.noise
    };
    Ok(Scene::new(model, rig, plan, cfg.scene.sigma, noise)?)
}

/// Frames at which a sparse stream emits poses (every arrival once each view
/// has been seen).
pub fn emitted_frames(seq: &SampledSequence, views: usize) -> Vec<u32> {
    let mut seen = vec![false; views];
    let mut out = Vec::new();
    for s in &seq.samples {
        seen[s.view] = true;
        if seen.iter().all(|v| *v) {
            out.push(s.frame);
        }
    }
    out
}

/// Raw output of one variant over a stream, before scoring.
#[derive(Debug, Clone, Default)]
pub struct StreamRun {
    pub skeletons: Vec<Skeleton3D>,
    pub held: usize,
    pub fallbacks: usize,
    pub cache: CacheStats,
    pub times: StageTimes,
}

fn run_dense(scene: &Scene, seq: &SampledSequence) -> Result<StreamRun, EvalError> {
    let m = scene.rig.len();
    run_dense_frames(
        &scene.rig,
        emitted_frames(seq, m).into_iter().map(|frame| {
            (0..m)
                .map(|v| scene.capture(v, frame))
                .collect::<Result<Vec<_>, _>>()
                .map(|hs| (frame, hs))
                .map_err(EvalError::from)
        }),
    )
}

/// Dense reference over all-view frames, in the order given.
pub fn run_dense_frames(
    rig: &[CameraView],
    frames: impl IntoIterator<Item = Result<(u32, Vec<Heatmap>), EvalError>>,
) -> Result<StreamRun, EvalError> {
    let mut run = StreamRun::default();
    let t = Instant::now();
    let mut prev: Option<Skeleton3D> = None;
    for item in frames {
        let (frame, hs) = item?;
        let (sk, h) = process_dense(frame, &hs, rig, prev.as_ref())?;
        run.held += h;
        prev = Some(sk.clone());
        run.skeletons.push(sk);
    }
    run.times.triangulate_s = t.elapsed().as_secs_f64();
    Ok(run)
}

/// Streams arrivals `(view, frame, heatmap)` through `variant`; with
/// `with_fused` (warper variant only) the pre-warp skeletons are returned as
/// a second run.
pub fn run_arrivals(
    rig: &[CameraView],
    arrivals: impl IntoIterator<Item = Result<(usize, u32, Heatmap), EvalError>>,
    variant: PipelineVariant,
    cfg: &RunConfig,
    warpers: Option<&WarperBank>,
    with_fused: bool,
) -> Result<(StreamRun, Option<StreamRun>), EvalError> {
    let mut p = StreamPipeline::new(rig, variant, cfg.pipeline(), warpers)?.also_fused(with_fused);
    let mut run = StreamRun::default();
    let mut fused = with_fused.then(StreamRun::default);
    for item in arrivals {
        let (view, frame, heatmap) = item?;
        if let Some(out) = p.push(view, frame, heatmap)? {
            run.held += out.held_joints;
            run.fallbacks += out.warp_fallbacks;
            run.skeletons.push(out.skeleton);
            if let (Some(f), Some((sk, held))) = (fused.as_mut(), out.fused) {
                f.held += held;
                f.skeletons.push(sk);
            }
        }
    }
    run.cache = p.cache_stats();
    run.times = p.times();
    if let Some(f) = fused.as_mut() {
        f.cache = run.cache;
        f.times = StageTimes {
            warp_s: 0.0,
            ..run.times
        };
    }
    Ok((run, fused))
}

fn run_stream(
    scene: &Scene,
    seq: &SampledSequence,
    variant: PipelineVariant,
    cfg: &RunConfig,
    warpers: Option<&WarperBank>,
    with_fused: bool,
) -> Result<(StreamRun, Option<StreamRun>), EvalError> {
    let arrivals = seq.samples.iter().map(|s| Ok((s.view, s.frame, s.heatmap.clone())));
    run_arrivals(&scene.rig, arrivals, variant, cfg, warpers, with_fused)
}

fn echo(scene: &Scene, variant: PipelineVariant, cfg: &RunConfig) -> ConfigEcho {
    ConfigEcho {
        variant,
        lambda: cfg.fusion.lambda,
        sigma: scene.sigma,
        noise: scene.noise,
        plan: scene.plan,
        procrustes: PROCRUSTES_PROTOCOL.into(),
    }
}

fn score(
    scene: &Scene,
    seq: &SampledSequence,
    variant: PipelineVariant,
    cfg: &RunConfig,
    run: StreamRun,
    seed: u64,
    record_times: bool,
) -> Result<(EvalReport, Vec<Skeleton3D>), EvalError> {
    let truth = |frame: u32| seq.truth_3d.get((frame as usize).wrapping_sub(1)).cloned();
    score_run(run, &truth, echo(scene, variant, cfg), seed, record_times)
}

/// Scores a run against `truth(frame)`; every emitted frame needs a truth pose.
pub fn score_run(
    run: StreamRun,
    truth: &dyn Fn(u32) -> Option<Vec<Vector3<f64>>>,
    config: ConfigEcho,
    seed: u64,
    record_times: bool,
) -> Result<(EvalReport, Vec<Skeleton3D>), EvalError> {
    let skeletons = run.skeletons;
    if skeletons.is_empty() {
        return Err(EvalError::NoOutput);
    }
    let joints = skeletons[0].joints.len();
    let mut per_frame = Vec::with_capacity(skeletons.len());
    let mut per_joint = vec![0.0; joints];
    for sk in &skeletons {
        let t = truth(sk.frame).ok_or(EvalError::MissingTruth(sk.frame))?;
        let truth = Skeleton3D::new(sk.frame, t);
        let err = mpjpe(sk, &truth)?;
        for (j, (p, t)) in sk.joints.iter().zip(&truth.joints).enumerate() {
            per_joint[j] += (p - t).norm() * MM_PER_UNIT;
        }
        per_frame.push(FrameError {
            frame: sk.frame,
            mpjpe_mm: err * MM_PER_UNIT,
            pmpjpe_mm: pmpjpe(sk, &truth)? * MM_PER_UNIT,
        });
    }
    let n = per_frame.len() as f64;
    per_joint.iter_mut().for_each(|v| *v /= n);
    let report = EvalReport {
        seed,
        avg_mpjpe_mm: per_frame.iter().map(|f| f.mpjpe_mm).sum::<f64>() / n,
        avg_pmpjpe_mm: per_frame.iter().map(|f| f.pmpjpe_mm).sum::<f64>() / n,
        per_frame,
        per_joint_mpjpe_mm: per_joint,
        poses_emitted: skeletons.len(),
        held_joints: run.held,
        warp_fallbacks: run.fallbacks,
        cache: run.cache,
        config,
        times: record_times.then_some(run.times),
    };
    Ok((report, skeletons))
}

/// Runs one variant over a sampled stream and scores it against the truth.
pub fn evaluate_variant(
    scene: &Scene,
    seq: &SampledSequence,
    variant: PipelineVariant,
    cfg: &RunConfig,
    warpers: Option<&WarperBank>,
    seed: u64,
    record_times: bool,
) -> Result<(EvalReport, Vec<Skeleton3D>), EvalError> {
    let run = if variant == PipelineVariant::DenseOracle {
        run_dense(scene, seq)?
    } else {
        run_stream(scene, seq, variant, cfg, warpers, false)?.0
    };
    score(scene, seq, variant, cfg, run, seed, record_times)
}

/// Scores several variants on one stream, in the order given. The spatial
/// fusion result is taken from the warper pass when both are requested; it
/// is the same computation.
pub fn evaluate_variants(
    scene: &Scene,
    seq: &SampledSequence,
    variants: &[PipelineVariant],
    cfg: &RunConfig,
    warpers: Option<&WarperBank>,
    seed: u64,
    record_times: bool,
) -> Result<Vec<EvalReport>, EvalError> {
    let share =
        variants.contains(&PipelineVariant::SpatialFusion) && variants.contains(&PipelineVariant::FusionPlusWarper);
    let mut runs: BTreeMap<PipelineVariant, StreamRun> = BTreeMap::new();
    for &v in variants {
        if runs.contains_key(&v) {
            continue;
        }
        match v {
            PipelineVariant::DenseOracle => {
                runs.insert(v, run_dense(scene, seq)?);
            }
            PipelineVariant::SpatialFusion if share => {}
            PipelineVariant::FusionPlusWarper if share => {
                let (run, fused) = run_stream(scene, seq, v, cfg, warpers, true)?;
                runs.insert(v, run);
                runs.insert(PipelineVariant::SpatialFusion, fused.expect("requested"));
            }
            _ => {
                runs.insert(v, run_stream(scene, seq, v, cfg, warpers, false)?.0);
            }
        }
    }
    variants
        .iter()
        .map(|v| {
            let run = runs.get(v).cloned().expect("every variant ran");
            score(scene, seq, *v, cfg, run, seed, record_times).map(|r| r.0)
        })
        .collect()
}

/// Training outcome for one temporal mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeTraining {
    pub mode: i32,
    pub samples: usize,
    pub report: TrainReport,
}

/// Seeds of the held-out training scenes; disjoint from evaluation seeds.
pub fn training_seeds(cfg: &RunConfig) -> Vec<u64> {
    (0..cfg.warper.train_scenes as u64)
        .map(|k| mix(cfg.seed, 0xDEAD_0000 + k) | (1 << 63))
        .collect()
}

/// Warper training sets from held-out scenes: fused estimates and anchors
/// from the fusion pipeline, with the clean rendering at the target frame as
/// the label. Samples are cropped to the box the pipeline warps on.
pub fn collect_training_samples(
    cfg: &RunConfig,
    plan: &PlanConfig,
) -> Result<BTreeMap<i32, Vec<TrainSample>>, EvalError> {
    let mut by_mode: BTreeMap<i32, Vec<TrainSample>> = BTreeMap::new();
    let margin = cfg.stream.warp_margin_px;
    for seed in training_seeds(cfg) {
        let scene = build_scene(cfg, plan, seed)?;
        let seq = sample_sequence(&scene, cfg.scene.duration_s)?;
        let mut p = StreamPipeline::new(&scene.rig, PipelineVariant::SpatialFusion, cfg.pipeline(), None)?
            .keep_warp_inputs(true);
        for s in &seq.samples {
            let Some(out) = p.push(s.view, s.frame, s.heatmap.clone())? else {
                continue;
            };
            for (v, inp) in out.warp_inputs.into_iter().enumerate() {
                let Some(inp) = inp else { continue };
                let target = scene.clean_capture(v, out.frame)?;
                let sample = if margin >= 0 {
                    match support_box(&inp.anchor, margin as usize) {
                        Some(bx) => TrainSample {
                            input: WarpInput {
                                corrected: crop(&inp.corrected, bx),
                                anchor: crop(&inp.anchor, bx),
                                relative_offset: inp.relative_offset,
                            },
                            target: crop(&target, bx),
                        },
                        None => continue,
                    }
                } else {
                    TrainSample { input: inp, target }
                };
                by_mode.entry(sample.input.relative_offset).or_default().push(sample);
            }
        }
    }
    let cap = cfg.warper.max_samples_per_mode;
    for samples in by_mode.values_mut() {
        if samples.len() > cap {
            // evenly spaced subset keeps every training scene represented
            let len = samples.len();
            let picked: Vec<TrainSample> = (0..cap).map(|i| samples[i * len / cap].clone()).collect();
            *samples = picked;
        }
    }
    Ok(by_mode)
}

/// Trains one warper per temporal mode that occurs under `plan`.
pub fn train_bank(cfg: &RunConfig, plan: &PlanConfig) -> Result<(WarperBank, Vec<ModeTraining>), EvalError> {
    let sets = collect_training_samples(cfg, plan)?;
    let mut bank = WarperBank::new();
    let mut log = Vec::new();
    for (mode, samples) in sets {
        let hyper = cfg.warper.hyper(mix(cfg.seed, 0x7EA1_0000 + mode as u32 as u64));
        let (weights, report) = warper_train(&samples, mode, &hyper)?;
        bank.insert(weights);
        log.push(ModeTraining {
            mode,
            samples: samples.len(),
            report,
        });
    }
    Ok((bank, log))
}

/// Seed-mean summary of one variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: PipelineVariant,
    pub mean_mpjpe_mm: f64,
    pub mean_pmpjpe_mm: f64,
    pub std_mpjpe_mm: f64,
    pub per_seed_mpjpe_mm: Vec<f64>,
    pub poses_emitted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingCheck {
    pub holds: bool,
    pub violations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub rows: Vec<VariantSummary>,
    pub ordering: OrderingCheck,
    /// Seeds where the dense reference was worse than some sparse variant.
    pub dense_not_lowest_seeds: Vec<u64>,
    pub warper_training: Vec<ModeTraining>,
    pub procrustes: String,
}

impl AblationReport {
    pub fn row(&self, variant: PipelineVariant) -> Option<&VariantSummary> {
        self.rows.iter().find(|r| r.variant == variant)
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Evaluation seeds `seed, seed + 1, ...`.
pub fn eval_seeds(cfg: &RunConfig) -> Vec<u64> {
    (0..cfg.eval.seeds as u64).map(|k| cfg.seed + k).collect()
}

/// Runs every variant on the same streams, one per seed.
pub fn run_ablation(
    cfg: &RunConfig,
    variants: &[PipelineVariant],
    seeds: &[u64],
    warpers: Option<(&WarperBank, Vec<ModeTraining>)>,
) -> Result<AblationReport, EvalError> {
    cfg.validate()?;
    let needs_warper = variants.contains(&PipelineVariant::FusionPlusWarper);
    let (bank, training) = match warpers {
        Some((b, log)) => (Some(b.clone()), log),
        None if needs_warper => {
            let (b, log) = train_bank(cfg, &cfg.plan)?;
            (Some(b), log)
        }
        None => (None, Vec::new()),
    };
    let mut per_variant: BTreeMap<PipelineVariant, Vec<EvalReport>> = BTreeMap::new();
    for &seed in seeds {
        let scene = build_scene(cfg, &cfg.plan, seed)?;
        let seq = sample_sequence(&scene, cfg.scene.duration_s)?;
        for report in evaluate_variants(&scene, &seq, variants, cfg, bank.as_ref(), seed, false)? {
            per_variant.entry(report.config.variant).or_default().push(report);
        }
    }
    let rows: Vec<VariantSummary> = variants
        .iter()
        .map(|v| {
            let reports = &per_variant[v];
            let per_seed: Vec<f64> = reports.iter().map(|r| r.avg_mpjpe_mm).collect();
            let (mean, std) = mean_std(&per_seed);
            VariantSummary {
                variant: *v,
                mean_mpjpe_mm: mean,
                mean_pmpjpe_mm: mean_std(&reports.iter().map(|r| r.avg_pmpjpe_mm).collect::<Vec<_>>()).0,
                std_mpjpe_mm: std,
                per_seed_mpjpe_mm: per_seed,
                poses_emitted: reports.iter().map(|r| r.poses_emitted).sum(),
            }
        })
        .collect();
    let ordering = check_ordering(&rows, cfg.eval.ordering_tolerance_mm);
    let mut dense_not_lowest = Vec::new();
    if let Some(dense) = per_variant.get(&PipelineVariant::DenseOracle) {
        for (i, seed) in seeds.iter().enumerate() {
            let d = dense[i].avg_mpjpe_mm;
            let beaten = per_variant
                .iter()
                .filter(|(v, _)| **v != PipelineVariant::DenseOracle)
                .any(|(_, r)| r[i].avg_mpjpe_mm < d);
            if beaten {
                dense_not_lowest.push(*seed);
            }
        }
    }
    Ok(AblationReport {
        seeds: seeds.to_vec(),
        rows,
        ordering,
        dense_not_lowest_seeds: dense_not_lowest,
        warper_training: training,
        procrustes: PROCRUSTES_PROTOCOL.into(),
    })
}

/// Expected order of seed-mean MPJPE: each sparse stage strictly improves on
/// the previous one, and the dense reference is no worse than any sparse
/// variant (up to `tolerance` mm).
pub fn check_ordering(rows: &[VariantSummary], tolerance: f64) -> OrderingCheck {
    let get = |v: PipelineVariant| rows.iter().find(|r| r.variant == v).map(|r| r.mean_mpjpe_mm);
    let ladder = [
        PipelineVariant::ReplicateOnly,
        PipelineVariant::SpatialFusion,
        PipelineVariant::FusionPlusWarper,
    ];
    let present: Vec<(PipelineVariant, f64)> = ladder.iter().filter_map(|v| get(*v).map(|m| (*v, m))).collect();
    let mut violations = Vec::new();
    for pair in present.windows(2) {
        let ((a, ma), (b, mb)) = (pair[0], pair[1]);
        if !(ma > mb) {
            violations.push(format!("{a} ({ma:.3} mm) should exceed {b} ({mb:.3} mm)"));
        }
    }
    if let Some(d) = get(PipelineVariant::DenseOracle) {
        for (v, m) in &present {
            if !(*m >= d - tolerance) {
                violations.push(format!(
                    "dense_oracle ({d:.3} mm) should not exceed {v} ({m:.3} mm) by more than {tolerance} mm"
                ));
            }
        }
    }
    OrderingCheck {
        holds: violations.is_empty(),
        violations,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: u32,
    pub mean_mpjpe_mm: f64,
    pub mean_pmpjpe_mm: f64,
    pub std_mpjpe_mm: f64,
    pub per_seed_mpjpe_mm: Vec<f64>,
    pub warp_fallbacks: usize,
    pub warper_training: Vec<ModeTraining>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub name: String,
    pub parameter: String,
    pub variant: PipelineVariant,
    pub seeds: Vec<u64>,
    pub points: Vec<SweepPoint>,
    /// Seed-mean MPJPE never decreases along the sweep.
    pub monotone_non_decreasing: bool,
    pub violations: Vec<String>,
}

fn sweep(
    cfg: &RunConfig,
    name: &str,
    parameter: &str,
    values: &[u32],
    plan_for: impl Fn(u32) -> PlanConfig,
    seeds: &[u64],
) -> Result<SweepReport, EvalError> {
    cfg.validate()?;
    let variant = cfg.eval.sweep_variant;
    let mut points = Vec::with_capacity(values.len());
    for &value in values {
        let plan = plan_for(value);
        let (bank, training) = if variant == PipelineVariant::FusionPlusWarper {
            let (b, log) = train_bank(cfg, &plan)?;
            (Some(b), log)
        } else {
            (None, Vec::new())
        };
        let mut mp = Vec::with_capacity(seeds.len());
        let mut pmp = Vec::with_capacity(seeds.len());
        let mut fallbacks = 0;
        for &seed in seeds {
            let scene = build_scene(cfg, &plan, seed)?;
            let seq = sample_sequence(&scene, cfg.scene.duration_s * value_duration_scale(parameter, value))?;
            let (r, _) = evaluate_variant(&scene, &seq, variant, cfg, bank.as_ref(), seed, false)?;
            mp.push(r.avg_mpjpe_mm);
            pmp.push(r.avg_pmpjpe_mm);
            fallbacks += r.warp_fallbacks;
        }
        let (mean, std) = mean_std(&mp);
        points.push(SweepPoint {
            value,
            mean_mpjpe_mm: mean,
            mean_pmpjpe_mm: mean_std(&pmp).0,
            std_mpjpe_mm: std,
            per_seed_mpjpe_mm: mp,
            warp_fallbacks: fallbacks,
            warper_training: training,
        });
    }
    let mut violations = Vec::new();
    for pair in points.windows(2) {
        if pair[1].mean_mpjpe_mm < pair[0].mean_mpjpe_mm {
            violations.push(format!(
                "{parameter} {} ({:.3} mm) is below {parameter} {} ({:.3} mm)",
                pair[1].value, pair[1].mean_mpjpe_mm, pair[0].value, pair[0].mean_mpjpe_mm
            ));
        }
    }
    Ok(SweepReport {
        name: name.into(),
        parameter: parameter.into(),
        variant,
        seeds: seeds.to_vec(),
        monotone_non_decreasing: violations.is_empty(),
        violations,
        points,
    })
}

/// Streams in the interval sweep cover the same number of frame slots, so
/// longer intervals get proportionally longer durations.
fn value_duration_scale(parameter: &str, value: u32) -> f64 {
    if parameter == "interval_factor" {
        value as f64
    } else {
        1.0
    }
}

/// MPJPE as the inter-view step grows by each factor.
pub fn interval_sweep(cfg: &RunConfig, factors: &[u32], seeds: &[u64]) -> Result<SweepReport, EvalError> {
    sweep(
        cfg,
        "interval_sweep",
        "interval_factor",
        factors,
        |f| PlanConfig {
            interval_factor: f,
            ..cfg.plan.clone()
        },
        seeds,
    )
}

/// MPJPE under non-uniform plans with each window size (a window equal to the
/// view count is the uniform plan).
pub fn window_sweep(cfg: &RunConfig, windows: &[u32], seeds: &[u64]) -> Result<SweepReport, EvalError> {
    sweep(
        cfg,
        "window_sweep",
        "window_size",
        windows,
        |x| PlanConfig {
            kind: PlanKind::NonUniform,
            window: x,
            ..cfg.plan.clone()
        },
        seeds,
    )
}

/// Aligned-column text rendering of an ablation.
pub fn ablation_text(r: &AblationReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "ablation over {} seeds (MPJPE / P-MPJPE in mm)", r.seeds.len());
    let _ = writeln!(s, "{:<20} {:>12} {:>12} {:>10}", "variant", "mpjpe", "p-mpjpe", "std");
    for row in &r.rows {
        let _ = writeln!(
            s,
            "{:<20} {:>12.3} {:>12.3} {:>10.3}",
            row.variant.name(),
            row.mean_mpjpe_mm,
            row.mean_pmpjpe_mm,
            row.std_mpjpe_mm
        );
    }
    let _ = writeln!(s, "ordering: {}", if r.ordering.holds { "holds" } else { "VIOLATED" });
    for v in &r.ordering.violations {
        let _ = writeln!(s, "  {v}");
    }
    if !r.dense_not_lowest_seeds.is_empty() {
        let _ = writeln!(s, "dense reference not lowest on seeds {:?}", r.dense_not_lowest_seeds);
    }
    let _ = writeln!(s, "p-mpjpe protocol: {}", r.procrustes);
    s
}

/// Aligned-column text rendering of a sweep.
pub fn sweep_text(r: &SweepReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{} ({}) over {} seeds, variant {}",
        r.name,
        r.parameter,
        r.seeds.len(),
        r.variant
    );
    let _ = writeln!(s, "{:<16} {:>12} {:>12} {:>10}", r.parameter, "mpjpe", "p-mpjpe", "std");
    for p in &r.points {
        let _ = writeln!(
            s,
            "{:<16} {:>12.3} {:>12.3} {:>10.3}",
            p.value, p.mean_mpjpe_mm, p.mean_pmpjpe_mm, p.std_mpjpe_mm
        );
    }
    let _ = writeln!(
        s,
        "monotone non-decreasing: {}",
        if r.monotone_non_decreasing { "yes" } else { "NO" }
    );
    for v in &r.violations {
        let _ = writeln!(s, "  {v}");
    }
    s
}

/// Minimal SVG line plot of seed-mean MPJPE along a sweep.
pub fn sweep_svg(r: &SweepReport) -> String {
    let (w, h, pad) = (480.0, 320.0, 48.0);
    let xs: Vec<f64> = r.points.iter().map(|p| p.value as f64).collect();
    let ys: Vec<f64> = r.points.iter().map(|p| p.mean_mpjpe_mm).collect();
    let (xmin, xmax) = (
        xs.iter().copied().fold(f64::INFINITY, f64::min),
        xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    );
    let ymax = ys.iter().copied().fold(0.0, f64::max).max(1e-9) * 1.1;
    let sx = |x: f64| pad + if xmax > xmin { (x - xmin) / (xmax - xmin) } else { 0.5 } * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - y / ymax * (h - 2.0 * pad);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{pad}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{b}" stroke="black"/>"#,
        b = h - pad,
        r = w - pad
    );
    let pts: Vec<String> = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
        .collect();
    let _ = writeln!(
        s,
        r#"<polyline fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#,
        pts.join(" ")
    );
    for (x, y) in xs.iter().zip(&ys) {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="steelblue"/><text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text><text x="{:.2}" y="{:.2}" font-size="10" text-anchor="middle">{:.1}</text>"#,
            sx(*x),
            sy(*y),
            sx(*x),
            h - pad + 16.0,
            x,
            sx(*x),
            sy(*y) - 8.0,
            y
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{}</text><text x="14" y="{:.1}" font-size="12" transform="rotate(-90 14 {:.1})" text-anchor="middle">MPJPE (mm)</text>"#,
        w / 2.0,
        h - 8.0,
        r.parameter,
        h / 2.0,
        h / 2.0
    );
    s.push_str("</svg>\n");
    s
}

/// Minimal SVG bar chart of seed-mean MPJPE per variant.
pub fn ablation_svg(r: &AblationReport) -> String {
    let (w, h, pad) = (480.0, 320.0, 48.0);
    let ymax = r.rows.iter().map(|row| row.mean_mpjpe_mm).fold(0.0, f64::max).max(1e-9) * 1.1;
    let n = r.rows.len().max(1) as f64;
    let slot = (w - 2.0 * pad) / n;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{pad}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{b}" stroke="black"/>"#,
        b = h - pad,
        r = w - pad
    );
    for (i, row) in r.rows.iter().enumerate() {
        let bh = row.mean_mpjpe_mm / ymax * (h - 2.0 * pad);
        let x = pad + i as f64 * slot + slot * 0.15;
        let _ = writeln!(
            s,
            r#"<rect x="{x:.2}" y="{:.2}" width="{:.2}" height="{bh:.2}" fill="steelblue"/><text x="{:.2}" y="{:.2}" font-size="10" text-anchor="middle">{}</text><text x="{:.2}" y="{:.2}" font-size="10" text-anchor="middle">{:.1}</text>"#,
            h - pad - bh,
            slot * 0.7,
            x + slot * 0.35,
            h - pad + 14.0,
            row.variant.name(),
            x + slot * 0.35,
            h - pad - bh - 6.0,
            row.mean_mpjpe_mm
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" font-size="12" transform="rotate(-90 14 {:.1})" text-anchor="middle">MPJPE (mm)</text>"#,
        h / 2.0,
        h / 2.0
    );
    s.push_str("</svg>\n");
    s
}
