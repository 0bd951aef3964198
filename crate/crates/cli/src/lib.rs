//! `densewarp` command-line driver: config layering, the subcommands, and the
//! exit-code contract (0 ok, 1 I/O or data, 2 config, 3 stream order,
//! 4 strict violation).

pub mod args;
pub mod files;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use clap::Parser;
use densewarp::config::{ConfigError, RunConfig};
use densewarp::eval::{
    ablation_svg, ablation_text, build_scene, emitted_frames, eval_seeds, evaluate_variant, interval_sweep,
    plan_for_seed, run_ablation, run_arrivals, run_dense_frames, score_run, sweep_svg, sweep_text, train_bank,
    window_sweep, ConfigEcho, EvalError, ModeTraining, PROCRUSTES_PROTOCOL,
};
use densewarp::heatmap::{load_heatmap, save_heatmap, HeatmapError};
use densewarp::pipeline::{PipelineError, PipelineVariant, WarperBank};
use densewarp::scheduler::{simulate_schedule, write_schedule_csv, SchedulerError};
use densewarp::synth::{sample_sequence, SynthError};
use densewarp::triangulate::Skeleton3D;
use densewarp::warper::{load_weights, save_weights, WarperError};
use densewarp::Heatmap;
use nalgebra::Vector3;
use thiserror::Error;

use args::{Cli, Command, ConfigArgs, Experiment};
use files::*;

/// Environment variable that overrides the config seed.
pub const SEED_ENV: &str = "DENSEWARP_SEED";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Io(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    OutOfOrder(String),
    #[error("strict mode: {0}")]
    Strict(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::OutOfOrder(_) => 3,
            CliError::Strict(_) => 4,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Heatmap(h) => h.into(),
            // the scene described by the config cannot be synthesized
            other => CliError::Config(format!("scene: {other}")),
        }
    }
}

impl From<HeatmapError> for CliError {
    fn from(e: HeatmapError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<WarperError> for CliError {
    fn from(e: WarperError) -> Self {
        match e {
            WarperError::InvalidHyper(m) => CliError::Config(format!("warper: {m}")),
            other => CliError::Io(other.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Scheduler(s @ SchedulerError::OutOfOrderArrival { .. }) => {
                CliError::OutOfOrder(s.to_string())
            }
            PipelineError::Fusion(f) => CliError::Config(format!("fusion: {f}")),
            e @ (PipelineError::MissingWarpers(_) | PipelineError::WrongVariant(_)) => CliError::Config(e.to_string()),
            PipelineError::Heatmap(h) => h.into(),
            PipelineError::Warper(w) => w.into(),
            other => CliError::Io(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Config(c) => c.into(),
            EvalError::Pipeline(p) => p.into(),
            EvalError::Synth(s) => s.into(),
            EvalError::Warper(w) => w.into(),
            other => CliError::Io(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Parses a `--set` value as TOML; anything that is not a TOML value is a string.
fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("{key}: malformed key")));
    }
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("{key}: `{p}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn seed_value(raw: &str, key: &str) -> Result<toml::Value, CliError> {
    let seed: u64 = raw
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("{key}: `{raw}` is not a non-negative integer")))?;
    i64::try_from(seed)
        .map(toml::Value::Integer)
        .map_err(|_| CliError::Config(format!("{key}: must be below 2^63")))
}

/// Overlays `layer` onto `base`, descending into tables present in both.
fn merge(base: &mut toml::Table, layer: toml::Table) {
    for (k, v) in layer {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(l)) => merge(b, l),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Resolves the run configuration. Layers, later wins: defaults, the config
/// file (or `fallback` when no file is given and it exists), DENSEWARP_SEED,
/// dedicated flags and `extra` (in that order), then `--set` entries.
pub fn load_config(
    args: &ConfigArgs,
    extra: &[(&str, toml::Value)],
    fallback: Option<&Path>,
) -> Result<RunConfig, CliError> {
    let file = args
        .config
        .clone()
        .or_else(|| fallback.filter(|p| p.exists()).map(Path::to_path_buf));
    // partial tables in the file keep the run defaults for keys they omit
    let mut root = toml::Table::try_from(RunConfig::default()).expect("defaults serialize");
    if let Some(path) = &file {
        let text = read_text(path)?;
        let layer =
            toml::from_str::<toml::Table>(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        merge(&mut root, layer);
    }
    if let Ok(raw) = std::env::var(SEED_ENV) {
        root.insert("seed".into(), seed_value(&raw, SEED_ENV)?);
    }
    if let Some(seed) = args.seed {
        root.insert("seed".into(), seed_value(&seed.to_string(), "seed")?);
    }
    if let Some(out) = &args.out {
        root.insert(
            "output_dir".into(),
            toml::Value::String(out.to_string_lossy().into_owned()),
        );
    }
    if let Some(l) = args.lambda {
        set_path(&mut root, "fusion.lambda", toml::Value::Float(l))?;
    }
    if let Some(s) = args.line_step {
        set_path(&mut root, "fusion.line_step", toml::Value::Float(s))?;
    }
    for (k, v) in extra {
        set_path(&mut root, k, v.clone())?;
    }
    for entry in &args.set {
        let (k, v) = entry
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set `{entry}`: expected KEY=VALUE")))?;
        set_path(&mut root, k.trim(), parse_value(v.trim()))?;
    }
    let cfg: RunConfig = toml::Value::Table(root)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(e.message().trim().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads every `*.dwwt` in `dir` (sorted by name) into a bank.
pub fn load_bank(dir: &Path) -> Result<WarperBank, CliError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "dwwt"))
        .collect();
    paths.sort();
    let mut bank = WarperBank::new();
    for p in paths {
        bank.insert(load_weights(&p).map_err(|e| io_err(&p, e))?);
    }
    if bank.is_empty() {
        return Err(CliError::Io(format!("{}: no .dwwt files", dir.display())));
    }
    Ok(bank)
}

fn write_bank(dir: &Path, bank: &WarperBank, log: &[ModeTraining]) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for w in bank.models() {
        let p = dir.join(format!("mode_{}.dwwt", w.temporal_mode));
        save_weights(w, &p).map_err(|e| io_err(&p, e))?;
    }
    write_json(&dir.join("training.json"), &log)
}

fn warpers_for(cfg: &RunConfig, dir: Option<&Path>) -> Result<WarperBank, CliError> {
    match dir {
        Some(d) => load_bank(d),
        None => {
            let (bank, log) = train_bank(cfg, &cfg.plan)?;
            for m in &log {
                println!(
                    "trained warper mode {:+}: {} samples, loss {:.4e} -> {:.4e}",
                    m.mode,
                    m.samples,
                    m.report.initial_loss(),
                    m.report.final_loss()
                );
            }
            Ok(bank)
        }
    }
}

/// `synth`: writes a stream directory for `cfg` into its output directory.
pub fn cmd_synth(cfg: &RunConfig, dense: bool) -> Result<(), CliError> {
    let out = PathBuf::from(&cfg.output_dir);
    let scene = build_scene(cfg, &cfg.plan, cfg.seed)?;
    let seq = sample_sequence(&scene, cfg.scene.duration_s)?;
    let m = scene.rig.len();
    fs::create_dir_all(out.join("heatmaps")).map_err(|e| io_err(&out, e))?;

    let mut arrivals = Vec::with_capacity(seq.samples.len());
    for s in &seq.samples {
        let file = arrival_file(s.view, s.frame);
        let p = out.join(&file);
        save_heatmap(&s.heatmap, &p).map_err(|e| io_err(&p, e))?;
        arrivals.push(Arrival {
            view: s.view,
            frame: s.frame,
            timestamp_s: s.timestamp,
            file,
        });
    }
    write_csv(&out.join("arrivals.csv"), &arrivals)?;
    write_bytes(&out.join("rig.toml"), rig_to_toml(&scene.rig).as_bytes())?;
    let cfg_text = toml::to_string(cfg).map_err(|e| CliError::Io(e.to_string()))?;
    write_bytes(&out.join("config.toml"), cfg_text.as_bytes())?;

    let schedule =
        simulate_schedule(&scene.plan, cfg.scene.duration_s).map_err(|e| CliError::Config(format!("plan: {e}")))?;
    let mut buf = Vec::new();
    write_schedule_csv(&schedule, &mut buf).map_err(|e| CliError::Io(e.to_string()))?;
    write_bytes(&out.join("schedule.csv"), &buf)?;

    let mut t3 = Vec::new();
    let mut t2 = Vec::new();
    for (k, (pose, views)) in seq.truth_3d.iter().zip(&seq.truth_2d).enumerate() {
        let frame = k as u32 + 1;
        for (j, p) in pose.iter().enumerate() {
            t3.push(Truth3dRow {
                frame,
                joint: j,
                x: p.x,
                y: p.y,
                z: p.z,
            });
        }
        for (v, pts) in views.iter().enumerate() {
            for (j, q) in pts.iter().enumerate() {
                t2.push(Truth2dRow {
                    frame,
                    view: v,
                    joint: j,
                    u: q.x,
                    v: q.y,
                });
            }
        }
    }
    write_csv(&out.join("truth_3d.csv"), &t3)?;
    write_csv(&out.join("truth_2d.csv"), &t2)?;

    let mut dense_count = 0;
    if dense {
        fs::create_dir_all(out.join("dense")).map_err(|e| io_err(&out, e))?;
        for frame in emitted_frames(&seq, m) {
            for v in 0..m {
                let p = out.join(dense_file(v, frame));
                save_heatmap(&scene.capture(v, frame)?, &p).map_err(|e| io_err(&p, e))?;
                dense_count += 1;
            }
        }
    }
    println!(
        "synth: {} arrivals over {} frame slots from {m} views, {} dense captures -> {}",
        arrivals.len(),
        seq.slots,
        dense_count,
        out.display()
    );
    Ok(())
}

fn load_arrival(dir: &Path, a: &Arrival) -> Result<(usize, u32, Heatmap), EvalError> {
    let p = dir.join(&a.file);
    let h = load_heatmap(&p).map_err(|e| EvalError::Pipeline(PipelineError::Input(format!("{}: {e}", p.display()))))?;
    if (h.view, h.frame) != (a.view, a.frame) {
        return Err(EvalError::Pipeline(PipelineError::Input(format!(
            "{} holds view {} frame {}, arrivals.csv says view {} frame {}",
            p.display(),
            h.view,
            h.frame,
            a.view,
            a.frame
        ))));
    }
    Ok((a.view, a.frame, h))
}

/// Frames at which a sparse stream emits (every arrival once all views were seen).
fn arrival_emissions(arrivals: &[Arrival], views: usize) -> Vec<u32> {
    let mut seen = vec![false; views];
    let mut out = Vec::new();
    for a in arrivals {
        if let Some(s) = seen.get_mut(a.view) {
            *s = true;
        }
        if seen.iter().all(|s| *s) {
            out.push(a.frame);
        }
    }
    out
}

fn write_run_outputs(
    out: &Path,
    skeletons: &[Skeleton3D],
    report: Option<&densewarp::eval::EvalReport>,
) -> Result<(), CliError> {
    write_csv(&out.join("skeleton.csv"), &skeleton_rows(skeletons))?;
    if let Some(r) = report {
        write_json(&out.join("report.json"), r)?;
    }
    Ok(())
}

/// `run` on an in-memory synthetic stream.
pub fn cmd_run_synth(cfg: &RunConfig, warpers: Option<&Path>, timings: bool) -> Result<(), CliError> {
    let variant = cfg.eval.variant;
    let scene = build_scene(cfg, &cfg.plan, cfg.seed)?;
    let seq = sample_sequence(&scene, cfg.scene.duration_s)?;
    let bank = (variant == PipelineVariant::FusionPlusWarper)
        .then(|| warpers_for(cfg, warpers))
        .transpose()?;
    let (report, skeletons) = evaluate_variant(&scene, &seq, variant, cfg, bank.as_ref(), cfg.seed, timings)?;
    let out = PathBuf::from(&cfg.output_dir);
    write_run_outputs(&out, &skeletons, Some(&report))?;
    println!(
        "run {variant}: {} poses, avg MPJPE {:.3} mm, P-MPJPE {:.3} mm -> {}",
        report.poses_emitted,
        report.avg_mpjpe_mm,
        report.avg_pmpjpe_mm,
        out.display()
    );
    Ok(())
}

/// `run` on a stream directory written by `synth`.
pub fn cmd_run_input(cfg: &RunConfig, input: &Path, warpers: Option<&Path>, timings: bool) -> Result<(), CliError> {
    let variant = cfg.eval.variant;
    let rig = read_rig(&input.join("rig.toml"))?;
    let arrivals: Vec<Arrival> = read_csv(&input.join("arrivals.csv"))?;
    let m = rig.len();
    let run = if variant == PipelineVariant::DenseOracle {
        let frames = arrival_emissions(&arrivals, m);
        if let Some(missing) = frames
            .iter()
            .flat_map(|f| (0..m).map(move |v| dense_file(v, *f)))
            .find(|p| !input.join(p).exists())
        {
            return Err(CliError::Config(format!(
                "variant dense_oracle needs all-view frames; {} has sparse arrivals only (missing {}; synthesize with --dense)",
                input.display(),
                missing.display()
            )));
        }
        run_dense_frames(
            &rig,
            frames.into_iter().map(|f| {
                (0..m)
                    .map(|v| {
                        let p = input.join(dense_file(v, f));
                        load_heatmap(&p)
                            .map_err(|e| EvalError::Pipeline(PipelineError::Input(format!("{}: {e}", p.display()))))
                    })
                    .collect::<Result<Vec<_>, _>>()
                    .map(|hs| (f, hs))
            }),
        )?
    } else {
        let bank = (variant == PipelineVariant::FusionPlusWarper)
            .then(|| warpers_for(cfg, warpers))
            .transpose()?;
        let stream = arrivals.iter().map(|a| load_arrival(input, a));
        run_arrivals(&rig, stream, variant, cfg, bank.as_ref(), false)?.0
    };
    let out = PathBuf::from(&cfg.output_dir);
    let truth_path = input.join("truth_3d.csv");
    if truth_path.exists() {
        let rows: Vec<Truth3dRow> = read_csv(&truth_path)?;
        let mut truth: BTreeMap<u32, Vec<Vector3<f64>>> = BTreeMap::new();
        for r in rows {
            let pose = truth.entry(r.frame).or_default();
            if r.joint != pose.len() {
                return Err(io_err(&truth_path, format!("frame {} joints out of order", r.frame)));
            }
            pose.push(Vector3::new(r.x, r.y, r.z));
        }
        let echo = ConfigEcho {
            variant,
            lambda: cfg.fusion.lambda,
            sigma: cfg.scene.sigma,
            noise: cfg.scene.noise,
            plan: plan_for_seed(&cfg.plan, m, cfg.seed),
            procrustes: PROCRUSTES_PROTOCOL.into(),
        };
        let lookup = |f: u32| truth.get(&f).cloned();
        let (report, skeletons) = score_run(run, &lookup, echo, cfg.seed, timings)?;
        write_run_outputs(&out, &skeletons, Some(&report))?;
        println!(
            "run {variant}: {} poses, avg MPJPE {:.3} mm, P-MPJPE {:.3} mm -> {}",
            report.poses_emitted,
            report.avg_mpjpe_mm,
            report.avg_pmpjpe_mm,
            out.display()
        );
    } else {
        write_run_outputs(&out, &run.skeletons, None)?;
        println!(
            "run {variant}: {} poses (no ground truth) -> {}",
            run.skeletons.len(),
            out.display()
        );
    }
    Ok(())
}

/// `train-warper`: writes `warpers/mode_<k>.dwwt` and `warpers/training.json`.
pub fn cmd_train_warper(cfg: &RunConfig) -> Result<(), CliError> {
    let (bank, log) = train_bank(cfg, &cfg.plan)?;
    let dir = PathBuf::from(&cfg.output_dir).join("warpers");
    write_bank(&dir, &bank, &log)?;
    for m in &log {
        println!(
            "mode {:+}: {} samples, loss {:.4e} -> {:.4e} (best epoch {})",
            m.mode,
            m.samples,
            m.report.initial_loss(),
            m.report.final_loss(),
            m.report.best_epoch
        );
    }
    println!("train-warper: {} modes -> {}", log.len(), dir.display());
    Ok(())
}

/// `experiment`: writes `<name>.json`, `<name>.txt` and (with `eval.plots`)
/// `<name>.svg`. With `strict`, a violated ordering or monotonicity is exit 4
/// after the outputs are written.
pub fn cmd_experiment(name: Experiment, cfg: &RunConfig, strict: bool, warpers: Option<&Path>) -> Result<(), CliError> {
    let out = PathBuf::from(&cfg.output_dir);
    let seeds = eval_seeds(cfg);
    let stem = name.name();
    let (text, svg, violation) = match name {
        Experiment::Ablation => {
            let bank = warpers.map(load_bank).transpose()?;
            let r = run_ablation(
                cfg,
                &PipelineVariant::ALL,
                &seeds,
                bank.as_ref().map(|b| (b, Vec::new())),
            )?;
            write_json(&out.join(format!("{stem}.json")), &r)?;
            let violation = (!r.ordering.holds).then(|| r.ordering.violations.join("; "));
            (ablation_text(&r), ablation_svg(&r), violation)
        }
        Experiment::IntervalSweep | Experiment::WindowSweep => {
            let r = if name == Experiment::IntervalSweep {
                interval_sweep(cfg, &cfg.eval.interval_factors, &seeds)?
            } else {
                window_sweep(cfg, &cfg.eval.window_sizes, &seeds)?
            };
            write_json(&out.join(format!("{stem}.json")), &r)?;
            let violation = (!r.monotone_non_decreasing).then(|| r.violations.join("; "));
            (sweep_text(&r), sweep_svg(&r), violation)
        }
    };
    write_bytes(&out.join(format!("{stem}.txt")), text.as_bytes())?;
    if cfg.eval.plots {
        write_bytes(&out.join(format!("{stem}.svg")), svg.as_bytes())?;
    }
    print!("{text}");
    match violation {
        Some(v) if strict => Err(CliError::Strict(v)),
        _ => Ok(()),
    }
}

/// Header and per-channel stats of a DWHM file, or a tensor summary of a DWWT file.
pub fn inspect_text(path: &Path) -> Result<String, CliError> {
    use std::fmt::Write as _;
    let mut magic = [0u8; 4];
    fs::File::open(path)
        .and_then(|mut f| f.read_exact(&mut magic))
        .map_err(|e| io_err(path, e))?;
    let mut s = String::new();
    if &magic == densewarp::heatmap::MAGIC {
        let h = load_heatmap(path).map_err(|e| io_err(path, e))?;
        let _ = writeln!(s, "format: DWHM v{}", densewarp::heatmap::FORMAT_VERSION);
        let _ = writeln!(
            s,
            "view: {}\nframe: {}\njoints: {}\nwidth: {}\nheight: {}",
            h.view,
            h.frame,
            h.joints(),
            h.width(),
            h.height()
        );
        let _ = writeln!(
            s,
            "{:>5} {:>12} {:>12} {:>12} {:>12} {:>5} {:>5}",
            "joint", "min", "max", "mean", "sum", "row", "col"
        );
        for j in 0..h.joints() {
            let c = h.channel(j);
            let (mut arg, mut max, mut min, mut sum) = (0, f64::NEG_INFINITY, f64::INFINITY, 0.0);
            for (i, v) in c.iter().enumerate() {
                if *v > max {
                    (max, arg) = (*v, i);
                }
                min = min.min(*v);
                sum += v;
            }
            let _ = writeln!(
                s,
                "{j:>5} {min:>12.4e} {max:>12.4e} {:>12.4e} {sum:>12.4e} {:>5} {:>5}",
                sum / c.len().max(1) as f64,
                arg / h.width().max(1),
                arg % h.width().max(1)
            );
        }
    } else if &magic == densewarp::warper::MAGIC {
        let w = load_weights(path).map_err(|e| io_err(path, e))?;
        let _ = writeln!(s, "format: DWWT v{}", densewarp::warper::FORMAT_VERSION);
        let _ = writeln!(
            s,
            "temporal_mode: {}\njoints: {}\nchannels: {}\nparameters: {}",
            w.temporal_mode,
            w.joints,
            w.channels,
            w.parameter_count()
        );
        for (i, t) in w.tensors().iter().enumerate() {
            let norm = t.values().map(|v| v * v).sum::<f64>().sqrt();
            let _ = writeln!(
                s,
                "tensor {i:>2}: {} values, dilation {}, l2 {norm:.4e}",
                t.len(),
                t.dilation
            );
        }
    } else {
        return Err(io_err(path, format!("unknown magic {magic:?}")));
    }
    Ok(s)
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Synth { cfg, dense } => cmd_synth(&load_config(&cfg, &[], None)?, dense),
        Command::Run {
            cfg,
            input,
            synth: _,
            variant,
            warpers,
            timings,
        } => {
            let extra: Vec<(&str, toml::Value)> = variant
                .map(|v| ("eval.variant", toml::Value::String(v)))
                .into_iter()
                .collect();
            match input {
                Some(dir) => {
                    let c = load_config(&cfg, &extra, Some(&dir.join("config.toml")))?;
                    cmd_run_input(&c, &dir, warpers.as_deref(), timings)
                }
                None => cmd_run_synth(&load_config(&cfg, &extra, None)?, warpers.as_deref(), timings),
            }
        }
        Command::TrainWarper { cfg } => cmd_train_warper(&load_config(&cfg, &[], None)?),
        Command::Experiment {
            name,
            cfg,
            seeds,
            strict,
            warpers,
        } => {
            let extra: Vec<(&str, toml::Value)> = seeds
                .map(|n| ("eval.seeds", toml::Value::Integer(n as i64)))
                .into_iter()
                .collect();
            cmd_experiment(name, &load_config(&cfg, &extra, None)?, strict, warpers.as_deref())
        }
        Command::Inspect { file } => {
            print!("{}", inspect_text(&file)?);
            Ok(())
        }
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: config error: threads: must be at least 1");
            return 2;
        }
        // a pool built earlier in this process keeps its size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}
