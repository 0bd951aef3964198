//! Interleaved sampling: group construction, sampling plans and the
//! sliding-window cache that emits one pose per arrival.
//!
//! Views are 0-based; frames are 1-based slot indices where frame `k` is
//! captured at `(k − 1)·δ` seconds.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::heatmap::Heatmap;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchedulerError {
    #[error("need N >= M >= 2, got N = {frames}, M = {views}")]
    TooFewFrames { frames: u32, views: usize },
    #[error("out-of-order arrival: view {view} frame {frame} is not after frame {last}")]
    OutOfOrderArrival { view: usize, frame: u32, last: u32 },
    #[error("invalid sampling plan: {0}")]
    BadPlan(String),
    #[error("arrival view {view} outside 0..{views}")]
    UnknownView { view: usize, views: usize },
}

/// One interleaved group: view `j` at frame `M(i−1)+j+1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterleavedGroup {
    /// 1-based group index.
    pub index: u32,
    /// `(view, frame)` in ascending frame order.
    pub entries: Vec<(usize, u32)>,
}

/// Splits `total_frames` into `⌊N/M⌋` interleaved groups; trailing frames are
/// left unassigned.
pub fn build_groups(total_frames: u32, views: usize) -> Result<Vec<InterleavedGroup>, SchedulerError> {
    if views < 2 || (total_frames as usize) < views {
        return Err(SchedulerError::TooFewFrames {
            frames: total_frames,
            views,
        });
    }
    let m = views as u32;
    Ok((1..=total_frames / m)
        .map(|i| InterleavedGroup {
            index: i,
            entries: (0..m).map(|j| (j as usize, m * (i - 1) + j + 1)).collect(),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplingMode {
    Uniform,
    /// Each window of `window` slots holds one sample per view at distinct,
    /// randomly chosen slots.
    NonUniform {
        window: u32,
        seed: u64,
    },
}

/// How the cameras interleave in time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub views: usize,
    /// Samples per second per camera.
    pub camera_rate: f64,
    /// Seconds between consecutive frame slots.
    pub phase_step: f64,
    pub mode: SamplingMode,
}

impl SamplingPlan {
    pub fn uniform(views: usize, camera_rate: f64) -> Self {
        Self {
            views,
            camera_rate,
            phase_step: 1.0 / (views as f64 * camera_rate),
            mode: SamplingMode::Uniform,
        }
    }

    /// Non-uniform windows on the same slot grid as the uniform plan.
    pub fn non_uniform(views: usize, camera_rate: f64, window: u32, seed: u64) -> Self {
        Self {
            mode: SamplingMode::NonUniform { window, seed },
            ..Self::uniform(views, camera_rate)
        }
    }

    pub fn validate(&self) -> Result<(), SchedulerError> {
        if self.views < 2 {
            return Err(SchedulerError::BadPlan(format!(
                "need at least 2 views, got {}",
                self.views
            )));
        }
        if !(self.camera_rate > 0.0) || !self.camera_rate.is_finite() {
            return Err(SchedulerError::BadPlan("camera_rate must be positive".into()));
        }
        let expected = 1.0 / (self.views as f64 * self.camera_rate);
        if (self.phase_step - expected).abs() > 1e-12 * expected.max(1.0) {
            return Err(SchedulerError::BadPlan(format!(
                "phase_step must be 1/(M * camera_rate) = {expected}, got {}",
                self.phase_step
            )));
        }
        if let SamplingMode::NonUniform { window, .. } = self.mode {
            if window as usize <= self.views {
                return Err(SchedulerError::BadPlan(format!(
                    "non-uniform window {window} must exceed the view count {}",
                    self.views
                )));
            }
        }
        Ok(())
    }

    /// Frame slots per sampling cycle (`M` for uniform, the window otherwise).
    pub fn cycle_slots(&self) -> u32 {
        match self.mode {
            SamplingMode::Uniform => self.views as u32,
            SamplingMode::NonUniform { window, .. } => window,
        }
    }

    pub fn slot_time(&self, frame: u32) -> f64 {
        (frame - 1) as f64 * self.phase_step
    }

    /// Number of whole slots with a timestamp strictly below `duration`.
    pub fn slots_in(&self, duration: f64) -> u32 {
        let n = (duration / self.phase_step).ceil() as u32;
        // guard against round-up when duration is an exact multiple
        if n > 0 && self.slot_time(n) >= duration {
            n - 1
        } else {
            n
        }
    }
}

/// One scheduled capture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannedSample {
    pub view: usize,
    pub frame: u32,
    pub timestamp: f64,
}

/// Captures in `[0, duration)` ordered by time.
///
/// Uniform plans sample view `j` at `t = j·δ + k·M·δ`. Non-uniform plans
/// draw `M` distinct slots per window of `x` slots from a seeded generator
/// and assign them to views in ascending order.
pub fn generate_plan_times(plan: &SamplingPlan, duration: f64) -> Result<Vec<PlannedSample>, SchedulerError> {
    plan.validate()?;
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(SchedulerError::BadPlan(format!(
            "duration must be positive, got {duration}"
        )));
    }
    let slots = plan.slots_in(duration);
    let mut out = Vec::new();
    match plan.mode {
        SamplingMode::Uniform => {
            for frame in 1..=slots {
                out.push(PlannedSample {
                    view: ((frame - 1) as usize) % plan.views,
                    frame,
                    timestamp: plan.slot_time(frame),
                });
            }
        }
        SamplingMode::NonUniform { window, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut start = 1;
            while start <= slots {
                let mut picked: Vec<u32> = sample(&mut rng, window as usize, plan.views)
                    .into_iter()
                    .map(|s| start + s as u32)
                    .collect();
                picked.sort_unstable();
                for (view, frame) in picked.into_iter().enumerate() {
                    if frame <= slots {
                        out.push(PlannedSample {
                            view,
                            frame,
                            timestamp: plan.slot_time(frame),
                        });
                    }
                }
                start += window;
            }
        }
    }
    Ok(out)
}

/// Current window contents: the latest frame from each view.
#[derive(Debug, Clone)]
pub struct WindowSnapshot {
    /// Frame of the arrival that produced this snapshot.
    pub target_frame: u32,
    pub arrival_view: usize,
    /// Indexed by view.
    pub entries: Vec<(u32, Arc<Heatmap>)>,
}

impl WindowSnapshot {
    pub fn frames(&self) -> Vec<u32> {
        self.entries.iter().map(|(f, _)| *f).collect()
    }

    pub fn heatmaps(&self) -> Vec<Heatmap> {
        self.entries.iter().map(|(_, h)| (**h).clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub evictions: u64,
}

impl CacheStats {
    pub fn hit_rate(&self) -> f64 {
        let total = self.hits + self.misses;
        if total == 0 {
            0.0
        } else {
            self.hits as f64 / total as f64
        }
    }
}

/// Single-writer sliding window over arrivals with a bounded heatmap cache.
#[derive(Debug, Clone)]
pub struct WindowState {
    views: usize,
    capacity: usize,
    /// Last `M` arrivals, oldest first.
    window: VecDeque<(usize, u32)>,
    latest: Vec<Option<u32>>,
    cache: BTreeMap<(u32, usize), Arc<Heatmap>>,
    stats: CacheStats,
    emitted_through: Option<u32>,
    emitted: u64,
}

impl WindowState {
    /// Window for `views` cameras with the default capacity of `4M` entries.
    pub fn new(views: usize) -> Self {
        Self::with_capacity(views, 4 * views)
    }

    pub fn with_capacity(views: usize, capacity: usize) -> Self {
        Self {
            views,
            capacity: capacity.max(views),
            window: VecDeque::with_capacity(views),
            latest: vec![None; views],
            cache: BTreeMap::new(),
            stats: CacheStats::default(),
            emitted_through: None,
            emitted: 0,
        }
    }

    pub fn views(&self) -> usize {
        self.views
    }
    pub fn stats(&self) -> CacheStats {
        self.stats
    }
    pub fn cache_len(&self) -> usize {
        self.cache.len()
    }
    pub fn emitted_through(&self) -> Option<u32> {
        self.emitted_through
    }
    pub fn emitted(&self) -> u64 {
        self.emitted
    }
    pub fn window(&self) -> impl Iterator<Item = &(usize, u32)> {
        self.window.iter()
    }
    pub fn is_warm(&self) -> bool {
        self.latest.iter().all(Option::is_some)
    }

    pub fn cached(&self, view: usize, frame: u32) -> Option<&Arc<Heatmap>> {
        self.cache.get(&(frame, view))
    }

    /// Applies one arrival. Returns the full window once every view has
    /// reported; earlier arrivals only warm the cache.
    pub fn slide(
        &mut self,
        view: usize,
        frame: u32,
        heatmap: Heatmap,
    ) -> Result<Option<WindowSnapshot>, SchedulerError> {
        if view >= self.views {
            return Err(SchedulerError::UnknownView {
                view,
                views: self.views,
            });
        }
        let newest_cached = self.cache.keys().filter(|(_, v)| *v == view).map(|(f, _)| *f).max();
        if let Some(last) = self.latest[view].into_iter().chain(newest_cached).max() {
            if frame <= last {
                return Err(SchedulerError::OutOfOrderArrival { view, frame, last });
            }
        }
        self.window.retain(|(v, _)| *v != view);
        self.window.push_back((view, frame));
        self.latest[view] = Some(frame);

        self.stats.misses += 1;
        self.cache.insert((frame, view), Arc::new(heatmap));
        self.evict();

        if !self.is_warm() {
            return Ok(None);
        }
        let mut entries = Vec::with_capacity(self.views);
        for v in 0..self.views {
            let f = self.latest[v].expect("warm");
            let h = self
                .cache
                .get(&(f, v))
                .cloned()
                .expect("window entries are never evicted");
            if v != view {
                self.stats.hits += 1;
            }
            entries.push((f, h));
        }
        self.emitted_through = Some(self.emitted_through.map_or(frame, |e| e.max(frame)));
        self.emitted += 1;
        Ok(Some(WindowSnapshot {
            target_frame: frame,
            arrival_view: view,
            entries,
        }))
    }

    /// Drops the oldest frames first, never a current window entry.
    fn evict(&mut self) {
        while self.cache.len() > self.capacity {
            let victim = self.cache.keys().find(|(f, v)| self.latest[*v] != Some(*f)).copied();
            match victim {
                Some(k) => {
                    self.cache.remove(&k);
                    self.stats.evictions += 1;
                }
                None => break,
            }
        }
    }
}

/// One row of the schedule dump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleRow {
    pub view: usize,
    pub frame: u32,
    pub timestamp_s: f64,
    pub cache_hit_count: u64,
}

/// Replays a plan through a fresh window (heatmaps stubbed) and records the
/// cumulative cache hits after each arrival.
pub fn simulate_schedule(plan: &SamplingPlan, duration: f64) -> Result<Vec<ScheduleRow>, SchedulerError> {
    let samples = generate_plan_times(plan, duration)?;
    let mut state = WindowState::new(plan.views);
    let mut rows = Vec::with_capacity(samples.len());
    for s in samples {
        state.slide(s.view, s.frame, Heatmap::zeros(s.view, s.frame, 0, 0, 0))?;
        rows.push(ScheduleRow {
            view: s.view,
            frame: s.frame,
            timestamp_s: s.timestamp,
            cache_hit_count: state.stats().hits,
        });
    }
    Ok(rows)
}

/// CSV with columns `view,frame,timestamp_s,cache_hit_count`.
pub fn write_schedule_csv<W: Write>(rows: &[ScheduleRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "view,frame,timestamp_s,cache_hit_count")?;
    for r in rows {
        writeln!(out, "{},{},{:.9},{}", r.view, r.frame, r.timestamp_s, r.cache_hit_count)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hm(view: usize, frame: u32) -> Heatmap {
        Heatmap::zeros(view, frame, 1, 2, 2)
    }

    #[test]
    fn groups_for_eight_frames() {
        let g = build_groups(8, 4).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].entries, vec![(0, 1), (1, 2), (2, 3), (3, 4)]);
        assert_eq!(g[1].entries, vec![(0, 5), (1, 6), (2, 7), (3, 8)]);
    }

    #[test]
    fn trailing_frames_unassigned() {
        let g = build_groups(9, 4).unwrap();
        assert_eq!(g.len(), 2);
        assert!(g.iter().flat_map(|g| &g.entries).all(|(_, f)| *f <= 8));
        assert_eq!(build_groups(4, 4).unwrap().len(), 1);
        assert!(matches!(build_groups(3, 4), Err(SchedulerError::TooFewFrames { .. })));
        assert!(build_groups(10, 1).is_err());
    }

    #[test]
    fn slide_after_warm_up() {
        let mut s = WindowState::new(4);
        for f in 1..=3 {
            assert!(s.slide(f as usize - 1, f, hm(f as usize - 1, f)).unwrap().is_none());
        }
        let w = s.slide(3, 4, hm(3, 4)).unwrap().unwrap();
        assert_eq!(w.frames(), vec![1, 2, 3, 4]);
        let hits = s.stats().hits;
        let w = s.slide(0, 5, hm(0, 5)).unwrap().unwrap();
        // indexed by view: V1 -> 5, V2 -> 2, V3 -> 3, V4 -> 4
        assert_eq!(w.frames(), vec![5, 2, 3, 4]);
        assert_eq!(
            s.window().copied().collect::<Vec<_>>(),
            vec![(1, 2), (2, 3), (3, 4), (0, 5)]
        );
        assert_eq!(s.stats().hits - hits, 3);
    }

    #[test]
    fn out_of_order_rejected() {
        let mut s = WindowState::new(4);
        for f in 1..=5u32 {
            let v = ((f - 1) % 4) as usize;
            s.slide(v, f, hm(v, f)).unwrap();
        }
        assert_eq!(
            s.slide(0, 3, hm(0, 3)).unwrap_err(),
            SchedulerError::OutOfOrderArrival {
                view: 0,
                frame: 3,
                last: 5
            }
        );
        assert!(s.slide(7, 9, hm(7, 9)).is_err());
    }

    #[test]
    fn consecutive_slides_emit_one_each() {
        let mut s = WindowState::new(4);
        for f in 1..=4u32 {
            s.slide((f - 1) as usize, f, hm((f - 1) as usize, f)).unwrap();
        }
        let before = s.emitted_through().unwrap();
        for f in 5..=8u32 {
            let v = ((f - 1) % 4) as usize;
            let w = s.slide(v, f, hm(v, f)).unwrap().unwrap();
            assert_eq!(w.target_frame, f);
        }
        assert_eq!(s.emitted_through().unwrap(), before + 4);
    }

    #[test]
    fn cache_is_bounded_and_evicts_oldest() {
        let mut s = WindowState::with_capacity(2, 3);
        for f in 1..=10u32 {
            let v = ((f - 1) % 2) as usize;
            s.slide(v, f, hm(v, f)).unwrap();
            assert!(s.cache_len() <= 3);
        }
        assert!(s.cached(0, 1).is_none());
        assert!(s.cached(1, 10).is_some());
        assert!(s.cached(0, 9).is_some());
        assert!(s.cached(1, 8).is_some());
    }

    #[test]
    fn uniform_times() {
        let plan = SamplingPlan::uniform(2, 1.0);
        let t = generate_plan_times(&plan, 2.0).unwrap();
        let ts: Vec<f64> = t.iter().map(|s| s.timestamp).collect();
        assert_eq!(ts, vec![0.0, 0.5, 1.0, 1.5]);
        assert_eq!(t.iter().map(|s| s.view).collect::<Vec<_>>(), vec![0, 1, 0, 1]);
    }

    #[test]
    fn four_views_at_12_5_hz_give_20_ms_slots() {
        let plan = SamplingPlan::uniform(4, 12.5);
        assert!((plan.phase_step - 0.020).abs() < 1e-15);
        let t = generate_plan_times(&plan, 1.0).unwrap();
        assert_eq!(t.len(), 50);
        assert!(t
            .windows(2)
            .all(|w| (w[1].timestamp - w[0].timestamp - 0.02).abs() < 1e-12));
    }

    #[test]
    fn plan_validation() {
        let mut p = SamplingPlan::uniform(4, 10.0);
        p.phase_step *= 2.0;
        assert!(matches!(p.validate(), Err(SchedulerError::BadPlan(_))));
        assert!(SamplingPlan::non_uniform(4, 10.0, 4, 1).validate().is_err());
        assert!(SamplingPlan::uniform(4, 0.0).validate().is_err());
        assert!(generate_plan_times(&SamplingPlan::uniform(4, 1.0), 0.0).is_err());
    }

    #[test]
    fn non_uniform_windows() {
        let plan = SamplingPlan::non_uniform(4, 12.5, 6, 42);
        let a = generate_plan_times(&plan, 2.0).unwrap();
        let b = generate_plan_times(&plan, 2.0).unwrap();
        assert_eq!(a, b);
        // a trailing partial window may be cut short by the duration
        for chunk in a.chunks_exact(4) {
            let w = (chunk[0].frame - 1) / 6;
            let mut seen = [false; 4];
            for s in chunk {
                assert_eq!((s.frame - 1) / 6, w);
                seen[s.view] = true;
            }
            assert!(seen.iter().all(|v| *v));
            let span = chunk.last().unwrap().timestamp - chunk[0].timestamp;
            assert!(span <= 5.0 * plan.phase_step + 1e-12);
            assert!(chunk.windows(2).all(|p| p[0].frame < p[1].frame));
        }
    }

    #[test]
    fn schedule_csv() {
        let rows = simulate_schedule(&SamplingPlan::uniform(2, 1.0), 2.0).unwrap();
        let mut buf = Vec::new();
        write_schedule_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "view,frame,timestamp_s,cache_hit_count");
        assert_eq!(lines[1], "0,1,0.000000000,0");
        assert_eq!(lines[2], "1,2,0.500000000,1");
        assert_eq!(lines[4], "1,4,1.500000000,3");
    }
}
