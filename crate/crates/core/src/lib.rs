//! Sparse interleaved multi-view 3D pose estimation.
//!
//! Cameras sample one at a time in a staggered cycle, so each frame carries a
//! real observation from exactly one view. The pipeline fills the missing
//! views by replicating each view's last heatmap, corrects the replicas with
//! cross-view epipolar fusion, warps them toward the target frame with a small
//! deformable network, and triangulates the decoded peaks.
//!
//! Module map:
//!
//! - [`geometry`]: pinhole cameras, fundamental matrices, epipolar lines.
//! - [`heatmap`]: per-joint heatmaps, Gaussian rendering, peak decoding, the
//!   `DWHM` file format and group replication.
//! - [`fusion`]: epipolar max-along-line fusion of replicated heatmaps.
//! - [`warper`]: difference maps, dilated offset heads, deformable warping and
//!   a gradient-checked SGD trainer.
//! - [`triangulate`]: DLT and Gauss-Newton refinement.
//! - [`scheduler`]: interleaved groups, sampling plans, sliding window cache.
//! - [`synth`]: synthetic motion, camera rigs and sampled heatmap streams.
//! - [`pipeline`]: the per-window fuse/warp/triangulate pass.
//! - [`eval`]: MPJPE / P-MPJPE and the experiment runners.
//! - [`config`]: the serializable run configuration.

pub mod config;
pub mod eval;
pub mod fusion;
pub mod geometry;
pub mod heatmap;
pub mod pipeline;
pub mod scheduler;
pub mod synth;
pub mod triangulate;
pub mod warper;

pub use geometry::{CameraView, EpipolarLine, FundamentalMatrix, GeometryError, ProjectionMatrix};
pub use heatmap::{Heatmap, HeatmapError, Keypoint2D, ReplicatedGrid};
