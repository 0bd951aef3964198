//! Per-joint multi-view triangulation: weighted DLT, Gauss-Newton refinement
//! of the reprojection error, and an epipolar-consistency diagnostic.

use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};
use thiserror::Error;

use crate::geometry::{fundamental_from_cameras, CameraView, GeometryError, MIN_BASELINE, MIN_DEPTH};

/// Lower bound applied to confidence-derived observation weights.
pub const WEIGHT_FLOOR: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TriangulationError {
    #[error("need observations from at least 2 distinct views with nonzero weight, got {0}")]
    InsufficientViews(usize),
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("observation references view {0} which is not in the rig")]
    UnknownView(usize),
    #[error("initial point is not in front of camera {0}")]
    BehindCamera(usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// One 2D measurement of a joint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub view: usize,
    pub point: Vector2<f64>,
    pub weight: f64,
}

impl Observation {
    pub fn new(view: usize, point: Vector2<f64>, weight: f64) -> Self {
        Self {
            view,
            point,
            weight: weight.clamp(0.0, 1.0),
        }
    }
}

/// Triangulated skeleton for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton3D {
    pub frame: u32,
    pub joints: Vec<Vector3<f64>>,
    /// RMS reprojection error per joint, pixels.
    pub per_joint_residual: Vec<f64>,
}

impl Skeleton3D {
    pub fn new(frame: u32, joints: Vec<Vector3<f64>>) -> Self {
        let n = joints.len();
        Self {
            frame,
            joints,
            per_joint_residual: vec![0.0; n],
        }
    }
}

fn camera<'a>(rig: &'a [CameraView], view: usize) -> Result<&'a CameraView, TriangulationError> {
    rig.iter()
        .find(|c| c.id == view)
        .ok_or(TriangulationError::UnknownView(view))
}

/// Linear triangulation from the stacked cross-product constraints
/// `q x (P X) = 0`. Each row is scaled to unit norm, then by its weight.
pub fn triangulate_dlt(obs: &[Observation], rig: &[CameraView]) -> Result<Vector3<f64>, TriangulationError> {
    let active: Vec<&Observation> = obs.iter().filter(|o| o.weight > 0.0).collect();
    let mut views: Vec<usize> = active.iter().map(|o| o.view).collect();
    views.sort_unstable();
    views.dedup();
    if views.len() < 2 {
        return Err(TriangulationError::InsufficientViews(views.len()));
    }
    let centers: Vec<Vector3<f64>> = views
        .iter()
        .map(|v| camera(rig, *v).map(|c| c.center()))
        .collect::<Result<_, _>>()?;
    let spread = centers.iter().map(|c| (c - centers[0]).norm()).fold(0.0, f64::max);
    if spread < MIN_BASELINE {
        return Err(GeometryError::CoincidentCenters {
            a: views[0],
            b: views[1],
            baseline: spread,
        }
        .into());
    }

    let mut a = DMatrix::<f64>::zeros(2 * active.len(), 4);
    for (i, o) in active.iter().enumerate() {
        if !o.point.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite.into());
        }
        let p = camera(rig, o.view)?.projection().p;
        let rows = [p.row(2) * o.point.x - p.row(0), p.row(2) * o.point.y - p.row(1)];
        for (k, row) in rows.iter().enumerate() {
            let n = row.norm();
            if n > 0.0 {
                a.row_mut(2 * i + k).copy_from(&(row * (o.weight / n)));
            }
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|x, y| svd.singular_values[*x].total_cmp(&svd.singular_values[*y]));
    let smallest = svd.singular_values[order[0]];
    let second = svd.singular_values[order[1]];
    let largest = svd.singular_values[order[order.len() - 1]];
    if second - smallest < 1e-12 * largest {
        return Err(TriangulationError::DegenerateGeometry(format!(
            "ambiguous null space (singular values {second:e}, {smallest:e})"
        )));
    }
    let x = v_t.row(order[0]);
    if x[3].abs() < 1e-12 * x.norm() {
        return Err(TriangulationError::DegenerateGeometry("solution at infinity".into()));
    }
    Ok(Vector3::new(x[0] / x[3], x[1] / x[3], x[2] / x[3]))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineOptions {
    pub max_iters: usize,
    pub tol: f64,
    pub max_halvings: usize,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self {
            max_iters: 20,
            tol: 1e-10,
            max_halvings: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineResult {
    pub point: Vector3<f64>,
    /// Weighted sum of squared reprojection errors at `point`.
    pub objective: f64,
    /// Weighted RMS reprojection error in pixels.
    pub rms_px: f64,
    pub iterations: usize,
    /// Set when a step would have crossed behind a camera and was rejected.
    pub hit_camera_plane: bool,
}

/// Weighted reprojection objective `Σ w_k ‖q_k − π_k(X)‖²`, or `None` when the
/// point is not in front of every contributing camera.
pub fn reprojection_objective(
    x: &Vector3<f64>,
    obs: &[Observation],
    rig: &[CameraView],
) -> Result<Option<f64>, TriangulationError> {
    let mut total = 0.0;
    for o in obs.iter().filter(|o| o.weight > 0.0) {
        let cam = camera(rig, o.view)?;
        if !(cam.depth(x) > MIN_DEPTH) {
            return Ok(None);
        }
        let h = cam.projection().apply(x);
        let r = o.point - Vector2::new(h.x / h.z, h.y / h.z);
        total += o.weight * r.norm_squared();
    }
    Ok(Some(total))
}

fn weight_sum(obs: &[Observation]) -> f64 {
    obs.iter().filter(|o| o.weight > 0.0).map(|o| o.weight).sum()
}

/// Gauss-Newton on the weighted reprojection objective with step halving.
pub fn refine_gauss_newton(
    x0: &Vector3<f64>,
    obs: &[Observation],
    rig: &[CameraView],
    opts: &RefineOptions,
) -> Result<RefineResult, TriangulationError> {
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(GeometryError::NonFinite.into());
    }
    for o in obs.iter().filter(|o| o.weight > 0.0) {
        if !(camera(rig, o.view)?.depth(x0) > MIN_DEPTH) {
            return Err(TriangulationError::BehindCamera(o.view));
        }
    }
    let wsum = weight_sum(obs);
    let mut x = *x0;
    let mut f = reprojection_objective(&x, obs, rig)?.expect("checked in front");
    let mut iterations = 0;
    let mut hit_plane = false;

    while iterations < opts.max_iters {
        iterations += 1;
        let mut jtj = Matrix3::<f64>::zeros();
        let mut jtr = Vector3::<f64>::zeros();
        for o in obs.iter().filter(|o| o.weight > 0.0) {
            let p = camera(rig, o.view)?.projection().p;
            let h = p * x.push(1.0);
            let (u, v) = (h.x / h.z, h.y / h.z);
            let p3 = Vector3::new(p[(2, 0)], p[(2, 1)], p[(2, 2)]);
            let ju = (Vector3::new(p[(0, 0)], p[(0, 1)], p[(0, 2)]) - p3 * u) / h.z;
            let jv = (Vector3::new(p[(1, 0)], p[(1, 1)], p[(1, 2)]) - p3 * v) / h.z;
            let (ru, rv) = (o.point.x - u, o.point.y - v);
            jtj += (ju * ju.transpose() + jv * jv.transpose()) * o.weight;
            jtr += (ju * ru + jv * rv) * o.weight;
        }
        let Some(step) = jtj.cholesky().map(|c| c.solve(&jtr)).or_else(|| jtj.lu().solve(&jtr)) else {
            break;
        };
        if !step.iter().all(|v| v.is_finite()) {
            break;
        }
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial = x + step * scale;
            match reprojection_objective(&trial, obs, rig)? {
                Some(ft) if ft <= f => {
                    accepted = Some((trial, ft));
                    break;
                }
                Some(_) => {}
                None => hit_plane = true,
            }
            scale *= 0.5;
        }
        let Some((next, fnext)) = accepted else {
            break;
        };
        let moved = (next - x).norm();
        x = next;
        f = fnext;
        if moved < opts.tol {
            break;
        }
    }
    Ok(RefineResult {
        point: x,
        objective: f,
        rms_px: if wsum > 0.0 { (f / wsum).sqrt() } else { 0.0 },
        iterations,
        hit_camera_plane: hit_plane,
    })
}

/// DLT followed by Gauss-Newton refinement.
pub fn triangulate_refined(obs: &[Observation], rig: &[CameraView]) -> Result<RefineResult, TriangulationError> {
    let x0 = triangulate_dlt(obs, rig)?;
    match refine_gauss_newton(&x0, obs, rig, &RefineOptions::default()) {
        Ok(r) => Ok(r),
        // noisy DLT solutions can land behind a camera; report the linear estimate
        Err(TriangulationError::BehindCamera(_)) => {
            let f = reprojection_objective_unchecked(&x0, obs, rig)?;
            let w = weight_sum(obs);
            Ok(RefineResult {
                point: x0,
                objective: f,
                rms_px: if w > 0.0 { (f / w).sqrt() } else { 0.0 },
                iterations: 0,
                hit_camera_plane: true,
            })
        }
        Err(e) => Err(e),
    }
}

fn reprojection_objective_unchecked(
    x: &Vector3<f64>,
    obs: &[Observation],
    rig: &[CameraView],
) -> Result<f64, TriangulationError> {
    let mut total = 0.0;
    for o in obs.iter().filter(|o| o.weight > 0.0) {
        let h = camera(rig, o.view)?.projection().apply(x);
        total += o.weight * (o.point - Vector2::new(h.x / h.z, h.y / h.z)).norm_squared();
    }
    Ok(total)
}

/// Sum over view pairs of squared epipolar residuals `(q_jᵀ F_ij q_i)²`,
/// with unit-Frobenius `F` and pairs ordered by view id.
pub fn epipolar_consistency_score(obs: &[Observation], rig: &[CameraView]) -> Result<f64, TriangulationError> {
    let mut sorted: Vec<&Observation> = obs.iter().collect();
    sorted.sort_by_key(|o| o.view);
    let mut score = 0.0;
    for i in 0..sorted.len() {
        for j in i + 1..sorted.len() {
            let (a, b) = (sorted[i], sorted[j]);
            if a.view == b.view {
                continue;
            }
            let f = fundamental_from_cameras(camera(rig, a.view)?, camera(rig, b.view)?)?;
            score += f.residual(&a.point, &b.point).powi(2);
        }
    }
    Ok(score)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::project_point;
    use approx::assert_abs_diff_eq;

    fn look_at(id: usize, center: Vector3<f64>) -> CameraView {
        let f = (-center).normalize();
        let x = f.cross(&Vector3::z()).normalize();
        let y = f.cross(&x);
        let rot = Matrix3::from_rows(&[x.transpose(), y.transpose(), f.transpose()]);
        let k = CameraView::intrinsics_matrix(800.0, 800.0, 320.0, 240.0);
        CameraView::new(id, k, rot, -(rot * center), (640, 480)).unwrap()
    }

    fn rig4() -> Vec<CameraView> {
        (0..4)
            .map(|i| {
                let t = i as f64 * std::f64::consts::FRAC_PI_2 + 0.3;
                look_at(i, Vector3::new(6.0 * t.cos(), 6.0 * t.sin(), 1.0))
            })
            .collect()
    }

    fn exact_obs(x: &Vector3<f64>, rig: &[CameraView]) -> Vec<Observation> {
        rig.iter()
            .map(|c| Observation::new(c.id, project_point(c, x).unwrap(), 1.0))
            .collect()
    }

    #[test]
    fn noiseless_dlt_is_exact() {
        let rig = rig4();
        let x = Vector3::new(0.3, -0.2, 4.1);
        // the rig looks at the origin; shift the scene so the point stays in view
        let x = x - Vector3::new(0.0, 0.0, 4.0);
        let est = triangulate_dlt(&exact_obs(&x, &rig), &rig).unwrap();
        assert!((est - x).norm() < 1e-9);
    }

    #[test]
    fn insufficient_views() {
        let rig = rig4();
        let obs = exact_obs(&Vector3::zeros(), &rig);
        assert_eq!(
            triangulate_dlt(&obs[..1], &rig),
            Err(TriangulationError::InsufficientViews(1))
        );
        let mut zeroed = obs.clone();
        for o in zeroed.iter_mut().skip(1) {
            o.weight = 0.0;
        }
        assert_eq!(
            triangulate_dlt(&zeroed, &rig),
            Err(TriangulationError::InsufficientViews(1))
        );
    }

    #[test]
    fn coincident_centers_rejected() {
        let a = look_at(0, Vector3::new(5.0, 0.0, 1.0));
        let mut b = look_at(1, Vector3::new(5.0, 0.0, 1.0));
        let rot = nalgebra::Rotation3::from_euler_angles(0.0, 0.05, 0.0);
        b.rotation = rot.matrix() * b.rotation;
        b.translation = -(b.rotation * Vector3::new(5.0, 0.0, 1.0));
        let rig = vec![a, b];
        let x = Vector3::new(0.1, 0.1, 0.1);
        let obs = exact_obs(&x, &rig);
        let err = triangulate_dlt(&obs, &rig).unwrap_err();
        assert!(matches!(
            err,
            TriangulationError::Geometry(GeometryError::CoincidentCenters { .. })
                | TriangulationError::DegenerateGeometry(_)
        ));
    }

    #[test]
    fn zero_weight_equals_removal() {
        let rig = rig4();
        let x = Vector3::new(0.2, 0.1, -0.3);
        let mut obs = exact_obs(&x, &rig);
        for (i, o) in obs.iter_mut().enumerate() {
            o.point += Vector2::new(0.3 * i as f64, -0.2);
        }
        let mut zeroed = obs.clone();
        zeroed[2].weight = 0.0;
        let removed: Vec<Observation> = obs.iter().copied().filter(|o| o.view != 2).collect();
        let a = triangulate_dlt(&zeroed, &rig).unwrap();
        let b = triangulate_dlt(&removed, &rig).unwrap();
        assert!((a - b).norm() < 1e-12);
        let ra = refine_gauss_newton(&a, &zeroed, &rig, &RefineOptions::default()).unwrap();
        let rb = refine_gauss_newton(&b, &removed, &rig, &RefineOptions::default()).unwrap();
        assert!((ra.point - rb.point).norm() < 1e-12);
    }

    #[test]
    fn gauss_newton_stationary_at_truth() {
        let rig = rig4();
        let x = Vector3::new(-0.1, 0.25, 0.4);
        let obs = exact_obs(&x, &rig);
        let r = refine_gauss_newton(&x, &obs, &rig, &RefineOptions::default()).unwrap();
        assert!(r.iterations <= 1);
        assert!(r.objective < 1e-12);
        assert!((r.point - x).norm() < 1e-12);
    }

    #[test]
    fn gauss_newton_recovers_from_offset() {
        let rig = rig4();
        let x = Vector3::new(-0.1, 0.25, 0.4);
        let obs = exact_obs(&x, &rig);
        let r = refine_gauss_newton(&(x + Vector3::repeat(0.1)), &obs, &rig, &RefineOptions::default()).unwrap();
        assert!((r.point - x).norm() < 1e-8);
    }

    #[test]
    fn refinement_never_worse_than_dlt() {
        let rig = rig4();
        let x = Vector3::new(0.05, -0.15, 0.2);
        let mut obs = exact_obs(&x, &rig);
        obs[1].point += Vector2::new(1.0, 0.0);
        let x0 = triangulate_dlt(&obs, &rig).unwrap();
        let f0 = reprojection_objective(&x0, &obs, &rig).unwrap().unwrap();
        let r = refine_gauss_newton(&x0, &obs, &rig, &RefineOptions::default()).unwrap();
        assert!(r.objective <= f0);
        assert!(r.rms_px <= (f0 / 4.0).sqrt());
    }

    #[test]
    fn behind_camera_start_rejected() {
        let rig = rig4();
        let obs = exact_obs(&Vector3::zeros(), &rig);
        let behind = rig[0].center() * 2.0;
        assert!(matches!(
            refine_gauss_newton(&behind, &obs, &rig, &RefineOptions::default()),
            Err(TriangulationError::BehindCamera(_))
        ));
    }

    #[test]
    fn epipolar_score() {
        let rig = rig4();
        let x = Vector3::new(0.1, 0.2, 0.3);
        let obs = exact_obs(&x, &rig);
        assert_abs_diff_eq!(epipolar_consistency_score(&obs, &rig).unwrap(), 0.0, epsilon = 1e-15);
        let mut shifted = obs.clone();
        shifted[1].point.x += 1.0;
        let s = epipolar_consistency_score(&shifted, &rig).unwrap();
        assert!(s > 0.0);
        let mut reversed = shifted.clone();
        reversed.reverse();
        assert_eq!(epipolar_consistency_score(&reversed, &rig).unwrap(), s);
    }
}
