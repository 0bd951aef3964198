//! Pinhole camera model and two-view epipolar geometry.
//!
//! Pixel coordinates are continuous with the origin at the center of the
//! top-left pixel; `u` grows to the right and `v` grows downward.

use nalgebra::{Matrix3, Matrix3x4, Vector2, Vector3, SVD};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum camera-frame depth accepted by [`project_point`].
pub const MIN_DEPTH: f64 = 1e-9;
/// Minimum camera-center separation for a defined fundamental matrix.
pub const MIN_BASELINE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point is behind camera {view} (depth {depth:e})")]
    PointBehindCamera { view: usize, depth: f64 },
    #[error("non-finite input")]
    NonFinite,
    #[error("cameras {a} and {b} share a center (baseline {baseline:e})")]
    CoincidentCenters { a: usize, b: usize, baseline: f64 },
    #[error("point is the epipole; epipolar line is undefined")]
    DegenerateLine,
    #[error("Sampson denominator {0:e} is too small")]
    DegenerateDenominator(f64),
    #[error("invalid camera {view}: {reason}")]
    InvalidCamera { view: usize, reason: String },
}

/// One calibrated pinhole camera. `rotation` and `translation` map world
/// coordinates into the camera frame: `X_cam = R X + t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraView {
    pub id: usize,
    pub intrinsics: Matrix3<f64>,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    /// `(width, height)` in pixels.
    pub image_size: (u32, u32),
}

impl CameraView {
    pub fn new(
        id: usize,
        intrinsics: Matrix3<f64>,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        image_size: (u32, u32),
    ) -> Result<Self, GeometryError> {
        let cam = Self {
            id,
            intrinsics,
            rotation,
            translation,
            image_size,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Builds `K` from `(fx, fy, cx, cy)` with zero skew.
    pub fn intrinsics_matrix(fx: f64, fy: f64, cx: f64, cy: f64) -> Matrix3<f64> {
        Matrix3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |reason: &str| GeometryError::InvalidCamera {
            view: self.id,
            reason: reason.to_string(),
        };
        let all_finite = self.intrinsics.iter().all(|v| v.is_finite())
            && self.rotation.iter().all(|v| v.is_finite())
            && self.translation.iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(GeometryError::NonFinite);
        }
        let ortho = self.rotation.transpose() * self.rotation - Matrix3::identity();
        if ortho.amax() >= 1e-9 {
            return Err(bad("rotation is not orthonormal"));
        }
        if (self.rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(bad("rotation determinant is not +1"));
        }
        if self.intrinsics[(0, 0)] <= 0.0 || self.intrinsics[(1, 1)] <= 0.0 {
            return Err(bad("focal lengths must be positive"));
        }
        if self.image_size.0 < 1 || self.image_size.1 < 1 {
            return Err(bad("image size must be at least 1x1"));
        }
        Ok(())
    }

    /// Camera center in world coordinates, `-Rᵀ t`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn projection(&self) -> ProjectionMatrix {
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        rt.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        ProjectionMatrix {
            p: self.intrinsics * rt,
        }
    }

    /// Depth of a world point along this camera's optical axis.
    pub fn depth(&self, point: &Vector3<f64>) -> f64 {
        (self.rotation * point + self.translation).z
    }

    pub fn width(&self) -> usize {
        self.image_size.0 as usize
    }

    pub fn height(&self) -> usize {
        self.image_size.1 as usize
    }

    /// True if `q` lies inside the pixel rectangle `[-0.5, w-0.5] x [-0.5, h-0.5]`.
    pub fn contains(&self, q: &Vector2<f64>) -> bool {
        q.x >= -0.5 && q.y >= -0.5 && q.x <= self.image_size.0 as f64 - 0.5 && q.y <= self.image_size.1 as f64 - 0.5
    }
}

/// `P = K [R | t]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionMatrix {
    pub p: Matrix3x4<f64>,
}

impl ProjectionMatrix {
    /// Ratio of smallest to largest singular value.
    pub fn conditioning(&self) -> f64 {
        let sv = self.p.svd(false, false).singular_values;
        let max = sv.max();
        if max == 0.0 {
            0.0
        } else {
            sv.min() / max
        }
    }

    pub fn is_full_rank(&self) -> bool {
        self.conditioning() > 1e-12
    }

    pub fn apply(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.p * point.push(1.0)
    }
}

/// Projects a world point into `cam`, returning pixel coordinates.
pub fn project_point(cam: &CameraView, point: &Vector3<f64>) -> Result<Vector2<f64>, GeometryError> {
    if !point.iter().all(|v| v.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    let depth = cam.depth(point);
    if !(depth > MIN_DEPTH) {
        return Err(GeometryError::PointBehindCamera { view: cam.id, depth });
    }
    let h = cam.projection().apply(point);
    Ok(Vector2::new(h.x / h.z, h.y / h.z))
}

/// Skew-symmetric cross-product matrix `[v]x`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Relative pose of `b` with respect to `a`: `X_b = R X_a + t`.
pub fn relative_pose(a: &CameraView, b: &CameraView) -> (Matrix3<f64>, Vector3<f64>) {
    let r = b.rotation * a.rotation.transpose();
    let t = b.translation - r * a.translation;
    (r, t)
}

/// Essential matrix `E = [t]x R` of the relative pose of `b` w.r.t. `a`.
pub fn essential_from_cameras(a: &CameraView, b: &CameraView) -> Matrix3<f64> {
    let (r, t) = relative_pose(a, b);
    skew(&t) * r
}

/// Fundamental matrix mapping pixels of `from_view` to epipolar lines in
/// `to_view`: `q_toᵀ F q_from = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FundamentalMatrix {
    pub f: Matrix3<f64>,
    pub from_view: usize,
    pub to_view: usize,
}

impl FundamentalMatrix {
    /// The same relation read in the opposite direction (`Fᵀ`).
    pub fn transposed(&self) -> Self {
        Self {
            f: self.f.transpose(),
            from_view: self.to_view,
            to_view: self.from_view,
        }
    }

    /// Algebraic residual `q′ᵀ F q` for `q` in `from_view` and `q′` in `to_view`.
    pub fn residual(&self, q: &Vector2<f64>, q_prime: &Vector2<f64>) -> f64 {
        q_prime.push(1.0).dot(&(self.f * q.push(1.0)))
    }

    /// Singular values sorted in descending order.
    pub fn singular_values(&self) -> [f64; 3] {
        let sv = self.f.svd(false, false).singular_values;
        let mut s = [sv[0], sv[1], sv[2]];
        s.sort_by(|a, b| b.total_cmp(a));
        s
    }

    /// Homogeneous epipoles `(e, e′)` with `F e = 0` (in `from_view`) and
    /// `Fᵀ e′ = 0` (in `to_view`), each scaled to unit norm.
    pub fn epipoles(&self) -> (Vector3<f64>, Vector3<f64>) {
        (right_null(&self.f), right_null(&self.f.transpose()))
    }
}

fn right_null(m: &Matrix3<f64>) -> Vector3<f64> {
    // For a rank-2 matrix the cross product of two independent rows spans the
    // null space; it stays accurate even when the epipole is near infinity,
    // where an SVD null vector loses several digits.
    let rows = [m.row(0).transpose(), m.row(1).transpose(), m.row(2).transpose()];
    let best = [(0, 1), (0, 2), (1, 2)]
        .iter()
        .map(|&(i, j)| rows[i].cross(&rows[j]))
        .max_by(|a, b| a.norm().total_cmp(&b.norm()))
        .expect("three row pairs");
    if best.norm() > 1e-300 {
        return best.normalize();
    }
    let svd = SVD::new(*m, false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("three singular values");
    v_t.row(idx).transpose().normalize()
}

/// Scales `m` to unit Frobenius norm with the largest-magnitude entry
/// positive. Ties keep the first entry in row-major order.
pub fn normalize_fundamental(m: &Matrix3<f64>) -> Matrix3<f64> {
    let mut out = m / m.norm();
    let mut best = out[(0, 0)];
    for r in 0..3 {
        for c in 0..3 {
            if out[(r, c)].abs() > best.abs() {
                best = out[(r, c)];
            }
        }
    }
    if best < 0.0 {
        out = -out;
    }
    out
}

/// Fundamental matrix from known calibration: `F = K_b⁻ᵀ [t]x R K_a⁻¹`.
pub fn fundamental_from_cameras(a: &CameraView, b: &CameraView) -> Result<FundamentalMatrix, GeometryError> {
    let baseline = (a.center() - b.center()).norm();
    if !(baseline >= MIN_BASELINE) {
        return Err(GeometryError::CoincidentCenters {
            a: a.id,
            b: b.id,
            baseline,
        });
    }
    let e = essential_from_cameras(a, b);
    let ka_inv = a.intrinsics.try_inverse().ok_or(GeometryError::InvalidCamera {
        view: a.id,
        reason: "singular intrinsics".into(),
    })?;
    let kb_inv = b.intrinsics.try_inverse().ok_or(GeometryError::InvalidCamera {
        view: b.id,
        reason: "singular intrinsics".into(),
    })?;
    let f = kb_inv.transpose() * e * ka_inv;
    Ok(FundamentalMatrix {
        f: normalize_fundamental(&f),
        from_view: a.id,
        to_view: b.id,
    })
}

/// Line `a u + b v + c = 0` with `a² + b² = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpipolarLine {
    pub coeffs: Vector3<f64>,
}

impl EpipolarLine {
    /// Normalizes homogeneous line coordinates.
    pub fn from_homogeneous(l: Vector3<f64>) -> Result<Self, GeometryError> {
        let n = l.x.hypot(l.y);
        if !n.is_finite() || !l.z.is_finite() {
            return Err(GeometryError::NonFinite);
        }
        if n < 1e-12 {
            return Err(GeometryError::DegenerateLine);
        }
        Ok(Self { coeffs: l / n })
    }

    /// Signed perpendicular distance from `q` to the line in pixels.
    pub fn signed_distance(&self, q: &Vector2<f64>) -> f64 {
        self.coeffs.x * q.x + self.coeffs.y * q.y + self.coeffs.z
    }

    pub fn distance(&self, q: &Vector2<f64>) -> f64 {
        self.signed_distance(q).abs()
    }

    /// Unit direction along the line.
    pub fn direction(&self) -> Vector2<f64> {
        Vector2::new(-self.coeffs.y, self.coeffs.x)
    }

    /// Point on the line closest to the origin.
    pub fn foot(&self) -> Vector2<f64> {
        Vector2::new(-self.coeffs.x * self.coeffs.z, -self.coeffs.y * self.coeffs.z)
    }

    /// Clips the line to the axis-aligned box `[x0, x1] x [y0, y1]`. Returns the
    /// segment endpoints, or `None` when the line misses the box.
    pub fn clip_to_rect(&self, x0: f64, y0: f64, x1: f64, y1: f64) -> Option<(Vector2<f64>, Vector2<f64>)> {
        let p = self.foot();
        let d = self.direction();
        let mut t_lo = f64::NEG_INFINITY;
        let mut t_hi = f64::INFINITY;
        for (pos, dir, lo, hi) in [(p.x, d.x, x0, x1), (p.y, d.y, y0, y1)] {
            if dir.abs() < 1e-15 {
                if pos < lo || pos > hi {
                    return None;
                }
            } else {
                let a = (lo - pos) / dir;
                let b = (hi - pos) / dir;
                t_lo = t_lo.max(a.min(b));
                t_hi = t_hi.min(a.max(b));
            }
        }
        if t_lo > t_hi {
            return None;
        }
        Some((p + d * t_lo, p + d * t_hi))
    }
}

/// Epipolar line in `f.to_view` of pixel `q` in `f.from_view`.
pub fn epipolar_line(f: &FundamentalMatrix, q: &Vector2<f64>) -> Result<EpipolarLine, GeometryError> {
    if !q.iter().all(|v| v.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    EpipolarLine::from_homogeneous(f.f * q.push(1.0))
}

/// First-order (Sampson-style) correspondence distance, signed:
/// `q′ᵀFq / ((Fq)₁² + (Fq)₂² + (Fᵀq′)₁² + (Fᵀq′)₂²)`.
pub fn sampson_distance(f: &FundamentalMatrix, q: &Vector2<f64>, q_prime: &Vector2<f64>) -> Result<f64, GeometryError> {
    if !(q.iter().chain(q_prime.iter()).all(|v| v.is_finite())) {
        return Err(GeometryError::NonFinite);
    }
    let qh = q.push(1.0);
    let qph = q_prime.push(1.0);
    let fq = f.f * qh;
    let ftq = f.f.transpose() * qph;
    let denom = fq.x * fq.x + fq.y * fq.y + ftq.x * ftq.x + ftq.y * ftq.y;
    if !(denom >= 1e-15) {
        return Err(GeometryError::DegenerateDenominator(denom));
    }
    Ok(qph.dot(&fq) / denom)
}

/// Minimum total squared reprojection distance of a two-view correspondence,
/// found by refining the linear triangulation of the pair.
pub fn reprojection_distance(
    a: &CameraView,
    b: &CameraView,
    q: &Vector2<f64>,
    q_prime: &Vector2<f64>,
) -> Result<f64, crate::triangulate::TriangulationError> {
    use crate::triangulate::{refine_gauss_newton, triangulate_dlt, Observation, RefineOptions};
    let obs = [Observation::new(0, *q, 1.0), Observation::new(1, *q_prime, 1.0)];
    let mut a = a.clone();
    let mut b = b.clone();
    a.id = 0;
    b.id = 1;
    let rig = [a, b];
    let x0 = triangulate_dlt(&obs, &rig)?;
    let refined = refine_gauss_newton(&x0, &obs, &rig, &RefineOptions::default())?;
    Ok(refined.objective.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{Rotation3, Unit};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn canonical() -> CameraView {
        CameraView::new(
            0,
            Matrix3::identity(),
            Matrix3::identity(),
            Vector3::zeros(),
            (640, 480),
        )
        .unwrap()
    }

    /// Camera on a circle of radius `r` at angle `theta`, looking at the origin.
    fn circle_cam(id: usize, theta: f64, r: f64) -> CameraView {
        let c = Vector3::new(r * theta.cos(), r * theta.sin(), 0.3);
        let f = (-c).normalize();
        let up = Vector3::z();
        let x = f.cross(&up).normalize();
        let y = f.cross(&x);
        let rot = Matrix3::from_rows(&[x.transpose(), y.transpose(), f.transpose()]);
        let k = CameraView::intrinsics_matrix(500.0, 510.0, 320.0, 240.0);
        CameraView::new(id, k, rot, -(rot * c), (640, 480)).unwrap()
    }

    #[test]
    fn canonical_projection() {
        let cam = canonical();
        let q = project_point(&cam, &Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(q, Vector2::new(0.0, 0.0));
        let q = project_point(&cam, &Vector3::new(1.0, 2.0, 2.0)).unwrap();
        assert_eq!(q, Vector2::new(0.5, 1.0));
    }

    #[test]
    fn projection_errors() {
        let cam = canonical();
        assert!(matches!(
            project_point(&cam, &Vector3::new(0.0, 0.0, -1.0)),
            Err(GeometryError::PointBehindCamera { .. })
        ));
        assert!(matches!(
            project_point(&cam, &Vector3::new(0.0, 0.0, 0.0)),
            Err(GeometryError::PointBehindCamera { .. })
        ));
        assert_eq!(
            project_point(&cam, &Vector3::new(f64::NAN, 0.0, 1.0)),
            Err(GeometryError::NonFinite)
        );
    }

    #[test]
    fn camera_validation() {
        let k = Matrix3::identity();
        let skewed = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(CameraView::new(0, k, skewed, Vector3::zeros(), (4, 4)).is_err());
        let reflect = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(CameraView::new(0, k, reflect, Vector3::zeros(), (4, 4)).is_err());
        let neg_f = CameraView::intrinsics_matrix(-1.0, 1.0, 0.0, 0.0);
        assert!(CameraView::new(0, neg_f, Matrix3::identity(), Vector3::zeros(), (4, 4)).is_err());
        assert!(CameraView::new(0, k, Matrix3::identity(), Vector3::zeros(), (0, 4)).is_err());
    }

    #[test]
    fn projection_matrix_rank() {
        assert!(circle_cam(0, 0.4, 4.0).projection().is_full_rank());
    }

    #[test]
    fn pure_translation_fundamental() {
        let a = canonical();
        // X_b = X_a + (1, 0, 0): camera b center at (-1, 0, 0).
        let b = CameraView::new(
            1,
            Matrix3::identity(),
            Matrix3::identity(),
            Vector3::new(1.0, 0.0, 0.0),
            (640, 480),
        )
        .unwrap();
        let f = fundamental_from_cameras(&a, &b).unwrap();
        let expected = normalize_fundamental(&Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0));
        assert_abs_diff_eq!(f.f, expected, epsilon = 1e-15);
        // proportional to [t]x, sign fixed by the first max-magnitude entry
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(
            f.f,
            Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, s, 0.0, -s, 0.0),
            epsilon = 1e-15
        );

        let line = epipolar_line(&f, &Vector2::new(3.0, 5.0)).unwrap();
        let c = line.coeffs / line.coeffs.y;
        assert_abs_diff_eq!(c, Vector3::new(0.0, 1.0, -5.0), epsilon = 1e-12);
    }

    #[test]
    fn coincident_centers_rejected() {
        let a = circle_cam(0, 0.0, 4.0);
        let mut b = a.clone();
        b.id = 1;
        let rot = Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::new(0.0, 1.0, 0.0)), 0.2);
        b.rotation = rot.matrix() * a.rotation;
        b.translation = -(b.rotation * a.center());
        assert!(matches!(
            fundamental_from_cameras(&a, &b),
            Err(GeometryError::CoincidentCenters { .. })
        ));
    }

    #[test]
    fn circle_rig_constraint_rank_and_epipole() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = circle_cam(0, 0.0, 4.0);
        let b = circle_cam(1, 1.2, 4.0);
        let f = fundamental_from_cameras(&a, &b).unwrap();
        assert_abs_diff_eq!(f.f.norm(), 1.0, epsilon = 1e-14);
        let s = f.singular_values();
        assert!(s[2] < 1e-9 * s[0]);

        let mut max_res: f64 = 0.0;
        for _ in 0..100 {
            let x = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let qa = project_point(&a, &x).unwrap();
            let qb = project_point(&b, &x).unwrap();
            max_res = max_res.max(f.residual(&qa, &qb).abs());
            let line = epipolar_line(&f, &qa).unwrap();
            assert!(line.distance(&qb) < 1e-6);
            assert!(sampson_distance(&f, &qa, &qb).unwrap().abs() < 1e-9);
            // symmetric direction
            let back = epipolar_line(&f.transposed(), &qb).unwrap();
            assert!(back.distance(&qa) < 1e-6);
        }
        assert!(max_res < 1e-9, "max residual {max_res:e}");

        // epipole in view a = projection of b's center
        let (e, e_prime) = f.epipoles();
        let direct = project_point(&a, &b.center());
        let direct_prime = project_point(&b, &a.center());
        // with this geometry the centers may be behind each other; compare homogeneous directions
        let ha = a.projection().apply(&b.center());
        let hb = b.projection().apply(&a.center());
        assert!(e.cross(&ha.normalize()).norm() < 1e-9);
        assert!(e_prime.cross(&hb.normalize()).norm() < 1e-9);
        if let Ok(p) = direct {
            assert_abs_diff_eq!(Vector2::new(e.x / e.z, e.y / e.z), p, epsilon = 1e-6);
        }
        if let Ok(p) = direct_prime {
            assert_abs_diff_eq!(
                Vector2::new(e_prime.x / e_prime.z, e_prime.y / e_prime.z),
                p,
                epsilon = 1e-6
            );
        }
    }

    #[test]
    fn epipole_line_is_degenerate() {
        // forward translation: epipole at the principal point (0, 0)
        let a = canonical();
        let b = CameraView::new(
            1,
            Matrix3::identity(),
            Matrix3::identity(),
            Vector3::new(0.0, 0.0, 1.0),
            (640, 480),
        )
        .unwrap();
        let f = fundamental_from_cameras(&a, &b).unwrap();
        assert_eq!(
            epipolar_line(&f, &Vector2::new(0.0, 0.0)),
            Err(GeometryError::DegenerateLine)
        );
        assert!(epipolar_line(&f, &Vector2::new(1.0, 0.0)).is_ok());
    }

    #[test]
    fn sampson_hand_evaluation() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let f = FundamentalMatrix {
            f: Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, s, 0.0, -s, 0.0),
            from_view: 0,
            to_view: 1,
        };
        // Fq = (0, s, 0); q′ᵀFq = s; Fᵀq′ = (0, -s, s) -> denominator s² + s² = 1
        let d = sampson_distance(&f, &Vector2::new(0.0, 0.0), &Vector2::new(0.0, 1.0)).unwrap();
        assert_abs_diff_eq!(d, s, epsilon = 1e-15);
        // exact correspondence on the horizontal line
        let d = sampson_distance(&f, &Vector2::new(4.0, 2.0), &Vector2::new(-7.0, 2.0)).unwrap();
        assert_abs_diff_eq!(d, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn sampson_sign_follows_perturbation() {
        let a = circle_cam(0, 0.0, 4.0);
        let b = circle_cam(1, 1.0, 4.0);
        let f = fundamental_from_cameras(&a, &b).unwrap();
        let x = Vector3::new(0.2, -0.1, 0.3);
        let qa = project_point(&a, &x).unwrap();
        let qb = project_point(&b, &x).unwrap();
        let line = epipolar_line(&f, &qa).unwrap();
        let normal = Vector2::new(line.coeffs.x, line.coeffs.y);
        let plus = sampson_distance(&f, &qa, &(qb + normal)).unwrap();
        let minus = sampson_distance(&f, &qa, &(qb - normal)).unwrap();
        assert!(plus * minus < 0.0);
        // direct evaluation of the same formula
        let fq = f.f * qa.push(1.0);
        let ftq = f.f.transpose() * (qb + normal).push(1.0);
        let direct = (qb + normal).push(1.0).dot(&fq) / (fq.x.powi(2) + fq.y.powi(2) + ftq.x.powi(2) + ftq.y.powi(2));
        assert_abs_diff_eq!(plus, direct, epsilon = 1e-15);
    }

    #[test]
    fn sampson_degenerate_denominator() {
        let f = FundamentalMatrix {
            f: Matrix3::zeros(),
            from_view: 0,
            to_view: 1,
        };
        assert!(matches!(
            sampson_distance(&f, &Vector2::zeros(), &Vector2::zeros()),
            Err(GeometryError::DegenerateDenominator(_))
        ));
    }

    #[test]
    fn line_clipping() {
        let line = EpipolarLine::from_homogeneous(Vector3::new(0.0, 1.0, -5.0)).unwrap();
        let (p, q) = line.clip_to_rect(0.0, 0.0, 15.0, 15.0).unwrap();
        assert_abs_diff_eq!(p.y, 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(q.y, 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!((p - q).norm(), 15.0, epsilon = 1e-12);
        assert!(line.clip_to_rect(0.0, 6.0, 15.0, 15.0).is_none());
        let diag = EpipolarLine::from_homogeneous(Vector3::new(1.0, -1.0, 0.0)).unwrap();
        let (p, q) = diag.clip_to_rect(0.0, 0.0, 10.0, 10.0).unwrap();
        assert_abs_diff_eq!((p - q).norm(), 200f64.sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn two_view_reprojection_distance() {
        let a = circle_cam(0, 0.0, 4.0);
        let b = circle_cam(1, 1.4, 4.0);
        let x = Vector3::new(0.1, 0.2, -0.1);
        let qa = project_point(&a, &x).unwrap();
        let qb = project_point(&b, &x).unwrap();
        assert!(reprojection_distance(&a, &b, &qa, &qb).unwrap() < 1e-8);
        let d = reprojection_distance(&a, &b, &qa, &(qb + Vector2::new(0.0, 2.0))).unwrap();
        assert!(d > 0.1 && d <= 2.0 + 1e-9);
    }
}
