//! Infinite 3D lines in Plücker and orthonormal form, rigid frame transforms,
//! two-view triangulation and line-to-line error metrics.
//!
//! Conventions used throughout the crate:
//!
//! * A Plücker line is `(n, d)` with `n = P × d` for any point `P` on the line,
//!   so `n` is the normal of the plane through the line and the frame origin.
//! * A [`CameraPose`] stores `R^w_b` and `p^w_b` (body expressed in world) plus
//!   the fixed body←camera extrinsic.
//! * Rotations are perturbed on the right: `R ← R · Exp(δθ)`.

use nalgebra::{Matrix3, Matrix6x4, Rotation3, Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;

/// Tolerance of the Klein quadric check, relative to `‖n‖‖d‖`.
pub const KLEIN_TOLERANCE: f64 = 1e-9;
/// Sine of the angle between back-projection planes below which two views
/// cannot triangulate a line.
pub const DEGENERATE_SINE: f64 = 1e-3;
const TINY: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    World,
    Camera,
    Body,
}

/// Homogeneous 6-vector line `(n, d)` expressed in `frame`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PluckerLine {
    pub n: Vec3,
    pub d: Vec3,
    pub frame: Frame,
}

impl PluckerLine {
    /// Builds a line from raw vectors, checking the direction and the Klein constraint.
    pub fn new(n: Vec3, d: Vec3, frame: Frame) -> Result<Self> {
        let line = Self { n, d, frame };
        if d.norm() <= TINY {
            return Err(Error::LineAtInfinity);
        }
        if line.klein_residual() > KLEIN_TOLERANCE {
            return Err(Error::DegenerateInput("Plücker vector violates the Klein constraint"));
        }
        Ok(line)
    }

    /// `|n·d| / (‖n‖‖d‖)`, zero for lines through the origin.
    pub fn klein_residual(&self) -> f64 {
        let scale = self.n.norm() * self.d.norm();
        if scale == 0.0 {
            0.0
        } else {
            self.n.dot(&self.d).abs() / scale
        }
    }

    /// Canonical representative with `‖(n, d)‖ = 1`.
    pub fn normalized(&self) -> Self {
        let s = (self.n.norm_squared() + self.d.norm_squared()).sqrt();
        Self { n: self.n / s, d: self.d / s, frame: self.frame }
    }

    pub fn unit_direction(&self) -> Vec3 {
        self.d.normalize()
    }

    /// Foot of the perpendicular from the frame origin.
    pub fn closest_point_to_origin(&self) -> Vec3 {
        self.d.cross(&self.n) / self.d.norm_squared()
    }

    /// Distance from the frame origin to the line.
    pub fn distance_to_origin(&self) -> f64 {
        self.n.norm() / self.d.norm()
    }

    pub fn distance_to_point(&self, point: &Vec3) -> f64 {
        (point.cross(&self.d) - self.n).norm() / self.d.norm()
    }

    /// Re-expresses the line in a frame whose pose in the current frame is
    /// `(rotation, translation)`, i.e. `X_new = rotationᵀ (X_old − translation)`.
    pub fn transformed(&self, rotation: &Rotation3<f64>, translation: &Vec3, target: Frame) -> Self {
        let rt = rotation.inverse();
        Self {
            n: rt * (self.n + self.d.cross(translation)),
            d: rt * self.d,
            frame: target,
        }
    }
}

/// Line through two points, in the world frame.
pub fn plucker_from_points(p1: &Vec3, p2: &Vec3) -> Result<PluckerLine> {
    let d = p2 - p1;
    if d.norm() <= TINY {
        return Err(Error::DegenerateInput("coincident points"));
    }
    Ok(PluckerLine { n: p1.cross(p2), d, frame: Frame::World })
}

/// Minimal 4-DoF line: `U ∈ SO(3)` and the angle `phi` with `(w1, w2) = (cos phi, sin phi)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrthonormalLine {
    pub u: Rotation3<f64>,
    pub phi: f64,
    pub frame: Frame,
}

impl OrthonormalLine {
    pub fn w(&self) -> (f64, f64) {
        (self.phi.cos(), self.phi.sin())
    }

    /// `(n, d) = (w1 u1, w2 u2)` without the zero-direction check.
    pub fn plucker_vectors(&self) -> (Vec3, Vec3) {
        let (w1, w2) = self.w();
        let m = self.u.matrix();
        (m.column(0) * w1, m.column(1) * w2)
    }

    /// `∂L/∂δo`: derivative of `(n, d)` with respect to the update `(δψ, δφ)`
    /// applied through [`orthonormal_update`].
    pub fn plucker_jacobian(&self) -> Matrix6x4<f64> {
        let (w1, w2) = self.w();
        let m = self.u.matrix();
        let (u1, u2, u3) = (m.column(0).into_owned(), m.column(1).into_owned(), m.column(2).into_owned());
        let mut j = Matrix6x4::zeros();
        // n = w1 u1
        j.fixed_view_mut::<3, 1>(0, 1).copy_from(&(-w1 * u3));
        j.fixed_view_mut::<3, 1>(0, 2).copy_from(&(w1 * u2));
        j.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-w2 * u1));
        // d = w2 u2
        j.fixed_view_mut::<3, 1>(3, 0).copy_from(&(w2 * u3));
        j.fixed_view_mut::<3, 1>(3, 2).copy_from(&(-w2 * u1));
        j.fixed_view_mut::<3, 1>(3, 3).copy_from(&(w1 * u2));
        j
    }
}

pub fn to_orthonormal(line: &PluckerLine) -> Result<OrthonormalLine> {
    let n_norm = line.n.norm();
    let d_norm = line.d.norm();
    if n_norm <= TINY {
        return Err(Error::DegenerateInput("line passes through the origin"));
    }
    if d_norm <= TINY {
        return Err(Error::LineAtInfinity);
    }
    let u1 = line.n / n_norm;
    let u2 = line.d / d_norm;
    let u3 = u1.cross(&u2).normalize();
    // Re-orthogonalize u2 so U is a rotation to machine precision even when the
    // input only satisfies the Klein constraint approximately.
    let u2 = u3.cross(&u1);
    let u = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[u1, u2, u3]));
    Ok(OrthonormalLine { u, phi: d_norm.atan2(n_norm), frame: line.frame })
}

/// Unit-magnitude Plücker line of an orthonormal line.
pub fn to_plucker(line: &OrthonormalLine) -> Result<PluckerLine> {
    let (n, d) = line.plucker_vectors();
    if d.norm() <= TINY {
        return Err(Error::LineAtInfinity);
    }
    Ok(PluckerLine { n, d, frame: line.frame })
}

/// `U ← U · Exp(δψ)`, `phi ← phi + δφ`.
pub fn orthonormal_update(line: &OrthonormalLine, delta: &Vector4<f64>) -> OrthonormalLine {
    let dpsi = Vec3::new(delta[0], delta[1], delta[2]);
    let mut u = line.u * Rotation3::new(dpsi);
    u.renormalize();
    OrthonormalLine { u, phi: line.phi + delta[3], frame: line.frame }
}

/// Fixed body←camera transform: camera axes and origin expressed in the body frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Extrinsic {
    pub rotation: Rotation3<f64>,
    pub translation: Vec3,
}

impl Default for Extrinsic {
    fn default() -> Self {
        Self { rotation: Rotation3::identity(), translation: Vec3::zeros() }
    }
}

/// Body pose in the world (`R^w_b`, `p^w_b`) with a fixed camera extrinsic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub rotation: Rotation3<f64>,
    pub position: Vec3,
    #[serde(default)]
    pub extrinsic: Extrinsic,
}

impl CameraPose {
    pub fn new(rotation: Rotation3<f64>, position: Vec3) -> Self {
        Self { rotation, position, extrinsic: Extrinsic::default() }
    }

    pub fn identity() -> Self {
        Self::new(Rotation3::identity(), Vec3::zeros())
    }

    pub fn with_extrinsic(mut self, extrinsic: Extrinsic) -> Self {
        self.extrinsic = extrinsic;
        self
    }

    /// World←camera rotation.
    pub fn camera_rotation(&self) -> Rotation3<f64> {
        self.rotation * self.extrinsic.rotation
    }

    /// Camera optical center in the world.
    pub fn camera_center(&self) -> Vec3 {
        self.position + self.rotation * self.extrinsic.translation
    }

    pub fn world_to_camera(&self, point: &Vec3) -> Vec3 {
        self.camera_rotation().inverse() * (point - self.camera_center())
    }

    /// `p ← p + δp`, `R ← R · Exp(δθ)`.
    pub fn retract(&self, delta_p: &Vec3, delta_theta: &Vec3) -> Self {
        let mut rotation = self.rotation * Rotation3::new(*delta_theta);
        rotation.renormalize();
        Self { rotation, position: self.position + delta_p, extrinsic: self.extrinsic }
    }
}

/// World line to camera line: world → body with the pose, body → camera with
/// the inverse extrinsic.
pub fn transform_line(line: &PluckerLine, pose: &CameraPose) -> Result<PluckerLine> {
    if line.frame != Frame::World {
        return Err(Error::FrameMismatch { expected: Frame::World, actual: line.frame });
    }
    let body = line.transformed(&pose.rotation, &pose.position, Frame::Body);
    Ok(body.transformed(&pose.extrinsic.rotation, &pose.extrinsic.translation, Frame::Camera))
}

/// Observed 2D segment on the normalized image plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment2D {
    pub id: u64,
    pub p_s: Vec2,
    pub p_e: Vec2,
}

impl Segment2D {
    pub fn new(id: u64, p_s: Vec2, p_e: Vec2) -> Self {
        Self { id, p_s, p_e }
    }

    pub fn homogeneous_start(&self) -> Vec3 {
        self.p_s.push(1.0)
    }

    pub fn homogeneous_end(&self) -> Vec3 {
        self.p_e.push(1.0)
    }

    pub fn length(&self) -> f64 {
        (self.p_e - self.p_s).norm()
    }

    pub fn midpoint(&self) -> Vec2 {
        (self.p_s + self.p_e) * 0.5
    }

    /// Homogeneous image line through both endpoints.
    pub fn line(&self) -> Vec3 {
        self.homogeneous_start().cross(&self.homogeneous_end())
    }
}

pub type LineObservation = Segment2D;

/// Plane through the camera center and an observed segment, as `(m, e)` with
/// `m·X + e = 0` in world coordinates.
pub fn back_projection_plane(obs: &LineObservation, pose: &CameraPose) -> (Vec3, f64) {
    let m = pose.camera_rotation() * obs.line();
    let e = -m.dot(&pose.camera_center());
    (m, e)
}

/// Intersects the back-projection planes of two observations of one track.
pub fn triangulate_line(
    obs1: &LineObservation,
    pose1: &CameraPose,
    obs2: &LineObservation,
    pose2: &CameraPose,
) -> Result<PluckerLine> {
    if obs1.id != obs2.id {
        return Err(Error::InconsistentIds(format!(
            "triangulating segments of different tracks ({} and {})",
            obs1.id, obs2.id
        )));
    }
    if (pose1.camera_center() - pose2.camera_center()).norm() <= TINY {
        return Err(Error::DegenerateTriangulation { sine: 0.0 });
    }
    let (m1, e1) = back_projection_plane(obs1, pose1);
    let (m2, e2) = back_projection_plane(obs2, pose2);
    let d = m1.cross(&m2);
    let sine = d.norm() / (m1.norm() * m2.norm());
    if !(sine >= DEGENERATE_SINE) {
        return Err(Error::DegenerateTriangulation { sine });
    }
    let n = m2 * e1 - m1 * e2;
    Ok(PluckerLine { n, d, frame: Frame::World }.normalized())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineMetrics {
    /// Angle between directions folded into `[0, π/2]`, radians.
    pub direction_error: f64,
    /// Distance between the closest points of the two infinite lines, meters.
    pub orthogonal_distance_error: f64,
}

pub fn line_error(est: &PluckerLine, gt: &PluckerLine) -> LineMetrics {
    let a = est.unit_direction();
    let b = gt.unit_direction();
    let cross = a.cross(&b);
    let sine = cross.norm();
    let cosine = a.dot(&b).abs();
    let direction_error = sine.atan2(cosine);

    let pa = est.closest_point_to_origin();
    let pb = gt.closest_point_to_origin();
    let orthogonal_distance_error = if sine < 1e-9 {
        (pb - pa).cross(&a).norm()
    } else {
        (pb - pa).dot(&cross).abs() / sine
    };
    LineMetrics { direction_error, orthogonal_distance_error }
}

pub fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0)
}
