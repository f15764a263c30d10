//! Line re-projection and vanishing-point measurement models with analytic
//! Jacobians, plus the robust losses attached to them.
//!
//! Both models observe a world line `o` (orthonormal form) from a body pose
//! `x = (p, θ)`. Jacobians are returned with respect to
//!
//! * `δx = (δp, δθ)` of the observing pose (`p ← p + δp`, `R ← R Exp(δθ)`),
//! * `δo` of the world line (see [`orthonormal_update`](crate::geometry::orthonormal_update)),
//! * `δo_c` of the same line re-parameterized in the observing camera frame.
//!   This local chart is the one in which the structural zeros of the
//!   per-observation information matrix appear.

use nalgebra::{Matrix2x3, Matrix2x4, Matrix2x6, Matrix3, Matrix3x6, Matrix6, Matrix6x4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{skew, to_orthonormal, CameraPose, Frame, OrthonormalLine, PluckerLine, Segment2D, Vec2, Vec3};

/// Threshold on `|v3| / ‖v‖` below which a projected vanishing point is at infinity.
pub const VP_INFINITY_EPS: f64 = 1e-6;
const LINE_INFINITY_EPS: f64 = 1e-12;

/// Pinhole intrinsics. The default is the normalized plane (`K = I`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Default for Intrinsics {
    fn default() -> Self {
        Self { fx: 1.0, fy: 1.0, cx: 0.0, cy: 0.0 }
    }
}

impl Intrinsics {
    pub fn point_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// `K' = fx·fy·K⁻ᵀ`, the line projection matrix.
    pub fn line_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.fy,
            0.0,
            0.0,
            0.0,
            self.fx,
            0.0,
            -self.fy * self.cx,
            -self.fx * self.cy,
            self.fx * self.fy,
        )
    }
}

/// Residual and Jacobians of one line observation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineResidualEval {
    pub r: Vec2,
    pub j_pose: Matrix2x6<f64>,
    pub j_line: Matrix2x4<f64>,
    pub j_line_local: Matrix2x4<f64>,
}

/// Residual and Jacobians of one vanishing-point observation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VpResidualEval {
    pub r: Vec2,
    pub j_pose: Matrix2x6<f64>,
    pub j_line: Matrix2x4<f64>,
    pub j_line_local: Matrix2x4<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Huber,
    Arctan,
    /// Plain squared norm.
    Quadratic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustLoss {
    pub kind: LossKind,
    pub scale: f64,
}

impl RobustLoss {
    pub fn huber(delta: f64) -> Self {
        Self { kind: LossKind::Huber, scale: delta }
    }

    pub fn arctan(a: f64) -> Self {
        Self { kind: LossKind::Arctan, scale: a }
    }

    pub fn quadratic() -> Self {
        Self { kind: LossKind::Quadratic, scale: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale > 0.0 && self.scale.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("loss scale must be positive, got {}", self.scale)))
        }
    }
}

/// `(ρ(s), dρ/ds)` at squared norm `s`.
pub fn robust_weight(loss: &RobustLoss, squared_norm: f64) -> (f64, f64) {
    let s = squared_norm;
    match loss.kind {
        LossKind::Quadratic => (s, 1.0),
        LossKind::Huber => {
            let delta = loss.scale;
            if s <= delta * delta {
                (s, 1.0)
            } else {
                let root = s.sqrt();
                (2.0 * delta * root - delta * delta, delta / root)
            }
        }
        LossKind::Arctan => {
            let a2 = loss.scale * loss.scale;
            let x = s / a2;
            (a2 * x.atan(), 1.0 / (1.0 + x * x))
        }
    }
}

/// Re-projected image line `l = K' n^c`.
pub fn project_line(line_c: &PluckerLine, k: &Intrinsics) -> Vec3 {
    k.line_matrix() * line_c.n
}

/// Signed distances of both endpoints to the image line `l`.
pub fn line_residual(l: &Vec3, p_s: &Vec2, p_e: &Vec2) -> Result<Vec2> {
    let l_d = l[0].hypot(l[1]);
    if !(l_d > LINE_INFINITY_EPS) {
        return Err(Error::DegenerateLine { l_d });
    }
    Ok(Vec2::new(p_s.push(1.0).dot(l) / l_d, p_e.push(1.0).dot(l) / l_d))
}

/// `∂r_l/∂l`.
pub fn line_residual_derivative(l: &Vec3, p_s: &Vec2, p_e: &Vec2) -> Matrix2x3<f64> {
    let l_d = l[0].hypot(l[1]);
    let l_d3 = l_d * l_d * l_d;
    let mut out = Matrix2x3::zeros();
    for (row, p) in [p_s, p_e].into_iter().enumerate() {
        let dot = p.push(1.0).dot(l);
        out[(row, 0)] = -l[0] * dot / l_d3 + p[0] / l_d;
        out[(row, 1)] = -l[1] * dot / l_d3 + p[1] / l_d;
        out[(row, 2)] = 1.0 / l_d;
    }
    out
}

/// Vanishing point `v = K d^c` and its image position.
pub fn vp_project(line_c: &PluckerLine, k: &Intrinsics) -> Result<(Vec3, Vec2)> {
    let v = k.point_matrix() * line_c.d;
    check_v3(&v)?;
    Ok((v, Vec2::new(v[0] / v[2], v[1] / v[2])))
}

pub fn vp_residual(p_v: &Vec2, v: &Vec3) -> Result<Vec2> {
    check_v3(v)?;
    Ok(p_v - Vec2::new(v[0] / v[2], v[1] / v[2]))
}

/// `∂r_v/∂v`.
pub fn vp_residual_derivative(v: &Vec3) -> Matrix2x3<f64> {
    let inv = 1.0 / v[2];
    let inv2 = inv * inv;
    Matrix2x3::new(-inv, 0.0, v[0] * inv2, 0.0, -inv, v[1] * inv2)
}

fn check_v3(v: &Vec3) -> Result<()> {
    if v[2].abs() <= VP_INFINITY_EPS * v.norm() || v.norm() == 0.0 {
        Err(Error::VpAtInfinity { v3: v[2] })
    } else {
        Ok(())
    }
}

/// 6×6 Plücker transform for `n' = Rᵀ(n + d × t)`, `d' = Rᵀ d`.
fn plucker_transform(rt: &Matrix3<f64>, t: &Vec3) -> Matrix6<f64> {
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(rt);
    m.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-rt * skew(t)));
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(rt);
    m
}

/// Camera-frame line with its derivatives with respect to the pose and the
/// world-line update.
struct CameraLine {
    line: PluckerLine,
    d_pose: Matrix6<f64>,
    d_world: Matrix6x4<f64>,
    d_local: Matrix6x4<f64>,
}

fn camera_line(pose: &CameraPose, line: &OrthonormalLine) -> Result<CameraLine> {
    let (n_w, d_w) = line.plucker_vectors();
    let rt = pose.rotation.inverse().into_inner();
    let n_b = rt * (n_w + d_w.cross(&pose.position));
    let d_b = rt * d_w;

    let to_body = plucker_transform(&rt, &pose.position);
    let ext_rt = pose.extrinsic.rotation.inverse().into_inner();
    let to_camera = plucker_transform(&ext_rt, &pose.extrinsic.translation);

    let mut body_wrt_pose = Matrix6::zeros();
    body_wrt_pose.fixed_view_mut::<3, 3>(0, 0).copy_from(&(rt * skew(&d_w)));
    body_wrt_pose.fixed_view_mut::<3, 3>(0, 3).copy_from(&skew(&n_b));
    body_wrt_pose.fixed_view_mut::<3, 3>(3, 3).copy_from(&skew(&d_b));

    let n_c = ext_rt * (n_b + d_b.cross(&pose.extrinsic.translation));
    let d_c = ext_rt * d_b;
    let line_c = PluckerLine { n: n_c, d: d_c, frame: Frame::Camera };

    let local = to_orthonormal(&line_c).map_err(|_| Error::DegenerateLine { l_d: n_c.xy().norm() })?;

    Ok(CameraLine {
        line: line_c,
        d_pose: to_camera * body_wrt_pose,
        d_world: to_camera * to_body * line.plucker_jacobian(),
        // the orthonormal chart has unit Plücker magnitude
        d_local: local.plucker_jacobian() * (n_c.norm_squared() + d_c.norm_squared()).sqrt(),
    })
}

/// Line residual of `obs` against the world line seen from `state`, with Jacobians.
pub fn line_jacobian(
    state: &CameraPose,
    line: &OrthonormalLine,
    obs: &Segment2D,
    k: &Intrinsics,
) -> Result<LineResidualEval> {
    let cam = camera_line(state, line)?;
    let l = project_line(&cam.line, k);
    let r = line_residual(&l, &obs.p_s, &obs.p_e)?;
    // ∂r/∂L^c = ∂r/∂l · [K' 0]
    let dr_dn = line_residual_derivative(&l, &obs.p_s, &obs.p_e) * k.line_matrix();
    let mut dr_dlc = Matrix2x6::zeros();
    dr_dlc.fixed_view_mut::<2, 3>(0, 0).copy_from(&dr_dn);
    Ok(LineResidualEval {
        r,
        j_pose: dr_dlc * cam.d_pose,
        j_line: dr_dlc * cam.d_world,
        j_line_local: dr_dlc * cam.d_local,
    })
}

/// Vanishing-point residual of `p_v` against the world line seen from `state`, with Jacobians.
pub fn vp_jacobian(state: &CameraPose, line: &OrthonormalLine, p_v: &Vec2, k: &Intrinsics) -> Result<VpResidualEval> {
    let cam = camera_line(state, line)?;
    let (v, _) = vp_project(&cam.line, k)?;
    let r = vp_residual(p_v, &v)?;
    // ∂r/∂L^c = ∂r/∂v · [0 K]
    let mut dv_dlc = Matrix3x6::zeros();
    dv_dlc.fixed_view_mut::<3, 3>(0, 3).copy_from(&k.point_matrix());
    let dr_dlc = vp_residual_derivative(&v) * dv_dlc;
    Ok(VpResidualEval {
        r,
        j_pose: dr_dlc * cam.d_pose,
        j_line: dr_dlc * cam.d_world,
        j_line_local: dr_dlc * cam.d_local,
    })
}

/// Residual-only evaluation helpers, used for finite differences and cost evaluation.
pub fn line_residual_at(state: &CameraPose, line: &OrthonormalLine, obs: &Segment2D, k: &Intrinsics) -> Result<Vec2> {
    let (n, d) = line.plucker_vectors();
    let world = PluckerLine { n, d, frame: Frame::World };
    let cam = crate::geometry::transform_line(&world, state)?;
    line_residual(&project_line(&cam, k), &obs.p_s, &obs.p_e)
}

pub fn vp_residual_at(state: &CameraPose, line: &OrthonormalLine, p_v: &Vec2, k: &Intrinsics) -> Result<Vec2> {
    let (n, d) = line.plucker_vectors();
    let world = PluckerLine { n, d, frame: Frame::World };
    let cam = crate::geometry::transform_line(&world, state)?;
    let (v, _) = vp_project(&cam, k)?;
    vp_residual(p_v, &v)
}
