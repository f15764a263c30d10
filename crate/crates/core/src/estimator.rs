//! Sliding-window Levenberg–Marquardt over camera poses and orthonormal lines.
//!
//! Line and vanishing-point residuals are whitened by isotropic standard
//! deviations, robustified by IRLS (weight `ρ'(s)` at the current squared
//! norm) and solved densely. Poses update by `p += δp`, `R ← R·Exp(δθ)`, lines
//! through [`orthonormal_update`]. Vanishing-point factors attach to existing
//! line parameters and never add variables.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector, Matrix2x4, Matrix2x6, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::{line_jacobian, line_residual_at, robust_weight, vp_jacobian, vp_residual_at, Intrinsics, RobustLoss};
use crate::geometry::{
    back_projection_plane, orthonormal_update, plucker_from_points, to_orthonormal, to_plucker, triangulate_line, CameraPose, OrthonormalLine,
    PluckerLine, Segment2D, Vec2, Vec3, DEGENERATE_SINE,
};
use crate::observability::FimReport;

/// 1.5 pixels at a 460-pixel virtual focal length.
pub const DEFAULT_SIGMA: f64 = 1.5 / 460.0;
/// Relative eigenvalue of the Jacobi-scaled normal matrix treated as zero.
pub const NULL_SPACE_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowState {
    pub frame_ids: Vec<u64>,
    pub poses: Vec<CameraPose>,
    pub fixed: Vec<bool>,
    pub lines: BTreeMap<u64, OrthonormalLine>,
    /// Lines whose two-view triangulation was degenerate at initialization.
    pub degenerate_init: BTreeSet<u64>,
    pub capacity: usize,
}

impl WindowState {
    pub fn new(capacity: usize) -> Self {
        Self {
            frame_ids: Vec::new(),
            poses: Vec::new(),
            fixed: Vec::new(),
            lines: BTreeMap::new(),
            degenerate_init: BTreeSet::new(),
            capacity,
        }
    }

    pub fn push_frame(&mut self, frame_id: u64, pose: CameraPose) -> Result<()> {
        if self.frame_ids.len() >= self.capacity {
            return Err(Error::InvalidParameter(format!("window is full ({} frames)", self.capacity)));
        }
        if self.frame_ids.contains(&frame_id) {
            return Err(Error::InconsistentIds(format!("frame {frame_id} is already in the window")));
        }
        self.frame_ids.push(frame_id);
        self.poses.push(pose);
        self.fixed.push(false);
        Ok(())
    }

    pub fn pose_index(&self, frame_id: u64) -> Option<usize> {
        self.frame_ids.iter().position(|&f| f == frame_id)
    }

    pub fn plucker(&self, track: u64) -> Option<PluckerLine> {
        self.lines.get(&track).and_then(|l| to_plucker(l).ok())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineMeasurement {
    pub frame_id: u64,
    pub track_id: u64,
    pub segment: Segment2D,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VpMeasurement {
    pub frame_id: u64,
    pub track_id: u64,
    pub p_v: Vec2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet {
    pub line_obs: Vec<LineMeasurement>,
    pub vp_obs: Vec<VpMeasurement>,
    /// Standard deviation of line residuals, normalized-plane units.
    pub line_sigma: f64,
    /// Standard deviation of vanishing-point residuals, normalized-plane units.
    pub vp_sigma: f64,
}

impl Default for MeasurementSet {
    fn default() -> Self {
        Self { line_obs: Vec::new(), vp_obs: Vec::new(), line_sigma: DEFAULT_SIGMA, vp_sigma: DEFAULT_SIGMA }
    }
}

impl MeasurementSet {
    pub fn without_vp(&self) -> Self {
        Self { vp_obs: Vec::new(), ..self.clone() }
    }

    /// Drops measurements whose frame or line is not in the window.
    pub fn restricted_to(&self, window: &WindowState) -> Self {
        let known = |f: u64, t: u64| window.pose_index(f).is_some() && window.lines.contains_key(&t);
        Self {
            line_obs: self.line_obs.iter().filter(|m| known(m.frame_id, m.track_id)).copied().collect(),
            vp_obs: self.vp_obs.iter().filter(|m| known(m.frame_id, m.track_id)).copied().collect(),
            ..*self
        }
    }

    pub fn extend(&mut self, other: &MeasurementSet) {
        self.line_obs.extend_from_slice(&other.line_obs);
        self.vp_obs.extend_from_slice(&other.vp_obs);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    pub max_iterations: usize,
    pub initial_lm_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    pub gradient_tolerance: f64,
    pub step_tolerance: f64,
    pub line_loss: RobustLoss,
    pub vp_loss: RobustLoss,
    pub intrinsics: Intrinsics,
    /// Range from the camera at which degenerate tracks are placed, meters.
    pub init_depth: f64,
    /// A triangulation is accepted only if the sine between the two
    /// back-projection planes exceeds this many standard deviations of its
    /// noise-induced value (see [`parallax_threshold`]).
    pub init_parallax_sigmas: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            initial_lm_damping: 1e-4,
            damping_up: 10.0,
            damping_down: 0.5,
            gradient_tolerance: 1e-10,
            step_tolerance: 1e-12,
            line_loss: RobustLoss::huber(1.5),
            vp_loss: RobustLoss::arctan(1.0),
            intrinsics: Intrinsics::default(),
            init_depth: 3.0,
            init_parallax_sigmas: 3.0,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("initial_lm_damping", self.initial_lm_damping),
            ("gradient_tolerance", self.gradient_tolerance),
            ("step_tolerance", self.step_tolerance),
            ("init_depth", self.init_depth),
            ("init_parallax_sigmas", self.init_parallax_sigmas),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {value}")));
            }
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter("max_iterations must be positive".into()));
        }
        if !(self.gradient_tolerance < 1.0 && self.step_tolerance < 1.0) {
            return Err(Error::InvalidParameter("tolerances must be below 1".into()));
        }
        if !(self.damping_up > 1.0) || !(self.damping_down > 0.0 && self.damping_down < 1.0) {
            return Err(Error::InvalidParameter("damping factors must satisfy up > 1 > down > 0".into()));
        }
        self.line_loss.validate()?;
        self.vp_loss.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    StepTolerance,
    MaxIterations,
    /// Damping grew past 1e16 without an accepted step.
    DampingLimit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    /// LM iterations, accepted and rejected.
    pub iterations: usize,
    pub accepted_steps: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub termination: Termination,
    /// Cost after each accepted step, starting with the initial cost.
    pub cost_trace: Vec<f64>,
    /// `‖Jᵀ W r‖_∞` at the returned state.
    pub final_gradient: f64,
    pub num_parameters: usize,
    pub num_residuals: usize,
    /// Lines with an unobservable direction at the initial state.
    pub underdetermined_lines: Vec<u64>,
    /// Factors left out because they could not be evaluated at the initial state
    /// (for example a vanishing point projecting to infinity).
    pub inactive_factors: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InitReport {
    pub initialized: Vec<u64>,
    pub degenerate: Vec<u64>,
    pub too_short: Vec<u64>,
    /// Tracks whose line could not be represented (for example through the world origin).
    pub failed: Vec<u64>,
}

fn group_tracks(window: &WindowState, meas: &MeasurementSet) -> Result<BTreeMap<u64, Vec<(usize, Segment2D)>>> {
    let mut tracks: BTreeMap<u64, Vec<(usize, Segment2D)>> = BTreeMap::new();
    for m in &meas.line_obs {
        let k = window
            .pose_index(m.frame_id)
            .ok_or_else(|| Error::InconsistentIds(format!("frame {} is not in the window", m.frame_id)))?;
        if m.segment.id != m.track_id {
            return Err(Error::InconsistentIds(format!("segment {} filed under track {}", m.segment.id, m.track_id)));
        }
        tracks.entry(m.track_id).or_default().push((k, m.segment));
    }
    Ok(tracks)
}

/// Line in the back-projection plane of `obs` through the points at range
/// `depth` along both endpoint rays.
pub fn plane_constrained_line(obs: &Segment2D, pose: &CameraPose, depth: f64) -> Result<PluckerLine> {
    let r = pose.camera_rotation();
    let c = pose.camera_center();
    let a = c + r * obs.homogeneous_start().normalize() * depth;
    let b = c + r * obs.homogeneous_end().normalize() * depth;
    plucker_from_points(&a, &b)
}

/// Line in the back-projection plane of `obs` through the point at range
/// `depth` along the midpoint ray, with direction given by a vanishing
/// point `p_v` seen from `vp_pose`. Fails when that direction is (nearly)
/// normal to the plane.
pub fn vp_constrained_line(
    obs: &Segment2D,
    pose: &CameraPose,
    p_v: &Vec2,
    vp_pose: &CameraPose,
    depth: f64,
) -> Result<PluckerLine> {
    let (m, _) = back_projection_plane(obs, pose);
    let m = m.normalize();
    let d = (vp_pose.camera_rotation() * Vec3::new(p_v.x, p_v.y, 1.0)).normalize();
    let d = d - m * m.dot(&d);
    if d.norm() < 0.1 {
        return Err(Error::DegenerateTriangulation { sine: d.norm() });
    }
    let mid = obs.midpoint();
    let a = pose.camera_center() + pose.camera_rotation() * Vec3::new(mid.x, mid.y, 1.0).normalize() * depth;
    plucker_from_points(&a, &(a + d))
}

/// Sine of the angle between the back-projection planes of two observations.
pub fn plane_sine(obs1: &Segment2D, pose1: &CameraPose, obs2: &Segment2D, pose2: &CameraPose) -> f64 {
    let (m1, _) = back_projection_plane(obs1, pose1);
    let (m2, _) = back_projection_plane(obs2, pose2);
    m1.cross(&m2).norm() / (m1.norm() * m2.norm())
}

/// Smallest plane sine a triangulation must reach: `k` times the spread
/// `√2·σ·√(1/len₁² + 1/len₂²)` that endpoint noise alone gives two
/// observations of one plane, and never below [`DEGENERATE_SINE`].
pub fn parallax_threshold(obs1: &Segment2D, obs2: &Segment2D, sigma: f64, k: f64) -> f64 {
    let spread = std::f64::consts::SQRT_2 * sigma * (obs1.length().powi(-2) + obs2.length().powi(-2)).sqrt();
    (k * spread).max(DEGENERATE_SINE)
}

/// Triangulates every track not yet in the window from its widest-baseline
/// pair. Degenerate pairs, and pairs failing [`parallax_threshold`], get a
/// plane-constrained line instead: along the track's vanishing point when
/// one was observed, otherwise [`plane_constrained_line`].
pub fn initialize_lines(window: &WindowState, meas: &MeasurementSet, opts: &SolveOptions) -> Result<(WindowState, InitReport)> {
    let mut state = window.clone();
    let mut report = InitReport::default();
    for (track, obs) in group_tracks(window, meas)? {
        if state.lines.contains_key(&track) {
            continue;
        }
        if obs.len() < 2 {
            report.too_short.push(track);
            continue;
        }
        let mut best = (0, 1, -1.0);
        for i in 0..obs.len() {
            for j in (i + 1)..obs.len() {
                let base = (window.poses[obs[i].0].camera_center() - window.poses[obs[j].0].camera_center()).norm();
                if base > best.2 {
                    best = (i, j, base);
                }
            }
        }
        let (a, b) = (obs[best.0], obs[best.1]);
        let fallback = || -> Result<PluckerLine> {
            let vp = meas.vp_obs.iter().filter(|v| v.track_id == track).find_map(|v| {
                let k = window.pose_index(v.frame_id)?;
                vp_constrained_line(&a.1, &window.poses[a.0], &v.p_v, &window.poses[k], opts.init_depth).ok()
            });
            match vp {
                Some(line) => Ok(line),
                None => plane_constrained_line(&a.1, &window.poses[a.0], opts.init_depth),
            }
        };
        let (line, degenerate) = match triangulate_line(&a.1, &window.poses[a.0], &b.1, &window.poses[b.0]) {
            Ok(line)
                if plane_sine(&a.1, &window.poses[a.0], &b.1, &window.poses[b.0])
                    >= parallax_threshold(&a.1, &b.1, meas.line_sigma, opts.init_parallax_sigmas) =>
            {
                (line, false)
            }
            Ok(_) | Err(Error::DegenerateTriangulation { .. }) => (fallback()?, true),
            Err(e) => return Err(e),
        };
        match to_orthonormal(&line.normalized()) {
            Ok(o) => {
                state.lines.insert(track, o);
                report.initialized.push(track);
                if degenerate {
                    state.degenerate_init.insert(track);
                    report.degenerate.push(track);
                }
            }
            Err(_) => report.failed.push(track),
        }
    }
    Ok((state, report))
}

/// Freezes the first two poses (or every pose of a shorter window).
pub fn fix_gauge(window: &WindowState) -> WindowState {
    let mut state = window.clone();
    for (k, f) in state.fixed.iter_mut().enumerate() {
        *f = k < 2;
    }
    state
}

#[derive(Clone, Copy, Debug)]
struct LineFactor {
    pose: usize,
    track: u64,
    segment: Segment2D,
}

#[derive(Clone, Copy, Debug)]
struct VpFactor {
    pose: usize,
    track: u64,
    p_v: Vec2,
}

#[derive(Clone, Debug)]
pub struct Problem {
    pub state: WindowState,
    pub num_parameters: usize,
    pub num_residuals: usize,
    pose_offsets: Vec<Option<usize>>,
    line_offsets: BTreeMap<u64, usize>,
    line_factors: Vec<LineFactor>,
    vp_factors: Vec<VpFactor>,
    line_sigma: f64,
    vp_sigma: f64,
    opts: SolveOptions,
}

pub fn build_problem(window: &WindowState, meas: &MeasurementSet, opts: &SolveOptions) -> Result<Problem> {
    opts.validate()?;
    if !(meas.line_sigma > 0.0 && meas.vp_sigma > 0.0) {
        return Err(Error::InvalidParameter("measurement sigmas must be positive".into()));
    }
    let resolve = |frame: u64, track: u64| -> Result<usize> {
        let k = window
            .pose_index(frame)
            .ok_or_else(|| Error::InconsistentIds(format!("frame {frame} is not in the window")))?;
        if !window.lines.contains_key(&track) {
            return Err(Error::InconsistentIds(format!("line {track} is not in the window")));
        }
        Ok(k)
    };
    let line_factors = meas
        .line_obs
        .iter()
        .map(|m| Ok(LineFactor { pose: resolve(m.frame_id, m.track_id)?, track: m.track_id, segment: m.segment }))
        .collect::<Result<Vec<_>>>()?;
    let vp_factors = meas
        .vp_obs
        .iter()
        .map(|m| Ok(VpFactor { pose: resolve(m.frame_id, m.track_id)?, track: m.track_id, p_v: m.p_v }))
        .collect::<Result<Vec<_>>>()?;

    let mut offset = 0;
    let pose_offsets = window
        .fixed
        .iter()
        .map(|&fixed| {
            (!fixed).then(|| {
                offset += 6;
                offset - 6
            })
        })
        .collect();
    let line_offsets = window
        .lines
        .keys()
        .map(|&id| {
            offset += 4;
            (id, offset - 4)
        })
        .collect();
    Ok(Problem {
        state: window.clone(),
        num_parameters: offset,
        num_residuals: 2 * (line_factors.len() + vp_factors.len()),
        pose_offsets,
        line_offsets,
        line_factors,
        vp_factors,
        line_sigma: meas.line_sigma,
        vp_sigma: meas.vp_sigma,
        opts: *opts,
    })
}

/// Which factors take part in the solve.
#[derive(Clone, Debug)]
struct ActiveSet {
    line: Vec<bool>,
    vp: Vec<bool>,
}

struct Linearization {
    cost: f64,
    h: DMatrix<f64>,
    g: DVector<f64>,
}

impl Problem {
    /// `pose:<frame id>` and `line:<track id>` for each parameter block, in order.
    pub fn parameter_blocks(&self) -> Vec<(String, usize, usize)> {
        let mut blocks: Vec<(String, usize, usize)> = self
            .pose_offsets
            .iter()
            .enumerate()
            .filter_map(|(k, o)| o.map(|o| (format!("pose:{}", self.state.frame_ids[k]), o, 6)))
            .collect();
        blocks.extend(self.line_offsets.iter().map(|(id, &o)| (format!("line:{id}"), o, 4)));
        blocks
    }

    fn line_eval(&self, state: &WindowState, f: &LineFactor) -> Result<(nalgebra::Vector2<f64>, Matrix2x6<f64>, Matrix2x4<f64>)> {
        let e = line_jacobian(&state.poses[f.pose], &state.lines[&f.track], &f.segment, &self.opts.intrinsics)?;
        Ok((e.r, e.j_pose, e.j_line))
    }

    fn vp_eval(&self, state: &WindowState, f: &VpFactor) -> Result<(nalgebra::Vector2<f64>, Matrix2x6<f64>, Matrix2x4<f64>)> {
        let e = vp_jacobian(&state.poses[f.pose], &state.lines[&f.track], &f.p_v, &self.opts.intrinsics)?;
        Ok((e.r, e.j_pose, e.j_line))
    }

    fn active_set(&self, state: &WindowState) -> ActiveSet {
        ActiveSet {
            line: self.line_factors.iter().map(|f| self.line_eval(state, f).is_ok()).collect(),
            vp: self.vp_factors.iter().map(|f| self.vp_eval(state, f).is_ok()).collect(),
        }
    }

    /// Robustified cost `½ Σ ρ(‖r/σ‖²)`; `None` if an active factor cannot be evaluated.
    fn cost(&self, state: &WindowState, active: &ActiveSet) -> Option<f64> {
        let k = &self.opts.intrinsics;
        let mut cost = 0.0;
        for (f, _) in self.line_factors.iter().zip(&active.line).filter(|(_, &a)| a) {
            let r = line_residual_at(&state.poses[f.pose], &state.lines[&f.track], &f.segment, k).ok()?;
            cost += 0.5 * robust_weight(&self.opts.line_loss, (r / self.line_sigma).norm_squared()).0;
        }
        for (f, _) in self.vp_factors.iter().zip(&active.vp).filter(|(_, &a)| a) {
            let r = vp_residual_at(&state.poses[f.pose], &state.lines[&f.track], &f.p_v, k).ok()?;
            cost += 0.5 * robust_weight(&self.opts.vp_loss, (r / self.vp_sigma).norm_squared()).0;
        }
        Some(cost)
    }

    /// Gauss–Newton system. With `robust = false` the weights are 1, giving
    /// the whitened information `Jᵀ J`.
    fn linearize(&self, state: &WindowState, active: &ActiveSet, robust: bool) -> Result<Linearization> {
        let n = self.num_parameters;
        let mut lin = Linearization { cost: 0.0, h: DMatrix::zeros(n, n), g: DVector::zeros(n) };
        for (f, _) in self.line_factors.iter().zip(&active.line).filter(|(_, &a)| a) {
            let (r, jp, jl) = self.line_eval(state, f)?;
            self.accumulate(&mut lin, f.pose, f.track, r, jp, jl, self.line_sigma, &self.opts.line_loss, robust);
        }
        for (f, _) in self.vp_factors.iter().zip(&active.vp).filter(|(_, &a)| a) {
            let (r, jp, jl) = self.vp_eval(state, f)?;
            self.accumulate(&mut lin, f.pose, f.track, r, jp, jl, self.vp_sigma, &self.opts.vp_loss, robust);
        }
        Ok(lin)
    }

    #[allow(clippy::too_many_arguments)]
    fn accumulate(
        &self,
        lin: &mut Linearization,
        pose: usize,
        track: u64,
        r: nalgebra::Vector2<f64>,
        jp: Matrix2x6<f64>,
        jl: Matrix2x4<f64>,
        sigma: f64,
        loss: &RobustLoss,
        robust: bool,
    ) {
        let r = r / sigma;
        let (rho, weight) = robust_weight(loss, r.norm_squared());
        lin.cost += 0.5 * rho;
        let w = if robust { weight } else { 1.0 };
        let mut blocks: Vec<(usize, DMatrix<f64>)> = Vec::with_capacity(2);
        if let Some(o) = self.pose_offsets[pose] {
            blocks.push((o, DMatrix::from_iterator(2, 6, jp.iter().map(|v| v / sigma))));
        }
        blocks.push((self.line_offsets[&track], DMatrix::from_iterator(2, 4, jl.iter().map(|v| v / sigma))));
        for (oa, ja) in &blocks {
            let ga = ja.transpose() * r * w;
            let mut seg = lin.g.rows_mut(*oa, ja.ncols());
            seg += ga;
            for (ob, jb) in &blocks {
                let hab = ja.transpose() * jb * w;
                let mut view = lin.h.view_mut((*oa, *ob), (ja.ncols(), jb.ncols()));
                view += hab;
            }
        }
    }

    fn retract(&self, state: &WindowState, delta: &DVector<f64>) -> WindowState {
        let mut next = state.clone();
        for (k, o) in self.pose_offsets.iter().enumerate() {
            if let Some(o) = *o {
                let dp = Vec3::new(delta[o], delta[o + 1], delta[o + 2]);
                let dt = Vec3::new(delta[o + 3], delta[o + 4], delta[o + 5]);
                next.poses[k] = state.poses[k].retract(&dp, &dt);
            }
        }
        for (id, &o) in &self.line_offsets {
            let d = Vector4::new(delta[o], delta[o + 1], delta[o + 2], delta[o + 3]);
            next.lines.insert(*id, orthonormal_update(&state.lines[id], &d));
        }
        next
    }

    /// Whitened information `JᵀJ` over all evaluable factors at `state`.
    pub fn information_matrix(&self, state: &WindowState) -> Result<DMatrix<f64>> {
        let active = self.active_set(state);
        Ok(self.linearize(state, &active, false)?.h)
    }

    /// Null directions of the Jacobi-scaled information, split into those that
    /// touch poses (gauge or pose singularities) and line-only ones.
    fn null_space_report(&self, h: &DMatrix<f64>) -> (Vec<String>, Vec<u64>) {
        let n = h.nrows();
        // floor the diagonal so exactly unobservable coordinates are not amplified
        let floor = (0..n).map(|i| h[(i, i)]).fold(0.0, f64::max) * 1e-12;
        let scale = DVector::from_iterator(n, (0..n).map(|i| 1.0 / h[(i, i)].max(floor).max(f64::MIN_POSITIVE).sqrt()));
        let scaled = DMatrix::from_fn(n, n, |i, j| h[(i, j)] * scale[i] * scale[j]);
        let eig = scaled.symmetric_eigen();
        let max = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
        let blocks = self.parameter_blocks();
        let mut pose_vars = BTreeSet::new();
        let mut line_vars = BTreeSet::new();
        for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
            if lambda > NULL_SPACE_TOLERANCE * max {
                continue;
            }
            let v = eig.eigenvectors.column(i);
            let involved: Vec<&(String, usize, usize)> =
                blocks.iter().filter(|(_, o, len)| v.rows(*o, *len).norm() > 0.1).collect();
            let touches_pose = blocks
                .iter()
                .filter(|(name, _, _)| name.starts_with("pose:"))
                .map(|(_, o, len)| v.rows(*o, *len).norm_squared())
                .sum::<f64>()
                > 0.01;
            for (name, _, _) in involved {
                if touches_pose {
                    pose_vars.insert(name.clone());
                } else if let Some(id) = name.strip_prefix("line:").and_then(|s| s.parse().ok()) {
                    line_vars.insert(id);
                }
            }
        }
        (pose_vars.into_iter().collect(), line_vars.into_iter().collect())
    }
}

/// Levenberg–Marquardt with diagonal (Marquardt) damping.
pub fn optimize(problem: &Problem) -> Result<(WindowState, SolveStats)> {
    let opts = &problem.opts;
    if problem.num_parameters == 0 {
        return Err(Error::InvalidParameter("problem has no free parameters".into()));
    }
    let mut state = problem.state.clone();
    let active = problem.active_set(&state);
    let inactive_factors = active.line.iter().chain(&active.vp).filter(|a| !**a).count();

    let info = problem.linearize(&state, &active, false)?;
    let (singular_vars, underdetermined_lines) = problem.null_space_report(&info.h);
    if !singular_vars.is_empty() {
        return Err(Error::SingularNormalEquations { variables: singular_vars });
    }

    let mut lin = problem.linearize(&state, &active, true)?;
    let initial_cost = lin.cost;
    let mut cost_trace = vec![initial_cost];
    let mut lambda = opts.initial_lm_damping;
    let mut iterations = 0;
    let mut accepted = 0;
    let n = problem.num_parameters;
    let termination = loop {
        if lin.g.amax() <= opts.gradient_tolerance {
            break Termination::GradientTolerance;
        }
        if iterations >= opts.max_iterations {
            break Termination::MaxIterations;
        }
        if lambda > 1e16 {
            break Termination::DampingLimit;
        }
        iterations += 1;
        let mut damped = lin.h.clone();
        for i in 0..n {
            damped[(i, i)] += lambda * lin.h[(i, i)].clamp(1e-6, 1e32);
        }
        let Some(chol) = damped.cholesky() else {
            lambda *= opts.damping_up;
            continue;
        };
        let delta = -chol.solve(&lin.g);
        if delta.norm() <= opts.step_tolerance {
            break Termination::StepTolerance;
        }
        let candidate = problem.retract(&state, &delta);
        match problem.cost(&candidate, &active) {
            Some(c) if c < lin.cost => {
                state = candidate;
                lin = problem.linearize(&state, &active, true)?;
                cost_trace.push(lin.cost);
                accepted += 1;
                lambda = (lambda * opts.damping_down).max(1e-12);
            }
            _ => lambda *= opts.damping_up,
        }
    };
    let stats = SolveStats {
        iterations,
        accepted_steps: accepted,
        initial_cost,
        final_cost: lin.cost,
        termination,
        cost_trace,
        final_gradient: lin.g.amax(),
        num_parameters: problem.num_parameters,
        num_residuals: problem.num_residuals,
        underdetermined_lines,
        inactive_factors,
    };
    Ok((state, stats))
}

/// Per-line information from line and vanishing-point factors at `state`,
/// with `Ω = I / σ²`. Factors that cannot be evaluated are skipped.
pub fn line_information(
    state: &WindowState,
    meas: &MeasurementSet,
    intrinsics: &Intrinsics,
) -> BTreeMap<u64, FimReport> {
    let omega_l = nalgebra::Matrix2::identity() / (meas.line_sigma * meas.line_sigma);
    let omega_v = nalgebra::Matrix2::identity() / (meas.vp_sigma * meas.vp_sigma);
    let mut line_blocks: BTreeMap<u64, Vec<(Matrix2x4<f64>, nalgebra::Matrix2<f64>)>> = BTreeMap::new();
    let mut vp_blocks: BTreeMap<u64, Vec<(Matrix2x4<f64>, nalgebra::Matrix2<f64>)>> = BTreeMap::new();
    for m in &meas.line_obs {
        let (Some(k), Some(line)) = (state.pose_index(m.frame_id), state.lines.get(&m.track_id)) else { continue };
        if let Ok(e) = line_jacobian(&state.poses[k], line, &m.segment, intrinsics) {
            line_blocks.entry(m.track_id).or_default().push((e.j_line, omega_l));
        }
    }
    for m in &meas.vp_obs {
        let (Some(k), Some(line)) = (state.pose_index(m.frame_id), state.lines.get(&m.track_id)) else { continue };
        if let Ok(e) = vp_jacobian(&state.poses[k], line, &m.p_v, intrinsics) {
            vp_blocks.entry(m.track_id).or_default().push((e.j_line, omega_v));
        }
    }
    state
        .lines
        .keys()
        .map(|id| {
            let l = line_blocks.get(id).map(Vec::as_slice).unwrap_or(&[]);
            let v = vp_blocks.get(id).map(Vec::as_slice).unwrap_or(&[]);
            (*id, FimReport::from_blocks(l, v))
        })
        .collect()
}

/// Result of sliding the window by one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Slide {
    pub window: WindowState,
    pub measurements: MeasurementSet,
    /// Lines no longer observed by any frame in the window, with their last estimates.
    pub retired: BTreeMap<u64, OrthonormalLine>,
}

/// Appends a frame, dropping the oldest one first when the window is full.
/// No prior replaces the dropped information; the gauge is re-fixed on the
/// two oldest remaining poses.
pub fn slide_window(
    window: &WindowState,
    meas: &MeasurementSet,
    frame_id: u64,
    pose: CameraPose,
    new_meas: &MeasurementSet,
) -> Result<Slide> {
    let mut state = window.clone();
    let mut kept = meas.clone();
    if state.frame_ids.len() >= state.capacity && !state.frame_ids.is_empty() {
        let dropped = state.frame_ids.remove(0);
        state.poses.remove(0);
        state.fixed.remove(0);
        kept.line_obs.retain(|m| m.frame_id != dropped);
        kept.vp_obs.retain(|m| m.frame_id != dropped);
    }
    state.push_frame(frame_id, pose)?;
    kept.extend(new_meas);
    let observed: BTreeSet<u64> = kept.line_obs.iter().map(|m| m.track_id).collect();
    let retired_ids: Vec<u64> = state.lines.keys().filter(|id| !observed.contains(id)).copied().collect();
    let mut retired = BTreeMap::new();
    for id in retired_ids {
        if let Some(line) = state.lines.remove(&id) {
            retired.insert(id, line);
        }
        state.degenerate_init.remove(&id);
    }
    Ok(Slide { window: fix_gauge(&state), measurements: kept, retired })
}
