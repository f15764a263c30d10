//! Synthetic scenes, trajectories and noisy line / vanishing-point measurements.
//!
//! Observations live on the normalized image plane. Noise is isotropic
//! Gaussian on segment endpoints; one pixel is `1 / PIXEL_FOCAL` normalized
//! units.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{Matrix3, Rotation3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::{vp_project, Intrinsics};
use crate::geometry::{transform_line, triangulate_line, CameraPose, Frame, PluckerLine, Segment2D, Vec2, Vec3};

/// Virtual focal length converting normalized units to pixel equivalents.
pub const PIXEL_FOCAL: f64 = 460.0;
pub const SCHEMA_VERSION: u32 = 1;
/// Outlier segments get ids at or above this value.
pub const OUTLIER_ID_BASE: u64 = 1 << 40;
const NEAR_PLANE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub structural_directions: Vec<Vec3>,
    pub lines_per_direction: usize,
    pub unstructured_lines: usize,
    pub box_min: Vec3,
    pub box_max: Vec3,
    pub rng_seed: u64,
}

/// Direction of the default trajectory: 30° off the optical axis, so the
/// lines parallel to it are degenerate yet have a finite vanishing point.
pub fn default_motion_direction() -> Vec3 {
    Vec3::new(0.5, 0.0, 0.75f64.sqrt())
}

impl Default for SceneSpec {
    fn default() -> Self {
        let t = default_motion_direction();
        Self {
            structural_directions: vec![t, Vec3::y(), Vec3::new(t.z, 0.0, -t.x)],
            lines_per_direction: 5,
            unstructured_lines: 0,
            box_min: Vec3::new(-3.0, -1.5, 5.0),
            box_max: Vec3::new(5.0, 1.5, 13.0),
            rng_seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        for d in &self.structural_directions {
            if (d.norm() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidParameter(format!("structural direction {d:?} is not unit norm")));
            }
        }
        if (0..3).any(|i| !(self.box_max[i] > self.box_min[i])) {
            return Err(Error::InvalidParameter("scene box is empty".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    Orbit,
    PureTranslation,
    ForwardCorridor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectorySpec {
    pub kind: TrajectoryKind,
    pub frames: usize,
    /// Meters between consecutive frames (arc length for orbits).
    pub step: f64,
    pub start: Vec3,
    /// Translation direction for pure_translation and forward_corridor.
    pub direction: Vec3,
    /// Viewing direction for pure_translation; forward_corridor looks along `direction`.
    pub look_direction: Vec3,
    /// Orbit center, also the look-at target of orbit poses.
    pub center: Vec3,
    pub radius: f64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            kind: TrajectoryKind::PureTranslation,
            frames: 10,
            step: 0.3,
            start: Vec3::zeros(),
            direction: default_motion_direction(),
            look_direction: Vec3::z(),
            center: Vec3::new(0.0, 0.0, 7.0),
            radius: 5.0,
        }
    }
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::InvalidParameter("trajectory needs at least 2 frames".into()));
        }
        if !(self.step > 0.0) {
            return Err(Error::InvalidParameter("trajectory step must be positive".into()));
        }
        if self.direction.norm() < 1e-12 || self.look_direction.norm() < 1e-12 {
            return Err(Error::InvalidParameter("trajectory directions must be nonzero".into()));
        }
        if self.kind == TrajectoryKind::Orbit && !(self.radius > 0.0) {
            return Err(Error::InvalidParameter("orbit radius must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderSpec {
    /// Endpoint noise, normalized-plane units.
    pub noise_sigma: f64,
    /// Full field of view, radians.
    pub fov: f64,
    pub min_length: f64,
    /// Extra random segments per frame, as a fraction of the real ones.
    pub outlier_rate: f64,
    pub seed: u64,
}

impl Default for RenderSpec {
    fn default() -> Self {
        Self {
            noise_sigma: 1.0 / PIXEL_FOCAL,
            fov: std::f64::consts::FRAC_PI_2,
            min_length: 0.02,
            outlier_rate: 0.0,
            seed: 0,
        }
    }
}

impl RenderSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidParameter("noise_sigma must be non-negative".into()));
        }
        if !(self.fov > 0.0 && self.fov < std::f64::consts::PI) {
            return Err(Error::InvalidParameter("fov must lie in (0, π)".into()));
        }
        if !(self.outlier_rate >= 0.0) {
            return Err(Error::InvalidParameter("outlier_rate must be non-negative".into()));
        }
        Ok(())
    }
}

/// Everything needed to regenerate a dataset.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationSpec {
    pub scene: SceneSpec,
    pub trajectory: TrajectorySpec,
    pub render: RenderSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneLine {
    pub id: u64,
    pub line: PluckerLine,
    /// Index into the structural directions; `None` for unstructured lines.
    pub class: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameBundle {
    pub frame_id: u64,
    pub pose: CameraPose,
    pub segments: Vec<Segment2D>,
    /// Direction class → vanishing point; classes whose VP is at infinity are omitted.
    pub vp_truth: BTreeMap<u64, Vec2>,
    /// Segment id → scene line id. Outlier segments have no entry.
    pub associations: BTreeMap<u64, u64>,
    /// Scene line id → triangulation is degenerate on the true poses.
    pub degenerate_flags: BTreeMap<u64, bool>,
}

pub fn make_scene(spec: &SceneSpec) -> Result<Vec<SceneLine>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let mut lines = Vec::new();
    let sample_point = |rng: &mut ChaCha8Rng| {
        Vec3::from_fn(|i, _| rng.random_range(spec.box_min[i]..spec.box_max[i]))
    };
    for (class, dir) in spec.structural_directions.iter().enumerate() {
        for _ in 0..spec.lines_per_direction {
            let p = sample_point(&mut rng);
            let id = lines.len() as u64;
            lines.push(SceneLine { id, line: line_through(&p, dir), class: Some(class as u64) });
        }
    }
    for _ in 0..spec.unstructured_lines {
        let p = sample_point(&mut rng);
        let dir = Vec3::from(UnitSphere.sample(&mut rng));
        let id = lines.len() as u64;
        lines.push(SceneLine { id, line: line_through(&p, &dir), class: None });
    }
    Ok(lines)
}

fn line_through(p: &Vec3, dir: &Vec3) -> PluckerLine {
    PluckerLine { n: p.cross(dir), d: *dir, frame: Frame::World }
}

/// Rotation whose third column is `forward`, with image `y` pointing toward world `+y`.
pub fn look_rotation(forward: &Vec3) -> Rotation3<f64> {
    let z = forward.normalize();
    let down = if z.cross(&Vec3::y()).norm() < 1e-6 { Vec3::z() } else { Vec3::y() };
    let x = down.cross(&z).normalize();
    let y = z.cross(&x);
    Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z]))
}

pub fn make_trajectory(spec: &TrajectorySpec) -> Result<Vec<CameraPose>> {
    spec.validate()?;
    let dir = spec.direction.normalize();
    let poses = match spec.kind {
        TrajectoryKind::PureTranslation => {
            let r = look_rotation(&spec.look_direction);
            (0..spec.frames).map(|k| CameraPose::new(r, spec.start + dir * (spec.step * k as f64))).collect()
        }
        TrajectoryKind::ForwardCorridor => {
            let r = look_rotation(&dir);
            (0..spec.frames).map(|k| CameraPose::new(r, spec.start + dir * (spec.step * k as f64))).collect()
        }
        TrajectoryKind::Orbit => (0..spec.frames)
            .map(|k| {
                let angle = spec.step * k as f64 / spec.radius;
                let offset = Vec3::new(angle.sin(), 0.0, -angle.cos()) * spec.radius;
                let position = spec.center + offset;
                CameraPose::new(look_rotation(&(spec.center - position)), position)
            })
            .collect(),
    };
    Ok(poses)
}

/// Parameter interval `[t0, t1]` of `a + t·b` satisfying every `α + β·t ≥ 0`.
fn clip_interval(constraints: &[(f64, f64)], mut lo: f64, mut hi: f64) -> Option<(f64, f64)> {
    for &(alpha, beta) in constraints {
        if beta.abs() < 1e-15 {
            if alpha < 0.0 {
                return None;
            }
        } else if beta > 0.0 {
            lo = lo.max(-alpha / beta);
        } else {
            hi = hi.min(-alpha / beta);
        }
    }
    (hi > lo).then_some((lo, hi))
}

/// Portion of a scene line visible from `pose`, as a world-space parameter
/// interval along `p0 + t·d` (unit `d`).
fn visible_interval(line: &PluckerLine, scene: &SceneSpec, pose: &CameraPose, fov: f64) -> Option<(Vec3, Vec3, f64, f64)> {
    let d = line.unit_direction();
    let p0 = line.closest_point_to_origin();
    let mut constraints = Vec::with_capacity(11);
    for i in 0..3 {
        constraints.push((p0[i] - scene.box_min[i], d[i]));
        constraints.push((scene.box_max[i] - p0[i], -d[i]));
    }
    let rt = pose.camera_rotation().inverse();
    let a = rt * (p0 - pose.camera_center());
    let b = rt * d;
    let tan_half = (fov * 0.5).tan();
    constraints.push((a.z - NEAR_PLANE, b.z));
    for axis in 0..2 {
        constraints.push((tan_half * a.z - a[axis], tan_half * b.z - b[axis]));
        constraints.push((tan_half * a.z + a[axis], tan_half * b.z + b[axis]));
    }
    clip_interval(&constraints, f64::NEG_INFINITY, f64::INFINITY).map(|(t0, t1)| (a, b, t0, t1))
}

fn project(x: &Vec3) -> Vec2 {
    Vec2::new(x.x / x.z, x.y / x.z)
}

/// Noise-free observation of a scene line, using the full visible extent.
pub fn clean_segment(line: &SceneLine, scene: &SceneSpec, pose: &CameraPose, render: &RenderSpec) -> Option<Segment2D> {
    let (a, b, t0, t1) = visible_interval(&line.line, scene, pose, render.fov)?;
    let seg = Segment2D::new(line.id, project(&(a + b * t0)), project(&(a + b * t1)));
    (seg.length() >= render.min_length).then_some(seg)
}

/// Degeneracy of each line that is visible in at least two frames, judged by
/// triangulating its noise-free observations in the first and last of them.
pub fn degenerate_flags(scene_lines: &[SceneLine], scene: &SceneSpec, poses: &[CameraPose], render: &RenderSpec) -> BTreeMap<u64, bool> {
    let mut flags = BTreeMap::new();
    for line in scene_lines {
        let seen: Vec<(usize, Segment2D)> = poses
            .iter()
            .enumerate()
            .filter_map(|(k, pose)| clean_segment(line, scene, pose, render).map(|s| (k, s)))
            .collect();
        if let (Some(first), Some(last)) = (seen.first(), seen.last()) {
            if first.0 != last.0 {
                let verdict = triangulate_line(&first.1, &poses[first.0], &last.1, &poses[last.0]);
                flags.insert(line.id, matches!(verdict, Err(Error::DegenerateTriangulation { .. })));
            }
        }
    }
    flags
}

pub fn render_observations(
    scene_lines: &[SceneLine],
    scene: &SceneSpec,
    poses: &[CameraPose],
    render: &RenderSpec,
) -> Result<Vec<FrameBundle>> {
    render.validate()?;
    let noise = Normal::new(0.0, render.noise_sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let flags = degenerate_flags(scene_lines, scene, poses, render);
    let tan_half = (render.fov * 0.5).tan();
    let mut bundles = Vec::with_capacity(poses.len());
    for (k, pose) in poses.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(render.seed);
        rng.set_stream(k as u64);
        let mut bundle = FrameBundle {
            frame_id: k as u64,
            pose: *pose,
            segments: Vec::new(),
            vp_truth: BTreeMap::new(),
            associations: BTreeMap::new(),
            degenerate_flags: BTreeMap::new(),
        };
        for line in scene_lines {
            let Some((a, b, t0, t1)) = visible_interval(&line.line, scene, pose, render.fov) else { continue };
            let full = Segment2D::new(line.id, project(&(a + b * t0)), project(&(a + b * t1)));
            if full.length() < render.min_length {
                continue;
            }
            // detectors rarely recover the full extent
            let span = t1 - t0;
            let ts = t0 + rng.random_range(0.0..0.2) * span;
            let te = t1 - rng.random_range(0.0..0.2) * span;
            let mut jitter = || Vec2::new(noise.sample(&mut rng), noise.sample(&mut rng));
            let p_s = project(&(a + b * ts)) + jitter();
            let p_e = project(&(a + b * te)) + jitter();
            bundle.segments.push(Segment2D::new(line.id, p_s, p_e));
            bundle.associations.insert(line.id, line.id);
            if let Some(&flag) = flags.get(&line.id) {
                bundle.degenerate_flags.insert(line.id, flag);
            }
        }
        let n_outliers = (render.outlier_rate * bundle.segments.len() as f64).round() as u64;
        for j in 0..n_outliers {
            let mid = Vec2::new(rng.random_range(-tan_half..tan_half), rng.random_range(-tan_half..tan_half));
            let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let half = 0.5 * rng.random_range(0.1..0.5);
            let offset = Vec2::new(angle.cos(), angle.sin()) * half;
            bundle.segments.push(Segment2D::new(OUTLIER_ID_BASE + k as u64 * 1_000_000 + j, mid - offset, mid + offset));
        }
        for (class, dir) in scene.structural_directions.iter().enumerate() {
            let world = PluckerLine { n: Vec3::zeros(), d: *dir, frame: Frame::World };
            let cam = transform_line(&world, pose)?;
            if let Ok((_, p_v)) = vp_project(&cam, &Intrinsics::default()) {
                bundle.vp_truth.insert(class as u64, p_v);
            }
        }
        bundles.push(bundle);
    }
    Ok(bundles)
}

/// Generates scene, trajectory and observations from one spec.
pub fn simulate(spec: &SimulationSpec) -> Result<Dataset> {
    let lines = make_scene(&spec.scene)?;
    let poses = make_trajectory(&spec.trajectory)?;
    let frames = render_observations(&lines, &spec.scene, &poses, &spec.render)?;
    Ok(Dataset { header: DatasetHeader::new(spec, lines), frames })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub record: String,
    pub schema_version: u32,
    pub spec: SimulationSpec,
    pub lines: Vec<SceneLine>,
}

impl DatasetHeader {
    pub fn new(spec: &SimulationSpec, lines: Vec<SceneLine>) -> Self {
        Self { record: "header".into(), schema_version: SCHEMA_VERSION, spec: spec.clone(), lines }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub frames: Vec<FrameBundle>,
}

impl Dataset {
    pub fn line(&self, id: u64) -> Option<&SceneLine> {
        self.header.lines.iter().find(|l| l.id == id)
    }
}

/// Writes floats with 17 significant digits.
struct ExactFloats;

impl serde_json::ser::Formatter for ExactFloats {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        write!(writer, "{value:.8e}")
    }
}

/// Serializes `value` as one compact JSON line with 17-significant-digit floats.
pub fn to_json_line<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, ExactFloats);
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

#[derive(Serialize)]
struct FrameRecord<'a> {
    record: &'static str,
    #[serde(flatten)]
    frame: &'a FrameBundle,
}

pub fn write_dataset<W: Write>(dataset: &Dataset, mut writer: W) -> Result<()> {
    writeln!(writer, "{}", to_json_line(&dataset.header)?)?;
    for frame in &dataset.frames {
        writeln!(writer, "{}", to_json_line(&FrameRecord { record: "frame", frame })?)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn emit_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    write_dataset(dataset, BufWriter::new(File::create(path)?))
}

pub fn parse_dataset<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut lines = reader.lines();
    let first = lines.next().ok_or_else(|| Error::Malformed("missing header record".into()))??;
    let raw: serde_json::Value = serde_json::from_str(&first)?;
    if raw.get("record").and_then(|r| r.as_str()) != Some("header") {
        return Err(Error::Malformed("first record is not a header".into()));
    }
    let found = raw
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Malformed("header lacks schema_version".into()))?;
    if found != u64::from(SCHEMA_VERSION) {
        return Err(Error::VersionError { found: found as u32, expected: SCHEMA_VERSION });
    }
    let header: DatasetHeader = serde_json::from_value(raw)?;
    let mut frames = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        // flattened records lose integer map keys, so strip the tag by hand
        let mut raw: serde_json::Value = serde_json::from_str(&line)?;
        let tag = raw.as_object_mut().and_then(|o| o.remove("record"));
        if tag.as_ref().and_then(|t| t.as_str()) != Some("frame") {
            return Err(Error::Malformed(format!("expected a frame record, got {tag:?}")));
        }
        frames.push(serde_json::from_value(raw)?);
    }
    Ok(Dataset { header, frames })
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    parse_dataset(BufReader::new(File::open(path)?))
}

/// Labeled 2D segments forming pencils through known vanishing points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PencilSpec {
    pub num_vps: usize,
    pub lines_per_vp: usize,
    /// Outliers as a fraction of pencil lines.
    pub outlier_fraction: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for PencilSpec {
    fn default() -> Self {
        Self { num_vps: 3, lines_per_vp: 10, outlier_fraction: 0.1, noise_sigma: 1.0 / PIXEL_FOCAL, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PencilSet {
    pub segments: Vec<Segment2D>,
    /// Segment id → true pencil index; outliers map to `None`.
    pub labels: BTreeMap<u64, Option<u64>>,
    pub vps: Vec<Vec2>,
}

/// Vanishing points are drawn in `[-1, 1]²` at least 0.5 apart; each pencil
/// segment starts 0.3 to 1 away from its vanishing point and is 0.5 to 1 long.
pub fn make_pencils(spec: &PencilSpec) -> PencilSet {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma.max(0.0)).expect("finite sigma");
    let mut vps: Vec<Vec2> = Vec::with_capacity(spec.num_vps);
    while vps.len() < spec.num_vps {
        let v = Vec2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if vps.iter().all(|u| (u - v).norm() >= 0.5) {
            vps.push(v);
        }
    }
    let mut set = PencilSet { segments: Vec::new(), labels: BTreeMap::new(), vps: vps.clone() };
    for (label, vp) in vps.iter().enumerate() {
        for _ in 0..spec.lines_per_vp {
            let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let dir = Vec2::new(angle.cos(), angle.sin());
            let start = rng.random_range(0.3..1.0);
            let len = rng.random_range(0.5..1.0);
            let id = set.segments.len() as u64;
            let mut jitter = || Vec2::new(noise.sample(&mut rng), noise.sample(&mut rng));
            let p_s = vp + dir * start + jitter();
            let p_e = vp + dir * (start + len) + jitter();
            set.segments.push(Segment2D::new(id, p_s, p_e));
            set.labels.insert(id, Some(label as u64));
        }
    }
    let n_outliers = (spec.outlier_fraction * (spec.num_vps * spec.lines_per_vp) as f64).round() as usize;
    for _ in 0..n_outliers {
        let mid = Vec2::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
        let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let half = 0.5 * rng.random_range(0.5..1.0);
        let offset = Vec2::new(angle.cos(), angle.sin()) * half;
        let id = set.segments.len() as u64;
        set.segments.push(Segment2D::new(id, mid - offset, mid + offset));
        set.labels.insert(id, None);
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factors::{line_residual, project_line};
    use crate::geometry::line_error;

    #[test]
    fn scene_counts_and_classes() {
        let spec = SceneSpec { lines_per_direction: 5, ..Default::default() };
        let lines = make_scene(&spec).unwrap();
        assert_eq!(lines.len(), 15);
        for class in 0..3u64 {
            let members: Vec<_> = lines.iter().filter(|l| l.class == Some(class)).collect();
            assert_eq!(members.len(), 5);
            for pair in members.windows(2) {
                assert_eq!(line_error(&pair[0].line, &pair[1].line).direction_error, 0.0);
            }
        }
        assert_eq!(make_scene(&spec).unwrap(), lines);
    }

    #[test]
    fn trajectory_shapes() {
        let spec = TrajectorySpec { frames: 5, ..Default::default() };
        let poses = make_trajectory(&spec).unwrap();
        for p in &poses {
            assert_eq!(p.rotation, poses[0].rotation);
            assert!(p.position.cross(&spec.direction).norm() < 1e-15);
        }
        let orbit = TrajectorySpec { kind: TrajectoryKind::Orbit, frames: 8, ..Default::default() };
        for p in make_trajectory(&orbit).unwrap() {
            assert!(((p.position - orbit.center).norm() - orbit.radius).abs() < 1e-12);
            let forward = p.rotation * Vec3::z();
            assert!(forward.cross(&(orbit.center - p.position)).norm() < 1e-12);
        }
        let corridor = TrajectorySpec { kind: TrajectoryKind::ForwardCorridor, direction: Vec3::x(), ..Default::default() };
        let poses = make_trajectory(&corridor).unwrap();
        assert!(((poses[1].position - poses[0].position).normalize() - Vec3::x()).norm() < 1e-15);
        assert!((poses[0].rotation * Vec3::z() - Vec3::x()).norm() < 1e-15);
    }

    #[test]
    fn look_rotation_is_proper() {
        for f in [Vec3::z(), Vec3::x(), Vec3::new(0.3, -0.2, 1.0), Vec3::y()] {
            let r = look_rotation(&f).into_inner();
            assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-12);
            assert!((r.determinant() - 1.0).abs() < 1e-12);
        }
        assert_eq!(look_rotation(&Vec3::z()).into_inner(), Matrix3::identity());
    }

    #[test]
    fn noise_free_segments_lie_on_projection() {
        let spec = SimulationSpec { render: RenderSpec { noise_sigma: 0.0, ..Default::default() }, ..Default::default() };
        let data = simulate(&spec).unwrap();
        let mut count = 0;
        for frame in &data.frames {
            for seg in &frame.segments {
                let line = data.line(frame.associations[&seg.id]).unwrap();
                let cam = transform_line(&line.line, &frame.pose).unwrap();
                let r = line_residual(&project_line(&cam, &Intrinsics::default()), &seg.p_s, &seg.p_e).unwrap();
                assert!(r.norm() < 1e-12, "{r:?}");
                count += 1;
            }
        }
        assert!(count > 50);
    }

    #[test]
    fn lines_along_translation_are_degenerate() {
        let data = simulate(&SimulationSpec::default()).unwrap();
        let flags = &data.frames[0].degenerate_flags;
        for line in &data.header.lines {
            if let Some(&flag) = flags.get(&line.id) {
                assert_eq!(flag, line.class == Some(0), "line {}", line.id);
            }
        }
        assert!(flags.iter().any(|(_, &f)| f));
    }

    #[test]
    fn clip_interval_cases() {
        assert_eq!(clip_interval(&[(1.0, 1.0), (1.0, -1.0)], -10.0, 10.0), Some((-1.0, 1.0)));
        assert_eq!(clip_interval(&[(-1.0, 0.0)], -10.0, 10.0), None);
        assert_eq!(clip_interval(&[(1.0, 1.0), (-2.0, -1.0)], -10.0, 10.0), None);
    }

    #[test]
    fn pencils_have_requested_shape() {
        let set = make_pencils(&PencilSpec::default());
        assert_eq!(set.segments.len(), 33);
        assert_eq!(set.labels.values().filter(|l| l.is_none()).count(), 3);
        assert_eq!(set.vps.len(), 3);
    }
}
