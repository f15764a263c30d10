//! Dataset → measurements → windowed solve → metrics.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use vpline::estimator::{
    build_problem, initialize_lines, line_information, optimize, slide_window, LineMeasurement, MeasurementSet, SolveStats,
    VpMeasurement, WindowState,
};
use vpline::geometry::{line_error, to_plucker, CameraPose, LineMetrics, Segment2D};
use vpline::observability::FimReport;
use vpline::simulator::{Dataset, FrameBundle};
use vpline::vp_detect::{assignment_accuracy, fit_vp, jlinkage_cluster, JLinkageParams};

use crate::config::{ExperimentConfig, VpSource};

/// Vanishing-point measurements of one frame, and the clustering accuracy
/// when they came from J-linkage.
pub fn frame_vp_measurements(
    dataset: &Dataset,
    frame: &FrameBundle,
    source: VpSource,
    params: &JLinkageParams,
) -> vpline::Result<(Vec<VpMeasurement>, Option<f64>)> {
    let class_of = |seg: &Segment2D| {
        frame.associations.get(&seg.id).and_then(|line| dataset.line(*line)).and_then(|l| l.class)
    };
    let mut out = Vec::new();
    match source {
        VpSource::Truth => {
            let mut classes: BTreeMap<u64, Vec<Segment2D>> = BTreeMap::new();
            for seg in &frame.segments {
                if let Some(c) = class_of(seg) {
                    classes.entry(c).or_default().push(*seg);
                }
            }
            for members in classes.values() {
                let Ok(v) = fit_vp(members) else { continue };
                if v[2].abs() <= vpline::vp_detect::FINITE_VP_EPS * v.norm() {
                    continue;
                }
                let p_v = v.xy() / v[2];
                for seg in members {
                    out.push(VpMeasurement { frame_id: frame.frame_id, track_id: frame.associations[&seg.id], p_v });
                }
            }
            Ok((out, None))
        }
        VpSource::Jlinkage => {
            if frame.segments.len() < 2 {
                return Ok((out, None));
            }
            let params = JLinkageParams { rng_seed: params.rng_seed ^ frame.frame_id.wrapping_mul(0x9E37_79B9_7F4A_7C15), ..*params };
            let result = jlinkage_cluster(&frame.segments, &params)?;
            let labels: BTreeMap<u64, Option<u64>> = frame.segments.iter().map(|s| (s.id, class_of(s))).collect();
            let accuracy = assignment_accuracy(&result, &labels);
            for cluster in result.clusters.iter().filter(|c| c.is_finite) {
                for id in &cluster.member_ids {
                    if let Some(track) = frame.associations.get(id) {
                        out.push(VpMeasurement { frame_id: frame.frame_id, track_id: *track, p_v: cluster.p_v });
                    }
                }
            }
            Ok((out, Some(accuracy)))
        }
    }
}

/// All measurements of one frame. Outlier segments (no association) are not tracked.
pub fn frame_measurements(
    dataset: &Dataset,
    frame: &FrameBundle,
    config: &ExperimentConfig,
    seed: u64,
) -> vpline::Result<(MeasurementSet, Option<f64>)> {
    let mut meas = MeasurementSet { line_sigma: config.line_sigma, vp_sigma: config.vp_sigma, ..Default::default() };
    for seg in &frame.segments {
        if let Some(&track) = frame.associations.get(&seg.id) {
            meas.line_obs.push(LineMeasurement { frame_id: frame.frame_id, track_id: track, segment: Segment2D { id: track, ..*seg } });
        }
    }
    let mut accuracy = None;
    if config.use_vp {
        let params = JLinkageParams { rng_seed: config.jlinkage.rng_seed ^ seed, ..config.jlinkage };
        let (vp, acc) = frame_vp_measurements(dataset, frame, config.vp_source, &params)?;
        meas.vp_obs = vp;
        accuracy = acc;
    }
    Ok((meas, accuracy))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineResult {
    pub id: u64,
    pub class: Option<u64>,
    /// Degeneracy label from the dataset (triangulation on true poses).
    pub degenerate: bool,
    pub degenerate_init: bool,
    pub metrics: LineMetrics,
    pub rank_line: usize,
    pub rank_vp: usize,
    pub rank_total: usize,
    pub singular_values_total: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub lines: Vec<LineResult>,
    /// Stats of every window solve, in order.
    pub solves: Vec<SolveStats>,
    pub pose_rmse: f64,
    pub clustering_accuracy: Option<f64>,
    pub skipped_tracks: Vec<u64>,
}

impl RunResult {
    pub fn final_cost(&self) -> f64 {
        self.solves.last().map_or(0.0, |s| s.final_cost)
    }
}

/// Information blocks are evaluated either at the estimate or at ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InformationAt {
    Estimate,
    Truth,
}

/// Runs the sliding-window estimator over the whole dataset. A window is
/// solved whenever it is full and once more after the last frame. New poses
/// start at their recorded pose.
pub fn run_sequence(dataset: &Dataset, config: &ExperimentConfig, seed: u64, info_at: InformationAt) -> vpline::Result<RunResult> {
    let opts = &config.solver;
    let mut window = WindowState::new(config.window_size);
    let mut meas = MeasurementSet { line_sigma: config.line_sigma, vp_sigma: config.vp_sigma, ..Default::default() };
    let mut map = BTreeMap::new();
    let mut degenerate_init = BTreeSet::new();
    let mut final_poses: BTreeMap<u64, CameraPose> = BTreeMap::new();
    let mut solves = Vec::new();
    let mut accuracies = Vec::new();
    let mut skipped = BTreeSet::new();
    let mut last_info = BTreeMap::new();

    for (idx, frame) in dataset.frames.iter().enumerate() {
        let (frame_meas, acc) = frame_measurements(dataset, frame, config, seed)?;
        accuracies.extend(acc);
        if let (true, Some(&oldest)) = (window.frame_ids.len() >= window.capacity, window.frame_ids.first()) {
            final_poses.insert(oldest, window.poses[0]);
        }
        let slide = slide_window(&window, &meas, frame.frame_id, frame.pose, &frame_meas)?;
        map.extend(slide.retired);
        window = slide.window;
        meas = slide.measurements;
        let last = idx + 1 == dataset.frames.len();
        if window.frame_ids.len() < 2 || !(window.frame_ids.len() == window.capacity || last) {
            continue;
        }
        let (state, report) = initialize_lines(&window, &meas, opts)?;
        skipped.extend(report.too_short.iter().chain(&report.failed).copied());
        degenerate_init.extend(state.degenerate_init.iter().copied());
        let sub = meas.restricted_to(&state);
        let problem = build_problem(&state, &sub, opts)?;
        let (solved, stats) = optimize(&problem)?;
        solves.push(stats);
        window = solved;
        let info_state = match info_at {
            InformationAt::Estimate => window.clone(),
            InformationAt::Truth => truth_state(dataset, &window),
        };
        last_info.extend(line_information(&info_state, &sub, &opts.intrinsics));
    }
    for (k, id) in window.frame_ids.iter().enumerate() {
        final_poses.insert(*id, window.poses[k]);
    }
    map.extend(window.lines.iter().map(|(k, v)| (*k, *v)));

    let flags: BTreeMap<u64, bool> =
        dataset.frames.iter().flat_map(|f| f.degenerate_flags.iter().map(|(k, v)| (*k, *v))).collect();
    let mut lines = Vec::new();
    for (id, est) in &map {
        let Some(truth) = dataset.line(*id) else { continue };
        let Ok(est) = to_plucker(est) else { continue };
        let fim = last_info.get(id).cloned().unwrap_or_else(|| FimReport::from_blocks(&[], &[]));
        lines.push(LineResult {
            id: *id,
            class: truth.class,
            degenerate: flags.get(id).copied().unwrap_or(false),
            degenerate_init: degenerate_init.contains(id),
            metrics: line_error(&est, &truth.line),
            rank_line: fim.rank_line,
            rank_vp: fim.rank_vp,
            rank_total: fim.rank_total,
            singular_values_total: fim.singular_values.total,
        });
    }
    let errors: Vec<f64> = dataset
        .frames
        .iter()
        .filter_map(|f| final_poses.get(&f.frame_id).map(|p| (p.camera_center() - f.pose.camera_center()).norm_squared()))
        .collect();
    let pose_rmse = if errors.is_empty() { 0.0 } else { (errors.iter().sum::<f64>() / errors.len() as f64).sqrt() };
    let clustering_accuracy = (!accuracies.is_empty()).then(|| median(&accuracies));
    Ok(RunResult { lines, solves, pose_rmse, clustering_accuracy, skipped_tracks: skipped.into_iter().collect() })
}

/// The window with every pose and line replaced by its ground truth.
pub fn truth_state(dataset: &Dataset, window: &WindowState) -> WindowState {
    let mut state = window.clone();
    for (k, id) in window.frame_ids.iter().enumerate() {
        if let Some(f) = dataset.frames.iter().find(|f| f.frame_id == *id) {
            state.poses[k] = f.pose;
        }
    }
    for (id, line) in state.lines.iter_mut() {
        if let Some(Ok(o)) = dataset.line(*id).map(|l| vpline::geometry::to_orthonormal(&l.line.normalized())) {
            *line = o;
        }
    }
    state
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
