//! The subcommands, minus argument parsing. Each returns a serializable
//! report; `write_*` helpers put reports and CSV tables on disk.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vpline::estimator::SolveStats;
use vpline::factors::{line_jacobian, project_line, vp_jacobian, Intrinsics};
use vpline::geometry::{to_orthonormal, transform_line, Segment2D, Vec2};
use vpline::observability::{is_slope_degenerate, FimReport};
use vpline::simulator::{make_pencils, parse_dataset, simulate, write_dataset, Dataset, TrajectoryKind};
use vpline::vp_detect::{assignment_accuracy, jlinkage_cluster, ClusterResult};

use crate::config::{ConfigError, ExperimentConfig};
use crate::pipeline::{frame_vp_measurements, median, run_sequence, InformationAt, LineResult, RunResult};

/// Version of every results file and CSV table written here.
pub const RESULTS_SCHEMA_VERSION: u32 = 1;

/// Relative tolerance of the slope-degeneracy audit.
pub const SLOPE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("data error: {0}")]
    Data(String),
    #[error("solver error: {0}")]
    Solver(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Solver(_) => 4,
        }
    }

    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Data(format!("{}: {err}", path.display()))
    }
}

impl From<vpline::Error> for CliError {
    fn from(err: vpline::Error) -> Self {
        use vpline::Error as E;
        match err {
            E::InvalidParameter(msg) => CliError::Config(ConfigError::Invalid(msg)),
            E::SingularNormalEquations { .. } | E::IllConditioned => CliError::Solver(err.to_string()),
            _ => CliError::Data(err.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub name: String,
    pub sha256: String,
}

/// What every results file looks like: the resolved config, digests of the
/// inputs, and the command's own report.
#[derive(Clone, Debug, Serialize)]
pub struct Envelope<'a, T> {
    pub schema_version: u32,
    pub command: &'static str,
    pub config: &'a ExperimentConfig,
    pub inputs: Vec<InputDigest>,
    pub result: &'a T,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A dataset together with the bytes it was read from (or would be written as).
#[derive(Clone, Debug)]
pub struct Input {
    pub seed: u64,
    pub name: String,
    pub dataset: Dataset,
    pub sha256: String,
}

pub fn dataset_bytes(dataset: &Dataset) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    write_dataset(dataset, &mut buf)?;
    Ok(buf)
}

/// One simulated dataset per configured seed.
pub fn simulated_inputs(config: &ExperimentConfig) -> CliResult<Vec<Input>> {
    config
        .seeds
        .par_iter()
        .map(|&seed| {
            let dataset = simulate(&config.simulation_for_seed(seed))?;
            let sha256 = sha256_hex(&dataset_bytes(&dataset)?);
            Ok(Input { seed, name: dataset_file_name(seed), dataset, sha256 })
        })
        .collect()
}

/// A dataset file. Its seed (for J-linkage sampling and reporting) is the
/// noise seed recorded in its header.
pub fn file_input(path: &Path) -> CliResult<Input> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let dataset = parse_dataset(bytes.as_slice())?;
    let seed = dataset.header.spec.render.seed;
    Ok(Input { seed, name: path.display().to_string(), dataset, sha256: sha256_hex(&bytes) })
}

pub fn dataset_file_name(seed: u64) -> String {
    format!("dataset_seed{seed}.jsonl")
}

pub fn input_digests(inputs: &[Input]) -> Vec<InputDigest> {
    inputs.iter().map(|i| InputDigest { name: i.name.clone(), sha256: i.sha256.clone() }).collect()
}

// ---------------------------------------------------------------- simulate

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub files: Vec<InputDigest>,
}

/// Writes one dataset per seed into the output directory.
pub fn cmd_simulate(config: &ExperimentConfig) -> CliResult<SimulateReport> {
    let inputs = simulated_inputs(config)?;
    let mut files = Vec::new();
    for input in &inputs {
        let path = config.output_dir.join(&input.name);
        std::fs::write(&path, dataset_bytes(&input.dataset)?).map_err(|e| CliError::io(&path, e))?;
        files.push(InputDigest { name: path.display().to_string(), sha256: input.sha256.clone() });
    }
    Ok(SimulateReport { files })
}

/// Segments as read and written by `cluster`. Labels and vanishing points
/// are optional; with labels the report includes an accuracy.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SegmentsFile {
    pub segments: Vec<Segment2D>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<BTreeMap<u64, Option<u64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vps: Option<Vec<Vec2>>,
}

/// Writes one labeled pencil file per seed.
pub fn cmd_simulate_pencils(config: &ExperimentConfig) -> CliResult<SimulateReport> {
    let mut files = Vec::new();
    for &seed in &config.seeds {
        let set = make_pencils(&vpline::simulator::PencilSpec { seed, ..config.pencils });
        let file = SegmentsFile { segments: set.segments, labels: Some(set.labels), vps: Some(set.vps) };
        let bytes = serde_json::to_vec_pretty(&file).map_err(vpline::Error::from)?;
        let path = config.output_dir.join(format!("pencils_seed{seed}.json"));
        std::fs::write(&path, &bytes).map_err(|e| CliError::io(&path, e))?;
        files.push(InputDigest { name: path.display().to_string(), sha256: sha256_hex(&bytes) });
    }
    Ok(SimulateReport { files })
}

// ------------------------------------------------------------------- solve

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub input: String,
    pub pose_rmse: f64,
    pub final_cost: f64,
    pub median_direction_error: f64,
    pub median_distance_error: f64,
    pub clustering_accuracy: Option<f64>,
    pub skipped_tracks: Vec<u64>,
    pub solves: Vec<SolveStats>,
    pub lines: Vec<LineResult>,
}

impl SeedRecord {
    fn new(input: &Input, run: RunResult) -> Self {
        let dir: Vec<f64> = run.lines.iter().map(|l| l.metrics.direction_error).collect();
        let dist: Vec<f64> = run.lines.iter().map(|l| l.metrics.orthogonal_distance_error).collect();
        Self {
            seed: input.seed,
            input: input.name.clone(),
            pose_rmse: run.pose_rmse,
            final_cost: run.final_cost(),
            median_direction_error: median(&dir),
            median_distance_error: median(&dist),
            clustering_accuracy: run.clustering_accuracy,
            skipped_tracks: run.skipped_tracks,
            solves: run.solves,
            lines: run.lines,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub median_pose_rmse: f64,
    pub median_final_cost: f64,
    pub median_direction_error: f64,
    pub median_distance_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub use_vp: bool,
    pub seeds: Vec<SeedRecord>,
    pub aggregate: Aggregate,
}

fn run_all(inputs: &[Input], config: &ExperimentConfig, info_at: InformationAt) -> CliResult<Vec<(u64, RunResult)>> {
    let mut runs = inputs
        .par_iter()
        .map(|input| Ok((input.seed, run_sequence(&input.dataset, config, input.seed, info_at)?)))
        .collect::<CliResult<Vec<_>>>()?;
    runs.sort_by_key(|(seed, _)| *seed);
    Ok(runs)
}

pub fn cmd_solve(config: &ExperimentConfig, inputs: &[Input]) -> CliResult<SolveReport> {
    let runs = run_all(inputs, config, InformationAt::Estimate)?;
    let mut seeds: Vec<SeedRecord> =
        inputs.iter().zip(runs).map(|(input, (_, run))| SeedRecord::new(input, run)).collect();
    seeds.sort_by_key(|s| s.seed);
    let pick = |f: fn(&SeedRecord) -> f64| median(&seeds.iter().map(f).collect::<Vec<_>>());
    let aggregate = Aggregate {
        median_pose_rmse: pick(|s| s.pose_rmse),
        median_final_cost: pick(|s| s.final_cost),
        median_direction_error: pick(|s| s.median_direction_error),
        median_distance_error: pick(|s| s.median_distance_error),
    };
    Ok(SolveReport { use_vp: config.use_vp, seeds, aggregate })
}

// ----------------------------------------------------------- ab-degeneracy

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub use_vp: bool,
    /// Median direction error (radians) over degenerate lines, pooled across seeds.
    pub median_direction_error: f64,
    pub median_direction_error_deg: f64,
    /// The same over non-degenerate lines.
    pub median_direction_error_generic: f64,
    pub degenerate_lines: usize,
    /// Rank of the information at ground truth → number of degenerate lines.
    pub rank_total_histogram: BTreeMap<usize, usize>,
    pub median_pose_rmse: f64,
    pub median_clustering_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbReport {
    pub with_vp: ArmSummary,
    pub without_vp: ArmSummary,
    /// Without-VP median over with-VP median.
    pub improvement_ratio: f64,
    pub with_vp_seeds: Vec<SeedRecord>,
    pub without_vp_seeds: Vec<SeedRecord>,
}

fn summarize(use_vp: bool, seeds: &[SeedRecord]) -> ArmSummary {
    let degenerate: Vec<&LineResult> = seeds.iter().flat_map(|s| &s.lines).filter(|l| l.degenerate).collect();
    let errors: Vec<f64> = degenerate.iter().map(|l| l.metrics.direction_error).collect();
    let generic: Vec<f64> =
        seeds.iter().flat_map(|s| &s.lines).filter(|l| !l.degenerate).map(|l| l.metrics.direction_error).collect();
    let mut rank_total_histogram = BTreeMap::new();
    for l in &degenerate {
        *rank_total_histogram.entry(l.rank_total).or_insert(0) += 1;
    }
    let accuracies: Vec<f64> = seeds.iter().filter_map(|s| s.clustering_accuracy).collect();
    ArmSummary {
        use_vp,
        median_direction_error: median(&errors),
        median_direction_error_deg: median(&errors).to_degrees(),
        median_direction_error_generic: median(&generic),
        degenerate_lines: degenerate.len(),
        rank_total_histogram,
        median_pose_rmse: median(&seeds.iter().map(|s| s.pose_rmse).collect::<Vec<_>>()),
        median_clustering_accuracy: (!accuracies.is_empty()).then(|| median(&accuracies)),
    }
}

/// Paired solves with and without VP factors on identical datasets.
/// Information blocks are evaluated at ground truth.
pub fn cmd_ab_degeneracy(config: &ExperimentConfig, inputs: &[Input]) -> CliResult<AbReport> {
    if config.simulation.trajectory.kind != TrajectoryKind::PureTranslation {
        return Err(ConfigError::Invalid("ab-degeneracy needs a pure_translation trajectory".into()).into());
    }
    let arm = |use_vp: bool| -> CliResult<Vec<SeedRecord>> {
        let cfg = ExperimentConfig { use_vp, ..config.clone() };
        let runs = run_all(inputs, &cfg, InformationAt::Truth)?;
        let mut seeds: Vec<SeedRecord> =
            inputs.iter().zip(runs).map(|(input, (_, run))| SeedRecord::new(input, run)).collect();
        seeds.sort_by_key(|s| s.seed);
        Ok(seeds)
    };
    let with_vp_seeds = arm(true)?;
    let without_vp_seeds = arm(false)?;
    let with_vp = summarize(true, &with_vp_seeds);
    let without_vp = summarize(false, &without_vp_seeds);
    let improvement_ratio = without_vp.median_direction_error / with_vp.median_direction_error;
    Ok(AbReport { with_vp, without_vp, improvement_ratio, with_vp_seeds, without_vp_seeds })
}

// --------------------------------------------------------------------- fim

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FimLine {
    pub seed: u64,
    pub id: u64,
    pub class: Option<u64>,
    pub degenerate: bool,
    pub observations: usize,
    pub vp_observations: usize,
    /// Ranks of the information summed over every frame.
    pub rank_line: usize,
    pub rank_vp: usize,
    pub rank_total: usize,
    pub singular_values_total: Vec<f64>,
    pub slope_degenerate_observations: usize,
    /// Single-observation rank of the line block → count.
    pub single_view_rank_line: BTreeMap<usize, usize>,
    /// Single-observation rank of line and VP blocks stacked → count (frames with a VP only).
    pub single_view_rank_total: BTreeMap<usize, usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FimSummary {
    pub lines: usize,
    pub lines_rank_4: usize,
    pub lines_rank_3: usize,
    pub lines_rank_le_2: usize,
    pub vp_covered_lines: usize,
    pub vp_covered_rank_4: usize,
    pub vp_less_lines: usize,
    pub vp_less_rank_le_2: usize,
    pub observations: usize,
    pub slope_degenerate_observations: usize,
    pub injected_observations: usize,
    pub single_view_rank_line: BTreeMap<usize, usize>,
    pub single_view_rank_total: BTreeMap<usize, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FimReportFile {
    pub summary: FimSummary,
    pub lines: Vec<FimLine>,
}

/// Replaces the first `count` tracked observations with ones whose segment
/// runs along the normal of the true projected line.
pub fn inject_slope_degenerate(dataset: &mut Dataset, count: usize) -> vpline::Result<usize> {
    let k = Intrinsics::default();
    let mut done = 0;
    for f in 0..dataset.frames.len() {
        for s in 0..dataset.frames[f].segments.len() {
            if done == count {
                return Ok(done);
            }
            let frame = &dataset.frames[f];
            let seg = frame.segments[s];
            let Some(line) = frame.associations.get(&seg.id).and_then(|id| dataset.line(*id)) else { continue };
            let l = project_line(&transform_line(&line.line, &frame.pose)?, &k);
            let normal = Vec2::new(l[0], l[1]);
            let l_d = normal.norm();
            if l_d == 0.0 {
                continue;
            }
            let mid = seg.midpoint();
            let foot = mid - normal * ((normal.dot(&mid) + l[2]) / (l_d * l_d));
            let replaced = Segment2D::new(seg.id, foot, foot + normal / l_d * seg.length());
            dataset.frames[f].segments[s] = replaced;
            done += 1;
        }
    }
    Ok(done)
}

fn bump(map: &mut BTreeMap<usize, usize>, key: usize) {
    *map.entry(key).or_insert(0) += 1;
}

fn fim_lines(input: &Input, config: &ExperimentConfig) -> CliResult<Vec<FimLine>> {
    let data = &input.dataset;
    let k = &config.solver.intrinsics;
    let omega_l = nalgebra::Matrix2::identity() / config.line_sigma.powi(2);
    let omega_v = nalgebra::Matrix2::identity() / config.vp_sigma.powi(2);
    let mut out = Vec::new();
    let flags: BTreeMap<u64, bool> =
        data.frames.iter().flat_map(|f| f.degenerate_flags.iter().map(|(a, b)| (*a, *b))).collect();
    let mut vp_by_frame = Vec::new();
    for frame in &data.frames {
        let vps = if config.use_vp {
            let params = vpline::vp_detect::JLinkageParams { rng_seed: config.jlinkage.rng_seed ^ input.seed, ..config.jlinkage };
            frame_vp_measurements(data, frame, config.vp_source, &params)?.0
        } else {
            Vec::new()
        };
        vp_by_frame.push(vps);
    }
    for truth in &data.header.lines {
        let Ok(line) = to_orthonormal(&truth.line) else { continue };
        let mut record = FimLine {
            seed: input.seed,
            id: truth.id,
            class: truth.class,
            degenerate: flags.get(&truth.id).copied().unwrap_or(false),
            observations: 0,
            vp_observations: 0,
            rank_line: 0,
            rank_vp: 0,
            rank_total: 0,
            singular_values_total: Vec::new(),
            slope_degenerate_observations: 0,
            single_view_rank_line: BTreeMap::new(),
            single_view_rank_total: BTreeMap::new(),
        };
        let (mut line_blocks, mut vp_blocks) = (Vec::new(), Vec::new());
        for (frame, vps) in data.frames.iter().zip(&vp_by_frame) {
            let Some(seg) = frame.segments.iter().find(|s| frame.associations.get(&s.id) == Some(&truth.id)) else {
                continue;
            };
            let Ok(eval) = line_jacobian(&frame.pose, &line, seg, k) else { continue };
            record.observations += 1;
            line_blocks.push((eval.j_line, omega_l));
            let l = project_line(&transform_line(&truth.line, &frame.pose)?, k);
            if is_slope_degenerate(&l, &seg.p_s, &seg.p_e, SLOPE_TOLERANCE) {
                record.slope_degenerate_observations += 1;
            }
            let single_line = FimReport::from_blocks(&[(eval.j_line, omega_l)], &[]);
            bump(&mut record.single_view_rank_line, single_line.rank_line);
            let vp_eval = vps
                .iter()
                .find(|m| m.track_id == truth.id)
                .and_then(|m| vp_jacobian(&frame.pose, &line, &m.p_v, k).ok());
            if let Some(v) = vp_eval {
                record.vp_observations += 1;
                vp_blocks.push((v.j_line, omega_v));
                let single = FimReport::from_blocks(&[(eval.j_line, omega_l)], &[(v.j_line, omega_v)]);
                bump(&mut record.single_view_rank_total, single.rank_total);
            }
        }
        if record.observations == 0 {
            continue;
        }
        let report = FimReport::from_blocks(&line_blocks, &vp_blocks);
        record.rank_line = report.rank_line;
        record.rank_vp = report.rank_vp;
        record.rank_total = report.rank_total;
        record.singular_values_total = report.singular_values.total;
        out.push(record);
    }
    Ok(out)
}

/// Information audit at ground truth over every frame of each dataset.
pub fn cmd_fim(config: &ExperimentConfig, inputs: &[Input]) -> CliResult<FimReportFile> {
    let mut injected = 0;
    let mut prepared = Vec::new();
    for input in inputs {
        let mut input = input.clone();
        injected += inject_slope_degenerate(&mut input.dataset, config.inject_slope_degenerate)?;
        prepared.push(input);
    }
    let per_input = prepared.par_iter().map(|input| fim_lines(input, config)).collect::<CliResult<Vec<_>>>()?;
    let mut lines: Vec<FimLine> = per_input.into_iter().flatten().collect();
    lines.sort_by_key(|l| (l.seed, l.id));
    let mut s = FimSummary { injected_observations: injected, ..Default::default() };
    for l in &lines {
        s.lines += 1;
        match l.rank_total {
            4 => s.lines_rank_4 += 1,
            3 => s.lines_rank_3 += 1,
            _ => s.lines_rank_le_2 += 1,
        }
        if l.vp_observations > 0 {
            s.vp_covered_lines += 1;
            s.vp_covered_rank_4 += usize::from(l.rank_total == 4);
        } else {
            s.vp_less_lines += 1;
            s.vp_less_rank_le_2 += usize::from(l.rank_total <= 2);
        }
        s.observations += l.observations;
        s.slope_degenerate_observations += l.slope_degenerate_observations;
        for (rank, n) in &l.single_view_rank_line {
            *s.single_view_rank_line.entry(*rank).or_insert(0) += n;
        }
        for (rank, n) in &l.single_view_rank_total {
            *s.single_view_rank_total.entry(*rank).or_insert(0) += n;
        }
    }
    Ok(FimReportFile { summary: s, lines })
}

// ----------------------------------------------------------------- cluster

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub result: ClusterResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    /// Per true vanishing point, distance to the cluster holding most of its segments.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vp_errors: Option<Vec<f64>>,
}

pub fn read_segments(path: &Path) -> CliResult<(SegmentsFile, String)> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let file: SegmentsFile = serde_json::from_slice(&bytes).map_err(|e| CliError::io(path, e))?;
    Ok((file, sha256_hex(&bytes)))
}

/// Distance from each true vanishing point to the cluster holding most of its segments.
pub fn vp_errors(result: &ClusterResult, labels: &BTreeMap<u64, Option<u64>>, vps: &[Vec2]) -> Vec<f64> {
    (0..vps.len() as u64)
        .map(|label| {
            let best = result
                .clusters
                .iter()
                .max_by_key(|c| c.member_ids.iter().filter(|id| labels.get(id) == Some(&Some(label))).count());
            match best {
                Some(c) if c.is_finite => (c.p_v - vps[label as usize]).norm(),
                _ => f64::INFINITY,
            }
        })
        .collect()
}

pub fn cmd_cluster(config: &ExperimentConfig, file: &SegmentsFile) -> CliResult<ClusterReport> {
    if file.segments.is_empty() {
        return Err(CliError::Data("no segments in input (expected {\"segments\": [{\"id\", \"p_s\", \"p_e\"}, ...]})".into()));
    }
    let params = vpline::vp_detect::JLinkageParams { rng_seed: config.jlinkage.rng_seed ^ config.seeds[0], ..config.jlinkage };
    let result = jlinkage_cluster(&file.segments, &params)?;
    let accuracy = file.labels.as_ref().map(|labels| assignment_accuracy(&result, labels));
    let vp_errors = match (&file.labels, &file.vps) {
        (Some(labels), Some(vps)) => Some(vp_errors(&result, labels, vps)),
        _ => None,
    };
    Ok(ClusterReport { result, accuracy, vp_errors })
}

// ----------------------------------------------------------------- writing

pub fn write_json<T: Serialize>(
    path: &Path,
    command: &'static str,
    config: &ExperimentConfig,
    inputs: Vec<InputDigest>,
    result: &T,
) -> CliResult<()> {
    let envelope = Envelope { schema_version: RESULTS_SCHEMA_VERSION, command, config, inputs, result };
    let mut text = serde_json::to_string_pretty(&envelope).map_err(vpline::Error::from)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// One row per line of one run; see `docs/csv_schema.md`.
#[derive(Clone, Debug, Serialize)]
struct LineRow<'a> {
    schema_version: u32,
    seed: u64,
    arm: &'a str,
    line_id: u64,
    class: Option<u64>,
    degenerate: bool,
    degenerate_init: bool,
    direction_error_rad: f64,
    distance_error_m: f64,
    rank_line: usize,
    rank_vp: usize,
    rank_total: usize,
    min_singular_value: f64,
}

pub fn write_lines_csv(path: &Path, arms: &[(&str, &[SeedRecord])]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    for (arm, seeds) in arms {
        for s in *seeds {
            for l in &s.lines {
                w.serialize(LineRow {
                    schema_version: RESULTS_SCHEMA_VERSION,
                    seed: s.seed,
                    arm,
                    line_id: l.id,
                    class: l.class,
                    degenerate: l.degenerate,
                    degenerate_init: l.degenerate_init,
                    direction_error_rad: l.metrics.direction_error,
                    distance_error_m: l.metrics.orthogonal_distance_error,
                    rank_line: l.rank_line,
                    rank_vp: l.rank_vp,
                    rank_total: l.rank_total,
                    min_singular_value: l.singular_values_total.last().copied().unwrap_or(0.0),
                })
                .map_err(|e| CliError::io(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

#[derive(Clone, Debug, Serialize)]
struct FimRow {
    schema_version: u32,
    seed: u64,
    line_id: u64,
    class: Option<u64>,
    degenerate: bool,
    observations: usize,
    vp_observations: usize,
    rank_line: usize,
    rank_vp: usize,
    rank_total: usize,
    min_singular_value: f64,
    slope_degenerate_observations: usize,
}

pub fn write_fim_csv(path: &Path, report: &FimReportFile) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    for l in &report.lines {
        w.serialize(FimRow {
            schema_version: RESULTS_SCHEMA_VERSION,
            seed: l.seed,
            line_id: l.id,
            class: l.class,
            degenerate: l.degenerate,
            observations: l.observations,
            vp_observations: l.vp_observations,
            rank_line: l.rank_line,
            rank_vp: l.rank_vp,
            rank_total: l.rank_total,
            min_singular_value: l.singular_values_total.last().copied().unwrap_or(0.0),
            slope_degenerate_observations: l.slope_degenerate_observations,
        })
        .map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

#[derive(Clone, Debug, Serialize)]
struct CostRow<'a> {
    schema_version: u32,
    seed: u64,
    arm: &'a str,
    solve: usize,
    iteration: usize,
    cost: f64,
}

/// Cost traces of every window solve.
pub fn write_cost_csv(path: &Path, arms: &[(&str, &[SeedRecord])]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    for (arm, seeds) in arms {
        for s in *seeds {
            for (solve, stats) in s.solves.iter().enumerate() {
                for (iteration, cost) in stats.cost_trace.iter().enumerate() {
                    w.serialize(CostRow { schema_version: RESULTS_SCHEMA_VERSION, seed: s.seed, arm, solve, iteration, cost: *cost })
                        .map_err(|e| CliError::io(path, e))?;
                }
            }
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Creates the output directory.
pub fn prepare_output(dir: &Path) -> CliResult<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    Ok(dir.to_path_buf())
}
