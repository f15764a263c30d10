//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::time::{Duration, Instant};

use common::{camera_to_world, project, random_config, random_plucker, random_pose, random_rotation, random_unit, rng, unit_vector3};
use nalgebra::{Matrix2, Matrix2x4, Matrix2x6, Matrix3x4, Rotation3, Vector3, Vector4};
use rand::Rng;
use vpline::factors::{line_jacobian, line_residual_at, vp_jacobian, vp_residual_at, Intrinsics};
use vpline::geometry::{
    line_error, orthonormal_update, plucker_from_points, to_orthonormal, to_plucker, transform_line, CameraPose, Frame,
    OrthonormalLine, PluckerLine, Segment2D, Vec2,
};
use vpline::observability::{is_slope_degenerate, line_residual_rank, numeric_rank, stacked_fim};
use vpline::simulator::{make_pencils, PencilSpec, PIXEL_FOCAL};
use vpline::vp_detect::{assignment_accuracy, jlinkage_cluster, JLinkageParams};
use vpline_cli::commands::{cmd_ab_degeneracy, cmd_simulate, cmd_solve, simulated_inputs, vp_errors};
use vpline_cli::config::ExperimentConfig;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

// ------------------------------------------------------------------ 1

const STEP: f64 = 1e-6;

fn relative_error<const C: usize>(a: &nalgebra::SMatrix<f64, 2, C>, b: &nalgebra::SMatrix<f64, 2, C>) -> f64 {
    (a - b).norm() / b.norm().max(1e-8)
}

fn fd_line(f: impl Fn(&OrthonormalLine) -> Vec2, line: &OrthonormalLine) -> Matrix2x4<f64> {
    let mut j = Matrix2x4::zeros();
    for k in 0..4 {
        let mut d = Vector4::zeros();
        d[k] = STEP;
        j.set_column(k, &((f(&orthonormal_update(line, &d)) - f(&orthonormal_update(line, &(-d)))) / (2.0 * STEP)));
    }
    j
}

fn fd_pose(f: impl Fn(&CameraPose) -> Vec2, pose: &CameraPose) -> Matrix2x6<f64> {
    let mut j = Matrix2x6::zeros();
    let zero = Vector3::zeros();
    for k in 0..6 {
        let e = unit_vector3(k % 3) * STEP;
        let (plus, minus) =
            if k < 3 { (pose.retract(&e, &zero), pose.retract(&(-e), &zero)) } else { (pose.retract(&zero, &e), pose.retract(&zero, &(-e))) };
        j.set_column(k, &((f(&plus) - f(&minus)) / (2.0 * STEP)));
    }
    j
}

fn jacobians() -> Outcome {
    let start = Instant::now();
    let k = Intrinsics::default();
    let mut rng = rng(101);
    let (mut worst_line, mut worst_vp) = (0.0f64, 0.0f64);
    for i in 0..200 {
        let cfg = random_config(&mut rng, i % 2 == 0, 0.02);
        let l = line_jacobian(&cfg.pose, &cfg.line, &cfg.obs, &k).unwrap();
        let jl = fd_line(|o| line_residual_at(&cfg.pose, o, &cfg.obs, &k).unwrap(), &cfg.line);
        let jp = fd_pose(|p| line_residual_at(p, &cfg.line, &cfg.obs, &k).unwrap(), &cfg.pose);
        worst_line = worst_line.max(relative_error(&l.j_line, &jl)).max(relative_error(&l.j_pose, &jp));
    }
    for i in 0..200 {
        let cfg = random_config(&mut rng, i % 2 == 0, 0.02);
        let v = vp_jacobian(&cfg.pose, &cfg.line, &cfg.p_v, &k).unwrap();
        let jl = fd_line(|o| vp_residual_at(&cfg.pose, o, &cfg.p_v, &k).unwrap(), &cfg.line);
        let jp = fd_pose(|p| vp_residual_at(p, &cfg.line, &cfg.p_v, &k).unwrap(), &cfg.pose);
        worst_vp = worst_vp.max(relative_error(&v.j_line, &jl)).max(relative_error(&v.j_pose, &jp));
    }
    let elapsed = start.elapsed();
    outcome(
        worst_line < 1e-5 && worst_vp < 1e-5 && within(elapsed, 10.0),
        format!("max relative error line {worst_line:.2e}, vp {worst_vp:.2e} (< 1e-5); {:.2} s (< 10 s)", elapsed.as_secs_f64()),
    )
}

// ------------------------------------------------------------------ 2

fn structural_zeros() -> Outcome {
    let k = Intrinsics::default();
    let mut rng = rng(102);
    let mut nonzero = 0;
    for i in 0..400 {
        let cfg = random_config(&mut rng, i % 2 == 0, 0.02);
        let l = line_jacobian(&cfg.pose, &cfg.line, &cfg.obs, &k).unwrap();
        let v = vp_jacobian(&cfg.pose, &cfg.line, &cfg.p_v, &k).unwrap();
        nonzero += usize::from(l.j_line_local.column(0).iter().any(|x| *x != 0.0));
        nonzero += usize::from(v.j_line_local.column(1).iter().any(|x| *x != 0.0));
    }
    outcome(nonzero == 0, format!("{nonzero} nonzero entries in the zero columns over 400 configurations"))
}

// ------------------------------------------------------------------ 3

fn fim_ranks() -> Outcome {
    let start = Instant::now();
    let k = Intrinsics::default();
    let mut rng = rng(103);
    let omega = Matrix2::identity();
    let (mut generic, mut ok_line, mut ok_vp, mut ok_total) = (0, 0, 0, 0);
    let mut total_hist = std::collections::BTreeMap::new();
    for i in 0..1000 {
        let cfg = random_config(&mut rng, i % 2 == 0, 0.01);
        let l = line_jacobian(&cfg.pose, &cfg.line, &cfg.obs, &k).unwrap();
        let cam = transform_line(&to_plucker(&cfg.line).unwrap(), &cfg.pose).unwrap();
        let proj = vpline::factors::project_line(&cam, &k);
        if is_slope_degenerate(&proj, &cfg.obs.p_s, &cfg.obs.p_e, 1e-9) {
            continue;
        }
        generic += 1;
        let v = vp_jacobian(&cfg.pose, &cfg.line, &cfg.p_v, &k).unwrap();
        let r = stacked_fim(&l.j_line, &v.j_line, &omega, &omega);
        ok_line += usize::from(r.rank_line == 2);
        ok_vp += usize::from(r.rank_vp == 2);
        ok_total += usize::from(r.rank_total == 4);
        *total_hist.entry(r.rank_total).or_insert(0) += 1;
    }

    let mut slope_ok = 0;
    for _ in 0..100 {
        let l = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let p_s = Vec2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let p_e = p_s + Vec2::new(l[0], l[1]) * rng.random_range(0.2..2.0);
        slope_ok += usize::from(line_residual_rank(&l, &p_s, &p_e) == 1);
    }

    let mut interior_ok = 0;
    let h = 1e-6;
    for _ in 0..200 {
        let cfg = random_config(&mut rng, false, 0.01);
        let alpha = rng.random_range(0.1..0.9);
        let p_l = cfg.obs.p_s * alpha + cfg.obs.p_e * (1.0 - alpha);
        let point = Segment2D::new(cfg.obs.id, p_l, p_l);
        let mut row = nalgebra::RowVector4::zeros();
        for i in 0..4 {
            let mut d = Vector4::zeros();
            d[i] = h;
            let plus = line_residual_at(&cfg.pose, &orthonormal_update(&cfg.line, &d), &point, &k).unwrap()[0];
            let minus = line_residual_at(&cfg.pose, &orthonormal_update(&cfg.line, &(-d)), &point, &k).unwrap()[0];
            row[i] = (plus - minus) / (2.0 * h);
        }
        let jl = line_jacobian(&cfg.pose, &cfg.line, &cfg.obs, &k).unwrap().j_line;
        let mut stacked = Matrix3x4::zeros();
        stacked.fixed_rows_mut::<2>(0).copy_from(&jl);
        stacked.set_row(2, &row);
        interior_ok += usize::from(numeric_rank(&stacked, 1e-6) <= 2);
    }
    let elapsed = start.elapsed();
    let pass = ok_line == generic
        && ok_vp == generic
        && ok_total == generic
        && slope_ok == 100
        && interior_ok == 200
        && within(elapsed, 30.0);
    outcome(
        pass,
        format!(
            "{generic} generic configurations: rank line 2 in {ok_line}, vp 2 in {ok_vp}, stacked 4 in {ok_total} \
             (stacked rank histogram {total_hist:?}); slope-degenerate rank 1 in {slope_ok}/100; \
             interior augmentation ≤ 2 in {interior_ok}/200; {:.2} s (< 30 s)",
            elapsed.as_secs_f64()
        ),
    )
}

// ------------------------------------------------------------------ 4

fn plucker_gap(a: &PluckerLine, b: &PluckerLine) -> f64 {
    let (a, b) = (a.normalized(), b.normalized());
    ((a.n - b.n).norm() + (a.d - b.d).norm()).min((a.n + b.n).norm() + (a.d + b.d).norm())
}

fn geometry() -> Outcome {
    let mut rng = rng(104);
    let mut worst_round = 0.0f64;
    let mut worst_transform = 0.0f64;
    for _ in 0..500 {
        let l = random_plucker(&mut rng);
        let scaled = PluckerLine { n: l.n * 2.5, d: l.d * 2.5, frame: l.frame };
        worst_round = worst_round.max(plucker_gap(&to_plucker(&to_orthonormal(&scaled).unwrap()).unwrap(), &l));
        let o = OrthonormalLine { u: random_rotation(&mut rng), phi: rng.random_range(0.05..1.52), frame: Frame::World };
        let back = to_orthonormal(&to_plucker(&o).unwrap()).unwrap();
        worst_round = worst_round.max((back.u.matrix() - o.u.matrix()).norm()).max((back.phi - o.phi).abs());

        let with_extrinsic = rng.random_bool(0.5);
        let pose = random_pose(&mut rng, with_extrinsic);
        let fast = transform_line(&l, &pose).unwrap();
        let p0 = l.closest_point_to_origin();
        let oracle = plucker_from_points(&pose.world_to_camera(&p0), &pose.world_to_camera(&(p0 + l.d))).unwrap();
        worst_transform = worst_transform.max((fast.n - oracle.n).norm() / (1.0 + oracle.n.norm())).max((fast.d - oracle.d).norm());
    }

    let (mut worst_dir, mut worst_dist, mut checked) = (0.0f64, 0.0f64, 0);
    while checked < 200 {
        let pose1 = random_pose(&mut rng, true);
        let mut pose2 = pose1;
        pose2.position += random_unit(&mut rng) * 0.5;
        pose2.rotation *= Rotation3::new(random_unit(&mut rng) * 0.2);
        let a_c = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(2.0..5.0));
        let b_c = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(2.0..5.0));
        let (a, b) = (camera_to_world(&pose1, &a_c), camera_to_world(&pose1, &b_c));
        let truth = plucker_from_points(&a, &b).unwrap();
        let (a2, b2) = (pose2.world_to_camera(&a), pose2.world_to_camera(&b));
        if a2.z < 0.5 || b2.z < 0.5 {
            continue;
        }
        let o1 = Segment2D::new(0, project(&a_c), project(&b_c));
        let o2 = Segment2D::new(0, project(&a2), project(&b2));
        if let Ok(est) = vpline::geometry::triangulate_line(&o1, &pose1, &o2, &pose2) {
            let m = line_error(&est, &truth);
            worst_dir = worst_dir.max(m.direction_error);
            worst_dist = worst_dist.max(m.orthogonal_distance_error);
            checked += 1;
        }
    }
    outcome(
        worst_round < 1e-10 && worst_transform < 1e-10 && worst_dir < 1e-9 && worst_dist < 1e-9,
        format!(
            "round trip {worst_round:.1e}, transform vs points {worst_transform:.1e} (< 1e-10); \
             triangulation direction {worst_dir:.1e}, distance {worst_dist:.1e} (< 1e-9)"
        ),
    )
}

// ------------------------------------------------------------------ 5

fn jlinkage() -> Outcome {
    let start = Instant::now();
    let (mut accuracy, mut errors) = (Vec::new(), Vec::new());
    for seed in 0..20 {
        let set = make_pencils(&PencilSpec { seed, ..Default::default() });
        let result = jlinkage_cluster(&set.segments, &JLinkageParams { rng_seed: seed, ..Default::default() }).unwrap();
        accuracy.push(assignment_accuracy(&result, &set.labels));
        errors.extend(vp_errors(&result, &set.labels, &set.vps));
    }
    let elapsed = start.elapsed();
    let (acc, err_px) = (median(accuracy), median(errors) * PIXEL_FOCAL);
    outcome(
        acc >= 0.95 && err_px < 5.0 && within(elapsed, 60.0),
        format!(
            "median accuracy {:.1}% (≥ 95%), median VP error {err_px:.2} px (< 5 px); {:.2} s (< 60 s)",
            acc * 100.0,
            elapsed.as_secs_f64()
        ),
    )
}

// ------------------------------------------------------------------ 6

fn ab_degeneracy() -> Outcome {
    let start = Instant::now();
    let config = ExperimentConfig { seeds: (0..20).collect(), ..Default::default() };
    let inputs = simulated_inputs(&config).unwrap();
    let report = cmd_ab_degeneracy(&config, &inputs).unwrap();
    let elapsed = start.elapsed();
    let with = report.with_vp.median_direction_error_deg;
    let without = report.without_vp.median_direction_error_deg;
    let pairs = report.with_vp_seeds.iter().flat_map(|s| &s.lines).zip(report.without_vp_seeds.iter().flat_map(|s| &s.lines));
    let (mut degenerate, mut rank_ok) = (0, 0);
    for (a, b) in pairs.filter(|(a, _)| a.degenerate) {
        degenerate += 1;
        rank_ok += usize::from(a.rank_total == 4 && b.rank_total <= 2);
    }
    let pass = with < 1.0
        && without > with
        && report.improvement_ratio >= 5.0
        && degenerate > 0
        && rank_ok == degenerate
        && within(elapsed, 300.0);
    outcome(
        pass,
        format!(
            "{degenerate} degenerate lines: median direction error with VP {with:.3}° (< 1°), without {without:.2}° \
             (ratio {:.1}, ≥ 5); ranks with VP {:?}, without {:?}; rank 4 vs ≤ 2 on {rank_ok}/{degenerate}; {:.1} s (< 300 s)",
            report.improvement_ratio,
            report.with_vp.rank_total_histogram,
            report.without_vp.rank_total_histogram,
            elapsed.as_secs_f64()
        ),
    )
}

// ------------------------------------------------------------------ 7

fn solver() -> Outcome {
    use vpline::estimator::{build_problem, fix_gauge, optimize, LineMeasurement, MeasurementSet, SolveOptions, VpMeasurement, WindowState};
    use vpline::factors::vp_project;
    use vpline::simulator::{simulate, RenderSpec, SceneSpec, SimulationSpec, TrajectoryKind, TrajectorySpec};

    let spec = SimulationSpec {
        scene: SceneSpec { box_min: Vector3::new(-2.0, -1.5, 5.0), box_max: Vector3::new(2.0, 1.5, 9.0), ..Default::default() },
        trajectory: TrajectorySpec { kind: TrajectoryKind::Orbit, frames: 6, step: 0.5, ..Default::default() },
        render: RenderSpec { noise_sigma: 0.0, ..Default::default() },
    };
    let data = simulate(&spec).unwrap();
    let mut window = WindowState::new(6);
    let mut meas = MeasurementSet::default();
    for frame in &data.frames {
        window.push_frame(frame.frame_id, frame.pose).unwrap();
        for seg in &frame.segments {
            let track = frame.associations[&seg.id];
            meas.line_obs.push(LineMeasurement { frame_id: frame.frame_id, track_id: track, segment: *seg });
            let cam = transform_line(&data.line(track).unwrap().line, &frame.pose).unwrap();
            if let Ok((_, p_v)) = vp_project(&cam, &Intrinsics::default()) {
                meas.vp_obs.push(VpMeasurement { frame_id: frame.frame_id, track_id: track, p_v });
            }
        }
    }
    let mut truth = fix_gauge(&window);
    for m in &meas.line_obs {
        truth.lines.insert(m.track_id, to_orthonormal(&data.line(m.track_id).unwrap().line).unwrap());
    }

    let (mut converged, mut monotone, mut invariant, mut runs) = (0, 0, 0, 0);
    let (mut worst_cost, mut most_iters) = (0.0f64, 0);
    let mut rng = rng(107);
    for trial in 0..10 {
        let mut start = truth.clone();
        for line in start.lines.values_mut() {
            let delta = Vector4::from_fn(|_, _| rng.random_range(-1e-2..1e-2));
            *line = orthonormal_update(line, &delta);
        }
        let m = if trial % 2 == 0 { meas.clone() } else { meas.without_vp() };
        let opts = SolveOptions::default();
        let problem = build_problem(&start, &m, &opts).unwrap();
        let other = build_problem(&start, &if trial % 2 == 0 { meas.without_vp() } else { meas.clone() }, &opts).unwrap();
        invariant += usize::from(problem.num_parameters == other.num_parameters);
        runs += 1;
        let Ok((_, stats)) = optimize(&problem) else { continue };
        worst_cost = worst_cost.max(stats.final_cost);
        most_iters = most_iters.max(stats.iterations);
        converged += usize::from(stats.final_cost < 1e-12 && stats.iterations <= 50);
        monotone += usize::from(stats.cost_trace.windows(2).all(|p| p[1] < p[0]));
    }
    outcome(
        converged == runs && monotone == runs && invariant == runs,
        format!(
            "{converged}/{runs} converged (worst cost {worst_cost:.1e} < 1e-12, most iterations {most_iters} ≤ 50); \
             monotone traces {monotone}/{runs}; parameter count invariant {invariant}/{runs}"
        ),
    )
}

// ------------------------------------------------------------------ 8

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = |name: &str| {
        let out = dir.path().join(name);
        std::fs::create_dir_all(&out).unwrap();
        let config = ExperimentConfig { seeds: vec![3, 4], output_dir: out.clone(), ..Default::default() };
        cmd_simulate(&config).unwrap();
        let bytes: Vec<Vec<u8>> = [3, 4]
            .iter()
            .map(|s| std::fs::read(out.join(vpline_cli::commands::dataset_file_name(*s))).unwrap())
            .collect();
        let inputs = simulated_inputs(&config).unwrap();
        let report = cmd_solve(&config, &inputs).unwrap();
        (bytes, report)
    };
    let (bytes_a, a) = run_dir("a");
    let (bytes_b, b) = run_dir("b");
    let mut worst = 0.0f64;
    for (x, y) in a.seeds.iter().zip(&b.seeds) {
        worst = worst.max((x.final_cost - y.final_cost).abs()).max((x.pose_rmse - y.pose_rmse).abs());
        for (p, q) in x.lines.iter().zip(&y.lines) {
            worst = worst
                .max((p.metrics.direction_error - q.metrics.direction_error).abs())
                .max((p.metrics.orthogonal_distance_error - q.metrics.orthogonal_distance_error).abs());
        }
    }
    let same_shape = a.seeds.len() == b.seeds.len() && a.seeds.iter().zip(&b.seeds).all(|(x, y)| x.lines.len() == y.lines.len());
    outcome(
        bytes_a == bytes_b && same_shape && worst < 1e-12,
        format!("datasets byte-identical: {}; max metric difference {worst:.1e} (< 1e-12)", bytes_a == bytes_b),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("jacobians vs finite differences", jacobians),
        ("structural zeros", structural_zeros),
        ("information ranks", fim_ranks),
        ("geometry exactness", geometry),
        ("j-linkage recovery", jlinkage),
        ("degeneracy a/b", ab_degeneracy),
        ("solver sanity", solver),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        failed += usize::from(!o.pass);
        println!("criterion {} {name}: {}  {}", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
}
