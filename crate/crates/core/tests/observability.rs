//! Information-matrix ranks of line and vanishing-point observations.

mod common;

use common::{random_config, rng};
use nalgebra::{DMatrix, Matrix2, Matrix2x4, Matrix3x4, Vector4};
use rand::Rng;
use vpline::factors::{line_jacobian, line_residual_at, vp_jacobian, vp_project, Intrinsics};
use vpline::geometry::{orthonormal_update, to_orthonormal, transform_line, Segment2D, Vec2};
use vpline::observability::{
    line_fim, line_residual_rank, numeric_rank, stacked_fim, FimReport, RANK_TOLERANCE,
};
use vpline::simulator::{simulate, SimulationSpec};

fn random_spd(rng: &mut impl Rng) -> Matrix2<f64> {
    let a = Matrix2::from_fn(|_, _| rng.random_range(-1.0..1.0));
    a * a.transpose() + Matrix2::identity() * 0.1
}

#[test]
fn single_view_ranks() {
    let mut rng = rng(31);
    let k = Intrinsics::default();
    for _ in 0..200 {
        let cfg = random_config(&mut rng, true, 0.0);
        let jl = line_jacobian(&cfg.pose, &cfg.line, &cfg.obs, &k).unwrap().j_line;
        let jv = vp_jacobian(&cfg.pose, &cfg.line, &cfg.p_v, &k).unwrap().j_line;
        let report = stacked_fim(&jl, &jv, &Matrix2::identity(), &Matrix2::identity());
        assert_eq!(report.rank_line, 2);
        assert_eq!(report.rank_vp, 2);
        // one view never fixes the distance of the line, with or without the VP
        assert_eq!(report.rank_total, 3);
    }
}

#[test]
fn rank_of_information_equals_rank_of_jacobian() {
    let mut rng = rng(32);
    for _ in 0..100 {
        let rank = rng.random_range(0..=2usize);
        let mut j = Matrix2x4::zeros();
        for _ in 0..rank {
            let a = nalgebra::Vector2::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let b = Vector4::from_fn(|_, _| rng.random_range(-1.0..1.0));
            j += a * b.transpose();
        }
        let h = line_fim(&j, &random_spd(&mut rng));
        assert_eq!(numeric_rank(&h, RANK_TOLERANCE), numeric_rank(&j, RANK_TOLERANCE));
        assert_eq!(numeric_rank(&j, RANK_TOLERANCE), rank);
    }
}

#[test]
fn numeric_rank_of_random_constructions() {
    let mut rng = rng(33);
    for _ in 0..1000 {
        let n = rng.random_range(1..8usize);
        let m = rng.random_range(1..8usize);
        let r = rng.random_range(0..=n.min(m));
        let a = DMatrix::from_fn(n, r, |_, _| rng.random_range(-1.0..1.0));
        let b = DMatrix::from_fn(r, m, |_, _| rng.random_range(-1.0..1.0));
        assert_eq!(numeric_rank(&(a * b), RANK_TOLERANCE), r);
    }
}

#[test]
fn interior_observation_adds_no_rank() {
    let mut rng = rng(34);
    let k = Intrinsics::default();
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
        // finite differences leave ~1e-10 noise in the dependent row
        assert_eq!(numeric_rank(&stacked, 1e-6), 2);
    }
}

#[test]
fn slope_degenerate_observation_has_rank_one() {
    let mut rng = rng(35);
    for _ in 0..100 {
        let l = nalgebra::Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let p_s = Vec2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let p_e = p_s + Vec2::new(l[0], l[1]) * rng.random_range(0.2..2.0);
        assert_eq!(line_residual_rank(&l, &p_s, &p_e), 1);
        let p_e = p_s + Vec2::new(-l[1], l[0]) * rng.random_range(0.2..2.0);
        assert_eq!(line_residual_rank(&l, &p_s, &p_e), 2);
    }
}

/// Information of one line over every frame of a noise-free simulation.
fn line_report(id: u64, with_vp: bool) -> FimReport {
    let spec = SimulationSpec { render: vpline::simulator::RenderSpec { noise_sigma: 0.0, ..Default::default() }, ..Default::default() };
    let data = simulate(&spec).unwrap();
    let k = Intrinsics::default();
    let truth = data.line(id).unwrap();
    let line = to_orthonormal(&truth.line).unwrap();
    let mut line_blocks = Vec::new();
    let mut vp_blocks = Vec::new();
    for frame in &data.frames {
        let Some(seg) = frame.segments.iter().find(|s| frame.associations[&s.id] == id) else { continue };
        line_blocks.push((line_jacobian(&frame.pose, &line, seg, &k).unwrap().j_line, Matrix2::identity()));
        if with_vp {
            let cam = transform_line(&truth.line, &frame.pose).unwrap();
            if let Ok((_, p_v)) = vp_project(&cam, &k) {
                vp_blocks.push((vp_jacobian(&frame.pose, &line, &p_v, &k).unwrap().j_line, Matrix2::identity()));
            }
        }
    }
    FimReport::from_blocks(&line_blocks, &vp_blocks)
}

#[test]
fn multi_view_ranks_under_pure_translation() {
    let data = simulate(&SimulationSpec::default()).unwrap();
    let flags = &data.frames[0].degenerate_flags;
    let degenerate = data.header.lines.iter().find(|l| flags.get(&l.id) == Some(&true)).unwrap().id;
    let generic = data.header.lines.iter().find(|l| flags.get(&l.id) == Some(&false)).unwrap().id;

    let generic_report = line_report(generic, false);
    assert_eq!(generic_report.rank_line, 4);

    let line_only = line_report(degenerate, false);
    assert_eq!(line_only.rank_line, 2);
    let with_vp = line_report(degenerate, true);
    assert_eq!(with_vp.rank_total, 3);
    assert!(with_vp.min_eigenvalue().abs() < 1e-9 * with_vp.singular_values.total[0]);
}
