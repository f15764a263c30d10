#![allow(dead_code)]

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vpline::geometry::{
    plucker_from_points, to_orthonormal, CameraPose, Extrinsic, OrthonormalLine, PluckerLine, Segment2D, Vec2, Vec3,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_unit(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

pub fn random_rotation(rng: &mut impl Rng) -> Rotation3<f64> {
    Rotation3::new(random_unit(rng) * rng.random_range(0.0..std::f64::consts::PI))
}

pub fn random_point(rng: &mut impl Rng, scale: f64) -> Vec3 {
    Vec3::new(
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
    )
}

pub fn random_pose(rng: &mut impl Rng, with_extrinsic: bool) -> CameraPose {
    let pose = CameraPose::new(random_rotation(rng), random_point(rng, 2.0));
    if with_extrinsic {
        pose.with_extrinsic(Extrinsic {
            rotation: Rotation3::new(random_unit(rng) * rng.random_range(0.0..0.5)),
            translation: random_point(rng, 0.2),
        })
    } else {
        pose
    }
}

pub fn random_plucker(rng: &mut impl Rng) -> PluckerLine {
    loop {
        let a = random_point(rng, 3.0);
        let b = random_point(rng, 3.0);
        if (a - b).norm() > 0.5 && a.cross(&b).norm() > 0.1 {
            return plucker_from_points(&a, &b).unwrap();
        }
    }
}

/// Camera point -> world point for a pose.
pub fn camera_to_world(pose: &CameraPose, x_c: &Vec3) -> Vec3 {
    pose.camera_rotation() * x_c + pose.camera_center()
}

pub fn project(x_c: &Vec3) -> Vec2 {
    Vec2::new(x_c.x / x_c.z, x_c.y / x_c.z)
}

/// One randomized observation configuration: a pose, a world line in front
/// of the camera, a noisy segment of it and a noisy vanishing point.
pub struct Config {
    pub pose: CameraPose,
    pub line: OrthonormalLine,
    pub world: PluckerLine,
    pub obs: Segment2D,
    pub p_v: Vec2,
    /// Noise-free endpoints.
    pub clean: Segment2D,
}

pub fn random_config(rng: &mut impl Rng, with_extrinsic: bool, noise: f64) -> Config {
    loop {
        let pose = random_pose(rng, with_extrinsic);
        let a_c = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(2.0..5.0));
        let b_c = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(2.0..5.0));
        let dir = (b_c - a_c).normalize();
        if dir.z.abs() < 0.15 || (project(&a_c) - project(&b_c)).norm() < 0.2 {
            continue;
        }
        let a = camera_to_world(&pose, &a_c);
        let b = camera_to_world(&pose, &b_c);
        let world = plucker_from_points(&a, &b).unwrap();
        if world.n.norm() < 0.1 {
            continue;
        }
        let line = to_orthonormal(&world).unwrap();
        let jitter = |rng: &mut dyn rand::RngCore| {
            Vec2::new(rng.random_range(-noise..=noise), rng.random_range(-noise..=noise))
        };
        let clean = Segment2D::new(7, project(&a_c), project(&b_c));
        let obs = Segment2D::new(7, clean.p_s + jitter(rng), clean.p_e + jitter(rng));
        let v = dir;
        let p_v = Vec2::new(v.x / v.z, v.y / v.z) + jitter(rng);
        return Config { pose, line, world, obs, p_v, clean };
    }
}

pub fn unit_vector3(i: usize) -> Vector3<f64> {
    let mut v = Vector3::zeros();
    v[i] = 1.0;
    v
}
