//! Vanishing-point detection by J-linkage.
//!
//! Hypotheses are intersections of randomly sampled segment pairs. Every
//! segment gets a preference set (the hypotheses it is consistent with) and
//! clusters are merged agglomeratively by Jaccard distance until no two
//! clusters share a preferred hypothesis. No Manhattan constraint is applied,
//! so any number of vanishing points may come out.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Matrix3, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use crate::geometry::Segment2D;
use crate::geometry::{Vec2, Vec3};

/// `|v3| / ‖v‖` below which a vanishing point is treated as lying at infinity.
pub const FINITE_VP_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VanishingPointObservation {
    /// Image position when finite, otherwise the unit image direction `(v1, v2)`.
    pub p_v: Vec2,
    /// Unit homogeneous vector with `v3 ≥ 0`.
    pub homogeneous: Vec3,
    pub member_ids: Vec<u64>,
    pub is_finite: bool,
}

impl VanishingPointObservation {
    fn from_homogeneous(v: Vec3, mut member_ids: Vec<u64>) -> Self {
        member_ids.sort_unstable();
        let is_finite = v[2].abs() > FINITE_VP_EPS * v.norm();
        let p_v = if is_finite { Vec2::new(v[0] / v[2], v[1] / v[2]) } else { v.xy().normalize() };
        Self { p_v, homogeneous: v, member_ids, is_finite }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JLinkageParams {
    pub num_hypotheses: usize,
    /// Radians.
    pub consensus_threshold: f64,
    pub min_cluster_size: usize,
    pub rng_seed: u64,
}

impl Default for JLinkageParams {
    fn default() -> Self {
        Self { num_hypotheses: 500, consensus_threshold: 0.0175, min_cluster_size: 3, rng_seed: 0 }
    }
}

impl JLinkageParams {
    pub fn validate(&self) -> Result<()> {
        if self.num_hypotheses < 1 {
            return Err(Error::InvalidParameter("num_hypotheses must be at least 1".into()));
        }
        if !(self.consensus_threshold > 0.0) {
            return Err(Error::InvalidParameter("consensus_threshold must be positive".into()));
        }
        if self.min_cluster_size < 2 {
            return Err(Error::InvalidParameter("min_cluster_size must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub clusters: Vec<VanishingPointObservation>,
    pub outliers: Vec<u64>,
}

/// Image line through a segment, scaled so that `(l1, l2)` is a unit normal.
fn normalized_line(s: &Segment2D) -> Vec3 {
    let l = s.line();
    l / l[0].hypot(l[1])
}

/// Intersection of the lines through two segments.
pub fn vp_hypothesis(s1: &Segment2D, s2: &Segment2D) -> Result<Vec3> {
    let v = normalized_line(s1).cross(&normalized_line(s2));
    if v.norm() < 1e-12 {
        return Err(Error::DegenerateHypothesis);
    }
    Ok(v)
}

/// Angle between a segment and the direction from its midpoint toward `v`,
/// folded into `[0, π/2]`.
pub fn consistency(s: &Segment2D, v: &Vec3) -> f64 {
    let m = s.midpoint();
    let toward = Vec2::new(v[0] - v[2] * m[0], v[1] - v[2] * m[1]);
    let dir = s.p_e - s.p_s;
    if toward.norm() <= 1e-12 * v.norm() {
        return 0.0;
    }
    let cross = dir[0] * toward[1] - dir[1] * toward[0];
    cross.abs().atan2(dir.dot(&toward).abs())
}

/// Least-squares vanishing point: the unit `v` minimizing `Σ (l_iᵀ v)²`.
pub fn fit_vp(members: &[Segment2D]) -> Result<Vec3> {
    if members.len() < 2 {
        return Err(Error::TooFewSegments { required: 2, got: members.len() });
    }
    let scatter = members.iter().map(normalized_line).fold(Matrix3::zeros(), |acc, l| acc + l * l.transpose());
    let eig = SymmetricEigen::new(scatter);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    if eig.eigenvalues[order[1]] - eig.eigenvalues[order[0]] < 1e-12 {
        return Err(Error::IllConditioned);
    }
    let v: Vec3 = eig.eigenvectors.column(order[0]).normalize();
    Ok(if v[2] < 0.0 { -v } else { v })
}

/// Sum of squared algebraic residuals `Σ (l_iᵀ v̂)²` for unit `v̂`.
pub fn algebraic_residual(members: &[Segment2D], v: &Vec3) -> f64 {
    let v = v.normalize();
    members.iter().map(|s| normalized_line(s).dot(&v).powi(2)).sum()
}

type Bits = Vec<u64>;

fn intersect(a: &Bits, b: &Bits) -> Bits {
    a.iter().zip(b).map(|(x, y)| x & y).collect()
}

fn jaccard_distance(a: &Bits, b: &Bits) -> f64 {
    let (mut inter, mut union) = (0u32, 0u32);
    for (x, y) in a.iter().zip(b) {
        inter += (x & y).count_ones();
        union += (x | y).count_ones();
    }
    if union == 0 {
        1.0
    } else {
        1.0 - f64::from(inter) / f64::from(union)
    }
}

fn sample_hypotheses(segments: &[Segment2D], params: &JLinkageParams) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let n = segments.len();
    let mut hypotheses = Vec::with_capacity(params.num_hypotheses);
    let mut attempts = 0;
    while hypotheses.len() < params.num_hypotheses && attempts < 10 * params.num_hypotheses {
        attempts += 1;
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n - 1);
        let j = if j >= i { j + 1 } else { j };
        if let Ok(v) = vp_hypothesis(&segments[i], &segments[j]) {
            hypotheses.push(v);
        }
    }
    hypotheses
}

/// Fits a cluster's vanishing point and drops members that disagree with it,
/// repeating until the member set is stable.
fn refine_cluster(segments: &[Segment2D], mut members: Vec<usize>, params: &JLinkageParams) -> (Option<Vec3>, Vec<usize>) {
    for _ in 0..10 {
        if members.len() < params.min_cluster_size {
            break;
        }
        let subset: Vec<Segment2D> = members.iter().map(|&i| segments[i]).collect();
        let Ok(v) = fit_vp(&subset) else { break };
        let (keep, drop): (Vec<usize>, Vec<usize>) =
            members.iter().partition(|&&i| consistency(&segments[i], &v) < params.consensus_threshold);
        if drop.is_empty() {
            return (Some(v), members);
        }
        members = keep;
    }
    (None, members)
}

/// Clusters segments by shared vanishing point. Deterministic for a given seed.
pub fn jlinkage_cluster(segments: &[Segment2D], params: &JLinkageParams) -> Result<ClusterResult> {
    params.validate()?;
    if segments.len() < 2 {
        return Err(Error::TooFewSegments { required: 2, got: segments.len() });
    }
    let hypotheses = sample_hypotheses(segments, params);
    let words = hypotheses.len().div_ceil(64).max(1);
    let preference: Vec<Bits> = segments
        .iter()
        .map(|s| {
            let mut bits = vec![0u64; words];
            for (h, v) in hypotheses.iter().enumerate() {
                if consistency(s, v) < params.consensus_threshold {
                    bits[h / 64] |= 1 << (h % 64);
                }
            }
            bits
        })
        .collect();

    let mut members: Vec<Vec<usize>> = (0..segments.len()).map(|i| vec![i]).collect();
    let mut prefs = preference;
    let mut alive = vec![true; segments.len()];
    let n = segments.len();
    let mut dist = vec![vec![1.0f64; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            dist[i][j] = jaccard_distance(&prefs[i], &prefs[j]);
        }
    }
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..n {
            if !alive[i] {
                continue;
            }
            for j in (i + 1)..n {
                if alive[j] && dist[i][j] < 1.0 && best.is_none_or(|(_, _, d)| dist[i][j] < d) {
                    best = Some((i, j, dist[i][j]));
                }
            }
        }
        let Some((i, j, _)) = best else { break };
        let moved = std::mem::take(&mut members[j]);
        members[i].extend(moved);
        prefs[i] = intersect(&prefs[i], &prefs[j]);
        alive[j] = false;
        for k in 0..n {
            if alive[k] && k != i {
                let d = jaccard_distance(&prefs[i], &prefs[k]);
                if k < i {
                    dist[k][i] = d;
                } else {
                    dist[i][k] = d;
                }
            }
        }
    }

    let mut fitted: Vec<(Vec3, Vec<usize>)> = members
        .into_iter()
        .enumerate()
        .filter(|(idx, cluster)| alive[*idx] && cluster.len() >= params.min_cluster_size)
        .filter_map(|(_, mut cluster)| {
            cluster.sort_unstable();
            match refine_cluster(segments, cluster, params) {
                (Some(v), kept) => Some((v, kept)),
                _ => None,
            }
        })
        .collect();
    // a segment pointing at two vanishing points goes to the one it agrees with best
    for _ in 0..5 {
        let mut next = vec![Vec::new(); fitted.len()];
        for &i in fitted.iter().flat_map(|(_, m)| m) {
            let best = (0..fitted.len())
                .min_by(|&a, &b| consistency(&segments[i], &fitted[a].0).total_cmp(&consistency(&segments[i], &fitted[b].0)))
                .expect("at least one cluster");
            next[best].push(i);
        }
        next.iter_mut().for_each(|m| m.sort_unstable());
        if next.iter().zip(&fitted).all(|(a, (_, b))| a == b) {
            break;
        }
        fitted = next
            .into_iter()
            .filter_map(|cluster| match refine_cluster(segments, cluster, params) {
                (Some(v), kept) => Some((v, kept)),
                _ => None,
            })
            .collect();
    }

    let mut result = ClusterResult::default();
    for (v, kept) in fitted {
        let ids = kept.iter().map(|&i| segments[i].id).collect();
        result.clusters.push(VanishingPointObservation::from_homogeneous(v, ids));
    }
    // everything not kept by a fitted cluster is an outlier
    let assigned: BTreeSet<u64> =
        result.clusters.iter().flat_map(|c| c.member_ids.iter().copied()).collect();
    result.outliers = segments.iter().map(|s| s.id).filter(|id| !assigned.contains(id)).collect();
    result.outliers.sort_unstable();
    result.outliers.dedup();
    result
        .clusters
        .sort_by(|a, b| b.member_ids.len().cmp(&a.member_ids.len()).then(a.member_ids[0].cmp(&b.member_ids[0])));
    Ok(result)
}

/// Fraction of labeled segments assigned to the cluster matched with their
/// label. Clusters are matched one-to-one with labels, largest majority first;
/// segments labeled `None` (outliers) are not scored.
pub fn assignment_accuracy(result: &ClusterResult, labels: &BTreeMap<u64, Option<u64>>) -> f64 {
    let labeled = labels.values().filter(|l| l.is_some()).count();
    if labeled == 0 {
        return 1.0;
    }
    let mut candidates: Vec<(usize, usize, u64)> = Vec::new();
    for (c, cluster) in result.clusters.iter().enumerate() {
        let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
        for id in &cluster.member_ids {
            if let Some(Some(label)) = labels.get(id) {
                *counts.entry(*label).or_default() += 1;
            }
        }
        candidates.extend(counts.into_iter().map(|(label, n)| (n, c, label)));
    }
    candidates.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let (mut used_clusters, mut used_labels) = (BTreeSet::new(), BTreeSet::new());
    let mut correct = 0;
    for (n, c, label) in candidates {
        if used_clusters.contains(&c) || used_labels.contains(&label) {
            continue;
        }
        used_clusters.insert(c);
        used_labels.insert(label);
        correct += n;
    }
    correct as f64 / labeled as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn seg(id: u64, a: (f64, f64), b: (f64, f64)) -> Segment2D {
        Segment2D::new(id, Vec2::new(a.0, a.1), Vec2::new(b.0, b.1))
    }

    fn proportional(a: &Vec3, b: &Vec3) -> bool {
        a.normalize().cross(&b.normalize()).norm() < 1e-12
    }

    #[test]
    fn hypothesis_examples() {
        let diag = seg(0, (0.0, 0.0), (1.0, 1.0));
        let horiz = seg(1, (0.0, 1.0), (2.0, 1.0));
        assert!(proportional(&vp_hypothesis(&diag, &horiz).unwrap(), &Vec3::new(1.0, 1.0, 1.0)));

        let y0 = seg(0, (0.0, 0.0), (1.0, 0.0));
        let y1 = seg(1, (0.0, 1.0), (1.0, 1.0));
        let v = vp_hypothesis(&y0, &y1).unwrap();
        assert!(proportional(&v, &Vec3::new(1.0, 0.0, 0.0)));
        assert!(!VanishingPointObservation::from_homogeneous(v, vec![0, 1]).is_finite);

        assert!(matches!(vp_hypothesis(&y0, &y0), Err(Error::DegenerateHypothesis)));
    }

    #[test]
    fn consistency_examples() {
        let s = seg(0, (0.0, 0.0), (0.5, 0.5));
        assert!(consistency(&s, &Vec3::new(1.0, 1.0, 1.0)) < 1e-15);
        let s = seg(0, (0.0, 0.0), (1.0, 0.0));
        assert!((consistency(&s, &Vec3::new(0.0, 1.0, 0.0)) - FRAC_PI_2).abs() < 1e-15);
        let a = seg(0, (0.1, 0.2), (0.7, -0.3));
        let b = seg(0, (0.7, -0.3), (0.1, 0.2));
        let v = Vec3::new(0.3, 2.0, 1.0);
        assert_eq!(consistency(&a, &v), consistency(&b, &v));
    }

    #[test]
    fn fit_examples() {
        let vp = Vec2::new(2.0, 1.0);
        let members: Vec<Segment2D> = (0..5)
            .map(|i| {
                let angle = 0.3 + 0.5 * i as f64;
                let dir = Vec2::new(angle.cos(), angle.sin());
                Segment2D::new(i, vp + dir * 0.5, vp + dir * 1.5)
            })
            .collect();
        let v = fit_vp(&members).unwrap();
        assert!(proportional(&v, &Vec3::new(2.0, 1.0, 1.0)));

        let pair = &members[..2];
        assert!(proportional(&fit_vp(pair).unwrap(), &vp_hypothesis(&pair[0], &pair[1]).unwrap()));

        let same = vec![members[0]; 4];
        assert!(matches!(fit_vp(&same), Err(Error::IllConditioned)));
        assert!(matches!(fit_vp(&members[..1]), Err(Error::TooFewSegments { .. })));
    }

    #[test]
    fn clustering_needs_two_segments() {
        let one = [seg(0, (0.0, 0.0), (1.0, 0.0))];
        assert!(matches!(
            jlinkage_cluster(&one, &JLinkageParams::default()),
            Err(Error::TooFewSegments { .. })
        ));
    }

    #[test]
    fn rejects_bad_params() {
        let p = JLinkageParams { min_cluster_size: 1, ..Default::default() };
        assert!(p.validate().is_err());
        let p = JLinkageParams { consensus_threshold: 0.0, ..Default::default() };
        assert!(p.validate().is_err());
        let p = JLinkageParams { num_hypotheses: 0, ..Default::default() };
        assert!(p.validate().is_err());
    }
}
