//! Fisher information of a single line in its 4-DoF orthonormal tangent space,
//! with numeric rank certification.

use nalgebra::{DMatrix, Dim, Matrix, Matrix2, Matrix2x4, Matrix4, RawStorage};
use serde::{Deserialize, Serialize};

use crate::factors::line_residual_derivative;
use crate::geometry::{Vec2, Vec3};

/// Default relative singular-value threshold for [`numeric_rank`].
pub const RANK_TOLERANCE: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingularValues {
    pub line: Vec<f64>,
    pub vp: Vec<f64>,
    pub total: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FimReport {
    pub h_line: Matrix4<f64>,
    pub h_vp: Matrix4<f64>,
    pub h_total: Matrix4<f64>,
    pub rank_line: usize,
    pub rank_vp: usize,
    pub rank_total: usize,
    pub singular_values: SingularValues,
    pub slope_degenerate: bool,
}

impl FimReport {
    /// Sums `JᵀΩJ` over any number of line and vanishing-point blocks.
    ///
    /// # Panics
    /// If any `Ω` is not symmetric positive definite.
    pub fn from_blocks(
        line_blocks: &[(Matrix2x4<f64>, Matrix2<f64>)],
        vp_blocks: &[(Matrix2x4<f64>, Matrix2<f64>)],
    ) -> Self {
        for (_, omega) in line_blocks.iter().chain(vp_blocks) {
            assert!(is_spd(omega), "information weight is not SPD: {omega:?}");
        }
        let h_line = line_blocks.iter().map(|(j, w)| line_fim(j, w)).fold(Matrix4::zeros(), |a, b| a + b);
        let h_vp = vp_blocks.iter().map(|(j, w)| line_fim(j, w)).fold(Matrix4::zeros(), |a, b| a + b);
        let h_total = h_line + h_vp;
        let singular_values = SingularValues {
            line: singular_values(&h_line),
            vp: singular_values(&h_vp),
            total: singular_values(&h_total),
        };
        Self {
            rank_line: rank_from_values(&singular_values.line, RANK_TOLERANCE),
            rank_vp: rank_from_values(&singular_values.vp, RANK_TOLERANCE),
            rank_total: rank_from_values(&singular_values.total, RANK_TOLERANCE),
            h_line,
            h_vp,
            h_total,
            singular_values,
            slope_degenerate: false,
        }
    }

    /// Flags the report when the line observation satisfies the slope condition.
    pub fn with_slope_check(mut self, l: &Vec3, p_s: &Vec2, p_e: &Vec2, tol: f64) -> Self {
        self.slope_degenerate |= is_slope_degenerate(l, p_s, p_e, tol);
        self
    }

    /// Smallest eigenvalue of the total information, which is PSD up to round-off.
    pub fn min_eigenvalue(&self) -> f64 {
        self.h_total.symmetric_eigenvalues().min()
    }
}

/// Symmetric (to 1e-12 relative) with a Cholesky factor.
pub fn is_spd(omega: &Matrix2<f64>) -> bool {
    let asym = (omega - omega.transpose()).amax();
    asym <= 1e-12 * omega.amax() && omega.cholesky().is_some()
}

/// `H = Jᵀ Ω J`.
pub fn line_fim(j: &Matrix2x4<f64>, omega: &Matrix2<f64>) -> Matrix4<f64> {
    let h = j.transpose() * omega * j;
    (h + h.transpose()) * 0.5
}

/// Information of one line observation stacked with one vanishing-point observation.
pub fn stacked_fim(
    j_line: &Matrix2x4<f64>,
    j_vp: &Matrix2x4<f64>,
    omega_l: &Matrix2<f64>,
    omega_v: &Matrix2<f64>,
) -> FimReport {
    FimReport::from_blocks(&[(*j_line, *omega_l)], &[(*j_vp, *omega_v)])
}

pub fn singular_values<R: Dim, C: Dim, S: RawStorage<f64, R, C>>(m: &Matrix<f64, R, C, S>) -> Vec<f64> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    let dense = DMatrix::from_iterator(rows, cols, m.iter().copied());
    let mut values: Vec<f64> = dense.singular_values().iter().copied().collect();
    values.sort_by(|a, b| b.total_cmp(a));
    values
}

fn rank_from_values(values: &[f64], tol_ratio: f64) -> usize {
    let Some(&max) = values.first() else { return 0 };
    if max <= 0.0 {
        return 0;
    }
    values.iter().filter(|&&s| s > tol_ratio * max).count()
}

/// Number of singular values above `tol_ratio · σ_max`.
pub fn numeric_rank<R: Dim, C: Dim, S: RawStorage<f64, R, C>>(m: &Matrix<f64, R, C, S>, tol_ratio: f64) -> usize {
    rank_from_values(&singular_values(m), tol_ratio)
}

/// The observed segment direction is parallel to the image-line normal
/// `(l1, l2)`, the configuration in which `∂r_l/∂l` loses rank.
pub fn is_slope_degenerate(l: &Vec3, p_s: &Vec2, p_e: &Vec2, tol: f64) -> bool {
    let du = p_s[0] - p_e[0];
    let dv = p_s[1] - p_e[1];
    let l_d = l[0].hypot(l[1]);
    (l[1] * du - l[0] * dv).abs() <= tol * l_d * du.hypot(dv)
}

/// Rank of `∂r_l/∂l` for one observation.
pub fn line_residual_rank(l: &Vec3, p_s: &Vec2, p_e: &Vec2) -> usize {
    numeric_rank(&line_residual_derivative(l, p_s, p_e), RANK_TOLERANCE)
}
