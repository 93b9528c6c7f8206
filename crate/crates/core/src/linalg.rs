//! Minimal 2x2 linear algebra for the (v, a) feature space.
//!
//! Everything downstream works in two dimensions, so closed forms beat a
//! general matrix library: determinants, inverses and Cholesky factors are
//! a handful of arithmetic ops, and plain arrays serialize cleanly.

pub type Vec2 = [f64; 2];
pub type Mat2 = [[f64; 2]; 2];

pub const IDENTITY: Mat2 = [[1.0, 0.0], [0.0, 1.0]];

#[inline]
pub fn det(m: &Mat2) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

#[inline]
pub fn trace(m: &Mat2) -> f64 {
    m[0][0] + m[1][1]
}

/// None when the matrix is singular (|det| == 0) or non-finite.
pub fn inverse(m: &Mat2) -> Option<Mat2> {
    let d = det(m);
    if d == 0.0 || !d.is_finite() {
        return None;
    }
    Some([[m[1][1] / d, -m[0][1] / d], [-m[1][0] / d, m[0][0] / d]])
}

#[inline]
pub fn add(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [a[0][0] + b[0][0], a[0][1] + b[0][1]],
        [a[1][0] + b[1][0], a[1][1] + b[1][1]],
    ]
}

#[inline]
pub fn sub_mat(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [a[0][0] - b[0][0], a[0][1] - b[0][1]],
        [a[1][0] - b[1][0], a[1][1] - b[1][1]],
    ]
}

#[inline]
pub fn scale(m: &Mat2, s: f64) -> Mat2 {
    [[m[0][0] * s, m[0][1] * s], [m[1][0] * s, m[1][1] * s]]
}

#[inline]
pub fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

#[inline]
pub fn mat_vec(m: &Mat2, v: &Vec2) -> Vec2 {
    [
        m[0][0] * v[0] + m[0][1] * v[1],
        m[1][0] * v[0] + m[1][1] * v[1],
    ]
}

#[inline]
pub fn sub_vec(a: &Vec2, b: &Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn dot(a: &Vec2, b: &Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Outer product v * v^T.
#[inline]
pub fn outer(v: &Vec2) -> Mat2 {
    [[v[0] * v[0], v[0] * v[1]], [v[1] * v[0], v[1] * v[1]]]
}

/// Lower-triangular Cholesky factor L with m = L L^T.
/// None when the matrix is not (numerically) positive definite.
pub fn cholesky(m: &Mat2) -> Option<Mat2> {
    if m[0][0] <= 0.0 || !m[0][0].is_finite() {
        return None;
    }
    let l00 = m[0][0].sqrt();
    let l10 = m[1][0] / l00;
    let rem = m[1][1] - l10 * l10;
    if rem <= 0.0 || !rem.is_finite() {
        return None;
    }
    Some([[l00, 0.0], [l10, rem.sqrt()]])
}

/// Symmetrize (average off-diagonal entries). Accumulated rounding in
/// scatter-matrix sums can leave |m01 - m10| at machine-epsilon scale.
#[inline]
pub fn symmetrize(m: &Mat2) -> Mat2 {
    let off = 0.5 * (m[0][1] + m[1][0]);
    [[m[0][0], off], [off, m[1][1]]]
}

/// Add `eps * I` until the matrix admits a Cholesky factor.
/// Returns the repaired matrix and how many jitter rounds were needed
/// (0 = already positive definite). None after `max_rounds` failures.
pub fn spd_repair(m: &Mat2, eps: f64, max_rounds: u32) -> Option<(Mat2, u32)> {
    let mut fixed = symmetrize(m);
    for round in 0..=max_rounds {
        if cholesky(&fixed).is_some() {
            return Some((fixed, round));
        }
        // Scale the jitter up tenfold each round.
        let jitter = eps * 10f64.powi(round as i32);
        fixed = add(&fixed, &scale(&IDENTITY, jitter));
    }
    None
}
