//! Small dense-vector helpers over `&[f64]`.

use nalgebra::DMatrix;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

/// Radial clamp of `v` onto the ball `{‖θ − center‖ ≤ radius}`.
pub fn clamp_to_ball(v: &[f64], center: &[f64], radius: f64) -> Vec<f64> {
    let r = dist(v, center);
    if r <= radius {
        return v.to_vec();
    }
    let s = radius / r;
    center.iter().zip(v).map(|(c, x)| c + s * (x - c)).collect()
}

/// Smallest eigenvalue of a symmetric row-major `d × d` matrix.
pub fn min_eigenvalue(matrix: &[f64], d: usize) -> f64 {
    if d == 0 {
        return 0.0;
    }
    let m = DMatrix::from_row_slice(d, d, matrix);
    m.symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// `xᵀ M x` for row-major `M`.
pub fn quad_form(matrix: &[f64], x: &[f64]) -> f64 {
    let d = x.len();
    let mut acc = 0.0;
    for i in 0..d {
        let row = &matrix[i * d..(i + 1) * d];
        acc += x[i] * dot(row, x);
    }
    acc
}
