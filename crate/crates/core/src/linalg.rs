//! Singular-value based rank, null space and least-squares helpers.

use nalgebra::{DMatrix, DVector, SVD};

/// Relative singular-value threshold used for every rank decision.
pub const RANK_TOL: f64 = 1e-9;

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    SVD::new(m.clone(), false, false).singular_values.iter().copied().collect()
}

fn threshold(sv: &[f64], rel: f64) -> f64 {
    let top = sv.first().copied().unwrap_or(0.0);
    if top == 0.0 {
        f64::INFINITY
    } else {
        rel * top
    }
}

pub fn rank(m: &DMatrix<f64>, rel: f64) -> usize {
    let sv = singular_values(m);
    let t = threshold(&sv, rel);
    sv.iter().filter(|&&s| s > t).count()
}

/// Pads with zero rows so the thin SVD returns a full right factor.
fn full_svd(m: &DMatrix<f64>) -> SVD<f64, nalgebra::Dyn, nalgebra::Dyn> {
    let (r, c) = m.shape();
    let padded = if r < c { m.clone().resize_vertically(c, 0.0) } else { m.clone() };
    SVD::new(padded, true, true)
}

/// Flips each column so its largest-magnitude entry is positive.
pub fn normalize_signs(b: &mut DMatrix<f64>) {
    for mut col in b.column_iter_mut() {
        let mut best = 0.0f64;
        for &x in col.iter() {
            if x.abs() > best.abs() + 1e-12 {
                best = x;
            }
        }
        if best < 0.0 {
            col.neg_mut();
        }
    }
}

/// Orthonormal basis (columns) of the null space of `m`.
pub fn null_space(m: &DMatrix<f64>, rel: f64) -> DMatrix<f64> {
    let n = m.ncols();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    if m.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    let svd = full_svd(m);
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let t = threshold(&sv, rel);
    let r = sv.iter().filter(|&&s| s > t).count();
    let vt = svd.v_t.expect("v_t requested");
    let mut basis = vt.rows(r, n - r).transpose();
    normalize_signs(&mut basis);
    basis
}

/// Orthonormal basis (columns) of the column space of `m`.
pub fn column_space(m: &DMatrix<f64>, rel: f64) -> DMatrix<f64> {
    if m.ncols() == 0 || m.nrows() == 0 {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let svd = SVD::new(m.clone(), true, false);
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let t = threshold(&sv, rel);
    let r = sv.iter().filter(|&&s| s > t).count();
    let mut basis = svd.u.expect("u requested").columns(0, r).into_owned();
    normalize_signs(&mut basis);
    basis
}

/// Minimal-norm least-squares solution of `a x = b`.
pub struct LeastSquares {
    pub x: DVector<f64>,
    pub residual: f64,
    pub rank: usize,
}

pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>, rel: f64) -> LeastSquares {
    let n = a.ncols();
    if a.nrows() == 0 || n == 0 {
        return LeastSquares { x: DVector::zeros(n), residual: b.norm(), rank: 0 };
    }
    let svd = SVD::new(a.clone(), true, true);
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let t = threshold(&sv, rel);
    let r = sv.iter().filter(|&&s| s > t).count();
    let u = svd.u.as_ref().unwrap();
    let vt = svd.v_t.as_ref().unwrap();
    let mut x = DVector::zeros(n);
    for k in 0..r {
        let coeff = u.column(k).dot(b) / sv[k];
        x += vt.row(k).transpose() * coeff;
    }
    let residual = (a * &x - b).norm();
    LeastSquares { x, residual, rank: r }
}

/// 2-norm condition number; infinite when singular.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = singular_values(m);
    match (sv.first(), sv.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        (Some(_), Some(_)) => f64::INFINITY,
        _ => 1.0,
    }
}

/// Orthogonal projector onto the span of orthonormal columns `q`.
pub fn projector(q: &DMatrix<f64>) -> DMatrix<f64> {
    q * q.transpose()
}

/// `‖v − QQᵀv‖` for orthonormal `q`.
pub fn distance_to_span(q: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    if q.ncols() == 0 {
        return v.norm();
    }
    (v - q * (q.transpose() * v)).norm()
}

/// Largest entry of the difference of the projectors onto two spans.
pub fn subspace_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let n = a.nrows().max(b.nrows());
    let pa = if a.ncols() == 0 { DMatrix::zeros(n, n) } else { projector(a) };
    let pb = if b.ncols() == 0 { DMatrix::zeros(n, n) } else { projector(b) };
    (pa - pb).abs().max()
}

/// Largest `|aᵢⱼ + aⱼᵢ|` (zero for skew matrices).
pub fn skew_defect(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    (m + m.transpose()).abs().max()
}
