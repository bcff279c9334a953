//! Small dense helpers: nested-`Vec` tensors, pivoted LU with a relative
//! degeneracy threshold, and symbolic adjugate inverses.

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::dsl::Expr;

pub type Mat = Vec<Vec<f64>>;
pub type T3 = Vec<Vec<Vec<f64>>>;
pub type T4 = Vec<Vec<Vec<Vec<f64>>>>;

pub type SymMat = Vec<Vec<Expr>>;
pub type SymT3 = Vec<Vec<Vec<Expr>>>;
pub type SymT4 = Vec<Vec<Vec<Vec<Expr>>>>;

/// Relative pivot threshold below which a matrix is treated as singular.
pub const DEGENERACY_THRESHOLD: f64 = 1e-10;

pub fn build2<T>(a: usize, b: usize, mut f: impl FnMut(usize, usize) -> T) -> Vec<Vec<T>> {
    (0..a).map(|i| (0..b).map(|j| f(i, j)).collect()).collect()
}

pub fn build3<T>(
    a: usize,
    b: usize,
    c: usize,
    mut f: impl FnMut(usize, usize, usize) -> T,
) -> Vec<Vec<Vec<T>>> {
    (0..a)
        .map(|i| (0..b).map(|j| (0..c).map(|k| f(i, j, k)).collect()).collect())
        .collect()
}

pub fn build4<T>(
    dims: [usize; 4],
    mut f: impl FnMut(usize, usize, usize, usize) -> T,
) -> Vec<Vec<Vec<Vec<T>>>> {
    (0..dims[0])
        .map(|i| {
            (0..dims[1])
                .map(|j| {
                    (0..dims[2])
                        .map(|k| (0..dims[3]).map(|l| f(i, j, k, l)).collect())
                        .collect()
                })
                .collect()
        })
        .collect()
}

pub fn identity(n: usize) -> Mat {
    build2(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
}

pub fn to_dmatrix(a: &Mat) -> DMatrix<f64> {
    let r = a.len();
    let c = a.first().map_or(0, |row| row.len());
    DMatrix::from_fn(r, c, |i, j| a[i][j])
}

pub fn from_dmatrix(a: &DMatrix<f64>) -> Mat {
    build2(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let k = b.len();
    let c = b.first().map_or(0, |row| row.len());
    build2(a.len(), c, |i, j| (0..k).map(|l| a[i][l] * b[l][j]).sum())
}

pub fn transpose(a: &Mat) -> Mat {
    let c = a.first().map_or(0, |row| row.len());
    build2(c, a.len(), |i, j| a[j][i])
}

/// Largest absolute entry over any nested array of floats.
pub fn max_abs<'a, I: IntoIterator<Item = &'a f64>>(it: I) -> f64 {
    it.into_iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

pub fn flat3(t: &T3) -> impl Iterator<Item = &f64> {
    t.iter().flatten().flatten()
}

pub fn flat4(t: &T4) -> impl Iterator<Item = &f64> {
    t.iter().flatten().flatten().flatten()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Degenerate {
    pub min_pivot: f64,
    pub scale: f64,
}

/// Inverse by partial-pivoting LU. Fails when the smallest pivot is below
/// `DEGENERACY_THRESHOLD` times the largest absolute entry.
pub fn checked_inverse(a: &Mat) -> Result<Mat, Degenerate> {
    let n = a.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let scale = max_abs(a.iter().flatten());
    let lu = to_dmatrix(a).lu();
    let u = lu.u();
    let min_pivot = (0..n).map(|i| u[(i, i)].abs()).fold(f64::INFINITY, f64::min);
    if !(scale > 0.0) || !(min_pivot >= DEGENERACY_THRESHOLD * scale) {
        return Err(Degenerate { min_pivot, scale });
    }
    let inv = lu.try_inverse().ok_or(Degenerate { min_pivot, scale })?;
    Ok(from_dmatrix(&inv))
}

/// Symbolic inverse as adjugate over determinant, plus the determinant.
///
/// Determinants of minors are expanded along their first row and memoized by
/// (row set, column set), so every minor is built once.
pub fn symbolic_inverse(a: &SymMat) -> (SymMat, Expr) {
    let n = a.len();
    assert!(n <= 16, "symbolic inverse limited to small blocks");
    let mut memo: HashMap<(u32, u32), Expr> = HashMap::new();
    let full = (1u32 << n) - 1;
    let det = minor_det(a, full, full, &mut memo);
    if n == 1 {
        return (vec![vec![Expr::div(Expr::one(), det.clone())]], det);
    }
    let inv = build2(n, n, |i, j| {
        // inv[i][j] = cofactor(j, i) / det
        let m = minor_det(a, full & !(1 << j), full & !(1 << i), &mut memo);
        let signed = if (i + j) % 2 == 0 { m } else { Expr::neg(m) };
        Expr::div(signed, det.clone())
    });
    (inv, det)
}

fn minor_det(a: &SymMat, rows: u32, cols: u32, memo: &mut HashMap<(u32, u32), Expr>) -> Expr {
    if rows == 0 {
        return Expr::one();
    }
    if let Some(d) = memo.get(&(rows, cols)) {
        return d.clone();
    }
    let r = rows.trailing_zeros() as usize;
    let rest = rows & !(1 << r);
    let mut acc = Expr::zero();
    let mut sign_positive = true;
    for c in 0..32 {
        if cols & (1 << c) == 0 {
            continue;
        }
        let entry = &a[r][c];
        if !entry.is_zero() {
            let sub = minor_det(a, rest, cols & !(1 << c), memo);
            let term = Expr::mul(entry.clone(), sub);
            acc = if sign_positive {
                Expr::add(acc, term)
            } else {
                Expr::sub(acc, term)
            };
        }
        sign_positive = !sign_positive;
    }
    memo.insert((rows, cols), acc.clone());
    acc
}
