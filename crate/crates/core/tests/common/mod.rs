#![allow(dead_code)]

use nonhol::dsl::{differentiate, evaluate, parse_expr, BundlePoint, Expr, Var};
use nonhol::linalg::{build2, build3, checked_inverse, Mat, T3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_point(r: &mut ChaCha8Rng, n: usize, m: usize, scale: f64) -> BundlePoint {
    BundlePoint::new(
        (0..n).map(|_| r.random_range(-scale..scale)).collect(),
        (0..m).map(|_| r.random_range(-scale..scale)).collect(),
    )
}

pub fn sym(src: &[&[&str]], n: usize, m: usize) -> Vec<Vec<Expr>> {
    src.iter()
        .map(|row| row.iter().map(|s| parse_expr(s, n, m).unwrap()).collect())
        .collect()
}

/// Levi-Civita Christoffel symbols `γ^i_jk` of a base metric `g(x)`,
/// from the textbook formula with a numeric inverse.
pub fn christoffel(g: &[Vec<Expr>], x: &[f64]) -> T3 {
    let n = g.len();
    let p = BundlePoint::new(x.to_vec(), vec![0.0; n]);
    let gv: Mat = build2(n, n, |i, j| evaluate(&g[i][j], &p).unwrap());
    let gi = checked_inverse(&gv).unwrap();
    // dg[l][k][j] = ∂_j g_lk
    let dg = build3(n, n, n, |l, k, j| {
        evaluate(&differentiate(&g[l][k], Var::Base(j)), &p).unwrap()
    });
    build3(n, n, n, |i, j, k| {
        0.5 * (0..n)
            .map(|l| gi[i][l] * (dg[l][k][j] + dg[l][j][k] - dg[j][k][l]))
            .sum::<f64>()
    })
}

/// Riemann tensor `Rie^i_jkl` (`= R(∂_k, ∂_l)∂_j`) by central differences
/// of the Christoffel oracle.
pub fn riemann(g: &[Vec<Expr>], x: &[f64]) -> Vec<Vec<Vec<Vec<f64>>>> {
    let n = g.len();
    let h = 1e-5;
    let gam = christoffel(g, x);
    let dgam: Vec<T3> = (0..n)
        .map(|d| {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[d] += h;
            xm[d] -= h;
            let a = christoffel(g, &xp);
            let b = christoffel(g, &xm);
            build3(n, n, n, |i, j, k| (a[i][j][k] - b[i][j][k]) / (2.0 * h))
        })
        .collect();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    build2(n, n, |k, l| {
                        let mut v = dgam[k][i][l][j] - dgam[l][i][k][j];
                        for mm in 0..n {
                            v += gam[i][k][mm] * gam[mm][l][j] - gam[i][l][mm] * gam[mm][k][j];
                        }
                        v
                    })
                })
                .collect()
        })
        .collect()
}

pub fn max_abs_diff<'a>(a: impl IntoIterator<Item = &'a f64>, b: impl IntoIterator<Item = &'a f64>) -> f64 {
    a.into_iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}
