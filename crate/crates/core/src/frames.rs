//! Orthonormal N-adapted frames, the constant-curvature test, and builders
//! for the named example spaces.

use nalgebra::{Cholesky, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{same_structure, BundlePoint, Differentiator, Expr, LagrangianSpec, Var};
use crate::geometry::{symmetric, DMetric, Geometry, GeometryError, GeometryReport, Space, SpaceKind};
use crate::linalg::{
    build2, build3, build4, checked_inverse, from_dmatrix, max_abs, symbolic_inverse, to_dmatrix,
    Mat, SymMat, SymT3, T4,
};

/// Default absolute spread below which orthonormal-frame curvature counts
/// as constant.
pub const DEFAULT_CONSTANCY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FrameError {
    #[error("degenerate {block} block")]
    Degenerate { block: &'static str },
    #[error("at least 2 samples are needed, got {0}")]
    InsufficientSamples(usize),
    #[error("sample {index} ({point:?}): {source}")]
    Sample {
        index: usize,
        point: BundlePoint,
        source: GeometryError,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("invalid input: {0}")]
    Invalid(String),
}

/// Per-block factors with `A_hᵀ g A_h = diag(signature_h)` and likewise for
/// the fiber block. Riemannian blocks have all-plus signatures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthoFrame {
    pub a_h: Mat,
    pub a_v: Mat,
    pub signature_h: Vec<f64>,
    pub signature_v: Vec<f64>,
}

/// Factor of one symmetric block: Cholesky when positive definite, a scaled
/// eigenbasis otherwise.
fn orthonormal_factor(g: &Mat, block: &'static str) -> Result<(Mat, Vec<f64>), FrameError> {
    checked_inverse(g).map_err(|_| FrameError::Degenerate { block })?;
    let n = g.len();
    let gm = to_dmatrix(g);
    if let Some(ch) = Cholesky::new(gm.clone()) {
        let l = ch.l();
        let l_inv = l
            .clone()
            .try_inverse()
            .ok_or(FrameError::Degenerate { block })?;
        return Ok((from_dmatrix(&l_inv.transpose()), vec![1.0; n]));
    }
    let eig = SymmetricEigen::new(gm);
    let mut idx: Vec<usize> = (0..n).collect();
    // positive directions first, then by magnitude, for a stable layout
    idx.sort_by(|&a, &b| {
        let (x, y) = (eig.eigenvalues[a], eig.eigenvalues[b]);
        (y > 0.0).cmp(&(x > 0.0)).then(y.abs().total_cmp(&x.abs()))
    });
    let mut a = vec![vec![0.0; n]; n];
    let mut sig = vec![0.0; n];
    for (col, &k) in idx.iter().enumerate() {
        let lam = eig.eigenvalues[k];
        let s = 1.0 / lam.abs().sqrt();
        for row in 0..n {
            a[row][col] = eig.eigenvectors[(row, k)] * s;
        }
        sig[col] = lam.signum();
    }
    Ok((a, sig))
}

pub fn orthonormalize(dm: &DMetric) -> Result<OrthoFrame, FrameError> {
    let (a_h, signature_h) = orthonormal_factor(&dm.g, "g")?;
    let (a_v, signature_v) = orthonormal_factor(&dm.h, "h")?;
    Ok(OrthoFrame {
        a_h,
        a_v,
        signature_h,
        signature_v,
    })
}

/// `max |Aᵀ g A − diag(signature)|`.
pub fn gram_residual(g: &Mat, a: &Mat, signature: &[f64]) -> f64 {
    let n = g.len();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let mut v = 0.0;
            for k in 0..n {
                for l in 0..n {
                    v += a[k][i] * g[k][l] * a[l][j];
                }
            }
            let want = if i == j { signature[i] } else { 0.0 };
            worst = worst.max((v - want).abs());
        }
    }
    worst
}

/// Components of a `(1,3)` tensor in the rescaled frame: the upper index is
/// transformed with `inv(A_up)`, the lower ones with their block factors.
fn transform_1_3(t: &T4, up_inv: &Mat, lows: [&Mat; 3]) -> T4 {
    let d0 = t.len();
    let d1 = lows[0].len();
    let d2 = lows[1].len();
    let d3 = lows[2].len();
    // contract one index at a time to keep the cost at O(d^5)
    let s1 = build4([d0, d1, d2, d3], |a, b, c, d| {
        (0..d3).map(|l| t[a][b][c][l] * lows[2][l][d]).sum::<f64>()
    });
    let s2 = build4([d0, d1, d2, d3], |a, b, c, d| {
        (0..d2).map(|l| s1[a][b][l][d] * lows[1][l][c]).sum::<f64>()
    });
    let s3 = build4([d0, d1, d2, d3], |a, b, c, d| {
        (0..d1).map(|l| s2[a][l][c][d] * lows[0][l][b]).sum::<f64>()
    });
    build4([d0, d1, d2, d3], |a, b, c, d| {
        (0..d0).map(|l| up_inv[a][l] * s3[l][b][c][d]).sum::<f64>()
    })
}

/// Orthonormal-frame curvature classes at one sample: R, P, S and, in
/// vector mode, the three fiber-side classes, in that order.
pub fn orthonormal_curvature(rep: &GeometryReport) -> Result<Vec<(&'static str, T4)>, FrameError> {
    let fr = orthonormalize(&rep.dmetric)?;
    let ah = &fr.a_h;
    let av = &fr.a_v;
    let ah_inv = checked_inverse(ah).map_err(|_| FrameError::Degenerate { block: "g" })?;
    let av_inv = checked_inverse(av).map_err(|_| FrameError::Degenerate { block: "h" })?;
    let c = &rep.curvature;
    let mut out = vec![
        ("R", transform_1_3(&c.r, &ah_inv, [ah, ah, ah])),
        ("P", transform_1_3(&c.p, &ah_inv, [ah, ah, av])),
        ("S", transform_1_3(&c.s, &av_inv, [av, av, av])),
    ];
    if let (Some(rv), Some(pv), Some(sh)) = (&c.r_v, &c.p_v, &c.s_h) {
        out.push(("R_v", transform_1_3(rv, &av_inv, [av, ah, ah])));
        out.push(("P_v", transform_1_3(pv, &av_inv, [av, ah, av])));
        out.push(("S_h", transform_1_3(sh, &ah_inv, [ah, av, av])));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpread {
    pub class: String,
    /// Largest deviation of any component from its mean over the samples.
    pub max_spread: f64,
    /// Largest absolute mean component.
    pub max_abs_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantCurvatureReport {
    pub samples: Vec<BundlePoint>,
    pub tol: f64,
    pub classes: Vec<ClassSpread>,
    pub constant: bool,
    pub scalar_spread: f64,
    /// Mean `→R` and `←S` over the samples; present only when constant.
    pub r_fwd: Option<f64>,
    pub s_bwd: Option<f64>,
}

/// Order-independent mean: sum in sorted order.
fn stable_mean(vals: &mut [f64]) -> f64 {
    vals.sort_by(f64::total_cmp);
    vals.iter().sum::<f64>() / vals.len() as f64
}

fn spread_of(vals: &[f64]) -> (f64, f64) {
    let mut v = vals.to_vec();
    let mean = stable_mean(&mut v);
    let spread = vals.iter().fold(0.0f64, |m, x| m.max((x - mean).abs()));
    (mean, spread)
}

/// Evaluates orthonormal-frame d-curvature at every sample and checks that
/// each component is the same everywhere to within `tol`.
pub fn check_constant_curvature(
    space: &Space,
    samples: &[BundlePoint],
    tol: f64,
) -> Result<ConstantCurvatureReport, FrameError> {
    if samples.len() < 2 {
        return Err(FrameError::InsufficientSamples(samples.len()));
    }
    let geo = Geometry::new(space);
    let per_sample: Vec<(Vec<(&'static str, T4)>, f64, f64)> = samples
        .par_iter()
        .enumerate()
        .map(|(index, p)| {
            let annotate = |source: GeometryError| FrameError::Sample {
                index,
                point: p.clone(),
                source,
            };
            let rep = geo.evaluate(p).map_err(annotate)?;
            let classes = orthonormal_curvature(&rep).map_err(|e| match e {
                FrameError::Geometry(g) => annotate(g),
                FrameError::Degenerate { block } => annotate(GeometryError::DegenerateBlock {
                    block,
                    min_pivot: 0.0,
                    scale: 0.0,
                }),
                other => other,
            })?;
            Ok((classes, rep.scalars.r_fwd, rep.scalars.s_bwd))
        })
        .collect::<Result<_, FrameError>>()?;

    let mut classes = Vec::new();
    for (ci, (name, first)) in per_sample[0].0.iter().enumerate() {
        let flat_len = first.iter().flatten().flatten().flatten().count();
        let cols: Vec<Vec<f64>> = per_sample
            .iter()
            .map(|(cl, _, _)| cl[ci].1.iter().flatten().flatten().flatten().copied().collect())
            .collect();
        let mut max_spread: f64 = 0.0;
        let mut max_abs_mean: f64 = 0.0;
        for k in 0..flat_len {
            let vals: Vec<f64> = cols.iter().map(|c| c[k]).collect();
            let (mean, spread) = spread_of(&vals);
            max_spread = max_spread.max(spread);
            max_abs_mean = max_abs_mean.max(mean.abs());
        }
        classes.push(ClassSpread {
            class: name.to_string(),
            max_spread,
            max_abs_mean,
        });
    }
    let rf: Vec<f64> = per_sample.iter().map(|s| s.1).collect();
    let sb: Vec<f64> = per_sample.iter().map(|s| s.2).collect();
    let (rf_mean, rf_spread) = spread_of(&rf);
    let (sb_mean, sb_spread) = spread_of(&sb);
    let constant = classes.iter().all(|c| c.max_spread < tol);
    Ok(ConstantCurvatureReport {
        samples: samples.to_vec(),
        tol,
        classes,
        constant,
        scalar_spread: rf_spread.max(sb_spread),
        r_fwd: constant.then_some(rf_mean),
        s_bwd: constant.then_some(sb_mean),
    })
}

/// Flat lift: identity blocks, `N` from the geodesic spray of `g_base(x)`.
pub fn build_flat_lift(g_base: &SymMat) -> Result<Space, FrameError> {
    Ok(Space::flat_lift(g_base)?)
}

/// Constant blocks with arbitrary `N`, in vector-bundle mode.
pub fn build_constant_dmetric(g: &Mat, h: &Mat, n_conn: SymMat) -> Result<Space, FrameError> {
    Ok(Space::constant_dmetric(g, h, n_conn)?)
}

/// The electromagnetic Lagrangian space together with closed-form
/// expressions for its N-connection and N-connection curvature, built from
/// Christoffel symbols and the field strength directly rather than from the
/// spray.
pub struct EmSpace {
    pub space: Space,
    /// `N^i_j = γ^i_jk y^k − F^i_j`.
    pub closed_form_n: SymMat,
    /// `Ω^a_ij = y^b Rie^a_bji − (D_j F^a_i − D_i F^a_j)`.
    pub closed_form_omega: SymT3,
    /// `F_jk = (e0/4)(∂_k A_j − ∂_j A_k)`.
    pub field_strength: SymMat,
}

pub fn build_em_space(a: &SymMat, pot: &[Expr], m0: f64, e0: f64) -> Result<EmSpace, FrameError> {
    let n = a.len();
    if n == 0 || a.iter().any(|r| r.len() != n) || pot.len() != n {
        return Err(FrameError::Invalid(
            "a must be n x n and A must have n entries".into(),
        ));
    }
    if m0 == 0.0 || !m0.is_finite() || !e0.is_finite() {
        return Err(FrameError::Invalid("m0 must be finite and nonzero, e0 finite".into()));
    }
    for e in a.iter().flatten().chain(pot) {
        let (nn, mm) = e.dims_needed();
        if mm > 0 || nn > n {
            return Err(FrameError::Invalid(format!(
                "`{e}` must depend on x1..x{n} only"
            )));
        }
    }
    let mut body = Expr::zero();
    for i in 0..n {
        for j in 0..n {
            let t = Expr::mul(a[i][j].clone(), Expr::mul(Expr::y(i), Expr::y(j)));
            body = Expr::add(body, Expr::mul(Expr::constant(m0), t));
        }
    }
    for (i, ai) in pot.iter().enumerate() {
        body = Expr::add(body, Expr::mul(Expr::constant(e0), Expr::mul(ai.clone(), Expr::y(i))));
    }
    let spec = LagrangianSpec { n, m: n, body };
    let space = Space::lagrangian_with_kind(&spec, SpaceKind::Electromagnetic)?;

    let mut d = Differentiator::new();
    let sym_a = symmetric(n, |i, j| {
        if same_structure(&a[i][j], &a[j][i]) {
            a[i][j].clone()
        } else {
            Expr::mul(Expr::constant(0.5), Expr::add(a[i][j].clone(), a[j][i].clone()))
        }
    });
    let (a_inv, _) = symbolic_inverse(&sym_a);
    let da = build3(n, n, n, |i, j, k| d.diff(&sym_a[i][j], Var::Base(k)));
    // γ^i_jk = ½ a^il (∂_j a_lk + ∂_k a_lj − ∂_l a_jk)
    let gamma = build3(n, n, n, |i, j, k| {
        let s = Expr::sum((0..n).map(|l| {
            let br = Expr::sub(Expr::add(da[l][k][j].clone(), da[l][j][k].clone()), da[j][k][l].clone());
            Expr::mul(a_inv[i][l].clone(), br)
        }));
        Expr::mul(Expr::constant(0.5), s)
    });
    let f_low = build2(n, n, |j, k| {
        let v = Expr::sub(d.diff(&pot[j], Var::Base(k)), d.diff(&pot[k], Var::Base(j)));
        Expr::mul(Expr::constant(e0 / 4.0), v)
    });
    // F^i_j = g̃^il F_jl with g̃ = m0 a
    let f_up = build2(n, n, |i, j| {
        let s = Expr::sum((0..n).map(|l| Expr::mul(a_inv[i][l].clone(), f_low[j][l].clone())));
        Expr::div(s, Expr::constant(m0))
    });
    let closed_form_n = build2(n, n, |i, j| {
        let s = Expr::sum((0..n).map(|k| Expr::mul(gamma[i][j][k].clone(), Expr::y(k))));
        Expr::sub(s, f_up[i][j].clone())
    });
    // Rie^a_bji = ∂_j γ^a_ib − ∂_i γ^a_jb + γ^a_jc γ^c_ib − γ^a_ic γ^c_jb
    let rie = |d: &mut Differentiator, a_: usize, b: usize, j: usize, i: usize| {
        let mut e = Expr::sub(
            d.diff(&gamma[a_][i][b], Var::Base(j)),
            d.diff(&gamma[a_][j][b], Var::Base(i)),
        );
        for c in 0..n {
            e = Expr::add(e, Expr::mul(gamma[a_][j][c].clone(), gamma[c][i][b].clone()));
            e = Expr::sub(e, Expr::mul(gamma[a_][i][c].clone(), gamma[c][j][b].clone()));
        }
        e
    };
    // D_j F^a_i = ∂_j F^a_i + γ^a_jb F^b_i − γ^b_ji F^a_b
    let cov_f = |d: &mut Differentiator, a_: usize, i: usize, j: usize| {
        let mut e = d.diff(&f_up[a_][i], Var::Base(j));
        for b in 0..n {
            e = Expr::add(e, Expr::mul(gamma[a_][j][b].clone(), f_up[b][i].clone()));
            e = Expr::sub(e, Expr::mul(gamma[b][j][i].clone(), f_up[a_][b].clone()));
        }
        e
    };
    let mut closed_form_omega = build3(n, n, n, |_, _, _| Expr::zero());
    for a_ in 0..n {
        for i in 0..n {
            for j in 0..n {
                let curv = Expr::sum((0..n).map(|b| Expr::mul(Expr::y(b), rie(&mut d, a_, b, j, i))));
                let df = Expr::sub(cov_f(&mut d, a_, i, j), cov_f(&mut d, a_, j, i));
                closed_form_omega[a_][i][j] = Expr::sub(curv, df);
            }
        }
    }
    Ok(EmSpace {
        space,
        closed_form_n,
        closed_form_omega,
        field_strength: f_low,
    })
}

/// Coordinate-basis metric of a d-metric:
/// `[[g + Nᵀ h N, Nᵀ h], [h N, h]]`, with `N` stored as `N[a][i]`.
pub fn coordinate_metric(dm: &DMetric) -> Mat {
    let n = dm.g.len();
    let m = dm.h.len();
    let nc = &dm.n_conn;
    let hn = build2(m, n, |a, i| (0..m).map(|b| dm.h[a][b] * nc[b][i]).sum::<f64>());
    build2(n + m, n + m, |r, c| match (r < n, c < n) {
        (true, true) => dm.g[r][c] + (0..m).map(|a| nc[a][r] * hn[a][c]).sum::<f64>(),
        (true, false) => hn[c - n][r],
        (false, true) => hn[r - n][c],
        (false, false) => dm.h[r - n][c - n],
    })
}

/// Inverse of [`coordinate_metric`]: recovers `(g, h, N)` from a full
/// symmetric metric whose fiber block is nondegenerate.
pub fn split_coordinate_metric(full: &Mat, n: usize) -> Result<DMetric, FrameError> {
    let dim = full.len();
    if n == 0 || n >= dim {
        return Err(FrameError::Invalid("base dimension out of range".into()));
    }
    let m = dim - n;
    let h = build2(m, m, |a, b| full[n + a][n + b]);
    let h_inv = checked_inverse(&h).map_err(|_| FrameError::Degenerate { block: "h" })?;
    let hn = build2(m, n, |a, i| full[n + a][i]);
    let nc = build2(m, n, |a, i| (0..m).map(|b| h_inv[a][b] * hn[b][i]).sum::<f64>());
    let g = build2(n, n, |i, j| {
        full[i][j] - (0..m).map(|a| nc[a][i] * hn[a][j]).sum::<f64>()
    });
    Ok(DMetric { g, h, n_conn: nc })
}

/// Constant N-connection `N^e_j = h^eb g_jb` used with constant blocks of
/// equal size; its N-connection curvature and anholonomy vanish.
pub fn trivial_nconnection(g: &Mat, h: &Mat) -> Result<Mat, FrameError> {
    if g.len() != h.len() {
        return Err(FrameError::Invalid("needs blocks of equal size".into()));
    }
    let h_inv = checked_inverse(h).map_err(|_| FrameError::Degenerate { block: "h" })?;
    let n = g.len();
    Ok(build2(n, n, |e, j| (0..n).map(|b| h_inv[e][b] * g[j][b]).sum()))
}

/// Largest entry of every orthonormal-frame curvature class.
pub fn orthonormal_curvature_max(rep: &GeometryReport) -> Result<f64, FrameError> {
    Ok(orthonormal_curvature(rep)?
        .iter()
        .map(|(_, t)| max_abs(t.iter().flatten().flatten().flatten()))
        .fold(0.0, f64::max))
}
