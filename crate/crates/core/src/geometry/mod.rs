//! N-adapted geometry of a d-metric space: N-connection and its curvature,
//! anholonomy, the canonical d-connection, d-torsion, d-curvature, Ricci
//! d-tensor and scalar curvatures.
//!
//! Index conventions (see `docs/conventions.md`): the last index of every
//! connection coefficient is the differentiation direction, fiber indices
//! are written `a, b, c, d`, base indices `i, j, k, h`, and arrays are stored
//! in the written index order, so `l_h[i][j][k] = L^i_jk` and
//! `curvature.r[i][h][j][k] = R^i_hjk`.

mod kernel;
mod paths;
mod space;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use kernel::{
    anholonomy, canonical_dconnection, dcurvature, dtorsion, hessian_metric, nconnection,
    nconnection_curvature, ricci_and_scalars, sasaki_dmetric, semispray, Geometry,
};
pub use paths::{euler_lagrange_residual, semispray_path, PathSample};
pub use space::{hessian_block, semispray_exprs, symmetric, BundleMode, Space, SpaceKind};

use crate::dsl::{BundlePoint, EvalError};
use crate::linalg::{Mat, T3, T4};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("degenerate Hessian (Lagrangian not regular here): min pivot {min_pivot:e}, scale {scale:e}")]
    DegenerateHessian { min_pivot: f64, scale: f64 },
    #[error("degenerate {block} block: min pivot {min_pivot:e}, scale {scale:e}")]
    DegenerateBlock {
        block: &'static str,
        min_pivot: f64,
        scale: f64,
    },
    #[error("evaluation failed: {0}")]
    Eval(#[from] EvalError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
}

/// `g̃_ab = ½ ∂²L/∂y^a∂y^b` and its inverse at a point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerticalMetric {
    pub g: Mat,
    pub g_inv: Mat,
}

/// Block d-metric with N-connection at a point. `n_conn[a][i] = N^a_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DMetric {
    pub g: Mat,
    pub h: Mat,
    #[serde(rename = "N")]
    pub n_conn: Mat,
}

/// Nontrivial anholonomy coefficients of the N-adapted frame:
/// `[e_i, e_a] = W^b_ia e_b` and `[e_j, e_i] = W^a_ji e_a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anholonomy {
    /// `w_hv[b][i][a] = W^b_ia = ∂N^b_i/∂y^a`.
    pub w_hv: T3,
    /// `w_hh[a][j][i] = W^a_ji = Ω^a_ji`.
    pub w_hh: T3,
}

/// Canonical d-connection coefficients. In tangent mode `l_v` and `c_h` are
/// zero; the curvature then uses `L^a_bk ≡ L^i_jk` and `C^i_jc ≡ C^a_bc`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DConnection {
    /// `L^i_jk`, n x n x n.
    pub l_h: T3,
    /// `L^a_bk`, m x m x n.
    pub l_v: T3,
    /// `C^i_jc`, n x n x m.
    pub c_h: T3,
    /// `C^a_bc`, m x m x m.
    pub c_v: T3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DTorsion {
    /// `T^i_jk = L^i_jk − L^i_kj`.
    pub t_ijk: T3,
    /// `T^i_ja = C^i_ja`.
    pub t_ija: T3,
    /// `T^a_ji = Ω^a_ji`.
    pub t_aji: T3,
    /// `T^a_bi = ∂N^a_i/∂y^b − L^a_bi`.
    pub t_abi: T3,
    /// `T^a_bc = C^a_bc − C^a_cb`.
    pub t_abc: T3,
}

/// d-curvature. `r`, `p`, `s` are the three tangent-mode classes; the
/// vector-mode-only classes are present when the space is in vector mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DCurvature {
    /// `R^i_hjk`.
    #[serde(rename = "R")]
    pub r: T4,
    /// `P^i_jka`.
    #[serde(rename = "P")]
    pub p: T4,
    /// `S^a_bcd`.
    #[serde(rename = "S")]
    pub s: T4,
    /// `R^a_bjk`.
    #[serde(rename = "R_v", skip_serializing_if = "Option::is_none", default)]
    pub r_v: Option<T4>,
    /// `P^c_bka`.
    #[serde(rename = "P_v", skip_serializing_if = "Option::is_none", default)]
    pub p_v: Option<T4>,
    /// `S^i_jbc`.
    #[serde(rename = "S_h", skip_serializing_if = "Option::is_none", default)]
    pub s_h: Option<T4>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ricci {
    /// `R_ij = R^k_ijk`.
    pub r_ij: Mat,
    /// `R_ia = −P^k_ika`.
    pub r_ia: Mat,
    /// `R_ai = P^b_aib`.
    pub r_ai: Mat,
    /// `S_ab = S^c_abc`.
    pub s_ab: Mat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scalars {
    /// `g^ij R_ij`.
    pub r_fwd: f64,
    /// `h^ab S_ab`.
    pub s_bwd: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RicciScalars {
    pub ricci: Ricci,
    pub scalars: Scalars,
}

/// For constant metric blocks, records whether the canonical d-connection
/// actually vanishes. With a fiber-dependent N it generally does not in
/// vector mode (`L^a_bk = ½(∂_b N^a_k − ∂_a N^b_k)` for `h = δ`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantBlockCheck {
    pub max_abs_connection: f64,
    pub connection_vanishes: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
}

/// Everything computed at one bundle point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub dims: Dims,
    pub mode: BundleMode,
    pub kind: SpaceKind,
    pub point: BundlePoint,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub hessian: Option<VerticalMetric>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub semispray: Option<Vec<f64>>,
    pub dmetric: DMetric,
    #[serde(rename = "N")]
    pub n_conn: Mat,
    /// `omega[a][i][j] = Ω^a_ij`.
    #[serde(rename = "Omega")]
    pub omega: T3,
    pub anholonomy: Anholonomy,
    #[serde(rename = "Gamma")]
    pub connection: DConnection,
    #[serde(rename = "Torsion")]
    pub torsion: DTorsion,
    #[serde(rename = "Curvature")]
    pub curvature: DCurvature,
    #[serde(rename = "Ricci")]
    pub ricci: Ricci,
    pub scalars: Scalars,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub constant_block_check: Option<ConstantBlockCheck>,
}

impl GeometryReport {
    /// Largest absolute entry of each curvature class present.
    pub fn curvature_max_abs(&self) -> (f64, f64, f64) {
        use crate::linalg::{flat4, max_abs};
        let c = &self.curvature;
        let mut r = max_abs(flat4(&c.r));
        let mut p = max_abs(flat4(&c.p));
        let mut s = max_abs(flat4(&c.s));
        if let Some(t) = &c.r_v {
            r = r.max(max_abs(flat4(t)));
        }
        if let Some(t) = &c.p_v {
            p = p.max(max_abs(flat4(t)));
        }
        if let Some(t) = &c.s_h {
            s = s.max(max_abs(flat4(t)));
        }
        (r, p, s)
    }
}
