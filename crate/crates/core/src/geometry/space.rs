use serde::{Deserialize, Serialize};

use super::GeometryError;
use crate::dsl::{Differentiator, Expr, LagrangianSpec, Var};
use crate::linalg::{build2, symbolic_inverse, Mat, SymMat};

/// How the fiber indices relate to the base indices.
///
/// In `Tangent` mode (`m = n`) fiber and base indices are identified, the
/// canonical d-connection has two independent blocks and the curvature has
/// three classes. `Vector` mode keeps all four connection blocks and six
/// curvature classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BundleMode {
    Tangent,
    Vector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceKind {
    /// Hessian metric and spray of a regular Lagrangian.
    Lagrangian,
    /// Identity blocks with the spray connection of a base metric.
    FlatLift,
    /// `m0 a_ij y^i y^j + e0 A_i y^i`.
    Electromagnetic,
    /// Constant blocks with an arbitrary N-connection.
    ConstantDMetric,
}

/// A d-metric `g ⊕ h` with N-connection, all as symbolic fields on the
/// bundle. Everything downstream (connection, torsion, curvature) is derived
/// from these three tables.
#[derive(Debug, Clone)]
pub struct Space {
    pub kind: SpaceKind,
    pub mode: BundleMode,
    pub n: usize,
    pub m: usize,
    /// Base block, `n x n`.
    pub g: SymMat,
    /// Fiber block, `m x m`.
    pub h: SymMat,
    /// `n_conn[a][i] = N^a_i`, `m x n`.
    pub n_conn: SymMat,
    /// Source Lagrangian when the metric is its Hessian, or the quadratic
    /// form whose spray defines `N` (flat lift).
    pub lagrangian: Option<LagrangianSpec>,
    /// `G^i` of the Lagrangian, when there is one.
    pub semispray: Option<Vec<Expr>>,
    /// Whether `g` is the Hessian of `lagrangian` (degeneracy is then
    /// reported as a non-regular Lagrangian).
    pub hessian_metric: bool,
}

/// Symmetric matrix from an upper-triangle generator, mirrored so that
/// `[i][j]` and `[j][i]` are the same node.
pub fn symmetric(n: usize, mut f: impl FnMut(usize, usize) -> Expr) -> SymMat {
    let mut out: SymMat = build2(n, n, |_, _| Expr::zero());
    for i in 0..n {
        for j in i..n {
            let e = f(i, j);
            out[i][j] = e.clone();
            out[j][i] = e;
        }
    }
    out
}

/// Vertical Hessian `½ ∂²L/∂y^a∂y^b` as a symbolic matrix.
pub fn hessian_block(spec: &LagrangianSpec, d: &mut Differentiator) -> SymMat {
    symmetric(spec.m, |a, b| {
        let dd = d.diff_many(&spec.body, &[Var::Fiber(a), Var::Fiber(b)]);
        Expr::mul(Expr::constant(0.5), dd)
    })
}

/// Semispray `G^i = ¼ g̃^{ij}(∂²L/∂y^j∂x^k y^k − ∂L/∂x^j)`.
pub fn semispray_exprs(spec: &LagrangianSpec, g_inv: &SymMat, d: &mut Differentiator) -> Vec<Expr> {
    let n = spec.n;
    let bracket: Vec<Expr> = (0..n)
        .map(|j| {
            let dyj = d.diff(&spec.body, Var::Fiber(j));
            let mut acc = Expr::zero();
            for k in 0..n {
                let mixed = d.diff(&dyj, Var::Base(k));
                acc = Expr::add(acc, Expr::mul(mixed, Expr::y(k)));
            }
            Expr::sub(acc, d.diff(&spec.body, Var::Base(j)))
        })
        .collect();
    (0..n)
        .map(|i| {
            let s = Expr::sum((0..n).map(|j| Expr::mul(g_inv[i][j].clone(), bracket[j].clone())));
            Expr::mul(Expr::constant(0.25), s)
        })
        .collect()
}

impl Space {
    /// Tangent-bundle space of a regular Lagrangian: `g = h = g̃`,
    /// `N^i_j = ∂G^i/∂y^j`.
    pub fn from_lagrangian(spec: &LagrangianSpec) -> Result<Space, GeometryError> {
        Self::lagrangian_with_kind(spec, SpaceKind::Lagrangian)
    }

    pub fn lagrangian_with_kind(
        spec: &LagrangianSpec,
        kind: SpaceKind,
    ) -> Result<Space, GeometryError> {
        if spec.m != spec.n {
            return Err(GeometryError::Dimension(format!(
                "Lagrangian geometry needs m = n, got n={}, m={}",
                spec.n, spec.m
            )));
        }
        let mut d = Differentiator::new();
        let g = hessian_block(spec, &mut d);
        let (g_inv, _) = symbolic_inverse(&g);
        let semispray = semispray_exprs(spec, &g_inv, &mut d);
        let n_conn = build2(spec.n, spec.n, |i, j| d.diff(&semispray[i], Var::Fiber(j)));
        Ok(Space {
            kind,
            mode: BundleMode::Tangent,
            n: spec.n,
            m: spec.m,
            h: g.clone(),
            g,
            n_conn,
            lagrangian: Some(spec.clone()),
            semispray: Some(semispray),
            hessian_metric: true,
        })
    }

    /// Identity blocks with `N` taken from the geodesic spray of
    /// `g_base(x)`.
    pub fn flat_lift(g_base: &SymMat) -> Result<Space, GeometryError> {
        let n = g_base.len();
        check_square(g_base, n, "g_base")?;
        check_depends_on_base_only(g_base, "g_base")?;
        let body = Expr::sum((0..n).flat_map(|i| {
            (0..n).map(move |j| (i, j))
        }).map(|(i, j)| Expr::mul(g_base[i][j].clone(), Expr::mul(Expr::y(i), Expr::y(j)))));
        let spec = LagrangianSpec { n, m: n, body };
        let spray = Self::lagrangian_with_kind(&spec, SpaceKind::FlatLift)?;
        let id = symmetric(n, |i, j| if i == j { Expr::one() } else { Expr::zero() });
        Ok(Space {
            g: id.clone(),
            h: id,
            hessian_metric: false,
            ..spray
        })
    }

    /// Constant blocks with an arbitrary N-connection, in vector-bundle mode.
    pub fn constant_dmetric(g: &Mat, h: &Mat, n_conn: SymMat) -> Result<Space, GeometryError> {
        let n = g.len();
        let m = h.len();
        if n == 0 || m == 0 {
            return Err(GeometryError::Dimension("empty d-metric block".into()));
        }
        for (name, blk) in [("g", g), ("h", h)] {
            let k = blk.len();
            if blk.iter().any(|row| row.len() != k) {
                return Err(GeometryError::Dimension(format!("{name} is not square")));
            }
            for i in 0..k {
                for j in 0..k {
                    let (a, b) = (blk[i][j], blk[j][i]);
                    if !a.is_finite() || (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                        return Err(GeometryError::Dimension(format!(
                            "{name} is not a finite symmetric matrix"
                        )));
                    }
                }
            }
        }
        if n_conn.len() != m || n_conn.iter().any(|row| row.len() != n) {
            return Err(GeometryError::Dimension(format!(
                "N must be {m} x {n} (rows are fiber indices)"
            )));
        }
        for row in &n_conn {
            for e in row {
                let (nn, mm) = e.dims_needed();
                if nn > n || mm > m {
                    return Err(GeometryError::Dimension(format!(
                        "N entry `{e}` references a coordinate outside n={n}, m={m}"
                    )));
                }
            }
        }
        Ok(Space {
            kind: SpaceKind::ConstantDMetric,
            mode: BundleMode::Vector,
            n,
            m,
            g: symmetric(n, |i, j| Expr::constant(g[i][j])),
            h: symmetric(m, |a, b| Expr::constant(h[a][b])),
            n_conn,
            lagrangian: None,
            semispray: None,
            hessian_metric: false,
        })
    }

    /// Same space viewed in the other bundle mode. Switching to `Tangent`
    /// requires `m = n` and `g`, `h` to be the same field.
    pub fn with_mode(mut self, mode: BundleMode) -> Result<Space, GeometryError> {
        if mode == BundleMode::Tangent {
            if self.m != self.n {
                return Err(GeometryError::Dimension("tangent mode needs m = n".into()));
            }
            let same = (0..self.n).all(|i| {
                (0..self.n).all(|j| {
                    crate::dsl::same_structure(&self.g[i][j], &self.h[i][j])
                })
            });
            if !same {
                return Err(GeometryError::Dimension(
                    "tangent mode needs identical g and h blocks".into(),
                ));
            }
        }
        self.mode = mode;
        Ok(self)
    }

    /// True when both metric blocks are constant.
    pub fn constant_blocks(&self) -> bool {
        self.g.iter().chain(self.h.iter()).flatten().all(|e| e.as_const().is_some())
    }
}

fn check_square(a: &SymMat, n: usize, name: &str) -> Result<(), GeometryError> {
    if n == 0 || a.iter().any(|row| row.len() != n) {
        return Err(GeometryError::Dimension(format!("{name} must be a nonempty square matrix")));
    }
    Ok(())
}

fn check_depends_on_base_only(a: &SymMat, name: &str) -> Result<(), GeometryError> {
    for row in a {
        for e in row {
            let (nn, mm) = e.dims_needed();
            if mm > 0 || nn > a.len() {
                return Err(GeometryError::Dimension(format!(
                    "{name} entry `{e}` must depend on x1..x{} only",
                    a.len()
                )));
            }
        }
    }
    Ok(())
}
