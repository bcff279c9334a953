use super::space::{hessian_block, semispray_exprs};
use super::{
    Anholonomy, BundleMode, ConstantBlockCheck, DConnection, DCurvature, DMetric, DTorsion, Dims,
    GeometryError, GeometryReport, Ricci, RicciScalars, Scalars, Space, SpaceKind,
    VerticalMetric,
};
use crate::dsl::{BundlePoint, Differentiator, Expr, LagrangianSpec, Tape, Var};
use crate::linalg::{
    build2, build3, build4, checked_inverse, flat3, max_abs, symbolic_inverse, Mat, SymMat,
    SymT3, SymT4, T3, T4,
};

/// Coefficients below this are reported as vanishing in the constant-block
/// check.
const VANISHING: f64 = 1e-12;

/// N-elongated derivatives `e_k = ∂_k − N^a_k ∂_a` and `e_a = ∂_a`.
struct Frame<'a> {
    d: Differentiator,
    n_conn: &'a SymMat,
    m: usize,
}

impl<'a> Frame<'a> {
    fn eh(&mut self, f: &Expr, k: usize) -> Expr {
        let mut acc = self.d.diff(f, Var::Base(k));
        for a in 0..self.m {
            let nak = &self.n_conn[a][k];
            if nak.is_zero() {
                continue;
            }
            let dfa = self.d.diff(f, Var::Fiber(a));
            if !dfa.is_zero() {
                acc = Expr::sub(acc, Expr::mul(nak.clone(), dfa));
            }
        }
        acc
    }

    fn ev(&mut self, f: &Expr, a: usize) -> Expr {
        self.d.diff(f, Var::Fiber(a))
    }
}

fn sum(terms: impl IntoIterator<Item = Expr>) -> Expr {
    Expr::sum(terms)
}

fn half(e: Expr) -> Expr {
    Expr::mul(Expr::constant(0.5), e)
}

/// Antisymmetric table in its last two indices, built from the `j < k`
/// entries so the symmetry is exact.
fn antisym_last2<F>(dims: [usize; 4], mut f: F) -> SymT4
where
    F: FnMut(usize, usize, usize, usize) -> Expr,
{
    let mut out = build4(dims, |_, _, _, _| Expr::zero());
    for a in 0..dims[0] {
        for b in 0..dims[1] {
            for j in 0..dims[2] {
                for k in (j + 1)..dims[3] {
                    let e = f(a, b, j, k);
                    out[a][b][k][j] = Expr::neg(e.clone());
                    out[a][b][j][k] = e;
                }
            }
        }
    }
    out
}

/// All symbolic tables of a space.
struct Tables {
    g_inv: SymMat,
    h_inv: SymMat,
    omega: SymT3,
    w_hv: SymT3,
    l_h: SymT3,
    l_v: SymT3,
    c_h: SymT3,
    c_v: SymT3,
    t_ijk: SymT3,
    t_ija: SymT3,
    t_aji: SymT3,
    t_abi: SymT3,
    t_abc: SymT3,
    r: SymT4,
    p: SymT4,
    s: SymT4,
    r_v: Option<SymT4>,
    p_v: Option<SymT4>,
    s_h: Option<SymT4>,
}

impl Tables {
    fn build(space: &Space) -> Tables {
        let (n, m) = (space.n, space.m);
        let tangent = space.mode == BundleMode::Tangent;
        let g = &space.g;
        let h = &space.h;
        let nc = &space.n_conn;
        let (g_inv, _) = symbolic_inverse(g);
        let (h_inv, _) = if tangent {
            (g_inv.clone(), Expr::zero())
        } else {
            symbolic_inverse(h)
        };
        let mut fr = Frame {
            d: Differentiator::new(),
            n_conn: nc,
            m,
        };

        // Ω^a_ij = e_j N^a_i − e_i N^a_j
        let mut omega = build3(m, n, n, |_, _, _| Expr::zero());
        for a in 0..m {
            for i in 0..n {
                for j in (i + 1)..n {
                    let e = Expr::sub(fr.eh(&nc[a][i], j), fr.eh(&nc[a][j], i));
                    omega[a][j][i] = Expr::neg(e.clone());
                    omega[a][i][j] = e;
                }
            }
        }
        // W^b_ia = ∂_a N^b_i
        let w_hv = build3(m, n, m, |b, i, a| fr.ev(&nc[b][i], a));

        // L^i_jk = ½ g^ir (e_k g_jr + e_j g_kr − e_r g_jk), symmetric in jk
        let mut l_h = build3(n, n, n, |_, _, _| Expr::zero());
        {
            let eg = build3(n, n, n, |j, r, k| fr.eh(&g[j][r], k));
            for i in 0..n {
                for j in 0..n {
                    for k in j..n {
                        let e = half(sum((0..n).map(|r| {
                            let br = Expr::sub(
                                Expr::add(eg[j][r][k].clone(), eg[k][r][j].clone()),
                                eg[j][k][r].clone(),
                            );
                            Expr::mul(g_inv[i][r].clone(), br)
                        })));
                        l_h[i][k][j] = e.clone();
                        l_h[i][j][k] = e;
                    }
                }
            }
        }
        // C^a_bc = ½ h^ad (∂_c h_bd + ∂_b h_cd − ∂_d h_bc), symmetric in bc
        let mut c_v = build3(m, m, m, |_, _, _| Expr::zero());
        {
            let dh = build3(m, m, m, |b, d, c| fr.ev(&h[b][d], c));
            for a in 0..m {
                for b in 0..m {
                    for c in b..m {
                        let e = half(sum((0..m).map(|d| {
                            let br = Expr::sub(
                                Expr::add(dh[b][d][c].clone(), dh[c][d][b].clone()),
                                dh[b][c][d].clone(),
                            );
                            Expr::mul(h_inv[a][d].clone(), br)
                        })));
                        c_v[a][c][b] = e.clone();
                        c_v[a][b][c] = e;
                    }
                }
            }
        }

        let (l_v, c_h) = if tangent {
            (
                build3(m, m, n, |_, _, _| Expr::zero()),
                build3(n, n, m, |_, _, _| Expr::zero()),
            )
        } else {
            // L^a_bk = ∂_b N^a_k + ½ h^ac (e_k h_bc − h_dc ∂_b N^d_k − h_db ∂_c N^d_k)
            let l_v = build3(m, m, n, |a, b, k| {
                let inner = sum((0..m).map(|c| {
                    let mut br = fr.eh(&h[b][c], k);
                    for d in 0..m {
                        br = Expr::sub(br, Expr::mul(h[d][c].clone(), w_hv[d][k][b].clone()));
                        br = Expr::sub(br, Expr::mul(h[d][b].clone(), w_hv[d][k][c].clone()));
                    }
                    Expr::mul(h_inv[a][c].clone(), br)
                }));
                Expr::add(w_hv[a][k][b].clone(), half(inner))
            });
            // C^i_jc = ½ g^ik ∂_c g_jk
            let c_h = build3(n, n, m, |i, j, c| {
                half(sum((0..n).map(|k| Expr::mul(g_inv[i][k].clone(), fr.ev(&g[j][k], c)))))
            });
            (l_v, c_h)
        };
        // tangent mode identifies the cross blocks with the diagonal ones
        let lv = if tangent { &l_h } else { &l_v };
        let ch = if tangent { &c_v } else { &c_h };

        let t_ijk = build3(n, n, n, |i, j, k| {
            if j == k {
                Expr::zero()
            } else if j < k {
                Expr::sub(l_h[i][j][k].clone(), l_h[i][k][j].clone())
            } else {
                Expr::neg(Expr::sub(l_h[i][k][j].clone(), l_h[i][j][k].clone()))
            }
        });
        let t_ija = build3(n, n, m, |i, j, a| ch[i][j][a].clone());
        let t_aji = build3(m, n, n, |a, j, i| omega[a][j][i].clone());
        let t_abi = build3(m, m, n, |a, b, i| Expr::sub(w_hv[a][i][b].clone(), lv[a][b][i].clone()));
        let t_abc = build3(m, m, m, |a, b, c| {
            if b == c {
                Expr::zero()
            } else if b < c {
                Expr::sub(c_v[a][b][c].clone(), c_v[a][c][b].clone())
            } else {
                Expr::neg(Expr::sub(c_v[a][c][b].clone(), c_v[a][b][c].clone()))
            }
        });

        // R^i_hjk = e_k L^i_hj − e_j L^i_hk + L^m_hj L^i_mk − L^m_hk L^i_mj − C^i_ha Ω^a_kj
        let r = antisym_last2([n, n, n, n], |i, hh, j, k| {
            let mut e = Expr::sub(fr.eh(&l_h[i][hh][j], k), fr.eh(&l_h[i][hh][k], j));
            for mm in 0..n {
                e = Expr::add(e, Expr::mul(l_h[mm][hh][j].clone(), l_h[i][mm][k].clone()));
                e = Expr::sub(e, Expr::mul(l_h[mm][hh][k].clone(), l_h[i][mm][j].clone()));
            }
            for a in 0..m {
                e = Expr::sub(e, Expr::mul(ch[i][hh][a].clone(), omega[a][k][j].clone()));
            }
            e
        });

        // T^b_ak = ∂_a N^b_k − L^b_ak
        let t_bak = |b: usize, a: usize, k: usize| Expr::sub(w_hv[b][k][a].clone(), lv[b][a][k].clone());

        // P^i_jka = ∂_a L^i_jk − D_k C^i_ja + C^i_jb T^b_ak
        let p = build4([n, n, n, m], |i, j, k, a| {
            let mut dkc = fr.eh(&ch[i][j][a], k);
            for mm in 0..n {
                dkc = Expr::add(dkc, Expr::mul(l_h[i][mm][k].clone(), ch[mm][j][a].clone()));
                dkc = Expr::sub(dkc, Expr::mul(l_h[mm][j][k].clone(), ch[i][mm][a].clone()));
            }
            for b in 0..m {
                dkc = Expr::sub(dkc, Expr::mul(lv[b][a][k].clone(), ch[i][j][b].clone()));
            }
            let mut e = Expr::sub(fr.ev(&l_h[i][j][k], a), dkc);
            for b in 0..m {
                e = Expr::add(e, Expr::mul(ch[i][j][b].clone(), t_bak(b, a, k)));
            }
            e
        });

        // S^a_bcd = ∂_d C^a_bc − ∂_c C^a_bd + C^e_bc C^a_ed − C^e_bd C^a_ec
        let s = antisym_last2([m, m, m, m], |a, b, c, d| {
            let mut e = Expr::sub(fr.ev(&c_v[a][b][c], d), fr.ev(&c_v[a][b][d], c));
            for ee in 0..m {
                e = Expr::add(e, Expr::mul(c_v[ee][b][c].clone(), c_v[a][ee][d].clone()));
                e = Expr::sub(e, Expr::mul(c_v[ee][b][d].clone(), c_v[a][ee][c].clone()));
            }
            e
        });

        let (r_v, p_v, s_h) = if tangent {
            (None, None, None)
        } else {
            // R^a_bjk = e_k L^a_bj − e_j L^a_bk + L^c_bj L^a_ck − L^c_bk L^a_cj − C^a_bc Ω^c_kj
            let r_v = antisym_last2([m, m, n, n], |a, b, j, k| {
                let mut e = Expr::sub(fr.eh(&l_v[a][b][j], k), fr.eh(&l_v[a][b][k], j));
                for c in 0..m {
                    e = Expr::add(e, Expr::mul(l_v[c][b][j].clone(), l_v[a][c][k].clone()));
                    e = Expr::sub(e, Expr::mul(l_v[c][b][k].clone(), l_v[a][c][j].clone()));
                    e = Expr::sub(e, Expr::mul(c_v[a][b][c].clone(), omega[c][k][j].clone()));
                }
                e
            });
            // P^c_bka = ∂_a L^c_bk − D_k C^c_ba + C^c_bd T^d_ak
            let p_v = build4([m, m, n, m], |c, b, k, a| {
                let mut dkc = fr.eh(&c_v[c][b][a], k);
                for d in 0..m {
                    dkc = Expr::add(dkc, Expr::mul(l_v[c][d][k].clone(), c_v[d][b][a].clone()));
                    dkc = Expr::sub(dkc, Expr::mul(l_v[d][b][k].clone(), c_v[c][d][a].clone()));
                    dkc = Expr::sub(dkc, Expr::mul(l_v[d][a][k].clone(), c_v[c][b][d].clone()));
                }
                let mut e = Expr::sub(fr.ev(&l_v[c][b][k], a), dkc);
                for d in 0..m {
                    e = Expr::add(e, Expr::mul(c_v[c][b][d].clone(), t_bak(d, a, k)));
                }
                e
            });
            // S^i_jbc = ∂_c C^i_jb − ∂_b C^i_jc + C^h_jb C^i_hc − C^h_jc C^i_hb
            let s_h = antisym_last2([n, n, m, m], |i, j, b, c| {
                let mut e = Expr::sub(fr.ev(&c_h[i][j][b], c), fr.ev(&c_h[i][j][c], b));
                for hh in 0..n {
                    e = Expr::add(e, Expr::mul(c_h[hh][j][b].clone(), c_h[i][hh][c].clone()));
                    e = Expr::sub(e, Expr::mul(c_h[hh][j][c].clone(), c_h[i][hh][b].clone()));
                }
                e
            });
            (Some(r_v), Some(p_v), Some(s_h))
        };

        Tables {
            g_inv,
            h_inv,
            omega,
            w_hv,
            l_h,
            l_v,
            c_h,
            c_v,
            t_ijk,
            t_ija,
            t_aji,
            t_abi,
            t_abc,
            r,
            p,
            s,
            r_v,
            p_v,
            s_h,
        }
    }
}

/// Flattens symbolic tables into one output list and reads evaluated values
/// back in the same order.
#[derive(Default)]
struct Packer {
    exprs: Vec<Expr>,
}

impl Packer {
    fn mat(&mut self, a: &SymMat) {
        self.exprs.extend(a.iter().flatten().cloned());
    }
    fn t3(&mut self, a: &SymT3) {
        self.exprs.extend(a.iter().flatten().flatten().cloned());
    }
    fn t4(&mut self, a: &SymT4) {
        self.exprs.extend(a.iter().flatten().flatten().flatten().cloned());
    }
}

struct Reader<'a> {
    vals: &'a [f64],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, what: &str) -> Result<f64, GeometryError> {
        let v = self.vals[self.pos];
        self.pos += 1;
        if !v.is_finite() {
            return Err(GeometryError::NonFinite(what.to_string()));
        }
        Ok(v)
    }
    fn vec(&mut self, n: usize, what: &str) -> Result<Vec<f64>, GeometryError> {
        (0..n).map(|_| self.take(what)).collect()
    }
    fn mat(&mut self, r: usize, c: usize, what: &str) -> Result<Mat, GeometryError> {
        (0..r).map(|_| self.vec(c, what)).collect()
    }
    fn t3(&mut self, d: [usize; 3], what: &str) -> Result<T3, GeometryError> {
        (0..d[0]).map(|_| self.mat(d[1], d[2], what)).collect()
    }
    fn t4(&mut self, d: [usize; 4], what: &str) -> Result<T4, GeometryError> {
        (0..d[0]).map(|_| self.t3([d[1], d[2], d[3]], what)).collect()
    }
}

/// Symbolic geometry of a space, compiled once and evaluated at any number
/// of points. Evaluation is pure and `Geometry` is `Sync`.
pub struct Geometry {
    space: Space,
    blocks: Tape,
    full: Tape,
}

impl Geometry {
    pub fn new(space: &Space) -> Geometry {
        let t = Tables::build(space);
        let mut blocks = Packer::default();
        blocks.mat(&space.g);
        blocks.mat(&space.h);

        let mut p = Packer::default();
        p.mat(&space.g);
        p.mat(&space.h);
        p.mat(&space.n_conn);
        if let Some(g) = &space.semispray {
            p.exprs.extend(g.iter().cloned());
        }
        p.t3(&t.omega);
        p.t3(&t.w_hv);
        p.t3(&t.l_h);
        p.t3(&t.l_v);
        p.t3(&t.c_h);
        p.t3(&t.c_v);
        p.t3(&t.t_ijk);
        p.t3(&t.t_ija);
        p.t3(&t.t_aji);
        p.t3(&t.t_abi);
        p.t3(&t.t_abc);
        p.t4(&t.r);
        p.t4(&t.p);
        p.t4(&t.s);
        for x in [&t.r_v, &t.p_v, &t.s_h].into_iter().flatten() {
            p.t4(x);
        }
        // the symbolic inverses are only needed to build the tables
        drop((t.g_inv, t.h_inv));
        Geometry {
            space: space.clone(),
            blocks: Tape::compile(&blocks.exprs),
            full: Tape::compile(&p.exprs),
        }
    }

    pub fn space(&self) -> &Space {
        &self.space
    }

    fn check_point(&self, pt: &BundlePoint) -> Result<(), GeometryError> {
        if pt.x.len() != self.space.n || pt.y.len() != self.space.m {
            return Err(GeometryError::Dimension(format!(
                "point has {} base and {} fiber coordinates, space needs {} and {}",
                pt.x.len(),
                pt.y.len(),
                self.space.n,
                self.space.m
            )));
        }
        Ok(())
    }

    /// Evaluates the metric blocks and their inverses, rejecting degenerate
    /// blocks before anything divides by a determinant.
    pub fn metric_blocks(&self, pt: &BundlePoint) -> Result<(Mat, Mat, Mat, Mat), GeometryError> {
        self.check_point(pt)?;
        let (n, m) = (self.space.n, self.space.m);
        let vals = self.blocks.eval(pt)?;
        let mut rd = Reader { vals: &vals, pos: 0 };
        let g = rd.mat(n, n, "g")?;
        let h = rd.mat(m, m, "h")?;
        let g_inv = checked_inverse(&g).map_err(|e| {
            if self.space.hessian_metric {
                GeometryError::DegenerateHessian {
                    min_pivot: e.min_pivot,
                    scale: e.scale,
                }
            } else {
                GeometryError::DegenerateBlock {
                    block: "g",
                    min_pivot: e.min_pivot,
                    scale: e.scale,
                }
            }
        })?;
        let h_inv = checked_inverse(&h).map_err(|e| GeometryError::DegenerateBlock {
            block: "h",
            min_pivot: e.min_pivot,
            scale: e.scale,
        })?;
        Ok((g, h, g_inv, h_inv))
    }

    pub fn evaluate(&self, pt: &BundlePoint) -> Result<GeometryReport, GeometryError> {
        let (_, _, g_inv, h_inv) = self.metric_blocks(pt)?;
        let sp = &self.space;
        let (n, m) = (sp.n, sp.m);
        let vals = self.full.eval(pt)?;
        let mut rd = Reader { vals: &vals, pos: 0 };
        let g = rd.mat(n, n, "g")?;
        let h = rd.mat(m, m, "h")?;
        let n_conn = rd.mat(m, n, "N")?;
        let semispray = match &sp.semispray {
            Some(_) => Some(rd.vec(n, "semispray")?),
            None => None,
        };
        let omega = rd.t3([m, n, n], "Omega")?;
        let w_hv = rd.t3([m, n, m], "W")?;
        let connection = DConnection {
            l_h: rd.t3([n, n, n], "L^i_jk")?,
            l_v: rd.t3([m, m, n], "L^a_bk")?,
            c_h: rd.t3([n, n, m], "C^i_jc")?,
            c_v: rd.t3([m, m, m], "C^a_bc")?,
        };
        let torsion = DTorsion {
            t_ijk: rd.t3([n, n, n], "T^i_jk")?,
            t_ija: rd.t3([n, n, m], "T^i_ja")?,
            t_aji: rd.t3([m, n, n], "T^a_ji")?,
            t_abi: rd.t3([m, m, n], "T^a_bi")?,
            t_abc: rd.t3([m, m, m], "T^a_bc")?,
        };
        let r = rd.t4([n, n, n, n], "R")?;
        let p = rd.t4([n, n, n, m], "P")?;
        let s = rd.t4([m, m, m, m], "S")?;
        let vector = sp.mode == BundleMode::Vector;
        let (r_v, p_v, s_h) = if vector {
            (
                Some(rd.t4([m, m, n, n], "R_v")?),
                Some(rd.t4([m, m, n, m], "P_v")?),
                Some(rd.t4([n, n, m, m], "S_h")?),
            )
        } else {
            (None, None, None)
        };
        debug_assert_eq!(rd.pos, vals.len());
        let curvature = DCurvature {
            r,
            p,
            s,
            r_v,
            p_v,
            s_h,
        };
        let dmetric = DMetric {
            g: g.clone(),
            h,
            n_conn: n_conn.clone(),
        };
        let rs = ricci_with_inverses(&curvature, &g_inv, &h_inv);
        let hessian = if sp.hessian_metric {
            Some(VerticalMetric { g, g_inv })
        } else {
            None
        };
        let constant_block_check = if sp.constant_blocks() {
            let c = &connection;
            let mx = max_abs(
                flat3(&c.l_h)
                    .chain(flat3(&c.l_v))
                    .chain(flat3(&c.c_h))
                    .chain(flat3(&c.c_v)),
            );
            Some(ConstantBlockCheck {
                max_abs_connection: mx,
                connection_vanishes: mx < VANISHING,
            })
        } else {
            None
        };
        let w_hh = omega.clone();
        Ok(GeometryReport {
            dims: Dims { n, m },
            mode: sp.mode,
            kind: sp.kind,
            point: pt.clone(),
            hessian,
            semispray,
            dmetric,
            n_conn,
            omega,
            anholonomy: Anholonomy { w_hv, w_hh },
            connection,
            torsion,
            curvature,
            ricci: rs.ricci,
            scalars: rs.scalars,
            constant_block_check,
        })
    }
}

fn ricci_with_inverses(c: &DCurvature, g_inv: &Mat, h_inv: &Mat) -> RicciScalars {
    let n = c.r.len();
    let m = c.s.len();
    let r_ij = build2(n, n, |i, j| (0..n).map(|k| c.r[k][i][j][k]).sum());
    let r_ia = build2(n, m, |i, a| -(0..n).map(|k| c.p[k][i][k][a]).sum::<f64>());
    let r_ai = build2(m, n, |a, i| match &c.p_v {
        Some(pv) => (0..m).map(|b| pv[b][a][i][b]).sum(),
        // tangent mode: fiber and base indices are identified
        None => (0..m).map(|b| c.p[b][a][i][b]).sum(),
    });
    let s_ab = build2(m, m, |a, b| (0..m).map(|cc| c.s[cc][a][b][cc]).sum());
    let r_fwd: f64 = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| g_inv[i][j] * r_ij[i][j]).sum();
    let s_bwd: f64 = (0..m).flat_map(|a| (0..m).map(move |b| (a, b))).map(|(a, b)| h_inv[a][b] * s_ab[a][b]).sum();
    RicciScalars {
        ricci: Ricci {
            r_ij,
            r_ia,
            r_ai,
            s_ab,
        },
        scalars: Scalars {
            r_fwd,
            s_bwd,
            total: r_fwd + s_bwd,
        },
    }
}

fn map_degenerate_hessian(e: crate::linalg::Degenerate) -> GeometryError {
    GeometryError::DegenerateHessian {
        min_pivot: e.min_pivot,
        scale: e.scale,
    }
}

/// `g̃ = ½ ∂²L/∂y∂y` at `p` with its inverse.
pub fn hessian_metric(spec: &LagrangianSpec, p: &BundlePoint) -> Result<VerticalMetric, GeometryError> {
    let mut d = Differentiator::new();
    let blk = hessian_block(spec, &mut d);
    let vals = Tape::compile(&blk.iter().flatten().cloned().collect::<Vec<_>>()).eval(p)?;
    let g: Mat = vals.chunks(spec.m).map(|r| r.to_vec()).collect();
    if g.iter().flatten().any(|v| !v.is_finite()) {
        return Err(GeometryError::NonFinite("Hessian".into()));
    }
    let g_inv = checked_inverse(&g).map_err(map_degenerate_hessian)?;
    Ok(VerticalMetric { g, g_inv })
}

/// Canonical semispray `G^i` at `p`.
pub fn semispray(spec: &LagrangianSpec, p: &BundlePoint) -> Result<Vec<f64>, GeometryError> {
    if spec.m != spec.n {
        return Err(GeometryError::Dimension("semispray needs m = n".into()));
    }
    hessian_metric(spec, p)?;
    let mut d = Differentiator::new();
    let blk = hessian_block(spec, &mut d);
    let (inv, _) = symbolic_inverse(&blk);
    let g = semispray_exprs(spec, &inv, &mut d);
    Ok(Tape::compile(&g).eval(p)?)
}

/// `N^i_j = ∂G^i/∂y^j` at `p`, as `[i][j]`.
pub fn nconnection(spec: &LagrangianSpec, p: &BundlePoint) -> Result<Mat, GeometryError> {
    let space = Space::from_lagrangian(spec)?;
    hessian_metric(spec, p)?;
    let vals = Tape::compile(&space.n_conn.iter().flatten().cloned().collect::<Vec<_>>()).eval(p)?;
    Ok(vals.chunks(spec.n).map(|r| r.to_vec()).collect())
}

/// `Ω^a_ij` at `p`, as `[a][i][j]`.
pub fn nconnection_curvature(space: &Space, p: &BundlePoint) -> Result<T3, GeometryError> {
    Ok(Geometry::new(space).evaluate(p)?.omega)
}

pub fn anholonomy(space: &Space, p: &BundlePoint) -> Result<Anholonomy, GeometryError> {
    Ok(Geometry::new(space).evaluate(p)?.anholonomy)
}

/// Sasaki lift of a Lagrangian: `g = h = g̃` with its N-connection.
pub fn sasaki_dmetric(spec: &LagrangianSpec, p: &BundlePoint) -> Result<DMetric, GeometryError> {
    let space = Space::from_lagrangian(spec)?;
    let geo = Geometry::new(&space);
    let (g, h, _, _) = geo.metric_blocks(p)?;
    let vals = Tape::compile(&space.n_conn.iter().flatten().cloned().collect::<Vec<_>>()).eval(p)?;
    Ok(DMetric {
        g,
        h,
        n_conn: vals.chunks(spec.n).map(|r| r.to_vec()).collect(),
    })
}

pub fn canonical_dconnection(space: &Space, p: &BundlePoint) -> Result<DConnection, GeometryError> {
    Ok(Geometry::new(space).evaluate(p)?.connection)
}

pub fn dtorsion(space: &Space, p: &BundlePoint) -> Result<DTorsion, GeometryError> {
    Ok(Geometry::new(space).evaluate(p)?.torsion)
}

pub fn dcurvature(space: &Space, p: &BundlePoint) -> Result<DCurvature, GeometryError> {
    Ok(Geometry::new(space).evaluate(p)?.curvature)
}

/// Ricci d-tensor and scalar curvatures from curvature and metric values.
pub fn ricci_and_scalars(c: &DCurvature, dm: &DMetric) -> Result<RicciScalars, GeometryError> {
    let n = dm.g.len();
    let m = dm.h.len();
    let shape_ok = c.r.len() == n
        && c.s.len() == m
        && c.p.len() == n
        && c.p.iter().flatten().flatten().all(|row| row.len() == m);
    if !shape_ok {
        return Err(GeometryError::Dimension("curvature and metric dimensions disagree".into()));
    }
    let g_inv = checked_inverse(&dm.g).map_err(|e| GeometryError::DegenerateBlock {
        block: "g",
        min_pivot: e.min_pivot,
        scale: e.scale,
    })?;
    let h_inv = checked_inverse(&dm.h).map_err(|e| GeometryError::DegenerateBlock {
        block: "h",
        min_pivot: e.min_pivot,
        scale: e.scale,
    })?;
    Ok(ricci_with_inverses(c, &g_inv, &h_inv))
}

impl SpaceKind {
    pub fn label(self) -> &'static str {
        match self {
            SpaceKind::Lagrangian => "lagrangian_expr",
            SpaceKind::FlatLift => "flat_lift",
            SpaceKind::Electromagnetic => "em",
            SpaceKind::ConstantDMetric => "constant_dmetric",
        }
    }
}
