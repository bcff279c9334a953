//! Bi-Hamiltonian operators, the vector mKdV hierarchy and the vector
//! sine-Gordon flow for a principal-normal field `v: [0, Λ) → ℝ^p` on a
//! periodic grid.
//!
//! The same engine serves both copies of the hierarchy: `p = n − 1` with the
//! constant `→R` and `p = m − 1` with `←S`.
//!
//! Two antiderivative gauges appear. The numeric operators (`op_j`, `op_h`,
//! `recursion`) use the zero-mean spectral `D⁻¹`. The hierarchy flows are
//! generated exactly in the local gauge by [`jet`], where `D⁻¹` of a total
//! derivative carries no integration constant. The two differ by the
//! projected means, which [`Engine::recursion_expanded`] reports explicitly.

pub mod jet;
mod sg;
mod spectral;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use jet::Compiled;

pub use sg::{FrameFlowState, SgStep};
pub use spectral::{CovectorField1D, Field, Grid1D, Spectral, VectorField1D};

/// Default factor `C` in the time-step cap `dt ≤ C·Δl^(2k+1)`.
pub const DEFAULT_DT_FACTOR: f64 = 0.05;

/// Fields larger than this are treated as a blow-up.
pub const BLOWUP_THRESHOLD: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolitonError {
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("invalid field: {0}")]
    Shape(String),
    #[error("grid mismatch: {left:?} vs {right:?} (n_pts, length, p)")]
    Mismatch {
        left: (usize, f64, usize),
        right: (usize, f64, usize),
    },
    #[error("unsupported hierarchy level {0}")]
    UnsupportedLevel(i32),
    #[error("time step must be positive and finite, got {0}")]
    InvalidDt(f64),
    #[error("integration diverged at tau = {tau} (step {step})")]
    Diverged {
        tau: f64,
        step: usize,
        last: Box<FlowState>,
    },
    #[error("frame constraint violated: |e_par^2 + |e_perp|^2 - 1| = {0:e}")]
    Constraint(f64),
    #[error("not a total derivative: {0}")]
    NotExact(String),
}

/// Conserved-quantity sample. `h2_printed` keeps the density's
/// `−½(v·v_l)` term, `h2_periodic` drops it, `h2_squared` reads it as
/// `−½(v·v_l)²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianRecord {
    pub tau: f64,
    pub h0: f64,
    pub h1: f64,
    pub h2_printed: f64,
    pub h2_periodic: f64,
    pub h2_squared: f64,
    /// Largest mean removed by the zero-mean `D⁻¹` inside `H(J(v_l))`.
    pub mass_projection: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    pub v: Field,
    pub tau: f64,
    pub level: i32,
    pub r_const: f64,
    pub history: Vec<HamiltonianRecord>,
    /// Record Hamiltonians every this many steps; 0 disables recording.
    pub record_every: usize,
    pub steps: usize,
}

/// Printed expansion of `R(e)` next to the mean terms that the zero-mean
/// `D⁻¹` adds to the composition: `H(J(e)) = printed + mean_terms`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpandedRecursion {
    pub printed: Field,
    /// `−⟨v·e⟩ v − v⌋⟨v∧e⟩`.
    pub mean_terms: Field,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalReport {
    pub k: u32,
    /// Gateaux finite-difference `δH^(k)/δv`.
    pub varpi: Field,
    /// Against the analytic gradient (`v` for k = 0,
    /// `v_2l + ½|v|²v` for k = 1).
    pub varpi_residual: f64,
    /// `‖H(ϖ) − flow_rhs(k, 0)‖∞`.
    pub ladder_residual: f64,
    /// Size of the zero-mean gauge term `v⌋⟨v∧v_l⟩` (k = 1), which vanishes
    /// for p = 1.
    pub gauge_term: f64,
    /// Ladder residual after adding the gauge term back.
    pub ladder_residual_gauge_fixed: f64,
}

/// Spectral operators and the compiled hierarchy for one `(grid, p)`.
#[derive(Debug, Clone)]
pub struct Engine {
    spectral: Spectral,
    p: usize,
    /// `e^(0)`, `e^(1)`, `e^(2)`, one compiled polynomial per component.
    levels: Vec<Vec<Compiled>>,
    max_order: u32,
}

/// Largest hierarchy level supported by [`Engine::flow_rhs`].
pub const MAX_LEVEL: i32 = 2;

fn contract_const(v: &Field, m: &[Vec<f64>]) -> Field {
    let p = v.p();
    let mut out = Field::zeros(v.grid, p);
    for j in 0..p {
        for i in 0..p {
            if m[i][j] != 0.0 {
                for (o, vi) in out.comps[j].iter_mut().zip(&v.comps[i]) {
                    *o += vi * m[i][j];
                }
            }
        }
    }
    out
}

fn mean(f: &[f64]) -> f64 {
    f.iter().sum::<f64>() / f.len() as f64
}

fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

impl Engine {
    pub fn new(grid: Grid1D, p: usize) -> Result<Self, SolitonError> {
        if p == 0 {
            return Err(SolitonError::Shape("p must be at least 1".into()));
        }
        let h = jet::hierarchy(p, MAX_LEVEL as usize)?;
        let levels: Vec<Vec<Compiled>> = h
            .iter()
            .map(|e| e.iter().map(Compiled::new).collect())
            .collect();
        let max_order = levels
            .iter()
            .flatten()
            .map(|c| c.max_order)
            .max()
            .unwrap_or(1);
        Ok(Engine {
            spectral: Spectral::new(grid),
            p,
            levels,
            max_order,
        })
    }

    pub fn grid(&self) -> Grid1D {
        self.spectral.grid()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn spectral(&self) -> &Spectral {
        &self.spectral
    }

    fn check(&self, f: &Field) -> Result<(), SolitonError> {
        if f.grid != self.grid() || f.p() != self.p {
            return Err(SolitonError::Mismatch {
                left: (self.grid().n_pts, self.grid().length, self.p),
                right: (f.grid.n_pts, f.grid.length, f.p()),
            });
        }
        Ok(())
    }

    pub fn ddx(&self, f: &Field) -> Field {
        self.spectral.ddx(f)
    }

    pub fn dinv(&self, f: &Field) -> (Field, f64) {
        self.spectral.dinv(f)
    }

    fn j_inner(&self, v: &Field, e: &Field) -> (Field, f64) {
        let (a, m) = self.spectral.antideriv(&v.dot(e));
        (self.spectral.ddx(e).add(&v.times(&a)), m.abs())
    }

    fn h_inner(&self, v: &Field, w: &Field) -> (Field, f64) {
        let p = self.p;
        let mut out = self.spectral.ddx(w);
        let mut worst: f64 = 0.0;
        for i in 0..p {
            for j in (i + 1)..p {
                let wedge: Vec<f64> = (0..v.grid.n_pts)
                    .map(|t| v.comps[i][t] * w.comps[j][t] - w.comps[i][t] * v.comps[j][t])
                    .collect();
                let (m, mm) = self.spectral.antideriv(&wedge);
                worst = worst.max(mm.abs());
                for t in 0..v.grid.n_pts {
                    out.comps[j][t] += v.comps[i][t] * m[t];
                    out.comps[i][t] -= v.comps[j][t] * m[t];
                }
            }
        }
        (out, worst)
    }

    /// `J(e) = e_l + D⁻¹(v·e) v`.
    pub fn op_j(&self, v: &Field, e: &Field) -> Result<Field, SolitonError> {
        self.check(v)?;
        self.check(e)?;
        Ok(self.j_inner(v, e).0)
    }

    /// `H(w) = w_l + v⌋D⁻¹(v∧w)` with `(v⌋M)_j = Σ_i v_i M_ij`.
    pub fn op_h(&self, v: &Field, w: &Field) -> Result<Field, SolitonError> {
        self.check(v)?;
        self.check(w)?;
        Ok(self.h_inner(v, w).0)
    }

    /// `R(e) = H(J(e))` with zero-mean `D⁻¹`.
    pub fn recursion(&self, v: &Field, e: &Field) -> Result<Field, SolitonError> {
        let j = self.op_j(v, e)?;
        self.op_h(v, &j)
    }

    /// `e_2l + |v|²e + D⁻¹(v·e)v_l − v⌋D⁻¹(v_l∧e)` and the mean terms.
    pub fn recursion_expanded(&self, v: &Field, e: &Field) -> Result<ExpandedRecursion, SolitonError> {
        self.check(v)?;
        self.check(e)?;
        let sp = &self.spectral;
        let vl = sp.ddx(v);
        let (a, _) = sp.antideriv(&v.dot(e));
        let mut printed = sp.ddx(&sp.ddx(e)).add(&e.times(&v.dot(v))).add(&vl.times(&a));
        let p = self.p;
        let mut m_mean = vec![vec![0.0; p]; p];
        let mut m_field = vec![vec![Vec::new(); p]; p];
        for i in 0..p {
            for j in 0..p {
                if i == j {
                    continue;
                }
                let wedge: Vec<f64> = (0..v.grid.n_pts)
                    .map(|t| vl.comps[i][t] * e.comps[j][t] - e.comps[i][t] * vl.comps[j][t])
                    .collect();
                m_field[i][j] = sp.antideriv(&wedge).0;
                let ve: Vec<f64> = (0..v.grid.n_pts)
                    .map(|t| v.comps[i][t] * e.comps[j][t] - e.comps[i][t] * v.comps[j][t])
                    .collect();
                m_mean[i][j] = mean(&ve);
            }
        }
        for j in 0..p {
            for i in 0..p {
                if i != j {
                    for t in 0..v.grid.n_pts {
                        printed.comps[j][t] -= v.comps[i][t] * m_field[i][j][t];
                    }
                }
            }
        }
        let ve_mean = mean(&v.dot(e));
        let mean_terms = v.scale(-ve_mean).sub(&contract_const(v, &m_mean));
        Ok(ExpandedRecursion { printed, mean_terms })
    }

    /// `table[order][comp]` = spectral derivatives of `v` up to `max_order`.
    fn jet_table(&self, v: &Field, max_order: u32) -> Vec<Vec<Vec<f64>>> {
        (0..=max_order)
            .map(|o| v.comps.iter().map(|c| self.spectral.deriv(c, o)).collect())
            .collect()
    }

    /// `e^(k)`: `v_l`, `R(v_l)`, `R²(v_l)` from the local-gauge hierarchy.
    pub fn hierarchy_term(&self, k: usize, v: &Field) -> Result<Field, SolitonError> {
        self.check(v)?;
        let lv = self
            .levels
            .get(k)
            .ok_or(SolitonError::UnsupportedLevel(k as i32))?;
        let order = lv.iter().map(|c| c.max_order).max().unwrap_or(1);
        let table = self.jet_table(v, order);
        Ok(Field {
            grid: v.grid,
            comps: lv.iter().map(|c| c.eval(&table, v.grid.n_pts)).collect(),
        })
    }

    /// `v_τ = e^(k) − R_const·e^(k−1)`; level 0 is `v_τ = v_l`.
    pub fn flow_rhs(&self, level: i32, r_const: f64, v: &Field) -> Result<Field, SolitonError> {
        self.check(v)?;
        if !(0..=MAX_LEVEL).contains(&level) {
            return Err(SolitonError::UnsupportedLevel(level));
        }
        let k = level as usize;
        let order = self.levels[k].iter().map(|c| c.max_order).max().unwrap_or(1);
        let table = self.jet_table(v, order.min(self.max_order));
        let n = v.grid.n_pts;
        let top: Vec<Vec<f64>> = self.levels[k].iter().map(|c| c.eval(&table, n)).collect();
        let mut out = Field { grid: v.grid, comps: top };
        if k > 0 && r_const != 0.0 {
            for (o, c) in out.comps.iter_mut().zip(&self.levels[k - 1]) {
                for (x, y) in o.iter_mut().zip(c.eval(&table, n)) {
                    *x -= r_const * y;
                }
            }
        }
        Ok(out)
    }

    /// Densities integrated over one period with the trapezoid rule.
    pub fn hamiltonians(&self, v: &Field) -> Result<HamiltonianRecord, SolitonError> {
        self.check(v)?;
        let h = v.grid.spacing();
        let vl = self.spectral.ddx(v);
        let v2 = self.spectral.ddx_n(v, 2);
        let sq = v.dot(v);
        let lsq = vl.dot(&vl);
        let l2sq = v2.dot(&v2);
        let vvl = v.dot(&vl);
        let integral = |f: &dyn Fn(usize) -> f64| (0..v.grid.n_pts).map(f).sum::<f64>() * h;
        let h0 = integral(&|t| 0.5 * sq[t]);
        let h1 = integral(&|t| -0.5 * lsq[t] + 0.125 * sq[t] * sq[t]);
        let core = |t: usize| 0.5 * l2sq[t] - 0.75 * sq[t] * lsq[t] + sq[t].powi(3) / 16.0;
        let h2_periodic = integral(&core);
        let h2_printed = integral(&|t| core(t) - 0.5 * vvl[t]);
        let h2_squared = integral(&|t| core(t) - 0.5 * vvl[t] * vvl[t]);
        let (j, m1) = self.j_inner(v, &vl);
        let (_, m2) = self.h_inner(v, &j);
        Ok(HamiltonianRecord {
            tau: 0.0,
            h0,
            h1,
            h2_printed,
            h2_periodic,
            h2_squared,
            mass_projection: m1.max(m2),
        })
    }

    /// `H^(k)` for k = 0, 1, 2 (the printed reading for k = 2).
    pub fn hamiltonian(&self, k: u32, v: &Field) -> Result<f64, SolitonError> {
        let r = self.hamiltonians(v)?;
        match k {
            0 => Ok(r.h0),
            1 => Ok(r.h1),
            2 => Ok(r.h2_printed),
            _ => Err(SolitonError::UnsupportedLevel(k as i32)),
        }
    }

    /// Variational derivative of `H^(k)` by central Gateaux differences
    /// along each grid basis vector, and the ladder relation `e = H(ϖ)`.
    pub fn variational_check(&self, k: u32, v: &Field) -> Result<VariationalReport, SolitonError> {
        self.check(v)?;
        if k > 1 {
            return Err(SolitonError::UnsupportedLevel(k as i32));
        }
        let eps = 1e-5;
        let dx = v.grid.spacing();
        let mut varpi = Field::zeros(v.grid, self.p);
        let mut probe = v.clone();
        for c in 0..self.p {
            for t in 0..v.grid.n_pts {
                let x0 = probe.comps[c][t];
                probe.comps[c][t] = x0 + eps;
                let hp = self.hamiltonian(k, &probe)?;
                probe.comps[c][t] = x0 - eps;
                let hm = self.hamiltonian(k, &probe)?;
                probe.comps[c][t] = x0;
                varpi.comps[c][t] = (hp - hm) / (2.0 * eps * dx);
            }
        }
        let exact = if k == 0 {
            v.clone()
        } else {
            let d1 = self.spectral.ddx(v);
            self.spectral.ddx(&d1).add(&v.times(&v.dot(v)).scale(0.5))
        };
        let varpi_residual = varpi.sub(&exact).max_abs();
        let hw = self.op_h(v, &varpi)?;
        let rhs = self.flow_rhs(k as i32, 0.0, v)?;
        let ladder_residual = hw.sub(&rhs).max_abs();
        let gauge = if k == 1 {
            let vl = self.spectral.ddx(v);
            let p = self.p;
            let mut m = vec![vec![0.0; p]; p];
            for (i, row) in m.iter_mut().enumerate() {
                for (j, x) in row.iter_mut().enumerate() {
                    *x = mean(&mul(&v.comps[i], &vl.comps[j])) - mean(&mul(&vl.comps[i], &v.comps[j]));
                }
            }
            contract_const(v, &m)
        } else {
            Field::zeros(v.grid, self.p)
        };
        Ok(VariationalReport {
            k,
            varpi,
            varpi_residual,
            ladder_residual,
            gauge_term: gauge.max_abs(),
            ladder_residual_gauge_fixed: hw.add(&gauge).sub(&rhs).max_abs(),
        })
    }

    /// RK4 stability cap: `min(C·Δl^q, 0.9·2√2 / ω_max)` with `q = 2k+1`
    /// and `ω_max` the fastest linear frequency of the level-k flow.
    pub fn stable_dt(&self, level: i32, r_const: f64, c: f64) -> Result<f64, SolitonError> {
        if !(0..=MAX_LEVEL).contains(&level) {
            return Err(SolitonError::UnsupportedLevel(level));
        }
        let q = 2 * level + 1;
        let g = self.grid();
        let km = g.k_max();
        let omega = km.powi(q) + if level > 0 { r_const.abs() * km.powi(q - 2) } else { 0.0 };
        Ok((c * g.spacing().powi(q)).min(0.9 * 2.0 * 2f64.sqrt() / omega))
    }

    pub fn start(&self, v: Field, level: i32, r_const: f64, record_every: usize) -> Result<FlowState, SolitonError> {
        self.check(&v)?;
        if !(0..=MAX_LEVEL).contains(&level) {
            return Err(SolitonError::UnsupportedLevel(level));
        }
        let mut st = FlowState {
            v,
            tau: 0.0,
            level,
            r_const,
            history: Vec::new(),
            record_every,
            steps: 0,
        };
        if record_every > 0 {
            let rec = self.hamiltonians(&st.v)?;
            st.history.push(rec);
        }
        Ok(st)
    }

    /// One classical RK4 step of `flow_rhs`.
    pub fn step(&self, state: &mut FlowState, dt: f64) -> Result<(), SolitonError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SolitonError::InvalidDt(dt));
        }
        let (lvl, rc) = (state.level, state.r_const);
        let v = &state.v;
        let k1 = self.flow_rhs(lvl, rc, v)?;
        let k2 = self.flow_rhs(lvl, rc, &v.axpy(0.5 * dt, &k1))?;
        let k3 = self.flow_rhs(lvl, rc, &v.axpy(0.5 * dt, &k2))?;
        let k4 = self.flow_rhs(lvl, rc, &v.axpy(dt, &k3))?;
        let incr = k1.add(&k2.scale(2.0)).add(&k3.scale(2.0)).add(&k4);
        let next = v.axpy(dt / 6.0, &incr);
        if !next.is_finite() || next.max_abs() > BLOWUP_THRESHOLD {
            return Err(SolitonError::Diverged {
                tau: state.tau + dt,
                step: state.steps + 1,
                last: Box::new(state.clone()),
            });
        }
        state.v = next;
        state.tau += dt;
        state.steps += 1;
        if state.record_every > 0 && state.steps.is_multiple_of(state.record_every) {
            let mut rec = self.hamiltonians(&state.v)?;
            rec.tau = state.tau;
            state.history.push(rec);
        }
        Ok(())
    }

    /// Advances to `tau + duration` with equal steps no larger than `dt_max`.
    pub fn integrate(&self, state: &mut FlowState, duration: f64, dt_max: f64) -> Result<usize, SolitonError> {
        if !(dt_max > 0.0 && dt_max.is_finite()) {
            return Err(SolitonError::InvalidDt(dt_max));
        }
        if !(duration >= 0.0 && duration.is_finite()) {
            return Err(SolitonError::InvalidDt(duration));
        }
        let n = (duration / dt_max).ceil() as usize;
        if n == 0 {
            return Ok(0);
        }
        let dt = duration / n as f64;
        for _ in 0..n {
            self.step(state, dt)?;
        }
        Ok(n)
    }
}
