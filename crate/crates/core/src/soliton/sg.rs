//! The −1 flow: frame reconstruction along `l` and `v_τ = −R·e_⊥`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{Engine, Field, SolitonError};

/// Drift of `e_∥² + |e_⊥|²` from 1 (before renormalization) that aborts
/// the reconstruction.
pub const CONSTRAINT_LIMIT: f64 = 1e-4;

/// Tolerance on the unit constraint of the supplied initial frame.
pub const INITIAL_FRAME_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameFlowState {
    pub e_par: Vec<f64>,
    /// `e_perp[c][point]`.
    pub e_perp: Vec<Vec<f64>>,
    /// Largest `|e_∥² + |e_⊥|² − 1|` seen before renormalizing.
    pub constraint_residual: f64,
    /// `max |frame(Λ) − frame(0)|` of the last reconstruction.
    pub closure_mismatch: f64,
}

impl FrameFlowState {
    /// Frame equal to `(e_par0, e_perp0)` at every point.
    pub fn constant(n_pts: usize, e_par0: f64, e_perp0: &[f64]) -> Result<Self, SolitonError> {
        let norm = e_par0 * e_par0 + e_perp0.iter().map(|x| x * x).sum::<f64>();
        if !((norm - 1.0).abs() <= INITIAL_FRAME_TOL) {
            return Err(SolitonError::Constraint((norm - 1.0).abs()));
        }
        Ok(FrameFlowState {
            e_par: vec![e_par0; n_pts],
            e_perp: e_perp0.iter().map(|&x| vec![x; n_pts]).collect(),
            constraint_residual: 0.0,
            closure_mismatch: 0.0,
        })
    }

    /// `e_∥(0) = cos θ0`, `e_⊥(0) = (sin θ0, 0, …)`.
    pub fn from_angle(n_pts: usize, p: usize, theta0: f64) -> Self {
        let mut perp = vec![0.0; p];
        perp[0] = theta0.sin();
        FrameFlowState::constant(n_pts, theta0.cos(), &perp).expect("unit by construction")
    }

    pub fn at(&self, t: usize) -> (f64, Vec<f64>) {
        (self.e_par[t], self.e_perp.iter().map(|c| c[t]).collect())
    }

    pub fn max_constraint_violation(&self) -> f64 {
        (0..self.e_par.len())
            .map(|t| {
                let (a, b) = self.at(t);
                (a * a + b.iter().map(|x| x * x).sum::<f64>() - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Result of one −1-flow step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgStep {
    pub v: Field,
    pub frame: FrameFlowState,
    /// Worst constraint drift over all reconstructions in the step.
    pub constraint_residual: f64,
    /// Worst periodic-closure mismatch over all reconstructions.
    pub closure_mismatch: f64,
}

fn generator(v: &[f64]) -> DMatrix<f64> {
    let p = v.len();
    let mut a = DMatrix::zeros(p + 1, p + 1);
    for c in 0..p {
        a[(0, c + 1)] = -v[c];
        a[(c + 1, 0)] = v[c];
    }
    a
}

impl Engine {
    /// Integrates `e_⊥,l = e_∥ v`, `e_∥,l = −v·e_⊥` from `l = 0` with a
    /// fourth-order Magnus step per grid cell, evaluating `v` at the Gauss
    /// nodes by trigonometric interpolation.
    pub fn reconstruct_frame(&self, v: &Field, e_par0: f64, e_perp0: &[f64]) -> Result<FrameFlowState, SolitonError> {
        let grid = v.grid;
        let p = v.p();
        if e_perp0.len() != p {
            return Err(SolitonError::Shape(format!(
                "initial frame has {} normal components, field has {p}",
                e_perp0.len()
            )));
        }
        let n = grid.n_pts;
        let h = grid.spacing();
        let s3 = 3f64.sqrt() / 6.0;
        let sp = self.spectral();
        let va: Vec<Vec<f64>> = v.comps.iter().map(|c| sp.shift(c, h * (0.5 - s3))).collect();
        let vb: Vec<Vec<f64>> = v.comps.iter().map(|c| sp.shift(c, h * (0.5 + s3))).collect();

        let mut s = nalgebra::DVector::from_iterator(
            p + 1,
            std::iter::once(e_par0).chain(e_perp0.iter().copied()),
        );
        let s0 = s.clone();
        let mut e_par = vec![0.0; n];
        let mut e_perp = vec![vec![0.0; n]; p];
        let mut worst: f64 = 0.0;
        for t in 0..n {
            e_par[t] = s[0];
            for c in 0..p {
                e_perp[c][t] = s[c + 1];
            }
            let a1 = generator(&va.iter().map(|c| c[t]).collect::<Vec<_>>());
            let a2 = generator(&vb.iter().map(|c| c[t]).collect::<Vec<_>>());
            let comm = &a2 * &a1 - &a1 * &a2;
            let omega = (&a1 + &a2) * (0.5 * h) + comm * (3f64.sqrt() / 12.0 * h * h);
            s = omega.exp() * s;
            let norm2 = s.norm_squared();
            worst = worst.max((norm2 - 1.0).abs());
            s /= norm2.sqrt();
        }
        if worst > CONSTRAINT_LIMIT {
            return Err(SolitonError::Constraint(worst));
        }
        Ok(FrameFlowState {
            e_par,
            e_perp,
            constraint_residual: worst,
            closure_mismatch: (&s - &s0).amax(),
        })
    }

    /// One RK4 step of `v_τ = −R·e_⊥[v]`, with the frame rebuilt at every
    /// stage from the value of `frame` at `l = 0`, which is held fixed.
    pub fn sg_flow_step(&self, v: &Field, frame: &FrameFlowState, r_const: f64, dt: f64) -> Result<SgStep, SolitonError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SolitonError::InvalidDt(dt));
        }
        let (e0, perp0) = frame.at(0);
        let norm = e0 * e0 + perp0.iter().map(|x| x * x).sum::<f64>();
        if (norm - 1.0).abs() > INITIAL_FRAME_TOL {
            return Err(SolitonError::Constraint((norm - 1.0).abs()));
        }
        let mut drift: f64 = 0.0;
        let mut closure: f64 = 0.0;
        let mut rhs = |u: &Field| -> Result<Field, SolitonError> {
            let fr = self.reconstruct_frame(u, e0, &perp0)?;
            drift = drift.max(fr.constraint_residual);
            closure = closure.max(fr.closure_mismatch);
            Ok(Field {
                grid: u.grid,
                comps: fr.e_perp,
            }
            .scale(-r_const))
        };
        let k1 = rhs(v)?;
        let k2 = rhs(&v.axpy(0.5 * dt, &k1))?;
        let k3 = rhs(&v.axpy(0.5 * dt, &k2))?;
        let k4 = rhs(&v.axpy(dt, &k3))?;
        let next = v.axpy(dt / 6.0, &k1.add(&k2.scale(2.0)).add(&k3.scale(2.0)).add(&k4));
        let fr = self.reconstruct_frame(&next, e0, &perp0)?;
        drift = drift.max(fr.constraint_residual);
        closure = closure.max(fr.closure_mismatch);
        Ok(SgStep {
            v: next,
            frame: fr,
            constraint_residual: drift,
            closure_mismatch: closure,
        })
    }
}
