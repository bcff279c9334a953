//! Integral curves of the canonical semispray and the Euler-Lagrange
//! residual along them.

use serde::{Deserialize, Serialize};

use super::space::{hessian_block, semispray_exprs};
use super::GeometryError;
use crate::dsl::{BundlePoint, Differentiator, LagrangianSpec, Tape, Var};
use crate::linalg::{checked_inverse, symbolic_inverse, DEGENERACY_THRESHOLD};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    pub t: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

fn check_regular(hess: &Tape, n: usize, p: &BundlePoint) -> Result<(), GeometryError> {
    let h = hess.eval(p)?;
    let m: Vec<Vec<f64>> = h.chunks(n).map(|r| r.to_vec()).collect();
    checked_inverse(&m).map_err(|d| GeometryError::DegenerateHessian {
        min_pivot: d.min_pivot,
        scale: d.scale,
    })?;
    Ok(())
}

/// RK4 integration of `ẋ = y`, `ẏ = −2G(x, y)` for `steps` steps of `dt`.
pub fn semispray_path(
    spec: &LagrangianSpec,
    x0: &[f64],
    y0: &[f64],
    dt: f64,
    steps: usize,
) -> Result<Vec<PathSample>, GeometryError> {
    let n = spec.n;
    if spec.m != n || x0.len() != n || y0.len() != n {
        return Err(GeometryError::Dimension(format!(
            "path needs m = n = {n} and initial data of that length"
        )));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(GeometryError::NonFinite("time step".into()));
    }
    let mut d = Differentiator::new();
    let blk = hessian_block(spec, &mut d);
    let (inv, _) = symbolic_inverse(&blk);
    let spray = Tape::compile(&semispray_exprs(spec, &inv, &mut d));
    let hess = Tape::compile(&blk.iter().flatten().cloned().collect::<Vec<_>>());

    let rhs = |x: &[f64], y: &[f64]| -> Result<(Vec<f64>, Vec<f64>), GeometryError> {
        let p = BundlePoint::new(x.to_vec(), y.to_vec());
        let g = spray.eval(&p)?;
        Ok((y.to_vec(), g.iter().map(|v| -2.0 * v).collect()))
    };
    let axpy = |a: &[f64], s: f64, b: &[f64]| -> Vec<f64> {
        a.iter().zip(b).map(|(u, v)| u + s * v).collect()
    };

    let mut out = Vec::with_capacity(steps + 1);
    let (mut x, mut y) = (x0.to_vec(), y0.to_vec());
    check_regular(&hess, n, &BundlePoint::new(x.clone(), y.clone()))?;
    out.push(PathSample { t: 0.0, x: x.clone(), y: y.clone() });
    for s in 1..=steps {
        let (k1x, k1y) = rhs(&x, &y)?;
        let (k2x, k2y) = rhs(&axpy(&x, 0.5 * dt, &k1x), &axpy(&y, 0.5 * dt, &k1y))?;
        let (k3x, k3y) = rhs(&axpy(&x, 0.5 * dt, &k2x), &axpy(&y, 0.5 * dt, &k2y))?;
        let (k4x, k4y) = rhs(&axpy(&x, dt, &k3x), &axpy(&y, dt, &k3y))?;
        for i in 0..n {
            x[i] += dt / 6.0 * (k1x[i] + 2.0 * k2x[i] + 2.0 * k3x[i] + k4x[i]);
            y[i] += dt / 6.0 * (k1y[i] + 2.0 * k2y[i] + 2.0 * k3y[i] + k4y[i]);
        }
        let p = BundlePoint::new(x.clone(), y.clone());
        if !p.is_finite() {
            return Err(GeometryError::NonFinite(format!("path at step {s}")));
        }
        check_regular(&hess, n, &p)?;
        out.push(PathSample { t: s as f64 * dt, x: x.clone(), y: y.clone() });
    }
    Ok(out)
}

/// `max |d/dt ∂L/∂y^i − ∂L/∂x^i|` over the interior samples of an equally
/// spaced path, with the time derivative taken by central differences.
pub fn euler_lagrange_residual(spec: &LagrangianSpec, path: &[PathSample]) -> Result<f64, GeometryError> {
    let n = spec.n;
    if path.len() < 3 {
        return Err(GeometryError::Dimension("need at least 3 path samples".into()));
    }
    let mut d = Differentiator::new();
    let mut roots = Vec::with_capacity(2 * n);
    for i in 0..n {
        roots.push(d.diff(&spec.body, Var::Fiber(i)));
    }
    for i in 0..n {
        roots.push(d.diff(&spec.body, Var::Base(i)));
    }
    let tape = Tape::compile(&roots);
    let vals: Vec<Vec<f64>> = path
        .iter()
        .map(|s| tape.eval(&BundlePoint::new(s.x.clone(), s.y.clone())))
        .collect::<Result<_, _>>()?;
    let mut worst: f64 = 0.0;
    for k in 1..path.len() - 1 {
        let h = path[k + 1].t - path[k - 1].t;
        if h.abs() < DEGENERACY_THRESHOLD {
            return Err(GeometryError::Dimension("path samples share a time".into()));
        }
        for i in 0..n {
            let dp = (vals[k + 1][i] - vals[k - 1][i]) / h;
            worst = worst.max((dp - vals[k][n + i]).abs());
        }
    }
    Ok(worst)
}
