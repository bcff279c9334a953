//! The four subcommands. Each produces its files in memory; writing and
//! verification happen in one place afterwards.

use std::f64::consts::PI;

use nonhol::dsl::{evaluate, parse, parse_expr, parse_field_expr, BundlePoint, Expr};
use nonhol::frames::{
    build_constant_dmetric, build_em_space, build_flat_lift, check_constant_curvature,
    ConstantCurvatureReport, FrameError, DEFAULT_CONSTANCY_TOL,
};
use nonhol::geometry::{Geometry, GeometryError, Space};
use nonhol::soliton::{
    Engine, Field, FlowState, FrameFlowState, Grid1D, HamiltonianRecord, SolitonError,
    DEFAULT_DT_FACTOR,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{
    ConfigError, CurvatureSource, DtConfig, Entry, Format, RunConfig, Side,
    SpaceConfig, SpaceKindConfig,
};
use crate::output::{csv, Artifact, StageStatus};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_GEOMETRY: i32 = 3;
pub const EXIT_CHECK: i32 = 4;
pub const EXIT_DIVERGED: i32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Geom,
    CheckConstant,
    Flow,
    IdentityCheck,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Geom => "geom",
            Command::CheckConstant => "check-constant",
            Command::Flow => "flow",
            Command::IdentityCheck => "identity-check",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub tol: Option<f64>,
}

/// Files and stage statuses of a run, with the exit code it maps to.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Outcome {
    pub artifacts: Vec<Artifact>,
    pub stages: Vec<StageStatus>,
    pub code: i32,
    pub message: Option<String>,
}

impl Outcome {
    fn stage(&mut self, stage: &str, status: &str, message: Option<String>) {
        self.stages.push(StageStatus {
            stage: stage.into(),
            status: status.into(),
            message,
        });
    }

    fn ok(&mut self, stage: &str) {
        self.stage(stage, "ok", None);
    }

    fn fail(mut self, stage: &str, code: i32, message: String) -> Outcome {
        self.stage(stage, "failed", Some(message.clone()));
        self.code = code;
        self.message = Some(message);
        self
    }
}

/// Error with the exit code it maps to.
struct Failure(i32, String);

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure(EXIT_CONFIG, e.to_string())
    }
}

fn config_err(path: impl Into<String>, message: impl std::fmt::Display) -> Failure {
    ConfigError {
        path: path.into(),
        message: message.to_string(),
    }
    .into()
}

pub fn execute(cmd: Command, cfg: &RunConfig, ov: Overrides) -> Outcome {
    let mut out = Outcome::default();
    let res = match cmd {
        Command::Geom => geom(cfg, ov, &mut out),
        Command::CheckConstant => check_constant(cfg, ov, &mut out),
        Command::Flow => flow(cfg, ov, &mut out),
        Command::IdentityCheck => identity_check(cfg, ov, &mut out),
    };
    match res {
        Ok(()) => out,
        Err(Failure(code, msg)) => out.fail(cmd.name(), code, msg),
    }
}

fn entry_expr(e: &Entry, n: usize, m: usize, path: &str) -> Result<Expr, Failure> {
    match e {
        Entry::Num(x) => Ok(Expr::constant(*x)),
        Entry::Expr(s) => parse_expr(s, n, m).map_err(|err| config_err(path, err)),
    }
}

fn entry_matrix(rows: &[Vec<Entry>], n: usize, m: usize, path: &str) -> Result<Vec<Vec<Expr>>, Failure> {
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            r.iter()
                .enumerate()
                .map(|(j, e)| entry_expr(e, n, m, &format!("{path}[{i}][{j}]")))
                .collect()
        })
        .collect()
}

fn build_failure(e: FrameError) -> Failure {
    match e {
        FrameError::Geometry(GeometryError::Dimension(msg)) | FrameError::Invalid(msg) => config_err("space", msg),
        other => Failure(EXIT_GEOMETRY, other.to_string()),
    }
}

pub fn build_space(s: &SpaceConfig) -> Result<Space, ConfigError> {
    build_space_inner(s).map_err(|Failure(_, message)| ConfigError {
        path: "space".into(),
        message,
    })
}

fn build_space_inner(s: &SpaceConfig) -> Result<Space, Failure> {
    let n = s.n;
    let m = s.fiber_dim();
    match s.kind {
        SpaceKindConfig::LagrangianExpr => {
            let src = s.lagrangian.as_deref().unwrap_or_default();
            let spec = parse(src, n, m).map_err(|e| config_err("space.lagrangian", e))?;
            Space::from_lagrangian(&spec).map_err(|e| build_failure(e.into()))
        }
        SpaceKindConfig::FlatLift => {
            let g = entry_matrix(s.g_base.as_deref().unwrap_or_default(), n, m, "space.g_base")?;
            build_flat_lift(&g).map_err(build_failure)
        }
        SpaceKindConfig::Em => {
            let a = entry_matrix(s.a.as_deref().unwrap_or_default(), n, m, "space.a")?;
            let pot = s
                .potential
                .as_deref()
                .unwrap_or_default()
                .iter()
                .enumerate()
                .map(|(i, e)| entry_expr(e, n, m, &format!("space.potential[{i}]")))
                .collect::<Result<Vec<_>, _>>()?;
            let em = build_em_space(&a, &pot, s.m0.unwrap_or(1.0), s.e0.unwrap_or(1.0)).map_err(build_failure)?;
            Ok(em.space)
        }
        SpaceKindConfig::ConstantDmetric => {
            let nc = entry_matrix(s.n_conn.as_deref().unwrap_or_default(), n, m, "space.N")?;
            let g = s.g.clone().unwrap_or_default();
            let h = s.h.clone().unwrap_or_default();
            build_constant_dmetric(&g, &h, nc).map_err(build_failure)
        }
    }
}

/// Configured sample points, or uniform draws from the sampling box.
pub fn sample_points(cfg: &RunConfig, seed: Option<u64>) -> Result<Vec<BundlePoint>, ConfigError> {
    let space = cfg.require_space()?;
    let geo = cfg.require_geometry()?;
    if let Some(pts) = &geo.points {
        return Ok(pts.iter().map(|p| BundlePoint::new(p.x.clone(), p.y.clone())).collect());
    }
    let s = geo.sampling.as_ref().expect("validated: points or sampling");
    let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(s.seed));
    let (n, m) = (space.n, space.fiber_dim());
    Ok((0..s.count)
        .map(|_| {
            let x = (0..n).map(|_| rng.random_range(s.x[0]..s.x[1])).collect();
            let y = (0..m).map(|_| rng.random_range(s.y[0]..s.y[1])).collect();
            BundlePoint::new(x, y)
        })
        .collect())
}

fn geom(cfg: &RunConfig, ov: Overrides, out: &mut Outcome) -> Result<(), Failure> {
    let space = build_space_inner(cfg.require_space()?)?;
    let points = sample_points(cfg, ov.seed)?;
    out.ok("space");
    let geo = Geometry::new(&space);
    for (i, p) in points.iter().enumerate() {
        let rep = geo
            .evaluate(p)
            .map_err(|e| Failure(EXIT_GEOMETRY, format!("sample {i} at x = {:?}, y = {:?}: {e}", p.x, p.y)))?;
        out.artifacts.push(Artifact::json(format!("geometry_{i:03}.json"), &rep));
    }
    out.ok("geometry");
    Ok(())
}

fn run_constancy(cfg: &RunConfig, ov: Overrides, out: &mut Outcome) -> Result<ConstantCurvatureReport, Failure> {
    let space = build_space_inner(cfg.require_space()?)?;
    let geo = cfg.require_geometry()?;
    if geo.sample_count() < 2 {
        return Err(config_err(
            geo.count_path(),
            format!("the constancy check needs at least 2 samples, got {}", geo.sample_count()),
        ));
    }
    let points = sample_points(cfg, ov.seed)?;
    out.ok("space");
    let tol = ov.tol.or(geo.tol).unwrap_or(DEFAULT_CONSTANCY_TOL);
    let rep = check_constant_curvature(&space, &points, tol).map_err(|e| match e {
        FrameError::InsufficientSamples(k) => config_err(geo.count_path(), format!("needs at least 2 samples, got {k}")),
        other => Failure(EXIT_GEOMETRY, other.to_string()),
    })?;
    out.artifacts.push(Artifact::json("constant_curvature.json", &rep));
    Ok(rep)
}

fn not_constant(rep: &ConstantCurvatureReport) -> String {
    let worst = rep
        .classes
        .iter()
        .max_by(|a, b| a.max_spread.total_cmp(&b.max_spread))
        .map(|c| format!("{} spread {:e}", c.class, c.max_spread))
        .unwrap_or_default();
    format!("curvature is not constant within tol {:e}: {worst}", rep.tol)
}

fn check_constant(cfg: &RunConfig, ov: Overrides, out: &mut Outcome) -> Result<(), Failure> {
    let rep = run_constancy(cfg, ov, out)?;
    if !rep.constant {
        return Err(Failure(EXIT_CHECK, not_constant(&rep)));
    }
    out.ok("check-constant");
    Ok(())
}

#[derive(Serialize)]
struct GridMeta {
    n_pts: usize,
    length: f64,
    spacing: f64,
}

#[derive(Serialize)]
struct FlowMeta<'a> {
    library_version: &'a str,
    grid: GridMeta,
    p: usize,
    side: Side,
    level: i32,
    r_const: f64,
    curvature_source: CurvatureSource,
    integrator: &'static str,
    dt_rule: &'static str,
    dt_factor: Option<f64>,
    dt: f64,
    steps: usize,
    steps_done: usize,
    t_end: f64,
    snapshot_every_steps: usize,
    initial: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    frame0: Option<(f64, Vec<f64>)>,
    status: &'static str,
}

#[derive(Serialize)]
struct DiagRow {
    #[serde(flatten)]
    rec: HamiltonianRecord,
    #[serde(skip_serializing_if = "Option::is_none")]
    constraint_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    closure_mismatch: Option<f64>,
}

#[derive(Serialize)]
struct FlowJson<'a> {
    final_tau: f64,
    final_field: &'a Field,
    diagnostics: &'a [DiagRow],
}

struct FlowRecorder {
    csv: bool,
    json: bool,
    snapshots: usize,
    diag: Vec<DiagRow>,
}

impl FlowRecorder {
    fn snapshot(&mut self, out: &mut Outcome, v: &Field) {
        if self.csv {
            let mut header = vec!["l".to_string()];
            header.extend((1..=v.p()).map(|c| format!("v_{c}")));
            let pts = v.grid.points();
            let rows = (0..v.grid.n_pts).map(|t| {
                let mut r = vec![pts[t]];
                r.extend(v.comps.iter().map(|c| c[t]));
                r
            });
            out.artifacts
                .push(Artifact::text(format!("snapshot_{:05}.csv", self.snapshots), csv(&header, rows)));
        }
        self.snapshots += 1;
    }

    fn finish(&self, out: &mut Outcome, level: i32, last: &Field, tau: f64) {
        if self.csv {
            let mut header: Vec<String> = ["tau", "H0", "H1", "H2_printed", "H2_periodic", "mass_projection", "H2_squared"]
                .iter()
                .map(|s| s.to_string())
                .collect();
            if level == -1 {
                header.push("constraint_residual".into());
                header.push("closure_mismatch".into());
            }
            let rows = self.diag.iter().map(|d| {
                let r = &d.rec;
                let mut row = vec![r.tau, r.h0, r.h1, r.h2_printed, r.h2_periodic, r.mass_projection, r.h2_squared];
                row.extend(d.constraint_residual);
                row.extend(d.closure_mismatch);
                row
            });
            out.artifacts.push(Artifact::text("diagnostics.csv", csv(&header, rows)));
        }
        if self.json {
            out.artifacts.push(Artifact::json(
                "flow.json",
                &FlowJson {
                    final_tau: tau,
                    final_field: last,
                    diagnostics: &self.diag,
                },
            ));
        }
    }
}

fn soliton_failure(e: SolitonError) -> Failure {
    match e {
        SolitonError::Grid(m) => config_err("flow.n_pts", m),
        SolitonError::UnsupportedLevel(l) => config_err("flow.level", format!("unsupported level {l}")),
        SolitonError::InvalidDt(dt) => config_err("flow.dt", format!("invalid time step {dt}")),
        other => Failure(EXIT_DIVERGED, other.to_string()),
    }
}

/// `(steps, dt, snapshot_every)` with `dt ≤ dt_max` and `steps·dt = t_end`.
/// When `t_end` is a whole number of snapshot intervals the step is chosen
/// so that every snapshot lands exactly on a multiple of the interval.
fn step_plan(t_end: f64, dt_max: f64, interval: Option<f64>) -> (usize, f64, usize) {
    if let Some(iv) = interval {
        let k = (t_end / iv).round();
        if k >= 1.0 && (k * iv - t_end).abs() <= 1e-9 * t_end {
            let per = (iv / dt_max).ceil().max(1.0) as usize;
            let steps = k as usize * per;
            return (steps, t_end / steps as f64, per);
        }
    }
    let steps = (t_end / dt_max).ceil().max(1.0) as usize;
    let dt = t_end / steps as f64;
    let every = interval.map_or(steps, |s| ((s / dt).round() as usize).clamp(1, steps));
    (steps, dt, every)
}

fn flow(cfg: &RunConfig, ov: Overrides, out: &mut Outcome) -> Result<(), Failure> {
    let fc = cfg.require_flow()?;
    let p = cfg.flow_components()?;
    let r_const = match fc.curvature.source {
        CurvatureSource::Manual => fc.curvature.value.expect("validated"),
        CurvatureSource::FromGeometry => {
            if cfg.space.is_none() || cfg.geometry.is_none() {
                return Err(config_err(
                    "flow.curvature.source",
                    "from_geometry needs space and geometry sections",
                ));
            }
            let rep = run_constancy(cfg, ov, out)?;
            if !rep.constant {
                return Err(Failure(EXIT_CHECK, not_constant(&rep)));
            }
            out.ok("check-constant");
            match fc.side {
                Side::H => rep.r_fwd,
                Side::V => rep.s_bwd,
            }
            .expect("present when constant")
        }
    };
    let grid = Grid1D::new(fc.n_pts, fc.length).map_err(soliton_failure)?;
    let pts = grid.points();
    let mut comps = Vec::with_capacity(p);
    for (c, src) in fc.initial.iter().enumerate() {
        let path = format!("flow.initial[{c}]");
        let e = parse_field_expr(src).map_err(|err| config_err(&path, err))?;
        let col = pts
            .iter()
            .map(|&l| evaluate(&e, &BundlePoint::new(vec![l], vec![])))
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|err| config_err(&path, err))?;
        if col.iter().any(|x| !x.is_finite()) {
            return Err(config_err(&path, "initial field is not finite on the grid"));
        }
        comps.push(col);
    }
    let v0 = Field::new(grid, comps).map_err(soliton_failure)?;
    let engine = Engine::new(grid, p).map_err(soliton_failure)?;

    let (dt_max, dt_rule, dt_factor) = match fc.dt {
        DtConfig::Fixed(dt) => (dt, "fixed", None),
        DtConfig::Auto(_) if fc.level >= 0 => (
            engine.stable_dt(fc.level, r_const, DEFAULT_DT_FACTOR).map_err(soliton_failure)?,
            "auto",
            Some(DEFAULT_DT_FACTOR),
        ),
        DtConfig::Auto(_) => (0.05 / r_const.abs().max(1.0), "auto", None),
    };
    let (steps, dt, every) = step_plan(fc.t_end, dt_max, fc.snapshot_interval);

    let frame0 = if fc.level == -1 {
        let fr = fc.frame.clone().unwrap_or_default();
        let (ep, perp) = match (fr.theta0, fr.e_par, fr.e_perp) {
            (_, Some(a), Some(b)) => (a, b),
            (th, _, _) => {
                let th = th.unwrap_or(0.0);
                let mut b = vec![0.0; p];
                b[0] = th.sin();
                (th.cos(), b)
            }
        };
        if perp.len() != p {
            return Err(config_err("flow.frame.e_perp", format!("must have {p} entries")));
        }
        Some((ep, perp))
    } else {
        None
    };

    let mut rec = FlowRecorder {
        csv: cfg.output.formats.contains(&Format::Csv),
        json: cfg.output.formats.contains(&Format::Json),
        snapshots: 0,
        diag: Vec::new(),
    };
    let meta = |steps_done: usize, status: &'static str| FlowMeta {
        library_version: nonhol::VERSION,
        grid: GridMeta {
            n_pts: grid.n_pts,
            length: grid.length,
            spacing: grid.spacing(),
        },
        p,
        side: fc.side,
        level: fc.level,
        r_const,
        curvature_source: fc.curvature.source,
        integrator: if fc.level == -1 {
            "rk4 in tau, 4th-order Magnus frame reconstruction in l"
        } else {
            "rk4"
        },
        dt_rule,
        dt_factor,
        dt,
        steps,
        steps_done,
        t_end: fc.t_end,
        snapshot_every_steps: every,
        initial: &fc.initial,
        frame0: frame0.clone(),
        status,
    };
    let record = |engine: &Engine, v: &Field, tau: f64| -> Result<HamiltonianRecord, Failure> {
        let mut r = engine.hamiltonians(v).map_err(soliton_failure)?;
        r.tau = tau;
        Ok(r)
    };

    rec.snapshot(out, &v0);
    if let Some((ep, perp)) = &frame0 {
        let mut frame = FrameFlowState::constant(grid.n_pts, *ep, perp)
            .map_err(|e| config_err("flow.frame", e))?;
        let fr = engine.reconstruct_frame(&v0, *ep, perp).map_err(soliton_failure)?;
        rec.diag.push(DiagRow {
            rec: record(&engine, &v0, 0.0)?,
            constraint_residual: Some(fr.constraint_residual),
            closure_mismatch: Some(fr.closure_mismatch),
        });
        let mut v = v0;
        let mut drift: f64 = 0.0;
        for s in 1..=steps {
            let tau = s as f64 * dt;
            let res = engine.sg_flow_step(&v, &frame, r_const, dt).and_then(|st| {
                if !st.v.is_finite() || st.v.max_abs() > nonhol::soliton::BLOWUP_THRESHOLD {
                    Err(SolitonError::Diverged {
                        tau,
                        step: s,
                        last: Box::new(FlowState {
                            v: v.clone(),
                            tau: tau - dt,
                            level: -1,
                            r_const,
                            history: Vec::new(),
                            record_every: 0,
                            steps: s - 1,
                        }),
                    })
                } else {
                    Ok(st)
                }
            });
            let st = match res {
                Ok(st) => st,
                Err(e) => {
                    rec.snapshot(out, &v);
                    rec.finish(out, -1, &v, tau - dt);
                    out.artifacts.push(Artifact::json("run.json", &meta(s - 1, "diverged")));
                    return Err(Failure(EXIT_DIVERGED, format!("step {s} (tau = {tau}): {e}")));
                }
            };
            drift = drift.max(st.constraint_residual);
            v = st.v;
            frame = st.frame;
            if s % every == 0 || s == steps {
                rec.diag.push(DiagRow {
                    rec: record(&engine, &v, tau)?,
                    constraint_residual: Some(drift),
                    closure_mismatch: Some(frame.closure_mismatch),
                });
                rec.snapshot(out, &v);
                drift = 0.0;
            }
        }
        rec.finish(out, -1, &v, fc.t_end);
        out.artifacts.push(Artifact::json("run.json", &meta(steps, "ok")));
        out.ok("flow");
        return Ok(());
    }

    rec.diag.push(DiagRow {
        rec: record(&engine, &v0, 0.0)?,
        constraint_residual: None,
        closure_mismatch: None,
    });
    let mut state = engine.start(v0, fc.level, r_const, 0).map_err(soliton_failure)?;
    for s in 1..=steps {
        if let Err(e) = engine.step(&mut state, dt) {
            let msg = e.to_string();
            let last = match e {
                SolitonError::Diverged { last, .. } => *last,
                other => return Err(soliton_failure(other)),
            };
            rec.snapshot(out, &last.v);
            rec.finish(out, fc.level, &last.v, last.tau);
            out.artifacts.push(Artifact::json("run.json", &meta(last.steps, "diverged")));
            return Err(Failure(
                EXIT_DIVERGED,
                format!("{msg}; last finite state at tau = {} flushed", last.tau),
            ));
        }
        // exact τ from the step count rather than accumulated sums
        state.tau = s as f64 * dt;
        if s % every == 0 || s == steps {
            rec.diag.push(DiagRow {
                rec: record(&engine, &state.v, state.tau)?,
                constraint_residual: None,
                closure_mismatch: None,
            });
            rec.snapshot(out, &state.v);
        }
    }
    rec.finish(out, fc.level, &state.v, state.tau);
    out.artifacts.push(Artifact::json("run.json", &meta(steps, "ok")));
    out.ok("flow");
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentityResult {
    pub name: &'static str,
    pub residual: f64,
    pub tol: f64,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
struct IdentityReport {
    n_pts: usize,
    length: f64,
    p: usize,
    samples: usize,
    modes: usize,
    amplitude: f64,
    seed: u64,
    identities: Vec<IdentityResult>,
    pass: bool,
}

/// Random trigonometric polynomial with modes `1..=modes`, amplitudes
/// falling like `1/k`, and zero mean.
fn band_limited(rng: &mut ChaCha8Rng, grid: Grid1D, p: usize, modes: usize, amp: f64) -> Field {
    let k0 = 2.0 * PI / grid.length;
    let coeffs: Vec<Vec<(f64, f64)>> = (0..p)
        .map(|_| {
            (1..=modes)
                .map(|k| {
                    let s = amp / k as f64;
                    (rng.random_range(-s..s), rng.random_range(-s..s))
                })
                .collect()
        })
        .collect();
    Field::from_fn(grid, p, |c, l| {
        coeffs[c]
            .iter()
            .enumerate()
            .map(|(k, (a, b))| {
                let w = k0 * (k + 1) as f64;
                a * (w * l).cos() + b * (w * l).sin()
            })
            .sum()
    })
}

/// `v⌋⟨v∧w⟩`, component `c` = `Σ_b v_b ⟨v_b w_c − w_b v_c⟩`.
fn wedge_mean_term(v: &Field, w: &Field) -> Field {
    let p = v.p();
    let n = v.grid.n_pts as f64;
    let mut m = vec![vec![0.0; p]; p];
    for b in 0..p {
        for c in 0..p {
            m[b][c] = (0..v.grid.n_pts)
                .map(|t| v.comps[b][t] * w.comps[c][t] - w.comps[b][t] * v.comps[c][t])
                .sum::<f64>()
                / n;
        }
    }
    let mut out = Field::zeros(v.grid, p);
    for c in 0..p {
        for t in 0..v.grid.n_pts {
            out.comps[c][t] = (0..p).map(|b| v.comps[b][t] * m[b][c]).sum();
        }
    }
    out
}

fn identity_check(cfg: &RunConfig, ov: Overrides, out: &mut Outcome) -> Result<(), Failure> {
    let fc = cfg.require_flow()?;
    let p = cfg.flow_p()?;
    let ic = cfg.identities.clone().unwrap_or_default();
    let seed = ov.seed.unwrap_or(ic.seed);
    let mut tol = ic.tol;
    if let Some(t) = ov.tol {
        tol.recursion = t;
        tol.skew = t;
        tol.composition = t;
        tol.scaling = t;
        tol.ladder = t;
    }
    let grid = Grid1D::new(fc.n_pts, fc.length).map_err(soliton_failure)?;
    let e = Engine::new(grid, p).map_err(soliton_failure)?;
    let lambda = 2.0;
    let es = Engine::new(Grid1D::new(fc.n_pts, lambda * fc.length).map_err(soliton_failure)?, p)
        .map_err(soliton_failure)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sp = e.spectral();
    let fail = |err: SolitonError| Failure(EXIT_CHECK, err.to_string());

    let (mut recursion, mut skew_j, mut skew_h, mut composition, mut scaling, mut ladder): (f64, f64, f64, f64, f64, f64) =
        (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    let mut gauge: f64 = 0.0;
    for i in 0..ic.samples {
        let v = band_limited(&mut rng, grid, p, ic.modes, ic.amplitude);
        let a = band_limited(&mut rng, grid, p, ic.modes, ic.amplitude);
        let b = band_limited(&mut rng, grid, p, ic.modes, ic.amplitude);

        // R(v_l) by composition, with the zero-mean gauge terms restored
        let vl = sp.ddx(&v);
        let v3 = sp.ddx_n(&v, 3);
        let comp = e.recursion(&v, &vl).map_err(fail)?;
        let mu = v.dot(&v).iter().sum::<f64>() / grid.n_pts as f64;
        let local = comp.axpy(0.5 * mu, &vl).add(&wedge_mean_term(&v, &vl));
        let printed = v3.add(&vl.times(&v.dot(&v)).scale(1.5));
        recursion = recursion.max(local.sub(&printed).max_abs() / v3.max_abs());

        let (ja, jb) = (e.op_j(&v, &a).map_err(fail)?, e.op_j(&v, &b).map_err(fail)?);
        let (ha, hb) = (e.op_h(&v, &a).map_err(fail)?, e.op_h(&v, &b).map_err(fail)?);
        skew_j = skew_j.max((ja.pairing(&b) + a.pairing(&jb)).abs());
        skew_h = skew_h.max((ha.pairing(&b) + a.pairing(&hb)).abs());

        let ra = e.recursion(&v, &a).map_err(fail)?;
        let ex = e.recursion_expanded(&v, &a).map_err(fail)?;
        composition = composition.max(ra.sub(&ex.printed.add(&ex.mean_terms)).max_abs());

        let vs = Field {
            grid: es.grid(),
            comps: v.scale(1.0 / lambda).comps,
        };
        let want = e.flow_rhs(1, 0.0, &v).map_err(fail)?.scale(lambda.powi(-4));
        let got = es.flow_rhs(1, 0.0, &vs).map_err(fail)?;
        let res = got
            .comps
            .iter()
            .flatten()
            .zip(want.comps.iter().flatten())
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        scaling = scaling.max(res);

        if i < 3 {
            let vr = e.variational_check(1, &v).map_err(fail)?;
            ladder = ladder.max(vr.ladder_residual_gauge_fixed);
            gauge = gauge.max(vr.gauge_term);
        }
    }
    let trivial = (p == 1).then(|| "wedge terms vanish identically for p = 1".to_string());
    let item = |name, residual: f64, tol: f64, note: Option<String>| IdentityResult {
        name,
        residual,
        tol,
        pass: residual < tol,
        note,
    };
    let identities = vec![
        item("recursion", recursion, tol.recursion, trivial.clone()),
        item("skew_adjoint_j", skew_j, tol.skew, None),
        item("skew_adjoint_h", skew_h, tol.skew, None),
        item("composition_expansion", composition, tol.composition, trivial.clone()),
        item("scaling", scaling, tol.scaling, None),
        item(
            "variational_ladder",
            ladder,
            tol.ladder,
            Some(match &trivial {
                Some(t) => format!("gauge term {gauge:e}; {t}"),
                None => format!("gauge term {gauge:e} added back"),
            }),
        ),
    ];
    let pass = identities.iter().all(|r| r.pass);
    let failed: Vec<&IdentityResult> = identities.iter().filter(|r| !r.pass).collect();
    let message = failed
        .iter()
        .map(|r| format!("identity `{}` failed: residual {:e} >= tol {:e}", r.name, r.residual, r.tol))
        .collect::<Vec<_>>()
        .join("; ");
    out.artifacts.push(Artifact::json(
        "identities.json",
        &IdentityReport {
            n_pts: fc.n_pts,
            length: fc.length,
            p,
            samples: ic.samples,
            modes: ic.modes,
            amplitude: ic.amplitude,
            seed,
            identities,
            pass,
        },
    ));
    if !pass {
        return Err(Failure(EXIT_CHECK, message));
    }
    out.ok("identity-check");
    Ok(())
}
