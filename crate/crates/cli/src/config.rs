//! Run configuration: a single JSON document, validated into typed sections.
//! Every validation failure carries the dotted path of the offending field.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error at `{}`: {}", self.path, self.message)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(path: impl Into<String>, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError {
        path: path.into(),
        message: message.into(),
    })
}

/// Matrix or vector entry: a number or an expression string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Entry {
    Num(f64),
    Expr(String),
}

impl Entry {
    pub fn source(&self) -> String {
        match self {
            Entry::Num(x) => format!("{x:?}"),
            Entry::Expr(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceKindConfig {
    LagrangianExpr,
    FlatLift,
    Em,
    ConstantDmetric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    pub kind: SpaceKindConfig,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    /// `lagrangian_expr`: the Lagrangian body.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lagrangian: Option<String>,
    /// `flat_lift`: base metric `g_ij(x)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_base: Option<Vec<Vec<Entry>>>,
    /// `em`: metric `a_ij(x)`, potential `A_i(x)`, constants.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<Entry>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential: Option<Vec<Entry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e0: Option<f64>,
    /// `constant_dmetric`: constant blocks and `N^a_i(x, y)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<Vec<Vec<f64>>>,
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub n_conn: Option<Vec<Vec<Entry>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointConfig {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    /// `[lo, hi]` for every base coordinate.
    pub x: [f64; 2],
    /// `[lo, hi]` for every fiber coordinate.
    pub y: [f64; 2],
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<PointConfig>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<SamplingConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    H,
    V,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DtConfig {
    Fixed(f64),
    Auto(AutoTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoTag {
    Auto,
}

impl Default for DtConfig {
    fn default() -> Self {
        DtConfig::Auto(AutoTag::Auto)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurvatureSource {
    Manual,
    FromGeometry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurvatureConfig {
    pub source: CurvatureSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

impl Default for CurvatureConfig {
    fn default() -> Self {
        CurvatureConfig {
            source: CurvatureSource::Manual,
            value: Some(0.0),
        }
    }
}

/// Frame at `l = 0` for the −1 flow: an angle, or explicit components.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e_par: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e_perp: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    #[serde(default = "default_side")]
    pub side: Side,
    /// Number of field components; derived from the space when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    pub level: i32,
    pub n_pts: usize,
    pub length: f64,
    #[serde(default)]
    pub dt: DtConfig,
    pub t_end: f64,
    /// τ between snapshots; only the first and last when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_interval: Option<f64>,
    #[serde(default)]
    pub curvature: CurvatureConfig,
    /// One expression in `l` per component.
    pub initial: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<FrameConfig>,
}

fn default_side() -> Side {
    Side::H
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentityTolerances {
    #[serde(default = "tol_recursion")]
    pub recursion: f64,
    #[serde(default = "tol_skew")]
    pub skew: f64,
    #[serde(default = "tol_composition")]
    pub composition: f64,
    #[serde(default = "tol_scaling")]
    pub scaling: f64,
    #[serde(default = "tol_ladder")]
    pub ladder: f64,
}

fn tol_recursion() -> f64 {
    1e-6
}
fn tol_skew() -> f64 {
    1e-8
}
fn tol_composition() -> f64 {
    1e-7
}
fn tol_scaling() -> f64 {
    1e-6
}
fn tol_ladder() -> f64 {
    1e-4
}

impl Default for IdentityTolerances {
    fn default() -> Self {
        IdentityTolerances {
            recursion: tol_recursion(),
            skew: tol_skew(),
            composition: tol_composition(),
            scaling: tol_scaling(),
            ladder: tol_ladder(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentityConfig {
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Highest Fourier mode of the random test fields.
    #[serde(default = "default_modes")]
    pub modes: usize,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tol: IdentityTolerances,
}

fn default_samples() -> usize {
    20
}
fn default_modes() -> usize {
    6
}
fn default_amplitude() -> f64 {
    1.0
}

impl Default for IdentityConfig {
    fn default() -> Self {
        IdentityConfig {
            samples: default_samples(),
            modes: default_modes(),
            amplitude: default_amplitude(),
            seed: 0,
            tol: IdentityTolerances::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub directory: String,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

fn default_dir() -> String {
    "out".into()
}
fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: default_dir(),
            formats: default_formats(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space: Option<SpaceConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<GeometryConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<FlowConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identities: Option<IdentityConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ConfigError {
                path: if path == "." { "<root>".into() } else { path },
                message: e.into_inner().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            path: "<file>".into(),
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if let Some(s) = &self.space {
            s.validate()?;
        }
        if let Some(g) = &self.geometry {
            g.validate(self.space.as_ref())?;
        }
        if let Some(f) = &self.flow {
            f.validate()?;
        }
        if let Some(i) = &self.identities {
            i.validate()?;
        }
        if self.output.directory.is_empty() {
            return err("output.directory", "must not be empty");
        }
        Ok(())
    }

    pub fn require_space(&self) -> Result<&SpaceConfig, ConfigError> {
        self.space.as_ref().map_or_else(|| err("space", "section is required"), Ok)
    }

    pub fn require_geometry(&self) -> Result<&GeometryConfig, ConfigError> {
        self.geometry.as_ref().map_or_else(|| err("geometry", "section is required"), Ok)
    }

    pub fn require_flow(&self) -> Result<&FlowConfig, ConfigError> {
        self.flow.as_ref().map_or_else(|| err("flow", "section is required"), Ok)
    }

    /// Number of field components of the flow, from `flow.p` or the side of
    /// the space (`n − 1` horizontal, `m − 1` vertical).
    pub fn flow_components(&self) -> Result<usize, ConfigError> {
        let p = self.flow_p()?;
        let flow = self.require_flow()?;
        if flow.initial.len() != p {
            return err(
                "flow.initial",
                format!("expected {p} component expressions, got {}", flow.initial.len()),
            );
        }
        Ok(p)
    }

    /// Like [`RunConfig::flow_components`] without checking `flow.initial`.
    pub fn flow_p(&self) -> Result<usize, ConfigError> {
        let flow = self.require_flow()?;
        let derived = self.space.as_ref().map(|s| match flow.side {
            Side::H => s.n - 1,
            Side::V => s.fiber_dim() - 1,
        });
        let p = match (flow.p, derived) {
            (Some(p), Some(d)) if p != d => {
                return err("flow.p", format!("{p} disagrees with the space, which gives {d}"))
            }
            (Some(p), _) | (None, Some(p)) => p,
            (None, None) => return err("flow.p", "required when there is no space section"),
        };
        if p == 0 {
            return err("flow.p", "must be at least 1");
        }
        Ok(p)
    }
}

impl SpaceConfig {
    pub fn fiber_dim(&self) -> usize {
        self.m.unwrap_or(match self.kind {
            SpaceKindConfig::ConstantDmetric => self.h.as_ref().map_or(self.n, |h| h.len()),
            _ => self.n,
        })
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.n < 2 {
            return err("space.n", "must be at least 2");
        }
        let m = self.fiber_dim();
        let present = [
            ("lagrangian", self.lagrangian.is_some()),
            ("g_base", self.g_base.is_some()),
            ("a", self.a.is_some()),
            ("potential", self.potential.is_some()),
            ("m0", self.m0.is_some()),
            ("e0", self.e0.is_some()),
            ("g", self.g.is_some()),
            ("h", self.h.is_some()),
            ("N", self.n_conn.is_some()),
        ];
        let (needed, allowed): (&[&str], &[&str]) = match self.kind {
            SpaceKindConfig::LagrangianExpr => (&["lagrangian"], &["lagrangian"]),
            SpaceKindConfig::FlatLift => (&["g_base"], &["g_base"]),
            SpaceKindConfig::Em => (&["a", "potential"], &["a", "potential", "m0", "e0"]),
            SpaceKindConfig::ConstantDmetric => (&["g", "h", "N"], &["g", "h", "N"]),
        };
        for (name, is) in present {
            if is && !allowed.contains(&name) {
                return err(format!("space.{name}"), format!("not used by kind {:?}", self.kind));
            }
            if !is && needed.contains(&name) {
                return err(format!("space.{name}"), format!("required by kind {:?}", self.kind));
            }
        }
        if self.kind != SpaceKindConfig::ConstantDmetric && m != self.n {
            return err("space.m", "this kind lives on the tangent bundle, so m must equal n");
        }
        if m < self.n {
            return err("space.m", "must be at least n");
        }
        let square = |path: &str, rows: usize, cols: &[usize], k: usize| {
            if rows != k || cols.iter().any(|&c| c != k) {
                return err(path, format!("must be {k} x {k}"));
            }
            Ok(())
        };
        if let Some(g) = &self.g_base {
            square("space.g_base", g.len(), &g.iter().map(Vec::len).collect::<Vec<_>>(), self.n)?;
        }
        if let Some(a) = &self.a {
            square("space.a", a.len(), &a.iter().map(Vec::len).collect::<Vec<_>>(), self.n)?;
        }
        if let Some(p) = &self.potential {
            if p.len() != self.n {
                return err("space.potential", format!("must have {} entries", self.n));
            }
        }
        for (name, v) in [("m0", self.m0), ("e0", self.e0)] {
            if let Some(x) = v {
                if !x.is_finite() {
                    return err(format!("space.{name}"), "must be finite");
                }
            }
        }
        if let Some(0.0) = self.m0 {
            return err("space.m0", "must be nonzero");
        }
        if let Some(g) = &self.g {
            square("space.g", g.len(), &g.iter().map(Vec::len).collect::<Vec<_>>(), self.n)?;
        }
        if let Some(h) = &self.h {
            square("space.h", h.len(), &h.iter().map(Vec::len).collect::<Vec<_>>(), m)?;
        }
        if let Some(nc) = &self.n_conn {
            if nc.len() != m || nc.iter().any(|r| r.len() != self.n) {
                return err("space.N", format!("must be {m} x {} (rows are fiber indices)", self.n));
            }
        }
        Ok(())
    }
}

impl GeometryConfig {
    fn validate(&self, space: Option<&SpaceConfig>) -> Result<(), ConfigError> {
        match (&self.points, &self.sampling) {
            (Some(_), Some(_)) => return err("geometry", "give either points or sampling, not both"),
            (None, None) => return err("geometry", "needs points or sampling"),
            _ => {}
        }
        if let (Some(pts), Some(s)) = (&self.points, space) {
            let m = s.fiber_dim();
            for (i, p) in pts.iter().enumerate() {
                if p.x.len() != s.n {
                    return err(format!("geometry.points[{i}].x"), format!("must have {} entries", s.n));
                }
                if p.y.len() != m {
                    return err(format!("geometry.points[{i}].y"), format!("must have {m} entries"));
                }
                if p.x.iter().chain(&p.y).any(|v| !v.is_finite()) {
                    return err(format!("geometry.points[{i}]"), "coordinates must be finite");
                }
            }
        }
        if let Some(s) = &self.sampling {
            for (name, r) in [("x", s.x), ("y", s.y)] {
                if !(r[0].is_finite() && r[1].is_finite() && r[0] < r[1]) {
                    return err(format!("geometry.sampling.{name}"), "must be a finite range [lo, hi] with lo < hi");
                }
            }
            if s.count == 0 {
                return err("geometry.sampling.count", "must be positive");
            }
        }
        if let Some(t) = self.tol {
            if !(t > 0.0 && t.is_finite()) {
                return err("geometry.tol", "must be positive");
            }
        }
        Ok(())
    }

    pub fn sample_count(&self) -> usize {
        match (&self.points, &self.sampling) {
            (Some(p), _) => p.len(),
            (_, Some(s)) => s.count,
            _ => 0,
        }
    }

    pub fn count_path(&self) -> &'static str {
        if self.points.is_some() {
            "geometry.points"
        } else {
            "geometry.sampling.count"
        }
    }
}

impl FlowConfig {
    fn validate(&self) -> Result<(), ConfigError> {
        if !(-1..=2).contains(&self.level) {
            return err("flow.level", format!("must be one of -1, 0, 1, 2, got {}", self.level));
        }
        if self.n_pts < 16 || !self.n_pts.is_power_of_two() {
            return err("flow.n_pts", format!("must be a power of two >= 16, got {}", self.n_pts));
        }
        if !(self.length > 0.0 && self.length.is_finite()) {
            return err("flow.length", "must be positive");
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return err("flow.t_end", "must be positive");
        }
        if let DtConfig::Fixed(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return err("flow.dt", "must be positive or \"auto\"");
            }
        }
        if let Some(s) = self.snapshot_interval {
            if !(s > 0.0 && s.is_finite()) {
                return err("flow.snapshot_interval", "must be positive");
            }
        }
        match (self.curvature.source, self.curvature.value) {
            (CurvatureSource::Manual, None) => {
                return err("flow.curvature.value", "required for a manual source")
            }
            (CurvatureSource::Manual, Some(v)) if !v.is_finite() => {
                return err("flow.curvature.value", "must be finite")
            }
            (CurvatureSource::FromGeometry, Some(_)) => {
                return err("flow.curvature.value", "not used when the source is from_geometry")
            }
            _ => {}
        }
        if self.initial.is_empty() {
            return err("flow.initial", "needs at least one component");
        }
        if let Some(fr) = &self.frame {
            if self.level != -1 {
                return err("flow.frame", "only used by level -1");
            }
            match (fr.theta0, fr.e_par, &fr.e_perp) {
                (Some(_), None, None) | (None, Some(_), Some(_)) => {}
                _ => return err("flow.frame", "give either theta0 or both e_par and e_perp"),
            }
        }
        Ok(())
    }
}

impl IdentityConfig {
    fn validate(&self) -> Result<(), ConfigError> {
        if self.samples == 0 {
            return err("identities.samples", "must be positive");
        }
        if self.modes == 0 {
            return err("identities.modes", "must be positive");
        }
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return err("identities.amplitude", "must be positive");
        }
        let t = &self.tol;
        for (name, v) in [
            ("recursion", t.recursion),
            ("skew", t.skew),
            ("composition", t.composition),
            ("scaling", t.scaling),
            ("ladder", t.ladder),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return err(format!("identities.tol.{name}"), "must be positive");
            }
        }
        Ok(())
    }
}
