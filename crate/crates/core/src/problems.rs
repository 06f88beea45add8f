//! Problem catalog: coefficients, boundary split, data and exact solutions.
//!
//! Every data function takes the full point: spatial coordinates followed
//! by `t` for time-dependent kinds.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Expr, Var};
use crate::mesh::{BoundaryPartition, BoxDomain, Face};
use crate::rng;

pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// Writes the gradient (spatial partials, then `∂_t` if present) into `out`.
pub type GradFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

pub fn scalar_fn(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> ScalarFn {
    Arc::new(f)
}

pub fn zero() -> ScalarFn {
    scalar_fn(|_| 0.0)
}

#[derive(Clone)]
pub enum Coefficient {
    Const(f64),
    Field(ScalarFn),
}

impl Coefficient {
    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Coefficient::Const(c) => *c,
            Coefficient::Field(f) => f(x),
        }
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Coefficient::Const(c) => Some(*c),
            Coefficient::Field(_) => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }
}

impl fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coefficient::Const(c) => write!(f, "Const({c})"),
            Coefficient::Field(_) => f.write_str("Field(..)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    DiffusionReaction,
    Poisson,
    MixedPoisson(u8),
    Heat,
    Wave,
}

impl ProblemKind {
    pub fn is_time_dependent(self) -> bool {
        matches!(self, ProblemKind::Heat | ProblemKind::Wave)
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProblemKind::DiffusionReaction => f.write_str("diffusion_reaction"),
            ProblemKind::Poisson => f.write_str("poisson"),
            ProblemKind::MixedPoisson(form) => write!(f, "mixed{form}"),
            ProblemKind::Heat => f.write_str("heat"),
            ProblemKind::Wave => f.write_str("wave"),
        }
    }
}

#[derive(Clone)]
pub struct ExactSolution {
    pub u: ScalarFn,
    pub grad: GradFn,
}

impl fmt::Debug for ExactSolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ExactSolution(..)")
    }
}

/// `-∇·(α∇u) + δu = f` (stationary), `u_t - ∇·(α∇u) = f` (heat) or
/// `u_tt - ∇·(α∇u) = f` (wave), with `u = g_D` on the Dirichlet faces,
/// `α∇u·n = g_N` on the Neumann faces, and `u(·,0) = h_0`, `u_t(·,0) = w_0`.
#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub kind: ProblemKind,
    /// Spatial box.
    pub domain: BoxDomain,
    /// End time `T` of `I = (0, T)`.
    pub t_end: Option<f64>,
    pub partition: BoundaryPartition,
    pub alpha: Coefficient,
    pub delta: Coefficient,
    pub f: ScalarFn,
    pub g_d: ScalarFn,
    pub g_n: ScalarFn,
    pub h0: Option<ScalarFn>,
    pub w0: Option<ScalarFn>,
    pub exact: Option<ExactSolution>,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("kind", &self.kind)
            .field("domain", &self.domain)
            .field("t_end", &self.t_end)
            .field("partition", &self.partition)
            .field("alpha", &self.alpha)
            .field("delta", &self.delta)
            .finish_non_exhaustive()
    }
}

impl ProblemSpec {
    pub fn spatial_dim(&self) -> usize {
        self.domain.dim()
    }

    /// Dimension of the points the data functions take.
    pub fn point_dim(&self) -> usize {
        self.spatial_dim() + usize::from(self.kind.is_time_dependent())
    }

    /// The box assembly works on: `Ω`, or `Ω × I` for time-dependent kinds.
    pub fn assembly_domain(&self) -> Result<BoxDomain> {
        match (self.kind.is_time_dependent(), self.t_end) {
            (false, _) => Ok(self.domain.clone()),
            (true, Some(t)) => self.domain.with_time(t),
            (true, None) => Err(Error::Problem(format!("{} problem needs an end time", self.kind))),
        }
    }

    pub fn with_kind(mut self, kind: ProblemKind) -> Result<Self> {
        self.kind = kind;
        self.validate()?;
        Ok(self)
    }

    /// Structural checks plus `α ≥ α_0 > 0` and `δ ≥ 0` at 1000 random points.
    pub fn validate(&self) -> Result<()> {
        let d = self.spatial_dim();
        self.partition.validate(d)?;
        if let ProblemKind::MixedPoisson(form) = self.kind {
            if !(1..=4).contains(&form) {
                return Err(Error::Problem(format!("mixed form must be 1..=4, got {form}")));
            }
            if d != 2 {
                return Err(Error::Unsupported("mixed formulations are 2D only".into()));
            }
            if self.alpha.as_const() != Some(1.0) || !self.delta.is_zero() {
                return Err(Error::Problem(
                    "mixed formulations solve -Δu = f; set alpha = 1, delta = 0".into(),
                ));
            }
        }
        if self.kind.is_time_dependent() {
            match self.t_end {
                Some(t) if t > 0.0 && t.is_finite() => {}
                Some(t) => return Err(Error::Problem(format!("end time must be positive, got {t}"))),
                None => return Err(Error::Problem(format!("{} problem needs an end time", self.kind))),
            }
            if self.h0.is_none() {
                return Err(Error::Problem(format!("{} problem needs initial data h0", self.kind)));
            }
        }
        if self.kind == ProblemKind::Wave && self.w0.is_none() {
            return Err(Error::Problem("wave problem needs initial velocity w0".into()));
        }
        let box_ = self.assembly_domain()?;
        let mut rng = rng::stream(0, rng::streams::VALIDATION);
        let mut p = vec![0.0; box_.dim()];
        let mut alpha_min = f64::INFINITY;
        for _ in 0..1000 {
            for (k, v) in p.iter_mut().enumerate() {
                *v = rng::uniform(&mut rng, box_.lo[k], box_.hi[k]);
            }
            let a = self.alpha.eval(&p);
            let dl = self.delta.eval(&p);
            if a.is_nan() || a <= 0.0 {
                return Err(Error::Problem(format!("alpha = {a} at {p:?}; must be positive")));
            }
            if dl.is_nan() || dl < 0.0 {
                return Err(Error::Problem(format!("delta = {dl} at {p:?}; must be non-negative")));
            }
            alpha_min = alpha_min.min(a);
        }
        debug_assert!(alpha_min > 0.0);
        Ok(())
    }
}

/// `u = cos(πx) sin(πy)` on the unit square, Dirichlet on `y = 0, 1`,
/// homogeneous Neumann on `x = 0, 1`.
pub fn example_poisson() -> ProblemSpec {
    let u = |p: &[f64]| (PI * p[0]).cos() * (PI * p[1]).sin();
    ProblemSpec {
        name: "example1".into(),
        kind: ProblemKind::Poisson,
        domain: BoxDomain::unit(2),
        t_end: None,
        partition: BoundaryPartition {
            dirichlet: vec![Face::new(1, false), Face::new(1, true)],
            neumann: vec![Face::new(0, false), Face::new(0, true)],
        },
        alpha: Coefficient::Const(1.0),
        delta: Coefficient::Const(0.0),
        // Δu = -2π² u
        f: scalar_fn(move |p| 2.0 * PI * PI * u(p)),
        g_d: scalar_fn(u),
        // ∂_x u = -π sin(πx) sin(πy) vanishes at x = 0, 1
        g_n: zero(),
        h0: None,
        w0: None,
        exact: Some(ExactSolution {
            u: scalar_fn(u),
            grad: Arc::new(|p, g| {
                let (sx, cx) = (PI * p[0]).sin_cos();
                let (sy, cy) = (PI * p[1]).sin_cos();
                g[0] = -PI * sx * sy;
                g[1] = PI * cx * cy;
            }),
        }),
    }
}

/// `u = 2 e^{-t} sin(πx/2) sin(πy/2)` on `(0,1)² × (0,1)`, Dirichlet everywhere.
pub fn example_heat() -> ProblemSpec {
    let s = |p: &[f64]| (0.5 * PI * p[0]).sin() * (0.5 * PI * p[1]).sin();
    let u = move |p: &[f64]| 2.0 * (-p[2]).exp() * s(p);
    ProblemSpec {
        name: "example2".into(),
        kind: ProblemKind::Heat,
        domain: BoxDomain::unit(2),
        t_end: Some(1.0),
        partition: BoundaryPartition::all_dirichlet(2),
        alpha: Coefficient::Const(1.0),
        delta: Coefficient::Const(0.0),
        // u_t = -u, Δu = -(π²/2) u
        f: scalar_fn(move |p| (0.5 * PI * PI - 1.0) * u(p)),
        g_d: scalar_fn(u),
        g_n: zero(),
        h0: Some(scalar_fn(move |p| 2.0 * s(p))),
        w0: None,
        exact: Some(ExactSolution {
            u: scalar_fn(u),
            grad: Arc::new(|p, g| {
                let (sx, cx) = (0.5 * PI * p[0]).sin_cos();
                let (sy, cy) = (0.5 * PI * p[1]).sin_cos();
                let a = 2.0 * (-p[2]).exp();
                g[0] = a * 0.5 * PI * cx * sy;
                g[1] = a * 0.5 * PI * sx * cy;
                g[2] = -a * sx * sy;
            }),
        }),
    }
}

/// `u = sin(πx/2) sin(πy/2) sin(πt/2)` on `(0,1)² × (0,1)`, Dirichlet everywhere.
pub fn example_wave() -> ProblemSpec {
    let s = |p: &[f64]| (0.5 * PI * p[0]).sin() * (0.5 * PI * p[1]).sin();
    let u = move |p: &[f64]| s(p) * (0.5 * PI * p[2]).sin();
    ProblemSpec {
        name: "example3".into(),
        kind: ProblemKind::Wave,
        domain: BoxDomain::unit(2),
        t_end: Some(1.0),
        partition: BoundaryPartition::all_dirichlet(2),
        alpha: Coefficient::Const(1.0),
        delta: Coefficient::Const(0.0),
        // u_tt = -(π²/4) u, Δu = -(π²/2) u
        f: scalar_fn(move |p| 0.25 * PI * PI * u(p)),
        g_d: scalar_fn(u),
        g_n: zero(),
        h0: Some(zero()),
        w0: Some(scalar_fn(move |p| 0.5 * PI * s(p))),
        exact: Some(ExactSolution {
            u: scalar_fn(u),
            grad: Arc::new(|p, g| {
                let (sx, cx) = (0.5 * PI * p[0]).sin_cos();
                let (sy, cy) = (0.5 * PI * p[1]).sin_cos();
                let (st, ct) = (0.5 * PI * p[2]).sin_cos();
                g[0] = 0.5 * PI * cx * sy * st;
                g[1] = 0.5 * PI * sx * cy * st;
                g[2] = 0.5 * PI * sx * sy * ct;
            }),
        }),
    }
}

pub fn preset(name: &str) -> Result<ProblemSpec> {
    match name {
        "example1" => Ok(example_poisson()),
        "example2" => Ok(example_heat()),
        "example3" => Ok(example_wave()),
        other => Err(Error::Problem(format!(
            "unknown preset `{other}` (expected example1, example2 or example3)"
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KindName {
    DiffusionReaction,
    Poisson,
    Heat,
    Wave,
}

/// Problem section of a run config: a preset name, or a full definition in
/// the expression grammar. `mixed_form` turns a Poisson problem into one of
/// the four first-order formulations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<KindName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixed_form: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dirichlet: Option<Vec<Face>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neumann: Option<Vec<Face>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Expr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<Expr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<Expr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_d: Option<Expr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_n: Option<Expr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h0: Option<Expr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w0: Option<Expr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact: Option<Expr>,
}

impl ProblemConfig {
    pub fn preset(name: &str) -> Self {
        ProblemConfig {
            preset: Some(name.to_string()),
            ..Default::default()
        }
    }
}

fn lift(e: &Expr, spatial: usize) -> ScalarFn {
    let e = e.clone();
    Arc::new(move |p| e.eval(&p[..spatial], p.get(spatial).copied().unwrap_or(0.0)))
}

fn check_vars(e: &Expr, spatial: usize, timed: bool, what: &str) -> Result<()> {
    let mut banned = Vec::new();
    if spatial < 2 {
        banned.push((Var::Y, "y"));
    }
    if spatial < 3 {
        banned.push((Var::Z, "z"));
    }
    if !timed {
        banned.push((Var::T, "t"));
    }
    for (v, name) in banned {
        if e.uses(v) {
            return Err(Error::Expression {
                source_text: e.source().to_string(),
                message: format!(
                    "unknown symbol `{name}` in {what} of a {spatial}D{} problem",
                    if timed { "+time" } else { "" }
                ),
            });
        }
    }
    Ok(())
}

/// Builds a problem from a config section. Starting from a preset, any
/// field given overrides it; otherwise `kind` and `f` are required, and
/// `g_d`, `h0`, `w0` fall back to traces of `exact` when it is given.
pub fn custom_problem(cfg: &ProblemConfig) -> Result<ProblemSpec> {
    let mut spec = match (&cfg.preset, cfg.kind) {
        (Some(name), None) => preset(name)?,
        (Some(_), Some(_)) => return Err(Error::Problem("give either `preset` or `kind`, not both".into())),
        (None, Some(kind)) => blank(cfg, kind)?,
        (None, None) => return Err(Error::Problem("problem needs `preset` or `kind`".into())),
    };
    if cfg.preset.is_some() {
        if let (Some(lo), Some(hi)) = (&cfg.lo, &cfg.hi) {
            spec.domain = BoxDomain::new(lo.clone(), hi.clone())?;
        }
        if let Some(t) = cfg.t_end {
            spec.t_end = Some(t);
        }
        if let Some(d) = &cfg.dirichlet {
            spec.partition.dirichlet = d.clone();
        }
        if let Some(n) = &cfg.neumann {
            spec.partition.neumann = n.clone();
        }
    }
    let d = spec.spatial_dim();
    let timed = spec.kind.is_time_dependent();
    let lifted = |e: &Expr, what: &str| -> Result<ScalarFn> {
        check_vars(e, d, timed, what)?;
        Ok(lift(e, d))
    };
    let coefficient = |e: &Expr, what: &str| -> Result<Coefficient> {
        check_vars(e, d, timed, what)?;
        let vars_used = [Var::X, Var::Y, Var::Z, Var::T].iter().any(|&v| e.uses(v));
        Ok(if vars_used {
            Coefficient::Field(lift(e, d))
        } else {
            Coefficient::Const(e.eval(&[], 0.0))
        })
    };
    if let Some(e) = &cfg.alpha {
        spec.alpha = coefficient(e, "alpha")?;
    }
    if let Some(e) = &cfg.delta {
        spec.delta = coefficient(e, "delta")?;
    }
    if let Some(e) = &cfg.exact {
        check_vars(e, d, timed, "exact")?;
        let axes = [Var::X, Var::Y, Var::Z];
        let mut partials: Vec<Expr> = axes[..d].iter().map(|&v| e.derivative(v)).collect();
        if timed {
            partials.push(e.derivative(Var::T));
        }
        let grads: Vec<ScalarFn> = partials.iter().map(|p| lift(p, d)).collect();
        spec.exact = Some(ExactSolution {
            u: lift(e, d),
            grad: Arc::new(move |p, g| {
                for (slot, f) in g.iter_mut().zip(&grads) {
                    *slot = f(p);
                }
            }),
        });
        if cfg.g_d.is_none() {
            spec.g_d = lift(e, d);
        }
        if timed {
            let u = lift(e, d);
            if cfg.h0.is_none() {
                let u = u.clone();
                spec.h0 = Some(Arc::new(move |p| {
                    let mut q = p[..d].to_vec();
                    q.push(0.0);
                    u(&q)
                }));
            }
            if cfg.w0.is_none() && spec.kind == ProblemKind::Wave {
                let ut = lift(&partials[d], d);
                spec.w0 = Some(Arc::new(move |p| {
                    let mut q = p[..d].to_vec();
                    q.push(0.0);
                    ut(&q)
                }));
            }
        }
    }
    if let Some(e) = &cfg.f {
        spec.f = lifted(e, "f")?;
    }
    if let Some(e) = &cfg.g_d {
        spec.g_d = lifted(e, "g_d")?;
    }
    if let Some(e) = &cfg.g_n {
        spec.g_n = lifted(e, "g_n")?;
    }
    if let Some(e) = &cfg.h0 {
        spec.h0 = Some(lifted(e, "h0")?);
    }
    if let Some(e) = &cfg.w0 {
        spec.w0 = Some(lifted(e, "w0")?);
    }
    if cfg.preset.is_none() {
        if cfg.f.is_none() {
            return Err(Error::Problem("missing required function `f`".into()));
        }
        if !spec.partition.dirichlet.is_empty() && cfg.g_d.is_none() && cfg.exact.is_none() {
            return Err(Error::Problem(
                "missing `g_d` (or `exact`) for the Dirichlet faces".into(),
            ));
        }
        if !spec.partition.neumann.is_empty() && cfg.g_n.is_none() {
            return Err(Error::Problem("missing `g_n` for the Neumann faces".into()));
        }
    }
    if let Some(form) = cfg.mixed_form {
        if !matches!(spec.kind, ProblemKind::Poisson | ProblemKind::DiffusionReaction) {
            return Err(Error::Problem(format!(
                "mixed_form applies to Poisson problems, not {}",
                spec.kind
            )));
        }
        spec.kind = ProblemKind::MixedPoisson(form);
    }
    spec.validate()?;
    Ok(spec)
}

fn blank(cfg: &ProblemConfig, kind: KindName) -> Result<ProblemSpec> {
    let domain = match (&cfg.lo, &cfg.hi) {
        (Some(lo), Some(hi)) => BoxDomain::new(lo.clone(), hi.clone())?,
        (None, None) => BoxDomain::unit(2),
        _ => return Err(Error::Problem("give both `lo` and `hi` or neither".into())),
    };
    let d = domain.dim();
    let kind = match kind {
        KindName::DiffusionReaction => ProblemKind::DiffusionReaction,
        KindName::Poisson => ProblemKind::Poisson,
        KindName::Heat => ProblemKind::Heat,
        KindName::Wave => ProblemKind::Wave,
    };
    let dirichlet = cfg.dirichlet.clone().unwrap_or_else(|| {
        let neumann = cfg.neumann.clone().unwrap_or_default();
        Face::all(d).into_iter().filter(|f| !neumann.contains(f)).collect()
    });
    let neumann = cfg
        .neumann
        .clone()
        .unwrap_or_else(|| Face::all(d).into_iter().filter(|f| !dirichlet.contains(f)).collect());
    Ok(ProblemSpec {
        name: "custom".into(),
        kind,
        domain,
        t_end: if kind.is_time_dependent() {
            Some(cfg.t_end.unwrap_or(1.0))
        } else {
            None
        },
        partition: BoundaryPartition { dirichlet, neumann },
        alpha: Coefficient::Const(1.0),
        delta: Coefficient::Const(0.0),
        f: zero(),
        g_d: zero(),
        g_n: zero(),
        h0: None,
        w0: None,
        exact: None,
    })
}
