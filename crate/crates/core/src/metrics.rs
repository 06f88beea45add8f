//! L² and H¹ errors of a numerical solution against an exact one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_basis::{check_step, differentiator, dot, Differentiator, FeatureMap};
use crate::mesh::{BoxDomain, StructuredMesh};
use crate::problems::ExactSolution;
use crate::quadrature::{cell_rule, QuadratureRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum H1Mode {
    /// `‖e‖² + ‖∇e‖²`.
    #[default]
    Full,
    /// `‖∇e‖²` only.
    Semi,
}

/// A function with a gradient along the first `grad.len()` input axes.
pub trait ScalarField {
    fn input_dim(&self) -> usize;
    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

/// `u(x) = Σ c_j Φ_j(x)` with a central-difference gradient.
pub struct FeatureField<'a> {
    map: &'a dyn FeatureMap,
    coeffs: &'a [f64],
    diff: Box<dyn Differentiator + 'a>,
    grad_axes: usize,
}

impl<'a> FeatureField<'a> {
    /// Gradient along input axes `0..grad_axes`.
    pub fn new(map: &'a dyn FeatureMap, coeffs: &'a [f64], grad_axes: usize, step: f64) -> Result<Self> {
        check_step(step)?;
        if coeffs.len() != map.len() {
            return Err(Error::Dimension {
                expected: map.len(),
                got: coeffs.len(),
            });
        }
        if grad_axes > map.input_dim() {
            return Err(Error::Dimension {
                expected: map.input_dim(),
                got: grad_axes,
            });
        }
        let axes: Vec<usize> = (0..grad_axes).collect();
        Ok(FeatureField {
            map,
            coeffs,
            diff: differentiator(map, &axes, step),
            grad_axes,
        })
    }
}

impl ScalarField for FeatureField<'_> {
    fn input_dim(&self) -> usize {
        self.map.input_dim()
    }

    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let n = self.map.len();
        let mut values = vec![0.0; n];
        let mut partials = vec![0.0; n * self.grad_axes];
        self.diff.eval(x, &mut values, &mut partials);
        for (k, g) in grad.iter_mut().enumerate().take(self.grad_axes) {
            *g = dot(&partials[k * n..(k + 1) * n], self.coeffs);
        }
        dot(&values, self.coeffs)
    }
}

pub struct ExactField<'a> {
    exact: &'a ExactSolution,
    input_dim: usize,
}

impl<'a> ExactField<'a> {
    pub fn new(exact: &'a ExactSolution, input_dim: usize) -> Self {
        ExactField { exact, input_dim }
    }
}

impl ScalarField for ExactField<'_> {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let mut full = vec![0.0; self.input_dim];
        (self.exact.grad)(x, &mut full);
        let k = grad.len().min(full.len());
        grad[..k].copy_from_slice(&full[..k]);
        (self.exact.u)(x)
    }
}

/// A closure pair, mostly for probes in tests.
pub struct FnField<F, G> {
    pub input_dim: usize,
    pub value: F,
    pub grad: G,
}

impl<F, G> ScalarField for FnField<F, G>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64], &mut [f64]),
{
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        (self.grad)(x, grad);
        (self.value)(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub e_l2: f64,
    pub e_h1: f64,
    pub relative: bool,
    pub h1_mode: H1Mode,
    /// Norms of the reference solution, so the other mode can be recovered.
    pub reference_l2: f64,
    pub reference_h1: f64,
    pub eval_h: f64,
    pub eval_points_per_axis: usize,
    pub time_slice: Option<f64>,
}

/// Evaluation grid: `points` Gauss points per axis on cells of width `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalGrid {
    pub h: f64,
    pub points: usize,
    pub h1_mode: H1Mode,
}

impl Default for EvalGrid {
    fn default() -> Self {
        EvalGrid {
            h: 1.0 / 32.0,
            points: 10,
            h1_mode: H1Mode::Full,
        }
    }
}

impl EvalGrid {
    pub fn rule(&self, domain: &BoxDomain) -> Result<QuadratureRule> {
        cell_rule(&StructuredMesh::uniform(domain, self.h)?, self.points)
    }
}

struct Sums {
    err_v: f64,
    err_g: f64,
    ref_v: f64,
    ref_g: f64,
}

fn accumulate(
    u: &dyn ScalarField,
    v: &dyn ScalarField,
    rule: &QuadratureRule,
    grad_dim: usize,
    lift: impl Fn(&[f64], &mut Vec<f64>),
) -> Sums {
    let mut s = Sums {
        err_v: 0.0,
        err_g: 0.0,
        ref_v: 0.0,
        ref_g: 0.0,
    };
    let mut gu = vec![0.0; grad_dim];
    let mut gv = vec![0.0; grad_dim];
    let mut p = Vec::new();
    for (x, w) in rule.iter() {
        lift(x, &mut p);
        let a = u.eval(&p, &mut gu);
        let b = v.eval(&p, &mut gv);
        s.err_v += w * (a - b) * (a - b);
        s.ref_v += w * b * b;
        for k in 0..grad_dim {
            s.err_g += w * (gu[k] - gv[k]).powi(2);
            s.ref_g += w * gv[k] * gv[k];
        }
    }
    s
}

fn report(s: Sums, relative: bool, mode: H1Mode, time_slice: Option<f64>) -> Result<ErrorReport> {
    let (err_h1, ref_h1) = match mode {
        H1Mode::Full => (s.err_v + s.err_g, s.ref_v + s.ref_g),
        H1Mode::Semi => (s.err_g, s.ref_g),
    };
    let (e_l2, e_h1) = if relative {
        if s.ref_v == 0.0 || ref_h1 == 0.0 {
            return Err(Error::invalid(
                "reference solution has zero norm; relative errors are undefined, use absolute mode",
            ));
        }
        ((s.err_v / s.ref_v).sqrt(), (err_h1 / ref_h1).sqrt())
    } else {
        (s.err_v.sqrt(), err_h1.sqrt())
    };
    Ok(ErrorReport {
        e_l2,
        e_h1,
        relative,
        h1_mode: mode,
        reference_l2: s.ref_v.sqrt(),
        reference_h1: ref_h1.sqrt(),
        eval_h: f64::NAN,
        eval_points_per_axis: 0,
        time_slice,
    })
}

/// `‖u - v‖ / ‖v‖` in L² and H¹ over the points of `rule` (`relative`), or the
/// plain norms of `u - v`.
pub fn errors(
    u: &dyn ScalarField,
    v: &dyn ScalarField,
    rule: &QuadratureRule,
    relative: bool,
    mode: H1Mode,
) -> Result<ErrorReport> {
    if u.input_dim() != rule.dim() || v.input_dim() != rule.dim() {
        return Err(Error::Dimension {
            expected: rule.dim(),
            got: u.input_dim().min(v.input_dim()),
        });
    }
    let sums = accumulate(u, v, rule, rule.dim(), |x, p| {
        p.clear();
        p.extend_from_slice(x);
    });
    report(sums, relative, mode, None)
}

pub fn relative_errors(
    u: &dyn ScalarField,
    v: &dyn ScalarField,
    grid: &EvalGrid,
    domain: &BoxDomain,
) -> Result<ErrorReport> {
    let rule = grid.rule(domain)?;
    let mut r = errors(u, v, &rule, true, grid.h1_mode)?;
    r.eval_h = grid.h;
    r.eval_points_per_axis = grid.points;
    Ok(r)
}

/// Errors of `u(·, t)` against `v(·, t)` over the spatial box, spatial
/// gradient only. `relative = false` gives the absolute norms.
pub fn slice_errors_at_t(
    u: &dyn ScalarField,
    v: &dyn ScalarField,
    t: f64,
    interval: (f64, f64),
    grid: &EvalGrid,
    domain: &BoxDomain,
    relative: bool,
) -> Result<ErrorReport> {
    if !(t >= interval.0 && t <= interval.1) {
        return Err(Error::invalid(format!(
            "time slice {t} outside [{}, {}]",
            interval.0, interval.1
        )));
    }
    let d = domain.dim();
    if u.input_dim() != d + 1 || v.input_dim() != d + 1 {
        return Err(Error::Dimension {
            expected: d + 1,
            got: u.input_dim().min(v.input_dim()),
        });
    }
    let rule = grid.rule(domain)?;
    let sums = accumulate(u, v, &rule, d, |x, p| {
        p.clear();
        p.extend_from_slice(x);
        p.push(t);
    });
    let mut r = report(sums, relative, grid.h1_mode, Some(t))?;
    r.eval_h = grid.h;
    r.eval_points_per_axis = grid.points;
    Ok(r)
}
