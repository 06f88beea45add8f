//! Independent reference implementations shared by the integration tests and
//! the acceptance harness.
//!
//! The assembly oracle walks every cell of the mesh (no support pruning), uses
//! its own Newton-iterated Gauss weights and hat functions, writes each weak
//! form out by hand and accumulates in double-double. Trial derivatives come
//! from the library's finite-difference route so the comparison isolates
//! assembly. Finite differences carry ~1e-10 of round-off that reshuffles when
//! a point moves by one ulp, so points sit at the library's node positions
//! (checked against the Newton nodes) and are formed as `lower + ξ h`.

#![allow(dead_code, clippy::needless_range_loop, clippy::type_complexity)]

use std::ops::{Add, Div, Mul, Neg, Sub};

use dpgm::feature_basis::{differentiator, FeatureMap};
use dpgm::mesh::{Face, StructuredMesh, TestFunction, TestKind};
use dpgm::problems::ProblemSpec;
use nalgebra::{DMatrix, DVector};

/// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi) / 2`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    Dd { hi: s, lo: b - (s - a) }
}

impl Dd {
    pub fn new(v: f64) -> Self {
        Dd { hi: v, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn abs(self) -> Self {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }
}

impl From<f64> for Dd {
    fn from(v: f64) -> Self {
        Dd::new(v)
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let r = quick_two_sum(s, e + t);
        quick_two_sum(r.hi, r.lo + f)
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, o: Dd) -> Dd {
        self + (-o)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, o: Dd) -> Dd {
        let p = self.hi * o.hi;
        let e = self.hi.mul_add(o.hi, -p);
        quick_two_sum(p, e + (self.hi * o.lo + self.lo * o.hi))
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self - o * Dd::new(q1);
        let q2 = r.hi / o.hi;
        let r = r - o * Dd::new(q2);
        let q3 = r.hi / o.hi;
        let q = quick_two_sum(q1, q2);
        q + Dd::new(q3)
    }
}

/// Exact product of two doubles.
pub fn prod(a: f64, b: f64) -> Dd {
    let p = a * b;
    Dd {
        hi: p,
        lo: a.mul_add(b, -p),
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` by Newton's method on the
/// three-term recurrence.
pub fn gauss_nodes(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { z } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * p - pm1) / (z * z - 1.0);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (mut p0, mut p1) = (1.0, z);
        for k in 2..=n {
            let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
            p0 = p1;
            p1 = p2;
        }
        if n > 1 {
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
        } else {
            dp = 1.0;
        }
        x[n - 1 - i] = z;
        w[n - 1 - i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

fn hat_1d(x: f64, c: f64, h: f64) -> f64 {
    (1.0 - (x - c).abs() / h).max(0.0)
}

fn hat_1d_slope(x: f64, c: f64, h: f64) -> f64 {
    let r = x - c;
    if r.abs() >= h {
        0.0
    } else if r > 0.0 {
        -1.0 / h
    } else {
        1.0 / h
    }
}

/// Nodal hat function value and gradient at a point off the mesh lines.
pub fn hat(mesh: &StructuredMesh, node: usize, x: &[f64]) -> (f64, Vec<f64>) {
    let c = mesh.node_coords(node);
    let h = mesh.h();
    let d = x.len();
    let f: Vec<f64> = (0..d).map(|k| hat_1d(x[k], c[k], h[k])).collect();
    let value = f.iter().product();
    let grad = (0..d)
        .map(|k| {
            (0..d)
                .map(|m| if m == k { hat_1d_slope(x[m], c[m], h[m]) } else { f[m] })
                .product()
        })
        .collect();
    (value, grad)
}

/// Points and weights of a tensor Gauss rule over every cell, or over the
/// cells on `face` with that axis pinned.
pub fn points(mesh: &StructuredMesh, n: usize, face: Option<Face>) -> Vec<(Vec<f64>, f64)> {
    let (g, gw) = gauss_nodes(n);
    let line = dpgm::quadrature::gauss_legendre_1d(n, 0.0, 1.0).unwrap();
    let xi: Vec<f64> = line.iter().map(|(p, _)| p[0]).collect();
    for (a, b) in xi.iter().zip(&g) {
        assert!((a - 0.5 * (b + 1.0)).abs() <= 2e-16, "node {a} vs {b}");
    }
    let d = mesh.dim();
    let h = mesh.h().to_vec();
    let dom = mesh.domain();
    let cells = mesh.cells_per_axis().to_vec();
    let mut out = Vec::new();
    let mut cell = vec![0usize; d];
    loop {
        let on_face = face.map_or(true, |f| cell[f.axis] == if f.upper { cells[f.axis] - 1 } else { 0 });
        if on_face {
            let free: Vec<usize> = (0..d).filter(|&k| face.map_or(true, |f| f.axis != k)).collect();
            let mut idx = vec![0usize; free.len()];
            loop {
                let mut x = vec![0.0; d];
                let mut w = 1.0;
                for k in 0..d {
                    let lower = dom.lo[k] + cell[k] as f64 * h[k];
                    match free.iter().position(|&a| a == k) {
                        Some(i) => {
                            x[k] = lower + xi[idx[i]] * h[k];
                            w *= 0.5 * gw[idx[i]] * h[k];
                        }
                        None => {
                            let f = face.unwrap();
                            x[k] = lower + if f.upper { h[k] } else { 0.0 };
                        }
                    }
                }
                out.push((x, w));
                if !bump(&mut idx, &vec![n; free.len()]) {
                    break;
                }
            }
        }
        if !bump(&mut cell, &cells) {
            break;
        }
    }
    out
}

fn bump(idx: &mut [usize], limits: &[usize]) -> bool {
    for k in (0..idx.len()).rev() {
        idx[k] += 1;
        if idx[k] < limits[k] {
            return true;
        }
        idx[k] = 0;
    }
    false
}

/// Trial values and all partials at one point.
pub struct TrialAt {
    pub value: Vec<f64>,
    /// `partial[k][j] = ∂_k Φ_j`.
    pub partial: Vec<Vec<f64>>,
}

pub fn trial_at(map: &dyn FeatureMap, x: &[f64], axes: &[usize], step: f64) -> TrialAt {
    let n = map.len();
    let mut value = vec![0.0; n];
    let mut flat = vec![0.0; n * axes.len()];
    let d = differentiator(map, axes, step);
    d.eval(x, &mut value, &mut flat);
    let mut partial = vec![vec![0.0; n]; x.len()];
    for (a, &k) in axes.iter().enumerate() {
        partial[k].copy_from_slice(&flat[a * n..(a + 1) * n]);
    }
    TrialAt { value, partial }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleForm {
    Elliptic,
    Heat,
    Wave,
    Mixed(u8),
}

pub struct OracleSystem {
    pub matrix: Vec<Vec<Dd>>,
    pub rhs: Vec<Dd>,
}

impl OracleSystem {
    pub fn matrix_f64(&self) -> DMatrix<f64> {
        let r = self.matrix.len();
        let c = self.matrix.first().map_or(0, |row| row.len());
        DMatrix::from_fn(r, c, |i, j| self.matrix[i][j].to_f64())
    }

    pub fn rhs_f64(&self) -> DVector<f64> {
        DVector::from_iterator(self.rhs.len(), self.rhs.iter().map(|v| v.to_f64()))
    }
}

/// Weak-form rows by brute force. For mixed forms `u` is the scalar net,
/// `p` the two-component net, columns `[p¹ | p² | u]`.
#[allow(clippy::too_many_arguments)]
pub fn oracle_rows(
    problem: &ProblemSpec,
    form: OracleForm,
    mesh: &StructuredMesh,
    n: usize,
    step: f64,
    u: &dyn FeatureMap,
    p: Option<&dyn FeatureMap>,
    tests: &[TestFunction],
) -> OracleSystem {
    let d = mesh.dim();
    let sd = match form {
        OracleForm::Heat | OracleForm::Wave => d - 1,
        _ => d,
    };
    let np = p.map_or(0, |p| p.len());
    let uoff = 2 * np;
    let cols = uoff + u.len();
    let axes: Vec<usize> = (0..d).collect();
    let mut a = vec![vec![Dd::default(); cols]; tests.len()];
    let mut l = vec![Dd::default(); tests.len()];

    for (x, w) in points(mesh, n, None) {
        let tu = trial_at(u, &x, &axes, step);
        let tp = p.map(|p| trial_at(p, &x, &axes, step));
        let alpha = problem.alpha.eval(&x);
        let delta = problem.delta.eval(&x);
        let f = (problem.f)(&x);
        for (i, t) in tests.iter().enumerate() {
            let (v, dv) = hat(mesh, t.node, &x);
            if v == 0.0 && dv.iter().all(|g| *g == 0.0) {
                continue;
            }
            match (form, t.kind) {
                (OracleForm::Mixed(m), TestKind::VectorComponent(c)) => {
                    let tp = tp.as_ref().unwrap();
                    let pc = c * np;
                    for j in 0..np {
                        a[i][pc + j] = a[i][pc + j] + prod(w, tp.value[j] * v);
                    }
                    for j in 0..u.len() {
                        let val = if matches!(m, 2 | 4) {
                            tu.value[j] * dv[c]
                        } else {
                            -tu.partial[c][j] * v
                        };
                        a[i][uoff + j] = a[i][uoff + j] + prod(w, val);
                    }
                }
                (OracleForm::Mixed(m), TestKind::Scalar) => {
                    let tp = tp.as_ref().unwrap();
                    for c in 0..2 {
                        for j in 0..np {
                            let val = if matches!(m, 1 | 4) {
                                tp.value[j] * dv[c]
                            } else {
                                -tp.partial[c][j] * v
                            };
                            a[i][c * np + j] = a[i][c * np + j] + prod(w, val);
                        }
                    }
                    l[i] = l[i] + prod(w, f * v);
                }
                (_, TestKind::Scalar) => {
                    for j in 0..u.len() {
                        let mut val = delta * tu.value[j] * v;
                        for k in 0..sd {
                            val += alpha * tu.partial[k][j] * dv[k];
                        }
                        match form {
                            OracleForm::Heat => val += tu.partial[sd][j] * v,
                            OracleForm::Wave => val -= tu.partial[sd][j] * dv[sd],
                            _ => {}
                        }
                        a[i][j] = a[i][j] + prod(w, val);
                    }
                    l[i] = l[i] + prod(w, f * v);
                }
                _ => panic!("vector test in a scalar form"),
            }
        }
    }

    let face_pass = |face: Face, body: &mut dyn FnMut(&[f64], f64, usize, f64)| {
        for (x, w) in points(mesh, n, Some(face)) {
            for (i, t) in tests.iter().enumerate() {
                let (v, _) = hat(mesh, t.node, &x);
                if v != 0.0 {
                    body(&x, w, i, v);
                }
            }
        }
    };

    // Neumann data on scalar rows (in space-time, Γ_N × I).
    let neumann_rows = match form {
        OracleForm::Mixed(m) => matches!(m, 1 | 4),
        _ => true,
    };
    if neumann_rows {
        for &face in &problem.partition.neumann {
            face_pass(face, &mut |x, w, i, v| {
                if tests[i].kind == TestKind::Scalar {
                    l[i] = l[i] + prod(w, (problem.g_n)(x) * v);
                }
            });
        }
    }
    if let OracleForm::Mixed(m) = form {
        if matches!(m, 2 | 4) {
            for &face in &problem.partition.dirichlet {
                face_pass(face, &mut |x, w, i, v| {
                    if tests[i].kind == TestKind::VectorComponent(face.axis) {
                        l[i] = l[i] + prod(w, face.sign() * (problem.g_d)(x) * v);
                    }
                });
            }
        }
    }
    if form == OracleForm::Wave {
        let w0 = problem.w0.clone().unwrap();
        face_pass(Face::new(sd, false), &mut |x, w, i, v| {
            l[i] = l[i] + prod(w, w0(x) * v);
        });
        face_pass(Face::new(sd, true), &mut |x, w, i, v| {
            let tu = trial_at(u, x, &axes, step);
            for j in 0..u.len() {
                a[i][j] = a[i][j] + prod(w, tu.partial[sd][j] * v);
            }
        });
    }
    OracleSystem { matrix: a, rhs: l }
}

/// Largest entrywise relative gap `|a - b| / |b|`. Entries more than a
/// thousand times below the block's largest magnitude (cancellation zeros)
/// are measured against that floor instead.
pub fn max_relative_gap(got: &DMatrix<f64>, want: &DMatrix<f64>) -> f64 {
    assert_eq!(got.shape(), want.shape());
    let floor = 1e-3 * want.amax();
    got.iter()
        .zip(want.iter())
        .map(|(g, w)| {
            let denom = w.abs().max(floor);
            if denom == 0.0 {
                g.abs()
            } else {
                (g - w).abs() / denom
            }
        })
        .fold(0.0, f64::max)
}

/// Solves `MᵀM x = Mᵀb` in double-double by Gaussian elimination with partial
/// pivoting. Only meaningful for well-conditioned full-rank `M`.
pub fn normal_equations_dd(m: &DMatrix<f64>, b: &DVector<f64>) -> Vec<f64> {
    let (rows, n) = m.shape();
    let mut g = vec![vec![Dd::default(); n + 1]; n];
    for i in 0..n {
        for j in 0..n {
            let mut s = Dd::default();
            for r in 0..rows {
                s = s + prod(m[(r, i)], m[(r, j)]);
            }
            g[i][j] = s;
        }
        let mut s = Dd::default();
        for r in 0..rows {
            s = s + prod(m[(r, i)], b[r]);
        }
        g[i][n] = s;
    }
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&a, &b| g[a][col].abs().hi.total_cmp(&g[b][col].abs().hi))
            .unwrap();
        g.swap(col, piv);
        for r in col + 1..n {
            let factor = g[r][col] / g[col][col];
            for c in col..=n {
                let t = factor * g[col][c];
                g[r][c] = g[r][c] - t;
            }
        }
    }
    let mut x = vec![Dd::default(); n];
    for i in (0..n).rev() {
        let mut s = g[i][n];
        for j in i + 1..n {
            s = s - g[i][j] * x[j];
        }
        x[i] = s / g[i][i];
    }
    x.into_iter().map(Dd::to_f64).collect()
}

/// A small assembly configuration checked entry by entry against the oracle.
pub struct OracleCase {
    pub name: String,
    pub problem: ProblemSpec,
    pub form: OracleForm,
    pub mesh: StructuredMesh,
    pub u: Box<dyn FeatureMap>,
    pub p: Option<Box<dyn FeatureMap>>,
}

fn tanh_net(input: usize, width: usize, outputs: usize, seed: u64, stream: u64) -> Box<dyn FeatureMap> {
    use dpgm::feature_basis::{FeatureBasis, Init, NetworkArch};
    let arch = NetworkArch::fully_connected(vec![input, width], Init::Uniform { r: 1.0 }).with_outputs(outputs);
    Box::new(FeatureBasis::build_on_stream(&arch, seed, stream).unwrap())
}

fn resnet(input: usize, width: usize, seed: u64) -> Box<dyn FeatureMap> {
    use dpgm::feature_basis::{FeatureBasis, Init, NetworkArch};
    let arch = NetworkArch::resnet(input, width, 2, Init::XavierUniform);
    Box::new(FeatureBasis::build(&arch, seed).unwrap())
}

/// Every weak form on meshes of at most four cells with at most three
/// features per network.
pub fn oracle_cases() -> Vec<OracleCase> {
    use dpgm::mesh::{BoundaryPartition, BoxDomain};
    use dpgm::probe::FnProbe;
    use dpgm::problems::{example_heat, example_poisson, example_wave, scalar_fn, Coefficient, ProblemKind};

    let square = StructuredMesh::uniform(&BoxDomain::unit(2), 0.5).unwrap();
    let slab = |t: f64| {
        let dom = BoxDomain::unit(2).with_time(t).unwrap();
        StructuredMesh::new(&dom, &[0.5, 0.5, t]).unwrap()
    };
    let side_neumann = BoundaryPartition {
        dirichlet: vec![Face::new(1, false), Face::new(1, true)],
        neumann: vec![Face::new(0, false), Face::new(0, true)],
    };
    let mut cases = Vec::new();

    cases.push(OracleCase {
        name: "elliptic/example1".into(),
        problem: example_poisson(),
        form: OracleForm::Elliptic,
        mesh: square.clone(),
        u: tanh_net(2, 3, 1, 7, 1),
        p: None,
    });
    let mut dr = example_poisson();
    dr.kind = ProblemKind::DiffusionReaction;
    dr.alpha = Coefficient::Field(scalar_fn(|x| 1.0 + x[0] * x[1]));
    dr.delta = Coefficient::Const(2.5);
    dr.g_n = scalar_fn(|x| x[1].exp());
    let rect = BoxDomain::new(vec![-1.0, 0.0], vec![1.0, 2.0]).unwrap();
    let mut on_rect = dr.clone();
    on_rect.domain = rect.clone();
    cases.push(OracleCase {
        name: "elliptic/variable-coefficients".into(),
        problem: on_rect,
        form: OracleForm::Elliptic,
        mesh: StructuredMesh::uniform(&rect, 1.0).unwrap(),
        u: resnet(2, 3, 3),
        p: None,
    });
    cases.push(OracleCase {
        name: "elliptic/probe".into(),
        problem: dr,
        form: OracleForm::Elliptic,
        mesh: square.clone(),
        u: Box::new(FnProbe::monomial(2, &[2, 1]).push(|x| (x[0] - 2.0 * x[1]).sin())),
        p: None,
    });

    for (name, mut problem, form) in [
        ("heat", example_heat(), OracleForm::Heat),
        ("wave", example_wave(), OracleForm::Wave),
    ] {
        let t_end = 0.75;
        cases.push(OracleCase {
            name: format!("{name}/dirichlet"),
            problem: {
                let mut p = problem.clone();
                p.t_end = Some(t_end);
                p
            },
            form,
            mesh: slab(t_end),
            u: tanh_net(3, 3, 1, 11, 1),
            p: None,
        });
        problem.partition = side_neumann.clone();
        problem.g_n = scalar_fn(|x| x[1] + 2.0 * x[2]);
        problem.alpha = Coefficient::Const(0.7);
        problem.t_end = Some(1.0);
        cases.push(OracleCase {
            name: format!("{name}/neumann"),
            problem,
            form,
            mesh: slab(1.0),
            u: tanh_net(3, 2, 1, 12, 1),
            p: None,
        });
    }

    for m in 1..=4u8 {
        let mut problem = example_poisson();
        problem.kind = ProblemKind::MixedPoisson(m);
        problem.g_n = scalar_fn(|x| 0.5 - x[1]);
        problem.g_d = scalar_fn(|x| x[0] * x[0] + 0.25);
        cases.push(OracleCase {
            name: format!("mixed{m}"),
            problem,
            form: OracleForm::Mixed(m),
            mesh: square.clone(),
            u: tanh_net(2, 3, 1, 20 + m as u64, 1),
            p: Some(tanh_net(2, 3, 2, 20 + m as u64, 2)),
        });
    }
    cases
}

/// Assembles `case` through the library and through the oracle; returns the
/// largest entry gap of matrix and right-hand side.
pub fn check_case(case: &OracleCase, points: usize, step: f64) -> (f64, usize) {
    use dpgm::assembly::{
        assemble_elliptic, assemble_heat, assemble_mixed, assemble_wave, problem_tests, Assembler, SystemOptions,
    };
    let opts = SystemOptions::default();
    let tests = problem_tests(&case.problem, &case.mesh, &opts, 0).unwrap();
    assert!(!tests.is_empty(), "{}: no test functions", case.name);
    let asm = Assembler::new(&case.mesh, points, step).unwrap();
    let block = match case.form {
        OracleForm::Elliptic => assemble_elliptic(&case.problem, &*case.u, &tests, &asm),
        OracleForm::Heat => assemble_heat(&case.problem, &*case.u, &tests, &asm),
        OracleForm::Wave => assemble_wave(&case.problem, &*case.u, &tests, &asm),
        OracleForm::Mixed(m) => {
            let split = tests
                .iter()
                .position(|t| t.kind == TestKind::Scalar)
                .unwrap_or(tests.len());
            let p = case.p.as_deref().unwrap();
            assemble_mixed(&case.problem, m, p, &*case.u, &tests[..split], &tests[split..], &asm)
        }
    }
    .unwrap_or_else(|e| panic!("{}: {e}", case.name));
    let oracle = oracle_rows(
        &case.problem,
        case.form,
        &case.mesh,
        points,
        step,
        &*case.u,
        case.p.as_deref(),
        &tests,
    );
    let want = oracle.matrix_f64();
    let want_rhs = DMatrix::from_column_slice(tests.len(), 1, oracle.rhs_f64().as_slice());
    let got_rhs = DMatrix::from_column_slice(tests.len(), 1, block.rhs.as_slice());
    let gap = max_relative_gap(&block.matrix, &want).max(max_relative_gap(&got_rhs, &want_rhs));
    (gap, want.len())
}

fn random_matrix(m: usize, n: usize, seed: u64) -> DMatrix<f64> {
    let mut r = dpgm::rng::stream(seed, 1000);
    DMatrix::from_fn(m, n, |_, _| dpgm::rng::uniform(&mut r, -1.0, 1.0))
}

/// Orthogonality `‖Mᵀr‖ ≤ 1e-8 ‖M‖_F ‖b‖` on `count` random tall full-rank
/// systems; returns the worst ratio.
pub fn lstsq_orthogonality(count: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..count {
        let m = 20 + (seed as usize * 7) % 60;
        let n = 2 + (seed as usize * 5) % 18;
        let a = random_matrix(m, n, seed);
        let b = DVector::from_column_slice(random_matrix(m, 1, seed + 10_000).as_slice());
        let res = dpgm::lstsq::solve_lstsq(&a, &b, dpgm::lstsq::DEFAULT_RCOND).unwrap();
        assert_eq!(res.rank_estimate, n);
        let r = &a * DVector::from_column_slice(&res.coeffs) - &b;
        worst = worst.max((a.transpose() * r).norm() / (a.norm() * b.norm()));
    }
    worst
}

/// Rank-deficient constructions with a known minimum-norm answer. Returns
/// the largest gap to that answer relative to its norm.
pub fn lstsq_min_norm_gap() -> f64 {
    use dpgm::lstsq::solve_lstsq;
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        // [A | A]: the minimizer of [A A][y; z] splits evenly, y = z = x_A / 2
        let a = random_matrix(30, 5, seed);
        let b = DVector::from_column_slice(random_matrix(30, 1, seed + 77).as_slice());
        let base = solve_lstsq(&a, &b, 1e-12).unwrap();
        let mut wide = DMatrix::zeros(30, 10);
        wide.columns_mut(0, 5).copy_from(&a);
        wide.columns_mut(5, 5).copy_from(&a);
        let res = solve_lstsq(&wide, &b, 1e-12).unwrap();
        assert_eq!(res.rank_estimate, 5);
        let want: Vec<f64> = base.coeffs.iter().chain(&base.coeffs).map(|v| 0.5 * v).collect();
        let gap = res
            .coeffs
            .iter()
            .zip(&want)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        worst = worst.max(gap / want.iter().map(|v| v * v).sum::<f64>().sqrt());

        // a zero column gets a zero coefficient
        let mut padded = DMatrix::zeros(30, 6);
        padded.columns_mut(0, 5).copy_from(&a);
        let res = solve_lstsq(&padded, &b, 1e-12).unwrap();
        worst = worst.max(res.coeffs[5].abs());

        // underdetermined: x = Mᵀ(MMᵀ)⁻¹b, checked as x in the row space
        let m = random_matrix(4, 9, seed + 3);
        let rhs = DVector::from_column_slice(random_matrix(4, 1, seed + 5).as_slice());
        let res = solve_lstsq(&m, &rhs, 1e-12).unwrap();
        let x = DVector::from_column_slice(&res.coeffs);
        let y = (&m * m.transpose()).lu().solve(&rhs).unwrap();
        let want = m.transpose() * y;
        worst = worst.max((&x - &want).norm() / want.norm());
    }
    worst
}
