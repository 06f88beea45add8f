//! Stacked least-squares systems: weak-form rows against multilinear test
//! functions, plus collocation rows for boundary and initial data.
//!
//! The weak-form engine is generic. A [`WeakForm`] lists bilinear terms
//! `coef · op(Φ_j) · op(v_i)` and linear terms `data · op(v_i)` over the
//! volume or over single boundary faces. Integration runs cell by cell: each
//! cell builds its local rows as one matrix product, and cells are merged in
//! a fixed order, so results do not depend on the worker count.

use std::fmt;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_basis::{check_step, differentiator, Differentiator, FeatureMap};
use crate::mesh::{
    hdiv_test_basis, scalar_test_basis, select_subset, shape_grad, shape_value, vector_test_basis, BoxDomain,
    Constraint, Face, StructuredMesh, SubsetMode, TestFunction, TestKind,
};
use crate::problems::{Coefficient, ProblemKind, ProblemSpec, ScalarFn};
use crate::quadrature::{face_cell_area, sample_uniform, ReferenceRule, SampleSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BlockLabel {
    WeakForm,
    Dirichlet,
    NormalTrace,
    Initial,
}

impl fmt::Display for BlockLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BlockLabel::WeakForm => "weak_form",
            BlockLabel::Dirichlet => "dirichlet",
            BlockLabel::NormalTrace => "normal_trace",
            BlockLabel::Initial => "initial",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub label: BlockLabel,
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

impl Block {
    pub fn new(label: BlockLabel, matrix: DMatrix<f64>, rhs: DVector<f64>) -> Result<Self> {
        if matrix.nrows() != rhs.len() {
            return Err(Error::Dimension {
                expected: matrix.nrows(),
                got: rhs.len(),
            });
        }
        if matrix.iter().chain(rhs.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("assembled block"));
        }
        Ok(Block { label, matrix, rhs })
    }

    pub fn empty(label: BlockLabel, columns: usize) -> Self {
        Block {
            label,
            matrix: DMatrix::zeros(0, columns),
            rhs: DVector::zeros(0),
        }
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn columns(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Rows `start..end` of the stacked matrix came from a block labelled `label`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowRange {
    pub label: BlockLabel,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackedSystem {
    column_count: usize,
    blocks: Vec<Block>,
    /// Non-fatal findings, e.g. an empty Dirichlet block.
    pub diagnostics: Vec<String>,
}

impl StackedSystem {
    pub fn new(column_count: usize) -> Self {
        StackedSystem {
            column_count,
            blocks: Vec::new(),
            diagnostics: Vec::new(),
        }
    }

    pub fn push(&mut self, block: Block) -> Result<()> {
        if block.columns() != self.column_count {
            return Err(Error::invalid(format!(
                "{} block has {} columns, system has {}",
                block.label,
                block.columns(),
                self.column_count
            )));
        }
        self.blocks.push(block);
        Ok(())
    }

    pub fn column_count(&self) -> usize {
        self.column_count
    }

    pub fn row_count(&self) -> usize {
        self.blocks.iter().map(Block::rows).sum()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, label: BlockLabel) -> Option<&Block> {
        self.blocks.iter().find(|b| b.label == label)
    }

    /// Concatenates the blocks (weak form, Dirichlet, normal trace, initial).
    pub fn stack(&self) -> Result<(DMatrix<f64>, DVector<f64>, Vec<RowRange>)> {
        self.stack_weighted(1.0)
    }

    /// As [`stack`](Self::stack), with every collocation row scaled by `weight`.
    pub fn stack_weighted(&self, weight: f64) -> Result<(DMatrix<f64>, DVector<f64>, Vec<RowRange>)> {
        if !(weight.is_finite() && weight > 0.0) {
            return Err(Error::invalid(format!(
                "boundary weight must be positive, got {weight}"
            )));
        }
        let mut order: Vec<&Block> = self.blocks.iter().collect();
        order.sort_by_key(|b| b.label);
        let rows = self.row_count();
        let mut matrix = DMatrix::zeros(rows, self.column_count);
        let mut rhs = DVector::zeros(rows);
        let mut ranges = Vec::with_capacity(order.len());
        let mut start = 0;
        for block in order {
            let scale = if block.label == BlockLabel::WeakForm {
                1.0
            } else {
                weight
            };
            let end = start + block.rows();
            matrix.rows_mut(start, block.rows()).copy_from(&(&block.matrix * scale));
            rhs.rows_mut(start, block.rows()).copy_from(&(&block.rhs * scale));
            ranges.push(RowRange {
                label: block.label,
                start,
                end,
            });
            start = end;
        }
        Ok((matrix, rhs, ranges))
    }

    /// Plain-text dump: one row per line, matrix entries then the rhs, with a
    /// `#` comment line opening each block.
    pub fn write_text(&self, mut out: impl Write) -> Result<()> {
        let (matrix, rhs, ranges) = self.stack()?;
        writeln!(
            out,
            "# stacked system: {} rows, {} columns; each line holds the matrix row followed by the rhs entry",
            matrix.nrows(),
            matrix.ncols()
        )?;
        for range in ranges {
            writeln!(out, "# block {} rows {}..{}", range.label, range.start, range.end)?;
            for r in range.start..range.end {
                let mut line = String::with_capacity(24 * (matrix.ncols() + 1));
                for c in 0..matrix.ncols() {
                    line.push_str(&format!("{:.17e} ", matrix[(r, c)]));
                }
                line.push_str(&format!("{:.17e}", rhs[r]));
                writeln!(out, "{line}")?;
            }
        }
        Ok(())
    }
}

/// A differential operator applied to a trial feature or a test function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Value,
    Partial(usize),
}

/// A block of columns filled by one feature map.
#[derive(Clone, Copy)]
pub struct Field<'a> {
    pub map: &'a dyn FeatureMap,
    pub offset: usize,
}

/// `scale · coef · trial(Φ_j) · test(v_i)` for rows of kind `rows`.
#[derive(Debug, Clone)]
pub struct BilinearTerm {
    pub rows: TestKind,
    pub field: usize,
    pub trial: Op,
    pub test: Op,
    pub coef: Coefficient,
    pub scale: f64,
}

impl BilinearTerm {
    pub fn new(rows: TestKind, field: usize, trial: Op, test: Op) -> Self {
        BilinearTerm {
            rows,
            field,
            trial,
            test,
            coef: Coefficient::Const(1.0),
            scale: 1.0,
        }
    }

    pub fn coef(mut self, coef: Coefficient) -> Self {
        self.coef = coef;
        self
    }

    pub fn scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }
}

/// `scale · data · test(v_i)` on the right-hand side.
#[derive(Clone)]
pub struct LinearTerm {
    pub rows: TestKind,
    pub test: Op,
    pub data: ScalarFn,
    pub scale: f64,
}

impl fmt::Debug for LinearTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinearTerm")
            .field("rows", &self.rows)
            .field("test", &self.test)
            .field("scale", &self.scale)
            .finish_non_exhaustive()
    }
}

impl LinearTerm {
    pub fn new(rows: TestKind, test: Op, data: ScalarFn) -> Self {
        LinearTerm {
            rows,
            test,
            data,
            scale: 1.0,
        }
    }

    pub fn scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }
}

#[derive(Debug, Clone, Default)]
pub struct WeakForm {
    pub volume: Vec<BilinearTerm>,
    pub source: Vec<LinearTerm>,
    pub face_bilinear: Vec<(Face, BilinearTerm)>,
    pub face_linear: Vec<(Face, LinearTerm)>,
}

impl WeakForm {
    fn faces(&self) -> Vec<Face> {
        let mut faces: Vec<Face> = Vec::new();
        for f in self
            .face_bilinear
            .iter()
            .map(|(f, _)| *f)
            .chain(self.face_linear.iter().map(|(f, _)| *f))
        {
            if !faces.contains(&f) {
                faces.push(f);
            }
        }
        faces
    }
}

/// Mesh, Gauss points per axis and finite-difference step shared by every
/// weak-form integral of one system.
#[derive(Debug, Clone, Copy)]
pub struct Assembler<'a> {
    mesh: &'a StructuredMesh,
    points: usize,
    step: f64,
}

const CELL_CHUNK: usize = 128;

impl<'a> Assembler<'a> {
    pub fn new(mesh: &'a StructuredMesh, points_per_axis: usize, fd_step: f64) -> Result<Self> {
        check_step(fd_step)?;
        ReferenceRule::cell(1, points_per_axis)?;
        Ok(Assembler {
            mesh,
            points: points_per_axis,
            step: fd_step,
        })
    }

    pub fn mesh(&self) -> &StructuredMesh {
        self.mesh
    }

    /// One row per test function, `columns` wide.
    pub fn weak_form(
        &self,
        fields: &[Field<'_>],
        columns: usize,
        tests: &[TestFunction],
        form: &WeakForm,
    ) -> Result<Block> {
        let dim = self.mesh.dim();
        for (i, f) in fields.iter().enumerate() {
            if f.map.input_dim() != dim {
                return Err(Error::invalid(format!(
                    "trial field {i} takes {}-dimensional input, mesh is {dim}D",
                    f.map.input_dim()
                )));
            }
            if f.offset + f.map.len() > columns {
                return Err(Error::invalid(format!("trial field {i} overruns {columns} columns")));
            }
        }
        let check_term = |t: &BilinearTerm| -> Result<()> {
            if t.field >= fields.len() {
                return Err(Error::invalid(format!("term refers to missing field {}", t.field)));
            }
            for op in [t.trial, t.test] {
                if let Op::Partial(k) = op {
                    if k >= dim {
                        return Err(Error::Dimension {
                            expected: dim,
                            got: k + 1,
                        });
                    }
                }
            }
            Ok(())
        };
        for t in form.volume.iter().chain(form.face_bilinear.iter().map(|(_, t)| t)) {
            check_term(t)?;
        }
        for test in tests {
            if test.node >= self.mesh.node_count() {
                return Err(Error::invalid(format!("test node {} outside the mesh", test.node)));
            }
        }

        let mut kinds: Vec<TestKind> = Vec::new();
        let mut row_kind = Vec::with_capacity(tests.len());
        for t in tests {
            let k = kinds.iter().position(|&k| k == t.kind).unwrap_or_else(|| {
                kinds.push(t.kind);
                kinds.len() - 1
            });
            row_kind.push(k);
        }
        let mut rows_at_node: Vec<Vec<(usize, usize)>> = vec![Vec::new(); self.mesh.node_count()];
        for (row, t) in tests.iter().enumerate() {
            rows_at_node[t.node].push((row, row_kind[row]));
        }

        let mut matrix = DMatrix::zeros(tests.len(), columns);
        let mut rhs = DVector::zeros(tests.len());
        let regions = std::iter::once(None).chain(form.faces().into_iter().map(Some));
        for region in regions {
            let (bilinear, linear): (Vec<&BilinearTerm>, Vec<&LinearTerm>) = match region {
                None => (form.volume.iter().collect(), form.source.iter().collect()),
                Some(face) => (
                    form.face_bilinear
                        .iter()
                        .filter(|(f, _)| *f == face)
                        .map(|(_, t)| t)
                        .collect(),
                    form.face_linear
                        .iter()
                        .filter(|(f, _)| *f == face)
                        .map(|(_, t)| t)
                        .collect(),
                ),
            };
            if bilinear.is_empty() && linear.is_empty() {
                continue;
            }
            let plan = Plan::new(fields, &bilinear, &linear, &kinds, self.step);
            let (reference, scale, cells) = match region {
                None => (
                    ReferenceRule::cell(dim, self.points)?,
                    self.mesh.cell_volume(),
                    (0..self.mesh.cell_count()).collect::<Vec<_>>(),
                ),
                Some(face) => (
                    ReferenceRule::face(dim, self.points, face)?,
                    face_cell_area(self.mesh, face),
                    self.mesh.boundary_cells(face),
                ),
            };
            let region = Region {
                mesh: self.mesh,
                reference: &reference,
                scale,
                rows_at_node: &rows_at_node,
                columns,
            };
            for chunk in cells.chunks(CELL_CHUNK) {
                #[cfg(feature = "parallel")]
                let outs: Vec<Option<CellOut>> = {
                    use rayon::prelude::*;
                    chunk.par_iter().map(|&c| region.cell(&plan, c)).collect()
                };
                #[cfg(not(feature = "parallel"))]
                let outs: Vec<Option<CellOut>> = chunk.iter().map(|&c| region.cell(&plan, c)).collect();
                for out in outs.into_iter().flatten() {
                    for (r, &row) in out.rows.iter().enumerate() {
                        for j in 0..columns {
                            matrix[(row, j)] += out.contrib[(j, r)];
                        }
                        rhs[row] += out.rhs[r];
                    }
                }
            }
        }
        Block::new(BlockLabel::WeakForm, matrix, rhs)
    }
}

struct MapPlan<'a> {
    map: &'a dyn FeatureMap,
    axes: Vec<usize>,
    diff: Option<Box<dyn Differentiator + 'a>>,
}

#[derive(Clone, Copy)]
enum Slot {
    Value,
    Partial(usize),
}

struct Factor {
    slot: Slot,
    op: Op,
    coef: Option<ScalarFn>,
}

struct FieldPlan {
    map: usize,
    offset: usize,
    factors: Vec<Factor>,
}

struct TermRef {
    field: usize,
    factor: usize,
    test: Op,
    mult: f64,
}

struct Plan<'a> {
    maps: Vec<MapPlan<'a>>,
    fields: Vec<FieldPlan>,
    terms: Vec<Vec<TermRef>>,
    linear: Vec<Vec<LinearTerm>>,
}

impl<'a> Plan<'a> {
    fn new(
        fields: &[Field<'a>],
        bilinear: &[&BilinearTerm],
        linear: &[&LinearTerm],
        kinds: &[TestKind],
        step: f64,
    ) -> Self {
        let addr = |m: &dyn FeatureMap| (m as *const dyn FeatureMap).cast::<()>();
        let mut maps: Vec<MapPlan<'a>> = Vec::new();
        let mut field_map = Vec::with_capacity(fields.len());
        for f in fields {
            let idx = maps.iter().position(|m| addr(m.map) == addr(f.map)).unwrap_or_else(|| {
                maps.push(MapPlan {
                    map: f.map,
                    axes: Vec::new(),
                    diff: None,
                });
                maps.len() - 1
            });
            field_map.push(idx);
        }
        let live: Vec<&BilinearTerm> = bilinear
            .iter()
            .copied()
            .filter(|t| t.scale != 0.0 && !t.coef.is_zero() && kinds.contains(&t.rows))
            .collect();
        for t in &live {
            if let Op::Partial(k) = t.trial {
                let axes = &mut maps[field_map[t.field]].axes;
                if !axes.contains(&k) {
                    axes.push(k);
                }
            }
        }
        for m in &mut maps {
            m.axes.sort_unstable();
            if !m.axes.is_empty() {
                m.diff = Some(differentiator(m.map, &m.axes, step));
            }
        }

        let mut plans: Vec<FieldPlan> = Vec::new();
        let mut plan_of_field = vec![usize::MAX; fields.len()];
        let mut terms: Vec<Vec<TermRef>> = (0..kinds.len()).map(|_| Vec::new()).collect();
        for t in live {
            if plan_of_field[t.field] == usize::MAX {
                plan_of_field[t.field] = plans.len();
                plans.push(FieldPlan {
                    map: field_map[t.field],
                    offset: fields[t.field].offset,
                    factors: Vec::new(),
                });
            }
            let fp = &mut plans[plan_of_field[t.field]];
            let slot = match t.trial {
                Op::Value => Slot::Value,
                Op::Partial(k) => {
                    Slot::Partial(maps[fp.map].axes.iter().position(|&a| a == k).expect("axis registered"))
                }
            };
            let (factor, mult) = match &t.coef {
                Coefficient::Const(c) => {
                    let existing = fp.factors.iter().position(|f| f.coef.is_none() && f.op == t.trial);
                    let idx = existing.unwrap_or_else(|| {
                        fp.factors.push(Factor {
                            slot,
                            op: t.trial,
                            coef: None,
                        });
                        fp.factors.len() - 1
                    });
                    (idx, c * t.scale)
                }
                Coefficient::Field(f) => {
                    fp.factors.push(Factor {
                        slot,
                        op: t.trial,
                        coef: Some(f.clone()),
                    });
                    (fp.factors.len() - 1, t.scale)
                }
            };
            let kind = kinds.iter().position(|&k| k == t.rows).expect("filtered above");
            terms[kind].push(TermRef {
                field: plan_of_field[t.field],
                factor,
                test: t.test,
                mult,
            });
        }
        let mut lin: Vec<Vec<LinearTerm>> = (0..kinds.len()).map(|_| Vec::new()).collect();
        for t in linear {
            if let Some(kind) = kinds.iter().position(|&k| k == t.rows) {
                lin[kind].push((*t).clone());
            }
        }
        Plan {
            maps,
            fields: plans,
            terms,
            linear: lin,
        }
    }
}

struct Region<'r> {
    mesh: &'r StructuredMesh,
    reference: &'r ReferenceRule,
    scale: f64,
    rows_at_node: &'r [Vec<(usize, usize)>],
    columns: usize,
}

struct CellOut {
    rows: Vec<usize>,
    /// `columns × rows`, transposed so each row's entries are contiguous.
    contrib: DMatrix<f64>,
    rhs: Vec<f64>,
}

impl Region<'_> {
    fn cell(&self, plan: &Plan<'_>, cell: usize) -> Option<CellOut> {
        let mesh = self.mesh;
        let dim = mesh.dim();
        let h = mesh.h();
        let nodes = mesh.cell_nodes(cell);
        let mut local: Vec<(usize, usize, usize)> = Vec::new();
        for (a, &node) in nodes.iter().enumerate() {
            for &(row, kind) in &self.rows_at_node[node] {
                local.push((row, a, kind));
            }
        }
        if local.is_empty() {
            return None;
        }
        let nq = self.reference.len();
        let lower = mesh.cell_lower(cell);

        let mut values: Vec<Vec<f64>> = plan.maps.iter().map(|m| vec![0.0; m.map.len()]).collect();
        let mut partials: Vec<Vec<f64>> = plan
            .maps
            .iter()
            .map(|m| vec![0.0; m.map.len() * m.axes.len()])
            .collect();
        let mut tt: Vec<DMatrix<f64>> = plan
            .fields
            .iter()
            .map(|fp| DMatrix::zeros(plan.maps[fp.map].map.len(), nq * fp.factors.len()))
            .collect();
        let mut st: Vec<DMatrix<f64>> = plan
            .fields
            .iter()
            .map(|fp| DMatrix::zeros(nq * fp.factors.len(), local.len()))
            .collect();
        let mut rhs = vec![0.0; local.len()];
        let corners = nodes.len();
        let mut psi = vec![0.0; corners];
        let mut dpsi = vec![0.0; corners * dim];
        let mut x = vec![0.0; dim];

        for q in 0..nq {
            let xi = self.reference.point(q);
            for k in 0..dim {
                x[k] = lower[k] + xi[k] * h[k];
            }
            let w = self.reference.weights[q] * self.scale;
            for a in 0..corners {
                psi[a] = shape_value(a, xi);
                shape_grad(a, xi, h, &mut dpsi[a * dim..(a + 1) * dim]);
            }
            for (m, mp) in plan.maps.iter().enumerate() {
                match &mp.diff {
                    Some(d) => d.eval(&x, &mut values[m], &mut partials[m]),
                    None => mp.map.eval_into(&x, &mut values[m]),
                }
            }
            for (fi, fp) in plan.fields.iter().enumerate() {
                let n = plan.maps[fp.map].map.len();
                let nf = fp.factors.len();
                for (k, factor) in fp.factors.iter().enumerate() {
                    let c = w * factor.coef.as_ref().map_or(1.0, |f| f(&x));
                    let src = match factor.slot {
                        Slot::Value => &values[fp.map][..],
                        Slot::Partial(a) => &partials[fp.map][a * n..(a + 1) * n],
                    };
                    let mut col = tt[fi].column_mut(q * nf + k);
                    for (dst, &s) in col.iter_mut().zip(src) {
                        *dst = c * s;
                    }
                }
            }
            let test_op = |a: usize, op: Op| match op {
                Op::Value => psi[a],
                Op::Partial(k) => dpsi[a * dim + k],
            };
            for (r, &(_, a, kind)) in local.iter().enumerate() {
                for t in &plan.terms[kind] {
                    let nf = plan.fields[t.field].factors.len();
                    st[t.field][(q * nf + t.factor, r)] += t.mult * test_op(a, t.test);
                }
                for l in &plan.linear[kind] {
                    rhs[r] += w * l.scale * (l.data)(&x) * test_op(a, l.test);
                }
            }
        }

        let mut contrib = DMatrix::zeros(self.columns, local.len());
        for (fi, fp) in plan.fields.iter().enumerate() {
            let n = plan.maps[fp.map].map.len();
            let mut block = contrib.rows_mut(fp.offset, n);
            block.gemm(1.0, &tt[fi], &st[fi], 1.0);
        }
        Some(CellOut {
            rows: local.iter().map(|&(row, _, _)| row).collect(),
            contrib,
            rhs,
        })
    }
}

/// One row per point: `scale_c · Φ_j(x_k)` in each `(offset_c, scale_c)`
/// column block, right-hand side `data(x_k)`.
pub fn collocation_rows(
    label: BlockLabel,
    map: &dyn FeatureMap,
    blocks: &[(usize, f64)],
    columns: usize,
    points: &[&[f64]],
    data: &dyn Fn(&[f64]) -> f64,
) -> Result<Block> {
    let n = map.len();
    for &(offset, _) in blocks {
        if offset + n > columns {
            return Err(Error::invalid(format!(
                "collocation block at {offset} overruns {columns} columns"
            )));
        }
    }
    let mut matrix = DMatrix::zeros(points.len(), columns);
    let mut rhs = DVector::zeros(points.len());
    let mut phi = vec![0.0; n];
    for (r, x) in points.iter().enumerate() {
        if x.len() != map.input_dim() {
            return Err(Error::Dimension {
                expected: map.input_dim(),
                got: x.len(),
            });
        }
        map.eval_into(x, &mut phi);
        for &(offset, scale) in blocks {
            for j in 0..n {
                matrix[(r, offset + j)] = scale * phi[j];
            }
        }
        rhs[r] = data(x);
    }
    Block::new(label, matrix, rhs)
}

fn sample_points(samples: &[SampleSet]) -> Vec<&[f64]> {
    samples.iter().flat_map(|s| s.iter()).collect()
}

/// `B_kj = Φ_j(x_k)`, `G_k = g_D(x_k)` over every sample set.
pub fn assemble_dirichlet_rows(
    map: &dyn FeatureMap,
    offset: usize,
    columns: usize,
    samples: &[SampleSet],
    g_d: &dyn Fn(&[f64]) -> f64,
) -> Result<Block> {
    collocation_rows(
        BlockLabel::Dirichlet,
        map,
        &[(offset, 1.0)],
        columns,
        &sample_points(samples),
        g_d,
    )
}

/// `C_mj = Φ_j(x_m, 0)`, `H_m = h_0(x_m)`; samples must lie on `t = 0`.
pub fn assemble_initial_rows(
    map: &dyn FeatureMap,
    offset: usize,
    columns: usize,
    samples: &SampleSet,
    h0: &dyn Fn(&[f64]) -> f64,
) -> Result<Block> {
    let time_axis = map.input_dim().saturating_sub(1);
    if !samples.is_empty() && samples.face != Face::new(time_axis, false) {
        return Err(Error::invalid(format!(
            "initial rows need samples on the t = 0 face, got face {}",
            samples.face
        )));
    }
    collocation_rows(
        BlockLabel::Initial,
        map,
        &[(offset, 1.0)],
        columns,
        &samples.iter().collect::<Vec<_>>(),
        h0,
    )
}

/// `p·n = g_N` at samples on Neumann faces; `p_offsets[k]` is where the
/// coefficients of component `k` start.
pub fn assemble_normal_trace_rows(
    map: &dyn FeatureMap,
    p_offsets: &[usize],
    columns: usize,
    samples: &[SampleSet],
    g_n: &dyn Fn(&[f64]) -> f64,
) -> Result<Block> {
    let mut out: Option<Block> = None;
    for set in samples {
        let axis = set.face.axis;
        if axis >= p_offsets.len() {
            return Err(Error::Dimension {
                expected: p_offsets.len(),
                got: axis + 1,
            });
        }
        let points: Vec<&[f64]> = set.iter().collect();
        let block = collocation_rows(
            BlockLabel::NormalTrace,
            map,
            &[(p_offsets[axis], set.face.sign())],
            columns,
            &points,
            g_n,
        )?;
        out = Some(match out {
            None => block,
            Some(prev) => concat(prev, block)?,
        });
    }
    Ok(out.unwrap_or_else(|| Block::empty(BlockLabel::NormalTrace, columns)))
}

fn concat(a: Block, b: Block) -> Result<Block> {
    let rows = a.rows() + b.rows();
    let mut matrix = DMatrix::zeros(rows, a.columns());
    matrix.rows_mut(0, a.rows()).copy_from(&a.matrix);
    matrix.rows_mut(a.rows(), b.rows()).copy_from(&b.matrix);
    let rhs = DVector::from_iterator(rows, a.rhs.iter().chain(b.rhs.iter()).copied());
    Block::new(a.label, matrix, rhs)
}

fn check_domain(mesh: &StructuredMesh, expected: &BoxDomain) -> Result<()> {
    let got = mesh.domain();
    let same = got.dim() == expected.dim()
        && (0..got.dim())
            .all(|k| (got.lo[k] - expected.lo[k]).abs() < 1e-12 && (got.hi[k] - expected.hi[k]).abs() < 1e-12);
    if same {
        Ok(())
    } else {
        Err(Error::Mesh(format!(
            "mesh covers {:?}..{:?}, problem needs {:?}..{:?}",
            got.lo, got.hi, expected.lo, expected.hi
        )))
    }
}

fn check_vanish(mesh: &StructuredMesh, tests: &[TestFunction], faces: &[Face], why: &str) -> Result<()> {
    for t in tests {
        if let Some(face) = faces.iter().find(|&&f| mesh.node_on_face(t.node, f)) {
            return Err(Error::invalid(format!(
                "test function at node {} does not vanish on face {face} ({why})",
                t.node
            )));
        }
    }
    Ok(())
}

fn check_scalar(tests: &[TestFunction]) -> Result<()> {
    if tests.iter().any(|t| t.kind != TestKind::Scalar) {
        return Err(Error::invalid("this weak form takes scalar test functions"));
    }
    Ok(())
}

fn diffusion_terms(problem: &ProblemSpec, spatial: usize) -> Vec<BilinearTerm> {
    let mut terms: Vec<BilinearTerm> = (0..spatial)
        .map(|k| BilinearTerm::new(TestKind::Scalar, 0, Op::Partial(k), Op::Partial(k)).coef(problem.alpha.clone()))
        .collect();
    if !problem.delta.is_zero() {
        terms.push(BilinearTerm::new(TestKind::Scalar, 0, Op::Value, Op::Value).coef(problem.delta.clone()));
    }
    terms
}

fn neumann_terms(problem: &ProblemSpec, rows: TestKind) -> Vec<(Face, LinearTerm)> {
    problem
        .partition
        .neumann
        .iter()
        .map(|&f| (f, LinearTerm::new(rows, Op::Value, problem.g_n.clone())))
        .collect()
}

/// `a(Φ_j, v_i) = ∫ α∇Φ_j·∇v_i + δΦ_j v_i`, `ℓ(v_i) = ∫ f v_i + ∫_{Γ_N} g_N v_i`.
pub fn assemble_elliptic(
    problem: &ProblemSpec,
    basis: &dyn FeatureMap,
    tests: &[TestFunction],
    assembler: &Assembler<'_>,
) -> Result<Block> {
    let mesh = assembler.mesh();
    check_domain(mesh, &problem.domain)?;
    check_scalar(tests)?;
    check_vanish(
        mesh,
        tests,
        &problem.partition.dirichlet,
        "tests must vanish on the Dirichlet boundary",
    )?;
    let form = WeakForm {
        volume: diffusion_terms(problem, problem.spatial_dim()),
        source: vec![LinearTerm::new(TestKind::Scalar, Op::Value, problem.f.clone())],
        face_bilinear: Vec::new(),
        face_linear: neumann_terms(problem, TestKind::Scalar),
    };
    assembler.weak_form(&[Field { map: basis, offset: 0 }], basis.len(), tests, &form)
}

fn space_time_checks(problem: &ProblemSpec, mesh: &StructuredMesh, basis: &dyn FeatureMap) -> Result<usize> {
    if !problem.kind.is_time_dependent() {
        return Err(Error::Problem(format!("{} is not a space-time problem", problem.kind)));
    }
    check_domain(mesh, &problem.assembly_domain()?)?;
    let d = problem.spatial_dim();
    if basis.input_dim() != d + 1 {
        return Err(Error::Dimension {
            expected: d + 1,
            got: basis.input_dim(),
        });
    }
    Ok(d)
}

/// `∫∫ Φ_t v + α∇Φ·∇v = ∫∫ f v + ∫∫_{Γ_N} g_N v`; tests vanish on `Γ_D × I`
/// and on `t = 0`.
pub fn assemble_heat(
    problem: &ProblemSpec,
    basis: &dyn FeatureMap,
    tests: &[TestFunction],
    assembler: &Assembler<'_>,
) -> Result<Block> {
    let mesh = assembler.mesh();
    let d = space_time_checks(problem, mesh, basis)?;
    check_scalar(tests)?;
    let mut faces = problem.partition.dirichlet.clone();
    faces.push(Face::new(d, false));
    check_vanish(
        mesh,
        tests,
        &faces,
        "heat tests vanish on the Dirichlet boundary and at t = 0",
    )?;
    let mut volume = diffusion_terms(problem, d);
    volume.push(BilinearTerm::new(TestKind::Scalar, 0, Op::Partial(d), Op::Value));
    let form = WeakForm {
        volume,
        source: vec![LinearTerm::new(TestKind::Scalar, Op::Value, problem.f.clone())],
        face_bilinear: Vec::new(),
        face_linear: neumann_terms(problem, TestKind::Scalar),
    };
    assembler.weak_form(&[Field { map: basis, offset: 0 }], basis.len(), tests, &form)
}

/// `∫∫ -Φ_t v_t + α∇Φ·∇v + ∫_Ω Φ_t(·,T) v(·,T)
///   = ∫∫ f v + ∫∫_{Γ_N} g_N v + ∫_Ω w_0 v(·,0)`; tests vanish on `Γ_D × I`.
pub fn assemble_wave(
    problem: &ProblemSpec,
    basis: &dyn FeatureMap,
    tests: &[TestFunction],
    assembler: &Assembler<'_>,
) -> Result<Block> {
    let mesh = assembler.mesh();
    let d = space_time_checks(problem, mesh, basis)?;
    check_scalar(tests)?;
    check_vanish(
        mesh,
        tests,
        &problem.partition.dirichlet,
        "wave tests vanish on the Dirichlet boundary",
    )?;
    let w0 = problem
        .w0
        .clone()
        .ok_or_else(|| Error::Problem("wave problem needs initial velocity w0".into()))?;
    let mut volume = diffusion_terms(problem, d);
    volume.push(BilinearTerm::new(TestKind::Scalar, 0, Op::Partial(d), Op::Partial(d)).scale(-1.0));
    let mut face_linear = neumann_terms(problem, TestKind::Scalar);
    face_linear.push((Face::new(d, false), LinearTerm::new(TestKind::Scalar, Op::Value, w0)));
    let form = WeakForm {
        volume,
        source: vec![LinearTerm::new(TestKind::Scalar, Op::Value, problem.f.clone())],
        face_bilinear: vec![(
            Face::new(d, true),
            BilinearTerm::new(TestKind::Scalar, 0, Op::Partial(d), Op::Value),
        )],
        face_linear,
    };
    assembler.weak_form(&[Field { map: basis, offset: 0 }], basis.len(), tests, &form)
}

/// Column offsets `[p¹, p², u]` for a mixed system.
pub fn mixed_offsets(p_len: usize) -> [usize; 3] {
    [0, p_len, 2 * p_len]
}

/// Weak-form rows of mixed formulation `form` for `-Δu = f`, `p = ∇u`.
/// Rows come as the vector tests (component 0, then 1) followed by the
/// scalar tests; columns are `[p¹ | p² | u]`.
pub fn assemble_mixed(
    problem: &ProblemSpec,
    form: u8,
    basis_p: &dyn FeatureMap,
    basis_u: &dyn FeatureMap,
    vector_tests: &[TestFunction],
    scalar_tests: &[TestFunction],
    assembler: &Assembler<'_>,
) -> Result<Block> {
    if !(1..=4).contains(&form) {
        return Err(Error::invalid(format!("mixed form must be 1..=4, got {form}")));
    }
    let mesh = assembler.mesh();
    check_domain(mesh, &problem.domain)?;
    if mesh.dim() != 2 {
        return Err(Error::Unsupported("mixed formulations are 2D only".into()));
    }
    check_scalar(scalar_tests)?;
    if vector_tests.iter().any(|t| t.kind == TestKind::Scalar) {
        return Err(Error::invalid("mixed q-rows take vector test functions"));
    }
    let hdiv = matches!(form, 2 | 4);
    if hdiv {
        if vector_tests.is_empty() {
            return Err(Error::invalid(format!("mixed form {form} needs H(div) test functions")));
        }
        for t in vector_tests {
            if let TestKind::VectorComponent(c) = t.kind {
                let blocked = problem.partition.neumann.iter().filter(|f| f.axis == c);
                if let Some(f) = blocked.into_iter().find(|&&f| mesh.node_on_face(t.node, f)) {
                    return Err(Error::invalid(format!(
                        "q-test at node {} has nonzero normal trace on Neumann face {f}",
                        t.node
                    )));
                }
            }
        }
    }
    if matches!(form, 1 | 4) {
        check_vanish(
            mesh,
            scalar_tests,
            &problem.partition.dirichlet,
            "v-tests vanish on the Dirichlet boundary",
        )?;
    }

    let n = basis_p.len();
    let [p1, p2, u] = [0usize, 1, 2];
    let fields = {
        let off = mixed_offsets(n);
        [
            Field {
                map: basis_p,
                offset: off[0],
            },
            Field {
                map: basis_p,
                offset: off[1],
            },
            Field {
                map: basis_u,
                offset: off[2],
            },
        ]
    };
    let columns = 2 * n + basis_u.len();
    let p = [p1, p2];
    let mut wf = WeakForm::default();
    for c in 0..2 {
        let q = TestKind::VectorComponent(c);
        wf.volume.push(BilinearTerm::new(q, p[c], Op::Value, Op::Value));
        if hdiv {
            // ∫ p·q + ∫ u div q = ∫_{Γ_D} g_D q·n
            wf.volume.push(BilinearTerm::new(q, u, Op::Value, Op::Partial(c)));
            for &f in problem.partition.dirichlet.iter().filter(|f| f.axis == c) {
                wf.face_linear
                    .push((f, LinearTerm::new(q, Op::Value, problem.g_d.clone()).scale(f.sign())));
            }
        } else {
            // ∫ p·q - ∫ ∇u·q = 0
            wf.volume
                .push(BilinearTerm::new(q, u, Op::Partial(c), Op::Value).scale(-1.0));
        }
    }
    let v = TestKind::Scalar;
    wf.source.push(LinearTerm::new(v, Op::Value, problem.f.clone()));
    if matches!(form, 1 | 4) {
        // ∫ p·∇v = ∫ f v + ∫_{Γ_N} g_N v
        for c in 0..2 {
            wf.volume.push(BilinearTerm::new(v, p[c], Op::Value, Op::Partial(c)));
        }
        wf.face_linear.extend(neumann_terms(problem, v));
    } else {
        // -∫ div p v = ∫ f v
        for c in 0..2 {
            wf.volume
                .push(BilinearTerm::new(v, p[c], Op::Partial(c), Op::Value).scale(-1.0));
        }
    }
    let tests: Vec<TestFunction> = vector_tests.iter().chain(scalar_tests).copied().collect();
    assembler.weak_form(&fields, columns, &tests, &wf)
}

/// Knobs for [`build_system`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemOptions {
    /// Gauss points per axis and cell; 5 for stationary kinds, 10 in space-time.
    pub quad_points: Option<usize>,
    pub fd_step: f64,
    /// Collocation samples per Dirichlet face (lateral faces in space-time).
    pub boundary_samples: usize,
    /// Samples on `t = 0` for the initial rows.
    pub initial_samples: usize,
    /// Samples per Neumann face for mixed normal-trace rows.
    pub normal_trace_samples: usize,
    /// Keep only this many weak-form tests (non-mixed kinds).
    pub test_count: Option<usize>,
    pub test_subset: SubsetMode,
    /// Space-time tests vanish at `t = 0`; defaults to true for heat, false for wave.
    pub tests_vanish_at_t0: Option<bool>,
    /// Space-time tests vanish at `t = T`.
    pub tests_vanish_at_t_end: bool,
}

impl Default for SystemOptions {
    fn default() -> Self {
        SystemOptions {
            quad_points: None,
            fd_step: crate::feature_basis::DEFAULT_FD_STEP,
            boundary_samples: 100,
            initial_samples: 100,
            normal_trace_samples: 100,
            test_count: None,
            test_subset: SubsetMode::Prefix,
            tests_vanish_at_t0: None,
            tests_vanish_at_t_end: false,
        }
    }
}

/// Trial networks: `u`, and `p` for mixed problems.
#[derive(Clone, Copy)]
pub struct Trial<'a> {
    pub u: &'a dyn FeatureMap,
    pub p: Option<&'a dyn FeatureMap>,
}

/// The test functions a problem kind uses on `mesh` under `opts`, in row order.
pub fn problem_tests(
    problem: &ProblemSpec,
    mesh: &StructuredMesh,
    opts: &SystemOptions,
    seed: u64,
) -> Result<Vec<TestFunction>> {
    let d = problem.spatial_dim();
    let subset = |tests: Vec<TestFunction>| match opts.test_count {
        Some(nv) => select_subset(&tests, nv, opts.test_subset, seed),
        None => tests,
    };
    Ok(match problem.kind {
        ProblemKind::Poisson | ProblemKind::DiffusionReaction => subset(scalar_test_basis(
            mesh,
            &problem.partition,
            &Constraint::VanishOnDirichlet,
        )),
        ProblemKind::Heat | ProblemKind::Wave => {
            let mut faces = problem.partition.dirichlet.clone();
            let at_t0 = opts.tests_vanish_at_t0.unwrap_or(problem.kind == ProblemKind::Heat);
            if at_t0 {
                faces.push(Face::new(d, false));
            }
            if opts.tests_vanish_at_t_end {
                faces.push(Face::new(d, true));
            }
            subset(scalar_test_basis(
                mesh,
                &problem.partition,
                &Constraint::VanishOn(faces),
            ))
        }
        ProblemKind::MixedPoisson(form) => {
            if opts.test_count.is_some() {
                return Err(Error::Unsupported(
                    "test_count is not supported for mixed formulations".into(),
                ));
            }
            let mut tests = match form {
                2 | 4 => hdiv_test_basis(mesh, &problem.partition)?,
                _ => vector_test_basis(mesh),
            };
            let constraint = if matches!(form, 1 | 4) {
                Constraint::VanishOnDirichlet
            } else {
                Constraint::None
            };
            tests.extend(scalar_test_basis(mesh, &problem.partition, &constraint));
            tests
        }
    })
}

/// Samples `count` points on each face, seeded per face.
pub fn face_samples(domain: &BoxDomain, faces: &[Face], count: usize, seed: u64) -> Result<Vec<SampleSet>> {
    faces.iter().map(|&f| sample_uniform(domain, f, count, seed)).collect()
}

/// Full stacked system for `problem` on `mesh`.
pub fn build_system(
    problem: &ProblemSpec,
    mesh: &StructuredMesh,
    trial: Trial<'_>,
    opts: &SystemOptions,
    seed: u64,
) -> Result<StackedSystem> {
    let points = opts
        .quad_points
        .unwrap_or(if problem.kind.is_time_dependent() { 10 } else { 5 });
    let assembler = Assembler::new(mesh, points, opts.fd_step)?;
    let tests = problem_tests(problem, mesh, opts, seed)?;
    let box_ = problem.assembly_domain()?;
    let dirichlet = &problem.partition.dirichlet;
    let mut diagnostics = Vec::new();
    if !dirichlet.is_empty() && opts.boundary_samples == 0 {
        diagnostics.push("Dirichlet boundary present but no collocation samples requested".to_string());
    }
    let (weak, columns, u_offset) = match problem.kind {
        ProblemKind::Poisson | ProblemKind::DiffusionReaction => (
            assemble_elliptic(problem, trial.u, &tests, &assembler)?,
            trial.u.len(),
            0,
        ),
        ProblemKind::Heat => (assemble_heat(problem, trial.u, &tests, &assembler)?, trial.u.len(), 0),
        ProblemKind::Wave => (assemble_wave(problem, trial.u, &tests, &assembler)?, trial.u.len(), 0),
        ProblemKind::MixedPoisson(form) => {
            let p = trial
                .p
                .ok_or_else(|| Error::invalid("mixed formulation needs a p network"))?;
            let split = tests
                .iter()
                .position(|t| t.kind == TestKind::Scalar)
                .unwrap_or(tests.len());
            let block = assemble_mixed(problem, form, p, trial.u, &tests[..split], &tests[split..], &assembler)?;
            (block, 2 * p.len() + trial.u.len(), 2 * p.len())
        }
    };
    let mut system = StackedSystem::new(columns);
    system.diagnostics = diagnostics;
    system.push(weak)?;
    let wants_dirichlet = match problem.kind {
        ProblemKind::MixedPoisson(form) => matches!(form, 1 | 3),
        _ => true,
    };
    if wants_dirichlet {
        let samples = face_samples(&box_, dirichlet, opts.boundary_samples, seed)?;
        system.push(assemble_dirichlet_rows(
            trial.u,
            u_offset,
            columns,
            &samples,
            &*problem.g_d,
        )?)?;
    }
    if let ProblemKind::MixedPoisson(form) = problem.kind {
        if matches!(form, 2 | 3) {
            let p = trial.p.expect("checked above");
            let samples = face_samples(&box_, &problem.partition.neumann, opts.normal_trace_samples, seed)?;
            let off = mixed_offsets(p.len());
            system.push(assemble_normal_trace_rows(
                p,
                &off[..2],
                columns,
                &samples,
                &*problem.g_n,
            )?)?;
        }
    }
    if problem.kind.is_time_dependent() {
        let d = problem.spatial_dim();
        let h0 = problem
            .h0
            .clone()
            .ok_or_else(|| Error::Problem("missing initial data h0".into()))?;
        let samples = sample_uniform(&box_, Face::new(d, false), opts.initial_samples, seed)?;
        system.push(assemble_initial_rows(trial.u, u_offset, columns, &samples, &*h0)?)?;
    }
    Ok(system)
}
