//! Uniform box meshes and nodal multilinear test functions.
//!
//! Nodes and cells are numbered lexicographically with the last axis varying
//! fastest. Within a cell, local node `a` sits at offset bit `k` of `a` along
//! axis `k`, so local node 0 is the lower corner.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

const AXIS_NAMES: [char; 3] = ['x', 'y', 't'];

/// An axis-aligned face of a box: `axis` held at its lower or upper bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Face {
    pub axis: usize,
    pub upper: bool,
}

impl Face {
    pub const fn new(axis: usize, upper: bool) -> Self {
        Face { axis, upper }
    }

    /// Outward normal component along `self.axis`.
    pub fn sign(&self) -> f64 {
        if self.upper {
            1.0
        } else {
            -1.0
        }
    }

    /// Outward normal component along axis `k`.
    pub fn normal(&self, k: usize) -> f64 {
        if k == self.axis {
            self.sign()
        } else {
            0.0
        }
    }

    /// All `2 * dim` faces of a `dim`-dimensional box.
    pub fn all(dim: usize) -> Vec<Face> {
        (0..dim)
            .flat_map(|axis| [Face::new(axis, false), Face::new(axis, true)])
            .collect()
    }
}

impl fmt::Display for Face {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = AXIS_NAMES.get(self.axis).copied().unwrap_or('?');
        write!(f, "{name}{}", u8::from(self.upper))
    }
}

impl FromStr for Face {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut chars = s.trim().chars();
        let axis = match chars.next() {
            Some('x') => 0,
            Some('y') => 1,
            Some('t') | Some('z') => 2,
            _ => return Err(Error::Mesh(format!("unknown face `{s}`"))),
        };
        let upper = match (chars.next(), chars.next()) {
            (Some('0'), None) => false,
            (Some('1'), None) => true,
            _ => return Err(Error::Mesh(format!("unknown face `{s}`"))),
        };
        Ok(Face { axis, upper })
    }
}

impl Serialize for Face {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Face {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::Mesh("box bounds must have equal, nonzero length".into()));
        }
        if let Some(k) = (0..lo.len()).find(|&k| !(lo[k].is_finite() && hi[k].is_finite() && hi[k] > lo[k])) {
            return Err(Error::Mesh(format!(
                "axis {k}: need lo < hi, got [{}, {}]",
                lo[k], hi[k]
            )));
        }
        Ok(BoxDomain { lo, hi })
    }

    pub fn unit(dim: usize) -> Self {
        BoxDomain {
            lo: vec![0.0; dim],
            hi: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn extent(&self, k: usize) -> f64 {
        self.hi[k] - self.lo[k]
    }

    pub fn measure(&self) -> f64 {
        (0..self.dim()).map(|k| self.extent(k)).product()
    }

    pub fn face_measure(&self, face: Face) -> f64 {
        (0..self.dim())
            .filter(|&k| k != face.axis)
            .map(|k| self.extent(k))
            .product()
    }

    /// Appends a time axis `[0, t_end]`.
    pub fn with_time(&self, t_end: f64) -> Result<Self> {
        let mut lo = self.lo.clone();
        let mut hi = self.hi.clone();
        lo.push(0.0);
        hi.push(t_end);
        BoxDomain::new(lo, hi)
    }

    pub fn face_coord(&self, face: Face) -> f64 {
        if face.upper {
            self.hi[face.axis]
        } else {
            self.lo[face.axis]
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuredMesh {
    domain: BoxDomain,
    h: Vec<f64>,
    cells: Vec<usize>,
}

impl StructuredMesh {
    /// Same cell width on every axis.
    pub fn uniform(domain: &BoxDomain, h: f64) -> Result<Self> {
        Self::new(domain, &vec![h; domain.dim()])
    }

    pub fn new(domain: &BoxDomain, h: &[f64]) -> Result<Self> {
        if h.len() != domain.dim() {
            return Err(Error::Dimension {
                expected: domain.dim(),
                got: h.len(),
            });
        }
        let mut cells = Vec::with_capacity(h.len());
        for (k, &hk) in h.iter().enumerate() {
            if !(hk.is_finite() && hk > 0.0) {
                return Err(Error::Mesh(format!("axis {k}: cell width must be positive, got {hk}")));
            }
            let ratio = domain.extent(k) / hk;
            let n = ratio.round();
            if n < 1.0 || (ratio - n).abs() > 1e-12 * ratio.max(1.0) {
                return Err(Error::Mesh(format!(
                    "axis {k}: h = {hk} does not divide the extent {}",
                    domain.extent(k)
                )));
            }
            cells.push(n as usize);
        }
        let h = (0..domain.dim()).map(|k| domain.extent(k) / cells[k] as f64).collect();
        Ok(StructuredMesh {
            domain: domain.clone(),
            h,
            cells,
        })
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.cells.len()
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    pub fn cells_per_axis(&self) -> &[usize] {
        &self.cells
    }

    pub fn nodes_per_axis(&self, k: usize) -> usize {
        self.cells[k] + 1
    }

    pub fn node_count(&self) -> usize {
        self.cells.iter().map(|c| c + 1).product()
    }

    pub fn cell_count(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.iter().product()
    }

    pub fn node_multi(&self, mut index: usize) -> Vec<usize> {
        let mut multi = vec![0; self.dim()];
        for k in (0..self.dim()).rev() {
            let n = self.cells[k] + 1;
            multi[k] = index % n;
            index /= n;
        }
        multi
    }

    pub fn node_index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.cells).fold(0, |acc, (&i, &c)| acc * (c + 1) + i)
    }

    pub fn node_coords(&self, index: usize) -> Vec<f64> {
        self.node_multi(index)
            .iter()
            .enumerate()
            .map(|(k, &i)| self.domain.lo[k] + i as f64 * self.h[k])
            .collect()
    }

    pub fn cell_multi(&self, mut index: usize) -> Vec<usize> {
        let mut multi = vec![0; self.dim()];
        for k in (0..self.dim()).rev() {
            multi[k] = index % self.cells[k];
            index /= self.cells[k];
        }
        multi
    }

    pub fn cell_index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.cells).fold(0, |acc, (&i, &c)| acc * c + i)
    }

    pub fn cell_lower(&self, cell: usize) -> Vec<f64> {
        self.cell_multi(cell)
            .iter()
            .enumerate()
            .map(|(k, &i)| self.domain.lo[k] + i as f64 * self.h[k])
            .collect()
    }

    /// Global node numbers of the `2^dim` corners of `cell`, in local order.
    pub fn cell_nodes(&self, cell: usize) -> Vec<usize> {
        let base = self.cell_multi(cell);
        let dim = self.dim();
        (0..1usize << dim)
            .map(|a| {
                let corner: Vec<usize> = (0..dim).map(|k| base[k] + ((a >> k) & 1)).collect();
                self.node_index(&corner)
            })
            .collect()
    }

    /// Cells adjacent to `face`, in increasing order.
    pub fn boundary_cells(&self, face: Face) -> Vec<usize> {
        let layer = if face.upper { self.cells[face.axis] - 1 } else { 0 };
        (0..self.cell_count())
            .filter(|&c| self.cell_multi(c)[face.axis] == layer)
            .collect()
    }

    pub fn node_on_face(&self, node: usize, face: Face) -> bool {
        let i = self.node_multi(node)[face.axis];
        if face.upper {
            i == self.cells[face.axis]
        } else {
            i == 0
        }
    }

    /// Cell containing `x` (upper boundaries belong to the last cell), or
    /// `None` outside the box.
    pub fn locate(&self, x: &[f64]) -> Option<Vec<usize>> {
        let mut multi = Vec::with_capacity(self.dim());
        for k in 0..self.dim() {
            let s = (x[k] - self.domain.lo[k]) / self.h[k];
            if !(s >= -1e-12 && s <= self.cells[k] as f64 + 1e-12) {
                return None;
            }
            multi.push((s.floor().max(0.0) as usize).min(self.cells[k] - 1));
        }
        Some(multi)
    }
}

/// Split of the spatial boundary into Dirichlet and Neumann faces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPartition {
    pub dirichlet: Vec<Face>,
    #[serde(default)]
    pub neumann: Vec<Face>,
}

impl BoundaryPartition {
    pub fn all_dirichlet(spatial_dim: usize) -> Self {
        BoundaryPartition {
            dirichlet: Face::all(spatial_dim),
            neumann: Vec::new(),
        }
    }

    pub fn validate(&self, spatial_dim: usize) -> Result<()> {
        for face in self.dirichlet.iter().chain(&self.neumann) {
            if face.axis >= spatial_dim {
                return Err(Error::Mesh(format!("face {face} is not a spatial boundary face")));
            }
        }
        for face in Face::all(spatial_dim) {
            let d = self.dirichlet.contains(&face);
            let n = self.neumann.contains(&face);
            if d == n {
                let why = if d {
                    "both Dirichlet and Neumann"
                } else {
                    "neither Dirichlet nor Neumann"
                };
                return Err(Error::Mesh(format!("face {face} is {why}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestKind {
    Scalar,
    /// A vector field whose only nonzero slot is `axis`.
    VectorComponent(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TestFunction {
    pub node: usize,
    pub kind: TestKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Constraint {
    None,
    VanishOnDirichlet,
    /// Vanish on an explicit face list (space-time tests also drop `t0`).
    VanishOn(Vec<Face>),
}

pub fn scalar_test_basis(
    mesh: &StructuredMesh,
    partition: &BoundaryPartition,
    constraint: &Constraint,
) -> Vec<TestFunction> {
    let faces: &[Face] = match constraint {
        Constraint::None => &[],
        Constraint::VanishOnDirichlet => &partition.dirichlet,
        Constraint::VanishOn(faces) => faces,
    };
    (0..mesh.node_count())
        .filter(|&n| !faces.iter().any(|&f| mesh.node_on_face(n, f)))
        .map(|node| TestFunction {
            node,
            kind: TestKind::Scalar,
        })
        .collect()
}

/// Component-wise multilinear fields with zero normal trace on the Neumann
/// faces: the axis-`k` component drops every node on a Neumann face whose
/// normal is along `k`.
pub fn hdiv_test_basis(mesh: &StructuredMesh, partition: &BoundaryPartition) -> Result<Vec<TestFunction>> {
    if mesh.dim() != 2 {
        return Err(Error::Unsupported(format!(
            "H(div) test fields are only built in 2D, mesh is {}D",
            mesh.dim()
        )));
    }
    let mut out = Vec::new();
    for axis in 0..2 {
        let blocked: Vec<Face> = partition.neumann.iter().copied().filter(|f| f.axis == axis).collect();
        out.extend(
            (0..mesh.node_count())
                .filter(|&n| !blocked.iter().any(|&f| mesh.node_on_face(n, f)))
                .map(|node| TestFunction {
                    node,
                    kind: TestKind::VectorComponent(axis),
                }),
        );
    }
    Ok(out)
}

/// All-node vector components, one block per axis.
pub fn vector_test_basis(mesh: &StructuredMesh) -> Vec<TestFunction> {
    (0..mesh.dim())
        .flat_map(|axis| {
            (0..mesh.node_count()).map(move |node| TestFunction {
                node,
                kind: TestKind::VectorComponent(axis),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetMode {
    /// The first `nv` functions in lexicographic order.
    #[default]
    Prefix,
    /// `nv` functions drawn without replacement, kept in lexicographic order.
    Random,
}

pub fn select_subset(tests: &[TestFunction], nv: usize, mode: SubsetMode, seed: u64) -> Vec<TestFunction> {
    if nv >= tests.len() {
        return tests.to_vec();
    }
    match mode {
        SubsetMode::Prefix => tests[..nv].to_vec(),
        SubsetMode::Random => {
            let mut rng = rng::stream(seed, rng::streams::TEST_SUBSET);
            let mut idx: Vec<usize> = (0..tests.len()).collect();
            for i in 0..nv {
                let j = i + (rng::unit(&mut rng) * (tests.len() - i) as f64) as usize;
                idx.swap(i, j.min(tests.len() - 1));
            }
            let mut chosen = idx[..nv].to_vec();
            chosen.sort_unstable();
            chosen.into_iter().map(|i| tests[i]).collect()
        }
    }
}

/// Value of local shape function `a` at reference point `xi ∈ [0,1]^dim`.
#[inline]
pub(crate) fn shape_value(a: usize, xi: &[f64]) -> f64 {
    xi.iter()
        .enumerate()
        .map(|(k, &s)| if (a >> k) & 1 == 1 { s } else { 1.0 - s })
        .product()
}

/// Physical gradient of local shape function `a`; `h` is the cell width.
#[inline]
pub(crate) fn shape_grad(a: usize, xi: &[f64], h: &[f64], out: &mut [f64]) {
    for k in 0..xi.len() {
        let mut g = if (a >> k) & 1 == 1 { 1.0 / h[k] } else { -1.0 / h[k] };
        for (m, &s) in xi.iter().enumerate() {
            if m != k {
                g *= if (a >> m) & 1 == 1 { s } else { 1.0 - s };
            }
        }
        out[k] = g;
    }
}

/// Local slot of `node` in the cell containing `x`, with the reference point.
fn local_slot(mesh: &StructuredMesh, node: usize, x: &[f64]) -> Option<(usize, Vec<f64>)> {
    let cell = mesh.locate(x)?;
    let node = mesh.node_multi(node);
    let mut a = 0;
    let mut xi = Vec::with_capacity(mesh.dim());
    for k in 0..mesh.dim() {
        match node[k].checked_sub(cell[k]) {
            Some(0) => {}
            Some(1) => a |= 1 << k,
            _ => return None,
        }
        let lower = mesh.domain.lo[k] + cell[k] as f64 * mesh.h[k];
        xi.push(((x[k] - lower) / mesh.h[k]).clamp(0.0, 1.0));
    }
    Some((a, xi))
}

/// Scalar profile value of `f` at `x`; zero outside its support.
pub fn eval_test(mesh: &StructuredMesh, f: &TestFunction, x: &[f64]) -> f64 {
    local_slot(mesh, f.node, x).map_or(0.0, |(a, xi)| shape_value(a, &xi))
}

/// Gradient of the scalar profile, taken from the cell that contains `x`.
pub fn eval_test_grad(mesh: &StructuredMesh, f: &TestFunction, x: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; mesh.dim()];
    if let Some((a, xi)) = local_slot(mesh, f.node, x) {
        shape_grad(a, &xi, &mesh.h, &mut g);
    }
    g
}

pub fn eval_test_div(mesh: &StructuredMesh, f: &TestFunction, x: &[f64]) -> Result<f64> {
    match f.kind {
        TestKind::VectorComponent(axis) => Ok(eval_test_grad(mesh, f, x)[axis]),
        TestKind::Scalar => Err(Error::invalid("divergence of a scalar test function")),
    }
}
