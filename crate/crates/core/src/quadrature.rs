//! Tensor-product Gauss-Legendre rules and seeded boundary samplers.

use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;

use crate::error::{Error, Result};
use crate::mesh::{BoxDomain, Face, StructuredMesh};
use crate::rng;

pub const MAX_GAUSS_POINTS: usize = 64;

/// Points (flattened, `dim` coordinates each) with positive weights.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
    exact_degree: usize,
}

impl QuadratureRule {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Per-axis polynomial degree integrated exactly (`2n - 1`).
    pub fn exact_degree(&self) -> usize {
        self.exact_degree
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.points
            .chunks_exact(self.dim.max(1))
            .zip(self.weights.iter().copied())
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.iter().map(|(x, w)| w * f(x)).sum()
    }
}

/// Nodes (ascending) and weights of the `n`-point rule on `[-1, 1]`.
fn legendre_nodes(n: usize) -> Result<Vec<(f64, f64)>> {
    if !(1..=MAX_GAUSS_POINTS).contains(&n) {
        return Err(Error::invalid(format!(
            "Gauss-Legendre point count must be in 1..={MAX_GAUSS_POINTS}, got {n}"
        )));
    }
    let rule = GaussLegendre::new(NonZeroUsize::new(n).expect("checked above"));
    let mut pairs = rule.as_node_weight_pairs().to_vec();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(pairs)
}

pub fn gauss_legendre_1d(n: usize, a: f64, b: f64) -> Result<QuadratureRule> {
    if !(a.is_finite() && b.is_finite() && b > a) {
        return Err(Error::invalid(format!("bad interval [{a}, {b}]")));
    }
    let pairs = legendre_nodes(n)?;
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    Ok(QuadratureRule {
        dim: 1,
        points: pairs.iter().map(|&(x, _)| mid + half * x).collect(),
        weights: pairs.iter().map(|&(_, w)| half * w).collect(),
        exact_degree: 2 * n - 1,
    })
}

/// Tensor rule on the unit reference cell `[0,1]^dim`, weights summing to 1.
/// `fixed` pins one axis to 0 or 1 for face integrals.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceRule {
    pub dim: usize,
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl ReferenceRule {
    pub fn cell(dim: usize, n: usize) -> Result<Self> {
        Self::build(dim, n, None)
    }

    pub fn face(dim: usize, n: usize, face: Face) -> Result<Self> {
        if face.axis >= dim {
            return Err(Error::Dimension {
                expected: dim,
                got: face.axis + 1,
            });
        }
        Self::build(dim, n, Some(face))
    }

    fn build(dim: usize, n: usize, fixed: Option<Face>) -> Result<Self> {
        let line = gauss_legendre_1d(n, 0.0, 1.0)?;
        let free: Vec<usize> = (0..dim).filter(|&k| fixed.map_or(true, |f| f.axis != k)).collect();
        let count = n.pow(free.len() as u32);
        let mut points = Vec::with_capacity(count * dim);
        let mut weights = Vec::with_capacity(count);
        // last free axis fastest, matching the mesh numbering
        for flat in 0..count {
            let mut rem = flat;
            let mut idx = vec![0; free.len()];
            for slot in (0..free.len()).rev() {
                idx[slot] = rem % n;
                rem /= n;
            }
            let mut w = 1.0;
            let mut p = vec![0.0; dim];
            for (slot, &k) in free.iter().enumerate() {
                p[k] = line.points[idx[slot]];
                w *= line.weights[idx[slot]];
            }
            if let Some(f) = fixed {
                p[f.axis] = if f.upper { 1.0 } else { 0.0 };
            }
            points.extend(p);
            weights.push(w);
        }
        Ok(ReferenceRule { dim, points, weights })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, q: usize) -> &[f64] {
        &self.points[q * self.dim..(q + 1) * self.dim]
    }
}

fn map_reference(mesh: &StructuredMesh, cell: usize, reference: &ReferenceRule, scale: f64, out: &mut QuadratureRule) {
    let lower = mesh.cell_lower(cell);
    let h = mesh.h();
    for q in 0..reference.len() {
        let xi = reference.point(q);
        out.points.extend((0..mesh.dim()).map(|k| lower[k] + xi[k] * h[k]));
        out.weights.push(reference.weights[q] * scale);
    }
}

/// `n_per_axis^dim` points per cell, cells in mesh order.
pub fn cell_rule(mesh: &StructuredMesh, n_per_axis: usize) -> Result<QuadratureRule> {
    let reference = ReferenceRule::cell(mesh.dim(), n_per_axis)?;
    let mut rule = QuadratureRule {
        dim: mesh.dim(),
        points: Vec::with_capacity(mesh.cell_count() * reference.len() * mesh.dim()),
        weights: Vec::with_capacity(mesh.cell_count() * reference.len()),
        exact_degree: 2 * n_per_axis - 1,
    };
    let volume = mesh.cell_volume();
    for cell in 0..mesh.cell_count() {
        map_reference(mesh, cell, &reference, volume, &mut rule);
    }
    Ok(rule)
}

/// Gauss rule over every boundary cell face in `faces`; empty set, empty rule.
pub fn face_rule(mesh: &StructuredMesh, faces: &[Face], n_per_axis: usize) -> Result<QuadratureRule> {
    let mut rule = QuadratureRule {
        dim: mesh.dim(),
        points: Vec::new(),
        weights: Vec::new(),
        exact_degree: 2 * n_per_axis.max(1) - 1,
    };
    for &face in faces {
        let reference = ReferenceRule::face(mesh.dim(), n_per_axis, face)?;
        let area = face_cell_area(mesh, face);
        for cell in mesh.boundary_cells(face) {
            map_reference(mesh, cell, &reference, area, &mut rule);
        }
    }
    Ok(rule)
}

pub(crate) fn face_cell_area(mesh: &StructuredMesh, face: Face) -> f64 {
    mesh.h()
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != face.axis)
        .map(|(_, h)| h)
        .product()
}

/// Uniform random points on one face of a box.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub face: Face,
    pub seed: u64,
    dim: usize,
    points: Vec<f64>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.points.chunks_exact(self.dim)
    }
}

/// `n` i.i.d. uniform points on `face` of `domain`. Each face draws from its
/// own stream, so adding a face never perturbs the others.
pub fn sample_uniform(domain: &BoxDomain, face: Face, n: usize, seed: u64) -> Result<SampleSet> {
    let dim = domain.dim();
    if face.axis >= dim {
        return Err(Error::Dimension {
            expected: dim,
            got: face.axis + 1,
        });
    }
    if domain.face_measure(face) <= 0.0 {
        return Err(Error::invalid(format!("face {face} has zero measure")));
    }
    let stream = rng::streams::BOUNDARY + 2 * face.axis as u64 + u64::from(face.upper);
    let mut rng = rng::stream(seed, stream);
    let fixed = domain.face_coord(face);
    let mut points = Vec::with_capacity(n * dim);
    for _ in 0..n {
        for k in 0..dim {
            points.push(if k == face.axis {
                fixed
            } else {
                rng::uniform(&mut rng, domain.lo[k], domain.hi[k])
            });
        }
    }
    Ok(SampleSet {
        face,
        seed,
        dim,
        points,
    })
}
