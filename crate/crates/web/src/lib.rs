//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Each export is a thin wrapper over a plain function that the native tests
//! call directly.

use dpgm::assembly::{BlockLabel, SystemOptions};
use dpgm::experiment::{run_single, sample_solution_grid, RunSpec, SolverConfig};
use dpgm::feature_basis::{differentiator, FeatureBasis, FeatureMap, Init, NetworkArch, NetworkKind, DEFAULT_FD_STEP};
use dpgm::metrics::EvalGrid;
use dpgm::problems::ProblemConfig;
use serde::Serialize;
use wasm_bindgen::prelude::*;

const MAX_RESOLUTION: usize = 256;

fn spec(h: f64, dof: usize, seed: u64, mixed_form: Option<u8>) -> RunSpec {
    let mut problem = ProblemConfig::preset("example1");
    problem.mixed_form = mixed_form;
    RunSpec {
        problem,
        network: NetworkKind::FullyConnected,
        init: Init::Uniform { r: 1.0 },
        h,
        dof,
        depth: 2,
        seed,
        assembly: SystemOptions::default(),
        solver: SolverConfig::default(),
        // coarser than the CLI default to keep the page responsive
        metrics: EvalGrid {
            h: h.min(1.0 / 16.0),
            points: 5,
            ..EvalGrid::default()
        },
    }
}

fn mesh_size(level: u32) -> Result<f64, String> {
    if !(1..=5).contains(&level) {
        return Err(format!("mesh level must be 1..=5, got {level}"));
    }
    Ok(0.5f64.powi(level as i32))
}

fn check_resolution(resolution: usize) -> Result<(), String> {
    if !(2..=MAX_RESOLUTION).contains(&resolution) {
        return Err(format!("resolution must be 2..={MAX_RESOLUTION}, got {resolution}"));
    }
    Ok(())
}

/// Poisson solve on `h = 2^-level` sampled for a heatmap.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct PoissonView {
    resolution: usize,
    u_rho: Vec<f64>,
    error: Vec<f64>,
    e_l2: f64,
    e_h1: f64,
    rows: usize,
    columns: usize,
    rank: usize,
}

#[wasm_bindgen]
impl PoissonView {
    #[wasm_bindgen(getter)]
    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// Row-major with `y` fastest.
    pub fn u_rho(&self) -> Vec<f64> {
        self.u_rho.clone()
    }

    /// `|u - u_ρ|`, same layout as [`PoissonView::u_rho`].
    pub fn error(&self) -> Vec<f64> {
        self.error.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn e_l2(&self) -> f64 {
        self.e_l2
    }

    #[wasm_bindgen(getter)]
    pub fn e_h1(&self) -> f64 {
        self.e_h1
    }

    #[wasm_bindgen(getter)]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[wasm_bindgen(getter)]
    pub fn columns(&self) -> usize {
        self.columns
    }

    #[wasm_bindgen(getter)]
    pub fn rank(&self) -> usize {
        self.rank
    }
}

pub fn poisson(level: u32, dof: usize, seed: u64, resolution: usize) -> Result<PoissonView, String> {
    check_resolution(resolution)?;
    if dof == 0 || dof > 1000 {
        return Err(format!("dof must be 1..=1000, got {dof}"));
    }
    let record = run_single(&spec(mesh_size(level)?, dof, seed, None)).map_err(|e| e.to_string())?;
    let grid = sample_solution_grid(&record, resolution).map_err(|e| e.to_string())?;
    let error = (0..grid.u.len()).map(|k| grid.abs_diff(k)).collect();
    Ok(PoissonView {
        resolution,
        u_rho: grid.u_rho,
        error,
        e_l2: record.errors.e_l2,
        e_h1: record.errors.e_h1,
        rows: record.rows,
        columns: record.columns,
        rank: record.solve.rank,
    })
}

#[wasm_bindgen]
pub fn solve_poisson(level: u32, dof: usize, seed: u64, resolution: usize) -> Result<PoissonView, JsError> {
    poisson(level, dof, seed, resolution).map_err(|e| JsError::new(&e))
}

/// One random feature (or its x-partial) on the unit square, `y` fastest.
pub fn feature_field(
    resnet: bool,
    width: usize,
    depth: usize,
    seed: u64,
    index: usize,
    derivative: bool,
    resolution: usize,
) -> Result<Vec<f64>, String> {
    check_resolution(resolution)?;
    if width == 0 || width > 1000 || !(2..=6).contains(&depth) {
        return Err(format!(
            "width must be 1..=1000 and depth 2..=6, got {width} and {depth}"
        ));
    }
    let arch = if resnet {
        NetworkArch::resnet(2, width, depth, Init::XavierUniform)
    } else {
        let mut widths = vec![2];
        widths.extend(std::iter::repeat(width).take(depth - 1));
        NetworkArch::fully_connected(widths, Init::Uniform { r: 1.0 })
    };
    let net = FeatureBasis::build(&arch, seed).map_err(|e| e.to_string())?;
    let n = net.len();
    if index >= n {
        return Err(format!("feature index {index} out of range for {n} features"));
    }
    let diff = differentiator(&net, &[0], DEFAULT_FD_STEP);
    let (mut values, mut partials) = (vec![0.0; n], vec![0.0; n]);
    let step = 1.0 / (resolution - 1) as f64;
    let mut out = Vec::with_capacity(resolution * resolution);
    for i in 0..resolution {
        for j in 0..resolution {
            let x = [i as f64 * step, j as f64 * step];
            if derivative {
                diff.eval(&x, &mut values, &mut partials);
                out.push(partials[index]);
            } else {
                net.eval_into(&x, &mut values);
                out.push(values[index]);
            }
        }
    }
    Ok(out)
}

#[wasm_bindgen]
pub fn feature_slice(
    resnet: bool,
    width: usize,
    depth: usize,
    seed: u64,
    index: usize,
    derivative: bool,
    resolution: usize,
) -> Result<Vec<f64>, JsError> {
    feature_field(resnet, width, depth, seed, index, derivative, resolution).map_err(|e| JsError::new(&e))
}

#[derive(Debug, Clone, Serialize)]
pub struct FormResult {
    pub form: u8,
    pub e_l2: f64,
    pub e_h1: f64,
    pub e_p: Option<f64>,
    pub weak_rows: usize,
    pub boundary_rows: usize,
    pub rank: usize,
}

/// The four mixed formulations on the same mesh, trial size and seed.
pub fn mixed_forms(level: u32, dof: usize, seed: u64) -> Result<Vec<FormResult>, String> {
    if dof == 0 || dof % 3 != 0 || dof > 900 {
        return Err(format!("dof must be a positive multiple of 3 up to 900, got {dof}"));
    }
    let h = mesh_size(level)?;
    (1..=4u8)
        .map(|form| {
            let record = run_single(&spec(h, dof, seed, Some(form))).map_err(|e| format!("form {form}: {e}"))?;
            let weak_rows = record.block_rows.get(&BlockLabel::WeakForm).copied().unwrap_or(0);
            Ok(FormResult {
                form,
                e_l2: record.errors.e_l2,
                e_h1: record.errors.e_h1,
                e_p: record.p_error_l2,
                weak_rows,
                boundary_rows: record.rows - weak_rows,
                rank: record.solve.rank,
            })
        })
        .collect()
}

/// JSON array of per-form results.
#[wasm_bindgen]
pub fn compare_mixed(level: u32, dof: usize, seed: u64) -> Result<String, JsError> {
    let results = mixed_forms(level, dof, seed).map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&results).map_err(|e| JsError::new(&e.to_string()))
}
