//! Config-driven runs: one solve end to end, grids of solves, CSV tables and
//! solution grid dumps.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::assembly::{build_system, BlockLabel, SystemOptions, Trial};
use crate::error::{Error, Result, StageExt};
use crate::feature_basis::{FeatureBasis, FeatureMap, Init, NetworkArch, NetworkKind};
use crate::lstsq::{solve_lstsq, DEFAULT_RCOND};
use crate::mesh::StructuredMesh;
use crate::metrics::{relative_errors, slice_errors_at_t, ErrorReport, EvalGrid, ExactField, FeatureField};
use crate::problems::{custom_problem, ProblemConfig, ProblemKind, ProblemSpec};
use crate::rng::streams;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub kind: Option<NetworkKind>,
    /// Defaults: `Uniform(1)` for fully connected, Xavier for ResNet.
    pub init: Option<Init>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub h: Vec<f64>,
    pub dof: Vec<usize>,
    #[serde(default = "default_depth")]
    pub depth: Vec<usize>,
    /// Weak-form test counts; empty keeps every test function.
    #[serde(default)]
    pub test_count: Vec<usize>,
    /// Mixed formulations to run; empty runs the problem as given.
    #[serde(default)]
    pub mixed_form: Vec<u8>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Pair `h[i]` with `dof[i]` instead of crossing the lists.
    #[serde(default)]
    pub zip_h_dof: bool,
}

fn default_depth() -> Vec<usize> {
    vec![2]
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub rcond: f64,
    /// Multiplies every collocation row before the solve.
    pub boundary_weight: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            rcond: DEFAULT_RCOND,
            boundary_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Also write each stacked system as text.
    pub dump_system: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            dump_system: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    #[serde(default)]
    pub network: NetworkConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub assembly: SystemOptions,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub metrics: EvalGrid,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        for (name, empty) in [
            ("h", g.h.is_empty()),
            ("dof", g.dof.is_empty()),
            ("depth", g.depth.is_empty()),
            ("seeds", g.seeds.is_empty()),
        ] {
            if empty {
                return Err(Error::invalid(format!("grid.{name} must not be empty")));
            }
        }
        if g.zip_h_dof && g.h.len() != g.dof.len() {
            return Err(Error::invalid(format!(
                "zip_h_dof needs equally long lists, got {} h and {} dof",
                g.h.len(),
                g.dof.len()
            )));
        }
        Ok(())
    }

    /// Every run of the grid, seeds innermost.
    pub fn expand(&self) -> Result<Vec<RunSpec>> {
        self.validate()?;
        let g = &self.grid;
        let pairs: Vec<(f64, usize)> = if g.zip_h_dof {
            g.h.iter().copied().zip(g.dof.iter().copied()).collect()
        } else {
            g.h.iter().flat_map(|&h| g.dof.iter().map(move |&d| (h, d))).collect()
        };
        let counts: Vec<Option<usize>> = if g.test_count.is_empty() {
            vec![None]
        } else {
            g.test_count.iter().copied().map(Some).collect()
        };
        let forms: Vec<Option<u8>> = if g.mixed_form.is_empty() {
            vec![self.problem.mixed_form]
        } else {
            g.mixed_form.iter().copied().map(Some).collect()
        };
        let kind = self.network.kind.unwrap_or(NetworkKind::FullyConnected);
        let init = self.network.init.unwrap_or(match kind {
            NetworkKind::FullyConnected => Init::Uniform { r: 1.0 },
            NetworkKind::ResNet => Init::XavierUniform,
        });
        let mut out = Vec::new();
        for &form in &forms {
            for &(h, dof) in &pairs {
                for &depth in &g.depth {
                    for &test_count in &counts {
                        for &seed in &g.seeds {
                            let mut problem = self.problem.clone();
                            problem.mixed_form = form;
                            let mut assembly = self.assembly.clone();
                            if test_count.is_some() {
                                assembly.test_count = test_count;
                            }
                            out.push(RunSpec {
                                problem,
                                network: kind,
                                init,
                                h,
                                dof,
                                depth,
                                seed,
                                assembly,
                                solver: self.solver,
                                metrics: self.metrics,
                            });
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Wall clock; reads zero on wasm32, which has no `Instant`.
struct Stopwatch(#[cfg(not(target_arch = "wasm32"))] std::time::Instant);

impl Stopwatch {
    fn start() -> Self {
        #[cfg(not(target_arch = "wasm32"))]
        return Stopwatch(std::time::Instant::now());
        #[cfg(target_arch = "wasm32")]
        return Stopwatch();
    }

    fn seconds(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        return self.0.elapsed().as_secs_f64();
        #[cfg(target_arch = "wasm32")]
        return 0.0;
    }
}

/// One fully resolved run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub problem: ProblemConfig,
    pub network: NetworkKind,
    pub init: Init,
    pub h: f64,
    /// Total trial columns; mixed runs split them evenly over `p¹, p², u`.
    pub dof: usize,
    pub depth: usize,
    pub seed: u64,
    pub assembly: SystemOptions,
    pub solver: SolverConfig,
    pub metrics: EvalGrid,
}

impl RunSpec {
    /// Hex SHA-256 of the canonical JSON form, seed excluded, so runs that
    /// differ only in the seed share a fingerprint.
    pub fn fingerprint(&self) -> String {
        let mut value = serde_json::to_value(self).expect("RunSpec serializes");
        if let serde_json::Value::Object(map) = &mut value {
            map.remove("seed");
        }
        let digest = Sha256::digest(value.to_string().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Widths `[input, dof, ..., dof]` with `depth` entries.
    fn arch(&self, input_dim: usize, width: usize, outputs: usize) -> NetworkArch {
        let arch = match self.network {
            NetworkKind::FullyConnected => {
                let mut widths = vec![input_dim];
                widths.extend(std::iter::repeat(width).take(self.depth.saturating_sub(1)));
                NetworkArch::fully_connected(widths, self.init)
            }
            NetworkKind::ResNet => NetworkArch::resnet(input_dim, width, self.depth, self.init),
        };
        arch.with_outputs(outputs)
    }
}

/// Trial networks of a run, rebuilt deterministically from its spec.
pub struct Networks {
    pub u: FeatureBasis,
    pub p: Option<FeatureBasis>,
}

impl Networks {
    pub fn build(spec: &RunSpec, problem: &ProblemSpec) -> Result<Self> {
        let input = problem.point_dim();
        match problem.kind {
            ProblemKind::MixedPoisson(_) => {
                if spec.dof % 3 != 0 || spec.dof == 0 {
                    return Err(Error::invalid(format!(
                        "mixed runs split dof over p¹, p², u; {} is not a positive multiple of 3",
                        spec.dof
                    )));
                }
                let n = spec.dof / 3;
                Ok(Networks {
                    u: FeatureBasis::build_on_stream(&spec.arch(input, n, 1), spec.seed, streams::TRIAL_U)?,
                    p: Some(FeatureBasis::build_on_stream(
                        &spec.arch(input, n, 2),
                        spec.seed,
                        streams::TRIAL_P,
                    )?),
                })
            }
            _ => Ok(Networks {
                u: FeatureBasis::build(&spec.arch(input, spec.dof, 1), spec.seed)?,
                p: None,
            }),
        }
    }

    pub fn trial(&self) -> Trial<'_> {
        Trial {
            u: &self.u,
            p: self.p.as_ref().map(|p| p as &dyn FeatureMap),
        }
    }

    /// Where `u`'s coefficients start.
    pub fn u_offset(&self) -> usize {
        self.p.as_ref().map_or(0, |p| 2 * p.len())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub total_residual: f64,
    pub per_block_residual: BTreeMap<BlockLabel, f64>,
    pub rank: usize,
    pub condition: f64,
    pub rcond: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema: u32,
    pub fingerprint: String,
    pub spec: RunSpec,
    pub problem: String,
    pub kind: String,
    pub rows: usize,
    pub columns: usize,
    pub block_rows: BTreeMap<BlockLabel, usize>,
    pub solve: SolveSummary,
    pub errors: ErrorReport,
    /// Relative L² error of `p` against `∇u` for mixed runs.
    pub p_error_l2: Option<f64>,
    pub solve_seconds: f64,
    pub total_seconds: f64,
    pub diagnostics: Vec<String>,
    pub coefficients: Vec<f64>,
}

impl RunRecord {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let rec: RunRecord = serde_json::from_slice(&fs::read(path)?)?;
        if rec.schema != SCHEMA_VERSION {
            return Err(Error::invalid(format!(
                "record schema {} is not supported (expected {SCHEMA_VERSION})",
                rec.schema
            )));
        }
        Ok(rec)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Extra outputs of a run kept out of the record.
#[derive(Default)]
pub struct RunArtifacts {
    /// Text dump of the stacked system, when requested.
    pub system_text: Option<Vec<u8>>,
}

pub fn run_single(spec: &RunSpec) -> Result<RunRecord> {
    run_single_with(spec, false).map(|(r, _)| r)
}

/// Build basis, test space, quadrature, assembly, stack, solve, measure.
pub fn run_single_with(spec: &RunSpec, dump_system: bool) -> Result<(RunRecord, RunArtifacts)> {
    let start = Stopwatch::start();
    let problem = custom_problem(&spec.problem).stage("problem")?;
    let nets = Networks::build(spec, &problem).stage("basis")?;
    let mesh = StructuredMesh::uniform(&problem.assembly_domain()?, spec.h).stage("mesh")?;
    let system = build_system(&problem, &mesh, nets.trial(), &spec.assembly, spec.seed).stage("assembly")?;
    let mut artifacts = RunArtifacts::default();
    if dump_system {
        let mut buf = Vec::new();
        system.write_text(&mut buf).stage("assembly")?;
        artifacts.system_text = Some(buf);
    }
    let (matrix, rhs, ranges) = system.stack_weighted(spec.solver.boundary_weight).stage("stack")?;
    let solve_start = Stopwatch::start();
    let result = solve_lstsq(&matrix, &rhs, spec.solver.rcond)
        .and_then(|r| r.with_blocks(&matrix, &rhs, &ranges))
        .stage("lstsq")?;
    let solve_seconds = solve_start.seconds();

    let mut block_rows = BTreeMap::new();
    for r in &ranges {
        *block_rows.entry(r.label).or_insert(0) += r.end - r.start;
    }
    let (errors, p_error_l2) = measure(spec, &problem, &nets, &result.coeffs).stage("metrics")?;
    let mut diagnostics = system.diagnostics.clone();
    if let ProblemKind::MixedPoisson(4) = problem.kind {
        diagnostics.push("mixed form 4: boundary conditions enter the weak form only; no collocation rows".into());
    }
    Ok((
        RunRecord {
            schema: SCHEMA_VERSION,
            fingerprint: spec.fingerprint(),
            spec: spec.clone(),
            problem: problem.name.clone(),
            kind: problem.kind.to_string(),
            rows: matrix.nrows(),
            columns: matrix.ncols(),
            block_rows,
            solve: SolveSummary {
                total_residual: result.total_residual,
                per_block_residual: result.per_block_residual.clone(),
                rank: result.rank_estimate,
                condition: result.condition_estimate,
                rcond: result.rcond,
            },
            errors,
            p_error_l2,
            solve_seconds,
            total_seconds: start.seconds(),
            diagnostics,
            coefficients: result.coeffs,
        },
        artifacts,
    ))
}

fn measure(
    spec: &RunSpec,
    problem: &ProblemSpec,
    nets: &Networks,
    coeffs: &[f64],
) -> Result<(ErrorReport, Option<f64>)> {
    let exact = problem
        .exact
        .as_ref()
        .ok_or_else(|| Error::Problem("no exact solution to measure against".into()))?;
    let d = problem.spatial_dim();
    let off = nets.u_offset();
    let step = spec.assembly.fd_step;
    let u = FeatureField::new(&nets.u, &coeffs[off..off + nets.u.len()], d, step)?;
    let reference = ExactField::new(exact, problem.point_dim());
    if problem.kind.is_time_dependent() {
        let t_end = problem.t_end.expect("validated");
        let r = slice_errors_at_t(
            &u,
            &reference,
            t_end,
            (0.0, t_end),
            &spec.metrics,
            &problem.domain,
            false,
        )?;
        return Ok((r, None));
    }
    let r = relative_errors(&u, &reference, &spec.metrics, &problem.domain)?;
    let p_err = match &nets.p {
        Some(p) => {
            let n = p.len();
            let rule = spec.metrics.rule(&problem.domain)?;
            let (mut err, mut norm) = (0.0, 0.0);
            let mut phi = vec![0.0; n];
            let mut g = vec![0.0; d];
            for (x, w) in rule.iter() {
                p.eval_into(x, &mut phi);
                (exact.grad)(x, &mut g);
                for c in 0..d.min(2) {
                    let pc: f64 = phi.iter().zip(&coeffs[c * n..(c + 1) * n]).map(|(a, b)| a * b).sum();
                    err += w * (pc - g[c]).powi(2);
                    norm += w * g[c] * g[c];
                }
            }
            Some(if norm > 0.0 { (err / norm).sqrt() } else { err.sqrt() })
        }
        None => None,
    };
    Ok((r, p_err))
}

/// `u_ρ` and `u` sampled on a uniform grid, `x` outer and `y` inner.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionGrid {
    pub resolution: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub u_rho: Vec<f64>,
    /// NaN when the problem has no exact solution.
    pub u: Vec<f64>,
}

impl SolutionGrid {
    pub fn abs_diff(&self, k: usize) -> f64 {
        (self.u[k] - self.u_rho[k]).abs()
    }
}

/// Samples a solved record on a `resolution × resolution` grid over the
/// spatial box (at `t = T` for space-time runs).
pub fn sample_solution_grid(record: &RunRecord, resolution: usize) -> Result<SolutionGrid> {
    if resolution < 2 {
        return Err(Error::invalid("grid resolution must be at least 2"));
    }
    let problem = custom_problem(&record.spec.problem)?;
    if problem.spatial_dim() != 2 {
        return Err(Error::Unsupported("grid dumps are 2D".into()));
    }
    let nets = Networks::build(&record.spec, &problem)?;
    let off = nets.u_offset();
    let n = nets.u.len();
    if record.coefficients.len() < off + n {
        return Err(Error::Dimension {
            expected: off + n,
            got: record.coefficients.len(),
        });
    }
    let coeffs = &record.coefficients[off..off + n];
    let exact = problem.exact.as_ref();
    let t = problem.t_end.filter(|_| problem.kind.is_time_dependent());
    let dom = &problem.domain;
    let count = resolution * resolution;
    let mut grid = SolutionGrid {
        resolution,
        x: Vec::with_capacity(count),
        y: Vec::with_capacity(count),
        u_rho: Vec::with_capacity(count),
        u: Vec::with_capacity(count),
    };
    let mut phi = vec![0.0; n];
    let mut p = Vec::with_capacity(3);
    for i in 0..resolution {
        for j in 0..resolution {
            let x = dom.lo[0] + dom.extent(0) * i as f64 / (resolution - 1) as f64;
            let y = dom.lo[1] + dom.extent(1) * j as f64 / (resolution - 1) as f64;
            p.clear();
            p.extend([x, y]);
            p.extend(t);
            nets.u.eval_into(&p, &mut phi);
            grid.x.push(x);
            grid.y.push(y);
            grid.u_rho.push(phi.iter().zip(coeffs).map(|(a, b)| a * b).sum());
            grid.u.push(exact.map_or(f64::NAN, |e| (e.u)(&p)));
        }
    }
    Ok(grid)
}

/// [`sample_solution_grid`] as CSV rows `x,y,u_rho,u,abs_diff`.
pub fn dump_solution_grid(record: &RunRecord, resolution: usize, mut out: impl Write) -> Result<usize> {
    let grid = sample_solution_grid(record, resolution)?;
    writeln!(out, "x,y,u_rho,u,abs_diff")?;
    for k in 0..grid.x.len() {
        writeln!(
            out,
            "{},{},{:e},{:e},{:e}",
            grid.x[k],
            grid.y[k],
            grid.u_rho[k],
            grid.u[k],
            grid.abs_diff(k)
        )?;
    }
    Ok(grid.x.len())
}

const RUN_COLUMNS: [&str; 24] = [
    "fingerprint",
    "problem",
    "kind",
    "network",
    "h",
    "dof",
    "depth",
    "test_count",
    "seed",
    "rows",
    "columns",
    "rank",
    "condition",
    "residual",
    "e_l2",
    "e_h1",
    "relative",
    "h1_mode",
    "reference_l2",
    "reference_h1",
    "e_p_l2",
    "rcond",
    "status",
    "message",
];

/// Outcome of one grid cell and seed.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub spec: RunSpec,
    pub result: std::result::Result<RunRecord, String>,
}

fn kind_label(spec: &RunSpec) -> String {
    match spec.problem.mixed_form {
        Some(f) => format!("mixed{f}"),
        None => String::new(),
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn problem_label(spec: &RunSpec) -> String {
    spec.problem.preset.clone().unwrap_or_else(|| "custom".into())
}

/// Writes per-run rows. Wall times are left out so identical runs produce
/// identical bytes; see [`write_timings_csv`].
pub fn write_runs_csv(outcomes: &[RunOutcome], out: impl Write) -> Result<()> {
    let mut out = out;
    writeln!(out, "# dpgm runs schema={SCHEMA_VERSION}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RUN_COLUMNS)?;
    for o in outcomes {
        let s = &o.spec;
        let network = format!("{:?}", s.network).to_lowercase();
        let mut row: Vec<String> = vec![
            s.fingerprint(),
            problem_label(s),
            String::new(),
            network,
            format!("{:e}", s.h),
            s.dof.to_string(),
            s.depth.to_string(),
            opt(s.assembly.test_count),
            s.seed.to_string(),
        ];
        match &o.result {
            Ok(r) => {
                row[2] = r.kind.clone();
                row.extend([
                    r.rows.to_string(),
                    r.columns.to_string(),
                    r.solve.rank.to_string(),
                    format!("{:e}", r.solve.condition),
                    format!("{:e}", r.solve.total_residual),
                    format!("{:e}", r.errors.e_l2),
                    format!("{:e}", r.errors.e_h1),
                    r.errors.relative.to_string(),
                    format!("{:?}", r.errors.h1_mode).to_lowercase(),
                    format!("{:e}", r.errors.reference_l2),
                    format!("{:e}", r.errors.reference_h1),
                    opt(r.p_error_l2.map(|v| format!("{v:e}"))),
                    format!("{:e}", r.solve.rcond),
                    "ok".into(),
                    r.diagnostics.join("; "),
                ]);
            }
            Err(msg) => {
                row[2] = kind_label(s);
                row.extend(std::iter::repeat(String::new()).take(RUN_COLUMNS.len() - row.len() - 2));
                row.extend(["error".into(), msg.clone()]);
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_timings_csv(outcomes: &[RunOutcome], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["fingerprint", "seed", "solve_seconds", "total_seconds"])?;
    for o in outcomes {
        if let Ok(r) = &o.result {
            w.write_record([
                r.fingerprint.clone(),
                r.spec.seed.to_string(),
                format!("{:.3}", r.solve_seconds),
                format!("{:.3}", r.total_seconds),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Median over seeds of one grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub fingerprint: String,
    pub spec: RunSpec,
    pub kind: String,
    pub runs: usize,
    pub failures: usize,
    pub median_e_l2: Option<f64>,
    pub median_e_h1: Option<f64>,
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

pub fn summarize(outcomes: &[RunOutcome]) -> Vec<CellSummary> {
    let mut cells: Vec<CellSummary> = Vec::new();
    let mut l2: Vec<Vec<f64>> = Vec::new();
    let mut h1: Vec<Vec<f64>> = Vec::new();
    for o in outcomes {
        let fp = o.spec.fingerprint();
        let idx = match cells.iter().position(|c| c.fingerprint == fp) {
            Some(i) => i,
            None => {
                cells.push(CellSummary {
                    fingerprint: fp,
                    spec: o.spec.clone(),
                    kind: kind_label(&o.spec),
                    runs: 0,
                    failures: 0,
                    median_e_l2: None,
                    median_e_h1: None,
                });
                l2.push(Vec::new());
                h1.push(Vec::new());
                cells.len() - 1
            }
        };
        cells[idx].runs += 1;
        match &o.result {
            Ok(r) => {
                cells[idx].kind = r.kind.clone();
                l2[idx].push(r.errors.e_l2);
                h1[idx].push(r.errors.e_h1);
            }
            Err(_) => cells[idx].failures += 1,
        }
    }
    for (i, c) in cells.iter_mut().enumerate() {
        c.median_e_l2 = median(&mut l2[i]);
        c.median_e_h1 = median(&mut h1[i]);
    }
    cells
}

pub fn write_summary_csv(cells: &[CellSummary], out: impl Write) -> Result<()> {
    let mut out = out;
    writeln!(out, "# dpgm summary schema={SCHEMA_VERSION}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "fingerprint",
        "problem",
        "kind",
        "h",
        "dof",
        "depth",
        "test_count",
        "runs",
        "failures",
        "median_e_l2",
        "median_e_h1",
    ])?;
    for c in cells {
        w.write_record([
            c.fingerprint.clone(),
            problem_label(&c.spec),
            c.kind.clone(),
            format!("{:e}", c.spec.h),
            c.spec.dof.to_string(),
            c.spec.depth.to_string(),
            opt(c.spec.assembly.test_count),
            c.runs.to_string(),
            c.failures.to_string(),
            opt(c.median_e_l2.map(|v| format!("{v:e}"))),
            opt(c.median_e_h1.map(|v| format!("{v:e}"))),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Summary table: one row per value of the swept axis (form, h, test
/// count or depth), one column per dof, median errors in the cells.
pub fn write_table_csv(cells: &[CellSummary], use_h1: bool, out: impl Write) -> Result<()> {
    let mut dofs: Vec<usize> = cells.iter().map(|c| c.spec.dof).collect();
    dofs.sort_unstable();
    dofs.dedup();
    let row_key = |c: &CellSummary| -> Vec<String> {
        vec![
            c.kind.clone(),
            format!("{:e}", c.spec.h),
            c.spec.depth.to_string(),
            opt(c.spec.assembly.test_count),
        ]
    };
    let mut keys: Vec<Vec<String>> = Vec::new();
    for c in cells {
        let k = row_key(c);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let mut out = out;
    writeln!(
        out,
        "# dpgm table schema={SCHEMA_VERSION} metric=median_{}",
        if use_h1 { "e_h1" } else { "e_l2" }
    )?;
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["kind", "h", "depth", "test_count"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(dofs.iter().map(|d| format!("dof={d}")));
    w.write_record(&header)?;
    for k in keys {
        let mut row = k.clone();
        for &d in &dofs {
            let v = cells.iter().find(|c| row_key(c) == k && c.spec.dof == d).and_then(|c| {
                if use_h1 {
                    c.median_e_h1
                } else {
                    c.median_e_l2
                }
            });
            row.push(opt(v.map(|v| format!("{v:e}"))));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs every cell and seed; failures are recorded and the sweep goes on.
/// Writes `runs.csv`, `summary.csv`, `table_l2.csv`, `table_h1.csv`,
/// `timings.csv`, `config.json` and one JSON record per run under `dir`.
pub fn run_sweep(
    config: &ExperimentConfig,
    dir: &Path,
    mut progress: impl FnMut(&RunOutcome),
) -> Result<Vec<RunOutcome>> {
    let specs = config.expand()?;
    fs::create_dir_all(dir.join("records"))?;
    write_atomic(
        &dir.join("config.json"),
        serde_json::to_string_pretty(config)?.as_bytes(),
    )?;
    let mut outcomes = Vec::with_capacity(specs.len());
    for spec in specs {
        let result = run_single_with(&spec, config.output.dump_system);
        let outcome = match result {
            Ok((record, artifacts)) => {
                let stem = format!("{}-s{}", record.fingerprint, spec.seed);
                record.save(&dir.join("records").join(format!("{stem}.json")))?;
                if let Some(text) = artifacts.system_text {
                    write_atomic(&dir.join("records").join(format!("{stem}.system.txt")), &text)?;
                }
                RunOutcome {
                    spec,
                    result: Ok(record),
                }
            }
            Err(e) => RunOutcome {
                spec,
                result: Err(e.to_string()),
            },
        };
        progress(&outcome);
        outcomes.push(outcome);
    }
    write_outputs(&outcomes, dir)?;
    Ok(outcomes)
}

pub fn write_outputs(outcomes: &[RunOutcome], dir: &Path) -> Result<()> {
    let cells = summarize(outcomes);
    let mut buf = Vec::new();
    write_runs_csv(outcomes, &mut buf)?;
    write_atomic(&dir.join("runs.csv"), &buf)?;
    buf.clear();
    write_summary_csv(&cells, &mut buf)?;
    write_atomic(&dir.join("summary.csv"), &buf)?;
    for (name, h1) in [("table_l2.csv", false), ("table_h1.csv", true)] {
        buf.clear();
        write_table_csv(&cells, h1, &mut buf)?;
        write_atomic(&dir.join(name), &buf)?;
    }
    buf.clear();
    write_timings_csv(outcomes, &mut buf)?;
    write_atomic(&dir.join("timings.csv"), &buf)?;
    Ok(())
}
