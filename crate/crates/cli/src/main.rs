use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dpgm::experiment::{dump_solution_grid, run_single_with, run_sweep, write_atomic, ExperimentConfig, RunRecord};

#[derive(Parser)]
#[command(name = "dpgm", version, about = "Random-feature Petrov-Galerkin PDE solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a single-cell config and write its run record.
    Solve {
        config: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Run every cell and seed of a config grid and write the CSV tables.
    Sweep {
        config: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Sample a saved run on a uniform grid: x, y, u_rho, u, abs_diff.
    DumpGrid {
        record: PathBuf,
        /// Points per axis.
        #[arg(long, default_value_t = 101)]
        resolution: usize,
        /// Output CSV; stdout when omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunOpts {
    /// Run only this seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 1 gives byte-reproducible output.
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides `output.dir`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Singular-value cutoff relative to the largest.
    #[arg(long)]
    rcond: Option<f64>,
    /// Central-difference step for trial derivatives.
    #[arg(long)]
    fd_step: Option<f64>,
}

impl RunOpts {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(seed) = self.seed {
            cfg.grid.seeds = vec![seed];
        }
        if let Some(dir) = &self.out_dir {
            cfg.output.dir = dir.clone();
        }
        if let Some(rcond) = self.rcond {
            cfg.solver.rcond = rcond;
        }
        if let Some(step) = self.fd_step {
            cfg.assembly.fd_step = step;
        }
    }

    fn init_threads(&self) -> Result<()> {
        if let Some(n) = self.threads {
            if n == 0 {
                bail!("--threads must be at least 1");
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .context("thread pool")?;
        }
        Ok(())
    }
}

fn load_config(path: &Path, opts: &RunOpts) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg: ExperimentConfig =
        toml::from_str(&text).with_context(|| format!("config stage failed: {}", path.display()))?;
    opts.apply(&mut cfg);
    cfg.validate().context("config stage failed")?;
    Ok(cfg)
}

fn solve(path: &Path, opts: &RunOpts) -> Result<()> {
    opts.init_threads()?;
    let cfg = load_config(path, opts)?;
    let specs = cfg.expand()?;
    if specs.len() != 1 {
        bail!(
            "config stage failed: solve expects one run, the grid expands to {}; use `sweep` or --seed",
            specs.len()
        );
    }
    let spec = &specs[0];
    let (record, artifacts) = run_single_with(spec, cfg.output.dump_system)?;
    let dir = &cfg.output.dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let stem = format!("{}-s{}", record.fingerprint, spec.seed);
    let path = dir.join(format!("{stem}.json"));
    record.save(&path)?;
    if let Some(text) = artifacts.system_text {
        write_atomic(&dir.join(format!("{stem}.system.txt")), &text)?;
    }
    let mut out = io::stdout().lock();
    writeln!(out, "problem    {} ({})", record.problem, record.kind)?;
    writeln!(
        out,
        "system     {} x {} rank {}",
        record.rows, record.columns, record.solve.rank
    )?;
    for (label, rows) in &record.block_rows {
        writeln!(out, "  {:<13}{rows}", label.to_string())?;
    }
    let scope = if record.errors.relative { "relative" } else { "absolute" };
    writeln!(out, "e_L2       {:.6e} ({scope})", record.errors.e_l2)?;
    writeln!(out, "e_H1       {:.6e} ({scope})", record.errors.e_h1)?;
    if let Some(p) = record.p_error_l2 {
        writeln!(out, "e_p        {p:.6e}")?;
    }
    writeln!(out, "residual   {:.6e}", record.solve.total_residual)?;
    writeln!(
        out,
        "seconds    {:.2} solve, {:.2} total",
        record.solve_seconds, record.total_seconds
    )?;
    for d in &record.diagnostics {
        writeln!(out, "note       {d}")?;
    }
    writeln!(out, "record     {}", path.display())?;
    Ok(())
}

fn sweep(path: &Path, opts: &RunOpts) -> Result<bool> {
    opts.init_threads()?;
    let cfg = load_config(path, opts)?;
    let total = cfg.expand()?.len();
    let dir = cfg.output.dir.clone();
    let mut done = 0;
    let outcomes = run_sweep(&cfg, &dir, |o| {
        done += 1;
        let s = &o.spec;
        let form = s.problem.mixed_form.map(|f| format!(" form={f}")).unwrap_or_default();
        match &o.result {
            Ok(r) => eprintln!(
                "[{done}/{total}] h={} dof={} depth={}{form} seed={}: e_L2 {:.3e} e_H1 {:.3e} ({:.1}s)",
                s.h, s.dof, s.depth, s.seed, r.errors.e_l2, r.errors.e_h1, r.total_seconds
            ),
            Err(e) => eprintln!(
                "[{done}/{total}] h={} dof={} depth={}{form} seed={}: {e}",
                s.h, s.dof, s.depth, s.seed
            ),
        }
    })?;
    let failed = outcomes.iter().filter(|o| o.result.is_err()).count();
    println!("{} runs, {failed} failed; tables in {}", outcomes.len(), dir.display());
    Ok(failed == 0)
}

fn dump_grid(record: &Path, resolution: usize, output: Option<&Path>) -> Result<()> {
    let rec = RunRecord::load(record).with_context(|| format!("loading {}", record.display()))?;
    let rows = match output {
        Some(path) => {
            let mut buf = Vec::new();
            let rows = dump_solution_grid(&rec, resolution, &mut buf)?;
            write_atomic(path, &buf)?;
            rows
        }
        None => dump_solution_grid(&rec, resolution, io::stdout().lock())?,
    };
    eprintln!("{rows} grid points");
    Ok(())
}

/// Error chain without repeating causes a message already quotes.
fn report(err: &anyhow::Error) -> String {
    let mut text = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !text.contains(&msg) {
            if !text.is_empty() {
                text.push_str(": ");
            }
            text.push_str(&msg);
        }
    }
    text
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve { config, opts } => solve(config, opts).map(|()| true),
        Command::Sweep { config, opts } => sweep(config, opts),
        Command::DumpGrid {
            record,
            resolution,
            output,
        } => dump_grid(record, *resolution, output.as_deref()).map(|()| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {}", report(&e));
            ExitCode::FAILURE
        }
    }
}
