//! Argument handling and subcommands of `ocpec-bench`.
//!
//! Flags are folded into the default [`BenchmarkSpec`] first; a `--config` JSON file
//! is overlaid last, so values in the file win over flags.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ocpec_core::bench::{
    geometry_demo, read_trajectory_csv, run, verify_solution, write_geometry_csv, BenchmarkSpec, RunReport,
};
use ocpec_core::config::apply_overlay;
use serde_json::{json, Map, Value};

#[derive(Debug, Parser)]
#[command(name = "ocpec-bench", version, about = "Affine DVI benchmark, gap geometry demo and solution verification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the benchmark at one relaxation value or along the continuation.
    Run(RunArgs),
    /// Classify a (λ, η) grid against the scalar relaxed gap constraint.
    Geometry(GeometryArgs),
    /// Recompute residuals of a trajectory CSV.
    Verify(VerifyArgs),
    /// Print the effective configuration as JSON.
    PrintConfig(SpecArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Mode {
    SingleS,
    Continuation,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Projector {
    Auto,
    BoxFast,
    Polyhedral,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Init {
    Ones,
    Zeros,
    Random,
}

/// Flags shared by every command that builds a [`BenchmarkSpec`].
#[derive(Debug, Clone, Default, Args)]
pub struct SpecArgs {
    /// JSON config tree; its values override flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Problem id (only `affine_dvi` is built in; other problems come from a config file).
    #[arg(long)]
    pub problem: Option<String>,
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Number of stages N.
    #[arg(long = "stages")]
    pub n_stages: Option<usize>,
    /// Horizon T.
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Relaxation parameter for `single-s`.
    #[arg(long)]
    pub s: Option<f64>,
    #[arg(long)]
    pub s_init: Option<f64>,
    #[arg(long)]
    pub s_final: Option<f64>,
    #[arg(long)]
    pub kappa_t: Option<f64>,
    #[arg(long)]
    pub kappa_e: Option<f64>,
    /// Penalty μ on the auxiliary gap variables.
    #[arg(long)]
    pub mu: Option<f64>,
    /// Gap regularization c.
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub eps_kkt: Option<f64>,
    #[arg(long)]
    pub eps_sd: Option<f64>,
    #[arg(long)]
    pub eps_p: Option<f64>,
    #[arg(long)]
    pub eps_d: Option<f64>,
    #[arg(long)]
    pub eps_c: Option<f64>,
    /// Iteration cap per relaxation value.
    #[arg(long)]
    pub k_max: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of initial guesses; start i uses seed + i.
    #[arg(long)]
    pub starts: Option<usize>,
    #[arg(long)]
    pub init: Option<Init>,
    #[arg(long)]
    pub projector: Option<Projector>,
    /// Evaluate stage projectors on worker threads.
    #[arg(long)]
    pub parallel: bool,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub spec: SpecArgs,
    #[arg(short, long, default_value = "out")]
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct GeometryArgs {
    #[arg(long, default_value_t = 0.5)]
    pub c: f64,
    #[arg(long, default_value_t = 0.1)]
    pub s: f64,
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    pub b_lower: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub b_upper: f64,
    #[arg(long, default_value_t = 500)]
    pub grid: usize,
    #[arg(short, long, default_value = "out")]
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    /// Trajectory CSV written by `run`.
    pub trajectory: PathBuf,
    #[command(flatten)]
    pub spec: SpecArgs,
    /// Pass threshold for every residual.
    #[arg(long, default_value_t = 2e-3)]
    pub tol: f64,
}

fn set(root: &mut Map<String, Value>, path: &[&str], value: Value) {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut node = root;
    for p in parents {
        node = node
            .entry(p.to_string())
            .or_insert_with(|| Value::Object(Map::new()))
            .as_object_mut()
            .expect("object node");
    }
    node.insert(last.to_string(), value);
}

/// JSON overlay holding only the flags that were given.
pub fn flag_overlay(a: &SpecArgs) -> Value {
    let mut o = Map::new();
    if let Some(p) = &a.problem {
        set(&mut o, &["problem"], json!({ "id": p }));
    }
    if let Some(m) = a.mode {
        let m = match m {
            Mode::SingleS => "single_s",
            Mode::Continuation => "continuation",
        };
        set(&mut o, &["mode"], json!(m));
    }
    if let Some(i) = a.init {
        let i = match i {
            Init::Ones => "ones",
            Init::Zeros => "zeros",
            Init::Random => "random",
        };
        set(&mut o, &["initial_guess"], json!(i));
    }
    if let Some(p) = a.projector {
        let p = match p {
            Projector::Auto => "auto",
            Projector::BoxFast => "box_fast",
            Projector::Polyhedral => "polyhedral",
        };
        set(&mut o, &["sgcl", "projector_path"], json!(p));
    }
    if a.parallel {
        set(&mut o, &["sgcl", "parallel"], json!(true));
    }
    let numbers: [(&[&str], Option<Value>); 17] = [
        (&["n_stages"], a.n_stages.map(Value::from)),
        (&["horizon"], a.horizon.map(Value::from)),
        (&["s"], a.s.map(Value::from)),
        (&["sgcl", "continuation", "s_init"], a.s_init.map(Value::from)),
        (&["sgcl", "continuation", "s_final"], a.s_final.map(Value::from)),
        (&["sgcl", "continuation", "kappa_t"], a.kappa_t.map(Value::from)),
        (&["sgcl", "continuation", "kappa_e"], a.kappa_e.map(Value::from)),
        (&["sgcl", "mu"], a.mu.map(Value::from)),
        (&["gap", "c"], a.c.map(Value::from)),
        (&["sgcl", "eps_kkt"], a.eps_kkt.map(Value::from)),
        (&["sgcl", "eps_sd"], a.eps_sd.map(Value::from)),
        (&["sgcl", "eps_p"], a.eps_p.map(Value::from)),
        (&["sgcl", "eps_d"], a.eps_d.map(Value::from)),
        (&["sgcl", "eps_c"], a.eps_c.map(Value::from)),
        (&["sgcl", "k_max"], a.k_max.map(Value::from)),
        (&["seed"], a.seed.map(Value::from)),
        (&["starts"], a.starts.map(Value::from)),
    ];
    for (path, v) in numbers {
        if let Some(v) = v {
            set(&mut o, path, v);
        }
    }
    Value::Object(o)
}

/// Defaults, then flags, then the config file.
pub fn build_spec(a: &SpecArgs) -> Result<BenchmarkSpec> {
    let mut spec = apply_overlay(&BenchmarkSpec::default(), &flag_overlay(a)).context("invalid flag value")?;
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        spec = apply_overlay(&spec, &file).with_context(|| format!("applying {}", path.display()))?;
    }
    spec.validate()?;
    Ok(spec)
}

pub fn summarize(report: &RunReport, out: &mut impl Write) -> Result<()> {
    for start in &report.starts {
        writeln!(out, "start {} (seed {}): {}", start.start, start.seed, start.status.as_str())?;
        for r in &start.records {
            writeln!(
                out,
                "  s = {:<10.3e} iterations {:>3}  cost {:>12.6e}  max Φ {:.3e}  time {:.3} s  {}",
                r.s,
                r.iterations,
                r.cost,
                r.max_natural_residual,
                r.timings.total.as_secs_f64(),
                r.status.as_str()
            )?;
        }
    }
    for a in &report.artifacts {
        writeln!(out, "wrote {}", a.display())?;
    }
    Ok(())
}

/// Returns the process exit code: 0 iff every start reached a `Stop*` termination.
pub fn cmd_run(a: &RunArgs, out: &mut impl Write) -> Result<i32> {
    let spec = build_spec(&a.spec)?;
    let report = run(&spec, &a.output_dir)?;
    summarize(&report, out)?;
    Ok(if report.converged() { 0 } else { 1 })
}

pub fn cmd_geometry(a: &GeometryArgs, out: &mut impl Write) -> Result<i32> {
    let table = geometry_demo(a.c, a.s, a.b_lower, a.b_upper, a.grid)?;
    fs::create_dir_all(&a.output_dir)?;
    let path = a.output_dir.join("geometry.csv");
    write_geometry_csv(&path, &table)?;
    let feasible = table.points.iter().filter(|p| p.feasible).count();
    let d = table.disagreements();
    writeln!(out, "{} points, {feasible} in the relaxed set, {d} classification disagreements", table.points.len())?;
    writeln!(out, "wrote {}", path.display())?;
    Ok(if d == 0 { 0 } else { 1 })
}

pub fn cmd_verify(a: &VerifyArgs, out: &mut impl Write) -> Result<i32> {
    let spec = build_spec(&a.spec)?;
    let problem = spec.build_problem()?;
    let trajectories = read_trajectory_csv(&a.trajectory)?;
    if trajectories.is_empty() {
        bail!("{} holds no trajectory rows", a.trajectory.display());
    }
    let mut all_pass = true;
    for t in &trajectories {
        let v = verify_solution(&problem, t, a.tol)?;
        all_pass &= v.pass();
        writeln!(
            out,
            "start {}: max Φ {:.3e}, dynamics {:.3e}, path {:.3e}, set {:.3e} against tol {:.1e}: {}",
            t.start,
            v.max_natural_residual,
            v.max_dynamics_residual,
            v.max_path_violation,
            v.max_set_violation,
            v.tol,
            if v.pass() { "pass" } else { "fail" }
        )?;
        if !v.flagged_stages.is_empty() {
            writeln!(out, "  stages above tol: {:?}", v.flagged_stages)?;
        }
    }
    Ok(if all_pass { 0 } else { 1 })
}

pub fn cmd_print_config(a: &SpecArgs, out: &mut impl Write) -> Result<i32> {
    let spec = build_spec(a)?;
    writeln!(out, "{}", serde_json::to_string_pretty(&spec)?)?;
    Ok(0)
}

pub fn execute(cli: &Cli, out: &mut impl Write) -> Result<i32> {
    match &cli.command {
        Command::Run(a) => cmd_run(a, out),
        Command::Geometry(a) => cmd_geometry(a, out),
        Command::Verify(a) => cmd_verify(a, out),
        Command::PrintConfig(a) => cmd_print_config(a, out),
    }
}
