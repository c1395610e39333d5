//! Command-line front end: single runs, convergence studies over `(Lx, Lt)`
//! grids and vertex-field export.
//!
//! Exit codes: 0 on success, 1 on a fatal solver or geometry error, 2 on a
//! configuration error. Data files contain no timestamps; run settings go to
//! a `metadata.txt` sidecar.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::analysis::{error_norms, format_sci, mass_trace, AnalysisError, EocTable, Norm};
use crate::assembly::{FormVariant, GhostVariant};
use crate::cases::{builtin_case, load_case, CaseError, ProblemCase, BUILTIN_CASES};
use crate::mesh::{
    build_structured_mesh, refine_times, subdivisions_for, BackgroundMesh, Jitter, MeshError,
};
use crate::par::{init_thread_pool, Exec};
use crate::stepper::{run, step_count, Scheme, SolutionTrace, StepConfig, StepError};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unknown case, unreadable case file. Exit code 2.
    Config(String),
    /// Solver, geometry or output failure. Exit code 1.
    Fatal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Fatal(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Fatal(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<StepError> for CliError {
    fn from(e: StepError) -> Self {
        match e {
            StepError::ConfigInvalid(_) => CliError::Config(e.to_string()),
            other => CliError::Fatal(other.to_string()),
        }
    }
}

impl From<CaseError> for CliError {
    fn from(e: CaseError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<MeshError> for CliError {
    fn from(e: MeshError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        CliError::Fatal(e.to_string())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Fatal(format!("{}: {e}", path.display()))
}

#[derive(Parser, Debug)]
#[command(
    name = "cutmove",
    version,
    about = "Unfitted FEM for a conserved scalar in a moving 2D domain"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run one simulation and write diagnostics, errors and the mass trace.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long = "Lx", default_value_t = 0)]
        lx: usize,
        #[arg(long = "Lt", default_value_t = 0)]
        lt: usize,
    },
    /// Run a grid of space and time levels and write one table per norm.
    Convergence {
        #[command(flatten)]
        common: Common,
        /// Space levels, `a..b` (inclusive) or a single level.
        #[arg(long = "Lx", default_value = "0..2")]
        lx: String,
        /// Time levels, `a..b` (inclusive) or a single level.
        #[arg(long = "Lt", default_value = "0..2")]
        lt: String,
        /// Which cells of the grid to run.
        #[arg(long, default_value = "full", value_parser = ["full", "diagonal", "xtt"])]
        pattern: String,
        /// Comma-separated subset of l2l2, l2h1, linfl2.
        #[arg(long, default_value = "l2l2,l2h1,linfl2")]
        norms: String,
    },
    /// Write the vertex table `x y phi u active` of one time level.
    Export {
        #[command(flatten)]
        common: Common,
        #[arg(long = "Lx", default_value_t = 0)]
        lx: usize,
        #[arg(long = "Lt", default_value_t = 0)]
        lt: usize,
        /// Time level to export; defaults to the final one.
        #[arg(long)]
        step: Option<usize>,
    },
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Built-in case name or path to a case file.
    pub case: String,
    #[arg(long)]
    pub scheme: Option<Scheme>,
    #[arg(long)]
    pub ghost: Option<GhostVariant>,
    #[arg(long)]
    pub form: Option<FormVariant>,
    #[arg(long)]
    pub cgamma: Option<f64>,
    #[arg(long)]
    pub conservative: bool,
    /// Time step `T / n`; overrides the `Lt`-derived step.
    #[arg(long = "dt-div")]
    pub dt_div: Option<usize>,
    #[arg(long)]
    pub jitter: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Run the inner loops sequentially.
    #[arg(long)]
    pub sequential: bool,
}

/// Parses `args` (including the program name), runs, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Ok(v) = std::env::var("CUTMOVE_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                init_thread_pool(n);
            }
            _ => {
                eprintln!(
                    "configuration error: CUTMOVE_THREADS must be a positive integer, got '{v}'"
                );
                return 2;
            }
        }
    }
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: &Command) -> Result<(), CliError> {
    match command {
        Command::Run { common, lx, lt } => cmd_run(common, *lx, *lt),
        Command::Convergence {
            common,
            lx,
            lt,
            pattern,
            norms,
        } => {
            let lx = parse_range(lx)?;
            let lt = parse_range(lt)?;
            let norms = parse_norms(norms)?;
            cmd_convergence(common, lx, lt, pattern, &norms)
        }
        Command::Export {
            common,
            lx,
            lt,
            step,
        } => cmd_export(common, *lx, *lt, *step),
    }
}

/// Resolves a built-in name first, then a file path.
pub fn resolve_case(name: &str) -> Result<ProblemCase, CliError> {
    if BUILTIN_CASES.contains(&name) {
        return Ok(builtin_case(name)?);
    }
    let path = Path::new(name);
    if path.is_file() {
        return Ok(load_case(path)?);
    }
    Err(CliError::Config(format!(
        "unknown case '{name}' (built-in cases: {})",
        BUILTIN_CASES.join(", ")
    )))
}

/// `a..b` inclusive, or a single number.
pub fn parse_range(s: &str) -> Result<Vec<usize>, CliError> {
    let bad = || CliError::Config(format!("invalid level range '{s}'"));
    let (a, b) = match s.split_once("..") {
        Some((a, b)) => (
            a.trim().parse().map_err(|_| bad())?,
            b.trim().parse().map_err(|_| bad())?,
        ),
        None => {
            let v: usize = s.trim().parse().map_err(|_| bad())?;
            (v, v)
        }
    };
    if a > b {
        return Err(bad());
    }
    Ok((a..=b).collect())
}

fn parse_norms(s: &str) -> Result<Vec<Norm>, CliError> {
    s.split(',')
        .map(|n| {
            Norm::ALL
                .into_iter()
                .find(|k| k.name() == n.trim())
                .ok_or_else(|| CliError::Config(format!("unknown norm '{n}'")))
        })
        .collect()
}

/// Background mesh of space level `lx`: the diagonal grid at `h0`, refined `lx` times.
pub fn level_mesh(
    case: &ProblemCase,
    lx: usize,
    jitter: Option<Jitter>,
) -> Result<BackgroundMesh, MeshError> {
    let (nx, ny) = subdivisions_for(case.domain_box, case.h0);
    let base = build_structured_mesh(case.domain_box, nx, ny, jitter)?;
    Ok(refine_times(&base, lx))
}

/// Step configuration with flags taking precedence over case defaults.
pub fn level_config(
    case: &ProblemCase,
    common: &Common,
    lt: usize,
) -> Result<StepConfig, CliError> {
    let d = &case.defaults;
    let dt = match common.dt_div {
        Some(0) => return Err(CliError::Config("--dt-div must be positive".into())),
        Some(n) => case.t_final / n as f64,
        None => case.dt0 / 2f64.powi(lt as i32),
    };
    let cfg = StepConfig {
        dt,
        scheme: common.scheme.or(d.scheme).unwrap_or_default(),
        ghost: common.ghost.or(d.ghost).unwrap_or_default(),
        form: common.form.or(d.form).unwrap_or_default(),
        c_gamma: common.cgamma.or(d.c_gamma).unwrap_or(1.0),
        conservative: common.conservative || d.conservative.unwrap_or(false),
        exec: if common.sequential {
            Exec::Sequential
        } else {
            Exec::Parallel
        },
        ..StepConfig::default()
    };
    step_count(case.t_final, cfg.dt)?;
    Ok(cfg)
}

fn jitter_of(common: &Common) -> Option<Jitter> {
    common.jitter.filter(|&a| a > 0.0).map(|amplitude| Jitter {
        amplitude,
        seed: common.seed,
    })
}

fn simulate(
    case: &ProblemCase,
    common: &Common,
    lx: usize,
    lt: usize,
) -> Result<SolutionTrace, CliError> {
    let cfg = level_config(case, common, lt)?;
    let mesh = Arc::new(level_mesh(case, lx, jitter_of(common))?);
    Ok(run(case, mesh, &cfg)?)
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(io_err(path))
}

fn metadata(
    case: &ProblemCase,
    common: &Common,
    cfg: &StepConfig,
    extra: &[(String, String)],
    notes: &[String],
) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "case = {}", case.name);
    let _ = writeln!(s, "scheme = {}", cfg.scheme);
    let _ = writeln!(s, "ghost = {}", cfg.ghost);
    let _ = writeln!(s, "form = {}", cfg.form);
    let _ = writeln!(s, "cgamma = {}", cfg.c_gamma);
    let _ = writeln!(s, "conservative = {}", cfg.conservative);
    let _ = writeln!(s, "h0 = {}", case.h0);
    let _ = writeln!(s, "dt0 = {}", case.dt0);
    if let Some(n) = common.dt_div {
        let _ = writeln!(s, "dt_div = {n}");
    }
    if let Some(j) = jitter_of(common) {
        let _ = writeln!(s, "jitter = {} seed = {}", j.amplitude, j.seed);
    }
    for (k, v) in extra {
        let _ = writeln!(s, "{k} = {v}");
    }
    for n in notes {
        let _ = writeln!(s, "note = {n}");
    }
    s
}

fn cmd_run(common: &Common, lx: usize, lt: usize) -> Result<(), CliError> {
    let case = resolve_case(&common.case)?;
    let trace = simulate(&case, common, lx, lt)?;
    fs::create_dir_all(&common.out).map_err(io_err(&common.out))?;

    let mut log = String::new();
    for d in &trace.diagnostics {
        let _ = writeln!(log, "{d}");
    }
    write(&common.out.join("diagnostics.log"), &log)?;

    let mass = mass_trace(&trace)?;
    let mut m = String::from("step,t,mass\n");
    for (n, (s, v)) in trace.states.iter().zip(&mass.masses).enumerate() {
        let _ = writeln!(m, "{n},{:.17e},{:.17e}", s.t, v);
    }
    write(&common.out.join("mass.csv"), &m)?;

    if case.exact.is_some() {
        let r = error_norms(&trace, &case, trace.config.exec)?;
        let mut e = String::new();
        let _ = writeln!(e, "l2l2 = {:.17e}", r.l2l2);
        let _ = writeln!(e, "l2h1 = {:.17e}", r.l2h1);
        let _ = writeln!(e, "linfl2 = {:.17e}", r.linf_l2);
        let _ = writeln!(e, "mass_deviation = {:.17e}", r.mass_deviation);
        let _ = writeln!(e, "step,t,l2,h1");
        for (n, s) in trace.states.iter().enumerate() {
            let _ = writeln!(
                e,
                "{n},{:.17e},{:.17e},{:.17e}",
                s.t, r.step_l2[n], r.step_h1[n]
            );
        }
        write(&common.out.join("errors.txt"), &e)?;
    }

    let extra = vec![
        ("Lx".to_string(), lx.to_string()),
        ("Lt".to_string(), lt.to_string()),
        ("dt".to_string(), trace.config.dt.to_string()),
        ("h".to_string(), trace.space.mesh().h().to_string()),
        ("steps".to_string(), trace.diagnostics.len().to_string()),
        (
            "mass_deviation".to_string(),
            format!("{:e}", mass.deviation),
        ),
    ];
    write(
        &common.out.join("metadata.txt"),
        &metadata(&case, common, &trace.config, &extra, &trace.notes),
    )?;
    Ok(())
}

/// Cells `(lt, lx)` of the grid to run for a given pattern.
pub fn grid_cells(lx: &[usize], lt: &[usize], pattern: &str) -> Vec<(usize, usize)> {
    let mut cells = Vec::new();
    for &t in lt {
        for &x in lx {
            let keep = match pattern {
                "diagonal" => t == x,
                "xtt" => t == 2 * x,
                _ => true,
            };
            if keep {
                cells.push((t, x));
            }
        }
    }
    cells
}

fn cmd_convergence(
    common: &Common,
    lx: Vec<usize>,
    lt: Vec<usize>,
    pattern: &str,
    norms: &[Norm],
) -> Result<(), CliError> {
    let case = resolve_case(&common.case)?;
    if case.exact.is_none() {
        return Err(CliError::Config(format!(
            "case '{}' has no exact solution",
            case.name
        )));
    }
    let cells = grid_cells(&lx, &lt, pattern);
    if cells.is_empty() {
        return Err(CliError::Config(
            "the requested grid pattern selects no runs".into(),
        ));
    }
    for &(t, _) in &cells {
        level_config(&case, common, t)?;
    }
    let outer = if common.sequential {
        Exec::Sequential
    } else {
        Exec::Parallel
    };
    let results = outer.map_slice(&cells, |&(t, x)| -> Result<_, CliError> {
        let trace = simulate(&case, common, x, t)?;
        Ok(error_norms(&trace, &case, trace.config.exec)?)
    });
    let (lt0, lx0) = (lt[0], lx[0]);
    let mut grids: Vec<Vec<Vec<Option<f64>>>> =
        vec![vec![vec![None; lx.len()]; lt.len()]; norms.len()];
    for (&(t, x), r) in cells.iter().zip(results) {
        let r = r?;
        for (k, &n) in norms.iter().enumerate() {
            grids[k][t - lt0][x - lx0] = Some(r.norm(n));
        }
    }
    fs::create_dir_all(&common.out).map_err(io_err(&common.out))?;
    for (k, n) in norms.iter().enumerate() {
        let table = EocTable::new(grids[k].clone())?;
        write(
            &common.out.join(format!("{}.csv", n.name())),
            &table.to_csv(),
        )?;
    }
    let cfg = level_config(&case, common, lt0)?;
    let extra = vec![
        ("Lx".to_string(), format!("{}..{}", lx0, lx[lx.len() - 1])),
        ("Lt".to_string(), format!("{}..{}", lt0, lt[lt.len() - 1])),
        ("pattern".to_string(), pattern.to_string()),
        ("runs".to_string(), cells.len().to_string()),
        (
            "eoc_t".to_string(),
            "taken along the finest space column".to_string(),
        ),
        (
            "eoc_x".to_string(),
            "taken along the finest time row".to_string(),
        ),
    ];
    write(
        &common.out.join("metadata.txt"),
        &metadata(&case, common, &cfg, &extra, &case.notes),
    )?;
    Ok(())
}

/// Vertex table `x y phi u active` of one state, 17 significant digits.
pub fn vertex_table(trace: &SolutionTrace, step: usize) -> Option<String> {
    let state = trace.states.get(step)?;
    let mesh = trace.space.mesh();
    let mut s = String::from("x y phi u active\n");
    for (i, p) in mesh.vertices().iter().enumerate() {
        let active = state.u.is_active(i);
        let u = if active {
            state.u.coefficients()[i]
        } else {
            0.0
        };
        let _ = writeln!(
            s,
            "{:.16e} {:.16e} {:.16e} {:.16e} {}",
            p[0],
            p[1],
            state.slice.values[i],
            u,
            u8::from(active)
        );
    }
    Some(s)
}

fn cmd_export(common: &Common, lx: usize, lt: usize, step: Option<usize>) -> Result<(), CliError> {
    let case = resolve_case(&common.case)?;
    let cfg = level_config(&case, common, lt)?;
    let n_steps = step_count(case.t_final, cfg.dt)?;
    let step = step.unwrap_or(n_steps);
    if step > n_steps {
        return Err(CliError::Config(format!(
            "step {step} out of range (run has {n_steps} steps)"
        )));
    }
    let trace = simulate(&case, common, lx, lt)?;
    let table = vertex_table(&trace, step).expect("step checked against the step count");
    fs::create_dir_all(&common.out).map_err(io_err(&common.out))?;
    write(&common.out.join(format!("field_{step:05}.txt")), &table)?;
    let extra = vec![
        ("Lx".to_string(), lx.to_string()),
        ("Lt".to_string(), lt.to_string()),
        ("step".to_string(), step.to_string()),
        ("t".to_string(), format_sci(trace.states[step].t)),
    ];
    write(
        &common.out.join("metadata.txt"),
        &metadata(&case, common, &trace.config, &extra, &trace.notes),
    )?;
    Ok(())
}
