//! Command-line frontend: kernel inspection, operator evaluation and
//! decomposition, limit driving, counterexample tables, Dirichlet solving,
//! and viscosity checks. JSON is the machine interface, CSV the plotting
//! interface.

mod configs;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use nlop_core::analysis;
use nlop_core::dirichlet::{self, SolverConfig};
use nlop_core::exprfunc::{builtins, GrowthClass, ScalarField};
use nlop_core::kernels::{self, Kernel, KernelName, KernelSpec};
use nlop_core::operator::{self, CutoffSpec};
use nlop_core::quadrature::QuadConfig;
use nlop_core::viscosity;

use output::{envelope, write_json, Csv};

#[derive(Parser)]
#[command(
    name = "nlop",
    version,
    about = "Nonlocal integral operators on functions with polynomial growth"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inspect or validate the built-in kernels.
    Kernels {
        #[command(subcommand)]
        action: KernelsCmd,
    },
    /// Decompose A(τu)(x) into polynomial and integral parts.
    Eval(EvalArgs),
    /// Drive the truncation radius to infinity on a grid.
    Converge(ConvergeArgs),
    /// Closed form vs quadrature for the linear-growth counterexample.
    Counterexample(CounterexampleArgs),
    /// Solve Dirichlet problems from a config file.
    Dirichlet {
        #[command(subcommand)]
        action: DirichletCmd,
    },
    /// Touching-test checks from a config file.
    Viscosity {
        #[command(subcommand)]
        action: ViscosityCmd,
    },
}

#[derive(Subcommand)]
enum KernelsCmd {
    /// Print the metadata of every built-in kernel.
    List,
    /// Numerically spot-check the integrability, symmetry and sign
    /// hypotheses of one kernel.
    Validate(ValidateArgs),
}

#[derive(Subcommand)]
enum DirichletCmd {
    /// Solve the standard or generalized problem.
    Solve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compute the homogeneous solution family and its Gram matrix.
    Family {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Subcommand)]
enum ViscosityCmd {
    /// Run a paraboloid touching battery against a candidate (u, f).
    Check {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args, Serialize, Clone)]
struct KernelArgs {
    /// morse | buckingham | gauss | abel | mollifier | frac_lap | frac_lap_comparable
    #[arg(long)]
    kernel: String,
    /// Ambient dimension (1 or 2).
    #[arg(long, default_value_t = 1)]
    n: usize,
    #[arg(long)]
    s: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long = "Lambda")]
    lambda_upper: Option<f64>,
    /// Desingularization level ε (caps the kernel at 1/ε).
    #[arg(long)]
    eps: Option<f64>,
    /// Use the exact normalization constant as λ = Λ.
    #[arg(long, default_value_t = false)]
    normalized: bool,
}

impl KernelArgs {
    fn build(&self) -> Result<Kernel> {
        let spec = KernelSpec {
            name: KernelName::parse(&self.kernel)?,
            dim: self.n,
            s: self.s,
            lambda: self.lambda,
            lambda_upper: self.lambda_upper,
            epsilon: self.eps,
            normalized: self.normalized,
        };
        Ok(kernels::build(spec)?)
    }
}

#[derive(Args, Serialize, Clone)]
struct QuadArgs {
    #[arg(long, default_value_t = 1e-9)]
    abs_tol: f64,
    #[arg(long, default_value_t = 1e-8)]
    rel_tol: f64,
}

impl QuadArgs {
    fn to_config(&self) -> QuadConfig {
        QuadConfig::with_tols(self.abs_tol, self.rel_tol)
    }
}

#[derive(Args, Serialize)]
struct ValidateArgs {
    #[command(flatten)]
    kernel: KernelArgs,
    #[arg(long, default_value_t = 2.0)]
    theta: f64,
    #[arg(long, default_value_t = 0)]
    m: usize,
    #[arg(long, default_value_t = 128)]
    samples: usize,
    /// Seed for the sampled designs (embedded in the report).
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[command(flatten)]
    quad: QuadArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    #[command(flatten)]
    kernel: KernelArgs,
    /// Expression in x1..xn or builtin descriptor like getoor(s=0.5).
    #[arg(long)]
    func: String,
    /// Evaluation point, comma-separated coordinates.
    #[arg(long)]
    x: String,
    /// Cut-off: sharp:R or smooth:R,W.
    #[arg(long, default_value = "sharp:8")]
    tau: String,
    #[arg(long, default_value_t = 0)]
    m: usize,
    /// Override the growth exponent metadata of --func.
    #[arg(long)]
    growth: Option<f64>,
    #[command(flatten)]
    quad: QuadArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct ConvergeArgs {
    #[command(flatten)]
    kernel: KernelArgs,
    #[arg(long)]
    func: String,
    #[arg(long, default_value_t = 0)]
    m: usize,
    /// Comma-separated increasing radii, first ≥ 4.
    #[arg(long = "R-schedule", default_value = "4,8,16,32")]
    r_schedule: String,
    #[arg(long)]
    growth: Option<f64>,
    #[command(flatten)]
    quad: QuadArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct CounterexampleArgs {
    #[arg(long)]
    k: f64,
    #[arg(long = "R")]
    r: f64,
    /// Number of grid points on [−0.9, 0.9].
    #[arg(long, default_value_t = 9)]
    grid: usize,
    #[command(flatten)]
    quad: QuadArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn main() -> ExitCode {
    init_thread_pool();
    let cli = Cli::parse();
    match run(cli) {
        Ok(converged) => {
            if converged {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// NLOP_THREADS caps the worker pool.
fn init_thread_pool() {
    if let Ok(v) = std::env::var("NLOP_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Kernels { action } => match action {
            KernelsCmd::List => kernels_list(),
            KernelsCmd::Validate(args) => kernels_validate(args),
        },
        Command::Eval(args) => eval_cmd(args),
        Command::Converge(args) => converge_cmd(args),
        Command::Counterexample(args) => counterexample_cmd(args),
        Command::Dirichlet { action } => match action {
            DirichletCmd::Solve { config } => dirichlet_solve(&config),
            DirichletCmd::Family { config } => dirichlet_family(&config),
        },
        Command::Viscosity { action } => match action {
            ViscosityCmd::Check { config } => viscosity_check(&config),
        },
    }
}

fn parse_point(s: &str, n: usize) -> Result<Vec<f64>> {
    let coords: Vec<f64> = s
        .split(',')
        .map(|c| c.trim().parse::<f64>().context("bad coordinate"))
        .collect::<Result<_>>()?;
    if coords.len() != n {
        bail!("point '{s}' has {} coordinates, expected {n}", coords.len());
    }
    Ok(coords)
}

fn parse_tau(s: &str) -> Result<CutoffSpec> {
    let (kind, params) = s
        .split_once(':')
        .with_context(|| format!("cutoff '{s}' is not kind:params"))?;
    let spec = match kind {
        "sharp" => CutoffSpec::Sharp {
            r: params.trim().parse()?,
        },
        "smooth" => {
            let (r, w) = params
                .split_once(',')
                .with_context(|| "smooth cutoff needs R,W")?;
            CutoffSpec::Smooth {
                r: r.trim().parse()?,
                width: w.trim().parse()?,
            }
        }
        other => bail!("unknown cutoff kind '{other}'"),
    };
    spec.validate()?;
    Ok(spec)
}

fn parse_schedule(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|c| c.trim().parse::<f64>().context("bad schedule entry"))
        .collect()
}

fn field_with_overrides(src: &str, n: usize, growth: Option<f64>) -> Result<ScalarField> {
    let mut f = builtins::field_from_str(src, n)?;
    if let Some(g) = growth {
        f = f.with_growth(GrowthClass::Power { exponent: g });
    }
    Ok(f)
}

fn kernels_list() -> Result<bool> {
    println!(
        "{:<22} {:>4} {:>12} {:>14} {:>18} {:>14}",
        "kernel", "dim", "nonnegative", "singularity", "admissible theta", "taylor order"
    );
    for name in [
        KernelName::Morse,
        KernelName::Buckingham,
        KernelName::Gauss,
        KernelName::Abel,
        KernelName::Mollifier,
        KernelName::FracLap,
        KernelName::FracLapComparable,
    ] {
        for dim in [1usize, 2] {
            let mut spec = KernelSpec::new(name, dim);
            if matches!(name, KernelName::FracLap | KernelName::FracLapComparable) {
                spec.s = Some(0.5);
            }
            let k = kernels::build(spec)?;
            let (lo, hi) = k.admissible_theta;
            let theta = if lo >= hi {
                "empty".to_string()
            } else if lo == 0.0 {
                format!("[0, {hi}]")
            } else {
                format!("({lo}, {hi}]")
            };
            println!(
                "{:<22} {:>4} {:>12} {:>14} {:>18} {:>14}",
                name.as_str(),
                dim,
                k.nonnegative,
                k.singularity_order,
                theta,
                k.max_taylor_order
            );
        }
    }
    Ok(true)
}

fn kernels_validate(args: ValidateArgs) -> Result<bool> {
    let kernel = args.kernel.build()?;
    let report = kernels::validate_hypotheses(
        &kernel,
        args.theta,
        args.m,
        args.samples,
        args.seed,
        &args.quad.to_config(),
    )?;
    let value = envelope(&args, &report)?;
    write_json(args.out.as_deref(), &value)?;
    Ok(true)
}

fn eval_cmd(args: EvalArgs) -> Result<bool> {
    let kernel = args.kernel.build()?;
    let u = field_with_overrides(&args.func, args.kernel.n, args.growth)?;
    let x = parse_point(&args.x, args.kernel.n)?;
    let tau = parse_tau(&args.tau)?;
    let cfg = args.quad.to_config();
    let dec = operator::decompose(&u, &kernel, &tau, args.m, &x, &cfg)?;
    let converged = dec.f1.converged && dec.f2.converged && dec.f_star.converged;
    let value = envelope(&args, &dec)?;
    write_json(args.out.as_deref(), &value)?;
    Ok(converged)
}

fn converge_cmd(args: ConvergeArgs) -> Result<bool> {
    let kernel = args.kernel.build()?;
    let u = field_with_overrides(&args.func, args.kernel.n, args.growth)?;
    let schedule = parse_schedule(&args.r_schedule)?;
    let cfg = args.quad.to_config();
    let grid = operator::b1_grid(args.kernel.n);
    let report = operator::limit_driver(&u, &kernel, args.m, &grid, &schedule, &cfg)?;

    if let Some(csv_path) = &args.csv {
        let mut header: Vec<String> = vec!["x".into()];
        header.extend(report.r_schedule.iter().map(|r| format!("f_R={r}")));
        header.push("f_limit".into());
        let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
        let mut csv = Csv::new(&header_refs);
        for (i, x) in report.grid.iter().enumerate() {
            let mut row = vec![Csv::num(x[0])];
            for r_idx in 0..report.r_schedule.len() {
                row.push(Csv::num(report.f_r_values[r_idx][i]));
            }
            row.push(Csv::num(report.f_limit[i]));
            csv.row(&row);
        }
        csv.write(csv_path)?;
    }

    let converged = report.converged;
    let value = envelope(&args, &report)?;
    write_json(args.out.as_deref(), &value)?;
    Ok(converged)
}

#[derive(Serialize)]
struct CounterexampleRow {
    x: f64,
    closed_form: f64,
    quadrature: f64,
    rel_err: f64,
    operator_value: f64,
    operator_plus_closed: f64,
    fk: f64,
    fk_minus_2x: f64,
}

fn counterexample_cmd(args: CounterexampleArgs) -> Result<bool> {
    if args.grid < 1 {
        bail!("grid must have at least one point");
    }
    let case_check = analysis::CounterexampleCase::new(args.k, args.r, 0.0)?;
    let _ = case_check;
    let cfg = args.quad.to_config();
    let kernel = kernels::build(KernelSpec::frac_lap(1, 0.5))?;
    let u = analysis::counterexample_field(args.k)?;

    let mut rows = Vec::new();
    let mut converged = true;
    for i in 0..args.grid {
        let x = if args.grid == 1 {
            0.0
        } else {
            -0.9 + 1.8 * i as f64 / (args.grid - 1) as f64
        };
        let closed = analysis::counterexample_truncated(args.k, args.r, x);
        let quad = nlop_core::quadrature::integrate_region(
            &|y: &[f64]| args.k * y[0] / ((y[0] - x) * (y[0] - x)),
            &nlop_core::quadrature::Region::interval(args.k, args.r),
            &[],
            &cfg,
        );
        converged &= quad.converged;
        let op = operator::direct_cutoff_apply(
            &u,
            &kernel,
            &CutoffSpec::Sharp { r: args.r },
            &[x],
            &cfg,
        )?;
        converged &= op.converged;
        let fk = analysis::counterexample_fk(args.k, x);
        rows.push(CounterexampleRow {
            x,
            closed_form: closed,
            quadrature: quad.value,
            rel_err: (quad.value - closed).abs() / closed.abs().max(1e-300),
            operator_value: op.value,
            operator_plus_closed: op.value + closed,
            fk,
            fk_minus_2x: fk - 2.0 * x,
        });
    }

    if let Some(csv_path) = &args.csv {
        let mut csv = Csv::new(&[
            "x",
            "closed_form",
            "quadrature",
            "rel_err",
            "operator_value",
            "fk",
            "fk_minus_2x",
        ]);
        for r in &rows {
            csv.row(&[
                Csv::num(r.x),
                Csv::num(r.closed_form),
                Csv::num(r.quadrature),
                Csv::num(r.rel_err),
                Csv::num(r.operator_value),
                Csv::num(r.fk),
                Csv::num(r.fk_minus_2x),
            ]);
        }
        csv.write(csv_path)?;
    }

    let value = envelope(&args, &rows)?;
    write_json(args.out.as_deref(), &value)?;
    Ok(converged)
}

#[derive(Serialize)]
struct DirichletReport {
    nodes: Vec<f64>,
    values: Vec<f64>,
    residual: f64,
    residual_points: Vec<(f64, f64)>,
    verification_residual: Option<f64>,
    lifted_rhs: Option<Vec<f64>>,
}

fn dirichlet_solve(path: &Path) -> Result<bool> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let config: configs::DirichletConfig = toml::from_str(&text)?;
    let kernel = kernels::build(config.kernel.to_spec()?)?;
    let quad = config.quad.to_config();
    let solver_cfg = SolverConfig {
        n_nodes: config.problem.nodes,
        quad,
        residual_tol: 0.1,
    };
    let n = config.kernel.dim;
    let f = builtins::field_from_str(&config.problem.f, n)?;

    let (report, converged) = match config.problem.kind.as_str() {
        "standard" => {
            let g_src = config
                .problem
                .g
                .as_deref()
                .context("standard problem needs exterior data g")?;
            let g = exterior_field(g_src, n)?;
            let sol = dirichlet::solve_standard(&kernel, &f, &g, &solver_cfg)?;
            let ok = sol.residual <= solver_cfg.residual_tol;
            (
                DirichletReport {
                    nodes: sol.nodes,
                    values: sol.values,
                    residual: sol.residual,
                    residual_points: sol.residual_points,
                    verification_residual: None,
                    lifted_rhs: None,
                },
                ok,
            )
        }
        "generalized" => {
            let u0_src = config
                .problem
                .u0
                .as_deref()
                .context("generalized problem needs exterior data u0")?;
            let u0 = builtins::field_from_str(u0_src, n)?;
            let gen =
                dirichlet::solve_generalized(&kernel, &f, &u0, config.problem.m, &solver_cfg)?;
            let ok = gen.inner.residual <= solver_cfg.residual_tol;
            (
                DirichletReport {
                    nodes: gen.inner.nodes.clone(),
                    values: gen.inner.values.clone(),
                    residual: gen.inner.residual,
                    residual_points: gen.inner.residual_points.clone(),
                    verification_residual: Some(gen.verification_residual),
                    lifted_rhs: Some(gen.lifted_rhs.clone()),
                },
                ok,
            )
        }
        other => bail!("unknown problem kind '{other}'"),
    };

    if let Some(csv_name) = &config.output.csv {
        let mut csv = Csv::new(&["node", "value"]);
        for (x, v) in report.nodes.iter().zip(&report.values) {
            csv.row(&[Csv::num(*x), Csv::num(*v)]);
        }
        csv.write(Path::new(csv_name))?;
    }
    let value = envelope(&config, &report)?;
    write_json(config.output.json.as_deref().map(Path::new), &value)?;
    Ok(converged)
}

/// Exterior data: "0" means zero with compact support metadata (fast tail
/// handling); anything else parses as usual.
fn exterior_field(src: &str, n: usize) -> Result<ScalarField> {
    if src.trim() == "0" {
        return Ok(builtins::constant(n, 0.0).with_growth(GrowthClass::Compact { radius: 1.0 }));
    }
    Ok(builtins::field_from_str(src, n)?)
}

#[derive(Serialize)]
struct FamilyReport {
    dimension: usize,
    gram_determinant: f64,
    nodes: Vec<f64>,
    columns: Vec<Vec<f64>>,
    residuals: Vec<f64>,
}

fn dirichlet_family(path: &Path) -> Result<bool> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let config: configs::DirichletConfig = toml::from_str(&text)?;
    let kernel = kernels::build(config.kernel.to_spec()?)?;
    let solver_cfg = SolverConfig {
        n_nodes: config.problem.nodes,
        quad: config.quad.to_config(),
        residual_tol: 0.1,
    };
    let (family, det) = dirichlet::solution_family(&kernel, config.problem.m, &solver_cfg)?;
    let nodes = family
        .first()
        .map(|s| s.nodes.clone())
        .unwrap_or_default();
    let report = FamilyReport {
        dimension: family.len(),
        gram_determinant: det,
        nodes: nodes.clone(),
        columns: family.iter().map(|s| s.values.clone()).collect(),
        residuals: family.iter().map(|s| s.residual).collect(),
    };

    if let Some(csv_name) = &config.output.csv {
        let mut header = vec!["node".to_string()];
        header.extend((0..family.len()).map(|i| format!("u_{i}")));
        let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
        let mut csv = Csv::new(&header_refs);
        for (i, x) in nodes.iter().enumerate() {
            let mut row = vec![Csv::num(*x)];
            for col in &report.columns {
                row.push(Csv::num(col[i]));
            }
            csv.row(&row);
        }
        csv.write(Path::new(csv_name))?;
    }
    let value = envelope(&config, &report)?;
    write_json(config.output.json.as_deref().map(Path::new), &value)?;
    Ok(true)
}

fn viscosity_check(path: &Path) -> Result<bool> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let config: configs::ViscosityFileConfig = toml::from_str(&text)?;
    let kernel = kernels::build(config.kernel.to_spec()?)?;
    let n = config.kernel.dim;
    let u = builtins::field_from_str(&config.problem.u, n)?;
    let f = builtins::field_from_str(&config.problem.f, n)?;

    let vcfg = viscosity::ViscosityConfig {
        quad: config.quad.to_config(),
        margin_tol: config.problem.margin_tol,
        ..viscosity::ViscosityConfig::default()
    };
    let mut tests = Vec::new();
    for &x0 in &config.battery.x0 {
        let point = vec![x0; n.min(1)];
        let point = if n == 1 { point } else { vec![x0, 0.0] };
        tests.extend(viscosity::paraboloid_family(
            &point,
            &config.battery.curvatures,
            &u,
            &vcfg,
        ));
    }

    let f_grid: Vec<(Vec<f64>, f64)> = (0..9)
        .map(|i| {
            let x = -0.9 + 1.8 * i as f64 / 8.0;
            let p = if n == 1 { vec![x] } else { vec![x, 0.0] };
            let fv = f.eval(&p);
            (p, fv)
        })
        .collect();

    let report = viscosity::check_viscosity(
        &u,
        &kernel,
        &f_grid,
        config.problem.m,
        &config.problem.r_schedule,
        &tests,
        &vcfg,
    )?;
    let pass = report.pass;
    let value = envelope(&config, &report)?;
    write_json(config.output.json.as_deref().map(Path::new), &value)?;
    Ok(pass)
}
