use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sieve_cli::config::{
    CapacityConfig, CapacityKind, ClassifyConfig, ConvergenceConfig, DirectConfig, ExperimentConfig, GammaConfig,
    HomogConfig, ReductionChoice, RegimesConfig, Study, Symmetry, TfEnergyConfig,
};
use sieve_cli::expr::parse_eps;
use sieve_cli::{studies, CliError, Result};
use sieve_core::effective::H0Tag;
use sieve_core::point_process::{MarkLaw, ProcessKind, ProcessSpec};
use sieve_core::sieve_direct::ThinGridOptions;

#[derive(Parser)]
#[command(name = "sieve", version, about = "Neumann sieve experiments")]
struct Cli {
    /// JSON experiment config; subcommand flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Capacity of a ball or flat disk in its cell.
    Capacity(CapacityArgs),
    /// Empirical and analytic effective coefficient.
    Gamma(GammaArgs),
    /// Cluster diagnostics and realization invariants.
    Classify(ClassifyArgs),
    /// Regime and critical size table.
    Regimes(RegimesArgs),
    /// Coupled limit system on the unit square or cube.
    SolveHomog(HomogArgs),
    /// Thin-domain problem with the sieve resolved.
    SolveDirect(DirectArgs),
    /// Energy and bilinear limits of the oscillating test function.
    TfEnergy(TfEnergyArgs),
    /// Direct solutions against the limit system over an eps sweep.
    Convergence(ConvergenceArgs),
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// A single scale, `0.125` or `1/8`.
fn one_eps(s: &str) -> std::result::Result<f64, String> {
    match parse_eps(s).map_err(|e| e.to_string())?.as_slice() {
        [e] => Ok(*e),
        _ => Err(format!("expected one value, got `{s}`")),
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',').map(|t| t.trim().parse::<f64>().map_err(|_| bad(format!("not a number list: `{s}`")))).collect()
}

/// `poisson`, `lattice`, `perturbed-lattice` or `hardcore:<radius>`.
fn parse_kind(s: &str) -> Result<ProcessKind> {
    Ok(match s.split_once(':') {
        None if s == "poisson" => ProcessKind::Poisson,
        None if s == "lattice" => ProcessKind::Lattice { offset: 0.5 },
        None if s == "perturbed-lattice" => ProcessKind::PerturbedLattice,
        Some(("hardcore", r)) => ProcessKind::MaternHardcore { radius: r.parse().map_err(|_| bad("hardcore radius"))? },
        _ => return Err(bad(format!("unknown process `{s}`"))),
    })
}

/// `1.5` for an atom, `0.5:1,2:1` for weighted atoms, `uniform:lo:hi`.
fn parse_marks(s: &str) -> Result<MarkLaw> {
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad(format!("bad mark law `{s}`")));
    if let Some(rest) = s.strip_prefix("uniform:") {
        let (lo, hi) = rest.split_once(':').ok_or_else(|| bad("uniform:lo:hi"))?;
        return Ok(MarkLaw::Uniform { lo: num(lo)?, hi: num(hi)? });
    }
    let atoms = s
        .split(',')
        .map(|a| match a.split_once(':') {
            Some((r, w)) => Ok((num(r)?, num(w)?)),
            None => Ok((num(a)?, 1.0)),
        })
        .collect::<Result<_>>()?;
    Ok(MarkLaw::Discrete { atoms })
}

/// `zero`, `infinite` or `finite:<h0>`.
fn parse_h0(s: &str) -> Result<H0Tag> {
    Ok(match s.split_once(':') {
        None if s == "zero" => H0Tag::Zero,
        None if s == "infinite" => H0Tag::Infinite,
        Some(("finite", h)) => H0Tag::Finite(h.parse().map_err(|_| bad("finite h0"))?),
        _ => return Err(bad(format!("unknown h0 `{s}`"))),
    })
}

#[derive(Args, Default)]
struct ProcessArgs {
    /// poisson, lattice, perturbed-lattice or hardcore:<radius>.
    #[arg(long)]
    process: Option<String>,
    #[arg(long)]
    intensity: Option<f64>,
    /// An atom `1`, atoms `0.5:1,2:1`, or `uniform:lo:hi`.
    #[arg(long)]
    marks: Option<String>,
}

impl ProcessArgs {
    fn apply(&self, p: &mut ProcessSpec) -> Result<()> {
        if let Some(k) = &self.process {
            p.kind = parse_kind(k)?;
        }
        if let Some(i) = self.intensity {
            p.intensity = i;
        }
        if let Some(m) = &self.marks {
            p.marks = parse_marks(m)?;
        }
        Ok(())
    }
}

fn set<T: Clone>(slot: &mut T, v: &Option<T>) {
    if let Some(v) = v {
        *slot = v.clone();
    }
}

fn set_eps(slot: &mut Vec<f64>, v: &Option<String>) -> Result<()> {
    if let Some(s) = v {
        *slot = parse_eps(s)?;
    }
    Ok(())
}

#[derive(Args)]
struct CapacityArgs {
    /// classical, strip, cylinder or planar.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long = "N")]
    n_dim: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    l: Option<f64>,
    /// Comma-separated heights.
    #[arg(long)]
    h: Option<String>,
    /// Fine spacing on the coarsest level, in hole radii.
    #[arg(long)]
    dx: Option<f64>,
}

impl CapacityArgs {
    fn apply(&self, c: &mut CapacityConfig) -> Result<()> {
        if let Some(k) = &self.kind {
            c.kind = match k.as_str() {
                "classical" => CapacityKind::Classical,
                "strip" => CapacityKind::Strip,
                "cylinder" => CapacityKind::Cylinder,
                "planar" => CapacityKind::Planar,
                _ => return Err(bad(format!("unknown capacity kind `{k}`"))),
            };
        }
        set(&mut c.n_dim, &self.n_dim);
        set(&mut c.rho, &self.rho);
        set(&mut c.l, &self.l);
        if let Some(h) = &self.h {
            c.h = parse_list(h)?;
        }
        if let Some(dx) = self.dx {
            c.grid.h = dx;
            c.planar.cells_per_log = 1.0 / dx;
        }
        Ok(())
    }
}

#[derive(Args)]
struct GammaArgs {
    #[command(flatten)]
    process: ProcessArgs,
    #[arg(long = "N")]
    n_dim: Option<usize>,
    #[arg(long)]
    p: Option<f64>,
    /// zero, infinite or finite:<h0>; defaults to the regime of p.
    #[arg(long)]
    h0: Option<String>,
    /// e.g. `1/8..1/64` or `0.1,0.05`.
    #[arg(long)]
    eps: Option<String>,
    #[arg(long)]
    seeds: Option<usize>,
}

impl GammaArgs {
    fn apply(&self, c: &mut GammaConfig) -> Result<()> {
        self.process.apply(&mut c.process)?;
        set(&mut c.n_dim, &self.n_dim);
        set(&mut c.p, &self.p);
        if let Some(h) = &self.h0 {
            c.h0 = Some(parse_h0(h)?);
        }
        set_eps(&mut c.eps, &self.eps)?;
        set(&mut c.seeds, &self.seeds);
        Ok(())
    }
}

#[derive(Args)]
struct ClassifyArgs {
    #[command(flatten)]
    process: ProcessArgs,
    #[arg(long = "N")]
    n_dim: Option<usize>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    eps: Option<String>,
    #[arg(long)]
    seeds: Option<usize>,
    /// Write the first realization per eps as JSON.
    #[arg(long)]
    export: bool,
}

impl ClassifyArgs {
    fn apply(&self, c: &mut ClassifyConfig) -> Result<()> {
        self.process.apply(&mut c.process)?;
        set(&mut c.n_dim, &self.n_dim);
        set(&mut c.p, &self.p);
        set_eps(&mut c.eps, &self.eps)?;
        set(&mut c.seeds, &self.seeds);
        c.export_realizations |= self.export;
        Ok(())
    }
}

#[derive(Args)]
struct RegimesArgs {
    #[arg(long, value_parser = one_eps)]
    eps: Option<f64>,
    /// Comma-separated exponents of `delta = eps^p`.
    #[arg(long)]
    p: Option<String>,
}

impl RegimesArgs {
    fn apply(&self, c: &mut RegimesConfig) -> Result<()> {
        set(&mut c.eps, &self.eps);
        if let Some(p) = &self.p {
            c.p = parse_list(p)?;
        }
        Ok(())
    }
}

#[derive(Args)]
struct HomogArgs {
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    f_plus: Option<String>,
    #[arg(long)]
    f_minus: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    /// Write the nodal fields as CSV.
    #[arg(long)]
    export: bool,
}

impl HomogArgs {
    fn apply(&self, c: &mut HomogConfig) -> Result<()> {
        set(&mut c.gamma, &self.gamma);
        set(&mut c.f_plus, &self.f_plus);
        set(&mut c.f_minus, &self.f_minus);
        set(&mut c.dim, &self.dim);
        set(&mut c.n, &self.n);
        c.export_fields |= self.export;
        Ok(())
    }
}

#[derive(Args)]
struct GridArgs {
    /// Cells across each hole diameter.
    #[arg(long)]
    hole_cells: Option<usize>,
    /// In-plane growth ratio away from the holes.
    #[arg(long)]
    q: Option<f64>,
    /// Vertical growth ratio away from the mid-plane.
    #[arg(long)]
    qz: Option<f64>,
    /// none, quarter or auto.
    #[arg(long)]
    symmetry: Option<String>,
}

impl GridArgs {
    fn apply(&self, g: &mut ThinGridOptions, sym: &mut Symmetry) -> Result<()> {
        set(&mut g.hole_cells, &self.hole_cells);
        set(&mut g.q, &self.q);
        set(&mut g.qz, &self.qz);
        if let Some(s) = &self.symmetry {
            *sym = match s.as_str() {
                "none" => Symmetry::None,
                "quarter" => Symmetry::Quarter,
                "auto" => Symmetry::Auto,
                _ => return Err(bad(format!("unknown symmetry `{s}`"))),
            };
        }
        Ok(())
    }
}

#[derive(Args)]
struct DirectArgs {
    /// Point set JSON (as written by `classify --export`).
    #[arg(long)]
    realization: Option<PathBuf>,
    #[command(flatten)]
    process: ProcessArgs,
    #[arg(long, value_parser = one_eps)]
    eps: Option<f64>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    f_plus: Option<String>,
    #[arg(long)]
    f_minus: Option<String>,
    #[command(flatten)]
    grid: GridArgs,
    /// full, odd or auto.
    #[arg(long)]
    reduction: Option<String>,
    /// Also write both slabs node by node.
    #[arg(long)]
    export_slabs: bool,
}

impl DirectArgs {
    fn apply(&self, c: &mut DirectConfig) -> Result<()> {
        if self.realization.is_some() {
            c.points = self.realization.clone();
        }
        self.process.apply(&mut c.process)?;
        set(&mut c.eps, &self.eps);
        set(&mut c.p, &self.p);
        set(&mut c.f_plus, &self.f_plus);
        set(&mut c.f_minus, &self.f_minus);
        self.grid.apply(&mut c.grid, &mut c.symmetry)?;
        if let Some(r) = &self.reduction {
            c.reduction = match r.as_str() {
                "full" => ReductionChoice::Full,
                "odd" => ReductionChoice::Odd,
                "auto" => ReductionChoice::Auto,
                _ => return Err(bad(format!("unknown reduction `{r}`"))),
            };
        }
        c.export_slabs |= self.export_slabs;
        Ok(())
    }
}

#[derive(Args)]
struct TfEnergyArgs {
    #[command(flatten)]
    process: ProcessArgs,
    #[arg(long)]
    eps: Option<String>,
    #[arg(long)]
    psi: Option<String>,
}

impl TfEnergyArgs {
    fn apply(&self, c: &mut TfEnergyConfig) -> Result<()> {
        self.process.apply(&mut c.process)?;
        set_eps(&mut c.eps, &self.eps)?;
        set(&mut c.psi, &self.psi);
        Ok(())
    }
}

#[derive(Args)]
struct ConvergenceArgs {
    #[command(flatten)]
    process: ProcessArgs,
    /// Run without any holes.
    #[arg(long)]
    no_holes: bool,
    #[arg(long)]
    eps: Option<String>,
    #[arg(long)]
    f_plus: Option<String>,
    #[arg(long)]
    f_minus: Option<String>,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long)]
    homog_n: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    max_unknowns: Option<usize>,
}

impl ConvergenceArgs {
    fn apply(&self, c: &mut ConvergenceConfig) -> Result<()> {
        if self.no_holes {
            c.process = None;
        } else if let Some(p) = c.process.as_mut() {
            self.process.apply(p)?;
        }
        set_eps(&mut c.eps, &self.eps)?;
        set(&mut c.f_plus, &self.f_plus);
        if self.f_minus.is_some() {
            c.f_minus = self.f_minus.clone();
        }
        self.grid.apply(&mut c.grid, &mut c.symmetry)?;
        set(&mut c.homog_n, &self.homog_n);
        if self.gamma.is_some() {
            c.gamma = self.gamma;
        }
        set(&mut c.max_unknowns, &self.max_unknowns);
        Ok(())
    }
}

macro_rules! overlay {
    ($study:expr, $variant:ident, $args:expr) => {{
        if !matches!($study, Study::$variant(_)) {
            $study = Study::$variant(Default::default());
        }
        match &mut $study {
            Study::$variant(c) => $args.apply(c),
            _ => unreachable!(),
        }
    }};
}

fn configure(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        // the overlay below swaps in the subcommand's defaults
        None if cli.command.is_some() => ExperimentConfig { seed: 0, study: Study::Regimes(Default::default()) },
        None => return Err(bad("give a subcommand or --config")),
    };
    if let (Some(cmd), Some(_)) = (&cli.command, &cli.config) {
        let given = cfg.study.name();
        let wanted = command_name(cmd);
        if given != wanted {
            return Err(bad(format!("config holds a `{given}` study, not `{wanted}`")));
        }
    }
    match &cli.command {
        Some(Command::Capacity(a)) => overlay!(cfg.study, Capacity, a)?,
        Some(Command::Gamma(a)) => overlay!(cfg.study, Gamma, a)?,
        Some(Command::Classify(a)) => overlay!(cfg.study, Classify, a)?,
        Some(Command::Regimes(a)) => overlay!(cfg.study, Regimes, a)?,
        Some(Command::SolveHomog(a)) => overlay!(cfg.study, SolveHomog, a)?,
        Some(Command::SolveDirect(a)) => overlay!(cfg.study, SolveDirect, a)?,
        Some(Command::TfEnergy(a)) => overlay!(cfg.study, TfEnergy, a)?,
        Some(Command::Convergence(a)) => overlay!(cfg.study, Convergence, a)?,
        None => {}
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Capacity(_) => "capacity",
        Command::Gamma(_) => "gamma",
        Command::Classify(_) => "classify",
        Command::Regimes(_) => "regimes",
        Command::SolveHomog(_) => "solve-homog",
        Command::SolveDirect(_) => "solve-direct",
        Command::TfEnergy(_) => "tf-energy",
        Command::Convergence(_) => "convergence",
    }
}

fn execute(cli: &Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| bad(format!("thread pool: {e}")))?;
    }
    let cfg = configure(cli)?;
    let rec = studies::run(&cfg)?;
    for m in &rec.metrics {
        println!("{:<56} {:.10e}", m.label, m.value);
    }
    for c in &rec.checks {
        println!("[{}] {} {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
    }
    for o in &rec.omissions {
        println!("[omitted] {}: {}", o.what, o.reason);
    }
    for p in rec.write(&cli.out_dir)? {
        println!("wrote {}", p.display());
    }
    Ok(rec.all_passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
