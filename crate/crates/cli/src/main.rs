//! `rkstage`: runs the stage-solver experiments and writes CSV data.

use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rkstage::experiments::{bc_compare, ode_errors, precond_run, spatial_convergence_run};
use rkstage::problems::{
    dahlquist, prothero_robinson, riccati, ManufacturedSolution, OdeTestProblem,
};
use rkstage::tableaux::{self, order_condition_residuals, ButcherTableau};
use rkstage::{BcMethod, KrylovSettings, PreconditionerKind, StageFormulation};

#[derive(Parser)]
#[command(
    name = "rkstage",
    version,
    about = "Implicit Runge-Kutta stage solver experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print a Butcher tableau with its structural flags and order residuals.
    Tableau(Common),
    /// Heat problem with incompatible boundary data under DAE and ODE enforcement.
    BcCompare(Common),
    /// Spatial or temporal convergence sweep.
    Converge {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Mode::Spatial)]
        mode: Mode,
        /// Temporal mode test problem.
        #[arg(long, value_enum, default_value_t = OdeChoice::Dahlquist)]
        problem: OdeChoice,
        /// Spatial mode manufactured solution.
        #[arg(long, value_enum, default_value_t = MmsChoice::SineCosine)]
        mms: MmsChoice,
        /// Spatial mode uses dt = dt_scale / N.
        #[arg(long, default_value_t = 4.0)]
        dt_scale: f64,
        /// Number of step-size halvings in temporal mode.
        #[arg(long, default_value_t = 3)]
        halvings: usize,
    },
    /// Mean FGMRES iterations for s = 1..max-stages on the 2D heat problem.
    PrecondBench {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 16)]
        steps: usize,
        #[arg(long, default_value_t = 4)]
        max_stages: usize,
    },
}

#[derive(Args)]
struct Common {
    /// FAMILY[:S], e.g. radau-iia:3, lobatto-iiic:3, alexander, wsodirk433.
    #[arg(long)]
    tableau: Option<String>,
    #[arg(long, value_enum, default_value_t = StageType::Deriv)]
    stage_type: StageType,
    #[arg(long, value_enum, default_value_t = Splitting::Ai)]
    splitting: Splitting,
    #[arg(long, value_enum)]
    bc_method: Option<BcChoice>,
    /// jacobi, gs-lower, gs-upper, rana-ld, rana-du or none.
    #[arg(long)]
    pc: Option<String>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    tfinal: Option<f64>,
    #[arg(long, default_value_t = 1e-8)]
    rtol: f64,
    /// Output file (a directory for bc-compare). Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageType {
    Deriv,
    Value,
    Dirk,
}

#[derive(Clone, Copy, ValueEnum)]
enum Splitting {
    Ai,
    Ia,
}

#[derive(Clone, Copy, ValueEnum)]
enum BcChoice {
    Dae,
    Ode,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Spatial,
    Temporal,
}

#[derive(Clone, Copy, ValueEnum)]
enum OdeChoice {
    Dahlquist,
    ProtheroRobinson,
    Riccati,
    Zero,
}

#[derive(Clone, Copy, ValueEnum)]
enum MmsChoice {
    SineCosine,
    Cosine1d,
    Zero,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Solver(rkstage::Error),
    #[error("cannot write {path}: {source}")]
    Output { path: String, source: io::Error },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Output { .. } => 2,
            CliError::Solver(_) => 3,
        }
    }
}

impl From<rkstage::Error> for CliError {
    fn from(e: rkstage::Error) -> Self {
        use rkstage::Error as E;
        match e {
            E::UnsupportedStageCount { .. }
            | E::SingularTableau(_)
            | E::SingularFactorization { .. }
            | E::Formulation(_)
            | E::InvalidSettings(_)
            | E::MissingBoundaryDerivative
            | E::DofOutOfRange { .. } => CliError::Config(e.to_string()),
            other => CliError::Solver(other),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Validated settings shared by every subcommand.
struct Config {
    tableau: ButcherTableau,
    formulation: StageFormulation,
    bc_method: Option<BcMethod>,
    pc: Option<Option<PreconditionerKind>>,
    dt: Option<f64>,
    nx: Option<usize>,
    tfinal: Option<f64>,
    krylov: KrylovSettings,
    out: Option<PathBuf>,
}

impl Config {
    fn from_args(c: Common, default_tableau: &str) -> CliResult<Self> {
        let tableau = tableaux::from_spec(c.tableau.as_deref().unwrap_or(default_tableau))?;
        let formulation = match (c.stage_type, c.splitting) {
            (StageType::Deriv, Splitting::Ai) => StageFormulation::StageDerivativeAI,
            (StageType::Deriv, Splitting::Ia) => StageFormulation::StageDerivativeIA,
            (StageType::Value, _) => StageFormulation::StageValue,
            (StageType::Dirk, _) => StageFormulation::Dirk,
        };
        let pc = match c.pc.as_deref() {
            None => None,
            Some("none") => Some(None),
            Some(s) => Some(Some(s.parse::<PreconditionerKind>()?)),
        };
        if let Some(dt) = c.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(CliError::Config(format!("--dt must be positive, got {dt}")));
            }
        }
        if let Some(t) = c.tfinal {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(CliError::Config(format!(
                    "--tfinal must be non-negative, got {t}"
                )));
            }
        }
        if c.nx == Some(0) {
            return Err(CliError::Config("--nx must be at least 1".into()));
        }
        let krylov = KrylovSettings::default().with_rtol(c.rtol);
        krylov.validate()?;
        Ok(Config {
            tableau,
            formulation,
            bc_method: c.bc_method.map(|b| match b {
                BcChoice::Dae => BcMethod::Dae,
                BcChoice::Ode => BcMethod::Ode,
            }),
            pc,
            dt: c.dt,
            nx: c.nx,
            tfinal: c.tfinal,
            krylov,
            out: c.out,
        })
    }

    fn check_formulation(&self, tab: &ButcherTableau) -> CliResult<()> {
        Ok(self.formulation.check(tab)?)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rkstage: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Tableau(c) => cmd_tableau(Config::from_args(c, "radau-iia:2")?),
        Command::BcCompare(c) => cmd_bc_compare(Config::from_args(c, "lobatto-iiic:3")?),
        Command::Converge {
            common,
            mode,
            problem,
            mms,
            dt_scale,
            halvings,
        } => {
            let cfg = Config::from_args(common, "radau-iia:2")?;
            match mode {
                Mode::Spatial => cmd_converge_spatial(cfg, mms, dt_scale),
                Mode::Temporal => cmd_converge_temporal(cfg, problem, halvings),
            }
        }
        Command::PrecondBench {
            mut common,
            steps,
            max_stages,
        } => {
            // The sweep varies the stage count, so only the family is taken from --tableau.
            let family = common.tableau.as_deref().unwrap_or("radau-iia");
            let family = family
                .split(':')
                .next()
                .unwrap_or_default()
                .trim()
                .to_ascii_lowercase();
            let first = if family.starts_with("lobatto") { 2 } else { 1 };
            common.tableau = Some(format!("{family}:{first}"));
            let cfg = Config::from_args(common, "radau-iia:1")?;
            cmd_precond_bench(cfg, steps, max_stages, first)
        }
    }
}

fn output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    match path {
        None => Ok(Box::new(io::stdout().lock())),
        Some(p) => File::create(p)
            .map(|f| Box::new(io::BufWriter::new(f)) as Box<dyn Write>)
            .map_err(|source| CliError::Output {
                path: p.display().to_string(),
                source,
            }),
    }
}

fn csv_writer(path: Option<&Path>) -> CliResult<csv::Writer<Box<dyn Write>>> {
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(output(path)?))
}

fn write_rows(path: Option<&Path>, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let wrap = |e: csv::Error| CliError::Output {
        path: path.map_or("stdout".into(), |p| p.display().to_string()),
        source: e.into(),
    };
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(wrap)?;
    for r in rows {
        w.write_record(r).map_err(wrap)?;
    }
    w.flush().map_err(|e| wrap(e.into()))
}

fn cell(x: Option<f64>) -> String {
    match x {
        Some(v) if v.is_finite() => format!("{v:e}"),
        _ => String::new(),
    }
}

/// Step times without the accumulated rounding noise.
fn time_cell(t: f64) -> String {
    format!("{}", (t * 1e12).round() / 1e12)
}

fn cmd_tableau(cfg: Config) -> CliResult<()> {
    let tab = &cfg.tableau;
    if let Some(path) = cfg.out.as_deref() {
        let mut f = output(Some(path))?;
        f.write_all(tab.to_csv().as_bytes())
            .and_then(|_| f.flush())
            .map_err(|source| CliError::Output {
                path: path.display().to_string(),
                source,
            })?;
    }
    let res = order_condition_residuals(tab, tab.formal_order as usize);
    let mut text = tab.to_string();
    text.push_str(&format!(
        "stages {}  order {}  stage order {} ({:?})\n",
        tab.stages(),
        tab.formal_order,
        tab.stage_order,
        tab.stage_order_kind
    ));
    text.push_str(&format!(
        "stiffly accurate {}  lower triangular {}  invertible {}  LDU {}\n",
        tab.is_stiffly_accurate(),
        tab.is_lower_triangular(),
        tab.is_invertible(),
        tableaux::ldu_factor(tab).is_ok()
    ));
    for (k, r) in res.quadrature.iter().enumerate() {
        text.push_str(&format!("B({}) residual {r:.3e}\n", k + 1));
    }
    for (q, rows) in tableaux::stage_residuals(tab, tab.stage_order as usize + 1)
        .iter()
        .enumerate()
    {
        let worst = rows.iter().copied().fold(0.0, f64::max);
        text.push_str(&format!("C({}) max residual {worst:.3e}\n", q + 1));
    }
    if tab.name.to_ascii_lowercase().contains("alexander") {
        text.push_str(&format!("x = {:.8}\n", tableaux::alexander_root()));
    }
    print!("{text}");
    Ok(())
}

fn cmd_bc_compare(cfg: Config) -> CliResult<()> {
    cfg.check_formulation(&cfg.tableau)?;
    let dt = cfg.dt.unwrap_or(0.05);
    let tfinal = cfg.tfinal.unwrap_or(0.5);
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("."));
    if !dir.is_dir() {
        return Err(CliError::Config(format!(
            "--out {} is not a directory",
            dir.display()
        )));
    }
    let methods = match cfg.bc_method {
        Some(m) => vec![m],
        None => vec![BcMethod::Dae, BcMethod::Ode],
    };
    for method in methods {
        let rows = bc_compare(
            &cfg.tableau,
            cfg.formulation,
            method,
            dt,
            tfinal,
            cfg.krylov,
        )?;
        let name = match method {
            BcMethod::Dae => "daenorm.csv",
            BcMethod::Ode => "odenorm.csv",
        };
        let rows: Vec<Vec<String>> = rows
            .iter()
            .map(|&(t, n)| vec![time_cell(t), format!("{n:e}")])
            .collect();
        write_rows(Some(&dir.join(name)), &["t", "nrmu"], &rows)?;
    }
    Ok(())
}

fn cmd_converge_spatial(cfg: Config, mms: MmsChoice, dt_scale: f64) -> CliResult<()> {
    cfg.check_formulation(&cfg.tableau)?;
    if !(dt_scale > 0.0 && dt_scale.is_finite()) {
        return Err(CliError::Config(format!(
            "--dt-scale must be positive, got {dt_scale}"
        )));
    }
    let mms = match mms {
        MmsChoice::SineCosine => ManufacturedSolution::decaying_sine_cosine(),
        MmsChoice::Cosine1d => ManufacturedSolution::decaying_cosine_1d(),
        MmsChoice::Zero => ManufacturedSolution::zero(2),
    };
    let n_max = cfg.nx.unwrap_or(64).max(8);
    let tfinal = cfg.tfinal.unwrap_or(1.0);
    let mut rows = Vec::new();
    let mut n = 8;
    while n <= n_max {
        let row = match spatial_convergence_run(
            &cfg.tableau,
            cfg.formulation,
            mms,
            n,
            dt_scale,
            tfinal,
            cfg.krylov,
        ) {
            Ok(e) => vec![n.to_string(), cell(Some(e.l2)), cell(Some(e.h1))],
            Err(e) => {
                eprintln!("rkstage: N={n}: {e}");
                vec![n.to_string(), String::new(), String::new()]
            }
        };
        rows.push(row);
        n *= 2;
    }
    write_rows(cfg.out.as_deref(), &["N", "L2err", "H1err"], &rows)
}

fn cmd_converge_temporal(cfg: Config, choice: OdeChoice, halvings: usize) -> CliResult<()> {
    cfg.check_formulation(&cfg.tableau)?;
    let make = move || -> OdeTestProblem {
        match choice {
            OdeChoice::Dahlquist => dahlquist(-1.0),
            OdeChoice::ProtheroRobinson => prothero_robinson(-1e4),
            OdeChoice::Riccati => riccati(),
            OdeChoice::Zero => dahlquist(0.0),
        }
    };
    let tfinal = cfg.tfinal.unwrap_or(match choice {
        OdeChoice::Riccati => 0.5,
        _ => 1.0,
    });
    let dt0 = cfg.dt.unwrap_or(0.2);
    let dts: Vec<f64> = (0..=halvings)
        .map(|k| dt0 / f64::powi(2.0, k as i32))
        .collect();
    let errs: Vec<Option<f64>> = dts
        .iter()
        .map(|&dt| {
            match ode_errors(
                &cfg.tableau,
                cfg.formulation,
                make,
                &[dt],
                tfinal,
                cfg.krylov,
            ) {
                Ok(e) => Some(e[0]),
                Err(e) => {
                    eprintln!("rkstage: dt={dt}: {e}");
                    None
                }
            }
        })
        .collect();
    let rows: Vec<Vec<String>> = dts
        .iter()
        .enumerate()
        .map(|(i, &dt)| {
            let order = match (i.checked_sub(1).and_then(|j| errs[j]), errs[i]) {
                (Some(prev), Some(cur)) => Some((prev / cur).log2() / (dts[i - 1] / dt).log2()),
                _ => None,
            };
            vec![format!("{dt}"), cell(errs[i]), cell(order)]
        })
        .collect();
    write_rows(cfg.out.as_deref(), &["dt", "err", "order"], &rows)
}

fn cmd_precond_bench(cfg: Config, steps: usize, max_stages: usize, first: usize) -> CliResult<()> {
    let n = cfg.nx.unwrap_or(64);
    let kind = cfg.pc.unwrap_or(Some(PreconditionerKind::RanaLD));
    let lobatto = cfg.tableau.name.starts_with("Lobatto");
    let tableaux: Vec<ButcherTableau> = if cfg.formulation == StageFormulation::Dirk {
        vec![
            tableaux::radau_iia(1)?,
            tableaux::alexander_dirk(),
            tableaux::wsodirk433(),
        ]
    } else {
        let build = |s: usize| {
            if lobatto {
                tableaux::lobatto_iiic(s)
            } else {
                tableaux::radau_iia(s)
            }
        };
        (first..=max_stages)
            .map(build)
            .collect::<rkstage::Result<_>>()?
    };
    for tab in &tableaux {
        cfg.check_formulation(tab)?;
    }
    let mut rows = Vec::new();
    for tab in &tableaux {
        let row = match precond_run(tab, cfg.formulation, kind, n, steps, cfg.krylov) {
            Ok(r) => vec![
                r.stages.to_string(),
                format!("{:.6}", r.step_seconds),
                format!("{}", r.mean_iterations),
                format!("{:.6}", r.setup_seconds),
            ],
            Err(e) => {
                eprintln!("rkstage: {}: {e}", tab.name);
                vec![
                    tab.stages().to_string(),
                    String::new(),
                    "-1".into(),
                    String::new(),
                ]
            }
        };
        rows.push(row);
    }
    write_rows(cfg.out.as_deref(), &["ns", "time", "Its", "setup"], &rows)
}
