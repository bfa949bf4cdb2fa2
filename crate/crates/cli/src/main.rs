use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use rset_core::boolean::{self, BooleanConfig};
use rset_core::boxdim;
use rset_core::config::read_config;
use rset_core::coverage::{self, survival_curve};
use rset_core::harness::{self, ExperimentKind, ExperimentPlan, Pairing, RunOutput};
use rset_core::io;
use rset_core::rng::replicate_id;
use rset_core::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_CHECK: u8 = 3;
const WRITE_CHUNK: usize = 256;

#[derive(Parser, Debug)]
#[command(name = "rset", version, about = "Vorob'ev expectation estimation for random sets on dyadic grids")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Model configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; every output path is relative to it.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Master seed, overriding `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; RSET_THREADS takes precedence.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate replicates of the configured model as VRBM masks.
    Simulate {
        /// Number of replicates, overriding `run.n`.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Estimate K_n and K_{n,r} from a directory of VRBM masks.
    Estimate {
        #[arg(long)]
        masks: PathBuf,
        #[arg(long)]
        mesh_level: u8,
    },
    /// Empirical and oracle survival curves F(alpha).
    Fcurve {
        /// Read masks instead of simulating; no oracle column.
        #[arg(long)]
        masks: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 200)]
        steps: usize,
    },
    /// Box counts of a mask outline.
    Boxdim {
        /// Mask file; defaults to replicate 0 of the configured model.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<u8>>,
        #[arg(long, value_delimiter = ',')]
        fit: Option<Vec<u8>>,
    },
    /// Consistency study of K_{n,r} and K_n against the oracle.
    Converge(Schedule),
    /// Rate bound check for grid level sets.
    Rate {
        #[command(flatten)]
        schedule: Schedule,
        #[arg(long, default_value_t = 0.3)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        kappa: f64,
        #[arg(long, value_delimiter = ',')]
        eps: Option<Vec<f64>>,
    },
    /// Bracket check of alpha*_{n,r} against the oracle [alpha*, beta*].
    Bracket(Schedule),
}

#[derive(Args, Debug)]
struct Schedule {
    #[arg(long = "n-schedule", value_delimiter = ',')]
    n_schedule: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<u8>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, value_enum, default_value_t = PairingArg::Cross)]
    pairing: PairingArg,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PairingArg {
    Cross,
    Diagonal,
}

enum Failure {
    Usage(String),
    Data(Error),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(Error::Io(e))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_DATA)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(EXIT_CHECK)
        }
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, Failure> {
    match std::env::var("RSET_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| Failure::Usage(format!("RSET_THREADS: cannot parse `{v}`"))),
        Err(_) => Ok(flag),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let threads = thread_count(cli.global.threads)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        if t == 0 {
            return Err(Failure::Usage("thread count must be positive".into()));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| Failure::Usage(format!("cannot start thread pool: {e}")))?;
    pool.install(|| dispatch(&cli.global, &cli.command))
}

fn load_model(g: &Global) -> Result<BooleanConfig, Failure> {
    let path = g
        .config
        .as_ref()
        .ok_or_else(|| Failure::Usage("this command needs --config PATH".into()))?;
    let mut cfg = read_config(path)?;
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn note(g: &Global, msg: impl AsRef<str>) {
    if !g.quiet {
        eprintln!("{}", msg.as_ref());
    }
}

fn dispatch(g: &Global, cmd: &Command) -> Result<(), Failure> {
    fs::create_dir_all(&g.out)?;
    match cmd {
        Command::Simulate { n } => simulate(g, *n),
        Command::Estimate { masks, mesh_level } => estimate(g, masks, *mesh_level),
        Command::Fcurve { masks, n, steps } => fcurve(g, masks.as_deref(), *n, *steps),
        Command::Boxdim { mask, levels, fit } => box_dim(g, mask.as_deref(), levels.clone(), fit.clone()),
        Command::Converge(s) => {
            let plan = plan(g, ExperimentKind::Consistency, s)?;
            finish(g, harness::run_consistency(&plan)?, "consistency trend")
        }
        Command::Rate {
            schedule,
            alpha,
            kappa,
            eps,
        } => {
            let mut plan = plan(g, ExperimentKind::RateCheck, schedule)?;
            plan.alpha = *alpha;
            plan.kappa = *kappa;
            if let Some(e) = eps {
                plan.eps_grid = e.clone();
            }
            finish(g, harness::run_rate_check(&plan)?, "rate bound")
        }
        Command::Bracket(s) => {
            let plan = plan(g, ExperimentKind::Bracket, s)?;
            finish(g, harness::run_bracket(&plan)?, "bracket fraction")
        }
    }
}

fn plan(g: &Global, kind: ExperimentKind, s: &Schedule) -> Result<ExperimentPlan, Failure> {
    let mut plan = ExperimentPlan::new(kind, load_model(g)?);
    if let Some(n) = &s.n_schedule {
        plan.n_schedule = n.clone();
    }
    if let Some(k) = &s.levels {
        plan.levels = k.clone();
    }
    if let Some(t) = s.trials {
        plan.trials = t;
    }
    plan.pairing = match s.pairing {
        PairingArg::Cross => Pairing::Cross,
        PairingArg::Diagonal => Pairing::Diagonal,
    };
    Ok(plan)
}

fn finish(g: &Global, out: RunOutput, what: &str) -> Result<(), Failure> {
    out.write(&g.out)?;
    note(g, format!("wrote {}", g.out.join(out.file_name).display()));
    if out.passed {
        Ok(())
    } else {
        Err(Failure::Check(format!("{what} not satisfied; see {}", out.file_name)))
    }
}

fn write_metadata(dir: &Path, entries: &[(String, String)]) -> Result<(), Failure> {
    let text: String = entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    fs::write(dir.join("metadata.txt"), text)?;
    Ok(())
}

fn simulate(g: &Global, n: Option<usize>) -> Result<(), Failure> {
    let cfg = load_model(g)?;
    let n = n.unwrap_or(cfg.replicates);
    if n == 0 {
        return Err(Failure::Usage("--n must be positive".into()));
    }
    let mut acc = coverage::CoverageAccumulator::new(cfg.grid()?);
    for start in (0..n).step_by(WRITE_CHUNK) {
        let ids: Vec<u64> = (start..(start + WRITE_CHUNK).min(n))
            .map(|i| replicate_id(0, 0, i as u64))
            .collect();
        let masks = boolean::simulate_many(&cfg, &ids)?;
        for (j, m) in masks.iter().enumerate() {
            io::write_mask(&g.out.join(io::mask_file_name(start + j)), m)?;
            acc.add(m)?;
        }
    }
    let field = acc.finish()?;
    io::write_coverage(&g.out.join("coverage.vrbc"), &field)?;
    write_metadata(
        &g.out,
        &[
            ("model".into(), cfg.describe()),
            ("seed".into(), cfg.seed.to_string()),
            ("replicates".into(), n.to_string()),
            ("mean_volume".into(), harness::fmt9(field.mean_volume())),
        ],
    )?;
    fs::write(g.out.join("model.cfg"), cfg.to_config_string())?;
    note(g, format!("wrote {n} masks to {}", g.out.display()));
    Ok(())
}

fn estimate(g: &Global, dir: &Path, level: u8) -> Result<(), Failure> {
    let masks = io::read_mask_dir(dir)?;
    if masks.is_empty() {
        return Err(Failure::Data(Error::EmptyInput("no .vrbm files in the mask directory")));
    }
    let field = coverage::accumulate(&masks)?;
    let est = harness::estimate(&field, level)?;
    io::write_weighted(&g.out.join("kn.vrbw"), &est.kn)?;
    io::write_weighted(&g.out.join("knr.vrbw"), &est.knr)?;
    fs::write(g.out.join("thresholds.csv"), est.thresholds_table().to_csv())?;
    write_metadata(
        &g.out,
        &[
            ("masks".into(), dir.display().to_string()),
            ("replicates".into(), masks.len().to_string()),
            ("mesh_level".into(), level.to_string()),
            ("plateau_tolerance".into(), harness::fmt9(rset_core::vorobev::DEFAULT_PLATEAU_TOL)),
        ],
    )?;
    note(g, format!("estimated from {} masks", masks.len()));
    Ok(())
}

fn fcurve(g: &Global, masks: Option<&Path>, n: Option<usize>, steps: usize) -> Result<(), Failure> {
    if steps == 0 {
        return Err(Failure::Usage("--steps must be positive".into()));
    }
    if let Some(dir) = masks {
        let field = coverage::accumulate(&io::read_mask_dir(dir)?)?;
        let rows = harness::fcurve_rows(&survival_curve(&field), None, &harness::alpha_grid(steps));
        fs::write(g.out.join("fcurve.csv"), harness::fcurve_table(&rows).to_csv())?;
        return Ok(());
    }
    let cfg = load_model(g)?;
    let mut plan = ExperimentPlan::new(ExperimentKind::Fcurve, cfg.clone());
    plan.n_schedule = vec![n.unwrap_or(cfg.replicates)];
    plan.levels = vec![cfg.base_level];
    let out = harness::run_fcurve(&plan, steps)?;
    out.write(&g.out)?;
    Ok(())
}

fn box_dim(g: &Global, mask: Option<&Path>, levels: Option<Vec<u8>>, fit: Option<Vec<u8>>) -> Result<(), Failure> {
    let m = match mask {
        Some(p) => io::read_mask(p)?,
        None => boolean::simulate(&load_model(g)?, replicate_id(0, 0, 0))?,
    };
    let base = m.grid().level();
    let levels = levels.unwrap_or_else(|| (0..=base).collect());
    let fit = fit.unwrap_or_else(|| boxdim::default_fit_levels(base));
    let report = boxdim::box_count_report(&boxdim::outline(&m), &levels, &fit)?;
    fs::write(g.out.join("boxdim.csv"), report.to_csv())?;
    if let Some(s) = report.slope_estimate {
        note(g, format!("box dimension estimate {}", harness::fmt9(s)));
    }
    Ok(())
}
