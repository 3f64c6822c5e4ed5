//! Command-line front end.
//!
//! Exit codes: 0 pass, 1 fail, 2 inconclusive, 64 usage error or unknown scenario,
//! 65 malformed configuration or data, 66 missing input, 70 numerical failure,
//! 74 other I/O failure.

pub mod config;
pub mod report;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::RunConfig;
pub use report::{build_report, ReportFile};

use crate::ks::{reweight_ks_to_zakai, run_ks, KsRun};
use crate::measures::ResamplePolicy;
use crate::model::{ModelSpec, TestFunction};
use crate::pathsim::{
    extract_observation_events, read_path, simulate_decoupled, simulate_system, write_path,
    ObservationRecord, PathFiles,
};
use crate::rng::derive_seed;
use crate::verify::{
    check_duality, check_joint_law, check_martingale, check_pathwise_uniqueness, TestPair, Verdict,
    VerificationReport,
};
use crate::zakai::{initial_cloud, run_zakai, FilterRun};
use crate::{Error, Result};

pub const EXIT_USAGE: i32 = 64;
pub const EXIT_DATA: i32 = 65;
pub const EXIT_NO_INPUT: i32 = 66;
pub const EXIT_SOFTWARE: i32 = 70;
pub const EXIT_IO: i32 = 74;

#[derive(Debug, Parser)]
#[command(
    name = "levy-filter",
    version,
    about = "Particle filters for jump-diffusion observation models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a signal-observation path.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = MeasureArg::Physical)]
        measure: MeasureArg,
        #[arg(long, default_value = "path")]
        stem: String,
    },
    /// Run the unnormalized (Zakai) particle filter.
    FilterZakai(FilterArgs),
    /// Run the normalized (Kushner-Stratonovich) particle filter.
    FilterKs(FilterArgs),
    /// Turn a stored normalized run into an unnormalized one.
    Reweight {
        #[command(flatten)]
        common: Common,
        /// `<stem>.json` of a `filter-ks` run.
        #[arg(long)]
        ks: PathBuf,
        /// Observation CSV written by `simulate`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "reweighted")]
        stem: String,
    },
    /// Monte Carlo verification of one identity.
    Verify {
        #[arg(value_enum)]
        identity: Identity,
        #[command(flatten)]
        common: Common,
        /// Main sample budget: dual samples, likelihood paths, noise pairs or replicates.
        #[arg(long)]
        budget_samples: Option<usize>,
        /// Joint-law only: shift the second stack's initial mean by this many prior SDs.
        #[arg(long)]
        shift_initial: Option<f64>,
    },
    /// Summarize the results in a run directory.
    Report {
        /// Defaults to the output root.
        dir: Option<PathBuf>,
        #[arg(long, env = "LEVY_FILTER_OUT", default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Named scenario; replaces the model of `--config`.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Euler steps on [0, T].
    #[arg(long)]
    pub steps: Option<usize>,
    /// Time horizon T.
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Initial particle count.
    #[arg(long)]
    pub particles: Option<usize>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// `never`, `always`, `ess` or `ess:<fraction>`.
    #[arg(long)]
    pub resample: Option<String>,
    /// Output directory.
    #[arg(long, env = "LEVY_FILTER_OUT", default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct FilterArgs {
    #[command(flatten)]
    pub common: Common,
    /// Observation CSV written by `simulate`; simulated afresh when absent.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output file stem; defaults to `zakai` or `ks`.
    #[arg(long)]
    pub stem: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MeasureArg {
    Physical,
    Reference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Identity {
    Duality,
    Martingale,
    Pathwise,
    Jointlaw,
}

impl Identity {
    fn name(self) -> &'static str {
        match self {
            Identity::Duality => "duality",
            Identity::Martingale => "martingale",
            Identity::Pathwise => "pathwise",
            Identity::Jointlaw => "jointlaw",
        }
    }
}

impl Common {
    /// Config file, then flags, then preset resolution.
    pub fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = &self.scenario {
            cfg.scenario = Some(s.clone());
            cfg.model = None;
        }
        if let Some(v) = self.steps {
            cfg.grid.steps = v;
        }
        if let Some(v) = self.horizon {
            cfg.grid.horizon = Some(v);
        }
        if let Some(v) = self.particles {
            cfg.filter.particles = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.resample {
            cfg.filter.resample = ResamplePolicy::parse(v)?;
        }
        cfg.resolve()
    }
}

/// Maps an error to its process exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::UnknownScenario(_) => EXIT_USAGE,
        Error::Config(_)
        | Error::Parse(_)
        | Error::Json(_)
        | Error::InvalidModel(_)
        | Error::Dimension(_) => EXIT_DATA,
        Error::MissingInput(_) => EXIT_NO_INPUT,
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => EXIT_NO_INPUT,
        Error::Io(_) => EXIT_IO,
        Error::SingularObservationDiffusion { .. }
        | Error::IntensityOutOfRange { .. }
        | Error::NonFinite { .. }
        | Error::Degenerate { .. } => EXIT_SOFTWARE,
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Simulate {
            common,
            measure,
            stem,
        } => simulate(&common, measure, &stem),
        Command::FilterZakai(a) => filter(&a, false),
        Command::FilterKs(a) => filter(&a, true),
        Command::Reweight {
            common,
            ks,
            input,
            stem,
        } => reweight(&common, &ks, &input, &stem),
        Command::Verify {
            identity,
            common,
            budget_samples,
            shift_initial,
        } => verify(identity, &common, budget_samples, shift_initial),
        Command::Report { dir, out } => {
            let s = build_report(dir.as_deref().unwrap_or(&out))?;
            print!("{}", s.markdown);
            Ok(s.verdict.exit_code())
        }
    }
}

fn simulate(common: &Common, measure: MeasureArg, stem: &str) -> Result<i32> {
    let cfg = common.run_config()?;
    let spec = cfg.spec()?;
    let grid = cfg.grid(&spec)?;
    let path = match measure {
        MeasureArg::Physical => simulate_system(&spec, grid, cfg.seed)?,
        MeasureArg::Reference => simulate_decoupled(&spec, grid, cfg.seed)?,
    };
    let files = write_path(&path, &common.out, stem, &cfg.hash()?)?;
    println!(
        "simulated {} [{:?}] T={} steps={} jumps={} seed={}\n  {}\n  {}",
        spec.name(),
        measure,
        grid.horizon(),
        grid.steps(),
        path.noise.events.iter().filter(|e| e.accepted).count(),
        cfg.seed,
        files.csv.display(),
        files.json.display()
    );
    Ok(0)
}

/// Splits `dir/stem.ext` into `(dir, stem)`.
fn dir_and_stem(p: &Path) -> Result<(PathBuf, String)> {
    let stem = p
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::MissingInput(format!("{} has no file name", p.display())))?;
    let dir = p
        .parent()
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf);
    Ok((dir, stem.to_string()))
}

fn load_observation(input: &Path) -> Result<ObservationRecord> {
    let (dir, stem) = dir_and_stem(input)?;
    let files = PathFiles::for_stem(&dir, &stem);
    for f in [&files.csv, &files.json] {
        if !f.exists() {
            return Err(Error::MissingInput(format!("{} not found", f.display())));
        }
    }
    let (path, _) = read_path(&files)?;
    Ok(extract_observation_events(&path))
}

fn observation_for(
    common: &Common,
    cfg: &RunConfig,
    spec: &ModelSpec,
    input: Option<&Path>,
    hash: &str,
) -> Result<ObservationRecord> {
    match input {
        Some(p) => load_observation(p),
        None => {
            let grid = cfg.grid(spec)?;
            let path = simulate_system(spec, grid, derive_seed(cfg.seed, "observation", 0))?;
            write_path(&path, &common.out, "observation", hash)?;
            Ok(extract_observation_events(&path))
        }
    }
}

fn filter(a: &FilterArgs, normalized: bool) -> Result<i32> {
    let cfg = a.common.run_config()?;
    let spec = cfg.spec()?;
    let hash = cfg.hash()?;
    let obs = observation_for(&a.common, &cfg, &spec, a.input.as_deref(), &hash)?;
    let fc = cfg.filter_config(obs.grid, cfg.seed);
    let mu0 = initial_cloud(&spec, cfg.filter.particles, cfg.seed)?;
    let out = &a.common.out;
    let run = if normalized {
        let stem = a.stem.as_deref().unwrap_or("ks");
        let ks = run_ks(&spec, &mu0, &obs, &fc)?;
        ks.write(out, stem, &hash)?;
        print_run(&ks.run, out, stem);
        return Ok(0);
    } else {
        run_zakai(&spec, &mu0, &obs, &fc)?
    };
    let stem = a.stem.as_deref().unwrap_or("zakai");
    run.write(out, stem, &hash)?;
    print_run(&run, out, stem);
    Ok(0)
}

fn print_run(run: &FilterRun, out: &Path, stem: &str) {
    let last = run.diagnostics.last().expect("run has nodes");
    let resamples = run.diagnostics.iter().filter(|d| d.resampled).count();
    println!(
        "{:?} filter: steps={} jumps={} resamples={} final mass={:.6} ess={:.1} mean={:?}\n  {}",
        run.kind,
        run.grid.steps(),
        run.observed_jumps,
        resamples,
        last.mass,
        last.ess,
        last.mean,
        out.join(format!("{stem}.csv")).display()
    );
}

fn reweight(common: &Common, ks_path: &Path, input: &Path, stem: &str) -> Result<i32> {
    let cfg = common.run_config()?;
    let spec = cfg.spec()?;
    let (dir, ks_stem) = dir_and_stem(ks_path)?;
    let json = dir.join(format!("{ks_stem}.json"));
    if !json.exists() {
        return Err(Error::MissingInput(format!("{} not found", json.display())));
    }
    let (ks, _) = KsRun::read(&dir, &ks_stem)?;
    let obs = load_observation(input)?;
    let run = reweight_ks_to_zakai(&spec, &ks, &obs)?;
    run.write(&common.out, stem, &cfg.hash()?)?;
    print_run(&run, &common.out, stem);
    Ok(0)
}

/// Bounded test pairs used by `verify duality`: `1 ⊗ 1` for the closed form plus
/// three positive tensor pairs.
pub fn default_test_pairs(dim: usize) -> Vec<TestPair> {
    let at = |v: f64| vec![v; dim];
    vec![
        TestPair::new(TestFunction::one(dim), TestFunction::one(dim)),
        TestPair::new(TestFunction::one(dim), TestFunction::gaussian(at(0.0), 1.0)),
        TestPair::new(
            TestFunction::gaussian(at(0.0), 1.0),
            TestFunction::gaussian(at(0.5), 1.0),
        ),
        TestPair::new(
            TestFunction::bump(at(0.0), 2.0),
            TestFunction::gaussian(at(-0.5), 0.7),
        ),
    ]
}

/// Runs one identity check with the budgets of `cfg`.
pub fn run_identity(
    identity: Identity,
    cfg: &RunConfig,
    spec: &ModelSpec,
    shift_initial: Option<f64>,
) -> Result<VerificationReport> {
    let seed = derive_seed(cfg.seed, identity.name(), 0);
    let b = &cfg.budgets;
    match identity {
        Identity::Duality => {
            let t = spec.horizon();
            check_duality(
                spec,
                &default_test_pairs(spec.dim_signal()),
                &[0.25 * t, 0.5 * t, t],
                &b.duality,
                seed,
            )
        }
        Identity::Martingale => check_martingale(spec, &b.martingale, seed),
        Identity::Pathwise => check_pathwise_uniqueness(spec, &b.pathwise, seed),
        Identity::Jointlaw => {
            let other = match shift_initial {
                Some(s) => spec.with_initial(spec.initial().shifted_by_std(s))?,
                None => spec.clone(),
            };
            check_joint_law(
                spec,
                &other,
                &b.jointlaw,
                derive_seed(seed, "stack_a", 0),
                derive_seed(seed, "stack_b", 0),
            )
        }
    }
}

fn verify(
    identity: Identity,
    common: &Common,
    samples: Option<usize>,
    shift_initial: Option<f64>,
) -> Result<i32> {
    let mut cfg = common.run_config()?;
    if let Some(n) = samples {
        match identity {
            Identity::Duality => cfg.budgets.duality.dual_samples = n,
            Identity::Martingale => cfg.budgets.martingale.likelihood_paths = n,
            Identity::Pathwise => cfg.budgets.pathwise.pairs = n,
            Identity::Jointlaw => cfg.budgets.jointlaw.replicates = n,
        }
    }
    let spec = cfg.spec()?;
    let mut report = run_identity(identity, &cfg, &spec, shift_initial)?;
    if let Some(s) = shift_initial {
        report.notes.push(format!(
            "second stack initial mean shifted by {s} prior SDs"
        ));
    }
    let path = common.out.join(format!("verify_{}.json", identity.name()));
    ReportFile::new(report.clone(), &cfg.hash()?).write(&path)?;
    print!("{}", report.summary());
    println!("  {}", path.display());
    Ok(report.verdict.exit_code())
}

/// `Verdict` of a report file, for callers that only need the outcome.
pub fn verdict_of(path: &Path) -> Result<Verdict> {
    let text = std::fs::read_to_string(path)?;
    let f: ReportFile = serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    Ok(f.report.verdict)
}
