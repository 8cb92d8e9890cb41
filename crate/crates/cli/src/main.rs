use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ftcs_core::dataio;
use ftcs_core::flowfield::{GriddedManifest, Units};
use ftcs_core::ftle::{Direction, PointLattice};
use ftcs_core::pipeline::{self, with_threads, RunConfig};
use ftcs_core::verify::verify_run_dir;
use ftcs_core::Error;

/// Finite-time coherent sets from transfer-operator discretisations.
#[derive(Parser)]
#[command(name = "ftcs", version)]
struct Cli {
    /// Worker threads; overrides the config.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Suppress the summary and log output.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the transition matrix, solve for the coherent pair, write the run directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// FTLE fields for the config's `ftle` section.
    Ftle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-check a run directory from its files.
    Verify {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Velocity of the configured field on a regular lattice over the domain.
    ///
    /// Writes a CSV at one time, or with `--times` a gridded field directory
    /// that a `gridded` config can read back.
    SampleField {
        #[arg(long)]
        config: PathBuf,
        /// CSV file, or directory with `--times`.
        #[arg(long)]
        out: PathBuf,
        /// Points per axis, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "101,41")]
        counts: Vec<usize>,
        /// Sample time for CSV output; defaults to the config's `t`.
        #[arg(long, conflicts_with = "times")]
        time: Option<f64>,
        /// `first,last,step` snapshot times for gridded output.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        times: Option<Vec<f64>>,
        /// Lower node bounds for gridded output; defaults to the domain.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        lo: Option<Vec<f64>>,
        /// Upper node bounds for gridded output; defaults to the domain.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        hi: Option<Vec<f64>>,
    },
}

/// Exit status and message of a failed command.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure { code: if e.is_usage() { 2 } else { 1 }, message: e.to_string() }
    }
}

fn invariant(message: String) -> Failure {
    Failure { code: 1, message }
}

type CmdResult = Result<(), Failure>;

fn load(path: &Path, threads: Option<usize>) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::from_file(path).map_err(|e| Failure::from(e.in_stage("config")))?;
    if threads.is_some() {
        cfg.threads = threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_run(config: &Path, out: &Path, threads: Option<usize>, quiet: bool) -> CmdResult {
    let cfg = load(config, threads)?;
    let result = with_threads(cfg.threads, || pipeline::run(&cfg))??;
    result.write(out, &cfg).map_err(|e| e.in_stage("output"))?;
    let s = &result.summary;
    if !quiet {
        println!(
            "m={} n={} sigma2={:.6} rho1={:.4} rho2={:.4} mass_x1={:.4} mass_y1={:.4} out={}",
            result.ts.m(),
            result.ts.n(),
            result.cv.sigma2,
            s.rho1,
            s.rho2,
            s.mass_x1,
            s.mass_y1,
            out.display()
        );
    }
    if !result.leading_pair.passed {
        return Err(invariant(format!(
            "[spectral] leading singular pair residuals {:.2e}/{:.2e} exceed tolerance",
            result.leading_pair.forward, result.leading_pair.adjoint
        )));
    }
    Ok(())
}

fn cmd_ftle(config: &Path, out: &Path, threads: Option<usize>, quiet: bool) -> CmdResult {
    let cfg = load(config, threads)?;
    let fields = with_threads(cfg.threads, || pipeline::run_ftle(&cfg))??;
    std::fs::create_dir_all(out).map_err(|e| Error::Io { path: out.to_path_buf(), source: e })?;
    let reference = cfg.ftle.as_ref().and_then(|f| f.reference);
    for field in &fields {
        let name = match field.direction {
            Direction::Forward => "ftle_forward",
            Direction::Backward => "ftle_backward",
        };
        dataio::write_ftle_csv(&out.join(format!("{name}.csv")), field)?;
        if cfg.outputs.raster {
            dataio::write_ftle_pgm(&out.join(format!("{name}.pgm")), field)?;
        }
        if quiet {
            continue;
        }
        let failed = field.values.iter().filter(|v| v.is_none()).count();
        let (lo, hi) = field.range().unwrap_or((f64::NAN, f64::NAN));
        print!("{name}: points={} failed={failed} min={lo:.6} max={hi:.6}", field.values.len());
        if let Some(r) = reference {
            let dev = field.values.iter().flatten().map(|v| (v - r).abs()).fold(0.0, f64::max);
            print!(" max_abs_dev={dev:.3e} reference={r}");
        }
        println!();
    }
    Ok(())
}

fn cmd_verify(dir: &Path, quiet: bool) -> CmdResult {
    let report = verify_run_dir(dir)?;
    if !quiet {
        print!("{}", report.table());
    }
    if report.passed() {
        Ok(())
    } else {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
        Err(invariant(format!("[verify] failed checks: {}", failed.join(", "))))
    }
}

struct SampleArgs<'a> {
    counts: &'a [usize],
    time: Option<f64>,
    times: Option<&'a [f64]>,
    lo: Option<&'a [f64]>,
    hi: Option<&'a [f64]>,
}

fn cmd_sample_gridded(cfg: &RunConfig, out: &Path, args: &SampleArgs<'_>, times: &[f64]) -> CmdResult {
    let &[first, last, step] = times else {
        return Err(Error::Config(format!("--times takes first,last,step; got {} values", times.len())).into());
    };
    if !(step > 0.0 && last >= first) {
        return Err(Error::Config(format!("--times needs first <= last and step > 0, got {times:?}")).into());
    }
    let periodic = pipeline::source_grid(cfg)?.lattice.periodic;
    let lo = args.lo.unwrap_or(&cfg.domain.lo);
    let hi = args.hi.unwrap_or(&cfg.domain.hi);
    let axes = pipeline::node_axes(lo, hi, args.counts, &periodic)?;
    let periods = (0..lo.len()).map(|a| periodic[a].then(|| hi[a] - lo[a])).collect();
    let count = ((last - first) / step + 1e-9).floor() as usize + 1;
    let manifest = GriddedManifest {
        components: axes.len(),
        axes,
        periodic,
        periods: Some(periods),
        times: (0..count).map(|k| first + k as f64 * step).collect(),
        units: Units { axes: vec!["1".into(); lo.len()], time: "1".into(), velocity: "1".into() },
    };
    pipeline::write_sampled_field(cfg, manifest, out)?;
    Ok(())
}

fn cmd_sample_field(config: &Path, out: &Path, args: SampleArgs<'_>) -> CmdResult {
    let cfg = load(config, None)?;
    if let Some(times) = args.times {
        return cmd_sample_gridded(&cfg, out, &args, times);
    }
    let (counts, time) = (args.counts, args.time);
    let lattice = PointLattice::spanning(&cfg.domain.lo, &cfg.domain.hi, counts)?;
    let rows = pipeline::sample_field(&cfg, &lattice, time.unwrap_or(cfg.t))?;
    let dim = lattice.counts.len();
    let mut text = (0..dim).map(|a| format!("coord_{a}")).chain((0..dim).map(|a| format!("velocity_{a}"))).collect::<Vec<_>>().join(",");
    text.push('\n');
    for (z, v) in rows {
        let line: Vec<String> = z.iter().chain(&v).map(|x| format!("{x:?}")).collect();
        text.push_str(&line.join(","));
        text.push('\n');
    }
    std::fs::write(out, text).map_err(|e| Error::Io { path: out.to_path_buf(), source: e })?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if cli.threads == Some(0) {
        eprintln!("error: --threads must be positive");
        return ExitCode::from(2);
    }
    let outcome = match &cli.command {
        Command::Run { config, out } => cmd_run(config, out, cli.threads, cli.quiet),
        Command::Ftle { config, out } => cmd_ftle(config, out, cli.threads, cli.quiet),
        Command::Verify { out } => cmd_verify(out, cli.quiet),
        Command::SampleField { config, out, counts, time, times, lo, hi } => cmd_sample_field(
            config,
            out,
            SampleArgs { counts, time: *time, times: times.as_deref(), lo: lo.as_deref(), hi: hi.as_deref() },
        ),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
