//! `pkgscore` command line: `score`, `collect` and `simulate`.
//!
//! Exit status is 0 on success, 1 on data or runtime errors and 2 on usage
//! errors. Diagnostics go to stderr; data only goes to the named files.

use std::ffi::OsString;
use std::fmt::Display;
use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use crate::collect::{self, CollectError, ProcFs, DEFAULT_REFSINFO};
use crate::deps::{self, DependencyMap, DepsError};
use crate::ingest::{self, ParseIssue};
use crate::pkgdb::{self, OwnershipIndex};
use crate::report::{self, Binning, Distribution, RankedReport, DEFAULT_BINS};
use crate::scorer::{self, ScoreConfig};
use crate::simulate::{self, WorkloadSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DATA: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "pkgscore", version, about = "Find unused Debian packages from file and process usage")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score files and packages from captured logs.
    Score(ScoreArgs),
    /// Sample running processes and snapshot the kernel reference counts.
    Collect(CollectArgs),
    /// Write a synthetic set of capture files.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("manifests").required(true).args(["manifest_dir", "manifest"])))]
struct ScoreArgs {
    /// Kernel reference counts (`path,nopen,nread,nclose`).
    #[arg(long)]
    refsinfo: PathBuf,
    /// Process samples (`exe,etime,pid,cputime`).
    #[arg(long)]
    psinfo: PathBuf,
    /// dpkg info directory with one `<package>.list` per package.
    #[arg(long)]
    manifest_dir: Option<PathBuf>,
    /// Consolidated `package<TAB>path` manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Static `exe<TAB>lib` dependency map.
    #[arg(long)]
    depmap: Option<PathBuf>,
    /// Ask the host `ldd` for the libraries of every sampled executable,
    /// merged with --depmap when both are given.
    #[arg(long)]
    probe_deps: bool,
    /// Weights as `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_files: PathBuf,
    #[arg(long)]
    out_packages: PathBuf,
    /// Also write `<out>.cdf.csv` for both reports.
    #[arg(long)]
    cdf: bool,
    /// Also write `<out>.hist.csv` for both reports.
    #[arg(long)]
    hist: bool,
    #[arg(long, default_value_t = DEFAULT_BINS, value_parser = positive_count)]
    bins: usize,
    /// Decade-scaled histogram bins (the default).
    #[arg(long, conflicts_with = "linear_bins")]
    log_bins: bool,
    /// Equal-width histogram bins.
    #[arg(long)]
    linear_bins: bool,
    /// Resolve symlinks in scored paths before package lookup.
    #[arg(long)]
    canonicalize_paths: bool,
}

#[derive(Debug, Args)]
struct CollectArgs {
    /// Seconds between process samples.
    #[arg(long, default_value_t = 1.0, value_parser = positive_seconds)]
    interval: f64,
    /// Total sampling time in seconds; unbounded when omitted.
    #[arg(long, value_parser = non_negative_seconds)]
    duration: Option<f64>,
    /// psinfo log to append samples to.
    #[arg(long)]
    psinfo_out: Option<PathBuf>,
    #[arg(long, default_value = DEFAULT_REFSINFO)]
    refsinfo_src: PathBuf,
    /// Where to copy the refsinfo export once sampling ends.
    #[arg(long)]
    refsinfo_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = WorkloadSpec::default().n_packages)]
    packages: usize,
    #[arg(long, default_value_t = WorkloadSpec::default().n_daemons)]
    daemons: usize,
    #[arg(long, default_value_t = WorkloadSpec::default().n_shortlived)]
    short_lived: usize,
    /// Simulated uptime in seconds.
    #[arg(long, default_value_t = WorkloadSpec::default().uptime_s)]
    uptime: u64,
    #[arg(long, default_value_t = WorkloadSpec::default().core_lib_fraction)]
    core_lib_fraction: f64,
    #[arg(long, default_value_t = WorkloadSpec::default().unused_fraction)]
    unused_fraction: f64,
    #[arg(long)]
    out_dir: PathBuf,
}

fn positive_count(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n) if n >= 1 => Ok(n),
        _ => Err(format!("{s:?} is not a positive integer")),
    }
}

fn positive_seconds(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("{s:?} is not a positive number of seconds")),
    }
}

fn non_negative_seconds(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("{s:?} is not a non-negative number of seconds")),
    }
}

/// Runs the CLI on `args` (including the program name) and returns the exit
/// status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Score(a) => cmd_score(&a),
        Command::Collect(a) => cmd_collect(&a),
        Command::Simulate(a) => cmd_simulate(&a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(msg) => {
            eprintln!("error: {msg}");
            EXIT_DATA
        }
    }
}

fn warn(msg: impl Display) {
    eprintln!("warning: {msg}");
}

fn context<E: Display>(what: &Path) -> impl FnOnce(E) -> String + '_ {
    move |e| format!("{}: {e}", what.display())
}

fn report_issues(file: &Path, issues: &[ParseIssue]) {
    for issue in issues {
        warn(format_args!("{}: {issue}", file.display()));
    }
}

/// `out.csv` → `out<suffix>`; other names get the suffix appended.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let s = path.as_os_str().to_string_lossy();
    let stem = s.strip_suffix(".csv").unwrap_or(&s);
    PathBuf::from(format!("{stem}{suffix}"))
}

fn create(path: &Path) -> Result<BufWriter<File>, String> {
    File::create(path).map(BufWriter::new).map_err(context(path))
}

fn load_index(a: &ScoreArgs) -> Result<OwnershipIndex, String> {
    if let Some(dir) = &a.manifest_dir {
        let (index, warnings) = pkgdb::load_manifest_dir(dir).map_err(|e| e.to_string())?;
        for w in warnings {
            warn(w);
        }
        Ok(index)
    } else {
        let file = a.manifest.as_deref().expect("clap enforces one manifest source");
        pkgdb::load_consolidated_manifest(file).map_err(context(file))
    }
}

fn load_deps(a: &ScoreArgs, samples: &[ingest::ProcessSample]) -> Result<DependencyMap, String> {
    let load_static = || match &a.depmap {
        Some(path) => deps::load_dependency_map(path).map_err(context(path)),
        None => Ok(DependencyMap::default()),
    };
    if !a.probe_deps {
        return load_static();
    }
    match deps::probe_live(samples.iter().map(|s| s.exe_path.as_str())) {
        Ok((mut map, failures)) => {
            for f in failures {
                warn(f);
            }
            map.union(&load_static()?);
            Ok(map)
        }
        Err(e @ DepsError::ProbeUnavailable { .. }) => {
            warn(format_args!("{e}; using the static dependency map"));
            load_static()
        }
        Err(e) => Err(e.to_string()),
    }
}

fn cmd_score(a: &ScoreArgs) -> Result<(), String> {
    let cfg = match &a.config {
        Some(path) => ScoreConfig::load(path).map_err(|e| e.to_string())?,
        None => ScoreConfig::default(),
    };

    let refs_file = File::open(&a.refsinfo).map_err(context(&a.refsinfo))?;
    let refs = ingest::parse_refsinfo(BufReader::new(refs_file)).map_err(context(&a.refsinfo))?;
    report_issues(&a.refsinfo, &refs.issues);

    let ps_file = File::open(&a.psinfo).map_err(context(&a.psinfo))?;
    let samples = ingest::parse_psinfo(BufReader::new(ps_file)).map_err(context(&a.psinfo))?;
    report_issues(&a.psinfo, &samples.issues);

    let index = load_index(a)?;
    let depmap = load_deps(a, &samples.records)?;

    let mut table = scorer::build_score_table(&refs.records, &samples.records, &depmap, &cfg);
    if a.canonicalize_paths {
        table = table.rewrite_paths(|p| fs::canonicalize(p).ok()?.into_os_string().into_string().ok());
    }
    let packages = scorer::aggregate_packages(&table, &index);

    let file_report = RankedReport::files(&table);
    let pkg_report = RankedReport::packages(&packages);
    let binning = if a.linear_bins { Binning::Linear } else { Binning::Log10 };
    for (report, out) in [(&file_report, &a.out_files), (&pkg_report, &a.out_packages)] {
        write_report(report, out, a, binning)?;
    }

    let zero = packages.iter().filter(|p| p.total == 0.0).count();
    eprintln!(
        "scored {} files from {} reference records and {} process samples; {} packages, {} with zero score",
        table.len(),
        refs.records.len(),
        samples.records.len(),
        packages.len(),
        zero
    );
    Ok(())
}

fn write_report(report: &RankedReport, out: &Path, a: &ScoreArgs, binning: Binning) -> Result<(), String> {
    report::write_ranked_csv(report, create(out)?).map_err(context(out))?;
    if !(a.cdf || a.hist) {
        return Ok(());
    }
    let dist: Distribution = report::distribution(report.values(), binning, a.bins);
    if a.cdf {
        let path = sibling(out, ".cdf.csv");
        report::write_cdf_csv(&dist, create(&path)?).map_err(context(&path))?;
    }
    if a.hist {
        let path = sibling(out, ".hist.csv");
        report::write_hist_csv(&dist, create(&path)?).map_err(context(&path))?;
    }
    Ok(())
}

/// Raised by SIGINT/SIGTERM; shared by every collect run in the process.
fn stop_flag() -> Arc<AtomicBool> {
    static FLAG: OnceLock<Arc<AtomicBool>> = OnceLock::new();
    FLAG.get_or_init(|| {
        let flag = Arc::new(AtomicBool::new(false));
        let handler_flag = Arc::clone(&flag);
        if let Err(e) = ctrlc::set_handler(move || handler_flag.store(true, Ordering::Relaxed)) {
            warn(format_args!("cannot install signal handler: {e}"));
        }
        flag
    })
    .clone()
}

fn cmd_collect(a: &CollectArgs) -> Result<(), String> {
    if a.psinfo_out.is_none() && a.refsinfo_out.is_none() {
        return Err("nothing to collect: give --psinfo-out and/or --refsinfo-out".into());
    }
    let mut psinfo = a.psinfo_out.as_deref().and_then(|path| {
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map(BufWriter::new)
            .map_err(|e| warn(format_args!("{}: {e}", path.display())))
            .ok()
    });
    let mut refsinfo = a.refsinfo_out.as_deref().and_then(|path| create(path).map_err(warn).ok());
    if psinfo.is_none() && refsinfo.is_none() {
        return Err("neither the psinfo nor the refsinfo output is writable".into());
    }

    let stop = stop_flag();
    if let Some(sink) = psinfo.as_mut() {
        let interval = Duration::from_secs_f64(a.interval);
        let duration = a.duration.map(Duration::from_secs_f64);
        let stats = collect::sample_processes(&mut ProcFs::default(), interval, duration, sink, &stop)
            .map_err(|e| e.to_string())?;
        eprintln!("sampled {} ticks, {} process lines", stats.ticks, stats.lines);
    }
    if let Some(sink) = refsinfo.as_mut() {
        match collect::snapshot_refsinfo(&a.refsinfo_src, sink) {
            Ok(bytes) => eprintln!("copied {bytes} bytes from {}", a.refsinfo_src.display()),
            Err(e @ CollectError::SourceUnavailable { .. }) if psinfo.is_some() => warn(e),
            Err(e) => return Err(e.to_string()),
        }
    }
    if let Some(sink) = psinfo.as_mut() {
        sink.flush().map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs) -> Result<(), String> {
    let spec = WorkloadSpec {
        n_packages: a.packages,
        n_daemons: a.daemons,
        n_shortlived: a.short_lived,
        uptime_s: a.uptime,
        core_lib_fraction: a.core_lib_fraction,
        unused_fraction: a.unused_fraction,
        rng_seed: a.seed,
        ..WorkloadSpec::default()
    };
    let fixtures = simulate::generate(&spec).map_err(|e| e.to_string())?;
    fixtures.write_to_dir(&a.out_dir).map_err(context(&a.out_dir))?;
    eprintln!("wrote fixtures for seed {} to {}", a.seed, a.out_dir.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sibling_names() {
        assert_eq!(sibling(Path::new("out/files.csv"), ".cdf.csv"), PathBuf::from("out/files.cdf.csv"));
        assert_eq!(sibling(Path::new("files"), ".hist.csv"), PathBuf::from("files.hist.csv"));
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["pkgscore"]), EXIT_USAGE);
        assert_eq!(run(["pkgscore", "score", "--psinfo", "p"]), EXIT_USAGE);
        assert_eq!(run(["pkgscore", "collect", "--interval", "0"]), EXIT_USAGE);
        assert_eq!(run(["pkgscore", "--help"]), EXIT_OK);
    }
}
