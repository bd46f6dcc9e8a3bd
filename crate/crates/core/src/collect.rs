//! Live-host acquisition: periodic process sampling into psinfo, and a
//! byte-for-byte copy of the kernel's refsinfo export.
//!
//! Everything here is read-only with respect to the observed system: the
//! sampler lists `/proc` and reads link targets, nothing is traced.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::ingest::ProcessSample;

pub const DEFAULT_REFSINFO: &str = "/proc/refsinfo";

#[derive(Debug, Error)]
pub enum CollectError {
    #[error("process list unavailable at {path}: {source}")]
    ProcessListUnavailable {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path} is unavailable ({source}); this needs the reference-counting kernel patch, otherwise generate fixtures with `pkgscore simulate`")]
    SourceUnavailable {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("cannot write samples: {0}")]
    Sink(#[from] io::Error),
}

/// Something that can list the currently running processes.
pub trait ProcessSource {
    fn snapshot(&mut self) -> Result<Vec<ProcessSample>, CollectError>;
}

/// Reads processes from a procfs mount.
#[derive(Debug, Clone)]
pub struct ProcFs {
    root: PathBuf,
    clock_ticks: u64,
}

impl Default for ProcFs {
    fn default() -> Self {
        ProcFs::new("/proc")
    }
}

impl ProcFs {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        // SAFETY: sysconf has no preconditions.
        let ticks = unsafe { libc::sysconf(libc::_SC_CLK_TCK) };
        ProcFs { root: root.into(), clock_ticks: if ticks > 0 { ticks as u64 } else { 100 } }
    }

    pub fn with_clock_ticks(mut self, ticks: u64) -> Self {
        self.clock_ticks = ticks.max(1);
        self
    }

    fn uptime_s(&self) -> io::Result<f64> {
        let text = fs::read_to_string(self.root.join("uptime"))?;
        text.split_whitespace()
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "bad uptime"))
    }

    fn sample(&self, pid: u32, uptime_s: f64) -> Option<ProcessSample> {
        let dir = self.root.join(pid.to_string());
        // kernel threads and processes we may not inspect have no readable exe
        let exe = fs::read_link(dir.join("exe")).ok()?;
        let exe = exe.to_str()?;
        let exe = exe.strip_suffix(" (deleted)").unwrap_or(exe);
        if !exe.starts_with('/') || exe.contains('\n') {
            return None;
        }
        let stat = fs::read_to_string(dir.join("stat")).ok()?;
        let (utime, stime, start) = parse_stat_times(&stat)?;
        let ticks = self.clock_ticks;
        let started_s = start as f64 / ticks as f64;
        let elapsed_s = (uptime_s - started_s).max(0.0).floor() as u64;
        let cpu_s = (utime + stime) / ticks;
        Some(ProcessSample::new(exe, pid, elapsed_s, cpu_s))
    }
}

/// `(utime, stime, starttime)` in clock ticks from a `/proc/<pid>/stat` line.
/// The command name may contain spaces and parentheses, so fields are counted
/// from the last `)`.
fn parse_stat_times(stat: &str) -> Option<(u64, u64, u64)> {
    let rest = &stat[stat.rfind(')')? + 1..];
    let fields: Vec<&str> = rest.split_whitespace().collect();
    // fields[0] is field 3 (state); utime=14, stime=15, starttime=22
    let get = |n: usize| fields.get(n - 3)?.parse::<u64>().ok();
    Some((get(14)?, get(15)?, get(22)?))
}

impl ProcessSource for ProcFs {
    fn snapshot(&mut self) -> Result<Vec<ProcessSample>, CollectError> {
        let unavailable = |source| CollectError::ProcessListUnavailable { path: self.root.clone(), source };
        let uptime = self.uptime_s().map_err(unavailable)?;
        let mut pids: Vec<u32> = fs::read_dir(&self.root)
            .map_err(unavailable)?
            .filter_map(|e| e.ok()?.file_name().to_str()?.parse().ok())
            .collect();
        pids.sort_unstable();
        Ok(pids.into_iter().filter_map(|pid| self.sample(pid, uptime)).collect())
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct SampleStats {
    pub ticks: u64,
    pub lines: u64,
    pub failed_ticks: u64,
}

/// Appends one psinfo line per visible process every `interval` until
/// `duration` has elapsed (forever when `None`) or `stop` is raised. Samples
/// are never deduplicated here. The sink is flushed after every tick so an
/// interrupted run leaves a valid log.
pub fn sample_processes<S, W>(
    source: &mut S,
    interval: Duration,
    duration: Option<Duration>,
    sink: &mut W,
    stop: &AtomicBool,
) -> Result<SampleStats, CollectError>
where
    S: ProcessSource + ?Sized,
    W: Write,
{
    let mut stats = SampleStats::default();
    let start = Instant::now();
    loop {
        if stop.load(Ordering::Relaxed) {
            break;
        }
        if let Some(limit) = duration {
            if interval.saturating_mul(stats.ticks as u32) >= limit {
                break;
            }
        }
        match source.snapshot() {
            Ok(samples) => {
                for s in &samples {
                    writeln!(sink, "{s}")?;
                }
                stats.lines += samples.len() as u64;
            }
            // the very first listing failing means there is nothing to sample
            Err(e) if stats.ticks == 0 => return Err(e),
            Err(e) => {
                eprintln!("warning: tick {}: {e}", stats.ticks);
                stats.failed_ticks += 1;
            }
        }
        sink.flush()?;
        stats.ticks += 1;
        let next_tick = interval.saturating_mul(stats.ticks as u32);
        sleep_until(start + next_tick, stop);
    }
    sink.flush()?;
    Ok(stats)
}

fn sleep_until(deadline: Instant, stop: &AtomicBool) {
    const SLICE: Duration = Duration::from_millis(50);
    loop {
        let now = Instant::now();
        if now >= deadline || stop.load(Ordering::Relaxed) {
            return;
        }
        thread::sleep((deadline - now).min(SLICE));
    }
}

/// Copies the refsinfo export verbatim. Returns the number of bytes copied.
pub fn snapshot_refsinfo<W: Write>(source_path: &Path, sink: &mut W) -> Result<u64, CollectError> {
    let mut source = fs::File::open(source_path)
        .map_err(|source| CollectError::SourceUnavailable { path: source_path.to_path_buf(), source })?;
    let n = io::copy(&mut source, sink)?;
    sink.flush()?;
    Ok(n)
}
