//! Synthetic capture fixtures for an embedded-style system, plus a naive
//! reference scorer ([`oracle`]) to check the real pipeline against.
//!
//! The generated system has a base library package that everything links,
//! a mix of library and application packages, long-running daemons whose
//! reference counts grow with uptime, short-lived jobs, and a share of
//! packages nothing ever touches.

pub mod oracle;

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const REFSINFO_FILE: &str = "refsinfo.csv";
pub const PSINFO_FILE: &str = "psinfo.csv";
pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const DEPMAP_FILE: &str = "depmap.tsv";

const LIBDIR: &str = "/usr/lib/x86_64-linux-gnu";
const SHARED_DOC: &str = "/usr/share/doc/sim-common";

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("invalid workload: {0}")]
    Invalid(String),
    #[error("cannot write fixtures: {0}")]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkloadSpec {
    pub n_packages: usize,
    /// Inclusive range of files per package.
    pub files_per_package: (usize, usize),
    pub n_daemons: usize,
    pub n_shortlived: usize,
    pub uptime_s: u64,
    /// Share of libraries that every executable links.
    pub core_lib_fraction: f64,
    /// Share of packages (the base package excepted) that nothing references.
    pub unused_fraction: f64,
    pub rng_seed: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            n_packages: 40,
            files_per_package: (2, 12),
            n_daemons: 4,
            n_shortlived: 20,
            uptime_s: 7 * 86_400,
            core_lib_fraction: 0.2,
            unused_fraction: 0.3,
            rng_seed: 1,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let (lo, hi) = self.files_per_package;
        if lo > hi {
            return Err(WorkloadError::Invalid(format!("files_per_package range {lo}..={hi} is empty")));
        }
        for (name, f) in [("core_lib_fraction", self.core_lib_fraction), ("unused_fraction", self.unused_fraction)] {
            if !(0.0..=1.0).contains(&f) {
                return Err(WorkloadError::Invalid(format!("{name} {f} is outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// The four capture files, as text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fixtures {
    pub refsinfo: String,
    pub psinfo: String,
    pub manifest: String,
    pub depmap: String,
}

impl Fixtures {
    pub fn write_to_dir(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(REFSINFO_FILE), &self.refsinfo)?;
        fs::write(dir.join(PSINFO_FILE), &self.psinfo)?;
        fs::write(dir.join(MANIFEST_FILE), &self.manifest)?;
        fs::write(dir.join(DEPMAP_FILE), &self.depmap)?;
        Ok(())
    }
}

/// Whether a path names a shared object (`libfoo.so` or `libfoo.so.N`).
pub fn is_shared_library(path: &str) -> bool {
    let name = path.rsplit('/').next().unwrap_or(path);
    name.ends_with(".so") || name.contains(".so.")
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum FileKind {
    Library,
    Executable,
    Data,
}

struct Package {
    name: String,
    used: bool,
    files: Vec<(String, FileKind)>,
}

struct Process {
    exe: String,
    pid: u32,
    elapsed_s: u64,
    cpu_s: u64,
    daemon: bool,
}

pub fn generate(spec: &WorkloadSpec) -> Result<Fixtures, WorkloadError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let packages = make_packages(spec, &mut rng);

    let used_files = |kind: FileKind| -> Vec<String> {
        packages
            .iter()
            .filter(|p| p.used)
            .flat_map(|p| p.files.iter().filter(move |(_, k)| *k == kind).map(|(f, _)| f.clone()))
            .collect()
    };
    let mut libs = used_files(FileKind::Library);
    let exes = used_files(FileKind::Executable);

    libs.shuffle(&mut rng);
    let n_core = (spec.core_lib_fraction * libs.len() as f64).ceil() as usize;
    let (core, optional) = libs.split_at(n_core.min(libs.len()));

    let processes = make_processes(spec, &exes, &mut rng);

    // every installed executable and every executable actually run
    let mut dep_exes: Vec<String> = exes.clone();
    dep_exes.extend(processes.iter().map(|p| p.exe.clone()));
    dep_exes.sort();
    dep_exes.dedup();
    let mut depmap: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for exe in &dep_exes {
        let mut deps: Vec<String> = core.to_vec();
        if !optional.is_empty() {
            for _ in 0..rng.random_range(0..=2) {
                deps.push(optional[rng.random_range(0..optional.len())].clone());
            }
        }
        deps.sort();
        deps.dedup();
        depmap.insert(exe.clone(), deps);
    }

    let refs = make_refs(spec, &packages, core, &depmap, &processes, &mut rng);

    Ok(Fixtures {
        refsinfo: refs,
        psinfo: render_samples(&processes, &mut rng),
        manifest: render_manifest(&packages),
        depmap: depmap.iter().flat_map(|(exe, libs)| libs.iter().map(move |l| format!("{exe}\t{l}\n"))).collect(),
    })
}

fn make_packages(spec: &WorkloadSpec, rng: &mut ChaCha8Rng) -> Vec<Package> {
    let mut unused: Vec<bool> = vec![false; spec.n_packages];
    if spec.n_packages > 1 {
        let n_unused = (spec.unused_fraction * (spec.n_packages - 1) as f64).round() as usize;
        let mut candidates: Vec<usize> = (1..spec.n_packages).collect();
        candidates.shuffle(rng);
        for i in candidates.into_iter().take(n_unused) {
            unused[i] = true;
        }
    }

    let (lo, hi) = spec.files_per_package;
    (0..spec.n_packages)
        .map(|i| {
            let library_pkg = i == 0 || rng.random_bool(0.4);
            let name = if i == 0 {
                "libsimcore0".to_string()
            } else if library_pkg {
                format!("libsim{i}")
            } else {
                format!("sim-app{i}")
            };
            let mut n_files = rng.random_range(lo..=hi);
            if i == 0 {
                n_files = n_files.max(1);
            }
            let mut files = Vec::with_capacity(n_files + 1);
            for j in 0..n_files {
                let file = if library_pkg {
                    if j == 0 || rng.random_bool(0.5) {
                        (format!("{LIBDIR}/lib{}-{j}.so.{}", name.trim_start_matches("lib"), j % 3), FileKind::Library)
                    } else if rng.random_bool(0.15) {
                        (format!("/usr/share/{name}/notes,v{j}.txt"), FileKind::Data)
                    } else {
                        (format!("/usr/share/{name}/data{j}.dat"), FileKind::Data)
                    }
                } else if j == 0 {
                    (format!("/usr/bin/{name}"), FileKind::Executable)
                } else if rng.random_bool(0.3) {
                    (format!("/usr/bin/{name}-tool{j}"), FileKind::Executable)
                } else {
                    (format!("/etc/{name}/conf{j}"), FileKind::Data)
                };
                files.push(file);
            }
            let used = !unused[i];
            if used && n_files > 0 && rng.random_bool(0.5) {
                files.push((SHARED_DOC.to_string(), FileKind::Data));
            }
            Package { name, used, files }
        })
        .collect()
}

fn make_processes(spec: &WorkloadSpec, exes: &[String], rng: &mut ChaCha8Rng) -> Vec<Process> {
    let mut pid: u32 = 300;
    let mut next_pid = |rng: &mut ChaCha8Rng| {
        pid += rng.random_range(1..20);
        pid
    };
    let mut out = Vec::with_capacity(spec.n_daemons + spec.n_shortlived);
    let uptime = spec.uptime_s;
    for i in 0..spec.n_daemons {
        let exe = if exes.is_empty() {
            format!("/usr/local/sbin/simd{i}")
        } else {
            exes[rng.random_range(0..exes.len())].clone()
        };
        let elapsed_s = uptime - rng.random_range(0..=uptime / 50);
        let cpu_s = rng.random_range(0..=elapsed_s / 8);
        out.push(Process { exe, pid: next_pid(rng), elapsed_s, cpu_s, daemon: true });
    }
    for i in 0..spec.n_shortlived {
        // one job is a locally built tool no package owns
        let exe = if i == 0 || exes.is_empty() {
            format!("/home/dev/bin/devtool{i}")
        } else {
            exes[rng.random_range(0..exes.len())].clone()
        };
        let elapsed_s = rng.random_range(0..=uptime.min(600));
        let cpu_s = rng.random_range(0..=elapsed_s / 2);
        out.push(Process { exe, pid: next_pid(rng), elapsed_s, cpu_s, daemon: false });
    }
    out
}

/// Each process shows up in one to three consecutive one-second ticks, as the
/// collector would log it. Line order is shuffled.
fn render_samples(processes: &[Process], rng: &mut ChaCha8Rng) -> String {
    let mut lines = Vec::new();
    for p in processes {
        let ticks = rng.random_range(1..=3u64);
        for back in (0..ticks).rev() {
            let sample = crate::ingest::ProcessSample::new(
                p.exe.clone(),
                p.pid,
                p.elapsed_s.saturating_sub(back),
                p.cpu_s.saturating_sub(back),
            );
            lines.push(format!("{sample}\n"));
        }
    }
    lines.shuffle(rng);
    lines.concat()
}

fn render_manifest(packages: &[Package]) -> String {
    let mut lines: Vec<String> = Vec::new();
    for p in packages {
        if p.files.is_empty() {
            lines.push(format!("{}\t\n", p.name));
        }
        for (f, _) in &p.files {
            lines.push(format!("{}\t{f}\n", p.name));
        }
    }
    lines.sort();
    lines.dedup();
    lines.concat()
}

fn make_refs(
    spec: &WorkloadSpec,
    packages: &[Package],
    core: &[String],
    depmap: &BTreeMap<String, Vec<String>>,
    processes: &[Process],
    rng: &mut ChaCha8Rng,
) -> String {
    let days = spec.uptime_s / 86_400;
    let mut counts: BTreeMap<String, (u64, u64, u64)> = BTreeMap::new();

    // Core libraries: opened by every process, read heavily. At least 100
    // reads each keeps them above any single data file or executable.
    let n_proc = processes.len() as u64;
    for lib in core {
        let n_open = (n_proc + 1) * rng.random_range(1..=3) + spec.uptime_s / 3_600;
        let n_read = (n_open * rng.random_range(5..=20)).max(100);
        let still_open = rng.random_range(0..=n_open.min(2));
        counts.insert(lib.clone(), (n_open, n_read, n_open - still_open));
    }

    // Other libraries loaded by running processes; daemon users accumulate
    // with uptime.
    for p in processes {
        for lib in depmap.get(&p.exe).into_iter().flatten() {
            if core.contains(lib) {
                continue;
            }
            let n_open = rng.random_range(1..=5) + if p.daemon { days + 1 } else { 0 };
            let e = counts.entry(lib.clone()).or_default();
            e.0 += n_open;
            e.1 += n_open * rng.random_range(1..=10);
            e.2 += n_open;
        }
    }

    // Executables of running processes: opened and closed once per exec.
    for p in processes {
        let e = counts.entry(p.exe.clone()).or_default();
        e.0 += 1;
        e.1 += rng.random_range(1..=4);
        e.2 += 1;
    }

    // Data files, idle executables and the shared doc directory of used
    // packages: light, bounded traffic. Closes may exceed opens when a file
    // was already open before capture started.
    for p in packages.iter().filter(|p| p.used) {
        for (file, kind) in &p.files {
            let p_ref = match kind {
                FileKind::Library => 0.3,
                FileKind::Executable => 0.3,
                FileKind::Data => 0.6,
            };
            if counts.contains_key(file) || !rng.random_bool(p_ref) {
                continue;
            }
            counts.insert(file.clone(), (rng.random_range(1..=3), rng.random_range(0..=20), rng.random_range(0..=4)));
        }
    }

    for j in 0..2 {
        counts.insert(
            format!("/tmp/sim-{}/scratch{j}.log", spec.rng_seed),
            (rng.random_range(1..=3), rng.random_range(0..=10), rng.random_range(0..=3)),
        );
    }

    // Split some records across two lines, as repeated captures would.
    let mut lines = Vec::with_capacity(counts.len() + counts.len() / 4);
    for (file, (o, r, c)) in counts {
        if rng.random_bool(0.2) {
            let (o1, r1, c1) = (rng.random_range(0..=o), rng.random_range(0..=r), rng.random_range(0..=c));
            lines.push(format!("{file},{o1},{r1},{c1}\n"));
            lines.push(format!("{file},{},{},{}\n", o - o1, r - r1, c - c1));
        } else {
            lines.push(format!("{file},{o},{r},{c}\n"));
        }
    }
    lines.shuffle(rng);
    lines.concat()
}
