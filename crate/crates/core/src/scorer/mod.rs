//! File and package usage scoring.
//!
//! Every file gets a reference score from its open/read/close counts and a
//! process score from the runtime of processes that execute or load it. A
//! process's score lands on its executable and is added to every library the
//! executable links against. Package scores are the sums of the totals of the
//! files they own.

mod config;

use std::collections::{btree_map, BTreeMap, HashMap};

pub use config::{ConfigError, ScoreConfig};

use crate::deps::DependencyMap;
use crate::exec::{self, Execution};
use crate::ingest::{merge_refs, ProcessSample, RefRecord};
use crate::pkgdb::{OwnershipIndex, UNOWNED};

/// Reference-count score for one file.
pub fn score_fs(rec: &RefRecord, cfg: &ScoreConfig) -> f64 {
    let (open, read, close) = (rec.n_open as f64, rec.n_read as f64, rec.n_close as f64);
    let net_open = if cfg.clamp_net_open { rec.n_open.saturating_sub(rec.n_close) as f64 } else { open - close };
    cfg.open_bonus * net_open + cfg.w_open * open + cfg.w_read * read + cfg.w_close * close
}

/// Runtime score for one process.
pub fn score_ps(sample: &ProcessSample, cfg: &ScoreConfig) -> f64 {
    cfg.w_elapsed * sample.elapsed_s as f64 + cfg.w_cpu * sample.cpu_s as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct FileScore {
    pub path: String,
    pub s_fs: f64,
    pub s_ps: f64,
    pub total: f64,
}

impl FileScore {
    fn new(path: String, s_fs: f64, s_ps: f64, cfg: &ScoreConfig) -> Self {
        FileScore { path, s_fs, s_ps, total: cfg.w_f * s_fs + cfg.w_r * s_ps }
    }
}

/// Per-file scores keyed by path.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreTable {
    files: BTreeMap<String, FileScore>,
}

impl ScoreTable {
    pub fn get(&self, path: &str) -> Option<&FileScore> {
        self.files.get(path)
    }

    pub fn iter(&self) -> impl Iterator<Item = &FileScore> {
        self.files.values()
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    /// `(path, total)` pairs, ordered by path.
    pub fn totals(&self) -> impl Iterator<Item = (&str, f64)> {
        self.files.values().map(|f| (f.path.as_str(), f.total))
    }

    /// Rewrites every path through `resolve` (e.g. symlink canonicalization).
    /// Paths it cannot resolve are kept as-is; entries that collide are summed.
    pub fn rewrite_paths<F>(self, mut resolve: F) -> ScoreTable
    where
        F: FnMut(&str) -> Option<String>,
    {
        let mut files: BTreeMap<String, FileScore> = BTreeMap::new();
        for (path, score) in self.files {
            let target = resolve(&path).unwrap_or(path);
            match files.entry(target) {
                btree_map::Entry::Vacant(v) => {
                    let path = v.key().clone();
                    v.insert(FileScore { path, ..score });
                }
                btree_map::Entry::Occupied(mut o) => {
                    let merged = o.get_mut();
                    merged.s_fs += score.s_fs;
                    merged.s_ps += score.s_ps;
                    merged.total += score.total;
                }
            }
        }
        ScoreTable { files }
    }
}

impl FromIterator<FileScore> for ScoreTable {
    fn from_iter<I: IntoIterator<Item = FileScore>>(iter: I) -> Self {
        ScoreTable { files: iter.into_iter().map(|f| (f.path.clone(), f)).collect() }
    }
}

/// Keeps one sample per pid: the one with the largest elapsed time. Ties go
/// to the larger CPU time, then to the lexicographically smaller executable,
/// so the result does not depend on log order. Output is ordered by pid.
pub fn dedup_samples(samples: &[ProcessSample]) -> Vec<&ProcessSample> {
    let mut latest: HashMap<u32, &ProcessSample> = HashMap::new();
    for s in samples {
        latest
            .entry(s.pid)
            .and_modify(|kept| {
                let better = (s.elapsed_s, s.cpu_s) > (kept.elapsed_s, kept.cpu_s)
                    || ((s.elapsed_s, s.cpu_s) == (kept.elapsed_s, kept.cpu_s) && s.exe_path < kept.exe_path);
                if better {
                    *kept = s;
                }
            })
            .or_insert(s);
    }
    let mut out: Vec<&ProcessSample> = latest.into_values().collect();
    out.sort_by_key(|s| s.pid);
    out
}

/// Process score per executable: the sum over its distinct pids.
pub fn process_scores(samples: &[ProcessSample], cfg: &ScoreConfig) -> BTreeMap<String, f64> {
    let mut per_exe: BTreeMap<String, f64> = BTreeMap::new();
    for s in dedup_samples(samples) {
        *per_exe.entry(s.exe_path.clone()).or_insert(0.0) += score_ps(s, cfg);
    }
    per_exe
}

pub fn build_score_table(
    refs: &[RefRecord],
    samples: &[ProcessSample],
    depmap: &DependencyMap,
    cfg: &ScoreConfig,
) -> ScoreTable {
    build_score_table_with(refs, samples, depmap, cfg, Execution::default())
}

/// Builds the per-file score table.
///
/// Executables keep their own process score; each library additionally
/// receives the process score of every executable (with a positive score)
/// that links it. Propagation is one level deep: a library's received score
/// is not passed on to its own dependencies.
pub fn build_score_table_with(
    refs: &[RefRecord],
    samples: &[ProcessSample],
    depmap: &DependencyMap,
    cfg: &ScoreConfig,
    exec: Execution,
) -> ScoreTable {
    let refs = merge_refs([refs]);
    let s_fs: Vec<f64> = exec::map(&refs, exec, |r| score_fs(r, cfg));

    let own_ps = process_scores(samples, cfg);

    // library -> executables that load it, in path order
    let mut loaded_by: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (exe, ps) in &own_ps {
        if *ps > 0.0 {
            for lib in depmap.libraries_of(exe) {
                loaded_by.entry(lib).or_default().push(exe);
            }
        }
    }
    let libs: Vec<(&str, Vec<&str>)> = loaded_by.into_iter().collect();
    let received: Vec<f64> = exec::map(&libs, exec, |(_, exes)| exes.iter().fold(0.0, |acc, e| acc + own_ps[*e]));

    let mut parts: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    for (r, fs) in refs.iter().zip(&s_fs) {
        parts.entry(&r.filename).or_default().0 = *fs;
    }
    for (exe, ps) in &own_ps {
        parts.entry(exe).or_default().1 += ps;
    }
    for ((lib, _), ps) in libs.iter().zip(&received) {
        parts.entry(lib).or_default().1 += ps;
    }

    parts.into_iter().map(|(path, (fs, ps))| FileScore::new(path.to_string(), fs, ps, cfg)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PackageScore {
    pub package: String,
    pub total: f64,
    pub file_count: usize,
}

pub fn aggregate_packages(table: &ScoreTable, index: &OwnershipIndex) -> Vec<PackageScore> {
    aggregate_packages_with(table, index, Execution::default())
}

/// Sums file totals per owning package. Every installed package appears
/// once, in name order; a file owned by several packages credits each of them
/// in full. Scored files nobody owns go to [`UNOWNED`], which is listed last
/// and only when non-empty.
pub fn aggregate_packages_with(table: &ScoreTable, index: &OwnershipIndex, exec: Execution) -> Vec<PackageScore> {
    let mut owned: BTreeMap<&str, Vec<f64>> = index.all_packages().iter().map(|p| (p.as_str(), Vec::new())).collect();
    let mut unowned: Vec<f64> = Vec::new();
    for file in table.iter() {
        let owners = index.owners_of(&file.path);
        if owners.is_empty() {
            unowned.push(file.total);
        }
        for owner in owners {
            owned.entry(owner).or_default().push(file.total);
        }
    }
    let mut buckets: Vec<(&str, Vec<f64>)> = owned.into_iter().collect();
    if !unowned.is_empty() {
        buckets.push((UNOWNED, unowned));
    }
    exec::map(&buckets, exec, |(package, totals)| PackageScore {
        package: package.to_string(),
        total: totals.iter().fold(0.0, |acc, t| acc + t),
        file_count: totals.len(),
    })
}
