//! Executable → shared library map, from a static fixture or a live `ldd`
//! probe.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, BufRead, BufReader};
use std::path::Path;
use std::process::Command;

use thiserror::Error;

use crate::exec::{self, Execution};

/// Default linker listing tool.
pub const LDD: &str = "ldd";

#[derive(Debug, Error)]
pub enum DepsError {
    #[error("cannot read dependency map: {0}")]
    Io(#[from] io::Error),
    #[error("line {line_no}: malformed dependency line: {reason}")]
    MalformedLine { line_no: usize, reason: String },
    #[error("linker listing tool {tool:?} is unavailable: {reason}")]
    ProbeUnavailable { tool: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("probing {exe} failed: {reason}")]
pub struct ProbeFailed {
    pub exe: String,
    pub reason: String,
}

/// Flat (already transitive) library sets per executable.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DependencyMap {
    by_exe: BTreeMap<String, BTreeSet<String>>,
}

static NO_DEPS: BTreeSet<String> = BTreeSet::new();

impl DependencyMap {
    /// Records `lib` as a dependency of `exe`. Self-references are dropped.
    pub fn insert(&mut self, exe: &str, lib: &str) {
        if exe == lib {
            return;
        }
        self.by_exe.entry(exe.to_string()).or_default().insert(lib.to_string());
    }

    pub fn libraries_of(&self, exe: &str) -> &BTreeSet<String> {
        self.by_exe.get(exe).unwrap_or(&NO_DEPS)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &BTreeSet<String>)> {
        self.by_exe.iter().map(|(e, l)| (e.as_str(), l))
    }

    pub fn is_empty(&self) -> bool {
        self.by_exe.is_empty()
    }

    pub fn union(&mut self, other: &DependencyMap) {
        for (exe, libs) in &other.by_exe {
            self.by_exe.entry(exe.clone()).or_default().extend(libs.iter().cloned());
        }
    }

    /// Renders the map in the static `exe<TAB>lib` format.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (exe, libs) in &self.by_exe {
            for lib in libs {
                out.push_str(exe);
                out.push('\t');
                out.push_str(lib);
                out.push('\n');
            }
        }
        out
    }
}

pub fn load_dependency_map(path: &Path) -> Result<DependencyMap, DepsError> {
    parse_dependency_map(BufReader::new(fs::File::open(path)?))
}

pub fn parse_dependency_map<R: BufRead>(source: R) -> Result<DependencyMap, DepsError> {
    let mut map = DependencyMap::default();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let malformed = |reason: &str| DepsError::MalformedLine { line_no: i + 1, reason: reason.to_string() };
        let (exe, lib) = line.split_once('\t').ok_or_else(|| malformed("expected <exe>\\t<lib>"))?;
        if !exe.starts_with('/') || !lib.starts_with('/') || lib.contains('\t') {
            return Err(malformed("both fields must be absolute paths"));
        }
        map.insert(exe, lib);
    }
    Ok(map)
}

/// Extracts resolved library paths from `ldd` output. Handles
/// `name => /abs/path (addr)` and `/abs/path (addr)`; vdso entries and
/// `not found` lines carry no path and are skipped.
pub fn parse_ldd_output(text: &str) -> BTreeSet<String> {
    text.lines()
        .filter_map(|line| {
            let line = line.trim();
            let target = match line.split_once("=>") {
                Some((_, rhs)) => rhs.trim(),
                None => line,
            };
            if !target.starts_with('/') {
                return None;
            }
            let path = match target.rfind(" (") {
                Some(i) => &target[..i],
                None => target,
            };
            Some(path.trim_end().to_string())
        })
        .collect()
}

/// Probes every executable with the host `ldd`.
pub fn probe_live<'a, I>(exe_paths: I) -> Result<(DependencyMap, Vec<ProbeFailed>), DepsError>
where
    I: IntoIterator<Item = &'a str>,
{
    probe_live_with(LDD, exe_paths, Execution::default())
}

/// Probes with an arbitrary linker listing tool. One query runs per
/// executable, fanned out when `exec` is parallel; the merge is a set union so
/// completion order does not show in the result.
pub fn probe_live_with<'a, I>(
    tool: &str,
    exe_paths: I,
    exec: Execution,
) -> Result<(DependencyMap, Vec<ProbeFailed>), DepsError>
where
    I: IntoIterator<Item = &'a str>,
{
    Command::new(tool)
        .arg("--version")
        .output()
        .map_err(|e| DepsError::ProbeUnavailable { tool: tool.to_string(), reason: e.to_string() })?;

    let exes: Vec<&str> = exe_paths.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
    let results = exec::map(&exes, exec, |exe| probe_one(tool, exe));

    let mut map = DependencyMap::default();
    let mut failures = Vec::new();
    for (exe, result) in exes.iter().zip(results) {
        match result {
            Ok(libs) => {
                for lib in &libs {
                    map.insert(exe, lib);
                }
            }
            Err(reason) => failures.push(ProbeFailed { exe: exe.to_string(), reason }),
        }
    }
    Ok((map, failures))
}

fn probe_one(tool: &str, exe: &str) -> Result<BTreeSet<String>, String> {
    let output = Command::new(tool).arg(exe).output().map_err(|e| e.to_string())?;
    let stdout = String::from_utf8_lossy(&output.stdout);
    let stderr = String::from_utf8_lossy(&output.stderr);
    if stdout.contains("not a dynamic executable") || stderr.contains("not a dynamic executable") {
        return Ok(BTreeSet::new());
    }
    if !output.status.success() {
        return Err(format!("{} exited with {}: {}", tool, output.status, stderr.trim()));
    }
    Ok(parse_ldd_output(&stdout))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn static_map_basics() {
        let m = parse_dependency_map("/usr/bin/dockerd\t/lib/x/libc.so.6\n".as_bytes()).unwrap();
        assert!(m.libraries_of("/usr/bin/dockerd").contains("/lib/x/libc.so.6"));

        let empty = parse_dependency_map("".as_bytes()).unwrap();
        assert!(empty.is_empty());
        assert!(empty.libraries_of("/usr/bin/anything").is_empty());

        let twice = parse_dependency_map("/a\t/l\n/a\t/l\n".as_bytes()).unwrap();
        let once = parse_dependency_map("/a\t/l\n".as_bytes()).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn static_map_drops_self_dependency() {
        let m = parse_dependency_map("/a\t/a\n/a\t/l\n".as_bytes()).unwrap();
        assert_eq!(m.libraries_of("/a"), &set(&["/l"]));
    }

    #[test]
    fn static_map_malformed() {
        for text in ["/a /l\n", "a\t/l\n", "/a\tl\n", "/a\t/l\t/m\n"] {
            assert!(
                matches!(parse_dependency_map(text.as_bytes()), Err(DepsError::MalformedLine { line_no: 1, .. })),
                "{text:?}"
            );
        }
    }

    #[test]
    fn ldd_line_forms() {
        let out = "\tlinux-vdso.so.1 (0x00007ffe5d5f2000)\n\
                   \tlibc.so.6 => /lib/x/libc.so.6 (0x00007f3c1a200000)\n\
                   \tlibmissing.so.1 => not found\n\
                   \t/lib64/ld-linux-x86-64.so.2 (0x00007f3c1a5f1000)\n";
        assert_eq!(parse_ldd_output(out), set(&["/lib/x/libc.so.6", "/lib64/ld-linux-x86-64.so.2"]));
        assert!(parse_ldd_output("\tnot a dynamic executable\n").is_empty());
        assert!(parse_ldd_output("\tlinux-vdso.so.1 (0x7ffe...)\n").is_empty());
    }

    #[test]
    fn probe_with_missing_tool_is_unavailable() {
        let err = probe_live_with("/nonexistent/ldd-tool", ["/bin/sh"], Execution::Sequential).unwrap_err();
        assert!(matches!(err, DepsError::ProbeUnavailable { .. }));
    }

    #[test]
    fn probe_live_host() {
        let Ok((map, failures)) = probe_live(["/bin/sh", "/nonexistent/binary"]) else {
            eprintln!("ldd not available; skipping");
            return;
        };
        assert_eq!(failures.len(), 1);
        assert_eq!(failures[0].exe, "/nonexistent/binary");
        for (exe, libs) in map.iter() {
            assert_eq!(exe, "/bin/sh");
            assert!(libs.iter().all(|l| l.starts_with('/')));
        }
        let reloaded = parse_dependency_map(map.to_tsv().as_bytes()).unwrap();
        assert_eq!(map, reloaded);
    }

    fn dep_lines() -> impl Strategy<Value = Vec<(String, String)>> {
        proptest::collection::vec(("/e[0-4]", "/l[0-9]"), 0..20)
    }

    fn render(lines: &[(String, String)]) -> String {
        lines.iter().map(|(e, l)| format!("{e}\t{l}\n")).collect()
    }

    proptest! {
        #[test]
        fn concatenation_is_union(a in dep_lines(), b in dep_lines()) {
            let whole = parse_dependency_map(format!("{}{}", render(&a), render(&b)).as_bytes()).unwrap();
            let mut merged = parse_dependency_map(render(&a).as_bytes()).unwrap();
            merged.union(&parse_dependency_map(render(&b).as_bytes()).unwrap());
            prop_assert_eq!(&whole, &merged);
            prop_assert_eq!(parse_dependency_map(whole.to_tsv().as_bytes()).unwrap(), whole);
        }
    }
}
