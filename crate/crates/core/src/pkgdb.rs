//! Installed-package manifests and the reverse path → package index.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, BufRead, BufReader};
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Pseudo-package collecting files that no installed package lists.
pub const UNOWNED: &str = "(unowned)";

#[derive(Debug, Error)]
pub enum PkgDbError {
    #[error("manifest directory {0} does not exist or is not a directory")]
    MissingDir(PathBuf),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line_no}: malformed manifest line: {reason}")]
    MalformedLine { line_no: usize, reason: String },
}

/// Non-fatal problems met while loading a manifest directory.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ManifestWarning {
    #[error("cannot read manifest for {package}: {reason}")]
    UnreadableList { package: String, reason: String },
    #[error("{file}: {name:?} is not a valid package name")]
    InvalidPackageName { file: String, name: String },
    #[error("{package}.list line {line_no}: {path:?} is not an absolute path")]
    RelativePath { package: String, line_no: usize, path: String },
}

/// One package and the files it installs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackageManifest {
    pub package: String,
    pub files: BTreeSet<String>,
}

/// Checks a package name against the Debian policy charset. A `:arch`
/// qualifier, as used by multiarch `.list` files, is accepted.
pub fn is_valid_package_name(name: &str) -> bool {
    let (base, arch) = match name.split_once(':') {
        Some((b, a)) => (b, Some(a)),
        None => (name, None),
    };
    let base_ok = base.bytes().next().is_some_and(|b| b.is_ascii_lowercase() || b.is_ascii_digit())
        && base.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || matches!(b, b'+' | b'-' | b'.'));
    let arch_ok = arch
        .is_none_or(|a| !a.is_empty() && a.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-'));
    base_ok && arch_ok
}

/// Reverse ownership map. Immutable once built.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OwnershipIndex {
    by_file: BTreeMap<String, BTreeSet<String>>,
    all_packages: BTreeSet<String>,
}

static NO_OWNERS: BTreeSet<String> = BTreeSet::new();

impl OwnershipIndex {
    pub fn from_manifests<I: IntoIterator<Item = PackageManifest>>(manifests: I) -> Self {
        let mut index = OwnershipIndex::default();
        for m in manifests {
            for file in m.files {
                index.add_file(&m.package, file);
            }
            index.all_packages.insert(m.package);
        }
        index
    }

    fn add_file(&mut self, package: &str, path: String) {
        self.by_file.entry(path).or_default().insert(package.to_string());
    }

    /// Exact-match lookup; paths are not canonicalized.
    pub fn owners_of(&self, path: &str) -> &BTreeSet<String> {
        self.by_file.get(path).unwrap_or(&NO_OWNERS)
    }

    pub fn all_packages(&self) -> &BTreeSet<String> {
        &self.all_packages
    }

    pub fn files(&self) -> impl Iterator<Item = (&str, &BTreeSet<String>)> {
        self.by_file.iter().map(|(p, o)| (p.as_str(), o))
    }

    pub fn file_count(&self) -> usize {
        self.by_file.len()
    }

    /// Renders the index as a consolidated manifest.
    pub fn to_consolidated(&self) -> String {
        let mut per_pkg: BTreeMap<&str, Vec<&str>> =
            self.all_packages.iter().map(|p| (p.as_str(), Vec::new())).collect();
        for (path, owners) in &self.by_file {
            for owner in owners {
                per_pkg.entry(owner).or_default().push(path);
            }
        }
        let mut out = String::new();
        for (pkg, files) in per_pkg {
            if files.is_empty() {
                out.push_str(&format!("{pkg}\t\n"));
            }
            for f in files {
                out.push_str(&format!("{pkg}\t{f}\n"));
            }
        }
        out
    }
}

/// Loads a dpkg info directory: every `<package>.list` file becomes one
/// package. Other files in the directory are ignored.
pub fn load_manifest_dir(dir: &Path) -> Result<(OwnershipIndex, Vec<ManifestWarning>), PkgDbError> {
    if !dir.is_dir() {
        return Err(PkgDbError::MissingDir(dir.to_path_buf()));
    }
    let entries = fs::read_dir(dir).map_err(|source| PkgDbError::Io { path: dir.to_path_buf(), source })?;
    let mut lists: Vec<(String, PathBuf)> = Vec::new();
    let mut warnings = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| PkgDbError::Io { path: dir.to_path_buf(), source })?;
        let file_name = entry.file_name().to_string_lossy().into_owned();
        let Some(name) = file_name.strip_suffix(".list") else {
            continue;
        };
        if !is_valid_package_name(name) {
            warnings.push(ManifestWarning::InvalidPackageName { file: file_name.clone(), name: name.to_string() });
            continue;
        }
        lists.push((name.to_string(), entry.path()));
    }
    lists.sort();

    let mut manifests = Vec::with_capacity(lists.len());
    for (package, path) in lists {
        match read_list(&package, &path, &mut warnings) {
            Ok(files) => manifests.push(PackageManifest { package, files }),
            Err(e) => warnings.push(ManifestWarning::UnreadableList { package, reason: e.to_string() }),
        }
    }
    Ok((OwnershipIndex::from_manifests(manifests), warnings))
}

fn read_list(package: &str, path: &Path, warnings: &mut Vec<ManifestWarning>) -> io::Result<BTreeSet<String>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut files = BTreeSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        if !line.starts_with('/') {
            warnings.push(ManifestWarning::RelativePath {
                package: package.to_string(),
                line_no: i + 1,
                path: line.to_string(),
            });
            continue;
        }
        files.insert(line.to_string());
    }
    Ok(files)
}

/// Loads a consolidated `package<TAB>path` manifest. A line with an empty
/// path declares a package that owns nothing.
pub fn load_consolidated_manifest(path: &Path) -> Result<OwnershipIndex, PkgDbError> {
    let file = fs::File::open(path).map_err(|source| PkgDbError::Io { path: path.to_path_buf(), source })?;
    parse_consolidated_manifest(BufReader::new(file)).map_err(|e| match e {
        PkgDbError::Io { source, .. } => PkgDbError::Io { path: path.to_path_buf(), source },
        other => other,
    })
}

pub fn parse_consolidated_manifest<R: BufRead>(source: R) -> Result<OwnershipIndex, PkgDbError> {
    let mut index = OwnershipIndex::default();
    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| PkgDbError::Io { path: PathBuf::new(), source })?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let malformed = |reason: String| PkgDbError::MalformedLine { line_no, reason };
        let (package, file) =
            line.split_once('\t').ok_or_else(|| malformed("expected <package>\\t<path>".to_string()))?;
        if !is_valid_package_name(package) {
            return Err(malformed(format!("{package:?} is not a valid package name")));
        }
        if !file.is_empty() {
            if !file.starts_with('/') {
                return Err(malformed(format!("{file:?} is not an absolute path")));
            }
            index.add_file(package, file.to_string());
        }
        index.all_packages.insert(package.to_string());
    }
    Ok(index)
}
