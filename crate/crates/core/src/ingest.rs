//! Parsers for the two capture logs.
//!
//! `refsinfo` is the kernel export of per-file reference counts, one
//! `<path>,<nopen>,<nread>,<nclose>` line per file. `psinfo` is the user-space
//! process log, one `<exe>,<etime>,<pid>,<cputime>` line per observed process
//! per sampling tick. Neither format quotes the path, so both are split on the
//! last three commas.
//!
//! Parsing is lenient: a bad line is recorded as a [`ParseIssue`] and skipped.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, BufRead};

use thiserror::Error;

/// Default upper bound on `cpu_s / elapsed_s` before a sample is flagged.
pub const DEFAULT_MAX_CORES: u64 = 256;

/// Open/read/close counts for one file.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RefRecord {
    pub filename: String,
    pub n_open: u64,
    pub n_read: u64,
    pub n_close: u64,
}

impl RefRecord {
    pub fn new(filename: impl Into<String>, n_open: u64, n_read: u64, n_close: u64) -> Self {
        RefRecord { filename: filename.into(), n_open, n_read, n_close }
    }

    fn absorb(&mut self, other: &RefRecord) {
        self.n_open = self.n_open.saturating_add(other.n_open);
        self.n_read = self.n_read.saturating_add(other.n_read);
        self.n_close = self.n_close.saturating_add(other.n_close);
    }
}

impl fmt::Display for RefRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.filename, self.n_open, self.n_read, self.n_close)
    }
}

/// One observation of a running process.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ProcessSample {
    pub exe_path: String,
    pub pid: u32,
    pub elapsed_s: u64,
    pub cpu_s: u64,
}

impl ProcessSample {
    pub fn new(exe_path: impl Into<String>, pid: u32, elapsed_s: u64, cpu_s: u64) -> Self {
        ProcessSample { exe_path: exe_path.into(), pid, elapsed_s, cpu_s }
    }
}

impl fmt::Display for ProcessSample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.exe_path, format_clock(self.elapsed_s), self.pid, format_clock(self.cpu_s))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseIssue {
    #[error("line {line_no}: malformed line: {reason}")]
    MalformedLine { line_no: usize, reason: String },
    /// The record is kept; the CPU time is implausible for its elapsed time.
    #[error("line {line_no}: suspect sample: cpu {cpu_s}s exceeds bound for elapsed {elapsed_s}s")]
    SuspectSample { line_no: usize, elapsed_s: u64, cpu_s: u64 },
}

impl ParseIssue {
    pub fn line_no(&self) -> usize {
        match self {
            ParseIssue::MalformedLine { line_no, .. } | ParseIssue::SuspectSample { line_no, .. } => *line_no,
        }
    }

    /// Whether the offending line was dropped.
    pub fn is_skip(&self) -> bool {
        matches!(self, ParseIssue::MalformedLine { .. })
    }

    fn malformed(line_no: usize, reason: impl Into<String>) -> Self {
        ParseIssue::MalformedLine { line_no, reason: reason.into() }
    }
}

/// Records recovered from a log plus everything that went wrong on the way.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Parsed<T> {
    pub records: Vec<T>,
    pub issues: Vec<ParseIssue>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("bad clock format {0:?}")]
pub struct BadClockFormat(pub String);

/// Parses a `[[dd-]hh:]mm:ss` duration into whole seconds.
pub fn parse_etime(text: &str) -> Result<u64, BadClockFormat> {
    let bad = || BadClockFormat(text.to_string());
    let (days, clock) = match text.split_once('-') {
        Some((d, rest)) => (Some(parse_digits(d).ok_or_else(bad)?), rest),
        None => (None, text),
    };
    let parts: Vec<&str> = clock.split(':').collect();
    let nums = parts.iter().map(|p| parse_digits(p)).collect::<Option<Vec<u64>>>().ok_or_else(bad)?;
    let (hours, minutes, seconds) = match (days.is_some(), nums.as_slice()) {
        (false, [m, s]) => (0, *m, *s),
        (_, [h, m, s]) => (*h, *m, *s),
        _ => return Err(bad()),
    };
    if minutes > 59 || seconds > 59 || (days.is_some() && hours > 23) {
        return Err(bad());
    }
    let total = days
        .unwrap_or(0)
        .checked_mul(86_400)
        .and_then(|d| d.checked_add(hours.checked_mul(3_600)?))
        .and_then(|t| t.checked_add(minutes * 60 + seconds))
        .ok_or_else(bad)?;
    Ok(total)
}

/// Renders seconds the way `ps -o etime` does: `mm:ss`, `hh:mm:ss` or
/// `dd-hh:mm:ss`, whichever is shortest.
pub fn format_clock(total_s: u64) -> String {
    let days = total_s / 86_400;
    let hours = (total_s % 86_400) / 3_600;
    let minutes = (total_s % 3_600) / 60;
    let seconds = total_s % 60;
    if days > 0 {
        format!("{days}-{hours:02}:{minutes:02}:{seconds:02}")
    } else if hours > 0 {
        format!("{hours:02}:{minutes:02}:{seconds:02}")
    } else {
        format!("{minutes:02}:{seconds:02}")
    }
}

fn parse_digits(s: &str) -> Option<u64> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

/// Splits `path,a,b,c` on its last three commas. The path keeps any commas of
/// its own.
fn split_last_three(line: &str) -> Option<(&str, [&str; 3])> {
    let mut it = line.rsplitn(4, ',');
    let c = it.next()?;
    let b = it.next()?;
    let a = it.next()?;
    let path = it.next()?;
    Some((path, [a, b, c]))
}

fn check_path(path: &str) -> Result<(), String> {
    if !path.starts_with('/') {
        return Err(format!("path {path:?} is not absolute"));
    }
    Ok(())
}

/// Yields `(line_no, line)` for every non-empty line. Invalid UTF-8 is
/// reported instead of aborting the read.
fn for_each_line<R: BufRead>(mut source: R, mut f: impl FnMut(usize, Result<&str, ParseIssue>)) -> io::Result<()> {
    let mut buf = Vec::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        if source.read_until(b'\n', &mut buf)? == 0 {
            return Ok(());
        }
        line_no += 1;
        let bytes = buf.strip_suffix(b"\n").unwrap_or(&buf);
        let bytes = bytes.strip_suffix(b"\r").unwrap_or(bytes);
        if bytes.is_empty() {
            continue;
        }
        match std::str::from_utf8(bytes) {
            Ok(line) => f(line_no, Ok(line)),
            Err(_) => f(line_no, Err(ParseIssue::malformed(line_no, "invalid UTF-8"))),
        }
    }
}

fn parse_ref_line(line: &str) -> Result<RefRecord, String> {
    let (path, [open, read, close]) =
        split_last_three(line).ok_or_else(|| "expected <path>,<nopen>,<nread>,<nclose>".to_string())?;
    check_path(path)?;
    let count = |field: &str, name: &str| {
        parse_digits(field).ok_or_else(|| format!("{name} {field:?} is not a non-negative integer"))
    };
    Ok(RefRecord::new(path, count(open, "nopen")?, count(read, "nread")?, count(close, "nclose")?))
}

/// Parses a refsinfo stream. Duplicate filenames are summed field-wise and the
/// result is ordered by filename.
pub fn parse_refsinfo<R: BufRead>(source: R) -> io::Result<Parsed<RefRecord>> {
    let mut merged: BTreeMap<String, RefRecord> = BTreeMap::new();
    let mut issues = Vec::new();
    for_each_line(source, |line_no, line| {
        let rec = line.and_then(|l| parse_ref_line(l).map_err(|r| ParseIssue::malformed(line_no, r)));
        match rec {
            Ok(rec) => insert_merged(&mut merged, rec),
            Err(issue) => issues.push(issue),
        }
    })?;
    Ok(Parsed { records: merged.into_values().collect(), issues })
}

fn insert_merged(merged: &mut BTreeMap<String, RefRecord>, rec: RefRecord) {
    match merged.get_mut(&rec.filename) {
        Some(existing) => existing.absorb(&rec),
        None => {
            merged.insert(rec.filename.clone(), rec);
        }
    }
}

/// Field-wise merge of several record lists, ordered by filename.
pub fn merge_refs<'a, I>(lists: I) -> Vec<RefRecord>
where
    I: IntoIterator<Item = &'a [RefRecord]>,
{
    let mut merged = BTreeMap::new();
    for rec in lists.into_iter().flatten() {
        insert_merged(&mut merged, rec.clone());
    }
    merged.into_values().collect()
}

/// Renders records in the refsinfo wire format.
pub fn refsinfo_text(records: &[RefRecord]) -> String {
    records.iter().map(|r| format!("{r}\n")).collect()
}

fn parse_ps_line(line: &str) -> Result<ProcessSample, String> {
    let (path, [etime, pid, cputime]) =
        split_last_three(line).ok_or_else(|| "expected <exe>,<etime>,<pid>,<cputime>".to_string())?;
    check_path(path)?;
    let elapsed_s = parse_etime(etime).map_err(|e| format!("etime: {e}"))?;
    let cpu_s = parse_etime(cputime).map_err(|e| format!("cputime: {e}"))?;
    let pid = parse_digits(pid)
        .and_then(|p| u32::try_from(p).ok())
        .filter(|p| *p > 0)
        .ok_or_else(|| format!("pid {pid:?} is not a positive integer"))?;
    Ok(ProcessSample::new(path, pid, elapsed_s, cpu_s))
}

/// Parses a psinfo stream with the default core-count bound.
pub fn parse_psinfo<R: BufRead>(source: R) -> io::Result<Parsed<ProcessSample>> {
    parse_psinfo_with(source, DEFAULT_MAX_CORES)
}

/// Parses a psinfo stream. Samples are returned in log order, undeduplicated.
/// A sample whose CPU time exceeds `elapsed_s * max_cores` is kept but flagged.
pub fn parse_psinfo_with<R: BufRead>(source: R, max_cores: u64) -> io::Result<Parsed<ProcessSample>> {
    let mut records = Vec::new();
    let mut issues = Vec::new();
    for_each_line(source, |line_no, line| {
        let sample = line.and_then(|l| parse_ps_line(l).map_err(|r| ParseIssue::malformed(line_no, r)));
        match sample {
            Ok(s) => {
                if s.cpu_s > s.elapsed_s.saturating_mul(max_cores) {
                    issues.push(ParseIssue::SuspectSample { line_no, elapsed_s: s.elapsed_s, cpu_s: s.cpu_s });
                }
                records.push(s);
            }
            Err(issue) => issues.push(issue),
        }
    })?;
    Ok(Parsed { records, issues })
}

/// Renders samples in the psinfo wire format.
pub fn psinfo_text(samples: &[ProcessSample]) -> String {
    samples.iter().map(|s| format!("{s}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn refs(text: &str) -> Parsed<RefRecord> {
        parse_refsinfo(text.as_bytes()).unwrap()
    }

    fn ps(text: &str) -> Parsed<ProcessSample> {
        parse_psinfo(text.as_bytes()).unwrap()
    }

    #[test]
    fn refsinfo_direct_mapping() {
        let p = refs("/lib/x/libc.so.6,4,20,4\n");
        assert_eq!(p.records, vec![RefRecord::new("/lib/x/libc.so.6", 4, 20, 4)]);
        assert!(p.issues.is_empty());
    }

    #[test]
    fn refsinfo_path_with_commas() {
        let p = refs("/tmp/a,b,file,1,2,1\n");
        assert_eq!(p.records, vec![RefRecord::new("/tmp/a,b,file", 1, 2, 1)]);
    }

    #[test]
    fn refsinfo_duplicates_are_summed() {
        let p = refs("/bin/sh,1,5,1\n/bin/sh,2,0,2\n");
        assert_eq!(p.records, vec![RefRecord::new("/bin/sh", 3, 5, 3)]);
    }

    #[test]
    fn refsinfo_bad_lines_are_skipped() {
        let p = refs("/a,1,2,3\nnot a record\n/b,1,x,3\n\nrel/path,1,1,1\n/c,-1,0,0\n/d,0,0,0");
        assert_eq!(p.records, vec![RefRecord::new("/a", 1, 2, 3), RefRecord::new("/d", 0, 0, 0)]);
        let lines: Vec<usize> = p.issues.iter().map(ParseIssue::line_no).collect();
        assert_eq!(lines, vec![2, 3, 5, 6]);
        assert!(p.issues.iter().all(ParseIssue::is_skip));
    }

    #[test]
    fn refsinfo_invalid_utf8_is_reported() {
        let p = parse_refsinfo(&b"/a,1,1,1\n/\xff\xfe,1,1,1\n"[..]).unwrap();
        assert_eq!(p.records.len(), 1);
        assert_eq!(p.issues.len(), 1);
        assert_eq!(p.issues[0].line_no(), 2);
    }

    #[test]
    fn etime_examples() {
        assert_eq!(parse_etime("00:00"), Ok(0));
        assert_eq!(parse_etime("03:21"), Ok(201));
        assert_eq!(parse_etime("1-02:03:04"), Ok(93_784));
        assert_eq!(parse_etime("10:00"), Ok(600));
        assert_eq!(parse_etime("02:00:00"), Ok(7_200));
        // without a day field the hour field is not range-limited
        assert_eq!(parse_etime("30:00:00"), Ok(108_000));
    }

    #[test]
    fn etime_rejects_bad_formats() {
        for bad in [
            "",
            "5",
            ":",
            "1:60",
            "60:00",
            "1-24:00:00",
            "1-00:00",
            "a:00",
            "-00:00",
            "1-",
            "00:00:00:00",
            " 00:00",
            "+1:00",
            "1--00:00:00",
        ] {
            assert!(parse_etime(bad).is_err(), "{bad:?} should be rejected");
        }
    }

    #[test]
    fn psinfo_examples() {
        let p =
            ps("/usr/bin/dockerd,1-02:03:04,812,03:21\n/usr/bin/x,00:00,1,00:00\n/usr/lib/xorg/Xorg,10:00,99,02:00\n");
        assert_eq!(
            p.records,
            vec![
                ProcessSample::new("/usr/bin/dockerd", 812, 93_784, 201),
                ProcessSample::new("/usr/bin/x", 1, 0, 0),
                ProcessSample::new("/usr/lib/xorg/Xorg", 99, 600, 120),
            ]
        );
        assert!(p.issues.is_empty());
    }

    #[test]
    fn psinfo_rejects_zero_pid_and_bad_clock() {
        let p = ps("/a,00:01,0,00:00\n/b,00:61,4,00:00\n/c,00:01,4\n");
        assert!(p.records.is_empty());
        assert_eq!(p.issues.len(), 3);
    }

    #[test]
    fn psinfo_suspect_sample_is_kept() {
        let p = parse_psinfo_with("/a,00:02,5,00:09\n".as_bytes(), 4).unwrap();
        assert_eq!(p.records, vec![ProcessSample::new("/a", 5, 2, 9)]);
        assert_eq!(p.issues, vec![ParseIssue::SuspectSample { line_no: 1, elapsed_s: 2, cpu_s: 9 }]);
        assert!(!p.issues[0].is_skip());
    }

    #[test]
    fn format_clock_shapes() {
        assert_eq!(format_clock(0), "00:00");
        assert_eq!(format_clock(201), "03:21");
        assert_eq!(format_clock(7_200), "02:00:00");
        assert_eq!(format_clock(93_784), "1-02:03:04");
    }

    fn path_strategy() -> impl Strategy<Value = String> {
        proptest::collection::vec("[a-z0-9,._ -]{1,8}", 1..4).prop_map(|parts| format!("/{}", parts.join("/")))
    }

    fn ref_strategy() -> impl Strategy<Value = RefRecord> {
        (path_strategy(), 0u64..1_000_000, 0u64..1_000_000, 0u64..1_000_000)
            .prop_map(|(p, o, r, c)| RefRecord::new(p, o, r, c))
    }

    proptest! {
        #[test]
        fn etime_round_trips(secs in 0u64..10_000_000_000) {
            prop_assert_eq!(parse_etime(&format_clock(secs)), Ok(secs));
        }

        #[test]
        fn etime_is_monotone(a in (0u64..100, 0u64..24, 0u64..60, 0u64..60),
                             b in (0u64..100, 0u64..24, 0u64..60, 0u64..60)) {
            let render = |(d, h, m, s): (u64, u64, u64, u64)| format!("{d:02}-{h:02}:{m:02}:{s:02}");
            let (ra, rb) = (render(a), render(b));
            let (sa, sb) = (parse_etime(&ra).unwrap(), parse_etime(&rb).unwrap());
            prop_assert_eq!(ra.cmp(&rb), sa.cmp(&sb));
        }

        #[test]
        fn refsinfo_round_trips(recs in proptest::collection::vec(ref_strategy(), 0..40)) {
            let expected = merge_refs([recs.as_slice()]);
            let parsed = refs(&refsinfo_text(&expected));
            prop_assert!(parsed.issues.is_empty());
            prop_assert_eq!(parsed.records, expected);
        }

        #[test]
        fn refsinfo_merge_commutes_with_concatenation(
            a in proptest::collection::vec(ref_strategy(), 0..20),
            b in proptest::collection::vec(ref_strategy(), 0..20),
        ) {
            let (ta, tb) = (refsinfo_text(&a), refsinfo_text(&b));
            let whole = refs(&format!("{ta}{tb}")).records;
            let pa = refs(&ta).records;
            let pb = refs(&tb).records;
            prop_assert_eq!(whole, merge_refs([pa.as_slice(), pb.as_slice()]));
        }
    }
}
