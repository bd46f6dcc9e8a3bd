//! Ranked tables and score distributions, emitted as CSV.

use std::io::{self, Write};

use thiserror::Error;

use crate::scorer::{PackageScore, ScoreTable};

pub const DEFAULT_BINS: usize = 20;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write report: {0}")]
    SinkWriteFailure(#[from] io::Error),
}

impl From<csv::Error> for ReportError {
    fn from(e: csv::Error) -> Self {
        ReportError::SinkWriteFailure(e.into())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportKind {
    Files,
    Packages,
}

/// Rows sorted by descending score, ties by ascending name.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedReport {
    pub kind: ReportKind,
    pub rows: Vec<(String, f64)>,
}

pub fn rank<I, S>(kind: ReportKind, scores: I) -> RankedReport
where
    I: IntoIterator<Item = (S, f64)>,
    S: Into<String>,
{
    let mut rows: Vec<(String, f64)> = scores.into_iter().map(|(n, s)| (n.into(), s)).collect();
    rows.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    RankedReport { kind, rows }
}

impl RankedReport {
    pub fn files(table: &ScoreTable) -> Self {
        rank(ReportKind::Files, table.totals())
    }

    pub fn packages(scores: &[PackageScore]) -> Self {
        rank(ReportKind::Packages, scores.iter().map(|p| (p.package.as_str(), p.total)))
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(|(_, s)| *s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binning {
    Linear,
    Log10,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistBin {
    pub low: f64,
    pub high: f64,
    pub count: usize,
}

/// Empirical CDF and histogram of a set of scores.
///
/// Linear bins are equal-width over `[min(0, lowest), highest]`. Log10 bins
/// are equal-width in decades over `[1, highest]`, or from the smallest
/// positive score when that is below 1; they are preceded by an underflow bin
/// holding every score ≤ 0. The last bin is closed on the right.
#[derive(Clone, Debug, PartialEq)]
pub struct Distribution {
    pub cdf_points: Vec<(f64, f64)>,
    pub hist_bins: Vec<HistBin>,
    pub binning: Binning,
}

pub fn distribution<I>(scores: I, binning: Binning, bin_count: usize) -> Distribution
where
    I: IntoIterator<Item = f64>,
{
    let mut values: Vec<f64> = scores.into_iter().collect();
    values.sort_by(f64::total_cmp);
    let bin_count = bin_count.max(1);
    let hist_bins = if values.is_empty() {
        Vec::new()
    } else {
        match binning {
            Binning::Linear => linear_bins(&values, bin_count),
            Binning::Log10 => log_bins(&values, bin_count),
        }
    };
    Distribution { cdf_points: cdf(&values), hist_bins, binning }
}

fn cdf(sorted: &[f64]) -> Vec<(f64, f64)> {
    let n = sorted.len() as f64;
    let mut points = Vec::new();
    for (i, v) in sorted.iter().enumerate() {
        let is_last_of_run = sorted.get(i + 1).is_none_or(|next| next != v);
        if is_last_of_run {
            points.push((*v, (i + 1) as f64 / n));
        }
    }
    points
}

/// Equal-width bins over `[low, high]`; values are assigned by index so the
/// counts always add up even when rounding puts a value on a boundary.
fn fill_bins(
    values: impl Iterator<Item = f64>,
    low: f64,
    high: f64,
    bin_count: usize,
    edge: impl Fn(f64) -> f64,
) -> Vec<HistBin> {
    let width = (high - low) / bin_count as f64;
    let mut bins: Vec<HistBin> = (0..bin_count)
        .map(|i| HistBin {
            low: if i == 0 { edge(low) } else { edge(low + width * i as f64) },
            high: if i + 1 == bin_count { edge(high) } else { edge(low + width * (i + 1) as f64) },
            count: 0,
        })
        .collect();
    for v in values {
        let idx = if width > 0.0 { (((v - low) / width).floor() as usize).min(bin_count - 1) } else { bin_count - 1 };
        bins[idx].count += 1;
    }
    bins
}

fn linear_bins(sorted: &[f64], bin_count: usize) -> Vec<HistBin> {
    let low = sorted[0].min(0.0);
    let high = sorted[sorted.len() - 1];
    fill_bins(sorted.iter().copied(), low, high, bin_count, |x| x)
}

fn log_bins(sorted: &[f64], bin_count: usize) -> Vec<HistBin> {
    let positive_start = sorted.partition_point(|v| *v <= 0.0);
    let (under, positive) = sorted.split_at(positive_start);
    let low_edge = match positive.first() {
        Some(min) if *min < 1.0 => *min,
        _ => 1.0,
    };
    let low_exp = low_edge.log10();
    let mut bins = vec![HistBin { low: 0.0, high: low_edge, count: under.len() }];
    if let Some(max) = positive.last() {
        let high_exp = max.log10();
        let mut regular =
            fill_bins(positive.iter().map(|v| v.log10()), low_exp, high_exp, bin_count, |e| 10f64.powf(e));
        // keep the exact extremes rather than their powf round trip
        regular[0].low = bins[0].high;
        regular[bin_count - 1].high = *max;
        bins.extend(regular);
    }
    bins
}

impl Distribution {
    pub fn total_count(&self) -> usize {
        self.hist_bins.iter().map(|b| b.count).sum()
    }
}

fn writer<W: Write>(sink: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(sink)
}

/// `rank,name,score`, ranks starting at 1.
pub fn write_ranked_csv<W: Write>(report: &RankedReport, sink: W) -> Result<(), ReportError> {
    let mut w = writer(sink);
    w.write_record(["rank", "name", "score"])?;
    for (i, (name, score)) in report.rows.iter().enumerate() {
        w.write_record([(i + 1).to_string(), name.clone(), number(*score)])?;
    }
    w.flush()?;
    Ok(())
}

// Adding +0.0 folds -0.0 into 0.0 so a zero never prints as "-0".
fn number(x: f64) -> String {
    (x + 0.0).to_string()
}

/// `score,fraction` with fractions at six decimals.
pub fn write_cdf_csv<W: Write>(dist: &Distribution, sink: W) -> Result<(), ReportError> {
    let mut w = writer(sink);
    w.write_record(["score", "fraction"])?;
    for (score, fraction) in &dist.cdf_points {
        w.write_record([number(*score), format!("{fraction:.6}")])?;
    }
    w.flush()?;
    Ok(())
}

/// `bin_low,bin_high,count`.
pub fn write_hist_csv<W: Write>(dist: &Distribution, sink: W) -> Result<(), ReportError> {
    let mut w = writer(sink);
    w.write_record(["bin_low", "bin_high", "count"])?;
    for bin in &dist.hist_bins {
        w.write_record([number(bin.low), number(bin.high), bin.count.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn csv_of(f: impl FnOnce(&mut Vec<u8>) -> Result<(), ReportError>) -> String {
        let mut buf = Vec::new();
        f(&mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn rank_examples() {
        let r = rank(ReportKind::Packages, [("a", 5.0), ("b", 9.0), ("c", 5.0)]);
        assert_eq!(r.rows, vec![("b".into(), 9.0), ("a".into(), 5.0), ("c".into(), 5.0)]);
        assert!(rank(ReportKind::Files, Vec::<(String, f64)>::new()).rows.is_empty());
        assert_eq!(rank(ReportKind::Files, [("x", 0.0)]).rows, vec![("x".into(), 0.0)]);
    }

    #[test]
    fn distribution_linear_example() {
        // {0,5,10}, 2 bins of width 5: [0,5) holds 0; [5,10] holds 5 and 10
        let d = distribution([0.0, 5.0, 10.0], Binning::Linear, 2);
        assert_eq!(
            d.hist_bins,
            vec![HistBin { low: 0.0, high: 5.0, count: 1 }, HistBin { low: 5.0, high: 10.0, count: 2 }]
        );
        assert_eq!(d.cdf_points, vec![(0.0, 1.0 / 3.0), (5.0, 2.0 / 3.0), (10.0, 1.0)]);
    }

    #[test]
    fn distribution_single_and_empty() {
        let d = distribution([7.0], Binning::Linear, 20);
        assert_eq!(d.cdf_points, vec![(7.0, 1.0)]);
        assert_eq!(d.total_count(), 1);
        let e = distribution(Vec::new(), Binning::Log10, 20);
        assert!(e.cdf_points.is_empty() && e.hist_bins.is_empty());
    }

    #[test]
    fn distribution_cdf_collapses_ties() {
        let d = distribution([3.0, 1.0, 3.0, 3.0], Binning::Linear, 4);
        assert_eq!(d.cdf_points, vec![(1.0, 0.25), (3.0, 1.0)]);
    }

    #[test]
    fn log_bins_all_zero_go_to_underflow() {
        let d = distribution([0.0, 0.0, 0.0], Binning::Log10, 5);
        assert_eq!(d.hist_bins, vec![HistBin { low: 0.0, high: 1.0, count: 3 }]);
    }

    #[test]
    fn log_bins_decades() {
        // 1..=1000 over 3 bins: one decade each
        let d = distribution([0.0, 1.0, 5.0, 10.0, 50.0, 1000.0], Binning::Log10, 3);
        let counts: Vec<usize> = d.hist_bins.iter().map(|b| b.count).collect();
        assert_eq!(counts, vec![1, 2, 2, 1]);
        assert_eq!(d.hist_bins[0].high, 1.0);
        assert_eq!(d.hist_bins[1].low, 1.0);
        assert!((d.hist_bins[1].high - 10.0).abs() < 1e-9);
        assert_eq!(d.hist_bins[3].high, 1000.0);
    }

    #[test]
    fn log_bins_fractional_minimum() {
        let d = distribution([0.01, 0.1, 1.0], Binning::Log10, 2);
        assert_eq!(d.hist_bins[0], HistBin { low: 0.0, high: 0.01, count: 0 });
        assert_eq!(d.total_count(), 3);
        assert_eq!(d.hist_bins[2].high, 1.0);
    }

    #[test]
    fn ranked_csv() {
        let r = rank(ReportKind::Packages, [("b", 9.0)]);
        assert_eq!(csv_of(|b| write_ranked_csv(&r, b)), "rank,name,score\n1,b,9\n");
        let r = rank(ReportKind::Files, [("/tmp/a,b", 1.5)]);
        assert_eq!(csv_of(|b| write_ranked_csv(&r, b)), "rank,name,score\n1,\"/tmp/a,b\",1.5\n");
    }

    #[test]
    fn distribution_csv() {
        let empty = distribution(Vec::new(), Binning::Linear, 3);
        assert_eq!(csv_of(|b| write_cdf_csv(&empty, b)), "score,fraction\n");
        assert_eq!(csv_of(|b| write_hist_csv(&empty, b)), "bin_low,bin_high,count\n");

        let d = distribution([0.0, 5.0, 10.0], Binning::Linear, 2);
        assert_eq!(csv_of(|b| write_cdf_csv(&d, b)), "score,fraction\n0,0.333333\n5,0.666667\n10,1.000000\n");
        assert_eq!(csv_of(|b| write_hist_csv(&d, b)), "bin_low,bin_high,count\n0,5,1\n5,10,2\n");
    }

    struct Broken;

    impl Write for Broken {
        fn write(&mut self, _: &[u8]) -> io::Result<usize> {
            Err(io::Error::other("disk full"))
        }
        fn flush(&mut self) -> io::Result<()> {
            Err(io::Error::other("disk full"))
        }
    }

    #[test]
    fn sink_failure_is_reported() {
        let r = rank(ReportKind::Files, [("x", 1.0)]);
        assert!(matches!(write_ranked_csv(&r, Broken), Err(ReportError::SinkWriteFailure(_))));
    }

    proptest! {
        #[test]
        fn rank_is_sorted_permutation(scores in proptest::collection::btree_map("[a-d]{1,3}", 0u32..20, 0..30)) {
            let r = rank(ReportKind::Files, scores.iter().map(|(k, v)| (k.clone(), *v as f64)));
            for w in r.rows.windows(2) {
                prop_assert!(w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0));
            }
            let mut back: Vec<(String, f64)> = r.rows.clone();
            back.sort_by(|a, b| a.0.cmp(&b.0));
            let orig: Vec<(String, f64)> = scores.into_iter().map(|(k, v)| (k, v as f64)).collect();
            prop_assert_eq!(back, orig);
        }

        #[test]
        fn distribution_contracts(values in proptest::collection::vec(prop_oneof![Just(0.0), 0.0..1e9f64, 0.0..1.0f64], 1..200),
                                  bins in 1usize..40) {
            for binning in [Binning::Linear, Binning::Log10] {
                let d = distribution(values.iter().copied(), binning, bins);
                prop_assert_eq!(d.total_count(), values.len());
                for w in d.cdf_points.windows(2) {
                    prop_assert!(w[0].0 < w[1].0 && w[0].1 <= w[1].1);
                }
                let last = *d.cdf_points.last().unwrap();
                prop_assert_eq!(last.1, 1.0);
                prop_assert_eq!(last.0, values.iter().copied().fold(f64::MIN, f64::max));
            }
        }
    }
}
