//! PRR-versus-distance accumulation, multi-seed aggregation and the
//! delimited result formats.
//!
//! Per-run files: `scheduler,seed,bin_center_m,expected,received,prr`.
//! Summary files: `scheduler,bin_center_m,mean_prr,ci_low,ci_high,n_seeds`.
//! A bin with no expected receptions has an empty `prr`.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ValidatedConfig;
use crate::engine::{RunObserver, RxRecord};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no results to aggregate")]
    Empty,
    #[error("results mix schedulers '{0}' and '{1}'")]
    MixedSchedulers(String, String),
    #[error("bin structure of seed {seed} differs from seed {reference}")]
    BinMismatch { seed: u64, reference: u64 },
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Counters for one distance bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinCount {
    pub center_m: f64,
    pub expected: u64,
    pub received: u64,
}

impl BinCount {
    /// `None` when nobody was expected to receive in this bin.
    pub fn prr(&self) -> Option<f64> {
        (self.expected > 0).then(|| self.received as f64 / self.expected as f64)
    }
}

/// Per-bin counts over half-open bins `[center - hw, center + hw)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrrAccumulator {
    halfwidth_m: f64,
    bins: Vec<BinCount>,
}

impl PrrAccumulator {
    pub fn new(config: &ValidatedConfig) -> Self {
        Self {
            halfwidth_m: config.prr_bin_halfwidth_m,
            bins: config
                .prr_bin_centers_m
                .iter()
                .map(|&center_m| BinCount {
                    center_m,
                    expected: 0,
                    received: 0,
                })
                .collect(),
        }
    }

    pub fn bin_index(&self, distance_m: f64) -> Option<usize> {
        // Centers are sorted and bins disjoint, so the first bin whose upper
        // edge lies beyond `distance_m` is the only candidate.
        let i = self
            .bins
            .partition_point(|b| b.center_m + self.halfwidth_m <= distance_m);
        let bin = self.bins.get(i)?;
        (distance_m >= bin.center_m - self.halfwidth_m).then_some(i)
    }

    pub fn add(&mut self, distance_m: f64, received: bool) {
        if let Some(i) = self.bin_index(distance_m) {
            self.bins[i].expected += 1;
            self.bins[i].received += u64::from(received);
        }
    }

    pub fn accumulate<'a>(records: impl IntoIterator<Item = &'a RxRecord>, config: &ValidatedConfig) -> Self {
        let mut acc = Self::new(config);
        for r in records {
            acc.add(r.distance_m, r.outcome.received);
        }
        acc
    }

    pub fn bins(&self) -> &[BinCount] {
        &self.bins
    }

    pub fn into_result(self, scheduler: impl Into<String>, seed: u64) -> SimResult {
        SimResult {
            scheduler: scheduler.into(),
            seed,
            bins: self.bins,
        }
    }
}

impl RunObserver for PrrAccumulator {
    fn on_rx(&mut self, record: &RxRecord) {
        // Half-duplex losses count as expected but not received.
        self.add(record.distance_m, record.outcome.received);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub scheduler: String,
    pub seed: u64,
    pub bins: Vec<BinCount>,
}

impl SimResult {
    pub fn prr(&self) -> Vec<Option<f64>> {
        self.bins.iter().map(BinCount::prr).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateBin {
    pub center_m: f64,
    /// Mean over the seeds that observed this bin.
    pub mean: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub n_seeds: usize,
}

impl AggregateBin {
    /// A band from a single seed carries no spread information.
    pub fn is_single_seed(&self) -> bool {
        self.n_seeds == 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateResult {
    pub scheduler: String,
    pub bins: Vec<AggregateBin>,
}

impl AggregateResult {
    pub fn means(&self) -> Vec<Option<f64>> {
        self.bins.iter().map(|b| b.mean).collect()
    }
}

/// Mean PRR per bin with a normal-approximation band
/// `mean +- z * s / sqrt(n)` clamped to `[0, 1]`.
pub fn aggregate(results: &[SimResult], z: f64) -> Result<AggregateResult, MetricsError> {
    let first = results.first().ok_or(MetricsError::Empty)?;
    for r in results {
        if r.scheduler != first.scheduler {
            return Err(MetricsError::MixedSchedulers(
                first.scheduler.clone(),
                r.scheduler.clone(),
            ));
        }
        let same = r.bins.len() == first.bins.len()
            && r.bins.iter().zip(&first.bins).all(|(a, b)| a.center_m == b.center_m);
        if !same {
            return Err(MetricsError::BinMismatch {
                seed: r.seed,
                reference: first.seed,
            });
        }
    }

    // Sort per-bin samples so the result does not depend on seed order.
    let bins = (0..first.bins.len())
        .map(|i| {
            let mut samples: Vec<f64> = results.iter().filter_map(|r| r.bins[i].prr()).collect();
            samples.sort_by(f64::total_cmp);
            let n = samples.len();
            let center_m = first.bins[i].center_m;
            if n == 0 {
                return AggregateBin {
                    center_m,
                    mean: None,
                    ci_low: None,
                    ci_high: None,
                    n_seeds: 0,
                };
            }
            let mean = samples.iter().sum::<f64>() / n as f64;
            let half = if n > 1 {
                let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                z * var.sqrt() / (n as f64).sqrt()
            } else {
                0.0
            };
            AggregateBin {
                center_m,
                mean: Some(mean),
                ci_low: Some((mean - half).clamp(0.0, 1.0)),
                ci_high: Some((mean + half).clamp(0.0, 1.0)),
                n_seeds: n,
            }
        })
        .collect();

    Ok(AggregateResult {
        scheduler: first.scheduler.clone(),
        bins,
    })
}

/// Groups per-run results by scheduler (sorted by name) and aggregates each.
pub fn aggregate_by_scheduler(results: &[SimResult], z: f64) -> Result<Vec<AggregateResult>, MetricsError> {
    let mut groups: BTreeMap<&str, Vec<SimResult>> = BTreeMap::new();
    for r in results {
        groups.entry(&r.scheduler).or_default().push(r.clone());
    }
    groups.values().map(|g| aggregate(g, z)).collect()
}

const RUN_HEADER: [&str; 6] = ["scheduler", "seed", "bin_center_m", "expected", "received", "prr"];
const SUMMARY_HEADER: [&str; 6] = ["scheduler", "bin_center_m", "mean_prr", "ci_low", "ci_high", "n_seeds"];

#[derive(Debug, Serialize, Deserialize)]
struct RunRow {
    scheduler: String,
    seed: u64,
    bin_center_m: f64,
    expected: u64,
    received: u64,
    prr: Option<f64>,
}

#[derive(Debug, Serialize)]
struct SummaryRow<'a> {
    scheduler: &'a str,
    bin_center_m: f64,
    mean_prr: Option<f64>,
    ci_low: Option<f64>,
    ci_high: Option<f64>,
    n_seeds: usize,
}

const TRACE_HEADER: [&str; 7] = [
    "time_ms",
    "tx_id",
    "rx_id",
    "distance_m",
    "sinr_db",
    "received",
    "blocked_half_duplex",
];

/// Streams every reception record of a run as CSV. Observer callbacks
/// cannot fail, so the first write error is kept and returned by
/// [`TraceWriter::finish`].
pub struct TraceWriter<W: Write> {
    writer: csv::Writer<W>,
    error: Option<csv::Error>,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W) -> Result<Self, MetricsError> {
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        writer.write_record(TRACE_HEADER)?;
        Ok(Self { writer, error: None })
    }

    pub fn finish(mut self) -> Result<W, MetricsError> {
        if let Some(e) = self.error.take() {
            return Err(e.into());
        }
        self.writer.flush()?;
        self.writer
            .into_inner()
            .map_err(|e| MetricsError::Io(e.into_error()))
    }
}

impl<W: Write> RunObserver for TraceWriter<W> {
    fn on_rx(&mut self, r: &RxRecord) {
        if self.error.is_some() {
            return;
        }
        let result = self.writer.write_record([
            r.time_ms.to_string(),
            r.tx_id.to_string(),
            r.rx_id.to_string(),
            format!("{:.3}", r.distance_m),
            format!("{:.3}", r.outcome.sinr_db),
            r.outcome.received.to_string(),
            r.outcome.blocked_half_duplex.to_string(),
        ]);
        if let Err(e) = result {
            self.error = Some(e);
        }
    }
}

pub fn write_run_csv<W: Write>(out: W, results: &[SimResult]) -> Result<(), MetricsError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(RUN_HEADER)?;
    for r in results {
        for b in &r.bins {
            w.serialize(RunRow {
                scheduler: r.scheduler.clone(),
                seed: r.seed,
                bin_center_m: b.center_m,
                expected: b.expected,
                received: b.received,
                prr: b.prr(),
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Parses a per-run file. Rows of the same (scheduler, seed) form one
/// result, in order of first appearance.
pub fn read_run_csv<R: Read>(input: R) -> Result<Vec<SimResult>, MetricsError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = reader.headers()?.clone();
    if headers.iter().ne(RUN_HEADER) {
        return Err(MetricsError::Malformed {
            line: 1,
            message: format!("expected header '{}'", RUN_HEADER.join(",")),
        });
    }

    let mut results: Vec<SimResult> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| malformed_csv(&e))?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |message: String| MetricsError::Malformed { line, message };
        let row: RunRow = record
            .deserialize(Some(&headers))
            .map_err(|e| bad(e.to_string()))?;
        if row.received > row.expected {
            return Err(bad(format!(
                "received {} exceeds expected {}",
                row.received, row.expected
            )));
        }
        let bin = BinCount {
            center_m: row.bin_center_m,
            expected: row.expected,
            received: row.received,
        };
        match (bin.prr(), row.prr) {
            (None, None) => {}
            (Some(a), Some(b)) if (a - b).abs() <= 1e-9 => {}
            (computed, given) => {
                return Err(bad(format!(
                    "prr {given:?} inconsistent with counts (expected {computed:?})"
                )))
            }
        }
        match results
            .iter_mut()
            .find(|r| r.scheduler == row.scheduler && r.seed == row.seed)
        {
            Some(r) => {
                if r.bins.iter().any(|b| b.center_m == bin.center_m) {
                    return Err(bad(format!("duplicate bin {}", bin.center_m)));
                }
                r.bins.push(bin);
            }
            None => results.push(SimResult {
                scheduler: row.scheduler,
                seed: row.seed,
                bins: vec![bin],
            }),
        }
    }
    Ok(results)
}

fn malformed_csv(e: &csv::Error) -> MetricsError {
    MetricsError::Malformed {
        line: e.position().map_or(0, |p| p.line()),
        message: e.to_string(),
    }
}

pub fn write_summary_csv<W: Write>(out: W, aggregates: &[AggregateResult]) -> Result<(), MetricsError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for a in aggregates {
        for b in &a.bins {
            w.serialize(SummaryRow {
                scheduler: &a.scheduler,
                bin_center_m: b.center_m,
                mean_prr: b.mean,
                ci_low: b.ci_low,
                ci_high: b.ci_high,
                n_seeds: b.n_seeds,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Side-by-side table: one row per bin center, one mean-PRR column per
/// scheduler. Bins missing for a scheduler are left empty.
pub fn write_comparison_csv<W: Write>(out: W, aggregates: &[AggregateResult]) -> Result<(), MetricsError> {
    let mut centers: Vec<f64> = aggregates
        .iter()
        .flat_map(|a| a.bins.iter().map(|b| b.center_m))
        .collect();
    centers.sort_by(f64::total_cmp);
    centers.dedup();

    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    let mut header = vec!["bin_center_m".to_owned()];
    header.extend(aggregates.iter().map(|a| a.scheduler.clone()));
    w.write_record(&header)?;
    for c in centers {
        let mut row = vec![format!("{c:?}")];
        for a in aggregates {
            let mean = a.bins.iter().find(|b| b.center_m == c).and_then(|b| b.mean);
            row.push(mean.map(|m| format!("{m:?}")).unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
