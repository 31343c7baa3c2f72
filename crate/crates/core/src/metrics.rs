//! Regression metrics, the inference-side cap, evaluation and latency timing.

use std::io::Write;
use std::time::Instant;

use dualbind_autodiff::{Precision, Real};
use serde::Serialize;

use crate::data::ComplexRecord;
use crate::error::{io_err, Error, Result};
use crate::model::Model;

/// Pearson, R², Spearman and RMSE of one prediction set.
///
/// The correlation fields and R² are `None` when the truth is constant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub n: usize,
    pub pearson: Option<f64>,
    pub r2: Option<f64>,
    pub spearman: Option<f64>,
    pub rmse: f64,
    /// Predictions changed by the cap.
    pub n_capped: usize,
}

/// Values above `threshold` become `threshold`.
pub fn cap_predictions(pred: &[f64], threshold: f64) -> Vec<f64> {
    pred.iter()
        .map(|&p| if p > threshold { threshold } else { p })
        .collect()
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// `None` if either side has zero variance.
fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && x[idx[end]] == x[idx[start]] {
            end += 1;
        }
        let r = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = r;
        }
        start = end;
    }
    ranks
}

pub fn compute_metrics(pred: &[f64], truth: &[f64]) -> Result<MetricsReport> {
    if pred.len() != truth.len() {
        return Err(Error::Metrics(format!(
            "{} predictions against {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.len() < 2 {
        return Err(Error::Metrics(format!(
            "need at least 2 pairs, got {}",
            pred.len()
        )));
    }
    if pred.iter().chain(truth).any(|v| !v.is_finite()) {
        return Err(Error::Metrics("non-finite prediction or label".into()));
    }
    let n = pred.len();
    let tm = mean(truth);
    let ss_tot: f64 = truth.iter().map(|t| (t - tm).powi(2)).sum();
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (t - p).powi(2)).sum();
    let constant = ss_tot == 0.0;
    if constant {
        log::warn!("constant ground truth: correlations and R² are undefined");
    }
    let (pearson_v, r2, spearman) = if constant {
        (None, None, None)
    } else {
        (
            Some(pearson(pred, truth).unwrap_or(0.0)),
            Some(1.0 - ss_res / ss_tot),
            Some(pearson(&average_ranks(pred), &average_ranks(truth)).unwrap_or(0.0)),
        )
    };
    Ok(MetricsReport {
        n,
        pearson: pearson_v,
        r2,
        spearman,
        rmse: (ss_res / n as f64).sqrt(),
        n_capped: 0,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".into(), |v| format!("{v:.4}"))
}

impl MetricsReport {
    pub fn table(&self) -> String {
        format!(
            "n          {}\nR_p        {}\nR2         {}\nrho        {}\nRMSE       {:.4}\ncapped     {}\n",
            self.n,
            fmt_opt(self.pearson),
            fmt_opt(self.r2),
            fmt_opt(self.spearman),
            self.rmse,
            self.n_capped
        )
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let err = |e: csv::Error| Error::Metrics(format!("writing report: {e}"));
        w.write_record(["n", "pearson", "r2", "spearman", "rmse", "n_capped"])
            .map_err(err)?;
        w.write_record([
            self.n.to_string(),
            opt(self.pearson),
            opt(self.r2),
            opt(self.spearman),
            self.rmse.to_string(),
            self.n_capped.to_string(),
        ])
        .map_err(err)?;
        w.flush().map_err(io_err("flushing report"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionRow {
    pub complex_id: String,
    pub y: f64,
    pub raw: f64,
    pub capped: f64,
}

pub fn write_predictions(rows: &[PredictionRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Metrics(format!("writing predictions: {e}"));
    w.write_record(["complex_id", "y", "y_hat_raw", "y_hat_capped"])
        .map_err(err)?;
    for r in rows {
        w.write_record([
            r.complex_id.clone(),
            r.y.to_string(),
            r.raw.to_string(),
            r.capped.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(io_err("flushing predictions"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub predictions: Vec<PredictionRow>,
}

/// Eval-mode predictions, capped at `threshold` when given, scored against
/// the record labels as stored. Any failing record aborts.
pub fn evaluate(
    model: &Model,
    records: &[ComplexRecord],
    threshold: Option<f64>,
) -> Result<Evaluation> {
    if records.len() < 2 {
        return Err(Error::Metrics(format!(
            "need at least 2 records, got {}",
            records.len()
        )));
    }
    let mut rows = Vec::with_capacity(records.len());
    for r in records {
        let raw = model.predict(r).map_err(|e| Error::InvalidRecord {
            id: r.complex_id.clone(),
            msg: e.to_string(),
        })?;
        let capped = threshold.map_or(raw, |t| cap_predictions(&[raw], t)[0]);
        rows.push(PredictionRow {
            complex_id: r.complex_id.clone(),
            y: r.label,
            raw,
            capped,
        });
    }
    let pred: Vec<f64> = rows.iter().map(|r| r.capped).collect();
    let truth: Vec<f64> = rows.iter().map(|r| r.y).collect();
    let mut report = compute_metrics(&pred, &truth)?;
    report.n_capped = rows.iter().filter(|r| r.capped != r.raw).count();
    Ok(Evaluation {
        report,
        predictions: rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyEntry {
    pub batch_size: usize,
    pub repetitions: usize,
    /// Per-complex wall time, one value per repetition.
    pub samples_ms: Vec<f64>,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub std_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyReport {
    pub config: String,
    pub precision: Precision,
    pub n_records: usize,
    pub entries: Vec<LatencyEntry>,
}

pub const MIN_BENCH_RECORDS: usize = 20;
pub const MIN_REPETITIONS: usize = 3;

fn summarize(batch_size: usize, samples: Vec<f64>) -> LatencyEntry {
    let n = samples.len() as f64;
    let m = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - m).powi(2)).sum::<f64>() / n;
    let mut sorted = samples.clone();
    sorted.sort_by(f64::total_cmp);
    let k = sorted.len();
    let median = if k % 2 == 1 {
        sorted[k / 2]
    } else {
        0.5 * (sorted[k / 2 - 1] + sorted[k / 2])
    };
    LatencyEntry {
        batch_size,
        repetitions: k,
        mean_ms: m,
        median_ms: median,
        std_ms: var.sqrt(),
        min_ms: sorted[0],
        max_ms: sorted[k - 1],
        samples_ms: samples,
    }
}

fn time_pass<T: Real>(model: &Model, records: &[ComplexRecord], batch: usize) -> Result<f64> {
    let start = Instant::now();
    for chunk in records.chunks(batch) {
        std::hint::black_box(model.predict_batch_in::<T>(chunk)?);
    }
    Ok(start.elapsed().as_secs_f64() * 1e3 / records.len() as f64)
}

/// Per-complex inference time for batch size 1 and each requested size.
/// Batched sizes evaluate each chunk on one graph. One untimed warm-up pass
/// precedes the timed repetitions.
pub fn latency_bench(
    model: &Model,
    records: &[ComplexRecord],
    batch_sizes: &[usize],
    repetitions: usize,
    config_name: &str,
    precision: Precision,
) -> Result<LatencyReport> {
    match precision {
        Precision::F64 => {
            latency_bench_in::<f64>(model, records, batch_sizes, repetitions, config_name)
        }
        Precision::F32 => {
            latency_bench_in::<f32>(model, records, batch_sizes, repetitions, config_name)
        }
    }
}

fn latency_bench_in<T: Real>(
    model: &Model,
    records: &[ComplexRecord],
    batch_sizes: &[usize],
    repetitions: usize,
    config_name: &str,
) -> Result<LatencyReport> {
    if records.len() < MIN_BENCH_RECORDS {
        log::warn!(
            "{} records is below the {MIN_BENCH_RECORDS} recommended for stable timings",
            records.len()
        );
    }
    if records.is_empty() {
        return Err(Error::Metrics("no records to benchmark".into()));
    }
    let reps = repetitions.max(MIN_REPETITIONS);
    let mut sizes = vec![1];
    sizes.extend(batch_sizes.iter().copied().filter(|&b| b > 1));
    sizes.dedup();
    let mut entries = Vec::new();
    for b in sizes {
        time_pass::<T>(model, records, b)?;
        let samples = (0..reps)
            .map(|_| time_pass::<T>(model, records, b))
            .collect::<Result<Vec<_>>>()?;
        entries.push(summarize(b, samples));
    }
    let report = LatencyReport {
        config: config_name.to_string(),
        precision: T::PRECISION,
        n_records: records.len(),
        entries,
    };
    if let (Some(one), Some(best)) = (
        report.entries.first(),
        report
            .entries
            .iter()
            .skip(1)
            .map(|e| e.mean_ms)
            .reduce(f64::min),
    ) {
        if best > one.mean_ms {
            log::info!("batched inference was not faster than unbatched on this machine");
        }
    }
    Ok(report)
}

impl LatencyReport {
    pub fn table(&self) -> String {
        let mut s = format!(
            "config {}  precision {}  records {}\nbatch  reps  mean_ms  median_ms  std_ms  min_ms  max_ms\n",
            self.config, self.precision, self.n_records
        );
        for e in &self.entries {
            s += &format!(
                "{:>5}  {:>4}  {:>7.3}  {:>9.3}  {:>6.3}  {:>6.3}  {:>6.3}\n",
                e.batch_size, e.repetitions, e.mean_ms, e.median_ms, e.std_ms, e.min_ms, e.max_ms
            );
        }
        s
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Metrics(format!("writing latency: {e}"));
        w.write_record([
            "config",
            "precision",
            "batch_size",
            "repetitions",
            "mean_ms",
            "median_ms",
            "std_ms",
            "min_ms",
            "max_ms",
        ])
        .map_err(err)?;
        for e in &self.entries {
            w.write_record([
                self.config.clone(),
                self.precision.to_string(),
                e.batch_size.to_string(),
                e.repetitions.to_string(),
                e.mean_ms.to_string(),
                e.median_ms.to_string(),
                e.std_ms.to_string(),
                e.min_ms.to_string(),
                e.max_ms.to_string(),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(io_err("flushing latency"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_anticorrelation() {
        let t = [-2.0, -1.0, 0.0, 1.0, 2.0];
        let m = compute_metrics(&t, &t).unwrap();
        assert_eq!(
            (m.pearson, m.r2, m.spearman, m.rmse),
            (Some(1.0), Some(1.0), Some(1.0), 0.0)
        );
        let neg: Vec<f64> = t.iter().map(|v| -v).collect();
        let m = compute_metrics(&neg, &t).unwrap();
        assert_eq!(m.pearson, Some(-1.0));
        assert_eq!(m.spearman, Some(-1.0));
    }

    #[test]
    fn small_example_by_hand() {
        // truth mean 7/3; SS_tot = 14/3; SS_res = 1.
        let m = compute_metrics(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
        assert!((m.r2.unwrap() - (1.0 - 3.0 / 14.0)).abs() < 1e-15);
        assert!((m.rmse - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        // Σdxdy = 3, Σdx² = 2, Σdy² = 14/3.
        assert!((m.pearson.unwrap() - 3.0 / (2.0f64 * 14.0 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(m.spearman, Some(1.0));
    }

    #[test]
    fn preconditions() {
        assert!(compute_metrics(&[1.0], &[1.0]).is_err());
        assert!(compute_metrics(&[1.0, 2.0], &[1.0]).is_err());
        let m = compute_metrics(&[1.0, 2.0], &[3.0, 3.0]).unwrap();
        assert_eq!((m.pearson, m.r2, m.spearman), (None, None, None));
        assert_eq!(m.rmse, (2.5f64).sqrt());
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(
            average_ranks(&[10.0, 20.0, 10.0, 5.0]),
            vec![2.5, 4.0, 2.5, 1.0]
        );
    }

    #[test]
    fn cap_examples() {
        assert_eq!(
            cap_predictions(&[-1.2, -9.9, -3.0], -3.0),
            vec![-3.0, -9.9, -3.0]
        );
        let once = cap_predictions(&[0.5, -4.0], -3.0);
        assert_eq!(cap_predictions(&once, -3.0), once);
    }

    #[test]
    fn summary_statistics() {
        let e = summarize(1, vec![3.0, 1.0, 2.0, 6.0]);
        assert_eq!(
            (e.mean_ms, e.median_ms, e.min_ms, e.max_ms),
            (3.0, 2.5, 1.0, 6.0)
        );
        assert!((e.std_ms - 3.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn csv_layouts() {
        let m = compute_metrics(&[1.0, 2.0], &[3.0, 3.0]).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(
            s.starts_with("n,pearson,r2,spearman,rmse,n_capped\n2,,,,"),
            "{s}"
        );
        let mut buf = Vec::new();
        write_predictions(
            &[PredictionRow {
                complex_id: "a".into(),
                y: -4.0,
                raw: -1.0,
                capped: -3.0,
            }],
            &mut buf,
        )
        .unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "complex_id,y,y_hat_raw,y_hat_capped\na,-4,-1,-3\n"
        );
    }
}
