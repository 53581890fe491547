use std::collections::BTreeMap;
use std::path::Path;

use super::BenchError;

pub const TRACE_HEADER: [&str; 6] = [
    "seed",
    "algorithm",
    "datapoint_evals",
    "gradient_evals",
    "suboptimality",
    "wall_seconds",
];

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub seed: u64,
    pub algorithm: String,
    pub datapoint_evals: u64,
    pub gradient_evals: u64,
    pub suboptimality: f64,
    pub wall_seconds: f64,
}

/// Checkpoint rows of one or more runs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsTrace {
    pub rows: Vec<TraceRow>,
    /// `(algorithm, seed)` of runs that blew up or went non-finite; their rows
    /// stop at the last finite checkpoint.
    pub diverged: Vec<(String, u64)>,
}

/// Cross-seed summary at one checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatePoint {
    pub algorithm: String,
    pub datapoint_evals: u64,
    pub mean_gradient_evals: f64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub seeds: usize,
}

impl MetricsTrace {
    /// Sorts rows by `(seed, datapoint_evals, algorithm)`.
    pub fn sort(&mut self) {
        self.rows.sort_by(|a, b| {
            (a.seed, a.datapoint_evals, &a.algorithm).cmp(&(
                b.seed,
                b.datapoint_evals,
                &b.algorithm,
            ))
        });
        self.diverged.sort();
    }

    pub fn merge(&mut self, other: MetricsTrace) {
        self.rows.extend(other.rows);
        self.diverged.extend(other.diverged);
        self.sort();
    }

    pub fn algorithms(&self) -> Vec<String> {
        let mut a: Vec<String> = self.rows.iter().map(|r| r.algorithm.clone()).collect();
        a.sort();
        a.dedup();
        a
    }

    /// Mean, min and max suboptimality per `(algorithm, datapoint_evals)`,
    /// over the seeds that reached that checkpoint.
    pub fn aggregate(&self) -> Vec<AggregatePoint> {
        let mut groups: BTreeMap<(&str, u64), Vec<&TraceRow>> = BTreeMap::new();
        for r in &self.rows {
            groups
                .entry((&r.algorithm, r.datapoint_evals))
                .or_default()
                .push(r);
        }
        groups
            .into_iter()
            .map(|((alg, t), rows)| {
                let k = rows.len() as f64;
                AggregatePoint {
                    algorithm: alg.to_string(),
                    datapoint_evals: t,
                    mean_gradient_evals: rows.iter().map(|r| r.gradient_evals as f64).sum::<f64>()
                        / k,
                    mean: rows.iter().map(|r| r.suboptimality).sum::<f64>() / k,
                    min: rows
                        .iter()
                        .map(|r| r.suboptimality)
                        .fold(f64::INFINITY, f64::min),
                    max: rows
                        .iter()
                        .map(|r| r.suboptimality)
                        .fold(f64::NEG_INFINITY, f64::max),
                    seeds: rows.len(),
                }
            })
            .collect()
    }

    /// Aggregates of one algorithm, in checkpoint order.
    pub fn curve(&self, algorithm: &str) -> Vec<AggregatePoint> {
        self.aggregate()
            .into_iter()
            .filter(|p| p.algorithm == algorithm)
            .collect()
    }
}

/// Writes the trace as CSV, rows sorted by `(seed, datapoint_evals, algorithm)`.
/// Floats use the shortest representation that reads back exactly.
pub fn write_trace(trace: &MetricsTrace, path: impl AsRef<Path>) -> Result<(), BenchError> {
    let mut sorted = trace.clone();
    sorted.sort();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TRACE_HEADER)?;
    for r in &sorted.rows {
        w.write_record([
            r.seed.to_string(),
            r.algorithm.clone(),
            r.datapoint_evals.to_string(),
            r.gradient_evals.to_string(),
            r.suboptimality.to_string(),
            r.wall_seconds.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<MetricsTrace, BenchError> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != TRACE_HEADER {
        return Err(BenchError::Trace(format!(
            "{}: unexpected header {header:?}",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |idx: usize| rec.get(idx).unwrap_or("");
        let bad = |what: &str| {
            BenchError::Trace(format!("{}: row {}: bad {what}", path.display(), k + 2))
        };
        rows.push(TraceRow {
            seed: field(0).parse().map_err(|_| bad("seed"))?,
            algorithm: field(1).to_string(),
            datapoint_evals: field(2).parse().map_err(|_| bad("datapoint_evals"))?,
            gradient_evals: field(3).parse().map_err(|_| bad("gradient_evals"))?,
            suboptimality: field(4).parse().map_err(|_| bad("suboptimality"))?,
            wall_seconds: field(5).parse().map_err(|_| bad("wall_seconds"))?,
        });
    }
    Ok(MetricsTrace {
        rows,
        diverged: Vec::new(),
    })
}
