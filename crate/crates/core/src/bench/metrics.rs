//! Per-round metrics tables and their aggregation across seeds.

use std::collections::BTreeMap;
use std::path::Path;

use crate::datasets::RunRecord;
use crate::error::{Error, Result};

pub const METRICS_HEADER: &str =
    "policy,seed,round,mean_variance,max_variance,retrieval_count,objective,rmse";
pub const SUMMARY_HEADER: &str = "policy,round,seeds,mean_variance,mean_variance_se,max_variance,max_variance_se,retrieval_count,retrieval_count_se,rmse,rmse_se";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub policy: String,
    pub seed: u64,
    pub round: usize,
    pub mean_variance: f64,
    pub max_variance: f64,
    pub retrieval_count: usize,
    /// Mean objective over the batch.
    pub objective: f64,
    pub rmse: Option<f64>,
}

/// Rows for rounds `1..` of a record; the prior (round 0) stays in the record.
pub fn rows_from_record(policy: &str, seed: u64, record: &RunRecord) -> Vec<MetricsRow> {
    record
        .rounds
        .iter()
        .filter(|r| r.round > 0)
        .map(|r| MetricsRow {
            policy: policy.to_string(),
            seed,
            round: r.round,
            mean_variance: r.mean_variance,
            max_variance: r.max_variance,
            retrieval_count: r.retrieval_count,
            objective: if r.objectives.is_empty() {
                0.0
            } else {
                r.objectives.iter().sum::<f64>() / r.objectives.len() as f64
            },
            rmse: r.rmse,
        })
        .collect()
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn format_metrics(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.policy,
            r.seed,
            r.round,
            num(r.mean_variance),
            num(r.max_variance),
            r.retrieval_count,
            num(r.objective),
            opt(r.rmse)
        ));
    }
    out
}

pub fn parse_metrics(path: &Path, text: &str) -> Result<Vec<MetricsRow>> {
    let err = |line: usize, m: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: m,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == METRICS_HEADER => {}
        _ => return Err(err(1, "missing metrics header".into())),
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 8 {
                return Err(err(i + 1, format!("expected 8 fields, found {}", f.len())));
            }
            let real = |s: &str| -> Result<f64> {
                s.parse::<f64>().map_err(|_| err(i + 1, format!("bad number `{s}`")))
            };
            let int = |s: &str| -> Result<u64> {
                s.parse::<u64>().map_err(|_| err(i + 1, format!("bad integer `{s}`")))
            };
            Ok(MetricsRow {
                policy: f[0].to_string(),
                seed: int(f[1])?,
                round: int(f[2])? as usize,
                mean_variance: real(f[3])?,
                max_variance: real(f[4])?,
                retrieval_count: int(f[5])? as usize,
                objective: real(f[6])?,
                rmse: if f[7].is_empty() { None } else { Some(real(f[7])?) },
            })
        })
        .collect()
}

/// Sample mean and standard error `sd / √n` (zero for a single value).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub policy: String,
    pub round: usize,
    pub seeds: usize,
    pub mean_variance: (f64, f64),
    pub max_variance: (f64, f64),
    pub retrieval_count: (f64, f64),
    pub rmse: Option<(f64, f64)>,
}

/// Aggregates over seeds per `(policy, round)`, keeping policy order.
pub fn summarize(rows: &[MetricsRow]) -> Vec<SummaryRow> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<(usize, usize), Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows {
        let p = match order.iter().position(|&p| p == r.policy) {
            Some(p) => p,
            None => {
                order.push(&r.policy);
                order.len() - 1
            }
        };
        groups.entry((p, r.round)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((p, round), g)| {
            let col = |f: fn(&MetricsRow) -> f64| mean_stderr(&g.iter().map(|r| f(r)).collect::<Vec<_>>());
            let rmse: Option<Vec<f64>> = g.iter().map(|r| r.rmse).collect();
            SummaryRow {
                policy: order[p].to_string(),
                round,
                seeds: g.len(),
                mean_variance: col(|r| r.mean_variance),
                max_variance: col(|r| r.max_variance),
                retrieval_count: col(|r| r.retrieval_count as f64),
                rmse: rmse.map(|v| mean_stderr(&v)),
            }
        })
        .collect()
}

pub fn format_summary(rows: &[SummaryRow]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.policy,
            r.round,
            r.seeds,
            num(r.mean_variance.0),
            num(r.mean_variance.1),
            num(r.max_variance.0),
            num(r.max_variance.1),
            num(r.retrieval_count.0),
            num(r.retrieval_count.1),
            opt(r.rmse.map(|x| x.0)),
            opt(r.rmse.map(|x| x.1)),
        ));
    }
    out
}
