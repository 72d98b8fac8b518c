//! Cross-method trace comparison: final-quartile variance statistics,
//! time-aligned tables, and pairwise ordering verdicts.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::trace::RunTrace;

/// Median of `avg_variance` over the final quartile of a trace's rows
/// (at least one row). NaN rows (the initial evaluation) are skipped
/// unless they are all there is.
pub fn final_quartile_median_variance(trace: &RunTrace) -> f64 {
    let len = trace.rows.len();
    if len == 0 {
        return f64::NAN;
    }
    let take = (len.div_ceil(4)).max(1);
    let slice = &trace.rows[len - take..];
    let mut values: Vec<f64> = slice
        .iter()
        .map(|r| r.avg_variance)
        .filter(|v| !v.is_nan())
        .collect();
    if values.is_empty() {
        return slice.last().unwrap().avg_variance;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub seed: u64,
    pub rows: usize,
    pub final_quartile_median_variance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairVerdict {
    pub left: String,
    pub right: String,
    /// `"left<right"`, `"right<left"`, or `"tie"` by final-quartile
    /// median variance.
    pub verdict: String,
    pub variance_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AlignedRow {
    pub time: f64,
    /// Variance of each trace at the last row not later than `time`;
    /// NaN when the trace has no such row.
    pub variances: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub model: String,
    pub methods: Vec<MethodSummary>,
    pub pairwise: Vec<PairVerdict>,
    pub aligned: Vec<AlignedRow>,
}

const ALIGN_POINTS: usize = 20;

/// Compare two or more traces of the same model.
pub fn compare(traces: &[RunTrace]) -> Result<CompareReport> {
    if traces.len() < 2 {
        return Err(Error::Config("compare needs at least 2 traces".into()));
    }
    let model = traces[0].model.clone();
    if traces.iter().any(|t| t.model != model) {
        return Err(Error::Config(format!(
            "traces mix models: {:?}",
            traces.iter().map(|t| t.model.as_str()).collect::<Vec<_>>()
        )));
    }

    let methods: Vec<MethodSummary> = traces
        .iter()
        .map(|t| MethodSummary {
            method: t.method.clone(),
            seed: t.seed,
            rows: t.rows.len(),
            final_quartile_median_variance: final_quartile_median_variance(t),
        })
        .collect();

    let mut pairwise = Vec::new();
    for i in 0..traces.len() {
        for k in i + 1..traces.len() {
            let a = methods[i].final_quartile_median_variance;
            let b = methods[k].final_quartile_median_variance;
            let verdict = if a < b {
                format!("{}<{}", methods[i].method, methods[k].method)
            } else if b < a {
                format!("{}<{}", methods[k].method, methods[i].method)
            } else {
                "tie".to_string()
            };
            pairwise.push(PairVerdict {
                left: methods[i].method.clone(),
                right: methods[k].method.clone(),
                verdict,
                variance_ratio: a / b,
            });
        }
    }

    let horizon = traces
        .iter()
        .map(|t| t.rows.last().map_or(0.0, |r| r.elapsed_seconds))
        .fold(f64::INFINITY, f64::min);
    let mut aligned = Vec::with_capacity(ALIGN_POINTS);
    for i in 1..=ALIGN_POINTS {
        let time = horizon * i as f64 / ALIGN_POINTS as f64;
        let variances = traces
            .iter()
            .map(|t| {
                t.rows
                    .iter()
                    .rev()
                    .find(|r| r.elapsed_seconds <= time && !r.avg_variance.is_nan())
                    .map_or(f64::NAN, |r| r.avg_variance)
            })
            .collect();
        aligned.push(AlignedRow { time, variances });
    }

    Ok(CompareReport {
        model,
        methods,
        pairwise,
        aligned,
    })
}
