//! Median and IQR of final-step diagnostics per grid point.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::CliError;

pub const SUMMARY_HEADER: [&str; 12] = [
    "experiment",
    "weighting_kind",
    "grid_value",
    "replications",
    "ess_median",
    "ess_iqr",
    "weight_variance_median",
    "weight_variance_iqr",
    "mean_rejections_median",
    "mean_rejections_iqr",
    "posterior_variance_median",
    "posterior_variance_iqr",
];

const SUMMARIZED: [&str; 4] = ["ess", "weight_variance", "mean_rejections", "posterior_variance"];

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub experiment: String,
    pub weighting_kind: String,
    pub grid_value: String,
    pub replications: usize,
    /// `(median, iqr)` for ess, weight variance, mean rejections, posterior variance.
    pub stats: [(f64, f64); 4],
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `(median, Q3 - Q1)`. Panics on empty input.
pub fn median_iqr(values: &[f64]) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    (
        quantile_sorted(&v, 0.5),
        quantile_sorted(&v, 0.75) - quantile_sorted(&v, 0.25),
    )
}

struct FinalStep {
    step: usize,
    values: [f64; 4],
}

/// Reads an experiment CSV and summarizes the last step of every replication.
/// Rows whose first field starts with `#` (status rows) are skipped; short
/// rows fail on their first missing field.
pub fn summarize_reader<R: Read>(reader: R) -> Result<Vec<SummaryRow>, CliError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let csv_err = |e: csv::Error| CliError::Csv {
        line: e.position().map(|p| p.line()).unwrap_or(0),
        message: e.to_string(),
    };
    let header = rdr.headers().map_err(csv_err)?.clone();
    let col = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| CliError::Csv {
            line: 1,
            message: format!("missing column `{name}`"),
        })
    };
    let (c_exp, c_kind, c_grid, c_rep, c_step) = (
        col("experiment")?,
        col("weighting_kind")?,
        col("grid_value")?,
        col("replication")?,
        col("step")?,
    );
    let c_vals = [
        col(SUMMARIZED[0])?,
        col(SUMMARIZED[1])?,
        col(SUMMARIZED[2])?,
        col(SUMMARIZED[3])?,
    ];

    type GroupKey = (String, String, String);
    let mut order: Vec<GroupKey> = Vec::new();
    let mut groups: HashMap<GroupKey, Vec<(String, FinalStep)>> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.get(0).is_some_and(|f| f.starts_with('#')) {
            continue;
        }
        let field = |i: usize| rec.get(i).unwrap_or("");
        let num = |i: usize| -> Result<f64, CliError> {
            field(i).trim().parse::<f64>().map_err(|_| CliError::Csv {
                line,
                message: format!("`{}` is not a number in column `{}`", field(i), &header[i]),
            })
        };
        let step = field(c_step).trim().parse::<usize>().map_err(|_| CliError::Csv {
            line,
            message: format!("`{}` is not a step index", field(c_step)),
        })?;
        let values = [num(c_vals[0])?, num(c_vals[1])?, num(c_vals[2])?, num(c_vals[3])?];
        let key = (
            field(c_exp).to_string(),
            field(c_kind).to_string(),
            field(c_grid).to_string(),
        );
        let rep = field(c_rep).to_string();
        let entry = groups.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            Vec::new()
        });
        match entry.iter_mut().find(|(r, _)| *r == rep) {
            Some((_, last)) if step >= last.step => *last = FinalStep { step, values },
            Some(_) => {}
            None => entry.push((rep, FinalStep { step, values })),
        }
    }

    Ok(order
        .into_iter()
        .map(|key| {
            let reps = &groups[&key];
            let stat = |k: usize| median_iqr(&reps.iter().map(|(_, f)| f.values[k]).collect::<Vec<_>>());
            SummaryRow {
                replications: reps.len(),
                stats: [stat(0), stat(1), stat(2), stat(3)],
                experiment: key.0,
                weighting_kind: key.1,
                grid_value: key.2,
            }
        })
        .collect())
}

pub fn summarize(path: &Path) -> Result<Vec<SummaryRow>, CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    summarize_reader(file)
}

pub fn write_summary<W: Write>(w: W, rows: &[SummaryRow]) -> Result<(), CliError> {
    let csv_err = |e: csv::Error| CliError::Io(e.to_string());
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(SUMMARY_HEADER).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![
            r.experiment.clone(),
            r.weighting_kind.clone(),
            r.grid_value.clone(),
            r.replications.to_string(),
        ];
        for (m, iqr) in r.stats {
            rec.push(m.to_string());
            rec.push(iqr.to_string());
        }
        wtr.write_record(&rec).map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| CliError::Io(e.to_string()))
}
