//! Daily cross-sectional evaluation: IC, Rank IC and Precision@N.

use std::fmt::Write as _;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{MtmdError, Result};

/// Cut-offs reported for Precision@N.
pub const PRECISION_NS: [usize; 4] = [3, 5, 10, 30];

const VAR_EPS: f64 = 1e-12;

/// Pearson correlation. `None` when fewer than two points or either side has
/// (numerically) zero variance.
pub fn ic(pred: &[f64], truth: &[f64]) -> Option<f64> {
    let n = pred.len();
    if n < 2 || n != truth.len() {
        return None;
    }
    let nf = n as f64;
    let mp = pred.iter().sum::<f64>() / nf;
    let mt = truth.iter().sum::<f64>() / nf;
    let mut cov = 0.0;
    let mut vp = 0.0;
    let mut vt = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        let dp = p - mp;
        let dt = t - mt;
        cov += dp * dt;
        vp += dp * dp;
        vt += dt * dt;
    }
    if vp / nf < VAR_EPS || vt / nf < VAR_EPS {
        return None;
    }
    Some((cov / (vp.sqrt() * vt.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing the average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Spearman correlation: Pearson over average ranks.
pub fn rank_ic(pred: &[f64], truth: &[f64]) -> Option<f64> {
    if pred.len() != truth.len() {
        return None;
    }
    ic(&average_ranks(pred), &average_ranks(truth))
}

/// Percentage of the `n` highest predictions whose outcome is positive. Ties
/// in the prediction go to the lower index; `n` is clamped to the number of
/// stocks.
pub fn precision_at_n(pred: &[f64], positive: &[bool], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(MtmdError::Contract("precision@N needs N >= 1".into()));
    }
    if pred.len() != positive.len() {
        return Err(MtmdError::shape("precision_at_n", &[pred.len()], &[positive.len()]));
    }
    if pred.is_empty() {
        return Err(MtmdError::Contract("precision@N on an empty cross-section".into()));
    }
    let mut idx: Vec<usize> = (0..pred.len()).collect();
    idx.sort_by(|&a, &b| pred[b].total_cmp(&pred[a]));
    let take = n.min(pred.len());
    let hits = idx[..take].iter().filter(|&&i| positive[i]).count();
    Ok(100.0 * hits as f64 / take as f64)
}

/// Metrics of one date. Correlations are `None` for degenerate dates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyScore {
    pub date: NaiveDate,
    pub ic: Option<f64>,
    pub rank_ic: Option<f64>,
    /// Aligned with [`PRECISION_NS`].
    pub precision: [f64; 4],
}

impl DailyScore {
    /// `pred` against normalized labels for the correlations and raw change
    /// rates for positivity.
    pub fn score(date: NaiveDate, pred: &[f64], labels: &[f64], raw_returns: &[f64]) -> Result<Self> {
        let positive: Vec<bool> = raw_returns.iter().map(|&r| r > 0.0).collect();
        let mut precision = [0.0; 4];
        for (slot, &n) in precision.iter_mut().zip(&PRECISION_NS) {
            *slot = precision_at_n(pred, &positive, n)?;
        }
        Ok(DailyScore {
            date,
            ic: ic(pred, labels),
            rank_ic: rank_ic(pred, labels),
            precision,
        })
    }
}

/// Mean and population std across dates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        if values.is_empty() {
            return Summary::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Summary {
            mean,
            std: var.sqrt(),
            count: values.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ic: Summary,
    pub rank_ic: Summary,
    /// Aligned with [`PRECISION_NS`].
    pub precision: [Summary; 4],
    pub daily: Vec<DailyScore>,
    /// Dates left out of the correlation averages.
    pub skipped_dates: usize,
}

/// Averages daily scores. Degenerate-variance dates are excluded from the
/// IC and Rank IC averages but still count for precision.
pub fn aggregate(daily: &[DailyScore]) -> Result<MetricReport> {
    if daily.is_empty() {
        return Err(MtmdError::Data("no dates to aggregate".into()));
    }
    let ics: Vec<f64> = daily.iter().filter_map(|d| d.ic).collect();
    let rics: Vec<f64> = daily.iter().filter_map(|d| d.rank_ic).collect();
    if ics.is_empty() {
        return Err(MtmdError::Data("every date has degenerate variance".into()));
    }
    let mut precision = [Summary::default(); 4];
    for (k, slot) in precision.iter_mut().enumerate() {
        let vals: Vec<f64> = daily.iter().map(|d| d.precision[k]).collect();
        *slot = Summary::of(&vals);
    }
    Ok(MetricReport {
        ic: Summary::of(&ics),
        rank_ic: Summary::of(&rics),
        precision,
        daily: daily.to_vec(),
        skipped_dates: daily.len() - ics.len(),
    })
}

impl MetricReport {
    /// `date,ic,rank_ic,p3,p5,p10,p30`; degenerate correlations are blank.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("date,ic,rank_ic,p3,p5,p10,p30\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for d in &self.daily {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                d.date,
                opt(d.ic),
                opt(d.rank_ic),
                d.precision[0],
                d.precision[1],
                d.precision[2],
                d.precision[3]
            );
        }
        out
    }

    /// One-row summary table: mean with std in parentheses underneath.
    pub fn summary_table(&self, label: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", table_header());
        let _ = write!(out, "{}", self.table_rows(label));
        out
    }

    pub(crate) fn table_rows(&self, label: &str) -> String {
        let cells = |f: &dyn Fn(&Summary) -> f64| -> Vec<f64> {
            let mut v = vec![f(&self.ic), f(&self.rank_ic)];
            v.extend(self.precision.iter().map(f));
            v
        };
        let means = cells(&|s| s.mean);
        let stds = cells(&|s| s.std);
        let fmt = |vals: &[f64], paren: bool| -> String {
            vals.iter()
                .enumerate()
                .map(|(k, v)| {
                    let s = if k < 2 { format!("{v:.3}") } else { format!("{v:.2}") };
                    let s = if paren { format!("({s})") } else { s };
                    format!("{s:>10}")
                })
                .collect::<Vec<_>>()
                .join(" ")
        };
        format!(
            "{label:<10} {}\n{:<10} {}\n",
            fmt(&means, false),
            "",
            fmt(&stds, true)
        )
    }
}

pub(crate) fn table_header() -> String {
    format!(
        "{:<10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
        "Method", "IC", "Rank IC", "P@3", "P@5", "P@10", "P@30"
    )
}
