use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;

use crate::error::{MtmdError, Result};
use crate::numerics::{Tensor, EPS};

/// Days in the lookback window.
pub const LOOKBACK: usize = 60;
/// Fields per day: open, close, high, low, vwap, volume.
pub const FIELDS: usize = 6;
/// Width of a raw feature row, `LOOKBACK * FIELDS`, oldest day first.
pub const FEATURE_WIDTH: usize = LOOKBACK * FIELDS;

/// `(price_next - price_t) / price_t`.
pub fn change_rate(price_t: f64, price_next: f64) -> Result<f64> {
    if !(price_t > 0.0) {
        return Err(MtmdError::Domain(format!(
            "change rate needs a positive base price, got {price_t}"
        )));
    }
    Ok((price_next - price_t) / price_t)
}

/// Per-date z-score with population std. Single-stock and flat dates map to
/// zeros.
pub fn normalize_labels_per_date(raw: &[f64]) -> Vec<f64> {
    let n = raw.len();
    if n <= 1 {
        return vec![0.0; n];
    }
    let mean = raw.iter().sum::<f64>() / n as f64;
    let var = raw.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    if std < EPS {
        return vec![0.0; n];
    }
    raw.iter().map(|x| (x - mean) / std).collect()
}

/// One row of the panel file.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelRecord {
    pub date: NaiveDate,
    pub stock_id: String,
    pub market_cap: f64,
    pub price: f64,
    pub features: Vec<f64>,
}

/// Cross-section of one trading date.
#[derive(Debug, Clone, PartialEq)]
pub struct DateSlice {
    pub date: NaiveDate,
    pub stock_ids: Vec<String>,
    /// `[N_s × FEATURE_WIDTH]`
    pub features: Tensor,
    pub market_caps: Vec<f64>,
    /// Normalized change rates, the regression target.
    pub labels: Vec<f64>,
    /// Change rates before normalization; their sign drives Precision@N.
    pub raw_returns: Vec<f64>,
}

impl DateSlice {
    pub fn n_stocks(&self) -> usize {
        self.stock_ids.len()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeaturePanel {
    pub dates: Vec<DateSlice>,
}

impl FeaturePanel {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn date_index(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search_by_key(&date, |d| d.date).ok()
    }
}

/// Stock/concept links of one date. `links` holds sorted, unique
/// `(stock index, concept index)` pairs into that date's slice.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DateGraph {
    pub concept_ids: Vec<String>,
    pub links: Vec<(usize, usize)>,
}

impl DateGraph {
    pub fn n_concepts(&self) -> usize {
        self.concept_ids.len()
    }

    /// Stocks linked to each concept.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_concepts()];
        for &(s, c) in &self.links {
            out[c].push(s);
        }
        out
    }

    /// Concepts linked to each of `n_stocks` stocks.
    pub fn stock_links(&self, n_stocks: usize) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); n_stocks];
        for &(s, c) in &self.links {
            out[s].push(c);
        }
        out
    }

    pub fn contains(&self, stock: usize, concept: usize) -> bool {
        self.links.binary_search(&(stock, concept)).is_ok()
    }
}

/// Per-date graphs aligned with [`FeaturePanel::dates`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConceptGraph {
    pub dates: Vec<DateGraph>,
}

/// Concept rows before alignment: `(concept_id, stock_id, optional date)`.
pub(crate) type ConceptRow = (String, String, Option<NaiveDate>);

/// Groups records by date, derives labels from the next date's price and
/// aligns the concept links with each date's stock order.
///
/// A stock without a price on the following panel date has no label and is
/// left out of that date; the final date only supplies labels.
pub fn build_panel(
    records: &[PanelRecord],
    concept_rows: &[(String, String, Option<NaiveDate>)],
) -> Result<(FeaturePanel, ConceptGraph)> {
    let mut by_date: BTreeMap<NaiveDate, BTreeMap<&str, &PanelRecord>> = BTreeMap::new();
    for rec in records {
        if rec.features.len() != FEATURE_WIDTH {
            return Err(MtmdError::Data(format!(
                "{} {}: expected {FEATURE_WIDTH} features, got {}",
                rec.date,
                rec.stock_id,
                rec.features.len()
            )));
        }
        if !(rec.market_cap > 0.0) {
            return Err(MtmdError::Data(format!(
                "{} {}: market cap must be positive, got {}",
                rec.date, rec.stock_id, rec.market_cap
            )));
        }
        let day = by_date.entry(rec.date).or_default();
        if day.insert(rec.stock_id.as_str(), rec).is_some() {
            return Err(MtmdError::Data(format!(
                "duplicate row for date {} stock {}",
                rec.date, rec.stock_id
            )));
        }
    }

    let concept_ids: Vec<String> = concept_rows
        .iter()
        .map(|(c, _, _)| c.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let concept_index: BTreeMap<&str, usize> = concept_ids
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();

    let days: Vec<_> = by_date.iter().collect();
    let mut panel = FeaturePanel::default();
    let mut graph = ConceptGraph::default();
    for pair in days.windows(2) {
        let (date, today) = pair[0];
        let (_, tomorrow) = pair[1];
        let mut stock_ids = Vec::new();
        let mut feats = Vec::new();
        let mut caps = Vec::new();
        let mut raw = Vec::new();
        for (id, rec) in today {
            let Some(next) = tomorrow.get(id) else { continue };
            raw.push(change_rate(rec.price, next.price).map_err(|e| {
                MtmdError::Data(format!("{date} {id}: {e}"))
            })?);
            stock_ids.push(id.to_string());
            feats.extend_from_slice(&rec.features);
            caps.push(rec.market_cap);
        }
        if stock_ids.is_empty() {
            continue;
        }
        let n = stock_ids.len();
        let stock_index: BTreeMap<&str, usize> = stock_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let mut links: Vec<(usize, usize)> = concept_rows
            .iter()
            .filter(|(_, _, d)| d.is_none_or(|d| d == *date))
            .filter_map(|(c, s, _)| {
                stock_index
                    .get(s.as_str())
                    .map(|&si| (si, concept_index[c.as_str()]))
            })
            .collect();
        links.sort_unstable();
        links.dedup();

        panel.dates.push(DateSlice {
            date: *date,
            stock_ids,
            features: Tensor::new(vec![n, FEATURE_WIDTH], feats)?,
            market_caps: caps,
            labels: normalize_labels_per_date(&raw),
            raw_returns: raw,
        });
        graph.dates.push(DateGraph {
            concept_ids: concept_ids.clone(),
            links,
        });
    }
    Ok((panel, graph))
}
