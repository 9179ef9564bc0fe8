//! Planted-factor synthetic market.
//!
//! Each concept carries an AR(1) factor path; a stock's daily return is the
//! mean of its concepts' factors plus Gaussian idiosyncratic noise. Prices
//! compound from 100. Features are the stock's own 60-day window of
//! open/close/high/low/vwap (relative to the current close) and log volume
//! (relative to the current volume), standardized per column.

use std::io::Write;
use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use super::panel::{build_panel, ConceptGraph, FeaturePanel, PanelRecord};
use super::{write_concepts, write_panel_records, FIELDS, LOOKBACK};
use crate::error::{MtmdError, Result};

fn default_factor_sigma() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_stocks: usize,
    pub n_concepts: usize,
    pub n_dates: usize,
    /// Probability of each stock/concept link.
    pub membership_density: f64,
    /// AR(1) coefficient of the concept factors.
    pub factor_persistence: f64,
    pub noise_sigma: f64,
    /// Stationary standard deviation of each concept factor.
    #[serde(default = "default_factor_sigma")]
    pub factor_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_stocks: 20,
            n_concepts: 4,
            n_dates: 300,
            membership_density: 0.3,
            factor_persistence: 0.95,
            noise_sigma: 0.02,
            factor_sigma: default_factor_sigma(),
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_stocks == 0 || self.n_concepts == 0 || self.n_dates == 0 {
            return Err(MtmdError::Config("synthetic counts must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.membership_density) {
            return Err(MtmdError::Config("membership_density must lie in [0,1]".into()));
        }
        if !(0.0..1.0).contains(&self.factor_persistence) {
            return Err(MtmdError::Config("factor_persistence must lie in [0,1)".into()));
        }
        if !(self.noise_sigma >= 0.0) || !(self.factor_sigma >= 0.0) {
            return Err(MtmdError::Config("sigmas must be non-negative".into()));
        }
        Ok(())
    }
}

/// What was planted, indexed by generation date (all `n_dates` of them).
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub stock_ids: Vec<String>,
    pub concept_ids: Vec<String>,
    /// Concept indices of each stock.
    pub membership: Vec<Vec<usize>>,
    pub dates: Vec<NaiveDate>,
    /// `[date][concept]`
    pub factors: Vec<Vec<f64>>,
    /// `[date][stock]`
    pub returns: Vec<Vec<f64>>,
    pub persistence: f64,
}

impl GroundTruth {
    /// Mean planted factor of a stock on generation date `d`.
    pub fn mean_factor(&self, d: usize, stock: usize) -> f64 {
        let cs = &self.membership[stock];
        cs.iter().map(|&c| self.factors[d][c]).sum::<f64>() / cs.len() as f64
    }

    pub fn date_index(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    /// Writes `membership.csv` and `factors.csv` into `dir`.
    pub fn write_sidecars(&self, dir: &Path) -> Result<()> {
        let mut m = std::io::BufWriter::new(std::fs::File::create(dir.join("membership.csv"))?);
        writeln!(m, "concept_id,stock_id")?;
        for (s, cs) in self.membership.iter().enumerate() {
            for &c in cs {
                writeln!(m, "{},{}", self.concept_ids[c], self.stock_ids[s])?;
            }
        }
        m.flush()?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("factors.csv"))?);
        writeln!(f, "date,concept_id,value")?;
        for (d, row) in self.factors.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                writeln!(f, "{},{},{v}", self.dates[d], self.concept_ids[c])?;
            }
        }
        f.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticMarket {
    pub spec: SyntheticSpec,
    /// File-level rows, including the final label-only date.
    pub records: Vec<PanelRecord>,
    /// Static `(concept_id, stock_id)` links.
    pub links: Vec<(String, String)>,
    pub panel: FeaturePanel,
    pub graph: ConceptGraph,
    pub truth: GroundTruth,
}

impl SyntheticMarket {
    /// Writes `panel.csv`, `concepts.csv` and the ground-truth sidecars.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_panel_records(&dir.join("panel.csv"), &self.records)?;
        write_concepts(&dir.join("concepts.csv"), &self.links)?;
        self.truth.write_sidecars(dir)
    }
}

fn weekdays_from(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.succ_opt().expect("date in range");
    }
    out
}

/// Deterministic per `spec.seed`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticMarket> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_stocks;
    let nc = spec.n_concepts;
    let nd = spec.n_dates;
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");

    let stock_ids: Vec<String> = (0..n).map(|i| format!("s{i:04}")).collect();
    let concept_ids: Vec<String> = (0..nc).map(|j| format!("c{j:03}")).collect();
    let dates = weekdays_from(NaiveDate::from_ymd_opt(2010, 1, 4).expect("valid"), nd);

    let caps_dist = LogNormal::new(0.0, 1.0).expect("valid lognormal");
    let caps: Vec<f64> = (0..n).map(|_| caps_dist.sample(&mut rng)).collect();

    let mut membership: Vec<Vec<usize>> = (0..n)
        .map(|_| (0..nc).filter(|_| rng.gen_bool(spec.membership_density)).collect())
        .collect();
    for cs in membership.iter_mut() {
        if cs.is_empty() {
            cs.push(rng.gen_range(0..nc));
        }
    }

    let phi = spec.factor_persistence;
    let innovation = spec.factor_sigma * (1.0 - phi * phi).sqrt();
    let mut factors = vec![vec![0.0; nc]; nd];
    for c in 0..nc {
        factors[0][c] = spec.factor_sigma * std_normal.sample(&mut rng);
    }
    for d in 1..nd {
        for c in 0..nc {
            factors[d][c] = phi * factors[d - 1][c] + innovation * std_normal.sample(&mut rng);
        }
    }

    let mut returns = vec![vec![0.0; n]; nd];
    for d in 0..nd {
        for i in 0..n {
            let cs = &membership[i];
            let mean = cs.iter().map(|&c| factors[d][c]).sum::<f64>() / cs.len() as f64;
            let noise = spec.noise_sigma * std_normal.sample(&mut rng);
            returns[d][i] = (mean + noise).max(-0.9);
        }
    }

    // Daily bars per stock: [day][field].
    let wick = Normal::new(0.0, 0.005).expect("valid normal");
    let vol_level = LogNormal::new(13.0, 1.0).expect("valid lognormal");
    let vol_day = Normal::new(0.0, 0.5).expect("valid normal");
    let mut bars = vec![vec![[0.0f64; FIELDS]; nd]; n];
    for i in 0..n {
        let base_volume = vol_level.sample(&mut rng);
        let mut prev_close: f64 = 100.0;
        let mut close: f64 = 100.0;
        for d in 0..nd {
            close *= 1.0 + returns[d][i];
            let open = prev_close;
            let high = open.max(close) * (1.0 + f64::abs(wick.sample(&mut rng)));
            let low = open.min(close) * (1.0 - f64::abs(wick.sample(&mut rng)));
            let vwap = (open + high + low + close) / 4.0;
            let volume = base_volume * f64::exp(vol_day.sample(&mut rng));
            bars[i][d] = [open, close, high, low, vwap, volume];
            prev_close = close;
        }
    }

    let mut records = Vec::new();
    for t in LOOKBACK..nd {
        for i in 0..n {
            let [_, close_t, _, _, _, volume_t] = bars[i][t];
            let mut features = Vec::with_capacity(LOOKBACK * FIELDS);
            for d in t + 1 - LOOKBACK..=t {
                let bar = &bars[i][d];
                for (f, &v) in bar.iter().enumerate() {
                    features.push(if f == FIELDS - 1 {
                        (v / volume_t).ln()
                    } else {
                        v / close_t - 1.0
                    });
                }
            }
            records.push(PanelRecord {
                date: dates[t],
                stock_id: stock_ids[i].clone(),
                market_cap: caps[i],
                price: close_t,
                features,
            });
        }
    }
    standardize_columns(&mut records);

    let links: Vec<(String, String)> = membership
        .iter()
        .enumerate()
        .flat_map(|(i, cs)| {
            cs.iter()
                .map(|&c| (concept_ids[c].clone(), stock_ids[i].clone()))
                .collect::<Vec<_>>()
        })
        .collect();
    let rows: Vec<_> = links
        .iter()
        .map(|(c, s)| (c.clone(), s.clone(), None))
        .collect();
    let (panel, graph) = build_panel(&records, &rows)?;

    Ok(SyntheticMarket {
        spec: spec.clone(),
        records,
        links,
        panel,
        graph,
        truth: GroundTruth {
            stock_ids,
            concept_ids,
            membership,
            dates,
            factors,
            returns,
            persistence: phi,
        },
    })
}

/// Z-scores each feature column over all records; constant columns become 0.
fn standardize_columns(records: &mut [PanelRecord]) {
    let Some(width) = records.first().map(|r| r.features.len()) else {
        return;
    };
    let count = records.len() as f64;
    for k in 0..width {
        let mean = records.iter().map(|r| r.features[k]).sum::<f64>() / count;
        let var = records
            .iter()
            .map(|r| (r.features[k] - mean).powi(2))
            .sum::<f64>()
            / count;
        let std = var.sqrt();
        for r in records.iter_mut() {
            r.features[k] = if std > 1e-12 {
                (r.features[k] - mean) / std
            } else {
                0.0
            };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let spec = SyntheticSpec {
            n_dates: 80,
            ..SyntheticSpec::default()
        };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.panel, b.panel);
        let c = generate_synthetic(&SyntheticSpec { seed: 8, ..spec }).unwrap();
        assert_ne!(a.panel, c.panel);
    }

    #[test]
    fn trim_arithmetic() {
        let m = generate_synthetic(&SyntheticSpec::default()).unwrap();
        assert_eq!(m.panel.len(), 300 - 61);
        assert_eq!(m.graph.dates.len(), m.panel.len());
        for d in &m.panel.dates {
            assert_eq!(d.n_stocks(), 20);
        }
    }

    #[test]
    fn single_concept_full_membership_without_noise_shares_one_path() {
        let spec = SyntheticSpec {
            n_stocks: 5,
            n_concepts: 1,
            n_dates: 70,
            membership_density: 1.0,
            noise_sigma: 0.0,
            ..SyntheticSpec::default()
        };
        let m = generate_synthetic(&spec).unwrap();
        for row in &m.truth.returns {
            assert!(row.iter().all(|&r| r == row[0]));
        }
        for d in &m.panel.dates {
            assert!(d.raw_returns.iter().all(|&r| r == d.raw_returns[0]));
        }
    }

    #[test]
    fn noiseless_returns_equal_mean_factor() {
        let spec = SyntheticSpec {
            noise_sigma: 0.0,
            n_dates: 90,
            ..SyntheticSpec::default()
        };
        let m = generate_synthetic(&spec).unwrap();
        let mut worst = 0.0f64;
        for d in 0..spec.n_dates {
            for i in 0..spec.n_stocks {
                worst = worst.max((m.truth.returns[d][i] - m.truth.mean_factor(d, i)).abs());
            }
        }
        assert_eq!(worst, 0.0);
    }

    #[test]
    fn links_stay_in_range() {
        let m = generate_synthetic(&SyntheticSpec {
            n_dates: 75,
            ..SyntheticSpec::default()
        })
        .unwrap();
        for (slice, g) in m.panel.dates.iter().zip(&m.graph.dates) {
            for &(s, c) in &g.links {
                assert!(s < slice.n_stocks() && c < g.n_concepts());
            }
        }
    }

    #[test]
    fn invalid_spec_rejected() {
        let bad = SyntheticSpec {
            factor_persistence: 1.0,
            ..SyntheticSpec::default()
        };
        assert!(generate_synthetic(&bad).is_err());
        let bad = SyntheticSpec {
            n_stocks: 0,
            ..SyntheticSpec::default()
        };
        assert!(generate_synthetic(&bad).is_err());
    }
}
