//! Classification of learned global filters by their magnitude response.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamic::FilterBank;
use crate::error::{Error, Result};
use crate::params::{ParamKind, ParamStore};
use crate::spectral::GlobalFilter;

/// Relative spread below which a response counts as flat.
pub const FLAT_SPREAD: f64 = 0.05;
/// Required ratio between the lower and upper band means.
pub const BAND_MARGIN: f64 = 1.2;
pub const HISTOGRAM_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterClass {
    LowPass,
    HighPass,
    BandPass,
    Inactive,
}

impl FilterClass {
    pub const ALL: [FilterClass; 4] = [Self::LowPass, Self::HighPass, Self::BandPass, Self::Inactive];

    pub fn name(self) -> &'static str {
        match self {
            Self::LowPass => "low_pass",
            Self::HighPass => "high_pass",
            Self::BandPass => "band_pass",
            Self::Inactive => "inactive",
        }
    }
}

/// Power-weighted mean bin, as a fraction of the sampling rate in `[0, 0.5]`.
pub fn center_frequency(mag: &[f64]) -> f64 {
    if mag.len() < 2 {
        return 0.0;
    }
    let power: f64 = mag.iter().map(|m| m * m).sum();
    if power == 0.0 {
        return 0.0;
    }
    let moment: f64 = mag.iter().enumerate().map(|(k, m)| k as f64 * m * m).sum();
    0.5 * moment / power / (mag.len() - 1) as f64
}

pub fn classify(mag: &[f64]) -> FilterClass {
    let n = mag.len();
    let mean = mag.iter().sum::<f64>() / n.max(1) as f64;
    let (lo, hi) = mag.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &m| (a.min(m), b.max(m)));
    if n < 3 || mean == 0.0 || hi - lo < FLAT_SPREAD * mean {
        return FilterClass::Inactive;
    }
    let third = n / 3;
    let low = mag[..third].iter().sum::<f64>() / third as f64;
    let high = mag[n - third..].iter().sum::<f64>() / third as f64;
    if low >= BAND_MARGIN * high {
        FilterClass::LowPass
    } else if high >= BAND_MARGIN * low {
        FilterClass::HighPass
    } else {
        FilterClass::BandPass
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterInfo {
    pub channel: usize,
    pub class: FilterClass,
    pub center_frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` ascending edges over `[0, 0.5]`.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn of(values: impl IntoIterator<Item = f64>, bins: usize) -> Self {
        let edges = (0..=bins).map(|i| 0.5 * i as f64 / bins as f64).collect();
        let mut counts = vec![0; bins];
        for v in values {
            let i = ((v / 0.5) * bins as f64).floor().clamp(0.0, (bins - 1) as f64) as usize;
            counts[i] += 1;
        }
        Self { edges, counts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub layer: String,
    pub experts: usize,
    pub class_counts: BTreeMap<FilterClass, usize>,
    pub center_frequency_histogram: Histogram,
    pub filters: Vec<FilterInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub layers: Vec<LayerReport>,
    pub class_counts: BTreeMap<FilterClass, usize>,
}

fn magnitudes(f: &GlobalFilter, c: usize) -> Vec<f64> {
    f.row(c).iter().map(|z| z.norm()).collect()
}

/// Equal-weight average of the experts.
pub fn mean_filter(bank: &FilterBank) -> GlobalFilter {
    let k = bank.k() as f64;
    let mut out = GlobalFilter::constant(bank.channels(), bank.bins(), Default::default());
    for e in &bank.experts {
        out.data.iter_mut().zip(&e.data).for_each(|(o, z)| *o += z / k);
    }
    out
}

pub fn analyze_filter(f: &GlobalFilter) -> Vec<FilterInfo> {
    (0..f.channels)
        .map(|c| {
            let m = magnitudes(f, c);
            FilterInfo { channel: c, class: classify(&m), center_frequency: center_frequency(&m) }
        })
        .collect()
}

fn count(filters: &[FilterInfo]) -> BTreeMap<FilterClass, usize> {
    let mut counts: BTreeMap<FilterClass, usize> = FilterClass::ALL.iter().map(|&c| (c, 0)).collect();
    for f in filters {
        *counts.get_mut(&f.class).unwrap() += 1;
    }
    counts
}

pub fn analyze_bank(layer: &str, bank: &FilterBank) -> LayerReport {
    let filters = analyze_filter(&mean_filter(bank));
    LayerReport {
        layer: layer.to_string(),
        experts: bank.k(),
        class_counts: count(&filters),
        center_frequency_histogram: Histogram::of(filters.iter().map(|f| f.center_frequency), HISTOGRAM_BINS),
        filters,
    }
}

pub fn build_report(layers: Vec<LayerReport>) -> FilterReport {
    let mut class_counts: BTreeMap<FilterClass, usize> = FilterClass::ALL.iter().map(|&c| (c, 0)).collect();
    for l in &layers {
        for (c, n) in &l.class_counts {
            *class_counts.get_mut(c).unwrap() += n;
        }
    }
    FilterReport { layers, class_counts }
}

/// Report on every filter bank in a parameter store, in layer order.
pub fn analyze_store(store: &ParamStore) -> Result<FilterReport> {
    let layers = store
        .entries()
        .iter()
        .filter(|e| e.kind == ParamKind::Filter)
        .map(|e| {
            let layer = e.name.trim_end_matches(".filters").trim_end_matches(".dgf").to_string();
            Ok(analyze_bank(&layer, &FilterBank::from_tensor(&e.value)?))
        })
        .collect::<Result<Vec<_>>>()?;
    if layers.is_empty() {
        return Err(Error::InvalidInput("no filter banks to analyze".into()));
    }
    Ok(build_report(layers))
}

impl FilterReport {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// One row per filter: `layer,channel,class,center_frequency`.
    pub fn write_filters_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["layer", "channel", "class", "center_frequency"])?;
        for l in &self.layers {
            for f in &l.filters {
                w.write_record([&l.layer, &f.channel.to_string(), f.class.name(), &f.center_frequency.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// One row per histogram bin: `layer,lo,hi,count`.
    pub fn write_histogram_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["layer", "lo", "hi", "count"])?;
        for l in &self.layers {
            let h = &l.center_frequency_histogram;
            for (i, n) in h.counts.iter().enumerate() {
                w.write_record([&l.layer, &h.edges[i].to_string(), &h.edges[i + 1].to_string(), &n.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
