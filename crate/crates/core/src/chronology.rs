//! Proxy-series ingestion: centering, date binning, joint chronology and
//! smoothed dating errors.
//!
//! Dates are held on a forward time axis (`date = -age_bp`), so they increase
//! toward the present. All public constructors that take ages in years before
//! present convert on entry.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::stats;

/// Minimum dating standard deviation after smoothing, in years.
pub const DEFAULT_PSI_FLOOR: f64 = 1.0;

/// Default bin width for pooled dates, in years.
pub const DEFAULT_BIN_WIDTH: f64 = 15.0;

/// One reconstruction: values at dates, optionally with dating standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxySeries {
    id: String,
    dates: Vec<f64>,
    values: Vec<f64>,
    date_sd: Option<Vec<f64>>,
}

impl ProxySeries {
    /// Build from ages in years BP. Rows may be given in either chronological
    /// direction but must be strictly monotone.
    pub fn from_ages_bp(
        id: impl Into<String>,
        ages_bp: Vec<f64>,
        values: Vec<f64>,
        age_sd: Option<Vec<f64>>,
    ) -> Result<Self> {
        let dates = ages_bp.into_iter().map(|a| -a).collect();
        Self::new(id, dates, values, age_sd)
    }

    /// Build from forward-axis dates (strictly monotone in either direction).
    pub fn new(id: impl Into<String>, dates: Vec<f64>, values: Vec<f64>, date_sd: Option<Vec<f64>>) -> Result<Self> {
        let id = id.into();
        let j = dates.len();
        if j < 2 {
            return Err(Error::invalid(format!("record '{id}' needs at least 2 samples, got {j}")));
        }
        if values.len() != j || date_sd.as_ref().is_some_and(|s| s.len() != j) {
            return Err(Error::invalid(format!("record '{id}' has mismatched column lengths")));
        }
        if dates.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("record '{id}' contains non-finite values")));
        }
        if let Some(sd) = &date_sd {
            if sd.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
                return Err(Error::invalid(format!("record '{id}' has negative or non-finite dating errors")));
            }
        }
        let increasing = dates.windows(2).all(|w| w[1] > w[0]);
        let decreasing = dates.windows(2).all(|w| w[1] < w[0]);
        if !increasing && !decreasing {
            return Err(Error::invalid(format!("dates of record '{id}' are not strictly monotone")));
        }
        let mut series = ProxySeries { id, dates, values, date_sd };
        if decreasing {
            series.dates.reverse();
            series.values.reverse();
            if let Some(sd) = series.date_sd.as_mut() {
                sd.reverse();
            }
        }
        Ok(series)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Forward-axis dates, strictly increasing.
    pub fn dates(&self) -> &[f64] {
        &self.dates
    }

    /// Ages in years BP, strictly decreasing.
    pub fn ages_bp(&self) -> Vec<f64> {
        self.dates.iter().map(|d| -d).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn date_sd(&self) -> Option<&[f64]> {
        self.date_sd.as_deref()
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }
}

/// A series after subtracting its own mean.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalySeries {
    series: ProxySeries,
    mean: f64,
}

impl AnomalySeries {
    pub fn series(&self) -> &ProxySeries {
        &self.series
    }

    pub fn original_mean(&self) -> f64 {
        self.mean
    }

    pub fn id(&self) -> &str {
        self.series.id()
    }

    pub fn dates(&self) -> &[f64] {
        self.series.dates()
    }

    pub fn values(&self) -> &[f64] {
        self.series.values()
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }
}

pub fn center(series: &ProxySeries) -> Result<AnomalySeries> {
    if series.is_empty() {
        return Err(Error::invalid(format!("record '{}' is empty", series.id())));
    }
    let mean = stats::mean(series.values());
    let mut centered = series.clone();
    centered.values.iter_mut().for_each(|v| *v -= mean);
    Ok(AnomalySeries { series: centered, mean })
}

/// Greedy span binning over the pooled dates of all records.
///
/// Sorted pooled dates are grouped while the group span stays within `width`;
/// each date is replaced by its group mean.
pub fn bin_dates(series: &[ProxySeries], width: f64) -> Result<Vec<ProxySeries>> {
    if !(width >= 0.0) || !width.is_finite() {
        return Err(Error::invalid(format!("bin width must be finite and >= 0, got {width}")));
    }
    // (date, record, position)
    let mut pooled: Vec<(f64, usize, usize)> = series
        .iter()
        .enumerate()
        .flat_map(|(r, s)| s.dates().iter().enumerate().map(move |(p, &d)| (d, r, p)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut out: Vec<ProxySeries> = series.to_vec();
    let mut start = 0;
    while start < pooled.len() {
        let first = pooled[start].0;
        let mut end = start + 1;
        while end < pooled.len() && pooled[end].0 - first <= width {
            end += 1;
        }
        let group = &pooled[start..end];
        // mean as an offset from the first member keeps identical dates exact
        let offset = group.iter().map(|g| g.0 - first).sum::<f64>() / group.len() as f64;
        let centre = first + offset;
        let mut seen: BTreeMap<usize, f64> = BTreeMap::new();
        for &(d, r, p) in group {
            if let Some(&other) = seen.get(&r) {
                return Err(Error::BinCollision { record: series[r].id().to_string(), first: -other, second: -d });
            }
            seen.insert(r, d);
            out[r].dates[p] = centre;
        }
        start = end;
    }
    Ok(out)
}

/// Pooled distinct dates with per-record incidence and dating errors.
#[derive(Debug, Clone, PartialEq)]
pub struct JointChronology {
    t: Vec<f64>,
    incidence: Vec<Vec<usize>>,
    record_ids: Vec<String>,
    date_sd: Option<Vec<f64>>,
    psi: Option<Vec<f64>>,
}

impl JointChronology {
    /// Build directly from joint dates and incidence maps.
    pub fn from_parts(t: Vec<f64>, incidence: Vec<Vec<usize>>, record_ids: Vec<String>) -> Result<Self> {
        if t.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("joint dates must be strictly increasing"));
        }
        if incidence.len() != record_ids.len() {
            return Err(Error::invalid("one incidence map per record required"));
        }
        for (k, inc) in incidence.iter().enumerate() {
            if inc.iter().any(|&i| i >= t.len()) {
                return Err(Error::invalid(format!("incidence of record {k} points past the joint chronology")));
            }
            if inc.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::invalid(format!("incidence of record {k} is not strictly increasing")));
            }
        }
        Ok(JointChronology { t, incidence, record_ids, date_sd: None, psi: None })
    }

    /// Joint dates on the forward axis, strictly increasing.
    pub fn dates(&self) -> &[f64] {
        &self.t
    }

    pub fn ages_bp(&self) -> Vec<f64> {
        self.t.iter().map(|d| -d).collect()
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn num_records(&self) -> usize {
        self.incidence.len()
    }

    /// Joint indices occupied by record `k`, in chronological order.
    pub fn incidence(&self, k: usize) -> &[usize] {
        &self.incidence[k]
    }

    pub fn incidences(&self) -> &[Vec<usize>] {
        &self.incidence
    }

    pub fn record_ids(&self) -> &[String] {
        &self.record_ids
    }

    /// Total number of observations `j = Σ j_k`.
    pub fn total_observations(&self) -> usize {
        self.incidence.iter().map(Vec::len).sum()
    }

    /// Average reported dating error per joint date, when every joint date has
    /// at least one.
    pub fn date_sd(&self) -> Option<&[f64]> {
        self.date_sd.as_deref()
    }

    /// Smoothed dating standard deviations `ψ_i`.
    pub fn psi(&self) -> Option<&[f64]> {
        self.psi.as_deref()
    }

    pub fn set_psi(&mut self, psi: Vec<f64>) -> Result<()> {
        if psi.len() != self.t.len() {
            return Err(Error::invalid("one dating standard deviation per joint date required"));
        }
        if psi.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
            return Err(Error::invalid("dating standard deviations must be positive"));
        }
        self.psi = Some(psi);
        Ok(())
    }

    /// Smooth the averaged dating errors into `ψ` (local linear, Gaussian
    /// kernel). `bandwidth = None` uses the rule-of-thumb bandwidth.
    pub fn with_smoothed_psi(mut self, bandwidth: Option<f64>, floor: f64) -> Result<Self> {
        let sd = self
            .date_sd
            .clone()
            .ok_or_else(|| Error::Config("random dates need the 'age_sd' column for every joint date".into()))?;
        let h = bandwidth.unwrap_or_else(|| stats::rule_of_thumb_bandwidth(&self.t));
        let psi = smooth_date_errors(&self.t, &sd, h, floor)?;
        self.psi = Some(psi);
        Ok(self)
    }
}

pub fn merge_chronologies(series: &[AnomalySeries]) -> Result<JointChronology> {
    if series.is_empty() {
        return Err(Error::invalid("at least one record is required"));
    }
    let mut dates: Vec<f64> = series.iter().flat_map(|s| s.dates().iter().copied()).collect();
    dates.sort_by(|a, b| a.total_cmp(b));
    dates.dedup();
    let index = |d: f64| dates.binary_search_by(|x| x.total_cmp(&d)).expect("date present");
    let incidence: Vec<Vec<usize>> = series.iter().map(|s| s.dates().iter().map(|&d| index(d)).collect()).collect();

    let mut sd_sum = vec![0.0; dates.len()];
    let mut sd_count = vec![0usize; dates.len()];
    for (s, inc) in series.iter().zip(&incidence) {
        if let Some(sd) = s.series().date_sd() {
            for (&i, &v) in inc.iter().zip(sd) {
                sd_sum[i] += v;
                sd_count[i] += 1;
            }
        }
    }
    let date_sd =
        sd_count.iter().all(|&c| c > 0).then(|| sd_sum.iter().zip(&sd_count).map(|(s, &c)| s / c as f64).collect());

    let ids = series.iter().map(|s| s.id().to_string()).collect();
    let mut joint = JointChronology::from_parts(dates, incidence, ids)?;
    joint.date_sd = date_sd;
    Ok(joint)
}

/// Local linear smooth of dating standard errors, floored at `floor`.
pub fn smooth_date_errors(t: &[f64], sd: &[f64], bandwidth: f64, floor: f64) -> Result<Vec<f64>> {
    if t.len() != sd.len() {
        return Err(Error::invalid("dates and dating errors differ in length"));
    }
    if sd.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::invalid("dating errors must be nonnegative"));
    }
    if sd.iter().all(|&s| s == 0.0) {
        return Err(Error::Config("random dates requested but every dating error is zero".into()));
    }
    if !(floor > 0.0) {
        return Err(Error::invalid(format!("dating-error floor must be positive, got {floor}")));
    }
    Ok(stats::local_linear(t, sd, t, bandwidth)?.into_iter().map(|p| p.max(floor)).collect())
}
