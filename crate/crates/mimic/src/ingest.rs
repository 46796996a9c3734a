//! Raw query-count ingestion: CSV parsing, period aggregation, indicator
//! shares and standardization.
//!
//! The input is one CSV row per region and raw period (typically a month),
//! with the fixed schema
//!
//! ```text
//! region,period,q1,q2,q3,q4,q5,total,grp_pc,mining,manufacturing,
//! emissions_pc,pop_density,age65,tertiary
//! ```
//!
//! Counts are aggregated by summing across a named period's member months
//! before shares are computed (`y_in = count_in / total_n`), which is the
//! exact aggregate of the ratio definition; cause values are averaged.
//! Income polynomial columns are built on the raw scale first and each power
//! is standardized separately — powers of a z-score would be a different
//! model. All standardization uses the sample SD (divisor `N - 1`).

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::stats;

/// Canonical indicator names, in query-category order.
pub const INDICATOR_NAMES: [&str; 5] = [
    "climate_change",
    "endangered_environment",
    "political",
    "science",
    "renewable_energy",
];

/// Raw cause columns, in CSV order.
pub const RAW_CAUSE_NAMES: [&str; 7] = [
    "grp_pc",
    "mining",
    "manufacturing",
    "emissions_pc",
    "pop_density",
    "age65",
    "tertiary",
];

/// Which cause set enters the model.
///
/// Variant A uses the full set (income polynomial, industry structure,
/// emissions, demographics, education; k = 9). Variant B drops mining, the
/// 65+ share and tertiary education (k = 6).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelVariant {
    A,
    B,
}

impl ModelVariant {
    /// Cause-column names for this variant, income polynomial first.
    pub fn cause_names(self) -> Vec<&'static str> {
        match self {
            ModelVariant::A => vec![
                "grp_pc",
                "grp_pc2",
                "grp_pc3",
                "mining",
                "manufacturing",
                "emissions_pc",
                "pop_density",
                "age65",
                "tertiary",
            ],
            ModelVariant::B => vec![
                "grp_pc",
                "grp_pc2",
                "grp_pc3",
                "manufacturing",
                "emissions_pc",
                "pop_density",
            ],
        }
    }

    pub fn k(self) -> usize {
        self.cause_names().len()
    }
}

/// One raw CSV row: query counts and cause values for a region in one raw
/// period (month).
#[derive(Debug, Clone, Deserialize)]
pub struct RawQueryRow {
    pub region: String,
    pub period: String,
    pub q1: u64,
    pub q2: u64,
    pub q3: u64,
    pub q4: u64,
    pub q5: u64,
    pub total: u64,
    pub grp_pc: f64,
    pub mining: f64,
    pub manufacturing: f64,
    pub emissions_pc: f64,
    pub pop_density: f64,
    pub age65: f64,
    pub tertiary: f64,
}

impl RawQueryRow {
    pub fn counts(&self) -> [u64; 5] {
        [self.q1, self.q2, self.q3, self.q4, self.q5]
    }

    pub fn causes(&self) -> [f64; 7] {
        [
            self.grp_pc,
            self.mining,
            self.manufacturing,
            self.emissions_pc,
            self.pop_density,
            self.age65,
            self.tertiary,
        ]
    }
}

/// The validated raw table.
#[derive(Debug, Clone)]
pub struct RawQueryTable {
    pub rows: Vec<RawQueryRow>,
}

const EXPECTED_HEADER: [&str; 15] = [
    "region",
    "period",
    "q1",
    "q2",
    "q3",
    "q4",
    "q5",
    "total",
    "grp_pc",
    "mining",
    "manufacturing",
    "emissions_pc",
    "pop_density",
    "age65",
    "tertiary",
];

/// Reads and validates the raw CSV. Every violating row is reported, not
/// just the first.
pub fn read_raw_csv(path: &Path) -> Result<RawQueryTable> {
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    let got: Vec<&str> = header.iter().collect();
    if got != EXPECTED_HEADER {
        return Err(Error::Violations(vec![format!(
            "header mismatch: expected {:?}, got {:?}",
            EXPECTED_HEADER.join(","),
            got.join(",")
        )]));
    }

    let mut rows = Vec::new();
    let mut violations = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (idx, record) in reader.deserialize::<RawQueryRow>().enumerate() {
        let line = idx + 2; // header is line 1
        match record {
            Err(e) => violations.push(format!("line {line}: {e}")),
            Ok(row) => {
                let sum: u64 = row.counts().iter().sum();
                if row.total < sum {
                    violations.push(format!(
                        "line {line}: region '{}': total {} is less than the category sum {sum}",
                        row.region, row.total
                    ));
                }
                if row.causes().iter().any(|v| !v.is_finite()) {
                    violations.push(format!(
                        "line {line}: region '{}': non-finite cause value",
                        row.region
                    ));
                }
                if !seen.insert((row.region.clone(), row.period.clone())) {
                    violations.push(format!(
                        "line {line}: duplicate region '{}' within period '{}'",
                        row.region, row.period
                    ));
                }
                rows.push(row);
            }
        }
    }
    if !violations.is_empty() {
        return Err(Error::Violations(violations));
    }
    if rows.is_empty() {
        return Err(Error::Data("input CSV has no rows".into()));
    }
    Ok(RawQueryTable { rows })
}

/// One region's counts and causes after summing a period's member months.
#[derive(Debug, Clone)]
pub struct AggregatedRegion {
    pub region: String,
    pub counts: [u64; 5],
    pub total: u64,
    /// Cause values averaged across member months (they are annual-level
    /// variables repeated per month).
    pub causes: [f64; 7],
}

/// All regions of one named period.
#[derive(Debug, Clone)]
pub struct AggregatedPeriod {
    pub name: String,
    pub regions: Vec<AggregatedRegion>,
}

/// Sums counts and averages causes across each period's member months.
///
/// Every region must appear in every member month; gaps are reported
/// together. With an empty definition list, each distinct raw period value
/// becomes its own period (sorted).
pub fn aggregate_periods(
    table: &RawQueryTable,
    definitions: &[(String, Vec<String>)],
) -> Result<Vec<AggregatedPeriod>> {
    let definitions: Vec<(String, Vec<String>)> = if definitions.is_empty() {
        let labels: std::collections::BTreeSet<String> =
            table.rows.iter().map(|r| r.period.clone()).collect();
        labels.into_iter().map(|l| (l.clone(), vec![l])).collect()
    } else {
        definitions.to_vec()
    };

    let mut violations = Vec::new();
    let mut periods = Vec::new();
    for (name, members) in &definitions {
        if members.is_empty() {
            violations.push(format!("period '{name}' has no member labels"));
            continue;
        }
        // region -> member label -> row
        let mut by_region: BTreeMap<&str, BTreeMap<&str, &RawQueryRow>> = BTreeMap::new();
        for row in &table.rows {
            if members.iter().any(|m| m == &row.period) {
                by_region
                    .entry(row.region.as_str())
                    .or_default()
                    .insert(row.period.as_str(), row);
            }
        }
        if by_region.is_empty() {
            violations.push(format!("period '{name}': no rows match its member labels"));
            continue;
        }
        let mut regions = Vec::new();
        for (region, by_month) in &by_region {
            let missing: Vec<&str> = members
                .iter()
                .map(String::as_str)
                .filter(|m| !by_month.contains_key(m))
                .collect();
            if !missing.is_empty() {
                violations.push(format!(
                    "period '{name}': region '{region}' is missing {}",
                    missing.join(", ")
                ));
                continue;
            }
            let mut counts = [0u64; 5];
            let mut total = 0u64;
            let mut causes = [0.0; 7];
            for row in by_month.values() {
                for (c, v) in counts.iter_mut().zip(row.counts()) {
                    *c += v;
                }
                total += row.total;
                for (c, v) in causes.iter_mut().zip(row.causes()) {
                    *c += v;
                }
            }
            for c in causes.iter_mut() {
                *c /= by_month.len() as f64;
            }
            regions.push(AggregatedRegion { region: region.to_string(), counts, total, causes });
        }
        periods.push(AggregatedPeriod { name: name.clone(), regions });
    }
    if !violations.is_empty() {
        return Err(Error::Violations(violations));
    }
    Ok(periods)
}

/// Query shares `y_in = count_in / total_n` per region. Zero-total regions
/// are rejected by label, all of them at once.
pub fn compute_indicator_shares(regions: &[AggregatedRegion]) -> Result<DMatrix<f64>> {
    let zero: Vec<&str> = regions
        .iter()
        .filter(|r| r.total == 0)
        .map(|r| r.region.as_str())
        .collect();
    if !zero.is_empty() {
        return Err(Error::Violations(
            zero.iter().map(|r| format!("region '{r}' has zero total queries")).collect(),
        ));
    }
    Ok(DMatrix::from_fn(regions.len(), 5, |r, c| {
        regions[r].counts[c] as f64 / regions[r].total as f64
    }))
}

/// Cause matrix on the raw scale, with the income powers computed before any
/// standardization.
pub fn build_cause_matrix(regions: &[AggregatedRegion], variant: ModelVariant) -> DMatrix<f64> {
    let names = variant.cause_names();
    DMatrix::from_fn(regions.len(), names.len(), |r, c| {
        let reg = &regions[r];
        match names[c] {
            "grp_pc" => reg.causes[0],
            "grp_pc2" => reg.causes[0] * reg.causes[0],
            "grp_pc3" => reg.causes[0] * reg.causes[0] * reg.causes[0],
            "mining" => reg.causes[1],
            "manufacturing" => reg.causes[2],
            "emissions_pc" => reg.causes[3],
            "pop_density" => reg.causes[4],
            "age65" => reg.causes[5],
            "tertiary" => reg.causes[6],
            other => unreachable!("unknown cause column {other}"),
        }
    })
}

/// Column-wise z-scores with the sample SD (divisor `N - 1`). Constant
/// columns are reported by name.
pub fn standardize_columns(m: &DMatrix<f64>, names: &[String]) -> Result<DMatrix<f64>> {
    let mut out = m.clone();
    let mut constant = Vec::new();
    for j in 0..m.ncols() {
        let col: Vec<f64> = m.column(j).iter().copied().collect();
        let mean = stats::mean(&col);
        let sd = stats::sd_sample(&col);
        if !(sd > 0.0) {
            constant.push(names[j].clone());
            continue;
        }
        for i in 0..m.nrows() {
            out[(i, j)] = (m[(i, j)] - mean) / sd;
        }
    }
    if !constant.is_empty() {
        return Err(Error::Violations(
            constant.iter().map(|n| format!("column '{n}' is constant")).collect(),
        ));
    }
    Ok(out)
}

/// Builds the standardized `Dataset` for one aggregated period.
pub fn standardize_dataset(period: &AggregatedPeriod, variant: ModelVariant) -> Result<Dataset> {
    let shares = compute_indicator_shares(&period.regions)?;
    let causes = build_cause_matrix(&period.regions, variant);
    let indicator_names: Vec<String> = INDICATOR_NAMES.iter().map(|s| s.to_string()).collect();
    let cause_names: Vec<String> = variant.cause_names().iter().map(|s| s.to_string()).collect();
    let y = standardize_columns(&shares, &indicator_names)?;
    let x = standardize_columns(&causes, &cause_names)?;
    let labels: Vec<String> = period.regions.iter().map(|r| r.region.clone()).collect();
    Dataset::new(labels, y, x, period.name.clone())
}

/// Raw per-region income levels of one period, for curve plotting on the
/// unstandardized axis.
pub fn raw_grp(period: &AggregatedPeriod) -> DVector<f64> {
    DVector::from_iterator(period.regions.len(), period.regions.iter().map(|r| r.causes[0]))
}
