//! Artifact writers: deterministic CSV and JSON emission.
//!
//! Every float is rendered with `format_significant(_, 6)` — six significant
//! digits, trailing zeros trimmed, exponent notation outside `1e-4..1e6` —
//! so a pipeline run is byte-reproducible.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::diagnostics::{FitIndices, MardiaResult};
use crate::ekc::CurveEstimate;
use crate::error::Result;
use crate::estimate::{FitResult, Stars};
use crate::model::{Dataset, ModelSpec};
use crate::score::{IndexTable, PeriodComparison};
use crate::sim::RecoveryReport;

/// Formats with `digits` significant digits, trimming trailing zeros.
///
/// Equivalent in spirit to C's `%.6g`: plain decimal while the exponent is
/// in `[-4, digits)`, otherwise `<mantissa>e<exp>`.
pub fn format_significant(x: f64, digits: usize) -> String {
    assert!(digits >= 1);
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    // One rounding step: take mantissa digits and exponent from the
    // exponential rendering, then re-place the point as a string operation.
    let exp_str = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = exp_str.split_once('e').expect("exponential format");
    let exp: i32 = exp.parse().expect("integer exponent");
    let neg = mantissa.starts_with('-');
    let digits_only: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();

    let body = if exp >= -4 && exp < digits as i32 {
        let mut s = String::new();
        if exp < 0 {
            s.push_str("0.");
            for _ in 0..(-exp - 1) {
                s.push('0');
            }
            s.push_str(&digits_only);
        } else {
            let point = (exp + 1) as usize;
            s.push_str(&digits_only[..point.min(digits_only.len())]);
            if point < digits_only.len() {
                s.push('.');
                s.push_str(&digits_only[point..]);
            }
        }
        let trimmed = if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        };
        trimmed
    } else {
        let m = digits_only.trim_end_matches('0');
        let m = if m.is_empty() { "0" } else { m };
        if m.len() == 1 {
            format!("{m}e{exp}")
        } else {
            format!("{}.{}e{exp}", &m[..1], &m[1..])
        }
    };
    if neg {
        format!("-{body}")
    } else {
        body
    }
}

fn fmt(x: f64) -> String {
    format_significant(x, 6)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt).unwrap_or_default()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    Ok(csv::Writer::from_writer(File::create(path)?))
}

/// Standardized per-period dataset (`ingest` output).
pub fn write_dataset_csv(path: &Path, dataset: &Dataset, spec: &ModelSpec) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["unit".to_string(), "period".to_string()];
    header.extend(spec.indicator_names().iter().cloned());
    header.extend(spec.cause_names().iter().cloned());
    w.write_record(&header)?;
    for (i, label) in dataset.unit_labels().iter().enumerate() {
        let mut rec = vec![label.clone(), dataset.period_label().to_string()];
        for j in 0..dataset.p() {
            rec.push(fmt(dataset.y()[(i, j)]));
        }
        for j in 0..dataset.k() {
            rec.push(fmt(dataset.x()[(i, j)]));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// One parameter row of the fit report, in display order.
#[derive(Debug, Clone, Serialize)]
pub struct ReportRow {
    pub section: String,
    pub name: String,
    pub estimate: f64,
    /// Loading renormalized to the sum-to-one scale (lambda rows only).
    pub standardized: Option<f64>,
    pub se_naive: Option<f64>,
    pub se_mlm: Option<f64>,
    pub se_mlr: Option<f64>,
    pub stars: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct IndicesReport {
    pub aic: f64,
    pub bic: f64,
    pub cfi: f64,
    pub rmsea: f64,
    pub srmr: f64,
    pub chisq_model: f64,
    pub df_model: usize,
    pub chisq_baseline: f64,
    pub df_baseline: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub loglik: f64,
    pub hessian_singular: bool,
    pub heywood: bool,
    pub mlm_scaling: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MardiaReport {
    pub skewness_stat: f64,
    pub skewness_pvalue: f64,
    pub kurtosis_stat: f64,
    pub kurtosis_pvalue: f64,
    pub rejected: bool,
}

/// Everything reported about one fitted period.
#[derive(Debug, Clone, Serialize)]
pub struct PeriodFitReport {
    pub period: String,
    pub n_observations: usize,
    pub rows: Vec<ReportRow>,
    pub fit_indices: IndicesReport,
    pub convergence: ConvergenceReport,
    pub normality: MardiaReport,
}

/// The structured fit report covering all periods, in period order.
#[derive(Debug, Clone, Serialize)]
pub struct FitReportDocument {
    pub variant: String,
    pub periods: Vec<PeriodFitReport>,
}

/// Assembles the report rows in display order: all loadings (fixed one
/// included, without standard errors), then the structural coefficients,
/// error SDs and the structural error SD.
pub fn build_period_report(
    spec: &ModelSpec,
    dataset: &Dataset,
    fit: &FitResult,
    indices: &FitIndices,
    mardia: &MardiaResult,
) -> PeriodFitReport {
    let p = spec.p();
    let k = spec.k();
    let fixed = spec.fixed_loading_index();
    let se = |set: &Option<nalgebra::DVector<f64>>, idx: usize| set.as_ref().map(|v| v[idx]);
    let lambda_sum: f64 = fit.params.lambda.iter().sum();

    let mut rows = Vec::new();
    let mut free_pos = 0;
    for i in 0..p {
        let standardized = fit
            .params_standardized
            .as_ref()
            .map(|s| s.lambda[i])
            .or(if lambda_sum != 0.0 { Some(fit.params.lambda[i] / lambda_sum) } else { None });
        if i == fixed {
            rows.push(ReportRow {
                section: "lambda".into(),
                name: spec.indicator_names()[i].clone(),
                estimate: fit.params.lambda[i],
                standardized,
                se_naive: None,
                se_mlm: None,
                se_mlr: None,
                stars: String::new(),
            });
        } else {
            rows.push(ReportRow {
                section: "lambda".into(),
                name: spec.indicator_names()[i].clone(),
                estimate: fit.params.lambda[i],
                standardized,
                se_naive: se(&fit.se_naive, free_pos),
                se_mlm: se(&fit.se_mlm, free_pos),
                se_mlr: se(&fit.se_mlr, free_pos),
                stars: fit
                    .significance
                    .get(free_pos)
                    .copied()
                    .unwrap_or(Stars::None)
                    .as_str()
                    .to_string(),
            });
            free_pos += 1;
        }
    }
    for j in 0..k {
        let idx = (p - 1) + j;
        rows.push(ReportRow {
            section: "beta".into(),
            name: spec.cause_names()[j].clone(),
            estimate: fit.params.beta[j],
            standardized: None,
            se_naive: se(&fit.se_naive, idx),
            se_mlm: se(&fit.se_mlm, idx),
            se_mlr: se(&fit.se_mlr, idx),
            stars: fit.significance.get(idx).copied().unwrap_or(Stars::None).as_str().to_string(),
        });
    }
    for i in 0..p {
        let idx = (p - 1) + k + i;
        rows.push(ReportRow {
            section: "theta".into(),
            name: spec.indicator_names()[i].clone(),
            estimate: fit.params.theta[i],
            standardized: None,
            se_naive: se(&fit.se_naive, idx),
            se_mlm: se(&fit.se_mlm, idx),
            se_mlr: se(&fit.se_mlr, idx),
            stars: fit.significance.get(idx).copied().unwrap_or(Stars::None).as_str().to_string(),
        });
    }
    let idx = 2 * p + k - 1;
    rows.push(ReportRow {
        section: "sigma".into(),
        name: "sigma".into(),
        estimate: fit.params.sigma,
        standardized: None,
        se_naive: se(&fit.se_naive, idx),
        se_mlm: se(&fit.se_mlm, idx),
        se_mlr: se(&fit.se_mlr, idx),
        stars: fit.significance.get(idx).copied().unwrap_or(Stars::None).as_str().to_string(),
    });

    PeriodFitReport {
        period: dataset.period_label().to_string(),
        n_observations: dataset.n(),
        rows,
        fit_indices: IndicesReport {
            aic: indices.aic,
            bic: indices.bic,
            cfi: indices.cfi,
            rmsea: indices.rmsea,
            srmr: indices.srmr,
            chisq_model: indices.chisq_model,
            df_model: indices.df_model,
            chisq_baseline: indices.chisq_baseline,
            df_baseline: indices.df_baseline,
        },
        convergence: ConvergenceReport {
            converged: fit.converged,
            iterations: fit.iterations,
            gradient_norm: fit.gradient_norm,
            loglik: fit.loglik,
            hessian_singular: fit.hessian_singular,
            heywood: fit.heywood,
            mlm_scaling: fit.mlm_scaling,
        },
        normality: MardiaReport {
            skewness_stat: mardia.skewness_stat,
            skewness_pvalue: mardia.skewness_pvalue,
            kurtosis_stat: mardia.kurtosis_stat,
            kurtosis_pvalue: mardia.kurtosis_pvalue,
            rejected: mardia.rejected,
        },
    }
}

/// Parameter-table CSV for one period: the parameter rows in display order,
/// then summary rows (fit indices, convergence, normality test).
pub fn write_fit_report_csv(path: &Path, report: &PeriodFitReport) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "section",
        "name",
        "estimate",
        "standardized",
        "se_naive",
        "se_mlm",
        "se_mlr",
        "stars",
    ])?;
    for row in &report.rows {
        w.write_record([
            row.section.as_str(),
            row.name.as_str(),
            &fmt(row.estimate),
            &fmt_opt(row.standardized),
            &fmt_opt(row.se_naive),
            &fmt_opt(row.se_mlm),
            &fmt_opt(row.se_mlr),
            row.stars.as_str(),
        ])?;
    }
    let mut summary = |name: &str, value: String| -> Result<()> {
        w.write_record(["summary", name, &value, "", "", "", "", ""])?;
        Ok(())
    };
    summary("n_observations", report.n_observations.to_string())?;
    summary("loglik", fmt(report.convergence.loglik))?;
    summary("aic", fmt(report.fit_indices.aic))?;
    summary("bic", fmt(report.fit_indices.bic))?;
    summary("cfi", fmt(report.fit_indices.cfi))?;
    summary("rmsea", fmt(report.fit_indices.rmsea))?;
    summary("srmr", fmt(report.fit_indices.srmr))?;
    summary("chisq_model", fmt(report.fit_indices.chisq_model))?;
    summary("df_model", report.fit_indices.df_model.to_string())?;
    summary("converged", u8::from(report.convergence.converged).to_string())?;
    summary("iterations", report.convergence.iterations.to_string())?;
    summary("mardia_skewness_pvalue", fmt(report.normality.skewness_pvalue))?;
    summary("mardia_kurtosis_pvalue", fmt(report.normality.kurtosis_pvalue))?;
    w.flush()?;
    Ok(())
}

/// Structured mirror of the full fit report (all periods).
pub fn write_fit_report_json(path: &Path, doc: &FitReportDocument) -> Result<()> {
    let mut f = File::create(path)?;
    serde_json::to_writer_pretty(&mut f, doc)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Index table CSV: `unit,period,raw_score,index,rank`.
pub fn write_index_csv(path: &Path, table: &IndexTable) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["unit", "period", "raw_score", "index", "rank"])?;
    // Rows in rank order for readability.
    let mut order: Vec<usize> = (0..table.unit_labels.len()).collect();
    order.sort_by_key(|&i| table.rank[i]);
    for i in order {
        w.write_record([
            table.unit_labels[i].as_str(),
            &table.period_label,
            &fmt(table.raw_score[i]),
            &fmt(table.scaled_index[i]),
            &table.rank[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Paired two-period rows: `unit,index_a,rank_a,index_b,rank_b`.
pub fn write_compare_csv(path: &Path, cmp: &PeriodComparison) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["unit", "index_a", "rank_a", "index_b", "rank_b"])?;
    for i in 0..cmp.unit_labels.len() {
        w.write_record([
            cmp.unit_labels[i].as_str(),
            &fmt(cmp.index_a[i]),
            &cmp.rank_a[i].to_string(),
            &fmt(cmp.index_b[i]),
            &cmp.rank_b[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Comparison statistics: period names and the two correlations.
pub fn write_compare_stats_csv(path: &Path, cmp: &PeriodComparison) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["stat", "value"])?;
    w.write_record(["period_a", cmp.period_a.as_str()])?;
    w.write_record(["period_b", cmp.period_b.as_str()])?;
    w.write_record(["pearson", &fmt(cmp.pearson)])?;
    w.write_record(["spearman", &fmt(cmp.spearman)])?;
    w.flush()?;
    Ok(())
}

/// Loess curve CSV: `grp,fitted,lo,hi`.
pub fn write_curve_csv(path: &Path, curve: &CurveEstimate) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["grp", "fitted", "lo", "hi"])?;
    for i in 0..curve.grid.len() {
        w.write_record([
            fmt(curve.grid[i]),
            fmt(curve.fitted[i]),
            fmt(curve.ci_lower[i]),
            fmt(curve.ci_upper[i]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Cubic income-trend CSV: `grp,trend` (standardized income grid).
pub fn write_trend_csv(path: &Path, grid: &nalgebra::DVector<f64>, trend: &nalgebra::DVector<f64>) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["grp", "trend"])?;
    for i in 0..grid.len() {
        w.write_record([fmt(grid[i]), fmt(trend[i])])?;
    }
    w.flush()?;
    Ok(())
}

/// True latent scores alongside a simulated dataset.
pub fn write_latent_csv(path: &Path, labels: &[String], latent: &nalgebra::DVector<f64>) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["unit", "eta_true"])?;
    for (i, l) in labels.iter().enumerate() {
        w.write_record([l.as_str(), &fmt(latent[i])])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-parameter recovery table CSV.
pub fn write_recovery_csv(path: &Path, report: &RecoveryReport) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "parameter",
        "truth",
        "mean_estimate",
        "bias",
        "empirical_sd",
        "mean_se_naive",
        "mean_se_mlm",
        "mean_se_mlr",
        "coverage_naive",
        "coverage_mlm",
        "coverage_mlr",
    ])?;
    for p in &report.parameters {
        w.write_record([
            p.name.as_str(),
            &fmt(p.truth),
            &fmt(p.mean_estimate),
            &fmt(p.bias),
            &fmt(p.empirical_sd),
            &fmt_opt(p.mean_se_naive),
            &fmt_opt(p.mean_se_mlm),
            &fmt_opt(p.mean_se_mlr),
            &fmt_opt(p.coverage_naive),
            &fmt_opt(p.coverage_mlm),
            &fmt_opt(p.coverage_mlr),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Human-readable recovery summary.
pub fn write_recovery_summary(path: &Path, report: &RecoveryReport) -> Result<()> {
    let mut f = File::create(path)?;
    writeln!(
        f,
        "recovery study: {} replications, {} succeeded, {} failed",
        report.replications,
        report.successes,
        report.failures.len()
    )?;
    writeln!(f)?;
    writeln!(
        f,
        "{:<24} {:>8} {:>9} {:>8} {:>8} {:>9} {:>9} {:>9}",
        "parameter", "truth", "mean_est", "bias", "emp_sd", "cov_naive", "cov_mlm", "cov_mlr"
    )?;
    for p in &report.parameters {
        writeln!(
            f,
            "{:<24} {:>8} {:>9} {:>8} {:>8} {:>9} {:>9} {:>9}",
            p.name,
            fmt(p.truth),
            fmt(p.mean_estimate),
            fmt(p.bias),
            fmt(p.empirical_sd),
            fmt_opt(p.coverage_naive),
            fmt_opt(p.coverage_mlm),
            fmt_opt(p.coverage_mlr),
        )?;
    }
    if !report.failures.is_empty() {
        writeln!(f)?;
        writeln!(f, "failed replications:")?;
        for (rep, msg) in &report.failures {
            writeln!(f, "  {rep}: {msg}")?;
        }
    }
    Ok(())
}

/// Joins an output directory with a sanitized file name component.
pub fn artifact_path(out_dir: &Path, stem: &str, suffix: &str) -> PathBuf {
    let safe: String = stem
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    out_dir.join(format!("{safe}{suffix}"))
}
