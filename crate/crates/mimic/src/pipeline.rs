//! Orchestration behind the CLI subcommands: ingest, fit, score, compare,
//! curve estimation, simulation and recovery, each emitting CSV (and JSON)
//! artifacts into an output directory.
//!
//! All stages are deterministic functions of the config and input files;
//! artifact bytes are reproducible run over run.

use std::path::{Path, PathBuf};

use nalgebra::DVector;

use crate::config::{PipelineConfig, XScale};
use crate::diagnostics::{fit_indices, mardia_test, FitIndices, MardiaResult};
use crate::ekc::{cubic_trend_from_fit, loess_fit};
use crate::error::{Error, Result};
use crate::estimate::{fit_ml, FitResult};
use crate::ingest::{
    aggregate_periods, raw_grp, read_raw_csv, standardize_dataset, AggregatedPeriod, ModelVariant,
    INDICATOR_NAMES,
};
use crate::model::{Dataset, ModelSpec};
use crate::report;
use crate::score::{compare_periods, factor_scores, IndexTable};
use crate::sim::{recovery_study, simulate};
use crate::stats::linspace;

/// Standardized data for one named period plus the raw income levels kept
/// for plotting.
pub struct PeriodData {
    pub dataset: Dataset,
    pub raw_grp: DVector<f64>,
}

/// The model wiring for a cause-set variant.
pub fn build_model_spec(variant: ModelVariant) -> ModelSpec {
    ModelSpec::new(
        INDICATOR_NAMES.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
        variant.cause_names().iter().map(|s| s.to_string()).collect::<Vec<_>>(),
    )
    .expect("canonical wiring is valid")
}

/// Ingests the raw CSV and standardizes every configured period.
pub fn load_period_data(cfg: &PipelineConfig) -> Result<Vec<PeriodData>> {
    let input = cfg.input_required()?;
    let table = read_raw_csv(&cfg.resolve(&input.path))?;
    let periods = aggregate_periods(&table, &cfg.period_definitions())?;
    let variant = cfg.model.variant.to_model_variant();
    periods
        .iter()
        .map(|p: &AggregatedPeriod| {
            Ok(PeriodData { dataset: standardize_dataset(p, variant)?, raw_grp: raw_grp(p) })
        })
        .collect()
}

/// One period fitted end to end.
pub struct FittedPeriod {
    pub data: PeriodData,
    pub fit: FitResult,
    pub indices: FitIndices,
    pub mardia: MardiaResult,
}

/// Fits every period, failing on non-convergence.
pub fn fit_all_periods(cfg: &PipelineConfig) -> Result<(ModelSpec, Vec<FittedPeriod>)> {
    let spec = build_model_spec(cfg.model.variant.to_model_variant());
    let fit_config = cfg.fit.to_fit_config();
    let mut fitted = Vec::new();
    for data in load_period_data(cfg)? {
        let fit = fit_ml(&data.dataset, &spec, &fit_config)?;
        if !fit.converged {
            return Err(Error::Estimation(format!(
                "period '{}': no convergence after {} iterations (gradient norm {:.2e})",
                data.dataset.period_label(),
                fit.iterations,
                fit.gradient_norm
            )));
        }
        let indices = fit_indices(&data.dataset, &spec, &fit)?;
        let mardia = mardia_test(data.dataset.y())?;
        fitted.push(FittedPeriod { data, fit, indices, mardia });
    }
    Ok((spec, fitted))
}

fn index_table(spec: &ModelSpec, period: &FittedPeriod) -> Result<IndexTable> {
    let scores = factor_scores(&period.data.dataset, spec, &period.fit)?;
    IndexTable::from_raw_scores(
        period.data.dataset.unit_labels().to_vec(),
        scores,
        period.data.dataset.period_label(),
    )
}

/// `ingest`: write one standardized dataset CSV per period.
pub fn cmd_ingest(cfg: &PipelineConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let spec = build_model_spec(cfg.model.variant.to_model_variant());
    let mut written = Vec::new();
    for data in load_period_data(cfg)? {
        let path = report::artifact_path(out, &format!("dataset_{}", data.dataset.period_label()), ".csv");
        report::write_dataset_csv(&path, &data.dataset, &spec)?;
        written.push(path);
    }
    Ok(written)
}

/// `fit`: write a parameter-table CSV per period and one structured JSON
/// document covering all periods.
pub fn cmd_fit(cfg: &PipelineConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let (spec, fitted) = fit_all_periods(cfg)?;
    let mut written = Vec::new();
    let mut period_reports = Vec::new();
    for f in &fitted {
        let rep = report::build_period_report(&spec, &f.data.dataset, &f.fit, &f.indices, &f.mardia);
        let path = report::artifact_path(out, &format!("fit_report_{}", rep.period), ".csv");
        report::write_fit_report_csv(&path, &rep)?;
        written.push(path);
        period_reports.push(rep);
    }
    let doc = report::FitReportDocument {
        variant: format!("{:?}", cfg.model.variant),
        periods: period_reports,
    };
    let json_path = out.join("fit_report.json");
    report::write_fit_report_json(&json_path, &doc)?;
    written.push(json_path);
    Ok(written)
}

fn read_precomputed_scores(path: &Path) -> Result<Vec<IndexTable>> {
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(|s| s.to_string()).collect();
    if header != ["unit", "period", "index"] {
        return Err(Error::Violations(vec![format!(
            "precomputed score header must be unit,period,index; got {}",
            header.join(",")
        )]));
    }
    let mut order: Vec<String> = Vec::new();
    let mut by_period: std::collections::HashMap<String, (Vec<String>, Vec<f64>)> =
        std::collections::HashMap::new();
    for record in reader.records() {
        let record = record?;
        let unit = record.get(0).unwrap_or_default().to_string();
        let period = record.get(1).unwrap_or_default().to_string();
        let value: f64 = record
            .get(2)
            .unwrap_or_default()
            .parse()
            .map_err(|e| Error::Data(format!("unit '{unit}': bad index value: {e}")))?;
        if !by_period.contains_key(&period) {
            order.push(period.clone());
        }
        let entry = by_period.entry(period).or_default();
        entry.0.push(unit);
        entry.1.push(value);
    }
    order
        .into_iter()
        .map(|period| {
            let (labels, values) = by_period.remove(&period).expect("period collected");
            IndexTable::from_raw_scores(labels, DVector::from_vec(values), period)
        })
        .collect()
}

/// The per-period index tables, fitted or taken from a precomputed score
/// file when the config provides one.
pub fn score_tables(cfg: &PipelineConfig) -> Result<Vec<IndexTable>> {
    if let Some(pre) = &cfg.score.precomputed {
        return read_precomputed_scores(&cfg.resolve(pre));
    }
    let (spec, fitted) = fit_all_periods(cfg)?;
    fitted.iter().map(|f| index_table(&spec, f)).collect()
}

/// `score`: write one index CSV per period.
pub fn cmd_score(cfg: &PipelineConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for table in score_tables(cfg)? {
        let path = report::artifact_path(out, &format!("index_{}", table.period_label), ".csv");
        report::write_index_csv(&path, &table)?;
        written.push(path);
    }
    Ok(written)
}

/// `compare`: pair consecutive periods and write their joined rows and
/// correlation statistics.
pub fn cmd_compare(cfg: &PipelineConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let tables = score_tables(cfg)?;
    if tables.len() < 2 {
        return Err(Error::Config(format!(
            "comparison needs at least two periods, got {}",
            tables.len()
        )));
    }
    let mut written = Vec::new();
    for pair in tables.windows(2) {
        let cmp = compare_periods(&pair[0], &pair[1])?;
        let stem = format!("compare_{}_vs_{}", cmp.period_a, cmp.period_b);
        let path = report::artifact_path(out, &stem, ".csv");
        report::write_compare_csv(&path, &cmp)?;
        written.push(path);
        let stats_path = report::artifact_path(out, &format!("{stem}_stats"), ".csv");
        report::write_compare_stats_csv(&stats_path, &cmp)?;
        written.push(stats_path);
    }
    Ok(written)
}

/// `ekc`: per period, the smoothed index-vs-income curve with its band and
/// the model-implied cubic trend on the standardized income grid.
pub fn cmd_ekc(cfg: &PipelineConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let (spec, fitted) = fit_all_periods(cfg)?;
    let grp_col = spec
        .cause_names()
        .iter()
        .position(|n| n == "grp_pc")
        .expect("income cause present in both variants");
    let loess_config = cfg.loess.to_loess_config();
    let mut written = Vec::new();
    for f in &fitted {
        let table = index_table(&spec, f)?;
        let x = match cfg.loess.x_scale {
            XScale::Raw => f.data.raw_grp.clone(),
            XScale::Standardized => f.data.dataset.x().column(grp_col).into_owned(),
        };
        let curve = loess_fit(&x, &table.scaled_index, &loess_config)?;
        let period = f.data.dataset.period_label();
        let path = report::artifact_path(out, &format!("ekc_curve_{period}"), ".csv");
        report::write_curve_csv(&path, &curve)?;
        written.push(path);

        let z = f.data.dataset.x().column(grp_col);
        let grid = DVector::from_vec(linspace(z.min(), z.max(), loess_config.grid_size));
        let trend = cubic_trend_from_fit(&f.fit, &spec, &grid)?;
        let trend_path = report::artifact_path(out, &format!("ekc_trend_{period}"), ".csv");
        report::write_trend_csv(&trend_path, &grid, &trend)?;
        written.push(trend_path);
    }
    Ok(written)
}

/// `simulate`: one synthetic dataset plus its true latent scores.
pub fn cmd_simulate(cfg: &PipelineConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let sim_cfg = cfg.sim_required()?.to_sim_config()?;
    let sim = simulate(&sim_cfg)?;
    let data_path = out.join("sim_data.csv");
    report::write_dataset_csv(&data_path, &sim.dataset, &sim_cfg.spec)?;
    let latent_path = out.join("sim_latent.csv");
    report::write_latent_csv(&latent_path, sim.dataset.unit_labels(), &sim.latent)?;
    Ok(vec![data_path, latent_path])
}

/// `recover`: Monte Carlo recovery study of the `[sim]` process.
pub fn cmd_recover(cfg: &PipelineConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let settings = cfg.sim_required()?;
    let sim_cfg = settings.to_sim_config()?;
    let report_data = recovery_study(&sim_cfg, settings.replications)?;
    let csv_path = out.join("recovery.csv");
    report::write_recovery_csv(&csv_path, &report_data)?;
    let summary_path = out.join("recovery_summary.txt");
    report::write_recovery_summary(&summary_path, &report_data)?;
    Ok(vec![csv_path, summary_path])
}

/// The full pipeline: ingest, fit, score, consecutive-period comparisons and
/// curve estimation, sharing one fit per period.
pub fn run_pipeline(cfg: &PipelineConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let (spec, fitted) = fit_all_periods(cfg)?;
    let loess_config = cfg.loess.to_loess_config();
    let grp_col = spec
        .cause_names()
        .iter()
        .position(|n| n == "grp_pc")
        .expect("income cause present in both variants");

    let mut written = Vec::new();
    let mut period_reports = Vec::new();
    let mut tables = Vec::new();
    for f in &fitted {
        let period = f.data.dataset.period_label().to_string();

        let data_path = report::artifact_path(out, &format!("dataset_{period}"), ".csv");
        report::write_dataset_csv(&data_path, &f.data.dataset, &spec)?;
        written.push(data_path);

        let rep = report::build_period_report(&spec, &f.data.dataset, &f.fit, &f.indices, &f.mardia);
        let fit_path = report::artifact_path(out, &format!("fit_report_{period}"), ".csv");
        report::write_fit_report_csv(&fit_path, &rep)?;
        written.push(fit_path);
        period_reports.push(rep);

        let table = index_table(&spec, f)?;
        let index_path = report::artifact_path(out, &format!("index_{period}"), ".csv");
        report::write_index_csv(&index_path, &table)?;
        written.push(index_path);

        let x = match cfg.loess.x_scale {
            XScale::Raw => f.data.raw_grp.clone(),
            XScale::Standardized => f.data.dataset.x().column(grp_col).into_owned(),
        };
        let curve = loess_fit(&x, &table.scaled_index, &loess_config)?;
        let curve_path = report::artifact_path(out, &format!("ekc_curve_{period}"), ".csv");
        report::write_curve_csv(&curve_path, &curve)?;
        written.push(curve_path);

        let z = f.data.dataset.x().column(grp_col);
        let grid = DVector::from_vec(linspace(z.min(), z.max(), loess_config.grid_size));
        let trend = cubic_trend_from_fit(&f.fit, &spec, &grid)?;
        let trend_path = report::artifact_path(out, &format!("ekc_trend_{period}"), ".csv");
        report::write_trend_csv(&trend_path, &grid, &trend)?;
        written.push(trend_path);

        tables.push(table);
    }

    let json_path = out.join("fit_report.json");
    report::write_fit_report_json(
        &json_path,
        &report::FitReportDocument {
            variant: format!("{:?}", cfg.model.variant),
            periods: period_reports,
        },
    )?;
    written.push(json_path);

    for pair in tables.windows(2) {
        let cmp = compare_periods(&pair[0], &pair[1])?;
        let stem = format!("compare_{}_vs_{}", cmp.period_a, cmp.period_b);
        let path = report::artifact_path(out, &stem, ".csv");
        report::write_compare_csv(&path, &cmp)?;
        written.push(path);
        let stats_path = report::artifact_path(out, &format!("{stem}_stats"), ".csv");
        report::write_compare_stats_csv(&stats_path, &cmp)?;
        written.push(stats_path);
    }
    Ok(written)
}
