//! Latent-index scores, scaling, rankings and cross-period comparison.
//!
//! The per-unit score is the conditional expectation of the latent variable
//! given that unit's indicators and causes,
//!
//! ```text
//! score_n = beta' x_n + sigma^2 lambda' Omega^-1 (y_n - lambda beta' x_n),
//! ```
//!
//! the Bayes-optimal point score under the model's own normality
//! assumptions (the "regression method"). For presentation the scores are
//! standardized per period (population SD) and multiplied by 100, and units
//! are ranked with rank 1 for the largest index; exact ties are broken by
//! unit label so the ranking is a deterministic function of the
//! (label, index) pairs alone.

use std::collections::{BTreeSet, HashMap};

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::estimate::FitResult;
use crate::model::{Dataset, ModelSpec};
use crate::stats;

/// Scores, scaled index and ranks for every unit in one period.
#[derive(Debug, Clone)]
pub struct IndexTable {
    pub unit_labels: Vec<String>,
    /// Scores on the latent scale.
    pub raw_score: DVector<f64>,
    /// `100 * (raw - mean) / sd`, population SD.
    pub scaled_index: DVector<f64>,
    /// Rank per unit, 1 = largest index.
    pub rank: Vec<usize>,
    pub period_label: String,
}

impl IndexTable {
    /// Scales the raw scores and ranks the units.
    pub fn from_raw_scores(
        unit_labels: Vec<String>,
        raw_score: DVector<f64>,
        period_label: impl Into<String>,
    ) -> Result<Self> {
        if unit_labels.len() != raw_score.len() {
            return Err(Error::Dimension(format!(
                "{} labels but {} scores",
                unit_labels.len(),
                raw_score.len()
            )));
        }
        if raw_score.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite score".into()));
        }
        let scaled_index = scale_index(&raw_score)?;
        let rank = rank_units(&unit_labels, &scaled_index);
        Ok(Self {
            unit_labels,
            raw_score,
            scaled_index,
            rank,
            period_label: period_label.into(),
        })
    }
}

/// Conditional-expectation factor scores under the fitted parameters.
///
/// Evaluated through the Sherman-Morrison form of `Omega^-1`, which is exact
/// for `Omega = sigma^2 lambda lambda' + Theta^2` and stays stable when an
/// indicator error SD is tiny.
pub fn factor_scores(dataset: &Dataset, spec: &ModelSpec, fit: &FitResult) -> Result<DVector<f64>> {
    let params = &fit.params;
    params.check_dims(spec)?;
    params.require_positive_theta()?;
    if dataset.p() != spec.p() || dataset.k() != spec.k() {
        return Err(Error::Dimension("dataset does not match the spec".into()));
    }

    // sigma^2 lambda' Omega^-1 = sigma^2 lambda' Theta^-2 / (1 + sigma^2 lambda' Theta^-2 lambda)
    let s2 = params.sigma * params.sigma;
    let t = DVector::from_fn(spec.p(), |i, _| {
        params.lambda[i] / (params.theta[i] * params.theta[i])
    });
    let denom = 1.0 + s2 * params.lambda.dot(&t);
    let weights = &t * (s2 / denom);

    let eta_hat = dataset.x() * &params.beta;
    let mut scores = eta_hat.clone();
    for n in 0..dataset.n() {
        let mut corr = 0.0;
        for i in 0..spec.p() {
            corr += weights[i] * (dataset.y()[(n, i)] - params.lambda[i] * eta_hat[n]);
        }
        scores[n] += corr;
    }
    Ok(scores)
}

/// Standardizes a score vector to mean 0, SD 100 (population SD).
pub fn scale_index(raw: &DVector<f64>) -> Result<DVector<f64>> {
    let vals: Vec<f64> = raw.iter().copied().collect();
    let m = stats::mean(&vals);
    let sd = stats::sd_population(&vals);
    if !(sd > 0.0) {
        return Err(Error::Data("scores have zero variance; index undefined".into()));
    }
    Ok(DVector::from_iterator(raw.len(), raw.iter().map(|v| 100.0 * (v - m) / sd)))
}

/// Ranks units by descending index; rank 1 is the largest value and exact
/// ties are ordered by unit label.
pub fn rank_units(unit_labels: &[String], scaled_index: &DVector<f64>) -> Vec<usize> {
    let n = unit_labels.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        scaled_index[b]
            .partial_cmp(&scaled_index[a])
            .expect("non-finite index")
            .then_with(|| unit_labels[a].cmp(&unit_labels[b]))
    });
    let mut rank = vec![0; n];
    for (r, &idx) in order.iter().enumerate() {
        rank[idx] = r + 1;
    }
    rank
}

/// Paired indices and ranks of two periods, with their correlations.
#[derive(Debug, Clone)]
pub struct PeriodComparison {
    pub period_a: String,
    pub period_b: String,
    /// Units ordered by period-a rank.
    pub unit_labels: Vec<String>,
    pub index_a: Vec<f64>,
    pub index_b: Vec<f64>,
    pub rank_a: Vec<usize>,
    pub rank_b: Vec<usize>,
    pub pearson: f64,
    pub spearman: f64,
}

/// Pairs two periods' index tables unit by unit.
///
/// The unit-label sets must agree; a mismatch lists the symmetric
/// difference. Spearman is the Pearson correlation of midranks, so tied
/// indices are handled the standard way.
pub fn compare_periods(a: &IndexTable, b: &IndexTable) -> Result<PeriodComparison> {
    let set_a: BTreeSet<&str> = a.unit_labels.iter().map(|s| s.as_str()).collect();
    let set_b: BTreeSet<&str> = b.unit_labels.iter().map(|s| s.as_str()).collect();
    if set_a != set_b {
        let mut diff: Vec<&str> = set_a.symmetric_difference(&set_b).copied().collect();
        diff.sort_unstable();
        return Err(Error::Data(format!(
            "unit labels differ between periods: {}",
            diff.join(", ")
        )));
    }

    let pos_b: HashMap<&str, usize> = b
        .unit_labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();

    let mut order: Vec<usize> = (0..a.unit_labels.len()).collect();
    order.sort_by_key(|&i| a.rank[i]);

    let mut unit_labels = Vec::with_capacity(order.len());
    let mut index_a = Vec::with_capacity(order.len());
    let mut index_b = Vec::with_capacity(order.len());
    let mut rank_a = Vec::with_capacity(order.len());
    let mut rank_b = Vec::with_capacity(order.len());
    for &i in &order {
        let j = pos_b[a.unit_labels[i].as_str()];
        unit_labels.push(a.unit_labels[i].clone());
        index_a.push(a.scaled_index[i]);
        index_b.push(b.scaled_index[j]);
        rank_a.push(a.rank[i]);
        rank_b.push(b.rank[j]);
    }

    let pearson = stats::pearson(&index_a, &index_b);
    let spearman = stats::spearman(&index_a, &index_b);
    Ok(PeriodComparison {
        period_a: a.period_label.clone(),
        period_b: b.period_label.clone(),
        unit_labels,
        index_a,
        index_b,
        rank_a,
        rank_b,
        pearson,
        spearman,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::{fit_ml, FitConfig};
    use crate::model::ParameterSet;
    use crate::sim::{simulate, NoiseDistribution, SimConfig};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn spec_pk(p: usize, k: usize) -> ModelSpec {
        ModelSpec::new(
            (0..p).map(|i| format!("y{i}")).collect(),
            (0..k).map(|i| format!("x{i}")).collect(),
        )
        .unwrap()
    }

    fn params(lambda: &[f64], beta: &[f64], theta: &[f64], sigma: f64) -> ParameterSet {
        ParameterSet::new(lambda.to_vec(), beta.to_vec(), theta.to_vec(), sigma).unwrap()
    }

    fn fit_with_params(ps: ParameterSet) -> FitResult {
        FitResult {
            params: ps,
            params_standardized: None,
            loglik: 0.0,
            se_naive: None,
            se_mlm: None,
            se_mlr: None,
            mlm_scaling: None,
            significance: Vec::new(),
            converged: true,
            iterations: 0,
            gradient_norm: 0.0,
            hessian_singular: false,
            heywood: false,
        }
    }

    fn small_dataset(seed: u64) -> Dataset {
        let spec = spec_pk(2, 1);
        let ps = params(&[1.0, 0.7], &[0.5], &[0.9, 1.1], 0.6);
        let cfg = SimConfig::new(spec, ps, 4, NoiseDistribution::Normal, seed).unwrap();
        simulate(&cfg).unwrap().dataset
    }

    #[test]
    fn zero_sigma_scores_are_the_structural_prediction() {
        let spec = spec_pk(2, 1);
        let ps = params(&[1.0, 0.7], &[0.5], &[0.9, 1.1], 0.0);
        let ds = small_dataset(2);
        let scores = factor_scores(&ds, &spec, &fit_with_params(ps.clone())).unwrap();
        let expected = ds.x() * &ps.beta;
        assert!((scores - expected).amax() < 1e-14);
    }

    #[test]
    fn noiseless_fixed_indicator_pins_the_score() {
        // theta_1 -> 0: the fixed indicator is observed without error, so the
        // score collapses to y_1.
        let spec = spec_pk(2, 1);
        let ps = params(&[1.0, 0.7], &[0.5], &[1e-6, 1.1], 0.6);
        let ds = small_dataset(3);
        let scores = factor_scores(&ds, &spec, &fit_with_params(ps)).unwrap();
        for n in 0..ds.n() {
            assert!(
                (scores[n] - ds.y()[(n, 0)]).abs() < 1e-3,
                "unit {n}: score {} vs y1 {}",
                scores[n],
                ds.y()[(n, 0)]
            );
        }
    }

    #[test]
    fn scores_match_joint_normal_partitioning_oracle() {
        // Oracle: build the (1 + p) x (1 + p) covariance of (eta, y) given x,
        // partition it and condition, inverting the 2x2 block by adjugate.
        let spec = spec_pk(2, 1);
        let ps = params(&[1.0, 0.7], &[0.5], &[0.9, 1.1], 0.6);
        let ds = small_dataset(4);
        let scores = factor_scores(&ds, &spec, &fit_with_params(ps.clone())).unwrap();

        let s2 = ps.sigma * ps.sigma;
        // Joint covariance: Var(eta) = s2, Cov(eta, y) = s2 lambda',
        // Var(y) = s2 lambda lambda' + Theta^2.
        let c_eta_y = [s2 * ps.lambda[0], s2 * ps.lambda[1]];
        let o11 = s2 * ps.lambda[0] * ps.lambda[0] + ps.theta[0] * ps.theta[0];
        let o12 = s2 * ps.lambda[0] * ps.lambda[1];
        let o22 = s2 * ps.lambda[1] * ps.lambda[1] + ps.theta[1] * ps.theta[1];
        let det = o11 * o22 - o12 * o12;
        let (i11, i12, i22) = (o22 / det, -o12 / det, o11 / det);
        for n in 0..ds.n() {
            let mu_eta = ps.beta[0] * ds.x()[(n, 0)];
            let r1 = ds.y()[(n, 0)] - ps.lambda[0] * mu_eta;
            let r2 = ds.y()[(n, 1)] - ps.lambda[1] * mu_eta;
            let oracle = mu_eta
                + c_eta_y[0] * (i11 * r1 + i12 * r2)
                + c_eta_y[1] * (i12 * r1 + i22 * r2);
            assert_relative_eq!(scores[n], oracle, epsilon = 1e-10);
        }
    }

    #[test]
    fn scores_are_location_correct_in_large_samples() {
        let spec = spec_pk(3, 2);
        let ps = params(&[1.0, 0.8, 1.2], &[0.5, -0.4], &[0.8, 0.9, 0.7], 0.6);
        let cfg = SimConfig::new(spec.clone(), ps.clone(), 4000, NoiseDistribution::Normal, 10).unwrap();
        let out = simulate(&cfg).unwrap();
        let fit = fit_ml(&out.dataset, &spec, &FitConfig::default()).unwrap();
        let scores = factor_scores(&out.dataset, &spec, &fit).unwrap();
        let sv: Vec<f64> = scores.iter().copied().collect();
        let xb = out.dataset.x() * &ps.beta;
        let xbv: Vec<f64> = xb.iter().copied().collect();
        // Var(eta) ~ |beta|^2 + sigma^2; 3 Monte Carlo SEs of the mean.
        let tol = 3.0 * (ps.beta.norm_squared() + ps.sigma * ps.sigma).sqrt() / (4000f64).sqrt();
        assert!((crate::stats::mean(&sv) - crate::stats::mean(&xbv)).abs() < tol);
    }

    #[test]
    fn scale_index_fixture() {
        let raw = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let scaled = scale_index(&raw).unwrap();
        assert_relative_eq!(scaled[0], -122.47448713915891, epsilon = 1e-8);
        assert_relative_eq!(scaled[1], 0.0, epsilon = 1e-12);
        assert_relative_eq!(scaled[2], 122.47448713915891, epsilon = 1e-8);
    }

    #[test]
    fn scale_index_affine_invariance_and_errors() {
        let raw = DVector::from_vec(vec![0.4, -1.2, 2.2, 0.9]);
        let transformed = raw.map(|v| 3.5 * v + 7.0);
        let a = scale_index(&raw).unwrap();
        let b = scale_index(&transformed).unwrap();
        assert!((a - b).amax() < 1e-10);
        assert!(scale_index(&DVector::from_element(5, 2.0)).is_err());
    }

    #[test]
    fn index_table_is_standardized() {
        let labels: Vec<String> = (0..7).map(|i| format!("u{i}")).collect();
        let raw = DVector::from_vec(vec![5.0, -2.0, 0.3, 9.9, 1.2, -4.4, 2.2]);
        let table = IndexTable::from_raw_scores(labels, raw, "t").unwrap();
        let vals: Vec<f64> = table.scaled_index.iter().copied().collect();
        assert!(crate::stats::mean(&vals).abs() < 1e-8);
        assert!((crate::stats::sd_population(&vals) - 100.0).abs() < 1e-6);
        let mut sorted_ranks = table.rank.clone();
        sorted_ranks.sort_unstable();
        assert_eq!(sorted_ranks, (1..=7).collect::<Vec<_>>());
    }

    #[test]
    fn equal_indices_rank_alphabetically() {
        let labels: Vec<String> = ["delta", "alpha", "charlie", "bravo"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let idx = DVector::from_element(4, 1.0);
        let rank = rank_units(&labels, &idx);
        assert_eq!(rank, vec![4, 1, 3, 2]);
    }

    #[test]
    fn ranking_ignores_input_order() {
        let labels: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let idx = DVector::from_vec(vec![0.5, -1.0, 2.0, 0.5]);
        let rank = rank_units(&labels, &idx);

        let rev_labels: Vec<String> = labels.iter().rev().cloned().collect();
        let rev_idx = DVector::from_vec(vec![0.5, 2.0, -1.0, 0.5]);
        let rev_rank = rank_units(&rev_labels, &rev_idx);

        let map: HashMap<&str, usize> =
            labels.iter().map(|l| l.as_str()).zip(rank.iter().copied()).collect();
        let rev_map: HashMap<&str, usize> =
            rev_labels.iter().map(|l| l.as_str()).zip(rev_rank.iter().copied()).collect();
        assert_eq!(map, rev_map);
    }

    #[test]
    fn comparison_identity_and_reversal() {
        let labels: Vec<String> = (0..6).map(|i| format!("u{i}")).collect();
        let raw = DVector::from_vec(vec![3.0, -1.0, 0.5, 2.2, -0.7, 1.1]);
        let a = IndexTable::from_raw_scores(labels.clone(), raw.clone(), "p1").unwrap();
        let same = IndexTable::from_raw_scores(labels.clone(), raw.clone(), "p2").unwrap();
        let c = compare_periods(&a, &same).unwrap();
        assert_relative_eq!(c.pearson, 1.0, epsilon = 1e-12);
        assert_relative_eq!(c.spearman, 1.0, epsilon = 1e-12);

        let neg = IndexTable::from_raw_scores(labels, -raw, "p2").unwrap();
        let c = compare_periods(&a, &neg).unwrap();
        assert_relative_eq!(c.spearman, -1.0, epsilon = 1e-12);
        assert_relative_eq!(c.pearson, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn comparison_is_symmetric_up_to_role_swap() {
        let labels: Vec<String> = (0..5).map(|i| format!("u{i}")).collect();
        let a = IndexTable::from_raw_scores(
            labels.clone(),
            DVector::from_vec(vec![1.0, 4.0, -2.0, 0.3, 2.5]),
            "p1",
        )
        .unwrap();
        let b = IndexTable::from_raw_scores(
            labels,
            DVector::from_vec(vec![0.8, 3.0, -1.0, 1.3, -2.0]),
            "p2",
        )
        .unwrap();
        let ab = compare_periods(&a, &b).unwrap();
        let ba = compare_periods(&b, &a).unwrap();
        assert_relative_eq!(ab.pearson, ba.pearson, epsilon = 1e-12);
        assert_relative_eq!(ab.spearman, ba.spearman, epsilon = 1e-12);
        for (l, (ia, ib)) in ab.unit_labels.iter().zip(ab.index_a.iter().zip(&ab.index_b)) {
            let j = ba.unit_labels.iter().position(|x| x == l).unwrap();
            assert_eq!(*ia, ba.index_b[j]);
            assert_eq!(*ib, ba.index_a[j]);
        }
    }

    #[test]
    fn comparison_reports_label_mismatch() {
        let a = IndexTable::from_raw_scores(
            vec!["x".into(), "y".into(), "z".into()],
            DVector::from_vec(vec![1.0, 2.0, 3.0]),
            "p1",
        )
        .unwrap();
        let b = IndexTable::from_raw_scores(
            vec!["x".into(), "y".into(), "w".into()],
            DVector::from_vec(vec![1.0, 2.0, 3.0]),
            "p2",
        )
        .unwrap();
        let err = compare_periods(&a, &b).unwrap_err().to_string();
        assert!(err.contains('w') && err.contains('z'), "{err}");
    }

    proptest! {
        // Ranks are always a permutation of 1..N and invariant under any
        // strictly increasing transform of the index.
        #[test]
        fn ranks_are_a_permutation_and_monotone_invariant(
            values in proptest::collection::vec(-100.0f64..100.0, 2..40),
        ) {
            let labels: Vec<String> = (0..values.len()).map(|i| format!("u{i:02}")).collect();
            let idx = DVector::from_vec(values.clone());
            let rank = rank_units(&labels, &idx);
            let mut sorted = rank.clone();
            sorted.sort_unstable();
            prop_assert_eq!(sorted, (1..=values.len()).collect::<Vec<_>>());

            // exp is strictly increasing; 0.01 keeps it finite.
            let transformed = idx.map(|v| (0.01 * v).exp());
            let rank2 = rank_units(&labels, &transformed);
            prop_assert_eq!(rank, rank2);
        }
    }
}
