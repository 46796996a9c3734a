//! Model-fit indices and Mardia's multivariate normality test.
//!
//! The chi-square compares the fitted model against the saturated model
//! (unrestricted `Pi`, unrestricted symmetric `Omega`), whose ML solution is
//! the OLS coefficient matrix and the residual covariance. The baseline for
//! the CFI is the independence model (`Pi = 0`, diagonal `Omega`), the most
//! common convention. Moment counting: the saturated model has
//! `kp + p(p+1)/2` parameters, the MIMIC model `2p + k`, the baseline `p`.
//!
//! Conventions pinned here because reporting tools differ:
//! - `RMSEA = sqrt(max(chi2 - df, 0) / (df * N))` (divisor `N`, not `N - 1`);
//! - SRMR compares the sample covariance of the indicators with the implied
//!   `Pi' Sxx Pi + Omega`, standardized by the sample SDs, over the lower
//!   triangle including the diagonal; second moments are taken about zero,
//!   matching the likelihood (which has no mean parameters — inputs are
//!   standardized upstream);
//! - Mardia's skewness statistic refers to chi-square with
//!   `p(p+1)(p+2)/6` degrees of freedom, the kurtosis statistic to a
//!   two-sided normal; no small-sample corrections.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::estimate::{FitResult, ParamLayout, OMEGA_CONDITION_LIMIT};
use crate::model::{implied_moments, Dataset, ModelSpec};

/// The classical absolute and incremental fit indices.
#[derive(Debug, Clone, PartialEq)]
pub struct FitIndices {
    pub aic: f64,
    pub bic: f64,
    pub cfi: f64,
    pub rmsea: f64,
    pub srmr: f64,
    pub chisq_model: f64,
    pub df_model: usize,
    pub chisq_baseline: f64,
    pub df_baseline: usize,
    /// A numerically negative chi-square was clamped to zero.
    pub chisq_clamped: bool,
}

/// Result of Mardia's multivariate normality test.
#[derive(Debug, Clone, PartialEq)]
pub struct MardiaResult {
    pub skewness_stat: f64,
    pub kurtosis_stat: f64,
    pub skewness_pvalue: f64,
    pub kurtosis_pvalue: f64,
    /// True when either test rejects at the 5% level.
    pub rejected: bool,
}

/// Log-likelihood of the saturated model: OLS `Pi`, residual covariance
/// `Omega`. With `Omega_hat = W/N`, `tr(Omega_hat^-1 W) = Np` exactly.
fn saturated_loglik(dataset: &Dataset) -> Result<(DMatrix<f64>, DMatrix<f64>, f64)> {
    let x = dataset.x();
    let y = dataset.y();
    let n = dataset.n() as f64;
    let p = dataset.p() as f64;
    let sxx = x.transpose() * x;
    let pi_hat = sxx
        .lu()
        .solve(&(x.transpose() * y))
        .ok_or_else(|| Error::Singular("saturated fit: cause cross-product X'X".into()))?;
    let resid = y - x * &pi_hat;
    let omega_hat = resid.transpose() * &resid / n;
    let det = omega_hat.determinant();
    if !(det > 0.0) {
        return Err(Error::Singular("saturated fit: residual covariance".into()));
    }
    let loglik = -0.5 * n * (det.ln() + p) - 0.5 * p * n * (2.0 * std::f64::consts::PI).ln();
    Ok((pi_hat, omega_hat, loglik))
}

/// Log-likelihood of the independence baseline: `Pi = 0`, diagonal `Omega`
/// with `omega_ii = (Y'Y)_ii / N`.
fn baseline_loglik(dataset: &Dataset) -> Result<f64> {
    let y = dataset.y();
    let n = dataset.n() as f64;
    let p = dataset.p() as f64;
    let mut log_det = 0.0;
    for j in 0..dataset.p() {
        let v = y.column(j).norm_squared() / n;
        if !(v > 0.0) {
            return Err(Error::Singular(format!("baseline fit: indicator {j} has zero variance")));
        }
        log_det += v.ln();
    }
    Ok(-0.5 * n * (log_det + p) - 0.5 * p * n * (2.0 * std::f64::consts::PI).ln())
}

/// Fit indices for a converged model fit.
pub fn fit_indices(dataset: &Dataset, spec: &ModelSpec, fit: &FitResult) -> Result<FitIndices> {
    let m = implied_moments(spec, &fit.params)?;
    let q = ParamLayout::from_spec(spec).q();
    fit_indices_from_moments(dataset, &m.pi, &m.omega, fit.loglik, q)
}

/// Fit indices from an explicit moment pair, log-likelihood and parameter
/// count. This is the core `fit_indices` wraps; it also covers comparisons
/// whose moments are not representable by a MIMIC parameter set, such as the
/// saturated model itself.
pub fn fit_indices_from_moments(
    dataset: &Dataset,
    pi: &DMatrix<f64>,
    omega: &DMatrix<f64>,
    loglik: f64,
    q: usize,
) -> Result<FitIndices> {
    let (p, k, n) = (dataset.p(), dataset.k(), dataset.n() as f64);
    if pi.nrows() != k || pi.ncols() != p || omega.nrows() != p || omega.ncols() != p {
        return Err(Error::Dimension("moment matrices do not match the dataset".into()));
    }
    let moment_count = k * p + p * (p + 1) / 2;
    if q > moment_count {
        return Err(Error::Estimation(format!(
            "q = {q} free parameters exceed the {moment_count} sample moments"
        )));
    }
    let df_model = moment_count - q;
    let df_baseline = moment_count - p;

    let (_, _, loglik_sat) = saturated_loglik(dataset)?;
    let loglik_base = baseline_loglik(dataset)?;

    let raw_chisq = 2.0 * (loglik_sat - loglik);
    let chisq_clamped = raw_chisq < 0.0;
    let chisq_model = raw_chisq.max(0.0);
    let chisq_baseline = (2.0 * (loglik_sat - loglik_base)).max(0.0);

    let num = (chisq_model - df_model as f64).max(0.0);
    let den = (chisq_baseline - df_baseline as f64).max(num);
    let cfi = if den > 0.0 { 1.0 - num / den } else { 1.0 };

    let rmsea = if df_model > 0 {
        (num / (df_model as f64 * n)).sqrt()
    } else {
        0.0
    };

    // SRMR over the indicator covariance block.
    let y = dataset.y();
    let x = dataset.x();
    let s_yy = y.transpose() * y / n;
    let sxx = x.transpose() * x / n;
    let implied = pi.transpose() * &sxx * pi + omega;
    let mut sum = 0.0;
    for j in 0..p {
        for i in j..p {
            let scale = (s_yy[(i, i)] * s_yy[(j, j)]).sqrt();
            sum += ((s_yy[(i, j)] - implied[(i, j)]) / scale).powi(2);
        }
    }
    let srmr = (sum / (p * (p + 1) / 2) as f64).sqrt();

    Ok(FitIndices {
        aic: 2.0 * q as f64 - 2.0 * loglik,
        bic: q as f64 * n.ln() - 2.0 * loglik,
        cfi: cfi.clamp(0.0, 1.0),
        rmsea,
        srmr,
        chisq_model,
        df_model,
        chisq_baseline,
        df_baseline,
        chisq_clamped,
    })
}

/// The saturated moments `(Pi_hat, Omega_hat)` and their log-likelihood;
/// useful for feeding `fit_indices_from_moments` its own reference point.
pub fn saturated_fit(dataset: &Dataset) -> Result<(DMatrix<f64>, DMatrix<f64>, f64)> {
    saturated_loglik(dataset)
}

/// Mardia's multivariate skewness and kurtosis test.
///
/// Both statistics are functions of the whitened, centered data
/// `z_i = S^(-1/2) (y_i - ybar)`:
///
/// ```text
/// b1 = mean over (a,b,c) sums of third moments squared  (skewness)
/// b2 = (1/N) sum_i |z_i|^4                              (kurtosis)
/// ```
///
/// with `N b1 / 6 ~ chi2(p(p+1)(p+2)/6)` and
/// `(b2 - p(p+2)) / sqrt(8 p (p+2) / N) ~ N(0,1)` under normality.
pub fn mardia_test(y: &DMatrix<f64>) -> Result<MardiaResult> {
    let n = y.nrows();
    let p = y.ncols();
    if n <= p {
        return Err(Error::Data(format!("need N > p, got N = {n}, p = {p}")));
    }
    let nf = n as f64;
    let pf = p as f64;

    let mut centered = y.clone();
    for j in 0..p {
        let mean = y.column(j).sum() / nf;
        for i in 0..n {
            centered[(i, j)] -= mean;
        }
    }
    let cov = centered.transpose() * &centered / nf;
    let eig = cov.symmetric_eigen();
    let min = eig.eigenvalues.min();
    let max = eig.eigenvalues.max();
    if min <= 0.0 || max / min > OMEGA_CONDITION_LIMIT {
        return Err(Error::Singular("sample covariance in Mardia's test".into()));
    }
    let inv_sqrt_vals =
        DVector::from_iterator(p, eig.eigenvalues.iter().map(|l| 1.0 / l.sqrt()));
    let whitener = &eig.eigenvectors * DMatrix::from_diagonal(&inv_sqrt_vals) * eig.eigenvectors.transpose();
    let z = centered * whitener;

    // b1 = sum_{abc} [(1/N) sum_i z_ia z_ib z_ic]^2, which equals the double
    // sum (1/N^2) sum_{ij} (z_i' z_j)^3 without forming the N x N matrix.
    let mut third = vec![0.0; p * p * p];
    let mut b2 = 0.0;
    for i in 0..n {
        let row = z.row(i);
        let mut norm2 = 0.0;
        for a in 0..p {
            norm2 += row[a] * row[a];
        }
        b2 += norm2 * norm2;
        for a in 0..p {
            for b in 0..p {
                let ab = row[a] * row[b];
                for c in 0..p {
                    third[(a * p + b) * p + c] += ab * row[c];
                }
            }
        }
    }
    b2 /= nf;
    let b1: f64 = third.iter().map(|t| (t / nf) * (t / nf)).sum();

    let skewness_stat = nf * b1 / 6.0;
    let skew_df = pf * (pf + 1.0) * (pf + 2.0) / 6.0;
    let skewness_pvalue = ChiSquared::new(skew_df).expect("positive df").sf(skewness_stat);

    let kurtosis_stat = (b2 - pf * (pf + 2.0)) / (8.0 * pf * (pf + 2.0) / nf).sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let kurtosis_pvalue = 2.0 * normal.cdf(-kurtosis_stat.abs());

    Ok(MardiaResult {
        skewness_stat,
        kurtosis_stat,
        skewness_pvalue,
        kurtosis_pvalue,
        rejected: skewness_pvalue < 0.05 || kurtosis_pvalue < 0.05,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::{fit_ml, FitConfig};
    use crate::model::ParameterSet;
    use crate::sim::{simulate, NoiseDistribution, SimConfig};
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, StandardNormal};

    fn spec_pk(p: usize, k: usize) -> ModelSpec {
        ModelSpec::new(
            (0..p).map(|i| format!("y{i}")).collect(),
            (0..k).map(|i| format!("x{i}")).collect(),
        )
        .unwrap()
    }

    fn sim_dataset(n: usize, seed: u64) -> (ModelSpec, Dataset) {
        let spec = spec_pk(3, 2);
        let ps = ParameterSet::new(
            vec![1.0, 0.8, 1.2],
            vec![0.5, -0.4],
            vec![0.8, 0.9, 0.7],
            0.6,
        )
        .unwrap();
        let cfg = SimConfig::new(spec.clone(), ps, n, NoiseDistribution::Normal, seed).unwrap();
        (spec, simulate(&cfg).unwrap().dataset)
    }

    #[test]
    fn saturated_model_is_a_perfect_fit() {
        let (_, ds) = sim_dataset(300, 3);
        let (pi_hat, omega_hat, loglik_sat) = saturated_fit(&ds).unwrap();
        let q = ds.k() * ds.p() + ds.p() * (ds.p() + 1) / 2;
        let idx = fit_indices_from_moments(&ds, &pi_hat, &omega_hat, loglik_sat, q).unwrap();
        assert_eq!(idx.df_model, 0);
        assert!(idx.chisq_model.abs() < 1e-8);
        assert_eq!(idx.cfi, 1.0);
        assert_eq!(idx.rmsea, 0.0);
        assert!(idx.srmr < 1e-10, "srmr = {}", idx.srmr);
    }

    #[test]
    fn information_criteria_formulas() {
        // L = 0, q = 3, N = 81: AIC = 6, BIC = 3 log 81.
        let (_, ds81) = {
            let spec = spec_pk(3, 2);
            let ps = ParameterSet::new(
                vec![1.0, 0.8, 1.2],
                vec![0.5, -0.4],
                vec![0.8, 0.9, 0.7],
                0.6,
            )
            .unwrap();
            let cfg = SimConfig::new(spec.clone(), ps, 81, NoiseDistribution::Normal, 17).unwrap();
            (spec, simulate(&cfg).unwrap().dataset)
        };
        let pi = DMatrix::zeros(ds81.k(), ds81.p());
        let omega = DMatrix::identity(ds81.p(), ds81.p());
        let idx = fit_indices_from_moments(&ds81, &pi, &omega, 0.0, 3).unwrap();
        assert_relative_eq!(idx.aic, 6.0, epsilon = 1e-12);
        assert_relative_eq!(idx.bic, 3.0 * (81.0f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn aic_bic_identity_on_real_fits() {
        let (spec, ds) = sim_dataset(250, 9);
        let fit = fit_ml(&ds, &spec, &FitConfig::default()).unwrap();
        let idx = fit_indices(&ds, &spec, &fit).unwrap();
        let q = 2.0 * spec.p() as f64 + spec.k() as f64;
        let n = ds.n() as f64;
        assert_relative_eq!(idx.aic - idx.bic, q * (2.0 - n.ln()), epsilon = 1e-10);
        assert!(idx.df_baseline >= idx.df_model);
        assert!((0.0..=1.0).contains(&idx.cfi));
    }

    #[test]
    fn chi_square_is_calibrated_on_correct_models() {
        // 300 correctly specified replications: mean chi2 tracks df and the
        // median RMSEA stays below 0.05.
        let spec = spec_pk(3, 2);
        let ps = ParameterSet::new(
            vec![1.0, 0.8, 1.2],
            vec![0.5, -0.4],
            vec![0.8, 0.9, 0.7],
            0.6,
        )
        .unwrap();
        let df_expected = (2 * 3 + 3 * 4 / 2) - (2 * 3 + 2); // kp + p(p+1)/2 - q = 12 - 8
        let mut chisqs = Vec::new();
        let mut rmseas = Vec::new();
        for rep in 0..300 {
            let cfg =
                SimConfig::new(spec.clone(), ps.clone(), 400, NoiseDistribution::Normal, 1000 + rep).unwrap();
            let ds = simulate(&cfg).unwrap().dataset;
            let fit = fit_ml(&ds, &spec, &FitConfig::default()).unwrap();
            if !fit.converged {
                continue;
            }
            let idx = fit_indices(&ds, &spec, &fit).unwrap();
            assert_eq!(idx.df_model, df_expected);
            chisqs.push(idx.chisq_model);
            rmseas.push(idx.rmsea);
        }
        assert!(chisqs.len() >= 290);
        let mean_chisq = crate::stats::mean(&chisqs);
        // SD of the mean of ~300 chi2(4) draws is sqrt(8/300) ~ 0.16.
        assert!(
            (mean_chisq - df_expected as f64).abs() < 0.8,
            "mean chi2 {mean_chisq} vs df {df_expected}"
        );
        rmseas.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(rmseas[rmseas.len() / 2] < 0.05);
    }

    #[test]
    fn srmr_invariant_under_indicator_relabeling() {
        let (spec, ds) = sim_dataset(300, 12);
        let fit = fit_ml(&ds, &spec, &FitConfig::default()).unwrap();
        let idx = fit_indices(&ds, &spec, &fit).unwrap();

        // Permute indicators (2,0,1) in data, loadings and error SDs alike.
        let perm = [2usize, 0, 1];
        let y = ds.y();
        let y_perm = DMatrix::from_fn(ds.n(), 3, |r, c| y[(r, perm[c])]);
        let ds_perm = Dataset::new(ds.unit_labels().to_vec(), y_perm, ds.x().clone(), "perm").unwrap();
        let m = implied_moments(&spec, &fit.params).unwrap();
        let pi_perm = DMatrix::from_fn(ds.k(), 3, |r, c| m.pi[(r, perm[c])]);
        let om_perm = DMatrix::from_fn(3, 3, |r, c| m.omega[(perm[r], perm[c])]);
        // Log-likelihood is permutation invariant too; reuse the fitted one.
        let q = ParamLayout::from_spec(&spec).q();
        let idx_perm =
            fit_indices_from_moments(&ds_perm, &pi_perm, &om_perm, fit.loglik, q).unwrap();
        assert_relative_eq!(idx.srmr, idx_perm.srmr, epsilon = 1e-12);
    }

    #[test]
    fn symmetric_two_point_sample_has_zero_skewness() {
        // p = 1, half the observations at -1 and half at +1.
        let mut vals = vec![-1.0; 50];
        vals.extend(vec![1.0; 50]);
        let y = DMatrix::from_column_slice(100, 1, &vals);
        let r = mardia_test(&y).unwrap();
        assert!(r.skewness_stat.abs() < 1e-20);
    }

    #[test]
    fn cubed_column_trips_the_skewness_test() {
        let mut rng = StdRng::seed_from_u64(33);
        let n = 1000;
        let mut y = DMatrix::zeros(n, 3);
        for i in 0..n {
            let w: f64 = StandardNormal.sample(&mut rng);
            y[(i, 0)] = w * w * w;
            y[(i, 1)] = rng.sample(StandardNormal);
            y[(i, 2)] = rng.sample(StandardNormal);
        }
        let r = mardia_test(&y).unwrap();
        assert!(r.skewness_pvalue < 0.001, "p = {}", r.skewness_pvalue);
        assert!(r.rejected);
    }

    #[test]
    fn mardia_matches_pairwise_double_sum_on_small_samples() {
        // The O(N p^3) tensor route must agree with the direct O(N^2)
        // Mahalanobis double sum.
        let mut rng = StdRng::seed_from_u64(4);
        let n = 40;
        let y = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-2.0..2.0));
        let r = mardia_test(&y).unwrap();

        let nf = n as f64;
        let mut centered = y.clone();
        for j in 0..3 {
            let m = y.column(j).sum() / nf;
            for i in 0..n {
                centered[(i, j)] -= m;
            }
        }
        let cov = centered.transpose() * &centered / nf;
        let cov_inv = cov.try_inverse().unwrap();
        let mut b1 = 0.0;
        let mut b2 = 0.0;
        for i in 0..n {
            let ci = centered.row(i).transpose();
            let di = (ci.transpose() * &cov_inv * &ci)[(0, 0)];
            b2 += di * di;
            for j in 0..n {
                let cj = centered.row(j).transpose();
                let dij = (ci.transpose() * &cov_inv * &cj)[(0, 0)];
                b1 += dij * dij * dij;
            }
        }
        b1 /= nf * nf;
        b2 /= nf;
        assert_relative_eq!(r.skewness_stat, nf * b1 / 6.0, epsilon = 1e-8);
        let z = (b2 - 15.0) / (8.0 * 3.0 * 5.0 / nf).sqrt();
        assert_relative_eq!(r.kurtosis_stat, z, epsilon = 1e-8);
    }

    #[test]
    fn mardia_affine_invariance() {
        let mut rng = StdRng::seed_from_u64(8);
        let n = 200;
        let y = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.5));
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, -0.5, 1.0, 0.2, 0.1, 0.0, 0.7]);
        let shift = DVector::from_vec(vec![5.0, -3.0, 0.4]);
        let mut ty = &y * a.transpose();
        for i in 0..n {
            for j in 0..3 {
                ty[(i, j)] += shift[j];
            }
        }
        let r0 = mardia_test(&y).unwrap();
        let r1 = mardia_test(&ty).unwrap();
        assert_relative_eq!(r0.skewness_stat, r1.skewness_stat, epsilon = 1e-8);
        assert_relative_eq!(r0.kurtosis_stat, r1.kurtosis_stat, epsilon = 1e-8);
    }

    #[test]
    fn mardia_rejects_degenerate_input() {
        let y = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert!(mardia_test(&y).is_err()); // N <= p
        let mut z = DMatrix::zeros(10, 2);
        for i in 0..10 {
            z[(i, 0)] = i as f64;
            z[(i, 1)] = 2.0 * i as f64; // perfectly collinear
        }
        assert!(mardia_test(&z).is_err());
    }
}
