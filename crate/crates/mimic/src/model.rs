//! Model wiring, parameters and the implied moment structure.
//!
//! A `ModelSpec` fixes the dimensions (`p` indicators, `k` causes) and which
//! loading is pinned to one; a `ParameterSet` holds the values
//! `(lambda, beta, theta, sigma)`. Together they imply the reduced-form
//! moments
//!
//! ```text
//! Pi    = beta lambda'                       (k x p)
//! Omega = sigma^2 lambda lambda' + Theta^2   (p x p)
//! ```
//!
//! which are all the likelihood ever sees. The latent scale is not
//! identified: scaling `lambda` by `c` while dividing `beta` and `sigma` by
//! `c` leaves `Pi` and `Omega` unchanged, which is why one loading is fixed
//! at one during estimation. For reporting, loadings are renormalized so
//! they sum to one (`standardize_loadings`); that transform is exactly
//! reduced-form preserving.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Dimensions and wiring of a MIMIC model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    indicator_names: Vec<String>,
    cause_names: Vec<String>,
    fixed_loading_index: usize,
}

impl ModelSpec {
    /// Builds a spec from indicator and cause names; the first loading is
    /// fixed to one.
    ///
    /// Requires at least two indicators, at least one cause, and no duplicate
    /// names within either list.
    pub fn new<S: Into<String>>(indicator_names: Vec<S>, cause_names: Vec<S>) -> Result<Self> {
        let indicator_names: Vec<String> = indicator_names.into_iter().map(Into::into).collect();
        let cause_names: Vec<String> = cause_names.into_iter().map(Into::into).collect();
        if indicator_names.len() < 2 {
            return Err(Error::Spec(format!(
                "need at least 2 indicators, got {}",
                indicator_names.len()
            )));
        }
        if cause_names.is_empty() {
            return Err(Error::Spec("need at least 1 cause".into()));
        }
        for (label, names) in [("indicator", &indicator_names), ("cause", &cause_names)] {
            let mut seen = std::collections::HashSet::new();
            for n in names {
                if !seen.insert(n.as_str()) {
                    return Err(Error::Spec(format!("duplicate {label} name: {n}")));
                }
            }
        }
        Ok(Self {
            indicator_names,
            cause_names,
            fixed_loading_index: 0,
        })
    }

    /// Moves the fixed loading to another indicator (0-based index).
    pub fn with_fixed_loading(mut self, index: usize) -> Result<Self> {
        if index >= self.p() {
            return Err(Error::Spec(format!(
                "fixed loading index {index} out of range for p = {}",
                self.p()
            )));
        }
        self.fixed_loading_index = index;
        Ok(self)
    }

    /// Number of indicators.
    pub fn p(&self) -> usize {
        self.indicator_names.len()
    }

    /// Number of causes.
    pub fn k(&self) -> usize {
        self.cause_names.len()
    }

    /// Index of the loading pinned to one.
    pub fn fixed_loading_index(&self) -> usize {
        self.fixed_loading_index
    }

    pub fn indicator_names(&self) -> &[String] {
        &self.indicator_names
    }

    pub fn cause_names(&self) -> &[String] {
        &self.cause_names
    }
}

/// Free parameters of the model: loadings, structural coefficients and the
/// error standard deviations.
///
/// `theta` and `sigma` are standard deviations, not variances. Zero entries
/// are legal here so a noiseless process can be simulated, but every moment
/// or likelihood evaluation requires strictly positive `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    /// Factor loadings, one per indicator.
    pub lambda: DVector<f64>,
    /// Structural coefficients, one per cause.
    pub beta: DVector<f64>,
    /// Indicator error standard deviations, one per indicator.
    pub theta: DVector<f64>,
    /// Structural error standard deviation.
    pub sigma: f64,
}

impl ParameterSet {
    pub fn new(lambda: Vec<f64>, beta: Vec<f64>, theta: Vec<f64>, sigma: f64) -> Result<Self> {
        if lambda.len() != theta.len() {
            return Err(Error::Params(format!(
                "lambda has {} entries but theta has {}",
                lambda.len(),
                theta.len()
            )));
        }
        if lambda.is_empty() || beta.is_empty() {
            return Err(Error::Params("lambda and beta must be non-empty".into()));
        }
        let all = lambda.iter().chain(&beta).chain(&theta).chain(std::iter::once(&sigma));
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::Params("non-finite parameter value".into()));
        }
        if theta.iter().any(|&t| t < 0.0) {
            return Err(Error::Params("theta entries must be nonnegative".into()));
        }
        if sigma < 0.0 {
            return Err(Error::Params("sigma must be nonnegative".into()));
        }
        Ok(Self {
            lambda: DVector::from_vec(lambda),
            beta: DVector::from_vec(beta),
            theta: DVector::from_vec(theta),
            sigma,
        })
    }

    pub fn p(&self) -> usize {
        self.lambda.len()
    }

    pub fn k(&self) -> usize {
        self.beta.len()
    }

    /// True when the fixed loading equals one exactly.
    pub fn is_identified(&self, spec: &ModelSpec) -> bool {
        self.lambda[spec.fixed_loading_index()] == 1.0
    }

    pub(crate) fn check_dims(&self, spec: &ModelSpec) -> Result<()> {
        if self.p() != spec.p() || self.k() != spec.k() {
            return Err(Error::Dimension(format!(
                "parameters are ({}, {}) but spec is ({}, {})",
                self.p(),
                self.k(),
                spec.p(),
                spec.k()
            )));
        }
        Ok(())
    }

    pub(crate) fn require_positive_theta(&self) -> Result<()> {
        if self.theta.iter().any(|&t| t <= 0.0) {
            return Err(Error::Params(
                "theta entries must be strictly positive for moment evaluation".into(),
            ));
        }
        Ok(())
    }
}

/// Observed data for one period: `N x p` indicators, `N x k` causes and the
/// unit labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    unit_labels: Vec<String>,
    y: DMatrix<f64>,
    x: DMatrix<f64>,
    period_label: String,
}

impl Dataset {
    pub fn new(
        unit_labels: Vec<String>,
        y: DMatrix<f64>,
        x: DMatrix<f64>,
        period_label: impl Into<String>,
    ) -> Result<Self> {
        let n = unit_labels.len();
        if y.nrows() != n || x.nrows() != n {
            return Err(Error::Data(format!(
                "{} labels but Y has {} rows and X has {} rows",
                n,
                y.nrows(),
                x.nrows()
            )));
        }
        if n < y.ncols() + x.ncols() + 1 {
            return Err(Error::Data(format!(
                "need at least p + k + 1 = {} observations, got {n}",
                y.ncols() + x.ncols() + 1
            )));
        }
        if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Data("missing or non-finite value".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for l in &unit_labels {
            if !seen.insert(l.as_str()) {
                return Err(Error::Data(format!("duplicate unit label: {l}")));
            }
        }
        for (mat, what) in [(&y, "indicator"), (&x, "cause")] {
            for j in 0..mat.ncols() {
                let col: Vec<f64> = mat.column(j).iter().copied().collect();
                if crate::stats::sd_sample(&col) <= 0.0 {
                    return Err(Error::Data(format!("{what} column {j} has zero variance")));
                }
            }
        }
        Ok(Self {
            unit_labels,
            y,
            x,
            period_label: period_label.into(),
        })
    }

    pub fn n(&self) -> usize {
        self.unit_labels.len()
    }

    pub fn p(&self) -> usize {
        self.y.ncols()
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn unit_labels(&self) -> &[String] {
        &self.unit_labels
    }

    pub fn period_label(&self) -> &str {
        &self.period_label
    }

    /// True when every column has mean 0 and sample SD 1 within `tol`.
    pub fn is_standardized(&self, tol: f64) -> bool {
        for mat in [&self.y, &self.x] {
            for j in 0..mat.ncols() {
                let col: Vec<f64> = mat.column(j).iter().copied().collect();
                if crate::stats::mean(&col).abs() > tol
                    || (crate::stats::sd_sample(&col) - 1.0).abs() > tol
                {
                    return false;
                }
            }
        }
        true
    }
}

/// Reduced-form moments implied by a parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpliedMoments {
    /// `k x p` reduced-form coefficient matrix `beta lambda'` (rank at most one).
    pub pi: DMatrix<f64>,
    /// `p x p` residual covariance `sigma^2 lambda lambda' + diag(theta^2)`.
    pub omega: DMatrix<f64>,
}

/// Computes the reduced-form moments `Pi = beta lambda'` and
/// `Omega = sigma^2 lambda lambda' + Theta^2`.
///
/// Rejects any nonpositive `theta` entry: a zero indicator error makes
/// `Omega` singular.
pub fn implied_moments(spec: &ModelSpec, params: &ParameterSet) -> Result<ImpliedMoments> {
    params.check_dims(spec)?;
    params.require_positive_theta()?;
    Ok(implied_moments_unchecked(params))
}

/// Moment computation without the spec consistency checks; shared by the
/// estimation internals which already validated dimensions.
pub(crate) fn implied_moments_unchecked(params: &ParameterSet) -> ImpliedMoments {
    let pi = &params.beta * params.lambda.transpose();
    let s2 = params.sigma * params.sigma;
    let mut omega = &params.lambda * params.lambda.transpose() * s2;
    for i in 0..params.p() {
        omega[(i, i)] += params.theta[i] * params.theta[i];
    }
    ImpliedMoments { pi, omega }
}

/// Renormalizes the loadings to sum to one, rescaling `beta` and `sigma` so
/// the reduced form (and hence the likelihood) is unchanged.
///
/// With `s = sum(lambda)`: `lambda -> lambda / s`, `beta -> beta * s`,
/// `sigma -> sigma * |s|`. Fails when the loadings sum to (numerically) zero.
pub fn standardize_loadings(params: &ParameterSet) -> Result<ParameterSet> {
    let s: f64 = params.lambda.iter().sum();
    if s.abs() < 1e-12 {
        return Err(Error::Params(
            "loadings sum to zero; sum-to-one renormalization is undefined".into(),
        ));
    }
    Ok(ParameterSet {
        lambda: &params.lambda / s,
        beta: &params.beta * s,
        theta: params.theta.clone(),
        sigma: params.sigma * s.abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
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

    #[test]
    fn spec_rejects_bad_wiring() {
        assert!(ModelSpec::new(vec!["y1"], vec!["x1"]).is_err());
        assert!(ModelSpec::new(vec!["y1", "y2"], Vec::<&str>::new()).is_err());
        assert!(ModelSpec::new(vec!["y1", "y1"], vec!["x1"]).is_err());
        assert!(ModelSpec::new(vec!["y1", "y2"], vec!["x1", "x1"]).is_err());
        assert!(spec_pk(3, 1).with_fixed_loading(3).is_err());
        assert_eq!(spec_pk(3, 1).with_fixed_loading(2).unwrap().fixed_loading_index(), 2);
    }

    #[test]
    fn unit_loadings_unit_noise() {
        let spec = spec_pk(2, 1);
        let m = implied_moments(&spec, &params(&[1.0, 1.0], &[0.0], &[1.0, 1.0], 1.0)).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert_relative_eq!(m.omega, expected, epsilon = 1e-15);
        assert_eq!(m.pi, DMatrix::zeros(1, 2));
    }

    #[test]
    fn zero_sigma_gives_diagonal_omega() {
        let spec = spec_pk(3, 2);
        let theta = [0.5, 1.5, 2.0];
        let m = implied_moments(&spec, &params(&[1.0, -0.3, 2.0], &[0.1, 0.2], &theta, 0.0)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { theta[i] * theta[i] } else { 0.0 };
                assert_relative_eq!(m.omega[(i, j)], want, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn moments_match_scalar_loop() {
        // Independent element-by-element evaluation of the outer products.
        let spec = spec_pk(3, 2);
        let (lambda, beta, theta, sigma) = ([1.0, 0.5, 2.0], [0.3, -0.2], [1.0, 1.0, 1.0], 0.7);
        let m = implied_moments(&spec, &params(&lambda, &beta, &theta, sigma)).unwrap();
        for a in 0..2 {
            for i in 0..3 {
                assert_relative_eq!(m.pi[(a, i)], beta[a] * lambda[i], epsilon = 1e-15);
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                let mut want = sigma * sigma * lambda[i] * lambda[j];
                if i == j {
                    want += theta[i] * theta[i];
                }
                assert_relative_eq!(m.omega[(i, j)], want, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn moments_reject_nonpositive_theta() {
        let spec = spec_pk(2, 1);
        let p = ParameterSet {
            lambda: DVector::from_vec(vec![1.0, 1.0]),
            beta: DVector::from_vec(vec![0.2]),
            theta: DVector::from_vec(vec![1.0, 0.0]),
            sigma: 0.5,
        };
        assert!(implied_moments(&spec, &p).is_err());
    }

    #[test]
    fn equal_loadings_standardize_to_one_over_p() {
        let p = params(&[1.0; 5], &[2.0, -1.0], &[1.0; 5], 0.4);
        let s = standardize_loadings(&p).unwrap();
        for l in s.lambda.iter() {
            assert_relative_eq!(*l, 0.2, epsilon = 1e-15);
        }
        assert_relative_eq!(s.beta[0], 10.0, epsilon = 1e-15);
        assert_relative_eq!(s.beta[1], -5.0, epsilon = 1e-15);
        assert_relative_eq!(s.sigma, 2.0, epsilon = 1e-15);
    }

    #[test]
    fn standardized_loadings_sum_to_one_on_reported_pattern() {
        // A published loading pattern that already sums to one: recover it
        // from its identified form (first loading scaled to exactly 1).
        let reported = [0.196, 0.161, 0.194, 0.237, 0.212];
        assert_relative_eq!(reported.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        let identified: Vec<f64> = reported.iter().map(|l| l / reported[0]).collect();
        let p = params(&identified, &[1.0], &[1.0; 5], 0.3);
        let s = standardize_loadings(&p).unwrap();
        for (got, want) in s.lambda.iter().zip(reported) {
            assert_relative_eq!(*got, want, epsilon = 1e-12);
        }
        assert_relative_eq!(s.lambda.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn standardize_rejects_zero_sum() {
        let p = params(&[1.0, -1.0], &[0.5], &[1.0, 1.0], 0.5);
        assert!(standardize_loadings(&p).is_err());
    }

    #[test]
    fn dataset_validates_shape_and_variance() {
        let labels = vec!["a".to_string(), "b".to_string(), "c".to_string(), "d".to_string()];
        let y = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 3.0, 1.0, -1.0, 0.5, 0.0, 4.0]);
        let x = DMatrix::from_column_slice(4, 1, &[0.3, -0.2, 0.8, 1.1]);
        assert!(Dataset::new(labels.clone(), y.clone(), x.clone(), "t").is_ok());

        let constant = DMatrix::from_column_slice(4, 1, &[1.0; 4]);
        assert!(Dataset::new(labels.clone(), y.clone(), constant, "t").is_err());

        let mut dup = labels.clone();
        dup[3] = "a".into();
        assert!(Dataset::new(dup, y.clone(), x.clone(), "t").is_err());

        let mut nan = y.clone();
        nan[(0, 0)] = f64::NAN;
        assert!(Dataset::new(labels, nan, x, "t").is_err());
    }

    fn arb_params(p: usize, k: usize) -> impl Strategy<Value = ParameterSet> {
        (
            proptest::collection::vec(-2.0f64..2.0, p),
            proptest::collection::vec(-2.0f64..2.0, k),
            proptest::collection::vec(0.1f64..2.0, p),
            0.0f64..2.0,
        )
            .prop_map(move |(mut lambda, beta, theta, sigma)| {
                lambda[0] = 1.0;
                params(&lambda, &beta, &theta, sigma)
            })
    }

    proptest! {
        // Scaling lambda by c while dividing beta and sigma by c leaves the
        // reduced form unchanged: the scale indeterminacy in testable form.
        #[test]
        fn reduced_form_invariance(ps in arb_params(4, 2), c in prop_oneof![-3.0f64..-0.2, 0.2f64..3.0]) {
            let spec = spec_pk(4, 2);
            let scaled = ParameterSet {
                lambda: &ps.lambda * c,
                beta: &ps.beta / c,
                theta: ps.theta.clone(),
                sigma: (ps.sigma / c).abs(),
            };
            let m0 = implied_moments(&spec, &ps).unwrap();
            let m1 = implied_moments(&spec, &scaled).unwrap();
            prop_assert!((&m0.pi - &m1.pi).amax() < 1e-10);
            prop_assert!((&m0.omega - &m1.omega).amax() < 1e-10);
        }

        // Omega stays positive definite: its smallest eigenvalue is at least
        // the smallest theta_i^2.
        #[test]
        fn omega_eigenvalues_bounded_below(ps in arb_params(4, 2)) {
            let spec = spec_pk(4, 2);
            let m = implied_moments(&spec, &ps).unwrap();
            let min_theta2 = ps.theta.iter().map(|t| t * t).fold(f64::INFINITY, f64::min);
            let min_eig = m.omega.symmetric_eigen().eigenvalues.min();
            prop_assert!(min_eig >= min_theta2 - 1e-10);
        }

        #[test]
        fn standardize_preserves_moments_and_is_idempotent(ps in arb_params(4, 2)) {
            let spec = spec_pk(4, 2);
            prop_assume!(ps.lambda.iter().sum::<f64>().abs() > 0.05);
            let once = standardize_loadings(&ps).unwrap();
            let twice = standardize_loadings(&once).unwrap();

            let m0 = implied_moments(&spec, &ps).unwrap();
            let m1 = implied_moments(&spec, &once).unwrap();
            prop_assert!((&m0.pi - &m1.pi).amax() < 1e-12);
            prop_assert!((&m0.omega - &m1.omega).amax() < 1e-12);

            prop_assert!((&once.lambda - &twice.lambda).amax() < 1e-12);
            prop_assert!((&once.beta - &twice.beta).amax() < 1e-12);
            prop_assert!((once.sigma - twice.sigma).abs() < 1e-12);
        }
    }
}
