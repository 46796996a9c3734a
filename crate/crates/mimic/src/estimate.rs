//! Maximum-likelihood estimation of the MIMIC model.
//!
//! With the causes treated as fixed, the indicators are multivariate normal,
//! `y_n ~ N(Pi' x_n, Omega)`, and the log-likelihood is
//!
//! ```text
//! L = -(N/2) log|Omega| - (1/2) tr(Omega^-1 W) - (pN/2) log(2 pi),
//! W = (Y - X Pi)'(Y - X Pi),
//! ```
//!
//! the exact sum of the per-observation Gaussian log-densities. The fixed
//! loading is held out of the free-parameter vector and `theta`/`sigma` are
//! optimized on the log scale, which removes the positivity boundary. The
//! gradient is analytic throughout (see `gradient_transformed`); the Hessian
//! used for standard errors is a finite difference of that gradient.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{implied_moments_unchecked, Dataset, ImpliedMoments, ModelSpec, ParameterSet};
use crate::optim::{self, BfgsOptions};
use crate::stats::normal_two_sided_p;

/// Omega with a larger spectral condition number than this is treated as
/// numerically singular.
pub(crate) const OMEGA_CONDITION_LIMIT: f64 = 1e12;

/// A fitted theta below this is flagged as a Heywood-adjacent boundary case.
const HEYWOOD_THRESHOLD: f64 = 1e-4;

/// Tuning knobs for `fit_ml`.
#[derive(Debug, Clone)]
pub struct FitConfig {
    pub max_iterations: usize,
    /// Convergence threshold on the max-norm of the free-parameter gradient.
    pub gradient_tolerance: f64,
    /// Convergence threshold on the relative log-likelihood change.
    pub loglik_tolerance: f64,
    pub compute_naive: bool,
    pub compute_mlm: bool,
    pub compute_mlr: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            gradient_tolerance: 1e-6,
            loglik_tolerance: 1e-10,
            compute_naive: true,
            compute_mlm: true,
            compute_mlr: true,
        }
    }
}

/// Significance code derived from a two-sided normal p-value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stars {
    None,
    /// p < 0.10
    One,
    /// p < 0.05
    Two,
    /// p < 0.01
    Three,
}

impl Stars {
    pub fn from_p_value(p: f64) -> Self {
        if p < 0.01 {
            Stars::Three
        } else if p < 0.05 {
            Stars::Two
        } else if p < 0.10 {
            Stars::One
        } else {
            Stars::None
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Stars::None => "",
            Stars::One => "*",
            Stars::Two => "**",
            Stars::Three => "***",
        }
    }
}

impl std::fmt::Display for Stars {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Star code for an estimate, using the larger of the two corrected standard
/// errors (the conservative choice when both corrections are available).
pub fn significance_stars(estimate: f64, se_mlm: f64, se_mlr: f64) -> Stars {
    let se = se_mlm.max(se_mlr);
    if !(se > 0.0) {
        return Stars::None;
    }
    Stars::from_p_value(normal_two_sided_p(estimate / se))
}

/// Result of a maximum-likelihood fit.
///
/// Standard errors and significance codes are aligned with the free-parameter
/// layout: free loadings in indicator order (skipping the fixed one), then
/// `beta`, then `theta`, then `sigma`. See `free_parameter_names`.
#[derive(Debug, Clone)]
pub struct FitResult {
    /// Estimates in identified form (fixed loading equal to one).
    pub params: ParameterSet,
    /// Estimates renormalized so the loadings sum to one; `None` when the
    /// fitted loadings sum to zero and the renormalization is undefined.
    pub params_standardized: Option<ParameterSet>,
    pub loglik: f64,
    pub se_naive: Option<DVector<f64>>,
    pub se_mlm: Option<DVector<f64>>,
    pub se_mlr: Option<DVector<f64>>,
    /// Satorra-Bentler scaling factor behind `se_mlm`.
    pub mlm_scaling: Option<f64>,
    /// Star codes per free parameter, from the largest corrected SE
    /// (falling back to the naive SE when no correction was computed).
    pub significance: Vec<Stars>,
    pub converged: bool,
    pub iterations: usize,
    /// Max-norm of the free-parameter gradient at the returned point.
    pub gradient_norm: f64,
    /// The observed information was not positive definite; naive (and hence
    /// corrected) standard errors are unavailable.
    pub hessian_singular: bool,
    /// Some fitted indicator error SD fell below 1e-4.
    pub heywood: bool,
}

impl FitResult {
    /// Names of the free parameters, in standard-error order.
    pub fn free_parameter_names(&self, spec: &ModelSpec) -> Vec<String> {
        ParamLayout::from_spec(spec).names(spec)
    }

    /// Free-parameter estimates on the natural scale, in standard-error order.
    pub fn free_estimates(&self, spec: &ModelSpec) -> DVector<f64> {
        ParamLayout::from_spec(spec).pack_natural(&self.params)
    }
}

/// Mapping between a `ParameterSet` and the flat free-parameter vectors.
///
/// Two flat representations are used: the *transformed* space the optimizer
/// works in (`log theta`, `log sigma`) and the *natural* space standard
/// errors are reported on.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ParamLayout {
    pub p: usize,
    pub k: usize,
    pub fixed: usize,
}

impl ParamLayout {
    pub fn from_spec(spec: &ModelSpec) -> Self {
        Self { p: spec.p(), k: spec.k(), fixed: spec.fixed_loading_index() }
    }

    /// Number of free parameters: `(p - 1) + k + p + 1`.
    pub fn q(&self) -> usize {
        2 * self.p + self.k
    }

    fn free_lambda_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.p).filter(move |&i| i != self.fixed)
    }

    pub fn pack_transformed(&self, ps: &ParameterSet) -> DVector<f64> {
        let mut v = DVector::zeros(self.q());
        let mut j = 0;
        for i in self.free_lambda_indices() {
            v[j] = ps.lambda[i];
            j += 1;
        }
        for i in 0..self.k {
            v[j] = ps.beta[i];
            j += 1;
        }
        for i in 0..self.p {
            v[j] = ps.theta[i].max(f64::MIN_POSITIVE).ln();
            j += 1;
        }
        v[j] = ps.sigma.max(f64::MIN_POSITIVE).ln();
        v
    }

    pub fn unpack_transformed(&self, v: &DVector<f64>) -> ParameterSet {
        let mut lambda = DVector::zeros(self.p);
        lambda[self.fixed] = 1.0;
        let mut j = 0;
        for i in self.free_lambda_indices().collect::<Vec<_>>() {
            lambda[i] = v[j];
            j += 1;
        }
        let beta = DVector::from_fn(self.k, |i, _| v[j + i]);
        j += self.k;
        let theta = DVector::from_fn(self.p, |i, _| v[j + i].exp());
        j += self.p;
        ParameterSet { lambda, beta, theta, sigma: v[j].exp() }
    }

    pub fn pack_natural(&self, ps: &ParameterSet) -> DVector<f64> {
        let mut v = self.pack_transformed(ps);
        let mut j = self.p - 1 + self.k;
        for i in 0..self.p {
            v[j] = ps.theta[i];
            j += 1;
        }
        v[j] = ps.sigma;
        v
    }

    pub fn unpack_natural(&self, v: &DVector<f64>) -> ParameterSet {
        let mut ps = self.unpack_transformed(&{
            let mut t = v.clone();
            let mut j = self.p - 1 + self.k;
            for _ in 0..=self.p {
                t[j] = v[j].max(f64::MIN_POSITIVE).ln();
                j += 1;
            }
            t
        });
        // Round-trip through logs would lose exact zeros; restore directly.
        let mut j = self.p - 1 + self.k;
        for i in 0..self.p {
            ps.theta[i] = v[j];
            j += 1;
        }
        ps.sigma = v[j];
        ps
    }

    pub fn names(&self, spec: &ModelSpec) -> Vec<String> {
        let mut names = Vec::with_capacity(self.q());
        for i in self.free_lambda_indices() {
            names.push(format!("lambda[{}]", spec.indicator_names()[i]));
        }
        for n in spec.cause_names() {
            names.push(format!("beta[{n}]"));
        }
        for n in spec.indicator_names() {
            names.push(format!("theta[{n}]"));
        }
        names.push("sigma".into());
        names
    }
}

/// Residual cross-product `W = (Y - X Pi)'(Y - X Pi)`.
pub fn residual_cross_product(dataset: &Dataset, moments: &ImpliedMoments) -> Result<DMatrix<f64>> {
    if moments.pi.nrows() != dataset.k() || moments.pi.ncols() != dataset.p() {
        return Err(Error::Dimension(format!(
            "Pi is {}x{} but data implies {}x{}",
            moments.pi.nrows(),
            moments.pi.ncols(),
            dataset.k(),
            dataset.p()
        )));
    }
    let r = dataset.y() - dataset.x() * &moments.pi;
    Ok(r.transpose() * r)
}

/// Shared per-evaluation quantities.
struct MomentWork {
    omega_inv: DMatrix<f64>,
    log_det: f64,
    residuals: DMatrix<f64>,
    w: DMatrix<f64>,
}

fn moment_work(y: &DMatrix<f64>, x: &DMatrix<f64>, params: &ParameterSet) -> Result<MomentWork> {
    let m = implied_moments_unchecked(params);
    let eig = m.omega.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    let max = eig.eigenvalues.max();
    if min <= 0.0 || max / min > OMEGA_CONDITION_LIMIT {
        return Err(Error::Singular(format!(
            "Omega condition number exceeds {OMEGA_CONDITION_LIMIT:.0e}"
        )));
    }
    let log_det = eig.eigenvalues.iter().map(|l| l.ln()).sum();
    let inv_vals = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|l| 1.0 / l));
    let omega_inv = &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose();
    let residuals = y - x * &m.pi;
    let w = residuals.transpose() * &residuals;
    Ok(MomentWork { omega_inv, log_det, residuals, w })
}

/// Trace of `A B` for symmetric `A`, `B`.
fn trace_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Log-likelihood from raw matrices; shared by the public entry point, the
/// optimizer objective and tests that exercise degenerate shapes (for
/// example a single indicator, where the density reduces to the univariate
/// normal).
pub(crate) fn loglik_core(y: &DMatrix<f64>, x: &DMatrix<f64>, params: &ParameterSet) -> Result<f64> {
    let work = moment_work(y, x, params)?;
    let n = y.nrows() as f64;
    let p = y.ncols() as f64;
    Ok(-0.5 * n * work.log_det
        - 0.5 * trace_product(&work.omega_inv, &work.w)
        - 0.5 * p * n * (2.0 * std::f64::consts::PI).ln())
}

/// Log-likelihood of the dataset under the given parameters.
///
/// Fails when `Omega` is numerically singular (condition number above 1e12)
/// or `theta` has a nonpositive entry.
pub fn log_likelihood(dataset: &Dataset, spec: &ModelSpec, params: &ParameterSet) -> Result<f64> {
    params.check_dims(spec)?;
    params.require_positive_theta()?;
    if dataset.p() != spec.p() || dataset.k() != spec.k() {
        return Err(Error::Dimension(format!(
            "dataset is ({}, {}) but spec is ({}, {})",
            dataset.p(),
            dataset.k(),
            spec.p(),
            spec.k()
        )));
    }
    loglik_core(dataset.y(), dataset.x(), params)
}

/// Gradient pieces common to both parameter spaces.
///
/// With `G = (Omega^-1 W Omega^-1 - N Omega^-1) / 2` and
/// `D = X' R Omega^-1`:
///
/// ```text
/// dL/dbeta     = D lambda
/// dL/dlambda   = D' beta + 2 sigma^2 G lambda
/// dL/dtheta_i  = 2 theta_i G_ii
/// dL/dsigma    = 2 sigma lambda' G lambda
/// ```
///
/// The transformed space chains `log theta` and `log sigma` through their
/// exponentials.
fn gradient_pieces(
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    params: &ParameterSet,
) -> Result<(f64, DVector<f64>, DVector<f64>, DVector<f64>, f64)> {
    let work = moment_work(y, x, params)?;
    let n = y.nrows() as f64;
    let p = y.ncols() as f64;
    let loglik = -0.5 * n * work.log_det
        - 0.5 * trace_product(&work.omega_inv, &work.w)
        - 0.5 * p * n * (2.0 * std::f64::consts::PI).ln();

    let g_mat = (&work.omega_inv * &work.w * &work.omega_inv - &work.omega_inv * n) * 0.5;
    let d_mat = x.transpose() * &work.residuals * &work.omega_inv;

    let d_beta = &d_mat * &params.lambda;
    let g_lambda = &g_mat * &params.lambda;
    let s2 = params.sigma * params.sigma;
    let d_lambda = d_mat.transpose() * &params.beta + &g_lambda * (2.0 * s2);
    let d_theta = DVector::from_fn(params.p(), |i, _| 2.0 * params.theta[i] * g_mat[(i, i)]);
    let d_sigma = 2.0 * params.sigma * params.lambda.dot(&g_lambda);
    Ok((loglik, d_lambda, d_beta, d_theta, d_sigma))
}

/// Log-likelihood and its gradient in the optimizer's transformed space.
pub(crate) fn loglik_and_gradient_transformed(
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    layout: &ParamLayout,
    v: &DVector<f64>,
) -> Result<(f64, DVector<f64>)> {
    let params = layout.unpack_transformed(v);
    let (loglik, d_lambda, d_beta, d_theta, d_sigma) = gradient_pieces(y, x, &params)?;
    let mut grad = DVector::zeros(layout.q());
    let mut j = 0;
    for i in (0..layout.p).filter(|&i| i != layout.fixed) {
        grad[j] = d_lambda[i];
        j += 1;
    }
    for i in 0..layout.k {
        grad[j] = d_beta[i];
        j += 1;
    }
    for i in 0..layout.p {
        grad[j] = d_theta[i] * params.theta[i];
        j += 1;
    }
    grad[j] = d_sigma * params.sigma;
    Ok((loglik, grad))
}

/// Log-likelihood gradient in the natural free-parameter space.
pub(crate) fn gradient_natural(
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    layout: &ParamLayout,
    psi: &DVector<f64>,
) -> Result<DVector<f64>> {
    let params = layout.unpack_natural(psi);
    let (_, d_lambda, d_beta, d_theta, d_sigma) = gradient_pieces(y, x, &params)?;
    let mut grad = DVector::zeros(layout.q());
    let mut j = 0;
    for i in (0..layout.p).filter(|&i| i != layout.fixed) {
        grad[j] = d_lambda[i];
        j += 1;
    }
    for i in 0..layout.k {
        grad[j] = d_beta[i];
        j += 1;
    }
    for i in 0..layout.p {
        grad[j] = d_theta[i];
        j += 1;
    }
    grad[j] = d_sigma;
    Ok(grad)
}

/// Observed information (negative Hessian of the log-likelihood) on the
/// natural scale, by central differences of the analytic gradient.
pub(crate) fn observed_information(
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    layout: &ParamLayout,
    psi: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let q = layout.q();
    let mut hessian = DMatrix::zeros(q, q);
    for j in 0..q {
        let h = 1e-5 * psi[j].abs().max(1.0);
        let mut hi = psi.clone();
        hi[j] += h;
        let mut lo = psi.clone();
        lo[j] -= h;
        let col = (gradient_natural(y, x, layout, &hi)? - gradient_natural(y, x, layout, &lo)?) / (2.0 * h);
        hessian.set_column(j, &col);
    }
    // Symmetrize and negate: information = -Hessian of L.
    Ok((&hessian + hessian.transpose()) * -0.5)
}

/// Per-observation score vectors on the natural scale, as an `N x q` matrix.
///
/// Row `n` is the gradient of observation `n`'s log-density; the rows sum to
/// the total gradient.
pub(crate) fn observation_scores(
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    layout: &ParamLayout,
    params: &ParameterSet,
) -> Result<DMatrix<f64>> {
    let work = moment_work(y, x, params)?;
    let n = y.nrows();
    let q = layout.q();
    let omega_inv_lambda = &work.omega_inv * &params.lambda;
    let lambda_b = params.lambda.dot(&omega_inv_lambda);
    let s2 = params.sigma * params.sigma;
    let xb = x * &params.beta;

    let mut scores = DMatrix::zeros(n, q);
    for obs in 0..n {
        let r = work.residuals.row(obs).transpose();
        let a = &work.omega_inv * &r;
        let lambda_a = params.lambda.dot(&a);

        let mut j = 0;
        for i in (0..layout.p).filter(|&i| i != layout.fixed) {
            // d/dlambda_i: reduced-form part plus the Omega part.
            let g_lambda_i = 0.5 * (a[i] * lambda_a - omega_inv_lambda[i]);
            scores[(obs, j)] = xb[obs] * a[i] + 2.0 * s2 * g_lambda_i;
            j += 1;
        }
        for i in 0..layout.k {
            scores[(obs, j)] = lambda_a * x[(obs, i)];
            j += 1;
        }
        for i in 0..layout.p {
            scores[(obs, j)] = params.theta[i] * (a[i] * a[i] - work.omega_inv[(i, i)]);
            j += 1;
        }
        scores[(obs, j)] = params.sigma * (lambda_a * lambda_a - lambda_b);
    }
    Ok(scores)
}

fn initial_parameters(dataset: &Dataset, spec: &ModelSpec) -> Result<ParameterSet> {
    let x = dataset.x();
    let y = dataset.y();
    let n = dataset.n() as f64;
    let sxx = x.transpose() * x;
    let sxy = x.transpose() * y;
    let b_ols = sxx
        .lu()
        .solve(&sxy)
        .ok_or_else(|| Error::Singular("cause cross-product X'X".into()))?;
    let resid = y - x * &b_ols;
    let beta = b_ols.column(spec.fixed_loading_index()).into_owned();
    let theta = DVector::from_fn(spec.p(), |i, _| {
        (resid.column(i).norm_squared() / n).sqrt().max(1e-3)
    });
    Ok(ParameterSet {
        lambda: DVector::from_element(spec.p(), 1.0),
        beta,
        theta,
        sigma: 0.5,
    })
}

/// Fits the model by maximum likelihood.
///
/// Returns the best point found even when the iteration limit is hit
/// (`converged` is false in that case). Standard errors are computed for the
/// methods selected in the config; an indefinite observed information sets
/// `hessian_singular` and leaves them unavailable.
pub fn fit_ml(dataset: &Dataset, spec: &ModelSpec, config: &FitConfig) -> Result<FitResult> {
    if dataset.p() != spec.p() || dataset.k() != spec.k() {
        return Err(Error::Dimension(format!(
            "dataset is ({}, {}) but spec is ({}, {})",
            dataset.p(),
            dataset.k(),
            spec.p(),
            spec.k()
        )));
    }
    let layout = ParamLayout::from_spec(spec);
    let init = initial_parameters(dataset, spec)?;
    let v0 = layout.pack_transformed(&init);

    let y = dataset.y();
    let x = dataset.x();
    let objective = |v: &DVector<f64>| match loglik_and_gradient_transformed(y, x, &layout, v) {
        Ok((loglik, grad)) => (-loglik, -grad),
        Err(_) => (f64::INFINITY, DVector::zeros(layout.q())),
    };
    let opts = BfgsOptions {
        max_iterations: config.max_iterations,
        gradient_tolerance: config.gradient_tolerance,
        objective_tolerance: config.loglik_tolerance,
    };
    let outcome = optim::minimize(objective, v0, &opts);

    let params = layout.unpack_transformed(&outcome.x);
    let loglik = -outcome.value;
    let heywood = params.theta.iter().any(|&t| t < HEYWOOD_THRESHOLD);
    let params_standardized = crate::model::standardize_loadings(&params).ok();

    let mut result = FitResult {
        params,
        params_standardized,
        loglik,
        se_naive: None,
        se_mlm: None,
        se_mlr: None,
        mlm_scaling: None,
        significance: vec![Stars::None; layout.q()],
        converged: outcome.converged,
        iterations: outcome.iterations,
        gradient_norm: outcome.gradient_norm,
        hessian_singular: false,
        heywood,
    };

    crate::robust::attach_standard_errors(dataset, spec, config, &mut result);
    Ok(result)
}
