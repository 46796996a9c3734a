//! Naive, MLM-scaled and MLR-sandwich standard errors.
//!
//! Normality of the indicators is a strong assumption; when it fails the
//! inverse-information standard errors are miscalibrated even though the
//! point estimates stay consistent. Two corrections are provided:
//!
//! - MLR: the sandwich `A^-1 B A^-1`, with `A` the observed information and
//!   `B` the sum of outer products of the per-observation score vectors.
//! - MLM: naive standard errors scaled by the square root of a
//!   Satorra-Bentler factor `tr(U Gamma) / d`, where `Gamma` is the
//!   fourth-moment asymptotic covariance of the sample moments
//!   `(vec Pi_hat, vech S_v)` estimated from the reduced-form residuals,
//!   `U` is the normal-theory residual weight matrix
//!   `V - V Delta (Delta' V Delta)^-1 Delta' V`, and `d` is the degrees of
//!   freedom of the moment structure. Under correct normality the factor
//!   converges to one.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimate::{
    observation_scores, observed_information, significance_stars, FitConfig, FitResult,
    ParamLayout, Stars,
};
use crate::model::{implied_moments_unchecked, Dataset, ModelSpec, ParameterSet};

/// Which standard-error set to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeMethod {
    /// Square roots of the diagonal of the inverse observed information.
    Naive,
    /// Satorra-Bentler-type scaling of the naive standard errors.
    Mlm,
    /// Sandwich estimator `A^-1 B A^-1`.
    Mlr,
}

/// Standard errors of the free parameters for one method.
///
/// Requires a converged fit; MLM and MLR additionally require
/// `N >= q + 2` observations for the empirical moment covariances.
pub fn robust_se(
    dataset: &Dataset,
    spec: &ModelSpec,
    fit: &FitResult,
    method: SeMethod,
) -> Result<DVector<f64>> {
    if !fit.converged {
        return Err(Error::Estimation(
            "standard errors require a converged fit".into(),
        ));
    }
    let layout = ParamLayout::from_spec(spec);
    if matches!(method, SeMethod::Mlm | SeMethod::Mlr) && dataset.n() < layout.q() + 2 {
        return Err(Error::Estimation(format!(
            "N = {} is too small for fourth-moment estimation (need at least q + 2 = {})",
            dataset.n(),
            layout.q() + 2
        )));
    }
    let psi = layout.pack_natural(&fit.params);
    let info = observed_information(dataset.y(), dataset.x(), &layout, &psi)?;
    let chol = Cholesky::new(info)
        .ok_or_else(|| Error::Singular("observed information is not positive definite".into()))?;
    let info_inv = chol.inverse();
    let naive = sqrt_diagonal(&info_inv)?;

    match method {
        SeMethod::Naive => Ok(naive),
        SeMethod::Mlr => {
            let scores = observation_scores(dataset.y(), dataset.x(), &layout, &fit.params)?;
            let b = scores.transpose() * &scores;
            let cov = &info_inv * b * &info_inv;
            sqrt_diagonal(&cov)
        }
        SeMethod::Mlm => {
            let c = sb_scaling_factor(dataset, &layout, &fit.params)?;
            Ok(naive * c.sqrt())
        }
    }
}

fn sqrt_diagonal(cov: &DMatrix<f64>) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(cov.nrows());
    for i in 0..cov.nrows() {
        let v = cov[(i, i)];
        if v < 0.0 {
            return Err(Error::Singular(
                "covariance matrix has a negative diagonal entry".into(),
            ));
        }
        out[i] = v.sqrt();
    }
    Ok(out)
}

/// Fills the standard-error fields of a freshly fitted result, honoring the
/// config's method selection. Never fails: problems downgrade to flags and
/// absent SE sets.
pub(crate) fn attach_standard_errors(
    dataset: &Dataset,
    spec: &ModelSpec,
    config: &FitConfig,
    result: &mut FitResult,
) {
    if !result.converged {
        return;
    }
    if !(config.compute_naive || config.compute_mlm || config.compute_mlr) {
        return;
    }
    let layout = ParamLayout::from_spec(spec);
    let psi = layout.pack_natural(&result.params);
    let Ok(info) = observed_information(dataset.y(), dataset.x(), &layout, &psi) else {
        result.hessian_singular = true;
        return;
    };
    let Some(chol) = Cholesky::new(info) else {
        result.hessian_singular = true;
        return;
    };
    let info_inv = chol.inverse();
    let Ok(naive) = sqrt_diagonal(&info_inv) else {
        result.hessian_singular = true;
        return;
    };
    if config.compute_naive {
        result.se_naive = Some(naive.clone());
    }

    let enough = dataset.n() >= layout.q() + 2;
    if config.compute_mlr && enough {
        if let Ok(scores) = observation_scores(dataset.y(), dataset.x(), &layout, &result.params) {
            let b = scores.transpose() * &scores;
            let cov = &info_inv * b * &info_inv;
            if let Ok(se) = sqrt_diagonal(&cov) {
                result.se_mlr = Some(se);
            }
        }
    }
    if config.compute_mlm && enough {
        if let Ok(c) = sb_scaling_factor(dataset, &layout, &result.params) {
            result.mlm_scaling = Some(c);
            result.se_mlm = Some(&naive * c.sqrt());
        }
    }

    result.significance = (0..layout.q())
        .map(|j| {
            let mlm = result.se_mlm.as_ref().map(|v| v[j]);
            let mlr = result.se_mlr.as_ref().map(|v| v[j]);
            match (mlm, mlr) {
                (None, None) => significance_stars(psi[j], naive[j], naive[j]),
                (a, b) => significance_stars(psi[j], a.unwrap_or(0.0), b.unwrap_or(0.0)),
            }
        })
        .collect::<Vec<Stars>>();
}

/// Lower-triangle (column-major) half-vectorization of a symmetric matrix.
fn vech(m: &DMatrix<f64>) -> DVector<f64> {
    let p = m.nrows();
    let mut out = DVector::zeros(p * (p + 1) / 2);
    let mut c = 0;
    for j in 0..p {
        for i in j..p {
            out[c] = m[(i, j)];
            c += 1;
        }
    }
    out
}

/// Duplication matrix: `D vech(A) = vec(A)` for symmetric `A`.
fn duplication_matrix(p: usize) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(p * p, p * (p + 1) / 2);
    let mut c = 0;
    for j in 0..p {
        for i in j..p {
            d[(i + j * p, c)] = 1.0;
            d[(j + i * p, c)] = 1.0;
            c += 1;
        }
    }
    d
}

/// Jacobian of the moment map `psi -> (vec Pi, vech Omega)` at `params`,
/// with columns in the free-parameter order.
fn moment_jacobian(layout: &ParamLayout, params: &ParameterSet) -> DMatrix<f64> {
    let (p, k) = (layout.p, layout.k);
    let pstar = p * (p + 1) / 2;
    let mut delta = DMatrix::zeros(k * p + pstar, layout.q());
    let s2 = params.sigma * params.sigma;

    let mut col = 0;
    // Free loadings: dPi = beta e_b', dOmega = sigma^2 (e_b lambda' + lambda e_b').
    for b in (0..p).filter(|&i| i != layout.fixed) {
        for a in 0..k {
            delta[(b * k + a, col)] = params.beta[a];
        }
        let mut c = 0;
        for j in 0..p {
            for i in j..p {
                let mut v = 0.0;
                if i == b {
                    v += s2 * params.lambda[j];
                }
                if j == b {
                    v += s2 * params.lambda[i];
                }
                delta[(k * p + c, col)] = v;
                c += 1;
            }
        }
        col += 1;
    }
    // Structural coefficients: dPi = e_a lambda'.
    for a in 0..k {
        for j in 0..p {
            delta[(j * k + a, col)] = params.lambda[j];
        }
        col += 1;
    }
    // Indicator error SDs: dOmega = 2 theta_i E_ii.
    for i in 0..p {
        let mut c = 0;
        for jj in 0..p {
            for ii in jj..p {
                if ii == i && jj == i {
                    delta[(k * p + c, col)] = 2.0 * params.theta[i];
                }
                c += 1;
            }
        }
        col += 1;
    }
    // Structural error SD: dOmega = 2 sigma lambda lambda'.
    let mut c = 0;
    for j in 0..p {
        for i in j..p {
            delta[(k * p + c, col)] = 2.0 * params.sigma * params.lambda[i] * params.lambda[j];
            c += 1;
        }
    }
    delta
}

/// Satorra-Bentler scaling factor `tr(U Gamma) / d`.
///
/// Degrees of freedom `d = kp + p(p+1)/2 - q`; a just-identified model has
/// `d = 0` and no overidentifying restrictions to weight, so the factor is
/// defined as one there.
fn sb_scaling_factor(dataset: &Dataset, layout: &ParamLayout, params: &ParameterSet) -> Result<f64> {
    let (p, k) = (layout.p, layout.k);
    let n = dataset.n();
    let pstar = p * (p + 1) / 2;
    let m = k * p + pstar;
    let d = m as i64 - layout.q() as i64;
    if d < 0 {
        return Err(Error::Estimation(
            "more free parameters than sample moments".into(),
        ));
    }
    if d == 0 {
        return Ok(1.0);
    }

    let x = dataset.x();
    let y = dataset.y();
    let nf = n as f64;

    // Saturated (OLS) moments and their per-observation influence terms.
    let sxx = x.transpose() * x / nf;
    let sxx_inv = sxx
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("cause cross-product X'X".into()))?;
    let pi_hat = (&sxx_inv / nf) * (x.transpose() * y);
    let resid = y - x * &pi_hat;
    let s_v = resid.transpose() * &resid / nf;

    let mut gamma = DMatrix::<f64>::zeros(m, m);
    let mut g = DVector::<f64>::zeros(m);
    for obs in 0..n {
        let xr = &sxx_inv * (x.row(obs).transpose() * resid.row(obs));
        g.rows_mut(0, k * p).copy_from(&DVector::from_column_slice(xr.as_slice()));
        let rr = resid.row(obs).transpose() * resid.row(obs);
        g.rows_mut(k * p, pstar).copy_from(&vech(&(rr - &s_v)));
        gamma.ger(1.0 / nf, &g, &g, 1.0);
    }

    // Normal-theory weight matrix at the model-implied Omega.
    let omega = implied_moments_unchecked(params).omega;
    let omega_inv = omega
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("implied Omega".into()))?;
    let dup = duplication_matrix(p);
    let v_pi = omega_inv.kronecker(&sxx);
    let v_om = dup.transpose() * omega_inv.kronecker(&omega_inv) * &dup * 0.5;
    let mut v = DMatrix::zeros(m, m);
    v.view_mut((0, 0), (k * p, k * p)).copy_from(&v_pi);
    v.view_mut((k * p, k * p), (pstar, pstar)).copy_from(&v_om);

    let delta = moment_jacobian(layout, params);
    let vd = &v * &delta;
    let middle = delta.transpose() * &vd;
    let middle_inv = Cholesky::new(middle)
        .ok_or_else(|| Error::Singular("Delta' V Delta in the scaling factor".into()))?
        .inverse();
    let u = &v - &vd * middle_inv * vd.transpose();

    let trace: f64 = u.iter().zip(gamma.iter()).map(|(a, b)| a * b).sum();
    Ok((trace / d as f64).max(0.0))
}
