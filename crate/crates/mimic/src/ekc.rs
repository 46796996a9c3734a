//! Local polynomial regression with a pointwise confidence band, and the
//! model-implied cubic income trend.
//!
//! The smoother is classical loess: at each evaluation point, weighted least
//! squares of a degree-`d` polynomial over the span-nearest neighbors with
//! tricube weights, no robustness iterations. Writing the fit as a linear
//! smoother `yhat(g) = l(g)' y` gives the pointwise variance
//! `sigma^2 |l(g)|^2`; the noise variance is estimated globally from the
//! residuals with the usual effective-degrees-of-freedom correction
//! `delta1 = N - 2 tr(L) + tr(L'L)`. The band is `fitted +/- 1.96 se`.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimate::FitResult;
use crate::model::ModelSpec;
use crate::stats::linspace;

/// Cause-column names of the income polynomial, in power order.
pub const GRP_POWER_NAMES: [&str; 3] = ["grp_pc", "grp_pc2", "grp_pc3"];

/// Loess tuning: span fraction, polynomial degree and grid resolution.
#[derive(Debug, Clone)]
pub struct LoessConfig {
    /// Fraction of the sample in each local window, in (0, 1].
    pub span: f64,
    pub degree: usize,
    pub grid_size: usize,
}

impl Default for LoessConfig {
    fn default() -> Self {
        Self { span: 0.75, degree: 2, grid_size: 100 }
    }
}

/// A fitted curve with its 95% pointwise confidence band.
#[derive(Debug, Clone)]
pub struct CurveEstimate {
    /// Strictly increasing evaluation points.
    pub grid: DVector<f64>,
    pub fitted: DVector<f64>,
    pub ci_lower: DVector<f64>,
    pub ci_upper: DVector<f64>,
    /// The span fraction used.
    pub bandwidth: f64,
    pub degree: usize,
}

fn tricube(u: f64) -> f64 {
    if u < 1.0 {
        let t = 1.0 - u * u * u;
        t * t * t
    } else {
        0.0
    }
}

/// Smoother row `l` such that the fitted value at `x0` is `l' y`.
///
/// A singular local design (all in-window x equal) widens the window until
/// the weighted least squares is solvable; if even the full sample cannot
/// support the requested degree, the degree is lowered for this point.
fn smoother_row(xs: &[f64], x0: f64, q0: usize, degree: usize) -> Vec<f64> {
    let n = xs.len();
    let mut by_dist: Vec<usize> = (0..n).collect();
    by_dist.sort_by(|&a, &b| {
        let da = (xs[a] - x0).abs();
        let db = (xs[b] - x0).abs();
        da.partial_cmp(&db).expect("non-finite x")
    });

    let mut q = q0.min(n);
    let mut deg = degree;
    loop {
        let window = &by_dist[..q];
        let h = (xs[window[q - 1]] - x0).abs();
        if h == 0.0 {
            if q < n {
                q = (q + (q / 2).max(1)).min(n);
                continue;
            }
            // Every x equals x0; callers rule this out, but degrade safely.
            return vec![1.0 / n as f64; n];
        }
        let mut weights: Vec<f64> = window.iter().map(|&i| tricube((xs[i] - x0).abs() / h)).collect();
        if weights.iter().sum::<f64>() <= 0.0 {
            // All in-window points sit exactly on the boundary; any radially
            // decreasing kernel weights them equally.
            weights.iter_mut().for_each(|w| *w = 1.0);
        }

        // Weighted least squares on the basis (1, u, u^2, ...), u = (x - x0)/h.
        let cols = deg + 1;
        let mut m = DMatrix::zeros(cols, cols);
        for (&i, &w) in window.iter().zip(&weights) {
            let u = (xs[i] - x0) / h;
            let mut basis = DVector::zeros(cols);
            let mut pow = 1.0;
            for c in 0..cols {
                basis[c] = pow;
                pow *= u;
            }
            m.ger(w, &basis, &basis, 1.0);
        }
        let factor = Cholesky::new(m).filter(|chol| {
            // A pivot collapsing relative to the others means the window has
            // too little x variation for this degree even though the
            // factorization went through numerically.
            let diag = chol.l_dirty().diagonal();
            diag.min() > 1e-7 * diag.max()
        });
        match factor {
            Some(chol) => {
                let mut e1 = DVector::zeros(cols);
                e1[0] = 1.0;
                let a = chol.solve(&e1);
                let mut l = vec![0.0; n];
                for (&i, &w) in window.iter().zip(&weights) {
                    let u = (xs[i] - x0) / h;
                    let mut val = 0.0;
                    let mut pow = 1.0;
                    for c in 0..cols {
                        val += a[c] * pow;
                        pow *= u;
                    }
                    l[i] = w * val;
                }
                return l;
            }
            None => {
                if q < n {
                    q = (q + (q / 2).max(1)).min(n);
                } else if deg > 0 {
                    deg -= 1;
                } else {
                    // Degree 0 with positive total weight cannot be singular;
                    // unreachable, but fail soft.
                    return vec![1.0 / n as f64; n];
                }
            }
        }
    }
}

/// Fits a loess curve with a 95% pointwise confidence band on an equally
/// spaced grid spanning the data.
pub fn loess_fit(x: &DVector<f64>, y: &DVector<f64>, config: &LoessConfig) -> Result<CurveEstimate> {
    let n = x.len();
    if y.len() != n {
        return Err(Error::Dimension(format!("x has {n} points but y has {}", y.len())));
    }
    if n < config.degree + 2 {
        return Err(Error::Data(format!(
            "need at least degree + 2 = {} points, got {n}",
            config.degree + 2
        )));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite input".into()));
    }
    if !(config.span > 0.0 && config.span <= 1.0) {
        return Err(Error::Config(format!("span must be in (0, 1], got {}", config.span)));
    }
    if config.grid_size < 2 {
        return Err(Error::Config("grid_size must be at least 2".into()));
    }
    let xs: Vec<f64> = x.iter().copied().collect();
    let (lo, hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    if lo == hi {
        return Err(Error::Data("all x values are equal".into()));
    }

    let q0 = ((config.span * n as f64).ceil() as usize).max(config.degree + 1).min(n);

    // Global noise estimate from the smoother at the observation points.
    let mut trace_l = 0.0;
    let mut trace_ltl = 0.0;
    let mut rss = 0.0;
    for i in 0..n {
        let l = smoother_row(&xs, xs[i], q0, config.degree);
        trace_l += l[i];
        trace_ltl += l.iter().map(|v| v * v).sum::<f64>();
        let fitted_i: f64 = l.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
        rss += (y[i] - fitted_i).powi(2);
    }
    let delta1 = n as f64 - 2.0 * trace_l + trace_ltl;
    let dof = if delta1 >= 1.0 { delta1 } else { (n as f64 - trace_l).max(1.0) };
    let sigma2 = (rss / dof).max(0.0);

    let grid_points = linspace(lo, hi, config.grid_size);
    let g = config.grid_size;
    let mut fitted = DVector::zeros(g);
    let mut ci_lower = DVector::zeros(g);
    let mut ci_upper = DVector::zeros(g);
    for (gi, &x0) in grid_points.iter().enumerate() {
        let l = smoother_row(&xs, x0, q0, config.degree);
        let value: f64 = l.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
        let se = (sigma2 * l.iter().map(|v| v * v).sum::<f64>()).sqrt();
        fitted[gi] = value;
        ci_lower[gi] = value - 1.96 * se;
        ci_upper[gi] = value + 1.96 * se;
    }

    Ok(CurveEstimate {
        grid: DVector::from_vec(grid_points),
        fitted,
        ci_lower,
        ci_upper,
        bandwidth: config.span,
        degree: config.degree,
    })
}

/// Evaluates the income polynomial `b1 g + b2 g^2 + b3 g^3` on a grid.
pub fn cubic_trend(coefficients: [f64; 3], grid: &DVector<f64>) -> DVector<f64> {
    grid.map(|g| coefficients[0] * g + coefficients[1] * g * g + coefficients[2] * g * g * g)
}

/// Pulls the three income-polynomial coefficients out of a fitted model by
/// their conventional cause names (`grp_pc`, `grp_pc2`, `grp_pc3`) and
/// evaluates the trend.
pub fn cubic_trend_from_fit(
    fit: &FitResult,
    spec: &ModelSpec,
    grid: &DVector<f64>,
) -> Result<DVector<f64>> {
    let mut coefficients = [0.0; 3];
    for (slot, name) in GRP_POWER_NAMES.iter().enumerate() {
        let pos = spec
            .cause_names()
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| {
                Error::Spec(format!("income polynomial term '{name}' is not among the causes"))
            })?;
        coefficients[slot] = fit.params.beta[pos];
    }
    Ok(cubic_trend(coefficients, grid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, StandardNormal};

    fn config(span: f64, degree: usize) -> LoessConfig {
        LoessConfig { span, degree, grid_size: 100 }
    }

    #[test]
    fn reproduces_exact_line() {
        let mut rng = StdRng::seed_from_u64(1);
        let x = DVector::from_fn(60, |_, _| rng.random_range(-3.0..5.0));
        let y = x.map(|v| 2.0 * v + 1.0);
        for degree in [1, 2] {
            for span in [0.3, 0.75, 1.0] {
                let curve = loess_fit(&x, &y, &config(span, degree)).unwrap();
                let truth = curve.grid.map(|g| 2.0 * g + 1.0);
                let err = (&curve.fitted - &truth).amax();
                assert!(err < 1e-8, "degree {degree} span {span}: max err {err}");
            }
        }
    }

    #[test]
    fn reproduces_exact_quadratic() {
        let mut rng = StdRng::seed_from_u64(2);
        let x = DVector::from_fn(80, |_, _| rng.random_range(-2.0..2.0));
        let y = x.map(|v| v * v);
        let curve = loess_fit(&x, &y, &config(0.6, 2)).unwrap();
        let truth = curve.grid.map(|g| g * g);
        assert!((&curve.fitted - &truth).amax() < 1e-8);
    }

    #[test]
    fn band_encloses_fit_and_grid_increases() {
        let mut rng = StdRng::seed_from_u64(3);
        let x = DVector::from_fn(100, |_, _| rng.random_range(0.0f64..10.0));
        let y = x.map(|v| (v * 0.7).sin() + 0.1 * rng.random_range(-1.0..1.0));
        let curve = loess_fit(&x, &y, &LoessConfig::default()).unwrap();
        for i in 0..curve.grid.len() {
            assert!(curve.ci_lower[i] <= curve.fitted[i] && curve.fitted[i] <= curve.ci_upper[i]);
            if i > 0 {
                assert!(curve.grid[i] > curve.grid[i - 1]);
            }
        }
    }

    #[test]
    fn linear_smoother_additivity() {
        let mut rng = StdRng::seed_from_u64(4);
        let x = DVector::from_fn(70, |_, _| rng.random_range(-1.0f64..4.0));
        let y1 = DVector::from_fn(70, |i, _| (x[i]).cos() + rng.random_range(-0.2..0.2));
        let y2 = DVector::from_fn(70, |i, _| 0.5 * x[i] + rng.random_range(-0.2..0.2));
        let cfg = config(0.5, 2);
        let sum_fit = loess_fit(&x, &(&y1 + &y2), &cfg).unwrap();
        let fit1 = loess_fit(&x, &y1, &cfg).unwrap();
        let fit2 = loess_fit(&x, &y2, &cfg).unwrap();
        let diff = (&sum_fit.fitted - (&fit1.fitted + &fit2.fitted)).amax();
        assert!(diff < 1e-10, "additivity violated by {diff}");
    }

    #[test]
    fn band_covers_smooth_truth() {
        // sin(x) + N(0, 0.1^2), N = 500: the truth should sit inside the 95%
        // band at the vast majority of grid points.
        let mut covered = 0usize;
        let mut total = 0usize;
        for rep in 0..10 {
            let mut rng = StdRng::seed_from_u64(500 + rep);
            let x = DVector::from_fn(500, |_, _| rng.random_range(0.0..std::f64::consts::PI));
            let y = DVector::from_fn(500, |i, _| {
                let e: f64 = StandardNormal.sample(&mut rng);
                x[i].sin() + 0.1 * e
            });
            let curve = loess_fit(&x, &y, &config(0.3, 2)).unwrap();
            for i in 0..curve.grid.len() {
                let truth = curve.grid[i].sin();
                total += 1;
                if curve.ci_lower[i] <= truth && truth <= curve.ci_upper[i] {
                    covered += 1;
                }
            }
        }
        let rate = covered as f64 / total as f64;
        assert!(rate >= 0.90, "coverage {rate}");
    }

    #[test]
    fn band_narrows_with_sample_size() {
        let widths = |n: usize| -> f64 {
            let mut rng = StdRng::seed_from_u64(77);
            let x = DVector::from_fn(n, |_, _| rng.random_range(0.0f64..6.0));
            let y = DVector::from_fn(n, |i, _| {
                let e: f64 = StandardNormal.sample(&mut rng);
                (x[i] * 0.8).sin() + 0.3 * e
            });
            let curve = loess_fit(&x, &y, &config(0.75, 2)).unwrap();
            let mut w: Vec<f64> =
                (0..curve.grid.len()).map(|i| curve.ci_upper[i] - curve.ci_lower[i]).collect();
            w.sort_by(|a, b| a.partial_cmp(b).unwrap());
            w[w.len() / 2]
        };
        let ratio = widths(400) / widths(100);
        assert!(ratio < 0.75, "median width ratio {ratio}");
    }

    #[test]
    fn duplicated_x_widens_the_window() {
        // Many duplicate x values force the window-widening path; the fit
        // must still reproduce an exact line.
        let mut vals = vec![0.0; 8];
        vals.extend((1..=12).map(|i| i as f64 / 3.0));
        let x = DVector::from_vec(vals);
        let y = x.map(|v| 2.0 * v + 1.0);
        let curve = loess_fit(&x, &y, &config(0.2, 2)).unwrap();
        let truth = curve.grid.map(|g| 2.0 * g + 1.0);
        assert!((&curve.fitted - &truth).amax() < 1e-8);
    }

    #[test]
    fn input_validation() {
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!(loess_fit(&x, &y, &config(0.5, 2)).is_err()); // N < degree + 2
        let xc = DVector::from_element(10, 1.0);
        let yc = DVector::from_fn(10, |i, _| i as f64);
        assert!(loess_fit(&xc, &yc, &config(0.5, 1)).is_err()); // x all equal
        let x10 = DVector::from_fn(10, |i, _| i as f64);
        assert!(loess_fit(&x10, &yc, &config(0.0, 1)).is_err()); // bad span
    }

    #[test]
    fn cubic_trend_fixture_values() {
        let coeffs = [2.618, -6.671, 4.513];
        let grid = DVector::from_vec(vec![0.0, 1.0]);
        let trend = cubic_trend(coeffs, &grid);
        assert!(trend[0].abs() < 1e-15);
        assert!((trend[1] - 0.460).abs() < 1e-12, "trend(1) = {}", trend[1]);
    }

    #[test]
    fn cubic_trend_is_nonmonotone_on_positive_axis() {
        // The derivative b1 + 2 b2 g + 3 b3 g^2 has two positive real roots,
        // so the trend rises, falls, then rises again.
        let (b1, b2, b3) = (2.618f64, -6.671f64, 4.513f64);
        let (qa, qb, qc) = (3.0 * b3, 2.0 * b2, b1);
        let disc = qb * qb - 4.0 * qa * qc;
        assert!(disc > 0.0, "discriminant {disc}");
        let r1 = (-qb - disc.sqrt()) / (2.0 * qa);
        let r2 = (-qb + disc.sqrt()) / (2.0 * qa);
        assert!(r1 > 0.0 && r2 > 0.0, "roots {r1}, {r2}");

        let grid = DVector::from_vec(crate::stats::linspace(0.0, 1.2, 200));
        let trend = cubic_trend([b1, b2, b3], &grid);
        let mut signs = Vec::new();
        for i in 1..trend.len() {
            let s = (trend[i] - trend[i - 1]).signum();
            if signs.last() != Some(&s) {
                signs.push(s);
            }
        }
        assert_eq!(signs, vec![1.0, -1.0, 1.0], "direction pattern {signs:?}");
    }

    #[test]
    fn trend_from_fit_requires_power_terms() {
        let spec = ModelSpec::new(vec!["a", "b"], vec!["grp_pc", "grp_pc2"]).unwrap();
        let params = crate::model::ParameterSet::new(
            vec![1.0, 0.5],
            vec![0.3, -0.1],
            vec![1.0, 1.0],
            0.5,
        )
        .unwrap();
        let fit = FitResult {
            params,
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
        };
        let grid = DVector::from_vec(vec![0.0, 1.0]);
        assert!(cubic_trend_from_fit(&fit, &spec, &grid).is_err());
    }
}
