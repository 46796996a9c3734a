//! Dense BFGS minimizer with a strong-Wolfe line search.
//!
//! Follows the standard construction in Nocedal & Wright, "Numerical
//! Optimization" (Algorithms 3.5, 3.6 and 6.1): bracketing plus zoom for the
//! step length, the inverse-Hessian update with a curvature guard, and a
//! scaling of the initial inverse Hessian after the first accepted step.
//! Objective evaluations returning non-finite values are treated as "too
//! far" by the line search, which lets callers encode domain boundaries by
//! returning infinity.

use nalgebra::{DMatrix, DVector};

const C1: f64 = 1e-4;
const C2: f64 = 0.9;
const MAX_LINE_SEARCH_STEPS: usize = 60;

#[derive(Debug, Clone)]
pub struct BfgsOptions {
    pub max_iterations: usize,
    /// Convergence threshold on the max-norm of the gradient.
    pub gradient_tolerance: f64,
    /// Convergence threshold on the relative objective change.
    pub objective_tolerance: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            gradient_tolerance: 1e-6,
            objective_tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsOutcome {
    pub x: DVector<f64>,
    pub value: f64,
    /// Max-norm of the gradient at the returned point.
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

struct LinePoint {
    alpha: f64,
    value: f64,
    slope: f64,
    gradient: DVector<f64>,
}

/// Minimizes `f` (which returns value and gradient) starting from `x0`.
///
/// Convergence requires both a small gradient max-norm and a small relative
/// objective change; a start that already satisfies the gradient criterion
/// returns immediately with zero iterations.
pub fn minimize<F>(f: F, x0: DVector<f64>, opts: &BfgsOptions) -> BfgsOutcome
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>),
{
    let n = x0.len();
    let mut x = x0;
    let (mut fx, mut g) = f(&x);
    assert!(fx.is_finite(), "objective must be finite at the starting point");

    if g.amax() < opts.gradient_tolerance {
        return BfgsOutcome {
            gradient_norm: g.amax(),
            x,
            value: fx,
            iterations: 0,
            converged: true,
        };
    }

    let mut h = DMatrix::<f64>::identity(n, n);
    let mut iterations = 0;
    let mut converged = false;

    for iter in 1..=opts.max_iterations {
        let mut d = -(&h * &g);
        if d.dot(&g) >= 0.0 {
            // Inverse Hessian lost positive definiteness; restart from steepest descent.
            h = DMatrix::identity(n, n);
            d = -g.clone();
        }

        let pt = match wolfe_search(&f, &x, fx, &g, &d) {
            Some(pt) => pt,
            None => {
                // Near the optimum the predicted decrease sits below the
                // floating-point resolution of the objective and sufficient
                // decrease can no longer be verified. Accept the full
                // quasi-Newton step on gradient reduction alone.
                let (tf, tg) = f(&(&x + &d));
                let noise = 1e-11 * (1.0 + fx.abs());
                if tf.is_finite() && tf <= fx + noise && tg.amax() < g.amax() {
                    LinePoint { alpha: 1.0, value: tf, slope: tg.dot(&d), gradient: tg }
                } else {
                    converged = g.amax() < opts.gradient_tolerance;
                    break;
                }
            }
        };

        let s = &d * pt.alpha;
        let y = &pt.gradient - &g;
        let rel_change = (fx - pt.value).abs() / fx.abs().max(1.0);

        x += &s;
        fx = pt.value;
        g = pt.gradient;
        iterations = iter;

        let sy = s.dot(&y);
        if iter == 1 {
            let yy = y.dot(&y);
            if sy > 0.0 && yy > 0.0 {
                h *= sy / yy;
            }
        }
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            let sh = &s * hy.transpose();
            h -= &sh * rho;
            h -= sh.transpose() * rho;
            h += &s * s.transpose() * (rho * rho * yhy + rho);
        }

        if g.amax() < opts.gradient_tolerance && rel_change < opts.objective_tolerance {
            converged = true;
            break;
        }
    }

    BfgsOutcome {
        gradient_norm: g.amax(),
        x,
        value: fx,
        iterations,
        converged,
    }
}

/// Strong-Wolfe line search: bracket then zoom.
fn wolfe_search<F>(
    f: &F,
    x: &DVector<f64>,
    f0: f64,
    g0: &DVector<f64>,
    d: &DVector<f64>,
) -> Option<LinePoint>
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>),
{
    let slope0 = g0.dot(d);
    if slope0 >= 0.0 {
        return None;
    }
    let eval = |alpha: f64| -> LinePoint {
        let (value, gradient) = f(&(x + d * alpha));
        let slope = gradient.dot(d);
        LinePoint { alpha, value, slope, gradient }
    };

    let mut prev = LinePoint {
        alpha: 0.0,
        value: f0,
        slope: slope0,
        gradient: g0.clone(),
    };
    let mut alpha = 1.0;
    for i in 0..MAX_LINE_SEARCH_STEPS {
        let cur = eval(alpha);
        if !cur.value.is_finite() {
            // Stepped outside the domain; pull back toward the last good point.
            alpha = 0.5 * (prev.alpha + alpha);
            continue;
        }
        if cur.value > f0 + C1 * alpha * slope0 || (i > 0 && cur.value >= prev.value) {
            return zoom(f, x, f0, slope0, d, prev, cur);
        }
        if cur.slope.abs() <= -C2 * slope0 {
            return Some(cur);
        }
        if cur.slope >= 0.0 {
            return zoom(f, x, f0, slope0, d, cur, prev);
        }
        alpha = (alpha * 2.0).min(1e6);
        prev = cur;
    }
    None
}

/// Zoom phase: maintains a bracket `[lo, hi]` whose `lo` endpoint has the
/// lowest sufficient-decrease value seen so far.
fn zoom<F>(
    f: &F,
    x: &DVector<f64>,
    f0: f64,
    slope0: f64,
    d: &DVector<f64>,
    mut lo: LinePoint,
    mut hi: LinePoint,
) -> Option<LinePoint>
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>),
{
    for _ in 0..MAX_LINE_SEARCH_STEPS {
        if (hi.alpha - lo.alpha).abs() < 1e-14 * lo.alpha.abs().max(1.0) {
            return if lo.alpha > 0.0 { Some(lo) } else { None };
        }
        // Quadratic interpolation from (lo.value, lo.slope, hi.value),
        // safeguarded toward bisection.
        let span = hi.alpha - lo.alpha;
        let denom = 2.0 * (hi.value - lo.value - lo.slope * span);
        let mut alpha = if denom.abs() > 1e-300 {
            lo.alpha - lo.slope * span * span / denom
        } else {
            lo.alpha + 0.5 * span
        };
        let (a_min, a_max) = if span > 0.0 {
            (lo.alpha, hi.alpha)
        } else {
            (hi.alpha, lo.alpha)
        };
        if !(alpha.is_finite()) || alpha <= a_min + 0.1 * span.abs() || alpha >= a_max - 0.1 * span.abs() {
            alpha = lo.alpha + 0.5 * span;
        }

        let cur = f(&(x + d * alpha));
        let cur = LinePoint {
            alpha,
            value: cur.0,
            slope: cur.1.dot(d),
            gradient: cur.1,
        };
        if !cur.value.is_finite() || cur.value > f0 + C1 * alpha * slope0 || cur.value >= lo.value {
            hi = cur;
        } else {
            if cur.slope.abs() <= -C2 * slope0 {
                return Some(cur);
            }
            if cur.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }
    if lo.alpha > 0.0 && lo.value < f0 {
        Some(lo)
    } else {
        None
    }
}
