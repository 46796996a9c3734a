//! Small scalar statistics shared across modules.

use statrs::distribution::{ContinuousCDF, Normal};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation (divisor `n`).
pub fn sd_population(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Sample standard deviation (divisor `n - 1`).
pub fn sd_sample(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)).sqrt()
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let (mx, my) = (mean(xs), mean(ys));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

/// Midranks (1-based, ties get the average of the ranks they span).
pub fn midranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("non-finite value in midranks"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of midranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    pearson(&midranks(xs), &midranks(ys))
}

/// Two-sided p-value of a standard-normal statistic.
pub fn normal_two_sided_p(z: f64) -> f64 {
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    2.0 * n.cdf(-z.abs())
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2);
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| lo + step * i as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sd_conventions_differ_on_small_samples() {
        let xs = [1.0, 2.0, 3.0];
        assert_relative_eq!(sd_sample(&xs), 1.0, epsilon = 1e-12);
        assert_relative_eq!(sd_population(&xs), (2.0f64 / 3.0).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn midranks_average_over_ties() {
        let r = midranks(&[3.0, 1.0, 3.0, 2.0]);
        assert_eq!(r, vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn spearman_perfect_monotone() {
        let xs = [1.0, 2.0, 5.0, 9.0];
        let ys = [0.1, 0.7, 0.8, 4.0];
        assert_relative_eq!(spearman(&xs, &ys), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn two_sided_p_matches_known_value() {
        // z = 1.959964 is the 97.5% point.
        assert_relative_eq!(normal_two_sided_p(1.959963985), 0.05, epsilon = 1e-8);
    }
}
