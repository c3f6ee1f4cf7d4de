//! Small statistical toolbox: exact Poisson mass, chi-square tests,
//! score confidence intervals, and least-squares line fits.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::gamma::ln_gamma;

/// Exact Poisson mass `P{N = k}` for mean `lambda`, computed in log space.
pub fn poisson_pmf(k: u64, lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    (k as f64 * lambda.ln() - lambda - ln_gamma(k as f64 + 1.0)).exp()
}

/// Outcome of a chi-square test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChiSquareOutcome {
    pub statistic: f64,
    pub dof: usize,
    pub critical: f64,
    pub p_value: f64,
    pub passed: bool,
}

fn chi_square_outcome(statistic: f64, dof: usize, significance: f64) -> ChiSquareOutcome {
    let dist = ChiSquared::new(dof as f64).expect("dof > 0");
    let critical = dist.inverse_cdf(1.0 - significance);
    let p_value = 1.0 - dist.cdf(statistic);
    ChiSquareOutcome {
        statistic,
        dof,
        critical,
        p_value,
        passed: statistic <= critical,
    }
}

/// Pool adjacent categories from both ends until every expected count is at
/// least `min_expected`. Returns (observed, expected) after pooling.
fn pool_bins(observed: &[f64], expected: &[f64], min_expected: f64) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(observed.len(), expected.len());
    let mut obs = Vec::new();
    let mut exp = Vec::new();
    let mut acc_o = 0.0;
    let mut acc_e = 0.0;
    for (&o, &e) in observed.iter().zip(expected) {
        acc_o += o;
        acc_e += e;
        if acc_e >= min_expected {
            obs.push(acc_o);
            exp.push(acc_e);
            acc_o = 0.0;
            acc_e = 0.0;
        }
    }
    // Remainder folds into the last kept bin.
    if acc_e > 0.0 {
        if let (Some(o), Some(e)) = (obs.last_mut(), exp.last_mut()) {
            *o += acc_o;
            *e += acc_e;
        } else {
            obs.push(acc_o);
            exp.push(acc_e);
        }
    }
    (obs, exp)
}

/// Pearson goodness-of-fit test of an observed histogram against expected
/// counts. Bins are pooled so each expected count is ≥ 5; degrees of freedom
/// are `bins - 1`.
pub fn chi_square_gof(
    observed: &[f64],
    expected: &[f64],
    significance: f64,
) -> ChiSquareOutcome {
    let (obs, exp) = pool_bins(observed, expected, 5.0);
    let statistic: f64 = obs
        .iter()
        .zip(&exp)
        .map(|(&o, &e)| (o - e).powi(2) / e)
        .sum();
    let dof = obs.len().saturating_sub(1).max(1);
    chi_square_outcome(statistic, dof, significance)
}

/// Histogram of observed nonnegative integer outcomes, indexed by value.
pub fn histogram(samples: impl IntoIterator<Item = u64>) -> Vec<f64> {
    let mut hist: Vec<f64> = Vec::new();
    for s in samples {
        let idx = s as usize;
        if idx >= hist.len() {
            hist.resize(idx + 1, 0.0);
        }
        hist[idx] += 1.0;
    }
    hist
}

/// Goodness-of-fit of integer samples against the Poisson law with the given
/// mean, at the given significance level.
pub fn poisson_gof(samples: &[u64], lambda: f64, significance: f64) -> ChiSquareOutcome {
    let hist = histogram(samples.iter().copied());
    let n = samples.len() as f64;
    let kmax = hist.len().max(1);
    let mut expected: Vec<f64> = (0..kmax as u64).map(|k| n * poisson_pmf(k, lambda)).collect();
    // Everything above the observed range goes into one overflow bin.
    let tail = n - expected.iter().sum::<f64>();
    expected.push(tail.max(0.0));
    let mut observed = hist;
    observed.push(0.0);
    chi_square_gof(&observed, &expected, significance)
}

/// Pearson independence test on an r×c contingency table.
/// Degrees of freedom are `(r-1)(c-1)` with marginals estimated from data.
pub fn chi_square_independence(table: &[Vec<f64>], significance: f64) -> ChiSquareOutcome {
    let rows = table.len();
    let cols = table[0].len();
    let row_tot: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let col_tot: Vec<f64> = (0..cols).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let n: f64 = row_tot.iter().sum();
    let mut statistic = 0.0;
    for i in 0..rows {
        for j in 0..cols {
            let e = row_tot[i] * col_tot[j] / n;
            if e > 0.0 {
                statistic += (table[i][j] - e).powi(2) / e;
            }
        }
    }
    let dof = (rows - 1) * (cols - 1);
    chi_square_outcome(statistic, dof.max(1), significance)
}

/// Two-sided Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: u64, n: u64, confidence: f64) -> (f64, f64) {
    assert!(n > 0);
    let z = standard_normal_quantile(0.5 + confidence / 2.0);
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Standard normal quantile (Acklam's rational approximation, |err| < 1.2e-8,
/// refined by one Newton step on the complementary error function).
pub fn standard_normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0);
    statrs::distribution::Normal::standard().inverse_cdf(p)
}

/// Least-squares line fit `y ≈ intercept + slope·x` with the coefficient of
/// determination.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n: usize,
}

pub fn fit_line(xs: &[f64], ys: &[f64]) -> LineFit {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    assert!(n >= 2, "need at least two points for a line fit");
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - (intercept + slope * x)).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 0.0 };
    LineFit {
        slope,
        intercept,
        r_squared,
        n,
    }
}
