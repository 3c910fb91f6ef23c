//! Summary statistics, least-squares lines and two-sample significance tests.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; zero for fewer than two values.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn std_dev(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    /// Welch's unequal-variance t-test.
    Means,
    /// Pooled two-proportion z-test on 0/1 outcomes.
    Proportions,
}

/// Two-sided p-value for a difference between samples `a` and `b`.
pub fn significance(a: &[f64], b: &[f64], kind: TestKind) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::domain("significance test needs two non-empty samples"));
    }
    match kind {
        TestKind::Means => Ok(welch_t(a, b)),
        TestKind::Proportions => {
            if a.iter().chain(b).any(|&x| x != 0.0 && x != 1.0) {
                return Err(Error::domain("proportion test needs 0/1 outcomes"));
            }
            let succ_a = a.iter().sum::<f64>();
            let succ_b = b.iter().sum::<f64>();
            Ok(two_proportion_z(succ_a, a.len() as f64, succ_b, b.len() as f64))
        }
    }
}

fn welch_t(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let (qa, qb) = (variance(a) / na, variance(b) / nb);
    let se2 = qa + qb;
    if se2 == 0.0 {
        return if ma == mb { 1.0 } else { 0.0 };
    }
    let t = (ma - mb) / se2.sqrt();
    let term = |q: f64, n: f64| if n > 1.0 { q * q / (n - 1.0) } else { 0.0 };
    let df = se2 * se2 / (term(qa, na) + term(qb, nb));
    match StudentsT::new(0.0, 1.0, df) {
        Ok(dist) => (2.0 * dist.sf(t.abs())).min(1.0),
        Err(_) => normal_two_sided(t),
    }
}

fn normal_two_sided(z: f64) -> f64 {
    let std = Normal::standard();
    (2.0 * std.cdf(-z.abs())).min(1.0)
}

fn two_proportion_z(succ_a: f64, na: f64, succ_b: f64, nb: f64) -> f64 {
    let (pa, pb) = (succ_a / na, succ_b / nb);
    let pooled = (succ_a + succ_b) / (na + nb);
    let se = (pooled * (1.0 - pooled) * (1.0 / na + 1.0 / nb)).sqrt();
    if se == 0.0 {
        return if pa == pb { 1.0 } else { 0.0 };
    }
    normal_two_sided((pa - pb) / se)
}

/// Ordinary least-squares line `y = slope * x + intercept`.
pub fn ols_fit(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    if points.len() < 2 {
        return Err(Error::domain("a line fit needs at least two points"));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::domain("a line fit needs at least two distinct x values"));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}
