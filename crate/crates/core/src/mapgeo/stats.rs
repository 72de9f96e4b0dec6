//! Rank tests with midranks for ties. Small samples get the exact permutation
//! distribution; larger ones a tie-corrected normal approximation.

use statrs::distribution::{ContinuousCDF, Normal};

use super::MapGeoError;

/// Largest total sample size (Mann-Whitney) or pair count (Wilcoxon) handled exactly.
const EXACT_LIMIT: usize = 12;

/// Slack for comparing statistics that are sums of half-integer midranks.
const TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestMethod {
    Exact,
    Normal,
}

impl TestMethod {
    pub fn name(self) -> &'static str {
        match self {
            TestMethod::Exact => "exact",
            TestMethod::Normal => "normal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    /// Two-sided.
    pub p: f64,
    pub method: TestMethod,
    /// Every paired difference was zero; `p` is set to 1.
    pub all_zero: bool,
}

/// 1-based ranks of `values`, tied values sharing the mean of their positions.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// `Σ (t³ - t)` over tie groups.
fn tie_term(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mut sum = 0.0;
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        while j + 1 < v.len() && v[j + 1] == v[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        sum += t * t * t - t;
        i = j + 1;
    }
    sum
}

fn normal_two_sided(deviation: f64, sd: f64) -> f64 {
    if sd <= 0.0 {
        return 1.0;
    }
    let z = ((deviation.abs() - 0.5).max(0.0)) / sd;
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * (1.0 - n.cdf(z))).min(1.0)
}

/// Mann-Whitney U: `U = min(U_a, U_b)`, p two-sided by distance of `U_a` from its mean.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<TestResult, MapGeoError> {
    if a.is_empty() || b.is_empty() {
        return Err(MapGeoError::EmptySample);
    }
    let (na, nb) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&pooled);
    let ra: f64 = ranks[..na].iter().sum();
    let ua = ra - (na * (na + 1)) as f64 / 2.0;
    let ub = (na * nb) as f64 - ua;
    let mu = (na * nb) as f64 / 2.0;
    let observed = (ua - mu).abs();
    let n = na + nb;
    if n <= EXACT_LIMIT {
        // Every way of choosing which pooled ranks belong to `a`.
        let (mut hits, mut total) = (0u64, 0u64);
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != na {
                continue;
            }
            let r: f64 = (0..n)
                .filter(|i| mask >> i & 1 == 1)
                .map(|i| ranks[i])
                .sum();
            let u = r - (na * (na + 1)) as f64 / 2.0;
            total += 1;
            if (u - mu).abs() >= observed - TOL {
                hits += 1;
            }
        }
        return Ok(TestResult {
            statistic: ua.min(ub),
            p: hits as f64 / total as f64,
            method: TestMethod::Exact,
            all_zero: false,
        });
    }
    let nf = n as f64;
    let var = (na * nb) as f64 / 12.0 * ((nf + 1.0) - tie_term(&pooled) / (nf * (nf - 1.0)));
    Ok(TestResult {
        statistic: ua.min(ub),
        p: normal_two_sided(ua - mu, var.max(0.0).sqrt()),
        method: TestMethod::Normal,
        all_zero: false,
    })
}

/// Paired Wilcoxon signed-rank test on `a - b`. Zero differences are dropped;
/// `W = min(W+, W-)`.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<TestResult, MapGeoError> {
    if a.len() != b.len() {
        return Err(MapGeoError::SizeMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MapGeoError::EmptySample);
    }
    let d: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|v| *v != 0.0)
        .collect();
    if d.is_empty() {
        return Ok(TestResult {
            statistic: 0.0,
            p: 1.0,
            method: TestMethod::Exact,
            all_zero: true,
        });
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks = midranks(&abs);
    let w_plus: f64 = ranks
        .iter()
        .zip(&d)
        .filter(|(_, v)| **v > 0.0)
        // an empty float sum is -0.0
        .fold(0.0, |acc, (r, _)| acc + r);
    let total: f64 = ranks.iter().sum();
    let w_minus = total - w_plus;
    let mu = total / 2.0;
    let observed = (w_plus - mu).abs();
    let n = d.len();
    if n <= EXACT_LIMIT {
        let mut hits = 0u64;
        for mask in 0u32..(1 << n) {
            let w: f64 = (0..n)
                .filter(|i| mask >> i & 1 == 1)
                .map(|i| ranks[i])
                .sum();
            if (w - mu).abs() >= observed - TOL {
                hits += 1;
            }
        }
        let p = hits as f64 / (1u64 << n) as f64;
        return Ok(TestResult {
            statistic: w_plus.min(w_minus),
            p,
            method: TestMethod::Exact,
            all_zero: false,
        });
    }
    let nf = n as f64;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term(&abs) / 48.0;
    Ok(TestResult {
        statistic: w_plus.min(w_minus),
        p: normal_two_sided(w_plus - mu, var.max(0.0).sqrt()),
        method: TestMethod::Normal,
        all_zero: false,
    })
}
