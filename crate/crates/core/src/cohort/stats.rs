//! Regression, rank test and agreement statistics.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

/// Largest sample size (per group) for which the rank test is exact.
pub const MWU_EXACT_MAX: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Regression {
    pub n: usize,
    pub slope: f64,
    pub intercept: f64,
    pub t_statistic: f64,
    /// Two-sided, slope ≠ 0.
    pub p_value: f64,
}

pub fn ols_regression(x: &[f64], y: &[f64]) -> Result<Regression> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::Statistics(format!("{} x values but {} y values", n, y.len())));
    }
    if n < 3 {
        return Err(Error::Statistics(format!("regression needs 3 points, got {n}")));
    }
    let nf = n as f64;
    let (mx, my) = (x.iter().sum::<f64>() / nf, y.iter().sum::<f64>() / nf);
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Statistics("x is constant".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let se = (sse / (nf - 2.0) / sxx).sqrt();
    let (t, p) = if se == 0.0 {
        if slope == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY.copysign(slope), 0.0)
        }
    } else {
        let t = slope / se;
        let dist = StudentsT::new(0.0, 1.0, nf - 2.0).map_err(|e| Error::Statistics(e.to_string()))?;
        (t, 2.0 * dist.cdf(-t.abs()))
    };
    Ok(Regression {
        n,
        slope,
        intercept,
        t_statistic: t,
        p_value: p,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankTest {
    /// Pairs with `a > b`, ties counting one half.
    pub u: f64,
    /// Two-sided.
    pub p_value: f64,
    pub exact: bool,
}

/// Midranks (1-based) of the pooled sample and the tie group sizes.
fn midranks(pooled: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..pooled.len()).collect();
    idx.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut ties = Vec::new();
    let mut s = 0;
    while s < idx.len() {
        let mut e = s + 1;
        while e < idx.len() && pooled[idx[e]] == pooled[idx[s]] {
            e += 1;
        }
        let r = (s + e + 1) as f64 / 2.0;
        for &i in &idx[s..e] {
            ranks[i] = r;
        }
        ties.push(e - s);
        s = e;
    }
    (ranks, ties)
}

pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<RankTest> {
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 {
        return Err(Error::Statistics("rank test needs two non-empty samples".into()));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::Statistics("rank test input contains NaN".into()));
    }
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let ra: f64 = ranks[..n].iter().sum();
    let u = ra - (n * (n + 1)) as f64 / 2.0;
    let (nf, mf) = (n as f64, m as f64);
    let mean = nf * mf / 2.0;
    if n <= MWU_EXACT_MAX && m <= MWU_EXACT_MAX {
        // doubled midranks are integers
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let dist = subset_sum_counts(&doubled, n);
        let total: f64 = dist.iter().sum();
        let offset = (n * (n + 1)) as f64;
        let dev = (u - mean).abs();
        let tail: f64 = dist
            .iter()
            .enumerate()
            .filter(|(s, c)| **c > 0.0 && ((*s as f64 - offset) / 2.0 - mean).abs() >= dev - 1e-9)
            .map(|(_, c)| c)
            .sum();
        return Ok(RankTest {
            u,
            p_value: (tail / total).min(1.0),
            exact: true,
        });
    }
    let big_n = nf + mf;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (big_n * (big_n - 1.0));
    let var = nf * mf / 12.0 * (big_n + 1.0 - tie_term);
    let p = if var <= 0.0 {
        1.0
    } else {
        // continuity corrected
        let z = ((u - mean).abs() - 0.5).max(0.0) / var.sqrt();
        let std = Normal::new(0.0, 1.0).map_err(|e| Error::Statistics(e.to_string()))?;
        (2.0 * std.cdf(-z)).min(1.0)
    };
    Ok(RankTest {
        u,
        p_value: p,
        exact: false,
    })
}

/// Number of `k`-subsets of `weights` per total weight.
fn subset_sum_counts(weights: &[usize], k: usize) -> Vec<f64> {
    let max: usize = weights.iter().sum();
    // table[j][s]: subsets of size j with sum s
    let mut table = vec![vec![0.0f64; max + 1]; k + 1];
    table[0][0] = 1.0;
    for &w in weights {
        for j in (1..=k).rev() {
            let (lo, hi) = table.split_at_mut(j);
            for s in (w..=max).rev() {
                hi[0][s] += lo[j - 1][s - w];
            }
        }
    }
    table.swap_remove(k)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Agreement {
    pub n: usize,
    pub bias: f64,
    pub lower_loa: f64,
    pub upper_loa: f64,
}

/// Bias of `a − b` with 95% limits of agreement.
pub fn bland_altman(a: &[f64], b: &[f64]) -> Result<Agreement> {
    if a.len() != b.len() {
        return Err(Error::Statistics(format!("paired samples differ in length: {} vs {}", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Statistics("agreement needs at least 2 pairs".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let bias = d.iter().sum::<f64>() / n as f64;
    let sd = (d.iter().map(|v| (v - bias).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    Ok(Agreement {
        n,
        bias,
        lower_loa: bias - 1.96 * sd,
        upper_loa: bias + 1.96 * sd,
    })
}
