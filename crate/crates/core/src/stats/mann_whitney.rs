use statrs::distribution::{ContinuousCDF, Normal};

use super::{GroupTestResult, StatsError, StatsResult};

/// Largest `|a|·|b|` for which the exact null distribution is used.
pub const EXACT_PAIR_LIMIT: usize = 400;

/// Null distribution of U for sample sizes (n_a, n_b) without ties.
#[derive(Debug, Clone)]
pub struct ExactUDistribution {
    counts: Vec<u64>,
    total: u64,
}

impl ExactUDistribution {
    pub fn new(n_a: usize, n_b: usize) -> Self {
        // f[j][u]: arrangements of i items of a and j items of b with statistic u,
        // built row by row over i
        let max_u = n_a * n_b;
        let mut f: Vec<Vec<u64>> = (0..=n_b)
            .map(|_| {
                let mut v = vec![0u64; max_u + 1];
                v[0] = 1;
                v
            })
            .collect();
        for i in 1..=n_a {
            let mut next: Vec<Vec<u64>> = vec![vec![0u64; max_u + 1]; n_b + 1];
            // with j = 0 the statistic is 0
            next[0][0] = 1;
            for j in 1..=n_b {
                for u in 0..=i * j {
                    // largest element from a: it exceeds all j b's
                    let from_a = if u >= j { f[j][u - j] } else { 0 };
                    let from_b = next[j - 1][u];
                    next[j][u] = from_a + from_b;
                }
            }
            f = next;
        }
        let counts = f.swap_remove(n_b);
        let total = counts.iter().sum();
        ExactUDistribution { counts, total }
    }

    pub fn pmf(&self, u: usize) -> f64 {
        self.counts.get(u).map_or(0.0, |&c| c as f64 / self.total as f64)
    }

    pub fn cdf(&self, u: usize) -> f64 {
        let c: u64 = self.counts.iter().take(u + 1).sum();
        c as f64 / self.total as f64
    }

    pub fn sf_inclusive(&self, u: usize) -> f64 {
        let c: u64 = self.counts.iter().skip(u).sum();
        c as f64 / self.total as f64
    }

    /// Two-sided p: twice the smaller tail, capped at 1.
    pub fn two_sided(&self, u: usize) -> f64 {
        (2.0 * self.cdf(u).min(self.sf_inclusive(u))).min(1.0)
    }
}

/// Average ranks (1-based) of the pooled sample and the tie-group sizes.
fn ranks(pooled: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..pooled.len()).collect();
    idx.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut r = vec![0.0; pooled.len()];
    let mut ties = Vec::new();
    let mut s = 0;
    while s < idx.len() {
        let mut e = s + 1;
        while e < idx.len() && pooled[idx[e]] == pooled[idx[s]] {
            e += 1;
        }
        let avg = (s + 1 + e) as f64 / 2.0;
        for &i in &idx[s..e] {
            r[i] = avg;
        }
        if e - s > 1 {
            ties.push(e - s);
        }
        s = e;
    }
    (r, ties)
}

/// Two-sided normal-approximation p-value with tie and continuity correction.
/// `tie_term` is `Σ (t³ − t)` over tie groups.
pub fn mann_whitney_normal_p(u: f64, n_a: usize, n_b: usize, tie_term: f64) -> f64 {
    let (na, nb) = (n_a as f64, n_b as f64);
    let n = na + nb;
    let mu = na * nb / 2.0;
    let var = na * nb / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if !(var > 0.0) {
        return 1.0;
    }
    let z = ((u - mu).abs() - 0.5) / var.sqrt();
    let normal = Normal::standard();
    (2.0 * normal.sf(z)).min(1.0)
}

/// Mann–Whitney U test. U counts pairs `(x ∈ a, y ∈ b)` with `x > y`, ties
/// counting one half.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> StatsResult<GroupTestResult> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::TooFewObservations { needed: 0, got: 0 });
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(StatsError::InvalidInput("Mann-Whitney input contains non-finite values".into()));
    }
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (r, ties) = ranks(&pooled);
    let (na, nb) = (a.len(), b.len());
    let rank_sum: f64 = r[..na].iter().sum();
    let u = rank_sum - (na * (na + 1)) as f64 / 2.0;
    let exact = na * nb <= EXACT_PAIR_LIMIT && ties.is_empty();
    let p = if exact {
        ExactUDistribution::new(na, nb).two_sided(u as usize)
    } else {
        let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum();
        mann_whitney_normal_p(u, na, nb, tie_term)
    };
    Ok(GroupTestResult {
        method: if exact { "mann-whitney-exact" } else { "mann-whitney-normal" }.into(),
        statistic: u,
        p_value: p,
        df: None,
        n_a: na,
        n_b: Some(nb),
    })
}
