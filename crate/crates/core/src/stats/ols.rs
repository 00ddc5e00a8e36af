use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::{StatsError, StatsResult};

const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub t_stats: Vec<f64>,
    pub p_values: Vec<f64>,
    pub residuals: Vec<f64>,
    pub rss: f64,
    pub df: usize,
}

/// A factorized design matrix, reusable across many responses.
#[derive(Debug, Clone)]
pub struct OlsDesign {
    q: DMatrix<f64>,
    r_inv: DMatrix<f64>,
    names: Vec<String>,
    t_dist: Option<StudentsT>,
}

impl OlsDesign {
    /// Factor `x` (n × k, intercept included by the caller). `names` labels
    /// the columns in error messages.
    pub fn new(x: &DMatrix<f64>, names: &[&str]) -> StatsResult<Self> {
        let (n, k) = x.shape();
        if n <= k {
            return Err(StatsError::TooFewObservations { needed: k, got: n });
        }
        let qr = x.clone().qr();
        let r = qr.r();
        for j in 0..k {
            let scale = x.column(j).norm();
            if scale == 0.0 || r[(j, j)].abs() < RANK_TOL * scale {
                return Err(StatsError::RankDeficient {
                    column: j,
                    name: names.get(j).map_or_else(|| format!("x{j}"), |s| s.to_string()),
                });
            }
        }
        let r_inv = r
            .solve_upper_triangular(&DMatrix::identity(k, k))
            .ok_or(StatsError::RankDeficient {
                column: k - 1,
                name: names.get(k - 1).map_or_else(|| format!("x{}", k - 1), |s| s.to_string()),
            })?;
        Ok(OlsDesign {
            q: qr.q(),
            r_inv,
            names: names.iter().map(|s| s.to_string()).collect(),
            t_dist: StudentsT::new(0.0, 1.0, (n - k) as f64).ok(),
        })
    }

    pub fn n(&self) -> usize {
        self.q.nrows()
    }

    pub fn k(&self) -> usize {
        self.q.ncols()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn fit(&self, y: &[f64]) -> StatsResult<OlsFit> {
        let n = self.n();
        let k = self.k();
        if y.len() != n {
            return Err(StatsError::InvalidInput(format!("response has {} values, design has {n} rows", y.len())));
        }
        let y = DVector::from_column_slice(y);
        let qty = self.q.transpose() * &y;
        let beta = &self.r_inv * &qty;
        let resid = &y - &self.q * &qty;
        let rss = resid.norm_squared();
        let df = n - k;
        let sigma2 = rss / df as f64;
        let mut se = Vec::with_capacity(k);
        let mut t = Vec::with_capacity(k);
        let mut p = Vec::with_capacity(k);
        for j in 0..k {
            // diag((XᵀX)⁻¹) = row norms of R⁻¹
            let s = (sigma2 * self.r_inv.row(j).norm_squared()).sqrt();
            let (tj, pj) = if s > 0.0 {
                let tj = beta[j] / s;
                (tj, self.two_sided(tj))
            } else if beta[j] != 0.0 {
                (f64::INFINITY.copysign(beta[j]), 0.0)
            } else {
                (0.0, 1.0)
            };
            se.push(s);
            t.push(tj);
            p.push(pj);
        }
        Ok(OlsFit {
            coefficients: beta.iter().copied().collect(),
            std_errors: se,
            t_stats: t,
            p_values: p,
            residuals: resid.iter().copied().collect(),
            rss,
            df,
        })
    }

    fn two_sided(&self, t: f64) -> f64 {
        match &self.t_dist {
            Some(d) if t.is_finite() => (2.0 * d.sf(t.abs())).min(1.0),
            _ => 0.0,
        }
    }
}

/// Ordinary least squares with classical standard errors and two-sided
/// t-test p-values.
pub fn ols_fit(design: &DMatrix<f64>, y: &[f64]) -> StatsResult<OlsFit> {
    let names: Vec<String> = (0..design.ncols()).map(|j| format!("x{j}")).collect();
    let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    OlsDesign::new(design, &refs)?.fit(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_design(rng: &mut ChaCha8Rng, n: usize, k: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, k, |_, j| if j == 0 { 1.0 } else { rng.sample(StandardNormal) })
    }

    #[test]
    fn exact_line() {
        let x = DMatrix::from_fn(10, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let y: Vec<f64> = (0..10).map(|i| 2.0 + 3.0 * i as f64).collect();
        let fit = ols_fit(&x, &y).unwrap();
        assert!((fit.coefficients[0] - 2.0).abs() < 1e-12);
        assert!((fit.coefficients[1] - 3.0).abs() < 1e-12);
        assert!(fit.rss < 1e-20);
        assert!(fit.p_values[1] < 1e-12);
    }

    #[test]
    fn matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_design(&mut rng, 12, 5);
        let y: Vec<f64> = (0..12).map(|_| rng.sample(StandardNormal)).collect();
        let fit = ols_fit(&x, &y).unwrap();
        let xtx = x.transpose() * &x;
        let xty = x.transpose() * DVector::from_column_slice(&y);
        let inv = xtx.clone().try_inverse().unwrap();
        let beta = xtx.lu().solve(&xty).unwrap();
        let s2 = fit.rss / 7.0;
        for j in 0..5 {
            assert!((fit.coefficients[j] - beta[j]).abs() < 1e-8);
            assert!((fit.std_errors[j] - (s2 * inv[(j, j)]).sqrt()).abs() < 1e-8);
        }
    }

    #[test]
    fn p_value_against_reference() {
        let x = DMatrix::from_row_slice(6, 2, &[1.0, 1.0, 1.0, 2.0, 1.0, 3.0, 1.0, 4.0, 1.0, 5.0, 1.0, 6.0]);
        let y = [1.1, 1.9, 3.4, 3.6, 5.8, 5.2];
        let fit = ols_fit(&x, &y).unwrap();
        // statsmodels
        assert!((fit.coefficients[1] - 0.9257142857142865).abs() < 1e-12);
        assert!((fit.std_errors[1] - 0.14752377878200676).abs() < 1e-12);
        assert!((fit.p_values[1] - 0.003292453509633904).abs() < 1e-10);
        assert!((fit.p_values[0] - 0.6743313761904839).abs() < 1e-10);
    }

    #[test]
    fn rank_deficiency_names_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut x = random_design(&mut rng, 20, 4);
        for i in 0..20 {
            x[(i, 3)] = 2.0 * x[(i, 1)] - x[(i, 2)];
        }
        let err = OlsDesign::new(&x, &["intercept", "a", "b", "c"]).unwrap_err();
        assert_eq!(err, StatsError::RankDeficient { column: 3, name: "c".into() });
    }

    #[test]
    fn too_few_rows() {
        let x = DMatrix::from_element(3, 3, 1.0);
        assert!(matches!(ols_fit(&x, &[1.0, 2.0, 3.0]), Err(StatsError::TooFewObservations { .. })));
    }

    #[test]
    fn noise_column_is_calibrated() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut rejections = 0;
        for _ in 0..500 {
            let x = random_design(&mut rng, 2000, 2);
            let y: Vec<f64> = (0..2000).map(|_| rng.sample(StandardNormal)).collect();
            if ols_fit(&x, &y).unwrap().p_values[1] < 0.05 {
                rejections += 1;
            }
        }
        let rate = rejections as f64 / 500.0;
        assert!((0.03..=0.07).contains(&rate), "rate {rate}");
    }

    proptest! {
        #[test]
        fn residuals_orthogonal_to_design(seed in 0u64..1000, n in 6usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_design(&mut rng, n, 4);
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let fit = ols_fit(&x, &y).unwrap();
            let r = DVector::from_column_slice(&fit.residuals);
            for j in 0..4 {
                prop_assert!(x.column(j).dot(&r).abs() < 1e-8);
            }
            for p in fit.p_values {
                prop_assert!((0.0..=1.0).contains(&p));
            }
        }
    }
}
