use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fdr_bh, CovariateRow, OlsDesign, StatsError, StatsResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointStat {
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub t_stats: Vec<f64>,
    /// Raw two-sided p-value of the diagnosis coefficient.
    pub p_diagnosis: f64,
    /// Response had no variation; diagnosis p set to 1.
    pub constant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointwiseStats {
    pub columns: Vec<String>,
    pub diagnosis_index: usize,
    pub q: f64,
    pub points: Vec<PointStat>,
    pub significant: Vec<bool>,
}

impl PointwiseStats {
    pub fn n_significant(&self) -> usize {
        self.significant.iter().filter(|&&s| s).count()
    }

    pub fn beta_diagnosis(&self, m: usize) -> f64 {
        self.points[m].coefficients[self.diagnosis_index]
    }

    pub fn se_diagnosis(&self, m: usize) -> f64 {
        self.points[m].std_errors[self.diagnosis_index]
    }

    pub fn t_diagnosis(&self, m: usize) -> f64 {
        self.points[m].t_stats[self.diagnosis_index]
    }

    pub fn p_values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.p_diagnosis).collect()
    }

    pub fn constant_points(&self) -> Vec<usize> {
        (0..self.points.len()).filter(|&m| self.points[m].constant).collect()
    }
}

/// Design `[1, age, sex, etiv, diagnosis]`, with handedness appended when
/// requested. Returns the matrix, column names and the diagnosis column.
pub fn covariate_design(covars: &[CovariateRow], with_handedness: bool) -> StatsResult<(DMatrix<f64>, Vec<String>, usize)> {
    let mut names = vec!["intercept", "age", "sex", "etiv", "diagnosis"];
    if with_handedness {
        names.push("handedness");
    }
    let k = names.len();
    let mut x = DMatrix::zeros(covars.len(), k);
    for (i, c) in covars.iter().enumerate() {
        c.validate()?;
        x[(i, 0)] = 1.0;
        x[(i, 1)] = c.age;
        x[(i, 2)] = f64::from(c.sex);
        x[(i, 3)] = c.etiv;
        x[(i, 4)] = f64::from(c.diagnosis);
        if with_handedness {
            let h = c.handedness.ok_or_else(|| {
                StatsError::InvalidInput(format!("subject row {i} has no handedness but the design includes it"))
            })?;
            x[(i, 5)] = f64::from(h);
        }
    }
    Ok((x, names.into_iter().map(String::from).collect(), 4))
}

/// Per-point linear models of asymmetry on covariates, followed by BH-FDR on
/// the diagnosis p-values. `asym` is N × M (subjects × points).
pub fn pointwise_linear_models(
    asym: &DMatrix<f64>,
    covars: &[CovariateRow],
    q: f64,
    with_handedness: bool,
) -> StatsResult<PointwiseStats> {
    let (n, m) = asym.shape();
    if covars.len() != n {
        return Err(StatsError::InvalidInput(format!("{} covariate rows for {n} subjects", covars.len())));
    }
    let (x, names, diag) = covariate_design(covars, with_handedness)?;
    let name_refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    let design = OlsDesign::new(&x, &name_refs)?;
    let k = design.k();
    let points: Vec<PointStat> = (0..m)
        .into_par_iter()
        .map(|j| {
            let y: Vec<f64> = asym.column(j).iter().copied().collect();
            let first = y[0];
            if y.iter().all(|&v| v == first) {
                let mut coefficients = vec![0.0; k];
                coefficients[0] = first;
                return Ok(PointStat {
                    coefficients,
                    std_errors: vec![0.0; k],
                    t_stats: vec![0.0; k],
                    p_diagnosis: 1.0,
                    constant: true,
                });
            }
            let fit = design.fit(&y)?;
            Ok(PointStat {
                p_diagnosis: fit.p_values[diag],
                coefficients: fit.coefficients,
                std_errors: fit.std_errors,
                t_stats: fit.t_stats,
                constant: false,
            })
        })
        .collect::<StatsResult<_>>()?;
    let constant = points.iter().filter(|p| p.constant).count();
    if constant > 0 {
        log::warn!("{constant} points have constant asymmetry; their diagnosis p-value is set to 1");
    }
    let p: Vec<f64> = points.iter().map(|p| p.p_diagnosis).collect();
    Ok(PointwiseStats {
        columns: names,
        diagnosis_index: diag,
        q,
        significant: fdr_bh(&p, q),
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::ols_fit;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn covariates(rng: &mut ChaCha8Rng, n: usize) -> Vec<CovariateRow> {
        (0..n)
            .map(|i| CovariateRow {
                age: 70.0 + 8.0 * rng.sample::<f64, _>(StandardNormal),
                sex: rng.random_range(0..2),
                etiv: 1.5e6 + 1.5e5 * rng.sample::<f64, _>(StandardNormal),
                diagnosis: (i % 2) as u8,
                handedness: Some(u8::from(rng.random_bool(0.1))),
            })
            .collect()
    }

    #[test]
    fn single_point_reduces_to_ols() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cov = covariates(&mut rng, 30);
        let y: Vec<f64> = (0..30).map(|i| 0.3 * (i % 2) as f64 + rng.sample::<f64, _>(StandardNormal)).collect();
        let asym = DMatrix::from_column_slice(30, 1, &y);
        let s = pointwise_linear_models(&asym, &cov, 0.05, false).unwrap();
        let (x, _, _) = covariate_design(&cov, false).unwrap();
        let fit = ols_fit(&x, &y).unwrap();
        assert_eq!(s.points[0].p_diagnosis, fit.p_values[4]);
        assert_eq!(s.significant[0], fit.p_values[4] <= 0.05);
    }

    #[test]
    fn planted_points_are_found() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 200;
        let m = 512;
        let cov = covariates(&mut rng, n);
        let asym = DMatrix::from_fn(n, m, |i, j| {
            let shift = if j < 50 && cov[i].diagnosis == 1 { 0.5 } else { 0.0 };
            shift + 0.3 * rng.sample::<f64, _>(StandardNormal)
        });
        let s = pointwise_linear_models(&asym, &cov, 0.05, false).unwrap();
        let hits = (0..50).filter(|&j| s.significant[j]).count();
        assert!(hits >= 40, "{hits}");
    }

    #[test]
    fn permuted_labels_control_false_rejections() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 60;
        let m = 64;
        let base = covariates(&mut rng, n);
        let asym = DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut total = 0;
        for _ in 0..50 {
            let mut labels: Vec<u8> = base.iter().map(|c| c.diagnosis).collect();
            labels.shuffle(&mut rng);
            let cov: Vec<CovariateRow> = base
                .iter()
                .zip(&labels)
                .map(|(c, &d)| CovariateRow { diagnosis: d, ..*c })
                .collect();
            total += pointwise_linear_models(&asym, &cov, 0.05, false).unwrap().n_significant();
        }
        assert!(total as f64 / 50.0 <= 0.05 * m as f64);
    }

    #[test]
    fn rescaling_covariates_keeps_p() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cov = covariates(&mut rng, 40);
        let asym = DMatrix::from_fn(40, 8, |_, _| rng.sample::<f64, _>(StandardNormal));
        let a = pointwise_linear_models(&asym, &cov, 0.05, false).unwrap();
        let scaled: Vec<CovariateRow> = cov
            .iter()
            .map(|c| CovariateRow {
                age: c.age * 12.0,
                etiv: c.etiv * 1e-3,
                ..*c
            })
            .collect();
        let b = pointwise_linear_models(&asym, &scaled, 0.05, false).unwrap();
        for (x, y) in a.points.iter().zip(&b.points) {
            assert!((x.p_diagnosis - y.p_diagnosis).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_column_is_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cov = covariates(&mut rng, 20);
        let mut asym = DMatrix::from_fn(20, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        asym.column_mut(1).fill(0.25);
        let s = pointwise_linear_models(&asym, &cov, 0.05, false).unwrap();
        assert_eq!(s.constant_points(), vec![1]);
        assert_eq!(s.points[1].p_diagnosis, 1.0);
        assert!(!s.significant[1]);
    }

    #[test]
    fn handedness_is_opt_in() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cov = covariates(&mut rng, 20);
        let asym = DMatrix::from_fn(20, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        assert_eq!(pointwise_linear_models(&asym, &cov, 0.05, false).unwrap().columns.len(), 5);
        let with = pointwise_linear_models(&asym, &cov, 0.05, true).unwrap();
        assert_eq!(with.columns.last().unwrap(), "handedness");
        let missing: Vec<CovariateRow> = cov.iter().map(|c| CovariateRow { handedness: None, ..*c }).collect();
        assert!(pointwise_linear_models(&asym, &missing, 0.05, true).is_err());
    }
}
