use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};

use super::{GroupTestResult, StatsError, StatsResult};

fn mean_and_scatter(x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let mean = x.row_mean().transpose();
    let mut c = x.clone();
    for mut row in c.row_iter_mut() {
        row -= mean.transpose();
    }
    let scatter = c.transpose() * &c;
    (mean, scatter)
}

/// Two-sample Hotelling T² with pooled covariance; p from the F transformation.
pub fn hotelling_t2(a: &DMatrix<f64>, b: &DMatrix<f64>) -> StatsResult<GroupTestResult> {
    let k = a.ncols();
    if b.ncols() != k || k == 0 {
        return Err(StatsError::InvalidInput(format!(
            "score dimensions differ or are empty: {} vs {}",
            k,
            b.ncols()
        )));
    }
    let (na, nb) = (a.nrows(), b.nrows());
    if na < 1 || nb < 1 || na + nb < k + 3 {
        return Err(StatsError::TooFewObservations {
            needed: k + 2,
            got: na + nb,
        });
    }
    let (ma, sa) = mean_and_scatter(a);
    let (mb, sb) = mean_and_scatter(b);
    let dof = (na + nb - 2) as f64;
    let pooled = (sa + sb) / dof;
    let diff = ma - mb;
    let chol = pooled.clone().cholesky().ok_or(StatsError::SingularCovariance { k })?;
    let l = chol.l();
    let (lo, hi) = l
        .diagonal()
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(lo > 1e-7 * hi) {
        return Err(StatsError::SingularCovariance { k });
    }
    let sol = chol.solve(&diff);
    let scale = (na * nb) as f64 / (na + nb) as f64;
    let t2 = scale * diff.dot(&sol);
    let n = (na + nb) as f64;
    let kf = k as f64;
    let d2 = n - kf - 1.0;
    let f = t2 * d2 / (kf * dof);
    let p = FisherSnedecor::new(kf, d2)
        .map(|d| d.sf(f))
        .unwrap_or(f64::NAN)
        .clamp(0.0, 1.0);
    Ok(GroupTestResult {
        method: "hotelling-t2".into(),
        statistic: t2,
        p_value: p,
        df: Some((kf, d2)),
        n_a: na,
        n_b: Some(nb),
    })
}

/// Pooled-variance two-sample t statistic and its two-sided p-value.
pub fn pooled_t(a: &[f64], b: &[f64]) -> StatsResult<(f64, f64)> {
    let (na, nb) = (a.len(), b.len());
    if na + nb < 3 || na == 0 || nb == 0 {
        return Err(StatsError::TooFewObservations { needed: 2, got: na + nb });
    }
    let ma = a.iter().sum::<f64>() / na as f64;
    let mb = b.iter().sum::<f64>() / nb as f64;
    let ss: f64 = a.iter().map(|v| (v - ma).powi(2)).sum::<f64>() + b.iter().map(|v| (v - mb).powi(2)).sum::<f64>();
    let df = (na + nb - 2) as f64;
    let sp2 = ss / df;
    if !(sp2 > 0.0) {
        return Err(StatsError::ZeroVariance);
    }
    let t = (ma - mb) / (sp2 * (1.0 / na as f64 + 1.0 / nb as f64)).sqrt();
    let p = StudentsT::new(0.0, 1.0, df).map_or(f64::NAN, |d| (2.0 * d.sf(t.abs())).min(1.0));
    Ok((t, p))
}
