use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{StatsError, StatsResult};

#[derive(Debug, Clone)]
pub struct Pca {
    pub mean: DVector<f64>,
    /// Descending, divisor n − 1.
    pub eigenvalues: Vec<f64>,
    /// d × r, orthonormal columns.
    pub components: DMatrix<f64>,
    /// n × r.
    pub scores: DMatrix<f64>,
}

impl Pca {
    pub fn total_variance(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    /// Fraction of variance carried by the first `k` components.
    pub fn explained(&self, k: usize) -> f64 {
        let t = self.total_variance();
        if t > 0.0 {
            self.eigenvalues.iter().take(k).sum::<f64>() / t
        } else {
            0.0
        }
    }
}

fn centered(data: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let mean = data.row_mean().transpose();
    let mut c = data.clone();
    for mut row in c.row_iter_mut() {
        row -= mean.transpose();
    }
    (c, mean)
}

/// Principal component analysis of the rows of `data` (n × d).
///
/// Each component is signed so its largest-magnitude entry is positive.
pub fn pca(data: &DMatrix<f64>) -> StatsResult<Pca> {
    let (n, d) = data.shape();
    if n < 2 {
        return Err(StatsError::TooFewObservations { needed: 1, got: n });
    }
    let (c, mean) = centered(data);
    let svd = c.svd(true, true);
    let u = svd.u.unwrap();
    let v_t = svd.v_t.unwrap();
    let s = svd.singular_values;
    let r = s.len();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    let mut components = DMatrix::zeros(d, r);
    let mut scores = DMatrix::zeros(n, r);
    let mut eigenvalues = Vec::with_capacity(r);
    for (k, &i) in order.iter().enumerate() {
        let mut v = v_t.row(i).transpose();
        let mut sc = u.column(i) * s[i];
        let imax = v.iamax();
        if v[imax] < 0.0 {
            v = -v;
            sc = -sc;
        }
        components.set_column(k, &v);
        scores.set_column(k, &sc);
        eigenvalues.push(s[i] * s[i] / (n - 1) as f64);
    }
    Ok(Pca {
        mean,
        eigenvalues,
        components,
        scores,
    })
}

/// Sample-covariance eigenvalues in descending order, via the smaller Gram matrix.
fn eigenvalues(data: &DMatrix<f64>) -> Vec<f64> {
    let (n, d) = data.shape();
    let (c, _) = centered(data);
    let gram = if n <= d { &c * c.transpose() } else { c.transpose() * &c };
    let mut ev: Vec<f64> = SymmetricEigen::new(gram)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0) / (n - 1) as f64)
        .collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

/// Linear-interpolation percentile (`q` in [0, 100]) of unsorted data.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q / 100.0;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HornCriterion {
    #[default]
    Percentile95,
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HornResult {
    pub k: usize,
    pub observed: Vec<f64>,
    pub thresholds: Vec<f64>,
}

/// Horn's parallel analysis: the number of leading eigenvalues that exceed,
/// rank for rank, the criterion over column-permuted copies of `data`.
pub fn horn_parallel_analysis(
    data: &DMatrix<f64>,
    n_perms: usize,
    seed: u64,
    criterion: HornCriterion,
) -> StatsResult<HornResult> {
    let (n, d) = data.shape();
    if n < 3 {
        return Err(StatsError::TooFewObservations { needed: 2, got: n });
    }
    if n_perms == 0 {
        return Err(StatsError::InvalidInput("n_perms must be at least 1".into()));
    }
    let observed = eigenvalues(data);
    let perm_ev: Vec<Vec<f64>> = (0..n_perms)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(p as u64);
            let mut shuffled = data.clone();
            let mut col: Vec<f64> = vec![0.0; n];
            for j in 0..d {
                col.copy_from_slice(data.column(j).as_slice());
                col.shuffle(&mut rng);
                shuffled.set_column(j, &DVector::from_column_slice(&col));
            }
            eigenvalues(&shuffled)
        })
        .collect();
    let thresholds: Vec<f64> = (0..observed.len())
        .map(|r| {
            let vals: Vec<f64> = perm_ev.iter().map(|e| e[r]).collect();
            match criterion {
                HornCriterion::Percentile95 => percentile(&vals, 95.0),
                HornCriterion::Mean => vals.iter().sum::<f64>() / vals.len() as f64,
            }
        })
        .collect();
    let k = observed
        .iter()
        .zip(&thresholds)
        .take_while(|(o, t)| o > t)
        .count();
    Ok(HornResult {
        k,
        observed,
        thresholds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn noise(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, d, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn line_has_one_component() {
        let dir = DVector::from_column_slice(&[1.0, 2.0, -0.5]);
        let data = DMatrix::from_fn(20, 3, |i, j| 3.0 + (i as f64 - 7.0) * dir[j]);
        let p = pca(&data).unwrap();
        assert!(p.eigenvalues[0] > 1.0);
        assert!(p.eigenvalues[1] < 1e-10 && p.eigenvalues[2] < 1e-10);
    }

    #[test]
    fn isotropic_cloud() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = pca(&noise(&mut rng, 10000, 3)).unwrap();
        let spread = (p.eigenvalues[0] - p.eigenvalues[2]) / p.eigenvalues[2];
        assert!(spread < 0.1, "{spread}");
    }

    #[test]
    fn reconstruction_and_orthonormality() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (n, d) in [(30, 5), (5, 30)] {
            let data = noise(&mut rng, n, d);
            let p = pca(&data).unwrap();
            let mut back = &p.scores * p.components.transpose();
            for mut row in back.row_iter_mut() {
                row += p.mean.transpose();
            }
            assert!((back - &data).amax() < 1e-9);
            let g = p.components.transpose() * &p.components;
            assert!((g - DMatrix::identity(p.components.ncols(), p.components.ncols())).amax() < 1e-10);
            for w in p.eigenvalues.windows(2) {
                assert!(w[0] >= w[1]);
            }
            // eigenvalues agree with the Gram route
            let ev = eigenvalues(&data);
            for (a, b) in p.eigenvalues.iter().zip(&ev) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn percentile_interpolates() {
        let v = [4.0, 1.0, 3.0, 2.0, 5.0];
        assert_eq!(percentile(&v, 50.0), 3.0);
        assert_eq!(percentile(&v, 95.0), 4.8);
        assert_eq!(percentile(&v, 100.0), 5.0);
    }

    #[test]
    fn horn_on_noise_keeps_nothing() {
        let mut zero = 0;
        for seed in 0..40 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let data = noise(&mut rng, 60, 10);
            if horn_parallel_analysis(&data, 50, seed, HornCriterion::Percentile95).unwrap().k == 0 {
                zero += 1;
            }
        }
        assert!(zero >= 36, "{zero}/40");
    }

    #[test]
    fn horn_finds_rank_one_signal() {
        let mut ones = 0;
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
            let dir: Vec<f64> = (0..10).map(|_| rng.sample(StandardNormal)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            let amp: Vec<f64> = (0..60).map(|_| 10.0 * rng.sample::<f64, _>(StandardNormal)).collect();
            let data = DMatrix::from_fn(60, 10, |i, j| amp[i] * dir[j] / norm + rng.sample::<f64, _>(StandardNormal));
            if horn_parallel_analysis(&data, 50, seed, HornCriterion::Percentile95).unwrap().k == 1 {
                ones += 1;
            }
        }
        assert!(ones >= 18, "{ones}/20");
    }

    #[test]
    fn horn_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = noise(&mut rng, 30, 8);
        let a = horn_parallel_analysis(&data, 20, 9, HornCriterion::Mean).unwrap();
        let b = horn_parallel_analysis(&data, 20, 9, HornCriterion::Mean).unwrap();
        assert_eq!(a, b);
    }
}
