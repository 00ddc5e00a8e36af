//! Entropy estimates of the two terms of the correspondence cost and their
//! gradients.

use nalgebra::DMatrix;

use crate::surface::Vec3;

/// Lower bound on any Parzen bandwidth (mm).
pub const SIGMA_FLOOR: f64 = 1e-9;
/// Absolute lower bound on the shape-space regularizer (mm²).
pub const REG_FLOOR: f64 = 1e-12;
/// Pairs closer than this are treated as coincident.
pub const COINCIDENT: f64 = 1e-12;

/// Per-particle bandwidths: `fraction` times the distance to the k-th nearest
/// other particle, k = min(k, M−1).
pub fn adaptive_sigma(points: &[Vec3], k: usize, fraction: f64) -> Vec<f64> {
    let m = points.len();
    if m < 2 {
        return vec![1.0; m];
    }
    let k = k.clamp(1, m - 1);
    let mut d = Vec::with_capacity(m - 1);
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            d.clear();
            d.extend(
                points
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, q)| (p - q).norm_squared()),
            );
            let (_, kth, _) = d.select_nth_unstable_by(k - 1, f64::total_cmp);
            (fraction * kth.sqrt()).max(SIGMA_FLOOR)
        })
        .collect()
}

/// Distance from each particle to its nearest neighbour.
pub fn nearest_neighbor_distances(points: &[Vec3]) -> Vec<f64> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, q)| (p - q).norm_squared())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect()
}

/// Result of a Parzen entropy evaluation.
#[derive(Debug, Clone)]
pub struct SamplingEval {
    pub entropy: f64,
    /// ∂H/∂x_k in ambient coordinates (not projected).
    pub gradient: Vec<Vec3>,
    /// Number of particle pairs closer than [`COINCIDENT`].
    pub coincident: usize,
}

/// Row-wise log-sum-exp of `−d²/(2σ_k²)` and the softmax weights.
fn kernel_rows(points: &[Vec3], sigma: &[f64]) -> (Vec<f64>, Vec<f64>, usize) {
    let m = points.len();
    let mut logw = vec![0.0; m * m];
    let mut lse = vec![0.0; m];
    let mut coincident = 0;
    for k in 0..m {
        let inv = 1.0 / (2.0 * sigma[k] * sigma[k]);
        let row = &mut logw[k * m..(k + 1) * m];
        let mut mx = f64::NEG_INFINITY;
        for j in 0..m {
            if j == k {
                row[j] = f64::NEG_INFINITY;
                continue;
            }
            let d2 = (points[k] - points[j]).norm_squared();
            if j > k && d2 < COINCIDENT * COINCIDENT {
                coincident += 1;
            }
            row[j] = -d2 * inv;
            mx = mx.max(row[j]);
        }
        let mut s = 0.0;
        for (j, v) in row.iter().enumerate() {
            if j != k {
                s += (v - mx).exp();
            }
        }
        lse[k] = mx + s.ln();
    }
    (logw, lse, coincident)
}

fn entropy_from_lse(lse: &[f64], sigma: &[f64]) -> f64 {
    let m = lse.len();
    let ln_m1 = ((m - 1) as f64).ln();
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut total = 0.0;
    for k in 0..m {
        let log_p = lse[k] - ln_m1 - (two_pi * sigma[k] * sigma[k]).ln();
        total -= log_p;
    }
    total / m as f64
}

/// Parzen-window entropy of a particle set with isotropic 2-D Gaussian
/// kernels of per-particle width `sigma`:
///
/// `H = −(1/M) Σ_k log[(1/(M−1)) Σ_{j≠k} G(x_k − x_j; σ_k)]`.
pub fn sampling_entropy(points: &[Vec3], sigma: &[f64]) -> f64 {
    assert!(points.len() >= 2 && sigma.len() == points.len());
    let (_, lse, _) = kernel_rows(points, sigma);
    entropy_from_lse(&lse, sigma)
}

/// Entropy and its gradient with bandwidths held fixed. Each particle's
/// gradient is clamped to `max_gradient` in norm.
pub fn sampling_entropy_and_gradient(points: &[Vec3], sigma: &[f64], max_gradient: f64) -> SamplingEval {
    let m = points.len();
    assert!(m >= 2 && sigma.len() == m);
    let (logw, lse, coincident) = kernel_rows(points, sigma);
    let entropy = entropy_from_lse(&lse, sigma);
    let inv_s2: Vec<f64> = sigma.iter().map(|s| 1.0 / (s * s)).collect();
    let mut gradient = vec![Vec3::zeros(); m];
    for k in 0..m {
        let mut g = Vec3::zeros();
        for j in 0..m {
            if j == k {
                continue;
            }
            let s_kj = (logw[k * m + j] - lse[k]).exp();
            let s_jk = (logw[j * m + k] - lse[j]).exp();
            let w = s_kj * inv_s2[k] + s_jk * inv_s2[j];
            g += (points[k] - points[j]) * w;
        }
        g /= m as f64;
        let n = g.norm();
        if n > max_gradient {
            g *= max_gradient / n;
        }
        gradient[k] = g;
    }
    if coincident > 0 {
        log::warn!("{coincident} coincident particle pair(s); repulsion capped");
    }
    SamplingEval {
        entropy,
        gradient,
        coincident,
    }
}

/// Stack particle sets into an N × 3M shape matrix.
pub fn shape_matrix(samples: &[Vec<Vec3>]) -> DMatrix<f64> {
    let n = samples.len();
    let m = samples.first().map_or(0, |s| s.len());
    DMatrix::from_fn(n, 3 * m, |i, c| samples[i][c / 3][c % 3])
}

/// Column-centred copy of `z` and `Σ_c Var_c / D`, the mean diagonal of the
/// sample covariance.
fn centre(z: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let n = z.nrows();
    let mut y = z.clone();
    let mut ss = 0.0;
    for mut col in y.column_iter_mut() {
        let mut s = 0.0;
        for v in col.iter() {
            s += v;
        }
        let mean = s / n as f64;
        for v in col.iter_mut() {
            *v -= mean;
            ss += *v * *v;
        }
    }
    let denom = (n.saturating_sub(1)).max(1) as f64 * z.ncols().max(1) as f64;
    (y, ss / denom)
}

/// Regularizer `relative × mean diagonal of Cov`, floored.
pub fn shape_regularizer(z: &DMatrix<f64>, relative: f64) -> f64 {
    (relative * centre(z).1).max(REG_FLOOR)
}

#[derive(Debug, Clone)]
pub struct CorrespondenceEval {
    pub entropy: f64,
    /// N × 3M gradient with respect to the uncentred shape matrix.
    pub gradient: Option<DMatrix<f64>>,
}

fn dual_gram(y: &DMatrix<f64>, reg: f64) -> DMatrix<f64> {
    let n = y.nrows();
    let mut k = y * y.transpose();
    k /= (n - 1) as f64;
    for i in 0..n {
        k[(i, i)] += reg;
    }
    k
}

/// Gaussian shape-space entropy `½ log det(YYᵀ/(N−1) + reg·I_N)` on the
/// column-centred shape matrix `Y`. This is `½ log det(Cov + reg·I_3M)` up to
/// the constant `½ (3M − N) log reg`.
pub fn correspondence_entropy(z: &DMatrix<f64>, reg: f64, with_gradient: bool) -> CorrespondenceEval {
    let n = z.nrows();
    assert!(n >= 2, "shape-space entropy needs at least two samples");
    let (y, _) = centre(z);
    let k = dual_gram(&y, reg);
    let chol = k
        .cholesky()
        .expect("regularized Gram matrix is positive definite");
    let l = chol.l_dirty();
    let mut logdet_half = 0.0;
    for i in 0..n {
        logdet_half += l[(i, i)].ln();
    }
    let gradient = with_gradient.then(|| {
        let mut g = chol.solve(&y);
        g /= (n - 1) as f64;
        g
    });
    CorrespondenceEval {
        entropy: logdet_half,
        gradient,
    }
}

/// Gradient of the shape-space entropy of `z`, N × 3M.
pub fn correspondence_entropy_gradient(z: &DMatrix<f64>, reg: f64) -> DMatrix<f64> {
    correspondence_entropy(z, reg, true).gradient.unwrap()
}
