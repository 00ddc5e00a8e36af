//! Rigid (Kabsch) alignment and generalized Procrustes analysis without scaling.

use nalgebra::{Matrix3, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::particle_optim::model::mean_points;
use crate::particle_optim::ShapeModel;
use crate::surface::Vec3;

/// Proper rigid motion `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        RigidTransform::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ first`: apply `first`, then `self`.
    pub fn after(&self, first: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * first.rotation,
            translation: self.rotation * first.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Rotation angle in radians.
    pub fn angle(&self) -> f64 {
        ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidFit {
    pub transform: RigidTransform,
    /// `Σ‖R·s + t − g‖²` at the optimum.
    pub residual: f64,
    /// Source points are collinear, so the rotation about their line is arbitrary.
    pub degenerate: bool,
}

fn centroid(p: &[Vec3]) -> Vec3 {
    let mut c = Vec3::zeros();
    for v in p {
        c += v;
    }
    c / p.len() as f64
}

/// Least-squares proper rigid motion taking `source` onto `target`
/// (corresponding by index).
pub fn rigid_align(source: &[Vec3], target: &[Vec3]) -> Result<RigidFit> {
    if source.len() != target.len() {
        return Err(Error::Input(format!(
            "rigid_align: {} source points but {} target points",
            source.len(),
            target.len()
        )));
    }
    if source.len() < 3 {
        return Err(Error::Input("rigid_align needs at least 3 points".into()));
    }
    let cs = centroid(source);
    let ct = centroid(target);
    let mut h = Matrix3::zeros();
    let mut scatter = Matrix3::zeros();
    for (s, t) in source.iter().zip(target) {
        let a = s - cs;
        h += a * (t - ct).transpose();
        scatter += a * a.transpose();
    }
    let ev = SymmetricEigen::new(scatter).eigenvalues;
    let (lo, hi) = {
        let mut e = [ev[0], ev[1], ev[2]];
        e.sort_by(f64::total_cmp);
        (e[1], e[2])
    };
    let degenerate = hi <= 0.0 || lo <= 1e-12 * hi;

    let svd = h.svd(true, true);
    let u = svd.u.unwrap();
    let v_t = svd.v_t.unwrap();
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant();
    let mut fix = Matrix3::identity();
    if d < 0.0 {
        // flip the axis of the smallest singular value
        let mut k = 0;
        for i in 1..3 {
            if svd.singular_values[i] < svd.singular_values[k] {
                k = i;
            }
        }
        fix[(k, k)] = -1.0;
    }
    let rotation = v * fix * u.transpose();
    let translation = ct - rotation * cs;
    let transform = RigidTransform {
        rotation,
        translation,
    };
    let residual = source
        .iter()
        .zip(target)
        .map(|(s, t)| (transform.apply(*s) - t).norm_squared())
        .sum();
    Ok(RigidFit {
        transform,
        residual,
        degenerate,
    })
}

#[derive(Debug, Clone)]
pub struct ProcrustesResult {
    pub model: ShapeModel,
    pub mean: Vec<Vec3>,
    /// Total transform applied to each input sample.
    pub transforms: Vec<RigidTransform>,
    pub iterations: usize,
    pub converged: bool,
    /// Largest per-point movement of the mean at each iteration (mm).
    pub mean_displacements: Vec<f64>,
    pub degenerate_samples: usize,
}

/// Summary for reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcrustesSummary {
    pub iterations: usize,
    pub converged: bool,
    pub final_mean_displacement: f64,
    pub degenerate_samples: usize,
    pub tol: f64,
    pub max_iters: usize,
}

impl ProcrustesResult {
    pub fn summary(&self, tol: f64, max_iters: usize) -> ProcrustesSummary {
        ProcrustesSummary {
            iterations: self.iterations,
            converged: self.converged,
            final_mean_displacement: self.mean_displacements.last().copied().unwrap_or(0.0),
            degenerate_samples: self.degenerate_samples,
            tol,
            max_iters,
        }
    }
}

/// Iteratively align every sample to the running mean until the mean moves
/// less than `tol` (mm) at every point, or `max_iters` is reached.
pub fn generalized_procrustes(model: &ShapeModel, tol: f64, max_iters: usize) -> Result<ProcrustesResult> {
    if model.n_samples() < 2 {
        return Err(Error::Input("generalized Procrustes needs at least 2 samples".into()));
    }
    let mut samples: Vec<Vec<Vec3>> = model.samples().to_vec();
    let mut transforms = vec![RigidTransform::identity(); samples.len()];
    let mut mean = mean_points(&samples);
    let mut displacements = Vec::new();
    let mut converged = false;
    let mut degenerate_samples = 0;
    for _ in 0..max_iters.max(1) {
        let fits: Vec<RigidFit> = samples
            .par_iter()
            .map(|s| rigid_align(s, &mean))
            .collect::<Result<_>>()?;
        degenerate_samples = fits.iter().filter(|f| f.degenerate).count();
        for ((s, t), fit) in samples.iter_mut().zip(transforms.iter_mut()).zip(&fits) {
            for p in s.iter_mut() {
                *p = fit.transform.apply(*p);
            }
            *t = fit.transform.after(t);
        }
        let next = mean_points(&samples);
        let disp = next
            .iter()
            .zip(&mean)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        mean = next;
        displacements.push(disp);
        if disp < tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "Procrustes did not converge in {max_iters} iterations (last mean displacement {})",
            displacements.last().copied().unwrap_or(f64::NAN)
        );
    }
    Ok(ProcrustesResult {
        model: model.with_samples(samples)?,
        mean,
        transforms,
        iterations: displacements.len(),
        converged,
        mean_displacements: displacements,
        degenerate_samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(rng: &mut ChaCha8Rng, m: usize) -> Vec<Vec3> {
        (0..m)
            .map(|_| Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    fn rot(axis: Vec3, angle: f64) -> Matrix3<f64> {
        *Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).matrix()
    }

    fn moved(p: &[Vec3], t: &RigidTransform) -> Vec<Vec3> {
        p.iter().map(|q| t.apply(*q)).collect()
    }

    #[test]
    fn identity_for_equal_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = cloud(&mut rng, 10);
        let fit = rigid_align(&p, &p).unwrap();
        assert!((fit.transform.rotation - Matrix3::identity()).amax() < 1e-12);
        assert!(fit.transform.translation.norm() < 1e-12);
    }

    #[test]
    fn recovers_known_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = cloud(&mut rng, 20);
        let truth = RigidTransform {
            rotation: rot(Vec3::z(), 30f64.to_radians()),
            translation: Vec3::new(1.0, 2.0, 3.0),
        };
        let q = moved(&p, &truth);
        let fit = rigid_align(&p, &q).unwrap();
        assert!((fit.transform.rotation - truth.rotation).amax() < 1e-9);
        assert!((fit.transform.translation - truth.translation).amax() < 1e-9);
    }

    #[test]
    fn mirrored_target_gives_proper_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = cloud(&mut rng, 12);
        let q: Vec<Vec3> = p.iter().map(|v| Vec3::new(-v.x, v.y, v.z)).collect();
        let fit = rigid_align(&p, &q).unwrap();
        let r = fit.transform.rotation;
        assert!((r.determinant() - 1.0).abs() < 1e-10);
        assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-10);
        assert!(fit.residual > 0.0);
        // coarse grid over rotations never beats the optimum
        let cq = centroid(&q);
        let cp = centroid(&p);
        let steps = 24;
        for i in 0..steps {
            for j in 0..steps {
                for k in 0..steps {
                    let (a, b, c) = (
                        2.0 * std::f64::consts::PI * i as f64 / steps as f64,
                        std::f64::consts::PI * j as f64 / steps as f64,
                        2.0 * std::f64::consts::PI * k as f64 / steps as f64,
                    );
                    let r = rot(Vec3::z(), a) * rot(Vec3::y(), b) * rot(Vec3::z(), c);
                    let res: f64 = p.iter().zip(&q).map(|(s, g)| (r * (s - cp) - (g - cq)).norm_squared()).sum();
                    assert!(res >= fit.residual - 1e-9);
                }
            }
        }
    }

    #[test]
    fn collinear_source_is_flagged() {
        let p: Vec<Vec3> = (0..5).map(|i| Vec3::new(i as f64, 2.0 * i as f64, 0.5)).collect();
        let q: Vec<Vec3> = p.iter().map(|v| v + Vec3::new(1.0, 0.0, 0.0)).collect();
        let fit = rigid_align(&p, &q).unwrap();
        assert!(fit.degenerate);
        assert!((fit.transform.rotation.determinant() - 1.0).abs() < 1e-10);
        assert!(fit.residual < 1e-18 + 1e-12);
    }

    #[test]
    fn identical_shapes_in_different_poses_coincide() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let base = cloud(&mut rng, 15);
        let samples: Vec<Vec<Vec3>> = (0..5)
            .map(|i| {
                let t = RigidTransform {
                    rotation: rot(Vec3::new(1.0, i as f64, 0.5), 0.3 * i as f64),
                    translation: Vec3::new(i as f64, -(i as f64), 2.0),
                };
                moved(&base, &t)
            })
            .collect();
        let res = generalized_procrustes(&ShapeModel::unlabeled(samples), 1e-10, 100).unwrap();
        let s = res.model.samples();
        for i in 1..s.len() {
            for (a, b) in s[0].iter().zip(&s[i]) {
                assert!((a - b).norm() < 1e-8);
            }
        }
        // the mean is a rigid copy of the common shape
        let fit = rigid_align(&res.mean, &base).unwrap();
        assert!(fit.residual < 1e-14);
    }

    #[test]
    fn rotated_pair_coincides() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = cloud(&mut rng, 9);
        let t = RigidTransform {
            rotation: rot(Vec3::x(), 0.7),
            translation: Vec3::new(0.0, 5.0, 0.0),
        };
        let b = moved(&a, &t);
        let res = generalized_procrustes(&ShapeModel::unlabeled(vec![a, b]), 1e-10, 100).unwrap();
        let s = res.model.samples();
        for (p, q) in s[0].iter().zip(&s[1]) {
            assert!((p - q).norm() < 1e-8);
        }
    }

    #[test]
    fn aligned_model_is_a_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let base = cloud(&mut rng, 12);
        let first = generalized_procrustes(
            &ShapeModel::unlabeled(
                (0..4)
                    .map(|i| base.iter().map(|p| p * (1.0 + 0.05 * i as f64) + Vec3::new(0.1 * i as f64, 0.0, 0.0)).collect())
                    .collect(),
            ),
            1e-9,
            100,
        )
        .unwrap();
        let again = generalized_procrustes(&first.model, 1e-6, 100).unwrap();
        assert_eq!(again.iterations, 1);
        for t in &again.transforms {
            assert!(t.angle() < 1e-6);
            assert!(t.translation.norm() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn residual_not_worse_than_identity(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = cloud(&mut rng, 6);
            let q = cloud(&mut rng, 6);
            let fit = rigid_align(&p, &q).unwrap();
            let id: f64 = p.iter().zip(&q).map(|(a, b)| (a - b).norm_squared()).sum();
            prop_assert!(fit.residual <= id + 1e-9);
            prop_assert!((fit.transform.rotation.determinant() - 1.0).abs() < 1e-10);
        }

        #[test]
        fn procrustes_distances_invariant_to_rigid_perturbation(seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let base = cloud(&mut rng, 10);
            let samples: Vec<Vec<Vec3>> = (0..4)
                .map(|_| base.iter().map(|p| p + Vec3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2))).collect())
                .collect();
            let perturbed: Vec<Vec<Vec3>> = samples
                .iter()
                .map(|s| {
                    let t = RigidTransform {
                        rotation: rot(Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 1.0), rng.random_range(-3.0..3.0)),
                        translation: Vec3::new(rng.random_range(-9.0..9.0), 0.0, 1.0),
                    };
                    moved(s, &t)
                })
                .collect();
            let a = generalized_procrustes(&ShapeModel::unlabeled(samples), 1e-12, 500).unwrap();
            let b = generalized_procrustes(&ShapeModel::unlabeled(perturbed), 1e-12, 500).unwrap();
            let dist = |m: &ShapeModel, i: usize, j: usize| -> f64 {
                m.sample(i).iter().zip(m.sample(j)).map(|(p, q)| (p - q).norm_squared()).sum::<f64>().sqrt()
            };
            for i in 0..4 {
                for j in i + 1..4 {
                    prop_assert!((dist(&a.model, i, j) - dist(&b.model, i, j)).abs() < 1e-8);
                }
            }
        }

        #[test]
        fn mean_displacement_non_increasing(seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let base = cloud(&mut rng, 8);
            let samples: Vec<Vec<Vec3>> = (0..5)
                .map(|i| {
                    let t = RigidTransform {
                        rotation: rot(Vec3::new(0.3, 1.0, rng.random_range(-1.0..1.0)), 0.4 * i as f64),
                        translation: Vec3::zeros(),
                    };
                    moved(&base.iter().map(|p| p + Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), 0.0)).collect::<Vec<_>>(), &t)
                })
                .collect();
            let res = generalized_procrustes(&ShapeModel::unlabeled(samples), 1e-13, 200).unwrap();
            for w in res.mean_displacements.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12, "{:?}", res.mean_displacements);
            }
        }
    }
}
