use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::entropy::{self, adaptive_sigma, nearest_neighbor_distances};
use super::{OptimizerConfig, ParticleSet, SampleLabel, ShapeModel};
use crate::error::{Error, Result};
use crate::surface::geometry::closest_point_on_face;
use crate::surface::{MirrorPlane, Surface, SurfacePoint, Vec3};

/// Initial particle offset from the centroid, relative to the bounding diagonal.
const INIT_OFFSET: f64 = 0.05;
/// First split offset (single particle), relative to the bounding diagonal.
const FIRST_SPLIT: f64 = 0.02;
/// Later split offsets, relative to the nearest-neighbour distance.
const SPLIT_FRACTION: f64 = 0.1;
/// Allowed increase of Q for an accepted step.
const Q_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub particles: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Backtracking exhausted without finding a decrease.
    pub stalled: bool,
    pub backtracks: usize,
    pub final_q: f64,
    pub final_max_displacement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerReport {
    pub surfaces: usize,
    pub particles: usize,
    /// Weight of H(Z) after scaling.
    pub alpha: f64,
    pub rounds: Vec<RoundReport>,
    pub converged: bool,
    pub final_q: f64,
    pub final_sampling_entropy: f64,
    pub final_correspondence_entropy: Option<f64>,
    pub total_iterations: usize,
    /// Largest Q increase of any accepted step (bounded by the acceptance tolerance).
    pub max_q_increase: f64,
    pub max_projection_residual: f64,
    pub coincident_warnings: usize,
}

/// Optimized particles for every surface plus the run summary.
#[derive(Debug, Clone)]
pub struct Optimized {
    pub particles: Vec<ParticleSet>,
    pub report: OptimizerReport,
}

impl Optimized {
    pub fn model(&self, labels: Vec<SampleLabel>) -> Result<ShapeModel> {
        ShapeModel::from_particle_sets(labels, &self.particles)
    }

    pub fn positions(&self) -> Vec<Vec<Vec3>> {
        self.particles.iter().map(|p| p.positions()).collect()
    }
}

/// Tangent-projected gradient of the sampling entropy of one particle set.
/// Ascent on this field spreads the particles over the surface.
pub fn sampling_entropy_gradient(
    surface: &Surface,
    ps: &ParticleSet,
    sigma: &[f64],
    max_gradient: f64,
) -> Vec<Vec3> {
    let pos = ps.positions();
    let eval = entropy::sampling_entropy_and_gradient(&pos, sigma, max_gradient);
    ps.particles
        .iter()
        .zip(eval.gradient)
        .map(|(p, g)| surface.tangent_component(p, g))
        .collect()
}

/// Seed one particle per surface and run the split-and-relax schedule up to
/// `config.m_target` particles.
pub fn initialize_particles(surfaces: &[Surface], config: &OptimizerConfig) -> Result<Vec<ParticleSet>> {
    Ok(run(surfaces, config)?.particles)
}

/// Full correspondence optimization over a cohort of at least two surfaces.
pub fn optimize_correspondences(surfaces: &[Surface], config: &OptimizerConfig) -> Result<Optimized> {
    if surfaces.len() < 2 {
        return Err(Error::Input(format!(
            "correspondence optimization needs at least 2 surfaces, got {}",
            surfaces.len()
        )));
    }
    run(surfaces, config)
}

struct Mirror(Option<MirrorPlane>);

impl Mirror {
    fn apply(&self, v: Vec3) -> Vec3 {
        match &self.0 {
            Some(p) => p.reflect_vector(v),
            None => v,
        }
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

fn run(surfaces: &[Surface], config: &OptimizerConfig) -> Result<Optimized> {
    let rounds = config.validate()?;
    if surfaces.is_empty() {
        return Err(Error::Input("no surfaces to optimize".into()));
    }
    let mirror = Mirror(config.init_mirror);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let r0 = mirror.apply(random_unit(&mut rng));
    let mut sets: Vec<Vec<SurfacePoint>> = surfaces
        .par_iter()
        .map(|s| {
            let p = s.mesh().vertex_centroid() + r0 * (INIT_OFFSET * s.mesh().bounding_diagonal());
            vec![s.project(p)]
        })
        .collect();

    let diag = surfaces.iter().map(|s| s.mesh().bounding_diagonal()).sum::<f64>() / surfaces.len() as f64;
    let mut opt = Relaxer {
        surfaces,
        config,
        reg_floor: (config.regularization_floor * diag).powi(2),
        alpha: config.effective_alpha(surfaces.len()),
        report: OptimizerReport {
            surfaces: surfaces.len(),
            particles: 1,
            alpha: config.effective_alpha(surfaces.len()),
            rounds: Vec::new(),
            converged: true,
            final_q: 0.0,
            final_sampling_entropy: 0.0,
            final_correspondence_entropy: None,
            total_iterations: 0,
            max_q_increase: f64::NEG_INFINITY,
            max_projection_residual: 0.0,
            coincident_warnings: 0,
        },
    };

    for round in 1..=rounds {
        let m = sets[0].len();
        let dirs: Vec<(Vec3, Vec3)> = (0..m)
            .map(|_| {
                let a = random_unit(&mut rng);
                let b = random_unit(&mut rng);
                (mirror.apply(a), mirror.apply(b))
            })
            .collect();
        sets = surfaces
            .par_iter()
            .zip(sets.par_iter())
            .map(|(s, ps)| split(s, ps, &dirs))
            .collect();
        let last = round == rounds;
        let rr = opt.relax(&mut sets);
        log::info!(
            "round {round}: M={} iterations={} converged={} Q={:.6}",
            rr.particles,
            rr.iterations,
            rr.converged,
            rr.final_q
        );
        if last {
            opt.report.converged = rr.converged;
        }
        opt.report.rounds.push(rr);
    }

    let mut report = opt.report;
    report.particles = sets[0].len();
    if report.max_q_increase == f64::NEG_INFINITY {
        report.max_q_increase = 0.0;
    }
    if sets[0].len() >= 2 {
        let positions: Vec<Vec<Vec3>> = sets.iter().map(|s| s.iter().map(|p| p.position).collect()).collect();
        let sigma = bandwidths(&positions, config);
        let reg = regularizer(&positions, config, opt.reg_floor);
        let eval = evaluate(&positions, &sigma, reg, opt.alpha, false, config);
        report.final_q = eval.q;
        report.final_sampling_entropy = eval.hx;
        report.final_correspondence_entropy = eval.hz;
    }
    let particles = sets
        .into_iter()
        .enumerate()
        .map(|(i, particles)| ParticleSet {
            surface_id: i,
            particles,
        })
        .collect();
    Ok(Optimized { particles, report })
}

fn split(surface: &Surface, ps: &[SurfacePoint], dirs: &[(Vec3, Vec3)]) -> Vec<SurfacePoint> {
    let m = ps.len();
    let positions: Vec<Vec3> = ps.iter().map(|p| p.position).collect();
    let eps: Vec<f64> = if m == 1 {
        vec![FIRST_SPLIT * surface.mesh().bounding_diagonal()]
    } else {
        nearest_neighbor_distances(&positions)
            .into_iter()
            .map(|d| SPLIT_FRACTION * d)
            .collect()
    };
    let mut parents = Vec::with_capacity(2 * m);
    let mut children = Vec::with_capacity(m);
    for (k, p) in ps.iter().enumerate() {
        let (a, b) = dirs[k];
        let mut t = surface.tangent_component(p, a);
        if t.norm() < 1e-6 {
            t = surface.tangent_component(p, b);
        }
        let len = t.norm();
        let t = if len > 0.0 { t / len } else { Vec3::zeros() };
        parents.push(surface.project(p.position - t * eps[k]));
        children.push(surface.project(p.position + t * eps[k]));
    }
    parents.extend(children);
    parents
}

fn bandwidths(positions: &[Vec<Vec3>], config: &OptimizerConfig) -> Vec<Vec<f64>> {
    positions
        .par_iter()
        .map(|p| adaptive_sigma(p, config.neighbor_k, config.initial_sigma_fraction))
        .collect()
}

fn regularizer(positions: &[Vec<Vec3>], config: &OptimizerConfig, floor: f64) -> f64 {
    if positions.len() < 2 {
        return entropy::REG_FLOOR;
    }
    entropy::shape_regularizer(&entropy::shape_matrix(positions), config.covariance_regularization).max(floor)
}

struct Eval {
    q: f64,
    hx: f64,
    hz: Option<f64>,
    /// ∇Q per surface and particle, ambient coordinates.
    grad: Option<Vec<Vec<Vec3>>>,
    coincident: usize,
}

fn evaluate(
    positions: &[Vec<Vec3>],
    sigma: &[Vec<f64>],
    reg: f64,
    alpha: f64,
    with_gradient: bool,
    config: &OptimizerConfig,
) -> Eval {
    let per_surface: Vec<(f64, Option<Vec<Vec3>>, usize)> = positions
        .par_iter()
        .zip(sigma.par_iter())
        .map(|(p, s)| {
            if with_gradient {
                let e = entropy::sampling_entropy_and_gradient(p, s, config.max_gradient);
                (e.entropy, Some(e.gradient), e.coincident)
            } else {
                (entropy::sampling_entropy(p, s), None, 0)
            }
        })
        .collect();
    let mut hx = 0.0;
    let mut coincident = 0;
    for (h, _, c) in &per_surface {
        hx += h;
        coincident += c;
    }
    let use_z = alpha > 0.0 && positions.len() >= 2;
    let (hz, gz): (Option<f64>, Option<DMatrix<f64>>) = if use_z {
        let z = entropy::shape_matrix(positions);
        let e = entropy::correspondence_entropy(&z, reg, with_gradient);
        (Some(e.entropy), e.gradient)
    } else {
        (None, None)
    };
    let q = alpha * hz.unwrap_or(0.0) - hx;
    let grad = with_gradient.then(|| {
        per_surface
            .into_iter()
            .enumerate()
            .map(|(i, (_, g, _))| {
                let mut g = g.unwrap();
                for (k, gk) in g.iter_mut().enumerate() {
                    let mut v = -*gk;
                    if let Some(gz) = &gz {
                        v += Vec3::new(gz[(i, 3 * k)], gz[(i, 3 * k + 1)], gz[(i, 3 * k + 2)]) * alpha;
                    }
                    *gk = v;
                }
                g
            })
            .collect()
    });
    Eval {
        q,
        hx,
        hz,
        grad,
        coincident,
    }
}

struct Relaxer<'a> {
    surfaces: &'a [Surface],
    config: &'a OptimizerConfig,
    alpha: f64,
    reg_floor: f64,
    report: OptimizerReport,
}

impl Relaxer<'_> {
    fn relax(&mut self, sets: &mut Vec<Vec<SurfacePoint>>) -> RoundReport {
        let cfg = self.config;
        let m = sets[0].len();
        let total = cfg.iterations_per_round;
        let anneal = (total as f64 * cfg.anneal_fraction).round() as usize;
        let mut eta = cfg.step_size;
        let mut rr = RoundReport {
            particles: m,
            iterations: 0,
            converged: false,
            stalled: false,
            backtracks: 0,
            final_q: 0.0,
            final_max_displacement: f64::INFINITY,
        };
        for t in 0..total {
            rr.iterations = t + 1;
            let alpha = if anneal == 0 {
                self.alpha
            } else {
                self.alpha * ((t + 1) as f64 / anneal as f64).min(1.0)
            };
            let annealed = t + 1 >= anneal;
            let positions: Vec<Vec<Vec3>> = sets.iter().map(|s| s.iter().map(|p| p.position).collect()).collect();
            let sigma = bandwidths(&positions, cfg);
            let reg = regularizer(&positions, cfg, self.reg_floor);
            let current = evaluate(&positions, &sigma, reg, alpha, true, cfg);
            self.report.coincident_warnings += current.coincident;
            let grad = current.grad.as_ref().unwrap();

            // preconditioned tangent directions
            let dirs: Vec<Vec<Vec3>> = self
                .surfaces
                .par_iter()
                .zip(sets.par_iter())
                .zip(grad.par_iter().zip(sigma.par_iter()))
                .map(|((surface, ps), (g, s))| {
                    ps.iter()
                        .zip(g)
                        .zip(s)
                        .map(|((p, gk), sk)| surface.tangent_component(p, *gk) * (-(m as f64) * sk * sk))
                        .collect()
                })
                .collect();

            let mut accepted = None;
            for _ in 0..=cfg.max_backtracks {
                let trial: Vec<Vec<SurfacePoint>> = self
                    .surfaces
                    .par_iter()
                    .zip(sets.par_iter())
                    .zip(dirs.par_iter().zip(sigma.par_iter()))
                    .map(|((surface, ps), (d, s))| {
                        ps.iter()
                            .zip(d)
                            .zip(s)
                            .map(|((p, dk), sk)| {
                                let mut step = dk * eta;
                                let cap = cfg.max_step_fraction * sk;
                                let len = step.norm();
                                if len > cap {
                                    step *= cap / len;
                                }
                                surface.project(p.position + step)
                            })
                            .collect()
                    })
                    .collect();
                let trial_pos: Vec<Vec<Vec3>> = trial.iter().map(|s| s.iter().map(|p| p.position).collect()).collect();
                let e = evaluate(&trial_pos, &sigma, reg, alpha, false, cfg);
                if e.q <= current.q + Q_TOL {
                    let mut disp: f64 = 0.0;
                    for (a, b) in trial_pos.iter().zip(&positions) {
                        for (p, q) in a.iter().zip(b) {
                            disp = disp.max((p - q).norm());
                        }
                    }
                    self.report.max_q_increase = self.report.max_q_increase.max(e.q - current.q);
                    accepted = Some((trial, e.q, disp));
                    break;
                }
                rr.backtracks += 1;
                eta *= 0.5;
            }
            match accepted {
                Some((trial, q, disp)) => {
                    *sets = trial;
                    rr.final_q = q;
                    rr.final_max_displacement = disp;
                    eta = (eta * 1.25).min(cfg.max_step_size);
                    self.check_residuals(sets);
                    if annealed && disp < cfg.convergence_tol {
                        rr.converged = true;
                        break;
                    }
                }
                None => {
                    rr.final_q = current.q;
                    rr.final_max_displacement = 0.0;
                    eta = cfg.step_size;
                    if annealed {
                        rr.stalled = true;
                        rr.converged = true;
                        break;
                    }
                }
            }
        }
        self.report.total_iterations += rr.iterations;
        rr
    }

    fn check_residuals(&mut self, sets: &[Vec<SurfacePoint>]) {
        let mut worst: f64 = 0.0;
        for (surface, ps) in self.surfaces.iter().zip(sets) {
            let mesh = surface.mesh();
            for p in ps {
                let (_, d2, _) = closest_point_on_face(mesh.vertices(), mesh.faces()[p.face], p.position);
                worst = worst.max(d2.sqrt());
            }
        }
        if worst > 1e-6 {
            log::warn!("particle left its surface by {worst} mm");
        }
        self.report.max_projection_residual = self.report.max_projection_residual.max(worst);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::primitives;

    fn sphere_surface(level: u32) -> Surface {
        Surface::new(primitives::icosphere(level))
    }

    #[test]
    fn single_particle_at_centroid_projection() {
        let s = sphere_surface(3);
        let cfg = OptimizerConfig {
            m_target: 1,
            ..Default::default()
        };
        let sets = initialize_particles(std::slice::from_ref(&s), &cfg).unwrap();
        assert_eq!(sets[0].particles.len(), 1);
        let p = sets[0].particles[0].position;
        assert!((p.norm() - 1.0).abs() < 0.01);
    }

    #[test]
    fn unreachable_target_is_config_error() {
        let s = sphere_surface(1);
        let cfg = OptimizerConfig {
            m_target: 6,
            ..Default::default()
        };
        assert!(matches!(
            initialize_particles(std::slice::from_ref(&s), &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn antipodal_pair_is_stationary() {
        let s = sphere_surface(4);
        // foot of the perpendicular from the centre onto a face, and its antipode
        let f = 37;
        let n = s.face_normal(f);
        let v0 = s.mesh().vertices()[s.mesh().faces()[f][0]];
        let foot = n * n.dot(&v0);
        let a = s.project(foot);
        let b = s.project(-foot);
        assert_eq!(a.face, f);
        let ps = ParticleSet {
            surface_id: 0,
            particles: vec![a, b],
        };
        let sigma = vec![0.5; 2];
        let g = sampling_entropy_gradient(&s, &ps, &sigma, f64::INFINITY);
        for v in g {
            assert!(v.norm() < 1e-8);
        }
    }

    #[test]
    fn close_pair_is_pushed_apart() {
        let s = sphere_surface(4);
        let t = 10f64.to_radians();
        let a = s.project(Vec3::new(0.0, 0.0, 1.0));
        let b = s.project(Vec3::new(t.sin(), 0.0, t.cos()));
        let ps = ParticleSet {
            surface_id: 0,
            particles: vec![a, b],
        };
        let sigma = vec![0.2; 2];
        let g = sampling_entropy_gradient(&s, &ps, &sigma, f64::INFINITY);
        // ascent direction on H; a moves toward −x, b toward +x
        assert!(g[0].x < 0.0);
        assert!(g[1].x > 0.0);
    }

    #[test]
    fn equilateral_triangle_has_equal_gradients() {
        let s = sphere_surface(5);
        let mut particles = Vec::new();
        for k in 0..3 {
            let a = 2.0 * std::f64::consts::PI * k as f64 / 3.0;
            particles.push(SurfacePoint {
                position: Vec3::new(a.cos(), a.sin(), 0.0),
                face: s.project(Vec3::new(a.cos(), a.sin(), 0.0)).face,
                barycentric: [1.0, 0.0, 0.0],
            });
        }
        let pos: Vec<Vec3> = particles.iter().map(|p| p.position).collect();
        let sigma = vec![0.6; 3];
        let g = entropy::sampling_entropy_and_gradient(&pos, &sigma, f64::INFINITY).gradient;
        let n: Vec<f64> = g.iter().map(|v| v.norm()).collect();
        assert!((n[0] - n[1]).abs() < 1e-8 && (n[1] - n[2]).abs() < 1e-8);
    }

    #[test]
    fn four_particles_spread_out() {
        let s = sphere_surface(4);
        let cfg = OptimizerConfig {
            m_target: 4,
            ..Default::default()
        };
        let sets = initialize_particles(std::slice::from_ref(&s), &cfg).unwrap();
        let p = sets[0].positions();
        for i in 0..4 {
            for j in i + 1..4 {
                let ang = p[i].normalize().dot(&p[j].normalize()).clamp(-1.0, 1.0).acos().to_degrees();
                assert!(ang > 60.0, "particles {i},{j} only {ang} deg apart");
            }
        }
    }

    #[test]
    fn reruns_are_bit_identical() {
        let surfaces = vec![
            Surface::new(primitives::ellipsoid(3, [2.0, 1.5, 1.0])),
            Surface::new(primitives::ellipsoid(3, [2.2, 1.4, 1.0])),
        ];
        let cfg = OptimizerConfig {
            m_target: 16,
            iterations_per_round: 20,
            seed: 42,
            ..Default::default()
        };
        let a = optimize_correspondences(&surfaces, &cfg).unwrap();
        let b = optimize_correspondences(&surfaces, &cfg).unwrap();
        assert_eq!(a.positions(), b.positions());
        assert_eq!(a.report, b.report);
    }

    #[test]
    fn identical_spheres_have_zero_spread() {
        let s = sphere_surface(3);
        let surfaces = vec![s.clone(), s.clone(), s.clone(), s];
        let cfg = OptimizerConfig {
            m_target: 64,
            iterations_per_round: 20,
            ..Default::default()
        };
        let out = optimize_correspondences(&surfaces, &cfg).unwrap();
        let model = ShapeModel::unlabeled(out.positions());
        assert!(model.covariance_trace() < 1e-4);
    }

    #[test]
    fn accepted_steps_never_increase_q() {
        let surfaces = vec![
            Surface::new(primitives::ellipsoid(3, [2.0, 1.5, 1.0])),
            Surface::new(primitives::ellipsoid(3, [1.8, 1.6, 1.1])),
            Surface::new(primitives::ellipsoid(3, [2.1, 1.3, 0.9])),
        ];
        let cfg = OptimizerConfig {
            m_target: 32,
            iterations_per_round: 20,
            ..Default::default()
        };
        let out = optimize_correspondences(&surfaces, &cfg).unwrap();
        assert!(out.report.max_q_increase <= Q_TOL);
        assert!(out.report.max_projection_residual < 1e-6);
    }

    #[test]
    fn report_carries_scaled_alpha() {
        let s = sphere_surface(2);
        let cfg = OptimizerConfig {
            m_target: 4,
            iterations_per_round: 5,
            alpha: 0.25,
            ..Default::default()
        };
        let out = optimize_correspondences(&[s.clone(), s.clone(), s], &cfg).unwrap();
        assert_eq!(out.report.alpha, 0.75);
    }

    #[test]
    fn floor_bounds_collapse_under_heavy_weight() {
        let surfaces: Vec<Surface> = (0..4)
            .map(|i| Surface::new(primitives::ellipsoid(3, [2.0 + 0.2 * i as f64, 1.5, 1.0])))
            .collect();
        let spacing = |floor: f64| {
            let cfg = OptimizerConfig {
                m_target: 32,
                iterations_per_round: 40,
                alpha: 100.0,
                alpha_scaling: super::super::AlphaScaling::Absolute,
                regularization_floor: floor,
                ..Default::default()
            };
            let out = optimize_correspondences(&surfaces, &cfg).unwrap();
            let nn = nearest_neighbor_distances(&out.positions()[0]);
            nn.iter().sum::<f64>() / nn.len() as f64
        };
        // hexagonal spacing for 32 particles is about 1
        let (collapsed, held) = (spacing(0.0), spacing(0.1));
        assert!(collapsed < 0.01, "{collapsed}");
        assert!(held > 0.4, "{held}");
    }
}
