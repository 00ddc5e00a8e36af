//! Synthetic bilateral cohorts with ground-truth asymmetry.
//!
//! Each side is an ellipsoid deformed along its analytic normal by smooth
//! random fields of real spherical harmonics (degrees 2–4). A shared field
//! models subject anatomy; an independent field per side models asymmetry
//! noise. Disease subjects receive a planted normal displacement on the left
//! side over a set of icosahedral patches.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::manifest::{CohortManifest, ManifestRow};
use crate::stats::CovariateRow;
use crate::surface::primitives::{patched_icosphere, PatchedSphere};
use crate::surface::{flip_sagittal, write_ply, MirrorPlane, PlyFormat, SurfacePoint, TriangleMesh, Vec3};

pub const SH_DEGREES: std::ops::RangeInclusive<usize> = 2..=4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CovariateModel {
    pub age_mean: f64,
    pub age_sd: f64,
    /// Added to the age of disease subjects (confound coupling).
    pub disease_age_shift: f64,
    pub p_male: f64,
    pub etiv_mean: f64,
    pub etiv_sd: f64,
    /// 0 leaves eTIV independent of subject size; 1 scales it with size³.
    pub etiv_size_coupling: f64,
    pub p_left_handed: f64,
}

impl Default for CovariateModel {
    fn default() -> Self {
        CovariateModel {
            age_mean: 70.0,
            age_sd: 8.0,
            disease_age_shift: 3.0,
            p_male: 0.5,
            etiv_mean: 1.5e6,
            etiv_sd: 1.5e5,
            etiv_size_coupling: 0.0,
            p_left_handed: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSpec {
    pub n_healthy: usize,
    pub n_disease: usize,
    /// Semi-axes of the base ellipsoid (mm).
    pub base_shape: [f64; 3],
    /// Icosphere subdivision level of every mesh.
    pub mesh_level: u32,
    /// Relative SD of the subject size factor.
    pub global_size_variance: f64,
    /// Pointwise SD (mm) of the deformation shared by both sides.
    pub shape_sigma: f64,
    /// Pointwise SD (mm) of each side's independent deformation.
    pub noise_sigma: f64,
    /// Icosahedral patch ids (0–19) receiving the planted effect.
    pub planted_region: Vec<usize>,
    /// Normal displacement (mm) of the disease group's left side in the region.
    pub planted_magnitude: f64,
    /// SD of the relative left/right volume difference, healthy group.
    pub volume_asymmetry_sd_healthy: f64,
    /// SD of the relative left/right volume difference, disease group.
    pub volume_asymmetry_sd_disease: f64,
    /// Consecutive subjects of a group share the volume difference with
    /// opposite signs.
    pub antithetic_volume: bool,
    /// Distance of each side's centre from the sagittal plane (mm).
    pub lateral_offset: f64,
    pub covariates: CovariateModel,
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        CohortSpec {
            n_healthy: 30,
            n_disease: 30,
            base_shape: [20.0, 12.0, 9.0],
            mesh_level: 4,
            global_size_variance: 0.05,
            shape_sigma: 0.5,
            noise_sigma: 0.3,
            planted_region: vec![0, 1],
            planted_magnitude: 0.0,
            volume_asymmetry_sd_healthy: 0.02,
            volume_asymmetry_sd_disease: 0.02,
            antithetic_volume: false,
            lateral_offset: 25.0,
            covariates: CovariateModel::default(),
            seed: 0,
        }
    }
}

impl CohortSpec {
    pub fn n_subjects(&self) -> usize {
        self.n_healthy + self.n_disease
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synth: {m}")));
        if self.n_subjects() == 0 {
            return bad("cohort is empty".into());
        }
        if self.base_shape.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return bad(format!("base_shape must be positive, got {:?}", self.base_shape));
        }
        if self.mesh_level > 6 {
            return bad(format!("mesh_level {} is too fine (max 6)", self.mesh_level));
        }
        for (name, v) in [
            ("global_size_variance", self.global_size_variance),
            ("shape_sigma", self.shape_sigma),
            ("noise_sigma", self.noise_sigma),
            ("volume_asymmetry_sd_healthy", self.volume_asymmetry_sd_healthy),
            ("volume_asymmetry_sd_disease", self.volume_asymmetry_sd_disease),
            ("covariates.age_sd", self.covariates.age_sd),
            ("covariates.etiv_sd", self.covariates.etiv_sd),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be finite and nonnegative, got {v}"));
            }
        }
        if !self.planted_magnitude.is_finite() {
            return bad("planted_magnitude must be finite".into());
        }
        if self.planted_magnitude != 0.0 && self.planted_region.is_empty() {
            return bad("planted_region is empty but planted_magnitude is nonzero".into());
        }
        if let Some(p) = self.planted_region.iter().find(|&&p| p >= PatchedSphere::PATCHES) {
            return bad(format!("patch id {p} out of range 0..{}", PatchedSphere::PATCHES));
        }
        for (name, p) in [("p_male", self.covariates.p_male), ("p_left_handed", self.covariates.p_left_handed)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("covariates.{name} must be a probability, got {p}"));
            }
        }
        if !(self.covariates.etiv_mean > 0.0) {
            return bad("covariates.etiv_mean must be positive".into());
        }
        Ok(())
    }
}

/// Real orthonormal spherical harmonic `Y_lm` at unit direction `u`.
pub fn real_sh(l: usize, m: i64, u: &Vec3) -> f64 {
    let am = m.unsigned_abs() as usize;
    assert!(am <= l);
    let x = u.z.clamp(-1.0, 1.0);
    let phi = u.y.atan2(u.x);
    // associated Legendre P_l^am(x)
    let s = (1.0 - x * x).max(0.0).sqrt();
    let mut pmm = 1.0;
    for i in 0..am {
        pmm *= -((2 * i + 1) as f64) * s;
    }
    let p = if l == am {
        pmm
    } else {
        let mut p_prev = pmm;
        let mut p_cur = x * (2 * am + 1) as f64 * pmm;
        for ll in am + 2..=l {
            let next = ((2 * ll - 1) as f64 * x * p_cur - (ll + am - 1) as f64 * p_prev) / (ll - am) as f64;
            p_prev = p_cur;
            p_cur = next;
        }
        p_cur
    };
    let mut ratio = 1.0;
    for k in (l - am + 1)..=(l + am) {
        ratio /= k as f64;
    }
    let norm = ((2 * l + 1) as f64 / (4.0 * std::f64::consts::PI) * ratio).sqrt();
    match m.cmp(&0) {
        std::cmp::Ordering::Equal => norm * p,
        std::cmp::Ordering::Greater => std::f64::consts::SQRT_2 * norm * p * (am as f64 * phi).cos(),
        std::cmp::Ordering::Less => std::f64::consts::SQRT_2 * norm * p * (am as f64 * phi).sin(),
    }
}

fn sh_terms() -> Vec<(usize, i64)> {
    SH_DEGREES
        .flat_map(|l| (-(l as i64)..=l as i64).map(move |m| (l, m)))
        .collect()
}

/// A random smooth field with pointwise SD `sigma` (mm).
fn random_field(rng: &mut ChaCha8Rng, sigma: f64, basis: &[Vec<f64>]) -> Vec<f64> {
    let n_terms = basis.first().map_or(0, |b| b.len());
    let total: usize = SH_DEGREES.map(|l| 2 * l + 1).sum();
    let tau = sigma * (4.0 * std::f64::consts::PI / total as f64).sqrt();
    let coef: Vec<f64> = (0..n_terms).map(|_| tau * rng.sample::<f64, _>(StandardNormal)).collect();
    basis
        .iter()
        .map(|row| row.iter().zip(&coef).map(|(y, c)| y * c).sum())
        .collect()
}

/// Template geometry shared by every subject.
#[derive(Debug, Clone)]
pub struct Template {
    pub sphere: PatchedSphere,
    /// SH basis evaluated at each vertex direction.
    basis: Vec<Vec<f64>>,
    /// Vertices inside the planted region.
    pub region_mask: Vec<bool>,
    /// Area fraction of the planted region on the base ellipsoid.
    pub region_area_fraction: f64,
}

impl Template {
    pub fn new(spec: &CohortSpec) -> Self {
        let sphere = patched_icosphere(spec.mesh_level);
        let terms = sh_terms();
        let basis = sphere
            .mesh
            .vertices()
            .iter()
            .map(|u| terms.iter().map(|&(l, m)| real_sh(l, m, u)).collect())
            .collect();
        let region_mask = sphere.vertex_mask(&spec.planted_region);
        let base = base_ellipsoid(&sphere, spec.base_shape);
        let total = base.surface_area();
        let region: f64 = (0..base.faces().len())
            .filter(|&f| spec.planted_region.contains(&sphere.face_patch[f]))
            .map(|f| base.face_area(f))
            .sum();
        Template {
            sphere,
            basis,
            region_mask,
            region_area_fraction: region / total,
        }
    }
}

fn base_ellipsoid(sphere: &PatchedSphere, a: [f64; 3]) -> TriangleMesh {
    sphere.mesh.map_vertices(|u| Vec3::new(u.x * a[0], u.y * a[1], u.z * a[2]))
}

#[derive(Debug, Clone)]
pub struct SyntheticSubject {
    pub subject_id: String,
    pub left: TriangleMesh,
    pub right: TriangleMesh,
    pub covariates: CovariateRow,
    /// `(left − right)/mean` volume fraction applied through isotropic scaling.
    pub volume_asymmetry: f64,
    /// The deformation folded the mesh and was scaled down.
    pub clamped: bool,
}

pub fn subject_id(index: usize) -> String {
    format!("sub-{:04}", index + 1)
}

fn is_disease(spec: &CohortSpec, index: usize) -> bool {
    index >= spec.n_healthy
}

/// Volume asymmetry fraction for a subject.
fn volume_draw(spec: &CohortSpec, index: usize, rng: &mut ChaCha8Rng) -> f64 {
    let disease = is_disease(spec, index);
    let sd = if disease {
        spec.volume_asymmetry_sd_disease
    } else {
        spec.volume_asymmetry_sd_healthy
    };
    let z: f64 = if spec.antithetic_volume {
        let within = if disease { index - spec.n_healthy } else { index };
        let mut pair_rng = ChaCha8Rng::seed_from_u64(spec.seed);
        pair_rng.set_stream((1u64 << 40) | (u64::from(disease) << 32) | (within / 2) as u64);
        let mag = pair_rng.sample::<f64, _>(StandardNormal).abs();
        if within % 2 == 0 {
            mag
        } else {
            -mag
        }
    } else {
        rng.sample(StandardNormal)
    };
    (sd * z).clamp(-0.5, 0.5)
}

fn build_side(
    template: &Template,
    spec: &CohortSpec,
    size: f64,
    volume_scale: f64,
    displacement: &[f64],
) -> Result<(Vec<Vec3>, bool)> {
    let a = spec.base_shape;
    let dirs = template.sphere.mesh.vertices();
    let faces = template.sphere.mesh.faces();
    let base: Vec<Vec3> = dirs
        .iter()
        .map(|u| Vec3::new(u.x * a[0], u.y * a[1], u.z * a[2]) * (size * volume_scale))
        .collect();
    let normals: Vec<Vec3> = dirs
        .iter()
        .map(|u| Vec3::new(u.x / a[0], u.y / a[1], u.z / a[2]).normalize())
        .collect();
    let mut factor = 1.0;
    for attempt in 0..12 {
        let pts: Vec<Vec3> = base
            .iter()
            .zip(&normals)
            .zip(displacement)
            .map(|((p, n), d)| p + n * (d * factor))
            .collect();
        let folded = faces.iter().any(|f| {
            let e = |v: &[Vec3]| (v[f[1]] - v[f[0]]).cross(&(v[f[2]] - v[f[0]]));
            e(&pts).dot(&e(&base)) <= 0.0
        });
        if !folded {
            return Ok((pts, attempt > 0));
        }
        factor *= 0.5;
    }
    Err(Error::Input("synthetic deformation folds the mesh even at 1/4096 magnitude".into()))
}

pub fn generate_subject(spec: &CohortSpec, template: &Template, index: usize) -> Result<SyntheticSubject> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let disease = is_disease(spec, index);
    let cm = &spec.covariates;
    let age = cm.age_mean + cm.age_sd * rng.sample::<f64, _>(StandardNormal) + if disease { cm.disease_age_shift } else { 0.0 };
    let sex = u8::from(rng.random_bool(cm.p_male));
    let size = (1.0 + spec.global_size_variance * rng.sample::<f64, _>(StandardNormal)).max(0.5);
    let etiv_z: f64 = rng.sample(StandardNormal);
    let etiv = (cm.etiv_mean * (1.0 + cm.etiv_size_coupling * (size.powi(3) - 1.0)) + cm.etiv_sd * etiv_z).max(0.3 * cm.etiv_mean);
    let handedness = u8::from(rng.random_bool(cm.p_left_handed));
    let shared = random_field(&mut rng, spec.shape_sigma, &template.basis);
    let noise_l = random_field(&mut rng, spec.noise_sigma, &template.basis);
    let noise_r = random_field(&mut rng, spec.noise_sigma, &template.basis);
    let vol = volume_draw(spec, index, &mut rng);

    let mut disp_l: Vec<f64> = shared.iter().zip(&noise_l).map(|(a, b)| a + b).collect();
    let disp_r: Vec<f64> = shared.iter().zip(&noise_r).map(|(a, b)| a + b).collect();
    if disease && spec.planted_magnitude != 0.0 {
        for (d, &inside) in disp_l.iter_mut().zip(&template.region_mask) {
            if inside {
                *d += spec.planted_magnitude;
            }
        }
    }
    let scale_l = (1.0 + vol / 2.0).cbrt();
    let scale_r = (1.0 - vol / 2.0).cbrt();
    let (pl, cl) = build_side(template, spec, size, scale_l, &disp_l)?;
    let (pr, cr) = build_side(template, spec, size, scale_r, &disp_r)?;
    let shift = Vec3::new(-spec.lateral_offset, 0.0, 0.0);
    let faces = template.sphere.mesh.faces().to_vec();
    let left = TriangleMesh::new(pl.iter().map(|p| p + shift).collect(), faces.clone())?;
    let right_in_left_frame = TriangleMesh::new(pr.iter().map(|p| p + shift).collect(), faces)?;
    let right = flip_sagittal(&right_in_left_frame, &MirrorPlane::sagittal());
    let id = subject_id(index);
    if cl || cr {
        log::warn!("{id}: deformation folded the mesh and was scaled down");
    }
    Ok(SyntheticSubject {
        subject_id: id,
        left,
        right,
        covariates: CovariateRow {
            age,
            sex,
            etiv,
            diagnosis: u8::from(disease),
            handedness: Some(handedness),
        },
        volume_asymmetry: vol,
        clamped: cl || cr,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthReport {
    pub n_subjects: usize,
    pub n_vertices: usize,
    pub region_area_fraction: f64,
    pub masked_vertices: usize,
    pub clamped_subjects: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub manifest: CohortManifest,
    /// Template vertices carrying the planted effect (all false without one).
    pub vertex_mask: Vec<bool>,
    pub report: SynthReport,
}

pub const MANIFEST_FILE: &str = "cohort.csv";
pub const GROUND_TRUTH_FILE: &str = "ground_truth_vertices.txt";
pub const REPORT_FILE: &str = "synth_report.json";

/// Generate every subject and write meshes, manifest, vertex-level ground
/// truth and a report into `dir`.
pub fn generate_cohort(spec: &CohortSpec, dir: &Path) -> Result<SynthOutput> {
    spec.validate()?;
    let template = Template::new(spec);
    let mesh_dir = dir.join("meshes");
    std::fs::create_dir_all(&mesh_dir).map_err(|e| Error::io(&mesh_dir, e))?;
    let rows: Vec<(ManifestRow, bool)> = (0..spec.n_subjects())
        .into_par_iter()
        .map(|i| {
            let s = generate_subject(spec, &template, i)?;
            let mut paths = Vec::new();
            for (side, mesh) in [("left", &s.left), ("right", &s.right)] {
                let rel = Path::new("meshes").join(format!("{}_{side}.ply", s.subject_id));
                let full = dir.join(&rel);
                let bytes = write_ply(mesh.vertices(), mesh.faces(), &[], PlyFormat::BinaryLittleEndian);
                std::fs::write(&full, bytes).map_err(|e| Error::io(&full, e))?;
                paths.push(rel);
            }
            let right_mesh = paths.pop().unwrap_or_default();
            let left_mesh = paths.pop().unwrap_or_default();
            Ok((
                ManifestRow {
                    subject_id: s.subject_id,
                    left_mesh,
                    right_mesh,
                    covariates: s.covariates,
                },
                s.clamped,
            ))
        })
        .collect::<Result<_>>()?;
    let clamped_subjects = rows.iter().filter(|(_, c)| *c).map(|(r, _)| r.subject_id.clone()).collect();
    let manifest = CohortManifest::new(rows.into_iter().map(|(r, _)| r).collect(), dir)?;
    manifest.save(&dir.join(MANIFEST_FILE))?;

    let vertex_mask = if spec.planted_magnitude != 0.0 {
        template.region_mask.clone()
    } else {
        vec![false; template.region_mask.len()]
    };
    let mut gt = String::new();
    for (v, _) in vertex_mask.iter().enumerate().filter(|(_, &m)| m) {
        gt.push_str(&format!("{v}\n"));
    }
    let gt_path = dir.join(GROUND_TRUTH_FILE);
    std::fs::write(&gt_path, gt).map_err(|e| Error::io(&gt_path, e))?;

    let report = SynthReport {
        n_subjects: spec.n_subjects(),
        n_vertices: vertex_mask.len(),
        region_area_fraction: template.region_area_fraction,
        masked_vertices: vertex_mask.iter().filter(|&&m| m).count(),
        clamped_subjects,
    };
    let rp = dir.join(REPORT_FILE);
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Input(e.to_string()))?;
    std::fs::write(&rp, json + "\n").map_err(|e| Error::io(&rp, e))?;
    Ok(SynthOutput {
        manifest,
        vertex_mask,
        report,
    })
}

/// Read a vertex-id list written by [`generate_cohort`] into a mask of length `n`.
pub fn read_ground_truth(path: &Path, n: usize) -> Result<Vec<bool>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut mask = vec![false; n];
    for (i, l) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let v: usize = l
            .trim()
            .parse()
            .map_err(|_| Error::Input(format!("{}:{}: bad vertex id", path.display(), i + 1)))?;
        if v >= n {
            return Err(Error::Input(format!("{}:{}: vertex {v} out of range {n}", path.display(), i + 1)));
        }
        mask[v] = true;
    }
    Ok(mask)
}

/// Transfer a template vertex mask onto correspondence particles of the
/// template surface: a particle is inside when the barycentric weight of its
/// masked face vertices is at least one half.
pub fn particle_mask(mesh: &TriangleMesh, particles: &[SurfacePoint], vertex_mask: &[bool]) -> Vec<bool> {
    particles
        .iter()
        .map(|p| {
            let f = mesh.faces()[p.face];
            let w: f64 = (0..3).filter(|&i| vertex_mask[f[i]]).map(|i| p.barycentric[i]).sum();
            w >= 0.5
        })
        .collect()
}
