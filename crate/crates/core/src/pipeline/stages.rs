use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::config::CohortSource;
use super::manifest::CohortManifest;
use super::report::{
    read_pointwise_csv, write_pointwise_csv, AsymmetrySummary, GroundTruthSummary, GroupTests, HornSummary,
    HotellingSummary, PointwiseRow, PointwiseSummary, RunReport,
};
use super::*;
use crate::alignment::{generalized_procrustes, ProcrustesSummary};
use crate::asymmetry::{
    cohort_asymmetry, read_asymmetry_csv, read_template_faces, template_faces, write_asymmetry_csv,
    write_template_faces, SubjectPair,
};
use crate::particle_optim::{optimize_correspondences, OptimizerReport, SampleLabel, ShapeModel, Side};
use crate::stats::{
    bh_threshold, horn_parallel_analysis, hotelling_t2, pca, pointwise_linear_models, volume_analysis, CovariateRow,
    StatsError, VolumeRow,
};
use crate::surface::{flip_sagittal, load_mesh, mesh_volume, write_ply, MirrorPlane, PlyFormat, Surface, VertexScalar};
use crate::synthcohort::{self, generate_cohort, read_ground_truth, particle_mask};

pub(super) fn synth(p: &Pipeline) -> Result<()> {
    match &p.config().cohort {
        CohortSource::Synthetic(spec) => {
            let out = generate_cohort(spec, &p.path(COHORT_DIR))?;
            log::info!(
                "generated {} subjects; planted region covers {:.1}% of the surface",
                out.report.n_subjects,
                100.0 * out.report.region_area_fraction
            );
            Ok(())
        }
        CohortSource::Manifest(_) => {
            let m = CohortManifest::load(&p.config().manifest_path(p.out()))?;
            log::info!("manifest with {} subjects; nothing to generate", m.rows.len());
            Ok(())
        }
    }
}

fn load_manifest(p: &Pipeline) -> Result<CohortManifest> {
    CohortManifest::load(&p.config().manifest_path(p.out()))
}

pub(super) fn optimize(p: &Pipeline) -> Result<()> {
    let manifest = load_manifest(p)?;
    if manifest.rows.is_empty() {
        return Err(Error::Input("manifest lists no subjects".into()));
    }
    let plane = MirrorPlane::sagittal();
    let loaded: Vec<_> = manifest
        .rows
        .par_iter()
        .map(|r| {
            let left = load_mesh(manifest.resolve(&r.left_mesh))?;
            let right = load_mesh(manifest.resolve(&r.right_mesh))?;
            Ok((mesh_volume(&left), mesh_volume(&right), left, flip_sagittal(&right, &plane)))
        })
        .collect::<Result<_>>()?;

    let mut vol = String::from("subject_id,left_volume,right_volume\n");
    for (r, (vl, vr, _, _)) in manifest.rows.iter().zip(&loaded) {
        let _ = writeln!(vol, "{},{vl},{vr}", r.subject_id);
    }
    let vp = p.path(VOLUMES);
    std::fs::write(&vp, vol).map_err(|e| Error::io(&vp, e))?;

    let mut labels = Vec::new();
    let mut meshes = Vec::new();
    for (r, (_, _, l, rf)) in manifest.rows.iter().zip(loaded) {
        labels.push(SampleLabel {
            subject_id: r.subject_id.clone(),
            side: Side::Left,
        });
        labels.push(SampleLabel {
            subject_id: r.subject_id.clone(),
            side: Side::Right,
        });
        meshes.push(l);
        meshes.push(rf);
    }
    // translate every surface onto the reference centroid
    let c0 = meshes[0].vertex_centroid();
    let surfaces: Vec<Surface> = meshes
        .into_par_iter()
        .map(|m| {
            let t = c0 - m.vertex_centroid();
            Surface::new(m.translated(t))
        })
        .collect();

    let opt = optimize_correspondences(&surfaces, &p.config().optimizer)?;
    write_json(&p.path(OPTIMIZER_REPORT), &opt.report)?;
    opt.model(labels)?.save(p.path(RAW_MODEL))?;

    let reference = surfaces[0].mesh();
    let particles = &opt.particles[0].particles;
    write_template_faces(&p.path(TEMPLATE_FACES), &template_faces(reference, particles))?;

    let gt_path = p.path(GROUND_TRUTH_POINTS);
    if let CohortSource::Synthetic(_) = p.config().cohort {
        let vmask = read_ground_truth(
            &p.path(COHORT_DIR).join(synthcohort::GROUND_TRUTH_FILE),
            reference.vertices().len(),
        )?;
        let mask = particle_mask(reference, particles, &vmask);
        let mut s = String::new();
        for (m, _) in mask.iter().enumerate().filter(|(_, &x)| x) {
            let _ = writeln!(s, "{m}");
        }
        std::fs::write(&gt_path, s).map_err(|e| Error::io(&gt_path, e))?;
    } else if gt_path.exists() {
        std::fs::remove_file(&gt_path).map_err(|e| Error::io(&gt_path, e))?;
    }
    Ok(())
}

pub(super) fn align(p: &Pipeline) -> Result<()> {
    let raw = p.path(RAW_MODEL);
    if !raw.exists() {
        return Err(Error::MissingArtifact(raw));
    }
    let model = ShapeModel::load(&raw)?;
    let cfg = &p.config().procrustes;
    let res = generalized_procrustes(&model, cfg.tolerance, cfg.max_iterations)?;
    if !res.converged {
        log::warn!("Procrustes stopped after {} iterations without converging", res.iterations);
    }
    res.model.save(p.path(ALIGNED_MODEL))?;
    write_json(&p.path(PROCRUSTES_REPORT), &res.summary(cfg.tolerance, cfg.max_iterations))
}

fn load_aligned(p: &Pipeline) -> Result<ShapeModel> {
    let path = p.path(ALIGNED_MODEL);
    if !path.exists() {
        return Err(Error::MissingArtifact(path));
    }
    ShapeModel::load(&path)
}

fn sample_index(model: &ShapeModel, id: &str, side: Side) -> Result<usize> {
    model
        .find(id, side)
        .ok_or_else(|| Error::Input(format!("shape model has no {side} sample for subject {id}")))
}

pub(super) fn asymmetry(p: &Pipeline) -> Result<()> {
    let manifest = load_manifest(p)?;
    let model = load_aligned(p)?;
    let faces = read_template_faces(&p.path(TEMPLATE_FACES))?;
    let pairs: Vec<SubjectPair> = manifest
        .rows
        .iter()
        .map(|r| {
            let l = sample_index(&model, &r.subject_id, Side::Left)?;
            let rt = sample_index(&model, &r.subject_id, Side::Right)?;
            SubjectPair::new(r.subject_id.clone(), model.sample(l).to_vec(), model.sample(rt).to_vec())
        })
        .collect::<Result<_>>()?;
    let fields = cohort_asymmetry(&pairs, &faces)?;
    let ids = manifest.subject_ids();
    let values: Vec<Vec<f64>> = fields.iter().map(|f| f.values.clone()).collect();
    let abs: Vec<Vec<f64>> = fields.iter().map(|f| f.abs_values.clone()).collect();
    write_asymmetry_csv(&p.path(ASYMMETRY), &ids, &values)?;
    write_asymmetry_csv(&p.path(ASYMMETRY_ABS), &ids, &abs)?;
    let summary = AsymmetrySummary {
        n_subjects: ids.len(),
        n_points: model.n_particles(),
        fallback_points: fields.iter().map(|f| f.fallback_points.len()).sum(),
    };
    write_json(&p.path(ASYMMETRY_SUMMARY), &summary)
}

fn read_volumes(path: &Path) -> Result<HashMap<String, (f64, f64)>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let bad = |m: String| Error::Input(format!("{}: {m}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let mut out = HashMap::new();
    for (i, rec) in rdr.deserialize::<(String, f64, f64)>().enumerate() {
        let (id, l, r) = rec.map_err(|e| bad(format!("row {}: {e}", i + 1)))?;
        out.insert(id, (l, r));
    }
    Ok(out)
}

fn skip(skipped: &mut Vec<String>, what: &str, e: &StatsError) {
    log::warn!("{what} skipped: {e}");
    skipped.push(format!("{what}: {e}"));
}

pub(super) fn stats(p: &Pipeline) -> Result<()> {
    let cfg = &p.config().stats;
    let manifest = load_manifest(p)?;
    let (ids, rows) = read_asymmetry_csv(&p.path(ASYMMETRY))?;
    let by_id: HashMap<&str, CovariateRow> = manifest
        .rows
        .iter()
        .map(|r| (r.subject_id.as_str(), r.covariates))
        .collect();
    let covars: Vec<CovariateRow> = ids
        .iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::Input(format!("subject {id} of {ASYMMETRY} is not in the manifest")))
        })
        .collect::<Result<_>>()?;
    let n = ids.len();
    let m = rows.first().map_or(0, |r| r.len());
    if n == 0 || m == 0 {
        return Err(Error::Input(format!("{ASYMMETRY} is empty")));
    }
    let asym = DMatrix::from_fn(n, m, |i, j| rows[i][j]);
    let n_disease = covars.iter().filter(|c| c.diagnosis == 1).count();
    let mut skipped = Vec::new();

    let pw_path = p.path(POINTWISE_STATS);
    let pointwise = match pointwise_linear_models(&asym, &covars, cfg.fdr_q, cfg.include_handedness) {
        Ok(s) => {
            let rows: Vec<PointwiseRow> = (0..m)
                .map(|j| PointwiseRow {
                    point_id: j,
                    beta_diagnosis: s.beta_diagnosis(j),
                    se: s.se_diagnosis(j),
                    t: s.t_diagnosis(j),
                    p_raw: s.points[j].p_diagnosis,
                    significant: s.significant[j],
                })
                .collect();
            write_pointwise_csv(&pw_path, &rows)?;
            Some(PointwiseSummary {
                q: cfg.fdr_q,
                n_points: m,
                n_significant: s.n_significant(),
                bh_threshold: bh_threshold(&s.p_values(), cfg.fdr_q),
                constant_points: s.constant_points(),
                columns: s.columns.clone(),
            })
        }
        Err(e) => {
            skip(&mut skipped, "point-wise linear models", &e);
            if pw_path.exists() {
                std::fs::remove_file(&pw_path).map_err(|e| Error::io(&pw_path, e))?;
            }
            None
        }
    };

    let seeds = p.config().seeds();
    let mut horn = None;
    let mut hotelling = None;
    match horn_parallel_analysis(&asym, cfg.horn_permutations, seeds.horn, cfg.horn_criterion)
        .and_then(|h| pca(&asym).map(|pc| (h, pc)))
    {
        Ok((h, pc)) => {
            horn = Some(HornSummary {
                k: h.k,
                explained_variance: pc.explained(h.k),
                n_permutations: cfg.horn_permutations,
                criterion: cfg.horn_criterion,
            });
            let k = h.k.max(1).min(pc.scores.ncols()).min(n.saturating_sub(2));
            if k == 0 {
                skip(&mut skipped, "hotelling", &StatsError::TooFewObservations { needed: 2, got: n });
            } else {
                let pick = |d: u8| {
                    let idx: Vec<usize> = (0..n).filter(|&i| covars[i].diagnosis == d).collect();
                    DMatrix::from_fn(idx.len(), k, |r, c| pc.scores[(idx[r], c)])
                };
                match hotelling_t2(&pick(0), &pick(1)) {
                    Ok(test) => hotelling = Some(HotellingSummary { components: k, test }),
                    Err(e) => skip(&mut skipped, "hotelling", &e),
                }
            }
        }
        Err(e) => skip(&mut skipped, "horn parallel analysis", &e),
    }

    let vols = read_volumes(&p.path(VOLUMES))?;
    let vrows: Vec<VolumeRow> = ids
        .iter()
        .zip(&covars)
        .map(|(id, c)| {
            let (l, r) = *vols
                .get(id)
                .ok_or_else(|| Error::Input(format!("subject {id} has no entry in {VOLUMES}")))?;
            Ok(VolumeRow {
                subject_id: id.clone(),
                left: l,
                right: r,
                covariates: *c,
            })
        })
        .collect::<Result<_>>()?;
    let volumes = match volume_analysis(&vrows, cfg.include_handedness) {
        Ok(v) => Some(v),
        Err(e) => {
            skip(&mut skipped, "volume analysis", &e);
            None
        }
    };

    let tests = GroupTests {
        n_subjects: n,
        n_healthy: n - n_disease,
        n_disease,
        pointwise,
        horn,
        hotelling,
        volumes,
        skipped,
    };
    write_json(&p.path(GROUP_TESTS), &tests)
}

fn read_point_ids(path: &Path, m: usize) -> Result<Vec<bool>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut mask = vec![false; m];
    for l in text.lines().filter(|l| !l.trim().is_empty()) {
        let i: usize = l
            .trim()
            .parse()
            .map_err(|_| Error::Input(format!("{}: bad point id '{l}'", path.display())))?;
        if i >= m {
            return Err(Error::Input(format!("{}: point {i} out of range {m}", path.display())));
        }
        mask[i] = true;
    }
    Ok(mask)
}

pub(super) fn report(p: &Pipeline) -> Result<RunReport> {
    let optimizer: OptimizerReport = read_json(&p.path(OPTIMIZER_REPORT))?;
    let procrustes: ProcrustesSummary = read_json(&p.path(PROCRUSTES_REPORT))?;
    let asymmetry: AsymmetrySummary = read_json(&p.path(ASYMMETRY_SUMMARY))?;
    let stats: GroupTests = read_json(&p.path(GROUP_TESTS))?;
    let model = load_aligned(p)?;
    let faces = read_template_faces(&p.path(TEMPLATE_FACES))?;
    let m = model.n_particles();

    let pointwise = if stats.pointwise.is_some() {
        let rows = read_pointwise_csv(&p.path(POINTWISE_STATS))?;
        if rows.len() != m {
            return Err(Error::Input(format!("{POINTWISE_STATS} has {} rows for {m} points", rows.len())));
        }
        Some(rows)
    } else {
        None
    };
    let mean = model.mean_points();
    let (t, sig): (Vec<f64>, Vec<f64>) = match &pointwise {
        Some(rows) => rows.iter().map(|r| (r.t, f64::from(u8::from(r.significant)))).unzip(),
        None => (vec![0.0; m], vec![0.0; m]),
    };
    let scalars = [
        VertexScalar {
            name: "t_diagnosis",
            values: &t,
        },
        VertexScalar {
            name: "significant",
            values: &sig,
        },
    ];
    let mesh_path = p.path(ANNOTATED_MESH);
    std::fs::write(&mesh_path, write_ply(&mean, &faces, &scalars, PlyFormat::BinaryLittleEndian))
        .map_err(|e| Error::io(&mesh_path, e))?;

    let gt_path = p.path(GROUND_TRUTH_POINTS);
    let ground_truth = match (&pointwise, gt_path.exists()) {
        (Some(rows), true) => {
            let truth = read_point_ids(&gt_path, m)?;
            let significant: Vec<bool> = rows.iter().map(|r| r.significant).collect();
            Some(GroundTruthSummary::compare(&truth, &significant))
        }
        _ => None,
    };

    let report = RunReport {
        config: p.config().clone(),
        seeds: p.config().seeds(),
        optimizer,
        procrustes,
        asymmetry,
        stats,
        ground_truth,
        timings_file: TIMINGS.to_string(),
    };
    report.validate()?;
    write_json(&p.path(RUN_REPORT_JSON), &report)?;
    let tp = p.path(RUN_REPORT_TXT);
    std::fs::write(&tp, report.to_text()).map_err(|e| Error::io(&tp, e))?;
    Ok(report)
}
