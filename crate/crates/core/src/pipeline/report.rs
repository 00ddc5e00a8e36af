use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{PipelineConfig, Seeds};
use crate::alignment::ProcrustesSummary;
use crate::error::{Error, Result};
use crate::particle_optim::OptimizerReport;
use crate::stats::{GroupTestResult, HornCriterion, VolumeAnalysis};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymmetrySummary {
    pub n_subjects: usize,
    pub n_points: usize,
    /// Points whose midpoint normal fell back to the centroid direction.
    pub fallback_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointwiseSummary {
    pub q: f64,
    pub n_points: usize,
    pub n_significant: usize,
    /// Largest raw p-value declared significant.
    pub bh_threshold: Option<f64>,
    pub constant_points: Vec<usize>,
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HornSummary {
    pub k: usize,
    pub explained_variance: f64,
    pub n_permutations: usize,
    pub criterion: HornCriterion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HotellingSummary {
    /// PCA score dimensions entering the test.
    pub components: usize,
    pub test: GroupTestResult,
}

/// Output of the stats stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTests {
    pub n_subjects: usize,
    pub n_healthy: usize,
    pub n_disease: usize,
    pub pointwise: Option<PointwiseSummary>,
    pub horn: Option<HornSummary>,
    pub hotelling: Option<HotellingSummary>,
    pub volumes: Option<VolumeAnalysis>,
    /// Analyses that could not run, with the reason.
    pub skipped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSummary {
    pub region_points: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub sensitivity: Option<f64>,
    pub false_positive_rate: Option<f64>,
}

impl GroundTruthSummary {
    pub fn compare(truth: &[bool], significant: &[bool]) -> Self {
        let region_points = truth.iter().filter(|&&t| t).count();
        let outside = truth.len() - region_points;
        let tp = truth.iter().zip(significant).filter(|(t, s)| **t && **s).count();
        let fp = truth.iter().zip(significant).filter(|(t, s)| !**t && **s).count();
        GroundTruthSummary {
            region_points,
            true_positives: tp,
            false_positives: fp,
            sensitivity: (region_points > 0).then(|| tp as f64 / region_points as f64),
            false_positive_rate: (outside > 0).then(|| fp as f64 / outside as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: PipelineConfig,
    pub seeds: Seeds,
    pub optimizer: OptimizerReport,
    pub procrustes: ProcrustesSummary,
    pub asymmetry: AsymmetrySummary,
    pub stats: GroupTests,
    pub ground_truth: Option<GroundTruthSummary>,
    /// Stage wall-clock times live in a separate file so reruns compare equal.
    pub timings_file: String,
}

fn check_p(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Input(format!("{name} p-value {p} outside [0, 1]")))
    }
}

fn tests_of(v: &VolumeAnalysis) -> Vec<(String, &GroupTestResult)> {
    let mut out = Vec::new();
    for (kind, m) in [("directional", &v.directional), ("undirectional", &v.undirectional)] {
        for (name, t) in [
            ("mann-whitney", &m.mann_whitney),
            ("shapiro-healthy", &m.shapiro_healthy),
            ("shapiro-disease", &m.shapiro_disease),
        ] {
            if let Some(t) = t {
                out.push((format!("{kind} {name}"), t));
            }
        }
    }
    out
}

impl RunReport {
    pub fn validate(&self) -> Result<()> {
        if let Some(p) = &self.stats.pointwise {
            if p.n_significant > p.n_points {
                return Err(Error::Input(format!("{} significant points of {}", p.n_significant, p.n_points)));
            }
        }
        if let Some(h) = &self.stats.hotelling {
            check_p("hotelling", h.test.p_value)?;
        }
        if let Some(v) = &self.stats.volumes {
            for (name, t) in tests_of(v) {
                check_p(&name, t.p_value)?;
            }
            for (name, p) in [
                ("directional linear model", v.directional.linear_model_p),
                ("undirectional linear model", v.undirectional.linear_model_p),
            ] {
                if let Some(p) = p {
                    check_p(name, p)?;
                }
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        super::read_json(path)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let s_ = &mut s;
        let _ = writeln!(s_, "asymmetry shape analysis report");
        let _ = writeln!(s_, "seed {} (synth {}, optimizer {}, horn {})", self.seeds.root, self.seeds.synth, self.seeds.optimizer, self.seeds.horn);
        let st = &self.stats;
        let _ = writeln!(s_, "\n[cohort]");
        let _ = writeln!(s_, "subjects {} (healthy {}, disease {})", st.n_subjects, st.n_healthy, st.n_disease);
        let o = &self.optimizer;
        let _ = writeln!(s_, "\n[optimizer]");
        let _ = writeln!(s_, "surfaces {}  particles {}  rounds {}  iterations {}", o.surfaces, o.particles, o.rounds.len(), o.total_iterations);
        let _ = writeln!(s_, "converged {}  final Q {:.6}", o.converged, o.final_q);
        let p = &self.procrustes;
        let _ = writeln!(s_, "\n[procrustes]");
        let _ = writeln!(s_, "iterations {}  converged {}  final mean displacement {:.3e}", p.iterations, p.converged, p.final_mean_displacement);
        let a = &self.asymmetry;
        let _ = writeln!(s_, "\n[asymmetry]");
        let _ = writeln!(s_, "points {}  normal fallbacks {}", a.n_points, a.fallback_points);
        let _ = writeln!(s_, "\n[point-wise linear models]");
        match &st.pointwise {
            Some(pw) => {
                let _ = writeln!(s_, "significant {} / {} at q = {}", pw.n_significant, pw.n_points, pw.q);
                if !pw.constant_points.is_empty() {
                    let _ = writeln!(s_, "constant points {}", pw.constant_points.len());
                }
            }
            None => {
                let _ = writeln!(s_, "not run");
            }
        }
        let _ = writeln!(s_, "\n[group test]");
        if let Some(h) = &st.horn {
            let _ = writeln!(s_, "horn k {}  explained {:.4}  permutations {}", h.k, h.explained_variance, h.n_permutations);
        }
        if let Some(h) = &st.hotelling {
            let _ = writeln!(s_, "hotelling T2 {:.4} on {} components  p {:.6e}", h.test.statistic, h.components, h.test.p_value);
        }
        if let Some(v) = &st.volumes {
            let _ = writeln!(s_, "\n[volumes]");
            for (name, t) in tests_of(v) {
                let _ = writeln!(s_, "{name}: statistic {:.6}  p {:.6e}", t.statistic, t.p_value);
            }
            for (kind, m) in [("directional", &v.directional), ("undirectional", &v.undirectional)] {
                if let (Some(b), Some(pv)) = (m.linear_model_beta, m.linear_model_p) {
                    let _ = writeln!(s_, "{kind} linear model: diagnosis beta {b:.6e}  p {pv:.6e}");
                }
            }
        }
        if let Some(g) = &self.ground_truth {
            let _ = writeln!(s_, "\n[ground truth]");
            let _ = writeln!(s_, "region points {}  true positives {}  false positives {}", g.region_points, g.true_positives, g.false_positives);
            if let Some(x) = g.sensitivity {
                let _ = writeln!(s_, "sensitivity {x:.4}");
            }
            if let Some(x) = g.false_positive_rate {
                let _ = writeln!(s_, "false positive rate {x:.4}");
            }
        }
        if !st.skipped.is_empty() {
            let _ = writeln!(s_, "\n[skipped]");
            for r in &st.skipped {
                let _ = writeln!(s_, "{r}");
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseRow {
    pub point_id: usize,
    pub beta_diagnosis: f64,
    pub se: f64,
    pub t: f64,
    pub p_raw: f64,
    pub significant: bool,
}

pub const POINTWISE_HEADER: &str = "point_id,beta_diagnosis,se,t,p_raw,significant";

pub fn write_pointwise_csv(path: &Path, rows: &[PointwiseRow]) -> Result<()> {
    let mut s = String::from(POINTWISE_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{},{}", r.point_id, r.beta_diagnosis, r.se, r.t, r.p_raw, u8::from(r.significant));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_pointwise_csv(path: &Path) -> Result<Vec<PointwiseRow>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let bad = |m: String| Error::Input(format!("{}: {m}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header: Vec<String> = rdr.headers().map_err(|e| bad(e.to_string()))?.iter().map(String::from).collect();
    if header.join(",") != POINTWISE_HEADER {
        return Err(bad(format!("header must be {POINTWISE_HEADER}")));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.deserialize::<(usize, f64, f64, f64, f64, u8)>().enumerate() {
        let (point_id, beta_diagnosis, se, t, p_raw, sig) = rec.map_err(|e| bad(format!("row {}: {e}", i + 1)))?;
        rows.push(PointwiseRow {
            point_id,
            beta_diagnosis,
            se,
            t,
            p_raw,
            significant: sig == 1,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ground_truth_counts() {
        let truth = [true, true, false, false, false];
        let sig = [true, false, true, false, false];
        let g = GroundTruthSummary::compare(&truth, &sig);
        assert_eq!((g.true_positives, g.false_positives), (1, 1));
        assert_eq!(g.sensitivity, Some(0.5));
        assert!((g.false_positive_rate.unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let g = GroundTruthSummary::compare(&[false; 3], &[false; 3]);
        assert_eq!(g.sensitivity, None);
    }

    #[test]
    fn pointwise_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let rows = vec![
            PointwiseRow { point_id: 0, beta_diagnosis: 0.1, se: 0.05, t: 2.0, p_raw: 0.0456, significant: true },
            PointwiseRow { point_id: 1, beta_diagnosis: -1e-17, se: 0.2, t: -5e-17, p_raw: 1.0, significant: false },
        ];
        write_pointwise_csv(&p, &rows).unwrap();
        assert_eq!(read_pointwise_csv(&p).unwrap(), rows);
    }
}
