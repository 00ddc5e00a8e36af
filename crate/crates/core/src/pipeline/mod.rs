//! End-to-end workflow: configuration, stages and reports.
//!
//! Every stage reads its inputs from and writes its outputs to one output
//! directory, so stages can run one at a time on saved intermediates and give
//! the same files as a full run.

pub mod config;
pub mod manifest;
mod report;
mod stages;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

pub use config::{CohortSource, PipelineConfig, ProcrustesConfig, Seeds, StatsConfig, SCHEMA_VERSION};
pub use manifest::{CohortManifest, ManifestRow};
pub use report::{
    read_pointwise_csv, write_pointwise_csv, AsymmetrySummary, GroundTruthSummary, GroupTests, HornSummary,
    HotellingSummary, PointwiseRow, PointwiseSummary, RunReport,
};

use crate::error::{Error, Result};

pub const COHORT_DIR: &str = "cohort";
pub const RAW_MODEL: &str = "shape_model_raw.ssm";
pub const TEMPLATE_FACES: &str = "template_faces.txt";
pub const GROUND_TRUTH_POINTS: &str = "ground_truth_points.txt";
pub const OPTIMIZER_REPORT: &str = "optimizer_report.json";
pub const VOLUMES: &str = "volumes.csv";
pub const ALIGNED_MODEL: &str = "shape_model_aligned.ssm";
pub const PROCRUSTES_REPORT: &str = "procrustes.json";
pub const ASYMMETRY: &str = "asymmetry.csv";
pub const ASYMMETRY_ABS: &str = "asymmetry_abs.csv";
pub const ASYMMETRY_SUMMARY: &str = "asymmetry_summary.json";
pub const POINTWISE_STATS: &str = "pointwise_stats.csv";
pub const GROUP_TESTS: &str = "group_tests.json";
pub const ANNOTATED_MESH: &str = "mean_shape_annotated.ply";
pub const RUN_REPORT_JSON: &str = "run_report.json";
pub const RUN_REPORT_TXT: &str = "run_report.txt";
pub const TIMINGS: &str = "timings.json";
pub const FAILED_MARKER: &str = "FAILED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Synth,
    Optimize,
    Align,
    Asymmetry,
    Stats,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Synth,
        Stage::Optimize,
        Stage::Align,
        Stage::Asymmetry,
        Stage::Stats,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Optimize => "optimize",
            Stage::Align => "align",
            Stage::Asymmetry => "asymmetry",
            Stage::Stats => "stats",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Stage::ALL.iter().map(|s| s.name()).collect();
                Error::Config(format!("unknown stage '{s}'; expected one of {}", names.join(", ")))
            })
    }
}

/// A configured run writing into one output directory.
#[derive(Debug, Clone)]
pub struct Pipeline {
    config: PipelineConfig,
    out: PathBuf,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, out: impl Into<PathBuf>) -> Self {
        Pipeline {
            config,
            out: out.into(),
        }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn out(&self) -> &Path {
        &self.out
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Run one stage. On failure a marker naming the stage is left in the
    /// output directory next to whatever the stage already wrote.
    pub fn run_stage(&self, stage: Stage) -> Result<()> {
        std::fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        let marker = self.path(FAILED_MARKER);
        if marker.exists() {
            std::fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
        }
        log::info!("stage {stage}: start");
        let t0 = Instant::now();
        let result = match stage {
            Stage::Synth => stages::synth(self),
            Stage::Optimize => stages::optimize(self),
            Stage::Align => stages::align(self),
            Stage::Asymmetry => stages::asymmetry(self),
            Stage::Stats => stages::stats(self),
            Stage::Report => stages::report(self).map(|_| ()),
        };
        let secs = t0.elapsed().as_secs_f64();
        match result {
            Ok(()) => {
                log::info!("stage {stage}: done in {secs:.2} s");
                self.record_timing(stage, secs)
            }
            Err(e) => {
                let text = format!("stage: {stage}\nerror: {e}\n");
                if let Err(w) = std::fs::write(&marker, text) {
                    log::error!("could not write {}: {w}", marker.display());
                }
                Err(Error::Stage {
                    stage: stage.name().to_string(),
                    source: Box::new(e),
                })
            }
        }
    }

    /// Run every stage in order and return the run report.
    pub fn run(&self) -> Result<RunReport> {
        for stage in Stage::ALL {
            self.run_stage(stage)?;
        }
        RunReport::load(&self.path(RUN_REPORT_JSON))
    }

    fn record_timing(&self, stage: Stage, secs: f64) -> Result<()> {
        let path = self.path(TIMINGS);
        let mut map: BTreeMap<String, f64> = std::fs::read_to_string(&path)
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok())
            .unwrap_or_default();
        map.insert(stage.name().to_string(), secs);
        write_json(&path, &map)
    }
}

/// Run the full workflow described by `config` into `out`.
pub fn run_pipeline(config: &PipelineConfig, out: &Path) -> Result<RunReport> {
    Pipeline::new(config.clone(), out).run()
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Input(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        assert!(matches!("fit".parse::<Stage>(), Err(Error::Config(_))));
    }

    #[test]
    fn failure_leaves_marker() {
        let dir = tempfile::tempdir().unwrap();
        let p = Pipeline::new(PipelineConfig::default(), dir.path());
        let err = p.run_stage(Stage::Align).unwrap_err();
        assert!(matches!(err.root(), Error::MissingArtifact(f) if f.ends_with(RAW_MODEL)));
        let marker = std::fs::read_to_string(dir.path().join(FAILED_MARKER)).unwrap();
        assert!(marker.starts_with("stage: align\n"));
        assert!(err.to_string().contains("align"));
    }
}
