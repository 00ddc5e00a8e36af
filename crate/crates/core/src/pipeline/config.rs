use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::particle_optim::OptimizerConfig;
use crate::stats::HornCriterion;
use crate::synthcohort::CohortSpec;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CohortSource {
    /// Generate a cohort into the output directory.
    Synthetic(CohortSpec),
    /// Existing manifest CSV; relative paths resolve against the config file.
    Manifest(PathBuf),
}

impl Default for CohortSource {
    fn default() -> Self {
        CohortSource::Synthetic(CohortSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProcrustesConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for ProcrustesConfig {
    fn default() -> Self {
        ProcrustesConfig {
            tolerance: 1e-6,
            max_iterations: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsConfig {
    pub fdr_q: f64,
    pub horn_permutations: usize,
    pub horn_criterion: HornCriterion,
    pub include_handedness: bool,
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig {
            fdr_q: 0.05,
            horn_permutations: 500,
            horn_criterion: HornCriterion::Percentile95,
            include_handedness: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    /// Root of every random draw. Seeds inside sections are replaced by
    /// values derived from it.
    pub seed: u64,
    pub cohort: CohortSource,
    pub optimizer: OptimizerConfig,
    pub procrustes: ProcrustesConfig,
    pub stats: StatsConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            cohort: CohortSource::default(),
            optimizer: OptimizerConfig::default(),
            procrustes: ProcrustesConfig::default(),
            stats: StatsConfig::default(),
            base_dir: PathBuf::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub root: u64,
    pub synth: u64,
    pub optimizer: u64,
    pub horn: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Seeds {
    pub fn derive(root: u64) -> Self {
        Seeds {
            root,
            synth: splitmix(root ^ 0x5_1),
            optimizer: splitmix(root ^ 0x0_2),
            horn: splitmix(root ^ 0x4_3),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut c: PipelineConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.base_dir = base_dir.into();
        c.resolve()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Result<Self> {
        self.seed = seed;
        self.resolve()?;
        Ok(self)
    }

    pub fn seeds(&self) -> Seeds {
        Seeds::derive(self.seed)
    }

    /// Validate and write derived seeds into the sections.
    pub fn resolve(&mut self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let seeds = self.seeds();
        self.optimizer.seed = seeds.optimizer;
        if let CohortSource::Synthetic(spec) = &mut self.cohort {
            spec.seed = seeds.synth;
            spec.validate()?;
        }
        self.optimizer.validate()?;
        if self.optimizer.m_target < 2 {
            return Err(Error::Config("optimizer.m_target must be at least 2".into()));
        }
        if !(self.stats.fdr_q > 0.0 && self.stats.fdr_q < 1.0) {
            return Err(Error::Config(format!("stats.fdr_q must lie in (0, 1), got {}", self.stats.fdr_q)));
        }
        if self.stats.horn_permutations == 0 {
            return Err(Error::Config("stats.horn_permutations must be at least 1".into()));
        }
        if !(self.procrustes.tolerance > 0.0) || self.procrustes.max_iterations == 0 {
            return Err(Error::Config("procrustes.tolerance and max_iterations must be positive".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn manifest_path(&self, out: &Path) -> PathBuf {
        match &self.cohort {
            CohortSource::Synthetic(_) => out.join(super::COHORT_DIR).join(crate::synthcohort::MANIFEST_FILE),
            CohortSource::Manifest(p) if p.is_absolute() => p.clone(),
            CohortSource::Manifest(p) => self.base_dir.join(p),
        }
    }
}
