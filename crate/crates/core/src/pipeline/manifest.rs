use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::CovariateRow;

pub const MANIFEST_HEADER: [&str; 8] = [
    "subject_id",
    "left_mesh",
    "right_mesh",
    "age",
    "sex",
    "etiv",
    "diagnosis",
    "handedness",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub subject_id: String,
    /// Relative paths resolve against the manifest's directory.
    pub left_mesh: PathBuf,
    pub right_mesh: PathBuf,
    pub covariates: CovariateRow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortManifest {
    pub rows: Vec<ManifestRow>,
    base: PathBuf,
}

#[derive(Deserialize)]
struct RawRow {
    subject_id: String,
    left_mesh: String,
    right_mesh: String,
    age: f64,
    sex: u8,
    etiv: f64,
    diagnosis: String,
    handedness: Option<u8>,
}

pub fn diagnosis_label(d: u8) -> &'static str {
    if d == 1 {
        "AD"
    } else {
        "healthy"
    }
}

fn parse_diagnosis(s: &str) -> Option<u8> {
    match s {
        "healthy" => Some(0),
        "AD" => Some(1),
        _ => None,
    }
}

impl CohortManifest {
    pub fn new(rows: Vec<ManifestRow>, base: impl Into<PathBuf>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &rows {
            if !seen.insert(r.subject_id.as_str()) {
                return Err(Error::Input(format!("duplicate subject_id '{}'", r.subject_id)));
            }
            if r.subject_id.is_empty() || r.subject_id.contains(char::is_whitespace) {
                return Err(Error::Input(format!("subject_id '{}' must be non-empty without whitespace", r.subject_id)));
            }
            r.covariates
                .validate()
                .map_err(|e| Error::Input(format!("subject {}: {e}", r.subject_id)))?;
        }
        Ok(CohortManifest { rows, base: base.into() })
    }

    pub fn base(&self) -> &Path {
        &self.base
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn covariates(&self) -> Vec<CovariateRow> {
        self.rows.iter().map(|r| r.covariates).collect()
    }

    pub fn subject_ids(&self) -> Vec<String> {
        self.rows.iter().map(|r| r.subject_id.clone()).collect()
    }

    /// Read and validate a manifest. Every referenced mesh must exist.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let bad = |m: String| Error::Input(format!("{}: {m}", path.display()));
        let mut rdr = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
        let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
        let got: Vec<&str> = headers.iter().collect();
        if got != MANIFEST_HEADER {
            return Err(bad(format!("header must be {}", MANIFEST_HEADER.join(","))));
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.deserialize::<RawRow>().enumerate() {
            let raw = rec.map_err(|e| bad(format!("row {}: {e}", i + 1)))?;
            let diagnosis = parse_diagnosis(&raw.diagnosis)
                .ok_or_else(|| bad(format!("row {}: diagnosis must be 'healthy' or 'AD', got '{}'", i + 1, raw.diagnosis)))?;
            rows.push(ManifestRow {
                subject_id: raw.subject_id,
                left_mesh: raw.left_mesh.into(),
                right_mesh: raw.right_mesh.into(),
                covariates: CovariateRow {
                    age: raw.age,
                    sex: raw.sex,
                    etiv: raw.etiv,
                    diagnosis,
                    handedness: raw.handedness,
                },
            });
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let manifest = CohortManifest::new(rows, base)?;
        for r in &manifest.rows {
            for p in [&r.left_mesh, &r.right_mesh] {
                let full = manifest.resolve(p);
                if !full.exists() {
                    return Err(Error::MissingArtifact(full));
                }
            }
        }
        Ok(manifest)
    }

    pub fn to_csv(&self) -> String {
        let mut s = MANIFEST_HEADER.join(",");
        s.push('\n');
        for r in &self.rows {
            let c = &r.covariates;
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.subject_id,
                r.left_mesh.display(),
                r.right_mesh.display(),
                c.age,
                c.sex,
                c.etiv,
                diagnosis_label(c.diagnosis),
                c.handedness.map(|h| h.to_string()).unwrap_or_default()
            ));
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str) -> ManifestRow {
        ManifestRow {
            subject_id: id.into(),
            left_mesh: format!("{id}_l.ply").into(),
            right_mesh: format!("{id}_r.ply").into(),
            covariates: CovariateRow {
                age: 71.5,
                sex: 1,
                etiv: 1.4e6,
                diagnosis: 1,
                handedness: None,
            },
        }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for id in ["a", "b"] {
            std::fs::write(dir.path().join(format!("{id}_l.ply")), "").unwrap();
            std::fs::write(dir.path().join(format!("{id}_r.ply")), "").unwrap();
        }
        let mut rows = vec![row("a"), row("b")];
        rows[1].covariates.diagnosis = 0;
        rows[1].covariates.handedness = Some(1);
        let m = CohortManifest::new(rows, dir.path()).unwrap();
        let p = dir.path().join("cohort.csv");
        m.save(&p).unwrap();
        let back = CohortManifest::load(&p).unwrap();
        assert_eq!(back.rows, m.rows);
    }

    #[test]
    fn rejects_duplicates_and_missing_files() {
        assert!(CohortManifest::new(vec![row("a"), row("a")], ".").is_err());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cohort.csv");
        CohortManifest::new(vec![row("a")], dir.path()).unwrap().save(&p).unwrap();
        assert!(matches!(CohortManifest::load(&p), Err(Error::MissingArtifact(_))));
    }

    #[test]
    fn rejects_bad_diagnosis() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cohort.csv");
        std::fs::write(&p, format!("{}\ns,l.ply,r.ply,70,0,1500000,MCI,\n", MANIFEST_HEADER.join(","))).unwrap();
        let err = CohortManifest::load(&p).unwrap_err().to_string();
        assert!(err.contains("diagnosis"), "{err}");
    }
}
