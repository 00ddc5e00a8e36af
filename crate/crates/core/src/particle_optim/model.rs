use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::surface::{SurfacePoint, Vec3};

/// Particles on one surface. Index order is the correspondence identity.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    pub surface_id: usize,
    pub particles: Vec<SurfacePoint>,
}

impl ParticleSet {
    pub fn positions(&self) -> Vec<Vec3> {
        self.particles.iter().map(|p| p.position).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Left => "left",
            Side::Right => "right",
        })
    }
}

impl FromStr for Side {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "left" => Ok(Side::Left),
            "right" => Ok(Side::Right),
            other => Err(format!("unknown side '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleLabel {
    pub subject_id: String,
    pub side: Side,
}

/// A cohort of corresponding particle configurations.
///
/// Samples share M; row `i` of [`ShapeModel::shape_matrix`] is sample `i`
/// flattened as `x₁ y₁ z₁ x₂ …`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeModel {
    labels: Vec<SampleLabel>,
    samples: Vec<Vec<Vec3>>,
}

impl ShapeModel {
    pub fn new(labels: Vec<SampleLabel>, samples: Vec<Vec<Vec3>>) -> Result<Self> {
        if labels.len() != samples.len() {
            return Err(Error::Input(format!(
                "{} labels for {} samples",
                labels.len(),
                samples.len()
            )));
        }
        if let Some(first) = samples.first() {
            if first.is_empty() {
                return Err(Error::Input("samples have no particles".into()));
            }
            if let Some(i) = samples.iter().position(|s| s.len() != first.len()) {
                return Err(Error::Input(format!(
                    "sample {i} has {} particles, expected {}",
                    samples[i].len(),
                    first.len()
                )));
            }
        }
        Ok(ShapeModel { labels, samples })
    }

    /// Model with generic labels `s0, s1, …`, all left.
    pub fn unlabeled(samples: Vec<Vec<Vec3>>) -> Self {
        let labels = (0..samples.len())
            .map(|i| SampleLabel {
                subject_id: format!("s{i}"),
                side: Side::Left,
            })
            .collect();
        ShapeModel::new(labels, samples).expect("consistent sample sizes")
    }

    pub fn from_particle_sets(labels: Vec<SampleLabel>, sets: &[ParticleSet]) -> Result<Self> {
        ShapeModel::new(labels, sets.iter().map(|s| s.positions()).collect())
    }

    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn n_particles(&self) -> usize {
        self.samples.first().map_or(0, |s| s.len())
    }

    pub fn labels(&self) -> &[SampleLabel] {
        &self.labels
    }

    pub fn samples(&self) -> &[Vec<Vec3>] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &[Vec3] {
        &self.samples[i]
    }

    /// Index of the sample with this subject and side.
    pub fn find(&self, subject_id: &str, side: Side) -> Option<usize> {
        self.labels
            .iter()
            .position(|l| l.subject_id == subject_id && l.side == side)
    }

    pub fn with_samples(&self, samples: Vec<Vec<Vec3>>) -> Result<Self> {
        ShapeModel::new(self.labels.clone(), samples)
    }

    pub fn shape_matrix(&self) -> DMatrix<f64> {
        super::entropy::shape_matrix(&self.samples)
    }

    /// Particle-wise mean over samples.
    pub fn mean_points(&self) -> Vec<Vec3> {
        mean_points(&self.samples)
    }

    /// Column mean of the shape matrix.
    pub fn mean_shape(&self) -> Vec<f64> {
        self.mean_points()
            .iter()
            .flat_map(|p| [p.x, p.y, p.z])
            .collect()
    }

    /// Trace of the sample covariance of the shape matrix (mm²).
    pub fn covariance_trace(&self) -> f64 {
        let n = self.n_samples();
        if n < 2 {
            return 0.0;
        }
        let mean = self.mean_points();
        let mut ss = 0.0;
        for s in &self.samples {
            for (p, q) in s.iter().zip(&mean) {
                ss += (p - q).norm_squared();
            }
        }
        ss / (n - 1) as f64
    }

    /// Text serialization; see the crate README for the layout.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("asym-ssm shape model\nversion 1\n");
        let _ = writeln!(out, "samples {}", self.n_samples());
        let _ = writeln!(out, "particles {}", self.n_particles());
        for (i, l) in self.labels.iter().enumerate() {
            let _ = writeln!(out, "sample {i} {} {}", l.subject_id, l.side);
        }
        out.push_str("data\n");
        for s in &self.samples {
            let mut first = true;
            for p in s {
                for c in [p.x, p.y, p.z] {
                    if !first {
                        out.push(' ');
                    }
                    first = false;
                    let _ = write!(out, "{c}");
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Input(format!("shape model line {}: {msg}", line + 1));
        let mut lines = text.lines().enumerate();
        let mut expect = |want: &str| -> Result<(usize, String)> {
            let (i, l) = lines.next().ok_or_else(|| bad(usize::MAX - 1, "unexpected end"))?;
            let mut tok = l.split_whitespace();
            if tok.next() != Some(want) {
                return Err(bad(i, &format!("expected '{want}'")));
            }
            Ok((i, tok.collect::<Vec<_>>().join(" ")))
        };
        let (i, magic) = expect("asym-ssm")?;
        if magic != "shape model" {
            return Err(bad(i, "not a shape model file"));
        }
        let (i, v) = expect("version")?;
        if v != "1" {
            return Err(bad(i, "unsupported version"));
        }
        let (i, n) = expect("samples")?;
        let n: usize = n.parse().map_err(|_| bad(i, "bad sample count"))?;
        let (i, m) = expect("particles")?;
        let m: usize = m.parse().map_err(|_| bad(i, "bad particle count"))?;
        let mut labels = Vec::with_capacity(n);
        for k in 0..n {
            let (i, rest) = expect("sample")?;
            let parts: Vec<&str> = rest.split(' ').collect();
            if parts.len() != 3 || parts[0].parse::<usize>() != Ok(k) {
                return Err(bad(i, "malformed sample line"));
            }
            let side = parts[2].parse::<Side>().map_err(|e| bad(i, &e))?;
            labels.push(SampleLabel {
                subject_id: parts[1].to_string(),
                side,
            });
        }
        expect("data")?;
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let (i, l) = lines.next().ok_or_else(|| bad(usize::MAX - 1, "missing data row"))?;
            let vals: Vec<f64> = l
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad(i, "bad coordinate"))?;
            if vals.len() != 3 * m {
                return Err(bad(i, &format!("expected {} values, found {}", 3 * m, vals.len())));
            }
            samples.push(vals.chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect());
        }
        ShapeModel::new(labels, samples)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ShapeModel::from_text(&text)
    }
}

pub(crate) fn mean_points(samples: &[Vec<Vec3>]) -> Vec<Vec3> {
    let n = samples.len();
    let m = samples.first().map_or(0, |s| s.len());
    let mut mean = vec![Vec3::zeros(); m];
    for s in samples {
        for (a, p) in mean.iter_mut().zip(s) {
            *a += p;
        }
    }
    for a in &mut mean {
        *a /= n as f64;
    }
    mean
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ShapeModel {
        let labels = vec![
            SampleLabel {
                subject_id: "A".into(),
                side: Side::Left,
            },
            SampleLabel {
                subject_id: "A".into(),
                side: Side::Right,
            },
        ];
        let samples = vec![
            vec![Vec3::new(0.1, 0.2, 0.3), Vec3::new(1.0 / 3.0, -2.5e-17, 7.0)],
            vec![Vec3::new(-0.1, 0.0, 1e300), Vec3::new(2.0, 3.0, 4.0)],
        ];
        ShapeModel::new(labels, samples).unwrap()
    }

    #[test]
    fn text_round_trip_is_exact() {
        let m = model();
        let back = ShapeModel::from_text(&m.to_text()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_text(), m.to_text());
    }

    #[test]
    fn shape_matrix_rows_and_mean() {
        let m = model();
        let z = m.shape_matrix();
        assert_eq!(z.shape(), (2, 6));
        assert_eq!(z[(0, 3)], 1.0 / 3.0);
        let mean = m.mean_shape();
        for c in 0..6 {
            assert_eq!(mean[c], (z[(0, c)] + z[(1, c)]) / 2.0);
        }
    }

    #[test]
    fn truncated_file_rejected() {
        let text = model().to_text();
        let cut: String = text.lines().take(7).collect::<Vec<_>>().join("\n");
        assert!(ShapeModel::from_text(&cut).is_err());
    }

    #[test]
    fn mismatched_sizes_rejected() {
        let r = ShapeModel::new(
            vec![
                SampleLabel {
                    subject_id: "a".into(),
                    side: Side::Left,
                },
                SampleLabel {
                    subject_id: "b".into(),
                    side: Side::Left,
                },
            ],
            vec![vec![Vec3::zeros()], vec![Vec3::zeros(), Vec3::zeros()]],
        );
        assert!(r.is_err());
    }
}
