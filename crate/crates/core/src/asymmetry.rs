//! Point-wise left/right asymmetry: difference vectors, midpoint reference
//! shape, its normals, and the signed normal projection.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::stats::CovariateRow;
use crate::surface::{angle_weighted_normals, SurfacePoint, TriangleMesh, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectPair {
    pub subject_id: String,
    pub left: Vec<Vec3>,
    /// Right side already mirrored into the left frame.
    pub right_flipped: Vec<Vec3>,
    pub covariates: Option<CovariateRow>,
}

impl SubjectPair {
    pub fn new(subject_id: impl Into<String>, left: Vec<Vec3>, right_flipped: Vec<Vec3>) -> Result<Self> {
        if left.len() != right_flipped.len() || left.is_empty() {
            return Err(Error::Input(format!(
                "left has {} points, right has {}",
                left.len(),
                right_flipped.len()
            )));
        }
        Ok(SubjectPair {
            subject_id: subject_id.into(),
            left,
            right_flipped,
            covariates: None,
        })
    }

    pub fn swapped(&self) -> SubjectPair {
        SubjectPair {
            subject_id: self.subject_id.clone(),
            left: self.right_flipped.clone(),
            right_flipped: self.left.clone(),
            covariates: self.covariates,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceShape {
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    /// Points without a non-degenerate incident template face; their normal
    /// points away from the shape centroid.
    pub fallback_points: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsymmetryField {
    pub subject_id: String,
    pub values: Vec<f64>,
    pub abs_values: Vec<f64>,
    pub fallback_points: Vec<usize>,
}

/// Row m is `l[m] − r[m]`.
pub fn difference_vectors(pair: &SubjectPair) -> Vec<Vec3> {
    pair.left.iter().zip(&pair.right_flipped).map(|(l, r)| l - r).collect()
}

/// Midpoint shape `(l + r)/2` and its angle-weighted normals over the
/// template triangulation.
pub fn midpoint_reference(pair: &SubjectPair, template_faces: &[[usize; 3]]) -> Result<ReferenceShape> {
    let m = pair.left.len();
    if let Some(f) = template_faces.iter().find(|f| f.iter().any(|&i| i >= m)) {
        return Err(Error::Input(format!("template face {f:?} indexes past {m} points")));
    }
    let points: Vec<Vec3> = pair
        .left
        .iter()
        .zip(&pair.right_flipped)
        .map(|(l, r)| (l + r) * 0.5)
        .collect();
    let (mut normals, missing) = angle_weighted_normals(&points, template_faces);
    if !missing.is_empty() {
        let mut c = Vec3::zeros();
        for p in &points {
            c += p;
        }
        c /= m as f64;
        for &i in &missing {
            let d = points[i] - c;
            normals[i] = if d.norm() > 0.0 { d.normalize() } else { Vec3::z() };
        }
        log::warn!(
            "subject {}: {} points have no usable template face; using centroid directions",
            pair.subject_id,
            missing.len()
        );
    }
    Ok(ReferenceShape {
        points,
        normals,
        fallback_points: missing,
    })
}

/// `y[m] = d[m] · n[m]`.
pub fn normal_projection(d: &[Vec3], normals: &[Vec3]) -> Result<Vec<f64>> {
    if d.len() != normals.len() {
        return Err(Error::Input(format!("{} difference vectors for {} normals", d.len(), normals.len())));
    }
    Ok(d.iter().zip(normals).map(|(a, n)| a.dot(n)).collect())
}

pub fn subject_asymmetry(pair: &SubjectPair, template_faces: &[[usize; 3]]) -> Result<AsymmetryField> {
    let reference = midpoint_reference(pair, template_faces)?;
    let values = normal_projection(&difference_vectors(pair), &reference.normals)?;
    let abs_values = values.iter().map(|v| v.abs()).collect();
    Ok(AsymmetryField {
        subject_id: pair.subject_id.clone(),
        values,
        abs_values,
        fallback_points: reference.fallback_points,
    })
}

pub fn cohort_asymmetry(pairs: &[SubjectPair], template_faces: &[[usize; 3]]) -> Result<Vec<AsymmetryField>> {
    pairs.par_iter().map(|p| subject_asymmetry(p, template_faces)).collect()
}

#[derive(PartialEq)]
struct Entry {
    dist: f64,
    label: usize,
    vertex: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (dist, label, vertex)
        other
            .dist
            .total_cmp(&self.dist)
            .then(other.label.cmp(&self.label))
            .then(other.vertex.cmp(&self.vertex))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Label every mesh vertex with its nearest particle along mesh edges.
pub fn geodesic_voronoi(mesh: &TriangleMesh, particles: &[SurfacePoint]) -> Vec<usize> {
    let verts = mesh.vertices();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); verts.len()];
    for f in mesh.faces() {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }
    let mut dist = vec![f64::INFINITY; verts.len()];
    let mut label = vec![usize::MAX; verts.len()];
    let mut heap = BinaryHeap::new();
    for (i, p) in particles.iter().enumerate() {
        for &v in &mesh.faces()[p.face] {
            heap.push(Entry {
                dist: (verts[v] - p.position).norm(),
                label: i,
                vertex: v,
            });
        }
    }
    let mut done = vec![false; verts.len()];
    while let Some(Entry { dist: d, label: l, vertex: v }) = heap.pop() {
        if done[v] {
            continue;
        }
        done[v] = true;
        dist[v] = d;
        label[v] = l;
        for &w in &adj[v] {
            if !done[w] {
                let nd = d + (verts[w] - verts[v]).norm();
                if nd < dist[w] || (nd == dist[w] && l < label[w]) {
                    dist[w] = nd;
                    label[w] = l;
                    heap.push(Entry { dist: nd, label: l, vertex: w });
                }
            }
        }
    }
    label
}

/// Template triangulation over particle indices: the dual of the geodesic
/// Voronoi labelling of `mesh`. Each mesh face whose three vertices carry
/// distinct labels yields one triangle, wound like the face.
pub fn template_faces(mesh: &TriangleMesh, particles: &[SurfacePoint]) -> Vec<[usize; 3]> {
    let label = geodesic_voronoi(mesh, particles);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for f in mesh.faces() {
        let t = [label[f[0]], label[f[1]], label[f[2]]];
        if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
            continue;
        }
        let mut key = t;
        key.sort_unstable();
        if seen.insert(key) {
            out.push(t);
        }
    }
    out
}

pub fn write_template_faces(path: &Path, faces: &[[usize; 3]]) -> Result<()> {
    let mut s = String::new();
    for f in faces {
        s.push_str(&format!("{} {} {}\n", f[0], f[1], f[2]));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_template_faces(path: &Path) -> Result<Vec<[usize; 3]>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let v: Vec<usize> = l
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Input(format!("{}:{}: bad face index", path.display(), i + 1)))?;
            match v.as_slice() {
                [a, b, c] => Ok([*a, *b, *c]),
                _ => Err(Error::Input(format!("{}:{}: expected 3 indices", path.display(), i + 1))),
            }
        })
        .collect()
}

/// Write `subject_id, y_1..y_M` rows.
pub fn write_asymmetry_csv(path: &Path, ids: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let m = rows.first().map_or(0, |r| r.len());
    let mut out = Vec::new();
    let mut header = String::from("subject_id");
    for j in 1..=m {
        header.push_str(&format!(",y_{j}"));
    }
    writeln!(out, "{header}").ok();
    for (id, r) in ids.iter().zip(rows) {
        let mut line = id.clone();
        for v in r {
            line.push_str(&format!(",{v}"));
        }
        writeln!(out, "{line}").ok();
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_asymmetry_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    let headers = rdr.headers().map_err(|e| Error::Input(format!("{}: {e}", path.display())))?.clone();
    if headers.get(0) != Some("subject_id") {
        return Err(Error::Input(format!("{}: first column must be subject_id", path.display())));
    }
    let m = headers.len() - 1;
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        if rec.len() != m + 1 {
            return Err(Error::Input(format!("{}: row {} has {} fields", path.display(), i + 1, rec.len())));
        }
        ids.push(rec[0].to_string());
        let vals: Vec<f64> = rec
            .iter()
            .skip(1)
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Input(format!("{}: row {} has a non-numeric value", path.display(), i + 1)))?;
        rows.push(vals);
    }
    Ok((ids, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::{primitives, Surface};
    use nalgebra::{Rotation3, Unit};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sphere_template(level: u32, radius: f64) -> (Vec<Vec3>, Vec<[usize; 3]>) {
        let m = primitives::icosphere(level);
        let pts = m.vertices().iter().map(|v| v * radius).collect();
        (pts, m.faces().to_vec())
    }

    #[test]
    fn differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l: Vec<Vec3> = (0..10).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        let pair = SubjectPair::new("a", l.clone(), l.clone()).unwrap();
        assert!(difference_vectors(&pair).iter().all(|d| *d == Vec3::zeros()));
        let r: Vec<Vec3> = l.iter().map(|p| p - Vec3::z()).collect();
        let pair = SubjectPair::new("a", l.clone(), r.clone()).unwrap();
        for d in difference_vectors(&pair) {
            assert!((d - Vec3::z()).norm() < 1e-15);
        }
        for (i, d) in difference_vectors(&pair).iter().enumerate() {
            assert_eq!(d.x, l[i].x - r[i].x);
        }
    }

    #[test]
    fn sphere_midpoint_normals_are_radial() {
        let (pts, faces) = sphere_template(4, 1.0);
        let pair = SubjectPair::new("a", pts.clone(), pts.clone()).unwrap();
        let e = midpoint_reference(&pair, &faces).unwrap();
        assert!(e.fallback_points.is_empty());
        for (p, n) in e.points.iter().zip(&e.normals) {
            assert!((n.norm() - 1.0).abs() < 1e-9);
            assert!(n.angle(p) < 2f64.to_radians());
        }
    }

    #[test]
    fn concentric_spheres_average() {
        let (pts, faces) = sphere_template(3, 1.0);
        let big: Vec<Vec3> = pts.iter().map(|p| p * 2.0).collect();
        let e = midpoint_reference(&SubjectPair::new("a", pts.clone(), big).unwrap(), &faces).unwrap();
        for p in &e.points {
            assert!((p.norm() - 1.5).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_cases() {
        let n = vec![Vec3::x(), Vec3::new(0.0, 0.6, 0.8)];
        assert_eq!(normal_projection(&[Vec3::x() * 2.0, n[1] * 2.0], &n).unwrap()[0], 2.0);
        assert!((normal_projection(&[Vec3::x() * 2.0, n[1] * 2.0], &n).unwrap()[1] - 2.0).abs() < 1e-15);
        let perp = [Vec3::y(), Vec3::new(0.0, 0.8, -0.6)];
        for v in normal_projection(&perp, &n).unwrap() {
            assert!(v.abs() < 1e-15);
        }
    }

    #[test]
    fn inflation_along_normals() {
        let (pts, faces) = sphere_template(4, 10.0);
        let base = SubjectPair::new("a", pts.clone(), pts.clone()).unwrap();
        let normals = midpoint_reference(&base, &faces).unwrap().normals;
        let left: Vec<Vec3> = pts.iter().zip(&normals).map(|(p, n)| p + n * 0.25).collect();
        let right: Vec<Vec3> = pts.iter().zip(&normals).map(|(p, n)| p - n * 0.25).collect();
        let field = subject_asymmetry(&SubjectPair::new("a", left, right).unwrap(), &faces).unwrap();
        for v in &field.values {
            assert!((v - 0.5).abs() < 0.025, "{v}");
        }
        let zero = subject_asymmetry(&base, &faces).unwrap();
        assert!(zero.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn degenerate_faces_fall_back() {
        let (mut pts, faces) = sphere_template(1, 1.0);
        // collapse every face touching point 0 onto point 0
        let touching: Vec<usize> = faces.iter().filter(|f| f.contains(&0)).flatten().copied().collect();
        for i in touching {
            pts[i] = pts[0];
        }
        let e = midpoint_reference(&SubjectPair::new("a", pts.clone(), pts).unwrap(), &faces).unwrap();
        assert!(e.fallback_points.contains(&0));
        assert!(e.normals.iter().all(|n| (n.norm() - 1.0).abs() < 1e-9));
    }

    #[test]
    fn template_from_voronoi_is_closed_on_sphere() {
        let mesh = primitives::icosphere(4);
        let surface = Surface::new(mesh.clone());
        // particles at the vertices of a coarser icosphere
        let coarse = primitives::icosphere(2);
        let particles: Vec<SurfacePoint> = coarse.vertices().iter().map(|v| surface.project(*v)).collect();
        let faces = template_faces(&mesh, &particles);
        assert!(!faces.is_empty());
        let pts: Vec<Vec3> = particles.iter().map(|p| p.position).collect();
        let (normals, missing) = angle_weighted_normals(&pts, &faces);
        assert!(missing.is_empty());
        for (p, n) in pts.iter().zip(&normals) {
            assert!(n.dot(p) > 0.9);
        }
        assert!(TriangleMesh::new(pts, faces).is_ok());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        let ids = vec!["s1".to_string(), "s2".to_string()];
        let rows = vec![vec![0.1, -2.5e-7, 3.0], vec![1.0 / 3.0, 0.0, -1e10]];
        write_asymmetry_csv(&p, &ids, &rows).unwrap();
        let (i2, r2) = read_asymmetry_csv(&p).unwrap();
        assert_eq!(i2, ids);
        assert_eq!(r2, rows);
        assert!(std::fs::read_to_string(&p).unwrap().starts_with("subject_id,y_1,y_2,y_3\n"));
    }

    proptest! {
        #[test]
        fn swap_negates_and_bounds_hold(seed in 0u64..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (pts, faces) = sphere_template(2, 5.0);
            let jitter = |rng: &mut ChaCha8Rng| -> Vec<Vec3> {
                pts.iter().map(|p| p + Vec3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3))).collect()
            };
            let pair = SubjectPair::new("s", jitter(&mut rng), jitter(&mut rng)).unwrap();
            let a = subject_asymmetry(&pair, &faces).unwrap();
            let b = subject_asymmetry(&pair.swapped(), &faces).unwrap();
            let d = difference_vectors(&pair);
            for m in 0..a.values.len() {
                prop_assert_eq!(a.values[m], -b.values[m]);
                prop_assert_eq!(a.abs_values[m], b.abs_values[m]);
                prop_assert_eq!(a.abs_values[m], a.values[m].abs());
                prop_assert!(a.abs_values[m] <= d[m].norm() + 1e-15);
            }
        }

        #[test]
        fn rigid_motion_leaves_values(seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (pts, faces) = sphere_template(2, 5.0);
            let l: Vec<Vec3> = pts.iter().map(|p| p * rng.random_range(0.95..1.05)).collect();
            let pair = SubjectPair::new("s", l, pts.clone()).unwrap();
            let rot = Rotation3::from_axis_angle(&Unit::new_normalize(Vec3::new(rng.random(), rng.random(), 1.0)), rng.random_range(-3.0..3.0));
            let t = Vec3::new(rng.random_range(-50.0..50.0), 3.0, -7.0);
            let moved = SubjectPair::new(
                "s",
                pair.left.iter().map(|p| rot * p + t).collect(),
                pair.right_flipped.iter().map(|p| rot * p + t).collect(),
            ).unwrap();
            let a = subject_asymmetry(&pair, &faces).unwrap();
            let b = subject_asymmetry(&moved, &faces).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!((x - y).abs() < 1e-8);
            }
        }
    }
}
