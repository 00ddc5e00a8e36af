use std::collections::{HashMap, VecDeque};
use std::fmt;

use thiserror::Error;

use super::geometry::{canonical_order, corner_angle, face_cross};
use super::Vec3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SurfaceError {
    #[error("face {face} references vertex {index} but the mesh has {vertex_count} vertices")]
    IndexOutOfRange {
        face: usize,
        index: usize,
        vertex_count: usize,
    },
    #[error("face {face} repeats a vertex index")]
    DegenerateFace { face: usize },
    #[error("mesh is open: edge ({0}, {1}) belongs to a single face")]
    BoundaryEdge(usize, usize),
    #[error("mesh is non-manifold: edge ({a}, {b}) is shared by {count} faces")]
    NonManifoldEdge { a: usize, b: usize, count: usize },
    #[error("mesh is not orientable (conflict across edge ({0}, {1}))")]
    NonOrientable(usize, usize),
    #[error("vertex {0} is not referenced by any face")]
    UnreferencedVertex(usize),
    #[error("mesh has no faces")]
    Empty,
    #[error("non-finite coordinate at vertex {0}")]
    NonFinite(usize),
    #[error("vertex {0} has no non-degenerate incident face; its normal is undefined")]
    UndefinedNormal(usize),
}

/// Axis of a coordinate mirror plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

/// Plane `coord[axis] = offset`. The sagittal plane of the default frame is `X = 0`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MirrorPlane {
    pub axis: Axis,
    #[serde(default)]
    pub offset: f64,
}

impl Default for MirrorPlane {
    fn default() -> Self {
        MirrorPlane::sagittal()
    }
}

impl MirrorPlane {
    pub fn sagittal() -> Self {
        MirrorPlane {
            axis: Axis::X,
            offset: 0.0,
        }
    }

    /// Reflect a point. With `offset == 0` this is an exact sign flip and
    /// therefore a bitwise involution.
    #[inline]
    pub fn reflect_point(&self, p: Vec3) -> Vec3 {
        let mut q = p;
        let k = self.axis.index();
        q[k] = if self.offset == 0.0 {
            -p[k]
        } else {
            2.0 * self.offset - p[k]
        };
        q
    }

    /// Reflect a direction (the linear part of the mirror only).
    #[inline]
    pub fn reflect_vector(&self, v: Vec3) -> Vec3 {
        let mut q = v;
        let k = self.axis.index();
        q[k] = -v[k];
        q
    }
}

/// A closed, orientable triangle mesh in millimetres.
///
/// Construct through [`TriangleMesh::new`], which validates topology and
/// normalizes every connected component to outward orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    outward: bool,
    report: MeshReport,
}

/// Summary of what validation found and changed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MeshReport {
    pub vertices: usize,
    pub faces: usize,
    pub components: usize,
    /// Faces whose winding was reversed to obtain a consistent orientation.
    pub faces_reoriented: usize,
    /// Components flipped as a whole because their signed volume was negative.
    pub components_flipped: usize,
    pub degenerate_faces: usize,
    pub volume: f64,
}

impl fmt::Display for MeshReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "mesh: vertices={} faces={} components={} faces_reoriented={} components_flipped={} degenerate_faces={} volume={}",
            self.vertices,
            self.faces,
            self.components,
            self.faces_reoriented,
            self.components_flipped,
            self.degenerate_faces,
            self.volume
        )
    }
}

impl TriangleMesh {
    /// Validate and orient a mesh.
    pub fn new(vertices: Vec<Vec3>, mut faces: Vec<[usize; 3]>) -> Result<Self, SurfaceError> {
        if faces.is_empty() {
            return Err(SurfaceError::Empty);
        }
        let nv = vertices.len();
        if let Some(i) = vertices
            .iter()
            .position(|v| !v.iter().all(|c| c.is_finite()))
        {
            return Err(SurfaceError::NonFinite(i));
        }
        let mut used = vec![false; nv];
        for (fi, f) in faces.iter().enumerate() {
            for &i in f {
                if i >= nv {
                    return Err(SurfaceError::IndexOutOfRange {
                        face: fi,
                        index: i,
                        vertex_count: nv,
                    });
                }
                used[i] = true;
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(SurfaceError::DegenerateFace { face: fi });
            }
        }
        if let Some(i) = used.iter().position(|u| !u) {
            return Err(SurfaceError::UnreferencedVertex(i));
        }

        let edge_faces = edge_incidence(&faces);
        // first offending edge in face order, for a stable error message
        for f in &faces {
            for k in 0..3 {
                let key = edge_key(f[k], f[(k + 1) % 3]);
                let count = edge_faces[&key].len();
                if count == 1 {
                    return Err(SurfaceError::BoundaryEdge(key.0, key.1));
                }
                if count > 2 {
                    return Err(SurfaceError::NonManifoldEdge {
                        a: key.0,
                        b: key.1,
                        count,
                    });
                }
            }
        }

        // propagate a consistent winding over each connected component
        let nf = faces.len();
        let mut flip = vec![false; nf];
        let mut component = vec![usize::MAX; nf];
        let mut n_components = 0;
        for seed in 0..nf {
            if component[seed] != usize::MAX {
                continue;
            }
            component[seed] = n_components;
            let mut queue = VecDeque::from([seed]);
            while let Some(f) = queue.pop_front() {
                let face = faces[f];
                for k in 0..3 {
                    let (a, b) = (face[k], face[(k + 1) % 3]);
                    // stored edges run a→b; a flipped face runs b→a
                    let forward_f = !flip[f];
                    for &g in &edge_faces[&edge_key(a, b)] {
                        if g == f {
                            continue;
                        }
                        // g must traverse the shared edge opposite to f
                        let g_has_ab = contains_directed(faces[g], a, b);
                        let needed_flip = g_has_ab == forward_f;
                        if component[g] == usize::MAX {
                            component[g] = n_components;
                            flip[g] = needed_flip;
                            queue.push_back(g);
                        } else if flip[g] != needed_flip {
                            let key = edge_key(a, b);
                            return Err(SurfaceError::NonOrientable(key.0, key.1));
                        }
                    }
                }
            }
            n_components += 1;
        }
        let faces_reoriented = flip.iter().filter(|&&x| x).count();
        for (f, face) in faces.iter_mut().enumerate() {
            if flip[f] {
                face.swap(1, 2);
            }
        }

        // outward orientation per component
        let mut comp_volume = vec![0.0; n_components];
        let centroid = vertex_mean(&vertices);
        for (f, face) in faces.iter().enumerate() {
            comp_volume[component[f]] += tet_volume6(&vertices, *face, centroid);
        }
        let mut components_flipped = 0;
        for (c, vol) in comp_volume.iter().enumerate() {
            if *vol < 0.0 {
                components_flipped += 1;
                for (f, face) in faces.iter_mut().enumerate() {
                    if component[f] == c {
                        face.swap(1, 2);
                    }
                }
            }
        }

        let degenerate_faces = faces
            .iter()
            .filter(|f| face_cross(&vertices, **f).norm_squared() == 0.0)
            .count();
        let mut mesh = TriangleMesh {
            vertices,
            faces,
            outward: true,
            report: MeshReport::default(),
        };
        mesh.report = MeshReport {
            vertices: nv,
            faces: nf,
            components: n_components,
            faces_reoriented,
            components_flipped,
            degenerate_faces,
            volume: mesh.volume(),
        };
        Ok(mesh)
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn is_outward(&self) -> bool {
        self.outward
    }

    pub fn report(&self) -> &MeshReport {
        &self.report
    }

    /// Arithmetic mean of the vertex positions.
    pub fn vertex_centroid(&self) -> Vec3 {
        vertex_mean(&self.vertices)
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }

    pub fn bounding_diagonal(&self) -> f64 {
        let (lo, hi) = self.bounds();
        (hi - lo).norm()
    }

    /// Enclosed volume (divergence theorem, tetrahedra to the vertex centroid).
    pub fn volume(&self) -> f64 {
        signed_volume(&self.vertices, &self.faces)
    }

    pub fn surface_area(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| 0.5 * face_cross(&self.vertices, *f).norm())
            .sum()
    }

    /// Unit face normal, or `None` for a zero-area face.
    pub fn face_normal(&self, face: usize) -> Option<Vec3> {
        let n = face_cross(&self.vertices, self.faces[face]);
        let len = n.norm();
        (len > 0.0).then(|| n / len)
    }

    pub fn face_area(&self, face: usize) -> f64 {
        0.5 * face_cross(&self.vertices, self.faces[face]).norm()
    }

    /// Apply `f` to every vertex. Orientation is preserved for proper rigid motions.
    pub fn map_vertices(&self, f: impl Fn(Vec3) -> Vec3) -> TriangleMesh {
        let mut out = self.clone();
        for v in &mut out.vertices {
            *v = f(*v);
        }
        out.report.volume = out.volume();
        out
    }

    pub fn translated(&self, t: Vec3) -> TriangleMesh {
        self.map_vertices(|v| v + t)
    }
}

/// Signed volume of an arbitrary triangle soup, `Σ (a−c)·((b−c)×(d−c)) / 6`
/// with `c` the vertex mean.
pub fn signed_volume(vertices: &[Vec3], faces: &[[usize; 3]]) -> f64 {
    let c = vertex_mean(vertices);
    faces
        .iter()
        .map(|f| tet_volume6(vertices, *f, c))
        .sum::<f64>()
        / 6.0
}

/// Enclosed volume of a validated, outward-oriented mesh.
pub fn mesh_volume(mesh: &TriangleMesh) -> f64 {
    mesh.volume()
}

/// Angle-weighted vertex normals of a validated mesh.
pub fn vertex_normals(mesh: &TriangleMesh) -> Result<Vec<Vec3>, SurfaceError> {
    let (normals, missing) = angle_weighted_normals(&mesh.vertices, &mesh.faces);
    match missing.first() {
        Some(&v) => Err(SurfaceError::UndefinedNormal(v)),
        None => Ok(normals),
    }
}

/// Angle-weighted vertex normals over an arbitrary face list.
///
/// Zero-area faces are excluded. Vertices left without any contributing face
/// get a zero vector and are listed in the second return value.
pub fn angle_weighted_normals(vertices: &[Vec3], faces: &[[usize; 3]]) -> (Vec<Vec3>, Vec<usize>) {
    let mut acc = vec![Vec3::zeros(); vertices.len()];
    for f in faces {
        let n = face_cross(vertices, *f);
        let len = n.norm();
        if !(len > 0.0) {
            continue;
        }
        let n = n / len;
        // canonical order keeps reflected meshes bitwise mirrored
        let (s, _, _) = canonical_order(*f);
        for k in 0..3 {
            let at = s[k];
            let u = s[(k + 1) % 3];
            let w = s[(k + 2) % 3];
            let angle = corner_angle(vertices[at], vertices[u], vertices[w]);
            acc[at] += n * angle;
        }
    }
    let mut missing = Vec::new();
    for (i, a) in acc.iter_mut().enumerate() {
        let len = a.norm();
        if len > 0.0 {
            *a /= len;
        } else {
            *a = Vec3::zeros();
            missing.push(i);
        }
    }
    (acc, missing)
}

/// Mirror a mesh about `plane`, reversing every face so the result stays
/// outward-oriented. Volume is preserved.
pub fn flip_sagittal(mesh: &TriangleMesh, plane: &MirrorPlane) -> TriangleMesh {
    let (vertices, faces) = reflect_raw(mesh.vertices(), mesh.faces(), plane);
    let faces = faces.into_iter().map(|f| [f[0], f[2], f[1]]).collect();
    let mut out = TriangleMesh {
        vertices,
        faces,
        outward: true,
        report: mesh.report.clone(),
    };
    out.report.volume = out.volume();
    out
}

/// Reflected coordinates with the original winding (inside-out result).
pub fn reflect_raw(
    vertices: &[Vec3],
    faces: &[[usize; 3]],
    plane: &MirrorPlane,
) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    (
        vertices.iter().map(|v| plane.reflect_point(*v)).collect(),
        faces.to_vec(),
    )
}

fn vertex_mean(vertices: &[Vec3]) -> Vec3 {
    let mut s = Vec3::zeros();
    for v in vertices {
        s += v;
    }
    s / vertices.len().max(1) as f64
}

#[inline]
fn tet_volume6(vertices: &[Vec3], f: [usize; 3], c: Vec3) -> f64 {
    let a = vertices[f[0]] - c;
    let b = vertices[f[1]] - c;
    let d = vertices[f[2]] - c;
    a.dot(&b.cross(&d))
}

#[inline]
fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

fn edge_incidence(faces: &[[usize; 3]]) -> HashMap<(usize, usize), Vec<usize>> {
    let mut map: HashMap<(usize, usize), Vec<usize>> = HashMap::with_capacity(faces.len() * 2);
    for (fi, f) in faces.iter().enumerate() {
        for k in 0..3 {
            map.entry(edge_key(f[k], f[(k + 1) % 3]))
                .or_default()
                .push(fi);
        }
    }
    map
}

#[inline]
fn contains_directed(face: [usize; 3], a: usize, b: usize) -> bool {
    (0..3).any(|k| face[k] == a && face[(k + 1) % 3] == b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::primitives;

    #[test]
    fn octahedron_is_valid() {
        let m = primitives::octahedron();
        assert_eq!(m.vertices().len(), 6);
        assert_eq!(m.faces().len(), 8);
        assert!(m.volume() > 0.0);
    }

    #[test]
    fn inverted_faces_are_reoriented() {
        let m = primitives::octahedron();
        let inverted: Vec<_> = m.faces().iter().map(|f| [f[0], f[2], f[1]]).collect();
        let fixed = TriangleMesh::new(m.vertices().to_vec(), inverted).unwrap();
        assert!(fixed.volume() > 0.0);
        assert_eq!(fixed.report().components_flipped, 1);
        assert!((fixed.volume() - m.volume()).abs() < 1e-15);
    }

    #[test]
    fn partially_inverted_faces_are_made_consistent() {
        let m = primitives::unit_cube();
        let mut faces = m.faces().to_vec();
        for f in faces.iter_mut().step_by(3) {
            f.swap(0, 1);
        }
        let fixed = TriangleMesh::new(m.vertices().to_vec(), faces).unwrap();
        assert!((fixed.volume() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn open_tetrahedron_reports_boundary_edge() {
        let t = primitives::tetrahedron();
        let faces = t.faces()[..3].to_vec();
        match TriangleMesh::new(t.vertices().to_vec(), faces) {
            Err(SurfaceError::BoundaryEdge(_, _)) => {}
            other => panic!("expected boundary edge, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_index_rejected() {
        let t = primitives::tetrahedron();
        let mut faces = t.faces().to_vec();
        faces[0][2] = 17;
        assert!(matches!(
            TriangleMesh::new(t.vertices().to_vec(), faces),
            Err(SurfaceError::IndexOutOfRange { index: 17, .. })
        ));
    }

    #[test]
    fn non_manifold_edge_rejected() {
        let t = primitives::tetrahedron();
        let mut verts = t.vertices().to_vec();
        verts.push(Vec3::new(5.0, 5.0, 5.0));
        let mut faces = t.faces().to_vec();
        faces.push([0, 1, 4]);
        assert!(matches!(
            TriangleMesh::new(verts, faces),
            Err(SurfaceError::NonManifoldEdge { count: 3, .. })
        ));
    }

    #[test]
    fn unit_cube_volume() {
        assert!((mesh_volume(&primitives::unit_cube()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn volume_translation_invariant() {
        let c = primitives::unit_cube();
        let t = c.translated(Vec3::new(100.0, 100.0, 100.0));
        assert!((mesh_volume(&t) - mesh_volume(&c)).abs() < 1e-9);
    }

    #[test]
    fn sphere_volume_close_to_analytic() {
        // level 5: 20480 faces
        let s = primitives::icosphere(5);
        let exact = 4.0 * std::f64::consts::PI / 3.0;
        assert!((mesh_volume(&s) - exact).abs() / exact < 0.01);
    }

    #[test]
    fn octahedron_vertex_normal_is_axis() {
        let m = primitives::octahedron();
        let n = vertex_normals(&m).unwrap();
        let i = m
            .vertices()
            .iter()
            .position(|v| *v == Vec3::new(1.0, 0.0, 0.0))
            .unwrap();
        assert!((n[i] - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn sphere_normals_are_radial() {
        let s = primitives::icosphere(4);
        let n = vertex_normals(&s).unwrap();
        let worst = s
            .vertices()
            .iter()
            .zip(&n)
            .map(|(p, n)| n.dot(&p.normalize()).clamp(-1.0, 1.0).acos().to_degrees())
            .fold(0.0, f64::max);
        assert!(worst < 2.0, "max deviation {worst} deg");
    }

    #[test]
    fn flat_patch_normal_is_plane_normal() {
        // box subdivided on its top face; the interior top vertex is flat
        let m = primitives::box_with_top_center(2.0, 2.0, 1.0);
        let n = vertex_normals(&m).unwrap();
        let top = m
            .vertices()
            .iter()
            .position(|v| *v == Vec3::new(0.0, 0.0, 1.0))
            .unwrap();
        assert!((n[top] - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-14);
    }

    #[test]
    fn flip_is_involution_and_volume_preserving() {
        let m = primitives::ellipsoid(2, [3.0, 2.0, 1.0]).translated(Vec3::new(4.0, 1.0, -2.0));
        let plane = MirrorPlane::sagittal();
        let f = flip_sagittal(&m, &plane);
        assert!(f.volume() > 0.0);
        assert!((f.volume() - m.volume()).abs() < 1e-12);
        let ff = flip_sagittal(&f, &plane);
        assert_eq!(ff.vertices(), m.vertices());
        assert_eq!(ff.faces(), m.faces());
    }

    #[test]
    fn flipped_cube_volume() {
        let f = flip_sagittal(&primitives::unit_cube(), &MirrorPlane::sagittal());
        assert!((f.volume() - 1.0).abs() < 1e-12);
        assert!(f.vertices().iter().all(|v| v.x <= 0.0));
    }

    #[test]
    fn reflection_negates_signed_volume_before_winding_fix() {
        let verts = vec![
            Vec3::new(0.1, 0.0, 0.0),
            Vec3::new(2.0, 0.3, 0.0),
            Vec3::new(0.4, 1.5, 0.2),
            Vec3::new(0.7, 0.2, 3.0),
        ];
        let t = TriangleMesh::new(verts, primitives::tetrahedron().faces().to_vec()).unwrap();
        let (rv, rf) = reflect_raw(t.vertices(), t.faces(), &MirrorPlane::sagittal());
        let before = signed_volume(t.vertices(), t.faces());
        let after = signed_volume(&rv, &rf);
        // direct determinant of the first three edge vectors
        let v = t.vertices();
        let det = |p: &[Vec3]| (p[1] - p[0]).dot(&(p[2] - p[0]).cross(&(p[3] - p[0])));
        assert!(det(v) * det(&rv) < 0.0);
        assert!((before + after).abs() < 1e-12);
    }

    #[test]
    fn normals_of_flipped_mesh_are_mirrored() {
        let m = primitives::ellipsoid(3, [3.0, 2.0, 1.5]);
        let plane = MirrorPlane::sagittal();
        let f = flip_sagittal(&m, &plane);
        let n = vertex_normals(&m).unwrap();
        let nf = vertex_normals(&f).unwrap();
        for (a, b) in n.iter().zip(&nf) {
            assert!((plane.reflect_vector(*a) - b).norm() < 1e-9);
        }
    }
}
