//! Triangle meshes: validation, PLY I/O, closest-point projection, normals,
//! volume and mirroring.

mod bvh;
pub(crate) mod geometry;
mod mesh;
mod ply;
pub mod primitives;

use std::path::Path;

pub use mesh::{
    angle_weighted_normals, flip_sagittal, mesh_volume, reflect_raw, signed_volume,
    vertex_normals, Axis, MeshReport, MirrorPlane, SurfaceError, TriangleMesh,
};
pub use ply::{read_ply, write_ply, PlyError, PlyFormat, VertexScalar};

use crate::error::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;

/// A point on a mesh face.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub position: Vec3,
    pub face: usize,
    /// Weights of the face's vertices in stored order.
    pub barycentric: [f64; 3],
}

impl SurfacePoint {
    /// Barycentric reconstruction of the position from the face's vertices.
    pub fn reconstruct(&self, mesh: &TriangleMesh) -> Vec3 {
        let f = mesh.faces()[self.face];
        let v = mesh.vertices();
        v[f[0]] * self.barycentric[0] + v[f[1]] * self.barycentric[1] + v[f[2]] * self.barycentric[2]
    }
}

/// Read and validate a PLY mesh, normalizing it to outward orientation.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (vertices, faces) = read_ply(&bytes).map_err(|source| Error::Ply {
        path: path.to_path_buf(),
        source,
    })?;
    let mesh = TriangleMesh::new(vertices, faces)?;
    log::debug!("{}: {}", path.display(), mesh.report());
    Ok(mesh)
}

/// Exact closest point over every face of `mesh` (linear scan).
///
/// Ties resolve to the lowest face index. [`Surface::project`] gives the same
/// answer through a spatial index.
pub fn project_to_surface(mesh: &TriangleMesh, p: Vec3) -> SurfacePoint {
    let mut best = SurfacePoint {
        position: p,
        face: usize::MAX,
        barycentric: [1.0, 0.0, 0.0],
    };
    let mut best_d2 = f64::INFINITY;
    for (fi, f) in mesh.faces().iter().enumerate() {
        let (q, d2, bc) = geometry::closest_point_on_face(mesh.vertices(), *f, p);
        if d2 < best_d2 {
            best_d2 = d2;
            best = SurfacePoint {
                position: q,
                face: fi,
                barycentric: bc,
            };
        }
    }
    best
}

/// A mesh prepared for repeated projection queries.
#[derive(Debug, Clone)]
pub struct Surface {
    mesh: TriangleMesh,
    bvh: bvh::Bvh,
    face_normals: Vec<Vec3>,
}

impl Surface {
    pub fn new(mesh: TriangleMesh) -> Self {
        let bvh = bvh::Bvh::build(mesh.vertices(), mesh.faces());
        let face_normals = (0..mesh.faces().len())
            .map(|f| mesh.face_normal(f).unwrap_or_else(Vec3::zeros))
            .collect();
        Surface {
            mesh,
            bvh,
            face_normals,
        }
    }

    pub fn mesh(&self) -> &TriangleMesh {
        &self.mesh
    }

    pub fn into_mesh(self) -> TriangleMesh {
        self.mesh
    }

    pub fn project(&self, p: Vec3) -> SurfacePoint {
        self.bvh.closest(self.mesh.vertices(), self.mesh.faces(), p)
    }

    /// Unit normal of a face (zero for zero-area faces).
    pub fn face_normal(&self, face: usize) -> Vec3 {
        self.face_normals[face]
    }

    /// Component of `v` in the tangent plane of `point`'s face.
    pub fn tangent_component(&self, point: &SurfacePoint, v: Vec3) -> Vec3 {
        let n = self.face_normals[point.face];
        v - n * n.dot(&v)
    }
}
