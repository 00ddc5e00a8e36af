//! Closed test and template meshes.

use std::collections::HashMap;

use super::{TriangleMesh, Vec3};

fn build(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> TriangleMesh {
    TriangleMesh::new(vertices, faces).expect("primitive meshes are closed and orientable")
}

/// Axis-aligned unit cube `[0, 1]³`, 12 faces.
pub fn unit_cube() -> TriangleMesh {
    let v = |x: f64, y: f64, z: f64| Vec3::new(x, y, z);
    let vertices = vec![
        v(0.0, 0.0, 0.0),
        v(1.0, 0.0, 0.0),
        v(1.0, 1.0, 0.0),
        v(0.0, 1.0, 0.0),
        v(0.0, 0.0, 1.0),
        v(1.0, 0.0, 1.0),
        v(1.0, 1.0, 1.0),
        v(0.0, 1.0, 1.0),
    ];
    let faces = vec![
        [0, 2, 1],
        [0, 3, 2],
        [4, 5, 6],
        [4, 6, 7],
        [0, 1, 5],
        [0, 5, 4],
        [1, 2, 6],
        [1, 6, 5],
        [2, 3, 7],
        [2, 7, 6],
        [3, 0, 4],
        [3, 4, 7],
    ];
    build(vertices, faces)
}

/// Box `[-w/2, w/2] × [-d/2, d/2] × [0, h]` whose top face is split into four
/// triangles around the vertex `(0, 0, h)`.
pub fn box_with_top_center(w: f64, d: f64, h: f64) -> TriangleMesh {
    let (x, y) = (w / 2.0, d / 2.0);
    let vertices = vec![
        Vec3::new(-x, -y, 0.0),
        Vec3::new(x, -y, 0.0),
        Vec3::new(x, y, 0.0),
        Vec3::new(-x, y, 0.0),
        Vec3::new(-x, -y, h),
        Vec3::new(x, -y, h),
        Vec3::new(x, y, h),
        Vec3::new(-x, y, h),
        Vec3::new(0.0, 0.0, h),
    ];
    let faces = vec![
        [0, 2, 1],
        [0, 3, 2],
        [4, 5, 8],
        [5, 6, 8],
        [6, 7, 8],
        [7, 4, 8],
        [0, 1, 5],
        [0, 5, 4],
        [1, 2, 6],
        [1, 6, 5],
        [2, 3, 7],
        [2, 7, 6],
        [3, 0, 4],
        [3, 4, 7],
    ];
    build(vertices, faces)
}

/// Regular octahedron with vertices at the unit axis points.
pub fn octahedron() -> TriangleMesh {
    let vertices = vec![
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(-1.0, 0.0, 0.0),
        Vec3::new(0.0, 1.0, 0.0),
        Vec3::new(0.0, -1.0, 0.0),
        Vec3::new(0.0, 0.0, 1.0),
        Vec3::new(0.0, 0.0, -1.0),
    ];
    let faces = vec![
        [0, 2, 4],
        [2, 1, 4],
        [1, 3, 4],
        [3, 0, 4],
        [2, 0, 5],
        [1, 2, 5],
        [3, 1, 5],
        [0, 3, 5],
    ];
    build(vertices, faces)
}

/// Tetrahedron on the origin and the three unit axis points.
pub fn tetrahedron() -> TriangleMesh {
    let vertices = vec![
        Vec3::new(0.0, 0.0, 0.0),
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(0.0, 1.0, 0.0),
        Vec3::new(0.0, 0.0, 1.0),
    ];
    let faces = vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]];
    build(vertices, faces)
}

/// Unit icosphere with per-face patch labels.
///
/// Patches are the 20 faces of the base icosahedron, which has a vertex on
/// each pole: patches 0–4 surround the north pole, 5–14 form the equatorial
/// band, 15–19 surround the south pole.
#[derive(Debug, Clone)]
pub struct PatchedSphere {
    pub mesh: TriangleMesh,
    pub face_patch: Vec<usize>,
}

impl PatchedSphere {
    pub const PATCHES: usize = 20;

    /// Patches around the north pole.
    pub fn north_cap() -> Vec<usize> {
        (0..5).collect()
    }

    /// For each vertex, the set of patches whose closed triangle contains it,
    /// restricted to `patches`.
    pub fn vertex_mask(&self, patches: &[usize]) -> Vec<bool> {
        let mut mask = vec![false; self.mesh.vertices().len()];
        for (f, face) in self.mesh.faces().iter().enumerate() {
            if patches.contains(&self.face_patch[f]) {
                for &v in face {
                    mask[v] = true;
                }
            }
        }
        mask
    }
}

pub fn patched_icosphere(level: u32) -> PatchedSphere {
    let s5 = 5f64.sqrt();
    let z = 1.0 / s5;
    let r = 2.0 / s5;
    let mut vertices = vec![Vec3::new(0.0, 0.0, 1.0)];
    for k in 0..5 {
        let a = 2.0 * std::f64::consts::PI * k as f64 / 5.0;
        vertices.push(Vec3::new(r * a.cos(), r * a.sin(), z));
    }
    for k in 0..5 {
        let a = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / 5.0;
        vertices.push(Vec3::new(r * a.cos(), r * a.sin(), -z));
    }
    vertices.push(Vec3::new(0.0, 0.0, -1.0));
    let up = |k: usize| 1 + k % 5;
    let lo = |k: usize| 6 + k % 5;
    let mut faces = Vec::with_capacity(20);
    for k in 0..5 {
        faces.push([0, up(k), up(k + 1)]);
    }
    for k in 0..5 {
        faces.push([up(k), lo(k), up(k + 1)]);
        faces.push([up(k + 1), lo(k), lo(k + 1)]);
    }
    for k in 0..5 {
        faces.push([11, lo(k + 1), lo(k)]);
    }
    let mut face_patch: Vec<usize> = (0..20).collect();

    for _ in 0..level {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut next_patch = Vec::with_capacity(faces.len() * 4);
        for (f, face) in faces.iter().enumerate() {
            let mut mid = [0usize; 3];
            for k in 0..3 {
                let (a, b) = (face[k], face[(k + 1) % 3]);
                let key = if a < b { (a, b) } else { (b, a) };
                mid[k] = *midpoint.entry(key).or_insert_with(|| {
                    let m = (vertices[a] + vertices[b]).normalize();
                    vertices.push(m);
                    vertices.len() - 1
                });
            }
            let [a, b, c] = *face;
            let [ab, bc, ca] = mid;
            next.extend_from_slice(&[[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
            next_patch.extend_from_slice(&[face_patch[f]; 4]);
        }
        faces = next;
        face_patch = next_patch;
    }
    PatchedSphere {
        mesh: build(vertices, faces),
        face_patch,
    }
}

/// Unit icosphere; `level` subdivisions of the icosahedron (20·4^level faces).
pub fn icosphere(level: u32) -> TriangleMesh {
    patched_icosphere(level).mesh
}

/// Axis-aligned ellipsoid with the given semi-axes, built on an icosphere.
pub fn ellipsoid(level: u32, semi_axes: [f64; 3]) -> TriangleMesh {
    icosphere(level).map_vertices(|v| {
        Vec3::new(v.x * semi_axes[0], v.y * semi_axes[1], v.z * semi_axes[2])
    })
}

/// Latitude/longitude sphere with `stacks` rings and `slices` meridians.
pub fn uv_sphere(stacks: usize, slices: usize) -> TriangleMesh {
    assert!(stacks >= 2 && slices >= 3);
    let mut vertices = vec![Vec3::new(0.0, 0.0, 1.0)];
    for i in 1..stacks {
        let theta = std::f64::consts::PI * i as f64 / stacks as f64;
        for j in 0..slices {
            let phi = 2.0 * std::f64::consts::PI * j as f64 / slices as f64;
            vertices.push(Vec3::new(
                theta.sin() * phi.cos(),
                theta.sin() * phi.sin(),
                theta.cos(),
            ));
        }
    }
    vertices.push(Vec3::new(0.0, 0.0, -1.0));
    let south = vertices.len() - 1;
    let ring = |i: usize, j: usize| 1 + (i - 1) * slices + j % slices;
    let mut faces = Vec::new();
    for j in 0..slices {
        faces.push([0, ring(1, j), ring(1, j + 1)]);
    }
    for i in 1..stacks - 1 {
        for j in 0..slices {
            faces.push([ring(i, j), ring(i + 1, j), ring(i + 1, j + 1)]);
            faces.push([ring(i, j), ring(i + 1, j + 1), ring(i, j + 1)]);
        }
    }
    for j in 0..slices {
        faces.push([south, ring(stacks - 1, j + 1), ring(stacks - 1, j)]);
    }
    build(vertices, faces)
}
