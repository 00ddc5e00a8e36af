use super::geometry::closest_point_on_face;
use super::{SurfacePoint, Vec3};

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone)]
struct Node {
    lo: Vec3,
    hi: Vec3,
    // leaf: faces[start..start + count]; inner: children at `start` and `start + 1`
    start: usize,
    count: usize,
}

/// Bounding volume hierarchy over the faces of a mesh for exact
/// closest-point queries.
#[derive(Debug, Clone)]
pub(crate) struct Bvh {
    nodes: Vec<Node>,
    faces: Vec<usize>,
    // pruning margin (mm) so rounding in box distances never hides a tie
    slack: f64,
}

impl Bvh {
    pub(crate) fn build(vertices: &[Vec3], faces: &[[usize; 3]]) -> Self {
        let centroids: Vec<Vec3> = faces
            .iter()
            .map(|f| (vertices[f[0]] + vertices[f[1]] + vertices[f[2]]) / 3.0)
            .collect();
        let mut order: Vec<usize> = (0..faces.len()).collect();
        let mut nodes = vec![Node {
            lo: Vec3::zeros(),
            hi: Vec3::zeros(),
            start: 0,
            count: 0,
        }];
        // explicit stack of (node index, range)
        let mut stack = vec![(0usize, 0usize, faces.len())];
        while let Some((node, start, end)) = stack.pop() {
            let (lo, hi) = face_bounds(vertices, faces, &order[start..end]);
            nodes[node].lo = lo;
            nodes[node].hi = hi;
            if end - start <= LEAF_SIZE {
                nodes[node].start = start;
                nodes[node].count = end - start;
                continue;
            }
            let (clo, chi) = point_bounds(order[start..end].iter().map(|&f| centroids[f]));
            let ext = chi - clo;
            let axis = if ext.x >= ext.y && ext.x >= ext.z {
                0
            } else if ext.y >= ext.z {
                1
            } else {
                2
            };
            order[start..end].sort_by(|&a, &b| {
                centroids[a][axis]
                    .total_cmp(&centroids[b][axis])
                    .then(a.cmp(&b))
            });
            let mid = start + (end - start) / 2;
            let left = nodes.len();
            nodes.push(Node {
                lo,
                hi,
                start: 0,
                count: 0,
            });
            nodes.push(Node {
                lo,
                hi,
                start: 0,
                count: 0,
            });
            nodes[node].start = left;
            nodes[node].count = 0;
            stack.push((left, start, mid));
            stack.push((left + 1, mid, end));
        }
        let slack = 1e-9 * (nodes[0].hi - nodes[0].lo).norm();
        Bvh {
            nodes,
            faces: order,
            slack,
        }
    }

    /// Global closest point. Exact ties in squared distance resolve to the
    /// lowest face index, so the result does not depend on tree layout.
    pub(crate) fn closest(&self, vertices: &[Vec3], faces: &[[usize; 3]], p: Vec3) -> SurfacePoint {
        let mut best_d2 = f64::INFINITY;
        let mut best = SurfacePoint {
            position: p,
            face: usize::MAX,
            barycentric: [1.0, 0.0, 0.0],
        };
        let mut stack: Vec<(usize, f64)> = Vec::with_capacity(64);
        stack.push((0, box_distance2(&self.nodes[0], p)));
        while let Some((ni, bound)) = stack.pop() {
            if bound > best_d2 {
                let r = best_d2.sqrt() + self.slack;
                if bound > r * r {
                    continue;
                }
            }
            let node = &self.nodes[ni];
            if node.count > 0 {
                for &f in &self.faces[node.start..node.start + node.count] {
                    let (q, d2, bc) = closest_point_on_face(vertices, faces[f], p);
                    if d2 < best_d2 || (d2 == best_d2 && f < best.face) {
                        best_d2 = d2;
                        best = SurfacePoint {
                            position: q,
                            face: f,
                            barycentric: bc,
                        };
                    }
                }
            } else {
                let a = node.start;
                let b = node.start + 1;
                let da = box_distance2(&self.nodes[a], p);
                let db = box_distance2(&self.nodes[b], p);
                // push the farther child first so the nearer one is visited next
                if da <= db {
                    stack.push((b, db));
                    stack.push((a, da));
                } else {
                    stack.push((a, da));
                    stack.push((b, db));
                }
            }
        }
        best
    }
}

fn face_bounds(vertices: &[Vec3], faces: &[[usize; 3]], subset: &[usize]) -> (Vec3, Vec3) {
    point_bounds(subset.iter().flat_map(|&f| faces[f].iter().map(|&v| vertices[v])))
}

fn point_bounds(points: impl Iterator<Item = Vec3>) -> (Vec3, Vec3) {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in points {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (lo, hi)
}

#[inline]
fn box_distance2(node: &Node, p: Vec3) -> f64 {
    let mut d2 = 0.0;
    for k in 0..3 {
        let d = if p[k] < node.lo[k] {
            node.lo[k] - p[k]
        } else if p[k] > node.hi[k] {
            p[k] - node.hi[k]
        } else {
            0.0
        };
        d2 += d * d;
    }
    d2
}
