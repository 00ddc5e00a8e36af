//! Triangle-level primitives.
//!
//! Everything here evaluates a face with its vertex indices in ascending order,
//! independent of the face's winding. Reflecting the vertex coordinates then
//! reflects every result bit-for-bit, which the mirror-equivariance guarantees
//! of the optimizer depend on.

use super::Vec3;

/// Ascending permutation of a face and the parity of that permutation
/// relative to the stored winding (`true` = odd, i.e. winding reversed).
#[inline]
pub(crate) fn canonical_order(face: [usize; 3]) -> ([usize; 3], [usize; 3], bool) {
    // perm[k] = position in `face` of the k-th smallest index
    let mut perm = [0usize, 1, 2];
    perm.sort_unstable_by_key(|&k| face[k]);
    let sorted = [face[perm[0]], face[perm[1]], face[perm[2]]];
    // cyclic rotations of (0,1,2) are even
    let odd = !matches!(perm, [0, 1, 2] | [1, 2, 0] | [2, 0, 1]);
    (sorted, perm, odd)
}

/// Unnormalized face normal (|n| = 2·area), oriented by the face winding.
#[inline]
pub(crate) fn face_cross(vertices: &[Vec3], face: [usize; 3]) -> Vec3 {
    let (s, _, odd) = canonical_order(face);
    let a = vertices[s[0]];
    let n = (vertices[s[1]] - a).cross(&(vertices[s[2]] - a));
    if odd {
        -n
    } else {
        n
    }
}

/// Closest point to `p` on triangle `(a, b, c)` with barycentric weights
/// relative to `(a, b, c)`.
///
/// Region classification after Ericson, "Real-Time Collision Detection", 5.1.5.
pub(crate) fn closest_point_on_triangle(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> (Vec3, [f64; 3]) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (a, [1.0, 0.0, 0.0]);
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (b, [0.0, 1.0, 0.0]);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, [1.0 - v, v, 0.0]);
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (c, [0.0, 0.0, 1.0]);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, [1.0 - w, 0.0, w]);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, [0.0, 1.0 - w, w]);
    }
    let sum = va + vb + vc;
    if !(sum > 0.0) || !sum.is_finite() {
        return closest_on_edges(p, a, b, c);
    }
    let denom = 1.0 / sum;
    let v = vb * denom;
    let w = vc * denom;
    let u = (1.0 - v - w).max(0.0);
    (a + ab * v + ac * w, [u, v, w])
}

/// Fallback for zero-area triangles: best of the three edges.
fn closest_on_edges(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> (Vec3, [f64; 3]) {
    let seg = |s: Vec3, e: Vec3| -> (Vec3, f64) {
        let d = e - s;
        let len2 = d.dot(&d);
        let t = if len2 > 0.0 {
            ((p - s).dot(&d) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (s + d * t, t)
    };
    let (qab, tab) = seg(a, b);
    let (qbc, tbc) = seg(b, c);
    let (qca, tca) = seg(c, a);
    let dab = (p - qab).norm_squared();
    let dbc = (p - qbc).norm_squared();
    let dca = (p - qca).norm_squared();
    if dab <= dbc && dab <= dca {
        (qab, [1.0 - tab, tab, 0.0])
    } else if dbc <= dca {
        (qbc, [0.0, 1.0 - tbc, tbc])
    } else {
        (qca, [tca, 0.0, 1.0 - tca])
    }
}

/// Closest point on a stored face, computed in canonical vertex order.
/// Returns the point, the squared distance, and barycentric weights in the
/// face's stored order.
#[inline]
pub(crate) fn closest_point_on_face(
    vertices: &[Vec3],
    face: [usize; 3],
    p: Vec3,
) -> (Vec3, f64, [f64; 3]) {
    let (s, perm, _) = canonical_order(face);
    let (q, bc) = closest_point_on_triangle(p, vertices[s[0]], vertices[s[1]], vertices[s[2]]);
    let mut out = [0.0; 3];
    for k in 0..3 {
        out[perm[k]] = bc[k];
    }
    (q, (p - q).norm_squared(), out)
}

/// Interior angle at vertex `at` between edges to `u` and `w`.
#[inline]
pub(crate) fn corner_angle(at: Vec3, u: Vec3, w: Vec3) -> f64 {
    let e1 = u - at;
    let e2 = w - at;
    let denom = e1.norm() * e2.norm();
    if denom <= 0.0 {
        return 0.0;
    }
    (e1.dot(&e2) / denom).clamp(-1.0, 1.0).acos()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z)
    }

    #[test]
    fn parity_of_permutations() {
        assert!(!canonical_order([0, 1, 2]).2);
        assert!(!canonical_order([5, 9, 2]).2);
        assert!(canonical_order([0, 2, 1]).2);
        assert!(canonical_order([9, 5, 2]).2);
    }

    #[test]
    fn face_cross_follows_winding() {
        let verts = vec![v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0), v(0.0, 1.0, 0.0)];
        assert_eq!(face_cross(&verts, [0, 1, 2]), v(0.0, 0.0, 1.0));
        assert_eq!(face_cross(&verts, [1, 2, 0]), v(0.0, 0.0, 1.0));
        assert_eq!(face_cross(&verts, [0, 2, 1]), v(0.0, 0.0, -1.0));
    }

    #[test]
    fn closest_point_regions() {
        let (a, b, c) = (v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0), v(0.0, 1.0, 0.0));
        let (q, w) = closest_point_on_triangle(v(0.25, 0.25, 3.0), a, b, c);
        assert!((q - v(0.25, 0.25, 0.0)).norm() < 1e-15);
        assert!((w[0] - 0.5).abs() < 1e-15);
        let (q, _) = closest_point_on_triangle(v(-1.0, -1.0, 0.0), a, b, c);
        assert_eq!(q, a);
        let (q, w) = closest_point_on_triangle(v(1.0, 1.0, 0.0), a, b, c);
        assert!((q - v(0.5, 0.5, 0.0)).norm() < 1e-15);
        assert_eq!(w[0], 0.0);
        let (q, _) = closest_point_on_triangle(v(0.5, -2.0, 1.0), a, b, c);
        assert!((q - v(0.5, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn degenerate_triangle_falls_back_to_edges() {
        let (a, b, c) = (v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0), v(2.0, 0.0, 0.0));
        let (q, w) = closest_point_on_triangle(v(1.5, 1.0, 0.0), a, b, c);
        assert!((q - v(1.5, 0.0, 0.0)).norm() < 1e-12);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn barycentric_reconstructs_point_in_stored_order() {
        let verts = vec![v(0.0, 0.0, 0.0), v(2.0, 0.0, 0.0), v(0.0, 3.0, 0.0)];
        let face = [2, 0, 1];
        let (q, _, w) = closest_point_on_face(&verts, face, v(0.3, 0.4, -1.0));
        let recon = verts[2] * w[0] + verts[0] * w[1] + verts[1] * w[2];
        assert!((recon - q).norm() < 1e-12);
    }
}
