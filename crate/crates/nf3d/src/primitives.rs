//! Analytic test shapes: icosphere and axis-aligned cube meshes.

use crate::geometry::TriMesh;
use crate::math::Vec3;
use crate::num::Real;

/// Icosphere obtained by subdividing an icosahedron and projecting onto the
/// sphere; `subdivisions` quadruples the triangle count each step
/// (20 * 4^s triangles).
pub fn icosphere<T: Real>(radius: T, subdivisions: u32) -> TriMesh<T> {
    let phi = T::of((1.0 + 5.0f64.sqrt()) / 2.0);
    let one = T::one();
    let mut verts = vec![
        Vec3::new(-one, phi, T::zero()),
        Vec3::new(one, phi, T::zero()),
        Vec3::new(-one, -phi, T::zero()),
        Vec3::new(one, -phi, T::zero()),
        Vec3::new(T::zero(), -one, phi),
        Vec3::new(T::zero(), one, phi),
        Vec3::new(T::zero(), -one, -phi),
        Vec3::new(T::zero(), one, -phi),
        Vec3::new(phi, T::zero(), -one),
        Vec3::new(phi, T::zero(), one),
        Vec3::new(-phi, T::zero(), -one),
        Vec3::new(-phi, T::zero(), one),
    ];
    for v in &mut verts {
        *v = v.normalized().unwrap() * radius;
    }
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoints = std::collections::HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut mid = [0u32; 3];
            for (k, (i, j)) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])].iter().enumerate() {
                let key = (*i.min(j), *i.max(j));
                mid[k] = *midpoints.entry(key).or_insert_with(|| {
                    let m = (verts[*i as usize] + verts[*j as usize]) * T::of(0.5);
                    verts.push(m.normalized().unwrap() * radius);
                    (verts.len() - 1) as u32
                });
            }
            next.push([f[0], mid[0], mid[2]]);
            next.push([f[1], mid[1], mid[0]]);
            next.push([f[2], mid[2], mid[1]]);
            next.push([mid[0], mid[1], mid[2]]);
        }
        faces = next;
    }
    TriMesh { vertices: verts, triangles: faces }
}

/// Axis-aligned cube `[-half, half]^3` as 12 triangles.
pub fn cube<T: Real>(half: T) -> TriMesh<T> {
    let s = half;
    let v = vec![
        Vec3::new(-s, -s, -s),
        Vec3::new(s, -s, -s),
        Vec3::new(s, s, -s),
        Vec3::new(-s, s, -s),
        Vec3::new(-s, -s, s),
        Vec3::new(s, -s, s),
        Vec3::new(s, s, s),
        Vec3::new(-s, s, s),
    ];
    let f = vec![
        [0u32, 1, 2],
        [0, 2, 3],
        [4, 6, 5],
        [4, 7, 6],
        [0, 4, 5],
        [0, 5, 1],
        [1, 5, 6],
        [1, 6, 2],
        [2, 6, 7],
        [2, 7, 3],
        [3, 7, 4],
        [3, 4, 0],
    ];
    TriMesh { vertices: v, triangles: f }
}
