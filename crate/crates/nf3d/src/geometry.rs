//! Explicit geometry: point clouds, triangle meshes, normalization and
//! area-uniform surface sampling.

use rand::Rng;

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::num::Real;
use crate::seeds::rng_from_seed;

/// A set of 3D points with optional per-point RGB colors in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud<T> {
    pub points: Vec<Vec3<T>>,
    pub colors: Option<Vec<Vec3<T>>>,
}

impl<T: Real> PointCloud<T> {
    pub fn new(points: Vec<Vec3<T>>) -> Self {
        Self { points, colors: None }
    }

    pub fn with_colors(points: Vec<Vec3<T>>, colors: Vec<Vec3<T>>) -> Result<Self> {
        if colors.len() != points.len() {
            return Err(Error::Config(format!(
                "{} colors for {} points",
                colors.len(),
                points.len()
            )));
        }
        Ok(Self { points, colors: Some(colors) })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Indexed triangle mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh<T> {
    pub vertices: Vec<Vec3<T>>,
    pub triangles: Vec<[u32; 3]>,
}

impl<T: Real> TriMesh<T> {
    pub fn new(vertices: Vec<Vec3<T>>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let n = vertices.len() as u32;
        for (i, t) in triangles.iter().enumerate() {
            if t.iter().any(|&v| v >= n) {
                return Err(Error::Config(format!(
                    "triangle {i} references vertex {} of {n}",
                    t.iter().max().unwrap()
                )));
            }
        }
        Ok(Self { vertices, triangles })
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    #[inline]
    pub fn corners(&self, tri: usize) -> [Vec3<T>; 3] {
        let t = self.triangles[tri];
        [
            self.vertices[t[0] as usize],
            self.vertices[t[1] as usize],
            self.vertices[t[2] as usize],
        ]
    }

    pub fn triangle_area(&self, tri: usize) -> T {
        let [a, b, c] = self.corners(tri);
        (b - a).cross(c - a).norm() * T::of(0.5)
    }

    /// Drop triangles with area below `min_area`, keeping vertices intact.
    pub fn without_small_triangles(&self, min_area: T) -> Self {
        let triangles = self
            .triangles
            .iter()
            .enumerate()
            .filter(|(i, _)| self.triangle_area(*i) >= min_area)
            .map(|(_, t)| *t)
            .collect();
        Self { vertices: self.vertices.clone(), triangles }
    }
}

/// Either explicit geometry the codec accepts.
#[derive(Clone, Debug)]
pub enum Shape<T> {
    Mesh(TriMesh<T>),
    Cloud(PointCloud<T>),
}

impl<T: Real> Shape<T> {
    /// Points the normalization statistics are computed over.
    pub fn positions(&self) -> &[Vec3<T>] {
        match self {
            Shape::Mesh(m) => &m.vertices,
            Shape::Cloud(c) => &c.points,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.positions().is_empty()
    }
}

/// Similarity transform mapping a shape into the closed unit ball:
/// `p' = (p - center) / scale`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalization<T> {
    pub center: Vec3<T>,
    pub scale: T,
}

impl<T: Real> Normalization<T> {
    pub fn identity() -> Self {
        Self { center: Vec3::zero(), scale: T::one() }
    }

    #[inline]
    pub fn apply(&self, p: Vec3<T>) -> Vec3<T> {
        (p - self.center) / self.scale
    }

    #[inline]
    pub fn invert(&self, p: Vec3<T>) -> Vec3<T> {
        p * self.scale + self.center
    }

    pub fn cast<U: Real>(&self) -> Normalization<U> {
        Normalization {
            center: self.center.cast(),
            scale: U::of(self.scale.to_f64_lossy()),
        }
    }
}

/// Center a shape on its centroid and scale it into the unit ball.
///
/// Errors when all points coincide (the scale would be zero).
pub fn normalize<T: Real>(shape: &Shape<T>) -> Result<(Shape<T>, Normalization<T>)> {
    let pts = shape.positions();
    if pts.is_empty() {
        return Err(Error::DegenerateShape("empty shape".into()));
    }
    let inv_n = T::one() / T::of(pts.len() as f64);
    let mut center = Vec3::zero();
    for p in pts {
        if !p.is_finite() {
            return Err(Error::DegenerateShape("non-finite coordinate".into()));
        }
        center += *p * inv_n;
    }
    let mut scale = T::zero();
    for p in pts {
        scale = scale.max((*p - center).norm());
    }
    if !(scale > T::zero()) {
        return Err(Error::DegenerateShape(
            "all points identical; normalization scale would be zero".into(),
        ));
    }
    let norm = Normalization { center, scale };
    let shape = match shape {
        Shape::Mesh(m) => Shape::Mesh(TriMesh {
            vertices: m.vertices.iter().map(|&p| norm.apply(p)).collect(),
            triangles: m.triangles.clone(),
        }),
        Shape::Cloud(c) => Shape::Cloud(PointCloud {
            points: c.points.iter().map(|&p| norm.apply(p)).collect(),
            colors: c.colors.clone(),
        }),
    };
    Ok((shape, norm))
}

/// Draw `n` points from the mesh surface, triangle-area-proportionally and
/// uniformly within each triangle. Zero-area triangles are excluded from the
/// area table. Deterministic for a fixed seed.
pub fn sample_surface<T: Real>(mesh: &TriMesh<T>, n: usize, seed: u64) -> Result<PointCloud<T>> {
    let mut cdf = Vec::with_capacity(mesh.triangles.len());
    let mut ids = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0f64;
    for i in 0..mesh.triangles.len() {
        let a = mesh.triangle_area(i).to_f64_lossy();
        if a > 0.0 {
            total += a;
            cdf.push(total);
            ids.push(i);
        }
    }
    if cdf.is_empty() {
        return Err(Error::DegenerateShape(
            "mesh has no triangle with positive area".into(),
        ));
    }
    let mut rng = rng_from_seed(seed);
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let u = rng.gen_range(0.0..total);
        let slot = cdf.partition_point(|&c| c <= u);
        let tri = ids[slot.min(ids.len() - 1)];
        let [a, b, c] = mesh.corners(tri);
        // Uniform barycentric coordinates via the square-root trick.
        let r1: f64 = rng.gen();
        let r2: f64 = rng.gen();
        let s = r1.sqrt();
        let (wa, wb, wc) = (1.0 - s, s * (1.0 - r2), s * r2);
        points.push(a * T::of(wa) + b * T::of(wb) + c * T::of(wc));
    }
    Ok(PointCloud::new(points))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cloud(pts: &[[f64; 3]]) -> Shape<f64> {
        Shape::Cloud(PointCloud::new(
            pts.iter().map(|p| Vec3::from_array(*p)).collect(),
        ))
    }

    #[test]
    fn normalize_symmetric_pair() {
        let (shape, norm) = normalize(&cloud(&[[1.0, 1.0, 1.0], [-1.0, -1.0, -1.0]])).unwrap();
        assert_eq!(norm.center, Vec3::zero());
        assert_relative_eq!(norm.scale, 3.0f64.sqrt(), epsilon = 1e-12);
        let s3 = 1.0 / 3.0f64.sqrt();
        assert_relative_eq!(shape.positions()[0].x, s3, epsilon = 1e-12);
    }

    #[test]
    fn normalize_collinear_pair() {
        let (shape, norm) = normalize(&cloud(&[[2.0, 0.0, 0.0], [4.0, 0.0, 0.0]])).unwrap();
        assert_eq!(norm.center, Vec3::new(3.0, 0.0, 0.0));
        assert_eq!(norm.scale, 1.0);
        assert_eq!(shape.positions()[0], Vec3::new(-1.0, 0.0, 0.0));
        assert_eq!(shape.positions()[1], Vec3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn normalize_repeated_point_is_degenerate() {
        let err = normalize(&cloud(&[[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]])).unwrap_err();
        assert!(matches!(err, Error::DegenerateShape(_)));
    }

    #[test]
    fn normalize_lands_in_unit_ball() {
        let mut rng = rng_from_seed(11);
        let pts: Vec<[f64; 3]> = (0..200)
            .map(|_| [rng.gen_range(-5.0..9.0), rng.gen_range(0.0..3.0), rng.gen()])
            .collect();
        let (shape, norm) = normalize(&cloud(&pts)).unwrap();
        let max = shape
            .positions()
            .iter()
            .map(|p| p.norm())
            .fold(0.0f64, f64::max);
        assert_relative_eq!(max, 1.0, epsilon = 1e-6);
        // Round trip through the stored transform.
        for (orig, p) in pts.iter().zip(shape.positions()) {
            let back = norm.invert(*p);
            for a in 0..3 {
                assert!((back[a] - orig[a]).abs() <= 1e-6 * norm.scale);
            }
        }
    }

    fn single_triangle() -> TriMesh<f64> {
        TriMesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    #[test]
    fn samples_stay_inside_triangle_plane() {
        let mesh = single_triangle();
        let pc = sample_surface(&mesh, 1000, 42).unwrap();
        assert_eq!(pc.len(), 1000);
        for p in &pc.points {
            assert!(p.z.abs() < 1e-6);
            assert!(p.x >= -1e-9 && p.y >= -1e-9 && p.x + p.y <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn sampling_is_area_proportional() {
        // Two triangles with areas 1 and 3; counts should match a binomial
        // within 3 sigma.
        let mesh = TriMesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(2.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(10.0, 0.0, 0.0),
                Vec3::new(16.0, 0.0, 0.0),
                Vec3::new(10.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap();
        let n = 100_000usize;
        let pc = sample_surface(&mesh, n, 9).unwrap();
        let in_first = pc.points.iter().filter(|p| p.x < 5.0).count() as f64;
        let (p, nf) = (0.25f64, n as f64);
        let sigma = (nf * p * (1.0 - p)).sqrt();
        assert!(
            (in_first - nf * p).abs() < 3.0 * sigma,
            "count {in_first} outside 3 sigma of {}",
            nf * p
        );
    }

    #[test]
    fn sampling_is_deterministic() {
        let mesh = single_triangle();
        let a = sample_surface(&mesh, 100, 5).unwrap();
        let b = sample_surface(&mesh, 100, 5).unwrap();
        assert_eq!(a.points, b.points);
    }

    #[test]
    fn sampling_zero_points_is_empty() {
        let pc = sample_surface(&single_triangle(), 0, 1).unwrap();
        assert!(pc.is_empty());
    }

    #[test]
    fn degenerate_triangles_are_excluded() {
        let mesh = TriMesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(2.0, 0.0, 0.0), // collinear: zero area
                Vec3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 1, 3]],
        )
        .unwrap();
        let pc = sample_surface(&mesh, 500, 3).unwrap();
        for p in &pc.points {
            assert!(p.x + p.y <= 1.0 + 1e-9, "sample from degenerate triangle");
        }
    }
}
