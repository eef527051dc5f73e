//! Ground-truth distance supervision: exact unsigned distances from point
//! clouds and meshes, ray-parity signs for watertight meshes, and the
//! truncation operator applied to training targets.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Shape, TriMesh};
use crate::math::Vec3;
use crate::num::Real;
use crate::seeds::rng_from_seed;
use crate::spatial::{KdTree, TriangleBvh};

/// Which distance convention the oracle produces.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DistanceKind {
    Unsigned,
    Signed,
}

enum SourceIndex<T> {
    Cloud(KdTree<T>),
    Mesh(TriangleBvh<T>),
}

/// Queryable ground-truth distance field over an explicit shape.
///
/// Immutable after construction; queries are pure and safe to run from
/// multiple threads.
pub struct GroundTruthField<T> {
    index: SourceIndex<T>,
    kind: DistanceKind,
    d_star: T,
    /// Fixed base directions plus perturbed fallbacks for the parity test.
    ray_dirs: Vec<Vec<Vec3<T>>>,
}

/// 8 perturbed fallbacks per base ray, matching the recast budget.
const PARITY_RETRIES: usize = 8;

fn parity_rays<T: Real>() -> Vec<Vec<Vec3<T>>> {
    // A fixed seed makes the sign test deterministic across runs.
    let mut rng = rng_from_seed(0x4e46_3344_5241_5953);
    (0..3)
        .map(|_| {
            (0..=PARITY_RETRIES)
                .map(|_| loop {
                    let v = Vec3::new(
                        T::of(rng.gen_range(-1.0..1.0f64)),
                        T::of(rng.gen_range(-1.0..1.0f64)),
                        T::of(rng.gen_range(-1.0..1.0f64)),
                    );
                    if let Some(u) = v.normalized() {
                        if v.norm() > T::of(0.1) {
                            break u;
                        }
                    }
                })
                .collect()
        })
        .collect()
}

impl<T: Real> GroundTruthField<T> {
    pub fn new(shape: &Shape<T>, kind: DistanceKind, d_star: T) -> Result<Self> {
        if !(d_star > T::zero()) {
            return Err(Error::Config(format!("truncation distance must be positive, got {d_star}")));
        }
        let index = match shape {
            Shape::Cloud(pc) => {
                if kind == DistanceKind::Signed {
                    return Err(Error::Unsupported(
                        "signed distances require a mesh source".into(),
                    ));
                }
                SourceIndex::Cloud(KdTree::build(&pc.points)?)
            }
            Shape::Mesh(m) => SourceIndex::Mesh(TriangleBvh::build(m)?),
        };
        Ok(Self { index, kind, d_star, ray_dirs: parity_rays() })
    }

    pub fn from_cloud(pc: &PointCloud<T>, d_star: T) -> Result<Self> {
        Self::new(&Shape::Cloud(pc.clone()), DistanceKind::Unsigned, d_star)
    }

    pub fn from_mesh(mesh: &TriMesh<T>, kind: DistanceKind, d_star: T) -> Result<Self> {
        Self::new(&Shape::Mesh(mesh.clone()), kind, d_star)
    }

    pub fn kind(&self) -> DistanceKind {
        self.kind
    }

    pub fn d_star(&self) -> T {
        self.d_star
    }

    /// Signed or unsigned distance from `x` to the surface.
    pub fn distance(&self, x: Vec3<T>) -> T {
        match &self.index {
            SourceIndex::Cloud(tree) => tree.nearest(x).0,
            SourceIndex::Mesh(bvh) => {
                let d = bvh.distance(x).0;
                match self.kind {
                    DistanceKind::Unsigned => d,
                    DistanceKind::Signed => {
                        if self.is_inside(x) {
                            -d
                        } else {
                            d
                        }
                    }
                }
            }
        }
    }

    /// Majority vote of three ray-parity tests; each ray recasts a few
    /// times when it grazes an edge or vertex.
    fn is_inside(&self, x: Vec3<T>) -> bool {
        let SourceIndex::Mesh(bvh) = &self.index else { return false };
        let mut inside_votes = 0usize;
        for dirs in &self.ray_dirs {
            // Ambiguous on every variant: count the vote as outside.
            if bvh.parity_inside(x, dirs) == Some(true) {
                inside_votes += 1;
            }
        }
        inside_votes >= 2
    }

    /// Distance truncated for supervision: `sgn(d) min(|d|, d*)`.
    pub fn truncated_distance(&self, x: Vec3<T>) -> T {
        truncate_target(self.distance(x), self.d_star)
    }
}

/// `sgn(d) min(|d|, d*)`, the regression target of the truncated field.
#[inline]
pub fn truncate_target<T: Real>(d: T, d_star: T) -> T {
    debug_assert!(d_star > T::zero());
    d.signum() * d.abs().min(d_star)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::sample_surface;
    use crate::primitives::{cube, icosphere};
    use rand::Rng;

    fn unit_cube() -> TriMesh<f64> {
        cube(0.5)
    }

    #[test]
    fn cube_center_is_inside() {
        let field = GroundTruthField::from_mesh(&unit_cube(), DistanceKind::Signed, 0.1).unwrap();
        assert!((field.distance(Vec3::zero()) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn cube_outside_face() {
        let field = GroundTruthField::from_mesh(&unit_cube(), DistanceKind::Signed, 0.1).unwrap();
        assert!((field.distance(Vec3::new(1.0, 0.0, 0.2)) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cloud_345_distance() {
        let pc = PointCloud::new(vec![Vec3::zero()]);
        let field = GroundTruthField::from_cloud(&pc, 0.1).unwrap();
        assert_eq!(field.distance(Vec3::new(0.0, 3.0, 4.0)), 5.0);
    }

    #[test]
    fn signed_on_cloud_is_unsupported() {
        let pc = PointCloud::new(vec![Vec3::<f64>::zero()]);
        match GroundTruthField::new(&Shape::Cloud(pc), DistanceKind::Signed, 0.1) {
            Err(Error::Unsupported(_)) => {}
            other => panic!("expected unsupported error, got {:?}", other.is_ok()),
        }
    }

    #[test]
    fn truncation_examples() {
        assert_eq!(truncate_target(0.05, 0.1), 0.05);
        assert_eq!(truncate_target(-0.5, 0.1), -0.1);
        assert_eq!(truncate_target(0.1, 0.1), 0.1);
    }

    #[test]
    fn truncation_is_odd_and_bounded() {
        let mut rng = rng_from_seed(5);
        for _ in 0..1000 {
            let d: f64 = rng.gen_range(-3.0..3.0);
            let t = truncate_target(d, 0.1);
            assert!(t.abs() <= 0.1 + 1e-15);
            assert_eq!(truncate_target(-d, 0.1), -t);
        }
    }

    #[test]
    fn mesh_udf_matches_brute_force() {
        let mesh = icosphere(0.5f64, 1);
        let field =
            GroundTruthField::from_mesh(&mesh, DistanceKind::Unsigned, 0.1).unwrap();
        let mut rng = rng_from_seed(21);
        for _ in 0..200 {
            let q = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let brute = (0..mesh.triangles.len())
                .map(|i| {
                    let [a, b, c] = mesh.corners(i);
                    (crate::spatial::closest_point_on_triangle(q, a, b, c) - q).norm()
                })
                .fold(f64::INFINITY, f64::min);
            assert!((field.distance(q) - brute).abs() < 1e-9);
        }
    }

    #[test]
    fn sphere_sdf_sign_matches_analytic() {
        let mesh = icosphere(0.5f64, 2);
        let field = GroundTruthField::from_mesh(&mesh, DistanceKind::Signed, 0.1).unwrap();
        let mut rng = rng_from_seed(33);
        let mut wrong = 0usize;
        let n = 4000;
        for _ in 0..n {
            let q = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let analytic: f64 = q.norm() - 0.5;
            // Skip the band where the faceted mesh legitimately disagrees
            // with the smooth sphere.
            if analytic.abs() < 0.02 {
                continue;
            }
            if (field.distance(q) < 0.0) != (analytic < 0.0) {
                wrong += 1;
            }
        }
        assert!(
            (wrong as f64) < 0.001 * n as f64,
            "{wrong} wrong signs out of {n}"
        );
    }

    #[test]
    fn surface_samples_have_zero_distance() {
        let mesh = icosphere(0.5f64, 1);
        let field =
            GroundTruthField::from_mesh(&mesh, DistanceKind::Unsigned, 0.1).unwrap();
        let pc = sample_surface(&mesh, 100, 2).unwrap();
        for p in &pc.points {
            assert!(field.distance(*p).abs() < 1e-9);
        }
    }
}
