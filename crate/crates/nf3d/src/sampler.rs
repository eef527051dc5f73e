//! Training-set construction: the fixed 20/40/40 mixture of uniform-cube,
//! on-surface and noise-perturbed surface points, labeled with oracle
//! distances.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{sample_surface, Shape};
use crate::math::Vec3;
use crate::num::Real;
use crate::oracle::GroundTruthField;
use crate::seeds::{derive_seed, rng_stream};

/// Fixed set of labeled sample points, built once before training.
///
/// `distances` holds the raw signed oracle distances; the training loss
/// applies the truncation operator itself, since the mask in the loss needs
/// the untruncated magnitude.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet<T> {
    pub points: Vec<Vec3<T>>,
    pub distances: Vec<T>,
    pub seed: u64,
    pub sigma: T,
    n_uniform: usize,
    n_surface: usize,
    n_perturbed: usize,
}

impl<T: Real> TrainingSet<T> {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index range of the uniform-cube bucket.
    pub fn uniform_range(&self) -> std::ops::Range<usize> {
        0..self.n_uniform
    }

    /// Index range of the on-surface bucket.
    pub fn surface_range(&self) -> std::ops::Range<usize> {
        self.n_uniform..self.n_uniform + self.n_surface
    }

    /// Index range of the perturbed-surface bucket.
    pub fn perturbed_range(&self) -> std::ops::Range<usize> {
        self.n_uniform + self.n_surface..self.len()
    }
}

/// Split a total count into the 20% / 40% / 40% buckets, deterministically:
/// floor for the uniform share, ceil for the surface share, remainder for
/// the perturbed share.
pub fn mixture_counts(m_total: usize) -> (usize, usize, usize) {
    let n_uniform = m_total / 5;
    let n_surface = (2 * m_total).div_ceil(5);
    (n_uniform, n_surface, m_total - n_uniform - n_surface)
}

/// Surface points drawn from the input: area-uniform samples for meshes,
/// with-replacement draws for point clouds.
fn draw_surface_points<T: Real>(
    surface: &Shape<T>,
    n: usize,
    seed: u64,
) -> Result<Vec<Vec3<T>>> {
    match surface {
        Shape::Mesh(m) => Ok(sample_surface(m, n, seed)?.points),
        Shape::Cloud(pc) => {
            if pc.is_empty() {
                return Err(Error::DegenerateShape("empty point cloud".into()));
            }
            let mut rng = rng_stream(seed, 0);
            Ok((0..n)
                .map(|_| pc.points[rng.gen_range(0..pc.len())])
                .collect())
        }
    }
}

/// Isotropic Gaussian offsets used for the perturbed bucket; exposed for its
/// own statistics test.
pub(crate) fn gaussian_offsets<T: Real>(n: usize, sigma: f64, seed: u64, stream: u64) -> Vec<Vec3<T>> {
    let mut rng = rng_stream(seed, stream);
    if sigma == 0.0 {
        return vec![Vec3::zero(); n];
    }
    let normal = Normal::new(0.0, sigma).expect("sigma >= 0");
    (0..n)
        .map(|_| {
            Vec3::new(
                T::of(normal.sample(&mut rng)),
                T::of(normal.sample(&mut rng)),
                T::of(normal.sample(&mut rng)),
            )
        })
        .collect()
}

/// Build the fixed training set: 20% uniform in `[-1,1]^3`, 40% on the
/// surface, 40% surface plus `N(0, sigma^2 I)` noise, each labeled with the
/// oracle distance. Fully determined by `seed`.
pub fn build_training_set<T: Real>(
    field: &GroundTruthField<T>,
    surface: &Shape<T>,
    m_total: usize,
    sigma: T,
    seed: u64,
) -> Result<TrainingSet<T>> {
    if m_total < 10 {
        return Err(Error::Config(format!(
            "training set needs at least 10 samples, got {m_total}"
        )));
    }
    if sigma < T::zero() {
        return Err(Error::Config("sigma must be non-negative".into()));
    }
    let (n_uniform, n_surface, n_perturbed) = mixture_counts(m_total);

    let mut points = Vec::with_capacity(m_total);

    let mut uniform_rng = rng_stream(seed, 0);
    for _ in 0..n_uniform {
        points.push(Vec3::new(
            T::of(uniform_rng.gen_range(-1.0..1.0f64)),
            T::of(uniform_rng.gen_range(-1.0..1.0f64)),
            T::of(uniform_rng.gen_range(-1.0..1.0f64)),
        ));
    }

    points.extend(draw_surface_points(surface, n_surface, derive_seed(seed, 1, 0))?);

    let sources = draw_surface_points(surface, n_perturbed, derive_seed(seed, 2, 0))?;
    let offsets = gaussian_offsets::<T>(n_perturbed, sigma.to_f64_lossy(), seed, 3);
    // Perturbed points may leave [-1,1]^3; their distances stay valid.
    points.extend(sources.iter().zip(&offsets).map(|(&p, &o)| p + o));

    // Labeling parallelizes; outputs keep the point order.
    let distances: Vec<T> = points.par_iter().map(|&p| field.distance(p)).collect();
    for (i, d) in distances.iter().enumerate() {
        if !d.is_finite() {
            return Err(Error::Training(format!("non-finite oracle distance at sample {i}")));
        }
    }

    Ok(TrainingSet {
        points,
        distances,
        seed,
        sigma,
        n_uniform,
        n_surface,
        n_perturbed,
    })
}

/// Dump the set as flat little-endian `f32 x, y, z, target` records.
pub fn dump_training_set<T: Real>(set: &TrainingSet<T>, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (p, d) in set.points.iter().zip(&set.distances) {
        for v in [p.x, p.y, p.z, *d] {
            w.write_all(&(v.to_f64_lossy() as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

/// Read records written by [`dump_training_set`].
pub fn load_training_records(path: &Path) -> Result<Vec<(Vec3<f32>, f32)>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() % 16 != 0 {
        return Err(Error::Bitstream {
            offset: bytes.len(),
            message: "training dump length is not a multiple of 16".into(),
        });
    }
    let mut out = Vec::with_capacity(bytes.len() / 16);
    for rec in bytes.chunks_exact(16) {
        let f = |i: usize| f32::from_le_bytes(rec[i..i + 4].try_into().unwrap());
        out.push((Vec3::new(f(0), f(4), f(8)), f(12)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PointCloud;
    use crate::oracle::DistanceKind;
    use crate::primitives::icosphere;

    fn sphere_field(sigma_kind: DistanceKind) -> (GroundTruthField<f64>, Shape<f64>) {
        let mesh = icosphere(0.5f64, 2);
        let shape = Shape::Mesh(mesh.clone());
        let field = GroundTruthField::from_mesh(&mesh, sigma_kind, 0.1).unwrap();
        (field, shape)
    }

    #[test]
    fn mixture_counts_are_exact() {
        assert_eq!(mixture_counts(1000), (200, 400, 400));
        assert_eq!(mixture_counts(11), (2, 5, 4));
        assert_eq!(mixture_counts(10), (2, 4, 4));
    }

    #[test]
    fn buckets_have_exact_sizes() {
        let (field, shape) = sphere_field(DistanceKind::Unsigned);
        let ts = build_training_set(&field, &shape, 1000, 0.025, 7).unwrap();
        assert_eq!(ts.uniform_range().len(), 200);
        assert_eq!(ts.surface_range().len(), 400);
        assert_eq!(ts.perturbed_range().len(), 400);
        assert_eq!(ts.len(), 1000);
    }

    #[test]
    fn sigma_zero_perturbed_targets_vanish() {
        let (field, shape) = sphere_field(DistanceKind::Unsigned);
        let ts = build_training_set(&field, &shape, 200, 0.0, 3).unwrap();
        for i in ts.perturbed_range() {
            assert!(ts.distances[i].abs() < 1e-9, "perturbed target {}", ts.distances[i]);
        }
    }

    #[test]
    fn cloud_surface_bucket_targets_are_zero() {
        let mesh = icosphere(0.5f64, 2);
        let pc = sample_surface(&mesh, 2000, 11).unwrap();
        let shape = Shape::Cloud(PointCloud::new(pc.points.clone()));
        let field = GroundTruthField::from_cloud(&pc, 0.1).unwrap();
        let ts = build_training_set(&field, &shape, 500, 0.025, 5).unwrap();
        for i in ts.surface_range() {
            assert_eq!(ts.distances[i], 0.0);
        }
    }

    #[test]
    fn identical_seeds_reproduce_identical_sets() {
        let (field, shape) = sphere_field(DistanceKind::Signed);
        let a = build_training_set(&field, &shape, 300, 0.01, 99).unwrap();
        let b = build_training_set(&field, &shape, 300, 0.01, 99).unwrap();
        assert_eq!(a, b);
        let c = build_training_set(&field, &shape, 300, 0.01, 100).unwrap();
        assert_ne!(a.points, c.points);
    }

    #[test]
    fn noise_std_matches_sigma() {
        let sigma = 0.025;
        let offsets = gaussian_offsets::<f64>(100_000, sigma, 42, 3);
        for axis in 0..3 {
            let mean: f64 =
                offsets.iter().map(|o| o[axis]).sum::<f64>() / offsets.len() as f64;
            let var: f64 = offsets.iter().map(|o| (o[axis] - mean).powi(2)).sum::<f64>()
                / offsets.len() as f64;
            let std = var.sqrt();
            assert!(
                (std - sigma).abs() < 0.05 * sigma,
                "axis {axis}: std {std} vs sigma {sigma}"
            );
        }
    }

    #[test]
    fn too_small_set_is_rejected() {
        let (field, shape) = sphere_field(DistanceKind::Unsigned);
        assert!(matches!(
            build_training_set(&field, &shape, 9, 0.025, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn dump_roundtrip() {
        let (field, shape) = sphere_field(DistanceKind::Unsigned);
        let ts = build_training_set(&field, &shape, 50, 0.025, 1).unwrap();
        let dir = std::env::temp_dir().join("nf3d-sampler-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("dump.bin");
        dump_training_set(&ts, &path).unwrap();
        let records = load_training_records(&path).unwrap();
        assert_eq!(records.len(), ts.len());
        for ((p, d), i) in records.iter().zip(0..) {
            assert_eq!(p.x, ts.points[i].x as f32);
            assert_eq!(*d, ts.distances[i] as f32);
        }
    }
}
