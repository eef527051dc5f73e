//! Decoding a field back into explicit geometry: regular-grid evaluation,
//! marching cubes for signed fields, a gradient-pseudo-sign marching-cubes
//! variant for unsigned fields, and point-cloud resampling with attribute
//! attachment.

use std::collections::{HashMap, VecDeque};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{encode_into, FieldModel, Trace};
use crate::geometry::{sample_surface, Normalization, PointCloud, TriMesh};
use crate::math::Vec3;
use crate::mc_tables::{EDGE_CORNERS, TRIANGLE_TABLE};
use crate::num::Real;

/// Scalar field sampled on a regular lattice over `[-1, 1]^3`, with
/// optional exact spatial gradients (needed by the unsigned path).
pub struct FieldGrid<T> {
    pub resolution: usize,
    /// `resolution^3` values, x fastest: `index = (k r + j) r + i`.
    pub values: Vec<T>,
    pub gradients: Option<Vec<Vec3<T>>>,
}

impl<T: Real> FieldGrid<T> {
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.resolution + j) * self.resolution + i
    }

    /// Lattice spacing `2 / (r - 1)`.
    pub fn spacing(&self) -> T {
        T::of(2.0) / T::of(self.resolution as f64 - 1.0)
    }

    /// World position of lattice point `(i, j, k)`.
    #[inline]
    pub fn position(&self, i: usize, j: usize, k: usize) -> Vec3<T> {
        let s = 2.0 / (self.resolution as f64 - 1.0);
        Vec3::new(
            T::of(i as f64 * s - 1.0),
            T::of(j as f64 * s - 1.0),
            T::of(k as f64 * s - 1.0),
        )
    }
}

fn check_resolution(r_mc: usize) -> Result<()> {
    if r_mc < 8 {
        return Err(Error::Config(format!("grid resolution {r_mc} below the minimum of 8")));
    }
    Ok(())
}

/// Evaluate a geometry field on the lattice; gradients come from the exact
/// reverse pass when requested.
pub fn evaluate_grid<T: Real>(
    model: &FieldModel<T>,
    r_mc: usize,
    with_gradients: bool,
) -> Result<FieldGrid<T>> {
    if !model.kind.is_geometry() {
        return Err(Error::Config("grid evaluation needs a distance field".into()));
    }
    check_resolution(r_mc)?;
    let r = r_mc;
    let mut values = vec![T::zero(); r * r * r];
    let mut gradients = if with_gradients { vec![Vec3::zero(); r * r * r] } else { Vec::new() };
    let step = 2.0 / (r as f64 - 1.0);
    let coord = |i: usize| T::of(i as f64 * step - 1.0);

    let mut upstream = vec![T::zero(); model.output_dim()];
    upstream[0] = T::one();

    let grad_slabs: Vec<Option<&mut [Vec3<T>]>> = if with_gradients {
        gradients.chunks_mut(r * r).map(Some).collect()
    } else {
        (0..r).map(|_| None).collect()
    };
    values
        .par_chunks_mut(r * r)
        .zip(grad_slabs)
        .enumerate()
        .for_each(|(k, (vslab, gslab))| {
            let mut trace = Trace::new(model);
            let mut gslab = gslab;
            for j in 0..r {
                for i in 0..r {
                    let x = Vec3::new(coord(i), coord(j), coord(k));
                    encode_into(x, &model.encoding, &mut trace.enc);
                    model.forward_traced(&mut trace);
                    vslab[j * r + i] = trace.out[0];
                    if let Some(g) = gslab.as_deref_mut() {
                        let gi = model
                            .backward_traced(&mut trace, &upstream, None, true)
                            .expect("input gradient");
                        g[j * r + i] = gi;
                    }
                }
            }
        });

    Ok(FieldGrid {
        resolution: r,
        values,
        gradients: if with_gradients { Some(gradients) } else { None },
    })
}

/// Evaluate an analytic field (and optionally its gradient) on the lattice;
/// the injection point for validating the extraction stack independently of
/// any trained model.
pub fn evaluate_grid_fn<T, F, G>(value: F, gradient: Option<G>, r_mc: usize) -> Result<FieldGrid<T>>
where
    T: Real,
    F: Fn(Vec3<T>) -> T + Sync,
    G: Fn(Vec3<T>) -> Vec3<T> + Sync,
{
    check_resolution(r_mc)?;
    let r = r_mc;
    let step = 2.0 / (r as f64 - 1.0);
    let coord = |i: usize| T::of(i as f64 * step - 1.0);
    let position = |idx: usize| {
        let i = idx % r;
        let j = (idx / r) % r;
        let k = idx / (r * r);
        Vec3::new(coord(i), coord(j), coord(k))
    };
    let values: Vec<T> = (0..r * r * r)
        .into_par_iter()
        .map(|idx| value(position(idx)))
        .collect();
    let gradients = gradient.map(|g| {
        (0..r * r * r)
            .into_par_iter()
            .map(|idx| g(position(idx)))
            .collect()
    });
    Ok(FieldGrid { resolution: r, values, gradients })
}

/// Corner offsets matching the case table's bit order.
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

/// Standard 256-case marching cubes with linear edge interpolation and
/// shared (deduplicated) vertices. Cells are swept in a fixed order, so the
/// output is deterministic. A grid with no sign change produces an empty
/// mesh.
pub fn marching_cubes_sdf<T: Real>(grid: &FieldGrid<T>, iso: T) -> TriMesh<T> {
    let r = grid.resolution;
    let mut vertices: Vec<Vec3<T>> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();
    // Shared vertex per lattice edge, keyed by the endpoint pair.
    let mut edge_vertex: HashMap<(u32, u32), u32> = HashMap::new();

    for k in 0..r - 1 {
        for j in 0..r - 1 {
            for i in 0..r - 1 {
                let mut corner_idx = [0usize; 8];
                let mut corner_val = [T::zero(); 8];
                let mut case = 0usize;
                for (c, off) in CORNERS.iter().enumerate() {
                    let idx = grid.index(i + off[0], j + off[1], k + off[2]);
                    corner_idx[c] = idx;
                    corner_val[c] = grid.values[idx];
                    if corner_val[c] < iso {
                        case |= 1 << c;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                let row = &TRIANGLE_TABLE[case];
                let mut t = 0;
                while t < row.len() && row[t] >= 0 {
                    let mut tri = [0u32; 3];
                    for (slot, &e) in tri.iter_mut().zip(&row[t..t + 3]) {
                        let [ca, cb] = EDGE_CORNERS[e as usize];
                        let (ia, ib) = (corner_idx[ca], corner_idx[cb]);
                        let key = (ia.min(ib) as u32, ia.max(ib) as u32);
                        let next_id = vertices.len() as u32;
                        let id = *edge_vertex.entry(key).or_insert_with(|| {
                            let (va, vb) = (corner_val[ca], corner_val[cb]);
                            let pa = {
                                let off = CORNERS[ca];
                                grid.position(i + off[0], j + off[1], k + off[2])
                            };
                            let pb = {
                                let off = CORNERS[cb];
                                grid.position(i + off[0], j + off[1], k + off[2])
                            };
                            let denom = vb - va;
                            let frac = if denom == T::zero() {
                                T::of(0.5)
                            } else {
                                ((iso - va) / denom).max(T::zero()).min(T::one())
                            };
                            vertices.push(pa + (pb - pa) * frac);
                            next_id
                        });
                        *slot = id;
                    }
                    // degenerate table entries (shared vertex) are dropped
                    if tri[0] != tri[1] && tri[1] != tri[2] && tri[0] != tri[2] {
                        triangles.push(tri);
                    }
                    t += 3;
                }
            }
        }
    }
    TriMesh { vertices, triangles }
}

/// Pseudo-signs for an unsigned grid: an edge with both endpoint values
/// inside the `eps` band crosses the surface when the field gradients at
/// its endpoints point away from each other; signs then propagate by
/// breadth-first search from the grid corner (outside, +1), flipping across
/// crossing edges, with conflicts resolved by majority over the already
/// visited neighbors.
fn pseudo_signs<T: Real>(grid: &FieldGrid<T>, eps: T) -> Result<Vec<i8>> {
    let gradients = grid
        .gradients
        .as_ref()
        .ok_or_else(|| Error::Config("unsigned extraction needs gradients".into()))?;
    let r = grid.resolution;
    let n = r * r * r;
    let stride = [1usize, r, r * r];

    // crossing[a][idx]: edge from idx along +axis a crosses the surface
    let mut crossing: [Vec<bool>; 3] =
        [vec![false; n], vec![false; n], vec![false; n]];
    for (axis, marks) in crossing.iter_mut().enumerate() {
        let limit = |i: usize, j: usize, k: usize| match axis {
            0 => i < r - 1,
            1 => j < r - 1,
            _ => k < r - 1,
        };
        for k in 0..r {
            for j in 0..r {
                for i in 0..r {
                    if !limit(i, j, k) {
                        continue;
                    }
                    let u = grid.index(i, j, k);
                    let v = u + stride[axis];
                    if grid.values[u] < eps && grid.values[v] < eps {
                        let gu = gradients[u];
                        let gv = gradients[v];
                        // The surface passes between the endpoints when the
                        // gradients are anti-parallel and each points away
                        // from the other endpoint along the edge. Requiring
                        // both kills the tangent-plane false positive where
                        // only the edge component changes sign.
                        marks[u] = gu.dot(gv) < T::zero()
                            && gu[axis] < T::zero()
                            && gv[axis] > T::zero();
                    }
                }
            }
        }
    }

    let mut signs = vec![0i8; n];
    let mut enqueued = vec![false; n];
    let mut queue = VecDeque::new();
    signs[0] = 1; // corner (-1,-1,-1) is outside: shapes live in the unit ball
    enqueued[0] = true;
    queue.push_back(0u32);

    let neighbor = |idx: usize, slot: usize| -> Option<(usize, bool)> {
        let i = idx % r;
        let j = (idx / r) % r;
        let k = idx / (r * r);
        // fixed order: -x, +x, -y, +y, -z, +z
        let (axis, positive) = (slot / 2, slot % 2 == 1);
        let coordinate = [i, j, k][axis];
        if positive {
            if coordinate + 1 >= r {
                return None;
            }
            Some((idx + stride[axis], crossing[axis][idx]))
        } else {
            if coordinate == 0 {
                return None;
            }
            let nb = idx - stride[axis];
            Some((nb, crossing[axis][nb]))
        }
    };

    while let Some(u) = queue.pop_front() {
        let u = u as usize;
        if signs[u] == 0 {
            // majority over already signed neighbors; ties fall outside
            let mut vote = 0i32;
            for slot in 0..6 {
                if let Some((nb, crossed)) = neighbor(u, slot) {
                    if signs[nb] != 0 {
                        let proposal = if crossed { -signs[nb] } else { signs[nb] };
                        vote += proposal as i32;
                    }
                }
            }
            signs[u] = if vote < 0 { -1 } else { 1 };
        }
        for slot in 0..6 {
            if let Some((nb, _)) = neighbor(u, slot) {
                if !enqueued[nb] {
                    enqueued[nb] = true;
                    queue.push_back(nb as u32);
                }
            }
        }
    }
    Ok(signs)
}

/// Marching cubes over an unsigned field: assign pseudo-signs from the
/// gradient crossings, then extract `sign * value` as a signed field.
pub fn marching_cubes_udf<T: Real>(grid: &FieldGrid<T>, eps: T) -> Result<TriMesh<T>> {
    let signs = pseudo_signs(grid, eps)?;
    let signed = FieldGrid {
        resolution: grid.resolution,
        values: grid
            .values
            .iter()
            .zip(&signs)
            .map(|(&v, &s)| if s < 0 { -v } else { v })
            .collect(),
        gradients: None,
    };
    Ok(marching_cubes_sdf(&signed, T::zero()))
}

/// Default crossing band: three lattice spacings.
pub fn default_band<T: Real>(r_mc: usize) -> T {
    T::of(3.0 * 2.0 / (r_mc as f64 - 1.0))
}

/// Resample the decoded surface as a point cloud in the original
/// coordinate frame, attaching colors from an attribute field evaluated in
/// normalized coordinates.
pub fn decode_to_pointcloud<T: Real>(
    mesh: &TriMesh<T>,
    n: usize,
    norm: &Normalization<T>,
    attr_model: Option<&FieldModel<T>>,
    seed: u64,
) -> Result<PointCloud<T>> {
    let cleaned = mesh.without_small_triangles(T::of(1e-12));
    if cleaned.is_empty() {
        return Err(Error::EmptySurface);
    }
    let sampled = sample_surface(&cleaned, n, seed)?;
    let colors = attr_model.map(|attr| {
        sampled
            .points
            .par_iter()
            .map(|&p| {
                let c = attr.forward_rgb(p);
                Vec3::new(
                    c.x.max(-T::one()).min(T::one()),
                    c.y.max(-T::one()).min(T::one()),
                    c.z.max(-T::one()).min(T::one()),
                )
            })
            .collect()
    });
    let points = sampled.points.iter().map(|&p| norm.invert(p)).collect();
    Ok(PointCloud { points, colors })
}
