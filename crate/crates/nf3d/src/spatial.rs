//! Spatial indices: a balanced KD-tree over points and an AABB BVH over
//! triangles. Queries return exactly what a brute-force scan would,
//! including the smallest-index tie rule.

use crate::error::{Error, Result};
use crate::geometry::TriMesh;
use crate::math::Vec3;
use crate::num::Real;

const LEAF_SIZE: usize = 16;

// ---------------------------------------------------------------------------
// KD-tree

enum KdNode<T> {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: T, left: usize, right: usize },
}

pub struct KdTree<T> {
    points: Vec<Vec3<T>>,
    order: Vec<u32>,
    nodes: Vec<KdNode<T>>,
    root: usize,
}

impl<T: Real> KdTree<T> {
    pub fn build(points: &[Vec3<T>]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::DegenerateShape("KD-tree over empty point set".into()));
        }
        let mut tree = Self {
            points: points.to_vec(),
            order: (0..points.len() as u32).collect(),
            nodes: Vec::new(),
            root: 0,
        };
        tree.root = tree.split(0, points.len());
        Ok(tree)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn split(&mut self, start: usize, end: usize) -> usize {
        if end - start <= LEAF_SIZE {
            self.nodes.push(KdNode::Leaf { start, end });
            return self.nodes.len() - 1;
        }
        // Widest axis of the actual extent keeps the tree balanced on
        // skewed inputs.
        let mut lo = Vec3::splat(T::infinity());
        let mut hi = Vec3::splat(T::neg_infinity());
        for &id in &self.order[start..end] {
            let p = self.points[id as usize];
            lo = lo.min_componentwise(p);
            hi = hi.max_componentwise(p);
        }
        let ext = hi - lo;
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        let mid = (start + end) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a as usize][axis]
                .partial_cmp(&points[b as usize][axis])
                .unwrap()
        });
        let value = self.points[self.order[mid] as usize][axis];
        let left = self.split(start, mid);
        let right = self.split(mid, end);
        self.nodes.push(KdNode::Split { axis, value, left, right });
        self.nodes.len() - 1
    }

    /// Exact Euclidean nearest neighbor; ties resolved to the smallest index.
    pub fn nearest(&self, q: Vec3<T>) -> (T, usize) {
        let (d2, id) = self.nearest_squared(q);
        (d2.sqrt(), id)
    }

    /// Squared-distance variant, avoiding the sqrt in inner loops.
    pub fn nearest_squared(&self, q: Vec3<T>) -> (T, usize) {
        let mut best = (T::infinity(), usize::MAX);
        self.search(self.root, q, &mut best);
        best
    }

    fn search(&self, node: usize, q: Vec3<T>, best: &mut (T, usize)) {
        match &self.nodes[node] {
            KdNode::Leaf { start, end } => {
                for &id in &self.order[*start..*end] {
                    let d2 = (self.points[id as usize] - q).norm_squared();
                    let id = id as usize;
                    if d2 < best.0 || (d2 == best.0 && id < best.1) {
                        *best = (d2, id);
                    }
                }
            }
            KdNode::Split { axis, value, left, right } => {
                let delta = q[*axis] - *value;
                let (near, far) = if delta < T::zero() { (*left, *right) } else { (*right, *left) };
                self.search(near, q, best);
                // A strict comparison keeps equal-distance candidates on the
                // far side reachable, preserving the tie rule.
                if delta * delta <= best.0 {
                    self.search(far, q, best);
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Triangle BVH

#[derive(Clone, Copy)]
struct Aabb<T> {
    lo: Vec3<T>,
    hi: Vec3<T>,
}

impl<T: Real> Aabb<T> {
    fn empty() -> Self {
        Self { lo: Vec3::splat(T::infinity()), hi: Vec3::splat(T::neg_infinity()) }
    }

    fn grow(&mut self, p: Vec3<T>) {
        self.lo = self.lo.min_componentwise(p);
        self.hi = self.hi.max_componentwise(p);
    }

    #[allow(dead_code)]
    fn union(&mut self, o: &Aabb<T>) {
        self.lo = self.lo.min_componentwise(o.lo);
        self.hi = self.hi.max_componentwise(o.hi);
    }

    fn distance_squared(&self, q: Vec3<T>) -> T {
        let mut d2 = T::zero();
        for a in 0..3 {
            let v = if q[a] < self.lo[a] {
                self.lo[a] - q[a]
            } else if q[a] > self.hi[a] {
                q[a] - self.hi[a]
            } else {
                T::zero()
            };
            d2 += v * v;
        }
        d2
    }

    fn hit_by_ray(&self, origin: Vec3<T>, inv_dir: Vec3<T>) -> bool {
        let mut tmin = T::zero();
        let mut tmax = T::infinity();
        for a in 0..3 {
            let t1 = (self.lo[a] - origin[a]) * inv_dir[a];
            let t2 = (self.hi[a] - origin[a]) * inv_dir[a];
            let (t1, t2) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            tmin = tmin.max(t1);
            tmax = tmax.min(t2);
            if tmin > tmax {
                return false;
            }
        }
        true
    }
}

enum BvhNode<T> {
    Leaf { aabb: Aabb<T>, start: usize, end: usize },
    Inner { aabb: Aabb<T>, left: usize, right: usize },
}

impl<T: Real> BvhNode<T> {
    fn aabb(&self) -> &Aabb<T> {
        match self {
            BvhNode::Leaf { aabb, .. } | BvhNode::Inner { aabb, .. } => aabb,
        }
    }
}

/// Result of a single ray cast used for the inside test.
enum Parity {
    Crossings(usize),
    /// The ray grazed an edge, vertex or coplanar triangle; the caller
    /// should recast with a perturbed direction.
    Ambiguous,
}

pub struct TriangleBvh<T> {
    vertices: Vec<Vec3<T>>,
    triangles: Vec<[u32; 3]>,
    order: Vec<u32>,
    nodes: Vec<BvhNode<T>>,
    root: usize,
}

impl<T: Real> TriangleBvh<T> {
    pub fn build(mesh: &TriMesh<T>) -> Result<Self> {
        if mesh.triangles.is_empty() {
            return Err(Error::DegenerateShape("BVH over empty mesh".into()));
        }
        let mut bvh = Self {
            vertices: mesh.vertices.clone(),
            triangles: mesh.triangles.clone(),
            order: (0..mesh.triangles.len() as u32).collect(),
            nodes: Vec::new(),
            root: 0,
        };
        bvh.root = bvh.split(0, mesh.triangles.len());
        Ok(bvh)
    }

    fn corners(&self, tri: u32) -> [Vec3<T>; 3] {
        let t = self.triangles[tri as usize];
        [
            self.vertices[t[0] as usize],
            self.vertices[t[1] as usize],
            self.vertices[t[2] as usize],
        ]
    }

    fn centroid(&self, tri: u32) -> Vec3<T> {
        let [a, b, c] = self.corners(tri);
        (a + b + c) / T::of(3.0)
    }

    fn split(&mut self, start: usize, end: usize) -> usize {
        let mut aabb = Aabb::empty();
        for &id in &self.order[start..end] {
            for p in self.corners(id) {
                aabb.grow(p);
            }
        }
        if end - start <= 4 {
            self.nodes.push(BvhNode::Leaf { aabb, start, end });
            return self.nodes.len() - 1;
        }
        let mut clo = Vec3::splat(T::infinity());
        let mut chi = Vec3::splat(T::neg_infinity());
        for &id in &self.order[start..end] {
            let c = self.centroid(id);
            clo = clo.min_componentwise(c);
            chi = chi.max_componentwise(c);
        }
        let ext = chi - clo;
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        let mid = (start + end) / 2;
        // Split on centroid median; fall back to an arbitrary halving when
        // all centroids coincide.
        let centroids: Vec<(u32, T)> = self.order[start..end]
            .iter()
            .map(|&id| (id, self.centroid(id)[axis]))
            .collect();
        let mut sorted = centroids;
        sorted.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        for (slot, (id, _)) in sorted.into_iter().enumerate() {
            self.order[start + slot] = id;
        }
        let left = self.split(start, mid);
        let right = self.split(mid, end);
        self.nodes.push(BvhNode::Inner { aabb, left, right });
        self.nodes.len() - 1
    }

    /// Exact unsigned distance to the mesh surface plus the index of a
    /// realizing triangle (smallest index among ties).
    pub fn distance(&self, q: Vec3<T>) -> (T, usize) {
        let mut best = (T::infinity(), usize::MAX);
        self.search(self.root, q, &mut best);
        (best.0.sqrt(), best.1)
    }

    fn search(&self, node: usize, q: Vec3<T>, best: &mut (T, usize)) {
        match &self.nodes[node] {
            BvhNode::Leaf { start, end, .. } => {
                for &id in &self.order[*start..*end] {
                    let [a, b, c] = self.corners(id);
                    let d2 = (closest_point_on_triangle(q, a, b, c) - q).norm_squared();
                    let id = id as usize;
                    if d2 < best.0 || (d2 == best.0 && id < best.1) {
                        *best = (d2, id);
                    }
                }
            }
            BvhNode::Inner { left, right, .. } => {
                let dl = self.nodes[*left].aabb().distance_squared(q);
                let dr = self.nodes[*right].aabb().distance_squared(q);
                let (first, d1, second, d2) =
                    if dl <= dr { (*left, dl, *right, dr) } else { (*right, dr, *left, dl) };
                if d1 <= best.0 {
                    self.search(first, q, best);
                }
                if d2 <= best.0 {
                    self.search(second, q, best);
                }
            }
        }
    }

    /// Count ray-surface crossings along `dir`; `None` when the cast was
    /// ambiguous (hit an edge or vertex within tolerance).
    fn cast_parity(&self, origin: Vec3<T>, dir: Vec3<T>) -> Parity {
        let inv = Vec3::new(T::one() / dir.x, T::one() / dir.y, T::one() / dir.z);
        let mut stack = vec![self.root];
        let mut crossings = 0usize;
        while let Some(node) = stack.pop() {
            match &self.nodes[node] {
                BvhNode::Leaf { aabb, start, end } => {
                    if !aabb.hit_by_ray(origin, inv) {
                        continue;
                    }
                    for &id in &self.order[*start..*end] {
                        let [a, b, c] = self.corners(id);
                        match ray_triangle(origin, dir, a, b, c) {
                            RayHit::Miss => {}
                            RayHit::Hit => crossings += 1,
                            RayHit::Ambiguous => return Parity::Ambiguous,
                        }
                    }
                }
                BvhNode::Inner { aabb, left, right } => {
                    if aabb.hit_by_ray(origin, inv) {
                        stack.push(*left);
                        stack.push(*right);
                    }
                }
            }
        }
        Parity::Crossings(crossings)
    }

    /// Inside test by crossing parity along one direction, with up to 8
    /// perturbed recasts when the ray grazes the mesh.
    pub fn parity_inside(&self, q: Vec3<T>, dirs: &[Vec3<T>]) -> Option<bool> {
        for dir in dirs {
            match self.cast_parity(q, *dir) {
                Parity::Crossings(n) => return Some(n % 2 == 1),
                Parity::Ambiguous => continue,
            }
        }
        None
    }
}

/// Closest point on a triangle (Ericson, Real-Time Collision Detection).
pub fn closest_point_on_triangle<T: Real>(
    p: Vec3<T>,
    a: Vec3<T>,
    b: Vec3<T>,
    c: Vec3<T>,
) -> Vec3<T> {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(ap);
    let d2 = ac.dot(ap);
    if d1 <= T::zero() && d2 <= T::zero() {
        return a;
    }

    let bp = p - b;
    let d3 = ab.dot(bp);
    let d4 = ac.dot(bp);
    if d3 >= T::zero() && d4 <= d3 {
        return b;
    }

    let vc = d1 * d4 - d3 * d2;
    if vc <= T::zero() && d1 >= T::zero() && d3 <= T::zero() {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }

    let cp = p - c;
    let d5 = ab.dot(cp);
    let d6 = ac.dot(cp);
    if d6 >= T::zero() && d5 <= d6 {
        return c;
    }

    let vb = d5 * d2 - d1 * d6;
    if vb <= T::zero() && d2 >= T::zero() && d6 <= T::zero() {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }

    let va = d3 * d6 - d5 * d4;
    if va <= T::zero() && (d4 - d3) >= T::zero() && (d5 - d6) >= T::zero() {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }

    let denom = T::one() / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

enum RayHit {
    Miss,
    Hit,
    Ambiguous,
}

/// Moller-Trumbore with explicit ambiguity reporting: hits within 1e-12 of
/// an edge, a vertex, the ray origin, or a coplanar configuration cannot be
/// counted reliably for parity.
fn ray_triangle<T: Real>(
    origin: Vec3<T>,
    dir: Vec3<T>,
    a: Vec3<T>,
    b: Vec3<T>,
    c: Vec3<T>,
) -> RayHit {
    let eps = T::of(1e-12);
    let e1 = b - a;
    let e2 = c - a;
    let pvec = dir.cross(e2);
    let det = e1.dot(pvec);
    if det.abs() < eps {
        // Near-parallel. Dangerous only if the origin is essentially in the
        // triangle plane near the triangle.
        let n = e1.cross(e2);
        let nn = n.norm();
        if nn > T::zero() && ((origin - a).dot(n) / nn).abs() < T::of(1e-9) {
            return RayHit::Ambiguous;
        }
        return RayHit::Miss;
    }
    let inv_det = T::one() / det;
    let tvec = origin - a;
    let u = tvec.dot(pvec) * inv_det;
    if u < -eps || u > T::one() + eps {
        return RayHit::Miss;
    }
    let qvec = tvec.cross(e1);
    let v = dir.dot(qvec) * inv_det;
    if v < -eps || u + v > T::one() + eps {
        return RayHit::Miss;
    }
    let t = e2.dot(qvec) * inv_det;
    if t <= -eps {
        return RayHit::Miss;
    }
    let boundary = u < eps || v < eps || u + v > T::one() - eps || t < eps;
    if boundary {
        RayHit::Ambiguous
    } else {
        RayHit::Hit
    }
}
