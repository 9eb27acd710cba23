//! 3D primitives, ray/mesh intersection, mirror images and occlusion tests.
//!
//! A [`Scene`] is immutable once built. Triangles are double sided and the
//! bounding volume hierarchy answers exactly what a linear scan would.

use std::ops::{Add, Div, Mul, Neg, Sub};
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::propagation::Material;

/// Minimum ray parameter accepted as a hit, in meters.
pub const HIT_EPSILON: f64 = 1e-6;
/// Amount each segment endpoint is pulled inwards by [`visible`], in meters.
pub const SEGMENT_SHRINK: f64 = 1e-4;
/// Triangles with smaller area are rejected at load.
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        [v.x, v.y, v.z]
    }
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        self / self.norm()
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    pub fn min(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    pub fn max(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    pub fn axis(self, i: usize) -> f64 {
        match i {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Lexicographic comparison on (x, y, z); used to canonicalize endpoint order.
    pub fn lex_cmp(self, o: Vec3) -> std::cmp::Ordering {
        self.x
            .total_cmp(&o.x)
            .then(self.y.total_cmp(&o.y))
            .then(self.z.total_cmp(&o.z))
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangle {
    pub v0: Vec3,
    pub v1: Vec3,
    pub v2: Vec3,
    normal: Vec3,
}

impl Triangle {
    pub fn new(v0: Vec3, v1: Vec3, v2: Vec3) -> Result<Self> {
        let c = (v1 - v0).cross(v2 - v0);
        let area = 0.5 * c.norm();
        if !(area > MIN_TRIANGLE_AREA) || !v0.is_finite() || !v1.is_finite() || !v2.is_finite() {
            return Err(Error::DegenerateTriangle { area });
        }
        Ok(Triangle { v0, v1, v2, normal: c.normalized() })
    }

    pub fn normal(&self) -> Vec3 {
        self.normal
    }

    pub fn area(&self) -> f64 {
        0.5 * (self.v1 - self.v0).cross(self.v2 - self.v0).norm()
    }

    pub fn centroid(&self) -> Vec3 {
        (self.v0 + self.v1 + self.v2) / 3.0
    }

    /// Signed distance of `p` from the supporting plane along the unit normal.
    pub fn signed_distance(&self, p: Vec3) -> f64 {
        (p - self.v0).dot(self.normal)
    }

    /// Whether `p`, assumed to lie on the supporting plane, is inside the
    /// triangle or on its boundary (with a relative tolerance `tol`).
    pub fn contains_coplanar(&self, p: Vec3, tol: f64) -> bool {
        let (a, b, c) = self.barycentric(p);
        a >= -tol && b >= -tol && c >= -tol
    }

    fn barycentric(&self, p: Vec3) -> (f64, f64, f64) {
        let e1 = self.v1 - self.v0;
        let e2 = self.v2 - self.v0;
        let w = p - self.v0;
        let d11 = e1.dot(e1);
        let d12 = e1.dot(e2);
        let d22 = e2.dot(e2);
        let dw1 = w.dot(e1);
        let dw2 = w.dot(e2);
        let den = d11 * d22 - d12 * d12;
        let b = (d22 * dw1 - d12 * dw2) / den;
        let c = (d11 * dw2 - d12 * dw1) / den;
        (1.0 - b - c, b, c)
    }

    fn bounds(&self) -> Aabb {
        Aabb { min: self.v0.min(self.v1).min(self.v2), max: self.v0.max(self.v1).max(self.v2) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
}

impl Ray {
    /// Builds a ray, normalizing `dir`.
    pub fn new(origin: Vec3, dir: Vec3) -> Self {
        Ray { origin, dir: dir.normalized() }
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub triangle: usize,
    pub t: f64,
    pub point: Vec3,
}

/// Möller–Trumbore, both faces, smallest `t > HIT_EPSILON`.
pub fn ray_triangle_intersect(ray: &Ray, tri: &Triangle) -> Option<(f64, Vec3)> {
    let e1 = tri.v1 - tri.v0;
    let e2 = tri.v2 - tri.v0;
    let p = ray.dir.cross(e2);
    let det = e1.dot(p);
    if det.abs() < 1e-15 {
        return None;
    }
    let inv = 1.0 / det;
    let s = ray.origin - tri.v0;
    let u = s.dot(p) * inv;
    if !(-1e-12..=1.0 + 1e-12).contains(&u) {
        return None;
    }
    let q = s.cross(e1);
    let v = ray.dir.dot(q) * inv;
    if v < -1e-12 || u + v > 1.0 + 1e-12 {
        return None;
    }
    let t = e2.dot(q) * inv;
    if t > HIT_EPSILON {
        Some((t, ray.at(t)))
    } else {
        None
    }
}

/// Specular reflection `d - 2 (d.n) n`.
pub fn reflect_dir(incident: Vec3, normal: Vec3) -> Vec3 {
    incident - normal * (2.0 * incident.dot(normal))
}

/// Reflection of `p` across the supporting plane of `plane_of`.
pub fn mirror_point(p: Vec3, plane_of: &Triangle) -> Vec3 {
    let plane = Plane::of(plane_of);
    plane.mirror(p)
}

/// An oriented infinite plane `n.p = d` with unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Vec3,
    pub offset: f64,
}

impl Plane {
    pub fn of(tri: &Triangle) -> Self {
        Plane { normal: tri.normal, offset: tri.normal.dot(tri.v0) }
    }

    pub fn signed_distance(&self, p: Vec3) -> f64 {
        self.normal.dot(p) - self.offset
    }

    pub fn mirror(&self, p: Vec3) -> Vec3 {
        p - self.normal * (2.0 * self.signed_distance(p))
    }

    /// Intersection of the line through `a` and `b` with the plane, as the
    /// parameter `s` in `a + s (b - a)`.
    pub fn line_param(&self, a: Vec3, b: Vec3) -> Option<f64> {
        let da = self.signed_distance(a);
        let db = self.signed_distance(b);
        let den = da - db;
        if den.abs() < 1e-15 {
            None
        } else {
            Some(da / den)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Aabb {
    min: Vec3,
    max: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Aabb {
            min: Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            max: Vec3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    fn union(self, o: Aabb) -> Aabb {
        Aabb { min: self.min.min(o.min), max: self.max.max(o.max) }
    }

    fn grow(self, p: Vec3) -> Aabb {
        Aabb { min: self.min.min(p), max: self.max.max(p) }
    }

    /// Slab test; returns the entry distance if the box is hit within `t_max`.
    fn hit(&self, origin: Vec3, inv_dir: Vec3, t_max: f64) -> Option<f64> {
        let mut t0: f64 = 0.0;
        let mut t1 = t_max;
        for i in 0..3 {
            let o = origin.axis(i);
            let inv = inv_dir.axis(i);
            let mut ta = (self.min.axis(i) - o) * inv;
            let mut tb = (self.max.axis(i) - o) * inv;
            if ta.is_nan() || tb.is_nan() {
                // Ray parallel to and exactly on a slab face.
                ta = f64::NEG_INFINITY;
                tb = f64::INFINITY;
            }
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            // Widen slightly so edges shared by box and triangle are never missed.
            let pad = 1e-9 * (1.0 + ta.abs().max(tb.abs()).min(1e12));
            t0 = t0.max(ta - pad);
            t1 = t1.min(tb + pad);
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

#[derive(Debug, Clone)]
enum BvhNode {
    Leaf { bounds: Aabb, start: usize, len: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl BvhNode {
    fn bounds(&self) -> &Aabb {
        match self {
            BvhNode::Leaf { bounds, .. } | BvhNode::Inner { bounds, .. } => bounds,
        }
    }
}

/// Binary bounding volume hierarchy over triangle indices.
#[derive(Debug, Clone)]
struct Bvh {
    nodes: Vec<BvhNode>,
    order: Vec<usize>,
}

const LEAF_SIZE: usize = 4;

impl Bvh {
    fn build(tris: &[Triangle]) -> Self {
        let mut order: Vec<usize> = (0..tris.len()).collect();
        let centroids: Vec<Vec3> = tris.iter().map(Triangle::centroid).collect();
        let mut nodes = Vec::new();
        if !tris.is_empty() {
            Self::build_node(tris, &centroids, &mut order, 0, tris.len(), &mut nodes);
        }
        Bvh { nodes, order }
    }

    fn build_node(
        tris: &[Triangle],
        centroids: &[Vec3],
        order: &mut [usize],
        start: usize,
        end: usize,
        nodes: &mut Vec<BvhNode>,
    ) -> usize {
        let slice = &mut order[start..end];
        let bounds = slice.iter().fold(Aabb::empty(), |b, &i| b.union(tris[i].bounds()));
        let idx = nodes.len();
        if slice.len() <= LEAF_SIZE {
            nodes.push(BvhNode::Leaf { bounds, start, len: slice.len() });
            return idx;
        }
        let cb = slice.iter().fold(Aabb::empty(), |b, &i| b.grow(centroids[i]));
        let ext = cb.max - cb.min;
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        slice.sort_by(|&a, &b| {
            centroids[a].axis(axis).total_cmp(&centroids[b].axis(axis)).then(a.cmp(&b))
        });
        let mid = start + slice.len() / 2;
        nodes.push(BvhNode::Leaf { bounds, start, len: 0 });
        let left = Self::build_node(tris, centroids, order, start, mid, nodes);
        let right = Self::build_node(tris, centroids, order, mid, end, nodes);
        nodes[idx] = BvhNode::Inner { bounds, left, right };
        idx
    }

    fn traverse<F: FnMut(usize) -> Option<f64>>(&self, ray: &Ray, mut t_max: f64, mut visit: F) {
        if self.nodes.is_empty() {
            return;
        }
        let inv = Vec3::new(1.0 / ray.dir.x, 1.0 / ray.dir.y, 1.0 / ray.dir.z);
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if node.bounds().hit(ray.origin, inv, t_max).is_none() {
                continue;
            }
            match *node {
                BvhNode::Leaf { start, len, .. } => {
                    for &tri in &self.order[start..start + len] {
                        if let Some(t) = visit(tri) {
                            t_max = t_max.min(t);
                        }
                    }
                }
                BvhNode::Inner { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
    }
}

/// The static world: triangles, one material, and a spatial index.
#[derive(Debug, Clone)]
pub struct Scene {
    triangles: Vec<Triangle>,
    material: Material,
    bvh: Bvh,
    planes: Vec<PlaneGroup>,
    plane_of: Vec<usize>,
}

/// Coplanar triangles sharing one supporting plane.
#[derive(Debug, Clone)]
pub struct PlaneGroup {
    pub plane: Plane,
    pub triangles: Vec<usize>,
}

impl Scene {
    pub fn new(triangles: Vec<Triangle>, material: Material) -> Self {
        let bvh = Bvh::build(&triangles);
        let (planes, plane_of) = group_planes(&triangles);
        Scene { triangles, material, bvh, planes, plane_of }
    }

    pub fn empty(material: Material) -> Self {
        Scene::new(Vec::new(), material)
    }

    pub fn triangles(&self) -> &[Triangle] {
        &self.triangles
    }

    pub fn material(&self) -> &Material {
        &self.material
    }

    /// Supporting planes; each triangle belongs to exactly one group.
    pub fn planes(&self) -> &[PlaneGroup] {
        &self.planes
    }

    pub fn plane_of(&self, triangle: usize) -> usize {
        self.plane_of[triangle]
    }

    /// Nearest hit through the spatial index. Ties go to the lowest triangle id.
    pub fn intersect(&self, ray: &Ray) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        self.bvh.traverse(ray, f64::INFINITY, |i| {
            let (t, point) = ray_triangle_intersect(ray, &self.triangles[i])?;
            let better = match best {
                None => true,
                Some(b) => t < b.t || (t == b.t && i < b.triangle),
            };
            if better {
                best = Some(Hit { triangle: i, t, point });
            }
            Some(t)
        });
        best
    }

    /// Nearest hit by linear scan; reference for [`Scene::intersect`].
    pub fn intersect_brute_force(&self, ray: &Ray) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (i, tri) in self.triangles.iter().enumerate() {
            if let Some((t, point)) = ray_triangle_intersect(ray, tri) {
                if best.map_or(true, |b| t < b.t) {
                    best = Some(Hit { triangle: i, t, point });
                }
            }
        }
        best
    }

    /// Whether any triangle is hit with `HIT_EPSILON < t < t_max`.
    pub fn occluded(&self, ray: &Ray, t_max: f64) -> bool {
        let mut blocked = false;
        self.bvh.traverse(ray, t_max, |i| {
            if blocked {
                return Some(0.0);
            }
            match ray_triangle_intersect(ray, &self.triangles[i]) {
                Some((t, _)) if t < t_max => {
                    blocked = true;
                    Some(0.0)
                }
                _ => None,
            }
        });
        blocked
    }

    /// Axis-aligned bounds of all triangles, `None` for an empty scene.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        self.nodes_root().map(|b| (b.min, b.max))
    }

    fn nodes_root(&self) -> Option<Aabb> {
        self.bvh.nodes.first().map(|n| *n.bounds())
    }
}

fn group_planes(tris: &[Triangle]) -> (Vec<PlaneGroup>, Vec<usize>) {
    const NORMAL_TOL: f64 = 1e-9;
    const OFFSET_TOL: f64 = 1e-7;
    let mut groups: Vec<PlaneGroup> = Vec::new();
    let mut plane_of = Vec::with_capacity(tris.len());
    for (i, tri) in tris.iter().enumerate() {
        let mut p = Plane::of(tri);
        // Orientation is immaterial for double-sided surfaces; canonicalize it.
        let flip = {
            let n = p.normal;
            let lead = if n.x.abs() > 1e-12 {
                n.x
            } else if n.y.abs() > 1e-12 {
                n.y
            } else {
                n.z
            };
            lead < 0.0
        };
        if flip {
            p = Plane { normal: -p.normal, offset: -p.offset };
        }
        let found = groups.iter().position(|g| {
            (g.plane.normal - p.normal).norm() < NORMAL_TOL && (g.plane.offset - p.offset).abs() < OFFSET_TOL
        });
        match found {
            Some(g) => {
                groups[g].triangles.push(i);
                plane_of.push(g);
            }
            None => {
                plane_of.push(groups.len());
                groups.push(PlaneGroup { plane: p, triangles: vec![i] });
            }
        }
    }
    (groups, plane_of)
}

/// True iff the open segment `(a, b)`, shrunk by [`SEGMENT_SHRINK`] at both
/// ends, crosses no triangle. Symmetric in its arguments.
pub fn visible(scene: &Scene, a: Vec3, b: Vec3) -> bool {
    let (a, b) = if a.lex_cmp(b) == std::cmp::Ordering::Greater { (b, a) } else { (a, b) };
    let len = a.distance(b);
    if len <= 2.0 * SEGMENT_SHRINK {
        return true;
    }
    let ray = Ray::new(a, b - a);
    let origin = ray.at(SEGMENT_SHRINK);
    let shifted = Ray { origin, dir: ray.dir };
    // `occluded` already ignores t <= HIT_EPSILON.
    !scene.occluded(&shifted, len - 2.0 * SEGMENT_SHRINK)
}

/// Parses the ASCII triangle list: nine reals per line, `#` starts a comment.
pub fn parse_mesh(text: &str) -> Result<Vec<Triangle>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let vals: std::result::Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
        let vals = vals.map_err(|e| Error::Mesh { line: lineno + 1, msg: e.to_string() })?;
        if vals.len() != 9 {
            return Err(Error::Mesh { line: lineno + 1, msg: format!("expected 9 values, found {}", vals.len()) });
        }
        let tri = triangle_from_coords(&vals)
            .map_err(|e| Error::Mesh { line: lineno + 1, msg: e.to_string() })?;
        out.push(tri);
    }
    Ok(out)
}

pub fn load_mesh(path: &FsPath) -> Result<Vec<Triangle>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
    parse_mesh(&text)
}

pub fn write_mesh(tris: &[Triangle]) -> String {
    let mut s = String::new();
    for t in tris {
        let c = triangle_coords(t);
        let parts: Vec<String> = c.iter().map(|v| format!("{v}")).collect();
        s.push_str(&parts.join(" "));
        s.push('\n');
    }
    s
}

pub fn triangle_from_coords(c: &[f64]) -> Result<Triangle> {
    Triangle::new(Vec3::new(c[0], c[1], c[2]), Vec3::new(c[3], c[4], c[5]), Vec3::new(c[6], c[7], c[8]))
}

pub fn triangle_coords(t: &Triangle) -> [f64; 9] {
    [t.v0.x, t.v0.y, t.v0.z, t.v1.x, t.v1.y, t.v1.z, t.v2.x, t.v2.y, t.v2.z]
}

/// Two triangles covering the axis-aligned rectangle spanned by `corner`,
/// `corner + u` and `corner + v`.
pub fn quad(corner: Vec3, u: Vec3, v: Vec3) -> [Triangle; 2] {
    let a = corner;
    let b = corner + u;
    let c = corner + u + v;
    let d = corner + v;
    [
        Triangle::new(a, b, c).expect("non-degenerate quad"),
        Triangle::new(a, c, d).expect("non-degenerate quad"),
    ]
}

/// Closed axis-aligned box as 12 triangles.
pub fn cuboid(min: Vec3, max: Vec3) -> Vec<Triangle> {
    let d = max - min;
    let ex = Vec3::new(d.x, 0.0, 0.0);
    let ey = Vec3::new(0.0, d.y, 0.0);
    let ez = Vec3::new(0.0, 0.0, d.z);
    let mut v = Vec::with_capacity(12);
    v.extend(quad(min, ex, ey));
    v.extend(quad(min + ez, ex, ey));
    v.extend(quad(min, ex, ez));
    v.extend(quad(min + ey, ex, ez));
    v.extend(quad(min, ey, ez));
    v.extend(quad(min + ex, ey, ez));
    v
}
