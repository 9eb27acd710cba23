//! Deterministic specular multipath between two points.
//!
//! Paths are built with the image method: the source is mirrored across an
//! ordered sequence of supporting planes and the reflection points are
//! recovered by unfolding back from the destination. Every candidate is then
//! checked against the actual triangles and for occlusion, so the result is
//! the exact set of specular paths with at most `max_bounces` reflections.

use std::cmp::Ordering;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{reflect_dir, visible, Scene, Triangle, Vec3};

pub const SPEED_OF_LIGHT: f64 = 2.998e8;
pub const VACUUM_PERMITTIVITY: f64 = 8.854e-12;

/// Field-domain complex amplitude ratio.
pub type ComplexGain = Complex64;

/// Distance below which a bounce point is considered to touch another surface.
const CONTACT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    #[serde(rename = "eps_r")]
    pub eps_r_real: f64,
    /// Conductivity in S/m.
    pub sigma: f64,
}

impl Material {
    pub fn new(eps_r_real: f64, sigma: f64) -> Result<Self> {
        let m = Material { eps_r_real, sigma };
        m.check()?;
        Ok(m)
    }

    /// ITU-R P.2040 concrete at 26 GHz.
    pub fn itu_concrete() -> Self {
        Material { eps_r_real: 5.31, sigma: 0.4557 }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.eps_r_real >= 1.0) || !self.eps_r_real.is_finite() {
            return Err(Error::Invalid(format!("material.eps_r must be >= 1, got {}", self.eps_r_real)));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::Invalid(format!("material.sigma must be >= 0, got {}", self.sigma)));
        }
        Ok(())
    }

    /// Complex relative permittivity `eps_r - j sigma / (2 pi f eps0)`.
    pub fn complex_permittivity(&self, freq: f64) -> Complex64 {
        Complex64::new(self.eps_r_real, -self.sigma / (2.0 * PI * freq * VACUUM_PERMITTIVITY))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarization {
    /// Perpendicular (transverse electric).
    #[default]
    Te,
    /// Parallel (transverse magnetic).
    Tm,
    /// RMS of the TE and TM magnitudes, with the TE phase.
    Averaged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combining {
    /// `|sum g|^2`: phases interfere.
    #[default]
    Coherent,
    /// `sum |g|^2`.
    PowerSum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    /// Source, reflection points in order, destination.
    pub vertices: Vec<Vec3>,
    /// Triangle hit at each reflection.
    pub triangles: Vec<usize>,
    pub length: f64,
}

impl Path {
    pub fn bounces(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_los(&self) -> bool {
        self.triangles.is_empty()
    }

    fn reversed(&self) -> Path {
        let mut vertices = self.vertices.clone();
        vertices.reverse();
        let mut triangles = self.triangles.clone();
        triangles.reverse();
        Path { vertices, triangles, length: self.length }
    }
}

/// All specular paths from `src` to `dst` with at most `max_bounces`
/// reflections, LoS first, then by bounce count and length.
///
/// Endpoint order is canonicalized internally, so `find_paths(b, a)` returns
/// exactly the reversed paths of `find_paths(a, b)`.
pub fn find_paths(scene: &Scene, src: Vec3, dst: Vec3, max_bounces: usize) -> Vec<Path> {
    if src.lex_cmp(dst) == Ordering::Greater {
        find_paths_ordered(scene, dst, src, max_bounces).iter().map(Path::reversed).collect()
    } else {
        find_paths_ordered(scene, src, dst, max_bounces)
    }
}

fn find_paths_ordered(scene: &Scene, src: Vec3, dst: Vec3, max_bounces: usize) -> Vec<Path> {
    let mut out = Vec::new();
    if src.distance(dst) > 0.0 && visible(scene, src, dst) {
        out.push(Path { vertices: vec![src, dst], triangles: Vec::new(), length: src.distance(dst) });
    }
    let mut seq = Vec::with_capacity(max_bounces);
    let mut images = Vec::with_capacity(max_bounces + 1);
    images.push(src);
    for depth in 1..=max_bounces {
        enumerate(scene, src, dst, depth, &mut seq, &mut images, &mut out);
    }
    dedup(&mut out);
    out.sort_by(|a, b| {
        a.bounces()
            .cmp(&b.bounces())
            .then(a.length.total_cmp(&b.length))
            .then_with(|| a.triangles.cmp(&b.triangles))
    });
    out
}

fn enumerate(
    scene: &Scene,
    src: Vec3,
    dst: Vec3,
    depth: usize,
    seq: &mut Vec<usize>,
    images: &mut Vec<Vec3>,
    out: &mut Vec<Path>,
) {
    if seq.len() == depth {
        if let Some(p) = unfold(scene, src, dst, seq, images) {
            out.push(p);
        }
        return;
    }
    let last_image = *images.last().expect("images starts with src");
    for (pi, group) in scene.planes().iter().enumerate() {
        if seq.last() == Some(&pi) {
            continue;
        }
        let d = group.plane.signed_distance(last_image);
        if d.abs() < 1e-9 {
            continue;
        }
        // The last reflection plane must separate dst from the final image,
        // i.e. dst and the previous image lie on the same side.
        if seq.len() + 1 == depth && (group.plane.signed_distance(dst) * d) <= 0.0 {
            continue;
        }
        seq.push(pi);
        images.push(group.plane.mirror(last_image));
        enumerate(scene, src, dst, depth, seq, images, out);
        images.pop();
        seq.pop();
    }
}

fn unfold(scene: &Scene, src: Vec3, dst: Vec3, seq: &[usize], images: &[Vec3]) -> Option<Path> {
    let k = seq.len();
    let mut points = vec![Vec3::ZERO; k];
    let mut tris = vec![0usize; k];
    let mut target = dst;
    for i in (0..k).rev() {
        let group = &scene.planes()[seq[i]];
        let image = images[i + 1];
        let s = group.plane.line_param(target, image)?;
        if !(s > 1e-12 && s < 1.0 - 1e-12) {
            return None;
        }
        let p = target + (image - target) * s;
        let tri = group
            .triangles
            .iter()
            .copied()
            .find(|&t| scene.triangles()[t].contains_coplanar(p, 1e-9))?;
        points[i] = p;
        tris[i] = tri;
        target = p;
    }
    let mut vertices = Vec::with_capacity(k + 2);
    vertices.push(src);
    vertices.extend_from_slice(&points);
    vertices.push(dst);
    for w in vertices.windows(2) {
        if w[0].distance(w[1]) < 1e-9 || !visible(scene, w[0], w[1]) {
            return None;
        }
    }
    for (p, &t) in points.iter().zip(&tris) {
        if touches_other_surface(scene, *p, t) {
            return None;
        }
    }
    let length = vertices.windows(2).map(|w| w[0].distance(w[1])).sum();
    Some(Path { vertices, triangles: tris, length })
}

/// Bounce points sitting on a junction with a non-coplanar surface are edge
/// contacts rather than specular reflections.
fn touches_other_surface(scene: &Scene, p: Vec3, tri: usize) -> bool {
    let own = scene.plane_of(tri);
    scene
        .triangles()
        .iter()
        .enumerate()
        .any(|(i, t)| scene.plane_of(i) != own && point_triangle_distance(p, t) < CONTACT_TOLERANCE)
}

/// Euclidean distance from `p` to the closest point of `t`.
pub fn point_triangle_distance(p: Vec3, t: &Triangle) -> f64 {
    // Closest-point region test (Ericson, Real-Time Collision Detection 5.1.5).
    let (a, b, c) = (t.v0, t.v1, t.v2);
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(ap);
    let d2 = ac.dot(ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return p.distance(a);
    }
    let bp = p - b;
    let d3 = ab.dot(bp);
    let d4 = ac.dot(bp);
    if d3 >= 0.0 && d4 <= d3 {
        return p.distance(b);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return p.distance(a + ab * v);
    }
    let cp = p - c;
    let d5 = ab.dot(cp);
    let d6 = ac.dot(cp);
    if d6 >= 0.0 && d5 <= d6 {
        return p.distance(c);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return p.distance(a + ac * w);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return p.distance(b + (c - b) * w);
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    p.distance(a + ab * v + ac * w)
}

fn dedup(paths: &mut Vec<Path>) {
    let mut kept: Vec<Path> = Vec::with_capacity(paths.len());
    for p in paths.drain(..) {
        let dup = kept.iter().any(|q| {
            q.vertices.len() == p.vertices.len()
                && q.vertices.iter().zip(&p.vertices).all(|(a, b)| a.distance(*b) < 1e-9)
        });
        if !dup {
            kept.push(p);
        }
    }
    *paths = kept;
}

/// Checks a path against the scene without reusing the image construction:
/// vertices on their triangles, mirror law at each bounce, clear segments.
pub fn validate_path(scene: &Scene, path: &Path) -> std::result::Result<(), String> {
    let v = &path.vertices;
    if v.len() != path.triangles.len() + 2 {
        return Err(format!("{} vertices for {} bounces", v.len(), path.triangles.len()));
    }
    for (i, &t) in path.triangles.iter().enumerate() {
        let tri = scene.triangles().get(t).ok_or_else(|| format!("triangle {t} missing"))?;
        let p = v[i + 1];
        if tri.signed_distance(p).abs() > 1e-6 || !tri.contains_coplanar(p, 1e-6) {
            return Err(format!("bounce {i} not on triangle {t}"));
        }
        let d_in = (p - v[i]).normalized();
        let d_out = (v[i + 2] - p).normalized();
        let r = reflect_dir(d_in, tri.normal());
        let angle = r.dot(d_out).clamp(-1.0, 1.0).acos();
        if angle > 1e-6 {
            return Err(format!("bounce {i} violates the mirror law by {angle:e} rad"));
        }
        if touches_other_surface(scene, p, t) {
            return Err(format!("bounce {i} touches another surface"));
        }
    }
    for (i, w) in v.windows(2).enumerate() {
        if !visible(scene, w[0], w[1]) {
            return Err(format!("segment {i} is occluded"));
        }
    }
    let len: f64 = v.windows(2).map(|w| w[0].distance(w[1])).sum();
    if (len - path.length).abs() > 1e-9 * len.max(1.0) {
        return Err(format!("length {} != segment sum {len}", path.length));
    }
    Ok(())
}

/// Fresnel reflection coefficient for a wave arriving from free space.
pub fn fresnel_coeff(cos_incidence: f64, material: &Material, freq: f64, polarization: Polarization) -> Result<ComplexGain> {
    if !(cos_incidence > 0.0) || cos_incidence > 1.0 + 1e-9 {
        return Err(Error::domain(format!("cos(incidence) must lie in (0, 1], got {cos_incidence}")));
    }
    if !(freq > 0.0) {
        return Err(Error::domain(format!("frequency must be positive, got {freq}")));
    }
    let cos = cos_incidence.min(1.0);
    let eps = material.complex_permittivity(freq);
    let sin2 = 1.0 - cos * cos;
    let root = (eps - sin2).sqrt();
    let te = (cos - root) / (cos + root);
    let tm = (eps * cos - root) / (eps * cos + root);
    Ok(match polarization {
        Polarization::Te => te,
        Polarization::Tm => tm,
        Polarization::Averaged => {
            let mag = ((te.norm_sqr() + tm.norm_sqr()) / 2.0).sqrt();
            Complex64::from_polar(mag, te.arg())
        }
    })
}

pub fn wavelength(freq: f64) -> f64 {
    SPEED_OF_LIGHT / freq
}

/// Free-space spreading and phase times the product of reflection coefficients.
pub fn path_gain(path: &Path, scene: &Scene, freq: f64) -> Result<ComplexGain> {
    path_gain_with(path, scene, freq, Polarization::Te)
}

pub fn path_gain_with(path: &Path, scene: &Scene, freq: f64, polarization: Polarization) -> Result<ComplexGain> {
    if !(path.length > 0.0) {
        return Err(Error::domain("zero-length path"));
    }
    let lambda = wavelength(freq);
    let mut g = Complex64::from_polar(lambda / (4.0 * PI * path.length), -2.0 * PI * path.length / lambda);
    for (i, &t) in path.triangles.iter().enumerate() {
        let tri = &scene.triangles()[t];
        let d_in = (path.vertices[i + 1] - path.vertices[i]).normalized();
        let cos = d_in.dot(tri.normal()).abs();
        g *= fresnel_coeff(cos, scene.material(), freq, polarization)?;
    }
    Ok(g)
}

/// Radio-side knobs of the multipath model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkModel {
    pub freq: f64,
    pub max_bounces: usize,
    pub combining: Combining,
    pub polarization: Polarization,
}

impl LinkModel {
    pub fn new(freq: f64, max_bounces: usize, combining: Combining) -> Self {
        LinkModel { freq, max_bounces, combining, polarization: Polarization::Te }
    }

    /// Linear power gain between `a` and `b`; 0 if no path exists.
    pub fn power_gain(&self, scene: &Scene, a: Vec3, b: Vec3) -> f64 {
        let paths = find_paths(scene, a, b, self.max_bounces);
        let gains: Vec<ComplexGain> = paths
            .iter()
            .map(|p| path_gain_with(p, scene, self.freq, self.polarization).expect("validated paths have length"))
            .collect();
        combine(&gains, self.combining)
    }
}

pub fn combine(gains: &[ComplexGain], combining: Combining) -> f64 {
    match combining {
        Combining::Coherent => gains.iter().sum::<Complex64>().norm_sqr(),
        Combining::PowerSum => gains.iter().map(|g| g.norm_sqr()).sum(),
    }
}

pub fn link_power_gain(scene: &Scene, a: Vec3, b: Vec3, freq: f64, max_bounces: usize, combining: Combining) -> f64 {
    LinkModel::new(freq, max_bounces, combining).power_gain(scene, a, b)
}

pub fn to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{cuboid, quad};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const F26: f64 = 26e9;

    fn floor_scene() -> Scene {
        let big = 1000.0;
        Scene::new(
            quad(Vec3::new(-big, -big, 0.0), Vec3::new(2.0 * big, 0.0, 0.0), Vec3::new(0.0, 2.0 * big, 0.0)).to_vec(),
            Material::itu_concrete(),
        )
    }

    #[test]
    fn empty_scene_has_only_los() {
        let s = Scene::empty(Material::itu_concrete());
        let a = Vec3::new(1.0, 2.0, 3.0);
        let b = Vec3::new(-4.0, 0.5, 2.0);
        let p = find_paths(&s, a, b, 2);
        assert_eq!(p.len(), 1);
        assert!(p[0].is_los());
        assert!((p[0].length - a.distance(b)).abs() < 1e-12);
    }

    #[test]
    fn ground_bounce_image_oracle() {
        let s = floor_scene();
        let src = Vec3::new(0.0, 0.0, 1.0);
        let dst = Vec3::new(4.0, 0.0, 1.0);
        // Image of src across z=0 is (0,0,-1); |(4,0,2)| = sqrt(20).
        let p = find_paths(&s, src, dst, 1);
        assert_eq!(p.len(), 2);
        assert!((p[0].length - 4.0).abs() < 1e-12);
        assert!((p[1].length - 20f64.sqrt()).abs() < 1e-12);
        assert!(p[1].vertices[1].distance(Vec3::new(2.0, 0.0, 0.0)) < 1e-12);
        for path in &p {
            validate_path(&s, path).unwrap();
        }
    }

    #[test]
    fn occluder_blocks_both_paths() {
        let big = 1000.0;
        let mut tris = floor_scene().triangles().to_vec();
        tris.extend(quad(Vec3::new(2.0, -big, 0.0), Vec3::new(0.0, 2.0 * big, 0.0), Vec3::new(0.0, 0.0, 2.0)));
        let s = Scene::new(tris, Material::itu_concrete());
        let p = find_paths(&s, Vec3::new(0.0, 0.0, 1.0), Vec3::new(4.0, 0.0, 1.0), 1);
        assert!(p.is_empty(), "{p:?}");
    }

    #[test]
    fn fresnel_examples() {
        let pec = Material { eps_r_real: 1.0, sigma: 1e9 };
        let g = fresnel_coeff(1.0, &pec, F26, Polarization::Te).unwrap();
        assert!((g.norm() - 1.0).abs() < 1e-2);

        let concrete = Material::itu_concrete();
        let eps = concrete.complex_permittivity(F26);
        assert!((eps.re - 5.31).abs() < 1e-12);
        assert!((eps.im + 0.3151).abs() < 1e-4);
        // Hand oracle: (1 - sqrt(eps)) / (1 + sqrt(eps)).
        let root = eps.sqrt();
        let oracle = (Complex64::new(1.0, 0.0) - root) / (Complex64::new(1.0, 0.0) + root);
        let g = fresnel_coeff(1.0, &concrete, F26, Polarization::Te).unwrap();
        assert!((g - oracle).norm() < 1e-12);
        assert!((g.norm() - 0.395).abs() < 0.005, "{}", g.norm());

        let air = Material { eps_r_real: 1.0, sigma: 0.0 };
        assert!(fresnel_coeff(0.3, &air, F26, Polarization::Te).unwrap().norm() < 1e-12);
        assert!(fresnel_coeff(0.3, &air, F26, Polarization::Tm).unwrap().norm() < 1e-12);

        assert!(fresnel_coeff(0.0, &concrete, F26, Polarization::Te).is_err());
        assert!(fresnel_coeff(-0.2, &concrete, F26, Polarization::Te).is_err());
    }

    #[test]
    fn friis_oracles() {
        let s = Scene::empty(Material::itu_concrete());
        let lambda = wavelength(F26);
        assert!((lambda - 0.011530).abs() < 1e-6);
        let p1 = Path { vertices: vec![Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0)], triangles: vec![], length: 1.0 };
        let g1 = path_gain(&p1, &s, F26).unwrap().norm_sqr();
        assert!((g1 - 8.42e-7).abs() < 0.01e-7);
        assert!((to_db(g1) + 60.7).abs() < 0.05);
        let p2 = Path { vertices: vec![Vec3::ZERO, Vec3::new(2.0, 0.0, 0.0)], triangles: vec![], length: 2.0 };
        let g2 = path_gain(&p2, &s, F26).unwrap().norm_sqr();
        assert!((to_db(g1) - to_db(g2) - 20.0 * 2f64.log10()).abs() < 1e-9);
        let zero = Path { vertices: vec![Vec3::ZERO, Vec3::ZERO], triangles: vec![], length: 0.0 };
        assert!(path_gain(&zero, &s, F26).is_err());
    }

    #[test]
    fn ground_bounce_power_matches_friis_times_fresnel() {
        let s = floor_scene();
        let p = find_paths(&s, Vec3::new(0.0, 0.0, 1.0), Vec3::new(4.0, 0.0, 1.0), 1);
        let bounce = &p[1];
        let lambda = wavelength(F26);
        // Each leg rises 1 m over sqrt(5) m.
        let cos = 1.0 / 5f64.sqrt();
        let gamma = fresnel_coeff(cos, s.material(), F26, Polarization::Te).unwrap();
        let oracle = (lambda / (4.0 * PI * 20f64.sqrt())).powi(2) * gamma.norm_sqr();
        let got = path_gain(bounce, &s, F26).unwrap().norm_sqr();
        assert!((to_db(got) - to_db(oracle)).abs() < 1e-9);

        // The 4.4721 m / |G| = 0.395 composition quoted for normal incidence.
        let normal = (lambda / (4.0 * PI * 4.4721)).powi(2) * 0.395f64.powi(2);
        assert!((to_db(normal) + 81.8).abs() < 0.1, "{}", to_db(normal));
    }

    #[test]
    fn combining_modes() {
        let g = Complex64::new(0.3, 0.1);
        assert!((combine(&[g], Combining::Coherent) - g.norm_sqr()).abs() < 1e-15);
        assert!((combine(&[g], Combining::PowerSum) - g.norm_sqr()).abs() < 1e-15);
        assert!(combine(&[g, -g], Combining::Coherent) < 1e-30);
        assert!((combine(&[g, -g], Combining::PowerSum) - 2.0 * g.norm_sqr()).abs() < 1e-15);

        let s = floor_scene();
        let (a, b) = (Vec3::new(0.0, 0.0, 1.0), Vec3::new(4.0, 0.0, 1.0));
        let paths = find_paths(&s, a, b, 1);
        let g1 = path_gain(&paths[0], &s, F26).unwrap().norm();
        let g2 = path_gain(&paths[1], &s, F26).unwrap().norm();
        let coh = link_power_gain(&s, a, b, F26, 1, Combining::Coherent);
        assert!(coh >= (g1 - g2).powi(2) * (1.0 - 1e-12) && coh <= (g1 + g2).powi(2) * (1.0 + 1e-12));
        assert_eq!(link_power_gain(&s, a, Vec3::new(0.0, 0.0, -1.0), F26, 0, Combining::Coherent), 0.0);
    }

    fn box_room(rng: &mut ChaCha8Rng) -> Scene {
        // A closed 10x8x4 room with a couple of random pillars.
        let mut tris = Vec::new();
        let (lx, ly, lz) = (10.0, 8.0, 4.0);
        tris.extend(quad(Vec3::ZERO, Vec3::new(lx, 0.0, 0.0), Vec3::new(0.0, ly, 0.0)));
        tris.extend(quad(Vec3::new(0.0, 0.0, lz), Vec3::new(lx, 0.0, 0.0), Vec3::new(0.0, ly, 0.0)));
        tris.extend(quad(Vec3::ZERO, Vec3::new(lx, 0.0, 0.0), Vec3::new(0.0, 0.0, lz)));
        tris.extend(quad(Vec3::new(0.0, ly, 0.0), Vec3::new(lx, 0.0, 0.0), Vec3::new(0.0, 0.0, lz)));
        tris.extend(quad(Vec3::ZERO, Vec3::new(0.0, ly, 0.0), Vec3::new(0.0, 0.0, lz)));
        tris.extend(quad(Vec3::new(lx, 0.0, 0.0), Vec3::new(0.0, ly, 0.0), Vec3::new(0.0, 0.0, lz)));
        for _ in 0..2 {
            let x = rng.gen_range(2.0..8.0);
            let y = rng.gen_range(2.0..6.0);
            tris.extend(cuboid(Vec3::new(x, y, 0.0), Vec3::new(x + 0.6, y + 0.6, 2.5)));
        }
        Scene::new(tris, Material::itu_concrete())
    }

    fn room_point(rng: &mut ChaCha8Rng, scene: &Scene) -> Vec3 {
        loop {
            let p = Vec3::new(rng.gen_range(0.3..9.7), rng.gen_range(0.3..7.7), rng.gen_range(0.3..3.7));
            // Reject points inside the pillars: a ray upward would hit a pillar top first.
            let up = crate::geometry::Ray::new(p, Vec3::new(0.0, 0.0, 1.0));
            match scene.intersect(&up) {
                Some(h) if (h.point.z - 4.0).abs() > 1e-9 => continue,
                _ => return p,
            }
        }
    }

    #[test]
    fn room_paths_validate_and_are_reciprocal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..6 {
            let scene = box_room(&mut rng);
            let a = room_point(&mut rng, &scene);
            let b = room_point(&mut rng, &scene);
            let fwd = find_paths(&scene, a, b, 2);
            let rev = find_paths(&scene, b, a, 2);
            assert!(fwd.len() > 3);
            assert_eq!(fwd.len(), rev.len());
            for (p, q) in fwd.iter().zip(&rev) {
                validate_path(&scene, p).unwrap();
                validate_path(&scene, q).unwrap();
                assert_eq!(p.triangles.iter().rev().copied().collect::<Vec<_>>(), q.triangles);
                assert_eq!(p.length, q.length);
            }
            for mode in [Combining::Coherent, Combining::PowerSum] {
                let g_ab = link_power_gain(&scene, a, b, F26, 2, mode);
                let g_ba = link_power_gain(&scene, b, a, F26, 2, mode);
                assert!((g_ab - g_ba).abs() <= 1e-12 * g_ab.abs());
                let coherent = link_power_gain(&scene, a, b, F26, 2, Combining::Coherent);
                let amp_sum: f64 = fwd.iter().map(|p| path_gain(p, &scene, F26).unwrap().norm()).sum();
                assert!(coherent <= amp_sum * amp_sum * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn one_bounce_paths_are_fermat_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let scene = box_room(&mut rng);
        for _ in 0..5 {
            let a = room_point(&mut rng, &scene);
            let b = room_point(&mut rng, &scene);
            for p in find_paths(&scene, a, b, 1).iter().filter(|p| p.bounces() == 1) {
                let n = scene.triangles()[p.triangles[0]].normal();
                let helper = if n.x.abs() < 0.9 { Vec3::new(1.0, 0.0, 0.0) } else { Vec3::new(0.0, 1.0, 0.0) };
                let e1 = n.cross(helper).normalized();
                let e2 = n.cross(e1);
                let q = p.vertices[1];
                for dir in [e1, -e1, e2, -e2] {
                    let moved = q + dir * 1e-3;
                    let len = a.distance(moved) + moved.distance(b);
                    assert!(len - p.length >= -1e-8);
                }
            }
        }
    }

    #[test]
    fn more_bounces_never_remove_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let scene = box_room(&mut rng);
        let a = room_point(&mut rng, &scene);
        let b = room_point(&mut rng, &scene);
        let mut prev: Vec<Path> = Vec::new();
        for k in 0..=3 {
            let cur = find_paths(&scene, a, b, k);
            for p in &prev {
                assert!(cur.iter().any(|q| q.triangles == p.triangles && (q.length - p.length).abs() < 1e-12));
            }
            for p in &cur {
                validate_path(&scene, p).unwrap();
            }
            prev = cur;
        }
        assert!(prev.len() > 20);
    }

    proptest! {
        #[test]
        fn reflection_magnitude_bounded(cos in 1e-6f64..=1.0, eps in 1.0f64..20.0, sigma in 0.0f64..100.0,
                                        freq in 1e8f64..1e11) {
            let m = Material { eps_r_real: eps, sigma };
            for pol in [Polarization::Te, Polarization::Tm, Polarization::Averaged] {
                let g = fresnel_coeff(cos, &m, freq, pol).unwrap();
                prop_assert!(g.norm() <= 1.0 + 1e-12);
            }
        }
    }
}
