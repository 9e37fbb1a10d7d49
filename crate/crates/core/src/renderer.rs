//! Synthetic portrait renderer: orthographic front view of a unit-ish sphere
//! or a heightfield "bust", Lambertian + Phong shading, ray-traced visibility
//! (convexity test or heightfield march, plus an optional planar occluder).
//!
//! Environment renders are weighted sums over a one-light-at-a-time basis, so
//! a scene is shaded once per light direction and re-lit for free. Axes:
//! screen x right, y up, camera looks along −z.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envmap::{self, EnvironmentMap};
use crate::error::{Error, Result};
use crate::image::{ImageBuffer, Mask};
use crate::rng;
use crate::scalar::Real;
use crate::vec3;

/// Subject bounding radius in screen units (screen spans [-1, 1]).
const SUBJECT_RADIUS: f64 = 0.9;
/// Default environment-integration grid height (512 light directions).
pub const DEFAULT_BASIS_HEIGHT: usize = 16;

const HEIGHTFIELD_N: usize = 192;
// Shadow-march tuning for the heightfield: step/start/ceiling in screen
// units, plus the depth slack that forgives grazing self-intersections.
const MARCH_START: f64 = 0.04;
const MARCH_STEP: f64 = 0.03;
const MARCH_TMAX: f64 = 2.2;
const MARCH_SLACK: f64 = 0.015;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryKind {
    Sphere,
    Bust,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlbedoPattern {
    Flat {
        rgb: [f64; 3],
    },
    TwoTone {
        skin: [f64; 3],
        clothing: [f64; 3],
    },
    Noise {
        base: [f64; 3],
        amplitude: f64,
        scale: f64,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OccluderSpec {
    pub center: [f64; 3],
    pub normal: [f64; 3],
    pub half_width: f64,
    pub half_height: f64,
}

fn default_specular_exponent() -> f64 {
    16.0
}

fn default_skin_fraction() -> f64 {
    0.4
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneSpec {
    pub geometry: GeometryKind,
    pub albedo: AlbedoPattern,
    #[serde(default)]
    pub specular_strength: f64,
    #[serde(default = "default_specular_exponent")]
    pub specular_exponent: f64,
    #[serde(default = "default_skin_fraction")]
    pub skin_fraction: f64,
    #[serde(default)]
    pub occluder: Option<OccluderSpec>,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let check_rgb = |rgb: &[f64; 3], what: &str| -> Result<()> {
            for c in rgb {
                if !c.is_finite() || !(0.0..=1.0).contains(c) {
                    return Err(Error::invalid(format!("{} albedo must be in [0,1]", what)));
                }
            }
            Ok(())
        };
        match &self.albedo {
            AlbedoPattern::Flat { rgb } => check_rgb(rgb, "flat")?,
            AlbedoPattern::TwoTone { skin, clothing } => {
                check_rgb(skin, "skin")?;
                check_rgb(clothing, "clothing")?;
            }
            AlbedoPattern::Noise { base, amplitude, scale } => {
                check_rgb(base, "noise base")?;
                if !amplitude.is_finite() || !(0.0..=1.0).contains(amplitude) {
                    return Err(Error::invalid("noise amplitude must be in [0,1]"));
                }
                if !scale.is_finite() || *scale <= 0.0 {
                    return Err(Error::invalid("noise scale must be > 0"));
                }
            }
        }
        if !self.specular_strength.is_finite() || self.specular_strength < 0.0 {
            return Err(Error::invalid("specular strength must be >= 0"));
        }
        if !self.specular_exponent.is_finite() || self.specular_exponent < 1.0 {
            return Err(Error::invalid("specular exponent must be >= 1"));
        }
        if !(self.skin_fraction > 0.0 && self.skin_fraction < 1.0) {
            return Err(Error::invalid("skin fraction must be in (0,1)"));
        }
        if let Some(occ) = &self.occluder {
            if vec3::length(occ.normal) == 0.0 {
                return Err(Error::invalid("occluder normal must be nonzero"));
            }
            if !(occ.half_width > 0.0 && occ.half_height > 0.0) {
                return Err(Error::invalid("occluder extents must be > 0"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Heightfield<T> {
    n: usize,
    half_extent: T,
    data: Vec<T>,
    max: T,
}

impl<T: Real> Heightfield<T> {
    fn sample(&self, x: T, y: T) -> T {
        let he = self.half_extent;
        if x.abs() >= he || y.abs() >= he {
            return T::zero();
        }
        let nf = T::of_usize(self.n - 1);
        let gx = (x + he) / (he + he) * nf;
        let gy = (y + he) / (he + he) * nf;
        let ix = gx.floor().as_f64() as usize;
        let iy = gy.floor().as_f64() as usize;
        let ix1 = (ix + 1).min(self.n - 1);
        let iy1 = (iy + 1).min(self.n - 1);
        let fx = gx - T::of_usize(ix);
        let fy = gy - T::of_usize(iy);
        let at = |i: usize, j: usize| self.data[j * self.n + i];
        let top = at(ix, iy) * (T::one() - fx) + at(ix1, iy) * fx;
        let bot = at(ix, iy1) * (T::one() - fx) + at(ix1, iy1) * fx;
        top * (T::one() - fy) + bot * fy
    }

    fn normal(&self, x: T, y: T) -> [T; 3] {
        let d = (self.half_extent + self.half_extent) / T::of_usize(self.n - 1);
        let dzdx = (self.sample(x + d, y) - self.sample(x - d, y)) / (d + d);
        let dzdy = (self.sample(x, y + d) - self.sample(x, y - d)) / (d + d);
        vec3::normalize([-dzdx, -dzdy, T::one()]).expect("gradient is finite")
    }
}

#[derive(Clone, Debug)]
struct Occluder<T> {
    center: [T; 3],
    normal: [T; 3],
    u: [T; 3],
    v: [T; 3],
    half_u: T,
    half_v: T,
}

impl<T: Real> Occluder<T> {
    /// True when the ray p + t·dir (t > ε) passes through the card.
    fn blocks(&self, p: [T; 3], dir: [T; 3]) -> bool {
        let denom = vec3::dot(dir, self.normal);
        if denom.abs() < T::of(1e-12) {
            return false;
        }
        let t = vec3::dot(vec3::sub(self.center, p), self.normal) / denom;
        if t <= T::of(1e-4) {
            return false;
        }
        let q = vec3::sub(vec3::add(p, vec3::scale(dir, t)), self.center);
        vec3::dot(q, self.u).abs() <= self.half_u && vec3::dot(q, self.v).abs() <= self.half_v
    }
}

#[derive(Clone, Debug)]
enum AlbedoEval<T> {
    Flat([T; 3]),
    TwoTone { skin: [T; 3], clothing: [T; 3] },
    Noise { base: [T; 3], amplitude: T, scale: T, seed: u64 },
}

#[derive(Clone, Debug)]
pub struct Scene<T> {
    kind: GeometryKind,
    radius: T,
    heightfield: Option<Heightfield<T>>,
    albedo: AlbedoEval<T>,
    k_s: T,
    s_exp: T,
    /// Screen-space y above which surface points count as skin.
    skin_cut: T,
    occluder: Option<Occluder<T>>,
}

/// Fraction of a disk of radius r lying above the chord y = c.
fn disk_fraction_above(c: f64, r: f64) -> f64 {
    let u = (c / r).clamp(-1.0, 1.0);
    (u.acos() - u * (1.0 - u * u).sqrt()) / std::f64::consts::PI
}

fn solve_skin_cut(fraction: f64, r: f64) -> f64 {
    let (mut lo, mut hi) = (-r, r);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if disk_fraction_above(mid, r) > fraction {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Lattice value noise in [0,1], two octaves, fully determined by the seed.
pub(crate) fn value_noise(p: [f64; 3], seed: u64) -> f64 {
    fn lattice(ix: i64, iy: i64, iz: i64, seed: u64) -> f64 {
        let mut h = seed ^ 0x51_7c_c1_b7_27_22_0a_95;
        for v in [ix, iy, iz] {
            h ^= v as u64;
            h = h.wrapping_mul(0x100000001b3);
            h ^= h >> 29;
        }
        (h >> 11) as f64 / (1u64 << 53) as f64
    }
    fn octave(p: [f64; 3], seed: u64) -> f64 {
        let base = [p[0].floor(), p[1].floor(), p[2].floor()];
        let f = [p[0] - base[0], p[1] - base[1], p[2] - base[2]];
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        let (sx, sy, sz) = (smooth(f[0]), smooth(f[1]), smooth(f[2]));
        let mut acc = 0.0;
        for dz in 0..2 {
            for dy in 0..2 {
                for dx in 0..2 {
                    let w = (if dx == 0 { 1.0 - sx } else { sx })
                        * (if dy == 0 { 1.0 - sy } else { sy })
                        * (if dz == 0 { 1.0 - sz } else { sz });
                    acc += w
                        * lattice(
                            base[0] as i64 + dx,
                            base[1] as i64 + dy,
                            base[2] as i64 + dz,
                            seed,
                        );
                }
            }
        }
        acc
    }
    (octave(p, seed) + 0.5 * octave([p[0] * 2.0, p[1] * 2.0, p[2] * 2.0], seed ^ 0xabcd)) / 1.5
}

fn build_heightfield<T: Real>(seed: u64) -> Heightfield<T> {
    let r = SUBJECT_RADIUS;
    let mut rng = rng::stream(seed, "bust", 0);
    let mut jitter = |scale: f64| 1.0 + rng.gen_range(-scale..scale);

    // Feature set: (x, y, sigma, amplitude), all in units of the disk radius.
    // Jitter keeps every seed a distinct face without losing the layout.
    let features: Vec<(f64, f64, f64, f64)> = vec![
        (0.0, -0.05 * jitter(0.4), 0.12 * jitter(0.25), 0.22 * jitter(0.25)), // nose
        (-0.30 * jitter(0.2), 0.25 * jitter(0.2), 0.15 * jitter(0.25), 0.12 * jitter(0.3)), // cheek
        (0.30 * jitter(0.2), 0.25 * jitter(0.2), 0.15 * jitter(0.25), 0.12 * jitter(0.3)), // cheek
        (0.0, -0.55 * jitter(0.15), 0.17 * jitter(0.2), 0.10 * jitter(0.3)), // chin
        (0.0, 0.52 * jitter(0.15), 0.30 * jitter(0.2), 0.08 * jitter(0.3)),  // forehead
    ];
    let dome_height = 0.45 * r;

    let n = HEIGHTFIELD_N;
    let he = 1.0;
    let mut data = Vec::with_capacity(n * n);
    let mut max = 0.0f64;
    for j in 0..n {
        let y = -he + 2.0 * he * j as f64 / (n - 1) as f64;
        for i in 0..n {
            let x = -he + 2.0 * he * i as f64 / (n - 1) as f64;
            let rho2 = (x * x + y * y) / (r * r);
            let dome = if rho2 < 1.0 { dome_height * (1.0 - rho2).sqrt() } else { 0.0 };
            let mut h = dome;
            if dome > 0.0 {
                // Features scale with the dome so they vanish at the rim.
                let rim = dome / dome_height;
                for (fx, fy, sigma, amp) in &features {
                    let dx = x / r - fx;
                    let dy = y / r - fy;
                    let d2 = dx * dx + dy * dy;
                    h += amp * r * (-d2 / (2.0 * sigma * sigma)).exp() * rim;
                }
            }
            max = max.max(h);
            data.push(T::of(h));
        }
    }
    Heightfield { n, half_extent: T::of(he), data, max: T::of(max) }
}

pub fn build_scene<T: Real>(spec: &SceneSpec, seed: u64) -> Result<Scene<T>> {
    spec.validate()?;
    let albedo = match &spec.albedo {
        AlbedoPattern::Flat { rgb } => AlbedoEval::Flat(rgb.map(T::of)),
        AlbedoPattern::TwoTone { skin, clothing } => AlbedoEval::TwoTone {
            skin: skin.map(T::of),
            clothing: clothing.map(T::of),
        },
        AlbedoPattern::Noise { base, amplitude, scale } => AlbedoEval::Noise {
            base: base.map(T::of),
            amplitude: T::of(*amplitude),
            scale: T::of(*scale),
            seed: rng::derive_seed(seed, "albedo-noise", 0),
        },
    };
    let heightfield = match spec.geometry {
        GeometryKind::Sphere => None,
        GeometryKind::Bust => Some(build_heightfield::<T>(seed)),
    };
    let occluder = spec.occluder.as_ref().map(|o| {
        let normal = vec3::normalize(o.normal.map(T::of)).expect("validated nonzero");
        // half_width spans the horizontal card axis, half_height the vertical.
        let up = if normal[1].abs() > T::of(0.99) {
            [T::zero(), T::zero(), T::one()]
        } else {
            [T::zero(), T::one(), T::zero()]
        };
        let u = vec3::normalize(vec3::cross(up, normal)).expect("up not parallel");
        let v = vec3::cross(normal, u);
        Occluder {
            center: o.center.map(T::of),
            normal,
            u,
            v,
            half_u: T::of(o.half_width),
            half_v: T::of(o.half_height),
        }
    });
    Ok(Scene {
        kind: spec.geometry,
        radius: T::of(SUBJECT_RADIUS),
        heightfield,
        albedo,
        k_s: T::of(spec.specular_strength),
        s_exp: T::of(spec.specular_exponent),
        skin_cut: T::of(solve_skin_cut(spec.skin_fraction, SUBJECT_RADIUS)),
        occluder,
    })
}

impl<T: Real> Scene<T> {
    pub fn bounding_radius(&self) -> T {
        self.radius
    }

    /// Silhouette test in screen coordinates.
    fn inside(&self, x: T, y: T) -> bool {
        x * x + y * y < self.radius * self.radius
    }

    fn surface(&self, x: T, y: T) -> ([T; 3], [T; 3]) {
        match self.kind {
            GeometryKind::Sphere => {
                let z2 = self.radius * self.radius - x * x - y * y;
                let z = z2.max(T::zero()).sqrt();
                let p = [x, y, z];
                (p, vec3::scale(p, T::one() / self.radius))
            }
            GeometryKind::Bust => {
                let hf = self.heightfield.as_ref().expect("bust has heightfield");
                ([x, y, hf.sample(x, y)], hf.normal(x, y))
            }
        }
    }

    fn albedo_at(&self, p: [T; 3]) -> [T; 3] {
        match &self.albedo {
            AlbedoEval::Flat(rgb) => *rgb,
            AlbedoEval::TwoTone { skin, clothing } => {
                if p[1] > self.skin_cut {
                    *skin
                } else {
                    *clothing
                }
            }
            AlbedoEval::Noise { base, amplitude, scale, seed } => {
                let q = [
                    (p[0] * *scale).as_f64(),
                    (p[1] * *scale).as_f64(),
                    (p[2] * *scale).as_f64(),
                ];
                let v = T::of(value_noise(q, *seed));
                let m = T::one() + *amplitude * (v + v - T::one());
                [
                    (base[0] * m).clamp01(),
                    (base[1] * m).clamp01(),
                    (base[2] * m).clamp01(),
                ]
            }
        }
    }

    fn is_skin(&self, p: [T; 3]) -> bool {
        p[1] > self.skin_cut
    }

    /// Binary visibility toward a light direction: convexity test for the
    /// sphere, heightfield march for the bust, then the occluder card.
    fn visible(&self, p: [T; 3], n: [T; 3], dir: [T; 3]) -> bool {
        if vec3::dot(n, dir) <= T::zero() {
            return false;
        }
        if self.kind == GeometryKind::Bust && !self.march_clear(p, dir) {
            return false;
        }
        if let Some(occ) = &self.occluder {
            if occ.blocks(p, dir) {
                return false;
            }
        }
        true
    }

    fn march_clear(&self, p: [T; 3], dir: [T; 3]) -> bool {
        let hf = self.heightfield.as_ref().expect("bust has heightfield");
        let slack = T::of(MARCH_SLACK);
        let step = T::of(MARCH_STEP);
        let tmax = T::of(MARCH_TMAX);
        let r2 = self.radius * self.radius;
        let mut t = T::of(MARCH_START);
        while t < tmax {
            let q = vec3::add(p, vec3::scale(dir, t));
            if q[2] > hf.max && dir[2] > T::zero() {
                return true;
            }
            let rho2 = q[0] * q[0] + q[1] * q[1];
            if rho2 > r2 {
                // Heading away from the disk means no further hits.
                if q[0] * dir[0] + q[1] * dir[1] > T::zero() {
                    return true;
                }
            } else if q[2] < hf.sample(q[0], q[1]) - slack {
                return false;
            }
            t += step;
        }
        true
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Surf<T> {
    pub(crate) point: [T; 3],
    pub(crate) normal: [T; 3],
    pub(crate) albedo: [T; 3],
    pub(crate) skin: bool,
}

pub(crate) struct GBuffer<T> {
    pub(crate) surf: Vec<Option<Surf<T>>>,
    pub(crate) alpha: Vec<T>,
}

/// 2×2 subsample coverage; the shaded point is the surface at the mean of
/// the covered subsample positions (convex silhouettes keep it inside).
pub(crate) fn gbuffer<T: Real>(scene: &Scene<T>, width: usize, height: usize) -> GBuffer<T> {
    let mut surf = Vec::with_capacity(width * height);
    let mut alpha = Vec::with_capacity(width * height);
    let to_screen_x = |sx: f64| T::of(2.0 * sx / width as f64 - 1.0);
    let to_screen_y = |sy: f64| T::of(1.0 - 2.0 * sy / height as f64);
    for py in 0..height {
        for px in 0..width {
            let mut hits = 0usize;
            let mut mx = 0.0f64;
            let mut my = 0.0f64;
            for (ox, oy) in [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)] {
                let sx = px as f64 + ox;
                let sy = py as f64 + oy;
                if scene.inside(to_screen_x(sx), to_screen_y(sy)) {
                    hits += 1;
                    mx += sx;
                    my += sy;
                }
            }
            if hits == 0 {
                surf.push(None);
                alpha.push(T::zero());
                continue;
            }
            let (x, y) = (
                to_screen_x(mx / hits as f64),
                to_screen_y(my / hits as f64),
            );
            let (point, normal) = scene.surface(x, y);
            surf.push(Some(Surf {
                point,
                normal,
                albedo: scene.albedo_at(point),
                skin: scene.is_skin(point),
            }));
            alpha.push(T::of_usize(hits) / T::of(4.0));
        }
    }
    GBuffer { surf, alpha }
}

/// Shade every covered pixel for a unit-radiance light from `dir`.
fn shade_olat<T: Real>(scene: &Scene<T>, gb: &GBuffer<T>, dir: [T; 3]) -> Vec<[T; 3]> {
    let inv_pi = T::one() / T::PI();
    let view = [T::zero(), T::zero(), T::one()];
    gb.surf
        .iter()
        .map(|s| match s {
            None => [T::zero(); 3],
            Some(surf) => {
                if !scene.visible(surf.point, surf.normal, dir) {
                    return [T::zero(); 3];
                }
                let ndl = vec3::dot(surf.normal, dir).max(T::zero());
                let mut px = vec3::scale(surf.albedo, inv_pi * ndl);
                if scene.k_s > T::zero() {
                    let r = vec3::sub(
                        vec3::scale(surf.normal, T::two() * vec3::dot(surf.normal, view)),
                        view,
                    );
                    let rdl = vec3::dot(r, dir).max(T::zero());
                    if rdl > T::zero() {
                        let spec = scene.k_s * rdl.powf(scene.s_exp);
                        px = vec3::add(px, [spec, spec, spec]);
                    }
                }
                px
            }
        })
        .collect()
}

/// One-light-at-a-time basis: unit-light images for every texel direction of
/// an integration grid, plus the lighting-independent geometry buffers.
pub struct OlatBasis<T> {
    width: usize,
    height: usize,
    grid_height: usize,
    dirs: Vec<[T; 3]>,
    solid_angles: Vec<T>,
    images: Vec<Vec<[T; 3]>>,
    alpha: Vec<T>,
    albedo: Vec<[T; 3]>,
    skin: Vec<bool>,
    normals: Vec<[T; 3]>,
}

#[derive(Clone, Debug)]
pub struct RenderBundle<T> {
    pub image: ImageBuffer<T>,
    pub albedo_gt: ImageBuffer<T>,
    pub skin_mask: Mask,
    pub normals: Vec<[T; 3]>,
}

pub fn olat_basis<T: Real>(
    scene: &Scene<T>,
    resolution: (usize, usize),
    grid_height: usize,
) -> Result<OlatBasis<T>> {
    let (width, height) = resolution;
    if width < 2 || height < 2 {
        return Err(Error::invalid("resolution below 2x2"));
    }
    if grid_height < 2 {
        return Err(Error::invalid("integration grid height below 2"));
    }
    let gb = gbuffer(scene, width, height);
    let grid = EnvironmentMap::<T>::constant(2 * grid_height, grid_height, [T::zero(); 3])
        .expect("grid dims valid");
    let mut dirs = Vec::new();
    let mut solid_angles = Vec::new();
    for r in 0..grid.height() {
        for c in 0..grid.width() {
            dirs.push(grid.direction(r, c));
            solid_angles.push(grid.texel_solid_angle(r));
        }
    }
    let images: Vec<Vec<[T; 3]>> = dirs
        .par_iter()
        .map(|dir| shade_olat(scene, &gb, *dir))
        .collect();

    let mut albedo = Vec::with_capacity(gb.surf.len());
    let mut skin = Vec::with_capacity(gb.surf.len());
    let mut normals = Vec::with_capacity(gb.surf.len());
    for s in &gb.surf {
        match s {
            Some(surf) => {
                albedo.push(surf.albedo);
                skin.push(surf.skin);
                normals.push(surf.normal);
            }
            None => {
                albedo.push([T::zero(); 3]);
                skin.push(false);
                normals.push([T::zero(); 3]);
            }
        }
    }
    Ok(OlatBasis {
        width,
        height,
        grid_height,
        dirs,
        solid_angles,
        images,
        alpha: gb.alpha,
        albedo,
        skin,
        normals,
    })
}

impl<T: Real> OlatBasis<T> {
    pub fn resolution(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn grid_height(&self) -> usize {
        self.grid_height
    }

    pub fn light_dirs(&self) -> &[[T; 3]] {
        &self.dirs
    }

    pub fn alpha_image(&self) -> crate::image::ScalarImage<T> {
        crate::image::ScalarImage::from_data(self.width, self.height, self.alpha.clone())
            .expect("alpha matches resolution")
    }

    /// Per-texel environment weights E_i·sinθ_i·Δθ·Δφ on the basis grid.
    fn weights(&self, env: &EnvironmentMap<T>) -> Result<Vec<[T; 3]>> {
        let env = if env.height() == self.grid_height {
            env.clone()
        } else {
            env.resample_area(self.grid_height)?
        };
        let mut weights = Vec::with_capacity(self.dirs.len());
        for (i, px) in env.radiance().iter().enumerate() {
            let sa = self.solid_angles[i];
            weights.push([px[0] * sa, px[1] * sa, px[2] * sa]);
        }
        Ok(weights)
    }

    /// Weighted OLAT sum; the discrete environment integral.
    pub fn render_image(&self, env: &EnvironmentMap<T>) -> Result<ImageBuffer<T>> {
        let weights = self.weights(env)?;
        let npx = self.width * self.height;
        let mut acc = vec![[T::zero(); 3]; npx];
        for (img, w) in self.images.iter().zip(&weights) {
            if w[0] == T::zero() && w[1] == T::zero() && w[2] == T::zero() {
                continue;
            }
            for (a, px) in acc.iter_mut().zip(img) {
                a[0] += px[0] * w[0];
                a[1] += px[1] * w[1];
                a[2] += px[2] * w[2];
            }
        }
        let pixels = acc
            .iter()
            .zip(&self.alpha)
            .map(|(rgb, a)| [rgb[0], rgb[1], rgb[2], *a])
            .collect();
        ImageBuffer::from_pixels(self.width, self.height, pixels)
    }

    pub fn render(&self, env: &EnvironmentMap<T>) -> Result<RenderBundle<T>> {
        let image = self.render_image(env)?;
        let albedo_px = self
            .albedo
            .iter()
            .zip(&self.alpha)
            .map(|(rgb, a)| [rgb[0], rgb[1], rgb[2], *a])
            .collect();
        let albedo_gt = ImageBuffer::from_pixels(self.width, self.height, albedo_px)?;
        let skin_mask = Mask::from_data(self.width, self.height, self.skin.clone())?;
        Ok(RenderBundle {
            image,
            albedo_gt,
            skin_mask,
            normals: self.normals.clone(),
        })
    }
}

/// Single directional light of the given radiance-weight colour.
pub fn render_olat<T: Real>(
    scene: &Scene<T>,
    light_dir: [T; 3],
    light_rgb: [T; 3],
    resolution: (usize, usize),
) -> Result<ImageBuffer<T>> {
    if (vec3::length(light_dir) - T::one()).abs() > T::of(1e-6) {
        return Err(Error::invalid("light direction must be unit length"));
    }
    let (width, height) = resolution;
    if width < 2 || height < 2 {
        return Err(Error::invalid("resolution below 2x2"));
    }
    let gb = gbuffer(scene, width, height);
    let shade = shade_olat(scene, &gb, light_dir);
    let pixels = shade
        .iter()
        .zip(&gb.alpha)
        .map(|(rgb, a)| [rgb[0] * light_rgb[0], rgb[1] * light_rgb[1], rgb[2] * light_rgb[2], *a])
        .collect();
    ImageBuffer::from_pixels(width, height, pixels)
}

/// Environment render through a fresh OLAT basis. Maps finer than the
/// default integration grid are downsampled onto it; coarser maps are used
/// at their native resolution so single-texel inputs stay exact.
pub fn render_env<T: Real>(
    scene: &Scene<T>,
    env: &EnvironmentMap<T>,
    resolution: (usize, usize),
) -> Result<RenderBundle<T>> {
    let grid_height = env.height().min(DEFAULT_BASIS_HEIGHT);
    let basis = olat_basis(scene, resolution, grid_height)?;
    basis.render(env)
}

/// Ground-truth diffused render: convolve the map, then render.
pub fn render_diffused<T: Real>(
    scene: &Scene<T>,
    env: &EnvironmentMap<T>,
    n: T,
    resolution: (usize, usize),
) -> Result<ImageBuffer<T>> {
    let out_height = env.height().min(DEFAULT_BASIS_HEIGHT);
    let diffused = envmap::diffuse_convolve(env, n, out_height)?;
    Ok(render_env(scene, &diffused, resolution)?.image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envmap::{gen_procedural_env, LobeSpec, ProceduralEnvSpec};

    fn flat_sphere(albedo: f64) -> SceneSpec {
        SceneSpec {
            geometry: GeometryKind::Sphere,
            albedo: AlbedoPattern::Flat { rgb: [albedo; 3] },
            specular_strength: 0.0,
            specular_exponent: 16.0,
            skin_fraction: 0.4,
            occluder: None,
        }
    }

    #[test]
    fn flat_albedo_is_constant_everywhere() {
        let scene = build_scene::<f64>(&flat_sphere(0.37), 1).unwrap();
        let gb = gbuffer(&scene, 32, 32);
        for s in gb.surf.iter().flatten() {
            assert_eq!(s.albedo, [0.37; 3]);
        }
    }

    #[test]
    fn scenes_are_deterministic() {
        let spec = SceneSpec {
            geometry: GeometryKind::Bust,
            albedo: AlbedoPattern::Noise { base: [0.6, 0.5, 0.4], amplitude: 0.3, scale: 4.0 },
            specular_strength: 0.1,
            specular_exponent: 24.0,
            skin_fraction: 0.4,
            occluder: None,
        };
        let a = build_scene::<f32>(&spec, 7).unwrap();
        let b = build_scene::<f32>(&spec, 7).unwrap();
        let (pa, na) = a.surface(0.1, -0.2);
        let (pb, nb) = b.surface(0.1, -0.2);
        assert_eq!(pa, pb);
        assert_eq!(na, nb);
        assert_eq!(a.albedo_at(pa), b.albedo_at(pb));
        // Different seed moves the face.
        let c = build_scene::<f32>(&spec, 8).unwrap();
        let (pc, _) = c.surface(0.1, -0.2);
        assert_ne!(pa, pc);
    }

    #[test]
    fn two_tone_skin_fraction_matches_mask_share() {
        let spec = SceneSpec {
            geometry: GeometryKind::Sphere,
            albedo: AlbedoPattern::TwoTone { skin: [0.8, 0.6, 0.5], clothing: [0.2, 0.2, 0.3] },
            specular_strength: 0.0,
            specular_exponent: 16.0,
            skin_fraction: 0.4,
            occluder: None,
        };
        let scene = build_scene::<f64>(&spec, 3).unwrap();
        let gb = gbuffer(&scene, 96, 96);
        let covered: Vec<&Surf<f64>> = gb.surf.iter().flatten().collect();
        let skin = covered.iter().filter(|s| s.skin).count();
        let share = skin as f64 / covered.len() as f64;
        assert!((share - 0.4).abs() < 0.05, "skin share {}", share);
        // Mask and albedo agree.
        for s in &covered {
            assert_eq!(s.skin, s.albedo == [0.8, 0.6, 0.5]);
        }
    }

    #[test]
    fn olat_light_behind_subject_is_black() {
        let scene = build_scene::<f64>(&flat_sphere(0.5), 1).unwrap();
        let img = render_olat(&scene, [0.0, 0.0, -1.0], [3.0; 3], (65, 65)).unwrap();
        let c = img.get(32, 32);
        assert_eq!([c[0], c[1], c[2]], [0.0; 3]);
        assert_eq!(c[3], 1.0);
    }

    #[test]
    fn olat_normal_incidence_cancels_pi() {
        let scene = build_scene::<f64>(&flat_sphere(0.5), 1).unwrap();
        let pi = std::f64::consts::PI;
        let img = render_olat(&scene, [0.0, 0.0, 1.0], [pi; 3], (65, 65)).unwrap();
        let c = img.get(32, 32);
        for ch in 0..3 {
            assert!((c[ch] - 0.5).abs() < 1e-12, "{:?}", c);
        }
    }

    #[test]
    fn olat_rejects_non_unit_direction() {
        let scene = build_scene::<f64>(&flat_sphere(0.5), 1).unwrap();
        assert!(render_olat(&scene, [0.0, 0.0, 2.0], [1.0; 3], (16, 16)).is_err());
    }

    #[test]
    fn occluder_casts_geometric_shadow() {
        // Card above the equator plane, in front of the sphere, light on +z:
        // upper pixels fall in shadow, lower pixels stay lit.
        let mut spec = flat_sphere(0.5);
        spec.occluder = Some(OccluderSpec {
            center: [0.0, 1.0, 1.5],
            normal: [0.0, 0.0, 1.0],
            half_width: 3.0,
            half_height: 0.9,
        });
        let scene = build_scene::<f64>(&spec, 1).unwrap();
        let dir = [0.0, 0.0, 1.0];
        let img = render_olat(&scene, dir, [1.0; 3], (64, 64)).unwrap();

        // Independent ray-rectangle oracle at sample pixels.
        let oracle_blocked = |p: [f64; 3]| -> bool {
            // Card plane z = 1.5; ray hits it at q = p + t·(0,0,1).
            let q = [p[0], p[1], 1.5];
            (q[1] - 1.0).abs() <= 0.9 && q[0].abs() <= 3.0
        };
        let mut checked = 0;
        for (px, py) in [(32, 10), (32, 16), (20, 12), (32, 50), (32, 40), (44, 50), (10, 32), (54, 32), (32, 28), (32, 36)] {
            let x = 2.0 * (px as f64 + 0.5) / 64.0 - 1.0;
            let y = 1.0 - 2.0 * (py as f64 + 0.5) / 64.0;
            let scene_t: &Scene<f64> = &scene;
            if !scene_t.inside(x, y) {
                continue;
            }
            let (p, _n) = scene_t.surface(x, y);
            let lum = img.rgb(px, py)[0];
            if oracle_blocked(p) {
                assert_eq!(lum, 0.0, "pixel ({},{}) should be shadowed", px, py);
            } else {
                assert!(lum > 0.0, "pixel ({},{}) should be lit", px, py);
            }
            checked += 1;
        }
        assert!(checked >= 8);
    }

    #[test]
    fn uniform_env_renders_albedo() {
        let scene = build_scene::<f64>(&flat_sphere(0.5), 1).unwrap();
        let env = EnvironmentMap::<f64>::constant(32, 16, [1.0; 3]).unwrap();
        let bundle = render_env(&scene, &env, (64, 64)).unwrap();
        for py in 0..64 {
            for px in 0..64 {
                let p = bundle.image.get(px, py);
                if p[3] > 0.0 {
                    for ch in 0..3 {
                        assert!(
                            (p[ch] - 0.5).abs() < 0.01,
                            "pixel ({},{}) = {:?}",
                            px,
                            py,
                            p
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn env_render_is_linear_in_the_map() {
        let scene = build_scene::<f64>(&flat_sphere(0.6), 2).unwrap();
        let spec = ProceduralEnvSpec {
            height: 8,
            ambient: [0.05; 3],
            lobes: vec![],
            random_lobes: 2,
        };
        let e1 = gen_procedural_env::<f64>(&spec, 10).unwrap();
        let e2 = gen_procedural_env::<f64>(&spec, 11).unwrap();
        let sum = EnvironmentMap::new(
            e1.width(),
            e1.height(),
            e1.radiance()
                .iter()
                .zip(e2.radiance())
                .map(|(a, b)| [a[0] + b[0], a[1] + b[1], a[2] + b[2]])
                .collect(),
        )
        .unwrap();
        let basis = olat_basis(&scene, (48, 48), 8).unwrap();
        let r1 = basis.render_image(&e1).unwrap();
        let r2 = basis.render_image(&e2).unwrap();
        let rsum = basis.render_image(&sum).unwrap();
        for ((a, b), s) in r1.pixels().iter().zip(r2.pixels()).zip(rsum.pixels()) {
            for ch in 0..3 {
                assert!((a[ch] + b[ch] - s[ch]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn single_texel_env_equals_scaled_olat() {
        let scene = build_scene::<f64>(&flat_sphere(0.5), 1).unwrap();
        let (w, h) = (16usize, 8usize);
        let (r0, c0) = (3usize, 5usize);
        let mut px = vec![[0.0f64; 3]; w * h];
        px[r0 * w + c0] = [2.0, 1.0, 0.5];
        let env = EnvironmentMap::new(w, h, px).unwrap();
        let bundle = render_env(&scene, &env, (48, 48)).unwrap();

        let dir = env.direction(r0, c0);
        let sa = env.texel_solid_angle(r0);
        let weight = [2.0 * sa, 1.0 * sa, 0.5 * sa];
        let olat = render_olat(&scene, dir, weight, (48, 48)).unwrap();
        for (a, b) in bundle.image.pixels().iter().zip(olat.pixels()) {
            for ch in 0..4 {
                assert!((a[ch] - b[ch]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn alpha_is_lighting_invariant_and_normals_unit() {
        let spec = SceneSpec {
            geometry: GeometryKind::Bust,
            albedo: AlbedoPattern::Flat { rgb: [0.5; 3] },
            specular_strength: 0.05,
            specular_exponent: 16.0,
            skin_fraction: 0.4,
            occluder: None,
        };
        let scene = build_scene::<f64>(&spec, 5).unwrap();
        let basis = olat_basis(&scene, (48, 48), 8).unwrap();
        let e1 = EnvironmentMap::<f64>::constant(16, 8, [1.0; 3]).unwrap();
        let e2 = EnvironmentMap::<f64>::constant(16, 8, [0.1, 0.4, 2.0]).unwrap();
        let b1 = basis.render(&e1).unwrap();
        let b2 = basis.render(&e2).unwrap();
        for (a, b) in b1.image.pixels().iter().zip(b2.image.pixels()) {
            assert_eq!(a[3], b[3]);
        }
        for (n, a) in b1.normals.iter().zip(b1.image.pixels()) {
            if a[3] > 0.0 {
                assert!((vec3::length(*n) - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn bust_self_shadows_under_grazing_light() {
        let spec = SceneSpec {
            geometry: GeometryKind::Bust,
            albedo: AlbedoPattern::Flat { rgb: [0.6; 3] },
            specular_strength: 0.0,
            specular_exponent: 16.0,
            skin_fraction: 0.4,
            occluder: None,
        };
        let scene = build_scene::<f64>(&spec, 9).unwrap();
        // Light from the right, low over the surface plane.
        let dir = vec3::normalize([1.0, 0.0, 0.35]).unwrap();
        let img = render_olat(&scene, dir, [1.0; 3], (64, 64)).unwrap();
        let gb = gbuffer(&scene, 64, 64);
        let mut front_facing_dark = 0;
        let mut lit = 0;
        for (i, s) in gb.surf.iter().enumerate() {
            if let Some(surf) = s {
                let (px, py) = (i % 64, i / 64);
                let v = img.rgb(px, py)[0];
                if v > 0.0 {
                    lit += 1;
                } else if vec3::dot(surf.normal, dir) > 0.05 {
                    // Facing the light yet black: a cast shadow, not horizon.
                    front_facing_dark += 1;
                }
            }
        }
        assert!(lit > 500, "most of the lit side renders ({} lit)", lit);
        assert!(
            front_facing_dark > 10,
            "cast shadows must appear ({} shadowed front-facing pixels)",
            front_facing_dark
        );
    }

    #[test]
    fn diffused_render_widens_penumbra() {
        // Hard single-direction env vs its n=1 diffusion; the occluder edge
        // penumbra (10%→90% span along a column) must widen.
        let mut spec = flat_sphere(0.5);
        spec.occluder = Some(OccluderSpec {
            center: [0.0, 1.1, 1.5],
            normal: [0.0, 0.0, 1.0],
            half_width: 3.0,
            half_height: 0.8,
        });
        let scene = build_scene::<f64>(&spec, 1).unwrap();
        let spec_env = ProceduralEnvSpec {
            height: 16,
            ambient: [0.0; 3],
            lobes: vec![LobeSpec {
                direction: [0.0, 0.25, 1.0],
                sigma: 0.08,
                intensity: 8.0,
                color: [1.0; 3],
            }],
            random_lobes: 0,
        };
        let env = gen_procedural_env::<f64>(&spec_env, 0).unwrap();

        let hard = render_env(&scene, &env, (96, 96)).unwrap().image;
        let soft = render_diffused(&scene, &env, 1.0, (96, 96)).unwrap();

        let span = |img: &ImageBuffer<f64>| -> usize {
            // Column through the sphere centre, top (shadow) to bottom (lit).
            let col = 48;
            let vals: Vec<f64> = (0..96)
                .filter(|y| img.alpha(col, *y) == 1.0)
                .map(|y| img.rgb(col, y)[0])
                .collect();
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(0.0f64, f64::max);
            let norm: Vec<f64> = vals.iter().map(|v| (v - lo) / (hi - lo)).collect();
            let first_above_01 = norm.iter().position(|v| *v > 0.1).unwrap();
            let first_above_09 = norm.iter().position(|v| *v > 0.9).unwrap();
            first_above_09.saturating_sub(first_above_01)
        };
        let hard_span = span(&hard);
        let soft_span = span(&soft);
        assert!(
            soft_span > hard_span,
            "penumbra must widen: hard {} vs soft {}",
            hard_span,
            soft_span
        );
    }

    #[test]
    fn mean_level_stable_across_heavy_diffusion() {
        // Unshadowed Lambertian sphere: heavy and light diffusion of the same
        // env change the mean subject value by < 5%.
        let scene = build_scene::<f64>(&flat_sphere(0.5), 1).unwrap();
        // Side-lit with ambient: the visible-hemisphere projection weights
        // irradiance by light elevation, so strongly front- or back-heavy
        // maps shift the visible mean even though the map mean is preserved.
        let spec = ProceduralEnvSpec {
            height: 16,
            ambient: [0.25; 3],
            lobes: vec![LobeSpec {
                direction: [1.0, 0.3, 0.15],
                sigma: 0.4,
                intensity: 2.5,
                color: [1.0, 0.9, 0.7],
            }],
            random_lobes: 0,
        };
        let env = gen_procedural_env::<f64>(&spec, 0).unwrap();
        let mean_of = |img: &ImageBuffer<f64>| {
            let mut acc = 0.0;
            let mut n = 0usize;
            for p in img.pixels() {
                if p[3] > 0.0 {
                    acc += (p[0] + p[1] + p[2]) / 3.0;
                    n += 1;
                }
            }
            acc / n as f64
        };
        let soft = render_diffused(&scene, &env, 1.0, (48, 48)).unwrap();
        let hard = render_diffused(&scene, &env, 4096.0, (48, 48)).unwrap();
        let (ms, mh) = (mean_of(&soft), mean_of(&hard));
        assert!(
            (ms - mh).abs() / mh < 0.05,
            "mean level drifted: n=1 {} vs n=4096 {}",
            ms,
            mh
        );
    }

    #[test]
    fn constant_env_diffusion_is_identity() {
        let scene = build_scene::<f64>(&flat_sphere(0.4), 1).unwrap();
        let env = EnvironmentMap::<f64>::constant(16, 8, [0.8, 0.6, 0.4]).unwrap();
        let plain = render_env(&scene, &env, (32, 32)).unwrap().image;
        let diffused = render_diffused(&scene, &env, 7.0, (32, 32)).unwrap();
        for (a, b) in plain.pixels().iter().zip(diffused.pixels()) {
            for ch in 0..3 {
                assert!((a[ch] - b[ch]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn spec_validation_rejects_bad_fields() {
        let mut bad = flat_sphere(1.5);
        assert!(build_scene::<f64>(&bad, 1).is_err());
        bad = flat_sphere(0.5);
        bad.specular_exponent = 0.5;
        assert!(build_scene::<f64>(&bad, 1).is_err());
        bad = flat_sphere(0.5);
        bad.skin_fraction = 0.0;
        assert!(build_scene::<f64>(&bad, 1).is_err());
    }
}
