//! External-shadow augmentation: a procedural silhouette wrapped on a
//! virtual cylinder around the subject is projected along the dominant
//! light, blurred and attenuated according to how diffuse the lighting is,
//! and blended against a render with the brightest light removed. A red
//! tint along the shadow edge on skin fakes subsurface scattering.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envmap::{dominant_light_direction, EnvironmentMap};
use crate::error::{Error, Result};
use crate::image::{ImageBuffer, Mask, ScalarImage};
use crate::renderer::{gbuffer, OlatBasis, RenderBundle, Scene};
use crate::rng;
use crate::scalar::Real;

/// Occlusion fraction per screen pixel, zero outside the subject.
pub type ShadowMask<T> = ScalarImage<T>;

/// Cylinder radius as a multiple of the subject bounding radius.
const CYLINDER_RADIUS_FACTOR: f64 = 2.0;
/// Vertical half-span of the silhouette wrap, in bounding radii.
const CYLINDER_HALF_SPAN_FACTOR: f64 = 2.0;
/// Dominant-light removal cone half-angle, degrees.
pub const CONE_HALF_ANGLE_DEG: f64 = 20.0;
const SIGMA_MAX_FRACTION: f64 = 0.04;
const OPACITY_MIN: f64 = 0.2;
const OPACITY_MAX: f64 = 0.95;
const TINT_BAND_LO: f64 = 0.15;
const TINT_BAND_HI: f64 = 0.85;
const TINT_STRENGTH: f64 = 0.15;

const SIL_WIDTH: usize = 256;
const SIL_HEIGHT: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SilhouetteKind {
    Bars,
    Blob,
    Leaves,
}

/// Occluder cut-out in cylindrical (u, v) coordinates; u wraps azimuthally.
#[derive(Clone, Debug)]
pub struct SilhouetteTexture<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Real> SilhouetteTexture<T> {
    pub fn from_data(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::dims("silhouette data does not match dimensions"));
        }
        if data.iter().any(|v| !v.is_finite() || *v < T::zero() || *v > T::one()) {
            return Err(Error::invalid("silhouette values must be in [0,1]"));
        }
        Ok(SilhouetteTexture { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Fraction of texels counted as occluding.
    pub fn coverage(&self) -> f64 {
        let hits = self.data.iter().filter(|v| **v > T::half()).count();
        hits as f64 / self.data.len() as f64
    }

    /// Bilinear lookup; u wraps, v clamps to the texture edge.
    pub fn at_uv(&self, u: T, v: T) -> T {
        let u = u - u.floor();
        let w = T::of_usize(self.width);
        let h = T::of_usize(self.height);
        let gx = u * w - T::half();
        let gy = (v * h - T::half()).max(T::zero()).min(h - T::one());
        let x0 = gx.floor();
        let y0 = gy.floor();
        let fx = gx - x0;
        let fy = gy - y0;
        let xi = |x: T| {
            let mut i = x.as_f64() as i64;
            let n = self.width as i64;
            i = ((i % n) + n) % n;
            i as usize
        };
        let yi = |y: T| (y.as_f64() as i64).clamp(0, self.height as i64 - 1) as usize;
        let (x0i, x1i) = (xi(x0), xi(x0 + T::one()));
        let (y0i, y1i) = (yi(y0), yi(y0 + T::one()));
        let at = |x: usize, y: usize| self.data[y * self.width + x];
        let top = at(x0i, y0i) * (T::one() - fx) + at(x1i, y0i) * fx;
        let bot = at(x0i, y1i) * (T::one() - fx) + at(x1i, y1i) * fx;
        top * (T::one() - fy) + bot * fy
    }
}

/// Seamless scalar noise on the cylinder surface (wraps in u).
fn cylinder_noise(u: f64, v: f64, scale: f64, seed: u64) -> f64 {
    let a = u * std::f64::consts::TAU;
    crate::renderer::value_noise(
        [a.cos() * scale, v * 2.0 * scale, a.sin() * scale],
        seed,
    )
}

pub fn sample_silhouette<T: Real>(kind: SilhouetteKind, seed: u64) -> SilhouetteTexture<T> {
    let (w, h) = (SIL_WIDTH, SIL_HEIGHT);
    let mut rng = rng::stream(seed, "silhouette", 0);
    let mut data = vec![T::zero(); w * h];
    match kind {
        SilhouetteKind::Bars => {
            let stripes = rng.gen_range(6..=12) as f64;
            let phase = rng.gen_range(0.0..1.0);
            for c in 0..w {
                let u = (c as f64 + 0.5) / w as f64;
                let on = (u * stripes + phase).fract() < 0.5;
                if on {
                    for r in 0..h {
                        data[r * w + c] = T::one();
                    }
                }
            }
        }
        SilhouetteKind::Blob => {
            let target = rng.gen_range(0.3..0.7);
            let scale = rng.gen_range(1.5..3.0);
            let nseed = rng.gen::<u64>();
            let mut field = Vec::with_capacity(w * h);
            for r in 0..h {
                let v = (r as f64 + 0.5) / h as f64;
                for c in 0..w {
                    let u = (c as f64 + 0.5) / w as f64;
                    field.push(cylinder_noise(u, v, scale, nseed));
                }
            }
            // Threshold at the coverage quantile so the target is met
            // exactly, then soften edges without moving the 0.5 crossing.
            let mut sorted = field.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let thr = sorted[((1.0 - target) * (sorted.len() - 1) as f64).round() as usize];
            let softness = 0.05;
            for (d, f) in data.iter_mut().zip(&field) {
                let t = ((f - thr) / softness + 0.5).clamp(0.0, 1.0);
                *d = T::of(t * t * (3.0 - 2.0 * t));
            }
        }
        SilhouetteKind::Leaves => {
            let target = rng.gen_range(0.3..0.6);
            let mut covered = 0usize;
            for _ in 0..400 {
                if covered as f64 / (w * h) as f64 >= target {
                    break;
                }
                let u0: f64 = rng.gen_range(0.0..1.0);
                let v0: f64 = rng.gen_range(0.0..1.0);
                let ru: f64 = rng.gen_range(0.02..0.06);
                let rv: f64 = rng.gen_range(0.03..0.09);
                let rot: f64 = rng.gen_range(0.0..std::f64::consts::PI);
                let (cs, sn) = (rot.cos(), rot.sin());
                for r in 0..h {
                    let v = (r as f64 + 0.5) / h as f64;
                    let dv = v - v0;
                    if dv.abs() > ru.max(rv) {
                        continue;
                    }
                    for c in 0..w {
                        let u = (c as f64 + 0.5) / w as f64;
                        let mut du = u - u0;
                        du -= du.round(); // shortest wrap distance
                        let x = du * cs + dv * sn;
                        let y = -du * sn + dv * cs;
                        if (x / ru).powi(2) + (y / rv).powi(2) <= 1.0 {
                            let cell = &mut data[r * w + c];
                            if *cell == T::zero() {
                                covered += 1;
                            }
                            *cell = T::one();
                        }
                    }
                }
            }
            if covered == 0 {
                data[(h / 2) * w + w / 2] = T::one();
            }
        }
    }
    SilhouetteTexture { width: w, height: h, data }
}

/// Project the silhouette onto the subject: from each surface point, follow
/// the light ray to the virtual cylinder (vertical axis, radius twice the
/// bounding radius) and read the occupancy there. Rays that exit through
/// the cylinder caps or run parallel to the axis contribute no occlusion.
pub fn project_shadow_mask<T: Real>(
    scene: &Scene<T>,
    sil: &SilhouetteTexture<T>,
    light_dir: [T; 3],
    resolution: (usize, usize),
) -> Result<ShadowMask<T>> {
    if (crate::vec3::length(light_dir) - T::one()).abs() > T::of(1e-6) {
        return Err(Error::invalid("light direction must be unit length"));
    }
    let (w, h) = resolution;
    if w < 2 || h < 2 {
        return Err(Error::invalid("resolution below 2x2"));
    }
    let rb = scene.bounding_radius();
    let r_cyl = rb * T::of(CYLINDER_RADIUS_FACTOR);
    let half_span = rb * T::of(2.0 * CYLINDER_HALF_SPAN_FACTOR);
    let gb = gbuffer(scene, w, h);
    let mut out = vec![T::zero(); w * h];
    for (i, s) in gb.surf.iter().enumerate() {
        let Some(surf) = s else { continue };
        let p = surf.point;
        let d = light_dir;
        let a = d[0] * d[0] + d[2] * d[2];
        if a < T::of(1e-12) {
            continue; // parallel to the axis: grazes the caps
        }
        let b = T::two() * (p[0] * d[0] + p[2] * d[2]);
        let c = p[0] * p[0] + p[2] * p[2] - r_cyl * r_cyl;
        let disc = b * b - T::of(4.0) * a * c;
        if disc <= T::zero() {
            continue;
        }
        // Larger root: the exit point, since the subject sits inside.
        let t = (-b + disc.sqrt()) / (T::two() * a);
        if t <= T::zero() {
            continue;
        }
        let hit = crate::vec3::add(p, crate::vec3::scale(d, t));
        let v = (hit[1] + half_span) / (half_span + half_span);
        if v < T::zero() || v > T::one() {
            continue;
        }
        let psi = hit[2].atan2(hit[0]);
        let u = psi / (T::two() * T::PI());
        out[i] = sil.at_uv(u, v);
    }
    ScalarImage::from_data(w, h, out)
}

/// Separable Gaussian blur with clamp-to-edge boundaries; σ ≤ 0 is a no-op.
pub fn gaussian_blur<T: Real>(img: &ScalarImage<T>, sigma: T) -> ScalarImage<T> {
    if sigma <= T::zero() {
        return img.clone();
    }
    let radius = (sigma.as_f64() * 3.0).ceil() as i64;
    let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
    let mut sum = T::zero();
    for k in -radius..=radius {
        let x = T::of(k as f64) / sigma;
        let v = (-(x * x) * T::half()).exp();
        kernel.push(v);
        sum += v;
    }
    for v in &mut kernel {
        *v /= sum;
    }
    let (w, h) = (img.width() as i64, img.height() as i64);
    let src = img.data();
    let mut tmp = vec![T::zero(); src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = T::zero();
            for (ki, kv) in kernel.iter().enumerate() {
                let sx = (x + ki as i64 - radius).clamp(0, w - 1);
                acc += *kv * src[(y * w + sx) as usize];
            }
            tmp[(y * w + x) as usize] = acc;
        }
    }
    let mut out = vec![T::zero(); src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = T::zero();
            for (ki, kv) in kernel.iter().enumerate() {
                let sy = (y + ki as i64 - radius).clamp(0, h - 1);
                acc += *kv * tmp[(sy * w + x) as usize];
            }
            out[(y * w + x) as usize] = acc;
        }
    }
    ScalarImage::from_data(img.width(), img.height(), out).expect("same dimensions")
}

/// Zero every texel within the given angular distance of the dominant
/// light. Returns the filtered map and the direction used.
pub fn remove_dominant_cone<T: Real>(
    env: &EnvironmentMap<T>,
    half_angle_deg: f64,
) -> Result<(EnvironmentMap<T>, [T; 3])> {
    let dir = dominant_light_direction(env)?;
    let cos_lim = T::of(half_angle_deg.to_radians().cos());
    let mut radiance = env.radiance().to_vec();
    let mut idx = 0;
    for r in 0..env.height() {
        for c in 0..env.width() {
            if crate::vec3::dot(env.direction(r, c), dir) >= cos_lim {
                radiance[idx] = [T::zero(); 3];
            }
            idx += 1;
        }
    }
    Ok((EnvironmentMap::new(env.width(), env.height(), radiance)?, dir))
}

/// Result of one shadow augmentation, with the parameters that produced it
/// so dataset manifests can reproduce the example.
#[derive(Clone, Debug)]
pub struct ShadowedRender<T> {
    pub image: ImageBuffer<T>,
    /// Mask after the Gini-driven blur; the tint step reuses it.
    pub blurred_mask: ShadowMask<T>,
    pub sigma: T,
    pub opacity: T,
    pub dominant_dir: [T; 3],
    /// Set when the supplied Gini was outside [0,1] and had to be clamped.
    pub gini_clamped: bool,
}

/// Blend the unshadowed render toward a dominant-light-removed render of
/// the same scene, weighted by the blurred silhouette mask. Harder light
/// (higher Gini) gives a sharper, more opaque shadow.
pub fn apply_external_shadow<T: Real>(
    bundle: &RenderBundle<T>,
    basis: &OlatBasis<T>,
    env: &EnvironmentMap<T>,
    mask: &ShadowMask<T>,
    gini: T,
) -> Result<ShadowedRender<T>> {
    let image = &bundle.image;
    if image.width() != mask.width() || image.height() != mask.height() {
        return Err(Error::dims("mask does not match render size"));
    }
    if basis.resolution() != (image.width(), image.height()) {
        return Err(Error::dims("basis does not match render size"));
    }
    if !gini.is_finite() {
        return Err(Error::invalid("gini must be finite"));
    }
    let gini_clamped = gini < T::zero() || gini > T::one();
    if gini_clamped {
        log::warn!(
            "shadow augmentation gini {} outside [0,1]; clamping",
            gini.as_f64()
        );
    }
    let g = gini.clamp01();

    let env_b = if env.height() == basis.grid_height() {
        env.clone()
    } else {
        env.resample_area(basis.grid_height())?
    };
    let (removed_env, dominant_dir) = remove_dominant_cone(&env_b, CONE_HALF_ANGLE_DEG)?;
    let removed = basis.render_image(&removed_env)?;

    let sigma = T::of(SIGMA_MAX_FRACTION * image.width() as f64) * (T::one() - g);
    let blurred = gaussian_blur(mask, sigma);
    let opacity = T::of(OPACITY_MIN) + T::of(OPACITY_MAX - OPACITY_MIN) * g;

    let pixels = image
        .pixels()
        .iter()
        .zip(removed.pixels())
        .zip(blurred.data())
        .map(|((a, b), m)| {
            let t = opacity * *m;
            [
                a[0] + (b[0] - a[0]) * t,
                a[1] + (b[1] - a[1]) * t,
                a[2] + (b[2] - a[2]) * t,
                a[3],
            ]
        })
        .collect();
    Ok(ShadowedRender {
        image: ImageBuffer::from_pixels(image.width(), image.height(), pixels)?,
        blurred_mask: blurred,
        sigma,
        opacity,
        dominant_dir,
        gini_clamped,
    })
}

/// Red tint along the shadow edge on skin: pixels where the soft mask sits
/// in the transition band get their red channel scaled by up to 1.15, with
/// a triangular profile peaking at mask 0.5.
pub fn subsurface_tint<T: Real>(
    img: &ImageBuffer<T>,
    mask: &ShadowMask<T>,
    skin: &Mask,
) -> Result<ImageBuffer<T>> {
    if img.width() != mask.width()
        || img.height() != mask.height()
        || img.width() != skin.width()
        || img.height() != skin.height()
    {
        return Err(Error::dims("tint inputs differ in size"));
    }
    let lo = T::of(TINT_BAND_LO);
    let hi = T::of(TINT_BAND_HI);
    let half_band = T::of(0.5 - TINT_BAND_LO);
    let pixels = img
        .pixels()
        .iter()
        .enumerate()
        .map(|(i, px)| {
            let m = mask.data()[i];
            if skin.data()[i] && m >= lo && m <= hi {
                let w = T::one() - (m - T::half()).abs() / half_band;
                let r = px[0] * (T::one() + T::of(TINT_STRENGTH) * w);
                [r, px[1], px[2], px[3]]
            } else {
                *px
            }
        })
        .collect();
    ImageBuffer::from_pixels(img.width(), img.height(), pixels)
}
