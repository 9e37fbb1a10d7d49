//! On-disk layout for a render bundle: linear PFM buffers, 8-bit PNG for
//! the preview and the skin mask, and a JSON record naming them. The same
//! layout is what the dataset generator writes per example, minus the
//! supervision buffers.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ImageBuffer, ScalarImage};
use crate::io::{pfm, png};
use crate::renderer::{RenderBundle, SceneSpec};
use crate::scalar::Real;

pub const BUNDLE_MANIFEST: &str = "bundle.json";

/// Provenance to record alongside the buffers; all optional because a
/// bundle can also be assembled from foreign data.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct BundleMeta {
    pub scene: Option<SceneSpec>,
    pub scene_seed: Option<u64>,
    /// Path or name of the environment map the image was rendered under.
    pub env: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BundleManifest {
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub meta: BundleMeta,
    pub image: String,
    pub alpha: String,
    pub albedo: String,
    pub normals: String,
    pub skin: String,
    pub preview: String,
}

/// Split an RGBA buffer into the PFM pair it is stored as.
pub fn write_rgba_pfm<T: Real>(
    rgb_path: &Path,
    alpha_path: &Path,
    img: &ImageBuffer<T>,
) -> Result<()> {
    let rgb: Vec<[T; 3]> = img.pixels().iter().map(|p| [p[0], p[1], p[2]]).collect();
    let alpha: Vec<T> = img.pixels().iter().map(|p| p[3]).collect();
    pfm::write(rgb_path, &pfm::Pfm::rgb(img.width(), img.height(), rgb)?)?;
    pfm::write(alpha_path, &pfm::Pfm::gray(img.width(), img.height(), alpha)?)
}

pub fn read_rgba_pfm<T: Real>(rgb_path: &Path, alpha_path: &Path) -> Result<ImageBuffer<T>> {
    let rgb = pfm::read::<T>(rgb_path)?;
    let (w, h) = (rgb.width, rgb.height);
    let alpha = read_gray_pfm::<T>(alpha_path, w, h)?;
    let pixels = rgb
        .into_rgb()?
        .iter()
        .zip(alpha.data())
        .map(|(p, a)| [p[0], p[1], p[2], *a])
        .collect();
    ImageBuffer::from_pixels(w, h, pixels)
}

pub fn read_gray_pfm<T: Real>(path: &Path, width: usize, height: usize) -> Result<ScalarImage<T>> {
    let g = pfm::read::<T>(path)?;
    if (g.width, g.height) != (width, height) {
        return Err(Error::dims(format!(
            "{} is {}x{}, expected {}x{}",
            path.display(), g.width, g.height, width, height
        )));
    }
    ScalarImage::from_data(width, height, g.into_gray()?)
}

/// Write every buffer of a bundle under `dir` with fixed names.
pub fn write_bundle<T: Real>(dir: &Path, bundle: &RenderBundle<T>, meta: BundleMeta) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (w, h) = (bundle.image.width(), bundle.image.height());
    if bundle.normals.len() != w * h {
        return Err(Error::dims("normals buffer does not match the image"));
    }
    write_rgba_pfm(&dir.join("image.pfm"), &dir.join("alpha.pfm"), &bundle.image)?;
    let albedo: Vec<[T; 3]> = bundle.albedo_gt.pixels().iter().map(|p| [p[0], p[1], p[2]]).collect();
    pfm::write(&dir.join("albedo.pfm"), &pfm::Pfm::rgb(w, h, albedo)?)?;
    pfm::write(&dir.join("normals.pfm"), &pfm::Pfm::rgb(w, h, bundle.normals.clone())?)?;
    png::save_mask(&dir.join("skin.png"), &bundle.skin_mask)?;
    png::save_srgb_preview(&dir.join("preview.png"), &bundle.image)?;
    let manifest = BundleManifest {
        width: w,
        height: h,
        meta,
        image: "image.pfm".into(),
        alpha: "alpha.pfm".into(),
        albedo: "albedo.pfm".into(),
        normals: "normals.pfm".into(),
        skin: "skin.png".into(),
        preview: "preview.png".into(),
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::format(format!("bundle manifest: {}", e)))?;
    fs::write(dir.join(BUNDLE_MANIFEST), json + "\n")?;
    Ok(())
}

pub fn read_bundle<T: Real>(dir: &Path) -> Result<(RenderBundle<T>, BundleManifest)> {
    let text = fs::read_to_string(dir.join(BUNDLE_MANIFEST))?;
    let manifest: BundleManifest =
        serde_json::from_str(&text).map_err(|e| Error::format(format!("bundle manifest: {}", e)))?;
    let (w, h) = (manifest.width, manifest.height);
    let image = read_rgba_pfm(&dir.join(&manifest.image), &dir.join(&manifest.alpha))?;
    if (image.width(), image.height()) != (w, h) {
        return Err(Error::dims("bundle image does not match recorded size"));
    }
    let albedo_rgb = pfm::read::<T>(dir.join(&manifest.albedo).as_path())?;
    if (albedo_rgb.width, albedo_rgb.height) != (w, h) {
        return Err(Error::dims("bundle albedo does not match recorded size"));
    }
    let albedo_px = albedo_rgb
        .into_rgb()?
        .iter()
        .zip(image.pixels())
        .map(|(p, src)| [p[0], p[1], p[2], src[3]])
        .collect();
    let albedo_gt = ImageBuffer::from_pixels(w, h, albedo_px)?;
    let normals_pfm = pfm::read::<T>(dir.join(&manifest.normals).as_path())?;
    if (normals_pfm.width, normals_pfm.height) != (w, h) {
        return Err(Error::dims("bundle normals do not match recorded size"));
    }
    let normals = normals_pfm.into_rgb()?;
    let skin_mask = png::load_mask(&dir.join(&manifest.skin))?;
    if (skin_mask.width(), skin_mask.height()) != (w, h) {
        return Err(Error::dims("bundle skin mask does not match recorded size"));
    }
    Ok((RenderBundle { image, albedo_gt, skin_mask, normals }, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envmap::EnvironmentMap;
    use crate::renderer::{build_scene, render_env, AlbedoPattern, GeometryKind, SceneSpec};

    fn tiny_bundle() -> RenderBundle<f32> {
        let spec = SceneSpec {
            geometry: GeometryKind::Sphere,
            albedo: AlbedoPattern::Flat { rgb: [0.6, 0.4, 0.3] },
            specular_strength: 0.2,
            specular_exponent: 16.0,
            skin_fraction: 0.5,
            occluder: None,
        };
        let scene = build_scene(&spec, 7).unwrap();
        let env = EnvironmentMap::constant(8, 4, [0.8f32, 0.7, 0.6]).unwrap();
        render_env(&scene, &env, (16, 16)).unwrap()
    }

    #[test]
    fn bundle_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let bundle = tiny_bundle();
        write_bundle(dir.path(), &bundle, BundleMeta::default()).unwrap();
        let (back, manifest) = read_bundle::<f32>(dir.path()).unwrap();
        assert_eq!(manifest.width, 16);
        assert_eq!(back.image.pixels(), bundle.image.pixels());
        assert_eq!(back.albedo_gt.pixels(), bundle.albedo_gt.pixels());
        assert_eq!(back.normals, bundle.normals);
        assert_eq!(back.skin_mask.data(), bundle.skin_mask.data());
    }

    #[test]
    fn missing_files_surface_as_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(read_bundle::<f32>(dir.path()).is_err());
        let bundle = tiny_bundle();
        write_bundle(dir.path(), &bundle, BundleMeta::default()).unwrap();
        std::fs::remove_file(dir.path().join("normals.pfm")).unwrap();
        assert!(read_bundle::<f32>(dir.path()).is_err());
    }
}
