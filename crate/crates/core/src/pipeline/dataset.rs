//! Synthetic dataset generation. Each example is a seeded scene rendered
//! under a seeded procedural environment, optionally shadow-augmented, with
//! every supervision buffer written to disk and a manifest record holding
//! the parameters that regenerate those buffers bit for bit.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envmap::{self, gen_procedural_env, EnvironmentMap, ProceduralEnvSpec};
use crate::error::{Error, Result};
use crate::image::{ImageBuffer, Mask, ScalarImage};
use crate::io::{pfm, png};
use crate::maps::compute_spec_shadow;
use crate::model::{Tensor, TrainingExample};
use crate::renderer::{
    build_scene, olat_basis, AlbedoPattern, GeometryKind, SceneSpec, DEFAULT_BASIS_HEIGHT,
};
use crate::rng;
use crate::scalar::Real;
use crate::shadowaug::{
    apply_external_shadow, project_shadow_mask, sample_silhouette, subsurface_tint,
    SilhouetteKind, CONE_HALF_ANGLE_DEG,
};

use super::bundle::{read_gray_pfm, read_rgba_pfm, write_rgba_pfm};

/// Kernel exponent bracket for matching a sampled t; 4096 is the sharp end
/// (near-identity at a height-16 grid).
const N_MIN: f64 = 1.0;
const N_MAX: f64 = 4096.0;
/// Geometric bisection steps; the kernel width scales like 1/sqrt(n), so
/// Gini is smooth in log n and twenty halvings pin it far below render noise.
const BISECT_ITERS: usize = 20;
const MAX_ENV_ATTEMPTS: u64 = 16;

fn default_train_count() -> usize {
    400
}

fn default_eval_count() -> usize {
    50
}

fn default_resolution() -> usize {
    64
}

fn default_env_height() -> usize {
    16
}

fn default_half() -> f64 {
    0.5
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default = "default_train_count")]
    pub train_count: usize,
    #[serde(default = "default_eval_count")]
    pub eval_count: usize,
    /// Square render size; the networks need it divisible by 8.
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    /// Height of the generated environment maps.
    #[serde(default = "default_env_height")]
    pub env_height: usize,
    /// Probability an example gets an external shadow.
    #[serde(default = "default_half")]
    pub aug_probability: f64,
    /// Probability a shadowed example also gets the subsurface tint.
    #[serde(default = "default_half")]
    pub tint_probability: f64,
    /// Render eval targets fully diffused (t = 0) instead of at sampled t,
    /// so the split measures the headline full-diffusion task.
    #[serde(default = "default_true")]
    pub eval_fully_diffuse: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            train_count: default_train_count(),
            eval_count: default_eval_count(),
            resolution: default_resolution(),
            env_height: default_env_height(),
            aug_probability: 0.5,
            tint_probability: 0.5,
            eval_fully_diffuse: true,
        }
    }
}

impl DatasetConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let config: DatasetConfig =
            toml::from_str(&text).map_err(|e| Error::invalid(format!("dataset config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_count == 0 {
            return Err(Error::invalid("train_count must be at least 1"));
        }
        if self.resolution < 8 || self.resolution % 8 != 0 {
            return Err(Error::invalid("resolution must be a positive multiple of 8"));
        }
        if self.env_height < 2 {
            return Err(Error::invalid("env_height must be at least 2"));
        }
        for (name, p) in [
            ("aug_probability", self.aug_probability),
            ("tint_probability", self.tint_probability),
        ] {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    pub fn tag(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
        }
    }
}

/// Shadow-augmentation parameters, sufficient to replay the augmentation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AugRecord {
    pub silhouette: SilhouetteKind,
    pub silhouette_seed: u64,
    /// Source-environment Gini; drives the shadow's blur and opacity.
    pub gini: f64,
    pub cone_half_angle_deg: f64,
    pub tinted: bool,
}

/// Paths of one example's buffers, relative to the manifest's directory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExampleFiles {
    pub input: String,
    pub alpha: String,
    pub specular: String,
    pub shadow: String,
    pub target: String,
    pub tinted_albedo: String,
    pub albedo: String,
    pub skin: String,
    pub preview: String,
}

impl ExampleFiles {
    fn for_id(id: &str) -> Self {
        let f = |name: &str| format!("{id}/{name}");
        ExampleFiles {
            input: f("input.pfm"),
            alpha: f("alpha.pfm"),
            specular: f("specular.pfm"),
            shadow: f("shadow.pfm"),
            target: f("target.pfm"),
            tinted_albedo: f("tinted_albedo.pfm"),
            albedo: f("albedo.pfm"),
            skin: f("skin.png"),
            preview: f("preview.png"),
        }
    }

    pub fn all(&self) -> [&str; 9] {
        [
            &self.input,
            &self.alpha,
            &self.specular,
            &self.shadow,
            &self.target,
            &self.tinted_albedo,
            &self.albedo,
            &self.skin,
            &self.preview,
        ]
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub id: String,
    pub split: Split,
    pub scene: SceneSpec,
    pub scene_seed: u64,
    pub env: ProceduralEnvSpec,
    /// Seed that produced a usable environment (degenerate draws were
    /// skipped at generation time and never recorded).
    pub env_seed: u64,
    pub aug: Option<AugRecord>,
    /// Diffusion parameter of the target render.
    pub t: f64,
    /// Kernel exponent matched to t by bisection on the environment's Gini.
    pub n: f64,
    /// Mean radiance of the source environment.
    pub tint: [f64; 3],
    pub files: ExampleFiles,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub config: DatasetConfig,
    pub examples: Vec<ExampleRecord>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let mut seen = HashSet::new();
        for rec in &self.examples {
            if !seen.insert(rec.id.as_str()) {
                return Err(Error::invalid(format!("duplicate example id {}", rec.id)));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::format(format!("dataset manifest: {e}")))?;
        fs::write(path, json + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::format(format!("dataset manifest: {e}")))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn records(&self, split: Split) -> impl Iterator<Item = &ExampleRecord> {
        self.examples.iter().filter(move |r| r.split == split)
    }
}

/// Every buffer of one example. `input` carries the shared alpha in its
/// fourth channel; the RGB-only buffers share that matte implicitly.
#[derive(Clone, Debug)]
pub struct ExampleBuffers<T> {
    pub input: ImageBuffer<T>,
    pub specular: ScalarImage<T>,
    pub shadow: ScalarImage<T>,
    pub target: ImageBuffer<T>,
    pub tinted_albedo: ImageBuffer<T>,
    pub albedo: ImageBuffer<T>,
    pub skin: Mask,
}

const SKIN_BASE: [f64; 3] = [0.75, 0.55, 0.42];

/// Multiplicative jitter around one canonical skin tone. Keeping the family
/// tight is what lets a tint regressor trained on crops tell lighting color
/// from surface color.
fn skin_tone(rng: &mut impl Rng) -> [f64; 3] {
    let s = rng.gen_range(0.8..1.15);
    let mut out = [0.0; 3];
    for (o, base) in out.iter_mut().zip(SKIN_BASE) {
        *o = (base * s * rng.gen_range(0.95..1.05)).clamp(0.05, 0.95);
    }
    out
}

fn sample_scene_spec(rng: &mut impl Rng) -> SceneSpec {
    let geometry = if rng.gen_bool(0.5) { GeometryKind::Sphere } else { GeometryKind::Bust };
    let skin = skin_tone(rng);
    let albedo = match rng.gen_range(0..3u32) {
        0 => AlbedoPattern::Flat { rgb: skin },
        1 => AlbedoPattern::TwoTone {
            skin,
            clothing: [
                rng.gen_range(0.1..0.85),
                rng.gen_range(0.1..0.85),
                rng.gen_range(0.1..0.85),
            ],
        },
        _ => AlbedoPattern::Noise {
            base: skin,
            amplitude: rng.gen_range(0.05..0.2),
            scale: rng.gen_range(2.0..6.0),
        },
    };
    SceneSpec {
        geometry,
        albedo,
        specular_strength: rng.gen_range(0.05..0.5),
        specular_exponent: rng.gen_range((8.0f64).ln()..(64.0f64).ln()).exp(),
        skin_fraction: rng.gen_range(0.35..0.65),
        occluder: None,
    }
}

fn sample_env_spec(rng: &mut impl Rng, height: usize) -> ProceduralEnvSpec {
    let ambient = rng.gen_range(0.02..0.15);
    ProceduralEnvSpec {
        height,
        ambient: [ambient; 3],
        lobes: Vec::new(),
        random_lobes: rng.gen_range(1..=4),
    }
}

fn grid_env<T: Real>(env: &EnvironmentMap<T>, grid_height: usize) -> Result<EnvironmentMap<T>> {
    if env.height() == grid_height {
        Ok(env.clone())
    } else {
        env.resample_area(grid_height)
    }
}

/// Invert t(n) = (gini(convolved at n) − G_d)/(G_s − G_d) by geometric
/// bisection. Requests past the sharp end of the bracket settle for N_MAX.
fn exponent_for_t<T: Real>(
    env: &EnvironmentMap<T>,
    grid_height: usize,
    g_s: T,
    g_d: T,
    t: f64,
) -> Result<f64> {
    if t <= 0.0 {
        return Ok(N_MIN);
    }
    let g_target = g_d + T::of(t) * (g_s - g_d);
    let gini_at = |n: f64| -> Result<T> {
        envmap::gini(&envmap::diffuse_convolve(env, T::of(n), grid_height)?)
    };
    if gini_at(N_MAX)? <= g_target {
        return Ok(N_MAX);
    }
    let (mut lo, mut hi) = (N_MIN, N_MAX);
    for _ in 0..BISECT_ITERS {
        let mid = (lo * hi).sqrt();
        if gini_at(mid)? < g_target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo * hi).sqrt())
}

/// Draw every free parameter of one example. All randomness comes from
/// streams keyed on (seed, purpose, split, index), so the eval split never
/// shares scene or environment draws with training, and changing the
/// augmentation probability leaves everything else untouched.
fn sample_record<T: Real>(
    config: &DatasetConfig,
    seed: u64,
    split: Split,
    index: u64,
) -> Result<ExampleRecord> {
    let id = format!("{}-{:04}", split.tag(), index);
    let tag = |what: &str| format!("{}.{}", what, split.tag());

    let scene = sample_scene_spec(&mut rng::stream(seed, &tag("scene-spec"), index));
    let scene_seed = rng::derive_seed(seed, &tag("scene"), index);
    let env_spec = sample_env_spec(&mut rng::stream(seed, &tag("env-spec"), index), config.env_height);

    let env_base = rng::derive_seed(seed, &tag("env"), index);
    let mut chosen = None;
    for attempt in 0..MAX_ENV_ATTEMPTS {
        let env_seed = rng::derive_seed(env_base, "attempt", attempt);
        let env = gen_procedural_env::<T>(&env_spec, env_seed)?;
        let grid_height = env.height().min(DEFAULT_BASIS_HEIGHT);
        let ginis = (|| -> Result<(T, T)> {
            let g_s = envmap::gini(&grid_env(&env, grid_height)?)?;
            let g_d = envmap::gini(&envmap::diffuse_convolve(&env, T::one(), grid_height)?)?;
            Ok((g_s, g_d))
        })();
        match ginis {
            Ok((g_s, g_d)) if g_s > g_d => {
                chosen = Some((env, env_seed, grid_height, g_s, g_d));
                break;
            }
            Ok((g_s, g_d)) => log::warn!(
                "{id}: env attempt {attempt} degenerate (gini {} vs diffused {}); next sub-seed",
                g_s.as_f64(),
                g_d.as_f64()
            ),
            Err(e) => log::warn!("{id}: env attempt {attempt} unusable ({e}); next sub-seed"),
        }
    }
    let Some((env, env_seed, grid_height, g_s, g_d)) = chosen else {
        return Err(Error::Internal(format!(
            "{id}: no usable environment in {MAX_ENV_ATTEMPTS} attempts"
        )));
    };

    let t = if split == Split::Eval && config.eval_fully_diffuse {
        0.0
    } else {
        rng::stream(seed, &tag("t"), index).gen_range(0.0..1.0)
    };
    let n = exponent_for_t(&env, grid_height, g_s, g_d, t)?;

    let mut arng = rng::stream(seed, &tag("aug"), index);
    let aug = if arng.gen::<f64>() < config.aug_probability {
        let kinds = [SilhouetteKind::Bars, SilhouetteKind::Blob, SilhouetteKind::Leaves];
        Some(AugRecord {
            silhouette: kinds[arng.gen_range(0..kinds.len())],
            silhouette_seed: arng.gen(),
            gini: g_s.as_f64(),
            cone_half_angle_deg: CONE_HALF_ANGLE_DEG,
            tinted: arng.gen::<f64>() < config.tint_probability,
        })
    } else {
        None
    };

    let tint = envmap::mean_radiance(&env).map(|c| c.as_f64());
    let files = ExampleFiles::for_id(&id);
    Ok(ExampleRecord {
        id,
        split,
        scene,
        scene_seed,
        env: env_spec,
        env_seed,
        aug,
        t,
        n,
        tint,
        files,
    })
}

/// Replay one record into its buffers. Pure function of (config, record):
/// this is both how the generator produces buffers and the guarantee that a
/// manifest regenerates its dataset.
pub fn regenerate_example<T: Real>(
    config: &DatasetConfig,
    record: &ExampleRecord,
) -> Result<ExampleBuffers<T>> {
    if let Some(aug) = &record.aug {
        if aug.cone_half_angle_deg != CONE_HALF_ANGLE_DEG {
            return Err(Error::invalid(format!(
                "record wants a {}-degree removal cone; this build uses {}",
                aug.cone_half_angle_deg, CONE_HALF_ANGLE_DEG
            )));
        }
    }
    let scene = build_scene::<T>(&record.scene, record.scene_seed)?;
    let env = gen_procedural_env::<T>(&record.env, record.env_seed)?;
    let resolution = (config.resolution, config.resolution);
    let grid_height = env.height().min(DEFAULT_BASIS_HEIGHT);
    let basis = olat_basis(&scene, resolution, grid_height)?;
    let bundle = basis.render(&env)?;

    let input = match &record.aug {
        Some(aug) => {
            let sil = sample_silhouette::<T>(aug.silhouette, aug.silhouette_seed);
            let dominant = envmap::dominant_light_direction(&grid_env(&env, grid_height)?)?;
            let mask = project_shadow_mask(&scene, &sil, dominant, resolution)?;
            let shadowed = apply_external_shadow(&bundle, &basis, &env, &mask, T::of(aug.gini))?;
            if aug.tinted {
                subsurface_tint(&shadowed.image, &shadowed.blurred_mask, &bundle.skin_mask)?
            } else {
                shadowed.image
            }
        }
        None => bundle.image.clone(),
    };

    let diffuse = basis.render_image(&envmap::diffuse_convolve(&env, T::one(), grid_height)?)?;
    let pair = compute_spec_shadow(&input, &diffuse, &input.alpha_image())?;

    let target = if record.n == N_MIN {
        diffuse
    } else {
        basis.render_image(&envmap::diffuse_convolve(&env, T::of(record.n), grid_height)?)?
    };

    let tint_env = EnvironmentMap::constant(2 * grid_height, grid_height, record.tint.map(T::of))?;
    let tinted_albedo = basis.render_image(&tint_env)?;

    Ok(ExampleBuffers {
        input,
        specular: pair.specular,
        shadow: pair.shadow,
        target,
        tinted_albedo,
        albedo: bundle.albedo_gt,
        skin: bundle.skin_mask,
    })
}

fn write_rgb_pfm<T: Real>(path: &Path, img: &ImageBuffer<T>) -> Result<()> {
    let rgb: Vec<[T; 3]> = img.pixels().iter().map(|p| [p[0], p[1], p[2]]).collect();
    pfm::write(path, &pfm::Pfm::rgb(img.width(), img.height(), rgb)?)
}

fn write_gray_pfm<T: Real>(path: &Path, img: &ScalarImage<T>) -> Result<()> {
    pfm::write(path, &pfm::Pfm::gray(img.width(), img.height(), img.data().to_vec())?)
}

fn write_buffers<T: Real>(base: &Path, record: &ExampleRecord, buffers: &ExampleBuffers<T>) -> Result<()> {
    fs::create_dir_all(base.join(&record.id))?;
    let f = &record.files;
    write_rgba_pfm(&base.join(&f.input), &base.join(&f.alpha), &buffers.input)?;
    write_gray_pfm(&base.join(&f.specular), &buffers.specular)?;
    write_gray_pfm(&base.join(&f.shadow), &buffers.shadow)?;
    write_rgb_pfm(&base.join(&f.target), &buffers.target)?;
    write_rgb_pfm(&base.join(&f.tinted_albedo), &buffers.tinted_albedo)?;
    write_rgb_pfm(&base.join(&f.albedo), &buffers.albedo)?;
    png::save_mask(&base.join(&f.skin), &buffers.skin)?;
    png::save_srgb_preview(&base.join(&f.preview), &buffers.input)
}

/// Generate the full dataset under `out_dir` and write `manifest.json`
/// there. Examples run in parallel; the manifest is assembled in id order.
pub fn generate_dataset<T: Real>(
    config: &DatasetConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    config.validate()?;
    fs::create_dir_all(out_dir)?;
    let mut jobs: Vec<(Split, u64)> = Vec::new();
    jobs.extend((0..config.train_count as u64).map(|i| (Split::Train, i)));
    jobs.extend((0..config.eval_count as u64).map(|i| (Split::Eval, i)));

    let examples: Vec<ExampleRecord> = jobs
        .into_par_iter()
        .map(|(split, index)| {
            let record = sample_record::<T>(config, seed, split, index)?;
            let buffers = regenerate_example::<T>(config, &record)?;
            write_buffers(out_dir, &record, &buffers)?;
            Ok(record)
        })
        .collect::<Result<_>>()?;

    let manifest = DatasetManifest { seed, config: config.clone(), examples };
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

fn rgb_tensor<T: Real>(path: &Path, width: usize, height: usize) -> Result<Tensor<T>> {
    let p = pfm::read::<T>(path)?;
    if (p.width, p.height) != (width, height) {
        return Err(Error::dims(format!(
            "{} is {}x{}, expected {}x{}",
            path.display(),
            p.width,
            p.height,
            width,
            height
        )));
    }
    let pixels = p.into_rgb()?;
    let npx = width * height;
    let mut data = vec![T::zero(); 3 * npx];
    for (i, rgb) in pixels.iter().enumerate() {
        data[i] = rgb[0];
        data[npx + i] = rgb[1];
        data[2 * npx + i] = rgb[2];
    }
    Tensor::new(vec![3, height, width], data)
}

/// Read one record's buffers back as a training example.
pub fn load_example<T: Real>(base: &Path, record: &ExampleRecord) -> Result<TrainingExample<T>> {
    let f = &record.files;
    let input_img = read_rgba_pfm::<T>(&base.join(&f.input), &base.join(&f.alpha))?;
    let (w, h) = (input_img.width(), input_img.height());
    let gt_s = Tensor::from_scalar_image(&read_gray_pfm(&base.join(&f.specular), w, h)?);
    let gt_d = Tensor::from_scalar_image(&read_gray_pfm(&base.join(&f.shadow), w, h)?);
    let skin_mask = png::load_mask(&base.join(&f.skin))?;
    if (skin_mask.width(), skin_mask.height()) != (w, h) {
        return Err(Error::dims("skin mask does not match the input"));
    }
    let skin_data = skin_mask
        .data()
        .iter()
        .map(|b| if *b { T::one() } else { T::zero() })
        .collect();
    let example = TrainingExample {
        input: Tensor::from_image_rgba(&input_img),
        gt_s,
        gt_d,
        target: rgb_tensor(&base.join(&f.target), w, h)?,
        t: T::of(record.t),
        tinted_albedo: rgb_tensor(&base.join(&f.tinted_albedo), w, h)?,
        tint: record.tint.map(T::of),
        albedo: rgb_tensor(&base.join(&f.albedo), w, h)?,
        skin: Tensor::new(vec![1, h, w], skin_data)?,
    };
    example.validate()?;
    Ok(example)
}

pub fn load_examples<T: Real>(
    manifest: &DatasetManifest,
    base: &Path,
    split: Split,
) -> Result<Vec<TrainingExample<T>>> {
    manifest.records(split).map(|r| load_example(base, r)).collect()
}
