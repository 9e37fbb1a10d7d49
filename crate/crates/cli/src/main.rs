//! `lightdiff`: command-line driver for the light-diffusion toolkit.
//!
//! Subcommands are pure pipelines: the same flags and seeds always produce
//! the same output files. Informational chatter goes to stderr; stdout
//! carries only machine-readable results (the Gini value, eval reports,
//! the estimated tint). Exit codes: 0 success, 2 bad input, 1 internal.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use lightdiff_core::envmap::{self, gen_procedural_env, ProceduralEnvSpec};
use lightdiff_core::error::{Error, Result};
use lightdiff_core::io::{pfm, png};
use lightdiff_core::maps::composite;
use lightdiff_core::model::{
    estimate_tint, iterated_albedo, skin_crop, train as train_model, untint, write_history_csv,
    TrainConfig,
};
use lightdiff_core::pipeline::{
    csv_report, evaluate, generate_dataset, load_examples, predict_diffused, read_bundle,
    table_report, write_bundle, BundleMeta, DatasetConfig, DatasetManifest, Split,
};
use lightdiff_core::renderer::{build_scene, render_env, SceneSpec};
use lightdiff_core::{EnvMap32, Image32, Params32, Tensor32};

#[derive(Parser)]
#[command(
    name = "lightdiff",
    about = "Portrait light diffusion: environment maps, rendering, datasets, training, inference."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Eval,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Eval => Split::Eval,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a procedural environment map from a TOML spec.
    GenEnv {
        /// TOML file describing ambient light and radiance lobes.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Output map; .pfm or .hdr by extension.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the Gini diffuseness of an environment map.
    Gini {
        /// Input map (.pfm or .hdr).
        map: PathBuf,
    },
    /// Diffuse an environment map with the cosine-power kernel.
    Convolve {
        /// Input map (.pfm or .hdr).
        input: PathBuf,
        /// Kernel exponent; 1 is fully diffuse, larger is sharper.
        #[arg(long)]
        n: f64,
        #[arg(long)]
        out_height: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a scene under an environment into a bundle directory.
    Render {
        /// TOML scene description.
        #[arg(long)]
        scene_spec: PathBuf,
        /// Environment map (.pfm or .hdr).
        #[arg(long)]
        env: PathBuf,
        #[arg(long, default_value_t = 128)]
        resolution: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Generate a dataset and its manifest.
    Dataset {
        /// TOML dataset configuration.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train the full stack on a dataset manifest.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// TOML training configuration.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_params: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Optional CSV of per-step losses.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Score a params file against a dataset split.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Eval)]
        split: SplitArg,
        /// Write the CSV here instead of stdout; the table stays on stdout.
        #[arg(long)]
        out_csv: Option<PathBuf>,
    },
    /// Re-light a rendered bundle at diffusion level t.
    Diffuse {
        #[arg(long)]
        params: PathBuf,
        /// Directory written by `render` (or `dataset`-compatible layout).
        #[arg(long)]
        input_bundle: PathBuf,
        /// 0 is fully diffuse, 1 reproduces the input lighting.
        #[arg(long)]
        t: f64,
        /// Output PFM; a PNG preview lands next to it. Defaults to
        /// diffused.pfm inside the bundle.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate tinted and untinted albedo from a bundle.
    Albedo {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        input_bundle: PathBuf,
        /// Diffusion iterations; more passes converge toward flat lighting.
        #[arg(long, default_value_t = 3)]
        iters: usize,
        /// Output directory; defaults to the bundle itself.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_invalid_input() { 2 } else { 1 })
        }
    }
}

fn read_env(path: &Path) -> Result<EnvMap32> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pfm") => EnvMap32::read_pfm(path),
        Some("hdr") => EnvMap32::read_hdr(path),
        _ => Err(Error::invalid(format!(
            "{}: environment maps are read by extension, .pfm or .hdr",
            path.display()
        ))),
    }
}

fn write_env(path: &Path, env: &EnvMap32) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pfm") => env.write_pfm(path),
        Some("hdr") => env.write_hdr(path),
        _ => Err(Error::invalid(format!(
            "{}: environment maps are written by extension, .pfm or .hdr",
            path.display()
        ))),
    }
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::invalid(format!("{what}: {e}")))
}

fn manifest_base(manifest_path: &Path) -> &Path {
    match manifest_path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

fn write_rgb_pfm(path: &Path, img: &Image32) -> Result<()> {
    let rgb: Vec<[f32; 3]> = img.pixels().iter().map(|p| [p[0], p[1], p[2]]).collect();
    pfm::write(path, &pfm::Pfm::rgb(img.width(), img.height(), rgb)?)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenEnv { spec, seed, out } => {
            let spec: ProceduralEnvSpec = read_toml(&spec, "environment spec")?;
            let env = gen_procedural_env::<f32>(&spec, seed)?;
            write_env(&out, &env)?;
            eprintln!("wrote {}x{} map to {}", env.width(), env.height(), out.display());
            Ok(())
        }
        Command::Gini { map } => {
            let env = read_env(&map)?;
            println!("{}", envmap::gini(&env)?);
            Ok(())
        }
        Command::Convolve { input, n, out_height, out } => {
            let env = read_env(&input)?;
            let diffused = envmap::diffuse_convolve(&env, n as f32, out_height)?;
            write_env(&out, &diffused)?;
            eprintln!("wrote {}", out.display());
            Ok(())
        }
        Command::Render { scene_spec, env, resolution, seed, out_dir } => {
            let spec: SceneSpec = read_toml(&scene_spec, "scene spec")?;
            spec.validate()?;
            let map = read_env(&env)?;
            let scene = build_scene::<f32>(&spec, seed)?;
            let bundle = render_env(&scene, &map, (resolution, resolution))?;
            let meta = BundleMeta {
                scene: Some(spec),
                scene_seed: Some(seed),
                env: Some(env.display().to_string()),
            };
            write_bundle(&out_dir, &bundle, meta)?;
            eprintln!("wrote bundle to {}", out_dir.display());
            Ok(())
        }
        Command::Dataset { config, seed, out_dir } => {
            let config = DatasetConfig::from_path(&config)?;
            let manifest = generate_dataset::<f32>(&config, seed, &out_dir)?;
            eprintln!("wrote {} examples to {}", manifest.examples.len(), out_dir.display());
            Ok(())
        }
        Command::Train { manifest, config, out_params, seed, history } => {
            let mut config = TrainConfig::from_path(&config)?;
            if let Some(seed) = seed {
                config.seed = seed;
            }
            let base = manifest_base(&manifest).to_path_buf();
            let manifest = DatasetManifest::load(&manifest)?;
            let examples = load_examples::<f32>(&manifest, &base, Split::Train)?;
            eprintln!("training on {} examples", examples.len());
            let output = train_model(&examples, &config)?;
            output.params.save(&out_params)?;
            if let Some(path) = history {
                write_history_csv(&path, &output.history)?;
            }
            for stage in ["g", "h", "albedo", "tint"] {
                if let Some(row) = output.history.iter().rev().find(|r| r.stage == stage) {
                    eprintln!("stage {stage}: loss {:.6} at step {}", row.loss, row.step);
                }
            }
            eprintln!("wrote {}", out_params.display());
            Ok(())
        }
        Command::Eval { manifest, params, split, out_csv } => {
            let base = manifest_base(&manifest).to_path_buf();
            let manifest = DatasetManifest::load(&manifest)?;
            let params = Params32::load(&params)?;
            let report = evaluate(&params, &manifest, &base, split.into())?;
            let csv = csv_report(&report);
            match out_csv {
                Some(path) => fs::write(&path, csv)?,
                None => print!("{csv}\n"),
            }
            print!("{}", table_report(&report));
            Ok(())
        }
        Command::Diffuse { params, input_bundle, t, out } => {
            let params = Params32::load(&params)?;
            let (bundle, _) = read_bundle::<f32>(&input_bundle)?;
            let input = Tensor32::from_image_rgba(&bundle.image);
            let pred = predict_diffused(&params, &input, t as f32)?;
            let alpha = bundle.image.alpha_image();
            let pred_img = pred.to_image(&alpha)?;
            let composited = composite(&pred_img, &alpha, &bundle.image)?;
            let out = out.unwrap_or_else(|| input_bundle.join("diffused.pfm"));
            write_rgb_pfm(&out, &composited)?;
            png::save_srgb_preview(&out.with_extension("png"), &composited)?;
            eprintln!("wrote {}", out.display());
            Ok(())
        }
        Command::Albedo { params, input_bundle, iters, out_dir } => {
            let params = Params32::load(&params)?;
            let (bundle, _) = read_bundle::<f32>(&input_bundle)?;
            let input = Tensor32::from_image_rgba(&bundle.image);
            let tinted = iterated_albedo(&params, &input, iters)?;
            let skin_data: Vec<f32> = bundle
                .skin_mask
                .data()
                .iter()
                .map(|b| if *b { 1.0 } else { 0.0 })
                .collect();
            let skin = Tensor32::new(
                vec![1, bundle.image.height(), bundle.image.width()],
                skin_data,
            )?;
            let crop = skin_crop(&tinted, &skin)?;
            let tint = estimate_tint(&params, &crop)?;
            let alpha = bundle.image.alpha_image();
            let tinted_img = tinted.to_image(&alpha)?;
            let untinted_img = untint(&tinted_img, tint)?;
            let dir = out_dir.unwrap_or(input_bundle);
            fs::create_dir_all(&dir)?;
            write_rgb_pfm(&dir.join("tinted_albedo_estimate.pfm"), &tinted_img)?;
            png::save_srgb_preview(&dir.join("tinted_albedo_estimate.png"), &tinted_img)?;
            write_rgb_pfm(&dir.join("albedo_estimate.pfm"), &untinted_img)?;
            png::save_srgb_preview(&dir.join("albedo_estimate.png"), &untinted_img)?;
            println!("{} {} {}", tint[0], tint[1], tint[2]);
            eprintln!("wrote albedo estimates to {}", dir.display());
            Ok(())
        }
    }
}
