//! Scoring a trained stack against a dataset split. Every example is run
//! at its own recorded t and compared with the rendered target; the
//! identity baseline (prediction = input) is reported alongside, since any
//! useful diffusion model has to beat handing the input back unchanged.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::ScalarImage;
use crate::model::{
    forward_diffusion, forward_specshadow, iterated_albedo, ModelParams, Tensor, TrainingExample,
};
use crate::scalar::Real;

use super::dataset::{load_example, DatasetManifest, Split};
use super::metrics::{metrics, MetricsReport};

/// g then h on an RGB+alpha input: the full diffusion forward pass.
pub fn predict_diffused<T: Real>(
    params: &ModelParams<T>,
    input: &Tensor<T>,
    t: T,
) -> Result<Tensor<T>> {
    let sd = forward_specshadow(params, input)?;
    let full = Tensor::concat_channels(&[input, &sd])?;
    forward_diffusion(params, &full, t)
}

#[derive(Clone, Debug)]
pub struct EvalRow<T> {
    pub id: String,
    pub augmented: bool,
    pub t: f64,
    pub model: MetricsReport<T>,
    pub identity: MetricsReport<T>,
}

#[derive(Clone, Debug)]
pub struct EvalReport<T> {
    pub rows: Vec<EvalRow<T>>,
    pub model_mean: MetricsReport<T>,
    pub identity_mean: MetricsReport<T>,
}

fn alpha_image<T: Real>(example: &TrainingExample<T>) -> Result<ScalarImage<T>> {
    let (_, h, w) = example.input.chw()?;
    ScalarImage::from_data(w, h, example.input.channel(3).to_vec())
}

/// Score one example: the model at the example's own t, and the baseline.
pub fn score_example<T: Real>(
    params: &ModelParams<T>,
    id: &str,
    augmented: bool,
    example: &TrainingExample<T>,
) -> Result<EvalRow<T>> {
    let alpha = alpha_image(example)?;
    let target = example.target.to_image(&alpha)?;
    let input_rgb = example.input.leading_channels(3)?.to_image(&alpha)?;
    let pred = predict_diffused(params, &example.input, example.t)?.to_image(&alpha)?;
    Ok(EvalRow {
        id: id.to_string(),
        augmented,
        t: example.t.as_f64(),
        model: metrics(&pred, &target, &alpha)?,
        identity: metrics(&input_rgb, &target, &alpha)?,
    })
}

pub fn evaluate<T: Real>(
    params: &ModelParams<T>,
    manifest: &DatasetManifest,
    base: &Path,
    split: Split,
) -> Result<EvalReport<T>> {
    let records: Vec<_> = manifest.records(split).collect();
    if records.is_empty() {
        return Err(Error::invalid(format!("no {} examples in the manifest", split.tag())));
    }
    let rows: Vec<EvalRow<T>> = records
        .par_iter()
        .map(|rec| {
            let example = load_example::<T>(base, rec)?;
            score_example(params, &rec.id, rec.aug.is_some(), &example)
        })
        .collect::<Result<_>>()?;
    let model_mean = MetricsReport::mean(&rows.iter().map(|r| r.model).collect::<Vec<_>>())?;
    let identity_mean = MetricsReport::mean(&rows.iter().map(|r| r.identity).collect::<Vec<_>>())?;
    Ok(EvalReport { rows, model_mean, identity_mean })
}

/// Mean MAE of the iterated tinted-albedo estimate over a set of examples.
pub fn albedo_mae<T: Real>(
    params: &ModelParams<T>,
    examples: &[TrainingExample<T>],
    iters: usize,
) -> Result<T> {
    if examples.is_empty() {
        return Err(Error::invalid("no examples to score"));
    }
    let mut total = T::zero();
    for example in examples {
        let alpha = alpha_image(example)?;
        let estimate = iterated_albedo(params, &example.input, iters)?.to_image(&alpha)?;
        let gt = example.tinted_albedo.to_image(&alpha)?;
        total += metrics(&estimate, &gt, &alpha)?.mae;
    }
    Ok(total / T::of_usize(examples.len()))
}

pub fn csv_report<T: Real>(report: &EvalReport<T>) -> String {
    let line = |label: &str, aug: &str, t: &str, m: &MetricsReport<T>, i: &MetricsReport<T>| {
        format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            label,
            aug,
            t,
            m.mae.as_f64(),
            m.mse.as_f64(),
            m.ssim.as_f64(),
            i.mae.as_f64(),
            i.mse.as_f64(),
            i.ssim.as_f64()
        )
    };
    let mut out =
        String::from("id,augmented,t,mae,mse,ssim,identity_mae,identity_mse,identity_ssim\n");
    for row in &report.rows {
        out.push_str(&line(
            &row.id,
            if row.augmented { "true" } else { "false" },
            &format!("{:.6}", row.t),
            &row.model,
            &row.identity,
        ));
    }
    out.push_str(&line("mean", "", "", &report.model_mean, &report.identity_mean));
    out
}

pub fn table_report<T: Real>(report: &EvalReport<T>) -> String {
    let mut out = format!(
        "{:<12} {:>4} {:>6} | {:>8} {:>9} {:>7} | {:>8} {:>9} {:>7}\n",
        "example", "aug", "t", "mae", "mse", "ssim", "id.mae", "id.mse", "id.ssim"
    );
    let line = |label: &str, aug: &str, t: &str, m: &MetricsReport<T>, i: &MetricsReport<T>| {
        format!(
            "{:<12} {:>4} {:>6} | {:>8.5} {:>9.6} {:>7.4} | {:>8.5} {:>9.6} {:>7.4}\n",
            label,
            aug,
            t,
            m.mae.as_f64(),
            m.mse.as_f64(),
            m.ssim.as_f64(),
            i.mae.as_f64(),
            i.mse.as_f64(),
            i.ssim.as_f64()
        )
    };
    for row in &report.rows {
        out.push_str(&line(
            &row.id,
            if row.augmented { "yes" } else { "no" },
            &format!("{:.3}", row.t),
            &row.model,
            &row.identity,
        ));
    }
    out.push_str(&line("mean", "", "", &report.model_mean, &report.identity_mean));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use crate::pipeline::dataset::{generate_dataset, DatasetConfig};

    fn fixture() -> (tempfile::TempDir, DatasetManifest) {
        let dir = tempfile::tempdir().unwrap();
        let config = DatasetConfig {
            train_count: 2,
            eval_count: 2,
            resolution: 16,
            env_height: 6,
            aug_probability: 1.0,
            ..DatasetConfig::default()
        };
        let manifest = generate_dataset::<f32>(&config, 13, dir.path()).unwrap();
        (dir, manifest)
    }

    #[test]
    fn fresh_params_evaluate_and_report() {
        let (dir, manifest) = fixture();
        let params = init_params::<f32>(0).unwrap();
        let report = evaluate(&params, &manifest, dir.path(), Split::Eval).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert!(report.rows.iter().all(|r| r.augmented && r.t == 0.0));
        for row in &report.rows {
            assert!(row.model.mae >= 0.0 && row.model.mse >= 0.0);
            assert!(row.model.ssim >= -1.0 && row.model.ssim <= 1.0);
        }
        let mean_by_hand = (report.rows[0].model.mae + report.rows[1].model.mae) / 2.0;
        assert!((report.model_mean.mae - mean_by_hand).abs() < 1e-7);

        let csv = csv_report(&report);
        assert!(csv.starts_with("id,augmented,t,"));
        assert_eq!(csv.lines().count(), 1 + 2 + 1);
        assert_eq!(csv, csv_report(&report));
        let table = table_report(&report);
        assert_eq!(table.lines().count(), 1 + 2 + 1);
        assert!(table.contains("eval-0000"));
    }

    #[test]
    fn prediction_shape_and_albedo_score() {
        let (dir, manifest) = fixture();
        let params = init_params::<f32>(1).unwrap();
        let examples = crate::pipeline::dataset::load_examples::<f32>(&manifest, dir.path(), Split::Eval)
            .unwrap();
        let pred = predict_diffused(&params, &examples[0].input, examples[0].t).unwrap();
        assert_eq!(pred.shape(), &[3, 16, 16]);
        let mae = albedo_mae(&params, &examples, 1).unwrap();
        assert!(mae.is_finite() && mae >= 0.0);
        assert!(albedo_mae(&params, &[], 1).is_err());
    }

    #[test]
    fn empty_split_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let config = DatasetConfig {
            train_count: 1,
            eval_count: 0,
            resolution: 16,
            env_height: 4,
            ..DatasetConfig::default()
        };
        let manifest = generate_dataset::<f32>(&config, 2, dir.path()).unwrap();
        let params = init_params::<f32>(0).unwrap();
        assert!(evaluate(&params, &manifest, dir.path(), Split::Eval).is_err());
    }
}
