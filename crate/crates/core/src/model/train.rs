//! Staged training: g on ground-truth specular/shadow maps, h on diffusion
//! targets fed by the trained g's predictions, an optional albedo
//! fine-tune of h through the iterated g→h chain, and finally the tint
//! regressor on the model's own albedo estimates.
//!
//! Every stage gets a fresh Adam state and updates only its own parameter
//! prefix. Batches are drawn from a per-stage seed stream and summed in
//! ascending example order, so a (dataset, config) pair trains to
//! bit-identical parameters every run.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Real;

use super::albedo::{iterated_albedo, skin_crop};
use super::graph::{Graph, NodeId};
use super::params::ModelParams;
use super::tensor::Tensor;
use super::unet::{
    apply_tint, apply_unet, forward_specshadow, init_params, load_tint, load_unet, HeadKind,
};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub learning_rate: f64,
    /// Per-step multiplicative decay of the learning rate (1.0 = constant).
    /// Adam's scale-invariant steps otherwise keep the loss jittering at a
    /// floor proportional to the rate.
    pub lr_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    /// Steps for the specular/shadow net.
    pub g_steps: usize,
    /// Steps for the diffusion net on sampled-t targets.
    pub h_steps: usize,
    /// Steps fine-tuning h through the iterated albedo chain (0 disables).
    pub albedo_steps: usize,
    /// Steps for the tint regressor (0 disables).
    pub tint_steps: usize,
    /// Chain length for the albedo fine-tune and the tint stage's own
    /// albedo estimates.
    pub albedo_iters: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            learning_rate: 1e-3,
            lr_decay: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 4,
            g_steps: 1200,
            h_steps: 1500,
            albedo_steps: 150,
            tint_steps: 400,
            albedo_iters: 3,
        }
    }
}

impl TrainConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: TrainConfig =
            toml::from_str(&text).map_err(|e| Error::invalid(format!("train config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::invalid("lr_decay must lie in (0, 1]"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1)")));
            }
        }
        if self.epsilon <= 0.0 {
            return Err(Error::invalid("epsilon must be positive"));
        }
        if self.albedo_iters == 0 {
            return Err(Error::invalid("albedo_iters must be at least 1"));
        }
        Ok(())
    }
}

/// One supervised example, all buffers (C, H, W) at a shared resolution.
#[derive(Clone)]
pub struct TrainingExample<T> {
    /// Post-augmentation RGB+alpha input.
    pub input: Tensor<T>,
    pub gt_s: Tensor<T>,
    pub gt_d: Tensor<T>,
    /// Diffused render at `t`.
    pub target: Tensor<T>,
    pub t: T,
    /// Subject under perfectly even light of the env's mean color.
    pub tinted_albedo: Tensor<T>,
    /// Mean radiance of the source environment.
    pub tint: [T; 3],
    /// Texture albedo with the tint divided out.
    pub albedo: Tensor<T>,
    /// Skin-region mask (1 inside) for tint crops.
    pub skin: Tensor<T>,
}

impl<T: Real> TrainingExample<T> {
    pub fn validate(&self) -> Result<()> {
        let (c, h, w) = self.input.chw()?;
        if c != 4 {
            return Err(Error::dims("example input wants RGB+alpha"));
        }
        for (name, tensor, ch) in [
            ("gt_s", &self.gt_s, 1),
            ("gt_d", &self.gt_d, 1),
            ("target", &self.target, 3),
            ("tinted_albedo", &self.tinted_albedo, 3),
            ("albedo", &self.albedo, 3),
            ("skin", &self.skin, 1),
        ] {
            if tensor.shape() != [ch, h, w] {
                return Err(Error::dims(format!("example buffer {name} misaligned")));
            }
            if !tensor.all_finite() {
                return Err(Error::invalid(format!("non-finite values in {name}")));
            }
        }
        if !self.input.all_finite() {
            return Err(Error::invalid("non-finite values in input"));
        }
        if !(self.t >= T::zero() && self.t <= T::one()) {
            return Err(Error::invalid("example t outside [0, 1]"));
        }
        Ok(())
    }

    pub fn alpha(&self) -> Tensor<T> {
        self.input.channel_tensor(3).expect("validated input")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub stage: String,
    pub step: usize,
    pub loss: f64,
}

pub struct TrainingOutput<T> {
    pub params: ModelParams<T>,
    pub history: Vec<HistoryRow>,
}

pub fn write_history_csv(path: &Path, history: &[HistoryRow]) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    writeln!(f, "stage,step,loss")?;
    for row in history {
        writeln!(f, "{},{},{}", row.stage, row.step, row.loss)?;
    }
    f.flush()?;
    Ok(())
}

struct Adam<T> {
    lr: T,
    decay: T,
    b1: T,
    b2: T,
    eps: T,
    step: i32,
    entries: Vec<usize>,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    fn new(params: &ModelParams<T>, prefix: &str, config: &TrainConfig) -> Self {
        let entries = params.prefixed(prefix);
        let m = entries.iter().map(|e| vec![T::zero(); params.entry(*e).1.numel()]).collect();
        let v = entries.iter().map(|e| vec![T::zero(); params.entry(*e).1.numel()]).collect();
        Adam {
            lr: T::of(config.learning_rate),
            decay: T::of(config.lr_decay),
            b1: T::of(config.beta1),
            b2: T::of(config.beta2),
            eps: T::of(config.epsilon),
            step: 0,
            entries,
            m,
            v,
        }
    }

    /// One update from gradient sums scaled by `scale` (1/batch).
    fn apply(&mut self, params: &mut ModelParams<T>, accum: &[Option<Vec<T>>], scale: T) {
        let lr = self.lr * self.decay.powi(self.step);
        self.step += 1;
        let bc1 = T::one() - self.b1.powi(self.step);
        let bc2 = T::one() - self.b2.powi(self.step);
        for (pos, entry) in self.entries.iter().enumerate() {
            let Some(grad) = &accum[*entry] else { continue };
            let m = &mut self.m[pos];
            let v = &mut self.v[pos];
            let data = params.entry_mut(*entry).data_mut();
            for i in 0..grad.len() {
                let g = grad[i] * scale;
                m[i] = self.b1 * m[i] + (T::one() - self.b1) * g;
                v[i] = self.b2 * v[i] + (T::one() - self.b2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                data[i] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Batch for `step` of stage `tag`: sampled with replacement, returned in
/// ascending order so gradient summation has a fixed order.
fn sample_batch(seed: u64, tag: &str, step: usize, n: usize, batch: usize) -> Vec<usize> {
    let mut r = rng::stream(seed, &format!("batch.{tag}"), step as u64);
    let mut idx: Vec<usize> = (0..batch).map(|_| r.gen_range(0..n)).collect();
    idx.sort_unstable();
    idx
}

/// Shared stage loop: sample a batch, run `forward` per example, sum the
/// named gradients, Adam-update the `update_prefix` parameters. A
/// non-finite loss aborts as divergence before any backward pass.
fn run_stage<T, F>(
    params: &mut ModelParams<T>,
    update_prefix: &str,
    tag: &str,
    steps: usize,
    n_examples: usize,
    config: &TrainConfig,
    mut forward: F,
    history: &mut Vec<HistoryRow>,
) -> Result<()>
where
    T: Real,
    F: FnMut(&ModelParams<T>, usize) -> Result<(Graph<T>, NodeId, Vec<(String, NodeId)>)>,
{
    let name_to_entry: HashMap<String, usize> = params
        .iter()
        .enumerate()
        .map(|(i, (n, _))| (n.to_owned(), i))
        .collect();
    let mut adam = Adam::new(params, update_prefix, config);
    for step in 0..steps {
        let batch = sample_batch(config.seed, tag, step, n_examples, config.batch_size);
        let mut accum: Vec<Option<Vec<T>>> = vec![None; params.len()];
        let mut loss_sum = T::zero();
        for idx in batch {
            let (graph, loss, nodes) = forward(params, idx)?;
            let loss_val = graph.value(loss).data()[0];
            if !loss_val.is_finite() {
                return Err(Error::Diverged { step: step as u64, loss: loss_val.as_f64() });
            }
            loss_sum += loss_val;
            let grads = graph.backward(loss)?;
            for (name, id) in &nodes {
                let Some(entry) = name_to_entry.get(name.as_str()) else { continue };
                let Some(g) = grads.of(*id) else { continue };
                let slot = accum[*entry].get_or_insert_with(|| vec![T::zero(); g.len()]);
                for (a, b) in slot.iter_mut().zip(g) {
                    *a += *b;
                }
            }
        }
        let scale = T::one() / T::of_usize(config.batch_size);
        adam.apply(params, &accum, scale);
        history.push(HistoryRow {
            stage: tag.to_owned(),
            step,
            loss: (loss_sum * scale).as_f64(),
        });
    }
    Ok(())
}

/// Full training run: initializes parameters from `config.seed` and fits
/// all stages on `data`. Returns the parameters and the per-step loss
/// history.
pub fn train<T: Real>(data: &[TrainingExample<T>], config: &TrainConfig) -> Result<TrainingOutput<T>> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training needs at least one example"));
    }
    for ex in data {
        ex.validate()?;
    }
    let mut params = init_params::<T>(config.seed)?;
    let mut history = Vec::new();

    // Stage 1: g on (input → S, D).
    let g_targets: Vec<Tensor<T>> = data
        .iter()
        .map(|ex| Tensor::concat_channels(&[&ex.gt_s, &ex.gt_d]))
        .collect::<Result<_>>()?;
    let alphas: Vec<Tensor<T>> = data.iter().map(|ex| ex.alpha()).collect();
    run_stage(
        &mut params,
        "g.",
        "g",
        config.g_steps,
        data.len(),
        config,
        |params, idx| {
            let mut graph = Graph::new();
            let net = load_unet(&mut graph, params, "g", HeadKind::Sigmoid)?;
            let x = graph.leaf(data[idx].input.clone());
            let y = apply_unet(&mut graph, &net, x)?;
            let loss = graph.masked_l1(y, &g_targets[idx], &alphas[idx])?;
            Ok((graph, loss, net.nodes))
        },
        &mut history,
    )?;

    // Stage 2: h on (input, predicted S/D, t → diffused target), g frozen.
    let h_inputs: Vec<Tensor<T>> = data
        .iter()
        .map(|ex| {
            let sd = forward_specshadow(&params, &ex.input)?;
            let (_, h, w) = ex.input.chw()?;
            let tchan = Tensor::full(vec![1, h, w], ex.t);
            Tensor::concat_channels(&[&ex.input, &sd, &tchan])
        })
        .collect::<Result<_>>()?;
    run_stage(
        &mut params,
        "h.",
        "h",
        config.h_steps,
        data.len(),
        config,
        |params, idx| {
            let mut graph = Graph::new();
            let net = load_unet(&mut graph, params, "h", HeadKind::Softplus)?;
            let x = graph.leaf(h_inputs[idx].clone());
            let y = apply_unet(&mut graph, &net, x)?;
            let loss = graph.masked_l1(y, &data[idx].target, &alphas[idx])?;
            Ok((graph, loss, net.nodes))
        },
        &mut history,
    )?;

    // Stage 3: fine-tune h so the N-fold g→h(t=0) chain lands on the
    // tinted albedo. Gradients flow through the frozen g as well, but only
    // h moves.
    if config.albedo_steps > 0 {
        let iters = config.albedo_iters;
        run_stage(
            &mut params,
            "h.",
            "albedo",
            config.albedo_steps,
            data.len(),
            config,
            |params, idx| {
                let ex = &data[idx];
                let (_, h, w) = ex.input.chw()?;
                let mut graph = Graph::new();
                let gnet = load_unet(&mut graph, params, "g", HeadKind::Sigmoid)?;
                let hnet = load_unet(&mut graph, params, "h", HeadKind::Softplus)?;
                let alpha = graph.leaf(alphas[idx].clone());
                let t0 = graph.leaf(Tensor::zeros(vec![1, h, w]));
                let mut x4 = graph.leaf(ex.input.clone());
                let mut rgb = x4; // overwritten in the first iteration
                for _ in 0..iters {
                    let sd = apply_unet(&mut graph, &gnet, x4)?;
                    let with_sd = graph.concat_c(x4, sd)?;
                    let h_in = graph.concat_c(with_sd, t0)?;
                    rgb = apply_unet(&mut graph, &hnet, h_in)?;
                    x4 = graph.concat_c(rgb, alpha)?;
                }
                let loss = graph.masked_l1(rgb, &ex.tinted_albedo, &alphas[idx])?;
                Ok((graph, loss, hnet.nodes))
            },
            &mut history,
        )?;
    }

    // Stage 4: tint regressor on skin crops of the model's own albedo
    // estimates. Examples without any skin pixels are skipped.
    if config.tint_steps > 0 {
        let mut crops = Vec::new();
        let mut tint_targets = Vec::new();
        for ex in data {
            let estimate = iterated_albedo(&params, &ex.input, config.albedo_iters)?;
            match skin_crop(&estimate, &ex.skin) {
                Ok(crop) => {
                    crops.push(crop);
                    let t = ex.tint;
                    tint_targets.push(Tensor::new(vec![3, 1, 1], vec![t[0], t[1], t[2]])?);
                }
                Err(Error::EmptySkinRegion) => continue,
                Err(e) => return Err(e),
            }
        }
        if crops.is_empty() {
            return Err(Error::invalid("no examples expose skin for tint training"));
        }
        let ones = Tensor::full(vec![1, 1, 1], T::one());
        run_stage(
            &mut params,
            "tint.",
            "tint",
            config.tint_steps,
            crops.len(),
            config,
            |params, idx| {
                let mut graph = Graph::new();
                let net = load_tint(&mut graph, params)?;
                let x = graph.leaf(crops[idx].clone());
                let y = apply_tint(&mut graph, &net, x)?;
                let img = graph.reshape(y, vec![3, 1, 1])?;
                let loss = graph.masked_l1(img, &tint_targets[idx], &ones)?;
                Ok((graph, loss, net.nodes))
            },
            &mut history,
        )?;
    }

    params.check_finite()?;
    Ok(TrainingOutput { params, history })
}
