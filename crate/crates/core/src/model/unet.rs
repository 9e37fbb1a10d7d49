//! Encoder-decoder networks and the parameter-naming conventions that tie
//! a [`ModelParams`] store to runnable graphs.
//!
//! Three networks share one store, distinguished by name prefix:
//! `g.*` (RGB+alpha → specular+shadow, sigmoid head), `h.*`
//! (RGB+alpha+S+D+t → diffused RGB, softplus head) and `tint.*` (32×32 crop
//! → positive RGB, exponential head). Heads are zero-initialized, so fresh
//! nets start at the activation midpoints: g outputs exactly 0.5, h outputs
//! exactly ln 2, tint outputs exactly (1,1,1).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Real;

use super::graph::{Graph, NodeId};
use super::params::ModelParams;
use super::tensor::Tensor;

pub const LEAKY_SLOPE: f64 = 0.2;
/// Tint regressor conv widths; input crops are 32×32.
pub const TINT_CHANNELS: [usize; 3] = [8, 16, 16];
pub const TINT_CROP: usize = 32;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Clamp to [0,1]; used by the specular/shadow net.
    Sigmoid,
    /// Non-negative, unbounded above; used by the diffusion net.
    Softplus,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub encoder: Vec<usize>,
    pub bottleneck: usize,
    pub decoder: Vec<usize>,
    pub head: HeadKind,
}

impl NetConfig {
    /// Specular/shadow net g: RGB+alpha in, (S, D) out.
    pub fn g_default() -> Self {
        NetConfig {
            in_channels: 4,
            out_channels: 2,
            encoder: vec![8, 16, 32],
            bottleneck: 32,
            decoder: vec![32, 16, 8],
            head: HeadKind::Sigmoid,
        }
    }

    /// Diffusion net h: RGB+alpha+S+D plus the constant t channel in,
    /// diffused RGB out.
    pub fn h_default() -> Self {
        NetConfig {
            in_channels: 7,
            out_channels: 3,
            encoder: vec![16, 32, 64],
            bottleneck: 64,
            decoder: vec![64, 32, 16],
            head: HeadKind::Softplus,
        }
    }

    pub fn depth(&self) -> usize {
        self.encoder.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder.len() != self.decoder.len() {
            return Err(Error::invalid("encoder/decoder depths differ"));
        }
        if self.encoder.is_empty() {
            return Err(Error::invalid("network needs at least one level"));
        }
        if self.in_channels == 0
            || self.out_channels == 0
            || self.bottleneck == 0
            || self.encoder.iter().chain(&self.decoder).any(|f| *f == 0)
        {
            return Err(Error::invalid("all filter counts must be at least 1"));
        }
        Ok(())
    }

    /// Channels feeding decoder conv `i`: the upsampled path concatenated
    /// with the skip from the matching encoder level (upsampled first).
    fn decoder_in(&self, i: usize) -> usize {
        let up = if i == 0 { self.bottleneck } else { self.decoder[i - 1] };
        up + self.encoder[self.depth() - 1 - i]
    }
}

fn conv_init<T: Real>(rng: &mut impl Rng, cout: usize, cin: usize) -> Tensor<T> {
    let bound = (1.0 / (cin * 9) as f64).sqrt();
    let data = (0..cout * cin * 9)
        .map(|_| T::of(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::new(vec![cout, cin, 3, 3], data).expect("counted")
}

/// Create weights for one encoder-decoder net under `prefix`. Interior
/// convs get fan-in-scaled uniform weights and zero biases; the head is
/// fully zero.
pub fn init_unet<T: Real>(
    params: &mut ModelParams<T>,
    prefix: &str,
    config: &NetConfig,
    seed: u64,
) -> Result<()> {
    config.validate()?;
    let mut r = rng::stream(seed, &format!("init.{prefix}"), 0);
    let mut cin = config.in_channels;
    for (i, f) in config.encoder.iter().enumerate() {
        params.insert(&format!("{prefix}.enc{i}.w"), conv_init(&mut r, *f, cin))?;
        params.insert(&format!("{prefix}.enc{i}.b"), Tensor::zeros(vec![*f]))?;
        cin = *f;
    }
    params.insert(&format!("{prefix}.bottleneck.w"), conv_init(&mut r, config.bottleneck, cin))?;
    params.insert(&format!("{prefix}.bottleneck.b"), Tensor::zeros(vec![config.bottleneck]))?;
    for (i, f) in config.decoder.iter().enumerate() {
        let din = config.decoder_in(i);
        params.insert(&format!("{prefix}.dec{i}.w"), conv_init(&mut r, *f, din))?;
        params.insert(&format!("{prefix}.dec{i}.b"), Tensor::zeros(vec![*f]))?;
    }
    let last = *config.decoder.last().expect("nonempty");
    params.insert(
        &format!("{prefix}.head.w"),
        Tensor::zeros(vec![config.out_channels, last, 3, 3]),
    )?;
    params.insert(&format!("{prefix}.head.b"), Tensor::zeros(vec![config.out_channels]))?;
    Ok(())
}

/// Create the tint regressor weights: three strided conv blocks, global
/// average, zero-initialized linear head behind an exponential.
pub fn init_tint<T: Real>(params: &mut ModelParams<T>, seed: u64) -> Result<()> {
    let mut r = rng::stream(seed, "init.tint", 0);
    let mut cin = 3;
    for (i, f) in TINT_CHANNELS.iter().enumerate() {
        params.insert(&format!("tint.conv{i}.w"), conv_init(&mut r, *f, cin))?;
        params.insert(&format!("tint.conv{i}.b"), Tensor::zeros(vec![*f]))?;
        cin = *f;
    }
    params.insert("tint.head.w", Tensor::zeros(vec![3, cin]))?;
    params.insert("tint.head.b", Tensor::zeros(vec![3]))?;
    Ok(())
}

/// Fresh parameters for all three networks at the default sizes.
pub fn init_params<T: Real>(seed: u64) -> Result<ModelParams<T>> {
    let mut params = ModelParams::new();
    init_unet(&mut params, "g", &NetConfig::g_default(), seed)?;
    init_unet(&mut params, "h", &NetConfig::h_default(), seed)?;
    init_tint(&mut params, seed)?;
    Ok(params)
}

/// Reconstruct a net's shape from the stored tensors under `prefix`.
/// The head activation is a convention, not recoverable from shapes, so
/// the caller supplies it.
pub fn infer_config<T: Real>(
    params: &ModelParams<T>,
    prefix: &str,
    head: HeadKind,
) -> Result<NetConfig> {
    let mut encoder = Vec::new();
    while params.contains(&format!("{prefix}.enc{}.w", encoder.len())) {
        let w = params.get(&format!("{prefix}.enc{}.w", encoder.len()))?;
        encoder.push(w.shape()[0]);
    }
    if encoder.is_empty() {
        return Err(Error::invalid(format!("no {prefix:?} network in parameter store")));
    }
    let in_channels = params.get(&format!("{prefix}.enc0.w"))?.shape()[1];
    let bottleneck = params.get(&format!("{prefix}.bottleneck.w"))?.shape()[0];
    let mut decoder = Vec::new();
    while params.contains(&format!("{prefix}.dec{}.w", decoder.len())) {
        let w = params.get(&format!("{prefix}.dec{}.w", decoder.len()))?;
        decoder.push(w.shape()[0]);
    }
    let out_channels = params.get(&format!("{prefix}.head.w"))?.shape()[0];
    let config = NetConfig { in_channels, out_channels, encoder, bottleneck, decoder, head };
    config.validate()?;
    Ok(config)
}

/// A net's parameters registered as graph leaves, ready to apply.
pub struct LoadedUnet {
    pub config: NetConfig,
    enc: Vec<(NodeId, NodeId)>,
    bottleneck: (NodeId, NodeId),
    dec: Vec<(NodeId, NodeId)>,
    head: (NodeId, NodeId),
    /// (parameter name, leaf id) pairs, for gradient collection.
    pub nodes: Vec<(String, NodeId)>,
}

pub fn load_unet<T: Real>(
    graph: &mut Graph<T>,
    params: &ModelParams<T>,
    prefix: &str,
    head: HeadKind,
) -> Result<LoadedUnet> {
    let config = infer_config(params, prefix, head)?;
    let mut nodes = Vec::new();
    let pair = |graph: &mut Graph<T>, nodes: &mut Vec<(String, NodeId)>, stem: &str| -> Result<(NodeId, NodeId)> {
        let wname = format!("{prefix}.{stem}.w");
        let bname = format!("{prefix}.{stem}.b");
        let w = graph.leaf(params.get(&wname)?.clone());
        let b = graph.leaf(params.get(&bname)?.clone());
        nodes.push((wname, w));
        nodes.push((bname, b));
        Ok((w, b))
    };
    let enc = (0..config.depth())
        .map(|i| pair(graph, &mut nodes, &format!("enc{i}")))
        .collect::<Result<Vec<_>>>()?;
    let bottleneck = pair(graph, &mut nodes, "bottleneck")?;
    let dec = (0..config.depth())
        .map(|i| pair(graph, &mut nodes, &format!("dec{i}")))
        .collect::<Result<Vec<_>>>()?;
    let head = pair(graph, &mut nodes, "head")?;
    Ok(LoadedUnet { config, enc, bottleneck, dec, head, nodes })
}

/// Run the encoder-decoder on a (C, H, W) node. H and W must be divisible
/// by 2^depth so every blur-pool halving lands on even dims.
pub fn apply_unet<T: Real>(graph: &mut Graph<T>, net: &LoadedUnet, x: NodeId) -> Result<NodeId> {
    let (c, h, w) = graph.value(x).chw()?;
    let stride = 1usize << net.config.depth();
    if c != net.config.in_channels {
        return Err(Error::dims(format!(
            "network expects {} input channels, got {}",
            net.config.in_channels, c
        )));
    }
    if h % stride != 0 || w % stride != 0 || h < stride || w < stride {
        return Err(Error::dims(format!(
            "spatial dims {}x{} not divisible by 2^depth = {}",
            h, w, stride
        )));
    }
    let slope = T::of(LEAKY_SLOPE);
    let mut cur = x;
    let mut skips = Vec::with_capacity(net.config.depth());
    for (w, b) in &net.enc {
        let conv = graph.conv3x3(cur, *w, *b)?;
        let act = graph.leaky_relu(conv, slope);
        skips.push(act);
        cur = graph.blur_pool(act)?;
    }
    let conv = graph.conv3x3(cur, net.bottleneck.0, net.bottleneck.1)?;
    cur = graph.leaky_relu(conv, slope);
    for (i, (w, b)) in net.dec.iter().enumerate() {
        let up = graph.upsample2x(cur)?;
        let cat = graph.concat_c(up, skips[net.config.depth() - 1 - i])?;
        let conv = graph.conv3x3(cat, *w, *b)?;
        cur = graph.leaky_relu(conv, slope);
    }
    let logits = graph.conv3x3(cur, net.head.0, net.head.1)?;
    Ok(match net.config.head {
        HeadKind::Sigmoid => graph.sigmoid(logits),
        HeadKind::Softplus => graph.softplus(logits),
    })
}

pub struct LoadedTint {
    convs: Vec<(NodeId, NodeId)>,
    head: (NodeId, NodeId),
    pub nodes: Vec<(String, NodeId)>,
}

pub fn load_tint<T: Real>(graph: &mut Graph<T>, params: &ModelParams<T>) -> Result<LoadedTint> {
    let mut nodes = Vec::new();
    let pair = |graph: &mut Graph<T>, nodes: &mut Vec<(String, NodeId)>, stem: &str| -> Result<(NodeId, NodeId)> {
        let wname = format!("tint.{stem}.w");
        let bname = format!("tint.{stem}.b");
        let w = graph.leaf(params.get(&wname)?.clone());
        let b = graph.leaf(params.get(&bname)?.clone());
        nodes.push((wname, w));
        nodes.push((bname, b));
        Ok((w, b))
    };
    let convs = (0..TINT_CHANNELS.len())
        .map(|i| pair(graph, &mut nodes, &format!("conv{i}")))
        .collect::<Result<Vec<_>>>()?;
    let head = pair(graph, &mut nodes, "head")?;
    Ok(LoadedTint { convs, head, nodes })
}

/// Tint regressor on a (3, 32, 32) crop node; outputs a positive RGB
/// triple via an exponential head.
pub fn apply_tint<T: Real>(graph: &mut Graph<T>, net: &LoadedTint, x: NodeId) -> Result<NodeId> {
    let (c, h, w) = graph.value(x).chw()?;
    if c != 3 || h != TINT_CROP || w != TINT_CROP {
        return Err(Error::dims(format!("tint crop must be 3x{TINT_CROP}x{TINT_CROP}, got {c}x{h}x{w}")));
    }
    let slope = T::of(LEAKY_SLOPE);
    let mut cur = x;
    for (w, b) in &net.convs {
        let conv = graph.conv3x3(cur, *w, *b)?;
        let act = graph.leaky_relu(conv, slope);
        cur = graph.blur_pool(act)?;
    }
    let avg = graph.global_avg(cur)?;
    let lin = graph.linear(avg, net.head.0, net.head.1)?;
    Ok(graph.exp(lin))
}

/// g: RGB+alpha image (4, H, W) → specular+shadow maps (2, H, W) in [0,1].
pub fn forward_specshadow<T: Real>(
    params: &ModelParams<T>,
    input: &Tensor<T>,
) -> Result<Tensor<T>> {
    let mut graph = Graph::new();
    let net = load_unet(&mut graph, params, "g", HeadKind::Sigmoid)?;
    let x = graph.leaf(input.clone());
    let y = apply_unet(&mut graph, &net, x)?;
    if !graph.value(y).all_finite() {
        return Err(Error::NonFinite("network output".into()));
    }
    Ok(graph.value(y).clone())
}

/// h: (RGB+alpha+S+D) and scalar t ∈ [0,1] → non-negative diffused RGB.
/// t is broadcast to a constant seventh channel.
pub fn forward_diffusion<T: Real>(
    params: &ModelParams<T>,
    input: &Tensor<T>,
    t: T,
) -> Result<Tensor<T>> {
    if !(t >= T::zero() && t <= T::one()) {
        return Err(Error::invalid(format!(
            "diffusion parameter t = {} outside [0, 1]",
            t.as_f64()
        )));
    }
    let (c, h, w) = input.chw()?;
    if c != 6 {
        return Err(Error::dims(format!("diffusion input wants 6 channels (RGB+alpha+S+D), got {c}")));
    }
    let tchan = Tensor::full(vec![1, h, w], t);
    let full = Tensor::concat_channels(&[input, &tchan])?;
    let mut graph = Graph::new();
    let net = load_unet(&mut graph, params, "h", HeadKind::Softplus)?;
    let x = graph.leaf(full);
    let y = apply_unet(&mut graph, &net, x)?;
    if !graph.value(y).all_finite() {
        return Err(Error::NonFinite("network output".into()));
    }
    Ok(graph.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_tensor(shape: Vec<usize>, seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
        let mut r = rng::stream(seed, "unet-test", 0);
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| r.gen_range(lo..hi)).collect()).unwrap()
    }

    #[test]
    fn g_output_shape_mirrors_input() {
        let params = init_params::<f64>(7).unwrap();
        let x = random_tensor(vec![4, 64, 64], 1, 0.0, 1.0);
        let y = forward_specshadow(&params, &x).unwrap();
        assert_eq!(y.shape(), &[2, 64, 64]);
    }

    #[test]
    fn zero_heads_pin_initial_outputs() {
        let params = init_params::<f64>(3).unwrap();
        let x = random_tensor(vec![4, 16, 16], 2, 0.0, 2.0);
        let y = forward_specshadow(&params, &x).unwrap();
        for v in y.data() {
            assert_eq!(*v, 0.5); // sigmoid(0)
        }
        let x6 = random_tensor(vec![6, 16, 16], 3, 0.0, 2.0);
        let d = forward_diffusion(&params, &x6, 0.3).unwrap();
        let ln2 = 2f64.ln();
        for v in d.data() {
            assert_eq!(*v, ln2); // softplus(0)
        }
        let mut graph = Graph::new();
        let tint = load_tint(&mut graph, &params).unwrap();
        let crop = graph.leaf(random_tensor(vec![3, 32, 32], 4, 0.0, 1.0));
        let out = apply_tint(&mut graph, &tint, crop).unwrap();
        assert_eq!(graph.value(out).data(), &[1.0, 1.0, 1.0]); // exp(0)
    }

    #[test]
    fn g_outputs_stay_in_unit_interval() {
        for trial in 0..100u64 {
            let params = init_params::<f64>(trial).unwrap();
            let x = random_tensor(vec![4, 16, 16], 1000 + trial, -1.0, 3.0);
            let y = forward_specshadow(&params, &x).unwrap();
            for v in y.data() {
                assert!(*v >= 0.0 && *v <= 1.0);
            }
        }
    }

    #[test]
    fn diffusion_rejects_t_outside_unit_interval() {
        let params = init_params::<f64>(5).unwrap();
        let x = random_tensor(vec![6, 16, 16], 6, 0.0, 1.0);
        assert!(forward_diffusion(&params, &x, -0.01).unwrap_err().is_invalid_input());
        assert!(forward_diffusion(&params, &x, 1.0001).unwrap_err().is_invalid_input());
        assert!(forward_diffusion(&params, &x, f64::NAN).is_err());
        assert!(forward_diffusion(&params, &x, 0.0).is_ok());
        assert!(forward_diffusion(&params, &x, 1.0).is_ok());
    }

    #[test]
    fn spatial_dims_must_divide_by_eight() {
        let params = init_params::<f64>(5).unwrap();
        let x = random_tensor(vec![4, 20, 20], 6, 0.0, 1.0);
        assert!(forward_specshadow(&params, &x).is_err());
        let x3 = random_tensor(vec![3, 16, 16], 6, 0.0, 1.0);
        assert!(forward_specshadow(&params, &x3).is_err()); // channel count
    }

    #[test]
    fn forward_is_deterministic() {
        let params = init_params::<f64>(11).unwrap();
        let x = random_tensor(vec![4, 16, 16], 12, 0.0, 1.0);
        let a = forward_specshadow(&params, &x).unwrap();
        let b = forward_specshadow(&params, &x).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn config_survives_shape_inference() {
        let config = NetConfig {
            in_channels: 5,
            out_channels: 2,
            encoder: vec![3, 4],
            bottleneck: 6,
            decoder: vec![5, 3],
            head: HeadKind::Softplus,
        };
        let mut params = ModelParams::<f64>::new();
        init_unet(&mut params, "h", &config, 1).unwrap();
        let inferred = infer_config(&params, "h", HeadKind::Softplus).unwrap();
        assert_eq!(inferred, config);
        assert!(infer_config(&params, "g", HeadKind::Sigmoid).is_err());
    }

    #[test]
    fn init_is_seed_deterministic_and_bounded() {
        let a = init_params::<f64>(42).unwrap();
        let b = init_params::<f64>(42).unwrap();
        for ((na, ta), (nb, tb)) in a.iter().zip(b.iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta.data(), tb.data());
        }
        // fan-in bound on the first g conv: 4 channels × 9 taps
        let bound = (1.0 / 36.0f64).sqrt();
        for v in a.get("g.enc0.w").unwrap().data() {
            assert!(v.abs() < bound);
        }
    }
}
