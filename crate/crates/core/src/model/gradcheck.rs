//! Finite-difference verification of reverse-mode gradients.
//!
//! The builder closure constructs the forward graph from a parameter store
//! and reports which leaves correspond to which parameters; the checker
//! compares each sampled parameter's tape gradient against a central
//! difference of the rebuilt loss.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Real;

use super::graph::{Graph, NodeId};
use super::params::ModelParams;

/// Builds the scalar loss from `params`, returning the loss node and the
/// (name, leaf id) pairs of every parameter the graph consumed.
pub type BuildLoss<'a, T> =
    dyn Fn(&mut Graph<T>, &ModelParams<T>) -> Result<(NodeId, Vec<(String, NodeId)>)> + 'a;

const FD_STEP: f64 = 1e-4;

/// Max relative error between tape and central-difference gradients over
/// `samples` randomly chosen parameter elements (all elements if the net
/// is smaller). Relative error uses max(|g_ad|, |g_fd|, 1e-8) as scale.
pub fn grad_check<T: Real>(
    params: &ModelParams<T>,
    build: &BuildLoss<'_, T>,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let mut graph = Graph::new();
    let (loss, nodes) = build(&mut graph, params)?;
    if graph.value(loss).numel() != 1 {
        return Err(Error::invalid("gradient check needs a scalar loss"));
    }
    let grads = graph.backward(loss)?;
    let ad: HashMap<&str, &[T]> = nodes
        .iter()
        .map(|(name, id)| (name.as_str(), grads.of(*id).unwrap_or(&[])))
        .collect();

    // Flat index space over the parameters the builder actually used.
    let used: Vec<(&str, usize)> = nodes
        .iter()
        .map(|(name, _)| Ok((name.as_str(), params.get(name)?.numel())))
        .collect::<Result<_>>()?;
    let total: usize = used.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(Error::invalid("no parameters to check"));
    }
    let mut r = rng::stream(seed, "gradcheck", 0);
    let picks: Vec<usize> = if total <= samples {
        (0..total).collect()
    } else {
        (0..samples).map(|_| r.gen_range(0..total)).collect()
    };

    let step = T::of(FD_STEP);
    let mut max_rel = 0.0f64;
    for flat in picks {
        let mut offset = flat;
        let mut name = used[0].0;
        for (n, count) in &used {
            if offset < *count {
                name = n;
                break;
            }
            offset -= count;
        }
        let g_ad = ad.get(name).and_then(|g| g.get(offset)).copied().unwrap_or(T::zero());

        let eval = |delta: T| -> Result<T> {
            let mut perturbed = params.clone();
            perturbed.get_mut(name)?.data_mut()[offset] += delta;
            let mut graph = Graph::new();
            let (loss, _) = build(&mut graph, &perturbed)?;
            Ok(graph.value(loss).data()[0])
        };
        let g_fd = (eval(step)?.as_f64() - eval(-step)?.as_f64()) / (2.0 * FD_STEP);
        if !g_fd.is_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        let scale = g_ad.as_f64().abs().max(g_fd.abs()).max(1e-8);
        max_rel = max_rel.max((g_ad.as_f64() - g_fd).abs() / scale);
    }
    Ok(max_rel)
}
