//! Albedo estimation by iterated diffusion, plus the tint workflow that
//! turns a tinted-albedo estimate into a lighting-free albedo.
//!
//! Running g then h at t=0 once removes most directional lighting; feeding
//! the result back in and repeating converges toward the subject under
//! perfectly even light, i.e. albedo times the environment's mean color.
//! A small regressor estimates that tint from a skin crop so it can be
//! divided out.

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::scalar::Real;

use super::graph::Graph;
use super::params::ModelParams;
use super::tensor::Tensor;
use super::unet::{apply_tint, forward_diffusion, forward_specshadow, load_tint, TINT_CROP};

/// Tint components at or below this are too dark to divide out.
pub const TINT_FLOOR: f64 = 1e-3;
/// Untinted albedo is clamped to [0, this].
pub const ALBEDO_CLAMP: f64 = 4.0;

/// N-fold g→h(t=0) iteration on an RGB+alpha input; returns the final
/// (3, H, W) tinted-albedo estimate. N=1 is a single diffusion pass.
pub fn iterated_albedo<T: Real>(
    params: &ModelParams<T>,
    input: &Tensor<T>,
    n: usize,
) -> Result<Tensor<T>> {
    if n == 0 {
        return Err(Error::invalid("iterated albedo needs at least one iteration"));
    }
    let (c, h, w) = input.chw()?;
    if c != 4 {
        return Err(Error::dims(format!("albedo input wants RGB+alpha, got {c} channels")));
    }
    let alpha = input.channel_tensor(3)?;
    let mut current = input.clone();
    let mut estimate = Tensor::zeros(vec![3, h, w]);
    for _ in 0..n {
        let sd = forward_specshadow(params, &current)?;
        let s = sd.channel_tensor(0)?;
        let d = sd.channel_tensor(1)?;
        let h_in = Tensor::concat_channels(&[&current, &s, &d])?;
        estimate = forward_diffusion(params, &h_in, T::zero())?;
        current = Tensor::concat_channels(&[&estimate, &alpha])?;
    }
    Ok(estimate)
}

/// Crop the bounding box of skin pixels (mask > 0.5) out of a (3, H, W)
/// image and bilinearly resize it to the tint net's 32×32 input.
pub fn skin_crop<T: Real>(image: &Tensor<T>, skin: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = image.chw()?;
    if c != 3 {
        return Err(Error::dims("skin crop wants an RGB tensor"));
    }
    if skin.shape() != [1, h, w] {
        return Err(Error::dims("skin mask shape mismatch"));
    }
    let half = T::half();
    let mut r0 = h;
    let mut r1 = 0usize;
    let mut c0 = w;
    let mut c1 = 0usize;
    for y in 0..h {
        for x in 0..w {
            if skin.data()[y * w + x] > half {
                r0 = r0.min(y);
                r1 = r1.max(y);
                c0 = c0.min(x);
                c1 = c1.max(x);
            }
        }
    }
    if r0 > r1 {
        return Err(Error::EmptySkinRegion);
    }
    let bh = (r1 - r0 + 1) as f64;
    let bw = (c1 - c0 + 1) as f64;
    let s = TINT_CROP;
    let mut data = vec![T::zero(); 3 * s * s];
    for oy in 0..s {
        let fy = ((oy as f64 + 0.5) * bh / s as f64 - 0.5).clamp(0.0, bh - 1.0);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(r1 - r0);
        let wy = T::of(fy - y0 as f64);
        for ox in 0..s {
            let fx = ((ox as f64 + 0.5) * bw / s as f64 - 0.5).clamp(0.0, bw - 1.0);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(c1 - c0);
            let wx = T::of(fx - x0 as f64);
            for ch in 0..3 {
                let plane = image.channel(ch);
                let sample = |yy: usize, xx: usize| plane[(r0 + yy) * w + (c0 + xx)];
                let top = sample(y0, x0) * (T::one() - wx) + sample(y0, x1) * wx;
                let bot = sample(y1, x0) * (T::one() - wx) + sample(y1, x1) * wx;
                data[ch * s * s + oy * s + ox] = top * (T::one() - wy) + bot * wy;
            }
        }
    }
    Tensor::new(vec![3, s, s], data)
}

/// Run the tint regressor on a 32×32 crop; returns a positive RGB triple.
pub fn estimate_tint<T: Real>(params: &ModelParams<T>, crop: &Tensor<T>) -> Result<[T; 3]> {
    let mut graph = Graph::new();
    let net = load_tint(&mut graph, params)?;
    let x = graph.leaf(crop.clone());
    let y = apply_tint(&mut graph, &net, x)?;
    let d = graph.value(y).data();
    Ok([d[0], d[1], d[2]])
}

/// Channelwise division by the tint, clamped to [0, 4]. Alpha passes
/// through untouched.
pub fn untint<T: Real>(tinted: &ImageBuffer<T>, tint: [T; 3]) -> Result<ImageBuffer<T>> {
    for c in tint {
        if !(c.as_f64() > TINT_FLOOR) {
            return Err(Error::DegenerateTint(c.as_f64()));
        }
    }
    let hi = T::of(ALBEDO_CLAMP);
    let mut out = tinted.clone();
    for px in out.pixels_mut() {
        for ch in 0..3 {
            px[ch] = (px[ch] / tint[ch]).max(T::zero()).min(hi);
        }
    }
    Ok(out)
}
