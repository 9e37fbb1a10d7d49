//! Image-quality metrics over the subject matte. MAE and MSE run on raw
//! linear RGB; SSIM runs on luminance clamped to [0, 1] so its stabilizing
//! constants keep their usual meaning. All three ignore pixels with zero
//! alpha.

use serde::{Deserialize, Serialize};

use crate::envmap::luminance_raw;
use crate::error::{Error, Result};
use crate::image::{ImageBuffer, ScalarImage};
use crate::scalar::Real;

const WINDOW_RADIUS: isize = 5;
const WINDOW_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MetricsReport<T> {
    pub mae: T,
    pub mse: T,
    pub ssim: T,
}

impl<T: Real> MetricsReport<T> {
    /// Plain average of per-example reports.
    pub fn mean(reports: &[MetricsReport<T>]) -> Result<MetricsReport<T>> {
        if reports.is_empty() {
            return Err(Error::invalid("no metrics reports to aggregate"));
        }
        let k = T::of_usize(reports.len());
        let mut sum = MetricsReport { mae: T::zero(), mse: T::zero(), ssim: T::zero() };
        for r in reports {
            sum.mae += r.mae;
            sum.mse += r.mse;
            sum.ssim += r.ssim;
        }
        Ok(MetricsReport { mae: sum.mae / k, mse: sum.mse / k, ssim: sum.ssim / k })
    }
}

/// MAE, MSE over the RGB channels of alpha>0 pixels, and mean SSIM with an
/// 11x11 Gaussian window over alpha>0 centers. Window statistics use every
/// in-bounds pixel (weights renormalized at the borders); only the averaging
/// of the SSIM map respects the matte. Symmetric in pred and gt.
pub fn metrics<T: Real>(
    pred: &ImageBuffer<T>,
    gt: &ImageBuffer<T>,
    alpha: &ScalarImage<T>,
) -> Result<MetricsReport<T>> {
    if !pred.same_size(gt) || pred.width() != alpha.width() || pred.height() != alpha.height() {
        return Err(Error::dims("metrics inputs differ in size"));
    }
    let inside: Vec<bool> = alpha.data().iter().map(|a| *a > T::zero()).collect();
    let count = inside.iter().filter(|m| **m).count();
    if count == 0 {
        return Err(Error::invalid("no alpha>0 pixels to score"));
    }

    let mut abs = T::zero();
    let mut sq = T::zero();
    for (i, m) in inside.iter().enumerate() {
        if !*m {
            continue;
        }
        let p = pred.pixels()[i];
        let g = gt.pixels()[i];
        for ch in 0..3 {
            let d = p[ch] - g[ch];
            abs += d.abs();
            sq += d * d;
        }
    }
    let denom = T::of_usize(3 * count);

    let lum = |img: &ImageBuffer<T>| -> Vec<T> {
        img.pixels()
            .iter()
            .map(|px| luminance_raw([px[0], px[1], px[2]]).clamp01())
            .collect()
    };
    let ssim = ssim_mean(&lum(pred), &lum(gt), &inside, pred.width(), pred.height());

    Ok(MetricsReport { mae: abs / denom, mse: sq / denom, ssim })
}

fn ssim_mean<T: Real>(x: &[T], y: &[T], inside: &[bool], width: usize, height: usize) -> T {
    let mut kernel = [[T::zero(); 11]; 11];
    for dy in -WINDOW_RADIUS..=WINDOW_RADIUS {
        for dx in -WINDOW_RADIUS..=WINDOW_RADIUS {
            let r2 = (dx * dx + dy * dy) as f64;
            kernel[(dy + WINDOW_RADIUS) as usize][(dx + WINDOW_RADIUS) as usize] =
                T::of((-r2 / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp());
        }
    }
    let c1 = T::of(C1);
    let c2 = T::of(C2);

    let mut total = T::zero();
    let mut count = 0usize;
    for py in 0..height as isize {
        for px in 0..width as isize {
            if !inside[py as usize * width + px as usize] {
                continue;
            }
            let mut w_sum = T::zero();
            let mut mx = T::zero();
            let mut my = T::zero();
            let mut mxx = T::zero();
            let mut myy = T::zero();
            let mut mxy = T::zero();
            for dy in -WINDOW_RADIUS..=WINDOW_RADIUS {
                let sy = py + dy;
                if sy < 0 || sy >= height as isize {
                    continue;
                }
                for dx in -WINDOW_RADIUS..=WINDOW_RADIUS {
                    let sx = px + dx;
                    if sx < 0 || sx >= width as isize {
                        continue;
                    }
                    let w = kernel[(dy + WINDOW_RADIUS) as usize][(dx + WINDOW_RADIUS) as usize];
                    let xv = x[sy as usize * width + sx as usize];
                    let yv = y[sy as usize * width + sx as usize];
                    w_sum += w;
                    mx += w * xv;
                    my += w * yv;
                    mxx += w * (xv * xv);
                    myy += w * (yv * yv);
                    // Grouped so the product commutes bitwise under swap.
                    mxy += w * (xv * yv);
                }
            }
            mx /= w_sum;
            my /= w_sum;
            let vx = mxx / w_sum - mx * mx;
            let vy = myy / w_sum - my * my;
            let cov = mxy / w_sum - mx * my;
            let num = (T::two() * mx * my + c1) * (T::two() * cov + c2);
            let den = (mx * mx + my * my + c1) * (vx + vy + c2);
            total += num / den;
            count += 1;
        }
    }
    total / T::of_usize(count)
}
