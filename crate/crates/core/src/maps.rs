//! Specular/shadow map extraction. Comparing an input render against its
//! diffused counterpart on luminance yields two single-channel maps: S marks
//! where the input is brighter than the diffuse image (highlights), D where
//! it is darker (shadows). The pair is mutually exclusive by construction
//! and algebraically invertible outside the clamp.

use crate::envmap::luminance_raw;
use crate::error::{Error, Result};
use crate::image::{ImageBuffer, ScalarImage};
use crate::scalar::Real;

/// Denominator guard; near-black pixels yield unreliable ratios that the
/// alpha matte is expected to mask out in any loss.
const EPS: f64 = 1e-4;
/// D at or above this has destroyed the ratio needed for inversion.
const SATURATION: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct SpecShadowPair<T> {
    pub specular: ScalarImage<T>,
    pub shadow: ScalarImage<T>,
}

/// S = clamp(1 − lum(I_d)/(lum(I)+ε)), D = clamp(1 − lum(I)/(lum(I_d)+ε)),
/// zero outside the matte. Exactly one of S, D is nonzero per pixel: the
/// raw formulas let both go positive in a band of width ε around equal
/// luminance, so the dimmer side is forced to zero.
pub fn compute_spec_shadow<T: Real>(
    input: &ImageBuffer<T>,
    diffuse: &ImageBuffer<T>,
    alpha: &ScalarImage<T>,
) -> Result<SpecShadowPair<T>> {
    if !input.same_size(diffuse)
        || input.width() != alpha.width()
        || input.height() != alpha.height()
    {
        return Err(Error::dims("input, diffuse, and alpha sizes differ"));
    }
    let eps = T::of(EPS);
    let n = input.width() * input.height();
    let mut s = Vec::with_capacity(n);
    let mut d = Vec::with_capacity(n);
    for i in 0..n {
        if alpha.data()[i] <= T::zero() {
            s.push(T::zero());
            d.push(T::zero());
            continue;
        }
        let px = input.pixels()[i];
        let pd = diffuse.pixels()[i];
        let li = luminance_raw([px[0], px[1], px[2]]);
        let ld = luminance_raw([pd[0], pd[1], pd[2]]);
        if li > ld {
            s.push((T::one() - ld / (li + eps)).clamp01());
            d.push(T::zero());
        } else if ld > li {
            s.push(T::zero());
            d.push((T::one() - li / (ld + eps)).clamp01());
        } else {
            s.push(T::zero());
            d.push(T::zero());
        }
    }
    Ok(SpecShadowPair {
        specular: ScalarImage::from_data(input.width(), input.height(), s)?,
        shadow: ScalarImage::from_data(input.width(), input.height(), d)?,
    })
}

/// Algebraic inverse of the extraction: recovers the diffuse luminance from
/// the input and its map pair. lum(I)·(1−S) where S > 0, lum(I)/(1−D)
/// where D > 0, lum(I) where both are zero.
pub fn reconstruct_diffuse<T: Real>(
    input: &ImageBuffer<T>,
    pair: &SpecShadowPair<T>,
) -> Result<ScalarImage<T>> {
    if input.width() != pair.specular.width()
        || input.height() != pair.specular.height()
        || input.width() != pair.shadow.width()
        || input.height() != pair.shadow.height()
    {
        return Err(Error::dims("image and map sizes differ"));
    }
    let saturated = T::one() - T::of(SATURATION);
    let mut out = Vec::with_capacity(input.pixels().len());
    for (i, px) in input.pixels().iter().enumerate() {
        let li = luminance_raw([px[0], px[1], px[2]]);
        let s = pair.specular.data()[i];
        let d = pair.shadow.data()[i];
        let v = if s > T::zero() {
            li * (T::one() - s)
        } else if d > T::zero() {
            if d >= saturated {
                return Err(Error::SaturatedShadow);
            }
            li / (T::one() - d)
        } else {
            li
        };
        out.push(v);
    }
    ScalarImage::from_data(input.width(), input.height(), out)
}

/// Linear-space matte blend: alpha·fg + (1−alpha)·bg.
pub fn composite<T: Real>(
    fg: &ImageBuffer<T>,
    alpha: &ScalarImage<T>,
    bg: &ImageBuffer<T>,
) -> Result<ImageBuffer<T>> {
    if !fg.same_size(bg) || fg.width() != alpha.width() || fg.height() != alpha.height() {
        return Err(Error::dims("foreground, alpha, and background sizes differ"));
    }
    let pixels = fg
        .pixels()
        .iter()
        .zip(bg.pixels())
        .zip(alpha.data())
        .map(|((f, b), a)| {
            let ia = T::one() - *a;
            [
                *a * f[0] + ia * b[0],
                *a * f[1] + ia * b[1],
                *a * f[2] + ia * b[2],
                *a + ia * b[3],
            ]
        })
        .collect();
    ImageBuffer::from_pixels(fg.width(), fg.height(), pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray_image(width: usize, height: usize, lum: f64, alpha: f64) -> ImageBuffer<f64> {
        // Equal RGB so the pixel luminance equals the channel value.
        ImageBuffer::from_pixels(width, height, vec![[lum, lum, lum, alpha]; width * height])
            .unwrap()
    }

    fn full_alpha(width: usize, height: usize) -> ScalarImage<f64> {
        ScalarImage::from_data(width, height, vec![1.0; width * height]).unwrap()
    }

    #[test]
    fn brighter_input_yields_specular_only() {
        let i = gray_image(2, 2, 0.8, 1.0);
        let d = gray_image(2, 2, 0.6, 1.0);
        let pair = compute_spec_shadow(&i, &d, &full_alpha(2, 2)).unwrap();
        for k in 0..4 {
            assert!((pair.specular.data()[k] - 0.25).abs() < 1e-3);
            assert_eq!(pair.shadow.data()[k], 0.0);
        }
    }

    #[test]
    fn darker_input_yields_shadow_only() {
        let i = gray_image(2, 2, 0.3, 1.0);
        let d = gray_image(2, 2, 0.6, 1.0);
        let pair = compute_spec_shadow(&i, &d, &full_alpha(2, 2)).unwrap();
        for k in 0..4 {
            assert_eq!(pair.specular.data()[k], 0.0);
            assert!((pair.shadow.data()[k] - 0.5).abs() < 1e-3);
        }
    }

    #[test]
    fn identical_images_give_zero_maps() {
        let i = gray_image(3, 3, 0.47, 1.0);
        let pair = compute_spec_shadow(&i, &i.clone(), &full_alpha(3, 3)).unwrap();
        assert!(pair.specular.data().iter().all(|v| *v == 0.0));
        assert!(pair.shadow.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn maps_vanish_outside_matte() {
        let i = gray_image(2, 1, 0.9, 0.0);
        let d = gray_image(2, 1, 0.1, 0.0);
        let alpha = ScalarImage::from_data(2, 1, vec![0.0, 1.0]).unwrap();
        let pair = compute_spec_shadow(&i, &d, &alpha).unwrap();
        assert_eq!(pair.specular.data()[0], 0.0);
        assert!(pair.specular.data()[1] > 0.0);
    }

    #[test]
    fn mutual_exclusivity_is_exact() {
        // Mixed random-ish pattern including near-equal luminances inside
        // the ε band where the raw formulas would let both maps go positive.
        let w = 16;
        let mut pi = Vec::new();
        let mut pd = Vec::new();
        for k in 0..w {
            let li = 0.1 + 0.05 * k as f64;
            let ld = li + if k % 3 == 0 { 2e-5 } else { 0.3 * (k as f64 - 8.0) / 8.0 };
            pi.push([li, li, li, 1.0]);
            pd.push([ld.max(0.0), ld.max(0.0), ld.max(0.0), 1.0]);
        }
        let i = ImageBuffer::from_pixels(w, 1, pi).unwrap();
        let d = ImageBuffer::from_pixels(w, 1, pd).unwrap();
        let pair = compute_spec_shadow(&i, &d, &full_alpha(w, 1)).unwrap();
        for k in 0..w {
            let s = pair.specular.data()[k];
            let dd = pair.shadow.data()[k];
            assert!(s.min(dd) == 0.0, "pixel {}: S={} D={}", k, s, dd);
            assert!((0.0..=1.0).contains(&s) && (0.0..=1.0).contains(&dd));
        }
    }

    #[test]
    fn round_trip_recovers_diffuse_luminance() {
        let w = 8;
        let mut pi = Vec::new();
        let mut pd = Vec::new();
        for k in 0..w {
            let li = 0.2 + 0.1 * k as f64;
            let ld = 0.9 - 0.08 * k as f64;
            pi.push([li, li, li, 1.0]);
            pd.push([ld, ld, ld, 1.0]);
        }
        let i = ImageBuffer::from_pixels(w, 1, pi).unwrap();
        let d = ImageBuffer::from_pixels(w, 1, pd).unwrap();
        let pair = compute_spec_shadow(&i, &d, &full_alpha(w, 1)).unwrap();
        let rec = reconstruct_diffuse(&i, &pair).unwrap();
        for k in 0..w {
            let truth = d.rgb(k, 0)[0] * (0.2126 + 0.7152 + 0.0722);
            assert!(
                (rec.data()[k] - truth).abs() < 1e-3,
                "pixel {}: {} vs {}",
                k,
                rec.data()[k],
                truth
            );
        }
    }

    #[test]
    fn zero_maps_reconstruct_identity() {
        let i = gray_image(3, 2, 0.37, 1.0);
        let pair = compute_spec_shadow(&i, &i.clone(), &full_alpha(3, 2)).unwrap();
        let rec = reconstruct_diffuse(&i, &pair).unwrap();
        let lum = 0.37 * (0.2126 + 0.7152 + 0.0722);
        for v in rec.data() {
            assert!((v - lum).abs() < 1e-12);
        }
    }

    #[test]
    fn near_black_input_saturates_shadow() {
        let i = gray_image(1, 1, 1e-10, 1.0);
        let d = gray_image(1, 1, 0.6, 1.0);
        let pair = compute_spec_shadow(&i, &d, &full_alpha(1, 1)).unwrap();
        match reconstruct_diffuse(&i, &pair) {
            Err(Error::SaturatedShadow) => {}
            other => panic!("expected saturated-shadow error, got {:?}", other),
        }
    }

    #[test]
    fn maps_are_exposure_invariant() {
        let w = 6;
        let mk = |scale: f64| {
            let mut pi = Vec::new();
            let mut pd = Vec::new();
            for k in 0..w {
                let li = scale * (0.2 + 0.1 * k as f64);
                let ld = scale * (0.7 - 0.07 * k as f64);
                pi.push([li, li, li, 1.0]);
                pd.push([ld, ld, ld, 1.0]);
            }
            (
                ImageBuffer::from_pixels(w, 1, pi).unwrap(),
                ImageBuffer::from_pixels(w, 1, pd).unwrap(),
            )
        };
        let (i1, d1) = mk(1.0);
        let base = compute_spec_shadow(&i1, &d1, &full_alpha(w, 1)).unwrap();
        for scale in [0.25, 0.5, 2.0, 4.0] {
            let (i, d) = mk(scale);
            let pair = compute_spec_shadow(&i, &d, &full_alpha(w, 1)).unwrap();
            for k in 0..w {
                assert!((pair.specular.data()[k] - base.specular.data()[k]).abs() < 1e-3);
                assert!((pair.shadow.data()[k] - base.shadow.data()[k]).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn composite_blends_linearly() {
        let fg = gray_image(2, 1, 1.0, 1.0);
        let bg = gray_image(2, 1, 0.0, 1.0);
        let alpha = ScalarImage::from_data(2, 1, vec![0.5, 1.0]).unwrap();
        let out = composite(&fg, &alpha, &bg).unwrap();
        assert!((out.rgb(0, 0)[0] - 0.5).abs() < 1e-12);
        assert!((out.rgb(1, 0)[0] - 1.0).abs() < 1e-12);

        let zeros = ScalarImage::from_data(2, 1, vec![0.0; 2]).unwrap();
        let out = composite(&fg, &zeros, &bg).unwrap();
        assert_eq!(out.pixels(), bg.pixels());

        // Idempotent when fg == bg.
        let out = composite(&fg, &alpha, &fg.clone()).unwrap();
        assert_eq!(out.pixels(), fg.pixels());
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let a = gray_image(2, 2, 0.5, 1.0);
        let b = gray_image(3, 2, 0.5, 1.0);
        assert!(compute_spec_shadow(&a, &b, &full_alpha(2, 2)).is_err());
        assert!(composite(&a, &full_alpha(2, 2), &b).is_err());
    }
}
