//! 8-bit PNG output for previews (sRGB-encoded) and binary masks, plus mask
//! loading. HDR data itself always travels as PFM/HDR; PNG is for eyes only.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{ImageBuffer, Mask};
use crate::scalar::Real;

fn srgb_encode(linear: f64) -> u8 {
    let l = linear.clamp(0.0, 1.0);
    let s = if l <= 0.003_130_8 {
        12.92 * l
    } else {
        1.055 * l.powf(1.0 / 2.4) - 0.055
    };
    (s * 255.0).round() as u8
}

pub fn save_srgb_preview<T: Real>(path: &Path, img: &ImageBuffer<T>) -> Result<()> {
    let (w, h) = (img.width(), img.height());
    let mut out = ::image::RgbaImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let p = img.get(x, y);
            out.put_pixel(
                x as u32,
                y as u32,
                ::image::Rgba([
                    srgb_encode(p[0].as_f64()),
                    srgb_encode(p[1].as_f64()),
                    srgb_encode(p[2].as_f64()),
                    (p[3].as_f64().clamp(0.0, 1.0) * 255.0).round() as u8,
                ]),
            );
        }
    }
    out.save(path).map_err(|e| Error::format(format!("png write: {}", e)))
}

pub fn save_mask(path: &Path, mask: &Mask) -> Result<()> {
    let mut out = ::image::GrayImage::new(mask.width() as u32, mask.height() as u32);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            out.put_pixel(
                x as u32,
                y as u32,
                ::image::Luma([if mask.get(x, y) { 255 } else { 0 }]),
            );
        }
    }
    out.save(path).map_err(|e| Error::format(format!("png write: {}", e)))
}

pub fn load_mask(path: &Path) -> Result<Mask> {
    let img = ::image::open(path)
        .map_err(|e| Error::format(format!("png read: {}", e)))?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut mask = Mask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            mask.set(x, y, img.get_pixel(x as u32, y as u32).0[0] >= 128);
        }
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let mut mask = Mask::new(5, 3);
        mask.set(0, 0, true);
        mask.set(4, 2, true);
        mask.set(2, 1, true);
        save_mask(&path, &mask).unwrap();
        let back = load_mask(&path).unwrap();
        assert_eq!(back, mask);
    }

    #[test]
    fn preview_encodes_srgb() {
        // Linear 1.0 must map to 255, linear 0 to 0, and mid grey brightens.
        assert_eq!(srgb_encode(1.0), 255);
        assert_eq!(srgb_encode(0.0), 0);
        assert_eq!(srgb_encode(0.5), 188);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.png");
        let mut img = ImageBuffer::<f32>::new(2, 1);
        img.set(0, 0, [1.0, 0.5, 0.0, 1.0]);
        img.set(1, 0, [0.0, 0.0, 0.0, 0.0]);
        save_srgb_preview(&path, &img).unwrap();
        let back = ::image::open(&path).unwrap().to_rgba8();
        assert_eq!(back.get_pixel(0, 0).0, [255, 188, 0, 255]);
        assert_eq!(back.get_pixel(1, 0).0, [0, 0, 0, 0]);
    }
}
