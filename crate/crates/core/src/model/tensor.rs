//! Dense row-major tensor. Images are stored CHW; vectors are rank 1.

use crate::error::{Error, Result};
use crate::image::{ImageBuffer, ScalarImage};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::dims(format!(
                "tensor data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![T::zero(); numel] }
    }

    pub fn full(shape: Vec<usize>, v: T) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![v; numel] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// (channels, height, width) of a rank-3 tensor.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match *self.shape {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::dims(format!("expected rank-3 tensor, got {:?}", self.shape))),
        }
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let (_, h, w) = self.chw().expect("rank-3 tensor");
        &self.data[c * h * w..(c + 1) * h * w]
    }

    /// Single channel as a (1, H, W) tensor.
    pub fn channel_tensor(&self, c: usize) -> Result<Tensor<T>> {
        let (cs, h, w) = self.chw()?;
        if c >= cs {
            return Err(Error::dims(format!("channel {} of {}", c, cs)));
        }
        Tensor::new(vec![1, h, w], self.channel(c).to_vec())
    }

    /// First `n` channels as an (n, H, W) tensor.
    pub fn leading_channels(&self, n: usize) -> Result<Tensor<T>> {
        let (cs, h, w) = self.chw()?;
        if n > cs {
            return Err(Error::dims(format!("{} leading channels of {}", n, cs)));
        }
        Tensor::new(vec![n, h, w], self.data[..n * h * w].to_vec())
    }

    /// Same data under a new shape with equal element count.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor<T>> {
        Tensor::new(shape, self.data.clone())
    }

    /// RGBA image to a (4, H, W) tensor.
    pub fn from_image_rgba(img: &ImageBuffer<T>) -> Self {
        let (w, h) = (img.width(), img.height());
        let mut data = vec![T::zero(); 4 * h * w];
        for (i, px) in img.pixels().iter().enumerate() {
            for ch in 0..4 {
                data[ch * h * w + i] = px[ch];
            }
        }
        Tensor { shape: vec![4, h, w], data }
    }

    /// RGB channels only, (3, H, W).
    pub fn from_image_rgb(img: &ImageBuffer<T>) -> Self {
        let (w, h) = (img.width(), img.height());
        let mut data = vec![T::zero(); 3 * h * w];
        for (i, px) in img.pixels().iter().enumerate() {
            for ch in 0..3 {
                data[ch * h * w + i] = px[ch];
            }
        }
        Tensor { shape: vec![3, h, w], data }
    }

    pub fn from_scalar_image(img: &ScalarImage<T>) -> Self {
        Tensor {
            shape: vec![1, img.height(), img.width()],
            data: img.data().to_vec(),
        }
    }

    /// First three channels as an RGB image, alpha supplied separately.
    pub fn to_image(&self, alpha: &ScalarImage<T>) -> Result<ImageBuffer<T>> {
        let (c, h, w) = self.chw()?;
        if c < 3 {
            return Err(Error::dims("need at least 3 channels for an image"));
        }
        if alpha.width() != w || alpha.height() != h {
            return Err(Error::dims("alpha does not match tensor size"));
        }
        let mut pixels = Vec::with_capacity(h * w);
        for i in 0..h * w {
            pixels.push([
                self.data[i],
                self.data[h * w + i],
                self.data[2 * h * w + i],
                alpha.data()[i],
            ]);
        }
        ImageBuffer::from_pixels(w, h, pixels)
    }

    /// Stack rank-3 tensors along the channel axis.
    pub fn concat_channels(parts: &[&Tensor<T>]) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::invalid("nothing to concatenate"));
        }
        let (_, h, w) = parts[0].chw()?;
        let mut channels = 0;
        for p in parts {
            let (c, ph, pw) = p.chw()?;
            if (ph, pw) != (h, w) {
                return Err(Error::dims("concat parts differ in spatial size"));
            }
            channels += c;
        }
        let mut data = Vec::with_capacity(channels * h * w);
        for p in parts {
            data.extend_from_slice(p.data());
        }
        Ok(Tensor { shape: vec![channels, h, w], data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_round_trip_preserves_layout() {
        let mut img = ImageBuffer::<f32>::new(3, 2);
        img.set(1, 0, [0.1, 0.2, 0.3, 1.0]);
        img.set(2, 1, [0.4, 0.5, 0.6, 0.5]);
        let t = Tensor::from_image_rgba(&img);
        assert_eq!(t.shape(), &[4, 2, 3]);
        // CHW: red plane first, pixel (1,0) is index 1.
        assert_eq!(t.data()[1], 0.1);
        assert_eq!(t.data()[2 * 6 + 5], 0.6);
        let back = t.to_image(&img.alpha_image()).unwrap();
        assert_eq!(back.pixels(), img.pixels());
    }

    #[test]
    fn concat_stacks_channels_in_order() {
        let a = Tensor::<f64>::full(vec![2, 2, 2], 1.0);
        let b = Tensor::<f64>::full(vec![1, 2, 2], 2.0);
        let c = Tensor::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[3, 2, 2]);
        assert_eq!(c.data()[7], 1.0);
        assert_eq!(c.data()[8], 2.0);
        let bad = Tensor::<f64>::full(vec![1, 3, 2], 0.0);
        assert!(Tensor::concat_channels(&[&a, &bad]).is_err());
    }

    #[test]
    fn shape_validation() {
        assert!(Tensor::<f32>::new(vec![2, 2], vec![0.0; 3]).is_err());
        let t = Tensor::<f32>::zeros(vec![3, 4, 5]);
        assert_eq!(t.chw().unwrap(), (3, 4, 5));
        assert!(Tensor::<f32>::zeros(vec![6]).chw().is_err());
    }
}
