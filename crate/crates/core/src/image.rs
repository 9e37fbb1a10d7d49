//! Pixel containers. `ImageBuffer` holds linear RGBA, `ScalarImage` a single
//! channel, `Mask` booleans. Row-major, row 0 at the top.

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer<T> {
    width: usize,
    height: usize,
    pixels: Vec<[T; 4]>,
}

impl<T: Real> ImageBuffer<T> {
    pub fn new(width: usize, height: usize) -> Self {
        ImageBuffer {
            width,
            height,
            pixels: vec![[T::zero(); 4]; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<[T; 4]>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::dims(format!(
                "pixel count {} does not match {}x{}",
                pixels.len(),
                width,
                height
            )));
        }
        Ok(ImageBuffer { width, height, pixels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> [T; 4] {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, px: [T; 4]) {
        self.pixels[y * self.width + x] = px;
    }

    pub fn rgb(&self, x: usize, y: usize) -> [T; 3] {
        let p = self.get(x, y);
        [p[0], p[1], p[2]]
    }

    pub fn alpha(&self, x: usize, y: usize) -> T {
        self.get(x, y)[3]
    }

    pub fn pixels(&self) -> &[[T; 4]] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [[T; 4]] {
        &mut self.pixels
    }

    pub fn alpha_image(&self) -> ScalarImage<T> {
        ScalarImage {
            width: self.width,
            height: self.height,
            data: self.pixels.iter().map(|p| p[3]).collect(),
        }
    }

    pub fn same_size(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarImage<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Real> ScalarImage<T> {
    pub fn new(width: usize, height: usize) -> Self {
        ScalarImage {
            width,
            height,
            data: vec![T::zero(); width * height],
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::dims(format!(
                "scalar data {} does not match {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(ScalarImage { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::dims("mask data does not match dimensions"));
        }
        Ok(Mask { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}
