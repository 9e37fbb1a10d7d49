//! Portable FloatMap. `PF` is 3-channel, `Pf` single-channel; a negative
//! scale in the header marks little-endian data; scanlines are stored bottom
//! row first. In-memory data is top row first, so both read and write flip.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Debug)]
pub enum PfmData<T> {
    Rgb(Vec<[T; 3]>),
    Gray(Vec<T>),
}

#[derive(Clone, Debug)]
pub struct Pfm<T> {
    pub width: usize,
    pub height: usize,
    pub data: PfmData<T>,
}

impl<T: Real> Pfm<T> {
    pub fn rgb(width: usize, height: usize, data: Vec<[T; 3]>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::dims("PFM rgb data does not match dimensions"));
        }
        Ok(Pfm { width, height, data: PfmData::Rgb(data) })
    }

    pub fn gray(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::dims("PFM gray data does not match dimensions"));
        }
        Ok(Pfm { width, height, data: PfmData::Gray(data) })
    }

    pub fn channels(&self) -> usize {
        match self.data {
            PfmData::Rgb(_) => 3,
            PfmData::Gray(_) => 1,
        }
    }

    pub fn into_rgb(self) -> Result<Vec<[T; 3]>> {
        match self.data {
            PfmData::Rgb(v) => Ok(v),
            PfmData::Gray(_) => Err(Error::format("expected 3-channel PFM, found 1-channel")),
        }
    }

    pub fn into_gray(self) -> Result<Vec<T>> {
        match self.data {
            PfmData::Gray(v) => Ok(v),
            PfmData::Rgb(_) => Err(Error::format("expected 1-channel PFM, found 3-channel")),
        }
    }
}

pub fn write<T: Real>(path: &Path, pfm: &Pfm<T>) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    let tag = match pfm.data {
        PfmData::Rgb(_) => "PF",
        PfmData::Gray(_) => "Pf",
    };
    write!(w, "{}\n{} {}\n-1.0\n", tag, pfm.width, pfm.height)?;
    let mut row_buf: Vec<u8> = Vec::with_capacity(pfm.width * pfm.channels() * 4);
    for y in (0..pfm.height).rev() {
        row_buf.clear();
        match &pfm.data {
            PfmData::Rgb(px) => {
                for p in &px[y * pfm.width..(y + 1) * pfm.width] {
                    for c in 0..3 {
                        row_buf.extend_from_slice(&p[c].as_f32().to_le_bytes());
                    }
                }
            }
            PfmData::Gray(px) => {
                for v in &px[y * pfm.width..(y + 1) * pfm.width] {
                    row_buf.extend_from_slice(&v.as_f32().to_le_bytes());
                }
            }
        }
        w.write_all(&row_buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read<T: Real>(path: &Path) -> Result<Pfm<T>> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);

    let tag = read_token(&mut r)?;
    let channels = match tag.as_str() {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(Error::format(format!("not a PFM file (magic {:?})", other))),
    };
    let width: usize = parse_token(&read_token(&mut r)?, "width")?;
    let height: usize = parse_token(&read_token(&mut r)?, "height")?;
    let scale: f64 = read_token(&mut r)?
        .parse()
        .map_err(|_| Error::format("bad PFM scale"))?;
    if width == 0 || height == 0 || width > 1 << 20 || height > 1 << 20 {
        return Err(Error::format(format!("unreasonable PFM size {}x{}", width, height)));
    }
    let little_endian = scale < 0.0;

    let mut raw = vec![0u8; width * height * channels * 4];
    r.read_exact(&mut raw)
        .map_err(|_| Error::format("PFM truncated"))?;

    let parse = |bytes: &[u8]| -> f32 {
        let arr = [bytes[0], bytes[1], bytes[2], bytes[3]];
        if little_endian {
            f32::from_le_bytes(arr)
        } else {
            f32::from_be_bytes(arr)
        }
    };

    // File rows run bottom to top.
    let sample = |x: usize, y: usize, c: usize| -> f32 {
        let fy = height - 1 - y;
        let off = ((fy * width + x) * channels + c) * 4;
        parse(&raw[off..off + 4])
    };

    let data = if channels == 3 {
        let mut px = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                px.push([
                    T::of(sample(x, y, 0) as f64),
                    T::of(sample(x, y, 1) as f64),
                    T::of(sample(x, y, 2) as f64),
                ]);
            }
        }
        PfmData::Rgb(px)
    } else {
        let mut px = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                px.push(T::of(sample(x, y, 0) as f64));
            }
        }
        PfmData::Gray(px)
    };

    Ok(Pfm { width, height, data })
}

fn read_token(r: &mut impl Read) -> Result<String> {
    let mut buf = Vec::new();
    let mut byte = [0u8; 1];
    // Skip leading whitespace, then collect until the next whitespace byte.
    loop {
        r.read_exact(&mut byte).map_err(|_| Error::format("PFM header truncated"))?;
        if !byte[0].is_ascii_whitespace() {
            buf.push(byte[0]);
            break;
        }
    }
    loop {
        r.read_exact(&mut byte).map_err(|_| Error::format("PFM header truncated"))?;
        if byte[0].is_ascii_whitespace() {
            break;
        }
        buf.push(byte[0]);
        if buf.len() > 64 {
            return Err(Error::format("PFM header token too long"));
        }
    }
    String::from_utf8(buf).map_err(|_| Error::format("PFM header not ASCII"))
}

fn parse_token(tok: &str, what: &str) -> Result<usize> {
    tok.parse()
        .map_err(|_| Error::format(format!("bad PFM {}: {:?}", what, tok)))
}
