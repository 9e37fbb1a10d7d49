//! Radiance RGBE (.hdr). Writes flat scanlines, which every Radiance reader
//! accepts; reading handles both flat data and new-style RLE so maps from
//! other tools load too. Only the `-Y h +X w` orientation is supported.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Real;

fn to_rgbe(rgb: [f64; 3]) -> [u8; 4] {
    let v = rgb[0].max(rgb[1]).max(rgb[2]);
    if v < 1e-32 {
        return [0, 0, 0, 0];
    }
    // v = m * 2^e with m in [0.5, 1)
    let mut e = v.log2().floor() as i32 + 1;
    let mut m = v / (2f64).powi(e);
    if m >= 1.0 {
        m *= 0.5;
        e += 1;
    } else if m < 0.5 {
        m *= 2.0;
        e -= 1;
    }
    let scale = m * 256.0 / v;
    [
        (rgb[0] * scale).min(255.0) as u8,
        (rgb[1] * scale).min(255.0) as u8,
        (rgb[2] * scale).min(255.0) as u8,
        (e + 128) as u8,
    ]
}

fn from_rgbe(p: [u8; 4]) -> [f64; 3] {
    if p[3] == 0 {
        return [0.0, 0.0, 0.0];
    }
    let f = (2f64).powi(p[3] as i32 - (128 + 8));
    // +0.5 decodes to the centre of each mantissa bucket.
    [
        (p[0] as f64 + 0.5) * f,
        (p[1] as f64 + 0.5) * f,
        (p[2] as f64 + 0.5) * f,
    ]
}

pub fn write<T: Real>(path: &Path, width: usize, height: usize, pixels: &[[T; 3]]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::dims("HDR pixel count does not match dimensions"));
    }
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    write!(w, "#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n-Y {} +X {}\n", height, width)?;
    let mut buf = Vec::with_capacity(width * 4);
    for y in 0..height {
        buf.clear();
        for p in &pixels[y * width..(y + 1) * width] {
            buf.extend_from_slice(&to_rgbe([p[0].as_f64(), p[1].as_f64(), p[2].as_f64()]));
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read<T: Real>(path: &Path) -> Result<(usize, usize, Vec<[T; 3]>)> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);

    let first = read_line(&mut r)?;
    if !first.starts_with("#?") {
        return Err(Error::format("not a Radiance HDR file"));
    }
    let mut format_ok = false;
    loop {
        let line = read_line(&mut r)?;
        if line.is_empty() {
            break;
        }
        if let Some(fmt) = line.strip_prefix("FORMAT=") {
            if fmt.trim() != "32-bit_rle_rgbe" {
                return Err(Error::format(format!("unsupported HDR format {:?}", fmt)));
            }
            format_ok = true;
        }
    }
    if !format_ok {
        return Err(Error::format("HDR header missing FORMAT"));
    }
    let res = read_line(&mut r)?;
    let parts: Vec<&str> = res.split_whitespace().collect();
    if parts.len() != 4 || parts[0] != "-Y" || parts[2] != "+X" {
        return Err(Error::format(format!("unsupported HDR orientation {:?}", res)));
    }
    let height: usize = parts[1].parse().map_err(|_| Error::format("bad HDR height"))?;
    let width: usize = parts[3].parse().map_err(|_| Error::format("bad HDR width"))?;
    if width == 0 || height == 0 || width > 1 << 20 || height > 1 << 20 {
        return Err(Error::format("unreasonable HDR size"));
    }

    let mut pixels = Vec::with_capacity(width * height);
    let mut scan = vec![[0u8; 4]; width];
    for _ in 0..height {
        read_scanline(&mut r, &mut scan)?;
        for p in &scan {
            let rgb = from_rgbe(*p);
            pixels.push([T::of(rgb[0]), T::of(rgb[1]), T::of(rgb[2])]);
        }
    }
    Ok((width, height, pixels))
}

fn read_scanline(r: &mut impl Read, scan: &mut [[u8; 4]]) -> Result<()> {
    let width = scan.len();
    let mut head = [0u8; 4];
    r.read_exact(&mut head).map_err(|_| Error::format("HDR truncated"))?;

    let is_new_rle = head[0] == 2
        && head[1] == 2
        && ((head[2] as usize) << 8 | head[3] as usize) == width
        && (8..=0x7fff).contains(&width);
    if is_new_rle {
        // Four component planes, each run-length coded independently.
        for c in 0..4 {
            let mut x = 0;
            while x < width {
                let mut code = [0u8; 1];
                r.read_exact(&mut code).map_err(|_| Error::format("HDR RLE truncated"))?;
                if code[0] > 128 {
                    let run = (code[0] - 128) as usize;
                    let mut val = [0u8; 1];
                    r.read_exact(&mut val).map_err(|_| Error::format("HDR RLE truncated"))?;
                    if x + run > width {
                        return Err(Error::format("HDR RLE run overflows scanline"));
                    }
                    for px in &mut scan[x..x + run] {
                        px[c] = val[0];
                    }
                    x += run;
                } else {
                    let n = code[0] as usize;
                    if n == 0 || x + n > width {
                        return Err(Error::format("HDR RLE literal overflows scanline"));
                    }
                    let mut lit = vec![0u8; n];
                    r.read_exact(&mut lit).map_err(|_| Error::format("HDR RLE truncated"))?;
                    for (px, v) in scan[x..x + n].iter_mut().zip(&lit) {
                        px[c] = *v;
                    }
                    x += n;
                }
            }
        }
        return Ok(());
    }

    // Flat data, with old-style (1,1,1,count) repeat codes.
    scan[0] = head;
    let mut x = 1;
    while x < width {
        let mut p = [0u8; 4];
        r.read_exact(&mut p).map_err(|_| Error::format("HDR truncated"))?;
        if p[0] == 1 && p[1] == 1 && p[2] == 1 {
            let run = p[3] as usize;
            if x == 0 || x + run > width {
                return Err(Error::format("HDR repeat overflows scanline"));
            }
            let prev = scan[x - 1];
            for px in &mut scan[x..x + run] {
                *px = prev;
            }
            x += run;
        } else {
            scan[x] = p;
            x += 1;
        }
    }
    Ok(())
}

fn read_line(r: &mut impl Read) -> Result<String> {
    let mut buf = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        r.read_exact(&mut byte).map_err(|_| Error::format("HDR header truncated"))?;
        if byte[0] == b'\n' {
            break;
        }
        buf.push(byte[0]);
        if buf.len() > 256 {
            return Err(Error::format("HDR header line too long"));
        }
    }
    String::from_utf8(buf).map_err(|_| Error::format("HDR header not UTF-8"))
}
