//! Binary PPM (P6) images and PGM (P5) masks, 8 bits per sample.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn token(r: &mut impl BufRead) -> Result<String> {
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            return Err(Error::Format("truncated PNM header".into()));
        }
        match byte[0] {
            b'#' if tok.is_empty() => {
                let mut line = Vec::new();
                r.read_until(b'\n', &mut line)?;
            }
            c if c.is_ascii_whitespace() => {
                if !tok.is_empty() {
                    return Ok(tok);
                }
            }
            c => tok.push(c as char),
        }
    }
}

fn number(r: &mut impl BufRead, what: &str) -> Result<usize> {
    let t = token(r)?;
    t.parse().map_err(|_| Error::Format(format!("bad PNM {what}: `{t}`")))
}

/// Header fields and raw samples of a P5/P6 file.
fn read_pnm(r: impl Read, magic: &str) -> Result<(usize, usize, Vec<u8>)> {
    let mut r = BufReader::new(r);
    let m = token(&mut r)?;
    if m != magic {
        return Err(Error::Format(format!("expected {magic} file, found magic `{m}`")));
    }
    let w = number(&mut r, "width")?;
    let h = number(&mut r, "height")?;
    let max = number(&mut r, "maxval")?;
    if max != 255 {
        return Err(Error::Format(format!("only 8-bit PNM is supported, maxval {max}")));
    }
    if w == 0 || h == 0 {
        return Err(Error::Format(format!("empty image {w}x{h}")));
    }
    let n = w * h * if magic == "P6" { 3 } else { 1 };
    let mut data = vec![0u8; n];
    r.read_exact(&mut data).map_err(|_| Error::Format(format!("expected {n} samples")))?;
    Ok((h, w, data))
}

/// RGB image as `[3, H, W]` with values in [0, 1].
pub fn read_ppm(r: impl Read) -> Result<Tensor<f32>> {
    let (h, w, raw) = read_pnm(r, "P6")?;
    let plane = h * w;
    let mut data = vec![0f32; 3 * plane];
    for (p, px) in raw.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + p] = px[c] as f32 / 255.0;
        }
    }
    Tensor::new(&[3, h, w], data)
}

/// Writes a `[3, H, W]` image; values are clamped to [0, 1] and rounded.
pub fn write_ppm(mut w: impl Write, image: &Tensor<f32>) -> Result<()> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::shape("write_ppm", format!("expected [3,H,W], got {s:?}")));
    }
    let plane = s[1] * s[2];
    let mut raw = Vec::with_capacity(3 * plane);
    for p in 0..plane {
        for c in 0..3 {
            raw.push((image.data()[c * plane + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    write!(w, "P6\n{} {}\n255\n", s[2], s[1])?;
    w.write_all(&raw)?;
    Ok(())
}

/// Grey map as `(height, width, samples)`.
pub fn read_pgm(r: impl Read) -> Result<(usize, usize, Vec<u8>)> {
    read_pnm(r, "P5")
}

pub fn write_pgm(mut w: impl Write, height: usize, width: usize, data: &[u8]) -> Result<()> {
    if data.len() != height * width {
        return Err(Error::shape("write_pgm", format!("{} samples for {height}x{width}", data.len())));
    }
    write!(w, "P5\n{width} {height}\n255\n")?;
    w.write_all(data)?;
    Ok(())
}

/// Class-id mask: ids must fit in a byte.
pub fn write_mask(w: impl Write, height: usize, width: usize, mask: &[u32]) -> Result<()> {
    let bytes = mask
        .iter()
        .map(|&m| u8::try_from(m).map_err(|_| Error::Format(format!("class id {m} does not fit in 8 bits"))))
        .collect::<Result<Vec<u8>>>()?;
    write_pgm(w, height, width, &bytes)
}

pub fn read_mask(r: impl Read) -> Result<(usize, usize, Vec<u32>)> {
    let (h, w, d) = read_pgm(r)?;
    Ok((h, w, d.into_iter().map(u32::from).collect()))
}

/// Linear rescale of `values` so the minimum maps to 0 and the maximum to
/// 255; a constant map becomes mid-grey.
pub fn heatmap_bytes(values: &[f64], lo: f64, hi: f64) -> Vec<u8> {
    values
        .iter()
        .map(|&v| if hi > lo { ((v - lo) / (hi - lo) * 255.0).round().clamp(0.0, 255.0) as u8 } else { 128 })
        .collect()
}

pub fn read_file<T>(path: impl AsRef<Path>, f: impl FnOnce(std::fs::File) -> Result<T>) -> Result<T> {
    f(std::fs::File::open(path)?)
}

pub fn write_file(path: impl AsRef<Path>, f: impl FnOnce(&mut std::io::BufWriter<std::fs::File>) -> Result<()>) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    f(&mut out)?;
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn comments_in_header_are_skipped() {
        let mut f = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        f.extend([7, 255]);
        assert_eq!(read_pgm(&f[..]).unwrap(), (1, 2, vec![7, 255]));
    }

    #[test]
    fn malformed_files_are_rejected() {
        assert!(read_pgm(&b"P6\n1 1\n255\n\0\0\0"[..]).is_err());
        assert!(read_pgm(&b"P5\n2 2\n255\n\0"[..]).is_err());
        assert!(read_pgm(&b"P5\n1 1\n65535\n\0\0"[..]).is_err());
        assert!(write_mask(Vec::new(), 1, 1, &[256]).is_err());
    }

    #[test]
    fn heatmap_endpoints() {
        assert_eq!(heatmap_bytes(&[0.0, 0.5, 1.0], 0.0, 1.0), vec![0, 128, 255]);
        assert_eq!(heatmap_bytes(&[0.3, 0.3], 0.3, 0.3), vec![128, 128]);
    }

    proptest! {
        #[test]
        fn round_trips(h in 1usize..9, w in 1usize..9, seed in 0u64..100) {
            let mut r = crate::rng::Rng::new(seed);
            let img = Tensor::from_fn(&[3, h, w], |_| r.below(256) as f32 / 255.0);
            let mut buf = Vec::new();
            write_ppm(&mut buf, &img).unwrap();
            prop_assert!(read_ppm(&buf[..]).unwrap().bit_eq(&img));
            let mask: Vec<u32> = (0..h * w).map(|_| r.below(256) as u32).collect();
            let mut buf = Vec::new();
            write_mask(&mut buf, h, w, &mask).unwrap();
            prop_assert_eq!(read_mask(&buf[..]).unwrap(), (h, w, mask));
        }
    }
}
