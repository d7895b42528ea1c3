//! 8-bit image files: binary and ASCII PGM/PPM, plus PNG with the `png` feature.
//!
//! Images are C × H × W arrays in [0, 1]. Reading scales samples by 1/maxval;
//! writing clamps to [0, 1] and rounds half up to 8 bits. Only maxval ≤ 255 is
//! supported.

use ndarray::Array3;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Round-half-up 8-bit quantization of a value clamped to [0, 1].
pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

fn parse_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Parse { offset, msg: msg.into() }
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Array3<f64>> {
    decode_image(&fs::read(path)?)
}

/// Decodes PNM or (with the `png` feature) PNG bytes, sniffing the format
/// from the leading magic.
pub fn decode_image(bytes: &[u8]) -> Result<Array3<f64>> {
    if bytes.starts_with(b"\x89PNG") {
        return decode_png(bytes);
    }
    decode_pnm(bytes)
}

/// Writes PGM for `.pgm`, PPM for `.ppm`, PNG for `.png`. PGM needs one
/// channel, PPM three; PNG takes either.
pub fn write_image(image: &Array3<f64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    let bytes = match ext.as_deref() {
        Some("pgm") | Some("ppm") => {
            let want = if ext.as_deref() == Some("pgm") { 1 } else { 3 };
            if image.dim().0 != want {
                return Err(Error::shape(format!("{} needs {want} channel(s), image has {}", path.display(), image.dim().0)));
            }
            encode_pnm(image)?
        }
        Some("png") => encode_png(image)?,
        _ => return Err(Error::config(format!("unsupported image extension for {}", path.display()))),
    };
    fs::write(path, bytes)?;
    Ok(())
}

/// Binary P5 (one channel) or P6 (three channels).
pub fn encode_pnm(image: &Array3<f64>) -> Result<Vec<u8>> {
    let (c, h, w) = image.dim();
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => return Err(Error::shape(format!("PNM needs 1 or 3 channels, got {c}"))),
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.extend(interleave(image));
    Ok(out)
}

/// H × W × C byte order.
fn interleave(image: &Array3<f64>) -> Vec<u8> {
    let (c, h, w) = image.dim();
    let mut out = Vec::with_capacity(c * h * w);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out.push(to_u8(image[[ch, y, x]]));
            }
        }
    }
    out
}

fn deinterleave(data: &[u8], c: usize, h: usize, w: usize, maxval: f64) -> Array3<f64> {
    Array3::from_shape_fn((c, h, w), |(ch, y, x)| data[(y * w + x) * c + ch] as f64 / maxval)
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(parse_err(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| parse_err(start, format!("{what} out of range")))
    }
}

pub fn decode_pnm(bytes: &[u8]) -> Result<Array3<f64>> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(parse_err(0, "not a PNM or PNG file"));
    }
    let (channels, ascii) = match bytes[1] {
        b'2' => (1, true),
        b'3' => (3, true),
        b'5' => (1, false),
        b'6' => (3, false),
        _ => return Err(parse_err(1, format!("unsupported PNM type P{}", bytes[1] as char))),
    };
    let mut hdr = Header { bytes, pos: 2 };
    let w = hdr.number("width")?;
    let h = hdr.number("height")?;
    let maxval_pos = hdr.pos;
    let maxval = hdr.number("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(parse_err(maxval_pos, format!("unsupported maxval {maxval} (1..=255 supported)")));
    }
    if w == 0 || h == 0 {
        return Err(parse_err(2, "zero image dimension"));
    }
    let n = w.checked_mul(h).and_then(|p| p.checked_mul(channels)).ok_or_else(|| parse_err(2, "image too large"))?;

    let data = if ascii {
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let at = hdr.pos;
            let v = hdr.number("sample")?;
            if v > maxval {
                return Err(parse_err(at, format!("sample {v} exceeds maxval {maxval}")));
            }
            data.push(v as u8);
        }
        data
    } else {
        // Exactly one whitespace byte separates maxval from the raster.
        if hdr.pos >= bytes.len() || !bytes[hdr.pos].is_ascii_whitespace() {
            return Err(parse_err(hdr.pos, "expected whitespace before raster"));
        }
        let start = hdr.pos + 1;
        if bytes.len() - start < n {
            return Err(parse_err(bytes.len(), format!("raster truncated: {} of {n} bytes", bytes.len() - start)));
        }
        if let Some(i) = bytes[start..start + n].iter().position(|&v| v as usize > maxval) {
            return Err(parse_err(start + i, format!("sample exceeds maxval {maxval}")));
        }
        bytes[start..start + n].to_vec()
    };
    Ok(deinterleave(&data, channels, h, w, maxval as f64))
}

#[cfg(feature = "png")]
fn encode_png(image: &Array3<f64>) -> Result<Vec<u8>> {
    let (c, h, w) = image.dim();
    let color = match c {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        _ => return Err(Error::shape(format!("PNG output needs 1 or 3 channels, got {c}"))),
    };
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::Io(std::io::Error::other(e)))?;
        writer.write_image_data(&interleave(image)).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    Ok(out)
}

#[cfg(feature = "png")]
fn decode_png(bytes: &[u8]) -> Result<Array3<f64>> {
    let mut dec = png::Decoder::new(std::io::Cursor::new(bytes));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(|e| parse_err(0, format!("PNG: {e}")))?;
    let size = reader.output_buffer_size().ok_or_else(|| parse_err(0, "PNG too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| parse_err(0, format!("PNG: {e}")))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let stride = info.line_size;
    let samples = info.color_type.samples();
    // Alpha is dropped; gray-alpha becomes gray.
    let c = if samples >= 3 { 3 } else { 1 };
    Ok(Array3::from_shape_fn((c, h, w), |(ch, y, x)| buf[y * stride + x * samples + ch] as f64 / 255.0))
}

#[cfg(not(feature = "png"))]
fn encode_png(_: &Array3<f64>) -> Result<Vec<u8>> {
    Err(Error::config("PNG support is disabled (build with the `png` feature)"))
}

#[cfg(not(feature = "png"))]
fn decode_png(_: &[u8]) -> Result<Array3<f64>> {
    Err(Error::config("PNG support is disabled (build with the `png` feature)"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(c: usize, seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((c, 5, 7), |_| rng.random::<f64>())
    }

    #[test]
    fn quantization_bound_and_idempotence() {
        let dir = tempfile::tempdir().unwrap();
        for (c, ext) in [(1, "pgm"), (3, "ppm"), (3, "png"), (1, "png")] {
            if ext == "png" && !cfg!(feature = "png") {
                continue;
            }
            let img = random_image(c, 4);
            let path = dir.path().join(format!("x.{ext}"));
            write_image(&img, &path).unwrap();
            let back = read_image(&path).unwrap();
            assert_eq!(back.dim(), img.dim());
            let err = img.iter().zip(back.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err <= 0.5 / 255.0 + 1e-12, "{ext}: {err}");
            write_image(&back, &path).unwrap();
            assert_eq!(read_image(&path).unwrap(), back);
        }
    }

    #[test]
    fn white_pixel_ppm() {
        let img = decode_pnm(b"P6\n1 1\n255\n\xff\xff\xff").unwrap();
        assert_eq!(img.into_raw_vec_and_offset().0, vec![1.0; 3]);
        let img = decode_pnm(b"P3\n# comment\n1 1 255\n255 255 255\n").unwrap();
        assert_eq!(img.into_raw_vec_and_offset().0, vec![1.0; 3]);
    }

    #[test]
    fn ascii_gray_layout() {
        let img = decode_pnm(b"P2 3 2 4  0 1 2\n3 4 0").unwrap();
        assert_eq!(img.dim(), (1, 2, 3));
        assert_eq!(img[[0, 1, 0]], 0.75);
        assert_eq!(img[[0, 0, 2]], 0.5);
    }

    #[test]
    fn maxval_65535_rejected() {
        let err = decode_pnm(b"P5\n1 1\n65535\n\x00\x00").unwrap_err();
        assert!(err.to_string().contains("unsupported maxval"), "{err}");
    }

    #[test]
    fn malformed_header_reports_offset() {
        match decode_pnm(b"P5\n4 x\n255\n").unwrap_err() {
            Error::Parse { offset, .. } => assert_eq!(offset, 5),
            e => panic!("{e}"),
        }
        assert!(matches!(decode_pnm(b"P6\n2 2\n255\n\x00"), Err(Error::Parse { .. })));
        assert!(matches!(decode_pnm(b"P7\n"), Err(Error::Parse { offset: 1, .. })));
    }

    #[test]
    fn round_half_up() {
        assert_eq!(to_u8(0.5), 128);
        assert_eq!(to_u8(-1.0), 0);
        assert_eq!(to_u8(2.0), 255);
    }
}
