//! Image and mask file formats: 8-bit PNG, NPY float arrays, binary PGM.

use std::path::Path;

use super::{ImageRGB, SilhouetteMask};
use crate::error::{Error, Result};
use crate::persist::{read_bytes, write_atomic};
use crate::scalar::Real;

/// Encodes an image as 8-bit RGB PNG (values rounded to the nearest level).
pub fn encode_png<T: Real>(image: &ImageRGB<T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, image.width() as u32, image.height() as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::InvalidInput(e.to_string()))?;
        let bytes: Vec<u8> = image.data().iter().map(|v| (v.f64() * 255.0).round().clamp(0.0, 255.0) as u8).collect();
        writer.write_image_data(&bytes).map_err(|e| Error::InvalidInput(e.to_string()))?;
    }
    Ok(out)
}

pub fn write_png<T: Real>(path: &Path, image: &ImageRGB<T>) -> Result<()> {
    write_atomic(path, &encode_png(image)?)
}

/// Reads an 8-bit RGB or RGBA PNG; alpha is discarded.
pub fn read_png<T: Real>(path: &Path) -> Result<ImageRGB<T>> {
    let bytes = read_bytes(path)?;
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| Error::format(path, e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| Error::format(path, "image too large"))?];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::format(path, e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::format(path, "only 8-bit PNG is supported"));
    }
    let channels = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => return Err(Error::format(path, format!("unsupported color type {other:?}"))),
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let mut data = Vec::with_capacity(w * h * 3);
    for px in buf[..w * h * channels].chunks_exact(channels) {
        data.extend(px[..3].iter().map(|&b| T::of(b as f64 / 255.0)));
    }
    ImageRGB::new(h, w, data).map_err(|e| Error::format(path, e.to_string()))
}

/// Element type of an NPY array.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NpyDtype {
    F4,
    F8,
}

impl NpyDtype {
    fn descr(self) -> &'static str {
        match self {
            NpyDtype::F4 => "<f4",
            NpyDtype::F8 => "<f8",
        }
    }
}

/// Serializes a C-order array in NPY 1.0 format.
pub fn encode_npy(shape: &[usize], values: &[f64], dtype: NpyDtype) -> Result<Vec<u8>> {
    let count: usize = shape.iter().product();
    if count != values.len() {
        return Err(Error::DimensionMismatch { expected: count, got: values.len() });
    }
    let dims = match shape {
        [n] => format!("({n},)"),
        _ => format!("({})", shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")),
    };
    let mut header = format!("{{'descr': '{}', 'fortran_order': False, 'shape': {dims}, }}", dtype.descr());
    let unpadded = 10 + header.len() + 1;
    header.push_str(&" ".repeat((64 - unpadded % 64) % 64));
    header.push('\n');
    let mut out = Vec::with_capacity(10 + header.len() + values.len() * 8);
    out.extend_from_slice(b"\x93NUMPY\x01\x00");
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for &v in values {
        match dtype {
            NpyDtype::F4 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            NpyDtype::F8 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    Ok(out)
}

/// Parses an NPY 1.x/2.x array of little-endian `f4` or `f8`, returning `(shape, values)`.
pub fn decode_npy(bytes: &[u8]) -> std::result::Result<(Vec<usize>, Vec<f64>), String> {
    if bytes.len() < 10 || &bytes[..6] != b"\x93NUMPY" {
        return Err("missing NPY magic".into());
    }
    let (header_len, start) = match bytes[6] {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 if bytes.len() >= 12 => (u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize, 12),
        v => return Err(format!("unsupported NPY version {v}")),
    };
    let header = bytes.get(start..start + header_len).ok_or("truncated NPY header")?;
    let header = std::str::from_utf8(header).map_err(|_| "NPY header is not text")?;
    let field = |key: &str| -> std::result::Result<&str, String> {
        let at = header.find(&format!("'{key}'")).ok_or(format!("NPY header lacks {key}"))?;
        Ok(header[at + key.len() + 2..].trim_start().trim_start_matches(':').trim_start())
    };
    let descr = field("descr")?;
    let dtype = if descr.starts_with("'<f4'") {
        NpyDtype::F4
    } else if descr.starts_with("'<f8'") {
        NpyDtype::F8
    } else {
        return Err(format!("unsupported dtype {}", descr.split(',').next().unwrap_or("")));
    };
    if !field("fortran_order")?.starts_with("False") {
        return Err("Fortran-order arrays are not supported".into());
    }
    let shape_text = field("shape")?;
    let close = shape_text.find(')').ok_or("malformed shape")?;
    let shape: Vec<usize> = shape_text[1..close]
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|e| e.to_string()))
        .collect::<std::result::Result<_, _>>()?;
    let count: usize = shape.iter().product();
    let body = &bytes[start + header_len..];
    let width = if dtype == NpyDtype::F4 { 4 } else { 8 };
    if body.len() != count * width {
        return Err(format!("expected {} data bytes, found {}", count * width, body.len()));
    }
    let values = match dtype {
        NpyDtype::F4 => body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
        NpyDtype::F8 => body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
    };
    Ok((shape, values))
}

/// Writes an image as an `H×W×3` NPY array.
///
/// `F4` is lossless for images whose values are already `f32`-representable,
/// which is what `rasterize` produces.
pub fn write_raw<T: Real>(path: &Path, image: &ImageRGB<T>, dtype: NpyDtype) -> Result<()> {
    let values: Vec<f64> = image.data().iter().map(|v| v.f64()).collect();
    write_atomic(path, &encode_npy(&[image.height(), image.width(), 3], &values, dtype)?)
}

pub fn read_raw<T: Real>(path: &Path) -> Result<ImageRGB<T>> {
    let (shape, values) = decode_npy(&read_bytes(path)?).map_err(|m| Error::format(path, m))?;
    match shape[..] {
        [h, w, 3] => ImageRGB::new(h, w, values.into_iter().map(T::of).collect()).map_err(|e| Error::format(path, e.to_string())),
        _ => Err(Error::format(path, format!("expected an HxWx3 array, got shape {shape:?}"))),
    }
}

/// Binary (P5) PGM: 255 inside the silhouette, 0 outside.
pub fn encode_pgm(mask: &SilhouetteMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend(mask.data().iter().map(|&b| if b { 255u8 } else { 0 }));
    out
}

pub fn write_pgm(path: &Path, mask: &SilhouetteMask) -> Result<()> {
    write_atomic(path, &encode_pgm(mask))
}

/// Reads a P5 PGM; any nonzero pixel counts as inside.
pub fn read_pgm(path: &Path) -> Result<SilhouetteMask> {
    let bytes = read_bytes(path)?;
    let bad = |m: &str| Error::format(path, m.to_string());
    let mut fields = Vec::new();
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let s = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if s == i {
            return Err(bad("truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[s..i]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(bad("not a binary PGM"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("malformed PGM header"));
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(bad("only 8-bit PGM is supported"));
    }
    let body = bytes.get(i + 1..).ok_or_else(|| bad("truncated PGM data"))?;
    if body.len() != w * h {
        return Err(bad("PGM data size does not match its header"));
    }
    SilhouetteMask::new(h, w, body.iter().map(|&b| b != 0).collect())
}
