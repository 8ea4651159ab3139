//! File formats: the NUBF blur-field container, PNG and PFM images, label
//! maps, and the kernel-grid visualization.
//!
//! NUBF layout, all little-endian, no padding:
//!
//! ```text
//! "NUBF" | u32 version = 1 | u32 B | u32 K | u32 H | u32 W
//! B kernels,      K·K f32 each, row-major
//! B mixing maps,  H·W f32 each, row-major
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::operator::assemble_kernel_at;
use crate::types::{BlurField, Image, Kernel, KernelBasis, MixingField, SegmentLabels};

pub const NUBF_MAGIC: [u8; 4] = *b"NUBF";
pub const NUBF_VERSION: u32 = 1;
const NUBF_HEADER_LEN: usize = 24;

/// Validation tolerance for single-precision data read from disk.
pub const FILE_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReadOptions {
    /// Rescale kernels to unit mass and mixing to unit per-pixel sum
    /// instead of rejecting out-of-tolerance data.
    pub renormalize: bool,
}

pub fn encode_blurfield(field: &BlurField) -> Vec<u8> {
    let (b, k, h, w) = (field.count(), field.side(), field.height(), field.width());
    let mut out = Vec::with_capacity(NUBF_HEADER_LEN + 4 * b * (k * k + h * w));
    out.extend_from_slice(&NUBF_MAGIC);
    for v in [NUBF_VERSION, b as u32, k as u32, h as u32, w as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for kernel in field.basis().kernels() {
        for &v in kernel.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    for map in field.mixing().maps() {
        for &v in map {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

fn take_f32s(bytes: &[u8], count: usize) -> Vec<f64> {
    bytes[..count * 4]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect()
}

pub fn decode_blurfield(bytes: &[u8], options: ReadOptions) -> Result<BlurField> {
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            missing: NUBF_HEADER_LEN - bytes.len(),
        });
    }
    let magic = [bytes[0], bytes[1], bytes[2], bytes[3]];
    if magic != NUBF_MAGIC {
        return Err(Error::BadMagic(magic));
    }
    if bytes.len() < NUBF_HEADER_LEN {
        return Err(Error::Truncated {
            missing: NUBF_HEADER_LEN - bytes.len(),
        });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let version = word(0);
    if version != NUBF_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let (b, k, h, w) = (word(1) as usize, word(2) as usize, word(3) as usize, word(4) as usize);
    let expected = (b as u128) * ((k * k) as u128 + (h as u128) * (w as u128)) * 4
        + NUBF_HEADER_LEN as u128;
    let have = bytes.len() as u128;
    if have < expected {
        return Err(Error::Truncated {
            missing: (expected - have) as usize,
        });
    }
    if have > expected {
        return Err(Error::TrailingBytes((have - expected) as usize));
    }

    let mut offset = NUBF_HEADER_LEN;
    let mut kernels = Vec::with_capacity(b);
    for _ in 0..b {
        kernels.push(Kernel::new(k, take_f32s(&bytes[offset..], k * k))?);
        offset += 4 * k * k;
    }
    let mut maps = Vec::with_capacity(b);
    for _ in 0..b {
        maps.push(take_f32s(&bytes[offset..], h * w));
        offset += 4 * h * w;
    }

    if options.renormalize {
        let basis = KernelBasis::renormalized(kernels)?;
        let mixing = MixingField::renormalized(w, h, maps)?;
        BlurField::new(basis, mixing)
    } else {
        BlurField::with_tolerance(
            KernelBasis::with_tolerance(kernels, FILE_TOLERANCE)?,
            MixingField::with_tolerance(w, h, maps, FILE_TOLERANCE)?,
            FILE_TOLERANCE,
        )
    }
}

pub fn write_blurfield(field: &BlurField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_blurfield(field)).map_err(|e| Error::io(path, e))
}

pub fn read_blurfield(path: impl AsRef<Path>) -> Result<BlurField> {
    read_blurfield_with(path, ReadOptions::default())
}

pub fn read_blurfield_with(path: impl AsRef<Path>, options: ReadOptions) -> Result<BlurField> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_blurfield(&bytes, options)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ImageFormat {
    Png,
    Pfm,
}

fn format_of(path: &Path) -> Result<ImageFormat> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png") => Ok(ImageFormat::Png),
        Some("pfm") => Ok(ImageFormat::Pfm),
        _ => Err(Error::UnsupportedFormat(path.display().to_string())),
    }
}

/// Reads a PNG (8/16-bit, values mapped to `[0, 1]`, alpha dropped) or PFM.
pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    match format_of(path)? {
        ImageFormat::Png => read_png(path),
        ImageFormat::Pfm => read_pfm(path),
    }
}

/// Writes by extension; PNG output is 8-bit with values clamped to `[0, 1]`.
pub fn write_image(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match format_of(path)? {
        ImageFormat::Png => write_png(image, path, PngDepth::Eight),
        ImageFormat::Pfm => write_pfm(image, path),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PngDepth {
    Eight,
    Sixteen,
}

struct RawPng {
    width: usize,
    height: usize,
    samples_per_pixel: usize,
    sixteen: bool,
    data: Vec<u8>,
    line_size: usize,
}

impl RawPng {
    fn sample(&self, row: usize, col: usize, s: usize) -> u16 {
        let idx = col * self.samples_per_pixel + s;
        let line = &self.data[row * self.line_size..];
        if self.sixteen {
            u16::from_be_bytes([line[2 * idx], line[2 * idx + 1]])
        } else {
            line[idx] as u16
        }
    }
}

fn decode_png(path: &Path) -> Result<RawPng> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Decode(format!("{}: {e}", path.display())))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Decode(format!("{}: image too large", path.display())))?;
    let mut data = vec![0; size];
    let info = reader
        .next_frame(&mut data)
        .map_err(|e| Error::Decode(format!("{}: {e}", path.display())))?;
    let samples_per_pixel = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => {
            return Err(Error::Decode(format!("{}: unexpanded palette", path.display())))
        }
    };
    let sixteen = match info.bit_depth {
        png::BitDepth::Eight => false,
        png::BitDepth::Sixteen => true,
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: {other:?} bit depth",
                path.display()
            )))
        }
    };
    Ok(RawPng {
        width: info.width as usize,
        height: info.height as usize,
        samples_per_pixel,
        sixteen,
        data,
        line_size: info.line_size,
    })
}

fn read_png(path: &Path) -> Result<Image> {
    let raw = decode_png(path)?;
    let channels = if raw.samples_per_pixel >= 3 { 3 } else { 1 };
    let scale = if raw.sixteen { 65535.0 } else { 255.0 };
    Image::from_fn(raw.width, raw.height, channels, |c, r, col| {
        raw.sample(r, col, c) as f64 / scale
    })
}

pub fn write_png(image: &Image, path: impl AsRef<Path>, depth: PngDepth) -> Result<()> {
    let path = path.as_ref();
    let (w, h, channels) = (image.width(), image.height(), image.channels());
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    encoder.set_color(if channels == 3 {
        png::ColorType::Rgb
    } else {
        png::ColorType::Grayscale
    });
    let mut bytes = Vec::with_capacity(w * h * channels * 2);
    match depth {
        PngDepth::Eight => {
            encoder.set_depth(png::BitDepth::Eight);
            for r in 0..h {
                for col in 0..w {
                    for c in 0..channels {
                        let v = image.get(c, r, col).clamp(0.0, 1.0);
                        bytes.push((v * 255.0).round() as u8);
                    }
                }
            }
        }
        PngDepth::Sixteen => {
            encoder.set_depth(png::BitDepth::Sixteen);
            for r in 0..h {
                for col in 0..w {
                    for c in 0..channels {
                        let v = image.get(c, r, col).clamp(0.0, 1.0);
                        bytes.extend_from_slice(&((v * 65535.0).round() as u16).to_be_bytes());
                    }
                }
            }
        }
    }
    let encode_err = |e: png::EncodingError| Error::Decode(format!("{}: {e}", path.display()));
    let mut writer = encoder.write_header().map_err(encode_err)?;
    writer.write_image_data(&bytes).map_err(encode_err)?;
    writer.finish().map_err(encode_err)
}

fn read_header_line(reader: &mut impl BufRead, path: &Path) -> Result<String> {
    let mut line = String::new();
    reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    if line.is_empty() {
        return Err(Error::Decode(format!("{}: truncated PFM header", path.display())));
    }
    Ok(line.trim().to_string())
}

/// Reads a PFM file; either endianness, rows stored bottom to top.
pub fn read_pfm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let bad = |msg: &str| Error::Decode(format!("{}: {msg}", path.display()));

    let channels = match read_header_line(&mut reader, path)?.as_str() {
        "PF" => 3,
        "Pf" => 1,
        _ => return Err(bad("not a PFM file")),
    };
    let dims = read_header_line(&mut reader, path)?;
    let mut it = dims.split_whitespace().map(str::parse::<usize>);
    let (w, h) = match (it.next(), it.next(), it.next()) {
        (Some(Ok(w)), Some(Ok(h)), None) => (w, h),
        _ => return Err(bad("invalid dimensions")),
    };
    let scale: f64 = read_header_line(&mut reader, path)?
        .parse()
        .map_err(|_| bad("invalid scale"))?;
    let little_endian = scale < 0.0;

    let n = w * h * channels;
    let mut buf = vec![0u8; n * 4];
    reader.read_exact(&mut buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            bad("truncated PFM data")
        } else {
            Error::io(path, e)
        }
    })?;
    let values: Vec<f32> = buf
        .chunks_exact(4)
        .map(|c| {
            let b = [c[0], c[1], c[2], c[3]];
            if little_endian {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            }
        })
        .collect();
    Image::from_fn(w, h, channels, |c, r, col| {
        values[((h - 1 - r) * w + col) * channels + c] as f64
    })
}

/// Writes a little-endian PFM; samples are stored as `f32`.
pub fn write_pfm(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (w, h, channels) = (image.width(), image.height(), image.channels());
    let tag = if channels == 3 { "PF" } else { "Pf" };
    let mut out = Vec::with_capacity(32 + w * h * channels * 4);
    write!(out, "{tag}\n{w} {h}\n-1.0\n").expect("write to vec");
    for r in (0..h).rev() {
        for col in 0..w {
            for c in 0..channels {
                out.extend_from_slice(&(image.get(c, r, col) as f32).to_le_bytes());
            }
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads integer labels from a grayscale PNG (raw sample values) or a
/// single-channel PFM (values rounded).
pub fn read_labels(path: impl AsRef<Path>) -> Result<SegmentLabels> {
    let path = path.as_ref();
    match format_of(path)? {
        ImageFormat::Png => {
            let raw = decode_png(path)?;
            if raw.samples_per_pixel > 2 {
                return Err(Error::UnsupportedFormat(format!(
                    "{}: label maps must be grayscale",
                    path.display()
                )));
            }
            let mut labels = Vec::with_capacity(raw.width * raw.height);
            for r in 0..raw.height {
                for c in 0..raw.width {
                    labels.push(raw.sample(r, c, 0) as u32);
                }
            }
            SegmentLabels::new(raw.width, raw.height, labels)
        }
        ImageFormat::Pfm => {
            let img = read_pfm(path)?;
            if img.channels() != 1 {
                return Err(Error::UnsupportedFormat(format!(
                    "{}: label maps must be single-channel",
                    path.display()
                )));
            }
            let labels = img
                .data()
                .iter()
                .map(|&v| v.round().max(0.0) as u32)
                .collect();
            SegmentLabels::new(img.width(), img.height(), labels)
        }
    }
}

/// Writes labels as a 16-bit grayscale PNG.
pub fn write_labels(labels: &SegmentLabels, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(&max) = labels.labels().iter().max() {
        if max > u16::MAX as u32 {
            return Err(Error::UnsupportedFormat(format!("label {max} exceeds 16 bits")));
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(
        BufWriter::new(file),
        labels.width() as u32,
        labels.height() as u32,
    );
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Sixteen);
    let bytes: Vec<u8> = labels
        .labels()
        .iter()
        .flat_map(|&l| (l as u16).to_be_bytes())
        .collect();
    let encode_err = |e: png::EncodingError| Error::Decode(format!("{}: {e}", path.display()));
    let mut writer = encoder.write_header().map_err(encode_err)?;
    writer.write_image_data(&bytes).map_err(encode_err)?;
    writer.finish().map_err(encode_err)
}

const GRID_SEPARATOR: f64 = 0.25;

/// Tiles the per-pixel kernels sampled at the center of every
/// `stride × stride` cell into one grayscale image. Each kernel is scaled so
/// its maximum is 1; tiles are separated by 1-px lines.
pub fn render_kernel_grid(field: &BlurField, stride: usize) -> Result<Image> {
    let k = field.side();
    if stride < k {
        return Err(Error::InvalidConfig(format!(
            "stride {stride} is smaller than the kernel side {k}"
        )));
    }
    let nx = field.width() / stride;
    let ny = field.height() / stride;
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidConfig(format!(
            "stride {stride} exceeds the {}x{} field",
            field.width(),
            field.height()
        )));
    }
    let out_w = nx * (k + 1) + 1;
    let out_h = ny * (k + 1) + 1;
    let mut out = Image::filled(out_w, out_h, 1, GRID_SEPARATOR);
    for ty in 0..ny {
        for tx in 0..nx {
            let kernel = assemble_kernel_at(field, ty * stride + stride / 2, tx * stride + stride / 2)?;
            let peak = kernel.iter().copied().fold(0.0, f64::max);
            let scale = if peak > 0.0 { 1.0 / peak } else { 0.0 };
            let (oy, ox) = (1 + ty * (k + 1), 1 + tx * (k + 1));
            for r in 0..k {
                for c in 0..k {
                    out.set(0, oy + r, ox + c, kernel[r * k + c] * scale);
                }
            }
        }
    }
    Ok(out)
}

/// Number of tiles [`render_kernel_grid`] draws.
pub fn grid_tile_count(field: &BlurField, stride: usize) -> usize {
    (field.height() / stride) * (field.width() / stride)
}
