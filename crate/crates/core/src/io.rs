//! 8-bit PNG import and export.
//!
//! Only 8-bit grayscale or RGB files are accepted; alpha, palettes and other
//! bit depths are rejected rather than silently converted.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{BinaryMask, ImageTensor};

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn decode_err(path: &Path, err: png::DecodingError) -> Error {
    match err {
        png::DecodingError::IoError(e) if e.kind() != std::io::ErrorKind::UnexpectedEof => io_err(path, e),
        other => Error::MalformedPng {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    }
}

fn unsupported(path: &Path, message: impl Into<String>) -> Error {
    Error::UnsupportedFormat {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Reads an 8-bit grayscale or RGB PNG, mapping each byte `v` to `v / 255`.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| decode_err(path, e))?;
    let info = reader.info();
    if info.bit_depth != png::BitDepth::Eight {
        return Err(unsupported(
            path,
            format!("bit depth {:?}, only 8-bit is supported", info.bit_depth),
        ));
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => return Err(unsupported(path, format!("color type {other:?}"))),
    };
    let (width, height) = (info.width as usize, info.height as usize);
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let frame = reader.next_frame(&mut buf).map_err(|e| decode_err(path, e))?;
    let bytes = &buf[..frame.buffer_size()];

    let plane = height * width;
    let mut data = vec![0f32; channels * plane];
    for (i, px) in bytes.chunks_exact(channels).enumerate() {
        for (c, &v) in px.iter().enumerate() {
            data[c * plane + i] = v as f32 / 255.0;
        }
    }
    ImageTensor::new(channels, height, width, data)
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn write_png(path: &Path, width: usize, height: usize, color: png::ColorType, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(color);
    encoder.set_depth(png::BitDepth::Eight);
    let encode_err = |e: png::EncodingError| match e {
        png::EncodingError::IoError(e) => io_err(path, e),
        other => Error::invalid(format!("{}: {other}", path.display())),
    };
    let mut writer = encoder.write_header().map_err(encode_err)?;
    writer.write_image_data(bytes).map_err(encode_err)?;
    writer.finish().map_err(encode_err)
}

/// Writes the image as an 8-bit PNG with `round(v * 255)` quantization.
pub fn save_image(img: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = img.dims();
    let plane = h * w;
    let channels = img.channels();
    let mut bytes = vec![0u8; channels * plane];
    for (i, px) in bytes.chunks_exact_mut(channels).enumerate() {
        for (c, b) in px.iter_mut().enumerate() {
            *b = quantize(img.data()[c * plane + i]);
        }
    }
    let color = if channels == 1 {
        png::ColorType::Grayscale
    } else {
        png::ColorType::Rgb
    };
    write_png(path, w, h, color, &bytes)
}

/// Reads a mask PNG. A pixel is missing (`1`) when its byte value is at least
/// 128; RGB masks use the channel mean.
pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let img = load_image(path)?;
    let (h, w) = img.dims();
    let plane = h * w;
    let channels = img.channels();
    let data = (0..plane)
        .map(|i| {
            let mean = (0..channels).map(|c| img.data()[c * plane + i]).sum::<f32>() / channels as f32;
            u8::from(mean * 255.0 >= 127.5)
        })
        .collect();
    BinaryMask::new(h, w, data)
}

/// Writes a mask as a grayscale PNG with values 0 and 255.
pub fn save_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    let bytes: Vec<u8> = mask.data().iter().map(|&v| v * 255).collect();
    write_png(path.as_ref(), mask.width(), mask.height(), png::ColorType::Grayscale, &bytes)
}
