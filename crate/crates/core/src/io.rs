//! PNG and raw-file helpers. Every writer goes through a temporary file and
//! a rename so readers never observe a half-written artifact.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ExtendedColorType, ImageFormat};

use crate::error::{Error, Result};
use crate::imaging::{ImageTensor, SparseLabelMap};

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = tmp_path(path);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn encode_png(bytes: &[u8], width: usize, height: usize, color: ExtendedColorType, path: &Path) -> Result<Vec<u8>> {
    let mut out = std::io::Cursor::new(Vec::new());
    image::write_buffer_with_format(&mut out, bytes, width as u32, height as u32, color, ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
    Ok(out.into_inner())
}

/// Writes an 8-bit grayscale PNG.
pub fn write_gray_png(path: &Path, width: usize, height: usize, bytes: &[u8]) -> Result<()> {
    let png = encode_png(bytes, width, height, ExtendedColorType::L8, path)?;
    write_atomic(path, &png)
}

pub fn write_image(path: &Path, img: &ImageTensor) -> Result<()> {
    let color = match img.channels() {
        1 => ExtendedColorType::L8,
        3 => ExtendedColorType::Rgb8,
        c => return Err(Error::invalid(format!("cannot write a {c}-channel PNG"))),
    };
    let png = encode_png(&img.to_u8(), img.width(), img.height(), color, path)?;
    write_atomic(path, &png)
}

fn decode(path: &Path) -> Result<image::DynamicImage> {
    image::load_from_memory(&read_bytes(path)?).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_image(path: &Path) -> Result<ImageTensor> {
    let decoded = decode(path)?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    match decoded {
        image::DynamicImage::ImageLuma8(buf) => ImageTensor::from_u8(h, w, 1, buf.as_raw()),
        image::DynamicImage::ImageRgb8(buf) => ImageTensor::from_u8(h, w, 3, buf.as_raw()),
        other => Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("unsupported PNG color type {:?}", other.color()),
        }),
    }
}

/// Label PNGs: single channel, 255 = unlabeled.
pub fn write_labels(path: &Path, labels: &SparseLabelMap) -> Result<()> {
    write_gray_png(path, labels.width(), labels.height(), &labels.to_u8())
}

pub fn read_labels(path: &Path, num_categories: usize) -> Result<SparseLabelMap> {
    let decoded = decode(path)?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    match decoded {
        image::DynamicImage::ImageLuma8(buf) => {
            SparseLabelMap::from_u8(h, w, num_categories, buf.as_raw()).map_err(|e| Error::Format {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })
        }
        other => Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("label PNG must be 8-bit grayscale, got {:?}", other.color()),
        }),
    }
}
