//! Image and label containers shared by the rest of the crate.
//!
//! Pixel values live in `[0, 1]` as `f32`, stored row-major with channels
//! interleaved (`HWC`). Labels are `i32` with [`UNLABELED`] marking pixels
//! that carry no annotation.

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

/// Sentinel for a pixel without a ground-truth category.
pub const UNLABELED: i32 = -1;

/// ITU-R BT.601 luma weights.
const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if data.len() != height * width * channels {
            return Err(Error::invalid(format!(
                "image data length {} != {height}x{width}x{channels}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::invalid(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds an image without the `[0, 1]` range check. Intended for
    /// intermediate results such as shifted or scaled grayscale maps.
    pub fn from_raw(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels || height == 0 || width == 0 || channels == 0 {
            return Err(Error::invalid("image shape does not match data length"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite pixel value"));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Converts 8-bit samples to the internal `[0, 1]` domain.
    pub fn from_u8(height: usize, width: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(
            height,
            width,
            channels,
            bytes.iter().map(|&b| b as f32 / 255.0).collect(),
        )
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Returns the image as planar `CHW` data, the layout the network consumes.
    pub fn to_planar(&self) -> Vec<f32> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; plane * self.channels];
        for (i, px) in self.data.chunks_exact(self.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                out[c * plane + i] = v;
            }
        }
        out
    }

    /// Applies `f` to every sample, skipping the range check.
    pub fn map_raw(&self, f: impl Fn(f32) -> f32) -> Result<Self> {
        Self::from_raw(
            self.height,
            self.width,
            self.channels,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseLabelMap {
    height: usize,
    width: usize,
    num_categories: usize,
    labels: Vec<i32>,
}

impl SparseLabelMap {
    pub fn new(height: usize, width: usize, num_categories: usize, labels: Vec<i32>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::invalid(format!(
                "label length {} != {height}x{width}",
                labels.len()
            )));
        }
        if num_categories == 0 {
            return Err(Error::invalid("label map needs at least one category"));
        }
        if let Some(l) = labels
            .iter()
            .find(|&&l| l != UNLABELED && (l < 0 || l as usize >= num_categories))
        {
            return Err(Error::invalid(format!(
                "label {l} outside {{-1, 0..{num_categories}}}"
            )));
        }
        Ok(Self {
            height,
            width,
            num_categories,
            labels,
        })
    }

    pub fn unlabeled(height: usize, width: usize, num_categories: usize) -> Result<Self> {
        Self::new(height, width, num_categories, vec![UNLABELED; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_categories(&self) -> usize {
        self.num_categories
    }

    pub fn labels(&self) -> &[i32] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != UNLABELED).count()
    }

    pub fn same_shape(&self, other: &SparseLabelMap) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn check_shape(&self, other: &SparseLabelMap) -> Result<()> {
        if !self.same_shape(other) || self.num_categories != other.num_categories {
            return Err(Error::invalid(format!(
                "label maps differ: {}x{} (C={}) vs {}x{} (C={})",
                self.height,
                self.width,
                self.num_categories,
                other.height,
                other.width,
                other.num_categories
            )));
        }
        Ok(())
    }

    /// 8-bit encoding: categories as-is, unlabeled as 255.
    pub fn to_u8(&self) -> Vec<u8> {
        self.labels
            .iter()
            .map(|&l| if l == UNLABELED { 255 } else { l as u8 })
            .collect()
    }

    pub fn from_u8(height: usize, width: usize, num_categories: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(
            height,
            width,
            num_categories,
            bytes
                .iter()
                .map(|&b| if b == 255 { UNLABELED } else { b as i32 })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryTable {
    names: Vec<String>,
}

impl Default for CategoryTable {
    /// The nine Martian terrain categories.
    fn default() -> Self {
        Self::new(
            [
                "sky", "ridge", "soil", "sand", "bedrock", "rock", "rover", "trace", "hole",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        )
        .expect("static table is valid")
    }
}

impl CategoryTable {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() || names.len() > 255 {
            return Err(Error::invalid("category table needs 1..=255 entries"));
        }
        Ok(Self { names })
    }

    /// Generic names `texture-0 ..` used by the synthetic generator.
    pub fn numbered(count: usize) -> Result<Self> {
        Self::new((0..count).map(|i| format!("texture-{i}")).collect())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &str)> {
        self.names.iter().enumerate().map(|(i, n)| (i, n.as_str()))
    }
}

pub fn to_grayscale(img: &ImageTensor) -> Result<ImageTensor> {
    match img.channels {
        1 => Ok(img.clone()),
        3 => {
            let data = img
                .data
                .chunks_exact(3)
                .map(|px| (LUMA[0] * px[0] + LUMA[1] * px[1] + LUMA[2] * px[2]).clamp(0.0, 1.0))
                .collect();
            ImageTensor::from_raw(img.height, img.width, 1, data)
        }
        c => Err(Error::invalid(format!(
            "grayscale conversion needs 1 or 3 channels, got {c}"
        ))),
    }
}

/// Computes `img ⊙ (1 − mask)`: masked pixels are zeroed in every channel.
pub fn apply_mask(img: &ImageTensor, mask: &BinaryMask) -> Result<ImageTensor> {
    if img.height != mask.height() || img.width != mask.width() {
        return Err(Error::invalid(format!(
            "mask {}x{} does not match image {}x{}",
            mask.height(),
            mask.width(),
            img.height,
            img.width
        )));
    }
    let mut data = img.data.clone();
    for (px, &m) in data.chunks_exact_mut(img.channels).zip(mask.values()) {
        if m != 0 {
            px.fill(0.0);
        }
    }
    ImageTensor::from_raw(img.height, img.width, img.channels, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rgb(px: &[[f32; 3]], h: usize, w: usize) -> ImageTensor {
        ImageTensor::new(h, w, 3, px.iter().flatten().copied().collect()).unwrap()
    }

    #[test]
    fn grayscale_weights() {
        let white = rgb(&[[1.0, 1.0, 1.0]], 1, 1);
        assert!((to_grayscale(&white).unwrap().data()[0] - 1.0).abs() < 1e-6);
        let red = rgb(&[[1.0, 0.0, 0.0]], 1, 1);
        assert!((to_grayscale(&red).unwrap().data()[0] - 0.299).abs() < 1e-7);
    }

    #[test]
    fn grayscale_is_identity_on_one_channel() {
        let g = ImageTensor::new(2, 2, 1, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let once = to_grayscale(&g).unwrap();
        assert_eq!(once, g);
        assert_eq!(to_grayscale(&once).unwrap(), g);
    }

    #[test]
    fn grayscale_rejects_two_channels() {
        let img = ImageTensor::new(1, 1, 2, vec![0.0, 0.0]).unwrap();
        assert!(matches!(to_grayscale(&img), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn mask_apply_cases() {
        let img = rgb(
            &[
                [0.1, 0.2, 0.3],
                [0.4, 0.5, 0.6],
                [0.7, 0.8, 0.9],
                [1.0, 0.5, 0.25],
            ],
            2,
            2,
        );
        let zeros = BinaryMask::new(2, 2, vec![0; 4]).unwrap();
        assert_eq!(apply_mask(&img, &zeros).unwrap(), img);

        let ones = BinaryMask::new(2, 2, vec![1; 4]).unwrap();
        assert!(apply_mask(&img, &ones).unwrap().data().iter().all(|&v| v == 0.0));

        let corner = BinaryMask::new(2, 2, vec![1, 0, 0, 0]).unwrap();
        let out = apply_mask(&img, &corner).unwrap();
        assert_eq!(&out.data()[..3], &[0.0, 0.0, 0.0]);
        assert_eq!(&out.data()[3..], &img.data()[3..]);
        assert_eq!(apply_mask(&out, &corner).unwrap(), out);
    }

    #[test]
    fn mask_apply_shape_mismatch() {
        let img = ImageTensor::filled(2, 2, 1, 0.5).unwrap();
        let m = BinaryMask::new(2, 3, vec![0; 6]).unwrap();
        assert!(apply_mask(&img, &m).is_err());
    }

    #[test]
    fn label_validation_and_u8_encoding() {
        assert!(SparseLabelMap::new(1, 2, 3, vec![3, -1]).is_err());
        assert!(SparseLabelMap::new(1, 2, 3, vec![-2, 0]).is_err());
        let y = SparseLabelMap::new(1, 3, 9, vec![8, -1, 0]).unwrap();
        assert_eq!(y.to_u8(), vec![8, 255, 0]);
        assert_eq!(SparseLabelMap::from_u8(1, 3, 9, &y.to_u8()).unwrap(), y);
    }

    #[test]
    fn default_category_table() {
        let t = CategoryTable::default();
        assert_eq!(t.len(), 9);
        assert_eq!(t.name(0), Some("sky"));
        assert_eq!(t.name(3), Some("sand"));
        assert_eq!(t.id("hole"), Some(8));
    }

    #[test]
    fn pixel_range_enforced() {
        assert!(ImageTensor::new(1, 1, 1, vec![1.5]).is_err());
        assert!(ImageTensor::new(1, 1, 1, vec![f32::NAN]).is_err());
        assert!(ImageTensor::new(1, 2, 1, vec![0.5]).is_err());
    }
}
