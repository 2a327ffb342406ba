//! Rotation-invariant uniform local binary patterns (riu2) and per-patch
//! occurrence histograms.
//!
//! Codes lie in `0..=P+1`: a uniform pattern (at most two circular bit
//! transitions) maps to its popcount, every other pattern to the pooled
//! bin `P+1`. Histograms therefore have `P+2` bins.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::imaging::ImageTensor;

/// Neighbour count and sampling radius of the operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LbpConfig {
    pub points: usize,
    pub radius: usize,
}

impl Default for LbpConfig {
    fn default() -> Self {
        Self {
            points: 24,
            radius: 3,
        }
    }
}

impl LbpConfig {
    pub fn new(points: usize, radius: usize) -> Result<Self> {
        let cfg = Self { points, radius };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points < 4 || self.points > 64 {
            return Err(Error::invalid(format!(
                "LBP neighbour count {} outside 4..=64",
                self.points
            )));
        }
        if self.radius < 1 {
            return Err(Error::invalid("LBP radius must be at least 1"));
        }
        Ok(())
    }

    /// Number of histogram bins, `P + 2`.
    pub fn bins(&self) -> usize {
        self.points + 2
    }
}

/// A circular bit pattern of `len` bits, bit `k` belonging to neighbour `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LbpBits {
    bits: u64,
    len: u32,
}

impl LbpBits {
    pub fn new(bits: u64, len: usize) -> Self {
        assert!((1..=64).contains(&len), "pattern length {len} outside 1..=64");
        let len = len as u32;
        Self {
            bits: bits & Self::full(len),
            len,
        }
    }

    /// Parses a string such as `"00001111"`; the first character is bit 0.
    pub fn parse(s: &str) -> Option<Self> {
        if s.is_empty() || s.len() > 64 {
            return None;
        }
        let mut bits = 0u64;
        for (k, ch) in s.chars().enumerate() {
            match ch {
                '1' => bits |= 1 << k,
                '0' => {}
                _ => return None,
            }
        }
        Some(Self::new(bits, s.len()))
    }

    fn full(len: u32) -> u64 {
        if len == 64 {
            u64::MAX
        } else {
            (1u64 << len) - 1
        }
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bits(&self) -> u64 {
        self.bits
    }

    pub fn count_ones(&self) -> u32 {
        self.bits.count_ones()
    }

    /// Circular rotation by `k` positions.
    pub fn rotate(&self, k: usize) -> Self {
        let n = self.len;
        let k = (k % n as usize) as u32;
        if k == 0 {
            return *self;
        }
        let rotated = (self.bits << k) | (self.bits >> (n - k));
        Self::new(rotated, n as usize)
    }
}

/// Number of circular 0↔1 transitions in the pattern.
pub fn uniformity(bits: LbpBits) -> u32 {
    let shifted = bits.rotate(1);
    (bits.bits ^ shifted.bits).count_ones()
}

pub fn riu2_code(bits: LbpBits) -> usize {
    if uniformity(bits) <= 2 {
        bits.count_ones() as usize
    } else {
        bits.len() + 1
    }
}

/// Per-neighbour offsets on the sampling circle, snapped to integers where
/// the trigonometry lands within rounding noise of one.
fn circle_offsets(cfg: &LbpConfig) -> Vec<(f64, f64)> {
    let snap = |v: f64| {
        let r = v.round();
        if (v - r).abs() < 1e-9 {
            r
        } else {
            v
        }
    };
    (0..cfg.points)
        .map(|k| {
            let theta = 2.0 * PI * k as f64 / cfg.points as f64;
            let r = cfg.radius as f64;
            (snap(-r * theta.sin()), snap(r * theta.cos()))
        })
        .collect()
}

/// Bilinear sample relative to the centre value: returns `Σ wᵢ (vᵢ − c)`.
/// Working in differences keeps the threshold decision exact on flat
/// neighbourhoods and under uniform shifts of the input.
fn sample_delta(gray: &ImageTensor, y: usize, x: usize, dy: f64, dx: f64) -> f64 {
    let h = gray.height();
    let w = gray.width();
    let center = gray.get(y, x, 0) as f64;
    let fy = (y as f64 + dy).clamp(0.0, (h - 1) as f64);
    let fx = (x as f64 + dx).clamp(0.0, (w - 1) as f64);
    let y0 = fy.floor() as usize;
    let x0 = fx.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let ty = fy - y0 as f64;
    let tx = fx - x0 as f64;
    let d = |yy: usize, xx: usize| gray.get(yy, xx, 0) as f64 - center;
    let mut acc = 0.0;
    for (wt, yy, xx) in [
        ((1.0 - ty) * (1.0 - tx), y0, x0),
        ((1.0 - ty) * tx, y0, x1),
        (ty * (1.0 - tx), y1, x0),
        (ty * tx, y1, x1),
    ] {
        if wt != 0.0 {
            acc += wt * d(yy, xx);
        }
    }
    acc
}

fn require_gray(gray: &ImageTensor) -> Result<()> {
    if gray.channels() != 1 {
        return Err(Error::invalid(format!(
            "LBP needs a single-channel image, got {} channels",
            gray.channels()
        )));
    }
    Ok(())
}

/// Samples `P` points on the circle of radius `R` around `(y, x)`.
pub fn sample_neighbors(gray: &ImageTensor, y: usize, x: usize, cfg: &LbpConfig) -> Result<Vec<f64>> {
    require_gray(gray)?;
    cfg.validate()?;
    if y >= gray.height() || x >= gray.width() {
        return Err(Error::invalid(format!("pixel ({y}, {x}) outside image")));
    }
    let center = gray.get(y, x, 0) as f64;
    Ok(circle_offsets(cfg)
        .into_iter()
        .map(|(dy, dx)| center + sample_delta(gray, y, x, dy, dx))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LbpCodeMap {
    height: usize,
    width: usize,
    points: usize,
    codes: Vec<u8>,
}

impl LbpCodeMap {
    pub fn new(height: usize, width: usize, points: usize, codes: Vec<u8>) -> Result<Self> {
        if codes.len() != height * width {
            return Err(Error::invalid("code map length does not match shape"));
        }
        if let Some(c) = codes.iter().find(|&&c| c as usize > points + 1) {
            return Err(Error::invalid(format!("code {c} exceeds P+1 = {}", points + 1)));
        }
        Ok(Self {
            height,
            width,
            points,
            codes,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn bins(&self) -> usize {
        self.points + 2
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    /// Codes stretched to `0..=255` for visual inspection.
    pub fn to_display_u8(&self) -> Vec<u8> {
        let top = (self.points + 1) as f64;
        self.codes
            .iter()
            .map(|&c| (c as f64 * 255.0 / top).round() as u8)
            .collect()
    }
}

pub fn lbp_map(gray: &ImageTensor, cfg: &LbpConfig) -> Result<LbpCodeMap> {
    require_gray(gray)?;
    cfg.validate()?;
    let min_side = 2 * cfg.radius + 1;
    if gray.height() < min_side || gray.width() < min_side {
        return Err(Error::invalid(format!(
            "image {}x{} smaller than the {min_side}px LBP support",
            gray.height(),
            gray.width()
        )));
    }
    let offsets = circle_offsets(cfg);
    let mut codes = Vec::with_capacity(gray.height() * gray.width());
    for y in 0..gray.height() {
        for x in 0..gray.width() {
            let mut bits = 0u64;
            for (k, &(dy, dx)) in offsets.iter().enumerate() {
                if sample_delta(gray, y, x, dy, dx) >= 0.0 {
                    bits |= 1 << k;
                }
            }
            codes.push(riu2_code(LbpBits::new(bits, cfg.points)) as u8);
        }
    }
    LbpCodeMap::new(gray.height(), gray.width(), cfg.points, codes)
}

/// Unit-length occurrence histograms over a grid of square patches.
#[derive(Debug, Clone, PartialEq)]
pub struct LbpHistogramMap {
    grid_h: usize,
    grid_w: usize,
    bins: usize,
    /// `[grid_h][grid_w][bins]`, row-major.
    data: Vec<f32>,
}

impl LbpHistogramMap {
    pub fn new(grid_h: usize, grid_w: usize, bins: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != grid_h * grid_w * bins {
            return Err(Error::invalid("histogram data does not match grid shape"));
        }
        Ok(Self {
            grid_h,
            grid_w,
            bins,
            data,
        })
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn patch(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.grid_w + col) * self.bins;
        &self.data[start..start + self.bins]
    }

    /// Flat binary form: `grid_h, grid_w, bins` as little-endian `u32`,
    /// then the histogram values as little-endian `f32`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.data.len());
        for v in [self.grid_h, self.grid_w, self.bins] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(Error::invalid("histogram file shorter than its header"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i * 4..i * 4 + 4].try_into().unwrap()) as usize;
        let (gh, gw, bins) = (word(0), word(1), word(2));
        let body = &bytes[12..];
        if body.len() != gh * gw * bins * 4 {
            return Err(Error::invalid("histogram body length does not match header"));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(gh, gw, bins, data)
    }
}

pub fn lbp_histograms(codes: &LbpCodeMap, patch: usize) -> Result<LbpHistogramMap> {
    if patch == 0 {
        return Err(Error::invalid("histogram patch size must be positive"));
    }
    let bins = codes.bins();
    let grid_h = codes.height.div_ceil(patch);
    let grid_w = codes.width.div_ceil(patch);
    let mut counts = vec![0u32; grid_h * grid_w * bins];
    for y in 0..codes.height {
        for x in 0..codes.width {
            let cell = (y / patch) * grid_w + x / patch;
            counts[cell * bins + codes.codes[y * codes.width + x] as usize] += 1;
        }
    }
    let mut data = Vec::with_capacity(counts.len());
    for hist in counts.chunks_exact(bins) {
        let norm = hist.iter().map(|&c| (c as f64).powi(2)).sum::<f64>().sqrt();
        data.extend(hist.iter().map(|&c| {
            if norm > 0.0 {
                (c as f64 / norm) as f32
            } else {
                0.0
            }
        }));
    }
    LbpHistogramMap::new(grid_h, grid_w, bins, data)
}

/// Grayscale conversion, code map and histograms in one call.
pub fn texture_target(img: &ImageTensor, cfg: &LbpConfig, patch: usize) -> Result<LbpHistogramMap> {
    let gray = crate::imaging::to_grayscale(img)?;
    lbp_histograms(&lbp_map(&gray, cfg)?, patch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bits(s: &str) -> LbpBits {
        LbpBits::parse(s).unwrap()
    }

    #[test]
    fn uniformity_examples() {
        assert_eq!(uniformity(bits("00000000")), 0);
        assert_eq!(uniformity(bits("00001111")), 2);
        assert_eq!(uniformity(bits("01010101")), 8);
    }

    #[test]
    fn riu2_examples() {
        assert_eq!(riu2_code(bits("11111111")), 8);
        assert_eq!(riu2_code(bits("00001111")), 4);
        assert_eq!(riu2_code(bits("01010101")), 9);
    }

    #[test]
    fn constant_image_samples() {
        let g = ImageTensor::filled(9, 9, 1, 0.42).unwrap();
        let cfg = LbpConfig::new(8, 2).unwrap();
        let s = sample_neighbors(&g, 4, 4, &cfg).unwrap();
        assert!(s.iter().all(|&v| v == 0.42f32 as f64));
    }

    #[test]
    fn four_neighbours_hit_axis_pixels() {
        let data: Vec<f32> = (0..25).map(|i| i as f32 / 25.0).collect();
        let g = ImageTensor::new(5, 5, 1, data).unwrap();
        let cfg = LbpConfig::new(4, 1).unwrap();
        let s = sample_neighbors(&g, 2, 2, &cfg).unwrap();
        // k=0 east, k=1 north, k=2 west, k=3 south
        let want = [g.get(2, 3, 0), g.get(1, 2, 0), g.get(2, 1, 0), g.get(3, 2, 0)];
        for (a, b) in s.iter().zip(want) {
            assert!((a - b as f64).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn corner_samples_clamp_to_border() {
        let data: Vec<f32> = (0..49).map(|i| (i % 7) as f32 / 10.0).collect();
        let g = ImageTensor::new(7, 7, 1, data).unwrap();
        let cfg = LbpConfig::new(4, 3).unwrap();
        let s = sample_neighbors(&g, 0, 0, &cfg).unwrap();
        // north (y=-3) clamps to (0,0); west (x=-3) clamps to (0,0)
        assert_eq!(s[1], g.get(0, 0, 0) as f64);
        assert_eq!(s[2], g.get(0, 0, 0) as f64);
        assert!((s[0] - g.get(0, 3, 0) as f64).abs() < 1e-12);
        assert!((s[3] - g.get(3, 0, 0) as f64).abs() < 1e-12);
    }

    #[test]
    fn multichannel_rejected() {
        let g = ImageTensor::filled(9, 9, 3, 0.5).unwrap();
        let cfg = LbpConfig::default();
        assert!(sample_neighbors(&g, 1, 1, &cfg).is_err());
        assert!(lbp_map(&g, &cfg).is_err());
    }

    #[test]
    fn too_small_image_rejected() {
        let g = ImageTensor::filled(6, 20, 1, 0.5).unwrap();
        assert!(lbp_map(&g, &LbpConfig::new(8, 3).unwrap()).is_err());
        assert!(lbp_map(&g, &LbpConfig::new(8, 2).unwrap()).is_ok());
    }

    #[test]
    fn constant_image_codes_are_p() {
        let g = ImageTensor::filled(16, 16, 1, 0.3).unwrap();
        let cfg = LbpConfig::default();
        let m = lbp_map(&g, &cfg).unwrap();
        assert!(m.codes().iter().all(|&c| c as usize == cfg.points));
        let shifted = g.map_raw(|v| v + 0.1).unwrap();
        assert_eq!(lbp_map(&shifted, &cfg).unwrap(), m);
    }

    #[test]
    fn bright_spot_is_code_zero() {
        let mut data = vec![0.1f32; 25];
        data[12] = 0.9;
        let g = ImageTensor::new(5, 5, 1, data).unwrap();
        let m = lbp_map(&g, &LbpConfig::new(8, 1).unwrap()).unwrap();
        assert_eq!(m.codes()[12], 0);
    }

    #[test]
    fn histogram_grid_and_norms() {
        let g = ImageTensor::filled(64, 64, 1, 0.5).unwrap();
        let cfg = LbpConfig::default();
        let h = texture_target(&g, &cfg, 32).unwrap();
        assert_eq!((h.grid_h(), h.grid_w(), h.bins()), (2, 2, 26));
        for r in 0..2 {
            for c in 0..2 {
                let p = h.patch(r, c);
                assert_eq!(p[cfg.points], 1.0);
                assert_eq!(p.iter().filter(|&&v| v != 0.0).count(), 1);
            }
        }
        assert!(lbp_histograms(&lbp_map(&g, &cfg).unwrap(), 0).is_err());
    }

    #[test]
    fn partial_patches_tile_the_image() {
        let codes = LbpCodeMap::new(5, 7, 8, vec![3; 35]).unwrap();
        let h = lbp_histograms(&codes, 4).unwrap();
        assert_eq!((h.grid_h(), h.grid_w()), (2, 2));
    }

    #[test]
    fn histogram_bytes_round_trip() {
        let codes = LbpCodeMap::new(4, 4, 4, (0..16).map(|i| (i % 6) as u8).collect()).unwrap();
        let h = lbp_histograms(&codes, 2).unwrap();
        let bytes = h.to_bytes();
        assert_eq!(&bytes[..4], &2u32.to_le_bytes());
        assert_eq!(LbpHistogramMap::from_bytes(&bytes).unwrap(), h);
    }

    proptest! {
        #[test]
        fn riu2_rotation_invariant(raw in any::<u64>(), len in 4usize..=32, k in 0usize..64) {
            let b = LbpBits::new(raw, len);
            prop_assert_eq!(riu2_code(b.rotate(k)), riu2_code(b));
            prop_assert!(riu2_code(b) <= len + 1);
        }

        #[test]
        fn random_code_maps_are_unit_norm(codes in proptest::collection::vec(0u8..10, 64 * 64)) {
            let m = LbpCodeMap::new(64, 64, 8, codes).unwrap();
            let h = lbp_histograms(&m, 32).unwrap();
            for hist in h.data().chunks_exact(h.bins()) {
                let n = hist.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
                prop_assert!((n - 1.0).abs() < 1e-6);
            }
        }
    }
}
