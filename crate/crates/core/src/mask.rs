//! Random mask generators: one rectangle, a subset of square patches, or
//! free-form brush strokes. All generators are pure functions of their
//! arguments and seed.

use std::f64::consts::PI;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Pixel mask, `1` marks a hidden (invalid) pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    values: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, values: Vec<u8>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::invalid("mask length does not match shape"));
        }
        if values.iter().any(|&v| v > 1) {
            return Err(Error::invalid("mask values must be 0 or 1"));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.values[y * self.width + x] != 0
    }

    pub fn set(&mut self, y: usize, x: usize) {
        self.values[y * self.width + x] = 1;
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0).count()
    }

    /// Realized fraction of masked pixels.
    pub fn ratio(&self) -> f64 {
        self.count() as f64 / self.values.len() as f64
    }

    /// `0/255` bytes for PNG output.
    pub fn to_u8(&self) -> Vec<u8> {
        self.values.iter().map(|&v| v * 255).collect()
    }
}

/// Patch-level mask over the histogram grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchMask {
    grid_h: usize,
    grid_w: usize,
    values: Vec<u8>,
}

impl PatchMask {
    pub fn new(grid_h: usize, grid_w: usize, values: Vec<u8>) -> Result<Self> {
        if values.len() != grid_h * grid_w || values.iter().any(|&v| v > 1) {
            return Err(Error::invalid("patch mask must be a binary grid_h x grid_w map"));
        }
        Ok(Self {
            grid_h,
            grid_w,
            values,
        })
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0).count()
    }
}

/// Marks a patch when at least half of its pixels are masked.
pub fn to_patch_mask(mask: &BinaryMask, patch: usize) -> Result<PatchMask> {
    if patch == 0 {
        return Err(Error::invalid("patch size must be positive"));
    }
    let gh = mask.height.div_ceil(patch);
    let gw = mask.width.div_ceil(patch);
    let mut masked = vec![0usize; gh * gw];
    let mut total = vec![0usize; gh * gw];
    for y in 0..mask.height {
        for x in 0..mask.width {
            let cell = (y / patch) * gw + x / patch;
            total[cell] += 1;
            masked[cell] += mask.values[y * mask.width + x] as usize;
        }
    }
    let values = masked
        .iter()
        .zip(&total)
        .map(|(&m, &t)| u8::from(2 * m >= t))
        .collect();
    PatchMask::new(gh, gw, values)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("mask ratio {ratio} outside (0, 1)")));
    }
    Ok(())
}

fn round_half_up(v: f64) -> usize {
    (v + 0.5).floor() as usize
}

/// One axis-aligned rectangle covering about `ratio` of the image.
pub fn rect_mask(height: usize, width: usize, ratio: f64, seed: u64) -> Result<BinaryMask> {
    check_ratio(ratio)?;
    if height == 0 || width == 0 {
        return Err(Error::invalid("mask dimensions must be positive"));
    }
    let mut rng = rng(seed);
    let area = ratio * (height * width) as f64;
    let aspect: f64 = rng.gen_range(0.5..=2.0);
    let mut rh = ((area * aspect).sqrt().round() as usize).clamp(1, height);
    let rw = ((area / rh as f64).round() as usize).clamp(1, width);
    // width clipped: give the lost area back to the height
    if rw == width {
        rh = ((area / width as f64).round() as usize).clamp(1, height);
    }
    let top = rng.gen_range(0..=height - rh);
    let left = rng.gen_range(0..=width - rw);
    let mut mask = BinaryMask::zeros(height, width);
    for y in top..top + rh {
        for x in left..left + rw {
            mask.set(y, x);
        }
    }
    Ok(mask)
}

/// Masks exactly `round(ratio·N)` of the `N` full `patch × patch` tiles.
pub fn patch_mask(height: usize, width: usize, patch: usize, ratio: f64, seed: u64) -> Result<BinaryMask> {
    check_ratio(ratio)?;
    if patch == 0 || patch > height || patch > width {
        return Err(Error::invalid(format!(
            "patch {patch} does not fit a {height}x{width} image"
        )));
    }
    let gh = height / patch;
    let gw = width / patch;
    let n = gh * gw;
    let k = round_half_up(ratio * n as f64).min(n);
    let mut mask = BinaryMask::zeros(height, width);
    for cell in index::sample(&mut rng(seed), n, k).into_iter() {
        let (py, px) = (cell / gw, cell % gw);
        for y in py * patch..(py + 1) * patch {
            for x in px * patch..(px + 1) * patch {
                mask.set(y, x);
            }
        }
    }
    Ok(mask)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FreeformParams {
    /// Strokes drawn per round.
    pub strokes: (usize, usize),
    /// Polyline segments per stroke.
    pub segments: (usize, usize),
    /// Segment length in pixels.
    pub length: (f64, f64),
    /// Brush diameter in pixels.
    pub thickness: (f64, f64),
    pub ratio: f64,
    /// Rounds attempted before giving up on reaching `ratio`.
    pub max_rounds: usize,
}

impl FreeformParams {
    /// Defaults scaled to the image: lengths 10–15% and thickness 5–12% of
    /// the shorter side.
    pub fn for_image(height: usize, width: usize, ratio: f64) -> Self {
        let side = height.min(width) as f64;
        Self {
            strokes: (1, 8),
            segments: (1, 10),
            length: (0.10 * side, 0.15 * side),
            thickness: ((0.05 * side).max(1.0), (0.12 * side).max(1.0)),
            ratio,
            max_rounds: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_ratio(self.ratio)?;
        let ok_usize = |(a, b): (usize, usize)| a >= 1 && a <= b;
        let ok_f64 = |(a, b): (f64, f64)| a > 0.0 && a <= b && b.is_finite();
        if !ok_usize(self.strokes) || !ok_usize(self.segments) {
            return Err(Error::invalid("stroke and segment ranges must be nonempty and positive"));
        }
        if !ok_f64(self.length) || !ok_f64(self.thickness) {
            return Err(Error::invalid("length and thickness ranges must be nonempty and positive"));
        }
        if self.max_rounds == 0 {
            return Err(Error::invalid("max_rounds must be positive"));
        }
        Ok(())
    }
}

fn sample_range(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

/// Rasterizes a round-capped segment of diameter `thickness`; returns the
/// number of newly masked pixels. A pixel is covered when its centre lies
/// within `thickness / 2` of the segment.
pub fn draw_segment(mask: &mut BinaryMask, from: (f64, f64), to: (f64, f64), thickness: f64) -> usize {
    let r = thickness / 2.0;
    let (y0, x0) = from;
    let (y1, x1) = to;
    let ymin = (y0.min(y1) - r).floor().max(0.0) as usize;
    let xmin = (x0.min(x1) - r).floor().max(0.0) as usize;
    let ymax = ((y0.max(y1) + r).ceil().max(0.0) as usize).min(mask.height.saturating_sub(1));
    let xmax = ((x0.max(x1) + r).ceil().max(0.0) as usize).min(mask.width.saturating_sub(1));
    let (dy, dx) = (y1 - y0, x1 - x0);
    let len2 = dy * dy + dx * dx;
    let mut added = 0;
    for y in ymin..=ymax {
        for x in xmin..=xmax {
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            let t = if len2 > 0.0 {
                (((py - y0) * dy + (px - x0) * dx) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (cy, cx) = (y0 + t * dy, x0 + t * dx);
            if (py - cy).powi(2) + (px - cx).powi(2) <= r * r {
                let v = &mut mask.values[y * mask.width + x];
                if *v == 0 {
                    *v = 1;
                    added += 1;
                }
            }
        }
    }
    added
}

/// Draws random brush strokes until the masked fraction first reaches the
/// target ratio.
pub fn freeform_mask(height: usize, width: usize, params: &FreeformParams, seed: u64) -> Result<BinaryMask> {
    params.validate()?;
    if height == 0 || width == 0 {
        return Err(Error::invalid("mask dimensions must be positive"));
    }
    let mut rng = rng(seed);
    let mut mask = BinaryMask::zeros(height, width);
    let target = (params.ratio * (height * width) as f64).ceil() as usize;
    let mut masked = 0;
    let (fh, fw) = (height as f64, width as f64);
    for _ in 0..params.max_rounds {
        let strokes = rng.gen_range(params.strokes.0..=params.strokes.1);
        for _ in 0..strokes {
            let segments = rng.gen_range(params.segments.0..=params.segments.1);
            let thickness = sample_range(&mut rng, params.thickness);
            let mut at = (rng.gen_range(0.0..fh), rng.gen_range(0.0..fw));
            for _ in 0..segments {
                let angle = rng.gen_range(0.0..2.0 * PI);
                let len = sample_range(&mut rng, params.length);
                let next = (
                    (at.0 + len * angle.sin()).clamp(0.0, fh),
                    (at.1 + len * angle.cos()).clamp(0.0, fw),
                );
                masked += draw_segment(&mut mask, at, next, thickness);
                if masked >= target {
                    return Ok(mask);
                }
                at = next;
            }
        }
    }
    Err(Error::Generation(format!(
        "free-form mask reached {:.3} of target {:.3} after {} rounds",
        masked as f64 / (height * width) as f64,
        params.ratio,
        params.max_rounds
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    Rect,
    Patch,
    Freeform,
}

impl MaskKind {
    pub fn name(&self) -> &'static str {
        match self {
            MaskKind::Rect => "rect",
            MaskKind::Patch => "patch",
            MaskKind::Freeform => "freeform",
        }
    }

    /// Ratio that worked best for each family in the masking ablation.
    pub fn default_ratio(&self) -> f64 {
        match self {
            MaskKind::Rect => 0.3,
            MaskKind::Patch => 0.4,
            MaskKind::Freeform => 0.6,
        }
    }
}

impl std::str::FromStr for MaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rect" => Ok(MaskKind::Rect),
            "patch" => Ok(MaskKind::Patch),
            "freeform" => Ok(MaskKind::Freeform),
            other => Err(Error::invalid(format!("unknown mask type '{other}'"))),
        }
    }
}

impl std::fmt::Display for MaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A fully specified mask family.
#[derive(Debug, Clone, PartialEq)]
pub enum MaskStrategy {
    Rect { ratio: f64 },
    Patch { patch: usize, ratio: f64 },
    Freeform(FreeformParams),
}

impl MaskStrategy {
    pub fn new(kind: MaskKind, height: usize, width: usize, ratio: f64, patch: usize) -> Self {
        match kind {
            MaskKind::Rect => MaskStrategy::Rect { ratio },
            MaskKind::Patch => MaskStrategy::Patch { patch, ratio },
            MaskKind::Freeform => MaskStrategy::Freeform(FreeformParams::for_image(height, width, ratio)),
        }
    }

    pub fn kind(&self) -> MaskKind {
        match self {
            MaskStrategy::Rect { .. } => MaskKind::Rect,
            MaskStrategy::Patch { .. } => MaskKind::Patch,
            MaskStrategy::Freeform(_) => MaskKind::Freeform,
        }
    }

    pub fn ratio(&self) -> f64 {
        match self {
            MaskStrategy::Rect { ratio } | MaskStrategy::Patch { ratio, .. } => *ratio,
            MaskStrategy::Freeform(p) => p.ratio,
        }
    }

    pub fn generate(&self, height: usize, width: usize, seed: u64) -> Result<BinaryMask> {
        match self {
            MaskStrategy::Rect { ratio } => rect_mask(height, width, *ratio, seed),
            MaskStrategy::Patch { patch, ratio } => patch_mask(height, width, *patch, *ratio, seed),
            MaskStrategy::Freeform(p) => freeform_mask(height, width, p, seed),
        }
    }
}

/// Realized ratios for seeds `0..samples`.
pub fn calibrate(strategy: &MaskStrategy, height: usize, width: usize, samples: u64) -> Result<Vec<f64>> {
    (0..samples)
        .map(|seed| strategy.generate(height, width, seed).map(|m| m.ratio()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rect_area_close_to_target() {
        for seed in 0..50 {
            let m = rect_mask(100, 100, 0.25, seed).unwrap();
            assert!((m.count() as f64 - 2500.0).abs() <= 200.0, "{}", m.count());
        }
        assert_eq!(rect_mask(64, 48, 0.3, 9).unwrap(), rect_mask(64, 48, 0.3, 9).unwrap());
        assert!(rect_mask(10, 10, 1.0, 0).is_err());
        assert!(rect_mask(10, 10, 0.0, 0).is_err());
    }

    #[test]
    fn rect_is_one_rectangle() {
        let m = rect_mask(40, 60, 0.3, 3).unwrap();
        let ys: Vec<usize> = (0..40).filter(|&y| (0..60).any(|x| m.get(y, x))).collect();
        let xs: Vec<usize> = (0..60).filter(|&x| (0..40).any(|y| m.get(y, x))).collect();
        assert_eq!(ys.len() * xs.len(), m.count());
    }

    #[test]
    fn patch_counts_exact() {
        let m = patch_mask(512, 512, 32, 0.4, 1).unwrap();
        assert_eq!(m.count(), 102 * 32 * 32);
        assert!((m.ratio() - 0.3984375).abs() < 1e-12);
        let one = patch_mask(128, 128, 32, 1.0 / 16.0, 5).unwrap();
        assert_eq!(one.count(), 32 * 32);
        assert!(patch_mask(16, 64, 32, 0.5, 0).is_err());
    }

    #[test]
    fn freeform_deterministic_and_reaches_target() {
        let p = FreeformParams::for_image(64, 64, 0.6);
        let a = freeform_mask(64, 64, &p, 11).unwrap();
        assert_eq!(a, freeform_mask(64, 64, &p, 11).unwrap());
        assert!(a.ratio() >= 0.6);
    }

    #[test]
    fn freeform_cap_reports_failure() {
        let p = FreeformParams {
            strokes: (1, 1),
            segments: (1, 1),
            length: (1.0, 1.0),
            thickness: (1.0, 1.0),
            ratio: 0.9,
            max_rounds: 3,
        };
        assert!(matches!(freeform_mask(64, 64, &p, 0), Err(Error::Generation(_))));
    }

    #[test]
    fn capsule_area_matches_geometry() {
        let mut m = BinaryMask::zeros(100, 100);
        let (len, t) = (30.0, 8.0);
        let n = draw_segment(&mut m, (50.0, 30.0), (50.0, 30.0 + len), t);
        let expect = len * t + PI * (t / 2.0) * (t / 2.0);
        assert!(((n as f64) - expect).abs() / expect < 0.08, "{n} vs {expect}");
    }

    #[test]
    fn patch_mask_threshold() {
        let ones = BinaryMask::new(4, 4, vec![1; 16]).unwrap();
        assert_eq!(to_patch_mask(&ones, 2).unwrap().values(), &[1, 1, 1, 1]);

        let mut half = BinaryMask::zeros(32, 32);
        for y in 0..16 {
            for x in 0..32 {
                half.set(y, x);
            }
        }
        assert_eq!(to_patch_mask(&half, 32).unwrap().values(), &[1]);

        let mut single = BinaryMask::zeros(32, 32);
        single.set(5, 5);
        assert_eq!(to_patch_mask(&single, 32).unwrap().values(), &[0]);
    }

    proptest! {
        #[test]
        fn patch_mask_monotone(bits in proptest::collection::vec(0u8..2, 64), extra in proptest::collection::vec(0u8..2, 64)) {
            let a = BinaryMask::new(8, 8, bits.clone()).unwrap();
            let b = BinaryMask::new(8, 8, bits.iter().zip(&extra).map(|(x, y)| x | y).collect()).unwrap();
            let pa = to_patch_mask(&a, 3).unwrap();
            let pb = to_patch_mask(&b, 3).unwrap();
            for (x, y) in pa.values().iter().zip(pb.values()) {
                prop_assert!(x <= y);
            }
        }

        #[test]
        fn generators_binary(seed in any::<u64>(), ratio in 0.05f64..0.9) {
            for s in [
                MaskStrategy::new(MaskKind::Rect, 48, 48, ratio, 16),
                MaskStrategy::new(MaskKind::Patch, 48, 48, ratio, 16),
                MaskStrategy::new(MaskKind::Freeform, 48, 48, ratio, 16),
            ] {
                let m = s.generate(48, 48, seed).unwrap();
                prop_assert!(m.values().iter().all(|&v| v <= 1));
            }
        }
    }
}
