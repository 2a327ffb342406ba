//! Sparse-annotation datasets: manifests and splits, label statistics, and a
//! procedural texture generator for desk-scale experiments.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::imaging::{CategoryTable, ImageTensor, SparseLabelMap, UNLABELED};
use crate::io;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    /// 5000 / 200 / 800 out of every 6000 samples; the remainder goes to
    /// the training split.
    pub fn standard_proportions(available: usize) -> Self {
        let val = available * 200 / 6000;
        let test = available * 800 / 6000;
        Self {
            train: available - val - test,
            val,
            test,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub label: PathBuf,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub categories: CategoryTable,
    pub seed: u64,
}

/// Deterministically shuffles `pairs` by `seed` and deals them into
/// disjoint train / val / test splits.
pub fn split(
    pairs: Vec<(PathBuf, PathBuf)>,
    counts: SplitCounts,
    seed: u64,
    categories: CategoryTable,
) -> Result<DatasetManifest> {
    if counts.total() > pairs.len() {
        return Err(Error::invalid(format!(
            "requested {} samples but only {} available",
            counts.total(),
            pairs.len()
        )));
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut entries = Vec::with_capacity(counts.total());
    for (rank, &idx) in order.iter().take(counts.total()).enumerate() {
        let split = if rank < counts.train {
            Split::Train
        } else if rank < counts.train + counts.val {
            Split::Val
        } else {
            Split::Test
        };
        let (image, label) = pairs[idx].clone();
        entries.push(ManifestEntry { image, label, split });
    }
    let manifest = DatasetManifest {
        entries,
        categories,
        seed,
    };
    manifest.check_disjoint()?;
    Ok(manifest)
}

impl DatasetManifest {
    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen = std::collections::HashMap::new();
        for e in &self.entries {
            for p in [&e.image, &e.label] {
                if let Some(prev) = seen.insert(p.clone(), e.split) {
                    if prev != e.split {
                        return Err(Error::invalid(format!(
                            "{} appears in both {} and {}",
                            p.display(),
                            prev.name(),
                            e.split.name()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn split_entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split_entries(split).count()
    }

    /// `image_path,label_path,split` records, preceded by `#` metadata lines
    /// for the category table and seed.
    pub fn to_text(&self) -> String {
        let names: Vec<&str> = self.categories.iter().map(|(_, n)| n).collect();
        let mut out = format!("# categories: {}\n# seed: {}\n", names.join(","), self.seed);
        for e in &self.entries {
            writeln!(out, "{},{},{}", e.image.display(), e.label.display(), e.split.name()).unwrap();
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut categories = None;
        let mut seed = 0;
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                let meta = meta.trim();
                if let Some(v) = meta.strip_prefix("categories:") {
                    categories = Some(CategoryTable::new(
                        v.trim().split(',').map(|s| s.trim().to_string()).collect(),
                    )?);
                } else if let Some(v) = meta.strip_prefix("seed:") {
                    seed = v
                        .trim()
                        .parse()
                        .map_err(|_| Error::invalid(format!("manifest line {}: bad seed", lineno + 1)))?;
                }
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(Error::invalid(format!(
                    "manifest line {}: expected image,label,split",
                    lineno + 1
                )));
            }
            entries.push(ManifestEntry {
                image: PathBuf::from(fields[0]),
                label: PathBuf::from(fields[1]),
                split: fields[2].parse()?,
            });
        }
        let manifest = Self {
            entries,
            categories: categories.unwrap_or_default(),
            seed,
        };
        manifest.check_disjoint()?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&io::read_text(path)?).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    /// Loads one split into memory; relative paths resolve against `root`.
    pub fn load_split(&self, root: &Path, split: Split) -> Result<Vec<Sample>> {
        self.split_entries(split)
            .map(|e| {
                Ok(Sample {
                    image: io::read_image(&root.join(&e.image))?,
                    labels: io::read_labels(&root.join(&e.label), self.categories.len())?,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: ImageTensor,
    pub labels: SparseLabelMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub images: usize,
    /// `label_counts[k]` = images with exactly `k` distinct labeled categories.
    pub label_counts: Vec<usize>,
    /// Labeled-pixel area per category.
    pub area: Vec<u64>,
    pub unlabeled_pixels: u64,
    pub total_pixels: u64,
}

impl DatasetStats {
    pub fn from_labels<'a>(categories: usize, maps: impl IntoIterator<Item = &'a SparseLabelMap>) -> Self {
        let mut stats = DatasetStats {
            images: 0,
            label_counts: vec![0; categories + 1],
            area: vec![0; categories],
            unlabeled_pixels: 0,
            total_pixels: 0,
        };
        for m in maps {
            let mut present = vec![false; categories];
            for &l in m.labels() {
                if l == UNLABELED {
                    stats.unlabeled_pixels += 1;
                } else {
                    present[l as usize] = true;
                    stats.area[l as usize] += 1;
                }
            }
            stats.total_pixels += m.len() as u64;
            stats.label_counts[present.iter().filter(|&&p| p).count()] += 1;
            stats.images += 1;
        }
        stats
    }

    /// Share of labeled pixels per category; sums to 1 when anything is labeled.
    pub fn area_share(&self) -> Vec<f64> {
        let labeled: u64 = self.area.iter().sum();
        self.area
            .iter()
            .map(|&a| if labeled == 0 { 0.0 } else { a as f64 / labeled as f64 })
            .collect()
    }

    pub fn unlabeled_fraction(&self) -> f64 {
        if self.total_pixels == 0 {
            0.0
        } else {
            self.unlabeled_pixels as f64 / self.total_pixels as f64
        }
    }

    pub fn to_csv(&self, table: &CategoryTable) -> String {
        let mut out = String::from("section,key,value\n");
        for (k, n) in self.label_counts.iter().enumerate() {
            writeln!(out, "label_count,{k},{n}").unwrap();
        }
        for (k, share) in self.area_share().iter().enumerate() {
            let name = table.name(k).map(str::to_string).unwrap_or_else(|| k.to_string());
            writeln!(out, "area_share,{name},{share:.6}").unwrap();
        }
        writeln!(out, "summary,images,{}", self.images).unwrap();
        writeln!(out, "summary,unlabeled_fraction,{:.6}", self.unlabeled_fraction()).unwrap();
        out
    }
}

/// Reads every label file listed in the manifest (all splits).
pub fn stats(manifest: &DatasetManifest, root: &Path) -> Result<DatasetStats> {
    let maps = manifest
        .entries
        .iter()
        .map(|e| io::read_labels(&root.join(&e.label), manifest.categories.len()))
        .collect::<Result<Vec<_>>>()?;
    Ok(DatasetStats::from_labels(manifest.categories.len(), &maps))
}

/// Texture used to render a category.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TextureFamily {
    /// Uniform colour with per-pixel Gaussian noise.
    Flat { sigma: f64 },
    /// Sinusoidal stripes at a random angle; frequency in cycles per pixel.
    Stripes { freq: (f64, f64) },
    /// Smooth value-noise blobs with the given feature size in pixels.
    Blobs { scale: (f64, f64) },
    /// Axis-aligned checkerboard with the given cell size in pixels.
    Checker { cell: (f64, f64) },
}

impl TextureFamily {
    fn defaults() -> [TextureFamily; 4] {
        [
            TextureFamily::Flat { sigma: 0.08 },
            TextureFamily::Stripes { freq: (0.12, 0.25) },
            TextureFamily::Blobs { scale: (4.0, 8.0) },
            TextureFamily::Checker { cell: (3.0, 6.0) },
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthTextureSpec {
    pub height: usize,
    pub width: usize,
    pub categories: usize,
    /// One texture family per category.
    pub families: Vec<TextureFamily>,
    /// Range of Voronoi cells per image.
    pub cells: (usize, usize),
    /// Texture contrast relative to the base colour.
    pub amplitude: (f64, f64),
    /// Sensor noise added to every pixel.
    pub noise: f64,
    /// Boundary erosion radius (Chebyshev, px); the band becomes unlabeled.
    pub erosion: usize,
    /// Probability of dropping each surviving label.
    pub dropout: f64,
}

impl Default for SynthTextureSpec {
    fn default() -> Self {
        Self::new(64, 64, 4).expect("default spec is valid")
    }
}

impl SynthTextureSpec {
    /// Standard layout for `categories` classes; families cycle through
    /// flat, stripes, blobs and checker with shifted parameters on repeats.
    pub fn new(height: usize, width: usize, categories: usize) -> Result<Self> {
        if categories == 0 {
            return Err(Error::invalid("synthetic spec needs at least one category"));
        }
        let base = TextureFamily::defaults();
        let families = (0..categories)
            .map(|c| {
                let shift = 1.0 + (c / base.len()) as f64 * 0.6;
                match base[c % base.len()] {
                    TextureFamily::Flat { sigma } => TextureFamily::Flat { sigma: sigma * shift },
                    TextureFamily::Stripes { freq } => TextureFamily::Stripes {
                        freq: (freq.0 / shift, freq.1 / shift),
                    },
                    TextureFamily::Blobs { scale } => TextureFamily::Blobs {
                        scale: (scale.0 * shift, scale.1 * shift),
                    },
                    TextureFamily::Checker { cell } => TextureFamily::Checker {
                        cell: (cell.0 * shift, cell.1 * shift),
                    },
                }
            })
            .collect();
        let spec = Self {
            height,
            width,
            categories,
            families,
            cells: (3, 6),
            amplitude: (0.05, 0.12),
            noise: 0.08,
            erosion: 3,
            dropout: 0.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.categories == 0 {
            return Err(Error::invalid("synthetic spec needs at least one category"));
        }
        if self.categories > 254 {
            return Err(Error::invalid("at most 254 categories fit an 8-bit label file"));
        }
        if self.families.len() != self.categories {
            return Err(Error::invalid("need exactly one texture family per category"));
        }
        if self.height < 8 || self.width < 8 {
            return Err(Error::invalid("synthetic images must be at least 8x8"));
        }
        if self.cells.0 == 0 || self.cells.0 > self.cells.1 {
            return Err(Error::invalid("cell range must be nonempty and positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        if self.amplitude.0 < 0.0 || self.amplitude.0 > self.amplitude.1 || self.noise < 0.0 {
            return Err(Error::invalid("amplitude and noise must be nonnegative ranges"));
        }
        Ok(())
    }

    pub fn category_table(&self) -> CategoryTable {
        CategoryTable::numbered(self.categories).expect("validated category count")
    }
}

/// One generated sample plus the dense region map it was rendered from.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub image: ImageTensor,
    pub labels: SparseLabelMap,
    /// Category of every pixel, never unlabeled.
    pub oracle: SparseLabelMap,
}

impl SynthSample {
    pub fn to_sample(&self) -> Sample {
        Sample {
            image: self.image.clone(),
            labels: self.labels.clone(),
        }
    }
}

/// Per-sample stream, independent of generation order.
fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

struct Layout {
    region: Vec<usize>,
    category: Vec<usize>,
}

fn voronoi(spec: &SynthTextureSpec, rng: &mut ChaCha8Rng) -> Layout {
    let n = rng.gen_range(spec.cells.0..=spec.cells.1);
    let sites: Vec<(f64, f64)> = (0..n)
        .map(|_| (rng.gen_range(0.0..spec.height as f64), rng.gen_range(0.0..spec.width as f64)))
        .collect();
    let category = (0..n).map(|_| rng.gen_range(0..spec.categories)).collect();
    let mut region = Vec::with_capacity(spec.height * spec.width);
    for y in 0..spec.height {
        for x in 0..spec.width {
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            let nearest = sites
                .iter()
                .enumerate()
                .map(|(i, &(sy, sx))| (i, (py - sy).powi(2) + (px - sx).powi(2)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(i, _)| i)
                .unwrap();
            region.push(nearest);
        }
    }
    Layout { region, category }
}

/// Pixels whose `(2k+1)²` neighbourhood stays inside their own region.
fn eroded_interior(region: &[usize], height: usize, width: usize, k: usize) -> Vec<bool> {
    let mut keep = vec![true; region.len()];
    if k == 0 {
        return keep;
    }
    for y in 0..height {
        for x in 0..width {
            let r = region[y * width + x];
            let (y0, y1) = (y.saturating_sub(k), (y + k).min(height - 1));
            let (x0, x1) = (x.saturating_sub(k), (x + k).min(width - 1));
            'scan: for yy in y0..=y1 {
                for xx in x0..=x1 {
                    if region[yy * width + xx] != r {
                        keep[y * width + x] = false;
                        break 'scan;
                    }
                }
            }
        }
    }
    keep
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Texture value in roughly `[-1, 1]` for every pixel of one region.
struct Pattern {
    family: TextureFamily,
    angle: f64,
    freq: f64,
    phase: f64,
    size: f64,
    grid: Vec<f64>,
    grid_w: usize,
}

impl Pattern {
    fn sample(family: TextureFamily, spec: &SynthTextureSpec, rng: &mut ChaCha8Rng) -> Self {
        let mut p = Pattern {
            family,
            angle: rng.gen_range(0.0..PI),
            freq: 0.0,
            phase: rng.gen_range(0.0..2.0 * PI),
            size: 1.0,
            grid: Vec::new(),
            grid_w: 0,
        };
        match family {
            TextureFamily::Flat { .. } => {}
            TextureFamily::Stripes { freq } => p.freq = rng.gen_range(freq.0..=freq.1),
            TextureFamily::Checker { cell } => p.size = rng.gen_range(cell.0..=cell.1),
            TextureFamily::Blobs { scale } => {
                p.size = rng.gen_range(scale.0..=scale.1);
                let gh = (spec.height as f64 / p.size).ceil() as usize + 2;
                p.grid_w = (spec.width as f64 / p.size).ceil() as usize + 2;
                p.grid = (0..gh * p.grid_w).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            }
        }
        p
    }

    fn value(&self, y: f64, x: f64) -> f64 {
        match self.family {
            TextureFamily::Flat { .. } => 0.0,
            TextureFamily::Stripes { .. } => {
                let u = x * self.angle.cos() + y * self.angle.sin();
                (2.0 * PI * self.freq * u + self.phase).sin()
            }
            TextureFamily::Checker { .. } => {
                let cy = (y / self.size).floor() as i64;
                let cx = (x / self.size).floor() as i64;
                if (cy + cx).rem_euclid(2) == 0 {
                    1.0
                } else {
                    -1.0
                }
            }
            TextureFamily::Blobs { .. } => {
                let gy = y / self.size;
                let gx = x / self.size;
                let (iy, ix) = (gy.floor() as usize, gx.floor() as usize);
                let (ty, tx) = (smoothstep(gy - iy as f64), smoothstep(gx - ix as f64));
                let g = |r: usize, c: usize| self.grid[r * self.grid_w + c];
                let top = g(iy, ix) * (1.0 - tx) + g(iy, ix + 1) * tx;
                let bottom = g(iy + 1, ix) * (1.0 - tx) + g(iy + 1, ix + 1) * tx;
                // value noise is concentrated near 0; stretch it
                (1.6 * (top * (1.0 - ty) + bottom * ty)).clamp(-1.0, 1.0)
            }
        }
    }

    fn pixel_noise(&self) -> f64 {
        match self.family {
            TextureFamily::Flat { sigma } => sigma,
            _ => 0.0,
        }
    }
}

/// Renders sample `index` of the stream identified by `seed`.
pub fn synth_sample(spec: &SynthTextureSpec, seed: u64, index: u64) -> Result<SynthSample> {
    spec.validate()?;
    let mut rng = sample_rng(seed, index);
    let (h, w) = (spec.height, spec.width);

    // Resample layouts whose erosion would wipe out a category entirely.
    let mut attempt = 0;
    let (layout, interior) = loop {
        let layout = voronoi(spec, &mut rng);
        let interior = eroded_interior(&layout.region, h, w, spec.erosion);
        let mut present = vec![false; spec.categories];
        let mut kept = vec![false; spec.categories];
        for (i, &r) in layout.region.iter().enumerate() {
            let c = layout.category[r];
            present[c] = true;
            kept[c] |= interior[i];
        }
        if present == kept {
            break (layout, interior);
        }
        attempt += 1;
        if attempt >= 200 {
            return Err(Error::Generation(format!(
                "no layout keeps every category labeled at erosion {}",
                spec.erosion
            )));
        }
    };

    let base = [
        rng.gen_range(0.55..0.75),
        rng.gen_range(0.35..0.50),
        rng.gen_range(0.20..0.35),
    ];
    let regions = layout.category.len();
    let patterns: Vec<Pattern> = layout
        .category
        .iter()
        .map(|&c| Pattern::sample(spec.families[c], spec, &mut rng))
        .collect();
    let brightness: Vec<f64> = (0..regions).map(|_| rng.gen_range(0.85..1.15)).collect();
    let amplitude: Vec<f64> = (0..regions)
        .map(|_| rng.gen_range(spec.amplitude.0..=spec.amplitude.1))
        .collect();

    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut bytes = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            let r = layout.region[y * w + x];
            let pat = &patterns[r];
            let tex = pat.value(y as f64, x as f64);
            let grain = pat.pixel_noise() * unit.sample(&mut rng);
            let level = brightness[r] + amplitude[r] * tex + grain;
            for b in base {
                let v = b * level + spec.noise * unit.sample(&mut rng);
                bytes.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    let image = ImageTensor::from_u8(h, w, 3, &bytes)?;

    let dense: Vec<i32> = layout.region.iter().map(|&r| layout.category[r] as i32).collect();
    let mut sparse: Vec<i32> = dense
        .iter()
        .zip(&interior)
        .map(|(&c, &keep)| if keep { c } else { UNLABELED })
        .collect();
    if spec.dropout > 0.0 {
        let before = sparse.clone();
        for l in sparse.iter_mut() {
            if *l != UNLABELED && rng.gen_bool(spec.dropout) {
                *l = UNLABELED;
            }
        }
        // Restore one pixel of any category the dropout erased.
        for c in 0..spec.categories as i32 {
            if before.contains(&c) && !sparse.contains(&c) {
                let i = before.iter().position(|&l| l == c).unwrap();
                sparse[i] = c;
            }
        }
    }

    Ok(SynthSample {
        image,
        labels: SparseLabelMap::new(h, w, spec.categories, sparse)?,
        oracle: SparseLabelMap::new(h, w, spec.categories, dense)?,
    })
}

pub fn synth_generate(spec: &SynthTextureSpec, n: usize, seed: u64) -> Result<Vec<SynthSample>> {
    (0..n as u64).map(|i| synth_sample(spec, seed, i)).collect()
}

/// Writes `images/`, `labels/`, `oracle/` and `manifest.csv` under `dir`.
/// Manifest paths are relative to `dir`.
pub fn write_synth(dir: &Path, spec: &SynthTextureSpec, samples: &[SynthSample], counts: SplitCounts, seed: u64) -> Result<DatasetManifest> {
    let mut pairs = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let image = PathBuf::from(format!("images/{i:05}.png"));
        let label = PathBuf::from(format!("labels/{i:05}.png"));
        io::write_image(&dir.join(&image), &s.image)?;
        io::write_labels(&dir.join(&label), &s.labels)?;
        io::write_labels(&dir.join(format!("oracle/{i:05}.png")), &s.oracle)?;
        pairs.push((image, label));
    }
    let manifest = split(pairs, counts, seed, spec.category_table())?;
    manifest.save(&dir.join("manifest.csv"))?;
    Ok(manifest)
}

/// Path of the dense oracle label file matching a manifest label path.
pub fn oracle_path(label: &Path) -> PathBuf {
    let file = label.file_name().map(PathBuf::from).unwrap_or_default();
    label
        .parent()
        .and_then(Path::parent)
        .map(|p| p.join("oracle").join(&file))
        .unwrap_or_else(|| PathBuf::from("oracle").join(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(n: usize) -> Vec<(PathBuf, PathBuf)> {
        (0..n)
            .map(|i| (PathBuf::from(format!("i{i}.png")), PathBuf::from(format!("l{i}.png"))))
            .collect()
    }

    #[test]
    fn split_is_disjoint_cover() {
        let counts = SplitCounts { train: 8, val: 1, test: 1 };
        let m = split(pairs(10), counts, 3, CategoryTable::default()).unwrap();
        let mut seen: Vec<_> = m.entries.iter().map(|e| e.image.clone()).collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 10);
        assert_eq!((m.count(Split::Train), m.count(Split::Val), m.count(Split::Test)), (8, 1, 1));
        assert_eq!(m, split(pairs(10), counts, 3, CategoryTable::default()).unwrap());
        assert_ne!(m, split(pairs(10), counts, 4, CategoryTable::default()).unwrap());
        assert!(split(pairs(5), counts, 0, CategoryTable::default()).is_err());
    }

    #[test]
    fn standard_split_sizes() {
        assert_eq!(
            SplitCounts::standard_proportions(6000),
            SplitCounts { train: 5000, val: 200, test: 800 }
        );
    }

    #[test]
    fn manifest_text_round_trip() {
        let counts = SplitCounts { train: 3, val: 1, test: 1 };
        let m = split(pairs(5), counts, 9, CategoryTable::numbered(4).unwrap()).unwrap();
        assert_eq!(DatasetManifest::parse(&m.to_text()).unwrap(), m);
        let dup = "a.png,b.png,train\na.png,c.png,test\n";
        assert!(DatasetManifest::parse(dup).is_err());
    }

    #[test]
    fn stats_examples() {
        let a = SparseLabelMap::new(1, 4, 3, vec![0, 2, 2, -1]).unwrap();
        let b = SparseLabelMap::unlabeled(1, 4, 3).unwrap();
        let s = DatasetStats::from_labels(3, [&a]);
        assert_eq!(s.label_counts, vec![0, 0, 1, 0]);
        let s = DatasetStats::from_labels(3, [&a, &b]);
        assert_eq!(s.label_counts, vec![1, 0, 1, 0]);
        let share = s.area_share();
        assert!((share.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((share[2] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn dense_special_case() {
        let spec = SynthTextureSpec {
            erosion: 0,
            dropout: 0.0,
            ..SynthTextureSpec::default()
        };
        for s in synth_generate(&spec, 5, 1).unwrap() {
            assert_eq!(s.labels, s.oracle);
        }
    }

    #[test]
    fn erosion_clears_boundaries() {
        let spec = SynthTextureSpec::default();
        let (h, w) = (spec.height, spec.width);
        for s in synth_generate(&spec, 5, 2).unwrap() {
            let o = s.oracle.labels();
            let l = s.labels.labels();
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    if l[i] != UNLABELED {
                        assert_eq!(l[i], o[i]);
                    }
                    // horizontal or vertical neighbour in another category
                    let other = (x + 1 < w && o[i + 1] != o[i]) || (y + 1 < h && o[i + w] != o[i]);
                    if other {
                        assert_eq!(l[i], UNLABELED);
                    }
                }
            }
        }
    }

    #[test]
    fn every_present_category_keeps_a_label() {
        let spec = SynthTextureSpec {
            erosion: 5,
            dropout: 0.9,
            ..SynthTextureSpec::default()
        };
        for s in synth_generate(&spec, 20, 3).unwrap() {
            for c in 0..spec.categories as i32 {
                if s.oracle.labels().contains(&c) {
                    assert!(s.labels.labels().contains(&c), "category {c} lost");
                }
            }
        }
    }

    #[test]
    fn unlabeled_fraction_grows_with_erosion() {
        let mut last = -1.0;
        for k in [0, 1, 3, 5] {
            let spec = SynthTextureSpec {
                erosion: k,
                ..SynthTextureSpec::default()
            };
            let samples = synth_generate(&spec, 20, 4).unwrap();
            let f = DatasetStats::from_labels(4, samples.iter().map(|s| &s.labels)).unlabeled_fraction();
            assert!(f > last, "k={k}: {f} <= {last}");
            last = f;
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SynthTextureSpec::default();
        assert_eq!(synth_sample(&spec, 7, 3).unwrap(), synth_sample(&spec, 7, 3).unwrap());
        assert_ne!(synth_sample(&spec, 7, 3).unwrap(), synth_sample(&spec, 7, 4).unwrap());
        assert!(SynthTextureSpec::new(64, 64, 0).is_err());
    }

    #[test]
    fn oracle_path_mapping() {
        assert_eq!(oracle_path(Path::new("labels/00003.png")), PathBuf::from("oracle/00003.png"));
    }
}
