//! Image/mask loading, JSON-lines manifests, seeded splits, and a synthetic
//! lesion generator.
//!
//! Directory convention: `images/` and `masks/` side by side with matching
//! file stems. Images are bilinear-resized and scaled to [0, 1]; masks are
//! nearest-resized and binarized at 128.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::{GrayImage, Luma, Rgb, RgbImage};
use lssf_tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LssfError, Result};

pub const MASK_THRESHOLD: u8 = 128;
pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub mask: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
    All,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub name: String,
    pub entries: Vec<ManifestEntry>,
    pub split: Split,
    pub image_size: usize,
}

fn open_image(path: &Path) -> Result<image::DynamicImage> {
    let img = image::open(path).map_err(|source| LssfError::Image {
        path: path.to_path_buf(),
        source,
    })?;
    if img.width() == 0 || img.height() == 0 {
        return Err(LssfError::Data(format!("{}: zero-sized image", path.display())));
    }
    Ok(img)
}

pub fn image_to_tensor(img: &RgbImage, size: usize) -> Tensor<f32> {
    let s = size as u32;
    let resized;
    let img = if img.dimensions() == (s, s) {
        img
    } else {
        resized = imageops::resize(img, s, s, FilterType::Triangle);
        &resized
    };
    let data = img.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
    Tensor::new([size, size, 3], data).expect("rgb buffer matches shape")
}

pub fn mask_to_tensor(mask: &GrayImage, size: usize) -> Tensor<f32> {
    let s = size as u32;
    let resized;
    let mask = if mask.dimensions() == (s, s) {
        mask
    } else {
        resized = imageops::resize(mask, s, s, FilterType::Nearest);
        &resized
    };
    let data = mask
        .as_raw()
        .iter()
        .map(|&v| if v >= MASK_THRESHOLD { 1.0 } else { 0.0 })
        .collect();
    Tensor::new([size, size, 1], data).expect("gray buffer matches shape")
}

/// Image `[S, S, 3]` in [0, 1] and mask `[S, S, 1]` in {0, 1}.
pub fn load_sample(image_path: &Path, mask_path: &Path, size: usize) -> Result<(Tensor<f32>, Tensor<f32>)> {
    if size == 0 {
        return Err(LssfError::Config("target size must be positive".into()));
    }
    let img = open_image(image_path)?.to_rgb8();
    let mask = open_image(mask_path)?.to_luma8();
    Ok((image_to_tensor(&img, size), mask_to_tensor(&mask, size)))
}

/// Write a {0, 1} (or already {0, 255}) mask as an 8-bit {0, 255} PNG.
pub fn save_mask(path: &Path, mask: &[u8], width: usize, height: usize) -> Result<()> {
    if mask.len() != width * height {
        return Err(LssfError::Data(format!(
            "mask of {} values is not {width}x{height}",
            mask.len()
        )));
    }
    let buf = mask.iter().map(|&v| if v > 0 { 255 } else { 0 }).collect();
    let img = GrayImage::from_raw(width as u32, height as u32, buf).expect("length checked");
    img.save(path).map_err(|source| LssfError::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let file = std::fs::File::open(path).map_err(|e| LssfError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| LssfError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut e: ManifestEntry = serde_json::from_str(&line)
            .map_err(|err| LssfError::Data(format!("{}:{}: {err}", path.display(), i + 1)))?;
        e.image = base.join(&e.image);
        e.mask = base.join(&e.mask);
        out.push(e);
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| LssfError::io(path, e))?;
    for e in entries {
        let line = serde_json::to_string(e)?;
        writeln!(f, "{line}").map_err(|e| LssfError::io(path, e))?;
    }
    Ok(())
}

/// Pair `dir/images/*` with `dir/masks/*` by file stem, sorted by stem.
pub fn scan_dir(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let list = |sub: &str| -> Result<HashMap<String, PathBuf>> {
        let d = dir.join(sub);
        let rd = std::fs::read_dir(&d).map_err(|e| LssfError::io(&d, e))?;
        let mut m = HashMap::new();
        for entry in rd {
            let p = entry.map_err(|e| LssfError::io(&d, e))?.path();
            if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                m.insert(stem.to_string(), p.clone());
            }
        }
        Ok(m)
    };
    let images = list("images")?;
    let mut masks = list("masks")?;
    let mut stems: Vec<_> = images.keys().cloned().collect();
    stems.sort();
    let mut out = Vec::with_capacity(stems.len());
    for stem in stems {
        let mask = masks
            .remove(&stem)
            .ok_or_else(|| LssfError::Data(format!("image `{stem}` has no mask")))?;
        out.push(ManifestEntry {
            image: images[&stem].clone(),
            mask,
        });
    }
    if let Some(stem) = masks.keys().next() {
        return Err(LssfError::Data(format!("mask `{stem}` has no image")));
    }
    Ok(out)
}

/// Entries of a manifest file, or of a directory (its `manifest.jsonl` if
/// present, otherwise the images/masks convention).
pub fn resolve_entries(path: &Path) -> Result<Vec<ManifestEntry>> {
    if path.is_dir() {
        let m = path.join(MANIFEST_FILE);
        if m.is_file() {
            read_manifest(&m)
        } else {
            scan_dir(path)
        }
    } else {
        read_manifest(path)
    }
}

/// Seeded shuffle, then contiguous pieces with boundaries at the rounded
/// cumulative fractions.
pub fn split_manifest<T: Clone>(entries: &[T], fractions: &[f64], seed: u64) -> Result<Vec<Vec<T>>> {
    if entries.is_empty() {
        return Err(LssfError::Data("cannot split an empty entry list".into()));
    }
    let total: f64 = fractions.iter().sum();
    if fractions.is_empty() || fractions.iter().any(|&f| !(f >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(LssfError::Config(format!(
            "split fractions {fractions:?} must be nonnegative and sum to 1"
        )));
    }
    let mut shuffled = entries.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = shuffled.len();
    let mut out = Vec::with_capacity(fractions.len());
    let (mut cum, mut start) = (0.0, 0);
    for (i, &f) in fractions.iter().enumerate() {
        cum += f;
        let end = if i + 1 == fractions.len() {
            n
        } else {
            ((cum * n as f64).round() as usize).clamp(start, n)
        };
        out.push(shuffled[start..end].to_vec());
        start = end;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `[S, S, 3]` in [0, 1].
    pub image: Tensor<f32>,
    /// `[S, S, 1]` in {0, 1}.
    pub mask: Tensor<f32>,
}

/// In-memory samples of one square size.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub size: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(size: usize, samples: Vec<Sample>) -> Result<Self> {
        for s in &samples {
            if s.image.shape() != [size, size, 3] || s.mask.shape() != [size, size, 1] {
                return Err(LssfError::Data(format!(
                    "sample `{}`: image {:?} / mask {:?} do not match size {size}",
                    s.id,
                    s.image.shape(),
                    s.mask.shape()
                )));
            }
        }
        Ok(Self { size, samples })
    }

    /// Load every entry (in parallel) at `size x size`.
    pub fn load(entries: &[ManifestEntry], size: usize) -> Result<Self> {
        let samples = entries
            .par_iter()
            .map(|e| {
                let (image, mask) = load_sample(&e.image, &e.mask, size)?;
                let id = e
                    .image
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                Ok(Sample { id, image, mask })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(size, samples)
    }

    /// `n` generated lesions without touching the disk.
    pub fn synthetic(n: usize, size: usize, seed: u64) -> Result<Self> {
        check_synth_args(n, size)?;
        let samples = (0..n)
            .map(|i| {
                let (img, mask) = synth_pair(size, sample_seed(seed, i));
                Sample {
                    id: format!("{i:04}"),
                    image: image_to_tensor(&img, size),
                    mask: mask_to_tensor(&mask, size),
                }
            })
            .collect();
        Self::new(size, samples)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Stacked `[B, S, S, 3]` images and `[B, S, S, 1]` masks.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let s = self.size;
        let mut x = Vec::with_capacity(indices.len() * s * s * 3);
        let mut y = Vec::with_capacity(indices.len() * s * s);
        for &i in indices {
            let sample = self
                .samples
                .get(i)
                .ok_or_else(|| LssfError::Data(format!("sample index {i} out of range")))?;
            x.extend_from_slice(sample.image.data());
            y.extend_from_slice(sample.mask.data());
        }
        let b = indices.len();
        Ok((Tensor::new([b, s, s, 3], x)?, Tensor::new([b, s, s, 1], y)?))
    }
}

fn check_synth_args(n: usize, size: usize) -> Result<()> {
    if n < 1 {
        return Err(LssfError::Config("synthetic dataset needs n >= 1".into()));
    }
    if size < 16 || !size.is_power_of_two() {
        return Err(LssfError::Config(format!("synthetic size {size} must be a power of two >= 16")));
    }
    Ok(())
}

fn sample_seed(seed: u64, i: usize) -> u64 {
    seed ^ (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    fn random(size: f64, rng: &mut ChaCha8Rng) -> Self {
        let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        Self {
            cx: rng.gen_range(0.3 * size..0.7 * size),
            cy: rng.gen_range(0.3 * size..0.7 * size),
            a: rng.gen_range(0.12 * size..0.3 * size),
            b: rng.gen_range(0.12 * size..0.3 * size),
            cos: angle.cos(),
            sin: angle.sin(),
        }
    }

    /// Normalized radius of a point: < 1 inside, 1 on the border.
    fn radius(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (dx * self.cos + dy * self.sin) / self.a;
        let v = (-dx * self.sin + dy * self.cos) / self.b;
        (u * u + v * v).sqrt()
    }
}

/// One synthetic dermoscopy-like image and its exact lesion mask. Rejection
/// sampling keeps the lesion between 2% and 60% of the image.
pub fn synth_pair(size: usize, seed: u64) -> (RgbImage, GrayImage) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    let (ellipses, mask) = loop {
        let count = rng.gen_range(1..=2);
        let ellipses: Vec<Ellipse> = (0..count).map(|_| Ellipse::random(s, &mut rng)).collect();
        let mask = GrayImage::from_fn(size as u32, size as u32, |x, y| {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let inside = ellipses.iter().any(|e| e.radius(px, py) <= 1.0);
            Luma([if inside { 255 } else { 0 }])
        });
        let frac = mask.pixels().filter(|p| p.0[0] > 0).count() as f64 / (s * s);
        if (0.02..=0.6).contains(&frac) {
            break (ellipses, mask);
        }
    };

    let skin = [
        rng.gen_range(0.75..0.92),
        rng.gen_range(0.55..0.72),
        rng.gen_range(0.45..0.6),
    ];
    let lesion = [
        rng.gen_range(0.25..0.45),
        rng.gen_range(0.12..0.28),
        rng.gen_range(0.08..0.2),
    ];
    let shade_dir: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let noise = Normal::new(0.0, 0.03).expect("finite std");
    let softness = 0.08;
    let mut img = RgbImage::from_fn(size as u32, size as u32, |x, y| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let r = ellipses
            .iter()
            .map(|e| e.radius(px, py))
            .fold(f64::INFINITY, f64::min);
        // soft border: 0.5 exactly on the ellipse outline
        let alpha = 1.0 / (1.0 + ((r - 1.0) / softness).exp());
        let shade = 0.06 * ((px * shade_dir.cos() + py * shade_dir.sin()) / s - 0.5);
        let mut rgb = [0u8; 3];
        for c in 0..3 {
            let v = (1.0 - alpha) * skin[c] + alpha * lesion[c] + shade + noise.sample(&mut rng);
            rgb[c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
        Rgb(rgb)
    });

    let hairs = rng.gen_range(0..=3);
    for _ in 0..hairs {
        let (mut x, mut y) = (rng.gen_range(0.0..s), rng.gen_range(0.0..s));
        let mut angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let len = rng.gen_range(0.3 * s..0.8 * s) as usize;
        let tone = rng.gen_range(10..50u8);
        for _ in 0..len {
            angle += rng.gen_range(-0.08..0.08);
            x += angle.cos();
            y += angle.sin();
            if (0.0..s).contains(&x) && (0.0..s).contains(&y) {
                img.put_pixel(x as u32, y as u32, Rgb([tone, tone, tone]));
            }
        }
    }
    (img, mask)
}

/// Write `n` generated samples under `out_dir` (`images/`, `masks/`,
/// `manifest.jsonl` with relative paths).
pub fn synth_lesions(n: usize, size: usize, seed: u64, out_dir: &Path) -> Result<DatasetManifest> {
    check_synth_args(n, size)?;
    for sub in ["images", "masks"] {
        let d = out_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| LssfError::io(&d, e))?;
    }
    let entries = (0..n)
        .into_par_iter()
        .map(|i| {
            let (img, mask) = synth_pair(size, sample_seed(seed, i));
            let rel = ManifestEntry {
                image: PathBuf::from(format!("images/{i:04}.png")),
                mask: PathBuf::from(format!("masks/{i:04}.png")),
            };
            let save_err = |path: PathBuf| move |source| LssfError::Image { path, source };
            let ip = out_dir.join(&rel.image);
            img.save(&ip).map_err(save_err(ip.clone()))?;
            let mp = out_dir.join(&rel.mask);
            mask.save(&mp).map_err(save_err(mp.clone()))?;
            Ok(rel)
        })
        .collect::<Result<Vec<_>>>()?;
    write_manifest(&out_dir.join(MANIFEST_FILE), &entries)?;
    Ok(DatasetManifest {
        name: "synthetic-lesions".into(),
        entries: entries
            .into_iter()
            .map(|e| ManifestEntry {
                image: out_dir.join(e.image),
                mask: out_dir.join(e.mask),
            })
            .collect(),
        split: Split::All,
        image_size: size,
    })
}
