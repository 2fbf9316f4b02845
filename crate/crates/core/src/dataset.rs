//! Identity-labelled image datasets: loading, synthesis, fingerprinting, splits.
//!
//! A dataset on disk is a flat directory of `<identity>_<instance>.png`
//! files. Identity labels never contain an underscore; the instance label is
//! everything after the first underscore.
//!
//! The fingerprint is SHA-256 over this byte sequence (all integers
//! little-endian), with points sorted by identity then instance:
//!
//! ```text
//! "ANONBENCH-DATASET-V1"
//! u64  point count
//! per point:
//!   u32 len(identity) | identity bytes | u32 len(instance) | instance bytes
//!   u32 width | u32 height | u32 channels
//!   u16 round(v * 65535) for every intensity, row-major, channel-interleaved
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::raster::{fmt_dims, to_u16, to_u8, Dims, ImageRaster};
use crate::seed;

/// `(identity, instance)`.
pub type PointKey = (String, String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub identity: String,
    pub instance: String,
    pub image: ImageRaster,
}

impl DataPoint {
    pub fn new(identity: impl Into<String>, instance: impl Into<String>, image: ImageRaster) -> Self {
        Self {
            identity: identity.into(),
            instance: instance.into(),
            image,
        }
    }

    pub fn key(&self) -> PointKey {
        (self.identity.clone(), self.instance.clone())
    }

    /// Same labels, different pixels.
    pub fn with_image(&self, image: ImageRaster) -> Self {
        Self {
            identity: self.identity.clone(),
            instance: self.instance.clone(),
            image,
        }
    }
}

/// An immutable, canonically ordered set of datapoints sharing one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: Vec<DataPoint>,
    fingerprint: String,
}

fn validate_identity(label: &str) -> Result<()> {
    if label.is_empty() {
        return Err(Error::InvalidLabel(label.into(), "identity label is empty"));
    }
    if label.contains('_') {
        return Err(Error::InvalidLabel(label.into(), "identity labels may not contain '_'"));
    }
    validate_path_safe(label)
}

fn validate_instance(label: &str) -> Result<()> {
    if label.is_empty() {
        return Err(Error::InvalidLabel(label.into(), "instance label is empty"));
    }
    validate_path_safe(label)
}

fn validate_path_safe(label: &str) -> Result<()> {
    if label.contains(['/', '\\', '\0']) || label.starts_with('.') {
        return Err(Error::InvalidLabel(
            label.into(),
            "label is not a safe file name component",
        ));
    }
    Ok(())
}

impl Dataset {
    /// Sorts, validates and fingerprints a collection of points.
    pub fn new(mut points: Vec<DataPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let dims = points[0].image.dims();
        for p in &points {
            validate_identity(&p.identity)?;
            validate_instance(&p.instance)?;
            if p.image.dims() != dims {
                return Err(Error::DimensionMismatch {
                    expected: fmt_dims(dims),
                    found: format!("{} ({}_{})", fmt_dims(p.image.dims()), p.identity, p.instance),
                });
            }
        }
        points.sort_by(|a, b| (&a.identity, &a.instance).cmp(&(&b.identity, &b.instance)));
        for w in points.windows(2) {
            if w[0].identity == w[1].identity && w[0].instance == w[1].instance {
                return Err(Error::DuplicatePoint {
                    identity: w[0].identity.clone(),
                    instance: w[0].instance.clone(),
                });
            }
        }
        let fingerprint = fingerprint_points(&points);
        Ok(Self { points, fingerprint })
    }

    pub fn points(&self) -> &[DataPoint] {
        &self.points
    }

    pub fn into_points(self) -> Vec<DataPoint> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn dims(&self) -> Dims {
        self.points[0].image.dims()
    }

    /// Sorted distinct identity labels.
    pub fn identities(&self) -> Vec<String> {
        let mut ids: Vec<String> = Vec::new();
        for p in &self.points {
            if ids.last() != Some(&p.identity) {
                ids.push(p.identity.clone());
            }
        }
        ids
    }

    pub fn n_identities(&self) -> usize {
        self.identities().len()
    }

    /// Points grouped by identity, in canonical order.
    pub fn by_identity(&self) -> BTreeMap<&str, Vec<&DataPoint>> {
        let mut map: BTreeMap<&str, Vec<&DataPoint>> = BTreeMap::new();
        for p in &self.points {
            map.entry(p.identity.as_str()).or_default().push(p);
        }
        map
    }

    pub fn keys(&self) -> Vec<PointKey> {
        self.points.iter().map(DataPoint::key).collect()
    }

    pub fn get(&self, identity: &str, instance: &str) -> Option<&DataPoint> {
        self.points
            .binary_search_by(|p| (p.identity.as_str(), p.instance.as_str()).cmp(&(identity, instance)))
            .ok()
            .map(|i| &self.points[i])
    }

    /// All points whose identity is in `ids`.
    pub fn restrict_identities(&self, ids: &BTreeSet<String>) -> Result<Self> {
        Dataset::new(
            self.points
                .iter()
                .filter(|p| ids.contains(&p.identity))
                .cloned()
                .collect(),
        )
    }

    /// All points whose key is in `keys`.
    pub fn restrict_keys(&self, keys: &BTreeSet<PointKey>) -> Result<Self> {
        Dataset::new(
            self.points
                .iter()
                .filter(|p| keys.contains(&p.key()))
                .cloned()
                .collect(),
        )
    }

    /// Replaces every image, keeping labels and order.
    pub fn map_images(&self, f: impl Fn(&DataPoint) -> Result<ImageRaster> + Sync) -> Result<Self> {
        let points = self
            .points
            .par_iter()
            .map(|p| f(p).map(|img| p.with_image(img)))
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(points)
    }

    /// Snaps all intensities to 16-bit levels, the precision of cached artifacts.
    pub fn quantized16(&self) -> Self {
        let points = self
            .points
            .iter()
            .map(|p| p.with_image(p.image.quantized16()))
            .collect();
        Dataset::new(points).expect("quantization preserves dataset validity")
    }

    /// Errors unless `other` has exactly the same keys and image shape.
    pub fn check_paired(&self, other: &Dataset) -> Result<()> {
        if self.len() != other.len()
            || self
                .points
                .iter()
                .zip(&other.points)
                .any(|(a, b)| a.identity != b.identity || a.instance != b.instance)
        {
            return Err(Error::KeyMismatch(format!(
                "{} points vs {} points with differing keys",
                self.len(),
                other.len()
            )));
        }
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: fmt_dims(self.dims()),
                found: fmt_dims(other.dims()),
            });
        }
        Ok(())
    }
}

fn fingerprint_points(points: &[DataPoint]) -> String {
    let mut h = Sha256::new();
    h.update(b"ANONBENCH-DATASET-V1");
    h.update((points.len() as u64).to_le_bytes());
    let mut buf = Vec::new();
    for p in points {
        h.update((p.identity.len() as u32).to_le_bytes());
        h.update(p.identity.as_bytes());
        h.update((p.instance.len() as u32).to_le_bytes());
        h.update(p.instance.as_bytes());
        let (w, ht, c) = p.image.dims();
        h.update((w as u32).to_le_bytes());
        h.update((ht as u32).to_le_bytes());
        h.update((c as u32).to_le_bytes());
        buf.clear();
        buf.extend(p.image.pixels().iter().flat_map(|&v| to_u16(v).to_le_bytes()));
        h.update(&buf);
    }
    hex::encode(h.finalize())
}

/// SHA-256 content fingerprint (64 hex chars) of a dataset.
pub fn dataset_fingerprint(ds: &Dataset) -> String {
    ds.fingerprint.clone()
}

fn parse_filename(name: &str) -> Result<(String, String)> {
    let stem = name
        .strip_suffix(".png")
        .ok_or_else(|| Error::InvalidFilename(name.into()))?;
    let (identity, instance) = stem
        .split_once('_')
        .ok_or_else(|| Error::InvalidFilename(name.into()))?;
    if identity.is_empty() || instance.is_empty() {
        return Err(Error::InvalidFilename(name.into()));
    }
    Ok((identity.into(), instance.into()))
}

fn decode_png(path: &Path) -> Result<ImageRaster> {
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Image {
            path: path.into(),
            message: e.to_string(),
        })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, pixels): (usize, Vec<f64>) = match img {
        DynamicImage::ImageLuma8(b) => (1, b.into_raw().into_iter().map(|v| f64::from(v) / 255.0).collect()),
        DynamicImage::ImageLumaA8(_) => {
            let b = img.to_luma8();
            (1, b.into_raw().into_iter().map(|v| f64::from(v) / 255.0).collect())
        }
        DynamicImage::ImageRgb8(b) => (3, b.into_raw().into_iter().map(|v| f64::from(v) / 255.0).collect()),
        DynamicImage::ImageRgba8(_) => {
            let b = img.to_rgb8();
            (3, b.into_raw().into_iter().map(|v| f64::from(v) / 255.0).collect())
        }
        DynamicImage::ImageLuma16(b) => (1, b.into_raw().into_iter().map(|v| f64::from(v) / 65535.0).collect()),
        DynamicImage::ImageRgb16(b) => (3, b.into_raw().into_iter().map(|v| f64::from(v) / 65535.0).collect()),
        other => {
            return Err(Error::Image {
                path: path.into(),
                message: format!("unsupported pixel format {:?}", other.color()),
            })
        }
    };
    ImageRaster::new(w, h, channels, pixels)
}

/// Loads every `<identity>_<instance>.png` in `root`. Other files are ignored.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Dataset> {
    let root = root.as_ref();
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".png") && entry.path().is_file() {
            files.push((name, entry.path()));
        }
    }
    if files.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let points = files
        .par_iter()
        .map(|(name, path)| {
            let (identity, instance) = parse_filename(name)?;
            Ok(DataPoint::new(identity, instance, decode_png(path)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

/// Writes every point as `<identity>_<instance>.png` into `dir` (created if needed).
pub fn save_dataset(ds: &Dataset, dir: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    ds.points.par_iter().try_for_each(|p| {
        let path = dir.join(format!("{}_{}.png", p.identity, p.instance));
        let (w, h, c) = p.image.dims();
        let (w32, h32) = (w as u32, h as u32);
        let px = p.image.pixels();
        let res = match (depth, c) {
            (BitDepth::Eight, 1) => {
                ImageBuffer::<Luma<u8>, _>::from_raw(w32, h32, px.iter().map(|&v| to_u8(v)).collect::<Vec<_>>())
                    .unwrap()
                    .save_with_format(&path, image::ImageFormat::Png)
            }
            (BitDepth::Eight, _) => {
                ImageBuffer::<Rgb<u8>, _>::from_raw(w32, h32, px.iter().map(|&v| to_u8(v)).collect::<Vec<_>>())
                    .unwrap()
                    .save_with_format(&path, image::ImageFormat::Png)
            }
            (BitDepth::Sixteen, 1) => {
                ImageBuffer::<Luma<u16>, _>::from_raw(w32, h32, px.iter().map(|&v| to_u16(v)).collect::<Vec<_>>())
                    .unwrap()
                    .save_with_format(&path, image::ImageFormat::Png)
            }
            (BitDepth::Sixteen, _) => {
                ImageBuffer::<Rgb<u16>, _>::from_raw(w32, h32, px.iter().map(|&v| to_u16(v)).collect::<Vec<_>>())
                    .unwrap()
                    .save_with_format(&path, image::ImageFormat::Png)
            }
        };
        res.map_err(|e| Error::Image {
            path: path.clone(),
            message: e.to_string(),
        })
    })
}

/// Parameters of the procedurally generated face stand-in dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_identities: usize,
    pub samples_per_identity: usize,
    pub width: usize,
    pub height: usize,
    pub intra_noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_identities: 10,
            samples_per_identity: 6,
            width: 64,
            height: 64,
            intra_noise_sigma: 0.05,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_identities < 2 {
            return Err(Error::spec("synthetic n_identities must be >= 2"));
        }
        if self.samples_per_identity < 2 {
            return Err(Error::spec("synthetic samples_per_identity must be >= 2"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::spec("synthetic width/height must be >= 1"));
        }
        if !self.intra_noise_sigma.is_finite() || self.intra_noise_sigma < 0.0 {
            return Err(Error::spec("synthetic intra_noise_sigma must be a finite real >= 0"));
        }
        Ok(())
    }

    pub fn identity_label(&self, i: usize) -> String {
        let digits = (self.n_identities.max(2) - 1).to_string().len().max(2);
        format!("id{i:0digits$}")
    }

    pub fn instance_label(&self, s: usize) -> String {
        let digits = (self.samples_per_identity.max(2) - 1).to_string().len().max(2);
        format!("s{s:0digits$}")
    }
}

/// Base pattern: four Gaussian blobs plus two sinusoidal gratings, rescaled
/// into `[0.1, 0.9]`.
fn base_pattern(spec: &SyntheticSpec, label: &str) -> Vec<f64> {
    let mut rng = seed::rng(spec.seed, &["synthetic", "identity", label]);
    let (w, h) = (spec.width as f64, spec.height as f64);
    let scale = w.min(h);
    let blobs: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            let cx = rng.random_range(0.15..0.85) * w;
            let cy = rng.random_range(0.15..0.85) * h;
            let sigma = rng.random_range(0.06..0.18) * scale;
            let amp = rng.random_range(-1.0..1.0);
            (cx, cy, sigma, amp)
        })
        .collect();
    let gratings: Vec<(f64, f64, f64, f64)> = (0..2)
        .map(|_| {
            let cycles = rng.random_range(1.0..4.0);
            let theta = rng.random_range(0.0..std::f64::consts::PI);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let amp = rng.random_range(0.1..0.3);
            (cycles, theta, phase, amp)
        })
        .collect();

    let mut out = Vec::with_capacity(spec.width * spec.height);
    for y in 0..spec.height {
        for x in 0..spec.width {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut v = 0.0;
            for &(cx, cy, s, a) in &blobs {
                let d2 = (fx - cx).powi(2) + (fy - cy).powi(2);
                v += a * (-d2 / (2.0 * s * s)).exp();
            }
            for &(cycles, theta, phase, a) in &gratings {
                let t = (fx * theta.cos() + fy * theta.sin()) / scale;
                v += a * (std::f64::consts::TAU * cycles * t + phase).sin();
            }
            out.push(v);
        }
    }
    let lo = out.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    for v in &mut out {
        *v = 0.1 + 0.8 * (*v - lo) / span;
    }
    out
}

/// Deterministic synthetic dataset. Samples are the identity's base pattern
/// plus i.i.d. Gaussian noise, clamped and snapped to 8-bit levels so the
/// dataset survives a PNG round trip unchanged.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let points: Vec<DataPoint> = (0..spec.n_identities)
        .into_par_iter()
        .flat_map_iter(|i| {
            let identity = spec.identity_label(i);
            let base = base_pattern(spec, &identity);
            (0..spec.samples_per_identity)
                .map(|s| {
                    let instance = spec.instance_label(s);
                    let mut rng = seed::rng(spec.seed, &["synthetic", "sample", &identity, &instance]);
                    let noise = Normal::new(0.0, spec.intra_noise_sigma).expect("validated sigma");
                    let pixels: Vec<f64> = base
                        .iter()
                        .map(|&b| {
                            let v = if spec.intra_noise_sigma > 0.0 {
                                b + noise.sample(&mut rng)
                            } else {
                                b
                            };
                            f64::from(to_u8(v)) / 255.0
                        })
                        .collect();
                    let image = ImageRaster::from_clamped(spec.width, spec.height, 1, pixels);
                    DataPoint::new(identity.clone(), instance, image)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    Dataset::new(points)
}

fn check_fraction(name: &str, f: f64) -> Result<()> {
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::spec(format!(
            "{name} must lie strictly between 0 and 1, got {f}"
        )));
    }
    Ok(())
}

/// Number on the first side of an `n`-way split, at least one on each side.
fn split_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64).round() as usize).clamp(1, n - 1)
}

/// Identity-disjoint `(attacker, evaluation)` partition.
pub fn split_disjoint_identities(ds: &Dataset, attacker_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (att, eval) = disjoint_identity_lists(ds, attacker_fraction, seed)?;
    Ok((
        ds.restrict_identities(&att.into_iter().collect())?,
        ds.restrict_identities(&eval.into_iter().collect())?,
    ))
}

/// Identity labels for each side of [`split_disjoint_identities`], sorted.
pub fn disjoint_identity_lists(ds: &Dataset, attacker_fraction: f64, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    check_fraction("attacker_fraction", attacker_fraction)?;
    let mut ids = ds.identities();
    if ids.len() < 2 {
        return Err(Error::spec(format!(
            "identity split needs >= 2 identities, dataset has {}",
            ids.len()
        )));
    }
    let n_att = split_count(attacker_fraction, ids.len());
    ids.shuffle(&mut seed::rng(seed, &["split_disjoint_identities"]));
    let mut att = ids[..n_att].to_vec();
    let mut eval = ids[n_att..].to_vec();
    att.sort();
    eval.sort();
    Ok((att, eval))
}

/// Per-identity `(enroll, test)` partition.
pub fn split_enroll_test(ds: &Dataset, enroll_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (enroll, test) = enroll_test_keys(ds, enroll_fraction, seed)?;
    Ok((ds.restrict_keys(&enroll)?, ds.restrict_keys(&test)?))
}

/// Key sets for each side of [`split_enroll_test`]. Depends only on the
/// dataset's keys, so paired datasets split identically.
pub fn enroll_test_keys(
    ds: &Dataset,
    enroll_fraction: f64,
    seed: u64,
) -> Result<(BTreeSet<PointKey>, BTreeSet<PointKey>)> {
    check_fraction("enroll_fraction", enroll_fraction)?;
    let mut enroll = BTreeSet::new();
    let mut test = BTreeSet::new();
    for (identity, pts) in ds.by_identity() {
        if pts.len() < 2 {
            return Err(Error::spec(format!(
                "identity {identity:?} has {} datapoint(s); enroll/test split needs >= 2",
                pts.len()
            )));
        }
        let mut instances: Vec<&str> = pts.iter().map(|p| p.instance.as_str()).collect();
        instances.shuffle(&mut seed::rng(seed, &["split_enroll_test", identity]));
        let n_enroll = split_count(enroll_fraction, instances.len());
        for (i, inst) in instances.into_iter().enumerate() {
            let key = (identity.to_string(), inst.to_string());
            if i < n_enroll {
                enroll.insert(key);
            } else {
                test.insert(key);
            }
        }
    }
    Ok((enroll, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(identity: &str, instance: &str, v: f64) -> DataPoint {
        DataPoint::new(identity, instance, ImageRaster::filled(2, 2, 1, v))
    }

    fn toy(n_ids: usize, per: usize) -> Dataset {
        let mut pts = Vec::new();
        for i in 0..n_ids {
            for s in 0..per {
                pts.push(tiny(&format!("p{i:02}"), &format!("{s}"), (i * per + s) as f64 / 100.0));
            }
        }
        Dataset::new(pts).unwrap()
    }

    #[test]
    fn rejects_underscore_identity_and_duplicates() {
        assert!(matches!(
            Dataset::new(vec![tiny("a_b", "1", 0.0)]),
            Err(Error::InvalidLabel(..))
        ));
        assert!(matches!(
            Dataset::new(vec![tiny("a", "1", 0.0), tiny("a", "1", 0.5)]),
            Err(Error::DuplicatePoint { .. })
        ));
        assert!(matches!(Dataset::new(vec![]), Err(Error::EmptyDataset)));
    }

    #[test]
    fn rejects_mixed_dimensions() {
        let odd = DataPoint::new("b", "1", ImageRaster::filled(3, 2, 1, 0.0));
        assert!(matches!(
            Dataset::new(vec![tiny("a", "1", 0.0), odd]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn fingerprint_ignores_order_but_not_pixels() {
        let a = Dataset::new(vec![tiny("a", "1", 0.2), tiny("b", "1", 0.4)]).unwrap();
        let b = Dataset::new(vec![tiny("b", "1", 0.4), tiny("a", "1", 0.2)]).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint().len(), 64);

        let mut px = vec![0.2; 4];
        px[3] += 1.0 / 65535.0;
        let flipped = Dataset::new(vec![
            DataPoint::new("a", "1", ImageRaster::new(2, 2, 1, px).unwrap()),
            tiny("b", "1", 0.4),
        ])
        .unwrap();
        assert_ne!(a.fingerprint(), flipped.fingerprint());
    }

    #[test]
    fn filename_parsing() {
        assert_eq!(parse_filename("a_1.png").unwrap(), ("a".into(), "1".into()));
        assert_eq!(parse_filename("a_1_x.png").unwrap(), ("a".into(), "1_x".into()));
        assert!(parse_filename("a1.png").is_err());
        assert!(parse_filename("_1.png").is_err());
        assert!(parse_filename("a_.png").is_err());
    }

    #[test]
    fn disjoint_split_counts_and_clamp() {
        let ds = toy(10, 2);
        let (a, e) = split_disjoint_identities(&ds, 0.5, 1).unwrap();
        assert_eq!((a.n_identities(), e.n_identities()), (5, 5));
        let ai: BTreeSet<_> = a.identities().into_iter().collect();
        assert!(e.identities().iter().all(|i| !ai.contains(i)));
        assert_eq!(a.len() + e.len(), ds.len());

        let two = toy(2, 2);
        let (a, e) = split_disjoint_identities(&two, 0.9, 1).unwrap();
        assert_eq!((a.n_identities(), e.n_identities()), (1, 1));
        assert!(split_disjoint_identities(&toy(1, 2), 0.5, 1).is_err());
        assert!(split_disjoint_identities(&ds, 1.0, 1).is_err());
    }

    #[test]
    fn disjoint_split_is_seeded() {
        let ds = toy(10, 2);
        let x = disjoint_identity_lists(&ds, 0.5, 1).unwrap();
        assert_eq!(x, disjoint_identity_lists(&ds, 0.5, 1).unwrap());
        let differs = (2..10).any(|s| disjoint_identity_lists(&ds, 0.5, s).unwrap() != x);
        assert!(differs);
    }

    #[test]
    fn enroll_test_split_partitions_each_identity() {
        let ds = toy(10, 6);
        let (en, te) = split_enroll_test(&ds, 0.5, 3).unwrap();
        for (_, pts) in en.by_identity() {
            assert_eq!(pts.len(), 3);
        }
        for (_, pts) in te.by_identity() {
            assert_eq!(pts.len(), 3);
        }
        let mut all: Vec<PointKey> = en.keys();
        all.extend(te.keys());
        all.sort();
        assert_eq!(all, ds.keys());

        let single = Dataset::new(vec![tiny("a", "1", 0.0), tiny("b", "1", 0.1), tiny("b", "2", 0.2)]).unwrap();
        assert!(split_enroll_test(&single, 0.5, 3).is_err());
    }

    #[test]
    fn synthetic_is_deterministic_and_noise_free_when_sigma_zero() {
        let spec = SyntheticSpec::default();
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.len(), 60);

        let clean = generate_synthetic(&SyntheticSpec {
            intra_noise_sigma: 0.0,
            ..spec.clone()
        })
        .unwrap();
        for (_, pts) in clean.by_identity() {
            assert!(pts.windows(2).all(|w| w[0].image == w[1].image));
        }
        assert!(generate_synthetic(&SyntheticSpec {
            n_identities: 1,
            ..spec
        })
        .is_err());
    }

    #[test]
    fn png_roundtrip_preserves_fingerprint() {
        let ds = generate_synthetic(&SyntheticSpec {
            n_identities: 3,
            samples_per_identity: 2,
            width: 12,
            height: 10,
            ..Default::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path(), BitDepth::Eight).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.fingerprint(), ds.fingerprint());

        let q = ds
            .map_images(|p| Ok(p.image.map_planes(|pl| pl.iter().map(|v| v * 0.77).collect())))
            .unwrap()
            .quantized16();
        let dir16 = tempfile::tempdir().unwrap();
        save_dataset(&q, dir16.path(), BitDepth::Sixteen).unwrap();
        assert_eq!(load_dataset(dir16.path()).unwrap(), q);
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::EmptyDataset)));
        assert!(matches!(
            load_dataset(dir.path().join("missing")),
            Err(Error::Io { .. })
        ));
        fs::write(dir.path().join("a_1.png"), b"not a png").unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Image { .. })));
        fs::remove_file(dir.path().join("a_1.png")).unwrap();
        fs::write(dir.path().join("noseparator.png"), b"x").unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::InvalidFilename(_))));
    }
}
