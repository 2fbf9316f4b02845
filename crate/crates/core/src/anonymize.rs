//! Classical face-image anonymizations.
//!
//! Every method except k-Same-Pixel works point by point; k-Same-Pixel needs
//! the whole dataset and is only reachable through [`anonymize_dataset`].

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{DataPoint, Dataset};
use crate::error::{Error, Result};
use crate::raster::{reflect_index, ImageRaster};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnonymizationMethod {
    Identity,
    GaussianBlur,
    Pixelate,
    EyeMask,
    GaussianNoise,
    BlockPermute,
    KSamePixel,
}

impl AnonymizationMethod {
    pub fn name(self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::GaussianBlur => "gaussian_blur",
            Self::Pixelate => "pixelate",
            Self::EyeMask => "eye_mask",
            Self::GaussianNoise => "gaussian_noise",
            Self::BlockPermute => "block_permute",
            Self::KSamePixel => "k_same_pixel",
        }
    }

    /// `(name, default)` for every accepted parameter.
    fn params(self) -> &'static [(&'static str, f64)] {
        match self {
            Self::Identity => &[],
            Self::GaussianBlur => &[("kernel", 9.0)],
            Self::Pixelate => &[("block", 8.0)],
            Self::EyeMask => &[("band_px", 16.0), ("eye_level", DEFAULT_EYE_LEVEL)],
            Self::GaussianNoise => &[("sigma", 0.1)],
            Self::BlockPermute => &[("block", 8.0)],
            Self::KSamePixel => &[("k", 2.0)],
        }
    }

    /// Whether the output depends on `seed` at all.
    pub fn uses_seed(self) -> bool {
        matches!(self, Self::GaussianNoise | Self::BlockPermute)
    }

    /// Whether the seed acts as a secret key the attacker must not learn.
    pub fn is_secret_keyed(self) -> bool {
        matches!(self, Self::BlockPermute)
    }
}

impl fmt::Display for AnonymizationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Row fraction of the image height taken as eye level.
pub const DEFAULT_EYE_LEVEL: f64 = 0.4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnonymizationSpec {
    pub method: AnonymizationMethod,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub seed: u64,
}

fn as_int(name: &str, v: f64) -> Result<i64> {
    if v.fract() != 0.0 || !v.is_finite() {
        return Err(Error::spec(format!("parameter {name} must be an integer, got {v}")));
    }
    Ok(v as i64)
}

impl AnonymizationSpec {
    pub fn new(method: AnonymizationMethod) -> Self {
        Self {
            method,
            params: BTreeMap::new(),
            seed: 0,
        }
    }

    pub fn with_param(mut self, name: &str, value: f64) -> Self {
        self.params.insert(name.into(), value);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn identity() -> Self {
        Self::new(AnonymizationMethod::Identity)
    }

    pub fn gaussian_blur(kernel: usize) -> Self {
        Self::new(AnonymizationMethod::GaussianBlur).with_param("kernel", kernel as f64)
    }

    pub fn eye_mask(band_px: usize) -> Self {
        Self::new(AnonymizationMethod::EyeMask).with_param("band_px", band_px as f64)
    }

    fn param(&self, name: &str) -> f64 {
        self.params.get(name).copied().unwrap_or_else(|| {
            self.method
                .params()
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, d)| *d)
                .expect("parameter declared for method")
        })
    }

    fn int_param(&self, name: &str) -> Result<i64> {
        as_int(name, self.param(name))
    }

    /// Checks parameter names and ranges, independent of any image.
    pub fn validate(&self) -> Result<()> {
        let allowed = self.method.params();
        if let Some(unknown) = self.params.keys().find(|k| !allowed.iter().any(|(n, _)| n == k)) {
            return Err(Error::spec(format!("{} has no parameter {unknown:?}", self.method)));
        }
        match self.method {
            AnonymizationMethod::Identity => {}
            AnonymizationMethod::GaussianBlur => {
                let k = self.int_param("kernel")?;
                if k < 1 || k % 2 == 0 {
                    return Err(Error::spec(format!(
                        "gaussian_blur kernel must be an odd integer >= 1, got {k}"
                    )));
                }
            }
            AnonymizationMethod::Pixelate | AnonymizationMethod::BlockPermute => {
                let b = self.int_param("block")?;
                if b < 1 {
                    return Err(Error::spec(format!("{} block must be >= 1, got {b}", self.method)));
                }
            }
            AnonymizationMethod::EyeMask => {
                let b = self.int_param("band_px")?;
                if b < 0 {
                    return Err(Error::spec(format!("eye_mask band_px must be >= 0, got {b}")));
                }
                let lvl = self.param("eye_level");
                if !(0.0..=1.0).contains(&lvl) {
                    return Err(Error::spec(format!("eye_mask eye_level must lie in [0, 1], got {lvl}")));
                }
            }
            AnonymizationMethod::GaussianNoise => {
                let s = self.param("sigma");
                if !(s >= 0.0 && s.is_finite()) {
                    return Err(Error::spec(format!("gaussian_noise sigma must be >= 0, got {s}")));
                }
            }
            AnonymizationMethod::KSamePixel => {
                let k = self.int_param("k")?;
                if k < 2 {
                    return Err(Error::spec(format!("k_same_pixel k must be >= 2, got {k}")));
                }
            }
        }
        Ok(())
    }

    /// Blur kernel size, when this is a Gaussian blur.
    pub fn blur_kernel(&self) -> Option<usize> {
        (self.method == AnonymizationMethod::GaussianBlur).then(|| self.param("kernel") as usize)
    }

    /// Pixelation block size, when this is a pixelation.
    pub fn pixelate_block(&self) -> Option<usize> {
        (self.method == AnonymizationMethod::Pixelate).then(|| self.param("block") as usize)
    }

    /// Short human label such as `gaussian_blur(kernel=9)`.
    pub fn label(&self) -> String {
        let mut parts: Vec<String> = self
            .params
            .iter()
            .map(|(k, v)| format!("{k}={}", fmt_num(*v)))
            .collect();
        if self.method.uses_seed() && !self.method.is_secret_keyed() {
            parts.push(format!("seed={}", self.seed));
        }
        if parts.is_empty() {
            self.method.name().to_string()
        } else {
            format!("{}({})", self.method, parts.join(","))
        }
    }

    /// Canonical key/value view. The seed is included only when it affects
    /// the output.
    pub fn canonical_params(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("method".to_string(), self.method.name().to_string());
        for (k, v) in &self.params {
            m.insert(format!("params.{k}"), fmt_num(*v));
        }
        if self.method.uses_seed() {
            m.insert("seed".to_string(), self.seed.to_string());
        }
        m
    }

    /// The spec as the attacker knows it: identical, except that the secret
    /// key of a keyed method is replaced by the attacker's own key.
    pub fn attacker_view(&self, attacker_key: u64) -> AttackerSpec {
        let mut spec = self.clone();
        let secret = self.method.is_secret_keyed();
        if secret {
            spec.seed = attacker_key;
        }
        AttackerSpec { spec, own_key: secret }
    }
}

/// An [`AnonymizationSpec`] stripped of defender secrets.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackerSpec {
    spec: AnonymizationSpec,
    own_key: bool,
}

impl AttackerSpec {
    /// The runnable spec (with the attacker's key for keyed methods).
    pub fn spec(&self) -> &AnonymizationSpec {
        &self.spec
    }

    /// Canonical view; a keyed method records `attacker_key` and never `seed`.
    pub fn canonical_params(&self) -> BTreeMap<String, String> {
        let mut m = self.spec.canonical_params();
        if self.own_key {
            let key = m.remove("seed").expect("keyed methods use the seed");
            m.insert("attacker_key".to_string(), key);
        }
        m
    }
}

pub(crate) fn fmt_num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:?}")
    }
}

/// Normalized 1-D Gaussian taps, sigma = kernel / 6.
pub fn gaussian_kernel_1d(kernel: usize) -> Vec<f64> {
    assert!(kernel % 2 == 1, "kernel must be odd");
    if kernel == 1 {
        return vec![1.0];
    }
    let sigma = kernel as f64 / 6.0;
    let r = (kernel / 2) as isize;
    let taps: Vec<f64> = (-r..=r)
        .map(|x| (-((x * x) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// The 2-D point spread function of [`gaussian_blur`], `kernel × kernel`.
pub fn gaussian_psf(kernel: usize) -> Psf {
    let k = gaussian_kernel_1d(kernel);
    let weights = k.iter().flat_map(|a| k.iter().map(move |b| a * b)).collect();
    Psf { size: kernel, weights }
}

/// Square, odd-sized convolution kernel stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Psf {
    pub size: usize,
    pub weights: Vec<f64>,
}

impl Psf {
    pub fn delta() -> Self {
        Self {
            size: 1,
            weights: vec![1.0],
        }
    }

    pub fn new(size: usize, weights: Vec<f64>) -> Result<Self> {
        if size.is_multiple_of(2) || weights.len() != size * size {
            return Err(Error::spec("PSF must be square with odd size"));
        }
        Ok(Self { size, weights })
    }

    pub fn radius(&self) -> isize {
        (self.size / 2) as isize
    }

    #[inline]
    pub fn at(&self, dx: isize, dy: isize) -> f64 {
        let r = self.radius();
        self.weights[((dy + r) as usize) * self.size + (dx + r) as usize]
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Point-mirrored copy (the adjoint kernel).
    pub fn mirrored(&self) -> Self {
        let mut weights = self.weights.clone();
        weights.reverse();
        Self {
            size: self.size,
            weights,
        }
    }
}

fn convolve_rows(plane: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let r = (taps.len() / 2) as isize;
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &wt) in taps.iter().enumerate() {
                acc += wt * row[reflect_index(x as isize + t as isize - r, w)];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn convolve_cols(plane: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let r = (taps.len() / 2) as isize;
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for (t, &wt) in taps.iter().enumerate() {
            let src = reflect_index(y as isize + t as isize - r, h);
            let src_row = &plane[src * w..(src + 1) * w];
            let dst = &mut out[y * w..(y + 1) * w];
            for (d, s) in dst.iter_mut().zip(src_row) {
                *d += wt * s;
            }
        }
    }
    out
}

/// Separable Gaussian blur with reflect padding; sigma = kernel / 6.
pub fn gaussian_blur(img: &ImageRaster, kernel: usize) -> Result<ImageRaster> {
    if kernel == 0 || kernel.is_multiple_of(2) {
        return Err(Error::spec(format!(
            "gaussian_blur kernel must be odd and >= 1, got {kernel}"
        )));
    }
    if kernel == 1 {
        return Ok(img.clone());
    }
    let taps = gaussian_kernel_1d(kernel);
    let (w, h) = (img.width(), img.height());
    Ok(img.map_planes(|p| convolve_cols(&convolve_rows(p, w, h, &taps), w, h, &taps)))
}

/// Replaces each `block × block` cell (ragged at the edges) by its mean.
pub fn pixelate(img: &ImageRaster, block: usize) -> ImageRaster {
    let block = block.max(1);
    let (w, h) = (img.width(), img.height());
    img.map_planes(|p| {
        let mut out = vec![0.0; w * h];
        for y0 in (0..h).step_by(block) {
            for x0 in (0..w).step_by(block) {
                let (y1, x1) = ((y0 + block).min(h), (x0 + block).min(w));
                let mut sum = 0.0;
                for y in y0..y1 {
                    sum += p[y * w + x0..y * w + x1].iter().sum::<f64>();
                }
                let mean = sum / ((y1 - y0) * (x1 - x0)) as f64;
                for y in y0..y1 {
                    out[y * w + x0..y * w + x1].fill(mean);
                }
            }
        }
        out
    })
}

/// First masked row for a given image height and eye-level fraction.
pub fn eye_row(height: usize, eye_level: f64) -> usize {
    ((eye_level * height as f64).round() as usize).min(height)
}

/// Blacks out `band_px` rows starting at eye level.
pub fn eye_mask(img: &ImageRaster, band_px: usize, eye_level: f64) -> ImageRaster {
    let (w, h, c) = img.dims();
    let r0 = eye_row(h, eye_level);
    let r1 = r0.saturating_add(band_px).min(h);
    let mut px = img.pixels().to_vec();
    px[r0 * w * c..r1 * w * c].fill(0.0);
    ImageRaster::from_clamped(w, h, c, px)
}

/// Adds clamped i.i.d. Gaussian noise drawn from `rng`.
pub fn gaussian_noise(img: &ImageRaster, sigma: f64, rng: &mut impl rand::Rng) -> ImageRaster {
    if sigma == 0.0 {
        return img.clone();
    }
    let n = Normal::new(0.0, sigma).expect("sigma validated");
    let px = img.pixels().iter().map(|&v| v + n.sample(rng)).collect();
    let (w, h, c) = img.dims();
    ImageRaster::from_clamped(w, h, c, px)
}

/// Seeded uniform permutation of `n_tiles` tile indices (Fisher–Yates).
pub fn tile_permutation(n_tiles: usize, key: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n_tiles).collect();
    perm.shuffle(&mut seed::rng(key, &["block_permute"]));
    perm
}

fn tile_grid(img: &ImageRaster, block: usize) -> Result<(usize, usize)> {
    let (w, h) = (img.width(), img.height());
    if block == 0 || w % block != 0 || h % block != 0 {
        return Err(Error::spec(format!(
            "block_permute block {block} must divide image size {w}x{h}"
        )));
    }
    Ok((w / block, h / block))
}

fn move_tiles(img: &ImageRaster, block: usize, src_of_dst: impl Fn(usize) -> usize) -> Result<ImageRaster> {
    let (tx, ty) = tile_grid(img, block)?;
    let (w, h, c) = img.dims();
    let src = img.pixels();
    let mut out = vec![0.0; src.len()];
    for dst_tile in 0..tx * ty {
        let s = src_of_dst(dst_tile);
        let (dx, dy) = ((dst_tile % tx) * block, (dst_tile / tx) * block);
        let (sx, sy) = ((s % tx) * block, (s / tx) * block);
        for row in 0..block {
            let d0 = ((dy + row) * w + dx) * c;
            let s0 = ((sy + row) * w + sx) * c;
            out[d0..d0 + block * c].copy_from_slice(&src[s0..s0 + block * c]);
        }
    }
    Ok(ImageRaster::from_clamped(w, h, c, out))
}

/// Rearranges `block × block` tiles by the permutation keyed by `key`:
/// destination tile `i` receives source tile `perm[i]`.
pub fn block_permute(img: &ImageRaster, block: usize, key: u64) -> Result<ImageRaster> {
    let (tx, ty) = tile_grid(img, block)?;
    let perm = tile_permutation(tx * ty, key);
    move_tiles(img, block, |d| perm[d])
}

/// Inverse of [`block_permute`] for the same key.
pub fn block_unpermute(img: &ImageRaster, block: usize, key: u64) -> Result<ImageRaster> {
    let (tx, ty) = tile_grid(img, block)?;
    let perm = tile_permutation(tx * ty, key);
    let mut inv = vec![0; perm.len()];
    for (d, &s) in perm.iter().enumerate() {
        inv[s] = d;
    }
    move_tiles(img, block, |d| inv[d])
}

fn mean_image(imgs: &[&ImageRaster]) -> Vec<f64> {
    let mut acc = vec![0.0; imgs[0].pixels().len()];
    for img in imgs {
        for (a, v) in acc.iter_mut().zip(img.pixels()) {
            *a += v;
        }
    }
    let n = imgs.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Greedy k-Same grouping of identities by the L2 distance of their mean
/// images. Groups have exactly `k` members except the last, which absorbs
/// the remainder.
pub fn k_same_groups(means: &BTreeMap<String, Vec<f64>>, k: usize) -> Vec<Vec<String>> {
    let mut unassigned: Vec<&String> = means.keys().collect();
    let mut groups = Vec::new();
    while unassigned.len() >= 2 * k {
        let anchor = unassigned.remove(0);
        let mut by_dist: Vec<(f64, &String)> = unassigned
            .iter()
            .map(|id| (l2(&means[anchor], &means[*id]), *id))
            .collect();
        by_dist.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
        let mut group = vec![anchor.clone()];
        group.extend(by_dist.iter().take(k - 1).map(|(_, id)| (*id).clone()));
        unassigned.retain(|id| !group.contains(id));
        group.sort();
        groups.push(group);
    }
    if !unassigned.is_empty() {
        groups.push(unassigned.into_iter().cloned().collect());
    }
    groups
}

/// k-Same-Pixel: every face becomes the average of its group's identity means.
pub fn k_same_pixel(ds: &Dataset, k: usize) -> Result<Dataset> {
    if k < 2 {
        return Err(Error::spec(format!("k_same_pixel k must be >= 2, got {k}")));
    }
    let by_id = ds.by_identity();
    if by_id.len() < k {
        return Err(Error::spec(format!(
            "k_same_pixel needs at least k={k} identities, dataset has {}",
            by_id.len()
        )));
    }
    let means: BTreeMap<String, Vec<f64>> = by_id
        .iter()
        .map(|(id, pts)| {
            let imgs: Vec<&ImageRaster> = pts.iter().map(|p| &p.image).collect();
            (id.to_string(), mean_image(&imgs))
        })
        .collect();
    let (w, h, c) = ds.dims();
    let mut replacement: BTreeMap<String, ImageRaster> = BTreeMap::new();
    for group in k_same_groups(&means, k) {
        let n = group.len() as f64;
        let mut avg = vec![0.0; w * h * c];
        for id in &group {
            for (a, v) in avg.iter_mut().zip(&means[id]) {
                *a += v / n;
            }
        }
        let img = ImageRaster::from_clamped(w, h, c, avg);
        for id in group {
            replacement.insert(id, img.clone());
        }
    }
    Dataset::new(
        ds.points()
            .iter()
            .map(|p| p.with_image(replacement[&p.identity].clone()))
            .collect(),
    )
}

/// Anonymizes one datapoint. Noise streams are keyed by
/// `(seed, identity, instance)` so the result never depends on evaluation order.
pub fn anonymize_point(spec: &AnonymizationSpec, point: &DataPoint) -> Result<DataPoint> {
    spec.validate()?;
    let img = &point.image;
    let out = match spec.method {
        AnonymizationMethod::Identity => img.clone(),
        AnonymizationMethod::GaussianBlur => gaussian_blur(img, spec.int_param("kernel")? as usize)?,
        AnonymizationMethod::Pixelate => pixelate(img, spec.int_param("block")? as usize),
        AnonymizationMethod::EyeMask => eye_mask(img, spec.int_param("band_px")? as usize, spec.param("eye_level")),
        AnonymizationMethod::GaussianNoise => {
            let mut rng = seed::rng(spec.seed, &["gaussian_noise", &point.identity, &point.instance]);
            gaussian_noise(img, spec.param("sigma"), &mut rng)
        }
        AnonymizationMethod::BlockPermute => block_permute(img, spec.int_param("block")? as usize, spec.seed)?,
        AnonymizationMethod::KSamePixel => {
            return Err(Error::spec(
                "k_same_pixel operates on whole datasets, not single points",
            ))
        }
    };
    Ok(point.with_image(out))
}

/// Anonymizes a whole dataset; labels and shapes are preserved.
pub fn anonymize_dataset(spec: &AnonymizationSpec, ds: &Dataset) -> Result<Dataset> {
    spec.validate()?;
    match spec.method {
        AnonymizationMethod::Identity => Ok(ds.clone()),
        AnonymizationMethod::KSamePixel => k_same_pixel(ds, spec.int_param("k")? as usize),
        _ => ds.map_images(|p| anonymize_point(spec, p).map(|p| p.image)),
    }
}
