//! Attacker-side reversal of anonymizations.
//!
//! Deconvolvers take their point spread function from the anonymization
//! parameters the attacker is assumed to know. The patch regressor is a
//! learned linear model from anonymized neighbourhoods to clear pixels.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::anonymize::{fmt_num, gaussian_psf, AnonymizationSpec, Psf};
use crate::dataset::{DataPoint, Dataset};
use crate::error::{Error, Result};
use crate::fourier::{self, Grid};
use crate::raster::{clamp01, reflect_index, Dims, ImageRaster};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeanonymizationMethod {
    None,
    Wiener,
    RichardsonLucy,
    BicubicSharpen,
    PatchRegressor,
}

impl DeanonymizationMethod {
    pub fn name(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Wiener => "wiener",
            Self::RichardsonLucy => "richardson_lucy",
            Self::BicubicSharpen => "bicubic_sharpen",
            Self::PatchRegressor => "patch_regressor",
        }
    }

    fn params(self) -> &'static [&'static str] {
        match self {
            Self::None => &[],
            Self::Wiener => &["nsr", "kernel"],
            Self::RichardsonLucy => &["iterations", "kernel"],
            Self::BicubicSharpen => &["block", "linear"],
            Self::PatchRegressor => &["patch", "ridge", "max_patches"],
        }
    }
}

pub const DEFAULT_NSR: f64 = 1e-3;
pub const DEFAULT_RL_ITERATIONS: usize = 30;
pub const DEFAULT_PATCH: usize = 9;
pub const DEFAULT_RIDGE: f64 = 1e-4;
pub const DEFAULT_MAX_PATCHES: usize = 200_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeanonymizationSpec {
    pub method: DeanonymizationMethod,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl Default for DeanonymizationSpec {
    fn default() -> Self {
        Self::new(DeanonymizationMethod::None)
    }
}

impl DeanonymizationSpec {
    pub fn new(method: DeanonymizationMethod) -> Self {
        Self {
            method,
            params: BTreeMap::new(),
        }
    }

    pub fn with_param(mut self, name: &str, value: f64) -> Self {
        self.params.insert(name.into(), value);
        self
    }

    fn get(&self, name: &str) -> Option<f64> {
        self.params.get(name).copied()
    }

    fn usize_param(&self, name: &str, default: usize) -> Result<usize> {
        match self.get(name) {
            None => Ok(default),
            Some(v) if v >= 0.0 && v.fract() == 0.0 && v.is_finite() => Ok(v as usize),
            Some(v) => Err(Error::spec(format!(
                "{} {name} must be a non-negative integer, got {v}",
                self.method.name()
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let allowed = self.method.params();
        if let Some(k) = self.params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::spec(format!("{} has no parameter {k:?}", self.method.name())));
        }
        if self.get("kernel").is_some() {
            let k = self.usize_param("kernel", 1)?;
            if k % 2 == 0 {
                return Err(Error::spec(format!("PSF kernel must be odd, got {k}")));
            }
        }
        match self.method {
            DeanonymizationMethod::Wiener => {
                let nsr = self.get("nsr").unwrap_or(DEFAULT_NSR);
                if !(nsr > 0.0 && nsr.is_finite()) {
                    return Err(Error::spec(format!("wiener nsr must be > 0, got {nsr}")));
                }
            }
            DeanonymizationMethod::RichardsonLucy => {
                if self.usize_param("iterations", DEFAULT_RL_ITERATIONS)? < 1 {
                    return Err(Error::spec("richardson_lucy iterations must be >= 1"));
                }
            }
            DeanonymizationMethod::BicubicSharpen => {
                if self.usize_param("block", 1)? < 1 {
                    return Err(Error::spec("bicubic_sharpen block must be >= 1"));
                }
                self.usize_param("linear", 0)?;
            }
            DeanonymizationMethod::PatchRegressor => {
                let p = self.usize_param("patch", DEFAULT_PATCH)?;
                if p < 1 || p % 2 == 0 {
                    return Err(Error::spec(format!(
                        "patch_regressor patch must be odd and >= 1, got {p}"
                    )));
                }
                let ridge = self.get("ridge").unwrap_or(DEFAULT_RIDGE);
                if !(ridge >= 0.0 && ridge.is_finite()) {
                    return Err(Error::spec(format!("patch_regressor ridge must be >= 0, got {ridge}")));
                }
                if self.usize_param("max_patches", DEFAULT_MAX_PATCHES)? < 1 {
                    return Err(Error::spec("patch_regressor max_patches must be >= 1"));
                }
            }
            DeanonymizationMethod::None => {}
        }
        Ok(())
    }

    pub fn canonical_params(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("method".to_string(), self.method.name().to_string());
        for (k, v) in &self.params {
            m.insert(format!("params.{k}"), fmt_num(*v));
        }
        m
    }

    pub fn label(&self) -> String {
        if self.params.is_empty() {
            return self.method.name().into();
        }
        let parts: Vec<String> = self
            .params
            .iter()
            .map(|(k, v)| format!("{k}={}", fmt_num(*v)))
            .collect();
        format!("{}({})", self.method.name(), parts.join(","))
    }
}

/// Linear map from a `patch × patch` anonymized neighbourhood (plus bias)
/// to the clear centre pixel, one weight vector per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchRegressorModel {
    pub patch: usize,
    /// Row-major patch weights followed by the bias, per channel.
    pub weights: Vec<Vec<f64>>,
    pub clear_fingerprint: String,
    pub anon_fingerprint: String,
}

impl PatchRegressorModel {
    pub fn center_weight(&self, channel: usize) -> f64 {
        self.weights[channel][self.patch * self.patch / 2]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DeanonymizerKind {
    None,
    Wiener { psf: Psf, nsr: f64 },
    RichardsonLucy { psf: Psf, iterations: usize },
    Interpolate { block: usize, cubic: bool },
    PatchRegressor(PatchRegressorModel),
}

/// A trained (or parameter-only) de-anonymizer for images of one shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeanonymizerModel {
    pub dims: Dims,
    pub kind: DeanonymizerKind,
}

fn attacker_psf(spec: &DeanonymizationSpec, known: Option<&AnonymizationSpec>) -> Result<Psf> {
    if spec.get("kernel").is_some() {
        return Ok(gaussian_psf(spec.usize_param("kernel", 1)?));
    }
    Ok(known
        .and_then(|a| a.blur_kernel())
        .map(gaussian_psf)
        .unwrap_or_else(Psf::delta))
}

/// Trains a de-anonymizer on the attacker's paired clear/anonymized sets.
///
/// `known` is the anonymization as the attacker knows it; deconvolvers use
/// its blur kernel as PSF (a delta PSF when there is none).
pub fn train_deanonymizer(
    spec: &DeanonymizationSpec,
    known: Option<&AnonymizationSpec>,
    clear_set: &Dataset,
    anon_set: &Dataset,
    seed: u64,
) -> Result<DeanonymizerModel> {
    spec.validate()?;
    clear_set.check_paired(anon_set)?;
    let dims = clear_set.dims();
    let kind = match spec.method {
        DeanonymizationMethod::None => DeanonymizerKind::None,
        DeanonymizationMethod::Wiener => DeanonymizerKind::Wiener {
            psf: attacker_psf(spec, known)?,
            nsr: spec.get("nsr").unwrap_or(DEFAULT_NSR),
        },
        DeanonymizationMethod::RichardsonLucy => DeanonymizerKind::RichardsonLucy {
            psf: attacker_psf(spec, known)?,
            iterations: spec.usize_param("iterations", DEFAULT_RL_ITERATIONS)?,
        },
        DeanonymizationMethod::BicubicSharpen => {
            let block = match spec.get("block") {
                Some(_) => spec.usize_param("block", 1)?,
                None => known.and_then(|a| a.pixelate_block()).unwrap_or(1),
            };
            DeanonymizerKind::Interpolate {
                block,
                cubic: spec.usize_param("linear", 0)? == 0,
            }
        }
        DeanonymizationMethod::PatchRegressor => DeanonymizerKind::PatchRegressor(train_patch_regressor(
            clear_set,
            anon_set,
            spec.usize_param("patch", DEFAULT_PATCH)?,
            spec.get("ridge").unwrap_or(DEFAULT_RIDGE),
            spec.usize_param("max_patches", DEFAULT_MAX_PATCHES)?,
            seed,
        )?),
    };
    Ok(DeanonymizerModel { dims, kind })
}

fn patch_features(plane: &[f64], w: usize, h: usize, x: usize, y: usize, patch: usize, out: &mut Vec<f64>) {
    out.clear();
    let r = (patch / 2) as isize;
    for dy in -r..=r {
        let row = reflect_index(y as isize + dy, h) * w;
        for dx in -r..=r {
            out.push(plane[row + reflect_index(x as isize + dx, w)]);
        }
    }
    out.push(1.0);
}

fn train_patch_regressor(
    clear: &Dataset,
    anon: &Dataset,
    patch: usize,
    ridge: f64,
    max_patches: usize,
    seed: u64,
) -> Result<PatchRegressorModel> {
    let (w, h, channels) = clear.dims();
    let first = clear.points()[0].image.pixels()[0];
    if clear
        .points()
        .iter()
        .all(|p| p.image.pixels().iter().all(|&v| v == first))
    {
        return Err(Error::Degenerate(
            "clear training images are all one constant value".into(),
        ));
    }
    let per_image = w * h;
    let total = clear.len() * per_image;
    let mut picks: Vec<usize> = if total > max_patches {
        index::sample(&mut seed::rng(seed, &["patch_regressor"]), total, max_patches).into_vec()
    } else {
        (0..total).collect()
    };
    picks.sort_unstable();

    let dim = patch * patch + 1;
    let mut weights = Vec::with_capacity(channels);
    for c in 0..channels {
        let anon_planes: Vec<Vec<f64>> = anon.points().iter().map(|p| p.image.plane(c)).collect();
        let clear_planes: Vec<Vec<f64>> = clear.points().iter().map(|p| p.image.plane(c)).collect();
        // Fixed chunking keeps the floating-point summation order stable.
        let partials: Vec<(Vec<f64>, Vec<f64>)> = picks
            .par_chunks(4096)
            .map(|chunk| {
                let mut xtx = vec![0.0; dim * dim];
                let mut xty = vec![0.0; dim];
                let mut f = Vec::with_capacity(dim);
                for &idx in chunk {
                    let (img, pos) = (idx / per_image, idx % per_image);
                    let (x, y) = (pos % w, pos / w);
                    patch_features(&anon_planes[img], w, h, x, y, patch, &mut f);
                    let target = clear_planes[img][pos];
                    for i in 0..dim {
                        let fi = f[i];
                        xty[i] += fi * target;
                        let row = &mut xtx[i * dim..i * dim + dim];
                        for j in i..dim {
                            row[j] += fi * f[j];
                        }
                    }
                }
                (xtx, xty)
            })
            .collect();
        let mut xtx = DMatrix::<f64>::zeros(dim, dim);
        let mut xty = DVector::<f64>::zeros(dim);
        for (pxtx, pxty) in &partials {
            for i in 0..dim {
                xty[i] += pxty[i];
                for j in i..dim {
                    xtx[(i, j)] += pxtx[i * dim + j];
                }
            }
        }
        for i in 0..dim {
            for j in 0..i {
                xtx[(i, j)] = xtx[(j, i)];
            }
        }
        // The bias is not penalized.
        for i in 0..dim - 1 {
            xtx[(i, i)] += ridge;
        }
        let chol = xtx
            .cholesky()
            .ok_or_else(|| Error::Degenerate("patch regression normal equations are singular".into()))?;
        weights.push(chol.solve(&xty).iter().copied().collect());
    }
    Ok(PatchRegressorModel {
        patch,
        weights,
        clear_fingerprint: clear.fingerprint().to_string(),
        anon_fingerprint: anon.fingerprint().to_string(),
    })
}

fn check_psf(psf: &Psf) -> Result<()> {
    if (psf.sum() - 1.0).abs() > 1e-6 {
        return Err(Error::spec(format!("PSF must sum to 1, sums to {}", psf.sum())));
    }
    if psf.weights.iter().any(|w| *w < 0.0) {
        return Err(Error::spec("PSF weights must be non-negative"));
    }
    Ok(())
}

/// Frequency-domain Wiener deconvolution, `H* / (|H|² + nsr)` per channel.
pub fn wiener_deconvolve(img: &ImageRaster, psf: &Psf, nsr: f64) -> Result<ImageRaster> {
    check_psf(psf)?;
    if nsr.is_nan() || nsr <= 0.0 {
        return Err(Error::spec(format!("wiener nsr must be > 0, got {nsr}")));
    }
    let (w, h) = (img.width(), img.height());
    let response: Vec<Complex<f64>> = fourier::transfer(psf, &Grid::doubled(w, h))
        .into_iter()
        .map(|hf| hf.conj() / (hf.norm_sqr() + nsr))
        .collect();
    Ok(img.map_planes(|p| fourier::apply(p, w, h, &response)))
}

const RL_EPS: f64 = 1e-6;

/// Richardson–Lucy deconvolution with the mirrored PSF as adjoint.
pub fn richardson_lucy(img: &ImageRaster, psf: &Psf, iterations: usize) -> Result<ImageRaster> {
    check_psf(psf)?;
    let (w, h) = (img.width(), img.height());
    let grid = Grid::doubled(w, h);
    let forward = fourier::transfer(psf, &grid);
    let adjoint = fourier::transfer(&psf.mirrored(), &grid);
    Ok(img.map_planes(|p| {
        let observed: Vec<f64> = p.iter().map(|v| v + RL_EPS).collect();
        let mut est = observed.clone();
        for _ in 0..iterations {
            let blurred = fourier::apply(&est, w, h, &forward);
            let ratio: Vec<f64> = observed
                .iter()
                .zip(&blurred)
                .map(|(o, b)| o / b.max(RL_EPS * 1e-3))
                .collect();
            let correction = fourier::apply(&ratio, w, h, &adjoint);
            for (e, c) in est.iter_mut().zip(&correction) {
                *e = (*e * c).max(0.0);
            }
        }
        est.into_iter().map(|v| v - RL_EPS).collect()
    }))
}

fn cubic_weights(t: f64) -> [f64; 4] {
    // Catmull-Rom (a = -0.5).
    let t2 = t * t;
    let t3 = t2 * t;
    [
        -0.5 * t3 + t2 - 0.5 * t,
        1.5 * t3 - 2.5 * t2 + 1.0,
        -1.5 * t3 + 2.0 * t2 + 0.5 * t,
        0.5 * t3 - 0.5 * t2,
    ]
}

/// Re-interpolates a pixelated image from its cell values, treating each
/// cell as a sample at its centre.
pub fn interpolate_cells(img: &ImageRaster, block: usize, cubic: bool) -> ImageRaster {
    if block <= 1 {
        return img.clone();
    }
    let (w, h) = (img.width(), img.height());
    let (cw, ch) = (w.div_ceil(block), h.div_ceil(block));
    let centre = (block as f64 - 1.0) / 2.0;
    img.map_planes(|p| {
        let cell = |cx: isize, cy: isize| {
            let cx = cx.clamp(0, cw as isize - 1) as usize;
            let cy = cy.clamp(0, ch as isize - 1) as usize;
            p[(cy * block) * w + cx * block]
        };
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            let uy = ((y as f64 - centre) / block as f64).clamp(0.0, (ch - 1) as f64);
            let (iy, ty) = (uy.floor() as isize, uy.fract());
            for x in 0..w {
                let ux = ((x as f64 - centre) / block as f64).clamp(0.0, (cw - 1) as f64);
                let (ix, tx) = (ux.floor() as isize, ux.fract());
                out[y * w + x] = if cubic {
                    let (wx, wy) = (cubic_weights(tx), cubic_weights(ty));
                    let mut acc = 0.0;
                    for (j, wyj) in wy.iter().enumerate() {
                        for (i, wxi) in wx.iter().enumerate() {
                            acc += wyj * wxi * cell(ix - 1 + i as isize, iy - 1 + j as isize);
                        }
                    }
                    acc
                } else {
                    let a = cell(ix, iy) * (1.0 - tx) + cell(ix + 1, iy) * tx;
                    let b = cell(ix, iy + 1) * (1.0 - tx) + cell(ix + 1, iy + 1) * tx;
                    a * (1.0 - ty) + b * ty
                };
            }
        }
        out
    })
}

fn apply_patch_regressor(model: &PatchRegressorModel, img: &ImageRaster) -> ImageRaster {
    let (w, h) = (img.width(), img.height());
    let planes: Vec<Vec<f64>> = (0..img.channels())
        .map(|c| {
            let plane = img.plane(c);
            let wts = &model.weights[c];
            let mut f = Vec::with_capacity(wts.len());
            let mut out = Vec::with_capacity(w * h);
            for y in 0..h {
                for x in 0..w {
                    patch_features(&plane, w, h, x, y, model.patch, &mut f);
                    out.push(clamp01(f.iter().zip(wts).map(|(a, b)| a * b).sum()));
                }
            }
            out
        })
        .collect();
    ImageRaster::from_planes(w, h, &planes)
}

pub fn deanonymize_image(model: &DeanonymizerModel, img: &ImageRaster) -> Result<ImageRaster> {
    img.check_dims(model.dims)?;
    Ok(match &model.kind {
        DeanonymizerKind::None => img.clone(),
        DeanonymizerKind::Wiener { psf, nsr } => wiener_deconvolve(img, psf, *nsr)?,
        DeanonymizerKind::RichardsonLucy { psf, iterations } => richardson_lucy(img, psf, *iterations)?,
        DeanonymizerKind::Interpolate { block, cubic } => interpolate_cells(img, *block, *cubic),
        DeanonymizerKind::PatchRegressor(m) => apply_patch_regressor(m, img),
    })
}

pub fn deanonymize_point(model: &DeanonymizerModel, point: &DataPoint) -> Result<DataPoint> {
    Ok(point.with_image(deanonymize_image(model, &point.image)?))
}

pub fn deanonymize_dataset(model: &DeanonymizerModel, ds: &Dataset) -> Result<Dataset> {
    if matches!(model.kind, DeanonymizerKind::None) {
        for p in ds.points() {
            p.image.check_dims(model.dims)?;
        }
        return Ok(ds.clone());
    }
    ds.map_images(|p| deanonymize_image(model, &p.image))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anonymize::{gaussian_blur, pixelate};
    use crate::metrics::{mse_psnr, ssim};
    use rand::Rng;
    use std::f64::consts::TAU;

    fn random_image(w: usize, h: usize, s: u64) -> ImageRaster {
        let mut rng = seed::rng(s, &["deanon-test"]);
        ImageRaster::from_clamped(w, h, 1, (0..w * h).map(|_| rng.random::<f64>()).collect())
    }

    fn smooth_image(w: usize, h: usize, s: u64) -> ImageRaster {
        let mut rng = seed::rng(s, &["smooth"]);
        let (a, b, c) = (
            rng.random_range(1.0..3.0),
            rng.random_range(1.0..3.0),
            rng.random::<f64>() * 6.0,
        );
        let px = (0..w * h)
            .map(|i| {
                let (x, y) = ((i % w) as f64 / w as f64, (i / w) as f64 / h as f64);
                0.5 + 0.2 * (TAU * a * x + c).sin() * (TAU * b * y).cos()
                    + 0.15 * ((x - 0.5).powi(2) + (y - 0.4).powi(2) < 0.05) as i32 as f64
            })
            .collect();
        ImageRaster::from_clamped(w, h, 1, px)
    }

    fn paired(clear: Vec<ImageRaster>, f: impl Fn(&ImageRaster) -> ImageRaster) -> (Dataset, Dataset) {
        let c: Vec<DataPoint> = clear
            .into_iter()
            .enumerate()
            .map(|(i, img)| DataPoint::new(format!("p{}", i % 3), format!("{i}"), img))
            .collect();
        let a: Vec<DataPoint> = c.iter().map(|p| p.with_image(f(&p.image))).collect();
        (Dataset::new(c).unwrap(), Dataset::new(a).unwrap())
    }

    fn max_abs_diff(a: &ImageRaster, b: &ImageRaster) -> f64 {
        a.pixels()
            .iter()
            .zip(b.pixels())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn wiener_limits() {
        let img = random_image(16, 12, 1);
        let same = wiener_deconvolve(&img, &Psf::delta(), 1e-12).unwrap();
        assert!(max_abs_diff(&same, &img) < 1e-6);
        let dark = wiener_deconvolve(&img, &Psf::delta(), 1e9).unwrap();
        assert!(dark.pixels().iter().all(|v| v.abs() < 1e-3));
        let bad = Psf::new(3, vec![0.2; 9]).unwrap();
        assert!(wiener_deconvolve(&img, &bad, 1e-3).is_err());
    }

    #[test]
    fn wiener_beats_blur() {
        for s in 0..3 {
            let orig = smooth_image(48, 40, s);
            let blurred = gaussian_blur(&orig, 5).unwrap().quantized16();
            let restored = wiener_deconvolve(&blurred, &gaussian_psf(5), 1e-3).unwrap();
            assert!(mse_psnr(&restored, &orig).unwrap().0 < mse_psnr(&blurred, &orig).unwrap().0);
            assert!(ssim(&restored, &orig).unwrap() > ssim(&blurred, &orig).unwrap());
        }
    }

    #[test]
    fn richardson_lucy_fixed_points() {
        let img = random_image(10, 9, 2);
        for it in [1, 5, 30] {
            let out = richardson_lucy(&img, &Psf::delta(), it).unwrap();
            assert!(max_abs_diff(&out, &img) < 1e-6);
        }
        let flat = ImageRaster::filled(12, 12, 1, 0.42);
        let out = richardson_lucy(&flat, &gaussian_psf(5), 10).unwrap();
        assert!(out.pixels().iter().all(|v| (v - 0.42).abs() < 1e-6));
    }

    #[test]
    fn richardson_lucy_improves_ssim() {
        let orig = smooth_image(48, 48, 4);
        let blurred = gaussian_blur(&orig, 5).unwrap();
        let out = richardson_lucy(&blurred, &gaussian_psf(5), 30).unwrap();
        assert!(ssim(&out, &orig).unwrap() > ssim(&blurred, &orig).unwrap());
    }

    #[test]
    fn interpolation_undoes_constant_and_is_identity_for_unit_block() {
        let img = random_image(9, 7, 3);
        assert_eq!(interpolate_cells(&img, 1, true), img);
        let flat = pixelate(&ImageRaster::filled(9, 7, 1, 0.3), 3);
        let out = interpolate_cells(&flat, 3, true);
        assert!(out.pixels().iter().all(|v| (v - 0.3).abs() < 1e-12));
        // A linear ramp is reproduced exactly by linear interpolation in the interior.
        let ramp = ImageRaster::from_clamped(12, 1, 1, (0..12).map(|x| x as f64 / 20.0).collect());
        let pix = pixelate(&ramp, 3);
        let lin = interpolate_cells(&pix, 3, false);
        for x in 1..11 {
            assert!((lin.get(x, 0, 0) - ramp.get(x, 0, 0)).abs() < 1e-12, "x={x}");
        }
    }

    #[test]
    fn patch_regressor_learns_delta_on_identity_pairs() {
        let imgs: Vec<ImageRaster> = (0..6).map(|s| random_image(20, 20, s)).collect();
        let (clear, anon) = paired(imgs, |i| i.clone());
        let spec = DeanonymizationSpec::new(DeanonymizationMethod::PatchRegressor)
            .with_param("patch", 3.0)
            .with_param("ridge", 1e-6);
        let model = train_deanonymizer(&spec, None, &clear, &anon, 1).unwrap();
        let DeanonymizerKind::PatchRegressor(m) = &model.kind else {
            panic!()
        };
        let centre = m.patch * m.patch / 2;
        for (i, w) in m.weights[0].iter().enumerate() {
            let expect = if i == centre { 1.0 } else { 0.0 };
            assert!((w - expect).abs() < 1e-3, "weight {i} = {w}");
        }
        // Held-out image.
        let probe = random_image(20, 20, 99);
        let out = deanonymize_image(&model, &probe).unwrap();
        let mae = out
            .pixels()
            .iter()
            .zip(probe.pixels())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / 400.0;
        assert!(mae < 1e-3, "mae {mae}");

        let again = train_deanonymizer(&spec, None, &clear, &anon, 1).unwrap();
        assert_eq!(again, model);
    }

    #[test]
    fn patch_regressor_subsampling_is_seeded() {
        let imgs: Vec<ImageRaster> = (0..3).map(|s| smooth_image(16, 16, s)).collect();
        let (clear, anon) = paired(imgs, |i| gaussian_blur(i, 5).unwrap());
        let spec = DeanonymizationSpec::new(DeanonymizationMethod::PatchRegressor)
            .with_param("patch", 5.0)
            .with_param("max_patches", 300.0);
        let a = train_deanonymizer(&spec, None, &clear, &anon, 7).unwrap();
        assert_eq!(a, train_deanonymizer(&spec, None, &clear, &anon, 7).unwrap());
        assert_ne!(a, train_deanonymizer(&spec, None, &clear, &anon, 8).unwrap());
    }

    #[test]
    fn training_errors() {
        let imgs: Vec<ImageRaster> = (0..3).map(|s| random_image(8, 8, s)).collect();
        let (clear, _) = paired(imgs, |i| i.clone());
        let other = Dataset::new(vec![DataPoint::new("z", "1", random_image(8, 8, 5))]).unwrap();
        let spec = DeanonymizationSpec::new(DeanonymizationMethod::PatchRegressor);
        assert!(matches!(
            train_deanonymizer(&spec, None, &clear, &other, 0),
            Err(Error::KeyMismatch(_))
        ));
        let flat: Vec<ImageRaster> = (0..3).map(|_| ImageRaster::filled(8, 8, 1, 0.5)).collect();
        let (fc, fa) = paired(flat, |i| i.clone());
        assert!(matches!(
            train_deanonymizer(&spec, None, &fc, &fa, 0),
            Err(Error::Degenerate(_))
        ));
        assert!(DeanonymizationSpec::new(DeanonymizationMethod::Wiener)
            .with_param("nsr", 0.0)
            .validate()
            .is_err());
        assert!(DeanonymizationSpec::new(DeanonymizationMethod::RichardsonLucy)
            .with_param("iterations", 0.0)
            .validate()
            .is_err());
        assert!(DeanonymizationSpec::new(DeanonymizationMethod::PatchRegressor)
            .with_param("patch", 4.0)
            .validate()
            .is_err());
    }

    #[test]
    fn dataset_level_none_and_dimension_checks() {
        let imgs: Vec<ImageRaster> = (0..3).map(|s| random_image(8, 8, s)).collect();
        let (clear, anon) = paired(imgs, |i| gaussian_blur(i, 3).unwrap());
        let none = train_deanonymizer(&DeanonymizationSpec::default(), None, &clear, &anon, 0).unwrap();
        assert_eq!(
            deanonymize_dataset(&none, &anon).unwrap().fingerprint(),
            anon.fingerprint()
        );
        let known = AnonymizationSpec::gaussian_blur(3);
        let wiener = train_deanonymizer(
            &DeanonymizationSpec::new(DeanonymizationMethod::Wiener),
            Some(&known),
            &clear,
            &anon,
            0,
        )
        .unwrap();
        let DeanonymizerKind::Wiener { psf, .. } = &wiener.kind else {
            panic!()
        };
        assert_eq!(psf.size, 3);
        let out = deanonymize_dataset(&wiener, &anon).unwrap();
        assert_eq!(out.keys(), anon.keys());
        assert_eq!(
            deanonymize_dataset(&wiener, &anon).unwrap().fingerprint(),
            out.fingerprint()
        );
        let wrong = DataPoint::new("q", "1", random_image(9, 8, 0));
        assert!(matches!(
            deanonymize_point(&wiener, &wrong),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
