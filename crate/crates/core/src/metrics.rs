//! Utility comparisons and privacy–utility trade-off scoring.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::raster::{fmt_dims, ImageRaster};

pub const SSIM_WINDOW: usize = 8;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
/// PSNR (dB) that maps to utility 1.
pub const PSNR_CAP_DB: f64 = 50.0;

fn check_same(a: &ImageRaster, b: &ImageRaster) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            expected: fmt_dims(a.dims()),
            found: fmt_dims(b.dims()),
        });
    }
    Ok(())
}

/// Summed-area table with a zero first row and column.
fn integral(values: impl Iterator<Item = f64>, w: usize, h: usize) -> Vec<f64> {
    let mut sat = vec![0.0; (w + 1) * (h + 1)];
    let mut it = values;
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += it.next().expect("plane size");
            sat[(y + 1) * (w + 1) + x + 1] = sat[y * (w + 1) + x + 1] + row;
        }
    }
    sat
}

#[inline]
fn window_sum(sat: &[f64], w: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
    let s = w + 1;
    sat[y1 * s + x1] - sat[y0 * s + x1] - sat[y1 * s + x0] + sat[y0 * s + x0]
}

/// Mean SSIM over all 8×8 windows (stride 1) of the luma planes.
/// Windows shrink to the image size for images smaller than 8 pixels.
pub fn ssim(a: &ImageRaster, b: &ImageRaster) -> Result<f64> {
    check_same(a, b)?;
    let (w, h) = (a.width(), a.height());
    let (la, lb) = (a.luma(), b.luma());
    let sa = integral(la.iter().copied(), w, h);
    let sb = integral(lb.iter().copied(), w, h);
    let saa = integral(la.iter().map(|v| v * v), w, h);
    let sbb = integral(lb.iter().map(|v| v * v), w, h);
    let sab = integral(la.iter().zip(&lb).map(|(x, y)| x * y), w, h);
    let (ww, wh) = (SSIM_WINDOW.min(w), SSIM_WINDOW.min(h));
    let n = (ww * wh) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=h - wh {
        for x0 in 0..=w - ww {
            let (x1, y1) = (x0 + ww, y0 + wh);
            let mu_a = window_sum(&sa, w, x0, y0, x1, y1) / n;
            let mu_b = window_sum(&sb, w, x0, y0, x1, y1) / n;
            let var_a = window_sum(&saa, w, x0, y0, x1, y1) / n - mu_a * mu_a;
            let var_b = window_sum(&sbb, w, x0, y0, x1, y1) / n - mu_b * mu_b;
            let cov = window_sum(&sab, w, x0, y0, x1, y1) / n - mu_a * mu_b;
            let num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2);
            let den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2);
            total += num / den;
            count += 1;
        }
    }
    Ok((total / count as f64).clamp(-1.0, 1.0))
}

/// `(mse, psnr_db)` with `psnr = +inf` for identical images.
pub fn mse_psnr(a: &ImageRaster, b: &ImageRaster) -> Result<(f64, f64)> {
    check_same(a, b)?;
    let n = a.pixels().len() as f64;
    let mse = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    let psnr = if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    };
    Ok((mse, psnr))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityMeasure {
    #[default]
    Ssim,
    PsnrNorm,
}

impl UtilityMeasure {
    pub fn name(self) -> &'static str {
        match self {
            Self::Ssim => "ssim",
            Self::PsnrNorm => "psnr_norm",
        }
    }
}

/// Mean utility over all pairs: `utility` is normalized into `[0, 1]`,
/// `raw` is the mean un-normalized measure (SSIM, or PSNR capped at 50 dB).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityValue {
    pub utility: f64,
    pub raw: f64,
}

pub fn utility_detail(shared: &Dataset, original: &Dataset, measure: UtilityMeasure) -> Result<UtilityValue> {
    shared.check_paired(original)?;
    let per_pair: Vec<(f64, f64)> = shared
        .points()
        .par_iter()
        .zip(original.points())
        .map(|(s, o)| match measure {
            UtilityMeasure::Ssim => ssim(&s.image, &o.image).map(|v| (v.max(0.0), v)),
            UtilityMeasure::PsnrNorm => mse_psnr(&s.image, &o.image).map(|(_, p)| {
                let capped = p.min(PSNR_CAP_DB);
                (capped.max(0.0) / PSNR_CAP_DB, capped)
            }),
        })
        .collect::<Result<_>>()?;
    let n = per_pair.len() as f64;
    Ok(UtilityValue {
        utility: per_pair.iter().map(|p| p.0).sum::<f64>() / n,
        raw: per_pair.iter().map(|p| p.1).sum::<f64>() / n,
    })
}

/// Mean normalized utility of `shared` relative to `original`, in `[0, 1]`.
pub fn utility_of(shared: &Dataset, original: &Dataset, measure: UtilityMeasure) -> Result<f64> {
    utility_detail(shared, original, measure).map(|u| u.utility)
}

/// `1 / n_identities`.
pub fn chance_level(n_identities: usize) -> f64 {
    1.0 / n_identities as f64
}

/// Accuracy rescaled so that perfect recognition is 0 and chance is 1.
pub fn privacy_score(accuracy: f64, n_identities: usize) -> f64 {
    assert!(n_identities >= 2, "privacy_score needs at least two identities");
    let chance = chance_level(n_identities);
    ((1.0 - accuracy) / (1.0 - chance)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    WithoutDeanon,
    WithDeanon,
}

impl Variant {
    pub const ALL: [Variant; 2] = [Variant::WithoutDeanon, Variant::WithDeanon];

    pub fn name(self) -> &'static str {
        match self {
            Self::WithoutDeanon => "without_deanon",
            Self::WithDeanon => "with_deanon",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub method: String,
    pub param_label: String,
    pub variant: Variant,
    pub raw_accuracy: f64,
    pub balanced_accuracy: f64,
    pub privacy: f64,
    pub raw_utility: f64,
    pub utility: f64,
}

/// Area under a privacy–utility curve.
///
/// Points are sorted by privacy; equal-privacy points keep the highest
/// utility. The area is a leading rectangle from privacy 0 to the first
/// point at its utility, plus trapezoids between consecutive points. There
/// is no extrapolation past the last point, so a single point `(p, u)`
/// scores `p · u`.
pub fn auc_of(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::spec("AUC of an empty curve"));
    }
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    sorted.dedup_by(|later, earlier| later.0 == earlier.0);
    let (p0, u0) = sorted[0];
    let mut area = p0 * u0;
    for w in sorted.windows(2) {
        area += (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0;
    }
    Ok(area)
}

pub fn curve_auc(points: &[TradeoffPoint]) -> Result<f64> {
    let pairs: Vec<(f64, f64)> = points.iter().map(|p| (p.privacy, p.utility)).collect();
    auc_of(&pairs)
}

/// The fair comparison value: the lower AUC of the two attacker variants.
pub fn worst_case_auc(auc_without: f64, auc_with: f64) -> f64 {
    auc_without.min(auc_with)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffCurve {
    pub method: String,
    pub variant: Variant,
    pub points: Vec<TradeoffPoint>,
    pub auc: f64,
    /// Raw accuracy of random guessing.
    pub chance_level: f64,
    /// Utility of unmodified data.
    pub clear_utility: f64,
}

impl TradeoffCurve {
    pub fn new(
        method: impl Into<String>,
        variant: Variant,
        mut points: Vec<TradeoffPoint>,
        chance_level: f64,
        clear_utility: f64,
    ) -> Result<Self> {
        // Stable: equal-privacy points keep their input order.
        points.sort_by(|a, b| a.privacy.total_cmp(&b.privacy));
        let auc = curve_auc(&points)?;
        Ok(Self {
            method: method.into(),
            variant,
            points,
            auc,
            chance_level,
            clear_utility,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DataPoint;
    use proptest::prelude::*;

    fn img(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> ImageRaster {
        ImageRaster::from_clamped(w, h, 1, (0..w * h).map(|i| f(i % w, i / w)).collect())
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let a = img(20, 15, |x, y| ((x * 3 + y * 5) % 7) as f64 / 7.0);
        let b = img(20, 15, |x, y| ((x + y * 2) % 5) as f64 / 5.0);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        assert!(ssim(&a, &b).unwrap() < 1.0);
        assert!(ssim(&a, &img(3, 3, |_, _| 0.0)).is_err());
    }

    #[test]
    fn ssim_constant_closed_form() {
        let a = ImageRaster::filled(16, 16, 1, 0.2);
        let b = ImageRaster::filled(16, 16, 1, 0.8);
        let expect = (2.0 * 0.2 * 0.8 + SSIM_C1) / (0.2f64.powi(2) + 0.8f64.powi(2) + SSIM_C1);
        assert!((ssim(&a, &b).unwrap() - expect).abs() < 1e-6);
        assert!((expect - 0.47067).abs() < 1e-5);
    }

    #[test]
    fn ssim_matches_direct_window_loop() {
        // Brute-force window statistics without summed-area tables.
        let a = img(11, 10, |x, y| ((x * 7 + y * 3) % 9) as f64 / 9.0);
        let b = img(11, 10, |x, y| ((x * 2 + y * 5) % 4) as f64 / 4.0);
        let mut total = 0.0;
        let mut n = 0;
        for y0 in 0..=2 {
            for x0 in 0..=3 {
                let va: Vec<f64> = (0..64).map(|i| a.get(x0 + i % 8, y0 + i / 8, 0)).collect();
                let vb: Vec<f64> = (0..64).map(|i| b.get(x0 + i % 8, y0 + i / 8, 0)).collect();
                let ma = va.iter().sum::<f64>() / 64.0;
                let mb = vb.iter().sum::<f64>() / 64.0;
                let sa = va.iter().map(|v| (v - ma).powi(2)).sum::<f64>() / 64.0;
                let sb = vb.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / 64.0;
                let cov = va.iter().zip(&vb).map(|(p, q)| (p - ma) * (q - mb)).sum::<f64>() / 64.0;
                total += (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2)
                    / ((ma * ma + mb * mb + SSIM_C1) * (sa + sb + SSIM_C2));
                n += 1;
            }
        }
        assert!((ssim(&a, &b).unwrap() - total / n as f64).abs() < 1e-10);
    }

    #[test]
    fn ssim_rgb_uses_luma() {
        let rgb = ImageRaster::new(1, 1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        assert!((rgb.luma()[0] - 0.299).abs() < 1e-15);
        let other = ImageRaster::new(1, 1, 3, vec![0.0, 0.0, 1.0]).unwrap();
        assert!(ssim(&rgb, &other).unwrap() < 1.0);
    }

    #[test]
    fn mse_psnr_cases() {
        let z = ImageRaster::filled(4, 4, 1, 0.0);
        let h = ImageRaster::filled(4, 4, 1, 0.5);
        assert_eq!(mse_psnr(&z, &z).unwrap(), (0.0, f64::INFINITY));
        let (mse, psnr) = mse_psnr(&z, &h).unwrap();
        assert_eq!(mse, 0.25);
        assert!((psnr - 6.0206).abs() < 1e-4);

        let a = img(5, 4, |x, y| (x * y) as f64 / 12.0);
        let b = img(5, 4, |x, y| (x + y) as f64 / 7.0);
        let mut acc = 0.0;
        for y in 0..4 {
            for x in 0..5 {
                acc += (a.get(x, y, 0) - b.get(x, y, 0)).powi(2);
            }
        }
        assert!((mse_psnr(&a, &b).unwrap().0 - acc / 20.0).abs() < 1e-15);
    }

    fn set(images: Vec<ImageRaster>) -> Dataset {
        Dataset::new(
            images
                .into_iter()
                .enumerate()
                .map(|(i, im)| DataPoint::new(format!("p{i}"), "1", im))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn utility_bounds_and_averaging() {
        let imgs: Vec<ImageRaster> = (0..3)
            .map(|k| img(12, 12, move |x, y| ((x * (k + 2) + y) % 6) as f64 / 6.0))
            .collect();
        let orig = set(imgs.clone());
        for m in [UtilityMeasure::Ssim, UtilityMeasure::PsnrNorm] {
            assert_eq!(utility_of(&orig, &orig, m).unwrap(), 1.0);
        }
        let black = set((0..3).map(|_| ImageRaster::filled(12, 12, 1, 0.0)).collect());
        let u = utility_of(&black, &orig, UtilityMeasure::Ssim).unwrap();
        assert!((0.0..1.0).contains(&u));

        let noisy: Vec<ImageRaster> = imgs
            .iter()
            .map(|i| i.map_planes(|p| p.iter().map(|v| v * 0.9 + 0.05).collect()))
            .collect();
        let hand: f64 = noisy
            .iter()
            .zip(&imgs)
            .map(|(a, b)| ssim(a, b).unwrap().max(0.0))
            .sum::<f64>()
            / 3.0;
        assert!((utility_of(&set(noisy.clone()), &orig, UtilityMeasure::Ssim).unwrap() - hand).abs() < 1e-15);
        let hand_psnr: f64 = noisy
            .iter()
            .zip(&imgs)
            .map(|(a, b)| mse_psnr(a, b).unwrap().1.min(50.0) / 50.0)
            .sum::<f64>()
            / 3.0;
        assert!((utility_of(&set(noisy), &orig, UtilityMeasure::PsnrNorm).unwrap() - hand_psnr).abs() < 1e-15);

        let mismatched = Dataset::new(vec![DataPoint::new("q", "1", ImageRaster::filled(12, 12, 1, 0.0))]).unwrap();
        assert!(utility_of(&mismatched, &orig, UtilityMeasure::Ssim).is_err());
    }

    #[test]
    fn privacy_score_anchors() {
        assert_eq!(privacy_score(1.0, 10), 0.0);
        assert!((privacy_score(0.01, 100) - 1.0).abs() < 1e-12);
        assert!((privacy_score(0.505, 2) - 0.99).abs() < 1e-12);
        assert_eq!(privacy_score(0.0, 4), 1.0);
    }

    #[test]
    fn auc_fixtures() {
        assert!((auc_of(&[(0.5, 0.8)]).unwrap() - 0.4).abs() < 1e-15);
        assert!((auc_of(&[(0.0, 1.0), (1.0, 0.0)]).unwrap() - 0.5).abs() < 1e-15);
        assert!((auc_of(&[(0.6, 0.5), (0.2, 0.9), (0.9, 0.2)]).unwrap() - 0.565).abs() < 1e-12);
        // Equal privacy keeps the better utility.
        assert!((auc_of(&[(0.5, 0.2), (0.5, 0.8)]).unwrap() - 0.4).abs() < 1e-15);
        assert!(auc_of(&[]).is_err());
    }

    #[test]
    fn worst_case_is_min() {
        assert_eq!(worst_case_auc(0.5, 0.3), 0.3);
        assert_eq!(worst_case_auc(0.3, 0.5), 0.3);
        assert_eq!(worst_case_auc(0.4, 0.4), 0.4);
    }

    proptest! {
        #[test]
        fn auc_monotone_in_utility(
            pts in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..8),
            idx in any::<prop::sample::Index>(),
            bump in 0.0f64..0.5,
        ) {
            let base = auc_of(&pts).unwrap();
            let mut raised = pts.clone();
            let i = idx.index(raised.len());
            raised[i].1 = (raised[i].1 + bump).min(1.0);
            prop_assert!(auc_of(&raised).unwrap() >= base - 1e-12);
            prop_assert!((0.0..=1.0).contains(&base));
        }

        #[test]
        fn adding_a_point_stays_within_its_rectangle(
            pts in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..8),
            extra in (0.0f64..1.0, 0.0f64..1.0),
        ) {
            let before = auc_of(&pts).unwrap();
            let mut more = pts.clone();
            more.push(extra);
            let after = auc_of(&more).unwrap();
            let max_p = more.iter().map(|p| p.0).fold(0.0, f64::max);
            prop_assert!((after - before).abs() <= max_p + 1e-12);
        }

        #[test]
        fn privacy_decreases_with_accuracy(a in 0.0f64..1.0, b in 0.0f64..1.0, n in 2usize..200) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(privacy_score(lo, n) >= privacy_score(hi, n));
        }

        #[test]
        fn ssim_bounded_and_symmetric(s in 0u64..500) {
            let a = img(9, 9, |x, y| (((x * 31 + y * 17) as u64 * (s + 3)) % 97) as f64 / 97.0);
            let b = img(9, 9, |x, y| (((x * 13 + y * 7) as u64 * (s + 5)) % 89) as f64 / 89.0);
            let v = ssim(&a, &b).unwrap();
            prop_assert!((-1.0..=1.0).contains(&v));
            prop_assert!((v - ssim(&b, &a).unwrap()).abs() < 1e-12);
        }
    }
}
