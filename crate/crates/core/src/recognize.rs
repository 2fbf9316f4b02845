//! Closed-set identification: eigenface embedding with nearest-centroid and
//! k-NN classifiers.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::raster::ImageRaster;

pub const DEFAULT_N_COMPONENTS: usize = 40;
pub const DEFAULT_K: usize = 5;

/// Mean-centred PCA projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedder {
    pub mean: Vec<f64>,
    /// Unit-norm principal axes, one row per component, by descending variance.
    pub components: Vec<Vec<f64>>,
    /// Sample-covariance eigenvalue of each component.
    pub eigenvalues: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

/// Fits PCA on every image of `train`.
///
/// Uses the Gram (snapshot) matrix when there are fewer samples than
/// pixels. Components with negligible variance are dropped, so a dataset
/// with no variation yields an embedder with zero components.
pub fn fit_pca(train: &Dataset, n_components: usize) -> Result<Embedder> {
    let rows: Vec<&[f64]> = train.points().iter().map(|p| p.image.pixels()).collect();
    fit_pca_rows(&rows, n_components)
}

pub fn fit_pca_rows(rows: &[&[f64]], n_components: usize) -> Result<Embedder> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::Degenerate(format!("PCA needs >= 2 training samples, got {n}")));
    }
    if n_components == 0 {
        return Err(Error::spec("n_components must be >= 1"));
    }
    let d = rows[0].len();
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(*r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centred: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();
    let denom = (n - 1) as f64;

    // (eigenvalue, unit axis) pairs in pixel space.
    let mut pairs: Vec<(f64, Vec<f64>)> = if n <= d {
        let gram = DMatrix::from_fn(n, n, |i, j| dot(&centred[i], &centred[j]));
        let eig = SymmetricEigen::new(gram);
        (0..n)
            .map(|k| {
                let lambda = eig.eigenvalues[k];
                let u = eig.eigenvectors.column(k);
                let mut axis = vec![0.0; d];
                for (i, row) in centred.iter().enumerate() {
                    for (a, v) in axis.iter_mut().zip(row) {
                        *a += u[i] * v;
                    }
                }
                let norm = dot(&axis, &axis).sqrt();
                if norm > 0.0 {
                    axis.iter_mut().for_each(|a| *a /= norm);
                }
                (lambda / denom, axis)
            })
            .collect()
    } else {
        let cov = DMatrix::from_fn(d, d, |i, j| centred.iter().map(|r| r[i] * r[j]).sum::<f64>() / denom);
        let eig = SymmetricEigen::new(cov);
        (0..d)
            .map(|k| (eig.eigenvalues[k], eig.eigenvectors.column(k).iter().copied().collect()))
            .collect()
    };
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let total: f64 = pairs.iter().map(|p| p.0.max(0.0)).sum();
    let tol = total * 1e-10;
    let keep = n_components.min(n - 1).min(d);
    let mut components = Vec::new();
    let mut eigenvalues = Vec::new();
    for (lambda, mut axis) in pairs.into_iter().take(keep) {
        if lambda.is_nan() || lambda <= tol || total == 0.0 {
            break;
        }
        let pivot = axis
            .iter()
            .copied()
            .fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if pivot < 0.0 {
            axis.iter_mut().for_each(|a| *a = -*a);
        }
        components.push(axis);
        eigenvalues.push(lambda);
    }
    Ok(Embedder {
        mean,
        components,
        eigenvalues,
    })
}

impl Embedder {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn pixel_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn embed_pixels(&self, pixels: &[f64]) -> Result<Vec<f64>> {
        if pixels.len() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} pixel values", self.mean.len()),
                found: format!("{} pixel values", pixels.len()),
            });
        }
        let centred: Vec<f64> = pixels.iter().zip(&self.mean).map(|(v, m)| v - m).collect();
        Ok(self.components.iter().map(|c| dot(c, &centred)).collect())
    }

    /// Back-projection of an embedding into pixel space.
    pub fn reconstruct(&self, embedding: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, w) in self.components.iter().zip(embedding) {
            for (o, v) in out.iter_mut().zip(c) {
                *o += w * v;
            }
        }
        out
    }
}

/// `(flatten(img) − mean) · projection`.
pub fn embed(e: &Embedder, img: &ImageRaster) -> Result<Vec<f64>> {
    e.embed_pixels(img.pixels())
}

/// Enrolled templates and their per-identity centroids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gallery {
    pub templates: BTreeMap<String, Vec<Vec<f64>>>,
    pub centroids: BTreeMap<String, Vec<f64>>,
}

impl Gallery {
    pub fn from_templates(templates: BTreeMap<String, Vec<Vec<f64>>>) -> Result<Self> {
        if templates.is_empty() || templates.values().any(Vec::is_empty) {
            return Err(Error::spec("a gallery needs at least one template per identity"));
        }
        let centroids = templates
            .iter()
            .map(|(id, ts)| {
                let mut c = vec![0.0; ts[0].len()];
                for t in ts {
                    for (a, v) in c.iter_mut().zip(t) {
                        *a += v;
                    }
                }
                c.iter_mut().for_each(|a| *a /= ts.len() as f64);
                (id.clone(), c)
            })
            .collect();
        Ok(Self { templates, centroids })
    }

    pub fn n_identities(&self) -> usize {
        self.templates.len()
    }
}

pub fn enroll(e: &Embedder, enroll_set: &Dataset) -> Result<Gallery> {
    let embedded = enroll_set
        .points()
        .par_iter()
        .map(|p| embed(e, &p.image).map(|v| (p.identity.clone(), v)))
        .collect::<Result<Vec<_>>>()?;
    let mut templates: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for (id, v) in embedded {
        templates.entry(id).or_default().push(v);
    }
    Gallery::from_templates(templates)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "classifier", rename_all = "snake_case")]
pub enum Classifier {
    NearestCentroid,
    Knn { k: usize },
}

impl Classifier {
    pub fn id(&self) -> String {
        match self {
            Self::NearestCentroid => "nearest_centroid".into(),
            Self::Knn { k } => format!("knn(k={k})"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Self::Knn { k: 0 } = self {
            return Err(Error::spec("knn k must be >= 1"));
        }
        Ok(())
    }
}

impl fmt::Display for Classifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

/// Closed-set decision for one embedded probe.
///
/// Nearest centroid breaks distance ties by identity label. k-NN takes the
/// majority identity among the `k` nearest templates, breaking vote ties by
/// smaller summed distance and then by label.
pub fn classify(gallery: &Gallery, classifier: Classifier, probe: &[f64]) -> Result<String> {
    if gallery.templates.is_empty() {
        return Err(Error::spec("cannot classify against an empty gallery"));
    }
    classifier.validate()?;
    match classifier {
        Classifier::NearestCentroid => {
            let mut best: Option<(f64, &String)> = None;
            for (id, c) in &gallery.centroids {
                let d = sq_dist(c, probe);
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, id));
                }
            }
            Ok(best.expect("non-empty gallery").1.clone())
        }
        Classifier::Knn { k } => {
            let mut all: Vec<(f64, &String, usize)> = gallery
                .templates
                .iter()
                .flat_map(|(id, ts)| ts.iter().enumerate().map(move |(i, t)| (euclidean(t, probe), id, i)))
                .collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)).then(a.2.cmp(&b.2)));
            let mut votes: BTreeMap<&String, (usize, f64)> = BTreeMap::new();
            for (d, id, _) in all.into_iter().take(k) {
                let v = votes.entry(id).or_insert((0, 0.0));
                v.0 += 1;
                v.1 += d;
            }
            let mut best: Option<(&String, (usize, f64))> = None;
            for (id, v) in votes {
                let better = match best {
                    None => true,
                    Some((_, b)) => v.0 > b.0 || (v.0 == b.0 && v.1 < b.1),
                };
                if better {
                    best = Some((id, v));
                }
            }
            Ok(best.expect("k >= 1").0.clone())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub identity: String,
    pub instance: String,
    pub predicted: String,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecognitionReport {
    pub classifier: String,
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub n_identities: usize,
    pub predictions: Vec<Prediction>,
}

impl RecognitionReport {
    /// Builds a report, deriving both accuracies from `predictions`.
    pub fn from_predictions(classifier: impl Into<String>, n_identities: usize, predictions: Vec<Prediction>) -> Self {
        let n = predictions.len().max(1) as f64;
        let accuracy = predictions.iter().filter(|p| p.correct).count() as f64 / n;
        let mut per_id: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for p in &predictions {
            let e = per_id.entry(&p.identity).or_default();
            e.0 += p.correct as usize;
            e.1 += 1;
        }
        let balanced_accuracy = if per_id.is_empty() {
            0.0
        } else {
            per_id.values().map(|(c, t)| *c as f64 / *t as f64).sum::<f64>() / per_id.len() as f64
        };
        Self {
            classifier: classifier.into(),
            accuracy,
            balanced_accuracy,
            n_identities,
            predictions,
        }
    }

    pub fn score(&self, measure: AccuracyMeasure) -> f64 {
        match measure {
            AccuracyMeasure::Accuracy => self.accuracy,
            AccuracyMeasure::BalancedAccuracy => self.balanced_accuracy,
        }
    }
}

/// Classifies every test point against the gallery.
pub fn evaluate_closed_set(
    e: &Embedder,
    gallery: &Gallery,
    classifier: Classifier,
    test: &Dataset,
) -> Result<RecognitionReport> {
    if let Some(p) = test
        .points()
        .iter()
        .find(|p| !gallery.templates.contains_key(&p.identity))
    {
        return Err(Error::UnknownIdentity(p.identity.clone()));
    }
    let predictions = test
        .points()
        .par_iter()
        .map(|p| {
            let v = embed(e, &p.image)?;
            let predicted = classify(gallery, classifier, &v)?;
            Ok(Prediction {
                identity: p.identity.clone(),
                instance: p.instance.clone(),
                correct: predicted == p.identity,
                predicted,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RecognitionReport::from_predictions(
        classifier.id(),
        gallery.n_identities(),
        predictions,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracyMeasure {
    #[default]
    Accuracy,
    BalancedAccuracy,
}

/// The strongest attack: highest `measure`, ties to the smaller classifier id.
pub fn best_attack_by(reports: &[RecognitionReport], measure: AccuracyMeasure) -> Result<RecognitionReport> {
    reports
        .iter()
        .min_by(|a, b| {
            b.score(measure)
                .total_cmp(&a.score(measure))
                .then_with(|| a.classifier.cmp(&b.classifier))
        })
        .cloned()
        .ok_or_else(|| Error::spec("best_attack needs at least one report"))
}

pub fn best_attack(reports: &[RecognitionReport]) -> Result<RecognitionReport> {
    best_attack_by(reports, AccuracyMeasure::Accuracy)
}
