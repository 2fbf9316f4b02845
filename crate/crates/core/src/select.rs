//! Identity-set reduction: distinctive selection and a seeded random baseline.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::recognize::{embed, euclidean, Embedder};
use crate::seed;

pub const SCORE_EPSILON: f64 = 1e-9;
pub const DEFAULT_N_IDENTITIES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStrategy {
    #[default]
    Distinctive,
    Random,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionSpec {
    #[serde(default)]
    pub strategy: SelectionStrategy,
    #[serde(default = "default_n")]
    pub n_identities: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_n() -> usize {
    DEFAULT_N_IDENTITIES
}

impl Default for SelectionSpec {
    fn default() -> Self {
        Self {
            strategy: SelectionStrategy::Distinctive,
            n_identities: DEFAULT_N_IDENTITIES,
            seed: 0,
        }
    }
}

impl SelectionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_identities < 2 {
            return Err(Error::spec(format!(
                "selection needs n_identities >= 2, got {}",
                self.n_identities
            )));
        }
        Ok(())
    }

    /// Key-sorted parameters for stage hashing. The seed only matters for
    /// the random strategy.
    pub fn canonical_params(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        let strategy = match self.strategy {
            SelectionStrategy::Distinctive => "distinctive",
            SelectionStrategy::Random => "random",
        };
        out.insert("strategy".into(), strategy.into());
        out.insert("n_identities".into(), self.n_identities.to_string());
        if self.strategy == SelectionStrategy::Random {
            out.insert("seed".into(), self.seed.to_string());
        }
        out
    }
}

/// Scores identities from precomputed embeddings: separation of the
/// identity centroid from its nearest neighbour centroid over the mean
/// pairwise distance within the identity.
pub fn scores_from_embeddings(embeddings: &BTreeMap<String, Vec<Vec<f64>>>) -> Result<BTreeMap<String, f64>> {
    if embeddings.len() < 2 {
        return Err(Error::Degenerate(format!(
            "distinctive scoring needs >= 2 identities, got {}",
            embeddings.len()
        )));
    }
    let centroids: BTreeMap<&String, Vec<f64>> = embeddings
        .iter()
        .map(|(id, vs)| {
            let mut c = vec![0.0; vs[0].len()];
            for v in vs {
                c.iter_mut().zip(v).for_each(|(a, b)| *a += b);
            }
            c.iter_mut().for_each(|a| *a /= vs.len() as f64);
            (id, c)
        })
        .collect();
    Ok(embeddings
        .par_iter()
        .map(|(id, vs)| {
            let mut total = 0.0;
            let mut pairs = 0usize;
            for i in 0..vs.len() {
                for j in i + 1..vs.len() {
                    total += euclidean(&vs[i], &vs[j]);
                    pairs += 1;
                }
            }
            let cohesion = if pairs == 0 { 0.0 } else { total / pairs as f64 };
            let separation = centroids
                .iter()
                .filter(|(other, _)| **other != id)
                .map(|(_, c)| euclidean(c, &centroids[id]))
                .fold(f64::INFINITY, f64::min);
            (id.clone(), separation / (cohesion + SCORE_EPSILON))
        })
        .collect())
}

pub fn distinctive_scores(e: &Embedder, ds: &Dataset) -> Result<BTreeMap<String, f64>> {
    let embedded = ds
        .points()
        .par_iter()
        .map(|p| embed(e, &p.image).map(|v| (p.identity.clone(), v)))
        .collect::<Result<Vec<_>>>()?;
    let mut grouped: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for (id, v) in embedded {
        grouped.entry(id).or_default().push(v);
    }
    scores_from_embeddings(&grouped)
}

/// Top `n` identities by descending score, ties to the smaller label.
pub fn top_by_score(scores: &BTreeMap<String, f64>, n: usize) -> Vec<String> {
    let mut ranked: Vec<(&String, f64)> = scores.iter().map(|(k, v)| (k, *v)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let mut out: Vec<String> = ranked.into_iter().take(n).map(|(k, _)| k.clone()).collect();
    out.sort();
    out
}

/// The sorted identity labels `spec` picks from `ds`.
pub fn selected_identities(spec: &SelectionSpec, e: &Embedder, ds: &Dataset) -> Result<Vec<String>> {
    spec.validate()?;
    let available = ds.n_identities();
    if available < spec.n_identities {
        return Err(Error::spec(format!(
            "cannot select {} identities from a dataset with {available}",
            spec.n_identities
        )));
    }
    Ok(match spec.strategy {
        SelectionStrategy::Distinctive => top_by_score(&distinctive_scores(e, ds)?, spec.n_identities),
        SelectionStrategy::Random => {
            let mut ids = ds.identities();
            ids.shuffle(&mut seed::rng(spec.seed, &["select_random"]));
            ids.truncate(spec.n_identities);
            ids.sort();
            ids
        }
    })
}

pub fn select_identities(spec: &SelectionSpec, e: &Embedder, ds: &Dataset) -> Result<Dataset> {
    let ids: BTreeSet<String> = selected_identities(spec, e, ds)?.into_iter().collect();
    ds.restrict_identities(&ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DataPoint;
    use crate::raster::ImageRaster;
    use proptest::prelude::*;

    fn fixture() -> BTreeMap<String, Vec<Vec<f64>>> {
        let mut m = BTreeMap::new();
        m.insert("A".into(), vec![vec![-10.0, 0.0], vec![-10.1, 0.1], vec![-9.9, -0.1]]);
        m.insert("B".into(), vec![vec![10.0, 0.0], vec![10.1, 0.1], vec![9.9, -0.1]]);
        m.insert("C".into(), vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![-1.0, 0.5]]);
        m.insert("D".into(), vec![vec![0.5, 0.5], vec![-0.5, 1.0], vec![0.0, -0.5]]);
        m
    }

    /// Direct restatement of the score formula.
    fn brute_scores(m: &BTreeMap<String, Vec<Vec<f64>>>) -> BTreeMap<String, f64> {
        let dist = |a: &[f64], b: &[f64]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        let mean = |vs: &[Vec<f64>]| {
            let n = vs.len() as f64;
            vec![
                vs.iter().map(|v| v[0]).sum::<f64>() / n,
                vs.iter().map(|v| v[1]).sum::<f64>() / n,
            ]
        };
        m.iter()
            .map(|(id, vs)| {
                let mut d = vec![];
                for i in 0..vs.len() {
                    for j in 0..i {
                        d.push(dist(&vs[i], &vs[j]));
                    }
                }
                let c = if d.is_empty() {
                    0.0
                } else {
                    d.iter().sum::<f64>() / d.len() as f64
                };
                let s = m
                    .iter()
                    .filter(|(o, _)| *o != id)
                    .map(|(_, ws)| dist(&mean(vs), &mean(ws)))
                    .fold(f64::INFINITY, f64::min);
                (id.clone(), s / (c + 1e-9))
            })
            .collect()
    }

    #[test]
    fn fixture_scores_match_brute_force_and_pick_far_pair() {
        let m = fixture();
        let got = scores_from_embeddings(&m).unwrap();
        for (id, s) in brute_scores(&m) {
            assert!((got[&id] - s).abs() <= 1e-9 * s.abs().max(1.0));
        }
        assert!(got["A"] > got["C"] && got["B"] > got["D"]);
        // Brute-force optimal pair: the two highest scores over all 6 pairs.
        let ids: Vec<&String> = got.keys().collect();
        let mut best = (f64::MIN, vec![]);
        for i in 0..ids.len() {
            for j in i + 1..ids.len() {
                let total = got[ids[i]].min(got[ids[j]]);
                if total > best.0 {
                    best = (total, vec![ids[i].clone(), ids[j].clone()]);
                }
            }
        }
        assert_eq!(top_by_score(&got, 2), best.1);
        assert_eq!(best.1, vec!["A".to_string(), "B".to_string()]);
    }

    #[test]
    fn singletons_score_distance_over_epsilon() {
        let mut m = BTreeMap::new();
        m.insert("p".to_string(), vec![vec![0.0, 0.0]]);
        m.insert("q".to_string(), vec![vec![3.0, 4.0]]);
        let s = scores_from_embeddings(&m).unwrap();
        assert_eq!(s["p"], 5.0 / 1e-9);
        assert_eq!(s["p"], s["q"]);
        assert_eq!(top_by_score(&s, 1), vec!["p".to_string()]);
        m.remove("q");
        assert!(scores_from_embeddings(&m).is_err());
    }

    proptest! {
        #[test]
        fn translation_invariant(dx in -50.0f64..50.0, dy in -50.0f64..50.0) {
            let m = fixture();
            let shifted: BTreeMap<String, Vec<Vec<f64>>> = m
                .iter()
                .map(|(k, vs)| (k.clone(), vs.iter().map(|v| vec![v[0] + dx, v[1] + dy]).collect()))
                .collect();
            let (a, b) = (scores_from_embeddings(&m).unwrap(), scores_from_embeddings(&shifted).unwrap());
            for (k, v) in a {
                prop_assert!((v - b[&k]).abs() <= 1e-6 * v.abs().max(1.0));
            }
        }

        #[test]
        fn selection_returns_complete_identities(n in 2usize..=6, seed in 0u64..50, random in any::<bool>()) {
            let ds = toy_dataset();
            let e = crate::recognize::fit_pca(&ds, 4).unwrap();
            let spec = SelectionSpec {
                strategy: if random { SelectionStrategy::Random } else { SelectionStrategy::Distinctive },
                n_identities: n,
                seed,
            };
            let out = select_identities(&spec, &e, &ds).unwrap();
            prop_assert_eq!(out.n_identities(), n);
            for p in out.points() {
                prop_assert_eq!(ds.get(&p.identity, &p.instance), Some(p));
            }
            for id in out.identities() {
                prop_assert_eq!(out.by_identity()[id.as_str()].len(), ds.by_identity()[id.as_str()].len());
            }
        }
    }

    fn toy_dataset() -> Dataset {
        let mut pts = vec![];
        for i in 0..6 {
            for s in 0..(2 + i % 3) {
                let px: Vec<f64> = (0..4).map(|j| (((i * 5 + j * 3 + s) % 7) as f64) / 7.0).collect();
                pts.push(DataPoint::new(
                    format!("id{i}"),
                    format!("s{s}"),
                    ImageRaster::new(2, 2, 1, px).unwrap(),
                ));
            }
        }
        Dataset::new(pts).unwrap()
    }

    #[test]
    fn select_all_and_random_determinism() {
        let ds = toy_dataset();
        let e = crate::recognize::fit_pca(&ds, 4).unwrap();
        let all = SelectionSpec {
            n_identities: 6,
            ..Default::default()
        };
        assert_eq!(select_identities(&all, &e, &ds).unwrap(), ds);
        let r = SelectionSpec {
            strategy: SelectionStrategy::Random,
            n_identities: 3,
            seed: 9,
        };
        assert_eq!(
            selected_identities(&r, &e, &ds).unwrap(),
            selected_identities(&r, &e, &ds).unwrap()
        );
        let too_many = SelectionSpec {
            n_identities: 7,
            ..Default::default()
        };
        assert!(select_identities(&too_many, &e, &ds).is_err());
        assert!(SelectionSpec {
            n_identities: 1,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
