//! End-to-end evaluation with per-stage caching.
//!
//! Stage order: split identities into attacker and evaluation sets,
//! anonymize both, select identities, optionally de-anonymize, split into
//! enroll/test, recognize, then measure privacy and utility. Every stage is
//! keyed by a [`StageDescriptor`] and served from the cache when possible.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::anonymize::{anonymize_dataset, fmt_num, AnonymizationSpec, AttackerSpec};
use crate::cache::{Cache, CachedArtifact, StageDescriptor, StageKind};
use crate::dataset::{
    disjoint_identity_lists, enroll_test_keys, generate_synthetic, load_dataset, save_dataset, BitDepth, Dataset,
    PointKey, SyntheticSpec,
};
use crate::deanonymize::{deanonymize_dataset, train_deanonymizer, DeanonymizationSpec, DeanonymizerModel};
use crate::error::{Error, Result};
use crate::metrics::{
    chance_level, curve_auc, privacy_score, utility_detail, worst_case_auc, TradeoffCurve, TradeoffPoint,
    UtilityMeasure, UtilityValue, Variant,
};
use crate::recognize::{
    best_attack_by, enroll, evaluate_closed_set, fit_pca, AccuracyMeasure, Classifier, Embedder, Gallery,
    RecognitionReport, DEFAULT_K, DEFAULT_N_COMPONENTS,
};
use crate::seed;
use crate::select::{selected_identities, SelectionSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic(SyntheticSpec),
    Path(PathBuf),
}

impl Default for DatasetSource {
    fn default() -> Self {
        Self::Synthetic(SyntheticSpec::default())
    }
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            Self::Synthetic(spec) => generate_synthetic(spec),
            Self::Path(p) => load_dataset(p),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantSelection {
    With,
    Without,
    #[default]
    Both,
}

impl VariantSelection {
    pub fn variants(self) -> &'static [Variant] {
        match self {
            Self::With => &[Variant::WithDeanon],
            Self::Without => &[Variant::WithoutDeanon],
            Self::Both => &Variant::ALL,
        }
    }
}

/// Which attacker-set embedder scores identities for selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionEmbedder {
    #[default]
    Anonymized,
    Clear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    pub attacker_fraction: f64,
    pub enroll_fraction: f64,
    pub anonymization: AnonymizationSpec,
    pub selection: SelectionSpec,
    pub deanonymization: DeanonymizationSpec,
    pub recognizers: Vec<Classifier>,
    pub n_components: usize,
    pub utility: UtilityMeasure,
    pub accuracy_measure: AccuracyMeasure,
    pub selection_embedder: SelectionEmbedder,
    pub seed: u64,
    pub variant: VariantSelection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::default(),
            attacker_fraction: 0.5,
            enroll_fraction: 0.5,
            anonymization: AnonymizationSpec::identity(),
            selection: SelectionSpec::default(),
            deanonymization: DeanonymizationSpec::default(),
            recognizers: vec![Classifier::NearestCentroid, Classifier::Knn { k: DEFAULT_K }],
            n_components: DEFAULT_N_COMPONENTS,
            utility: UtilityMeasure::Ssim,
            accuracy_measure: AccuracyMeasure::Accuracy,
            selection_embedder: SelectionEmbedder::Anonymized,
            seed: 0,
            variant: VariantSelection::Both,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::spec(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, f) in [
            ("attacker_fraction", self.attacker_fraction),
            ("enroll_fraction", self.enroll_fraction),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::spec(format!("{name} must lie in (0, 1), got {f}")));
            }
        }
        if let DatasetSource::Synthetic(s) = &self.dataset {
            s.validate()?;
        }
        self.anonymization.validate()?;
        self.selection.validate()?;
        self.deanonymization.validate()?;
        if self.recognizers.is_empty() {
            return Err(Error::spec("at least one recognizer is required"));
        }
        for r in &self.recognizers {
            r.validate()?;
        }
        if self.n_components == 0 {
            return Err(Error::spec("n_components must be >= 1"));
        }
        Ok(())
    }

    /// Applies dotted `key=value` overrides in order, validating once at
    /// the end. Keys must name existing settings; entries of a `params` map
    /// may be added. Values are parsed as JSON, falling back to a string.
    pub fn with_overrides<K: AsRef<str>, V: AsRef<str>>(&self, overrides: &[(K, V)]) -> Result<Self> {
        let mut tree = serde_json::to_value(self).map_err(|e| Error::Serialization(e.to_string()))?;
        for (key, raw) in overrides {
            let (key, raw) = (key.as_ref(), raw.as_ref());
            let unknown = || Error::spec(format!("unknown config key {key:?}"));
            let parts: Vec<&str> = key.split('.').collect();
            let (last, path) = parts.split_last().filter(|(l, _)| !l.is_empty()).ok_or_else(unknown)?;
            let mut node = &mut tree;
            for part in path {
                node = node.get_mut(*part).ok_or_else(unknown)?;
            }
            let parent_is_params = path.last() == Some(&"params");
            let obj = node.as_object_mut().ok_or_else(unknown)?;
            if !obj.contains_key(*last) && !parent_is_params {
                return Err(unknown());
            }
            let value = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.into()));
            obj.insert(last.to_string(), value);
        }
        let cfg: Self = serde_json::from_value(tree).map_err(|e| Error::spec(format!("override: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_override(&self, key: &str, raw: &str) -> Result<Self> {
        self.with_overrides(&[(key, raw)])
    }
}

/// A stage as recorded in a result's provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub kind: StageKind,
    pub key: String,
    pub inputs: Vec<String>,
    pub params: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub variant: Variant,
    pub best: RecognitionReport,
    pub reports: Vec<RecognitionReport>,
    pub point: TradeoffPoint,
    /// Mean SSIM of the probes the recognizer saw against their originals.
    pub probe_ssim: f64,
    /// Dataset fingerprints that fed PCA training, enrollment and probing.
    pub train_fingerprint: String,
    pub enroll_fingerprint: String,
    pub probe_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub method: String,
    pub param_label: String,
    pub dataset_fingerprint: String,
    pub selected_identities: Vec<String>,
    pub n_identities: usize,
    pub utility_measure: UtilityMeasure,
    pub accuracy_measure: AccuracyMeasure,
    pub utility: UtilityValue,
    pub variants: Vec<VariantResult>,
    pub provenance: Vec<StageRecord>,
    /// SHA-256 over the provenance stage keys.
    pub fingerprint: String,
}

impl RunResult {
    pub fn variant(&self, v: Variant) -> Option<&VariantResult> {
        self.variants.iter().find(|r| r.variant == v)
    }

    pub fn stages(&self, kind: StageKind) -> impl Iterator<Item = &StageRecord> {
        self.provenance.iter().filter(move |s| s.kind == kind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodAuc {
    pub method: String,
    pub auc_without_deanon: Option<f64>,
    pub auc_with_deanon: Option<f64>,
    /// Lower of the two variant AUCs; present when both ran.
    pub worst_case: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub runs: Vec<RunResult>,
    pub curves: Vec<TradeoffCurve>,
    pub aucs: Vec<MethodAuc>,
}

impl SweepResult {
    pub fn curve(&self, method: &str, variant: Variant) -> Option<&TradeoffCurve> {
        self.curves.iter().find(|c| c.method == method && c.variant == variant)
    }
}

fn params<const N: usize>(pairs: [(&str, String); N]) -> BTreeMap<String, String> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// Descriptor of the defender anonymizing its evaluation set.
pub fn defender_anonymize_descriptor(spec: &AnonymizationSpec, input_fingerprint: &str) -> StageDescriptor {
    let mut p = spec.canonical_params();
    p.insert("role".into(), "defender".into());
    StageDescriptor::new(StageKind::Anonymize, vec![input_fingerprint.into()], p)
}

/// Descriptor of the attacker anonymizing its own data with the
/// anonymization parameters it knows.
pub fn attacker_anonymize_descriptor(view: &AttackerSpec, input_fingerprint: &str) -> StageDescriptor {
    let mut p = view.canonical_params();
    p.insert("role".into(), "attacker".into());
    StageDescriptor::new(StageKind::Anonymize, vec![input_fingerprint.into()], p)
}

fn ser_err(e: impl std::fmt::Display) -> Error {
    Error::Serialization(e.to_string())
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let p = dir.join(name);
    fs::write(&p, bytes).map_err(|e| Error::io(p, e))
}

fn store_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    save_dataset(ds, dir, BitDepth::Sixteen)
}

fn load_cached_dataset(a: &CachedArtifact) -> Result<Dataset> {
    load_dataset(&a.dir)
}

fn store_bin<T: Serialize>(v: &T, dir: &Path) -> Result<()> {
    write_file(dir, "model.bin", &bincode::serialize(v).map_err(ser_err)?)
}

fn load_bin<T: DeserializeOwned>(a: &CachedArtifact) -> Result<T> {
    bincode::deserialize(&a.read("model.bin")?).map_err(ser_err)
}

fn store_json<T: Serialize>(v: &T, dir: &Path) -> Result<()> {
    write_file(dir, "value.json", &serde_json::to_vec(v).map_err(ser_err)?)
}

fn load_json<T: DeserializeOwned>(a: &CachedArtifact) -> Result<T> {
    serde_json::from_slice(&a.read("value.json")?).map_err(ser_err)
}

fn store_lines(lists: &[(&str, &[String])], dir: &Path) -> Result<()> {
    for (name, items) in lists {
        let mut text = items.join("\n");
        text.push('\n');
        write_file(dir, name, text.as_bytes())?;
    }
    Ok(())
}

fn load_lines(a: &CachedArtifact, name: &str) -> Result<Vec<String>> {
    let bytes = a.read(name)?;
    let text = String::from_utf8(bytes).map_err(ser_err)?;
    Ok(text.lines().filter(|l| !l.is_empty()).map(String::from).collect())
}

/// Runs pipelines against one cache and counts executed (non-cached) stages.
#[derive(Debug)]
pub struct Pipeline {
    cache: Cache,
    executed: AtomicUsize,
}

struct RunCtx<'a> {
    pipeline: &'a Pipeline,
    provenance: Vec<StageRecord>,
}

impl RunCtx<'_> {
    /// Serves `desc` from the cache or computes and stores it.
    fn stage<T>(
        &mut self,
        desc: StageDescriptor,
        load: impl Fn(&CachedArtifact) -> Result<T>,
        store: impl Fn(&T, &Path) -> Result<()>,
        compute: impl FnOnce() -> Result<T>,
    ) -> Result<(String, T)> {
        let key = desc.key();
        let wrap = |e: Error| Error::Stage {
            kind: desc.kind.name().into(),
            key: key.clone(),
            source: Box::new(e),
        };
        if !self.provenance.iter().any(|r| r.key == key) {
            self.provenance.push(StageRecord {
                kind: desc.kind,
                key: key.clone(),
                inputs: desc.inputs.clone(),
                params: desc.params.clone(),
            });
        }
        let cache = &self.pipeline.cache;
        if let Some(art) = cache.get(desc.kind, &key).map_err(wrap)? {
            match load(&art) {
                Ok(v) => return Ok((key, v)),
                // Intact bytes that no longer decode: treat like corruption.
                Err(_) => {
                    cache.quarantine(desc.kind, &key).map_err(wrap)?;
                }
            }
        }
        let value = compute().map_err(wrap)?;
        self.pipeline.executed.fetch_add(1, Ordering::SeqCst);
        cache.put_with(&desc, |dir| store(&value, dir)).map_err(wrap)?;
        Ok((key, value))
    }

    fn dataset_stage(&mut self, desc: StageDescriptor, compute: impl FnOnce() -> Result<Dataset>) -> Result<Dataset> {
        self.stage(desc, load_cached_dataset, store_dataset, || {
            compute().map(|d| d.quantized16())
        })
        .map(|(_, d)| d)
    }

    fn embed_train(&mut self, train: &Dataset, regime: &str, n_components: usize) -> Result<(String, Embedder)> {
        let desc = StageDescriptor::new(
            StageKind::EmbedTrain,
            vec![train.fingerprint().into()],
            params([("n_components", n_components.to_string()), ("regime", regime.into())]),
        );
        self.stage(desc, load_bin, store_bin, || fit_pca(train, n_components))
    }

    fn utility(
        &mut self,
        shared: &Dataset,
        original: &Dataset,
        measure: UtilityMeasure,
        role: &str,
    ) -> Result<UtilityValue> {
        let desc = StageDescriptor::new(
            StageKind::Utility,
            vec![shared.fingerprint().into(), original.fingerprint().into()],
            params([("measure", measure.name().into()), ("role", role.into())]),
        );
        self.stage(desc, load_json, store_json, || {
            utility_detail(shared, original, measure)
        })
        .map(|(_, v)| v)
    }

    /// Enrolls and evaluates every configured recognizer.
    fn recognize(
        &mut self,
        cfg: &RunConfig,
        variant: Variant,
        embedder: &(String, Embedder),
        enroll_set: &Dataset,
        probes: &Dataset,
    ) -> Result<Vec<RecognitionReport>> {
        let (emb_key, emb) = embedder;
        let desc = StageDescriptor::new(
            StageKind::Enroll,
            vec![emb_key.clone(), enroll_set.fingerprint().into()],
            params([("variant", variant.name().into())]),
        );
        let (gallery_key, gallery): (String, Gallery) =
            self.stage(desc, load_bin, store_bin, || enroll(emb, enroll_set))?;
        let mut reports = Vec::new();
        for classifier in &cfg.recognizers {
            let desc = StageDescriptor::new(
                StageKind::Evaluate,
                vec![emb_key.clone(), gallery_key.clone(), probes.fingerprint().into()],
                params([("classifier", classifier.id()), ("variant", variant.name().into())]),
            );
            let (_, r) = self.stage(desc, load_json, store_json, || {
                evaluate_closed_set(emb, &gallery, *classifier, probes)
            })?;
            reports.push(r);
        }
        Ok(reports)
    }
}

impl Pipeline {
    pub fn new(cache: Cache) -> Self {
        Self {
            cache,
            executed: AtomicUsize::new(0),
        }
    }

    pub fn cache(&self) -> &Cache {
        &self.cache
    }

    /// Stages computed (not served from cache) since creation or the last reset.
    pub fn stage_executions(&self) -> usize {
        self.executed.load(Ordering::SeqCst)
    }

    pub fn reset_counter(&self) {
        self.executed.store(0, Ordering::SeqCst);
    }

    pub fn run(&self, cfg: &RunConfig) -> Result<RunResult> {
        cfg.validate()?;
        let master = cfg.dataset.load()?;
        self.run_on(cfg, &master)
    }

    /// Like [`Pipeline::run`] with the source dataset already loaded.
    pub fn run_on(&self, cfg: &RunConfig, master: &Dataset) -> Result<RunResult> {
        cfg.validate()?;
        let mut ctx = RunCtx {
            pipeline: self,
            provenance: Vec::new(),
        };
        let s = cfg.seed;

        // Identity-disjoint attacker / evaluation split.
        let split_seed = seed::derive(s, &["split"]);
        let desc = StageDescriptor::new(
            StageKind::Split,
            vec![master.fingerprint().into()],
            params([
                ("attacker_fraction", fmt_num(cfg.attacker_fraction)),
                ("role", "attacker_evaluation".into()),
                ("seed", split_seed.to_string()),
            ]),
        );
        let (_, (attacker_ids, eval_ids)) = ctx.stage(
            desc,
            |a| Ok((load_lines(a, "attacker.txt")?, load_lines(a, "evaluation.txt")?)),
            |(a, e): &(Vec<String>, Vec<String>), dir| store_lines(&[("attacker.txt", a), ("evaluation.txt", e)], dir),
            || disjoint_identity_lists(master, cfg.attacker_fraction, split_seed),
        )?;
        let attacker_clear = master.restrict_identities(&attacker_ids.into_iter().collect())?;
        let eval_clear = master.restrict_identities(&eval_ids.into_iter().collect())?;

        // Both sides anonymize with the same parameters; the attacker never
        // holds the defender's secret key.
        let defender = &cfg.anonymization;
        let view = defender.attacker_view(seed::derive(s, &["attacker_key"]));
        let anon_eval = ctx.dataset_stage(
            defender_anonymize_descriptor(defender, eval_clear.fingerprint()),
            || anonymize_dataset(defender, &eval_clear),
        )?;
        let anon_attacker = ctx.dataset_stage(
            attacker_anonymize_descriptor(&view, attacker_clear.fingerprint()),
            || anonymize_dataset(view.spec(), &attacker_clear),
        )?;

        // Identity selection on the anonymized evaluation set.
        let anon_embedder = ctx.embed_train(&anon_attacker, "anonymized", cfg.n_components)?;
        let (sel_key, sel_embedder) = match cfg.selection_embedder {
            SelectionEmbedder::Anonymized => anon_embedder.clone(),
            SelectionEmbedder::Clear => ctx.embed_train(&attacker_clear, "clear", cfg.n_components)?,
        };
        let selection = SelectionSpec {
            seed: seed::derive(s, &["select", &cfg.selection.seed.to_string()]),
            ..cfg.selection.clone()
        };
        let desc = StageDescriptor::new(
            StageKind::Select,
            vec![anon_eval.fingerprint().into(), sel_key],
            selection.canonical_params(),
        );
        let (_, selected) = ctx.stage(
            desc,
            |a| load_lines(a, "identities.txt"),
            |ids: &Vec<String>, dir| store_lines(&[("identities.txt", ids)], dir),
            || selected_identities(&selection, &sel_embedder, &anon_eval),
        )?;
        let selected_set: BTreeSet<String> = selected.iter().cloned().collect();
        let anon_sel = anon_eval.restrict_identities(&selected_set)?;
        let clear_sel = eval_clear.restrict_identities(&selected_set)?;

        // Enroll / test split, shared by both variants.
        let enroll_seed = seed::derive(s, &["enroll_split"]);
        let desc = StageDescriptor::new(
            StageKind::Split,
            vec![clear_sel.fingerprint().into()],
            params([
                ("enroll_fraction", fmt_num(cfg.enroll_fraction)),
                ("role", "enroll_test".into()),
                ("seed", enroll_seed.to_string()),
            ]),
        );
        type KeySplit = (Vec<PointKey>, Vec<PointKey>);
        let (_, (enroll_keys, test_keys)): (String, KeySplit) = ctx.stage(desc, load_json, store_json, || {
            let (e, t) = enroll_test_keys(&clear_sel, cfg.enroll_fraction, enroll_seed)?;
            Ok((e.into_iter().collect(), t.into_iter().collect()))
        })?;
        let enroll_keys: BTreeSet<PointKey> = enroll_keys.into_iter().collect();
        let test_keys: BTreeSet<PointKey> = test_keys.into_iter().collect();
        let clear_enroll = clear_sel.restrict_keys(&enroll_keys)?;
        let clear_test = clear_sel.restrict_keys(&test_keys)?;

        // Utility of what the defender shares.
        let utility = ctx.utility(&anon_sel, &clear_sel, cfg.utility, "shared")?;

        let n = selected.len();
        let mut variants = Vec::new();
        for &variant in cfg.variant.variants() {
            let (embedder, enroll_set, probes) = match variant {
                Variant::WithoutDeanon => (
                    anon_embedder.clone(),
                    anon_sel.restrict_keys(&enroll_keys)?,
                    anon_sel.restrict_keys(&test_keys)?,
                ),
                Variant::WithDeanon => {
                    let mut p = cfg.deanonymization.canonical_params();
                    for (k, v) in view.canonical_params() {
                        p.insert(format!("known.{k}"), v);
                    }
                    let train_seed = seed::derive(s, &["deanonymize"]);
                    p.insert("seed".into(), train_seed.to_string());
                    let desc = StageDescriptor::new(
                        StageKind::DeanonymizeTrain,
                        vec![attacker_clear.fingerprint().into(), anon_attacker.fingerprint().into()],
                        p,
                    );
                    let (model_key, model): (String, DeanonymizerModel) =
                        ctx.stage(desc, load_bin, store_bin, || {
                            train_deanonymizer(
                                &cfg.deanonymization,
                                Some(view.spec()),
                                &attacker_clear,
                                &anon_attacker,
                                train_seed,
                            )
                        })?;
                    let desc = StageDescriptor::new(
                        StageKind::DeanonymizeApply,
                        vec![model_key, anon_sel.fingerprint().into()],
                        BTreeMap::new(),
                    );
                    let deanon_sel = ctx.dataset_stage(desc, || deanonymize_dataset(&model, &anon_sel))?;
                    let embedder = ctx.embed_train(&clear_enroll, "clear", cfg.n_components)?;
                    (embedder, clear_enroll.clone(), deanon_sel.restrict_keys(&test_keys)?)
                }
            };
            let reports = ctx.recognize(cfg, variant, &embedder, &enroll_set, &probes)?;
            let probe_ssim = ctx.utility(&probes, &clear_test, UtilityMeasure::Ssim, "probe")?.raw;
            let best = best_attack_by(&reports, cfg.accuracy_measure)?;
            let point = TradeoffPoint {
                method: defender.method.name().into(),
                param_label: defender.label(),
                variant,
                raw_accuracy: best.accuracy,
                balanced_accuracy: best.balanced_accuracy,
                privacy: privacy_score(best.score(cfg.accuracy_measure), n),
                raw_utility: utility.raw,
                utility: utility.utility,
            };
            let train_fingerprint = match variant {
                Variant::WithoutDeanon => anon_attacker.fingerprint().to_string(),
                Variant::WithDeanon => clear_enroll.fingerprint().to_string(),
            };
            variants.push(VariantResult {
                variant,
                best,
                reports,
                point,
                probe_ssim,
                train_fingerprint,
                enroll_fingerprint: enroll_set.fingerprint().into(),
                probe_fingerprint: probes.fingerprint().into(),
            });
        }

        let mut h = Sha256::new();
        for r in &ctx.provenance {
            h.update(r.key.as_bytes());
            h.update(b"\n");
        }
        Ok(RunResult {
            method: defender.method.name().into(),
            param_label: defender.label(),
            dataset_fingerprint: master.fingerprint().into(),
            selected_identities: selected,
            n_identities: n,
            utility_measure: cfg.utility,
            accuracy_measure: cfg.accuracy_measure,
            utility,
            variants,
            provenance: ctx.provenance,
            fingerprint: hex::encode(h.finalize()),
        })
    }

    /// Runs every anonymization in `grid` on top of `base` and assembles one
    /// trade-off curve per (method, variant).
    pub fn sweep(&self, base: &RunConfig, grid: &[AnonymizationSpec]) -> Result<SweepResult> {
        if grid.is_empty() {
            return Err(Error::spec("a sweep needs at least one anonymization spec"));
        }
        base.validate()?;
        let master = base.dataset.load()?;
        let runs = grid
            .par_iter()
            .map(|spec| {
                let cfg = RunConfig {
                    anonymization: spec.clone(),
                    ..base.clone()
                };
                self.run_on(&cfg, &master)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut grouped: BTreeMap<(String, Variant), (Vec<TradeoffPoint>, usize)> = BTreeMap::new();
        for run in &runs {
            for v in &run.variants {
                let e = grouped
                    .entry((run.method.clone(), v.variant))
                    .or_insert((Vec::new(), run.n_identities));
                e.0.push(v.point.clone());
            }
        }
        let mut curves = Vec::new();
        for ((method, variant), (points, n)) in grouped {
            // Unmodified data has utility 1 under both measures.
            curves.push(TradeoffCurve::new(method, variant, points, chance_level(n), 1.0)?);
        }
        let methods: BTreeSet<&str> = curves.iter().map(|c| c.method.as_str()).collect();
        let aucs = methods
            .into_iter()
            .map(|m| {
                let auc = |v| {
                    curves
                        .iter()
                        .find(|c| c.method == m && c.variant == v)
                        .map(|c| curve_auc(&c.points))
                        .transpose()
                };
                let (without, with) = (auc(Variant::WithoutDeanon)?, auc(Variant::WithDeanon)?);
                Ok(MethodAuc {
                    method: m.into(),
                    auc_without_deanon: without,
                    auc_with_deanon: with,
                    worst_case: without.zip(with).map(|(a, b)| worst_case_auc(a, b)),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SweepResult { runs, curves, aucs })
    }
}

/// Reads a sweep grid: a JSON array of anonymization specs.
pub fn parse_grid(text: &str) -> Result<Vec<AnonymizationSpec>> {
    let grid: Vec<AnonymizationSpec> = serde_json::from_str(text).map_err(|e| Error::spec(format!("grid: {e}")))?;
    if grid.is_empty() {
        return Err(Error::spec("grid is empty"));
    }
    for g in &grid {
        g.validate()?;
    }
    Ok(grid)
}
