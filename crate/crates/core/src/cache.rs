//! Content-addressed artifact store.
//!
//! Layout: `<root>/<kind>/<key>/` holds the artifact files plus a
//! `manifest.json`. Writers fill a `.tmp-*` sibling and rename it into place,
//! so readers never observe a partial artifact. Artifacts whose contents no
//! longer match the manifest hash are moved under `<root>/quarantine/`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";
pub const QUARANTINE: &str = "quarantine";
const TMP_PREFIX: &str = ".tmp-";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Split,
    Anonymize,
    Select,
    DeanonymizeTrain,
    DeanonymizeApply,
    EmbedTrain,
    Enroll,
    Evaluate,
    Utility,
}

impl StageKind {
    pub const ALL: [StageKind; 9] = [
        Self::Split,
        Self::Anonymize,
        Self::Select,
        Self::DeanonymizeTrain,
        Self::DeanonymizeApply,
        Self::EmbedTrain,
        Self::Enroll,
        Self::Evaluate,
        Self::Utility,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Split => "split",
            Self::Anonymize => "anonymize",
            Self::Select => "select",
            Self::DeanonymizeTrain => "deanonymize_train",
            Self::DeanonymizeApply => "deanonymize_apply",
            Self::EmbedTrain => "embed_train",
            Self::Enroll => "enroll",
            Self::Evaluate => "evaluate",
            Self::Utility => "utility",
        }
    }
}

impl std::fmt::Display for StageKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Canonical description of one stage: what it does, to what.
///
/// `inputs` are dataset fingerprints or upstream stage keys, in the order
/// the stage consumes them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageDescriptor {
    pub kind: StageKind,
    pub inputs: Vec<String>,
    pub params: BTreeMap<String, String>,
}

impl StageDescriptor {
    pub fn new(kind: StageKind, inputs: Vec<String>, params: BTreeMap<String, String>) -> Self {
        Self { kind, inputs, params }
    }

    /// Compact JSON with sorted parameter keys.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("descriptor serializes")
    }

    pub fn key(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}

pub fn is_valid_key(key: &str) -> bool {
    key.len() == 64 && key.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: StageKind,
    pub key: String,
    pub inputs: Vec<String>,
    pub params: BTreeMap<String, String>,
    /// File name → byte length.
    pub files: BTreeMap<String, u64>,
    pub content_hash: String,
}

/// A verified artifact directory.
#[derive(Debug, Clone)]
pub struct CachedArtifact {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl CachedArtifact {
    pub fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    pub fn read(&self, file: &str) -> Result<Vec<u8>> {
        let p = self.path(file);
        fs::read(&p).map_err(|e| Error::io(p, e))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindStats {
    pub artifacts: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub kinds: BTreeMap<String, KindStats>,
    pub quarantined: u64,
}

impl CacheStats {
    pub fn total_artifacts(&self) -> u64 {
        self.kinds.values().map(|k| k.artifacts).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VerifyReport {
    pub checked: u64,
    /// `(kind, key)` of every artifact moved to quarantine.
    pub quarantined: Vec<(String, String)>,
}

#[derive(Debug)]
pub struct Cache {
    root: PathBuf,
}

static UNIQUE: AtomicU64 = AtomicU64::new(0);

fn unique_suffix() -> String {
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_nanos())
        .unwrap_or(0);
    format!(
        "{}-{}-{}",
        std::process::id(),
        nanos,
        UNIQUE.fetch_add(1, Ordering::Relaxed)
    )
}

/// Hash over the sorted `(name, bytes)` of every regular file except the
/// manifest.
fn hash_dir(dir: &Path) -> Result<(BTreeMap<String, u64>, String)> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name != MANIFEST {
            names.push(name);
        }
    }
    names.sort();
    let mut h = Sha256::new();
    let mut files = BTreeMap::new();
    for name in names {
        let p = dir.join(&name);
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
        files.insert(name, bytes.len() as u64);
    }
    Ok((files, hex::encode(h.finalize())))
}

impl Cache {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn artifact_dir(&self, kind: StageKind, key: &str) -> PathBuf {
        self.root.join(kind.name()).join(key)
    }

    /// Looks up an artifact, verifying its content hash. A corrupt artifact
    /// is quarantined and reported as a miss.
    pub fn get(&self, kind: StageKind, key: &str) -> Result<Option<CachedArtifact>> {
        if !is_valid_key(key) {
            return Err(Error::spec(format!("cache key must be 64 hex characters, got {key:?}")));
        }
        let dir = self.artifact_dir(kind, key);
        if !dir.is_dir() {
            return Ok(None);
        }
        match self.check(&dir, kind, key)? {
            Some(manifest) => Ok(Some(CachedArtifact { dir, manifest })),
            None => {
                self.quarantine(kind, key)?;
                Ok(None)
            }
        }
    }

    /// The manifest if `dir` is intact, `None` if anything disagrees.
    fn check(&self, dir: &Path, kind: StageKind, key: &str) -> Result<Option<Manifest>> {
        let Ok(text) = fs::read(dir.join(MANIFEST)) else {
            return Ok(None);
        };
        let Ok(manifest) = serde_json::from_slice::<Manifest>(&text) else {
            return Ok(None);
        };
        if manifest.kind != kind || manifest.key != key {
            return Ok(None);
        }
        let (files, hash) = hash_dir(dir)?;
        Ok((files == manifest.files && hash == manifest.content_hash).then_some(manifest))
    }

    /// Moves an artifact out of the lookup path.
    pub fn quarantine(&self, kind: StageKind, key: &str) -> Result<PathBuf> {
        let qdir = self.root.join(QUARANTINE).join(kind.name());
        fs::create_dir_all(&qdir).map_err(|e| Error::io(&qdir, e))?;
        let target = qdir.join(format!("{key}-{}", unique_suffix()));
        let src = self.artifact_dir(kind, key);
        fs::rename(&src, &target).map_err(|e| Error::io(&src, e))?;
        Ok(target)
    }

    /// Writes an artifact atomically. `fill` populates a fresh directory;
    /// the manifest is added afterwards. If another writer has already
    /// published the key, its artifact is kept.
    pub fn put_with(&self, desc: &StageDescriptor, fill: impl FnOnce(&Path) -> Result<()>) -> Result<CachedArtifact> {
        let key = desc.key();
        let kind_dir = self.root.join(desc.kind.name());
        fs::create_dir_all(&kind_dir).map_err(|e| Error::io(&kind_dir, e))?;
        let tmp = kind_dir.join(format!("{TMP_PREFIX}{key}-{}", unique_suffix()));
        fs::create_dir(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let result = (|| {
            fill(&tmp)?;
            let (files, content_hash) = hash_dir(&tmp)?;
            let manifest = Manifest {
                kind: desc.kind,
                key: key.clone(),
                inputs: desc.inputs.clone(),
                params: desc.params.clone(),
                files,
                content_hash,
            };
            let text = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Serialization(e.to_string()))?;
            let mpath = tmp.join(MANIFEST);
            fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))?;
            Ok(manifest)
        })();
        let manifest = match result {
            Ok(m) => m,
            Err(e) => {
                let _ = fs::remove_dir_all(&tmp);
                return Err(e);
            }
        };
        let dest = self.artifact_dir(desc.kind, &key);
        if fs::rename(&tmp, &dest).is_err() {
            // Either a concurrent writer won, or a corrupt artifact is in the
            // way; `get` quarantines the latter.
            if let Some(existing) = self.get(desc.kind, &key)? {
                let _ = fs::remove_dir_all(&tmp);
                return Ok(existing);
            }
            if let Err(e) = fs::rename(&tmp, &dest) {
                let _ = fs::remove_dir_all(&tmp);
                return Err(Error::io(&dest, e));
            }
        }
        Ok(CachedArtifact { dir: dest, manifest })
    }

    /// Convenience wrapper for artifacts given as in-memory files.
    pub fn put(&self, desc: &StageDescriptor, files: &[(&str, &[u8])]) -> Result<CachedArtifact> {
        self.put_with(desc, |dir| {
            for (name, bytes) in files {
                let p = dir.join(name);
                fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
            }
            Ok(())
        })
    }

    /// `(kind, key, dir)` of every published artifact, sorted.
    fn artifacts(&self) -> Result<Vec<(StageKind, String, PathBuf)>> {
        let mut out = Vec::new();
        for kind in StageKind::ALL {
            let kd = self.root.join(kind.name());
            if !kd.is_dir() {
                continue;
            }
            for entry in fs::read_dir(&kd).map_err(|e| Error::io(&kd, e))? {
                let entry = entry.map_err(|e| Error::io(&kd, e))?;
                let name = entry.file_name().to_string_lossy().into_owned();
                if is_valid_key(&name) && entry.path().is_dir() {
                    out.push((kind, name, entry.path()));
                }
            }
        }
        out.sort_by(|a, b| (a.0, &a.1).cmp(&(b.0, &b.1)));
        Ok(out)
    }

    pub fn stats(&self) -> Result<CacheStats> {
        let mut stats = CacheStats::default();
        for kind in StageKind::ALL {
            stats.kinds.insert(kind.name().into(), KindStats::default());
        }
        for (kind, _, dir) in self.artifacts()? {
            let entry = stats.kinds.get_mut(kind.name()).expect("all kinds present");
            entry.artifacts += 1;
            for f in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
                let f = f.map_err(|e| Error::io(&dir, e))?;
                entry.bytes += f.metadata().map_err(|e| Error::io(f.path(), e))?.len();
            }
        }
        let q = self.root.join(QUARANTINE);
        if q.is_dir() {
            for kd in fs::read_dir(&q).map_err(|e| Error::io(&q, e))? {
                let kd = kd.map_err(|e| Error::io(&q, e))?.path();
                if kd.is_dir() {
                    stats.quarantined += fs::read_dir(&kd).map_err(|e| Error::io(&kd, e))?.count() as u64;
                }
            }
        }
        Ok(stats)
    }

    /// Removes everything below the root.
    pub fn clear(&self) -> Result<()> {
        for entry in fs::read_dir(&self.root).map_err(|e| Error::io(&self.root, e))? {
            let p = entry.map_err(|e| Error::io(&self.root, e))?.path();
            let res = if p.is_dir() {
                fs::remove_dir_all(&p)
            } else {
                fs::remove_file(&p)
            };
            res.map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }

    /// Re-hashes every artifact and quarantines mismatches. Leftover
    /// temporary directories from interrupted writes are removed.
    pub fn verify(&self) -> Result<VerifyReport> {
        let mut report = VerifyReport::default();
        for (kind, key, dir) in self.artifacts()? {
            report.checked += 1;
            if self.check(&dir, kind, &key)?.is_none() {
                self.quarantine(kind, &key)?;
                report.quarantined.push((kind.name().into(), key));
            }
        }
        for kind in StageKind::ALL {
            let kd = self.root.join(kind.name());
            if !kd.is_dir() {
                continue;
            }
            for entry in fs::read_dir(&kd).map_err(|e| Error::io(&kd, e))? {
                let entry = entry.map_err(|e| Error::io(&kd, e))?;
                if entry.file_name().to_string_lossy().starts_with(TMP_PREFIX) {
                    let _ = fs::remove_dir_all(entry.path());
                }
            }
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desc(tag: &str) -> StageDescriptor {
        let mut params = BTreeMap::new();
        params.insert("tag".to_string(), tag.to_string());
        StageDescriptor::new(StageKind::Enroll, vec!["in".into()], params)
    }

    #[test]
    fn key_is_canonical_sha256() {
        let d = desc("x");
        assert!(is_valid_key(&d.key()));
        assert_eq!(
            d.canonical(),
            r#"{"kind":"enroll","inputs":["in"],"params":{"tag":"x"}}"#
        );
        let expect = hex::encode(Sha256::digest(d.canonical().as_bytes()));
        assert_eq!(d.key(), expect);
        assert_ne!(desc("y").key(), d.key());
        // Insertion order of params is irrelevant.
        let mut a = BTreeMap::new();
        a.insert("b".to_string(), "1".to_string());
        a.insert("a".to_string(), "2".to_string());
        let mut b = BTreeMap::new();
        b.insert("a".to_string(), "2".to_string());
        b.insert("b".to_string(), "1".to_string());
        assert_eq!(
            StageDescriptor::new(StageKind::Split, vec![], a).key(),
            StageDescriptor::new(StageKind::Split, vec![], b).key()
        );
    }

    #[test]
    fn put_get_roundtrip_and_miss() {
        let tmp = tempfile::tempdir().unwrap();
        let cache = Cache::open(tmp.path()).unwrap();
        let d = desc("x");
        assert!(cache.get(d.kind, &d.key()).unwrap().is_none());
        cache.put(&d, &[("a.bin", b"hello"), ("b.txt", b"world")]).unwrap();
        let got = cache.get(d.kind, &d.key()).unwrap().unwrap();
        assert_eq!(got.read("a.bin").unwrap(), b"hello");
        assert_eq!(got.manifest.inputs, vec!["in".to_string()]);
        assert_eq!(got.manifest.files.len(), 2);
        // Republishing the same key keeps the first artifact.
        cache.put(&d, &[("a.bin", b"hello"), ("b.txt", b"world")]).unwrap();
        assert_eq!(cache.stats().unwrap().total_artifacts(), 1);
        assert!(cache.get(d.kind, "nothex").is_err());
    }

    #[test]
    fn interrupted_write_is_a_clean_miss() {
        let tmp = tempfile::tempdir().unwrap();
        let cache = Cache::open(tmp.path()).unwrap();
        let d = desc("x");
        let err = cache.put_with(&d, |dir| {
            fs::write(dir.join("half"), b"par").unwrap();
            Err(Error::spec("interrupted"))
        });
        assert!(err.is_err());
        assert!(cache.get(d.kind, &d.key()).unwrap().is_none());
        // A crash would leave the temp dir behind; simulate that too.
        let stale = tmp.path().join("enroll").join(format!("{TMP_PREFIX}{}-dead", d.key()));
        fs::create_dir_all(&stale).unwrap();
        fs::write(stale.join("half"), b"par").unwrap();
        assert!(cache.get(d.kind, &d.key()).unwrap().is_none());
        assert_eq!(cache.stats().unwrap().total_artifacts(), 0);
        cache.verify().unwrap();
        assert!(!stale.exists());
    }

    #[test]
    fn corruption_is_quarantined() {
        let tmp = tempfile::tempdir().unwrap();
        let cache = Cache::open(tmp.path()).unwrap();
        let (d1, d2) = (desc("x"), desc("y"));
        let a = cache.put(&d1, &[("a.bin", b"hello")]).unwrap();
        cache.put(&d2, &[("a.bin", b"other")]).unwrap();
        let mut bytes = fs::read(a.path("a.bin")).unwrap();
        bytes[0] ^= 0xff;
        fs::write(a.path("a.bin"), bytes).unwrap();
        let report = cache.verify().unwrap();
        assert_eq!(report.checked, 2);
        assert_eq!(report.quarantined, vec![("enroll".to_string(), d1.key())]);
        let stats = cache.stats().unwrap();
        assert_eq!((stats.total_artifacts(), stats.quarantined), (1, 1));
        assert!(cache.get(d1.kind, &d1.key()).unwrap().is_none());

        // Detected lazily on get as well.
        let c = cache.put(&d1, &[("a.bin", b"hello")]).unwrap();
        fs::write(c.path("extra"), b"!").unwrap();
        assert!(cache.get(d1.kind, &d1.key()).unwrap().is_none());
        assert_eq!(cache.stats().unwrap().quarantined, 2);
    }

    #[test]
    fn clear_empties_everything() {
        let tmp = tempfile::tempdir().unwrap();
        let cache = Cache::open(tmp.path()).unwrap();
        assert_eq!(cache.stats().unwrap().total_artifacts(), 0);
        cache.put(&desc("x"), &[("a", b"1")]).unwrap();
        cache.clear().unwrap();
        let s = cache.stats().unwrap();
        assert_eq!((s.total_artifacts(), s.quarantined), (0, 0));
        assert!(s.kinds.values().all(|k| k.bytes == 0));
    }
}
