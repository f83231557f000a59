//! Items, features, outfits and evaluation questions, plus their on-disk
//! formats.
//!
//! A dataset is described by a JSON manifest:
//!
//! ```json
//! {
//!   "features": "features.bin",
//!   "outfits": "outfits.jsonl",
//!   "fitb": "fitb.jsonl",
//!   "compat": "compat.jsonl",
//!   "types": ["tops", "bottoms", "shoes"],
//!   "dim": 16
//! }
//! ```
//!
//! Paths are relative to the manifest's directory. `fitb`, `compat` and `dim`
//! are optional; when `dim` is given it must match the feature file.
//!
//! Feature files ending in `.jsonl` hold one `{"id", "type", "features"}`
//! record per line. Anything else is read as the binary layout, all integers
//! little-endian:
//!
//! ```text
//! magic     8 bytes  "SATFEAT\0"
//! version   u32      1
//! dim       u32
//! count     u64
//! id table  count × (u32 id_len, id bytes, u32 type_len, type bytes)
//! rows      count × dim × f64, row-major, in id-table order
//! ```
//!
//! Outfits, FITB and compatibility questions are JSON lines
//! (see [`Outfit`], [`FitbQuestion`], [`CompatQuestion`]).

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Vector;

pub const FEATURE_MAGIC: &[u8; 8] = b"SATFEAT\0";
pub const FEATURE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ItemId(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ItemType(pub String);

macro_rules! string_newtype {
    ($t:ty) => {
        impl $t {
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $t {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }

        impl From<String> for $t {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

string_newtype!(ItemId);
string_newtype!(ItemType);

/// Item id → (type, general feature vector), all of one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    dim: usize,
    ids: Vec<ItemId>,
    types: Vec<ItemType>,
    rows: Vec<f64>,
    index: HashMap<ItemId, usize>,
}

impl FeatureStore {
    pub fn new(dim: usize) -> Self {
        Self { dim, ids: Vec::new(), types: Vec::new(), rows: Vec::new(), index: HashMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn insert(&mut self, id: ItemId, ty: ItemType, features: Vector) -> Result<usize> {
        if features.len() != self.dim {
            return Err(Error::InvalidInput(format!(
                "item {id} has {} features, store dimension is {}",
                features.len(),
                self.dim
            )));
        }
        if self.index.contains_key(&id) {
            return Err(Error::InvalidInput(format!("duplicate item id {id}")));
        }
        let idx = self.ids.len();
        self.index.insert(id.clone(), idx);
        self.ids.push(id);
        self.types.push(ty);
        self.rows.extend_from_slice(features.as_slice());
        Ok(idx)
    }

    pub fn index_of(&self, id: &ItemId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn contains(&self, id: &ItemId) -> bool {
        self.index.contains_key(id)
    }

    pub fn get(&self, id: &ItemId) -> Option<&[f64]> {
        self.index_of(id).map(|i| self.row(i))
    }

    pub fn item_type(&self, id: &ItemId) -> Option<&ItemType> {
        self.index_of(id).map(|i| &self.types[i])
    }

    pub fn row(&self, idx: usize) -> &[f64] {
        &self.rows[idx * self.dim..(idx + 1) * self.dim]
    }

    pub fn id_at(&self, idx: usize) -> &ItemId {
        &self.ids[idx]
    }

    pub fn type_at(&self, idx: usize) -> &ItemType {
        &self.types[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ItemId, &ItemType, &[f64])> {
        (0..self.len()).map(move |i| (&self.ids[i], &self.types[i], self.row(i)))
    }

    /// Item indices grouped by type, each group in store order.
    pub fn indices_by_type(&self) -> HashMap<&ItemType, Vec<usize>> {
        let mut out: HashMap<&ItemType, Vec<usize>> = HashMap::new();
        for (i, ty) in self.types.iter().enumerate() {
            out.entry(ty).or_default().push(i);
        }
        out
    }

    pub fn read(path: &Path) -> Result<Self> {
        if is_jsonl(path) {
            Self::read_jsonl(path, None)
        } else {
            Self::read_binary(path)
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if is_jsonl(path) {
            self.write_jsonl(path)
        } else {
            self.write_binary(path)
        }
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut r = ByteReader { buf: &bytes, pos: 0, path };
        let magic = r.take(8)?;
        if magic != FEATURE_MAGIC {
            return Err(Error::format(path, "bad magic, not a feature file"));
        }
        let version = r.u32()?;
        if version != FEATURE_VERSION {
            return Err(Error::Version(format!("feature file version {version}, expected {FEATURE_VERSION}")));
        }
        let dim = r.u32()? as usize;
        let count = r.u64()? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let id = r.string()?;
            let ty = r.string()?;
            entries.push((id, ty));
        }
        let expected = count
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::format(path, "size overflow"))?;
        if bytes.len() - r.pos != expected {
            return Err(Error::format(
                path,
                format!("expected {expected} bytes of feature rows, found {}", bytes.len() - r.pos),
            ));
        }
        let mut store = FeatureStore::new(dim);
        for (id, ty) in entries {
            let mut row = Vec::with_capacity(dim);
            for _ in 0..dim {
                row.push(r.f64()?);
            }
            let v = Vector::new(row).map_err(|e| Error::format(path, format!("item {id}: {e}")))?;
            store.insert(ItemId(id), ItemType(ty), v).map_err(|e| Error::format(path, e.to_string()))?;
        }
        Ok(store)
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut out = Vec::with_capacity(24 + self.rows.len() * 8);
        out.extend_from_slice(FEATURE_MAGIC);
        out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for (id, ty) in self.ids.iter().zip(&self.types) {
            for s in [id.as_str(), ty.as_str()] {
                out.extend_from_slice(&(s.len() as u32).to_le_bytes());
                out.extend_from_slice(s.as_bytes());
            }
        }
        for v in &self.rows {
            out.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path, dim: Option<usize>) -> Result<Self> {
        let rows: Vec<FeatureRecord> = read_jsonl(path)?;
        let dim = match (dim, rows.first()) {
            (Some(d), _) => d,
            (None, Some(first)) => first.features.len(),
            (None, None) => return Err(Error::format(path, "empty feature file and no declared dim")),
        };
        let mut store = FeatureStore::new(dim);
        for (line, rec) in rows.into_iter().enumerate() {
            store
                .insert(rec.id, rec.ty, rec.features)
                .map_err(|e| Error::format(path, format!("record {}: {e}", line + 1)))?;
        }
        Ok(store)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let records = self.iter().map(|(id, ty, f)| FeatureRecord {
            id: id.clone(),
            ty: ty.clone(),
            features: Vector::new(f.to_vec()).expect("store rows are finite"),
        });
        write_jsonl(path, records)
    }
}

#[derive(Serialize, Deserialize)]
struct FeatureRecord {
    id: ItemId,
    #[serde(rename = "type")]
    ty: ItemType,
    features: Vector,
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(self.path, "unexpected end of file"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::format(self.path, "id is not utf-8"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutfitItem {
    pub id: ItemId,
    #[serde(rename = "type")]
    pub ty: ItemType,
}

impl OutfitItem {
    pub fn new(id: impl Into<ItemId>, ty: impl Into<ItemType>) -> Self {
        Self { id: id.into(), ty: ty.into() }
    }
}

/// `{"id": "o1", "items": [{"id": "a", "type": "tops"}, ...]}`
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outfit {
    pub id: String,
    pub items: Vec<OutfitItem>,
}

impl Outfit {
    pub fn contains(&self, id: &ItemId) -> bool {
        self.items.iter().any(|it| &it.id == id)
    }
}

/// `{"id": "q1", "outfit": [...items], "candidates": ["c1", "c2"], "answer": 0}`
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitbQuestion {
    pub id: String,
    pub outfit: Vec<OutfitItem>,
    pub candidates: Vec<ItemId>,
    pub answer: usize,
}

/// `{"id": "c1", "items": [...items], "label": 1}`
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompatQuestion {
    pub id: String,
    pub items: Vec<OutfitItem>,
    pub label: u8,
}

impl CompatQuestion {
    pub fn is_compatible(&self) -> bool {
        self.label == 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub features: PathBuf,
    pub outfits: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fitb: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compat: Option<PathBuf>,
    pub types: Vec<ItemType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
}

impl Manifest {
    /// File names used by [`Dataset::save`] when building a fresh manifest.
    pub fn standard(types: Vec<ItemType>, dim: usize) -> Self {
        Manifest {
            features: "features.bin".into(),
            outfits: "outfits.jsonl".into(),
            fitb: Some("fitb.jsonl".into()),
            compat: Some("compat.jsonl".into()),
            types,
            dim: Some(dim),
        }
    }
}

/// A fully validated dataset. Immutable once loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub types: Vec<ItemType>,
    pub store: FeatureStore,
    pub outfits: Vec<Outfit>,
    pub fitb: Vec<FitbQuestion>,
    pub compat: Vec<CompatQuestion>,
}

impl Dataset {
    pub fn new(
        types: Vec<ItemType>,
        store: FeatureStore,
        outfits: Vec<Outfit>,
        fitb: Vec<FitbQuestion>,
        compat: Vec<CompatQuestion>,
    ) -> Result<Self> {
        let ds = Dataset { types, store, outfits, fitb, compat };
        ds.validate().map_err(|e| match e {
            Error::Format { msg, .. } => Error::InvalidInput(msg),
            other => other,
        })?;
        Ok(ds)
    }

    pub fn dim(&self) -> usize {
        self.store.dim()
    }

    pub fn load(manifest_path: &Path) -> Result<Self> {
        let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::format(manifest_path, e.to_string()))?;
        let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        let feat_path = base.join(&manifest.features);
        let store = if is_jsonl(&feat_path) {
            FeatureStore::read_jsonl(&feat_path, manifest.dim)?
        } else {
            FeatureStore::read_binary(&feat_path)?
        };
        if let Some(d) = manifest.dim {
            if d != store.dim() {
                return Err(Error::format(
                    manifest_path,
                    format!("manifest dim {d} but feature file has dim {}", store.dim()),
                ));
            }
        }
        let outfits = read_jsonl(&base.join(&manifest.outfits))?;
        let fitb = match &manifest.fitb {
            Some(p) => read_jsonl(&base.join(p))?,
            None => Vec::new(),
        };
        let compat = match &manifest.compat {
            Some(p) => read_jsonl(&base.join(p))?,
            None => Vec::new(),
        };
        let ds = Dataset { types: manifest.types.clone(), store, outfits, fitb, compat };
        ds.validate().map_err(|e| match e {
            Error::Format { msg, .. } => Error::format(manifest_path, msg),
            other => other,
        })?;
        Ok(ds)
    }

    /// Writes the dataset next to `manifest_path` using the file names in
    /// `manifest` (or [`Manifest::standard`]).
    pub fn save(&self, manifest_path: &Path, manifest: Option<&Manifest>) -> Result<Manifest> {
        let mut manifest = manifest.cloned().unwrap_or_else(|| Manifest::standard(self.types.clone(), self.dim()));
        manifest.types = self.types.clone();
        manifest.dim = Some(self.dim());
        if self.fitb.is_empty() {
            manifest.fitb = None;
        } else if manifest.fitb.is_none() {
            manifest.fitb = Some("fitb.jsonl".into());
        }
        if self.compat.is_empty() {
            manifest.compat = None;
        } else if manifest.compat.is_none() {
            manifest.compat = Some("compat.jsonl".into());
        }
        let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        if !base.as_os_str().is_empty() {
            fs::create_dir_all(base).map_err(|e| Error::io(base, e))?;
        }
        self.store.write(&base.join(&manifest.features))?;
        write_jsonl(&base.join(&manifest.outfits), self.outfits.iter())?;
        if let Some(p) = &manifest.fitb {
            write_jsonl(&base.join(p), self.fitb.iter())?;
        }
        if let Some(p) = &manifest.compat {
            write_jsonl(&base.join(p), self.compat.iter())?;
        }
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        fs::write(manifest_path, text).map_err(|e| Error::io(manifest_path, e))?;
        Ok(manifest)
    }

    fn validate(&self) -> Result<()> {
        let here = PathBuf::from("<dataset>");
        let fail = |msg: String| Err(Error::format(&here, msg));

        let vocab: HashSet<&ItemType> = self.types.iter().collect();
        if vocab.len() != self.types.len() {
            return fail("duplicate entries in type vocabulary".into());
        }
        for (id, ty, _) in self.store.iter() {
            if !vocab.contains(ty) {
                return fail(format!("item {id} has undeclared type {ty}"));
            }
        }

        let mut dangling = BTreeSet::new();
        let check_item = |it: &OutfitItem, ctx: &str, dangling: &mut BTreeSet<String>| -> Result<()> {
            match self.store.item_type(&it.id) {
                None => {
                    dangling.insert(it.id.0.clone());
                    Ok(())
                }
                Some(ty) if ty != &it.ty => Err(Error::format(
                    &here,
                    format!("{ctx}: item {} listed as {} but catalog type is {ty}", it.id, it.ty),
                )),
                Some(_) => Ok(()),
            }
        };

        for o in &self.outfits {
            if o.items.len() < 2 {
                return fail(format!("outfit {} has fewer than 2 items", o.id));
            }
            let mut seen = HashSet::new();
            for it in &o.items {
                if !seen.insert(&it.id) {
                    return fail(format!("outfit {} repeats item {}", o.id, it.id));
                }
                check_item(it, &format!("outfit {}", o.id), &mut dangling)?;
            }
        }
        for q in &self.fitb {
            for it in &q.outfit {
                check_item(it, &format!("fitb {}", q.id), &mut dangling)?;
            }
            if q.candidates.len() < 2 {
                return fail(format!("fitb {} has fewer than 2 candidates", q.id));
            }
            if q.answer >= q.candidates.len() {
                return fail(format!("fitb {} answer index {} out of range", q.id, q.answer));
            }
            let mut cand_type: Option<&ItemType> = None;
            for c in &q.candidates {
                match self.store.item_type(c) {
                    None => {
                        dangling.insert(c.0.clone());
                    }
                    Some(ty) => match cand_type {
                        None => cand_type = Some(ty),
                        Some(t) if t != ty => return fail(format!("fitb {} candidates mix types {t} and {ty}", q.id)),
                        Some(_) => {}
                    },
                }
            }
        }
        for q in &self.compat {
            if q.label > 1 {
                return fail(format!("compat {} label {} not in {{0,1}}", q.id, q.label));
            }
            if q.items.len() < 2 {
                return fail(format!("compat {} has fewer than 2 items", q.id));
            }
            for it in &q.items {
                check_item(it, &format!("compat {}", q.id), &mut dangling)?;
            }
        }
        if !dangling.is_empty() {
            return Err(Error::DanglingIds(dangling.into_iter().collect()));
        }
        Ok(())
    }
}

fn is_jsonl(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "jsonl")
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, &r).expect("record serializes");
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Reads a whole file, mapping failures to [`Error::Io`].
pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    f.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
    Ok(buf)
}
