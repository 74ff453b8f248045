//! Evaluation manifest.
//!
//! ```json
//! {
//!   "$schema": "urn:bravo-eval:manifest:v1",
//!   "class_count": 19,
//!   "subsets": [
//!     { "name": "acdc",
//!       "items": [
//!         { "id": "img0", "gt": "gt/img0.png", "validity": "valid/img0.png",
//!           "prediction": "pred/img0.png", "confidence": "conf/img0.png" },
//!         { "id": "img1", "gt": "gt/img1.png",
//!           "decoder": "mask2former",
//!           "mask_logits": "logits/img1_masks.bten",
//!           "class_logits": "logits/img1_classes.bten" }
//!       ] } ] }
//! ```
//!
//! Relative paths resolve against the manifest's directory. The full
//! schema ships as `docs/manifest.schema.json`.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use crate::aggregate::Subset;
use crate::model::ClassCatalog;

use super::{ensure_parent, io_err, IoError, Result};

pub const MANIFEST_SCHEMA_ID: &str = "urn:bravo-eval:manifest:v1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FusedPaths {
    pub prediction: PathBuf,
    pub confidence: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LogitsPaths {
    Linear { seg_logits: PathBuf },
    Mask2Former { mask_logits: PathBuf, class_logits: PathBuf },
}

impl LogitsPaths {
    pub fn decoder(&self) -> &'static str {
        match self {
            LogitsPaths::Linear { .. } => "linear",
            LogitsPaths::Mask2Former { .. } => "mask2former",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Item {
    pub id: String,
    pub gt: PathBuf,
    pub validity: Option<PathBuf>,
    pub fused: Option<FusedPaths>,
    pub logits: Option<LogitsPaths>,
    /// Output extent for fusion; defaults to the ground-truth extent.
    pub target: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsetEntry {
    pub subset: Subset,
    pub items: Vec<Item>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub catalog: ClassCatalog,
    pub subsets: Vec<SubsetEntry>,
}

impl Manifest {
    pub fn item_count(&self) -> usize {
        self.subsets.iter().map(|s| s.items.len()).sum()
    }

    /// Serialise with paths written relative to `dir` where possible.
    pub fn to_json(&self, dir: &Path) -> Value {
        let rel = |p: &Path| -> Value {
            let shown = p.strip_prefix(dir).unwrap_or(p);
            Value::String(shown.to_string_lossy().replace('\\', "/"))
        };
        let subsets: Vec<Value> = self
            .subsets
            .iter()
            .map(|s| {
                let items: Vec<Value> = s
                    .items
                    .iter()
                    .map(|it| {
                        let mut m = Map::new();
                        m.insert("id".into(), json!(it.id));
                        m.insert("gt".into(), rel(&it.gt));
                        if let Some(v) = &it.validity {
                            m.insert("validity".into(), rel(v));
                        }
                        if let Some(f) = &it.fused {
                            m.insert("prediction".into(), rel(&f.prediction));
                            m.insert("confidence".into(), rel(&f.confidence));
                        }
                        match &it.logits {
                            Some(LogitsPaths::Linear { seg_logits }) => {
                                m.insert("decoder".into(), json!("linear"));
                                m.insert("seg_logits".into(), rel(seg_logits));
                            }
                            Some(LogitsPaths::Mask2Former {
                                mask_logits,
                                class_logits,
                            }) => {
                                m.insert("decoder".into(), json!("mask2former"));
                                m.insert("mask_logits".into(), rel(mask_logits));
                                m.insert("class_logits".into(), rel(class_logits));
                            }
                            None => {}
                        }
                        if let Some((h, w)) = it.target {
                            m.insert("height".into(), json!(h));
                            m.insert("width".into(), json!(w));
                        }
                        Value::Object(m)
                    })
                    .collect();
                json!({ "name": s.subset.key(), "items": items })
            })
            .collect();
        json!({
            "$schema": MANIFEST_SCHEMA_ID,
            "class_count": self.catalog.class_count(),
            "subsets": subsets,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let dir = path.parent().unwrap_or(Path::new(""));
        ensure_parent(path)?;
        let mut text = serde_json::to_string_pretty(&self.to_json(dir)).expect("manifest serialises");
        text.push('\n');
        std::fs::write(path, text).map_err(io_err(path))
    }
}

struct Ctx<'a> {
    path: &'a Path,
    base: &'a Path,
}

impl Ctx<'_> {
    fn schema(&self, pointer: impl Into<String>, message: impl Into<String>) -> IoError {
        IoError::Schema {
            path: self.path.to_path_buf(),
            pointer: pointer.into(),
            message: message.into(),
        }
    }

    fn object<'v>(&self, v: &'v Value, ptr: &str) -> Result<&'v Map<String, Value>> {
        v.as_object().ok_or_else(|| self.schema(ptr, "expected an object"))
    }

    fn check_keys(&self, obj: &Map<String, Value>, ptr: &str, allowed: &[&str]) -> Result<()> {
        match obj.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(self.schema(format!("{ptr}/{}", escape(k)), "unknown key")),
            None => Ok(()),
        }
    }

    fn string<'v>(&self, obj: &'v Map<String, Value>, ptr: &str, key: &str) -> Result<Option<&'v str>> {
        match obj.get(key) {
            None => Ok(None),
            Some(Value::String(s)) if !s.is_empty() => Ok(Some(s)),
            Some(_) => Err(self.schema(format!("{ptr}/{key}"), "expected a non-empty string")),
        }
    }

    fn required_string<'v>(&self, obj: &'v Map<String, Value>, ptr: &str, key: &str) -> Result<&'v str> {
        self.string(obj, ptr, key)?
            .ok_or_else(|| self.schema(format!("{ptr}/{key}"), "required key is missing"))
    }

    fn path(&self, obj: &Map<String, Value>, ptr: &str, key: &str) -> Result<Option<PathBuf>> {
        Ok(self.string(obj, ptr, key)?.map(|s| self.base.join(s)))
    }

    fn required_path(&self, obj: &Map<String, Value>, ptr: &str, key: &str) -> Result<PathBuf> {
        Ok(self.base.join(self.required_string(obj, ptr, key)?))
    }

    fn positive(&self, obj: &Map<String, Value>, ptr: &str, key: &str) -> Result<Option<usize>> {
        match obj.get(key) {
            None => Ok(None),
            Some(v) => match v.as_u64() {
                Some(n) if n > 0 => Ok(Some(n as usize)),
                _ => Err(self.schema(format!("{ptr}/{key}"), "expected a positive integer")),
            },
        }
    }
}

fn escape(key: &str) -> String {
    key.replace('~', "~0").replace('/', "~1")
}

/// Parse manifest JSON text; `path` is used for messages and as the base
/// for relative paths.
pub fn parse_manifest(text: &str, path: &Path) -> Result<Manifest> {
    let base = path.parent().unwrap_or(Path::new(""));
    let cx = Ctx { path, base };
    let root: Value = serde_json::from_str(text).map_err(|e| {
        cx.schema(
            "",
            format!("invalid JSON at line {} column {}: {e}", e.line(), e.column()),
        )
    })?;
    let obj = cx.object(&root, "")?;
    cx.check_keys(obj, "", &["$schema", "class_count", "subsets"])?;
    if let Some(id) = cx.string(obj, "", "$schema")? {
        if id != MANIFEST_SCHEMA_ID {
            return Err(cx.schema("/$schema", format!("unsupported schema {id:?}, expected {MANIFEST_SCHEMA_ID:?}")));
        }
    }
    let classes = cx
        .positive(obj, "", "class_count")?
        .ok_or_else(|| cx.schema("/class_count", "required key is missing"))?;
    let catalog = ClassCatalog::new(classes).map_err(|e| cx.schema("/class_count", e.to_string()))?;
    let subsets_v = obj
        .get("subsets")
        .and_then(Value::as_array)
        .ok_or_else(|| cx.schema("/subsets", "expected an array of subsets"))?;

    let mut seen_subsets = HashSet::new();
    let mut subsets = Vec::with_capacity(subsets_v.len());
    for (si, sv) in subsets_v.iter().enumerate() {
        let sptr = format!("/subsets/{si}");
        let so = cx.object(sv, &sptr)?;
        cx.check_keys(so, &sptr, &["name", "items"])?;
        let name = cx.required_string(so, &sptr, "name")?;
        let subset = Subset::from_key(name).ok_or_else(|| {
            let names: Vec<&str> = Subset::ALL.iter().map(|s| s.key()).collect();
            cx.schema(format!("{sptr}/name"), format!("unknown subset {name:?}, expected one of {names:?}"))
        })?;
        if !seen_subsets.insert(subset) {
            return Err(cx.schema(format!("{sptr}/name"), format!("subset {name:?} listed twice")));
        }
        let items_v = so
            .get("items")
            .and_then(Value::as_array)
            .ok_or_else(|| cx.schema(format!("{sptr}/items"), "expected an array of items"))?;
        let mut ids = HashSet::new();
        let mut items = Vec::with_capacity(items_v.len());
        for (ii, iv) in items_v.iter().enumerate() {
            let iptr = format!("{sptr}/items/{ii}");
            let item = parse_item(&cx, iv, &iptr)?;
            if !ids.insert(item.id.clone()) {
                return Err(IoError::DuplicateId {
                    path: path.to_path_buf(),
                    subset: name.to_string(),
                    id: item.id,
                });
            }
            items.push(item);
        }
        subsets.push(SubsetEntry { subset, items });
    }
    Ok(Manifest { catalog, subsets })
}

fn parse_item(cx: &Ctx<'_>, v: &Value, ptr: &str) -> Result<Item> {
    let o = cx.object(v, ptr)?;
    cx.check_keys(
        o,
        ptr,
        &[
            "id",
            "gt",
            "validity",
            "prediction",
            "confidence",
            "decoder",
            "seg_logits",
            "mask_logits",
            "class_logits",
            "height",
            "width",
        ],
    )?;
    let id = cx.required_string(o, ptr, "id")?.to_string();
    let gt = cx.required_path(o, ptr, "gt")?;
    let validity = cx.path(o, ptr, "validity")?;

    let fused = match (cx.path(o, ptr, "prediction")?, cx.path(o, ptr, "confidence")?) {
        (Some(prediction), Some(confidence)) => Some(FusedPaths {
            prediction,
            confidence,
        }),
        (None, None) => None,
        (Some(_), None) => return Err(cx.schema(format!("{ptr}/confidence"), "prediction given without confidence")),
        (None, Some(_)) => return Err(cx.schema(format!("{ptr}/prediction"), "confidence given without prediction")),
    };

    let seg = cx.path(o, ptr, "seg_logits")?;
    let masks = cx.path(o, ptr, "mask_logits")?;
    let classes = cx.path(o, ptr, "class_logits")?;
    let logits = match cx.string(o, ptr, "decoder")? {
        None => {
            if let Some(key) = [("seg_logits", &seg), ("mask_logits", &masks), ("class_logits", &classes)]
                .iter()
                .find(|(_, v)| v.is_some())
                .map(|(k, _)| *k)
            {
                return Err(cx.schema(format!("{ptr}/decoder"), format!("{key} given without a decoder kind")));
            }
            None
        }
        Some("linear") => {
            if masks.is_some() || classes.is_some() {
                return Err(cx.schema(format!("{ptr}/decoder"), "linear decoder takes only seg_logits"));
            }
            Some(LogitsPaths::Linear {
                seg_logits: seg.ok_or_else(|| cx.schema(format!("{ptr}/seg_logits"), "required for decoder \"linear\""))?,
            })
        }
        Some("mask2former") => {
            if seg.is_some() {
                return Err(cx.schema(format!("{ptr}/decoder"), "mask2former decoder does not take seg_logits"));
            }
            Some(LogitsPaths::Mask2Former {
                mask_logits: masks
                    .ok_or_else(|| cx.schema(format!("{ptr}/mask_logits"), "required for decoder \"mask2former\""))?,
                class_logits: classes
                    .ok_or_else(|| cx.schema(format!("{ptr}/class_logits"), "required for decoder \"mask2former\""))?,
            })
        }
        Some(other) => {
            return Err(cx.schema(
                format!("{ptr}/decoder"),
                format!("unknown decoder {other:?}, expected \"linear\" or \"mask2former\""),
            ))
        }
    };
    if fused.is_none() && logits.is_none() {
        return Err(cx.schema(ptr, "item needs fused maps (prediction + confidence) or logits + decoder"));
    }
    let target = match (cx.positive(o, ptr, "height")?, cx.positive(o, ptr, "width")?) {
        (Some(h), Some(w)) => Some((h, w)),
        (None, None) => None,
        _ => return Err(cx.schema(ptr, "height and width must be given together")),
    };
    Ok(Item {
        id,
        gt,
        validity,
        fused,
        logits,
        target,
    })
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_manifest(&text, path)
}
