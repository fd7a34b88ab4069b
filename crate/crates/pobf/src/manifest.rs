//! Region-text grounding manifests (JSON Lines).
//!
//! One object per line:
//! `{"id","image_path","image_size":[W,H],"text","box":[cx,cy,w,h],"split"}`.
//! Boxes that overflow their image are clamped on load and reported as
//! [`ClampWarning`]s.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use pobf_core::seed::{fnv1a64, hash_words};
use pobf_core::{BBox, ImageSize};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::run::{read_jsonl_str, read_text, write_text};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// One `(image, text, box)` grounding example.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundingSample {
    pub id: String,
    pub image_path: String,
    pub image_size: ImageSize,
    pub text: String,
    pub bbox: BBox,
    pub split: Split,
}

/// Exact JSON layout of a manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleLine {
    pub id: String,
    pub image_path: String,
    pub image_size: [u32; 2],
    pub text: String,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub split: Split,
}

impl From<&GroundingSample> for SampleLine {
    fn from(s: &GroundingSample) -> Self {
        Self {
            id: s.id.clone(),
            image_path: s.image_path.clone(),
            image_size: [s.image_size.width, s.image_size.height],
            text: s.text.clone(),
            bbox: s.bbox.to_array(),
            split: s.split,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub source_name: String,
    pub records: Vec<GroundingSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClampWarning {
    pub id: String,
    pub line: usize,
    pub original: BBox,
    pub clamped: BBox,
}

/// A manifest plus the clamping warnings produced while validating it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LoadedManifest {
    pub manifest: Manifest,
    pub warnings: Vec<ClampWarning>,
}

impl LoadedManifest {
    pub fn was_clamped(&self, id: &str) -> bool {
        self.warnings.iter().any(|w| w.id == id)
    }
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&GroundingSample> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn index(&self) -> HashMap<&str, &GroundingSample> {
        self.records.iter().map(|r| (r.id.as_str(), r)).collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for record in &self.records {
            out.push_str(&serde_json::to_string(&SampleLine::from(record)).expect("manifest line serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_jsonl())
    }
}

/// Validate raw lines: unique ids, non-empty text, positive extents, and
/// boxes clamped to their image. `lines` pairs each record with its 1-based
/// source line for error messages.
pub fn validate_lines(source_name: &str, lines: Vec<(usize, SampleLine)>) -> Result<LoadedManifest> {
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut records = Vec::with_capacity(lines.len());
    let mut warnings = Vec::new();
    for (line, raw) in lines {
        if let Some(first) = seen.insert(raw.id.clone(), line) {
            return Err(Error::Validation(format!(
                "duplicate id `{}` at line {line} (first seen at line {first})",
                raw.id
            )));
        }
        let invalid = |what: String| Error::Validation(format!("record `{}` (line {line}): {what}", raw.id));
        if raw.id.is_empty() {
            return Err(Error::Validation(format!("line {line}: empty id")));
        }
        if raw.text.trim().is_empty() {
            return Err(invalid("empty text".into()));
        }
        let size = ImageSize::new(raw.image_size[0], raw.image_size[1]);
        if size.width == 0 || size.height == 0 {
            return Err(invalid("zero image size".into()));
        }
        let [cx, cy, w, h] = raw.bbox;
        let original = BBox::new(cx, cy, w, h).map_err(|e| invalid(e.to_string()))?;
        let (bbox, changed) = original.clamp_to(size).map_err(|e| invalid(e.to_string()))?;
        if changed {
            warn!("record `{}` (line {line}): box clamped to the {}x{} image", raw.id, size.width, size.height);
            warnings.push(ClampWarning { id: raw.id.clone(), line, original, clamped: bbox });
        }
        records.push(GroundingSample {
            id: raw.id,
            image_path: raw.image_path,
            image_size: size,
            text: raw.text,
            bbox,
            split: raw.split,
        });
    }
    Ok(LoadedManifest { manifest: Manifest { source_name: source_name.to_string(), records }, warnings })
}

pub fn source_name_of(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn parse_manifest(source_name: &str, path_for_errors: &Path, text: &str) -> Result<LoadedManifest> {
    let lines = read_jsonl_str::<SampleLine>(path_for_errors, text)?;
    validate_lines(source_name, lines)
}

pub fn load_manifest(path: &Path) -> Result<LoadedManifest> {
    parse_manifest(&source_name_of(path), path, &read_text(path)?)
}

/// What a fractional subsample draws over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleUnit {
    /// Distinct images; every expression of a chosen image is kept.
    Images,
    /// Individual referring expressions.
    Expressions,
}

impl FromStr for SampleUnit {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "images" => Ok(SampleUnit::Images),
            "expressions" => Ok(SampleUnit::Expressions),
            other => Err(format!("unknown sampling unit `{other}` (expected images or expressions)")),
        }
    }
}

/// Deterministic subsample of `ceil(fraction · n)` units. Units are ranked
/// by `hash_words([seed, fnv1a64(key)])` (key = record id or image path) and
/// the lowest ranks are kept; file order is preserved.
pub fn sample_manifest(m: &Manifest, fraction: f64, unit: SampleUnit, seed: u64) -> Result<Manifest> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config(format!("sampling fraction {fraction} outside [0, 1]")));
    }
    let key = |r: &GroundingSample| -> String {
        match unit {
            SampleUnit::Images => r.image_path.clone(),
            SampleUnit::Expressions => r.id.clone(),
        }
    };
    let mut units: BTreeMap<String, u64> = BTreeMap::new();
    for r in &m.records {
        let k = key(r);
        let rank = hash_words(&[seed, fnv1a64(k.as_bytes())]);
        units.insert(k, rank);
    }
    let take = (fraction * units.len() as f64).ceil() as usize;
    let mut ranked: Vec<(&String, &u64)> = units.iter().collect();
    ranked.sort_by(|a, b| a.1.cmp(b.1).then(a.0.cmp(b.0)));
    let kept: std::collections::HashSet<&String> = ranked.into_iter().take(take).map(|(k, _)| k).collect();
    Ok(Manifest {
        source_name: m.source_name.clone(),
        records: m.records.iter().filter(|r| kept.contains(&key(r))).cloned().collect(),
    })
}
