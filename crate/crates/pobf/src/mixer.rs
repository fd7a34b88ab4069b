//! Student training mix: real records followed by the selected synthetic
//! records, with optional caption replacement.
//!
//! Real records are the training-split records of the manifest in file
//! order. Each selected candidate adds a record `<sample_id>#syn<index>`
//! whose image path is the run-relative candidate PNG and whose text and box
//! are the real sample's. A sample's alternative caption is its object
//! caption `T'`.
//!
//! In `dual_text` mode records with an alternative carry `alt_text` and `q`
//! and the trainer draws per iteration. In `materialized` mode each such
//! record draws once from the seeded stream (see
//! [`pobf_core::mix::ReplacementStream`]) in output order; replaced records
//! carry `T'` as `text` and the original text as `alt_text`, with no `q`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use pobf_core::mix::ReplacementStream;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::SelectionFile;
use crate::genpipe::Candidate;
use crate::manifest::{Manifest, SampleLine, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixMode {
    Materialized,
    #[default]
    DualText,
}

impl MixMode {
    pub fn name(self) -> &'static str {
        match self {
            MixMode::Materialized => "materialized",
            MixMode::DualText => "dual_text",
        }
    }
}

impl fmt::Display for MixMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MixMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "materialized" => Ok(MixMode::Materialized),
            "dual_text" => Ok(MixMode::DualText),
            other => Err(format!("unknown mix mode `{other}` (expected materialized or dual_text)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixPolicy {
    pub q: f64,
    pub mode: MixMode,
    pub seed: u64,
}

impl Default for MixPolicy {
    fn default() -> Self {
        Self { q: 0.3, mode: MixMode::DualText, seed: 0 }
    }
}

impl MixPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.q) {
            return Err(Error::Config(format!("q = {} outside [0, 1]", self.q)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Real,
    Synthetic,
}

/// One line of mix.jsonl.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixRecord {
    #[serde(flatten)]
    pub sample: SampleLine,
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alt_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
}

impl MixRecord {
    /// Materialized records that took the alternative caption.
    pub fn is_replaced(&self) -> bool {
        self.alt_text.is_some() && self.q.is_none()
    }
}

pub fn synthetic_id(sample_id: &str, index: u32) -> String {
    format!("{sample_id}#syn{index}")
}

pub fn build_mix(
    real: &Manifest,
    selection: &SelectionFile,
    candidates: &[Candidate],
    policy: &MixPolicy,
) -> Result<Vec<MixRecord>> {
    policy.validate()?;
    let by_key: HashMap<(&str, u32), &Candidate> =
        candidates.iter().map(|c| ((c.sample_id.as_str(), c.index), c)).collect();
    let mut alt: HashMap<&str, &str> = HashMap::new();
    for c in candidates {
        alt.entry(c.sample_id.as_str()).or_insert(c.object_caption.as_str());
    }
    let index = real.index();

    let mut missing = Vec::new();
    for (sid, indices) in &selection.chosen {
        if !index.contains_key(sid.as_str()) {
            missing.push(format!("sample {sid}"));
        }
        for &i in indices {
            if !by_key.contains_key(&(sid.as_str(), i)) {
                missing.push(format!("candidate {sid}/{i}"));
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::Dangling(missing));
    }

    let train: Vec<_> = real.records.iter().filter(|r| r.split == Split::Train).collect();
    let mut records: Vec<MixRecord> = train
        .iter()
        .map(|r| MixRecord { sample: SampleLine::from(*r), origin: Origin::Real, alt_text: None, q: None })
        .collect();
    // Synthetic records follow the manifest's sample order.
    let mut seen = BTreeSet::new();
    for r in &real.records {
        let Some(indices) = selection.chosen.get(&r.id) else { continue };
        if !seen.insert(r.id.as_str()) {
            continue;
        }
        let mut indices = indices.clone();
        indices.sort_unstable();
        indices.dedup();
        for i in indices {
            let c = by_key[&(r.id.as_str(), i)];
            let mut line = SampleLine::from(r);
            line.id = synthetic_id(&r.id, i);
            line.image_path = c.image_path.clone();
            records.push(MixRecord { sample: line, origin: Origin::Synthetic, alt_text: None, q: None });
        }
    }

    let mut stream = ReplacementStream::new(policy.seed);
    for rec in &mut records {
        let sid = match rec.origin {
            Origin::Real => rec.sample.id.as_str(),
            Origin::Synthetic => rec.sample.id.rsplit_once("#syn").map_or(rec.sample.id.as_str(), |(s, _)| s),
        };
        let Some(alt_text) = alt.get(sid).map(|s| s.to_string()) else { continue };
        match policy.mode {
            MixMode::DualText => {
                rec.alt_text = Some(alt_text);
                rec.q = Some(policy.q);
            }
            MixMode::Materialized => {
                if stream.decide(policy.q) {
                    rec.alt_text = Some(std::mem::replace(&mut rec.sample.text, alt_text));
                }
            }
        }
    }
    Ok(records)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MixSummary {
    pub total: usize,
    pub real: usize,
    pub synthetic: usize,
    /// Records carrying an alternative caption for the trainer.
    pub dual_text: usize,
    pub replaced: usize,
    /// `replaced / total`, 0 for an empty mix.
    pub replacement_rate: f64,
    pub per_split: BTreeMap<String, usize>,
}

pub fn summarize_mix(records: &[MixRecord]) -> MixSummary {
    let mut s = MixSummary { total: records.len(), ..Default::default() };
    for r in records {
        match r.origin {
            Origin::Real => s.real += 1,
            Origin::Synthetic => s.synthetic += 1,
        }
        if r.is_replaced() {
            s.replaced += 1;
        } else if r.alt_text.is_some() {
            s.dual_text += 1;
        }
        *s.per_split.entry(r.sample.split.name().to_string()).or_default() += 1;
    }
    if s.total > 0 {
        s.replacement_rate = s.replaced as f64 / s.total as f64;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genpipe::CandidateFlag;
    use crate::manifest::GroundingSample;
    use pobf_core::{BBox, ImageSize};

    fn manifest(n: usize) -> Manifest {
        Manifest {
            source_name: "t".into(),
            records: (0..n)
                .map(|i| GroundingSample {
                    id: format!("s{i:03}"),
                    image_path: format!("{i}.png"),
                    image_size: ImageSize::new(64, 48),
                    text: format!("real {i}"),
                    bbox: BBox::new(20.0 + i as f64 * 0.1, 20.0, 10.0, 8.0).unwrap(),
                    split: Split::Train,
                })
                .collect(),
        }
    }

    fn candidates(m: &Manifest) -> Vec<Candidate> {
        m.records
            .iter()
            .map(|r| Candidate {
                sample_id: r.id.clone(),
                index: 0,
                image_path: format!("candidates/{}/0.png", r.id),
                scene_caption: "scene".into(),
                object_caption: format!("alt {}", r.id),
                strength: 0.9,
                steps: 45,
                guidance_scale: 7.5,
                top_p: 0.9,
                seed: 1,
                flags: Vec::<CandidateFlag>::new(),
            })
            .collect()
    }

    fn select_all(m: &Manifest) -> SelectionFile {
        SelectionFile {
            method: "pobf".into(),
            weights: [1.0, 1.0, 0.5],
            chosen: m.records.iter().map(|r| (r.id.clone(), vec![0])).collect(),
        }
    }

    #[test]
    fn q_zero_keeps_real_texts() {
        let m = manifest(5);
        let policy = MixPolicy { q: 0.0, mode: MixMode::Materialized, seed: 1 };
        let mix = build_mix(&m, &select_all(&m), &candidates(&m), &policy).unwrap();
        assert_eq!(mix.len(), 10);
        assert!(mix.iter().all(|r| r.sample.text.starts_with("real") && r.alt_text.is_none()));
        let syn = &mix[5];
        assert_eq!(syn.sample.id, "s000#syn0");
        assert_eq!(
            serde_json::to_string(&syn.sample.bbox).unwrap(),
            serde_json::to_string(&mix[0].sample.bbox).unwrap()
        );
    }

    #[test]
    fn q_one_replaces_every_record_with_alt() {
        let m = manifest(3);
        let policy = MixPolicy { q: 1.0, mode: MixMode::Materialized, seed: 1 };
        let mix = build_mix(&m, &select_all(&m), &candidates(&m), &policy).unwrap();
        assert!(mix.iter().all(|r| r.sample.text.starts_with("alt") && r.is_replaced()));
        assert_eq!(summarize_mix(&mix).replacement_rate, 1.0);
    }

    #[test]
    fn dual_text_defers_sampling() {
        let m = manifest(2);
        let mix = build_mix(&m, &select_all(&m), &candidates(&m), &MixPolicy::default()).unwrap();
        let line = serde_json::to_string(&mix[2]).unwrap();
        assert!(line.contains(r#""origin":"synthetic","alt_text":"alt s000","q":0.3"#), "{line}");
        assert_eq!(summarize_mix(&mix).dual_text, 4);
    }

    #[test]
    fn dangling_selection_lists_missing() {
        let m = manifest(2);
        let mut sel = select_all(&m);
        sel.chosen.insert("s001".into(), vec![0, 3]);
        let err = build_mix(&m, &sel, &candidates(&m), &MixPolicy::default()).unwrap_err();
        assert!(err.to_string().contains("candidate s001/3"), "{err}");
    }

    #[test]
    fn empty_summary_is_zero() {
        assert_eq!(summarize_mix(&[]), MixSummary::default());
    }
}
