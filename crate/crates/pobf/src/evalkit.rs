//! Top-1 accuracy of a predictions file and run reports.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use pobf_core::geometry::denormalize_box;
use pobf_core::metric::top1_accuracy as hit_rate;
use pobf_core::stats::summarize;
use pobf_core::BBox;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{correlation_report, load_scores, load_selection};
use crate::genpipe::{load_statuses, SampleState};
use crate::manifest::{Manifest, Split};
use crate::run::{read_jsonl_str, read_text, write_json, write_text, RunDir};

/// One line of predictions.jsonl; `box` is normalized `[cx, cy, w, h]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sample_id: String,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
}

pub fn load_predictions(path: &Path) -> Result<Vec<Prediction>> {
    Ok(read_jsonl_str(path, &read_text(path)?)?.into_iter().map(|(_, p)| p).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub split: Option<Split>,
    pub records: usize,
    pub hits: usize,
    pub top1: f64,
}

/// Accuracy over the manifest records of `split` (all records when `None`).
/// Each of those records needs exactly one prediction, and every prediction
/// must belong to one of them.
pub fn top1_accuracy(preds: &[Prediction], manifest: &Manifest, split: Option<Split>) -> Result<Accuracy> {
    let records: Vec<_> = manifest.records.iter().filter(|r| split.is_none_or(|s| r.split == s)).collect();
    if records.is_empty() {
        return Err(Error::Validation("no manifest records to evaluate".into()));
    }
    let wanted: HashMap<&str, _> = records.iter().map(|r| (r.id.as_str(), *r)).collect();
    let mut by_id: BTreeMap<&str, &Prediction> = BTreeMap::new();
    let mut duplicates = Vec::new();
    let mut unknown = Vec::new();
    for p in preds {
        if !wanted.contains_key(p.sample_id.as_str()) {
            unknown.push(p.sample_id.clone());
        } else if by_id.insert(p.sample_id.as_str(), p).is_some() {
            duplicates.push(p.sample_id.clone());
        }
    }
    if !duplicates.is_empty() {
        return Err(Error::Validation(format!("duplicate predictions for: {}", duplicates.join(", "))));
    }
    if !unknown.is_empty() {
        return Err(Error::Validation(format!("predictions for ids not under evaluation: {}", unknown.join(", "))));
    }
    let missing: Vec<&str> = records.iter().map(|r| r.id.as_str()).filter(|id| !by_id.contains_key(id)).collect();
    if !missing.is_empty() {
        return Err(Error::Validation(format!("missing predictions for: {}", missing.join(", "))));
    }
    let mut pairs: Vec<(BBox, BBox)> = Vec::with_capacity(records.len());
    for r in &records {
        let p = by_id[r.id.as_str()];
        let pred = denormalize_box(p.bbox, r.image_size)
            .map_err(|e| Error::Validation(format!("prediction for `{}`: {e}", r.id)))?;
        pairs.push((pred, r.bbox));
    }
    let top1 = hit_rate(pairs.iter().map(|(p, g)| (p, g))).unwrap_or(0.0);
    let hits = pairs.iter().filter(|(p, g)| pobf_core::metric::is_hit(p, g)).count();
    Ok(Accuracy { split, records: records.len(), hits, top1 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleCounts {
    pub ok: usize,
    pub degenerate_mask: usize,
    pub failed: usize,
}

/// Machine-readable twin of report.md.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub candidates: usize,
    pub samples: SampleCounts,
    pub scored_candidates: usize,
    pub scored_samples: usize,
    /// Per raw column; `None` when nothing was scored.
    pub scores: BTreeMap<String, Option<ColumnStats>>,
    pub pearson_s1_s2: Option<f64>,
    pub method: String,
    pub weights: [f64; 3],
    pub selected: usize,
}

pub fn build_report(run: &RunDir) -> Result<RunReport> {
    let lines = load_scores(run)?;
    let selection = load_selection(run)?;
    let statuses = load_statuses(run)?;
    let mut samples = SampleCounts::default();
    let mut candidates = 0;
    for s in &statuses {
        candidates += s.candidates;
        match s.status {
            SampleState::Ok => samples.ok += 1,
            SampleState::DegenerateMask => samples.degenerate_mask += 1,
            SampleState::Failed => samples.failed += 1,
        }
    }
    let column = |f: fn(&crate::filter::ScoreLine) -> f64| {
        let xs: Vec<f64> = lines.iter().map(f).collect();
        summarize(&xs).map(|s| ColumnStats { min: s.min, mean: s.mean, max: s.max })
    };
    let mut scores = BTreeMap::new();
    scores.insert("s1_raw".to_string(), column(|l| l.s1_raw));
    scores.insert("s2_raw".to_string(), column(|l| l.s2_raw));
    scores.insert("p_raw".to_string(), column(|l| l.p_raw));
    let scored_samples = {
        let mut ids: Vec<&str> = lines.iter().map(|l| l.sample_id.as_str()).collect();
        ids.dedup();
        ids.len()
    };
    Ok(RunReport {
        candidates,
        samples,
        scored_candidates: lines.len(),
        scored_samples,
        scores,
        pearson_s1_s2: correlation_report(&lines).0.pearson_s1_s2,
        selected: selection.selected_count(),
        method: selection.method,
        weights: selection.weights,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "null".to_string(), |x| format!("{x:.6}"))
}

pub fn render_markdown(r: &RunReport) -> String {
    let mut md = String::from("# Run report\n\n## Candidates\n\n");
    let _ = writeln!(md, "- candidates: {}", r.candidates);
    let _ = writeln!(md, "- samples ok: {}", r.samples.ok);
    let _ = writeln!(md, "- samples with degenerate mask: {}", r.samples.degenerate_mask);
    let _ = writeln!(md, "- samples failed: {}", r.samples.failed);
    md.push_str("\n## Scores\n\n");
    let _ = writeln!(md, "- scored candidates: {} ({} samples)\n", r.scored_candidates, r.scored_samples);
    md.push_str("| column | min | mean | max |\n|---|---|---|---|\n");
    for (name, stats) in &r.scores {
        match stats {
            Some(s) => {
                let _ = writeln!(md, "| {name} | {:.6} | {:.6} | {:.6} |", s.min, s.mean, s.max);
            }
            None => {
                let _ = writeln!(md, "| {name} | null | null | null |");
            }
        }
    }
    md.push_str("\n## Correlation\n\n");
    let _ = writeln!(md, "- pearson(s1_raw, s2_raw): {}", opt(r.pearson_s1_s2));
    md.push_str("\n## Selection\n\n");
    let _ = writeln!(md, "- method: {}", r.method);
    let _ = writeln!(md, "- weights: {}, {}, {}", r.weights[0], r.weights[1], r.weights[2]);
    let _ = writeln!(md, "- selected candidates: {}", r.selected);
    md
}

/// Write report.md, report.json and the S1/S2 scatter CSV.
pub fn run_report(run: &RunDir) -> Result<RunReport> {
    let report = build_report(run)?;
    crate::filter::write_correlation(run, &load_scores(run)?)?;
    write_text(&run.report_md(), &render_markdown(&report))?;
    write_json(&run.report_json(), &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::GroundingSample;
    use pobf_core::ImageSize;

    fn manifest() -> Manifest {
        let size = ImageSize::new(100, 100);
        Manifest {
            source_name: "t".into(),
            records: ["a", "b", "c"]
                .iter()
                .map(|id| GroundingSample {
                    id: id.to_string(),
                    image_path: "x.png".into(),
                    image_size: size,
                    text: "t".into(),
                    bbox: BBox::new(50.0, 50.0, 20.0, 20.0).unwrap(),
                    split: Split::Val,
                })
                .collect(),
        }
    }

    fn pred(id: &str, b: [f64; 4]) -> Prediction {
        Prediction { sample_id: id.into(), bbox: b }
    }

    #[test]
    fn perfect_predictions_score_one() {
        let m = manifest();
        let preds: Vec<_> = ["a", "b", "c"].iter().map(|id| pred(id, [0.5, 0.5, 0.2, 0.2])).collect();
        assert_eq!(top1_accuracy(&preds, &m, Some(Split::Val)).unwrap().top1, 1.0);
    }

    #[test]
    fn missing_and_duplicate_predictions_are_errors() {
        let m = manifest();
        let two = vec![pred("a", [0.5; 4]), pred("b", [0.5; 4])];
        assert!(top1_accuracy(&two, &m, None).unwrap_err().to_string().contains("missing predictions for: c"));
        let dup = vec![pred("a", [0.5; 4]), pred("a", [0.5; 4]), pred("b", [0.5; 4]), pred("c", [0.5; 4])];
        assert!(top1_accuracy(&dup, &m, None).unwrap_err().to_string().contains("duplicate"));
        assert!(top1_accuracy(&two, &m, Some(Split::Test)).is_err());
    }

    #[test]
    fn prediction_file_layout() {
        let p: Prediction = serde_json::from_str(r#"{"sample_id":"a","box":[0.5,0.5,0.1,0.1]}"#).unwrap();
        assert_eq!(p.bbox, [0.5, 0.5, 0.1, 0.1]);
    }
}
