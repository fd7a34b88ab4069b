//! Teacher scoring of the candidate store, selection by the POBF score or a
//! baseline filter, and the S1/S2 correlation report.

use std::collections::{BTreeMap, HashMap};

use log::{info, warn};
use pobf_core::baseline::{
    clip_teacher, cosine, difficult_loss, moderate_ds, moderate_loss, no_teacher, random_teacher, CandidateKey,
    FilterMethod,
};
use pobf_core::geometry::denormalize_box;
use pobf_core::score::{apply_weights, NormScores, RawScores};
use pobf_core::stats::pearson;
use pobf_core::{normalize_scores, select_best, FilterWeights, RgbImage, ScoreRecord, Selection};
use serde::{Deserialize, Serialize};

use crate::backends::{embed_unit, BackendError, EmbedPayload, Embedder, Grounder, Role};
use crate::error::{Error, Result};
use crate::genpipe::Candidate;
use crate::imageio::{decode, encode_png};
use crate::manifest::{GroundingSample, Manifest};
use crate::run::{read_bytes, read_json, read_jsonl, write_json, write_jsonl, write_text, RunDir};

/// Raw scores of one candidate image against its real sample.
pub fn score_candidate(
    grounder: &dyn Grounder,
    image_bytes: &[u8],
    image: &RgbImage,
    sample: &GroundingSample,
) -> std::result::Result<RawScores, BackendError> {
    let size = sample.image_size;
    let misbehavior = |message: String| BackendError::Misbehavior { role: Role::Ground, message };
    let zeroed = image
        .zero_inside(size, &sample.bbox)
        .map_err(|e| BackendError::Request { role: Role::Ground, message: e.to_string() })?;
    let zeroed = encode_png(&zeroed);
    let ask = |bytes: &[u8], text: &str| {
        let nb = grounder.ground(bytes, text)?;
        denormalize_box(nb.0, size).map_err(|e| misbehavior(e.to_string()))
    };
    let (with_text, (inside_zeroed, empty_text)) = rayon::join(
        || ask(image_bytes, &sample.text),
        || rayon::join(|| ask(&zeroed, &sample.text), || ask(image_bytes, "")),
    );
    Ok(RawScores::from_predictions(&sample.bbox, &with_text?, &inside_zeroed?, &empty_text?))
}

/// One line of scores.jsonl.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreLine {
    pub sample_id: String,
    pub index: u32,
    pub s1_raw: f64,
    pub s2_raw: f64,
    pub p_raw: f64,
    pub s1_norm: f64,
    pub s2_norm: f64,
    pub p_norm: f64,
    pub combined: f64,
    pub selected: bool,
}

impl ScoreLine {
    pub fn to_record(&self) -> ScoreRecord {
        let mut r = ScoreRecord::new(
            self.sample_id.clone(),
            self.index,
            RawScores { s1: self.s1_raw, s2: self.s2_raw, p: self.p_raw },
        );
        r.norm = Some(NormScores { s1: self.s1_norm, s2: self.s2_norm, p: self.p_norm });
        r.combined = Some(self.combined);
        r
    }
}

pub fn score_lines(records: &[ScoreRecord], selection: &Selection) -> Vec<ScoreLine> {
    records
        .iter()
        .map(|r| {
            let n = r.norm.unwrap_or(NormScores { s1: 0.0, s2: 0.0, p: 0.0 });
            ScoreLine {
                sample_id: r.sample_id.clone(),
                index: r.index,
                s1_raw: r.raw.s1,
                s2_raw: r.raw.s2,
                p_raw: r.raw.p,
                s1_norm: n.s1,
                s2_norm: n.s2,
                p_norm: n.p,
                combined: r.combined.unwrap_or(0.0),
                selected: selection.is_selected(&r.sample_id, r.index),
            }
        })
        .collect()
}

/// Scored, normalized and combined records of a run, sorted by
/// `(sample_id, index)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRun {
    pub records: Vec<ScoreRecord>,
    /// Samples dropped because at least one candidate could not be scored.
    pub unscored: BTreeMap<String, String>,
}

fn sample_index<'a>(manifest: &'a Manifest, candidates: &[Candidate]) -> Result<HashMap<&'a str, &'a GroundingSample>> {
    let index = manifest.index();
    let mut missing: Vec<String> =
        candidates.iter().filter(|c| !index.contains_key(c.sample_id.as_str())).map(|c| c.sample_id.clone()).collect();
    missing.dedup();
    if !missing.is_empty() {
        return Err(Error::Dangling(missing.into_iter().map(|s| format!("sample {s}")).collect()));
    }
    Ok(index)
}

/// Score every candidate with `parallelism` workers, drop samples with any
/// unscored candidate, then normalize over what remains and combine.
pub fn score_run(
    run: &RunDir,
    manifest: &Manifest,
    candidates: &[Candidate],
    grounder: &dyn Grounder,
    weights: &FilterWeights,
    parallelism: usize,
) -> Result<ScoredRun> {
    let index = sample_index(manifest, candidates)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let results: Vec<std::result::Result<RawScores, String>> = pool.install(|| {
        use rayon::prelude::*;
        candidates
            .par_iter()
            .map(|c| {
                let sample = index[c.sample_id.as_str()];
                let bytes = read_bytes(&run.resolve(&c.image_path)).map_err(|e| e.to_string())?;
                let image = decode(&bytes).map_err(|e| format!("{}: {e}", c.image_path))?;
                score_candidate(grounder, &bytes, &image, sample).map_err(|e| e.to_string())
            })
            .collect()
    });

    let mut unscored = BTreeMap::new();
    for (c, r) in candidates.iter().zip(&results) {
        if let Err(message) = r {
            warn!("candidate {}/{} unscored: {message}", c.sample_id, c.index);
            unscored.entry(c.sample_id.clone()).or_insert_with(|| message.clone());
        }
    }
    let mut records: Vec<ScoreRecord> = candidates
        .iter()
        .zip(results)
        .filter(|(c, _)| !unscored.contains_key(&c.sample_id))
        .map(|(c, r)| ScoreRecord::new(c.sample_id.clone(), c.index, r.expect("scored")))
        .collect();
    records.sort_by(|a, b| (&a.sample_id, a.index).cmp(&(&b.sample_id, b.index)));
    normalize_scores(&mut records);
    apply_weights(&mut records, weights);
    Ok(ScoredRun { records, unscored })
}

/// Re-weight records loaded from scores.jsonl.
pub fn reweight(lines: &[ScoreLine], weights: &FilterWeights) -> Vec<ScoreRecord> {
    let mut records: Vec<ScoreRecord> = lines.iter().map(ScoreLine::to_record).collect();
    apply_weights(&mut records, weights);
    records
}

pub fn load_scores(run: &RunDir) -> Result<Vec<ScoreLine>> {
    read_jsonl(&run.require(run.scores_jsonl(), "score")?)
}

pub fn write_scores(run: &RunDir, records: &[ScoreRecord], k: usize) -> Result<Selection> {
    let selection = select_best(records, k);
    write_jsonl(&run.scores_jsonl(), &score_lines(records, &selection))?;
    Ok(selection)
}

/// Layout of selection.json.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionFile {
    pub method: String,
    pub weights: [f64; 3],
    pub chosen: BTreeMap<String, Vec<u32>>,
}

impl SelectionFile {
    pub fn new(method: FilterMethod, weights: &FilterWeights, selection: &Selection) -> Self {
        Self { method: method.name().to_string(), weights: weights.to_array(), chosen: selection.chosen.clone() }
    }

    pub fn selected_count(&self) -> usize {
        self.chosen.values().map(Vec::len).sum()
    }
}

pub fn load_selection(run: &RunDir) -> Result<SelectionFile> {
    read_json(&run.require(run.selection_json(), "select")?)
}

/// Everything a filter method may need. `scores` is required by the
/// score-based methods, `embedder` by the embedding-based ones.
pub struct FilterInputs<'a> {
    pub run: &'a RunDir,
    pub manifest: &'a Manifest,
    pub candidates: &'a [Candidate],
    pub scores: Option<&'a [ScoreLine]>,
    pub embedder: Option<&'a dyn Embedder>,
    pub k: usize,
    pub seed: u64,
    pub parallelism: usize,
}

fn candidate_keys(candidates: &[Candidate]) -> Vec<CandidateKey> {
    candidates.iter().map(|c| CandidateKey::new(c.sample_id.clone(), c.index)).collect()
}

fn embed_candidates(inputs: &FilterInputs<'_>, embedder: &dyn Embedder) -> Result<Vec<(CandidateKey, Vec<f64>)>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(inputs.parallelism.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| {
        use rayon::prelude::*;
        inputs
            .candidates
            .par_iter()
            .map(|c| {
                let bytes = read_bytes(&inputs.run.resolve(&c.image_path))?;
                let v = embed_unit(embedder, EmbedPayload::Image(&bytes))?;
                Ok((CandidateKey::new(c.sample_id.clone(), c.index), v))
            })
            .collect()
    })
}

/// Apply one filter method to the run.
pub fn run_selection(method: FilterMethod, weights: &FilterWeights, inputs: &FilterInputs<'_>) -> Result<Selection> {
    let k = inputs.k;
    let scores = || -> Result<Vec<ScoreRecord>> {
        let lines = inputs.scores.ok_or_else(|| Error::Config(format!("filter `{method}` needs teacher scores")))?;
        Ok(reweight(lines, weights))
    };
    let embedder = || inputs.embedder.ok_or_else(|| Error::Config(format!("filter `{method}` needs an embed backend")));
    let selection = match method {
        FilterMethod::Pobf => select_best(&scores()?, k),
        FilterMethod::DifficultLoss => difficult_loss(&scores()?, k),
        FilterMethod::ModerateLoss => moderate_loss(&scores()?, k),
        FilterMethod::Random => random_teacher(&candidate_keys(inputs.candidates), k, inputs.seed),
        FilterMethod::None => no_teacher(&candidate_keys(inputs.candidates), k),
        FilterMethod::Clip => {
            let embedder = embedder()?;
            let index = sample_index(inputs.manifest, inputs.candidates)?;
            let mut text_vectors: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
            for c in inputs.candidates {
                if !text_vectors.contains_key(c.sample_id.as_str()) {
                    let text = &index[c.sample_id.as_str()].text;
                    text_vectors.insert(c.sample_id.as_str(), embed_unit(embedder, EmbedPayload::Text(text))?);
                }
            }
            let cosines: Vec<(CandidateKey, f64)> = embed_candidates(inputs, embedder)?
                .into_iter()
                .map(|(key, v)| {
                    let t = &text_vectors[key.sample_id.as_str()];
                    let c = cosine(&v, t);
                    (key, c)
                })
                .collect();
            clip_teacher(&cosines, k)
        }
        FilterMethod::ModerateDs => {
            let embedded = embed_candidates(inputs, embedder()?)?;
            moderate_ds(&embedded, k).map_err(|e| Error::Validation(e.to_string()))?
        }
    };
    if !selection.excluded.is_empty() {
        info!("{method}: {} sample(s) excluded for incomplete candidate groups", selection.excluded.len());
    }
    Ok(selection)
}

/// Extra weightings evaluated by `benchmark-filters`: `-S1` and `-S2`.
pub const ABLATIONS: [(&str, FilterWeights); 2] =
    [("neg_s1", FilterWeights::new(-1.0, 0.0, 0.0)), ("neg_s2", FilterWeights::new(0.0, -1.0, 0.0))];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkEntry {
    pub name: String,
    pub method: String,
    pub weights: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

/// Run every filter method plus the negative-score ablations against the
/// same candidate store, writing `benchmark/<name>/selection.json` for each.
/// Methods whose inputs are unavailable are reported as skipped.
pub fn benchmark_filters(weights: &FilterWeights, inputs: &FilterInputs<'_>) -> Result<Vec<BenchmarkEntry>> {
    let mut runs: Vec<(String, FilterMethod, FilterWeights)> =
        FilterMethod::ALL.iter().map(|m| (m.name().to_string(), *m, *weights)).collect();
    runs.extend(ABLATIONS.iter().map(|(name, w)| (name.to_string(), FilterMethod::Pobf, *w)));
    let mut entries = Vec::new();
    for (name, method, w) in runs {
        let mut entry = BenchmarkEntry {
            name: name.clone(),
            method: method.name().to_string(),
            weights: w.to_array(),
            selected: None,
            skipped: None,
        };
        match run_selection(method, &w, inputs) {
            Ok(selection) => {
                write_json(&inputs.run.benchmark_selection(&name), &SelectionFile::new(method, &w, &selection))?;
                entry.selected = Some(selection.selected_count());
            }
            Err(Error::Config(message)) => {
                warn!("benchmark: skipping {name}: {message}");
                entry.skipped = Some(message);
            }
            Err(e) => return Err(e),
        }
        entries.push(entry);
    }
    write_json(&inputs.run.root().join("benchmark").join("summary.json"), &entries)?;
    Ok(entries)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub pairs: usize,
    /// `None` when fewer than two pairs or a constant column.
    pub pearson_s1_s2: Option<f64>,
}

/// Pearson correlation of raw S1 against raw S2, plus a CSV of the pairs.
pub fn correlation_report(lines: &[ScoreLine]) -> (CorrelationReport, String) {
    let s1: Vec<f64> = lines.iter().map(|l| l.s1_raw).collect();
    let s2: Vec<f64> = lines.iter().map(|l| l.s2_raw).collect();
    let mut csv = String::from("sample_id,index,s1_raw,s2_raw\n");
    for l in lines {
        csv.push_str(&format!("{},{},{},{}\n", csv_field(&l.sample_id), l.index, l.s1_raw, l.s2_raw));
    }
    (CorrelationReport { pairs: lines.len(), pearson_s1_s2: pearson(&s1, &s2) }, csv)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn write_correlation(run: &RunDir, lines: &[ScoreLine]) -> Result<CorrelationReport> {
    let (report, csv) = correlation_report(lines);
    write_text(&run.scatter_csv(), &csv)?;
    Ok(report)
}
