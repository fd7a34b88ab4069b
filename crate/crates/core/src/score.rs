//! Teacher scores, run-wide normalization, weighted combination and
//! per-sample argmax selection.
//!
//! For a candidate image `I'` of a real sample `(I, T, B)` and a grounder `G`:
//!
//! * hardness `S1 = IoU(G(I', T), B)`
//! * overfitting `S2 = 1 - IoU(G(zero_inside(I', B), T), B)`
//! * penalty `P = IoU(G(I', ""), B)`
//!
//! Each column is z-scored over the whole run, then
//! `combined = λ1·S1 + λ2·S2 + λP·P` and the highest-scoring candidate of each
//! sample is kept, ties going to the lowest index.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::geometry::{iou, BBox};
use crate::stats::zscore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawScores {
    pub s1: f64,
    pub s2: f64,
    pub p: f64,
}

impl RawScores {
    /// Scores from the three grounder predictions, all already in pixels.
    pub fn from_predictions(gt: &BBox, with_text: &BBox, inside_zeroed: &BBox, empty_text: &BBox) -> Self {
        Self { s1: iou(with_text, gt), s2: 1.0 - iou(inside_zeroed, gt), p: iou(empty_text, gt) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormScores {
    pub s1: f64,
    pub s2: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub sample_id: String,
    pub index: u32,
    pub raw: RawScores,
    /// Set by [`normalize_scores`].
    pub norm: Option<NormScores>,
    /// Set by [`apply_weights`].
    pub combined: Option<f64>,
}

impl ScoreRecord {
    pub fn new(sample_id: impl Into<String>, index: u32, raw: RawScores) -> Self {
        Self { sample_id: sample_id.into(), index, raw, norm: None, combined: None }
    }
}

/// Weights of the three normalized scores. Negative values are allowed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda_p: f64,
}

impl FilterWeights {
    pub const fn new(lambda1: f64, lambda2: f64, lambda_p: f64) -> Self {
        Self { lambda1, lambda2, lambda_p }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.lambda1, self.lambda2, self.lambda_p]
    }

    pub fn is_finite(&self) -> bool {
        self.lambda1.is_finite() && self.lambda2.is_finite() && self.lambda_p.is_finite()
    }
}

impl Default for FilterWeights {
    fn default() -> Self {
        Self::new(1.0, 1.0, 0.5)
    }
}

/// Z-score each raw column independently over all `records`.
pub fn normalize_scores(records: &mut [ScoreRecord]) {
    let column = |f: fn(&RawScores) -> f64| zscore(&records.iter().map(|r| f(&r.raw)).collect::<Vec<_>>());
    let s1 = column(|r| r.s1);
    let s2 = column(|r| r.s2);
    let p = column(|r| r.p);
    for (i, record) in records.iter_mut().enumerate() {
        record.norm = Some(NormScores { s1: s1[i], s2: s2[i], p: p[i] });
    }
}

/// `None` until the record has been normalized.
pub fn combine(record: &ScoreRecord, w: &FilterWeights) -> Option<f64> {
    let n = record.norm?;
    Some(w.lambda1 * n.s1 + w.lambda2 * n.s2 + w.lambda_p * n.p)
}

pub fn apply_weights(records: &mut [ScoreRecord], w: &FilterWeights) {
    for record in records {
        record.combined = combine(record, w);
    }
}

/// Index of the maximum; the first of equal maxima wins. NaNs never win.
pub fn argmax_lowest(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// Chosen candidate indices per sample, plus the samples left out because
/// their candidate group was incomplete.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Selection {
    pub chosen: BTreeMap<String, Vec<u32>>,
    pub excluded: Vec<String>,
}

impl Selection {
    pub fn selected_count(&self) -> usize {
        self.chosen.values().map(Vec::len).sum()
    }

    pub fn is_selected(&self, sample_id: &str, index: u32) -> bool {
        self.chosen.get(sample_id).is_some_and(|v| v.contains(&index))
    }
}

/// Groups keyed items by sample. A group is complete when it holds indices
/// `0..k` exactly once each; the values of complete groups come back ordered
/// by index, incomplete sample ids are returned separately.
pub fn complete_groups<'a, T>(
    items: impl IntoIterator<Item = (&'a str, u32, T)>,
    k: usize,
) -> (BTreeMap<&'a str, Vec<T>>, Vec<String>) {
    let mut slots: BTreeMap<&'a str, Vec<Option<T>>> = BTreeMap::new();
    let mut broken: BTreeMap<&'a str, ()> = BTreeMap::new();
    for (sample_id, index, value) in items {
        let group = slots.entry(sample_id).or_insert_with(|| (0..k).map(|_| None).collect());
        match group.get_mut(index as usize) {
            Some(slot @ None) => *slot = Some(value),
            _ => {
                broken.insert(sample_id, ());
            }
        }
    }
    let mut complete = BTreeMap::new();
    let mut excluded = Vec::new();
    for (sample_id, group) in slots {
        if k == 0 || broken.contains_key(sample_id) || group.iter().any(Option::is_none) {
            excluded.push(String::from(sample_id));
        } else {
            complete.insert(sample_id, group.into_iter().flatten().collect());
        }
    }
    (complete, excluded)
}

/// Keep the highest `combined` score per sample. Groups without exactly `k`
/// combined records are excluded.
pub fn select_best(records: &[ScoreRecord], k: usize) -> Selection {
    let (groups, mut excluded) =
        complete_groups(records.iter().map(|r| (r.sample_id.as_str(), r.index, r.combined)), k);
    let mut chosen = BTreeMap::new();
    for (sample_id, combined) in groups {
        let values: Option<Vec<f64>> = combined.into_iter().collect();
        match values.as_deref().and_then(argmax_lowest) {
            Some(i) => {
                chosen.insert(String::from(sample_id), alloc::vec![i as u32]);
            }
            None => excluded.push(String::from(sample_id)),
        }
    }
    excluded.sort();
    Selection { chosen, excluded }
}
