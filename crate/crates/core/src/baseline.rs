//! Reference filters the teacher scores are compared against.
//!
//! The loss-based filters use `1 - S1` as the per-candidate loss, and the
//! "class" population of the moderate filters is the whole run.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::score::{argmax_lowest, complete_groups, ScoreRecord, Selection};
use crate::seed::{derive_seed, RANDOM_FILTER_STREAM};
use crate::stats::{mean, median};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FilterMethod {
    Pobf,
    Random,
    None,
    Clip,
    ModerateLoss,
    ModerateDs,
    DifficultLoss,
}

impl FilterMethod {
    pub const ALL: [FilterMethod; 7] = [
        FilterMethod::Pobf,
        FilterMethod::Random,
        FilterMethod::None,
        FilterMethod::Clip,
        FilterMethod::ModerateLoss,
        FilterMethod::ModerateDs,
        FilterMethod::DifficultLoss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FilterMethod::Pobf => "pobf",
            FilterMethod::Random => "random",
            FilterMethod::None => "none",
            FilterMethod::Clip => "clip",
            FilterMethod::ModerateLoss => "moderate_loss",
            FilterMethod::ModerateDs => "moderate_ds",
            FilterMethod::DifficultLoss => "difficult_loss",
        }
    }

    pub fn needs_embedder(self) -> bool {
        matches!(self, FilterMethod::Clip | FilterMethod::ModerateDs)
    }

    pub fn needs_scores(self) -> bool {
        matches!(self, FilterMethod::Pobf | FilterMethod::ModerateLoss | FilterMethod::DifficultLoss)
    }
}

impl fmt::Display for FilterMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownMethod(pub String);

impl fmt::Display for UnknownMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown filter method `{}`", self.0)
    }
}

impl core::error::Error for UnknownMethod {}

impl FromStr for FilterMethod {
    type Err = UnknownMethod;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| UnknownMethod(String::from(s)))
    }
}

/// `(sample_id, candidate index)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CandidateKey {
    pub sample_id: String,
    pub index: u32,
}

impl CandidateKey {
    pub fn new(sample_id: impl Into<String>, index: u32) -> Self {
        Self { sample_id: sample_id.into(), index }
    }
}

fn finish(chosen: BTreeMap<String, Vec<u32>>, mut excluded: Vec<String>) -> Selection {
    excluded.sort();
    Selection { chosen, excluded }
}

fn per_group_pick<'a, T>(
    items: impl IntoIterator<Item = (&'a str, u32, T)>,
    k: usize,
    mut pick: impl FnMut(&str, &[T]) -> Vec<u32>,
) -> Selection {
    let (groups, excluded) = complete_groups(items, k);
    let chosen = groups.into_iter().map(|(sid, values)| (String::from(sid), pick(sid, &values))).collect();
    finish(chosen, excluded)
}

/// The index the random teacher keeps for one sample: a ChaCha8 stream
/// seeded with `derive_seed(seed, sample_id, RANDOM_FILTER_STREAM)`, first
/// output mapped to `0..k` by multiply-shift.
pub fn random_index(seed: u64, sample_id: &str, k: usize) -> u32 {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, sample_id, RANDOM_FILTER_STREAM));
    ((rng.next_u64() as u128 * k as u128) >> 64) as u32
}

pub fn random_teacher(keys: &[CandidateKey], k: usize, seed: u64) -> Selection {
    per_group_pick(keys.iter().map(|c| (c.sample_id.as_str(), c.index, ())), k, |sid, _| {
        alloc::vec![random_index(seed, sid, k)]
    })
}

/// Every candidate of every complete group.
pub fn no_teacher(keys: &[CandidateKey], k: usize) -> Selection {
    per_group_pick(keys.iter().map(|c| (c.sample_id.as_str(), c.index, ())), k, |_, _| (0..k as u32).collect())
}

/// Highest cosine similarity between candidate image and real text.
pub fn clip_teacher(cosines: &[(CandidateKey, f64)], k: usize) -> Selection {
    per_group_pick(cosines.iter().map(|(c, v)| (c.sample_id.as_str(), c.index, *v)), k, |_, v| {
        argmax_lowest(v).map(|i| i as u32).into_iter().collect()
    })
}

/// Highest loss `1 - S1`.
pub fn difficult_loss(records: &[ScoreRecord], k: usize) -> Selection {
    per_group_pick(records.iter().map(|r| (r.sample_id.as_str(), r.index, 1.0 - r.raw.s1)), k, |_, v| {
        argmax_lowest(v).map(|i| i as u32).into_iter().collect()
    })
}

/// Moderate rule: the median of `values` is taken over every candidate of
/// every complete group, then each group keeps the candidate whose value is
/// closest to it (lowest index on ties).
pub fn moderate(values: &[(CandidateKey, f64)], k: usize) -> Selection {
    let (groups, _) = complete_groups(values.iter().map(|(c, v)| (c.sample_id.as_str(), c.index, *v)), k);
    let population: Vec<f64> = groups.values().flatten().copied().collect();
    // No complete group means no population and nothing to pick.
    let center = median(&population).unwrap_or(0.0);
    per_group_pick(values.iter().map(|(c, v)| (c.sample_id.as_str(), c.index, *v)), k, |_, v| {
        let closeness: Vec<f64> = v.iter().map(|d| -libm::fabs(d - center)).collect();
        argmax_lowest(&closeness).map(|i| i as u32).into_iter().collect()
    })
}

/// Moderate-Loss: `d = loss - mean(loss over run)` with `loss = 1 - S1`.
pub fn moderate_loss(records: &[ScoreRecord], k: usize) -> Selection {
    let losses: Vec<f64> = records.iter().map(|r| 1.0 - r.raw.s1).collect();
    let center = mean(&losses).unwrap_or(0.0);
    let values: Vec<(CandidateKey, f64)> = records
        .iter()
        .zip(&losses)
        .map(|(r, loss)| (CandidateKey::new(r.sample_id.clone(), r.index), loss - center))
        .collect();
    moderate(&values, k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingDimensionMismatch {
    pub expected: usize,
    pub actual: usize,
}

impl fmt::Display for EmbeddingDimensionMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "embedding dimension {} differs from {}", self.actual, self.expected)
    }
}

impl core::error::Error for EmbeddingDimensionMismatch {}

/// Element-wise mean of equally sized vectors.
pub fn centroid(vectors: &[&[f64]]) -> Result<Vec<f64>, EmbeddingDimensionMismatch> {
    let Some(first) = vectors.first() else {
        return Ok(Vec::new());
    };
    let mut sum = alloc::vec![0.0; first.len()];
    for v in vectors {
        if v.len() != sum.len() {
            return Err(EmbeddingDimensionMismatch { expected: sum.len(), actual: v.len() });
        }
        for (s, x) in sum.iter_mut().zip(v.iter()) {
            *s += x;
        }
    }
    let n = vectors.len() as f64;
    Ok(sum.into_iter().map(|s| s / n).collect())
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = libm::sqrt(a.iter().map(|x| x * x).sum());
    let nb = libm::sqrt(b.iter().map(|x| x * x).sum());
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Moderate-DS: `d = ‖e - centroid(run embeddings)‖₂`.
pub fn moderate_ds(embeddings: &[(CandidateKey, Vec<f64>)], k: usize) -> Result<Selection, EmbeddingDimensionMismatch> {
    let refs: Vec<&[f64]> = embeddings.iter().map(|(_, e)| e.as_slice()).collect();
    let center = centroid(&refs)?;
    let values: Vec<(CandidateKey, f64)> =
        embeddings.iter().map(|(key, e)| (key.clone(), euclidean(e, &center))).collect();
    Ok(moderate(&values, k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::RawScores;
    use alloc::vec;

    fn keys(samples: &[&str], k: u32) -> Vec<CandidateKey> {
        samples.iter().flat_map(|s| (0..k).map(move |i| CandidateKey::new(*s, i))).collect()
    }

    fn s1_records(sid: &str, s1: &[f64]) -> Vec<ScoreRecord> {
        s1.iter()
            .enumerate()
            .map(|(i, &v)| ScoreRecord::new(sid, i as u32, RawScores { s1: v, s2: 0.0, p: 0.0 }))
            .collect()
    }

    #[test]
    fn method_names_round_trip() {
        for m in FilterMethod::ALL {
            assert_eq!(m.name().parse::<FilterMethod>(), Ok(m));
        }
        assert!("clipp".parse::<FilterMethod>().is_err());
    }

    #[test]
    fn difficult_loss_worked_example() {
        let sel = difficult_loss(&s1_records("a", &[0.9, 0.1, 0.5, 0.5]), 4);
        assert_eq!(sel.chosen["a"], vec![1]);
    }

    #[test]
    fn no_teacher_takes_everything() {
        let sel = no_teacher(&keys(&["a", "b", "c"], 4), 4);
        assert_eq!(sel.selected_count(), 12);
    }

    #[test]
    fn random_is_seed_deterministic_and_in_range() {
        let ks = keys(&["a", "b", "c", "d", "e"], 4);
        let first = random_teacher(&ks, 4, 0);
        assert_eq!(first, random_teacher(&ks, 4, 0));
        assert!(first.chosen.values().all(|v| v.len() == 1 && v[0] < 4));
    }

    #[test]
    fn moderate_prefers_median() {
        // Run median of [0, 1, 2, 10, 3, 4, 5, 6] is 3.5.
        let values: Vec<(CandidateKey, f64)> = [0.0, 1.0, 2.0, 10.0, 3.0, 4.0, 5.0, 6.0]
            .iter()
            .enumerate()
            .map(|(i, &v)| (CandidateKey::new(if i < 4 { "a" } else { "b" }, (i % 4) as u32), v))
            .collect();
        let sel = moderate(&values, 4);
        assert_eq!(sel.chosen["a"], vec![2]);
        assert_eq!(sel.chosen["b"], vec![0]);
    }

    #[test]
    fn moderate_ds_rejects_mixed_dimensions() {
        let e = vec![(CandidateKey::new("a", 0), vec![1.0, 0.0]), (CandidateKey::new("a", 1), vec![1.0])];
        assert!(moderate_ds(&e, 2).is_err());
    }

    #[test]
    fn cosine_of_self_is_one() {
        let v = [0.3, -0.4, 0.5];
        assert!((cosine(&v, &v) - 1.0).abs() < 1e-15);
    }
}
