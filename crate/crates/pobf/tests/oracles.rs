//! Library outputs checked against independent re-derivations.

use pobf::backends::mock::{MockEmbedder, MockGrounder, OracleTable, EMBED_DIM};
use pobf::backends::{EmbedPayload, Embedder, Grounder};
use pobf::filter::SelectionFile;
use pobf::filter::{correlation_report, ScoreLine};
use pobf::genpipe::{Candidate, CandidateFlag};
use pobf::manifest::{GroundingSample, Manifest, Split};
use pobf::mixer::{build_mix, summarize_mix, MixMode, MixPolicy};
use pobf_core::{BBox, ImageSize, NormBox};

mod common;

use common::reference::{box_muller, fnv, iou_ref, splitmix, uniform, words};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn reference_hash_matches_known_values() {
    assert_eq!(fnv(b"a"), 0xaf63_dc4c_8601_ec8c);
    assert_eq!(splitmix(0), 0xe220_a839_7b1d_cdaf);
    assert_eq!(fnv(b"a"), pobf_core::seed::fnv1a64(b"a"));
}

#[test]
fn noisy_grounder_matches_recomputation() {
    let truth = [0.4, 0.55, 0.3, 0.2];
    let mut table = OracleTable::default();
    table.insert_text("a red bus", NormBox(truth));
    let (sigma, seed) = (0.07, 99u64);
    let g = MockGrounder::noisy(table, sigma, seed);
    let size = ImageSize::new(640, 480);
    let gt = [truth[0] * 640.0, truth[1] * 480.0, truth[2] * 640.0, truth[3] * 480.0];
    for n in 0..50u32 {
        let image = format!("image bytes {n}").into_bytes();
        let got = g.ground(&image, "a red bus").unwrap().0;
        let (ih, th) = (fnv(&image), fnv(b"a red bus"));
        let expected: Vec<f64> = (0..4u64)
            .map(|i| {
                let z = box_muller(words(&[seed, ih, th, 2 * i]), words(&[seed, ih, th, 2 * i + 1]));
                (truth[i as usize] + sigma * z).clamp(0.0, 1.0)
            })
            .collect();
        for i in 0..4 {
            assert!((got[i] - expected[i]).abs() < 1e-12, "component {i}: {} vs {}", got[i], expected[i]);
        }
        let px = pobf_core::geometry::denormalize_box(got, size).unwrap();
        let ours = pobf_core::iou(&px, &BBox::new(gt[0], gt[1], gt[2], gt[3]).unwrap());
        let theirs = iou_ref(px.to_array(), gt);
        assert!((ours - theirs).abs() < 1e-9);
    }
}

#[test]
fn mock_embedder_matches_recomputation() {
    let e = MockEmbedder { seed: 4 };
    for (tag, payload) in [(0u64, EmbedPayload::Text("left dog")), (1, EmbedPayload::Image(b"\x89PNG fake"))] {
        let bytes: &[u8] = match payload {
            EmbedPayload::Text(t) => t.as_bytes(),
            EmbedPayload::Image(b) => b,
        };
        let h = fnv(bytes);
        let raw: Vec<f64> = (0..EMBED_DIM as u64)
            .map(|i| box_muller(words(&[4, tag, h, 2 * i]), words(&[4, tag, h, 2 * i + 1])))
            .collect();
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        let got = e.embed(payload).unwrap();
        for (g, r) in got.iter().zip(&raw) {
            assert!((g - r / norm).abs() < 1e-12);
        }
    }
    let a = e.embed(EmbedPayload::Text("x")).unwrap();
    let b = e.embed(EmbedPayload::Text("y")).unwrap();
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    assert!((pobf_core::baseline::cosine(&a, &b) - dot).abs() < 1e-12);
}

// Pearson via sums of products, a different formulation from the library's.
fn pearson_sums(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (sx, sy): (f64, f64) = (xs.iter().sum(), ys.iter().sum());
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let syy: f64 = ys.iter().map(|y| y * y).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

fn lines(pairs: &[(f64, f64)]) -> Vec<ScoreLine> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, &(s1, s2))| ScoreLine {
            sample_id: "a".into(),
            index: i as u32,
            s1_raw: s1,
            s2_raw: s2,
            p_raw: 0.0,
            s1_norm: 0.0,
            s2_norm: 0.0,
            p_norm: 0.0,
            combined: 0.0,
            selected: false,
        })
        .collect()
}

#[test]
fn pearson_four_point_fixture() {
    let pairs = [(0.0, 1.0), (1.0, 0.0), (0.5, 0.5), (0.2, 0.9)];
    let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    let got = correlation_report(&lines(&pairs)).0.pearson_s1_s2.unwrap();
    assert!((got - pearson_sums(&xs, &ys)).abs() < 1e-9, "{got}");
    let same: Vec<(f64, f64)> = xs.iter().map(|&x| (x, x)).collect();
    assert!((correlation_report(&lines(&same)).0.pearson_s1_s2.unwrap() - 1.0).abs() < 1e-12);
}

fn mix_inputs(n: usize) -> (Manifest, SelectionFile, Vec<Candidate>) {
    let records: Vec<GroundingSample> = (0..n)
        .map(|i| GroundingSample {
            id: format!("s{i:05}"),
            image_path: format!("{i}.png"),
            image_size: ImageSize::new(32, 32),
            text: format!("real {i}"),
            bbox: BBox::new(16.0, 16.0, 8.0, 8.0).unwrap(),
            split: Split::Train,
        })
        .collect();
    let candidates: Vec<Candidate> = records
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
            seed: 0,
            flags: Vec::<CandidateFlag>::new(),
        })
        .collect();
    let selection = SelectionFile {
        method: "pobf".into(),
        weights: [1.0, 1.0, 0.5],
        chosen: records.iter().map(|r| (r.id.clone(), vec![0])).collect(),
    };
    (Manifest { source_name: "m".into(), records }, selection, candidates)
}

#[test]
fn materialized_mix_replays_from_the_stream() {
    let (m, sel, cands) = mix_inputs(500);
    let policy = MixPolicy { q: 0.3, mode: MixMode::Materialized, seed: 1234 };
    let mix = build_mix(&m, &sel, &cands, &policy).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    for r in &mix {
        let replaced = uniform(rng.next_u64()) < 0.3;
        assert_eq!(r.is_replaced(), replaced, "{}", r.sample.id);
        assert_eq!(r.sample.text.starts_with("alt"), replaced);
    }
}

#[test]
fn replacement_rate_is_near_q() {
    let (m, sel, cands) = mix_inputs(5000);
    let policy = MixPolicy { q: 0.3, mode: MixMode::Materialized, seed: 2024 };
    let summary = summarize_mix(&build_mix(&m, &sel, &cands, &policy).unwrap());
    assert_eq!(summary.total, 10_000);
    assert!((summary.replacement_rate - 0.3).abs() <= 0.02, "{}", summary.replacement_rate);
}
