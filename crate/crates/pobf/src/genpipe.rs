//! Candidate generation: K paint-outside-the-box images per training sample
//! plus one cropped-object caption, persisted under the run directory.
//!
//! Per sample: scene caption `C` of the whole image, object caption `T'` of
//! the box crop (shared by all candidates), then `K` inpaintings of the
//! outside mask prompted with `C`, candidate `j` seeded with
//! `derive_seed(run_seed, sample_id, j)`. A sample either yields all `K`
//! candidates or none.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::mpsc;

use log::{info, warn};
use pobf_core::geometry::pixels_inside;
use pobf_core::seed::{derive_seed, OBJECT_CAPTION_STREAM, SCENE_CAPTION_STREAM};
use pobf_core::{outside_mask, ImageSize};
use serde::{Deserialize, Serialize};

use crate::backends::{caption_region, inpaint_preserving, BackendError, Captioner, GenerationParams, Inpainter};
use crate::error::{Error, Result};
use crate::imageio::read_image;
use crate::manifest::{GroundingSample, LoadedManifest, Split};
use crate::run::{
    check_path_component, create_dir_all, read_json, read_jsonl, write_bytes, write_json, write_jsonl, RunDir,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateFlag {
    ClampedBox,
    DegenerateMask,
}

/// One generated image and its provenance. Serializes to the exact
/// candidates.jsonl layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub sample_id: String,
    pub index: u32,
    /// Relative to the run directory.
    pub image_path: String,
    pub scene_caption: String,
    pub object_caption: String,
    pub strength: f64,
    pub steps: u32,
    pub guidance_scale: f64,
    pub top_p: f64,
    pub seed: u64,
    pub flags: Vec<CandidateFlag>,
}

impl Candidate {
    pub fn params(&self) -> GenerationParams {
        GenerationParams {
            strength: self.strength,
            steps: self.steps,
            guidance_scale: self.guidance_scale,
            top_p: self.top_p,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleState {
    Ok,
    DegenerateMask,
    Failed,
}

/// Per-sample line of samples.jsonl.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleStatus {
    pub sample_id: String,
    pub status: SampleState,
    pub candidates: usize,
    /// Fraction of the image outside the box (the regenerated area).
    pub outside_ratio: f64,
    pub clamped_box: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Completion marker written after all of a sample's images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DoneMarker {
    status: SampleStatus,
    candidates: Vec<Candidate>,
}

/// A successfully generated sample, images still in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSample {
    pub candidates: Vec<Candidate>,
    pub images: Vec<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Generated(GeneratedSample),
    DegenerateMask,
    Failed(String),
}

#[derive(Clone, Copy)]
pub struct GenBackends<'a> {
    pub captioner: &'a dyn Captioner,
    pub inpainter: &'a dyn Inpainter,
}

pub fn outside_ratio(size: ImageSize, sample: &GroundingSample) -> f64 {
    let inside = pixels_inside(size, &sample.bbox).count();
    1.0 - inside as f64 / size.pixel_count() as f64
}

/// Produce the `k` candidates of one sample from its encoded image.
pub fn generate_candidates(
    sample: &GroundingSample,
    image_bytes: &[u8],
    k: usize,
    params: &GenerationParams,
    run_seed: u64,
    clamped_box: bool,
    backends: GenBackends<'_>,
) -> Outcome {
    let image = match crate::imageio::decode(image_bytes) {
        Ok(img) => img,
        Err(e) => return Outcome::Failed(format!("image does not decode: {e}")),
    };
    if image.size() != sample.image_size {
        return Outcome::Failed(format!(
            "image is {}x{} but the manifest says {}x{}",
            image.width(),
            image.height(),
            sample.image_size.width,
            sample.image_size.height
        ));
    }
    let Ok(mask) = outside_mask(image.size(), &sample.bbox) else {
        return Outcome::DegenerateMask;
    };

    let run = || -> std::result::Result<GeneratedSample, BackendError> {
        let scene_params = params.with_seed(derive_seed(run_seed, &sample.id, SCENE_CAPTION_STREAM));
        let scene_caption = caption_region(backends.captioner, image_bytes, &image, None, &scene_params)?;
        let object_params = params.with_seed(derive_seed(run_seed, &sample.id, OBJECT_CAPTION_STREAM));
        let object_caption =
            caption_region(backends.captioner, image_bytes, &image, Some(sample.bbox), &object_params)?;
        let flags = if clamped_box { vec![CandidateFlag::ClampedBox] } else { Vec::new() };
        let mut out = GeneratedSample { candidates: Vec::with_capacity(k), images: Vec::with_capacity(k) };
        for j in 0..k as u32 {
            let p = params.with_seed(derive_seed(run_seed, &sample.id, j as u64));
            let png = inpaint_preserving(backends.inpainter, image_bytes, &image, &mask, &scene_caption, &p)?;
            out.images.push(png);
            out.candidates.push(Candidate {
                sample_id: sample.id.clone(),
                index: j,
                image_path: RunDir::candidate_rel_path(&sample.id, j),
                scene_caption: scene_caption.clone(),
                object_caption: object_caption.clone(),
                strength: p.strength,
                steps: p.steps,
                guidance_scale: p.guidance_scale,
                top_p: p.top_p,
                seed: p.seed,
                flags: flags.clone(),
            });
        }
        Ok(out)
    };
    match run() {
        Ok(generated) => Outcome::Generated(generated),
        Err(e) => Outcome::Failed(e.to_string()),
    }
}

#[derive(Debug, Clone)]
pub struct GenerateOptions {
    pub k: usize,
    pub params: GenerationParams,
    pub run_seed: u64,
    pub parallelism: usize,
    pub resume: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationSummary {
    pub samples: usize,
    pub generated: usize,
    pub resumed: usize,
    pub degenerate: usize,
    pub failed: usize,
    pub candidates: usize,
}

/// Samples that receive synthetic candidates.
pub fn generation_targets(manifest: &LoadedManifest) -> Vec<&GroundingSample> {
    manifest.manifest.records.iter().filter(|r| r.split == Split::Train).collect()
}

fn load_done(run: &RunDir, sample_id: &str) -> Option<DoneMarker> {
    let path = run.sample_dir(sample_id).join("done.json");
    path.exists().then(|| read_json(&path).ok()).flatten()
}

/// Generate candidates for every training sample and write the store.
///
/// Without `resume`, an existing run directory with candidates is refused.
/// With `resume`, samples holding a completion marker are kept as they are
/// and every other sample directory is discarded and regenerated.
pub fn run_generation(
    manifest: &LoadedManifest,
    image_root: &Path,
    run: &RunDir,
    opts: &GenerateOptions,
    backends: GenBackends<'_>,
) -> Result<GenerationSummary> {
    if opts.k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    opts.params.validate().map_err(Error::Config)?;
    let started = run.candidates_jsonl().exists() || run.candidates_dir().exists();
    if started && !opts.resume {
        return Err(Error::RunExists(run.root().to_path_buf()));
    }
    let targets = generation_targets(manifest);
    for s in &targets {
        check_path_component(&s.id)?;
    }
    create_dir_all(run.root())?;

    let mut done: BTreeMap<String, DoneMarker> = BTreeMap::new();
    if run.candidates_dir().exists() {
        let entries = fs::read_dir(run.candidates_dir()).map_err(|e| Error::io(run.candidates_dir(), e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(run.candidates_dir(), e))?;
            let sample_id = entry.file_name().to_string_lossy().into_owned();
            match load_done(run, &sample_id) {
                Some(marker) if marker.candidates.len() == opts.k => {
                    done.insert(sample_id, marker);
                }
                _ => {
                    info!("discarding partial sample `{sample_id}`");
                    fs::remove_dir_all(entry.path()).map_err(|e| Error::io(entry.path(), e))?;
                }
            }
        }
    }

    let mut summary = GenerationSummary { samples: targets.len(), resumed: done.len(), ..Default::default() };
    let todo: Vec<&GroundingSample> = targets.iter().copied().filter(|s| !done.contains_key(&s.id)).collect();
    let mut statuses: BTreeMap<String, SampleStatus> =
        done.iter().map(|(id, m)| (id.clone(), m.status.clone())).collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.parallelism.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let (tx, rx) = mpsc::channel::<(&GroundingSample, Outcome)>();
    let mut write_result = Ok(());
    pool.in_place_scope(|scope| {
        for &sample in &todo {
            let tx = tx.clone();
            scope.spawn(move |_| {
                let outcome = match read_image(&image_root.join(&sample.image_path)) {
                    Ok((bytes, _)) => generate_candidates(
                        sample,
                        &bytes,
                        opts.k,
                        &opts.params,
                        opts.run_seed,
                        manifest.was_clamped(&sample.id),
                        backends,
                    ),
                    Err(e) => Outcome::Failed(e.to_string()),
                };
                let _ = tx.send((sample, outcome));
            });
        }
        drop(tx);
        // Single writer: all store writes happen on this thread.
        for (sample, outcome) in rx {
            if write_result.is_err() {
                continue;
            }
            write_result = store_outcome(run, manifest, sample, outcome, &mut statuses, &mut done);
        }
    });
    write_result?;

    for s in statuses.values() {
        match s.status {
            SampleState::Ok => {}
            SampleState::DegenerateMask => summary.degenerate += 1,
            SampleState::Failed => summary.failed += 1,
        }
    }
    let candidates: Vec<Candidate> = done.into_values().flat_map(|m| m.candidates).collect();
    summary.generated = todo.len() - summary.degenerate - summary.failed;
    summary.candidates = candidates.len();
    write_jsonl(&run.candidates_jsonl(), &candidates)?;
    write_jsonl(&run.samples_jsonl(), &statuses.into_values().collect::<Vec<_>>())?;
    info!(
        "generated {} candidates ({} samples resumed, {} degenerate, {} failed)",
        summary.candidates, summary.resumed, summary.degenerate, summary.failed
    );
    Ok(summary)
}

fn store_outcome(
    run: &RunDir,
    manifest: &LoadedManifest,
    sample: &GroundingSample,
    outcome: Outcome,
    statuses: &mut BTreeMap<String, SampleStatus>,
    done: &mut BTreeMap<String, DoneMarker>,
) -> Result<()> {
    let mut status = SampleStatus {
        sample_id: sample.id.clone(),
        status: SampleState::Ok,
        candidates: 0,
        outside_ratio: outside_ratio(sample.image_size, sample),
        clamped_box: manifest.was_clamped(&sample.id),
        error: None,
    };
    match outcome {
        Outcome::Generated(generated) => {
            let dir = run.sample_dir(&sample.id);
            for (c, png) in generated.candidates.iter().zip(&generated.images) {
                write_bytes(&run.resolve(&c.image_path), png)?;
            }
            status.candidates = generated.candidates.len();
            let marker = DoneMarker { status: status.clone(), candidates: generated.candidates };
            write_json(&dir.join("done.json"), &marker)?;
            done.insert(sample.id.clone(), marker);
        }
        Outcome::DegenerateMask => {
            warn!("sample `{}`: box covers the whole image, nothing to regenerate", sample.id);
            status.status = SampleState::DegenerateMask;
        }
        Outcome::Failed(message) => {
            warn!("sample `{}` failed: {message}", sample.id);
            status.status = SampleState::Failed;
            status.error = Some(message);
        }
    }
    statuses.insert(sample.id.clone(), status);
    Ok(())
}

pub fn load_candidates(run: &RunDir) -> Result<Vec<Candidate>> {
    read_jsonl(&run.require(run.candidates_jsonl(), "generate")?)
}

pub fn load_statuses(run: &RunDir) -> Result<Vec<SampleStatus>> {
    let path = run.samples_jsonl();
    if path.exists() {
        read_jsonl(&path)
    } else {
        Ok(Vec::new())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::{MockCaptioner, MockInpainter};
    use crate::imageio::{decode, encode_png};
    use pobf_core::{BBox, RgbImage};

    fn sample(bbox: BBox) -> GroundingSample {
        GroundingSample {
            id: "s".into(),
            image_path: "s.png".into(),
            image_size: ImageSize::new(16, 12),
            text: "the thing".into(),
            bbox,
            split: Split::Train,
        }
    }

    fn image() -> Vec<u8> {
        let mut img = RgbImage::filled(ImageSize::new(16, 12), [40, 80, 120]);
        for x in 0..16 {
            img.set_pixel(x, 5, [x as u8 * 10, 0, 255]);
        }
        encode_png(&img)
    }

    fn backends() -> (MockCaptioner, MockInpainter) {
        (MockCaptioner { seed: 1 }, MockInpainter { seed: 1 })
    }

    #[test]
    fn k_candidates_preserve_the_box() {
        let (c, i) = backends();
        let b = BBox::new(8.0, 6.0, 4.0, 4.0).unwrap();
        let bytes = image();
        let Outcome::Generated(g) = generate_candidates(
            &sample(b),
            &bytes,
            4,
            &GenerationParams::default(),
            9,
            false,
            GenBackends { captioner: &c, inpainter: &i },
        ) else {
            panic!("expected candidates");
        };
        assert_eq!(g.candidates.len(), 4);
        let original = decode(&bytes).unwrap();
        let rect = pixels_inside(original.size(), &b);
        for png in &g.images {
            let out = decode(png).unwrap();
            for y in rect.y0..rect.y1 {
                for x in rect.x0..rect.x1 {
                    assert_eq!(out.pixel(x as u32, y as u32), original.pixel(x as u32, y as u32));
                }
            }
        }
        assert!(g.candidates.iter().all(|c| c.object_caption == g.candidates[0].object_caption));
        let seeds: std::collections::BTreeSet<u64> = g.candidates.iter().map(|c| c.seed).collect();
        assert_eq!(seeds.len(), 4);
    }

    #[test]
    fn whole_image_box_yields_nothing() {
        let (c, i) = backends();
        let s = sample(ImageSize::new(16, 12).full_box());
        let out = generate_candidates(
            &s,
            &image(),
            4,
            &GenerationParams::default(),
            0,
            false,
            GenBackends { captioner: &c, inpainter: &i },
        );
        assert_eq!(out, Outcome::DegenerateMask);
    }

    #[test]
    fn size_mismatch_fails_the_sample() {
        let (c, i) = backends();
        let mut s = sample(BBox::new(4.0, 4.0, 2.0, 2.0).unwrap());
        s.image_size = ImageSize::new(20, 20);
        let out = generate_candidates(
            &s,
            &image(),
            2,
            &GenerationParams::default(),
            0,
            false,
            GenBackends { captioner: &c, inpainter: &i },
        );
        assert!(matches!(out, Outcome::Failed(m) if m.contains("16x12")));
    }

    #[test]
    fn outside_ratio_of_quarter_box() {
        let s = sample(BBox::new(8.0, 6.0, 8.0, 6.0).unwrap());
        assert_eq!(outside_ratio(s.image_size, &s), 0.75);
    }
}
