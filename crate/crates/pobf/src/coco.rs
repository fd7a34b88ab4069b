//! Conversion of COCO-style referring-expression annotations.
//!
//! `annotations` is a COCO instances file (`images` with `id`, `file_name`,
//! `width`, `height`; `annotations` with `id`, `image_id` and a corner
//! `bbox` `[x_min, y_min, w, h]`). `refs` is a JSON array of
//! `{"ref_id", "ann_id", "split", "sentences": [{"sent_id", "sent"}]}`; every
//! sentence becomes one manifest record with id `<ref_id>_<sent_id>`.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use pobf_core::BBox;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::manifest::{source_name_of, validate_lines, LoadedManifest, SampleLine, Split};
use crate::run::read_text;

#[derive(Debug, Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
}

#[derive(Debug, Deserialize)]
struct CocoImage {
    id: u64,
    file_name: String,
    width: u32,
    height: u32,
}

#[derive(Debug, Deserialize)]
struct CocoAnnotation {
    id: u64,
    image_id: u64,
    bbox: [f64; 4],
}

#[derive(Debug, Deserialize)]
struct RefEntry {
    ref_id: u64,
    ann_id: u64,
    split: String,
    sentences: Vec<Sentence>,
}

#[derive(Debug, Deserialize)]
struct Sentence {
    sent_id: u64,
    sent: String,
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// `testA`/`testB`/`testC` style splits fold into `test`.
fn map_split(s: &str) -> Option<Split> {
    match s {
        "train" => Some(Split::Train),
        "val" => Some(Split::Val),
        _ if s.starts_with("test") => Some(Split::Test),
        _ => None,
    }
}

pub fn convert_coco_refexp(annotations: &Path, refs: &Path) -> Result<LoadedManifest> {
    let coco: CocoFile = parse_json(annotations, &read_text(annotations)?)?;
    let refs_text = read_text(refs)?;
    let entries: Vec<RefEntry> = if refs_text.trim().is_empty() { Vec::new() } else { parse_json(refs, &refs_text)? };
    convert(&coco, &entries, &source_name_of(refs))
}

fn convert(coco: &CocoFile, refs: &[RefEntry], source_name: &str) -> Result<LoadedManifest> {
    let images: HashMap<u64, &CocoImage> = coco.images.iter().map(|i| (i.id, i)).collect();
    let anns: HashMap<u64, &CocoAnnotation> = coco.annotations.iter().map(|a| (a.id, a)).collect();

    let missing: BTreeSet<u64> = refs.iter().map(|r| r.ann_id).filter(|id| !anns.contains_key(id)).collect();
    if !missing.is_empty() {
        return Err(Error::Dangling(missing.iter().map(|id| format!("annotation {id}")).collect()));
    }

    let mut lines = Vec::new();
    for (position, r) in refs.iter().enumerate() {
        let ann = anns[&r.ann_id];
        let image = images
            .get(&ann.image_id)
            .ok_or_else(|| Error::Dangling(vec![format!("image {} (annotation {})", ann.image_id, ann.id)]))?;
        let split = map_split(&r.split)
            .ok_or_else(|| Error::Validation(format!("ref {}: unknown split `{}`", r.ref_id, r.split)))?;
        let [x, y, w, h] = ann.bbox;
        let bbox =
            BBox::from_corner_xywh(x, y, w, h).map_err(|e| Error::Validation(format!("annotation {}: {e}", ann.id)))?;
        for s in &r.sentences {
            lines.push((
                position + 1,
                SampleLine {
                    id: format!("{}_{}", r.ref_id, s.sent_id),
                    image_path: image.file_name.clone(),
                    image_size: [image.width, image.height],
                    text: s.sent.clone(),
                    bbox: bbox.to_array(),
                    split,
                },
            ));
        }
    }
    validate_lines(source_name, lines)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coco() -> CocoFile {
        serde_json::from_str(
            r#"{"images":[{"id":1,"file_name":"COCO_1.jpg","width":200,"height":100}],
                "annotations":[{"id":10,"image_id":1,"bbox":[10,20,30,40],"category_id":3}]}"#,
        )
        .unwrap()
    }

    fn refs(json: &str) -> Vec<RefEntry> {
        serde_json::from_str(json).unwrap()
    }

    #[test]
    fn corner_box_becomes_center_form() {
        let m = convert(
            &coco(),
            &refs(r#"[{"ref_id":5,"ann_id":10,"split":"testA","sentences":[{"sent_id":7,"sent":"left cat"}]}]"#),
            "refs",
        )
        .unwrap();
        let r = &m.manifest.records[0];
        assert_eq!(r.id, "5_7");
        assert_eq!(r.bbox.to_array(), [25.0, 40.0, 30.0, 40.0]);
        assert_eq!(r.split, Split::Test);
        assert_eq!(r.bbox.w * r.bbox.h, 30.0 * 40.0);
    }

    #[test]
    fn empty_refs_give_empty_manifest() {
        assert!(convert(&coco(), &[], "refs").unwrap().manifest.is_empty());
    }

    #[test]
    fn shared_annotation_gives_distinct_records() {
        let m = convert(
            &coco(),
            &refs(
                r#"[{"ref_id":1,"ann_id":10,"split":"train","sentences":[{"sent_id":1,"sent":"a"}]},
                    {"ref_id":2,"ann_id":10,"split":"train","sentences":[{"sent_id":2,"sent":"b"}]}]"#,
            ),
            "refs",
        )
        .unwrap();
        let r = &m.manifest.records;
        assert_eq!(r.len(), 2);
        assert_ne!(r[0].id, r[1].id);
        assert_eq!(r[0].bbox, r[1].bbox);
    }

    #[test]
    fn dangling_refs_list_missing_annotations() {
        let err = convert(
            &coco(),
            &refs(
                r#"[{"ref_id":1,"ann_id":99,"split":"train","sentences":[]},
                    {"ref_id":2,"ann_id":98,"split":"train","sentences":[]}]"#,
            ),
            "refs",
        )
        .unwrap_err();
        assert_eq!(err.to_string(), "dangling references: annotation 98, annotation 99");
    }
}
