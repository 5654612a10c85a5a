//! Turning prediction documents into metric reports.
//!
//! Each task has a JSON prediction schema (documented in the guide) and
//! an evaluator that joins predictions to annotations and hands the
//! aligned arrays to the metrics module. Evaluators work on in-memory
//! documents so the training loop's eval hook and the command line
//! share one code path; [`evaluate_files`] is the file-based entry.

use std::collections::BTreeMap;
use std::path::Path;

use crate::datasets::instances::parse_segmentation;
use crate::datasets::{
    load_instances, load_polyvore, parse_attribute_file, parse_landmark_file,
    parse_retrieval_split, AttributeFile, CompatQuestion, FitbQuestion, InstanceSet,
    LandmarkFile, RetrievalRecord, Role,
};
use crate::error::{Error, Result};
use crate::json::{self, Value};
use crate::metrics::{self, Detection, DetectionEvalParams, LandmarkEvalPair, MetricReport};

/// k values reported for attribute top-k metrics, trimmed to the
/// attribute count; top-c stands in when every default exceeds c.
pub fn attribute_ks(num_attrs: usize) -> Vec<usize> {
    let ks: Vec<usize> = [3usize, 5]
        .iter()
        .copied()
        .filter(|k| *k <= num_attrs)
        .collect();
    if ks.is_empty() {
        vec![num_attrs]
    } else {
        ks
    }
}

/// k values reported for retrieval recall@k, trimmed to gallery size.
pub fn retrieval_ks(gallery_len: usize) -> Vec<usize> {
    [1usize, 5, 10, 20, 50]
        .iter()
        .copied()
        .filter(|k| *k <= gallery_len)
        .collect()
}

/// Pixel thresholds of the landmark detection-rate curve.
pub fn pdl_thresholds() -> Vec<f64> {
    (1..=10).map(f64::from).collect()
}

/// Top-k recall and accuracy at every default k.
pub fn attribute_report(scores: &[Vec<f64>], gts: &[Vec<bool>]) -> Result<MetricReport> {
    let c = scores.first().map(|r| r.len()).unwrap_or(0);
    let mut report = MetricReport::default();
    for k in attribute_ks(c) {
        let (recall, accuracy, _) = metrics::per_attribute_topk(scores, gts, k)?;
        report.scalar(format!("recall_top{k}"), recall);
        report.scalar(format!("accuracy_top{k}"), accuracy);
    }
    report.meta("images", Value::Int(scores.len() as i64));
    report.meta("attributes", Value::Int(c as i64));
    Ok(report)
}

/// Normalized error plus the detection-rate curve. Predictions are
/// pixel coordinates, one `(x, y)` per landmark per record.
pub fn landmark_report(preds_px: &[Vec<(f64, f64)>], file: &LandmarkFile) -> Result<MetricReport> {
    if preds_px.len() != file.records.len() {
        return Err(Error::Metric(format!(
            "{} prediction rows for {} landmark records",
            preds_px.len(),
            file.records.len()
        )));
    }
    let (w, h) = (file.width as f64, file.height as f64);
    let mut pairs = Vec::new();
    let mut flat_pred = Vec::new();
    let mut flat_gt = Vec::new();
    let mut flat_vis = Vec::new();
    for (row, record) in preds_px.iter().zip(&file.records) {
        if row.len() != file.num_landmarks {
            return Err(Error::Metric(format!(
                "image \"{}\" has {} predicted landmarks, expected {}",
                record.image_path,
                row.len(),
                file.num_landmarks
            )));
        }
        for (&(px, py), lm) in row.iter().zip(&record.landmarks) {
            pairs.push(LandmarkEvalPair {
                dx: px - lm.x,
                dy: py - lm.y,
                w,
                h,
                visible: lm.is_visible(),
            });
            flat_pred.push((px, py));
            flat_gt.push((lm.x, lm.y));
            flat_vis.push(lm.is_visible());
        }
    }
    let mut report = MetricReport::default();
    report.scalar("normalized_error", metrics::normalized_error(&pairs)?);
    report.curve(
        "pdl",
        metrics::pdl_curve(&flat_pred, &flat_gt, &flat_vis, &pdl_thresholds())?,
    );
    report.meta("images", Value::Int(file.records.len() as i64));
    report.meta("landmarks", Value::Int(file.num_landmarks as i64));
    Ok(report)
}

/// Recall@k at every default k; `embeddings` is aligned with `records`,
/// and only query and gallery rows are read.
pub fn retrieval_report(
    embeddings: &[Vec<f64>],
    records: &[RetrievalRecord],
) -> Result<MetricReport> {
    if embeddings.len() != records.len() {
        return Err(Error::Metric(format!(
            "{} embeddings for {} split records",
            embeddings.len(),
            records.len()
        )));
    }
    let mut query_embs = Vec::new();
    let mut query_items = Vec::new();
    let mut gallery_embs = Vec::new();
    let mut gallery_items = Vec::new();
    for (emb, record) in embeddings.iter().zip(records) {
        match record.role {
            Role::Query => {
                query_embs.push(emb.clone());
                query_items.push(record.item_id.clone());
            }
            Role::Gallery => {
                gallery_embs.push(emb.clone());
                gallery_items.push(record.item_id.clone());
            }
            Role::Train => {}
        }
    }
    let ks = retrieval_ks(gallery_embs.len());
    let recalls = metrics::retrieval_recall_at_k(
        &query_embs,
        &gallery_embs,
        &query_items,
        &gallery_items,
        &ks,
    )?;
    let mut report = MetricReport::default();
    for (k, recall) in recalls {
        report.scalar(format!("recall_at_{k}"), recall);
    }
    report.meta("queries", Value::Int(query_embs.len() as i64));
    report.meta("gallery", Value::Int(gallery_embs.len() as i64));
    Ok(report)
}

/// Fill-in-the-blank accuracy plus compatibility AUC. `choices` aligns
/// with `fitb`; `scores` (higher = more compatible) aligns with
/// `compat`.
pub fn compat_report(
    choices: &[usize],
    fitb: &[FitbQuestion],
    scores: &[f64],
    compat: &[CompatQuestion],
) -> Result<MetricReport> {
    if scores.len() != compat.len() {
        return Err(Error::Metric(format!(
            "{} outfit scores for {} compatibility questions",
            scores.len(),
            compat.len()
        )));
    }
    let labels: Vec<bool> = compat.iter().map(|q| q.label).collect();
    let mut report = MetricReport::default();
    report.scalar("fitb_accuracy", metrics::fitb_accuracy(choices, fitb)?);
    report.scalar("compat_auc", metrics::roc_auc(scores, &labels)?);
    report.meta("fitb_questions", Value::Int(fitb.len() as i64));
    report.meta("compat_questions", Value::Int(compat.len() as i64));
    Ok(report)
}

fn doc_map<'a>(v: &'a Value, what: &str) -> Result<&'a BTreeMap<String, Value>> {
    v.as_map()
        .ok_or_else(|| Error::Metric(format!("{what} must be a mapping, found {}", v.kind())))
}

fn doc_field<'a>(map: &'a BTreeMap<String, Value>, key: &str, what: &str) -> Result<&'a Value> {
    map.get(key)
        .ok_or_else(|| Error::Metric(format!("{what} is missing the \"{key}\" field")))
}

fn doc_str<'a>(map: &'a BTreeMap<String, Value>, key: &str, what: &str) -> Result<&'a str> {
    let v = doc_field(map, key, what)?;
    v.as_str()
        .ok_or_else(|| Error::Metric(format!("{what}.{key} must be a string, found {}", v.kind())))
}

fn doc_f64(map: &BTreeMap<String, Value>, key: &str, what: &str) -> Result<f64> {
    let v = doc_field(map, key, what)?;
    v.as_f64()
        .ok_or_else(|| Error::Metric(format!("{what}.{key} must be a number, found {}", v.kind())))
}

fn doc_list<'a>(map: &'a BTreeMap<String, Value>, key: &str, what: &str) -> Result<&'a [Value]> {
    let v = doc_field(map, key, what)?;
    v.as_list()
        .ok_or_else(|| Error::Metric(format!("{what}.{key} must be a list, found {}", v.kind())))
}

fn number_list(values: &[Value], what: &str) -> Result<Vec<f64>> {
    values
        .iter()
        .map(|v| {
            v.as_f64()
                .ok_or_else(|| Error::Metric(format!("{what} must hold numbers, found {}", v.kind())))
        })
        .collect()
}

/// Checks the document's `task` tag and returns its root mapping.
fn open_doc<'a>(doc: &'a Value, task: &str) -> Result<&'a BTreeMap<String, Value>> {
    let map = doc_map(doc, "prediction document")?;
    let found = doc_str(map, "task", "prediction document")?;
    if found != task {
        return Err(Error::Metric(format!(
            "prediction document is for task \"{found}\", expected \"{task}\""
        )));
    }
    Ok(map)
}

/// Per-image prediction entries keyed by image path.
fn items_by_image<'a>(
    map: &'a BTreeMap<String, Value>,
) -> Result<BTreeMap<&'a str, &'a BTreeMap<String, Value>>> {
    let mut by_image = BTreeMap::new();
    for (i, item) in doc_list(map, "items", "prediction document")?.iter().enumerate() {
        let item = doc_map(item, &format!("items[{i}]"))?;
        let image = doc_str(item, "image", &format!("items[{i}]"))?;
        if by_image.insert(image, item).is_some() {
            return Err(Error::Metric(format!("duplicate prediction for image \"{image}\"")));
        }
    }
    Ok(by_image)
}

fn lookup<'a>(
    by_image: &BTreeMap<&str, &'a BTreeMap<String, Value>>,
    image: &str,
) -> Result<&'a BTreeMap<String, Value>> {
    by_image
        .get(image)
        .copied()
        .ok_or_else(|| Error::Metric(format!("no prediction for image \"{image}\"")))
}

/// Attribute predictions: `{"task": "attribute", "items": [{"image",
/// "scores": [c numbers]}]}` joined against the annotation file.
pub fn evaluate_attribute_doc(doc: &Value, file: &AttributeFile) -> Result<MetricReport> {
    let map = open_doc(doc, "attribute")?;
    let by_image = items_by_image(map)?;
    let mut scores = Vec::with_capacity(file.records.len());
    let mut gts = Vec::with_capacity(file.records.len());
    for record in &file.records {
        let item = lookup(&by_image, &record.image_path)?;
        let row = number_list(
            doc_list(item, "scores", &record.image_path)?,
            &format!("{}.scores", record.image_path),
        )?;
        scores.push(row);
        gts.push(record.labels.clone());
    }
    attribute_report(&scores, &gts)
}

/// Landmark predictions: `{"task": "landmark", "items": [{"image",
/// "landmarks": [[x, y] ...]}]}` with pixel coordinates.
pub fn evaluate_landmark_doc(doc: &Value, file: &LandmarkFile) -> Result<MetricReport> {
    let map = open_doc(doc, "landmark")?;
    let by_image = items_by_image(map)?;
    let mut preds = Vec::with_capacity(file.records.len());
    for record in &file.records {
        let item = lookup(&by_image, &record.image_path)?;
        let what = format!("{}.landmarks", record.image_path);
        let mut row = Vec::new();
        for point in doc_list(item, "landmarks", &record.image_path)? {
            let xy = number_list(
                point
                    .as_list()
                    .ok_or_else(|| Error::Metric(format!("{what} must hold [x, y] pairs")))?,
                &what,
            )?;
            if xy.len() != 2 {
                return Err(Error::Metric(format!(
                    "{what} must hold [x, y] pairs, found {} numbers",
                    xy.len()
                )));
            }
            row.push((xy[0], xy[1]));
        }
        preds.push(row);
    }
    landmark_report(&preds, file)
}

/// Retrieval predictions: `{"task": "retrieval", "items": [{"image",
/// "embedding": [...]}]}`; every query and gallery image needs one.
pub fn evaluate_retrieval_doc(doc: &Value, records: &[RetrievalRecord]) -> Result<MetricReport> {
    let map = open_doc(doc, "retrieval")?;
    let by_image = items_by_image(map)?;
    let mut embeddings = Vec::with_capacity(records.len());
    for record in records {
        if record.role == Role::Train {
            // Train rows are not evaluated; a placeholder keeps alignment.
            embeddings.push(Vec::new());
            continue;
        }
        let item = lookup(&by_image, &record.image_path)?;
        embeddings.push(number_list(
            doc_list(item, "embedding", &record.image_path)?,
            &format!("{}.embedding", record.image_path),
        )?);
    }
    retrieval_report(&embeddings, records)
}

/// Compatibility predictions: `{"task": "compat", "fitb":
/// [{"question_id", "choice"}], "outfit_scores": [{"question_id",
/// "score"}]}`, graded against the question files.
pub fn evaluate_compat_doc(
    doc: &Value,
    fitb: &[FitbQuestion],
    compat: &[CompatQuestion],
) -> Result<MetricReport> {
    let map = open_doc(doc, "compat")?;
    let mut choice_by_id: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, entry) in doc_list(map, "fitb", "prediction document")?.iter().enumerate() {
        let entry = doc_map(entry, &format!("fitb[{i}]"))?;
        let id = doc_str(entry, "question_id", &format!("fitb[{i}]"))?;
        let choice = doc_f64(entry, "choice", &format!("fitb[{i}]"))?;
        if choice < 0.0 || choice.fract() != 0.0 {
            return Err(Error::Metric(format!(
                "fitb[{i}].choice must be a non-negative integer"
            )));
        }
        if choice_by_id.insert(id, choice as usize).is_some() {
            return Err(Error::Metric(format!("duplicate fitb answer for \"{id}\"")));
        }
    }
    let mut score_by_id: BTreeMap<&str, f64> = BTreeMap::new();
    for (i, entry) in doc_list(map, "outfit_scores", "prediction document")?.iter().enumerate() {
        let entry = doc_map(entry, &format!("outfit_scores[{i}]"))?;
        let id = doc_str(entry, "question_id", &format!("outfit_scores[{i}]"))?;
        let score = doc_f64(entry, "score", &format!("outfit_scores[{i}]"))?;
        if score_by_id.insert(id, score).is_some() {
            return Err(Error::Metric(format!("duplicate outfit score for \"{id}\"")));
        }
    }
    let choices: Vec<usize> = fitb
        .iter()
        .map(|q| {
            choice_by_id
                .get(q.question_id.as_str())
                .copied()
                .ok_or_else(|| Error::Metric(format!("no answer for question \"{}\"", q.question_id)))
        })
        .collect::<Result<_>>()?;
    let scores: Vec<f64> = compat
        .iter()
        .map(|q| {
            score_by_id
                .get(q.question_id.as_str())
                .copied()
                .ok_or_else(|| Error::Metric(format!("no score for question \"{}\"", q.question_id)))
        })
        .collect::<Result<_>>()?;
    compat_report(&choices, fitb, &scores, compat)
}

/// Detection predictions: `{"task": "instances", "detections":
/// [{"image_id", "category_id", "bbox": [x,y,w,h], "score",
/// "segmentation"?}]}` in the annotation's id spaces.
pub fn evaluate_instances_doc(doc: &Value, set: &InstanceSet) -> Result<MetricReport> {
    let map = open_doc(doc, "instances")?;
    let mut dets = Vec::new();
    for (i, entry) in doc_list(map, "detections", "prediction document")?.iter().enumerate() {
        let what = format!("detections[{i}]");
        let entry = doc_map(entry, &what)?;
        let bbox = number_list(doc_list(entry, "bbox", &what)?, &format!("{what}.bbox"))?;
        if bbox.len() != 4 {
            return Err(Error::Metric(format!(
                "{what}.bbox must be [x, y, w, h], found {} numbers",
                bbox.len()
            )));
        }
        let int_field = |key: &str| -> Result<i64> {
            let v = doc_field(entry, key, &what)?;
            v.as_i64()
                .ok_or_else(|| Error::Metric(format!("{what}.{key} must be an integer, found {}", v.kind())))
        };
        let segmentation = match entry.get("segmentation") {
            None | Some(Value::Null) => None,
            Some(v) => Some(parse_segmentation(v, i as i64).map_err(|e| {
                Error::Metric(format!("{what}.segmentation: {e}"))
            })?),
        };
        dets.push(Detection {
            image_id: int_field("image_id")?,
            category_id: int_field("category_id")?,
            score: doc_f64(entry, "score", &what)?,
            bbox: [bbox[0], bbox[1], bbox[2], bbox[3]],
            segmentation,
        });
    }
    metrics::evaluate_detections(&dets, set, &DetectionEvalParams::default())
}

/// File-based evaluation: reads a prediction document and the task's
/// annotation source (a file, or a directory for compat) and grades it.
pub fn evaluate_files(task: &str, predictions: &Path, annotations: &Path) -> Result<MetricReport> {
    let text = std::fs::read_to_string(predictions).map_err(|e| Error::io(predictions, e))?;
    let doc = json::parse_named(&text, &predictions.display().to_string())?;
    match task {
        "attribute" => {
            let ann = std::fs::read_to_string(annotations).map_err(|e| Error::io(annotations, e))?;
            let file = parse_attribute_file(&ann, &annotations.display().to_string())?;
            evaluate_attribute_doc(&doc, &file)
        }
        "landmark" => {
            let ann = std::fs::read_to_string(annotations).map_err(|e| Error::io(annotations, e))?;
            let file = parse_landmark_file(&ann, &annotations.display().to_string())?;
            evaluate_landmark_doc(&doc, &file)
        }
        "retrieval" => {
            let ann = std::fs::read_to_string(annotations).map_err(|e| Error::io(annotations, e))?;
            let records = parse_retrieval_split(&ann, &annotations.display().to_string())?;
            evaluate_retrieval_doc(&doc, &records)
        }
        "compat" => {
            let set = load_polyvore(annotations)?;
            evaluate_compat_doc(&doc, &set.fitb, &set.compat)
        }
        "instances" => {
            let set = load_instances(annotations)?;
            evaluate_instances_doc(&doc, &set)
        }
        other => Err(Error::Config(format!(
            "unknown task \"{other}\" (known: attribute, landmark, retrieval, compat, instances)"
        ))),
    }
}
