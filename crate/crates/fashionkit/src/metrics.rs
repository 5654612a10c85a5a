//! Evaluation metrics.
//!
//! Pure functions over immutable inputs. Every tie (score ties, distance
//! ties, top-k ties) resolves by ascending original index, so each
//! metric is a deterministic function of its inputs.

use std::collections::BTreeMap;

use crate::datasets::{FitbQuestion, InstanceSet, Mask, Segmentation};
use crate::error::{Error, Result};
use crate::json::{self, Value};

/// Per-attribute tallies behind top-k recall and accuracy: true
/// positives, true negatives, ground-truth positives, and evaluated
/// predictions per attribute.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeEvalCounts {
    pub tp: Vec<u64>,
    pub tn: Vec<u64>,
    pub g: Vec<u64>,
    pub p: Vec<u64>,
    /// Attributes with no ground-truth positives, excluded from recall.
    pub excluded: usize,
}

/// Indices of the `k` highest scores, ties broken by lower index.
pub fn topk_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("scores must not be NaN")
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    idx
}

/// Per-attribute top-k recall and accuracy. Each image's `k` highest
/// scores become its predicted attributes; per attribute, recall is
/// `tp / g` averaged over attributes that occur at all, and accuracy is
/// `(tp + tn) / images` averaged over every attribute.
pub fn per_attribute_topk(
    scores: &[Vec<f64>],
    gts: &[Vec<bool>],
    k: usize,
) -> Result<(f64, f64, AttributeEvalCounts)> {
    if scores.is_empty() {
        return Err(Error::Metric("attribute evaluation needs at least one image".into()));
    }
    if scores.len() != gts.len() {
        return Err(Error::Metric(format!(
            "{} score rows vs {} ground-truth rows",
            scores.len(),
            gts.len()
        )));
    }
    let c = scores[0].len();
    if k > c {
        return Err(Error::Metric(format!("top-{k} requested but only {c} attributes exist")));
    }
    let mut counts = AttributeEvalCounts {
        tp: vec![0; c],
        tn: vec![0; c],
        g: vec![0; c],
        p: vec![scores.len() as u64; c],
        excluded: 0,
    };
    for (img, (row, gt)) in scores.iter().zip(gts).enumerate() {
        if row.len() != c || gt.len() != c {
            return Err(Error::Metric(format!(
                "image {img} has {} scores and {} labels, expected {c} of each",
                row.len(),
                gt.len()
            )));
        }
        if row.iter().any(|s| !s.is_finite()) {
            return Err(Error::Metric(format!("image {img} has a non-finite score")));
        }
        let mut assigned = vec![false; c];
        for i in topk_indices(row, k) {
            assigned[i] = true;
        }
        for i in 0..c {
            match (assigned[i], gt[i]) {
                (true, true) => counts.tp[i] += 1,
                (false, false) => counts.tn[i] += 1,
                _ => {}
            }
            if gt[i] {
                counts.g[i] += 1;
            }
        }
    }
    let mut recall_sum = 0.0;
    let mut present = 0usize;
    let mut accuracy_sum = 0.0;
    for i in 0..c {
        if counts.g[i] > 0 {
            recall_sum += counts.tp[i] as f64 / counts.g[i] as f64;
            present += 1;
        }
        accuracy_sum += (counts.tp[i] + counts.tn[i]) as f64 / counts.p[i] as f64;
    }
    counts.excluded = c - present;
    if present == 0 {
        return Err(Error::Metric("no attribute has a ground-truth positive".into()));
    }
    Ok((recall_sum / present as f64, accuracy_sum / c as f64, counts))
}

/// Recall@k for embedding retrieval: the fraction of queries whose `k`
/// nearest gallery images (Euclidean distance, ties by gallery index)
/// include at least one image of the same item.
pub fn retrieval_recall_at_k(
    query_embs: &[Vec<f64>],
    gallery_embs: &[Vec<f64>],
    query_items: &[String],
    gallery_items: &[String],
    ks: &[usize],
) -> Result<Vec<(usize, f64)>> {
    if query_embs.len() != query_items.len() || gallery_embs.len() != gallery_items.len() {
        return Err(Error::Metric("embedding and item-id counts differ".into()));
    }
    if query_embs.is_empty() || gallery_embs.is_empty() {
        return Err(Error::Metric("retrieval evaluation needs queries and a gallery".into()));
    }
    let dim = gallery_embs[0].len();
    if query_embs.iter().chain(gallery_embs).any(|e| e.len() != dim) {
        return Err(Error::Metric("embeddings have mixed dimensions".into()));
    }
    for item in query_items {
        if !gallery_items.contains(item) {
            return Err(Error::Metric(format!(
                "query item {item} has no gallery image"
            )));
        }
    }
    let k_max = *ks.iter().max().unwrap_or(&0);
    if k_max > gallery_embs.len() || ks.iter().any(|k| *k == 0) {
        return Err(Error::Metric(format!(
            "recall@k needs 1 <= k <= {} gallery images",
            gallery_embs.len()
        )));
    }
    // hit_rank[q] = position of the first same-item gallery image.
    let mut hit_ranks = Vec::with_capacity(query_embs.len());
    for (q, item) in query_embs.iter().zip(query_items) {
        let mut order: Vec<usize> = (0..gallery_embs.len()).collect();
        let dist: Vec<f64> = gallery_embs
            .iter()
            .map(|g| {
                q.iter()
                    .zip(g)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
            .collect();
        order.sort_by(|&a, &b| {
            dist[a]
                .partial_cmp(&dist[b])
                .expect("distances must not be NaN")
                .then(a.cmp(&b))
        });
        let rank = order
            .iter()
            .position(|&g| &gallery_items[g] == item)
            .expect("checked every query is answerable");
        hit_ranks.push(rank);
    }
    Ok(ks
        .iter()
        .map(|&k| {
            let hits = hit_ranks.iter().filter(|&&r| r < k).count();
            (k, hits as f64 / hit_ranks.len() as f64)
        })
        .collect())
}

/// One predicted-vs-ground-truth landmark comparison in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandmarkEvalPair {
    pub dx: f64,
    pub dy: f64,
    pub w: f64,
    pub h: f64,
    pub visible: bool,
}

/// Normalized error: mean over all visible pairs, pooled jointly across
/// images, of `sqrt((dx/w)² + (dy/h)²)`.
pub fn normalized_error(pairs: &[LandmarkEvalPair]) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for pair in pairs {
        if !(pair.w > 0.0 && pair.h > 0.0) {
            return Err(Error::Metric(format!(
                "frame {}x{} must have positive extent",
                pair.w, pair.h
            )));
        }
        if !pair.visible {
            continue;
        }
        let nx = pair.dx / pair.w;
        let ny = pair.dy / pair.h;
        sum += (nx * nx + ny * ny).sqrt();
        n += 1;
    }
    if n == 0 {
        return Err(Error::Metric("normalized error is undefined with no visible landmarks".into()));
    }
    Ok(sum / n as f64)
}

/// Percentage-of-detected-landmarks curve: for each pixel threshold, the
/// fraction of visible landmarks whose Euclidean pixel error is within
/// it.
pub fn pdl_curve(
    pred_px: &[(f64, f64)],
    gt_px: &[(f64, f64)],
    visibility: &[bool],
    thresholds: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if pred_px.len() != gt_px.len() || pred_px.len() != visibility.len() {
        return Err(Error::Metric("prediction, ground truth, and visibility counts differ".into()));
    }
    if thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Metric("thresholds must be strictly increasing".into()));
    }
    let errors: Vec<f64> = pred_px
        .iter()
        .zip(gt_px)
        .zip(visibility)
        .filter(|(_, vis)| **vis)
        .map(|(((px, py), (gx, gy)), _)| ((px - gx).powi(2) + (py - gy).powi(2)).sqrt())
        .collect();
    if errors.is_empty() {
        return Err(Error::Metric("detection rate is undefined with no visible landmarks".into()));
    }
    Ok(thresholds
        .iter()
        .map(|&d| {
            let hits = errors.iter().filter(|e| **e <= d).count();
            (d, hits as f64 / errors.len() as f64)
        })
        .collect())
}

/// Intersection over union of two xywh boxes.
pub fn box_iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let ix = (a[0] + a[2]).min(b[0] + b[2]) - a[0].max(b[0]);
    let iy = (a[1] + a[3]).min(b[1] + b[3]) - a[1].max(b[1]);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    inter / (a[2] * a[3] + b[2] * b[3] - inter)
}

/// Intersection over union of two rasterized masks.
pub fn mask_iou(a: &Mask, b: &Mask) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::Metric(format!(
            "mask sizes differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let inter = a.intersection_count(b) as f64;
    let union = (a.count() + b.count()) as f64 - inter;
    if union <= 0.0 {
        return Ok(0.0);
    }
    Ok(inter / union)
}

/// Fraction of fill-in-the-blank questions answered correctly.
pub fn fitb_accuracy(predicted: &[usize], questions: &[FitbQuestion]) -> Result<f64> {
    if predicted.len() != questions.len() {
        return Err(Error::Metric(format!(
            "{} predictions for {} questions",
            predicted.len(),
            questions.len()
        )));
    }
    if questions.is_empty() {
        return Err(Error::Metric("no fill-in-the-blank questions to grade".into()));
    }
    let correct = predicted
        .iter()
        .zip(questions)
        .filter(|(p, q)| **p == q.answer_index)
        .count();
    Ok(correct as f64 / questions.len() as f64)
}

/// Area under the ROC curve in the Mann-Whitney formulation: over all
/// (positive, negative) pairs, a win counts 1, a score tie counts 0.5.
/// Computed by an exact integer sweep over score groups, so the result
/// equals literal pair counting bit for bit.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Metric("score and label counts differ".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Metric("scores must be finite".into()));
    }
    let n_pos = labels.iter().filter(|l| **l).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric("ROC AUC needs both a positive and a negative".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    let mut wins = 0u64;
    let mut tie_pairs = 0u64;
    let mut neg_below = 0u64;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        let mut pos_in = 0u64;
        let mut neg_in = 0u64;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            if labels[idx[j]] {
                pos_in += 1;
            } else {
                neg_in += 1;
            }
            j += 1;
        }
        wins += pos_in * neg_below;
        tie_pairs += pos_in * neg_in;
        neg_below += neg_in;
        i = j;
    }
    Ok((wins as f64 + 0.5 * tie_pairs as f64) / (n_pos as f64 * n_neg as f64))
}

/// A named bundle of scalar results, curves, and run metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub scalars: BTreeMap<String, f64>,
    pub curves: BTreeMap<String, Vec<(f64, f64)>>,
    pub metadata: BTreeMap<String, Value>,
}

impl MetricReport {
    pub fn scalar(&mut self, name: impl Into<String>, value: f64) {
        self.scalars.insert(name.into(), value);
    }

    pub fn curve(&mut self, name: impl Into<String>, points: Vec<(f64, f64)>) {
        debug_assert!(points.windows(2).all(|w| w[0].0 <= w[1].0), "curves sorted by x");
        self.curves.insert(name.into(), points);
    }

    pub fn meta(&mut self, name: impl Into<String>, value: Value) {
        self.metadata.insert(name.into(), value);
    }

    pub fn to_value(&self) -> Value {
        let scalars: BTreeMap<String, Value> = self
            .scalars
            .iter()
            .map(|(k, v)| (k.clone(), Value::Float(*v)))
            .collect();
        let curves: BTreeMap<String, Value> = self
            .curves
            .iter()
            .map(|(k, pts)| {
                let list = pts
                    .iter()
                    .map(|(x, y)| Value::List(vec![Value::Float(*x), Value::Float(*y)]))
                    .collect();
                (k.clone(), Value::List(list))
            })
            .collect();
        Value::map_from(vec![
            ("scalars", Value::Map(scalars)),
            ("curves", Value::Map(curves)),
            ("metadata", Value::Map(self.metadata.clone())),
        ])
    }

    /// Byte-stable rendering: sorted keys, floats at six decimals.
    pub fn to_string_stable(&self) -> String {
        json::to_string_styled(&self.to_value(), true, json::FloatStyle::Fixed(6))
            .expect("reports hold only finite numbers")
    }
}

/// One predicted object instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub image_id: i64,
    pub category_id: i64,
    pub score: f64,
    pub bbox: [f64; 4],
    pub segmentation: Option<Segmentation>,
}

/// Evaluation grid for detection AP.
#[derive(Debug, Clone)]
pub struct DetectionEvalParams {
    pub iou_thresholds: Vec<f64>,
    /// (name, min area inclusive, max area exclusive).
    pub area_ranges: Vec<(String, f64, f64)>,
    /// Detections kept per image and category.
    pub max_dets: usize,
}

impl Default for DetectionEvalParams {
    fn default() -> DetectionEvalParams {
        DetectionEvalParams {
            iou_thresholds: (0..10).map(|i| 0.5 + 0.05 * i as f64).collect(),
            area_ranges: vec![
                ("all".into(), 0.0, f64::INFINITY),
                ("small".into(), 0.0, 32.0 * 32.0),
                ("medium".into(), 32.0 * 32.0, 96.0 * 96.0),
                ("large".into(), 96.0 * 96.0, f64::INFINITY),
            ],
            max_dets: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EvalKind {
    Bbox,
    Mask,
}

impl EvalKind {
    fn prefix(self) -> &'static str {
        match self {
            EvalKind::Bbox => "bbox",
            EvalKind::Mask => "mask",
        }
    }
}

struct PreparedDet {
    index: usize,
    image_id: i64,
    score: f64,
    area: f64,
    bbox: [f64; 4],
    mask: Option<Mask>,
}

struct PreparedGt {
    image_id: i64,
    area: f64,
    crowd: bool,
    bbox: [f64; 4],
    mask: Option<Mask>,
}

/// AP sweep over IoU thresholds and area ranges in the COCO style:
/// score-ordered greedy matching, ignore regions that neither reward nor
/// penalize, 101-point interpolated precision, averaged over categories
/// and then thresholds. Masks are evaluated when every detection and
/// ground truth carries one. Undefined cells (no ground truth in range)
/// report the conventional −1.
pub fn evaluate_detections(
    dets: &[Detection],
    gts: &InstanceSet,
    params: &DetectionEvalParams,
) -> Result<MetricReport> {
    let image_dims: BTreeMap<i64, (u32, u32)> = gts
        .images
        .iter()
        .map(|img| (img.id, (img.width, img.height)))
        .collect();
    let category_ids: Vec<i64> = gts.categories.iter().map(|c| c.id).collect();
    for (i, d) in dets.iter().enumerate() {
        if !image_dims.contains_key(&d.image_id) {
            return Err(Error::Validation(format!(
                "detection {i} references unknown image {}",
                d.image_id
            )));
        }
        if !category_ids.contains(&d.category_id) {
            return Err(Error::Validation(format!(
                "detection {i} references unknown category {}",
                d.category_id
            )));
        }
        if !(d.score.is_finite() && (0.0..=1.0).contains(&d.score)) {
            return Err(Error::Validation(format!(
                "detection {i} score {} is outside [0, 1]",
                d.score
            )));
        }
        if !(d.bbox[2] > 0.0 && d.bbox[3] > 0.0) {
            return Err(Error::Validation(format!(
                "detection {i} box has non-positive extent"
            )));
        }
    }
    let masked_dets = dets.iter().filter(|d| d.segmentation.is_some()).count();
    let masked_gts = gts.annotations.iter().filter(|r| r.segmentation.is_some()).count();
    let eval_masks = if masked_dets == 0 {
        false
    } else if masked_dets == dets.len() && masked_gts == gts.annotations.len() {
        true
    } else {
        return Err(Error::Validation(
            "masks must be present on every detection and ground truth, or on no detection".into(),
        ));
    };

    let mut report = MetricReport::default();
    report.meta(
        "iou_thresholds",
        Value::List(params.iou_thresholds.iter().map(|t| Value::Float(*t)).collect()),
    );
    report.meta(
        "area_ranges",
        Value::List(
            params
                .area_ranges
                .iter()
                .map(|(name, lo, hi)| {
                    Value::map_from(vec![
                        ("name", Value::from(name.as_str())),
                        ("min_area", Value::Float(*lo)),
                        ("max_area", Value::Float(if hi.is_finite() { *hi } else { -1.0 })),
                    ])
                })
                .collect(),
        ),
    );
    report.meta("max_dets", Value::Int(params.max_dets as i64));

    let mut kinds = vec![EvalKind::Bbox];
    if eval_masks {
        kinds.push(EvalKind::Mask);
    }
    for kind in kinds {
        evaluate_kind(dets, gts, params, kind, &image_dims, &category_ids, &mut report)?;
    }
    Ok(report)
}

fn evaluate_kind(
    dets: &[Detection],
    gts: &InstanceSet,
    params: &DetectionEvalParams,
    kind: EvalKind,
    image_dims: &BTreeMap<i64, (u32, u32)>,
    category_ids: &[i64],
    report: &mut MetricReport,
) -> Result<()> {
    let t_n = params.iou_thresholds.len();
    let a_n = params.area_ranges.len();
    // ap[category][threshold][range]; None where no ground truth is in range.
    let mut ap: Vec<Vec<Vec<Option<f64>>>> = Vec::with_capacity(category_ids.len());
    // Interpolated precision at the 101 recall samples for the PR curve,
    // recorded at the first threshold on the full area range.
    let mut pr_curves: Vec<Vec<f64>> = Vec::new();

    for &cat in category_ids {
        let prepared_dets = prepare_dets(dets, cat, kind, image_dims, params.max_dets)?;
        let prepared_gts = prepare_gts(gts, cat, kind, image_dims)?;
        // IoU between every kept detection and every ground truth of the
        // same image. Crowd regions use intersection over detection area
        // so a detection inside a crowd matches it fully.
        let iou: Vec<Vec<f64>> = prepared_dets
            .iter()
            .map(|d| {
                prepared_gts
                    .iter()
                    .map(|g| {
                        if g.image_id != d.image_id {
                            return 0.0;
                        }
                        pair_iou(d, g, kind)
                    })
                    .collect()
            })
            .collect();

        let mut cat_ap = vec![vec![None; a_n]; t_n];
        for (ti, &threshold) in params.iou_thresholds.iter().enumerate() {
            for (ai, (_, lo, hi)) in params.area_ranges.iter().enumerate() {
                let (points, npig) =
                    match_category(&prepared_dets, &prepared_gts, &iou, threshold, *lo, *hi);
                if npig == 0 {
                    continue;
                }
                let interp = interpolate_101(&points, npig);
                cat_ap[ti][ai] = Some(interp.iter().sum::<f64>() / interp.len() as f64);
                if ti == 0 && ai == 0 {
                    pr_curves.push(interp);
                }
            }
        }
        ap.push(cat_ap);
    }

    let mean_over = |ti: usize, ai: usize| -> Option<f64> {
        let vals: Vec<f64> = ap.iter().filter_map(|cat| cat[ti][ai]).collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    };
    // Mean over categories per threshold, then over thresholds.
    let sweep = |ai: usize| -> f64 {
        let per_t: Vec<f64> = (0..t_n).filter_map(|ti| mean_over(ti, ai)).collect();
        if per_t.is_empty() {
            -1.0
        } else {
            per_t.iter().sum::<f64>() / per_t.len() as f64
        }
    };

    let prefix = kind.prefix();
    report.scalar(format!("{prefix}_ap"), sweep(0));
    for (ti, &t) in params.iou_thresholds.iter().enumerate() {
        if (t - 0.5).abs() < 1e-9 {
            report.scalar(format!("{prefix}_ap50"), mean_over(ti, 0).unwrap_or(-1.0));
        }
        if (t - 0.75).abs() < 1e-9 {
            report.scalar(format!("{prefix}_ap75"), mean_over(ti, 0).unwrap_or(-1.0));
        }
    }
    for (ai, (name, _, _)) in params.area_ranges.iter().enumerate().skip(1) {
        report.scalar(format!("{prefix}_ap_{name}"), sweep(ai));
    }
    if !pr_curves.is_empty() {
        let n = pr_curves.len() as f64;
        let curve: Vec<(f64, f64)> = (0..=100)
            .map(|i| {
                let r = i as f64 / 100.0;
                let p = pr_curves.iter().map(|c| c[i]).sum::<f64>() / n;
                (r, p)
            })
            .collect();
        report.curve(
            format!("{prefix}_pr@{:.2}", params.iou_thresholds[0]),
            curve,
        );
    }
    Ok(())
}

/// Detections of one category, globally ordered by descending score with
/// ties by input index, truncated to `max_dets` per image.
fn prepare_dets(
    dets: &[Detection],
    cat: i64,
    kind: EvalKind,
    image_dims: &BTreeMap<i64, (u32, u32)>,
    max_dets: usize,
) -> Result<Vec<PreparedDet>> {
    let mut out = Vec::new();
    for (i, d) in dets.iter().enumerate() {
        if d.category_id != cat {
            continue;
        }
        let mask = if kind == EvalKind::Mask {
            let (w, h) = image_dims[&d.image_id];
            Some(
                d.segmentation
                    .as_ref()
                    .expect("mask evaluation checked segmentation presence")
                    .to_mask(w, h)?,
            )
        } else {
            None
        };
        let area = match &mask {
            Some(m) => m.count() as f64,
            None => d.bbox[2] * d.bbox[3],
        };
        out.push(PreparedDet {
            index: i,
            image_id: d.image_id,
            score: d.score,
            area,
            bbox: d.bbox,
            mask,
        });
    }
    out.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("validated finite")
            .then(a.index.cmp(&b.index))
    });
    let mut kept_per_image: BTreeMap<i64, usize> = BTreeMap::new();
    out.retain(|d| {
        let kept = kept_per_image.entry(d.image_id).or_insert(0);
        *kept += 1;
        *kept <= max_dets
    });
    Ok(out)
}

fn prepare_gts(
    gts: &InstanceSet,
    cat: i64,
    kind: EvalKind,
    image_dims: &BTreeMap<i64, (u32, u32)>,
) -> Result<Vec<PreparedGt>> {
    let mut out = Vec::new();
    for r in &gts.annotations {
        if r.category_id != cat {
            continue;
        }
        let mask = if kind == EvalKind::Mask {
            let (w, h) = image_dims[&r.image_id];
            Some(
                r.segmentation
                    .as_ref()
                    .expect("mask evaluation checked segmentation presence")
                    .to_mask(w, h)?,
            )
        } else {
            None
        };
        out.push(PreparedGt {
            image_id: r.image_id,
            area: r.area,
            crowd: r.iscrowd,
            bbox: r.bbox,
            mask,
        });
    }
    Ok(out)
}

fn pair_iou(d: &PreparedDet, g: &PreparedGt, kind: EvalKind) -> f64 {
    match kind {
        EvalKind::Bbox => {
            if g.crowd {
                // Intersection over detection area.
                let ix = (d.bbox[0] + d.bbox[2]).min(g.bbox[0] + g.bbox[2]) - d.bbox[0].max(g.bbox[0]);
                let iy = (d.bbox[1] + d.bbox[3]).min(g.bbox[1] + g.bbox[3]) - d.bbox[1].max(g.bbox[1]);
                if ix <= 0.0 || iy <= 0.0 {
                    return 0.0;
                }
                (ix * iy) / (d.bbox[2] * d.bbox[3])
            } else {
                box_iou(d.bbox, g.bbox)
            }
        }
        EvalKind::Mask => {
            let dm = d.mask.as_ref().expect("mask evaluation");
            let gm = g.mask.as_ref().expect("mask evaluation");
            if g.crowd {
                let da = dm.count();
                if da == 0 {
                    return 0.0;
                }
                dm.intersection_count(gm) as f64 / da as f64
            } else {
                mask_iou(dm, gm).unwrap_or(0.0)
            }
        }
    }
}

/// Greedy matching for one category at one (threshold, area range) cell.
/// Returns the (recall, precision) points of counted detections in score
/// order, plus the number of ground truths in range.
fn match_category(
    dets: &[PreparedDet],
    gts: &[PreparedGt],
    iou: &[Vec<f64>],
    threshold: f64,
    area_lo: f64,
    area_hi: f64,
) -> (Vec<(f64, f64)>, u64) {
    let ignored: Vec<bool> = gts
        .iter()
        .map(|g| g.crowd || g.area < area_lo || g.area >= area_hi)
        .collect();
    let npig = ignored.iter().filter(|ig| !**ig).count() as u64;
    let mut matched = vec![false; gts.len()];
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut points = Vec::new();
    for (di, d) in dets.iter().enumerate() {
        // Best live candidate, preferring real ground truths over ignored
        // ones regardless of IoU; ties go to the lower ground-truth index.
        let mut best: Option<(bool, f64, usize)> = None;
        for (gi, g) in gts.iter().enumerate() {
            if g.image_id != d.image_id || iou[di][gi] < threshold {
                continue;
            }
            // A consumed real ground truth is gone; crowds stay available.
            if matched[gi] && !g.crowd {
                continue;
            }
            let better = match &best {
                None => true,
                Some((b_ig, b_iou, _)) => {
                    if *b_ig != ignored[gi] {
                        *b_ig && !ignored[gi]
                    } else {
                        iou[di][gi] > *b_iou
                    }
                }
            };
            if better {
                best = Some((ignored[gi], iou[di][gi], gi));
            }
        }
        match best {
            Some((false, _, gi)) => {
                matched[gi] = true;
                tp += 1;
            }
            Some((true, _, _)) => {
                // Matched an ignored region: neither reward nor penalty.
                continue;
            }
            None => {
                // Unmatched detections outside the area range are ignored.
                if d.area < area_lo || d.area >= area_hi {
                    continue;
                }
                fp += 1;
            }
        }
        if npig > 0 {
            points.push((tp as f64 / npig as f64, tp as f64 / (tp + fp) as f64));
        }
    }
    (points, npig)
}

/// Interpolated precision at recall samples {0.00, 0.01, ..., 1.00}:
/// the maximum precision among points whose recall is at least the
/// sample, zero past the final recall.
fn interpolate_101(points: &[(f64, f64)], npig: u64) -> Vec<f64> {
    debug_assert!(npig > 0);
    // Monotone envelope from the right.
    let mut env: Vec<(f64, f64)> = points.to_vec();
    let mut running: f64 = 0.0;
    for p in env.iter_mut().rev() {
        running = running.max(p.1);
        p.1 = running;
    }
    (0..=100)
        .map(|i| {
            let r = i as f64 / 100.0;
            env.iter()
                .find(|(rec, _)| *rec >= r)
                .map(|(_, prec)| *prec)
                .unwrap_or(0.0)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{CocoCategory, CocoImage, InstanceRecord};

    #[test]
    fn topk_breaks_ties_by_low_index() {
        assert_eq!(topk_indices(&[0.5, 0.9, 0.5, 0.1], 2), vec![1, 0]);
        assert_eq!(topk_indices(&[0.5, 0.5, 0.5], 3), vec![0, 1, 2]);
    }

    #[test]
    fn per_attribute_topk_hand_case() {
        // Two images, two attributes: both predictions pick attribute 0.
        let scores = vec![vec![0.9, 0.1], vec![0.8, 0.2]];
        let gts = vec![vec![true, false], vec![false, true]];
        let (recall, accuracy, counts) = per_attribute_topk(&scores, &gts, 1).unwrap();
        assert_eq!(recall, 0.5);
        assert_eq!(accuracy, 0.5);
        assert_eq!(counts.tp, vec![1, 0]);
        assert_eq!(counts.tn, vec![0, 1]);
        assert_eq!(counts.g, vec![1, 1]);
        assert_eq!(counts.p, vec![2, 2]);
    }

    #[test]
    fn per_attribute_topk_saturates_at_k_equals_c() {
        let scores = vec![vec![0.1, 0.2, 0.3], vec![0.3, 0.2, 0.1]];
        let gts = vec![vec![true, false, true], vec![false, true, false]];
        let (recall, _, _) = per_attribute_topk(&scores, &gts, 3).unwrap();
        assert_eq!(recall, 1.0);
        assert!(per_attribute_topk(&scores, &gts, 4).is_err());
    }

    #[test]
    fn perfect_predictions_score_one() {
        let gts = vec![vec![true, false], vec![false, true]];
        let scores = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let (recall, accuracy, _) = per_attribute_topk(&scores, &gts, 1).unwrap();
        assert_eq!((recall, accuracy), (1.0, 1.0));
    }

    #[test]
    fn recall_skips_absent_attributes() {
        // Attribute 1 never occurs: excluded from recall, counted in accuracy.
        let scores = vec![vec![0.9, 0.8, 0.1]];
        let gts = vec![vec![true, false, false]];
        let (recall, _, counts) = per_attribute_topk(&scores, &gts, 2).unwrap();
        assert_eq!(recall, 1.0);
        assert_eq!(counts.excluded, 2);
    }

    #[test]
    fn normalized_error_hand_cases() {
        let pair = |dx: f64, dy: f64, vis: bool| LandmarkEvalPair {
            dx,
            dy,
            w: 100.0,
            h: 200.0,
            visible: vis,
        };
        assert_eq!(normalized_error(&[pair(0.0, 0.0, true)]).unwrap(), 0.0);
        // dx = 0.3 w, dy = 0.4 h: the 3-4-5 triangle gives exactly 0.5.
        let ne = normalized_error(&[pair(30.0, 80.0, true)]).unwrap();
        assert_eq!(ne, 0.5);
        // Invisible pairs are skipped entirely.
        let ne = normalized_error(&[pair(30.0, 80.0, true), pair(999.0, 999.0, false)]).unwrap();
        assert_eq!(ne, 0.5);
        assert!(normalized_error(&[pair(1.0, 1.0, false)]).is_err());
    }

    #[test]
    fn pdl_curve_hand_case() {
        let pred = [(3.0, 0.0), (0.0, 7.0)];
        let gt = [(0.0, 0.0), (0.0, 0.0)];
        let curve = pdl_curve(&pred, &gt, &[true, true], &[5.0, 10.0]).unwrap();
        assert_eq!(curve, vec![(5.0, 0.5), (10.0, 1.0)]);
        let curve = pdl_curve(&pred, &gt, &[true, true], &[1.0]).unwrap();
        assert_eq!(curve, vec![(1.0, 0.0)]);
        assert!(pdl_curve(&pred, &gt, &[true, true], &[5.0, 5.0]).is_err());
    }

    #[test]
    fn box_iou_hand_cases() {
        assert_eq!(box_iou([0.0, 0.0, 2.0, 2.0], [0.0, 0.0, 2.0, 2.0]), 1.0);
        let v = box_iou([0.0, 0.0, 2.0, 2.0], [1.0, 1.0, 2.0, 2.0]);
        assert!((v - 1.0 / 7.0).abs() < 1e-12);
        assert_eq!(box_iou([0.0, 0.0, 1.0, 1.0], [5.0, 5.0, 1.0, 1.0]), 0.0);
    }

    #[test]
    fn roc_auc_hand_cases() {
        let auc = roc_auc(&[0.9, 0.8, 0.3, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!(auc, 1.0);
        let auc = roc_auc(&[0.8, 0.4, 0.6, 0.2], &[true, true, false, false]).unwrap();
        assert_eq!(auc, 0.75);
        let auc = roc_auc(&[0.5, 0.5, 0.5], &[true, false, true]).unwrap();
        assert_eq!(auc, 0.5);
        assert!(roc_auc(&[0.5, 0.6], &[true, true]).is_err());
    }

    #[test]
    fn retrieval_recall_hand_case() {
        let gallery = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        let g_items = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        let queries = vec![vec![0.1, 0.0], vec![0.9, 0.1]];
        let q_items = vec!["a".to_string(), "b".to_string()];
        let recalls =
            retrieval_recall_at_k(&queries, &gallery, &q_items, &g_items, &[1, 3]).unwrap();
        assert_eq!(recalls, vec![(1, 1.0), (3, 1.0)]);
        // A query whose nearest neighbor is the wrong item misses at k=1.
        let queries = vec![vec![0.9, 0.1]];
        let q_items = vec!["c".to_string()];
        let recalls =
            retrieval_recall_at_k(&queries, &gallery, &q_items, &g_items, &[1, 3]).unwrap();
        assert_eq!(recalls, vec![(1, 0.0), (3, 1.0)]);
        assert!(retrieval_recall_at_k(&queries, &gallery, &q_items, &g_items, &[4]).is_err());
    }

    fn tiny_gts(annotations: Vec<InstanceRecord>) -> InstanceSet {
        InstanceSet {
            images: vec![CocoImage {
                id: 1,
                file_name: "img.png".into(),
                width: 100,
                height: 100,
            }],
            categories: vec![CocoCategory {
                id: 1,
                name: "glyph".into(),
            }],
            annotations,
        }
    }

    fn gt_box(id: i64, bbox: [f64; 4]) -> InstanceRecord {
        InstanceRecord {
            id,
            image_id: 1,
            category_id: 1,
            area: bbox[2] * bbox[3],
            bbox,
            iscrowd: false,
            segmentation: None,
        }
    }

    #[test]
    fn perfect_detection_scores_full_ap() {
        let gts = tiny_gts(vec![gt_box(1, [10.0, 10.0, 20.0, 20.0])]);
        let dets = vec![Detection {
            image_id: 1,
            category_id: 1,
            score: 0.9,
            bbox: [10.0, 10.0, 20.0, 20.0],
            segmentation: None,
        }];
        let report = evaluate_detections(&dets, &gts, &DetectionEvalParams::default()).unwrap();
        assert_eq!(report.scalars["bbox_ap"], 1.0);
        assert_eq!(report.scalars["bbox_ap50"], 1.0);
        assert_eq!(report.scalars["bbox_ap75"], 1.0);
    }

    #[test]
    fn threshold_gates_a_loose_match() {
        // IoU 0.6: grid-aligned boxes [0,0,10,10] vs [0,0,10,6] overlap 60/100.
        let gts = tiny_gts(vec![gt_box(1, [0.0, 0.0, 10.0, 10.0])]);
        let dets = vec![Detection {
            image_id: 1,
            category_id: 1,
            score: 0.9,
            bbox: [0.0, 0.0, 10.0, 6.0],
            segmentation: None,
        }];
        let iou = box_iou([0.0, 0.0, 10.0, 10.0], [0.0, 0.0, 10.0, 6.0]);
        assert!((iou - 0.6).abs() < 1e-12);
        let report = evaluate_detections(&dets, &gts, &DetectionEvalParams::default()).unwrap();
        assert_eq!(report.scalars["bbox_ap50"], 1.0);
        assert_eq!(report.scalars["bbox_ap75"], 0.0);
    }

    #[test]
    fn low_scored_false_positive_does_not_dent_ap() {
        // The true positive outranks the false positive, so interpolated
        // precision at every sampled recall stays 1.
        let gts = tiny_gts(vec![gt_box(1, [10.0, 10.0, 20.0, 20.0])]);
        let dets = vec![
            Detection {
                image_id: 1,
                category_id: 1,
                score: 0.9,
                bbox: [10.0, 10.0, 20.0, 20.0],
                segmentation: None,
            },
            Detection {
                image_id: 1,
                category_id: 1,
                score: 0.8,
                bbox: [70.0, 70.0, 10.0, 10.0],
                segmentation: None,
            },
        ];
        let report = evaluate_detections(&dets, &gts, &DetectionEvalParams::default()).unwrap();
        assert_eq!(report.scalars["bbox_ap50"], 1.0);
    }

    #[test]
    fn unknown_references_are_rejected() {
        let gts = tiny_gts(vec![gt_box(1, [10.0, 10.0, 20.0, 20.0])]);
        let det = Detection {
            image_id: 7,
            category_id: 1,
            score: 0.9,
            bbox: [0.0, 0.0, 1.0, 1.0],
            segmentation: None,
        };
        assert!(evaluate_detections(&[det], &gts, &DetectionEvalParams::default()).is_err());
    }

    #[test]
    fn report_serialization_is_stable() {
        let mut report = MetricReport::default();
        report.scalar("recall", 0.5);
        report.curve("pdl", vec![(1.0, 0.25), (2.0, 1.0)]);
        report.meta("k", Value::Int(3));
        let text = report.to_string_stable();
        assert!(text.contains("0.500000"), "{text}");
        assert_eq!(text, report.to_string_stable());
    }
}
