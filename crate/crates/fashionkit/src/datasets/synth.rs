//! Deterministic synthetic datasets for every task.
//!
//! Images are procedural: a noisy background plus small textured glyphs
//! (stripes, disc, cross, ring, checker, bars). The generators are pure
//! functions of `(task, n, seed)` — the same inputs always produce the
//! same bytes, which is what makes training runs and tests reproducible.
//!
//! Per task:
//!
//! * **attribute**: each image carries 1 to 3 glyph kinds; the label says
//!   which kinds are present, and one landmark per attribute marks the
//!   glyph center of that attribute (invisible when absent). Distractor
//!   squares reuse the palette color of an absent attribute without its
//!   texture, so color alone does not decide presence.
//! * **landmark**: a fixed glyph per landmark index, placed at a random
//!   non-overlapping position; landmark is the glyph center, and each
//!   glyph is independently dropped (invisible) with small probability.
//! * **retrieval**: each item is a random 3x3 color grid; every image of
//!   the item adds per-pixel noise, queries come from the consumer side.
//! * **instances**: 1 to 3 glyphs with exact boxes and polygons (the ring
//!   polygon carries a hole via even-odd fill).
//! * **compat**: outfit `i` renders all its items (top, bottom, shoe) in
//!   hue `i / n`; items are compatible iff they share the hue, so outfits
//!   are compatible sets and cross-outfit mixes are not.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::json;
use crate::util::mix_seed;

use super::attribute::AttributeFile;
use super::image_data::{save_png, Image};
use super::instances::{
    instances_to_value, CocoCategory, CocoImage, InstanceRecord, InstanceSet, Segmentation,
};
use super::landmark::{Landmark, LandmarkFile, LandmarkRecord};
use super::polyvore::{
    compat_questions_to_value, fitb_to_value, outfits_to_value, validate_polyvore, CompatQuestion,
    FitbQuestion, Outfit, OutfitItem, PolyvoreSet, PolyvoreSplit,
};
use super::retrieval::{write_retrieval_split, RetrievalRecord, Role, Source};
use super::{AttributeRecord, attribute::write_attribute_file, landmark::write_landmark_file};

/// Glyph kinds double as attribute names and detection categories.
pub const GLYPH_NAMES: [&str; 6] = ["striped", "dotted", "crossed", "ringed", "checked", "barred"];

/// One saturated color per glyph kind.
pub const GLYPH_COLORS: [[f64; 3]; 6] = [
    [0.90, 0.20, 0.20],
    [0.20, 0.75, 0.25],
    [0.25, 0.35, 0.95],
    [0.95, 0.80, 0.15],
    [0.80, 0.25, 0.85],
    [0.15, 0.80, 0.85],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthTask {
    Attribute,
    Landmark,
    Retrieval,
    Instances,
    Compat,
}

impl SynthTask {
    pub fn as_str(&self) -> &'static str {
        match self {
            SynthTask::Attribute => "attribute",
            SynthTask::Landmark => "landmark",
            SynthTask::Retrieval => "retrieval",
            SynthTask::Instances => "instances",
            SynthTask::Compat => "compat",
        }
    }
}

impl std::str::FromStr for SynthTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<SynthTask> {
        match s {
            "attribute" => Ok(SynthTask::Attribute),
            "landmark" => Ok(SynthTask::Landmark),
            "retrieval" => Ok(SynthTask::Retrieval),
            "instances" => Ok(SynthTask::Instances),
            "compat" => Ok(SynthTask::Compat),
            other => Err(Error::Config(format!(
                "unknown synthetic task \"{other}\" (known: attribute, landmark, retrieval, instances, compat)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub task: SynthTask,
    /// Images for attribute/landmark/instances, items for retrieval,
    /// outfits for compat.
    pub n: usize,
    pub seed: u64,
    /// Square image side in pixels.
    pub size: usize,
    /// Textureless color-decoy squares per attribute image.
    pub distractors: usize,
}

impl SynthSpec {
    pub fn new(task: SynthTask, n: usize, seed: u64) -> SynthSpec {
        SynthSpec {
            task,
            n,
            seed,
            size: 64,
            distractors: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub enum SynthData {
    Attribute {
        attrs: AttributeFile,
        landmarks: LandmarkFile,
        images: Vec<(String, Image)>,
    },
    Landmark {
        landmarks: LandmarkFile,
        images: Vec<(String, Image)>,
    },
    Retrieval {
        records: Vec<RetrievalRecord>,
        images: Vec<(String, Image)>,
    },
    Instances {
        set: InstanceSet,
        images: Vec<(String, Image)>,
    },
    Compat {
        set: PolyvoreSet,
        images: Vec<(String, Image)>,
    },
}

impl SynthData {
    pub fn num_images(&self) -> usize {
        match self {
            SynthData::Attribute { images, .. }
            | SynthData::Landmark { images, .. }
            | SynthData::Retrieval { images, .. }
            | SynthData::Instances { images, .. }
            | SynthData::Compat { images, .. } => images.len(),
        }
    }
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    if spec.n == 0 {
        return Err(Error::Validation("synthetic dataset size must be positive".into()));
    }
    if spec.size < 16 {
        return Err(Error::Validation(format!(
            "synthetic image size must be at least 16, got {}",
            spec.size
        )));
    }
    match spec.task {
        SynthTask::Attribute => gen_attribute(spec),
        SynthTask::Landmark => gen_landmark(spec),
        SynthTask::Retrieval => gen_retrieval(spec),
        SynthTask::Instances => gen_instances(spec),
        SynthTask::Compat => gen_compat(spec),
    }
}

/// Writes annotation files plus an `images/` directory. Returns the
/// annotation file paths that were written.
pub fn write_to_dir(data: &SynthData, dir: &Path) -> Result<Vec<PathBuf>> {
    let images_dir = dir.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    let save_all = |images: &[(String, Image)]| -> Result<()> {
        for (rel, img) in images {
            save_png(dir.join(rel), img)?;
        }
        Ok(())
    };
    let write_text = |name: &str, text: &str| -> Result<PathBuf> {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    };
    match data {
        SynthData::Attribute { attrs, landmarks, images } => {
            save_all(images)?;
            Ok(vec![
                write_text("attr.txt", &write_attribute_file(attrs)?)?,
                write_text("landmarks.txt", &write_landmark_file(landmarks)?)?,
            ])
        }
        SynthData::Landmark { landmarks, images } => {
            save_all(images)?;
            Ok(vec![write_text("landmarks.txt", &write_landmark_file(landmarks)?)?])
        }
        SynthData::Retrieval { records, images } => {
            save_all(images)?;
            Ok(vec![write_text("split.txt", &write_retrieval_split(records)?)?])
        }
        SynthData::Instances { set, images } => {
            save_all(images)?;
            let text = json::to_string_pretty(&instances_to_value(set))?;
            Ok(vec![write_text("instances.json", &text)?])
        }
        SynthData::Compat { set, images } => {
            save_all(images)?;
            Ok(vec![
                write_text("outfits.json", &json::to_string_pretty(&outfits_to_value(set.split, &set.outfits))?)?,
                write_text("fitb.json", &json::to_string_pretty(&fitb_to_value(&set.fitb))?)?,
                write_text("compat.json", &json::to_string_pretty(&compat_questions_to_value(&set.compat))?)?,
            ])
        }
    }
}

fn rng_for(spec: &SynthSpec, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, stream))
}

fn noisy_background(img: &mut Image, rng: &mut ChaCha8Rng, base: f64, amp: f64) {
    for y in 0..img.height {
        for x in 0..img.width {
            for c in 0..img.channels {
                let v = base + rng.gen_range(-amp..amp);
                img.set(c, y, x, v.clamp(0.0, 1.0));
            }
        }
    }
}

/// Draws glyph `kind` centered at `(cx, cy)` with half-extent `half`.
/// Pixels outside the image are clipped.
fn draw_glyph(img: &mut Image, cy: i64, cx: i64, half: i64, kind: usize, color: [f64; 3]) {
    let t = (half / 3).max(1);
    for dy in -half..=half {
        for dx in -half..=half {
            let on = match kind {
                0 => ((dy + half) / 2) % 2 == 0,
                1 => dx * dx + dy * dy <= half * half,
                2 => dx.abs() <= t || dy.abs() <= t,
                3 => {
                    let r2 = dx * dx + dy * dy;
                    let inner = (half - 2).max(0);
                    r2 <= half * half && r2 >= inner * inner
                }
                4 => (((dx + half) / 3) + ((dy + half) / 3)) % 2 == 0,
                _ => ((dx + half) / 2) % 2 == 0,
            };
            if !on {
                continue;
            }
            let (y, x) = (cy + dy, cx + dx);
            if y < 0 || x < 0 || y >= img.height as i64 || x >= img.width as i64 {
                continue;
            }
            img.put_rgb(y as usize, x as usize, color);
        }
    }
}

/// Textureless square used as a color decoy.
fn draw_solid_square(img: &mut Image, cy: i64, cx: i64, half: i64, color: [f64; 3]) {
    for dy in -half..=half {
        for dx in -half..=half {
            let (y, x) = (cy + dy, cx + dx);
            if y < 0 || x < 0 || y >= img.height as i64 || x >= img.width as i64 {
                continue;
            }
            img.put_rgb(y as usize, x as usize, color);
        }
    }
}

fn hsv_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = (h.rem_euclid(1.0)) * 6.0;
    let i = h.floor() as i64;
    let f = h - i as f64;
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    match i.rem_euclid(6) {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Five well-separated glyph anchors: the four quarter points plus the
/// center.
fn slot_centers(size: usize) -> [(i64, i64); 5] {
    let s = size as i64;
    [
        (s / 4, s / 4),
        (s / 4, 3 * s / 4),
        (3 * s / 4, s / 4),
        (3 * s / 4, 3 * s / 4),
        (s / 2, s / 2),
    ]
}

fn jitter(rng: &mut ChaCha8Rng, amount: i64) -> i64 {
    if amount > 0 {
        rng.gen_range(-amount..=amount)
    } else {
        0
    }
}

fn gen_attribute(spec: &SynthSpec) -> Result<SynthData> {
    let c = GLYPH_NAMES.len();
    if spec.distractors > 2 {
        return Err(Error::Validation(format!(
            "at most 2 distractors fit next to 3 glyph slots, got {}",
            spec.distractors
        )));
    }
    let size = spec.size;
    let half = ((size / 9).max(2)) as i64;
    let mut attr_records = Vec::with_capacity(spec.n);
    let mut lm_records = Vec::with_capacity(spec.n);
    let mut images = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let mut rng = rng_for(spec, i as u64);
        let mut img = Image::zeros(3, size, size);
        noisy_background(&mut img, &mut rng, 0.45, 0.05);

        let mut kinds: Vec<usize> = (0..c).collect();
        kinds.shuffle(&mut rng);
        let m = rng.gen_range(1..=3);
        let mut present = kinds[..m].to_vec();
        present.sort_unstable();
        let decoys: Vec<usize> = kinds[m..m + spec.distractors].to_vec();

        let mut slots = slot_centers(size).to_vec();
        slots.shuffle(&mut rng);

        let mut labels = vec![false; c];
        let mut landmarks = vec![Landmark { vis: 1, x: 0.0, y: 0.0 }; c];
        for (j, &kind) in present.iter().enumerate() {
            let (sy, sx) = slots[j];
            let cy = sy + jitter(&mut rng, size as i64 / 16);
            let cx = sx + jitter(&mut rng, size as i64 / 16);
            draw_glyph(&mut img, cy, cx, half, kind, GLYPH_COLORS[kind]);
            labels[kind] = true;
            landmarks[kind] = Landmark { vis: 0, x: cx as f64, y: cy as f64 };
        }
        for (j, &kind) in decoys.iter().enumerate() {
            let (sy, sx) = slots[m + j];
            let cy = sy + jitter(&mut rng, size as i64 / 16);
            let cx = sx + jitter(&mut rng, size as i64 / 16);
            draw_solid_square(&mut img, cy, cx, half, GLYPH_COLORS[kind]);
        }

        let path = format!("images/img_{i:04}.png");
        attr_records.push(AttributeRecord { image_path: path.clone(), labels });
        lm_records.push(LandmarkRecord { image_path: path.clone(), landmarks });
        images.push((path, img));
    }
    Ok(SynthData::Attribute {
        attrs: AttributeFile {
            attr_names: GLYPH_NAMES.iter().map(|s| s.to_string()).collect(),
            records: attr_records,
        },
        landmarks: LandmarkFile {
            num_landmarks: c,
            width: size as u32,
            height: size as u32,
            records: lm_records,
        },
        images,
    })
}

fn gen_landmark(spec: &SynthSpec) -> Result<SynthData> {
    let num = 4;
    let size = spec.size;
    let half = ((size / 9).max(2)) as i64;
    let margin = half + 1;
    let mut records = Vec::with_capacity(spec.n);
    let mut images = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let mut rng = rng_for(spec, i as u64);
        let mut img = Image::zeros(3, size, size);
        noisy_background(&mut img, &mut rng, 0.45, 0.05);

        let mut visible: Vec<bool> = (0..num).map(|_| rng.gen_bool(0.85)).collect();
        if !visible.iter().any(|v| *v) {
            visible[0] = true;
        }
        let mut centers: Vec<(i64, i64)> = Vec::new();
        let mut landmarks = Vec::with_capacity(num);
        for (j, &vis) in visible.iter().enumerate() {
            if !vis {
                landmarks.push(Landmark { vis: 1, x: 0.0, y: 0.0 });
                continue;
            }
            // Rejection-sample a position clear of earlier glyphs.
            let mut cy = 0;
            let mut cx = 0;
            for attempt in 0..20 {
                cy = rng.gen_range(margin..size as i64 - margin);
                cx = rng.gen_range(margin..size as i64 - margin);
                let clear = centers
                    .iter()
                    .all(|&(oy, ox)| (oy - cy).abs().max((ox - cx).abs()) > 2 * half);
                if clear || attempt == 19 {
                    break;
                }
            }
            centers.push((cy, cx));
            draw_glyph(&mut img, cy, cx, half, j, GLYPH_COLORS[j]);
            landmarks.push(Landmark { vis: 0, x: cx as f64, y: cy as f64 });
        }
        let path = format!("images/img_{i:04}.png");
        records.push(LandmarkRecord { image_path: path.clone(), landmarks });
        images.push((path, img));
    }
    Ok(SynthData::Landmark {
        landmarks: LandmarkFile {
            num_landmarks: num,
            width: size as u32,
            height: size as u32,
            records,
        },
        images,
    })
}

fn gen_retrieval(spec: &SynthSpec) -> Result<SynthData> {
    let size = spec.size;
    let mut records = Vec::new();
    let mut images = Vec::new();
    for i in 0..spec.n {
        let mut item_rng = rng_for(spec, i as u64);
        // The item identity is a 3x3 grid of random colors.
        let cells: Vec<[f64; 3]> = (0..9)
            .map(|_| hsv_rgb(item_rng.gen::<f64>(), 0.7, 0.9))
            .collect();
        let item_id = format!("item{i:03}");
        let roles = [
            (Role::Train, Source::Shop, "train0"),
            (Role::Train, Source::Shop, "train1"),
            (Role::Query, Source::Consumer, "query0"),
            (Role::Gallery, Source::Shop, "gallery0"),
        ];
        for (k, (role, source, tag)) in roles.iter().enumerate() {
            let mut rng = rng_for(spec, (i * 8 + k + 1) as u64 ^ 0x5EED_0000);
            let mut img = Image::zeros(3, size, size);
            let cell = (size / 3).max(1);
            for y in 0..size {
                for x in 0..size {
                    let gy = (y / cell).min(2);
                    let gx = (x / cell).min(2);
                    let base = cells[gy * 3 + gx];
                    let noise = rng.gen_range(-0.04..0.04);
                    img.put_rgb(
                        y,
                        x,
                        [
                            (base[0] + noise).clamp(0.0, 1.0),
                            (base[1] + noise).clamp(0.0, 1.0),
                            (base[2] + noise).clamp(0.0, 1.0),
                        ],
                    );
                }
            }
            let path = format!("images/{item_id}_{tag}.png");
            records.push(RetrievalRecord {
                image_path: path.clone(),
                item_id: item_id.clone(),
                source: *source,
                role: *role,
            });
            images.push((path, img));
        }
    }
    Ok(SynthData::Retrieval { records, images })
}

fn gen_instances(spec: &SynthSpec) -> Result<SynthData> {
    let size = spec.size;
    let mut coco_images = Vec::with_capacity(spec.n);
    let mut annotations = Vec::new();
    let mut images = Vec::with_capacity(spec.n);
    let mut next_ann_id: i64 = 1;
    for i in 0..spec.n {
        let mut rng = rng_for(spec, i as u64);
        let mut img = Image::zeros(3, size, size);
        noisy_background(&mut img, &mut rng, 0.45, 0.05);
        let count = rng.gen_range(1..=3);
        let mut placed: Vec<(i64, i64, i64)> = Vec::new();
        for _ in 0..count {
            let kind = rng.gen_range(0..GLYPH_NAMES.len());
            let half = rng.gen_range((size / 10).max(3)..=(size / 6).max(4)) as i64;
            let margin = half + 1;
            let mut cy = 0;
            let mut cx = 0;
            for attempt in 0..10 {
                cy = rng.gen_range(margin..size as i64 - margin);
                cx = rng.gen_range(margin..size as i64 - margin);
                let clear = placed
                    .iter()
                    .all(|&(oy, ox, oh)| (oy - cy).abs().max((ox - cx).abs()) > half + oh);
                if clear || attempt == 9 {
                    break;
                }
            }
            placed.push((cy, cx, half));
            draw_glyph(&mut img, cy, cx, half, kind, GLYPH_COLORS[kind]);
            let seg = glyph_polygon(cy, cx, half, kind);
            let mask = seg.to_mask(size as u32, size as u32)?;
            annotations.push(InstanceRecord {
                id: next_ann_id,
                image_id: (i + 1) as i64,
                category_id: (kind + 1) as i64,
                bbox: [
                    (cx - half) as f64,
                    (cy - half) as f64,
                    (2 * half + 1) as f64,
                    (2 * half + 1) as f64,
                ],
                area: mask.count() as f64,
                iscrowd: false,
                segmentation: Some(seg),
            });
            next_ann_id += 1;
        }
        let path = format!("images/img_{i:04}.png");
        coco_images.push(CocoImage {
            id: (i + 1) as i64,
            file_name: path.clone(),
            width: size as u32,
            height: size as u32,
        });
        images.push((path, img));
    }
    Ok(SynthData::Instances {
        set: InstanceSet {
            images: coco_images,
            categories: GLYPH_NAMES
                .iter()
                .enumerate()
                .map(|(k, name)| CocoCategory {
                    id: (k + 1) as i64,
                    name: name.to_string(),
                })
                .collect(),
            annotations,
        },
        images,
    })
}

/// Polygon outline for a glyph. Square-textured glyphs get their pixel
/// box, the disc a 16-gon, the ring two concentric rings (even-odd hole),
/// the cross its exact 12-vertex outline.
fn glyph_polygon(cy: i64, cx: i64, half: i64, kind: usize) -> Segmentation {
    let (cy, cx, h) = (cy as f64, cx as f64, half as f64);
    match kind {
        1 => Segmentation::Polygons(vec![circle_ring(cy, cx, h + 0.5, 16)]),
        3 => Segmentation::Polygons(vec![
            circle_ring(cy, cx, h + 0.5, 16),
            circle_ring(cy, cx, (h - 2.0).max(0.5), 12),
        ]),
        2 => {
            let t = (half / 3).max(1) as f64;
            let (x0, x1) = (cx - t, cx + t + 1.0);
            let (y0, y1) = (cy - t, cy + t + 1.0);
            let (ox0, ox1) = (cx - h, cx + h + 1.0);
            let (oy0, oy1) = (cy - h, cy + h + 1.0);
            Segmentation::Polygons(vec![vec![
                x0, oy0, x1, oy0, x1, y0, ox1, y0, ox1, y1, x1, y1, x1, oy1, x0, oy1, x0, y1, ox0,
                y1, ox0, y0, x0, y0,
            ]])
        }
        _ => {
            let (x0, x1) = (cx - h, cx + h + 1.0);
            let (y0, y1) = (cy - h, cy + h + 1.0);
            Segmentation::Polygons(vec![vec![x0, y0, x1, y0, x1, y1, x0, y1]])
        }
    }
}

fn circle_ring(cy: f64, cx: f64, radius: f64, segments: usize) -> Vec<f64> {
    let mut ring = Vec::with_capacity(segments * 2);
    // Pixel centers sit at half-integers; offset the circle center to
    // match the drawn disc.
    let (cx, cy) = (cx + 0.5, cy + 0.5);
    for s in 0..segments {
        let a = std::f64::consts::TAU * s as f64 / segments as f64;
        ring.push(cx + radius * a.cos());
        ring.push(cy + radius * a.sin());
    }
    ring
}

const COMPAT_TYPES: [&str; 3] = ["top", "bottom", "shoe"];

fn gen_compat(spec: &SynthSpec) -> Result<SynthData> {
    if spec.n < 4 {
        return Err(Error::Validation(format!(
            "compat synthesis needs at least 4 outfits for fill-in-the-blank decoys, got {}",
            spec.n
        )));
    }
    let size = spec.size;
    let n = spec.n;
    let mut outfits = Vec::with_capacity(n);
    let mut images = Vec::new();
    for i in 0..n {
        let hue = i as f64 / n as f64;
        let color = hsv_rgb(hue, 0.75, 0.85);
        let mut items = Vec::with_capacity(COMPAT_TYPES.len());
        for (t, ty) in COMPAT_TYPES.iter().enumerate() {
            let mut rng = rng_for(spec, (i * COMPAT_TYPES.len() + t) as u64 ^ 0xC0_FFEE);
            let mut img = Image::zeros(3, size, size);
            noisy_background(&mut img, &mut rng, 0.45, 0.05);
            let c = (size / 2) as i64;
            let half = (size / 5) as i64;
            match t {
                0 => draw_solid_square(&mut img, c, c, half, color),
                1 => {
                    draw_solid_square(&mut img, c, c - half / 2 - 1, half / 2, color);
                    draw_solid_square(&mut img, c, c + half / 2 + 1, half / 2, color);
                }
                _ => draw_glyph(&mut img, c, c, half, 1, color),
            }
            let item_id = format!("o{i:03}_{ty}");
            let path = format!("images/{item_id}.png");
            images.push((path.clone(), img));
            items.push(OutfitItem {
                item_id,
                image_path: path,
                item_type: ty.to_string(),
            });
        }
        outfits.push(Outfit {
            outfit_id: format!("o{i:03}"),
            items,
        });
    }

    let mut fitb = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = rng_for(spec, 0xF17B_0000 ^ i as u64);
        let missing_type = i % COMPAT_TYPES.len();
        let context: Vec<String> = (0..COMPAT_TYPES.len())
            .filter(|t| *t != missing_type)
            .map(|t| outfits[i].items[t].item_id.clone())
            .collect();
        let mut candidates: Vec<String> = vec![outfits[i].items[missing_type].item_id.clone()];
        for d in 1..=3 {
            candidates.push(outfits[(i + d) % n].items[missing_type].item_id.clone());
        }
        // The answer starts at index 0; shuffle deterministically.
        let mut order: Vec<usize> = (0..4).collect();
        order.shuffle(&mut rng);
        let answer_index = order.iter().position(|&o| o == 0).expect("0 is in order");
        let candidates: Vec<String> = order.iter().map(|&o| candidates[o].clone()).collect();
        fitb.push(FitbQuestion {
            question_id: format!("fitb{i:03}"),
            context,
            candidates,
            answer_index,
        });
    }

    let mut compat = Vec::with_capacity(n);
    for i in 0..n {
        if i % 2 == 0 {
            compat.push(CompatQuestion {
                question_id: format!("compat{i:03}"),
                items: outfits[i].items.iter().map(|it| it.item_id.clone()).collect(),
                label: true,
            });
        } else {
            compat.push(CompatQuestion {
                question_id: format!("compat{i:03}"),
                items: vec![
                    outfits[i].items[0].item_id.clone(),
                    outfits[(i + 1) % n].items[1].item_id.clone(),
                    outfits[(i + 2) % n].items[2].item_id.clone(),
                ],
                label: false,
            });
        }
    }

    let set = PolyvoreSet {
        split: PolyvoreSplit::Disjoint,
        outfits,
        fitb,
        compat,
    };
    validate_polyvore(&set)?;
    Ok(SynthData::Compat { set, images })
}
