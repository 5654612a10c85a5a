//! Detection ground-truth format (`instances.json`).
//!
//! The document mirrors the usual detection-dataset layout:
//!
//! ```text
//! {
//!   "images":      [{"id", "file_name", "width", "height"}],
//!   "categories":  [{"id", "name"}],
//!   "annotations": [{"id", "image_id", "category_id", "bbox",
//!                    "area"?, "iscrowd", "segmentation"?}]
//! }
//! ```
//!
//! `bbox` is `[x, y, w, h]` in pixels. `segmentation` is either a list of
//! polygons (flat `[x1, y1, x2, y2, ...]` rings, even-odd fill) or a
//! column-major run-length encoding `{"size": [h, w], "counts": [...]}`
//! whose runs alternate background/foreground starting with background.
//! When `area` is absent it is computed from the rasterized mask, or from
//! `w * h` when there is no segmentation either.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::error::{Error, Result};
use crate::json::{self, Value};

use super::field::{as_map, req_i64, req_list, req_str, req_u32};

#[derive(Debug, Clone, PartialEq)]
pub struct CocoImage {
    pub id: i64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CocoCategory {
    pub id: i64,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Segmentation {
    /// Flat polygon rings `[x1, y1, x2, y2, ...]`, even-odd fill across
    /// all rings, so rings can carve holes.
    Polygons(Vec<Vec<f64>>),
    /// Column-major run-length encoding over an `h x w` grid.
    Rle { size: (u32, u32), counts: Vec<u64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceRecord {
    pub id: i64,
    pub image_id: i64,
    pub category_id: i64,
    pub bbox: [f64; 4],
    pub area: f64,
    pub iscrowd: bool,
    pub segmentation: Option<Segmentation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSet {
    pub images: Vec<CocoImage>,
    pub categories: Vec<CocoCategory>,
    pub annotations: Vec<InstanceRecord>,
}

/// Dense binary mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn zeros(width: u32, height: u32) -> Mask {
        Mask {
            width,
            height,
            bits: vec![false; (width * height) as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.bits[(y * self.width + x) as usize] = v;
    }

    /// Number of foreground pixels.
    pub fn count(&self) -> u64 {
        self.bits.iter().filter(|b| **b).count() as u64
    }

    pub fn intersection_count(&self, other: &Mask) -> u64 {
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| **a && **b)
            .count() as u64
    }
}

impl Segmentation {
    /// Rasterizes into the `width x height` image frame. Polygon pixels
    /// are classified by their center `(x + 0.5, y + 0.5)` under the
    /// even-odd rule.
    pub fn to_mask(&self, width: u32, height: u32) -> Result<Mask> {
        match self {
            Segmentation::Polygons(rings) => Ok(rasterize_polygons(rings, width, height)),
            Segmentation::Rle { size, counts } => {
                if size.0 != height || size.1 != width {
                    return Err(Error::Validation(format!(
                        "RLE size {}x{} does not match image {}x{}",
                        size.0, size.1, height, width
                    )));
                }
                let mut mask = Mask::zeros(width, height);
                let mut idx: u64 = 0;
                let mut fg = false;
                for &run in counts {
                    for _ in 0..run {
                        if fg {
                            // Column-major: index runs down each column.
                            let x = (idx / height as u64) as u32;
                            let y = (idx % height as u64) as u32;
                            mask.set(x, y, true);
                        }
                        idx += 1;
                    }
                    fg = !fg;
                }
                Ok(mask)
            }
        }
    }
}

/// Converts a mask back to column-major RLE.
pub fn mask_to_rle(mask: &Mask) -> Segmentation {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run: u64 = 0;
    for x in 0..mask.width {
        for y in 0..mask.height {
            let bit = mask.get(x, y);
            if bit == current {
                run += 1;
            } else {
                counts.push(run);
                current = bit;
                run = 1;
            }
        }
    }
    counts.push(run);
    Segmentation::Rle {
        size: (mask.height, mask.width),
        counts,
    }
}

fn rasterize_polygons(rings: &[Vec<f64>], width: u32, height: u32) -> Mask {
    let mut mask = Mask::zeros(width, height);
    let mut crossings: Vec<f64> = Vec::new();
    for y in 0..height {
        let py = y as f64 + 0.5;
        crossings.clear();
        for ring in rings {
            let n = ring.len() / 2;
            for i in 0..n {
                let (x1, y1) = (ring[2 * i], ring[2 * i + 1]);
                let j = (i + 1) % n;
                let (x2, y2) = (ring[2 * j], ring[2 * j + 1]);
                if (y1 <= py && py < y2) || (y2 <= py && py < y1) {
                    let t = (py - y1) / (y2 - y1);
                    crossings.push(x1 + t * (x2 - x1));
                }
            }
        }
        crossings.sort_by(|a, b| a.partial_cmp(b).expect("finite crossings"));
        for x in 0..width {
            let px = x as f64 + 0.5;
            let left = crossings.iter().take_while(|c| **c < px).count();
            if left % 2 == 1 {
                mask.set(x, y, true);
            }
        }
    }
    mask
}

pub fn load_instances(path: impl AsRef<Path>) -> Result<InstanceSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc = json::parse_named(&text, &path.display().to_string())?;
    parse_instances(&doc)
}

pub fn parse_instances(doc: &Value) -> Result<InstanceSet> {
    let root = as_map(doc, "instances document")?;
    let mut images = Vec::new();
    for (i, item) in req_list(root, "images", "instances document")?.iter().enumerate() {
        let m = as_map(item, &format!("images[{i}]"))?;
        images.push(CocoImage {
            id: req_i64(m, "id", "image")?,
            file_name: req_str(m, "file_name", "image")?.to_string(),
            width: req_u32(m, "width", "image")?,
            height: req_u32(m, "height", "image")?,
        });
    }
    let mut image_dims: BTreeMap<i64, (u32, u32)> = BTreeMap::new();
    for img in &images {
        if image_dims.insert(img.id, (img.width, img.height)).is_some() {
            return Err(Error::Validation(format!("duplicate image id {}", img.id)));
        }
        if img.width == 0 || img.height == 0 {
            return Err(Error::Validation(format!("image {} has zero size", img.id)));
        }
    }

    let mut categories = Vec::new();
    let mut category_ids = BTreeSet::new();
    let mut category_names = BTreeSet::new();
    for (i, item) in req_list(root, "categories", "instances document")?.iter().enumerate() {
        let m = as_map(item, &format!("categories[{i}]"))?;
        let cat = CocoCategory {
            id: req_i64(m, "id", "category")?,
            name: req_str(m, "name", "category")?.to_string(),
        };
        if !category_ids.insert(cat.id) {
            return Err(Error::Validation(format!("duplicate category id {}", cat.id)));
        }
        if !category_names.insert(cat.name.clone()) {
            return Err(Error::Validation(format!("duplicate category name \"{}\"", cat.name)));
        }
        categories.push(cat);
    }

    let mut annotations = Vec::new();
    let mut ann_ids = BTreeSet::new();
    for (i, item) in req_list(root, "annotations", "instances document")?.iter().enumerate() {
        let m = as_map(item, &format!("annotations[{i}]"))?;
        let id = req_i64(m, "id", "annotation")?;
        if !ann_ids.insert(id) {
            return Err(Error::Validation(format!("duplicate annotation id {id}")));
        }
        let image_id = req_i64(m, "image_id", "annotation")?;
        let &(img_w, img_h) = image_dims
            .get(&image_id)
            .ok_or_else(|| Error::Validation(format!("annotation {id} references unknown image {image_id}")))?;
        let category_id = req_i64(m, "category_id", "annotation")?;
        if !category_ids.contains(&category_id) {
            return Err(Error::Validation(format!(
                "annotation {id} references unknown category {category_id}"
            )));
        }
        let bbox = parse_bbox(m, id)?;
        let iscrowd = match m.get("iscrowd") {
            None => false,
            Some(Value::Int(0)) => false,
            Some(Value::Int(1)) => true,
            Some(other) => {
                return Err(Error::Validation(format!(
                    "annotation {id}: iscrowd must be 0 or 1, found {}",
                    other.kind()
                )))
            }
        };
        let segmentation = match m.get("segmentation") {
            None => None,
            Some(v) => Some(parse_segmentation(v, id)?),
        };
        let area = match m.get("area") {
            Some(v) => {
                let a = v
                    .as_f64()
                    .filter(|a| a.is_finite() && *a >= 0.0)
                    .ok_or_else(|| Error::Validation(format!("annotation {id}: invalid area")))?;
                a
            }
            None => match &segmentation {
                Some(seg) => seg.to_mask(img_w, img_h)?.count() as f64,
                None => bbox[2] * bbox[3],
            },
        };
        annotations.push(InstanceRecord {
            id,
            image_id,
            category_id,
            bbox,
            area,
            iscrowd,
            segmentation,
        });
    }
    Ok(InstanceSet {
        images,
        categories,
        annotations,
    })
}

fn parse_bbox(m: &BTreeMap<String, Value>, id: i64) -> Result<[f64; 4]> {
    let list = m
        .get("bbox")
        .and_then(Value::as_list)
        .ok_or_else(|| Error::Validation(format!("annotation {id}: missing bbox")))?;
    if list.len() != 4 {
        return Err(Error::Validation(format!(
            "annotation {id}: bbox must have 4 entries, found {}",
            list.len()
        )));
    }
    let mut bbox = [0.0; 4];
    for (i, v) in list.iter().enumerate() {
        bbox[i] = v
            .as_f64()
            .filter(|x| x.is_finite())
            .ok_or_else(|| Error::Validation(format!("annotation {id}: non-numeric bbox")))?;
    }
    if bbox[2] < 0.0 || bbox[3] < 0.0 {
        return Err(Error::Validation(format!("annotation {id}: negative bbox size")));
    }
    Ok(bbox)
}

pub(crate) fn parse_segmentation(v: &Value, id: i64) -> Result<Segmentation> {
    match v {
        Value::List(rings) => {
            let mut out = Vec::with_capacity(rings.len());
            for ring in rings {
                let ring = ring.as_list().ok_or_else(|| {
                    Error::Validation(format!("annotation {id}: polygon ring must be a list"))
                })?;
                if ring.len() < 6 || ring.len() % 2 != 0 {
                    return Err(Error::Validation(format!(
                        "annotation {id}: polygon ring needs an even count of at least 6 coordinates"
                    )));
                }
                let coords: Option<Vec<f64>> = ring
                    .iter()
                    .map(|c| c.as_f64().filter(|x| x.is_finite()))
                    .collect();
                out.push(coords.ok_or_else(|| {
                    Error::Validation(format!("annotation {id}: non-numeric polygon coordinate"))
                })?);
            }
            if out.is_empty() {
                return Err(Error::Validation(format!("annotation {id}: empty segmentation")));
            }
            Ok(Segmentation::Polygons(out))
        }
        Value::Map(m) => {
            let size = m
                .get("size")
                .and_then(Value::as_list)
                .filter(|l| l.len() == 2)
                .ok_or_else(|| Error::Validation(format!("annotation {id}: RLE needs size [h, w]")))?;
            let h = size[0]
                .as_i64()
                .filter(|v| *v > 0)
                .ok_or_else(|| Error::Validation(format!("annotation {id}: invalid RLE height")))?;
            let w = size[1]
                .as_i64()
                .filter(|v| *v > 0)
                .ok_or_else(|| Error::Validation(format!("annotation {id}: invalid RLE width")))?;
            let counts_list = m
                .get("counts")
                .and_then(Value::as_list)
                .ok_or_else(|| Error::Validation(format!("annotation {id}: RLE needs counts")))?;
            let counts: Option<Vec<u64>> = counts_list
                .iter()
                .map(|c| c.as_i64().and_then(|v| u64::try_from(v).ok()))
                .collect();
            let counts = counts.ok_or_else(|| {
                Error::Validation(format!("annotation {id}: RLE counts must be non-negative integers"))
            })?;
            let total: u64 = counts.iter().sum();
            if total != (h as u64) * (w as u64) {
                return Err(Error::Validation(format!(
                    "annotation {id}: RLE counts sum to {total}, expected {}",
                    h * w
                )));
            }
            Ok(Segmentation::Rle {
                size: (h as u32, w as u32),
                counts,
            })
        }
        other => Err(Error::Validation(format!(
            "annotation {id}: segmentation must be polygons or RLE, found {}",
            other.kind()
        ))),
    }
}

pub fn instances_to_value(set: &InstanceSet) -> Value {
    let images: Vec<Value> = set
        .images
        .iter()
        .map(|img| {
            Value::map_from(vec![
                ("id", Value::Int(img.id)),
                ("file_name", Value::Str(img.file_name.clone())),
                ("width", Value::Int(img.width as i64)),
                ("height", Value::Int(img.height as i64)),
            ])
        })
        .collect();
    let categories: Vec<Value> = set
        .categories
        .iter()
        .map(|cat| {
            Value::map_from(vec![
                ("id", Value::Int(cat.id)),
                ("name", Value::Str(cat.name.clone())),
            ])
        })
        .collect();
    let annotations: Vec<Value> = set
        .annotations
        .iter()
        .map(|ann| {
            let mut fields = vec![
                ("id", Value::Int(ann.id)),
                ("image_id", Value::Int(ann.image_id)),
                ("category_id", Value::Int(ann.category_id)),
                (
                    "bbox",
                    Value::List(ann.bbox.iter().map(|v| Value::Float(*v)).collect()),
                ),
                ("area", Value::Float(ann.area)),
                ("iscrowd", Value::Int(ann.iscrowd as i64)),
            ];
            if let Some(seg) = &ann.segmentation {
                fields.push(("segmentation", segmentation_to_value(seg)));
            }
            Value::map_from(fields)
        })
        .collect();
    Value::map_from(vec![
        ("images", Value::List(images)),
        ("categories", Value::List(categories)),
        ("annotations", Value::List(annotations)),
    ])
}

pub(crate) fn segmentation_to_value(seg: &Segmentation) -> Value {
    match seg {
        Segmentation::Polygons(rings) => Value::List(
            rings
                .iter()
                .map(|ring| Value::List(ring.iter().map(|c| Value::Float(*c)).collect()))
                .collect(),
        ),
        Segmentation::Rle { size, counts } => Value::map_from(vec![
            (
                "size",
                Value::List(vec![Value::Int(size.0 as i64), Value::Int(size.1 as i64)]),
            ),
            (
                "counts",
                Value::List(counts.iter().map(|c| Value::Int(*c as i64)).collect()),
            ),
        ]),
    }
}

pub fn write_instances(set: &InstanceSet) -> Result<String> {
    json::to_string_pretty(&instances_to_value(set))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> InstanceSet {
        InstanceSet {
            images: vec![CocoImage {
                id: 1,
                file_name: "img/0.png".into(),
                width: 8,
                height: 6,
            }],
            categories: vec![
                CocoCategory { id: 1, name: "disc".into() },
                CocoCategory { id: 2, name: "cross".into() },
            ],
            annotations: vec![InstanceRecord {
                id: 10,
                image_id: 1,
                category_id: 1,
                bbox: [1.0, 1.0, 4.0, 3.0],
                area: 12.0,
                iscrowd: false,
                segmentation: Some(Segmentation::Polygons(vec![vec![
                    1.0, 1.0, 5.0, 1.0, 5.0, 4.0, 1.0, 4.0,
                ]])),
            }],
        }
    }

    #[test]
    fn write_then_parse_is_identity() {
        let set = sample();
        let text = write_instances(&set).unwrap();
        let back = parse_instances(&json::parse(&text).unwrap()).unwrap();
        assert_eq!(back, set);
    }

    #[test]
    fn rectangle_polygon_rasterizes_to_its_area() {
        let seg = Segmentation::Polygons(vec![vec![1.0, 1.0, 5.0, 1.0, 5.0, 4.0, 1.0, 4.0]]);
        let mask = seg.to_mask(8, 6).unwrap();
        // Pixels with centers inside [1,5) x [1,4).
        assert_eq!(mask.count(), 12);
        assert!(mask.get(1, 1));
        assert!(mask.get(4, 3));
        assert!(!mask.get(5, 1));
        assert!(!mask.get(0, 0));
    }

    #[test]
    fn even_odd_rule_carves_holes() {
        let outer = vec![0.0, 0.0, 8.0, 0.0, 8.0, 6.0, 0.0, 6.0];
        let hole = vec![2.0, 2.0, 6.0, 2.0, 6.0, 4.0, 2.0, 4.0];
        let mask = Segmentation::Polygons(vec![outer, hole]).to_mask(8, 6).unwrap();
        assert_eq!(mask.count(), 48 - 8);
        assert!(!mask.get(3, 3));
        assert!(mask.get(1, 1));
    }

    #[test]
    fn rle_round_trips_through_mask() {
        let seg = Segmentation::Polygons(vec![vec![1.0, 1.0, 5.0, 1.0, 5.0, 4.0, 1.0, 4.0]]);
        let mask = seg.to_mask(8, 6).unwrap();
        let rle = mask_to_rle(&mask);
        let back = rle.to_mask(8, 6).unwrap();
        assert_eq!(back, mask);
        match &rle {
            Segmentation::Rle { size, counts } => {
                assert_eq!(*size, (6, 8));
                assert_eq!(counts.iter().sum::<u64>(), 48);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn missing_area_is_computed_from_mask_or_bbox() {
        let text = r#"{
            "images": [{"id": 1, "file_name": "a.png", "width": 8, "height": 6}],
            "categories": [{"id": 1, "name": "disc"}],
            "annotations": [
                {"id": 1, "image_id": 1, "category_id": 1, "bbox": [1, 1, 4, 3], "iscrowd": 0,
                 "segmentation": [[1.0, 1.0, 5.0, 1.0, 5.0, 4.0, 1.0, 4.0]]},
                {"id": 2, "image_id": 1, "category_id": 1, "bbox": [0, 0, 2, 2], "iscrowd": 0}
            ]
        }"#;
        let set = parse_instances(&json::parse(text).unwrap()).unwrap();
        assert_eq!(set.annotations[0].area, 12.0);
        assert_eq!(set.annotations[1].area, 4.0);
    }

    #[test]
    fn referential_integrity_is_checked() {
        let mut set = sample();
        set.annotations[0].image_id = 99;
        let text = write_instances(&set).unwrap();
        assert!(parse_instances(&json::parse(&text).unwrap()).is_err());

        let mut set = sample();
        set.annotations[0].category_id = 99;
        let text = write_instances(&set).unwrap();
        assert!(parse_instances(&json::parse(&text).unwrap()).is_err());
    }

    #[test]
    fn rle_counts_must_cover_the_grid() {
        let text = r#"{
            "images": [{"id": 1, "file_name": "a.png", "width": 4, "height": 4}],
            "categories": [{"id": 1, "name": "disc"}],
            "annotations": [
                {"id": 1, "image_id": 1, "category_id": 1, "bbox": [0, 0, 2, 2], "iscrowd": 0,
                 "segmentation": {"size": [4, 4], "counts": [3, 2]}}
            ]
        }"#;
        assert!(parse_instances(&json::parse(text).unwrap()).is_err());
    }
}

