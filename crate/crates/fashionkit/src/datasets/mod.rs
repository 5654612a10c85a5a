//! Dataset formats, loaders, and synthetic data.
//!
//! Each task has a plain-text or JSON annotation format with a parser and
//! a writer (`parse_*` / `write_*`); the writer of every format is the
//! exact inverse of its parser. The `*Data` structs pair parsed records
//! with decoded images and are what the training pipeline consumes.
//! Synthetic datasets for every task live in [`synth`].

mod field;

pub mod attribute;
pub mod image_data;
pub mod instances;
pub mod landmark;
pub mod polyvore;
pub mod retrieval;
pub mod synth;

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

pub use attribute::{parse_attribute_file, write_attribute_file, AttributeFile, AttributeRecord};
pub use image_data::{load_png, save_png, Image};
pub use instances::{
    load_instances, mask_to_rle, parse_instances, write_instances, CocoCategory, CocoImage,
    InstanceRecord, InstanceSet, Mask, Segmentation,
};
pub use landmark::{parse_landmark_file, write_landmark_file, Landmark, LandmarkFile, LandmarkRecord};
pub use polyvore::{
    load_polyvore, write_polyvore, CompatQuestion, FitbQuestion, Outfit, OutfitItem, PolyvoreSet,
    PolyvoreSplit,
};
pub use retrieval::{parse_retrieval_split, write_retrieval_split, RetrievalRecord, Role, Source};

/// Attribute records with decoded images and, optionally, landmarks
/// joined by image path (needed for landmark-pooled attribute models).
#[derive(Debug, Clone)]
pub struct AttributeData {
    pub attr_names: Vec<String>,
    pub records: Vec<AttributeRecord>,
    pub images: Vec<Image>,
    pub landmarks: Option<AttachedLandmarks>,
}

/// Landmarks aligned index-for-index with the attribute records they
/// belong to.
#[derive(Debug, Clone)]
pub struct AttachedLandmarks {
    pub num: usize,
    pub width: u32,
    pub height: u32,
    pub per_image: Vec<Vec<Landmark>>,
}

impl AttributeData {
    pub fn num_attrs(&self) -> usize {
        self.attr_names.len()
    }

    /// Loads annotations plus images from `root`. Image paths in the
    /// annotation file are relative to `root`. When `landmark_file` is
    /// given, every attribute record must have landmarks for its exact
    /// image path, and every image must match the landmark frame size.
    pub fn load(root: &Path, ann_file: &str, landmark_file: Option<&str>) -> Result<AttributeData> {
        let ann_path = root.join(ann_file);
        let text = std::fs::read_to_string(&ann_path).map_err(|e| Error::io(&ann_path, e))?;
        let file = parse_attribute_file(&text, &ann_path.display().to_string())?;
        let images: Result<Vec<Image>> = file
            .records
            .iter()
            .map(|r| load_png(root.join(&r.image_path)))
            .collect();
        let images = images?;
        let landmarks = match landmark_file {
            None => None,
            Some(lm_file) => {
                let lm_path = root.join(lm_file);
                let lm_text =
                    std::fs::read_to_string(&lm_path).map_err(|e| Error::io(&lm_path, e))?;
                let lm = parse_landmark_file(&lm_text, &lm_path.display().to_string())?;
                let by_path: BTreeMap<&str, &Vec<Landmark>> = lm
                    .records
                    .iter()
                    .map(|r| (r.image_path.as_str(), &r.landmarks))
                    .collect();
                let mut per_image = Vec::with_capacity(file.records.len());
                for (rec, img) in file.records.iter().zip(&images) {
                    let lms = by_path.get(rec.image_path.as_str()).ok_or_else(|| {
                        Error::Validation(format!(
                            "no landmarks for image \"{}\" in {}",
                            rec.image_path, lm_file
                        ))
                    })?;
                    if img.width != lm.width as usize || img.height != lm.height as usize {
                        return Err(Error::Validation(format!(
                            "image \"{}\" is {}x{}, landmark frame is {}x{}",
                            rec.image_path, img.width, img.height, lm.width, lm.height
                        )));
                    }
                    per_image.push((*lms).clone());
                }
                Some(AttachedLandmarks {
                    num: lm.num_landmarks,
                    width: lm.width,
                    height: lm.height,
                    per_image,
                })
            }
        };
        Ok(AttributeData {
            attr_names: file.attr_names,
            records: file.records,
            images,
            landmarks,
        })
    }
}

/// Landmark records with decoded images, all in one shared frame size.
#[derive(Debug, Clone)]
pub struct LandmarkData {
    pub num_landmarks: usize,
    pub width: u32,
    pub height: u32,
    pub records: Vec<LandmarkRecord>,
    pub images: Vec<Image>,
}

impl LandmarkData {
    pub fn load(root: &Path, ann_file: &str) -> Result<LandmarkData> {
        let ann_path = root.join(ann_file);
        let text = std::fs::read_to_string(&ann_path).map_err(|e| Error::io(&ann_path, e))?;
        let file = parse_landmark_file(&text, &ann_path.display().to_string())?;
        let mut images = Vec::with_capacity(file.records.len());
        for rec in &file.records {
            let img = load_png(root.join(&rec.image_path))?;
            if img.width != file.width as usize || img.height != file.height as usize {
                return Err(Error::Validation(format!(
                    "image \"{}\" is {}x{}, landmark frame is {}x{}",
                    rec.image_path, img.width, img.height, file.width, file.height
                )));
            }
            images.push(img);
        }
        Ok(LandmarkData {
            num_landmarks: file.num_landmarks,
            width: file.width,
            height: file.height,
            records: file.records,
            images,
        })
    }
}

/// Retrieval records with decoded images plus role indices.
#[derive(Debug, Clone)]
pub struct RetrievalData {
    pub records: Vec<RetrievalRecord>,
    pub images: Vec<Image>,
}

impl RetrievalData {
    pub fn load(root: &Path, split_file: &str) -> Result<RetrievalData> {
        let split_path = root.join(split_file);
        let text = std::fs::read_to_string(&split_path).map_err(|e| Error::io(&split_path, e))?;
        let records = parse_retrieval_split(&text, &split_path.display().to_string())?;
        let images: Result<Vec<Image>> = records
            .iter()
            .map(|r| load_png(root.join(&r.image_path)))
            .collect();
        Ok(RetrievalData {
            records,
            images: images?,
        })
    }

    pub fn indices_with_role(&self, role: Role) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.role == role)
            .map(|(i, _)| i)
            .collect()
    }

    /// Training images grouped by item, keeping only items that can form
    /// anchor-positive pairs.
    pub fn train_items(&self) -> Vec<(&str, Vec<usize>)> {
        let mut by_item: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, rec) in self.records.iter().enumerate() {
            if rec.role == Role::Train {
                by_item.entry(rec.item_id.as_str()).or_default().push(i);
            }
        }
        by_item.into_iter().filter(|(_, v)| v.len() >= 2).collect()
    }
}

/// One outfit item with its decoded image.
#[derive(Debug, Clone)]
pub struct CompatItem {
    pub item_id: String,
    pub item_type: String,
    pub image: Image,
}

/// Outfit data with decoded item images and index structures for pair
/// enumeration.
#[derive(Debug, Clone)]
pub struct CompatData {
    pub split: PolyvoreSplit,
    pub items: Vec<CompatItem>,
    pub id_to_index: BTreeMap<String, usize>,
    /// `(outfit_id, item indices)` in file order.
    pub outfits: Vec<(String, Vec<usize>)>,
    pub fitb: Vec<FitbQuestion>,
    pub compat: Vec<CompatQuestion>,
}

impl CompatData {
    pub fn load(dir: &Path) -> Result<CompatData> {
        let set = load_polyvore(dir)?;
        let mut items: Vec<CompatItem> = Vec::new();
        let mut id_to_index: BTreeMap<String, usize> = BTreeMap::new();
        let mut outfits = Vec::with_capacity(set.outfits.len());
        for outfit in &set.outfits {
            let mut indices = Vec::with_capacity(outfit.items.len());
            for item in &outfit.items {
                let idx = match id_to_index.get(&item.item_id) {
                    Some(&idx) => idx,
                    None => {
                        let image = load_png(dir.join(&item.image_path))?;
                        items.push(CompatItem {
                            item_id: item.item_id.clone(),
                            item_type: item.item_type.clone(),
                            image,
                        });
                        id_to_index.insert(item.item_id.clone(), items.len() - 1);
                        items.len() - 1
                    }
                };
                indices.push(idx);
            }
            outfits.push((outfit.outfit_id.clone(), indices));
        }
        Ok(CompatData {
            split: set.split,
            items,
            id_to_index,
            outfits,
            fitb: set.fitb,
            compat: set.compat,
        })
    }

    pub fn index_of(&self, item_id: &str) -> Result<usize> {
        self.id_to_index
            .get(item_id)
            .copied()
            .ok_or_else(|| Error::Validation(format!("unknown item \"{item_id}\"")))
    }
}
