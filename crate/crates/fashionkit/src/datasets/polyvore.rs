//! Outfit compatibility data: outfits, fill-in-the-blank questions, and
//! labeled compatibility questions.
//!
//! Three documents live side by side in one directory:
//!
//! * `outfits.json`: `{"split": "disjoint"|"nondisjoint", "outfits":
//!   [{"outfit_id", "items": [{"item_id", "image_path", "type"}]}]}`.
//!   Under the `disjoint` split an item may appear in exactly one outfit;
//!   under `nondisjoint` items may be shared, but a shared `item_id` must
//!   keep the same image and type everywhere.
//! * `fitb.json`: `{"questions": [{"question_id", "context": [ids],
//!   "candidates": [4 ids], "answer_index": 0..=3}]}`.
//! * `compat.json`: `{"questions": [{"question_id", "items": [ids],
//!   "label": bool}]}`.
//!
//! Question files are optional; a missing file means no questions of that
//! kind. Every id referenced by a question must resolve to an outfit item.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::error::{Error, Result};
use crate::json::{self, Value};

use super::field::{as_map, req_bool, req_i64, req_list, req_str, str_list};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolyvoreSplit {
    Disjoint,
    NonDisjoint,
}

impl PolyvoreSplit {
    pub fn as_str(&self) -> &'static str {
        match self {
            PolyvoreSplit::Disjoint => "disjoint",
            PolyvoreSplit::NonDisjoint => "nondisjoint",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutfitItem {
    pub item_id: String,
    pub image_path: String,
    pub item_type: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outfit {
    pub outfit_id: String,
    pub items: Vec<OutfitItem>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FitbQuestion {
    pub question_id: String,
    pub context: Vec<String>,
    pub candidates: Vec<String>,
    pub answer_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompatQuestion {
    pub question_id: String,
    pub items: Vec<String>,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolyvoreSet {
    pub split: PolyvoreSplit,
    pub outfits: Vec<Outfit>,
    pub fitb: Vec<FitbQuestion>,
    pub compat: Vec<CompatQuestion>,
}

pub fn parse_outfits(doc: &Value) -> Result<(PolyvoreSplit, Vec<Outfit>)> {
    let root = as_map(doc, "outfits document")?;
    let split = match req_str(root, "split", "outfits document")? {
        "disjoint" => PolyvoreSplit::Disjoint,
        "nondisjoint" => PolyvoreSplit::NonDisjoint,
        other => {
            return Err(Error::Validation(format!(
                "split must be \"disjoint\" or \"nondisjoint\", found \"{other}\""
            )))
        }
    };
    let mut outfits = Vec::new();
    let mut outfit_ids = BTreeSet::new();
    for (i, entry) in req_list(root, "outfits", "outfits document")?.iter().enumerate() {
        let m = as_map(entry, &format!("outfits[{i}]"))?;
        let outfit_id = req_str(m, "outfit_id", "outfit")?.to_string();
        if !outfit_ids.insert(outfit_id.clone()) {
            return Err(Error::Validation(format!("duplicate outfit id \"{outfit_id}\"")));
        }
        let mut items = Vec::new();
        let mut local_ids = BTreeSet::new();
        for (j, item) in req_list(m, "items", "outfit")?.iter().enumerate() {
            let im = as_map(item, &format!("outfit \"{outfit_id}\" items[{j}]"))?;
            let item = OutfitItem {
                item_id: req_str(im, "item_id", "outfit item")?.to_string(),
                image_path: req_str(im, "image_path", "outfit item")?.to_string(),
                item_type: req_str(im, "type", "outfit item")?.to_string(),
            };
            if item.item_id.is_empty() || item.item_type.is_empty() || item.image_path.is_empty() {
                return Err(Error::Validation(format!(
                    "outfit \"{outfit_id}\": empty field in item {j}"
                )));
            }
            if !local_ids.insert(item.item_id.clone()) {
                return Err(Error::Validation(format!(
                    "outfit \"{outfit_id}\" lists item \"{}\" twice",
                    item.item_id
                )));
            }
            items.push(item);
        }
        if items.len() < 2 {
            return Err(Error::Validation(format!(
                "outfit \"{outfit_id}\" has {} items, need at least 2",
                items.len()
            )));
        }
        outfits.push(Outfit { outfit_id, items });
    }
    check_item_consistency(split, &outfits)?;
    Ok((split, outfits))
}

/// Item-id rules that depend on the split kind.
fn check_item_consistency(split: PolyvoreSplit, outfits: &[Outfit]) -> Result<()> {
    let mut seen: BTreeMap<&str, (&str, &OutfitItem)> = BTreeMap::new();
    for outfit in outfits {
        for item in &outfit.items {
            match seen.entry(item.item_id.as_str()) {
                Entry::Vacant(e) => {
                    e.insert((outfit.outfit_id.as_str(), item));
                }
                Entry::Occupied(e) => {
                    let (first_outfit, first) = e.get();
                    if split == PolyvoreSplit::Disjoint {
                        return Err(Error::Validation(format!(
                            "disjoint split: item \"{}\" appears in outfits \"{first_outfit}\" and \"{}\"",
                            item.item_id, outfit.outfit_id
                        )));
                    }
                    if first.image_path != item.image_path || first.item_type != item.item_type {
                        return Err(Error::Validation(format!(
                            "item \"{}\" has conflicting definitions across outfits",
                            item.item_id
                        )));
                    }
                }
            }
        }
    }
    Ok(())
}

pub fn parse_fitb(doc: &Value) -> Result<Vec<FitbQuestion>> {
    let root = as_map(doc, "fitb document")?;
    let mut questions = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, entry) in req_list(root, "questions", "fitb document")?.iter().enumerate() {
        let m = as_map(entry, &format!("questions[{i}]"))?;
        let question_id = req_str(m, "question_id", "fitb question")?.to_string();
        if !ids.insert(question_id.clone()) {
            return Err(Error::Validation(format!("duplicate question id \"{question_id}\"")));
        }
        let context = str_list(m, "context", "fitb question")?;
        let candidates = str_list(m, "candidates", "fitb question")?;
        let answer_index = req_i64(m, "answer_index", "fitb question")?;
        if context.is_empty() {
            return Err(Error::Validation(format!(
                "fitb question \"{question_id}\": empty context"
            )));
        }
        if candidates.len() != 4 {
            return Err(Error::Validation(format!(
                "fitb question \"{question_id}\": expected 4 candidates, found {}",
                candidates.len()
            )));
        }
        let distinct: BTreeSet<&String> = candidates.iter().collect();
        if distinct.len() != candidates.len() {
            return Err(Error::Validation(format!(
                "fitb question \"{question_id}\": duplicate candidates"
            )));
        }
        if candidates.iter().any(|c| context.contains(c)) {
            return Err(Error::Validation(format!(
                "fitb question \"{question_id}\": a candidate also appears in the context"
            )));
        }
        let answer_index = usize::try_from(answer_index)
            .ok()
            .filter(|a| *a < candidates.len())
            .ok_or_else(|| {
                Error::Validation(format!(
                    "fitb question \"{question_id}\": answer_index out of range"
                ))
            })?;
        questions.push(FitbQuestion {
            question_id,
            context,
            candidates,
            answer_index,
        });
    }
    Ok(questions)
}

pub fn parse_compat_questions(doc: &Value) -> Result<Vec<CompatQuestion>> {
    let root = as_map(doc, "compat document")?;
    let mut questions = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, entry) in req_list(root, "questions", "compat document")?.iter().enumerate() {
        let m = as_map(entry, &format!("questions[{i}]"))?;
        let question_id = req_str(m, "question_id", "compat question")?.to_string();
        if !ids.insert(question_id.clone()) {
            return Err(Error::Validation(format!("duplicate question id \"{question_id}\"")));
        }
        let items = str_list(m, "items", "compat question")?;
        if items.len() < 2 {
            return Err(Error::Validation(format!(
                "compat question \"{question_id}\": needs at least 2 items"
            )));
        }
        let distinct: BTreeSet<&String> = items.iter().collect();
        if distinct.len() != items.len() {
            return Err(Error::Validation(format!(
                "compat question \"{question_id}\": duplicate items"
            )));
        }
        let label = req_bool(m, "label", "compat question")?;
        questions.push(CompatQuestion {
            question_id,
            items,
            label,
        });
    }
    Ok(questions)
}

/// Id-to-item index over all outfits.
pub fn item_index(outfits: &[Outfit]) -> BTreeMap<&str, &OutfitItem> {
    let mut index = BTreeMap::new();
    for outfit in outfits {
        for item in &outfit.items {
            index.insert(item.item_id.as_str(), item);
        }
    }
    index
}

/// Cross-file checks: every question id must resolve to an outfit item.
pub fn validate_polyvore(set: &PolyvoreSet) -> Result<()> {
    check_item_consistency(set.split, &set.outfits)?;
    let index = item_index(&set.outfits);
    let check = |ids: &[String], what: &str, qid: &str| -> Result<()> {
        for id in ids {
            if !index.contains_key(id.as_str()) {
                return Err(Error::Validation(format!(
                    "{what} \"{qid}\" references unknown item \"{id}\""
                )));
            }
        }
        Ok(())
    };
    for q in &set.fitb {
        check(&q.context, "fitb question", &q.question_id)?;
        check(&q.candidates, "fitb question", &q.question_id)?;
    }
    for q in &set.compat {
        check(&q.items, "compat question", &q.question_id)?;
    }
    Ok(())
}

/// Loads `outfits.json` plus the optional question files from a directory.
pub fn load_polyvore(dir: impl AsRef<Path>) -> Result<PolyvoreSet> {
    let dir = dir.as_ref();
    let outfits_path = dir.join("outfits.json");
    let text = std::fs::read_to_string(&outfits_path).map_err(|e| Error::io(&outfits_path, e))?;
    let (split, outfits) = parse_outfits(&json::parse_named(&text, &outfits_path.display().to_string())?)?;

    let fitb = match read_optional(&dir.join("fitb.json"))? {
        Some(doc) => parse_fitb(&doc)?,
        None => Vec::new(),
    };
    let compat = match read_optional(&dir.join("compat.json"))? {
        Some(doc) => parse_compat_questions(&doc)?,
        None => Vec::new(),
    };
    let set = PolyvoreSet {
        split,
        outfits,
        fitb,
        compat,
    };
    validate_polyvore(&set)?;
    Ok(set)
}

fn read_optional(path: &Path) -> Result<Option<Value>> {
    match std::fs::read_to_string(path) {
        Ok(text) => Ok(Some(json::parse_named(&text, &path.display().to_string())?)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(path, e)),
    }
}

pub fn outfits_to_value(split: PolyvoreSplit, outfits: &[Outfit]) -> Value {
    let entries: Vec<Value> = outfits
        .iter()
        .map(|o| {
            let items: Vec<Value> = o
                .items
                .iter()
                .map(|it| {
                    Value::map_from(vec![
                        ("item_id", Value::Str(it.item_id.clone())),
                        ("image_path", Value::Str(it.image_path.clone())),
                        ("type", Value::Str(it.item_type.clone())),
                    ])
                })
                .collect();
            Value::map_from(vec![
                ("outfit_id", Value::Str(o.outfit_id.clone())),
                ("items", Value::List(items)),
            ])
        })
        .collect();
    Value::map_from(vec![
        ("split", Value::Str(split.as_str().to_string())),
        ("outfits", Value::List(entries)),
    ])
}

pub fn fitb_to_value(questions: &[FitbQuestion]) -> Value {
    let entries: Vec<Value> = questions
        .iter()
        .map(|q| {
            Value::map_from(vec![
                ("question_id", Value::Str(q.question_id.clone())),
                ("context", string_list(&q.context)),
                ("candidates", string_list(&q.candidates)),
                ("answer_index", Value::Int(q.answer_index as i64)),
            ])
        })
        .collect();
    Value::map_from(vec![("questions", Value::List(entries))])
}

pub fn compat_questions_to_value(questions: &[CompatQuestion]) -> Value {
    let entries: Vec<Value> = questions
        .iter()
        .map(|q| {
            Value::map_from(vec![
                ("question_id", Value::Str(q.question_id.clone())),
                ("items", string_list(&q.items)),
                ("label", Value::Bool(q.label)),
            ])
        })
        .collect();
    Value::map_from(vec![("questions", Value::List(entries))])
}

fn string_list(items: &[String]) -> Value {
    Value::List(items.iter().map(|s| Value::Str(s.clone())).collect())
}

/// Writes the three documents into a directory.
pub fn write_polyvore(dir: impl AsRef<Path>, set: &PolyvoreSet) -> Result<()> {
    validate_polyvore(set)?;
    let dir = dir.as_ref();
    let write = |name: &str, value: &Value| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, json::to_string_pretty(value)?).map_err(|e| Error::io(&path, e))
    };
    write("outfits.json", &outfits_to_value(set.split, &set.outfits))?;
    write("fitb.json", &fitb_to_value(&set.fitb))?;
    write("compat.json", &compat_questions_to_value(&set.compat))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outfit(id: &str, items: &[(&str, &str)]) -> Outfit {
        Outfit {
            outfit_id: id.to_string(),
            items: items
                .iter()
                .map(|(item_id, ty)| OutfitItem {
                    item_id: item_id.to_string(),
                    image_path: format!("images/{item_id}.png"),
                    item_type: ty.to_string(),
                })
                .collect(),
        }
    }

    fn sample() -> PolyvoreSet {
        PolyvoreSet {
            split: PolyvoreSplit::Disjoint,
            outfits: vec![
                outfit("o0", &[("o0_top", "top"), ("o0_bot", "bottom"), ("o0_shoe", "shoe")]),
                outfit("o1", &[("o1_top", "top"), ("o1_bot", "bottom"), ("o1_shoe", "shoe")]),
            ],
            fitb: vec![FitbQuestion {
                question_id: "q0".into(),
                context: vec!["o0_top".into(), "o0_bot".into()],
                candidates: vec!["o0_shoe".into(), "o1_shoe".into(), "o1_top".into(), "o1_bot".into()],
                answer_index: 0,
            }],
            compat: vec![
                CompatQuestion {
                    question_id: "c0".into(),
                    items: vec!["o0_top".into(), "o0_bot".into()],
                    label: true,
                },
                CompatQuestion {
                    question_id: "c1".into(),
                    items: vec!["o0_top".into(), "o1_bot".into()],
                    label: false,
                },
            ],
        }
    }

    #[test]
    fn round_trips_through_a_directory() {
        let dir = tempfile::tempdir().unwrap();
        let set = sample();
        write_polyvore(dir.path(), &set).unwrap();
        let back = load_polyvore(dir.path()).unwrap();
        assert_eq!(back, set);
    }

    #[test]
    fn missing_question_files_mean_no_questions() {
        let dir = tempfile::tempdir().unwrap();
        let mut set = sample();
        set.fitb.clear();
        set.compat.clear();
        let doc = outfits_to_value(set.split, &set.outfits);
        std::fs::write(dir.path().join("outfits.json"), json::to_string_pretty(&doc).unwrap())
            .unwrap();
        let back = load_polyvore(dir.path()).unwrap();
        assert_eq!(back, set);
    }

    #[test]
    fn disjoint_split_rejects_shared_items() {
        let mut set = sample();
        set.fitb.clear();
        set.compat.clear();
        set.outfits[1].items[0].item_id = "o0_top".into();
        set.outfits[1].items[0].image_path = "images/o0_top.png".into();
        assert!(validate_polyvore(&set).is_err());
        // The same sharing is fine when the split says nondisjoint.
        set.split = PolyvoreSplit::NonDisjoint;
        assert!(validate_polyvore(&set).is_ok());
        // But a conflicting definition is never fine.
        set.outfits[1].items[0].image_path = "images/other.png".into();
        assert!(validate_polyvore(&set).is_err());
    }

    #[test]
    fn fitb_structure_is_validated() {
        let mut set = sample();
        set.fitb[0].answer_index = 4;
        let doc = fitb_to_value(&set.fitb);
        assert!(parse_fitb(&doc).is_err());

        set.fitb[0].answer_index = 0;
        set.fitb[0].candidates[1] = "o0_shoe".into();
        assert!(parse_fitb(&fitb_to_value(&set.fitb)).is_err());

        set.fitb[0].candidates[1] = "o0_bot".into();
        assert!(parse_fitb(&fitb_to_value(&set.fitb)).is_err());
    }

    #[test]
    fn unknown_item_references_are_rejected() {
        let mut set = sample();
        set.compat[0].items[0] = "ghost".into();
        assert!(validate_polyvore(&set).is_err());
    }
}
