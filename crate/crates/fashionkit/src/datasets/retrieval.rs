//! Retrieval split format.
//!
//! ```text
//! <image_path> <item_id> <shop|consumer> <train|query|gallery>
//! ```
//!
//! One record per line. Images of the same physical item share an
//! `item_id`; evaluation asks whether a query image retrieves any gallery
//! image of its own item. A split where some query item has no gallery
//! image can never be scored, so that is rejected at parse time.

use std::collections::BTreeSet;

use crate::error::{Error, Result};

use super::attribute::{check_token, numbered_lines};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Shop,
    Consumer,
}

impl Source {
    pub fn as_str(&self) -> &'static str {
        match self {
            Source::Shop => "shop",
            Source::Consumer => "consumer",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Train,
    Query,
    Gallery,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Query => "query",
            Role::Gallery => "gallery",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetrievalRecord {
    pub image_path: String,
    pub item_id: String,
    pub source: Source,
    pub role: Role,
}

pub fn parse_retrieval_split(text: &str, name: &str) -> Result<Vec<RetrievalRecord>> {
    let err = |line: usize, message: String| Error::ParseLine {
        file: name.to_string(),
        line,
        message,
    };
    let mut records = Vec::new();
    let mut seen_paths = BTreeSet::new();
    for (line_no, line) in numbered_lines(text) {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 4 {
            return Err(err(line_no, format!("expected 4 fields, found {}", toks.len())));
        }
        let source = match toks[2] {
            "shop" => Source::Shop,
            "consumer" => Source::Consumer,
            other => return Err(err(line_no, format!("invalid source \"{other}\""))),
        };
        let role = match toks[3] {
            "train" => Role::Train,
            "query" => Role::Query,
            "gallery" => Role::Gallery,
            other => return Err(err(line_no, format!("invalid role \"{other}\""))),
        };
        if !seen_paths.insert(toks[0].to_string()) {
            return Err(err(line_no, format!("duplicate image path \"{}\"", toks[0])));
        }
        records.push(RetrievalRecord {
            image_path: toks[0].to_string(),
            item_id: toks[1].to_string(),
            source,
            role,
        });
    }
    check_queries_are_answerable(&records)?;
    Ok(records)
}

/// Every query's item must appear in the gallery, otherwise recall for
/// that query is undefined.
fn check_queries_are_answerable(records: &[RetrievalRecord]) -> Result<()> {
    let gallery_items: BTreeSet<&str> = records
        .iter()
        .filter(|r| r.role == Role::Gallery)
        .map(|r| r.item_id.as_str())
        .collect();
    let mut missing: Vec<&str> = records
        .iter()
        .filter(|r| r.role == Role::Query && !gallery_items.contains(r.item_id.as_str()))
        .map(|r| r.item_id.as_str())
        .collect();
    missing.sort_unstable();
    missing.dedup();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "query items with no gallery image: {}",
            missing.join(", ")
        )))
    }
}

pub fn write_retrieval_split(records: &[RetrievalRecord]) -> Result<String> {
    check_queries_are_answerable(records)?;
    let mut seen_paths = BTreeSet::new();
    let mut out = String::new();
    for rec in records {
        check_token(&rec.image_path, "image path")?;
        check_token(&rec.item_id, "item id")?;
        if !seen_paths.insert(rec.image_path.as_str()) {
            return Err(Error::Validation(format!(
                "duplicate image path \"{}\"",
                rec.image_path
            )));
        }
        out.push_str(&format!(
            "{} {} {} {}\n",
            rec.image_path,
            rec.item_id,
            rec.source.as_str(),
            rec.role.as_str()
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
img/q0.png item_a consumer query
img/g0.png item_a shop gallery
img/t0.png item_a shop train
img/t1.png item_b shop train
";

    #[test]
    fn parses_roles_and_sources() {
        let recs = parse_retrieval_split(SAMPLE, "split.txt").unwrap();
        assert_eq!(recs.len(), 4);
        assert_eq!(recs[0].role, Role::Query);
        assert_eq!(recs[0].source, Source::Consumer);
        assert_eq!(recs[1].role, Role::Gallery);
        assert_eq!(recs[3].item_id, "item_b");
    }

    #[test]
    fn unanswerable_query_is_rejected() {
        let bad = "img/q.png item_x consumer query\nimg/g.png item_y shop gallery\n";
        let err = parse_retrieval_split(bad, "split.txt").unwrap_err();
        assert!(err.to_string().contains("item_x"));
    }

    #[test]
    fn field_validation() {
        assert!(parse_retrieval_split("a.png x shop\n", "s").is_err());
        assert!(parse_retrieval_split("a.png x shop probe\n", "s").is_err());
        assert!(parse_retrieval_split("a.png x street train\n", "s").is_err());
        let dup = "a.png x shop train\na.png y shop train\n";
        assert!(parse_retrieval_split(dup, "s").is_err());
    }

    #[test]
    fn write_then_parse_is_identity() {
        let recs = parse_retrieval_split(SAMPLE, "split.txt").unwrap();
        let text = write_retrieval_split(&recs).unwrap();
        assert_eq!(text, SAMPLE);
        assert_eq!(parse_retrieval_split(&text, "split.txt").unwrap(), recs);
    }
}
