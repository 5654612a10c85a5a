//! Attribute annotation format.
//!
//! ```text
//! <image count>
//! <name_1> <name_2> ... <name_c>
//! <image_path> <l_1> ... <l_c>
//! ```
//!
//! Labels are `0`/`1`, one column per attribute name. The count on the
//! first line must match the number of record lines; a mismatch means the
//! file was truncated or concatenated and is an error, never a silent
//! truncation.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeRecord {
    pub image_path: String,
    pub labels: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeFile {
    pub attr_names: Vec<String>,
    pub records: Vec<AttributeRecord>,
}

/// Parses the attribute format. `name` is used in error positions.
pub fn parse_attribute_file(text: &str, name: &str) -> Result<AttributeFile> {
    let err = |line: usize, message: String| Error::ParseLine {
        file: name.to_string(),
        line,
        message,
    };
    let mut lines = numbered_lines(text);
    let (count_line_no, count_line) = lines
        .next()
        .ok_or_else(|| err(1, "missing image count line".to_string()))?;
    let expected: usize = count_line
        .trim()
        .parse()
        .map_err(|_| err(count_line_no, format!("invalid image count \"{}\"", count_line.trim())))?;
    let (names_line_no, names_line) = lines
        .next()
        .ok_or_else(|| err(count_line_no, "missing attribute names line".to_string()))?;
    let attr_names: Vec<String> = names_line.split_whitespace().map(str::to_string).collect();
    if attr_names.is_empty() {
        return Err(err(names_line_no, "no attribute names".to_string()));
    }
    for (i, a) in attr_names.iter().enumerate() {
        if attr_names[..i].contains(a) {
            return Err(err(names_line_no, format!("duplicate attribute name \"{a}\"")));
        }
    }
    let c = attr_names.len();

    let mut records = Vec::new();
    let mut last_line = names_line_no;
    for (line_no, line) in lines {
        last_line = line_no;
        let mut tokens = line.split_whitespace();
        let image_path = tokens.next().expect("non-blank line").to_string();
        let mut labels = Vec::with_capacity(c);
        for tok in tokens.by_ref() {
            match tok {
                "0" => labels.push(false),
                "1" => labels.push(true),
                other => {
                    return Err(err(line_no, format!("invalid label \"{other}\" (expected 0 or 1)")))
                }
            }
        }
        if labels.len() != c {
            return Err(err(
                line_no,
                format!("expected {c} labels, found {}", labels.len()),
            ));
        }
        records.push(AttributeRecord { image_path, labels });
    }
    if records.len() != expected {
        return Err(err(
            last_line,
            format!("header says {expected} images, file has {}", records.len()),
        ));
    }
    Ok(AttributeFile { attr_names, records })
}

/// Renders the attribute format. Rejects names or paths that could not be
/// parsed back (whitespace, empty strings) instead of writing them.
pub fn write_attribute_file(file: &AttributeFile) -> Result<String> {
    if file.attr_names.is_empty() {
        return Err(Error::Validation("attribute file needs at least one attribute".into()));
    }
    for name in &file.attr_names {
        check_token(name, "attribute name")?;
    }
    let c = file.attr_names.len();
    let mut out = String::new();
    out.push_str(&file.records.len().to_string());
    out.push('\n');
    out.push_str(&file.attr_names.join(" "));
    out.push('\n');
    for rec in &file.records {
        check_token(&rec.image_path, "image path")?;
        if rec.labels.len() != c {
            return Err(Error::Validation(format!(
                "record \"{}\" has {} labels, expected {c}",
                rec.image_path,
                rec.labels.len()
            )));
        }
        out.push_str(&rec.image_path);
        for &l in &rec.labels {
            out.push_str(if l { " 1" } else { " 0" });
        }
        out.push('\n');
    }
    Ok(out)
}

/// Non-blank lines with 1-based numbers.
pub(crate) fn numbered_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty())
}

pub(crate) fn check_token(tok: &str, what: &str) -> Result<()> {
    if tok.is_empty() {
        return Err(Error::Validation(format!("empty {what}")));
    }
    if tok.chars().any(char::is_whitespace) {
        return Err(Error::Validation(format!(
            "{what} \"{tok}\" contains whitespace, which the format cannot represent"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "2\nstriped dotted floral\nimages/a.png 1 0 1\nimages/b.png 0 0 0\n";

    #[test]
    fn parses_the_documented_layout() {
        let f = parse_attribute_file(SAMPLE, "attr.txt").unwrap();
        assert_eq!(f.attr_names, ["striped", "dotted", "floral"]);
        assert_eq!(f.records.len(), 2);
        assert_eq!(f.records[0].image_path, "images/a.png");
        assert_eq!(f.records[0].labels, [true, false, true]);
        assert_eq!(f.records[1].labels, [false, false, false]);
    }

    #[test]
    fn empty_body_is_a_valid_empty_set() {
        let f = parse_attribute_file("0\nstriped dotted\n", "attr.txt").unwrap();
        assert_eq!(f.records, []);
    }

    #[test]
    fn count_mismatch_is_an_error() {
        let err = parse_attribute_file("3\na b\np.png 1 0\n", "attr.txt").unwrap_err();
        assert!(err.to_string().contains("header says 3"));
    }

    #[test]
    fn malformed_lines_carry_positions() {
        let err = parse_attribute_file("1\na b\np.png 1 2\n", "attr.txt").unwrap_err();
        match err {
            Error::ParseLine { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error: {other}"),
        }
        assert!(parse_attribute_file("1\na b\np.png 1\n", "attr.txt").is_err());
        assert!(parse_attribute_file("x\na b\n", "attr.txt").is_err());
        assert!(parse_attribute_file("0\na a\n", "attr.txt").is_err());
    }

    #[test]
    fn write_then_parse_is_identity() {
        let f = parse_attribute_file(SAMPLE, "attr.txt").unwrap();
        let text = write_attribute_file(&f).unwrap();
        assert_eq!(text, SAMPLE);
        assert_eq!(parse_attribute_file(&text, "attr.txt").unwrap(), f);
    }

    #[test]
    fn writer_rejects_unrepresentable_records() {
        let mut f = parse_attribute_file(SAMPLE, "attr.txt").unwrap();
        f.records[0].image_path = "has space.png".into();
        assert!(write_attribute_file(&f).is_err());
        let mut g = parse_attribute_file(SAMPLE, "attr.txt").unwrap();
        g.records[1].labels.pop();
        assert!(write_attribute_file(&g).is_err());
    }
}
