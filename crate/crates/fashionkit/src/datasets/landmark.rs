//! Landmark annotation format.
//!
//! ```text
//! <image count>
//! <L> <width> <height>
//! <image_path> <vis_1> <x_1> <y_1> ... <vis_L> <x_L> <y_L>
//! ```
//!
//! Every image carries exactly `L` landmark triples. The visibility code
//! is `0` for visible, `1` for occluded, `2` for out of frame; only code
//! `0` contributes to training and evaluation. Coordinates are pixels in
//! the shared `width x height` frame, and visible coordinates must lie
//! inside it.

use crate::error::{Error, Result};

use super::attribute::{check_token, numbered_lines};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Landmark {
    pub vis: u8,
    pub x: f64,
    pub y: f64,
}

impl Landmark {
    pub fn is_visible(&self) -> bool {
        self.vis == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkRecord {
    pub image_path: String,
    pub landmarks: Vec<Landmark>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkFile {
    pub num_landmarks: usize,
    pub width: u32,
    pub height: u32,
    pub records: Vec<LandmarkRecord>,
}

pub fn parse_landmark_file(text: &str, name: &str) -> Result<LandmarkFile> {
    let err = |line: usize, message: String| Error::ParseLine {
        file: name.to_string(),
        line,
        message,
    };
    let mut lines = numbered_lines(text);
    let (l1, count_line) = lines
        .next()
        .ok_or_else(|| err(1, "missing image count line".to_string()))?;
    let expected: usize = count_line
        .trim()
        .parse()
        .map_err(|_| err(l1, format!("invalid image count \"{}\"", count_line.trim())))?;
    let (l2, header) = lines
        .next()
        .ok_or_else(|| err(l1, "missing landmark header line".to_string()))?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 3 {
        return Err(err(l2, "header must be \"<L> <width> <height>\"".to_string()));
    }
    let num: usize = toks[0]
        .parse()
        .map_err(|_| err(l2, format!("invalid landmark count \"{}\"", toks[0])))?;
    let width: u32 = toks[1]
        .parse()
        .map_err(|_| err(l2, format!("invalid width \"{}\"", toks[1])))?;
    let height: u32 = toks[2]
        .parse()
        .map_err(|_| err(l2, format!("invalid height \"{}\"", toks[2])))?;
    if num == 0 || width == 0 || height == 0 {
        return Err(err(l2, "landmark count and image size must be positive".to_string()));
    }

    let mut records = Vec::new();
    let mut last_line = l2;
    for (line_no, line) in lines {
        last_line = line_no;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 1 + 3 * num {
            return Err(err(
                line_no,
                format!("expected {} tokens, found {}", 1 + 3 * num, toks.len()),
            ));
        }
        let image_path = toks[0].to_string();
        let mut landmarks = Vec::with_capacity(num);
        for i in 0..num {
            let vis: u8 = toks[1 + 3 * i]
                .parse()
                .ok()
                .filter(|v| *v <= 2)
                .ok_or_else(|| {
                    err(line_no, format!("invalid visibility code \"{}\"", toks[1 + 3 * i]))
                })?;
            let x: f64 = toks[2 + 3 * i]
                .parse()
                .map_err(|_| err(line_no, format!("invalid x \"{}\"", toks[2 + 3 * i])))?;
            let y: f64 = toks[3 + 3 * i]
                .parse()
                .map_err(|_| err(line_no, format!("invalid y \"{}\"", toks[3 + 3 * i])))?;
            if vis == 0 && !(0.0 <= x && x < width as f64 && 0.0 <= y && y < height as f64) {
                return Err(err(
                    line_no,
                    format!("visible landmark ({x}, {y}) outside {width}x{height} frame"),
                ));
            }
            landmarks.push(Landmark { vis, x, y });
        }
        records.push(LandmarkRecord { image_path, landmarks });
    }
    if records.len() != expected {
        return Err(err(
            last_line,
            format!("header says {expected} images, file has {}", records.len()),
        ));
    }
    Ok(LandmarkFile { num_landmarks: num, width, height, records })
}

pub fn write_landmark_file(file: &LandmarkFile) -> Result<String> {
    if file.num_landmarks == 0 || file.width == 0 || file.height == 0 {
        return Err(Error::Validation(
            "landmark count and image size must be positive".into(),
        ));
    }
    let mut out = String::new();
    out.push_str(&file.records.len().to_string());
    out.push('\n');
    out.push_str(&format!("{} {} {}\n", file.num_landmarks, file.width, file.height));
    for rec in &file.records {
        check_token(&rec.image_path, "image path")?;
        if rec.landmarks.len() != file.num_landmarks {
            return Err(Error::Validation(format!(
                "record \"{}\" has {} landmarks, expected {}",
                rec.image_path,
                rec.landmarks.len(),
                file.num_landmarks
            )));
        }
        out.push_str(&rec.image_path);
        for lm in &rec.landmarks {
            if lm.vis > 2 {
                return Err(Error::Validation(format!("invalid visibility code {}", lm.vis)));
            }
            if !lm.x.is_finite() || !lm.y.is_finite() {
                return Err(Error::Validation("non-finite landmark coordinate".into()));
            }
            if lm.is_visible()
                && !(0.0 <= lm.x
                    && lm.x < file.width as f64
                    && 0.0 <= lm.y
                    && lm.y < file.height as f64)
            {
                return Err(Error::Validation(format!(
                    "visible landmark ({}, {}) outside {}x{} frame",
                    lm.x, lm.y, file.width, file.height
                )));
            }
            out.push_str(&format!(" {} {} {}", lm.vis, lm.x, lm.y));
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "2\n3 64 48\nimages/a.png 0 10 12 1 0 0 0 33.5 20\nimages/b.png 2 0 0 0 1 1 0 63 47\n";

    #[test]
    fn parses_the_documented_layout() {
        let f = parse_landmark_file(SAMPLE, "lm.txt").unwrap();
        assert_eq!((f.num_landmarks, f.width, f.height), (3, 64, 48));
        assert_eq!(f.records.len(), 2);
        let a = &f.records[0];
        assert!(a.landmarks[0].is_visible());
        assert!(!a.landmarks[1].is_visible());
        assert_eq!(a.landmarks[2], Landmark { vis: 0, x: 33.5, y: 20.0 });
    }

    #[test]
    fn visible_landmarks_must_be_inside_the_frame() {
        let bad = "1\n1 64 48\nimages/a.png 0 64 10\n";
        assert!(parse_landmark_file(bad, "lm.txt").is_err());
        let occluded_outside = "1\n1 64 48\nimages/a.png 1 999 -4\n";
        assert!(parse_landmark_file(occluded_outside, "lm.txt").is_ok());
    }

    #[test]
    fn token_count_and_header_are_checked() {
        assert!(parse_landmark_file("1\n2 64\nimages/a.png 0 1 1 0 1 1\n", "lm.txt").is_err());
        assert!(parse_landmark_file("1\n2 64 48\nimages/a.png 0 1 1\n", "lm.txt").is_err());
        assert!(parse_landmark_file("1\n2 64 48\nimages/a.png 0 1 1 3 1 1\n", "lm.txt").is_err());
        assert!(parse_landmark_file("2\n1 64 48\nimages/a.png 0 1 1\n", "lm.txt").is_err());
    }

    #[test]
    fn write_then_parse_is_identity() {
        let f = parse_landmark_file(SAMPLE, "lm.txt").unwrap();
        let text = write_landmark_file(&f).unwrap();
        assert_eq!(parse_landmark_file(&text, "lm.txt").unwrap(), f);
    }

    #[test]
    fn writer_validates_records() {
        let mut f = parse_landmark_file(SAMPLE, "lm.txt").unwrap();
        f.records[0].landmarks[0].x = -1.0;
        assert!(write_landmark_file(&f).is_err());
        let mut g = parse_landmark_file(SAMPLE, "lm.txt").unwrap();
        g.records[0].landmarks.pop();
        assert!(write_landmark_file(&g).is_err());
    }
}
