//! In-memory image tensor and PNG round-trip.

use std::path::Path;

use crate::error::{Error, Result};

/// A dense CHW image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Image {
    /// All-zero image.
    pub fn zeros(channels: usize, height: usize, width: usize) -> Image {
        Image {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Fills every channel at `(y, x)` from an RGB triple.
    pub fn put_rgb(&mut self, y: usize, x: usize, rgb: [f64; 3]) {
        for c in 0..self.channels.min(3) {
            self.set(c, y, x, rgb[c]);
        }
    }
}

/// Decodes a PNG into an RGB image with values in `[0, 1]`.
pub fn load_png(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let decoded = image::open(path).map_err(|e| Error::Validation(format!(
        "{}: cannot decode image: {e}",
        path.display()
    )))?;
    let rgb = decoded.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut out = Image::zeros(3, h, w);
    for y in 0..h {
        for x in 0..w {
            let px = rgb.get_pixel(x as u32, y as u32);
            for c in 0..3 {
                out.set(c, y, x, px.0[c] as f64 / 255.0);
            }
        }
    }
    Ok(out)
}

/// Encodes an RGB image to a PNG file. Values are clamped to `[0, 1]` and
/// quantized to 8 bits.
pub fn save_png(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let path = path.as_ref();
    if img.channels != 3 {
        return Err(Error::Shape(format!(
            "PNG export needs 3 channels, image has {}",
            img.channels
        )));
    }
    let mut buf = image::RgbImage::new(img.width as u32, img.height as u32);
    for y in 0..img.height {
        for x in 0..img.width {
            let px = [
                quantize(img.get(0, y, x)),
                quantize(img.get(1, y, x)),
                quantize(img.get(2, y, x)),
            ];
            buf.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    buf.save(path)
        .map_err(|e| Error::Validation(format!("{}: cannot encode image: {e}", path.display())))
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_exact_after_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = Image::zeros(3, 5, 7);
        for y in 0..5 {
            for x in 0..7 {
                img.put_rgb(y, x, [x as f64 / 6.0, y as f64 / 4.0, 0.25]);
            }
        }
        let path = dir.path().join("t.png");
        save_png(&path, &img).unwrap();
        let back = load_png(&path).unwrap();
        assert_eq!((back.channels, back.height, back.width), (3, 5, 7));
        // One quantization step is lossy; a second one is not.
        save_png(&path, &back).unwrap();
        let again = load_png(&path).unwrap();
        assert_eq!(back, again);
        for v in &back.data {
            assert!((0.0..=1.0).contains(v));
        }
    }
}
