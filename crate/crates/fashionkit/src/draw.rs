//! Annotation overlays for demo output.
//!
//! The palette is fixed so annotated images are byte-stable for fixed
//! inputs. All drawing clips to the canvas.

use crate::datasets::Image;

/// Saturated, well-separated colors, cycled by annotation index.
pub const PALETTE: [[f64; 3]; 8] = [
    [1.0, 0.2, 0.2],
    [0.2, 0.9, 0.2],
    [0.3, 0.4, 1.0],
    [1.0, 0.9, 0.1],
    [1.0, 0.3, 1.0],
    [0.2, 0.9, 0.9],
    [1.0, 0.6, 0.1],
    [1.0, 1.0, 1.0],
];

pub fn palette_color(index: usize) -> [f64; 3] {
    PALETTE[index % PALETTE.len()]
}

fn put(img: &mut Image, y: i64, x: i64, rgb: [f64; 3]) {
    if (0..img.height as i64).contains(&y) && (0..img.width as i64).contains(&x) {
        img.put_rgb(y as usize, x as usize, rgb);
    }
}

/// Plus-shaped cross centered at pixel `(x, y)` with arms of `arm`
/// pixels beyond the center.
pub fn draw_cross(img: &mut Image, x: i64, y: i64, arm: i64, rgb: [f64; 3]) {
    for d in -arm..=arm {
        put(img, y, x + d, rgb);
        put(img, y + d, x, rgb);
    }
}

/// One-pixel rectangle outline with top-left `(x, y)` and the given
/// width and height.
pub fn draw_rect(img: &mut Image, x: i64, y: i64, w: i64, h: i64, rgb: [f64; 3]) {
    if w <= 0 || h <= 0 {
        return;
    }
    for dx in 0..w {
        put(img, y, x + dx, rgb);
        put(img, y + h - 1, x + dx, rgb);
    }
    for dy in 0..h {
        put(img, y + dy, x, rgb);
        put(img, y + dy, x + w - 1, rgb);
    }
}

/// Copy of `img` with a palette-cycled cross per landmark, given in
/// pixel coordinates.
pub fn annotate_landmarks(img: &Image, points: &[(f64, f64)]) -> Image {
    let mut out = img.clone();
    let arm = (img.width.min(img.height) as i64 / 16).max(2);
    for (i, &(x, y)) in points.iter().enumerate() {
        draw_cross(
            &mut out,
            x.round() as i64,
            y.round() as i64,
            arm,
            palette_color(i),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rgb_at(img: &Image, y: usize, x: usize) -> [f64; 3] {
        [img.get(0, y, x), img.get(1, y, x), img.get(2, y, x)]
    }

    #[test]
    fn cross_marks_the_arms_and_nothing_else() {
        let mut img = Image::zeros(3, 9, 9);
        draw_cross(&mut img, 4, 4, 2, PALETTE[0]);
        assert_eq!(rgb_at(&img, 4, 4), PALETTE[0]);
        assert_eq!(rgb_at(&img, 4, 6), PALETTE[0]);
        assert_eq!(rgb_at(&img, 2, 4), PALETTE[0]);
        assert_eq!(rgb_at(&img, 3, 3), [0.0; 3]);
        // 2 arms of 2 px plus the center; the color has no zero channel.
        let lit = img.data.iter().filter(|v| **v != 0.0).count();
        assert_eq!(lit, 9 * 3);
    }

    #[test]
    fn drawing_clips_at_the_canvas_edge() {
        let mut img = Image::zeros(3, 4, 4);
        draw_cross(&mut img, 0, 0, 3, PALETTE[1]);
        assert_eq!(rgb_at(&img, 3, 0), PALETTE[1]);
        // Only the left edge of this rectangle lands on the canvas.
        draw_rect(&mut img, 2, -2, 10, 10, PALETTE[2]);
        assert_eq!(rgb_at(&img, 3, 2), PALETTE[2]);
        assert_eq!(rgb_at(&img, 3, 3), [0.0; 3]);
    }

    #[test]
    fn rect_outline_covers_the_perimeter_only() {
        let mut img = Image::zeros(3, 10, 10);
        draw_rect(&mut img, 2, 3, 5, 4, PALETTE[7]);
        let mut lit = 0;
        for y in 0..10 {
            for x in 0..10 {
                if rgb_at(&img, y, x) == PALETTE[7] {
                    lit += 1;
                }
            }
        }
        // Perimeter of a 5x4 outline: 2*5 + 2*4 - 4 corners counted once.
        assert_eq!(lit, 14);
        assert_eq!(rgb_at(&img, 4, 4), [0.0; 3]);
        assert_eq!(rgb_at(&img, 3, 2), PALETTE[7]);
        assert_eq!(rgb_at(&img, 6, 6), PALETTE[7]);
    }

    #[test]
    fn landmark_overlay_cycles_the_palette() {
        let img = Image::zeros(3, 32, 32);
        let points: Vec<(f64, f64)> = (0..9).map(|i| (3.0 + 3.0 * i as f64, 16.0)).collect();
        let out = annotate_landmarks(&img, &points);
        assert_eq!(rgb_at(&out, 16, 3), PALETTE[0]);
        // The ninth landmark wraps back to the first color.
        assert_eq!(rgb_at(&out, 16, 27), PALETTE[0]);
        assert_eq!(out.height, img.height);
    }
}
