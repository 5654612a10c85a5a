//! Feature pooling.
//!
//! Two readouts over the backbone feature map: a global average across
//! all cells, and a landmark-gated max pool that reads a small window
//! around each landmark's grid cell. Both keep whatever bookkeeping the
//! backward pass needs.

use crate::datasets::Landmark;

use super::tensor::FeatureMap;

/// Mean over all spatial cells, one value per channel.
pub fn global_average(fm: &FeatureMap) -> Vec<f64> {
    let cells = (fm.height * fm.width) as f64;
    let mut out = vec![0.0; fm.channels];
    for c in 0..fm.channels {
        let base = c * fm.height * fm.width;
        out[c] = fm.data[base..base + fm.height * fm.width].iter().sum::<f64>() / cells;
    }
    out
}

/// Scatters the gradient of the global average back to the feature map.
pub fn global_average_backward(fm: &FeatureMap, grad_pooled: &[f64], grad_fm: &mut FeatureMap) {
    debug_assert_eq!(grad_pooled.len(), fm.channels);
    let cells = (fm.height * fm.width) as f64;
    for c in 0..fm.channels {
        let g = grad_pooled[c] / cells;
        let base = c * fm.height * fm.width;
        for v in &mut grad_fm.data[base..base + fm.height * fm.width] {
            *v += g;
        }
    }
}

/// Backward bookkeeping for one landmark pool: for every landmark and
/// channel, the winning cell if it beat the zero padding.
#[derive(Debug, Clone)]
pub struct LandmarkPoolCache {
    /// `argmax[l * channels + c]` is `Some((y, x))` in feature map
    /// coordinates, `None` when the landmark was invisible or padding won.
    pub argmax: Vec<Option<(usize, usize)>>,
    pub channels: usize,
}

/// Max-pools a `window x window` neighborhood around each visible
/// landmark's grid cell, producing `landmarks.len() * channels` values in
/// landmark-major order. Pixel coordinates map to the grid through the
/// feature map stride; windows are zero-padded at the borders, so a
/// landmark whose channel never exceeds zero contributes exactly 0.0.
/// Invisible landmarks contribute a zero block.
pub fn landmark_pool(
    fm: &FeatureMap,
    landmarks: &[Landmark],
    window: usize,
) -> (Vec<f64>, LandmarkPoolCache) {
    assert!(window >= 1, "pool window must be positive");
    let mut out = vec![0.0; landmarks.len() * fm.channels];
    let mut argmax = vec![None; landmarks.len() * fm.channels];
    let reach = (window / 2) as i64;
    for (l, lm) in landmarks.iter().enumerate() {
        if !lm.is_visible() {
            continue;
        }
        let (cy, cx) = grid_cell(fm, lm.x, lm.y);
        for c in 0..fm.channels {
            // Zero padding competes: a window full of negatives loses to 0.
            let mut best = 0.0;
            let mut best_at = None;
            for dy in -reach..=(window as i64 - 1 - reach) {
                let y = cy as i64 + dy;
                if y < 0 || y >= fm.height as i64 {
                    continue;
                }
                for dx in -reach..=(window as i64 - 1 - reach) {
                    let x = cx as i64 + dx;
                    if x < 0 || x >= fm.width as i64 {
                        continue;
                    }
                    let v = fm.get(c, y as usize, x as usize);
                    // Strict comparison: the first maximum wins.
                    if v > best {
                        best = v;
                        best_at = Some((y as usize, x as usize));
                    }
                }
            }
            out[l * fm.channels + c] = best;
            argmax[l * fm.channels + c] = best_at;
        }
    }
    (
        out,
        LandmarkPoolCache {
            argmax,
            channels: fm.channels,
        },
    )
}

/// Routes pooled gradients back to the winning cells. Entries that lost
/// to the zero padding (or belong to invisible landmarks) drop their
/// gradient, matching the flat region of the max.
pub fn landmark_pool_backward(
    cache: &LandmarkPoolCache,
    grad_pooled: &[f64],
    grad_fm: &mut FeatureMap,
) {
    debug_assert_eq!(grad_pooled.len(), cache.argmax.len());
    for (i, slot) in cache.argmax.iter().enumerate() {
        if let Some((y, x)) = slot {
            let c = i % cache.channels;
            let idx = (c * grad_fm.height + y) * grad_fm.width + x;
            grad_fm.data[idx] += grad_pooled[i];
        }
    }
}

/// Maps pixel coordinates to the feature map cell containing them,
/// clamped to the map bounds.
fn grid_cell(fm: &FeatureMap, px: f64, py: f64) -> (usize, usize) {
    let stride = fm.stride as f64;
    let cx = (px / stride).floor();
    let cy = (py / stride).floor();
    let cx = (cx.max(0.0) as usize).min(fm.width - 1);
    let cy = (cy.max(0.0) as usize).min(fm.height - 1);
    (cy, cx)
}
