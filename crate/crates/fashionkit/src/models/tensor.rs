//! Flat parameter storage and the spatial feature map.
//!
//! All trainable state lives in one `Vec<f64>`; a [`ParamLayout`] maps
//! named, shaped tensors onto ranges of that vector. Keeping parameters
//! flat makes the optimizer, checkpointing, and finite-difference
//! verification trivial: they all operate on a single slice.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::util::mix_seed;

/// How a parameter tensor is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    UniformFanIn(usize),
    Zero,
    One,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, init: Init) -> ParamSpec {
        ParamSpec {
            name: name.into(),
            shape,
            init,
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Named tensors packed back to back into one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    specs: Vec<ParamSpec>,
    offsets: Vec<usize>,
    total: usize,
}

impl ParamLayout {
    pub fn new(specs: Vec<ParamSpec>) -> ParamLayout {
        let mut offsets = Vec::with_capacity(specs.len());
        let mut total = 0;
        for spec in &specs {
            offsets.push(total);
            total += spec.len();
        }
        ParamLayout {
            specs,
            offsets,
            total,
        }
    }

    pub fn total_len(&self) -> usize {
        self.total
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn range(&self, index: usize) -> Range<usize> {
        let start = self.offsets[index];
        start..start + self.specs[index].len()
    }

    pub fn range_of(&self, name: &str) -> Result<Range<usize>> {
        self.specs
            .iter()
            .position(|s| s.name == name)
            .map(|i| self.range(i))
            .ok_or_else(|| Error::Shape(format!("no parameter tensor named \"{name}\"")))
    }

    /// Deterministic initialization: every tensor draws from its own
    /// seeded stream, so adding a tensor never shifts the values of the
    /// others.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut params = vec![0.0; self.total];
        for (i, spec) in self.specs.iter().enumerate() {
            let slice = &mut params[self.offsets[i]..self.offsets[i] + spec.len()];
            match spec.init {
                Init::Zero => {}
                Init::One => slice.fill(1.0),
                Init::UniformFanIn(fan_in) => {
                    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, i as u64));
                    for v in slice {
                        *v = rng.gen_range(-bound..bound);
                    }
                }
            }
        }
        params
    }
}

/// Spatial feature map in CHW order. `stride` is the input-pixel extent
/// of one cell, used to map pixel coordinates onto cells.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub stride: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize, stride: usize) -> FeatureMap {
        FeatureMap {
            channels,
            height,
            width,
            stride,
            data: vec![0.0; channels * height * width],
        }
    }

    #[inline]
    pub fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let i = self.idx(c, y, x);
        self.data[i] = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> ParamLayout {
        ParamLayout::new(vec![
            ParamSpec::new("a.weight", vec![2, 3], Init::UniformFanIn(3)),
            ParamSpec::new("a.bias", vec![2], Init::Zero),
            ParamSpec::new("b.scale", vec![4], Init::One),
        ])
    }

    #[test]
    fn ranges_pack_back_to_back() {
        let l = layout();
        assert_eq!(l.total_len(), 12);
        assert_eq!(l.range(0), 0..6);
        assert_eq!(l.range(1), 6..8);
        assert_eq!(l.range(2), 8..12);
        assert_eq!(l.range_of("a.bias").unwrap(), 6..8);
        assert!(l.range_of("missing").is_err());
    }

    #[test]
    fn init_is_deterministic_and_respects_kind() {
        let l = layout();
        let p = l.init_params(42);
        assert_eq!(p, l.init_params(42));
        assert_ne!(p, l.init_params(43));
        assert_eq!(&p[6..8], &[0.0, 0.0]);
        assert_eq!(&p[8..12], &[1.0, 1.0, 1.0, 1.0]);
        let bound = 1.0 / 3.0f64.sqrt();
        for v in &p[0..6] {
            assert!(v.abs() <= bound);
        }
        assert!(p[0..6].iter().any(|v| *v != 0.0));
    }
}
