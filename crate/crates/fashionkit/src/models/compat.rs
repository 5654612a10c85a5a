//! Outfit compatibility head.
//!
//! Items share one L2-normalized embedding; each unordered pair of item
//! types additionally owns a projection space in which distances are
//! measured, with a `general` space as the fallback for undeclared
//! pairs. Two projection strategies exist: a per-pair affine map, and a
//! per-pair diagonal metric whose weights are squared at use time so the
//! induced distance stays valid even if they drift negative under SGD.

use crate::error::{Error, Result};
use crate::json::Value;

use super::heads::{affine_backward, affine_forward, EmbedCache, EmbedHead};
use super::tensor::{Init, ParamSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairStrategy {
    FullyConnected,
    LearnedMetric,
}

impl PairStrategy {
    pub fn from_value(v: &Value) -> Result<PairStrategy> {
        match v.as_str() {
            Some("fully_connected") => Ok(PairStrategy::FullyConnected),
            Some("learned_metric") => Ok(PairStrategy::LearnedMetric),
            _ => Err(Error::Config(
                "projection must be \"fully_connected\" or \"learned_metric\"".into(),
            )),
        }
    }
}

pub const GENERAL_SPACE: &str = "general";

#[derive(Debug, Clone)]
pub struct CompatHead {
    pub embed: EmbedHead,
    pub pair_dim: usize,
    pub strategy: PairStrategy,
    /// Sorted space keys; always contains `general`.
    spaces: Vec<String>,
}

impl CompatHead {
    /// `types` lists the item types the dataset declares; one space is
    /// created per unordered type pair (same-type pairs included) plus
    /// the `general` fallback.
    pub fn new(
        in_dim: usize,
        embed_dim: usize,
        pair_dim: usize,
        strategy: PairStrategy,
        types: &[String],
    ) -> Result<CompatHead> {
        if embed_dim == 0 || pair_dim == 0 {
            return Err(Error::Config("compat embedding dims must be positive".into()));
        }
        if strategy == PairStrategy::LearnedMetric && pair_dim != embed_dim {
            return Err(Error::Config(
                "learned_metric weighs the shared embedding elementwise, so pair_dim must equal embed_dim"
                    .into(),
            ));
        }
        let mut unique: Vec<&String> = Vec::new();
        for t in types {
            if t.is_empty() || t.contains('|') {
                return Err(Error::Validation(format!(
                    "item type {t:?} is empty or contains the pair separator '|'"
                )));
            }
            if t == GENERAL_SPACE {
                return Err(Error::Validation(
                    "item type \"general\" collides with the fallback space".into(),
                ));
            }
            if !unique.contains(&t) {
                unique.push(t);
            }
        }
        let mut spaces = vec![GENERAL_SPACE.to_string()];
        for i in 0..unique.len() {
            for j in i..unique.len() {
                spaces.push(pair_key(unique[i], unique[j]));
            }
        }
        spaces.sort();
        spaces.dedup();
        Ok(CompatHead {
            embed: EmbedHead::new(in_dim, embed_dim, true),
            pair_dim,
            strategy,
            spaces,
        })
    }

    pub fn spaces(&self) -> &[String] {
        &self.spaces
    }

    /// Index of the space covering an unordered type pair, falling back
    /// to `general` for pairs the head was not built with.
    pub fn space_for(&self, type_a: &str, type_b: &str) -> usize {
        let key = pair_key(type_a, type_b);
        self.spaces
            .binary_search(&key)
            .unwrap_or_else(|_| self.spaces.binary_search_by(|s| s.as_str().cmp(GENERAL_SPACE)).expect("general space always present"))
    }

    fn space_param_len(&self) -> usize {
        match self.strategy {
            PairStrategy::FullyConnected => self.pair_dim * self.embed.out_dim + self.pair_dim,
            PairStrategy::LearnedMetric => self.embed.out_dim,
        }
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = self.embed.param_specs();
        let d = self.embed.out_dim;
        for key in &self.spaces {
            match self.strategy {
                PairStrategy::FullyConnected => {
                    specs.push(ParamSpec::new(
                        format!("space.{key}.weight"),
                        vec![self.pair_dim, d],
                        Init::UniformFanIn(d),
                    ));
                    specs.push(ParamSpec::new(
                        format!("space.{key}.bias"),
                        vec![self.pair_dim],
                        Init::Zero,
                    ));
                }
                PairStrategy::LearnedMetric => {
                    // Weights start at one: the projection is the identity
                    // and every space's distance is the plain Euclidean one.
                    specs.push(ParamSpec::new(
                        format!("space.{key}.weight"),
                        vec![d],
                        Init::One,
                    ));
                }
            }
        }
        specs
    }

    pub fn param_len(&self) -> usize {
        self.embed.param_len() + self.spaces.len() * self.space_param_len()
    }

    fn space_params<'a>(&self, params: &'a [f64], space: usize) -> &'a [f64] {
        let base = self.embed.param_len() + space * self.space_param_len();
        &params[base..base + self.space_param_len()]
    }

    /// Shared-embedding forward; `params` is the whole head slice.
    pub fn embed_forward(&self, params: &[f64], feat: &[f64]) -> EmbedCache {
        self.embed.forward(&params[..self.embed.param_len()], feat)
    }

    pub fn embed_backward(
        &self,
        params: &[f64],
        feat: &[f64],
        cache: &EmbedCache,
        grad_embedding: &[f64],
        scale: f64,
        grad_params: &mut [f64],
        grad_feat: &mut [f64],
    ) {
        self.embed.backward(
            &params[..self.embed.param_len()],
            feat,
            cache,
            grad_embedding,
            scale,
            &mut grad_params[..self.embed.param_len()],
            grad_feat,
        );
    }

    /// Projects a shared embedding into a pair space.
    pub fn project(&self, params: &[f64], e: &[f64], space: usize) -> Vec<f64> {
        let p = self.space_params(params, space);
        match self.strategy {
            PairStrategy::FullyConnected => {
                let d = self.embed.out_dim;
                let w_len = self.pair_dim * d;
                let mut out = vec![0.0; self.pair_dim];
                affine_forward(&p[..w_len], &p[w_len..], e, &mut out);
                out
            }
            PairStrategy::LearnedMetric => e
                .iter()
                .zip(p)
                .map(|(ei, wi)| wi * wi * ei)
                .collect(),
        }
    }

    /// Euclidean distance between two embeddings in a pair space. The
    /// expression is evaluated identically for both argument orders, so
    /// swapping the embeddings gives a bit-identical result.
    pub fn distance(&self, params: &[f64], e1: &[f64], e2: &[f64], space: usize) -> f64 {
        let p1 = self.project(params, e1, space);
        let p2 = self.project(params, e2, space);
        p1.iter()
            .zip(&p2)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Backward through the projection pair given `u = dL/d(distance²)`.
    /// Accumulates `scale` times the gradients into the head parameter
    /// slice and the two embedding gradients.
    pub fn pair_backward(
        &self,
        params: &[f64],
        e1: &[f64],
        e2: &[f64],
        space: usize,
        u: f64,
        scale: f64,
        grad_params: &mut [f64],
        grad_e1: &mut [f64],
        grad_e2: &mut [f64],
    ) {
        let p1 = self.project(params, e1, space);
        let p2 = self.project(params, e2, space);
        // d(d²)/dp1 = 2 (p1 − p2).
        let dp1: Vec<f64> = p1
            .iter()
            .zip(&p2)
            .map(|(a, b)| 2.0 * u * scale * (a - b))
            .collect();
        let dp2: Vec<f64> = dp1.iter().map(|g| -g).collect();
        let sp = self.space_params(params, space);
        let base = self.embed.param_len() + space * self.space_param_len();
        let gslice = &mut grad_params[base..base + self.space_param_len()];
        match self.strategy {
            PairStrategy::FullyConnected => {
                let d = self.embed.out_dim;
                let w_len = self.pair_dim * d;
                let w = &sp[..w_len];
                let (gw, gb) = gslice.split_at_mut(w_len);
                affine_backward(w, e1, &dp1, gw, gb, Some(grad_e1));
                affine_backward(w, e2, &dp2, gw, gb, Some(grad_e2));
            }
            PairStrategy::LearnedMetric => {
                for i in 0..self.embed.out_dim {
                    let wi = sp[i];
                    gslice[i] += 2.0 * wi * (dp1[i] * e1[i] + dp2[i] * e2[i]);
                    grad_e1[i] += dp1[i] * wi * wi;
                    grad_e2[i] += dp2[i] * wi * wi;
                }
            }
        }
    }

    /// Mean distance from a candidate to every context item, each pair
    /// measured in the space of its type pair.
    pub fn fitb_score(
        &self,
        params: &[f64],
        candidate: (&[f64], &str),
        context: &[(&[f64], &str)],
    ) -> Result<f64> {
        if context.is_empty() {
            return Err(Error::Validation("fill-in-the-blank question has no context items".into()));
        }
        let total: f64 = context
            .iter()
            .map(|(e, ty)| {
                let space = self.space_for(candidate.1, ty);
                self.distance(params, candidate.0, e, space)
            })
            .sum();
        Ok(total / context.len() as f64)
    }

    /// Negated mean pairwise distance over an outfit; higher means more
    /// compatible.
    pub fn outfit_score(&self, params: &[f64], items: &[(&[f64], &str)]) -> Result<f64> {
        if items.len() < 2 {
            return Err(Error::Validation(format!(
                "outfit scoring needs at least 2 items, got {}",
                items.len()
            )));
        }
        let mut total = 0.0;
        let mut pairs = 0usize;
        for i in 0..items.len() {
            for j in i + 1..items.len() {
                let space = self.space_for(items[i].1, items[j].1);
                total += self.distance(params, items[i].0, items[j].0, space);
                pairs += 1;
            }
        }
        Ok(-(total / pairs as f64))
    }
}

/// Canonical unordered pair key.
pub fn pair_key(a: &str, b: &str) -> String {
    if a <= b {
        format!("{a}|{b}")
    } else {
        format!("{b}|{a}")
    }
}

/// Index of the smallest value, ties going to the lowest index.
pub fn argmin_tie_low(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s < scores[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::tensor::ParamLayout;

    fn head(strategy: PairStrategy) -> CompatHead {
        let types = vec!["top".to_string(), "bottom".to_string(), "shoe".to_string()];
        CompatHead::new(3, 4, 4, strategy, &types).unwrap()
    }

    #[test]
    fn spaces_cover_all_unordered_pairs_plus_general() {
        let h = head(PairStrategy::LearnedMetric);
        let mut expect = vec![
            "bottom|bottom",
            "bottom|shoe",
            "bottom|top",
            "general",
            "shoe|shoe",
            "shoe|top",
            "top|top",
        ];
        expect.sort();
        assert_eq!(h.spaces(), &expect.iter().map(|s| s.to_string()).collect::<Vec<_>>()[..]);
        // Declared pair resolves to its own space, unknown type falls back.
        assert_eq!(h.spaces()[h.space_for("top", "bottom")], "bottom|top");
        assert_eq!(h.spaces()[h.space_for("top", "hat")], "general");
        assert_eq!(h.spaces()[h.space_for("hat", "scarf")], "general");
    }

    #[test]
    fn identical_embeddings_have_zero_distance() {
        for strategy in [PairStrategy::FullyConnected, PairStrategy::LearnedMetric] {
            let h = head(strategy);
            let layout = ParamLayout::new(h.param_specs());
            let params = layout.init_params(11);
            let e = vec![0.5, -0.5, 0.5, -0.5];
            for space in 0..h.spaces().len() {
                assert_eq!(h.distance(&params, &e, &e, space), 0.0);
            }
        }
    }

    #[test]
    fn distance_is_bit_symmetric() {
        for strategy in [PairStrategy::FullyConnected, PairStrategy::LearnedMetric] {
            let h = head(strategy);
            let layout = ParamLayout::new(h.param_specs());
            let params = layout.init_params(5);
            let e1 = vec![0.3, 0.1, -0.7, 0.2];
            let e2 = vec![-0.2, 0.9, 0.4, -0.1];
            for space in 0..h.spaces().len() {
                let d12 = h.distance(&params, &e1, &e2, space);
                let d21 = h.distance(&params, &e2, &e1, space);
                assert_eq!(d12.to_bits(), d21.to_bits());
            }
        }
    }

    #[test]
    fn learned_metric_with_unit_weights_is_euclidean() {
        let h = head(PairStrategy::LearnedMetric);
        // Fresh init: all metric weights are one.
        let layout = ParamLayout::new(h.param_specs());
        let params = layout.init_params(0);
        let e1 = vec![1.0, 0.0, 0.0, 0.0];
        let e2 = vec![0.0, 1.0, 0.0, 0.0];
        let d = h.distance(&params, &e1, &e2, h.space_for("top", "bottom"));
        assert!((d - 2.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn single_axis_metric_measures_one_coordinate() {
        let h = head(PairStrategy::LearnedMetric);
        let layout = ParamLayout::new(h.param_specs());
        let mut params = layout.init_params(0);
        let space = h.space_for("top", "bottom");
        let base = h.embed.param_len() + space * h.space_param_len();
        params[base] = 1.0;
        for w in &mut params[base + 1..base + 4] {
            *w = 0.0;
        }
        let e1 = vec![0.9, 0.5, -0.3, 0.2];
        let e2 = vec![0.1, -0.5, 0.3, -0.2];
        let d = h.distance(&params, &e1, &e2, space);
        assert!((d - 0.8).abs() < 1e-12);
    }

    #[test]
    fn outfit_score_is_negated_mean_pairwise_distance() {
        let h = head(PairStrategy::LearnedMetric);
        let layout = ParamLayout::new(h.param_specs());
        let params = layout.init_params(0);
        let a = vec![1.0, 0.0, 0.0, 0.0];
        let b = vec![0.0, 1.0, 0.0, 0.0];
        let items: Vec<(&[f64], &str)> = vec![(&a, "top"), (&b, "bottom")];
        let score = h.outfit_score(&params, &items).unwrap();
        assert!((score + 2.0f64.sqrt()).abs() < 1e-12);
        assert!(h.outfit_score(&params, &items[..1]).is_err());
        // All-identical outfit scores the maximum, zero.
        let same: Vec<(&[f64], &str)> = vec![(&a, "top"), (&a, "bottom"), (&a, "shoe")];
        assert_eq!(h.outfit_score(&params, &same).unwrap(), 0.0);
    }

    #[test]
    fn argmin_breaks_ties_low() {
        assert_eq!(argmin_tie_low(&[3.0, 1.0, 1.0, 2.0]), 1);
        assert_eq!(argmin_tie_low(&[5.0, 5.0, 5.0, 5.0]), 0);
        assert_eq!(argmin_tie_low(&[2.0, 1.5, 0.1, 9.0]), 2);
    }

    #[test]
    fn pair_backward_matches_finite_differences() {
        for strategy in [PairStrategy::FullyConnected, PairStrategy::LearnedMetric] {
            let h = head(strategy);
            let layout = ParamLayout::new(h.param_specs());
            let params = layout.init_params(9);
            let e1 = vec![0.3, 0.1, -0.7, 0.2];
            let e2 = vec![-0.2, 0.9, 0.4, -0.1];
            let space = h.space_for("shoe", "top");
            // Loss = squared distance, so u = 1.
            let sq = |p: &[f64]| {
                let d = h.distance(p, &e1, &e2, space);
                d * d
            };
            let mut grad = vec![0.0; layout.total_len()];
            let mut ge1 = vec![0.0; 4];
            let mut ge2 = vec![0.0; 4];
            h.pair_backward(&params, &e1, &e2, space, 1.0, 1.0, &mut grad, &mut ge1, &mut ge2);
            let step = 1e-6;
            let base = h.embed.param_len() + space * h.space_param_len();
            for idx in base..base + h.space_param_len() {
                let mut p = params.clone();
                p[idx] += step;
                let up = sq(&p);
                p[idx] -= 2.0 * step;
                let down = sq(&p);
                let numeric = (up - down) / (2.0 * step);
                assert!(
                    (grad[idx] - numeric).abs() < 1e-6,
                    "{strategy:?} param {idx}: {} vs {numeric}",
                    grad[idx]
                );
            }
        }
    }
}
