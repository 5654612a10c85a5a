//! Model assembly.
//!
//! A model is a backbone, a pooling choice, and a task head over one
//! flat `f64` parameter vector described by a [`ParamLayout`]. All
//! forward math is pure; backward passes accumulate into a caller-owned
//! gradient buffer of the same layout, so the runner owns every
//! parameter mutation.

pub mod backbone;
pub mod compat;
pub mod gradcheck;
pub mod heads;
pub mod pooling;
pub mod tensor;

pub use backbone::{ConvCache, TinyConv};
pub use compat::{argmin_tie_low, pair_key, CompatHead, PairStrategy, GENERAL_SPACE};
pub use heads::{
    affine_backward, affine_forward, bce_with_logits, sigmoid, triplet_loss, triplet_loss_grad,
    AttributeHead, EmbedCache, EmbedHead, LandmarkHead, LandmarkTarget,
};
pub use pooling::{
    global_average, global_average_backward, landmark_pool, landmark_pool_backward,
    LandmarkPoolCache,
};
pub use tensor::{FeatureMap, Init, ParamLayout, ParamSpec};

use crate::config::expect_keys;
use crate::datasets::{Image, Landmark};
use crate::error::{Error, Result};
use crate::json::Value;
use crate::registry::Registry;

/// How attribute features are pooled from the backbone feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    Global,
    Landmark,
}

/// Task head attached to the backbone.
#[derive(Debug, Clone)]
pub enum Head {
    Attribute {
        head: AttributeHead,
        pooling: Pooling,
        num_landmarks: usize,
        window: usize,
    },
    Landmark(LandmarkHead),
    Embed(EmbedHead),
    Compat(CompatHead),
}

impl Head {
    fn param_specs(&self) -> Vec<ParamSpec> {
        match self {
            Head::Attribute { head, .. } => head.param_specs(),
            Head::Landmark(h) => h.param_specs(),
            Head::Embed(h) => h.param_specs(),
            Head::Compat(h) => h.param_specs(),
        }
    }
}

/// Head description as it appears in a config, before dataset-derived
/// dimensions (attribute count, landmark count, item types) are known.
#[derive(Debug, Clone)]
pub enum HeadSpec {
    Attribute { pooling: Pooling, window: usize },
    Landmark,
    Embed { dim: usize, normalize: bool },
    Compat {
        dim: usize,
        pair_dim: Option<usize>,
        strategy: PairStrategy,
    },
}

/// Dataset-derived dimensions a [`HeadSpec`] needs to become a [`Head`].
#[derive(Debug, Clone, Default)]
pub struct HeadDims {
    pub num_attrs: usize,
    pub num_landmarks: usize,
    pub item_types: Vec<String>,
}

impl HeadSpec {
    pub fn build(&self, backbone: &TinyConv, dims: &HeadDims) -> Result<Head> {
        let c = backbone.out_channels();
        match self {
            HeadSpec::Attribute { pooling, window } => {
                if dims.num_attrs == 0 {
                    return Err(Error::Config("attribute head needs at least one attribute".into()));
                }
                let in_dim = match pooling {
                    Pooling::Global => c,
                    Pooling::Landmark => {
                        if dims.num_landmarks == 0 {
                            return Err(Error::Config(
                                "landmark pooling needs landmark annotations".into(),
                            ));
                        }
                        c * (1 + dims.num_landmarks)
                    }
                };
                Ok(Head::Attribute {
                    head: AttributeHead {
                        in_dim,
                        num_attrs: dims.num_attrs,
                    },
                    pooling: *pooling,
                    num_landmarks: dims.num_landmarks,
                    window: *window,
                })
            }
            HeadSpec::Landmark => {
                if dims.num_landmarks == 0 {
                    return Err(Error::Config("landmark head needs a landmark count".into()));
                }
                Ok(Head::Landmark(LandmarkHead {
                    in_dim: c,
                    num_landmarks: dims.num_landmarks,
                }))
            }
            HeadSpec::Embed { dim, normalize } => {
                Ok(Head::Embed(EmbedHead::new(c, *dim, *normalize)))
            }
            HeadSpec::Compat {
                dim,
                pair_dim,
                strategy,
            } => {
                let pair_dim = pair_dim.unwrap_or(*dim);
                Ok(Head::Compat(CompatHead::new(
                    c,
                    *dim,
                    pair_dim,
                    *strategy,
                    &dims.item_types,
                )?))
            }
        }
    }
}

/// Builders for the `model.backbone` config section.
pub fn backbone_registry() -> Registry<TinyConv> {
    let mut reg = Registry::new("BACKBONES");
    reg.register("tinyconv", TinyConv::from_config)
        .expect("fresh registry");
    reg
}

/// Builders for the `model.head` config section.
pub fn head_registry() -> Registry<HeadSpec> {
    let mut reg = Registry::new("HEADS");
    reg.register("attribute", |node| {
        expect_keys(node, &["pooling", "window"], "attribute head")?;
        let map = node.as_map().expect("checked by expect_keys");
        let pooling = match map.get("pooling").and_then(|v| v.as_str()) {
            None if map.get("pooling").is_none() => Pooling::Global,
            Some("global") => Pooling::Global,
            Some("landmark") => Pooling::Landmark,
            _ => {
                return Err(Error::Config(
                    "pooling must be \"global\" or \"landmark\"".into(),
                ))
            }
        };
        let window = match map.get("window") {
            None => 3,
            Some(v) => v
                .as_i64()
                .filter(|n| *n >= 1 && *n % 2 == 1)
                .ok_or_else(|| Error::Config("pool window must be a positive odd integer".into()))?
                as usize,
        };
        Ok(HeadSpec::Attribute { pooling, window })
    })
    .expect("fresh registry");
    reg.register("landmark", |node| {
        expect_keys(node, &[], "landmark head")?;
        Ok(HeadSpec::Landmark)
    })
    .expect("fresh registry");
    reg.register("embed", |node| {
        expect_keys(node, &["dim", "normalize"], "embed head")?;
        let map = node.as_map().expect("checked by expect_keys");
        let dim = match map.get("dim") {
            None => 128,
            Some(v) => v
                .as_i64()
                .filter(|n| *n > 0)
                .ok_or_else(|| Error::Config("embedding dim must be a positive integer".into()))?
                as usize,
        };
        let normalize = match map.get("normalize") {
            None => true,
            Some(Value::Bool(b)) => *b,
            Some(_) => return Err(Error::Config("normalize must be a boolean".into())),
        };
        Ok(HeadSpec::Embed { dim, normalize })
    })
    .expect("fresh registry");
    reg.register("compat", |node| {
        expect_keys(node, &["dim", "pair_dim", "projection"], "compat head")?;
        let map = node.as_map().expect("checked by expect_keys");
        let dim = match map.get("dim") {
            None => 128,
            Some(v) => v
                .as_i64()
                .filter(|n| *n > 0)
                .ok_or_else(|| Error::Config("embedding dim must be a positive integer".into()))?
                as usize,
        };
        let pair_dim = match map.get("pair_dim") {
            None => None,
            Some(v) => Some(
                v.as_i64()
                    .filter(|n| *n > 0)
                    .ok_or_else(|| Error::Config("pair_dim must be a positive integer".into()))?
                    as usize,
            ),
        };
        let strategy = match map.get("projection") {
            None => PairStrategy::FullyConnected,
            Some(v) => PairStrategy::from_value(v)?,
        };
        Ok(HeadSpec::Compat {
            dim,
            pair_dim,
            strategy,
        })
    })
    .expect("fresh registry");
    reg
}

/// A complete model over one flat parameter vector. Backbone parameters
/// come first (`backbone.` prefix), head parameters after (`head.`).
#[derive(Debug, Clone)]
pub struct FashionModel {
    pub backbone: TinyConv,
    pub head: Head,
    pub layout: ParamLayout,
    backbone_len: usize,
}

/// Forward bookkeeping for one attribute-style feature extraction.
pub struct FeatureCache {
    pub fm: FeatureMap,
    conv: ConvCache,
    pool: Option<LandmarkPoolCache>,
    pub feat: Vec<f64>,
}

/// Forward bookkeeping for one embedding pass.
pub struct EmbedPass {
    fm: FeatureMap,
    conv: ConvCache,
    pooled: Vec<f64>,
    cache: EmbedCache,
}

impl EmbedPass {
    pub fn embedding(&self) -> &[f64] {
        &self.cache.embedding
    }
}

impl FashionModel {
    pub fn new(backbone: TinyConv, head: Head) -> FashionModel {
        let mut specs: Vec<ParamSpec> = backbone
            .param_specs()
            .into_iter()
            .map(|s| ParamSpec::new(format!("backbone.{}", s.name), s.shape, s.init))
            .collect();
        let backbone_len: usize = specs.iter().map(|s| s.len()).sum();
        specs.extend(
            head.param_specs()
                .into_iter()
                .map(|s| ParamSpec::new(format!("head.{}", s.name), s.shape, s.init)),
        );
        let layout = ParamLayout::new(specs);
        FashionModel {
            backbone,
            head,
            layout,
            backbone_len,
        }
    }

    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        self.layout.init_params(seed)
    }

    fn split<'a>(&self, params: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        params.split_at(self.backbone_len)
    }

    fn split_mut<'a>(&self, grad: &'a mut [f64]) -> (&'a mut [f64], &'a mut [f64]) {
        grad.split_at_mut(self.backbone_len)
    }

    /// Runs backbone and pooling for the attribute head.
    fn attribute_features(
        &self,
        params: &[f64],
        image: &Image,
        landmarks: Option<&[Landmark]>,
    ) -> Result<FeatureCache> {
        let Head::Attribute {
            pooling,
            num_landmarks,
            window,
            ..
        } = &self.head
        else {
            return Err(Error::Config("model head does not predict attributes".into()));
        };
        let (bb, _) = self.split(params);
        let (fm, conv) = self.backbone.forward(bb, image)?;
        let mut feat = global_average(&fm);
        let mut pool = None;
        if *pooling == Pooling::Landmark {
            let lms = landmarks.ok_or_else(|| {
                Error::Validation("landmark pooling needs landmarks for every image".into())
            })?;
            if lms.len() != *num_landmarks {
                return Err(Error::Validation(format!(
                    "model expects {num_landmarks} landmarks, got {}",
                    lms.len()
                )));
            }
            let (local, cache) = landmark_pool(&fm, lms, *window);
            feat.extend_from_slice(&local);
            pool = Some(cache);
        }
        Ok(FeatureCache {
            fm,
            conv,
            pool,
            feat,
        })
    }

    /// Scatters a pooled-feature gradient back through pooling and the
    /// backbone.
    fn features_backward(
        &self,
        params: &[f64],
        cache: &FeatureCache,
        grad_feat: &[f64],
        grad: &mut [f64],
    ) {
        let c = cache.fm.channels;
        let mut grad_fm = FeatureMap::zeros(c, cache.fm.height, cache.fm.width, cache.fm.stride);
        global_average_backward(&cache.fm, &grad_feat[..c], &mut grad_fm);
        if let Some(pool) = &cache.pool {
            landmark_pool_backward(pool, &grad_feat[c..], &mut grad_fm);
        }
        let (bb, _) = self.split(params);
        let (gb, _) = self.split_mut(grad);
        self.backbone.backward(bb, &cache.conv, &grad_fm, gb);
    }

    /// Attribute logits for one image.
    pub fn attribute_logits(
        &self,
        params: &[f64],
        image: &Image,
        landmarks: Option<&[Landmark]>,
    ) -> Result<Vec<f64>> {
        let cache = self.attribute_features(params, image, landmarks)?;
        let Head::Attribute { head, .. } = &self.head else {
            unreachable!("checked by attribute_features");
        };
        let (_, hp) = self.split(params);
        Ok(head.forward(hp, &cache.feat))
    }

    /// Per-sample attribute loss; accumulates `scale` times the gradient
    /// when a buffer is given and returns `scale` times the loss.
    pub fn attribute_loss(
        &self,
        params: &[f64],
        image: &Image,
        landmarks: Option<&[Landmark]>,
        labels: &[bool],
        scale: f64,
        grad: Option<&mut [f64]>,
    ) -> Result<f64> {
        let cache = self.attribute_features(params, image, landmarks)?;
        let Head::Attribute { head, .. } = &self.head else {
            unreachable!("checked by attribute_features");
        };
        let (_, hp) = self.split(params);
        match grad {
            None => {
                // Loss only: run the head backward into scratch buffers.
                let mut gp = vec![0.0; hp.len()];
                let mut gf = vec![0.0; cache.feat.len()];
                head.loss_grad(hp, &cache.feat, labels, scale, &mut gp, &mut gf)
            }
            Some(grad) => {
                let mut grad_feat = vec![0.0; cache.feat.len()];
                let loss = {
                    let (_, gh) = self.split_mut(grad);
                    head.loss_grad(hp, &cache.feat, labels, scale, gh, &mut grad_feat)?
                };
                self.features_backward(params, &cache, &grad_feat, grad);
                Ok(loss)
            }
        }
    }

    /// Landmark predictions `(x, y, visibility)` in normalized
    /// coordinates for one image.
    pub fn landmark_predict(&self, params: &[f64], image: &Image) -> Result<Vec<(f64, f64, f64)>> {
        let Head::Landmark(head) = &self.head else {
            return Err(Error::Config("model head does not predict landmarks".into()));
        };
        let (bb, hp) = self.split(params);
        let (fm, _) = self.backbone.forward(bb, image)?;
        let feat = global_average(&fm);
        Ok(head.predict(hp, &feat))
    }

    /// Per-sample landmark loss with optional gradient accumulation.
    pub fn landmark_loss(
        &self,
        params: &[f64],
        image: &Image,
        targets: &[LandmarkTarget],
        scale: f64,
        grad: Option<&mut [f64]>,
    ) -> Result<f64> {
        let Head::Landmark(head) = &self.head else {
            return Err(Error::Config("model head does not predict landmarks".into()));
        };
        let (bb, hp) = self.split(params);
        let (fm, conv) = self.backbone.forward(bb, image)?;
        let feat = global_average(&fm);
        match grad {
            None => {
                let mut gp = vec![0.0; hp.len()];
                let mut gf = vec![0.0; feat.len()];
                head.loss_grad(hp, &feat, targets, scale, &mut gp, &mut gf)
            }
            Some(grad) => {
                let mut grad_feat = vec![0.0; feat.len()];
                let loss = {
                    let (_, gh) = self.split_mut(grad);
                    head.loss_grad(hp, &feat, targets, scale, gh, &mut grad_feat)?
                };
                let mut grad_fm = FeatureMap::zeros(fm.channels, fm.height, fm.width, fm.stride);
                global_average_backward(&fm, &grad_feat, &mut grad_fm);
                let (gb, _) = self.split_mut(grad);
                self.backbone.backward(bb, &conv, &grad_fm, gb);
                Ok(loss)
            }
        }
    }

    /// Embedding forward pass, usable with both the retrieval and the
    /// compatibility head.
    pub fn embed_forward(&self, params: &[f64], image: &Image) -> Result<EmbedPass> {
        let (bb, hp) = self.split(params);
        let (fm, conv) = self.backbone.forward(bb, image)?;
        let pooled = global_average(&fm);
        let cache = match &self.head {
            Head::Embed(h) => h.forward(hp, &pooled),
            Head::Compat(h) => h.embed_forward(hp, &pooled),
            _ => return Err(Error::Config("model head does not produce embeddings".into())),
        };
        Ok(EmbedPass {
            fm,
            conv,
            pooled,
            cache,
        })
    }

    /// Embedding of one image.
    pub fn embedding(&self, params: &[f64], image: &Image) -> Result<Vec<f64>> {
        Ok(self.embed_forward(params, image)?.cache.embedding)
    }

    /// Pushes a loss gradient with respect to the embedding back through
    /// the head, pooling, and backbone.
    pub fn embed_backward(
        &self,
        params: &[f64],
        pass: &EmbedPass,
        grad_embedding: &[f64],
        scale: f64,
        grad: &mut [f64],
    ) {
        let (bb, hp) = self.split(params);
        let mut grad_pooled = vec![0.0; pass.pooled.len()];
        {
            let (_, gh) = self.split_mut(grad);
            match &self.head {
                Head::Embed(h) => h.backward(
                    hp,
                    &pass.pooled,
                    &pass.cache,
                    grad_embedding,
                    scale,
                    gh,
                    &mut grad_pooled,
                ),
                Head::Compat(h) => h.embed_backward(
                    hp,
                    &pass.pooled,
                    &pass.cache,
                    grad_embedding,
                    scale,
                    gh,
                    &mut grad_pooled,
                ),
                _ => unreachable!("embed_forward rejected other heads"),
            }
        }
        let mut grad_fm = FeatureMap::zeros(
            pass.fm.channels,
            pass.fm.height,
            pass.fm.width,
            pass.fm.stride,
        );
        global_average_backward(&pass.fm, &grad_pooled, &mut grad_fm);
        let (gb, _) = self.split_mut(grad);
        self.backbone.backward(bb, &pass.conv, &grad_fm, gb);
    }

    /// Triplet margin loss over three images.
    pub fn triplet_loss(
        &self,
        params: &[f64],
        anchor: &Image,
        positive: &Image,
        negative: &Image,
        margin: f64,
        scale: f64,
        grad: Option<&mut [f64]>,
    ) -> Result<f64> {
        let pa = self.embed_forward(params, anchor)?;
        let pp = self.embed_forward(params, positive)?;
        let pn = self.embed_forward(params, negative)?;
        let (loss, ga, gp, gn) =
            triplet_loss_grad(pa.embedding(), pp.embedding(), pn.embedding(), margin);
        if let Some(grad) = grad {
            if loss > 0.0 {
                self.embed_backward(params, &pa, &ga, scale, grad);
                self.embed_backward(params, &pp, &gp, scale, grad);
                self.embed_backward(params, &pn, &gn, scale, grad);
            }
        }
        Ok(loss * scale)
    }

    /// Head parameters within the flat vector.
    pub fn head_params<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        self.split(params).1
    }

    pub fn compat_head(&self) -> Result<&CompatHead> {
        match &self.head {
            Head::Compat(h) => Ok(h),
            _ => Err(Error::Config("model head does not score compatibility".into())),
        }
    }

    /// Compatibility distance between two typed items, measured in the
    /// space of their type pair, with optional gradient accumulation.
    pub fn compat_distance(
        &self,
        params: &[f64],
        a: (&Image, &str),
        b: (&Image, &str),
        scale: f64,
        grad: Option<&mut [f64]>,
    ) -> Result<f64> {
        let head = self.compat_head()?;
        let (_, hp) = self.split(params);
        let pa = self.embed_forward(params, a.0)?;
        let pb = self.embed_forward(params, b.0)?;
        let space = head.space_for(a.1, b.1);
        let d = head.distance(hp, pa.embedding(), pb.embedding(), space);
        if let Some(grad) = grad {
            if d > 0.0 {
                // Loss is d itself: dL/d(d²) = 1 / (2d).
                self.compat_pair_backward(params, head, &pa, &pb, space, 1.0 / (2.0 * d), scale, grad);
            }
        }
        Ok(d * scale)
    }

    /// Contrastive pair loss: `d²` for compatible pairs,
    /// `max(0, margin − d)²` for incompatible ones.
    pub fn compat_pair_loss(
        &self,
        params: &[f64],
        a: (&Image, &str),
        b: (&Image, &str),
        compatible: bool,
        margin: f64,
        scale: f64,
        grad: Option<&mut [f64]>,
    ) -> Result<f64> {
        let head = self.compat_head()?;
        let (_, hp) = self.split(params);
        let pa = self.embed_forward(params, a.0)?;
        let pb = self.embed_forward(params, b.0)?;
        let space = head.space_for(a.1, b.1);
        let d = head.distance(hp, pa.embedding(), pb.embedding(), space);
        let (loss, u) = if compatible {
            // L = d², so dL/d(d²) = 1.
            (d * d, 1.0)
        } else if d < margin && d > 0.0 {
            // L = (margin − d)², dL/dd = −2(margin − d), dL/d(d²) = dL/dd / (2d).
            let gap = margin - d;
            (gap * gap, -gap / d)
        } else if d == 0.0 {
            // Identical projections on an incompatible pair: the hinge is
            // at its apex where the direction is undefined; skip the step.
            (margin * margin, 0.0)
        } else {
            (0.0, 0.0)
        };
        if let Some(grad) = grad {
            if u != 0.0 {
                self.compat_pair_backward(params, head, &pa, &pb, space, u, scale, grad);
            }
        }
        Ok(loss * scale)
    }

    #[allow(clippy::too_many_arguments)]
    fn compat_pair_backward(
        &self,
        params: &[f64],
        head: &CompatHead,
        pa: &EmbedPass,
        pb: &EmbedPass,
        space: usize,
        u: f64,
        scale: f64,
        grad: &mut [f64],
    ) {
        let (_, hp) = self.split(params);
        let dim = head.embed.out_dim;
        let mut ge1 = vec![0.0; dim];
        let mut ge2 = vec![0.0; dim];
        {
            let (_, gh) = self.split_mut(grad);
            head.pair_backward(
                hp,
                pa.embedding(),
                pb.embedding(),
                space,
                u,
                scale,
                gh,
                &mut ge1,
                &mut ge2,
            );
        }
        // pair_backward already applied `scale`; embeddings get it once.
        self.embed_backward(params, pa, &ge1, 1.0, grad);
        self.embed_backward(params, pb, &ge2, 1.0, grad);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(seed: u64, h: usize, w: usize) -> Image {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut img = Image::zeros(3, h, w);
        for v in &mut img.data {
            *v = rng.gen_range(0.0..1.0);
        }
        img
    }

    fn lm(x: f64, y: f64) -> Landmark {
        Landmark { vis: 0, x, y }
    }

    #[test]
    fn layout_prefixes_backbone_and_head_names() {
        let bb = TinyConv::new(3, vec![4]).unwrap();
        let spec = HeadSpec::Attribute {
            pooling: Pooling::Global,
            window: 3,
        };
        let head = spec
            .build(
                &bb,
                &HeadDims {
                    num_attrs: 5,
                    ..Default::default()
                },
            )
            .unwrap();
        let model = FashionModel::new(bb, head);
        let names: Vec<&str> = model.layout.specs().iter().map(|s| s.name.as_str()).collect();
        assert_eq!(
            names,
            vec![
                "backbone.stage0.weight",
                "backbone.stage0.bias",
                "head.fc.weight",
                "head.fc.bias"
            ]
        );
    }

    #[test]
    fn landmark_pooling_widens_the_attribute_features() {
        let bb = TinyConv::new(3, vec![4, 6]).unwrap();
        let spec = HeadSpec::Attribute {
            pooling: Pooling::Landmark,
            window: 3,
        };
        let head = spec
            .build(
                &bb,
                &HeadDims {
                    num_attrs: 2,
                    num_landmarks: 3,
                    ..Default::default()
                },
            )
            .unwrap();
        let model = FashionModel::new(bb, head);
        let params = model.init_params(1);
        let img = image(0, 16, 16);
        let lms = vec![lm(4.0, 4.0), lm(8.0, 8.0), lm(12.0, 12.0)];
        let logits = model.attribute_logits(&params, &img, Some(&lms)).unwrap();
        assert_eq!(logits.len(), 2);
        // Wrong landmark count is rejected.
        assert!(model.attribute_logits(&params, &img, Some(&lms[..2])).is_err());
        assert!(model.attribute_logits(&params, &img, None).is_err());
    }

    #[test]
    fn attribute_gradient_matches_finite_differences() {
        let bb = TinyConv::new(3, vec![4]).unwrap();
        let spec = HeadSpec::Attribute {
            pooling: Pooling::Global,
            window: 3,
        };
        let head = spec
            .build(
                &bb,
                &HeadDims {
                    num_attrs: 3,
                    ..Default::default()
                },
            )
            .unwrap();
        let model = FashionModel::new(bb, head);
        let params = model.init_params(3);
        let img = image(1, 16, 16);
        let labels = [true, false, true];
        let mut grad = vec![0.0; params.len()];
        model
            .attribute_loss(&params, &img, None, &labels, 1.0, Some(&mut grad))
            .unwrap();
        let mut f = |p: &[f64]| {
            model
                .attribute_loss(p, &img, None, &labels, 1.0, None)
                .unwrap()
        };
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let (err, idx) =
            gradcheck::worst_rel_error(&mut f, &params, &grad, 1e-4, 15, &mut rng);
        assert!(err < 1e-4, "worst error {err} at {idx}");
    }

    #[test]
    fn embedding_is_unit_norm_and_checkable() {
        let bb = TinyConv::new(3, vec![4]).unwrap();
        let head = HeadSpec::Embed {
            dim: 6,
            normalize: true,
        }
        .build(&bb, &HeadDims::default())
        .unwrap();
        let model = FashionModel::new(bb, head);
        let params = model.init_params(5);
        let e = model.embedding(&params, &image(2, 16, 16)).unwrap();
        let norm: f64 = e.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn compat_distance_gradient_matches_finite_differences() {
        let bb = TinyConv::new(3, vec![4]).unwrap();
        let head = HeadSpec::Compat {
            dim: 5,
            pair_dim: None,
            strategy: PairStrategy::LearnedMetric,
        }
        .build(
            &bb,
            &HeadDims {
                item_types: vec!["top".into(), "bottom".into()],
                ..Default::default()
            },
        )
        .unwrap();
        let model = FashionModel::new(bb, head);
        let params = model.init_params(8);
        let a = image(3, 16, 16);
        let b = image(4, 16, 16);
        let mut grad = vec![0.0; params.len()];
        model
            .compat_distance(&params, (&a, "top"), (&b, "bottom"), 1.0, Some(&mut grad))
            .unwrap();
        let mut f = |p: &[f64]| {
            model
                .compat_distance(p, (&a, "top"), (&b, "bottom"), 1.0, None)
                .unwrap()
        };
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let (err, idx) =
            gradcheck::worst_rel_error(&mut f, &params, &grad, 1e-4, 15, &mut rng);
        assert!(err < 1e-4, "worst error {err} at {idx}");
    }
}
