//! Task heads and their losses.
//!
//! Every head is a thin affine readout over pooled features. Losses are
//! per-sample scalars; batch reduction happens in the caller, which
//! passes `scale` (typically `1 / batch`) so gradients accumulate
//! directly into the shared parameter buffer.

use crate::error::{Error, Result};

use super::tensor::{Init, ParamSpec};

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Binary cross-entropy on a logit, in the overflow-safe form
/// `max(z, 0) - z y + ln(1 + exp(-|z|))`. Returns the loss and its
/// derivative with respect to the logit.
pub fn bce_with_logits(z: f64, y: f64) -> (f64, f64) {
    let loss = z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
    (loss, sigmoid(z) - y)
}

/// `out = W x + b` with `W` row-major `[out, in]`.
pub fn affine_forward(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let (n_out, n_in) = (b.len(), x.len());
    debug_assert_eq!(w.len(), n_out * n_in);
    debug_assert_eq!(out.len(), n_out);
    for o in 0..n_out {
        let row = &w[o * n_in..(o + 1) * n_in];
        out[o] = b[o] + row.iter().zip(x).map(|(wv, xv)| wv * xv).sum::<f64>();
    }
}

/// Accumulates gradients for `y = W x + b`: `dW += dy xᵀ`, `db += dy`,
/// and when requested `dx += Wᵀ dy`.
pub fn affine_backward(
    w: &[f64],
    x: &[f64],
    grad_y: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    grad_x: Option<&mut [f64]>,
) {
    let (n_out, n_in) = (grad_y.len(), x.len());
    debug_assert_eq!(w.len(), n_out * n_in);
    for o in 0..n_out {
        let g = grad_y[o];
        if g == 0.0 {
            continue;
        }
        grad_b[o] += g;
        let row = o * n_in;
        for i in 0..n_in {
            grad_w[row + i] += g * x[i];
        }
    }
    if let Some(gx) = grad_x {
        for o in 0..n_out {
            let g = grad_y[o];
            if g == 0.0 {
                continue;
            }
            let row = &w[o * n_in..(o + 1) * n_in];
            for i in 0..n_in {
                gx[i] += g * row[i];
            }
        }
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Multi-label attribute classifier: one affine layer producing a logit
/// per attribute.
#[derive(Debug, Clone)]
pub struct AttributeHead {
    pub in_dim: usize,
    pub num_attrs: usize,
}

impl AttributeHead {
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        vec![
            ParamSpec::new(
                "fc.weight",
                vec![self.num_attrs, self.in_dim],
                Init::UniformFanIn(self.in_dim),
            ),
            ParamSpec::new("fc.bias", vec![self.num_attrs], Init::Zero),
        ]
    }

    fn split<'a>(&self, params: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        let w_len = self.num_attrs * self.in_dim;
        (&params[..w_len], &params[w_len..w_len + self.num_attrs])
    }

    pub fn forward(&self, params: &[f64], feat: &[f64]) -> Vec<f64> {
        let (w, b) = self.split(params);
        let mut logits = vec![0.0; self.num_attrs];
        affine_forward(w, b, feat, &mut logits);
        logits
    }

    /// Mean over attributes of per-attribute sigmoid BCE. Returns
    /// `scale` times the per-sample loss and accumulates `scale` times
    /// the gradients.
    pub fn loss_grad(
        &self,
        params: &[f64],
        feat: &[f64],
        labels: &[bool],
        scale: f64,
        grad_params: &mut [f64],
        grad_feat: &mut [f64],
    ) -> Result<f64> {
        if labels.len() != self.num_attrs {
            return Err(Error::Validation(format!(
                "attribute head expects {} labels, got {}",
                self.num_attrs,
                labels.len()
            )));
        }
        let (w, _) = self.split(params);
        let logits = self.forward(params, feat);
        let mut loss = 0.0;
        let mut grad_z = vec![0.0; self.num_attrs];
        let inv = 1.0 / self.num_attrs as f64;
        for (a, &z) in logits.iter().enumerate() {
            let y = if labels[a] { 1.0 } else { 0.0 };
            let (l, dz) = bce_with_logits(z, y);
            loss += l * inv;
            grad_z[a] = dz * inv * scale;
        }
        let w_len = self.num_attrs * self.in_dim;
        let (gw, gb) = grad_params.split_at_mut(w_len);
        affine_backward(w, feat, &grad_z, gw, gb, Some(grad_feat));
        Ok(loss * scale)
    }
}

/// Embedding head: affine map followed by L2 normalization.
#[derive(Debug, Clone)]
pub struct EmbedHead {
    pub in_dim: usize,
    pub out_dim: usize,
    pub normalize: bool,
}

#[derive(Debug, Clone)]
pub struct EmbedCache {
    pub pre_norm: Vec<f64>,
    pub norm: f64,
    pub embedding: Vec<f64>,
}

impl EmbedHead {
    pub fn new(in_dim: usize, out_dim: usize, normalize: bool) -> EmbedHead {
        EmbedHead {
            in_dim,
            out_dim,
            normalize,
        }
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        vec![
            ParamSpec::new(
                "embed.weight",
                vec![self.out_dim, self.in_dim],
                Init::UniformFanIn(self.in_dim),
            ),
            ParamSpec::new("embed.bias", vec![self.out_dim], Init::Zero),
        ]
    }

    pub fn param_len(&self) -> usize {
        self.out_dim * self.in_dim + self.out_dim
    }

    fn split<'a>(&self, params: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        let w_len = self.out_dim * self.in_dim;
        (&params[..w_len], &params[w_len..w_len + self.out_dim])
    }

    pub fn forward(&self, params: &[f64], feat: &[f64]) -> EmbedCache {
        let (w, b) = self.split(params);
        let mut v = vec![0.0; self.out_dim];
        affine_forward(w, b, feat, &mut v);
        if !self.normalize {
            return EmbedCache {
                pre_norm: v.clone(),
                norm: 1.0,
                embedding: v,
            };
        }
        // The floor keeps the gradient finite for a degenerate zero vector.
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        let embedding = v.iter().map(|x| x / norm).collect();
        EmbedCache {
            pre_norm: v,
            norm,
            embedding,
        }
    }

    /// Accumulates `scale` times the gradients given the loss gradient
    /// with respect to the embedding.
    pub fn backward(
        &self,
        params: &[f64],
        feat: &[f64],
        cache: &EmbedCache,
        grad_embedding: &[f64],
        scale: f64,
        grad_params: &mut [f64],
        grad_feat: &mut [f64],
    ) {
        let (w, _) = self.split(params);
        let grad_v: Vec<f64> = if self.normalize {
            // y = v / n with n = ‖v‖: dv = (g − y (y·g)) / n.
            let y = &cache.embedding;
            let dot: f64 = y.iter().zip(grad_embedding).map(|(a, b)| a * b).sum();
            y.iter()
                .zip(grad_embedding)
                .map(|(yi, gi)| scale * (gi - yi * dot) / cache.norm)
                .collect()
        } else {
            grad_embedding.iter().map(|g| g * scale).collect()
        };
        let w_len = self.out_dim * self.in_dim;
        let (gw, gb) = grad_params.split_at_mut(w_len);
        affine_backward(w, feat, &grad_v, gw, gb, Some(grad_feat));
    }
}

/// `max(0, ‖a−p‖² − ‖a−n‖² + margin)` on equal-length embeddings.
pub fn triplet_loss(a: &[f64], p: &[f64], n: &[f64], margin: f64) -> f64 {
    assert!(a.len() == p.len() && a.len() == n.len(), "embedding dims differ");
    (squared_distance(a, p) - squared_distance(a, n) + margin).max(0.0)
}

/// Triplet loss plus its gradients with respect to the three embeddings.
/// The hinge's flat region gets zero gradients.
pub fn triplet_loss_grad(
    a: &[f64],
    p: &[f64],
    n: &[f64],
    margin: f64,
) -> (f64, Vec<f64>, Vec<f64>, Vec<f64>) {
    let loss = triplet_loss(a, p, n, margin);
    let dim = a.len();
    let (mut ga, mut gp, mut gn) = (vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]);
    if loss > 0.0 {
        for i in 0..dim {
            ga[i] = 2.0 * (n[i] - p[i]);
            gp[i] = 2.0 * (p[i] - a[i]);
            gn[i] = 2.0 * (a[i] - n[i]);
        }
    }
    (loss, ga, gp, gn)
}

/// Landmark regressor over globally pooled features: per landmark a
/// `(x, y, visibility)` triple, coordinates squashed to `[0, 1]` by a
/// sigmoid, visibility left as a logit.
#[derive(Debug, Clone)]
pub struct LandmarkHead {
    pub in_dim: usize,
    pub num_landmarks: usize,
}

/// One ground-truth landmark in normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandmarkTarget {
    pub x: f64,
    pub y: f64,
    pub visible: bool,
}

impl LandmarkHead {
    pub fn out_dim(&self) -> usize {
        3 * self.num_landmarks
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        vec![
            ParamSpec::new(
                "fc.weight",
                vec![self.out_dim(), self.in_dim],
                Init::UniformFanIn(self.in_dim),
            ),
            ParamSpec::new("fc.bias", vec![self.out_dim()], Init::Zero),
        ]
    }

    fn split<'a>(&self, params: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        let w_len = self.out_dim() * self.in_dim;
        (&params[..w_len], &params[w_len..w_len + self.out_dim()])
    }

    fn logits(&self, params: &[f64], feat: &[f64]) -> Vec<f64> {
        let (w, b) = self.split(params);
        let mut z = vec![0.0; self.out_dim()];
        affine_forward(w, b, feat, &mut z);
        z
    }

    /// Predicted `(x, y, visibility probability)` per landmark, all in
    /// `[0, 1]`.
    pub fn predict(&self, params: &[f64], feat: &[f64]) -> Vec<(f64, f64, f64)> {
        let z = self.logits(params, feat);
        (0..self.num_landmarks)
            .map(|l| {
                (
                    sigmoid(z[3 * l]),
                    sigmoid(z[3 * l + 1]),
                    sigmoid(z[3 * l + 2]),
                )
            })
            .collect()
    }

    /// Per-sample loss: mean squared coordinate error over this sample's
    /// visible landmarks (zero when none are visible) plus mean BCE on
    /// visibility, weighted 1:1.
    pub fn loss_grad(
        &self,
        params: &[f64],
        feat: &[f64],
        targets: &[LandmarkTarget],
        scale: f64,
        grad_params: &mut [f64],
        grad_feat: &mut [f64],
    ) -> Result<f64> {
        if targets.len() != self.num_landmarks {
            return Err(Error::Validation(format!(
                "landmark head expects {} targets, got {}",
                self.num_landmarks,
                targets.len()
            )));
        }
        let (w, _) = self.split(params);
        let z = self.logits(params, feat);
        let visible = targets.iter().filter(|t| t.visible).count();
        let mut loss = 0.0;
        let mut grad_z = vec![0.0; self.out_dim()];
        if visible > 0 {
            // Mean over the 2·visible coordinate residuals.
            let inv = 1.0 / (2 * visible) as f64;
            for (l, t) in targets.iter().enumerate() {
                if !t.visible {
                    continue;
                }
                let px = sigmoid(z[3 * l]);
                let py = sigmoid(z[3 * l + 1]);
                loss += ((px - t.x) * (px - t.x) + (py - t.y) * (py - t.y)) * inv;
                grad_z[3 * l] = 2.0 * (px - t.x) * inv * px * (1.0 - px) * scale;
                grad_z[3 * l + 1] = 2.0 * (py - t.y) * inv * py * (1.0 - py) * scale;
            }
        }
        let inv_l = 1.0 / self.num_landmarks as f64;
        for (l, t) in targets.iter().enumerate() {
            let y = if t.visible { 1.0 } else { 0.0 };
            let (bce, dz) = bce_with_logits(z[3 * l + 2], y);
            loss += bce * inv_l;
            grad_z[3 * l + 2] = dz * inv_l * scale;
        }
        let w_len = self.out_dim() * self.in_dim;
        let (gw, gb) = grad_params.split_at_mut(w_len);
        affine_backward(w, feat, &grad_z, gw, gb, Some(grad_feat));
        Ok(loss * scale)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::tensor::ParamLayout;

    #[test]
    fn bce_hand_values() {
        let (l, _) = bce_with_logits(0.0, 1.0);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        let (l, _) = bce_with_logits(100.0, 1.0);
        assert!(l < 1e-10);
        let (l, _) = bce_with_logits(-100.0, 0.0);
        assert!(l < 1e-10);
        // Derivative is sigmoid(z) - y.
        let (_, d) = bce_with_logits(0.0, 0.0);
        assert!((d - 0.5).abs() < 1e-12);
    }

    #[test]
    fn attribute_loss_hand_values() {
        let head = AttributeHead {
            in_dim: 2,
            num_attrs: 2,
        };
        // Identity-ish weights zeroed: logits equal the bias, here 0.
        let params = vec![0.0; 6];
        let mut gp = vec![0.0; 6];
        let mut gf = vec![0.0; 2];
        // Logits [0, 0], labels [1, 0]: both terms are ln 2, mean is ln 2.
        let loss = head
            .loss_grad(&params, &[0.0, 0.0], &[true, false], 1.0, &mut gp, &mut gf)
            .unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(head
            .loss_grad(&params, &[0.0, 0.0], &[true], 1.0, &mut gp, &mut gf)
            .is_err());
    }

    #[test]
    fn embed_head_output_is_unit_norm() {
        let head = EmbedHead::new(3, 4, true);
        let layout = ParamLayout::new(head.param_specs());
        let params = layout.init_params(3);
        let cache = head.forward(&params, &[0.3, -0.2, 0.9]);
        let norm: f64 = cache.embedding.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn triplet_hand_values() {
        let a = [1.0, 0.0];
        let n = [0.0, 1.0];
        // a == p and the negative is far: satisfied margin.
        assert_eq!(triplet_loss(&a, &a, &n, 0.3), 0.0);
        // a == n with ‖a−p‖² = 0.5: loss = 0.5 + 0.3.
        let p = [0.5, 0.5];
        let d_ap: f64 = a.iter().zip(&p).map(|(x, y)| (x - y) * (x - y)).sum();
        assert!((d_ap - 0.5).abs() < 1e-12);
        assert!((triplet_loss(&a, &p, &a, 0.3) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn triplet_grad_matches_finite_differences() {
        let a = vec![0.3, -0.1, 0.5];
        let p = vec![0.2, 0.1, 0.4];
        let n = vec![-0.3, 0.2, 0.1];
        let (_, ga, gp, gn) = triplet_loss_grad(&a, &p, &n, 0.3);
        let step = 1e-6;
        let fd = |f: &dyn Fn(&[f64]) -> f64, base: &[f64], i: usize| {
            let mut up = base.to_vec();
            up[i] += step;
            let mut down = base.to_vec();
            down[i] -= step;
            (f(&up) - f(&down)) / (2.0 * step)
        };
        for i in 0..3 {
            let na = fd(&|v| triplet_loss(v, &p, &n, 0.3), &a, i);
            let np = fd(&|v| triplet_loss(&a, v, &n, 0.3), &p, i);
            let nn = fd(&|v| triplet_loss(&a, &p, v, 0.3), &n, i);
            assert!((ga[i] - na).abs() < 1e-6);
            assert!((gp[i] - np).abs() < 1e-6);
            assert!((gn[i] - nn).abs() < 1e-6);
        }
    }

    #[test]
    fn landmark_loss_hand_values() {
        let head = LandmarkHead {
            in_dim: 1,
            num_landmarks: 1,
        };
        // Pick weights so that with feat = [1] the coordinate logits give
        // sigmoid(z) = 0.6 and 0.7, and the visibility logit is huge.
        let zx = (0.6f64 / 0.4).ln();
        let zy = (0.7f64 / 0.3).ln();
        let params = vec![zx, zy, 50.0, 0.0, 0.0, 0.0];
        let mut gp = vec![0.0; 6];
        let mut gf = vec![0.0; 1];
        let target = LandmarkTarget {
            x: 0.5,
            y: 0.5,
            visible: true,
        };
        let loss = head
            .loss_grad(&params, &[1.0], &[target], 1.0, &mut gp, &mut gf)
            .unwrap();
        // Offsets (0.1, 0.2): coordinate term (0.01 + 0.04) / 2 = 0.025;
        // the visibility BCE is saturated near zero.
        assert!((loss - 0.025).abs() < 1e-6, "loss {loss}");

        // Invisible target with a confident negative logit: near-zero loss.
        let params = vec![0.0, 0.0, -50.0, 0.0, 0.0, 0.0];
        let hidden = LandmarkTarget {
            x: 0.0,
            y: 0.0,
            visible: false,
        };
        let loss = head
            .loss_grad(&params, &[1.0], &[hidden], 1.0, &mut gp, &mut gf)
            .unwrap();
        assert!(loss < 1e-10, "loss {loss}");
    }
}
