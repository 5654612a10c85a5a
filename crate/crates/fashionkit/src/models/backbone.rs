//! Convolutional backbone.
//!
//! `TinyConv` is a stack of 3x3 stride-2 convolutions with tanh
//! activations. Each stage halves the spatial extent (`ceil(n / 2)` with
//! pad 1), so `s` stages map an `H x W` image to a feature map of
//! `ceil(H / 2^s) x ceil(W / 2^s)` cells with `channels.last()` channels.
//! The activation is smooth, which keeps analytic gradients verifiable
//! against central finite differences to tight tolerances.

use crate::config::expect_keys;
use crate::datasets::Image;
use crate::error::{Error, Result};
use crate::json::Value;

use super::tensor::{FeatureMap, Init, ParamSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct TinyConv {
    pub in_channels: usize,
    pub channels: Vec<usize>,
}

/// Per-stage activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ConvCache {
    /// `inputs[0]` is the image; `inputs[i]` feeds stage `i`.
    inputs: Vec<FeatureMap>,
    /// Post-tanh outputs per stage; the last one is the forward result.
    outputs: Vec<FeatureMap>,
}

const DEFAULT_CHANNELS: [usize; 6] = [16, 32, 64, 128, 256, 512];

impl TinyConv {
    pub fn new(in_channels: usize, channels: Vec<usize>) -> Result<TinyConv> {
        if in_channels == 0 {
            return Err(Error::Config("TinyConv needs at least one input channel".into()));
        }
        if channels.is_empty() || channels.len() > 6 {
            return Err(Error::Config(format!(
                "TinyConv supports 1 to 6 stages, got {}",
                channels.len()
            )));
        }
        if channels.iter().any(|c| *c == 0) {
            return Err(Error::Config("TinyConv stage widths must be positive".into()));
        }
        Ok(TinyConv {
            in_channels,
            channels,
        })
    }

    /// Builds from a config node. Either `channels` (explicit widths) or
    /// `stages` (doubling widths from 16) may be given, not both; the
    /// default is 4 stages.
    pub fn from_config(node: &Value) -> Result<TinyConv> {
        expect_keys(node, &["in_channels", "channels", "stages"], "TinyConv")?;
        let map = node.as_map().expect("checked by expect_keys");
        let in_channels = match map.get("in_channels") {
            None => 3,
            Some(v) => v
                .as_i64()
                .filter(|n| *n > 0)
                .ok_or_else(|| Error::Config("TinyConv in_channels must be a positive integer".into()))?
                as usize,
        };
        let channels = match (map.get("channels"), map.get("stages")) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "TinyConv takes either channels or stages, not both".into(),
                ))
            }
            (Some(list), None) => {
                let items = list
                    .as_list()
                    .ok_or_else(|| Error::Config("TinyConv channels must be a list".into()))?;
                items
                    .iter()
                    .map(|v| {
                        v.as_i64()
                            .filter(|n| *n > 0)
                            .map(|n| n as usize)
                            .ok_or_else(|| {
                                Error::Config("TinyConv channels must be positive integers".into())
                            })
                    })
                    .collect::<Result<Vec<usize>>>()?
            }
            (None, Some(v)) => {
                let stages = v
                    .as_i64()
                    .filter(|n| (1..=6).contains(n))
                    .ok_or_else(|| Error::Config("TinyConv stages must be in 1..=6".into()))?;
                DEFAULT_CHANNELS[..stages as usize].to_vec()
            }
            (None, None) => DEFAULT_CHANNELS[..4].to_vec(),
        };
        TinyConv::new(in_channels, channels)
    }

    pub fn num_stages(&self) -> usize {
        self.channels.len()
    }

    /// Total downsampling factor.
    pub fn stride(&self) -> usize {
        1 << self.num_stages()
    }

    /// Smallest input side that still yields a feature map.
    pub fn min_input(&self) -> usize {
        self.stride()
    }

    pub fn out_channels(&self) -> usize {
        *self.channels.last().expect("at least one stage")
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = Vec::with_capacity(2 * self.num_stages());
        let mut in_ch = self.in_channels;
        for (i, &out_ch) in self.channels.iter().enumerate() {
            let fan_in = in_ch * 9;
            specs.push(ParamSpec::new(
                format!("stage{i}.weight"),
                vec![out_ch, in_ch, 3, 3],
                Init::UniformFanIn(fan_in),
            ));
            specs.push(ParamSpec::new(
                format!("stage{i}.bias"),
                vec![out_ch],
                Init::Zero,
            ));
            in_ch = out_ch;
        }
        specs
    }

    fn param_len(&self) -> usize {
        self.param_specs().iter().map(|s| s.len()).sum()
    }

    /// Runs the image through all stages. `params` is this backbone's
    /// packed parameter slice in `param_specs` order.
    pub fn forward(&self, params: &[f64], image: &Image) -> Result<(FeatureMap, ConvCache)> {
        if image.channels != self.in_channels {
            return Err(Error::Shape(format!(
                "backbone expects {} channels, image has {}",
                self.in_channels, image.channels
            )));
        }
        let min = self.min_input();
        if image.height < min || image.width < min {
            return Err(Error::Shape(format!(
                "backbone with {} stages needs at least {min}x{min} input, got {}x{}",
                self.num_stages(),
                image.height,
                image.width
            )));
        }
        if params.len() != self.param_len() {
            return Err(Error::Shape(format!(
                "backbone parameter slice has {} values, expected {}",
                params.len(),
                self.param_len()
            )));
        }
        let mut inputs = Vec::with_capacity(self.num_stages());
        let mut outputs: Vec<FeatureMap> = Vec::with_capacity(self.num_stages());
        let mut cur = FeatureMap {
            channels: image.channels,
            height: image.height,
            width: image.width,
            stride: 1,
            data: image.data.clone(),
        };
        let mut offset = 0;
        let mut in_ch = self.in_channels;
        for &out_ch in &self.channels {
            let w_len = out_ch * in_ch * 9;
            let weight = &params[offset..offset + w_len];
            let bias = &params[offset + w_len..offset + w_len + out_ch];
            offset += w_len + out_ch;
            let out = stage_forward(&cur, weight, bias, out_ch);
            inputs.push(cur);
            outputs.push(out.clone());
            cur = out;
            in_ch = out_ch;
        }
        let _ = in_ch;
        Ok((cur, ConvCache { inputs, outputs }))
    }

    /// Accumulates parameter gradients given the gradient of the loss
    /// with respect to the forward output. Gradients are added into
    /// `grad_params`, which must be the same length as `params`.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &ConvCache,
        grad_out: &FeatureMap,
        grad_params: &mut [f64],
    ) {
        assert_eq!(grad_params.len(), self.param_len(), "gradient slice length");
        // Parameter offsets per stage, front to back.
        let mut offsets = Vec::with_capacity(self.num_stages());
        let mut offset = 0;
        let mut in_ch = self.in_channels;
        for &out_ch in &self.channels {
            offsets.push(offset);
            offset += out_ch * in_ch * 9 + out_ch;
            in_ch = out_ch;
        }

        let mut grad = grad_out.clone();
        for stage in (0..self.num_stages()).rev() {
            let input = &cache.inputs[stage];
            let output = &cache.outputs[stage];
            let out_ch = self.channels[stage];
            let w_len = out_ch * input.channels * 9;
            let base = offsets[stage];
            let weight = &params[base..base + w_len];
            // The image itself needs no gradient.
            let want_input_grad = stage > 0;
            let grad_in = stage_backward(
                input,
                output,
                weight,
                &grad,
                &mut grad_params[base..base + w_len + out_ch],
                want_input_grad,
            );
            if let Some(g) = grad_in {
                grad = g;
            }
        }
    }
}

fn out_side(n: usize) -> usize {
    n.div_ceil(2)
}

/// One conv stage: 3x3 kernel, stride 2, pad 1, tanh.
fn stage_forward(input: &FeatureMap, weight: &[f64], bias: &[f64], out_ch: usize) -> FeatureMap {
    let (ih, iw, ic) = (input.height, input.width, input.channels);
    let (oh, ow) = (out_side(ih), out_side(iw));
    let mut out = FeatureMap::zeros(out_ch, oh, ow, input.stride * 2);
    for oc in 0..out_ch {
        let w_oc = &weight[oc * ic * 9..(oc + 1) * ic * 9];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias[oc];
                for c in 0..ic {
                    let w_c = &w_oc[c * 9..c * 9 + 9];
                    for ky in 0..3usize {
                        let iy = (2 * oy + ky) as i64 - 1;
                        if iy < 0 || iy >= ih as i64 {
                            continue;
                        }
                        let row = (c * ih + iy as usize) * iw;
                        for kx in 0..3usize {
                            let ix = (2 * ox + kx) as i64 - 1;
                            if ix < 0 || ix >= iw as i64 {
                                continue;
                            }
                            acc += w_c[ky * 3 + kx] * input.data[row + ix as usize];
                        }
                    }
                }
                out.set(oc, oy, ox, acc.tanh());
            }
        }
    }
    out
}

/// Backward through one stage. `grad_stage` holds `[weight, bias]`
/// gradients packed like the parameters; returns the input gradient when
/// requested.
fn stage_backward(
    input: &FeatureMap,
    output: &FeatureMap,
    weight: &[f64],
    grad_out: &FeatureMap,
    grad_stage: &mut [f64],
    want_input_grad: bool,
) -> Option<FeatureMap> {
    let (ih, iw, ic) = (input.height, input.width, input.channels);
    let (oh, ow, oc_n) = (output.height, output.width, output.channels);
    let w_len = oc_n * ic * 9;
    let mut grad_in = if want_input_grad {
        Some(FeatureMap::zeros(ic, ih, iw, input.stride))
    } else {
        None
    };
    for oc in 0..oc_n {
        let w_oc = &weight[oc * ic * 9..(oc + 1) * ic * 9];
        for oy in 0..oh {
            for ox in 0..ow {
                let g = grad_out.get(oc, oy, ox);
                if g == 0.0 {
                    continue;
                }
                let y = output.get(oc, oy, ox);
                // d tanh(z) / dz = 1 - tanh(z)^2.
                let dz = g * (1.0 - y * y);
                grad_stage[w_len + oc] += dz;
                for c in 0..ic {
                    let w_c_base = oc * ic * 9 + c * 9;
                    for ky in 0..3usize {
                        let iy = (2 * oy + ky) as i64 - 1;
                        if iy < 0 || iy >= ih as i64 {
                            continue;
                        }
                        let row = (c * ih + iy as usize) * iw;
                        for kx in 0..3usize {
                            let ix = (2 * ox + kx) as i64 - 1;
                            if ix < 0 || ix >= iw as i64 {
                                continue;
                            }
                            let x = input.data[row + ix as usize];
                            grad_stage[w_c_base + ky * 3 + kx] += dz * x;
                            if let Some(gi) = grad_in.as_mut() {
                                gi.data[row + ix as usize] += dz * w_oc[c * 9 + ky * 3 + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    grad_in
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::tensor::ParamLayout;

    fn image(h: usize, w: usize) -> Image {
        let mut img = Image::zeros(3, h, w);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = ((i * 37) % 101) as f64 / 101.0;
        }
        img
    }

    #[test]
    fn output_shape_follows_the_ceil_contract() {
        let bb = TinyConv::new(3, vec![4, 6]).unwrap();
        let layout = ParamLayout::new(bb.param_specs());
        let params = layout.init_params(1);
        for (h, w) in [(16, 16), (17, 23), (20, 33)] {
            let (fm, _) = bb.forward(&params, &image(h, w)).unwrap();
            assert_eq!(fm.channels, 6);
            assert_eq!(fm.height, h.div_ceil(4));
            assert_eq!(fm.width, w.div_ceil(4));
            assert_eq!(fm.stride, 4);
        }
    }

    #[test]
    fn rejects_undersized_or_mismatched_input() {
        let bb = TinyConv::new(3, vec![4, 6]).unwrap();
        let layout = ParamLayout::new(bb.param_specs());
        let params = layout.init_params(1);
        assert!(bb.forward(&params, &image(3, 16)).is_err());
        let mut gray = Image::zeros(1, 16, 16);
        gray.data.fill(0.5);
        assert!(bb.forward(&params, &gray).is_err());
    }

    #[test]
    fn config_forms() {
        let node = crate::json::parse(r#"{"channels": [8, 16]}"#).unwrap();
        let bb = TinyConv::from_config(&node).unwrap();
        assert_eq!(bb.channels, vec![8, 16]);
        assert_eq!(bb.in_channels, 3);

        let node = crate::json::parse(r#"{"stages": 3, "in_channels": 1}"#).unwrap();
        let bb = TinyConv::from_config(&node).unwrap();
        assert_eq!(bb.channels, vec![16, 32, 64]);
        assert_eq!(bb.in_channels, 1);

        assert!(TinyConv::from_config(&crate::json::parse(r#"{"stages": 2, "channels": [4]}"#).unwrap()).is_err());
        assert!(TinyConv::from_config(&crate::json::parse(r#"{"stages": 9}"#).unwrap()).is_err());
        assert!(TinyConv::from_config(&crate::json::parse(r#"{"chanels": [4]}"#).unwrap()).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let bb = TinyConv::new(3, vec![4, 5]).unwrap();
        let layout = ParamLayout::new(bb.param_specs());
        let params = layout.init_params(7);
        let img = image(17, 19);
        // Scalar loss: weighted sum of all feature map cells.
        let loss = |p: &[f64]| -> f64 {
            let (fm, _) = bb.forward(p, &img).unwrap();
            fm.data
                .iter()
                .enumerate()
                .map(|(i, v)| v * ((i % 7) as f64 - 3.0))
                .sum()
        };
        let (fm, cache) = bb.forward(&params, &img).unwrap();
        let mut grad_fm = fm.clone();
        for (i, v) in grad_fm.data.iter_mut().enumerate() {
            *v = (i % 7) as f64 - 3.0;
        }
        let mut grad = vec![0.0; layout.total_len()];
        bb.backward(&params, &cache, &grad_fm, &mut grad);

        let step = 1e-5;
        for idx in [0, 3, 50, 107, grad.len() - 1, grad.len() - 5] {
            let mut p = params.clone();
            p[idx] += step;
            let up = loss(&p);
            p[idx] -= 2.0 * step;
            let down = loss(&p);
            let numeric = (up - down) / (2.0 * step);
            let denom = grad[idx].abs().max(numeric.abs()).max(1e-6);
            assert!(
                ((grad[idx] - numeric) / denom).abs() < 1e-5,
                "param {idx}: analytic {} vs numeric {numeric}",
                grad[idx]
            );
        }
    }
}
