//! Trainable multi-scale fusion network producing the pixel feature map.
//!
//! Levels are fused coarse to fine: each level is concatenated with the
//! upsampled hidden state of the next coarser level, passed through a 3x3
//! convolution and `tanh`. A final 1x1 projection maps the finest hidden
//! state to the embedding width. All parameters live in one flat vector.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use super::tensor::{conv3x3_backward, conv3x3_forward, Resampler, Tensor};
use crate::math::{ln, tanh};
use crate::rng::{normal, rng_from};
use crate::{Error, Result};

/// Initial temperature of the similarity head.
pub const INITIAL_TEMPERATURE: f64 = 0.07;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FusionArch {
    /// Channels per backbone level, finest first.
    pub level_channels: Vec<usize>,
    pub hidden: usize,
    pub embed_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct ConvSlot {
    cin: usize,
    weight: Range<usize>,
    bias: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    convs: Vec<ConvSlot>,
    proj_weight: Range<usize>,
    proj_bias: Range<usize>,
    log_temperature: usize,
    len: usize,
}

impl Layout {
    fn new(arch: &FusionArch) -> Self {
        let n = arch.level_channels.len();
        let mut off = 0;
        let mut take = |k: usize| {
            let r = off..off + k;
            off += k;
            r
        };
        let convs = arch
            .level_channels
            .iter()
            .enumerate()
            .map(|(k, &c)| {
                let cin = c + if k + 1 < n { arch.hidden } else { 0 };
                let weight = take(arch.hidden * cin * 9);
                let bias = take(arch.hidden);
                ConvSlot { cin, weight, bias }
            })
            .collect();
        let proj_weight = take(arch.embed_dim * arch.hidden);
        let proj_bias = take(arch.embed_dim);
        let log_temperature = take(1).start;
        Self {
            convs,
            proj_weight,
            proj_bias,
            log_temperature,
            len: off,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Index of the log-temperature scalar in the flat vector.
    pub fn log_temperature_index(&self) -> usize {
        self.log_temperature
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionNetwork {
    arch: FusionArch,
    layout: Layout,
    pub params: Vec<f64>,
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Conv input per level (after concatenation), finest first.
    conv_inputs: Vec<Tensor>,
    /// `tanh` output per level, finest first.
    hidden: Vec<Tensor>,
}

impl FusionNetwork {
    pub fn new(arch: FusionArch, seed: u64) -> Result<Self> {
        if arch.level_channels.is_empty() || arch.hidden == 0 || arch.embed_dim == 0 {
            return Err(Error::InvalidArgument("fusion network needs levels, hidden and embedding width".into()));
        }
        let layout = Layout::new(&arch);
        let mut params = vec![0.0; layout.len];
        let mut rng = rng_from(seed);
        for slot in &layout.convs {
            let scale = 1.0 / crate::math::sqrt((slot.cin * 9) as f64);
            for v in &mut params[slot.weight.clone()] {
                *v = normal(&mut rng) * scale;
            }
        }
        let proj_scale = 1.0 / crate::math::sqrt(arch.hidden as f64);
        for v in &mut params[layout.proj_weight.clone()] {
            *v = normal(&mut rng) * proj_scale;
        }
        params[layout.log_temperature] = ln(INITIAL_TEMPERATURE);
        Ok(Self { arch, layout, params })
    }

    /// Rebuilds a network from stored parameters.
    pub fn from_params(arch: FusionArch, params: Vec<f64>) -> Result<Self> {
        let layout = Layout::new(&arch);
        if params.len() != layout.len {
            return Err(Error::DimensionMismatch {
                expected: layout.len,
                found: params.len(),
            });
        }
        Ok(Self { arch, layout, params })
    }

    pub fn arch(&self) -> &FusionArch {
        &self.arch
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn embed_dim(&self) -> usize {
        self.arch.embed_dim
    }

    pub fn temperature(&self) -> f64 {
        crate::math::exp(self.params[self.layout.log_temperature])
    }

    /// Runs the network on backbone levels (finest first). Returns the
    /// feature map at the finest level's resolution.
    pub fn forward(&self, levels: &[Tensor]) -> Result<(Tensor, ForwardCache)> {
        if levels.len() != self.arch.level_channels.len() {
            return Err(Error::DimensionMismatch {
                expected: self.arch.level_channels.len(),
                found: levels.len(),
            });
        }
        for (t, &c) in levels.iter().zip(&self.arch.level_channels) {
            if t.channels != c {
                return Err(Error::DimensionMismatch {
                    expected: c,
                    found: t.channels,
                });
            }
        }
        let n = levels.len();
        let mut conv_inputs: Vec<Option<Tensor>> = vec![None; n];
        let mut hidden: Vec<Option<Tensor>> = vec![None; n];
        for k in (0..n).rev() {
            let input = match hidden.get(k + 1).and_then(Option::as_ref) {
                Some(coarser) => {
                    let up = Resampler::new((coarser.height, coarser.width), (levels[k].height, levels[k].width));
                    levels[k].concat(&up.forward(coarser))
                }
                None => levels[k].clone(),
            };
            let slot = &self.layout.convs[k];
            let mut h = conv3x3_forward(
                &input,
                &self.params[slot.weight.clone()],
                &self.params[slot.bias.clone()],
                self.arch.hidden,
            );
            h.data.iter_mut().for_each(|v| *v = tanh(*v));
            conv_inputs[k] = Some(input);
            hidden[k] = Some(h);
        }
        let conv_inputs: Vec<Tensor> = conv_inputs.into_iter().map(Option::unwrap).collect();
        let hidden: Vec<Tensor> = hidden.into_iter().map(Option::unwrap).collect();

        let top = &hidden[0];
        let plane = top.plane_len();
        let mut f = Tensor::zeros(self.arch.embed_dim, top.height, top.width);
        let w = &self.params[self.layout.proj_weight.clone()];
        let b = &self.params[self.layout.proj_bias.clone()];
        for e in 0..self.arch.embed_dim {
            let out = &mut f.data[e * plane..(e + 1) * plane];
            out.iter_mut().for_each(|v| *v = b[e]);
            for j in 0..self.arch.hidden {
                let wv = w[e * self.arch.hidden + j];
                for (o, &hv) in out.iter_mut().zip(top.plane(j)) {
                    *o += wv * hv;
                }
            }
        }
        Ok((f, ForwardCache { conv_inputs, hidden }))
    }

    /// Back-propagates `grad_f` (same shape as the forward output) and
    /// accumulates parameter gradients into `grad` (a flat vector of
    /// [`Layout::len`]). The temperature entry is left untouched.
    pub fn backward(&self, cache: &ForwardCache, grad_f: &Tensor, grad: &mut [f64]) {
        let hid = self.arch.hidden;
        let top = &cache.hidden[0];
        let plane = top.plane_len();

        // 1x1 projection.
        let mut grad_h = Tensor::zeros(hid, top.height, top.width);
        {
            let w = &self.params[self.layout.proj_weight.clone()];
            let (gw_range, gb_range) = (self.layout.proj_weight.clone(), self.layout.proj_bias.clone());
            for e in 0..self.arch.embed_dim {
                let g = grad_f.plane(e);
                grad[gb_range.start + e] += g.iter().sum::<f64>();
                for j in 0..hid {
                    let hv = top.plane(j);
                    grad[gw_range.start + e * hid + j] += g.iter().zip(hv).map(|(a, b)| a * b).sum::<f64>();
                    let wv = w[e * hid + j];
                    for (d, &gv) in grad_h.data[j * plane..(j + 1) * plane].iter_mut().zip(g) {
                        *d += wv * gv;
                    }
                }
            }
        }

        let n = cache.hidden.len();
        for k in 0..n {
            // tanh'
            for (d, &hv) in grad_h.data.iter_mut().zip(&cache.hidden[k].data) {
                *d *= 1.0 - hv * hv;
            }
            let slot = &self.layout.convs[k];
            let (head, tail) = grad.split_at_mut(slot.bias.start);
            let gw = &mut head[slot.weight.clone()];
            let gb = &mut tail[..hid];
            let need_input = k + 1 < n;
            let gin = conv3x3_backward(
                &cache.conv_inputs[k],
                &self.params[slot.weight.clone()],
                &grad_h,
                gw,
                gb,
                need_input,
            );
            if let Some(gin) = gin {
                // Split off the part flowing into the upsampled coarser state.
                let own = self.arch.level_channels[k];
                let coarser = &cache.hidden[k + 1];
                let g_up = Tensor {
                    channels: hid,
                    height: gin.height,
                    width: gin.width,
                    data: gin.data[own * gin.plane_len()..].to_vec(),
                };
                let up = Resampler::new((coarser.height, coarser.width), (gin.height, gin.width));
                grad_h = up.backward(&g_up, (coarser.height, coarser.width));
            }
        }
    }
}
