//! Channel-major feature tensors and the few ops the fusion network needs,
//! each with its adjoint for back-propagation.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::floor;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Stacks `self` on top of `other` along channels.
    pub fn concat(&self, other: &Tensor) -> Tensor {
        debug_assert_eq!((self.height, self.width), (other.height, other.width));
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Tensor {
            channels: self.channels + other.channels,
            height: self.height,
            width: self.width,
            data,
        }
    }
}

/// Half-pixel bilinear interpolation weights along one axis.
#[derive(Debug, Clone)]
pub struct AxisResampler {
    taps: Vec<(usize, usize, f64)>,
    in_len: usize,
}

impl AxisResampler {
    pub fn new(in_len: usize, out_len: usize) -> Self {
        let ratio = in_len as f64 / out_len as f64;
        let taps = (0..out_len)
            .map(|o| {
                let src = ((o as f64 + 0.5) * ratio - 0.5).clamp(0.0, (in_len - 1) as f64);
                let i0 = floor(src) as usize;
                let i1 = (i0 + 1).min(in_len - 1);
                (i0, i1, src - i0 as f64)
            })
            .collect();
        Self { taps, in_len }
    }
}

/// Separable bilinear resize of every channel plane.
#[derive(Debug, Clone)]
pub struct Resampler {
    rows: AxisResampler,
    cols: AxisResampler,
}

impl Resampler {
    pub fn new(in_hw: (usize, usize), out_hw: (usize, usize)) -> Self {
        Self {
            rows: AxisResampler::new(in_hw.0, out_hw.0),
            cols: AxisResampler::new(in_hw.1, out_hw.1),
        }
    }

    pub fn out_dims(&self) -> (usize, usize) {
        (self.rows.taps.len(), self.cols.taps.len())
    }

    /// Resizes one `in_h x in_w` plane into `out`.
    pub fn forward_plane(&self, input: &[f64], out: &mut [f64]) {
        let in_w = self.cols.in_len;
        let out_w = self.cols.taps.len();
        let mut row_buf = vec![0.0; out_w];
        let mut rows_cache: Vec<Vec<f64>> = vec![Vec::new(); self.rows.in_len];
        let resized_row = |r: usize, cache: &mut Vec<Vec<f64>>| {
            if cache[r].is_empty() {
                let src = &input[r * in_w..(r + 1) * in_w];
                cache[r] = self.cols.taps.iter().map(|&(a, b, t)| src[a] + t * (src[b] - src[a])).collect();
            }
        };
        for (oy, &(r0, r1, t)) in self.rows.taps.iter().enumerate() {
            resized_row(r0, &mut rows_cache);
            resized_row(r1, &mut rows_cache);
            let (a, b) = (&rows_cache[r0], &rows_cache[r1]);
            for ((o, &va), &vb) in row_buf.iter_mut().zip(a).zip(b) {
                *o = va + t * (vb - va);
            }
            out[oy * out_w..(oy + 1) * out_w].copy_from_slice(&row_buf);
        }
    }

    /// Adjoint of [`forward_plane`]: accumulates into `grad_in`.
    pub fn backward_plane(&self, grad_out: &[f64], grad_in: &mut [f64]) {
        let in_w = self.cols.in_len;
        let out_w = self.cols.taps.len();
        // Adjoint of the row pass into an intermediate (in_h x out_w).
        let mut inter = vec![0.0; self.rows.in_len * out_w];
        for (oy, &(r0, r1, t)) in self.rows.taps.iter().enumerate() {
            let g = &grad_out[oy * out_w..(oy + 1) * out_w];
            for (x, &gv) in g.iter().enumerate() {
                inter[r0 * out_w + x] += (1.0 - t) * gv;
                inter[r1 * out_w + x] += t * gv;
            }
        }
        for r in 0..self.rows.in_len {
            let src = &inter[r * out_w..(r + 1) * out_w];
            let dst = &mut grad_in[r * in_w..(r + 1) * in_w];
            for (&(c0, c1, t), &gv) in self.cols.taps.iter().zip(src) {
                dst[c0] += (1.0 - t) * gv;
                dst[c1] += t * gv;
            }
        }
    }

    pub fn forward(&self, input: &Tensor) -> Tensor {
        let (oh, ow) = self.out_dims();
        let mut out = Tensor::zeros(input.channels, oh, ow);
        for c in 0..input.channels {
            self.forward_plane(input.plane(c), out.plane_mut(c));
        }
        out
    }

    pub fn backward(&self, grad_out: &Tensor, in_hw: (usize, usize)) -> Tensor {
        let mut grad_in = Tensor::zeros(grad_out.channels, in_hw.0, in_hw.1);
        for c in 0..grad_out.channels {
            self.backward_plane(grad_out.plane(c), grad_in.plane_mut(c));
        }
        grad_in
    }
}

/// 3x3 convolution, stride 1, zero padding 1. `weight` is laid out
/// `[out][in][ky][kx]`.
pub fn conv3x3_forward(input: &Tensor, weight: &[f64], bias: &[f64], out_channels: usize) -> Tensor {
    let (h, w) = (input.height, input.width);
    let mut out = Tensor::zeros(out_channels, h, w);
    for co in 0..out_channels {
        let plane = out.plane_mut(co);
        plane.iter_mut().for_each(|v| *v = bias[co]);
        for ci in 0..input.channels {
            let src = input.plane(ci);
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = weight[((co * input.channels + ci) * 3 + ky) * 3 + kx];
                    let (y_lo, y_hi) = valid_range(ky, h);
                    let (x_lo, x_hi) = valid_range(kx, w);
                    for y in y_lo..y_hi {
                        let sy = y + ky - 1;
                        let dst = &mut plane[y * w + x_lo..y * w + x_hi];
                        let s = &src[sy * w + x_lo + kx - 1..sy * w + x_hi + kx - 1];
                        for (d, &v) in dst.iter_mut().zip(s) {
                            *d += wv * v;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Output rows/cols `[lo, hi)` whose tap `k` lands inside `0..n`.
#[inline]
fn valid_range(k: usize, n: usize) -> (usize, usize) {
    match k {
        0 => (1, n),
        1 => (0, n),
        _ => (0, n.saturating_sub(1)),
    }
}

/// Gradients of [`conv3x3_forward`]. Accumulates into `grad_weight` and
/// `grad_bias`; returns the input gradient when `need_input` is set.
pub fn conv3x3_backward(
    input: &Tensor,
    weight: &[f64],
    grad_out: &Tensor,
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
    need_input: bool,
) -> Option<Tensor> {
    let (h, w) = (input.height, input.width);
    let mut grad_in = need_input.then(|| Tensor::zeros(input.channels, h, w));
    for co in 0..grad_out.channels {
        let g = grad_out.plane(co);
        grad_bias[co] += g.iter().sum::<f64>();
        for ci in 0..input.channels {
            let src = input.plane(ci);
            for ky in 0..3 {
                for kx in 0..3 {
                    let widx = ((co * input.channels + ci) * 3 + ky) * 3 + kx;
                    let (y_lo, y_hi) = valid_range(ky, h);
                    let (x_lo, x_hi) = valid_range(kx, w);
                    let mut acc = 0.0;
                    for y in y_lo..y_hi {
                        let sy = y + ky - 1;
                        let gr = &g[y * w + x_lo..y * w + x_hi];
                        let s = &src[sy * w + x_lo + kx - 1..sy * w + x_hi + kx - 1];
                        acc += gr.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
                    }
                    grad_weight[widx] += acc;
                    if let Some(gi) = grad_in.as_mut() {
                        let wv = weight[widx];
                        let dst_plane = gi.plane_mut(ci);
                        for y in y_lo..y_hi {
                            let sy = y + ky - 1;
                            let gr = &g[y * w + x_lo..y * w + x_hi];
                            let d = &mut dst_plane[sy * w + x_lo + kx - 1..sy * w + x_hi + kx - 1];
                            for (dv, &gv) in d.iter_mut().zip(gr) {
                                *dv += wv * gv;
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

    fn seq(c: usize, h: usize, w: usize) -> Tensor {
        let mut t = Tensor::zeros(c, h, w);
        for (i, v) in t.data.iter_mut().enumerate() {
            *v = ((i * 37) % 11) as f64 / 7.0 - 0.6;
        }
        t
    }

    #[test]
    fn resampler_identity_and_constant() {
        let t = seq(2, 5, 7);
        assert_eq!(Resampler::new((5, 7), (5, 7)).forward(&t), t);
        let mut c = Tensor::zeros(1, 3, 4);
        c.data.iter_mut().for_each(|v| *v = 0.25);
        let up = Resampler::new((3, 4), (9, 16)).forward(&c);
        assert!(up.data.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn resampler_adjoint_identity() {
        // <R x, y> == <x, R^T y>
        let r = Resampler::new((4, 6), (9, 13));
        let x = seq(1, 4, 6);
        let y = seq(1, 9, 13);
        let rx = r.forward(&x);
        let rty = r.backward(&y, (4, 6));
        let lhs: f64 = rx.data.iter().zip(&y.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&rty.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let x = seq(2, 4, 5);
        let weight: Vec<f64> = (0..3 * 2 * 9).map(|i| ((i * 13) % 7) as f64 / 10.0 - 0.3).collect();
        let bias = [0.1, -0.2, 0.05];
        let out = conv3x3_forward(&x, &weight, &bias, 3);
        for co in 0..3 {
            for y in 0..4 {
                for xx in 0..5 {
                    let mut s = bias[co];
                    for ci in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let (sy, sx) = (y as i64 + ky as i64 - 1, xx as i64 + kx as i64 - 1);
                                if sy >= 0 && sx >= 0 && sy < 4 && sx < 5 {
                                    s += weight[((co * 2 + ci) * 3 + ky) * 3 + kx]
                                        * x.plane(ci)[sy as usize * 5 + sx as usize];
                                }
                            }
                        }
                    }
                    assert!((out.plane(co)[y * 5 + xx] - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv_adjoint_identity() {
        let x = seq(2, 4, 5);
        let weight: Vec<f64> = (0..3 * 2 * 9).map(|i| ((i * 5) % 9) as f64 / 10.0 - 0.4).collect();
        let y = seq(3, 4, 5);
        let out = conv3x3_forward(&x, &weight, &[0.0; 3], 3);
        let mut gw = vec![0.0; weight.len()];
        let mut gb = vec![0.0; 3];
        let gx = conv3x3_backward(&x, &weight, &y, &mut gw, &mut gb, true).unwrap();
        let lhs: f64 = out.data.iter().zip(&y.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&gx.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
        // Linear in weights too: <conv_w(x), y> == <w, dW>.
        let rhs_w: f64 = weight.iter().zip(&gw).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs_w).abs() < 1e-10);
    }
}
