//! Recurrent refinement of the index field: softargmin initialization, the
//! three-level convolutional GRU, convex upsampling of the index field and
//! mask-weighted sampling of fine depth hypotheses.

use crate::encoder::ContextFeatures;
use crate::error::{invalid, Result};
use crate::geometry::DepthBins;
use crate::nn::{Conv, Cx, ParamStore};
use crate::numerics::{Graph, NumericsError, Tensor, Var};

/// Number of fine hypotheses each coarse neighbourhood mask mixes over.
pub const NEIGHBOURS: usize = 9;
/// Upsampling factor from the 1/4-resolution index field to full resolution.
pub const UPSAMPLE: usize = 4;
/// Half-width of the fine-bin window in depth sampling.
pub const FINE_RADIUS: isize = 4;

/// `φ0(p) = Σ_i i · softmax(C(p))_i`.
pub fn softargmin_start(g: &mut Graph, volume: Var) -> Result<Var> {
    let (h, w, m) = match *g.shape(volume) {
        [h, w, m] => (h, w, m),
        ref s => return Err(invalid(format!("cost volume must be H×W×M, got {s:?}"))),
    };
    let p = g.softmax_lastdim(volume)?;
    let p = g.reshape(p, &[h * w, m])?;
    let idx = g.constant(Tensor::from_fn(&[m, 1], |i| i as f64));
    let phi = g.matmul(p, idx)?;
    Ok(g.reshape(phi, &[h, w])?)
}

impl Graph {
    /// Each fine pixel of the `factor`-times larger field is a combination of
    /// the 3×3 coarse neighbours of its parent cell (edge-replicated at the
    /// border) with weights `weights[y, x, sub, k]`, where `sub` indexes the
    /// `factor × factor` sub-position row-major and `k = 3·(dy+1) + (dx+1)`.
    pub fn convex_upsample(&mut self, phi: Var, weights: Var, factor: usize) -> Result<Var, NumericsError> {
        let (h, w) = match *self.shape(phi) {
            [h, w] => (h, w),
            ref s => return Err(NumericsError::Shape(format!("convex_upsample: field {s:?}"))),
        };
        let subs = factor * factor;
        if self.shape(weights) != [h, w, subs, NEIGHBOURS] {
            return Err(NumericsError::Shape(format!(
                "convex_upsample: weights {:?}, expected [{h}, {w}, {subs}, 9]",
                self.shape(weights)
            )));
        }
        let neighbour = move |y: usize, x: usize, k: usize| -> usize {
            let ny = (y as isize + k as isize / 3 - 1).clamp(0, h as isize - 1) as usize;
            let nx = (x as isize + k as isize % 3 - 1).clamp(0, w as isize - 1) as usize;
            ny * w + nx
        };
        let (fh, fw) = (h * factor, w * factor);
        let pv = self.value(phi).data();
        let wv = self.value(weights).data();
        let mut out = vec![0.0; fh * fw];
        for y in 0..h {
            for x in 0..w {
                for sub in 0..subs {
                    let wr = &wv[((y * w + x) * subs + sub) * NEIGHBOURS..][..NEIGHBOURS];
                    let v: f64 = (0..NEIGHBOURS).map(|k| wr[k] * pv[neighbour(y, x, k)]).sum();
                    let (a, b) = (sub / factor, sub % factor);
                    out[(y * factor + a) * fw + x * factor + b] = v;
                }
            }
        }
        self.push("convex_upsample", Tensor::from_parts(vec![fh, fw], out), &[phi, weights], move |ctx| {
            let pv = ctx.inputs[0].data();
            let wv = ctx.inputs[1].data();
            let gy = ctx.grad.data();
            let mut dphi = vec![0.0; h * w];
            let mut dw = vec![0.0; wv.len()];
            for y in 0..h {
                for x in 0..w {
                    for sub in 0..subs {
                        let (a, b) = (sub / factor, sub % factor);
                        let g = gy[(y * factor + a) * fw + x * factor + b];
                        let base = ((y * w + x) * subs + sub) * NEIGHBOURS;
                        for k in 0..NEIGHBOURS {
                            let n = neighbour(y, x, k);
                            dphi[n] += g * wv[base + k];
                            dw[base + k] = g * pv[n];
                        }
                    }
                }
            }
            vec![
                Some(Tensor::from_parts(vec![h, w], dphi)),
                Some(Tensor::from_parts(ctx.inputs[1].shape().to_vec(), dw)),
            ]
        })
    }

    /// Depth from a full-resolution index field: with `ψ = clamp(scale·φ, 0, M−1)`,
    /// `D = Σ_j B[ψ+j]·W(⌊ψ+j⌋) / Σ_j W(⌊ψ+j⌋)` over integer `j ∈ [−4, 4]` whose
    /// position stays inside `[0, M−1]`; `B[·]` is linearly interpolated. A
    /// pixel whose nine weights are all zero falls back to `B[ψ]`.
    pub fn sample_depth(&mut self, phi: Var, weights: Var, bins: &DepthBins, scale: f64) -> Result<Var, NumericsError> {
        let m = bins.len();
        let (h, w) = match *self.shape(phi) {
            [h, w] => (h, w),
            ref s => return Err(NumericsError::Shape(format!("sample_depth: field {s:?}"))),
        };
        if self.shape(weights) != [h, w, m] {
            return Err(NumericsError::Shape(format!(
                "sample_depth: weights {:?}, expected [{h}, {w}, {m}]",
                self.shape(weights)
            )));
        }
        let b = bins.values.clone();
        let pv = self.value(phi).data();
        let wv = self.value(weights).data();
        let out: Vec<f64> = (0..h * w).map(|p| fine_window(&b, pv[p] * scale, &wv[p * m..][..m]).depth).collect();
        self.push("sample_depth", Tensor::from_parts(vec![h, w], out), &[phi, weights], move |ctx| {
            let pv = ctx.inputs[0].data();
            let wv = ctx.inputs[1].data();
            let gy = ctx.grad.data();
            let mut dphi = vec![0.0; h * w];
            let mut dw = vec![0.0; wv.len()];
            let last = (m - 1) as f64;
            for p in 0..h * w {
                let raw = pv[p] * scale;
                let win = fine_window(&b, raw, &wv[p * m..][..m]);
                let inside = (0.0..=last).contains(&raw);
                let g = gy[p];
                if win.weight_sum > 0.0 {
                    let mut dpsi = 0.0;
                    for &(idx, pos) in &win.taps {
                        let wt = wv[p * m + idx];
                        dw[p * m + idx] += g * (interp(&b, pos) - win.depth) / win.weight_sum;
                        dpsi += wt * slope(&b, pos);
                    }
                    if inside {
                        dphi[p] = g * scale * dpsi / win.weight_sum;
                    }
                } else if inside {
                    dphi[p] = g * scale * slope(&b, win.psi);
                }
            }
            vec![
                Some(Tensor::from_parts(vec![h, w], dphi)),
                Some(Tensor::from_parts(ctx.inputs[1].shape().to_vec(), dw)),
            ]
        })
    }
}

struct FineWindow {
    psi: f64,
    depth: f64,
    weight_sum: f64,
    /// `(⌊ψ+j⌋, ψ+j)` for every in-range tap.
    taps: Vec<(usize, f64)>,
}

fn interp(b: &[f64], x: f64) -> f64 {
    let i0 = (x.floor() as usize).min(b.len() - 2);
    let f = x - i0 as f64;
    (1.0 - f) * b[i0] + f * b[i0 + 1]
}

fn slope(b: &[f64], x: f64) -> f64 {
    let i0 = (x.floor() as usize).min(b.len() - 2);
    b[i0 + 1] - b[i0]
}

fn fine_window(b: &[f64], raw: f64, w: &[f64]) -> FineWindow {
    let last = (b.len() - 1) as f64;
    let psi = raw.clamp(0.0, last);
    let mut num = 0.0;
    let mut den = 0.0;
    let mut taps = Vec::with_capacity(2 * FINE_RADIUS as usize + 1);
    for j in -FINE_RADIUS..=FINE_RADIUS {
        let x = psi + j as f64;
        if !(0.0..=last).contains(&x) {
            continue;
        }
        let idx = x.floor() as usize;
        num += w[idx] * interp(b, x);
        den += w[idx];
        taps.push((idx, x));
    }
    let depth = if den > 0.0 { num / den } else { interp(b, psi) };
    FineWindow { psi, depth, weight_sum: den, taps }
}

/// Convolutional GRU: `z, r = σ(conv[h, x])`, `q = tanh(conv[r⊙h, x])`,
/// `h' = (1−z)⊙h + z⊙q`.
#[derive(Clone, Debug)]
pub struct ConvGru {
    z: Conv,
    r: Conv,
    q: Conv,
}

impl ConvGru {
    pub fn new(name: &str, hidden: usize, input: usize) -> Self {
        Self {
            z: Conv::new(format!("{name}.z"), 3, hidden + input, hidden, 1),
            r: Conv::new(format!("{name}.r"), 3, hidden + input, hidden, 1),
            q: Conv::new(format!("{name}.q"), 3, hidden + input, hidden, 1),
        }
    }

    pub fn declare(&self, store: &mut ParamStore) {
        self.z.declare(store);
        self.r.declare(store);
        self.q.declare(store);
    }

    pub fn step(&self, cx: &mut Cx, h: Var, x: Var) -> Result<Var> {
        let hx = cx.g.concat_lastdim(&[h, x])?;
        let z = self.z.forward(cx, hx)?;
        let z = cx.g.sigmoid(z)?;
        let r = self.r.forward(cx, hx)?;
        let r = cx.g.sigmoid(r)?;
        let rh = cx.g.mul(r, h)?;
        let rhx = cx.g.concat_lastdim(&[rh, x])?;
        let q = self.q.forward(cx, rhx)?;
        let q = cx.g.tanh(q)?;
        let keep = cx.g.scale(z, -1.0)?;
        let keep = cx.g.add_scalar(keep, 1.0)?;
        let a = cx.g.mul(keep, h)?;
        let b = cx.g.mul(z, q)?;
        Ok(cx.g.add(a, b)?)
    }
}

/// Hidden states at 1/4, 1/8 and 1/16 resolution.
#[derive(Clone, Copy, Debug)]
pub struct GruState {
    pub hidden: [Var; 3],
}

#[derive(Clone, Debug)]
pub struct UpdateBlock {
    grus: [ConvGru; 3],
    delta: [Conv; 2],
    mask0: [Conv; 2],
    mask1: [Conv; 3],
    pub hidden: usize,
    pub lookup_channels: usize,
    pub coarse_bins: usize,
    pub fine_bins: usize,
}

impl UpdateBlock {
    pub fn new(hidden: usize, lookup_channels: usize, coarse_bins: usize, fine_bins: usize) -> Self {
        let subs = UPSAMPLE * UPSAMPLE;
        Self {
            grus: [
                ConvGru::new("update.gru4", hidden, hidden + 1 + lookup_channels + hidden),
                ConvGru::new("update.gru8", hidden, 3 * hidden),
                ConvGru::new("update.gru16", hidden, 2 * hidden),
            ],
            delta: [
                Conv::new("update.delta0", 3, hidden, hidden, 1),
                Conv::new("update.delta1", 3, hidden, 1, 1).zeroed(),
            ],
            mask0: [
                Conv::new("update.mask0a", 3, hidden, hidden, 1),
                Conv::new("update.mask0b", 1, hidden, subs * NEIGHBOURS, 1),
            ],
            mask1: [
                Conv::new("update.mask1a", 3, hidden, hidden, 1),
                Conv::new("update.mask1b", 3, hidden, hidden, 1),
                Conv::new("update.mask1c", 1, hidden, fine_bins, 1),
            ],
            hidden,
            lookup_channels,
            coarse_bins,
            fine_bins,
        }
    }

    pub fn declare(&self, store: &mut ParamStore) {
        for g in &self.grus {
            g.declare(store);
        }
        for c in self.delta.iter().chain(&self.mask0).chain(&self.mask1) {
            c.declare(store);
        }
    }

    /// One coarse-to-fine GRU pass. Returns the new state and the residual
    /// index field `δφ` (`H/4 × W/4`).
    pub fn step(
        &self,
        cx: &mut Cx,
        state: &GruState,
        ctx: &ContextFeatures,
        phi: Var,
        looked: Var,
    ) -> Result<(GruState, Var)> {
        let [h4, h8, h16] = state.hidden;
        let (rows, cols) = match *cx.g.shape(phi) {
            [r, c] => (r, c),
            ref s => return Err(invalid(format!("index field must be H×W, got {s:?}"))),
        };
        let p8 = cx.g.avg_pool2(h8)?;
        let x16 = cx.g.concat_lastdim(&[ctx.context[2], p8])?;
        let n16 = self.grus[2].step(cx, h16, x16)?;

        let p4 = cx.g.avg_pool2(h4)?;
        let (r8, c8) = (cx.g.shape(h8)[0], cx.g.shape(h8)[1]);
        let u16 = cx.g.resize_bilinear(n16, r8, c8)?;
        let x8 = cx.g.concat_lastdim(&[ctx.context[1], p4, u16])?;
        let n8 = self.grus[1].step(cx, h8, x8)?;

        let u8 = cx.g.resize_bilinear(n8, rows, cols)?;
        let phi_n = cx.g.scale(phi, 1.0 / (self.coarse_bins - 1) as f64)?;
        let phi_n = cx.g.reshape(phi_n, &[rows, cols, 1])?;
        let x4 = cx.g.concat_lastdim(&[ctx.context[0], phi_n, looked, u8])?;
        let n4 = self.grus[0].step(cx, h4, x4)?;

        let d = self.delta[0].forward(cx, n4)?;
        let d = cx.g.relu(d)?;
        let d = self.delta[1].forward(cx, d)?;
        let delta = cx.g.reshape(d, &[rows, cols])?;
        Ok((GruState { hidden: [n4, n8, n16] }, delta))
    }

    /// Convex-combination weights `[H/4, W/4, 16, 9]`, softmax-normalized over
    /// the neighbour axis.
    pub fn upsample_weights(&self, cx: &mut Cx, h4: Var) -> Result<Var> {
        let (rows, cols) = (cx.g.shape(h4)[0], cx.g.shape(h4)[1]);
        let m = self.mask0[0].forward(cx, h4)?;
        let m = cx.g.relu(m)?;
        let m = self.mask0[1].forward(cx, m)?;
        let m = cx.g.reshape(m, &[rows, cols, UPSAMPLE * UPSAMPLE, NEIGHBOURS])?;
        Ok(cx.g.softmax_lastdim(m)?)
    }

    /// Nonnegative fine-bin weights, predicted at 1/4 resolution and resized
    /// bilinearly to `height × width × M1`.
    pub fn fine_weights(&self, cx: &mut Cx, h4: Var, height: usize, width: usize) -> Result<Var> {
        let m = self.mask1[0].forward(cx, h4)?;
        let m = cx.g.relu(m)?;
        let m = self.mask1[1].forward(cx, m)?;
        let m = cx.g.relu(m)?;
        let m = self.mask1[2].forward(cx, m)?;
        let m = cx.g.sigmoid(m)?;
        Ok(cx.g.resize_bilinear(m, height, width)?)
    }

    /// Coarse index field → full-resolution depth.
    pub fn decode(&self, cx: &mut Cx, h4: Var, phi: Var, fine: &DepthBins) -> Result<(Var, Var)> {
        let w0 = self.upsample_weights(cx, h4)?;
        let up = cx.g.convex_upsample(phi, w0, UPSAMPLE)?;
        let (height, width) = (cx.g.shape(up)[0], cx.g.shape(up)[1]);
        let w1 = self.fine_weights(cx, h4, height, width)?;
        let scale = self.fine_bins as f64 / self.coarse_bins as f64;
        let depth = cx.g.sample_depth(up, w1, fine, scale)?;
        Ok((depth, up))
    }
}
