//! Differentiable interpolation: 2-D bilinear grid sampling and 1-D linear
//! gathering along the last dimension.

use super::{Graph, NumericsError, Tensor, ValidityMask, Var};

/// Bilinear footprint of a continuous coordinate inside `[0, w-1] × [0, h-1]`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Bilinear {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
    pub fx: f64,
    pub fy: f64,
}

impl Bilinear {
    /// `None` when `(u, v)` lies outside the source domain.
    pub(crate) fn locate(u: f64, v: f64, w: usize, h: usize) -> Option<Self> {
        if !(u.is_finite() && v.is_finite()) {
            return None;
        }
        // Rounding in the projection chain can land a border pixel a few ulps
        // outside the image; such points are snapped onto the border.
        const EDGE_SLACK: f64 = 1e-9;
        let (wm, hm) = ((w - 1) as f64, (h - 1) as f64);
        if u < -EDGE_SLACK || v < -EDGE_SLACK || u > wm + EDGE_SLACK || v > hm + EDGE_SLACK {
            return None;
        }
        let (u, v) = (u.clamp(0.0, wm), v.clamp(0.0, hm));
        let x0 = (u.floor() as usize).min(w.saturating_sub(2));
        let y0 = (v.floor() as usize).min(h.saturating_sub(2));
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        Some(Self { x0, x1, y0, y1, fx: u - x0 as f64, fy: v - y0 as f64 })
    }

    pub(crate) fn weights(&self) -> [(usize, usize, f64); 4] {
        let (fx, fy) = (self.fx, self.fy);
        [
            (self.y0, self.x0, (1.0 - fx) * (1.0 - fy)),
            (self.y0, self.x1, fx * (1.0 - fy)),
            (self.y1, self.x0, (1.0 - fx) * fy),
            (self.y1, self.x1, fx * fy),
        ]
    }
}

fn tap(row: &[f64], i: isize) -> f64 {
    if i >= 0 && (i as usize) < row.len() {
        row[i as usize]
    } else {
        0.0
    }
}

impl Graph {
    /// Samples `src: H × W × C` at continuous pixel coordinates
    /// `grid: H' × W' × 2` (u along width, v along height).
    ///
    /// Locations outside `[0, W-1] × [0, H-1]` produce zeros and a false flag.
    pub fn grid_sample_bilinear(
        &mut self,
        src: Var,
        grid: Var,
    ) -> Result<(Var, ValidityMask), NumericsError> {
        let (h, w, c) = match *self.shape(src) {
            [h, w, c] => (h, w, c),
            ref s => return Err(NumericsError::Shape(format!("grid_sample: src {s:?}"))),
        };
        let (ho, wo) = match *self.shape(grid) {
            [ho, wo, 2] => (ho, wo),
            ref s => {
                return Err(NumericsError::Shape(format!(
                    "grid_sample: grid must be H'×W'×2, got {s:?}"
                )))
            }
        };
        let sv = self.value(src).data();
        let gv = self.value(grid).data();
        let mut out = vec![0.0; ho * wo * c];
        let mut flags = vec![false; ho * wo];
        for p in 0..ho * wo {
            let Some(b) = Bilinear::locate(gv[2 * p], gv[2 * p + 1], w, h) else { continue };
            flags[p] = true;
            let o = &mut out[p * c..][..c];
            for (yy, xx, wt) in b.weights() {
                let s = &sv[(yy * w + xx) * c..][..c];
                for (a, v) in o.iter_mut().zip(s) {
                    *a += wt * v;
                }
            }
        }
        let mask = ValidityMask::new(&[ho, wo], flags);
        let out = self.push("grid_sample_bilinear", Tensor::from_parts(vec![ho, wo, c], out), &[src, grid], move |ctx| {
            let sv = ctx.inputs[0].data();
            let gv = ctx.inputs[1].data();
            let gy = ctx.grad.data();
            let mut dsrc = ctx.needs[0].then(|| vec![0.0; h * w * c]);
            let mut dgrid = ctx.needs[1].then(|| vec![0.0; ho * wo * 2]);
            for p in 0..ho * wo {
                let Some(b) = Bilinear::locate(gv[2 * p], gv[2 * p + 1], w, h) else { continue };
                let g = &gy[p * c..][..c];
                if let Some(ds) = dsrc.as_mut() {
                    for (yy, xx, wt) in b.weights() {
                        let d = &mut ds[(yy * w + xx) * c..][..c];
                        for (a, gg) in d.iter_mut().zip(g) {
                            *a += wt * gg;
                        }
                    }
                }
                if let Some(dg) = dgrid.as_mut() {
                    let at = |yy: usize, xx: usize| &sv[(yy * w + xx) * c..][..c];
                    let (s00, s01, s10, s11) =
                        (at(b.y0, b.x0), at(b.y0, b.x1), at(b.y1, b.x0), at(b.y1, b.x1));
                    let (mut du, mut dv) = (0.0, 0.0);
                    for k in 0..c {
                        du += g[k] * ((1.0 - b.fy) * (s01[k] - s00[k]) + b.fy * (s11[k] - s10[k]));
                        dv += g[k] * ((1.0 - b.fx) * (s10[k] - s00[k]) + b.fx * (s11[k] - s01[k]));
                    }
                    dg[2 * p] = du;
                    dg[2 * p + 1] = dv;
                }
            }
            vec![
                dsrc.map(|d| Tensor::from_parts(vec![h, w, c], d)),
                dgrid.map(|d| Tensor::from_parts(vec![ho, wo, 2], d)),
            ]
        })?;
        Ok((out, mask))
    }

    /// Linear interpolation of `vol: [.., M]` at real positions `pos: [.., K]`
    /// along the last dimension, row by row. Taps outside `[0, M-1]`
    /// contribute zero.
    pub fn gather_linear_lastdim(&mut self, vol: Var, pos: Var) -> Result<Var, NumericsError> {
        let (vv, pv) = (self.value(vol), self.value(pos));
        let (m, k) = (vv.last_dim(), pv.last_dim());
        if vv.rows() != pv.rows() || vv.shape()[..vv.rank() - 1] != pv.shape()[..pv.rank() - 1] {
            return Err(NumericsError::Shape(format!(
                "gather_linear_lastdim: {:?} vs {:?}",
                vv.shape(),
                pv.shape()
            )));
        }
        let mut out = vec![0.0; pv.len()];
        for ((o, vr), pr) in out.chunks_mut(k).zip(vv.data().chunks(m)).zip(pv.data().chunks(k)) {
            for (oj, &x) in o.iter_mut().zip(pr) {
                let i0 = x.floor();
                let f = x - i0;
                let i0 = i0 as isize;
                *oj = (1.0 - f) * tap(vr, i0) + f * tap(vr, i0 + 1);
            }
        }
        let value = Tensor::from_parts(pv.shape().to_vec(), out);
        self.push("gather_linear_lastdim", value, &[vol, pos], move |ctx| {
            let (vv, pv, gy) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad.data());
            let mut dvol = ctx.needs[0].then(|| vec![0.0; vv.len()]);
            let mut dpos = ctx.needs[1].then(|| vec![0.0; pv.len()]);
            let rows = pv.len() / k.max(1);
            for r in 0..rows {
                let vr = &vv[r * m..][..m];
                for j in 0..k {
                    let x = pv[r * k + j];
                    let g = gy[r * k + j];
                    let i0f = x.floor();
                    let f = x - i0f;
                    let i0 = i0f as isize;
                    if let Some(dv) = dvol.as_mut() {
                        if i0 >= 0 && (i0 as usize) < m {
                            dv[r * m + i0 as usize] += (1.0 - f) * g;
                        }
                        if i0 + 1 >= 0 && ((i0 + 1) as usize) < m {
                            dv[r * m + (i0 + 1) as usize] += f * g;
                        }
                    }
                    if let Some(dp) = dpos.as_mut() {
                        dp[r * k + j] = g * (tap(vr, i0 + 1) - tap(vr, i0));
                    }
                }
            }
            vec![
                dvol.map(|d| Tensor::from_parts(ctx.inputs[0].shape().to_vec(), d)),
                dpos.map(|d| Tensor::from_parts(ctx.inputs[1].shape().to_vec(), d)),
            ]
        })
    }
}
