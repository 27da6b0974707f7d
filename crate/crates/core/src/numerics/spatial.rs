//! Spatial primitives on channels-last `H × W × C` maps.

use super::{gemm, Graph, NumericsError, Tensor, Var};

type Res = Result<Var, NumericsError>;

fn hwc(g: &Graph, op: &str, x: Var) -> Result<(usize, usize, usize), NumericsError> {
    match *g.shape(x) {
        [h, w, c] => Ok((h, w, c)),
        ref s => Err(NumericsError::Shape(format!("{op}: expected H×W×C, got {s:?}"))),
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    h: usize,
    w: usize,
    ci: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.kh * self.kw * self.ci
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let k = g.patch();
    let mut cols = vec![0.0; g.ho * g.wo * k];
    for oy in 0..g.ho {
        for ox in 0..g.wo {
            let row = &mut cols[(oy * g.wo + ox) * k..][..k];
            for ky in 0..g.kh {
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                for kx in 0..g.kw {
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    if ix < 0 || ix >= g.w as isize {
                        continue;
                    }
                    let src = &x[(iy as usize * g.w + ix as usize) * g.ci..][..g.ci];
                    row[(ky * g.kw + kx) * g.ci..][..g.ci].copy_from_slice(src);
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], g: &ConvGeom) -> Vec<f64> {
    let k = g.patch();
    let mut x = vec![0.0; g.h * g.w * g.ci];
    for oy in 0..g.ho {
        for ox in 0..g.wo {
            let row = &cols[(oy * g.wo + ox) * k..][..k];
            for ky in 0..g.kh {
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                for kx in 0..g.kw {
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    if ix < 0 || ix >= g.w as isize {
                        continue;
                    }
                    let dst = &mut x[(iy as usize * g.w + ix as usize) * g.ci..][..g.ci];
                    for (d, s) in dst.iter_mut().zip(&row[(ky * g.kw + kx) * g.ci..][..g.ci]) {
                        *d += s;
                    }
                }
            }
        }
    }
    x
}

/// Bilinear resampling taps along one axis (half-pixel centers, edge clamped).
fn resize_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (s.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

fn reflect(i: isize, n: usize) -> usize {
    if i < 0 {
        (-i) as usize
    } else if i as usize >= n {
        2 * n - 2 - i as usize
    } else {
        i as usize
    }
}

impl Graph {
    /// 2-D convolution. `weight` is `[kh, kw, C_in, C_out]`, `bias` is `[C_out]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Res {
        let (h, w, ci) = hwc(self, "conv2d", x)?;
        let (kh, kw, co) = match *self.shape(weight) {
            [kh, kw, wci, co] if wci == ci => (kh, kw, co),
            ref s => {
                return Err(NumericsError::Shape(format!(
                    "conv2d: weight {s:?} incompatible with {ci} input channels"
                )))
            }
        };
        if stride == 0 || h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(NumericsError::Shape("conv2d: kernel larger than padded input".into()));
        }
        let geom = ConvGeom {
            h,
            w,
            ci,
            kh,
            kw,
            stride,
            pad,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (w + 2 * pad - kw) / stride + 1,
        };
        let rows = geom.ho * geom.wo;
        let k = geom.patch();
        let mut out = vec![0.0; rows * co];
        {
            let xv = self.value(x).data();
            let cols;
            let a = if geom.is_pointwise() {
                xv
            } else {
                cols = im2col(xv, &geom);
                &cols[..]
            };
            gemm::matmul(rows, k, co, a, false, self.value(weight).data(), false, &mut out, 0.0);
        }
        let mut value = Tensor::from_parts(vec![geom.ho, geom.wo, co], out);
        let mut parents = vec![x, weight];
        if let Some(b) = bias {
            if self.shape(b) != [co] {
                return Err(NumericsError::Shape("conv2d: bias length".into()));
            }
            let bv = self.value(b).data();
            for row in value.data_mut().chunks_mut(co) {
                for (v, bb) in row.iter_mut().zip(bv) {
                    *v += bb;
                }
            }
            parents.push(b);
        }
        self.push("conv2d", value, &parents, move |c| {
            let gy = c.grad.data();
            let xv = c.inputs[0].data();
            let wv = c.inputs[1].data();
            let mut res = Vec::with_capacity(3);
            let cols_owned;
            let cols: &[f64] = if geom.is_pointwise() {
                xv
            } else if c.needs[1] {
                cols_owned = im2col(xv, &geom);
                &cols_owned
            } else {
                &[]
            };
            res.push(c.needs[0].then(|| {
                let mut dcols = vec![0.0; rows * k];
                gemm::matmul(rows, co, k, gy, false, wv, true, &mut dcols, 0.0);
                let dx = if geom.is_pointwise() { dcols } else { col2im(&dcols, &geom) };
                Tensor::from_parts(c.inputs[0].shape().to_vec(), dx)
            }));
            res.push(c.needs[1].then(|| {
                let mut dw = vec![0.0; k * co];
                gemm::matmul(k, rows, co, cols, true, gy, false, &mut dw, 0.0);
                Tensor::from_parts(c.inputs[1].shape().to_vec(), dw)
            }));
            if c.inputs.len() == 3 {
                res.push(c.needs[2].then(|| {
                    let mut db = vec![0.0; co];
                    for row in gy.chunks(co) {
                        for (d, g) in db.iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                    Tensor::from_parts(vec![co], db)
                }));
            }
            res
        })
    }

    /// Batch normalization with per-batch moments over all leading dimensions.
    /// Returns the output together with the batch mean and biased variance.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, Vec<f64>, Vec<f64>), NumericsError> {
        let c = self.value(x).last_dim();
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(NumericsError::Shape("batch_norm: affine parameter length".into()));
        }
        let xv = self.value(x);
        let n = xv.rows() as f64;
        let mut mean = vec![0.0; c];
        for row in xv.data().chunks(c) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; c];
        for row in xv.data().chunks(c) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(c) {
            for j in 0..c {
                row[j] = (row[j] - mean[j]) * inv_std[j] * gv[j] + bv[j];
            }
        }
        let value = Tensor::from_parts(xv.shape().to_vec(), out);
        let (m2, s2) = (mean.clone(), inv_std.clone());
        let y = self.push("batch_norm", value, &[x, gamma, beta], move |ctx| {
            let xv = ctx.inputs[0].data();
            let gv = ctx.inputs[1].data();
            let gy = ctx.grad.data();
            let mut dgamma = vec![0.0; c];
            let mut dbeta = vec![0.0; c];
            for (xr, gr) in xv.chunks(c).zip(gy.chunks(c)) {
                for j in 0..c {
                    let xhat = (xr[j] - m2[j]) * s2[j];
                    dbeta[j] += gr[j];
                    dgamma[j] += gr[j] * xhat;
                }
            }
            let dx = ctx.needs[0].then(|| {
                let mut dx = vec![0.0; xv.len()];
                for ((dr, xr), gr) in dx.chunks_mut(c).zip(xv.chunks(c)).zip(gy.chunks(c)) {
                    for j in 0..c {
                        let xhat = (xr[j] - m2[j]) * s2[j];
                        dr[j] = gv[j] * s2[j] * (gr[j] - dbeta[j] / n - xhat * dgamma[j] / n);
                    }
                }
                Tensor::from_parts(ctx.inputs[0].shape().to_vec(), dx)
            });
            vec![
                dx,
                Some(Tensor::from_parts(vec![c], dgamma)),
                Some(Tensor::from_parts(vec![c], dbeta)),
            ]
        })?;
        Ok((y, mean, var))
    }

    /// Batch normalization with frozen running statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Res {
        let c = self.value(x).last_dim();
        if self.shape(gamma) != [c] || running_mean.len() != c || running_var.len() != c {
            return Err(NumericsError::Shape("batch_norm: statistics length".into()));
        }
        let mean = running_mean.to_vec();
        let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(c) {
            for j in 0..c {
                row[j] = (row[j] - mean[j]) * inv_std[j] * gv[j] + bv[j];
            }
        }
        let value = Tensor::from_parts(self.shape(x).to_vec(), out);
        self.push("batch_norm_eval", value, &[x, gamma, beta], move |ctx| {
            let xv = ctx.inputs[0].data();
            let gv = ctx.inputs[1].data();
            let gy = ctx.grad.data();
            let mut dgamma = vec![0.0; c];
            let mut dbeta = vec![0.0; c];
            let mut dx = vec![0.0; xv.len()];
            for ((dr, xr), gr) in dx.chunks_mut(c).zip(xv.chunks(c)).zip(gy.chunks(c)) {
                for j in 0..c {
                    dr[j] = gr[j] * gv[j] * inv_std[j];
                    dgamma[j] += gr[j] * (xr[j] - mean[j]) * inv_std[j];
                    dbeta[j] += gr[j];
                }
            }
            vec![
                Some(Tensor::from_parts(ctx.inputs[0].shape().to_vec(), dx)),
                Some(Tensor::from_parts(vec![c], dgamma)),
                Some(Tensor::from_parts(vec![c], dbeta)),
            ]
        })
    }

    /// 2×2 average pooling with stride 2 (spatial downsample by 2).
    pub fn avg_pool2(&mut self, x: Var) -> Res {
        let (h, w, c) = hwc(self, "avg_pool2", x)?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(NumericsError::Shape(format!("avg_pool2: odd size {h}×{w}")));
        }
        let (ho, wo) = (h / 2, w / 2);
        let xv = self.value(x).data();
        let mut out = vec![0.0; ho * wo * c];
        for y in 0..ho {
            for xx in 0..wo {
                let o = &mut out[(y * wo + xx) * c..][..c];
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let s = &xv[((2 * y + dy) * w + 2 * xx + dx) * c..][..c];
                    for (a, b) in o.iter_mut().zip(s) {
                        *a += 0.25 * b;
                    }
                }
            }
        }
        self.push("avg_pool2", Tensor::from_parts(vec![ho, wo, c], out), &[x], move |ctx| {
            let gy = ctx.grad.data();
            let mut dx = vec![0.0; h * w * c];
            for y in 0..ho {
                for xx in 0..wo {
                    let g = &gy[(y * wo + xx) * c..][..c];
                    for (dy, ddx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let d = &mut dx[((2 * y + dy) * w + 2 * xx + ddx) * c..][..c];
                        for (a, b) in d.iter_mut().zip(g) {
                            *a += 0.25 * b;
                        }
                    }
                }
            }
            vec![Some(Tensor::from_parts(vec![h, w, c], dx))]
        })
    }

    /// Mean of channel pairs `(2m, 2m+1)` along the last (depth) dimension.
    pub fn avg_pool_depth(&mut self, x: Var) -> Res {
        let xv = self.value(x);
        let m = xv.last_dim();
        if m % 2 != 0 {
            return Err(NumericsError::Shape(format!("avg_pool_depth: odd depth {m}")));
        }
        let half = m / 2;
        let data: Vec<f64> =
            xv.data().chunks(2).map(|p| 0.5 * (p[0] + p[1])).collect();
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = half;
        self.push("avg_pool_depth", Tensor::from_parts(shape, data), &[x], |ctx| {
            let d: Vec<f64> = ctx.grad.data().iter().flat_map(|&g| [0.5 * g, 0.5 * g]).collect();
            vec![Some(Tensor::from_parts(ctx.inputs[0].shape().to_vec(), d))]
        })
    }

    /// Bilinear resize of an `H × W × C` map with half-pixel centers.
    pub fn resize_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Res {
        let (h, w, c) = hwc(self, "resize_bilinear", x)?;
        if out_h == 0 || out_w == 0 {
            return Err(NumericsError::Shape("resize to empty size".into()));
        }
        let ty = resize_taps(h, out_h);
        let tx = resize_taps(w, out_w);
        let xv = self.value(x).data();
        let mut out = vec![0.0; out_h * out_w * c];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let o = &mut out[(oy * out_w + ox) * c..][..c];
                let taps = [
                    (y0, x0, (1.0 - fy) * (1.0 - fx)),
                    (y0, x1, (1.0 - fy) * fx),
                    (y1, x0, fy * (1.0 - fx)),
                    (y1, x1, fy * fx),
                ];
                for (yy, xx, wgt) in taps {
                    let s = &xv[(yy * w + xx) * c..][..c];
                    for (a, b) in o.iter_mut().zip(s) {
                        *a += wgt * b;
                    }
                }
            }
        }
        let value = Tensor::from_parts(vec![out_h, out_w, c], out);
        self.push("resize_bilinear", value, &[x], move |ctx| {
            let gy = ctx.grad.data();
            let mut dx = vec![0.0; h * w * c];
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let g = &gy[(oy * out_w + ox) * c..][..c];
                    let taps = [
                        (y0, x0, (1.0 - fy) * (1.0 - fx)),
                        (y0, x1, (1.0 - fy) * fx),
                        (y1, x0, fy * (1.0 - fx)),
                        (y1, x1, fy * fx),
                    ];
                    for (yy, xx, wgt) in taps {
                        let d = &mut dx[(yy * w + xx) * c..][..c];
                        for (a, b) in d.iter_mut().zip(g) {
                            *a += wgt * b;
                        }
                    }
                }
            }
            vec![Some(Tensor::from_parts(vec![h, w, c], dx))]
        })
    }

    /// Spatial upsample by an integer factor (bilinear).
    pub fn upsample(&mut self, x: Var, factor: usize) -> Res {
        let (h, w, _) = hwc(self, "upsample", x)?;
        self.resize_bilinear(x, h * factor, w * factor)
    }

    /// Spatial downsample by 2 or 4 via repeated 2×2 average pooling.
    pub fn downsample(&mut self, x: Var, factor: usize) -> Res {
        match factor {
            1 => Ok(x),
            2 => self.avg_pool2(x),
            4 => {
                let y = self.avg_pool2(x)?;
                self.avg_pool2(y)
            }
            f => Err(NumericsError::Shape(format!("downsample factor {f} unsupported"))),
        }
    }

    /// 3×3 mean filter with reflection padding (stride 1).
    pub fn box3_reflect(&mut self, x: Var) -> Res {
        let (h, w, c) = hwc(self, "box3_reflect", x)?;
        if h < 2 || w < 2 {
            return Err(NumericsError::Shape("box3_reflect needs at least 2×2".into()));
        }
        let xv = self.value(x).data();
        let mut out = vec![0.0; h * w * c];
        for y in 0..h {
            for xx in 0..w {
                let o = &mut out[(y * w + xx) * c..][..c];
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        let sy = reflect(y as isize + dy, h);
                        let sx = reflect(xx as isize + dx, w);
                        let s = &xv[(sy * w + sx) * c..][..c];
                        for (a, b) in o.iter_mut().zip(s) {
                            *a += b / 9.0;
                        }
                    }
                }
            }
        }
        self.push("box3_reflect", Tensor::from_parts(vec![h, w, c], out), &[x], move |ctx| {
            let gy = ctx.grad.data();
            let mut d = vec![0.0; h * w * c];
            for y in 0..h {
                for xx in 0..w {
                    let g = &gy[(y * w + xx) * c..][..c];
                    for dy in -1isize..=1 {
                        for dx in -1isize..=1 {
                            let sy = reflect(y as isize + dy, h);
                            let sx = reflect(xx as isize + dx, w);
                            let t = &mut d[(sy * w + sx) * c..][..c];
                            for (a, b) in t.iter_mut().zip(g) {
                                *a += b / 9.0;
                            }
                        }
                    }
                }
            }
            vec![Some(Tensor::from_parts(vec![h, w, c], d))]
        })
    }

    /// Mean over all spatial positions: `H × W × C → [C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Res {
        let (h, w, c) = hwc(self, "global_avg_pool", x)?;
        let n = (h * w) as f64;
        let mut out = vec![0.0; c];
        for row in self.value(x).data().chunks(c) {
            for (a, b) in out.iter_mut().zip(row) {
                *a += b / n;
            }
        }
        self.push("global_avg_pool", Tensor::from_parts(vec![c], out), &[x], move |ctx| {
            let g = ctx.grad.data();
            let d: Vec<f64> = (0..h * w).flat_map(|_| g.iter().map(|v| v / n)).collect();
            vec![Some(Tensor::from_parts(vec![h, w, c], d))]
        })
    }
}
