//! Elementwise, reduction, shape and dense linear-algebra primitives.

use super::{gemm, BackCtx, Graph, NumericsError, Tensor, Var};

type Res = Result<Var, NumericsError>;

fn same_shape(g: &Graph, op: &str, a: Var, b: Var) -> Result<(), NumericsError> {
    if g.shape(a) != g.shape(b) {
        return Err(NumericsError::Shape(format!(
            "{op}: shapes {:?} and {:?} differ",
            g.shape(a),
            g.shape(b)
        )));
    }
    Ok(())
}

impl Graph {
    fn unary(
        &mut self,
        op: &'static str,
        x: Var,
        f: impl Fn(f64) -> f64,
        // derivative expressed through (input, output)
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Res {
        let value = self.value(x).map(f);
        self.push(op, value, &[x], move |c: &BackCtx| {
            let data: Vec<f64> = c
                .grad
                .data()
                .iter()
                .zip(c.inputs[0].data())
                .zip(c.output.data())
                .map(|((&g, &xi), &yi)| g * df(xi, yi))
                .collect();
            vec![Some(Tensor::from_parts(c.grad.shape().to_vec(), data))]
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Res {
        same_shape(self, "add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push("add", value, &[a, b], |c| vec![Some(c.grad.clone()), Some(c.grad.clone())])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Res {
        same_shape(self, "sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push("sub", value, &[a, b], |c| vec![Some(c.grad.clone()), Some(c.grad.map(|g| -g))])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Res {
        same_shape(self, "mul", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push("mul", value, &[a, b], |c| {
            vec![
                c.needs[0].then(|| c.grad.zip_map(c.inputs[1], |g, y| g * y)),
                c.needs[1].then(|| c.grad.zip_map(c.inputs[0], |g, x| g * x)),
            ]
        })
    }

    pub fn div(&mut self, a: Var, b: Var) -> Res {
        same_shape(self, "div", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x / y);
        self.push("div", value, &[a, b], |c| {
            let da = c.needs[0].then(|| c.grad.zip_map(c.inputs[1], |g, y| g / y));
            let db = c.needs[1].then(|| {
                let t = c.grad.zip_map(c.output, |g, q| g * q);
                t.zip_map(c.inputs[1], |t, y| -t / y)
            });
            vec![da, db]
        })
    }

    /// `x * factor` for a constant factor.
    pub fn scale(&mut self, x: Var, factor: f64) -> Res {
        self.unary("scale", x, |v| v * factor, move |_, _| factor)
    }

    pub fn add_scalar(&mut self, x: Var, offset: f64) -> Res {
        self.unary("add_scalar", x, |v| v + offset, |_, _| 1.0)
    }

    pub fn relu(&mut self, x: Var) -> Res {
        self.unary("relu", x, |v| v.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn tanh(&mut self, x: Var) -> Res {
        self.unary("tanh", x, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(&mut self, x: Var) -> Res {
        self.unary("sigmoid", x, |v| 1.0 / (1.0 + (-v).exp()), |_, y| y * (1.0 - y))
    }

    pub fn exp(&mut self, x: Var) -> Res {
        self.unary("exp", x, f64::exp, |_, y| y)
    }

    pub fn abs(&mut self, x: Var) -> Res {
        self.unary("abs", x, f64::abs, |x, _| x.signum())
    }

    pub fn square(&mut self, x: Var) -> Res {
        self.unary("square", x, |v| v * v, |x, _| 2.0 * x)
    }

    pub fn reciprocal(&mut self, x: Var) -> Res {
        self.unary("reciprocal", x, |v| 1.0 / v, |_, y| -y * y)
    }

    /// Hard clamp; the gradient is zero where the input lies outside `[lo, hi]`.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Res {
        self.unary(
            "clamp",
            x,
            move |v| v.clamp(lo, hi),
            move |x, _| if (lo..=hi).contains(&x) { 1.0 } else { 0.0 },
        )
    }

    /// Adds a per-channel bias `b: [C]` to `x: [.., C]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Res {
        let c = self.value(x).last_dim();
        if self.shape(b) != [c] {
            return Err(NumericsError::Shape(format!(
                "add_bias: bias {:?} vs channels {c}",
                self.shape(b)
            )));
        }
        let bias = self.value(b).data().to_vec();
        let mut value = self.value(x).clone();
        for row in value.data_mut().chunks_mut(c) {
            for (v, bb) in row.iter_mut().zip(&bias) {
                *v += bb;
            }
        }
        self.push("add_bias", value, &[x, b], move |ctx| {
            let db = ctx.needs[1].then(|| {
                let mut acc = vec![0.0; c];
                for row in ctx.grad.data().chunks(c) {
                    for (a, g) in acc.iter_mut().zip(row) {
                        *a += g;
                    }
                }
                Tensor::from_parts(vec![c], acc)
            });
            vec![Some(ctx.grad.clone()), db]
        })
    }

    /// Multiplies every element of `x` by the single value held in `s: [1]`.
    pub fn mul_scalar_var(&mut self, x: Var, s: Var) -> Res {
        if self.value(s).len() != 1 {
            return Err(NumericsError::Shape("mul_scalar_var: scalar must hold one value".into()));
        }
        let k = self.value(s).data()[0];
        let value = self.value(x).map(|v| v * k);
        self.push("mul_scalar_var", value, &[x, s], |c| {
            let k = c.inputs[1].data()[0];
            let dx = c.needs[0].then(|| c.grad.map(|g| g * k));
            let ds = c.needs[1].then(|| {
                let d: f64 = c.grad.data().iter().zip(c.inputs[0].data()).map(|(g, x)| g * x).sum();
                Tensor::from_parts(c.inputs[1].shape().to_vec(), vec![d])
            });
            vec![dx, ds]
        })
    }

    pub fn sum(&mut self, x: Var) -> Res {
        let value = Tensor::scalar(self.value(x).sum());
        self.push("sum", value, &[x], |c| {
            let g = c.grad.data()[0];
            vec![Some(Tensor::full(c.inputs[0].shape(), g))]
        })
    }

    pub fn mean(&mut self, x: Var) -> Res {
        let n = self.value(x).len().max(1) as f64;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }

    /// `Σ x ⊙ w` for a constant weight tensor of the same shape.
    pub fn weighted_sum(&mut self, x: Var, weights: &Tensor) -> Res {
        if self.shape(x) != weights.shape() {
            return Err(NumericsError::Shape("weighted_sum: shape mismatch".into()));
        }
        let s: f64 = self.value(x).data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
        let w = weights.clone();
        self.push("weighted_sum", Tensor::scalar(s), &[x], move |c| {
            let g = c.grad.data()[0];
            vec![Some(w.map(|v| v * g))]
        })
    }

    /// Mean over entries whose weight is nonzero; `weights` is a constant 0/1
    /// tensor of the same shape. Returns 0 when nothing is selected.
    pub fn masked_mean(&mut self, x: Var, weights: &Tensor) -> Res {
        let count = weights.data().iter().filter(|&&w| w != 0.0).count();
        if count == 0 {
            let zero = Tensor::scalar(0.0);
            return self.push("masked_mean", zero, &[x], |c| {
                vec![Some(Tensor::zeros(c.inputs[0].shape()))]
            });
        }
        let s = self.weighted_sum(x, weights)?;
        self.scale(s, 1.0 / count as f64)
    }

    /// Sums over the last dimension, dropping it.
    pub fn sum_lastdim(&mut self, x: Var) -> Res {
        let xv = self.value(x);
        let c = xv.last_dim();
        let mut shape = xv.shape().to_vec();
        shape.pop();
        if shape.is_empty() {
            shape.push(1);
        }
        let data: Vec<f64> = xv.data().chunks(c).map(|r| r.iter().sum()).collect();
        self.push("sum_lastdim", Tensor::from_parts(shape, data), &[x], move |ctx| {
            let mut d = Vec::with_capacity(ctx.inputs[0].len());
            for &g in ctx.grad.data() {
                d.extend(std::iter::repeat_n(g, c));
            }
            vec![Some(Tensor::from_parts(ctx.inputs[0].shape().to_vec(), d))]
        })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Res {
        let value = self.value(x).clone().reshape(shape)?;
        self.push("reshape", value, &[x], |c| {
            vec![Some(Tensor::from_parts(c.inputs[0].shape().to_vec(), c.grad.data().to_vec()))]
        })
    }

    /// Concatenates along the last dimension; all leading dimensions must agree.
    pub fn concat_lastdim(&mut self, parts: &[Var]) -> Res {
        if parts.is_empty() {
            return Err(NumericsError::Shape("concat of nothing".into()));
        }
        let lead = self.shape(parts[0])[..self.shape(parts[0]).len() - 1].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s[..s.len() - 1] != lead[..] {
                return Err(NumericsError::Shape(format!(
                    "concat: leading dims {:?} vs {:?}",
                    &s[..s.len() - 1],
                    lead
                )));
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.clone();
        shape.push(total);
        self.push("concat", Tensor::from_parts(shape, data), parts, move |c| {
            let mut outs: Vec<Vec<f64>> = widths.iter().map(|w| Vec::with_capacity(rows * w)).collect();
            for row in c.grad.data().chunks(total) {
                let mut o = 0;
                for (out, &w) in outs.iter_mut().zip(&widths) {
                    out.extend_from_slice(&row[o..o + w]);
                    o += w;
                }
            }
            outs.into_iter()
                .zip(&c.inputs)
                .map(|(d, inp)| Some(Tensor::from_parts(inp.shape().to_vec(), d)))
                .collect()
        })
    }

    /// Channels `start .. start + len` of the last dimension.
    pub fn narrow_lastdim(&mut self, x: Var, start: usize, len: usize) -> Res {
        let xv = self.value(x);
        let c = xv.last_dim();
        if start + len > c {
            return Err(NumericsError::Shape(format!("narrow {start}+{len} beyond {c}")));
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let data: Vec<f64> =
            xv.data().chunks(c).flat_map(|r| r[start..start + len].iter().copied()).collect();
        self.push("narrow", Tensor::from_parts(shape, data), &[x], move |ctx| {
            let mut d = vec![0.0; ctx.inputs[0].len()];
            for (dst, src) in d.chunks_mut(c).zip(ctx.grad.data().chunks(len)) {
                dst[start..start + len].copy_from_slice(src);
            }
            vec![Some(Tensor::from_parts(ctx.inputs[0].shape().to_vec(), d))]
        })
    }

    pub fn transpose2d(&mut self, x: Var) -> Res {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(NumericsError::Shape("transpose2d needs rank 2".into()));
        }
        let value = transpose(self.value(x), s[0], s[1]);
        self.push("transpose", value, &[x], move |c| vec![Some(transpose(c.grad, s[1], s[0]))])
    }

    /// `[n, k] × [k, m] → [n, m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Res {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(NumericsError::Shape(format!("matmul {:?} x {:?}", sa, sb)));
        }
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; n * m];
        gemm::matmul(n, k, m, self.value(a).data(), false, self.value(b).data(), false, &mut out, 0.0);
        self.push("matmul", Tensor::from_parts(vec![n, m], out), &[a, b], move |c| {
            let da = c.needs[0].then(|| {
                let mut d = vec![0.0; n * k];
                gemm::matmul(n, m, k, c.grad.data(), false, c.inputs[1].data(), true, &mut d, 0.0);
                Tensor::from_parts(vec![n, k], d)
            });
            let db = c.needs[1].then(|| {
                let mut d = vec![0.0; k * m];
                gemm::matmul(k, n, m, c.inputs[0].data(), true, c.grad.data(), false, &mut d, 0.0);
                Tensor::from_parts(vec![k, m], d)
            });
            vec![da, db]
        })
    }

    /// Softmax along the last dimension, stabilized by max subtraction.
    pub fn softmax_lastdim(&mut self, x: Var) -> Res {
        let xv = self.value(x);
        let c = xv.last_dim();
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(c) {
            let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let value = Tensor::from_parts(xv.shape().to_vec(), data);
        self.push("softmax", value, &[x], move |ctx| {
            let mut d = vec![0.0; ctx.output.len()];
            for ((dr, yr), gr) in
                d.chunks_mut(c).zip(ctx.output.data().chunks(c)).zip(ctx.grad.data().chunks(c))
            {
                let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                for ((o, &y), &g) in dr.iter_mut().zip(yr).zip(gr) {
                    *o = y * (g - dot);
                }
            }
            vec![Some(Tensor::from_parts(ctx.output.shape().to_vec(), d))]
        })
    }
}

pub(crate) fn transpose(t: &Tensor, rows: usize, cols: usize) -> Tensor {
    let src = t.data();
    let mut d = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            d[c * rows + r] = src[r * cols + c];
        }
    }
    Tensor::from_parts(vec![cols, rows], d)
}
