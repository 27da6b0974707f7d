//! Image encoders: the shared multi-scale matching network with its fusion
//! layer, reference-only self-attention, and the context network that seeds
//! the recurrent updater.

use crate::error::{invalid, Result};
use crate::nn::{BatchNorm, Conv, Cx, Init, ParamStore};
use crate::numerics::{Graph, Tensor, Var};

pub const SCALES: [usize; 4] = [2, 4, 8, 16];

/// Feature maps at 1/2, 1/4, 1/8 and 1/16 resolution, `F0` channels each.
#[derive(Clone, Copy, Debug)]
pub struct MultiScaleFeatures {
    pub maps: [Var; 4],
}

/// Hidden-state initializations and per-iteration context for the three
/// recurrent levels (1/4, 1/8, 1/16).
#[derive(Clone, Copy, Debug)]
pub struct ContextFeatures {
    pub hidden: [Var; 3],
    pub context: [Var; 3],
}

fn check_divisible(g: &Graph, image: Var) -> Result<(usize, usize)> {
    match *g.shape(image) {
        [h, w, 3] if h % 16 == 0 && w % 16 == 0 && h > 0 && w > 0 => Ok((h, w)),
        ref s => Err(invalid(format!("encoder input must be H×W×3 with H, W divisible by 16, got {s:?}"))),
    }
}

/// Strided convolutional encoder with a top-down feature-pyramid path.
#[derive(Clone, Debug)]
pub struct FeatureNet {
    down: Vec<Conv>,
    lateral: Vec<Conv>,
    smooth: Vec<Conv>,
}

impl FeatureNet {
    pub fn new(f0: usize) -> Self {
        let down = vec![
            Conv::new("fnet.down0", 3, 3, 16, 2),
            Conv::new("fnet.down1", 3, 16, 24, 1),
            Conv::new("fnet.down2", 3, 24, 32, 2),
            Conv::new("fnet.down3", 3, 32, 48, 2),
            Conv::new("fnet.down4", 3, 48, 64, 2),
            Conv::new("fnet.down5", 3, 64, 64, 1),
        ];
        let widths = [24, 32, 48, 64];
        let lateral = widths.iter().zip(SCALES).map(|(&c, s)| Conv::new(format!("fnet.lateral{s}"), 1, c, f0, 1)).collect();
        let smooth = SCALES.iter().map(|s| Conv::new(format!("fnet.smooth{s}"), 3, f0, f0, 1)).collect();
        Self { down, lateral, smooth }
    }

    pub fn declare(&self, store: &mut ParamStore) {
        for c in self.down.iter().chain(&self.lateral).chain(&self.smooth) {
            c.declare(store);
        }
    }

    pub fn forward(&self, cx: &mut Cx, image: Var) -> Result<MultiScaleFeatures> {
        check_divisible(cx.g, image)?;
        let mut x = image;
        let mut taps = Vec::with_capacity(4);
        for (i, conv) in self.down.iter().enumerate() {
            let y = conv.forward(cx, x)?;
            x = cx.g.relu(y)?;
            if matches!(i, 1 | 2 | 3 | 5) {
                taps.push(x);
            }
        }
        let mut top: Option<Var> = None;
        let mut maps = [x; 4];
        for level in (0..4).rev() {
            let mut l = self.lateral[level].forward(cx, taps[level])?;
            if let Some(t) = top {
                let up = cx.g.upsample(t, 2)?;
                l = cx.g.add(l, up)?;
            }
            top = Some(l);
            maps[level] = self.smooth[level].forward(cx, l)?;
        }
        Ok(MultiScaleFeatures { maps })
    }
}

/// Brings the four scales to 1/4 resolution, concatenates them and mixes with
/// Conv3×3 → batch-norm → ReLU → Conv1×1.
#[derive(Clone, Debug)]
pub struct Fusion {
    conv3: Conv,
    bn: BatchNorm,
    conv1: Conv,
}

impl Fusion {
    pub fn new(f0: usize, f1: usize) -> Self {
        Self {
            conv3: Conv::new("fusion.conv3", 3, 4 * f0, f1, 1).without_bias(),
            bn: BatchNorm::new("fusion.bn", f1),
            conv1: Conv::new("fusion.conv1", 1, f1, f1, 1),
        }
    }

    pub fn declare(&self, store: &mut ParamStore) {
        self.conv3.declare(store);
        self.bn.declare(store);
        self.conv1.declare(store);
    }

    pub fn forward(&self, cx: &mut Cx, ms: &MultiScaleFeatures) -> Result<Var> {
        Ok(self.forward_views(cx, std::slice::from_ref(ms))?[0])
    }

    /// Fuses several views at once. The views form one normalization batch,
    /// so batch-norm statistics are shared across them.
    pub fn forward_views(&self, cx: &mut Cx, views: &[MultiScaleFeatures]) -> Result<Vec<Var>> {
        let mut mixed = Vec::with_capacity(views.len());
        for ms in views {
            let [f2, f4, f8, f16] = ms.maps;
            let a = cx.g.downsample(f2, 2)?;
            let c = cx.g.upsample(f8, 2)?;
            let d = cx.g.upsample(f16, 4)?;
            let cat = cx.g.concat_lastdim(&[a, f4, c, d])?;
            mixed.push(self.conv3.forward(cx, cat)?);
        }
        let Some(&first) = mixed.first() else { return Ok(Vec::new()) };
        let shape = cx.g.shape(first).to_vec();
        let n: usize = shape.iter().product();
        let flat = mixed.iter().map(|&m| cx.g.reshape(m, &[1, n])).collect::<Result<Vec<_>, _>>()?;
        let stacked = cx.g.concat_lastdim(&flat)?;
        let stacked = cx.g.reshape(stacked, &[views.len() * shape[0], shape[1], shape[2]])?;
        let y = self.bn.forward(cx, stacked)?;
        let y = cx.g.relu(y)?;
        let y = cx.g.reshape(y, &[1, views.len() * n])?;
        let mut out = Vec::with_capacity(views.len());
        for i in 0..views.len() {
            let part = cx.g.narrow_lastdim(y, i * n, n)?;
            let part = cx.g.reshape(part, &shape)?;
            out.push(self.conv1.forward(cx, part)?);
        }
        Ok(out)
    }
}

/// Fixed 2-D sinusoidal encoding, `H × W × C`: the first half of the channels
/// encodes the row, the second half the column, as interleaved sin/cos pairs.
pub fn positional_encoding(h: usize, w: usize, c: usize) -> Tensor {
    let half = c / 2;
    let mut t = Tensor::zeros(&[h, w, c]);
    let freq = |k: usize| 1.0 / 10000f64.powf((2 * (k / 2)) as f64 / half as f64);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let (pos, k) = if ch < half { (y as f64, ch) } else { (x as f64, ch - half) };
                let a = pos * freq(k);
                t.set(&[y, x, ch], if k % 2 == 0 { a.sin() } else { a.cos() });
            }
        }
    }
    t
}

/// Multi-head self-attention over all spatial positions with a zero-initialized
/// residual gate. Queries and keys see the positional encoding; values do not.
#[derive(Clone, Debug)]
pub struct Attention {
    pub channels: usize,
    pub heads: usize,
}

impl Attention {
    pub fn new(channels: usize, heads: usize) -> Self {
        Self { channels, heads }
    }

    pub fn declare(&self, store: &mut ParamStore) {
        let (c, h) = (self.channels, self.heads);
        store.declare("attention.query", &[c, h * c], Init::FanIn(c));
        store.declare("attention.key", &[c, h * c], Init::FanIn(c));
        store.declare("attention.value", &[c, c], Init::FanIn(c));
        store.declare("attention.gate", &[1], Init::Zeros);
    }

    fn projections(&self, cx: &mut Cx, f0: Var) -> Result<(Var, Var, Var, usize)> {
        let (h, w, c) = match *cx.g.shape(f0) {
            [h, w, c] if c == self.channels => (h, w, c),
            ref s => return Err(invalid(format!("attention expects H×W×{}, got {s:?}", self.channels))),
        };
        let n = h * w;
        let x = cx.g.reshape(f0, &[n, c])?;
        let pe = cx.g.constant(positional_encoding(h, w, c).reshape(&[n, c])?);
        let xp = cx.g.add(x, pe)?;
        let wq = cx.param("attention.query")?;
        let wk = cx.param("attention.key")?;
        let wv = cx.param("attention.value")?;
        let q = cx.g.matmul(xp, wq)?;
        let k = cx.g.matmul(xp, wk)?;
        let v = cx.g.matmul(x, wv)?;
        Ok((q, k, v, n))
    }

    fn head_weights(&self, cx: &mut Cx, q: Var, k: Var, head: usize) -> Result<Var> {
        let c = self.channels;
        let qh = cx.g.narrow_lastdim(q, head * c, c)?;
        let kh = cx.g.narrow_lastdim(k, head * c, c)?;
        let kt = cx.g.transpose2d(kh)?;
        let logits = cx.g.matmul(qh, kt)?;
        let logits = cx.g.scale(logits, 1.0 / (c as f64).sqrt())?;
        Ok(cx.g.softmax_lastdim(logits)?)
    }

    /// Row-stochastic attention matrices, one `[HW, HW]` per head.
    pub fn weights(&self, cx: &mut Cx, f0: Var) -> Result<Vec<Var>> {
        let (q, k, _, _) = self.projections(cx, f0)?;
        (0..self.heads).map(|i| self.head_weights(cx, q, k, i)).collect()
    }

    pub fn forward(&self, cx: &mut Cx, f0: Var) -> Result<Var> {
        let shape = cx.g.shape(f0).to_vec();
        let (q, k, v, _) = self.projections(cx, f0)?;
        let chunk = self.channels / self.heads;
        let mut outs = Vec::with_capacity(self.heads);
        for i in 0..self.heads {
            let a = self.head_weights(cx, q, k, i)?;
            let vh = cx.g.narrow_lastdim(v, i * chunk, chunk)?;
            outs.push(cx.g.matmul(a, vh)?);
        }
        let mixed = cx.g.concat_lastdim(&outs)?;
        let mixed = cx.g.reshape(mixed, &shape)?;
        let gate = cx.param("attention.gate")?;
        let gated = cx.g.mul_scalar_var(mixed, gate)?;
        Ok(cx.g.add(f0, gated)?)
    }
}

#[derive(Clone, Debug)]
struct ResBlock {
    a: Conv,
    b: Conv,
    skip: Option<Conv>,
}

impl ResBlock {
    fn new(name: &str, c_in: usize, c_out: usize, stride: usize) -> Self {
        let skip = (stride != 1 || c_in != c_out).then(|| Conv::new(format!("{name}.skip"), 1, c_in, c_out, stride));
        Self {
            a: Conv::new(format!("{name}.a"), 3, c_in, c_out, stride),
            b: Conv::new(format!("{name}.b"), 3, c_out, c_out, 1),
            skip,
        }
    }

    fn declare(&self, store: &mut ParamStore) {
        self.a.declare(store);
        self.b.declare(store);
        if let Some(s) = &self.skip {
            s.declare(store);
        }
    }

    fn forward(&self, cx: &mut Cx, x: Var) -> Result<Var> {
        let y = self.a.forward(cx, x)?;
        let y = cx.g.relu(y)?;
        let y = self.b.forward(cx, y)?;
        let s = match &self.skip {
            Some(c) => c.forward(cx, x)?,
            None => x,
        };
        let y = cx.g.add(y, s)?;
        Ok(cx.g.relu(y)?)
    }
}

/// Residual encoder to 1/4 resolution with pooled branches at 1/8 and 1/16.
/// Each level's head output is split channel-wise: tanh half → initial hidden
/// state, relu half → context.
#[derive(Clone, Debug)]
pub struct ContextNet {
    stem: Conv,
    blocks: Vec<ResBlock>,
    heads: Vec<Conv>,
    hidden: usize,
}

impl ContextNet {
    pub fn new(hidden: usize) -> Self {
        Self {
            stem: Conv::new("cnet.stem", 3, 3, 32, 2),
            blocks: vec![
                ResBlock::new("cnet.block0", 32, 32, 1),
                ResBlock::new("cnet.block1", 32, 64, 2),
                ResBlock::new("cnet.block2", 64, 64, 1),
                ResBlock::new("cnet.block3", 64, 64, 1),
            ],
            heads: (0..3).map(|l| Conv::new(format!("cnet.head{l}"), 3, 64, 2 * hidden, 1)).collect(),
            hidden,
        }
    }

    pub fn declare(&self, store: &mut ParamStore) {
        self.stem.declare(store);
        for b in &self.blocks {
            b.declare(store);
        }
        for h in &self.heads {
            h.declare(store);
        }
    }

    pub fn forward(&self, cx: &mut Cx, image: Var) -> Result<ContextFeatures> {
        check_divisible(cx.g, image)?;
        let x = self.stem.forward(cx, image)?;
        let mut x = cx.g.relu(x)?;
        for b in &self.blocks {
            x = b.forward(cx, x)?;
        }
        let mut trunk = x;
        let mut hidden = [x; 3];
        let mut context = [x; 3];
        for (level, head) in self.heads.iter().enumerate() {
            if level > 0 {
                trunk = cx.g.avg_pool2(trunk)?;
            }
            let y = head.forward(cx, trunk)?;
            let h = cx.g.narrow_lastdim(y, 0, self.hidden)?;
            let c = cx.g.narrow_lastdim(y, self.hidden, self.hidden)?;
            hidden[level] = cx.g.tanh(h)?;
            context[level] = cx.g.relu(c)?;
        }
        Ok(ContextFeatures { hidden, context })
    }
}
