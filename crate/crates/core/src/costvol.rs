//! Plane-sweep cost volume, its depth-pooled pyramid, and the windowed lookup
//! that feeds the updater.

use crate::error::{invalid, Result};
use crate::geometry::{warp_grid, CameraIntrinsics, Depth, DepthBins, PoseSE3};
use crate::numerics::{Bilinear, Graph, NumericsError, Tensor, Var};

pub const PYRAMID_DEPTH: usize = 4;

#[derive(Clone, Debug)]
pub struct CostVolume {
    /// `H × W × M` matching scores.
    pub values: Var,
    pub bins: DepthBins,
    /// Number of source views that were inside their image for each cell.
    pub valid_views: Vec<u16>,
}

impl CostVolume {
    pub fn is_valid(&self, cell: usize) -> bool {
        self.valid_views[cell] > 0
    }
}

/// Pose entries rounded to multiples of 2⁻⁴⁰, so that poses differing only by
/// floating-point rounding (for example a pose and its exactly undone
/// rectification) sweep identical grids.
pub fn canonical_pose(pose: &PoseSE3) -> PoseSE3 {
    const Q: f64 = (1u64 << 40) as f64;
    let snap = |v: f64| (v * Q).round() / Q;
    PoseSE3::new(pose.rotation.map(snap), pose.translation.map(snap))
}

/// One `H × W × 2` sampling grid per (source view, depth bin).
pub fn sweep_grids(
    k_ref: &CameraIntrinsics,
    k_src: &[CameraIntrinsics],
    poses: &[PoseSE3],
    bins: &DepthBins,
) -> Result<Vec<Vec<Tensor>>> {
    if k_src.len() != poses.len() {
        return Err(invalid("one intrinsics record per source pose required"));
    }
    k_src
        .iter()
        .zip(poses)
        .map(|(ks, pose)| {
            let pose = canonical_pose(pose);
            bins.values.iter().map(|&d| warp_grid(k_ref, ks, &pose, Depth::Plane(d))).collect()
        })
        .collect()
}

impl Graph {
    /// Fused plane sweep: for every pixel and hypothesis, the channel dot
    /// product of `reference` with each bilinearly warped source map, divided
    /// by `√C` and averaged over the views whose sample fell inside the image.
    /// Cells with no valid view are 0. Grids are constants.
    pub fn plane_sweep_cost(
        &mut self,
        reference: Var,
        sources: &[Var],
        grids: Vec<Vec<Tensor>>,
    ) -> Result<(Var, Vec<u16>), NumericsError> {
        let (h, w, c) = match *self.shape(reference) {
            [h, w, c] => (h, w, c),
            ref s => return Err(NumericsError::Shape(format!("plane sweep: reference {s:?}"))),
        };
        if sources.is_empty() || grids.len() != sources.len() {
            return Err(NumericsError::Shape("plane sweep: need one grid set per source view".into()));
        }
        let m = grids[0].len();
        let mut src_dims = Vec::with_capacity(sources.len());
        for (&s, gs) in sources.iter().zip(&grids) {
            let (sh, sw) = match *self.shape(s) {
                [sh, sw, sc] if sc == c => (sh, sw),
                ref s => return Err(NumericsError::Shape(format!("plane sweep: source {s:?}"))),
            };
            if gs.len() != m || gs.iter().any(|t| t.shape() != [h, w, 2]) {
                return Err(NumericsError::Shape("plane sweep: grid shapes".into()));
            }
            src_dims.push((sh, sw));
        }
        let norm = (c as f64).sqrt();
        let rv = self.value(reference).data();
        let svs: Vec<&[f64]> = sources.iter().map(|&s| self.value(s).data()).collect();
        let mut out = vec![0.0; h * w * m];
        let mut counts = vec![0u16; h * w * m];
        for p in 0..h * w {
            let r = &rv[p * c..][..c];
            for bin in 0..m {
                let mut sum = 0.0;
                let mut n = 0u16;
                for (v, gs) in grids.iter().enumerate() {
                    let (sh, sw) = src_dims[v];
                    let gd = gs[bin].data();
                    let Some(b) = Bilinear::locate(gd[2 * p], gd[2 * p + 1], sw, sh) else { continue };
                    n += 1;
                    for (y, x, wt) in b.weights() {
                        let s = &svs[v][(y * sw + x) * c..][..c];
                        sum += wt * r.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
                counts[p * m + bin] = n;
                if n > 0 {
                    out[p * m + bin] = sum / (n as f64 * norm);
                }
            }
        }
        let value = Tensor::new(&[h, w, m], out)?;
        let counts_bw = counts.clone();
        let mut parents = vec![reference];
        parents.extend_from_slice(sources);
        let var = self.push("plane_sweep_cost", value, &parents, move |ctx| {
            let rv = ctx.inputs[0].data();
            let gy = ctx.grad.data();
            let mut dref = vec![0.0; h * w * c];
            let mut dsrc: Vec<Vec<f64>> = ctx.inputs[1..].iter().map(|t| vec![0.0; t.len()]).collect();
            for p in 0..h * w {
                let r = &rv[p * c..][..c];
                for bin in 0..m {
                    let n = counts_bw[p * m + bin];
                    if n == 0 {
                        continue;
                    }
                    let coef = gy[p * m + bin] / (n as f64 * norm);
                    if coef == 0.0 {
                        continue;
                    }
                    for (v, gs) in grids.iter().enumerate() {
                        let (sh, sw) = src_dims[v];
                        let gd = gs[bin].data();
                        let Some(b) = Bilinear::locate(gd[2 * p], gd[2 * p + 1], sw, sh) else { continue };
                        let sv = ctx.inputs[v + 1].data();
                        for (y, x, wt) in b.weights() {
                            let k = coef * wt;
                            let off = (y * sw + x) * c;
                            let dr = &mut dref[p * c..][..c];
                            for i in 0..c {
                                dr[i] += k * sv[off + i];
                            }
                            let ds = &mut dsrc[v][off..][..c];
                            for i in 0..c {
                                ds[i] += k * r[i];
                            }
                        }
                    }
                }
            }
            let mut res = vec![Some(Tensor::from_parts(vec![h, w, c], dref))];
            for (v, d) in dsrc.into_iter().enumerate() {
                res.push(Some(Tensor::from_parts(ctx.inputs[v + 1].shape().to_vec(), d)));
            }
            res
        })?;
        Ok((var, counts))
    }
}

/// Cost volume of the (attention-aggregated) reference features against the
/// source features over all hypotheses in `bins`. Intrinsics must match the
/// feature resolution; `poses` map reference-camera to source-camera
/// coordinates and are treated as constants.
pub fn build_cost_volume(
    g: &mut Graph,
    reference: Var,
    sources: &[Var],
    bins: &DepthBins,
    k_ref: &CameraIntrinsics,
    k_src: &[CameraIntrinsics],
    poses: &[PoseSE3],
) -> Result<CostVolume> {
    if sources.is_empty() {
        return Err(invalid("cost volume needs at least one source view"));
    }
    if sources.len() != poses.len() {
        return Err(invalid("one pose per source view required"));
    }
    let grids = sweep_grids(k_ref, k_src, poses, bins)?;
    let (values, valid_views) = g.plane_sweep_cost(reference, sources, grids)?;
    Ok(CostVolume { values, bins: bins.clone(), valid_views })
}

/// Depth-pooled copies of a cost volume. `levels[i]` has depth extent
/// `M0 / 2^(first_level + i)`.
#[derive(Clone, Debug)]
pub struct MatchingPyramid {
    pub levels: Vec<Var>,
    pub first_level: usize,
}

impl MatchingPyramid {
    pub fn level_scale(&self, i: usize) -> f64 {
        (1usize << (self.first_level + i)) as f64
    }
}

pub fn build_matching_pyramid(g: &mut Graph, volume: Var, include_level0: bool) -> Result<MatchingPyramid> {
    let m0 = g.value(volume).last_dim();
    if m0 % (1 << PYRAMID_DEPTH) != 0 {
        return Err(invalid(format!("hypothesis count {m0} must be divisible by {}", 1 << PYRAMID_DEPTH)));
    }
    let mut levels = Vec::with_capacity(PYRAMID_DEPTH + 1);
    if include_level0 {
        levels.push(volume);
    }
    let mut cur = volume;
    for _ in 0..PYRAMID_DEPTH {
        cur = g.avg_pool_depth(cur)?;
        levels.push(cur);
    }
    Ok(MatchingPyramid { levels, first_level: if include_level0 { 0 } else { 1 } })
}

/// Samples every pyramid level at `clamp(φ, 0, M0−1)/2^l + j`,
/// `j ∈ [−radius, radius]`, with linear interpolation and zero fill, and
/// concatenates the taps: `H × W × levels·(2·radius+1)`.
pub fn lookup(g: &mut Graph, pyramid: &MatchingPyramid, phi: Var, radius: usize) -> Result<Var> {
    let first = *pyramid.levels.first().ok_or_else(|| invalid("empty matching pyramid"))?;
    let (h, w) = match *g.shape(phi) {
        [h, w] => (h, w),
        ref s => return Err(invalid(format!("index field must be H×W, got {s:?}"))),
    };
    let m0 = g.value(first).last_dim() << pyramid.first_level;
    let taps = 2 * radius + 1;
    let clamped = g.clamp(phi, 0.0, (m0 - 1) as f64)?;
    let col = g.reshape(clamped, &[h, w, 1])?;
    let copies = g.concat_lastdim(&vec![col; taps])?;
    let offsets = Tensor::from_fn(&[h, w, taps], |i| (i % taps) as f64 - radius as f64);
    let offsets = g.constant(offsets);
    let mut parts = Vec::with_capacity(pyramid.levels.len());
    for (i, &level) in pyramid.levels.iter().enumerate() {
        let centred = g.scale(copies, 1.0 / pyramid.level_scale(i))?;
        let pos = g.add(centred, offsets)?;
        parts.push(g.gather_linear_lastdim(level, pos)?);
    }
    Ok(g.concat_lastdim(&parts)?)
}
