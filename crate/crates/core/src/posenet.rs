//! Residual rotation prediction from the reference image and a depth-warped
//! source image, and the photometric loss that supervises it.

use rand::Rng;

use crate::error::{invalid, Result};
use crate::geometry::{warp_grid, CameraIntrinsics, Depth, PoseSE3};
use crate::nn::{Conv, Cx, Linear, ParamStore};
use crate::numerics::{Graph, NumericsError, Tensor, ValidityMask, Var};

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const SSIM_WEIGHT: f64 = 0.85;
/// Largest magnitude of any predicted axis-angle component, chosen so that
/// the vector norm stays below π.
pub const MAX_COMPONENT: f64 = 1.8;

/// Backward-warps `src` into the reference view using a per-pixel depth map.
/// Pixels that land outside the source image or behind its camera are zero and
/// masked out.
pub fn warp_image(
    src: &Tensor,
    depth: &Tensor,
    k_ref: &CameraIntrinsics,
    k_src: &CameraIntrinsics,
    pose: &PoseSE3,
) -> Result<(Tensor, ValidityMask)> {
    let grid = warp_grid(k_ref, k_src, pose, Depth::Map(depth))?;
    let mut g = Graph::new();
    let s = g.constant(src.clone());
    let gr = g.constant(grid);
    let (out, mask) = g.grid_sample_bilinear(s, gr)?;
    Ok((g.value(out).clone(), mask))
}

/// Which depth map drives the pose step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoseDepth {
    Predicted,
    GroundTruth,
}

/// Training: the prediction with probability `prob_predicted`, otherwise the
/// ground truth. Inference: always the prediction.
pub fn select_depth_for_pose<R: Rng + ?Sized>(
    training: bool,
    has_ground_truth: bool,
    prob_predicted: f64,
    rng: &mut R,
) -> Result<PoseDepth> {
    if !training {
        return Ok(PoseDepth::Predicted);
    }
    if !has_ground_truth {
        return Err(invalid("training-mode pose step needs ground-truth depth"));
    }
    Ok(if rng.random::<f64>() < prob_predicted { PoseDepth::Predicted } else { PoseDepth::GroundTruth })
}

/// Strided convolutional encoder over `[reference, warped source]`, global
/// average pooling and a zero-initialized linear head scaled by `output_scale`.
#[derive(Clone, Debug)]
pub struct PoseNet {
    convs: Vec<Conv>,
    head: Linear,
    pub output_scale: f64,
    pub translation: bool,
}

impl PoseNet {
    pub fn new(output_scale: f64, translation: bool) -> Self {
        let widths = [6, 16, 32, 32, 64, 64];
        let convs = widths.windows(2).enumerate().map(|(i, w)| Conv::new(format!("pose.conv{i}"), 3, w[0], w[1], 2)).collect();
        let outputs = if translation { 6 } else { 3 };
        Self { convs, head: Linear::new("pose.head", 64, outputs).zeroed(), output_scale, translation }
    }

    pub fn declare(&self, store: &mut ParamStore) {
        for c in &self.convs {
            c.declare(store);
        }
        self.head.declare(store);
    }

    /// Pre-scale head activations, `[3]` or `[6]`.
    pub fn raw(&self, cx: &mut Cx, reference: Var, warped: Var) -> Result<Var> {
        let mut x = cx.g.concat_lastdim(&[reference, warped])?;
        for c in &self.convs {
            let y = c.forward(cx, x)?;
            x = cx.g.relu(y)?;
        }
        let pooled = cx.g.global_avg_pool(x)?;
        self.head.forward(cx, pooled)
    }

    /// Axis-angle residual rotation `[3]`, and the translation residual `[3]`
    /// when enabled. Inputs are images in `[0, 1]`.
    pub fn forward(&self, cx: &mut Cx, reference: Var, warped: Var) -> Result<(Var, Option<Var>)> {
        let r = cx.g.scale(reference, 2.0)?;
        let r = cx.g.add_scalar(r, -1.0)?;
        let w = cx.g.scale(warped, 2.0)?;
        let w = cx.g.add_scalar(w, -1.0)?;
        let raw = self.raw(cx, r, w)?;
        let out = cx.g.scale(raw, self.output_scale)?;
        let out = cx.g.clamp(out, -MAX_COMPONENT, MAX_COMPONENT)?;
        if self.translation {
            let rot = cx.g.narrow_lastdim(out, 0, 3)?;
            let tr = cx.g.narrow_lastdim(out, 3, 3)?;
            Ok((rot, Some(tr)))
        } else {
            Ok((out, None))
        }
    }
}

impl Graph {
    /// Per-pixel `0.85·clamp((1−SSIM)/2, 0, 1) + 0.15·|a−b|`, averaged over
    /// channels and over pixels where `mask` is true. SSIM uses 3×3 mean
    /// filters with reflection padding. Returns 0 when no pixel is valid.
    pub fn photometric_loss(&mut self, reference: Var, warped: Var, mask: &ValidityMask) -> Result<Var, NumericsError> {
        let (h, w, c) = match *self.shape(reference) {
            [h, w, c] => (h, w, c),
            ref s => return Err(NumericsError::Shape(format!("photometric_loss: {s:?}"))),
        };
        if self.shape(warped) != [h, w, c] || mask.shape() != [h, w] {
            return Err(NumericsError::Shape("photometric_loss: image/mask shapes differ".into()));
        }
        let mu_x = self.box3_reflect(reference)?;
        let mu_y = self.box3_reflect(warped)?;
        let xx = self.mul(reference, reference)?;
        let yy = self.mul(warped, warped)?;
        let xy = self.mul(reference, warped)?;
        let exx = self.box3_reflect(xx)?;
        let eyy = self.box3_reflect(yy)?;
        let exy = self.box3_reflect(xy)?;
        let mx2 = self.mul(mu_x, mu_x)?;
        let my2 = self.mul(mu_y, mu_y)?;
        let mxy = self.mul(mu_x, mu_y)?;
        let sx = self.sub(exx, mx2)?;
        let sy = self.sub(eyy, my2)?;
        let sxy = self.sub(exy, mxy)?;

        let a = self.scale(mxy, 2.0)?;
        let a = self.add_scalar(a, SSIM_C1)?;
        let b = self.scale(sxy, 2.0)?;
        let b = self.add_scalar(b, SSIM_C2)?;
        let num = self.mul(a, b)?;
        let c1 = self.add(mx2, my2)?;
        let c1 = self.add_scalar(c1, SSIM_C1)?;
        let c2 = self.add(sx, sy)?;
        let c2 = self.add_scalar(c2, SSIM_C2)?;
        let den = self.mul(c1, c2)?;
        let ssim = self.div(num, den)?;
        let dis = self.scale(ssim, -0.5)?;
        let dis = self.add_scalar(dis, 0.5)?;
        let dis = self.clamp(dis, 0.0, 1.0)?;

        let diff = self.sub(reference, warped)?;
        let l1 = self.abs(diff)?;
        let s = self.scale(dis, SSIM_WEIGHT)?;
        let l = self.scale(l1, 1.0 - SSIM_WEIGHT)?;
        let per = self.add(s, l)?;
        let weights = Tensor::from_fn(&[h, w, c], |i| if mask.get(i / c) { 1.0 } else { 0.0 });
        self.masked_mean(per, &weights)
    }
}

/// Photometric loss plus a flag that is true when no pixel was valid.
pub fn photometric_loss(reference: &Tensor, warped: &Tensor, mask: &ValidityMask) -> Result<(f64, bool)> {
    let mut g = Graph::new();
    let r = g.constant(reference.clone());
    let w = g.constant(warped.clone());
    let l = g.photometric_loss(r, w, mask)?;
    Ok((g.value(l).data()[0], mask.count() == 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[h, w, 3], |_| rng.random_range(0.0..0.8))
    }

    #[test]
    fn identity_warp_reproduces_source() {
        let k = CameraIntrinsics::new(20.0, 20.0, 8.0, 8.0, 16, 16).unwrap();
        let src = random_image(16, 16, 1);
        let (out, mask) = warp_image(&src, &Tensor::full(&[16, 16], 3.0), &k, &k, &PoseSE3::identity()).unwrap();
        assert!(out.zip_map(&src, |a, b| a - b).max_abs() < 1e-12);
        assert!(mask.all_true());
    }

    #[test]
    fn behind_camera_pixels_are_masked() {
        let k = CameraIntrinsics::new(20.0, 20.0, 8.0, 8.0, 16, 16).unwrap();
        let pose = PoseSE3::new(nalgebra::Matrix3::identity(), nalgebra::Vector3::new(0.0, 0.0, -5.0));
        let (out, mask) = warp_image(&random_image(16, 16, 2), &Tensor::full(&[16, 16], 1.0), &k, &k, &pose).unwrap();
        assert_eq!(mask.count(), 0);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn depth_selection_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..100 {
            assert_eq!(select_depth_for_pose(false, false, 0.6, &mut rng).unwrap(), PoseDepth::Predicted);
            assert_eq!(select_depth_for_pose(true, true, 1.0, &mut rng).unwrap(), PoseDepth::Predicted);
        }
        assert!(select_depth_for_pose(true, false, 0.6, &mut rng).is_err());
        let n = 10_000;
        let hits = (0..n)
            .filter(|_| select_depth_for_pose(true, true, 0.6, &mut rng).unwrap() == PoseDepth::Predicted)
            .count();
        assert!((hits as f64 / n as f64 - 0.6).abs() < 0.02);
    }

    #[test]
    fn photometric_loss_examples() {
        let img = random_image(8, 8, 3);
        let mask = ValidityMask::all(&[8, 8], true);
        let (l, empty) = photometric_loss(&img, &img, &mask).unwrap();
        assert_eq!(l, 0.0);
        assert!(!empty);

        let shifted = img.map(|v| v + 0.1);
        let (l, _) = photometric_loss(&img, &shifted, &mask).unwrap();
        assert!(l >= 0.015 - 1e-12);

        let (l, empty) = photometric_loss(&img, &shifted, &ValidityMask::all(&[8, 8], false)).unwrap();
        assert_eq!(l, 0.0);
        assert!(empty);

        for seed in 0..10 {
            let a = random_image(8, 8, 10 + seed);
            let b = random_image(8, 8, 20 + seed);
            let (l, _) = photometric_loss(&a, &b, &mask).unwrap();
            assert!((0.0..=0.85 + 0.15 * 0.8).contains(&l));
        }
    }

    #[test]
    fn zero_head_predicts_identity_and_output_is_bounded() {
        let net = PoseNet::new(0.01, false);
        let mut store = ParamStore::new(4);
        net.declare(&mut store);
        let mut g = Graph::new();
        let mut cx = Cx::new(&mut g, &store);
        let r = cx.g.constant(random_image(32, 32, 5));
        let w = cx.g.constant(random_image(32, 32, 6));
        let (rot, tr) = net.forward(&mut cx, r, w).unwrap();
        assert!(tr.is_none());
        assert_eq!(g.value(rot).data(), &[0.0, 0.0, 0.0]);
        let rv = g.rodrigues(rot).unwrap();
        assert_eq!(g.value(rv), &Tensor::new(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap());

        let mut store = store.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        store.set("pose.head.weight", Tensor::from_fn(&[64, 3], |_| rng.random_range(-50.0..50.0))).unwrap();
        let mut g = Graph::new();
        let mut cx = Cx::new(&mut g, &store);
        let (a, b) = (random_image(32, 32, 5), random_image(32, 32, 6));
        let r = cx.g.constant(a.map(|v| 2.0 * v - 1.0));
        let w = cx.g.constant(b.map(|v| 2.0 * v - 1.0));
        let raw = net.raw(&mut cx, r, w).unwrap();
        let r = cx.g.constant(a);
        let w = cx.g.constant(b);
        let (rot, _) = net.forward(&mut cx, r, w).unwrap();
        let bound = 0.01 * g.value(raw).max_abs() * 3.0;
        assert!(g.value(rot).norm() <= bound + 1e-15);
        assert!(g.value(rot).norm() < std::f64::consts::PI);
    }
}
