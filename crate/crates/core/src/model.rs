//! The full depth network and its iteration loop.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;

use crate::costvol::{build_cost_volume, build_matching_pyramid, lookup, CostVolume};
use crate::data::SceneSample;
use crate::encoder::{Attention, ContextNet, FeatureNet, Fusion};
use crate::error::{invalid, Result};
use crate::geometry::{make_depth_bins, CameraIntrinsics, DepthBins, PoseSE3};
use crate::nn::{Cx, ParamStore};
use crate::numerics::{Graph, Tensor, Var};
use crate::posenet::{select_depth_for_pose, warp_image, PoseDepth, PoseNet};
use crate::updater::{softargmin_start, GruState, UpdateBlock, UPSAMPLE};

/// Architecture variants: plain, with pose rectification, and with pose
/// rectification plus reference-view attention.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Base,
    Pose,
    PoseAttention,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Base, Variant::Pose, Variant::PoseAttention];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::Pose => "pose",
            Variant::PoseAttention => "pose_atten",
        }
    }

    pub fn uses_pose(self) -> bool {
        self != Variant::Base
    }

    pub fn uses_attention(self) -> bool {
        self == Variant::PoseAttention
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| invalid(format!("unknown variant {s:?} (expected base, pose or pose_atten)")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Matching-feature channels.
    pub feature_channels: usize,
    /// Channels of the fused matching features.
    pub fusion_channels: usize,
    pub attention_heads: usize,
    pub hidden_channels: usize,
    pub coarse_bins: usize,
    pub fine_bins: usize,
    pub lookup_radius: usize,
    pub include_level0: bool,
    pub d_min: f64,
    pub d_max: f64,
    pub pose_output_scale: f64,
    pub pose_translation: bool,
    pub prob_predicted_depth: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::PoseAttention,
            feature_channels: 32,
            fusion_channels: 128,
            attention_heads: 4,
            hidden_channels: 64,
            coarse_bins: 64,
            fine_bins: 256,
            lookup_radius: 4,
            include_level0: false,
            d_min: 0.25,
            d_max: 20.0,
            pose_output_scale: 0.01,
            pose_translation: false,
            prob_predicted_depth: 0.6,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.coarse_bins < 16 || self.coarse_bins % 16 != 0 {
            return Err(invalid(format!("coarse bin count must be a positive multiple of 16, got {}", self.coarse_bins)));
        }
        if self.fine_bins % self.coarse_bins != 0 {
            return Err(invalid("fine bin count must be a multiple of the coarse bin count"));
        }
        if self.attention_heads == 0 || self.fusion_channels % self.attention_heads != 0 {
            return Err(invalid("fusion channels must split evenly across attention heads"));
        }
        if self.hidden_channels == 0 || self.feature_channels == 0 || self.fusion_channels == 0 {
            return Err(invalid("channel counts must be positive"));
        }
        if !(0.0..=1.0).contains(&self.prob_predicted_depth) {
            return Err(invalid("prob_predicted_depth must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Per-run switches.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    pub iterations: usize,
    /// Zero-based iteration after which poses are rectified; `None` skips it.
    pub pose_step: Option<usize>,
    /// Compute the photometric loss on the rectified poses (training).
    pub photometric: bool,
    pub ablate_pose: bool,
    pub ablate_attention: bool,
}

impl RunOptions {
    pub fn inference(iterations: usize) -> Self {
        Self { iterations, pose_step: Some(iterations / 2), photometric: false, ablate_pose: false, ablate_attention: false }
    }
}

/// Everything a forward pass produces.
#[derive(Debug)]
pub struct ForwardOutput {
    /// One full-resolution depth map per iteration.
    pub depths: Vec<Var>,
    /// Index fields after each iteration.
    pub phis: Vec<Var>,
    pub initial_phi: Var,
    pub initial_volume: CostVolume,
    /// Reference → source poses actually used by the final cost volume.
    pub poses: Vec<PoseSE3>,
    pub photometric: Option<Var>,
    /// Set when no source pixel was valid for the photometric loss.
    pub photometric_empty: bool,
    /// Views whose features went through attention.
    pub attended_views: Vec<usize>,
    pub pose_depth: Option<PoseDepth>,
}

impl ForwardOutput {
    pub fn final_depth(&self) -> Var {
        *self.depths.last().expect("at least one iteration")
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    fnet: FeatureNet,
    fusion: Fusion,
    attention: Option<Attention>,
    cnet: ContextNet,
    update: UpdateBlock,
    posenet: Option<PoseNet>,
    coarse: DepthBins,
    fine: DepthBins,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let levels = crate::costvol::PYRAMID_DEPTH + usize::from(config.include_level0);
        let lookup_channels = levels * (2 * config.lookup_radius + 1);
        Ok(Self {
            fnet: FeatureNet::new(config.feature_channels),
            fusion: Fusion::new(config.feature_channels, config.fusion_channels),
            attention: config
                .variant
                .uses_attention()
                .then(|| Attention::new(config.fusion_channels, config.attention_heads)),
            cnet: ContextNet::new(config.hidden_channels),
            update: UpdateBlock::new(config.hidden_channels, lookup_channels, config.coarse_bins, config.fine_bins),
            posenet: config
                .variant
                .uses_pose()
                .then(|| PoseNet::new(config.pose_output_scale, config.pose_translation)),
            coarse: make_depth_bins(config.d_min, config.d_max, config.coarse_bins)?,
            fine: make_depth_bins(config.d_min, config.d_max, config.fine_bins)?,
            config,
        })
    }

    pub fn coarse_bins(&self) -> &DepthBins {
        &self.coarse
    }

    pub fn fine_bins(&self) -> &DepthBins {
        &self.fine
    }

    pub fn update_block(&self) -> &UpdateBlock {
        &self.update
    }

    pub fn declare(&self, store: &mut ParamStore) {
        self.fnet.declare(store);
        self.fusion.declare(store);
        if let Some(a) = &self.attention {
            a.declare(store);
        }
        self.cnet.declare(store);
        self.update.declare(store);
        if let Some(p) = &self.posenet {
            p.declare(store);
        }
    }

    /// Freshly initialized parameters. Initial values depend only on the seed
    /// and the parameter name, so variants share every common parameter.
    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut store = ParamStore::new(seed);
        self.declare(&mut store);
        store
    }

    /// Runs the network on one sample. `rng` drives the predicted-vs-ground
    /// truth depth choice for the pose step in training mode.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        params: &ParamStore,
        sample: &SceneSample,
        opts: &RunOptions,
        rng: &mut R,
    ) -> Result<ForwardOutput> {
        sample.validate()?;
        if opts.iterations == 0 {
            return Err(invalid("at least one iteration is required"));
        }
        if let Some(t) = opts.pose_step {
            if t >= opts.iterations {
                return Err(invalid(format!("pose step {t} must be below the iteration count {}", opts.iterations)));
            }
        }
        let mut cx = Cx::new(g, params);
        let images: Vec<Var> = sample.images.iter().map(|im| cx.g.constant(im.clone())).collect();
        let normalized: Vec<Var> = sample
            .images
            .iter()
            .map(|im| cx.g.constant(im.map(|v| 2.0 * v - 1.0)))
            .collect();

        let pyramids = normalized.iter().map(|&im| self.fnet.forward(&mut cx, im)).collect::<Result<Vec<_>>>()?;
        let mut features = self.fusion.forward_views(&mut cx, &pyramids)?;
        let mut attended_views = Vec::new();
        if let (Some(att), false) = (&self.attention, opts.ablate_attention) {
            features[0] = att.forward(&mut cx, features[0])?;
            attended_views.push(0);
        }

        let k_ref = sample.intrinsics[0].scaled(UPSAMPLE);
        let k_src: Vec<CameraIntrinsics> =
            sample.intrinsics[1..].iter().map(|k| k.scaled(UPSAMPLE)).collect();
        let mut poses = sample.relative_poses();
        let volume = build_cost_volume(cx.g, features[0], &features[1..], &self.coarse, &k_ref, &k_src, &poses)?;
        let mut pyramid = build_matching_pyramid(cx.g, volume.values, self.config.include_level0)?;

        let ctx = self.cnet.forward(&mut cx, normalized[0])?;
        let initial_phi = softargmin_start(cx.g, volume.values)?;
        let mut state = GruState { hidden: ctx.hidden };
        let mut phi = initial_phi;
        let top = (self.config.coarse_bins - 1) as f64;

        let mut depths = Vec::with_capacity(opts.iterations);
        let mut phis = Vec::with_capacity(opts.iterations);
        let mut photometric = None;
        let mut photometric_empty = false;
        let mut pose_depth = None;
        for t in 0..opts.iterations {
            let looked = lookup(cx.g, &pyramid, phi, self.config.lookup_radius)?;
            let (next, delta) = self.update.step(&mut cx, &state, &ctx, phi, looked)?;
            state = next;
            let moved = cx.g.add(phi, delta)?;
            phi = cx.g.clamp(moved, 0.0, top)?;
            let (depth, _) = self.update.decode(&mut cx, state.hidden[0], phi, &self.fine)?;
            depths.push(depth);
            phis.push(phi);

            let Some(posenet) = self.posenet.as_ref().filter(|_| !opts.ablate_pose && opts.pose_step == Some(t)) else {
                continue;
            };
            let has_gt = sample.depth.data().iter().any(|&d| d > 0.0);
            let which = select_depth_for_pose(cx.g.is_training(), has_gt, self.config.prob_predicted_depth, rng)?;
            pose_depth = Some(which);
            let depth_map = match which {
                PoseDepth::Predicted => cx.g.value(depth).clone(),
                PoseDepth::GroundTruth => sample.depth.clone(),
            };
            let step = self.rectify(&mut cx, posenet, sample, &images, &depth_map, &poses, opts.photometric)?;
            poses = step.poses;
            photometric = step.photometric;
            photometric_empty = step.empty;
            let rebuilt = build_cost_volume(cx.g, features[0], &features[1..], &self.coarse, &k_ref, &k_src, &poses)?;
            pyramid = build_matching_pyramid(cx.g, rebuilt.values, self.config.include_level0)?;
        }
        Ok(ForwardOutput {
            depths,
            phis,
            initial_phi,
            initial_volume: volume,
            poses,
            photometric,
            photometric_empty,
            attended_views,
            pose_depth,
        })
    }

    /// One residual pose update per source view, driven by `depth` (treated
    /// as a constant).
    #[allow(clippy::too_many_arguments)]
    fn rectify(
        &self,
        cx: &mut Cx,
        posenet: &PoseNet,
        sample: &SceneSample,
        images: &[Var],
        depth: &Tensor,
        poses: &[PoseSE3],
        photometric: bool,
    ) -> Result<Rectified> {
        let k_ref = &sample.intrinsics[0];
        let depth_var = cx.g.constant(depth.clone());
        let mut out = Vec::with_capacity(poses.len());
        let mut losses = Vec::new();
        let mut empty = false;
        for (i, pose) in poses.iter().enumerate() {
            let k_src = &sample.intrinsics[i + 1];
            let (warped, _) = warp_image(&sample.images[i + 1], depth, k_ref, k_src, pose)?;
            let warped = cx.g.constant(warped);
            let (rot, trans) = posenet.forward(cx, images[0], warped)?;
            let delta = cx.g.rodrigues(rot)?;
            let r = cx.g.constant(Tensor::new(&[3, 3], pose.rotation.transpose().as_slice().to_vec())?);
            let t = cx.g.constant(Tensor::new(&[3, 1], pose.translation.as_slice().to_vec())?);
            let new_r = cx.g.matmul(delta, r)?;
            let new_t = cx.g.matmul(delta, t)?;
            let mut new_t = cx.g.reshape(new_t, &[3])?;
            if let Some(dt) = trans {
                new_t = cx.g.add(new_t, dt)?;
            }
            let rv = cx.g.value(new_r).data();
            let tv = cx.g.value(new_t).data();
            out.push(PoseSE3::new(Matrix3::from_row_slice(rv), Vector3::from_row_slice(tv)));
            if photometric {
                let grid = cx.g.project_grid(depth_var, new_r, new_t, *k_ref, *k_src)?;
                let (resampled, mask) = cx.g.grid_sample_bilinear(images[i + 1], grid)?;
                empty |= mask.count() == 0;
                losses.push(cx.g.photometric_loss(images[0], resampled, &mask)?);
            }
        }
        let photometric = if losses.is_empty() {
            None
        } else {
            let total = cx.g.concat_lastdim(&losses)?;
            Some(cx.g.mean(total)?)
        };
        Ok(Rectified { poses: out, photometric, empty })
    }
}

struct Rectified {
    poses: Vec<PoseSE3>,
    photometric: Option<Var>,
    empty: bool,
}

/// Inference-mode forward returning plain tensors.
pub struct Prediction {
    pub depths: Vec<Tensor>,
    pub poses: Vec<PoseSE3>,
}

impl Model {
    pub fn predict(&self, params: &ParamStore, sample: &SceneSample, opts: &RunOptions) -> Result<Prediction> {
        let mut g = Graph::new();
        // Inference never draws from the generator.
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let out = self.forward(&mut g, params, sample, opts, &mut rng)?;
        Ok(Prediction { depths: out.depths.iter().map(|&d| g.value(d).clone()).collect(), poses: out.poses })
    }
}
