//! Multi-iteration depth supervision, the optimizer and the training loop.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{generate_planar_scene, Plane, SceneSample, SceneSpec};
use crate::error::{invalid, Error, Result};
use crate::metrics::evaluate_depth;
use crate::model::{Model, ModelConfig, RunOptions};
use crate::nn::{Cx, ParamStore, Role};
use crate::numerics::{Graph, NumericsError, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub iterations_train: usize,
    pub iterations_infer: usize,
    pub gamma: f64,
    pub clip: f64,
    pub lambda_photo: f64,
    pub seed: u64,
    pub warmup_epochs_pose: usize,
    /// Zero-based pose-rectification iteration; `None` means `T/2`.
    pub pose_step: Option<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub d_min: f64,
    pub d_max: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            decay_epochs: vec![4, 8],
            decay_factor: 0.5,
            epochs: 10,
            batch_size: 1,
            iterations_train: 12,
            iterations_infer: 24,
            gamma: 0.9,
            clip: 1.0,
            lambda_photo: 1.0,
            seed: 0,
            warmup_epochs_pose: 1,
            pose_step: None,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
            d_min: 0.25,
            d_max: 20.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(invalid(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if !(self.clip > 0.0) {
            return Err(invalid("clip bound must be positive"));
        }
        if self.iterations_train == 0 || self.iterations_infer == 0 {
            return Err(invalid("iteration counts must be at least 1"));
        }
        if self.batch_size != 1 {
            return Err(invalid("only batch size 1 is supported"));
        }
        if !(self.learning_rate >= 0.0) || !(self.lambda_photo >= 0.0) {
            return Err(invalid("learning rate and photometric weight must be nonnegative"));
        }
        if let Some(t) = self.pose_step {
            if t >= self.iterations_train {
                return Err(invalid("pose step must be below the training iteration count"));
            }
        }
        Ok(())
    }

    pub fn pose_step_for(&self, iterations: usize) -> usize {
        self.pose_step.unwrap_or(iterations / 2).min(iterations - 1)
    }
}

/// `γ^(T−t)` for `t = 1..=T`.
pub fn iteration_weights(iterations: usize, gamma: f64) -> Vec<f64> {
    (1..=iterations).map(|t| gamma.powi((iterations - t) as i32)).collect()
}

/// Ground-truth pixels that supervise: finite and inside `[d_min, d_max]`.
pub fn valid_depth_mask(gt: &Tensor, d_min: f64, d_max: f64) -> Tensor {
    gt.map(|d| if d.is_finite() && d >= d_min && d <= d_max { 1.0 } else { 0.0 })
}

/// `Σ_t γ^(T−t) · mean_valid |1/D_t − 1/D_gt|`.
pub fn depth_loss(g: &mut Graph, depths: &[Var], gt: &Tensor, d_min: f64, d_max: f64, gamma: f64) -> Result<Var> {
    if depths.is_empty() {
        return Err(invalid("depth loss needs at least one prediction"));
    }
    let mask = valid_depth_mask(gt, d_min, d_max);
    if mask.data().iter().all(|&m| m == 0.0) {
        return Err(Error::UnusableSample("no valid ground-truth pixels".into()));
    }
    let inv_gt = g.constant(gt.zip_map(&mask, |d, m| if m != 0.0 { 1.0 / d } else { 0.0 }));
    let weights = iteration_weights(depths.len(), gamma);
    let mut terms = Vec::with_capacity(depths.len());
    for (&d, &w) in depths.iter().zip(&weights) {
        if g.shape(d) != gt.shape() {
            return Err(invalid(format!("prediction {:?} does not match ground truth {:?}", g.shape(d), gt.shape())));
        }
        let inv = g.reciprocal(d)?;
        let diff = g.sub(inv, inv_gt)?;
        let err = g.abs(diff)?;
        let m = g.masked_mean(err, &mask)?;
        terms.push(g.scale(m, w)?);
    }
    let all = g.concat_lastdim(&terms)?;
    Ok(g.sum(all)?)
}

pub fn clip_gradient(grad: &Tensor, bound: f64) -> Tensor {
    grad.map(|v| v.clamp(-bound, bound))
}

/// `base · factor^(number of decay epochs ≤ epoch)`.
pub fn lr_schedule(epoch: usize, config: &TrainConfig) -> f64 {
    let passed = config.decay_epochs.iter().filter(|&&e| epoch >= e).count();
    config.learning_rate * config.decay_factor.powi(passed as i32)
}

/// Adaptive moments with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    moments: BTreeMap<String, (Tensor, Tensor, u64)>,
}

impl AdamW {
    pub fn new(beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        Self { beta1, beta2, eps, weight_decay, moments: BTreeMap::new() }
    }

    pub fn from_config(c: &TrainConfig) -> Self {
        Self::new(c.beta1, c.beta2, c.eps, c.weight_decay)
    }

    pub fn step_count(&self, name: &str) -> u64 {
        self.moments.get(name).map_or(0, |m| m.2)
    }

    /// Updates each named parameter in place.
    pub fn update(&mut self, store: &mut ParamStore, grads: &BTreeMap<String, Tensor>, lr: f64) -> Result<()> {
        for (name, grad) in grads {
            let value = store.get(name)?.clone();
            let (m, v, t) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (Tensor::zeros(value.shape()), Tensor::zeros(value.shape()), 0));
            *t += 1;
            *m = m.zip_map(grad, |m, g| self.beta1 * m + (1.0 - self.beta1) * g);
            *v = v.zip_map(grad, |v, g| self.beta2 * v + (1.0 - self.beta2) * g * g);
            if lr == 0.0 {
                continue;
            }
            let c1 = 1.0 - self.beta1.powi(*t as i32);
            let c2 = 1.0 - self.beta2.powi(*t as i32);
            let step = m.zip_map(v, |m, v| (m / c1) / ((v / c2).sqrt() + self.eps));
            let decayed = value.map(|p| p * (1.0 - lr * self.weight_decay));
            store.set(name, decayed.zip_map(&step, |p, s| p - lr * s))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub loss_depth: f64,
    pub loss_photo: f64,
    pub lr: f64,
    pub seconds: f64,
}

impl StepReport {
    /// `step loss_depth loss_photo lr seconds`
    pub fn log_line(&self) -> String {
        format!("{} {:.6e} {:.6e} {:.3e} {:.3}", self.step, self.loss_depth, self.loss_photo, self.lr, self.seconds)
    }
}

/// Owns the parameters and optimizer state for one training run.
pub struct Trainer {
    pub model: Model,
    pub params: ParamStore,
    pub optimizer: AdamW,
    pub config: TrainConfig,
    rng: ChaCha8Rng,
    step: usize,
}

fn non_finite(step: usize, what: &str, e: NumericsError) -> Error {
    match e {
        NumericsError::NonFinite(op) => {
            Error::InvalidArgument(format!("step {step}: non-finite value in {op} while computing {what}; step aborted"))
        }
        other => other.into(),
    }
}

impl Trainer {
    pub fn new(model: Model, params: ParamStore, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_7a11);
        Ok(Self { optimizer: AdamW::from_config(&config), model, params, config, rng, step: 0 })
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    fn run_options(&self, photometric: bool) -> RunOptions {
        let t = self.config.iterations_train;
        RunOptions {
            iterations: t,
            pose_step: self.model.config.variant.uses_pose().then(|| self.config.pose_step_for(t)),
            photometric,
            ablate_pose: false,
            ablate_attention: false,
        }
    }

    fn gradients(g: &Graph) -> BTreeMap<String, Tensor> {
        g.bound_params()
            .filter(|&(_, v)| g.requires_grad(v))
            .map(|(name, v)| {
                let grad = g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(g.shape(v)));
                (name.to_string(), grad)
            })
            .collect()
    }

    /// Forward, backward, clip and update on one sample at learning rate `lr`.
    pub fn train_step(&mut self, sample: &SceneSample, lr: f64) -> Result<StepReport> {
        let started = Instant::now();
        let step = self.step;
        let opts = self.run_options(self.config.lambda_photo > 0.0);
        let mut g = Graph::training();
        let out = self
            .model
            .forward(&mut g, &self.params, sample, &opts, &mut self.rng)
            .map_err(|e| match e {
                Error::Numerics(n) => non_finite(step, "the forward pass", n),
                other => other,
            })?;
        let (d_min, d_max) = (self.config.d_min, self.config.d_max);
        let loss_depth = depth_loss(&mut g, &out.depths, &sample.depth, d_min, d_max, self.config.gamma)
            .map_err(|e| match e {
                Error::Numerics(n) => non_finite(step, "the depth loss", n),
                other => other,
            })?;
        let depth_value = g.value(loss_depth).data()[0];
        let (total, photo_value) = match out.photometric {
            Some(p) if self.config.lambda_photo > 0.0 => {
                let pv = g.value(p).data()[0];
                let weighted = g.scale(p, self.config.lambda_photo)?;
                (g.add(loss_depth, weighted)?, pv)
            }
            _ => (loss_depth, 0.0),
        };
        if !g.value(total).data()[0].is_finite() {
            return Err(Error::InvalidArgument(format!(
                "step {step}: non-finite loss (depth {depth_value}, photometric {photo_value}); step aborted"
            )));
        }
        g.backward(total).map_err(|e| non_finite(step, "gradients", e))?;
        let grads: BTreeMap<String, Tensor> =
            Self::gradients(&g).into_iter().map(|(k, v)| (k, clip_gradient(&v, self.config.clip))).collect();
        self.optimizer.update(&mut self.params, &grads, lr)?;
        for (name, value) in g.take_buffer_updates() {
            self.params.set(&name, value)?;
        }
        self.step += 1;
        Ok(StepReport { step, loss_depth: depth_value, loss_photo: photo_value, lr, seconds: started.elapsed().as_secs_f64() })
    }

    /// Photometric-only updates of the pose network with every other
    /// parameter frozen. Batch-norm statistics are left untouched so frozen
    /// state stays bit-identical.
    pub fn warmup_pose(&mut self, samples: &[SceneSample], lr: f64) -> Result<Vec<StepReport>> {
        let mut reports = Vec::new();
        if self.config.warmup_epochs_pose == 0 || !self.model.config.variant.uses_pose() {
            return Ok(reports);
        }
        self.params.freeze_except(&["pose."]);
        let result = (|| {
            for _ in 0..self.config.warmup_epochs_pose {
                for sample in samples {
                    reports.push(self.warmup_step(sample, lr)?);
                }
            }
            Ok(())
        })();
        self.params.unfreeze_all();
        result.map(|()| reports)
    }

    fn warmup_step(&mut self, sample: &SceneSample, lr: f64) -> Result<StepReport> {
        let started = Instant::now();
        let opts = self.run_options(true);
        let mut g = Graph::training();
        let out = self.model.forward(&mut g, &self.params, sample, &opts, &mut self.rng)?;
        let photo = out.photometric.ok_or_else(|| invalid("pose warmup needs a photometric loss"))?;
        let value = g.value(photo).data()[0];
        if !value.is_finite() {
            return Err(Error::InvalidArgument(format!("warmup: non-finite photometric loss {value}")));
        }
        g.backward(photo).map_err(|e| non_finite(self.step, "warmup gradients", e))?;
        let grads: BTreeMap<String, Tensor> = Self::gradients(&g)
            .into_iter()
            .filter(|(k, _)| self.params.entry(k).is_some_and(|e| e.role == Role::Weight && !e.frozen))
            .map(|(k, v)| (k, clip_gradient(&v, self.config.clip)))
            .collect();
        self.optimizer.update(&mut self.params, &grads, lr)?;
        drop(g.take_buffer_updates());
        Ok(StepReport { step: self.step, loss_depth: 0.0, loss_photo: value, lr, seconds: started.elapsed().as_secs_f64() })
    }

    /// Depth-loss value (and per-iteration depths) without updating anything.
    /// `batch_stats` normalizes with per-sample statistics as during training
    /// instead of the running averages.
    pub fn evaluate_loss(&self, sample: &SceneSample, batch_stats: bool) -> Result<(f64, Vec<Tensor>)> {
        let opts = self.run_options(false);
        let mut g = if batch_stats { Graph::training() } else { Graph::new() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.model.forward(&mut g, &self.params, sample, &opts, &mut rng)?;
        let loss = depth_loss(&mut g, &out.depths, &sample.depth, self.config.d_min, self.config.d_max, self.config.gamma)?;
        Ok((g.value(loss).data()[0], out.depths.iter().map(|&d| g.value(d).clone()).collect()))
    }
}

/// A training-mode forward on `cx`, exposed for gradient checks of the
/// whole pipeline.
pub fn pipeline_loss(cx: &mut Cx, model: &Model, sample: &SceneSample, iterations: usize) -> Result<Var> {
    let opts = RunOptions { iterations, pose_step: None, photometric: false, ablate_pose: true, ablate_attention: false };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = model.forward(cx.g, cx.params, sample, &opts, &mut rng)?;
    depth_loss(cx.g, &out.depths, &sample.depth, model.config.d_min, model.config.d_max, 0.9)
}

/// Small fronto-parallel and slanted plane scenes for overfitting runs.
pub fn toy_samples(count: usize, size: usize, seed: u64) -> Result<Vec<SceneSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let depth = rng.random_range(0.6..1.5);
            let tilt: f64 = rng.random_range(-0.25..0.25);
            let normal = nalgebra::Vector3::new(tilt.sin(), 0.0, -tilt.cos());
            let spec = SceneSpec {
                width: size,
                height: size,
                focal: size as f64,
                planes: vec![Plane { depth, normal, max_x: None }],
                texture_period: size as f64 / 2.0,
                baseline: 0.1,
                views: 3,
                seed: seed.wrapping_mul(1000).wrapping_add(i as u64),
                ..SceneSpec::default()
            };
            let mut s = generate_planar_scene(&spec)?;
            s.name = format!("toy_{i:03}");
            Ok(s)
        })
        .collect()
}

/// Settings for a small memorization run on synthetic planes.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyRecipe {
    pub samples: usize,
    pub image_size: usize,
    pub steps: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub data_seed: u64,
    pub model_seed: u64,
    pub model: ModelConfig,
}

impl Default for ToyRecipe {
    fn default() -> Self {
        Self {
            samples: 10,
            image_size: 32,
            steps: 500,
            iterations: 8,
            learning_rate: 2e-3,
            data_seed: 7,
            model_seed: 0,
            model: ModelConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ToyOutcome {
    /// Mean depth loss over the samples before and after training, with the
    /// network in inference mode.
    pub initial_loss: f64,
    pub final_loss: f64,
    pub initial_abs_rel: f64,
    pub final_abs_rel: f64,
    pub log: Vec<StepReport>,
    /// Trained weights.
    pub params: ParamStore,
}

/// Mean depth loss and mean abs_rel of the last iteration, inference mode.
pub fn dataset_scores(trainer: &Trainer, samples: &[SceneSample]) -> Result<(f64, f64)> {
    let (mut loss, mut abs_rel) = (0.0, 0.0);
    for s in samples {
        let (l, depths) = trainer.evaluate_loss(s, false)?;
        let last = depths.last().ok_or_else(|| invalid("no depth emitted"))?;
        loss += l;
        abs_rel += evaluate_depth(last, &s.depth, trainer.config.d_min, trainer.config.d_max)?.abs_rel;
    }
    let n = samples.len() as f64;
    Ok((loss / n, abs_rel / n))
}

/// Pose warmup followed by `steps` single-sample updates cycling through the
/// samples at a constant learning rate.
pub fn run_toy_overfit(recipe: &ToyRecipe) -> Result<ToyOutcome> {
    let samples = toy_samples(recipe.samples, recipe.image_size, recipe.data_seed)?;
    let model = Model::new(recipe.model.clone())?;
    let params = model.init_params(recipe.model_seed);
    let config = TrainConfig {
        learning_rate: recipe.learning_rate,
        decay_epochs: Vec::new(),
        iterations_train: recipe.iterations,
        seed: recipe.data_seed,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(model, params, config)?;
    let (initial_loss, initial_abs_rel) = dataset_scores(&trainer, &samples)?;
    let mut log = trainer.warmup_pose(&samples, recipe.learning_rate)?;
    for step in 0..recipe.steps {
        log.push(trainer.train_step(&samples[step % samples.len()], recipe.learning_rate)?);
    }
    let (final_loss, final_abs_rel) = dataset_scores(&trainer, &samples)?;
    Ok(ToyOutcome { initial_loss, final_loss, initial_abs_rel, final_abs_rel, log, params: trainer.params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    fn small(variant: Variant) -> Model {
        Model::new(ModelConfig {
            variant,
            feature_channels: 8,
            fusion_channels: 8,
            attention_heads: 2,
            hidden_channels: 8,
            coarse_bins: 16,
            fine_bins: 32,
            lookup_radius: 2,
            ..ModelConfig::default()
        })
        .unwrap()
    }

    fn cfg() -> TrainConfig {
        TrainConfig { iterations_train: 2, learning_rate: 1e-3, ..TrainConfig::default() }
    }

    #[test]
    fn iteration_weights_for_three_steps() {
        assert_eq!(iteration_weights(3, 0.9), [0.81, 0.9, 1.0]);
        assert_eq!(iteration_weights(1, 0.9), [1.0]);
    }

    #[test]
    fn depth_loss_examples() {
        let mut g = Graph::new();
        let d = g.constant(Tensor::full(&[1, 1], 2.0));
        let l = depth_loss(&mut g, &[d], &Tensor::full(&[1, 1], 4.0), 0.25, 20.0, 0.9).unwrap();
        assert!((g.value(l).data()[0] - 0.25).abs() < 1e-12);

        let gt = Tensor::from_fn(&[2, 2], |i| [1.0, 2.0, 0.0, 30.0][i]);
        let d = g.constant(gt.map(|v| v.max(0.5)));
        let l = depth_loss(&mut g, &[d, d], &gt, 0.25, 20.0, 0.9).unwrap();
        assert_eq!(g.value(l).data()[0], 0.0);

        let bad = Tensor::from_fn(&[1, 2], |i| [0.0, f64::NAN][i]);
        let d = g.constant(Tensor::ones(&[1, 2]));
        assert!(matches!(depth_loss(&mut g, &[d], &bad, 0.25, 20.0, 0.9), Err(Error::UnusableSample(_))));
    }

    #[test]
    fn clipping_is_elementwise_and_idempotent() {
        let t = Tensor::from_fn(&[3], |i| [5.3, -0.2, -7.0][i]);
        let c = clip_gradient(&t, 1.0);
        assert_eq!(c.data(), [1.0, -0.2, -1.0]);
        assert_eq!(clip_gradient(&c, 1.0), c);
    }

    #[test]
    fn schedule_halves_at_decay_epochs() {
        let c = TrainConfig::default();
        assert_eq!(lr_schedule(0, &c), 1e-4);
        assert_eq!(lr_schedule(5, &c), 5e-5);
        assert_eq!(lr_schedule(9, &c), 2.5e-5);
    }

    #[test]
    fn adamw_first_step_moves_by_learning_rate() {
        let mut store = ParamStore::new(0);
        store.declare("w", &[2], crate::nn::Init::Zeros);
        let mut opt = AdamW::new(0.9, 0.999, 1e-8, 0.0);
        let grads = BTreeMap::from([("w".to_string(), Tensor::from_fn(&[2], |i| [0.5, -2.0][i]))]);
        opt.update(&mut store, &grads, 0.1).unwrap();
        let w = store.get("w").unwrap().data();
        assert!((w[0] + 0.1).abs() < 1e-6 && (w[1] - 0.1).abs() < 1e-6);
    }

    #[test]
    fn zero_learning_rate_leaves_weights_unchanged() {
        let model = small(Variant::PoseAttention);
        let params = model.init_params(1);
        let weights = |p: &ParamStore| p.fingerprint(|n| !n.contains("running_"));
        let before = weights(&params);
        let mut t = Trainer::new(model, params, cfg()).unwrap();
        let samples = toy_samples(1, 16, 2).unwrap();
        let r = t.train_step(&samples[0], 0.0).unwrap();
        assert!(r.loss_depth > 0.0);
        assert_eq!(weights(&t.params), before);
    }

    #[test]
    fn same_seed_gives_identical_loss_curves() {
        let samples = toy_samples(2, 16, 4).unwrap();
        let run = || {
            let model = small(Variant::Pose);
            let params = model.init_params(9);
            let mut t = Trainer::new(model, params, cfg()).unwrap();
            (0..3).map(|i| t.train_step(&samples[i % 2], 1e-3).unwrap().loss_depth.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn warmup_touches_only_the_pose_network() {
        let samples = toy_samples(2, 16, 5).unwrap();
        let model = small(Variant::PoseAttention);
        let params = model.init_params(3);
        let mut t = Trainer::new(model, params, cfg()).unwrap();
        let frozen = t.params.fingerprint(|n| !n.starts_with("pose."));
        let pose = t.params.fingerprint(|n| n.starts_with("pose."));
        let reports = t.warmup_pose(&samples, 1e-3).unwrap();
        assert_eq!(reports.len(), 2);
        assert_eq!(t.params.fingerprint(|n| !n.starts_with("pose.")), frozen);
        assert_ne!(t.params.fingerprint(|n| n.starts_with("pose.")), pose);
        assert!(t.params.iter().all(|(_, e)| e.role != Role::Weight || !e.frozen));

        t.config.warmup_epochs_pose = 0;
        let all = t.params.fingerprint(|_| true);
        assert!(t.warmup_pose(&samples, 1e-3).unwrap().is_empty());
        assert_eq!(t.params.fingerprint(|_| true), all);
    }

    #[test]
    fn log_line_has_five_fields() {
        let r = StepReport { step: 3, loss_depth: 0.5, loss_photo: 0.25, lr: 1e-4, seconds: 1.5 };
        assert_eq!(r.log_line().split(' ').count(), 5);
    }
}
