//! Named finite-difference checks over every differentiable primitive and the
//! composite paths of the network, on inputs of at most 8×8 pixels.

use std::time::Instant;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::costvol::{build_cost_volume, build_matching_pyramid, lookup};
use crate::encoder::{Attention, ContextFeatures, Fusion, MultiScaleFeatures};
use crate::error::Result;
use crate::geometry::{axis_angle_to_rotation, make_depth_bins, CameraIntrinsics, PoseSE3};
use crate::nn::{Cx, ParamStore};
use crate::numerics::{finite_difference_check, FdOptions, FdReport, Graph, NumericsError, Tensor, ValidityMask, Var};
use crate::posenet::PoseNet;
use crate::training::depth_loss;
use crate::updater::{GruState, UpdateBlock};

/// Largest accepted relative error.
pub const TOLERANCE: f64 = 1e-4;

pub struct GradCheck {
    pub name: &'static str,
    run: fn() -> Result<FdReport>,
}

impl GradCheck {
    pub fn run(&self) -> CheckOutcome {
        let started = Instant::now();
        let result = (self.run)();
        let seconds = started.elapsed().as_secs_f64();
        match result {
            Ok(r) => CheckOutcome {
                name: self.name,
                max_relative_error: r.max_relative_error,
                probes: r.probes,
                seconds,
                error: None,
            },
            Err(e) => CheckOutcome { name: self.name, max_relative_error: f64::INFINITY, probes: 0, seconds, error: Some(e.to_string()) },
        }
    }
}

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub max_relative_error: f64,
    pub probes: usize,
    pub seconds: f64,
    pub error: Option<String>,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.max_relative_error < TOLERANCE && self.probes > 0
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor {
    let mut r = rng(seed);
    Tensor::from_fn(shape, |_| r.random_range(lo..hi))
}

/// Values with magnitude in `[0.1, 1]` and random sign, away from kinks at 0.
fn signed_away_from_zero(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng(seed);
    Tensor::from_fn(shape, |_| r.random_range(0.1..1.0) * if r.random::<bool>() { 1.0 } else { -1.0 })
}

fn primitive<F>(op: F, inputs: &[Tensor], train: bool) -> Result<FdReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, NumericsError>,
{
    Ok(finite_difference_check(op, inputs, &FdOptions { train, ..FdOptions::default() })?)
}

const MAX_PROBES: usize = 24;
const EPSILON: f64 = 1e-5;
const FLOOR: f64 = 1e-3;

fn module_value<F>(build: &F, store: &ParamStore, inputs: &[Tensor], weights: &Tensor, train: bool) -> Result<f64>
where
    F: Fn(&mut Cx, &[Var]) -> Result<Var>,
{
    let mut g = if train { Graph::training() } else { Graph::new() };
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let mut cx = Cx::new(&mut g, store);
    let out = build(&mut cx, &vars)?;
    Ok(g.value(out).data().iter().zip(weights.data()).map(|(a, b)| a * b).sum())
}

/// Checks gradients with respect to both the data inputs and every trainable
/// parameter the module binds, by perturbing inputs and stored parameter
/// values directly.
fn module<F>(store: &ParamStore, inputs: &[Tensor], train: bool, build: F) -> Result<FdReport>
where
    F: Fn(&mut Cx, &[Var]) -> Result<Var>,
{
    let mut g = if train { Graph::training() } else { Graph::new() };
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let mut cx = Cx::new(&mut g, store);
    let out = build(&mut cx, &vars)?;
    let weights = signed_away_from_zero(g.shape(out), 0x5eed);
    let loss = g.weighted_sum(out, &weights)?;
    g.backward(loss)?;
    let grad_of = |v: Var| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(g.shape(v)));
    let input_grads: Vec<Tensor> = vars.iter().map(|&v| grad_of(v)).collect();
    let param_grads: Vec<(String, Tensor)> = g
        .bound_params()
        .filter(|&(_, v)| g.requires_grad(v))
        .map(|(n, v)| (n.to_string(), grad_of(v)))
        .collect();

    let mut report = FdReport { max_relative_error: 0.0, worst: None, probes: 0 };
    let mut record = |analytic: f64, plus: f64, minus: f64, at: (usize, usize)| {
        let numeric = (plus - minus) / (2.0 * EPSILON);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR);
        report.probes += 1;
        if rel >= report.max_relative_error {
            report.max_relative_error = rel;
            report.worst = Some(at);
        }
    };
    let probes = |n: usize| (0..n).step_by(n.div_ceil(MAX_PROBES).max(1));
    for (i, input) in inputs.iter().enumerate() {
        for j in probes(input.len()) {
            let shifted = |d: f64| {
                let mut xs = inputs.to_vec();
                xs[i].data_mut()[j] += d;
                module_value(&build, store, &xs, &weights, train)
            };
            record(input_grads[i].data()[j], shifted(EPSILON)?, shifted(-EPSILON)?, (i, j));
        }
    }
    for (k, (name, grad)) in param_grads.iter().enumerate() {
        let value = store.get(name)?;
        for j in probes(value.len()) {
            let shifted = |d: f64| {
                let mut s = store.clone();
                let mut v = value.clone();
                v.data_mut()[j] += d;
                s.set(name, v)?;
                module_value(&build, &s, inputs, &weights, train)
            };
            record(grad.data()[j], shifted(EPSILON)?, shifted(-EPSILON)?, (inputs.len() + k, j));
        }
    }
    Ok(report)
}

/// Store with every parameter (including zero-initialized heads and gates)
/// set to small random values.
fn randomized(declare: impl FnOnce(&mut ParamStore), seed: u64) -> Result<ParamStore> {
    let mut store = ParamStore::new(seed);
    declare(&mut store);
    let names: Vec<(String, Vec<usize>, bool)> = store
        .iter()
        .map(|(n, e)| (n.to_string(), e.value.shape().to_vec(), n.ends_with("running_var")))
        .collect();
    for (k, (name, shape, positive)) in names.into_iter().enumerate() {
        let t = if positive { random(&shape, 0.5, 1.5, seed + k as u64) } else { random(&shape, -0.4, 0.4, seed + k as u64) };
        store.set(&name, t)?;
    }
    Ok(store)
}

fn unit_intrinsics(size: usize) -> CameraIntrinsics {
    let s = size as f64;
    CameraIntrinsics::new(s, s, (s - 1.0) / 2.0, (s - 1.0) / 2.0, size, size).expect("valid intrinsics")
}

fn small_motion(seed: u64) -> PoseSE3 {
    let mut r = rng(seed);
    let axis = Vector3::new(r.random_range(-0.03..0.03), r.random_range(-0.03..0.03), r.random_range(-0.03..0.03));
    PoseSE3::new(
        axis_angle_to_rotation(&axis),
        Vector3::new(r.random_range(-0.3..0.3), r.random_range(-0.1..0.1), r.random_range(-0.05..0.05)),
    )
}

macro_rules! check {
    ($name:literal, $body:expr) => {
        GradCheck { name: $name, run: || $body }
    };
}

fn unary(op: fn(&mut Graph, Var) -> Result<Var, NumericsError>, input: Tensor) -> Result<FdReport> {
    primitive(move |g, v| op(g, v[0]), &[input], false)
}

/// Every check in the suite, primitives first.
pub fn suite() -> Vec<GradCheck> {
    vec![
        check!("add", primitive(|g, v| g.add(v[0], v[1]), &[random(&[4, 4, 2], -1.0, 1.0, 1), random(&[4, 4, 2], -1.0, 1.0, 2)], false)),
        check!("sub", primitive(|g, v| g.sub(v[0], v[1]), &[random(&[4, 4, 2], -1.0, 1.0, 3), random(&[4, 4, 2], -1.0, 1.0, 4)], false)),
        check!("mul", primitive(|g, v| g.mul(v[0], v[1]), &[random(&[4, 4, 2], -1.0, 1.0, 5), random(&[4, 4, 2], -1.0, 1.0, 6)], false)),
        check!("div", primitive(|g, v| g.div(v[0], v[1]), &[random(&[4, 4, 2], -1.0, 1.0, 7), random(&[4, 4, 2], 0.5, 2.0, 8)], false)),
        check!("scale", unary(|g, x| g.scale(x, -2.5), random(&[8, 8], -1.0, 1.0, 9))),
        check!("add_scalar", unary(|g, x| g.add_scalar(x, 0.7), random(&[8, 8], -1.0, 1.0, 10))),
        check!("relu", unary(|g, x| g.relu(x), signed_away_from_zero(&[8, 8], 11))),
        check!("tanh", unary(|g, x| g.tanh(x), random(&[8, 8], -2.0, 2.0, 12))),
        check!("sigmoid", unary(|g, x| g.sigmoid(x), random(&[8, 8], -3.0, 3.0, 13))),
        check!("exp", unary(|g, x| g.exp(x), random(&[8, 8], -1.0, 1.0, 14))),
        check!("abs", unary(|g, x| g.abs(x), signed_away_from_zero(&[8, 8], 15))),
        check!("square", unary(|g, x| g.square(x), random(&[8, 8], -1.0, 1.0, 16))),
        check!("reciprocal", unary(|g, x| g.reciprocal(x), random(&[8, 8], 0.5, 2.0, 17))),
        check!("clamp", unary(|g, x| g.clamp(x, -0.5, 0.5), {
            random(&[8, 8], -1.0, 1.0, 18).map(|v| if (v.abs() - 0.5).abs() < 0.05 { v * 0.5 } else { v })
        })),
        check!("add_bias", primitive(|g, v| g.add_bias(v[0], v[1]), &[random(&[4, 4, 3], -1.0, 1.0, 19), random(&[3], -1.0, 1.0, 20)], false)),
        check!("mul_scalar_var", primitive(|g, v| g.mul_scalar_var(v[0], v[1]), &[random(&[4, 4, 3], -1.0, 1.0, 21), random(&[1], -1.0, 1.0, 22)], false)),
        check!("sum", unary(|g, x| g.sum(x), random(&[8, 8], -1.0, 1.0, 23))),
        check!("mean", unary(|g, x| g.mean(x), random(&[8, 8], -1.0, 1.0, 24))),
        check!("weighted_sum", unary(|g, x| g.weighted_sum(x, &random(&[8, 8], -1.0, 1.0, 25)), random(&[8, 8], -1.0, 1.0, 26))),
        check!("masked_mean", unary(|g, x| g.masked_mean(x, &random(&[8, 8], 0.0, 1.0, 27).map(|v| if v > 0.5 { 1.0 } else { 0.0 })), random(&[8, 8], -1.0, 1.0, 28))),
        check!("sum_lastdim", unary(|g, x| g.sum_lastdim(x), random(&[4, 4, 5], -1.0, 1.0, 29))),
        check!("reshape", unary(|g, x| g.reshape(x, &[2, 8, 4]), random(&[8, 8], -1.0, 1.0, 30))),
        check!("concat_lastdim", primitive(|g, v| g.concat_lastdim(&[v[0], v[1]]), &[random(&[4, 4, 2], -1.0, 1.0, 31), random(&[4, 4, 3], -1.0, 1.0, 32)], false)),
        check!("narrow_lastdim", unary(|g, x| g.narrow_lastdim(x, 1, 3), random(&[4, 4, 5], -1.0, 1.0, 33))),
        check!("transpose2d", unary(|g, x| g.transpose2d(x), random(&[5, 7], -1.0, 1.0, 34))),
        check!("matmul", primitive(|g, v| g.matmul(v[0], v[1]), &[random(&[5, 7], -1.0, 1.0, 35), random(&[7, 3], -1.0, 1.0, 36)], false)),
        check!("softmax_lastdim", unary(|g, x| g.softmax_lastdim(x), random(&[4, 4, 6], -2.0, 2.0, 37))),
        check!("conv2d", primitive(|g, v| g.conv2d(v[0], v[1], Some(v[2]), 1, 1), &[random(&[6, 6, 3], -1.0, 1.0, 38), random(&[3, 3, 3, 4], -0.5, 0.5, 39), random(&[4], -0.5, 0.5, 40)], false)),
        check!("conv2d_strided", primitive(|g, v| g.conv2d(v[0], v[1], None, 2, 1), &[random(&[8, 8, 2], -1.0, 1.0, 41), random(&[3, 3, 2, 3], -0.5, 0.5, 42)], false)),
        check!("batch_norm_train", primitive(|g, v| Ok(g.batch_norm_train(v[0], v[1], v[2], 1e-5)?.0), &[random(&[4, 4, 3], -1.0, 1.0, 43), random(&[3], 0.5, 1.5, 44), random(&[3], -0.5, 0.5, 45)], true)),
        check!("batch_norm_eval", primitive(|g, v| g.batch_norm_eval(v[0], v[1], v[2], &[0.1, -0.2, 0.3], &[0.5, 1.0, 2.0], 1e-5), &[random(&[4, 4, 3], -1.0, 1.0, 46), random(&[3], 0.5, 1.5, 47), random(&[3], -0.5, 0.5, 48)], false)),
        check!("avg_pool2", unary(|g, x| g.avg_pool2(x), random(&[8, 8, 2], -1.0, 1.0, 49))),
        check!("avg_pool_depth", unary(|g, x| g.avg_pool_depth(x), random(&[4, 4, 8], -1.0, 1.0, 50))),
        check!("resize_bilinear", unary(|g, x| g.resize_bilinear(x, 7, 5), random(&[4, 3, 2], -1.0, 1.0, 51))),
        check!("upsample", unary(|g, x| g.upsample(x, 2), random(&[4, 4, 2], -1.0, 1.0, 52))),
        check!("downsample", unary(|g, x| g.downsample(x, 2), random(&[8, 8, 2], -1.0, 1.0, 53))),
        check!("box3_reflect", unary(|g, x| g.box3_reflect(x), random(&[6, 5, 2], -1.0, 1.0, 54))),
        check!("global_avg_pool", unary(|g, x| g.global_avg_pool(x), random(&[4, 4, 3], -1.0, 1.0, 55))),
        check!("grid_sample_bilinear", primitive(
            |g, v| Ok(g.grid_sample_bilinear(v[0], v[1])?.0),
            &[random(&[6, 6, 2], 0.0, 1.0, 56), random(&[4, 4, 2], 0.3, 4.7, 57)],
            false,
        )),
        check!("gather_linear_lastdim", primitive(
            |g, v| g.gather_linear_lastdim(v[0], v[1]),
            &[random(&[4, 4, 8], -1.0, 1.0, 58), random(&[4, 4, 5], -0.7, 7.7, 59)],
            false,
        )),
        check!("rodrigues", unary(|g, x| g.rodrigues(x), random(&[3], -0.6, 0.6, 60))),
        check!("rodrigues_small_angle", unary(|g, x| g.rodrigues(x), random(&[3], -3e-3, 3e-3, 61))),
        check!("project_grid", primitive(
            |g, v| g.project_grid(v[0], v[1], v[2], unit_intrinsics(6), unit_intrinsics(6)),
            &[
                random(&[6, 6], 1.0, 3.0, 62),
                Tensor::new(&[3, 3], axis_angle_to_rotation(&Vector3::new(0.05, -0.02, 0.03)).transpose().as_slice().to_vec())
                    .expect("3×3"),
                random(&[3], -0.3, 0.3, 63),
            ],
            false,
        )),
        check!("cost_volume", cost_volume()),
        check!("matching_pyramid_lookup", pyramid_lookup()),
        check!("convex_upsample", primitive(
            |g, v| {
                let w = g.softmax_lastdim(v[1])?;
                g.convex_upsample(v[0], w, 4)
            },
            &[random(&[2, 2], 0.0, 15.0, 64), random(&[2, 2, 16, 9], -1.0, 1.0, 65)],
            false,
        )),
        check!("depth_sampling", depth_sampling()),
        check!("depth_loss", depth_loss_check()),
        check!("photometric_loss", photometric()),
        check!("fusion_layer", fusion()),
        check!("attention_block", attention()),
        check!("gru_step", gru_step()),
        check!("update_heads", update_heads()),
        check!("pose_network", pose_network()),
    ]
}

fn cost_volume() -> Result<FdReport> {
    let bins = make_depth_bins(0.5, 10.0, 8)?;
    let k = unit_intrinsics(6);
    let poses = [small_motion(70), small_motion(71)];
    primitive(
        move |g, v| {
            build_cost_volume(g, v[0], &v[1..], &bins, &k, &[k, k], &poses)
                .map(|c| c.values)
                .map_err(|e| NumericsError::Shape(e.to_string()))
        },
        &[random(&[6, 6, 4], -1.0, 1.0, 72), random(&[6, 6, 4], -1.0, 1.0, 73), random(&[6, 6, 4], -1.0, 1.0, 74)],
        false,
    )
}

fn pyramid_lookup() -> Result<FdReport> {
    primitive(
        |g, v| {
            let pyr = build_matching_pyramid(g, v[0], true).map_err(|e| NumericsError::Shape(e.to_string()))?;
            lookup(g, &pyr, v[1], 2).map_err(|e| NumericsError::Shape(e.to_string()))
        },
        &[random(&[3, 3, 16], -1.0, 1.0, 75), random(&[3, 3], 0.3, 14.7, 76).map(|p| p.floor() + 0.1 + 0.8 * p.fract())],
        false,
    )
}

fn depth_sampling() -> Result<FdReport> {
    let bins = make_depth_bins(0.5, 10.0, 32)?;
    primitive(
        move |g, v| g.sample_depth(v[0], v[1], &bins, 4.0),
        &[
            random(&[4, 4], 0.2, 7.8, 77).map(|p| p.floor() + 0.1 + 0.8 * p.fract()),
            random(&[4, 4, 32], 0.05, 1.0, 78),
        ],
        false,
    )
}

fn depth_loss_check() -> Result<FdReport> {
    let gt = random(&[4, 4], 0.5, 5.0, 79).map(|d| if d > 4.6 { 0.0 } else { d });
    primitive(
        move |g, v| depth_loss(g, &[v[0], v[1], v[2]], &gt, 0.25, 20.0, 0.9).map_err(|e| NumericsError::Shape(e.to_string())),
        &[random(&[4, 4], 0.5, 5.0, 80), random(&[4, 4], 0.5, 5.0, 81), random(&[4, 4], 0.5, 5.0, 82)],
        false,
    )
}

fn photometric() -> Result<FdReport> {
    let k = unit_intrinsics(8);
    let pose = small_motion(83);
    let rot = Tensor::new(&[3, 3], pose.rotation.transpose().as_slice().to_vec())?;
    let trans = Tensor::new(&[3], pose.translation.as_slice().to_vec())?;
    let reference = random(&[8, 8, 3], 0.0, 1.0, 84);
    primitive(
        move |g, v| {
            let delta = g.rodrigues(v[0])?;
            let r = g.constant(rot.clone());
            let r = g.matmul(delta, r)?;
            let t = g.constant(trans.clone());
            let grid = g.project_grid(v[2], r, t, k, k)?;
            let (warped, mask) = g.grid_sample_bilinear(v[1], grid)?;
            let reference = g.constant(reference.clone());
            g.photometric_loss(reference, warped, &mask)
        },
        &[random(&[3], -0.02, 0.02, 85), random(&[8, 8, 3], 0.0, 1.0, 86), random(&[8, 8], 2.0, 4.0, 87)],
        false,
    )
    .and_then(|r| {
        // the masked SSIM/L1 mixture on its own, against both images
        let mask = ValidityMask::new(&[8, 8], (0..64).map(|i| i % 7 != 0).collect());
        let own = primitive(
            move |g, v| g.photometric_loss(v[0], v[1], &mask),
            &[random(&[8, 8, 3], 0.0, 1.0, 88), random(&[8, 8, 3], 0.0, 1.0, 89)],
            false,
        )?;
        Ok(worse(r, own))
    })
}

fn worse(a: FdReport, b: FdReport) -> FdReport {
    let probes = a.probes + b.probes;
    let mut r = if a.max_relative_error >= b.max_relative_error { a } else { b };
    r.probes = probes;
    r
}

fn fusion() -> Result<FdReport> {
    let f0 = 4;
    let layer = Fusion::new(f0, 6);
    let store = randomized(|s| layer.declare(s), 90)?;
    let shapes = [[8, 8, f0], [4, 4, f0], [2, 2, f0], [1, 1, f0]];
    let inputs: Vec<Tensor> =
        (0..2).flat_map(|view| shapes.iter().enumerate().map(move |(i, s)| random(s, -1.0, 1.0, 91 + 4 * view + i as u64))).collect();
    module(&store, &inputs, true, |cx, v| {
        let views = [MultiScaleFeatures { maps: [v[0], v[1], v[2], v[3]] }, MultiScaleFeatures { maps: [v[4], v[5], v[6], v[7]] }];
        let out = layer.forward_views(cx, &views)?;
        Ok(cx.g.concat_lastdim(&out)?)
    })
}

fn attention() -> Result<FdReport> {
    let block = Attention::new(8, 2);
    let store = randomized(|s| block.declare(s), 100)?;
    module(&store, &[random(&[4, 4, 8], -1.0, 1.0, 101)], false, |cx, v| block.forward(cx, v[0]))
}

fn gru_inputs(hidden: usize, lookup_channels: usize) -> Vec<Tensor> {
    let mut out = Vec::new();
    for (i, s) in [4usize, 2, 1].into_iter().enumerate() {
        out.push(random(&[s, s, hidden], -0.9, 0.9, 110 + i as u64));
    }
    for (i, s) in [4usize, 2, 1].into_iter().enumerate() {
        out.push(random(&[s, s, hidden], 0.0, 1.0, 113 + i as u64));
    }
    out.push(random(&[4, 4], 0.0, 15.0, 116));
    out.push(random(&[4, 4, lookup_channels], -1.0, 1.0, 117));
    out
}

fn gru_step() -> Result<FdReport> {
    let block = UpdateBlock::new(3, 5, 16, 32);
    let store = randomized(|s| block.declare(s), 120)?;
    module(&store, &gru_inputs(3, 5), false, |cx, v| {
        let state = GruState { hidden: [v[0], v[1], v[2]] };
        let ctx = ContextFeatures { hidden: [v[0], v[1], v[2]], context: [v[3], v[4], v[5]] };
        let (next, delta) = block.step(cx, &state, &ctx, v[6], v[7])?;
        let d = cx.g.reshape(delta, &[4, 4, 1])?;
        Ok(cx.g.concat_lastdim(&[d, next.hidden[0]])?)
    })
}

fn update_heads() -> Result<FdReport> {
    let block = UpdateBlock::new(3, 5, 16, 32);
    let store = randomized(|s| block.declare(s), 130)?;
    let fine = make_depth_bins(0.5, 10.0, 32)?;
    let phi = random(&[2, 2], 0.5, 14.5, 131).map(|p| p.floor() + 0.1 + 0.8 * p.fract());
    module(&store, &[random(&[2, 2, 3], -0.9, 0.9, 132), phi], false, |cx, v| Ok(block.decode(cx, v[0], v[1], &fine)?.0))
}

fn pose_network() -> Result<FdReport> {
    let net = PoseNet::new(0.5, true);
    let store = randomized(|s| net.declare(s), 140)?;
    module(&store, &[random(&[8, 8, 3], 0.0, 1.0, 141), random(&[8, 8, 3], 0.0, 1.0, 142)], false, |cx, v| {
        let (rot, trans) = net.forward(cx, v[0], v[1])?;
        let r = cx.g.rodrigues(rot)?;
        let r = cx.g.reshape(r, &[9])?;
        let t = trans.expect("translation head enabled");
        Ok(cx.g.concat_lastdim(&[r, t])?)
    })
}

/// A deliberately wrong backward (`d(x²)/dx` reported as `x`), used to show
/// that the suite catches broken gradients.
pub fn broken_check() -> GradCheck {
    check!(
        "broken_square_fixture",
        primitive(
            |g, v| {
                let value = g.value(v[0]).map(|x| x * x);
                g.push("broken_square", value, &[v[0]], |c| vec![Some(c.inputs[0].zip_map(c.grad, |x, d| x * d))])
            },
            &[random(&[4, 4], 0.5, 1.5, 150)],
            false,
        )
    )
}

pub fn run_suite(checks: &[GradCheck]) -> Vec<CheckOutcome> {
    checks.iter().map(GradCheck::run).collect()
}
