use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use idxmvs_core::checkpoint::{load_params, save_params};
use idxmvs_core::data::{
    load_dataset, read_depth_png, read_pfm, render_view, write_depth_preview, write_pfm, write_scene_directory, Frame,
    Plane, SceneSpec,
};
use idxmvs_core::gradsuite::{broken_check, run_suite, suite, TOLERANCE};
use idxmvs_core::metrics::{evaluate_depth, write_metrics_csv};
use idxmvs_core::training::lr_schedule;
use idxmvs_core::{Model, RunOptions, SceneSample, Tensor, Trainer};

use crate::config::{RunConfig, CHECKPOINT_KEYS};
use crate::{EvalArgs, GradcheckArgs, InferArgs, RunArgs, SynthArgs, TrainArgs, UsageError};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let (d_min, d_max) = (0.25, 20.0);
    if !(a.depth > d_min && a.depth < d_max) {
        return Err(usage(format!("--depth {} must lie strictly between {d_min} and {d_max} m", a.depth)));
    }
    if a.planes == 0 || a.frames < 2 {
        return Err(usage("need at least one plane and two frames"));
    }
    if a.size == 0 || a.size % 16 != 0 {
        return Err(usage(format!("--size {} must be a positive multiple of 16", a.size)));
    }
    // plane 0 is the background; plane i is nearer and covers the left (n−i)/n
    // of the reference view
    let half_fov = 0.5;
    let planes: Vec<Plane> = (0..a.planes)
        .map(|i| {
            let depth = a.depth / (1.0 + 0.5 * i as f64);
            let normal = nalgebra::Vector3::new(a.tilt.sin(), 0.0, -a.tilt.cos());
            let max_x = (i > 0).then(|| depth * half_fov * (2.0 * (a.planes - i) as f64 / a.planes as f64 - 1.0));
            Plane { depth, normal, max_x }
        })
        .collect();
    let spec = SceneSpec {
        width: a.size,
        height: a.size,
        focal: a.size as f64,
        planes,
        texture_period: a.size as f64 / 2.0,
        baseline: a.baseline,
        rotation_jitter: a.rotation_jitter,
        views: a.frames,
        seed: a.seed,
        d_min,
        d_max,
        ..SceneSpec::default()
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let k = spec.intrinsics();
    let frames: Vec<Frame> = (0..a.frames)
        .map(|i| {
            let pose = spec.camera_pose(i);
            let (image, depth) = render_view(&spec, &k, &pose);
            Frame { image, depth, pose }
        })
        .collect();
    write_scene_directory(&a.out, &k, &frames)?;
    info!("wrote {} frames to {}", a.frames, a.out.display());
    Ok(())
}

fn resolve(run: &RunArgs, base: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(p) = base {
        cfg.merge_file(p)?;
    }
    if let Some(p) = &run.config {
        cfg.merge_file(p)?;
    }
    for pair in &run.overrides {
        cfg.set_pair(pair)?;
    }
    if let Some(s) = run.seed {
        cfg.set("seed", &s.to_string())?;
    }
    Ok(cfg)
}

fn log_config(cfg: &RunConfig) {
    for line in cfg.render().lines() {
        info!("config: {line}");
    }
}

fn load_samples(cfg: &RunConfig) -> Result<Vec<SceneSample>> {
    let data = cfg.data().ok_or_else(|| usage("no dataset given (--data or data = ...)"))?;
    let samples = load_dataset(&data, cfg.stride()?, cfg.n_views()?)
        .with_context(|| format!("loading dataset {}", data.display()))?;
    if samples.is_empty() {
        bail!("{} yields no samples with {} views", data.display(), cfg.n_views()?);
    }
    Ok(samples)
}

fn sidecar(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("cfg")
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut cfg = resolve(&a.run, None)?;
    if let Some(d) = &a.data {
        cfg.set("data", &d.to_string_lossy())?;
    }
    if let Some(o) = &a.out {
        cfg.set("out", &o.to_string_lossy())?;
    }
    if let Some(v) = a.variant {
        cfg.set_variant(v);
    }
    if let Some(s) = a.steps {
        cfg.set("steps", &s.to_string())?;
    }
    log_config(&cfg);
    let model_cfg = cfg.model_config()?;
    let train_cfg = cfg.train_config()?;
    let steps = cfg.steps()?;
    let samples = load_samples(&cfg)?;
    let out = cfg.out();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let model = Model::new(model_cfg)?;
    let params = model.init_params(train_cfg.seed);
    let mut trainer = Trainer::new(model, params, train_cfg.clone())?;
    let mut log = fs::File::create(out.join("train.log"))?;
    for line in cfg.render().lines() {
        writeln!(log, "# {line}")?;
    }
    writeln!(log, "# step loss_depth loss_photo lr seconds")?;

    let total = steps.unwrap_or(train_cfg.epochs * samples.len());
    if total > 0 {
        let lr0 = lr_schedule(0, &train_cfg);
        for r in trainer.warmup_pose(&samples, lr0)? {
            writeln!(log, "warmup {}", r.log_line())?;
        }
        let mut order: Vec<usize> = Vec::new();
        for step in 0..total {
            let epoch = step / samples.len();
            if step % samples.len() == 0 {
                order = (0..samples.len()).collect();
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(train_cfg.seed.wrapping_add(epoch as u64)));
            }
            let lr = lr_schedule(epoch, &train_cfg);
            let r = trainer.train_step(&samples[order[step % samples.len()]], lr)?;
            writeln!(log, "{}", r.log_line())?;
            info!("step {step}: depth loss {:.5} photometric {:.5}", r.loss_depth, r.loss_photo);
        }
    }
    let ckpt = out.join("checkpoint.bin");
    save_params(&ckpt, &trainer.params)?;
    fs::write(sidecar(&ckpt), cfg.render_keys(|k| CHECKPOINT_KEYS.contains(&k)))?;
    info!("wrote {} after {total} steps", ckpt.display());
    Ok(())
}

pub fn infer(a: &InferArgs) -> Result<()> {
    let side = sidecar(&a.checkpoint);
    let mut cfg = resolve(&a.run, side.exists().then_some(side.as_path()))?;
    if let Some(d) = &a.data {
        cfg.set("data", &d.to_string_lossy())?;
    }
    log_config(&cfg);
    let model = Model::new(cfg.model_config()?)?;
    let train_cfg = cfg.train_config()?;
    let iterations = a.iterations.unwrap_or(train_cfg.iterations_infer);
    if iterations == 0 {
        return Err(usage("--iterations must be at least 1"));
    }
    let opts = RunOptions {
        iterations,
        pose_step: model.config.variant.uses_pose().then(|| cfg.pose_step_for(iterations)).transpose()?,
        photometric: false,
        ablate_pose: a.ablate_pose,
        ablate_attention: a.ablate_atten,
    };
    let mut params = model.init_params(0);
    load_params(&a.checkpoint, &mut params).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let samples = load_samples(&cfg)?;
    fs::create_dir_all(&a.out)?;
    if a.emit_iters {
        fs::create_dir_all(a.out.join("iters"))?;
    }
    if let Some(g) = &a.gt_out {
        fs::create_dir_all(g)?;
    }
    for s in &samples {
        let pred = model.predict(&params, s, &opts)?;
        let last = pred.depths.last().expect("at least one iteration");
        write_pfm(&a.out.join(format!("{}.pfm", s.name)), last)?;
        if a.preview {
            write_depth_preview(&a.out.join(format!("{}.png", s.name)), last, train_cfg.d_min, train_cfg.d_max)?;
        }
        if a.emit_iters {
            for (t, d) in pred.depths.iter().enumerate() {
                write_pfm(&a.out.join(format!("iters/{}_t{:02}.pfm", s.name, t + 1)), d)?;
            }
        }
        if let Some(g) = &a.gt_out {
            write_pfm(&g.join(format!("{}.pfm", s.name)), &s.depth)?;
        }
        info!("{}: {iterations} iterations", s.name);
    }
    Ok(())
}

fn stems(dir: &Path, exts: &[&str]) -> Result<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    for e in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let p = e?.path();
        let ext = p.extension().and_then(|x| x.to_str()).unwrap_or("");
        if exts.contains(&ext) {
            if let Some(stem) = p.file_stem().and_then(|x| x.to_str()) {
                out.insert(stem.to_string());
            }
        }
    }
    Ok(out)
}

fn read_gt(dir: &Path, stem: &str) -> Result<Tensor> {
    let pfm = dir.join(format!("{stem}.pfm"));
    if pfm.exists() {
        Ok(read_pfm(&pfm)?)
    } else {
        Ok(read_depth_png(&dir.join(format!("{stem}.png")))?)
    }
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let pred = stems(&a.pred, &["pfm"])?;
    let gt = stems(&a.gt, &["pfm", "png"])?;
    let no_gt: Vec<&String> = pred.difference(&gt).collect();
    let no_pred: Vec<&String> = gt.difference(&pred).collect();
    if !no_gt.is_empty() || !no_pred.is_empty() {
        bail!("file sets differ: no ground truth for {no_gt:?}; no prediction for {no_pred:?}");
    }
    if pred.is_empty() {
        bail!("{} contains no predictions", a.pred.display());
    }
    let mut rows = Vec::with_capacity(pred.len());
    for stem in &pred {
        let p = read_pfm(&a.pred.join(format!("{stem}.pfm")))?;
        let g = read_gt(&a.gt, stem)?;
        let m = evaluate_depth(&p, &g, a.d_min, a.d_max).with_context(|| format!("evaluating {stem}"))?;
        rows.push((stem.clone(), m));
    }
    match &a.out {
        Some(path) => {
            let mut f = fs::File::create(path)?;
            write_metrics_csv(&mut f, &rows)?;
            info!("wrote metrics for {} samples to {}", rows.len(), path.display());
        }
        None => write_metrics_csv(&mut std::io::stdout().lock(), &rows)?,
    }
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<()> {
    let mut checks = suite();
    if a.inject_broken {
        checks.push(broken_check());
    }
    let outcomes = run_suite(&checks);
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{:<36} {:>12} {:>7} {:>9}  result", "check", "max_rel_err", "probes", "seconds")?;
    for o in &outcomes {
        let verdict = if o.passed() { "ok" } else { "FAIL" };
        writeln!(stdout, "{:<36} {:>12.3e} {:>7} {:>9.3}  {verdict}", o.name, o.max_relative_error, o.probes, o.seconds)?;
        if let Some(e) = &o.error {
            writeln!(stdout, "    {e}")?;
        }
    }
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed()).map(|o| o.name).collect();
    writeln!(stdout, "{} checks, {} failed (tolerance {TOLERANCE:e})", outcomes.len(), failed.len())?;
    if !failed.is_empty() {
        bail!("gradient checks failed: {}", failed.join(", "));
    }
    Ok(())
}
