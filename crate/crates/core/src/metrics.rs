//! Depth-map error metrics.

use std::io::Write;

use crate::error::{invalid, Result};
use crate::numerics::Tensor;

pub const CSV_HEADER: &str = "sample,abs,abs_rel,sq_rel,rmse,rmse_log,d1,d2,d3,n_valid";

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DepthMetrics {
    pub abs: f64,
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub n_valid: usize,
}

impl DepthMetrics {
    pub fn csv_row(&self, name: &str) -> String {
        format!(
            "{name},{},{},{},{},{},{},{},{},{}",
            self.abs, self.abs_rel, self.sq_rel, self.rmse, self.rmse_log, self.delta1, self.delta2, self.delta3, self.n_valid
        )
    }
}

/// Nearest-neighbour resize of an `h × w` map (pixel-center aligned).
pub fn upsample_nearest(map: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let [h, w] = *map.shape() else {
        return Err(invalid(format!("depth map must be 2-D, got {:?}", map.shape())));
    };
    if (h, w) == (height, width) {
        return Ok(map.clone());
    }
    let pick = |i: usize, from: usize, to: usize| (((i as f64 + 0.5) * from as f64 / to as f64) as usize).min(from - 1);
    Ok(Tensor::from_fn(&[height, width], |i| {
        let (y, x) = (i / width, i % width);
        map.data()[pick(y, h, height) * w + pick(x, w, width)]
    }))
}

/// Metrics over pixels whose ground truth is finite and inside
/// `[d_min, d_max]`. Predictions at another resolution are resized to the
/// ground truth by nearest neighbour first.
pub fn evaluate_depth(pred: &Tensor, gt: &Tensor, d_min: f64, d_max: f64) -> Result<DepthMetrics> {
    let [h, w] = *gt.shape() else {
        return Err(invalid(format!("ground truth must be 2-D, got {:?}", gt.shape())));
    };
    let pred = upsample_nearest(pred, h, w)?;
    let mut m = DepthMetrics::default();
    let (mut sq, mut sq_log) = (0.0, 0.0);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        if !(g.is_finite() && g >= d_min && g <= d_max) {
            continue;
        }
        if !(p.is_finite() && p > 0.0) {
            return Err(invalid(format!("prediction {p} is not a positive depth")));
        }
        let diff = p - g;
        m.abs += diff.abs();
        m.abs_rel += diff.abs() / g;
        m.sq_rel += diff * diff / g;
        sq += diff * diff;
        sq_log += (p.ln() - g.ln()).powi(2);
        let ratio = (p / g).max(g / p);
        m.delta1 += f64::from(ratio < 1.25);
        m.delta2 += f64::from(ratio < 1.25f64.powi(2));
        m.delta3 += f64::from(ratio < 1.25f64.powi(3));
        m.n_valid += 1;
    }
    if m.n_valid == 0 {
        return Err(crate::Error::UnusableSample("no valid ground-truth pixels".into()));
    }
    let n = m.n_valid as f64;
    for v in [&mut m.abs, &mut m.abs_rel, &mut m.sq_rel, &mut m.delta1, &mut m.delta2, &mut m.delta3] {
        *v /= n;
    }
    m.rmse = (sq / n).sqrt();
    m.rmse_log = (sq_log / n).sqrt();
    Ok(m)
}

/// Mean of per-map metrics; `n_valid` is the total.
pub fn mean_metrics(rows: &[DepthMetrics]) -> DepthMetrics {
    let n = rows.len().max(1) as f64;
    let mean = |f: fn(&DepthMetrics) -> f64| rows.iter().map(f).sum::<f64>() / n;
    DepthMetrics {
        abs: mean(|m| m.abs),
        abs_rel: mean(|m| m.abs_rel),
        sq_rel: mean(|m| m.sq_rel),
        rmse: mean(|m| m.rmse),
        rmse_log: mean(|m| m.rmse_log),
        delta1: mean(|m| m.delta1),
        delta2: mean(|m| m.delta2),
        delta3: mean(|m| m.delta3),
        n_valid: rows.iter().map(|m| m.n_valid).sum(),
    }
}

/// Header, one row per sample, then a `mean` row.
pub fn write_metrics_csv<W: Write>(out: &mut W, rows: &[(String, DepthMetrics)]) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for (name, m) in rows {
        writeln!(out, "{}", m.csv_row(name))?;
    }
    let all: Vec<DepthMetrics> = rows.iter().map(|(_, m)| *m).collect();
    writeln!(out, "{}", mean_metrics(&all).csv_row("mean"))?;
    Ok(())
}
