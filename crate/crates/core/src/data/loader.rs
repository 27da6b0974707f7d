//! Scene directories:
//!
//! ```text
//! scene/intrinsics.txt
//! scene/frames/%06d.png   8-bit RGB
//! scene/depth/%06d.png    16-bit millimeters, 0 = invalid
//! scene/poses/%06d.txt    row-major 4×4 camera-to-world
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use super::io::{read_depth_png, read_intrinsics, read_pose, read_rgb_png, write_depth_png, write_intrinsics, write_pose, write_rgb_png};
use super::SceneSample;
use crate::error::{invalid, Error, Result};
use crate::geometry::{CameraIntrinsics, PoseSE3};
use crate::numerics::Tensor;

/// One rendered or captured frame of a sequence.
#[derive(Clone, Debug)]
pub struct Frame {
    pub image: Tensor,
    pub depth: Tensor,
    pub pose: PoseSE3,
}

pub fn write_scene_directory(dir: &Path, k: &CameraIntrinsics, frames: &[Frame]) -> Result<()> {
    for sub in ["frames", "depth", "poses"] {
        fs::create_dir_all(dir.join(sub))?;
    }
    write_intrinsics(&dir.join("intrinsics.txt"), k)?;
    for (i, f) in frames.iter().enumerate() {
        write_rgb_png(&dir.join(format!("frames/{i:06}.png")), &f.image)?;
        write_depth_png(&dir.join(format!("depth/{i:06}.png")), &f.depth)?;
        write_pose(&dir.join(format!("poses/{i:06}.txt")), &f.pose)?;
    }
    Ok(())
}

fn frame_indices(dir: &Path) -> Result<Vec<usize>> {
    let frames = dir.join("frames");
    if !frames.is_dir() {
        return Err(Error::MissingFile(frames));
    }
    let mut idx = Vec::new();
    for entry in fs::read_dir(&frames)? {
        let name = entry?.file_name();
        let name = name.to_string_lossy();
        if let Some(stem) = name.strip_suffix(".png") {
            if let Ok(i) = stem.parse::<usize>() {
                idx.push(i);
            }
        }
    }
    idx.sort_unstable();
    Ok(idx)
}

/// Reference frames `first + k·stride` whose `±half·stride` neighbours, with
/// `half = (n_views − 1)/2`, all exist.
pub fn sample_centers(indices: &[usize], stride: usize, n_views: usize) -> Vec<usize> {
    let (Some(&first), Some(&last)) = (indices.first(), indices.last()) else {
        return Vec::new();
    };
    let half = (n_views - 1) / 2;
    let reach = half * stride;
    (first..=last)
        .step_by(stride.max(1))
        .filter(|&c| c >= first + reach && c + reach <= last)
        .filter(|&c| (1..=half).all(|o| indices.binary_search(&(c - o * stride)).is_ok() && indices.binary_search(&(c + o * stride)).is_ok()))
        .collect()
}

/// Samples with the middle frame as reference and the frames at
/// `±stride, ±2·stride, …` as sources (nearest first, negative offset first).
pub fn load_scene_directory(dir: &Path, stride: usize, n_views: usize) -> Result<Vec<SceneSample>> {
    if n_views < 3 || n_views % 2 == 0 {
        return Err(invalid(format!("n_views must be odd and at least 3, got {n_views}")));
    }
    if stride == 0 {
        return Err(invalid("sample stride must be positive"));
    }
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    let k = read_intrinsics(&dir.join("intrinsics.txt"))?;
    let indices = frame_indices(dir)?;
    if indices.is_empty() {
        return Err(invalid(format!("{} contains no frames", dir.display())));
    }
    let scene = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "scene".into());
    let half = (n_views - 1) / 2;
    let mut samples = Vec::new();
    for c in sample_centers(&indices, stride, n_views) {
        let mut views = vec![c];
        for o in 1..=half {
            views.push(c - o * stride);
            views.push(c + o * stride);
        }
        let mut images = Vec::with_capacity(n_views);
        let mut poses = Vec::with_capacity(n_views);
        for &v in &views {
            images.push(read_rgb_png(&dir.join(format!("frames/{v:06}.png")))?);
            poses.push(read_pose(&dir.join(format!("poses/{v:06}.txt")))?);
        }
        let depth = read_depth_png(&dir.join(format!("depth/{c:06}.png")))?;
        let sample = SceneSample { name: format!("{scene}_{c:06}"), images, intrinsics: vec![k; n_views], poses, depth };
        sample.validate()?;
        samples.push(sample);
    }
    Ok(samples)
}

/// A single scene directory, or a directory of scene directories (visited in
/// name order).
pub fn load_dataset(root: &Path, stride: usize, n_views: usize) -> Result<Vec<SceneSample>> {
    if !root.is_dir() {
        return Err(Error::MissingFile(root.to_path_buf()));
    }
    if root.join("intrinsics.txt").exists() {
        return load_scene_directory(root, stride, n_views);
    }
    let mut scenes: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("intrinsics.txt").exists())
        .collect();
    scenes.sort();
    if scenes.is_empty() {
        return Err(invalid(format!("{} contains no scene directories", root.display())));
    }
    let mut out = Vec::new();
    for s in scenes {
        out.extend(load_scene_directory(&s, stride, n_views)?);
    }
    Ok(out)
}
