//! Posed multi-view samples: synthetic generation, dataset directories and
//! image/depth file formats.

mod io;
mod loader;
mod synth;

pub use io::{
    read_depth_png, read_intrinsics, read_pfm, read_pose, read_rgb_png, write_depth_png, write_depth_preview,
    write_intrinsics, write_pfm, write_pose, write_rgb_png,
};
pub use loader::{load_dataset, load_scene_directory, sample_centers, write_scene_directory, Frame};
pub use synth::{generate_planar_scene, render_view, Plane, SceneSpec};

use crate::error::{invalid, Result};
use crate::geometry::{CameraIntrinsics, PoseSE3};
use crate::numerics::Tensor;

/// One reference view (index 0) and its source views.
#[derive(Clone, Debug)]
pub struct SceneSample {
    pub name: String,
    /// `H × W × 3` images with values in `[0, 1]`.
    pub images: Vec<Tensor>,
    pub intrinsics: Vec<CameraIntrinsics>,
    /// Camera-to-world poses.
    pub poses: Vec<PoseSE3>,
    /// Reference-view depth in meters; 0 marks invalid pixels.
    pub depth: Tensor,
}

impl SceneSample {
    pub fn validate(&self) -> Result<()> {
        let n = self.images.len();
        if n < 2 || self.intrinsics.len() != n || self.poses.len() != n {
            return Err(invalid(format!("sample {} needs ≥2 views with matching intrinsics and poses", self.name)));
        }
        let shape = self.images[0].shape();
        let [h, w, 3] = *shape else {
            return Err(invalid(format!("sample {}: images must be H×W×3", self.name)));
        };
        for (img, k) in self.images.iter().zip(&self.intrinsics) {
            if img.shape() != shape || k.width != w || k.height != h {
                return Err(invalid(format!("sample {}: views disagree in size", self.name)));
            }
        }
        if self.depth.shape() != [h, w] {
            return Err(invalid(format!("sample {}: depth must be {h}×{w}", self.name)));
        }
        if self.depth.data().iter().any(|&d| d < 0.0) {
            return Err(invalid(format!("sample {}: negative depth", self.name)));
        }
        Ok(())
    }

    pub fn height(&self) -> usize {
        self.images[0].shape()[0]
    }

    pub fn width(&self) -> usize {
        self.images[0].shape()[1]
    }

    pub fn n_views(&self) -> usize {
        self.images.len()
    }

    /// Reference-to-source transforms, one per source view.
    pub fn relative_poses(&self) -> Vec<PoseSE3> {
        self.poses[1..].iter().map(|src| PoseSE3::relative(&self.poses[0], src)).collect()
    }
}
