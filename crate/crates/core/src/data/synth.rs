//! Procedurally textured planar scenes rendered by exact ray-plane
//! intersection.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::SceneSample;
use crate::error::{invalid, Result};
use crate::geometry::{axis_angle_to_rotation, sample_rotation_noise, CameraIntrinsics, PoseSE3};
use crate::numerics::Tensor;

/// Plane through the reference-camera point `(0, 0, depth)` with unit normal
/// `normal` (reference frame). With `max_x` set, the plane only exists where
/// the world x coordinate is below that value, which makes it an occluder.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub depth: f64,
    pub normal: Vector3<f64>,
    pub max_x: Option<f64>,
}

impl Plane {
    pub fn fronto_parallel(depth: f64) -> Self {
        Self { depth, normal: Vector3::new(0.0, 0.0, -1.0), max_x: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub planes: Vec<Plane>,
    /// Coarsest texture period in reference-view pixels at the plane's depth.
    pub texture_period: f64,
    pub texture_octaves: usize,
    /// Camera offsets from the reference, in meters.
    pub baseline: f64,
    /// Standard deviation of the random rotation applied to each source camera.
    pub rotation_jitter: f64,
    pub views: usize,
    pub d_min: f64,
    pub d_max: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 32,
            height: 32,
            focal: 32.0,
            planes: vec![Plane::fronto_parallel(2.0)],
            texture_period: 32.0,
            texture_octaves: 4,
            baseline: 0.3,
            rotation_jitter: 0.0,
            views: 3,
            d_min: 0.25,
            d_max: 20.0,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.width % 16 != 0 || self.height % 16 != 0 {
            return Err(invalid(format!("image size {}×{} must be a positive multiple of 16", self.width, self.height)));
        }
        if self.planes.is_empty() {
            return Err(invalid("scene needs at least one plane"));
        }
        for p in &self.planes {
            if !(p.depth > self.d_min && p.depth < self.d_max) {
                return Err(invalid(format!(
                    "plane depth {} outside ({}, {})",
                    p.depth, self.d_min, self.d_max
                )));
            }
            if (p.normal.norm() - 1.0).abs() > 1e-9 || p.normal.z >= 0.0 {
                return Err(invalid("plane normals must be unit length and face the reference camera"));
            }
        }
        if self.views < 2 || !(self.focal > 0.0) || !(self.texture_period > 0.0) || self.texture_octaves == 0 {
            return Err(invalid("scene needs ≥2 views, positive focal length and texture period"));
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics {
            fx: self.focal,
            fy: self.focal,
            cx: (self.width as f64 - 1.0) / 2.0,
            cy: (self.height as f64 - 1.0) / 2.0,
            width: self.width,
            height: self.height,
        }
    }

    /// Camera-to-world pose of view `i`; view 0 is the world frame.
    pub fn camera_pose(&self, i: usize) -> PoseSE3 {
        if i == 0 {
            return PoseSE3::identity();
        }
        let b = self.baseline;
        let dirs = [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0), (0.7, 0.7), (-0.7, -0.7), (0.7, -0.7), (-0.7, 0.7)];
        let (dx, dy) = dirs[(i - 1) % dirs.len()];
        let ring = 1.0 + ((i - 1) / dirs.len()) as f64;
        let t = Vector3::new(dx * b * ring, dy * b * ring, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_mul(0x9e37_79b9).wrapping_add(i as u64));
        let r = axis_angle_to_rotation(&sample_rotation_noise(self.rotation_jitter, &mut rng));
        PoseSE3::new(r, t)
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn lattice(ix: i64, iy: i64, seed: u64) -> f64 {
    let h = splitmix(seed ^ splitmix((ix as u64).wrapping_mul(0x1f1f_1f1f) ^ splitmix(iy as u64)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn value_noise(x: f64, y: f64, seed: u64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let (sx, sy) = (smoothstep(x - fx), smoothstep(y - fy));
    let a = lattice(ix, iy, seed) * (1.0 - sx) + lattice(ix + 1, iy, seed) * sx;
    let b = lattice(ix, iy + 1, seed) * (1.0 - sx) + lattice(ix + 1, iy + 1, seed) * sx;
    a * (1.0 - sy) + b * sy
}

/// Sum of octaves of value noise with halving period and amplitude, in `[0, 1]`
/// and concentrated around 0.5 (renders stretch it for contrast).
fn texture(x: f64, y: f64, octaves: usize, seed: u64) -> f64 {
    let mut total = 0.0;
    let mut norm = 0.0;
    let mut amp = 1.0;
    let mut freq = 1.0;
    for o in 0..octaves {
        total += amp * value_noise(x * freq, y * freq, splitmix(seed.wrapping_add(o as u64)));
        norm += amp;
        amp *= 0.5;
        freq *= 2.0;
    }
    total / norm
}

fn plane_basis(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let e1 = n.cross(&helper).normalize();
    let e2 = n.cross(&e1);
    (e1, e2)
}

/// Renders the scene from a camera-to-world pose: an `H × W × 3` image and the
/// z-depth of each pixel's nearest visible plane (0 where no plane is hit).
pub fn render_view(spec: &SceneSpec, k: &CameraIntrinsics, c2w: &PoseSE3) -> (Tensor, Tensor) {
    let (h, w) = (k.height, k.width);
    let mut image = Tensor::zeros(&[h, w, 3]);
    let mut depth = Tensor::zeros(&[h, w]);
    for v in 0..h {
        for u in 0..w {
            let dir = c2w.rotation * k.ray(u as f64, v as f64);
            let origin = c2w.translation;
            let mut best: Option<(f64, usize)> = None;
            for (pi, p) in spec.planes.iter().enumerate() {
                let anchor = Vector3::new(0.0, 0.0, p.depth);
                let denom = p.normal.dot(&dir);
                if denom.abs() < 1e-12 {
                    continue;
                }
                let s = p.normal.dot(&(anchor - origin)) / denom;
                if s <= 0.0 {
                    continue;
                }
                let hit = origin + dir * s;
                if p.max_x.is_some_and(|mx| hit.x >= mx) {
                    continue;
                }
                if best.is_none_or(|(bs, _)| s < bs) {
                    best = Some((s, pi));
                }
            }
            let Some((s, pi)) = best else {
                for c in 0..3 {
                    image.set(&[v, u, c], 0.5);
                }
                continue;
            };
            let p = &spec.planes[pi];
            let hit = origin + dir * s;
            let (e1, e2) = plane_basis(&p.normal);
            let rel = hit - Vector3::new(0.0, 0.0, p.depth);
            // texture units: one coarsest period spans `texture_period` reference pixels
            let unit = spec.texture_period * p.depth / spec.focal;
            let (a, b) = (rel.dot(&e1) / unit, rel.dot(&e2) / unit);
            for c in 0..3 {
                let seed = splitmix(spec.seed ^ ((pi as u64) << 8) ^ c as u64);
                let t = texture(a, b, spec.texture_octaves, seed);
                image.set(&[v, u, c], 0.5 + 0.45 * (4.0 * (t - 0.5)).tanh());
            }
            depth.set(&[v, u], s);
        }
    }
    (image, depth)
}

/// Renders all views of `spec`. View 0 is the reference.
pub fn generate_planar_scene(spec: &SceneSpec) -> Result<SceneSample> {
    spec.validate()?;
    let k = spec.intrinsics();
    let mut images = Vec::with_capacity(spec.views);
    let mut poses = Vec::with_capacity(spec.views);
    let mut depth = Tensor::zeros(&[spec.height, spec.width]);
    for i in 0..spec.views {
        let pose = spec.camera_pose(i);
        let (img, d) = render_view(spec, &k, &pose);
        if i == 0 {
            depth = d;
        }
        images.push(img);
        poses.push(pose);
    }
    let sample = SceneSample {
        name: format!("synthetic_{:06}", spec.seed),
        images,
        intrinsics: vec![k; spec.views],
        poses,
        depth,
    };
    sample.validate()?;
    Ok(sample)
}
