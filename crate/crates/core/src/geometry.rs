//! Pinhole cameras, rigid poses, inverse-depth hypothesis bins and the
//! backward plane-induced warp that maps reference pixels into a source view.

use nalgebra::{Matrix3, Matrix4, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};

use crate::error::{invalid, Result};
use crate::numerics::{Graph, NumericsError, Tensor, Var};

/// Coordinate written into warp grids for points behind the source camera.
/// Any sampler treats it as outside the image.
pub const INVALID_COORD: f64 = -1.0e6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || width == 0 || height == 0 || !cx.is_finite() || !cy.is_finite() {
            return Err(invalid(format!(
                "intrinsics need positive focal lengths and size, got fx={fx} fy={fy} {width}x{height}"
            )));
        }
        Ok(Self { fx, fy, cx, cy, width, height })
    }

    /// Intrinsics at resolution `1/s`: focal lengths and principal point are
    /// divided by `s`.
    pub fn scaled(&self, s: usize) -> Self {
        let f = s as f64;
        Self {
            fx: self.fx / f,
            fy: self.fy / f,
            cx: self.cx / f,
            cy: self.cy / f,
            width: self.width / s,
            height: self.height / s,
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Unit-depth ray `K⁻¹ (u, v, 1)ᵀ`.
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    pub fn project(&self, p: &Vector3<f64>) -> (f64, f64) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }
}

/// Rigid transform `x ↦ R x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseSE3 {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for PoseSE3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl PoseSE3 {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn from_rotation(rotation: Matrix3<f64>) -> Self {
        Self { rotation, translation: Vector3::zeros() }
    }

    /// `self · other`: apply `other` first.
    pub fn compose(&self, other: &PoseSE3) -> PoseSE3 {
        PoseSE3 {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> PoseSE3 {
        let rt = self.rotation.transpose();
        PoseSE3 { rotation: rt, translation: -(rt * self.translation) }
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_matrix(m: &Matrix4<f64>) -> Result<Self> {
        let pose = PoseSE3 {
            rotation: m.fixed_view::<3, 3>(0, 0).into_owned(),
            translation: m.fixed_view::<3, 1>(0, 3).into_owned(),
        };
        if orthonormality_error(&pose.rotation) > 1e-4 || (pose.rotation.determinant() - 1.0).abs() > 1e-4 {
            return Err(invalid("pose rotation block is not a rotation"));
        }
        Ok(pose)
    }

    /// Transform taking reference-camera coordinates to source-camera
    /// coordinates, given both camera-to-world poses.
    pub fn relative(ref_to_world: &PoseSE3, src_to_world: &PoseSE3) -> PoseSE3 {
        src_to_world.inverse().compose(ref_to_world)
    }
}

/// `max |RᵀR − I|`.
pub fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).abs().max()
}

/// Angle of the relative rotation `R_aᵀ R_b`.
pub fn geodesic_angle(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let r = a.transpose() * b;
    ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

/// Left-composition `ΔΘ · Θ`.
pub fn rectify_pose(delta: &PoseSE3, pose: &PoseSE3) -> PoseSE3 {
    delta.compose(pose)
}

/// Depth hypotheses spaced uniformly in inverse depth; index 0 is the far
/// plane `d_max`, index `M-1` the near plane `d_min`.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthBins {
    pub values: Vec<f64>,
    pub d_min: f64,
    pub d_max: f64,
}

pub fn make_depth_bins(d_min: f64, d_max: f64, count: usize) -> Result<DepthBins> {
    if !(d_min > 0.0 && d_min < d_max && d_max.is_finite()) {
        return Err(invalid(format!("depth range needs 0 < d_min < d_max, got [{d_min}, {d_max}]")));
    }
    if count < 2 {
        return Err(invalid(format!("need at least 2 depth bins, got {count}")));
    }
    let (near, far) = (1.0 / d_min, 1.0 / d_max);
    let last = (count - 1) as f64;
    let values = (0..count).map(|i| 1.0 / (far + (i as f64 / last) * (near - far))).collect();
    Ok(DepthBins { values, d_min, d_max })
}

impl DepthBins {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Depth at a real-valued index, linearly interpolating the bin values.
    pub fn depth_at(&self, index: f64) -> f64 {
        let last = self.values.len() - 1;
        let x = index.clamp(0.0, last as f64);
        let i0 = (x.floor() as usize).min(last);
        let f = x - i0 as f64;
        if i0 == last {
            self.values[last]
        } else {
            self.values[i0] * (1.0 - f) + self.values[i0 + 1] * f
        }
    }

    /// Real-valued index whose inverse depth equals `1/depth`.
    pub fn index_of(&self, depth: f64) -> f64 {
        let (near, far) = (1.0 / self.d_min, 1.0 / self.d_max);
        (1.0 / depth - far) / (near - far) * (self.values.len() - 1) as f64
    }
}

/// Per-pixel depth source for [`warp_grid`].
#[derive(Clone, Copy, Debug)]
pub enum Depth<'a> {
    Plane(f64),
    /// `H × W` map in meters.
    Map(&'a Tensor),
}

/// Source-view pixel coordinates for every reference pixel, `H × W × 2`.
///
/// Back-projects each reference pixel with `K_ref⁻¹`, scales by depth,
/// transforms by `pose` (reference → source) and projects with `K_src`.
/// Points landing at or behind the source camera get [`INVALID_COORD`].
pub fn warp_grid(
    k_ref: &CameraIntrinsics,
    k_src: &CameraIntrinsics,
    pose: &PoseSE3,
    depth: Depth<'_>,
) -> Result<Tensor> {
    let (h, w) = (k_ref.height, k_ref.width);
    match depth {
        Depth::Plane(d) if !(d > 0.0) => {
            return Err(invalid(format!("plane depth must be positive, got {d}")))
        }
        Depth::Map(m) if m.shape() != [h, w] => {
            return Err(invalid(format!("depth map {:?} does not match {h}x{w}", m.shape())))
        }
        _ => {}
    }
    let mut data = Vec::with_capacity(h * w * 2);
    for v in 0..h {
        for u in 0..w {
            let d = match depth {
                Depth::Plane(d) => d,
                Depth::Map(m) => m.data()[v * w + u],
            };
            let p = pose.transform(&(k_ref.ray(u as f64, v as f64) * d));
            if !(d > 0.0) || p.z <= 1e-9 {
                data.extend_from_slice(&[INVALID_COORD, INVALID_COORD]);
            } else {
                let (x, y) = k_src.project(&p);
                data.extend_from_slice(&[x, y]);
            }
        }
    }
    Ok(Tensor::new(&[h, w, 2], data)?)
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues coefficients `A = sin θ/θ`, `B = (1 − cos θ)/θ²` and their
/// derivatives with respect to `s = θ²`.
fn rodrigues_coeffs(s: f64) -> (f64, f64, f64, f64) {
    let theta = s.sqrt();
    if theta < 1e-2 {
        let a = 1.0 - s / 6.0 + s * s / 120.0 - s * s * s / 5040.0;
        let b = 0.5 - s / 24.0 + s * s / 720.0 - s * s * s / 40320.0;
        let da = -1.0 / 6.0 + s / 60.0 - s * s / 1680.0;
        let db = -1.0 / 24.0 + s / 360.0 - s * s / 13440.0;
        (a, b, da, db)
    } else {
        let (sn, cs) = theta.sin_cos();
        let a = sn / theta;
        let b = (1.0 - cs) / s;
        let da = (theta * cs - sn) / (2.0 * s * theta);
        let db = (theta * sn - 2.0 * (1.0 - cs)) / (2.0 * s * s);
        (a, b, da, db)
    }
}

/// Rotation matrix for an axis-angle vector (radians × unit axis).
pub fn axis_angle_to_rotation(v: &Vector3<f64>) -> Matrix3<f64> {
    let s = v.norm_squared();
    if s.sqrt() < 1e-8 {
        return Matrix3::identity();
    }
    let (a, b, _, _) = rodrigues_coeffs(s);
    let k = skew(v);
    Matrix3::identity() + k * a + k * k * b
}

/// Inverse of [`axis_angle_to_rotation`] for angles in `[0, π]`.
pub fn rotation_to_axis_angle(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let theta = cos.acos();
    let vee = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    if theta < 1e-8 {
        return vee * 0.5;
    }
    if std::f64::consts::PI - theta < 1e-4 {
        // sin θ ≈ 0: recover the axis from the symmetric part (R + I)/2 = n nᵀ.
        let b = (r + Matrix3::identity()) * 0.5;
        let i = (0..3).max_by(|&x, &y| b[(x, x)].total_cmp(&b[(y, y)])).unwrap();
        let ni = b[(i, i)].max(0.0).sqrt();
        let mut n = Vector3::zeros();
        for j in 0..3 {
            n[j] = if j == i { ni } else { b[(i, j)] / ni };
        }
        if n.dot(&vee) < 0.0 {
            n = -n;
        }
        return n.normalize() * theta;
    }
    vee * (theta / (2.0 * theta.sin()))
}

/// Random rotation vector: uniform axis, angle drawn from `N(0, sigma)`.
pub fn sample_rotation_noise<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> Vector3<f64> {
    let axis: [f64; 3] = UnitSphere.sample(rng);
    let angle = if sigma > 0.0 { Normal::new(0.0, sigma).unwrap().sample(rng) } else { 0.0 };
    Vector3::from(axis) * angle
}

/// Left-multiplies a random rotation whose angle is drawn from a zero-mean
/// Gaussian with standard deviation `sigma_rot` (radians).
pub fn inject_pose_noise(pose: &PoseSE3, sigma_rot: f64, seed: u64) -> Result<PoseSE3> {
    if !(sigma_rot >= 0.0) {
        return Err(invalid(format!("rotation noise sigma must be >= 0, got {sigma_rot}")));
    }
    if sigma_rot == 0.0 {
        return Ok(*pose);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = sample_rotation_noise(sigma_rot, &mut rng);
    Ok(rectify_pose(&PoseSE3::from_rotation(axis_angle_to_rotation(&v)), pose))
}

fn mat_from(t: &Tensor) -> Matrix3<f64> {
    Matrix3::from_row_slice(t.data())
}

impl Graph {
    /// Differentiable Rodrigues map: `[3] → [3, 3]` (row-major rotation).
    pub fn rodrigues(&mut self, v: Var) -> Result<Var, NumericsError> {
        if self.shape(v) != [3] {
            return Err(NumericsError::Shape("rodrigues expects a 3-vector".into()));
        }
        let vv = Vector3::from_row_slice(self.value(v).data());
        let (a, b, _, _) = rodrigues_coeffs(vv.norm_squared());
        let k = skew(&vv);
        let r = Matrix3::identity() + k * a + k * k * b;
        let value = Tensor::from_parts(vec![3, 3], r.transpose().as_slice().to_vec());
        self.push("rodrigues", value, &[v], |c| {
            let v = Vector3::from_row_slice(c.inputs[0].data());
            let s = v.norm_squared();
            let (a, b, da, db) = rodrigues_coeffs(s);
            let g = mat_from(c.grad);
            let k = skew(&v);
            let k2 = k * k;
            let gk = g.component_mul(&k).sum();
            let gk2 = g.component_mul(&k2).sum();
            let gv = g * v;
            let gtv = g.transpose() * v;
            let tr = g.trace();
            let skew_terms = [g[(2, 1)] - g[(1, 2)], g[(0, 2)] - g[(2, 0)], g[(1, 0)] - g[(0, 1)]];
            let d: Vec<f64> = (0..3)
                .map(|i| {
                    2.0 * v[i] * (da * gk + db * gk2)
                        + a * skew_terms[i]
                        + b * (gv[i] + gtv[i] - 2.0 * v[i] * tr)
                })
                .collect();
            vec![Some(Tensor::from_parts(vec![3], d))]
        })
    }

    /// Differentiable per-pixel warp grid: reference depth `H × W`, rotation
    /// `[3, 3]` and translation `[3]` (reference → source) to source pixel
    /// coordinates `H × W × 2`. Points behind the source camera get
    /// [`INVALID_COORD`] and no gradient.
    pub fn project_grid(
        &mut self,
        depth: Var,
        rotation: Var,
        translation: Var,
        k_ref: CameraIntrinsics,
        k_src: CameraIntrinsics,
    ) -> Result<Var, NumericsError> {
        let (h, w) = (k_ref.height, k_ref.width);
        if self.shape(depth) != [h, w] || self.shape(rotation) != [3, 3] || self.shape(translation) != [3] {
            return Err(NumericsError::Shape("project_grid: depth/rotation/translation shapes".into()));
        }
        let r = mat_from(self.value(rotation));
        let t = Vector3::from_row_slice(self.value(translation).data());
        let dv = self.value(depth).data();
        let mut data = Vec::with_capacity(h * w * 2);
        for v in 0..h {
            for u in 0..w {
                let d = dv[v * w + u];
                let p = r * (k_ref.ray(u as f64, v as f64) * d) + t;
                if !(d > 0.0) || p.z <= 1e-9 {
                    data.extend_from_slice(&[INVALID_COORD, INVALID_COORD]);
                } else {
                    let (x, y) = k_src.project(&p);
                    data.extend_from_slice(&[x, y]);
                }
            }
        }
        let value = Tensor::from_parts(vec![h, w, 2], data);
        self.push("project_grid", value, &[depth, rotation, translation], move |c| {
            let dv = c.inputs[0].data();
            let r = mat_from(c.inputs[1]);
            let t = Vector3::from_row_slice(c.inputs[2].data());
            let gy = c.grad.data();
            let mut dd = vec![0.0; h * w];
            let mut dr = Matrix3::<f64>::zeros();
            let mut dt = Vector3::<f64>::zeros();
            for v in 0..h {
                for u in 0..w {
                    let i = v * w + u;
                    let d = dv[i];
                    let ray = k_ref.ray(u as f64, v as f64);
                    let x = ray * d;
                    let p = r * x + t;
                    if !(d > 0.0) || p.z <= 1e-9 {
                        continue;
                    }
                    let (gu, gv) = (gy[2 * i], gy[2 * i + 1]);
                    let gp = Vector3::new(
                        gu * k_src.fx / p.z,
                        gv * k_src.fy / p.z,
                        -(gu * k_src.fx * p.x + gv * k_src.fy * p.y) / (p.z * p.z),
                    );
                    dr += gp * x.transpose();
                    dt += gp;
                    dd[i] = (r.transpose() * gp).dot(&ray);
                }
            }
            vec![
                Some(Tensor::from_parts(vec![h, w], dd)),
                Some(Tensor::from_parts(vec![3, 3], dr.transpose().as_slice().to_vec())),
                Some(Tensor::from_parts(vec![3], dt.as_slice().to_vec())),
            ]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn k(f: f64, c: f64, size: usize) -> CameraIntrinsics {
        CameraIntrinsics::new(f, f, c, c, size, size).unwrap()
    }

    #[test]
    fn depth_bin_endpoints_and_second_bin() {
        let bins = make_depth_bins(0.25, 20.0, 64).unwrap();
        assert!((bins.values[0] - 20.0).abs() < 1e-12);
        assert!((bins.values[63] - 0.25).abs() < 1e-12);
        let expect = 1.0 / (0.05 + 3.95 / 63.0);
        assert!((bins.values[1] - expect).abs() < 1e-12);
        assert!((bins.values[1] - 8.8732).abs() < 1e-4);
    }

    #[test]
    fn depth_bins_reject_degenerate_ranges() {
        assert!(make_depth_bins(1.0, 1.0, 8).is_err());
        assert!(make_depth_bins(0.0, 1.0, 8).is_err());
        assert!(make_depth_bins(0.5, 1.0, 1).is_err());
    }

    #[test]
    fn depth_bin_reciprocals_are_affine_in_index() {
        let bins = make_depth_bins(0.25, 20.0, 256).unwrap();
        let inv: Vec<f64> = bins.values.iter().map(|d| 1.0 / d).collect();
        let n = inv.len() as f64;
        let mx = (n - 1.0) / 2.0;
        let my = inv.iter().sum::<f64>() / n;
        let sxy: f64 = inv.iter().enumerate().map(|(i, y)| (i as f64 - mx) * (y - my)).sum();
        let sxx: f64 = (0..inv.len()).map(|i| (i as f64 - mx).powi(2)).sum();
        let slope = sxy / sxx;
        for (i, y) in inv.iter().enumerate() {
            assert!((y - (my + slope * (i as f64 - mx))).abs() < 1e-9);
        }
        assert!(bins.values.windows(2).all(|w| w[0] > w[1]));
        assert!((bins.index_of(bins.values[17]) - 17.0).abs() < 1e-9);
    }

    #[test]
    fn identity_pose_warp_is_identity_grid() {
        let kk = k(30.0, 7.5, 16);
        for d in [0.3, 1.0, 17.0] {
            let g = warp_grid(&kk, &kk, &PoseSE3::identity(), Depth::Plane(d)).unwrap();
            for v in 0..16 {
                for u in 0..16 {
                    assert!((g.get(&[v, u, 0]) - u as f64).abs() < 1e-12);
                    assert!((g.get(&[v, u, 1]) - v as f64).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn hand_evaluated_translation_warp() {
        let kk = k(100.0, 50.0, 101);
        let pose = PoseSE3::new(Matrix3::identity(), Vector3::new(0.1, 0.0, 0.0));
        let g = warp_grid(&kk, &kk, &pose, Depth::Plane(2.0)).unwrap();
        assert!((g.get(&[50, 50, 0]) - 55.0).abs() < 1e-12);
        assert!((g.get(&[50, 50, 1]) - 50.0).abs() < 1e-12);
        assert!(warp_grid(&kk, &kk, &pose, Depth::Plane(0.0)).is_err());
    }

    #[test]
    fn points_behind_source_camera_are_flagged() {
        let kk = k(10.0, 2.0, 5);
        let pose = PoseSE3::new(Matrix3::identity(), Vector3::new(0.0, 0.0, -3.0));
        let g = warp_grid(&kk, &kk, &pose, Depth::Plane(2.0)).unwrap();
        assert!(g.data().iter().all(|&c| c == INVALID_COORD));
    }

    #[test]
    fn rodrigues_examples() {
        assert_eq!(axis_angle_to_rotation(&Vector3::zeros()), Matrix3::identity());
        let r = axis_angle_to_rotation(&Vector3::new(PI / 2.0, 0.0, 0.0));
        let expect = Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        assert!((r - expect).abs().max() < 1e-12);
    }

    #[test]
    fn rectification_examples() {
        let theta = PoseSE3::new(
            axis_angle_to_rotation(&Vector3::new(0.1, -0.2, 0.05)),
            Vector3::new(0.3, 0.1, -0.2),
        );
        assert_eq!(rectify_pose(&PoseSE3::identity(), &theta), theta);
        let noisy = inject_pose_noise(&theta, 0.05, 3).unwrap();
        let delta = theta.compose(&noisy.inverse());
        let restored = rectify_pose(&delta, &noisy);
        assert!((restored.to_matrix() - theta.to_matrix()).abs().max() < 1e-9);

        let d1 = PoseSE3::from_rotation(axis_angle_to_rotation(&Vector3::new(0.01, 0.0, 0.02)));
        let d2 = PoseSE3::new(axis_angle_to_rotation(&Vector3::new(0.0, 0.03, 0.0)), Vector3::new(0.1, 0.0, 0.0));
        let a = rectify_pose(&d2, &rectify_pose(&d1, &theta));
        let b = rectify_pose(&rectify_pose(&d2, &d1), &theta);
        assert!((a.to_matrix() - b.to_matrix()).abs().max() < 1e-12);
    }

    #[test]
    fn pose_noise_contract() {
        let pose = PoseSE3::new(axis_angle_to_rotation(&Vector3::new(0.2, 0.1, 0.0)), Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(inject_pose_noise(&pose, 0.0, 9).unwrap(), pose);
        assert_eq!(inject_pose_noise(&pose, 0.1, 9).unwrap(), inject_pose_noise(&pose, 0.1, 9).unwrap());
        assert!(inject_pose_noise(&pose, -1.0, 9).is_err());
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let drawn = sample_rotation_noise(0.3, &mut rng).norm();
            let noisy = inject_pose_noise(&pose, 0.3, seed).unwrap();
            assert!((geodesic_angle(&noisy.rotation, &pose.rotation) - drawn).abs() < 1e-6);
        }
    }

    #[test]
    fn relative_pose_maps_reference_points_into_source_frame() {
        let ref_c2w = PoseSE3::new(axis_angle_to_rotation(&Vector3::new(0.0, 0.1, 0.0)), Vector3::new(0.5, 0.0, 0.0));
        let src_c2w = PoseSE3::new(axis_angle_to_rotation(&Vector3::new(0.05, 0.0, 0.0)), Vector3::new(0.0, 0.2, 0.1));
        let rel = PoseSE3::relative(&ref_c2w, &src_c2w);
        let x_ref = Vector3::new(0.1, -0.2, 2.0);
        let world = ref_c2w.transform(&x_ref);
        let x_src = src_c2w.inverse().transform(&world);
        assert!((rel.transform(&x_ref) - x_src).norm() < 1e-12);
    }

    #[test]
    fn long_composition_chains_stay_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut acc = PoseSE3::identity();
        for _ in 0..100 {
            let d = PoseSE3::from_rotation(axis_angle_to_rotation(&sample_rotation_noise(0.5, &mut rng)));
            acc = rectify_pose(&d, &acc);
        }
        assert!(orthonormality_error(&acc.rotation) < 1e-6);
        assert!((acc.rotation.determinant() - 1.0).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn axis_angle_round_trip(x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0, angle in 0.0f64..3.1) {
            let axis = Vector3::new(x, y, z);
            prop_assume!(axis.norm() > 1e-3);
            let v = axis.normalize() * angle;
            let r = axis_angle_to_rotation(&v);
            // independent route: nalgebra's exponential map
            let oracle = Rotation3::from_scaled_axis(v);
            prop_assert!((r - oracle.matrix()).abs().max() < 1e-9);
            let back = axis_angle_to_rotation(&rotation_to_axis_angle(&r));
            prop_assert!((back - r).abs().max() < 1e-6);
        }

        #[test]
        fn inverse_rectification_restores_pose(a in -0.5f64..0.5, b in -0.5f64..0.5, c in -0.5f64..0.5) {
            let pose = PoseSE3::new(axis_angle_to_rotation(&Vector3::new(0.3, -0.1, 0.2)), Vector3::new(0.2, 0.4, -1.0));
            let delta = PoseSE3::from_rotation(axis_angle_to_rotation(&Vector3::new(a, b, c)));
            let back = rectify_pose(&delta.inverse(), &rectify_pose(&delta, &pose));
            prop_assert!((back.to_matrix() - pose.to_matrix()).abs().max() < 1e-9);
        }
    }
}
