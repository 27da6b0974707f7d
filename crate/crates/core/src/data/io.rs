//! File formats: 8-bit RGB frames, 16-bit millimeter depth PNGs, PFM float
//! maps, pose and intrinsics text files.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma, Rgb};
use nalgebra::Matrix4;

use crate::error::{invalid, Error, Result};
use crate::geometry::{CameraIntrinsics, PoseSE3};
use crate::numerics::Tensor;

fn format_err(what: &'static str, detail: impl Into<String>) -> Error {
    Error::Format { what, detail: detail.into() }
}

fn open_image(path: &Path) -> Result<DynamicImage> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(image::open(path)?)
}

pub fn write_rgb_png(path: &Path, img: &Tensor) -> Result<()> {
    let [h, w, 3] = *img.shape() else {
        return Err(invalid(format!("RGB image must be H×W×3, got {:?}", img.shape())));
    };
    let bytes: Vec<u8> = img.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let buf = ImageBuffer::<Rgb<u8>, _>::from_raw(w as u32, h as u32, bytes).expect("buffer size matches");
    buf.save_with_format(path, ImageFormat::Png)?;
    Ok(())
}

/// Reads an image as `H × W × 3` in `[0, 1]`.
pub fn read_rgb_png(path: &Path) -> Result<Tensor> {
    let img = open_image(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|b| b as f64 / 255.0).collect();
    Ok(Tensor::new(&[h as usize, w as usize, 3], data)?)
}

/// 16-bit grayscale PNG in millimeters, rounded half-to-even; non-positive
/// or non-finite depths are written as 0 (invalid).
pub fn write_depth_png(path: &Path, depth: &Tensor) -> Result<()> {
    let [h, w] = *depth.shape() else {
        return Err(invalid(format!("depth map must be H×W, got {:?}", depth.shape())));
    };
    let mut mm = Vec::with_capacity(h * w);
    for &d in depth.data() {
        if !(d.is_finite() && d > 0.0) {
            mm.push(0u16);
            continue;
        }
        let v = (d * 1000.0).round_ties_even();
        if v > u16::MAX as f64 {
            return Err(invalid(format!("depth {d} m exceeds the 16-bit millimeter range")));
        }
        mm.push(v as u16);
    }
    let buf = ImageBuffer::<Luma<u16>, _>::from_raw(w as u32, h as u32, mm).expect("buffer size matches");
    buf.save_with_format(path, ImageFormat::Png)?;
    Ok(())
}

/// Depth in meters; stored zeros read back as 0 (invalid).
pub fn read_depth_png(path: &Path) -> Result<Tensor> {
    match open_image(path)? {
        DynamicImage::ImageLuma16(buf) => {
            let (w, h) = buf.dimensions();
            let data = buf.into_raw().into_iter().map(|v| v as f64 / 1000.0).collect();
            Ok(Tensor::new(&[h as usize, w as usize], data)?)
        }
        other => Err(format_err("depth png", format!("expected 16-bit grayscale, got {:?}", other.color()))),
    }
}

/// Single-channel PFM, little-endian, rows stored bottom-to-top.
pub fn write_pfm(path: &Path, map: &Tensor) -> Result<()> {
    let [h, w] = *map.shape() else {
        return Err(invalid(format!("PFM map must be H×W, got {:?}", map.shape())));
    };
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(h * w * 4);
    for row in (0..h).rev() {
        for &v in &map.data()[row * w..(row + 1) * w] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

fn header_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(format_err("pfm", "truncated header"));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

pub fn read_pfm(path: &Path) -> Result<Tensor> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path)?;
    let mut pos = 0;
    let magic = header_token(&bytes, &mut pos)?;
    if magic != "Pf" {
        return Err(format_err("pfm", format!("expected single-channel \"Pf\", got {magic:?}")));
    }
    let parse = |t: String| t.parse::<usize>().map_err(|_| format_err("pfm", format!("bad dimension {t:?}")));
    let w = parse(header_token(&bytes, &mut pos)?)?;
    let h = parse(header_token(&bytes, &mut pos)?)?;
    let scale_tok = header_token(&bytes, &mut pos)?;
    let scale: f64 = scale_tok.parse().map_err(|_| format_err("pfm", format!("bad scale {scale_tok:?}")))?;
    if scale == 0.0 {
        return Err(format_err("pfm", "zero scale"));
    }
    pos += 1; // single whitespace byte ends the header
    let payload = &bytes[pos.min(bytes.len())..];
    if payload.len() != w * h * 4 {
        return Err(format_err("pfm", format!("expected {} payload bytes, found {}", w * h * 4, payload.len())));
    }
    let mut data = vec![0.0; w * h];
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if scale < 0.0 { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (row, col) = (h - 1 - i / w, i % w);
        data[row * w + col] = v as f64;
    }
    Ok(Tensor::new(&[h, w], data)?)
}

fn color_ramp(t: f64) -> [u8; 3] {
    const STOPS: [[f64; 3]; 5] =
        [[0.19, 0.07, 0.23], [0.16, 0.47, 0.93], [0.30, 0.87, 0.45], [0.97, 0.73, 0.21], [0.48, 0.02, 0.01]];
    let x = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (x.floor() as usize).min(STOPS.len() - 2);
    let f = x - i as f64;
    let mut out = [0u8; 3];
    for c in 0..3 {
        out[c] = (((1.0 - f) * STOPS[i][c] + f * STOPS[i + 1][c]) * 255.0).round() as u8;
    }
    out
}

/// Color-mapped preview of a depth map; near is dark blue, far is red, in
/// inverse depth between `d_min` and `d_max`. Invalid pixels are black.
pub fn write_depth_preview(path: &Path, depth: &Tensor, d_min: f64, d_max: f64) -> Result<()> {
    let [h, w] = *depth.shape() else {
        return Err(invalid("depth preview needs an H×W map"));
    };
    let (near, far) = (1.0 / d_min, 1.0 / d_max);
    let mut bytes = Vec::with_capacity(h * w * 3);
    for &d in depth.data() {
        if d.is_finite() && d > 0.0 {
            bytes.extend_from_slice(&color_ramp((near - 1.0 / d) / (near - far)));
        } else {
            bytes.extend_from_slice(&[0, 0, 0]);
        }
    }
    let buf = ImageBuffer::<Rgb<u8>, _>::from_raw(w as u32, h as u32, bytes).expect("buffer size matches");
    buf.save_with_format(path, ImageFormat::Png)?;
    Ok(())
}

fn read_numbers(path: &Path, what: &'static str) -> Result<Vec<f64>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    fs::read_to_string(path)?
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| format_err(what, format!("{}: bad number {t:?}", path.display()))))
        .collect()
}

/// 16 whitespace-separated reals: a row-major 4×4 camera-to-world matrix.
pub fn read_pose(path: &Path) -> Result<PoseSE3> {
    let v = read_numbers(path, "pose")?;
    if v.len() != 16 || v.iter().any(|x| !x.is_finite()) {
        return Err(format_err("pose", format!("{}: expected 16 finite values, found {}", path.display(), v.len())));
    }
    PoseSE3::from_matrix(&Matrix4::from_row_slice(&v))
        .map_err(|e| format_err("pose", format!("{}: {e}", path.display())))
}

pub fn write_pose(path: &Path, pose: &PoseSE3) -> Result<()> {
    let m = pose.to_matrix();
    let mut s = String::new();
    for r in 0..4 {
        let row: Vec<String> = (0..4).map(|c| format!("{}", m[(r, c)])).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

/// One line `fx fy cx cy width height`.
pub fn read_intrinsics(path: &Path) -> Result<CameraIntrinsics> {
    let v = read_numbers(path, "intrinsics")?;
    if v.len() != 6 {
        return Err(format_err("intrinsics", format!("{}: expected 6 values, found {}", path.display(), v.len())));
    }
    let dim = |x: f64| -> Result<usize> {
        if x >= 1.0 && x.fract() == 0.0 {
            Ok(x as usize)
        } else {
            Err(format_err("intrinsics", format!("image size {x} is not a positive integer")))
        }
    };
    CameraIntrinsics::new(v[0], v[1], v[2], v[3], dim(v[4])?, dim(v[5])?)
        .map_err(|e| format_err("intrinsics", format!("{}: {e}", path.display())))
}

pub fn write_intrinsics(path: &Path, k: &CameraIntrinsics) -> Result<()> {
    fs::write(path, format!("{} {} {} {} {} {}\n", k.fx, k.fy, k.cx, k.cy, k.width, k.height))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::axis_angle_to_rotation;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pfm_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pfm");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let map = Tensor::from_fn(&[5, 7], |_| rng.random_range(-100.0f32..100.0) as f64);
        write_pfm(&path, &map).unwrap();
        let back = read_pfm(&path).unwrap();
        assert_eq!(back, map);
        let bytes = fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"Pf\n7 5\n-1.0\n"));
        // first stored row is the bottom row
        let first = f32::from_le_bytes(bytes[12..16].try_into().unwrap());
        assert_eq!(first as f64, map.get(&[4, 0]));
    }

    #[test]
    fn malformed_pfm_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.pfm");
        fs::write(&path, b"PF\n2 2\n-1.0\n").unwrap();
        assert!(read_pfm(&path).is_err());
        fs::write(&path, b"Pf\n2 2\n-1.0\nabc").unwrap();
        assert!(read_pfm(&path).is_err());
    }

    #[test]
    fn depth_png_quantizes_to_millimeters() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.png");
        // 1.0625 m and 1.1875 m are exact half-millimeter ties
        let depth = Tensor::new(&[1, 5], vec![1.2345, 0.0, 1.0625, 1.1875, 19.9999]).unwrap();
        write_depth_png(&path, &depth).unwrap();
        let back = read_depth_png(&path).unwrap();
        let mm: Vec<f64> = back.data().iter().map(|d| (d * 1000.0).round()).collect();
        assert!(mm[0] == 1234.0 || mm[0] == 1235.0);
        assert_eq!(&mm[1..], &[0.0, 1062.0, 1188.0, 20000.0]);
        assert!(write_depth_png(&path, &Tensor::full(&[1, 1], 70.0)).is_err());
    }

    #[test]
    fn rgb_png_rejected_as_depth() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.png");
        write_rgb_png(&path, &Tensor::full(&[2, 2, 3], 0.5)).unwrap();
        assert!(matches!(read_depth_png(&path), Err(Error::Format { .. })));
        assert_eq!(read_rgb_png(&path).unwrap().shape(), [2, 2, 3]);
    }

    #[test]
    fn pose_and_intrinsics_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pose.txt");
        let pose = PoseSE3::new(axis_angle_to_rotation(&Vector3::new(0.1, 0.2, -0.3)), Vector3::new(1.0, -2.0, 0.5));
        write_pose(&p, &pose).unwrap();
        assert_eq!(read_pose(&p).unwrap(), pose);
        fs::write(&p, "1 0 0").unwrap();
        assert!(read_pose(&p).is_err());

        let k = CameraIntrinsics::new(32.5, 31.0, 15.5, 16.0, 32, 48).unwrap();
        let ki = dir.path().join("intrinsics.txt");
        write_intrinsics(&ki, &k).unwrap();
        assert_eq!(read_intrinsics(&ki).unwrap(), k);
        fs::write(&ki, "1 2 3").unwrap();
        assert!(read_intrinsics(&ki).is_err());
        assert!(matches!(read_intrinsics(&dir.path().join("none.txt")), Err(Error::MissingFile(_))));
    }
}
