//! Plain-text views file. One view per line:
//!
//! ```text
//! fx fy cx cy width height  r00 r01 r02 t0 r10 r11 r12 t1 r20 r21 r22 t2  lx ly lz  image
//! ```
//!
//! The pose is the row-major world-to-camera `[R | t]`, the light offset is
//! in the camera frame (mm) and the image path, the rest of the line, is
//! relative to the views file. `#` starts a comment.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Matrix3;

use super::image::{load_shading_image, save_shading_image, ImageFormat};
use crate::camera::{CameraIntrinsics, CameraPose, View};
use crate::error::{Error, Result};
use crate::mesh::Vec3;

const NUMBERS: usize = 21;

/// A parsed record before its image is loaded.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewRecord {
    pub intrinsics: CameraIntrinsics,
    pub pose: CameraPose,
    pub light_offset: Vec3,
    pub image: PathBuf,
}

fn parse_record(path: &Path, line_no: usize, line: &str) -> Result<ViewRecord> {
    let mut rest = line.trim_start();
    let mut nums = [0.0; NUMBERS];
    for (k, slot) in nums.iter_mut().enumerate() {
        let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
        let tok = &rest[..end];
        if tok.is_empty() {
            return Err(Error::parse(path, line_no, format!("expected {NUMBERS} numbers and an image path, got {k}")));
        }
        *slot = tok
            .parse()
            .map_err(|_| Error::parse(path, line_no, format!("field {} is not a number: '{tok}'", k + 1)))?;
        rest = rest[end..].trim_start();
    }
    let image = rest.trim_end();
    if image.is_empty() {
        return Err(Error::parse(path, line_no, "missing image path"));
    }
    let size = |v: f64, name: &str| {
        if v >= 1.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(Error::parse(path, line_no, format!("{name} must be a positive integer ({v})")))
        }
    };
    let intrinsics = CameraIntrinsics::new(nums[0], nums[1], nums[2], nums[3], size(nums[4], "width")?, size(nums[5], "height")?)
        .map_err(|e| Error::parse(path, line_no, e.to_string()))?;
    let p = &nums[6..18];
    let rotation = Matrix3::new(p[0], p[1], p[2], p[4], p[5], p[6], p[8], p[9], p[10]);
    let translation = Vec3::new(p[3], p[7], p[11]);
    let pose = CameraPose::new(rotation, translation).map_err(|e| Error::parse(path, line_no, e.to_string()))?;
    Ok(ViewRecord {
        intrinsics,
        pose,
        light_offset: Vec3::new(nums[18], nums[19], nums[20]),
        image: PathBuf::from(image),
    })
}

/// Parses the records without touching the images. Image paths are
/// returned as written.
pub fn parse_views_file(path: &Path) -> Result<Vec<ViewRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("");
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_record(path, k + 1, line)?);
    }
    Ok(out)
}

/// Loads every view and its image.
pub fn load_views(path: &Path) -> Result<Vec<View>> {
    let base = path.parent().unwrap_or(Path::new("."));
    parse_views_file(path)?
        .into_iter()
        .map(|r| {
            let image_path = base.join(&r.image);
            if !image_path.exists() {
                return Err(Error::io(
                    &image_path,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "image listed in views file not found"),
                ));
            }
            let image = load_shading_image(&image_path)?;
            View::new(r.intrinsics, r.pose, r.light_offset, image).map_err(|e| Error::format(&image_path, e.to_string()))
        })
        .collect()
}

pub fn format_record(r: &ViewRecord) -> String {
    let k = &r.intrinsics;
    let (m, t) = (&r.pose.rotation, &r.pose.translation);
    let mut s = format!("{} {} {} {} {} {}", k.fx, k.fy, k.cx, k.cy, k.width, k.height);
    for i in 0..3 {
        write!(s, "  {} {} {} {}", m[(i, 0)], m[(i, 1)], m[(i, 2)], t[i]).expect("write to string");
    }
    write!(s, "  {} {} {}  {}", r.light_offset.x, r.light_offset.y, r.light_offset.z, r.image.display()).expect("write to string");
    s
}

/// Writes the views file and one image per view next to it, named
/// `<stem>_NN.<ext>`.
pub fn save_views(path: &Path, views: &[View], format: ImageFormat) -> Result<Vec<PathBuf>> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("view");
    let mut text = String::from("# fx fy cx cy width height | world-to-camera [R|t] row-major | light offset (mm) | image\n");
    let mut written = Vec::new();
    for (i, v) in views.iter().enumerate() {
        let name = format!("{stem}_{i:02}.{}", format.extension());
        save_shading_image(&dir.join(&name), &v.image)?;
        written.push(dir.join(&name));
        let rec = ViewRecord {
            intrinsics: v.intrinsics,
            pose: v.pose,
            light_offset: v.light_offset,
            image: PathBuf::from(name),
        };
        text.push_str(&format_record(&rec));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shading::ShadingImage;

    fn sample_views(n: usize) -> Vec<View> {
        let k = CameraIntrinsics::new(575.1, 574.9, 3.5, 2.25, 8, 6).unwrap();
        (0..n)
            .map(|i| {
                let a = i as f64 * std::f64::consts::FRAC_PI_6;
                let eye = Vec3::new(450.0 * a.sin(), 33.3, 450.0 * a.cos());
                let pose = CameraPose::look_at(&eye, &Vec3::zeros(), &Vec3::y()).unwrap();
                let img = ShadingImage::new(8, 6, (0..48).map(|j| ((i + j) % 10) as f64 / 10.0).collect()).unwrap();
                View::new(k, pose, Vec3::new(40.0, -1.5, 0.25), img.with_gamma(0.8)).unwrap()
            })
            .collect()
    }

    #[test]
    fn twelve_records_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("views.txt");
        let views = sample_views(12);
        save_views(&path, &views, ImageFormat::Pfm).unwrap();
        let back = load_views(&path).unwrap();
        assert_eq!(back.len(), 12);
        for (a, b) in views.iter().zip(&back) {
            assert_eq!(a.intrinsics, b.intrinsics);
            assert!((a.pose.rotation - b.pose.rotation).abs().max() < 1e-12);
            assert!((a.pose.translation - b.pose.translation).norm() < 1e-12);
            assert!((a.light_offset - b.light_offset).norm() < 1e-12);
            assert_eq!(b.image.gamma(), Some(0.8));
            let r = b.pose.rotation;
            assert!((r * r.transpose() - Matrix3::identity()).abs().max() < 1e-9);
        }
    }

    fn write(dir: &Path, body: &str) -> PathBuf {
        let p = dir.join("v.txt");
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn reflection_is_rejected_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        // second record has det(R) = -1
        let body = "# header\n\
            500 500 4 3 8 6  1 0 0 0  0 1 0 0  0 0 1 400  0 0 0  a.pfm\n\
            500 500 4 3 8 6  1 0 0 0  0 1 0 0  0 0 -1 400  0 0 0  b.pfm\n";
        match parse_views_file(&write(dir.path(), body)) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("rotation"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_and_missing() {
        let dir = tempfile::tempdir().unwrap();
        let body = "500 500 4 3 8 6  1 0 0 0  0 1 0 0  0 0 1 400  0 0\n";
        assert!(matches!(parse_views_file(&write(dir.path(), body)), Err(Error::Parse { line: 1, .. })));
        let body = "500 500 4 3 8 6  1 0 0 0  0 1 0 0  0 0 1 400  0 0 0  missing image.pfm\n";
        let p = write(dir.path(), body);
        assert_eq!(parse_views_file(&p).unwrap()[0].image, PathBuf::from("missing image.pfm"));
        match load_views(&p) {
            Err(Error::Io { path, .. }) => assert!(path.ends_with("missing image.pfm")),
            other => panic!("{other:?}"),
        }
    }
}
