//! 16-bit grayscale PNG and single-channel PFM images. The gamma state of a
//! shading image lives in a `<image>.meta.toml` sidecar; an image without a
//! sidecar is taken to be a raw capture with an unknown camera response.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{DepthKind, DepthMap};
use crate::shading::ShadingImage;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    Png16,
    #[default]
    Pfm,
}

impl ImageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Png16 => "png",
            ImageFormat::Pfm => "pfm",
        }
    }
}

/// Raw grayscale samples, row-major from the top row.
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

pub fn read_pfm(path: &Path) -> Result<RawImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    // three whitespace-terminated header tokens, then the raster
    let mut tokens = Vec::new();
    let mut pos = 0;
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(path, "truncated PFM header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    match tokens[0].as_str() {
        "Pf" => {}
        "PF" => return Err(Error::format(path, "color PFM is not supported")),
        other => return Err(Error::format(path, format!("not a PFM file (magic '{other}')"))),
    }
    let parse = |t: &str| t.parse::<usize>().map_err(|_| Error::format(path, format!("bad PFM size '{t}'")));
    let (w, h) = (parse(&tokens[1])?, parse(&tokens[2])?);
    let scale: f64 = tokens[3]
        .parse()
        .map_err(|_| Error::format(path, format!("bad PFM scale '{}'", tokens[3])))?;
    let little = scale < 0.0;
    let raster = &bytes[pos.min(bytes.len())..];
    if raster.len() < 4 * w * h {
        return Err(Error::format(path, format!("PFM raster has {} bytes, need {}", raster.len(), 4 * w * h)));
    }
    let mut data = vec![0.0; w * h];
    // PFM rows run bottom to top
    for row in 0..h {
        for x in 0..w {
            let off = 4 * (row * w + x);
            let b = [raster[off], raster[off + 1], raster[off + 2], raster[off + 3]];
            let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
            data[(h - 1 - row) * w + x] = v as f64;
        }
    }
    Ok(RawImage { width: w, height: h, data })
}

pub fn write_pfm(path: &Path, width: usize, height: usize, data: &[f64]) -> Result<()> {
    let mut out = format!("Pf\n{width} {height}\n-1.0\n").into_bytes();
    out.reserve(4 * data.len());
    for row in (0..height).rev() {
        for v in &data[row * width..(row + 1) * width] {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Samples of a grayscale PNG as stored integers (8-bit files are widened
/// to 16 bits).
pub fn read_png16(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    })?;
    let gray = img.to_luma16();
    let (w, h) = gray.dimensions();
    Ok((w as usize, h as usize, gray.into_raw()))
}

pub fn write_png16(path: &Path, width: usize, height: usize, data: &[u16]) -> Result<()> {
    let buf = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_raw(width as u32, height as u32, data.to_vec())
        .ok_or_else(|| Error::format(path, "buffer size does not match dimensions"))?;
    buf.save(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GammaSidecar {
    gamma_applied: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
}

pub fn sidecar_path(image: &Path) -> PathBuf {
    let mut name = image.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.toml");
    image.with_file_name(name)
}

fn format_of(path: &Path) -> Result<ImageFormat> {
    match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref() {
        Some("png") => Ok(ImageFormat::Png16),
        Some("pfm") => Ok(ImageFormat::Pfm),
        _ => Err(Error::format(path, "image must be .png or .pfm")),
    }
}

/// Loads a shading image (PNG values are divided by 65535) with its gamma
/// sidecar.
pub fn load_shading_image(path: &Path) -> Result<ShadingImage> {
    let (w, h, data) = match format_of(path)? {
        ImageFormat::Png16 => {
            let (w, h, raw) = read_png16(path)?;
            (w, h, raw.into_iter().map(|v| v as f64 / 65535.0).collect())
        }
        ImageFormat::Pfm => {
            let raw = read_pfm(path)?;
            (raw.width, raw.height, raw.data)
        }
    };
    let image = ShadingImage::new(w, h, data).map_err(|e| Error::format(path, e.to_string()))?;
    let side = sidecar_path(path);
    if !side.exists() {
        return Ok(image.with_unknown_gamma());
    }
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: GammaSidecar = toml::from_str(&text).map_err(|e| Error::format(&side, e.to_string()))?;
    Ok(match (meta.gamma_applied, meta.gamma) {
        (false, _) => image,
        (true, Some(g)) => image.with_gamma(g),
        (true, None) => image.with_unknown_gamma(),
    })
}

/// Writes the image and its sidecar. PNG output is quantized to 16 bits.
pub fn save_shading_image(path: &Path, image: &ShadingImage) -> Result<()> {
    match format_of(path)? {
        ImageFormat::Png16 => {
            let q: Vec<u16> = image.data().iter().map(|v| (v * 65535.0).round() as u16).collect();
            write_png16(path, image.width(), image.height(), &q)?;
        }
        ImageFormat::Pfm => write_pfm(path, image.width(), image.height(), image.data())?,
    }
    let meta = GammaSidecar {
        gamma_applied: image.gamma_applied(),
        gamma: image.gamma(),
    };
    let side = sidecar_path(path);
    fs::write(&side, toml::to_string(&meta).expect("sidecar serializes")).map_err(|e| Error::io(&side, e))
}

/// Depth map from a 16-bit PNG (`value · mm_per_unit`) or a PFM in mm.
pub fn load_depth_map(path: &Path, mm_per_unit: f64, kind: DepthKind) -> Result<DepthMap> {
    let (w, h, data) = match format_of(path)? {
        ImageFormat::Png16 => {
            let (w, h, raw) = read_png16(path)?;
            (w, h, raw.into_iter().map(|v| v as f64 * mm_per_unit).collect())
        }
        ImageFormat::Pfm => {
            let raw = read_pfm(path)?;
            let data = raw.data.into_iter().map(|v| if v.is_finite() && v > 0.0 { v } else { 0.0 }).collect();
            (raw.width, raw.height, data)
        }
    };
    DepthMap::new(w, h, data, kind).map_err(|e| Error::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> ShadingImage {
        ShadingImage::new(w, h, (0..w * h).map(|i| i as f64 / (w * h - 1) as f64).collect()).unwrap()
    }

    #[test]
    fn pfm_roundtrip_keeps_orientation_and_gamma() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pfm");
        let img = ramp(7, 5).with_gamma(0.8);
        save_shading_image(&p, &img).unwrap();
        let back = load_shading_image(&p).unwrap();
        assert_eq!(back.gamma(), Some(0.8));
        for (a, b) in img.data().iter().zip(back.data()) {
            assert_eq!(*b, *a as f32 as f64);
        }
        assert!(sidecar_path(&p).ends_with("a.pfm.meta.toml"));
    }

    #[test]
    fn png_roundtrip_quantizes_to_16_bits() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let img = ramp(9, 4);
        save_shading_image(&p, &img).unwrap();
        let back = load_shading_image(&p).unwrap();
        assert!(!back.gamma_applied());
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-15);
        }
    }

    #[test]
    fn missing_sidecar_means_unknown_gamma() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("raw.png");
        write_png16(&p, 2, 2, &[0, 1000, 65535, 7]).unwrap();
        let img = load_shading_image(&p).unwrap();
        assert!(img.gamma_applied());
        assert_eq!(img.gamma(), None);
        assert_eq!(img.get(0, 1), 1.0);
    }

    #[test]
    fn depth_png_is_scaled() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.png");
        write_png16(&p, 3, 1, &[0, 1000, 2500]).unwrap();
        let d = load_depth_map(&p, 0.5, DepthKind::Planar).unwrap();
        assert_eq!(d.depth, vec![0.0, 500.0, 1250.0]);
        assert_eq!(d.valid_count(), 2);
    }

    #[test]
    fn bad_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.pfm");
        fs::write(&p, b"P6\n1 1\n255\n\0\0\0").unwrap();
        assert!(matches!(read_pfm(&p), Err(Error::Format { .. })));
        assert!(matches!(load_shading_image(&dir.path().join("nope.pfm")), Err(Error::Io { .. })));
        assert!(load_shading_image(&dir.path().join("x.jpg")).is_err());
    }
}
