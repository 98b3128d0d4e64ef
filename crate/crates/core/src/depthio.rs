//! Depth images and point-cloud files.
//!
//! Depth maps are 16-bit binary PGM (P5, maxval 65535, big-endian samples)
//! holding millimeters, with a sidecar `<name>.intr` text file carrying the
//! pinhole intrinsics `fx fy cx cy`. Clouds are plain-text `.xyz` files, one
//! `x y z` triple per line in meters.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Point3;

use crate::error::{Error, Result};
use crate::objective::PointCloud;

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx.is_finite() && fy.is_finite() && cx.is_finite() && cy.is_finite()) || fx <= 0.0 || fy <= 0.0 {
            return Err(Error::Intrinsics(format!(
                "invalid intrinsics fx={fx} fy={fy} cx={cx} cy={cy}"
            )));
        }
        Ok(Intrinsics { fx, fy, cx, cy })
    }

    /// Pixel `(u, v)` at metric depth `z` (meters) to a camera-frame point.
    pub fn back_project(&self, u: f64, v: f64, z: f64) -> Point3<f64> {
        Point3::new(z * (u - self.cx) / self.fx, z * (v - self.cy) / self.fy, z)
    }

    /// Camera-frame point to pixel coordinates; `None` behind the camera.
    pub fn project(&self, p: Point3<f64>) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((p.x / p.z * self.fx + self.cx, p.y / p.z * self.fy + self.cy))
    }
}

/// A 16-bit depth map in millimeters; 0 marks an invalid reading.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    width: usize,
    height: usize,
    depth_mm: Vec<u16>,
    pub intrinsics: Intrinsics,
}

impl DepthImage {
    pub fn new(width: usize, height: usize, depth_mm: Vec<u16>, intrinsics: Intrinsics) -> Result<Self> {
        if width == 0 || height == 0 || depth_mm.len() != width * height {
            return Err(Error::DepthFormat(format!(
                "payload of {} samples does not match {width}x{height}",
                depth_mm.len()
            )));
        }
        Ok(DepthImage {
            width,
            height,
            depth_mm,
            intrinsics,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn depth_mm(&self) -> &[u16] {
        &self.depth_mm
    }

    pub fn at(&self, u: usize, v: usize) -> u16 {
        self.depth_mm[v * self.width + u]
    }
}

/// Boolean foreground mask with the image's dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct ForegroundMask {
    width: usize,
    height: usize,
    mask: Vec<bool>,
}

impl ForegroundMask {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn at(&self, u: usize, v: usize) -> bool {
        self.mask[v * self.width + u]
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

fn intr_path(path: &Path) -> std::path::PathBuf {
    path.with_extension("intr")
}

/// Load a 16-bit PGM depth map plus its `.intr` sidecar.
pub fn load_depth(path: impl AsRef<Path>) -> Result<DepthImage> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let (width, height, depth_mm) = parse_pgm16(&bytes)?;
    let sidecar = intr_path(path);
    let text = fs::read_to_string(&sidecar).map_err(|e| {
        Error::Intrinsics(format!("cannot read sidecar {}: {e}", sidecar.display()))
    })?;
    let nums: Vec<f64> = text
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::Intrinsics(format!("bad token `{t}` in {}", sidecar.display())))
        })
        .collect::<Result<_>>()?;
    if nums.len() != 4 {
        return Err(Error::Intrinsics(format!(
            "{} holds {} numbers, expected `fx fy cx cy`",
            sidecar.display(),
            nums.len()
        )));
    }
    let intrinsics = Intrinsics::new(nums[0], nums[1], nums[2], nums[3])?;
    DepthImage::new(width, height, depth_mm, intrinsics)
}

/// Write the PGM and its `.intr` sidecar next to it.
pub fn save_depth(img: &DepthImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = format!("P5\n{} {}\n65535\n", img.width, img.height).into_bytes();
    out.reserve(img.depth_mm.len() * 2);
    for &d in &img.depth_mm {
        out.extend_from_slice(&d.to_be_bytes());
    }
    fs::write(path, out)?;
    let i = &img.intrinsics;
    fs::write(intr_path(path), format!("{} {} {} {}\n", i.fx, i.fy, i.cx, i.cy))?;
    Ok(())
}

fn parse_pgm16(bytes: &[u8]) -> Result<(usize, usize, Vec<u16>)> {
    let mut pos = 0usize;

    // Header tokens may be separated by whitespace and `#` comments.
    let mut next_token = |bytes: &[u8]| -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::DepthFormat("truncated header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    let magic = next_token(bytes)?;
    if magic != "P5" {
        return Err(Error::DepthFormat(format!("bad magic `{magic}`, expected P5")));
    }
    let width: usize = next_token(bytes)?
        .parse()
        .map_err(|_| Error::DepthFormat("bad width".into()))?;
    let height: usize = next_token(bytes)?
        .parse()
        .map_err(|_| Error::DepthFormat("bad height".into()))?;
    let maxval: u32 = next_token(bytes)?
        .parse()
        .map_err(|_| Error::DepthFormat("bad maxval".into()))?;
    if maxval != 65535 {
        return Err(Error::DepthFormat(format!(
            "maxval {maxval}: only 16-bit (65535) depth maps are supported"
        )));
    }
    // Exactly one whitespace byte separates the header from the payload.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::DepthFormat("missing separator after maxval".into()));
    }
    pos += 1;

    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(2))
        .ok_or_else(|| Error::DepthFormat("image dimensions overflow".into()))?;
    let payload = &bytes[pos..];
    if payload.len() != expected {
        return Err(Error::DepthFormat(format!(
            "payload is {} bytes, expected {expected}",
            payload.len()
        )));
    }
    let depth = payload
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect();
    Ok((width, height, depth))
}

/// Far-plane background subtraction: foreground is `0 < depth < far_mm`.
/// Zero-depth pixels are invalid sensor readings and always background.
pub fn background_subtract(img: &DepthImage, far_mm: u16) -> ForegroundMask {
    ForegroundMask {
        width: img.width,
        height: img.height,
        mask: img.depth_mm.iter().map(|&d| d > 0 && d < far_mm).collect(),
    }
}

/// Back-project every masked pixel through the pinhole model; row-major
/// order. Depths are converted from millimeters to meters.
pub fn to_point_cloud(img: &DepthImage, mask: &ForegroundMask) -> Result<PointCloud> {
    if mask.width != img.width || mask.height != img.height {
        return Err(Error::InvalidArgument(format!(
            "mask is {}x{}, image is {}x{}",
            mask.width, mask.height, img.width, img.height
        )));
    }
    let mut points = Vec::new();
    for v in 0..img.height {
        for u in 0..img.width {
            if mask.at(u, v) {
                let z = f64::from(img.at(u, v)) / 1000.0;
                points.push(img.intrinsics.back_project(u as f64, v as f64, z));
            }
        }
    }
    PointCloud::new(points)
}

/// Read a `.xyz` cloud: one `x y z` per line, `#` comments and blank lines
/// skipped.
pub fn load_xyz(path: impl AsRef<Path>) -> Result<PointCloud> {
    let text = fs::read_to_string(path.as_ref())?;
    let mut points = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut coords = [0.0f64; 3];
        let mut n = 0usize;
        for tok in line.split_whitespace() {
            if n >= 3 {
                n += 1;
                break;
            }
            coords[n] = tok.parse().map_err(|_| Error::XyzParse {
                line: lineno + 1,
                message: format!("`{tok}` is not a number"),
            })?;
            n += 1;
        }
        if n != 3 {
            return Err(Error::XyzParse {
                line: lineno + 1,
                message: format!("expected 3 coordinates, found {n}"),
            });
        }
        points.push(Point3::new(coords[0], coords[1], coords[2]));
    }
    PointCloud::new(points)
}

/// Write a `.xyz` cloud with 9 significant digits per coordinate.
pub fn save_xyz(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::with_capacity(cloud.len() * 48);
    for p in cloud.points() {
        writeln!(out, "{:.8e} {:.8e} {:.8e}", p.x, p.y, p.z).expect("string write");
    }
    fs::write(path.as_ref(), out)?;
    Ok(())
}
