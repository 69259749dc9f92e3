//! sRGB to CIELAB conversion, the CIE76 color difference and ΔE
//! trajectories extracted from masked video frames.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageFormat, ImageReader};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{BasisError, Trajectory};

/// Largest accepted frame edge, in pixels.
pub const MAX_FRAME_DIM: u32 = 4096;

// D65 reference white, 2 degree observer.
const WHITE_X: f64 = 0.95047;
const WHITE_Y: f64 = 1.0;
const WHITE_Z: f64 = 1.08883;

#[derive(Debug, Error)]
pub enum ColorError {
    #[error("mask selects no pixels")]
    EmptyMask,
    #[error("timestamps are not strictly increasing at frame {index}")]
    NonMonotonicTime { index: usize },
    #[error("at least two frames are required, got {0}")]
    TooFewFrames(usize),
    #[error("pixel grid is {pixels} entries but mask grid is {mask} for a {width}x{height} frame")]
    DimensionMismatch {
        width: usize,
        height: usize,
        pixels: usize,
        mask: usize,
    },
    #[error("{path}: {reason}")]
    Image { path: PathBuf, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Trajectory(#[from] BasisError),
}

/// Gamma-encoded 8-bit sRGB color.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RgbColor {
    pub r: u8,
    pub g: u8,
    pub b: u8,
}

impl RgbColor {
    pub const fn new(r: u8, g: u8, b: u8) -> Self {
        Self { r, g, b }
    }

    pub const fn gray(v: u8) -> Self {
        Self { r: v, g: v, b: v }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabColor {
    pub l_star: f64,
    pub a_star: f64,
    pub b_star: f64,
}

impl LabColor {
    pub const fn new(l_star: f64, a_star: f64, b_star: f64) -> Self {
        Self { l_star, a_star, b_star }
    }
}

/// IEC 61966-2-1 transfer function, 8-bit code value to linear light.
fn srgb_to_linear(c: u8) -> f64 {
    let v = c as f64 / 255.0;
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// sRGB (D65) to CIE 1976 L*a*b*.
pub fn srgb_to_lab(c: RgbColor) -> LabColor {
    let r = srgb_to_linear(c.r);
    let g = srgb_to_linear(c.g);
    let b = srgb_to_linear(c.b);

    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;

    let fx = lab_f(x / WHITE_X);
    let fy = lab_f(y / WHITE_Y);
    let fz = lab_f(z / WHITE_Z);

    LabColor {
        l_star: (116.0 * fy - 16.0).clamp(0.0, 100.0),
        a_star: 500.0 * (fx - fy),
        b_star: 200.0 * (fy - fz),
    }
}

/// Euclidean distance in L*a*b*.
pub fn delta_e(current: LabColor, initial: LabColor) -> f64 {
    let dl = current.l_star - initial.l_star;
    let da = current.a_star - initial.a_star;
    let db = current.b_star - initial.b_star;
    (dl * dl + da * da + db * db).sqrt()
}

/// One RGB frame with its sample mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedFrame {
    width: usize,
    height: usize,
    pixels: Vec<RgbColor>,
    mask: Vec<bool>,
    timestamp: f64,
}

impl MaskedFrame {
    pub fn new(
        width: usize,
        height: usize,
        pixels: Vec<RgbColor>,
        mask: Vec<bool>,
        timestamp: f64,
    ) -> Result<Self, ColorError> {
        if pixels.len() != width * height || mask.len() != width * height {
            return Err(ColorError::DimensionMismatch {
                width,
                height,
                pixels: pixels.len(),
                mask: mask.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
            mask,
            timestamp,
        })
    }

    /// A frame of one color with every pixel selected.
    pub fn uniform(width: usize, height: usize, color: RgbColor, timestamp: f64) -> Self {
        Self {
            width,
            height,
            pixels: vec![color; width * height],
            mask: vec![true; width * height],
            timestamp,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn timestamp(&self) -> f64 {
        self.timestamp
    }

    pub fn selected(&self) -> impl Iterator<Item = RgbColor> + '_ {
        self.pixels.iter().zip(&self.mask).filter_map(|(p, &m)| m.then_some(*p))
    }
}

/// Mean of the per-pixel L*a*b* values under the mask. Pixels are converted
/// before averaging, never after.
pub fn frame_mean_lab(frame: &MaskedFrame) -> Result<LabColor, ColorError> {
    let mut n = 0usize;
    let (mut l, mut a, mut b) = (0.0, 0.0, 0.0);
    for px in frame.selected() {
        let lab = srgb_to_lab(px);
        l += lab.l_star;
        a += lab.a_star;
        b += lab.b_star;
        n += 1;
    }
    if n == 0 {
        return Err(ColorError::EmptyMask);
    }
    let n = n as f64;
    Ok(LabColor::new(l / n, a / n, b / n))
}

/// ΔE of every frame against the first one, on time normalized by the last
/// timestamp.
pub fn trajectory_delta_e(frames: &[MaskedFrame]) -> Result<Trajectory, ColorError> {
    if frames.len() < 2 {
        return Err(ColorError::TooFewFrames(frames.len()));
    }
    for (i, w) in frames.windows(2).enumerate() {
        if w[1].timestamp <= w[0].timestamp {
            return Err(ColorError::NonMonotonicTime { index: i + 1 });
        }
    }
    if frames[0].timestamp < 0.0 {
        return Err(ColorError::NonMonotonicTime { index: 0 });
    }
    let initial = frame_mean_lab(&frames[0])?;
    let t_end = frames[frames.len() - 1].timestamp;
    let mut times = Vec::with_capacity(frames.len());
    let mut values = Vec::with_capacity(frames.len());
    for (i, frame) in frames.iter().enumerate() {
        let lab = frame_mean_lab(frame)?;
        times.push(if i + 1 == frames.len() {
            1.0
        } else {
            frame.timestamp / t_end
        });
        values.push(if i == 0 { 0.0 } else { delta_e(lab, initial) });
    }
    Ok(Trajectory::new(times, values)?)
}

fn read_pnm(path: &Path) -> Result<image::DynamicImage, ColorError> {
    let err = |reason: String| ColorError::Image {
        path: path.to_path_buf(),
        reason,
    };
    let mut reader = ImageReader::open(path).map_err(|e| err(e.to_string()))?;
    reader.set_format(ImageFormat::Pnm);
    let img = reader.decode().map_err(|e| err(e.to_string()))?;
    if img.width() > MAX_FRAME_DIM || img.height() > MAX_FRAME_DIM {
        return Err(err(format!(
            "{}x{} exceeds the {MAX_FRAME_DIM}x{MAX_FRAME_DIM} limit",
            img.width(),
            img.height()
        )));
    }
    Ok(img)
}

/// Trailing run of digits in a file stem, read as seconds since drying start.
fn timestamp_from_name(path: &Path) -> Option<f64> {
    let stem = path.file_stem()?.to_str()?;
    let digits: String = stem
        .chars()
        .rev()
        .take_while(|c| c.is_ascii_digit())
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    digits.parse::<u64>().ok().map(|v| v as f64)
}

/// Loads `*.ppm` frames from `image_dir` and the same-named `*.pgm` masks
/// from `mask_dir`. Timestamps come from the trailing digits of each file
/// name (seconds); frames are returned in timestamp order.
pub fn load_masked_frames(image_dir: &Path, mask_dir: &Path) -> Result<Vec<MaskedFrame>, ColorError> {
    let mut entries: Vec<(f64, PathBuf)> = Vec::new();
    let listing = fs::read_dir(image_dir).map_err(|e| ColorError::Image {
        path: image_dir.to_path_buf(),
        reason: e.to_string(),
    })?;
    for entry in listing {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("ppm") {
            continue;
        }
        let ts = timestamp_from_name(&path).ok_or_else(|| ColorError::Image {
            path: path.clone(),
            reason: "file name carries no trailing timestamp digits".into(),
        })?;
        entries.push((ts, path));
    }
    entries.sort_by(|a, b| a.0.total_cmp(&b.0));

    entries
        .into_iter()
        .map(|(ts, path)| {
            let rgb = read_pnm(&path)?.to_rgb8();
            let mask_path = mask_dir.join(path.with_extension("pgm").file_name().unwrap_or_default());
            let mask_img = read_pnm(&mask_path)?.to_luma8();
            if mask_img.dimensions() != rgb.dimensions() {
                return Err(ColorError::Image {
                    path: mask_path,
                    reason: format!(
                        "mask is {:?} but frame is {:?}",
                        mask_img.dimensions(),
                        rgb.dimensions()
                    ),
                });
            }
            let (w, h) = rgb.dimensions();
            let pixels = rgb.pixels().map(|p| RgbColor::new(p[0], p[1], p[2])).collect();
            let mask = mask_img.pixels().map(|p| p[0] != 0).collect();
            MaskedFrame::new(w as usize, h as usize, pixels, mask, ts)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_lab(got: LabColor, want: (f64, f64, f64), tol: f64) {
        assert!(
            (got.l_star - want.0).abs() <= tol
                && (got.a_star - want.1).abs() <= tol
                && (got.b_star - want.2).abs() <= tol,
            "{got:?} vs {want:?}"
        );
    }

    #[test]
    fn reference_colors() {
        assert_lab(srgb_to_lab(RgbColor::gray(255)), (100.0, 0.0, 0.0), 0.05);
        assert_lab(srgb_to_lab(RgbColor::gray(0)), (0.0, 0.0, 0.0), 1e-12);
        assert_lab(srgb_to_lab(RgbColor::new(255, 0, 0)), (53.24, 80.09, 67.20), 0.1);
    }

    #[test]
    fn delta_e_examples() {
        let base = LabColor::new(50.0, 10.0, 20.0);
        assert_eq!(delta_e(base, base), 0.0);
        assert_eq!(delta_e(LabColor::new(60.0, 10.0, 20.0), base), 10.0);
        let d = delta_e(LabColor::new(53.0, 13.0, 24.0), base);
        assert!((d - 5.8310).abs() < 1e-4);
    }

    #[test]
    fn lightness_in_range_over_channel_grid() {
        let levels: Vec<u8> = (0..16).map(|i| (i * 17) as u8).collect();
        for &r in &levels {
            for &g in &levels {
                for &b in &levels {
                    let l = srgb_to_lab(RgbColor::new(r, g, b)).l_star;
                    assert!((0.0..=100.0).contains(&l), "{r} {g} {b} -> {l}");
                }
            }
        }
    }

    #[test]
    fn mean_lab_is_per_pixel_average() {
        let c = RgbColor::new(120, 80, 40);
        let f = MaskedFrame::uniform(4, 3, c, 0.0);
        let m = frame_mean_lab(&f).unwrap();
        assert_lab(
            m,
            {
                let l = srgb_to_lab(c);
                (l.l_star, l.a_star, l.b_star)
            },
            1e-12,
        );

        // two gray pixels selected, third ignored
        let px = vec![RgbColor::gray(40), RgbColor::gray(200), RgbColor::new(255, 0, 0)];
        let f = MaskedFrame::new(3, 1, px, vec![true, true, false], 0.0).unwrap();
        let m = frame_mean_lab(&f).unwrap();
        let (a, b) = (srgb_to_lab(RgbColor::gray(40)), srgb_to_lab(RgbColor::gray(200)));
        assert!((m.l_star - (a.l_star + b.l_star) / 2.0).abs() < 1e-12);
        assert!(m.a_star.abs() < 1e-3);
    }

    #[test]
    fn empty_mask() {
        let f = MaskedFrame::new(2, 1, vec![RgbColor::gray(3); 2], vec![false; 2], 0.0).unwrap();
        assert!(matches!(frame_mean_lab(&f), Err(ColorError::EmptyMask)));
    }

    #[test]
    fn mismatched_grids() {
        assert!(matches!(
            MaskedFrame::new(2, 2, vec![RgbColor::gray(0); 4], vec![true; 3], 0.0),
            Err(ColorError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn trajectory_examples() {
        let white = RgbColor::gray(255);
        let frames: Vec<_> = [0.0, 60.0, 120.0]
            .iter()
            .map(|&t| MaskedFrame::uniform(2, 2, white, t))
            .collect();
        let tr = trajectory_delta_e(&frames).unwrap();
        assert_eq!(tr.values(), &[0.0, 0.0, 0.0]);
        assert_eq!(tr.times(), &[0.0, 0.5, 1.0]);

        let frames = vec![
            MaskedFrame::uniform(2, 2, white, 0.0),
            MaskedFrame::uniform(2, 2, RgbColor::gray(0), 10.0),
        ];
        let tr = trajectory_delta_e(&frames).unwrap();
        assert!((tr.values()[1] - 100.0).abs() < 0.1);
    }

    #[test]
    fn non_monotonic_time() {
        let frames = vec![
            MaskedFrame::uniform(1, 1, RgbColor::gray(9), 0.0),
            MaskedFrame::uniform(1, 1, RgbColor::gray(9), 5.0),
            MaskedFrame::uniform(1, 1, RgbColor::gray(9), 5.0),
        ];
        assert!(matches!(
            trajectory_delta_e(&frames),
            Err(ColorError::NonMonotonicTime { index: 2 })
        ));
    }

    #[test]
    fn frames_from_directories() {
        let dir = tempfile::tempdir().unwrap();
        let (img_dir, mask_dir) = (dir.path().join("img"), dir.path().join("mask"));
        fs::create_dir_all(&img_dir).unwrap();
        fs::create_dir_all(&mask_dir).unwrap();
        for (ts, v) in [(0u32, 200u8), (30, 150), (60, 100)] {
            let img = image::RgbImage::from_fn(4, 4, |x, _| {
                if x < 2 {
                    image::Rgb([v, v, v])
                } else {
                    image::Rgb([255, 0, 0])
                }
            });
            img.save_with_format(img_dir.join(format!("f_{ts:04}.ppm")), ImageFormat::Pnm)
                .unwrap();
            let mask = image::GrayImage::from_fn(4, 4, |x, _| image::Luma([if x < 2 { 255 } else { 0 }]));
            mask.save_with_format(mask_dir.join(format!("f_{ts:04}.pgm")), ImageFormat::Pnm)
                .unwrap();
        }
        let frames = load_masked_frames(&img_dir, &mask_dir).unwrap();
        assert_eq!(frames.len(), 3);
        let tr = trajectory_delta_e(&frames).unwrap();
        assert_eq!(tr.times(), &[0.0, 0.5, 1.0]);
        let want = delta_e(srgb_to_lab(RgbColor::gray(100)), srgb_to_lab(RgbColor::gray(200)));
        assert!((tr.values()[2] - want).abs() < 1e-12);
    }

    fn lab() -> impl Strategy<Value = LabColor> {
        (0.0f64..100.0, -128.0f64..128.0, -128.0f64..128.0).prop_map(|(l, a, b)| LabColor::new(l, a, b))
    }

    proptest! {
        #[test]
        fn delta_e_is_a_metric(a in lab(), b in lab(), c in lab()) {
            prop_assert!((delta_e(a, b) - delta_e(b, a)).abs() <= 1e-12);
            prop_assert_eq!(delta_e(a, a), 0.0);
            prop_assert!(delta_e(a, c) <= delta_e(a, b) + delta_e(b, c) + 1e-9);
        }

        #[test]
        fn trajectory_shape(levels in prop::collection::vec(0u8..=255, 2..12)) {
            let frames: Vec<_> = levels
                .iter()
                .enumerate()
                .map(|(i, &v)| MaskedFrame::uniform(2, 2, RgbColor::new(v, v / 2, 255 - v), 7.0 * i as f64))
                .collect();
            let tr = trajectory_delta_e(&frames).unwrap();
            prop_assert_eq!(tr.values()[0], 0.0);
            prop_assert_eq!(tr.times()[0], 0.0);
            prop_assert_eq!(*tr.times().last().unwrap(), 1.0);
        }
    }
}
