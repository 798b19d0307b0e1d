//! Spectrogram images with edited or detected regions outlined.

use std::path::Path;

use fluentedit_core::Tensor;
use image::{Rgb, RgbImage};

use crate::error::{validation, AppError, Result};
use crate::io::ensure_parent;

const PX_PER_FRAME: u32 = 4;
const PX_PER_BIN: u32 = 3;
const OUTLINE: Rgb<u8> = Rgb([230, 30, 30]);
const OUTLINE_WIDTH: u32 = 2;

/// Viridis anchor colours, evenly spaced over [0, 1].
const ANCHORS: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

fn colour(v: f64) -> Rgb<u8> {
    let x = v.clamp(0.0, 1.0) * (ANCHORS.len() - 1) as f64;
    let i = (x.floor() as usize).min(ANCHORS.len() - 2);
    let t = x - i as f64;
    let c = |k: usize| (ANCHORS[i][k] * (1.0 - t) + ANCHORS[i + 1][k] * t).round() as u8;
    Rgb([c(0), c(1), c(2)])
}

/// Renders frames left to right with low mel bins at the bottom and draws
/// a box around each frame span.
pub fn render_mel(mel: &Tensor, spans: &[(usize, usize)]) -> Result<RgbImage> {
    if mel.is_empty() {
        return Err(validation("cannot plot an empty spectrogram"));
    }
    let (frames, bins) = mel.shape();
    if let Some(&(s, e)) = spans.iter().find(|&&(s, e)| s >= e || e > frames) {
        return Err(validation(format!("region {s}:{e} outside {frames} frames")));
    }
    let lo = mel.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mel.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = (hi - lo).max(1e-9);
    let width = frames as u32 * PX_PER_FRAME;
    let height = bins as u32 * PX_PER_BIN;
    let mut img = RgbImage::new(width, height);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let f = (x / PX_PER_FRAME) as usize;
        let b = bins - 1 - (y / PX_PER_BIN) as usize;
        *px = colour((mel.get(f, b) - lo) / range);
    }
    for &(s, e) in spans {
        let x0 = s as u32 * PX_PER_FRAME;
        let x1 = e as u32 * PX_PER_FRAME - 1;
        for w in 0..OUTLINE_WIDTH {
            for x in x0..=x1 {
                img.put_pixel(x, w, OUTLINE);
                img.put_pixel(x, height - 1 - w, OUTLINE);
            }
            for y in 0..height {
                img.put_pixel((x0 + w).min(width - 1), y, OUTLINE);
                img.put_pixel(x1.saturating_sub(w), y, OUTLINE);
            }
        }
    }
    Ok(img)
}

pub fn save_mel_png(path: impl AsRef<Path>, mel: &Tensor, spans: &[(usize, usize)]) -> Result<()> {
    let path = path.as_ref();
    ensure_parent(path)?;
    render_mel(mel, spans)?.save(path).map_err(|e| AppError::format(path, e))
}
