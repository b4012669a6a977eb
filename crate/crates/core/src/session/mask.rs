use std::io::Cursor;

use image::{ImageFormat, Rgba, RgbaImage};
use serde::{Deserialize, Serialize};

use super::{Selection, SessionError};
use crate::dataset::Dataset;

pub const DEFAULT_OVERLAY_ALPHA: f64 = 0.6;
/// Dark purple.
pub const DEFAULT_OVERLAY_COLOR: [u8; 3] = [48, 16, 66];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskStyle {
    pub alpha: f64,
    pub color: [u8; 3],
}

impl Default for MaskStyle {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_OVERLAY_ALPHA,
            color: DEFAULT_OVERLAY_COLOR,
        }
    }
}

/// Overlay covering the image except around selected spots.
///
/// Pixel `(px, py)` has its center at `(px + 0.5, py + 0.5)`; it is revealed
/// when that center lies within `spot_radius_px` (inclusive) of a selected
/// spot.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskImage {
    pub width: u32,
    pub height: u32,
    pub style: MaskStyle,
    revealed: Vec<bool>,
}

impl MaskImage {
    pub fn is_revealed(&self, x: u32, y: u32) -> bool {
        self.revealed[(y as usize) * self.width as usize + x as usize]
    }

    /// Overlay alpha of a pixel: either 0 or the style alpha.
    pub fn alpha(&self, x: u32, y: u32) -> f64 {
        if self.is_revealed(x, y) {
            0.0
        } else {
            self.style.alpha
        }
    }

    pub fn revealed_count(&self) -> usize {
        self.revealed.iter().filter(|&&r| r).count()
    }

    /// Straight-alpha RGBA8 raster.
    pub fn to_rgba(&self) -> RgbaImage {
        let [r, g, b] = self.style.color;
        let a = (self.style.alpha * 255.0).round() as u8;
        RgbaImage::from_fn(self.width, self.height, |x, y| {
            if self.is_revealed(x, y) {
                Rgba([r, g, b, 0])
            } else {
                Rgba([r, g, b, a])
            }
        })
    }

    pub fn to_png(&self) -> Vec<u8> {
        let mut buf = Cursor::new(Vec::new());
        self.to_rgba()
            .write_to(&mut buf, ImageFormat::Png)
            .expect("in-memory PNG encoding");
        buf.into_inner()
    }
}

pub fn render_mask(
    dataset: &Dataset,
    selection: &Selection,
    style: MaskStyle,
) -> Result<MaskImage, SessionError> {
    if !(style.alpha > 0.0 && style.alpha <= 1.0) {
        return Err(SessionError::BadAlpha(style.alpha));
    }
    let n = dataset.len();
    if let Some(index) = selection.iter().find(|&i| i >= n) {
        return Err(SessionError::IndexOutOfRange { index, n });
    }
    let (width, height) = (dataset.image().width, dataset.image().height);
    let r = dataset.spot_radius_px();
    let r2 = r * r;
    let mut revealed = vec![false; width as usize * height as usize];

    for i in selection.iter() {
        let [cx, cy] = dataset.spots()[i].position;
        // Pixel centers within r lie in this (slightly padded) box.
        let x_lo = (cx - r - 1.0).floor().max(0.0) as u32;
        let y_lo = (cy - r - 1.0).floor().max(0.0) as u32;
        let x_hi = ((cx + r + 1.0).ceil().max(0.0) as u32).min(width);
        let y_hi = ((cy + r + 1.0).ceil().max(0.0) as u32).min(height);
        for py in y_lo..y_hi {
            let dy = py as f64 + 0.5 - cy;
            let row = py as usize * width as usize;
            for px in x_lo..x_hi {
                let dx = px as f64 + 0.5 - cx;
                if dx * dx + dy * dy <= r2 {
                    revealed[row + px as usize] = true;
                }
            }
        }
    }

    Ok(MaskImage {
        width,
        height,
        style,
        revealed,
    })
}
