//! Color-coded trajectory images of a movement window.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{LandmarkId, MovementWindow, LANDMARK_COUNT};

pub const TRAJECTORY_SIZE: usize = 256;
pub const TRAJECTORY_CHANNELS: usize = 3;

/// Stroke colors, indexed by [`LandmarkId::index`].
pub const PALETTE: [[u8; 3]; LANDMARK_COUNT] = [
    [255, 0, 0],   // head
    [0, 255, 0],   // left wrist
    [0, 0, 255],   // right wrist
    [255, 165, 0], // left ankle
    [255, 0, 255], // right ankle
];

pub fn landmark_color(id: LandmarkId) -> [u8; 3] {
    PALETTE[id.index()]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RasterConfig {
    /// Square brush edge in pixels.
    pub line_width: u32,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self { line_width: 2 }
    }
}

/// 256×256 RGB, row-major, black background.
#[derive(Clone, PartialEq, Eq)]
pub struct TrajectoryImage {
    data: Vec<u8>,
}

impl std::fmt::Debug for TrajectoryImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let lit = self.data.chunks(3).filter(|p| p != &[0, 0, 0]).count();
        write!(f, "TrajectoryImage({TRAJECTORY_SIZE}x{TRAJECTORY_SIZE}, {lit} lit px)")
    }
}

impl TrajectoryImage {
    fn blank() -> Self {
        Self {
            data: vec![0; TRAJECTORY_SIZE * TRAJECTORY_SIZE * TRAJECTORY_CHANNELS],
        }
    }

    pub fn width(&self) -> usize {
        TRAJECTORY_SIZE
    }

    pub fn height(&self) -> usize {
        TRAJECTORY_SIZE
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * TRAJECTORY_SIZE + x) * TRAJECTORY_CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    fn put(&mut self, x: i64, y: i64, color: [u8; 3]) {
        let size = TRAJECTORY_SIZE as i64;
        if (0..size).contains(&x) && (0..size).contains(&y) {
            let i = (y as usize * TRAJECTORY_SIZE + x as usize) * TRAJECTORY_CHANNELS;
            self.data[i..i + 3].copy_from_slice(&color);
        }
    }

    /// Channel-last float tensor data scaled to [0, 1].
    pub fn to_unit_floats(&self) -> Vec<f32> {
        self.data.iter().map(|&b| b as f32 / 255.0).collect()
    }

    pub fn write_png<W: Write>(&self, w: W) -> Result<()> {
        write_png(w, TRAJECTORY_SIZE as u32, TRAJECTORY_SIZE as u32, png::ColorType::Rgb, &self.data)
    }
}

pub(crate) fn write_png<W: Write>(
    w: W,
    width: u32,
    height: u32,
    color: png::ColorType,
    data: &[u8],
) -> Result<()> {
    let mut enc = png::Encoder::new(w, width, height);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    enc.set_compression(png::Compression::Balanced);
    let png_err = |e: png::EncodingError| Error::invalid(format!("png encode: {e}"));
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(data).map_err(png_err)?;
    writer.finish().map_err(png_err)
}

/// Map a normalized coordinate to a pixel index, clamping to the border.
fn to_pixel(v: f64) -> i64 {
    let v = if v.is_finite() { v.clamp(-1.0, 1.0) } else { 0.0 };
    ((v + 1.0) * 0.5 * (TRAJECTORY_SIZE - 1) as f64).round() as i64
}

fn stamp(img: &mut TrajectoryImage, x: i64, y: i64, width: u32, color: [u8; 3]) {
    let lo = -((width as i64 - 1) / 2);
    let hi = lo + width as i64;
    for dy in lo..hi {
        for dx in lo..hi {
            img.put(x + dx, y + dy, color);
        }
    }
}

fn draw_segment(img: &mut TrajectoryImage, from: (i64, i64), to: (i64, i64), width: u32, color: [u8; 3]) {
    let (mut x, mut y) = from;
    let dx = (to.0 - x).abs();
    let dy = -(to.1 - y).abs();
    let sx = if x < to.0 { 1 } else { -1 };
    let sy = if y < to.1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        stamp(img, x, y, width, color);
        if (x, y) == to {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

pub fn rasterize(window: &MovementWindow) -> Result<TrajectoryImage> {
    rasterize_with(window, &RasterConfig::default())
}

pub fn rasterize_with(window: &MovementWindow, cfg: &RasterConfig) -> Result<TrajectoryImage> {
    if cfg.line_width == 0 {
        return Err(Error::invalid("line width must be positive"));
    }
    let frames = window.frames();
    if frames.len() < 2 {
        return Err(Error::invalid("window needs at least two frames"));
    }
    let mut img = TrajectoryImage::blank();
    for id in LandmarkId::ALL {
        let color = landmark_color(id);
        let path: Vec<(i64, i64)> = frames
            .iter()
            .map(|f| {
                let [x, y] = f.point(id);
                (to_pixel(x), to_pixel(y))
            })
            .collect();
        for seg in path.windows(2) {
            draw_segment(&mut img, seg[0], seg[1], cfg.line_width, color);
        }
    }
    Ok(img)
}
