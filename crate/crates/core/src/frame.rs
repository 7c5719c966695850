//! Linear RGB rasters, posed clips, and PNG interchange.

use std::path::Path;

use crate::error::{Error, Result};
use crate::trajectory::Trajectory;

/// `height × width × 3` linear RGB, row-major, channel-interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageFrame {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl ImageFrame {
    pub fn new(width: u32, height: u32, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension("image dimensions must be positive".into()));
        }
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(Error::Dimension(format!("{} values for a {width}x{height} RGB frame", data.len())));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: u32, height: u32, rgb: [f64; 3]) -> Self {
        let data = std::iter::repeat_n(rgb, width as usize * height as usize).flatten().collect();
        Self { width, height, data }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> [f64; 3] {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [f64; 3]) {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn transposed(&self) -> Self {
        Self::from_fn(self.height, self.width, |x, y| self.pixel(y, x))
    }

    pub fn ensure_same_dims(&self, other: &Self) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Dimension(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    /// Round trip through 8-bit sRGB, as happens at every PNG boundary.
    pub fn quantized(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| srgb_u8_to_linear(linear_to_srgb_u8(v))).collect(),
        }
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let bytes = self.data.iter().map(|&v| linear_to_srgb_u8(v)).collect();
        image::RgbImage::from_raw(self.width, self.height, bytes).expect("buffer size matches dimensions")
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            data: img.as_raw().iter().map(|&b| srgb_u8_to_linear(b)).collect(),
        }
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_rgb8().save_with_format(path.as_ref(), image::ImageFormat::Png)?;
        Ok(())
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path.as_ref())?.to_rgb8();
        Ok(Self::from_rgb8(&img))
    }
}

pub fn linear_to_srgb(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    if x <= 0.003_130_8 {
        12.92 * x
    } else {
        1.055 * x.powf(1.0 / 2.4) - 0.055
    }
}

pub fn srgb_to_linear(s: f64) -> f64 {
    if s <= 0.040_45 {
        s / 12.92
    } else {
        ((s + 0.055) / 1.055).powf(2.4)
    }
}

pub fn linear_to_srgb_u8(x: f64) -> u8 {
    (linear_to_srgb(x) * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn srgb_u8_to_linear(b: u8) -> f64 {
    srgb_to_linear(b as f64 / 255.0)
}

/// Ordered frames of identical size, optionally tagged with the poses they were rendered from.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    frames: Vec<ImageFrame>,
    poses: Option<Trajectory>,
}

impl VideoClip {
    pub fn new(frames: Vec<ImageFrame>, poses: Option<Trajectory>) -> Result<Self> {
        if let Some(first) = frames.first() {
            if let Some(bad) = frames.iter().position(|f| f.dims() != first.dims()) {
                return Err(Error::Dimension(format!("frame {bad} differs in size from frame 0")));
            }
        }
        if let Some(t) = &poses {
            if t.len() != frames.len() {
                return Err(Error::Dimension(format!("{} poses for {} frames", t.len(), frames.len())));
            }
            if let Some(f) = frames.first() {
                if (t.intrinsics.width, t.intrinsics.height) != f.dims() {
                    return Err(Error::Dimension("intrinsics do not match frame size".into()));
                }
            }
        }
        Ok(Self { frames, poses })
    }

    pub fn frames(&self) -> &[ImageFrame] {
        &self.frames
    }

    pub fn poses(&self) -> Option<&Trajectory> {
        self.poses.as_ref()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> Option<(u32, u32)> {
        self.frames.first().map(ImageFrame::dims)
    }

    pub fn into_parts(self) -> (Vec<ImageFrame>, Option<Trajectory>) {
        (self.frames, self.poses)
    }
}

/// `%06d.png`, the frame naming used by every directory protocol in this crate.
pub fn frame_file_name(index: usize) -> String {
    format!("{index:06}.png")
}
