//! Row-major rasters and their PNG encodings.

use std::io::Cursor;
use std::path::Path;

use image::{ImageBuffer, ImageFormat, Luma, Rgb};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("image error for {path}: {source}")]
    Image {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}: expected a 16-bit single channel PNG")]
    NotDepthPng { path: String },
    #[error("value {0} does not fit in a 16-bit mask")]
    MaskOverflow(u32),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Raster<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Raster<T> {
    /// Panics if `data.len() != width * height`.
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "raster buffer size");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: T) {
        self.data[y * self.width + x] = value;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn rows(&self) -> std::slice::Chunks<'_, T> {
        self.data.chunks(self.width.max(1))
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Raster<U> {
        Raster {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn ensure_same_dims<U>(&self, other: &Raster<U>) -> Result<(), RasterError> {
        if self.dims() != other.dims() {
            return Err(RasterError::DimensionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }
}

/// Camera-frame z depth in meters; 0 marks a missing value.
pub type DepthMap = Raster<f64>;
/// Winning object id per pixel; 0 is background.
pub type IdMap = Raster<u32>;
/// Instance ids, class ids, or 0/255 binary values.
pub type MaskImage = Raster<u32>;
/// Depth in integer millimeters as stored on disk.
pub type DepthMm = Raster<u16>;
/// Linear RGB in [0, 1].
pub type ColorImage = Raster<[f32; 3]>;

/// Largest depth representable in a 16-bit millimeter raster.
pub const MAX_DEPTH_M: f64 = u16::MAX as f64 / 1000.0;

impl Raster<f64> {
    /// Rounds to integer millimeters. Returns the converted raster and the number
    /// of pixels clamped at 65.535 m.
    pub fn to_millimeters(&self) -> (DepthMm, usize) {
        let mut clamped = 0;
        let mm = self.map(|&d| {
            if !(d > 0.0) {
                return 0;
            }
            let v = (d * 1000.0).round();
            if v > u16::MAX as f64 {
                clamped += 1;
                u16::MAX
            } else {
                v as u16
            }
        });
        (mm, clamped)
    }
}

impl Raster<u16> {
    pub fn to_meters(&self) -> DepthMap {
        self.map(|&v| v as f64 / 1000.0)
    }
}

pub fn encode_png_u16(raster: &Raster<u16>) -> Vec<u8> {
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(
        raster.width as u32,
        raster.height as u32,
        raster.data.clone(),
    )
    .expect("buffer size");
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png).expect("png encode");
    out.into_inner()
}

pub fn encode_png_u8(raster: &Raster<u8>) -> Vec<u8> {
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(
        raster.width as u32,
        raster.height as u32,
        raster.data.clone(),
    )
    .expect("buffer size");
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png).expect("png encode");
    out.into_inner()
}

pub fn encode_png_rgb(raster: &Raster<[u8; 3]>) -> Vec<u8> {
    let flat: Vec<u8> = raster.data.iter().flat_map(|p| p.iter().copied()).collect();
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(raster.width as u32, raster.height as u32, flat).expect("buffer");
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png).expect("png encode");
    out.into_inner()
}

/// Mask values are written as 16-bit PNGs.
pub fn mask_to_u16(mask: &MaskImage) -> Result<Raster<u16>, RasterError> {
    let mut out = Raster::filled(mask.width, mask.height, 0u16);
    for (o, &v) in out.data.iter_mut().zip(mask.data.iter()) {
        *o = u16::try_from(v).map_err(|_| RasterError::MaskOverflow(v))?;
    }
    Ok(out)
}

pub fn read_png_u16(path: &Path) -> Result<Raster<u16>, RasterError> {
    let img = image::open(path).map_err(|source| RasterError::Image {
        path: path.display().to_string(),
        source,
    })?;
    match img {
        image::DynamicImage::ImageLuma16(buf) => {
            let (w, h) = buf.dimensions();
            Ok(Raster::from_vec(w as usize, h as usize, buf.into_raw()))
        }
        image::DynamicImage::ImageLuma8(buf) => {
            let (w, h) = buf.dimensions();
            Ok(Raster::from_vec(
                w as usize,
                h as usize,
                buf.into_raw().into_iter().map(u16::from).collect(),
            ))
        }
        _ => Err(RasterError::NotDepthPng {
            path: path.display().to_string(),
        }),
    }
}

pub fn read_png_rgb(path: &Path) -> Result<Raster<[u8; 3]>, RasterError> {
    let img = image::open(path).map_err(|source| RasterError::Image {
        path: path.display().to_string(),
        source,
    })?;
    let buf = img.to_rgb8();
    let (w, h) = buf.dimensions();
    let data = buf.pixels().map(|p| p.0).collect();
    Ok(Raster::from_vec(w as usize, h as usize, data))
}

pub fn color_to_u8(img: &ColorImage) -> Raster<[u8; 3]> {
    img.map(|c| c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
}
