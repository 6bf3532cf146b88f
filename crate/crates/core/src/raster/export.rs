//! PNG export of render buffers.

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, RgbImage};

use crate::error::{Error, Result};
use crate::grid::{ScalarMap, VectorMap};

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn save(img: impl FnOnce(&Path) -> image::ImageResult<()>, path: &Path) -> Result<()> {
    img(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_color_png(color: &VectorMap, path: impl AsRef<Path>) -> Result<()> {
    let img = RgbImage::from_fn(color.width() as u32, color.height() as u32, |x, y| {
        image::Rgb(color.get(x as usize, y as usize).map(to_u8))
    });
    save(|p| img.save(p), path.as_ref())
}

/// 16-bit millimeters; depths beyond 65.535 m saturate.
pub fn write_depth_png(depth: &ScalarMap, path: impl AsRef<Path>) -> Result<()> {
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_fn(depth.width() as u32, depth.height() as u32, |x, y| {
            let mm = (depth.get(x as usize, y as usize) * 1000.0).round();
            Luma([mm.clamp(0.0, u16::MAX as f64) as u16])
        });
    save(|p| img.save(p), path.as_ref())
}

/// Normals mapped to 8 bits by `(n + 1) / 2`.
pub fn write_normal_png(normal: &VectorMap, path: impl AsRef<Path>) -> Result<()> {
    let img = RgbImage::from_fn(normal.width() as u32, normal.height() as u32, |x, y| {
        image::Rgb(normal.get(x as usize, y as usize).map(|n| to_u8((n + 1.0) * 0.5)))
    });
    save(|p| img.save(p), path.as_ref())
}

pub fn write_alpha_png(alpha: &ScalarMap, path: impl AsRef<Path>) -> Result<()> {
    let img = GrayImage::from_fn(alpha.width() as u32, alpha.height() as u32, |x, y| {
        Luma([to_u8(*alpha.get(x as usize, y as usize))])
    });
    save(|p| img.save(p), path.as_ref())
}
