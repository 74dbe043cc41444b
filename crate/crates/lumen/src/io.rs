//! PNG codecs. RGB images are 8- or 16-bit three-channel PNGs, depth maps
//! are single-channel; integer codes map to `[0, 1]` by division by the type
//! maximum.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use lumen_core::imaging::{DepthMap, ImageRgb};
use lumen_core::{Real, Tensor};

use crate::error::{Error, Result};

fn decode(path: &Path) -> Result<DynamicImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map_err(|e| Error::Image { path: path.to_path_buf(), message: e.to_string() })
}

fn wrong_channels(path: &Path, want: &str, got: &DynamicImage) -> Error {
    Error::Image { path: path.to_path_buf(), message: format!("expected {want}, found {:?}", got.color()) }
}

fn planar<T: Real>(c: usize, h: usize, w: usize, samples: impl Iterator<Item = f64>) -> Tensor<T> {
    let mut data = vec![T::zero(); c * h * w];
    for (i, v) in samples.enumerate() {
        let (p, ch) = (i / c, i % c);
        data[ch * h * w + p] = T::lit(v);
    }
    Tensor::new(&[c, h, w], data).expect("sample count matches shape")
}

pub fn load_image<T: Real>(path: &Path) -> Result<ImageRgb<T>> {
    let img = decode(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let t = match &img {
        DynamicImage::ImageRgb8(b) => planar(3, h, w, b.as_raw().iter().map(|&v| v as f64 / 255.0)),
        DynamicImage::ImageRgb16(b) => planar(3, h, w, b.as_raw().iter().map(|&v| v as f64 / 65535.0)),
        other => return Err(wrong_channels(path, "3-channel 8- or 16-bit RGB", other)),
    };
    Ok(ImageRgb::new(t)?)
}

/// Depth map exactly as stored (`d / 65535` for 16-bit files).
pub fn load_depth<T: Real>(path: &Path) -> Result<DepthMap<T>> {
    let img = decode(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let t = match &img {
        DynamicImage::ImageLuma16(b) => planar(1, h, w, b.as_raw().iter().map(|&v| v as f64 / 65535.0)),
        DynamicImage::ImageLuma8(b) => planar(1, h, w, b.as_raw().iter().map(|&v| v as f64 / 255.0)),
        other => return Err(wrong_channels(path, "1-channel 16-bit depth", other)),
    };
    Ok(DepthMap::new(t)?)
}

fn quantize(v: f64, max: f64) -> f64 {
    (v.clamp(0.0, 1.0) * max).round()
}

fn write(path: &Path, img: DynamicImage) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image { path: path.to_path_buf(), message: e.to_string() })
}

/// Writes an 8-bit RGB PNG.
pub fn save_image<T: Real>(image: &ImageRgb<T>, path: &Path) -> Result<()> {
    let t = image.tensor();
    let (h, w) = (image.height(), image.width());
    let d = t.data();
    let buf = ImageBuffer::<Rgb<u8>, Vec<u8>>::from_fn(w as u32, h as u32, |x, y| {
        let p = y as usize * w + x as usize;
        Rgb([0, 1, 2].map(|c| quantize(d[c * h * w + p].as_f64(), 255.0) as u8))
    });
    write(path, DynamicImage::ImageRgb8(buf))
}

/// Writes a 16-bit single-channel PNG.
pub fn save_depth<T: Real>(depth: &DepthMap<T>, path: &Path) -> Result<()> {
    let (h, w) = (depth.height(), depth.width());
    let d = depth.tensor().data();
    let buf = ImageBuffer::<Luma<u16>, Vec<u16>>::from_fn(w as u32, h as u32, |x, y| {
        Luma([quantize(d[y as usize * w + x as usize].as_f64(), 65535.0) as u16])
    });
    write(path, DynamicImage::ImageLuma16(buf))
}
