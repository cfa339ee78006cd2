//! Conversions between image files and `[3, H, W]` arrays in `[-1, 1]`.

use std::path::Path;

use image::imageops::{self, FilterType};
use image::{DynamicImage, RgbImage};
use ndarray::{Array3, ArrayView3};

use super::CropSize;
use crate::{Error, Result};

/// Decodes, crops and resizes one image file.
pub fn load_image(path: &Path, crop: CropSize, size: usize) -> Result<Array3<f32>> {
    let img = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?;
    Ok(preprocess(img, crop, size))
}

/// Center crop to `crop` when the source is at least that large on both
/// sides, then center crop to a square, then resize to `size x size`.
pub fn preprocess(img: DynamicImage, crop: CropSize, size: usize) -> Array3<f32> {
    let mut rgb = img.to_rgb8();
    if let CropSize::Square(c) = crop {
        if rgb.width() >= c && rgb.height() >= c {
            rgb = center_crop(&rgb, c, c);
        }
    }
    if rgb.width() != rgb.height() {
        let side = rgb.width().min(rgb.height());
        rgb = center_crop(&rgb, side, side);
    }
    let size32 = size as u32;
    if rgb.width() != size32 {
        rgb = imageops::resize(&rgb, size32, size32, FilterType::Triangle);
    }
    from_rgb(&rgb)
}

fn center_crop(img: &RgbImage, w: u32, h: u32) -> RgbImage {
    let x = (img.width() - w) / 2;
    let y = (img.height() - h) / 2;
    imageops::crop_imm(img, x, y, w, h).to_image()
}

pub fn from_rgb(img: &RgbImage) -> Array3<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = Array3::<f32>::zeros((3, h, w));
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            out[[c, y as usize, x as usize]] = px[c] as f32 / 127.5 - 1.0;
        }
    }
    out
}

/// Maps `[-1, 1]` back to 8-bit RGB (values outside the range are clamped).
pub fn to_rgb(image: ArrayView3<f32>) -> RgbImage {
    let (h, w) = (image.shape()[1], image.shape()[2]);
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |c: usize| ((image[[c, y as usize, x as usize]] + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8;
        image::Rgb([px(0), px(1), px(2)])
    })
}

pub fn save_rgb(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    img.save(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

pub fn save_image(image: &Array3<f32>, path: &Path) -> Result<()> {
    save_rgb(&to_rgb(image.view()), path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn large_source_is_cropped_then_resized() {
        let img = DynamicImage::ImageRgb8(RgbImage::from_pixel(1400, 1300, image::Rgb([255, 0, 0])));
        let arr = preprocess(img, CropSize::Square(1200), 32);
        assert_eq!(arr.shape(), &[3, 32, 32]);
        assert!(arr.slice(ndarray::s![0, .., ..]).iter().all(|&v| (v - 1.0).abs() < 1e-6));
        assert!(arr.slice(ndarray::s![1, .., ..]).iter().all(|&v| (v + 1.0).abs() < 1e-6));
    }

    #[test]
    fn eight_bit_round_trip() {
        let img = RgbImage::from_fn(5, 4, |x, y| image::Rgb([(x * 40) as u8, (y * 60) as u8, 7]));
        assert_eq!(to_rgb(from_rgb(&img).view()), img);
    }
}
