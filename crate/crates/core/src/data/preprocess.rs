//! Decoding and resizing to the network's input geometry.

use std::path::Path;

use dualtrace_tensor::Tensor;
use image::imageops::{self, FilterType};
use image::{DynamicImage, GrayImage, RgbImage};

use super::{derive_edge_gt, BinaryMask, DEFAULT_EDGE_WIDTH};
use crate::error::{Error, Result};

pub const INPUT_SIZE: u32 = 256;

pub fn decode(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| Error::Decode { path: path.to_path_buf(), detail: e.to_string() })
}

/// Bilinear resize to `size`×`size`, scaled to [0,1], as a 3×H×W tensor.
pub fn preprocess(img: &DynamicImage, size: u32) -> Tensor<f32> {
    let rgb = img.to_rgb8();
    let rgb = if rgb.dimensions() == (size, size) { rgb } else { imageops::resize(&rgb, size, size, FilterType::Triangle) };
    rgb_to_tensor(&rgb)
}

pub fn rgb_to_tensor(rgb: &RgbImage) -> Tensor<f32> {
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut t = Tensor::zeros(&[3, h, w]);
    let data = t.data_mut();
    for (x, y, p) in rgb.enumerate_pixels() {
        for c in 0..3 {
            data[c * h * w + y as usize * w + x as usize] = p[c] as f32 / 255.0;
        }
    }
    t
}

/// Nearest-neighbour resize, then re-binarized at 127.
pub fn preprocess_mask(mask: &GrayImage, size: u32) -> BinaryMask {
    let resized = if mask.dimensions() == (size, size) {
        mask.clone()
    } else {
        imageops::resize(mask, size, size, FilterType::Nearest)
    };
    BinaryMask::from_gray(&resized, 127)
}

/// A decoded training pair at input resolution.
#[derive(Clone, Debug)]
pub struct Sample {
    pub image: Tensor<f32>,
    pub mask: BinaryMask,
    pub edge: BinaryMask,
}

pub fn load_sample(image_path: &Path, mask_path: &Path, size: u32) -> Result<Sample> {
    let image = preprocess(&decode(image_path)?, size);
    let mask = preprocess_mask(&decode(mask_path)?.to_luma8(), size);
    let edge = derive_edge_gt(&mask, DEFAULT_EDGE_WIDTH);
    Ok(Sample { image, mask, edge })
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Luma, Rgb};
    use proptest::prelude::*;

    #[test]
    fn resizes_to_input_size() {
        let img = DynamicImage::ImageRgb8(RgbImage::from_pixel(512, 512, Rgb([10, 20, 30])));
        let t = preprocess(&img, INPUT_SIZE);
        assert_eq!(t.shape(), &[3, 256, 256]);
        assert!((t.data()[0] - 10.0 / 255.0).abs() < 1e-6);
    }

    #[test]
    fn identity_size_only_rescales() {
        let rgb = RgbImage::from_fn(256, 256, |x, y| Rgb([x as u8, y as u8, (x ^ y) as u8]));
        let t = preprocess(&DynamicImage::ImageRgb8(rgb.clone()), 256);
        for (x, y, p) in rgb.enumerate_pixels() {
            for c in 0..3 {
                assert_eq!(t.data()[c * 65536 + y as usize * 256 + x as usize], p[c] as f32 / 255.0);
            }
        }
    }

    #[test]
    fn mask_rebinarized() {
        let m = GrayImage::from_fn(300, 300, |x, _| Luma([if x < 150 { 0 } else { 255 }]));
        let b = preprocess_mask(&m, 256);
        assert!(b.data().iter().all(|&v| v <= 1));
        assert!((b.area_fraction() - 0.5).abs() < 0.01);
    }

    #[test]
    fn decode_error_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("junk.png");
        std::fs::write(&p, b"not an image").unwrap();
        assert!(matches!(decode(&p), Err(Error::Decode { .. })));
    }

    proptest! {
        #[test]
        fn resize_keeps_binarity_and_area(
            src in 64u32..600,
            bw in 16u32..64, bh in 16u32..64,
            fx in 0.0f64..1.0, fy in 0.0f64..1.0,
        ) {
            // blob at least 16x16 at the destination resolution
            let scale = src as f64 / 256.0;
            let (bw, bh) = (((bw as f64) * scale).ceil() as u32, ((bh as f64) * scale).ceil() as u32);
            let (bw, bh) = (bw.min(src), bh.min(src));
            let x0 = ((src - bw) as f64 * fx) as u32;
            let y0 = ((src - bh) as f64 * fy) as u32;
            let m = GrayImage::from_fn(src, src, |x, y| {
                Luma([if (x0..x0 + bw).contains(&x) && (y0..y0 + bh).contains(&y) { 255 } else { 0 }])
            });
            let before = BinaryMask::from_gray(&m, 127).area_fraction();
            let after = preprocess_mask(&m, 256);
            prop_assert!(after.data().iter().all(|&v| v <= 1));
            prop_assert!((after.area_fraction() - before).abs() <= 0.02);
        }
    }
}
