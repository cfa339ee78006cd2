//! Minimal scatter plots rendered straight to PNG.

use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::ArrayView2;

use crate::data_pipeline::image_io::save_rgb;
use crate::Result;

const SIDE: u32 = 560;
const MARGIN: f64 = 30.0;
const PALETTE: [[u8; 3]; 8] = [
    [228, 26, 28],
    [55, 126, 184],
    [77, 175, 74],
    [152, 78, 163],
    [255, 127, 0],
    [166, 86, 40],
    [247, 129, 191],
    [90, 90, 90],
];

pub fn domain_color(domain: usize) -> [u8; 3] {
    PALETTE[domain % PALETTE.len()]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Marker {
    Dot,
    /// Hollow ring, used to set originals apart from translations.
    Ring,
}

fn disc(img: &mut RgbImage, cx: f64, cy: f64, r: f64, color: [u8; 3], hollow: bool) {
    let (x0, x1) = ((cx - r).floor().max(0.0) as u32, ((cx + r).ceil() as u32).min(SIDE - 1));
    let (y0, y1) = ((cy - r).floor().max(0.0) as u32, ((cy + r).ceil() as u32).min(SIDE - 1));
    for y in y0..=y1 {
        for x in x0..=x1 {
            let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            if d <= r && (!hollow || d >= r - 1.5) {
                img.put_pixel(x, y, Rgb(color));
            }
        }
    }
}

/// Scatter of 2-D `points` colored by `labels`, with a color key of one
/// swatch per domain in the top-left corner.
pub fn scatter(points: ArrayView2<f64>, labels: &[usize], markers: &[Marker], num_domains: usize, path: &Path) -> Result<()> {
    let mut img = RgbImage::from_pixel(SIDE, SIDE, Rgb([255, 255, 255]));
    let range = |c: usize| {
        let col = points.column(c);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, (hi - lo).max(1e-12))
    };
    let ((x_lo, x_span), (y_lo, y_span)) = (range(0), range(1));
    let inner = SIDE as f64 - 2.0 * MARGIN;
    for (i, p) in points.rows().into_iter().enumerate() {
        let x = MARGIN + (p[0] - x_lo) / x_span * inner;
        let y = MARGIN + (1.0 - (p[1] - y_lo) / y_span) * inner;
        let ring = markers.get(i) == Some(&Marker::Ring);
        disc(&mut img, x, y, if ring { 5.0 } else { 3.0 }, domain_color(labels[i]), ring);
    }
    for d in 0..num_domains {
        for y in 6..14 {
            for x in 6 + 12 * d as u32..14 + 12 * d as u32 {
                img.put_pixel(x, y, Rgb(domain_color(d)));
            }
        }
    }
    save_rgb(&img, path)
}
