//! Self-contained multi-domain corpus of tinted geometric scenes.
//!
//! Content (shape kind, placement, size, brightness) varies freely inside
//! every domain. The domain is carried by a hue family and a stripe texture
//! period, both fixed per domain index, so the mean hue of an image alone
//! identifies its domain while most pixel variance comes from content.
//!
//! Background brightness stays in a narrow band. A generator whose first
//! layer is instance-normalized cannot see a global intensity change, so
//! spreading it widely would put an irreducible floor under reconstruction.

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{derive_seed, Dataset};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
    Ring,
}

impl ShapeKind {
    /// Whether offset `(dx, dy)` from the shape center lies inside a shape of radius `r`.
    fn contains(self, dx: f64, dy: f64, r: f64) -> bool {
        match self {
            ShapeKind::Circle => dx * dx + dy * dy <= r * r,
            ShapeKind::Square => dx.abs() <= 0.85 * r && dy.abs() <= 0.85 * r,
            ShapeKind::Triangle => dy >= -r && dy <= r && dx.abs() <= (dy + r) * 0.5,
            ShapeKind::Ring => {
                let d2 = dx * dx + dy * dy;
                d2 <= r * r && d2 >= 0.36 * r * r
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticDomainConfig {
    pub num_per_domain: usize,
    pub shape_vocabulary: Vec<ShapeKind>,
    /// Content seed; independent of the training seed.
    pub seed: u64,
}

impl Default for SyntheticDomainConfig {
    fn default() -> Self {
        Self {
            num_per_domain: 100,
            shape_vocabulary: vec![ShapeKind::Circle, ShapeKind::Square, ShapeKind::Triangle, ShapeKind::Ring],
            seed: 0,
        }
    }
}

impl SyntheticDomainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_per_domain == 0 {
            return Err(Error::config_at("dataset.synthetic.num_per_domain", "must be positive"));
        }
        if self.shape_vocabulary.is_empty() {
            return Err(Error::config_at("dataset.synthetic.shape_vocabulary", "must not be empty"));
        }
        Ok(())
    }
}

/// Per-domain transform: a hue family and a texture period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainStyle {
    pub hue_degrees: f64,
    /// Stripe period as a fraction of the image side.
    pub stripe_period: f64,
}

impl DomainStyle {
    /// Hue jitter applied per image around the domain hue.
    pub const HUE_JITTER: f64 = 10.0;

    pub fn for_domain(domain: usize, num_domains: usize) -> Self {
        Self {
            hue_degrees: (20.0 + 360.0 * domain as f64 / num_domains as f64) % 360.0,
            stripe_period: 1.0 / (5.0 + 3.0 * domain as f64),
        }
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

struct Blob {
    kind: ShapeKind,
    cx: f64,
    cy: f64,
    r: f64,
    value: f64,
    sat: f64,
}

fn render(style: DomainStyle, vocab: &[ShapeKind], size: usize, rng: &mut ChaCha8Rng) -> Array3<f32> {
    let n = size as f64;
    let hue = style.hue_degrees + rng.random_range(-DomainStyle::HUE_JITTER..DomainStyle::HUE_JITTER);
    let bg_value = rng.random_range(0.5..0.6);
    let bg_sat = rng.random_range(0.15..0.3);
    let grad_angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (gx, gy) = (grad_angle.cos() * 0.12, grad_angle.sin() * 0.12);
    let num_blobs = rng.random_range(1..=2);
    let blobs: Vec<Blob> = (0..num_blobs)
        .map(|_| Blob {
            kind: vocab[rng.random_range(0..vocab.len())],
            cx: rng.random_range(0.25..0.75) * n,
            cy: rng.random_range(0.25..0.75) * n,
            r: rng.random_range(0.15..0.3) * n,
            value: if rng.random_bool(0.5) { rng.random_range(0.05..0.25) } else { rng.random_range(0.85..1.0) },
            sat: rng.random_range(0.15..0.35),
        })
        .collect();
    let period = style.stripe_period * n * std::f64::consts::SQRT_2;

    let mut img = Array3::<f32>::zeros((3, size, size));
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let (u, v) = (px / n - 0.5, py / n - 0.5);
            let mut value = bg_value + gx * u + gy * v;
            let mut sat = bg_sat;
            for b in &blobs {
                if b.kind.contains(px - b.cx, py - b.cy, b.r) {
                    let stripe = (std::f64::consts::TAU * (px + py) / period).sin();
                    value = b.value + 0.08 * stripe;
                    sat = b.sat;
                }
            }
            let rgb = hsv_to_rgb(hue, sat, value.clamp(0.02, 1.0));
            for c in 0..3 {
                img[[c, y, x]] = (2.0 * rgb[c] - 1.0) as f32;
            }
        }
    }
    img
}

/// Renders `num_per_domain` images for each of `num_domains` domains.
pub fn generate_synthetic(cfg: &SyntheticDomainConfig, num_domains: usize, size: usize, names: &[String]) -> Dataset {
    let mut images = Vec::with_capacity(cfg.num_per_domain * num_domains);
    let mut labels = Vec::with_capacity(images.capacity());
    for k in 0..num_domains {
        let style = DomainStyle::for_domain(k, num_domains);
        for i in 0..cfg.num_per_domain {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, k as u64, i as u64]));
            images.push(render(style, &cfg.shape_vocabulary, size, &mut rng));
            labels.push(k);
        }
    }
    Dataset { domain_names: names.to_vec(), image_size: size, images, labels }
}

/// Hue in degrees of the mean color of an image in `[-1, 1]`.
pub fn mean_hue(image: &Array3<f32>) -> f64 {
    let mean = |c: usize| image.index_axis(ndarray::Axis(0), c).iter().map(|&v| v as f64).sum::<f64>();
    let (r, g, b) = (mean(0), mean(1), mean(2));
    // hue is invariant to the affine [-1,1] -> [0,1] map applied per channel
    let (max, min) = (r.max(g).max(b), r.min(g).min(b));
    let d = max - min;
    if d <= 0.0 {
        return 0.0;
    }
    let h = if max == r {
        ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        (b - r) / d + 2.0
    } else {
        (r - g) / d + 4.0
    };
    h * 60.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("d{i}")).collect()
    }

    fn hue_distance(a: f64, b: f64) -> f64 {
        let d = (a - b).rem_euclid(360.0);
        d.min(360.0 - d)
    }

    #[test]
    fn counts_and_labels() {
        let cfg = SyntheticDomainConfig { num_per_domain: 100, ..Default::default() };
        let ds = generate_synthetic(&cfg, 3, 16, &names(3));
        assert_eq!(ds.len(), 300);
        assert_eq!(ds.counts_per_domain(), vec![100, 100, 100]);
        assert!(ds.images.iter().all(|im| im.iter().all(|v| v.is_finite() && (-1.0..=1.0).contains(v))));
    }

    #[test]
    fn domain_transforms_are_pairwise_distinct() {
        let styles: Vec<_> = (0..5).map(|k| DomainStyle::for_domain(k, 5)).collect();
        for i in 0..5 {
            for j in i + 1..5 {
                assert!(hue_distance(styles[i].hue_degrees, styles[j].hue_degrees) > 2.0 * DomainStyle::HUE_JITTER);
                assert_ne!(styles[i].stripe_period, styles[j].stripe_period);
            }
        }
    }

    #[test]
    fn mean_hue_threshold_classifier_is_perfect() {
        let cfg = SyntheticDomainConfig { num_per_domain: 60, ..Default::default() };
        let k = 3;
        let ds = generate_synthetic(&cfg, k, 32, &names(k));
        for (img, &label) in ds.images.iter().zip(&ds.labels) {
            let h = mean_hue(img);
            let predicted = (0..k)
                .min_by(|&a, &b| {
                    let da = hue_distance(h, DomainStyle::for_domain(a, k).hue_degrees);
                    let db = hue_distance(h, DomainStyle::for_domain(b, k).hue_degrees);
                    da.total_cmp(&db)
                })
                .unwrap();
            assert_eq!(predicted, label);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SyntheticDomainConfig { num_per_domain: 3, ..Default::default() };
        let a = generate_synthetic(&cfg, 2, 16, &names(2));
        let b = generate_synthetic(&cfg, 2, 16, &names(2));
        assert_eq!(a.images, b.images);
    }
}
