use ndarray::Array3;
use rand::Rng;

/// Rotation angles drawn uniformly by [`augment`].
pub const ROTATION_DEGREES: [i32; 5] = [-2, -1, 0, 1, 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentParams {
    pub flip: bool,
    pub degrees: i32,
}

impl AugmentParams {
    pub const IDENTITY: Self = Self { flip: false, degrees: 0 };

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let flip = rng.random_bool(0.5);
        let degrees = ROTATION_DEGREES[rng.random_range(0..ROTATION_DEGREES.len())];
        Self { flip, degrees }
    }
}

/// Random horizontal mirror (p = 0.5) followed by a small random rotation.
pub fn augment<R: Rng + ?Sized>(image: &Array3<f32>, rng: &mut R) -> Array3<f32> {
    augment_with(image, AugmentParams::sample(rng))
}

/// Applies fixed augmentation parameters. Rotation is about the image
/// center with bilinear resampling and border replication.
pub fn augment_with(image: &Array3<f32>, params: AugmentParams) -> Array3<f32> {
    let mut out = image.clone();
    if params.flip {
        out.invert_axis(ndarray::Axis(2));
        out = out.as_standard_layout().into_owned();
    }
    if params.degrees != 0 {
        out = rotate(&out, params.degrees as f32);
    }
    out.mapv_inplace(|v| v.clamp(-1.0, 1.0));
    out
}

fn rotate(image: &Array3<f32>, degrees: f32) -> Array3<f32> {
    let (c, h, w) = image.dim();
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cy, cx) = ((h as f32 - 1.0) / 2.0, (w as f32 - 1.0) / 2.0);
    let mut out = Array3::<f32>::zeros((c, h, w));
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f32 - cx, y as f32 - cy);
            // inverse mapping: sample the source at the point rotated by -angle
            let sx = (cos * dx + sin * dy + cx).clamp(0.0, (w - 1) as f32);
            let sy = (-sin * dx + cos * dy + cy).clamp(0.0, (h - 1) as f32);
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (fx, fy) = (sx - x0 as f32, sy - y0 as f32);
            for ch in 0..c {
                let top = image[[ch, y0, x0]] * (1.0 - fx) + image[[ch, y0, x1]] * fx;
                let bottom = image[[ch, y1, x0]] * (1.0 - fx) + image[[ch, y1, x1]] * fx;
                out[[ch, y, x]] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp() -> Array3<f32> {
        Array3::from_shape_fn((3, 6, 7), |(c, y, x)| ((c * 42 + y * 7 + x) as f32 / 126.0) * 2.0 - 1.0)
    }

    #[test]
    fn identity_parameters_are_a_no_op() {
        let img = ramp();
        assert_eq!(augment_with(&img, AugmentParams::IDENTITY), img);
    }

    #[test]
    fn flip_reverses_columns() {
        let img = ramp();
        let out = augment_with(&img, AugmentParams { flip: true, degrees: 0 });
        for ((c, y, x), &v) in out.indexed_iter() {
            assert_eq!(v, img[[c, y, 6 - x]]);
        }
    }

    #[test]
    fn double_flip_is_identity() {
        let img = ramp();
        let p = AugmentParams { flip: true, degrees: 0 };
        assert_eq!(augment_with(&augment_with(&img, p), p), img);
    }

    #[test]
    fn rotation_keeps_range_and_moves_pixels() {
        let img = ramp();
        let out = augment_with(&img, AugmentParams { flip: false, degrees: 2 });
        assert_eq!(out.dim(), img.dim());
        assert!(out.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_ne!(out, img);
        // the center pixel of an odd-width row stays close to its source value
        assert!((out[[0, 3, 3]] - img[[0, 3, 3]]).abs() < 0.05);
    }

    #[test]
    fn sampling_is_seeded_and_covers_all_angles() {
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        let mut seen = std::collections::BTreeSet::new();
        let mut flips = 0;
        for _ in 0..400 {
            let p = AugmentParams::sample(&mut a);
            assert_eq!(p, AugmentParams::sample(&mut b));
            seen.insert(p.degrees);
            flips += p.flip as usize;
        }
        assert_eq!(seen.into_iter().collect::<Vec<_>>(), ROTATION_DEGREES.to_vec());
        assert!((150..250).contains(&flips));
    }
}
