//! Random crop-and-resize, horizontal flip and colour jitter for contrastive views.

use rand::Rng;

use crate::image::ImageTensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    /// Crop side as a fraction of the image side, drawn uniformly from this range.
    pub crop_scale: (f64, f64),
    pub flip_prob: f64,
    /// Maximum hue rotation as a fraction of the full circle.
    pub hue_jitter: f64,
    pub brightness_jitter: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { crop_scale: (0.8, 1.0), flip_prob: 0.5, hue_jitter: 0.02, brightness_jitter: 0.1 }
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        Self { crop_scale: (1.0, 1.0), flip_prob: 0.0, hue_jitter: 0.0, brightness_jitter: 0.0 }
    }
}

fn bilinear(img: &ImageTensor, x: f64, y: f64, c: usize) -> f64 {
    let x = x.clamp(0.0, (img.width - 1) as f64);
    let y = y.clamp(0.0, (img.height - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(img.width - 1), (y0 + 1).min(img.height - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let top = img.at(x0, y0, c) * (1.0 - fx) + img.at(x1, y0, c) * fx;
    let bot = img.at(x0, y1, c) * (1.0 - fx) + img.at(x1, y1, c) * fx;
    top * (1.0 - fy) + bot * fy
}

/// Rotation of RGB about the gray axis by `theta` radians.
fn hue_matrix(theta: f64) -> [[f64; 3]; 3] {
    let (s, c) = theta.sin_cos();
    let k = (1.0 - c) / 3.0;
    let r = s / 3f64.sqrt();
    [[c + k, k - r, k + r], [k + r, c + k, k - r], [k - r, k + r, c + k]]
}

/// One random view of `img`. Output has the input's size.
pub fn augment<R: Rng + ?Sized>(img: &ImageTensor, cfg: &AugmentConfig, rng: &mut R) -> ImageTensor {
    let (w, h) = (img.width, img.height);
    let (lo, hi) = cfg.crop_scale;
    let scale = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let cw = scale * w as f64;
    let ch = scale * h as f64;
    let ox = rng.random_range(0.0..=(w as f64 - cw).max(0.0));
    let oy = rng.random_range(0.0..=(h as f64 - ch).max(0.0));
    let flip = cfg.flip_prob > 0.0 && rng.random_bool(cfg.flip_prob.min(1.0));
    let theta = if cfg.hue_jitter > 0.0 {
        rng.random_range(-cfg.hue_jitter..=cfg.hue_jitter) * std::f64::consts::TAU
    } else {
        0.0
    };
    let bright = if cfg.brightness_jitter > 0.0 {
        1.0 + rng.random_range(-cfg.brightness_jitter..=cfg.brightness_jitter)
    } else {
        1.0
    };
    let m = hue_matrix(theta);

    let mut data = vec![0.0; w * h * 3];
    for py in 0..h {
        for px in 0..w {
            let sx = if flip { w - 1 - px } else { px };
            // pixel-centre mapping from output grid into the crop window
            let x = ox + (sx as f64 + 0.5) * cw / w as f64 - 0.5;
            let y = oy + (py as f64 + 0.5) * ch / h as f64 - 0.5;
            let rgb = [bilinear(img, x, y, 0), bilinear(img, x, y, 1), bilinear(img, x, y, 2)];
            let o = (py * w + px) * 3;
            for c in 0..3 {
                let v = m[c][0] * rgb[0] + m[c][1] * rgb[1] + m[c][2] * rgb[2];
                data[o + c] = (v * bright).clamp(0.0, 1.0);
            }
        }
    }
    ImageTensor { width: w, height: h, data }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn img() -> ImageTensor {
        ImageTensor { width: 6, height: 4, data: (0..72).map(|i| (i as f64 * 0.13).sin().abs()).collect() }
    }

    #[test]
    fn identity_config_returns_the_input() {
        let x = img();
        let y = augment(&x, &AugmentConfig::identity(), &mut ChaCha8Rng::seed_from_u64(0));
        for (a, b) in x.data.iter().zip(&y.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn forced_flip_mirrors_columns() {
        let x = img();
        let cfg = AugmentConfig { flip_prob: 1.0, ..AugmentConfig::identity() };
        let y = augment(&x, &cfg, &mut ChaCha8Rng::seed_from_u64(0));
        for py in 0..4 {
            for px in 0..6 {
                assert!((y.at(px, py, 1) - x.at(5 - px, py, 1)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hue_rotation_preserves_gray() {
        let m = hue_matrix(0.7);
        for row in m {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn views_stay_in_range_and_vary_with_rng() {
        let x = img();
        let cfg = AugmentConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = augment(&x, &cfg, &mut rng);
        let b = augment(&x, &cfg, &mut rng);
        assert!(a.data.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_ne!(a.data, b.data);
    }
}
