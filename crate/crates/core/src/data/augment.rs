use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Training-time image transforms. `mean`/`std` are per-channel in `[0, 1]`
/// pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentPolicy {
    pub mean: [f64; 3],
    pub std: [f64; 3],
    pub hflip_prob: f64,
    pub vflip_prob: f64,
    pub rotation_deg: f64,
    pub target_hw: usize,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            mean: [0.5; 3],
            std: [0.5; 3],
            hflip_prob: 0.5,
            vflip_prob: 0.5,
            rotation_deg: 15.0,
            target_hw: 224,
        }
    }
}

impl AugmentPolicy {
    /// Resize and normalize only.
    pub fn identity(target_hw: usize) -> Self {
        Self {
            mean: [0.0; 3],
            std: [1.0; 3],
            hflip_prob: 0.0,
            vflip_prob: 0.0,
            rotation_deg: 0.0,
            target_hw,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.hflip_prob) || !prob(self.vflip_prob) {
            return Err(Error::BadConfig("flip probabilities must lie in [0, 1]".into()));
        }
        if self.target_hw == 0 {
            return Err(Error::BadConfig("target_hw must be > 0".into()));
        }
        if !(self.rotation_deg.is_finite() && self.rotation_deg >= 0.0) {
            return Err(Error::BadConfig("rotation_deg must be finite and ≥ 0".into()));
        }
        if self.std.iter().any(|&s| !s.is_finite() || s <= 0.0) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::BadConfig("normalization needs finite mean and std > 0".into()));
        }
        Ok(())
    }
}

fn dims(img: &Tensor<f32>) -> (usize, usize, usize) {
    match *img.shape() {
        [c, h, w] => (c, h, w),
        ref s => panic!("image tensors are [C,H,W], got {s:?}"),
    }
}

/// Corner-aligned source coordinate: output index `i` of `n_out` maps to
/// `i · (n_in − 1) / (n_out − 1)`. A single output sample maps to the
/// center of the input.
fn source_coord(i: usize, n_in: usize, n_out: usize) -> f64 {
    if n_out == 1 {
        (n_in as f64 - 1.0) / 2.0
    } else {
        i as f64 * (n_in as f64 - 1.0) / (n_out as f64 - 1.0)
    }
}

/// Bilinear resize with corner-aligned mapping: the four corner pixels of
/// the output equal the input's corners. Arithmetic is in f64.
pub fn resize_bilinear(img: &Tensor<f32>, out_h: usize, out_w: usize) -> Tensor<f32> {
    let (c, h, w) = dims(img);
    let src = img.data();
    let xs: Vec<(usize, usize, f64)> = (0..out_w)
        .map(|x| {
            let s = source_coord(x, w, out_w);
            let x0 = (s.floor() as usize).min(w - 1);
            (x0, (x0 + 1).min(w - 1), s - x0 as f64)
        })
        .collect();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for y in 0..out_h {
            let s = source_coord(y, h, out_h);
            let y0 = (s.floor() as usize).min(h - 1);
            let y1 = (y0 + 1).min(h - 1);
            let fy = s - y0 as f64;
            for &(x0, x1, fx) in &xs {
                let p = |yy: usize, xx: usize| f64::from(plane[yy * w + xx]);
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bot = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                out.push((top * (1.0 - fy) + bot * fy) as f32);
            }
        }
    }
    Tensor::new(&[c, out_h, out_w], out).expect("sized")
}

/// Mirror left-right.
pub fn hflip(img: &Tensor<f32>) -> Tensor<f32> {
    let (c, h, w) = dims(img);
    let d = img.data();
    Tensor::from_fn(&[c, h, w], |i| {
        let x = i % w;
        d[i - x + (w - 1 - x)]
    })
}

/// Mirror top-bottom.
pub fn vflip(img: &Tensor<f32>) -> Tensor<f32> {
    let (c, h, w) = dims(img);
    let d = img.data();
    Tensor::from_fn(&[c, h, w], |i| {
        let (ch, y, x) = (i / (h * w), i / w % h, i % w);
        d[(ch * h + (h - 1 - y)) * w + x]
    })
}

/// Rotate counter-clockwise by `degrees` about the image center. Each output
/// pixel is a bilinear sample of the source at the inversely rotated
/// position; neighbors outside the source count as zero.
pub fn rotate(img: &Tensor<f32>, degrees: f64) -> Tensor<f32> {
    let (c, h, w) = dims(img);
    let d = img.data();
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = vec![0f32; c * h * w];
    for y in 0..h {
        for x in 0..w {
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            // Inverse rotation; y grows downward so the visual sense is CCW.
            let sx = cos * dx - sin * dy + cx;
            let sy = sin * dx + cos * dy + cy;
            let (fx0, fy0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - fx0, sy - fy0);
            let (x0, y0) = (fx0 as isize, fy0 as isize);
            let taps = [
                (y0, x0, (1.0 - fy) * (1.0 - fx)),
                (y0, x0 + 1, (1.0 - fy) * fx),
                (y0 + 1, x0, fy * (1.0 - fx)),
                (y0 + 1, x0 + 1, fy * fx),
            ];
            for ch in 0..c {
                let plane = &d[ch * h * w..(ch + 1) * h * w];
                let mut acc = 0.0f64;
                for &(ty, tx, wgt) in &taps {
                    if wgt != 0.0 && ty >= 0 && tx >= 0 && (ty as usize) < h && (tx as usize) < w {
                        acc += wgt * f64::from(plane[ty as usize * w + tx as usize]);
                    }
                }
                out[(ch * h + y) * w + x] = acc as f32;
            }
        }
    }
    Tensor::new(&[c, h, w], out).expect("sized")
}

/// `(x − mean[c]) / std[c]` per channel.
pub fn normalize(img: &Tensor<f32>, mean: &[f64; 3], std: &[f64; 3]) -> Tensor<f32> {
    let (c, h, w) = dims(img);
    let d = img.data();
    Tensor::from_fn(&[c, h, w], |i| {
        let ch = i / (h * w);
        ((f64::from(d[i]) - mean[ch]) / std[ch]) as f32
    })
}

/// Training path: resize, random hflip, random vflip, random rotation in
/// `[−θ, θ]`, normalize. Three draws are taken from `rng` on every call so
/// the stream does not depend on the policy.
pub fn augment(img: &Tensor<f32>, policy: &AugmentPolicy, rng: &mut impl Rng) -> Tensor<f32> {
    let u_h: f64 = rng.gen();
    let u_v: f64 = rng.gen();
    let u_r: f64 = rng.gen();
    let hw = policy.target_hw;
    let mut x = resize_bilinear(img, hw, hw);
    if u_h < policy.hflip_prob {
        x = hflip(&x);
    }
    if u_v < policy.vflip_prob {
        x = vflip(&x);
    }
    if policy.rotation_deg > 0.0 {
        x = rotate(&x, (2.0 * u_r - 1.0) * policy.rotation_deg);
    }
    normalize(&x, &policy.mean, &policy.std)
}

/// Evaluation path: resize and normalize.
pub fn preprocess(img: &Tensor<f32>, policy: &AugmentPolicy) -> Tensor<f32> {
    let hw = policy.target_hw;
    normalize(&resize_bilinear(img, hw, hw), &policy.mean, &policy.std)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_img(c: usize, h: usize, w: usize, seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::rand_uniform(&[c, h, w], 0.0, 1.0, &mut rng)
    }

    #[test]
    fn identity_policy_is_pure_resize() {
        let img = random_img(3, 50, 50, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = augment(&img, &AugmentPolicy::identity(64), &mut rng);
        assert_eq!(out, resize_bilinear(&img, 64, 64));
    }

    #[test]
    fn resize_same_size_is_identity_and_keeps_corners() {
        let img = random_img(3, 7, 9, 3);
        assert_eq!(resize_bilinear(&img, 7, 9), img);
        let up = resize_bilinear(&img, 20, 13);
        for ch in 0..3 {
            for (y, x, uy, ux) in [(0, 0, 0, 0), (6, 8, 19, 12), (0, 8, 0, 12), (6, 0, 19, 0)] {
                assert_eq!(img.get(&[ch, y, x]).unwrap(), up.get(&[ch, uy, ux]).unwrap());
            }
        }
    }

    #[test]
    fn resize_hand_example() {
        // [0, 1] stretched to 3 samples gives the midpoint.
        let img = Tensor::new(&[1, 1, 2], vec![0.0f32, 1.0]).unwrap();
        assert_eq!(resize_bilinear(&img, 1, 3).data(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn flips_are_involutions() {
        let img = random_img(3, 5, 6, 4);
        assert_eq!(hflip(&hflip(&img)), img);
        assert_eq!(vflip(&vflip(&img)), img);
        assert_ne!(hflip(&img), img);
        let forced = AugmentPolicy {
            hflip_prob: 1.0,
            ..AugmentPolicy::identity(5)
        };
        let once = augment(&random_img(3, 5, 5, 9), &forced, &mut ChaCha8Rng::seed_from_u64(0));
        let twice = augment(&once, &forced, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(twice, random_img(3, 5, 5, 9));
    }

    #[test]
    fn zero_rotation_is_identity() {
        let img = random_img(3, 16, 16, 5);
        let r = rotate(&img, 0.0);
        for (a, b) in r.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn quarter_turn_on_odd_square_is_exact() {
        let img = Tensor::new(&[1, 3, 3], (0..9).map(|v| v as f32).collect()).unwrap();
        let r = rotate(&img, 90.0);
        let expect = [2.0, 5.0, 8.0, 1.0, 4.0, 7.0, 0.0, 3.0, 6.0];
        for (a, b) in r.data().iter().zip(expect) {
            assert!((a - b).abs() <= 1e-5, "{:?}", r.data());
        }
    }

    #[test]
    fn rotation_fills_corners_with_zero() {
        let img = Tensor::<f32>::ones(&[1, 21, 21]);
        let r = rotate(&img, 45.0);
        assert_eq!(r.get(&[0, 0, 0]).unwrap(), 0.0);
        assert_eq!(r.get(&[0, 10, 10]).unwrap(), 1.0);
    }

    #[test]
    fn normalize_example() {
        let img = Tensor::<f32>::full(&[3, 2, 2], 0.75);
        let n = normalize(&img, &[0.5, 0.25, 0.75], &[0.5, 0.5, 1.0]);
        assert_eq!(n.get(&[0, 0, 0]).unwrap(), 0.5);
        assert_eq!(n.get(&[1, 1, 1]).unwrap(), 1.0);
        assert_eq!(n.get(&[2, 0, 1]).unwrap(), 0.0);
    }

    #[test]
    fn validation() {
        assert!(AugmentPolicy::default().validate().is_ok());
        let bad = AugmentPolicy {
            hflip_prob: 1.5,
            ..AugmentPolicy::default()
        };
        assert!(bad.validate().is_err());
        let zero = AugmentPolicy {
            target_hw: 0,
            ..AugmentPolicy::default()
        };
        assert!(zero.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn output_shape_is_fixed(h in 1usize..40, w in 1usize..40, seed in any::<u64>()) {
            let img = random_img(3, h, w, seed);
            let policy = AugmentPolicy { target_hw: 24, ..AugmentPolicy::default() };
            let out = augment(&img, &policy, &mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(out.shape(), &[3, 24, 24]);
            prop_assert!(out.all_finite());
        }
    }
}
