//! Synthetic two-class texture corpus.
//!
//! Class `0` holds smooth blob textures, class `1` holds oriented stripes at
//! 0.2 to 0.35 cycles per pixel. Both share the same stain-like palette and
//! mean brightness range, so the classes differ by spatial frequency.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image::encode_png_rgb;
use crate::error::Result;

pub const SYNTH_SIZE: u32 = 50;
pub const SYNTH_CLASSES: [&str; 2] = ["0", "1"];

fn palette(rng: &mut ChaCha8Rng) -> ([f64; 3], [f64; 3]) {
    // Pink background and purple foreground, jittered.
    let bg = [0.92, 0.72, 0.82].map(|v: f64| v + rng.gen_range(-0.05..0.05));
    let fg = [0.45, 0.25, 0.60].map(|v: f64| v + rng.gen_range(-0.05..0.05));
    (bg, fg)
}

fn blob_pattern(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let blobs: Vec<(f64, f64, f64, f64)> = (0..rng.gen_range(3..7))
        .map(|_| {
            (
                rng.gen_range(0.0..n as f64),
                rng.gen_range(0.0..n as f64),
                rng.gen_range(6.0..14.0),
                rng.gen_range(0.5..1.0),
            )
        })
        .collect();
    let mut out = vec![0.0; n * n];
    for (i, v) in out.iter_mut().enumerate() {
        let (y, x) = ((i / n) as f64, (i % n) as f64);
        let s: f64 = blobs
            .iter()
            .map(|&(cy, cx, r, a)| a * (-((y - cy).powi(2) + (x - cx).powi(2)) / (2.0 * r * r)).exp())
            .sum();
        *v = s.min(1.0);
    }
    out
}

fn stripe_pattern(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let freq = rng.gen_range(0.2..0.35);
    let angle = rng.gen_range(0.0..std::f64::consts::PI);
    let phase = rng.gen_range(0.0..TAU);
    let (s, c) = angle.sin_cos();
    (0..n * n)
        .map(|i| {
            let (y, x) = ((i / n) as f64, (i % n) as f64);
            0.5 + 0.5 * (TAU * freq * (x * c + y * s) + phase).sin()
        })
        .collect()
}

/// Pixels of one `SYNTH_SIZE`² RGB image for `class`.
pub fn synth_image(class: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let n = SYNTH_SIZE as usize;
    let (bg, fg) = palette(rng);
    let pattern = if class == 0 {
        blob_pattern(rng, n)
    } else {
        stripe_pattern(rng, n)
    };
    let mut rgb = Vec::with_capacity(3 * n * n);
    for &t in &pattern {
        for ch in 0..3 {
            let noise = rng.gen_range(-0.03..0.03);
            let v = bg[ch] * (1.0 - t) + fg[ch] * t + noise;
            rgb.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    rgb
}

/// Write `n_per_class` images into `out/0` and `out/1`. The corpus is a pure
/// function of `(n_per_class, seed)`.
pub fn write_synth_corpus(out: impl AsRef<Path>, n_per_class: usize, seed: u64) -> Result<Vec<PathBuf>> {
    let mut written = Vec::with_capacity(2 * n_per_class);
    for (class, name) in SYNTH_CLASSES.iter().enumerate() {
        let dir = out.as_ref().join(name);
        std::fs::create_dir_all(&dir)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(class as u64);
        for i in 0..n_per_class {
            let path = dir.join(format!("synth_{i:05}.png"));
            encode_png_rgb(&path, SYNTH_SIZE, SYNTH_SIZE, &synth_image(class, &mut rng))?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::decode_png;

    #[test]
    fn corpus_layout_and_determinism() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let files = write_synth_corpus(a.path(), 3, 11).unwrap();
        write_synth_corpus(b.path(), 3, 11).unwrap();
        assert_eq!(files.len(), 6);
        for f in &files {
            let rel = f.strip_prefix(a.path()).unwrap();
            assert_eq!(std::fs::read(f).unwrap(), std::fs::read(b.path().join(rel)).unwrap());
            assert_eq!(decode_png(f).unwrap().shape(), &[3, 50, 50]);
        }
    }

    /// Mean absolute horizontal neighbor difference.
    fn roughness(rgb: &[u8]) -> f64 {
        let n = SYNTH_SIZE as usize;
        let mut s = 0.0;
        for y in 0..n {
            for x in 1..n {
                s += (f64::from(rgb[3 * (y * n + x)]) - f64::from(rgb[3 * (y * n + x - 1)])).abs();
            }
        }
        s / (n * (n - 1)) as f64
    }

    #[test]
    fn stripes_are_rougher_than_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            let blob = roughness(&synth_image(0, &mut rng));
            let stripe = roughness(&synth_image(1, &mut rng));
            assert!(stripe > blob, "{stripe} vs {blob}");
        }
    }
}
