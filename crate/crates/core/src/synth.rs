//! Procedural ten-class image corpus in the CIFAR-10 layout, used when the
//! real dataset is not on disk.
//!
//! Each class is an object of a given shape, hue and stripe texture on a
//! cluttered background. Hues and shapes are shared between pairs of
//! classes, so no single descriptor identifies a class on its own.

use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::ingest::{self, ImageRecord, NUM_CLASSES, PLANE, SIDE};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Disk,
    Square,
    Triangle,
    Ring,
    Cross,
}

const SHAPES: [Shape; 5] = [Shape::Disk, Shape::Square, Shape::Triangle, Shape::Ring, Shape::Cross];
const HUES: [f64; 5] = [0.0, 0.12, 0.33, 0.55, 0.75];
const STRIPE_FREQ: [f64; 3] = [1.5, 2.5, 3.5];

#[derive(Debug, Clone, Copy)]
struct Proto {
    shape: Shape,
    hue: f64,
    angle: f64,
    freq: f64,
}

fn proto(class: u8) -> Proto {
    let c = class as usize;
    Proto {
        shape: SHAPES[c % 5],
        hue: HUES[c / 2],
        angle: ((c * 37) % 180) as f64 * std::f64::consts::PI / 180.0,
        freq: STRIPE_FREQ[c % 3],
    }
}

/// HSV in [0,1]^3 to RGB in [0,255].
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(1.0) * 6.0;
    let i = h.floor();
    let f = h - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    let (r, g, b) = match i as u32 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [r * 255.0, g * 255.0, b * 255.0]
}

fn inside(shape: Shape, u: f64, w: f64) -> bool {
    match shape {
        Shape::Disk => u * u + w * w <= 1.0,
        Shape::Square => u.abs() <= 0.85 && w.abs() <= 0.85,
        Shape::Triangle => w <= 0.8 && w >= -1.0 + 1.9 * u.abs(),
        Shape::Ring => {
            let r2 = u * u + w * w;
            (0.3..=1.0).contains(&r2)
        }
        Shape::Cross => (u.abs() <= 0.3 && w.abs() <= 1.0) || (w.abs() <= 0.3 && u.abs() <= 1.0),
    }
}

/// Renders image `id` of class `label`. Deterministic in `(seed, id)`.
pub fn synth_image(id: u32, label: u8, seed: u64) -> Result<ImageRecord> {
    if label as usize >= NUM_CLASSES {
        return Err(Error::invalid(format!("label {label} out of range")));
    }
    let p = proto(label);
    let mut r = rng::keyed(seed, Stream::Synth, id as u64);
    let bg_hue: f64 = r.random();
    let bg_sat = r.random_range(0.05..0.45);
    let (bg_v0, bg_v1) = (r.random_range(0.2..0.9), r.random_range(0.2..0.9));
    let grad_dir = r.random_range(0.0..std::f64::consts::TAU);
    let hue = p.hue + r.random_range(-0.07..0.07);
    let sat = r.random_range(0.35..1.0);
    let val = r.random_range(0.45..1.0);
    let cx = 15.5 + r.random_range(-5.0..5.0);
    let cy = 15.5 + r.random_range(-5.0..5.0);
    let scale = r.random_range(7.0..13.0);
    let tilt: f64 = r.random_range(-0.35..0.35);
    let angle: f64 = p.angle + r.random_range(-0.25..0.25);
    let phase = r.random_range(0.0..std::f64::consts::TAU);
    let contrast = r.random_range(0.15..0.4);
    let distractor = r.random_bool(0.4).then(|| {
        (
            r.random_range(0.0..32.0),
            r.random_range(0.0..32.0),
            r.random_range(2.0..6.0),
            hsv_to_rgb(r.random(), r.random_range(0.3..1.0), r.random_range(0.3..1.0)),
        )
    });
    let noise = Normal::new(0.0, 10.0).expect("valid sigma");
    let (sin_t, cos_t) = tilt.sin_cos();
    let (sin_a, cos_a) = angle.sin_cos();
    let mut pixels = vec![0u8; 3 * PLANE];
    for y in 0..SIDE {
        for x in 0..SIDE {
            let (fx, fy) = (x as f64, y as f64);
            let g = ((fx - 15.5) * grad_dir.cos() + (fy - 15.5) * grad_dir.sin()) / 45.0 + 0.5;
            let mut rgb = hsv_to_rgb(bg_hue, bg_sat, bg_v0 + (bg_v1 - bg_v0) * g.clamp(0.0, 1.0));
            let (dx, dy) = ((fx - cx) / scale, (fy - cy) / scale);
            let (u, w) = (dx * cos_t + dy * sin_t, -dx * sin_t + dy * cos_t);
            if inside(p.shape, u, w) {
                let s = (fx * cos_a + fy * sin_a) * p.freq * std::f64::consts::TAU / SIDE as f64 + phase;
                let v = (val * (1.0 + contrast * s.sin().signum())).clamp(0.0, 1.0);
                rgb = hsv_to_rgb(hue, sat, v);
            }
            if let Some((bx, by, br, col)) = distractor {
                if (fx - bx).powi(2) + (fy - by).powi(2) <= br * br {
                    rgb = col;
                }
            }
            for (c, v) in rgb.iter().enumerate() {
                pixels[c * PLANE + y * SIDE + x] = (v + noise.sample(&mut r)).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    ImageRecord::new(id, label, pixels)
}

/// `n` images with labels cycling through the classes.
pub fn synth_dataset(n: usize, seed: u64) -> Result<Vec<ImageRecord>> {
    let gen = |i: usize| synth_image(i as u32, (i % NUM_CLASSES) as u8, seed);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(gen).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(gen).collect()
    }
}

/// Writes records as `data_batch_<k>.bin` files of up to 10,000 records.
pub fn write_corpus(dir: impl AsRef<Path>, records: &[ImageRecord]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (k, chunk) in records.chunks(10_000).enumerate() {
        ingest::write_cifar10(chunk, dir.join(format!("data_batch_{}.bin", k + 1)))?;
    }
    Ok(())
}
