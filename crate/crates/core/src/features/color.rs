//! Colour histogram views.

use crate::ingest::{ImageRecord, PLANE};

pub const RGB_BINS: usize = 16;
pub const RGB_DIM: usize = 3 * RGB_BINS;
pub const H_BINS: usize = 18;
pub const S_BINS: usize = 8;
pub const V_BINS: usize = 8;
pub const HSV_DIM: usize = H_BINS + S_BINS + V_BINS;

/// 16 bins per channel, channels concatenated, normalised to sum 1.
pub fn rgb_histogram(record: &ImageRecord) -> Vec<f64> {
    let mut hist = vec![0.0; RGB_DIM];
    for px in record.rgb_iter() {
        for (c, &v) in px.iter().enumerate() {
            hist[c * RGB_BINS + v as usize * RGB_BINS / 256] += 1.0;
        }
    }
    let total = (3 * PLANE) as f64;
    hist.iter_mut().for_each(|h| *h /= total);
    hist
}

/// Converts 8-bit RGB to (H in [0, 360), S in [0, 1], V in [0, 1]).
/// Achromatic pixels get H = 0.
pub fn rgb_to_hsv([r, g, b]: [u8; 3]) -> (f64, f64, f64) {
    let (r, g, b) = (r as f64 / 255.0, g as f64 / 255.0, b as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let h = if h >= 360.0 { h - 360.0 } else { h };
    (h, s, v)
}

#[inline]
fn bin(x: f64, range: f64, bins: usize) -> usize {
    ((x / range * bins as f64) as usize).min(bins - 1)
}

/// H:18, S:8, V:8 bins concatenated, normalised to sum 1.
pub fn hsv_histogram(record: &ImageRecord) -> Vec<f64> {
    let mut hist = vec![0.0; HSV_DIM];
    for px in record.rgb_iter() {
        let (h, s, v) = rgb_to_hsv(px);
        hist[bin(h, 360.0, H_BINS)] += 1.0;
        hist[H_BINS + bin(s, 1.0, S_BINS)] += 1.0;
        hist[H_BINS + S_BINS + bin(v, 1.0, V_BINS)] += 1.0;
    }
    let total = (3 * PLANE) as f64;
    hist.iter_mut().for_each(|h| *h /= total);
    hist
}
