//! Histogram of oriented gradients.
//!
//! Centred [-1, 0, 1] gradients (edge pixels replicated), 9 unsigned
//! orientation bins of 20 degrees with hard assignment, 8x8-pixel cells,
//! 2x2-cell blocks at a stride of one cell, each block L2-normalised.

use crate::ingest::{ImageRecord, SIDE};

pub const ORIENTATIONS: usize = 9;
pub const CELL: usize = 8;
pub const BLOCK: usize = 2;
pub const EPS: f64 = 1e-6;

/// Descriptor length for a `width` x `height` image.
pub fn hog_dim(width: usize, height: usize) -> usize {
    let (cx, cy) = (width / CELL, height / CELL);
    (cx + 1 - BLOCK) * (cy + 1 - BLOCK) * BLOCK * BLOCK * ORIENTATIONS
}

/// Orientation bin of a gradient, in [0, 9).
pub fn orientation_bin(gx: f64, gy: f64) -> usize {
    let mut angle = gy.atan2(gx).to_degrees();
    if angle < 0.0 {
        angle += 180.0;
    }
    if angle >= 180.0 {
        angle -= 180.0;
    }
    ((angle / (180.0 / ORIENTATIONS as f64)) as usize).min(ORIENTATIONS - 1)
}

pub fn hog(gray: &[f64], width: usize, height: usize) -> Vec<f64> {
    let (cx, cy) = (width / CELL, height / CELL);
    let mut cells = vec![0.0; cx * cy * ORIENTATIONS];
    let at = |x: isize, y: isize| {
        let x = x.clamp(0, width as isize - 1) as usize;
        let y = y.clamp(0, height as isize - 1) as usize;
        gray[y * width + x]
    };
    for y in 0..cy * CELL {
        for x in 0..cx * CELL {
            let (xi, yi) = (x as isize, y as isize);
            let gx = at(xi + 1, yi) - at(xi - 1, yi);
            let gy = at(xi, yi + 1) - at(xi, yi - 1);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let cell = (y / CELL) * cx + x / CELL;
            cells[cell * ORIENTATIONS + orientation_bin(gx, gy)] += mag;
        }
    }

    let mut out = Vec::with_capacity(hog_dim(width, height));
    for by in 0..=cy - BLOCK {
        for bx in 0..=cx - BLOCK {
            let start = out.len();
            for dy in 0..BLOCK {
                for dx in 0..BLOCK {
                    let cell = (by + dy) * cx + bx + dx;
                    out.extend_from_slice(&cells[cell * ORIENTATIONS..(cell + 1) * ORIENTATIONS]);
                }
            }
            let block = &mut out[start..];
            let norm = (block.iter().map(|v| v * v).sum::<f64>() + EPS * EPS).sqrt();
            block.iter_mut().for_each(|v| *v /= norm);
        }
    }
    out
}

pub fn hog_descriptor(record: &ImageRecord) -> Vec<f64> {
    hog(&record.grayscale(), SIDE, SIDE)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimension_for_32x32_is_324() {
        assert_eq!(hog_dim(32, 32), 3 * 3 * 2 * 2 * 9);
        assert_eq!(hog(&vec![0.0; 1024], 32, 32).len(), 324);
    }

    #[test]
    fn constant_image_gives_zero_descriptor() {
        let d = hog(&vec![77.0; 1024], 32, 32);
        assert!(d.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vertical_step_edge_votes_horizontal_gradient_bin() {
        let gray: Vec<f64> = (0..1024).map(|i| if i % 32 < 13 { 0.0 } else { 200.0 }).collect();
        let d = hog(&gray, 32, 32);
        let mut per_bin = [0.0; ORIENTATIONS];
        for (i, v) in d.iter().enumerate() {
            per_bin[i % ORIENTATIONS] += v;
        }
        assert!(per_bin[0] > 0.0);
        assert!(per_bin[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn blocks_are_unit_norm_when_nonzero() {
        let gray: Vec<f64> = (0..1024).map(|i| ((i * 31) % 97) as f64).collect();
        let d = hog(&gray, 32, 32);
        for block in d.chunks(36) {
            let n: f64 = block.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
            assert!(block.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn orientation_bins() {
        assert_eq!(orientation_bin(1.0, 0.0), 0);
        assert_eq!(orientation_bin(-1.0, 0.0), 0);
        assert_eq!(orientation_bin(0.0, 1.0), 4);
        assert_eq!(orientation_bin(1.0, 1.0), 2);
        assert_eq!(orientation_bin(-1.0, 1e-9), 8);
    }
}
