//! Uniform local binary patterns, 8 neighbours at radius 1.

use std::sync::OnceLock;

use crate::ingest::{ImageRecord, SIDE};

pub const LBP_DIM: usize = 59;

/// Clockwise from the top-left neighbour.
const OFFSETS: [(isize, isize); 8] = [(-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0)];

fn transitions(code: u8) -> u32 {
    (code ^ code.rotate_left(1)).count_ones()
}

/// Maps each 8-bit code to its histogram bin: the 58 uniform codes take bins
/// 0..58 in ascending code order, everything else shares bin 58.
fn bin_table() -> &'static [u8; 256] {
    static TABLE: OnceLock<[u8; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [58u8; 256];
        let mut next = 0u8;
        for code in 0..=255u8 {
            if transitions(code) <= 2 {
                t[code as usize] = next;
                next += 1;
            }
        }
        debug_assert_eq!(next, 58);
        t
    })
}

/// The LBP code at (x, y); a neighbour sets its bit when strictly brighter
/// than the centre.
pub fn lbp_code(gray: &[f64], width: usize, x: usize, y: usize) -> u8 {
    let c = gray[y * width + x];
    let mut code = 0u8;
    for (bit, (dx, dy)) in OFFSETS.iter().enumerate() {
        let nx = (x as isize + dx) as usize;
        let ny = (y as isize + dy) as usize;
        if gray[ny * width + nx] > c {
            code |= 1 << bit;
        }
    }
    code
}

/// Normalised 59-bin histogram over the interior pixels of a grayscale image.
pub fn lbp_histogram(gray: &[f64], width: usize, height: usize) -> Vec<f64> {
    let table = bin_table();
    let mut hist = vec![0.0; LBP_DIM];
    for y in 1..height - 1 {
        for x in 1..width - 1 {
            hist[table[lbp_code(gray, width, x, y) as usize] as usize] += 1.0;
        }
    }
    let n = ((width - 2) * (height - 2)) as f64;
    hist.iter_mut().for_each(|h| *h /= n);
    hist
}

pub fn lbp_descriptor(record: &ImageRecord) -> Vec<f64> {
    lbp_histogram(&record.grayscale(), SIDE, SIDE)
}

/// Bin index of an 8-bit code.
pub fn lbp_bin(code: u8) -> usize {
    bin_table()[code as usize] as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn there_are_58_uniform_codes() {
        assert_eq!((0..=255u8).filter(|&c| transitions(c) <= 2).count(), 58);
        assert_eq!(lbp_bin(0), 0);
        assert_eq!(lbp_bin(255), 57);
        assert_eq!(lbp_bin(0b0101_0101), 58);
    }

    #[test]
    fn constant_patch_is_all_zero_pattern() {
        let gray = vec![100.0; 25];
        let h = lbp_histogram(&gray, 5, 5);
        assert_eq!(h[lbp_bin(0)], 1.0);
        assert_eq!(h.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn hand_enumerated_5x5_patch() {
        #[rustfmt::skip]
        let gray = vec![
            10., 20., 30., 40., 50.,
            60., 70., 80., 90., 15.,
            25., 35., 45., 55., 65.,
            75., 85., 95.,  5., 12.,
            22., 32., 42., 52., 62.,
        ];
        // Interior pixels, bits clockwise from top-left (bit0 TL, bit1 T,
        // bit2 TR, bit3 R, bit4 BR, bit5 B, bit6 BL, bit7 L), set when the
        // neighbour is strictly greater than the centre.
        // (1,1)=70: TL10 T20 TR30 R80* BR45 B35 BL25 L60 -> 0b0000_1000
        // (2,1)=80: 20 30 40 R90* BR55 B45 BL35 L70      -> 0b0000_1000
        // (3,1)=90: 30 40 50 R15 BR65 B55 BL45 L80       -> 0
        // (1,2)=35: TL60* T70* TR80* R45* BR95* B85* BL75* L25 -> 0b0111_1111
        // (2,2)=45: TL70* T80* TR90* R55* BR5 B95* BL85* L35 -> 0b0110_1111
        // (3,2)=55: TL80* T90* TR15 R65* BR12 B5 BL95* L45 -> 0b0100_1011
        // (1,3)=85: TL25 T35 TR45 R95* BR42 B32 BL22 L75  -> 0b0000_1000
        // (2,3)=95: 35 45 55 R5 BR52 B42 BL32 L85          -> 0
        // (3,3)=5:  TL45* T55* TR65* R12* BR62* B52* BL42* L95* -> 0xFF
        let expected_codes = [0b0000_1000u8, 0b0000_1000, 0, 0b0111_1111, 0b0110_1111, 0b0100_1011, 0b0000_1000, 0, 0xFF];
        let mut k = 0;
        for y in 1..4 {
            for x in 1..4 {
                assert_eq!(lbp_code(&gray, 5, x, y), expected_codes[k], "pixel ({x},{y})");
                k += 1;
            }
        }
        let mut expected = vec![0.0; LBP_DIM];
        for c in expected_codes {
            expected[lbp_bin(c)] += 1.0 / 9.0;
        }
        // 0b0110_1111 and 0b0100_1011 are non-uniform
        assert_eq!(lbp_bin(0b0110_1111), 58);
        assert_eq!(lbp_bin(0b0100_1011), 58);
        let h = lbp_histogram(&gray, 5, 5);
        for (a, b) in h.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
