//! Uniform local binary patterns over 3×3 neighbourhoods.
//!
//! Neighbours are visited clockwise from the top-left corner and neighbour
//! `k` (1-based) contributes bit `k-1`:
//!
//! <pre>
//! 1  2  3
//! 8  c  4
//! 7  6  5
//! </pre>
//!
//! A bit is set when the neighbour is greater than or equal to the centre.

use std::sync::OnceLock;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::imagecore::ChannelPlane;

/// Number of histogram bins for 8 neighbours: 58 uniform labels + 1 shared bin.
pub const LBP_BINS: usize = 59;

/// Label shared by all non-uniform codes.
pub const NON_UNIFORM_LABEL: u8 = 58;

/// `(row, col)` offsets of neighbours 1..=8 relative to the block's top-left.
const NEIGHBOURS: [(usize, usize); 8] = [(0, 0), (0, 1), (0, 2), (1, 2), (2, 2), (2, 1), (2, 0), (1, 0)];

/// Code of a 3×3 block given row-major.
pub fn lbp_code<T: PartialOrd + Copy>(block: &[[T; 3]; 3]) -> u8 {
    let center = block[1][1];
    NEIGHBOURS
        .iter()
        .enumerate()
        .fold(0u8, |code, (k, &(r, c))| code | (u8::from(block[r][c] >= center) << k))
}

/// Circular 0↔1 transitions in an 8-bit pattern.
pub fn transitions(code: u8) -> u32 {
    (code ^ code.rotate_right(1)).count_ones()
}

/// Maps each of the 256 codes to a histogram bin: uniform codes (at most two
/// circular transitions) get labels 0..=57 in ascending code order, the rest
/// share label 58.
pub fn uniform_map() -> &'static [u8; 256] {
    static TABLE: OnceLock<[u8; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = [NON_UNIFORM_LABEL; 256];
        let mut next = 0u8;
        for code in 0..=255u8 {
            if transitions(code) <= 2 {
                table[code as usize] = next;
                next += 1;
            }
        }
        debug_assert_eq!(next, NON_UNIFORM_LABEL);
        table
    })
}

/// Histogram feature length for `n` neighbours: `n(n-1) + 3`.
pub fn lbp_feature_size(n_neighbors: usize) -> Result<usize> {
    if n_neighbors < 2 {
        return Err(Error::validation(format!(
            "LBP needs at least 2 neighbours, got {n_neighbors}"
        )));
    }
    Ok(n_neighbors * (n_neighbors - 1) + 3)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LbpHistogram {
    pub bins: [u32; LBP_BINS],
}

impl LbpHistogram {
    pub fn total(&self) -> u64 {
        self.bins.iter().map(|&b| b as u64).sum()
    }
}

/// Uniform-LBP histogram over every interior pixel (stride 1, overlapping windows).
pub fn lbp_histogram<T: PartialOrd + Copy>(plane: &ChannelPlane<T>) -> Result<LbpHistogram> {
    lbp_histogram_values(&plane.values)
}

pub fn lbp_histogram_values<T: PartialOrd + Copy>(values: &Array2<T>) -> Result<LbpHistogram> {
    let (h, w) = values.dim();
    if h < 3 || w < 3 {
        return Err(Error::validation(format!(
            "LBP needs a plane of at least 3x3, got {h}x{w}"
        )));
    }
    let map = uniform_map();
    let mut bins = [0u32; LBP_BINS];
    for y in 0..h - 2 {
        for x in 0..w - 2 {
            let block = [
                [values[(y, x)], values[(y, x + 1)], values[(y, x + 2)]],
                [values[(y + 1, x)], values[(y + 1, x + 1)], values[(y + 1, x + 2)]],
                [values[(y + 2, x)], values[(y + 2, x + 1)], values[(y + 2, x + 2)]],
            ];
            bins[map[lbp_code(&block) as usize] as usize] += 1;
        }
    }
    Ok(LbpHistogram { bins })
}
