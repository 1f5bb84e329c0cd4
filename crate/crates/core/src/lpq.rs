//! Local phase quantization.
//!
//! At every pixel whose `M×M` neighbourhood fits inside the plane, a
//! short-term Fourier transform is evaluated at the four lowest non-DC
//! frequencies `(a,0)`, `(0,a)`, `(a,a)` and `(a,-a)`. The signs of the
//! real and imaginary parts form an 8-bit code. No decorrelation is applied.
//!
//! Coefficients whose magnitude is within [`ZERO_TOLERANCE`] times the
//! window's L1 mass are treated as exact zeros, so windows where a component
//! vanishes analytically (flat patches, mirror-symmetric patterns) quantize
//! the same way regardless of floating-point summation noise.

use ndarray::Array2;
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::ChannelPlane;
use crate::scalar::Scalar;

pub const LPQ_BINS: usize = 256;

/// Relative magnitude below which a coefficient component is snapped to zero.
pub const ZERO_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LpqConfig {
    /// Odd window side `M`.
    pub window: usize,
    /// Frequency in cycles per pixel; `1/M` by default.
    pub alpha: f64,
}

impl Default for LpqConfig {
    fn default() -> Self {
        Self::with_window(5)
    }
}

impl LpqConfig {
    pub fn with_window(window: usize) -> Self {
        LpqConfig {
            window,
            alpha: 1.0 / window as f64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window % 2 == 0 {
            return Err(Error::validation(format!(
                "LPQ window must be odd and >= 3, got {}",
                self.window
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(Error::validation(format!(
                "LPQ alpha must lie in (0, 0.5), got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    fn radius(&self) -> usize {
        self.window / 2
    }
}

/// Frequency points `(u_x, u_y)` in units of `alpha`.
const FREQUENCIES: [(f64, f64); 4] = [(1.0, 0.0), (0.0, 1.0), (1.0, 1.0), (1.0, -1.0)];

/// Precomputed `exp(-j2π(u·d))` for every window offset and frequency.
struct Kernel<T> {
    window: usize,
    /// `[freq][row * window + col]`
    weights: [Vec<Complex<T>>; 4],
}

impl<T: Scalar> Kernel<T> {
    fn new(cfg: &LpqConfig) -> Self {
        let m = cfg.window;
        let r = cfg.radius() as f64;
        let weights = FREQUENCIES.map(|(fx, fy)| {
            let mut w = Vec::with_capacity(m * m);
            for row in 0..m {
                let dy = row as f64 - r;
                for col in 0..m {
                    let dx = col as f64 - r;
                    let theta = -2.0 * std::f64::consts::PI * cfg.alpha * (fx * dx + fy * dy);
                    w.push(Complex::new(T::of(theta.cos()), T::of(theta.sin())));
                }
            }
            w
        });
        Kernel { window: m, weights }
    }

    fn evaluate(&self, values: &Array2<T>, top: usize, left: usize) -> [Complex<T>; 4] {
        let m = self.window;
        let mut out = [Complex::new(T::zero(), T::zero()); 4];
        let mut mass = T::zero();
        for row in 0..m {
            for col in 0..m {
                let g = values[(top + row, left + col)];
                mass += g.abs();
                let idx = row * m + col;
                for (acc, w) in out.iter_mut().zip(&self.weights) {
                    acc.re += g * w[idx].re;
                    acc.im += g * w[idx].im;
                }
            }
        }
        let tol = T::of(ZERO_TOLERANCE) * mass;
        for c in &mut out {
            if c.re.abs() <= tol {
                c.re = T::zero();
            }
            if c.im.abs() <= tol {
                c.im = T::zero();
            }
        }
        out
    }
}

/// STFT coefficients `[G(u₁), G(u₂), G(u₃), G(u₄)]` of the window centred at
/// `(row, col)`. The window must lie inside the plane.
pub fn stft_coeffs<T: Scalar>(
    plane: &ChannelPlane<T>,
    center: (usize, usize),
    cfg: &LpqConfig,
) -> Result<[Complex<T>; 4]> {
    cfg.validate()?;
    let r = cfg.radius();
    let (h, w) = plane.dim();
    let (row, col) = center;
    if row < r || col < r || row + r >= h || col + r >= w {
        return Err(Error::validation(format!(
            "LPQ window at ({row}, {col}) does not fit a {h}x{w} plane"
        )));
    }
    Ok(Kernel::new(cfg).evaluate(&plane.values, row - r, col - r))
}

/// Eight sign bits: real parts of `G(u₁..u₄)` are bits 0..3, imaginary parts
/// bits 4..7; a bit is set when the component is `>= 0`.
pub fn lpq_code<T: Scalar>(coeffs: &[Complex<T>; 4]) -> u8 {
    let parts = coeffs.iter().map(|c| c.re).chain(coeffs.iter().map(|c| c.im));
    parts
        .enumerate()
        .fold(0u8, |code, (i, v)| code | (u8::from(v >= T::zero()) << i))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LpqHistogram {
    pub bins: [u32; LPQ_BINS],
}

impl LpqHistogram {
    pub fn total(&self) -> u64 {
        self.bins.iter().map(|&b| b as u64).sum()
    }
}

pub fn lpq_histogram<T: Scalar>(plane: &ChannelPlane<T>, cfg: &LpqConfig) -> Result<LpqHistogram> {
    lpq_histogram_values(&plane.values, cfg)
}

pub fn lpq_histogram_values<T: Scalar>(values: &Array2<T>, cfg: &LpqConfig) -> Result<LpqHistogram> {
    cfg.validate()?;
    let m = cfg.window;
    let (h, w) = values.dim();
    if h < m || w < m {
        return Err(Error::validation(format!(
            "LPQ window {m} does not fit a {h}x{w} plane"
        )));
    }
    let kernel = Kernel::new(cfg);
    let mut bins = [0u32; LPQ_BINS];
    for top in 0..=h - m {
        for left in 0..=w - m {
            bins[lpq_code(&kernel.evaluate(values, top, left)) as usize] += 1;
        }
    }
    Ok(LpqHistogram { bins })
}
