//! Separable 2-D discrete wavelet transform with periodic extension, and the
//! four-level low-pass pyramid built from it.
//!
//! One analysis level filters every row, then every column, with the
//! orthonormal low/high-pass pair and keeps every second sample. Band names
//! give the horizontal filter first: `lh` is low-pass along rows and
//! high-pass along columns. With periodic extension each band has
//! `ceil(n / 2)` samples per axis and the transform is orthogonal on even
//! sizes, so energy is preserved exactly up to rounding. Odd sizes are
//! padded by repeating the last sample before filtering.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{Error, Result};
use crate::imagecore::{split_channels, Channel, ChannelPlane, Image};
use crate::scalar::Scalar;

/// Daubechies-4 scaling filter (8 taps).
const DB4_LOWPASS: [f64; 8] = [
    0.230_377_813_308_855_23,
    0.714_846_570_552_541_5,
    0.630_880_767_929_590_4,
    -0.027_983_769_416_983_85,
    -0.187_034_811_718_881_14,
    0.030_841_381_835_986_965,
    0.032_883_011_666_982_945,
    -0.010_597_401_784_997_278,
];

/// Number of pyramid levels: the raw image plus three low-pass levels.
pub const PYRAMID_LEVELS: usize = 4;

/// Minimum side length accepted by [`build_pyramid`].
pub const PYRAMID_MIN_SIDE: usize = 64;

/// An orthonormal two-channel filter bank.
#[derive(Debug, Clone, PartialEq)]
pub struct Wavelet<T> {
    name: &'static str,
    lowpass: Vec<T>,
    highpass: Vec<T>,
}

impl<T: Scalar> Wavelet<T> {
    /// Builds the quadrature-mirror pair from a scaling filter after checking
    /// `Σh = √2`, `Σg = 0` and unit energy.
    pub fn from_lowpass(name: &'static str, lowpass: &[f64]) -> Result<Self> {
        let len = lowpass.len();
        if len < 2 || len % 2 != 0 {
            return Err(Error::validation(format!(
                "wavelet {name}: filter length {len} must be even and at least 2"
            )));
        }
        let highpass: Vec<f64> = (0..len)
            .map(|j| {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                sign * lowpass[len - 1 - j]
            })
            .collect();
        let dc_low: f64 = lowpass.iter().sum();
        let dc_high: f64 = highpass.iter().sum();
        let energy: f64 = lowpass.iter().map(|h| h * h).sum();
        if (dc_low - std::f64::consts::SQRT_2).abs() > 1e-10 || dc_high.abs() > 1e-10 || (energy - 1.0).abs() > 1e-10 {
            return Err(Error::validation(format!(
                "wavelet {name}: filters are not orthonormal (Σh={dc_low}, Σg={dc_high}, Σh²={energy})"
            )));
        }
        Ok(Wavelet {
            name,
            lowpass: lowpass.iter().map(|&v| T::of(v)).collect(),
            highpass: highpass.iter().map(|&v| T::of(v)).collect(),
        })
    }

    pub fn db4() -> Self {
        Self::from_lowpass("db4", &DB4_LOWPASS).expect("db4 coefficients are orthonormal")
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn filter_len(&self) -> usize {
        self.lowpass.len()
    }

    pub fn lowpass(&self) -> &[T] {
        &self.lowpass
    }

    pub fn highpass(&self) -> &[T] {
        &self.highpass
    }

    /// Index offset of the periodization convention:
    /// `a[k] = Σ_j h[j] · x[(2k + j − (L/2 − 1)) mod n]`.
    fn offset(&self) -> usize {
        self.lowpass.len() / 2 - 1
    }

    /// One periodic analysis step; `low` and `high` must have `ceil(n/2)` slots.
    fn analyze(&self, signal: ArrayView1<T>, low: &mut [T], high: &mut [T]) {
        let n = signal.len();
        let padded = n + n % 2;
        let at = |i: usize| {
            let i = i % padded;
            if i < n {
                signal[i]
            } else {
                signal[n - 1]
            }
        };
        let shift = padded - self.offset() % padded;
        for k in 0..padded / 2 {
            let mut lo = T::zero();
            let mut hi = T::zero();
            for (j, (&h, &g)) in self.lowpass.iter().zip(&self.highpass).enumerate() {
                let x = at(2 * k + j + shift);
                lo += h * x;
                hi += g * x;
            }
            low[k] = lo;
            high[k] = hi;
        }
    }

    /// Transpose of [`Self::analyze`]; writes `2·len(low)` samples into `out`.
    fn synthesize(&self, low: ArrayView1<T>, high: ArrayView1<T>, out: &mut [T]) {
        let padded = out.len();
        out.iter_mut().for_each(|v| *v = T::zero());
        let shift = padded - self.offset() % padded;
        for k in 0..low.len() {
            for (j, (&h, &g)) in self.lowpass.iter().zip(&self.highpass).enumerate() {
                out[(2 * k + j + shift) % padded] += h * low[k] + g * high[k];
            }
        }
    }
}

/// The four sub-bands of one analysis level.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletBands<T> {
    pub ll: Array2<T>,
    pub lh: Array2<T>,
    pub hl: Array2<T>,
    pub hh: Array2<T>,
    /// Shape of the analysed plane, needed to undo odd-size padding.
    pub shape: (usize, usize),
}

fn half(n: usize) -> usize {
    n.div_ceil(2)
}

/// Single-level 2-D analysis: rows first, then columns.
pub fn dwt2<T: Scalar>(plane: &Array2<T>, wavelet: &Wavelet<T>) -> Result<WaveletBands<T>> {
    let (h, w) = plane.dim();
    let min = wavelet.filter_len();
    if h < min || w < min {
        return Err(Error::validation(format!(
            "{} analysis needs both sides >= {min}, got {h}x{w}",
            wavelet.name()
        )));
    }
    let (hh_, hw) = (half(h), half(w));

    // Horizontal pass: each row → [low | high].
    let mut row_lo = Array2::<T>::zeros((h, hw));
    let mut row_hi = Array2::<T>::zeros((h, hw));
    let mut lo_buf = vec![T::zero(); hw];
    let mut hi_buf = vec![T::zero(); hw];
    for (y, row) in plane.axis_iter(Axis(0)).enumerate() {
        wavelet.analyze(row, &mut lo_buf, &mut hi_buf);
        row_lo.row_mut(y).assign(&ArrayView1::from(&lo_buf[..]));
        row_hi.row_mut(y).assign(&ArrayView1::from(&hi_buf[..]));
    }

    // Vertical pass on both halves.
    let vertical = |src: &Array2<T>| {
        let mut lo = Array2::<T>::zeros((hh_, hw));
        let mut hi = Array2::<T>::zeros((hh_, hw));
        let mut lo_buf = vec![T::zero(); hh_];
        let mut hi_buf = vec![T::zero(); hh_];
        for (x, col) in src.axis_iter(Axis(1)).enumerate() {
            wavelet.analyze(col, &mut lo_buf, &mut hi_buf);
            lo.column_mut(x).assign(&ArrayView1::from(&lo_buf[..]));
            hi.column_mut(x).assign(&ArrayView1::from(&hi_buf[..]));
        }
        (lo, hi)
    };
    let (ll, lh) = vertical(&row_lo);
    let (hl, hh) = vertical(&row_hi);
    Ok(WaveletBands {
        ll,
        lh,
        hl,
        hh,
        shape: (h, w),
    })
}

/// Inverse of [`dwt2`].
pub fn idwt2<T: Scalar>(bands: &WaveletBands<T>, wavelet: &Wavelet<T>) -> Result<Array2<T>> {
    let dim = bands.ll.dim();
    if [&bands.lh, &bands.hl, &bands.hh].iter().any(|b| b.dim() != dim) {
        return Err(Error::validation("wavelet bands have mismatched shapes"));
    }
    let (h, w) = bands.shape;
    if (half(h), half(w)) != dim {
        return Err(Error::validation(format!(
            "bands of size {}x{} cannot reconstruct a {h}x{w} plane",
            dim.0, dim.1
        )));
    }
    let (bh, bw) = dim;
    let (ph, pw) = (2 * bh, 2 * bw);

    // Undo the vertical pass.
    let vertical = |lo: &Array2<T>, hi: &Array2<T>| {
        let mut out = Array2::<T>::zeros((ph, bw));
        let mut buf = vec![T::zero(); ph];
        for x in 0..bw {
            wavelet.synthesize(lo.column(x), hi.column(x), &mut buf);
            out.column_mut(x).assign(&Array1::from(buf.clone()));
        }
        out
    };
    let row_lo = vertical(&bands.ll, &bands.lh);
    let row_hi = vertical(&bands.hl, &bands.hh);

    let mut out = Array2::<T>::zeros((h, w));
    let mut buf = vec![T::zero(); pw];
    for y in 0..h {
        wavelet.synthesize(row_lo.row(y), row_hi.row(y), &mut buf);
        for x in 0..w {
            out[(y, x)] = buf[x];
        }
    }
    Ok(out)
}

/// One pyramid level: the three colour planes.
pub type PyramidLevel<T> = [ChannelPlane<T>; 3];

/// `[raw, LL¹, LL², LL³]`, each a stack of per-channel planes.
#[derive(Debug, Clone, PartialEq)]
pub struct Pyramid<T> {
    levels: Vec<PyramidLevel<T>>,
}

impl<T> Pyramid<T> {
    pub fn levels(&self) -> &[PyramidLevel<T>] {
        &self.levels
    }

    pub fn level(&self, k: usize) -> &PyramidLevel<T> {
        &self.levels[k]
    }

    /// `(height, width)` of each level.
    pub fn sizes(&self) -> Vec<(usize, usize)>
    where
        T: Clone,
    {
        self.levels.iter().map(|l| l[0].values.dim()).collect()
    }
}

/// Applies [`dwt2`] three times per channel, keeping only the LL band.
pub fn build_pyramid<T: Scalar>(img: &Image, wavelet: &Wavelet<T>) -> Result<Pyramid<T>> {
    let (h, w) = (img.height(), img.width());
    if h.min(w) < PYRAMID_MIN_SIDE {
        let mut failing = PYRAMID_LEVELS - 1;
        let (mut lh, mut lw) = (h, w);
        for k in 1..PYRAMID_LEVELS {
            lh = half(lh);
            lw = half(lw);
            if lh.min(lw) < wavelet.filter_len() {
                failing = k;
                break;
            }
        }
        return Err(Error::validation(format!(
            "image {} ({h}x{w}) is too small for the pyramid: level {failing} would be \
             {}x{}; minimum side is {PYRAMID_MIN_SIDE}",
            img.id(),
            h.div_ceil(1 << failing),
            w.div_ceil(1 << failing),
        )));
    }

    let mut levels = Vec::with_capacity(PYRAMID_LEVELS);
    levels.push(split_channels::<T>(img));
    for _ in 1..PYRAMID_LEVELS {
        let prev = levels.last().expect("raw level present");
        let next = try_map_channels(prev, |plane| Ok(dwt2(&plane.values, wavelet)?.ll))?;
        levels.push(next);
    }
    Ok(Pyramid { levels })
}

fn try_map_channels<T: Scalar>(
    level: &PyramidLevel<T>,
    mut f: impl FnMut(&ChannelPlane<T>) -> Result<Array2<T>>,
) -> Result<PyramidLevel<T>> {
    let mut planes = Vec::with_capacity(3);
    for (plane, channel) in level.iter().zip(Channel::ALL) {
        planes.push(ChannelPlane {
            channel,
            values: f(plane)?,
        });
    }
    Ok(planes.try_into().unwrap_or_else(|_| unreachable!()))
}

/// Linearly rescales a real plane onto `[0, 255]` (min-max over the plane) and
/// rounds to integers. A constant plane maps to all zeros.
pub fn quantize_plane<T: Scalar>(values: &Array2<T>) -> Array2<T> {
    let (min, max) = values.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let range = max - min;
    if !(range > T::zero()) {
        return Array2::zeros(values.dim());
    }
    let full = T::of(255.0);
    values.mapv(|v| ((v - min) / range * full).round())
}

/// The plane fed to the texture descriptors at a pyramid level: the raw
/// intensities at level 0, the quantized LL band above it.
pub fn texture_plane<T: Scalar>(level: usize, plane: &ChannelPlane<T>) -> ChannelPlane<T> {
    if level == 0 {
        plane.clone()
    } else {
        ChannelPlane {
            channel: plane.channel,
            values: quantize_plane(&plane.values),
        }
    }
}
