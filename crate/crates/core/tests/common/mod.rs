//! Shared fixtures and independent reference implementations for the
//! integration suites. The oracles here are written from the descriptor
//! definitions directly and share no code with the library.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use ndarray::Array2;
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Integer-valued plane with entries in `0..=max`.
pub fn random_plane(rng: &mut ChaCha8Rng, h: usize, w: usize, max: u32) -> Array2<f64> {
    Array2::from_shape_fn((h, w), |_| rng.gen_range(0..=max) as f64)
}

/// Clockwise from the top-left neighbour; neighbour k (1-based) sets bit k-1.
const LBP_OFFSETS: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1)];

pub fn oracle_lbp_code(p: &Array2<f64>, row: usize, col: usize) -> u8 {
    let center = p[(row, col)];
    let mut code = 0u32;
    for (k, (dr, dc)) in LBP_OFFSETS.iter().enumerate() {
        let v = p[((row as isize + dr) as usize, (col as isize + dc) as usize)];
        if v >= center {
            code += 1 << k;
        }
    }
    code as u8
}

pub fn circular_transitions(code: u32, bits: u32) -> u32 {
    (0..bits)
        .filter(|&i| ((code >> i) & 1) != ((code >> ((i + 1) % bits)) & 1))
        .count() as u32
}

/// Uniform codes get labels 0, 1, ... in ascending code order; the rest share
/// the label after the last uniform one.
pub fn oracle_uniform_labels() -> Vec<u8> {
    let uniform: Vec<u32> = (0..256).filter(|&c| circular_transitions(c, 8) <= 2).collect();
    (0..256u32)
        .map(|c| match uniform.iter().position(|&u| u == c) {
            Some(i) => i as u8,
            None => uniform.len() as u8,
        })
        .collect()
}

pub fn oracle_lbp_histogram(p: &Array2<f64>) -> Vec<u32> {
    let labels = oracle_uniform_labels();
    let mut bins = vec![0u32; 59];
    let (h, w) = p.dim();
    for row in 1..h - 1 {
        for col in 1..w - 1 {
            bins[labels[oracle_lbp_code(p, row, col) as usize] as usize] += 1;
        }
    }
    bins
}

/// Direct windowed Fourier sum at the four LPQ frequencies.
pub fn oracle_stft(p: &Array2<f64>, row: usize, col: usize, m: usize) -> [Complex<f64>; 4] {
    let a = 1.0 / m as f64;
    let r = (m / 2) as isize;
    let freqs = [(a, 0.0), (0.0, a), (a, a), (a, -a)];
    freqs.map(|(ux, uy)| {
        let mut g = Complex::new(0.0, 0.0);
        for dy in -r..=r {
            for dx in -r..=r {
                let v = p[((row as isize + dy) as usize, (col as isize + dx) as usize)];
                let phase = Complex::new(0.0, -2.0 * std::f64::consts::PI * (ux * dx as f64 + uy * dy as f64));
                g += v * phase.exp();
            }
        }
        g
    })
}

pub fn oracle_lpq_code(v: &[Complex<f64>; 4]) -> u8 {
    oracle_lpq_code_snapped(v, 0.0)
}

/// Components with magnitude at most `tol` count as exact zeros (bit set).
pub fn oracle_lpq_code_snapped(v: &[Complex<f64>; 4], tol: f64) -> u8 {
    let w = [v[0].re, v[1].re, v[2].re, v[3].re, v[0].im, v[1].im, v[2].im, v[3].im];
    let w = w.map(|x| if x.abs() <= tol { 0.0 } else { x });
    w.iter()
        .enumerate()
        .map(|(i, &x)| if x >= 0.0 { 1u32 << i } else { 0 })
        .sum::<u32>() as u8
}

/// Cancellations to rounding noise (common at M = 3, where the kernel is ±½)
/// count as zeros under the same relative rule the definition uses.
pub fn oracle_lpq_histogram(p: &Array2<f64>, m: usize) -> Vec<u32> {
    let mut bins = vec![0u32; 256];
    let (h, w) = p.dim();
    let r = m / 2;
    for row in r..h - r {
        for col in r..w - r {
            let mut mass = 0.0;
            for r2 in row - r..=row + r {
                for c2 in col - r..=col + r {
                    mass += p[(r2, c2)].abs();
                }
            }
            let v = oracle_stft(p, row, col, m);
            bins[oracle_lpq_code_snapped(&v, 1e-9 * mass) as usize] += 1;
        }
    }
    bins
}

/// 3×3 box blur over the interior; the one-pixel border is dropped.
pub fn box_blur(p: &Array2<f64>) -> Array2<f64> {
    let (h, w) = p.dim();
    Array2::from_shape_fn((h - 2, w - 2), |(r, c)| {
        let mut s = 0.0;
        for dr in 0..3 {
            for dc in 0..3 {
                s += p[(r + dr, c + dc)];
            }
        }
        s / 9.0
    })
}

pub fn normalized(bins: &[u32]) -> Vec<f64> {
    let total: u32 = bins.iter().sum();
    bins.iter().map(|&b| b as f64 / total as f64).collect()
}

pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Synthetic two-class image: class 0 is smooth, class 1 carries dense
/// high-frequency texture.
pub fn synthetic_image(class: u8, size: u32, rng: &mut ChaCha8Rng) -> RgbImage {
    let phase: f64 = rng.gen_range(0.0..6.28);
    RgbImage::from_fn(size, size, |x, y| {
        let (xf, yf) = (x as f64, y as f64);
        let mut px = [0u8; 3];
        for (ch, v) in px.iter_mut().enumerate() {
            let base = if class == 0 {
                128.0 + 60.0 * (xf / 9.0 + phase + ch as f64).sin() * (yf / 11.0).cos() + rng.gen_range(-8.0..8.0)
            } else {
                128.0 + 70.0 * (xf * 1.3 + phase).sin() * (yf * 1.7 + ch as f64).sin() + rng.gen_range(-40.0..40.0)
            };
            *v = base.clamp(0.0, 255.0) as u8;
        }
        Rgb(px)
    })
}

/// Writes `per_class` images per class under `root/benign` and
/// `root/malignant`.
pub fn write_fixture(root: &Path, per_class: usize, size: u32, seed: u64) -> PathBuf {
    let mut rng = rng(seed);
    for (class, name) in [(0u8, "benign"), (1, "malignant")] {
        let dir = root.join(name);
        std::fs::create_dir_all(&dir).unwrap();
        for i in 0..per_class {
            synthetic_image(class, size, &mut rng)
                .save(dir.join(format!("{name}_{i:02}.png")))
                .unwrap();
        }
    }
    root.to_path_buf()
}

/// The 8-image fixture: 64×64, four per class.
pub fn eight_image_fixture(root: &Path) -> PathBuf {
    write_fixture(root, 4, 64, 2024)
}

/// Every regular file below `dir` (excluding `skip` subdirectories) with its
/// bytes, sorted by relative path.
pub fn snapshot(dir: &Path, skip: &[&str]) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.unwrap();
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry.path().strip_prefix(dir).unwrap().to_string_lossy().into_owned();
        if skip.iter().any(|s| rel.starts_with(s)) {
            continue;
        }
        out.push((rel, std::fs::read(entry.path()).unwrap()));
    }
    out
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(k: &Array2<f64>) -> f64 {
    let n = k.nrows();
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| k[(i, j)]);
    m.symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Two-class data: `informative` columns with class-dependent means and unit
/// Gaussian noise, followed by `noise` pure-noise columns.
pub fn informative_dataset(
    n: usize,
    informative: usize,
    noise: usize,
    separation: f64,
    seed: u64,
) -> (Array2<f64>, Vec<u8>) {
    let mut rng = rng(seed);
    let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let x = Array2::from_shape_fn((n, informative + noise), |(i, j)| {
        let g: f64 = rng.sample(StandardNormal);
        if j < informative {
            g + if labels[i] == 1 { separation } else { 0.0 }
        } else {
            g
        }
    });
    (x, labels)
}

pub fn phf_bin() -> &'static str {
    env!("CARGO_BIN_EXE_phf")
}
