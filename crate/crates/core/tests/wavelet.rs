mod common;

use image::{Rgb, RgbImage};
use ndarray::Array2;
use proptest::prelude::*;
use pyramid_hybrid::dwt::{build_pyramid, dwt2, idwt2, Wavelet, WaveletBands};
use pyramid_hybrid::imagecore::Image;
use rand::Rng;
use serde::Deserialize;

use common::*;

#[derive(Deserialize)]
struct Reference {
    /// PyWavelets' tabulated db4 low-pass filter.
    rec_lo: Vec<f64>,
    cases: Vec<Case>,
}

#[derive(Deserialize)]
struct Case {
    height: usize,
    width: usize,
    ll: Vec<Vec<f64>>,
    lh: Vec<Vec<f64>>,
    hl: Vec<Vec<f64>>,
    hh: Vec<Vec<f64>>,
}

fn to_array(rows: &[Vec<f64>]) -> Array2<f64> {
    let w = rows[0].len();
    Array2::from_shape_fn((rows.len(), w), |(r, c)| rows[r][c])
}

fn max_abs(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Reference bands produced by PyWavelets (`dwt2(x, 'db4', mode='periodization')`).
/// Its filter table differs from the analytic db4 taps by up to ~4e-13, so the
/// allowed error is the first-order effect of that difference over two passes.
#[test]
fn matches_pywavelets_periodization() {
    let text = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/tests/data/pywt_db4_periodization.json"
    ))
    .unwrap();
    let reference: Reference = serde_json::from_str(&text).unwrap();
    let wavelet = Wavelet::<f64>::db4();
    let taps: f64 = wavelet.lowpass().iter().map(|h| h.abs()).sum();
    let drift: f64 = wavelet
        .lowpass()
        .iter()
        .zip(&reference.rec_lo)
        .map(|(a, b)| (a - b).abs())
        .sum();
    assert!(drift < 1e-11, "filter tables disagree: {drift}");
    for case in &reference.cases {
        let x = Array2::from_shape_fn((case.height, case.width), |(r, c)| {
            let (r, c) = (r as f64, c as f64);
            (0.7 * r + 1.3 * c).sin() + 0.05 * ((r as usize * 7 + c as usize * 3) % 11) as f64
        });
        let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let bound = 2.0 * peak * taps * drift + 1e-13;
        let bands = dwt2(&x, &wavelet).unwrap();
        for (got, want) in [
            (&bands.ll, &case.ll),
            (&bands.lh, &case.lh),
            (&bands.hl, &case.hl),
            (&bands.hh, &case.hh),
        ] {
            let err = max_abs(got, &to_array(want));
            assert!(err <= bound, "{}x{}: {err} > {bound}", case.height, case.width);
        }
    }
}

#[test]
fn filter_identities() {
    let w = Wavelet::<f64>::db4();
    let h: f64 = w.lowpass().iter().sum();
    let g: f64 = w.highpass().iter().sum();
    let e: f64 = w.lowpass().iter().map(|v| v * v).sum();
    assert!((h - 2f64.sqrt()).abs() < 1e-12);
    assert!(g.abs() < 1e-12);
    assert!((e - 1.0).abs() < 1e-12);
}

#[test]
fn constant_plane_rule() {
    let w = Wavelet::<f64>::db4();
    for c in [0.0, 1.0, 37.5, -4.0] {
        let bands = dwt2(&Array2::from_elem((16, 12), c), &w).unwrap();
        assert!(bands.ll.iter().all(|&v| (v - 2.0 * c).abs() < 1e-12));
        for b in [&bands.lh, &bands.hl, &bands.hh] {
            assert!(b.iter().all(|&v| v.abs() < 1e-12));
        }
    }
}

#[test]
fn size_chain_224() {
    let w = Wavelet::<f64>::db4();
    let mut plane = Array2::from_elem((224, 224), 1.0);
    let mut sizes = vec![224];
    for _ in 0..3 {
        let bands = dwt2(&plane, &w).unwrap();
        for b in [&bands.lh, &bands.hl, &bands.hh] {
            assert_eq!(b.dim(), bands.ll.dim());
        }
        plane = bands.ll;
        sizes.push(plane.nrows());
    }
    assert_eq!(sizes, vec![224, 112, 56, 28]);
}

#[test]
fn zero_bands_and_ll_only_constant() {
    let w = Wavelet::<f64>::db4();
    let zero = WaveletBands {
        ll: Array2::zeros((8, 8)),
        lh: Array2::zeros((8, 8)),
        hl: Array2::zeros((8, 8)),
        hh: Array2::zeros((8, 8)),
        shape: (16, 16),
    };
    assert!(idwt2(&zero, &w).unwrap().iter().all(|&v| v == 0.0));

    let mut bands = dwt2(&Array2::from_elem((16, 16), 5.0), &w).unwrap();
    bands.lh.fill(0.0);
    bands.hl.fill(0.0);
    bands.hh.fill(0.0);
    let back = idwt2(&bands, &w).unwrap();
    assert!(back.iter().all(|&v| (v - 5.0).abs() < 1e-12));
}

#[test]
fn mismatched_bands_rejected() {
    let w = Wavelet::<f64>::db4();
    let mut bands = dwt2(&Array2::from_elem((16, 16), 1.0), &w).unwrap();
    bands.hh = Array2::zeros((7, 8));
    assert!(idwt2(&bands, &w).is_err());
}

#[test]
fn pyramid_of_224_image() {
    let mut rng = rng(3);
    let img = RgbImage::from_fn(224, 224, |_, _| Rgb([rng.gen(), rng.gen(), rng.gen()]));
    let p = build_pyramid(&Image::new("x", img).unwrap(), &Wavelet::<f64>::db4()).unwrap();
    assert_eq!(p.levels().len(), 4);
    assert_eq!(p.sizes(), vec![(224, 224), (112, 112), (56, 56), (28, 28)]);
}

#[test]
fn pyramid_of_constant_colour() {
    let img = RgbImage::from_pixel(64, 64, Rgb([10, 20, 30]));
    let p = build_pyramid(&Image::new("c", img).unwrap(), &Wavelet::<f64>::db4()).unwrap();
    for (k, level) in p.levels().iter().enumerate() {
        for (plane, base) in level.iter().zip([10.0, 20.0, 30.0]) {
            let want = base * 2f64.powi(k as i32);
            assert!(plane.values.iter().all(|&v| (v - want).abs() < 1e-9));
        }
    }
}

proptest! {
    #[test]
    fn round_trip_any_size(h in 8usize..40, w in 8usize..40, seed in any::<u64>()) {
        let x = random_plane(&mut rng(seed), h, w, 255);
        let wavelet = Wavelet::<f64>::db4();
        let back = idwt2(&dwt2(&x, &wavelet).unwrap(), &wavelet).unwrap();
        prop_assert!(max_abs(&x, &back) <= 1e-9);
    }

    /// Energy is conserved for even sides; odd sides are first padded by one
    /// repeated sample, so their energy matches the padded plane instead.
    #[test]
    fn parseval_even_sizes(hh in 4usize..20, hw in 4usize..20, seed in any::<u64>()) {
        let x = random_plane(&mut rng(seed), 2 * hh, 2 * hw, 255).mapv(|v| v / 7.0 - 11.0);
        let b = dwt2(&x, &Wavelet::<f64>::db4()).unwrap();
        let e_in: f64 = x.iter().map(|v| v * v).sum();
        let e_out: f64 = [&b.ll, &b.lh, &b.hl, &b.hh].iter().flat_map(|a| a.iter()).map(|v| v * v).sum();
        prop_assert!((e_in - e_out).abs() <= 1e-9 * e_in);
    }
}
