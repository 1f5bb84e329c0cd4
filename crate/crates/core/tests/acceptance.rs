//! Acceptance run: one PASS/FAIL line per criterion, each checked at its stated
//! tolerance and runtime budget. Exits nonzero when any required criterion
//! fails. The full-corpus reproduction runs only when `PHF_DATASET_DIR` and
//! `PHF_DEEP_STORE` are set, and its outcome never affects the exit code.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::{Array2, Axis};
use pyramid_hybrid::deepfeat::zero_stub_store;
use pyramid_hybrid::dwt::{dwt2, idwt2, Wavelet};
use pyramid_hybrid::eval::{
    metrics, run_scheme, ConfusionMatrix, EvalOptions, EvaluationReport, MetricReport, Scheme, SvmLearner,
};
use pyramid_hybrid::fusion::{fuse_dataset, read_matrix, FeatureConfig, FeatureLayout, Source};
use pyramid_hybrid::imagecore::{scan_dataset, Channel, DatasetLayout};
use pyramid_hybrid::lbp::{lbp_feature_size, lbp_histogram_values, LBP_BINS};
use pyramid_hybrid::lpq::{lpq_histogram_values, LpqConfig};
use pyramid_hybrid::selection::{
    eliminate_zero_sum, minmax_normalize, nca_fit, nca_objective_grad, select_top_k, NcaParams,
};
use pyramid_hybrid::svm::{gram_matrix, train, KernelParams, SvmModel, TrainOptions};
use rand::Rng;
use rand_distr::StandardNormal;

use common::*;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

struct Criterion {
    name: &'static str,
    budget: Duration,
    run: fn() -> Check,
}

const SECONDS: Duration = Duration::from_secs(30);

fn main() {
    let criteria = [
        Criterion {
            name: "dimensional fidelity",
            budget: Duration::from_secs(1),
            run: dimensional_fidelity,
        },
        Criterion {
            name: "LBP suite",
            budget: SECONDS,
            run: lbp_suite,
        },
        Criterion {
            name: "LPQ suite",
            budget: SECONDS,
            run: lpq_suite,
        },
        Criterion {
            name: "DWT suite",
            budget: SECONDS,
            run: dwt_suite,
        },
        Criterion {
            name: "NCA suite",
            budget: Duration::from_secs(60),
            run: nca_suite,
        },
        Criterion {
            name: "SVM suite",
            budget: SECONDS,
            run: svm_suite,
        },
        Criterion {
            name: "metrics identity",
            budget: SECONDS,
            run: metrics_identity,
        },
        Criterion {
            name: "end-to-end determinism",
            budget: Duration::from_secs(10),
            run: end_to_end,
        },
    ];

    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > c.budget => Err(format!("{detail}; over budget {:?}", c.budget)),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS  {:<24} {:>8.2?}  {detail}", c.name, elapsed),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {:<24} {:>8.2?}  {detail}", c.name, elapsed);
            }
        }
    }

    let start = Instant::now();
    match full_reproduction() {
        None => println!(
            "SKIP  {:<24} {:>8}  set PHF_DATASET_DIR and PHF_DEEP_STORE to run",
            "full reproduction", "-"
        ),
        Some(Ok(d)) => println!(
            "PASS  {:<24} {:>8.2?}  {d} (optional)",
            "full reproduction",
            start.elapsed()
        ),
        Some(Err(d)) => println!(
            "FAIL  {:<24} {:>8.2?}  {d} (optional, not counted)",
            "full reproduction",
            start.elapsed()
        ),
    }

    println!(
        "{} of {} required criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

fn dimensional_fidelity() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let root = eight_image_fixture(&dir.path().join("data"));
    let manifest = scan_dataset(&root, DatasetLayout::ClassSubdirs).map_err(|e| e.to_string())?;
    let store = zero_stub_store(&manifest);
    let start = Instant::now();
    let m = fuse_dataset::<f64>(&manifest, &store, &FeatureConfig::default(), None).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    ensure(
        m.cols() == 11_780 && m.rows() == 8,
        format!("shape {}x{}", m.rows(), m.cols()),
    )?;

    let layout = FeatureLayout::standard();
    let mut block = vec![(Source::DeepA, None, 1000), (Source::DeepB, None, 1000)];
    for c in Channel::ALL {
        block.push((Source::Lpq, Some(c), 256));
        block.push((Source::Lbp, Some(c), 59));
    }
    let mut cursor = 0;
    for level in 0..4u8 {
        for &(source, channel, size) in &block {
            for local in 0..size {
                let d = layout.get(cursor).ok_or("layout too short")?;
                ensure(
                    (d.source, d.level, d.channel, d.local as usize) == (source, level, channel, local),
                    format!("column {cursor} mislabelled"),
                )?;
                cursor += 1;
            }
        }
    }
    ensure(cursor == layout.len(), "layout longer than 4 blocks")?;
    ensure(took < Duration::from_secs(1), format!("fusion took {took:?}"))?;
    Ok(format!(
        "8x{} = 4x(1000+1000+3x256+3x59), fused in {took:.2?}",
        m.cols()
    ))
}

fn lbp_suite() -> Check {
    let mut rng = rng(8);
    for t in 0..20 {
        let p = random_plane(&mut rng, 8, 8, 255);
        let got = lbp_histogram_values(&p).map_err(|e| e.to_string())?;
        ensure(
            got.bins.to_vec() == oracle_lbp_histogram(&p),
            format!("oracle mismatch on plane {t}"),
        )?;
        ensure(got.total() == 36, "mass on 8x8")?;
    }
    for t in 0..50 {
        let (h, w) = (rng.gen_range(3..30), rng.gen_range(3..30));
        let p = random_plane(&mut rng, h, w, 255);
        let base = lbp_histogram_values(&p).unwrap();
        ensure(base.total() == ((h - 2) * (w - 2)) as u64, format!("mass on trial {t}"))?;
        let shift = rng.gen_range(-100..100) as f64;
        let scale = rng.gen_range(0.01..50.0);
        for mapped in [
            p.mapv(|v| v + shift),
            p.mapv(|v| v * scale),
            p.mapv(|v| (v / 40.0).exp()),
        ] {
            ensure(
                lbp_histogram_values(&mapped).unwrap().bins == base.bins,
                format!("invariance on trial {t}"),
            )?;
        }
    }
    let counted = (0..256u32).filter(|&c| circular_transitions(c, 8) <= 2).count() + 1;
    ensure(
        lbp_feature_size(8).unwrap() == 59 && counted == 59 && LBP_BINS == 59,
        "feature size is not 59",
    )?;
    Ok("20 oracle planes exact, 50 mass/invariance trials, 59 bins".into())
}

fn lpq_suite() -> Check {
    let cfg = LpqConfig::default();
    let mut rng = rng(12);
    for t in 0..20 {
        let p = random_plane(&mut rng, 12, 12, 255);
        let got = lpq_histogram_values(&p, &cfg).unwrap();
        ensure(
            got.bins.to_vec() == oracle_lpq_histogram(&p, 5),
            format!("oracle mismatch on plane {t}"),
        )?;
    }
    for t in 0..30 {
        let (h, w) = (rng.gen_range(5..30), rng.gen_range(5..30));
        let p = random_plane(&mut rng, h, w, 255);
        let base = lpq_histogram_values(&p, &cfg).unwrap();
        ensure(base.total() == ((h - 4) * (w - 4)) as u64, format!("mass on trial {t}"))?;
        let c = rng.gen_range(0.05..20.0);
        ensure(
            lpq_histogram_values(&p.mapv(|v| v * c), &cfg).unwrap().bins == base.bins,
            format!("scale {c} on trial {t}"),
        )?;
    }
    let flat = lpq_histogram_values(&Array2::from_elem((20, 20), 77.0), &cfg).unwrap();
    ensure(
        flat.bins[255] == 256 && flat.total() == 256,
        "constant plane is not all bin 255",
    )?;

    let mut rng = common::rng(64);
    let distances: Vec<f64> = (0..20)
        .map(|_| {
            let p = random_plane(&mut rng, 64, 64, 255);
            let a = lpq_histogram_values(&p, &cfg).unwrap();
            let b = lpq_histogram_values(&box_blur(&p), &cfg).unwrap();
            l1(&normalized(&a.bins), &normalized(&b.bins))
        })
        .collect();
    let max = distances.iter().cloned().fold(0.0, f64::max);
    let mean = distances.iter().sum::<f64>() / distances.len() as f64;
    let summary =
        format!("oracle exact on 20 planes, mass/scale/constant ok; blur L1 mean {mean:.3} max {max:.3} (bound 0.35)");
    ensure(max <= 0.35, summary.clone())?;
    Ok(summary)
}

fn dwt_suite() -> Check {
    let w = Wavelet::<f64>::db4();
    let mut rng = rng(31);
    let (mut worst_trip, mut worst_energy) = (0.0f64, 0.0f64);
    for _ in 0..40 {
        let (h, wd) = (rng.gen_range(8..64), rng.gen_range(8..64));
        let x = random_plane(&mut rng, h, wd, 255);
        let back = idwt2(&dwt2(&x, &w).unwrap(), &w).unwrap();
        worst_trip = x
            .iter()
            .zip(&back)
            .map(|(a, b)| (a - b).abs())
            .fold(worst_trip, f64::max);

        let (h2, w2) = (2 * rng.gen_range(4..32), 2 * rng.gen_range(4..32));
        let x = random_plane(&mut rng, h2, w2, 255).mapv(|v| v / 7.0 - 11.0);
        let b = dwt2(&x, &w).unwrap();
        let e_in: f64 = x.iter().map(|v| v * v).sum();
        let e_out: f64 = [&b.ll, &b.lh, &b.hl, &b.hh]
            .iter()
            .flat_map(|a| a.iter())
            .map(|v| v * v)
            .sum();
        worst_energy = worst_energy.max((e_in - e_out).abs() / e_in);
    }
    ensure(worst_trip <= 1e-9, format!("round trip {worst_trip:e}"))?;
    ensure(worst_energy <= 1e-9, format!("Parseval {worst_energy:e}"))?;
    for c in [0.0, 3.5, 200.0] {
        let b = dwt2(&Array2::from_elem((16, 16), c), &w).unwrap();
        ensure(
            b.ll.iter().all(|&v| (v - 2.0 * c).abs() < 1e-12),
            format!("constant {c}"),
        )?;
    }
    let mut p = Array2::from_elem((224, 224), 1.0);
    let mut sizes = vec![224];
    for _ in 0..3 {
        p = dwt2(&p, &w).unwrap().ll;
        sizes.push(p.nrows());
    }
    ensure(sizes == [224, 112, 56, 28], format!("size chain {sizes:?}"))?;
    Ok(format!(
        "round trip {worst_trip:.1e}, Parseval {worst_energy:.1e}, 2c rule, 224/112/56/28"
    ))
}

/// Objective from its definition, used for the finite differences.
fn textbook_objective(x: &Array2<f64>, labels: &[u8], w: &[f64], lambda: f64) -> f64 {
    let n = x.nrows();
    let mut total = 0.0;
    for i in 0..n {
        let k: Vec<f64> = (0..n)
            .map(|j| {
                if j == i {
                    0.0
                } else {
                    (-(0..w.len())
                        .map(|r| w[r] * w[r] * (x[(i, r)] - x[(j, r)]).abs())
                        .sum::<f64>())
                    .exp()
                }
            })
            .collect();
        let z: f64 = k.iter().sum();
        total += (0..n)
            .filter(|&j| j != i && labels[j] == labels[i])
            .map(|j| k[j] / z)
            .sum::<f64>();
    }
    total - lambda * w.iter().map(|v| v * v).sum::<f64>()
}

fn nca_suite() -> Check {
    let mut rng = rng(91);
    let x = Array2::from_shape_fn((20, 5), |_| rng.gen_range(0.0..1.0));
    let labels: Vec<u8> = (0..20).map(|i| (i % 2) as u8).collect();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let w: Vec<f64> = (0..5).map(|_| rng.gen_range(0.2..1.8)).collect();
        let (_, grad) = nca_objective_grad(x.view(), &labels, &w, 0.5);
        for r in 0..5 {
            let (mut up, mut down) = (w.clone(), w.clone());
            up[r] += h;
            down[r] -= h;
            let fd =
                (textbook_objective(&x, &labels, &up, 0.5) - textbook_objective(&x, &labels, &down, 0.5)) / (2.0 * h);
            worst = worst.max((grad[r] - fd).abs() / fd.abs().max(1e-8));
        }
    }
    ensure(worst <= 1e-4, format!("gradient relative error {worst:e}"))?;

    let mut hits = 0;
    let mut monotone = true;
    for seed in 0..20u64 {
        let (raw, labels) = informative_dataset(200, 2, 8, 2.0, 1000 + seed);
        let x = minmax_normalize(&raw).values;
        let fit = nca_fit(x.view(), &labels, &NcaParams::default()).map_err(|e| e.to_string())?;
        monotone &= fit.trace.windows(2).all(|t| t[1] >= t[0]);
        let mut top = select_top_k(&fit.weights, 2).unwrap();
        top.sort_unstable();
        hits += usize::from(top == [0, 1]);
    }
    ensure(hits >= 19, format!("informative pair recovered in {hits}/20"))?;
    ensure(monotone, "objective decreased along an accepted step")?;
    Ok(format!(
        "gradient rel err {worst:.1e}; recovery {hits}/20; objective monotone"
    ))
}

fn gaussian_classes(n: usize, d: usize, shift: f64, seed: u64) -> (Array2<f64>, Vec<i8>) {
    let mut rng = rng(seed);
    let y: Vec<i8> = (0..n).map(|i| if i % 2 == 0 { -1 } else { 1 }).collect();
    let x = Array2::from_shape_fn((n, d), |(i, _)| {
        let g: f64 = rng.sample(StandardNormal);
        0.5 + 0.15 * g + shift * y[i] as f64
    });
    (x, y)
}

fn train_accuracy(model: &SvmModel<f64>, x: &Array2<f64>, y: &[i8]) -> f64 {
    let (pred, _) = model.predict(x.view()).unwrap();
    pred.iter().zip(y).filter(|(p, t)| p == t).count() as f64 / y.len() as f64
}

fn svm_suite() -> Check {
    let mut rng = rng(40);
    let mut min_eig = f64::INFINITY;
    for _ in 0..50 {
        let (n, d) = (rng.gen_range(1..=10), rng.gen_range(1..6));
        let x = Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0));
        let k = gram_matrix(x.view(), &KernelParams::cubic(rng.gen_range(0.5..10.0), 1.0).unwrap());
        ensure(k == k.t(), "Gram matrix not symmetric")?;
        min_eig = min_eig.min(min_eigenvalue(&k));
    }
    ensure(min_eig >= -1e-8, format!("min eigenvalue {min_eig:e}"))?;

    let opts = TrainOptions {
        record_trace: true,
        ..TrainOptions::default()
    };
    let mut worst_kkt = 0.0f64;
    for seed in 0..8 {
        let (x, y) = gaussian_classes(40, 3, if seed < 4 { 0.3 } else { 0.08 }, 100 + seed);
        let model = train(x.view(), &y, &KernelParams::cubic(1.0, 1.0).unwrap(), &opts).map_err(|e| e.to_string())?;
        model.check_invariants(1e-8).map_err(|e| format!("seed {seed}: {e}"))?;
        ensure(model.info.converged, format!("seed {seed} did not converge"))?;
        worst_kkt = worst_kkt.max(model.info.kkt_violation);
        ensure(
            model.info.dual_trace.windows(2).all(|t| t[1] >= t[0]),
            format!("dual decreased on seed {seed}"),
        )?;
    }
    ensure(worst_kkt <= 1e-3, format!("KKT violation {worst_kkt:e}"))?;

    for seed in 0..5 {
        let mut rng = common::rng(seed);
        let x = Array2::from_shape_fn(
            (20, 2),
            |(i, _)| if i < 10 { -2.0 } else { 2.0 } + rng.gen_range(-0.5..0.5),
        );
        let y: Vec<i8> = (0..20).map(|i| if i < 10 { -1 } else { 1 }).collect();
        let model = train(
            x.view(),
            &y,
            &KernelParams::cubic(2.0, 1.0).unwrap(),
            &TrainOptions::default(),
        )
        .unwrap();
        ensure(train_accuracy(&model, &x, &y) == 1.0, format!("blobs seed {seed}"))?;
    }
    let x = ndarray::array![[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]];
    let y = [-1i8, -1, 1, 1];
    let xor = train(
        x.view(),
        &y,
        &KernelParams::cubic(1.0, 1.0).unwrap(),
        &TrainOptions::default(),
    )
    .unwrap();
    ensure(train_accuracy(&xor, &x, &y) == 1.0, "XOR not separated")?;
    Ok(format!(
        "min eig {min_eig:.1e}; KKT {worst_kkt:.1e}; blobs and XOR 100%; dual monotone"
    ))
}

fn gmean_error(m: &MetricReport) -> f64 {
    (m.geometric_mean.powi(2) - m.sensitivity * m.specificity).abs()
}

fn metrics_identity() -> Check {
    let mut worst = 0.0f64;
    let mut rng = rng(55);
    for _ in 0..10_000 {
        let c = ConfusionMatrix {
            tp: rng.gen_range(0..500),
            fp: rng.gen_range(0..500),
            tn: rng.gen_range(0..500),
            fn_: rng.gen_range(0..500),
        };
        worst = worst.max(gmean_error(&metrics(&c)));
    }
    let (x, y) = {
        let (x, y) = gaussian_classes(60, 4, 0.1, 5);
        (x, y.iter().map(|&v| u8::from(v > 0)).collect::<Vec<u8>>())
    };
    let opts = EvalOptions {
        seed: 3,
        repeats: 3,
        ..EvalOptions::default()
    };
    for scheme in Scheme::standard_set() {
        let r = run_scheme(x.view(), &y, scheme, &opts, &SvmLearner::default()).map_err(|e| e.to_string())?;
        worst = r
            .runs
            .iter()
            .map(|run| gmean_error(&run.metrics))
            .fold(worst.max(gmean_error(&r.metrics)), f64::max);
    }
    ensure(worst <= 1e-12, format!("gmean identity error {worst:e}"))?;
    let published = (0.9667f64 * 0.9463).sqrt();
    ensure(
        (published - 0.9564).abs() <= 1e-4,
        format!("published 90:10 column gives {published:.4}"),
    )?;
    Ok(format!(
        "identity error {worst:.1e}; published 90:10 gmean {published:.4} vs 0.9564"
    ))
}

fn phf_all(data: &Path, out: &Path, threads: &str) -> Result<Duration, String> {
    let start = Instant::now();
    let o = Command::new(phf_bin())
        .args(["all", "--deep-stub", "--seed", "7", "--threads", threads])
        .args(["--scheme", "50:50", "--scheme", "kfold 4", "--repeats", "2"])
        .arg("--dataset")
        .arg(data)
        .arg("--output")
        .arg(out)
        .env_remove("PHF_CACHE_DIR")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(o.status.success(), String::from_utf8_lossy(&o.stderr).into_owned())?;
    Ok(start.elapsed())
}

fn end_to_end() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let data = eight_image_fixture(&dir.path().join("data"));
    let runs = [("a", "1"), ("b", "4"), ("c", "4")];
    let mut slowest = Duration::ZERO;
    for (name, threads) in runs {
        slowest = slowest.max(phf_all(&data, &dir.path().join(name), threads)?);
    }
    let a = snapshot(&dir.path().join("a"), &["cache"]);
    ensure(!a.is_empty(), "no artifacts")?;
    for (name, _) in &runs[1..] {
        ensure(
            snapshot(&dir.path().join(name), &["cache"]) == a,
            format!("run {name} differs"),
        )?;
    }

    let (m, _) = read_matrix::<f64>(&dir.path().join("a").join("features.phfm")).map_err(|e| e.to_string())?;
    let kept = eliminate_zero_sum(&minmax_normalize(&m.values)).map_err(|e| e.to_string())?;
    let deep_kept = kept
        .columns
        .iter()
        .filter(|&&c| m.layout.get(c).unwrap().source.is_deep())
        .count();
    ensure(deep_kept == 0, format!("{deep_kept} deep columns survived"))?;
    let deep_zero = (0..m.cols())
        .filter(|&c| m.layout.get(c).unwrap().source.is_deep())
        .all(|c| m.values.index_axis(Axis(1), c).iter().all(|&v| v == 0.0));
    ensure(deep_zero, "stub deep columns are not all zero")?;
    Ok(format!(
        "{} artifacts identical over 3 runs (1 and 4 threads); 8000 deep columns eliminated, {} kept; slowest run {slowest:.2?}",
        a.len(),
        kept.ncols()
    ))
}

/// Full corpus: 10-fold pooled accuracy ≥ 88% and 90:10 accuracy ≥ 92%.
fn full_reproduction() -> Option<Check> {
    let dataset = std::env::var_os("PHF_DATASET_DIR")?;
    let store = std::env::var_os("PHF_DEEP_STORE")?;
    let seed = std::env::var("PHF_SEED").unwrap_or_else(|_| "42".into());
    let out = tempfile::tempdir().unwrap();
    let o = Command::new(phf_bin())
        .args(["all", "--seed", &seed])
        .arg("--dataset")
        .arg(dataset)
        .arg("--deep-store")
        .arg(store)
        .arg("--output")
        .arg(out.path())
        .output();
    let o = match o {
        Ok(o) => o,
        Err(e) => return Some(Err(e.to_string())),
    };
    if !o.status.success() {
        return Some(Err(String::from_utf8_lossy(&o.stderr).into_owned()));
    }
    let report: EvaluationReport =
        match std::fs::read_to_string(out.path().join("report.json")).map(|t| serde_json::from_str(&t)) {
            Ok(Ok(r)) => r,
            other => return Some(Err(format!("unreadable report: {other:?}"))),
        };
    let accuracy = |scheme: Scheme| {
        report.sections[0]
            .schemes
            .iter()
            .find(|s| s.scheme == scheme)
            .map(|s| s.metrics.accuracy)
            .unwrap_or(0.0)
    };
    let kfold = accuracy(Scheme::KFold { k: 10 });
    let holdout = accuracy(Scheme::Holdout { train: 90, test: 10 });
    let detail = format!(
        "10-fold {:.2}% (≥ 88), 90:10 {:.2}% (≥ 92)",
        100.0 * kfold,
        100.0 * holdout
    );
    Some(if kfold >= 0.88 && holdout >= 0.92 {
        Ok(detail)
    } else {
        Err(detail)
    })
}
