//! Validation schemes, confusion matrices and classification metrics.
//!
//! Hold-out schemes are repeated `R` times with independent seeded draws;
//! the first draw is the primary result and all draws feed the mean ± std
//! summary. K-fold schemes pool every fold's predictions into one confusion
//! matrix and also summarize the per-fold metrics. The positive class is
//! malignant (label 1).

use std::fmt;
use std::str::FromStr;

use image::{Rgb, RgbImage};
use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::Label;
use crate::scalar::Scalar;
use crate::selection::{self, NcaParams};
use crate::svm::{self, KernelParams, SvmModel, TrainOptions};

/// Allowed `train:test` hold-out ratios.
pub const HOLDOUT_RATIOS: [(u8, u8); 5] = [(90, 10), (80, 20), (70, 30), (60, 40), (50, 50)];

pub const DEFAULT_FOLDS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    Holdout { train: u8, test: u8 },
    KFold { k: usize },
}

impl Scheme {
    /// The five hold-out ratios followed by 10-fold cross-validation.
    pub fn standard_set() -> Vec<Scheme> {
        HOLDOUT_RATIOS
            .iter()
            .map(|&(train, test)| Scheme::Holdout { train, test })
            .chain([Scheme::KFold { k: DEFAULT_FOLDS }])
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Scheme::Holdout { train, test } => {
                if !HOLDOUT_RATIOS.contains(&(train, test)) {
                    return Err(Error::validation(format!(
                        "hold-out ratio {train}:{test} is not one of 90:10, 80:20, 70:30, 60:40, 50:50"
                    )));
                }
            }
            Scheme::KFold { k } => {
                if k < 2 {
                    return Err(Error::validation(format!("k-fold needs k >= 2, got {k}")));
                }
            }
        }
        Ok(())
    }

    /// Column title in the metrics table.
    pub fn column_title(&self) -> String {
        match self {
            Scheme::Holdout { train, test } => format!("Result ({train}:{test})"),
            Scheme::KFold { k } => format!("Result ({k}-fold CV)"),
        }
    }

    fn seed_tag(&self) -> u64 {
        match *self {
            Scheme::Holdout { train, test } => 0x4800_0000 | (train as u64) << 8 | test as u64,
            Scheme::KFold { k } => 0x4b00_0000 | k as u64,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Holdout { train, test } => write!(f, "{train}:{test}"),
            Scheme::KFold { k } => write!(f, "kfold {k}"),
        }
    }
}

impl FromStr for Scheme {
    type Err = Error;

    /// Accepts `90:10`, `kfold`, `kfold 10`, `kfold:10` and `10-fold`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let bad = || Error::validation(format!("cannot parse validation scheme {s:?}"));
        let scheme = if let Some((a, b)) = s.split_once(':').filter(|(a, _)| a.trim() != "kfold") {
            Scheme::Holdout {
                train: a.trim().parse().map_err(|_| bad())?,
                test: b.trim().parse().map_err(|_| bad())?,
            }
        } else if let Some(rest) = s.strip_prefix("kfold") {
            let rest = rest.trim_start_matches([' ', ':', '=']).trim();
            let k = if rest.is_empty() {
                DEFAULT_FOLDS
            } else {
                rest.parse().map_err(|_| bad())?
            };
            Scheme::KFold { k }
        } else if let Some(k) = s.strip_suffix("-fold") {
            Scheme::KFold {
                k: k.trim().parse().map_err(|_| bad())?,
            }
        } else {
            return Err(bad());
        };
        scheme.validate()?;
        Ok(scheme)
    }
}

impl Serialize for Scheme {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Scheme {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub scheme: Scheme,
    pub seed: u64,
    pub stratified: bool,
    /// Hold-out: 0 = train, 1 = test. K-fold: fold id.
    pub assignments: Vec<usize>,
}

impl SplitPlan {
    pub fn parts(&self) -> usize {
        match self.scheme {
            Scheme::Holdout { .. } => 1,
            Scheme::KFold { k } => k,
        }
    }

    /// Train and test indices of part `p` (always 0 for hold-out).
    pub fn train_test(&self, p: usize) -> (Vec<usize>, Vec<usize>) {
        let test_id = match self.scheme {
            Scheme::Holdout { .. } => 1,
            Scheme::KFold { .. } => p,
        };
        let (test, train): (Vec<usize>, Vec<usize>) =
            (0..self.assignments.len()).partition(|&i| self.assignments[i] == test_id);
        (train, test)
    }
}

/// Seeded assignment of every sample to a partition.
pub fn make_splits(labels: &[Label], scheme: Scheme, seed: u64, stratified: bool) -> Result<SplitPlan> {
    scheme.validate()?;
    let n = labels.len();
    if n == 0 {
        return Err(Error::validation("cannot split an empty dataset"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, scheme.seed_tag()));
    let groups: Vec<Vec<usize>> = if stratified {
        (0..=1u8)
            .map(|c| (0..n).filter(|&i| labels[i] == c).collect())
            .collect()
    } else {
        vec![(0..n).collect()]
    };
    let mut assignments = vec![0usize; n];
    match scheme {
        Scheme::Holdout { test, .. } => {
            for mut members in groups {
                members.shuffle(&mut rng);
                let n_test = (members.len() as f64 * test as f64 / 100.0).round() as usize;
                for &i in &members[..n_test] {
                    assignments[i] = 1;
                }
            }
            if !assignments.contains(&1) {
                return Err(Error::validation(format!("{scheme} leaves no test samples among {n}")));
            }
        }
        Scheme::KFold { k } => {
            if stratified {
                for (class, members) in groups.iter().enumerate() {
                    if members.len() < k {
                        return Err(Error::validation(format!(
                            "class {class} has {} samples, fewer than k = {k}",
                            members.len()
                        )));
                    }
                }
            } else if n < k {
                return Err(Error::validation(format!("{n} samples, fewer than k = {k}")));
            }
            let mut offset = 0;
            for mut members in groups {
                members.shuffle(&mut rng);
                for (j, &i) in members.iter().enumerate() {
                    assignments[i] = (offset + j) % k;
                }
                offset = (offset + members.len()) % k;
            }
        }
    }
    Ok(SplitPlan {
        scheme,
        seed,
        stratified,
        assignments,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn from_predictions(truth: &[Label], predicted: &[Label]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::validation(format!(
                "{} labels but {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut c = ConfusionMatrix::default();
        for (&t, &p) in truth.iter().zip(predicted) {
            match (t == 1, p == 1) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub sensitivity: f64,
    pub specificity: f64,
    pub geometric_mean: f64,
    pub f1: f64,
    pub accuracy: f64,
}

impl MetricReport {
    pub const NAMES: [&'static str; 5] = ["Sensitivity", "Specificity", "Geometric mean", "F1-score", "Accuracy"];

    pub fn values(&self) -> [f64; 5] {
        [
            self.sensitivity,
            self.specificity,
            self.geometric_mean,
            self.f1,
            self.accuracy,
        ]
    }

    fn from_values(v: [f64; 5]) -> Self {
        MetricReport {
            sensitivity: v[0],
            specificity: v[1],
            geometric_mean: v[2],
            f1: v[3],
            accuracy: v[4],
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Metrics of a confusion matrix; a zero denominator yields 0.
pub fn metrics(c: &ConfusionMatrix) -> MetricReport {
    let sensitivity = ratio(c.tp, c.tp + c.fn_);
    let specificity = ratio(c.tn, c.tn + c.fp);
    MetricReport {
        sensitivity,
        specificity,
        geometric_mean: (sensitivity * specificity).sqrt(),
        f1: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
        accuracy: ratio(c.tp + c.tn, c.total()),
    }
}

/// Mean and sample standard deviation (n − 1 denominator; 0 for one run).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub runs: usize,
    pub mean: MetricReport,
    pub std: MetricReport,
}

pub fn summarize(reports: &[MetricReport]) -> Option<Summary> {
    let n = reports.len();
    if n == 0 {
        return None;
    }
    let mut mean = [0.0; 5];
    for r in reports {
        for (m, v) in mean.iter_mut().zip(r.values()) {
            *m += v / n as f64;
        }
    }
    let mut std = [0.0; 5];
    if n > 1 {
        for r in reports {
            for ((s, v), m) in std.iter_mut().zip(r.values()).zip(mean) {
                *s += (v - m) * (v - m);
            }
        }
        std.iter_mut().for_each(|s| *s = (*s / (n - 1) as f64).sqrt());
    }
    Some(Summary {
        runs: n,
        mean: MetricReport::from_values(mean),
        std: MetricReport::from_values(std),
    })
}

/// Anything that can be trained on one partition and predict another.
pub trait Learner<T: Scalar>: Sync {
    fn name(&self) -> String;

    fn fit_predict(&self, train: ArrayView2<T>, labels: &[Label], test: ArrayView2<T>) -> Result<Vec<Label>>;
}

/// Cubic-kernel SVM. The kernel scale defaults to the feature count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmLearner {
    pub scale: Option<f64>,
    pub c: f64,
    pub options: TrainOptions,
}

impl Default for SvmLearner {
    fn default() -> Self {
        SvmLearner {
            scale: None,
            c: 1.0,
            options: TrainOptions::default(),
        }
    }
}

impl SvmLearner {
    pub fn kernel<T: Scalar>(&self, dim: usize) -> Result<KernelParams<T>> {
        let scale = self.scale.unwrap_or(dim.max(1) as f64);
        KernelParams::cubic(T::of(scale), T::of(self.c))
    }

    pub fn train<T: Scalar>(&self, x: ArrayView2<T>, labels: &[Label]) -> Result<SvmModel<T>> {
        let targets: Vec<i8> = labels.iter().map(|&l| svm::signed_label(l)).collect();
        svm::train(x, &targets, &self.kernel(x.ncols())?, &self.options)
    }
}

impl<T: Scalar> Learner<T> for SvmLearner {
    fn name(&self) -> String {
        "cubic-svm".into()
    }

    fn fit_predict(&self, train: ArrayView2<T>, labels: &[Label], test: ArrayView2<T>) -> Result<Vec<Label>> {
        let model = self.train(train, labels)?;
        let (pred, _) = model.predict(test)?;
        Ok(pred.into_iter().map(|p| u8::from(p > 0)).collect())
    }
}

/// Predicts the training majority (ties go to the positive class).
#[derive(Debug, Clone, Copy, Default)]
pub struct MajorityLearner;

impl<T: Scalar> Learner<T> for MajorityLearner {
    fn name(&self) -> String {
        "majority".into()
    }

    fn fit_predict(&self, _: ArrayView2<T>, labels: &[Label], test: ArrayView2<T>) -> Result<Vec<Label>> {
        let pos = labels.iter().filter(|&&l| l == 1).count();
        let label = u8::from(2 * pos >= labels.len());
        Ok(vec![label; test.nrows()])
    }
}

/// Refits NCA on each training partition, keeps its top `k` columns and
/// trains the inner learner on them. Expects normalized, pruned columns.
pub struct FoldSafeLearner<L> {
    pub nca: NcaParams,
    pub k: usize,
    pub inner: L,
}

impl<T: Scalar, L: Learner<T>> Learner<T> for FoldSafeLearner<L> {
    fn name(&self) -> String {
        format!("fold-safe-nca(k={})+{}", self.k, self.inner.name())
    }

    fn fit_predict(&self, train: ArrayView2<T>, labels: &[Label], test: ArrayView2<T>) -> Result<Vec<Label>> {
        let weights = selection::nca_fit(train, labels, &self.nca)?;
        let keep = selection::select_top_k(&weights.weights, self.k.min(train.ncols()))?;
        self.inner.fit_predict(
            train.select(Axis(1), &keep).view(),
            labels,
            test.select(Axis(1), &keep).view(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    /// Repeat index (hold-out) or fold index (k-fold).
    pub index: usize,
    pub test_size: usize,
    pub confusion: ConfusionMatrix,
    pub metrics: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeReport {
    pub scheme: Scheme,
    /// Hold-out: the first repeat. K-fold: pooled over folds.
    pub confusion: ConfusionMatrix,
    pub metrics: MetricReport,
    pub runs: Vec<RunResult>,
    pub summary: Option<Summary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub seed: u64,
    pub stratified: bool,
    /// Hold-out repeats.
    pub repeats: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            seed: 0,
            stratified: true,
            repeats: 10,
        }
    }
}

fn run_part<T: Scalar>(
    x: ArrayView2<T>,
    labels: &[Label],
    plan: &SplitPlan,
    part: usize,
    learner: &dyn Learner<T>,
) -> Result<(Vec<usize>, Vec<Label>)> {
    let (train, test) = plan.train_test(part);
    let train_labels: Vec<Label> = train.iter().map(|&i| labels[i]).collect();
    if !(train_labels.contains(&0) && train_labels.contains(&1)) {
        return Err(Error::validation(format!(
            "{} partition {part} has a single class in training",
            plan.scheme
        )));
    }
    let pred = learner.fit_predict(
        x.select(Axis(0), &train).view(),
        &train_labels,
        x.select(Axis(0), &test).view(),
    )?;
    if pred.len() != test.len() {
        return Err(Error::validation(format!(
            "learner returned {} predictions for {} samples",
            pred.len(),
            test.len()
        )));
    }
    Ok((test, pred))
}

/// Out-of-fold prediction for every sample under a k-fold plan.
pub fn cross_val_predict<T: Scalar>(
    x: ArrayView2<T>,
    labels: &[Label],
    plan: &SplitPlan,
    learner: &dyn Learner<T>,
) -> Result<Vec<Label>> {
    let parts = (0..plan.parts())
        .into_par_iter()
        .map(|p| run_part(x, labels, plan, p, learner))
        .collect::<Result<Vec<_>>>()?;
    let mut pooled = vec![None; labels.len()];
    for (test, pred) in parts {
        for (i, p) in test.into_iter().zip(pred) {
            pooled[i] = Some(p);
        }
    }
    pooled
        .into_iter()
        .enumerate()
        .map(|(i, p)| p.ok_or_else(|| Error::validation(format!("sample {i} was never predicted"))))
        .collect()
}

/// Runs one scheme. Repeats and folds train in parallel; results are
/// assembled in index order.
pub fn run_scheme<T: Scalar>(
    x: ArrayView2<T>,
    labels: &[Label],
    scheme: Scheme,
    opts: &EvalOptions,
    learner: &dyn Learner<T>,
) -> Result<SchemeReport> {
    if x.nrows() != labels.len() {
        return Err(Error::validation(format!(
            "{} feature rows but {} labels",
            x.nrows(),
            labels.len()
        )));
    }
    let run = |index: usize, test: &[usize], pred: &[Label]| -> Result<RunResult> {
        let truth: Vec<Label> = test.iter().map(|&i| labels[i]).collect();
        let confusion = ConfusionMatrix::from_predictions(&truth, pred)?;
        Ok(RunResult {
            index,
            test_size: test.len(),
            confusion,
            metrics: metrics(&confusion),
        })
    };
    match scheme {
        Scheme::Holdout { .. } => {
            let repeats = opts.repeats.max(1);
            let runs = (0..repeats)
                .into_par_iter()
                .map(|r| {
                    let plan = make_splits(labels, scheme, derive_seed(opts.seed, r as u64), opts.stratified)?;
                    let (test, pred) = run_part(x, labels, &plan, 0, learner)?;
                    run(r, &test, &pred)
                })
                .collect::<Result<Vec<_>>>()?;
            let summary = summarize(&runs.iter().map(|r| r.metrics).collect::<Vec<_>>());
            Ok(SchemeReport {
                scheme,
                confusion: runs[0].confusion,
                metrics: runs[0].metrics,
                runs,
                summary,
            })
        }
        Scheme::KFold { .. } => {
            let plan = make_splits(labels, scheme, opts.seed, opts.stratified)?;
            let pooled = cross_val_predict(x, labels, &plan, learner)?;
            let confusion = ConfusionMatrix::from_predictions(labels, &pooled)?;
            let runs = (0..plan.parts())
                .map(|p| {
                    let (_, test) = plan.train_test(p);
                    let pred: Vec<Label> = test.iter().map(|&i| pooled[i]).collect();
                    run(p, &test, &pred)
                })
                .collect::<Result<Vec<_>>>()?;
            let summary = summarize(&runs.iter().map(|r| r.metrics).collect::<Vec<_>>());
            Ok(SchemeReport {
                scheme,
                confusion,
                metrics: metrics(&confusion),
                runs,
                summary,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSection {
    pub name: String,
    pub learner: String,
    pub schemes: Vec<SchemeReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub provenance: serde_json::Value,
    pub sections: Vec<ReportSection>,
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

fn table_rows(section: &ReportSection) -> Vec<Vec<String>> {
    let mut rows: Vec<Vec<String>> = MetricReport::NAMES
        .iter()
        .enumerate()
        .map(|(m, name)| {
            std::iter::once(name.to_string())
                .chain(section.schemes.iter().map(|s| pct(s.metrics.values()[m])))
                .collect()
        })
        .collect();
    rows.push(
        std::iter::once("Accuracy (mean ± std)".to_string())
            .chain(section.schemes.iter().map(|s| match &s.summary {
                Some(sum) => format!("{} ± {}", pct(sum.mean.accuracy), pct(sum.std.accuracy)),
                None => "-".into(),
            }))
            .collect(),
    );
    rows
}

impl EvaluationReport {
    /// Metrics (in percent) as rows, schemes as columns.
    pub fn to_text_table(&self) -> String {
        let mut out = String::new();
        for section in &self.sections {
            let header: Vec<String> = std::iter::once("Metric".to_string())
                .chain(section.schemes.iter().map(|s| s.scheme.column_title()))
                .collect();
            let rows = table_rows(section);
            let widths: Vec<usize> = (0..header.len())
                .map(|c| {
                    rows.iter()
                        .map(|r| r[c].chars().count())
                        .chain([header[c].chars().count()])
                        .max()
                        .unwrap_or(0)
                })
                .collect();
            let line = |cells: &[String]| {
                let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, &w)| format!("{c:<w$}")).collect();
                padded.join("  ").trim_end().to_string() + "\n"
            };
            out.push_str(&format!("[{}] {}\n", section.name, section.learner));
            out.push_str(&line(&header));
            for row in &rows {
                out.push_str(&line(row));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_csv_table(&self) -> String {
        let mut out = String::from("section,metric,scheme,value\n");
        for section in &self.sections {
            for s in &section.schemes {
                for (name, v) in MetricReport::NAMES.iter().zip(s.metrics.values()) {
                    out.push_str(&format!("{},{},{},{}\n", section.name, name, s.scheme, v));
                }
                if let Some(sum) = &s.summary {
                    for (name, (m, sd)) in MetricReport::NAMES
                        .iter()
                        .zip(sum.mean.values().into_iter().zip(sum.std.values()))
                    {
                        out.push_str(&format!("{},{name} mean,{},{m}\n", section.name, s.scheme));
                        out.push_str(&format!("{},{name} std,{},{sd}\n", section.name, s.scheme));
                    }
                }
            }
        }
        out
    }

    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("section,scheme,run,tp,fp,tn,fn,total\n");
        for section in &self.sections {
            for s in &section.schemes {
                let c = s.confusion;
                out.push_str(&format!(
                    "{},{},primary,{},{},{},{},{}\n",
                    section.name,
                    s.scheme,
                    c.tp,
                    c.fp,
                    c.tn,
                    c.fn_,
                    c.total()
                ));
                for r in &s.runs {
                    let c = r.confusion;
                    out.push_str(&format!(
                        "{},{},{},{},{},{},{},{}\n",
                        section.name,
                        s.scheme,
                        r.index,
                        c.tp,
                        c.fp,
                        c.tn,
                        c.fn_,
                        c.total()
                    ));
                }
            }
        }
        out
    }
}

const BAR_COLORS: [[u8; 3]; 5] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
];

/// Grouped bar chart: one group per scheme, one bar per metric in
/// [`MetricReport::NAMES`] order, bar height proportional to the value.
pub fn render_bar_chart(section: &ReportSection) -> RgbImage {
    const H: u32 = 240;
    const MARGIN: u32 = 10;
    const BAR: u32 = 12;
    const GAP: u32 = 16;
    let group = 5 * BAR + GAP;
    let width = 2 * MARGIN + group * section.schemes.len().max(1) as u32;
    let mut img = RgbImage::from_pixel(width, H + 2 * MARGIN, Rgb([255, 255, 255]));
    for (g, s) in section.schemes.iter().enumerate() {
        for (m, v) in s.metrics.values().into_iter().enumerate() {
            let bar_h = (v.clamp(0.0, 1.0) * H as f64).round() as u32;
            let x0 = MARGIN + g as u32 * group + m as u32 * BAR;
            for x in x0..x0 + BAR - 2 {
                for y in (MARGIN + H - bar_h)..(MARGIN + H) {
                    img.put_pixel(x, y, Rgb(BAR_COLORS[m]));
                }
            }
        }
    }
    for x in 0..width {
        img.put_pixel(x, MARGIN + H, Rgb([0, 0, 0]));
    }
    img
}
