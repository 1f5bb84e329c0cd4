//! Column normalization, zero-sum elimination and NCA-based ranking.
//!
//! The ranking uses feature-weighting neighbourhood component analysis: each
//! column `r` gets a weight `w_r` and samples are compared with the weighted
//! L1 distance `D_ij = Σ_r w_r² |x_ir − x_jr|`. Sample `i` picks neighbour
//! `j ≠ i` with probability `p_ij ∝ exp(−D_ij)`, and the weights maximize
//!
//! ```text
//! F(w) = Σ_i Σ_{j : y_j = y_i} p_ij − λ Σ_r w_r²
//! ```
//!
//! by gradient ascent with backtracking from `w = 1`.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FeatureLayout;
use crate::imagecore::Label;
use crate::scalar::Scalar;

/// Columns scaled to `[0, 1]`, with the original column index of each.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedMatrix<T> {
    pub values: Array2<T>,
    pub columns: Vec<usize>,
}

impl<T: Scalar> NormalizedMatrix<T> {
    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    /// Keeps the listed positions (indices into the current columns).
    pub fn select_positions(&self, positions: &[usize]) -> NormalizedMatrix<T> {
        NormalizedMatrix {
            values: self.values.select(Axis(1), positions),
            columns: positions.iter().map(|&p| self.columns[p]).collect(),
        }
    }

    /// Keeps the listed original column indices, in the given order.
    pub fn select_original(&self, originals: &[usize]) -> Result<NormalizedMatrix<T>> {
        let positions = originals
            .iter()
            .map(|&c| {
                self.columns
                    .iter()
                    .position(|&k| k == c)
                    .ok_or_else(|| Error::validation(format!("column {c} is not present in the normalized matrix")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.select_positions(&positions))
    }
}

/// Column-wise `(x − min) / (max − min)`; constant columns become all zero.
pub fn minmax_normalize<T: Scalar>(values: &Array2<T>) -> NormalizedMatrix<T> {
    let mut out = values.clone();
    for mut col in out.axis_iter_mut(Axis(1)) {
        let (min, max) = col.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
        let range = max - min;
        if range > T::zero() {
            col.mapv_inplace(|v| (v - min) / range);
        } else {
            col.fill(T::zero());
        }
    }
    NormalizedMatrix {
        values: out,
        columns: (0..values.ncols()).collect(),
    }
}

/// Drops every column whose sum is exactly zero.
pub fn eliminate_zero_sum<T: Scalar>(m: &NormalizedMatrix<T>) -> Result<NormalizedMatrix<T>> {
    let keep: Vec<usize> = m
        .values
        .axis_iter(Axis(1))
        .enumerate()
        .filter(|(_, col)| col.iter().copied().sum::<T>() != T::zero())
        .map(|(i, _)| i)
        .collect();
    if keep.is_empty() {
        return Err(Error::validation(
            "every feature column sums to zero after normalization",
        ));
    }
    Ok(m.select_positions(&keep))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NcaParams {
    /// Ridge penalty; `None` means `1 / n_samples`.
    pub lambda: Option<f64>,
    pub initial_step: f64,
    pub max_iter: usize,
    /// Stop when the gradient norm falls below `tol · (1 + |F|)`.
    pub tol: f64,
    /// Seed for the optional stratified subsample.
    pub seed: u64,
    /// Fit on at most this many samples (stratified, seeded) when set.
    pub max_samples: Option<usize>,
}

impl Default for NcaParams {
    fn default() -> Self {
        NcaParams {
            lambda: None,
            initial_step: 1.0,
            max_iter: 100,
            tol: 1e-6,
            seed: 0,
            max_samples: None,
        }
    }
}

/// Learned relevance weights with the optimizer trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector<T> {
    /// Non-negative relevance `w_r²`, the factor each column gets in the distance.
    pub weights: Vec<T>,
    /// Objective before the first step and after each accepted step.
    pub trace: Vec<f64>,
    pub lambda: f64,
    pub iterations: usize,
    pub samples_used: usize,
}

/// Rows processed per parallel task; fixed so reductions are order-stable.
const ROW_CHUNK: usize = 16;

struct Partial<T> {
    objective: T,
    grad: Option<Vec<T>>,
}

fn rows_contribution<T: Scalar>(
    x: ArrayView2<T>,
    labels: &[Label],
    w_sq: &[T],
    rows: std::ops::Range<usize>,
    with_grad: bool,
) -> Partial<T> {
    let (n, d) = x.dim();
    let mut objective = T::zero();
    let mut grad = with_grad.then(|| vec![T::zero(); d]);
    let mut dist = vec![T::zero(); n];
    let mut prob = vec![T::zero(); n];
    let data = x.as_slice().expect("standard layout");
    let row = |i: usize| &data[i * d..(i + 1) * d];
    for i in rows {
        let xi = row(i);
        for (j, dj) in dist.iter_mut().enumerate() {
            if j == i {
                continue;
            }
            *dj = row(j)
                .iter()
                .zip(xi)
                .zip(w_sq)
                .fold(T::zero(), |acc, ((&a, &b), &w)| acc + w * (b - a).abs());
        }
        let min = dist
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .fold(T::infinity(), |m, (_, &v)| m.min(v));
        let mut z = T::zero();
        for j in 0..n {
            prob[j] = if j == i { T::zero() } else { (min - dist[j]).exp() };
            z += prob[j];
        }
        let mut p_same = T::zero();
        for j in 0..n {
            prob[j] /= z;
            if j != i && labels[j] == labels[i] {
                p_same += prob[j];
            }
        }
        objective += p_same;
        if let Some(g) = grad.as_mut() {
            // Σ_j (p_i·p_ij − [y_j = y_i]·p_ij) |x_ir − x_jr|
            for j in 0..n {
                if j == i {
                    continue;
                }
                let coef = if labels[j] == labels[i] {
                    p_same * prob[j] - prob[j]
                } else {
                    p_same * prob[j]
                };
                if coef == T::zero() {
                    continue;
                }
                for ((gr, &a), &b) in g.iter_mut().zip(row(j)).zip(xi) {
                    *gr += coef * (b - a).abs();
                }
            }
        }
    }
    Partial { objective, grad }
}

fn evaluate<T: Scalar>(x: ArrayView2<T>, labels: &[Label], w: &[T], lambda: T, with_grad: bool) -> (T, Option<Vec<T>>) {
    let n = x.nrows();
    let owned = x.as_standard_layout();
    let x = owned.view();
    let w_sq: Vec<T> = w.iter().map(|&v| v * v).collect();
    let chunks: Vec<Partial<T>> = (0..n.div_ceil(ROW_CHUNK))
        .into_par_iter()
        .map(|c| {
            let rows = c * ROW_CHUNK..((c + 1) * ROW_CHUNK).min(n);
            rows_contribution(x, labels, &w_sq, rows, with_grad)
        })
        .collect();
    let mut objective = T::zero();
    let mut raw = with_grad.then(|| vec![T::zero(); w.len()]);
    for part in chunks {
        objective += part.objective;
        if let (Some(total), Some(g)) = (raw.as_mut(), part.grad) {
            total.iter_mut().zip(g).for_each(|(t, v)| *t += v);
        }
    }
    let penalty: T = w_sq.iter().copied().sum();
    let objective = objective - lambda * penalty;
    let two = T::of(2.0);
    let grad = raw.map(|raw| {
        raw.iter()
            .zip(w)
            .map(|(&s, &wr)| two * wr * s - two * lambda * wr)
            .collect()
    });
    (objective, grad)
}

/// NCA objective `F(w)`.
pub fn nca_objective<T: Scalar>(x: ArrayView2<T>, labels: &[Label], w: &[T], lambda: T) -> T {
    evaluate(x, labels, w, lambda, false).0
}

/// NCA objective and its analytic gradient.
pub fn nca_objective_grad<T: Scalar>(x: ArrayView2<T>, labels: &[Label], w: &[T], lambda: T) -> (T, Vec<T>) {
    let (f, g) = evaluate(x, labels, w, lambda, true);
    (f, g.expect("gradient requested"))
}

fn stratified_subsample(labels: &[Label], max: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = labels.len();
    let mut picked = Vec::with_capacity(max);
    for class in 0..=1u8 {
        let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        let quota = ((members.len() * max) as f64 / n as f64).round() as usize;
        picked.extend(members.into_iter().take(quota.max(2)));
    }
    picked.sort_unstable();
    picked
}

/// Fits feature weights. Deterministic for fixed inputs and parameters.
pub fn nca_fit<T: Scalar>(x: ArrayView2<T>, labels: &[Label], params: &NcaParams) -> Result<WeightVector<T>> {
    let (n, d) = x.dim();
    if labels.len() != n {
        return Err(Error::validation(format!("{n} samples but {} labels", labels.len())));
    }
    if d == 0 {
        return Err(Error::validation("NCA needs at least one feature column"));
    }
    for class in 0..=1u8 {
        let count = labels.iter().filter(|&&l| l == class).count();
        if count < 2 {
            return Err(Error::validation(format!(
                "NCA needs at least 2 samples of class {class}, got {count}"
            )));
        }
    }
    if !(params.initial_step > 0.0) {
        return Err(Error::validation("NCA step must be positive"));
    }

    match params.max_samples {
        Some(max) if max < n => {
            let rows = stratified_subsample(labels, max, params.seed);
            let subset = x.select(Axis(0), &rows);
            let sub_labels: Vec<Label> = rows.iter().map(|&i| labels[i]).collect();
            fit_weights(subset.view(), &sub_labels, params)
        }
        _ => fit_weights(x, labels, params),
    }
}

fn fit_weights<T: Scalar>(x: ArrayView2<T>, labels: &[Label], params: &NcaParams) -> Result<WeightVector<T>> {
    let d = x.ncols();
    let n_used = x.nrows();
    let lambda_f = params.lambda.unwrap_or(1.0 / n_used as f64);
    if lambda_f < 0.0 {
        return Err(Error::validation("NCA lambda must be non-negative"));
    }
    let lambda = T::of(lambda_f);

    let mut w = vec![T::one(); d];
    let (mut f, mut g) = nca_objective_grad(x, labels, &w, lambda);
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            iteration: 0,
            message: "non-finite objective or gradient at the initial weights".into(),
        });
    }
    let mut trace = vec![f.to_f64_lossy()];
    let mut step = params.initial_step;
    let mut iterations = 0;
    let armijo = T::of(1e-4);

    'outer: for iter in 1..=params.max_iter {
        let gnorm2: T = g.iter().map(|&v| v * v).sum();
        if gnorm2.sqrt() <= T::of(params.tol) * (T::one() + f.abs()) {
            break;
        }
        loop {
            let t = T::of(step);
            let candidate: Vec<T> = w.iter().zip(&g).map(|(&wi, &gi)| wi + t * gi).collect();
            let f_new = nca_objective(x, labels, &candidate, lambda);
            if f_new.is_finite() && f_new >= f + armijo * t * gnorm2 {
                let (f_acc, g_acc) = nca_objective_grad(x, labels, &candidate, lambda);
                if !f_acc.is_finite() || g_acc.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numeric {
                        iteration: iter,
                        message: "non-finite objective or gradient".into(),
                    });
                }
                w = candidate;
                f = f_acc;
                g = g_acc;
                trace.push(f.to_f64_lossy());
                iterations = iter;
                step *= 2.0;
                break;
            }
            step *= 0.5;
            if step < 1e-14 {
                break 'outer;
            }
        }
    }

    Ok(WeightVector {
        weights: w.iter().map(|&v| v * v).collect(),
        trace,
        lambda: lambda_f,
        iterations,
        samples_used: n_used,
    })
}

/// All indices ordered by descending weight, ties by ascending index.
pub fn rank_indices<T: Scalar>(weights: &[T]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..weights.len()).collect();
    idx.sort_by(|&a, &b| {
        weights[b]
            .partial_cmp(&weights[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}

/// Indices of the `k` largest weights, ties broken by ascending index.
pub fn select_top_k<T: Scalar>(weights: &[T], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > weights.len() {
        return Err(Error::validation(format!(
            "cannot select {k} of {} feature columns",
            weights.len()
        )));
    }
    let mut ranked = rank_indices(weights);
    ranked.truncate(k);
    Ok(ranked)
}

/// Auditable weight table: `column,layout_source,level,channel,weight,rank`,
/// one line per surviving column in rank order.
pub fn weights_csv<T: Scalar>(layout: &FeatureLayout, columns: &[usize], weights: &[T]) -> String {
    let mut out = String::from("column,layout_source,level,channel,weight,rank\n");
    for (rank, pos) in rank_indices(weights).into_iter().enumerate() {
        let column = columns[pos];
        let (source, level, channel) = match layout.get(column) {
            Some(d) => (
                d.source.to_string(),
                d.level.to_string(),
                d.channel.map(|c| c.to_string()).unwrap_or_else(|| "-".into()),
            ),
            None => ("?".into(), "?".into(), "?".into()),
        };
        out.push_str(&format!(
            "{column},{source},{level},{channel},{:e},{}\n",
            weights[pos].to_f64_lossy(),
            rank + 1
        ));
    }
    out
}
