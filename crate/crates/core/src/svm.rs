//! Soft-margin support vector classifier with the cubic polynomial kernel
//! `K(x, y) = (offset + ⟨x, y⟩ / scale)^degree`, trained by SMO.
//!
//! The solver works on the dual
//!
//! ```text
//! min ½ αᵀQα − Σα   s.t.  0 ≤ α ≤ C,  yᵀα = 0,   Q_ij = y_i y_j K(x_i, x_j)
//! ```
//!
//! selecting the maximal violating pair at every step. The kernel matrix is
//! computed once up front and shrinking is disabled, so training is a pure
//! function of its inputs.

use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::{self, Reader};
use crate::imagecore::Label;
use crate::scalar::Scalar;

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams<T> {
    pub degree: u32,
    pub scale: T,
    pub offset: T,
    /// Box constraint.
    pub c: T,
}

impl<T: Scalar> KernelParams<T> {
    /// Degree 3, offset 1.
    pub fn cubic(scale: T, c: T) -> Result<Self> {
        let p = KernelParams {
            degree: 3,
            scale,
            offset: T::one(),
            c,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.degree != 3 {
            return Err(Error::validation(format!(
                "kernel degree must be 3, got {}",
                self.degree
            )));
        }
        if !(self.scale > T::zero()) || !self.scale.is_finite() {
            return Err(Error::validation("kernel scale must be positive"));
        }
        if !(self.c > T::zero()) || !self.c.is_finite() {
            return Err(Error::validation("box constraint C must be positive"));
        }
        Ok(())
    }

    fn eval(&self, x: ArrayView1<T>, y: ArrayView1<T>) -> T {
        let base = self.offset + x.dot(&y) / self.scale;
        base.powi(self.degree as i32)
    }
}

pub fn kernel<T: Scalar>(x: &[T], y: &[T], p: &KernelParams<T>) -> Result<T> {
    if x.len() != y.len() {
        return Err(Error::validation(format!(
            "kernel arguments differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    Ok(p.eval(ArrayView1::from(x), ArrayView1::from(y)))
}

/// Symmetric Gram matrix `K_ij = K(x_i, x_j)`.
pub fn gram_matrix<T: Scalar>(x: ArrayView2<T>, p: &KernelParams<T>) -> Array2<T> {
    let n = x.nrows();
    let rows: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).map(|j| p.eval(x.row(i), x.row(j))).collect())
        .collect();
    let mut k = Array2::zeros((n, n));
    for (i, row) in rows.into_iter().enumerate() {
        k.row_mut(i).assign(&ArrayView1::from(&row[..]));
    }
    // enforce exact symmetry
    for i in 0..n {
        for j in 0..i {
            k[(i, j)] = k[(j, i)];
        }
    }
    k
}

/// Dataset labels map to SVM targets as 0 (benign) → −1, 1 (malignant) → +1.
pub fn signed_label(label: Label) -> i8 {
    if label == 1 {
        1
    } else {
        -1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    /// Stopping tolerance on the maximal KKT violation.
    pub tol: f64,
    /// Iteration cap; `None` means `max(10⁷, 100·n)`.
    pub max_iter: Option<usize>,
    /// Keep the dual objective after every iteration.
    pub record_trace: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            tol: 1e-3,
            max_iter: None,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingInfo {
    pub iterations: usize,
    /// Maximal KKT violation `m(α) − M(α)` when the solver stopped.
    pub kkt_violation: f64,
    pub converged: bool,
    pub n_train: usize,
    /// Dual objective `Σα − ½αᵀQα` at the solution.
    pub dual_objective: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dual_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel<T> {
    pub support_vectors: Array2<T>,
    /// `α_i y_i` for each support vector.
    pub dual_coef: Vec<T>,
    pub bias: T,
    pub kernel: KernelParams<T>,
    pub info: TrainingInfo,
}

/// Trains on rows of `x` with targets in `{−1, +1}`.
pub fn train<T: Scalar>(
    x: ArrayView2<T>,
    y: &[i8],
    params: &KernelParams<T>,
    opts: &TrainOptions,
) -> Result<SvmModel<T>> {
    params.validate()?;
    let n = x.nrows();
    if y.len() != n {
        return Err(Error::validation(format!("{n} samples but {} targets", y.len())));
    }
    if n < 2 {
        return Err(Error::validation("SVM training needs at least 2 samples"));
    }
    if let Some(bad) = y.iter().find(|&&t| t != 1 && t != -1) {
        return Err(Error::validation(format!("SVM target {bad} is not -1 or +1")));
    }
    if !(y.contains(&1) && y.contains(&-1)) {
        return Err(Error::validation("SVM training needs both classes"));
    }

    let k = gram_matrix(x, params);
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            iteration: 0,
            message: "kernel matrix contains non-finite values".into(),
        });
    }

    let c = params.c;
    let tau = T::of(TAU);
    let yt: Vec<T> = y.iter().map(|&v| T::of(v as f64)).collect();
    let mut alpha = vec![T::zero(); n];
    let mut grad = vec![-T::one(); n];
    let max_iter = opts.max_iter.unwrap_or_else(|| (100 * n).max(10_000_000));
    let tol = T::of(opts.tol);
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut violation;
    let mut converged = false;

    let is_up = |a: T, yi: i8| (yi == 1 && a < c) || (yi == -1 && a > T::zero());
    let is_low = |a: T, yi: i8| (yi == 1 && a > T::zero()) || (yi == -1 && a < c);

    loop {
        // maximal violating pair
        let mut i = usize::MAX;
        let mut g_max = T::neg_infinity();
        let mut j = usize::MAX;
        let mut g_min = T::infinity();
        for t in 0..n {
            let v = -yt[t] * grad[t];
            if is_up(alpha[t], y[t]) && v > g_max {
                g_max = v;
                i = t;
            }
            if is_low(alpha[t], y[t]) && v < g_min {
                g_min = v;
                j = t;
            }
        }
        violation = if i == usize::MAX || j == usize::MAX {
            T::zero()
        } else {
            g_max - g_min
        };
        if violation < tol {
            converged = true;
            break;
        }
        if iterations >= max_iter {
            log::warn!("SMO stopped at the iteration cap ({max_iter}) with violation {violation}");
            break;
        }
        iterations += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let mut quad = k[(i, i)] + k[(j, j)] - T::of(2.0) * k[(i, j)];
        if quad <= T::zero() {
            quad = tau;
        }
        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > T::zero() {
                if alpha[j] < T::zero() {
                    alpha[j] = T::zero();
                    alpha[i] = diff;
                }
            } else if alpha[i] < T::zero() {
                alpha[i] = T::zero();
                alpha[j] = -diff;
            }
            if diff > T::zero() {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < T::zero() {
                alpha[j] = T::zero();
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < T::zero() {
                alpha[i] = T::zero();
                alpha[j] = sum;
            }
        }

        let d_i = alpha[i] - old_i;
        let d_j = alpha[j] - old_j;
        for t in 0..n {
            // Q_ti = y_t y_i K_ti
            grad[t] += yt[t] * (yt[i] * k[(t, i)] * d_i + yt[j] * k[(t, j)] * d_j);
        }
        if opts.record_trace {
            trace.push(dual_objective(&alpha, &grad));
        }
    }

    // bias from free vectors, or the midpoint of the feasible interval
    let mut ub = T::infinity();
    let mut lb = T::neg_infinity();
    let mut free_sum = T::zero();
    let mut free = 0usize;
    for t in 0..n {
        let yg = yt[t] * grad[t];
        if alpha[t] >= c {
            if y[t] == -1 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= T::zero() {
            if y[t] == 1 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            free_sum += yg;
        }
    }
    let rho = if free > 0 {
        free_sum / T::of(free as f64)
    } else {
        (ub + lb) / T::of(2.0)
    };

    let sv: Vec<usize> = (0..n).filter(|&t| alpha[t] > T::zero()).collect();
    let support_vectors = x.select(Axis(0), &sv);
    let dual_coef = sv.iter().map(|&t| alpha[t] * yt[t]).collect();

    Ok(SvmModel {
        support_vectors,
        dual_coef,
        bias: -rho,
        kernel: *params,
        info: TrainingInfo {
            iterations,
            kkt_violation: violation.to_f64_lossy(),
            converged,
            n_train: n,
            dual_objective: dual_objective(&alpha, &grad),
            dual_trace: trace,
        },
    })
}

/// `Σα − ½αᵀQα`, using `Qα = G + 1`.
fn dual_objective<T: Scalar>(alpha: &[T], grad: &[T]) -> f64 {
    let half_neg: T = alpha.iter().zip(grad).map(|(&a, &g)| a * (g - T::one())).sum();
    -(half_neg / T::of(2.0)).to_f64_lossy()
}

impl<T: Scalar> SvmModel<T> {
    pub fn dim(&self) -> usize {
        self.support_vectors.ncols()
    }

    pub fn decision_value(&self, x: ArrayView1<T>) -> T {
        self.support_vectors
            .outer_iter()
            .zip(&self.dual_coef)
            .map(|(sv, &coef)| coef * self.kernel.eval(sv, x))
            .sum::<T>()
            + self.bias
    }

    /// Labels in `{−1, +1}` (a zero decision value maps to +1) and the raw
    /// decision values.
    pub fn predict(&self, x: ArrayView2<T>) -> Result<(Vec<i8>, Vec<T>)> {
        if x.nrows() > 0 && x.ncols() != self.dim() {
            return Err(Error::validation(format!(
                "model expects {} features, got {}",
                self.dim(),
                x.ncols()
            )));
        }
        let values: Vec<T> = x
            .outer_iter()
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|row| self.decision_value(row))
            .collect();
        let labels = values.iter().map(|&f| if f >= T::zero() { 1 } else { -1 }).collect();
        Ok((labels, values))
    }

    /// Checks `0 < α ≤ C` for stored vectors and `Σ α_i y_i = 0`.
    pub fn check_invariants(&self, eq_tol: f64) -> Result<()> {
        let c = self.kernel.c.to_f64_lossy();
        for (i, coef) in self.dual_coef.iter().enumerate() {
            let a = coef.abs().to_f64_lossy();
            if !(a > 0.0 && a <= c * (1.0 + 1e-12)) {
                return Err(Error::validation(format!(
                    "support vector {i} has alpha {a} outside (0, {c}]"
                )));
            }
        }
        let sum: f64 = self.dual_coef.iter().map(|c| c.to_f64_lossy()).sum();
        if sum.abs() > eq_tol {
            return Err(Error::validation(format!("Σ α_i y_i = {sum}, expected 0")));
        }
        Ok(())
    }
}

pub const MODEL_MAGIC: &[u8; 4] = b"PHSV";
pub const MODEL_VERSION: u16 = 1;

impl<T: Scalar> SvmModel<T> {
    /// Binary layout: magic "PHSV", version u16, degree u32, scale f64,
    /// offset f64, C f64, bias f64, n_sv u32, dim u32, n_sv × f64
    /// coefficients, n_sv × dim × f64 support vectors (row-major).
    pub fn to_bytes(&self) -> Vec<u8> {
        let (n, d) = self.support_vectors.dim();
        let mut out = Vec::with_capacity(48 + 8 * n * (d + 1));
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&self.kernel.degree.to_le_bytes());
        for v in [self.kernel.scale, self.kernel.offset, self.kernel.c, self.bias] {
            out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
        }
        out.extend_from_slice(&(n as u32).to_le_bytes());
        out.extend_from_slice(&(d as u32).to_le_bytes());
        for v in self.dual_coef.iter().chain(self.support_vectors.iter()) {
            out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], info: TrainingInfo) -> Result<Self> {
        let mut r = Reader::new(bytes, "SVM model");
        if r.take(4)? != MODEL_MAGIC {
            return Err(Error::format("SVM model: bad magic, expected PHSV"));
        }
        let version = r.u16()?;
        if version != MODEL_VERSION {
            return Err(Error::format(format!("SVM model: unsupported version {version}")));
        }
        let degree = r.u32()?;
        let scale = T::of(r.f64()?);
        let offset = T::of(r.f64()?);
        let c = T::of(r.f64()?);
        let bias = T::of(r.f64()?);
        let n = r.u32()? as usize;
        let d = r.u32()? as usize;
        let dual_coef = (0..n).map(|_| r.f64().map(T::of)).collect::<Result<Vec<_>>>()?;
        let sv = (0..n * d).map(|_| r.f64().map(T::of)).collect::<Result<Vec<_>>>()?;
        let kernel = KernelParams {
            degree,
            scale,
            offset,
            c,
        };
        kernel.validate()?;
        Ok(SvmModel {
            support_vectors: Array2::from_shape_vec((n, d), sv)
                .map_err(|e| Error::format(format!("SVM model: {e}")))?,
            dual_coef,
            bias,
            kernel,
            info,
        })
    }

    /// Writes the binary model to `path` and its metadata to `path` with a
    /// `.json` extension.
    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, &self.to_bytes())?;
        let meta = serde_json::to_vec_pretty(&self.info).expect("training info serializes");
        fsutil::write_atomic(&path.with_extension("json"), &meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let meta_path = path.with_extension("json");
        let info: TrainingInfo = serde_json::from_slice(&fsutil::read(&meta_path)?)
            .map_err(|e| Error::format(format!("{}: {e}", meta_path.display())))?;
        Self::from_bytes(&fsutil::read(path)?, info)
    }
}
