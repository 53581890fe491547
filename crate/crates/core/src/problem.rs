//! L2-regularized empirical risk problems: ridge and logistic regression.
//!
//! Every per-point objective has the generalized-linear form
//!
//! ```text
//! f_i(w) = loss(<x_i, w>, y_i) + mu/2 ||w||^2
//! f'_i(w) = s_i(w) x_i + mu w
//! ```
//!
//! where `s_i` is the scalar derivative of the loss part. For ridge
//! `s_i = <x_i, w> - y_i`; for logistic `s_i = -y_i / (1 + exp(y_i <x_i, w>))`.
//! Keeping the sign inside `s_i` makes the decomposition uniform across losses.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::vecops::{axpy, dot, norm, norm_sq};

/// Default gradient-norm tolerance for the ridge reference optimum.
pub const RIDGE_REFERENCE_TOL: f64 = 1e-10;
/// Default gradient-norm tolerance for the logistic reference optimum.
pub const LOGISTIC_REFERENCE_TOL: f64 = 1e-9;

const NEWTON_MAX_ITERS: usize = 500;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("index {index} out of range for n = {n}")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid problem instance: {0}")]
    Invalid(String),
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: label {label} is not +1/-1 for a logistic problem")]
    BadLabel { line: usize, label: f64 },
    #[error("empty data file")]
    Empty,
    #[error("reference optimum did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    NonConvergence { iterations: usize, grad_norm: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ProblemError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LossKind {
    Ridge,
    Logistic,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossKind::Ridge => write!(f, "ridge"),
            LossKind::Logistic => write!(f, "logistic"),
        }
    }
}

impl FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ridge" | "least_squares" => Ok(LossKind::Ridge),
            "logistic" => Ok(LossKind::Logistic),
            other => Err(format!(
                "unknown loss kind `{other}` (expected ridge or logistic)"
            )),
        }
    }
}

/// A dense dataset together with its loss and regularization strength.
///
/// `mu = 0` is accepted so plain losses can be evaluated, but every rate
/// formula and optimizer run requires `mu > 0` (see [`ProblemInstance::require_strongly_convex`]).
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    features: Vec<f64>,
    labels: Vec<f64>,
    n: usize,
    d: usize,
    loss: LossKind,
    mu: f64,
}

impl ProblemInstance {
    /// Builds an instance from row-major features of width `d`.
    pub fn new(
        features: Vec<f64>,
        d: usize,
        labels: Vec<f64>,
        loss: LossKind,
        mu: f64,
    ) -> Result<Self> {
        if d == 0 {
            return Err(ProblemError::Invalid("d must be at least 1".into()));
        }
        if labels.is_empty() {
            return Err(ProblemError::Invalid("n must be at least 1".into()));
        }
        if features.len() != labels.len() * d {
            return Err(ProblemError::DimensionMismatch {
                expected: labels.len() * d,
                got: features.len(),
            });
        }
        if !(mu >= 0.0 && mu.is_finite()) {
            return Err(ProblemError::Invalid(format!(
                "mu must be finite and nonnegative, got {mu}"
            )));
        }
        if features.iter().chain(&labels).any(|v| !v.is_finite()) {
            return Err(ProblemError::Invalid("non-finite feature or label".into()));
        }
        if loss == LossKind::Logistic {
            if let Some(bad) = labels.iter().find(|&&y| y != 1.0 && y != -1.0) {
                return Err(ProblemError::Invalid(format!(
                    "logistic labels must be +1/-1, found {bad}"
                )));
            }
        }
        let n = labels.len();
        Ok(Self {
            features,
            labels,
            n,
            d,
            loss,
            mu,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<f64>, loss: LossKind, mu: f64) -> Result<Self> {
        let d = rows.first().map(|r| r.len()).unwrap_or(0);
        if let Some(r) = rows.iter().find(|r| r.len() != d) {
            return Err(ProblemError::DimensionMismatch {
                expected: d,
                got: r.len(),
            });
        }
        if rows.len() != labels.len() {
            return Err(ProblemError::DimensionMismatch {
                expected: rows.len(),
                got: labels.len(),
            });
        }
        Self::new(rows.concat(), d, labels, loss, mu)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn loss(&self) -> LossKind {
        self.loss
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    #[inline]
    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.d)
    }

    pub fn with_mu(&self, mu: f64) -> Result<Self> {
        Self::new(
            self.features.clone(),
            self.d,
            self.labels.clone(),
            self.loss,
            mu,
        )
    }

    pub fn require_strongly_convex(&self) -> Result<()> {
        if self.mu > 0.0 {
            Ok(())
        } else {
            Err(ProblemError::Invalid(
                "mu must be positive for strong convexity".into(),
            ))
        }
    }

    /// Keeps the rows in `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut features = Vec::with_capacity(indices.len() * self.d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.n {
                return Err(ProblemError::IndexOutOfRange {
                    index: i,
                    n: self.n,
                });
            }
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self::new(features, self.d, labels, self.loss, self.mu)
    }

    /// Uniform subsample of `m` rows without replacement, sorted by original index.
    pub fn subsample(&self, m: usize, seed: u64) -> Result<Self> {
        if m >= self.n {
            return Ok(self.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx: Vec<usize> = (0..self.n).collect();
        idx.shuffle(&mut rng);
        idx.truncate(m);
        idx.sort_unstable();
        self.select(&idx)
    }

    /// Shifts and scales regression targets to zero mean and unit variance.
    pub fn standardize_targets(&mut self) {
        let n = self.n as f64;
        let mean = self.labels.iter().sum::<f64>() / n;
        let var = self
            .labels
            .iter()
            .map(|y| (y - mean) * (y - mean))
            .sum::<f64>()
            / n;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        for y in &mut self.labels {
            *y = (*y - mean) / sd;
        }
    }

    /// Content hash over shape, loss, mu and every stored value.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n as u64).to_le_bytes());
        h.update((self.d as u64).to_le_bytes());
        h.update([self.loss as u8]);
        h.update(self.mu.to_bits().to_le_bytes());
        for v in self.features.iter().chain(&self.labels) {
            h.update(v.to_bits().to_le_bytes());
        }
        let digest = h.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Uniform gradient-Lipschitz bound over all `f_i`.
///
/// ridge: `max_i ||x_i||^2 + mu`; logistic: `max_i ||x_i||^2 / 4 + mu`.
pub fn lipschitz_constant(instance: &ProblemInstance) -> f64 {
    let max_sq = instance.rows().map(norm_sq).fold(0.0, f64::max);
    match instance.loss {
        LossKind::Ridge => max_sq + instance.mu,
        LossKind::Logistic => 0.25 * max_sq + instance.mu,
    }
}

#[inline]
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// A problem instance paired with its smoothness constant.
#[derive(Debug, Clone)]
pub struct LossModel {
    instance: Arc<ProblemInstance>,
    lipschitz: f64,
}

impl LossModel {
    pub fn new(instance: ProblemInstance) -> Self {
        Self::from_arc(Arc::new(instance))
    }

    pub fn from_arc(instance: Arc<ProblemInstance>) -> Self {
        let lipschitz = lipschitz_constant(&instance);
        Self {
            instance,
            lipschitz,
        }
    }

    pub fn instance(&self) -> &ProblemInstance {
        &self.instance
    }

    pub fn shared_instance(&self) -> Arc<ProblemInstance> {
        Arc::clone(&self.instance)
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn mu(&self) -> f64 {
        self.instance.mu
    }

    pub fn n(&self) -> usize {
        self.instance.n
    }

    pub fn dim(&self) -> usize {
        self.instance.d
    }

    fn check(&self, i: usize, w: &[f64]) -> Result<()> {
        if i >= self.instance.n {
            return Err(ProblemError::IndexOutOfRange {
                index: i,
                n: self.instance.n,
            });
        }
        self.check_dim(w)
    }

    fn check_dim(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.instance.d {
            return Err(ProblemError::DimensionMismatch {
                expected: self.instance.d,
                got: w.len(),
            });
        }
        Ok(())
    }

    /// Loss-part derivative `s` given the margin `<x_i, w>`.
    #[inline]
    pub fn scalar_from_margin(&self, i: usize, margin: f64) -> f64 {
        let y = self.instance.labels[i];
        match self.instance.loss {
            LossKind::Ridge => margin - y,
            LossKind::Logistic => -y * sigmoid(-y * margin),
        }
    }

    /// Loss-part derivative `s_i(w)`; no bounds checks beyond debug assertions.
    #[inline]
    pub fn xi_prime(&self, i: usize, w: &[f64]) -> f64 {
        self.scalar_from_margin(i, dot(self.instance.row(i), w))
    }

    /// Writes `f'_i(w)` into `out` and returns the loss-part scalar.
    #[inline]
    pub fn point_gradient_into(&self, i: usize, w: &[f64], out: &mut [f64]) -> f64 {
        let s = self.xi_prime(i, w);
        let mu = self.instance.mu;
        for (o, wi) in out.iter_mut().zip(w) {
            *o = mu * wi;
        }
        axpy(s, self.instance.row(i), out);
        s
    }

    /// `f'_i(w)` and the scalar `s` with `f'_i(w) = s x_i + mu w`.
    pub fn point_gradient(&self, i: usize, w: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check(i, w)?;
        let mut g = vec![0.0; self.instance.d];
        let s = self.point_gradient_into(i, w, &mut g);
        Ok((g, s))
    }

    /// Loss part of `f_i(w)` (no regularizer).
    #[inline]
    pub fn loss_value(&self, i: usize, w: &[f64]) -> f64 {
        let m = dot(self.instance.row(i), w);
        let y = self.instance.labels[i];
        match self.instance.loss {
            LossKind::Ridge => 0.5 * (m - y) * (m - y),
            LossKind::Logistic => softplus(-y * m),
        }
    }

    pub fn point_value(&self, i: usize, w: &[f64]) -> Result<f64> {
        self.check(i, w)?;
        Ok(self.loss_value(i, w) + 0.5 * self.instance.mu * norm_sq(w))
    }

    /// `f(w)` only; one pass over the data.
    pub fn objective(&self, w: &[f64]) -> Result<f64> {
        self.check_dim(w)?;
        let n = self.instance.n;
        let loss: f64 = (0..n).map(|i| self.loss_value(i, w)).sum::<f64>() / n as f64;
        Ok(loss + 0.5 * self.instance.mu * norm_sq(w))
    }

    /// `f(w)` and `f'(w)`, the gradient summed over ascending `i`.
    pub fn full_objective_and_gradient(&self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_dim(w)?;
        let n = self.instance.n;
        let d = self.instance.d;
        let mut grad = vec![0.0; d];
        let mut gi = vec![0.0; d];
        let mut value = 0.0;
        for i in 0..n {
            value += self.loss_value(i, w) + 0.5 * self.instance.mu * norm_sq(w);
            self.point_gradient_into(i, w, &mut gi);
            axpy(1.0, &gi, &mut grad);
        }
        let inv = 1.0 / n as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        Ok((value * inv, grad))
    }

    pub fn full_gradient(&self, w: &[f64]) -> Result<Vec<f64>> {
        Ok(self.full_objective_and_gradient(w)?.1)
    }
}

/// Approximate minimizer of `f` used to report suboptimality.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceOptimum {
    pub w_star: Vec<f64>,
    pub f_star: f64,
    pub grad_norm: f64,
    pub fingerprint: String,
}

pub fn default_reference_tol(loss: LossKind) -> f64 {
    match loss {
        LossKind::Ridge => RIDGE_REFERENCE_TOL,
        LossKind::Logistic => LOGISTIC_REFERENCE_TOL,
    }
}

/// Computes `w*` to gradient norm `tol`.
///
/// Ridge solves the normal equations with a few rounds of iterative
/// refinement. Logistic runs damped Newton with backtracking.
pub fn reference_optimum(model: &LossModel, tol: f64) -> Result<ReferenceOptimum> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(ProblemError::Invalid(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let (w_star, iterations) = match model.instance.loss {
        LossKind::Ridge => ridge_solve(model, tol)?,
        LossKind::Logistic => logistic_newton(model, tol)?,
    };
    let (f_star, g) = model.full_objective_and_gradient(&w_star)?;
    let grad_norm = norm(&g);
    if grad_norm.is_nan() || grad_norm > tol {
        return Err(ProblemError::NonConvergence {
            iterations,
            grad_norm,
        });
    }
    Ok(ReferenceOptimum {
        w_star,
        f_star,
        grad_norm,
        fingerprint: model.instance.fingerprint(),
    })
}

fn hessian_ridge(inst: &ProblemInstance) -> DMatrix<f64> {
    let (n, d) = (inst.n, inst.d);
    let x = DMatrix::from_row_slice(n, d, &inst.features);
    let mut a = x.transpose() * &x / n as f64;
    for k in 0..d {
        a[(k, k)] += inst.mu;
    }
    a
}

fn solve_spd(a: &DMatrix<f64>, b: DVector<f64>) -> Option<DVector<f64>> {
    match a.clone().cholesky() {
        Some(ch) => Some(ch.solve(&b)),
        None => a.clone().lu().solve(&b),
    }
}

fn ridge_solve(model: &LossModel, tol: f64) -> Result<(Vec<f64>, usize)> {
    let inst = &model.instance;
    let a = hessian_ridge(inst);
    let mut w = vec![0.0; inst.d];
    for round in 0..6 {
        let g = model.full_gradient(&w)?;
        if norm(&g) <= tol {
            return Ok((w, round));
        }
        let step = solve_spd(&a, DVector::from_vec(g)).ok_or_else(|| {
            ProblemError::Invalid("singular normal equations (mu = 0 with rank-deficient X)".into())
        })?;
        axpy(-1.0, step.as_slice(), &mut w);
    }
    Ok((w, 6))
}

fn logistic_newton(model: &LossModel, tol: f64) -> Result<(Vec<f64>, usize)> {
    let inst = &model.instance;
    let (n, d) = (inst.n, inst.d);
    let mut w = vec![0.0; d];
    let (mut f, mut g) = model.full_objective_and_gradient(&w)?;
    for it in 0..NEWTON_MAX_ITERS {
        if norm(&g) <= tol {
            return Ok((w, it));
        }
        let mut h = DMatrix::<f64>::zeros(d, d);
        for i in 0..n {
            let x = inst.row(i);
            let p = sigmoid(inst.labels[i] * dot(x, &w));
            let c = p * (1.0 - p) / n as f64;
            for a in 0..d {
                let cxa = c * x[a];
                for b in 0..d {
                    h[(a, b)] += cxa * x[b];
                }
            }
        }
        for k in 0..d {
            h[(k, k)] += inst.mu;
        }
        let dir = solve_spd(&h, DVector::from_column_slice(&g)).ok_or_else(|| {
            ProblemError::Invalid("singular Hessian in logistic reference solve".into())
        })?;
        let slope = -dot(dir.as_slice(), &g);
        let mut t = 1.0;
        loop {
            let mut trial = w.clone();
            axpy(-t, dir.as_slice(), &mut trial);
            let ft = model.objective(&trial)?;
            // near w* the decrease is below the objective's rounding; take the full step
            let flat = t == 1.0 && (ft - f).abs() <= 1e-14 * f.abs().max(1.0);
            if ft <= f + 1e-4 * t * slope || flat || t < 1e-12 {
                w = trial;
                break;
            }
            t *= 0.5;
        }
        let next = model.full_objective_and_gradient(&w)?;
        f = next.0;
        g = next.1;
    }
    Err(ProblemError::NonConvergence {
        iterations: NEWTON_MAX_ITERS,
        grad_norm: norm(&g),
    })
}

/// Draws `n` i.i.d. standard normal rows and labels from a planted model.
///
/// Planted weights are `N(0, 1/d)` so margins are roughly unit scale. Ridge
/// labels are `<x, w> + noise * g`; logistic labels are the sign of the
/// noisy margin, with zero mapped to `+1`.
pub fn synthesize_problem(
    n: usize,
    d: usize,
    loss: LossKind,
    mu: f64,
    seed: u64,
    noise: f64,
) -> Result<(ProblemInstance, Vec<f64>)> {
    if n == 0 || d == 0 {
        return Err(ProblemError::Invalid("n and d must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (d as f64).sqrt();
    let planted: Vec<f64> = (0..d)
        .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut rng))
        .collect::<Vec<f64>>();
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let start = features.len();
        features.extend((0..d).map(|_| -> f64 { StandardNormal.sample(&mut rng) }));
        let m = dot(&features[start..], &planted);
        let eps: f64 = StandardNormal.sample(&mut rng);
        let noisy = m + noise * eps;
        labels.push(match loss {
            LossKind::Ridge => noisy,
            LossKind::Logistic => {
                if noisy >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
        });
    }
    Ok((
        ProblemInstance::new(features, d, labels, loss, mu)?,
        planted,
    ))
}

/// Synthetic data with neighborhood structure: `n` points scattered around
/// `clusters` standard-normal centers with isotropic spread `spread`, then
/// scaled by `row_scale`. Labels follow the same planted-model rule as
/// [`synthesize_problem`].
#[allow(clippy::too_many_arguments)]
pub fn synthesize_clustered(
    n: usize,
    d: usize,
    clusters: usize,
    spread: f64,
    row_scale: f64,
    loss: LossKind,
    mu: f64,
    seed: u64,
    noise: f64,
) -> Result<(ProblemInstance, Vec<f64>)> {
    if n == 0 || d == 0 || clusters == 0 {
        return Err(ProblemError::Invalid(
            "n, d and clusters must be at least 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let planted: Vec<f64> = (0..d)
        .map(|_| -> f64 { StandardNormal.sample(&mut rng) })
        .map(|v: f64| v / (d as f64).sqrt())
        .collect();
    let centers: Vec<Vec<f64>> = (0..clusters)
        .map(|_| {
            (0..d)
                .map(|_| -> f64 { StandardNormal.sample(&mut rng) })
                .collect()
        })
        .collect();
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for k in 0..n {
        let c = &centers[k % clusters];
        let start = features.len();
        features.extend(c.iter().map(|ci| {
            let z: f64 = StandardNormal.sample(&mut rng);
            row_scale * (ci + spread * z)
        }));
        let m = dot(&features[start..], &planted) / row_scale;
        let eps: f64 = StandardNormal.sample(&mut rng);
        let noisy = m + noise * eps;
        labels.push(match loss {
            LossKind::Ridge => noisy,
            LossKind::Logistic => {
                if noisy >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
        });
    }
    Ok((
        ProblemInstance::new(features, d, labels, loss, mu)?,
        planted,
    ))
}

/// Relabeling applied to raw libsvm labels, e.g. `{1 -> +1, 2 -> -1}` for cov.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabelMap(pub Vec<(f64, f64)>);

impl LabelMap {
    /// `positive -> +1`, every other label `-> -1`.
    pub fn binary(positive: f64) -> Self {
        LabelMap(vec![(positive, 1.0), (f64::NAN, -1.0)])
    }

    pub fn apply(&self, label: f64) -> Option<f64> {
        for &(from, to) in &self.0 {
            if from == label || from.is_nan() {
                return Some(to);
            }
        }
        None
    }
}

impl fmt::Display for LabelMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, &(from, to)) in self.0.iter().enumerate() {
            if k > 0 {
                f.write_str(",")?;
            }
            if from.is_nan() {
                write!(f, "*:{to}")?;
            } else {
                write!(f, "{from}:{to}")?;
            }
        }
        Ok(())
    }
}

impl FromStr for LabelMap {
    type Err = String;

    /// `"1:1,2:-1"` maps 1 to +1 and 2 to -1; `"*"` as source matches anything.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let mut pairs = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (from, to) = part
                .split_once(':')
                .ok_or_else(|| format!("label map entry `{part}` is not `from:to`"))?;
            let from = if from.trim() == "*" {
                f64::NAN
            } else {
                from.trim()
                    .parse::<f64>()
                    .map_err(|e| format!("bad label `{from}`: {e}"))?
            };
            let to = to
                .trim()
                .parse::<f64>()
                .map_err(|e| format!("bad label `{to}`: {e}"))?;
            pairs.push((from, to));
        }
        if pairs.is_empty() {
            return Err("empty label map".into());
        }
        Ok(LabelMap(pairs))
    }
}

#[derive(Debug, Clone)]
pub struct LibsvmOptions {
    pub expected_dim: Option<usize>,
    pub label_map: Option<LabelMap>,
    pub loss: LossKind,
    pub mu: f64,
}

impl LibsvmOptions {
    pub fn new(loss: LossKind, mu: f64) -> Self {
        Self {
            expected_dim: None,
            label_map: None,
            loss,
            mu,
        }
    }
}

pub fn load_libsvm(path: impl AsRef<Path>, opts: &LibsvmOptions) -> Result<ProblemInstance> {
    let file = File::open(path.as_ref())?;
    parse_libsvm(BufReader::new(file), opts)
}

/// Parses `<label> <idx>:<val> ...` lines (1-based indices, `#` comments)
/// into a dense instance.
pub fn parse_libsvm<R: BufRead>(reader: R, opts: &LibsvmOptions) -> Result<ProblemInstance> {
    let mut sparse_rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut labels = Vec::new();
    let mut max_index = 0usize;

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let raw_label = tokens.next().unwrap_or_default();
        let raw: f64 = raw_label.parse().map_err(|_| ProblemError::Malformed {
            line: lineno,
            msg: format!("cannot parse label `{raw_label}`"),
        })?;
        let label = match &opts.label_map {
            Some(map) => map.apply(raw).ok_or_else(|| ProblemError::Malformed {
                line: lineno,
                msg: format!("label {raw} not covered by the label map"),
            })?,
            None => raw,
        };
        if opts.loss == LossKind::Logistic && label != 1.0 && label != -1.0 {
            return Err(ProblemError::BadLabel {
                line: lineno,
                label,
            });
        }
        let mut row = Vec::new();
        for tok in tokens {
            let (idx, val) = tok.split_once(':').ok_or_else(|| ProblemError::Malformed {
                line: lineno,
                msg: format!("token `{tok}` is not index:value"),
            })?;
            let idx: usize = idx.parse().map_err(|_| ProblemError::Malformed {
                line: lineno,
                msg: format!("bad index `{idx}`"),
            })?;
            if idx == 0 {
                return Err(ProblemError::Malformed {
                    line: lineno,
                    msg: "indices are 1-based".into(),
                });
            }
            let val: f64 = val.parse().map_err(|_| ProblemError::Malformed {
                line: lineno,
                msg: format!("bad value `{val}`"),
            })?;
            if let Some(dim) = opts.expected_dim {
                if idx > dim {
                    return Err(ProblemError::Malformed {
                        line: lineno,
                        msg: format!("index {idx} exceeds expected dimension {dim}"),
                    });
                }
            }
            max_index = max_index.max(idx);
            row.push((idx - 1, val));
        }
        sparse_rows.push(row);
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(ProblemError::Empty);
    }
    let d = opts.expected_dim.unwrap_or(max_index).max(1);
    let mut features = vec![0.0; labels.len() * d];
    for (r, row) in sparse_rows.iter().enumerate() {
        for &(k, v) in row {
            features[r * d + k] = v;
        }
    }
    ProblemInstance::new(features, d, labels, opts.loss, opts.mu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx_eq::close;
    use rand::Rng;

    mod approx_eq {
        pub fn close(a: f64, b: f64, tol: f64) -> bool {
            (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
        }
    }

    fn model(rows: &[Vec<f64>], y: Vec<f64>, loss: LossKind, mu: f64) -> LossModel {
        LossModel::new(ProblemInstance::from_rows(rows, y, loss, mu).unwrap())
    }

    fn fd_gradient(m: &LossModel, i: usize, w: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        (0..w.len())
            .map(|k| {
                let mut p = w.to_vec();
                let mut q = w.to_vec();
                p[k] += h;
                q[k] -= h;
                (m.point_value(i, &p).unwrap() - m.point_value(i, &q).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn ridge_point_gradient_examples() {
        let m = model(&[vec![1.0, 0.0]], vec![1.0], LossKind::Ridge, 0.1);
        let (g, s) = m.point_gradient(0, &[0.0, 0.0]).unwrap();
        assert_eq!(g, vec![-1.0, 0.0]);
        assert_eq!(s, -1.0);
        let (g, s) = m.point_gradient(0, &[1.0, 0.0]).unwrap();
        assert!((g[0] - 0.1).abs() < 1e-15 && g[1] == 0.0);
        assert_eq!(s, 0.0);
    }

    #[test]
    fn logistic_point_gradient_example() {
        // -y / (1 + e^0) = -0.5, times x = (2, 0)
        let m = model(&[vec![2.0, 0.0]], vec![1.0], LossKind::Logistic, 0.0);
        let (g, s) = m.point_gradient(0, &[0.0, 0.0]).unwrap();
        assert_eq!(s, -0.5);
        assert_eq!(g, vec![-1.0, 0.0]);
    }

    #[test]
    fn point_gradient_errors() {
        let m = model(&[vec![1.0, 0.0]], vec![1.0], LossKind::Ridge, 0.1);
        assert!(matches!(
            m.point_gradient(1, &[0.0, 0.0]),
            Err(ProblemError::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            m.point_gradient(0, &[0.0]),
            Err(ProblemError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            m.full_objective_and_gradient(&[0.0; 3]),
            Err(ProblemError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn logistic_extreme_margins_stay_finite() {
        let m = model(&[vec![1.0]], vec![1.0], LossKind::Logistic, 0.1);
        for w in [-1e4, -40.0, 40.0, 1e4] {
            let (g, s) = m.point_gradient(0, &[w]).unwrap();
            assert!(g[0].is_finite() && s.is_finite());
            assert!(m.point_value(0, &[w]).unwrap().is_finite());
        }
        assert!((m.xi_prime(0, &[-1e4]) + 1.0).abs() < 1e-15);
        assert!(m.xi_prime(0, &[1e4]).abs() < 1e-300);
    }

    #[test]
    fn full_objective_examples() {
        let m = model(
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![0.0, 0.0],
            LossKind::Ridge,
            0.0,
        );
        let (f, g) = m.full_objective_and_gradient(&[1.0, 1.0]).unwrap();
        assert_eq!(f, 0.5);
        assert_eq!(g, vec![0.5, 0.5]);

        let single = model(&[vec![0.3, -1.2]], vec![1.0], LossKind::Logistic, 0.2);
        let w = [0.7, 0.4];
        let (f, g) = single.full_objective_and_gradient(&w).unwrap();
        assert_eq!(f, single.point_value(0, &w).unwrap());
        assert_eq!(g, single.point_gradient(0, &w).unwrap().0);
    }

    #[test]
    fn full_gradient_matches_finite_differences() {
        for loss in [LossKind::Ridge, LossKind::Logistic] {
            let (inst, _) = synthesize_problem(30, 5, loss, 0.05, 3, 0.3).unwrap();
            let m = LossModel::new(inst);
            let w = [0.3, -0.2, 0.9, 0.0, -1.1];
            let (_, g) = m.full_objective_and_gradient(&w).unwrap();
            for k in 0..5 {
                let h = 1e-6;
                let mut p = w.to_vec();
                let mut q = w.to_vec();
                p[k] += h;
                q[k] -= h;
                let fd = (m.objective(&p).unwrap() - m.objective(&q).unwrap()) / (2.0 * h);
                assert!(
                    (fd - g[k]).abs() <= 1e-5 * (1.0 + g[k].abs()),
                    "{loss} k={k}: {fd} vs {}",
                    g[k]
                );
            }
        }
    }

    #[test]
    fn point_gradients_match_finite_differences_and_glm_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for loss in [LossKind::Ridge, LossKind::Logistic] {
            let (inst, _) = synthesize_problem(20, 4, loss, 0.1, 5, 0.5).unwrap();
            let m = LossModel::new(inst);
            for _ in 0..50 {
                let i = rng.random_range(0..m.n());
                let w: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
                let (g, s) = m.point_gradient(i, &w).unwrap();
                let fd = fd_gradient(&m, i, &w);
                let err = norm(&crate::vecops::sub(&g, &fd));
                assert!(err / (1.0 + norm(&g)) <= 1e-5);
                for k in 0..4 {
                    let glm = s * m.instance().row(i)[k] + m.mu() * w[k];
                    assert!((glm - g[k]).abs() <= 1e-15 * (1.0 + g[k].abs()));
                }
            }
        }
    }

    #[test]
    fn lipschitz_examples() {
        let r = ProblemInstance::from_rows(
            &[vec![1.0, 0.0], vec![0.0, 2.0]],
            vec![0.0, 0.0],
            LossKind::Ridge,
            0.1,
        )
        .unwrap();
        assert!((lipschitz_constant(&r) - 4.1).abs() < 1e-15);
        let l = ProblemInstance::from_rows(&[vec![2.0, 0.0]], vec![1.0], LossKind::Logistic, 0.0)
            .unwrap();
        assert_eq!(lipschitz_constant(&l), 1.0);
        let z =
            ProblemInstance::from_rows(&[vec![0.0, 0.0]], vec![1.0], LossKind::Ridge, 0.5).unwrap();
        assert_eq!(lipschitz_constant(&z), 0.5);
    }

    #[test]
    fn gradient_lipschitz_and_strong_convexity_probes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for loss in [LossKind::Ridge, LossKind::Logistic] {
            let (inst, _) = synthesize_problem(15, 3, loss, 0.2, 9, 0.5).unwrap();
            let m = LossModel::new(inst);
            assert!(m.lipschitz() >= m.mu());
            for _ in 0..100 {
                let w: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
                let v: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
                let dw = crate::vecops::sub(&w, &v);
                let i = rng.random_range(0..m.n());
                let gi = m.point_gradient(i, &w).unwrap().0;
                let gv = m.point_gradient(i, &v).unwrap().0;
                assert!(
                    norm(&crate::vecops::sub(&gi, &gv))
                        <= m.lipschitz() * norm(&dw) * (1.0 + 1e-12)
                );
                let fw = m.full_gradient(&w).unwrap();
                let fv = m.full_gradient(&v).unwrap();
                let inner = dot(&crate::vecops::sub(&fw, &fv), &dw);
                assert!(inner >= m.mu() * norm_sq(&dw) * (1.0 - 1e-12));
            }
        }
    }

    #[test]
    fn smoothness_bound_against_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for loss in [LossKind::Ridge, LossKind::Logistic] {
            let (inst, _) = synthesize_problem(12, 3, loss, 0.1, 4, 0.5).unwrap();
            let m = LossModel::new(inst);
            let opt = reference_optimum(&m, 1e-12).unwrap();
            let ws = &opt.w_star;
            for _ in 0..50 {
                let w: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
                for i in 0..m.n() {
                    let gi = m.point_gradient(i, &w).unwrap().0;
                    let gs = m.point_gradient(i, ws).unwrap().0;
                    let h = m.point_value(i, &w).unwrap()
                        - m.point_value(i, ws).unwrap()
                        - dot(&crate::vecops::sub(&w, ws), &gs);
                    let lhs = norm_sq(&crate::vecops::sub(&gi, &gs));
                    assert!(lhs <= 2.0 * m.lipschitz() * h + 1e-12);
                }
            }
        }
    }

    #[test]
    fn synthesize_is_deterministic_and_fast() {
        let t = std::time::Instant::now();
        let a = synthesize_problem(1000, 20, LossKind::Logistic, 0.1, 42, 0.1).unwrap();
        let b = synthesize_problem(1000, 20, LossKind::Logistic, 0.1, 42, 0.1).unwrap();
        assert!(t.elapsed().as_secs_f64() < 1.0);
        assert_eq!(a, b);
        assert_eq!(a.0.fingerprint(), b.0.fingerprint());
        let c = synthesize_problem(1000, 20, LossKind::Logistic, 0.1, 43, 0.1).unwrap();
        assert_ne!(a.0.fingerprint(), c.0.fingerprint());
    }

    #[test]
    fn noiseless_ridge_recovers_planted_weights() {
        let (inst, planted) = synthesize_problem(200, 6, LossKind::Ridge, 0.0, 7, 0.0).unwrap();
        let m = LossModel::new(inst.clone());
        let opt = reference_optimum(&m, RIDGE_REFERENCE_TOL).unwrap();
        for (w, p) in opt.w_star.iter().zip(&planted) {
            assert!((w - p).abs() < 1e-6);
        }
        // least-squares oracle via QR of X, independent of the normal equations
        let x = DMatrix::from_row_slice(inst.n(), inst.dim(), &inst.features);
        let qr = x.qr();
        let qty = qr.q().transpose() * DVector::from_column_slice(inst.labels());
        let w_qr = qr.r().solve_upper_triangular(&qty).unwrap();
        for k in 0..6 {
            assert!((opt.w_star[k] - w_qr[k]).abs() < 1e-9);
        }
        assert!(opt.f_star.abs() < 1e-12);
    }

    #[test]
    fn reference_optimum_zero_targets_and_contract() {
        let (inst, _) = synthesize_problem(50, 4, LossKind::Ridge, 0.1, 1, 0.0).unwrap();
        let zero = ProblemInstance::new(
            inst.features.clone(),
            4,
            vec![0.0; 50],
            LossKind::Ridge,
            0.1,
        )
        .unwrap();
        let opt = reference_optimum(&LossModel::new(zero), RIDGE_REFERENCE_TOL).unwrap();
        assert!(opt.w_star.iter().all(|&v| v == 0.0));
        assert_eq!(opt.f_star, 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (seed, loss) in [
            (1, LossKind::Ridge),
            (2, LossKind::Logistic),
            (3, LossKind::Logistic),
        ] {
            let (inst, _) = synthesize_problem(300, 8, loss, 0.01, seed, 0.5).unwrap();
            let m = LossModel::new(inst);
            let tol = default_reference_tol(loss);
            let opt = reference_optimum(&m, tol).unwrap();
            assert!(opt.grad_norm <= tol);
            for _ in 0..20 {
                let w: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
                assert!(m.objective(&w).unwrap() >= opt.f_star);
            }
        }
    }

    #[test]
    fn reference_optimum_rejects_bad_tol() {
        let (inst, _) = synthesize_problem(5, 2, LossKind::Ridge, 0.1, 1, 0.0).unwrap();
        assert!(reference_optimum(&LossModel::new(inst), 0.0).is_err());
    }

    #[test]
    fn instance_invariants() {
        assert!(ProblemInstance::new(vec![1.0], 1, vec![0.5], LossKind::Logistic, 0.1).is_err());
        assert!(ProblemInstance::new(vec![1.0, 2.0], 1, vec![1.0], LossKind::Ridge, 0.1).is_err());
        assert!(ProblemInstance::new(vec![], 1, vec![], LossKind::Ridge, 0.1).is_err());
        assert!(ProblemInstance::new(vec![1.0], 1, vec![1.0], LossKind::Ridge, -1.0).is_err());
        let ok = ProblemInstance::new(vec![1.0], 1, vec![1.0], LossKind::Ridge, 0.0).unwrap();
        assert!(ok.require_strongly_convex().is_err());
    }

    #[test]
    fn libsvm_line_semantics() {
        let opts = LibsvmOptions {
            expected_dim: Some(3),
            ..LibsvmOptions::new(LossKind::Logistic, 0.1)
        };
        let inst = parse_libsvm("1 1:0.5 3:2.0\n".as_bytes(), &opts).unwrap();
        assert_eq!(inst.row(0), &[0.5, 0.0, 2.0]);
        assert_eq!(inst.label(0), 1.0);
    }

    #[test]
    fn libsvm_comments_dimension_and_label_map() {
        let text = "# header\n2 2:1.5\n1 1:-1 4:3 # trailing\n\n";
        let opts = LibsvmOptions {
            label_map: Some("1:1,2:-1".parse().unwrap()),
            ..LibsvmOptions::new(LossKind::Logistic, 0.1)
        };
        let inst = parse_libsvm(text.as_bytes(), &opts).unwrap();
        assert_eq!((inst.n(), inst.dim()), (2, 4));
        assert_eq!(inst.labels(), &[-1.0, 1.0]);
        assert_eq!(inst.row(1), &[-1.0, 0.0, 0.0, 3.0]);

        let bin = LabelMap::binary(3.0);
        assert_eq!(bin.apply(3.0), Some(1.0));
        assert_eq!(bin.apply(7.0), Some(-1.0));
    }

    #[test]
    fn libsvm_errors() {
        let logistic = LibsvmOptions::new(LossKind::Logistic, 0.1);
        let ridge = LibsvmOptions::new(LossKind::Ridge, 0.1);
        assert!(matches!(
            parse_libsvm("".as_bytes(), &ridge),
            Err(ProblemError::Empty)
        ));
        assert!(matches!(
            parse_libsvm("# only\n".as_bytes(), &ridge),
            Err(ProblemError::Empty)
        ));
        match parse_libsvm("1 1:2\n1 2-3\n".as_bytes(), &ridge) {
            Err(ProblemError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_libsvm("1 0:2\n".as_bytes(), &ridge),
            Err(ProblemError::Malformed { line: 1, .. })
        ));
        assert!(matches!(
            parse_libsvm("x 1:2\n".as_bytes(), &ridge),
            Err(ProblemError::Malformed { .. })
        ));
        assert!(matches!(
            parse_libsvm("1 1:2\n2 1:1\n".as_bytes(), &logistic),
            Err(ProblemError::BadLabel { line: 2, .. })
        ));
        let capped = LibsvmOptions {
            expected_dim: Some(2),
            ..ridge.clone()
        };
        assert!(matches!(
            parse_libsvm("1 3:1\n".as_bytes(), &capped),
            Err(ProblemError::Malformed { .. })
        ));
        assert!(load_libsvm("/nonexistent/file.svm", &ridge).is_err());
    }

    #[test]
    fn subsample_and_standardize() {
        let (inst, _) = synthesize_problem(100, 3, LossKind::Ridge, 0.1, 5, 1.0).unwrap();
        let a = inst.subsample(40, 9).unwrap();
        let b = inst.subsample(40, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n(), 40);
        let mut s = inst.clone();
        s.standardize_targets();
        let mean = s.labels().iter().sum::<f64>() / 100.0;
        let var = s.labels().iter().map(|y| y * y).sum::<f64>() / 100.0;
        assert!(close(mean, 0.0, 1e-12) && close(var, 1.0, 1e-12));
    }
}
