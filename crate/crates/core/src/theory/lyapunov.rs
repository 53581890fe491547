//! One-step expectations computed exactly by enumerating `(i, J)`.
//!
//! `H_i` bounds `||α_i - f'_i(w*)||²`. It starts at `||f'_i(w*)||²` and is
//! reset to `2L h_i(w)` whenever slot `i` is refreshed at `w`, where
//! `h_i(w) = f_i(w) - f_i(w*) - <w - w*, f'_i(w*)>`. The Lyapunov function is
//! `L_σ(w, H) = ||w - w*||² + Sσ H̄` with `S = γn/(Lq)`.

use num_rational::Ratio;

use super::{admissible_step, k_param, Result, TheoryError};
use crate::memengine::{
    apply_update, enumerate_outcomes, OptState, Sampler, SamplerKind, StorageMode, UpdateSet,
};
use crate::problem::{LossModel, ReferenceOptimum};
use crate::vecops::{dist_sq, dot, norm_sq, sub};

fn check_reference(model: &LossModel, reference: &ReferenceOptimum) -> Result<()> {
    if reference.w_star.len() != model.dim()
        || reference.fingerprint != model.instance().fingerprint()
    {
        return Err(TheoryError::MismatchedReference);
    }
    Ok(())
}

fn ratio_f64(p: Ratio<u64>) -> f64 {
    *p.numer() as f64 / *p.denom() as f64
}

fn h_unchecked(
    model: &LossModel,
    reference: &ReferenceOptimum,
    w: &[f64],
    i: usize,
) -> Result<f64> {
    let ws = &reference.w_star;
    let (g_star, _) = model.point_gradient(i, ws)?;
    let diff = sub(w, ws);
    Ok(model.point_value(i, w)? - model.point_value(i, ws)? - dot(&diff, &g_star))
}

/// `h_i(w)` for `Some(i)`, `f^δ(w) = f(w) - f(w*)` for `None`.
pub fn h_suboptimality(
    model: &LossModel,
    reference: &ReferenceOptimum,
    w: &[f64],
    i: Option<usize>,
) -> Result<f64> {
    check_reference(model, reference)?;
    match i {
        Some(i) => h_unchecked(model, reference, w, i),
        None => Ok(model.objective(w)? - reference.f_star),
    }
}

/// Per-slot bounds `H_i` together with the Lyapunov weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovState {
    pub h: Vec<f64>,
    pub h_mean: f64,
    /// `S = γn/(Lq)`.
    pub s: f64,
    pub sigma: f64,
}

impl LyapunovState {
    /// `H_i = ||f'_i(w*)||²`, matching all-zero memory.
    pub fn initial(
        model: &LossModel,
        reference: &ReferenceOptimum,
        gamma: f64,
        q: usize,
        sigma: f64,
    ) -> Result<Self> {
        check_reference(model, reference)?;
        let h = (0..model.n())
            .map(|i| Ok(norm_sq(&model.point_gradient(i, &reference.w_star)?.0)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_bounds(h, scale(model, gamma, q)?, sigma))
    }

    pub fn from_bounds(h: Vec<f64>, s: f64, sigma: f64) -> Self {
        let h_mean = mean(&h);
        Self {
            h,
            h_mean,
            s,
            sigma,
        }
    }

    /// `H_j = 2L h_j(w)` for every `j` in `set`.
    pub fn refresh(
        &mut self,
        model: &LossModel,
        reference: &ReferenceOptimum,
        w: &[f64],
        set: &[usize],
    ) -> Result<()> {
        for &j in set {
            self.h[j] = 2.0 * model.lipschitz() * h_unchecked(model, reference, w, j)?;
        }
        self.h_mean = mean(&self.h);
        Ok(())
    }

    /// `L_σ(w, H)`.
    pub fn value(&self, w: &[f64], w_star: &[f64]) -> f64 {
        dist_sq(w, w_star) + self.s * self.sigma * self.h_mean
    }

    /// `max_i (||α_i - f'_i(w*)||² - H_i)`; nonpositive when every bound holds.
    pub fn dominance_gap(
        &self,
        state: &OptState,
        model: &LossModel,
        reference: &ReferenceOptimum,
    ) -> Result<f64> {
        require_full_storage(state)?;
        let inst = model.instance();
        let mut worst = f64::NEG_INFINITY;
        for i in 0..model.n() {
            let err = norm_sq(&sub(
                &state.memory.slot_vector(i, inst),
                &model.point_gradient(i, &reference.w_star)?.0,
            ));
            worst = worst.max(err - self.h[i]);
        }
        Ok(worst)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn scale(model: &LossModel, gamma: f64, q: usize) -> Result<f64> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(TheoryError::NonPositive {
            name: "gamma",
            value: gamma,
        });
    }
    Ok(gamma * model.n() as f64 / (model.lipschitz() * q as f64))
}

fn require_full_storage(state: &OptState) -> Result<()> {
    if state.memory.mode() != StorageMode::FullVectors {
        return Err(TheoryError::Unsupported(
            "Lyapunov diagnostics need full-vector storage".into(),
        ));
    }
    if state.in_first_pass() || state.memory.normalizes_by_seen() {
        return Err(TheoryError::Unsupported(
            "Lyapunov diagnostics need the memory mean over all n slots".into(),
        ));
    }
    Ok(())
}

/// Exact one-step expectations behind the contraction `1 - cμγ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovAudit {
    /// `E L_σ(w⁺, H⁺)`.
    pub expected_next: f64,
    /// `(1 - cμγ) L_σ(w, H)`.
    pub contracted: f64,
    /// `E H̄⁺`.
    pub expected_h_mean: f64,
    /// `((n - q)/n) H̄ + (2Lq/n) f^δ(w)`.
    pub predicted_h_mean: f64,
    /// Largest admissible step for `(c, σ)`.
    pub step_bound: f64,
}

impl LyapunovAudit {
    pub fn contracts(&self, tol: f64) -> bool {
        self.expected_next <= self.contracted + tol
    }
}

/// `E H̄⁺` by enumeration next to `((n - q)/n) H̄ + (2Lq/n) f^δ(w)`.
///
/// Depends only on which slots each outcome refreshes, so it applies to
/// every sampler with exact inclusion probability `q/n`.
pub fn memory_bound_recurrence(
    model: &LossModel,
    w: &[f64],
    lyap: &LyapunovState,
    sampler: &Sampler,
    reference: &ReferenceOptimum,
) -> Result<(f64, f64)> {
    check_reference(model, reference)?;
    let n = model.n();
    let q = sampler.q() as f64;
    let fresh = (0..n)
        .map(|j| Ok(2.0 * model.lipschitz() * h_unchecked(model, reference, w, j)?))
        .collect::<Result<Vec<_>>>()?;
    let mut expected = 0.0;
    for o in enumerate_outcomes(sampler)? {
        let mut h = lyap.h.clone();
        for &j in &o.set {
            h[j] = fresh[j];
        }
        expected += ratio_f64(o.prob) * mean(&h);
    }
    let f_delta = model.objective(w)? - reference.f_star;
    let nf = n as f64;
    let predicted = (nf - q) / nf * lyap.h_mean + 2.0 * model.lipschitz() * q / nf * f_delta;
    Ok((expected, predicted))
}

/// Exact `E L_σ(w⁺, H⁺)` for one step of `sampler` at step `gamma`, next to
/// `(1 - cμγ) L_σ(w, H)`. Fails when `gamma` exceeds the admissible step for
/// `(c, σ)`.
pub fn lyapunov_step_audit(
    model: &LossModel,
    state: &OptState,
    lyap: &LyapunovState,
    sampler: &Sampler,
    gamma: f64,
    c: f64,
    reference: &ReferenceOptimum,
) -> Result<LyapunovAudit> {
    check_reference(model, reference)?;
    require_full_storage(state)?;
    if matches!(sampler.kind(), SamplerKind::EpsNSaga | SamplerKind::Sgd) {
        return Err(TheoryError::Unsupported(format!(
            "{} does not keep exact memory",
            sampler.kind()
        )));
    }
    let q = sampler.q();
    let s = scale(model, gamma, q)?;
    if (s - lyap.s).abs() > 1e-12 * s {
        return Err(TheoryError::Unsupported(format!(
            "Lyapunov scale {} does not match gamma n/(L q) = {s}",
            lyap.s
        )));
    }
    let l = model.lipschitz();
    let k = k_param(q, model.n(), model.mu(), l)?;
    let step_bound = admissible_step(c, lyap.sigma, k, l)?;
    if gamma > step_bound {
        return Err(TheoryError::Inadmissible {
            gamma,
            bound: step_bound,
            which: "contraction condition for (c, sigma)",
        });
    }

    let ws = &reference.w_star;
    let fresh = (0..model.n())
        .map(|j| Ok(2.0 * l * h_unchecked(model, reference, &state.w, j)?))
        .collect::<Result<Vec<_>>>()?;
    let mut expected_next = 0.0;
    let mut expected_h_mean = 0.0;
    for o in enumerate_outcomes(sampler)? {
        let p = ratio_f64(o.prob);
        let mut next = state.clone();
        apply_update(
            &mut next,
            model,
            sampler,
            o.index,
            &UpdateSet::Many(o.set.clone()),
            gamma,
        )?;
        let mut h = lyap.h.clone();
        for &j in &o.set {
            h[j] = fresh[j];
        }
        let h_mean = mean(&h);
        expected_h_mean += p * h_mean;
        expected_next += p * (dist_sq(&next.w, ws) + lyap.s * lyap.sigma * h_mean);
    }
    let contracted = (1.0 - c * model.mu() * gamma) * lyap.value(&state.w, ws);
    let (_, predicted_h_mean) = memory_bound_recurrence(model, &state.w, lyap, sampler, reference)?;
    Ok(LyapunovAudit {
        expected_next,
        contracted,
        expected_h_mean,
        predicted_h_mean,
        step_bound,
    })
}

/// Exact `||w - w*||² - E||w⁺ - w*||²` next to its lower bound
/// `γμ||w - w*||² - 2γ² E||α_i - f'_i(w*)||² + (2γ - 4γ²L) f^δ(w)`.
pub fn iterate_recurrence_check(
    model: &LossModel,
    state: &OptState,
    gamma: f64,
    reference: &ReferenceOptimum,
) -> Result<(f64, f64)> {
    check_reference(model, reference)?;
    require_full_storage(state)?;
    let n = model.n();
    let ws = &reference.w_star;
    let inst = model.instance();
    let sgd = Sampler::Sgd { n };
    let d0 = dist_sq(&state.w, ws);
    let mut next_dist = 0.0;
    let mut mem_err = 0.0;
    for i in 0..n {
        let mut next = state.clone();
        apply_update(&mut next, model, &sgd, i, &UpdateSet::Empty, gamma)?;
        next_dist += dist_sq(&next.w, ws) / n as f64;
        let g_star = model.point_gradient(i, ws)?.0;
        mem_err += norm_sq(&sub(&state.memory.slot_vector(i, inst), &g_star)) / n as f64;
    }
    let f_delta = model.objective(&state.w)? - reference.f_star;
    let l = model.lipschitz();
    let lower = gamma * model.mu() * d0 - 2.0 * gamma * gamma * mem_err
        + (2.0 * gamma - 4.0 * gamma * gamma * l) * f_delta;
    Ok((d0 - next_dist, lower))
}

/// `E||(α_i - ᾱ) - f'_i(w*)||²` next to `E||α_i - f'_i(w*)||² - ||ᾱ||²`.
pub fn centered_memory_identity(
    model: &LossModel,
    state: &OptState,
    reference: &ReferenceOptimum,
) -> Result<(f64, f64)> {
    check_reference(model, reference)?;
    require_full_storage(state)?;
    let inst = model.instance();
    let n = model.n() as f64;
    let bar = state.memory.alpha_mean();
    let (mut centered, mut raw) = (0.0, 0.0);
    for i in 0..model.n() {
        let a = state.memory.slot_vector(i, inst);
        let g = model.point_gradient(i, &reference.w_star)?.0;
        let e = sub(&a, &g);
        raw += norm_sq(&e) / n;
        centered += norm_sq(&sub(&e, &bar)) / n;
    }
    Ok((centered, raw - norm_sq(&bar)))
}

/// Plain SGD one step from `w`: exact `E||w⁺ - w*||²` next to
/// `(1 - μγ)||w - w*||² + 4γ² mean||f'_i(w*)||²`.
pub fn sgd_step_check(
    model: &LossModel,
    w: &[f64],
    gamma: f64,
    reference: &ReferenceOptimum,
) -> Result<(f64, f64)> {
    check_reference(model, reference)?;
    let n = model.n();
    let ws = &reference.w_star;
    let mut expected = 0.0;
    let mut eps = 0.0;
    for i in 0..n {
        let (g, _) = model.point_gradient(i, w)?;
        let mut next = w.to_vec();
        crate::vecops::axpy(-gamma, &g, &mut next);
        expected += dist_sq(&next, ws) / n as f64;
        eps += norm_sq(&model.point_gradient(i, ws)?.0) / n as f64;
    }
    Ok((
        expected,
        (1.0 - model.mu() * gamma) * dist_sq(w, ws) + 4.0 * gamma * gamma * eps,
    ))
}
