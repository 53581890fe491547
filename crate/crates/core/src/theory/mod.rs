//! Closed-form step sizes and guaranteed rates for uniform q-memorization,
//! plus Lyapunov diagnostics that check the underlying one-step inequalities
//! by exact enumeration.
//!
//! Notation: `K = 4qL/(nμ)`, `γ = a/(4L)`. The guaranteed rate is
//!
//! ```text
//! ρ(γ) = min{ (q/n)(1 - a)/(1 - a/2), μγ },   a < 1
//! ```
//!
//! maximized at `a*(K) = 2K/(1 + K + √(1 + K²))`. With ε-accurate memory the
//! step is capped at `ã(K)/(4L)` and iterates reach a ball of radius `4γε/μ`.

mod lyapunov;

use std::fmt;

use thiserror::Error;

pub use lyapunov::{
    centered_memory_identity, h_suboptimality, iterate_recurrence_check, lyapunov_step_audit,
    memory_bound_recurrence, sgd_step_check, LyapunovAudit, LyapunovState,
};

use crate::memengine::EngineError;

/// Relative mismatch allowed between a caller-supplied `K` and `4qL/(nμ)`.
pub const K_CONSISTENCY_RTOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("{name} must be positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("{name} = {value} outside {range}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("K = {given} does not match 4qL/(n mu) = {expected}")]
    InconsistentK { given: f64, expected: f64 },
    #[error("step {gamma} exceeds the admissible bound {bound} ({which})")]
    Inadmissible {
        gamma: f64,
        bound: f64,
        which: &'static str,
    },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("reference optimum belongs to a different problem")]
    MismatchedReference,
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Problem(#[from] crate::problem::ProblemError),
}

pub type Result<T> = std::result::Result<T, TheoryError>;

fn positive(name: &'static str, value: f64) -> Result<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(TheoryError::NonPositive { name, value })
    }
}

/// `K = 4qL/(nμ)`.
pub fn k_param(q: usize, n: usize, mu: f64, l: f64) -> Result<f64> {
    positive("mu", mu)?;
    positive("L", l)?;
    if n == 0 || q == 0 || q > n {
        return Err(TheoryError::OutOfRange {
            name: "q",
            value: q as f64,
            range: "[1, n]",
        });
    }
    Ok(4.0 * q as f64 * l / (n as f64 * mu))
}

pub fn a_star(k: f64) -> Result<f64> {
    positive("K", k)?;
    Ok(2.0 * k / (1.0 + k + (1.0 + k * k).sqrt()))
}

pub fn gamma_star(k: f64, l: f64) -> Result<f64> {
    positive("L", l)?;
    Ok(a_star(k)? / (4.0 * l))
}

/// `ρ / (μ/(4L))` as a function of `a = 4Lγ` and `K`.
fn scaled_rate(a: f64, k: f64) -> f64 {
    let memory = k * (1.0 - a) / (1.0 - 0.5 * a);
    if a >= 2.0 * k / (1.0 + k + (1.0 + k * k).sqrt()) {
        memory
    } else {
        a
    }
}

/// Problem constants plus one operating point `(γ, c, σ)` and its rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateParams {
    pub mu: f64,
    pub l: f64,
    pub n: usize,
    pub q: usize,
    pub k: f64,
    pub gamma: f64,
    /// `4Lγ`.
    pub a: f64,
    /// Rate as a fraction of `μγ`.
    pub c: f64,
    /// Lyapunov weight `1 - 2Lγ`, the maximizer for this step.
    pub sigma: f64,
    pub rho: f64,
}

impl RateParams {
    pub fn new(mu: f64, l: f64, n: usize, q: usize, gamma: f64) -> Result<Self> {
        let k = k_param(q, n, mu, l)?;
        let rho = rho_of_gamma(gamma, mu, l, n, q)?;
        Ok(Self {
            mu,
            l,
            n,
            q,
            k,
            gamma,
            a: 4.0 * l * gamma,
            c: rho / (mu * gamma),
            sigma: 1.0 - 2.0 * l * gamma,
            rho,
        })
    }

    pub fn kappa(&self) -> f64 {
        self.l / self.mu
    }

    /// `S = γn/(Lq)`.
    pub fn lyapunov_scale(&self) -> f64 {
        self.gamma * self.n as f64 / (self.l * self.q as f64)
    }
}

/// Guaranteed per-step contraction for step `γ ∈ (0, 1/(4L))`.
pub fn rho_of_gamma(gamma: f64, mu: f64, l: f64, n: usize, q: usize) -> Result<f64> {
    let k = k_param(q, n, mu, l)?;
    let a = 4.0 * l * gamma;
    if !(gamma > 0.0 && a < 1.0) {
        return Err(TheoryError::OutOfRange {
            name: "gamma",
            value: gamma,
            range: "(0, 1/(4L))",
        });
    }
    Ok(mu / (4.0 * l) * scaled_rate(a, k))
}

/// `ρ*(K) = (q/n) · 2/(1 + K + √(1 + K²))`.
pub fn rho_star(k: f64, mu: f64, l: f64, q: usize, n: usize) -> Result<f64> {
    let expected = k_param(q, n, mu, l)?;
    positive("K", k)?;
    if ((k - expected) / expected).abs() > K_CONSISTENCY_RTOL {
        return Err(TheoryError::InconsistentK { given: k, expected });
    }
    Ok(q as f64 / n as f64 * 2.0 / (1.0 + k + (1.0 + k * k).sqrt()))
}

/// `a` of the `K`-agnostic step `(2 - √2)/(4L)`.
pub fn universal_a() -> f64 {
    2.0 - std::f64::consts::SQRT_2
}

pub fn universal_gamma(l: f64) -> Result<f64> {
    positive("L", l)?;
    Ok(universal_a() / (4.0 * l))
}

/// `ρ(γ_u)/ρ*(K)` for the universal step; at least `2 - √2` for every `K`.
pub fn universal_ratio_check(k: f64) -> Result<f64> {
    Ok(scaled_rate(universal_a(), k) / a_star(k)?)
}

/// Step-size numerator when memory is only ε-accurate.
pub fn a_tilde(k: f64) -> Result<f64> {
    positive("K", k)?;
    let h = 1.5 * k;
    Ok(2.0 * k / (1.0 + h + (1.0 + k + h * h).sqrt()))
}

pub fn gamma_tilde(k: f64, l: f64) -> Result<f64> {
    positive("L", l)?;
    Ok(a_tilde(k)? / (4.0 * l))
}

/// Rate guaranteed with ε-accurate memory, for `a = 4Lγ < 2/3`.
pub fn rho_tilde_of_gamma(gamma: f64, mu: f64, l: f64, n: usize, q: usize) -> Result<f64> {
    let k = k_param(q, n, mu, l)?;
    let a = 4.0 * l * gamma;
    if !(gamma > 0.0 && a < 2.0 / 3.0) {
        return Err(TheoryError::OutOfRange {
            name: "gamma",
            value: gamma,
            range: "(0, 1/(6L))",
        });
    }
    if a >= a_tilde(k)? {
        Ok(q as f64 / n as f64 * (1.0 - 1.5 * a) / (1.0 - 0.5 * a))
    } else {
        Ok(mu * gamma)
    }
}

/// `s(γ) = 4γ/(Kμ) · (1 - 2Lγ)`, the weight of `mean ||f'_i(w*)||²` in `L0`.
pub fn s_gamma(gamma: f64, k: f64, mu: f64, l: f64) -> Result<f64> {
    positive("gamma", gamma)?;
    positive("K", k)?;
    positive("mu", mu)?;
    positive("L", l)?;
    Ok(4.0 * gamma / (k * mu) * (1.0 - 2.0 * l * gamma))
}

/// `(1 - μγ)^t L0 + 4γε/μ`.
pub fn approx_bound(t: u64, gamma: f64, mu: f64, eps: f64, l0: f64) -> Result<f64> {
    positive("gamma", gamma)?;
    positive("mu", mu)?;
    if mu * gamma >= 1.0 {
        return Err(TheoryError::OutOfRange {
            name: "mu*gamma",
            value: mu * gamma,
            range: "(0, 1)",
        });
    }
    if !(eps >= 0.0 && l0 >= 0.0) {
        return Err(TheoryError::OutOfRange {
            name: "eps/L0",
            value: eps.min(l0),
            range: "[0, inf)",
        });
    }
    let decay = (1.0 - mu * gamma).powf(t as f64);
    Ok(decay * l0 + 4.0 * gamma * eps / mu)
}

/// `(1 - ρ)^t L0`.
pub fn exact_bound(t: u64, rho: f64, l0: f64) -> Result<f64> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(TheoryError::OutOfRange {
            name: "rho",
            value: rho,
            range: "(0, 1]",
        });
    }
    Ok((1.0 - rho).powf(t as f64) * l0)
}

/// Inputs of the ε-accurate memory bound at one step size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproxRateParams {
    pub eps: f64,
    pub gamma: f64,
    pub mu: f64,
    pub l0: f64,
    pub s_gamma: f64,
}

impl ApproxRateParams {
    /// `L0 = ||w0 - w*||² + s(γ) · grad_sq_mean` with
    /// `grad_sq_mean = mean ||f'_i(w*)||²`. Requires `γ ≤ γ̃(K)`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mu: f64,
        l: f64,
        n: usize,
        q: usize,
        gamma: f64,
        eps: f64,
        dist0_sq: f64,
        grad_sq_mean: f64,
    ) -> Result<Self> {
        let k = k_param(q, n, mu, l)?;
        let cap = gamma_tilde(k, l)?;
        if gamma > cap {
            return Err(TheoryError::Inadmissible {
                gamma,
                bound: cap,
                which: "gamma_tilde(K)",
            });
        }
        let s = s_gamma(gamma, k, mu, l)?;
        Ok(Self {
            eps,
            gamma,
            mu,
            l0: dist0_sq + s * grad_sq_mean,
            s_gamma: s,
        })
    }

    /// Constant-step SGD as memory fixed at zero: `ε = mean ||f'_i(w*)||²`
    /// and `L0 = ||w0 - w*||²`. Requires `γ ≤ 1/(2L)`.
    pub fn sgd(mu: f64, l: f64, gamma: f64, dist0_sq: f64, grad_sq_mean: f64) -> Result<Self> {
        positive("L", l)?;
        if gamma > 0.5 / l {
            return Err(TheoryError::Inadmissible {
                gamma,
                bound: 0.5 / l,
                which: "1/(2L)",
            });
        }
        Ok(Self {
            eps: grad_sq_mean,
            gamma,
            mu,
            l0: dist0_sq,
            s_gamma: 0.0,
        })
    }

    pub fn bound(&self, t: u64) -> Result<f64> {
        approx_bound(t, self.gamma, self.mu, self.eps, self.l0)
    }

    /// `4γε/μ`.
    pub fn ball(&self) -> f64 {
        4.0 * self.gamma * self.eps / self.mu
    }
}

/// Largest step for which `(c, σ)` yields contraction `1 - cμγ`, in the
/// main-text and the rearranged form; both are returned.
pub fn admissible_step_forms(c: f64, sigma: f64, k: f64, l: f64) -> Result<(f64, f64)> {
    if !(c > 0.0 && c <= 1.0) {
        return Err(TheoryError::OutOfRange {
            name: "c",
            value: c,
            range: "(0, 1]",
        });
    }
    if !(0.0..=1.0).contains(&sigma) {
        return Err(TheoryError::OutOfRange {
            name: "sigma",
            value: sigma,
            range: "[0, 1]",
        });
    }
    positive("K", k)?;
    positive("L", l)?;
    let main = 1.0 / (2.0 * l) * f64::min(k * sigma / (k + 2.0 * c * sigma), 1.0 - sigma);
    let rearranged =
        1.0 / l * f64::min(k * sigma / (2.0 * k + 4.0 * c * sigma), (1.0 - sigma) / 2.0);
    Ok((main, rearranged))
}

pub fn admissible_step(c: f64, sigma: f64, k: f64, l: f64) -> Result<f64> {
    let (main, rearranged) = admissible_step_forms(c, sigma, k, l)?;
    assert!(
        (main - rearranged).abs() <= 4.0 * f64::EPSILON * main.abs(),
        "admissible step forms disagree: {main} vs {rearranged}"
    );
    Ok(main)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateRow {
    pub label: &'static str,
    pub gamma: f64,
    pub rho: f64,
}

/// Summary of step sizes and rates for one `(n, μ, L, q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateTable {
    pub n: usize,
    pub mu: f64,
    pub l: f64,
    pub q: usize,
    pub k: f64,
    pub gamma_star: f64,
    pub rho_star: f64,
    pub gamma_tilde: f64,
    pub rho_tilde: f64,
    pub gamma_universal: f64,
    pub rows: Vec<RateRow>,
}

pub fn rate_table(n: usize, mu: f64, l: f64, q: usize) -> Result<RateTable> {
    let k = k_param(q, n, mu, l)?;
    let gs = gamma_star(k, l)?;
    let gt = gamma_tilde(k, l)?;
    let gu = universal_gamma(l)?;
    let mut rows = vec![
        RateRow {
            label: "gamma_star",
            gamma: gs,
            rho: rho_of_gamma(gs, mu, l, n, q)?,
        },
        RateRow {
            label: "universal",
            gamma: gu,
            rho: rho_of_gamma(gu, mu, l, n, q)?,
        },
        RateRow {
            label: "1/(5L)",
            gamma: 0.2 / l,
            rho: rho_of_gamma(0.2 / l, mu, l, n, q)?,
        },
        RateRow {
            label: "gamma_tilde",
            gamma: gt,
            rho: rho_of_gamma(gt, mu, l, n, q)?,
        },
    ];
    for a in [0.1, 0.3, 0.5, 0.7, 0.9] {
        let g = a / (4.0 * l);
        rows.push(RateRow {
            label: "a-grid",
            gamma: g,
            rho: rho_of_gamma(g, mu, l, n, q)?,
        });
    }
    Ok(RateTable {
        n,
        mu,
        l,
        q,
        k,
        gamma_star: gs,
        rho_star: rho_star(k, mu, l, q, n)?,
        gamma_tilde: gt,
        rho_tilde: rho_tilde_of_gamma(gt, mu, l, n, q)?,
        gamma_universal: gu,
        rows,
    })
}

impl fmt::Display for RateTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "n = {}, mu = {}, L = {}, q = {}",
            self.n, self.mu, self.l, self.q
        )?;
        writeln!(f, "K               {:.6e}", self.k)?;
        writeln!(f, "gamma_star      {:.6e}", self.gamma_star)?;
        writeln!(f, "rho_star        {:.6e}", self.rho_star)?;
        writeln!(f, "gamma_tilde     {:.6e}", self.gamma_tilde)?;
        writeln!(f, "rho_tilde       {:.6e}", self.rho_tilde)?;
        writeln!(f, "gamma_universal {:.6e}", self.gamma_universal)?;
        writeln!(f)?;
        writeln!(f, "{:<12} {:>14} {:>14}", "step", "gamma", "rho(gamma)")?;
        for r in &self.rows {
            writeln!(f, "{:<12} {:>14.6e} {:>14.6e}", r.label, r.gamma, r.rho)?;
        }
        Ok(())
    }
}
