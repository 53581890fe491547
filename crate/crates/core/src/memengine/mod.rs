//! Uniform q-memorization engine.
//!
//! One step draws an index `i`, moves along
//!
//! ```text
//! g_i(w) = f'_i(w) - α_i + ᾱ
//! ```
//!
//! using the memory as it was before the step, then refreshes the slots in the
//! update set `J` with gradients evaluated at that same pre-step `w`. Which
//! slots are refreshed is decided by the [`Sampler`].
//!
//! Random draws per step come from one ChaCha8 stream in a fixed order: the
//! step index first, then whatever randomness the update set needs. The
//! growing-n permutation is drawn once at construction, before any step.

mod memory;
mod sampler;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use memory::{memory_mean_rebuild, MemoryState, StorageMode};
pub use sampler::{
    enumerate_outcomes, enumerate_update_distribution, inclusion_probabilities, make_sampler,
    Outcome, Sampler, SamplerKind, UpdateDistribution, UpdateSet, MAX_ENUMERATION_N,
};

use crate::neighbors::NeighborError;
use crate::problem::LossModel;
use crate::vecops::{axpy, dot, norm};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid sampler: {0}")]
    InvalidSampler(String),
    #[error("step size must be positive and finite, got {0}")]
    BadStepSize(f64),
    #[error("non-finite iterate after step {step} (index {index})")]
    Diverged { step: u64, index: usize },
    #[error("enumeration supports n <= {max}, got {n}")]
    TooLarge { n: usize, max: usize },
    #[error("update set {0:?} is not the neighborhood of the step index")]
    BadUpdateSet(Vec<usize>),
    #[error(transparent)]
    Neighbor(#[from] NeighborError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EngineConfig {
    pub storage: StorageMode,
    /// First-pass heuristic: step `t < n` visits the `t`-th point of a fixed
    /// random permutation and the memory mean is normalized by the number of
    /// slots written so far.
    pub growing_n: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            storage: StorageMode::FullVectors,
            growing_n: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepCounters {
    /// Stochastic update steps taken.
    pub datapoint_evals: u64,
    /// Individual `f'_j` computations.
    pub gradient_evals: u64,
    /// eps-N-SAGA slots filled by sharing instead of computing.
    pub shared_writes: u64,
}

/// Everything one optimizer run owns.
#[derive(Debug, Clone)]
pub struct OptState {
    pub w: Vec<f64>,
    pub memory: MemoryState,
    pub counters: StepCounters,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    growing_n: bool,
    dir: Vec<f64>,
}

impl OptState {
    /// `w = 0`, empty memory.
    pub fn new(model: &LossModel, config: EngineConfig, seed: u64) -> Self {
        Self::with_iterate(model, config, seed, vec![0.0; model.dim()])
    }

    pub fn with_iterate(model: &LossModel, config: EngineConfig, seed: u64, w: Vec<f64>) -> Self {
        assert_eq!(w.len(), model.dim(), "iterate dimension");
        let n = model.n();
        let d = model.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        if config.growing_n {
            order.shuffle(&mut rng);
        }
        let mut memory = MemoryState::new(config.storage, n, d);
        memory.set_normalize_by_seen(config.growing_n);
        Self {
            w,
            memory,
            counters: StepCounters::default(),
            rng,
            order,
            growing_n: config.growing_n,
            dir: vec![0.0; d],
        }
    }

    pub fn in_first_pass(&self) -> bool {
        self.growing_n && (self.counters.datapoint_evals as usize) < self.order.len()
    }

    /// Disables the growing-n heuristic from here on.
    pub fn end_first_pass(&mut self) {
        self.growing_n = false;
        self.memory.set_normalize_by_seen(false);
    }
}

/// Result of refreshing the slots of one update set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MemoryUpdateReport {
    /// Fresh gradient computations beyond the step's own `f'_i(w)`.
    pub fresh_gradients: u64,
    /// `(j, eps_ij(w))` for every slot filled by sharing (`j != i`).
    pub shared: Vec<(usize, f64)>,
}

/// `g_i(w)` under the current memory, written into `out`; returns `s_i(w)`.
pub fn direction_into(state: &OptState, model: &LossModel, i: usize, out: &mut [f64]) -> f64 {
    let inst = model.instance();
    let s = model.point_gradient_into(i, &state.w, out);
    state.memory.add_slot_scaled(i, -1.0, inst, out);
    let denom = state.memory.denominator();
    if denom > 0 {
        axpy(1.0 / denom as f64, state.memory.sum(), out);
    }
    s
}

pub fn direction(state: &OptState, model: &LossModel, i: usize) -> Vec<f64> {
    let mut g = vec![0.0; model.dim()];
    direction_into(state, model, i, &mut g);
    g
}

/// One step: draw `i`, draw `J`, apply.
pub fn step(
    state: &mut OptState,
    model: &LossModel,
    sampler: &Sampler,
    gamma: f64,
) -> Result<(), EngineError> {
    let n = model.n();
    let t = state.counters.datapoint_evals as usize;
    let i = if state.growing_n && t < n {
        state.order[t]
    } else {
        if state.growing_n {
            state.end_first_pass();
        }
        state.rng.random_range(0..n)
    };
    let set = sampler.sample_update_set(&mut state.rng, i);
    apply_update(state, model, sampler, i, &set, gamma)?;
    Ok(())
}

/// Applies a fixed outcome `(i, J)`: the iterate moves along `g_i(w)` and the
/// slots in `J` are refreshed at the pre-step `w`.
pub fn apply_update(
    state: &mut OptState,
    model: &LossModel,
    sampler: &Sampler,
    i: usize,
    set: &UpdateSet<'_>,
    gamma: f64,
) -> Result<MemoryUpdateReport, EngineError> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(EngineError::BadStepSize(gamma));
    }
    let mut dir = std::mem::take(&mut state.dir);
    let s_i = direction_into(state, model, i, &mut dir);
    state.counters.gradient_evals += 1;

    let report = refresh_memory(state, model, sampler, i, s_i, set)?;
    state.counters.gradient_evals += report.fresh_gradients;
    state.counters.shared_writes += report.shared.len() as u64;

    axpy(-gamma, &dir, &mut state.w);
    state.dir = dir;
    state.counters.datapoint_evals += 1;
    if state.w.iter().any(|v| !v.is_finite()) {
        return Err(EngineError::Diverged {
            step: state.counters.datapoint_evals,
            index: i,
        });
    }
    Ok(report)
}

fn refresh_memory(
    state: &mut OptState,
    model: &LossModel,
    sampler: &Sampler,
    i: usize,
    s_i: f64,
    set: &UpdateSet<'_>,
) -> Result<MemoryUpdateReport, EngineError> {
    if let Sampler::EpsNSaga { .. } = sampler {
        let children = sampler.graph().map(|g| g.children(i)).unwrap_or_default();
        let matches = match set {
            UpdateSet::Neighbors(s) => *s == children,
            other => other.to_vec() == children,
        };
        if !matches {
            return Err(EngineError::BadUpdateSet(set.to_vec()));
        }
        return apply_shared_update(state, model, sampler, i, s_i);
    }
    let inst = model.instance();
    let stamp = state.counters.datapoint_evals + 1;
    let mut fresh = 0;
    let mut write = |state: &mut OptState, j: usize| {
        let s = if j == i {
            s_i
        } else {
            fresh += 1;
            model.xi_prime(j, &state.w)
        };
        let w = std::mem::take(&mut state.w);
        state.memory.write(j, s, inst, &w, stamp);
        state.w = w;
    };
    match set {
        UpdateSet::Empty => {}
        UpdateSet::Single(j) => write(state, *j),
        UpdateSet::All(n) => (0..*n).for_each(|j| write(state, j)),
        UpdateSet::Many(v) => v.iter().for_each(|&j| write(state, j)),
        UpdateSet::Neighbors(v) => v.iter().for_each(|&j| write(state, j)),
    }
    Ok(MemoryUpdateReport {
        fresh_gradients: fresh,
        shared: Vec::new(),
    })
}

/// eps-N-SAGA memory refresh for the neighborhood `N_i` at the current
/// (pre-step) iterate. A neighbor `j` receives `s_i(w) x_j` (plus `mu w` in
/// full storage) when `eps_ij(w) <= eps`, and its exact gradient otherwise.
/// `s_i` must be `s_i(w)` at the current iterate.
pub fn apply_shared_update(
    state: &mut OptState,
    model: &LossModel,
    sampler: &Sampler,
    i: usize,
    s_i: f64,
) -> Result<MemoryUpdateReport, EngineError> {
    let Sampler::EpsNSaga { graph, bounds, eps } = sampler else {
        return Err(EngineError::InvalidSampler(
            "shared updates need an eps_n_saga sampler".into(),
        ));
    };
    if i >= graph.n() {
        return Err(EngineError::InvalidSampler(format!(
            "index {i} outside the graph"
        )));
    }
    let inst = model.instance();
    let stamp = state.counters.datapoint_evals + 1;
    let w = std::mem::take(&mut state.w);
    let w_norm = norm(&w);
    let margin_i = dot(inst.row(i), &w);
    let mut report = MemoryUpdateReport::default();
    for (k, &j) in graph.children(i).iter().enumerate() {
        if j == i {
            state.memory.write(j, s_i, inst, &w, stamp);
            continue;
        }
        let bound = bounds.edge_bound(i, k, w_norm, margin_i);
        if bound <= *eps {
            state.memory.write(j, s_i, inst, &w, stamp);
            report.shared.push((j, bound));
        } else {
            let s_j = model.xi_prime(j, &w);
            report.fresh_gradients += 1;
            state.memory.write(j, s_j, inst, &w, stamp);
        }
    }
    state.w = w;
    Ok(report)
}
