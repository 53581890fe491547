//! Seeded experiment harness.
//!
//! A [`RunConfig`] names a dataset, loss, regularizer, algorithm and step-size
//! rule. [`run_experiment`] prepares the problem once (subsample, reference
//! optimum, neighbor graph), runs every seed in parallel and records
//! `f(w) - f(w*)` at fixed datapoint-evaluation checkpoints. The cost of
//! evaluating the objective is not counted.

mod config;
mod trace;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

pub use config::{AlgorithmSpec, DatasetSpec, GammaRule, RunConfig, SgdSchedule};
pub use trace::{read_trace, write_trace, AggregatePoint, MetricsTrace, TraceRow, TRACE_HEADER};

use crate::memengine::{
    make_sampler, step, EngineConfig, EngineError, OptState, Sampler, SamplerKind,
};
use crate::neighbors::{build_knn_graph, read_graph, write_graph, NeighborError, NeighborGraph};
use crate::problem::{
    default_reference_tol, load_libsvm, reference_optimum, synthesize_clustered,
    synthesize_problem, LibsvmOptions, LossModel, ProblemError, ProblemInstance, ReferenceOptimum,
};
use crate::theory::{self, TheoryError};

/// Environment variable holding the number of worker threads.
pub const WORKERS_ENV: &str = "NSAGA_WORKERS";

/// Suboptimality values in `[-SUBOPT_FLOOR, 0)` are reported as 0.
pub const SUBOPT_FLOOR: f64 = 1e-12;

/// A run counts as diverged once its suboptimality exceeds this multiple of
/// `max(f(w0) - f*, 1)`.
pub const DIVERGENCE_FACTOR: f64 = 1e12;

/// `γ0` candidates for plain SGD, in units of `1/L`.
pub const SGD_SWEEP: [f64; 3] = [0.1, 1.0, 10.0];

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("config key `{key}`: {msg}")]
    Config { key: String, msg: String },
    #[error("data: {0}")]
    Data(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error("trace: {0}")]
    Trace(String),
    #[error("reference optimum was computed for problem {expected}, not {found}")]
    Fingerprint { expected: String, found: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl From<ProblemError> for BenchError {
    fn from(e: ProblemError) -> Self {
        BenchError::Data(e.to_string())
    }
}

impl From<NeighborError> for BenchError {
    fn from(e: NeighborError) -> Self {
        BenchError::Data(e.to_string())
    }
}

/// `f(w) - f(w*)`, floored at 0 within [`SUBOPT_FLOOR`].
pub fn suboptimality(
    model: &LossModel,
    w: &[f64],
    reference: &ReferenceOptimum,
) -> Result<f64, BenchError> {
    let found = model.instance().fingerprint();
    if found != reference.fingerprint {
        return Err(BenchError::Fingerprint {
            expected: reference.fingerprint.clone(),
            found,
        });
    }
    subopt_unchecked(model, w, reference)
}

fn subopt_unchecked(
    model: &LossModel,
    w: &[f64],
    reference: &ReferenceOptimum,
) -> Result<f64, BenchError> {
    let v = model.objective(w)? - reference.f_star;
    Ok(if (-SUBOPT_FLOOR..0.0).contains(&v) {
        0.0
    } else {
        v
    })
}

/// Loads or synthesizes the dataset and applies the subsample.
pub fn load_instance(config: &RunConfig) -> Result<ProblemInstance, BenchError> {
    let inst = match &config.dataset {
        DatasetSpec::Synthetic { n, d, noise, seed } => {
            synthesize_problem(*n, *d, config.loss, config.mu, *seed, *noise)?.0
        }
        DatasetSpec::Clustered {
            n,
            d,
            clusters,
            spread,
            row_scale,
            noise,
            seed,
        } => {
            synthesize_clustered(
                *n,
                *d,
                *clusters,
                *spread,
                *row_scale,
                config.loss,
                config.mu,
                *seed,
                *noise,
            )?
            .0
        }
        DatasetSpec::Libsvm {
            path,
            label_map,
            dim,
        } => {
            let mut opts = LibsvmOptions::new(config.loss, config.mu);
            opts.label_map = label_map.clone();
            opts.expected_dim = *dim;
            load_libsvm(path, &opts)
                .map_err(|e| BenchError::Data(format!("{}: {e}", path.display())))?
        }
    };
    match config.subsample {
        Some(m) if m < inst.n() => Ok(inst.subsample(m, config.subsample_seed)?),
        _ => Ok(inst),
    }
}

/// Reads the cached graph for `(instance, q)` or builds and caches it.
pub fn cached_graph(
    instance: &ProblemInstance,
    q: usize,
    cache_dir: Option<&PathBuf>,
) -> Result<Arc<NeighborGraph>, BenchError> {
    let Some(dir) = cache_dir else {
        return Ok(Arc::new(build_knn_graph(instance, q)?));
    };
    let path = dir.join(format!("graph-{}-q{q}.txt", instance.fingerprint()));
    if path.exists() {
        if let Ok(g) = read_graph(&path, instance) {
            if g.q() == q {
                return Ok(Arc::new(g));
            }
        }
        log::warn!("ignoring unusable graph cache {}", path.display());
    }
    let g = build_knn_graph(instance, q)?;
    std::fs::create_dir_all(dir)?;
    write_graph(&g, &path)?;
    Ok(Arc::new(g))
}

/// A config with its problem, reference optimum and sampler resolved.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: RunConfig,
    pub model: LossModel,
    pub reference: Arc<ReferenceOptimum>,
    pub sampler: Sampler,
}

pub fn prepare(config: &RunConfig) -> Result<Prepared, BenchError> {
    prepare_with(config, &mut PrepCache::default())
}

/// Shares instances, reference optima and graphs between configs that agree
/// on them.
#[derive(Default)]
pub struct PrepCache {
    instances: HashMap<String, (Arc<ProblemInstance>, Arc<ReferenceOptimum>)>,
    graphs: HashMap<(String, usize), Arc<NeighborGraph>>,
}

fn data_key(config: &RunConfig) -> String {
    format!(
        "{:?}|{}|{}|{:?}|{}",
        config.dataset, config.loss, config.mu, config.subsample, config.subsample_seed
    )
}

pub fn prepare_with(config: &RunConfig, cache: &mut PrepCache) -> Result<Prepared, BenchError> {
    config.validate()?;
    let key = data_key(config);
    let (instance, reference) = match cache.instances.get(&key) {
        Some(hit) => hit.clone(),
        None => {
            let inst = Arc::new(load_instance(config)?);
            let model = LossModel::from_arc(Arc::clone(&inst));
            let reference = Arc::new(reference_optimum(
                &model,
                default_reference_tol(config.loss),
            )?);
            cache
                .instances
                .insert(key, (Arc::clone(&inst), Arc::clone(&reference)));
            (inst, reference)
        }
    };
    let model = LossModel::from_arc(instance);
    let alg = &config.algorithm;
    let graph = if alg.kind.needs_graph() {
        let gkey = (reference.fingerprint.clone(), alg.q);
        Some(match cache.graphs.get(&gkey) {
            Some(g) => Arc::clone(g),
            None => {
                if alg.q == 0 || alg.q > model.n() {
                    return Err(BenchError::Config {
                        key: "algorithm.q".into(),
                        msg: format!("q = {} must satisfy 1 <= q <= n = {}", alg.q, model.n()),
                    });
                }
                let g = cached_graph(model.instance(), alg.q, config.graph_cache.as_ref())?;
                cache.graphs.insert(gkey, Arc::clone(&g));
                g
            }
        })
    } else {
        None
    };
    let sampler =
        make_sampler(alg.kind, &model, alg.q, graph, alg.eps).map_err(|e| BenchError::Config {
            key: "algorithm".into(),
            msg: e.to_string(),
        })?;
    Ok(Prepared {
        config: config.clone(),
        model,
        reference,
        sampler,
    })
}

impl Prepared {
    pub fn n(&self) -> usize {
        self.model.n()
    }

    /// Total datapoint evaluations: `round(epochs * n)`.
    pub fn budget(&self) -> u64 {
        (self.config.epochs * self.n() as f64).round().max(1.0) as u64
    }

    pub fn trace_every(&self) -> u64 {
        self.config
            .trace_every
            .unwrap_or((self.n() as u64 / 10).max(1))
    }

    /// Candidate step sizes; more than one only for [`GammaRule::Sweep`].
    pub fn gamma_candidates(&self) -> Result<Vec<f64>, BenchError> {
        let m = &self.model;
        let (n, mu, l) = (m.n(), m.mu(), m.lipschitz());
        let q = self.sampler.q().max(1);
        let g = match self.config.gamma {
            GammaRule::Explicit(g) => g,
            GammaRule::QOverMuN => q as f64 / (mu * n as f64),
            GammaRule::TheoryStar => {
                let k = theory::k_param(q, n, mu, l)?;
                if self.sampler.kind() == SamplerKind::EpsNSaga {
                    theory::gamma_tilde(k, l)?
                } else {
                    theory::gamma_star(k, l)?
                }
            }
            GammaRule::TheoryUniversal => theory::universal_gamma(l)?,
            GammaRule::Sweep => return Ok(SGD_SWEEP.iter().map(|c| c / l).collect()),
        };
        Ok(vec![g])
    }
}

/// One seed's checkpoints.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub rows: Vec<TraceRow>,
    pub diverged: bool,
    pub final_state: OptState,
}

/// Runs one seed for the prepared budget. `observer` sees the state at every
/// checkpoint, including step 0 and the final step.
pub fn run_single(
    prep: &Prepared,
    gamma: f64,
    seed: u64,
    observer: &mut dyn FnMut(&OptState),
) -> Result<RunOutcome, BenchError> {
    let cfg = &prep.config;
    let model = &prep.model;
    let engine = EngineConfig {
        storage: cfg.algorithm.storage,
        growing_n: cfg.growing_n,
    };
    let mut state = OptState::new(model, engine, seed);
    let label = cfg.label();
    let budget = prep.budget();
    let every = prep.trace_every();
    let decay =
        cfg.algorithm.kind == SamplerKind::Sgd && cfg.algorithm.schedule == SgdSchedule::Decay;
    let start = Instant::now();
    let mut rows = Vec::new();
    let record = |state: &OptState, rows: &mut Vec<TraceRow>| -> Result<bool, BenchError> {
        let sub = subopt_unchecked(model, &state.w, &prep.reference)?;
        let limit = rows.first().map_or(f64::INFINITY, |r: &TraceRow| {
            DIVERGENCE_FACTOR * r.suboptimality.max(1.0)
        });
        if sub.is_nan() || sub > limit {
            return Ok(false);
        }
        rows.push(TraceRow {
            seed,
            algorithm: label.clone(),
            datapoint_evals: state.counters.datapoint_evals,
            gradient_evals: state.counters.gradient_evals,
            suboptimality: sub,
            wall_seconds: if cfg.record_wall_time {
                start.elapsed().as_secs_f64()
            } else {
                0.0
            },
        });
        Ok(true)
    };
    observer(&state);
    record(&state, &mut rows)?;
    let mut diverged = false;
    while state.counters.datapoint_evals < budget {
        let t = state.counters.datapoint_evals;
        let g = if decay { gamma / (t + 1) as f64 } else { gamma };
        match step(&mut state, model, &prep.sampler, g) {
            Ok(()) => {}
            Err(EngineError::Diverged { .. }) => {
                diverged = true;
                break;
            }
            Err(e) => return Err(e.into()),
        }
        let t = state.counters.datapoint_evals;
        if t.is_multiple_of(every) || t == budget {
            observer(&state);
            if !record(&state, &mut rows)? {
                diverged = true;
                break;
            }
        }
    }
    Ok(RunOutcome {
        rows,
        diverged,
        final_state: state,
    })
}

/// Result of one config over all its seeds.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub label: String,
    pub trace: MetricsTrace,
    /// Step size used; the winning `γ0` for swept SGD.
    pub gamma: f64,
    pub n: usize,
    pub lipschitz: f64,
    pub f_star: f64,
    pub fingerprint: String,
}

/// Runs `f` on a pool sized by [`WORKERS_ENV`] when set, else on the global
/// pool.
pub fn with_workers<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    let requested = std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&k| k > 0);
    match requested.and_then(|k| rayon::ThreadPoolBuilder::new().num_threads(k).build().ok()) {
        Some(pool) => pool.install(f),
        None => f(),
    }
}

fn run_seeds(prep: &Prepared, gamma: f64) -> Result<Vec<RunOutcome>, BenchError> {
    prep.config
        .seeds
        .par_iter()
        .map(|&s| run_single(prep, gamma, s, &mut |_| {}))
        .collect()
}

fn final_score(outcomes: &[RunOutcome], budget: u64) -> f64 {
    let mut total = 0.0;
    for o in outcomes {
        match o.rows.last() {
            Some(r) if !o.diverged && r.datapoint_evals == budget => total += r.suboptimality,
            _ => return f64::INFINITY,
        }
    }
    total / outcomes.len() as f64
}

pub fn run_prepared(prep: &Prepared) -> Result<ExperimentResult, BenchError> {
    let candidates = prep.gamma_candidates()?;
    let mut best: Option<(f64, f64, Vec<RunOutcome>)> = None;
    for gamma in candidates {
        let outcomes = run_seeds(prep, gamma)?;
        let score = final_score(&outcomes, prep.budget());
        if best.as_ref().is_none_or(|(s, _, _)| score < *s) {
            best = Some((score, gamma, outcomes));
        }
    }
    let (_, gamma, outcomes) = best.expect("at least one step size");
    let label = prep.config.label();
    let mut trace = MetricsTrace::default();
    for (o, &seed) in outcomes.into_iter().zip(&prep.config.seeds) {
        if o.diverged {
            trace.diverged.push((label.clone(), seed));
        }
        trace.rows.extend(o.rows);
    }
    trace.sort();
    Ok(ExperimentResult {
        label,
        trace,
        gamma,
        n: prep.n(),
        lipschitz: prep.model.lipschitz(),
        f_star: prep.reference.f_star,
        fingerprint: prep.reference.fingerprint.clone(),
    })
}

pub fn run_experiment(config: &RunConfig) -> Result<ExperimentResult, BenchError> {
    with_workers(|| {
        let prep = prepare(config)?;
        run_prepared(&prep)
    })
}

/// Runs several configs, sharing data preparation, and returns results in
/// input order.
pub fn run_grid(configs: &[RunConfig]) -> Result<Vec<ExperimentResult>, BenchError> {
    with_workers(|| {
        let mut cache = PrepCache::default();
        let preps = configs
            .iter()
            .map(|c| prepare_with(c, &mut cache))
            .collect::<Result<Vec<_>, _>>()?;
        preps.par_iter().map(run_prepared).collect()
    })
}

/// Default `eps` for the comparison grid.
pub const REPLICATE_EPS: f64 = 0.1;

/// Clustered synthetic logistic data for the comparison grid. Rows have
/// roughly unit norm and every point has close same-label neighbors.
pub fn replicate_synthetic(n: usize) -> RunConfig {
    let d = 20;
    RunConfig {
        dataset: DatasetSpec::Clustered {
            n,
            d,
            clusters: (n / 50).max(1),
            spread: 0.0025,
            row_scale: 1.0 / (d as f64).sqrt(),
            noise: 0.3,
            seed: 0,
        },
        loss: crate::problem::LossKind::Logistic,
        epochs: 15.0,
        seeds: vec![0, 1, 2],
        trace_every: Some((n as u64 / 4).max(1)),
        ..RunConfig::default()
    }
}

/// The comparison grid: SAGA, q-SAGA(q), eps-N-SAGA(q, eps) per eps,
/// constant-step SGD and decaying SGD, for every `mu`.
/// `base` supplies the dataset, loss, epochs, seeds and subsampling.
pub fn replicate_grid(base: &RunConfig, mus: &[f64], q: usize, eps: &[f64]) -> Vec<RunConfig> {
    let mut out = Vec::new();
    for &mu in mus {
        let cell = |kind: SamplerKind,
                    schedule: SgdSchedule,
                    q: usize,
                    eps: Option<f64>,
                    gamma: GammaRule| {
            let mut c = base.clone();
            c.mu = mu;
            c.algorithm = AlgorithmSpec {
                kind,
                schedule,
                q,
                eps,
                storage: base.algorithm.storage,
            };
            c.gamma = gamma;
            c.label = Some(format!("{} mu={mu}", c.algorithm.label()));
            c
        };
        out.push(cell(
            SamplerKind::Saga,
            SgdSchedule::Constant,
            1,
            None,
            GammaRule::QOverMuN,
        ));
        out.push(cell(
            SamplerKind::QSaga,
            SgdSchedule::Constant,
            q,
            None,
            GammaRule::QOverMuN,
        ));
        for &e in eps {
            out.push(cell(
                SamplerKind::EpsNSaga,
                SgdSchedule::Constant,
                q,
                Some(e),
                GammaRule::QOverMuN,
            ));
        }
        out.push(cell(
            SamplerKind::Sgd,
            SgdSchedule::Constant,
            1,
            None,
            GammaRule::Sweep,
        ));
        out.push(cell(
            SamplerKind::Sgd,
            SgdSchedule::Decay,
            1,
            None,
            GammaRule::Sweep,
        ));
    }
    out
}
