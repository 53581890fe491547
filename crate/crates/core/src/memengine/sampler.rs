use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_rational::Ratio;
use rand::seq::index;
use rand::Rng;

use super::EngineError;
use crate::neighbors::{verify_uniformity, EpsBoundTable, NeighborGraph};
use crate::problem::LossModel;

/// Largest `n` accepted by the exhaustive enumerators.
pub const MAX_ENUMERATION_N: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SamplerKind {
    Saga,
    QSaga,
    Svrg,
    NSaga,
    EpsNSaga,
    /// Memory is never written (`α_i = 0`): plain SGD.
    Sgd,
}

impl SamplerKind {
    pub fn needs_graph(self) -> bool {
        matches!(self, SamplerKind::NSaga | SamplerKind::EpsNSaga)
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SamplerKind::Saga => "saga",
            SamplerKind::QSaga => "q_saga",
            SamplerKind::Svrg => "svrg",
            SamplerKind::NSaga => "n_saga",
            SamplerKind::EpsNSaga => "eps_n_saga",
            SamplerKind::Sgd => "sgd",
        };
        f.write_str(s)
    }
}

impl FromStr for SamplerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "saga" => Ok(SamplerKind::Saga),
            "q_saga" | "qsaga" => Ok(SamplerKind::QSaga),
            "svrg" => Ok(SamplerKind::Svrg),
            "n_saga" | "nsaga" => Ok(SamplerKind::NSaga),
            "eps_n_saga" | "epsnsaga" => Ok(SamplerKind::EpsNSaga),
            "sgd" => Ok(SamplerKind::Sgd),
            other => Err(format!("unknown sampler kind `{other}`")),
        }
    }
}

/// The distribution over memory update sets `J`.
#[derive(Debug, Clone)]
pub enum Sampler {
    Saga {
        n: usize,
    },
    /// `J = {i} ∪ S`, `S` a uniform `(q-1)`-subset of the other indices.
    QSaga {
        n: usize,
        q: usize,
    },
    /// Full refresh with probability `q/n`, otherwise nothing.
    Svrg {
        n: usize,
        q: usize,
    },
    NSaga {
        graph: Arc<NeighborGraph>,
    },
    EpsNSaga {
        graph: Arc<NeighborGraph>,
        bounds: Arc<EpsBoundTable>,
        eps: f64,
    },
    Sgd {
        n: usize,
    },
}

/// A realized update set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UpdateSet<'a> {
    Empty,
    All(usize),
    Single(usize),
    Many(Vec<usize>),
    Neighbors(&'a [usize]),
}

impl UpdateSet<'_> {
    pub fn contains(&self, j: usize) -> bool {
        match self {
            UpdateSet::Empty => false,
            UpdateSet::All(n) => j < *n,
            UpdateSet::Single(k) => *k == j,
            UpdateSet::Many(v) => v.contains(&j),
            UpdateSet::Neighbors(s) => s.contains(&j),
        }
    }

    pub fn to_vec(&self) -> Vec<usize> {
        let mut v = match self {
            UpdateSet::Empty => Vec::new(),
            UpdateSet::All(n) => (0..*n).collect(),
            UpdateSet::Single(k) => vec![*k],
            UpdateSet::Many(v) => v.clone(),
            UpdateSet::Neighbors(s) => s.to_vec(),
        };
        v.sort_unstable();
        v
    }

    pub fn len(&self) -> usize {
        match self {
            UpdateSet::Empty => 0,
            UpdateSet::All(n) => *n,
            UpdateSet::Single(_) => 1,
            UpdateSet::Many(v) => v.len(),
            UpdateSet::Neighbors(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Validates and builds a sampler. `q` is ignored for SAGA (always 1) and
/// SGD (0); for the graph samplers it must equal the graph's in-degree.
pub fn make_sampler(
    kind: SamplerKind,
    model: &LossModel,
    q: usize,
    graph: Option<Arc<NeighborGraph>>,
    eps: Option<f64>,
) -> Result<Sampler, EngineError> {
    let n = model.n();
    let check_q = |q: usize| {
        if q == 0 || q > n {
            Err(EngineError::InvalidSampler(format!(
                "q = {q} must satisfy 1 <= q <= n = {n}"
            )))
        } else {
            Ok(())
        }
    };
    match kind {
        SamplerKind::Saga => Ok(Sampler::Saga { n }),
        SamplerKind::Sgd => Ok(Sampler::Sgd { n }),
        SamplerKind::QSaga => {
            check_q(q)?;
            Ok(Sampler::QSaga { n, q })
        }
        SamplerKind::Svrg => {
            check_q(q)?;
            Ok(Sampler::Svrg { n, q })
        }
        SamplerKind::NSaga | SamplerKind::EpsNSaga => {
            check_q(q)?;
            let graph = graph.ok_or_else(|| {
                EngineError::InvalidSampler(format!("{kind} requires a neighbor graph"))
            })?;
            if graph.n() != n {
                return Err(EngineError::InvalidSampler(format!(
                    "graph has {} nodes, problem has {n}",
                    graph.n()
                )));
            }
            let report = verify_uniformity(&graph);
            if let Some(&(node, deg)) = report.failures.first() {
                return Err(EngineError::InvalidSampler(format!(
                    "graph node {node} has in-degree {deg}, expected {}",
                    graph.q()
                )));
            }
            if graph.q() != q {
                return Err(EngineError::InvalidSampler(format!(
                    "graph in-degree {} differs from q = {q}",
                    graph.q()
                )));
            }
            if (0..n).any(|i| graph.edge_index(i, i).is_none()) {
                return Err(EngineError::InvalidSampler(
                    "every node must be its own child".into(),
                ));
            }
            if kind == SamplerKind::NSaga {
                return Ok(Sampler::NSaga { graph });
            }
            let eps =
                eps.ok_or_else(|| EngineError::InvalidSampler("eps_n_saga requires eps".into()))?;
            if eps.is_nan() || eps < 0.0 {
                return Err(EngineError::InvalidSampler(format!(
                    "eps must be nonnegative, got {eps}"
                )));
            }
            let bounds =
                EpsBoundTable::new(&graph, model.instance()).map_err(EngineError::Neighbor)?;
            Ok(Sampler::EpsNSaga {
                graph,
                bounds: Arc::new(bounds),
                eps,
            })
        }
    }
}

impl Sampler {
    pub fn kind(&self) -> SamplerKind {
        match self {
            Sampler::Saga { .. } => SamplerKind::Saga,
            Sampler::QSaga { .. } => SamplerKind::QSaga,
            Sampler::Svrg { .. } => SamplerKind::Svrg,
            Sampler::NSaga { .. } => SamplerKind::NSaga,
            Sampler::EpsNSaga { .. } => SamplerKind::EpsNSaga,
            Sampler::Sgd { .. } => SamplerKind::Sgd,
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Sampler::Saga { n }
            | Sampler::QSaga { n, .. }
            | Sampler::Svrg { n, .. }
            | Sampler::Sgd { n } => *n,
            Sampler::NSaga { graph } | Sampler::EpsNSaga { graph, .. } => graph.n(),
        }
    }

    /// Expected number of memory slots refreshed per step.
    pub fn q(&self) -> usize {
        match self {
            Sampler::Saga { .. } => 1,
            Sampler::Sgd { .. } => 0,
            Sampler::QSaga { q, .. } | Sampler::Svrg { q, .. } => *q,
            Sampler::NSaga { graph } | Sampler::EpsNSaga { graph, .. } => graph.q(),
        }
    }

    pub fn graph(&self) -> Option<&Arc<NeighborGraph>> {
        match self {
            Sampler::NSaga { graph } | Sampler::EpsNSaga { graph, .. } => Some(graph),
            _ => None,
        }
    }

    /// Draws `J` for the step index `i` (already drawn).
    pub fn sample_update_set<R: Rng + ?Sized>(&self, rng: &mut R, i: usize) -> UpdateSet<'_> {
        match self {
            Sampler::Saga { .. } => UpdateSet::Single(i),
            Sampler::Sgd { .. } => UpdateSet::Empty,
            Sampler::QSaga { n, q } => {
                if *q == 1 {
                    return UpdateSet::Single(i);
                }
                if *q == *n {
                    return UpdateSet::All(*n);
                }
                let mut set = Vec::with_capacity(*q);
                set.push(i);
                set.extend(index::sample(rng, n - 1, q - 1).into_iter().map(|k| {
                    if k >= i {
                        k + 1
                    } else {
                        k
                    }
                }));
                UpdateSet::Many(set)
            }
            Sampler::Svrg { n, q } => {
                let r: f64 = rng.random();
                if r < *q as f64 / *n as f64 {
                    UpdateSet::All(*n)
                } else {
                    UpdateSet::Empty
                }
            }
            Sampler::NSaga { graph } | Sampler::EpsNSaga { graph, .. } => {
                UpdateSet::Neighbors(graph.children(i))
            }
        }
    }
}

/// One joint outcome `(i, J)` of a step with its exact probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub index: usize,
    pub set: Vec<usize>,
    pub prob: Ratio<u64>,
}

fn binomial(n: u64, k: u64) -> u64 {
    (0..k).fold(1u64, |acc, t| acc * (n - t) / (t + 1))
}

fn subsets(
    items: &[usize],
    k: usize,
    out: &mut Vec<Vec<usize>>,
    cur: &mut Vec<usize>,
    start: usize,
) {
    if cur.len() == k {
        out.push(cur.clone());
        return;
    }
    for p in start..items.len() {
        cur.push(items[p]);
        subsets(items, k, out, cur, p + 1);
        cur.pop();
    }
}

/// Exhaustive joint distribution of the step index and update set.
pub fn enumerate_outcomes(sampler: &Sampler) -> Result<Vec<Outcome>, EngineError> {
    let n = sampler.n();
    if n > MAX_ENUMERATION_N {
        return Err(EngineError::TooLarge {
            n,
            max: MAX_ENUMERATION_N,
        });
    }
    let nn = n as u64;
    let mut out = Vec::new();
    for i in 0..n {
        match sampler {
            Sampler::Saga { .. } => out.push(Outcome {
                index: i,
                set: vec![i],
                prob: Ratio::new(1, nn),
            }),
            Sampler::Sgd { .. } => out.push(Outcome {
                index: i,
                set: vec![],
                prob: Ratio::new(1, nn),
            }),
            Sampler::QSaga { q, .. } => {
                let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
                let mut subs = Vec::new();
                subsets(&others, q - 1, &mut subs, &mut Vec::new(), 0);
                let p = Ratio::new(1, nn * binomial(nn - 1, *q as u64 - 1));
                for mut s in subs {
                    s.push(i);
                    s.sort_unstable();
                    out.push(Outcome {
                        index: i,
                        set: s,
                        prob: p,
                    });
                }
            }
            Sampler::Svrg { q, .. } => {
                let q = *q as u64;
                out.push(Outcome {
                    index: i,
                    set: vec![],
                    prob: Ratio::new(nn - q, nn * nn),
                });
                out.push(Outcome {
                    index: i,
                    set: (0..n).collect(),
                    prob: Ratio::new(q, nn * nn),
                });
            }
            Sampler::NSaga { graph } | Sampler::EpsNSaga { graph, .. } => out.push(Outcome {
                index: i,
                set: graph.children(i).to_vec(),
                prob: Ratio::new(1, nn),
            }),
        }
    }
    Ok(out)
}

/// Sorted update sets with their exact probabilities.
pub type UpdateDistribution = Vec<(Vec<usize>, Ratio<u64>)>;

/// Marginal distribution of `J`, keyed by the sorted index set.
pub fn enumerate_update_distribution(sampler: &Sampler) -> Result<UpdateDistribution, EngineError> {
    let mut agg: BTreeMap<Vec<usize>, Ratio<u64>> = BTreeMap::new();
    for o in enumerate_outcomes(sampler)? {
        *agg.entry(o.set).or_insert_with(|| Ratio::new(0, 1)) += o.prob;
    }
    Ok(agg.into_iter().collect())
}

/// `Σ_{J ∋ j} P{J}` for every `j`, exactly.
pub fn inclusion_probabilities(sampler: &Sampler) -> Result<Vec<Ratio<u64>>, EngineError> {
    let mut p = vec![Ratio::new(0, 1); sampler.n()];
    for (set, prob) in enumerate_update_distribution(sampler)? {
        for j in set {
            p[j] += prob;
        }
    }
    Ok(p)
}
