use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use super::BenchError;
use crate::memengine::{SamplerKind, StorageMode};
use crate::problem::{LabelMap, LossKind};

/// Where the data comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    /// i.i.d. Gaussian rows with planted weights.
    Synthetic {
        n: usize,
        d: usize,
        noise: f64,
        seed: u64,
    },
    /// Gaussian clusters, which gives points close neighbors.
    Clustered {
        n: usize,
        d: usize,
        clusters: usize,
        spread: f64,
        row_scale: f64,
        noise: f64,
        seed: u64,
    },
    Libsvm {
        path: PathBuf,
        label_map: Option<LabelMap>,
        dim: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaRule {
    Explicit(f64),
    /// `γ = q/(μn)`.
    QOverMuN,
    /// `γ*(K)` for exact memory, `γ̃(K)` for eps-N-SAGA.
    TheoryStar,
    /// `(2 - √2)/(4L)`.
    TheoryUniversal,
    /// Plain SGD only: the best of `γ0 ∈ {0.1, 1, 10}/L` by mean final
    /// suboptimality.
    Sweep,
}

/// Step-size schedule for plain SGD.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SgdSchedule {
    Constant,
    /// `γ_t = γ0/t`, `t = 1, 2, ...`.
    Decay,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlgorithmSpec {
    pub kind: SamplerKind,
    pub schedule: SgdSchedule,
    pub q: usize,
    pub eps: Option<f64>,
    pub storage: StorageMode,
}

impl AlgorithmSpec {
    /// Trace label, e.g. `q_saga(q=20)`.
    pub fn label(&self) -> String {
        match self.kind {
            SamplerKind::Saga => "saga".into(),
            SamplerKind::Sgd => match self.schedule {
                SgdSchedule::Constant => "sgd_const".into(),
                SgdSchedule::Decay => "sgd_decay".into(),
            },
            SamplerKind::EpsNSaga => format!(
                "eps_n_saga(q={};eps={})",
                self.q,
                self.eps.unwrap_or(f64::NAN)
            ),
            other => format!("{other}(q={})", self.q),
        }
    }
}

/// One experiment cell, run over several seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    pub loss: LossKind,
    pub mu: f64,
    pub algorithm: AlgorithmSpec,
    pub gamma: GammaRule,
    /// Budget in units of `n` datapoint evaluations.
    pub epochs: f64,
    pub seeds: Vec<u64>,
    pub subsample: Option<usize>,
    /// Seed of the subsample draw, separate from the optimizer seeds.
    pub subsample_seed: u64,
    /// Checkpoint interval in datapoint evaluations; `None` means `n/10`.
    pub trace_every: Option<u64>,
    pub growing_n: bool,
    pub record_wall_time: bool,
    pub graph_cache: Option<PathBuf>,
    pub label: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::Synthetic {
                n: 1000,
                d: 20,
                noise: 0.5,
                seed: 0,
            },
            loss: LossKind::Ridge,
            mu: 0.1,
            algorithm: AlgorithmSpec {
                kind: SamplerKind::Saga,
                schedule: SgdSchedule::Constant,
                q: 1,
                eps: None,
                storage: StorageMode::GlmScalars,
            },
            gamma: GammaRule::QOverMuN,
            epochs: 15.0,
            seeds: vec![0, 1, 2, 3, 4],
            subsample: None,
            subsample_seed: 0,
            trace_every: None,
            growing_n: true,
            record_wall_time: false,
            graph_cache: None,
            label: None,
        }
    }
}

fn bad(key: &str, msg: impl Into<String>) -> BenchError {
    BenchError::Config {
        key: key.to_string(),
        msg: msg.into(),
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T, BenchError> {
    value
        .parse()
        .map_err(|_| bad(key, format!("cannot parse `{value}`")))
}

fn flag(key: &str, value: &str) -> Result<bool, BenchError> {
    match value {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(bad(key, format!("expected true or false, got `{value}`"))),
    }
}

fn optional(value: &str) -> Option<&str> {
    match value {
        "" | "none" | "auto" => None,
        v => Some(v),
    }
}

const DATASET_KINDS: &str = "synthetic, clustered or libsvm";

impl RunConfig {
    /// Parses flat `key = value` lines over the defaults. `#` starts a
    /// comment; unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self, BenchError> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Applies `key = value` lines on top of `self` without validating.
    pub fn apply_text(&mut self, text: &str) -> Result<(), BenchError> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                bad(
                    &format!("line {}", no + 1),
                    format!("expected `key = value`, got `{line}`"),
                )
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Sets one dotted key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), BenchError> {
        let value = value.trim().trim_matches('"');
        match key {
            "dataset.kind" => {
                let same = matches!(
                    (&self.dataset, value),
                    (DatasetSpec::Synthetic { .. }, "synthetic")
                        | (DatasetSpec::Clustered { .. }, "clustered")
                        | (DatasetSpec::Libsvm { .. }, "libsvm")
                );
                if same {
                    return Ok(());
                }
                self.dataset = match value {
                    "synthetic" => DatasetSpec::Synthetic { n: 1000, d: 20, noise: 0.5, seed: 0 },
                    "clustered" => DatasetSpec::Clustered {
                        n: 1000,
                        d: 20,
                        clusters: 50,
                        spread: 0.05,
                        row_scale: 1.0,
                        noise: 0.5,
                        seed: 0,
                    },
                    "libsvm" => DatasetSpec::Libsvm { path: PathBuf::new(), label_map: None, dim: None },
                    other => return Err(bad(key, format!("unknown dataset kind `{other}` (expected {DATASET_KINDS})"))),
                }
            }
            "dataset.n" => match &mut self.dataset {
                DatasetSpec::Synthetic { n, .. } | DatasetSpec::Clustered { n, .. } => *n = num(key, value)?,
                _ => return Err(bad(key, "only synthetic and clustered datasets have n")),
            },
            "dataset.d" => match &mut self.dataset {
                DatasetSpec::Synthetic { d, .. } | DatasetSpec::Clustered { d, .. } => *d = num(key, value)?,
                _ => return Err(bad(key, "only synthetic and clustered datasets have d")),
            },
            "dataset.noise" => match &mut self.dataset {
                DatasetSpec::Synthetic { noise, .. } | DatasetSpec::Clustered { noise, .. } => {
                    *noise = num(key, value)?
                }
                _ => return Err(bad(key, "only synthetic and clustered datasets have noise")),
            },
            "dataset.seed" => match &mut self.dataset {
                DatasetSpec::Synthetic { seed, .. } | DatasetSpec::Clustered { seed, .. } => *seed = num(key, value)?,
                _ => return Err(bad(key, "only synthetic and clustered datasets have a seed")),
            },
            "dataset.clusters" | "dataset.spread" | "dataset.row_scale" => match &mut self.dataset {
                DatasetSpec::Clustered { clusters, spread, row_scale, .. } => match key {
                    "dataset.clusters" => *clusters = num(key, value)?,
                    "dataset.spread" => *spread = num(key, value)?,
                    _ => *row_scale = num(key, value)?,
                },
                _ => return Err(bad(key, "only clustered datasets have this key")),
            },
            "dataset.path" | "dataset.label_map" | "dataset.dim" => match &mut self.dataset {
                DatasetSpec::Libsvm { path, label_map, dim } => match key {
                    "dataset.path" => *path = PathBuf::from(value),
                    "dataset.label_map" => {
                        *label_map = optional(value)
                            .map(|v| v.parse::<LabelMap>().map_err(|e| bad(key, e)))
                            .transpose()?
                    }
                    _ => *dim = optional(value).map(|v| num(key, v)).transpose()?,
                },
                _ => return Err(bad(key, "only libsvm datasets have this key (set dataset.kind = libsvm first)")),
            },
            "loss" => self.loss = value.parse::<LossKind>().map_err(|e| bad(key, e.to_string()))?,
            "mu" => self.mu = num(key, value)?,
            "algorithm.kind" => {
                let (kind, schedule) = match value {
                    "sgd_const" | "sgd" => (SamplerKind::Sgd, SgdSchedule::Constant),
                    "sgd_decay" => (SamplerKind::Sgd, SgdSchedule::Decay),
                    other => (other.parse::<SamplerKind>().map_err(|e| bad(key, e))?, SgdSchedule::Constant),
                };
                self.algorithm.kind = kind;
                self.algorithm.schedule = schedule;
            }
            "algorithm.q" => self.algorithm.q = num(key, value)?,
            "algorithm.eps" => self.algorithm.eps = optional(value).map(|v| num(key, v)).transpose()?,
            "algorithm.storage" => self.algorithm.storage = value.parse().map_err(|e: String| bad(key, e))?,
            "gamma.rule" => {
                self.gamma = match value {
                    "explicit" => GammaRule::Explicit(match self.gamma {
                        GammaRule::Explicit(g) => g,
                        _ => f64::NAN,
                    }),
                    "q_over_mun" => GammaRule::QOverMuN,
                    "theory_star" => GammaRule::TheoryStar,
                    "theory_universal" => GammaRule::TheoryUniversal,
                    "sweep" => GammaRule::Sweep,
                    other => {
                        return Err(bad(
                            key,
                            format!(
                                "unknown rule `{other}` (expected explicit, q_over_mun, theory_star, theory_universal or sweep)"
                            ),
                        ))
                    }
                }
            }
            "gamma.value" => self.gamma = GammaRule::Explicit(num(key, value)?),
            "epochs" => self.epochs = num(key, value)?,
            "seeds" => {
                self.seeds = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| num(key, s))
                    .collect::<Result<_, _>>()?
            }
            "subsample" => self.subsample = optional(value).map(|v| num(key, v)).transpose()?,
            "subsample_seed" => self.subsample_seed = num(key, value)?,
            "trace_every" => self.trace_every = optional(value).map(|v| num(key, v)).transpose()?,
            "growing_n" => self.growing_n = flag(key, value)?,
            "record_wall_time" => self.record_wall_time = flag(key, value)?,
            "graph_cache" => self.graph_cache = optional(value).map(PathBuf::from),
            "label" => self.label = optional(value).map(str::to_string),
            other => return Err(bad(other, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if !(self.epochs > 0.0 && self.epochs.is_finite()) {
            return Err(bad(
                "epochs",
                format!("must be positive, got {}", self.epochs),
            ));
        }
        if self.seeds.is_empty() {
            return Err(bad("seeds", "need at least one seed"));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(bad("mu", format!("must be positive, got {}", self.mu)));
        }
        if self.trace_every == Some(0) {
            return Err(bad("trace_every", "must be positive"));
        }
        if self.subsample == Some(0) {
            return Err(bad("subsample", "must be positive"));
        }
        if let GammaRule::Explicit(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(bad("gamma.value", format!("must be positive, got {g}")));
            }
        }
        let is_sgd = self.algorithm.kind == SamplerKind::Sgd;
        match (self.gamma, is_sgd) {
            (GammaRule::Sweep, false) => {
                return Err(bad("gamma.rule", "sweep applies to plain SGD only"))
            }
            (GammaRule::TheoryStar | GammaRule::TheoryUniversal, true) => {
                return Err(bad(
                    "gamma.rule",
                    "theory step sizes do not apply to plain SGD",
                ))
            }
            _ => {}
        }
        if self.algorithm.kind == SamplerKind::EpsNSaga {
            match self.algorithm.eps {
                Some(e) if e >= 0.0 => {}
                _ => return Err(bad("algorithm.eps", "eps_n_saga needs a nonnegative eps")),
            }
        }
        match &self.dataset {
            DatasetSpec::Synthetic { n, d, .. } | DatasetSpec::Clustered { n, d, .. }
                if *n == 0 || *d == 0 =>
            {
                return Err(bad("dataset.n", "n and d must be positive"))
            }
            DatasetSpec::Clustered { clusters, .. } if *clusters == 0 => {
                return Err(bad("dataset.clusters", "must be positive"))
            }
            DatasetSpec::Libsvm { path, .. } if path.as_os_str().is_empty() => {
                return Err(bad("dataset.path", "libsvm datasets need a path"))
            }
            _ => {}
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.algorithm.label())
    }

    /// Canonical `key = value` text; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        match &self.dataset {
            DatasetSpec::Synthetic { n, d, noise, seed } => {
                kv("dataset.kind", "synthetic".into());
                kv("dataset.n", n.to_string());
                kv("dataset.d", d.to_string());
                kv("dataset.noise", noise.to_string());
                kv("dataset.seed", seed.to_string());
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
                kv("dataset.kind", "clustered".into());
                kv("dataset.n", n.to_string());
                kv("dataset.d", d.to_string());
                kv("dataset.clusters", clusters.to_string());
                kv("dataset.spread", spread.to_string());
                kv("dataset.row_scale", row_scale.to_string());
                kv("dataset.noise", noise.to_string());
                kv("dataset.seed", seed.to_string());
            }
            DatasetSpec::Libsvm {
                path,
                label_map,
                dim,
            } => {
                kv("dataset.kind", "libsvm".into());
                kv("dataset.path", path.display().to_string());
                kv(
                    "dataset.label_map",
                    label_map.as_ref().map_or("none".into(), |m| m.to_string()),
                );
                kv("dataset.dim", dim.map_or("none".into(), |d| d.to_string()));
            }
        }
        kv("loss", self.loss.to_string());
        kv("mu", self.mu.to_string());
        let kind = match (self.algorithm.kind, self.algorithm.schedule) {
            (SamplerKind::Sgd, SgdSchedule::Constant) => "sgd_const".to_string(),
            (SamplerKind::Sgd, SgdSchedule::Decay) => "sgd_decay".to_string(),
            (k, _) => k.to_string(),
        };
        kv("algorithm.kind", kind);
        kv("algorithm.q", self.algorithm.q.to_string());
        kv(
            "algorithm.eps",
            self.algorithm.eps.map_or("none".into(), |e| e.to_string()),
        );
        kv("algorithm.storage", self.algorithm.storage.to_string());
        match self.gamma {
            GammaRule::Explicit(g) => {
                kv("gamma.rule", "explicit".into());
                kv("gamma.value", g.to_string());
            }
            GammaRule::QOverMuN => kv("gamma.rule", "q_over_mun".into()),
            GammaRule::TheoryStar => kv("gamma.rule", "theory_star".into()),
            GammaRule::TheoryUniversal => kv("gamma.rule", "theory_universal".into()),
            GammaRule::Sweep => kv("gamma.rule", "sweep".into()),
        }
        kv("epochs", self.epochs.to_string());
        kv(
            "seeds",
            self.seeds
                .iter()
                .map(u64::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        kv(
            "subsample",
            self.subsample.map_or("none".into(), |m| m.to_string()),
        );
        kv("subsample_seed", self.subsample_seed.to_string());
        kv(
            "trace_every",
            self.trace_every.map_or("auto".into(), |t| t.to_string()),
        );
        kv("growing_n", self.growing_n.to_string());
        kv("record_wall_time", self.record_wall_time.to_string());
        kv(
            "graph_cache",
            self.graph_cache
                .as_ref()
                .map_or("none".into(), |p| p.display().to_string()),
        );
        kv("label", self.label.clone().unwrap_or_else(|| "none".into()));
        s
    }
}
