use std::fmt;
use std::str::FromStr;

use crate::problem::ProblemInstance;
use crate::vecops::axpy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StorageMode {
    /// One length-`d` vector per slot, written as `s x_j + mu w`.
    FullVectors,
    /// One scalar per slot; the slot's vector is `s x_j` and the
    /// regularizer gradient is applied exactly in the step.
    GlmScalars,
}

impl fmt::Display for StorageMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StorageMode::FullVectors => "full",
            StorageMode::GlmScalars => "glm",
        })
    }
}

impl FromStr for StorageMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "full" | "full_vectors" => Ok(StorageMode::FullVectors),
            "glm" | "glm_scalars" => Ok(StorageMode::GlmScalars),
            other => Err(format!(
                "unknown storage mode `{other}` (expected full or glm)"
            )),
        }
    }
}

/// Per-datapoint gradient memory with an incrementally maintained sum.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryState {
    mode: StorageMode,
    n: usize,
    d: usize,
    slots: Vec<f64>,
    sum: Vec<f64>,
    written: Vec<bool>,
    seen: usize,
    ages: Vec<u64>,
    normalize_by_seen: bool,
}

impl MemoryState {
    /// All slots zero, nothing seen.
    pub fn new(mode: StorageMode, n: usize, d: usize) -> Self {
        let width = match mode {
            StorageMode::FullVectors => d,
            StorageMode::GlmScalars => 1,
        };
        Self {
            mode,
            n,
            d,
            slots: vec![0.0; n * width],
            sum: vec![0.0; d],
            written: vec![false; n],
            seen: 0,
            ages: vec![0; n],
            normalize_by_seen: false,
        }
    }

    pub fn mode(&self) -> StorageMode {
        self.mode
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of distinct slots written so far.
    pub fn seen(&self) -> usize {
        self.seen
    }

    /// Step index of the last write to slot `j` (0 if never written).
    pub fn age(&self, j: usize) -> u64 {
        self.ages[j]
    }

    pub fn is_written(&self, j: usize) -> bool {
        self.written[j]
    }

    /// Switches the mean's denominator between `seen` (first pass of the
    /// growing-n heuristic) and `n`.
    pub fn set_normalize_by_seen(&mut self, on: bool) {
        self.normalize_by_seen = on;
    }

    pub fn normalizes_by_seen(&self) -> bool {
        self.normalize_by_seen
    }

    pub fn denominator(&self) -> usize {
        if self.normalize_by_seen {
            self.seen
        } else {
            self.n
        }
    }

    /// Raw running sum `Σ_j α_j` (loss part only in GLM mode).
    pub fn sum(&self) -> &[f64] {
        &self.sum
    }

    /// Writes the running mean into `out`.
    pub fn mean_into(&self, out: &mut [f64]) {
        let denom = self.denominator();
        if denom == 0 {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        let inv = 1.0 / denom as f64;
        for (o, s) in out.iter_mut().zip(&self.sum) {
            *o = s * inv;
        }
    }

    pub fn alpha_mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.d];
        self.mean_into(&mut m);
        m
    }

    /// Stored scalar of slot `j` (GLM mode only).
    pub fn scalar(&self, j: usize) -> Option<f64> {
        match self.mode {
            StorageMode::GlmScalars => Some(self.slots[j]),
            StorageMode::FullVectors => None,
        }
    }

    /// Adds `scale * α_j` to `out`.
    #[inline]
    pub fn add_slot_scaled(
        &self,
        j: usize,
        scale: f64,
        instance: &ProblemInstance,
        out: &mut [f64],
    ) {
        match self.mode {
            StorageMode::FullVectors => axpy(scale, &self.slots[j * self.d..(j + 1) * self.d], out),
            StorageMode::GlmScalars => axpy(scale * self.slots[j], instance.row(j), out),
        }
    }

    /// The vector held in slot `j`.
    pub fn slot_vector(&self, j: usize, instance: &ProblemInstance) -> Vec<f64> {
        let mut v = vec![0.0; self.d];
        self.add_slot_scaled(j, 1.0, instance, &mut v);
        v
    }

    /// Writes slot `j` from a GLM scalar: `s x_j + mu w` in full mode, `s`
    /// in GLM mode.
    #[inline]
    pub fn write(&mut self, j: usize, s: f64, instance: &ProblemInstance, w: &[f64], step: u64) {
        let xj = instance.row(j);
        match self.mode {
            StorageMode::FullVectors => {
                let mu = instance.mu();
                let slot = &mut self.slots[j * self.d..(j + 1) * self.d];
                for k in 0..self.d {
                    let new = s * xj[k] + mu * w[k];
                    self.sum[k] += new - slot[k];
                    slot[k] = new;
                }
            }
            StorageMode::GlmScalars => {
                let old = self.slots[j];
                axpy(s - old, xj, &mut self.sum);
                self.slots[j] = s;
            }
        }
        if !self.written[j] {
            self.written[j] = true;
            self.seen += 1;
        }
        self.ages[j] = step;
    }

    /// Overwrites slot `j` with an arbitrary vector (full mode only).
    pub fn write_vector(&mut self, j: usize, v: &[f64], step: u64) {
        assert_eq!(
            self.mode,
            StorageMode::FullVectors,
            "write_vector needs full storage"
        );
        let slot = &mut self.slots[j * self.d..(j + 1) * self.d];
        for ((s, old), new) in self.sum.iter_mut().zip(slot.iter()).zip(v) {
            *s += new - old;
        }
        slot.copy_from_slice(v);
        if !self.written[j] {
            self.written[j] = true;
            self.seen += 1;
        }
        self.ages[j] = step;
    }

    /// Recomputes the mean from the slots, ignoring the running sum.
    pub fn mean_rebuild(&self, instance: &ProblemInstance) -> Vec<f64> {
        let mut total = vec![0.0; self.d];
        for j in 0..self.n {
            self.add_slot_scaled(j, 1.0, instance, &mut total);
        }
        let denom = self.denominator();
        if denom > 0 {
            let inv = 1.0 / denom as f64;
            total.iter_mut().for_each(|t| *t *= inv);
        }
        total
    }

    /// Resets the running sum to the exact slot total.
    pub fn resync(&mut self, instance: &ProblemInstance) {
        let mut total = vec![0.0; self.d];
        for j in 0..self.n {
            self.add_slot_scaled(j, 1.0, instance, &mut total);
        }
        self.sum = total;
    }
}

pub fn memory_mean_rebuild(memory: &MemoryState, instance: &ProblemInstance) -> Vec<f64> {
    memory.mean_rebuild(instance)
}
