//! Incremental trace construction with validation at finalization.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::LossTrace;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Cell<F> {
    Unset,
    Value(F),
    Missing,
}

/// Single-writer accumulator for loss cells.
///
/// Two schema modes: `with_sample_ids` locks the sample set up front (writes
/// for unknown ids are rejected), while `new` registers ids on first sight
/// until `lock_schema` or finalization. Duplicate cell writes are
/// last-write-wins and counted.
#[derive(Debug, Clone)]
pub struct TraceBuilder<F: Scalar> {
    sample_ids: Vec<String>,
    id_index: HashMap<String, usize>,
    locked: bool,
    /// rows[epoch-1][sample] — epochs grow on demand.
    rows: Vec<Vec<Cell<F>>>,
    duplicates: u64,
}

impl<F: Scalar> Default for TraceBuilder<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> TraceBuilder<F> {
    /// Open-schema builder: sample ids register on first write.
    pub fn new() -> Self {
        Self {
            sample_ids: Vec::new(),
            id_index: HashMap::new(),
            locked: false,
            rows: Vec::new(),
            duplicates: 0,
        }
    }

    /// Locked-schema builder over a known sample set.
    pub fn with_sample_ids(ids: Vec<String>) -> Result<Self> {
        let mut b = Self::new();
        for id in ids {
            b.register(&id)?;
        }
        b.locked = true;
        Ok(b)
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    /// Forbid registration of further sample ids.
    pub fn lock_schema(&mut self) {
        self.locked = true;
    }

    pub fn duplicate_writes(&self) -> u64 {
        self.duplicates
    }

    fn register(&mut self, id: &str) -> Result<usize> {
        if let Some(&i) = self.id_index.get(id) {
            if !self.locked {
                return Err(Error::DuplicateSampleId(id.to_string()));
            }
            return Ok(i);
        }
        if self.locked {
            return Err(Error::UnknownSample {
                sample_id: id.to_string(),
                known: self.sample_ids.len(),
            });
        }
        let i = self.sample_ids.len();
        self.sample_ids.push(id.to_string());
        self.id_index.insert(id.to_string(), i);
        Ok(i)
    }

    fn resolve(&mut self, id: &str) -> Result<usize> {
        match self.id_index.get(id) {
            Some(&i) => Ok(i),
            None => self.register(id),
        }
    }

    fn cell_mut(&mut self, epoch: usize, sample: usize) -> &mut Cell<F> {
        if self.rows.len() < epoch {
            self.rows.resize(epoch, Vec::new());
        }
        let row = &mut self.rows[epoch - 1];
        if row.len() <= sample {
            row.resize(sample + 1, Cell::Unset);
        }
        &mut row[sample]
    }

    /// Stores `loss` for `(epoch, sample_id)`. Rejects negative or
    /// non-finite losses with the offending coordinates; overwrites count
    /// toward `duplicate_writes`.
    pub fn record(&mut self, epoch: usize, sample_id: &str, loss: F) -> Result<()> {
        if epoch < 1 {
            return Err(Error::BadEpochIndex(epoch));
        }
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                sample_id: sample_id.to_string(),
            });
        }
        if loss < F::zero() {
            return Err(Error::NegativeLoss {
                epoch,
                sample_id: sample_id.to_string(),
                loss: loss.to_f64_cell(),
            });
        }
        let i = self.resolve(sample_id)?;
        let cell = self.cell_mut(epoch, i);
        let overwrite = !matches!(cell, Cell::Unset);
        *cell = Cell::Value(loss);
        if overwrite {
            self.duplicates += 1;
        }
        Ok(())
    }

    /// Marks a cell as intentionally absent (streamed traces with gaps).
    pub fn mark_missing(&mut self, epoch: usize, sample_id: &str) -> Result<()> {
        if epoch < 1 {
            return Err(Error::BadEpochIndex(epoch));
        }
        let i = self.resolve(sample_id)?;
        let cell = self.cell_mut(epoch, i);
        let overwrite = !matches!(cell, Cell::Unset);
        *cell = Cell::Missing;
        if overwrite {
            self.duplicates += 1;
        }
        Ok(())
    }

    /// Validates completeness (every cell recorded or explicitly missing)
    /// and produces the immutable trace.
    pub fn finalize(self) -> Result<LossTrace<F>> {
        let n = self.sample_ids.len();
        if n == 0 {
            return Err(Error::NoSamples);
        }
        let epochs = self.rows.len();
        if epochs < 2 {
            return Err(Error::TooFewEpochs(epochs));
        }
        let mut values = Vec::with_capacity(epochs * n);
        let mut mask = Vec::with_capacity(epochs * n);
        let mut any_missing = false;
        for (t, row) in self.rows.iter().enumerate() {
            let present = row
                .iter()
                .filter(|c| !matches!(c, Cell::Unset))
                .count();
            if present < n || row.len() < n {
                return Err(Error::IncompleteEpoch {
                    epoch: t + 1,
                    present,
                    expected: n,
                });
            }
            for cell in row {
                match cell {
                    Cell::Value(v) => {
                        values.push(*v);
                        mask.push(true);
                    }
                    Cell::Missing => {
                        values.push(F::nan());
                        mask.push(false);
                        any_missing = true;
                    }
                    Cell::Unset => unreachable!("completeness checked above"),
                }
            }
        }
        let mask = if any_missing { Some(mask) } else { None };
        LossTrace::from_parts(epochs, self.sample_ids, values, mask, self.duplicates)
    }
}
