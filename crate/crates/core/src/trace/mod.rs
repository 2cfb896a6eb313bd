//! Epoch-sample loss matrix: the record of every sample's loss at every
//! epoch boundary, which all downstream analysis consumes.

mod builder;
mod io;

pub use builder::TraceBuilder;
pub use io::TraceFormat;

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Immutable epoch-sample loss matrix.
///
/// Rows are epochs (1-based in the public API), columns are samples. Cells
/// hold per-sample negative log-likelihood in nats. A cell may be marked
/// missing (streamed traces with gaps); every present cell is finite and
/// non-negative, and there are always at least two epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTrace<F: Scalar> {
    epochs: usize,
    sample_ids: Vec<String>,
    id_index: HashMap<String, usize>,
    /// Row-major `epochs * samples` cells; missing cells hold NaN and are
    /// tracked by `mask`.
    values: Vec<F>,
    /// `true` = present. `None` means fully complete.
    mask: Option<Vec<bool>>,
    duplicate_writes: u64,
}

impl<F: Scalar> LossTrace<F> {
    /// Builds a complete trace from row-major epoch rows.
    pub fn from_rows(sample_ids: Vec<String>, rows: Vec<Vec<F>>) -> Result<Self> {
        let mut builder = TraceBuilder::with_sample_ids(sample_ids)?;
        for (t, row) in rows.iter().enumerate() {
            for (i, &loss) in row.iter().enumerate() {
                let id = builder.sample_ids()[i].clone();
                builder.record(t + 1, &id, loss)?;
            }
        }
        builder.finalize()
    }

    pub(crate) fn from_parts(
        epochs: usize,
        sample_ids: Vec<String>,
        values: Vec<F>,
        mask: Option<Vec<bool>>,
        duplicate_writes: u64,
    ) -> Result<Self> {
        let id_index = index_ids(&sample_ids)?;
        let trace = Self {
            epochs,
            sample_ids,
            id_index,
            values,
            mask,
            duplicate_writes,
        };
        trace.validate()?;
        Ok(trace)
    }

    fn validate(&self) -> Result<()> {
        if self.sample_ids.is_empty() {
            return Err(Error::NoSamples);
        }
        if self.epochs < 2 {
            return Err(Error::TooFewEpochs(self.epochs));
        }
        debug_assert_eq!(self.values.len(), self.epochs * self.sample_ids.len());
        if let Some(mask) = &self.mask {
            debug_assert_eq!(mask.len(), self.values.len());
        }
        for t in 1..=self.epochs {
            for i in 0..self.samples() {
                if let Some(v) = self.get(t, i) {
                    if !v.is_finite() {
                        return Err(Error::NonFiniteLoss {
                            epoch: t,
                            sample_id: self.sample_ids[i].clone(),
                        });
                    }
                    if v < F::zero() {
                        return Err(Error::NegativeLoss {
                            epoch: t,
                            sample_id: self.sample_ids[i].clone(),
                            loss: v.to_f64_cell(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Number of epochs T.
    pub fn epochs(&self) -> usize {
        self.epochs
    }

    /// Number of samples N.
    pub fn samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn sample_index(&self, id: &str) -> Option<usize> {
        self.id_index.get(id).copied()
    }

    /// Cell value at 1-based `epoch` for sample index `i`, or `None` if the
    /// cell is marked missing.
    pub fn get(&self, epoch: usize, i: usize) -> Option<F> {
        assert!(epoch >= 1 && epoch <= self.epochs, "epoch out of range");
        let idx = (epoch - 1) * self.samples() + i;
        match &self.mask {
            Some(mask) if !mask[idx] => None,
            _ => Some(self.values[idx]),
        }
    }

    /// Present-cell fraction for sample `i`.
    pub fn coverage(&self, i: usize) -> f64 {
        match &self.mask {
            None => 1.0,
            Some(mask) => {
                let present = (0..self.epochs)
                    .filter(|t| mask[t * self.samples() + i])
                    .count();
                present as f64 / self.epochs as f64
            }
        }
    }

    pub fn is_complete(&self) -> bool {
        match &self.mask {
            None => true,
            Some(mask) => mask.iter().all(|&p| p),
        }
    }

    /// Count of present cells.
    pub fn present_cells(&self) -> usize {
        match &self.mask {
            None => self.values.len(),
            Some(mask) => mask.iter().filter(|&&p| p).count(),
        }
    }

    /// Minimum over all present cells.
    pub fn min_cell(&self) -> Option<F> {
        let mut min: Option<F> = None;
        for t in 1..=self.epochs {
            for i in 0..self.samples() {
                if let Some(v) = self.get(t, i) {
                    min = Some(match min {
                        Some(m) if m <= v => m,
                        _ => v,
                    });
                }
            }
        }
        min
    }

    /// Per-sample series with missing cells filled by the last observation
    /// carried forward. Cells before the first observation stay `None`.
    pub fn locf_column(&self, i: usize) -> Vec<Option<F>> {
        let mut out = Vec::with_capacity(self.epochs);
        let mut last = None;
        for t in 1..=self.epochs {
            if let Some(v) = self.get(t, i) {
                last = Some(v);
            }
            out.push(last);
        }
        out
    }

    /// How many duplicate (last-write-wins) cell writes the builder saw.
    pub fn duplicate_writes(&self) -> u64 {
        self.duplicate_writes
    }

    /// Sub-matrix of epochs `from..=to` (1-based, inclusive) with identical
    /// sample ids. The result must still hold at least two epochs.
    pub fn slice_epochs(&self, from: usize, to: usize) -> Result<Self> {
        if from < 1 || to > self.epochs || from > to || to - from + 1 < 2 {
            return Err(Error::BadRange {
                from,
                to,
                epochs: self.epochs,
            });
        }
        let n = self.samples();
        let start = (from - 1) * n;
        let end = to * n;
        let values = self.values[start..end].to_vec();
        let mask = self.mask.as_ref().map(|m| m[start..end].to_vec());
        // Drop an all-present mask so sliced complete traces stay complete.
        let mask = match mask {
            Some(m) if m.iter().all(|&p| p) => None,
            other => other,
        };
        Self::from_parts(to - from + 1, self.sample_ids.clone(), values, mask, 0)
    }
}

fn index_ids(ids: &[String]) -> Result<HashMap<String, usize>> {
    let mut index = HashMap::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        if index.insert(id.clone(), i).is_some() {
            return Err(Error::DuplicateSampleId(id.clone()));
        }
    }
    Ok(index)
}
