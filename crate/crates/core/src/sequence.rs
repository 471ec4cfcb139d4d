//! Model-ready tensors and deterministic train/validation/test splits.

use std::collections::BTreeSet;

use chrono::NaiveDate;

use crate::ingest::Mmsi;
use crate::nn::Tensor;
use crate::preprocess::NormalizedDay;
use crate::rng::SplitMix64;
use crate::{Error, Result, NUM_FEATURES, SLOTS_PER_DAY};

const CELLS: usize = SLOTS_PER_DAY * NUM_FEATURES;

/// Identifies one vessel-day. Kept beside the tensor, never fed to a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SequenceId {
    pub mmsi: Mmsi,
    pub day: NaiveDate,
}

/// `N x 48 x 4` tensor plus the `(MMSI, day)` of every row.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSet {
    tensor: Tensor,
    ids: Vec<SequenceId>,
}

impl SequenceSet {
    pub fn empty() -> Self {
        Self {
            tensor: Tensor::zeros(&[0, SLOTS_PER_DAY, NUM_FEATURES]),
            ids: Vec::new(),
        }
    }

    pub fn from_parts(data: Vec<f64>, ids: Vec<SequenceId>) -> Result<Self> {
        if data.len() != ids.len() * CELLS {
            return Err(Error::shape(&[ids.len(), SLOTS_PER_DAY, NUM_FEATURES], &[data.len()]));
        }
        let tensor = Tensor::from_vec(&[ids.len(), SLOTS_PER_DAY, NUM_FEATURES], data)?;
        Ok(Self { tensor, ids })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn data(&self) -> &[f64] {
        self.tensor.data()
    }

    pub fn ids(&self) -> &[SequenceId] {
        &self.ids
    }

    /// Row `i` as 192 cells, slot-major.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.tensor.data()[i * CELLS..(i + 1) * CELLS]
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * CELLS);
        let mut ids = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.row(i));
            ids.push(self.ids[i]);
        }
        Self::from_parts(data, ids).expect("consistent subset")
    }

    pub fn concat(parts: &[&SequenceSet]) -> Self {
        let mut data = Vec::new();
        let mut ids = Vec::new();
        for p in parts {
            data.extend_from_slice(p.data());
            ids.extend_from_slice(p.ids());
        }
        Self::from_parts(data, ids).expect("consistent concat")
    }
}

/// Stacks days into one set, ordered by MMSI then day.
pub fn assemble(days: &[NormalizedDay]) -> SequenceSet {
    let mut order: Vec<&NormalizedDay> = days.iter().collect();
    order.sort_by_key(|d| (d.mmsi, d.day));
    let mut data = Vec::with_capacity(days.len() * CELLS);
    let mut ids = Vec::with_capacity(days.len());
    for d in order {
        data.extend(d.flat());
        ids.push(SequenceId {
            mmsi: d.mmsi,
            day: d.day,
        });
    }
    SequenceSet::from_parts(data, ids).expect("48x4 days")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitGranularity {
    /// Individual vessel-days are shuffled and partitioned.
    Record,
    /// Whole vessels are assigned to one partition.
    Vessel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub val_fraction_of_train: f64,
    pub seed: u64,
    pub granularity: SplitGranularity,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            test_fraction: 0.20,
            val_fraction_of_train: 0.20,
            seed: 0,
            granularity: SplitGranularity::Record,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("test_fraction", self.test_fraction),
            ("val_fraction", self.val_fraction_of_train),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} must lie strictly inside (0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

pub const MIN_SPLIT_SIZE: usize = 5;

/// `floor(n * fraction)`, robust to products like `0.29 * 100` landing just
/// below an integer.
fn floor_fraction(n: usize, fraction: f64) -> usize {
    (n as f64 * fraction + 1e-9).floor() as usize
}

/// Train / validation / test sizes for `n` records under the floor rule.
pub fn split_sizes(n: usize, spec: &SplitSpec) -> (usize, usize, usize) {
    let test = floor_fraction(n, spec.test_fraction);
    let val = floor_fraction(n - test, spec.val_fraction_of_train);
    (n - test - val, val, test)
}

/// Partitions `set` into (train, validation, test). Membership is a
/// function of the seed; rows inside each part keep their input order.
pub fn split(set: &SequenceSet, spec: &SplitSpec) -> Result<(SequenceSet, SequenceSet, SequenceSet)> {
    spec.validate()?;
    let n = set.len();
    if n < MIN_SPLIT_SIZE {
        return Err(Error::Data(format!(
            "need at least {MIN_SPLIT_SIZE} sequences to split, got {n}"
        )));
    }
    let mut rng = SplitMix64::new(spec.seed);
    let (mut train, mut val, mut test) = match spec.granularity {
        SplitGranularity::Record => {
            let (_, n_val, n_test) = split_sizes(n, spec);
            let mut perm: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut perm);
            let test = perm[..n_test].to_vec();
            let val = perm[n_test..n_test + n_val].to_vec();
            let train = perm[n_test + n_val..].to_vec();
            (train, val, test)
        }
        SplitGranularity::Vessel => {
            let mut vessels: Vec<Mmsi> = set
                .ids()
                .iter()
                .map(|id| id.mmsi)
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            rng.shuffle(&mut vessels);
            let target_test = floor_fraction(n, spec.test_fraction);
            let mut part_of = std::collections::HashMap::new();
            let mut counts = std::collections::HashMap::new();
            for id in set.ids() {
                *counts.entry(id.mmsi).or_insert(0usize) += 1;
            }
            let mut it = vessels.into_iter().peekable();
            let mut got_test = 0;
            while got_test < target_test {
                let Some(m) = it.next() else { break };
                got_test += counts[&m];
                part_of.insert(m, 2u8);
            }
            let target_val = floor_fraction(n - got_test, spec.val_fraction_of_train);
            let mut got_val = 0;
            while got_val < target_val {
                let Some(m) = it.next() else { break };
                got_val += counts[&m];
                part_of.insert(m, 1u8);
            }
            let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
            for (i, id) in set.ids().iter().enumerate() {
                match part_of.get(&id.mmsi) {
                    Some(2) => test.push(i),
                    Some(1) => val.push(i),
                    _ => train.push(i),
                }
            }
            (train, val, test)
        }
    };
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok((set.subset(&train), set.subset(&val), set.subset(&test)))
}
